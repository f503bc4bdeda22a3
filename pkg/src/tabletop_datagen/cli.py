"""Command-line entry point: ``vcage <command> [flags]``.

Exit status: 0 success, 1 usage error, 2 runtime error. Errors are reported as
a JSON object on stderr; results go to stdout as JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Sequence

from .config import PipelineConfig, load_config
from .dataset import read_dataset, write_dataset
from .errors import CapExceeded, DatagenError
from .grounding import Instruction, find_template
from .verify import default_environment, gate_subtask

log = logging.getLogger("tabletop_datagen")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vcage", description="Verified tabletop trajectory generation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a dataset")
    g.add_argument("--config")
    g.add_argument("--episodes", type=int, help="accepted trajectories to collect")
    g.add_argument("--mode", choices=("vcage", "vanilla"))
    g.add_argument("--seed", type=int)
    g.add_argument("--task", action="append", help="task id or phrase (repeatable)")
    g.add_argument("--out", required=True)
    g.add_argument("--workers", type=int, default=1)

    g = sub.add_parser("gate", help="run the robustness gate on one template")
    g.add_argument("--template", required=True)
    g.add_argument("--trials", type=int, default=10)
    g.add_argument("--seed", type=int)
    g.add_argument("--threshold", type=float)
    g.add_argument("--config")

    g = sub.add_parser("stats", help="statistics of a dataset file")
    g.add_argument("--in", dest="inp", required=True)
    g.add_argument("--expect-config")

    g = sub.add_parser("compare", help="vcage vs vanilla on the same episodes")
    g.add_argument("--config")
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, default=1)

    g = sub.add_parser("replay", help="re-simulate one stored episode and check its digests")
    g.add_argument("--in", dest="inp", required=True)
    g.add_argument("--episode", type=int, required=True)
    g.add_argument("--render", help="write the final state as a PGM raster")
    g.add_argument("--expect-config")

    g = sub.add_parser("mock-critic", help="serve the oracle-backed /verify protocol")
    g.add_argument("--port", type=int, default=8765)
    g.add_argument("--host", default="127.0.0.1")
    return p


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "task", None):
        changes["tasks"] = tuple(args.task)
    if args.command == "gen" and args.episodes is not None:
        changes["n_target"] = args.episodes
    return cfg.with_(**changes) if changes else cfg


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _gen(args) -> int:
    from .pipeline import generate_dataset

    cfg = _config(args)
    try:
        dataset, stats = generate_dataset(cfg, workers=args.workers)
    except CapExceeded as exc:
        write_dataset(exc.dataset, args.out)
        raise
    write_dataset(dataset, args.out)
    _emit(stats.to_dict())
    return 0


def _gate(args) -> int:
    cfg = _config(args)
    template = find_template(Instruction(args.template))
    env = default_environment(template, None, cfg.scene)
    threshold = args.threshold if args.threshold is not None else cfg.gate.threshold
    report = gate_subtask(template, env, args.trials, cfg.failure, cfg.master_seed, threshold, cfg.delta_pos)
    _emit(report.to_dict())
    return 0


def _stats(args) -> int:
    from .verify import purity

    ds = read_dataset(args.inp, args.expect_config)
    stats = ds.stats()
    if stats.accepted_count != len(ds.records):
        raise DatagenError(f"manifest counts {stats.accepted_count} accepted, file holds {len(ds.records)}")
    out = stats.to_dict()
    out["purity"] = purity(ds.records) if ds.records else None
    _emit(out)
    return 0


def _compare(args) -> int:
    from .pipeline import compare_modes

    _emit(compare_modes(_config(args), args.episodes, args.workers))
    return 0


def _replay(args) -> int:
    from .pipeline import final_scene, replay_episode
    from .scene import rasterize, write_pgm

    ds = read_dataset(args.inp, args.expect_config)
    cfg = PipelineConfig.from_dict(ds.manifest["config"])
    matches = [r for r in ds.records if r.episode == args.episode]
    if not matches:
        raise DatagenError(f"episode {args.episode} is not in {args.inp}")
    ok, _ = replay_episode(cfg, matches[0])
    result = {"episode": args.episode, "match": ok}
    if args.render:
        write_pgm(rasterize(final_scene(cfg, matches[0]), cfg.scene.raster_scale), args.render)
        result["render"] = args.render
    _emit(result)
    if not ok:
        sys.stderr.write(json.dumps({"error": "DigestMismatch", "message": "replayed digests differ"}) + "\n")
        return 2
    return 0


def _mock_critic(args) -> int:
    from .mock_critic import critic_server

    server = critic_server(args.host, args.port)
    host, port = server.server_address[:2]
    sys.stderr.write(f"mock critic listening on http://{host}:{port}\n")
    sys.stderr.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


_COMMANDS = {
    "gen": _gen,
    "gate": _gate,
    "stats": _stats,
    "compare": _compare,
    "replay": _replay,
    "mock-critic": _mock_critic,
}


def _error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def run_cli(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("VCAGE_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr)
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        _error("UsageError", str(exc))
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (DatagenError, OSError, ValueError) as exc:
        _error(type(exc).__name__, str(exc))
        return 2


def main() -> None:
    sys.exit(run_cli())
