"""JSON-over-HTTP client plumbing shared by the planner and critic clients."""

from __future__ import annotations

import logging

import requests

from .errors import ProtocolError, TransportError

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
DEFAULT_RETRIES = 2


def post_json(
    url: str,
    payload: dict,
    timeout: float = DEFAULT_TIMEOUT,
    retries: int = DEFAULT_RETRIES,
    non_ok: type[Exception] = ProtocolError,
    session: requests.Session | None = None,
) -> dict:
    """POST ``payload`` and return the decoded JSON object.

    Connection failures and timeouts are retried ``retries`` times before
    raising :class:`TransportError`. A non-200 status raises ``non_ok``
    immediately; a body that is not a JSON object raises :class:`ProtocolError`.
    """
    poster = session.post if session is not None else requests.post
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = poster(url, json=payload, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last = exc
            log.info("POST %s failed (attempt %d/%d): %s", url, attempt + 1, retries + 1, exc)
            continue
        if resp.status_code != 200:
            raise non_ok(f"POST {url} returned HTTP {resp.status_code}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"POST {url} returned a non-JSON body") from exc
        if not isinstance(body, dict):
            raise ProtocolError(f"POST {url} returned JSON that is not an object")
        return body
    raise TransportError(f"POST {url} failed after {retries + 1} attempts: {last}")
