"""Reusable wire-protocol conformance checks for model endpoints.

Any server claiming to speak the prediction protocol (the reference adapter,
a custom serving shim, a stub) can be validated with ``check_endpoint``; the
framework's own client assumes exactly the behavior asserted here: /v1/info
schema, /v1/predict schema with label ordering and probability ranges,
deterministic responses for identical requests, and 4xx + ``{"error": ...}``
on malformed input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import requests

__all__ = ["ConformanceResult", "check_endpoint", "assert_conformant"]

_TASKS = ("multilabel", "binary")


@dataclass(frozen=True)
class ConformanceResult:
    check: str
    ok: bool
    detail: str = ""


def _session() -> requests.Session:
    session = requests.Session()
    session.trust_env = False
    return session


def check_endpoint(
    base_url: str,
    timeout_ms: int = 30000,
    oversized_batch: int | None = None,
    sample_texts: tuple[str, str] = (
        "58 year old woman admitted with chest pain.",
        "73 year old man admitted with sepsis.",
    ),
) -> list[ConformanceResult]:
    """Run the protocol checks against a live endpoint.

    ``oversized_batch``, when given, must exceed the server's batch limit; the
    request is then expected to fail with HTTP 413.
    """
    base = base_url.rstrip("/")
    timeout = timeout_ms / 1000.0
    results: list[ConformanceResult] = []

    def record(check: str, ok: bool, detail: str = "") -> None:
        results.append(ConformanceResult(check=check, ok=ok, detail=detail))

    with _session() as session:
        info_resp = session.get(f"{base}/v1/info", timeout=timeout)
        info_ok = info_resp.status_code == 200
        labels: list[str] = []
        if info_ok:
            try:
                info = info_resp.json()
            except ValueError:
                info = {}
            labels = info.get("labels") or []
            info_ok = (
                isinstance(info.get("model_id"), str)
                and info.get("task") in _TASKS
                and isinstance(labels, list)
                and len(labels) > 0
                and all(isinstance(l, str) for l in labels)
            )
        record(
            "info-schema",
            info_ok,
            f"HTTP {info_resp.status_code}, labels={labels[:4]}",
        )
        if not info_ok:
            return results

        body = {"texts": list(sample_texts)}
        first = session.post(f"{base}/v1/predict", json=body, timeout=timeout)
        schema_ok = first.status_code == 200
        payload: dict = {}
        if schema_ok:
            try:
                payload = first.json()
            except ValueError:
                schema_ok = False
        rows = payload.get("probabilities") if schema_ok else None
        schema_ok = (
            schema_ok
            and isinstance(rows, list)
            and len(rows) == len(sample_texts)
            and all(isinstance(r, list) and len(r) == len(labels) for r in rows)
        )
        record("predict-schema", schema_ok, f"HTTP {first.status_code}")

        ordering_ok = schema_ok and payload.get("labels") == labels
        record(
            "label-ordering",
            ordering_ok,
            f"response labels {payload.get('labels')!r}" if not ordering_ok else "",
        )

        range_ok = schema_ok and all(
            isinstance(p, (int, float)) and 0.0 <= p <= 1.0 for r in rows or [] for p in r
        )
        record("probability-range", range_ok)

        second = session.post(f"{base}/v1/predict", json=body, timeout=timeout)
        record(
            "determinism",
            schema_ok and second.status_code == 200 and second.content == first.content,
            "identical request must return identical bytes",
        )

        single = session.post(
            f"{base}/v1/predict", json={"texts": [sample_texts[0]]}, timeout=timeout
        )
        single_ok = single.status_code == 200 and len(
            single.json().get("probabilities", ())
        ) == 1
        record("single-text-row-count", single_ok)

        def expect_client_error(check: str, resp: requests.Response, code: int = 400) -> None:
            ok = resp.status_code == code
            if ok:
                try:
                    ok = isinstance(resp.json().get("error"), str)
                except ValueError:
                    ok = False
            record(check, ok, f"HTTP {resp.status_code}, want {code} with error message")

        expect_client_error(
            "error-malformed-json",
            session.post(
                f"{base}/v1/predict",
                data=b"{not json",
                headers={"Content-Type": "application/json"},
                timeout=timeout,
            ),
        )
        expect_client_error(
            "error-empty-texts",
            session.post(f"{base}/v1/predict", json={"texts": []}, timeout=timeout),
        )
        expect_client_error(
            "error-texts-not-array",
            session.post(f"{base}/v1/predict", json={"texts": "one"}, timeout=timeout),
        )
        if oversized_batch is not None:
            expect_client_error(
                "error-oversized-batch",
                session.post(
                    f"{base}/v1/predict",
                    json={"texts": ["x"] * oversized_batch},
                    timeout=timeout,
                ),
                code=413,
            )
    return results


def assert_conformant(base_url: str, **kwargs) -> None:
    """Raise AssertionError listing every failed check."""
    results = check_endpoint(base_url, **kwargs)
    failed = [r for r in results if not r.ok]
    if failed:
        raise AssertionError(
            "endpoint failed protocol conformance: "
            + "; ".join(f"{r.check} ({r.detail})" for r in failed)
        )
