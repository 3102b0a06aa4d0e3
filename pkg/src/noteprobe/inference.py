"""Obtain outcome probabilities for every altered sample.

Three interchangeable sources feed the analysis stage:

- a remote model behind the wire protocol (GET /v1/info, POST /v1/predict);
- a previously saved predictions JSONL file;
- the built-in mock lexical model, a deterministic logistic-over-token-weights
  scorer used as a ground-truth oracle when validating the framework itself.

The protocol transports probabilities, never logits; this module never applies
its own link function to remote outputs.
"""

from __future__ import annotations

import json
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import requests

from .errors import ParseError, ProtocolError, TransportError, ValidationError
from .perturb import GroupedDataset

__all__ = [
    "ModelEndpoint",
    "PredictionRecord",
    "MockLexicalModel",
    "predict_remote",
    "predict_mock",
    "load_predictions",
    "save_predictions",
    "tokenize",
    "logistic",
    "AUTH_TOKEN_ENV",
]

AUTH_TOKEN_ENV = "NOTEPROBE_TOKEN"

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_TOKEN_RE_CASED = re.compile(r"[A-Za-z0-9]+")


def logistic(z: float) -> float:
    """Numerically stable 1 / (1 + exp(-z))."""
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def tokenize(text: str, case_sensitive: bool = False) -> set[str]:
    """Lowercased alphanumeric word split; presence matters, counts do not."""
    if case_sensitive:
        return set(_TOKEN_RE_CASED.findall(text))
    return set(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class PredictionRecord:
    """Per (sample, group): one probability per outcome label."""

    sample_id: str
    group: str
    probabilities: dict[str, float]

    def __post_init__(self) -> None:
        for label, p in self.probabilities.items():
            if not isinstance(p, (int, float)) or math.isnan(p) or not 0.0 <= p <= 1.0:
                raise ValidationError(
                    f"record ({self.group!r}, {self.sample_id!r}): probability for "
                    f"{label!r} is {p!r}, outside [0, 1]"
                )


@dataclass(frozen=True)
class ModelEndpoint:
    """A remote model reachable over the wire protocol."""

    base_url: str
    timeout_ms: int = 30000
    max_batch: int = 16
    max_parallel: int = 4
    retries: int = 2
    bearer_token: str | None = None

    def __post_init__(self) -> None:
        if self.max_batch < 1:
            raise ValidationError("max_batch must be >= 1")
        if self.max_parallel < 1:
            raise ValidationError("max_parallel must be >= 1")
        if self.timeout_ms < 1:
            raise ValidationError("timeout_ms must be >= 1")
        if self.retries < 0:
            raise ValidationError("retries must be >= 0")
        object.__setattr__(self, "base_url", self.base_url.rstrip("/"))

    def headers(self) -> dict[str, str]:
        token = self.bearer_token or os.environ.get(AUTH_TOKEN_ENV)
        return {"Authorization": f"Bearer {token}"} if token else {}


@dataclass(frozen=True)
class MockLexicalModel:
    """Deterministic scorer: p(label | text) = logistic(base + sum of weights
    of lexicon tokens present in the text). Presence is set-based, so repeated
    tokens count once and oracle arithmetic stays closed-form."""

    base_logits: dict[str, float]
    lexicon: dict[tuple[str, str], float] = field(default_factory=dict)
    case_sensitive: bool = False

    def __post_init__(self) -> None:
        if not self.base_logits:
            raise ValidationError("mock model needs at least one label")
        for token, label in self.lexicon:
            if label not in self.base_logits:
                raise ValidationError(
                    f"lexicon entry ({token!r}, {label!r}) references an unknown label"
                )

    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.base_logits))

    def predict_text(self, text: str) -> dict[str, float]:
        tokens = tokenize(text, self.case_sensitive)
        out: dict[str, float] = {}
        for label in self.labels():
            z = self.base_logits[label]
            for (token, lab), weight in self.lexicon.items():
                if lab == label and token in tokens:
                    z += weight
            out[label] = logistic(z)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "MockLexicalModel":
        """Build from the JSON shape {"base_logits": {...},
        "lexicon": {token: {label: weight}}, "case_sensitive": bool}."""
        lexicon: dict[tuple[str, str], float] = {}
        for token, per_label in data.get("lexicon", {}).items():
            for label, weight in per_label.items():
                lexicon[(token, label)] = float(weight)
        return cls(
            base_logits={k: float(v) for k, v in data.get("base_logits", {}).items()},
            lexicon=lexicon,
            case_sensitive=bool(data.get("case_sensitive", False)),
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "MockLexicalModel":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: malformed mock model JSON ({exc.msg})") from exc
        return cls.from_dict(data)


def _ordered_samples(dataset: GroupedDataset) -> list[tuple[str, str, str]]:
    """(group, id, text) in (group asc, id asc) order: the canonical record order."""
    out: list[tuple[str, str, str]] = []
    for group in sorted(dataset.groups):
        for sample_id, text in sorted(dataset.groups[group]):
            out.append((group, sample_id, text))
    return out


def predict_mock(dataset: GroupedDataset, model: MockLexicalModel) -> list[PredictionRecord]:
    """Score every (sample, group) with the mock model; pure and deterministic."""
    return [
        PredictionRecord(sample_id=sample_id, group=group, probabilities=model.predict_text(text))
        for group, sample_id, text in _ordered_samples(dataset)
    ]


# --- remote protocol client ---------------------------------------------------


def _http_session() -> requests.Session:
    session = requests.Session()
    session.trust_env = False  # keep proxies/env out of loopback test traffic
    return session


def _get_info(endpoint: ModelEndpoint) -> dict:
    url = f"{endpoint.base_url}/v1/info"
    timeout = endpoint.timeout_ms / 1000.0
    last_exc: Exception | None = None
    for attempt in range(endpoint.retries + 1):
        try:
            with _http_session() as session:
                resp = session.get(url, timeout=timeout, headers=endpoint.headers())
            if resp.status_code == 200:
                info = resp.json()
                labels = info.get("labels")
                if (
                    not isinstance(labels, list)
                    or not labels
                    or any(not isinstance(l, str) for l in labels)
                ):
                    raise ProtocolError(f"{url}: 'labels' must be a non-empty string array")
                return info
            if 400 <= resp.status_code < 500:
                raise ProtocolError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
            last_exc = TransportError(f"{url}: HTTP {resp.status_code}")
        except (requests.RequestException, ValueError) as exc:
            last_exc = exc
        if attempt < endpoint.retries:
            time.sleep(0.05 * (attempt + 1))
    raise TransportError(f"GET {url} failed after {endpoint.retries + 1} attempts: {last_exc}")


def _post_batch(
    endpoint: ModelEndpoint,
    texts: Sequence[str],
    expected_labels: Sequence[str],
    batch_keys: Sequence[tuple[str, str]],
) -> list[list[float]]:
    url = f"{endpoint.base_url}/v1/predict"
    timeout = endpoint.timeout_ms / 1000.0
    last_exc: Exception | None = None
    for attempt in range(endpoint.retries + 1):
        try:
            with _http_session() as session:
                resp = session.post(
                    url, json={"texts": list(texts)}, timeout=timeout, headers=endpoint.headers()
                )
            if resp.status_code == 200:
                return _validate_batch(url, resp.json(), expected_labels, batch_keys)
            if 400 <= resp.status_code < 500:
                raise ProtocolError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
            last_exc = TransportError(f"{url}: HTTP {resp.status_code}")
        except ProtocolError:
            raise
        except (requests.RequestException, ValueError) as exc:
            last_exc = exc
        if attempt < endpoint.retries:
            time.sleep(0.05 * (attempt + 1))
    raise TransportError(
        f"POST {url} failed after {endpoint.retries + 1} attempts "
        f"(first sample {batch_keys[0]}): {last_exc}"
    )


def _validate_batch(
    url: str,
    payload: dict,
    expected_labels: Sequence[str],
    batch_keys: Sequence[tuple[str, str]],
) -> list[list[float]]:
    labels = payload.get("labels")
    rows = payload.get("probabilities")
    if list(labels or ()) != list(expected_labels):
        raise ProtocolError(
            f"{url}: response labels {labels!r} do not match /v1/info labels "
            f"{list(expected_labels)!r}"
        )
    if not isinstance(rows, list) or len(rows) != len(batch_keys):
        raise ProtocolError(
            f"{url}: expected {len(batch_keys)} probability rows, got "
            f"{len(rows) if isinstance(rows, list) else type(rows).__name__}"
        )
    for (group, sample_id), row in zip(batch_keys, rows):
        if not isinstance(row, list) or len(row) != len(expected_labels):
            raise ProtocolError(
                f"{url}: record ({group!r}, {sample_id!r}): row length != label count"
            )
        for label, p in zip(expected_labels, row):
            if not isinstance(p, (int, float)) or math.isnan(p) or not 0.0 <= p <= 1.0:
                raise ProtocolError(
                    f"{url}: record ({group!r}, {sample_id!r}): probability for "
                    f"{label!r} is {p!r}, outside [0, 1]"
                )
    return rows


def predict_remote(dataset: GroupedDataset, endpoint: ModelEndpoint) -> list[PredictionRecord]:
    """Collect predictions for every (sample, group) from a remote model.

    Requests are batched up to max_batch with at most max_parallel in flight;
    results are reassembled in (group asc, id asc) order regardless of
    completion order. Any batch that still fails after the retry budget aborts
    the run with the missing (group, id) pairs; there are no silent gaps.
    """
    info = _get_info(endpoint)
    labels: list[str] = list(info["labels"])

    samples = _ordered_samples(dataset)
    batches: list[tuple[list[tuple[str, str]], list[str]]] = []
    for i in range(0, len(samples), endpoint.max_batch):
        chunk = samples[i : i + endpoint.max_batch]
        keys = [(group, sample_id) for group, sample_id, _ in chunk]
        texts = [text for _, _, text in chunk]
        batches.append((keys, texts))

    results: list[list[list[float]] | None] = [None] * len(batches)
    errors: list[tuple[int, Exception]] = []
    with ThreadPoolExecutor(max_workers=endpoint.max_parallel) as pool:
        futures = {
            pool.submit(_post_batch, endpoint, texts, labels, keys): idx
            for idx, (keys, texts) in enumerate(batches)
        }
        for future in futures:
            idx = futures[future]
            try:
                results[idx] = future.result()
            except Exception as exc:  # noqa: BLE001 - reported per batch below
                errors.append((idx, exc))

    if errors:
        errors.sort(key=lambda pair: pair[0])
        for _, exc in errors:
            if isinstance(exc, ProtocolError):
                raise exc
        first_exc = errors[0][1]
        missing = [key for idx, _ in errors for key in batches[idx][0]]
        raise TransportError(
            f"{len(missing)} predictions missing after retries; first error: "
            f"{first_exc}; missing (group, id) pairs: {missing[:10]}"
            + (" ..." if len(missing) > 10 else "")
        )

    records: list[PredictionRecord] = []
    for (keys, _), rows in zip(batches, results):
        for (group, sample_id), row in zip(keys, rows or ()):
            records.append(
                PredictionRecord(
                    sample_id=sample_id,
                    group=group,
                    probabilities=dict(zip(labels, (float(p) for p in row))),
                )
            )
    return records


# --- predictions files --------------------------------------------------------


def save_predictions(records: Iterable[PredictionRecord], path: str | Path) -> None:
    """Write records as JSONL with fields id, group, probabilities."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "id": record.sample_id,
                        "group": record.group,
                        "probabilities": record.probabilities,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    """Read a predictions JSONL file; duplicate (id, group) pairs are rejected."""
    path = Path(path)
    records: list[PredictionRecord] = []
    seen: set[tuple[str, str]] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed JSON line ({exc.msg})") from exc
            try:
                sample_id = obj["id"]
                group = obj["group"]
                probabilities = obj["probabilities"]
            except (KeyError, TypeError) as exc:
                raise ParseError(
                    f"{path}:{lineno}: expected fields id, group, probabilities"
                ) from exc
            if not isinstance(probabilities, dict):
                raise ParseError(f"{path}:{lineno}: 'probabilities' must be an object")
            key = (sample_id, group)
            if key in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate record for {key!r}")
            seen.add(key)
            try:
                records.append(
                    PredictionRecord(
                        sample_id=sample_id,
                        group=group,
                        probabilities={k: float(v) for k, v in probabilities.items()},
                    )
                )
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    return records
