"""FastAPI app wrapping a sequence-classification checkpoint.

Protocol requirements the clients rely on:
- responses are byte-stable for identical requests (eval mode, fixed 6-decimal
  float formatting);
- label order in /v1/predict equals /v1/info order (the checkpoint's own
  id2label index order);
- malformed requests get HTTP 400 with ``{"error": ...}``, oversized batches
  HTTP 413.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import torch
from fastapi import FastAPI, Request
from fastapi.responses import Response
from transformers import AutoModelForSequenceClassification, AutoTokenizer

TASKS = ("multilabel", "binary")

_PLACEHOLDER_LABEL = re.compile(r"LABEL_\d+")


@dataclass(frozen=True)
class AdapterConfig:
    checkpoint: str
    task: str = "multilabel"
    max_seq_len: int = 512
    device: str = "cpu"
    port: int = 8800
    max_batch: int = 128

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.max_seq_len < 8:
            raise ValueError("max_seq_len must be >= 8")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")


class LoadedModel:
    def __init__(self, config: AdapterConfig) -> None:
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.checkpoint)
        self.model = AutoModelForSequenceClassification.from_pretrained(config.checkpoint)
        self.model.to(config.device)
        self.model.eval()

        id2label = getattr(self.model.config, "id2label", None) or {}
        ordered = [str(id2label[i]) for i in sorted(id2label)]
        n = self.model.config.num_labels
        if config.task == "binary":
            if n not in (1, 2):
                raise ValueError(
                    f"binary task needs a 1- or 2-logit head, checkpoint has {n}"
                )
            self.labels = ["mortality"]
        else:
            # auto-generated LABEL_i placeholders mean the checkpoint never
            # declared its label-to-index mapping; serving it would emit
            # meaningless label names
            if not ordered or all(_PLACEHOLDER_LABEL.fullmatch(l) for l in ordered):
                raise ValueError(
                    "checkpoint carries no label metadata (id2label); refusing to serve"
                )
            if len(ordered) != n:
                raise ValueError(
                    f"multilabel head shape mismatch: {n} logits vs {len(ordered)} labels"
                )
            self.labels = ordered
        self.model_id = Path(str(config.checkpoint)).name or str(config.checkpoint)

    @torch.no_grad()
    def predict(self, texts: list[str]) -> list[list[float]]:
        encoded = self.tokenizer(
            texts,
            padding=True,
            truncation=True,
            max_length=self.config.max_seq_len,
            return_tensors="pt",
        ).to(self.config.device)
        logits = self.model(**encoded).logits
        if self.config.task == "binary":
            if logits.shape[-1] == 2:
                probs = torch.softmax(logits, dim=-1)[:, 1:2]
            else:
                probs = torch.sigmoid(logits)
        else:
            probs = torch.sigmoid(logits)
        # fixed 6-decimal formatting keeps responses byte-stable across platforms
        return [[round(float(p), 6) for p in row] for row in probs.cpu()]


def load_model(config: AdapterConfig) -> LoadedModel:
    return LoadedModel(config)


def _json_response(code: int, payload: dict) -> Response:
    return Response(
        content=json.dumps(payload, ensure_ascii=False),
        status_code=code,
        media_type="application/json",
    )


def _error(code: int, message: str) -> Response:
    return _json_response(code, {"error": message})


def build_app(config: AdapterConfig, loaded: LoadedModel | None = None) -> FastAPI:
    loaded = loaded or load_model(config)
    app = FastAPI(title="noteprobe-adapter", docs_url=None, redoc_url=None)

    @app.get("/v1/info")
    def info() -> Response:
        return _json_response(
            200,
            {"model_id": loaded.model_id, "task": config.task, "labels": loaded.labels},
        )

    @app.post("/v1/predict")
    async def predict(request: Request) -> Response:
        try:
            payload = json.loads(await request.body())
        except (ValueError, UnicodeDecodeError):
            return _error(400, "request body must be a JSON object")
        if not isinstance(payload, dict) or "texts" not in payload:
            return _error(400, "missing field 'texts'")
        texts = payload["texts"]
        if not isinstance(texts, list) or any(not isinstance(t, str) for t in texts):
            return _error(400, "'texts' must be an array of strings")
        if not texts:
            return _error(400, "'texts' must not be empty")
        if len(texts) > config.max_batch:
            return _error(413, f"batch of {len(texts)} exceeds limit {config.max_batch}")
        rows = loaded.predict(texts)
        return _json_response(200, {"labels": loaded.labels, "probabilities": rows})

    return app


def serve(config: AdapterConfig) -> None:
    """Blocking: host the checkpoint on 0.0.0.0:<port>."""
    import uvicorn

    uvicorn.run(build_app(config), host="0.0.0.0", port=config.port, log_level="warning")
