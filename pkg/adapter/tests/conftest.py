from __future__ import annotations

import threading
import time
from pathlib import Path

import pytest
import torch
import uvicorn
from transformers import BertConfig, BertForSequenceClassification, BertTokenizer

from noteprobe_adapter import AdapterConfig, build_app

_VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "year", "old", "woman", "man", "admitted", "with", "chest", "pain",
    "sepsis", "fever", "history", "of", "patient", "denies", "the", "a",
    "58", "73", "45", "transgender", "african", "american", "white", "asian",
    "##s", "##ed", ".", ",",
]


def write_tiny_checkpoint(
    target: Path,
    seed: int = 0,
    num_labels: int = 2,
    id2label: dict[int, str] | None = None,
    problem_type: str = "multi_label_classification",
) -> Path:
    """A deterministic, randomly initialized BERT classifier small enough to
    run in tests; the fixed seed makes responses reproducible."""
    target.mkdir(parents=True, exist_ok=True)
    vocab_file = target / "vocab.txt"
    vocab_file.write_text("\n".join(_VOCAB) + "\n", encoding="utf-8")
    tokenizer = BertTokenizer(str(vocab_file), do_lower_case=True)

    if id2label is None:
        id2label = {0: "Hypertension", 1: "mortality"}
    torch.manual_seed(seed)
    config = BertConfig(
        vocab_size=len(_VOCAB),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
        num_labels=num_labels,
        id2label=id2label,
        label2id={v: k for k, v in id2label.items()},
        problem_type=problem_type,
    )
    model = BertForSequenceClassification(config)
    model.save_pretrained(target)
    tokenizer.save_pretrained(target)
    return target


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory) -> Path:
    return write_tiny_checkpoint(tmp_path_factory.mktemp("ckpt") / "tiny")


class ServerHandle:
    def __init__(self, server: uvicorn.Server, thread: threading.Thread, url: str) -> None:
        self.server = server
        self.thread = thread
        self.url = url

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)


def start_adapter(config: AdapterConfig) -> ServerHandle:
    app = build_app(config)
    server = uvicorn.Server(
        uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 30
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("adapter server did not start")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    return ServerHandle(server, thread, f"http://127.0.0.1:{port}")


@pytest.fixture(scope="session")
def adapter_url(checkpoint_dir):
    handle = start_adapter(
        AdapterConfig(checkpoint=str(checkpoint_dir), max_seq_len=64, max_batch=16)
    )
    yield handle.url
    handle.stop()
