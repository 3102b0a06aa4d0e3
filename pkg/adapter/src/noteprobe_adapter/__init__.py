"""Serving shim: a fine-tuned transformer outcome-prediction checkpoint behind
the noteprobe wire protocol (GET /v1/info, POST /v1/predict).

The adapter trains nothing and keeps no cross-request state; batching is the
client's job. Multilabel heads pass through an element-wise logistic, binary
heads expose a single "mortality" probability.
"""

from .server import AdapterConfig, build_app, load_model, serve

__version__ = "0.1.0"

__all__ = ["AdapterConfig", "build_app", "load_model", "serve", "__version__"]
