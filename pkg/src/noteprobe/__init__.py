"""noteprobe: behavioral testing for text-based clinical outcome prediction models.

The pipeline has four stages, each usable as a library or through the CLI:

1. ``corpus``    - load/save admission-note corpora, or generate synthetic ones.
2. ``perturb``   - build cohort-aligned test groups by changing, adding, or
                   keeping patient-characteristic mentions in each note.
3. ``inference`` - collect per-label outcome probabilities from a remote model,
                   a predictions file, or the built-in deterministic mock model.
4. ``analysis``  / ``report`` - per-group means, the deviation statistic,
                   training-set baselines, and CSV/SVG/markdown artifacts.
"""

from .errors import (
    CohortExclusion,
    NoteprobeError,
    ParseError,
    ProtocolError,
    TransportError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "CohortExclusion",
    "NoteprobeError",
    "ParseError",
    "ProtocolError",
    "TransportError",
    "ValidationError",
    "__version__",
]
