"""Corpus data model, JSONL persistence, and a seeded synthetic generator.

A corpus is an ordered collection of admission-style notes, each with an
opaque id, raw text, and optional outcome labels. Real clinical corpora are
access-restricted, so the module also ships a deterministic generator whose
notes follow the header conventions the perturbation rules target: every
generated note opens with exactly one age phrase and one gender term, and
mentions an ethnicity with a configurable probability.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import ParseError, ValidationError

__all__ = [
    "PatientNote",
    "Corpus",
    "SyntheticProfile",
    "load_corpus",
    "save_corpus",
    "generate_synthetic_corpus",
]


@dataclass(frozen=True)
class PatientNote:
    """One admission note plus (optionally) its outcome labels.

    Labels are carried for baseline-distribution analysis and AUROC only;
    behavioral tests never judge altered samples against them.
    """

    id: str
    text: str
    labels: frozenset[str] | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("note id must be a non-empty string")
        if not self.text:
            raise ValidationError(f"note {self.id!r}: text must be non-empty")
        if self.labels is not None and not isinstance(self.labels, frozenset):
            object.__setattr__(self, "labels", frozenset(self.labels))


@dataclass(frozen=True)
class Corpus:
    """An ordered, id-unique collection of notes with a label vocabulary."""

    notes: tuple[PatientNote, ...]
    label_vocabulary: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.notes, tuple):
            object.__setattr__(self, "notes", tuple(self.notes))
        if not isinstance(self.label_vocabulary, tuple):
            object.__setattr__(self, "label_vocabulary", tuple(self.label_vocabulary))
        seen: set[str] = set()
        for note in self.notes:
            if note.id in seen:
                raise ValidationError(f"duplicate note id {note.id!r} in corpus")
            seen.add(note.id)
        vocab = set(self.label_vocabulary)
        for note in self.notes:
            for label in note.labels or ():
                if label not in vocab:
                    raise ValidationError(
                        f"note {note.id!r} carries label {label!r} missing from the vocabulary"
                    )

    def __len__(self) -> int:
        return len(self.notes)

    def __iter__(self) -> Iterator[PatientNote]:
        return iter(self.notes)


def _derive_vocabulary(notes: Iterable[PatientNote]) -> tuple[str, ...]:
    return tuple(sorted({label for n in notes for label in (n.labels or ())}))


def load_corpus(
    path: str | Path,
    format: str = "jsonl",
    vocabulary: Sequence[str] | None = None,
) -> Corpus:
    """Read a notes file: one JSON object per line with id, text, optional labels.

    The label vocabulary is the sorted union of all note labels unless an
    explicit one is supplied.
    """
    if format != "jsonl":
        raise ValidationError(f"unsupported corpus format {format!r} (only 'jsonl')")
    path = Path(path)
    notes: list[PatientNote] = []
    first_line: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed JSON line ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            try:
                note_id = obj["id"]
                text = obj["text"]
            except KeyError as exc:
                raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
            if not isinstance(note_id, str) or not isinstance(text, str):
                raise ParseError(f"{path}:{lineno}: 'id' and 'text' must be strings")
            if note_id in first_line:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate note id {note_id!r} "
                    f"(first seen on line {first_line[note_id]})"
                )
            first_line[note_id] = lineno
            labels = obj.get("labels")
            if labels is not None and (
                not isinstance(labels, list) or any(not isinstance(l, str) for l in labels)
            ):
                raise ParseError(f"{path}:{lineno}: 'labels' must be an array of strings")
            notes.append(
                PatientNote(
                    id=note_id,
                    text=text,
                    labels=frozenset(labels) if labels is not None else None,
                )
            )
    vocab = tuple(vocabulary) if vocabulary is not None else _derive_vocabulary(notes)
    return Corpus(notes=tuple(notes), label_vocabulary=vocab)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus as UTF-8 JSONL with LF line endings; round-trips via load_corpus."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for note in corpus.notes:
                obj: dict[str, object] = {"id": note.id, "text": note.text}
                if note.labels is not None:
                    obj["labels"] = sorted(note.labels)
                fh.write(json.dumps(obj, ensure_ascii=False))
                fh.write("\n")
    except OSError as exc:
        raise ValidationError(f"cannot write corpus to {path}: {exc}") from exc


# --- synthetic generation -------------------------------------------------

# Body vocabulary is chosen so it never collides with the detection patterns
# of the built-in characteristics: no gendered pronouns or nouns, no
# ethnicity terms, and no bare numerals adjacent to an age unit.
_COMPLAINTS = (
    "chest pain",
    "shortness of breath",
    "abdominal pain",
    "fever and chills",
    "syncope",
    "productive cough",
    "lower extremity swelling",
    "altered mental status",
)
_HISTORY = (
    "hypertension",
    "type 2 diabetes",
    "atrial fibrillation",
    "copd",
    "hyperlipidemia",
    "congestive heart failure",
    "prior stroke",
    "chronic kidney disease",
)
_COURSE = (
    "Patient denies fever.",
    "Patient reports intermittent symptoms over the past week.",
    "Exam notable for mild distress.",
    "Vitals stable on arrival.",
    "Labs pending at time of admission.",
    "Plan to continue workup on the floor.",
)

DEFAULT_DEID_TOKEN = "[**Age over 90 **]"


@dataclass(frozen=True)
class SyntheticProfile:
    """Knobs for the synthetic generator.

    ``label_rates`` maps label -> {group or "default": probability}. A note's
    rate for a label is resolved against its gender group first, then its
    ethnicity group, then its age group (the age as a string, or "over90"),
    falling back to the "default" entry (0.0 if absent). This gives baseline
    analysis a known ground truth per group.
    """

    gender_proportions: dict[str, float] = field(
        default_factory=lambda: {"female": 0.5, "male": 0.5}
    )
    gender_terms: dict[str, str] = field(
        default_factory=lambda: {
            "female": "woman",
            "male": "man",
            "transgender": "transgender woman",
        }
    )
    ethnicity_mention_rate: float = 0.3
    ethnicity_proportions: dict[str, float] = field(
        default_factory=lambda: {
            "white": 0.4,
            "african_american": 0.3,
            "hispanic": 0.2,
            "asian": 0.1,
        }
    )
    ethnicity_terms: dict[str, str] = field(
        default_factory=lambda: {
            "white": "White",
            "african_american": "African American",
            "hispanic": "Hispanic",
            "asian": "Asian",
        }
    )
    age_min: int = 18
    age_max: int = 89
    over90_rate: float = 0.02
    deid_token: str = DEFAULT_DEID_TOKEN
    label_rates: dict[str, dict[str, float]] = field(
        default_factory=lambda: {
            "Hypertension": {"default": 0.35},
            "Cardiac dysrhythmias": {"default": 0.25},
            "Acute kidney failure": {"default": 0.15},
            "Chronic kidney disease": {"default": 0.12},
            "Unspecified anemias": {"default": 0.18},
            "Abuse of drugs": {"default": 0.08},
            "Chronic ischemic heart disease": {"default": 0.2, "male": 0.26},
            "Urinary tract disorders": {"default": 0.12, "female": 0.2},
            "mortality": {"default": 0.2},
        }
    )

    def __post_init__(self) -> None:
        if not self.gender_proportions:
            raise ValidationError("gender_proportions must not be empty")
        for name, weight in self.gender_proportions.items():
            if name not in self.gender_terms:
                raise ValidationError(f"no display term for gender group {name!r}")
            if weight < 0:
                raise ValidationError("group proportions must be non-negative")
        for name in self.ethnicity_proportions:
            if name not in self.ethnicity_terms:
                raise ValidationError(f"no display term for ethnicity group {name!r}")
        if not 0 <= self.ethnicity_mention_rate <= 1:
            raise ValidationError("ethnicity_mention_rate must be in [0,1]")
        if not 0 <= self.over90_rate <= 1:
            raise ValidationError("over90_rate must be in [0,1]")
        if not 18 <= self.age_min <= self.age_max <= 89:
            raise ValidationError("age range must satisfy 18 <= min <= max <= 89")
        for label, rates in self.label_rates.items():
            for group, rate in rates.items():
                if not 0 <= rate <= 1:
                    raise ValidationError(f"rate for ({label!r}, {group!r}) must be in [0,1]")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SyntheticProfile":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: malformed profile JSON ({exc.msg})") from exc
        if not isinstance(data, dict):
            raise ParseError(f"{path}: profile must be a JSON object")
        return cls.from_dict(data)


def _weighted_choice(rng: random.Random, weights: dict[str, float]) -> str:
    names = list(weights)
    return rng.choices(names, weights=[weights[n] for n in names], k=1)[0]


def _label_rate(profile: SyntheticProfile, label: str, groups: Sequence[str]) -> float:
    rates = profile.label_rates[label]
    for group in groups:
        if group in rates:
            return rates[group]
    return rates.get("default", 0.0)


def generate_synthetic_corpus(
    seed: int, n: int, profile: SyntheticProfile | None = None
) -> Corpus:
    """Deterministically generate ``n`` synthetic admission notes.

    Each note header carries one age phrase and one gender term (and sometimes
    an ethnicity term immediately before the gender term), so the built-in
    characteristic specs detect every note. Labels are drawn per note from the
    profile's conditional rates.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    profile = profile or SyntheticProfile()
    rng = random.Random(seed)
    width = max(5, len(str(n)))
    notes: list[PatientNote] = []
    for i in range(n):
        gender = _weighted_choice(rng, profile.gender_proportions)
        over90 = rng.random() < profile.over90_rate
        age = rng.randint(profile.age_min, profile.age_max)
        age_phrase = profile.deid_token if over90 else str(age)
        ethnicity: str | None = None
        if rng.random() < profile.ethnicity_mention_rate and profile.ethnicity_proportions:
            ethnicity = _weighted_choice(rng, profile.ethnicity_proportions)
        complaint = rng.choice(_COMPLAINTS)
        history = rng.sample(_HISTORY, k=2)
        course = rng.sample(_COURSE, k=2)

        eth_part = f"{profile.ethnicity_terms[ethnicity]} " if ethnicity else ""
        header = (
            f"{age_phrase} year old {eth_part}{profile.gender_terms[gender]} "
            f"admitted with {complaint}."
        )
        text = f"{header} History of {history[0]} and {history[1]}. {course[0]} {course[1]}"

        groups = [gender] + ([ethnicity] if ethnicity else []) + [
            "over90" if over90 else str(age)
        ]
        labels = frozenset(
            label
            for label in sorted(profile.label_rates)
            if rng.random() < _label_rate(profile, label, groups)
        )
        notes.append(PatientNote(id=f"n{i:0{width}d}", text=text, labels=labels))
    return Corpus(notes=tuple(notes), label_vocabulary=_derive_vocabulary(notes))
