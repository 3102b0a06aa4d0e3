"""Mention detection and the three alteration operations: change, add, keep.

For a characteristic and a target group, a note is rewritten so that it
expresses exactly the target manifestation while everything else stays
untouched:

- ``change``: mentions of another group are rewritten to the target's form
  (surface forms to the canonical form with capitalization style preserved,
  pronouns through the slot tables, age numerals to the target age string or
  the over-90 de-identification token and back);
- ``add``: with no mention present, the target's canonical form is inserted
  at the characteristic's anchor point in the note head;
- ``keep``: the note already expresses the target (or the target is the
  absent-marker group and nothing is mentioned).

A note that cannot be rewritten into some group (no mention and no anchor
match) raises CohortExclusion and must be dropped from every group so that
all test groups stay aligned on the same patient cases.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Corpus, PatientNote
from .errors import CohortExclusion, ParseError, ValidationError
from .specs import CharacteristicSpec, TestGroup, age_spec

__all__ = [
    "MentionSpan",
    "AlterResult",
    "GroupedDataset",
    "detect",
    "resolved_groups",
    "alter",
    "generate_groups",
    "age_groups",
    "save_grouped_dataset",
    "load_group_file",
    "load_grouped_dataset",
    "OPS",
]

KIND_NOUN = "noun_phrase"
KIND_PRONOUN = "pronoun"
KIND_AGE = "age_numeral"
KIND_DEID = "deid_token"

OPS = ("change", "add", "keep")

_DEID_SHAPE = re.compile(r"^\[\*\*.*\*\*\]$")

# Heuristic for the ambiguous "her": possessive when the next word is not a
# known verb form ("her BP"), object otherwise ("examined her."). Imperfect by
# construction; a full parse is out of scope.
_VERB_FORMS = frozenset(
    """is was were are am be been being has had have will would shall should
    can could may might must do does did denies reports states notes presents
    remains continues feels says takes took underwent received developed
    experienced complains complained appears appeared seems seemed""".split()
)

_WORD_RE = re.compile(r"[A-Za-z]+")


@dataclass(frozen=True)
class MentionSpan:
    """A detected mention: byte offsets, the group it matched, and its kind."""

    start: int
    end: int
    matched_group: str
    kind: str

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValidationError(f"invalid span [{self.start}, {self.end})")


@dataclass(frozen=True)
class AlterResult:
    """Outcome of one alteration: the rewritten text, the operation applied,
    and the (start, end, replacement) edits against the original text."""

    text: str
    op: str
    edits: tuple[tuple[int, int, str], ...] = ()


def _classify_surface(matched: str) -> str:
    if matched.isdigit():
        return KIND_AGE
    if _DEID_SHAPE.match(matched):
        return KIND_DEID
    return KIND_NOUN


def detect(note: PatientNote | str, spec: CharacteristicSpec) -> list[MentionSpan]:
    """Find all mention spans of the characteristic in a note.

    Non-pronoun mentions count only within the first detection_window_chars
    of the text; pronouns count anywhere. Spans are non-overlapping and
    sorted by start offset.
    """
    text = note.text if isinstance(note, PatientNote) else note
    spans: list[MentionSpan] = []
    for start, end, group_name, base in spec.matcher().scan(text):
        if base == "pronoun":
            kind = KIND_PRONOUN
        else:
            if start >= spec.detection_window_chars:
                continue
            kind = _classify_surface(text[start:end])
        spans.append(MentionSpan(start=start, end=end, matched_group=group_name, kind=kind))
    return spans


def resolved_groups(spans: Sequence[MentionSpan]) -> list[str]:
    """Groups a set of spans resolves to, in first-mention order.

    Surface mentions (noun phrases, age numerals, de-id tokens) decide; the
    softer pronoun signals are consulted only when no surface mention exists.
    """
    order: list[str] = []
    for span in spans:
        if span.kind != KIND_PRONOUN and span.matched_group not in order:
            order.append(span.matched_group)
    if order:
        return order
    for span in spans:
        if span.matched_group not in order:
            order.append(span.matched_group)
    return order


def _match_style(original: str, replacement: str) -> str:
    """Transfer the original token's capitalization style onto the replacement."""
    if not replacement:
        return replacement
    if original.isupper() and len(original) > 1:
        return replacement.upper()
    if original[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def _ambiguous_pronoun_slot(text: str, pos: int) -> str:
    """Disambiguate a possessive/object pronoun ("her") by its right context:
    possessive when the next clause-mate word is not a known verb form,
    object at a clause boundary or before a verb."""
    i = pos
    while i < len(text) and not text[i].isalpha():
        if text[i] in ".;!?,":
            return "object"
        i += 1
    m = _WORD_RE.match(text, i)
    if not m:
        return "object"
    return "object" if m.group(0).lower() in _VERB_FORMS else "possessive"


def _pronoun_replacement(
    text: str, span: MentionSpan, source: TestGroup, target: TestGroup
) -> str | None:
    """Map one pronoun token into the target group, or None to leave it alone."""
    if not target.pronoun_map:
        return None
    token = text[span.start : span.end].lower()
    slots = source.slots_of(token)
    if not slots:
        return None
    if "possessive" in slots and "object" in slots:
        slot = _ambiguous_pronoun_slot(text, span.end)
    else:
        slot = slots[0]
    target_tokens = target.pronoun_map.get(slot)
    if not target_tokens:
        return None
    return _match_style(text[span.start : span.end], target_tokens[0])


def _deletion_bounds(text: str, start: int, end: int) -> tuple[int, int]:
    # Removing a mention absorbs one adjacent separator space so the sentence
    # stays well-formed.
    if end < len(text) and text[end] == " ":
        return start, end + 1
    if start > 0 and text[start - 1] == " ":
        return start - 1, end
    return start, end


def _apply_edits(text: str, edits: Sequence[tuple[int, int, str]]) -> str:
    parts: list[str] = []
    cursor = 0
    for start, end, replacement in edits:
        parts.append(text[cursor:start])
        parts.append(replacement)
        cursor = end
    parts.append(text[cursor:])
    return "".join(parts)


def _insertion_edit(
    text: str, spec: CharacteristicSpec, target: TestGroup
) -> tuple[int, int, str]:
    anchor = spec.anchor_regex()
    if anchor is None:
        raise CohortExclusion(
            f"characteristic {spec.name!r} has no insertion anchor; "
            f"cannot add a {target.name!r} mention"
        )
    m = anchor.search(text)
    if m is None or m.start("insert") >= spec.detection_window_chars:
        raise CohortExclusion(
            f"insertion anchor for {spec.name!r} not found in the note head"
        )
    pos = m.start("insert")
    if m.end("insert") > m.start("insert"):
        return (pos, pos, f"{target.canonical_form} ")
    return (pos, pos, f" {target.canonical_form}")


def alter(note: PatientNote | str, spec: CharacteristicSpec, target: str) -> AlterResult:
    """Rewrite one note into the target test group.

    Returns the altered text and the operation applied; raises CohortExclusion
    when the note has no mention and the insertion anchor does not match.
    """
    text = note.text if isinstance(note, PatientNote) else note
    return _alter_detected(text, spec, spec.group(target), detect(text, spec))


def _alter_detected(
    text: str,
    spec: CharacteristicSpec,
    target_group: TestGroup,
    spans: Sequence[MentionSpan],
) -> AlterResult:
    # Detection is target-independent, so generate_groups runs it once per
    # note and rewrites into every group from the same span list.
    target = target_group.name
    if not spans:
        if target_group.is_absent_marker:
            return AlterResult(text=text, op="keep")
        edit = _insertion_edit(text, spec, target_group)
        return AlterResult(text=_apply_edits(text, [edit]), op="add", edits=(edit,))

    mentioned = {s.matched_group for s in spans}
    if mentioned == {target}:
        return AlterResult(text=text, op="keep")

    groups_by_name = {g.name: g for g in spec.groups}
    edits: list[tuple[int, int, str]] = []
    for span in spans:
        source = groups_by_name[span.matched_group]
        original = text[span.start : span.end]
        if span.kind == KIND_PRONOUN:
            replacement = _pronoun_replacement(text, span, source, target_group)
            if replacement is not None and replacement != original:
                edits.append((span.start, span.end, replacement))
        elif target_group.is_absent_marker:
            start, end = _deletion_bounds(text, span.start, span.end)
            if edits and start < edits[-1][1]:  # adjacent deletions share a separator
                start = edits[-1][1]
            edits.append((start, end, ""))
        elif target_group.is_modifier:
            if span.matched_group != target:
                prefix = _match_style(original, target_group.canonical_form)
                edits.append((span.start, span.start, f"{prefix} "))
        else:
            replacement = _match_style(original, target_group.canonical_form)
            if replacement != original:
                edits.append((span.start, span.end, replacement))
    if not edits:
        if target in mentioned:
            # Nothing needed rewriting: the note already expresses the target
            # (e.g. a modifier mention whose untouched pronouns still match
            # the source gender).
            return AlterResult(text=text, op="keep")
        # Mentions exist but none can carry the target (a pronoun-only note
        # rewritten toward a modifier group, say): fall back to inserting the
        # target's canonical form so the altered text still expresses it.
        edit = _insertion_edit(text, spec, target_group)
        return AlterResult(text=_apply_edits(text, [edit]), op="add", edits=(edit,))
    return AlterResult(text=_apply_edits(text, edits), op="change", edits=tuple(edits))


@dataclass(frozen=True)
class GroupedDataset:
    """One altered copy of the corpus per test group, aligned on sample ids."""

    characteristic: str
    groups: dict[str, tuple[tuple[str, str], ...]]  # group -> ((id, text), ...)
    excluded_ids: tuple[str, ...] = ()
    op_log: dict[tuple[str, str], str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        id_sets = {name: {i for i, _ in rows} for name, rows in self.groups.items()}
        first: set[str] | None = None
        for name, ids in id_sets.items():
            if first is None:
                first = ids
            elif ids != first:
                raise ValidationError(
                    f"group {name!r} does not cover the shared cohort "
                    f"(symmetric difference: {sorted(ids ^ first)[:5]} ...)"
                )
        if first and set(self.excluded_ids) & first:
            raise ValidationError("excluded ids overlap with included cohort")

    def cohort_ids(self) -> tuple[str, ...]:
        if not self.groups:
            return ()
        first = next(iter(self.groups.values()))
        return tuple(i for i, _ in first)

    def group_names(self) -> tuple[str, ...]:
        return tuple(self.groups)


def generate_groups(corpus: Corpus, spec: CharacteristicSpec) -> GroupedDataset:
    """Apply alter() for every (note, group) pair, enforcing cohort identity.

    A note that raises CohortExclusion for any group is excluded from all
    groups and recorded in excluded_ids.
    """
    if len(corpus) == 0:
        raise ValidationError("cannot generate test groups from an empty corpus")
    group_rows: dict[str, list[tuple[str, str]]] = {g.name: [] for g in spec.groups}
    excluded: list[str] = []
    op_log: dict[tuple[str, str], str] = {}
    for note in corpus:
        spans = detect(note.text, spec)
        results: dict[str, AlterResult] = {}
        try:
            for group in spec.groups:
                results[group.name] = _alter_detected(note.text, spec, group, spans)
        except CohortExclusion:
            excluded.append(note.id)
            continue
        for name, result in results.items():
            group_rows[name].append((note.id, result.text))
            op_log[(note.id, name)] = result.op
    return GroupedDataset(
        characteristic=spec.name,
        groups={name: tuple(rows) for name, rows in group_rows.items()},
        excluded_ids=tuple(excluded),
        op_log=op_log,
    )


def age_groups(corpus: Corpus, deid_token: str = "[**Age over 90 **]") -> GroupedDataset:
    """Test groups for every age 18..89 plus the over-90 de-id group."""
    return generate_groups(corpus, age_spec(deid_token=deid_token))


# --- group-file persistence -------------------------------------------------


def save_grouped_dataset(dataset: GroupedDataset, out_dir: str | Path) -> list[Path]:
    """Write one JSONL file per group (fields id, text, op), sorted by id."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for name, rows in dataset.groups.items():
        path = out_dir / f"{name}.jsonl"
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for sample_id, text in sorted(rows):
                record = {
                    "id": sample_id,
                    "text": text,
                    "op": dataset.op_log.get((sample_id, name), "change"),
                }
                fh.write(json.dumps(record, ensure_ascii=False))
                fh.write("\n")
        written.append(path)
    return written


def load_group_file(path: str | Path) -> list[tuple[str, str, str]]:
    """Read one group JSONL file back as (id, text, op) rows."""
    path = Path(path)
    rows: list[tuple[str, str, str]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed JSON line ({exc.msg})") from exc
            try:
                rows.append((obj["id"], obj["text"], obj.get("op", "change")))
            except (KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: expected fields id, text") from exc
    return rows


def load_grouped_dataset(
    group_dir: str | Path, characteristic: str | None = None
) -> GroupedDataset:
    """Reassemble a GroupedDataset from a directory of per-group JSONL files."""
    group_dir = Path(group_dir)
    files = sorted(group_dir.glob("*.jsonl"))
    if not files:
        raise ValidationError(f"no group files (*.jsonl) found in {group_dir}")
    groups: dict[str, tuple[tuple[str, str], ...]] = {}
    op_log: dict[tuple[str, str], str] = {}
    for path in files:
        name = path.stem
        rows = load_group_file(path)
        groups[name] = tuple((i, t) for i, t, _ in rows)
        for sample_id, _, op in rows:
            op_log[(sample_id, name)] = op
    return GroupedDataset(
        characteristic=characteristic or group_dir.name,
        groups=groups,
        op_log=op_log,
    )
