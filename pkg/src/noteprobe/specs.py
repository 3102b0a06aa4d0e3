"""Patient characteristics as data: test groups, surface patterns, swap tables.

A characteristic (gender, age, ethnicity, ...) is a set of test groups, each
defined by the surface forms that identify it and the canonical form written
when a note is rewritten into the group. The built-in specs are plain data:
they can be dumped to JSON, edited to match a deployment's documentation
style, and loaded back, which is how the framework stays extensible without
code changes.

Pattern rules:
- surface patterns are regular expressions compiled case-insensitively; use a
  scoped flag like ``(?-i:\\bF\\b)`` for case-sensitive abbreviations;
- patterns must not define named groups (the combined matcher owns those);
- pronoun tables map a grammatical slot (``subject``, ``possessive``,
  ``object``, ``reflexive``, ``title``, ...) to the tokens filling it; the
  first token of a slot is the one written when rewriting into the group.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError

__all__ = [
    "TestGroup",
    "CharacteristicSpec",
    "gender_spec",
    "age_spec",
    "ethnicity_spec",
    "builtin_spec",
    "builtin_names",
    "spec_to_dict",
    "spec_from_dict",
    "load_spec_file",
    "DEFAULT_DETECTION_WINDOW",
    "AGE_GROUP_NAMES",
    "SLOT_ORDER",
]

DEFAULT_DETECTION_WINDOW = 600

# Resolution order when one token fills several slots of a group.
SLOT_ORDER = ("subject", "possessive", "object", "reflexive", "possessive_standalone", "title")

AGE_MIN, AGE_MAX = 18, 89
AGE_GROUP_NAMES = tuple(str(a) for a in range(AGE_MIN, AGE_MAX + 1)) + ("over90",)

# What may follow a bare numeral for it to count as an age ("58 year old",
# "58-year-old", "58 yo", "58 y/o", "58 y.o.").
_AGE_UNIT = r"(?:[ -]?(?:years?[ -]old|y[./ ]?o\.?))"


@dataclass(frozen=True)
class TestGroup:
    """One manifestation of a characteristic, e.g. gender = female.

    ``is_absent_marker`` marks the group defined by the characteristic not
    being mentioned at all (the ethnicity "no mention" group).
    ``is_modifier`` makes the canonical form prefix the existing mention
    instead of replacing it (the transgender group).
    """

    name: str
    surface_patterns: tuple[str, ...]
    canonical_form: str
    pronoun_map: dict[str, tuple[str, ...]] | None = None
    is_absent_marker: bool = False
    is_modifier: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("test group name must be non-empty")
        if not isinstance(self.surface_patterns, tuple):
            object.__setattr__(self, "surface_patterns", tuple(self.surface_patterns))
        if self.pronoun_map is not None:
            object.__setattr__(
                self,
                "pronoun_map",
                {slot: tuple(toks) for slot, toks in self.pronoun_map.items()},
            )
        if not self.canonical_form and not self.is_absent_marker:
            raise ValidationError(
                f"group {self.name!r}: canonical_form may be empty only for the absent marker"
            )

    def pronoun_tokens(self) -> list[str]:
        if not self.pronoun_map:
            return []
        seen: list[str] = []
        for toks in self.pronoun_map.values():
            for tok in toks:
                if tok not in seen:
                    seen.append(tok)
        return seen

    def slots_of(self, token: str) -> list[str]:
        """Slots a (lowercased) pronoun token fills in this group, in SLOT_ORDER."""
        if not self.pronoun_map:
            return []
        hits = [slot for slot, toks in self.pronoun_map.items() if token in toks]
        return sorted(hits, key=lambda s: SLOT_ORDER.index(s) if s in SLOT_ORDER else len(SLOT_ORDER))


def _narrow_first_chars(pattern: str) -> bool:
    """Heuristically true when the pattern can only start at a digit or '['.

    Lets the matcher hide numeral-heavy branch families (one branch per age)
    behind a cheap position guard; anything unrecognized stays in the general
    bucket, so this is purely a fast-path classification.
    """
    rest = pattern.removeprefix(r"\b")
    return rest.startswith((r"\[", r"\d")) or rest[:1].isdigit()


class _CompiledMatcher:
    """One combined scan per note: every group's surface and pronoun patterns,
    each wrapped in a named branch so a match maps back to (group, kind).

    Branches that can only start at a digit or '[' (the 73-way age family) are
    scanned behind a guard lookahead that rejects ordinary text positions
    after a single check; both scans are merged with leftmost-longest overlap
    resolution.
    """

    def __init__(self, spec: "CharacteristicSpec") -> None:
        guarded: list[str] = []
        general: list[str] = []
        self.branch_map: dict[str, tuple[str, str, int]] = {}
        serial = 0
        for gi, group in enumerate(spec.groups):
            narrow = [p for p in group.surface_patterns if _narrow_first_chars(p)]
            wide = [p for p in group.surface_patterns if not _narrow_first_chars(p)]
            for bucket, patterns in ((guarded, narrow), (general, wide)):
                if patterns:
                    name = f"b{serial}"
                    serial += 1
                    alts = "|".join(f"(?:{p})" for p in patterns)
                    bucket.append(f"(?P<{name}>{alts})")
                    self.branch_map[name] = (group.name, "surface", gi)
        for gi, group in enumerate(spec.groups):
            tokens = group.pronoun_tokens()
            if tokens:
                name = f"b{serial}"
                serial += 1
                alts = "|".join(re.escape(t) for t in sorted(tokens, key=len, reverse=True))
                general.append(rf"(?P<{name}>\b(?:{alts})\b)")
                self.branch_map[name] = (group.name, "pronoun", gi)
        if not guarded and not general:
            raise ValidationError(f"characteristic {spec.name!r} has no detectable patterns")
        try:
            self.scanners = []
            if guarded:
                self.scanners.append(
                    re.compile(r"(?:\b(?=\d)|(?=\[))(?:" + "|".join(guarded) + ")", re.IGNORECASE)
                )
            if general:
                self.scanners.append(re.compile("|".join(general), re.IGNORECASE))
        except re.error as exc:
            raise ValidationError(f"characteristic {spec.name!r}: bad pattern ({exc})") from exc

    def scan(self, text: str) -> list[tuple[int, int, str, str]]:
        """(start, end, group_name, base_kind) matches, non-overlapping,
        sorted by start; overlaps resolve leftmost, then longest, then surface
        before pronoun, then group order."""
        candidates: list[tuple[int, int, int, int, str, str]] = []
        for scanner in self.scanners:
            for m in scanner.finditer(text):
                branch = m.lastgroup
                if branch is None:  # pragma: no cover - every branch is named
                    continue
                group_name, base, gi = self.branch_map[branch]
                candidates.append(
                    (m.start(), -m.end(), 0 if base == "surface" else 1, gi, group_name, base)
                )
        if len(self.scanners) == 1:
            return [(s, -e, g, b) for s, e, _, _, g, b in candidates]
        candidates.sort()
        out: list[tuple[int, int, str, str]] = []
        cursor = 0
        for start, neg_end, _, _, group_name, base in candidates:
            if start < cursor:
                continue
            end = -neg_end
            out.append((start, end, group_name, base))
            cursor = end
        return out


@dataclass
class CharacteristicSpec:
    """A characteristic, its groups, and how mentions are found and inserted.

    Non-pronoun detection is limited to the first ``detection_window_chars``
    characters of a note (patients are described at the top); pronoun
    detection spans the whole note. ``insertion_anchor`` is a regex with a
    named group ``insert``: a zero-width group inserts `` <canonical>`` after
    the anchor position, a non-empty group inserts ``<canonical> `` before it.
    When the anchor is None or does not match, a sample that needs an
    insertion is excluded from the whole cohort.
    """

    name: str
    groups: tuple[TestGroup, ...]
    detection_window_chars: int = DEFAULT_DETECTION_WINDOW
    insertion_anchor: str | None = None
    fallback_policy: str = "exclude_cohort"
    _matcher: _CompiledMatcher | None = field(
        default=None, repr=False, compare=False, init=False
    )
    _anchor_re: re.Pattern | None = field(default=None, repr=False, compare=False, init=False)

    def __post_init__(self) -> None:
        if not isinstance(self.groups, tuple):
            self.groups = tuple(self.groups)
        self.validate()

    def validate(self) -> None:
        if not self.name:
            raise ValidationError("characteristic name must be non-empty")
        if len(self.groups) < 2:
            raise ValidationError(f"characteristic {self.name!r} needs at least 2 groups")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ValidationError(f"characteristic {self.name!r} has duplicate group names")
        if self.detection_window_chars < 1:
            raise ValidationError("detection_window_chars must be >= 1")
        if self.fallback_policy != "exclude_cohort":
            raise ValidationError(f"unknown fallback policy {self.fallback_policy!r}")
        for group in self.groups:
            for pattern in group.surface_patterns:
                if "(?P<" in pattern:
                    raise ValidationError(
                        f"group {group.name!r}: surface patterns must not define named groups"
                    )
        if self.insertion_anchor is not None:
            try:
                anchor = re.compile(self.insertion_anchor, re.IGNORECASE)
            except re.error as exc:
                raise ValidationError(f"bad insertion anchor ({exc})") from exc
            if "insert" not in anchor.groupindex:
                raise ValidationError("insertion anchor must define a named group 'insert'")
        # Canonical forms must be detected as their own group, otherwise the
        # rewrite would not survive a detection round-trip. The probe suffix
        # supplies numeral-unit context for age-style lookaheads and is inert
        # for ordinary word patterns.
        matcher = self.matcher()
        for group in self.groups:
            if group.is_absent_marker:
                continue
            probe = f"{group.canonical_form} year old"
            hits = {g for _, _, g, kind in matcher.scan(probe) if kind == "surface"}
            if hits != {group.name}:
                raise ValidationError(
                    f"canonical form {group.canonical_form!r} of group {group.name!r} "
                    f"detects as {sorted(hits) or 'nothing'}"
                )

    def matcher(self) -> _CompiledMatcher:
        if self._matcher is None:
            self._matcher = _CompiledMatcher(self)
        return self._matcher

    def anchor_regex(self) -> re.Pattern | None:
        if self.insertion_anchor is None:
            return None
        if self._anchor_re is None:
            self._anchor_re = re.compile(self.insertion_anchor, re.IGNORECASE)
        return self._anchor_re

    def group(self, name: str) -> TestGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise ValidationError(
            f"{name!r} is not a group of characteristic {self.name!r} "
            f"(groups: {', '.join(g.name for g in self.groups)})"
        )

    def group_names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def absent_marker(self) -> TestGroup | None:
        for g in self.groups:
            if g.is_absent_marker:
                return g
        return None


# --- built-in specs ---------------------------------------------------------

# The exact surface-form inventories of clinical corpora are deployment
# specific; these defaults cover common admission-note usage and are meant to
# be dumped, extended, and reloaded.

_FEMALE_PRONOUNS = {
    "subject": ("she",),
    "possessive": ("her",),
    "object": ("her",),
    "reflexive": ("herself",),
    "possessive_standalone": ("hers",),
    # "miss" is deliberately absent: it collides with the verb in clinical
    # prose ("did patient miss dialysis"); add it per deployment if wanted
    "title": ("ms", "mrs"),
}
_MALE_PRONOUNS = {
    "subject": ("he",),
    "possessive": ("his",),
    "object": ("him",),
    "reflexive": ("himself",),
    "possessive_standalone": ("his",),
    "title": ("mr",),
}

_GENDER_NOUNS = r"female|male|woman|man|lady|gentleman"

# Insertion point for a missing gender mention: right after the age phrase.
_GENDER_ANCHOR = (
    rf"(?:\b\d{{1,3}}|\[\*\*\s*Age over 90\s*\*\*\]){_AGE_UNIT}(?P<insert>)"
)

# Ethnicity is inserted immediately before the gender term in the header.
_ETHNICITY_ANCHOR = rf"(?P<insert>\b(?:{_GENDER_NOUNS}|(?-i:[FM]\b)))"


def gender_spec() -> CharacteristicSpec:
    """Built-in gender characteristic: female, male, transgender."""
    return CharacteristicSpec(
        name="gender",
        groups=(
            TestGroup(
                name="female",
                surface_patterns=(r"\bfemale\b", r"\bwoman\b", r"\blady\b", r"(?-i:\bF\b)"),
                canonical_form="woman",
                pronoun_map=_FEMALE_PRONOUNS,
            ),
            TestGroup(
                name="male",
                surface_patterns=(r"\bmale\b", r"\bman\b", r"\bgentleman\b", r"(?-i:\bM\b)"),
                canonical_form="man",
                pronoun_map=_MALE_PRONOUNS,
            ),
            TestGroup(
                name="transgender",
                surface_patterns=(
                    rf"\btransgender(?:[ -](?:{_GENDER_NOUNS}|(?-i:[FM]\b)))?\b",
                    rf"\btrans[ -](?:{_GENDER_NOUNS})\b",
                ),
                canonical_form="transgender",
                is_modifier=True,
            ),
        ),
        insertion_anchor=_GENDER_ANCHOR,
    )


def age_spec(deid_token: str = "[**Age over 90 **]") -> CharacteristicSpec:
    """Built-in age characteristic: one group per age 18..89 plus over90.

    The over90 group rewrites the age numeral to ``deid_token`` (the
    de-identification placeholder used for protected ages) and back.
    """
    groups = tuple(
        TestGroup(
            name=str(age),
            surface_patterns=(rf"\b{age}(?={_AGE_UNIT})",),
            canonical_form=str(age),
        )
        for age in range(AGE_MIN, AGE_MAX + 1)
    ) + (
        TestGroup(
            name="over90",
            surface_patterns=(r"\[\*\*\s*Age over 90\s*\*\*\]",),
            canonical_form=deid_token,
        ),
    )
    return CharacteristicSpec(name="age", groups=groups, insertion_anchor=None)


def ethnicity_spec() -> CharacteristicSpec:
    """Built-in ethnicity characteristic: four groups plus the no-mention group."""
    return CharacteristicSpec(
        name="ethnicity",
        groups=(
            TestGroup(
                name="no_mention",
                surface_patterns=(),
                canonical_form="",
                is_absent_marker=True,
            ),
            TestGroup(
                name="white",
                surface_patterns=(r"\bwhite\b", r"\bcaucasian\b"),
                canonical_form="White",
            ),
            TestGroup(
                name="african_american",
                surface_patterns=(r"\bafrican[ -]american\b", r"\bblack\b"),
                canonical_form="African American",
            ),
            TestGroup(
                name="hispanic",
                surface_patterns=(r"\bhispanic\b", r"\blatino\b", r"\blatina\b"),
                canonical_form="Hispanic",
            ),
            TestGroup(
                name="asian",
                surface_patterns=(r"\basian\b",),
                canonical_form="Asian",
            ),
        ),
        insertion_anchor=_ETHNICITY_ANCHOR,
    )


_BUILTINS = {
    "gender": gender_spec,
    "age": age_spec,
    "ethnicity": ethnicity_spec,
}


def builtin_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTINS))


def builtin_spec(name: str) -> CharacteristicSpec:
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ValidationError(
            f"unknown characteristic {name!r}; built-ins: {', '.join(builtin_names())}"
        ) from None
    return factory()


# --- JSON spec files --------------------------------------------------------


def spec_to_dict(spec: CharacteristicSpec) -> dict:
    groups = []
    for g in spec.groups:
        entry: dict[str, object] = {
            "name": g.name,
            "patterns": list(g.surface_patterns),
            "canonical": g.canonical_form,
        }
        if g.pronoun_map:
            entry["pronouns"] = {slot: list(toks) for slot, toks in g.pronoun_map.items()}
        if g.is_absent_marker:
            entry["absent_marker"] = True
        if g.is_modifier:
            entry["modifier"] = True
        groups.append(entry)
    return {
        "name": spec.name,
        "detection_window_chars": spec.detection_window_chars,
        "insertion_anchor": spec.insertion_anchor,
        "groups": groups,
    }


def spec_from_dict(data: dict) -> CharacteristicSpec:
    try:
        groups = tuple(
            TestGroup(
                name=g["name"],
                surface_patterns=tuple(g.get("patterns", ())),
                canonical_form=g.get("canonical", ""),
                pronoun_map=(
                    {slot: tuple(toks) for slot, toks in g["pronouns"].items()}
                    if g.get("pronouns")
                    else None
                ),
                is_absent_marker=bool(g.get("absent_marker", False)),
                is_modifier=bool(g.get("modifier", False)),
            )
            for g in data["groups"]
        )
        return CharacteristicSpec(
            name=data["name"],
            groups=groups,
            detection_window_chars=int(
                data.get("detection_window_chars", DEFAULT_DETECTION_WINDOW)
            ),
            insertion_anchor=data.get("insertion_anchor"),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed characteristic spec: {exc!r}") from exc


def load_spec_file(path: str | Path) -> CharacteristicSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed spec JSON ({exc.msg})") from exc
    return spec_from_dict(data)
