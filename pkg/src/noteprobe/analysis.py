"""Aggregation and the deviation statistic.

For each test group i, the deviation for a label is

    c_i = p_i - (sum of the other groups' mean probabilities) / N

where p_i is the group's mean predicted probability over the shared cohort
and N is the number of test groups other than i. Positive c_i means the model
rates the outcome likelier when the note expresses manifestation i. The same
machinery applied to label prevalences in a labeled corpus yields the
training-distribution baseline a model's deviations can be compared against.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import Corpus
from .errors import ValidationError
from .inference import PredictionRecord
from .perturb import detect, resolved_groups
from .specs import AGE_GROUP_NAMES, CharacteristicSpec, age_spec

__all__ = [
    "GroupMeans",
    "DeviationMatrix",
    "BaselineDistribution",
    "AgeCurve",
    "aggregate",
    "deviation",
    "baseline_distribution",
    "age_sweep",
    "auroc",
    "ZERO_SUM_TOL",
]

# Per-label zero-sum slack for a deviation matrix with G groups: G * this.
ZERO_SUM_TOL = 1e-12


@dataclass(frozen=True)
class GroupMeans:
    """Mean predicted probability per (group, label) over one shared cohort."""

    characteristic: str
    groups: tuple[str, ...]
    labels: tuple[str, ...]
    means: dict[tuple[str, str], float]
    cohort_size: int

    def __post_init__(self) -> None:
        if self.cohort_size < 1:
            raise ValidationError("cohort_size must be >= 1")
        for group in self.groups:
            for label in self.labels:
                if (group, label) not in self.means:
                    raise ValidationError(f"means missing cell ({group!r}, {label!r})")


@dataclass(frozen=True)
class DeviationMatrix:
    """Deviation per (group, label); sums to zero over groups for each label."""

    characteristic: str
    groups: tuple[str, ...]
    labels: tuple[str, ...]
    cells: dict[tuple[str, str], float]
    group_count: int

    def __post_init__(self) -> None:
        if self.group_count < 2:
            raise ValidationError("a deviation matrix needs at least 2 groups")
        tol = ZERO_SUM_TOL * self.group_count
        for label in self.labels:
            total = sum(self.cells[(g, label)] for g in self.groups)
            if abs(total) > tol:
                raise ValidationError(
                    f"deviations for label {label!r} sum to {total!r}, beyond {tol!r}"
                )


@dataclass(frozen=True)
class BaselineDistribution:
    """Label prevalence and occurrence counts per detected group in a corpus."""

    characteristic: str
    groups: tuple[str, ...]
    labels: tuple[str, ...]
    prevalence: dict[tuple[str, str], float]
    counts: dict[tuple[str, str], int]
    group_sizes: dict[str, int]

    def to_group_means(self) -> GroupMeans:
        """Prevalences as GroupMeans so deviation() applies unchanged."""
        return GroupMeans(
            characteristic=self.characteristic,
            groups=self.groups,
            labels=self.labels,
            means=dict(self.prevalence),
            cohort_size=max(1, sum(self.group_sizes.values())),
        )


@dataclass(frozen=True)
class AgeCurve:
    """Group-mean probability per simulated age for one label, over90 last."""

    label: str
    points: tuple[tuple[str, float], ...]
    overlay: tuple[tuple[str, float | None], ...] | None = None

    def ages(self) -> tuple[str, ...]:
        return tuple(age for age, _ in self.points)


def aggregate(records: Sequence[PredictionRecord], characteristic: str = "") -> GroupMeans:
    """Arithmetic mean per (group, label) over the cohort.

    Requires a complete run: every group must cover the same sample ids and
    every record the same label set. Summation order is fixed by sample id so
    results are bit-reproducible.
    """
    if not records:
        raise ValidationError("no prediction records to aggregate")
    by_group: dict[str, dict[str, PredictionRecord]] = {}
    labels: tuple[str, ...] | None = None
    for record in records:
        if labels is None:
            labels = tuple(record.probabilities)
        elif set(record.probabilities) != set(labels):
            raise ValidationError(
                f"record ({record.group!r}, {record.sample_id!r}) has a different "
                f"label set than the first record"
            )
        slot = by_group.setdefault(record.group, {})
        if record.sample_id in slot:
            raise ValidationError(
                f"duplicate record for ({record.group!r}, {record.sample_id!r})"
            )
        slot[record.sample_id] = record

    cohort = set.union(*(set(ids) for ids in by_group.values()))
    missing = [
        (group, sample_id)
        for group in sorted(by_group)
        for sample_id in sorted(cohort - set(by_group[group]))
    ]
    if missing:
        raise ValidationError(
            f"incomplete run: {len(missing)} missing (group, id) pairs, "
            f"first {missing[:10]}"
        )

    assert labels is not None
    groups = tuple(sorted(by_group))
    ordered_ids = sorted(cohort)
    means: dict[tuple[str, str], float] = {}
    for group in groups:
        rows = by_group[group]
        for label in labels:
            total = 0.0
            for sample_id in ordered_ids:
                total += rows[sample_id].probabilities[label]
            means[(group, label)] = total / len(ordered_ids)
    return GroupMeans(
        characteristic=characteristic,
        groups=groups,
        labels=labels,
        means=means,
        cohort_size=len(ordered_ids),
    )


def deviation(means: GroupMeans) -> DeviationMatrix:
    """Deviation of each group's mean from the average of all other groups."""
    g = len(means.groups)
    if g < 2:
        raise ValidationError("deviation needs at least 2 groups")
    cells: dict[tuple[str, str], float] = {}
    n = g - 1
    for label in means.labels:
        values = [means.means[(group, label)] for group in means.groups]
        total = sum(values)
        for group, p in zip(means.groups, values):
            cells[(group, label)] = p - (total - p) / n
    return DeviationMatrix(
        characteristic=means.characteristic,
        groups=means.groups,
        labels=means.labels,
        cells=cells,
        group_count=g,
    )


def baseline_distribution(
    corpus: Corpus, spec: CharacteristicSpec
) -> BaselineDistribution:
    """Prevalence and occurrence counts per group detected in original notes.

    Group membership comes from running detection on the unaltered notes, so
    the same spec drives both perturbation and baselines. Notes with no
    detected mention fall into the characteristic's absent-marker group if it
    has one, otherwise into an implicit "no_mention" bucket. Groups with zero
    notes are dropped with a warning.
    """
    absent = spec.absent_marker()
    absent_name = absent.name if absent else "no_mention"
    sizes: dict[str, int] = {g.name: 0 for g in spec.groups}
    sizes.setdefault(absent_name, 0)
    counts: dict[tuple[str, str], int] = {}
    labeled_notes = 0
    for note in corpus:
        if note.labels is None:
            continue
        labeled_notes += 1
        resolved = resolved_groups(detect(note, spec))
        group = resolved[0] if resolved else absent_name
        sizes[group] = sizes.get(group, 0) + 1
        for label in note.labels:
            counts[(group, label)] = counts.get((group, label), 0) + 1
    if labeled_notes == 0:
        raise ValidationError("baseline_distribution needs a labeled corpus")

    group_order: list[str] = [g.name for g in spec.groups]
    if absent_name not in group_order:
        group_order.append(absent_name)
    kept: list[str] = []
    for name in group_order:
        if sizes.get(name, 0) == 0:
            warnings.warn(
                f"group {name!r} has no notes in the corpus; dropped from the baseline",
                stacklevel=2,
            )
            continue
        kept.append(name)

    labels = corpus.label_vocabulary
    prevalence: dict[tuple[str, str], float] = {}
    final_counts: dict[tuple[str, str], int] = {}
    for group in kept:
        for label in labels:
            count = counts.get((group, label), 0)
            final_counts[(group, label)] = count
            prevalence[(group, label)] = count / sizes[group]
    return BaselineDistribution(
        characteristic=spec.name,
        groups=tuple(kept),
        labels=labels,
        prevalence=prevalence,
        counts=final_counts,
        group_sizes={g: sizes[g] for g in kept},
    )


def age_sweep(
    records: Sequence[PredictionRecord],
    corpus: Corpus | None = None,
    deid_token: str = "[**Age over 90 **]",
) -> list[AgeCurve]:
    """Per-label curve of group means over the simulated ages 18..89 + over90.

    When a labeled corpus is supplied, each curve carries a training-prevalence
    overlay per exact age bucket (None where the corpus has no such patients).
    """
    means = aggregate(records, characteristic="age")
    missing = [age for age in AGE_GROUP_NAMES if age not in means.groups]
    if missing:
        raise ValidationError(
            f"age sweep needs all {len(AGE_GROUP_NAMES)} age groups; missing {missing[:5]}"
        )

    overlay_by_age: dict[str, dict[str, float]] = {}
    if corpus is not None:
        baseline = baseline_distribution(corpus, age_spec(deid_token=deid_token))
        for (group, label), value in baseline.prevalence.items():
            overlay_by_age.setdefault(label, {})[group] = value

    curves: list[AgeCurve] = []
    for label in means.labels:
        points = tuple((age, means.means[(age, label)]) for age in AGE_GROUP_NAMES)
        overlay = None
        if corpus is not None:
            per_age = overlay_by_age.get(label, {})
            overlay = tuple((age, per_age.get(age)) for age in AGE_GROUP_NAMES)
        curves.append(AgeCurve(label=label, points=points, overlay=overlay))
    return curves


def auroc(scores: Iterable[tuple[float, bool]]) -> float:
    """Probability that a random positive outranks a random negative, ties half.

    Computed from tied ranks (Mann-Whitney), which equals brute-force pair
    counting exactly.
    """
    pairs = list(scores)
    n_pos = sum(1 for _, y in pairs if y)
    n_neg = len(pairs) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("auroc is undefined for single-class input")

    order = sorted(range(len(pairs)), key=lambda i: pairs[i][0])
    ranks = [0.0] * len(pairs)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pairs[order[j + 1]][0] == pairs[order[i]][0]:
            j += 1
        tied_rank = (i + j + 2) / 2.0  # average of 1-based ranks i+1 .. j+1
        for k in range(i, j + 1):
            ranks[order[k]] = tied_rank
        i = j + 1

    rank_sum = sum(ranks[i] for i, (_, y) in enumerate(pairs) if y)
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
