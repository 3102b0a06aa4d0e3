"""Acceptance suite: one test per release criterion, each printing a
pass/fail line (run with ``pytest tests/test_acceptance.py -v -s``).

Group-mean reference tables come from models that need credentialed clinical
data access, so acceptance rests on exact-arithmetic reproduction of the
deviation formula on those frozen inputs plus oracle- and property-based
suites over the synthetic corpus, the mock model, and stub endpoints.
"""

from __future__ import annotations

import hashlib
import math
import random
import time
from pathlib import Path

import pytest

from noteprobe import specs
from noteprobe.analysis import GroupMeans, aggregate, auroc, deviation
from noteprobe.cli import main
from noteprobe.corpus import generate_synthetic_corpus, save_corpus
from noteprobe.errors import ProtocolError
from noteprobe.inference import (
    MockLexicalModel,
    ModelEndpoint,
    predict_mock,
    predict_remote,
)
from noteprobe.perturb import alter, detect, generate_groups

from stub_server import StubBehavior, stub_server


def _report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def _means(characteristic: str, values: dict[str, float], label: str = "mortality") -> GroupMeans:
    groups = tuple(values)
    return GroupMeans(
        characteristic=characteristic,
        groups=groups,
        labels=(label,),
        means={(g, label): v for g, v in values.items()},
        cohort_size=1,
    )


def test_c1_deviation_on_reference_inputs() -> None:
    """Deviation on the frozen gender/ethnicity mean tables, 1e-12, < 1 ms."""
    gender = _means(
        "gender", {"female": 0.335, "male": 0.333, "transgender": 0.326}
    )
    expected = {"female": 0.0055, "male": 0.0025, "transgender": -0.0080}

    start = time.perf_counter_ns()
    matrix = deviation(gender)
    elapsed_ms = (time.perf_counter_ns() - start) / 1e6

    worst = max(
        abs(matrix.cells[(g, "mortality")] - expected[g]) for g in expected
    )
    ethnicity = _means(
        "ethnicity",
        {
            "no_mention": 0.333,
            "white": 0.329,
            "african_american": 0.329,
            "hispanic": 0.331,
            "asian": 0.330,
        },
    )
    eth_matrix = deviation(ethnicity)
    cells = {g: eth_matrix.cells[(g, "mortality")] for g in ethnicity.groups}
    top = max(cells.values())
    unique_max = [g for g, v in cells.items() if v == top]

    _report(
        "C1 deviation on reference inputs",
        worst <= 1e-12 and unique_max == ["no_mention"] and elapsed_ms < 1.0,
        f"max error {worst:.2e}, unique max {unique_max}, {elapsed_ms:.3f} ms",
    )


def test_c2_zero_sum_translation_order_10k() -> None:
    """10,000 randomized instances: zero-sum, translation invariance, order
    preservation; verification runtime < 5 s."""
    rng = random.Random(42)
    instances = []
    for _ in range(10000):
        g = rng.randint(2, 10)
        l = rng.randint(1, 50)
        groups = tuple(f"g{i}" for i in range(g))
        labels = tuple(f"l{j}" for j in range(l))
        means = {(gr, lb): rng.random() for gr in groups for lb in labels}
        instances.append(
            (
                GroupMeans("x", groups, labels, means, cohort_size=1),
                GroupMeans(
                    "x", groups, labels, {k: v + 0.125 for k, v in means.items()}, 1
                ),
            )
        )

    started = time.monotonic()
    zero_sum_ok = translation_ok = order_ok = True
    for base, shifted in instances:
        matrix = deviation(base)
        tol = 1e-12 * len(base.groups)
        for label in base.labels:
            total = sum(matrix.cells[(g, label)] for g in base.groups)
            zero_sum_ok &= abs(total) <= tol
        shifted_matrix = deviation(shifted)
        for key, value in shifted_matrix.cells.items():
            translation_ok &= abs(value - matrix.cells[key]) <= 1e-12
        for label in base.labels:
            ordered = sorted(base.groups, key=lambda g: base.means[(g, label)])
            for a, b in zip(ordered, ordered[1:]):
                order_ok &= matrix.cells[(a, label)] <= matrix.cells[(b, label)]
    elapsed = time.monotonic() - started

    _report(
        "C2 zero-sum/translation/order on 10,000 instances",
        zero_sum_ok and translation_ok and order_ok and elapsed < 5.0,
        f"zero-sum {zero_sum_ok}, translation {translation_ok}, order {order_ok}, "
        f"{elapsed:.2f} s",
    )


def test_c3_bias_recovery_selftest() -> None:
    """n=2000 synthetic pipeline recovers an injected +0.05 shift exactly."""
    started = time.monotonic()
    corpus = generate_synthetic_corpus(7, 2000)
    spec = specs.gender_spec()
    dataset = generate_groups(corpus, spec)

    # token weight lifting the transgender group from 0.5 to exactly 0.55
    shift_logit = math.log(0.55 / 0.45)
    biased = MockLexicalModel(
        base_logits={"mortality": 0.0},
        lexicon={("transgender", "mortality"): shift_logit},
    )
    matrix = deviation(aggregate(predict_mock(dataset, biased), "gender"))
    expected = {"female": -0.025, "male": -0.025, "transgender": 0.05}
    worst = max(
        abs(matrix.cells[(g, "mortality")] - expected[g]) for g in expected
    )

    flat = MockLexicalModel(base_logits={"mortality": 0.0})
    flat_matrix = deviation(aggregate(predict_mock(dataset, flat), "gender"))
    flat_peak = max(abs(v) for v in flat_matrix.cells.values())
    elapsed = time.monotonic() - started

    _report(
        "C3 bias-recovery selftest (n=2000)",
        worst <= 1e-6 and flat_peak < 1e-9 and elapsed < 60.0,
        f"max bias error {worst:.2e}, flat peak {flat_peak:.2e}, {elapsed:.1f} s",
    )


def test_c4_perturbation_property_suite(property_corpus) -> None:
    """1,000 synthetic notes x three characteristics x all groups:
    idempotence, detection round-trip, locality, cohort identity; exact group
    counts 3 / 73 / 5."""
    failures: list[str] = []
    group_counts = {}
    for name in ("gender", "age", "ethnicity"):
        spec = specs.builtin_spec(name)
        dataset = generate_groups(property_corpus, spec)
        group_counts[name] = len(dataset.groups)

        cohorts = {frozenset(i for i, _ in rows) for rows in dataset.groups.values()}
        if len(cohorts) != 1:
            failures.append(f"{name}: cohort identity broken")

        originals = {n.id: n.text for n in property_corpus}
        for group in spec.groups:
            rows = dataset.groups[group.name]
            for sample_id, altered in rows:
                op = dataset.op_log[(sample_id, group.name)]
                original = originals[sample_id]

                if op == "keep" and altered != original:
                    failures.append(f"{name}/{group.name}/{sample_id}: keep changed text")
                    continue

                spans = detect(altered, spec)
                surface = {s.matched_group for s in spans if s.kind != "pronoun"}
                if group.is_absent_marker:
                    if surface:
                        failures.append(
                            f"{name}/{group.name}/{sample_id}: mention survived removal"
                        )
                elif surface != {group.name}:
                    failures.append(
                        f"{name}/{group.name}/{sample_id}: resolves to {sorted(surface)}"
                    )

                again = alter(altered, spec, group.name)
                if again.op != "keep" or again.text != altered:
                    failures.append(f"{name}/{group.name}/{sample_id}: not idempotent")

                if op != "keep":
                    # locality: the recorded edits fully explain the diff, and
                    # every non-insertion edit sits inside a detected span
                    # (stretched one char for a deletion's absorbed separator)
                    redo = alter(original, spec, group.name)
                    original_spans = detect(original, spec)
                    windows = [(s.start - 1, s.end + 1) for s in original_spans]
                    rebuilt, cursor = [], 0
                    for start, end, replacement in redo.edits:
                        rebuilt.append(original[cursor:start])
                        rebuilt.append(replacement)
                        cursor = end
                        if end > start and not any(
                            ws <= start and end <= we for ws, we in windows
                        ):
                            failures.append(
                                f"{name}/{group.name}/{sample_id}: edit outside spans"
                            )
                    rebuilt.append(original[cursor:])
                    if "".join(rebuilt) != altered:
                        failures.append(
                            f"{name}/{group.name}/{sample_id}: edits do not explain diff"
                        )

    counts_ok = group_counts == {"gender": 3, "age": 73, "ethnicity": 5}
    _report(
        "C4 perturbation property suite (1,000 notes x 3 characteristics)",
        not failures and counts_ok,
        f"{len(failures)} failures, counts {group_counts}"
        + (f"; first: {failures[0]}" if failures else ""),
    )


def test_c5_auroc_oracle() -> None:
    """500 random instances (n <= 200) match O(n^2) pair counting; the
    worked example is exact."""

    def brute_force(scores) -> float:
        hits = pairs = 0.0
        for sp, yp in scores:
            if not yp:
                continue
            for sn, yn in scores:
                if yn:
                    continue
                pairs += 1
                hits += 1.0 if sp > sn else (0.5 if sp == sn else 0.0)
        return hits / pairs

    rng = random.Random(99)
    worst = 0.0
    for _ in range(500):
        n = rng.randint(2, 200)
        scores = [(rng.choice([rng.random(), round(rng.random(), 1)]), rng.random() < 0.5)
                  for _ in range(n)]
        if len({y for _, y in scores}) < 2:
            scores[0] = (scores[0][0], True)
            scores[1] = (scores[1][0], False)
        worst = max(worst, abs(auroc(scores) - brute_force(scores)))

    exact = auroc([(0.8, True), (0.4, True), (0.6, False), (0.2, False)])
    _report(
        "C5 AUROC pair-counting oracle (500 instances)",
        worst <= 1e-12 and exact == 0.75,
        f"max |difference| {worst:.2e}, example {exact}",
    )


def _tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_c6_pipeline_determinism(tmp_path) -> None:
    """Two identical full runs produce byte-identical artifact trees."""
    notes = tmp_path / "notes.jsonl"
    save_corpus(generate_synthetic_corpus(21, 80), notes)
    mock = tmp_path / "mock.json"
    mock.write_text(
        '{"base_logits": {"mortality": 0.0}, '
        '"lexicon": {"transgender": {"mortality": -0.4}}}',
        encoding="utf-8",
    )
    digests = []
    for run in ("r1", "r2"):
        out = tmp_path / run
        assert main(["generate", "--input", str(notes), "--characteristic", "gender",
                     "--out", str(out)]) == 0
        assert main(["predict", "--input", str(out), "--mock", str(mock),
                     "--out", str(out / "preds")]) == 0
        assert main(["analyze", "--input", str(out / "preds"),
                     "--characteristic", "gender", "--out", str(out / "analysis.json")]) == 0
        assert main(["report", "--input", str(out / "analysis.json"), "--notes", str(notes),
                     "--out", str(out / "report")]) == 0
        digests.append(_tree_digest(out))

    _report(
        "C6 pipeline determinism (byte-identical artifact trees)",
        digests[0] == digests[1] and len(digests[0]) >= 10,
        f"{len(digests[0])} files compared",
    )


def test_c7_remote_client_robustness() -> None:
    """Shuffled completion order plus one transient failure yield the same
    complete ordered record set; an out-of-range probability is a protocol
    error naming the record."""
    corpus = generate_synthetic_corpus(33, 40)
    dataset = generate_groups(corpus, specs.gender_spec())
    args = dict(max_batch=4, max_parallel=4, retries=2, timeout_ms=10000)

    with stub_server(StubBehavior()) as url:
        baseline = predict_remote(dataset, ModelEndpoint(base_url=url, **args))

    rng = random.Random(1)
    delays = {i: rng.random() * 0.04 for i in range(1, 200)}
    with stub_server(
        StubBehavior(delay_fn=lambda count: delays.get(count, 0.0), fail_first=1)
    ) as url:
        shuffled = predict_remote(dataset, ModelEndpoint(base_url=url, **args))

    complete = len(baseline) == 3 * len(dataset.cohort_ids())
    identical = shuffled == baseline

    with stub_server(StubBehavior(bad_value=1.2)) as url:
        with pytest.raises(ProtocolError) as err:
            predict_remote(dataset, ModelEndpoint(base_url=url, **args))
    named = "1.2" in str(err.value) and "'female'" in str(err.value)

    _report(
        "C7 remote-client robustness",
        complete and identical and named,
        f"complete {complete}, identical {identical}, protocol error named {named}",
    )
