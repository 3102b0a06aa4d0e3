"""Command-line pipeline: generate -> predict -> analyze/baseline -> report.

Stages are separate commands with file handoffs so expensive remote prediction
can be rerun independently of analysis. Exit codes: 0 success, 1 selftest
failure, 2 validation error, 3 protocol/transport error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

from . import analysis, corpus as corpus_mod, inference, perturb, report, specs
from .errors import NoteprobeError, ProtocolError, TransportError, ValidationError

EXIT_OK = 0
EXIT_SELFTEST_FAILED = 1
EXIT_VALIDATION = 2
EXIT_PROTOCOL = 3

SELFTEST_BIAS_SHIFT = 0.05  # injected probability shift recovered by cmd_selftest


def _load_spec(args: argparse.Namespace) -> specs.CharacteristicSpec:
    if getattr(args, "spec", None):
        return specs.load_spec_file(args.spec)
    name = getattr(args, "characteristic", None)
    if not name:
        raise ValidationError("pass --characteristic <name> or --spec <file>")
    if name == "age":
        return specs.age_spec(deid_token=getattr(args, "deid_token", None) or "[**Age over 90 **]")
    return specs.builtin_spec(name)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
        newline="\n",
    )


def _nested(cells: dict[tuple[str, str], float], groups, labels) -> dict:
    return {g: {l: cells[(g, l)] for l in labels} for g in groups}


def cmd_generate(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    notes = corpus_mod.load_corpus(args.input)
    dataset = perturb.generate_groups(notes, spec)
    out = Path(args.out)
    perturb.save_grouped_dataset(dataset, out / spec.name)
    _write_json(
        out / "excluded.json",
        {
            "characteristic": spec.name,
            "excluded_ids": sorted(dataset.excluded_ids),
            "reason": "no detectable mention and no insertion anchor match",
        },
    )
    oplog: dict[str, dict[str, str]] = {g: {} for g in dataset.groups}
    for (sample_id, group), op in dataset.op_log.items():
        oplog[group][sample_id] = op
    _write_json(out / "oplog.json", {"characteristic": spec.name, "ops": oplog})
    print(
        f"wrote {len(dataset.groups)} groups x {len(dataset.cohort_ids())} samples "
        f"to {out / spec.name} ({len(dataset.excluded_ids)} excluded)"
    )
    return EXIT_OK


def _holds_group_files(directory: Path) -> bool:
    """Group files carry a 'text' field; prediction files carry 'probabilities'."""
    for path in directory.glob("*.jsonl"):
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except ValueError:
                    return False
                return isinstance(row, dict) and "text" in row
    return False


def _group_dir(args: argparse.Namespace) -> Path:
    base = Path(args.input)
    if not base.is_dir():
        raise ValidationError(f"{base} is not a directory")
    if getattr(args, "characteristic", None):
        candidate = base / args.characteristic
        if candidate.is_dir() and _holds_group_files(candidate):
            return candidate
        raise ValidationError(f"no group files for {args.characteristic!r} under {base}")
    if _holds_group_files(base):
        return base
    subdirs = [d for d in sorted(base.iterdir()) if d.is_dir() and _holds_group_files(d)]
    if len(subdirs) == 1:
        return subdirs[0]
    raise ValidationError(
        f"cannot locate group files under {base}"
        + (f" (candidates: {[d.name for d in subdirs]})" if subdirs else "")
        + "; pass --characteristic or point --input at the directory holding "
        "the group *.jsonl files"
    )


def cmd_predict(args: argparse.Namespace) -> int:
    sources = [s for s in (args.endpoint, args.mock, args.predictions) if s]
    if len(sources) != 1:
        raise ValidationError("pass exactly one of --endpoint, --mock, --predictions")
    group_dir = _group_dir(args)
    dataset = perturb.load_grouped_dataset(group_dir)

    if args.endpoint:
        endpoint = inference.ModelEndpoint(
            base_url=args.endpoint,
            timeout_ms=args.timeout_ms,
            max_batch=args.max_batch,
            max_parallel=args.max_parallel,
            retries=args.retries,
        )
        records = inference.predict_remote(dataset, endpoint)
    elif args.mock:
        model = inference.MockLexicalModel.from_json_file(args.mock)
        records = inference.predict_mock(dataset, model)
    else:
        records = inference.load_predictions(args.predictions)
        expected = {
            (g, i) for g, rows in dataset.groups.items() for i, _ in rows
        }
        got = {(r.group, r.sample_id) for r in records}
        if expected - got:
            raise ValidationError(
                f"predictions file misses {len(expected - got)} (group, id) pairs, "
                f"first {sorted(expected - got)[:5]}"
            )
        records = [r for r in records if (r.group, r.sample_id) in expected]
        records.sort(key=lambda r: (r.group, r.sample_id))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    by_group: dict[str, list[inference.PredictionRecord]] = {}
    for record in records:
        by_group.setdefault(record.group, []).append(record)
    for group in sorted(by_group):
        inference.save_predictions(by_group[group], out / f"{group}.jsonl")
    print(f"wrote {len(records)} prediction records to {out}")
    return EXIT_OK


def _load_records_dir(path: Path) -> list[inference.PredictionRecord]:
    files = sorted(path.glob("*.jsonl"))
    if not files:
        raise ValidationError(f"no prediction files (*.jsonl) under {path}")
    records: list[inference.PredictionRecord] = []
    for file in files:
        records.extend(inference.load_predictions(file))
    return records


def cmd_analyze(args: argparse.Namespace) -> int:
    source = Path(args.input)
    records = (
        inference.load_predictions(source)
        if source.is_file()
        else _load_records_dir(source)
    )
    characteristic = args.characteristic or ""
    means = analysis.aggregate(records, characteristic=characteristic)
    matrix = analysis.deviation(means)
    out = Path(args.out)
    payload = {
        "characteristic": means.characteristic,
        "cohort_size": means.cohort_size,
        "groups": list(means.groups),
        "labels": list(means.labels),
        "means": _nested(means.means, means.groups, means.labels),
        "deviations": _nested(matrix.cells, matrix.groups, matrix.labels),
    }
    _write_json(out, payload)
    wrote = [str(out)]
    if set(specs.AGE_GROUP_NAMES) <= set(means.groups):
        notes = corpus_mod.load_corpus(args.notes) if args.notes else None
        curves = analysis.age_sweep(records, corpus=notes)
        curves_payload = {
            "characteristic": "age",
            "curves": [
                {
                    "label": curve.label,
                    "points": [[age, value] for age, value in curve.points],
                    "overlay": (
                        [[age, value] for age, value in curve.overlay]
                        if curve.overlay is not None
                        else None
                    ),
                }
                for curve in curves
            ],
        }
        curves_path = out.parent / "age_curves.json"
        _write_json(curves_path, curves_payload)
        wrote.append(str(curves_path))
    print(f"wrote {', '.join(wrote)}")
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    notes = corpus_mod.load_corpus(args.input)
    baseline = analysis.baseline_distribution(notes, spec)
    matrix = analysis.deviation(baseline.to_group_means())
    out = Path(args.out)
    payload = {
        "characteristic": baseline.characteristic,
        "groups": list(baseline.groups),
        "labels": list(baseline.labels),
        "group_sizes": dict(sorted(baseline.group_sizes.items())),
        "counts": {
            g: {l: baseline.counts[(g, l)] for l in baseline.labels} for g in baseline.groups
        },
        "prevalence": _nested(baseline.prevalence, baseline.groups, baseline.labels),
        "deviations": _nested(matrix.cells, matrix.groups, matrix.labels),
    }
    _write_json(out, payload)
    report.emit_csv(baseline, out.with_suffix(".csv"))
    report.emit_heatmap_svg(
        matrix, report.HeatmapSpec(top_k=args.top_k), out.with_suffix(".svg")
    )
    print(f"wrote {out} plus .csv and .svg")
    return EXIT_OK


def _means_from_analysis(payload: dict) -> tuple[analysis.GroupMeans, analysis.DeviationMatrix]:
    groups = tuple(payload["groups"])
    labels = tuple(payload["labels"])
    means = analysis.GroupMeans(
        characteristic=payload.get("characteristic", ""),
        groups=groups,
        labels=labels,
        means={(g, l): payload["means"][g][l] for g in groups for l in labels},
        cohort_size=int(payload.get("cohort_size", 1)),
    )
    matrix = analysis.DeviationMatrix(
        characteristic=means.characteristic,
        groups=groups,
        labels=labels,
        cells={(g, l): payload["deviations"][g][l] for g in groups for l in labels},
        group_count=len(groups),
    )
    return means, matrix


def cmd_report(args: argparse.Namespace) -> int:
    source = Path(args.input)
    if not source.is_file():
        raise ValidationError(f"analysis file not found: {source}")
    payload = json.loads(source.read_text(encoding="utf-8"))
    means, matrix = _means_from_analysis(payload)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    frequencies = None
    if args.notes:
        notes = corpus_mod.load_corpus(args.notes)
        frequencies = {label: 0 for label in means.labels}
        for note in notes:
            for label in note.labels or ():
                if label in frequencies:
                    frequencies[label] += 1
    label_order = report.top_k_labels(means.labels, frequencies, args.top_k)

    report.emit_csv(means, out / "means.csv")
    report.emit_csv(matrix, out / "deviations.csv")
    report.emit_heatmap_svg(
        matrix,
        report.HeatmapSpec(top_k=args.top_k, label_order=label_order),
        out / "heatmap.svg",
    )
    table_label = args.label
    if table_label is None:
        table_label = "mortality" if "mortality" in means.labels else means.labels[0]
    report.emit_group_table(means, table_label, out / f"table_{table_label}.md")
    wrote = ["means.csv", "deviations.csv", "heatmap.svg", f"table_{table_label}.md"]

    curves_path = source.parent / "age_curves.json"
    if curves_path.is_file():
        curves_payload = json.loads(curves_path.read_text(encoding="utf-8"))
        curves = [
            analysis.AgeCurve(
                label=entry["label"],
                points=tuple((age, value) for age, value in entry["points"]),
                overlay=(
                    tuple((age, value) for age, value in entry["overlay"])
                    if entry.get("overlay") is not None
                    else None
                ),
            )
            for entry in curves_payload["curves"]
        ]
        plot_labels = [l for l in label_order if l in {c.label for c in curves}]
        chosen = [c for c in curves if c.label in plot_labels[:8]]
        if chosen:
            report.emit_age_plot_svg(chosen, out / "age_plot.svg")
            wrote.append("age_plot.svg")
    print(f"wrote {', '.join(wrote)} under {out}")
    return EXIT_OK


def cmd_dump_spec(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    text = json.dumps(specs.spec_to_dict(spec), indent=2, ensure_ascii=False) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- selftest ----------------------------------------------------------------


def _selftest_checks(seed: int, n: int, out_dir: Path | None) -> list[tuple[str, str, str, bool]]:
    """Run the full pipeline against the mock model with known injected biases
    and return (check, expected, actual, ok) rows."""
    notes = corpus_mod.generate_synthetic_corpus(
        seed, n, corpus_mod.SyntheticProfile(
            gender_proportions={"female": 0.5, "male": 0.5},
        )
    )
    spec = specs.gender_spec()
    dataset = perturb.generate_groups(notes, spec)
    rows: list[tuple[str, str, str, bool]] = []
    rows.append(
        (
            "cohort identity across groups",
            "all groups share one id set",
            f"{len(dataset.groups)} groups x {len(dataset.cohort_ids())} ids",
            len({frozenset(i for i, _ in rows_) for rows_ in dataset.groups.values()}) == 1,
        )
    )

    # Zero lexicon: every text scores logistic(0) = 0.5, all deviations vanish.
    flat_model = inference.MockLexicalModel(base_logits={"mortality": 0.0})
    flat_records = inference.predict_mock(dataset, flat_model)
    flat_dev = analysis.deviation(analysis.aggregate(flat_records, spec.name))
    flat_peak = max(abs(v) for v in flat_dev.cells.values())
    rows.append(("zero-lexicon max |c|", "< 1e-09", f"{flat_peak:.3e}", flat_peak < 1e-9))

    # Token bias on the transgender marker: shifts that group's probability
    # from 0.5 to 0.55 exactly, so c must be (+0.05, -0.025, -0.025).
    delta = math.log(0.55 / 0.45)
    biased_model = inference.MockLexicalModel(
        base_logits={"mortality": 0.0},
        lexicon={("transgender", "mortality"): delta},
    )
    biased_records = inference.predict_mock(dataset, biased_model)
    biased_means = analysis.aggregate(biased_records, spec.name)
    biased_dev = analysis.deviation(biased_means)
    expected = {
        "female": -SELFTEST_BIAS_SHIFT / 2,
        "male": -SELFTEST_BIAS_SHIFT / 2,
        "transgender": SELFTEST_BIAS_SHIFT,
    }
    for group in spec.group_names():
        actual = biased_dev.cells[(group, "mortality")]
        rows.append(
            (
                f"biased c[{group}]",
                f"{expected[group]:+.6f} (tol 1e-06)",
                f"{actual:+.9f}",
                abs(actual - expected[group]) < 1e-6,
            )
        )

    # Negative weight on the marker must push the group's deviation negative.
    neg_model = inference.MockLexicalModel(
        base_logits={"mortality": 0.0},
        lexicon={("transgender", "mortality"): -0.5},
    )
    neg_dev = analysis.deviation(
        analysis.aggregate(inference.predict_mock(dataset, neg_model), spec.name)
    )
    neg_c = neg_dev.cells[("transgender", "mortality")]
    rows.append(("negative-bias c[transgender] sign", "< 0", f"{neg_c:+.6f}", neg_c < 0))

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        corpus_mod.save_corpus(notes, out_dir / "notes.jsonl")
        perturb.save_grouped_dataset(dataset, out_dir / "groups" / spec.name)
        preds_dir = out_dir / "predictions"
        preds_dir.mkdir(parents=True, exist_ok=True)
        by_group: dict[str, list[inference.PredictionRecord]] = {}
        for record in biased_records:
            by_group.setdefault(record.group, []).append(record)
        for group, group_records in sorted(by_group.items()):
            inference.save_predictions(group_records, preds_dir / f"{group}.jsonl")
        _write_json(
            out_dir / "analysis.json",
            {
                "characteristic": spec.name,
                "cohort_size": biased_means.cohort_size,
                "groups": list(biased_means.groups),
                "labels": list(biased_means.labels),
                "means": _nested(biased_means.means, biased_means.groups, biased_means.labels),
                "deviations": _nested(biased_dev.cells, biased_dev.groups, biased_dev.labels),
            },
        )
        report.emit_csv(biased_dev, out_dir / "deviations.csv")
        report.emit_heatmap_svg(biased_dev, report.HeatmapSpec(), out_dir / "heatmap.svg")
    return rows


def cmd_selftest(args: argparse.Namespace) -> int:
    started = time.monotonic()
    rows = _selftest_checks(args.seed, args.n, Path(args.out) if args.out else None)
    name_w = max(len(r[0]) for r in rows) + 2
    exp_w = max(len(r[1]) for r in rows) + 2
    act_w = max(len(r[2]) for r in rows) + 2
    print(f"{'check':<{name_w}}{'expected':<{exp_w}}{'actual':<{act_w}}status")
    ok = True
    for check, expected, actual, passed in rows:
        ok &= passed
        print(f"{check:<{name_w}}{expected:<{exp_w}}{actual:<{act_w}}{'pass' if passed else 'FAIL'}")
    print(f"selftest {'passed' if ok else 'FAILED'} in {time.monotonic() - started:.2f}s")
    return EXIT_OK if ok else EXIT_SELFTEST_FAILED


# --- argument wiring -----------------------------------------------------------


def _add_spec_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--characteristic", help="built-in characteristic name")
    parser.add_argument("--spec", help="characteristic spec JSON file")
    parser.add_argument("--deid-token", dest="deid_token", help="over-90 de-id token override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noteprobe",
        description="Behavioral testing of text-based clinical outcome prediction models.",
    )
    parser.add_argument("--config", help="JSON config file; explicit flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build one altered dataset per test group")
    p.add_argument("--input", required=True, help="notes JSONL file")
    _add_spec_flags(p)
    p.add_argument("--out", required=True, help="output run directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("predict", help="collect predictions for every group")
    p.add_argument("--input", required=True, help="run directory from 'generate'")
    p.add_argument("--characteristic", help="characteristic subdirectory to use")
    p.add_argument("--endpoint", help="remote model base URL")
    p.add_argument("--mock", help="mock lexical model JSON file")
    p.add_argument("--predictions", help="precomputed predictions JSONL file")
    p.add_argument("--out", required=True, help="predictions output directory")
    p.add_argument("--max-batch", dest="max_batch", type=int, default=16)
    p.add_argument("--max-parallel", dest="max_parallel", type=int, default=4)
    p.add_argument("--timeout-ms", dest="timeout_ms", type=int, default=30000)
    p.add_argument("--retries", type=int, default=2)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("analyze", help="aggregate predictions and compute deviations")
    p.add_argument("--input", required=True, help="predictions directory or JSONL file")
    p.add_argument("--characteristic", help="characteristic name recorded in the output")
    p.add_argument("--notes", help="notes JSONL for the age-sweep training overlay")
    p.add_argument("--out", required=True, help="analysis JSON output path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("baseline", help="training-distribution baseline from a labeled corpus")
    p.add_argument("--input", required=True, help="notes JSONL file")
    _add_spec_flags(p)
    p.add_argument("--top-k", dest="top_k", type=int, default=24)
    p.add_argument("--out", required=True, help="baseline JSON output path")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", help="render CSV/SVG/markdown artifacts")
    p.add_argument("--input", required=True, help="analysis JSON from 'analyze'")
    p.add_argument("--notes", help="notes JSONL used to rank labels by frequency")
    p.add_argument("--top-k", dest="top_k", type=int, default=24)
    p.add_argument("--label", help="label for the per-group table (default: mortality)")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="end-to-end bias-recovery validation")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n", type=int, default=2000, help="synthetic corpus size")
    p.add_argument("--out", help="optionally keep the artifact tree here")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("dump-spec", help="print a built-in characteristic spec as JSON")
    _add_spec_flags(p)
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_dump_spec)
    return parser


def _apply_config(args: argparse.Namespace, argv: list[str], config: dict) -> None:
    """Fill attributes from a config file; flags passed on the command line win."""
    passed = {token.split("=", 1)[0] for token in argv if token.startswith("--")}
    for key, value in config.items():
        attr = str(key).replace("-", "_")
        flag = "--" + str(key).replace("_", "-")
        if hasattr(args, attr) and flag not in passed:
            setattr(args, attr, value)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        if not isinstance(config, dict):
            print(f"error: config {args.config} must be a JSON object", file=sys.stderr)
            return EXIT_VALIDATION
        _apply_config(args, argv, config)
    try:
        return args.func(args)
    except (ProtocolError, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except NoteprobeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
