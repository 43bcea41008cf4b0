"""Command-line front end.

Subcommands: summarize, compare, probes, match-layers, grid-fisher.
Outputs are JSON (structured results, with a provenance block embedding
the seed, the effective config, and sha256 digests of every input file)
and CSV (matrices and curves for external plotting). Reruns with the
same inputs, config, and seed are byte-identical regardless of
--threads. Exit codes: 0 success, 1 internal error, 2 user/input error.

Only the output directory and the thread count may come from the
environment (SRAS_OUT_DIR, SRAS_THREADS).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import gridfisher as gf
from . import probes as pr
from .errors import NoConvergence, SingularLinearization
from .repmap import load_dataset, load_model
from .retrieval import (
    build_layer_report,
    donor_distinct_top1,
    layer_similarity_matrix,
    sras_operator_comparator,
)
from .spd import spd_lift, sras_score
from .summaries import (
    NoiseModel,
    accumulate_fisher,
    accumulate_pullback,
    load_family_csv,
    load_summary,
    restrict,
    summary_to_dict,
)

__all__ = ["main", "RunConfig"]


@dataclass
class RunConfig:
    seed: int = 0
    eps_reg: float = 1e-4
    eps_spd: float = 1e-6
    threads: int = 1
    chunk_size: int = 64
    out_dir: str = "."

    def __post_init__(self):
        if self.eps_reg <= 0 or self.eps_spd <= 0:
            raise ValueError("eps_reg and eps_spd must be positive")
        if self.threads < 1 or self.chunk_size < 1:
            raise ValueError("threads and chunk_size must be >= 1")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _provenance(config: RunConfig, inputs: dict, extra_config: dict | None = None) -> dict:
    cfg = asdict(config)
    # execution details that cannot change results stay out of provenance,
    # so reruns with a different --threads or --out are byte-identical
    cfg.pop("threads")
    cfg.pop("out_dir")
    if extra_config:
        cfg.update(extra_config)
    return {
        "seed": config.seed,
        "config": cfg,
        "inputs": {name: f"sha256:{_sha256(path)}" for name, path in sorted(inputs.items())},
    }


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_matrix_csv(path, values) -> None:
    with open(path, "w") as fh:
        for row in np.asarray(values, dtype=float):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _load_family(args):
    family = load_family_csv(args.family, family_id=os.path.basename(args.family))
    if getattr(args, "k", None):
        family = restrict(family, args.k)
    return family


def _config_from(args) -> RunConfig:
    return RunConfig(
        seed=args.seed,
        eps_reg=args.eps_reg,
        eps_spd=args.eps_spd,
        threads=args.threads,
        chunk_size=args.chunk_size,
        out_dir=args.out,
    )


def _ensure_out(config: RunConfig) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    return config.out_dir


# ---------------------------------------------------------------- summarize


def cmd_summarize(args) -> int:
    config = _config_from(args)
    out_dir = _ensure_out(config)
    model = load_model(args.model)
    x, labels = load_dataset(args.data)
    family = _load_family(args)
    if args.class_label is not None:
        if labels is None:
            raise ValueError("--class-label given but the dataset has no label column")
        x = x[labels == args.class_label]
    kwargs = dict(
        layer_index=args.layer,
        chunk_size=config.chunk_size,
        threads=config.threads,
        class_label=args.class_label,
    )
    if args.fisher_sigma is not None:
        summary = accumulate_fisher(
            model, x, family, NoiseModel.isotropic(args.fisher_sigma), **kwargs
        )
    elif args.fisher_cov is not None:
        with open(args.fisher_cov) as fh:
            cov = np.asarray(json.load(fh)["entries"], dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(int(math.isqrt(cov.size)), -1)
        summary = accumulate_fisher(model, x, family, NoiseModel.full(cov), **kwargs)
    else:
        summary = accumulate_pullback(model, x, family, **kwargs)
    inputs = {"model": args.model, "data": args.data, "family": args.family}
    payload = summary_to_dict(summary)
    payload["provenance"] = _provenance(
        config, inputs, {"layer": args.layer, "class_label": args.class_label}
    )
    _write_json(os.path.join(out_dir, "summary.json"), payload)
    print(f"wrote {os.path.join(out_dir, 'summary.json')} (k={summary.k}, n={summary.n_samples})")
    return 0


# ------------------------------------------------------------------ compare


def cmd_compare(args) -> int:
    config = _config_from(args)
    out_dir = _ensure_out(config)
    sum_a = load_summary(args.a)
    sum_b = load_summary(args.b)
    warning = None
    if sum_a.family_id != sum_b.family_id:
        warning = (
            f"family mismatch: {sum_a.family_id!r} vs {sum_b.family_id!r}; "
            "scores are only meaningful within one perturbation family"
        )
        print(f"WARNING: {warning}", file=sys.stderr)
    cert = sras_score(
        spd_lift(sum_a.operator, config.eps_reg),
        spd_lift(sum_b.operator, config.eps_reg),
    )
    payload = cert.to_dict()
    payload.update(
        {
            "bounds_factor_lower": math.exp(-cert.airm_distance),
            "bounds_factor_upper": math.exp(cert.airm_distance),
            "family_ids": [sum_a.family_id, sum_b.family_id],
            "warning": warning,
            "provenance": _provenance(config, {"a": args.a, "b": args.b}),
        }
    )
    _write_json(os.path.join(out_dir, "certificate.json"), payload)
    print(f"S-RAS = {cert.sras:.6f} (d_AIRM = {cert.airm_distance:.6f}, k = {cert.family_dim})")
    return 0


# ------------------------------------------------------------------- probes


def _class_summary(model, x, labels, family, label, layer, config):
    mask = labels == label
    if not np.any(mask):
        raise ValueError(f"no samples with label {label}")
    return accumulate_pullback(
        model,
        x[mask],
        family,
        layer_index=layer,
        chunk_size=config.chunk_size,
        threads=config.threads,
        class_label=label,
    )


def cmd_probes(args) -> int:
    config = _config_from(args)
    out_dir = _ensure_out(config)
    models_a = [load_model(p) for p in args.group_a]
    models_b = [load_model(p) for p in args.group_b]
    x, labels = load_dataset(args.data)
    if labels is None:
        raise ValueError("probes need a labeled dataset")
    family = _load_family(args)
    label = args.class_label
    layer = args.layer

    sums_a = [_class_summary(m, x, labels, family, label, layer, config) for m in models_a]
    sums_b = [_class_summary(m, x, labels, family, label, layer, config) for m in models_b]
    contrast = pr.group_contrast(sums_a, sums_b, shape_only=args.shape_only)
    amplitudes = tuple(args.amplitudes)
    probe_sets = {
        "contrast": pr.top_contrast_directions(contrast, args.r_per_side, amplitudes)
    }
    pooled = sum(s.operator for s in sums_a + sums_b) / len(sums_a + sums_b)
    for kind in args.controls:
        if kind == "permuted":
            perm_a, perm_b = pr.permute_group_assignment(sums_a, sums_b, config.seed)
            perm_contrast = pr.group_contrast(perm_a, perm_b, shape_only=args.shape_only)
            probe_sets[kind] = pr.control_probes(
                perm_contrast, pooled, "permuted",
                r_per_side=args.r_per_side, amplitudes=amplitudes,
            )
        else:
            probe_sets[kind] = pr.control_probes(
                contrast, pooled, kind, seed=config.seed,
                r_per_side=args.r_per_side, amplitudes=amplitudes,
            )

    for kind, probes in probe_sets.items():
        pr.save_probe_set(probes, os.path.join(out_dir, f"probes_{kind}.json"))

    # scoring: clean-correct (model, image) pairs on the target class
    image_idx = np.flatnonzero(labels == label)
    all_models = [(f"a{i}", m) for i, m in enumerate(models_a)] + [
        (f"b{i}", m) for i, m in enumerate(models_b)
    ]
    group_of = {mid: mid[0] for mid, _ in all_models}
    valid_images = []
    correct = {}
    for img in image_idx:
        per_group = {"a": 0, "b": 0}
        for mid, model in all_models:
            ok = model.classifier and model.margin(x[img], label) > 0
            correct[(mid, img)] = ok
            if ok:
                per_group[group_of[mid]] += 1
        if min(per_group.values()) >= args.min_valid_per_group:
            valid_images.append(img)

    rows = []
    kind_scores: dict[str, list] = {k: [] for k in probe_sets}
    for kind, probes in sorted(probe_sets.items()):
        for mid, model in all_models:
            for img in valid_images:
                if not correct[(mid, img)]:
                    continue
                s = pr.probe_score(model, x[img], label, probes, family)
                rows.append((mid, int(img), label, kind, s))
                kind_scores[kind].append(s)
    with open(os.path.join(out_dir, "scores.csv"), "w") as fh:
        fh.write("model_id,image_id,class,probe_kind,score\n")
        for mid, img, cls, kind, s in rows:
            fh.write(f"{mid},{img},{cls},{kind},{repr(float(s))}\n")

    report = {
        "class_label": label,
        "n_images": len(valid_images),
        "empty_cell": len(valid_images) == 0,
        "probe_kinds": sorted(probe_sets),
        "mean_scores": {
            kind: (float(np.mean(v)) if v else None) for kind, v in kind_scores.items()
        },
        "provenance": _provenance(
            config,
            {
                "data": args.data,
                "family": args.family,
                **{f"group_a_{i}": p for i, p in enumerate(args.group_a)},
                **{f"group_b_{i}": p for i, p in enumerate(args.group_b)},
            },
            {"r_per_side": args.r_per_side, "amplitudes": list(amplitudes)},
        ),
    }
    _write_json(os.path.join(out_dir, "probe_report.json"), report)
    if not valid_images:
        print("no valid evaluation images; wrote empty-cell marker")
    else:
        means = ", ".join(f"{k}={v:.4f}" for k, v in sorted(report["mean_scores"].items()))
        print(f"probe scores over {len(valid_images)} images: {means}")
    return 0


# ------------------------------------------------------------- match-layers


def cmd_match_layers(args) -> int:
    config = _config_from(args)
    out_dir = _ensure_out(config)
    bank = [load_model(p) for p in args.bank]
    ids = [os.path.splitext(os.path.basename(p))[0] for p in args.bank]
    x, _ = load_dataset(args.data)
    family = _load_family(args) if args.family else None
    pairs, averaged = layer_similarity_matrix(
        bank,
        layers=args.layers,
        comparator=args.comparator,
        dataset=x,
        family=family,
        model_ids=ids,
        eps_reg=config.eps_reg,
        threads=config.threads,
    )
    for (a, b), mat in sorted(pairs.items()):
        _write_matrix_csv(os.path.join(out_dir, f"pair_{a}_{b}.csv"), mat.values)
    _write_matrix_csv(os.path.join(out_dir, "averaged.csv"), averaged.values)
    report = build_layer_report(pairs, averaged)
    with open(os.path.join(out_dir, "decay.csv"), "w") as fh:
        fh.write("offset,similarity\n")
        for delta, value in enumerate(report.decay):
            fh.write(f"{delta},{repr(float(value))}\n")
    inputs = {"data": args.data}
    if args.family:
        inputs["family"] = args.family
    inputs.update({f"model_{i}": p for i, p in enumerate(args.bank)})
    payload = report.to_dict()
    payload["comparator"] = args.comparator
    payload["layers"] = list(args.layers)
    payload["provenance"] = _provenance(config, inputs, {"comparator": args.comparator})
    _write_json(os.path.join(out_dir, "report.json"), payload)
    print(
        f"accuracy = {report.accuracy_percent:.2f}% over {len(pairs)} pairs "
        f"(margin {report.top1_margin:.4f}, AUC {report.diag_auc:.4f})"
    )
    return 0


# -------------------------------------------------------------- grid-fisher


def cmd_grid_fisher(args) -> int:
    config = _config_from(args)
    out_dir = _ensure_out(config)
    records = gf.load_trials_csv(args.trials)
    grid = gf.load_grid(args.grid)
    subset = [q.strip() for q in args.family.split(",") if q.strip()]
    reliability_repeats = args.reliability_repeats
    if reliability_repeats is None:
        reliability_repeats = 2 if args.match else 8

    operators = []
    excluded = []
    reliability = {}
    for rec in records:
        try:
            if args.match:
                summary = gf.matched_subsample_operators(
                    rec,
                    grid,
                    args.mode,
                    n_match=args.match,
                    n_subsamples=args.subsamples,
                    seed=config.seed,
                    eps_spd=config.eps_spd,
                )
            else:
                summary = gf.experiment_operators(
                    rec, grid, args.mode, eps_spd=config.eps_spd
                )
        except gf.InsufficientData as err:
            excluded.append({"experiment_id": rec.experiment_id, "reason": str(err)})
            continue
        restricted = gf.family_restriction(summary, subset, shape_only=args.shape_only)
        operators.append((rec, restricted))
        try:
            reliability[rec.experiment_id] = gf.split_half_reliability(
                rec,
                grid,
                mode=args.mode,
                n_repeats=reliability_repeats,
                seed=config.seed,
                eps_spd=config.eps_spd,
                eps_reg=config.eps_reg,
            )
        except gf.InsufficientData:
            reliability[rec.experiment_id] = None

    inputs = {"trials": args.trials, "grid": args.grid}
    for rec, summary in operators:
        payload = summary_to_dict(summary)
        payload["experiment_id"] = rec.experiment_id
        payload["donor_id"] = rec.donor_id
        payload["label"] = rec.label
        payload["provenance"] = _provenance(config, inputs, {"mode": args.mode})
        _write_json(os.path.join(out_dir, f"operator_{rec.experiment_id}.json"), payload)

    retrieval_records = [
        (rec.experiment_id, rec.donor_id, rec.label, summary.operator)
        for rec, summary in operators
    ]
    report_payload = {
        "mode": args.mode,
        "family": subset,
        "shape_only": args.shape_only,
        "n_experiments": len(operators),
        "excluded": excluded,
        "reliability": reliability,
        "provenance": _provenance(
            config,
            inputs,
            {"mode": args.mode, "family": subset, "match": args.match},
        ),
    }
    if len({donor for _, donor, _, _ in retrieval_records}) >= 2:
        report = donor_distinct_top1(
            retrieval_records, sras_operator_comparator(config.eps_reg)
        )
        report_payload["retrieval"] = report.to_dict()
        print(
            f"donor-distinct top-1 accuracy = {report.top1_accuracy:.3f} "
            f"over {report.n_queries} queries (chance {report.chance:.3f})"
        )
    else:
        report_payload["retrieval"] = None
        print("fewer than 2 donors; retrieval skipped")
    _write_json(os.path.join(out_dir, "grid_fisher_report.json"), report_payload)
    return 0


# -------------------------------------------------------------------- main


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="RNG seed recorded in outputs")
    parser.add_argument("--eps-reg", type=float, default=1e-4, help="SPD lift epsilon")
    parser.add_argument(
        "--eps-spd", type=float, default=1e-6, help="covariance floor epsilon"
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("SRAS_THREADS", "1")),
        help="worker thread cap (results are identical for any value)",
    )
    parser.add_argument("--chunk-size", type=int, default=64, help="accumulation chunk size")
    parser.add_argument(
        "--out",
        default=os.environ.get("SRAS_OUT_DIR", "."),
        help="output directory",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sras",
        description="Sensitivity summaries of representation maps and their SPD comparison",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", help="estimate a pullback/Fisher summary")
    _add_common(p)
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--data", required=True, help="dataset CSV file")
    p.add_argument("--family", required=True, help="family CSV (d rows x k columns)")
    p.add_argument("--k", type=int, default=None, help="restrict family to leading k columns")
    p.add_argument("--layer", type=int, default=None, help="layer index (default: final)")
    p.add_argument("--class-label", type=int, default=None, help="restrict to one class")
    p.add_argument("--fisher-sigma", type=float, default=None, help="isotropic noise sigma")
    p.add_argument("--fisher-cov", default=None, help="full noise covariance JSON")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("compare", help="S-RAS certificate between two summaries")
    _add_common(p)
    p.add_argument("--a", required=True, help="summary JSON A")
    p.add_argument("--b", required=True, help="summary JSON B")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("probes", help="contrast probes between two model groups")
    _add_common(p)
    p.add_argument("--group-a", nargs="+", required=True, help="group A model JSONs")
    p.add_argument("--group-b", nargs="+", required=True, help="group B model JSONs")
    p.add_argument("--data", required=True, help="labeled dataset CSV")
    p.add_argument("--family", required=True, help="family CSV")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--class-label", type=int, required=True)
    p.add_argument("--r-per-side", type=int, default=2)
    p.add_argument("--amplitudes", type=float, nargs="+", default=[0.5, 1.0])
    p.add_argument("--shape-only", action="store_true")
    p.add_argument(
        "--controls",
        nargs="*",
        default=["random", "pooled", "permuted"],
        choices=["random", "pooled", "permuted"],
    )
    p.add_argument(
        "--min-valid-per-group",
        type=int,
        default=1,
        help="images need this many clean-correct models per group",
    )
    p.set_defaults(func=cmd_probes)

    p = sub.add_parser("match-layers", help="layer-identification harness")
    _add_common(p)
    p.add_argument("--bank", nargs="+", required=True, help="model JSON files (>= 2)")
    p.add_argument("--layers", type=int, nargs="+", required=True)
    p.add_argument(
        "--comparator",
        required=True,
        choices=["sras", "cka-lin", "cka-rbf", "procrustes", "cca", "pw-airm", "msa"],
    )
    p.add_argument("--data", required=True)
    p.add_argument("--family", default=None, help="family CSV (required for sras/pw-airm/msa)")
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=cmd_match_layers)

    p = sub.add_parser("grid-fisher", help="condition-grid Fisher retrieval")
    _add_common(p)
    p.add_argument("--trials", required=True, help="trials CSV")
    p.add_argument("--grid", required=True, help="grid JSON")
    p.add_argument("--mode", choices=["fisher", "naive"], default="fisher")
    p.add_argument(
        "--family",
        default="theta,rho,phi",
        help="comma-separated axis subset, e.g. theta,phi",
    )
    p.add_argument("--shape-only", action="store_true")
    p.add_argument("--match", type=int, default=None, help="matched cell count")
    p.add_argument("--subsamples", type=int, default=100)
    p.add_argument(
        "--reliability-repeats",
        type=int,
        default=None,
        help="split-half repeats (default: 2 matched, 8 full population)",
    )
    p.set_defaults(func=cmd_grid_fisher)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except (NoConvergence, SingularLinearization) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # internal failure
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
