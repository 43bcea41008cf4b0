import json
import math
import os

import numpy as np
import pytest

from sraskit.cli import main
from sraskit.gridfisher import default_grid, make_population, save_grid, save_trials_csv
from sraskit.repmap import LayerSpec, RepMap, save_dataset, save_model
from sraskit.summaries import make_random_family, save_family_csv


def write_linear_model(path, w, classifier=False):
    w = np.asarray(w, dtype=float)
    model = RepMap(
        [LayerSpec.dense(w, np.zeros(w.shape[0]))],
        input_dim=w.shape[1],
        classifier=classifier,
    )
    save_model(model, path)
    return model


def write_identity_family(path, d):
    fam = make_random_family(d, d, seed=0)
    # overwrite with the exact identity for closed-form checks
    with open(path, "w") as fh:
        for row in np.eye(d):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return fam


def read_tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            full = os.path.join(dirpath, name)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, root)] = fh.read()
    return out


# ---------------------------------------------------------------- summarize


def test_summarize_linear_closed_form(tmp_path):
    w = np.array([[1.0, 2.0], [0.0, 3.0]])
    model_path = tmp_path / "model.json"
    write_linear_model(model_path, w)
    data_path = tmp_path / "data.csv"
    save_dataset(data_path, np.random.default_rng(0).normal(size=(4, 2)))
    fam_path = tmp_path / "fam.csv"
    write_identity_family(fam_path, 2)
    out = tmp_path / "out"
    code = main(
        [
            "summarize",
            "--model", str(model_path),
            "--data", str(data_path),
            "--family", str(fam_path),
            "--out", str(out),
        ]
    )
    assert code == 0
    payload = json.loads((out / "summary.json").read_text())
    assert np.allclose(payload["operator"], w.T @ w, atol=1e-12)
    assert payload["kind"] == "G"
    assert "provenance" in payload
    assert set(payload["provenance"]["inputs"]) == {"model", "data", "family"}


def test_summarize_empty_dataset_exit_2(tmp_path, capsys):
    model_path = tmp_path / "model.json"
    write_linear_model(model_path, np.eye(2))
    data_path = tmp_path / "data.csv"
    data_path.write_text("x0,x1\n")
    fam_path = tmp_path / "fam.csv"
    write_identity_family(fam_path, 2)
    code = main(
        [
            "summarize",
            "--model", str(model_path),
            "--data", str(data_path),
            "--family", str(fam_path),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == 2
    assert "EmptyDataset" in capsys.readouterr().err


def test_summarize_rerun_byte_identical(tmp_path):
    rng = np.random.default_rng(1)
    model_path = tmp_path / "model.json"
    write_linear_model(model_path, rng.normal(size=(3, 3)))
    data_path = tmp_path / "data.csv"
    save_dataset(data_path, rng.normal(size=(10, 3)))
    fam_path = tmp_path / "fam.csv"
    save_family_csv(make_random_family(3, 2, seed=4), fam_path)
    outs = []
    for run, threads in (("r1", "1"), ("r2", "4")):
        out = tmp_path / run
        code = main(
            [
                "summarize",
                "--model", str(model_path),
                "--data", str(data_path),
                "--family", str(fam_path),
                "--threads", threads,
                "--out", str(out),
            ]
        )
        assert code == 0
        outs.append(read_tree(out))
    assert outs[0] == outs[1]


# ------------------------------------------------------------------ compare


def run_summarize(tmp_path, name, w, data, fam_path):
    model_path = tmp_path / f"{name}_model.json"
    write_linear_model(model_path, w)
    data_path = tmp_path / f"{name}_data.csv"
    save_dataset(data_path, data)
    out = tmp_path / f"{name}_out"
    assert (
        main(
            [
                "summarize",
                "--model", str(model_path),
                "--data", str(data_path),
                "--family", str(fam_path),
                "--out", str(out),
            ]
        )
        == 0
    )
    return out / "summary.json"


def test_compare_identical_summaries(tmp_path):
    rng = np.random.default_rng(2)
    fam_path = tmp_path / "fam.csv"
    write_identity_family(fam_path, 2)
    a = run_summarize(tmp_path, "a", np.diag([1.0, 2.0]), rng.normal(size=(3, 2)), fam_path)
    out = tmp_path / "cmp"
    code = main(["compare", "--a", str(a), "--b", str(a), "--out", str(out)])
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["sras"] == pytest.approx(1.0)
    assert cert["bounds_factor_lower"] == pytest.approx(1.0)
    assert cert["bounds_factor_upper"] == pytest.approx(1.0)
    assert cert["warning"] is None


def test_compare_scalar_example(tmp_path):
    rng = np.random.default_rng(3)
    fam_path = tmp_path / "fam.csv"
    write_identity_family(fam_path, 1)
    a = run_summarize(tmp_path, "a", np.array([[1.0]]), rng.normal(size=(3, 1)), fam_path)
    b = run_summarize(tmp_path, "b", np.array([[math.e]]), rng.normal(size=(3, 1)), fam_path)
    out = tmp_path / "cmp"
    code = main(["compare", "--a", str(a), "--b", str(b), "--out", str(out)])
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    # operators are 1 and e^2: lift preserves the ratio, d = 2
    assert cert["airm_distance"] == pytest.approx(2.0, abs=1e-12)
    assert cert["sras"] == pytest.approx(math.exp(-2.0), abs=1e-12)


def test_compare_family_mismatch_warns(tmp_path, capsys):
    rng = np.random.default_rng(4)
    fam1 = tmp_path / "fam1.csv"
    save_family_csv(make_random_family(2, 2, seed=1), fam1)
    fam2 = tmp_path / "fam2.csv"
    save_family_csv(make_random_family(2, 2, seed=2), fam2)
    a = run_summarize(tmp_path, "a", np.diag([1.0, 2.0]), rng.normal(size=(3, 2)), fam1)
    b = run_summarize(tmp_path, "b", np.diag([2.0, 1.0]), rng.normal(size=(3, 2)), fam2)
    out = tmp_path / "cmp"
    code = main(["compare", "--a", str(a), "--b", str(b), "--out", str(out)])
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["warning"] is not None and "family mismatch" in cert["warning"]
    assert "family mismatch" in capsys.readouterr().err


# ------------------------------------------------------------- match-layers


def make_bank(tmp_path, rng, n_models=2, dims=(3, 4, 4)):
    paths = []
    for i in range(n_models):
        layers = []
        for a, b in zip(dims, dims[1:]):
            layers.append(LayerSpec.dense(rng.normal(size=(b, a)) / np.sqrt(a), np.zeros(b)))
            layers.append(LayerSpec.activation("tanh"))
        path = tmp_path / f"model{i}.json"
        save_model(RepMap(layers, input_dim=dims[0]), path)
        paths.append(str(path))
    return paths


def test_match_layers_smoke(tmp_path):
    rng = np.random.default_rng(5)
    bank = make_bank(tmp_path, rng)
    data_path = tmp_path / "data.csv"
    save_dataset(data_path, rng.normal(size=(8, 3)))
    fam_path = tmp_path / "fam.csv"
    save_family_csv(make_random_family(3, 2, seed=3), fam_path)
    out = tmp_path / "out"
    code = main(
        [
            "match-layers",
            "--bank", *bank,
            "--layers", "2", "4",
            "--comparator", "sras",
            "--data", str(data_path),
            "--family", str(fam_path),
            "--out", str(out),
        ]
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert "accuracy_percent" in report
    assert len(report["decay"]) == 2
    assert (out / "averaged.csv").exists()
    assert (out / "pair_model0_model1.csv").exists()
    assert (out / "decay.csv").read_text().startswith("offset,similarity")


# ------------------------------------------------------------------- probes


def make_classifier(rng, d, n_classes, boost_axis=None, boost=0.0):
    w1 = rng.normal(size=(6, d)) / np.sqrt(d)
    if boost_axis is not None:
        w1[:, boost_axis] *= 1.0 + boost
    w2 = rng.normal(size=(n_classes, 6)) / np.sqrt(6)
    layers = [
        LayerSpec.dense(w1, np.zeros(6)),
        LayerSpec.activation("tanh"),
        LayerSpec.dense(w2, np.zeros(n_classes)),
    ]
    return RepMap(layers, input_dim=d, classifier=True)


def test_probes_smoke(tmp_path):
    rng = np.random.default_rng(6)
    d = 4
    paths_a, paths_b = [], []
    for i in range(2):
        pa = tmp_path / f"a{i}.json"
        save_model(make_classifier(rng, d, 3, boost_axis=0, boost=1.5), pa)
        paths_a.append(str(pa))
        pb = tmp_path / f"b{i}.json"
        save_model(make_classifier(rng, d, 3, boost_axis=1, boost=1.5), pb)
        paths_b.append(str(pb))
    x = rng.normal(size=(30, d))
    labels = rng.integers(0, 3, size=30)
    data_path = tmp_path / "data.csv"
    save_dataset(data_path, x, labels)
    fam_path = tmp_path / "fam.csv"
    save_family_csv(make_random_family(d, 3, seed=9), fam_path)
    out = tmp_path / "out"
    code = main(
        [
            "probes",
            "--group-a", *paths_a,
            "--group-b", *paths_b,
            "--data", str(data_path),
            "--family", str(fam_path),
            "--class-label", "1",
            "--r-per-side", "1",
            "--out", str(out),
        ]
    )
    assert code == 0
    report = json.loads((out / "probe_report.json").read_text())
    assert set(report["probe_kinds"]) == {"contrast", "random", "pooled", "permuted"}
    assert (out / "probes_contrast.json").exists()
    scores = (out / "scores.csv").read_text().splitlines()
    assert scores[0] == "model_id,image_id,class,probe_kind,score"
    if not report["empty_cell"]:
        assert len(scores) > 1


# -------------------------------------------------------------- grid-fisher


def test_grid_fisher_smoke(tmp_path):
    grid = default_grid(n_theta=4, n_rho=3, n_phi=3)
    grid_path = tmp_path / "grid.json"
    save_grid(grid, grid_path)
    records = []
    for donor in range(2):
        for e in range(2):
            theta_w, phi_w = (2.0, 0.1) if donor == 0 else (0.1, 2.0)
            gen = make_population(
                6, seed=10 * donor + e, grid=grid,
                theta_weight=theta_w, phi_weight=phi_w, noise_sigma=0.1,
            )
            records.append(
                gen.sample_record(
                    grid, trials_per_condition=6, seed=100 + 10 * donor + e,
                    experiment_id=f"d{donor}e{e}", donor_id=f"d{donor}",
                    label="A" if donor == 0 else "B",
                )
            )
    trials_path = tmp_path / "trials.csv"
    save_trials_csv(records, trials_path)
    out = tmp_path / "out"
    code = main(
        [
            "grid-fisher",
            "--trials", str(trials_path),
            "--grid", str(grid_path),
            "--mode", "fisher",
            "--family", "theta,phi",
            "--out", str(out),
        ]
    )
    assert code == 0
    report = json.loads((out / "grid_fisher_report.json").read_text())
    assert report["retrieval"] is not None
    assert 0.0 <= report["retrieval"]["top1_accuracy"] <= 1.0
    assert report["n_experiments"] == 4
    op = json.loads((out / "operator_d0e0.json").read_text())
    assert op["k"] == 2 and op["kind"] == "F"
    assert all(v is None or 0 < v <= 1 for v in report["reliability"].values())


def test_grid_fisher_match_excludes_small_experiments(tmp_path):
    grid = default_grid(n_theta=4, n_rho=3, n_phi=3)
    grid_path = tmp_path / "grid.json"
    save_grid(grid, grid_path)
    gen_big = make_population(8, seed=1, grid=grid, noise_sigma=0.1)
    gen_small = make_population(3, seed=2, grid=grid, noise_sigma=0.1)
    records = [
        gen_big.sample_record(grid, 4, seed=3, experiment_id="big", donor_id="d0"),
        gen_small.sample_record(grid, 4, seed=4, experiment_id="small", donor_id="d1"),
    ]
    trials_path = tmp_path / "trials.csv"
    save_trials_csv(records, trials_path)
    out = tmp_path / "out"
    code = main(
        [
            "grid-fisher",
            "--trials", str(trials_path),
            "--grid", str(grid_path),
            "--match", "5",
            "--subsamples", "2",
            "--out", str(out),
        ]
    )
    assert code == 0
    report = json.loads((out / "grid_fisher_report.json").read_text())
    assert [e["experiment_id"] for e in report["excluded"]] == ["small"]
    assert report["n_experiments"] == 1


# ------------------------------------------------------------------- errors


def test_help_documents_flags():
    import contextlib
    import io as _io

    from sraskit.cli import build_parser

    text = build_parser().format_help()
    assert "summarize" in text and "grid-fisher" in text
    # subcommand help mentions the shared flags
    buf = _io.StringIO()
    with contextlib.redirect_stdout(buf), pytest.raises(SystemExit) as exc:
        main(["match-layers", "--help"])
    assert exc.value.code == 0
    help_text = buf.getvalue()
    for flag in ("--seed", "--eps-reg", "--threads", "--comparator", "--out"):
        assert flag in help_text


def test_missing_file_exit_2(tmp_path, capsys):
    code = main(
        [
            "compare",
            "--a", str(tmp_path / "nope.json"),
            "--b", str(tmp_path / "nope.json"),
            "--out", str(tmp_path),
        ]
    )
    assert code == 2
    assert "error:" in capsys.readouterr().err
