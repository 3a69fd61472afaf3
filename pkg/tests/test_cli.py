import csv
import json
import math

import numpy as np
import pytest

from dopplervfm.cli import CSV_HEADER, main
from dopplervfm.io import read_frame, read_solution
from dopplervfm.mlp import mlp_init, save_weights


@pytest.fixture
def frames_dir(tmp_path):
    out = tmp_path / "frames"
    assert main(["generate", "--frames", "3", "--grid", "12x20", "--snr", "inf", "--seed", "1", "--out", str(out)]) == 0
    return out


def test_generate_writes_frames_with_ground_truth(frames_dir):
    files = sorted(frames_dir.glob("*.json"))
    assert [f.name for f in files] == ["frame_0000.json", "frame_0001.json", "frame_0002.json"]
    fr = read_frame(files[1])
    assert fr.reference is not None
    assert np.array_equal(fr.v_d[fr.mask], fr.reference.v_r[fr.mask])
    assert fr.provenance["frame_index"] == 1


def test_generate_is_byte_identical(tmp_path):
    args = ["generate", "--frames", "2", "--grid", "8x10", "--snr", "20", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("frame_0000.json", "frame_0001.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_falls_back_to_environment(tmp_path, monkeypatch):
    args = ["generate", "--frames", "1", "--grid", "8x10", "--snr", "20"]
    monkeypatch.setenv("VFM_SEED", "5")
    assert main(args + ["--out", str(tmp_path / "env")]) == 0
    assert main(args + ["--seed", "5", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "env" / "frame_0000.json").read_bytes() == (tmp_path / "flag" / "frame_0000.json").read_bytes()
    monkeypatch.setenv("VFM_SEED", "abc")
    assert main(args + ["--out", str(tmp_path / "bad")]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["generate", "--grid", "3x3", "--out", "x"],
        ["generate", "--frames", "0", "--out", "{tmp}/x"],
        ["reconstruct", "{tmp}/f.json", "--method", "magic", "--out", "x"],
        ["reconstruct", "{tmp}/f.json", "--method", "ivfm", "--lambda-s", "-1", "--out", "x"],
        ["reconstruct", "{tmp}/f.json", "--method", "ivfm", "--jobs", "0", "--out", "x"],
        ["experiment", "--id", "timing", "--methods", "", "--frames", "{tmp}/f.json", "--out", "x"],
        ["experiment", "--id", "nope", "--frames", "x", "--out", "x"],
        ["degrade", "{tmp}/f.json", "--mode", "truncate", "--pct", "100", "--out", "{tmp}/d"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    argv = [a.replace("{tmp}", str(tmp_path)) for a in argv]
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 2


def test_degrade_modes(frames_dir, tmp_path):
    out = tmp_path / "sparse"
    src = str(frames_dir / "frame_0000.json")
    assert main(["degrade", src, "--mode", "sparse_deterministic", "--m", "10", "--n", "9", "--out", str(out)]) == 0
    fr = read_frame(out / "frame_0000.json")
    assert fr.provenance["degrade"][0] == {"mode": "sparse_deterministic", "m": 10, "n": 9, "pct": 0.0, "seed": 0}
    assert fr.valid.any(axis=0).sum() == 2
    out2 = tmp_path / "passthrough"
    assert main(["degrade", src, "--mode", "sparse_random", "--m", "10", "--n", "0", "--out", str(out2)]) == 0
    assert np.array_equal(read_frame(out2 / "frame_0000.json").valid, read_frame(src).valid)


def test_malformed_frame_is_runtime_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format_version": 1}')
    assert main(["degrade", str(bad), "--mode", "truncate", "--pct", "20", "--out", str(tmp_path / "o")]) == 1
    assert main(["reconstruct", str(tmp_path / "missing.json"), "--method", "ivfm", "--out", str(tmp_path / "o")]) == 1


def test_reconstruct_eval_round_trip(frames_dir, tmp_path):
    sols = tmp_path / "sols"
    assert main(["reconstruct", str(frames_dir / "*.json"), "--method", "ivfm", "--out", str(sols)]) == 0
    summary = json.loads((sols / "run_ivfm.summary").read_text())
    assert summary["n_frames"] == 3 and summary["failed"] == [] and len(summary["wall_clock_s"]) == 3
    sol = read_solution(sols / "frame_0001.ivfm.json")
    assert sol["diagnostics"]["constraint_residual"] < 1e-8
    out_csv, out_json = tmp_path / "m.csv", tmp_path / "m.json"
    assert main(["eval", "--solutions", str(sols / "frame_*.ivfm.json"), "--frames", str(frames_dir / "*.json"),
                 "--out-csv", str(out_csv), "--out-json", str(out_json)]) == 0
    rows = list(csv.reader(out_csv.open()))
    assert rows[0] == CSV_HEADER and len(rows) == 4
    assert all(r[1] == "ivfm" and float(r[2]) > 0.99 for r in rows[1:])
    report = json.loads(out_json.read_text())
    assert report["summary"][0]["method"] == "ivfm"


def test_eval_perfect_solution_and_common_region(frames_dir, tmp_path):
    from dopplervfm.io import write_solution

    fr = read_frame(frames_dir / "frame_0002.json")
    write_solution(tmp_path / "s.json", "frame_0002", "oracle", fr.reference, fr.grid, fr.mask, {})
    out_csv = tmp_path / "m.csv"
    for region in ("all", "common"):
        assert main(["eval", "--solutions", str(tmp_path / "s.json"), "--frames", str(frames_dir / "frame_0002.json"),
                     "--region", region, "--out-csv", str(out_csv)]) == 0
        row = list(csv.DictReader(out_csv.open()))[0]
        assert float(row["r2_vr"]) == pytest.approx(1.0, abs=1e-12) and float(row["nrmse_pct"]) == 0.0


def test_eval_missing_frame_lists_ids(frames_dir, tmp_path, capsys):
    from dopplervfm.io import write_solution

    fr = read_frame(frames_dir / "frame_0000.json")
    write_solution(tmp_path / "s.json", "frame_9999", "ivfm", fr.reference, fr.grid, fr.mask, {})
    code = main(["eval", "--solutions", str(tmp_path / "s.json"), "--frames", str(frames_dir / "*.json"),
                 "--out-csv", str(tmp_path / "m.csv")])
    assert code == 1
    assert "frame_9999" in capsys.readouterr().err


def test_reconstruct_is_independent_of_jobs(frames_dir, tmp_path):
    for jobs in ("1", "2"):
        assert main(["reconstruct", str(frames_dir / "*.json"), "--method", "rb-pinn", "--iters", "6",
                     "--jobs", jobs, "--out", str(tmp_path / f"j{jobs}")]) == 0
    for k in range(3):
        a = read_solution(tmp_path / "j1" / f"frame_000{k}.rb-pinn.json")["field"]
        b = read_solution(tmp_path / "j2" / f"frame_000{k}.rb-pinn.json")["field"]
        assert a.v_r.tobytes() == b.v_r.tobytes() and a.v_theta.tobytes() == b.v_theta.tobytes()


def test_pretrained_architecture_mismatch_is_usage_error(frames_dir, tmp_path):
    w = tmp_path / "w.bin"
    save_weights(mlp_init(0, (2, 5, 2)), w)
    code = main(["reconstruct", str(frames_dir / "frame_0000.json"), "--method", "al-pinn", "--pretrained", str(w),
                 "--iters", "4", "--out", str(tmp_path / "o")])
    assert code == 2


def test_pretrain_then_reconstruct_reports_stage_split(frames_dir, tmp_path):
    w = tmp_path / "w.bin"
    assert main(["pretrain", str(frames_dir / "frame_0001.json"), "--iters", "10", "--out", str(w)]) == 0
    assert main(["reconstruct", str(frames_dir / "frame_0000.json"), "--method", "rb-pinn", "--pretrained", str(w),
                 "--iters", "20", "--out", str(tmp_path / "o")]) == 0
    diag = read_solution(tmp_path / "o" / "frame_0000.rb-pinn.json")["diagnostics"]
    assert (diag["n_adamw"], diag["n_lbfgs"]) == (18, 2)
    assert len(diag["mu"]) == 3 and len(diag["loss_history"]) == 20


def test_plot_command(frames_dir, tmp_path):
    sols = tmp_path / "sols"
    main(["reconstruct", str(frames_dir / "frame_0000.json"), "--method", "ivfm", "--out", str(sols)])
    svg = tmp_path / "q.svg"
    assert main(["plot", str(sols / "frame_0000.ivfm.json"), "--out", str(svg), "--decimate", "2"]) == 0
    assert "frame_0000 (ivfm)" in svg.read_text()
    assert main(["plot", str(tmp_path / "nope.json"), "--out", str(svg)]) == 1


def test_experiment_truncation_and_timing(frames_dir, tmp_path):
    out = tmp_path / "exp"
    assert main(["experiment", "--id", "truncation", "--methods", "ivfm", "--frames", str(frames_dir / "*.json"),
                 "--out", str(out)]) == 0
    rows = json.loads((out / "truncation.json").read_text())
    assert [r["truncation_pct"] for r in rows] == [0, 20, 40, 50, 60, 70]
    assert (out / "truncation.csv").read_text().startswith("method,")
    assert main(["experiment", "--id", "timing", "--methods", "ivfm", "--frames", str(frames_dir / "*.json"),
                 "--out", str(out)]) == 0
    assert json.loads((out / "timing.json").read_text())[0]["n_frames"] == 3


def test_acceptance_command_subset(tmp_path):
    report = tmp_path / "r.json"
    assert main(["acceptance", "--only", "A4", "A10", "--report", str(report)]) == 0
    rows = json.loads(report.read_text())
    assert [r["criterion_id"] for r in rows] == ["A4", "A10"]
    assert all({"criterion_id", "required", "measured", "pass"} <= set(r) for r in rows)
