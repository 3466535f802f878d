import json

import numpy as np
import pytest

from illum_align.cli import main
from illum_align.geometry import save_depth
from illum_align.imagecore import load_image


def test_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as excinfo:
        main(["run", "--method", "blur"])
    assert excinfo.value.code == 2


def test_missing_subcommand_exit_2():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == 2


def test_synth_then_run_json_and_csv(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert main(["synth", "--count", "4", "--size", "32", "--seed", "42",
                 "--out", str(corpus)]) == 0
    report = tmp_path / "out.json"
    code = main([
        "run", "--dataset", str(corpus), "--method", "pan",
        "--metrics", "psnr,ssim,rmse,residual",
        "--report", str(report), "--format", "json",
    ])
    assert code == 0
    payload = json.loads(report.read_text())
    assert payload["meta"]["method"] == "pan"
    assert len(payload["pairs"]) == 4
    assert "residual" in payload["aggregates"]
    out = capsys.readouterr().out
    assert "4 pairs evaluated" in out

    csv_report = tmp_path / "out.csv"
    assert main([
        "run", "--dataset", str(corpus), "--method", "identity",
        "--metrics", "residual", "--report", str(csv_report), "--format", "csv",
    ]) == 0
    lines = csv_report.read_text().splitlines()
    assert lines[0] == "id,method,psnr,ssim,rmse,residual"
    assert len(lines) == 1 + 4 + 1


def test_runs_are_byte_identical(tmp_path):
    corpus = tmp_path / "corpus"
    main(["synth", "--count", "3", "--size", "32", "--out", str(corpus)])
    outputs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        assert main(["run", "--dataset", str(corpus), "--method", "pan",
                     "--report", str(path), "--format", "json"]) == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]


def test_jobs_env_override_keeps_results(tmp_path, monkeypatch):
    corpus = tmp_path / "corpus"
    main(["synth", "--count", "3", "--size", "32", "--out", str(corpus)])
    serial = tmp_path / "serial.csv"
    main(["run", "--dataset", str(corpus), "--method", "grayworld",
          "--report", str(serial), "--format", "csv"])
    monkeypatch.setenv("ILLUM_ALIGN_JOBS", "4")
    threaded = tmp_path / "threaded.csv"
    main(["run", "--dataset", str(corpus), "--method", "grayworld",
          "--report", str(threaded), "--format", "csv"])
    assert serial.read_bytes() == threaded.read_bytes()


def test_run_on_missing_dataset_exit_1(tmp_path, capsys):
    code = main(["run", "--dataset", str(tmp_path / "nope"),
                 "--report", str(tmp_path / "r.json")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_no_normalize_reference_flag(tmp_path):
    corpus = tmp_path / "corpus"
    main(["synth", "--count", "2", "--size", "32", "--out", str(corpus)])
    on = tmp_path / "on.json"
    off = tmp_path / "off.json"
    main(["run", "--dataset", str(corpus), "--method", "pan", "--metrics",
          "residual", "--report", str(on), "--format", "json"])
    main(["run", "--dataset", str(corpus), "--method", "pan", "--metrics",
          "residual", "--report", str(off), "--format", "json",
          "--no-normalize-reference"])
    res_on = json.loads(on.read_text())["aggregates"]["residual"]
    res_off = json.loads(off.read_text())["aggregates"]["residual"]
    assert res_on != res_off


def test_gsra_check_passes(capsys):
    assert main(["gsra-check", "--seed", "7", "--tokens", "4", "--dim", "8",
                 "--trials", "3"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "FAIL" not in out


def test_depth2normal(tmp_path, capsys):
    depth = np.full((24, 32), 0.5)
    depth_path = tmp_path / "depth.png"
    save_depth(depth, depth_path)
    normal_path = tmp_path / "normal.png"
    assert main(["depth2normal", "--fov", "60", "--in", str(depth_path),
                 "--out", str(normal_path)]) == 0
    encoded = load_image(normal_path)
    # constant plane: interior normals (0, 0, -1) encode to (0.5, 0.5, 0)
    interior = encoded[1:-1, 1:-1]
    expected = np.array([0.5, 0.5, 0.0])
    assert np.abs(interior - expected).max() <= 1.0 / 255 + 1e-9
