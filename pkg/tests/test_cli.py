import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from pmpmh.cli import EXIT_CONFIG, main, read_chain


def write_config(path, **sections):
    cfg = {"model": {"name": "gaussian-mixture-1"}, "output": {"directory": "out"}}
    cfg.update(sections)
    path.write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    return path


def small_run(tmp_path, name="cfg.json", out="out", **extra):
    sections = dict(
        data={"simulate": {"T": 30, "seed": 1}},
        sampler="pmpmh",
        pmpmh={"approach": 3, "N": 10, "span": 3.0, "block_size": 4},
        run={"iterations": 40, "chains": 2, "seed": 7, "thin": 4},
        output={"directory": out},
    )
    sections.update(extra)
    return write_config(tmp_path / name, **sections)


def test_run_writes_chains_summary_and_manifest(tmp_path):
    cfg = small_run(tmp_path)
    assert main(["--quiet", "run", str(cfg)]) == 0
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7 and len(manifest["config_hash"]) == 64
    assert {"numpy", "scipy", "python"} <= set(manifest["versions"])
    assert len(manifest["chains"]) == 2
    for entry in manifest["chains"]:
        frame = read_chain(out / entry["file"])
        assert len(frame) == 40
        assert list(frame.columns[:5]) == ["iteration", "p", "sigma2_eta1", "sigma2_eta2",
                                           "sigma2_eps"]
        kept = frame.dropna()
        assert list(kept["iteration"]) == list(range(4, 41, 4))
        assert entry["wall_time"] > 0
        assert all(0 <= r <= 1 for r in entry["acceptance_rates"].values())
    for f in ("summary.csv", "summary.txt", "data.csv", "data.json"):
        assert (out / f).exists()
    summary = pd.read_csv(out / "summary.csv", index_col=0)
    assert "p" in summary.index and "x30" in summary.index


def test_chain_files_round_trip_exactly(tmp_path):
    cfg = small_run(tmp_path)
    main(["--quiet", "run", str(cfg)])
    text = (tmp_path / "out" / "chain_0.csv").read_text()
    assert "\r" not in text
    frame = read_chain(tmp_path / "out" / "chain_0.csv")
    tokens = [line.split(",")[4] for line in text.splitlines()[1:]]
    # shortest round-trip repr, parsed back to the identical double
    assert all(repr(float(tok)) == tok for tok in tokens)
    assert np.array_equal(frame["sigma2_eps"].to_numpy(), [float(tok) for tok in tokens])


def test_rerun_is_bit_identical(tmp_path):
    a = small_run(tmp_path, "a.json", "ra")
    b = small_run(tmp_path, "b.json", "rb")
    main(["--quiet", "run", str(a)])
    main(["--quiet", "run", str(b)])
    for f in ("chain_0.csv", "chain_1.csv", "data.csv"):
        assert (tmp_path / "ra" / f).read_bytes() == (tmp_path / "rb" / f).read_bytes()
    main(["--quiet", "run", str(a), "--seed", "8"])
    assert (tmp_path / "ra" / "chain_0.csv").read_bytes() != \
        (tmp_path / "rb" / "chain_0.csv").read_bytes()


@pytest.mark.parametrize("sampler", ["pg", "pgas"])
def test_baseline_samplers_run(tmp_path, sampler):
    cfg = small_run(tmp_path, sampler=sampler, pmpmh=None,
                    baseline={"particles": 5},
                    run={"iterations": 12, "chains": 1, "thin": 3})
    data = json.loads(cfg.read_text())
    del data["pmpmh"]
    cfg.write_text(json.dumps(data))
    assert main(["--quiet", "run", str(cfg), "--chains", "1"]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["sampler"] == sampler
    assert manifest["config"]["baseline"]["ancestor_sampling"] == (sampler == "pgas")


def test_simulate_default_lengths(tmp_path):
    cfg = write_config(tmp_path / "m1.json", data={"simulate": {"seed": 3}})
    assert main(["--quiet", "simulate", str(cfg)]) == 0
    frame = pd.read_csv(tmp_path / "out" / "data.csv")
    assert len(frame) == 600 and list(frame.columns) == ["t", "x", "y"]
    side = json.loads((tmp_path / "out" / "data.json").read_text())
    assert side["seed"] == 3 and side["theta"]["p"] == 0.9
    cfg = write_config(tmp_path / "bf.json", model={"name": "blowfly"},
                       output={"directory": "bf"})
    assert main(["--quiet", "simulate", str(cfg)]) == 0
    frame = pd.read_csv(tmp_path / "bf" / "data.csv")
    assert len(frame) == 300 and list(frame.columns) == ["t", "S", "R", "N", "y"]
    side = json.loads((tmp_path / "bf" / "data.json").read_text())
    assert len(side["e"]) == 295 and len(side["eps"]) == 300


def test_simulated_data_is_reusable(tmp_path):
    cfg = write_config(tmp_path / "sim.json", data={"simulate": {"T": 25, "seed": 2}},
                       output={"directory": "sim"})
    main(["--quiet", "simulate", str(cfg)])
    run = small_run(tmp_path, data={"path": "sim/data.csv"},
                    run={"iterations": 12, "chains": 1, "thin": 4})
    assert main(["--quiet", "run", str(run)]) == 0
    frame = read_chain(tmp_path / "out" / "chain_0.csv")
    assert "x25" in frame.columns and "x26" not in frame.columns


def test_zero_length_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path / "t0.json", data={"simulate": {"T": 0}})
    assert main(["--quiet", "simulate", str(cfg)]) == EXIT_CONFIG
    assert "data/simulate/T" in capsys.readouterr().err


def test_two_cells_rejected_with_line(tmp_path, capsys):
    cfg = small_run(tmp_path, pmpmh={"approach": 1, "N": 2, "span": 3.0})
    assert main(["--quiet", "run", str(cfg)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    lines = cfg.read_text().splitlines()
    line_no = next(i + 1 for i, l in enumerate(lines) if '"N"' in l)
    assert f"{cfg}:{line_no}:" in err and "pmpmh/N" in err
    assert not (tmp_path / "out").exists()


def test_invalid_json_and_unknown_fields(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "model": {"name": "gaussian-mixture-1"},\n  "output": }\n')
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert f"{bad}:3:" in capsys.readouterr().err
    cfg = write_config(tmp_path / "u.json", model={"name": "gaussian-mixture-1",
                                                     "theta": {"rho": 1.0}})
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    cfg = small_run(tmp_path, run={"iterations": 10, "burn_in": 10})
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_report_tables_and_dashes(tmp_path, capsys):
    good = small_run(tmp_path, "good.json", "runs/good",
                     model={"name": "linear-gaussian", "fixed_theta": True},
                     run={"iterations": 60, "chains": 2, "seed": 1, "thin": 2})
    main(["--quiet", "run", str(good)])
    bad = small_run(tmp_path, "bad.json", "runs/bad",
                    run={"iterations": 60, "chains": 2, "seed": 2, "thin": 2})
    main(["--quiet", "run", str(bad)])
    # force non-convergence by shifting one chain of the second run
    path = tmp_path / "runs" / "bad" / "chain_1.csv"
    frame = read_chain(path)
    frame["p"] = frame["p"] - 0.5
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    assert main(["report", str(tmp_path / "runs")]) == 0
    out = capsys.readouterr().out
    table = pd.read_csv(tmp_path / "runs" / "report.csv")
    assert len(table) == 2
    row = table.set_index("run").loc["bad"]
    assert row["rhat_max"] > 1.1 and not row["converged"]
    bad_line = next(l for l in out.splitlines() if l.strip().startswith("bad"))
    assert bad_line.split()[-4:] == ["-", "-", "-", "-"]
    ok = table.set_index("run").loc["good"]
    manifest = json.loads((tmp_path / "runs" / "good" / "manifest.json").read_text())
    seconds = sum(c["wall_time"] for c in manifest["chains"])
    assert ok["ess_per_s"] == pytest.approx(ok["ess_all"] / seconds)
    assert (tmp_path / "runs" / "report.txt").exists()


def test_report_without_manifest(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    assert "manifest" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path / "m.json", data={"simulate": {"T": 10}})
    res = subprocess.run([sys.executable, "-m", "pmpmh", "--quiet", "simulate", str(cfg)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    res = subprocess.run([sys.executable, "-m", "pmpmh", "report", str(tmp_path / "none")],
                         capture_output=True, text=True)
    assert res.returncode == EXIT_CONFIG and res.stderr.startswith("error:")
