import csv

import numpy as np
import pytest

from stretchtime import verify
from stretchtime.cli import main
from stretchtime.data import load_csv, split, window_count, WindowSpec
from stretchtime.sype import Feasible, rope_feasibility_check

TINY = """\
lookback = 16
horizons = 8
output_dir = run
model.d_model = 8
model.n_heads = 2
train.max_epochs = 2
train.effective_batch = 8
train.physical_batch = 4
train.train_stride = 8
train.eval_stride = 4
synthetic.length = 400
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "tiny.cfg").write_text(TINY)
    return tmp_path


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_generate_default(workdir):
    assert main(["generate", "--out", "d.csv"]) == 0
    lines = (workdir / "d.csv").read_text().splitlines()
    assert lines[0] == "c0,c1,c2" and len(lines) == 6001
    assert (workdir / "d.csv.config").read_text().count("synthetic.") == 10


def test_generate_is_byte_identical(workdir):
    main(["generate", "--config", "tiny.cfg", "--out", "a.csv"])
    main(["generate", "--config", "tiny.cfg", "--out", "b.csv"])
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()
    assert (workdir / "a.csv.config").read_bytes() == (workdir / "b.csv.config").read_bytes()


def test_generate_affine_clock_is_feasible(workdir):
    (workdir / "flat.cfg").write_text(TINY + "synthetic.warp_amplitude = 0.0\n")
    main(["generate", "--config", "flat.cfg", "--out", "flat.csv"])
    tau = np.array([float(r["tau"]) for r in read_rows(workdir / "flat.csv.tau.csv")])
    assert isinstance(rope_feasibility_check(tau, 2 * np.pi / 24), Feasible)


def test_resolved_sidecar_reproduces_generate(workdir):
    main(["generate", "--config", "tiny.cfg", "--out", "a.csv"])
    main(["generate", "--config", "a.csv.config", "--out", "b.csv"])
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()


def test_zero_epoch_train_equals_persistence(workdir):
    (workdir / "zero.cfg").write_text(TINY.replace("train.max_epochs = 2", "train.max_epochs = 0"))
    assert main(["train", "--config", "zero.cfg"]) == 0
    row = read_rows(workdir / "run" / "metrics.csv")[0]
    main(["generate", "--config", "tiny.cfg", "--out", "d.csv"])
    ds = split(load_csv(workdir / "d.csv"), min_segment=24)
    test = ds.segment("test")
    starts = range(0, window_count(len(test), WindowSpec(16, 8, 4)) * 4, 4)
    errs = [(test[s + 16:s + 24] - test[s + 15]) for s in starts]
    expect = np.mean(np.square(errs))
    assert float(row["mse"]) == pytest.approx(expect, rel=1e-12)
    assert float(row["mae"]) == pytest.approx(np.mean(np.abs(errs)), rel=1e-12)


def test_train_rerun_identical_and_evaluate(workdir):
    assert main(["train", "--config", "tiny.cfg", "--out-dir", "a"]) == 0
    assert main(["train", "--config", "tiny.cfg", "--out-dir", "b"]) == 0
    for name in ("metrics.csv", "history_T8.csv", "checkpoint_T8.npz", "resolved.config"):
        assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()
    history = read_rows(workdir / "a" / "history_T8.csv")
    best = min(history, key=lambda r: float(r["val_mse"]))
    assert main(["evaluate", "--config", "tiny.cfg", "--checkpoint", "a/checkpoint_T8.npz",
                 "--split", "val", "--out", "ev/val.csv", "--dump-forecasts", "3"]) == 0
    row = read_rows(workdir / "ev" / "val.csv")[0]
    assert float(row["mse"]) == float(best["val_mse"]) and float(row["mae"]) == float(best["val_mae"])
    dump = read_rows(workdir / "ev" / "forecasts.csv")
    assert len(dump) == 3 * (16 + 8) * 3
    assert main(["evaluate", "--config", "tiny.cfg", "--checkpoint", "a/checkpoint_T8.npz",
                 "--horizons", "4,8", "--out", "ev/test.csv"]) == 0
    test_rows = read_rows(workdir / "ev" / "test.csv")
    assert [r["horizon"] for r in test_rows] == ["4", "8"]
    assert test_rows[1]["mse"] == read_rows(workdir / "a" / "metrics.csv")[0]["mse"]


def test_evaluate_persistence_flag(workdir):
    assert main(["evaluate", "--config", "tiny.cfg", "--persistence", "--out", "p.csv"]) == 0
    main(["generate", "--config", "tiny.cfg", "--out", "d.csv"])
    test = split(load_csv(workdir / "d.csv"), min_segment=24).segment("test")
    errs = [test[s + 16:s + 24] - test[s + 15] for s in range(len(test) - 23)]
    assert float(read_rows(workdir / "p.csv")[0]["mse"]) == pytest.approx(np.mean(np.square(errs)), rel=1e-12)


def test_evaluate_rejects_mismatched_data(workdir):
    main(["train", "--config", "tiny.cfg"])
    (workdir / "other.cfg").write_text(TINY + "synthetic.channels = 2\n")
    assert main(["evaluate", "--config", "other.cfg", "--checkpoint", "run/checkpoint_T8.npz"]) == 1
    assert main(["evaluate", "--config", "tiny.cfg", "--checkpoint", "run/checkpoint_T8.npz",
                 "--horizons", "9"]) == 1
    assert main(["evaluate", "--config", "tiny.cfg"]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(workdir, capsys):
    (workdir / "bad.cfg").write_text("model.depth = 3\n")
    assert main(["train", "--config", "bad.cfg"]) == 1
    assert "bad.cfg:1" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    (workdir / "boom.cfg").write_text(TINY + "train.learning_rate = 1e300\n")
    assert main(["train", "--config", "boom.cfg"]) == 3


def test_verify_report(workdir):
    assert main(["verify", "--suites", "symplectic,feasibility,basis_sign", "--report", "r.csv"]) == 0
    rows = read_rows(workdir / "r.csv")
    assert list(rows[0]) == ["check", "samples", "max_error", "threshold", "pass"]
    by = {r["check"]: r for r in rows}
    assert float(by["symplectic_conservation"]["max_error"]) <= 1e-10
    assert by["feasible_count_minus_affine_count"]["max_error"] == "0.0"
    assert all(r["pass"] == "true" for r in rows)


def test_verify_failure_exit_code(workdir, monkeypatch):
    monkeypatch.setitem(verify.SUITES, "symplectic",
                        lambda seed=0: [verify.CheckResult("broken", 1, 1.0, 0.0)])
    assert main(["verify", "--suites", "symplectic", "--report", "r.csv"]) == 2
    assert read_rows(workdir / "r.csv")[0]["pass"] == "false"


def test_compare_variants(workdir, capsys):
    (workdir / "c.cfg").write_text(TINY.replace("train.max_epochs = 2", "train.max_epochs = 1"))
    assert main(["compare", "--config", "c.cfg", "--variants", "sype,rope,no_mlp", "--out", "cmp.csv"]) == 0
    rows = read_rows(workdir / "cmp.csv")
    assert [r["variant"] for r in rows] == ["sype", "rope", "no_mlp"]
    assert len({r["mse"] for r in rows}) == 3
    assert "horizon" in capsys.readouterr().out
    assert main(["compare", "--config", "c.cfg", "--variants", "warp9"]) == 1
