import csv
import io

import numpy as np
import pytest

from fcstg import tensor as T
from fcstg.cli import main
from fcstg.data import synth_dedt, synth_rul, write_container

SMALL = """\
[model]
patch_size = 6
feature_dim = 4
repr_dim = 8
{extra}
[train]
epochs = 3
batch_size = 16
"""


def cfg_file(tmp_path, name="c.ini", extra="", text=None):
    p = tmp_path / name
    p.write_text(text if text is not None else SMALL.format(extra=extra))
    return str(p)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dedt_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("dedt") / "ds"
    write_container(d, *synth_dedt(3, 4, 24, 30, f=6))
    return d


@pytest.fixture(scope="module")
def trained(dedt_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "c.ini"
    cfg.write_text(SMALL.format(extra=""))
    assert main(["train", "--config", str(cfg), "--data", str(dedt_dir), "--out",
                 str(root / "out"), "--format", "csv"]) == 0
    return root / "out"


# -- exit codes ----------------------------------------------------------------------

def test_missing_dataset_exits_3(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--config", cfg_file(tmp_path), "--data",
                       tmp_path / "none", "--out", tmp_path / "o")
    assert code == 3 and "manifest.json" in err


def test_invalid_delta_exits_2_naming_field(tmp_path, dedt_dir, capsys):
    code, _, err = run(capsys, "train", "--config", cfg_file(tmp_path, extra="delta = 1.5"),
                       "--data", dedt_dir, "--out", tmp_path / "o")
    assert code == 2 and "delta" in err


def test_head_task_mismatch_exits_2(tmp_path, dedt_dir, capsys):
    code, _, err = run(capsys, "train", "--config",
                       cfg_file(tmp_path, extra="head = regression"),
                       "--data", dedt_dir, "--out", tmp_path / "o")
    assert code == 2 and "classification" in err


def test_divergence_exits_4(tmp_path, capsys):
    write_container(tmp_path / "ds", *synth_rul(0, 3, 12, 60, max_rul=20.0, life=(20, 40),
                                                step=2))
    text = (SMALL.format(extra="head = regression").replace("patch_size = 6", "patch_size = 3")
            + "lr = 1e200\n")
    code, _, err = run(capsys, "train", "--config", cfg_file(tmp_path, text=text),
                       "--data", tmp_path / "ds", "--out", tmp_path / "o")
    assert code == 4 and "epoch 1" in err


# -- train and eval ---------------------------------------------------------------------

def test_train_writes_artifacts(trained):
    for name in ("params.bin", "train_log.csv", "test_report.csv"):
        assert (trained / name).is_file()
    rows = list(csv.reader(io.StringIO((trained / "train_log.csv").read_text())))
    assert rows[0][:2] == ["epoch", "train_loss"] and len(rows) == 4


def test_eval_reproduces_test_metrics(trained, dedt_dir, capsys):
    code, out, _ = run(capsys, "eval", "--params", trained / "params.bin", "--data", dedt_dir,
                       "--format", "csv")
    assert code == 0
    assert out == (trained / "test_report.csv").read_text()


def test_pretty_and_csv_agree(trained, dedt_dir, capsys):
    _, pretty, _ = run(capsys, "eval", "--params", trained / "params.bin", "--data", dedt_dir)
    _, plain, _ = run(capsys, "eval", "--params", trained / "params.bin", "--data", dedt_dir,
                      "--format", "csv")
    rows = list(csv.reader(io.StringIO(plain)))
    for name, value in zip(rows[0][2:], rows[1][2:]):
        assert f"{name}" in pretty and value in pretty
        assert float(value) == float(value)


def test_eval_on_empty_split_exits_3(tmp_path, trained, capsys):
    m, s = synth_dedt(3, 4, 24, 30, f=6)
    s["test"] = (s["test"][0][:0], s["test"][1][:0])
    write_container(tmp_path / "ds", m, s)
    code, _, err = run(capsys, "eval", "--params", trained / "params.bin", "--data",
                       tmp_path / "ds")
    assert code == 3 and "empty" in err


def test_eval_shape_mismatch_exits_2(tmp_path, trained, capsys):
    write_container(tmp_path / "ds", *synth_dedt(3, 5, 24, 10, f=6))
    code, _, err = run(capsys, "eval", "--params", trained / "params.bin", "--data",
                       tmp_path / "ds")
    assert code == 2 and "N=4" in err and "N=5" in err


def test_runs_are_byte_identical(tmp_path, dedt_dir, trained, monkeypatch):
    monkeypatch.setenv("FCSTG_THREADS", "1")
    cfg = cfg_file(tmp_path)
    assert main(["train", "--config", cfg, "--data", str(dedt_dir), "--out",
                 str(tmp_path / "b"), "--format", "csv"]) == 0
    for name in ("params.bin", "train_log.csv", "test_report.csv"):
        assert (tmp_path / "b" / name).read_bytes() == (trained / name).read_bytes()


def test_bad_thread_cap_exits_2(tmp_path, dedt_dir, monkeypatch, capsys):
    monkeypatch.setenv("FCSTG_THREADS", "zero")
    code, _, err = run(capsys, "train", "--data", dedt_dir, "--out", tmp_path / "o")
    assert code == 2 and "FCSTG_THREADS" in err


def test_params_echo_config(trained):
    from fcstg.params import echo_config
    mc, tc = echo_config(trained / "params.bin")
    assert (mc.patch_size, mc.feature_dim, mc.repr_dim, tc.epochs) == (6, 4, 8, 3)


# -- dump-adj ---------------------------------------------------------------------------------

def adj(capsys, *argv):
    code, out, err = run(capsys, "dump-adj", *argv)
    assert code == 0, err
    rows = list(csv.DictReader(io.StringIO(out)))
    n = int(max(int(r["row"]) for r in rows)) + 1
    mat = np.zeros((n, n))
    for r in rows:
        mat[int(r["row"]), int(r["col"])] = float(r["value"])
    return mat


def test_dump_adj_decay(tmp_path, dedt_dir, capsys):
    out = tmp_path / "o"
    assert main(["train", "--config", cfg_file(tmp_path, extra="delta = 1.0"), "--data",
                 str(dedt_dir), "--out", str(out)]) == 0
    capsys.readouterr()
    e = adj(capsys, "--params", out / "params.bin", "--data", dedt_dir)
    np.testing.assert_allclose(e.sum(axis=1), 1.0, atol=1e-12)

    out9 = tmp_path / "o9"
    assert main(["train", "--config", cfg_file(tmp_path), "--data", str(dedt_dir), "--out",
                 str(out9)]) == 0
    capsys.readouterr()
    post = adj(capsys, "--params", out9 / "params.bin", "--data", dedt_dir, "--window", 1)
    pre = adj(capsys, "--params", out9 / "params.bin", "--data", dedt_dir, "--window", 1,
              "--pre-decay")
    assert post.shape == (8, 8)
    np.testing.assert_allclose(post[:4, 4:], 0.9 * pre[:4, 4:], rtol=1e-12)
    np.testing.assert_allclose(post[:4, :4], pre[:4, :4], rtol=1e-12)


@pytest.mark.parametrize("flag,value", [("--window", 3), ("--sample", 10**6), ("--branch", 2)])
def test_dump_adj_out_of_range(trained, dedt_dir, capsys, flag, value):
    # L=24, f=6 gives 4 patches and 3 windows
    code, _, err = run(capsys, "dump-adj", "--params", trained / "params.bin", "--data",
                       dedt_dir, flag, value)
    assert code == 2 and "outside" in err


# -- sweep ------------------------------------------------------------------------------------

def test_delta_sweep(tmp_path, dedt_dir, capsys):
    args = ("sweep", "--config", cfg_file(tmp_path), "--data", dedt_dir, "--axis", "delta",
            "--values", "0.1,0.5,0.9,1.0")
    code, first, _ = run(capsys, *args)
    assert code == 0
    rows = list(csv.reader(io.StringIO(first)))
    assert [r[0] for r in rows[1:]] == ["0.1", "0.5", "0.9", "1.0"]
    assert all(r[1] == "ok" for r in rows[1:])
    assert run(capsys, *args)[1] == first


def test_window_sweep_includes_one_and_records_errors(tmp_path, dedt_dir, capsys):
    code, out, _ = run(capsys, "sweep", "--config", cfg_file(tmp_path), "--data", dedt_dir,
                       "--axis", "M", "--values", "1,2,9")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert [r[1] for r in rows[1:3]] == ["ok", "ok"]
    assert rows[3][1].startswith("error")


def test_stride_beyond_window_warns(tmp_path, dedt_dir, capsys, caplog):
    code, _, _ = run(capsys, "sweep", "--config", cfg_file(tmp_path), "--data", dedt_dir,
                     "--axis", "s", "--values", "3")
    assert code == 0 and "no window" in caplog.text


def test_sweep_bad_values_exit_2(tmp_path, dedt_dir, capsys):
    code, _, _ = run(capsys, "sweep", "--data", dedt_dir, "--axis", "f", "--values", "x")
    assert code == 2


# -- gradcheck --------------------------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1])
def test_gradcheck_passes(capsys, seed):
    code, out, _ = run(capsys, "gradcheck", "--seed", seed)
    assert code == 0 and "FAIL" not in out


def test_gradcheck_catches_corruption(capsys, monkeypatch):
    good = T.BACKWARD_RULES["matmul"]
    monkeypatch.setitem(T.BACKWARD_RULES, "matmul",
                        lambda g, xs, out, at: tuple(1.01 * v for v in good(g, xs, out, at)))
    code, out, err = run(capsys, "gradcheck")
    assert code == 5 and "op:matmul" in err


# -- synth and ingest -----------------------------------------------------------------------

def test_synth_commands(tmp_path, capsys):
    assert run(capsys, "synth", "--kind", "dedt", "--samples", 20, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, "synth", "--kind", "rul", "--samples", 50, "--length", 20,
               "--out", tmp_path / "b")[0] == 0
    assert run(capsys, "synth", "--kind", "dedt", "--sensors", 1, "--out", tmp_path / "c")[0] == 2
    assert run(capsys, "synth", "--kind", "dedt", "--samples", 20, "--out",
               tmp_path / "a2")[0] == 0
    assert (tmp_path / "a" / "train.bin").read_bytes() == \
        (tmp_path / "a2" / "train.bin").read_bytes()


def test_ingest_command(tmp_path, capsys):
    src = tmp_path / "csv"
    src.mkdir()
    rng = np.random.default_rng(0)
    labels = ["sample_id,label"]
    for k in range(10):
        body = "\n".join(",".join(f"{v:.4f}" for v in row) for row in rng.standard_normal((12, 2)))
        (src / f"x{k}.csv").write_text("a,b\n" + body + "\n")
        labels.append(f"x{k},{k % 2}")
    (src / "labels.csv").write_text("\n".join(labels) + "\n")
    code, out, _ = run(capsys, "ingest", "--src", src, "--out", tmp_path / "ds")
    assert code == 0 and "train" in out
    (src / "x3.csv").write_text("a,b\n1,2\n")
    code, _, err = run(capsys, "ingest", "--src", src, "--out", tmp_path / "ds2")
    assert code == 3 and "x3.csv" in err
