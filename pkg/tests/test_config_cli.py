import numpy as np
import pytest

from sgdmft.cli import main
from sgdmft.config import ConfigError, parse_config, to_text
from sgdmft.dmft import KernelSet
from sgdmft.simulator import MetricsSeries
from sgdmft.storage import read_curves, read_kernels, write_curves, write_kernels

FIG2 = """\
# two clusters, persistent minibatches
kind = two
alpha = 2
delta = 0.5
lambda = 0
inv_tau = 0.6
b = 0.3
eta = 0.2
R = 0.01
d = 500
horizon = 20
"""

SHORT = """\
kind = two
alpha = 2
delta = 0.5
eta = 0.2
horizon = 2
d = 60
n_paths = 300
"""


def test_parse_and_round_trip():
    cfg = parse_config(FIG2)
    assert cfg.tau == pytest.approx(1 / 0.6) and cfg.b == 0.3 and cfg.scheme == "persistent"
    assert parse_config(to_text(cfg)) == cfg


def test_range_error_names_key():
    with pytest.raises(ConfigError, match=r"\bb = 1.5"):
        parse_config(FIG2.replace("b = 0.3", "b = 1.5"))


def test_empty_file_lists_required():
    with pytest.raises(ConfigError, match="kind, alpha, delta, eta, horizon"):
        parse_config("")


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("kind = two\nalpha = 2\nnonsense\n")
    with pytest.raises(ConfigError, match="line 2: unknown key 'alfa'"):
        parse_config("kind = two\nalfa = 2\n")
    with pytest.raises(ConfigError, match="line 2: cannot read d"):
        parse_config("kind = two\nd = 5.5\n")


def test_persistent_transition_check():
    with pytest.raises(ConfigError, match="clip_transitions"):
        parse_config(FIG2.replace("b = 0.3", "b = 0.1"))
    parse_config(FIG2.replace("b = 0.3", "b = 0.1") + "clip_transitions = true\n")


def test_curves_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    cols = {k: rng.random(7) for k in ("m", "q", "train_loss", "train_acc", "gen_err")}
    s = MetricsSeries(times=np.arange(7) * 0.2, stderr={k: rng.random(7) for k in cols}, **cols)
    write_curves(tmp_path / "c.csv", s, with_stderr=True)
    back = read_curves(tmp_path / "c.csv")
    for k in cols:
        assert np.array_equal(getattr(back, k), cols[k])
        assert np.array_equal(back.stderr[k], s.stderr[k])
    assert open(tmp_path / "c.csv").readline().strip() == (
        "t,m,q,train_loss,train_acc,gen_err,m_se,q_se,train_loss_se,train_acc_se,gen_err_se"
    )


def test_kernels_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    n = 6
    B = rng.random((n, n))
    K = KernelSet(0.2, B @ B.T, np.tril(rng.random((n, n)), -1), rng.random(n), rng.random(n), rng.random(n + 1))
    write_kernels(tmp_path / "k.csv", K, {"alpha": 2})
    back, meta = read_kernels(tmp_path / "k.csv")
    assert meta["alpha"] == "2"
    for name, arr in K.arrays().items():
        assert np.array_equal(getattr(back, name), arr), name


def _cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_oracle(tmp_path, capsys):
    cfg = _cfg(tmp_path, "kind = three\nalpha = 3\ndelta = 0.1\neta = 0.1\nhorizon = 1\n")
    assert main(["oracle", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("oracle_error = ")
    assert 0 < float(out.split("=")[1]) < 0.5


def test_cli_exit_codes(tmp_path):
    assert main(["simulate", "--config", _cfg(tmp_path, "b = 1.5\n"), "--out", str(tmp_path / "x")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "x")]) == 4
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", _cfg(tmp_path, SHORT), "--out", str(blocker / "sub")]) == 4
    slow = SHORT + "max_iters = 1\ntol = 1e-12\n"
    out = tmp_path / "nc"
    assert main(["dmft", "--config", _cfg(tmp_path, slow, "nc.cfg"), "--out", str(out)]) == 3
    manifest = (out / "manifest.txt").read_text()
    assert "# converged = False" in manifest and "# error = " in manifest


def test_cli_sweep_writes_one_set_per_value(tmp_path):
    text = SHORT + "sweep_key = R\nsweep_values = 0, 0.01, 0.1, 1, 5\nsweep_mode = simulate\n"
    out = tmp_path / "sw"
    assert main(["sweep", "--config", _cfg(tmp_path, text), "--out", str(out)]) == 0
    dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert dirs == ["R=0", "R=0.01", "R=0.1", "R=1", "R=5"]
    for d in dirs:
        assert (out / d / "curves.csv").exists()
    assert "R = 5\n" in (out / "R=5" / "manifest.txt").read_text()


@pytest.mark.parametrize("mode", ["simulate", "dmft", "compare"])
def test_manifest_reproduces_outputs(tmp_path, mode):
    first = tmp_path / "a"
    assert main([mode, "--config", _cfg(tmp_path, SHORT + "n_seeds = 3\n"), "--out", str(first)]) == 0
    second = tmp_path / "b"
    assert main([mode, "--config", str(first / "manifest.txt"), "--out", str(second), "--workers", "8"]) == 0
    csvs = sorted(p.name for p in first.glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
