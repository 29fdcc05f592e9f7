import subprocess
import sys

import pytest

from tpifilter.cli import main

MATRIX = """
[plant]
model = "matrix"
A = [[-1.0]]
C = [[1.0]]
[noise]
w_bar = [0.1]
v_bar = [0.1]
[weights.quadratic]
Q = 1.0
R = 1.0
S = 1.0
gamma = 2.0
kalman = {kalman}
[compare]
distributions = ["U(0,1)"]
trials = 2
duration = 1.0
"""


@pytest.fixture
def scalar_cfg(tmp_path):
    def make(kalman=False):
        p = tmp_path / f"cfg_{kalman}.toml"
        p.write_text(MATRIX.format(kalman=str(kalman).lower()))
        return str(p)
    return make


def read_gare(path):
    rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
    return {(r[0], r[1], r[2]): float(r[3]) for r in rows}


def test_solve_gare_scalar(scalar_cfg, tmp_path):
    # -2p + 1 - (3/4) p^2 = 0  =>  p = (-2 + sqrt(7)) / 1.5
    out = tmp_path / "g.csv"
    assert main(["solve-gare", "--config", scalar_cfg(), "--out", str(out)]) == 0
    vals = read_gare(out)
    assert vals[("P", "0", "0")] == pytest.approx((7**0.5 - 2) / 1.5, rel=1e-10)
    assert vals[("K", "0", "0")] == pytest.approx(vals[("P", "0", "0")], rel=1e-12)


def test_solve_gare_kalman(scalar_cfg, tmp_path):
    out = tmp_path / "k.csv"
    assert main(["solve-gare", "--config", scalar_cfg(True), "--out", str(out)]) == 0
    assert read_gare(out)[("P", "0", "0")] == pytest.approx(2**0.5 - 1, rel=1e-10)


def test_infeasible_gamma_exits_2(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(MATRIX.format(kalman="false").replace("A = [[-1.0]]", "A = [[1.0]]").replace("gamma = 2.0", "gamma = 0.1"))
    assert main(["solve-gare", "--config", str(p)]) == 2


def test_validation_exits_1(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[plant]\n[plant.vehicle]\nm = 1.0\n[weights.quadratic]\nQ=1.0\nR=1.0\ngamma=1.0\n")
    assert main(["solve-gare", "--config", str(p)]) == 1
    assert "plant.vehicle.a" in capsys.readouterr().err
    assert main(["solve-gare", "--config", str(tmp_path / "missing.toml")]) == 1
    assert main(["train", "--iterations", "-1"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_train_zero_iterations(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["train", "--iterations", "0", "--out", str(out)]) == 0
    assert out.read_text() == "iter,value_loss,gain_loss,e_omega,e_theta\n"
    assert (tmp_path / "t.ckpt.json").exists()


def test_train_compare_simulate_deterministic(tmp_path, scalar_cfg):
    texts = []
    for k in range(2):
        t, c, s = (tmp_path / f"{n}{k}.csv" for n in "tcs")
        ck = tmp_path / f"m{k}.json"
        assert main(["train", "--iterations", "30", "--seed", "3", "--out", str(t), "--checkpoint", str(ck)]) == 0
        assert main(["compare", "--trials", "2", "--checkpoint", str(ck), "--out", str(c)]) == 0
        assert main(["simulate", "--config", scalar_cfg(), "--out", str(s)]) == 0
        texts.append([p.read_bytes() for p in (t, c, s)])
    assert texts[0] == texts[1]
    assert texts[0][1].splitlines()[1].startswith(b"\"U(0,1)\",reinforcement,")


def test_train_divergence_exits_2(tmp_path):
    p = tmp_path / "div.toml"
    p.write_text(MATRIX.format(kalman="false") + "[train]\nalpha_omega = 1e4\nalpha_theta = 1e4\nalpha_eta = 1e4\nstate_box = [5.0]\n")
    out = tmp_path / "d.csv"
    assert main(["train", "--config", str(p), "--iterations", "2000", "--out", str(out)]) == 2
    assert out.read_text().startswith("iter,")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tpifilter", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "solve-gare" in res.stdout
