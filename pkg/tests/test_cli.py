import json
import math

import numpy as np
import pytest

from neural_bie import cli
from neural_bie.config import RunConfig
from neural_bie.trainer import Trainer


@pytest.fixture(scope="module")
def laplace_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert cli.main(["train", "--steps", "100", "--out", str(out)]) == 0
    return out


def test_train_smoke_outputs(laplace_run):
    meta, header, data = cli.read_table(laplace_run / "loss_trace.csv")
    assert header == ["step", "loss", "lr"]
    assert data[:, 0].tolist() == [0, 100]
    assert meta.startswith("# neural-bie loss-trace/1 seed=0 config=")
    ck = json.loads((laplace_run / "checkpoint.json").read_text())
    assert ck["format"] == "neural-bie-checkpoint/1" and ck["step"] == 100
    assert ck["config"]["m"] == 3000


def test_resume_without_steps_is_identity(laplace_run):
    path = laplace_run / "checkpoint.json"
    before = path.read_bytes()
    assert cli.main(["train", "--checkpoint", str(path)]) == 0
    assert path.read_bytes() == before


def test_eval_writes_field_and_error(laplace_run, tmp_path, capsys):
    ck = laplace_run / "checkpoint.json"
    assert cli.main(["eval", "--checkpoint", str(ck), "--t", "1.15", "--grid", "30",
                     "--m-eval", "2000", "--out", str(tmp_path)]) == 0
    meta, header, data = cli.read_table(tmp_path / "field_t1.15.csv")
    assert header == ["x", "y", "re", "im", "truth_re", "truth_im"]
    assert "config=" in meta and "seed=0" in meta
    err = np.sum((data[:, 2] - data[:, 4]) ** 2) / np.sum(data[:, 4] ** 2)
    assert f"relative_l2 t=1.15: {err:.6e}" in capsys.readouterr().out
    assert np.all(data[:, 5] == 0)


def test_empty_grid_is_an_error_and_writes_nothing(laplace_run, tmp_path, capsys):
    ck = laplace_run / "checkpoint.json"
    rc = cli.main(["eval", "--checkpoint", str(ck), "--t", "1.15", "--grid", "20",
                   "--delta", "100", "--out", str(tmp_path)])
    assert rc == 2
    assert "empty" in capsys.readouterr().err
    assert not list(tmp_path.glob("field_*"))


def test_far_field_rejects_2d_checkpoint(laplace_run):
    with pytest.raises(SystemExit):
        cli.main(["far-field", "--checkpoint", str(laplace_run / "checkpoint.json")])


def _helmholtz_checkpoint(path, zero=False):
    cfg = RunConfig(problem="helmholtz3d", geometry="hemispheres", t_min=0.0, t_max=0.5, n_t=2,
                    n_y=20, m=200, encoder_width=10, p=5, decoder_width=10, fourier_features=4,
                    steps=0)
    state = Trainer(cfg).state()
    if zero:
        for v in state["params"].values():
            v["data"] = [0.0] * len(v["data"])
    path.write_text(json.dumps(state))
    return path


def test_zero_potential_far_field(tmp_path):
    ck = _helmholtz_checkpoint(tmp_path / "zero.json", zero=True)
    assert cli.main(["far-field", "--checkpoint", str(ck), "--t", "0.1", "--n-theta", "5",
                     "--n-phi", "4", "--m-eval", "100", "--out", str(tmp_path)]) == 0
    meta, header, data = cli.read_table(tmp_path / "far_field_t0.1.csv")
    assert header == ["theta", "phi", "re", "im"]
    assert data.shape == (20, 4)
    assert np.all(data[:, 2:] == 0)


def test_helmholtz_eval_writes_total_field(tmp_path):
    ck = _helmholtz_checkpoint(tmp_path / "h.json")
    assert cli.main(["eval", "--checkpoint", str(ck), "--t", "0.2", "--grid", "21",
                     "--m-eval", "100", "--out", str(tmp_path)]) == 0
    _, header, data = cli.read_table(tmp_path / "field_t0.2.csv")
    assert header == ["x", "y", "z", "re", "im"]
    assert np.all(data[:, 1] == 0) and np.all(np.abs(data[:, [0, 2]]) <= 4)


def test_oracle_unit_circle(tmp_path, capsys):
    assert cli.main(["oracle", "--geometry", "unit-circle", "--n", "512", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    err = float(out.split("relative_l2=")[1])
    assert err < 5e-3
    _, header, data = cli.read_table(tmp_path / "oracle_density.csv")
    assert header == ["alpha", "x", "y", "density"] and data.shape == (512, 4)
    _, header, _ = cli.read_table(tmp_path / "oracle_field_t0.csv")
    assert header == ["x", "y", "re", "im", "truth_re", "truth_im"]


def test_oracle_rejects_tiny_n():
    with pytest.raises(SystemExit) as info:
        cli.main(["oracle", "--n", "3"])
    assert info.value.code == 2


def test_oracle_sphere_series(tmp_path):
    assert cli.main(["oracle", "--problem", "helmholtz3d", "--out", str(tmp_path)]) == 0
    _, header, data = cli.read_table(tmp_path / "oracle_far_field.csv")
    assert header == ["theta", "phi", "re", "im"]
    assert data[0, 2] == pytest.approx(-1.75957739, abs=1e-7)
    assert data[0, 3] == pytest.approx(3.96846434, abs=1e-7)


def test_gradcheck_pass_and_negative_control(capsys):
    assert cli.main(["gradcheck"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert cli.main(["gradcheck", "--corrupt-adjoint"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_unknown_config_key_fails_with_line(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[training]\nsteps = 3\nlearning_rate = 0.1\n")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err
    assert not (tmp_path / "checkpoint.json").exists()


def test_sweep_sub_grid_smoke(tmp_path):
    cfg = tmp_path / "sweep.ini"
    cfg.write_text(
        "[data]\nn_t = 2\nn_y = 20\nm = 100\nm_eval = 2000\n"
        "[network]\nfourier_features = 8\n"
        "[training]\nsteps = 1000\nlog_every = 500\n"
        "[sweep]\nlayers = 1, 3\nneurons = 10, 20\np = 10\ndecoder_modes = fourier\ngrid = 30\n"
    )
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    _, header, table = cli.read_table(tmp_path / "sweep_fourier_p10.csv")
    assert header == ["layers", "neurons_10", "neurons_20"]
    assert table[:, 0].tolist() == [1, 3] and np.all(np.isfinite(table[:, 1:]))
    with open(tmp_path / "sweep_runs.csv") as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 2 + 4


def test_checkpoints_written_periodically(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[data]\nn_t = 1\nn_y = 5\nm = 20\n[network]\nencoder_width = 5\np = 3\n"
                   "decoder_width = 5\nfourier_features = 2\n"
                   "[training]\nsteps = 7\ncheckpoint_every = 3\nlog_every = 2\n")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.glob("checkpoint*.json"))
    assert names == ["checkpoint.json", "checkpoint_0000003.json", "checkpoint_0000006.json"]
    _, _, data = cli.read_table(tmp_path / "loss_trace.csv")
    assert data[:, 0].tolist() == [0, 2, 4, 6, 7]
