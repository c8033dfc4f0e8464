import json
import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from neural_bie.config import ConfigError, RunConfig, parse_config, problem_defaults
from neural_bie.trainer import Trainer


def test_default_hyperparameters():
    c = RunConfig()
    assert (c.beta, c.p, c.steps, c.lr, c.lr_decay_period, c.lr_decay_rate) == (
        100_000, 100, 200_000, 1e-3, 20_000, 0.95)
    assert (c.encoder_depth, c.encoder_width) == (3, 100)


def test_helmholtz_defaults():
    c = problem_defaults("helmholtz3d")
    assert c.geometry == "hemispheres" and (c.t_min, c.t_max) == (0.0, 0.5)
    assert c.wavenumber == 2 * math.pi


configs = st.builds(
    RunConfig,
    problem=st.sampled_from(["laplace2d", "biharmonic2d"]),
    t_min=st.floats(1.0, 1.5),
    t_max=st.floats(1.5, 2.0),
    n_t=st.integers(1, 50),
    m=st.integers(1, 10**5),
    encoder_depth=st.integers(0, 9),
    p=st.integers(1, 300),
    fourier_scale=st.floats(1e-3, 1e3),
    fourier_trainable=st.booleans(),
    decoder_mode=st.sampled_from(["fourier", "plain"]),
    lr=st.floats(1e-6, 1.0),
    seed=st.integers(0, 2**31),
    deterministic=st.booleans(),
    out_dir=st.sampled_from(["runs", "a/b", "out dir"]),
)


@settings(max_examples=60, deadline=None)
@given(configs)
def test_config_round_trip(cfg):
    again = parse_config(cfg.to_text())
    assert again == cfg
    assert again.to_text() == cfg.to_text()


def test_unknown_key_reports_line():
    text = "[problem]\nproblem = laplace2d\n\n[network]\np = 10\nencoder_widht = 5\n"
    with pytest.raises(ConfigError, match="line 6"):
        parse_config(text)


def test_unknown_section_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("[data]\nm = 5\n[nonsense]\nx = 1\n")


def test_key_in_wrong_section_rejected():
    with pytest.raises(ConfigError):
        parse_config("[data]\np = 5\n")


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        parse_config("[data]\nm = 0\n")
    with pytest.raises(ConfigError):
        parse_config("[data]\nm = many\n")
    with pytest.raises(ConfigError):
        RunConfig(t_min=2.0, t_max=1.0)


def test_partial_config_uses_problem_defaults():
    cfg = parse_config("[problem]\nproblem = helmholtz3d\n[data]\nm = 64\n")
    assert cfg.geometry == "hemispheres" and cfg.m == 64 and cfg.n_t == 2


def test_digest_tracks_content():
    assert RunConfig().digest() == RunConfig().digest()
    assert RunConfig().digest() != RunConfig(seed=1).digest()
    assert RunConfig().digest() == RunConfig(out_dir="elsewhere").digest()


def _small_cfg(**kw):
    base = dict(n_t=2, n_y=10, m=50, encoder_width=8, p=4, decoder_width=8, fourier_features=4,
                steps=6, log_every=2, deterministic=True)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture
def deterministic():
    prev = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    yield
    torch.use_deterministic_algorithms(prev)


def test_checkpoint_next_loss_bit_identical(deterministic):
    tr = Trainer(_small_cfg())
    for _ in range(3):
        tr.train_step()
    state = json.loads(json.dumps(tr.state()))
    resumed = Trainer.from_state(state)
    assert resumed.loss_at(resumed.step).item() == tr.loss_at(tr.step).item()


def test_resumed_training_matches_uninterrupted():
    full = Trainer(_small_cfg())
    full.run()
    part = Trainer(_small_cfg())
    part.run(steps=3)
    resumed = Trainer.from_state(json.loads(json.dumps(part.state())))
    resumed.run()
    for (na, a), (nb, b) in zip(full.model.state_dict().items(), resumed.model.state_dict().items()):
        assert na == nb and torch.equal(a, b)
    assert full.trace == resumed.trace


def test_checkpoint_rejects_foreign_format():
    state = Trainer(_small_cfg()).state()
    state["format"] = "other/9"
    with pytest.raises(ValueError):
        Trainer.from_state(state)


def test_trace_rows():
    tr = Trainer(_small_cfg(steps=5, log_every=2))
    trace = tr.run()
    assert [r[0] for r in trace] == [0, 2, 4, 5]
    assert all(r[2] == 1e-3 for r in trace)


def test_checkpoint_contents():
    tr = Trainer(_small_cfg())
    tr.run(steps=2)
    st_ = tr.state()
    assert st_["rng"] == {"seed": 0, "counter": 2}
    assert "fourier" in st_["params"]
    w = st_["params"]["encoder.layers.0.weight"]
    assert len(w["data"]) == w["shape"][0] * w["shape"][1]
    assert set(st_["adam"]["state"]) == {n for n, p in tr.model.named_parameters()}


def test_checkpoint_records_adam_constants():
    adam = Trainer(_small_cfg()).state()["adam"]
    assert adam["betas"] == [0.9, 0.999] and adam["eps"] == 1e-8
