"""Training loop and checkpoint (de)serialization."""

import json
import logging

import numpy as np
import torch

from . import bie_engine as eng
from .config import RunConfig
from .operator_net import build_model
from .training import ADAM_BETAS, ADAM_EPS, LrSchedule, adam_step, backward, make_optimizer

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "neural-bie-checkpoint/1"


def spec_from_config(cfg):
    return eng.make_problem(cfg.problem, cfg.geometry, (cfg.t_min, cfg.t_max), cfg.wavenumber)


def set_deterministic(flag):
    if flag:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


class Trainer:
    """Owns model, optimizer and loss trace for one run.

    Batches are rebuilt from ``(seed, step)`` so a resumed run replays the
    same data stream without storing generator state.
    """

    def __init__(self, cfg, model=None):
        self.cfg = cfg
        self.spec = spec_from_config(cfg)
        self.model = model if model is not None else build_model(cfg)
        self.schedule = LrSchedule(cfg.lr, cfg.lr_decay_rate, cfg.lr_decay_period)
        self.optimizer = make_optimizer(self.trainable())
        self.step = 0
        self.trace = []

    def trainable(self):
        return [p for p in self.model.parameters() if p.requires_grad]

    def batch(self, step):
        c = self.cfg
        return eng.make_batch(self.spec, c.n_t, c.n_y, c.m, c.seed, step)

    def loss_at(self, step):
        return eng.mc_loss(self.model, self.spec, self.batch(step), self.cfg.beta)

    def train_step(self):
        if self.trace and self.trace[-1][0] == self.step:
            # end-of-run row from an earlier run(); re-logged below if on schedule
            self.trace.pop()
        loss = self.loss_at(self.step)
        self.optimizer.zero_grad(set_to_none=True)
        backward(loss)
        lr = adam_step(self.optimizer, self.schedule, self.step)
        if self.step % self.cfg.log_every == 0:
            self.trace.append((self.step, loss.item(), lr))
        self.step += 1
        return loss.item()

    def run(self, steps=None, on_checkpoint=None):
        steps = self.cfg.steps if steps is None else steps
        while self.step < steps:
            value = self.train_step()
            if self.step % self.cfg.log_every == 0 or self.step == 1:
                log.info("step %d loss %.6e", self.step - 1, value)
            if on_checkpoint is not None and self.step % self.cfg.checkpoint_every == 0:
                on_checkpoint(self)
        if not self.trace or self.trace[-1][0] != self.step:
            with torch.no_grad():
                final = self.loss_at(self.step).item()
            self.trace.append((self.step, final, self.schedule.rate(self.step)))
        if on_checkpoint is not None:
            on_checkpoint(self)
        return self.trace

    # -- checkpoints -------------------------------------------------------

    def state(self):
        names = {id(p): n for n, p in self.model.named_parameters()}
        params = {n: _pack(t) for n, t in self.model.state_dict().items()}
        adam = {}
        for p in self.trainable():
            st = self.optimizer.state.get(p)
            if st:
                adam[names[id(p)]] = {
                    "step": float(st["step"]),
                    "exp_avg": _pack(st["exp_avg"]),
                    "exp_avg_sq": _pack(st["exp_avg_sq"]),
                }
        return {
            "format": CHECKPOINT_FORMAT,
            "config": self.cfg.to_dict(),
            "step": self.step,
            "params": params,
            "adam": {"betas": list(ADAM_BETAS), "eps": ADAM_EPS, "state": adam},
            "rng": {"seed": self.cfg.seed, "counter": self.step},
            "trace": [list(r) for r in self.trace],
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.state(), fh, indent=1)

    @classmethod
    def from_state(cls, state, **overrides):
        if state.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {state.get('format')!r}")
        cfg = RunConfig(**state["config"]).with_overrides(**overrides)
        tr = cls(cfg)
        tr.model.load_state_dict({n: _unpack(v) for n, v in state["params"].items()})
        by_name = dict(tr.model.named_parameters())
        for name, st in state["adam"]["state"].items():
            p = by_name[name]
            tr.optimizer.state[p] = {
                "step": torch.tensor(st["step"], dtype=torch.float32),
                "exp_avg": _unpack(st["exp_avg"]),
                "exp_avg_sq": _unpack(st["exp_avg_sq"]),
            }
        tr.step = state["step"]
        tr.trace = [tuple(r) for r in state["trace"]]
        return tr

    @classmethod
    def load(cls, path, **overrides):
        with open(path) as fh:
            return cls.from_state(json.load(fh), **overrides)


def _pack(t):
    a = t.detach().cpu().numpy()
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _unpack(d):
    return torch.from_numpy(np.asarray(d["data"], dtype=np.float64).reshape(d["shape"]))
