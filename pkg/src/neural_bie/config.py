"""Run configuration: sectioned key = value files with strict key checking."""

import configparser
from dataclasses import asdict, dataclass, fields, replace
import hashlib
import io
import math

# key -> section in the config file
SECTIONS = {
    "problem": "problem", "geometry": "problem", "t_min": "problem", "t_max": "problem",
    "wavenumber": "problem",
    "n_t": "data", "n_y": "data", "m": "data", "m_eval": "data",
    "encoder_depth": "network", "encoder_width": "network", "p": "network",
    "decoder_depth": "network", "decoder_width": "network", "fourier_features": "network",
    "fourier_scale": "network", "fourier_trainable": "network", "decoder_mode": "network",
    "fusion": "network",
    "steps": "training", "beta": "training", "lr": "training", "lr_decay_rate": "training",
    "lr_decay_period": "training", "seed": "training", "deterministic": "training",
    "log_every": "training", "checkpoint_every": "training",
    "out_dir": "output",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str = "laplace2d"
    geometry: str = "laplace-star"
    t_min: float = 1.0
    t_max: float = 2.0
    wavenumber: float = 2 * math.pi
    n_t: int = 10
    n_y: int = 100
    m: int = 3000
    m_eval: int = 20_000
    encoder_depth: int = 3
    encoder_width: int = 100
    p: int = 100
    decoder_depth: int = 3
    decoder_width: int = 100
    fourier_features: int = 64
    fourier_scale: float = 1.0
    fourier_trainable: bool = True
    decoder_mode: str = "fourier"
    fusion: str = "concat"
    steps: int = 200_000
    beta: float = 1e5
    lr: float = 1e-3
    lr_decay_rate: float = 0.95
    lr_decay_period: int = 20_000
    seed: int = 0
    deterministic: bool = False
    log_every: int = 100
    checkpoint_every: int = 10_000
    out_dir: str = "runs"

    def __post_init__(self):
        for name in ("n_t", "n_y", "m", "m_eval", "encoder_width", "p", "decoder_width",
                     "lr_decay_period", "log_every", "checkpoint_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("encoder_depth", "decoder_depth", "steps", "fourier_features"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.beta <= 0 or self.lr <= 0:
            raise ConfigError("beta and lr must be positive")
        if self.problem not in ("laplace2d", "biharmonic2d", "helmholtz3d"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.t_min > self.t_max:
            raise ConfigError(f"empty t-range [{self.t_min}, {self.t_max}]")

    def with_overrides(self, **kw):
        return replace(self, **kw)

    def to_text(self):
        cp = configparser.ConfigParser()
        for f in fields(self):
            sec = SECTIONS[f.name]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, f.name, _fmt(getattr(self, f.name)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self):
        """Hash of every setting that affects results (the output directory does not)."""
        return hashlib.sha256(self.with_overrides(out_dir="").to_text().encode()).hexdigest()[:16]

    def to_dict(self):
        return asdict(self)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def problem_defaults(problem):
    """Defaults per problem; network and optimizer settings are shared."""
    if problem == "helmholtz3d":
        return RunConfig(problem=problem, geometry="hemispheres", t_min=0.0, t_max=0.5,
                         n_t=2, n_y=1880, m=56_000)
    if problem == "biharmonic2d":
        return RunConfig(problem=problem, geometry="biharmonic-star")
    return RunConfig(problem=problem)


def _parse_value(kind, raw, key):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _line_of(text, section, key=None):
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return no
        elif key is not None and current == section and "=" in s:
            if s.split("=", 1)[0].strip().lower() == key:
                return no
    return 0


def parse_config(text, extra_sections=()):
    """Parse config text; unknown sections or keys are errors carrying line numbers.

    Returns the RunConfig and a dict of any ``extra_sections`` (raw strings).
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    types = {f.name: f.type for f in fields(RunConfig)}
    type_map = {"int": int, "float": float, "bool": bool, "str": str}
    values, extras = {}, {}
    for sec in cp.sections():
        if sec in extra_sections:
            extras[sec] = dict(cp.items(sec))
            continue
        if sec not in set(SECTIONS.values()):
            raise ConfigError(f"line {_line_of(text, sec)}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in types or SECTIONS[key] != sec:
                raise ConfigError(f"line {_line_of(text, sec, key)}: unknown key {key!r} in [{sec}]")
            kind = types[key]
            kind = type_map.get(kind, kind) if isinstance(kind, str) else kind
            values[key] = _parse_value(kind, raw, key)
    cfg = replace(problem_defaults(values.get("problem", "laplace2d")), **values)
    return (cfg, extras) if extra_sections else cfg


def load_config(path, extra_sections=()):
    with open(path) as fh:
        return parse_config(fh.read(), extra_sections)
