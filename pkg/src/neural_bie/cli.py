"""Command-line entry point: ``neural-bie <verb> [options]``."""

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import bie_engine as eng
from . import geometry as geo
from . import oracles
from .config import ConfigError, RunConfig, load_config, problem_defaults
from .operator_net import OperatorModel
from .trainer import Trainer, set_deterministic
from .training import gradcheck

FORMAT_VERSION = 1
log = logging.getLogger("neural_bie")


class EmptyGridError(ValueError):
    pass


# -- delimited text output ---------------------------------------------------


def write_table(path, header, rows, kind, seed, digest):
    """CSV with one comment line (format version, seed, config hash) and a header row."""
    rows = list(rows)
    with open(path, "w") as fh:
        fh.write(f"# neural-bie {kind}/{FORMAT_VERSION} seed={seed} config={digest}\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_cell(v) for v in r) + "\n")
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_table(path):
    """Inverse of :func:`write_table`: returns (meta comment, header, float array)."""
    with open(path) as fh:
        meta = fh.readline().strip()
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return meta, header, data


def _digest(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _out_dir(args, cfg=None):
    out = args.out or (cfg.out_dir if cfg is not None else ".")
    os.makedirs(out, exist_ok=True)
    return out


def _tag(t):
    return f"{t:g}".replace("-", "m")


# -- verbs -------------------------------------------------------------------


def _train_config(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = problem_defaults(args.problem or "laplace2d")
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.deterministic:
        over["deterministic"] = True
    if args.steps is not None:
        over["steps"] = args.steps
    if args.out:
        over["out_dir"] = args.out
    return cfg.with_overrides(**over)


def cmd_train(args):
    if args.checkpoint:
        over = {k: v for k, v in (("steps", args.steps), ("seed", args.seed)) if v is not None}
        if args.out:
            over["out_dir"] = args.out
        if args.deterministic:
            over["deterministic"] = True
        tr = Trainer.load(args.checkpoint, **over)
    else:
        tr = Trainer(_train_config(args))
    cfg = tr.cfg
    set_deterministic(cfg.deterministic)
    out = _out_dir(args, cfg)

    def save(trainer):
        if trainer.step % cfg.checkpoint_every == 0 and trainer.step < cfg.steps:
            trainer.save(os.path.join(out, f"checkpoint_{trainer.step:07d}.json"))
        _write_trace(trainer, out)

    t0 = time.time()
    tr.run(on_checkpoint=save)
    final = os.path.join(out, "checkpoint.json")
    tr.save(final)
    _write_trace(tr, out)
    print(f"trained {tr.step} steps in {time.time() - t0:.1f}s; final loss {tr.trace[-1][1]:.6e}")
    print(f"checkpoint: {final}")
    return tr


def _write_trace(tr, out):
    write_table(os.path.join(out, "loss_trace.csv"), ["step", "loss", "lr"], tr.trace,
                "loss-trace", tr.cfg.seed, tr.cfg.digest())


def _load_model(args):
    tr = Trainer.load(args.checkpoint)
    tr.model.eval()
    return tr


def _field_grid(spec, t, args):
    if spec.kind == "helmholtz3d":
        return eng.slice_grid(t, n=args.grid, half_width=args.half_width, delta=args.delta)
    return eng.interior_grid(spec.curve, t, n=args.grid, delta=args.delta)


def evaluate_field(model, spec, t, grid, m_eval, seed):
    """Field values and truth (None if unknown) on the unmasked grid points."""
    pts = grid.valid_points
    if len(pts) == 0:
        raise EmptyGridError("evaluation grid is empty after masking; nothing written")
    if spec.kind == "helmholtz3d":
        return pts, eng.total_field(model, spec, t, grid, m_eval, seed), None
    return pts, eng.eval_field(model, spec, t, pts, m_eval, seed), spec.truth(pts)


def write_field(path, pts, values, truth, seed, digest):
    coords = ["x", "y", "z"][: pts.shape[1]]
    values = np.asarray(values, dtype=complex)
    cols = [pts[:, i] for i in range(pts.shape[1])] + [values.real, values.imag]
    header = coords + ["re", "im"]
    if truth is not None:
        truth = np.asarray(truth, dtype=complex)
        cols += [truth.real, truth.imag]
        header += ["truth_re", "truth_im"]
    return write_table(path, header, zip(*cols), "field", seed, digest)


def cmd_eval(args):
    tr = _load_model(args)
    cfg, spec = tr.cfg, tr.spec
    t = args.t if args.t is not None else spec.t_range[0]
    grid = _field_grid(spec, t, args)
    seed = cfg.seed if args.seed is None else args.seed
    pts, values, truth = evaluate_field(tr.model, spec, t, grid, args.m_eval or cfg.m_eval, seed)
    out = _out_dir(args, cfg)
    path = write_field(os.path.join(out, f"field_t{_tag(t)}.csv"), pts, values, truth,
                       seed, cfg.digest())
    print(f"field: {path} ({len(pts)} points)")
    if truth is not None:
        err = eng.relative_l2(values, truth)
        print(f"relative_l2 t={t:g}: {err:.6e}")
        return err
    return None


def _direction_grid(args):
    return eng.sphere_directions(args.n_theta, args.n_phi)


def write_far_field(path, theta, phi, values, seed, digest):
    values = np.asarray(values, dtype=complex)
    return write_table(path, ["theta", "phi", "re", "im"],
                       zip(theta, phi, values.real, values.imag), "far-field", seed, digest)


def cmd_far_field(args):
    tr = _load_model(args)
    cfg, spec = tr.cfg, tr.spec
    if spec.kind != "helmholtz3d":
        raise SystemExit("far-field needs a Helmholtz checkpoint")
    t = args.t if args.t is not None else 0.0
    theta, phi, d = _direction_grid(args)
    seed = cfg.seed if args.seed is None else args.seed
    ff = eng.far_field(tr.model, spec, t, d, args.m_eval or cfg.m_eval, seed)
    out = _out_dir(args, cfg)
    path = write_far_field(os.path.join(out, f"far_field_t{_tag(t)}.csv"), theta, phi, ff,
                           seed, cfg.digest())
    print(f"far field: {path}")
    if args.compare_series:
        ref = oracles.sphere_far_field(spec.wavenumber, d)
        err = eng.relative_l2(ff, ref)
        print(f"relative_l2 vs sphere series: {err:.6e}")
        return err
    return ff


def _int_list(s):
    return [int(v) for v in str(s).replace(",", " ").split()]


def run_sweep(cfg, layers, neurons, ps, modes, t_eval=1.15, grid_n=100, out=".", echo=print):
    """Train one model per grid cell; returns {(mode, p): array (layers x neurons)}.

    Writes one layers x neurons table per (mode, p) plus a long-format file
    with one row per trained cell.
    """
    tables, runs = {}, []
    spec = eng.make_problem(cfg.problem, cfg.geometry, (cfg.t_min, cfg.t_max), cfg.wavenumber)
    grid = eng.interior_grid(spec.curve, t_eval, n=grid_n)
    pts = grid.valid_points
    truth = spec.truth(pts)
    for mode in modes:
        for p in ps:
            table = np.full((len(layers), len(neurons)), np.nan)
            for i, nl in enumerate(layers):
                for j, nw in enumerate(neurons):
                    c = cfg.with_overrides(encoder_depth=nl, encoder_width=nw, decoder_depth=nl,
                                           decoder_width=nw, p=p, decoder_mode=mode)
                    tr = Trainer(c)
                    t0 = time.time()
                    tr.run()
                    pred = eng.eval_field(tr.model, spec, t_eval, pts, c.m_eval, c.seed)
                    table[i, j] = eng.relative_l2(pred, truth)
                    runs.append((mode, p, nl, nw, tr.model.n_params(), table[i, j],
                                 round(time.time() - t0, 2)))
                    echo(f"mode={mode} p={p} layers={nl} neurons={nw} rel_l2={table[i, j]:.4e}")
            tables[(mode, p)] = table
            rows = [[nl, *table[i]] for i, nl in enumerate(layers)]
            write_table(os.path.join(out, f"sweep_{mode}_p{p}.csv"),
                        ["layers"] + [f"neurons_{n}" for n in neurons], rows, "sweep-table",
                        cfg.seed, cfg.digest())
    write_table(os.path.join(out, "sweep_runs.csv"),
                ["decoder_mode", "p", "layers", "neurons", "n_params", "rel_l2", "seconds"], runs,
                "sweep-runs", cfg.seed, cfg.digest())
    return tables


def cmd_sweep(args):
    if not args.config:
        raise SystemExit("sweep needs --config with a [sweep] section")
    cfg, extra = load_config(args.config, extra_sections=("sweep",))
    sw = extra.get("sweep", {})
    unknown = set(sw) - {"layers", "neurons", "p", "decoder_modes", "t_eval", "grid"}
    if unknown:
        raise ConfigError(f"unknown keys in [sweep]: {sorted(unknown)}")
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if args.deterministic:
        cfg = cfg.with_overrides(deterministic=True)
    set_deterministic(cfg.deterministic)
    modes = [m.strip() for m in sw.get("decoder_modes", "fourier, plain").split(",") if m.strip()]
    tables = run_sweep(
        cfg,
        _int_list(sw.get("layers", "1, 3, 5, 7")),
        _int_list(sw.get("neurons", "10, 50, 100, 150")),
        _int_list(sw.get("p", "10, 50, 100, 150")),
        modes,
        float(sw.get("t_eval", 1.15)),
        int(sw.get("grid", 100)),
        _out_dir(args, cfg),
    )
    print(f"wrote {len(tables)} sweep tables")
    return tables


def cmd_oracle(args):
    problem = args.problem or "laplace2d"
    meta = {"problem": problem, "geometry": args.geometry, "t": args.t, "n": args.n}
    digest = _digest(meta)
    out = _out_dir(args)
    if problem == "helmholtz3d":
        k = args.wavenumber
        theta, phi, d = _direction_grid(args)
        path = write_far_field(os.path.join(out, "oracle_far_field.csv"), theta, phi,
                               oracles.sphere_far_field(k, d), 0, digest)
        print(f"sphere series far field: {path}")
        return path
    t = args.t if args.t is not None else (0.0 if args.geometry == "unit-circle" else 1.15)
    spec = eng.make_problem(problem, args.geometry, (t, t))
    sol = oracles.nystrom_solve(spec, t, args.n, augment_constant=args.augment_constant)
    dens = sol.potential_nodes
    rows = zip(sol.alpha, sol.points[:, 0], sol.points[:, 1], *dens.T)
    header = ["alpha", "x", "y"] + (["density"] if dens.shape[1] == 1 else ["density_v", "density_w"])
    write_table(os.path.join(out, "oracle_density.csv"), header, rows, "density", 0, digest)
    if spec.geometry == "unit-circle":
        grid = eng.polar_grid(np.linspace(0.05, 0.9, 40), 128)
    else:
        grid = eng.interior_grid(spec.curve, t, n=args.grid, delta=args.delta)
    pts = grid.valid_points
    if len(pts) == 0:
        raise EmptyGridError("evaluation grid is empty after masking; nothing written")
    values, truth = sol.field(pts), spec.truth(pts)
    write_field(os.path.join(out, f"oracle_field_t{_tag(t)}.csv"), pts, values, truth, 0, digest)
    err = eng.relative_l2(values, truth)
    print(f"Nyström N={args.n} cond={sol.condition:.3e} relative_l2={err:.6e}")
    return err


def cmd_gradcheck(args):
    """FD check of autograd on a width-10 model for every problem's full loss."""
    base = load_config(args.config) if args.config else RunConfig()
    worst = 0.0
    for problem in ("laplace2d", "biharmonic2d", "helmholtz3d"):
        spec = eng.make_problem(problem)
        dim = spec.dim
        n_out = 1 if problem == "laplace2d" else 2
        model = OperatorModel(dim, n_out, encoder_depth=base.encoder_depth, encoder_width=10, p=10,
                              decoder_depth=base.decoder_depth, decoder_width=10,
                              fourier_features=8, decoder_mode=base.decoder_mode,
                              fusion=base.fusion).initialize(base.seed)
        batch = eng.make_batch(spec, 2, 8, 64, seed=base.seed)
        err = gradcheck(lambda: eng.mc_loss(model, spec, batch, base.beta), list(model.parameters()),
                        corrupt=args.corrupt_adjoint)
        print(f"{problem}: {model.n_params()} parameters, max relative error {err:.3e}")
        worst = max(worst, err)
    ok = worst < 1e-6
    print(f"{'PASS' if ok else 'FAIL'} max relative error {worst:.3e}")
    return 0 if ok else 1


# -- argument parsing --------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="neural-bie", description="Boundary-integral operator learning")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config")
        p.add_argument("--checkpoint")
        p.add_argument("--t", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--out")
        return p

    def grid_opts(p):
        p.add_argument("--grid", type=int, default=200, help="points per side of the field grid")
        p.add_argument("--delta", type=float, default=0.01, help="exclusion band around the boundary")
        p.add_argument("--half-width", type=float, default=4.0, help="half width of the 3D slice box")

    def dir_opts(p):
        p.add_argument("--n-theta", type=int, default=37)
        p.add_argument("--n-phi", type=int, default=72)

    p = common(sub.add_parser("train", help="train a model"))
    p.add_argument("--problem", choices=["laplace2d", "biharmonic2d", "helmholtz3d"])
    p.add_argument("--steps", type=int)

    p = common(sub.add_parser("eval", help="evaluate a field on a grid"))
    grid_opts(p)
    p.add_argument("--m-eval", type=int)

    p = common(sub.add_parser("far-field", help="far-field pattern on a direction grid"))
    dir_opts(p)
    p.add_argument("--m-eval", type=int)
    p.add_argument("--compare-series", action="store_true", help="report error vs the sphere series")

    common(sub.add_parser("sweep", help="hyper-parameter sweep"))

    p = common(sub.add_parser("oracle", help="reference solutions"))
    p.add_argument("--problem", choices=["laplace2d", "biharmonic2d", "helmholtz3d"])
    p.add_argument("--geometry", choices=sorted(geo.CURVES))
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--wavenumber", type=float, default=2 * math.pi)
    p.add_argument("--augment-constant", action="store_true")
    grid_opts(p)
    dir_opts(p)

    p = common(sub.add_parser("gradcheck", help="finite-difference gradient check"))
    p.add_argument("--corrupt-adjoint", action="store_true", help=argparse.SUPPRESS)
    return ap


VERBS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "far-field": cmd_far_field,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verb == "oracle" and args.n < 64:
        parser.error(f"--n must be at least 64, got {args.n}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    if args.checkpoint is None and args.verb in ("eval", "far-field"):
        parser.error(f"{args.verb} needs --checkpoint")
    try:
        result = VERBS[args.verb](args)
    except (ConfigError, EmptyGridError, geo.DomainError, oracles.SingularSystemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return result if args.verb == "gradcheck" else 0


if __name__ == "__main__":
    sys.exit(main())
