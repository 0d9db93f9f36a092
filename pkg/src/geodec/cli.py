"""Command-line entry point: config parsing, runs, sweeps, figure data.

Subcommands: ``run`` (single configuration to a time-series CSV),
``sweep`` (one or two parameter axes to a sweep CSV), ``figure`` (preset
sweeps and the control experiment, CSV plus a rendered PNG), ``selftest``
(closed-form oracle suite).  Exit codes: 0 success, 2 configuration error,
3 numerical failure, 4 assertion violation.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .bath import BathParams, TimeGrid, splitmix64
from .closedform import (
    closed_system_phase,
    dephasing_avg_phase_series,
    dissipative_avg_phase_series,
    gamma_expansion_leading,
    lambda_expansion_phase,
    markov_phase,
)
from .control import run_leo_experiment
from .dynamics import IntegrationError
from .ensemble import ExcessiveExclusions, average_phase_series
from .geomphase import BranchJump, PhaseSingularity
from .models import ControlField, ModelKind, build_model
from ._integrate import BlowUpError

__all__ = ["RunConfig", "GeodecConfigError", "parse_config", "emit_csv", "main"]

SERIES_HEADER = (
    "t,beta_tot_re,beta_tot_im,beta_dyn_re,beta_dyn_im,beta_re,beta_im,stderr"
)
LEO_SUP_BOUND = 5e-3

_NUMERIC_ERRORS = (
    IntegrationError,
    BlowUpError,
    PhaseSingularity,
    BranchJump,
    ExcessiveExclusions,
    FloatingPointError,
)


class GeodecConfigError(ValueError):
    """Invalid or unknown configuration input."""


@dataclass(frozen=True)
class SweepAxis:
    name: str
    lo: float
    hi: float
    points: int

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points)


@dataclass(frozen=True)
class RunConfig:
    """One fully resolved experiment; determines every output byte."""

    model: ModelKind
    omega: float = 1.0
    omega0: float = 0.0
    gamma: float = 1.0
    Gamma: float = 1.0
    lam: float = 1.0
    theta: float = 1.0
    c_x: Optional[float] = None
    Omega_c: Optional[float] = None
    dt: Optional[float] = None
    t_final: Optional[float] = None
    n_traj: int = 10_000
    master_seed: int = 0
    n_workers: int = 1
    mode: str = "mc"
    ordering: str = "phase_of_means"
    sweep_x: Optional[SweepAxis] = None
    sweep_y: Optional[SweepAxis] = None
    output: Optional[str] = None

    def resolved_dt(self) -> float:
        return self.dt if self.dt is not None else 1e-3 * 2.0 * np.pi / self.omega

    def resolved_t_final(self) -> float:
        return self.t_final if self.t_final is not None else 2.0 * np.pi / self.omega

    def grid(self) -> TimeGrid:
        return TimeGrid.from_t_final(self.resolved_t_final(), self.resolved_dt())

    def bath(self) -> BathParams:
        return BathParams(gamma=self.gamma, Gamma=self.Gamma, omega0=self.omega0)

    def control(self) -> Optional[ControlField]:
        if self.c_x is None:
            return None
        return ControlField(c_x=self.c_x, Omega_c=self.Omega_c or 0.0)


_FLOAT_KEYS = {
    "omega", "omega0", "gamma", "Gamma", "lambda", "theta",
    "c_x", "Omega_c", "dt", "t_final",
}
_INT_KEYS = {"n_traj", "master_seed", "n_workers"}
_STR_KEYS = {"model", "mode", "ordering", "output", "sweep_x", "sweep_y"}
_ALL_KEYS = _FLOAT_KEYS | _INT_KEYS | _STR_KEYS
_SWEEPABLE = {"theta", "gamma", "lambda", "omega", "omega0", "Gamma"}


def _parse_axis(text: str, context: str) -> SweepAxis:
    parts = text.replace(",", ":").split(":")
    if len(parts) != 4:
        raise GeodecConfigError(
            f"{context}: expected name:min:max:points, got {text!r}"
        )
    name = parts[0].strip()
    if name not in _SWEEPABLE:
        raise GeodecConfigError(
            f"{context}: cannot sweep {name!r}; choose from {sorted(_SWEEPABLE)}"
        )
    try:
        lo, hi = float(parts[1]), float(parts[2])
        points = int(parts[3])
    except ValueError as exc:
        raise GeodecConfigError(f"{context}: {exc}") from exc
    if not (np.isfinite(lo) and np.isfinite(hi)) or points < 1:
        raise GeodecConfigError(f"{context}: bad axis range {text!r}")
    return SweepAxis(name=name, lo=lo, hi=hi, points=points)


def _read_config_file(path: str) -> dict:
    """Flat key = value pairs; [section] headers group but do not namespace."""
    parser = configparser.ConfigParser(strict=True, interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_string("[_]\n" + fh.read(), source=path)
    except OSError as exc:
        raise GeodecConfigError(f"{path}: {exc}") from exc
    except configparser.Error as exc:
        raise GeodecConfigError(f"{path}: {exc}") from exc
    raw = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key not in _ALL_KEYS:
                raise GeodecConfigError(
                    f"{path} [{section}]: unknown key {key!r}"
                )
            if key in raw:
                raise GeodecConfigError(f"{path}: duplicate key {key!r}")
            raw[key] = value
    return raw


def _coerce(key: str, value, context: str):
    if key in _STR_KEYS:
        return str(value)
    try:
        out = int(value) if key in _INT_KEYS else float(value)
    except (TypeError, ValueError) as exc:
        raise GeodecConfigError(f"{context}: {key} = {value!r} is not numeric") from exc
    if not np.isfinite(out):
        raise GeodecConfigError(f"{context}: {key} must be finite, got {value!r}")
    return out


def parse_config(
    file_values: Optional[dict] = None, flag_values: Optional[dict] = None
) -> RunConfig:
    """Merge file values and flag overrides into a validated RunConfig.

    Flags win over file values; every key is checked against the known set
    and every value validated before any computation (fail-closed).
    """
    merged = {}
    for source, ctx in ((file_values or {}, "config"), (flag_values or {}, "flag")):
        for key, value in source.items():
            if value is None:
                continue
            if key not in _ALL_KEYS:
                raise GeodecConfigError(f"{ctx}: unknown key {key!r}")
            merged[key] = _coerce(key, value, ctx)

    if "model" not in merged:
        raise GeodecConfigError("missing required key 'model'")
    try:
        kind = ModelKind(merged.pop("model"))
    except ValueError as exc:
        raise GeodecConfigError(str(exc)) from exc

    kwargs = {"model": kind}
    for key, value in merged.items():
        if key == "lambda":
            kwargs["lam"] = value
        elif key in ("sweep_x", "sweep_y"):
            kwargs[key] = _parse_axis(value, key)
        else:
            kwargs[key] = value

    if "master_seed" not in kwargs and "GEODEC_SEED" in os.environ:
        kwargs["master_seed"] = _coerce(
            "master_seed", os.environ["GEODEC_SEED"], "GEODEC_SEED"
        )

    cfg = RunConfig(**kwargs)
    if not 0.0 <= cfg.theta <= np.pi:
        raise GeodecConfigError(f"theta must lie in [0, pi], got {cfg.theta}")
    if cfg.lam < 0:
        raise GeodecConfigError(f"lambda must be >= 0, got {cfg.lam}")
    if cfg.gamma <= 0:
        raise GeodecConfigError(f"gamma must be > 0, got {cfg.gamma}")
    if cfg.Gamma < 0:
        raise GeodecConfigError(f"Gamma must be >= 0, got {cfg.Gamma}")
    if cfg.dt is not None and cfg.dt <= 0:
        raise GeodecConfigError(f"dt must be > 0, got {cfg.dt}")
    if cfg.n_traj < 2:
        raise GeodecConfigError(f"n_traj must be >= 2, got {cfg.n_traj}")
    if cfg.n_workers < 1:
        raise GeodecConfigError(f"n_workers must be >= 1, got {cfg.n_workers}")
    if cfg.mode not in ("mc", "analytic", "both"):
        raise GeodecConfigError(f"mode must be mc, analytic or both, got {cfg.mode!r}")
    if cfg.ordering not in ("phase_of_means", "mean_of_phases"):
        raise GeodecConfigError(f"unknown ordering {cfg.ordering!r}")
    if cfg.c_x is not None and cfg.model is not ModelKind.LEO:
        raise GeodecConfigError("control fields apply to the leo model only")
    return cfg


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def emit_csv(path: str, header: str, rows) -> None:
    """Write rows of floats under a fixed header, 12 significant digits, LF."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise RuntimeError(f"cannot write {path}: {exc}") from exc


def _series_rows(t, beta_tot, beta_dyn, beta, stderr):
    cols = np.column_stack(
        [t, beta_tot.real, beta_tot.imag, beta_dyn.real, beta_dyn.imag,
         beta.real, beta.imag, stderr]
    )
    return cols


def _analytic_series(cfg: RunConfig):
    grid = cfg.grid()
    if cfg.model is ModelKind.DEPHASING:
        return dephasing_avg_phase_series(cfg.omega, cfg.lam, cfg.bath(), cfg.theta, grid)
    if cfg.model is ModelKind.DISSIPATIVE:
        return dissipative_avg_phase_series(cfg.omega, cfg.lam, cfg.bath(), cfg.theta, grid)
    exp = run_leo_experiment(cfg.omega, cfg.lam, cfg.bath(), cfg.theta, cfg.control(), grid)
    series = exp.controlled if cfg.control() is not None else exp.uncontrolled
    return series.beta_tot, series.beta_dyn, series.beta


def _mc_series(cfg: RunConfig):
    model = build_model(
        cfg.model, cfg.omega, cfg.lam, cfg.bath(), cfg.theta, cfg.grid(),
        control=cfg.control(),
    )
    return average_phase_series(
        model, cfg.n_traj, cfg.master_seed,
        n_workers=cfg.n_workers, ordering=cfg.ordering,
    )


def _cmd_run(cfg: RunConfig, do_assert: bool) -> int:
    grid = cfg.grid()
    t = grid.times()
    out = cfg.output or "geodec_run.csv"
    if cfg.mode == "analytic":
        bt, bd, b = _analytic_series(cfg)
        rows = _series_rows(t, bt, bd, b, np.zeros_like(t))
        emit_csv(out, SERIES_HEADER, rows)
    elif cfg.mode == "mc":
        ens = _mc_series(cfg)
        rows = _series_rows(
            t, ens.beta_tot.mean, ens.beta_dyn.mean, ens.beta.mean, ens.beta.stderr
        )
        emit_csv(out, SERIES_HEADER, rows)
    else:
        ens = _mc_series(cfg)
        bt, bd, b = _analytic_series(cfg)
        residual = np.abs(ens.beta.mean - b)
        rows = np.column_stack(
            [
                _series_rows(
                    t, ens.beta_tot.mean, ens.beta_dyn.mean, ens.beta.mean,
                    ens.beta.stderr,
                ),
                b.real, b.imag, residual,
            ]
        )
        emit_csv(out, SERIES_HEADER + ",analytic_beta_re,analytic_beta_im,residual", rows)
    print(f"wrote {out}")
    return 0


def _sweep_value(cfg: RunConfig, assignments: dict):
    overrides = {("lam" if k == "lambda" else k): v for k, v in assignments.items()}
    cell = replace(cfg, **overrides)
    if cfg.mode == "analytic":
        _, _, b = _analytic_series(cell)
        return complex(b[-1]), 0.0
    ens = _mc_series(cell)
    return complex(ens.beta.mean[-1]), float(ens.beta.stderr[-1])


def _cmd_sweep(cfg: RunConfig, out_default: str) -> int:
    if cfg.sweep_x is None:
        raise GeodecConfigError("sweep requires sweep_x")
    axes = [cfg.sweep_x] + ([cfg.sweep_y] if cfg.sweep_y is not None else [])
    names = [ax.name for ax in axes]
    header = ",".join(names + ["beta_im", "beta_re", "stderr"])
    rows = []
    cell_index = 0
    for xv in axes[0].values():
        yvals = axes[1].values() if len(axes) == 2 else [None]
        for yv in yvals:
            assignments = {names[0]: float(xv)}
            if yv is not None:
                assignments[names[1]] = float(yv)
            cell = replace(cfg, master_seed=splitmix64(cfg.master_seed ^ (cell_index + 1)))
            beta, stderr = _sweep_value(cell, assignments)
            coords = [xv] + ([yv] if yv is not None else [])
            rows.append(list(coords) + [beta.imag, beta.real, stderr])
            cell_index += 1
    out = cfg.output or out_default
    emit_csv(out, header, rows)
    print(f"wrote {out}")
    return 0


_FIG_PRESETS = {
    "fig1a": dict(x="theta:0:%f:41" % np.pi, y="gamma:0.05:3:41", lam=1.0),
    "fig1b": dict(x="theta:0:%f:41" % np.pi, y="lambda:0.05:3:41", gamma=1.0),
    "fig2": dict(x="lambda:0.05:3:41", y="gamma:0.05:3:41", theta=1.0),
}


def _render_surface(csv_path: str, png_path: str, x_name: str, y_name: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    x = np.unique(data[x_name])
    y = np.unique(data[y_name])
    z = data["beta_im"].reshape(len(x), len(y))
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    mesh = ax.pcolormesh(x, y, z.T, shading="gouraud", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="Im beta")
    ax.set_xlabel(x_name)
    ax.set_ylabel(y_name)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)


def _render_leo(exp, png_path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = exp.grid.times()
    fig, (ax_re, ax_im) = plt.subplots(2, 1, figsize=(6.0, 6.0), sharex=True)
    for name, series in (
        ("target", exp.target),
        ("uncontrolled", exp.uncontrolled),
        ("controlled", exp.controlled),
    ):
        ax_re.plot(t, series.beta.real, label=name)
        ax_im.plot(t, series.beta.imag, label=name)
    ax_re.set_ylabel("Re beta")
    ax_im.set_ylabel("Im beta")
    ax_im.set_xlabel("t")
    ax_re.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)


def _cmd_figure(fig_id: str, cfg: RunConfig, do_assert: bool) -> int:
    out = cfg.output or f"{fig_id}.csv"
    png = os.path.splitext(out)[0] + ".png"
    if fig_id == "fig3":
        grid = TimeGrid.from_t_final(
            2.0 * np.pi / cfg.omega, 2.0 * np.pi / (cfg.omega * 20_000)
        )
        exp = run_leo_experiment(
            cfg.omega, cfg.lam, cfg.bath(), cfg.theta, cfg.control(), grid
        )
        series = exp.controlled
        rows = _series_rows(
            grid.times(), series.beta_tot, series.beta_dyn, series.beta,
            np.zeros(grid.n_steps + 1),
        )
        emit_csv(out, SERIES_HEADER, rows)
        _render_leo(exp, png)
        print(f"wrote {out} and {png}")
        print(
            f"sup |Im beta| controlled = {exp.sup_im_controlled:.6f}, "
            f"uncontrolled = {exp.sup_im_uncontrolled:.6f}"
        )
        if do_assert and not (
            exp.sup_im_controlled < LEO_SUP_BOUND
            and exp.sup_im_uncontrolled >= LEO_SUP_BOUND
        ):
            print(f"assertion failed: bound {LEO_SUP_BOUND}", file=sys.stderr)
            return 4
        return 0

    preset = _FIG_PRESETS[fig_id]
    fixed = {k: v for k, v in preset.items() if k not in ("x", "y")}
    cfg = replace(
        cfg,
        model=ModelKind.DISSIPATIVE,
        sweep_x=_parse_axis(preset["x"], fig_id),
        sweep_y=_parse_axis(preset["y"], fig_id),
        output=out,
        **fixed,
    )
    code = _cmd_sweep(cfg, out)
    if code == 0:
        _render_surface(out, png, cfg.sweep_x.name, cfg.sweep_y.name)
        print(f"wrote {png}")
    return code


def _selftest_checks():
    """Closed-form oracle suite: cheap internal consistency identities."""
    checks = []
    two_pi = 2.0 * np.pi

    def wrap(x, period):
        return (x + period / 2.0) % period - period / 2.0

    for theta in (0.4, 1.2, 2.0):
        got = closed_system_phase(1.0, theta, two_pi)
        want = np.pi * (1.0 + np.cos(theta))
        ok = abs(wrap(got.real - want, two_pi)) < 1e-9 and abs(got.imag) < 1e-12
        checks.append((f"closed-system phase theta={theta}", ok))

    bath = BathParams(gamma=500.0)
    grid = TimeGrid.from_t_final(two_pi, two_pi / 20_000)
    _, _, b = dissipative_avg_phase_series(1.0, 1.0, bath, 1.0, grid)
    mk = markov_phase(1.0, 1.0)
    shifted = b[-1].real + np.pi * round((mk.real - b[-1].real) / np.pi)
    rel = abs(complex(shifted, b[-1].imag) - mk) / abs(mk)
    checks.append(("markov limit gamma=500 within 2%", rel < 0.02))

    bath1 = BathParams(gamma=1.0)
    grid_pi = TimeGrid.from_t_final(np.pi, 1e-3 * two_pi)
    _, _, b_small = dissipative_avg_phase_series(1.0, 0.05, bath1, 1.0, grid_pi)
    exp_small = lambda_expansion_phase(1.0, 1.0, np.pi, 0.05)
    _, _, b_zero = dissipative_avg_phase_series(1.0, 1e-9, bath1, 1.0, grid_pi)
    num = abs(b_small[-1] - exp_small)
    den = abs(b_small[-1] - b_zero[-1])
    checks.append(("lambda expansion at lam=0.05, t=pi", num < 0.05 * den))

    eps = 1e-3
    bath_eps = BathParams(gamma=eps)
    _, _, b_eps = dissipative_avg_phase_series(1.0, 1.0, bath_eps, 1.0, grid_pi)
    coeff = (b_eps[-1] - closed_system_phase(1.0, 1.0, np.pi)) / eps
    want = gamma_expansion_leading(1.0, 1.0, np.pi)
    checks.append(
        ("gamma-expansion coefficient at t=pi", abs(coeff - want) < 0.05 * abs(want))
    )

    _, _, b_deph = dephasing_avg_phase_series(1.0, 1.0, bath1, 1.2, grid)
    checks.append(("dephasing beta purely real", np.max(np.abs(b_deph.imag)) < 1e-12))
    return checks


def _cmd_selftest() -> int:
    failed = 0
    for name, ok in _selftest_checks():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failed += 0 if ok else 1
    return 0 if failed == 0 else 4


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--model", choices=[k.value for k in ModelKind])
    for name in ("omega", "omega0", "gamma", "Gamma", "lambda", "theta",
                 "c-x", "Omega-c", "dt", "t-final"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float)
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--workers", dest="n_workers", type=int)
    p.add_argument("--mode", choices=["mc", "analytic", "both"])
    p.add_argument("--ordering", choices=["phase_of_means", "mean_of_phases"])
    p.add_argument("--output")
    p.add_argument("--assert", dest="do_assert", action="store_true",
                   help="exit 4 if an acceptance bound is violated")


def _flags_to_dict(args: argparse.Namespace) -> dict:
    keys = _ALL_KEYS - {"sweep_x", "sweep_y"}
    out = {k: getattr(args, k, None) for k in keys}
    out["sweep_x"] = getattr(args, "sweep_x", None)
    out["sweep_y"] = getattr(args, "sweep_y", None)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geodec",
        description="Geometric phases of diffusive open-quantum-system trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single configuration to a time-series CSV")
    _add_common_flags(p_run)

    p_sweep = sub.add_parser("sweep", help="final-time beta over one or two axes")
    _add_common_flags(p_sweep)
    p_sweep.add_argument("--sweep-x", dest="sweep_x", help="name:min:max:points")
    p_sweep.add_argument("--sweep-y", dest="sweep_y", help="name:min:max:points")

    p_fig = sub.add_parser("figure", help="preset figure data (CSV + PNG)")
    p_fig.add_argument("fig_id", choices=["fig1a", "fig1b", "fig2", "fig3"])
    _add_common_flags(p_fig)

    sub.add_parser("selftest", help="closed-form oracle suite")
    return parser


_FIG_DEFAULTS = {
    "fig3": dict(
        model="leo", gamma=0.3, lam=1.0, theta=1.2, c_x=10.0, Omega_c=50.0
    ),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return _cmd_selftest()
    try:
        file_values = _read_config_file(args.config) if args.config else {}
        flags = _flags_to_dict(args)
        if args.command == "figure":
            defaults = _FIG_DEFAULTS.get(args.fig_id, {})
            for key, value in defaults.items():
                key = "lambda" if key == "lam" else key
                if flags.get(key) is None and key not in file_values:
                    flags[key] = value
            flags.setdefault("model", None)
            if flags["model"] is None and "model" not in file_values:
                flags["model"] = "leo" if args.fig_id == "fig3" else "dissipative"
            flags["mode"] = flags.get("mode") or file_values.get("mode") or "analytic"
        cfg = parse_config(file_values, flags)
    except GeodecConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "run":
            return _cmd_run(cfg, args.do_assert)
        if args.command == "sweep":
            return _cmd_sweep(cfg, "geodec_sweep.csv")
        return _cmd_figure(args.fig_id, cfg, args.do_assert)
    except GeodecConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
