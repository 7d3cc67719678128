"""Command line drivers: ``converge``, ``infsup``, ``kh`` and ``geom-check``.

Exit status is 0 on success, 1 on a hard error (bad configuration, solver
failure) and 2 when ``--gate`` is given and an acceptance threshold is
violated. The configuration is fully validated before anything is
written.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import re
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("tracestokes")

EXPERIMENTS = ("converge", "infsup", "kh", "geom-check")
CASES = ("killing", "harmonic2", "generic")
SURFACES = ("sphere", "ellipsoid", "plane")
OUT_ENV = "TRACESTOKES_OUT"
DEFAULT_LEVELS = {"converge": [1, 2, 3], "infsup": [1, 2, 3], "geom-check": [1, 2, 3], "kh": [3]}
PARAM_KEYS = ("rho_u", "rho_p", "eta", "gamma")
KH_KEYS = ("nu", "dt", "t_end")

# acceptance gates
GATE_EOC = {1: 0.8, 2: 1.8, 3: 2.7}
INFSUP_BAND = (0.90, 1.05)
P1P1_DECAY = 2.0
KH_ALPHA = (2e-3, 8e-3)
KH_DRIFT = 10.0


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


def parse_levels(text) -> list[int]:
    """``"a..b"`` (inclusive), ``"a"`` or a list of integers."""
    if isinstance(text, (list, tuple)):
        levels = [int(v) for v in text]
    else:
        m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+)\s*)?", str(text))
        if m is None:
            raise ConfigError(f"bad level range {text!r}; expected a..b")
        a = int(m.group(1))
        b = int(m.group(2)) if m.group(2) is not None else a
        if b < a:
            raise ConfigError(f"empty level range {text!r}")
        levels = list(range(a, b + 1))
    if not levels or min(levels) < 0:
        raise ConfigError("levels must be non-negative")
    return levels


def parse_pair(text: str) -> tuple[int, int]:
    """``"P2P1"`` or ``"P2-P1"`` -> ``(2, 1)``."""
    m = re.fullmatch(r"[Pp](\d)\s*[-_]?\s*[Pp](\d)", text.strip())
    if m is None:
        raise ConfigError(f"bad element pair {text!r}; expected e.g. P2P1")
    return int(m.group(1)), int(m.group(2))


@dataclass
class RunConfig:
    """Resolved settings of one CLI run; round-trips through canonical JSON."""

    experiment: str
    k: int = 2
    pressure_degree: int | None = None
    levels: list = field(default_factory=list)
    case: str = "killing"
    surface: str = "sphere"
    lift: str = "exact"
    params: dict = field(default_factory=dict)
    kh: dict = field(default_factory=dict)
    out: str = ""
    deterministic: bool = False
    threads: int | None = None
    vtk_subdiv: int = 3
    vtk: bool = True
    snapshot_every: int = 16
    gate: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not isinstance(self.k, int) or not 1 <= self.k <= 5:
            raise ConfigError("k must be an integer in 1..5")
        if self.pressure_degree is None:
            self.pressure_degree = max(self.k - 1, 1)
        if not isinstance(self.pressure_degree, int) or not 1 <= self.pressure_degree <= self.k:
            raise ConfigError("pressure_degree must be an integer in 1..k")
        if not self.levels:
            self.levels = list(DEFAULT_LEVELS[self.experiment])
        self.levels = parse_levels(self.levels)
        if self.experiment == "kh" and len(self.levels) != 1:
            raise ConfigError("kh runs on a single level")
        if self.experiment in ("converge", "geom-check") and len(self.levels) < 2:
            raise ConfigError(f"{self.experiment} needs at least two levels")
        if self.case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}; choose from {', '.join(CASES)}")
        if self.surface not in SURFACES:
            raise ConfigError(f"unknown surface {self.surface!r}")
        if self.surface != "sphere" and self.experiment in ("converge", "kh"):
            raise ConfigError(f"{self.experiment} is only set up on the unit sphere")
        if not isinstance(self.params, dict) or not isinstance(self.kh, dict):
            raise ConfigError("params and kh must be JSON objects")
        if self.lift not in ("exact", "discrete"):
            raise ConfigError("lift must be 'exact' or 'discrete'")
        for name, value in self.params.items():
            if name not in PARAM_KEYS:
                raise ConfigError(f"unknown parameter {name!r}")
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise ConfigError(f"parameter {name} must be a finite number")
            if value < 0 or (value == 0 and name != "gamma"):
                raise ConfigError(f"parameter {name} must be positive")
        for name, value in self.kh.items():
            if name not in KH_KEYS:
                raise ConfigError(f"unknown kh setting {name!r}")
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
                raise ConfigError(f"kh setting {name} must be positive")
        if self.threads is not None and (not isinstance(self.threads, int) or self.threads < 1):
            raise ConfigError("threads must be a positive integer")
        if self.deterministic:
            self.threads = 1
        if not isinstance(self.vtk_subdiv, int) or self.vtk_subdiv < 1:
            raise ConfigError("vtk_subdiv must be a positive integer")
        if not isinstance(self.snapshot_every, int) or self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be a non-negative integer")
        if not self.out:
            self.out = os.environ.get(OUT_ENV) or str(Path("tracestokes-out") / self.experiment)

    @property
    def pair(self) -> str:
        return f"P{self.k}P{self.pressure_degree}"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        if "experiment" not in data:
            raise ConfigError("configuration lacks 'experiment'")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from exc
        return cls.from_dict(data)


# ---------------------------------------------------------------- output helpers


def version_string() -> str:
    """``git describe`` of the source tree, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        res = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if res.returncode == 0 and res.stdout.strip():
            return f"{__version__}+g{res.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def jsonable(obj):
    """Plain Python types for ``json``; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, data: dict) -> Path:
    # repr of a float is the shortest string that round-trips exactly
    path.write_text(json.dumps(jsonable(data), indent=2, sort_keys=True, allow_nan=False) + "\n",
                    encoding="utf-8")
    return path


def _csv_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_csv_value(v) for v in r])
    return path


def _report(config: RunConfig, **data) -> dict:
    return {"version": version_string(), "config": config.to_dict(), **data}


def _levelset(config: RunConfig):
    from .levelset import make_levelset
    return make_levelset(config.surface)


def _stokes_params(config: RunConfig):
    from .assembly import StokesParams
    return StokesParams(**config.params)


# ---------------------------------------------------------------- experiments


def run_converge(config: RunConfig, out: Path) -> tuple[dict, bool]:
    from .analysis import convergence_study
    from .manufactured import make_manufactured
    from .vtk import write_surface

    phi = _levelset(config)
    case = make_manufactured(phi, config.case)

    def dump(level, disc, system, sol):
        log.info("level %d: residual %.2e, %d velocity dofs", level, sol.residual, system.n_u)
        if config.vtk:
            write_surface(out / f"solution_level{level}.vtk", disc, sol.u, sol.p, config.vtk_subdiv)

    rows = convergence_study(phi, case, config.k, config.levels, config.pressure_degree,
                             _stokes_params(config), config.lift, callback=dump)
    cols = ["level", "h", "err_A", "err_M", "err", "err_L2_u", "eoc_A", "eoc_M", "eoc", "eoc_L2_u",
            "velocity_dofs", "pressure_dofs", "active_tets"]
    write_csv(out / "convergence.csv", cols,
              [[r.as_dict()[c] if c in r.as_dict() else r.stats[c] for c in cols] for r in rows])
    threshold = GATE_EOC.get(config.k, config.k - 0.3)
    passed = bool(rows[-1].eoc >= threshold)
    report = _report(config, rows=[r.as_dict() for r in rows],
                     gate={"quantity": "eoc of err_A + err_M, last two levels",
                           "threshold": threshold, "value": rows[-1].eoc, "passed": passed})
    write_json(out / "convergence.json", report)
    print(f"{'level':>5} {'h':>10} {'err_A':>11} {'err_M':>11} {'eoc':>6}")
    for r in rows:
        print(f"{r.level:5d} {r.h:10.4e} {r.err_A:11.4e} {r.err_M:11.4e} {r.eoc:6.2f}")
    return report, passed


def run_infsup(config: RunConfig, out: Path) -> tuple[dict, bool]:
    from .assembly import assemble
    from .discretization import discretize
    from .solvers import smallest_positive_eig

    phi = _levelset(config)
    table = []
    for level in config.levels:
        t0 = time.perf_counter()
        disc = discretize(phi, config.k, level, pressure_degree=config.pressure_degree,
                          mode=config.lift)
        system = assemble(disc, _stokes_params(config))
        rep = smallest_positive_eig(system, config.pair)
        table.append({"level": level, **rep.as_dict(), "mesh": disc.stats(),
                      "seconds": time.perf_counter() - t0})
        log.info("level %d: lambda_min %.5f (residual %.1e)", level, rep.lam_min, rep.residual)
    lams = [r["lam_min"] for r in table]
    if config.pressure_degree == config.k:
        gate = {"quantity": "lam_min(first) / lam_min(last)", "threshold": P1P1_DECAY,
                "value": lams[0] / lams[-1]}
        gate["passed"] = bool(len(lams) > 1 and gate["value"] >= P1P1_DECAY)
    else:
        gate = {"quantity": "lam_min in band", "band": list(INFSUP_BAND), "value": min(lams),
                "passed": bool(all(INFSUP_BAND[0] <= v <= INFSUP_BAND[1] for v in lams))}
    report = _report(config, pair=config.pair, table=table, gate=gate)
    write_json(out / "eigen.json", report)
    print(f"{'level':>5} {'lambda_min':>12}  ({config.pair})")
    for r in table:
        print(f"{r['level']:5d} {r['lam_min']:12.5f}")
    return report, gate["passed"]


def run_geometry(config: RunConfig, out: Path) -> tuple[dict, bool]:
    from .analysis import geometry_report
    from .discretization import discretize
    from .vtk import write_surface

    phi = _levelset(config)
    discs = []
    for level in config.levels:
        disc = discretize(phi, config.k, level, mode=config.lift)
        discs.append(disc)
        if config.vtk:
            write_surface(out / f"surface_level{level}.vtk", disc, subdiv=config.vtk_subdiv)
    rep = geometry_report(discs)
    for r, d, level in zip(rep["rows"], discs, config.levels):
        r["level"] = level
        r["mesh"] = d.stats()
    last = rep["rows"][-1]
    k = config.k
    checks = {"dist": (last["eoc_dist"], k + 1 - 0.3), "normal": (last["eoc_normal"], k - 0.3)}
    if config.surface == "plane":
        passed = bool(all(r["dist"] <= 1e-12 and r["normal"] <= 1e-12 for r in rep["rows"]))
    else:
        passed = bool(all(v >= t for v, t in checks.values()))
    report = _report(config, **rep,
                     gate={"eoc_thresholds": {k_: t for k_, (_, t) in checks.items()}, "passed": passed})
    write_json(out / "geometry.json", report)
    print(f"{'level':>5} {'h':>10} {'max|phi|':>11} {'eoc':>6} {'normal':>11} {'eoc':>6}")
    for r in rep["rows"]:
        print(f"{r['level']:5d} {r['h']:10.4e} {r['dist']:11.4e} {r['eoc_dist']:6.2f} "
              f"{r['normal']:11.4e} {r['eoc_normal']:6.2f}")
    return report, passed


def run_kh(config: RunConfig, out: Path) -> tuple[dict, bool]:
    from .discretization import discretize
    from .unsteady import KHConfig, bdf2_run, vorticity
    from .vtk import write_surface

    kc = KHConfig(level=config.levels[0], k=config.k, gamma=config.params.get("gamma", 1.0),
                  **config.kh)
    phi = _levelset(config)
    disc = discretize(phi, kc.k, kc.level, pressure_degree=config.pressure_degree, mode=config.lift)
    snapdir = out / "snapshots"
    count = [0]

    def snap(t, u):
        if config.vtk:
            snapdir.mkdir(exist_ok=True)
            write_surface(snapdir / f"vorticity_{count[0]:04d}.vtk", disc, u=u,
                          subdiv=config.vtk_subdiv,
                          extra={"vorticity": lambda c, r: vorticity(disc, u, c, r)})
        count[0] += 1

    def progress(n, t, e):
        if n % 16 == 0:
            log.info("t = %.4f  E = %.12g", t, e)

    series, _ = bdf2_run(kc, disc=disc, snapshot_every=config.snapshot_every, snapshot_cb=snap,
                         progress=progress)
    write_csv(out / "energy.csv", ["t", "E", "drift"],
              zip(series.times, series.energies, series.drift))
    E = np.asarray(series.energies)
    steps = np.diff(E) / E[:-1]
    monotone = bool(np.all(steps[2:] <= 1e-12)) if len(steps) > 2 else True
    gate = {"monotone": monotone, "alpha": series.alpha, "alpha_band": list(KH_ALPHA),
            "drift_constant": series.stats.get("drift_constant"), "drift_limit": KH_DRIFT}
    gate["passed"] = bool(series.error is None and monotone
                          and KH_ALPHA[0] <= series.alpha <= KH_ALPHA[1]
                          and gate["drift_constant"] <= KH_DRIFT)
    report = _report(config, kh=asdict(kc), alpha=series.alpha, window=series.window,
                     error=series.error, stats=series.stats, snapshots=count[0], gate=gate)
    write_json(out / "run.json", report)
    print(f"alpha = {series.alpha:.4e}, E(0) = {E[0]:.6g}, E(T) = {E[-1]:.6g}, "
          f"drift/h^2 = {gate['drift_constant']:.3g}")
    if series.error is not None:
        from .solvers import SolverError
        raise SolverError(series.error)
    return report, gate["passed"]


RUNNERS = {"converge": run_converge, "infsup": run_infsup, "kh": run_kh, "geom-check": run_geometry}


def run(config: RunConfig) -> tuple[dict, bool]:
    """Execute one experiment; returns the report and the gate verdict."""
    from threadpoolctl import threadpool_limits

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(limits=config.threads):
        return RUNNERS[config.experiment](config, out)


# ---------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tracestokes", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with RunConfig fields; flags take precedence")
        p.add_argument("--k", type=int, help="velocity (and geometry) degree")
        p.add_argument("--pressure-degree", type=int)
        p.add_argument("--pair", help="element pair such as P2P1 (sets --k and --pressure-degree)")
        p.add_argument("--levels", help="inclusive range a..b or a single level")
        p.add_argument("--level", type=int, help="single level (same as --levels n)")
        p.add_argument("--case", choices=CASES)
        p.add_argument("--surface", choices=SURFACES)
        p.add_argument("--lift", choices=("exact", "discrete"))
        for key in PARAM_KEYS:
            p.add_argument(f"--{key.replace('_', '-')}", type=float, dest=f"param_{key}")
        for key in KH_KEYS:
            p.add_argument(f"--{key.replace('_', '-')}", type=float, dest=f"kh_{key}")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./tracestokes-out/<exp>)")
        p.add_argument("--deterministic", action="store_true", default=None)
        p.add_argument("--threads", type=int)
        p.add_argument("--vtk-subdiv", type=int)
        p.add_argument("--no-vtk", dest="vtk", action="store_false", default=None)
        p.add_argument("--snapshot-every", type=int)
        p.add_argument("--gate", action="store_true", default=None,
                       help="exit with status 2 if the acceptance threshold is missed")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        if data.get("experiment", args.experiment) != args.experiment:
            raise ConfigError(f"config is for {data['experiment']!r}, not {args.experiment!r}")
    data["experiment"] = args.experiment
    if args.pair:
        data["k"], data["pressure_degree"] = parse_pair(args.pair)
    for name in ("k", "pressure_degree", "case", "surface", "lift", "out", "deterministic",
                 "threads", "vtk_subdiv", "vtk", "snapshot_every", "gate"):
        v = getattr(args, name)
        if v is not None:
            data[name] = v
    if args.levels is not None and args.level is not None:
        raise ConfigError("give either --levels or --level")
    if args.levels is not None:
        data["levels"] = parse_levels(args.levels)
    elif args.level is not None:
        data["levels"] = [args.level]
    params = dict(data.get("params", {}))
    kh = dict(data.get("kh", {}))
    for key in PARAM_KEYS:
        if getattr(args, f"param_{key}") is not None:
            params[key] = getattr(args, f"param_{key}")
    for key in KH_KEYS:
        if getattr(args, f"kh_{key}") is not None:
            kh[key] = getattr(args, f"kh_{key}")
    data["params"], data["kh"] = params, kh
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = config_from_args(args)
    except (ConfigError, TypeError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 1
    try:
        _, passed = run(config)
    except Exception as exc:  # hard error
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if config.gate and not passed:
        print("acceptance threshold violated", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
