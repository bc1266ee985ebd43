"""Scenario configs, the builtin experiment families and the sweep runner.

A scenario is a flat TOML file. Powers are given in dBm and interference
levels in dB relative to the noise variance; everything is converted to
linear mW at this boundary. A few keys (N, eta_db, P_rho_dbm, qos) accept a
list, in which case each entry becomes its own plotted series.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import tomli

from .gp import NonConvergenceError
from .gpopt import (QoSInfeasibleError, dinkelbach_ee, equal_power, equal_power_outcome,
                    maximize_se, maxmin_ee)
from .plotting import PlotSpec, emit_plot
from .rates import (bound_coeffs, half_duplex_config, mc_ergodic_sum_rate, rate_report,
                    snr_lower, user_energy_efficiency)
from .relay import MRC, ZF, DegenerateChannelError, canon_scheme
from .sysmodel import ConfigError, PowerAllocation, SystemConfig, db2lin, paper_config

log = logging.getLogger(__name__)

CSV_FIELDS = ["scenario", "sweep_var", "sweep_value", "scheme", "mode", "metric", "value", "stderr", "seed"]
MODES = ("ee", "maxmin", "se", "equal", "none")
SWEEPS = ("P_rho", "eta", "qos_level", "iterations", "P_R", "interference")
_SWEEP_ALIASES = {"sigma_LIR2/sigma_UI": "interference", "prho": "P_rho", "qos": "qos_level"}
# sweep variable -> the system key it overrides at every grid point
_SWEEP_KEY = {"P_rho": "P_rho_dbm", "eta": "eta_db", "qos_level": "qos", "interference": "interference_db"}
SERIES_KEYS = ("N", "eta_db", "P_rho_dbm", "qos")

_INT, _NUM, _STR, _BOOL = "int", "number", "string", "bool"
# key -> (type, accepts a list of that type)
_KEYS = {
    "name": (_STR, False), "description": (_STR, False), "seed": (_INT, False),
    "sweep_var": (_STR, False), "grid": (_NUM, True), "schemes": (_STR, True),
    "mode": (_STR, False), "trials": (_INT, False), "baseline": (_BOOL, False),
    "compare_hd": (_BOOL, False), "eps": (_NUM, False), "max_outer": (_INT, False),
    "estimation": (_STR, False), "plot_metric": (_STR, False),
    "paper_N": (_INT, True), "paper_K": (_INT, False),
    "N": (_INT, True), "K": (_INT, False), "T": (_INT, False), "tau": (_INT, False),
    "eta_db": (_NUM, True), "P_rho_dbm": (_NUM, True), "qos": (_NUM, True),
    "lir_db": (_NUM, False), "ui_db": (_NUM, False), "interference_db": (_NUM, False),
    "sigma2_dbm": (_NUM, False), "P_max_dbm": (_NUM, False), "PR_max_dbm": (_NUM, False),
    "Pc_dbm": (_NUM, False), "fading": (_STR, False), "zf_dof": (_STR, False),
}
_REQUIRED = ("name", "seed", "sweep_var", "grid", "schemes", "mode")
_RUN_KEYS = {"name", "description", "seed", "sweep_var", "grid", "schemes", "mode", "trials", "baseline",
             "compare_hd", "eps", "max_outer", "estimation", "plot_metric", "paper_N", "paper_K"}


class ScenarioConfigError(ValueError):
    """Invalid scenario config; carries the offending key and its line."""

    def __init__(self, msg, key=None, line=None, source=None):
        where = f"{source or '<config>'}:{line}" if line else (source or "<config>")
        head = f"{where}: key '{key}': " if key else f"{where}: "
        super().__init__(head + msg)
        self.key, self.line, self.source = key, line, source


@dataclass(frozen=True)
class Scenario:
    name: str
    sweep_var: str
    grid: tuple
    schemes: tuple
    mode: str
    seed: int
    trials: int = 0
    params: dict = field(default_factory=dict)
    baseline: bool = False
    compare_hd: bool = False
    eps: float = 1e-3
    max_outer: int = 100
    estimation: str = "MMSE"
    plot_metric: str | None = None
    paper_N: tuple = (500,)
    paper_K: int = 5
    description: str = ""

    @property
    def base(self) -> SystemConfig:
        """System config of the first series at the first grid point."""
        return _system_config(self, _series_list(self)[0], self.grid[0])

    def to_toml(self) -> str:
        """Flat TOML that parses back to the same scenario."""
        out = []
        run = dict(name=self.name, description=self.description, seed=self.seed, sweep_var=self.sweep_var, grid=list(self.grid),
                   schemes=list(self.schemes), mode=self.mode, trials=self.trials, baseline=self.baseline,
                   compare_hd=self.compare_hd, eps=self.eps, max_outer=self.max_outer,
                   estimation=self.estimation, paper_N=list(self.paper_N), paper_K=self.paper_K)
        if self.plot_metric:
            run["plot_metric"] = self.plot_metric
        for k, v in itertools.chain(run.items(), self.params.items()):
            out.append(f"{k} = {_toml_value(v)}")
        return "\n".join(out) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


# ----------------------------------------------------------------------------- parsing

def _key_line(text: str, key: str):
    pat = re.compile(rf"^\s*([\"']?){re.escape(key)}\1\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    return None


def _type_ok(v, kind) -> bool:
    if kind == _BOOL:
        return isinstance(v, bool)
    if isinstance(v, bool):
        return False
    if kind == _INT:
        return isinstance(v, int)
    if kind == _NUM:
        return isinstance(v, (int, float)) and math.isfinite(v)
    return isinstance(v, str)


def parse_scenario(text: str, source: str | None = None) -> Scenario:
    """Parse and validate a TOML scenario; errors name the key and line."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioConfigError(f"TOML syntax error: {exc}", source=source) from None

    def fail(key, msg):
        raise ScenarioConfigError(msg, key=key, line=_key_line(text, key) if key else None, source=source)

    for key, val in raw.items():
        if key not in _KEYS:
            fail(key, "unknown key")
        kind, listable = _KEYS[key]
        if isinstance(val, list):
            if not listable:
                fail(key, f"expected a single {kind}, got a list")
            if not val:
                fail(key, "list must not be empty")
            bad = [x for x in val if not _type_ok(x, kind)]
            if bad:
                fail(key, f"expected {kind} entries, got {bad[0]!r}")
        elif not _type_ok(val, kind):
            fail(key, f"expected {kind}, got {val!r}")
    for key in _REQUIRED:
        if key not in raw:
            raise ScenarioConfigError("missing required key", key=key, source=source)

    sweep = _SWEEP_ALIASES.get(raw["sweep_var"], raw["sweep_var"])
    if sweep not in SWEEPS:
        fail("sweep_var", f"must be one of {', '.join(SWEEPS)}")
    grid = raw["grid"] if isinstance(raw["grid"], list) else [raw["grid"]]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        fail("grid", "values must be strictly increasing")
    if sweep == "iterations" and (grid[0] < 1 or any(float(g) != int(g) for g in grid)):
        fail("grid", "iteration grid must hold positive integers")
    if sweep == "qos_level" and grid[0] < 0:
        fail("grid", "QoS rates must be non-negative")
    mode = raw["mode"]
    if mode not in MODES:
        fail("mode", f"must be one of {', '.join(MODES)}")
    schemes = raw["schemes"] if isinstance(raw["schemes"], list) else [raw["schemes"]]
    try:
        schemes = tuple(dict.fromkeys(canon_scheme(s) for s in schemes))
    except ValueError as exc:
        fail("schemes", str(exc))
    if raw["seed"] < 0:
        fail("seed", "must be non-negative")

    if sweep == "iterations" and mode not in ("ee", "maxmin"):
        fail("mode", "an iterations sweep needs mode 'ee' or 'maxmin'")
    if sweep == "iterations" and raw.get("compare_hd", False):
        fail("compare_hd", "not supported with an iterations sweep")
    if sweep == "P_R" and mode not in ("none", "equal"):
        fail("mode", "a P_R sweep fixes the allocation; use mode 'none' or 'equal'")
    qos_used = sweep == "qos_level" or any(q > 0 for q in np.atleast_1d(raw.get("qos", 0)))
    if qos_used and mode not in ("ee", "maxmin", "se"):
        fail("qos" if "qos" in raw else "mode", f"QoS targets need an optimizer mode, not '{mode}'")
    if raw.get("fading", "paper") not in ("paper", "unit"):
        fail("fading", "must be 'paper' or 'unit'")
    if raw.get("zf_dof", "complex") not in ("complex", "real"):
        fail("zf_dof", "must be 'complex' or 'real'")
    if raw.get("estimation", "MMSE").upper() not in ("MMSE", "LS"):
        fail("estimation", "must be 'MMSE' or 'LS'")
    trials = raw.get("trials", 0)
    if trials < 0:
        fail("trials", "must be >= 0")
    if raw.get("eps", 1e-3) <= 0:
        fail("eps", "must be positive")
    if raw.get("max_outer", 100) < 1:
        fail("max_outer", "must be >= 1")
    if "interference_db" in raw and ("lir_db" in raw or "ui_db" in raw):
        fail("interference_db", "sets both lir_db and ui_db; do not combine them")
    if sweep == "interference" and ({"lir_db", "ui_db", "interference_db"} & raw.keys()):
        key = next(k for k in ("interference_db", "lir_db", "ui_db") if k in raw)
        fail(key, "conflicts with sweep_var 'interference'")
    swept = _SWEEP_KEY.get(sweep)
    if swept and swept in raw and swept != "interference_db":
        fail(swept, f"is controlled by sweep_var '{sweep}'")

    params = {k: (tuple(v) if isinstance(v, list) else v) for k, v in raw.items() if k not in _RUN_KEYS}
    paper_N = raw.get("paper_N", [500])
    scn = Scenario(
        name=raw["name"], sweep_var=sweep, grid=tuple(float(g) for g in grid), schemes=schemes, mode=mode,
        seed=int(raw["seed"]), trials=int(trials), params=params, baseline=raw.get("baseline", False),
        compare_hd=raw.get("compare_hd", False), eps=float(raw.get("eps", 1e-3)),
        max_outer=int(raw.get("max_outer", 100)), estimation=raw.get("estimation", "MMSE").upper(),
        plot_metric=raw.get("plot_metric"), paper_N=tuple(paper_N if isinstance(paper_N, list) else [paper_N]),
        paper_K=int(raw.get("paper_K", 5)), description=raw.get("description", ""))
    if not re.fullmatch(r"[A-Za-z0-9_.-]+", scn.name):
        fail("name", "use letters, digits, '_', '-' or '.' (it becomes a file name)")
    _check_configs(scn, text, source)
    return scn


def _check_configs(scn: Scenario, text="", source=None):
    """Build every system config once so model errors surface before any run."""
    for ser in _series_list(scn):
        for x in (scn.grid[0], scn.grid[-1]):
            try:
                cfg = _system_config(scn, ser, x)
            except ConfigError as exc:
                key = next((k for k in ("K", "N", "T", "tau") if k in str(exc)), None)
                raise ScenarioConfigError(str(exc), key=key, line=_key_line(text, key) if key else None,
                                          source=source) from None
            if ZF in scn.schemes and cfg.N <= 2 * cfg.K + 1:
                raise ScenarioConfigError(f"ZF needs N > 2K+1 (N={cfg.N}, K={cfg.K})", key="schemes",
                                          line=_key_line(text, "schemes"), source=source)


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), source=str(path))


def with_paper_scale(scn: Scenario) -> Scenario:
    params = dict(scn.params)
    params["N"] = scn.paper_N if len(scn.paper_N) > 1 else scn.paper_N[0]
    params["K"] = scn.paper_K
    return replace(scn, params=params)


# ----------------------------------------------------------------------------- builtin families

def builtin_scenarios() -> list[Scenario]:
    """The seven evaluation families at desk scale (N=128 unless the family fixes N)."""
    eta_grid = tuple(float(x) for x in range(-10, 21, 2))
    return [
        Scenario("pilot_sweep", "P_rho", tuple(float(x) for x in range(-10, 41, 5)), (MRC, ZF), "ee", 1,
                 params=dict(N=128, K=5, eta_db=(0.0, 20.0)),
                 description="EE-optimal power vs pilot power at eta = 0 and 20 dB"),
        Scenario("eta_sweep", "eta", eta_grid, (MRC, ZF), "ee", 2, baseline=True,
                 params=dict(N=128, K=5, P_rho_dbm=20.0),
                 description="optimized EE vs eta against equal power"),
        Scenario("qos_sweep", "eta", tuple(float(x) for x in range(-10, 21, 5)), (ZF,), "ee", 3,
                 params=dict(N=128, K=5, P_rho_dbm=20.0, qos=(0.0, 0.2, 0.5, 0.7)),
                 description="ZF EE vs eta under per-user rate targets"),
        Scenario("convergence", "iterations", tuple(float(x) for x in range(1, 41)), (MRC, ZF), "ee", 4,
                 params=dict(N=128, K=5, P_rho_dbm=20.0, eta_db=(0.0, 10.0)),
                 description="true EE after each GP solve of the EE optimizer"),
        Scenario("bound_vs_exact", "P_R", tuple(float(x) for x in range(0, 41, 5)), (MRC, ZF), "none", 5,
                 trials=500, params=dict(N=(64, 256), K=10, P_rho_dbm=10.0, fading="unit", interference_db=0.0),
                 paper_N=(64, 256), paper_K=10,
                 description="closed-form SE vs Monte-Carlo SE at equal power"),
        Scenario("se_comparison", "eta", tuple(float(x) for x in range(-10, 21, 5)), (MRC, ZF), "se", 6,
                 baseline=True, params=dict(N=128, K=5, P_rho_dbm=20.0),
                 description="SE-optimal allocation vs equal power"),
        Scenario("fd_vs_hd", "interference", (-10.0, 0.0, 10.0), (MRC,), "ee", 7, compare_hd=True,
                 params=dict(N=128, K=5, P_rho_dbm=20.0, eta_db=(0.0, 10.0, 20.0)),
                 description="full- vs half-duplex MRC EE vs loop/inter-user interference"),
    ]


def builtin(name: str) -> Scenario:
    for s in builtin_scenarios():
        if s.name == name:
            return s
    raise KeyError(name)


# ----------------------------------------------------------------------------- evaluation

def _series_list(scn: Scenario) -> list[dict]:
    """Cartesian product of the list-valued series keys."""
    swept = _SWEEP_KEY.get(scn.sweep_var)
    keys = [k for k in SERIES_KEYS if k != swept and isinstance(scn.params.get(k), tuple)]
    combos = itertools.product(*(scn.params[k] for k in keys))
    return [dict(zip(keys, c)) for c in combos]


def _series_label(ser: dict) -> str:
    parts = []
    for k, v in ser.items():
        if k == "N":
            parts.append(f"N={v}")
        elif k == "eta_db":
            parts.append(f"eta={v:g}dB")
        elif k == "P_rho_dbm":
            parts.append(f"Prho={v:g}dBm")
        elif k == "qos":
            parts.append(f"r={v:g}" if v > 0 else "no QoS")
    return ", ".join(parts)


def _value(scn, ser, key, default):
    if key in ser:
        return ser[key]
    v = scn.params.get(key, default)
    return v[0] if isinstance(v, tuple) else v


def _system_config(scn: Scenario, ser: dict, x: float) -> SystemConfig:
    get = lambda k, d: _value(scn, ser, k, d)  # noqa: E731
    sweep = scn.sweep_var
    inter = x if sweep == "interference" else get("interference_db", None)
    K = int(get("K", 5))
    kw = dict(N=int(get("N", 128)), K=K,
              eta_db=float(x if sweep == "eta" else get("eta_db", 10.0)),
              P_rho_dbm=float(x if sweep == "P_rho" else get("P_rho_dbm", 20.0)),
              lir_db=float(inter if inter is not None else get("lir_db", 0.0)),
              ui_db=float(inter if inter is not None else get("ui_db", 0.0)),
              sigma2_dbm=float(get("sigma2_dbm", 0.0)))
    extra = {}
    for key, field_ in (("P_max_dbm", "P_max"), ("PR_max_dbm", "PR_max"), ("Pc_dbm", "Pc")):
        if key in scn.params:
            extra[field_] = float(db2lin(get(key, 0.0)))
    if "T" in scn.params:
        extra["T"] = int(get("T", 200))
    if "tau" in scn.params:
        extra["tau"] = int(get("tau", 2 * K))
    if get("fading", "paper") == "unit":
        extra["Du"] = np.ones(2 * K)
        extra["Dd"] = np.ones(2 * K)
    extra["zf_dof"] = get("zf_dof", "complex")
    try:
        cfg = paper_config(**kw, **extra)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _qos_at(scn, ser, x):
    q = float(x) if scn.sweep_var == "qos_level" else float(_value(scn, ser, "qos", 0.0))
    return q if q > 0 else None


def _fixed_alloc(scn, cfg, x) -> PowerAllocation:
    if scn.sweep_var == "P_R":
        PR = float(db2lin(x))
        return PowerAllocation(np.full(cfg.M, PR / cfg.M), PR)
    return equal_power(cfg)


def _optimize(scn, cfg, scheme, mode, qos):
    if mode == "ee":
        return dinkelbach_ee(cfg, scheme, qos=qos, eps=scn.eps, L=scn.max_outer)
    if mode == "maxmin":
        return maxmin_ee(cfg, scheme, qos=qos, eps=scn.eps, L=scn.max_outer)
    if mode == "se":
        return maximize_se(cfg, scheme, qos=qos)
    return equal_power_outcome(cfg, scheme)


def _outcome_metrics(out, scale=1.0):
    return [("ee", scale * out.ee), ("se", scale * out.se), ("min_user_ee", scale * out.min_user_ee),
            ("total_power", out.allocation.total + 0.0), ("iterations", float(out.iterations))]


@dataclass(frozen=True)
class _Task:
    scn: Scenario
    i_series: int
    i_point: int
    scheme: str


def _run_task(task: _Task) -> list[tuple]:
    """Rows (i_point, scheme_label, mode, metric, value, stderr) for one sweep point and scheme.

    An iterations sweep runs one solve per series and emits every grid point from its trace.
    """
    scn = task.scn
    ser = _series_list(scn)[task.i_series]
    x = scn.grid[task.i_point]
    if scn.sweep_var == "iterations":
        return _run_iterations(task, ser)
    return [(task.i_point,) + r for r in _point_rows(task, ser, x)]


def _run_iterations(task: _Task, ser) -> list[tuple]:
    scn = task.scn
    label = _series_label(ser)
    name = f"{task.scheme} [{label}]" if label else task.scheme
    cfg = _system_config(scn, ser, scn.grid[0])
    try:
        out = _optimize(scn, cfg, task.scheme, scn.mode, _qos_at(scn, ser, scn.grid[0]))
    except QoSInfeasibleError as exc:
        log.info("%s: %s", name, exc)
        return [(j, name, scn.mode, "infeasible", 1.0, 0.0) for j in range(len(scn.grid))]
    except (NonConvergenceError, np.linalg.LinAlgError) as exc:
        log.warning("%s failed: %s", name, exc)
        return [(j, name, scn.mode, "failed", 1.0, 0.0) for j in range(len(scn.grid))]
    steps = out.step_trace
    rows = []
    for j, x in enumerate(scn.grid):
        # past convergence the trace holds its last value
        lam, ee, mu = steps[min(int(x), len(steps)) - 1]
        rows += [(j, name, scn.mode, "ee", ee, 0.0), (j, name, scn.mode, "min_user_ee", mu, 0.0),
                 (j, name, scn.mode, "lambda", lam, 0.0)]
    return rows


def _point_rows(task: _Task, ser, x) -> list[tuple]:
    scn = task.scn
    label = _series_label(ser)
    name = f"{task.scheme} [{label}]" if label else task.scheme
    cfg = _system_config(scn, ser, x)
    qos = _qos_at(scn, ser, x)
    rows = []
    nan = float("nan")
    try:
        if scn.mode == "none":
            alloc = _fixed_alloc(scn, cfg, x)
            rep = rate_report(cfg, alloc, task.scheme)
            rows.append((name, "none", "sum_se_bound", rep.sum_se, 0.0))
            if scn.trials > 0:
                rng = np.random.default_rng(np.random.SeedSequence(scn.seed, spawn_key=(task.i_series, task.i_point)))
                mc = mc_ergodic_sum_rate(cfg, alloc, task.scheme, scn.trials, rng, method=scn.estimation)
                rows.append((name, "none", "sum_se_mc", cfg.prelog * mc.sum_rate, cfg.prelog * mc.stderr))
            return rows
        if scn.mode == "equal" and scn.sweep_var == "P_R":
            alloc = _fixed_alloc(scn, cfg, x)
            rep = rate_report(cfg, alloc, task.scheme)
            mu = float(np.min(user_energy_efficiency(cfg, alloc, rep.snr)))
            return [(name, "equal", "ee", rep.ee, 0.0), (name, "equal", "se", rep.sum_se, 0.0),
                    (name, "equal", "min_user_ee", mu, 0.0)]
        variants = [(name, cfg, 1.0)]
        if scn.compare_hd:
            variants.append((f"{task.scheme}_HD [{label}]" if label else f"{task.scheme}_HD",
                             half_duplex_config(cfg), 0.5))
        for vname, vcfg, scale in variants:
            try:
                out = _optimize(scn, vcfg, task.scheme, scn.mode, qos)
            except QoSInfeasibleError as exc:
                log.info("%s %s=%g: %s", vname, scn.sweep_var, x, exc)
                rows += [(vname, scn.mode, m, nan, 0.0) for m in ("ee", "se", "min_user_ee")]
                rows.append((vname, scn.mode, "infeasible", 1.0, 0.0))
                continue
            rows += [(vname, scn.mode, m, v, 0.0) for m, v in _outcome_metrics(out, scale)]
            if qos is not None:
                rows.append((vname, scn.mode, "infeasible", 0.0, 0.0))
            if scn.baseline and scn.mode != "equal":
                eq = equal_power_outcome(vcfg, task.scheme)
                rows += [(vname, "equal", m, v, 0.0) for m, v in _outcome_metrics(eq, scale)[:3]]
    except (NonConvergenceError, DegenerateChannelError, np.linalg.LinAlgError) as exc:
        log.warning("%s %s=%g failed: %s", name, scn.sweep_var, x, exc)
        rows = [(name, scn.mode, "failed", 1.0, 0.0)]
    return rows


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MMRELAY_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class ScenarioResult:
    scenario: Scenario
    rows: list
    csv_path: Path | None = None
    svg_path: Path | None = None

    @property
    def n_infeasible(self) -> int:
        return sum(1 for r in self.rows if r["metric"] == "infeasible" and r["value"] == 1.0)

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r["metric"] == "failed")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(float(v)) if k in ("sweep_value", "value", "stderr") else v) for k, v in r.items()})
        return buf.getvalue()

    def metric(self, metric, scheme=None, mode=None):
        """(x, y, stderr) arrays for one metric, optionally filtered by series label and mode."""
        sel = [r for r in self.rows if r["metric"] == metric and (scheme is None or r["scheme"] == scheme)
               and (mode is None or r["mode"] == mode)]
        return tuple(np.array([r[k] for r in sel], dtype=float) for k in ("sweep_value", "value", "stderr"))


def _plot_spec(scn: Scenario) -> PlotSpec:
    if scn.plot_metric:
        metrics = (scn.plot_metric,)
    elif scn.mode == "none":
        metrics = ("sum_se_bound", "sum_se_mc") if scn.trials else ("sum_se_bound",)
    elif scn.mode == "maxmin":
        metrics = ("min_user_ee",)
    elif scn.mode == "se":
        metrics = ("se",)
    else:
        metrics = ("ee",)
    units = {"ee": "EE [bit/s/Hz per mW]", "min_user_ee": "worst-user EE [bit/s/Hz per mW]",
             "se": "SE [bit/s/Hz]", "sum_se_bound": "sum SE [bit/s/Hz]"}
    return PlotSpec(metrics=metrics, title=scn.name, ylabel=units.get(metrics[0], metrics[0]))


def run_scenario(source, out_dir=None, paper_scale: bool = False, trials: int | None = None,
                 seed: int | None = None) -> ScenarioResult:
    """Run every (series, scheme, grid point); write ``<name>.csv`` and ``<name>.svg`` if ``out_dir``."""
    scn = source if isinstance(source, Scenario) else load_scenario(source)
    if paper_scale:
        scn = with_paper_scale(scn)
    if trials is not None:
        scn = replace(scn, trials=int(trials))
    if seed is not None:
        scn = replace(scn, seed=int(seed))
    if paper_scale:
        _check_configs(scn)
    n_series = len(_series_list(scn))
    points = [0] if scn.sweep_var == "iterations" else range(len(scn.grid))
    tasks = [_Task(scn, i, j, s) for i in range(n_series) for s in scn.schemes for j in points]
    n = _threads()
    if n > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(n, len(tasks))) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    rows = []
    for res in results:
        for j, label, mode, metric, value, se in res:
            rows.append(dict(scenario=scn.name, sweep_var=scn.sweep_var, sweep_value=scn.grid[j],
                             scheme=label, mode=mode, metric=metric, value=float(value), stderr=float(se),
                             seed=scn.seed))
    result = ScenarioResult(scn, rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.csv_path = out / f"{scn.name}.csv"
        result.csv_path.write_text(result.to_csv(), encoding="utf-8")
        try:
            emit_plot(rows, _plot_spec(scn), out / f"{scn.name}.svg")
            result.svg_path = out / f"{scn.name}.svg"
        except ValueError as exc:
            log.warning("no plot for %s: %s", scn.name, exc)
    return result
