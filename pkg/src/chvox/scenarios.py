"""Time loop and the validation scenarios (convergence, spinodal, droplet, breakthrough)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from chvox.basis import l2_project
from chvox.config import ScenarioConfig
from chvox.diagnostics import (
    bulk_shift,
    discrete_energy,
    element_means,
    error_norms,
    front_position,
    line_sample,
    mass_balance_residual,
    observed_orders,
    total_mass,
)
from chvox.grid import GridError, build_grid, read_mask
from chvox.io import CsvLog, write_dump, write_vtk
from chvox.manufactured import SineSolution
from chvox.newton import KrylovConfig, NewtonConfig, PreconditionerCache, newton_solve
from chvox.operators import (
    ConstantVelocity,
    Discretization,
    FaceNormalVelocity,
    VelocityField,
    ZeroVelocity,
    duct_flow,
    plug_flow,
)
from chvox.stepper import FrozenStateError, ModelParams, Problem, TimeSchedule

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"


@dataclass
class StepRecord:
    step: int
    time: float
    mass: float
    chemical_energy: float
    gradient_energy: float
    total_energy: float
    newton_iters: int
    krylov_iters_total: int
    final_residual: float
    stationary_flag: bool
    residual_history: list = field(default_factory=list, repr=False)
    mass_balance: float = 0.0

    def row(self) -> dict:
        return self.__dict__


class Simulation:
    """Advances ``c_h`` step by step and records the per-step observables."""

    def __init__(self, problem: Problem, X0, newton: NewtonConfig | None = None,
                 krylov: KrylovConfig | None = None, t0=0.0):
        self.problem = problem
        self.disc = problem.disc
        self.X = np.array(X0, dtype=float)
        if self.X.shape != (self.disc.n_dof,):
            raise ValueError(f"initial coefficients must have length {self.disc.n_dof}")
        self.t = float(t0)
        self.newton = newton or NewtonConfig()
        self.cache = PreconditionerCache(krylov or KrylovConfig())
        self.E = problem.mass_modes()
        self.n = 0
        self._tau = None

    def energy(self, X=None):
        X = self.X if X is None else X
        return discrete_energy(self.disc, X, self.problem.params.kappa, self.problem.A, self.t)

    def initial_record(self) -> StepRecord:
        e = self.energy()
        return StepRecord(0, self.t, total_mass(self.disc, self.X), e.chemical, e.gradient,
                          e.total, 0, 0, 0.0, False)

    def step(self, t_n, tau) -> StepRecord:
        if tau != self._tau:
            # the fast preconditioners depend on tau
            self.cache.invalidate()
            self._tau = tau
        system = self.problem.build_step(self.X, t_n, tau)
        res = newton_solve(system, self.X, self.newton, self.cache.config, self.cache, self.E)
        X_old, self.X, self.t = self.X, res.Y, t_n
        self.n += 1
        balance = 0.0
        if system.has_flow:
            balance = mass_balance_residual(
                self.disc, self.X, X_old, tau, self.problem.velocity, t_n, self.problem.c_in
            )
        e = self.energy()
        return StepRecord(
            self.n, t_n, total_mass(self.disc, self.X), e.chemical, e.gradient, e.total,
            res.iterations, res.krylov_iterations, res.final_residual, res.stationary,
            res.history, balance,
        )

    def run(self, schedule: TimeSchedule, stop_when_stationary=False, max_steps=0,
            on_step: Callable | None = None) -> list:
        records = []
        for n, _t_prev, t_n, tau in schedule.steps():
            rec = self.step(t_n, tau)
            records.append(rec)
            if on_step is not None:
                on_step(self, rec)
            if stop_when_stationary and rec.stationary_flag:
                break
            if max_steps and n >= max_steps:
                break
        return records


# -- configuration helpers ------------------------------------------------------


def solver_configs(cfg: ScenarioConfig):
    newton = NewtonConfig(tol_abs=cfg.tol_abs, tol_rel=cfg.tol_rel, max_iters=cfg.newton_max_iters)
    krylov = KrylovConfig(
        restart=cfg.krylov_restart,
        rtol=cfg.krylov_rtol,
        atol=cfg.krylov_atol,
        max_iters=cfg.krylov_max_iters,
        preconditioner=cfg.preconditioner,
    )
    return newton, krylov


def load_mask(spec: str, N: int) -> np.ndarray:
    """``""`` (full cube), ``builtin:<name>`` or a mask file path."""
    if not spec:
        return np.ones((N, N, N), dtype=bool)
    if spec.startswith("builtin:"):
        return read_mask(DATA_DIR / f"{spec[8:]}.mask")
    return read_mask(spec, N)


def make_velocity(spec: str, grid) -> VelocityField:
    """``zero``, ``constant:vx,vy,vz``, ``plug:axis,u``, ``duct:axis,u,lo0,lo1,hi0,hi1`` or ``file:path``."""
    kind, _, args = spec.partition(":")
    vals = [a.strip() for a in args.split(",") if a.strip()]
    if kind == "zero":
        return ZeroVelocity()
    if kind == "constant":
        return ConstantVelocity(tuple(float(v) for v in vals))
    if kind == "plug":
        return plug_flow(grid, int(vals[0]), float(vals[1]))
    if kind == "duct":
        axis, u = int(vals[0]), float(vals[1])
        lo0, lo1, hi0, hi1 = (float(v) for v in vals[2:6])
        return duct_flow(axis, (lo0, lo1), (hi0, hi1), u)
    if kind == "file":
        return FaceNormalVelocity.from_file(args, grid)
    raise ValueError(f"unknown velocity specification {spec!r}")


def round_half_away(a):
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


def random_alpha(n, seed) -> np.ndarray:
    """``n`` uniform samples in ``[-1, 1]`` from a PCG64 stream."""
    return np.random.Generator(np.random.PCG64(seed)).uniform(-1.0, 1.0, n)


def spinodal_initial(n_elements, seed, variant="mixed") -> np.ndarray:
    """Element means of the random initial data.

    ``mixed``: ``-0.4 + 0.05 round(alpha)``.  ``sign``: ``+-1`` by the sign of
    ``alpha`` (zero mean, no element in between).
    """
    alpha = random_alpha(n_elements, seed)
    if variant == "mixed":
        return -0.4 + 0.05 * round_half_away(alpha)
    if variant == "sign":
        return np.where(alpha >= 0.0, 1.0, -1.0)
    raise ValueError(f"unknown spinodal variant {variant!r}")


def pow2_steps(n) -> bool:
    return n > 0 and (n & (n - 1)) == 0


class Output:
    """CSV time series plus VTK snapshots at selected step counts."""

    def __init__(self, cfg: ScenarioConfig, grid, disc, write=True):
        self.enabled = write
        self.cfg, self.grid, self.disc = cfg, grid, disc
        self.dir = Path(cfg.output_dir)
        self.csv = None
        if write:
            self.dir.mkdir(parents=True, exist_ok=True)
            self.csv = CsvLog(self.dir / cfg.csv)

    def wants_snapshot(self, n) -> bool:
        mode = self.cfg.snapshots
        if mode == "none":
            return False
        if mode == "pow2":
            return n == 0 or pow2_steps(n)
        if mode.startswith("every:"):
            return n % int(mode[6:]) == 0
        raise ValueError(f"unknown snapshot mode {mode!r}")

    def record(self, sim: Simulation, rec: StepRecord):
        if not self.enabled:
            return
        self.csv.write(rec.row())
        if self.wants_snapshot(rec.step):
            path = self.dir / f"{self.cfg.vtk_prefix}_{rec.step:06d}.vtk"
            write_vtk(path, self.grid, {"c": element_means(self.disc, sim.X)}, title=f"t={rec.time:.17g}")

    def close(self, sim: Simulation):
        if not self.enabled:
            return
        self.csv.close()
        if self.cfg.dump:
            write_dump(self.dir / self.cfg.dump, self.grid, self.disc.p, sim.X, sim.t)


# -- scenarios -----------------------------------------------------------------


@dataclass
class ConvergenceRow:
    level: int
    N: int
    n_elements: int
    n_steps: int
    l2: float | None
    l2_order: float | None
    h1: float | None
    h1_order: float | None
    seconds: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.l2 is not None


def center_values(f, grid) -> np.ndarray:
    return np.asarray(f(grid.element_centers), dtype=float)


def run_convergence_level(p, beta, level, kappa=1.0, Pe=1.0, T=1.0, initial="l2",
                          newton=None, krylov=None, solution=None) -> ConvergenceRow:
    """One refinement level: ``N = 2^level``, ``tau = T / (2^(p+1))^level``."""
    import time

    N = 2**level
    n_steps = (2 ** (p + 1)) ** level
    tau = T / n_steps
    grid = build_grid(np.ones((N, N, N), dtype=bool))
    disc = Discretization(grid, p)
    sol = solution or SineSolution(kappa=kappa, Pe=Pe, beta=beta)
    problem = Problem(disc, ModelParams(kappa, Pe, beta), sources=sol.sources())
    if initial == "center":
        X0 = l2_project(center_values(sol.initial, grid), grid, disc.basis).coeffs
    else:
        X0 = l2_project(sol.initial, grid, disc.basis).coeffs
    sim = Simulation(problem, X0, newton, krylov)
    t0 = time.perf_counter()
    try:
        sim.run(TimeSchedule.fixed(tau, T))
    except FrozenStateError:
        return ConvergenceRow(level, N, grid.n_elements, n_steps, None, None, None, None)
    err = error_norms(disc, sim.X, sol.c, sol.grad_c, T)
    return ConvergenceRow(level, N, grid.n_elements, n_steps, err.l2, None, err.h1_broken, None,
                          time.perf_counter() - t0)


def fill_orders(rows: list) -> list:
    """Orders between consecutive feasible levels."""
    prev = None
    for r in rows:
        if r.feasible and prev is not None:
            r.l2_order = observed_orders([prev.l2, r.l2])[1]
            r.h1_order = observed_orders([prev.h1, r.h1])[1]
        prev = r if r.feasible else None
    return rows


def run_convergence(cfg: ScenarioConfig, on_row: Callable | None = None) -> list:
    newton, krylov = solver_configs(cfg)
    kappa = cfg.kappa if cfg.kappa > 0 else 1.0
    rows = []
    for level in cfg.level_list():
        row = run_convergence_level(cfg.p, cfg.beta, level, kappa, cfg.Pe, cfg.T,
                                    cfg.initial or "l2", newton, krylov)
        rows.append(row)
        fill_orders(rows)
        if on_row is not None:
            on_row(row)
    return rows


def format_convergence(rows) -> str:
    def f(v, fmt):
        return "n/a" if v is None else format(v, fmt)

    out = [f"{'level':>5} {'N_el':>8} {'N_st':>7} {'L2':>11} {'(order)':>8} {'H1':>11} {'(order)':>8}"]
    for r in rows:
        out.append(
            f"{r.level:>5} {r.n_elements:>8} {r.n_steps:>7} {f(r.l2, '.4e'):>11} "
            f"{f(r.l2_order, '.3f'):>8} {f(r.h1, '.4e'):>11} {f(r.h1_order, '.3f'):>8}"
        )
    return "\n".join(out)


@dataclass
class RunResult:
    sim: Simulation
    records: list
    initial: StepRecord
    extra: dict = field(default_factory=dict)


def _schedule(cfg: ScenarioConfig) -> TimeSchedule:
    return TimeSchedule(cfg.time_pieces())


def _run(cfg, problem, X0, write_output):
    newton, krylov = solver_configs(cfg)
    sim = Simulation(problem, X0, newton, krylov)
    out = Output(cfg, problem.disc.grid, problem.disc, write_output)
    first = sim.initial_record()
    out.record(sim, first)
    try:
        records = sim.run(_schedule(cfg), cfg.stop_when_stationary, cfg.max_steps, out.record)
    finally:
        out.close(sim)
    return RunResult(sim, records, first)


def run_spinodal(cfg: ScenarioConfig, write_output=True) -> RunResult:
    N = cfg.N
    grid = build_grid(load_mask(cfg.mask, N), cfg.exterior or None)
    disc = Discretization(grid, cfg.p, cfg.sigma_value)
    means = spinodal_initial(grid.n_elements, cfg.rng_seed, cfg.initial or "mixed")
    X0 = l2_project(means, grid, disc.basis).coeffs
    problem = Problem(disc, ModelParams(cfg.kappa_value, cfg.Pe, cfg.beta))
    return _run(cfg, problem, X0, write_output)


def droplet_mask(N) -> np.ndarray:
    mask = np.zeros((N, N, N), dtype=bool)
    mask[:, :, 0] = True
    return mask


def droplet_initial(grid, L, value) -> np.ndarray:
    """``value`` on the centred square of side ``L`` (by element centre), ``-value`` elsewhere."""
    x = grid.element_centers
    inside = (np.abs(x[:, 0] - 0.5) < L / 2) & (np.abs(x[:, 1] - 0.5) < L / 2)
    return np.where(inside, value, -value)


def run_droplet(cfg: ScenarioConfig, write_output=True) -> RunResult:
    grid = build_grid(droplet_mask(cfg.N))
    disc = Discretization(grid, cfg.p, cfg.sigma_value)
    X0 = l2_project(droplet_initial(grid, cfg.droplet_L, cfg.droplet_value), grid, disc.basis).coeffs
    problem = Problem(disc, ModelParams(cfg.kappa_value, cfg.Pe, cfg.beta))
    result = _run(cfg, problem, X0, write_output)
    X = result.sim.X
    dev_plus, dev_minus = bulk_shift(disc, X)
    h = grid.h
    s, vals = line_sample(disc.field(X), (0.0, 0.0, 0.5 * h), (1.0, 1.0, 0.5 * h), 4 * cfg.N + 1)
    means = element_means(disc, X)
    result.extra.update(
        deviation_to_plus=dev_plus,
        deviation_to_minus=dev_minus,
        max_mean=float(means.max()),
        min_mean=float(means.min()),
        stationary=bool(result.records and result.records[-1].stationary_flag),
        diagonal=(s, vals),
    )
    return result


def run_breakthrough(cfg: ScenarioConfig, write_output=True) -> RunResult:
    mask = load_mask(cfg.mask or "builtin:channel24", cfg.N)
    grid = build_grid(mask, cfg.exterior or "x-,x+")
    disc = Discretization(grid, cfg.p, cfg.sigma_value)
    velocity = make_velocity(cfg.velocity, grid)
    X0 = l2_project(np.full(grid.n_elements, -1.0), grid, disc.basis).coeffs
    problem = Problem(disc, ModelParams(cfg.kappa_value, cfg.Pe, cfg.beta), velocity=velocity,
                      c_in=cfg.c_in)
    fronts = []
    newton, krylov = solver_configs(cfg)
    sim = Simulation(problem, X0, newton, krylov)
    out = Output(cfg, grid, disc, write_output)
    first = sim.initial_record()
    out.record(sim, first)

    def track(sim, rec):
        out.record(sim, rec)
        fronts.append(front_position(grid, element_means(disc, sim.X), axis=0))

    try:
        records = sim.run(_schedule(cfg), cfg.stop_when_stationary, cfg.max_steps, track)
    finally:
        out.close(sim)
    result = RunResult(sim, records, first)
    result.extra.update(
        front=fronts,
        max_mass_balance=max((abs(r.mass_balance) for r in records), default=0.0),
    )
    return result


def run_custom(cfg: ScenarioConfig, write_output=True) -> RunResult:
    grid = build_grid(load_mask(cfg.mask, cfg.N), cfg.exterior or None)
    disc = Discretization(grid, cfg.p, cfg.sigma_value)
    kind, _, arg = (cfg.initial or "constant:0").partition(":")
    if kind == "constant":
        means = np.full(grid.n_elements, float(arg or 0.0))
    elif kind in ("mixed", "sign"):
        means = spinodal_initial(grid.n_elements, cfg.rng_seed, kind)
    else:
        raise ValueError(f"unknown initial data {cfg.initial!r}")
    X0 = l2_project(means, grid, disc.basis).coeffs
    problem = Problem(disc, ModelParams(cfg.kappa_value, cfg.Pe, cfg.beta),
                      velocity=make_velocity(cfg.velocity, grid), c_in=cfg.c_in)
    return _run(cfg, problem, X0, write_output)


RUNNERS = {
    "spinodal": run_spinodal,
    "droplet": run_droplet,
    "breakthrough": run_breakthrough,
    "custom": run_custom,
}


def describe(cfg: ScenarioConfig) -> dict:
    """Derived quantities for ``chvox info``."""
    from chvox.basis import n_loc

    try:
        if cfg.scenario == "droplet":
            n_el = cfg.N * cfg.N
        elif cfg.scenario == "convergence":
            n_el = (2 ** max(cfg.level_list(), default=0)) ** 3
        else:
            default = "builtin:channel24" if cfg.scenario == "breakthrough" else ""
            n_el = int(load_mask(cfg.mask or default, cfg.N).sum())
    except (GridError, OSError):
        n_el = None
    info = {
        "scenario": cfg.scenario,
        "N": cfg.N,
        "h": cfg.h,
        "p": cfg.p,
        "n_loc": n_loc(cfg.p),
        "kappa": cfg.kappa_value,
        "kappa_over_h2": cfg.kappa_value / cfg.h**2,
        "N_el": n_el,
        "dofs": None if n_el is None else n_el * n_loc(cfg.p),
        "steps": sum(
            max(1, int(round((u - t0) / tau)))
            for (u, tau), t0 in zip(cfg.time_pieces(), [0.0] + [u for u, _ in cfg.time_pieces()[:-1]])
        ),
    }
    return info

