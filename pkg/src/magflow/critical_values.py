"""The two critical energies bounding the orbit-search window.

``compute_e0`` is the ceiling of the rest energy E(., 0).  The upper value is
approached from below by exhibiting loop configurations of negative lifted
action: ``e1_lower_bound_symmetric`` scans latitude circles with their
optimal period and the flux of the cap they bound (a 1-D oracle available
whenever the system is rotationally symmetric about the z-axis), and
``e1_lower_bound_general`` descends from a coarse seed bank and accepts any
embedded local minimizer with negative action.  Both report lower bounds:
multi-component configurations are not searched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate as sp_integrate
from scipy import optimize

from .errors import MaxIterations, NotSymmetric, ValleyCollapse
from .flow import count_self_intersections
from .loop_space import (
    LiftedLoop,
    latitude_loop,
    lift_loop,
    lifted_action_A,
    optimal_period,
)
from .tonelli import DEFAULT_GRID_DEPTH, MagneticSystem
from .variational import SolverConfig, find_waist


@dataclass(frozen=True)
class E1Certificate:
    """Negative-action witness configuration at a given energy."""

    energy: float
    witness: LiftedLoop
    action_value: float

    def __post_init__(self):
        if not self.action_value < 0:
            raise ValueError("certificate action must be negative")


@dataclass(frozen=True)
class E1Result:
    value: float
    certificate: E1Certificate | None
    negative_found: bool


def compute_e0(sys: MagneticSystem, grid_depth: int = DEFAULT_GRID_DEPTH) -> float:
    """Ceiling of the rest energy: max of E(., 0) over the sphere."""
    return sys.e0(grid_depth)


def _require_symmetric(sys: MagneticSystem) -> None:
    lag = sys.lagrangian
    problems = []
    if not lag.metric.is_round:
        problems.append("metric is not round")
    if not sys.density.is_zonal:
        problems.append("magnetic density is not zonal")
    if not lag.potential.is_zonal:
        problems.append("potential is not zonal")
    if not lag.drift.is_zero:
        problems.append("drift term present")
    if not lag.is_electromagnetic:
        problems.append("Lagrangian is not electromagnetic")
    if problems:
        raise NotSymmetric("; ".join(problems))


def cap_flux(sys: MagneticSystem, z0: float) -> float:
    """Flux through the region below the latitude z0: 2*pi*int_{-1}^{z0} f."""
    val, _ = sp_integrate.quad(
        lambda z: sys.density.zonal_profile(np.array(z)), -1.0, z0, limit=200
    )
    return 2.0 * np.pi * float(val)


def latitude_circle_action(sys: MagneticSystem, e: float, z0: float) -> float:
    """Lifted action of the latitude circle at z0 with its optimal period.

    The circle is traversed with the region below it positively bounded, so
    the flux term is the cap integral; the action part is the length times
    the momentum sqrt(2(e - U)).  Energies at or below the local potential
    give an empty fiber and the value +inf.
    """
    _require_symmetric(sys)
    if not -1.0 < z0 < 1.0:
        raise ValueError("z0 must lie strictly between -1 and 1")
    u_val = float(sys.lagrangian.potential.zonal_profile(np.array(z0)))
    if e <= u_val:
        return np.inf
    length = 2.0 * np.pi * np.sqrt(1.0 - z0 * z0)
    return length * np.sqrt(2.0 * (e - u_val)) + cap_flux(sys, z0)


def _min_latitude_action(sys: MagneticSystem, e: float, grid_size: int = 401):
    z_grid = np.linspace(-1.0, 1.0, grid_size + 2)[1:-1]
    vals = np.array([latitude_circle_action(sys, e, z) for z in z_grid])
    k = int(np.argmin(vals))
    lo = z_grid[max(k - 1, 0)]
    hi = z_grid[min(k + 1, len(z_grid) - 1)]
    res = optimize.minimize_scalar(
        lambda z: latitude_circle_action(sys, e, z),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    if res.fun < vals[k]:
        return float(res.x), float(res.fun)
    return float(z_grid[k]), float(vals[k])


def _symmetric_witness(sys, e, z0, n=256) -> LiftedLoop:
    loop = latitude_loop(z0, n)
    loop = loop.with_period(optimal_period(sys, loop, e))
    return lift_loop(sys, loop)


def e1_lower_bound_symmetric(
    sys: MagneticSystem, e_max: float, tol: float = 1e-4, grid_size: int = 401
) -> E1Result:
    """Largest energy (within tol) admitting a negative latitude-circle action.

    Bisection is valid because the minimal latitude action is increasing in
    the energy.  Returns the trivial bound e0 when no latitude circle goes
    negative anywhere in the window.
    """
    _require_symmetric(sys)
    e0_val = sys.e0()
    lo = e0_val + 1e-9

    def admissible(e):
        return _min_latitude_action(sys, e, grid_size)[1] < 0.0

    if not admissible(lo + tol):
        return E1Result(e0_val, None, False)
    if admissible(e_max):
        lo = e_max
    else:
        hi = e_max
        lo = lo + tol
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if admissible(mid):
                lo = mid
            else:
                hi = mid
    value = float(lo)

    certificate = None
    for back in (tol, 2 * tol, 5 * tol, 1e-2, 5e-2):
        e_w = value - back
        if e_w <= e0_val:
            break
        z_star, a_min = _min_latitude_action(sys, e_w, grid_size)
        if a_min >= 0:
            continue
        witness = _symmetric_witness(sys, e_w, z_star)
        a_disc = lifted_action_A(sys, e_w, witness)
        if a_disc < 0:
            certificate = E1Certificate(e_w, witness, float(a_disc))
            break
    return E1Result(value, certificate, True)


def _seed_bank(sys: MagneticSystem, e: float, n: int):
    from .loop_space import great_circle_loop

    seeds = []
    for z0 in (-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75):
        seeds.append(latitude_loop(z0, n))
    for axis in (
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
        (np.sqrt(0.5), np.sqrt(0.5), 0.0),
        (np.sqrt(0.5), 0.0, np.sqrt(0.5)),
        (0.0, np.sqrt(0.5), np.sqrt(0.5)),
    ):
        seeds.append(great_circle_loop(np.array(axis), n))
    out = []
    for loop in seeds:
        try:
            out.append(lift_loop(sys, loop.with_period(optimal_period(sys, loop, e))))
        except ValueError:
            continue
    return out


def e1_lower_bound_general(
    sys: MagneticSystem,
    e_grid,
    cfg: SolverConfig = SolverConfig(),
    n: int = 128,
) -> E1Result:
    """Largest grid energy where some seed descends to an embedded loop of
    negative lifted action; per-seed failures are tolerated."""
    e_grid = sorted(e_grid, reverse=True)
    e0_val = sys.e0()
    for e in e_grid:
        if e <= e0_val:
            continue
        best = None
        for seed in _seed_bank(sys, e, n):
            try:
                res = find_waist(sys, e, seed, cfg)
            except (ValleyCollapse, MaxIterations, ValueError):
                continue
            if res.action < 0 and count_self_intersections(res.lifted.nodes) == 0:
                if best is None or res.action < best.action:
                    best = res
        if best is not None:
            cert = E1Certificate(e, best.lifted, best.action)
            return E1Result(float(e), cert, True)
    return E1Result(e0_val, None, False)
