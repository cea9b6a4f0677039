"""Discretized free-period loop space and its flux-ledger universal cover.

A point of the loop space is a closed polygon of N nodes on the sphere plus a
free period p.  The free-period action of a loop at energy e is

    S_e(gamma, p) = p * mean_i L(gamma_i, w_i / p) + p * e,

with velocities w_i by central differences (chordal, tangent-projected,
scaled by N).  The cover is realized by a scalar flux ledger: a lifted loop
carries the magnetic flux accumulated along its deformation history from the
base point, and the lifted action is A_e = S_e + flux.  Deck transformations
and loop iteration act on the ledger by pure arithmetic, which makes the
corresponding action identities exact.

Deformation flux is quadrature over the swept annulus: each node-pair quad is
fanned into four spherical triangles around its center (so a sweep and its
reversal cancel exactly) weighted by a tensor-Simpson average of the density.
The action gradient differentiates that exact discrete rule, so central
finite differences of the lifted action reproduce it to truncation error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .errors import StepTooLarge
from .sphere_geom import (
    BASE_POINT,
    angular_distance,
    cross3,
    project_to_sphere,
    slerp,
    solid_angle,
    tangent_project,
)
from .tonelli import MagneticSystem

MAX_ITERATE_NODES = 4096
MAX_SWEEP_STEP = 0.5
_SUBSTEP = 0.1
_MIN_NODES = 16
VALLEY_TAU_CAP = 0.1

_APEX_CANDIDATES = np.array(
    [
        [-1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [1.0, 0.0, 0.0],
    ]
)


# ---------------------------------------------------------------------------
# loop containers


@dataclass(frozen=True)
class FreePeriodLoop:
    """Closed discrete curve (node N identified with node 0) plus period p."""

    nodes: np.ndarray
    p: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise ValueError("nodes must have shape (N, 3)")
        if len(nodes) < _MIN_NODES:
            raise ValueError(f"need at least {_MIN_NODES} nodes, got {len(nodes)}")
        if not self.p > 0:
            raise ValueError("period must be positive")
        # non-antipodal consecutive nodes: |a + b| ~ the angular gap to pi
        sums = nodes + np.roll(nodes, -1, axis=0)
        if np.min(np.sum(sums * sums, axis=-1)) <= 1e-18:
            raise ValueError("consecutive nodes are (near-)antipodal")

    @property
    def n(self) -> int:
        return len(self.nodes)

    def velocities(self) -> np.ndarray:
        """Central-difference derivatives w.r.t. the unit-circle parameter."""
        w = 0.5 * self.n * (np.roll(self.nodes, -1, axis=0) - np.roll(self.nodes, 1, axis=0))
        return tangent_project(self.nodes, w)

    def with_period(self, p: float) -> "FreePeriodLoop":
        return replace(self, p=float(p))


@dataclass(frozen=True)
class LiftedLoop:
    """Loop plus accumulated flux: a point of the universal cover."""

    loop: FreePeriodLoop
    flux: float

    @property
    def nodes(self) -> np.ndarray:
        return self.loop.nodes

    @property
    def p(self) -> float:
        return self.loop.p


@dataclass(frozen=True)
class LoopGradient:
    """Differential of the lifted action: tangent node components and dA/dp."""

    node_grads: np.ndarray
    p_grad: float


# ---------------------------------------------------------------------------
# constructors and resampling


def latitude_loop(z0: float, n: int = 128, p: float = 1.0) -> FreePeriodLoop:
    """Latitude circle at height z0, traversed with the region below it
    positively bounded (clockwise seen from the north pole)."""
    if not -1.0 < z0 < 1.0:
        raise ValueError("z0 must lie strictly between -1 and 1")
    rho = np.sqrt(1.0 - z0 * z0)
    phi = np.pi - 2.0 * np.pi * np.arange(n) / n
    nodes = np.stack([rho * np.cos(phi), rho * np.sin(phi), np.full(n, z0)], axis=1)
    return FreePeriodLoop(nodes, p)


def great_circle_loop(axis: np.ndarray, n: int = 128, p: float = 1.0) -> FreePeriodLoop:
    """Great circle with the given normal axis, right-handed about it."""
    axis = project_to_sphere(np.asarray(axis, dtype=float))
    ref = np.eye(3)[int(np.argmin(np.abs(axis)))]
    e1 = np.cross(axis, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    t = 2.0 * np.pi * np.arange(n) / n
    nodes = np.cos(t)[:, None] * e1 + np.sin(t)[:, None] * e2
    return FreePeriodLoop(nodes, p)


def zeta_loop(s: float, n: int = 128) -> FreePeriodLoop:
    """Member of the deck-generator family: the pencil of circles through the
    base point cut by planes whose normal tilts from the base direction to
    its opposite.  The family starts and ends at the (numerically tiny)
    constant loop at the base point, and sweeping s over [0, 1] covers the
    sphere exactly once positively, so chaining ``sweep_flux`` along it
    accumulates the total flux of the magnetic form.
    """
    s_eff = min(max(s, 1e-3), 1.0 - 1e-3)  # keep endpoint loops non-degenerate
    cs, sn = np.cos(np.pi * s_eff), np.sin(np.pi * s_eff)
    normal = np.array([cs, sn, 0.0])
    center = -cs * normal
    radius = sn
    u1 = np.array([-sn, cs, 0.0])
    u2 = np.array([0.0, 0.0, 1.0])  # normal x u1
    t = 2.0 * np.pi * np.arange(n) / n
    nodes = (
        center
        + radius * np.cos(t)[:, None] * u1
        - radius * np.sin(t)[:, None] * u2
    )
    return FreePeriodLoop(project_to_sphere(nodes), 1.0)


def perturb_normal(loop: FreePeriodLoop, amplitude: float, mode: int) -> FreePeriodLoop:
    """Bump the loop along its in-sphere normal with a cosine profile."""
    nodes = loop.nodes
    w = loop.velocities()
    normal = np.cross(nodes, w)
    nn = np.linalg.norm(normal, axis=-1, keepdims=True)
    normal = normal / np.where(nn > 1e-12, nn, 1.0)
    t = np.arange(loop.n) / loop.n
    bump = amplitude * np.cos(2.0 * np.pi * mode * t)
    return replace(loop, nodes=project_to_sphere(nodes + bump[:, None] * normal))


def resample_loop(loop: FreePeriodLoop, n_new: int) -> FreePeriodLoop:
    """Resample uniformly in the curve parameter by geodesic interpolation."""
    n = loop.n
    pos = np.arange(n_new) * (n / n_new)
    idx = np.floor(pos).astype(int) % n
    frac = pos - np.floor(pos)
    a = loop.nodes[idx]
    b = loop.nodes[(idx + 1) % n]
    return replace(loop, nodes=slerp(a, b, frac))


# ---------------------------------------------------------------------------
# action and period


def discrete_action_S(sys: MagneticSystem, e: float, loop: FreePeriodLoop) -> float:
    """Free-period action p * mean L(gamma, w/p) + p*e of the discrete loop."""
    w = loop.velocities()
    vals = sys.lagrangian.value(loop.nodes, w / loop.p)
    return float(loop.p * np.mean(vals) + loop.p * e)


def mean_energy(sys: MagneticSystem, loop: FreePeriodLoop) -> float:
    w = loop.velocities()
    return float(np.mean(sys.lagrangian.energy(loop.nodes, w / loop.p)))


def optimal_period(sys: MagneticSystem, loop: FreePeriodLoop, e: float) -> float:
    """Period with mean discrete energy equal to e (the dS/dp = 0 condition)."""
    lag = sys.lagrangian
    w = loop.velocities()
    if lag.is_electromagnetic:
        kin = float(np.mean(0.5 * lag.metric.norm_sq(loop.nodes, w)))
        ubar = float(np.mean(lag.potential(loop.nodes)))
        if e <= ubar:
            raise ValueError(f"energy {e} does not exceed the mean potential {ubar:.6g}")
        if kin < 1e-30:
            return 1e-6
        return float(np.sqrt(kin / (e - ubar)))

    def resid(p):
        return e - float(np.mean(lag.energy(loop.nodes, w / p)))

    lo, hi = 1e-6, 1e6
    if resid(hi) <= 0.0:
        raise ValueError("no optimal period: energy below the rest level")
    return float(optimize.brentq(resid, lo, hi, xtol=1e-14, rtol=1e-15))


def lifted_action_A(sys: MagneticSystem, e: float, ll: LiftedLoop) -> float:
    """Action on the cover: free-period action plus the flux ledger."""
    return discrete_action_S(sys, e, ll.loop) + ll.flux


def optimal_period_fourth(sys: MagneticSystem, loop: FreePeriodLoop, e: float) -> float:
    """Optimal period recomputed with 4th-order discrete velocities.

    The central-difference period that makes the discrete action critical
    carries an O(N^-2) bias relative to the underlying curve; shooting
    certification of long stable orbits needs this sharper estimate.
    """
    n = loop.n
    nodes = loop.nodes
    w = (
        -np.roll(nodes, -2, axis=0)
        + 8.0 * np.roll(nodes, -1, axis=0)
        - 8.0 * np.roll(nodes, 1, axis=0)
        + np.roll(nodes, 2, axis=0)
    ) * (n / 12.0)
    w = tangent_project(nodes, w)
    lag = sys.lagrangian
    if lag.is_electromagnetic:
        kin = float(np.mean(0.5 * lag.metric.norm_sq(nodes, w)))
        ubar = float(np.mean(lag.potential(nodes)))
        if e <= ubar:
            raise ValueError(f"energy {e} does not exceed the mean potential {ubar:.6g}")
        return float(np.sqrt(kin / (e - ubar)))

    def resid(p):
        return e - float(np.mean(lag.energy(nodes, w / p)))

    return float(optimize.brentq(resid, 1e-6, 1e6, xtol=1e-14, rtol=1e-15))


# ---------------------------------------------------------------------------
# lifting, sweeping, deck transformations, iteration


def _choose_apex(nodes: np.ndarray) -> np.ndarray:
    margins = np.pi - np.array(
        [float(np.max(angular_distance(apex, nodes))) for apex in _APEX_CANDIDATES]
    )
    if margins[0] >= 0.2:
        return _APEX_CANDIDATES[0]
    return _APEX_CANDIDATES[int(np.argmax(margins))]


def cone_flux(
    sys: MagneticSystem,
    loop: FreePeriodLoop,
    depth: int | None = None,
    apex: np.ndarray | None = None,
) -> float:
    """Flux through the great-arc cone spanning the loop from a fixed apex.

    Realizes the canonical lift: the homotopy that contracts the loop to the
    apex along great arcs, then carries the constant loop to the base point
    (constant loops sweep no flux).  The apex is the base point unless the
    loop comes near its antipode, in which case a fixed fallback list is
    scanned for the largest antipodal margin.
    """
    depth = sys.lift_depth if depth is None else depth
    nodes = loop.nodes
    if apex is None:
        apex = _choose_apex(nodes)
    tris = np.stack(
        [np.broadcast_to(apex, nodes.shape), nodes, np.roll(nodes, -1, axis=0)], axis=1
    )
    from .sphere_geom import _leaf_flux, _subdivide

    return float(_leaf_flux(sys.form, _subdivide(tris, depth)))


def lift_loop(sys: MagneticSystem, loop: FreePeriodLoop, depth: int | None = None) -> LiftedLoop:
    """Canonical lift of a fresh loop (cone construction pins the ledger)."""
    return LiftedLoop(loop, cone_flux(sys, loop, depth))


def _sweep_once(sys: MagneticSystem, old: np.ndarray, new: np.ndarray) -> float:
    """Flux of one annulus sweep old -> new (both (N, 3), same N).

    Per node-pair quad (A, B) -> (D, C), a 4-triangle fan around the quad
    center gives the exact signed solid angle with boundary new - old; the
    density is averaged with a Simpson x Simpson rule whose stations are
    symmetric under sweep reversal, so reversing exactly negates the flux.
    """
    n = len(old)
    A = old
    B = np.roll(old, -1, axis=0)
    D = new
    C = np.roll(new, -1, axis=0)
    mids = project_to_sphere(
        np.stack([A + B + C + D, A + B, A + D, B + C, D + C])
    )
    m, mab, mad, mbc, mdc = mids
    # four fan triangles batched into one signed solid-angle call
    tri_a = np.concatenate([B, A, D, C])
    tri_b = np.concatenate([A, D, C, B])
    tri_m = np.concatenate([m, m, m, m])
    omega = np.sum(solid_angle(tri_a, tri_b, tri_m).reshape(4, n), axis=0)
    stations = np.stack([A, mab, B, mad, m, mbc, D, mdc, C])
    fvals = sys.form.round_density(stations)
    weights = np.array([1.0, 4.0, 1.0, 4.0, 16.0, 4.0, 1.0, 4.0, 1.0]) / 36.0
    fbar = np.einsum("s,sn->n", weights, fvals)
    return float(np.sum(omega * fbar))


def sweep_flux(sys: MagneticSystem, old: FreePeriodLoop, new: FreePeriodLoop) -> float:
    """Flux swept by deforming ``old`` into ``new`` node-by-node.

    Large deformations are split into geodesic substeps; each substep uses
    the antisymmetric fan quadrature of ``_sweep_once``.
    """
    if old.n != new.n:
        raise ValueError("loops must share the node count")
    diff = new.nodes - old.nodes
    max_chord = float(np.sqrt(np.max(np.sum(diff * diff, axis=-1))))
    if max_chord > 2.0 * np.sin(MAX_SWEEP_STEP / 2.0):
        raise StepTooLarge(
            f"node displacement {2.0 * np.arcsin(min(max_chord / 2.0, 1.0)):.3f} rad "
            f"exceeds {MAX_SWEEP_STEP}"
        )
    if max_chord == 0.0:
        return 0.0
    max_disp = 2.0 * np.arcsin(max_chord / 2.0)
    k = max(1, int(np.ceil(max_disp / _SUBSTEP)))
    total = 0.0
    prev = old.nodes
    for j in range(1, k + 1):
        cur = slerp(old.nodes, new.nodes, np.full(old.n, j / k)) if j < k else new.nodes
        total += _sweep_once(sys, prev, cur)
        prev = cur
    return total


def deform(sys: MagneticSystem, ll: LiftedLoop, new_loop: FreePeriodLoop) -> LiftedLoop:
    """Path lifting: carry the ledger along a small deformation step.

    Period changes carry no flux.
    """
    return LiftedLoop(new_loop, ll.flux + sweep_flux(sys, ll.loop, new_loop))


def iterate(ll: LiftedLoop, m: int) -> LiftedLoop:
    """m-fold iterate: nodes retraced m times, period and flux scaled by m."""
    if m < 1:
        raise ValueError("iterate order must be >= 1")
    if m == 1:
        return ll
    loop = ll.loop
    n_total = m * loop.n
    if n_total <= MAX_ITERATE_NODES:
        nodes = np.tile(loop.nodes, (m, 1))
        new = FreePeriodLoop(nodes, m * loop.p)
    else:
        pos = np.arange(MAX_ITERATE_NODES) * (m * loop.n / MAX_ITERATE_NODES)
        idx = np.floor(pos).astype(int) % loop.n
        frac = pos - np.floor(pos)
        nodes = slerp(loop.nodes[idx], loop.nodes[(idx + 1) % loop.n], frac)
        new = FreePeriodLoop(nodes, m * loop.p)
    return LiftedLoop(new, m * ll.flux)


def deck_transform(sys: MagneticSystem, ll: LiftedLoop, k: int) -> LiftedLoop:
    """Generator of the cover's deck group: shifts the ledger by k * total flux."""
    if k == 0:
        return ll
    return LiftedLoop(ll.loop, ll.flux + k * sys.total_flux())


# ---------------------------------------------------------------------------
# action gradient (exact differential of the discrete functional)


def _flux_gradient(sys: MagneticSystem, nodes: np.ndarray) -> np.ndarray:
    """Differential of the sweep-flux rule at zero displacement."""
    a = nodes
    b = np.roll(nodes, -1, axis=0)
    m = project_to_sphere(a + b)
    cm = np.sum(m * a, axis=-1)
    s3 = 1.0 + np.sum(a * b, axis=-1) + 2.0 * cm
    mxa = cross3(m, a)
    bxm = cross3(b, m)
    f = sys.form.round_density
    fbar = (f(a) + 4.0 * f(m) + f(b)) / 6.0
    c_self = mxa / (1.0 + cm)[:, None] + 2.0 * bxm / s3[:, None]
    c_next = bxm / (1.0 + cm)[:, None] + 2.0 * mxa / s3[:, None]
    g = fbar[:, None] * c_self
    g += np.roll(fbar[:, None] * c_next, 1, axis=0)
    return g


def action_gradient(sys: MagneticSystem, e: float, ll: LiftedLoop) -> LoopGradient:
    """Exact gradient of the discrete lifted action.

    Node components differentiate both the action sum (through the projected
    central-difference velocities) and the sweep-flux quadrature; the period
    component is the closed form e - (mean discrete energy).  Components are
    tangent-projected, matching directional derivatives along reprojected
    node perturbations.
    """
    loop = ll.loop
    nodes = loop.nodes
    n, p = loop.n, loop.p
    lag = sys.lagrangian

    c = 0.5 * n * (np.roll(nodes, -1, axis=0) - np.roll(nodes, 1, axis=0))
    w = tangent_project(nodes, c)
    v = w / p
    u = lag.ambient_dv(nodes, v)
    dq = lag.ambient_dq(nodes, v)

    grad = (p / n) * dq
    qc = np.sum(nodes * c, axis=-1, keepdims=True)
    uq = np.sum(u * nodes, axis=-1, keepdims=True)
    grad += (-(qc * u) - (uq * c)) / n
    pu = u - np.sum(nodes * u, axis=-1, keepdims=True) * nodes
    grad += 0.5 * (np.roll(pu, 1, axis=0) - np.roll(pu, -1, axis=0))
    grad += _flux_gradient(sys, nodes)

    p_grad = e - float(np.mean(lag.energy(nodes, v)))
    return LoopGradient(tangent_project(nodes, grad), p_grad)


def h1_solve(node_vecs: np.ndarray) -> np.ndarray:
    """Apply the inverse of the circulant H^1 node metric I + N^2 D^T D."""
    n = len(node_vecs)
    lam = 1.0 + 4.0 * n * n * np.sin(np.pi * np.arange(n // 2 + 1) / n) ** 2
    spec = np.fft.rfft(node_vecs, axis=0)
    return np.fft.irfft(spec / lam[:, None], n=n, axis=0)


def h1_precondition(loop: FreePeriodLoop, grad: LoopGradient) -> tuple[np.ndarray, float]:
    """Solve the discrete H^1 metric for the descent direction and dual norm.

    The node metric is <xi, eta> + N^2 <Delta xi, Delta eta> (circulant, so a
    real FFT solve), the period block is the identity.  Returns the
    tangent-projected preconditioned node direction and the dual norm
    sqrt(<raw, M^{-1} raw> + p_grad^2).
    """
    sol = h1_solve(grad.node_grads)
    dual_sq = float(np.sum(grad.node_grads * sol)) + grad.p_grad**2
    return tangent_project(loop.nodes, sol), float(np.sqrt(max(dual_sq, 0.0)))


def gradient_dual_norm(sys: MagneticSystem, e: float, ll: LiftedLoop) -> float:
    grad = action_gradient(sys, e, ll)
    _, dual = h1_precondition(ll.loop, grad)
    return dual


# ---------------------------------------------------------------------------
# the short-loop valley


def in_valley(sys: MagneticSystem, loop: FreePeriodLoop, tau: float) -> bool:
    """Membership in the valley of short loops with low period (strict)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    w = loop.velocities()
    speed_sq = float(np.mean(sys.metric.norm_sq(loop.nodes, w)))
    return speed_sq < tau * loop.p and loop.p < tau


def valley_tau(sys: MagneticSystem) -> float:
    """Valley radius 2*h1 / sup|dW_flat + sigma|, capped at 0.1.

    Half the positivity threshold of the lower action bound; the cap covers
    the degenerate case of a vanishing combined form.
    """
    fb = sys.fiber_bounds()
    sup = fb.sup_norm_dlambda_plus_sigma
    if sup <= 1e-15:
        return VALLEY_TAU_CAP
    return float(min(VALLEY_TAU_CAP, 2.0 * fb.h1 / sup))


# ---------------------------------------------------------------------------
# serialization


def lifted_to_dict(ll: LiftedLoop) -> dict:
    return {
        "nodes": [[float(x) for x in row] for row in ll.nodes],
        "p": float(ll.p),
        "flux": float(ll.flux),
    }


def lifted_from_dict(data: dict) -> LiftedLoop:
    loop = FreePeriodLoop(np.array(data["nodes"], dtype=float), float(data["p"]))
    return LiftedLoop(loop, float(data["flux"]))


def save_lifted(ll: LiftedLoop, path) -> None:
    with open(path, "w") as fh:
        json.dump(lifted_to_dict(ll), fh, indent=1, sort_keys=True)


def load_lifted(path) -> LiftedLoop:
    with open(path) as fh:
        return lifted_from_dict(json.load(fh))


def nodes_to_csv(loop: FreePeriodLoop, path) -> None:
    with open(path, "w") as fh:
        fh.write("x,y,z\n")
        for row in loop.nodes:
            fh.write(f"{row[0]!r},{row[1]!r},{row[2]!r}\n")
