"""Time integration of the magnetic Euler-Lagrange flow on the sphere.

The electromagnetic equations of motion in ambient coordinates read

    dq/dt = v
    dv/dt = -g(v,v) q  (curvature correction)
            + conformal terms
            + e^{-2u} [ -P grad U + (f e^{2u} + h_W)(v x q) ]

where f is the magnetic density (relative to the metric area form), h_W the
round-form density of the exterior derivative of the drift 1-form, and P the
tangent projection.  The sign of the Lorentz term, force = density * (v x q),
is the one for which critical loops of the lifted free-period action are
genuine trajectories; see the action gradient in ``loop_space``.

Integration is classical fixed-step RK4 with post-step reprojection of q to
the sphere and v to the tangent plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import StepExplosion, UnsupportedLagrangian
from .sphere_geom import angular_distance, project_to_sphere, tangent_project
from .tonelli import MagneticSystem

_EXPLOSION_BOUND = 1e6


@dataclass(frozen=True)
class State:
    q: np.ndarray
    v: np.ndarray

    @staticmethod
    def of(q, v) -> "State":
        q = project_to_sphere(np.asarray(q, dtype=float))
        return State(q, tangent_project(q, np.asarray(v, dtype=float)))


@dataclass
class Trajectory:
    times: np.ndarray           # (n,) strictly increasing, uniform step
    positions: np.ndarray       # (n, 3)
    velocities: np.ndarray      # (n, 3)
    energy_series: np.ndarray   # (n,)

    @property
    def final_state(self) -> State:
        return State(self.positions[-1], self.velocities[-1])


def _field(sys: MagneticSystem, q: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lag = sys.lagrangian
    qh = q / np.linalg.norm(q)
    vt = v - np.dot(qh, v) * qh
    vv = np.dot(vt, vt)
    dv = -vv * qh
    grad_u_pot = lag.potential.grad(qh)
    if lag.metric.is_round:
        force = -(grad_u_pot - np.dot(qh, grad_u_pot) * qh)
        dens = sys.density(qh) + lag.drift.exterior_density_round(qh)
        force = force + dens * np.cross(vt, qh)
    else:
        e2u = float(lag.metric.exp2u(qh))
        du = lag.metric.conformal_exponent.grad(qh)
        dut = du - np.dot(qh, du) * qh
        dv = dv - 2.0 * np.dot(dut, vt) * vt + vv * dut
        force = -(grad_u_pot - np.dot(qh, grad_u_pot) * qh)
        dens = sys.density(qh) * e2u + lag.drift.exterior_density_round(qh)
        force = (force + dens * np.cross(vt, qh)) / e2u
    return vt, dv + force


def magnetic_el_field(sys: MagneticSystem, state: State) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side (dq, dv) of the equations of motion at a state."""
    if not sys.lagrangian.is_electromagnetic:
        raise UnsupportedLagrangian("flow field requires the electromagnetic kind")
    return _field(sys, state.q, state.v)


def _integrate_round_fast(sys: MagneticSystem, s0: State, T: float, n: int) -> Trajectory:
    """Scalar RK4 loop specialized to the round electromagnetic case."""
    dt = T / n
    lag = sys.lagrangian
    dens = sys.density.scalar_fn()
    drift_a = lag.drift.coeffs[0] if lag.drift.kind == "azimuthal" else 0.0
    grad_u = lag.potential.grad_fn()
    pot = lag.potential.scalar_fn()

    def rhs(qx, qy, qz, vx, vy, vz):
        qn = math.sqrt(qx * qx + qy * qy + qz * qz)
        qx, qy, qz = qx / qn, qy / qn, qz / qn
        qv = qx * vx + qy * vy + qz * vz
        vx, vy, vz = vx - qv * qx, vy - qv * qy, vz - qv * qz
        vv = vx * vx + vy * vy + vz * vz
        gx, gy, gz = grad_u(qx, qy, qz)
        gq = gx * qx + gy * qy + gz * qz
        f = dens(qx, qy, qz) + 2.0 * drift_a * qz
        # v x q cross product
        cx = vy * qz - vz * qy
        cy = vz * qx - vx * qz
        cz = vx * qy - vy * qx
        return (
            vx,
            vy,
            vz,
            -vv * qx - (gx - gq * qx) + f * cx,
            -vv * qy - (gy - gq * qy) + f * cy,
            -vv * qz - (gz - gq * qz) + f * cz,
        )

    qx, qy, qz = (float(c) for c in s0.q)
    vx, vy, vz = (float(c) for c in s0.v)
    qs = np.empty((n + 1, 3))
    vs = np.empty((n + 1, 3))
    es = np.empty(n + 1)
    qs[0] = (qx, qy, qz)
    vs[0] = (vx, vy, vz)
    es[0] = 0.5 * (vx * vx + vy * vy + vz * vz) + pot(qx, qy, qz)
    half = 0.5 * dt
    sixth = dt / 6.0
    for k in range(n):
        a1 = rhs(qx, qy, qz, vx, vy, vz)
        a2 = rhs(
            qx + half * a1[0], qy + half * a1[1], qz + half * a1[2],
            vx + half * a1[3], vy + half * a1[4], vz + half * a1[5],
        )
        a3 = rhs(
            qx + half * a2[0], qy + half * a2[1], qz + half * a2[2],
            vx + half * a2[3], vy + half * a2[4], vz + half * a2[5],
        )
        a4 = rhs(
            qx + dt * a3[0], qy + dt * a3[1], qz + dt * a3[2],
            vx + dt * a3[3], vy + dt * a3[4], vz + dt * a3[5],
        )
        qx += sixth * (a1[0] + 2.0 * (a2[0] + a3[0]) + a4[0])
        qy += sixth * (a1[1] + 2.0 * (a2[1] + a3[1]) + a4[1])
        qz += sixth * (a1[2] + 2.0 * (a2[2] + a3[2]) + a4[2])
        vx += sixth * (a1[3] + 2.0 * (a2[3] + a3[3]) + a4[3])
        vy += sixth * (a1[4] + 2.0 * (a2[4] + a3[4]) + a4[4])
        vz += sixth * (a1[5] + 2.0 * (a2[5] + a3[5]) + a4[5])
        qn = math.sqrt(qx * qx + qy * qy + qz * qz)
        qx, qy, qz = qx / qn, qy / qn, qz / qn
        qv = qx * vx + qy * vy + qz * vz
        vx, vy, vz = vx - qv * qx, vy - qv * qy, vz - qv * qz
        if abs(vx) > _EXPLOSION_BOUND or abs(vy) > _EXPLOSION_BOUND or abs(vz) > _EXPLOSION_BOUND:
            raise StepExplosion(f"state norm exceeded {_EXPLOSION_BOUND:g} at step {k}")
        qs[k + 1] = (qx, qy, qz)
        vs[k + 1] = (vx, vy, vz)
        es[k + 1] = 0.5 * (vx * vx + vy * vy + vz * vz) + pot(qx, qy, qz)
    return Trajectory(np.linspace(0.0, T, n + 1), qs, vs, es)


def integrate(sys: MagneticSystem, s0: State, T: float, h: float) -> Trajectory:
    """Integrate for time T with (approximately) step h, landing exactly at T."""
    if not sys.lagrangian.is_electromagnetic:
        raise UnsupportedLagrangian("flow field requires the electromagnetic kind")
    if not (0.0 < h <= 0.1):
        raise ValueError("step must satisfy 0 < h <= 1e-1")
    if h > T:
        raise ValueError("step must not exceed the total time")
    n = max(1, int(round(T / h)))
    if sys.metric.is_round:
        return _integrate_round_fast(sys, s0, T, n)
    dt = T / n
    q = np.array(s0.q, dtype=float)
    v = np.array(s0.v, dtype=float)
    lag = sys.lagrangian

    times = np.linspace(0.0, T, n + 1)
    qs = np.empty((n + 1, 3))
    vs = np.empty((n + 1, 3))
    es = np.empty(n + 1)
    qs[0], vs[0], es[0] = q, v, float(lag.energy(q, v))

    for k in range(n):
        k1q, k1v = _field(sys, q, v)
        k2q, k2v = _field(sys, q + 0.5 * dt * k1q, v + 0.5 * dt * k1v)
        k3q, k3v = _field(sys, q + 0.5 * dt * k2q, v + 0.5 * dt * k2v)
        k4q, k4v = _field(sys, q + dt * k3q, v + dt * k3v)
        q = q + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        v = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        q = q / np.linalg.norm(q)
        v = v - np.dot(q, v) * q
        if not (np.all(np.abs(q) < _EXPLOSION_BOUND) and np.all(np.abs(v) < _EXPLOSION_BOUND)):
            raise StepExplosion(f"state norm exceeded {_EXPLOSION_BOUND:g} at step {k}")
        qs[k + 1], vs[k + 1], es[k + 1] = q, v, float(lag.energy(q, v))

    return Trajectory(times, qs, vs, es)


def energy_drift(traj: Trajectory) -> float:
    """max |E_t - E_0| / max(1, |E_0|) along a trajectory."""
    if traj.energy_series.size == 0:
        raise ValueError("empty trajectory")
    e0 = traj.energy_series[0]
    return float(np.max(np.abs(traj.energy_series - e0)) / max(1.0, abs(e0)))


@dataclass(frozen=True)
class OrbitReport:
    gradient_norm: float
    mean_energy_residual: float
    closure_residual: float
    self_intersections: int

    def __post_init__(self):
        vals = (self.gradient_norm, self.mean_energy_residual, self.closure_residual)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("orbit report residuals must be finite")


def _central_velocities(nodes: np.ndarray) -> np.ndarray:
    n = len(nodes)
    w = 0.5 * n * (np.roll(nodes, -1, axis=0) - np.roll(nodes, 1, axis=0))
    return tangent_project(nodes, w)


def _fourth_order_velocity(nodes: np.ndarray, idx: int) -> np.ndarray:
    """5-point stencil derivative at one node (for accurate shooting starts)."""
    n = len(nodes)
    g = (
        -nodes[(idx + 2) % n]
        + 8.0 * nodes[(idx + 1) % n]
        - 8.0 * nodes[(idx - 1) % n]
        + nodes[(idx - 2) % n]
    ) * (n / 12.0)
    return tangent_project(nodes[idx], g)


def count_self_intersections(nodes: np.ndarray, tol: float = 1e-6) -> int:
    """Transverse crossings of the closed geodesic polygon through the nodes.

    Pairs of non-adjacent segments are tested for great-circle arc crossings;
    tangential near-misses closer than ``tol`` radians also count.
    """
    n = len(nodes)
    a = nodes
    b = np.roll(nodes, -1, axis=0)
    normals = np.cross(a, b)
    nn = np.linalg.norm(normals, axis=-1, keepdims=True)
    normals = normals / np.where(nn > 1e-15, nn, 1.0)
    cos_len = np.sum(a * b, axis=-1)

    count = 0
    for i in range(n):
        # strictly later segments, excluding the two adjacent ones
        js = np.arange(i + 2, n if i > 0 else n - 1)
        if js.size == 0:
            continue
        u = np.cross(normals[i], normals[js])
        un = np.linalg.norm(u, axis=-1, keepdims=True)
        parallel = un[:, 0] < 1e-12
        u = u / np.where(un > 1e-15, un, 1.0)
        for sign in (1.0, -1.0):
            p = sign * u
            in_i = (p @ a[i] >= cos_len[i]) & (p @ b[i] >= cos_len[i])
            in_j = (np.sum(p * a[js], axis=-1) >= cos_len[js]) & (
                np.sum(p * b[js], axis=-1) >= cos_len[js]
            )
            count += int(np.sum(~parallel & in_i & in_j))
        # tangential near-miss: endpoints of one arc touching the other arc
        for j_idx, j in enumerate(js):
            if not parallel[j_idx]:
                continue
            d = min(
                float(angular_distance(a[i], a[j])),
                float(angular_distance(a[i], b[j])),
                float(angular_distance(b[i], a[j])),
                float(angular_distance(b[i], b[j])),
            )
            if d < tol:
                count += 1
    return count


def certify_orbit(sys: MagneticSystem, candidate, e: float, h: float = 1e-3) -> OrbitReport:
    """Shoot from a discrete loop for one period and measure orbit residuals.

    The initial velocity uses a 4th-order stencil (closure accuracy), while
    the mean-energy residual keeps the 2nd-order central differences that the
    action discretization itself uses, so a converged waist reports the same
    residual that its period equation drove to zero.
    """
    nodes = np.asarray(candidate.nodes, dtype=float)
    p = float(candidate.p)
    if p <= 0:
        raise ValueError("candidate period must be positive")
    w = _central_velocities(nodes)
    mean_e = float(np.mean(sys.lagrangian.energy(nodes, w / p)))
    v0 = _fourth_order_velocity(nodes, 0) / p
    s0 = State.of(nodes[0], v0)
    h_eff = min(h, p / 64.0, 0.1)
    traj = integrate(sys, s0, p, h_eff)
    sf = traj.final_state
    closure = float(np.sqrt(np.sum((sf.q - s0.q) ** 2) + np.sum((sf.v - s0.v) ** 2)))
    return OrbitReport(
        gradient_norm=0.0,
        mean_energy_residual=mean_e - e,
        closure_residual=closure,
        self_intersections=count_self_intersections(nodes),
    )
