"""Waist finding by preconditioned descent and mountain-pass minimax search.

``find_waist`` runs a backtracking gradient descent on the lifted action with
the period eliminated through its closed-form optimality condition; the flux
ledger follows every accepted step, and a valley guard aborts seeds that
collapse toward constant loops.

``minimax_path`` relaxes an elastic band of lifted loops between two local
minimizers with a climbing-image treatment of the running maximum.  Initial
bands are built through the valley: shrink one endpoint to a tiny loop,
adjust covering multiplicity and deck winding there (where all such classes
meet cheaply), and expand to the other endpoint, so the band starts in the
correct cover class by construction.

``scan_energy`` and ``multiplicity_search`` orchestrate these over energy
grids and (iterate, deck) label sets and certify every converged output by
shooting along the flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EndpointNotMinimal, MaxIterations, StepTooLarge, ValleyCollapse
from .flow import OrbitReport, certify_orbit, count_self_intersections
from .loop_space import (
    FreePeriodLoop,
    LiftedLoop,
    action_gradient,
    cone_flux,
    deck_transform,
    deform,
    h1_precondition,
    h1_solve,
    in_valley,
    iterate,
    latitude_loop,
    lift_loop,
    lifted_action_A,
    optimal_period,
    optimal_period_fourth,
    resample_loop,
    valley_tau,
)
from .sphere_geom import angular_distance, project_to_sphere, slerp, tangent_basis
from .tonelli import MagneticSystem


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 20000
    step0: float = 1.0
    step_min: float = 1e-12
    step_grow: float = 1.3
    step_shrink: float = 0.5
    max_step_rad: float = 0.25
    path_nodes: int = 12
    max_sweeps: int = 1500
    climb_warmup: int = 10
    reparam_every: int = 5
    refine_trigger: float = 1e-3
    band_step0: float = 0.25
    endpoint_tol: float = 1e-4
    certify_h: float = 1e-3
    certify_closure_tol: float = 1e-4
    dedupe_hausdorff: float = 1e-3
    dedupe_period: float = 1e-3
    tiny_radius: float = 0.02


@dataclass
class WaistResult:
    lifted: LiftedLoop
    report: OrbitReport
    action: float
    gradient_norm: float
    iterations: int
    history: list[float] = field(default_factory=list, repr=False)


@dataclass
class MinimaxResult:
    value: float
    argmax_index: int
    saddle_gradient_norm: float
    converged: bool
    history: list[float]
    saddle: LiftedLoop
    path: list[LiftedLoop] = field(repr=False, default_factory=list)


# ---------------------------------------------------------------------------
# waist descent


def _reduced_lift(sys: MagneticSystem, e: float, ll: LiftedLoop) -> LiftedLoop:
    """Set the period to its closed-form optimum (dA/dp = 0)."""
    p = optimal_period(sys, ll.loop, e)
    return LiftedLoop(ll.loop.with_period(p), ll.flux)


def find_waist(sys: MagneticSystem, e: float, seed: LiftedLoop, cfg: SolverConfig = SolverConfig()):
    """Descend the lifted action to a local minimizer and certify it.

    Raises ``ValleyCollapse`` when the iterate enters the short-loop valley
    and ``MaxIterations`` (carrying the best iterate) when the budget runs
    out before the gradient norm reaches ``cfg.tol``.
    """
    tau = valley_tau(sys)
    ll = _reduced_lift(sys, e, seed)
    if in_valley(sys, ll.loop, tau):
        raise ValleyCollapse("seed lies in the short-loop valley")
    action = lifted_action_A(sys, e, ll)
    step = cfg.step0
    history = [action]

    for it in range(cfg.max_iter):
        grad = action_gradient(sys, e, ll)
        direction, dual = h1_precondition(ll.loop, grad)
        if dual <= cfg.tol:
            report = replace(
                certify_orbit(sys, ll.loop, e, cfg.certify_h), gradient_norm=dual
            )
            return WaistResult(ll, report, action, dual, it, history)

        accepted = False
        while step >= cfg.step_min:
            d = -step * direction
            dmax = float(np.max(np.linalg.norm(d, axis=-1)))
            if dmax > cfg.max_step_rad:
                d *= cfg.max_step_rad / dmax
            new_nodes = project_to_sphere(ll.nodes + d)
            try:
                new_loop = FreePeriodLoop(new_nodes, ll.p)
                trial = deform(sys, ll, new_loop)
                trial = _reduced_lift(sys, e, trial)
            except (StepTooLarge, ValueError):
                step *= cfg.step_shrink
                continue
            trial_action = lifted_action_A(sys, e, trial)
            if trial_action <= action:
                ll, action = trial, trial_action
                history.append(action)
                step = min(step * cfg.step_grow, 1e3)
                accepted = True
                break
            step *= cfg.step_shrink
        if not accepted:
            raise MaxIterations(
                f"line search stalled at gradient norm {dual:.3e}", best=(ll, action, dual)
            )
        if in_valley(sys, ll.loop, tau):
            raise ValleyCollapse(f"descent entered the valley at iteration {it}")

    grad = action_gradient(sys, e, ll)
    _, dual = h1_precondition(ll.loop, grad)
    raise MaxIterations(f"no convergence in {cfg.max_iter} iterations", best=(ll, action, dual))


# ---------------------------------------------------------------------------
# flux transport across node-count changes


def transport_flux(sys: MagneticSystem, ll: LiftedLoop, new_loop: FreePeriodLoop) -> LiftedLoop:
    """Carry the ledger onto a re-discretization of (nearly) the same curve.

    Uses the difference of cone fluxes computed with one shared apex, which
    equals the thin-annulus sweep between the two polygonizations.
    """
    both = np.concatenate([ll.nodes, new_loop.nodes])
    from .loop_space import _APEX_CANDIDATES

    margins = np.pi - np.array(
        [float(np.max(angular_distance(apex, both))) for apex in _APEX_CANDIDATES]
    )
    apex = _APEX_CANDIDATES[int(np.argmax(margins))]
    old_cone = cone_flux(sys, ll.loop, apex=apex)
    new_cone = cone_flux(sys, new_loop, apex=apex)
    return LiftedLoop(new_loop, ll.flux + (new_cone - old_cone))


def resample_lifted(sys: MagneticSystem, ll: LiftedLoop, n_new: int) -> LiftedLoop:
    if n_new == ll.loop.n:
        return ll
    return transport_flux(sys, ll, resample_loop(ll.loop, n_new))


# ---------------------------------------------------------------------------
# connecting chains through the valley


def _loop_center(loop: FreePeriodLoop) -> np.ndarray:
    mean = np.mean(loop.nodes, axis=0)
    circ = np.sum(np.cross(loop.nodes, np.roll(loop.nodes, -1, axis=0)), axis=0)
    candidates = []
    if np.linalg.norm(mean) > 1e-6:
        candidates.append(mean / np.linalg.norm(mean))
    if np.linalg.norm(circ) > 1e-9:
        candidates.append(-circ / np.linalg.norm(circ))
    candidates += [np.array([0.0, 0.0, -1.0]), np.array([0.0, 0.0, 1.0]), np.array([0.0, -1.0, 0.0])]
    for c in candidates:
        if float(np.max(angular_distance(c, loop.nodes))) < np.pi - 0.3:
            return c
    raise ValueError("no admissible contraction center for the loop")


def _tiny_loop(center: np.ndarray, radius: float, n: int, winding: int) -> FreePeriodLoop:
    e1, e2 = tangent_basis(center)
    ang = winding * 2.0 * np.pi * np.arange(n) / n
    d = np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2
    nodes = np.cos(radius) * center + np.sin(radius) * d
    return FreePeriodLoop(nodes, 1.0)


def _polar_circle(axis: np.ndarray, alpha: float, n: int, handed: int) -> FreePeriodLoop:
    """Circle at polar angle alpha about the axis, right-handed for +1."""
    e1, e2 = tangent_basis(axis)
    t = 2.0 * np.pi * np.arange(n) / n * handed
    d = np.cos(t)[:, None] * e1 + np.sin(t)[:, None] * e2
    nodes = np.cos(alpha) * axis + np.sin(alpha) * d
    return FreePeriodLoop(nodes, 1.0)


def _chain_append(sys, e, chain, loop):
    prev = chain[-1]
    nxt = deform(sys, prev, loop)
    chain.append(_reduced_lift(sys, e, nxt))


def _shrink_family(loop: FreePeriodLoop, center: np.ndarray, r0: float, steps: int):
    """Loops contracting toward the center until the max radius is ~r0."""
    max_r = float(np.max(angular_distance(center, loop.nodes)))
    t_final = 1.0 - r0 / max_r
    out = []
    for k in range(1, steps + 1):
        t = t_final * k / steps
        out.append(FreePeriodLoop(slerp(loop.nodes, center, np.full(loop.n, t)), loop.p))
    return out


def _blend_family(a: FreePeriodLoop, b: FreePeriodLoop, steps: int):
    out = []
    for k in range(1, steps + 1):
        t = k / steps
        out.append(FreePeriodLoop(slerp(a.nodes, b.nodes, np.full(a.n, t)), 1.0))
    return out


def _wind_family(axis: np.ndarray, r0: float, n: int, sign: int, steps: int = 28):
    """One deck winding: grow circles about the axis across the sphere and
    carry the tiny result back; accumulates +/- the total flux."""
    out = []
    handed = 1 if sign > 0 else -1
    for k in range(1, steps + 1):
        alpha = r0 + (np.pi - 2.0 * r0) * k / steps
        out.append(_polar_circle(axis, alpha, n, handed))
    # translate the tiny loop near -axis back to +axis along a meridian
    e1, _ = tangent_basis(axis)
    back = 14
    for k in range(1, back + 1):
        beta = np.pi * (1.0 - k / back)
        center = np.cos(beta) * axis + np.sin(beta) * e1
        out.append(_tiny_loop(center, r0, n, handed))
    return out


def build_connecting_chain(
    sys: MagneticSystem,
    e: float,
    end_a: LiftedLoop,
    end_b: LiftedLoop,
    mult_a: int = 1,
    mult_b: int = 1,
    deck_shift: int = 0,
    cfg: SolverConfig = SolverConfig(),
) -> list[LiftedLoop]:
    """Chain of small deformation steps from end_a to end_b through the valley.

    ``mult_a``/``mult_b`` are the covering multiplicities of the endpoint
    curves and ``deck_shift`` the deck offset n_b - n_a; multiplicity changes
    and windings happen at tiny-loop scale where all classes meet.
    """
    if end_a.loop.n != end_b.loop.n:
        raise ValueError("endpoints must share the node count")
    n = end_a.loop.n
    r0 = cfg.tiny_radius
    chain = [_reduced_lift(sys, e, end_a)]

    c_a = _loop_center(end_a.loop)
    for loop in _shrink_family(end_a.loop, c_a, r0, steps=14):
        _chain_append(sys, e, chain, loop)
    tiny_a = _tiny_loop(c_a, r0, n, mult_a)
    for loop in _blend_family(chain[-1].loop, tiny_a, 4):
        _chain_append(sys, e, chain, loop)

    if mult_a != 1:
        for loop in _blend_family(tiny_a, _tiny_loop(c_a, r0, n, 1), 6):
            _chain_append(sys, e, chain, loop)
    for _ in range(abs(deck_shift)):
        for loop in _wind_family(c_a, r0, n, deck_shift):
            _chain_append(sys, e, chain, loop)
    c_b = _loop_center(end_b.loop)
    if float(angular_distance(c_a, c_b)) > 1e-9:
        steps = max(2, int(np.ceil(float(angular_distance(c_a, c_b)) / 0.25)))
        centers = slerp(c_a, c_b, np.arange(1, steps + 1) / steps)
        for ck in centers:
            _chain_append(sys, e, chain, _tiny_loop(ck, r0, n, 1))
    if mult_b != 1:
        for loop in _blend_family(_tiny_loop(c_b, r0, n, 1), _tiny_loop(c_b, r0, n, mult_b), 6):
            _chain_append(sys, e, chain, loop)

    expand = _shrink_family(end_b.loop, c_b, r0, steps=14)[::-1]
    for loop in _blend_family(chain[-1].loop, expand[0], 4):
        _chain_append(sys, e, chain, loop)
    for loop in expand[1:]:
        _chain_append(sys, e, chain, loop)
    _chain_append(sys, e, chain, end_b.loop)

    # the chain must land on the requested cover point; correct any residual
    # integer winding defensively
    total = sys.total_flux()
    gap = end_b.flux - chain[-1].flux
    if abs(total) > 1e-9:
        k = int(round(gap / total))
        if k != 0:
            for _ in range(abs(k)):
                for loop in _wind_family(c_b, r0, n, k):
                    _chain_append(sys, e, chain, loop)
            for loop in _blend_family(chain[-1].loop, end_b.loop, 6):
                _chain_append(sys, e, chain, loop)
            gap = end_b.flux - chain[-1].flux
    if abs(gap) > 0.02 * max(1.0, abs(total)) + 0.02:
        raise ValueError(f"connecting chain missed the cover class by {gap:.3e}")
    chain[-1] = replace(end_b)
    return chain


def _path_distance(u: LiftedLoop, v: LiftedLoop) -> float:
    d2 = float(np.mean(np.sum((u.nodes - v.nodes) ** 2, axis=-1)))
    return math.sqrt(d2 + (u.p - v.p) ** 2)


def deform_far(sys: MagneticSystem, ll: LiftedLoop, new_loop: FreePeriodLoop) -> LiftedLoop:
    """Ledger transport over an arbitrary nodewise distance.

    Splits the move into geodesic stages short enough for ``deform``.
    """
    gap = float(np.max(angular_distance(ll.nodes, new_loop.nodes)))
    if gap <= 0.4:
        return deform(sys, ll, new_loop)
    stages = int(np.ceil(gap / 0.4))
    cur = ll
    for k in range(1, stages):
        nodes = slerp(ll.nodes, new_loop.nodes, np.full(ll.loop.n, k / stages))
        p = ll.p + (new_loop.p - ll.p) * k / stages
        cur = deform(sys, cur, FreePeriodLoop(nodes, p))
    return deform(sys, cur, new_loop)


def _interpolate_on_chain(sys, e, chain, M):
    """Resample a chain of lifted loops to M evenly spaced path nodes."""
    dists = [_path_distance(chain[k], chain[k + 1]) for k in range(len(chain) - 1)]
    cum = np.concatenate([[0.0], np.cumsum(dists)])
    total = cum[-1]
    targets = np.linspace(0.0, total, M)
    path = [chain[0]]
    for j in range(1, M - 1):
        k = int(np.searchsorted(cum, targets[j], side="right") - 1)
        k = min(k, len(chain) - 2)
        seg = dists[k] if dists[k] > 1e-15 else 1.0
        t = (targets[j] - cum[k]) / seg
        nodes = slerp(chain[k].nodes, chain[k + 1].nodes, np.full(chain[k].loop.n, t))
        p = (1.0 - t) * chain[k].p + t * chain[k + 1].p
        anchor = chain[k] if t <= 0.5 else chain[k + 1]
        path.append(deform_far(sys, anchor, FreePeriodLoop(nodes, p)))
    path.append(chain[-1])
    return path


# ---------------------------------------------------------------------------
# climbing-image elastic band


def _flat_dot(nodes_a, pa, nodes_b, pb):
    return float(np.sum(nodes_a * nodes_b)) + pa * pb


def refine_stationary(
    sys: MagneticSystem,
    e: float,
    loop: FreePeriodLoop,
    tol: float = 1e-6,
    max_newton: int = 12,
    max_move: float = 0.25,
) -> tuple[FreePeriodLoop, float]:
    """Polish any stationary point (minimizer or saddle) of the lifted action.

    Matrix-free Newton-Krylov: MINRES on the exact-gradient system with
    Hessian-vector products by central differences of the action gradient
    and the H^1 metric as preconditioner.  MINRES tolerates the indefinite
    Hessian of a mountain pass and the reparametrization zero mode.  The
    ledger never enters: the gradient depends on the loop alone.
    """
    from scipy.sparse.linalg import LinearOperator, minres

    start_nodes = loop.nodes.copy()
    n = loop.n

    def raw_grad(lp: FreePeriodLoop) -> np.ndarray:
        g = action_gradient(sys, e, LiftedLoop(lp, 0.0))
        return np.concatenate([g.node_grads.ravel(), [g.p_grad]])

    def dual_norm_of(flat: np.ndarray) -> float:
        nodes_part = flat[:-1].reshape(n, 3)
        sol = h1_solve(nodes_part)
        return float(np.sqrt(max(float(np.sum(nodes_part * sol)) + flat[-1] ** 2, 0.0)))

    def retract(lp: FreePeriodLoop, flat_step: np.ndarray, scale: float) -> FreePeriodLoop:
        dn = flat_step[:-1].reshape(n, 3) * scale
        dp = flat_step[-1] * scale
        return FreePeriodLoop(project_to_sphere(lp.nodes + dn), max(lp.p + dp, 1e-9))

    g = raw_grad(loop)
    dual = dual_norm_of(g)
    for _ in range(max_newton):
        if dual <= tol:
            break

        def hess_vec(v: np.ndarray) -> np.ndarray:
            vn = float(np.linalg.norm(v))
            if vn == 0.0:
                return np.zeros_like(v)
            eps = 1e-6 / vn
            gp = raw_grad(retract(loop, v, eps))
            gm = raw_grad(retract(loop, v, -eps))
            return (gp - gm) / (2.0 * eps)

        def precond(v: np.ndarray) -> np.ndarray:
            out = np.empty_like(v)
            out[:-1] = h1_solve(v[:-1].reshape(n, 3)).ravel()
            out[-1] = v[-1]
            return out

        dim = 3 * n + 1
        H = LinearOperator((dim, dim), matvec=hess_vec)
        Minv = LinearOperator((dim, dim), matvec=precond)
        step, _ = minres(H, -g, M=Minv, rtol=1e-2, maxiter=200)

        improved = False
        alpha = 1.0
        while alpha > 1e-4:
            cand = retract(loop, step, alpha)
            if float(np.max(angular_distance(cand.nodes, start_nodes))) > max_move:
                alpha *= 0.5
                continue
            g2 = raw_grad(cand)
            dual2 = dual_norm_of(g2)
            if dual2 < dual:
                loop, g, dual = cand, g2, dual2
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    return loop, dual


def _reparametrize(sys, e, path, climb):
    """Equal-arc respacing, holding endpoints and the climbing node fixed."""
    out = list(path)
    for lo, hi in ((0, climb), (climb, len(path) - 1)):
        if hi - lo < 2:
            continue
        seg = path[lo : hi + 1]
        dists = [_path_distance(seg[k], seg[k + 1]) for k in range(len(seg) - 1)]
        cum = np.concatenate([[0.0], np.cumsum(dists)])
        if cum[-1] < 1e-14:
            continue
        targets = np.linspace(0.0, cum[-1], len(seg))
        for j in range(1, len(seg) - 1):
            k = int(np.searchsorted(cum, targets[j], side="right") - 1)
            k = min(k, len(seg) - 2)
            t = (targets[j] - cum[k]) / (dists[k] if dists[k] > 1e-15 else 1.0)
            nodes = slerp(seg[k].nodes, seg[k + 1].nodes, np.full(seg[k].loop.n, t))
            p = (1.0 - t) * seg[k].p + t * seg[k + 1].p
            anchor = seg[k] if t <= 0.5 else seg[k + 1]
            out[lo + j] = deform_far(sys, anchor, FreePeriodLoop(nodes, p))
    return out


def minimax_path(
    sys: MagneticSystem,
    e: float,
    end_a: LiftedLoop,
    end_b: LiftedLoop,
    M: int | None = None,
    cfg: SolverConfig = SolverConfig(),
    mult_a: int = 1,
    mult_b: int = 1,
    deck_shift: int = 0,
    initial_path: list[LiftedLoop] | None = None,
) -> MinimaxResult:
    """Climbing-image elastic band between two local minimizers.

    Interior nodes descend along the action gradient orthogonally to the
    band tangent; the running argmax ascends along the tangent instead.  The
    returned value (max action over the relaxed band) is an upper bound for
    the true minimax of the connecting family.
    """
    M = M or cfg.path_nodes
    if M < 8:
        raise ValueError("need at least 8 path nodes")
    for name, end in (("end_a", end_a), ("end_b", end_b)):
        grad = action_gradient(sys, e, end)
        _, dual = h1_precondition(end.loop, grad)
        if dual > cfg.endpoint_tol:
            raise EndpointNotMinimal(f"{name} has gradient norm {dual:.3e}")

    if np.array_equal(end_a.nodes, end_b.nodes) and end_a.p == end_b.p and end_a.flux == end_b.flux:
        value = lifted_action_A(sys, e, end_a)
        return MinimaxResult(value, 0, 0.0, True, [value], end_a, [end_a, end_b])

    # run the whole band in a ledger relative to end_a: deck-shifting both
    # endpoints then reproduces the identical computation, so minimax values
    # are exactly equivariant under the deck action
    flux_base = end_a.flux
    end_a = LiftedLoop(end_a.loop, 0.0)
    end_b = LiftedLoop(end_b.loop, end_b.flux - flux_base)

    if initial_path is None:
        chain = build_connecting_chain(sys, e, end_a, end_b, mult_a, mult_b, deck_shift, cfg)
        path = _interpolate_on_chain(sys, e, chain, M)
    else:
        path = [LiftedLoop(u.loop, u.flux - flux_base) for u in initial_path]
        M = len(path)

    actions = [lifted_action_A(sys, e, u) for u in path]
    etas = np.full(M, cfg.band_step0)
    history: list[float] = []
    saddle_dual = np.inf

    for sweep in range(cfg.max_sweeps):
        climb = int(np.argmax(actions))
        climbing_active = sweep >= cfg.climb_warmup and 0 < climb < M - 1
        band_ready = False
        for j in range(1, M - 1):
            u = path[j]
            grad = action_gradient(sys, e, u)
            direction, dual = h1_precondition(u.loop, grad)
            if j == climb:
                saddle_dual = dual
                if climbing_active and dual <= cfg.refine_trigger:
                    band_ready = True
                    break
            tan_nodes = path[j + 1].nodes - path[j - 1].nodes
            tan_p = path[j + 1].p - path[j - 1].p
            tnorm = math.sqrt(_flat_dot(tan_nodes, tan_p, tan_nodes, tan_p))
            if tnorm > 1e-14:
                tan_nodes = tan_nodes / tnorm
                tan_p = tan_p / tnorm
            proj = _flat_dot(direction, grad.p_grad, tan_nodes, tan_p)
            if j == climb and climbing_active:
                step_nodes = direction - 2.0 * proj * tan_nodes
                step_p = grad.p_grad - 2.0 * proj * tan_p
            else:
                step_nodes = direction - proj * tan_nodes
                step_p = grad.p_grad - proj * tan_p
            d = -etas[j] * step_nodes
            dmax = float(np.max(np.linalg.norm(d, axis=-1)))
            if dmax > cfg.max_step_rad:
                d *= cfg.max_step_rad / dmax
            new_p = max(u.p - etas[j] * step_p, 1e-6)
            try:
                new_loop = FreePeriodLoop(project_to_sphere(u.nodes + d), new_p)
                trial = deform(sys, u, new_loop)
            except (StepTooLarge, ValueError):
                etas[j] *= 0.5
                continue
            trial_action = lifted_action_A(sys, e, trial)
            if j == climb and climbing_active:
                path[j], actions[j] = trial, trial_action
                etas[j] = min(etas[j] * 1.1, 2.0)
            elif trial_action <= actions[j] + 1e-13 * (1.0 + abs(actions[j])):
                path[j], actions[j] = trial, trial_action
                etas[j] = min(etas[j] * 1.2, 2.0)
            else:
                etas[j] *= 0.5
        if band_ready:
            break
        if (sweep + 1) % cfg.reparam_every == 0:
            path = _reparametrize(sys, e, path, int(np.argmax(actions)))
            actions = [lifted_action_A(sys, e, u) for u in path]
        history.append(max(actions))

    # local polish of the running maximum to a genuine stationary point
    climb = int(np.argmax(actions))
    converged = False
    if 0 < climb < M - 1:
        refined_loop, saddle_dual = refine_stationary(sys, e, path[climb].loop, tol=cfg.tol)
        if saddle_dual <= cfg.tol:
            try:
                path[climb] = deform(sys, path[climb], refined_loop)
                actions[climb] = lifted_action_A(sys, e, path[climb])
                converged = True
            except StepTooLarge:
                converged = False
    else:
        grad = action_gradient(sys, e, path[climb])
        _, saddle_dual = h1_precondition(path[climb].loop, grad)
    climb = int(np.argmax(actions))
    value = float(max(actions)) + flux_base
    history = [h + flux_base for h in history] + [value]
    path = [LiftedLoop(u.loop, u.flux + flux_base) for u in path]
    return MinimaxResult(value, climb, float(saddle_dual), converged, history, path[climb], path)


# ---------------------------------------------------------------------------
# label bookkeeping, scans, multiplicity


def polish_candidate(sys: MagneticSystem, loop: FreePeriodLoop, e: float) -> FreePeriodLoop:
    """Candidate for shooting certification: 4th-order-accurate period."""
    return loop.with_period(optimal_period_fourth(sys, loop, e))


def _endpoint_for_label(sys, e, waists_by_mult, m, n):
    ll = iterate(waists_by_mult[m], m)
    return deck_transform(sys, ll, n)


def prepare_waists(sys, e, labels, seed_builder, path_n, cfg) -> dict[int, LiftedLoop]:
    """Converge one waist per covering multiplicity at path_n/m nodes."""
    mults = sorted({m for (m, _) in labels})
    out: dict[int, LiftedLoop] = {}
    for m in mults:
        if path_n % m != 0:
            raise ValueError(f"path node count {path_n} not divisible by multiplicity {m}")
        n_m = path_n // m
        seed = seed_builder(n_m)
        res = find_waist(sys, e, seed, cfg)
        out[m] = res.lifted
    return out


def default_seed_builder(sys: MagneticSystem, e: float, z0: float = 0.0, amplitude: float = 0.05, mode: int = 3):
    """Perturbed-latitude seed factory at a requested node count."""

    def build(n: int) -> LiftedLoop:
        from .loop_space import perturb_normal

        loop = latitude_loop(z0, n)
        if amplitude != 0.0:
            loop = perturb_normal(loop, amplitude, mode)
        loop = loop.with_period(optimal_period(sys, loop, e))
        return lift_loop(sys, loop)

    return build


def minimax_between_labels(sys, e, waists_by_mult, label_a, label_b, cfg, M=None):
    m0, n0 = label_a
    m1, n1 = label_b
    end_a = _endpoint_for_label(sys, e, waists_by_mult, m0, n0)
    end_b = _endpoint_for_label(sys, e, waists_by_mult, m1, n1)
    return minimax_path(
        sys, e, end_a, end_b, M=M, cfg=cfg, mult_a=m0, mult_b=m1, deck_shift=n1 - n0
    )


def scan_energy(
    sys: MagneticSystem,
    e_grid,
    labels=((1, 0), (2, 0)),
    cfg: SolverConfig = SolverConfig(),
    path_n: int = 1024,
    seed_z0: float = 0.0,
    seed_amplitude: float = 0.05,
    seed_mode: int = 3,
):
    """Waist action and minimax upper bound per energy; rows carry error
    markers instead of aborting the scan."""
    e_grid = list(e_grid)
    if any(b <= a for a, b in zip(e_grid, e_grid[1:])):
        raise ValueError("energy grid must be strictly increasing")
    rows = []
    for e in e_grid:
        row = {"e": e, "status": "ok"}
        try:
            seeds = default_seed_builder(sys, e, seed_z0, seed_amplitude, seed_mode)
            waists = prepare_waists(sys, e, labels, seeds, path_n, cfg)
            waist = waists[1] if 1 in waists else next(iter(waists.values()))
            row["waist_action"] = lifted_action_A(sys, e, waist)
            row["waist_gradient_norm"] = float(
                h1_precondition(waist.loop, action_gradient(sys, e, waist))[1]
            )
            row["waist_self_intersections"] = count_self_intersections(waist.nodes)
            mm = minimax_between_labels(sys, e, waists, labels[0], labels[1], cfg)
            row["minimax_value"] = mm.value
            row["minimax_converged"] = mm.converged
            row["saddle_gradient_norm"] = mm.saddle_gradient_norm
            rep = certify_orbit(sys, polish_candidate(sys, mm.saddle.loop, e), e, cfg.certify_h)
            row["saddle_closure"] = rep.closure_residual
            row["saddle_energy_residual"] = rep.mean_energy_residual
        except Exception as exc:  # noqa: BLE001 - rows must not kill the scan
            row["status"] = f"error: {type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _primitive(loop: FreePeriodLoop, tol: float = 5e-3) -> FreePeriodLoop:
    """Smallest-period representative of an m-fold retraced loop."""
    n = loop.n
    best = loop
    for m in range(2, n // 16 + 1):
        if n % m != 0:
            continue
        shift = n // m
        if float(np.max(angular_distance(loop.nodes, np.roll(loop.nodes, -shift, axis=0)))) < tol:
            best = FreePeriodLoop(loop.nodes[:shift], loop.p / m)
            break
    return best


def _points_to_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Geodesic distance from each point to a closed geodesic polygon."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    normal = np.cross(a, b)
    nn = np.linalg.norm(normal, axis=-1, keepdims=True)
    normal = normal / np.where(nn > 1e-15, nn, 1.0)
    cos_len = np.sum(a * b, axis=-1)
    # distance to the full great circle of each segment
    sin_off = np.clip(points @ normal.T, -1.0, 1.0)
    to_circle = np.abs(np.arcsin(sin_off))
    foot = points[:, None, :] - sin_off[:, :, None] * normal[None, :, :]
    fn = np.linalg.norm(foot, axis=-1, keepdims=True)
    foot = foot / np.where(fn > 1e-15, fn, 1.0)
    inside = (np.sum(foot * a[None], axis=-1) >= cos_len[None]) & (
        np.sum(foot * b[None], axis=-1) >= cos_len[None]
    )
    to_ends = np.minimum(
        angular_distance(points[:, None, :], a[None]), angular_distance(points[:, None, :], b[None])
    )
    return np.min(np.where(inside, to_circle, to_ends), axis=1)


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric trace distance between closed polygons (node-to-arc based,
    so it is insensitive to sampling density)."""
    return float(max(_points_to_polygon(a, b).max(), _points_to_polygon(b, a).max()))


@dataclass
class OrbitRecord:
    source: str
    lifted: LiftedLoop
    action: float
    report: OrbitReport
    primitive: FreePeriodLoop


@dataclass
class MultiplicityResult:
    orbits: list[OrbitRecord]
    failures: list[dict]

    @property
    def distinct_count(self) -> int:
        return len(self.orbits)


def multiplicity_search(
    sys: MagneticSystem,
    e: float,
    labels,
    cfg: SolverConfig = SolverConfig(),
    path_n: int = 1024,
    seed_z0: float = 0.0,
    seed_amplitude: float = 0.05,
    seed_mode: int = 3,
) -> MultiplicityResult:
    """Waist plus minimax saddles over all label pairs, deduplicated by
    primitive-orbit trace distance; nonconvergent pairs are reported."""
    labels = [tuple(lbl) for lbl in labels]
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be distinct")
    failures: list[dict] = []
    records: list[OrbitRecord] = []

    seeds = default_seed_builder(sys, e, seed_z0, seed_amplitude, seed_mode)
    waists = prepare_waists(sys, e, labels, seeds, path_n, cfg)
    base_mult = min(waists)
    waist = waists[base_mult]
    wrep = certify_orbit(sys, waist.loop, e, cfg.certify_h)
    wrep = replace(
        wrep, gradient_norm=h1_precondition(waist.loop, action_gradient(sys, e, waist))[1]
    )
    records.append(
        OrbitRecord(
            source="waist",
            lifted=waist,
            action=lifted_action_A(sys, e, waist),
            report=wrep,
            primitive=_primitive(waist.loop),
        )
    )

    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            pair = (labels[i], labels[j])
            try:
                mm = minimax_between_labels(sys, e, waists, labels[i], labels[j], cfg)
            except Exception as exc:  # noqa: BLE001 - aggregate, return partial
                failures.append({"pair": pair, "reason": f"{type(exc).__name__}: {exc}"})
                continue
            if not mm.converged:
                failures.append(
                    {"pair": pair, "reason": f"nonconvergence (saddle grad {mm.saddle_gradient_norm:.2e})"}
                )
                continue
            rep = certify_orbit(sys, polish_candidate(sys, mm.saddle.loop, e), e, cfg.certify_h)
            rep = replace(rep, gradient_norm=mm.saddle_gradient_norm)
            if rep.closure_residual > cfg.certify_closure_tol:
                failures.append(
                    {"pair": pair, "reason": f"certification failed (closure {rep.closure_residual:.2e})"}
                )
                continue
            records.append(
                OrbitRecord(
                    source=f"minimax {pair[0]}-{pair[1]}",
                    lifted=mm.saddle,
                    action=mm.value,
                    report=rep,
                    primitive=_primitive(mm.saddle.loop),
                )
            )

    distinct: list[OrbitRecord] = []
    for rec in records:
        dup = None
        for kept in distinct:
            hd = hausdorff_distance(rec.primitive.nodes, kept.primitive.nodes)
            pr = abs(rec.primitive.p / kept.primitive.p - 1.0)
            if hd < cfg.dedupe_hausdorff and pr < cfg.dedupe_period:
                dup = kept
                break
        if dup is None:
            distinct.append(rec)
        else:
            dup.source = f"{dup.source} & {rec.source}"
    return MultiplicityResult(distinct, failures)
