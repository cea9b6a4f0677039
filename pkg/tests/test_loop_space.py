import numpy as np
import pytest

from magflow import (
    FreePeriodLoop,
    LiftedLoop,
    MagneticSystem,
    ScalarField,
    action_gradient,
    deck_transform,
    deform,
    discrete_action_S,
    h1_precondition,
    in_valley,
    iterate,
    latitude_loop,
    lift_loop,
    lifted_action_A,
    optimal_period,
    sweep_flux,
    valley_tau,
    zeta_loop,
)
from magflow.errors import StepTooLarge
from magflow.loop_space import h1_solve, lifted_from_dict, lifted_to_dict, resample_loop
from magflow.sphere_geom import project_to_sphere, tangent_basis
from tests.conftest import random_lifted, random_loop

E = 0.02


def constant_like_loop(q, n=16, p=1.0, radius=1e-7):
    """Numerically constant loop (tiny circle keeps nodes distinct)."""
    e1, e2 = tangent_basis(q)
    t = 2.0 * np.pi * np.arange(n) / n
    d = np.cos(t)[:, None] * e1 + np.sin(t)[:, None] * e2
    return FreePeriodLoop(project_to_sphere(q + radius * d), p)


class TestLoopContainers:
    def test_node_minimum(self):
        nodes = latitude_loop(0.0, 16).nodes
        with pytest.raises(ValueError):
            FreePeriodLoop(nodes[:8], 1.0)

    def test_positive_period(self):
        with pytest.raises(ValueError):
            latitude_loop(0.0, 32).with_period(0.0)

    def test_antipodal_gap_rejected(self):
        nodes = latitude_loop(0.0, 32).nodes.copy()
        nodes[1] = -nodes[0]
        with pytest.raises(ValueError):
            FreePeriodLoop(nodes, 1.0)

    def test_roundtrip_serialization(self, sys_z, rng):
        ll = random_lifted(sys_z, rng)
        back = lifted_from_dict(lifted_to_dict(ll))
        assert np.allclose(back.nodes, ll.nodes)
        assert back.p == ll.p and back.flux == ll.flux


class TestDiscreteAction:
    def test_constant_loop_value(self):
        # stationary curve: A = p * (L(q, 0) + e) with L(q, 0) = -U(q)
        sys_u = MagneticSystem.electromagnetic(
            ScalarField.height(1.0, 0.0), potential=ScalarField.height(0.3, 0.0)
        )
        loop = constant_like_loop(np.array([0.0, 0.0, 1.0]), p=2.0)
        val = discrete_action_S(sys_u, 0.5, loop)
        assert val == pytest.approx(2.0 * (-0.3 + 0.5), abs=1e-9)

    def test_equator_optimal_action(self, sys_z):
        loop = latitude_loop(0.0, 128)
        loop = loop.with_period(optimal_period(sys_z, loop, E))
        assert loop.p == pytest.approx(10.0 * np.pi, rel=1e-3)
        assert discrete_action_S(sys_z, E, loop) == pytest.approx(0.4 * np.pi, abs=2e-3)

    def test_period_convexity(self, sys_z, rng):
        # S is convex in p with the minimum where the mean energy equals e
        loop = random_loop(rng, 64)
        p_star = optimal_period(sys_z, loop, E)
        ps = p_star * np.array([0.6, 0.8, 1.0, 1.25, 1.6])
        vals = [discrete_action_S(sys_z, E, loop.with_period(p)) for p in ps]
        assert np.argmin(vals) == 2
        second = np.diff(vals, 2)
        assert np.all(second > 0)


class TestLift:
    def test_equator_lower_cap_flux(self, sys_z):
        ll = lift_loop(sys_z, latitude_loop(0.0, 128))
        assert ll.flux == pytest.approx(-np.pi, abs=3e-4)

    def test_lifted_action_equator(self, sys_z):
        loop = latitude_loop(0.0, 128)
        loop = loop.with_period(optimal_period(sys_z, loop, E))
        ll = lift_loop(sys_z, loop)
        assert lifted_action_A(sys_z, E, ll) == pytest.approx(-0.6 * np.pi, abs=5e-3)

    def test_zero_flux_means_plain_action(self, sys_z, rng):
        loop = random_loop(rng)
        ll = LiftedLoop(loop, 0.0)
        assert lifted_action_A(sys_z, E, ll) == discrete_action_S(sys_z, E, loop)

    def test_tiny_loop_lift_is_small(self, sys_shifted):
        ll = lift_loop(sys_shifted, constant_like_loop(np.array([0.0, 0.0, 1.0]), radius=1e-4))
        assert abs(ll.flux) < 1e-6


class TestSweepFlux:
    def test_identity_sweep(self, sys_shifted, rng):
        loop = random_loop(rng)
        assert sweep_flux(sys_shifted, loop, loop) == 0.0

    def test_reversal_antisymmetry(self, sys_shifted, rng):
        old = random_loop(rng)
        delta = 0.3 * np.cos(3 * 2 * np.pi * np.arange(old.n) / old.n)
        new = FreePeriodLoop(
            project_to_sphere(old.nodes + delta[:, None] * np.array([0.0, 0.0, 1.0])), old.p
        )
        fwd = sweep_flux(sys_shifted, old, new)
        back = sweep_flux(sys_shifted, new, old)
        assert abs(fwd) > 1e-4
        assert fwd + back == pytest.approx(0.0, abs=1e-10)

    def test_step_guard(self, sys_shifted):
        a = latitude_loop(0.0, 64)
        b = latitude_loop(0.9, 64)
        with pytest.raises(StepTooLarge):
            sweep_flux(sys_shifted, a, b)

    def test_zeta_family_covers_sphere(self, sys_shifted):
        # sweeping the deck-generator family accumulates the total flux
        steps, n = 64, 128
        total = 0.0
        prev = zeta_loop(0.0, n)
        for k in range(1, steps + 1):
            cur = zeta_loop(k / steps, n)
            total += sweep_flux(sys_shifted, prev, cur)
            prev = cur
        assert total == pytest.approx(sys_shifted.total_flux(), abs=1e-4)
        assert total == pytest.approx(0.8 * np.pi, abs=1e-4)

    def test_deform_flux_ledger_closed_path(self, sys_shifted, rng):
        # walking a chain of shapes out and back returns the ledger exactly
        loop = random_loop(rng, 48, wobble=0.2)
        ll = lift_loop(sys_shifted, loop)
        bump_dirs = rng.normal(size=(6, 3))
        shapes = [ll.loop.nodes]
        for k in range(6):
            delta = 0.15 * np.cos((k % 3 + 1) * 2 * np.pi * np.arange(48) / 48)
            shapes.append(project_to_sphere(shapes[-1] + delta[:, None] * bump_dirs[k]))
        cur = ll
        for nodes in shapes[1:]:
            cur = deform(sys_shifted, cur, FreePeriodLoop(nodes, cur.p))
        assert abs(cur.flux - ll.flux) > 1e-3  # the excursion does move flux
        for nodes in shapes[-2::-1]:
            cur = deform(sys_shifted, cur, FreePeriodLoop(nodes, cur.p))
        assert cur.flux == pytest.approx(ll.flux, abs=1e-10)

    def test_winding_cycle_adds_total_flux(self, sys_shifted):
        # a closed deformation that sweeps the sphere once shifts the ledger
        # by one unit of total flux: grow latitude circles pole to pole, then
        # carry the tiny loop home along a meridian
        n = 96
        r0 = 0.02
        ll = lift_loop(sys_shifted, constant_like_loop(np.array([0.0, 0.0, 1.0]), n, radius=r0))
        start_flux = ll.flux
        cur = ll
        steps = 48
        for k in range(1, steps + 1):
            alpha = r0 + (np.pi - 2 * r0) * k / steps
            z0 = np.cos(alpha)
            rho = np.sin(alpha)
            phi = 2.0 * np.pi * np.arange(n) / n  # right-handed about +z
            nodes = np.stack([rho * np.cos(phi), rho * np.sin(phi), np.full(n, z0)], axis=1)
            cur = deform(sys_shifted, cur, FreePeriodLoop(nodes, cur.p))
        for k in range(1, 17):
            beta = np.pi * (1.0 - k / 16)
            center = np.array([np.sin(beta), 0.0, np.cos(beta)])
            cur = deform(
                sys_shifted, cur, constant_like_loop(center, n, radius=r0)
            )
        assert cur.flux - start_flux == pytest.approx(sys_shifted.total_flux(), abs=2e-4)


class TestIterate:
    def test_identity(self, sys_z, rng):
        ll = random_lifted(sys_z, rng)
        assert iterate(ll, 1) is ll

    def test_action_linearity_exact(self, sys_shifted, rng):
        for m in (2, 3, 5):
            ll = random_lifted(sys_shifted, rng)
            a1 = lifted_action_A(sys_shifted, E, ll)
            am = lifted_action_A(sys_shifted, E, iterate(ll, m))
            assert am == pytest.approx(m * a1, rel=1e-12)

    def test_composition_with_resampling(self, sys_z, rng):
        ll = random_lifted(sys_z, rng, n=1024)
        # 6*1024 exceeds the node cap, exercising the resampling branch
        it6 = iterate(ll, 6)
        assert it6.loop.n == 4096
        a6 = lifted_action_A(sys_z, E, it6)
        a23 = lifted_action_A(sys_z, E, iterate(iterate(ll, 2), 3))
        assert a23 == pytest.approx(a6, rel=1e-6)

    def test_order_guard(self, sys_z, rng):
        with pytest.raises(ValueError):
            iterate(random_lifted(sys_z, rng), 0)


class TestDeckTransform:
    def test_identity(self, sys_shifted, rng):
        ll = random_lifted(sys_shifted, rng)
        assert deck_transform(sys_shifted, ll, 0) is ll

    def test_action_shift(self, sys_shifted, rng):
        ll = random_lifted(sys_shifted, rng)
        a0 = lifted_action_A(sys_shifted, E, ll)
        a1 = lifted_action_A(sys_shifted, E, deck_transform(sys_shifted, ll, 1))
        assert a1 - a0 == pytest.approx(0.8 * np.pi, abs=1e-6)

    def test_inverse_composition(self, sys_shifted, rng):
        ll = random_lifted(sys_shifted, rng)
        back = deck_transform(sys_shifted, deck_transform(sys_shifted, ll, 3), -3)
        assert back.flux == pytest.approx(ll.flux, abs=1e-14)

    def test_shift_exactness(self, sys_shifted, rng):
        ll = random_lifted(sys_shifted, rng)
        total = sys_shifted.total_flux()
        for k in (-2, 1, 5):
            shifted = deck_transform(sys_shifted, ll, k)
            assert shifted.flux - ll.flux == k * total


class TestActionGradient:
    def _fd_gradient(self, sys, e, ll, eps=1e-5):
        loop = ll.loop
        n = loop.n
        fd = np.zeros((n, 3))
        for i in range(n):
            e1, e2 = tangent_basis(loop.nodes[i])
            for d in (e1, e2):
                plus = loop.nodes.copy()
                minus = loop.nodes.copy()
                plus[i] = project_to_sphere(loop.nodes[i] + eps * d)
                minus[i] = project_to_sphere(loop.nodes[i] - eps * d)
                ap = lifted_action_A(sys, e, deform(sys, ll, FreePeriodLoop(plus, loop.p)))
                am = lifted_action_A(sys, e, deform(sys, ll, FreePeriodLoop(minus, loop.p)))
                fd[i] += ((ap - am) / (2.0 * eps)) * d
        ap = lifted_action_A(sys, e, LiftedLoop(loop.with_period(loop.p + eps), ll.flux))
        am = lifted_action_A(sys, e, LiftedLoop(loop.with_period(loop.p - eps), ll.flux))
        return fd, (ap - am) / (2.0 * eps)

    def test_matches_finite_differences(self, sys_shifted, rng):
        for n in (32, 64, 128):
            ll = random_lifted(sys_shifted, rng, n=n)
            grad = action_gradient(sys_shifted, E, ll)
            fd_nodes, fd_p = self._fd_gradient(sys_shifted, E, ll)
            num = np.sqrt(np.sum((fd_nodes - grad.node_grads) ** 2) + (fd_p - grad.p_grad) ** 2)
            den = np.sqrt(np.sum(fd_nodes**2) + fd_p**2)
            assert num / den < 1e-5

    def test_matches_fd_with_potential_and_drift(self, rng):
        from magflow.fields import DriftField

        sys_full = MagneticSystem.electromagnetic(
            ScalarField.height(1.0, 0.2),
            potential=ScalarField.zonal_poly(0.1, -0.2, 0.15),
            drift=DriftField.azimuthal(0.3),
        )
        ll = random_lifted(sys_full, rng, n=48)
        grad = action_gradient(sys_full, 0.6, ll)
        fd_nodes, fd_p = self._fd_gradient(sys_full, 0.6, ll)
        num = np.sqrt(np.sum((fd_nodes - grad.node_grads) ** 2) + (fd_p - grad.p_grad) ** 2)
        den = np.sqrt(np.sum(fd_nodes**2) + fd_p**2)
        assert num / den < 1e-5

    def test_matches_fd_with_conformal_metric(self, rng):
        from magflow.sphere_geom import Metric
        from magflow.tonelli import Lagrangian

        metric = Metric.conformal(ScalarField.height(0.2, 0.0))
        lag = Lagrangian.electromagnetic(metric, potential=ScalarField.height(0.1, 0.0))
        sys_conf = MagneticSystem(lag, ScalarField.height(1.0, 0.2))
        ll = random_lifted(sys_conf, rng, n=48)
        grad = action_gradient(sys_conf, 0.3, ll)
        fd_nodes, fd_p = self._fd_gradient(sys_conf, 0.3, ll)
        num = np.sqrt(np.sum((fd_nodes - grad.node_grads) ** 2) + (fd_p - grad.p_grad) ** 2)
        den = np.sqrt(np.sum(fd_nodes**2) + fd_p**2)
        assert num / den < 1e-5

    def test_p_component_closed_form(self, sys_z, rng):
        loop = random_loop(rng)
        p_star = optimal_period(sys_z, loop, E)
        grad = action_gradient(sys_z, E, LiftedLoop(loop.with_period(p_star), 0.0))
        assert abs(grad.p_grad) < 1e-10
        grad2 = action_gradient(sys_z, E, LiftedLoop(loop.with_period(2 * p_star), 0.0))
        assert abs(grad2.p_grad) > 1e-4

    def test_gradient_vanishes_at_critical_circle(self, sys_z):
        loop = latitude_loop(0.0, 128)
        loop = loop.with_period(optimal_period(sys_z, loop, E))
        ll = lift_loop(sys_z, loop)
        _, dual = h1_precondition(loop, action_gradient(sys_z, E, ll))
        assert dual < 1e-12

    def test_gradients_tangent(self, sys_shifted, rng):
        ll = random_lifted(sys_shifted, rng)
        grad = action_gradient(sys_shifted, E, ll)
        dots = np.sum(grad.node_grads * ll.nodes, axis=1)
        assert np.max(np.abs(dots)) < 1e-12


class TestH1Solve:
    def test_matches_dense_solve(self, rng):
        n = 32
        vecs = rng.normal(size=(n, 3))
        dense = np.eye(n)
        d = np.roll(np.eye(n), -1, axis=1) - np.eye(n)
        m = dense + n * n * d.T @ d
        expected = np.linalg.solve(m, vecs)
        assert np.allclose(h1_solve(vecs), expected, atol=1e-10)


class TestValley:
    def test_constant_loop_inside(self, sys_shifted):
        loop = constant_like_loop(np.array([0.0, 0.0, 1.0]), p=0.05)
        assert in_valley(sys_shifted, loop, 0.1)

    def test_equator_outside(self, sys_shifted):
        loop = latitude_loop(0.0, 64).with_period(10.0 * np.pi)
        assert not in_valley(sys_shifted, loop, 0.1)

    def test_boundary_is_strict(self, sys_shifted):
        tau = 0.1
        loop = constant_like_loop(np.array([0.0, 0.0, 1.0]), p=tau / 2)
        w = loop.velocities()
        speed_sq = float(np.mean(np.sum(w * w, axis=1)))
        scale = np.sqrt(tau * loop.p / speed_sq)
        nodes = project_to_sphere(
            np.array([0.0, 0.0, 1.0]) + scale * (loop.nodes - np.array([0.0, 0.0, 1.0]))
        )
        boundary = FreePeriodLoop(nodes, loop.p)
        wb = boundary.velocities()
        sb = float(np.mean(np.sum(wb * wb, axis=1)))
        if sb < tau * loop.p:  # nudge outward until exactly at/over the line
            boundary = FreePeriodLoop(
                project_to_sphere(
                    np.array([0.0, 0.0, 1.0])
                    + 1.01 * scale * (loop.nodes - np.array([0.0, 0.0, 1.0]))
                ),
                loop.p,
            )
        assert not in_valley(sys_shifted, boundary, tau)

    def test_valley_tau_capped(self, sys_shifted):
        # 2*h1/sup = 2*0.5/1.2 = 5/6, capped at 0.1
        assert valley_tau(sys_shifted) == pytest.approx(0.1)

    def test_valley_tau_scaling(self):
        big = MagneticSystem.kinetic(ScalarField.height(10.0, 2.0))
        # sup |f| = 12 -> tau = 2*0.5/12 = 1/12 < cap
        assert valley_tau(big) == pytest.approx(1.0 / 12.0, rel=1e-3)

    def test_zero_form_returns_cap(self):
        empty = MagneticSystem.kinetic(ScalarField.constant(0.0))
        assert valley_tau(empty) == pytest.approx(0.1)


class TestResample:
    def test_preserves_latitude(self, sys_z):
        # interpolation is geodesic, so chords sag toward the equator by
        # O(gap^2); at 128 source nodes that is below 1e-4
        loop = latitude_loop(0.3, 128)
        fine = resample_loop(loop, 512)
        assert fine.n == 512
        assert np.max(np.abs(fine.nodes[:, 2] - 0.3)) < 1e-4

    def test_action_stable(self, sys_z):
        loop = latitude_loop(0.0, 256).with_period(10.0 * np.pi)
        re = resample_loop(loop, 512)
        a0 = discrete_action_S(sys_z, E, loop)
        a1 = discrete_action_S(sys_z, E, re)
        assert a1 == pytest.approx(a0, rel=1e-4)
