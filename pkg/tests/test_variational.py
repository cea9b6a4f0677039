import numpy as np
import pytest
from scipy import integrate as sp_integrate
from scipy import optimize

from magflow import (
    FreePeriodLoop,
    LiftedLoop,
    MagneticSystem,
    ScalarField,
    SolverConfig,
    action_gradient,
    certify_orbit,
    deck_transform,
    find_waist,
    h1_precondition,
    iterate,
    latitude_loop,
    lift_loop,
    lifted_action_A,
    minimax_path,
    optimal_period,
    perturb_normal,
    refine_stationary,
)
from magflow.errors import EndpointNotMinimal, MaxIterations, ValleyCollapse
from magflow.variational import (
    _primitive,
    build_connecting_chain,
    default_seed_builder,
    hausdorff_distance,
    minimax_between_labels,
    multiplicity_search,
    polish_candidate,
    prepare_waists,
    scan_energy,
    transport_flux,
)

E = 0.02
FAST = SolverConfig(max_iter=6000)


def latitude_oracle_minimum(f_profile, e):
    """1-D oracle: minimal lifted action over latitude circles."""

    def action(z0):
        flux, _ = sp_integrate.quad(f_profile, -1.0, z0, limit=200)
        return 2.0 * np.pi * (np.sqrt(1.0 - z0 * z0) * np.sqrt(2.0 * e) + flux)

    res = optimize.minimize_scalar(action, bounds=(-0.999, 0.999), method="bounded")
    return float(res.x), float(res.fun)


class TestFindWaist:
    def test_equator_waist(self, sys_z):
        seed = default_seed_builder(sys_z, E)(128)
        res = find_waist(sys_z, E, seed, FAST)
        assert res.gradient_norm <= 1e-6
        assert res.action == pytest.approx(-0.6 * np.pi, abs=1e-3)
        assert abs(res.report.mean_energy_residual) <= 1e-6
        assert res.report.self_intersections == 0
        assert np.max(np.abs(res.lifted.nodes[:, 2])) < 1e-3

    def test_shifted_density_matches_latitude_oracle(self, sys_shifted):
        seed = default_seed_builder(sys_shifted, E, z0=-0.2)(96)
        res = find_waist(sys_shifted, E, seed, FAST)
        z_star, a_star = latitude_oracle_minimum(lambda z: z + 0.2, E)
        assert a_star < 0
        assert res.action == pytest.approx(a_star, abs=2e-3)
        assert np.ptp(res.lifted.nodes[:, 2]) < 1e-3  # latitude-type circle
        assert np.mean(res.lifted.nodes[:, 2]) == pytest.approx(z_star, abs=1e-3)

    def test_valley_seed_rejected(self, sys_shifted):
        tiny = latitude_loop(0.999, 32)
        seed = lift_loop(sys_shifted, tiny.with_period(0.01))
        with pytest.raises(ValleyCollapse):
            find_waist(sys_shifted, E, seed, FAST)

    def test_descent_monotone(self, sys_z):
        seed = default_seed_builder(sys_z, E, amplitude=0.08)(64)
        res = find_waist(sys_z, E, seed, FAST)
        hist = np.array(res.history)
        assert np.all(np.diff(hist) <= 0.0)

    def test_budget_exhaustion(self, sys_z):
        seed = default_seed_builder(sys_z, E, amplitude=0.08)(64)
        with pytest.raises(MaxIterations) as err:
            find_waist(sys_z, E, seed, SolverConfig(max_iter=3, tol=1e-12))
        assert err.value.best is not None

    def test_mesh_robustness(self, sys_z):
        actions = {}
        for n in (64, 128):
            seed = default_seed_builder(sys_z, E)(n)
            actions[n] = find_waist(sys_z, E, seed, FAST).action
        rel = abs(actions[64] - actions[128]) / abs(actions[128])
        assert rel <= 1e-3

    def test_conformal_metric_full_stack(self):
        # a conformal factor breaks the z -> -z symmetry: the minimizing ring
        # drifts off the equator but stays a flat critical circle
        from magflow.sphere_geom import Metric
        from magflow.tonelli import Lagrangian

        metric = Metric.conformal(ScalarField.height(0.15, 0.0))
        sysc = MagneticSystem(Lagrangian.electromagnetic(metric), ScalarField.height(1.0, 0.0))
        seed = default_seed_builder(sysc, E, amplitude=0.02)(48)
        res = find_waist(sysc, E, seed, SolverConfig(tol=2e-5, max_iter=8000))
        assert res.gradient_norm <= 2e-5
        assert res.action < 0
        z = res.lifted.nodes[:, 2]
        assert np.ptp(z) < 1e-3
        assert -0.2 < float(np.mean(z)) < -1e-3
        assert abs(res.report.mean_energy_residual) <= 1e-6


class TestRefineStationary:
    def test_polishes_perturbed_circle(self, sys_z):
        # the small circle at z0 = -sqrt(0.96) is a genuine stationary point
        z0 = -np.sqrt(1.0 - 2.0 * E)
        loop = latitude_loop(z0, 128)
        loop = perturb_normal(loop, 0.004, 2)
        loop = loop.with_period(optimal_period(sys_z, loop, E))
        refined, dual = refine_stationary(sys_z, E, loop, tol=1e-8)
        assert dual <= 1e-8
        assert np.ptp(refined.nodes[:, 2]) < 1e-4
        assert np.mean(refined.nodes[:, 2]) == pytest.approx(z0, abs=1e-4)


class TestTransportFlux:
    def test_resolution_change_keeps_class(self, sys_shifted):
        loop = latitude_loop(-0.3, 128)
        loop = loop.with_period(optimal_period(sys_shifted, loop, E))
        ll = lift_loop(sys_shifted, loop)
        from magflow.loop_space import resample_loop

        moved = transport_flux(sys_shifted, ll, resample_loop(loop, 192))
        fresh = lift_loop(sys_shifted, moved.loop)
        assert moved.flux == pytest.approx(fresh.flux, abs=1e-6)

    def test_deform_far_matches_chained_sweeps(self, sys_shifted):
        from magflow.loop_space import deform
        from magflow.sphere_geom import slerp
        from magflow.variational import deform_far

        a = latitude_loop(-0.5, 64)
        b = latitude_loop(0.5, 64)  # nodewise ~1.05 rad apart: beyond one sweep
        ll = lift_loop(sys_shifted, a)
        far = deform_far(sys_shifted, ll, b)
        cur = ll
        for k in range(1, 9):
            nodes = slerp(a.nodes, b.nodes, np.full(64, k / 8))
            cur = deform(sys_shifted, cur, FreePeriodLoop(nodes, a.p))
        assert far.flux == pytest.approx(cur.flux, abs=1e-6)


class TestConnectingChain:
    def test_iterate_chain_lands_in_class(self, sys_shifted):
        waist = latitude_loop(-0.2521, 96)
        waist = waist.with_period(optimal_period(sys_shifted, waist, E))
        end_a = lift_loop(sys_shifted, waist)
        end_b = iterate(end_a, 2)
        # common node count for the band
        from magflow.loop_space import resample_loop

        end_a_fine = transport_flux(sys_shifted, end_a, resample_loop(end_a.loop, 192))
        chain = build_connecting_chain(sys_shifted, E, end_a_fine, end_b, 1, 2, 0)
        assert chain[0] is not None
        assert chain[-1].flux == end_b.flux
        assert np.array_equal(chain[-1].nodes, end_b.nodes)

    def test_deck_chain_winds_once(self, sys_shifted):
        waist = latitude_loop(-0.2521, 96)
        waist = waist.with_period(optimal_period(sys_shifted, waist, E))
        end_a = lift_loop(sys_shifted, waist)
        end_b = deck_transform(sys_shifted, end_a, 1)
        chain = build_connecting_chain(sys_shifted, E, end_a, end_b, 1, 1, 1)
        assert chain[-1].flux == end_b.flux


class TestMinimax:
    def test_degenerate_pair(self, sys_z):
        loop = latitude_loop(0.0, 64)
        loop = loop.with_period(optimal_period(sys_z, loop, E))
        ll = lift_loop(sys_z, loop)
        res = minimax_path(sys_z, E, ll, ll, M=8)
        assert res.converged
        assert res.value == lifted_action_A(sys_z, E, ll)

    def test_endpoint_must_be_minimal(self, sys_z, rng):
        from tests.conftest import random_lifted

        loop = latitude_loop(0.0, 64)
        loop = loop.with_period(optimal_period(sys_z, loop, E))
        good = lift_loop(sys_z, loop)
        bad = random_lifted(sys_z, rng)
        with pytest.raises(EndpointNotMinimal):
            minimax_path(sys_z, E, good, bad, M=8)

    def test_iterate_pair_converges(self, sys_z):
        cfg = SolverConfig(path_nodes=10, max_sweeps=800)
        seeds = default_seed_builder(sys_z, E)
        waists = prepare_waists(sys_z, E, [(1, 0), (2, 0)], seeds, 512, cfg)
        mm = minimax_between_labels(sys_z, E, waists, (1, 0), (2, 0), cfg)
        ends = [
            lifted_action_A(sys_z, E, waists[1]),
            2.0 * lifted_action_A(sys_z, E, waists[2]),
        ]
        assert mm.value >= max(ends)
        assert mm.converged
        assert mm.saddle_gradient_norm <= cfg.tol
        # the saddle is the doubled small circle: value ~ 4*pi*e
        assert mm.value == pytest.approx(4.0 * np.pi * E, abs=5e-3)
        rep = certify_orbit(sys_z, polish_candidate(sys_z, mm.saddle.loop, E), E)
        assert rep.closure_residual <= 1e-4
        assert abs(rep.mean_energy_residual) <= 1e-5

    def test_deck_equivariance(self, sys_shifted):
        cfg = SolverConfig(path_nodes=9, max_sweeps=500)
        seeds = default_seed_builder(sys_shifted, E, z0=-0.2)
        waists = prepare_waists(sys_shifted, E, [(1, 0)], seeds, 128, cfg)
        base = minimax_between_labels(sys_shifted, E, waists, (1, 0), (1, 1), cfg)
        shifted = minimax_between_labels(sys_shifted, E, waists, (1, 2), (1, 3), cfg)
        total = sys_shifted.total_flux()
        assert shifted.value - base.value == pytest.approx(2.0 * total, abs=1e-6)


class TestDedupe:
    def test_primitive_extraction(self, sys_z):
        loop = latitude_loop(-0.4, 64)
        double = iterate(LiftedLoop(loop, 0.0), 2).loop
        prim = _primitive(double)
        assert prim.n == 64
        assert prim.p == pytest.approx(double.p / 2.0)
        assert hausdorff_distance(prim.nodes, loop.nodes) < 1e-12

    def test_hausdorff_separates_latitudes(self):
        a = latitude_loop(-0.4, 64).nodes
        b = latitude_loop(-0.1, 64).nodes
        assert hausdorff_distance(a, b) > 0.2


class TestScan:
    def test_empty_grid(self, sys_z):
        assert scan_energy(sys_z, []) == []

    def test_grid_must_increase(self, sys_z):
        with pytest.raises(ValueError):
            scan_energy(sys_z, [0.04, 0.02])

    def test_error_rows_marked(self):
        # an energy below the rest level cannot seed: the row carries the error
        sysu = MagneticSystem.electromagnetic(
            ScalarField.height(1.0, 0.0), potential=ScalarField.constant(0.5)
        )
        rows = scan_energy(sysu, [0.01], cfg=SolverConfig(max_sweeps=10), path_n=64)
        assert len(rows) == 1
        assert rows[0]["status"].startswith("error:")


class TestMultiplicity:
    def test_single_label_returns_waist(self, sys_shifted):
        cfg = SolverConfig(path_nodes=8, max_sweeps=50)
        res = multiplicity_search(sys_shifted, E, [(1, 0)], cfg, path_n=96, seed_z0=-0.2)
        assert res.distinct_count == 1
        assert res.orbits[0].source == "waist"
        assert res.orbits[0].report.gradient_norm <= cfg.tol

    def test_duplicate_labels_rejected(self, sys_shifted):
        with pytest.raises(ValueError):
            multiplicity_search(sys_shifted, E, [(1, 0), (1, 0)], SolverConfig())

    def test_waist_and_iterate_dedupe(self, sys_shifted):
        # records whose primitives coincide collapse to one orbit
        cfg = SolverConfig()
        loop = latitude_loop(-0.2521, 96)
        loop = loop.with_period(optimal_period(sys_shifted, loop, E))
        prim_a = _primitive(loop)
        prim_b = _primitive(iterate(LiftedLoop(loop, 0.0), 2).loop)
        assert hausdorff_distance(prim_a.nodes, prim_b.nodes) < cfg.dedupe_hausdorff
        assert abs(prim_a.p / prim_b.p - 1.0) < cfg.dedupe_period
