import numpy as np
import pytest

from magflow import Metric, ScalarField, SphericalTriangle, TwoForm, project_to_sphere, total_flux
from magflow.errors import DegenerateTriangle, NearZeroVector
from magflow.sphere_geom import (
    _subdivide,
    icosahedron_faces,
    integrate_two_form_triangle,
    signed_spherical_area,
    solid_angle,
    tangent_project,
)

OCTANT = SphericalTriangle(
    np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])
)


class TestProjection:
    def test_scaling(self):
        assert np.allclose(project_to_sphere(np.array([2.0, 0.0, 0.0])), [1.0, 0.0, 0.0])
        assert np.allclose(project_to_sphere(np.array([0.0, 0.0, -5.0])), [0.0, 0.0, -1.0])

    def test_diagonal(self):
        q = project_to_sphere(np.array([1.0, 1.0, 1.0]))
        assert np.allclose(q, np.full(3, 1.0 / np.sqrt(3.0)), atol=1e-12)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12

    def test_near_zero_rejected(self):
        with pytest.raises(NearZeroVector):
            project_to_sphere(np.array([1e-10, 0.0, 0.0]))

    def test_batch_unit_norm(self, rng):
        q = project_to_sphere(rng.normal(size=(100, 3)))
        assert np.max(np.abs(np.linalg.norm(q, axis=1) - 1.0)) < 1e-12


class TestTwoFormEval:
    def test_unit_area_form(self):
        form = TwoForm(ScalarField.constant(1.0))
        q = np.array([0.0, 0.0, 1.0])
        v = np.array([1.0, 0.0, 0.0])
        w = np.array([0.0, 1.0, 0.0])
        assert form(q, v, w) == pytest.approx(1.0)
        assert form(q, w, v) == pytest.approx(-1.0)

    def test_density_at_pole(self):
        form = TwoForm(ScalarField.height(1.0, 0.2))
        q = np.array([0.0, 0.0, 1.0])
        v = np.array([1.0, 0.0, 0.0])
        w = np.array([0.0, 1.0, 0.0])
        assert form(q, v, w) == pytest.approx(1.2)

    def test_antisymmetry_random(self, rng):
        form = TwoForm(ScalarField.zonal_poly(0.3, -1.0, 0.5))
        q = project_to_sphere(rng.normal(size=(1000, 3)))
        v = tangent_project(q, rng.normal(size=(1000, 3)))
        w = tangent_project(q, rng.normal(size=(1000, 3)))
        assert np.array_equal(form(q, v, w), -form(q, w, v))

    def test_conformal_factor(self):
        metric = Metric.conformal(ScalarField.constant(0.5))
        form = TwoForm(ScalarField.constant(1.0), metric)
        q = np.array([0.0, 0.0, 1.0])
        v = np.array([1.0, 0.0, 0.0])
        w = np.array([0.0, 1.0, 0.0])
        assert form(q, v, w) == pytest.approx(np.exp(1.0))


class TestTriangleFlux:
    def test_octant(self):
        form = TwoForm(ScalarField.constant(1.0))
        assert integrate_two_form_triangle(form, OCTANT, 6) == pytest.approx(np.pi / 2, abs=1e-6)

    def test_octant_reversed(self):
        form = TwoForm(ScalarField.constant(1.0))
        rev = SphericalTriangle(OCTANT.a, OCTANT.c, OCTANT.b)
        assert integrate_two_form_triangle(form, rev, 6) == pytest.approx(-np.pi / 2, abs=1e-6)

    def test_zero_density(self):
        form = TwoForm(ScalarField.constant(0.0))
        assert integrate_two_form_triangle(form, OCTANT, 4) == 0.0

    def test_degenerate_rejected(self):
        tri = SphericalTriangle(
            np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])
        )
        form = TwoForm(ScalarField.constant(1.0))
        with pytest.raises(DegenerateTriangle):
            integrate_two_form_triangle(form, tri, 2)

    def test_child_additivity(self):
        # the parent at depth d+1 sums exactly the four children at depth d
        form = TwoForm(ScalarField.height(1.0, 0.2))
        parent = integrate_two_form_triangle(form, OCTANT, 3)
        children = _subdivide(OCTANT.vertices()[None], 1)
        total = sum(
            integrate_two_form_triangle(form, SphericalTriangle(*child), 2)
            for child in children
        )
        assert total == pytest.approx(parent, abs=1e-12)

    def test_subdivision_consistency(self):
        form = TwoForm(ScalarField.zonal_poly(0.2, -0.4, 0.0, 1.1))
        tri = SphericalTriangle(
            project_to_sphere(np.array([0.9, 0.1, 0.3])),
            project_to_sphere(np.array([-0.2, 0.8, 0.4])),
            project_to_sphere(np.array([0.1, 0.2, 0.95])),
        )
        vals = [integrate_two_form_triangle(form, tri, d) for d in range(0, 5)]
        diffs = np.abs(np.diff(vals))
        assert np.all(diffs[1:] < diffs[:-1])
        # roughly one order of accuracy gained per subdivision: factor ~4
        assert diffs[-1] < diffs[0] / 4.0 ** (len(diffs) - 2)


class TestTotalFlux:
    def test_constant(self):
        assert total_flux(TwoForm(ScalarField.constant(1.0)), 6) == pytest.approx(
            4.0 * np.pi, abs=1e-6
        )

    def test_odd_density(self):
        assert total_flux(TwoForm(ScalarField.height(1.0, 0.0)), 6) == pytest.approx(
            0.0, abs=1e-6
        )

    def test_shifted(self):
        assert total_flux(TwoForm(ScalarField.height(1.0, 0.2)), 6) == pytest.approx(
            0.8 * np.pi, abs=1e-6
        )

    def test_depth_guard(self):
        with pytest.raises(ValueError):
            total_flux(TwoForm(ScalarField.constant(1.0)), 1)


class TestAreaRoutines:
    def test_icosahedron_orientation(self):
        faces = icosahedron_faces()
        dets = np.einsum("tj,tj->t", faces[:, 0], np.cross(faces[:, 1], faces[:, 2]))
        assert np.all(dets > 0)
        total = float(np.sum(signed_spherical_area(faces[:, 0], faces[:, 1], faces[:, 2])))
        assert total == pytest.approx(4.0 * np.pi, abs=1e-9)

    def test_lhuilier_matches_solid_angle(self, rng):
        a = project_to_sphere(rng.normal(size=(200, 3)))
        b = project_to_sphere(a + 0.3 * rng.normal(size=(200, 3)))
        c = project_to_sphere(a + 0.3 * rng.normal(size=(200, 3)))
        assert np.allclose(signed_spherical_area(a, b, c), solid_angle(a, b, c), atol=1e-10)
