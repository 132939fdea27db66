"""Checks for tip-field formulas, the contour integral, and the kink angle."""

import math

import numpy as np
import pytest

from xfem2d.assembly import (
    BoundaryCondition,
    MaterialModel,
    apply_constraints,
    assemble,
    elasticity_matrix,
    solve,
)
from xfem2d.cracks import CrackPath
from xfem2d.enrichment import FieldTriplet, classify_enrichment
from xfem2d.fracture import (
    FractureError,
    _aux_displacement,
    auxiliary_fields,
    default_contour_radius,
    direct_j_integral,
    extract_sifs,
    interaction_integral,
    j_from_sifs,
    k_equivalent,
    propagation_angle,
)
from xfem2d.meshgen import uniform_rect

STEEL = MaterialModel(E=200e9, nu=0.3, plane_strain=True)


class TestAuxiliaryFields:
    def test_mode_one_ahead_of_tip(self):
        r = 0.37
        sigma, _ = auxiliary_fields(1, r, 0.0, STEEL)
        amp = 1.0 / math.sqrt(2.0 * math.pi * r)
        np.testing.assert_allclose(sigma, [amp, amp, 0.0], atol=1e-15 * amp)

    def test_mode_two_ahead_of_tip(self):
        r = 0.08
        sigma, _ = auxiliary_fields(2, r, 0.0, STEEL)
        amp = 1.0 / math.sqrt(2.0 * math.pi * r)
        np.testing.assert_allclose(sigma, [0.0, 0.0, amp], atol=1e-15 * amp)

    def test_faces_are_traction_free(self):
        r = 0.2
        amp = 1.0 / math.sqrt(2.0 * math.pi * r)
        for mode in (1, 2):
            for theta in (math.pi, -math.pi):
                sigma, _ = auxiliary_fields(mode, r, theta, STEEL)
                # face normal is +-y: components yy and xy must vanish
                assert abs(sigma[1]) < 1e-12 * amp
                assert abs(sigma[2]) < 1e-12 * amp

    @pytest.mark.parametrize("plane_strain", [True, False])
    @pytest.mark.parametrize("mode", [1, 2])
    def test_gradient_consistent_with_stress(self, mode, plane_strain):
        material = MaterialModel(E=71.7e9, nu=0.33, plane_strain=plane_strain)
        D = elasticity_matrix(material)
        rng = np.random.default_rng(3)
        r = rng.uniform(0.05, 2.0, size=40)
        theta = rng.uniform(-math.pi, math.pi, size=40)
        sigma, grad = auxiliary_fields(mode, r, theta, material)
        eps = np.stack(
            [grad[:, 0, 0], grad[:, 1, 1], grad[:, 0, 1] + grad[:, 1, 0]],
            axis=1,
        )
        np.testing.assert_allclose(eps @ D.T, sigma, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("mode", [1, 2])
    def test_gradient_matches_finite_differences(self, mode):
        h = 1e-7
        for x, y in [(0.3, 0.1), (0.1, -0.25), (-0.2, 0.3), (-0.15, -0.4)]:
            r = math.hypot(x, y)
            theta = math.atan2(y, x)
            _, grad = auxiliary_fields(mode, r, theta, STEEL)
            fd = np.empty((2, 2))
            for b, (dx, dy) in enumerate([(h, 0.0), (0.0, h)]):
                up = _aux_displacement(
                    mode,
                    math.hypot(x + dx, y + dy),
                    math.atan2(y + dy, x + dx),
                    STEEL,
                )
                dn = _aux_displacement(
                    mode,
                    math.hypot(x - dx, y - dy),
                    math.atan2(y - dy, x - dx),
                    STEEL,
                )
                fd[:, b] = (up - dn) / (2.0 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)

    def test_invalid_input(self):
        with pytest.raises(ValueError, match="r > 0"):
            auxiliary_fields(1, 0.0, 0.0, STEEL)
        with pytest.raises(ValueError, match="mode"):
            auxiliary_fields(3, 1.0, 0.0, STEEL)


class TestKinkAngle:
    def test_pure_opening_goes_straight(self):
        assert propagation_angle(2e6, 0.0) == 0.0

    def test_pure_sliding_limit(self):
        limit = math.acos(1.0 / 3.0)
        assert propagation_angle(0.0, 1e6) == pytest.approx(-limit, rel=1e-12)
        assert propagation_angle(0.0, -1e6) == pytest.approx(limit, rel=1e-12)
        assert math.degrees(limit) == pytest.approx(70.53, abs=0.01)

    def test_equal_mix(self):
        theta = propagation_angle(1e6, 1e6)
        assert math.degrees(theta) == pytest.approx(-53.13, abs=0.01)
        assert math.cos(theta) == pytest.approx(0.6, rel=1e-12)

    def test_sign_opposes_sliding(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            K_I = rng.uniform(0.1, 5.0)
            K_II = rng.uniform(-5.0, 5.0)
            if K_II == 0.0:
                continue
            theta = propagation_angle(K_I, K_II)
            assert np.sign(theta) == -np.sign(K_II)
            assert abs(theta) <= math.acos(1.0 / 3.0) + 1e-12

    def test_zero_intensity_rejected(self):
        with pytest.raises(FractureError, match="zero-intensity"):
            propagation_angle(0.0, 0.0)

    def test_equivalent_intensity(self):
        assert k_equivalent(3e6, 0.0, 0.0) == pytest.approx(3e6)
        K_II = 2e6
        theta = propagation_angle(0.0, K_II)
        assert k_equivalent(0.0, K_II, theta) == pytest.approx(
            2.0 / math.sqrt(3.0) * K_II, rel=1e-6
        )


def center_crack_problem(angle_deg=0.0):
    """Tension plate with a center crack of half length 0.2."""
    mesh = uniform_rect(2.0, 2.0, 51, 51)
    a = 0.2
    if angle_deg == 0.0:
        cx, cy = 1.0, 1.0
        dx, dy = a, 0.0
    else:
        cx, cy = 1.0, 1.01  # keep the diagonal off the node lattice
        dx = a * math.cos(math.radians(angle_deg))
        dy = a * math.sin(math.radians(angle_deg))
    crack = CrackPath(
        vertices=np.array([[cx - dx, cy - dy], [cx + dx, cy + dy]]), id=0
    )
    emap = classify_enrichment(mesh, [crack])
    bcs = [
        BoundaryCondition("bottom", "displacement", (None, 0.0)),
        BoundaryCondition("top", "traction", (0.0, 1e6)),
    ]
    system = assemble(mesh, emap, STEEL, bcs=bcs)
    state = solve(apply_constraints(system, {0: 0.0}))
    return mesh, emap, state


@pytest.fixture(scope="module")
def tension_plate():
    return center_crack_problem()


class TestInteractionIntegral:
    def test_path_independence(self, tension_plate):
        mesh, emap, state = tension_plate
        a = 0.2
        values = [
            extract_sifs(state, mesh, emap, STEEL, 0, 1, radius=rho).K_I
            for rho in (0.7 * a, 0.9 * a, a)
        ]
        ref = values[-1]
        for v in values:
            assert abs(v - ref) / ref < 0.02

    def test_contour_resolution(self, tension_plate):
        mesh, emap, state = tension_plate
        coarse = interaction_integral(state, mesh, emap, STEEL, 0, 1, 1,
                                      radius=0.2, n_points=128)
        fine = interaction_integral(state, mesh, emap, STEEL, 0, 1, 1,
                                    radius=0.2, n_points=256)
        assert abs(fine - coarse) / abs(fine) < 0.005

    def test_energy_release_consistency(self, tension_plate):
        mesh, emap, state = tension_plate
        res = extract_sifs(state, mesh, emap, STEEL, 0, 1)
        direct = direct_j_integral(state, mesh, emap, STEEL, 0, 1)
        assert res.J == pytest.approx(direct, rel=0.02)

    def test_mode_one_magnitude_and_purity(self, tension_plate):
        mesh, emap, state = tension_plate
        for tip in (0, 1):
            res = extract_sifs(state, mesh, emap, STEEL, 0, tip)
            exact = 1e6 * math.sqrt(math.pi * 0.2)
            # the finite width adds about +2.5% on top of discretization
            assert res.K_I == pytest.approx(exact, rel=0.05)
            assert abs(res.K_II) < 0.01 * res.K_I
            assert abs(math.degrees(res.theta_c)) < 1.0
            assert res.a_eff == pytest.approx(0.2)
            assert res.load_factor == 1.0

    def test_extraction_is_linear_in_the_solution(self, tension_plate):
        mesh, emap, state = tension_plate
        doubled = type(state)(
            fields=state.layout.scatter(2.0 * state.u),
            load_factor=2.0,
            layout=state.layout,
            u=2.0 * state.u,
            residual=state.residual,
        )
        base = interaction_integral(state, mesh, emap, STEEL, 0, 1, 1,
                                    radius=0.2)
        twice = interaction_integral(doubled, mesh, emap, STEEL, 0, 1, 1,
                                     radius=0.2)
        assert twice == pytest.approx(2.0 * base, rel=1e-12)

    def test_rigid_translation_decouples(self, tension_plate):
        mesh, emap, state = tension_plate
        fields = FieldTriplet.zeros(mesh.n_nodes)
        fields.u_cont[:] = [0.37, -0.81]
        still = type(state)(
            fields=fields,
            load_factor=1.0,
            layout=state.layout,
            u=np.zeros_like(state.u),
            residual=0.0,
        )
        for mode in (1, 2):
            value = interaction_integral(still, mesh, emap, STEEL, 0, 1, mode,
                                         radius=0.2)
            assert abs(value) < 1e-10

    def test_default_radius(self, tension_plate):
        mesh, emap, _ = tension_plate
        assert default_contour_radius(mesh, emap, 0, 1) == pytest.approx(0.2)

    def test_missing_tip(self, tension_plate):
        mesh, emap, state = tension_plate
        with pytest.raises(FractureError, match="no active tip"):
            extract_sifs(state, mesh, emap, STEEL, 0, 5)

    def test_contour_point_count_floor(self, tension_plate):
        mesh, emap, state = tension_plate
        with pytest.raises(ValueError, match="at least 32"):
            interaction_integral(state, mesh, emap, STEEL, 0, 1, 1,
                                 radius=0.2, n_points=16)


class TestInclinedCrack:
    def test_mixed_mode_signs_and_values(self):
        mesh, emap, state = center_crack_problem(angle_deg=45.0)
        res = extract_sifs(state, mesh, emap, STEEL, 0, 1)
        exact = 0.5 * 1e6 * math.sqrt(math.pi * 0.2)  # both modes at 45 deg
        assert res.K_I == pytest.approx(exact, rel=0.08)
        assert res.K_II == pytest.approx(exact, rel=0.05)
        assert res.K_II > 0.0
        assert math.degrees(res.theta_c) == pytest.approx(-53.13, abs=2.0)


class TestContourValidity:
    def setup_method(self):
        self.mesh = uniform_rect(1.0, 1.0, 20, 20)
        cracks = [
            CrackPath(vertices=np.array([[0.275, 0.425], [0.675, 0.425]]), id=0),
            CrackPath(vertices=np.array([[0.275, 0.575], [0.675, 0.575]]), id=1),
        ]
        self.emap = classify_enrichment(self.mesh, cracks)
        fields = FieldTriplet.zeros(self.mesh.n_nodes)
        self.state = type("S", (), {"fields": fields})()

    def test_default_radius_shrinks_near_neighbor(self):
        # tip 1 of crack 0 sits 0.15 below crack 1
        radius = default_contour_radius(self.mesh, self.emap, 0, 1)
        assert radius == pytest.approx(0.9 * 0.15)

    def test_crossing_other_crack_rejected(self):
        with pytest.raises(FractureError, match="intersects crack 1"):
            interaction_integral(self.state, self.mesh, self.emap, STEEL,
                                 0, 1, 1, radius=0.2)

    def test_leaving_domain_rejected(self):
        lone = classify_enrichment(
            self.mesh,
            [CrackPath(vertices=np.array([[0.275, 0.425], [0.675, 0.425]]), id=0)],
        )
        with pytest.raises(FractureError, match="leaves the domain"):
            interaction_integral(self.state, self.mesh, lone, STEEL,
                                 0, 1, 1, radius=0.35)


class TestEnergyReleaseMap:
    def test_j_from_sifs(self):
        J = j_from_sifs(2e6, 1e6, STEEL)
        e_prime = 200e9 / (1.0 - 0.09)
        assert J == pytest.approx((4e12 + 1e12) / e_prime, rel=1e-12)
