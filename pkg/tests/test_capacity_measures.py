import numpy as np
import pytest

from src.capacity.capacity_measures import (
    NodalMeasure,
    block_measure,
    capacity,
    capacity_property_checks,
    capacity_refinement_table,
    check_K_membership,
    comparison_principle_check,
    gamma_sequence_test,
    measure_from_z,
    nodes_in_interval,
    nodes_in_intervals,
    relaxed_dirichlet_solve,
    torsion_z,
)
from src.errors import ConfigError, MeshMismatchError, NumericalError
from src.fem.core_fe import FeFunction, Mesh1D, interpolate, lumped_masses, mass_matrix, ones
from src.fem.frac_gram import assemble, assemble_integral_tilde, assemble_spectral, offered_kinds


def _setup(n: int = 64, s: float = 0.45):
    mesh = Mesh1D(0.0, 1.0, n)
    return mesh, assemble_integral_tilde(mesh, s), mass_matrix(mesh)


def _gram_value(G, v) -> float:
    return float(v @ G.matrix @ v)


def test_nodal_measure_validation():
    mesh = Mesh1D(0.0, 1.0, 4)
    with pytest.raises(ConfigError):
        NodalMeasure(mesh, [1.0, -1.0, 0.0])
    with pytest.raises(ConfigError):
        NodalMeasure(mesh, [1.0, 0.0])
    with pytest.raises(ConfigError):
        NodalMeasure(mesh, [np.inf, 0.0, 0.0])
    mu = NodalMeasure(mesh, [np.inf, 2.0, 0.0], [True, False, False])
    assert mu.infinite_set.tolist() == [True, False, False]
    assert mu.finite_weights().tolist() == [0.0, 2.0, 0.0]
    assert mu.scaled(3.0).finite_weights().tolist() == [0.0, 6.0, 0.0]


def test_zero_measure_reduces_to_the_gram_system():
    mesh, G, M = _setup(32, 0.3)
    f = interpolate(mesh, lambda x: np.sin(np.pi * x))
    sol = relaxed_dirichlet_solve(G, M, NodalMeasure.zero(mesh), f)
    assert np.allclose(G.matrix @ sol.w.values, M @ f.values, rtol=1e-10, atol=1e-12)
    assert sol.residual_norm <= 1e-10
    assert sol.rhs_description == "function"


def test_infinite_measure_everywhere_forces_zero():
    mesh, G, M = _setup(16, 0.3)
    n = mesh.interior_dof_count
    mu = NodalMeasure(mesh, np.zeros(n), np.ones(n, dtype=bool))
    sol = relaxed_dirichlet_solve(G, M, mu, ones(mesh))
    assert np.array_equal(sol.w.values, np.zeros(n))


def test_infinite_nodes_are_exactly_zero():
    mesh, G, M = _setup(32)
    mu = block_measure(mesh, 0.4, 0.6, np.inf)
    sol = torsion_z(G, M, mu)
    assert np.all(sol.w.values[mu.infinite_set] == 0.0)
    assert np.all(sol.w.values[~mu.infinite_set] > 0.0)


def test_dual_rhs_of_wrong_length_is_a_mesh_mismatch():
    mesh, G, M = _setup(16, 0.3)
    with pytest.raises(MeshMismatchError):
        relaxed_dirichlet_solve(G, M, NodalMeasure.zero(mesh), np.ones(4))


def test_spectral_s1_torsion_is_the_poisson_parabola():
    mesh = Mesh1D(0.0, 1.0, 64)
    G = assemble_spectral(mesh, 1.0)
    z = torsion_z(G, mass_matrix(mesh), NodalMeasure.zero(mesh)).w
    x = mesh.interior_nodes
    assert np.max(np.abs(z.values - 0.5 * x * (1 - x))) <= 1e-3


def test_torsion_is_monotone_in_the_measure():
    mesh, G, M = _setup()
    rng = np.random.default_rng(8)
    mu2 = rng.uniform(0.0, 10.0, mesh.interior_dof_count)
    mu1 = mu2 + rng.uniform(0.0, 10.0, mesh.interior_dof_count)
    z1 = torsion_z(G, M, NodalMeasure(mesh, mu1)).w.values
    z2 = torsion_z(G, M, NodalMeasure(mesh, mu2)).w.values
    assert np.all(z1 <= z2 + 1e-10)
    assert np.all(z2 >= -1e-10)


def test_torsion_scales_linearly():
    mesh, G, M = _setup(32, 0.3)
    mu = block_measure(mesh, 0.2, 0.5, 4.0)
    z = torsion_z(G, M, mu).w.values
    z3 = torsion_z(G, M, mu, scale=3.0).w.values
    assert np.allclose(z3, 3.0 * z, rtol=1e-12, atol=0)


@pytest.mark.parametrize("kind", offered_kinds(0.1))
def test_energy_identity_and_apriori_bound_on_random_instances(kind):
    mesh = Mesh1D(0.0, 1.0, 48)
    G, M = assemble(kind, mesh, 0.1), mass_matrix(mesh)
    n = mesh.interior_dof_count
    rng = np.random.default_rng(12)
    for _ in range(100):
        infinite = rng.random(n) < 0.1
        mu = NodalMeasure(mesh, np.where(infinite, 0.0, rng.uniform(0.0, 100.0, n)), infinite)
        sol = relaxed_dirichlet_solve(G, M, mu, rng.standard_normal(n))
        assert sol.rhs_description == "dual"
        assert sol.energy_identity_error <= 1e-10
        assert sol.apriori_bound_holds
        assert np.sqrt(sol.energy) <= sol.rhs_dual_norm + 1e-10
        assert np.all(sol.w.values[infinite] == 0.0)


def test_capacity_of_empty_set_is_zero():
    _, G, _ = _setup(16)
    result = capacity(G, [])
    assert result.value == 0.0
    assert not np.any(result.minimizer.values)


def test_capacity_pins_the_set_to_one():
    mesh, G, _ = _setup()
    nodes = nodes_in_interval(mesh, 0.4, 0.6)
    result = capacity(G, nodes)
    assert np.all(result.minimizer.values[nodes] == 1.0)
    assert result.value > 0
    assert result.value == pytest.approx(_gram_value(G, result.minimizer.values), rel=1e-12)


def test_capacity_is_monotone_on_nested_random_blocks():
    _, G, _ = _setup(64, 0.1)
    checks = capacity_property_checks(G, 50, np.random.default_rng(0))
    assert checks.pairs == 50
    assert checks.monotone_violations == 0
    assert checks.max_monotone_excess <= 1e-10


@pytest.mark.parametrize("s", [0.1, 0.45])
def test_capacity_is_subadditive_on_random_block_pairs(s):
    _, G, _ = _setup(64, s)
    checks = capacity_property_checks(G, 50, np.random.default_rng(1))
    assert checks.subadditive_violations == 0
    assert checks.max_subadditive_excess <= 1e-10


def test_capacity_is_invariant_under_reflection():
    mesh, G, _ = _setup(64, 0.1)
    nodes = nodes_in_interval(mesh, 0.1, 0.3)
    mirrored = mesh.interior_dof_count - 1 - nodes
    assert capacity(G, nodes).value == pytest.approx(capacity(G, mirrored).value, rel=1e-9)


def test_capacity_accepts_a_boolean_mask_and_rejects_bad_indices():
    mesh, G, _ = _setup(16)
    mask = np.zeros(mesh.interior_dof_count, dtype=bool)
    mask[5:8] = True
    assert capacity(G, mask).value == pytest.approx(capacity(G, [5, 6, 7]).value)
    with pytest.raises(ConfigError):
        capacity(G, [mesh.interior_dof_count])


def test_nodes_in_interval_is_half_open():
    mesh = Mesh1D(0.0, 1.0, 10)
    assert nodes_in_interval(mesh, 0.2, 0.4).tolist() == [1, 2]
    assert nodes_in_intervals(mesh, [(0.1, 0.3), (0.2, 0.5)]).tolist() == [0, 1, 2, 3]
    assert nodes_in_intervals(mesh, []).size == 0


def test_capacity_refinement_table_rows():
    rows = capacity_refinement_table(
        lambda m: assemble_integral_tilde(m, 0.3), 0.0, 1.0, [16, 32], [(0.4, 0.6)]
    )
    assert [n for n, _, _ in rows] == [16, 32]
    assert all(k > 0 and v > 0 for _, k, v in rows)


def test_membership_of_zero_function():
    mesh, G, M = _setup(16)
    report = check_K_membership(G, M, FeFunction(mesh, np.zeros(mesh.interior_dof_count)))
    assert report.member
    assert np.allclose(report.slack, lumped_masses(M))
    assert report.min_slack > 0


def test_torsion_function_saturates_the_membership_inequality():
    mesh, G, M = _setup()
    z = torsion_z(G, M, NodalMeasure.zero(mesh)).w
    report = check_K_membership(G, M, z)
    assert report.member
    assert np.max(np.abs(report.slack)) <= 1e-10

    doubled = check_K_membership(G, M, FeFunction(mesh, 2.0 * z.values))
    assert not doubled.member
    assert doubled.min_slack < 0


def test_measure_from_unconstrained_torsion_is_zero():
    mesh, G, M = _setup()
    z = torsion_z(G, M, NodalMeasure.zero(mesh)).w
    mu = measure_from_z(G, M, z)
    assert not np.any(mu.infinite_set)
    assert np.max(mu.weights) <= 1e-6


def test_measure_round_trip_through_torsion():
    mesh, G, M = _setup()
    mu = block_measure(mesh, 0.3, 0.7, 5.0)
    z = torsion_z(G, M, mu).w
    rebuilt = measure_from_z(G, M, z)
    ok = ~rebuilt.infinite_set
    assert np.allclose(rebuilt.weights[ok], mu.weights[ok], rtol=1e-6, atol=1e-6)


def test_measure_round_trip_recovers_an_infinite_block():
    mesh, G, M = _setup()
    mu = block_measure(mesh, 0.4, 0.6, np.inf)
    z = torsion_z(G, M, mu).w
    rebuilt = measure_from_z(G, M, z)
    assert np.array_equal(rebuilt.infinite_set, mu.infinite_set)
    assert np.max(rebuilt.finite_weights()) <= 1e-6


@pytest.mark.parametrize("kind", offered_kinds(0.1))
def test_measure_round_trip_on_random_blocks(kind):
    mesh = Mesh1D(0.0, 1.0, 64)
    G, M = assemble(kind, mesh, 0.1), mass_matrix(mesh)
    rng = np.random.default_rng(21)
    for i in range(20):
        left = rng.uniform(0.0, 0.75)
        right = left + rng.uniform(0.05, 0.2)
        weight = np.inf if i % 3 == 0 else rng.uniform(0.1, 50.0)
        mu = block_measure(mesh, left, right, weight)
        z = torsion_z(G, M, mu).w
        rebuilt = measure_from_z(G, M, z)
        assert np.array_equal(rebuilt.infinite_set, mu.infinite_set)
        ok = ~mu.infinite_set
        assert np.allclose(rebuilt.weights[ok], mu.weights[ok], rtol=1e-6, atol=1e-6)


def test_measure_from_z_rejects_functions_outside_the_cone():
    mesh, G, M = _setup(32)
    z = torsion_z(G, M, NodalMeasure.zero(mesh)).w
    with pytest.raises(NumericalError):
        measure_from_z(G, M, FeFunction(mesh, 2.0 * z.values))


def test_comparison_principle_holds_exactly_for_the_laplacian():
    mesh = Mesh1D(0.0, 1.0, 32)
    G = assemble_spectral(mesh, 1.0)
    violations = comparison_principle_check(G, mass_matrix(mesh), 100, np.random.default_rng(3))
    assert violations == []


def test_comparison_principle_is_reported_for_fractional_kinds():
    mesh, G, M = _setup(32, 0.1)
    violations = comparison_principle_check(G, M, 10, np.random.default_rng(3))
    assert all(0 <= i < mesh.interior_dof_count for i in violations)
    assert violations == sorted(violations)


def test_gamma_harness_on_a_constant_sequence():
    mesh, G, M = _setup(32, 0.3)
    zero = NodalMeasure.zero(mesh)
    report = gamma_sequence_test(G, M, [zero, zero], [ones(mesh)])
    assert all(row.z_diff_l2 == 0.0 for row in report.rows)
    assert all(d == 0.0 for row in report.rows for d in row.w_diff_l2)
    assert report.z_cauchy and report.all_f_cauchy and report.verdict
    assert report.rhs_labels == ["f0"]


def test_gamma_harness_on_a_blowing_up_block():
    mesh, G, M = _setup(64, 0.45)
    block = (0.4, 0.6)
    measures = [block_measure(mesh, *block, 10.0**k) for k in range(5)]
    limit = block_measure(mesh, *block, np.inf)
    rhs = [ones(mesh), interpolate(mesh, lambda x: np.sin(np.pi * x))]
    report = gamma_sequence_test(G, M, measures, rhs, labels=["1", "sin(pi*x)"], reference=limit)

    diffs = [row.z_diff_l2 for row in report.rows]
    assert all(b < a for a, b in zip(diffs, diffs[1:]))
    assert report.z_cauchy
    assert report.all_f_cauchy
    assert report.verdict
    assert all(row.apriori_ok for row in report.rows)
    assert report.empirical_constant > 0
    assert report.rows[-1].z_diff_l2 <= 1e-3 * report.rows[0].z_l2

    on_block = nodes_in_interval(mesh, *block)
    z = [torsion_z(G, M, mu).w.values[on_block] for mu in measures]
    assert all(np.all(b <= a + 1e-12) for a, b in zip(z, z[1:]))


def test_gamma_harness_differences_shrink_for_every_rhs():
    mesh, G, M = _setup(64, 0.45)
    block = (0.4, 0.6)
    measures = [block_measure(mesh, *block, 10.0**k) for k in range(5)]
    rhs = [
        ones(mesh),
        interpolate(mesh, lambda x: np.sin(np.pi * x)),
        interpolate(mesh, lambda x: x),
        interpolate(mesh, lambda x: x * x),
        interpolate(mesh, lambda x: np.cos(2 * np.pi * x)),
    ]
    report = gamma_sequence_test(G, M, measures, rhs, reference=block_measure(mesh, *block, np.inf))
    assert report.all_f_cauchy and report.verdict
    for j in range(len(rhs)):
        diffs = [row.w_diff_l2[j] for row in report.rows]
        assert all(b < a for a, b in zip(diffs, diffs[1:]))


def test_gamma_harness_needs_two_measures_and_one_rhs():
    mesh, G, M = _setup(16)
    zero = NodalMeasure.zero(mesh)
    with pytest.raises(ConfigError):
        gamma_sequence_test(G, M, [zero], [ones(mesh)])
    with pytest.raises(ConfigError):
        gamma_sequence_test(G, M, [zero, zero], [])


def test_gamma_harness_rejects_measures_on_another_mesh():
    mesh, G, M = _setup(16)
    foreign = NodalMeasure.zero(Mesh1D(0.0, 2.0, 16))
    with pytest.raises(MeshMismatchError):
        gamma_sequence_test(G, M, [NodalMeasure.zero(mesh), foreign], [ones(mesh)])
