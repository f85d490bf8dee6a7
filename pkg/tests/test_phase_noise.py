import numpy as np

from dmimocal.phase_noise import PhaseTrajectory, advance_phase, initial_trajectory


def test_zero_variance_stays_constant():
    rng = np.random.default_rng(0)
    traj = initial_trajectory(3, 0.0, rng)
    traj = advance_phase(traj, 500, rng)
    assert np.all(traj.nu == traj.nu[:, :1])


def test_zero_steps_is_identity():
    rng = np.random.default_rng(0)
    traj = initial_trajectory(2, 0.1, rng)
    out = advance_phase(traj, 0, rng)
    assert out is traj


def test_increment_variance_law_of_large_numbers():
    rng = np.random.default_rng(7)
    traj = advance_phase(initial_trajectory(1, 1.0, rng), 10 ** 6, rng)
    incr = np.diff(traj.nu[0])
    assert abs(incr.var() - 1.0) < 0.01


def test_increment_variance_chi_square_band():
    # Over 1e5 draws the variance estimate has std ~ sigma^2 sqrt(2/n).
    n = 10 ** 5
    sigma_sq = 0.37
    rng = np.random.default_rng(11)
    traj = advance_phase(initial_trajectory(1, sigma_sq, rng), n, rng)
    incr = np.diff(traj.nu[0])
    band = 3.0 * sigma_sq * np.sqrt(2.0 / n)
    assert abs(incr.var() - sigma_sq) < band


def test_increments_independent_across_aps():
    rng = np.random.default_rng(3)
    traj = advance_phase(initial_trajectory(2, 1.0, rng), 10 ** 5, rng)
    a, b = np.diff(traj.nu[0]), np.diff(traj.nu[1])
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 0.02


def test_deterministic_given_rng_state():
    t1 = advance_phase(initial_trajectory(2, 0.5, np.random.default_rng(5)), 100,
                       np.random.default_rng(6))
    t2 = advance_phase(initial_trajectory(2, 0.5, np.random.default_rng(5)), 100,
                       np.random.default_rng(6))
    assert np.array_equal(t1.nu, t2.nu)


def test_initial_phases_uniform_range():
    traj = initial_trajectory(1000, 0.0, np.random.default_rng(9))
    assert np.all(traj.nu >= -np.pi) and np.all(traj.nu < np.pi)
    assert abs(traj.nu.mean()) < 0.2


def test_value_at_and_tail_indexing():
    rng = np.random.default_rng(1)
    traj = advance_phase(initial_trajectory(2, 0.2, rng), 49, rng)
    assert traj.last_sample == 50
    v10 = traj.value_at(10)
    tail = traj.tail(5)
    assert tail.start == 46
    assert np.array_equal(tail.value_at(50), traj.value_at(50))
    assert np.array_equal(v10, traj.nu[:, 9])


def test_coupled_scaling_same_normals():
    # Same rng stream, different variances: increments are scaled copies.
    a = advance_phase(PhaseTrajectory(np.zeros((1, 1)), 1.0),
                      1000, np.random.default_rng(2))
    b = advance_phase(PhaseTrajectory(np.zeros((1, 1)), 4.0),
                      1000, np.random.default_rng(2))
    assert np.allclose(2.0 * a.nu, b.nu, atol=1e-12)
