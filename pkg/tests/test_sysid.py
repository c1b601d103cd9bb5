import numpy as np
import pytest

from quadrace.errors import InsufficientExcitation, RankDeficient
from quadrace.params import (
    builtin_params_path,
    denormalize_params,
    load_params,
)
from quadrace.sysid import (
    FlightLog,
    fit_force_params,
    fit_moment_params,
    fit_motor_params,
    identify,
    read_flight_log,
    simulate_chirp_log,
    simulate_motor_step_log,
    write_flight_log,
)

P3 = load_params(builtin_params_path("3inch"))
P5 = load_params(builtin_params_path("5inch"))


@pytest.fixture(scope="module")
def chirp5():
    return simulate_chirp_log(P5, duration=6.0)


@pytest.fixture(scope="module")
def step5():
    return simulate_motor_step_log(P5)


def rel_err(a, b):
    return abs(a - b) / abs(b)


class TestForceFit:
    def test_recovers_exact_log(self, chirp5):
        phys = denormalize_params(P5)
        fit = fit_force_params(chirp5)
        assert rel_err(fit.k_omega, phys.k_omega) < 1e-9
        assert rel_err(fit.k_x, phys.k_x) < 1e-9
        assert rel_err(fit.k_y, phys.k_y) < 1e-9
        assert max(fit.rms) < 1e-9

    def test_noise_robustness(self, chirp5):
        rng = np.random.default_rng(0)
        phys = denormalize_params(P5)
        noisy = FlightLog(
            t=chirp5.t,
            v_body=chirp5.v_body,
            Omega=chirp5.Omega,
            force=chirp5.force * (1.0 + 0.01 * rng.standard_normal(chirp5.force.shape)),
            omega=chirp5.omega,
            Omega_dot=chirp5.Omega_dot,
            omega_dot=chirp5.omega_dot,
            u=chirp5.u,
        )
        fit = fit_force_params(noisy)
        assert rel_err(fit.k_omega, phys.k_omega) < 0.05
        assert rel_err(fit.k_x, phys.k_x) < 0.05
        assert rel_err(fit.k_y, phys.k_y) < 0.05

    def test_hover_only_is_rank_deficient(self):
        # constant state: the lateral-drag regressors are identically zero
        n = 200
        log = FlightLog(
            t=np.arange(n) * 0.01,
            v_body=np.zeros((n, 3)),
            Omega=np.zeros((n, 3)),
            force=np.tile([0.0, 0.0, -9.81], (n, 1)),
            omega=np.full((n, 4), 1000.0),
        )
        with pytest.raises(RankDeficient):
            fit_force_params(log)


class TestMomentFit:
    def test_recovers_exact_log(self, chirp5):
        phys = denormalize_params(P5)
        fit = fit_moment_params(chirp5)
        assert np.abs(np.array(fit.k_p) / np.array(phys.k_p) - 1.0).max() < 1e-9
        assert np.abs(np.array(fit.k_q) / np.array(phys.k_q) - 1.0).max() < 1e-9
        assert np.abs(np.array(fit.k_r) / np.array(phys.k_r) - 1.0).max() < 1e-6
        assert np.abs(np.array(fit.k_rd) / np.array(phys.k_rd) - 1.0).max() < 1e-6

    def test_sign_patterns_respected(self, chirp5):
        # refitting with permuted sign conventions must change the answer:
        # the regressors encode rotor 1,2 negative / 3,4 positive in roll
        fit = fit_moment_params(chirp5)
        flipped = FlightLog(
            t=chirp5.t,
            v_body=chirp5.v_body,
            Omega=chirp5.Omega * np.array([-1.0, 1.0, 1.0]),
            force=chirp5.force,
            omega=chirp5.omega,
            Omega_dot=chirp5.Omega_dot * np.array([-1.0, 1.0, 1.0]),
            omega_dot=chirp5.omega_dot,
            u=chirp5.u,
        )
        fit2 = fit_moment_params(flipped)
        assert np.allclose(fit2.k_p, -np.array(fit.k_p))

    def test_constant_rotor_speed_rank_deficient(self):
        n = 400
        rng = np.random.default_rng(1)
        log = FlightLog(
            t=np.arange(n) * 0.01,
            v_body=rng.standard_normal((n, 3)),
            Omega=rng.standard_normal((n, 3)),
            force=rng.standard_normal((n, 3)),
            omega=np.full((n, 4), 1500.0),  # all rotors identical & constant
            omega_dot=np.zeros((n, 4)),
        )
        with pytest.raises(RankDeficient):
            fit_moment_params(log)

    def test_finite_difference_fallback(self, chirp5):
        # dropping the logged derivatives still gives a decent fit
        log = FlightLog(
            t=chirp5.t,
            v_body=chirp5.v_body,
            Omega=chirp5.Omega,
            force=chirp5.force,
            omega=chirp5.omega,
            u=chirp5.u,
        )
        phys = denormalize_params(P5)
        fit = fit_moment_params(log)
        assert np.abs(np.array(fit.k_p) / np.array(phys.k_p) - 1.0).max() < 0.05


class TestMotorFit:
    def test_recovers_exact_log(self, step5):
        # segments settle for 0.8 s = 20 tau, leaving an e^-20 transient
        fit = fit_motor_params(step5)
        assert rel_err(fit.omega_min, P5.omega_min) < 1e-7
        assert rel_err(fit.omega_max, P5.omega_max) < 1e-7
        assert abs(fit.k_l - P5.k_l) < 1e-6
        assert rel_err(fit.tau, P5.tau) < 1e-6

    def test_three_inch_motor(self):
        log = simulate_motor_step_log(P3)
        fit = fit_motor_params(log)
        assert rel_err(fit.omega_min, P3.omega_min) < 1e-7
        assert rel_err(fit.omega_max, P3.omega_max) < 1e-7
        assert abs(fit.k_l - P3.k_l) < 1e-6
        assert rel_err(fit.tau, P3.tau) < 1e-6

    def test_requires_commands(self, chirp5):
        log = FlightLog(t=chirp5.t, v_body=chirp5.v_body, Omega=chirp5.Omega,
                        force=chirp5.force, omega=chirp5.omega)
        with pytest.raises(InsufficientExcitation):
            fit_motor_params(log)

    def test_narrow_command_range_rejected(self):
        n = 1000
        log = FlightLog(
            t=np.arange(n) * 0.002,
            v_body=np.zeros((n, 3)),
            Omega=np.zeros((n, 3)),
            force=np.zeros((n, 3)),
            omega=np.full((n, 4), 1000.0),
            u=np.full((n, 4), 0.5) + 0.1 * np.sin(np.arange(n))[:, None] * 0,
        )
        with pytest.raises(InsufficientExcitation):
            fit_motor_params(log)

    def test_unsettled_steps_rejected(self):
        # commands toggle every 0.05 s: no segment reaches steady state
        dt = 0.002
        n = 2000
        u = np.where((np.arange(n) // 25) % 2 == 0, 0.0, 1.0)
        log = FlightLog(
            t=np.arange(n) * dt,
            v_body=np.zeros((n, 3)),
            Omega=np.zeros((n, 3)),
            force=np.zeros((n, 3)),
            omega=np.full((n, 4), 1000.0),
            u=np.tile(u[:, None], (1, 4)),
        )
        with pytest.raises(InsufficientExcitation):
            fit_motor_params(log)


class TestIdentify:
    def test_full_roundtrip_half_percent(self, chirp5, step5):
        est = identify(chirp5, step5)
        for name in ("k_omega_hat", "k_x_hat", "k_y_hat", "omega_min", "omega_max"):
            assert rel_err(getattr(est, name), getattr(P5, name)) < 0.005, name
        for name in ("k_p_hat", "k_q_hat", "k_r_hat", "k_rd_hat"):
            a, b = np.array(getattr(est, name)), np.array(getattr(P5, name))
            assert np.abs(a / b - 1.0).max() < 0.005, name
        assert abs(est.k_l - P5.k_l) < 0.005
        assert rel_err(est.tau, P5.tau) < 0.01

    def test_three_inch_roundtrip(self):
        chirp = simulate_chirp_log(P3, duration=6.0)
        step = simulate_motor_step_log(P3)
        est = identify(chirp, step)
        assert rel_err(est.k_omega_hat, P3.k_omega_hat) < 0.005
        assert np.abs(np.array(est.k_p_hat) / np.array(P3.k_p_hat) - 1.0).max() < 0.005
        assert rel_err(est.tau, P3.tau) < 0.01

    def test_identified_params_validate(self, chirp5, step5):
        identify(chirp5, step5).validate()


class TestLogSerialization:
    def test_roundtrip(self, tmp_path, chirp5):
        path = tmp_path / "log.csv"
        write_flight_log(chirp5, path)
        log = read_flight_log(path)
        assert np.allclose(log.t, chirp5.t)
        assert np.allclose(log.v_body, chirp5.v_body, atol=1e-9)
        assert np.allclose(log.omega, chirp5.omega, rtol=1e-10)
        assert np.allclose(log.u, chirp5.u, atol=1e-12)

    def test_fit_from_csv_still_accurate(self, tmp_path, chirp5):
        # CSV quantization (12 significant digits) must not hurt the fits
        path = tmp_path / "log.csv"
        write_flight_log(chirp5, path)
        log = read_flight_log(path)
        phys = denormalize_params(P5)
        fit = fit_force_params(log)
        assert rel_err(fit.k_omega, phys.k_omega) < 1e-6

    def test_increasing_time_required(self):
        with pytest.raises(ValueError):
            FlightLog(
                t=np.array([0.0, 0.0, 0.1]),
                v_body=np.zeros((3, 3)),
                Omega=np.zeros((3, 3)),
                force=np.zeros((3, 3)),
                omega=np.zeros((3, 4)),
            )
