import numpy as np
import pytest

from quadrace.errors import InvalidScheme
from quadrace.params import builtin_params_path, load_params
from quadrace.randomize import (
    GENERAL_BOUNDS,
    FixedScheme,
    GeneralScheme,
    PercentageScheme,
    parse_scheme,
    sample_general,
    sample_percentage,
)

P3 = load_params(builtin_params_path("3inch"))
P5 = load_params(builtin_params_path("5inch"))


@pytest.fixture(scope="module")
def samples():
    rng = np.random.default_rng(123)
    return [sample_general(rng) for _ in range(2000)]


class TestGeneralScheme:

    def test_all_fields_within_bounds(self, samples):
        for s in samples:
            assert GENERAL_BOUNDS["omega_min"][0] <= s.omega_min <= GENERAL_BOUNDS["omega_min"][1]
            assert GENERAL_BOUNDS["omega_max"][0] <= s.omega_max <= GENERAL_BOUNDS["omega_max"][1]
            assert 0.0 <= s.k_l < 1.0
            assert GENERAL_BOUNDS["tau"][0] <= s.tau <= GENERAL_BOUNDS["tau"][1]
            assert GENERAL_BOUNDS["k_omega_hat"][0] <= s.k_omega_hat <= GENERAL_BOUNDS["k_omega_hat"][1]
            for v in s.k_p_hat + s.k_q_hat:
                assert 150.0 <= v <= 850.0  # group bounds widened by the per-rotor jitter
            assert GENERAL_BOUNDS["k_r_hat"][0] <= s.k_r_hat[0] <= GENERAL_BOUNDS["k_r_hat"][1]
            assert GENERAL_BOUNDS["k_rd_hat"][0] <= s.k_rd_hat[0] <= GENERAL_BOUNDS["k_rd_hat"][1]

    def test_yaw_coefficients_shared(self, samples):
        for s in samples:
            assert len(set(s.k_r_hat)) == 1
            assert len(set(s.k_rd_hat)) == 1

    def test_roll_pitch_jitter_independent(self, samples):
        # per-rotor values should almost never coincide
        distinct = sum(len(set(s.k_p_hat)) == 4 for s in samples)
        assert distinct == len(samples)

    def test_identified_platforms_inside_support(self):
        for p in (P3, P5):
            assert GENERAL_BOUNDS["omega_min"][0] <= p.omega_min <= GENERAL_BOUNDS["omega_min"][1]
            assert GENERAL_BOUNDS["omega_max"][0] <= p.omega_max <= GENERAL_BOUNDS["omega_max"][1]
            assert GENERAL_BOUNDS["k_omega_hat"][0] <= p.k_omega_hat <= GENERAL_BOUNDS["k_omega_hat"][1]
            assert GENERAL_BOUNDS["k_x_hat"][0] <= p.k_x_hat <= GENERAL_BOUNDS["k_x_hat"][1]
            assert GENERAL_BOUNDS["k_r_hat"][0] <= p.k_r_hat[0] <= GENERAL_BOUNDS["k_r_hat"][1]
            assert GENERAL_BOUNDS["k_rd_hat"][0] <= p.k_rd_hat[0] <= GENERAL_BOUNDS["k_rd_hat"][1]

    def test_marginals_uniform(self):
        from scipy import stats

        rng = np.random.default_rng(7)
        vals = np.array([sample_general(rng).tau for _ in range(3000)])
        _, pval = stats.kstest(vals, "uniform", args=(0.01, 0.09))
        assert pval > 1e-3

    def test_deterministic_per_seed(self):
        a = sample_general(np.random.default_rng(42))
        b = sample_general(np.random.default_rng(42))
        assert a == b


class TestPercentageScheme:
    def test_p_zero_is_identity(self):
        rng = np.random.default_rng(0)
        assert sample_percentage(P5, 0.0, rng) == P5

    def test_interval_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            s = sample_percentage(P5, 0.3, rng)
            assert 18.97 - 1e-9 <= s.k_omega_hat <= 35.23 + 1e-9
            assert 0.7 * 0.04 <= s.tau <= 1.3 * 0.04

    def test_k_l_capped_below_one(self):
        rng = np.random.default_rng(2)
        for _ in range(2000):
            s = sample_percentage(P5, 0.1, rng)
            assert s.k_l < 1.0

    def test_draws_independent_per_parameter(self):
        rng = np.random.default_rng(3)
        s = sample_percentage(P5, 0.3, rng)
        ratios = np.array(s.k_p_hat) / np.array(P5.k_p_hat)
        assert len(set(np.round(ratios, 12))) == 4

    def test_negative_p_rejected(self):
        with pytest.raises(InvalidScheme):
            sample_percentage(P5, -0.1, np.random.default_rng(0))

    def test_outputs_always_valid(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            s = sample_percentage(P3, 0.3, rng)
            s.validate()


class TestParseScheme:
    def test_general(self):
        assert isinstance(parse_scheme("general"), GeneralScheme)

    def test_fixed(self):
        s = parse_scheme("fixed", P5)
        assert isinstance(s, FixedScheme)
        assert s.sample(np.random.default_rng(0)) == P5

    def test_pct(self):
        s = parse_scheme("pct:0.2", P3)
        assert isinstance(s, PercentageScheme)
        assert s.p == 0.2

    def test_missing_base(self):
        with pytest.raises(InvalidScheme):
            parse_scheme("fixed")

    def test_unknown(self):
        with pytest.raises(InvalidScheme):
            parse_scheme("nope", P5)
