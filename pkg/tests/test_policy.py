import numpy as np
import pytest

from quadrace.errors import CorruptCheckpoint
from quadrace.policy import (
    LAYOUT,
    N_PARAMS,
    Policy,
    init_params,
    ppo_loss_and_grad,
    unpack,
)

_LOG_2PI = np.log(2.0 * np.pi)


@pytest.fixture
def policy():
    return Policy.init(np.random.default_rng(0))


class TestArchitecture:
    def test_parameter_count(self):
        # 20*64+64 + 64*64+64 + 64*64+64 + 64*4+4 + 4 + 64*1+1
        assert N_PARAMS == 9993

    def test_layout_shapes(self):
        shapes = dict(LAYOUT)
        assert shapes["w1"] == (20, 64)
        assert shapes["wa"] == (64, 4)
        assert shapes["wc"] == (64, 1)
        assert shapes["log_std"] == (4,)

    def test_unpack_views_share_memory(self):
        theta = np.zeros(N_PARAMS)
        p = unpack(theta)
        p["b1"][0] = 5.0
        assert theta[20 * 64] == 5.0

    def test_orthogonal_init(self):
        p = unpack(init_params(np.random.default_rng(1)).astype(np.float64))
        # rows of the wide w1 orthogonal with norm sqrt(2)
        gram = p["w1"] @ p["w1"].T
        assert np.allclose(gram, 2.0 * np.eye(20), atol=1e-5)
        gram3 = p["w3"].T @ p["w3"]
        assert np.allclose(gram3, 2.0 * np.eye(64), atol=1e-5)
        # tiny actor head, unit critic head
        assert np.allclose((p["wa"] ** 2).sum(axis=0), 0.01 ** 2, atol=1e-8)
        assert np.allclose((p["wc"] ** 2).sum(), 1.0, atol=1e-5)
        assert np.all(p["b1"] == 0) and np.all(p["log_std"] == 0)

    def test_init_deterministic(self):
        a = init_params(np.random.default_rng(3))
        b = init_params(np.random.default_rng(3))
        assert np.array_equal(a, b)


class TestForward:
    def test_hand_computed_tiny_network(self):
        theta = np.zeros(N_PARAMS, dtype=np.float32)
        p = unpack(theta)
        p["w1"][0, 0] = 1.0   # h1[0] = relu(obs[0])
        p["w2"][0, 0] = 2.0   # h2[0] = relu(2*h1[0])
        p["w3"][0, 0] = 3.0   # h3[0] = relu(6*obs[0])
        p["wa"][0, 1] = 0.5
        p["ba"][:] = (0.1, 0.2, 0.3, 0.4)
        p["wc"][0, 0] = -1.0
        p["bc"][0] = 0.25
        pol = Policy(theta)
        obs = np.zeros(20)
        obs[0] = 2.0
        mean, value = pol.forward(obs)
        assert mean == pytest.approx([0.1, 0.2 + 0.5 * 12.0, 0.3, 0.4])
        assert value == pytest.approx(0.25 - 12.0)

    def test_relu_blocks_negative(self):
        theta = np.zeros(N_PARAMS, dtype=np.float32)
        p = unpack(theta)
        p["w1"][0, 0] = 1.0
        p["w2"][0, 0] = 1.0
        p["w3"][0, 0] = 1.0
        p["wa"][0, 0] = 1.0
        pol = Policy(theta)
        obs = np.zeros(20)
        obs[0] = -3.0
        mean, _ = pol.forward(obs)
        assert mean[0] == 0.0

    def test_batch_matches_single(self, policy):
        rng = np.random.default_rng(2)
        obs = rng.standard_normal((10, 20))
        means, values = policy.forward(obs)
        for i in range(10):
            m, v = policy.forward(obs[i])
            assert np.allclose(m, means[i], atol=1e-12)
            assert v == pytest.approx(values[i], abs=1e-12)

    def test_deterministic_action_clipped(self, policy):
        p = unpack(policy.theta)
        p["ba"][:] = (-5.0, 5.0, 0.5, 0.2)
        u = policy.act_deterministic(np.zeros(20))
        assert u[0] == 0.0 and u[1] == 1.0
        assert 0.0 < u[2] < 1.0


class TestSampling:
    def test_sample_statistics(self, policy):
        p = unpack(policy.theta)
        p["log_std"][:] = np.log(0.3)
        obs = np.random.default_rng(4).standard_normal(20)
        mean, _ = policy.forward(obs)
        rng = np.random.default_rng(5)
        raws = np.stack([policy.sample_action(obs, rng)[1] for _ in range(4000)])
        assert np.allclose(raws.mean(axis=0), mean, atol=0.02)
        assert np.allclose(raws.std(axis=0), 0.3, atol=0.02)

    def test_sampled_commands_in_unit_box(self, policy):
        rng = np.random.default_rng(6)
        obs = rng.standard_normal((100, 20))
        u, raw, logp = policy.sample_action(obs, rng)
        assert np.all(u >= 0.0) and np.all(u <= 1.0)
        assert u.shape == (100, 4) and logp.shape == (100,)

    def test_log_prob_at_mode(self, policy):
        # density of a 4-d Gaussian at its mean: -sum(log_std) - 2*log(2*pi)
        p = unpack(policy.theta)
        p["log_std"][:] = (-0.5, 0.1, 0.3, -1.0)
        obs = np.random.default_rng(7).standard_normal(20)
        mean, _ = policy.forward(obs)
        logp, _ = policy.log_prob_and_entropy(obs, mean)
        expected = -float(np.sum(p["log_std"])) - 2.0 * _LOG_2PI
        assert logp == pytest.approx(expected, abs=1e-6)

    def test_entropy_closed_form(self, policy):
        p = unpack(policy.theta)
        p["log_std"][:] = (-0.5, 0.1, 0.3, -1.0)
        _, ent = policy.log_prob_and_entropy(np.zeros(20), np.zeros(4))
        expected = float(np.sum(p["log_std"])) + 2.0 * (1.0 + _LOG_2PI)
        assert ent == pytest.approx(expected, abs=1e-6)

    def test_sample_logp_consistent(self, policy):
        obs = np.random.default_rng(8).standard_normal(20)
        u, raw, logp = policy.sample_action(obs, np.random.default_rng(9))
        logp2, _ = policy.log_prob_and_entropy(obs, raw)
        assert logp == pytest.approx(logp2, abs=1e-10)

    def test_monte_carlo_density_normalizes(self, policy):
        # average exp(logp) over samples from the policy equals the
        # expected density under itself; check a 1-sigma shell count instead
        obs = np.zeros(20)
        rng = np.random.default_rng(10)
        mean, _ = policy.forward(obs)
        inside = 0
        n = 2000
        for _ in range(n):
            _, raw, _ = policy.sample_action(obs, rng)
            inside += np.all(np.abs(raw - mean) < 1.0)  # log_std=0 -> std=1
        assert 0.6827 ** 4 - 0.05 < inside / n < 0.6827 ** 4 + 0.05


class TestCheckpoint:
    def test_roundtrip_bitwise(self, policy, tmp_path):
        policy.save(tmp_path / "ck")
        loaded = Policy.load(tmp_path / "ck")
        assert np.array_equal(loaded.theta, policy.theta)
        assert loaded.theta.dtype == np.float32

    def test_manifest_contents(self, policy, tmp_path):
        import json

        policy.save(tmp_path / "ck", extra={"training_step": 123})
        m = json.loads((tmp_path / "ck.json").read_text())
        assert m["n_params"] == N_PARAMS
        assert m["dtype"] == "<f4"
        assert m["training_step"] == 123

    def test_truncated_blob_rejected(self, policy, tmp_path):
        policy.save(tmp_path / "ck")
        blob = (tmp_path / "ck.bin").read_bytes()
        (tmp_path / "ck.bin").write_bytes(blob[:-8])
        with pytest.raises(CorruptCheckpoint):
            Policy.load(tmp_path / "ck")

    def test_bad_manifest_rejected(self, policy, tmp_path):
        policy.save(tmp_path / "ck")
        (tmp_path / "ck.json").write_text("{not json")
        with pytest.raises(CorruptCheckpoint):
            Policy.load(tmp_path / "ck")

    def test_missing_files_rejected(self, tmp_path):
        with pytest.raises(CorruptCheckpoint):
            Policy.load(tmp_path / "nothing")


def _loss_batch(seed, n=32):
    rng = np.random.default_rng(seed)
    theta = init_params(rng).astype(np.float64)
    # non-trivial log_std so its gradient is exercised
    unpack(theta)["log_std"][:] = rng.uniform(-1.0, 0.5, 4)
    obs = rng.standard_normal((n, 20))
    actions = rng.uniform(-0.5, 1.5, (n, 4))
    pol = Policy(theta.astype(np.float32))
    old_logp, _ = pol.log_prob_and_entropy(obs, actions)
    old_logp = old_logp + rng.uniform(-0.3, 0.3, n)  # off-policy ratios
    adv = rng.standard_normal(n)
    ret = rng.standard_normal(n)
    return theta, obs, actions, old_logp, adv, ret


class TestLossAndGradient:
    def test_ratio_one_on_policy(self):
        theta, obs, actions, _, adv, ret = _loss_batch(0)
        pol = Policy(theta.astype(np.float32))
        logp, _ = pol.log_prob_and_entropy(obs, actions)
        theta64 = pol.theta.astype(np.float64)
        _, _, stats = ppo_loss_and_grad(theta64, obs, actions, logp, adv, ret,
                                        0.2, 0.5, 0.0, compute_grad=False)
        assert stats["clip_frac"] == 0.0
        assert stats["approx_kl"] == pytest.approx(0.0, abs=1e-12)
        # with ratio exactly 1 the surrogate is -mean(adv)
        assert stats["loss_pi"] == pytest.approx(-adv.mean(), abs=1e-10)

    def test_value_loss_quadratic(self):
        theta, obs, actions, old_logp, adv, ret = _loss_batch(1)
        pol = Policy(theta.astype(np.float32))
        v = pol.value(obs)
        _, _, stats = ppo_loss_and_grad(pol.theta.astype(np.float64), obs, actions,
                                        old_logp, adv, ret, 0.2, 0.5, 0.0,
                                        compute_grad=False)
        assert stats["loss_v"] == pytest.approx(((v - ret) ** 2).mean(), rel=1e-9)

    def test_clip_fraction_counts_extreme_ratios(self):
        theta, obs, actions, old_logp, adv, ret = _loss_batch(2)
        _, _, stats = ppo_loss_and_grad(theta, obs, actions, old_logp - 2.0,
                                        adv, ret, 0.2, 0.5, 0.0, compute_grad=False)
        assert stats["clip_frac"] == 1.0  # every ratio is e^2 > 1.2

    @pytest.mark.parametrize(
        "clip,vc,ec", [(0.2, 0.0, 0.0), (0.2, 0.5, 0.0), (0.1, 0.5, 0.01)]
    )
    def test_gradient_matches_finite_differences(self, clip, vc, ec):
        theta, obs, actions, old_logp, adv, ret = _loss_batch(3)
        loss, grad, _ = ppo_loss_and_grad(theta, obs, actions, old_logp, adv,
                                          ret, clip, vc, ec)
        rng = np.random.default_rng(4)
        idx = rng.choice(theta.size, 120, replace=False)
        eps = 1e-6
        for i in idx:
            tp = theta.copy(); tp[i] += eps
            tm = theta.copy(); tm[i] -= eps
            lp, _, _ = ppo_loss_and_grad(tp, obs, actions, old_logp, adv, ret,
                                         clip, vc, ec, compute_grad=False)
            lm, _, _ = ppo_loss_and_grad(tm, obs, actions, old_logp, adv, ret,
                                         clip, vc, ec, compute_grad=False)
            fd = (lp - lm) / (2.0 * eps)
            scale = max(abs(fd), abs(grad[i]), 1e-4)
            assert abs(fd - grad[i]) / scale <= 1e-4, f"coordinate {i}"

    def test_gradient_zero_for_fully_clipped_positive_adv(self):
        # ratio far above 1+clip with positive advantage: surrogate is
        # constant, so the policy-head gradient vanishes
        theta, obs, actions, old_logp, _, ret = _loss_batch(5)
        adv = np.ones(obs.shape[0])
        _, grad, _ = ppo_loss_and_grad(theta, obs, actions, old_logp - 3.0,
                                       adv, ret, 0.2, 0.0, 0.0)
        g = unpack(grad)
        assert np.allclose(g["wa"], 0.0) and np.allclose(g["log_std"], 0.0)

    def test_pure_function_no_mutation(self):
        theta, obs, actions, old_logp, adv, ret = _loss_batch(6)
        before = theta.copy()
        ppo_loss_and_grad(theta, obs, actions, old_logp, adv, ret, 0.2, 0.5, 0.0)
        assert np.array_equal(theta, before)
