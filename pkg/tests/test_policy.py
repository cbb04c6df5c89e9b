import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sidewalk.policy import (
    ArchitectureMismatchError,
    CheckpointVersionError,
    MalformedCheckpointError,
    NonFiniteError,
    OptimizerState,
    PolicyConfig,
    adamw_step,
    backward,
    clip_by_global_norm,
    forward,
    global_norm,
    init_params,
    load_checkpoint,
    log_prob,
    param_names,
    sample_action,
    save_checkpoint,
    zero_like,
)

CFG = PolicyConfig()


def random_params(seed=0, scale=0.1, config=CFG):
    rng = np.random.default_rng(seed)
    params = init_params(config, rng, head_scale=1.0, init_std=None)
    return {k: rng.normal(0.0, scale, size=v.shape) for k, v in params.items()}


def zero_params(config=CFG):
    params = init_params(config, np.random.default_rng(0), init_std=None)
    out = zero_like(params)
    for name in out:
        if name.startswith("g"):
            out[name][:] = 1.0
    return out


def loss(params, obs, actions, weights):
    return -float(np.sum(weights * log_prob(forward(params, obs), actions)))


class TestForward:
    def test_zero_network(self):
        dist = forward(zero_params(), np.ones(15), PolicyConfig(std_min=0.05))
        assert np.all(dist.mean == 0.0)
        assert dist.std == pytest.approx([math.log(2) + 0.05] * 2, rel=1e-12)
        assert dist.std[0] == pytest.approx(0.7431, abs=1e-4)

    def test_deterministic(self):
        p = random_params()
        obs = np.linspace(-1, 1, 15)
        a, b = forward(p, obs), forward(p, obs)
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)

    def test_batch_matches_rows(self):
        p = random_params(1)
        obs = np.random.default_rng(2).normal(size=(5, 15))
        batch = forward(p, obs)
        for i in range(5):
            row = forward(p, obs[i])
            assert np.allclose(row.mean, batch.mean[i], rtol=0, atol=1e-14)

    def test_non_finite_input(self):
        obs = np.zeros(15)
        obs[3] = math.nan
        with pytest.raises(NonFiniteError):
            forward(random_params(), obs)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, 15, elements=st.floats(-50, 50)), st.integers(0, 5), st.floats(0.01, 3.0))
    def test_output_bounds(self, obs, seed, scale):
        dist = forward(random_params(seed, scale), obs)
        assert np.all(np.abs(dist.mean) <= 1.0)
        assert np.all(dist.std >= CFG.std_min) and np.all(dist.std <= CFG.std_max)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, 15, elements=st.floats(-20, 20)), st.integers(0, 5), st.floats(0.05, 2.0))
    def test_layer_norm_statistics(self, obs, seed, scale):
        p = random_params(seed, scale)
        _, cache = forward(p, obs, cache=True)
        for i, normed in enumerate(cache.normed, start=1):
            z = cache.inputs[i - 1] @ p[f"W{i}"] + p[f"b{i}"]
            var_z = z.var()
            assert abs(normed.mean()) <= 1e-9
            # eps inside the square root: variance is var_z / (var_z + eps) exactly
            assert normed.var() == pytest.approx(var_z / (var_z + CFG.ln_eps), abs=1e-12)
            if var_z >= 10.0:
                assert abs(normed.var() - 1.0) <= 1e-6

    def test_initial_policy(self):
        p = init_params(CFG, np.random.default_rng(0))
        dist = forward(p, np.random.default_rng(1).normal(size=(50, 15)))
        assert np.all(np.abs(dist.mean) < 0.05)
        assert np.allclose(dist.std, 0.3, atol=0.01)

    def test_init_shapes_and_bounds(self):
        p = init_params(CFG, np.random.default_rng(0), head_scale=1.0, init_std=None)
        assert list(p) == param_names(CFG)
        assert p["W1"].shape == (15, 256) and p["W4"].shape == (256, 4)
        assert np.all(np.abs(p["W2"]) <= math.sqrt(1 / 256))
        assert np.all(p["g1"] == 1.0) and np.all(p["beta3"] == 0.0) and np.all(p["b4"] == 0.0)

    def test_init_std_range(self):
        with pytest.raises(ValueError):
            init_params(CFG, np.random.default_rng(0), init_std=0.01)


class TestSampling:
    def test_log_prob_at_mode(self):
        from sidewalk.policy import ActionDistribution

        dist = ActionDistribution(np.array([0.2, -0.3]), np.array([0.05, 0.05]))
        _, raw, lp = sample_action(dist, None, deterministic=True)
        assert np.array_equal(raw, dist.mean)
        assert lp == pytest.approx(-2 * math.log(0.05 * math.sqrt(2 * math.pi)), rel=1e-12)

    def test_evaluation_returns_mean(self):
        from sidewalk.policy import ActionDistribution

        dist = ActionDistribution(np.array([0.4, 0.1]), np.array([0.5, 0.5]))
        action, _, _ = sample_action(dist, None, deterministic=True)
        assert np.array_equal(action, dist.mean)

    def test_clipping(self):
        from sidewalk.policy import ActionDistribution

        class Fixed:
            def standard_normal(self, shape):
                return np.array([1.4, -3.0])

        dist = ActionDistribution(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        action, raw, lp = sample_action(dist, Fixed())
        assert action.tolist() == [1.0, -1.0]
        assert raw.tolist() == [1.4, -3.0]
        assert lp == pytest.approx(float(log_prob(dist, raw)))

    @given(
        arrays(np.float64, 2, elements=st.floats(-0.99, 0.99)),
        arrays(np.float64, 2, elements=st.floats(0.05, 1.0)),
        arrays(np.float64, 2, elements=st.floats(-3, 3)),
    )
    def test_log_prob_is_product_of_densities(self, mean, std, x):
        from sidewalk.policy import ActionDistribution

        dens = np.prod(np.exp(-0.5 * ((x - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi)))
        lp = float(log_prob(ActionDistribution(mean, std), x))
        assert math.exp(lp) == pytest.approx(dens, rel=1e-12)


class TestBackward:
    def test_gradient_check(self):
        rng = np.random.default_rng(7)
        p = random_params(7, 0.1)
        obs = rng.normal(size=(3, 15))
        actions = rng.normal(size=(3, 2))
        weights = np.array([1.0, -0.5, 2.0])
        _, cache = forward(p, obs, cache=True)
        grads = backward(p, cache, actions, weights)
        names = param_names(CFG)
        sizes = np.array([p[n].size for n in names])
        picks = rng.choice(sizes.sum(), size=1000, replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        h = 1e-5
        worst = 0.0
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            name, idx = names[k], int(flat - offsets[k])
            arr = p[name].reshape(-1)
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss(p, obs, actions, weights)
            arr[idx] = orig - h
            down = loss(p, obs, actions, weights)
            arr[idx] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[name].reshape(-1)[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)
            worst = max(worst, err)
        assert worst <= 1e-4

    def test_zero_weights_zero_gradient(self):
        p = random_params(2)
        obs = np.random.default_rng(0).normal(size=(4, 15))
        _, cache = forward(p, obs, cache=True)
        grads = backward(p, cache, np.zeros((4, 2)), np.zeros(4))
        assert all(np.all(g == 0.0) for g in grads.values())

    def test_duplicate_batch_same_mean_gradient(self):
        p = random_params(3)
        rng = np.random.default_rng(1)
        obs, actions, w = rng.normal(size=(4, 15)), rng.normal(size=(4, 2)), rng.normal(size=4)
        _, c1 = forward(p, obs, cache=True)
        g1 = backward(p, c1, actions, w / 4)
        obs2, act2, w2 = np.vstack([obs, obs]), np.vstack([actions, actions]), np.concatenate([w, w])
        _, c2 = forward(p, obs2, cache=True)
        g2 = backward(p, c2, act2, w2 / 8)
        for k in g1:
            assert np.allclose(g1[k], g2[k], rtol=1e-10, atol=1e-14)

    def test_missing_cache(self):
        with pytest.raises(ValueError):
            backward(random_params(), None, np.zeros((1, 2)), np.ones(1))


class TestOptimizer:
    def one(self, value):
        return {"w": np.array([value])}

    def test_first_step(self):
        p, g = self.one(1.0), self.one(1.0)
        opt = OptimizerState.zeros(p)
        adamw_step(p, g, opt, lr=1e-3, weight_decay=0.01)
        assert p["w"][0] == pytest.approx(1.0 - 1e-3 * (1.0 / (1.0 + 1e-8)) - 1e-5, abs=1e-12)
        assert p["w"][0] == pytest.approx(0.998990, abs=1e-6)
        assert opt.step == 1

    def test_no_gradient_no_decay(self):
        p = self.one(0.7)
        opt = OptimizerState.zeros(p)
        for _ in range(5):
            adamw_step(p, self.one(0.0), opt, weight_decay=0.0)
        assert p["w"][0] == 0.7
        assert opt.m["w"][0] == 0.0 and opt.v["w"][0] == 0.0

    def test_decoupled_decay(self):
        p = self.one(2.0)
        opt = OptimizerState.zeros(p)
        for _ in range(3):
            adamw_step(p, self.one(0.0), opt, lr=1e-2, weight_decay=0.5)
        assert p["w"][0] == pytest.approx(2.0 * (1 - 5e-3) ** 3, rel=1e-12)

    def test_shape_mismatch(self):
        p = self.one(1.0)
        with pytest.raises(ValueError):
            adamw_step(p, {"w": np.zeros(2)}, OptimizerState.zeros(p))
        with pytest.raises(ValueError):
            adamw_step(p, {"v": np.zeros(1)}, OptimizerState.zeros(p))


class TestClip:
    def test_clip_scales_to_bound(self):
        g = {"a": np.array([3.0, 4.0]), "b": np.array([12.0])}
        clipped, norm = clip_by_global_norm(g, 5.0)
        assert norm == 13.0
        assert global_norm(clipped) == pytest.approx(5.0)

    def test_small_unchanged(self):
        g = {"a": np.array([0.3, 0.4])}
        clipped, _ = clip_by_global_norm(g, 5.0)
        assert np.array_equal(clipped["a"], g["a"])


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        p = random_params(5)
        opt = OptimizerState.zeros(p)
        adamw_step(p, random_params(6), opt)
        save_checkpoint(tmp_path / "a.ckpt", p, CFG, opt, {"episodes": 12, "seed": 3, "risk_averse": True})
        q, opt2, cfg, meta = load_checkpoint(tmp_path / "a.ckpt", CFG)
        assert cfg == CFG and meta["episodes"] == 12 and meta["risk_averse"] is True
        for k in p:
            assert p[k].tobytes() == q[k].tobytes()
            assert opt.m[k].tobytes() == opt2.m[k].tobytes()
        assert opt2.step == 1

    def test_without_optimizer(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", random_params(), CFG)
        assert load_checkpoint(tmp_path / "a.ckpt")[1] is None

    def test_truncated(self, tmp_path):
        path = tmp_path / "a.ckpt"
        save_checkpoint(path, random_params(), CFG)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(MalformedCheckpointError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "a.ckpt"
        path.write_text('{"hello": 1}')
        with pytest.raises(MalformedCheckpointError):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        import json

        path = tmp_path / "a.ckpt"
        save_checkpoint(path, random_params(), CFG)
        doc = json.loads(path.read_text())
        doc["version"] = doc["version"] + 1
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_architecture_mismatch(self, tmp_path):
        path = tmp_path / "a.ckpt"
        save_checkpoint(path, random_params(), CFG)
        small = PolicyConfig(sizes=(14, 256, 256, 256, 4))
        with pytest.raises(ArchitectureMismatchError):
            load_checkpoint(path, small)

    def test_error_kinds_distinct(self):
        assert len({MalformedCheckpointError, CheckpointVersionError, ArchitectureMismatchError}) == 3
        assert not issubclass(MalformedCheckpointError, CheckpointVersionError)
