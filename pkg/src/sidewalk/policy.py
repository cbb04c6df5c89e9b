"""Gaussian policy MLP with hand-written backprop, AdamW and checkpoints.

Architecture: ``15 -> 256 -> 256 -> 256 -> 4``. Every hidden layer is
linear, LayerNorm, LeakyReLU. The head emits a raw mean and a raw spread
per action component; ``mean = tanh(raw_mean)`` and
``std = min(softplus(raw_std) + std_min, std_max)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_NAME = "sidewalk-policy"
FORMAT_VERSION = 1
LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class PolicyConfig:
    sizes: tuple[int, ...] = (15, 256, 256, 256, 4)
    negative_slope: float = 0.01
    ln_eps: float = 1e-5
    std_min: float = 0.15
    std_max: float = 1.0

    @property
    def action_dim(self) -> int:
        return self.sizes[-1] // 2

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "activation": "leaky_relu",
            "negative_slope": self.negative_slope,
            "layer_norm_eps": self.ln_eps,
            "std_min": self.std_min,
            "std_max": self.std_max,
        }


class CheckpointError(ValueError):
    pass


class MalformedCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def param_names(config: PolicyConfig) -> list[str]:
    n_hidden = len(config.sizes) - 2
    names = []
    for i in range(1, n_hidden + 1):
        names += [f"W{i}", f"b{i}", f"g{i}", f"beta{i}"]
    names += [f"W{n_hidden + 1}", f"b{n_hidden + 1}"]
    return names


def init_params(
    config: PolicyConfig,
    rng: np.random.Generator,
    head_scale: float = 0.01,
    init_std: float | None = 0.3,
) -> dict[str, np.ndarray]:
    """Uniform(+-sqrt(1/fan_in)) weights, zero biases, unit LayerNorm gains.

    The output layer is additionally scaled by ``head_scale`` so the initial
    policy sits near ``mean = 0`` instead of the saturated region of tanh.
    ``init_std`` sets the spread biases so the initial exploration noise is
    roughly that value; ``None`` leaves them at zero.
    """
    params = {}
    sizes = config.sizes
    n_hidden = len(sizes) - 2
    for i in range(1, len(sizes)):
        fan_in, fan_out = sizes[i - 1], sizes[i]
        bound = math.sqrt(1.0 / fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if i == len(sizes) - 1:
            params[f"W{i}"] *= head_scale
        params[f"b{i}"] = np.zeros(fan_out)
        if i <= n_hidden:
            params[f"g{i}"] = np.ones(fan_out)
            params[f"beta{i}"] = np.zeros(fan_out)
    if init_std is not None:
        if not config.std_min < init_std <= config.std_max:
            raise ValueError(f"init_std {init_std} outside ({config.std_min}, {config.std_max}]")
        params[f"b{len(sizes) - 1}"][config.action_dim :] = math.log(math.expm1(init_std - config.std_min))
    return {name: params[name] for name in param_names(config)}


def zero_like(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


@dataclass
class ActionDistribution:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)
    normed: list = field(default_factory=list)
    inv_std: list = field(default_factory=list)
    pre_act: list = field(default_factory=list)
    raw: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    std_clamped: np.ndarray | None = None


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def forward(params: dict[str, np.ndarray], obs: np.ndarray, config: PolicyConfig = PolicyConfig(), cache: bool = False):
    """Action distribution for one observation (1-D) or a batch (2-D).

    With ``cache=True`` also returns the intermediates :func:`backward` needs.
    """
    h = np.asarray(obs, dtype=np.float64)
    if not np.isfinite(h).all():
        raise NonFiniteError("observation contains non-finite values")
    n_hidden = len(config.sizes) - 2
    c = ForwardCache() if cache else None
    slope = config.negative_slope
    for i in range(1, n_hidden + 1):
        z = h @ params[f"W{i}"]
        z += params[f"b{i}"]
        width = z.shape[-1]
        centred = z - z.sum(axis=-1, keepdims=True) / width
        inv_std = 1.0 / np.sqrt((centred * centred).sum(axis=-1, keepdims=True) / width + config.ln_eps)
        normed = centred * inv_std
        a = normed * params[f"g{i}"]
        a += params[f"beta{i}"]
        if c is not None:
            c.inputs.append(h)
            c.normed.append(normed)
            c.inv_std.append(inv_std)
            c.pre_act.append(a)
        h = np.maximum(a, slope * a)
    last = n_hidden + 1
    raw = h @ params[f"W{last}"] + params[f"b{last}"]
    k = config.action_dim
    mean = np.tanh(raw[..., :k])
    std_unclamped = _softplus(raw[..., k:]) + config.std_min
    std = np.minimum(std_unclamped, config.std_max)
    if not (np.isfinite(mean).all() and np.isfinite(std).all()):
        raise NonFiniteError("policy output is not finite")
    dist = ActionDistribution(mean, std)
    if c is None:
        return dist
    c.inputs.append(h)
    c.raw = raw
    c.mean = mean
    c.std = std
    c.std_clamped = std_unclamped > config.std_max
    return dist, c


def log_prob(dist: ActionDistribution, action: np.ndarray) -> np.ndarray:
    z = (action - dist.mean) / dist.std
    return np.sum(-0.5 * z * z - np.log(dist.std) - LOG_SQRT_2PI, axis=-1)


def sample_action(dist: ActionDistribution, rng: np.random.Generator | None, deterministic: bool = False):
    """Returns ``(clipped_action, raw_sample, log_prob_of_raw_sample)``.

    In deterministic mode the mean is returned and no random draw is made.
    """
    if deterministic:
        raw = dist.mean.copy()
    else:
        raw = dist.mean + dist.std * rng.standard_normal(dist.mean.shape)
    return np.clip(raw, -1.0, 1.0), raw, float(log_prob(dist, raw))


def backward(
    params: dict[str, np.ndarray],
    cache: ForwardCache | None,
    actions: np.ndarray,
    weights: np.ndarray,
    config: PolicyConfig = PolicyConfig(),
) -> dict[str, np.ndarray]:
    """Gradient of ``L = -sum_t weights_t * log pi(actions_t | obs_t)``.

    ``cache`` comes from a batched :func:`forward` over the same rows. For
    REINFORCE pass ``weights = returns / n_episodes``.
    """
    if cache is None or cache.raw is None:
        raise ValueError("backward needs the cache from forward(..., cache=True)")
    actions = np.atleast_2d(actions)
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    mean, std = np.atleast_2d(cache.mean), np.atleast_2d(cache.std)
    raw = np.atleast_2d(cache.raw)
    k = config.action_dim

    diff = actions - mean
    var = std * std
    # d(-w log p)/d mean and /d std
    d_mean = -w * diff / var
    d_std = -w * (diff * diff / (var * std) - 1.0 / std)
    d_raw = np.empty_like(raw)
    d_raw[:, :k] = d_mean * (1.0 - mean * mean)
    d_raw[:, k:] = np.where(np.atleast_2d(cache.std_clamped), 0.0, d_std * _sigmoid(raw[:, k:]))

    grads = {}
    n_hidden = len(config.sizes) - 2
    last = n_hidden + 1
    h = np.atleast_2d(cache.inputs[last - 1])
    grads[f"W{last}"] = h.T @ d_raw
    grads[f"b{last}"] = d_raw.sum(axis=0)
    d_h = d_raw @ params[f"W{last}"].T
    slope = config.negative_slope
    for i in range(n_hidden, 0, -1):
        a = np.atleast_2d(cache.pre_act[i - 1])
        d_a = d_h * np.where(a > 0, 1.0, slope)
        normed = np.atleast_2d(cache.normed[i - 1])
        grads[f"g{i}"] = (d_a * normed).sum(axis=0)
        grads[f"beta{i}"] = d_a.sum(axis=0)
        d_norm = d_a * params[f"g{i}"]
        inv_std = np.atleast_2d(cache.inv_std[i - 1])
        d_z = inv_std * (
            d_norm - d_norm.mean(axis=-1, keepdims=True) - normed * (d_norm * normed).mean(axis=-1, keepdims=True)
        )
        x_in = np.atleast_2d(cache.inputs[i - 1])
        grads[f"W{i}"] = x_in.T @ d_z
        grads[f"b{i}"] = d_z.sum(axis=0)
        if i > 1:
            d_h = d_z @ params[f"W{i}"].T
    return {name: grads[name] for name in param_names(config)}


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: dict[str, np.ndarray]) -> OptimizerState:
        return cls(zero_like(params), zero_like(params), 0)


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    opt: OptimizerState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """In-place AdamW update with decoupled weight decay."""
    if params.keys() != grads.keys():
        raise ValueError("parameter and gradient names differ")
    opt.step += 1
    bc1 = 1.0 - beta1**opt.step
    bc2 = 1.0 - beta2**opt.step
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {w.shape}")
        m = opt.m[name]
        v = opt.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        w -= lr * update + lr * weight_decay * w


# -- checkpoints -------------------------------------------------------------


def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float.hex(x) for x in a.ravel().tolist()]}


def _decode(entry: dict) -> np.ndarray:
    shape = tuple(entry["shape"])
    data = np.array([float.fromhex(x) for x in entry["data"]], dtype=np.float64)
    if data.size != math.prod(shape):
        raise MalformedCheckpointError("array length does not match its shape")
    return data.reshape(shape)


def save_checkpoint(
    path: str | Path,
    params: dict[str, np.ndarray],
    config: PolicyConfig = PolicyConfig(),
    opt: OptimizerState | None = None,
    metadata: dict | None = None,
) -> None:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "architecture": config.to_dict(),
        "params": {name: _encode(params[name]) for name in param_names(config)},
        "optimizer": None,
        "metadata": metadata or {},
    }
    if opt is not None:
        doc["optimizer"] = {
            "step": opt.step,
            "m": {k: _encode(v) for k, v in opt.m.items()},
            "v": {k: _encode(v) for k, v in opt.v.items()},
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, separators=(",", ":")))
    tmp.replace(path)


def load_checkpoint(path: str | Path, config: PolicyConfig | None = None):
    """Returns ``(params, opt_or_None, config, metadata)``.

    Passing ``config`` asserts that the stored architecture matches it.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedCheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise MalformedCheckpointError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {doc.get('version')} != {FORMAT_VERSION}")
    try:
        arch = doc["architecture"]
        stored = PolicyConfig(
            sizes=tuple(arch["sizes"]),
            negative_slope=arch["negative_slope"],
            ln_eps=arch["layer_norm_eps"],
            std_min=arch["std_min"],
            std_max=arch["std_max"],
        )
        if config is not None and stored != config:
            raise ArchitectureMismatchError(f"{path}: stored architecture {stored} differs from {config}")
        params = {name: _decode(doc["params"][name]) for name in param_names(stored)}
        opt = None
        if doc.get("optimizer") is not None:
            o = doc["optimizer"]
            opt = OptimizerState(
                {k: _decode(v) for k, v in o["m"].items()},
                {k: _decode(v) for k, v in o["v"].items()},
                int(o["step"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise MalformedCheckpointError(f"{path}: {exc}") from exc
    for name, arr in params.items():
        expected = _expected_shape(stored, name)
        if arr.shape != expected:
            raise MalformedCheckpointError(f"{path}: {name} has shape {arr.shape}, expected {expected}")
    return params, opt, stored, doc.get("metadata", {})


def _expected_shape(config: PolicyConfig, name: str) -> tuple[int, ...]:
    kind = name.rstrip("0123456789")
    i = int(name[len(kind):])
    if kind == "W":
        return (config.sizes[i - 1], config.sizes[i])
    return (config.sizes[i],)
