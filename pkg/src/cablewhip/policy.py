"""Gaussian MLP policy over structured observations, trained by behaviour cloning.

The network maps a normalised observation to six numbers: the mean apex
(three joint angles, rad) and the log standard deviation of a diagonal
Gaussian. Training minimises the mean of ``|a_hat - a|^2`` with
``a_hat = mean + std * eps`` (reparameterisation), so gradients reach both
heads. Backpropagation is written out by hand.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arm import load_arm
from .minjerk import ApexAction

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
FORMAT = "cablewhip-mlp"
VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def _default_bounds():
    arm = load_arm()
    return arm.q_min[:3].copy(), arm.q_max[:3].copy()


@dataclass
class MlpPolicy:
    """Fully connected tanh network with a (mean, log-std) output head.

    ``mean = act_mean + act_scale * y[:3]`` and ``log_std = clip(y[3:])`` where
    ``y`` is the network output on ``(obs - obs_mean) / obs_scale``.
    """

    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    obs_mean: np.ndarray
    obs_scale: np.ndarray
    act_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    act_scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    action_low: np.ndarray = field(default_factory=lambda: _default_bounds()[0])
    action_high: np.ndarray = field(default_factory=lambda: _default_bounds()[1])
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or self.layer_dims[-1] != 6:
            raise ValueError("layer_dims must end in 6 outputs (3 mean, 3 log-std)")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i], self.layer_dims[i + 1]) or b.shape != (self.layer_dims[i + 1],):
                raise ValueError(f"layer {i} has the wrong shape")
        for k in ("obs_mean", "obs_scale", "act_mean", "act_scale", "action_low", "action_high"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=float))

    @classmethod
    def create(cls, obs_dim: int, hidden: Sequence[int] = (64, 64), seed: int = 0,
               log_std_init: float = -2.0) -> "MlpPolicy":
        """Glorot-uniform weights, zero biases except the log-std bias."""
        dims = [int(obs_dim), *hidden, 6]
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for i in range(len(dims) - 1):
            lim = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
            ws.append(rng.uniform(-lim, lim, (dims[i], dims[i + 1])))
            bs.append(np.zeros(dims[i + 1]))
        ws[-1] *= 0.1
        bs[-1][3:] = log_std_init
        return cls(dims, ws, bs, np.zeros(obs_dim), np.ones(obs_dim))

    @classmethod
    def zeros(cls, obs_dim: int, hidden: Sequence[int] = (64, 64)) -> "MlpPolicy":
        dims = [int(obs_dim), *hidden, 6]
        ws = [np.zeros((dims[i], dims[i + 1])) for i in range(len(dims) - 1)]
        bs = [np.zeros(d) for d in dims[1:]]
        return cls(dims, ws, bs, np.zeros(obs_dim), np.ones(obs_dim))

    @property
    def obs_dim(self) -> int:
        return self.layer_dims[0]

    # parameters as one flat vector (weights then biases, layer by layer)
    def get_params(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for w, b in zip(self.weights, self.biases) for p in (w, b)])

    def set_params(self, theta: np.ndarray) -> None:
        k = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = theta[k : k + w.size].reshape(w.shape).copy()
            k += w.size
            self.biases[i] = theta[k : k + b.size].copy()
            k += b.size

    def copy(self) -> "MlpPolicy":
        return MlpPolicy.from_dict(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "activation": "tanh",
            "layer_dims": self.layer_dims,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "obs_mean": self.obs_mean.tolist(),
            "obs_scale": self.obs_scale.tolist(),
            "act_mean": self.act_mean.tolist(),
            "act_scale": self.act_scale.tolist(),
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpPolicy":
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError("not a cablewhip policy file of a supported version")
        return cls(d["layer_dims"], d["weights"], d["biases"], d["obs_mean"], d["obs_scale"], d["act_mean"],
                   d["act_scale"], d["action_low"], d["action_high"], d.get("metadata", {}))

    def save(self, path) -> Path:
        return atomic_write_text(path, json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MlpPolicy":
        return cls.from_dict(json.loads(Path(path).read_text()))


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


# ------------------------------------------------------------------ forward

def _as_batch(policy: MlpPolicy, obs) -> np.ndarray:
    x = np.asarray(getattr(obs, "as_array", lambda: obs)(), dtype=float)
    x2 = np.atleast_2d(x)
    if x2.shape[1] != policy.obs_dim:
        raise ValueError(f"observation has dimension {x2.shape[1]}, policy expects {policy.obs_dim}")
    return x2


def _forward(policy: MlpPolicy, X: np.ndarray):
    """Returns mean, log_std, and the activations needed for backprop."""
    h = (X - policy.obs_mean) / policy.obs_scale
    acts = [h]
    n = len(policy.weights)
    for i, (w, b) in enumerate(zip(policy.weights, policy.biases)):
        z = h @ w + b
        h = z if i == n - 1 else np.tanh(z)
        acts.append(h)
    y = acts[-1]
    mean = policy.act_mean + policy.act_scale * y[:, :3]
    log_std = np.clip(y[:, 3:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std, acts


def forward(policy: MlpPolicy, obs) -> Tuple[np.ndarray, np.ndarray]:
    """Mean (rad) and standard deviation of the action Gaussian.

    Accepts one observation or a batch (rows); returns matching shapes.
    """
    X = _as_batch(policy, obs)
    mean, log_std, _ = _forward(policy, X)
    if np.ndim(getattr(obs, "values", obs)) == 1:
        return mean[0], np.exp(log_std[0])
    return mean, np.exp(log_std)


def _clamp(policy: MlpPolicy, a: np.ndarray) -> np.ndarray:
    return np.clip(a, policy.action_low, policy.action_high)


def sample(policy: MlpPolicy, obs, rng: np.random.Generator) -> ApexAction:
    """Draw ``mean + std * eps`` and clamp it to the joint limits."""
    mean, std = forward(policy, obs)
    eps = rng.standard_normal(3)
    return ApexAction(_clamp(policy, mean + std * eps))


def predict(policy: MlpPolicy, obs) -> ApexAction:
    """The Gaussian mean, clamped to the joint limits."""
    mean, _ = forward(policy, obs)
    return ApexAction(_clamp(policy, mean))


# ------------------------------------------------------------- loss and grad

def _loss_grad(policy: MlpPolicy, X: np.ndarray, A: np.ndarray, eps: np.ndarray, need_grad: bool = True):
    B = X.shape[0]
    mean, log_std, acts = _forward(policy, X)
    std = np.exp(log_std)
    r = mean + std * eps - A
    loss = float(np.sum(r * r) / B)
    if not need_grad:
        return loss, None
    dr = 2.0 * r / B
    y = acts[-1]
    dy = np.empty_like(y)
    dy[:, :3] = dr * policy.act_scale
    inside = (y[:, 3:] > LOG_STD_MIN) & (y[:, 3:] < LOG_STD_MAX)
    dy[:, 3:] = dr * std * eps * inside
    gw, gb = [], []
    g = dy
    for i in range(len(policy.weights) - 1, -1, -1):
        gw.append(acts[i].T @ g)
        gb.append(g.sum(axis=0))
        if i > 0:
            g = (g @ policy.weights[i].T) * (1.0 - acts[i] ** 2)
    gw.reverse()
    gb.reverse()
    return loss, np.concatenate([p.reshape(-1) for w, b in zip(gw, gb) for p in (w, b)])


def _batch_arrays(batch):
    if isinstance(batch, Dataset):
        return batch.observations, batch.actions
    X, A = batch
    return np.atleast_2d(np.asarray(X, dtype=float)), np.atleast_2d(np.asarray(A, dtype=float))


def loss(policy: MlpPolicy, batch, rng: np.random.Generator) -> float:
    """Mean over the batch of ``|a_hat - a|^2`` with reparameterised samples.

    ``batch`` is a :class:`Dataset` or an ``(observations, actions)`` pair.
    """
    X, A = _batch_arrays(batch)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    eps = rng.standard_normal(A.shape)
    return _loss_grad(policy, _as_batch(policy, X), A, eps, need_grad=False)[0]


def loss_and_grad(policy: MlpPolicy, batch, rng: np.random.Generator) -> Tuple[float, np.ndarray]:
    """Loss as in :func:`loss` (same draws for the same rng state) and its gradient."""
    X, A = _batch_arrays(batch)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    eps = rng.standard_normal(A.shape)
    return _loss_grad(policy, _as_batch(policy, X), A, eps)


# ------------------------------------------------------------------ dataset

@dataclass
class Dataset:
    """Successful (observation, apex action) pairs with collection metadata.

    ``extras`` holds per-record extras such as the task instance and the
    attempt index; they are kept through JSONL round trips.
    """

    observations: np.ndarray
    actions: np.ndarray
    metadata: Dict = field(default_factory=dict)
    extras: List[Dict] = field(default_factory=list)

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        self.observations = obs if obs.ndim == 2 else obs.reshape(len(obs), -1)
        self.actions = np.asarray(self.actions, dtype=float).reshape(-1, 3)
        if len(self.observations) != len(self.actions):
            raise ValueError("observations and actions differ in length")
        if not self.extras:
            self.extras = [{} for _ in range(len(self))]
        if len(self.extras) != len(self):
            raise ValueError("one extras entry per record")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    def to_jsonl(self) -> str:
        lines = [
            json.dumps({"observation": o.tolist(), "action": a.tolist(), **e})
            for o, a, e in zip(self.observations, self.actions, self.extras)
        ]
        return "".join(line + "\n" for line in lines)

    def save(self, path, meta_path=None) -> Path:
        path = Path(path)
        atomic_write_text(path, self.to_jsonl())
        atomic_write_text(meta_path or path.with_suffix(".meta.json"), json.dumps(self.metadata, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path, meta_path=None) -> "Dataset":
        path = Path(path)
        obs, acts, extras = [], [], []
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            obs.append(rec.pop("observation"))
            acts.append(rec.pop("action"))
            extras.append(rec)
        if len({len(o) for o in obs}) > 1:
            raise ValueError("records have different observation dimensions")
        meta_path = Path(meta_path) if meta_path else path.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        X = np.array(obs, dtype=float) if obs else np.zeros((0, 0))
        return cls(X, np.array(acts, dtype=float).reshape(-1, 3), meta, extras)


# ----------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.03
    batch_size: int = 32
    epochs: int = 2000
    seed: int = 0
    weight_decay: float = 0.0
    momentum: float = 0.9
    hidden: Tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0 or self.weight_decay < 0:
            raise ValueError("invalid training configuration")


def fit_normalization(policy: MlpPolicy, data: Dataset) -> None:
    """Per-feature observation statistics and per-joint action statistics from ``data``.

    Features (or joints) that do not vary get scale 1.
    """
    X, A = data.observations, data.actions
    policy.obs_mean = X.mean(axis=0)
    sd = X.std(axis=0)
    policy.obs_scale = np.where(sd > 1e-8, sd, 1.0)
    policy.act_mean = A.mean(axis=0)
    sa = A.std(axis=0)
    policy.act_scale = np.where(sa > 1e-8, sa, 1.0)


def train(
    policy: MlpPolicy,
    dataset: Dataset,
    config: TrainConfig = TrainConfig(),
    normalize: bool = True,
) -> Tuple[MlpPolicy, List[float]]:
    """Mini-batch SGD with momentum on the reparameterised loss.

    Returns a trained copy of ``policy`` and the mean loss of every epoch.
    Deterministic given ``config.seed``.

    Raises
    ------
    TrainingDivergedError
        On a non-finite loss, naming the epoch and batch.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.obs_dim != policy.obs_dim:
        raise ValueError("dataset and policy observation dimensions differ")
    pol = policy.copy()
    if normalize:
        fit_normalization(pol, dataset)
    rng = np.random.default_rng(config.seed)
    theta = pol.get_params()
    vel = np.zeros_like(theta)
    X, A = dataset.observations, dataset.actions
    n = len(dataset)
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            eps = rng.standard_normal((idx.size, 3))
            value, grad = _loss_grad(pol, X[idx], A[idx], eps)
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(epoch, b, value)
            total += value * idx.size
            grad = grad + config.weight_decay * theta
            vel = config.momentum * vel - config.learning_rate * grad
            theta = theta + vel
            pol.set_params(theta)
        curve.append(total / n)
    pol.metadata = {**pol.metadata, "train_config": {k: getattr(config, k) for k in config.__dataclass_fields__}}
    return pol, curve
