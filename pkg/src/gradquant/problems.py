"""Desk-scale training problems with exact gradients and stochastic oracles.

Every problem exposes ``loss``, ``exact_grad``, and a mini-batch oracle.
Dataset-backed problems also expose ``grad_on(w, idx)`` so a harness can split
one shuffled global batch across workers; the Gaussian-noise problem models
the oracle directly as exact gradient plus noise with variance sigma^2/batch.
Problem data is generated from a ``data_seed`` that is independent of the
training seed, so different runs see the same problem instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

__all__ = [
    "Problem",
    "QuadraticProblem",
    "GaussianNoiseQuadratic",
    "LogisticBlobsProblem",
    "MlpProblem",
    "sg_oracle",
    "finite_difference_grad",
    "measure_sg_stats",
    "mlp_param_count",
    "two_moons",
    "gaussian_blobs",
]


class Problem:
    """Interface shared by the problems below; not meant to be instantiated."""

    name: str = "abstract"
    dim: int
    n_samples: int | None = None
    w_star: np.ndarray | None = None
    smoothness: float | None = None
    min_loss: float | None = None

    def loss(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def exact_grad(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_on(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def initial_point(self) -> np.ndarray:
        raise NotImplementedError

    def stochastic_grad(self, w: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Unbiased mini-batch gradient; batch_size = n_samples gives the exact gradient."""
        if self.n_samples is None:
            raise NotImplementedError
        if not (1 <= batch_size <= self.n_samples):
            raise ValueError("batch_size must lie in [1, n_samples]")
        if batch_size == self.n_samples:
            return self.exact_grad(w)
        idx = rng.permutation(self.n_samples)[:batch_size]
        return self.grad_on(w, idx)


def sg_oracle(problem: Problem, w: np.ndarray, batch_size: int, seed: int) -> np.ndarray:
    """Seeded convenience wrapper around ``problem.stochastic_grad``."""
    return problem.stochastic_grad(w, batch_size, np.random.default_rng(seed))


@dataclass
class QuadraticProblem(Problem):
    """Least squares on a fixed Gaussian design: L(w) = ||Aw - b||^2 / (2N)."""

    dim: int = 10
    n_samples: int = 400
    data_seed: int = 0
    name: str = field(default="quadratic", init=False)

    def __post_init__(self):
        rng = np.random.default_rng((self.data_seed, 0x5EED))
        self.a_matrix = rng.normal(size=(self.n_samples, self.dim)) / math.sqrt(self.dim)
        self.w_star = rng.normal(size=self.dim)
        self.w_star /= np.linalg.norm(self.w_star)
        self.b = self.a_matrix @ self.w_star
        self.smoothness = float(np.linalg.eigvalsh(self.a_matrix.T @ self.a_matrix / self.n_samples)[-1])
        self.min_loss = 0.0
        self._w0 = self.w_star + self._offset(rng)

    def _offset(self, rng):
        d = rng.normal(size=self.dim)
        return d / np.linalg.norm(d)

    def loss(self, w):
        r = self.a_matrix @ w - self.b
        return float(r @ r) / (2 * self.n_samples)

    def exact_grad(self, w):
        return self.a_matrix.T @ (self.a_matrix @ w - self.b) / self.n_samples

    def grad_on(self, w, idx):
        a = self.a_matrix[idx]
        return a.T @ (a @ w - self.b[idx]) / len(idx)

    def initial_point(self):
        return self._w0.copy()


@dataclass
class GaussianNoiseQuadratic(Problem):
    """L(w) = ||w - w*||^2 / 2 with a synthetic noisy oracle.

    The oracle returns the exact gradient plus N(0, sigma^2/batch) noise per
    coordinate, so its variance is analytic: E||g - grad||^2 = dim * sigma^2 / batch.
    """

    dim: int = 8
    noise_scale: float = 0.05
    data_seed: int = 0
    name: str = field(default="gaussian", init=False)

    def __post_init__(self):
        rng = np.random.default_rng((self.data_seed, 0x6A55))
        self.w_star = rng.normal(size=self.dim)
        self.w_star /= np.linalg.norm(self.w_star)
        self.smoothness = 1.0
        self.min_loss = 0.0
        d = rng.normal(size=self.dim)
        self._w0 = self.w_star + d / np.linalg.norm(d)

    def loss(self, w):
        d = w - self.w_star
        return 0.5 * float(d @ d)

    def exact_grad(self, w):
        return w - self.w_star

    def initial_point(self):
        return self._w0.copy()

    def stochastic_grad(self, w, batch_size, rng):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        noise = rng.normal(scale=self.noise_scale / math.sqrt(batch_size), size=self.dim)
        return self.exact_grad(w) + noise

    def oracle_variance(self, batch_size: int) -> float:
        return self.dim * self.noise_scale**2 / batch_size


def gaussian_blobs(n: int, dim: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two labeled Gaussian clouds at +-mu, labels in {-1, +1}."""
    mu = np.full(dim, 1.2 / math.sqrt(dim))
    half = n // 2
    x_pos = rng.normal(size=(half, dim)) + mu
    x_neg = rng.normal(size=(n - half, dim)) - mu
    x = np.vstack([x_pos, x_neg])
    y = np.concatenate([np.ones(half), -np.ones(n - half)])
    perm = rng.permutation(n)
    return x[perm], y[perm]


@dataclass
class LogisticBlobsProblem(Problem):
    """L2-regularized logistic regression on two Gaussian blobs."""

    dim: int = 6
    n_samples: int = 400
    reg: float = 1e-3
    data_seed: int = 0
    name: str = field(default="logistic", init=False)

    def __post_init__(self):
        rng = np.random.default_rng((self.data_seed, 0xB10B))
        self.x, self.y = gaussian_blobs(self.n_samples, self.dim, rng)
        self.smoothness = float(
            0.25 * np.linalg.eigvalsh(self.x.T @ self.x / self.n_samples)[-1] + self.reg
        )
        res = optimize.minimize(self.loss, np.zeros(self.dim), jac=self.exact_grad, method="L-BFGS-B")
        self.w_star = res.x
        self.min_loss = float(res.fun)
        self._w0 = np.zeros(self.dim)

    def _margins(self, w, idx=None):
        x = self.x if idx is None else self.x[idx]
        y = self.y if idx is None else self.y[idx]
        return y * (x @ w), x, y

    def loss(self, w):
        m, _, _ = self._margins(w)
        return float(np.mean(np.logaddexp(0.0, -m))) + 0.5 * self.reg * float(w @ w)

    def exact_grad(self, w):
        return self.grad_on(w, np.arange(self.n_samples))

    def grad_on(self, w, idx):
        m, x, y = self._margins(w, idx)
        sig = 1.0 / (1.0 + np.exp(m))  # sigma(-margin)
        return -(x * (y * sig)[:, None]).mean(axis=0) + self.reg * w

    def initial_point(self):
        return self._w0.copy()


def two_moons(n: int, noise: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Interleaved half-circles with Gaussian jitter, labels in {0, 1}."""
    half = n // 2
    t1 = rng.uniform(0.0, math.pi, half)
    t2 = rng.uniform(0.0, math.pi, n - half)
    upper = np.column_stack([np.cos(t1), np.sin(t1)])
    lower = np.column_stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)])
    x = np.vstack([upper, lower]) + rng.normal(scale=noise, size=(n, 2))
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(n - half, dtype=np.int64)])
    perm = rng.permutation(n)
    return x[perm], y[perm]


def mlp_param_count(layer_sizes) -> int:
    """Weights plus biases of a fully connected network."""
    sizes = list(layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError("need at least two positive layer sizes")
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class MlpProblem(Problem):
    """Fully connected tanh network with softmax cross-entropy, hand-coded backprop.

    Defaults to a 2-16-2 classifier on a synthetic two-moons set; arbitrary
    layer sizes and datasets (e.g. flattened image data) plug into the same
    code path.
    """

    layer_sizes: tuple[int, ...] = (2, 16, 2)
    n_samples: int = 400
    noise: float = 0.15
    data_seed: int = 0
    dataset: tuple[np.ndarray, np.ndarray] | None = None
    name: str = field(default="mlp", init=False)

    def __post_init__(self):
        rng = np.random.default_rng((self.data_seed, 0x300))
        if self.dataset is None:
            self.x, self.labels = two_moons(self.n_samples, self.noise, rng)
        else:
            self.x, self.labels = self.dataset
            self.n_samples = self.x.shape[0]
        if self.x.shape[1] != self.layer_sizes[0]:
            raise ValueError("input width does not match the first layer")
        if int(self.labels.max()) >= self.layer_sizes[-1]:
            raise ValueError("label exceeds the output layer width")
        self.dim = mlp_param_count(self.layer_sizes)
        self.w_star = None
        self.smoothness = None
        self.min_loss = None
        scale = [1.0 / math.sqrt(a) for a in self.layer_sizes[:-1]]
        self._w0 = np.concatenate(
            [
                np.concatenate([rng.normal(scale=s, size=(a, b)).ravel(), np.zeros(b)])
                for (a, b), s in zip(zip(self.layer_sizes[:-1], self.layer_sizes[1:]), scale)
            ]
        )

    @classmethod
    def from_arrays(cls, x: np.ndarray, labels: np.ndarray, layer_sizes) -> "MlpProblem":
        return cls(layer_sizes=tuple(layer_sizes), dataset=(np.asarray(x, dtype=np.float64), np.asarray(labels)))

    def _unpack(self, w):
        layers, pos = [], 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            wt = w[pos : pos + a * b].reshape(a, b)
            pos += a * b
            bias = w[pos : pos + b]
            pos += b
            layers.append((wt, bias))
        return layers

    def _forward(self, w, idx):
        layers = self._unpack(w)
        h = self.x[idx]
        acts = [h]
        for wt, bias in layers[:-1]:
            h = np.tanh(h @ wt + bias)
            acts.append(h)
        wt, bias = layers[-1]
        logits = h @ wt + bias
        logits = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(logits).sum(axis=1))
        return layers, acts, logits, log_z

    def loss_on(self, w, idx):
        _, _, logits, log_z = self._forward(w, idx)
        picked = logits[np.arange(len(idx)), self.labels[idx]]
        return float(np.mean(log_z - picked))

    def loss(self, w):
        return self.loss_on(w, np.arange(self.n_samples))

    def grad_on(self, w, idx):
        layers, acts, logits, log_z = self._forward(w, idx)
        batch = len(idx)
        probs = np.exp(logits - log_z[:, None])
        delta = probs
        delta[np.arange(batch), self.labels[idx]] -= 1.0
        delta /= batch
        grads = []
        for layer_i in range(len(layers) - 1, -1, -1):
            wt, _ = layers[layer_i]
            grads.append((acts[layer_i].T @ delta, delta.sum(axis=0)))
            if layer_i > 0:
                delta = (delta @ wt.T) * (1.0 - acts[layer_i] ** 2)
        out = []
        for gw, gb in reversed(grads):
            out.append(gw.ravel())
            out.append(gb)
        return np.concatenate(out)

    def exact_grad(self, w):
        return self.grad_on(w, np.arange(self.n_samples))

    def initial_point(self):
        return self._w0.copy()


def finite_difference_grad(fn, w: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (fn(w + e) - fn(w - e)) / (2 * h)
    return g


def measure_sg_stats(
    problem: Problem,
    w: np.ndarray,
    batch_size: int,
    n_calls: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Empirical (V, B): oracle variance E||g - grad||^2 and squared-norm bound of grad.

    Used to feed the training-horizon calculator when the problem has no
    analytic constants.
    """
    rng = np.random.default_rng((seed, 0x57A7))
    grad = problem.exact_grad(w)
    sq = 0.0
    for _ in range(n_calls):
        g = problem.stochastic_grad(w, batch_size, rng)
        d = g - grad
        sq += float(d @ d)
    return sq / n_calls, float(grad @ grad)
