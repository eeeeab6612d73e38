"""Small feed-forward networks with hand-written backpropagation, plus an Adam optimizer."""

from typing import List, Sequence, Tuple

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class MLP:
    """
    Fully connected network: tanh hidden layers, linear output layer.

    Inputs are batch-first, shape (batch, sizes[0]); outputs have shape (batch, sizes[-1]).
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, output_scale: float = 1.0):
        """
        Initialize weights.

        Args:
            sizes: Layer widths, input first, e.g. (64, 64, 64, 2)
            rng: Generator used for the initial weights
            output_scale: Gain of the last layer (small values start the actor near uniform)
        """
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output size")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        last = len(self.sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            gain = output_scale if i == last else 1.0
            self.weights.append(rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> List[np.ndarray]:
        """Parameter arrays in the order W1, b1, W2, b2, ...; updated in place by optimizers."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Return the output and the activations needed by backward()."""
        activations = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == len(self.weights) - 1 else np.tanh(z)
            activations.append(h)
        return h, activations

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, activations: List[np.ndarray], d_out: np.ndarray) -> List[np.ndarray]:
        """
        Backpropagate d(loss)/d(output).

        Returns:
            Gradients aligned with `params`
        """
        grads: List[np.ndarray] = [None] * (2 * len(self.weights))
        delta = d_out
        for i in reversed(range(len(self.weights))):
            h_in = activations[i]
            grads[2 * i] = h_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                # tanh'(z) = 1 - tanh(z)^2, and activations[i] = tanh(z_i)
                delta = (delta @ self.weights[i].T) * (1.0 - activations[i] ** 2)
        return grads

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        expected = sum(p.size for p in self.params)
        if flat.size != expected:
            raise ValueError(f"expected {expected} parameters, got {flat.size}")
        offset = 0
        for p in self.params:
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    def copy(self) -> "MLP":
        clone = MLP.__new__(MLP)
        clone.sizes = self.sizes
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def load_from(self, other: "MLP") -> None:
        """Copy another network's weights into this one."""
        for mine, theirs in zip(self.params, other.params):
            mine[...] = theirs


def clip_by_global_norm(grads: List[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


class Adam:
    """Adam on a fixed list of parameter arrays, minimizing."""

    def __init__(self, params: List[np.ndarray], lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def snapshot(self):
        return self.t, [m.copy() for m in self.m], [v.copy() for v in self.v]

    def restore(self, snap) -> None:
        self.t, m, v = snap
        for dst, src in zip(self.m, m):
            dst[...] = src
        for dst, src in zip(self.v, v):
            dst[...] = src
