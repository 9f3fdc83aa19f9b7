"""
Softmax character readout and log-loss in bits.

scores_z = phi_z + sum_i phi_iz a_i with a = sigma(h). Gradients carry the
1/ln 2 factor of the bit unit so that they are derivatives of the reported
loss.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_softmax

from .dynsys import Activation, get_activation
from .errors import ConfigError

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)


@dataclass
class OutputParams:
    """Per-symbol bias (A,) and per-(unit, symbol) weights (n, A)."""

    bias: np.ndarray
    weights: np.ndarray

    @classmethod
    def zeros(cls, n_units: int, n_symbols: int) -> "OutputParams":
        return cls(np.zeros(n_symbols), np.zeros((n_units, n_symbols)))

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_units: int, n_symbols: int) -> "OutputParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (n_symbols * (n_units + 1),):
            raise ConfigError(f"output parameter vector has shape {vec.shape}, expected ({n_symbols * (n_units + 1)},)")
        return cls(vec[:n_symbols], vec[n_symbols:].reshape(n_units, n_symbols))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.bias, self.weights.ravel()])


@dataclass
class Prediction:
    scores: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray


@dataclass
class ReadoutGrads:
    loss: float
    grad_phi: np.ndarray
    grad_h: np.ndarray
    grad_scores: np.ndarray


def predict(h: np.ndarray, phi: OutputParams, activation: Activation) -> Prediction:
    if phi.weights.shape[0] != h.shape[0]:
        raise ConfigError(f"readout expects {phi.weights.shape[0]} units, state has {h.shape[0]}")
    scores = phi.bias + activation.fn(h) @ phi.weights
    log_probs = log_softmax(scores)
    return Prediction(scores, np.exp(log_probs), log_probs)


def loss_and_grads(pred: Prediction, y: int, h: np.ndarray, phi: OutputParams, activation: Activation) -> ReadoutGrads:
    """Log-loss -log2 p(y) with its gradients w.r.t. flat phi and h."""
    if not 0 <= y < pred.probs.shape[0]:
        raise ConfigError(f"symbol index {y} outside alphabet of size {pred.probs.shape[0]}")
    loss = -pred.log_probs[y] / LN2
    g = pred.probs.copy()
    g[y] -= 1.0
    g /= LN2
    a = activation.fn(h)
    grad_phi = np.concatenate([g, np.outer(a, g).ravel()])
    grad_h = activation.deriv(h) * (phi.weights @ g)
    return ReadoutGrads(float(loss), grad_phi, grad_h, g)


def fisher_outer(grad: np.ndarray, groups: Optional[np.ndarray] = None) -> np.ndarray:
    """Outer-product Fisher increment g g^T restricted to a structure.

    groups=None keeps the diagonal (g**2); otherwise `groups` is a (G, s) index
    array padded with -1 and the result stacks the G dense block outer products.
    """
    if groups is None:
        return grad * grad
    gathered = np.where(groups >= 0, grad[np.maximum(groups, 0)], 0.0)
    return gathered[:, :, None] * gathered[:, None, :]


class SoftmaxReadout:
    """Binds the readout to a network size, an alphabet size and an activation."""

    def __init__(self, n_units: int, n_symbols: int, activation: str = "tanh"):
        if n_symbols < 1:
            raise ConfigError("alphabet must contain at least one symbol")
        self.n_units = n_units
        self.n_symbols = n_symbols
        self.activation = get_activation(activation)
        self.param_dim = n_symbols * (n_units + 1)

    def init_params(self) -> np.ndarray:
        return OutputParams.zeros(self.n_units, self.n_symbols).as_vector()

    def unpack(self, phi: np.ndarray) -> OutputParams:
        return OutputParams.from_vector(phi, self.n_units, self.n_symbols)

    def predict(self, h: np.ndarray, phi: np.ndarray) -> Prediction:
        return predict(h, self.unpack(phi), self.activation)

    def observe(self, h: np.ndarray, phi: np.ndarray, y: int) -> ReadoutGrads:
        params = self.unpack(phi)
        pred = predict(h, params, self.activation)
        return loss_and_grads(pred, y, h, params, self.activation)

    def padded_groups(self) -> np.ndarray:
        """One block per symbol z: its bias and the weights phi_iz of every unit."""
        A, n = self.n_symbols, self.n_units
        z = np.arange(A)
        weight_idx = A + np.arange(n)[None, :] * A + z[:, None]
        return np.concatenate([z[:, None], weight_idx], axis=1)
