"""
Parametric dynamical systems h(t+1) = f(h(t), x(t), theta).

Each system exposes its transition, the state Jacobian df/dh and the sparse
rows w_i = df_i/dtheta. Parameters travel as one flat float64 vector in a
canonical order shared by every module: all biases b, then the recurrent
weights W in (j, i) lexicographic edge order, then the input weights r in
(l, i) order.

Every parameter influences exactly one unit, so the rows w_i are stored
packed: an `owner` array (the unit each flat index belongs to) plus one value
per parameter.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Activation:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]


def _tanh_deriv(h: np.ndarray) -> np.ndarray:
    t = np.tanh(h)
    return 1.0 - t * t


def _sigmoid_deriv(h: np.ndarray) -> np.ndarray:
    s = expit(h)
    return s * (1.0 - s)


ACTIVATIONS: Dict[str, Activation] = {
    "tanh": Activation("tanh", np.tanh, _tanh_deriv),
    "sigmoid": Activation("sigmoid", expit, _sigmoid_deriv),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}, expected one of {sorted(ACTIVATIONS)}") from None


@dataclass(frozen=True)
class SparseParamRow:
    """Nonzero derivatives of one unit's transition w.r.t. the flat parameter."""

    indices: np.ndarray
    values: np.ndarray

    def to_dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim)
        out[self.indices] = self.values
        return out


class ParamRows:
    """The rows w_1..w_n packed by parameter ownership.

    `values[k]` is the derivative of f_{owner[k]} w.r.t. flat parameter k; all
    other derivatives of that parameter are zero.
    """

    def __init__(self, owner: np.ndarray, values: np.ndarray, groups: Sequence[np.ndarray]):
        self.owner = owner
        self.values = values
        self.groups = groups

    def __len__(self) -> int:
        return len(self.groups)

    def __getitem__(self, i: int) -> SparseParamRow:
        idx = self.groups[i]
        return SparseParamRow(idx, self.values[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def param_dim(self) -> int:
        return int(self.values.size)

    def combine(self, coeffs: np.ndarray) -> np.ndarray:
        """Sum_i coeffs[..., i] w_i as dense vectors; coeffs may carry leading batch axes."""
        return coeffs[..., self.owner] * self.values

    def quad_norms(self, metric_values: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-row sum_k values_k * metric_values_k (squared Euclidean norms by default)."""
        weights = self.values * (self.values if metric_values is None else metric_values)
        return np.bincount(self.owner, weights=weights, minlength=len(self))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((len(self), self.param_dim))
        out[self.owner, np.arange(self.param_dim)] = self.values
        return out


@dataclass
class InternalParams:
    """Structured view of the recurrent parameters (b, W, r) and the fixed leak alpha."""

    b: np.ndarray
    W: np.ndarray
    r: np.ndarray
    alpha: Optional[np.ndarray] = None

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.b, self.W, self.r.ravel()])


ParamLike = Union[np.ndarray, InternalParams]


class DynamicalSystem(ABC):
    """Interface shared by every system the estimators can train."""

    state_dim: int
    input_dim: int
    param_dim: int

    def __init__(self, owner: np.ndarray, n_units: int):
        self.owner = owner
        self.groups: List[np.ndarray] = [np.flatnonzero(owner == i) for i in range(n_units)]

    def flat(self, theta: ParamLike) -> np.ndarray:
        vec = theta.as_vector() if isinstance(theta, InternalParams) else np.asarray(theta, dtype=float)
        if vec.shape != (self.param_dim,):
            raise ConfigError(f"parameter vector has shape {vec.shape}, expected ({self.param_dim},)")
        return vec

    def check_state(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        if h.shape != (self.state_dim,):
            raise ConfigError(f"state has shape {h.shape}, expected ({self.state_dim},)")
        return h

    def check_input(self, x: Optional[np.ndarray]) -> np.ndarray:
        x = np.zeros(0) if x is None else np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ConfigError(f"input has shape {x.shape}, expected ({self.input_dim},)")
        return x

    @abstractmethod
    def step(self, h: np.ndarray, x: Optional[np.ndarray], theta: ParamLike) -> np.ndarray:
        """Return h(t+1) = f(h, x, theta) without touching the arguments."""

    @abstractmethod
    def jacobian_state(self, h: np.ndarray, theta: ParamLike) -> np.ndarray:
        """Dense (n, n) matrix with entry (i, j) = df_i/dh_j."""

    @abstractmethod
    def param_rows(self, h: np.ndarray, x: Optional[np.ndarray], theta: ParamLike) -> ParamRows:
        """Rows w_i = df_i/dtheta, one per unit."""

    def apply_jacobian(self, h: np.ndarray, theta: ParamLike, V: np.ndarray) -> np.ndarray:
        """Rows of V mapped through df/dh, i.e. V @ (df/dh)^T for V of shape (K, n)."""
        return V @ self.jacobian_state(h, theta).T

    def apply_jacobian_transpose(self, h: np.ndarray, theta: ParamLike, u: np.ndarray) -> np.ndarray:
        """(df/dh)^T u, used by backward passes."""
        return self.jacobian_state(h, theta).T @ u

    def padded_groups(self) -> np.ndarray:
        """Per-unit parameter groups as a (n, max_size) index array padded with -1."""
        width = max((len(g) for g in self.groups), default=0)
        out = -np.ones((len(self.groups), width), dtype=np.int64)
        for i, g in enumerate(self.groups):
            out[i, : len(g)] = g
        return out


def fully_connected_edges(n_units: int) -> np.ndarray:
    return np.array([(j, i) for j in range(n_units) for i in range(n_units)], dtype=np.int64).reshape(-1, 2)


class RecurrentNetwork(DynamicalSystem):
    """Vanilla or leaky RNN on pre-activations h.

    h_i(t+1) = alpha_i h_i(t) + b_i + sum_{j->i} W_ji sigma(h_j(t)) + sum_l r_li x_l(t)

    The leak term is present only when `leak` is given; alpha is fixed and not
    part of the flat parameter vector.
    """

    def __init__(
        self,
        n_units: int,
        n_inputs: int,
        edges: Optional[Iterable[Tuple[int, int]]] = None,
        activation: str = "tanh",
        leak: Optional[np.ndarray] = None,
    ):
        if n_units < 1 or n_inputs < 0:
            raise ConfigError(f"invalid network size: {n_units} units, {n_inputs} inputs")
        self.state_dim = n_units
        self.input_dim = n_inputs
        self.activation = get_activation(activation)

        edge_arr = fully_connected_edges(n_units) if edges is None else np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if edge_arr.size and (edge_arr.min() < 0 or edge_arr.max() >= n_units):
            raise ConfigError("edge endpoint outside [0, n_units)")
        order = np.lexsort((edge_arr[:, 1], edge_arr[:, 0]))
        edge_arr = edge_arr[order]
        if len(np.unique(edge_arr, axis=0)) != len(edge_arr):
            raise ConfigError("duplicate edges in graph")
        self.src = edge_arr[:, 0]
        self.dst = edge_arr[:, 1]
        self.n_edges = len(edge_arr)

        if leak is not None:
            leak = np.asarray(leak, dtype=float)
            if leak.shape != (n_units,):
                raise ConfigError(f"leak has shape {leak.shape}, expected ({n_units},)")
            if np.any(leak <= 0.0) or np.any(leak >= 1.0):
                raise ConfigError("leak coefficients must lie in (0, 1)")
        self.leak = leak

        self.param_dim = n_units + self.n_edges + n_inputs * n_units
        owner = np.concatenate([
            np.arange(n_units),
            self.dst,
            np.tile(np.arange(n_units), n_inputs),
        ])
        super().__init__(owner, n_units)
        # offsets of the three blocks inside the flat vector
        self._w0 = n_units
        self._r0 = n_units + self.n_edges

    @property
    def n_units(self) -> int:
        return self.state_dim

    @property
    def is_leaky(self) -> bool:
        return self.leak is not None

    def unpack(self, theta: ParamLike) -> InternalParams:
        vec = self.flat(theta)
        return InternalParams(
            b=vec[: self._w0],
            W=vec[self._w0 : self._r0],
            r=vec[self._r0 :].reshape(self.input_dim, self.n_units),
            alpha=self.leak,
        )

    def weight_matrix(self, W: np.ndarray) -> np.ndarray:
        """Dense M with M[j, i] = W_ji (zero where there is no edge)."""
        M = np.zeros((self.n_units, self.n_units))
        M[self.src, self.dst] = W
        return M

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Gaussian weights (std 1/sqrt(n_units) for W, 1/sqrt(n_inputs) for r), zero biases."""
        b = np.zeros(self.n_units)
        W = rng.normal(0.0, 1.0 / np.sqrt(self.n_units), size=self.n_edges)
        r_std = 1.0 / np.sqrt(self.input_dim) if self.input_dim else 0.0
        r = rng.normal(0.0, r_std, size=(self.input_dim, self.n_units))
        return InternalParams(b, W, r).as_vector()

    def step(self, h, x, theta):
        h = self.check_state(h)
        x = self.check_input(x)
        p = self.unpack(theta)
        out = p.b + self.activation.fn(h) @ self.weight_matrix(p.W) + x @ p.r
        if self.leak is not None:
            out = out + self.leak * h
        return out

    def jacobian_state(self, h, theta):
        h = self.check_state(h)
        p = self.unpack(theta)
        J = self.weight_matrix(p.W).T * self.activation.deriv(h)[None, :]
        if self.leak is not None:
            J = J + np.diag(self.leak)
        return J

    def apply_jacobian(self, h, theta, V):
        h = self.check_state(h)
        p = self.unpack(theta)
        out = (V * self.activation.deriv(h)) @ self.weight_matrix(p.W)
        if self.leak is not None:
            out = out + V * self.leak
        return out

    def apply_jacobian_transpose(self, h, theta, u):
        h = self.check_state(h)
        p = self.unpack(theta)
        out = self.activation.deriv(h) * (self.weight_matrix(p.W) @ u)
        if self.leak is not None:
            out = out + self.leak * u
        return out

    def param_rows(self, h, x, theta):
        h = self.check_state(h)
        x = self.check_input(x)
        self.flat(theta)
        a = self.activation.fn(h)
        values = np.concatenate([np.ones(self.n_units), a[self.src], np.repeat(x, self.n_units)])
        return ParamRows(self.owner, values, self.groups)


def leaky_rnn(
    n_units: int,
    n_inputs: int,
    rng: np.random.Generator,
    activation: str = "tanh",
    edges: Optional[Iterable[Tuple[int, int]]] = None,
) -> RecurrentNetwork:
    """Leaky RNN whose per-unit alpha is drawn uniformly in (0, 1) and then kept fixed."""
    leak = rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=n_units)
    return RecurrentNetwork(n_units, n_inputs, edges=edges, activation=activation, leak=leak)


class ToySystem(DynamicalSystem):
    """Linear system h(t+1) = (1 - alpha) h(t) + theta with h, theta in R^n.

    Converges to theta / alpha; its rows are the basis vectors e_i.
    """

    def __init__(self, n: int, alpha: float):
        if n < 1:
            raise ConfigError(f"toy system needs n >= 1, got {n}")
        if not 0.0 < alpha < 1.0:
            raise ConfigError(f"toy system needs 0 < alpha < 1, got {alpha}")
        self.state_dim = n
        self.input_dim = 0
        self.param_dim = n
        self.alpha = float(alpha)
        super().__init__(np.arange(n), n)

    def step(self, h, x, theta):
        h = self.check_state(h)
        self.check_input(x)
        return (1.0 - self.alpha) * h + self.flat(theta)

    def jacobian_state(self, h, theta):
        self.check_state(h)
        return (1.0 - self.alpha) * np.eye(self.state_dim)

    def apply_jacobian(self, h, theta, V):
        return (1.0 - self.alpha) * V

    def apply_jacobian_transpose(self, h, theta, u):
        return (1.0 - self.alpha) * u

    def param_rows(self, h, x, theta):
        self.check_state(h)
        self.check_input(x)
        return ParamRows(self.owner, np.ones(self.param_dim), self.groups)


def toy_system(n: int, alpha: float) -> ToySystem:
    return ToySystem(n, alpha)
