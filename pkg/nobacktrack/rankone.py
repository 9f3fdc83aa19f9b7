"""
Expectation-preserving rank-one reduction of a sum of outer products.

Given A = sum_i v_i w_i^T and independent uniform signs eps_i, the matrix
(sum_i eps_i rho_i v_i)(sum_j eps_j w_j / rho_j)^T has expectation A for any
nonzero rho_i. The variance is smallest when rho_i balances the norms of
rho_i v_i and w_i / rho_i.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .dynsys import ParamRows, SparseParamRow
from .errors import ConfigError

logger = logging.getLogger(__name__)

# Added to numerator and denominator of every norm ratio.
DELTA = 1e-12


class QuadraticForm(Protocol):
    def apply(self, x: np.ndarray) -> np.ndarray:
        """M x along the last axis of x."""

    def quad(self, x: np.ndarray) -> np.ndarray:
        """x^T M x along the last axis of x."""


class SolveBackend(Protocol):
    def solve(self, x: np.ndarray) -> np.ndarray:
        """M^-1 x along the last axis of x."""


class _FormBase:
    def quad(self, x: np.ndarray) -> np.ndarray:
        return np.sum(x * self.apply(x), axis=-1)


@dataclass(frozen=True)
class IdentityForm(_FormBase):
    dim: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x

    def quad(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("...i,...i->...", x, x)

    def basis_norms(self) -> np.ndarray:
        return np.ones(self.dim)


@dataclass(frozen=True)
class DiagonalForm(_FormBase):
    weights: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x * self.weights

    def basis_norms(self) -> np.ndarray:
        """|e_i| for every basis vector."""
        return np.sqrt(np.maximum(self.weights, 0.0))


@dataclass(frozen=True)
class InverseForm(_FormBase):
    """The dual form x^T M^-1 x of any M that can solve linear systems, such as a block-diagonal covariance."""

    backend: SolveBackend

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.backend.solve(x)


@dataclass(frozen=True)
class NormPair:
    """Quadratic forms measuring state vectors (norm_v) and parameter vectors (norm_w)."""

    norm_v: QuadraticForm
    norm_w: QuadraticForm

    @classmethod
    def euclidean(cls, n: int, m: int) -> "NormPair":
        return cls(IdentityForm(n), IdentityForm(m))

    def v_norms(self, vs: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(self.norm_v.quad(vs), 0.0))

    def w_norms(self, ws: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(self.norm_w.quad(ws), 0.0))

    def row_norms(self, rows: ParamRows) -> np.ndarray:
        """|w_i| for packed rows; exact when norm_w does not couple parameters of different rows."""
        return np.sqrt(np.maximum(rows.quad_norms(self.norm_w.apply(rows.values)), 0.0))

    def basis_norms(self) -> np.ndarray:
        """|e_i| under norm_v."""
        return self.norm_v.basis_norms()


def balanced_scaling(norm_w: np.ndarray, norm_v: np.ndarray, delta: float = DELTA) -> np.ndarray:
    """rho = sqrt((|w| + delta) / (|v| + delta)); equals sqrt(|w|/|v|) away from zero norms."""
    return np.sqrt((norm_w + delta) / (norm_v + delta))


def pair_and_row_scalings(
    vbar: np.ndarray,
    wbar: np.ndarray,
    rows: Optional[ParamRows],
    norms: NormPair,
) -> Tuple[np.ndarray, np.ndarray]:
    """Balanced scalings for K pairs (vbar_k, wbar_k) and for the rank-one terms e_i w_i^T.

    Returns rho_bar of shape (K,) and rho_rows broadcastable to (K, n); a per-pair state norm gives
    per-pair row scalings.
    """
    rho_bar = balanced_scaling(norms.w_norms(wbar), norms.v_norms(vbar))
    if rows is None:
        return rho_bar, np.ones(vbar.shape[1])
    return rho_bar, balanced_scaling(norms.row_norms(rows), norms.basis_norms())


@dataclass
class RankOneDecomposition:
    """Terms (v_i, w_i) stacked as rows of `vs` (k, n) and `ws` (k, m)."""

    vs: np.ndarray
    ws: np.ndarray

    def __post_init__(self):
        self.vs = np.atleast_2d(np.asarray(self.vs, dtype=float))
        self.ws = np.atleast_2d(np.asarray(self.ws, dtype=float))
        if self.vs.shape[0] != self.ws.shape[0]:
            raise ConfigError(f"{self.vs.shape[0]} v terms but {self.ws.shape[0]} w terms")

    @classmethod
    def from_terms(
        cls,
        terms: Sequence[Tuple[np.ndarray, Union[np.ndarray, SparseParamRow]]],
        m: Optional[int] = None,
    ) -> "RankOneDecomposition":
        """Build from (v, w) pairs; sparse rows are densified, which needs `m`."""
        vs, ws = [], []
        for v, w in terms:
            if isinstance(w, SparseParamRow):
                if m is None:
                    raise ConfigError("parameter dimension m is required for sparse rows")
                w = w.to_dense(m)
            vs.append(np.asarray(v, dtype=float))
            ws.append(np.asarray(w, dtype=float))
        if len({v.shape for v in vs}) > 1 or len({w.shape for w in ws}) > 1:
            raise ConfigError("all v (resp. w) terms must share one length")
        return cls(np.array(vs), np.array(ws))

    @property
    def k(self) -> int:
        return self.vs.shape[0]

    def matrix(self) -> np.ndarray:
        """A = sum_i v_i w_i^T (dense; oracle use)."""
        return self.vs.T @ self.ws


@dataclass
class RankOneEstimate:
    v: np.ndarray
    w: np.ndarray

    def to_dense(self) -> np.ndarray:
        return np.outer(self.v, self.w)


def draw_signs(rng: np.random.Generator, shape) -> np.ndarray:
    """Independent uniform +-1 signs as floats."""
    return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0


def enumerate_signs(k: int) -> np.ndarray:
    """All 2^k sign vectors, shape (2^k, k)."""
    return np.array(list(itertools.product((-1.0, 1.0), repeat=k))).reshape(2 ** k, k)


def optimal_scalings(d: RankOneDecomposition, norms: Optional[NormPair] = None) -> np.ndarray:
    if norms is None:
        norms = NormPair.euclidean(d.vs.shape[1], d.ws.shape[1])
    return balanced_scaling(norms.w_norms(d.ws), norms.v_norms(d.vs))


def reduce(d: RankOneDecomposition, norms: Optional[NormPair], signs: np.ndarray) -> RankOneEstimate:
    """One random rank-one reduction with variance-optimal scaling."""
    signs = np.asarray(signs, dtype=float)
    if signs.shape != (d.k,):
        raise ConfigError(f"expected {d.k} signs, got shape {signs.shape}")
    rho = optimal_scalings(d, norms)
    v = (signs * rho) @ d.vs
    w = (signs / rho) @ d.ws
    return RankOneEstimate(v, w)


def reduce_rank_k(
    d: RankOneDecomposition,
    norms: Optional[NormPair],
    K: int,
    rng: np.random.Generator,
) -> List[RankOneEstimate]:
    """K independent reductions; their average (1/K) sum_k v_k w_k^T is still unbiased."""
    if K < 1:
        raise ConfigError(f"rank K must be >= 1, got {K}")
    signs = draw_signs(rng, (K, d.k))
    return [reduce(d, norms, s) for s in signs]


def average_dense(estimates: Sequence[RankOneEstimate]) -> np.ndarray:
    return sum(e.to_dense() for e in estimates) / len(estimates)


def variance_hs(d: RankOneDecomposition, scaled: bool = True) -> float:
    """Exact Hilbert-Schmidt variance E|A~ - A|^2 under Euclidean norms."""
    gv = d.vs @ d.vs.T
    gw = d.ws @ d.ws.T
    nv2 = np.diag(gv)
    nw2 = np.diag(gw)
    cross = float(np.sum(gv * gw) - np.sum(nv2 * nw2))
    if scaled:
        first = float(np.sum(np.sqrt(nv2 * nw2))) ** 2
    else:
        first = float(np.sum(nv2) * np.sum(nw2))
    return max(first - float(np.sum(nv2 * nw2)) + cross, 0.0)
