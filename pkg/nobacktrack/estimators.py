"""
Online trainers for a dynamical system with a softmax readout.

  rtrl         exact G(t) = dh(t)/dtheta propagated forward, gradient step
  nbt-euclid   NoBackTrack: unbiased random rank-one estimate of G, gradient step
  nbt-kalman   NoBackTrack fed to a structured information filter
  kalman-rtrl  the same filter on top of the exact RTRL gradient
  tbptt        truncated backpropagation through time, one backward pass per window

Every trainer starts with one priming transition from h = 0 on the
start-of-stream input, then each tick runs observation, update, reduction
(NoBackTrack only) and transition, in that order. The NoBackTrack estimate is

    G~ = (1/K) sum_k vbar_k wbar_k^T + sum_i e_i w_i^T

with K independent (vbar_k, wbar_k) pairs sharing the rows w_i.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Type

import numpy as np

from .dynsys import DynamicalSystem, ParamRows
from .errors import ConfigError, DivergenceError
from .rankone import DELTA, DiagonalForm, InverseForm, NormPair, draw_signs, pair_and_row_scalings
from .readout import LN2, SoftmaxReadout, fisher_outer

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8
STATE_METRIC_BAND = 4.0
SCALING_MODES = ("optimal", "invariant", "none")
MATRIX_REDUCE_MODES = ("diagonal", "blocks")


@dataclass
class TrainingSchedule:
    # gradients are in bits; ln 2 turns eta0 / sqrt(t) into a 1 / sqrt(t) step in nats
    eta0: float = float(LN2)
    gamma_c: float = 1.0
    gamma_cap: float = 0.99
    prior_scale: Optional[float] = None
    rank: int = 1
    truncation: int = 15
    matrix_reduce: str = "diagonal"
    frozen: bool = False

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.truncation < 1:
            raise ConfigError(f"truncation must be >= 1, got {self.truncation}")
        if not 0.0 <= self.gamma_cap < 1.0:
            raise ConfigError(f"gamma cap must lie in [0, 1), got {self.gamma_cap}")
        if self.gamma_c < 0.0:
            raise ConfigError(f"gamma constant must be >= 0, got {self.gamma_c}")
        if self.prior_scale is not None and self.prior_scale <= 0.0:
            raise ConfigError(f"prior scale must be > 0, got {self.prior_scale}")
        if self.matrix_reduce not in MATRIX_REDUCE_MODES:
            raise ConfigError(f"matrix reduce must be one of {MATRIX_REDUCE_MODES}, got {self.matrix_reduce!r}")

    def eta(self, t: int) -> float:
        if self.frozen:
            return 0.0
        return self.eta0 / np.sqrt(max(t, 1))

    def gamma(self, t: int) -> float:
        return min(self.gamma_cap, self.gamma_c / np.sqrt(max(t, 1)))

    def prior(self, state_dim: int) -> float:
        return float(state_dim) if self.prior_scale is None else float(self.prior_scale)


class InverseCovariance:
    """Structured inverse covariance J plus a diagonal prior Lambda.

    With `groups=None` J is diagonal; otherwise J is block diagonal with one
    dense block per row of `groups` (a (G, s) index array padded with -1 that
    covers every parameter exactly once). All solves use J + Lambda.
    """

    def __init__(self, dim: int, prior, groups: Optional[np.ndarray] = None):
        self.dim = dim
        self.prior = np.broadcast_to(np.asarray(prior, dtype=float), (dim,)).copy()
        if np.any(self.prior <= 0.0):
            raise ConfigError("prior inverse covariance must be positive definite")
        self.groups = groups
        if groups is None:
            self.diag = np.zeros(dim)
        else:
            covered = np.sort(groups[groups >= 0])
            if not np.array_equal(covered, np.arange(dim)):
                raise ConfigError("covariance blocks must cover every parameter exactly once")
            self._mask = groups >= 0
            size = groups.shape[1]
            self.blocks = np.zeros((groups.shape[0], size, size))

    @property
    def structure(self) -> str:
        return "diagonal" if self.groups is None else "blocks"

    def decay_add(self, increment: np.ndarray, gamma: float) -> None:
        """J <- (1 - gamma) J + increment, in place."""
        if self.groups is None:
            self.diag *= 1.0 - gamma
            self.diag += increment
        else:
            self.blocks *= 1.0 - gamma
            self.blocks += increment

    def _effective_blocks(self) -> np.ndarray:
        eff = self.blocks.copy()
        pad_prior = np.where(self._mask, self.prior[np.maximum(self.groups, 0)], 1.0)
        idx = np.arange(eff.shape[1])
        eff[:, idx, idx] += pad_prior
        return eff

    def solve(self, g: np.ndarray) -> np.ndarray:
        """(J + Lambda)^-1 g along the last axis of g."""
        if self.groups is None:
            return g / (self.diag + self.prior)
        gathered = np.where(self._mask, g[..., np.maximum(self.groups, 0)], 0.0)
        x = np.linalg.solve(self._effective_blocks(), gathered[..., None])[..., 0]
        out = np.zeros(g.shape)
        out[..., self.groups[self._mask]] = x[..., self._mask]
        return out

    def inv_quad(self, x: np.ndarray) -> np.ndarray:
        """x^T (J + Lambda)^-1 x along the last axis."""
        return np.sum(x * self.solve(x), axis=-1)

    def dense(self) -> np.ndarray:
        """J + Lambda as a dense matrix (oracle use)."""
        M = np.diag(self.prior)
        if self.groups is None:
            M += np.diag(self.diag)
        else:
            for block, idx, mask in zip(self.blocks, self.groups, self._mask):
                sel = idx[mask]
                M[np.ix_(sel, sel)] += block[np.ix_(mask, mask)]
        return M

    def is_positive_definite(self) -> bool:
        if self.groups is None:
            return bool(np.all(self.diag + self.prior > 0.0))
        try:
            np.linalg.cholesky(self._effective_blocks())
        except np.linalg.LinAlgError:
            return False
        return True


def make_covariance(dim: int, prior: float, groups: np.ndarray, mode: str) -> InverseCovariance:
    return InverseCovariance(dim, prior, groups if mode == "blocks" else None)


def filter_step(cov: InverseCovariance, grad: np.ndarray, gamma: float) -> np.ndarray:
    """Outer-product information-filter update; returns the parameter step -(J + Lambda)^-1 g."""
    cov.decay_add(fisher_outer(grad, cov.groups), gamma)
    return -cov.solve(grad)


def check_finite(step: int, **arrays: np.ndarray) -> None:
    for name, arr in arrays.items():
        if arr is None or np.size(arr) == 0:
            continue
        peak = float(np.max(np.abs(arr)))
        if not np.isfinite(peak) or peak > DIVERGENCE_LIMIT:
            raise DivergenceError(name, step, peak)


def check_estimate(step: int, state: "NbtState") -> None:
    """Guard the scale of G~, max_k max_i |vbar_k[i]| |wbar_k|; the split between vbar and wbar is free."""
    scale = float(np.max(np.max(np.abs(state.vbar), axis=1) * np.linalg.norm(state.wbar, axis=1)))
    if not np.isfinite(scale) or scale > DIVERGENCE_LIMIT:
        raise DivergenceError("nbt_estimate", step, scale)


# ---------------------- exact RTRL ---------------------- #


def rtrl_step(G: np.ndarray, h: np.ndarray, x: Optional[np.ndarray], theta: np.ndarray, system: DynamicalSystem) -> np.ndarray:
    """G(t+1) = df/dh G(t) + df/dtheta."""
    if G.shape != (system.state_dim, system.param_dim):
        raise ConfigError(f"Jacobian has shape {G.shape}, expected ({system.state_dim}, {system.param_dim})")
    return system.jacobian_state(h, theta) @ G + system.param_rows(h, x, theta).to_dense()


def rtrl_total_gradient(
    system: DynamicalSystem,
    readout: SoftmaxReadout,
    theta: np.ndarray,
    phi: np.ndarray,
    h0: np.ndarray,
    xs: Sequence[np.ndarray],
    ys: Sequence[int],
    G0: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Sum of losses over h(k+1) = f(h(k), xs[k]) scored against ys[k], with exact gradients."""
    G = np.zeros((system.state_dim, system.param_dim)) if G0 is None else G0.copy()
    h = np.asarray(h0, dtype=float)
    loss = 0.0
    grad_theta = np.zeros(system.param_dim)
    grad_phi = np.zeros(readout.param_dim)
    for x, y in zip(xs, ys):
        G = rtrl_step(G, h, x, theta, system)
        h = system.step(h, x, theta)
        obs = readout.observe(h, phi, y)
        loss += obs.loss
        grad_theta += G.T @ obs.grad_h
        grad_phi += obs.grad_phi
    return loss, grad_theta, grad_phi


# ---------------------- NoBackTrack ---------------------- #


@dataclass
class NbtState:
    """K pairs (vbar_k, wbar_k) plus the rows w_i pending between transition and reduction."""

    vbar: np.ndarray
    wbar: np.ndarray
    rows: Optional[ParamRows] = None

    @classmethod
    def initial(cls, state_dim: int, param_dim: int, rank: int = 1) -> "NbtState":
        return cls(np.zeros((rank, state_dim)), np.zeros((rank, param_dim)))

    @property
    def rank(self) -> int:
        return self.vbar.shape[0]

    def dense_estimates(self) -> np.ndarray:
        """(K, n, P) stack of vbar_k wbar_k^T + sum_i e_i w_i^T (oracle use)."""
        out = self.vbar[:, :, None] * self.wbar[:, None, :]
        if self.rows is not None:
            out = out + self.rows.to_dense()[None]
        return out

    def estimate(self) -> np.ndarray:
        """G~ averaged over the K pairs, dense (oracle use)."""
        G = self.vbar.T @ self.wbar / self.rank
        if self.rows is not None:
            G = G + self.rows.to_dense()
        return G


def update_direction(state: NbtState, H: np.ndarray) -> np.ndarray:
    """(H G~)^T = mean_k (H . vbar_k) wbar_k + sum_i H_i w_i."""
    direction = (state.vbar @ H) @ state.wbar / state.rank
    if state.rows is not None:
        direction = direction + state.rows.combine(H)
    return direction


def euclidean_scalings(state: NbtState) -> Tuple[np.ndarray, np.ndarray]:
    """rho_bar = sqrt(|wbar| / |vbar|) per pair, rho_i = sqrt(|w_i| / |e_i|) with |e_i| = 1."""
    vbar, wbar = state.vbar, state.wbar
    return pair_and_row_scalings(vbar, wbar, state.rows, NormPair.euclidean(vbar.shape[1], wbar.shape[1]))


def unit_scalings(state: NbtState) -> Tuple[np.ndarray, np.ndarray]:
    return np.ones(state.rank), np.ones(state.vbar.shape[1])


def row_covariance_diag(rows: ParamRows, cov: InverseCovariance) -> np.ndarray:
    """|w_i|_C^2 = w_i^T C w_i for every row, C = (J + Lambda)^-1."""
    return rows.quad_norms(cov.solve(rows.values))


def state_covariance_diag(
    state: NbtState,
    cov: InverseCovariance,
    row_sq: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Diag(G~_k C G~_k^T) per pair, C = (J + Lambda)^-1, in O(dim theta).

    Row i of G~_k is vbar_k[i] wbar_k + w_i, so the diagonal entry expands into
    vbar_i^2 |wbar|_C^2 + 2 vbar_i <wbar, w_i>_C + |w_i|_C^2. The last two terms
    need no coupling across units, which both covariance structures guarantee.
    """
    c_wbar = cov.solve(state.wbar)
    wbar_sq = np.sum(state.wbar * c_wbar, axis=1)
    diag = state.vbar ** 2 * wbar_sq[:, None]
    if state.rows is not None:
        rows = state.rows
        if row_sq is None:
            row_sq = row_covariance_diag(rows, cov)
        cross = np.stack([
            np.bincount(rows.owner, weights=rows.values * c, minlength=len(rows)) for c in c_wbar
        ])
        diag = diag + 2.0 * state.vbar * cross + row_sq[None, :]
    return diag


def state_metric(state: NbtState, cov: InverseCovariance) -> np.ndarray:
    """Diagonal J_h = Diag(G~ C G~^T)^-1 per pair, shape (K, n).

    Each diagonal entry is clipped to [1 / band, band] times |w_i|_C^2, so noise
    accumulated in vbar moves the metric by at most a factor STATE_METRIC_BAND.
    """
    if state.rows is None:
        return np.ones(state.vbar.shape)
    row_sq = row_covariance_diag(state.rows, cov)
    diag = state_covariance_diag(state, cov, row_sq)
    diag = np.clip(diag, row_sq / STATE_METRIC_BAND, row_sq * STATE_METRIC_BAND)
    return 1.0 / (diag + DELTA)


def invariant_norms(state: NbtState, cov: InverseCovariance) -> NormPair:
    """|v|^2 = v^T J_h v on states and |w|^2 = w^T C w on parameters."""
    return NormPair(DiagonalForm(state_metric(state, cov)), InverseForm(cov))


def invariant_scalings(state: NbtState, cov: InverseCovariance) -> Tuple[np.ndarray, np.ndarray]:
    """Reparameterization-invariant scalings from the filter covariance.

    rho_bar = (|wbar|_C^2 / |vbar|_{J_h}^2)^(1/4) and rho_i = (|w_i|_C^2 / J_h[i])^(1/4).
    """
    return pair_and_row_scalings(state.vbar, state.wbar, state.rows, invariant_norms(state, cov))


def reduce_state(state: NbtState, rho_bar: np.ndarray, rho_rows: np.ndarray, signs: np.ndarray) -> NbtState:
    """vbar <- rho_bar vbar + sum_i eps_i rho_i e_i, wbar <- wbar / rho_bar + sum_i eps_i w_i / rho_i."""
    if signs.shape != state.vbar.shape:
        raise ConfigError(f"expected signs of shape {state.vbar.shape}, got {signs.shape}")
    vbar = rho_bar[:, None] * state.vbar
    wbar = state.wbar / rho_bar[:, None]
    if state.rows is not None:
        vbar = vbar + signs * rho_rows
        wbar = wbar + state.rows.combine(signs / rho_rows)
    return NbtState(vbar, wbar, None)


def transition_state(
    state: NbtState,
    system: DynamicalSystem,
    h: np.ndarray,
    x: Optional[np.ndarray],
    theta: np.ndarray,
) -> Tuple[NbtState, np.ndarray]:
    """vbar <- df/dh vbar, w_i <- df_i/dtheta, h <- f(h, x, theta)."""
    if state.rows is not None:
        raise ConfigError("transition requires a reduced state (rows must be empty)")
    vbar = system.apply_jacobian(h, theta, state.vbar)
    rows = system.param_rows(h, x, theta)
    return NbtState(vbar, state.wbar, rows), system.step(h, x, theta)


def scalings_for(mode: str, state: NbtState, cov: Optional[InverseCovariance] = None):
    if mode == "optimal":
        return euclidean_scalings(state)
    if mode == "none":
        return unit_scalings(state)
    if mode == "invariant":
        if cov is None:
            raise ConfigError("invariant scalings need an inverse covariance")
        return invariant_scalings(state, cov)
    raise ConfigError(f"unknown scaling mode {mode!r}, expected one of {SCALING_MODES}")


@dataclass
class StepResult:
    state: NbtState
    theta: np.ndarray
    phi: np.ndarray
    h: np.ndarray
    loss: float


def nbt_euclid_step(
    state: NbtState,
    theta: np.ndarray,
    phi: np.ndarray,
    h: np.ndarray,
    x: Optional[np.ndarray],
    y: int,
    sched: TrainingSchedule,
    rng: np.random.Generator,
    *,
    t: int,
    system: DynamicalSystem,
    readout: SoftmaxReadout,
    scaling: str = "optimal",
) -> StepResult:
    """One tick of the Euclidean NoBackTrack algorithm; x is the input of the transition."""
    obs = readout.observe(h, phi, y)
    eta = sched.eta(t)
    direction = update_direction(state, obs.grad_h)
    if eta:
        phi = phi - eta * obs.grad_phi
        theta = theta - eta * direction

    rho_bar, rho_rows = scalings_for(scaling, state)
    state = reduce_state(state, rho_bar, rho_rows, draw_signs(rng, state.vbar.shape))

    state, h = transition_state(state, system, h, x, theta)
    check_finite(t, h=h, theta=theta, phi=phi)
    check_estimate(t, state)
    return StepResult(state, theta, phi, h, obs.loss)


def nbt_kalman_step(
    state: NbtState,
    theta: np.ndarray,
    phi: np.ndarray,
    h: np.ndarray,
    x: Optional[np.ndarray],
    y: int,
    cov_theta: InverseCovariance,
    cov_phi: InverseCovariance,
    sched: TrainingSchedule,
    rng: np.random.Generator,
    *,
    t: int,
    system: DynamicalSystem,
    readout: SoftmaxReadout,
    scaling: str = "invariant",
) -> StepResult:
    """One tick of the Kalman NoBackTrack algorithm; updates cov_theta and cov_phi in place."""
    obs = readout.observe(h, phi, y)
    direction = update_direction(state, obs.grad_h)
    if not sched.frozen:
        gamma = sched.gamma(t)
        phi = phi + filter_step(cov_phi, obs.grad_phi, gamma)
        theta = theta + filter_step(cov_theta, direction, gamma)

    rho_bar, rho_rows = scalings_for(scaling, state, cov_theta)
    state = reduce_state(state, rho_bar, rho_rows, draw_signs(rng, state.vbar.shape))

    state, h = transition_state(state, system, h, x, theta)
    check_finite(t, h=h, theta=theta, phi=phi)
    check_estimate(t, state)
    return StepResult(state, theta, phi, h, obs.loss)


# ---------------------- truncated BPTT ---------------------- #


def bptt_window_gradient(
    system: DynamicalSystem,
    readout: SoftmaxReadout,
    theta: np.ndarray,
    phi: np.ndarray,
    h_start: np.ndarray,
    xs: Sequence[np.ndarray],
    ys: Sequence[int],
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Forward through the window from a constant h_start, then one backward pass.

    Returns (loss sum, dL/dtheta, dL/dphi, final state).
    """
    states = [np.asarray(h_start, dtype=float)]
    for x in xs:
        states.append(system.step(states[-1], x, theta))

    loss = 0.0
    grad_phi = np.zeros(readout.param_dim)
    grad_h = []
    for k, y in enumerate(ys):
        obs = readout.observe(states[k + 1], phi, y)
        loss += obs.loss
        grad_phi += obs.grad_phi
        grad_h.append(obs.grad_h)

    grad_theta = np.zeros(system.param_dim)
    u = np.zeros(system.state_dim)
    for k in reversed(range(len(ys))):
        u = u + grad_h[k]
        grad_theta += system.param_rows(states[k], xs[k], theta).combine(u)
        u = system.apply_jacobian_transpose(states[k], theta, u)
    return loss, grad_theta, grad_phi, states[-1]


# ---------------------- trainers ---------------------- #


class OnlineTrainer(ABC):
    """Owns the parameters and the current state of one training run."""

    name = "trainer"

    def __init__(
        self,
        system: DynamicalSystem,
        readout: SoftmaxReadout,
        theta: np.ndarray,
        phi: np.ndarray,
        schedule: TrainingSchedule,
        rng: np.random.Generator,
        start_input: Optional[np.ndarray],
    ):
        self.system = system
        self.readout = readout
        self.theta = system.flat(theta).copy()
        self.phi = np.asarray(phi, dtype=float).copy()
        if self.phi.shape != (readout.param_dim,):
            raise ConfigError(f"output parameter vector has shape {self.phi.shape}, expected ({readout.param_dim},)")
        if readout.n_units != system.state_dim:
            raise ConfigError(f"readout expects {readout.n_units} units, system has {system.state_dim}")
        self.schedule = schedule
        self.rng = rng
        self.t = 0
        self.h = np.zeros(system.state_dim)
        self._prime(start_input)

    @abstractmethod
    def _prime(self, x: Optional[np.ndarray]) -> None:
        """First transition from h = 0 on the start-of-stream input."""

    @abstractmethod
    def tick(self, y: int, x: Optional[np.ndarray]) -> float:
        """Observe y at the current state, learn, then transition on x; returns the loss in bits."""


class Rtrl(OnlineTrainer):
    name = "rtrl"

    def _prime(self, x):
        G = np.zeros((self.system.state_dim, self.system.param_dim))
        self.G = rtrl_step(G, self.h, x, self.theta, self.system)
        self.h = self.system.step(self.h, x, self.theta)

    def _learn(self, obs) -> None:
        eta = self.schedule.eta(self.t)
        if eta:
            self.phi = self.phi - eta * obs.grad_phi
            self.theta = self.theta - eta * (self.G.T @ obs.grad_h)

    def tick(self, y, x):
        obs = self.readout.observe(self.h, self.phi, y)
        self._learn(obs)
        self.G = rtrl_step(self.G, self.h, x, self.theta, self.system)
        self.h = self.system.step(self.h, x, self.theta)
        check_finite(self.t, h=self.h, theta=self.theta, phi=self.phi, G=self.G)
        self.t += 1
        return obs.loss


class KalmanRtrl(Rtrl):
    name = "kalman-rtrl"

    def _prime(self, x):
        self.cov_theta, self.cov_phi = _filter_covariances(self.system, self.readout, self.schedule)
        super()._prime(x)

    def _learn(self, obs) -> None:
        if self.schedule.frozen:
            return
        gamma = self.schedule.gamma(self.t)
        self.phi = self.phi + filter_step(self.cov_phi, obs.grad_phi, gamma)
        self.theta = self.theta + filter_step(self.cov_theta, self.G.T @ obs.grad_h, gamma)


class NbtEuclid(OnlineTrainer):
    name = "nbt-euclid"
    scaling = "optimal"

    def _prime(self, x):
        state = NbtState.initial(self.system.state_dim, self.system.param_dim, self.schedule.rank)
        self.state, self.h = transition_state(state, self.system, self.h, x, self.theta)

    def _apply(self, result: StepResult) -> float:
        self.state, self.theta, self.phi, self.h = result.state, result.theta, result.phi, result.h
        self.t += 1
        return result.loss

    def tick(self, y, x):
        return self._apply(nbt_euclid_step(
            self.state, self.theta, self.phi, self.h, x, y, self.schedule, self.rng,
            t=self.t, system=self.system, readout=self.readout, scaling=self.scaling,
        ))


class NbtKalman(NbtEuclid):
    name = "nbt-kalman"
    scaling = "invariant"

    def _prime(self, x):
        self.cov_theta, self.cov_phi = _filter_covariances(self.system, self.readout, self.schedule)
        super()._prime(x)

    def tick(self, y, x):
        return self._apply(nbt_kalman_step(
            self.state, self.theta, self.phi, self.h, x, y, self.cov_theta, self.cov_phi,
            self.schedule, self.rng, t=self.t, system=self.system, readout=self.readout, scaling=self.scaling,
        ))


class TruncatedBptt(OnlineTrainer):
    name = "tbptt"

    def _prime(self, x):
        self.window_start = self.h.copy()
        self.inputs: List[Optional[np.ndarray]] = [x]
        self.targets: List[int] = []
        self.h = self.system.step(self.h, x, self.theta)

    def tick(self, y, x):
        obs = self.readout.observe(self.h, self.phi, y)
        self.targets.append(y)
        if len(self.targets) == self.schedule.truncation:
            _, grad_theta, grad_phi, _ = bptt_window_gradient(
                self.system, self.readout, self.theta, self.phi, self.window_start, self.inputs, self.targets,
            )
            eta = self.schedule.eta(self.t)
            if eta:
                self.theta = self.theta - eta * grad_theta
                self.phi = self.phi - eta * grad_phi
            self.window_start = self.h.copy()
            self.inputs, self.targets = [], []
        self.inputs.append(x)
        self.h = self.system.step(self.h, x, self.theta)
        check_finite(self.t, h=self.h, theta=self.theta, phi=self.phi)
        self.t += 1
        return obs.loss


def _filter_covariances(system: DynamicalSystem, readout: SoftmaxReadout, schedule: TrainingSchedule):
    prior = schedule.prior(system.state_dim)
    cov_theta = make_covariance(system.param_dim, prior, system.padded_groups(), schedule.matrix_reduce)
    cov_phi = make_covariance(readout.param_dim, prior, readout.padded_groups(), schedule.matrix_reduce)
    return cov_theta, cov_phi


ALGORITHMS: Dict[str, Type[OnlineTrainer]] = {
    cls.name: cls for cls in (Rtrl, NbtEuclid, NbtKalman, KalmanRtrl, TruncatedBptt)
}


def make_trainer(
    algorithm: str,
    system: DynamicalSystem,
    readout: SoftmaxReadout,
    theta: np.ndarray,
    phi: np.ndarray,
    schedule: TrainingSchedule,
    rng: np.random.Generator,
    start_input: Optional[np.ndarray],
) -> OnlineTrainer:
    try:
        cls = ALGORITHMS[algorithm]
    except KeyError:
        raise ConfigError(f"unknown algorithm {algorithm!r}, expected one of {sorted(ALGORITHMS)}") from None
    return cls(system, readout, theta, phi, schedule, rng, start_input)


@dataclass
class TrainResult:
    theta: np.ndarray
    phi: np.ndarray
    losses: np.ndarray = field(repr=False)


def train(trainer: OnlineTrainer, symbols: Iterable[int], encode) -> TrainResult:
    """Run a trainer over symbol indices; `encode` maps a symbol to the next input vector."""
    losses = [trainer.tick(y, encode(y)) for y in symbols]
    return TrainResult(trainer.theta, trainer.phi, np.array(losses))


def tbptt_train(
    symbols: Iterable[int],
    T: int,
    sched: TrainingSchedule,
    theta: np.ndarray,
    phi: np.ndarray,
    system: DynamicalSystem,
    readout: SoftmaxReadout,
    encode,
    start_input: Optional[np.ndarray],
) -> TrainResult:
    sched = replace(sched, truncation=T)
    trainer = TruncatedBptt(system, readout, theta, phi, sched, np.random.default_rng(0), start_input)
    return train(trainer, symbols, encode)


def kalman_rtrl_train(
    symbols: Iterable[int],
    sched: TrainingSchedule,
    theta: np.ndarray,
    phi: np.ndarray,
    system: DynamicalSystem,
    readout: SoftmaxReadout,
    encode,
    start_input: Optional[np.ndarray],
) -> TrainResult:
    trainer = KalmanRtrl(system, readout, theta, phi, sched, np.random.default_rng(0), start_input)
    return train(trainer, symbols, encode)
