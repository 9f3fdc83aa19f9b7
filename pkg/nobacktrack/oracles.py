"""
Reference computations used by the `check` command and the test-suite.

Central finite differences, exhaustive sign enumeration and Monte-Carlo
averaging of the NoBackTrack estimate against exact RTRL.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .data import gen_anbn, make_rng, parse_anbn_blocks
from .dynsys import DynamicalSystem, RecurrentNetwork, ToySystem
from .estimators import (
    InverseCovariance,
    NbtState,
    bptt_window_gradient,
    reduce_state,
    rtrl_step,
    rtrl_total_gradient,
    scalings_for,
    state_covariance_diag,
    transition_state,
)
from .rankone import (
    RankOneDecomposition,
    average_dense,
    draw_signs,
    enumerate_signs,
    optimal_scalings,
    reduce,
    variance_hs,
)
from .readout import SoftmaxReadout, fisher_outer

logger = logging.getLogger(__name__)

FD_EPS = 1e-5


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def central_difference(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Jacobian of fn at x by central differences, shape fn(x).shape + x.shape."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        step = np.zeros_like(x)
        step.flat[k] = eps
        cols.append((np.asarray(fn(x + step)) - np.asarray(fn(x - step))) / (2.0 * eps))
    return np.stack(cols, axis=-1)


def sequence_loss(
    system: DynamicalSystem,
    readout: SoftmaxReadout,
    theta: np.ndarray,
    phi: np.ndarray,
    h0: np.ndarray,
    xs: Sequence[np.ndarray],
    ys: Sequence[int],
) -> float:
    h = np.asarray(h0, dtype=float)
    total = 0.0
    for x, y in zip(xs, ys):
        h = system.step(h, x, theta)
        total += readout.observe(h, phi, y).loss
    return total


def rtrl_jacobian(system: DynamicalSystem, theta: np.ndarray, h0: np.ndarray, xs: Sequence[np.ndarray]) -> np.ndarray:
    """Exact dh/dtheta after transitions on xs from a theta-independent h0."""
    G = np.zeros((system.state_dim, system.param_dim))
    h = np.asarray(h0, dtype=float)
    for x in xs:
        G = rtrl_step(G, h, x, theta, system)
        h = system.step(h, x, theta)
    return G


def nbt_frozen_trajectories(
    system: DynamicalSystem,
    theta: np.ndarray,
    h0: np.ndarray,
    xs: Sequence[np.ndarray],
    signs: np.ndarray,
    scaling: str = "optimal",
    cov: Optional[InverseCovariance] = None,
) -> NbtState:
    """Run len(signs) NoBackTrack trajectories side by side with frozen parameters.

    xs[0] drives the priming transition and each later input is preceded by
    one reduction, so `signs` has shape (K, len(xs) - 1, n).
    """
    K = signs.shape[0]
    state = NbtState.initial(system.state_dim, system.param_dim, K)
    state, h = transition_state(state, system, np.asarray(h0, dtype=float), xs[0], theta)
    for t, x in enumerate(xs[1:]):
        rho_bar, rho_rows = scalings_for(scaling, state, cov)
        state = reduce_state(state, rho_bar, rho_rows, signs[:, t, :])
        state, h = transition_state(state, system, h, x, theta)
    return state


def enumerate_nbt_mean(
    system: DynamicalSystem,
    theta: np.ndarray,
    h0: np.ndarray,
    xs: Sequence[np.ndarray],
    scaling: str = "optimal",
    cov: Optional[InverseCovariance] = None,
) -> np.ndarray:
    """Exact expectation of G~ over every sign sequence (2^(n * (len(xs) - 1)) trajectories)."""
    n, steps = system.state_dim, len(xs) - 1
    signs = enumerate_signs(n * steps).reshape(-1, steps, n)
    return nbt_frozen_trajectories(system, theta, h0, xs, signs, scaling, cov).estimate()


@dataclass
class MonteCarloEstimate:
    mean: np.ndarray
    std_error: np.ndarray
    runs: int


def monte_carlo_nbt(
    system: DynamicalSystem,
    theta: np.ndarray,
    h0: np.ndarray,
    xs: Sequence[np.ndarray],
    runs: int,
    rng: np.random.Generator,
    scaling: str = "optimal",
) -> MonteCarloEstimate:
    """Entrywise mean and standard error of G~ over independent sign trajectories."""
    n, steps = system.state_dim, len(xs) - 1
    signs = draw_signs(rng, (runs, steps, n))
    state = nbt_frozen_trajectories(system, theta, h0, xs, signs, scaling)
    # rows are shared, so only the rank-one parts vary across runs
    first = state.vbar.T @ state.wbar / runs
    second = (state.vbar ** 2).T @ (state.wbar ** 2) / runs
    var = np.maximum(second - first ** 2, 0.0) * runs / max(runs - 1, 1)
    return MonteCarloEstimate(state.estimate(), np.sqrt(var / runs), runs)


def exhaustive_reduction_mean(d: RankOneDecomposition, rho: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean of the reduced matrix over all 2^k sign vectors, optionally with arbitrary scalings."""
    signs = enumerate_signs(d.k)
    if rho is None:
        return average_dense([reduce(d, None, s) for s in signs])
    V = (signs * rho) @ d.vs
    W = (signs / rho) @ d.ws
    return V.T @ W / len(signs)


def exhaustive_variance(d: RankOneDecomposition, scaled: bool = True, rho: Optional[np.ndarray] = None) -> float:
    """E|A~ - A|_HS^2 by enumeration; unscaled means rho = 1, an explicit rho overrides both."""
    signs = enumerate_signs(d.k)
    if rho is None:
        rho = optimal_scalings(d) if scaled else np.ones(d.k)
    A = d.matrix()
    V = (signs * rho) @ d.vs
    W = (signs / rho) @ d.ws
    dev = V[:, :, None] * W[:, None, :] - A[None]
    return float(np.mean(np.sum(dev ** 2, axis=(1, 2))))


def random_decomposition(rng: np.random.Generator, k: int, n: int, m: int) -> RankOneDecomposition:
    return RankOneDecomposition(rng.normal(size=(k, n)), rng.normal(size=(k, m)))


def dense_state_covariance_diag(state: NbtState, cov: InverseCovariance) -> np.ndarray:
    C = np.linalg.inv(cov.dense())
    return np.stack([np.diag(G @ C @ G.T) for G in state.dense_estimates()])


def toy_weight_norms(
    n: int,
    alpha: float,
    steps: int,
    runs: int,
    rng: np.random.Generator,
    scaling: str = "optimal",
) -> Tuple[np.ndarray, np.ndarray]:
    """Run-averaged |wbar(t)|^2 and |wbar(t)| over `runs` toy-system trajectories, each of shape (steps,)."""
    system = ToySystem(n, alpha)
    theta = np.zeros(n)
    state = NbtState.initial(n, n, runs)
    state, h = transition_state(state, system, np.zeros(n), None, theta)
    mean_sq = np.empty(steps)
    mean_norm = np.empty(steps)
    for t in range(steps):
        rho_bar, rho_rows = scalings_for(scaling, state)
        signs = draw_signs(rng, (runs, n))
        state = reduce_state(state, rho_bar, rho_rows, signs)
        state, h = transition_state(state, system, h, None, theta)
        sq = np.sum(state.wbar ** 2, axis=1)
        mean_sq[t] = sq.mean()
        mean_norm[t] = np.sqrt(sq).mean()
    return mean_sq, mean_norm


def linear_fit(t: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Least-squares slope and R^2."""
    fit = stats.linregress(t, y)
    return float(fit.slope), float(fit.rvalue ** 2)


# ---------------------- self-check suite ---------------------- #


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: float
    expected: str


class CorruptedJacobian(DynamicalSystem):
    """Test hook: forwards to `inner` but perturbs every entry of df/dh."""

    def __init__(self, inner: DynamicalSystem, offset: float = 1e-3):
        self.inner = inner
        self.offset = offset
        self.state_dim = inner.state_dim
        self.input_dim = inner.input_dim
        self.param_dim = inner.param_dim
        super().__init__(inner.owner, inner.state_dim)

    def step(self, h, x, theta):
        return self.inner.step(h, x, theta)

    def jacobian_state(self, h, theta):
        return self.inner.jacobian_state(h, theta) + self.offset

    def param_rows(self, h, x, theta):
        return self.inner.param_rows(h, x, theta)


def small_problem(seed: int, n_units: int, n_symbols: int = 3, steps: int = 10):
    """Random RNN, readout and a `steps`-long sequence whose first input is the start flag."""
    rng = make_rng(seed)
    system = RecurrentNetwork(n_units, n_symbols + 1)
    readout = SoftmaxReadout(n_units, n_symbols)
    theta = system.init_params(rng)
    phi = rng.normal(0.0, 0.5, size=readout.param_dim)
    ys = rng.integers(0, n_symbols, size=steps).tolist()
    xs = [np.eye(n_symbols + 1)[-1]] + [np.eye(n_symbols + 1)[y] for y in ys[:-1]]
    h0 = rng.normal(0.0, 0.5, size=n_units)
    return system, readout, theta, phi, h0, xs, ys


def _below(name: str, observed: float, tol: float) -> CheckResult:
    return CheckResult(name, bool(observed < tol), observed, f"< {tol:g}")


def check_jacobian_state(system: DynamicalSystem, theta, h, x) -> CheckResult:
    fd = central_difference(lambda hh: system.step(hh, x, theta), h)
    return _below("jacobian_state", float(np.max(np.abs(system.jacobian_state(h, theta) - fd))), 1e-6)


def check_param_rows(system: DynamicalSystem, theta, h, x) -> CheckResult:
    fd = central_difference(lambda th: system.step(h, x, th), theta)
    return _below("param_rows", float(np.max(np.abs(system.param_rows(h, x, theta).to_dense() - fd))), 1e-6)


def check_readout(readout: SoftmaxReadout, phi, h, y) -> CheckResult:
    obs = readout.observe(h, phi, y)
    fd_phi = central_difference(lambda p: readout.observe(h, p, y).loss, phi)
    fd_h = central_difference(lambda hh: readout.observe(hh, phi, y).loss, h)
    err = max(relative_error(obs.grad_phi, fd_phi), relative_error(obs.grad_h, fd_h))
    return _below("readout_gradient", err, 1e-6)


def check_rtrl_gradient(system, readout, theta, phi, h0, xs, ys) -> CheckResult:
    _, grad, _ = rtrl_total_gradient(system, readout, theta, phi, h0, xs, ys)
    fd = central_difference(lambda th: sequence_loss(system, readout, th, phi, h0, xs, ys), theta)
    return _below("rtrl_gradient", relative_error(grad, fd), 1e-5)


def check_tbptt_window(system, readout, theta, phi, h0, xs, ys) -> CheckResult:
    _, g_rtrl, gphi_rtrl = rtrl_total_gradient(system, readout, theta, phi, h0, xs, ys)
    _, g_bptt, gphi_bptt, _ = bptt_window_gradient(system, readout, theta, phi, h0, xs, ys)
    err = max(relative_error(g_bptt, g_rtrl), relative_error(gphi_bptt, gphi_rtrl))
    return _below("tbptt_window", err, 1e-8)


def check_rank_one_enumeration(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for k in range(1, 13):
        d = random_decomposition(rng, k, 3, 4)
        worst = max(worst, float(np.max(np.abs(exhaustive_reduction_mean(d) - d.matrix()))))
    return _below("rank_one_enumeration", worst, 1e-12)


def check_nbt_enumeration(seed: int) -> CheckResult:
    rng = make_rng(seed)
    system = RecurrentNetwork(2, 2)
    theta = system.init_params(rng)
    xs = [rng.normal(size=system.input_dim) for _ in range(4)]
    h0 = rng.normal(size=system.state_dim)
    G = rtrl_jacobian(system, theta, h0, xs)
    mean = enumerate_nbt_mean(system, theta, h0, xs)
    return _below("nbt_enumeration", float(np.max(np.abs(mean - G))), 1e-12)


def check_variance_formula(rng: np.random.Generator, cases: int = 100) -> CheckResult:
    worst = 0.0
    for _ in range(cases):
        d = random_decomposition(rng, int(rng.integers(3, 7)), int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        scaled, unscaled = exhaustive_variance(d, True), exhaustive_variance(d, False)
        worst = max(
            worst,
            abs(scaled - variance_hs(d, True)) / max(1.0, scaled),
            abs(unscaled - variance_hs(d, False)) / max(1.0, unscaled),
        )
        if scaled > unscaled * (1 + 1e-12) + 1e-12:
            return CheckResult("variance_formula", False, scaled - unscaled, "scaled <= unscaled")
    return _below("variance_formula", worst, 1e-10)


def check_invariant_diag(seed: int) -> CheckResult:
    rng = make_rng(seed)
    system = RecurrentNetwork(3, 2)
    theta = system.init_params(rng)
    groups = system.padded_groups()
    cov = InverseCovariance(system.param_dim, 2.0, groups)
    for _ in range(5):
        cov.decay_add(fisher_outer(rng.normal(size=system.param_dim), groups), 0.3)
    state = NbtState(rng.normal(size=(2, 3)), rng.normal(size=(2, system.param_dim)),
                     system.param_rows(rng.normal(size=3), rng.normal(size=2), theta))
    err = float(np.max(np.abs(state_covariance_diag(state, cov) - dense_state_covariance_diag(state, cov))))
    return _below("invariant_diag", err, 1e-10)


def check_anbn_parser(seed: int, k: int = 1, l: int = 32) -> CheckResult:
    stream = gen_anbn(k, l, 20000, seed)
    counts = np.array(parse_anbn_blocks(stream.data))
    bad = int(np.sum((counts < k) | (counts > l)))
    return CheckResult("anbn_parser", bad == 0 and len(counts) > 0, float(bad), f"0 counts outside [{k}, {l}]")


def run_checks(seed: int = 0, corrupt: Optional[str] = None) -> List[CheckResult]:
    """Every self-check on small instances; `corrupt="jacobian_state"` perturbs df/dh."""
    system, readout, theta, phi, h0, xs, ys = small_problem(seed, n_units=5)
    if corrupt == "jacobian_state":
        system = CorruptedJacobian(system)
    elif corrupt is not None:
        raise ValueError(f"unknown corruption target {corrupt!r}")
    rng = make_rng(seed)
    results = [
        check_jacobian_state(system, theta, h0, xs[1]),
        check_param_rows(system, theta, h0, xs[1]),
        check_readout(readout, phi, h0, ys[0]),
        check_rtrl_gradient(system, readout, theta, phi, h0, xs, ys),
        check_tbptt_window(system, readout, theta, phi, h0, xs, ys),
        check_rank_one_enumeration(rng),
        check_nbt_enumeration(seed),
        check_variance_formula(rng),
        check_invariant_diag(seed),
        check_anbn_parser(seed),
    ]
    for r in results:
        logger.debug(f"check {r.name}: observed={r.observed:.3g} expected {r.expected}")
    return results
