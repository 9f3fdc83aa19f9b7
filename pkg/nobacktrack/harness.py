#!/usr/bin/env python3
"""
NoBackTrack experiment harness

Command-line entry point: generates a^n b^n corpora, trains any of the five
online algorithms on a character stream while writing the loss curve as CSV,
runs the self-check oracles and launches concurrent sweeps.

Exit codes: 0 success, 1 divergence, 2 configuration or dataset error,
3 failed self-check.
"""
import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from .data import CharStream, entropy_rate_anbn, entropy_rate_anbp, gen_anbn, load_text, make_rng
from .dynsys import DynamicalSystem, RecurrentNetwork, leaky_rnn
from .errors import CheckFailure, ConfigError, DatasetError, DivergenceError
from .estimators import ALGORITHMS, MATRIX_REDUCE_MODES, OnlineTrainer, TrainingSchedule, make_trainer
from .oracles import run_checks
from .readout import LN2, SoftmaxReadout

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DIVERGENCE = 1
EXIT_CONFIG = 2
EXIT_CHECK = 3

MODELS = ("rnn", "lrnn")
NBT_ALGORITHMS = ("nbt-euclid", "nbt-kalman")
DEFAULT_RANK = 1
DEFAULT_TRUNCATION = 15
CSV_COLUMNS = ["chars_read", "avg_loss_bits", "wall_seconds"]
AUTO_BASELINES = {"entropy": entropy_rate_anbn, "entropy_anbp": entropy_rate_anbp}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one training run (echoed into every CSV)."""

    algorithm: str = "nbt-kalman"
    model: str = "lrnn"
    n_units: int = 20
    activation: str = "tanh"
    rank: Optional[int] = None
    truncation: Optional[int] = None
    eta0: float = float(LN2)
    gamma_c: float = 1.0
    prior_scale: Optional[float] = None
    matrix_reduce: str = "diagonal"
    seed: int = 0
    data: str = "anbn"
    anbn_k: int = 1
    anbn_l: int = 32
    cycle: bool = False
    report_every: int = 1000
    max_chars: int = 100000
    max_seconds: Optional[float] = None
    frozen: bool = False
    baselines: Tuple[Tuple[str, float], ...] = ()
    omit_wall_time: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}, expected one of {sorted(ALGORITHMS)}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}, expected one of {MODELS}")
        if self.rank is not None and self.algorithm not in NBT_ALGORITHMS:
            raise ConfigError(f"rank only applies to {NBT_ALGORITHMS}, not {self.algorithm}")
        if self.truncation is not None and self.algorithm != "tbptt":
            raise ConfigError(f"truncation only applies to tbptt, not {self.algorithm}")
        if self.matrix_reduce not in MATRIX_REDUCE_MODES:
            raise ConfigError(f"matrix reduce must be one of {MATRIX_REDUCE_MODES}, got {self.matrix_reduce!r}")
        if self.n_units < 1:
            raise ConfigError(f"n_units must be >= 1, got {self.n_units}")
        if self.report_every < 1:
            raise ConfigError(f"report interval must be >= 1, got {self.report_every}")
        if self.max_chars < 0:
            raise ConfigError(f"max chars must be >= 0, got {self.max_chars}")
        if self.max_seconds is not None and self.max_seconds <= 0:
            raise ConfigError(f"max seconds must be > 0, got {self.max_seconds}")
        if self.eta0 < 0:
            raise ConfigError(f"eta0 must be >= 0, got {self.eta0}")
        # schedule-level ranges (rank >= 1, T >= 1, gamma, prior) are checked here too
        self.schedule()

    @property
    def is_anbn(self) -> bool:
        return self.data == "anbn"

    def schedule(self) -> TrainingSchedule:
        return TrainingSchedule(
            eta0=self.eta0,
            gamma_c=self.gamma_c,
            prior_scale=self.prior_scale,
            rank=DEFAULT_RANK if self.rank is None else self.rank,
            truncation=DEFAULT_TRUNCATION if self.truncation is None else self.truncation,
            matrix_reduce=self.matrix_reduce,
            frozen=self.frozen,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class LossTrace:
    """Rows of (chars read, running average loss in bits, seconds since start)."""

    baselines: Dict[str, float] = field(default_factory=dict)
    rows: List[Tuple[int, float, float]] = field(default_factory=list)

    def add(self, chars_read: int, avg_loss: float, wall_seconds: float) -> None:
        if self.rows and chars_read <= self.rows[-1][0]:
            raise ValueError(f"chars_read must increase, got {chars_read} after {self.rows[-1][0]}")
        self.rows.append((chars_read, avg_loss, wall_seconds))

    @property
    def final_loss(self) -> float:
        return self.rows[-1][1] if self.rows else float("nan")

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.rows, columns=CSV_COLUMNS)
        df["chars_read"] = df["chars_read"].astype(np.int64)
        for name, value in self.baselines.items():
            df[f"baseline_{name}"] = value
        return df

    def write(self, out: Union[str, Path, TextIO], config: Optional[RunConfig] = None) -> None:
        """CSV with a leading `# config:` comment line when a config is given."""
        if isinstance(out, (str, Path)):
            with open(out, "w", newline="") as f:
                self.write(f, config)
            return
        if config is not None:
            out.write(f"# config: {config.to_json()}\n")
        self.to_frame().to_csv(out, index=False, float_format="%.10g", lineterminator="\n")
        out.flush()


def read_trace(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


# ---------------------- run assembly ---------------------- #


def load_stream(config: RunConfig, seed) -> CharStream:
    if config.is_anbn:
        return gen_anbn(config.anbn_k, config.anbn_l, config.max_chars, seed)
    return load_text(config.data, cycle=config.cycle)


def build_system(config: RunConfig, n_inputs: int, rng: np.random.Generator) -> DynamicalSystem:
    if config.model == "lrnn":
        return leaky_rnn(config.n_units, n_inputs, rng, activation=config.activation)
    return RecurrentNetwork(config.n_units, n_inputs, activation=config.activation)


def build_run(config: RunConfig) -> Tuple[CharStream, OnlineTrainer]:
    """Stream plus a primed trainer; data, initialization and signs use independent seeded streams."""
    data_seed, init_seed, sign_seed = np.random.SeedSequence(config.seed).spawn(3)
    stream = load_stream(config, data_seed)
    init_rng = make_rng(init_seed)
    system = build_system(config, stream.input_dim, init_rng)
    readout = SoftmaxReadout(config.n_units, stream.n_symbols, config.activation)
    trainer = make_trainer(
        config.algorithm,
        system,
        readout,
        system.init_params(init_rng),
        readout.init_params(),
        config.schedule(),
        make_rng(sign_seed),
        stream.start_input(),
    )
    logger.info(
        f"{config.algorithm} on {config.model} with {config.n_units} units: "
        f"dim theta = {system.param_dim}, alphabet of {stream.n_symbols} symbols"
    )
    return stream, trainer


def resolve_baselines(specs: Sequence[str], data: str, k: int, l: int) -> Tuple[Tuple[str, float], ...]:
    """Parse NAME=VALUE pairs; `entropy=auto` and `entropy_anbp=auto` use the a^n b^n rates."""
    out = []
    for spec in specs:
        name, sep, value = spec.partition("=")
        if not sep or not name:
            raise ConfigError(f"baseline must look like NAME=VALUE, got {spec!r}")
        if value == "auto":
            if name not in AUTO_BASELINES:
                raise ConfigError(f"no automatic value for baseline {name!r}; known: {sorted(AUTO_BASELINES)}")
            if data != "anbn":
                raise ConfigError(f"baseline {name}=auto needs the a^n b^n dataset")
            out.append((name, AUTO_BASELINES[name](k, l)))
            continue
        try:
            out.append((name, float(value)))
        except ValueError:
            raise ConfigError(f"baseline {name!r} has non-numeric value {value!r}") from None
    return tuple(out)


# ---------------------- commands ---------------------- #


def cmd_train(config: RunConfig, out: Union[str, Path, TextIO, None] = None) -> LossTrace:
    """Train one run and write its trace; on divergence the rows so far are written before re-raising."""
    stream, trainer = build_run(config)
    trace = LossTrace(dict(config.baselines))
    start = time.monotonic()
    total, t = 0.0, 0
    finished = False
    try:
        for y in stream.take(config.max_chars).tolist():
            total += trainer.tick(y, stream.input_vector(y))
            t += 1
            elapsed = time.monotonic() - start
            if t % config.report_every == 0:
                trace.add(t, total / t, 0.0 if config.omit_wall_time else elapsed)
                logger.info(f"Read {t} chars, average loss {total / t:.4f} bits/char")
            if config.max_seconds is not None and elapsed >= config.max_seconds:
                logger.info(f"Wall-time cap of {config.max_seconds}s reached after {t} chars")
                break
        finished = True
    except KeyboardInterrupt:
        logger.info("Run interrupted by user")
    finally:
        if finished and t and (not trace.rows or trace.rows[-1][0] < t):
            elapsed = time.monotonic() - start
            trace.add(t, total / t, 0.0 if config.omit_wall_time else elapsed)
        trace.write(sys.stdout if out is None else out, config)
    if trace.rows:
        logger.info(f"Finished after {t} chars, final average loss {trace.final_loss:.4f} bits/char")
    return trace


def cmd_gen_anbn(k: int, l: int, chars: int, seed: int, out_path: Union[str, Path]) -> Path:
    stream = gen_anbn(k, l, chars, seed)
    out_path = Path(out_path)
    try:
        stream.write(out_path)
    except OSError as e:
        raise DatasetError(f"cannot write {out_path}: {e}") from e
    logger.info(f"Wrote {len(stream)} bytes of a^n b^n [{k}, {l}] to {out_path}")
    return out_path


def cmd_check(seed: int = 0, corrupt: Optional[str] = None, out: Optional[TextIO] = None) -> List:
    """Run every oracle, print one summary line per check and raise CheckFailure if any failed."""
    out = out or sys.stdout
    results = run_checks(seed, corrupt)
    for r in results:
        status = "pass" if r.passed else "fail"
        out.write(f"check={r.name} status={status} observed={r.observed:.3e} expected={r.expected}\n")
    out.flush()
    failures = [(r.name, r.observed, r.expected) for r in results if not r.passed]
    if failures:
        raise CheckFailure(failures)
    logger.info(f"All {len(results)} checks passed")
    return results


def _run_one(config: RunConfig, path: Path) -> Tuple[str, int, float]:
    try:
        trace = cmd_train(config, path)
    except DivergenceError as e:
        logger.error(f"{config.algorithm} seed {config.seed} diverged: {e}")
        return config.algorithm, config.seed, float("nan")
    return config.algorithm, config.seed, trace.final_loss


def cmd_sweep(configs: Sequence[RunConfig], out_dir: Union[str, Path], workers: Optional[int] = None) -> pd.DataFrame:
    """Run independent configs in a process pool, one CSV each; returns the per-run final losses."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / f"{c.algorithm}-{c.model}-n{c.n_units}-seed{c.seed}.csv" for c in configs]
    logger.info(f"Launching {len(configs)} runs into {out_dir}")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_run_one, configs, paths))
    return pd.DataFrame(results, columns=["algorithm", "seed", "final_loss"])


def summarize_sweep(runs: pd.DataFrame) -> pd.DataFrame:
    """Seed-averaged final loss per algorithm, best first."""
    summary = runs.groupby("algorithm")["final_loss"].agg(["mean", "std", "count"])
    return summary.sort_values("mean")


# ---------------------- CLI ---------------------- #


def setup_logging() -> None:
    level_name = os.environ.get("NOBACKTRACK_LOG_LEVEL", "INFO").upper()
    level = getattr(logging, level_name, None)
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    log_file = os.environ.get("NOBACKTRACK_LOG_FILE")
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=level if isinstance(level, int) else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )
    if not isinstance(level, int):
        logger.warning(f"Unknown NOBACKTRACK_LOG_LEVEL {level_name!r}, using INFO")


def add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--model', choices=MODELS, default='lrnn', help='Plain (rnn) or leaky (lrnn) recurrent network')
    parser.add_argument('--units', type=int, default=20, help='Number of recurrent units')
    parser.add_argument('--activation', choices=['tanh', 'sigmoid'], default='tanh', help='Unit activation')
    parser.add_argument('--rank', type=int, help=f'NoBackTrack rank K (NBT only, default {DEFAULT_RANK})')
    parser.add_argument('--truncation', type=int, help=f'BPTT window T (tbptt only, default {DEFAULT_TRUNCATION})')
    parser.add_argument('--eta0', type=float, default=float(LN2), help='Base learning rate on bits gradients, eta_t = eta0 / sqrt(t) (default ln 2, a 1/sqrt(t) step in nats)')
    parser.add_argument('--gamma-c', type=float, default=1.0, help='Covariance decay constant, gamma_t = min(0.99, c / sqrt(t))')
    parser.add_argument('--prior-scale', type=float, help='Prior inverse covariance scale (default: number of units)')
    parser.add_argument('--matrix-reduce', choices=MATRIX_REDUCE_MODES, default='diagonal', help='Structure of the Kalman inverse covariance')
    parser.add_argument('--data', default='anbn', help="'anbn' or a path to a text file")
    parser.add_argument('--anbn-k', type=int, default=1, help='Smallest a^n b^n block count')
    parser.add_argument('--anbn-l', type=int, default=32, help='Largest a^n b^n block count')
    parser.add_argument('--cycle', action='store_true', help='Cycle over the text file')
    parser.add_argument('--report-every', type=int, default=1000, help='Trace row interval in characters')
    parser.add_argument('--max-chars', type=int, default=100000, help='Number of characters to train on')
    parser.add_argument('--max-seconds', type=float, help='Stop after this much wall time (equal-time comparisons)')
    parser.add_argument('--frozen', action='store_true', help='Disable every parameter update')
    parser.add_argument('--baseline', action='append', default=[], metavar='NAME=VALUE',
                        help='Constant baseline column; entropy=auto uses the a^n b^n entropy rate (repeatable)')
    parser.add_argument('--omit-wall-time', action='store_true', help='Write 0 for wall_seconds (byte-identical reruns)')


def config_from_args(args: argparse.Namespace, algorithm: str, seed: int) -> RunConfig:
    is_nbt = algorithm in NBT_ALGORITHMS
    return RunConfig(
        algorithm=algorithm,
        model=args.model,
        n_units=args.units,
        activation=args.activation,
        rank=args.rank if is_nbt or args.command == 'train' else None,
        truncation=args.truncation if algorithm == 'tbptt' or args.command == 'train' else None,
        eta0=args.eta0,
        gamma_c=args.gamma_c,
        prior_scale=args.prior_scale,
        matrix_reduce=args.matrix_reduce,
        seed=seed,
        data=args.data,
        anbn_k=args.anbn_k,
        anbn_l=args.anbn_l,
        cycle=args.cycle,
        report_every=args.report_every,
        max_chars=args.max_chars,
        max_seconds=args.max_seconds,
        frozen=args.frozen,
        baselines=resolve_baselines(args.baseline, args.data, args.anbn_k, args.anbn_l),
        omit_wall_time=args.omit_wall_time,
    )


def run_train(args: argparse.Namespace) -> int:
    config = config_from_args(args, args.algorithm, args.seed)
    cmd_train(config, args.output)
    return EXIT_OK


def run_gen_anbn(args: argparse.Namespace) -> int:
    cmd_gen_anbn(args.k, args.l, args.chars, args.seed, args.output)
    return EXIT_OK


def run_check(args: argparse.Namespace) -> int:
    cmd_check(args.seed, args.corrupt)
    return EXIT_OK


def run_sweep(args: argparse.Namespace) -> int:
    configs = [config_from_args(args, a, s) for a in args.algorithms for s in args.seeds]
    runs = cmd_sweep(configs, args.out_dir, args.workers)
    summary = summarize_sweep(runs)
    print(summary.to_string(float_format=lambda v: f"{v:.4f}"))
    if runs["final_loss"].isna().any():
        logger.error("At least one run diverged")
        return EXIT_DIVERGENCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Online training of recurrent networks with NoBackTrack, RTRL and truncated BPTT')
    sub = parser.add_subparsers(dest='command', required=True)

    train = sub.add_parser('train', help='Train one run and write its loss curve as CSV')
    train.add_argument('--algorithm', choices=sorted(ALGORITHMS), default='nbt-kalman', help='Training algorithm')
    train.add_argument('--seed', type=int, default=0, help='Seed for data, initialization and random signs')
    train.add_argument('--output', help='CSV output path (default: standard output)')
    add_run_arguments(train)
    train.set_defaults(func=run_train)

    gen = sub.add_parser('gen-anbn', help='Write an a^n b^n corpus')
    gen.add_argument('--k', type=int, default=1, help='Smallest block count')
    gen.add_argument('--l', type=int, default=32, help='Largest block count')
    gen.add_argument('--chars', type=int, default=1000000, help='Minimum number of bytes')
    gen.add_argument('--seed', type=int, default=0, help='Generator seed')
    gen.add_argument('--output', required=True, help='Output file path')
    gen.set_defaults(func=run_gen_anbn)

    check = sub.add_parser('check', help='Run gradient, enumeration and unbiasedness self-checks')
    check.add_argument('--seed', type=int, default=0, help='Seed for the random test instances')
    check.add_argument('--corrupt', choices=['jacobian_state'], help='Test hook: deliberately perturb a component')
    check.set_defaults(func=run_check)

    sweep = sub.add_parser('sweep', help='Run several algorithms and seeds concurrently')
    sweep.add_argument('--algorithms', nargs='+', choices=sorted(ALGORITHMS), default=['nbt-kalman', 'tbptt'], help='Algorithms to compare')
    sweep.add_argument('--seeds', nargs='+', type=int, default=[0, 1, 2], help='Seeds per algorithm')
    sweep.add_argument('--workers', type=int, help='Worker processes (default: CPU count)')
    sweep.add_argument('--out-dir', default='runs', help='Directory for the per-run CSV files')
    add_run_arguments(sweep)
    sweep.set_defaults(func=run_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        return args.func(args)
    except DivergenceError as e:
        logger.error(f"Run aborted: {e}", exc_info=True)
        return EXIT_DIVERGENCE
    except (ConfigError, DatasetError) as e:
        logger.error(f"{e}")
        return EXIT_CONFIG
    except CheckFailure as e:
        logger.error(f"{e}")
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
