"""
Character streams: the a^n b^n generator and a byte-level text loader.

Symbols are bytes. The alphabet of a stream is ordered by byte value and a
symbol is fed to the network as its one-hot vector followed by a zero
start-of-stream flag; the very first input is the flag alone.
"""
import logging
from pathlib import Path
from typing import Iterator, List, Optional, Union

import numpy as np

from .errors import ConfigError, DatasetError

logger = logging.getLogger(__name__)

ANBN_ALPHABET = b"\nab"


def make_rng(seed: Union[int, np.random.SeedSequence]) -> np.random.Generator:
    """Counter-based generator used for every seeded draw in the package."""
    return np.random.Generator(np.random.Philox(seed))


class CharStream:
    """A byte sequence over a fixed alphabet, optionally cycling."""

    def __init__(self, data: bytes, alphabet: Optional[bytes] = None, cycle: bool = False):
        self.data = bytes(data)
        present = sorted(set(self.data))
        if alphabet is None:
            alphabet = bytes(present)
        self.alphabet = bytes(sorted(set(alphabet)))
        missing = set(present) - set(self.alphabet)
        if missing:
            raise ConfigError(f"stream contains bytes outside its alphabet: {sorted(missing)}")
        if cycle and not self.data:
            raise DatasetError("cannot cycle over an empty stream")
        self.cycle = cycle
        self.position = 0
        self._index = {b: i for i, b in enumerate(self.alphabet)}
        lookup = np.full(256, -1, dtype=np.int64)
        lookup[list(self.alphabet)] = np.arange(len(self.alphabet))
        self._symbols = lookup[np.frombuffer(self.data, dtype=np.uint8)]

    def __len__(self) -> int:
        return len(self.data)

    @property
    def n_symbols(self) -> int:
        return len(self.alphabet)

    @property
    def input_dim(self) -> int:
        return self.n_symbols + 1

    def index(self, byte: int) -> int:
        try:
            return self._index[byte]
        except KeyError:
            raise ConfigError(f"byte {byte!r} is not in the alphabet") from None

    def encode(self, symbol: int) -> np.ndarray:
        """One-hot vector of length |alphabet| for a symbol index."""
        if not 0 <= symbol < self.n_symbols:
            raise ConfigError(f"symbol index {symbol} outside alphabet of size {self.n_symbols}")
        out = np.zeros(self.n_symbols)
        out[symbol] = 1.0
        return out

    def decode(self, one_hot: np.ndarray) -> int:
        return self.alphabet[int(np.argmax(one_hot))]

    def input_vector(self, symbol: Optional[int]) -> np.ndarray:
        """Network input: one-hot plus start flag; None gives the start-of-stream input."""
        out = np.zeros(self.input_dim)
        if symbol is None:
            out[-1] = 1.0
        else:
            out[: self.n_symbols] = self.encode(symbol)
        return out

    def start_input(self) -> np.ndarray:
        return self.input_vector(None)

    def symbol_at(self, pos: int) -> int:
        if self.cycle:
            return int(self._symbols[pos % len(self._symbols)])
        if not 0 <= pos < len(self._symbols):
            raise IndexError(f"position {pos} beyond stream of length {len(self._symbols)}")
        return int(self._symbols[pos])

    def take(self, n_chars: int) -> np.ndarray:
        """Next n_chars symbol indices from the current position (fewer at the end of a finite stream)."""
        if self.cycle:
            idx = (self.position + np.arange(n_chars)) % len(self._symbols)
        else:
            idx = np.arange(self.position, min(self.position + n_chars, len(self._symbols)))
        self.position += len(idx)
        return self._symbols[idx]

    def __iter__(self) -> Iterator[int]:
        while self.cycle or self.position < len(self._symbols):
            yield self.symbol_at(self.position)
            self.position += 1

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.data)


def _check_range(k: int, l: int) -> None:
    if not 1 <= k <= l:
        raise ConfigError(f"a^n b^n needs 1 <= k <= l, got k={k}, l={l}")


def gen_anbn(k: int, l: int, n_chars: int, seed: int) -> CharStream:
    """Blocks a^n \\n b^n \\n with n uniform on [k, l], whole blocks until at least n_chars bytes."""
    _check_range(k, l)
    if n_chars < 0:
        raise ConfigError(f"n_chars must be >= 0, got {n_chars}")
    rng = make_rng(seed)
    mean_block = l + k + 2
    parts: List[bytes] = []
    total = 0
    while total < n_chars:
        # draw in batches sized to the remaining length
        batch = max(1, (n_chars - total) // mean_block + 1)
        for n in rng.integers(k, l + 1, size=batch).tolist():
            parts.append(b"a" * n + b"\n" + b"b" * n + b"\n")
            total += 2 * n + 2
            if total >= n_chars:
                break
    logger.debug(f"generated {len(parts)} a^n b^n blocks ({total} bytes)")
    return CharStream(b"".join(parts), alphabet=ANBN_ALPHABET)


def entropy_rate_anbn(k: int, l: int) -> float:
    """log2(l - k + 1) bits per block over a mean block length of l + k + 2."""
    _check_range(k, l)
    return float(np.log2(l - k + 1) / (l + k + 2))


def entropy_rate_anbp(k: int, l: int) -> float:
    """Same block lengths with independent counts for a and b."""
    return 2.0 * entropy_rate_anbn(k, l)


def parse_anbn_blocks(data: bytes) -> List[int]:
    """Counts n of consecutive a^n \\n b^n \\n blocks; raises DatasetError on any malformed block."""
    counts = []
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    else:
        raise DatasetError("a^n b^n data must end with a line break")
    if len(lines) % 2:
        raise DatasetError("a^n b^n data has an unpaired line")
    for i in range(0, len(lines), 2):
        a_part, b_part = lines[i], lines[i + 1]
        n = len(a_part)
        if n == 0 or a_part != b"a" * n or b_part != b"b" * n:
            raise DatasetError(f"malformed block at line {i}: {a_part[:16]!r} / {b_part[:16]!r}")
        counts.append(n)
    return counts


def load_text(path: Union[str, Path], cycle: bool = False) -> CharStream:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    if not data:
        raise DatasetError(f"{path} is empty")
    stream = CharStream(data, cycle=cycle)
    logger.info(f"loaded {path}: {len(stream)} bytes, alphabet of {stream.n_symbols} symbols")
    return stream
