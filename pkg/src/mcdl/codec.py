"""Conditional arithmetic coding of subset configurations.

Encodes x_U given x_boundary under a model's conditional distribution,
visiting sites in ascending order and coding each spin with its sequential
conditional probability.  The decoder rebuilds the identical sequence of
coding distributions from the boundary and the spins decoded so far, so the
roundtrip is exact and the emitted length tracks the negative log-likelihood
to within a few bits.

Coder: 32-bit low/high register arithmetic coder with underflow (middle
straddle) counting and carry-free bit output.  Per-symbol probabilities are
quantized to a 30-bit integer total with a floor of one count per symbol;
encoder and decoder quantize identically, so clamping never breaks
losslessness.  Termination emits the disambiguating quarter plus pending
underflow bits, which keeps the emitted dyadic interval inside the final
coding range; the total overhead stays well under the 16-bit budget.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .graph import SubsetGeometry, Tractability
from .model import PairwiseModel, as_spins
from .inference import IntractableSubsetError, SequentialConditioner, fold_boundary

STATE_BITS = 32
FULL = 1 << STATE_BITS          # register span
HALF = FULL >> 1
QUARTER = FULL >> 2
MASK = FULL - 1
PROB_BITS = 30
PROB_TOTAL = 1 << PROB_BITS     # <= QUARTER + 2, the coder's total limit


class DigestMismatchError(ValueError):
    """Decoder inputs do not match what the stream was encoded with."""


def quantize_plus(p_plus: float) -> int:
    """Integer frequency of spin +1 out of PROB_TOTAL, floored at 1."""
    f = int(round(p_plus * PROB_TOTAL))
    return min(max(f, 1), PROB_TOTAL - 1)


class _BitWriter:
    def __init__(self):
        self.buffer = bytearray()
        self.current = 0
        self.filled = 0
        self.bit_count = 0

    def write(self, bit: int) -> None:
        self.current = (self.current << 1) | bit
        self.filled += 1
        self.bit_count += 1
        if self.filled == 8:
            self.buffer.append(self.current)
            self.current = 0
            self.filled = 0

    def getvalue(self) -> bytes:
        out = bytearray(self.buffer)
        if self.filled:
            out.append(self.current << (8 - self.filled))
        return bytes(out)


class _BitReader:
    """Big-endian bit reader; past-the-end reads return zeros."""

    def __init__(self, data: bytes, bit_count: int):
        self.data = data
        self.bit_count = bit_count
        self.position = 0

    def read(self) -> int:
        if self.position >= self.bit_count:
            return 0
        byte = self.data[self.position >> 3]
        bit = (byte >> (7 - (self.position & 7))) & 1
        self.position += 1
        return bit


class ArithmeticEncoder:
    def __init__(self):
        self.low = 0
        self.high = MASK
        self.pending = 0
        self.out = _BitWriter()

    def _emit(self, bit: int) -> None:
        self.out.write(bit)
        inverse = bit ^ 1
        for _ in range(self.pending):
            self.out.write(inverse)
        self.pending = 0

    def encode(self, cum_low: int, cum_high: int, total: int) -> None:
        span = self.high - self.low + 1
        self.high = self.low + (span * cum_high) // total - 1
        self.low = self.low + (span * cum_low) // total
        while True:
            if self.high < HALF:
                self._emit(0)
            elif self.low >= HALF:
                self._emit(1)
                self.low -= HALF
                self.high -= HALF
            elif self.low >= QUARTER and self.high < 3 * QUARTER:
                # Straddling the middle: defer the bit, widen about center.
                self.pending += 1
                self.low -= QUARTER
                self.high -= QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1

    def finish(self) -> tuple[bytes, int]:
        # Select a quarter fully inside [low, high]; with the loop
        # invariants one of the two middle quarters always qualifies.
        self.pending += 1
        if self.low < QUARTER:
            self._emit(0)
        else:
            self._emit(1)
        return self.out.getvalue(), self.out.bit_count


class ArithmeticDecoder:
    def __init__(self, data: bytes, bit_count: int):
        self.reader = _BitReader(data, bit_count)
        self.low = 0
        self.high = MASK
        self.code = 0
        for _ in range(STATE_BITS):
            self.code = (self.code << 1) | self.reader.read()

    def decode(self, cum_low_of, total: int, alphabet: int) -> int:
        """Decode one symbol; ``cum_low_of(s)`` gives the cumulative count
        below symbol s, with cum_low_of(alphabet) == total."""
        span = self.high - self.low + 1
        target = ((self.code - self.low + 1) * total - 1) // span
        symbol = 0
        while symbol + 1 < alphabet and cum_low_of(symbol + 1) <= target:
            symbol += 1
        cl, ch = cum_low_of(symbol), cum_low_of(symbol + 1)
        self.high = self.low + (span * ch) // total - 1
        self.low = self.low + (span * cl) // total
        while True:
            if self.high < HALF:
                pass
            elif self.low >= HALF:
                self.low -= HALF
                self.high -= HALF
                self.code -= HALF
            elif self.low >= QUARTER and self.high < 3 * QUARTER:
                self.low -= QUARTER
                self.high -= QUARTER
                self.code -= QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1
            self.code = (self.code << 1) | self.reader.read()
        return symbol


@dataclass(frozen=True)
class Bitstream:
    """Coded payload plus the digests binding it to its inputs."""

    payload: bytes
    bit_length: int
    geometry_digest: int
    model_digest: int

    def __post_init__(self):
        if self.bit_length > 8 * len(self.payload):
            raise ValueError("bit length exceeds payload size")


def _require_tree(geometry: SubsetGeometry) -> None:
    if geometry.tractable is not Tractability.TREE:
        raise IntractableSubsetError("conditional coding needs a tree subset")


def encode_conditional(model: PairwiseModel, geometry: SubsetGeometry,
                       x_subset, x_boundary) -> Bitstream:
    """Encode the subset spins given the boundary spins."""
    _require_tree(geometry)
    x = as_spins(x_subset, geometry.subset_size)
    xb = as_spins(x_boundary, geometry.boundary_size)
    conditioner = SequentialConditioner(fold_boundary(model, geometry, xb))
    enc = ArithmeticEncoder()
    for k in range(geometry.subset_size):
        _, p_plus = conditioner.next_distribution()
        f_plus = quantize_plus(p_plus)
        f_minus = PROB_TOTAL - f_plus
        if x[k] > 0:
            enc.encode(f_minus, PROB_TOTAL, PROB_TOTAL)
        else:
            enc.encode(0, f_minus, PROB_TOTAL)
        conditioner.advance(int(x[k]))
    payload, bits = enc.finish()
    return Bitstream(
        payload=payload,
        bit_length=bits,
        geometry_digest=geometry.digest(xb),
        model_digest=model.digest(),
    )


def decode_conditional(model: PairwiseModel, geometry: SubsetGeometry,
                       x_boundary, bits: Bitstream) -> np.ndarray:
    """Exact inverse of encode_conditional for matching inputs."""
    _require_tree(geometry)
    xb = as_spins(x_boundary, geometry.boundary_size)
    if bits.model_digest != model.digest():
        raise DigestMismatchError("stream was encoded under a different model")
    if bits.geometry_digest != geometry.digest(xb):
        raise DigestMismatchError("stream was encoded for a different subset or boundary")
    conditioner = SequentialConditioner(fold_boundary(model, geometry, xb))
    dec = ArithmeticDecoder(bits.payload, bits.bit_length)
    out = np.empty(geometry.subset_size, dtype=np.int8)
    for k in range(geometry.subset_size):
        _, p_plus = conditioner.next_distribution()
        f_plus = quantize_plus(p_plus)
        f_minus = PROB_TOTAL - f_plus
        cum = (0, f_minus, PROB_TOTAL)
        symbol = dec.decode(lambda s: cum[s], PROB_TOTAL, 2)
        out[k] = 1 if symbol == 1 else -1
        conditioner.advance(int(out[k]))
    return out


# ---- bitstream container format ----
# magic "MCDLAC1", geometry digest (8 bytes BE), model digest (8 bytes BE),
# bit count (4 bytes BE), payload bytes.

FILE_MAGIC = b"MCDLAC1"


def write_bitstream(path, bits: Bitstream) -> None:
    with open(path, "wb") as f:
        f.write(FILE_MAGIC)
        f.write(struct.pack(">QQI", bits.geometry_digest, bits.model_digest, bits.bit_length))
        f.write(bits.payload)


def read_bitstream(path) -> Bitstream:
    with open(path, "rb") as f:
        magic = f.read(len(FILE_MAGIC))
        if magic != FILE_MAGIC:
            raise ValueError(f"not a bitstream file: {path!r}")
        gdig, mdig, bit_length = struct.unpack(">QQI", f.read(20))
        payload = f.read()
    if len(payload) < (bit_length + 7) // 8:
        raise ValueError("truncated bitstream payload")
    return Bitstream(payload=payload, bit_length=bit_length,
                     geometry_digest=gdig, model_digest=mdig)
