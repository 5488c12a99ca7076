"""FFT application of circulant and Toeplitz-structured blocks.

The matrix of a discrete convolution is constant along diagonals, so any
rectangular sub-block of it is Toeplitz and can be applied to a vector in
O(n log n): embed the block in a circulant matrix, diagonalize with the
FFT, multiply, transform back, truncate.  Triangular and banded
(parallelogram) blocks are Toeplitz blocks with some diagonals zeroed, so
one convolution core serves every shape.

Conventions
-----------
A block stores its distinct diagonal values in ``symbol``, ordered from
the top-right diagonal (offset o = j - i = ncols-1) to the bottom-left
diagonal (o = -(nrows-1)), i.e. ``A[i, j] = symbol[ncols - 1 - (j - i)]``
wherever the shape mask admits a nonzero.  Masks are functions of the
diagonal offset alone:

    square              all diagonals
    lower_triangular    o <= 0
    upper_triangular    o >= 0
    parallelogram       0 <= o <= bw - 1,  bw = ncols - nrows + 1

The parallelogram band is anchored at the main diagonal and leans right,
matching a banded convolution block whose per-row support shifts by one
column per row.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQUARE = "square"
LOWER_TRIANGULAR = "lower_triangular"
UPPER_TRIANGULAR = "upper_triangular"
PARALLELOGRAM = "parallelogram"
SHAPES = (SQUARE, LOWER_TRIANGULAR, UPPER_TRIANGULAR, PARALLELOGRAM)

# below this many output elements a direct C convolution beats FFT dispatch
_DIRECT_CONV_CUTOFF = 192


class ShapeError(ValueError):
    """Block geometry or symbol length is inconsistent."""


class LengthError(ValueError):
    """Input length violates a transform precondition."""


def next_pow2(n: int) -> int:
    """Smallest power of two >= n (n >= 1)."""
    return 1 << max(0, (int(n) - 1).bit_length())


@dataclass(frozen=True)
class ToeplitzBlock:
    """A constant-diagonal block with an explicit shape mask.

    symbol holds one value per (potentially) nonzero diagonal, top-right
    diagonal first.  For square/triangular shapes its length is
    nrows + ncols - 1; for a parallelogram it is the band width
    ncols - nrows + 1.
    """

    shape: str
    nrows: int
    ncols: int
    symbol: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ShapeError(f"unknown shape {self.shape!r}")
        if self.nrows < 1 or self.ncols < 1:
            raise ShapeError("block dimensions must be positive")
        sym = np.asarray(self.symbol, dtype=np.complex128)
        object.__setattr__(self, "symbol", sym)
        if self.shape == PARALLELOGRAM:
            if self.ncols < self.nrows:
                raise ShapeError("parallelogram needs ncols >= nrows")
            bw = self.ncols - self.nrows + 1
            if sym.shape != (bw,):
                raise ShapeError(
                    f"parallelogram symbol must have band width {bw}, got {sym.shape}"
                )
        else:
            want = self.nrows + self.ncols - 1
            if sym.shape != (want,):
                raise ShapeError(f"symbol must have length {want}, got {sym.shape}")

    @property
    def bandwidth(self) -> int:
        if self.shape != PARALLELOGRAM:
            raise ShapeError("bandwidth is defined for parallelogram blocks")
        return self.ncols - self.nrows + 1


def fft(x: np.ndarray, direction: str = "forward") -> np.ndarray:
    """Radix-2 DFT of a power-of-two-length sequence.

    forward: X_j = sum_k x_k exp(-2 pi i j k / n); inverse includes the
    1/n factor, so the round trip is the identity.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    if n == 0 or (n & (n - 1)) != 0:
        raise LengthError(f"length {n} is not a power of two")
    if direction == "forward":
        return np.fft.fft(x)
    if direction == "inverse":
        return np.fft.ifft(x)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def _circulant_rows(first_col: np.ndarray, x: np.ndarray, fft_len: int, count: int) -> np.ndarray:
    """First `count` rows of (F-circulant with given first column) @ x_padded."""
    fc = np.fft.fft(first_col, n=fft_len, axis=0)
    fx = np.fft.fft(x, n=fft_len, axis=0)
    if fc.ndim < fx.ndim:
        fc = fc[:, None]
    elif fx.ndim < fc.ndim:
        fx = fx[:, None]
    return np.fft.ifft(fc * fx, axis=0)[:count]


def _apply_full_symbol(symbol: np.ndarray, nrows: int, ncols: int, x: np.ndarray) -> np.ndarray:
    """Apply a (masked) full-symbol Toeplitz block.

    The block is embedded in a circulant of size next_pow2(nrows+ncols-1):
    subdiagonals go to the head of the first column, superdiagonals wrap
    to its tail, and only the first nrows output entries are kept, which
    the zero gap in the middle protects from wrap-around.
    """
    if symbol.ndim == 1 and x.ndim == 1 and nrows * (len(symbol) + ncols) < _DIRECT_CONV_CUTOFF**2:
        return np.convolve(symbol, x)[ncols - 1 : ncols - 1 + nrows]
    fft_len = next_pow2(nrows + ncols - 1)
    shape = (fft_len,) if symbol.ndim == 1 else (fft_len, symbol.shape[1])
    col = np.zeros(shape, dtype=np.complex128)
    col[:nrows] = symbol[ncols - 1 :]
    col[fft_len - ncols + 1 :] = symbol[: ncols - 1]
    return _circulant_rows(col, x, fft_len, nrows)


def _apply_band(symbol: np.ndarray, nrows: int, ncols: int, x: np.ndarray) -> np.ndarray:
    """Apply a parallelogram band.

    The band occupies the top rows of an ncols x ncols circulant, so a
    transform of length next_pow2(ncols) suffices and the input vector
    needs no padding: wrap-around terms land beyond the first nrows
    entries, which are all we keep.
    """
    bw = ncols - nrows + 1
    if symbol.ndim == 1 and x.ndim == 1 and nrows * (bw + ncols) < _DIRECT_CONV_CUTOFF**2:
        return np.convolve(symbol, x)[bw - 1 : bw - 1 + nrows]
    fft_len = next_pow2(ncols)
    shape = (fft_len,) if symbol.ndim == 1 else (fft_len, symbol.shape[1])
    col = np.zeros(shape, dtype=np.complex128)
    col[0] = symbol[bw - 1]
    if bw > 1:
        col[fft_len - bw + 1 :] = symbol[: bw - 1]
    return _circulant_rows(col, x, fft_len, nrows)


def _masked_symbol(block: ToeplitzBlock) -> np.ndarray:
    """Full-length symbol with diagonals outside the shape mask zeroed."""
    sym = block.symbol
    if block.shape == SQUARE:
        return sym
    out = np.zeros_like(sym)
    main = block.ncols - 1  # symbol index of the o = 0 diagonal
    if block.shape == LOWER_TRIANGULAR:
        out[main:] = sym[main:]
    else:  # upper triangular
        out[: main + 1] = sym[: main + 1]
    return out


def circulant_matvec(first_col: np.ndarray, x: np.ndarray) -> np.ndarray:
    """b = C x for the circulant matrix C with first column first_col.

    Power-of-two lengths are diagonalized directly.  Other lengths are
    handled by building the full Toeplitz symbol of C (first column plus
    wrapped first row) and convolving inside a larger, zero-padded
    transform; padding the circulant itself would change the matrix.
    """
    c = np.asarray(first_col, dtype=np.complex128)
    x = np.asarray(x, dtype=np.complex128)
    n = len(c)
    if n < 1:
        raise LengthError("circulant needs length >= 1")
    if x.shape != c.shape:
        raise LengthError(f"dimension mismatch: {c.shape} vs {x.shape}")
    if n & (n - 1) == 0:
        return np.fft.ifft(np.fft.fft(c) * np.fft.fft(x))
    # symbol of C viewed as Toeplitz: A[i, j] = c[(i - j) mod n]
    symbol = np.concatenate([c[1:], c])
    return _apply_full_symbol(symbol, n, n, x)


def toeplitz_matvec(block: ToeplitzBlock, x: np.ndarray) -> np.ndarray:
    """A x for a square or triangular block, via circulant embedding.

    Triangular shapes are square blocks with the masked diagonals set to
    zero before embedding, so the cost is identical.
    """
    if block.shape == PARALLELOGRAM:
        raise ShapeError("use parallelogram_matvec for parallelogram blocks")
    x = np.asarray(x, dtype=np.complex128)
    if x.shape[0] != block.ncols:
        raise LengthError(f"x has length {x.shape[0]}, block has {block.ncols} columns")
    return _apply_full_symbol(_masked_symbol(block), block.nrows, block.ncols, x)


def parallelogram_matvec(block: ToeplitzBlock, x: np.ndarray) -> np.ndarray:
    """A x for a banded parallelogram block.

    The band is embedded in the top rows of an ncols-sized circulant; the
    input vector needs no zero padding and the result is truncated to
    nrows entries.
    """
    if block.shape != PARALLELOGRAM:
        raise ShapeError("block is not a parallelogram")
    x = np.asarray(x, dtype=np.complex128)
    if x.shape[0] != block.ncols:
        raise LengthError(f"x has length {x.shape[0]}, block has {block.ncols} columns")
    return _apply_band(block.symbol, block.nrows, block.ncols, x)


def matvec(block: ToeplitzBlock, x: np.ndarray) -> np.ndarray:
    """Shape-dispatching block application."""
    if block.shape == PARALLELOGRAM:
        return parallelogram_matvec(block, x)
    return toeplitz_matvec(block, x)


def densify(block: ToeplitzBlock) -> np.ndarray:
    """Explicit dense matrix of the block (test oracle)."""
    i = np.arange(block.nrows)[:, None]
    j = np.arange(block.ncols)[None, :]
    offset = j - i
    if block.shape == PARALLELOGRAM:
        bw = block.bandwidth
        mask = (offset >= 0) & (offset <= bw - 1)
        idx = np.clip((bw - 1) - offset, 0, bw - 1)
    else:
        if block.shape == SQUARE:
            mask = np.ones_like(offset, dtype=bool)
        elif block.shape == LOWER_TRIANGULAR:
            mask = offset <= 0
        else:
            mask = offset >= 0
        idx = (block.ncols - 1) - offset
    dense = np.where(mask, block.symbol[idx], 0.0 + 0.0j)
    return dense.astype(np.complex128)
