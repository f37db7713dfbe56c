"""Symmetric INT8 quantization.

Weights are quantized per 128x128 block with a greedy clipping search:
every clip coefficient on a grid is tried and the one with the lowest
block MSE wins. Activations are quantized per 1x128 group with the group
max as the threshold (no clipping). Rounding is half-away-from-zero and
codes are clamped to [-127, 127], so magnitudes fit in 7 bits.

Serialized container layouts (all little-endian):

* block matrix:  magic ``QBLKI8\\x00\\x00``, u32 nrows, u32 ncols,
  u32 block_rows, u32 block_cols, f32 scales then f32 clips (row-major
  over the block grid), int8 codes (row-major).
* group activation: magic ``QGRPI8\\x00\\x00``, u32 nrows, u32 ncols,
  u32 group_size, f32 scales (row-major), int8 codes (row-major).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor_ops import ShapeError, as_f64, ensure_finite

BLOCK_MAGIC = b"QBLKI8\x00\x00"
GROUP_MAGIC = b"QGRPI8\x00\x00"
DEFAULT_BLOCK_SHAPE = (128, 128)
DEFAULT_GROUP_SIZE = 128
DEFAULT_CLIP_GRID = tuple(round(1.0 - 0.05 * i, 2) for i in range(11))  # 1.00 .. 0.50


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _grid_starts(total: int, step: int) -> range:
    return range(0, total, step)


@dataclass
class QuantizedBlockMatrix:
    """Per-block symmetric INT8 weights.

    codes has the original matrix shape; scales, clips and mse are indexed
    by (block_row, block_col). Dequantized value = code * scale.
    """

    codes: np.ndarray  # int8
    scales: np.ndarray  # float64, (n_block_rows, n_block_cols)
    clips: np.ndarray  # chosen clip coefficient per block
    mse: np.ndarray  # quantization MSE per block
    block_shape: tuple[int, int]

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    def block_bounds(self, br: int, bc: int) -> tuple[slice, slice]:
        rs, cs = self.block_shape
        return (
            slice(br * rs, min((br + 1) * rs, self.codes.shape[0])),
            slice(bc * cs, min((bc + 1) * cs, self.codes.shape[1])),
        )

    def dequantize(self) -> np.ndarray:
        out = np.empty(self.codes.shape)
        for br in range(self.scales.shape[0]):
            for bc in range(self.scales.shape[1]):
                rows, cols = self.block_bounds(br, bc)
                out[rows, cols] = self.codes[rows, cols].astype(np.float64) * self.scales[br, bc]
        return out


@dataclass
class QuantizedGroupActivation:
    """Per-group symmetric INT8 activations; the group max sets the scale."""

    codes: np.ndarray  # int8, (n, d)
    scales: np.ndarray  # float64, (n, n_groups)
    group_size: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    def group_bounds(self, g: int) -> slice:
        return slice(g * self.group_size, min((g + 1) * self.group_size, self.codes.shape[1]))

    def dequantize(self) -> np.ndarray:
        out = np.empty(self.codes.shape)
        for g in range(self.scales.shape[1]):
            cols = self.group_bounds(g)
            out[:, cols] = self.codes[:, cols].astype(np.float64) * self.scales[:, g : g + 1]
        return out


def _quantize_with_scale(block: np.ndarray, scale: float) -> np.ndarray:
    return np.clip(round_half_away(block / scale), -127, 127).astype(np.int8)


def quantize_weight_blocks(
    w,
    grid: tuple[float, ...] = DEFAULT_CLIP_GRID,
    block_shape: tuple[int, int] = DEFAULT_BLOCK_SHAPE,
) -> QuantizedBlockMatrix:
    """Blockwise INT8 with greedy clip search.

    Per block, each clip coefficient c in the grid gives scale =
    c * max|block| / 127; the c with the smallest reconstruction MSE wins,
    ties going to the larger c. An all-zero block stores zeros at scale 1.
    """
    w = as_f64(w)
    if w.ndim != 2:
        raise ShapeError(f"weights must be 2-D, got shape {w.shape}")
    ensure_finite(w, "quantize_weight_blocks")
    if len(grid) == 0:
        raise ValueError("clip grid is empty")
    for c in grid:
        if not 0.0 < c <= 1.0:
            raise ValueError(f"clip coefficients must lie in (0, 1], got {c}")
    grid_desc = sorted(grid, reverse=True)  # scan larger c first so ties keep it

    rs, cs = block_shape
    nbr = (w.shape[0] + rs - 1) // rs
    nbc = (w.shape[1] + cs - 1) // cs
    codes = np.zeros(w.shape, dtype=np.int8)
    scales = np.ones((nbr, nbc))
    clips = np.ones((nbr, nbc))
    mse = np.zeros((nbr, nbc))
    for br, r0 in enumerate(_grid_starts(w.shape[0], rs)):
        for bc, c0 in enumerate(_grid_starts(w.shape[1], cs)):
            block = w[r0 : r0 + rs, c0 : c0 + cs]
            amax = np.max(np.abs(block))
            if amax == 0.0:
                continue  # zero block: keep scale 1, zero codes
            best = None
            for c in grid_desc:
                scale = c * amax / 127.0
                cand = _quantize_with_scale(block, scale)
                err = float(np.mean((cand.astype(np.float64) * scale - block) ** 2))
                if best is None or err < best[0]:
                    best = (err, c, scale, cand)
            mse[br, bc], clips[br, bc], scales[br, bc], block_codes = best
            codes[r0 : r0 + rs, c0 : c0 + cs] = block_codes
    return QuantizedBlockMatrix(codes=codes, scales=scales, clips=clips, mse=mse, block_shape=block_shape)


def quantize_activation_groups(x, group_size: int = DEFAULT_GROUP_SIZE) -> QuantizedGroupActivation:
    """Groupwise INT8 along the feature axis; scale = max|group| / 127."""
    x = as_f64(x)
    if x.ndim != 2:
        raise ShapeError(f"activations must be 2-D, got shape {x.shape}")
    ensure_finite(x, "quantize_activation_groups")
    n, d = x.shape
    n_groups = (d + group_size - 1) // group_size
    codes = np.zeros((n, d), dtype=np.int8)
    scales = np.ones((n, n_groups))
    for g, c0 in enumerate(_grid_starts(d, group_size)):
        group = x[:, c0 : c0 + group_size]
        amax = np.max(np.abs(group), axis=1)
        scale = np.where(amax == 0.0, 1.0, amax / 127.0)
        codes[:, c0 : c0 + group_size] = np.clip(
            round_half_away(group / scale[:, None]), -127, 127
        ).astype(np.int8)
        scales[:, g] = scale
    return QuantizedGroupActivation(codes=codes, scales=scales, group_size=group_size)


def int8_matmul_reference(a: QuantizedGroupActivation, w: QuantizedBlockMatrix) -> np.ndarray:
    """Integer-exact reference product of quantized operands.

    Tiles the inner dimension by the activation group size (which must
    equal the weight block row count), accumulates each tile in int32,
    then applies both scales in float64, summing tiles in ascending order.
    This fixed evaluation order is the contract the event-driven path
    reproduces bit for bit.
    """
    if a.group_size != w.block_shape[0]:
        raise ShapeError(
            f"activation group size {a.group_size} != weight block rows {w.block_shape[0]}"
        )
    if a.codes.shape[1] != w.codes.shape[0]:
        raise ShapeError(f"inner dims disagree: {a.codes.shape} @ {w.codes.shape}")
    n, _ = a.codes.shape
    m = w.codes.shape[1]
    out = np.zeros((n, m))
    for g in range(a.scales.shape[1]):
        rows = a.group_bounds(g)
        a_tile = a.codes[:, rows].astype(np.int32)
        for bc in range(w.scales.shape[1]):
            _, cols = w.block_bounds(g, bc)
            acc = a_tile @ w.codes[rows, cols].astype(np.int32)
            out[:, cols] += acc.astype(np.float64) * a.scales[:, g : g + 1] * w.scales[g, bc]
    return out


def save_block_matrix(path, qw: QuantizedBlockMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(BLOCK_MAGIC)
        fh.write(struct.pack("<4I", *qw.codes.shape, *qw.block_shape))
        fh.write(qw.scales.astype("<f4").tobytes())
        fh.write(qw.clips.astype("<f4").tobytes())
        fh.write(qw.codes.astype("<i1").tobytes())


def load_block_matrix(path) -> QuantizedBlockMatrix:
    with open(path, "rb") as fh:
        if fh.read(8) != BLOCK_MAGIC:
            raise ValueError(f"{path}: not a block-matrix container")
        nrows, ncols, rs, cs = struct.unpack("<4I", fh.read(16))
        nbr, nbc = (nrows + rs - 1) // rs, (ncols + cs - 1) // cs
        scales = np.frombuffer(fh.read(4 * nbr * nbc), dtype="<f4").astype(np.float64)
        clips = np.frombuffer(fh.read(4 * nbr * nbc), dtype="<f4").astype(np.float64)
        codes = np.frombuffer(fh.read(nrows * ncols), dtype="<i1").astype(np.int8)
    qw = QuantizedBlockMatrix(
        codes=codes.reshape(nrows, ncols),
        scales=scales.reshape(nbr, nbc),
        clips=clips.reshape(nbr, nbc),
        mse=np.zeros((nbr, nbc)),
        block_shape=(rs, cs),
    )
    return qw


def save_group_activation(path, qa: QuantizedGroupActivation) -> None:
    with open(path, "wb") as fh:
        fh.write(GROUP_MAGIC)
        fh.write(struct.pack("<3I", *qa.codes.shape, qa.group_size))
        fh.write(qa.scales.astype("<f4").tobytes())
        fh.write(qa.codes.astype("<i1").tobytes())


def load_group_activation(path) -> QuantizedGroupActivation:
    with open(path, "rb") as fh:
        if fh.read(8) != GROUP_MAGIC:
            raise ValueError(f"{path}: not a group-activation container")
        n, d, gs = struct.unpack("<3I", fh.read(12))
        n_groups = (d + gs - 1) // gs
        scales = np.frombuffer(fh.read(4 * n * n_groups), dtype="<f4").astype(np.float64)
        codes = np.frombuffer(fh.read(n * d), dtype="<i1").astype(np.int8)
    return QuantizedGroupActivation(
        codes=codes.reshape(n, d), scales=scales.reshape(n, n_groups), group_size=gs
    )
