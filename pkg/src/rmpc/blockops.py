"""Finite-horizon block-lower-triangular (causal) operators.

Blocks are keyed by ``(t, k)``: block-row ``t`` and delay ``k``, so block
``(t, k)`` sits at block-column ``t - k``. Absent blocks are zero.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import constants as C
from .errors import SingularDiagonal


@dataclass(frozen=True, eq=False)
class BlockLTOperator:
    horizon: int
    p: int
    q: int
    blocks: dict

    def __post_init__(self):
        clean = {}
        for (t, k), blk in self.blocks.items():
            if not (0 <= k <= t <= self.horizon):
                raise ValueError(f"block ({t}, {k}) outside the causal pattern for T={self.horizon}")
            blk = np.array(blk, dtype=float, ndmin=2)
            if blk.shape != (self.p, self.q):
                raise ValueError(f"block ({t}, {k}) has shape {blk.shape}, expected {(self.p, self.q)}")
            blk.setflags(write=False)
            clean[(t, k)] = blk
        object.__setattr__(self, "blocks", clean)

    @property
    def shape(self):
        n = self.horizon + 1
        return n * self.p, n * self.q

    def block(self, t: int, k: int) -> np.ndarray:
        """Block at row t, delay k (zero when absent or acausal)."""
        blk = self.blocks.get((t, k))
        return np.zeros((self.p, self.q)) if blk is None else blk

    def at(self, row: int, col: int) -> np.ndarray:
        """Block at block-row ``row`` and block-column ``col``."""
        return self.block(row, row - col)

    # conversions --------------------------------------------------------
    @classmethod
    def identity(cls, horizon: int, n: int) -> "BlockLTOperator":
        return cls(horizon, n, n, {(t, 0): np.eye(n) for t in range(horizon + 1)})

    @classmethod
    def zeros(cls, horizon: int, p: int, q: int) -> "BlockLTOperator":
        return cls(horizon, p, q, {})

    @classmethod
    def from_dense(cls, m, horizon: int, p: int, q: int, tol: float = 0.0) -> "BlockLTOperator":
        m = np.asarray(m, dtype=float)
        if m.shape != ((horizon + 1) * p, (horizon + 1) * q):
            raise ValueError("dense matrix shape does not match horizon and block sizes")
        blocks = {}
        for row in range(horizon + 1):
            for col in range(horizon + 1):
                blk = m[row * p:(row + 1) * p, col * q:(col + 1) * q]
                if col > row:
                    if np.any(np.abs(blk) > tol):
                        raise ValueError("matrix is not block-lower-triangular")
                    continue
                if np.any(blk != 0.0):
                    blocks[(row, row - col)] = blk.copy()
        return cls(horizon, p, q, blocks)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        p, q = self.p, self.q
        for (t, k), blk in self.blocks.items():
            c = t - k
            out[t * p:(t + 1) * p, c * q:(c + 1) * q] = blk
        return out

    def to_csv(self) -> str:
        """Dense dump with a ``rows,cols`` header line."""
        dense = self.to_dense()
        buf = io.StringIO()
        buf.write(f"{dense.shape[0]},{dense.shape[1]}\n")
        np.savetxt(buf, dense, delimiter=",", fmt="%.17g")
        return buf.getvalue()

    def block_column(self, col: int) -> list:
        return [self.at(t, col) for t in range(self.horizon + 1)]

    def __matmul__(self, other):
        if isinstance(other, BlockLTOperator):
            return multiply(self, other)
        return self.to_dense() @ np.asarray(other, dtype=float)

    def __add__(self, other: "BlockLTOperator") -> "BlockLTOperator":
        _check_same(self, other)
        keys = set(self.blocks) | set(other.blocks)
        return BlockLTOperator(self.horizon, self.p, self.q,
                               {key: self.block(*key) + other.block(*key) for key in keys})

    def __sub__(self, other: "BlockLTOperator") -> "BlockLTOperator":
        return self + other.scale(-1.0)

    def scale(self, s: float) -> "BlockLTOperator":
        return BlockLTOperator(self.horizon, self.p, self.q, {k: s * v for k, v in self.blocks.items()})

    def left_apply(self, m) -> "BlockLTOperator":
        """blkdiag(m, ..., m) @ self."""
        m = np.atleast_2d(np.asarray(m, dtype=float))
        return BlockLTOperator(self.horizon, m.shape[0], self.q,
                               {k: m @ v for k, v in self.blocks.items()})

    def __repr__(self):
        return f"BlockLTOperator(T={self.horizon}, block={self.p}x{self.q}, nnz_blocks={len(self.blocks)})"


def _check_same(a, b):
    if a.horizon != b.horizon or a.p != b.p or a.q != b.q:
        raise ValueError("operators have different horizons or block sizes")


def multiply(a: BlockLTOperator, b: BlockLTOperator) -> BlockLTOperator:
    """Causal product: (ab)^{t, k} = sum_{j=0}^{k} a^{t, j} b^{t-j, k-j}."""
    if a.horizon != b.horizon:
        raise ValueError("horizon mismatch")
    if a.q != b.p:
        raise ValueError(f"inner block sizes differ: {a.q} vs {b.p}")
    T = a.horizon
    blocks = {}
    for t in range(T + 1):
        for k in range(t + 1):
            acc = None
            for j in range(k + 1):
                ab = a.blocks.get((t, j))
                bb = b.blocks.get((t - j, k - j))
                if ab is None or bb is None:
                    continue
                acc = ab @ bb if acc is None else acc + ab @ bb
            if acc is not None:
                blocks[(t, k)] = acc
    return BlockLTOperator(T, a.p, b.q, blocks)


def shift_stack(m, horizon: int) -> BlockLTOperator:
    """Z blkdiag(m, ..., m): m on the first block sub-diagonal."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return BlockLTOperator(horizon, m.shape[0], m.shape[1],
                           {(t, 1): m for t in range(1, horizon + 1)})


def inverse(a: BlockLTOperator) -> BlockLTOperator:
    """Inverse by block forward substitution.

    Solves a @ x = I column by column in delay order:
    x^{t,k} = (a^{t,0})^{-1} (delta_k I - sum_{j=1}^{k} a^{t,j} x^{t-j,k-j}).
    """
    if a.p != a.q:
        raise ValueError("only square blocks can be inverted")
    T, n = a.horizon, a.p
    diag_inv = []
    for t in range(T + 1):
        d = a.block(t, 0)
        cond = np.linalg.cond(d)
        if not np.isfinite(cond) or cond > C.MAX_DIAGONAL_COND:
            raise SingularDiagonal(t, cond)
        diag_inv.append(np.linalg.inv(d))
    x = {}
    eye = np.eye(n)
    for t in range(T + 1):
        for k in range(t + 1):
            rhs = eye.copy() if k == 0 else np.zeros((n, n))
            for j in range(1, k + 1):
                aj = a.blocks.get((t, j))
                xb = x.get((t - j, k - j))
                if aj is not None and xb is not None:
                    rhs -= aj @ xb
            x[(t, k)] = diag_inv[t] @ rhs
    return BlockLTOperator(T, n, n, x)


def first_block_column(a: BlockLTOperator) -> list:
    """[a^{t,t} for t = 0..T], i.e. block-column 0."""
    return [a.block(t, t) for t in range(a.horizon + 1)]


def forward_solve(a: BlockLTOperator, rhs) -> np.ndarray:
    """Solve a @ x = rhs for a stacked vector by block forward substitution."""
    T, n = a.horizon, a.p
    rhs = np.asarray(rhs, dtype=float).reshape(T + 1, n)
    x = np.zeros_like(rhs)
    for t in range(T + 1):
        acc = rhs[t].copy()
        for k in range(1, t + 1):
            blk = a.blocks.get((t, k))
            if blk is not None:
                acc -= blk @ x[t - k]
        x[t] = np.linalg.solve(a.block(t, 0), acc)
    return x.ravel()
