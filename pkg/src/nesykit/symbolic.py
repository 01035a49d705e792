"""Learnable symbolic functions as weight tensors, plus the permutation
machinery that maps internal symbols onto human labels for evaluation.

A rule table over input spaces S1..Sn and output space S is stored as a
weight matrix of shape (|S1|*...*|Sn|, |S|); softmax-then-policy along
the last axis realizes the integer lookup table.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import policy as P
from . import tensor as T


@dataclass(frozen=True)
class SymbolSpace:
    size: int
    names: tuple = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("symbol space must have at least one symbol")


class RuleWeights:
    """Weight tensor whose policy-selected slices form an integer rule table."""

    def __init__(self, in_spaces, out_space, rng=None, init_scale=0.01,
                 dtype=np.float64):
        self.in_spaces = [s if isinstance(s, SymbolSpace) else SymbolSpace(s)
                          for s in in_spaces]
        self.out_space = out_space if isinstance(out_space, SymbolSpace) else SymbolSpace(out_space)
        self.in_sizes = tuple(s.size for s in self.in_spaces)
        rows = int(np.prod(self.in_sizes))
        if rng is None:
            rng = np.random.default_rng(0)
        data = rng.uniform(-init_scale, init_scale,
                           size=(rows, self.out_space.size)).astype(dtype)
        self.weights = T.Tensor(data, requires_grad=True)

    @property
    def table_shape(self):
        return self.in_sizes + (self.out_space.size,)

    def flat_index(self, symbols):
        symbols = np.asarray(symbols)
        if not self.in_sizes:
            # zero input axes (initial-symbol weights): single row
            if symbols.ndim == 2:
                return np.zeros(len(symbols), dtype=np.int64)
            return 0
        for axis, size in enumerate(self.in_sizes):
            col = symbols[..., axis] if symbols.ndim > 1 else symbols[axis]
            if np.any(col < 0) or np.any(col >= size):
                raise IndexError(f"symbol out of range on axis {axis}")
        if symbols.ndim == 1:
            return int(np.ravel_multi_index(tuple(symbols), self.in_sizes))
        return np.ravel_multi_index(tuple(symbols.T), self.in_sizes)

    def slice_probs(self, flat_idx):
        """(B,) flat indices -> (B, |S|) softmax simplex node."""
        return T.softmax(T.gather_rows(self.weights, np.atleast_1d(flat_idx)))

    def params(self):
        return [("weights", self.weights)]


def rule_lookup(rw, symbols, epsilon=0.0, rng=None):
    """Select an output symbol for one input tuple; returns (symbol, confidence)."""
    probs = rw.slice_probs(np.array([rw.flat_index(symbols)])).data[0]
    if rng is None or epsilon <= 0.0:
        choice = P.greedy_select(probs)
    else:
        choice = P.epsilon_greedy_select(probs, epsilon, rng)
    return choice.symbol, choice.confidence


def materialize_rule_table(rw):
    """Greedy selection along the output axis for every input tuple."""
    with T.no_grad():
        table = rw.weights.data.argmax(axis=1)
    return table.reshape(rw.in_sizes)


def rule_confidences(rw):
    """Greedy confidence of every cell, same shape as the rule table."""
    with T.no_grad():
        w = rw.weights.data
        shifted = w - w.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
    return probs.max(axis=1).reshape(rw.in_sizes)


@dataclass
class PermutationAlignment:
    permutation: np.ndarray  # permutation[predicted symbol] = human label
    diagonal_mass: float
    unused_symbols: list = field(default_factory=list)

    @property
    def inverse(self):
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(len(self.permutation))
        return inv


def align_symbols(confusion):
    """Bijection from predicted symbols to true labels maximizing the
    diagonal after column permutation; exact, lexicographically smallest
    among ties.

    Rectangular (k_true x k_pred) input is zero padded to square; symbols
    assigned to pad rows and columns whose total mass is zero are reported
    as unused.
    """
    c = np.asarray(confusion, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("confusion must be a matrix")
    if np.any(c < 0):
        raise ValueError("confusion must be nonnegative")
    k_true, k_pred = c.shape
    k = max(k_true, k_pred)
    sq = np.zeros((k, k))
    sq[:k_true, :k_pred] = c

    best = _assignment_value(sq)
    # fix columns one by one to the smallest row keeping the optimum intact
    perm = np.full(k, -1)
    taken = np.zeros(k, dtype=bool)
    bonus = sq.sum() + 1.0
    pinned = sq.copy()
    for col in range(k):
        for row in np.where(~taken)[0]:
            trial = pinned.copy()
            trial[:, col] = -bonus
            trial[row, col] = pinned[row, col]
            if np.isclose(_assignment_value(trial) , best):
                perm[col] = row
                taken[row] = True
                pinned = trial
                break
    col_mass = sq.sum(axis=0)
    unused = [int(s) for s in range(k_pred) if col_mass[s] == 0 or perm[s] >= k_true]
    return PermutationAlignment(permutation=perm, diagonal_mass=float(best),
                                unused_symbols=unused)


def _assignment_value(matrix):
    rows, cols = linear_sum_assignment(-matrix)
    return float(matrix[rows, cols].sum())


def apply_alignment(table, permutation, axes=None, relabel_output=False):
    """Relabel a rule table's input axes (and optionally its output values).

    aligned[p(i), p(j), ...] = table[i, j, ...]; output values are mapped
    through p only when the output space is the same symbol space.
    """
    table = np.asarray(table)
    perm = np.asarray(permutation)
    if axes is None:
        axes = range(table.ndim)
    aligned = table.copy()
    for axis in axes:
        if table.shape[axis] != len(perm):
            raise ValueError(f"axis {axis} size {table.shape[axis]} != permutation "
                             f"size {len(perm)}")
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        aligned = np.take(aligned, inv, axis=axis)
    if relabel_output:
        aligned = perm[aligned]
    return aligned


def rule_accuracy(table, oracle):
    table = np.asarray(table)
    oracle = np.asarray(oracle)
    if table.shape != oracle.shape:
        raise ValueError("table and oracle shapes differ")
    return float((table == oracle).mean())


# ---------------------------------------------------------------------------
# exports

def export_rules_csv(path, rw):
    """One row per input tuple: s1,...,sn,output,confidence."""
    table = materialize_rule_table(rw)
    conf = rule_confidences(rw)
    n = len(rw.in_sizes)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"s{i + 1}" for i in range(n)] + ["output", "confidence"])
        for idx in np.ndindex(*rw.in_sizes):
            writer.writerow(list(idx) + [int(table[idx]), f"{conf[idx]:.6f}"])


def export_table_csv(path, table, header=None):
    table = np.asarray(table)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow(header)
        for idx in np.ndindex(*table.shape[:-1]) if table.ndim > 1 else [()]:
            row = table[idx] if idx else table
            writer.writerow(np.atleast_1d(row).tolist())


def write_pgm(path, matrix):
    """Binary P5 grayscale heatmap, min-max scaled to 0..255, row major."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("heatmap requires a matrix")
    lo, hi = m.min(), m.max()
    scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
