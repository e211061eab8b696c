"""Finite weighted sample spaces, cell partitions, and step functions.

The ambient stand-in for a sigma-finite measure space is a fixed grid of
sample sites with nonnegative quadrature weights and a monotone exhaustion
by index sets.  Functions are plain float arrays sampled on the grid; the
only geometry used anywhere downstream is the weighted inner product

    <f, g> = sum_x f(x) g(x) w(x).

Partitions collect disjoint index cells of positive mass.  A step function
pairs a partition with one coefficient per cell, and conditioning a
function on a partition (optionally under a restricted index set) is the
weighted-L2 orthogonal projection onto the span of the cell indicators.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, PartitionError

# Orthonormality residual above which a basis is rejected at construction
# time and must go through OrthonormalBasis.orthonormalized instead.
TOL_ORTHO = 1e-8


def _frozen_array(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# ambient space
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AmbientSpace:
    """A finite grid carrying a measure.

    Parameters
    ----------
    points : (M,) array
        Site coordinates.  Used only when building models and for display;
        no downstream computation reads them.
    weights : (M,) array
        Nonnegative site masses (quadrature weights).
    exhaustion : sequence of index arrays
        Monotone family ``X_1 <= X_2 <= ... <= X_{l_max}`` with the last
        member covering every index.  This is the sigma-finiteness
        bookkeeping: truncation stages restrict to one of these sets.
    """

    points: np.ndarray
    weights: np.ndarray
    exhaustion: tuple[np.ndarray, ...]

    def __post_init__(self):
        points = _frozen_array(self.points)
        weights = _frozen_array(self.weights)
        if points.ndim != 1 or weights.ndim != 1:
            raise ValueError("points and weights must be one-dimensional")
        if points.shape != weights.shape:
            raise DimensionMismatch(
                f"{points.size} points but {weights.size} weights"
            )
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("weights must be finite and nonnegative")
        sets = []
        for raw in self.exhaustion:
            idx = np.unique(np.asarray(raw, dtype=np.intp))
            if idx.size and (idx[0] < 0 or idx[-1] >= points.size):
                raise ValueError("exhaustion indices out of range")
            idx.setflags(write=False)
            sets.append(idx)
        if not sets:
            raise ValueError("exhaustion must have at least one set")
        for fine, coarse in zip(sets, sets[1:]):
            if not np.all(np.isin(fine, coarse)):
                raise ValueError("exhaustion sets must be nested")
        if sets[-1].size != points.size:
            raise ValueError("final exhaustion set must cover every index")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "exhaustion", tuple(sets))

    # -- basic geometry ----------------------------------------------------

    @property
    def size(self) -> int:
        return self.points.size

    @cached_property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def inner(self, f: np.ndarray, g: np.ndarray):
        """Weighted inner product; batched over leading axes."""
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        if f.shape[-1] != self.size or g.shape[-1] != self.size:
            raise DimensionMismatch(
                f"expected last axis {self.size}, got {f.shape[-1]} and {g.shape[-1]}"
            )
        out = np.einsum("...i,...i,i->...", f, g, self.weights)
        return float(out) if out.ndim == 0 else out

    def norm(self, f: np.ndarray):
        """Weighted L2 norm; batched over leading axes."""
        f = np.asarray(f, dtype=float)
        return np.sqrt(self.inner(f, f))

    def constant(self, value: float = 1.0) -> np.ndarray:
        return np.full(self.size, float(value))

    # -- exhaustion --------------------------------------------------------

    @property
    def l_max(self) -> int:
        return len(self.exhaustion)

    def exhaustion_set(self, l: int) -> np.ndarray:
        """Index set X_l for 1-based l."""
        if not 1 <= l <= self.l_max:
            raise ValueError(f"l must be in 1..{self.l_max}, got {l}")
        return self.exhaustion[l - 1]

    def exhaustion_mask(self, l: int) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[self.exhaustion_set(l)] = True
        return mask


def uniform_interval_space(resolution: int, n_levels: int = 4) -> AmbientSpace:
    """Midpoint grid on [0, 1] with uniform weights and a left-to-right
    exhaustion in ``n_levels`` equal slabs."""
    if resolution < 1:
        raise ValueError("resolution must be positive")
    points = (np.arange(resolution) + 0.5) / resolution
    weights = np.full(resolution, 1.0 / resolution)
    exhaustion = tuple(
        np.arange(int(np.ceil(resolution * l / n_levels)))
        for l in range(1, n_levels + 1)
    )
    return AmbientSpace(points, weights, exhaustion)


# ---------------------------------------------------------------------------
# partitions and step functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CellPartition:
    """Disjoint index cells of positive mass over a grid of ``size`` sites.

    ``labels`` and ``level`` are present when the partition came from a
    dyadic level-set construction: row i of ``labels`` is the multi-index
    of cell i and ``level`` is the dyadic resolution k.  Ad-hoc partitions
    leave both unset.
    """

    size: int
    cells: tuple[np.ndarray, ...]
    masses: np.ndarray
    labels: np.ndarray | None = None
    level: int | None = None

    def __post_init__(self):
        if not self.cells:
            raise PartitionError("partition needs at least one cell")
        cells = []
        for raw in self.cells:
            idx = np.asarray(raw, dtype=np.intp)
            if idx.size == 0:
                raise PartitionError("empty cell")
            if idx[0] < 0 or idx[-1] >= self.size or np.any(np.diff(idx) <= 0):
                raise PartitionError("cell indices must be sorted, unique, in range")
            idx = _frozen_array(idx, dtype=np.intp)
            cells.append(idx)
        support = np.concatenate(cells)
        if np.unique(support).size != support.size:
            raise PartitionError("cells overlap")
        masses = _frozen_array(self.masses)
        if masses.shape != (len(cells),):
            raise PartitionError("one mass per cell required")
        if np.any(masses <= 0):
            raise PartitionError("cells must have positive mass")
        labels = self.labels
        if labels is not None:
            labels = _frozen_array(labels, dtype=np.int64)
            if labels.shape[0] != len(cells):
                raise PartitionError("one label row per cell required")
        object.__setattr__(self, "cells", tuple(cells))
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_cells(
        cls,
        space: AmbientSpace,
        cells: Sequence[np.ndarray],
        labels: np.ndarray | None = None,
        level: int | None = None,
    ) -> "CellPartition":
        """Build a partition, dropping cells with no mass.

        Candidate cells that are empty or carry zero weight are removed
        (their labels with them); raising only happens when nothing
        survives.
        """
        kept_cells, kept_masses, kept_labels = [], [], []
        for i, raw in enumerate(cells):
            idx = np.unique(np.asarray(raw, dtype=np.intp))
            if idx.size == 0:
                continue
            mass = float(space.weights[idx].sum())
            if mass <= 0.0:
                continue
            kept_cells.append(idx)
            kept_masses.append(mass)
            if labels is not None:
                kept_labels.append(labels[i])
        if not kept_cells:
            raise PartitionError("no cell retains positive mass")
        return cls(
            size=space.size,
            cells=tuple(kept_cells),
            masses=np.array(kept_masses),
            labels=np.array(kept_labels) if labels is not None else None,
            level=level,
        )

    @classmethod
    def singletons(cls, space: AmbientSpace) -> "CellPartition":
        """Finest partition: one cell per positive-mass site."""
        idx = np.flatnonzero(space.weights > 0)
        return cls.from_cells(space, [np.array([i]) for i in idx])

    # -- derived structure -------------------------------------------------

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def support(self) -> np.ndarray:
        out = np.sort(np.concatenate(self.cells))
        out.setflags(write=False)
        return out

    @cached_property
    def point_to_cell(self) -> np.ndarray:
        """Site index -> cell index, with -1 off the support."""
        out = np.full(self.size, -1, dtype=np.intp)
        for c, idx in enumerate(self.cells):
            out[idx] = c
        out.setflags(write=False)
        return out

    @cached_property
    def indicator_matrix(self) -> np.ndarray:
        """(n_cells, size) 0/1 matrix of cell indicators."""
        out = np.zeros((self.n_cells, self.size))
        for c, idx in enumerate(self.cells):
            out[c, idx] = 1.0
        out.setflags(write=False)
        return out

    @cached_property
    def tail_mask(self) -> np.ndarray:
        """Boolean flag per cell marking overflow cells of the label grid.

        At dyadic level k the regular multi-index range is
        -4**k .. 4**k - 1; the two overflow labels -4**k - 1 and 4**k mark
        points beyond the +-2**k value window.  Only meaningful for
        labelled partitions.
        """
        if self.labels is None or self.level is None:
            raise PartitionError("tail_mask needs a labelled level-set partition")
        bound = 4 ** self.level
        return np.any((self.labels == bound) | (self.labels == -bound - 1), axis=1)

    # -- operations --------------------------------------------------------

    def restrict(self, space: AmbientSpace, indices: np.ndarray) -> "CellPartition":
        """Intersect every cell with an index set, keeping positive-mass cells.

        Raises PartitionError when no cell survives the restriction.
        """
        indices = np.asarray(indices, dtype=np.intp)
        cells = [np.intersect1d(c, indices) for c in self.cells]
        return CellPartition.from_cells(
            space, cells, labels=self.labels, level=self.level
        )

    def refines(self, coarser: "CellPartition") -> bool:
        """True when every cell of self sits inside a single cell of ``coarser``
        and the supports agree."""
        if self.size != coarser.size:
            return False
        if self.support.size != coarser.support.size or np.any(
            self.support != coarser.support
        ):
            return False
        owner = coarser.point_to_cell
        for idx in self.cells:
            owners = owner[idx]
            if owners[0] < 0 or np.any(owners != owners[0]):
                return False
        return True


@dataclass(frozen=True, eq=False)
class StepFunction:
    """One coefficient per cell of a partition."""

    partition: CellPartition
    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = _frozen_array(self.coefficients)
        if coeffs.shape != (self.partition.n_cells,):
            raise DimensionMismatch(
                f"{self.partition.n_cells} cells but {coeffs.size} coefficients"
            )
        object.__setattr__(self, "coefficients", coeffs)

    def expand(self) -> np.ndarray:
        """Pointwise values on the full grid; zero off the support."""
        out = np.zeros(self.partition.size)
        ptc = self.partition.point_to_cell
        on = ptc >= 0
        out[on] = self.coefficients[ptc[on]]
        return out

    @property
    def norm_sq(self) -> float:
        """Squared weighted L2 norm, computed from cell masses."""
        return float(np.sum(self.coefficients**2 * self.partition.masses))


def condition_on_partition(
    f: np.ndarray,
    partition: CellPartition,
    space: AmbientSpace,
    restrict_to: np.ndarray | None = None,
) -> StepFunction:
    """Project onto the indicator span of a partition by cell averaging.

    With ``restrict_to`` the averages are taken under the measure
    restricted to that index set and the returned step function lives on
    the restricted partition.  This is the weighted-L2 orthogonal
    projection onto the span of the (restricted) cell indicators; the
    expansion agrees with the conditional-average values except on
    zero-weight sites, which carry no mass.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (space.size,):
        raise DimensionMismatch(f"expected shape ({space.size},), got {f.shape}")
    part = partition
    if restrict_to is not None:
        part = partition.restrict(space, restrict_to)
    sums = part.indicator_matrix @ (f * space.weights)
    return StepFunction(part, sums / part.masses)


# ---------------------------------------------------------------------------
# orthonormal bases
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """Rows of ``vectors`` are orthonormal for the space's inner product.

    Construction validates the Gram matrix against TOL_ORTHO and rejects
    bases that fail; ``orthonormalized`` repairs such input first.
    """

    space: AmbientSpace
    vectors: np.ndarray

    def __post_init__(self):
        vectors = _frozen_array(self.vectors)
        if vectors.ndim != 2 or vectors.shape[1] != self.space.size:
            raise DimensionMismatch(
                f"vectors must be (K, {self.space.size}), got {vectors.shape}"
            )
        if vectors.shape[0] < 1:
            raise ValueError("basis needs at least one vector")
        object.__setattr__(self, "vectors", vectors)
        if self.orthonormality_residual > TOL_ORTHO:
            raise ValueError(
                f"basis fails orthonormality at {self.orthonormality_residual:.3e} "
                f"(tolerance {TOL_ORTHO:.1e}); use OrthonormalBasis.orthonormalized"
            )

    @cached_property
    def orthonormality_residual(self) -> float:
        gram = np.einsum("ki,i,li->kl", self.vectors, self.space.weights, self.vectors)
        return float(np.max(np.abs(gram - np.eye(self.n_vectors))))

    @property
    def n_vectors(self) -> int:
        return self.vectors.shape[0]

    def coefficients(self, f: np.ndarray, m: int | None = None) -> np.ndarray:
        """Inner products against the first m basis vectors; batched."""
        m = self.n_vectors if m is None else m
        if not 1 <= m <= self.n_vectors:
            raise ValueError(f"m must be in 1..{self.n_vectors}, got {m}")
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.space.size:
            raise DimensionMismatch(
                f"expected last axis {self.space.size}, got {f.shape[-1]}"
            )
        return np.einsum("km,m,...m->...k", self.vectors[:m], self.space.weights, f)

    def synthesize(self, coefficients: np.ndarray) -> np.ndarray:
        """Linear combination of leading basis vectors; batched."""
        coefficients = np.asarray(coefficients, dtype=float)
        m = coefficients.shape[-1]
        if m > self.n_vectors:
            raise DimensionMismatch(
                f"{m} coefficients but only {self.n_vectors} basis vectors"
            )
        return coefficients @ self.vectors[:m]

    @classmethod
    def orthonormalized(
        cls, space: AmbientSpace, vectors: np.ndarray
    ) -> "OrthonormalBasis":
        """Stabilized Gram-Schmidt (two modified passes) on the rows.

        Raises on effective rank deficiency instead of silently dropping
        vectors.
        """
        rows = np.array(vectors, dtype=float, copy=True)
        if rows.ndim != 2:
            raise ValueError("vectors must be a 2-d array")
        done: list[np.ndarray] = []
        for r, row in enumerate(rows):
            original = space.norm(row)
            for _ in range(2):
                for prev in done:
                    row = row - space.inner(prev, row) * prev
            remaining = space.norm(row)
            if remaining <= 1e-12 * max(original, 1.0):
                raise ValueError(f"input row {r} is numerically dependent")
            done.append(row / remaining)
        return cls(space, np.array(done))

    @classmethod
    def haar(cls, space: AmbientSpace, count: int) -> "OrthonormalBasis":
        """Mass-balanced Haar-type basis on the positive-weight sites.

        The first vector is the normalized constant; each later vector is
        supported on one dyadic block, positive on the left half and
        negative on the right, scaled to zero mean and unit norm.  Blocks
        split at the site closest to half the block mass, breadth first,
        so vector j only refines earlier vectors.
        """
        if count < 1:
            raise ValueError("count must be positive")
        alive = np.flatnonzero(space.weights > 0)
        if alive.size < count:
            raise ValueError(
                f"{count} vectors requested but only {alive.size} sites carry mass"
            )
        w = space.weights
        out = np.zeros((count, space.size))
        out[0, alive] = 1.0
        out[0] /= space.norm(out[0])
        queue: list[np.ndarray] = [alive]
        built = 1
        while built < count:
            if not queue:
                raise ValueError("ran out of splittable blocks")
            block = queue.pop(0)
            if block.size < 2:
                continue
            cum = np.cumsum(w[block])
            half = np.searchsorted(cum, cum[-1] / 2.0, side="left") + 1
            half = min(max(half, 1), block.size - 1)
            left, right = block[:half], block[half:]
            mass_l, mass_r = w[left].sum(), w[right].sum()
            if mass_l <= 0 or mass_r <= 0:
                queue.append(block[1:] if mass_l <= 0 else block[:-1])
                continue
            vec = np.zeros(space.size)
            vec[left] = 1.0 / mass_l
            vec[right] = -1.0 / mass_r
            out[built] = vec / space.norm(vec)
            built += 1
            queue.extend([left, right])
        return cls(space, out)
