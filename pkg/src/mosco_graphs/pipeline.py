"""Staged approximation of a semigroup energy form.

Four nested stages turn the energy form of a spectral model into a
finite, graph-representable object:

* dyadic semigroup differencing   E_n(f)       = 2^n <f - P_{2^-n} f, f>
* Galerkin projection             E_{n,m}      = E_n(pi_m f)
* exhaustion masking              E_{n,m,l}    = E_n(pi_m f restricted to X_l)
* level-set conditioning          E_{n,m,l,k}  = E_n applied to the cell
  averages of the masked projection over the dyadic level-set partition.

Every stage has a generator that is symmetric and negative semidefinite
in the weighted geometry.  Because the composed projection lands in the
span of the first m basis vectors intersected with step functions, the
generator is recorded as a small matrix over an explicit orthonormal
subspace basis.  The matrix is assembled from (I - P) images computed
mode by mode with expm1, which keeps entries accurate uniformly in n
(no cancellation between <g, g> and <P g, g>).

Convention: off the recorded subspace every stage generator acts as
zero.  Resolvents therefore act as 1/lambda there; the quadratic form
of the generator matrix agrees with the stage form exactly for stages
with a Galerkin step and on the spectral span for the bare-n stage.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch
from .measure import AmbientSpace, CellPartition, OrthonormalBasis
from .models import SpectralModel

# Ceiling for the largest eigenvalue of a stage generator: zero in exact
# arithmetic, so anything above this is a construction bug.
NSD_TOL = 1e-9

# Symmetry tolerance on assembled generator matrices.
SYM_TOL = 1e-10


# ---------------------------------------------------------------------------
# stage indices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageIndex:
    """Which stages are enabled, and how deep.

    ``n`` is always present (semigroup time 2^-n).  ``m`` enables the
    Galerkin cut, ``l`` the exhaustion mask, ``k`` the level-set
    conditioning; each requires the previous, giving the four families
    (n), (n,m), (n,m,l), (n,m,l,k).
    """

    n: int
    m: int | None = None
    l: int | None = None
    k: int | None = None

    def __post_init__(self):
        for field in ("n", "m", "l", "k"):
            value = getattr(self, field)
            if value is not None and not isinstance(value, (int, np.integer)):
                raise ValueError(f"{field} must be an integer, got {value!r}")
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if self.m is not None and self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.l is not None and self.m is None:
            raise ValueError("l requires m (mask applies to a Galerkin stage)")
        if self.l is not None and self.l < 1:
            raise ValueError(f"l must be >= 1, got {self.l}")
        if self.k is not None and self.l is None:
            raise ValueError("k requires l (conditioning applies to a masked stage)")
        if self.k is not None and self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")

    def validate_for(self, model: SpectralModel, basis: OrthonormalBasis) -> None:
        if self.m is not None and self.m > basis.n_vectors:
            raise DimensionMismatch(
                f"m = {self.m} exceeds the {basis.n_vectors}-vector basis"
            )
        if self.l is not None and self.l > model.space.l_max:
            raise ValueError(
                f"l = {self.l} outside exhaustion range 1..{model.space.l_max}"
            )

    @property
    def time(self) -> float:
        return 2.0 ** (-self.n)

    @property
    def bound(self) -> float:
        return 2.0**self.n

    def label(self) -> str:
        parts = [f"n{self.n}"]
        for field in ("m", "l", "k"):
            value = getattr(self, field)
            if value is not None:
                parts.append(f"{field}{value}")
        return "_".join(parts)


# ---------------------------------------------------------------------------
# the individual stage maps
# ---------------------------------------------------------------------------

def semigroup_form(model: SpectralModel, n: int, f: np.ndarray):
    """2^n <f - P_{2^-n} f, f>, computed mode by mode.

    Uses expm1 for the per-mode factors 1 - exp(-lambda 2^-n), so the
    value stays accurate when n is large and the difference f - P f is
    tiny.  Any component off the spectral span contributes its full
    squared norm times 2^n.  Batched over leading axes of f.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    t = 2.0 ** (-n)
    c = model.coefficients(f)
    with np.errstate(invalid="ignore"):
        decay = -np.expm1(-model.eigenvalues * t)
    decay = np.where(np.isfinite(model.eigenvalues), decay, 1.0)
    residual = np.asarray(f, dtype=float) - model.basis.synthesize(c)
    off_span = model.space.inner(residual, residual)
    out = 2.0**n * ((decay * c**2).sum(axis=-1) + off_span)
    return float(out) if np.ndim(out) == 0 else out


def galerkin_projection(basis: OrthonormalBasis, m: int, f: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the first m basis vectors; batched."""
    if not 1 <= m <= basis.n_vectors:
        raise DimensionMismatch(
            f"m must be in 1..{basis.n_vectors}, got {m}"
        )
    return basis.synthesize(basis.coefficients(f, m))


def sigma_truncate(space: AmbientSpace, l: int, f: np.ndarray) -> np.ndarray:
    """Pointwise mask by the exhaustion set X_l; batched."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != space.size:
        raise DimensionMismatch(f"expected last axis {space.size}, got {f.shape[-1]}")
    return f * space.exhaustion_mask(l)


def per_function_cell_count(k: int) -> int:
    """Size of one function's dyadic cell system before intersecting:
    2 * 4**k value windows plus the two overflow cells."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    return 2 * 4**k + 2


def level_partition(basis: OrthonormalBasis, m: int, k: int) -> CellPartition:
    """Joint dyadic level-set partition of the first m basis vectors.

    Each function contributes the half-open windows
    (j 2^-k, (j+1) 2^-k] for j in -4**k .. 4**k - 1 together with the
    overflow cells {phi <= -2^k} (label -4**k - 1, lower end inclusive)
    and {phi > 2^k} (label 4**k).  Cells of the joint partition are the
    nonempty intersections over i <= m, found by grouping per-site label
    tuples instead of enumerating the combinatorial product.  Cells are
    ordered lexicographically by label, and zero-mass cells are dropped.
    """
    if not 1 <= m <= basis.n_vectors:
        raise DimensionMismatch(f"m must be in 1..{basis.n_vectors}, got {m}")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    values = basis.vectors[:m]
    window = 2.0**k
    labels = np.ceil(values * window).astype(np.int64) - 1
    labels = np.where(values <= -window, -(4**k) - 1, labels)
    labels = np.where(values > window, 4**k, labels)
    unique, inverse = np.unique(labels.T, axis=0, return_inverse=True)
    cells = [np.flatnonzero(inverse == c) for c in range(unique.shape[0])]
    return CellPartition.from_cells(
        basis.space, cells, labels=unique, level=k
    )


# ---------------------------------------------------------------------------
# assembled stages
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StageForm:
    """A stage generator over an explicitly recorded subspace.

    ``matrix`` is the generator of the stage form in the orthonormal
    coordinates given by the rows of ``subspace``: symmetric, negative
    semidefinite, with operator norm at most twice ``bound`` = 2^n.  Off
    the subspace the generator acts as zero.
    """

    index: StageIndex
    matrix: np.ndarray
    subspace: np.ndarray
    space: AmbientSpace
    bound: float

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float, copy=True)
        subspace = np.array(self.subspace, dtype=float, copy=True)
        p = subspace.shape[0]
        if matrix.shape != (p, p):
            raise DimensionMismatch(
                f"matrix {matrix.shape} does not act on {p} subspace vectors"
            )
        asym = float(np.max(np.abs(matrix - matrix.T)))
        if asym > SYM_TOL:
            raise ValueError(f"generator asymmetry {asym:.3e} exceeds {SYM_TOL:.1e}")
        top = float(np.linalg.eigvalsh(matrix)[-1])
        if top > NSD_TOL:
            raise ValueError(
                f"generator has positive eigenvalue {top:.3e}; "
                "stage operators must be negative semidefinite"
            )
        matrix.setflags(write=False)
        subspace.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "subspace", subspace)

    @property
    def dim(self) -> int:
        return self.subspace.shape[0]

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return np.einsum(
            "pi,i,...i->...p", self.subspace, self.space.weights, f
        )

    def quad_form(self, f: np.ndarray):
        """<-L f, f>: the energy the generator assigns to f."""
        c = self.coefficients(f)
        out = -np.einsum("...p,pq,...q->...", c, self.matrix, c)
        return float(out) if np.ndim(out) == 0 else out

    def apply(self, f: np.ndarray) -> np.ndarray:
        """L f as an ambient vector (zero off the subspace)."""
        return self.coefficients(f) @ self.matrix @ self.subspace


class Stage:
    """One assembled approximation stage for a model, basis, and index.

    Bundles the composed projection, the stage form, and the generator.
    The projection images S_i of the subspace basis vectors are computed
    once; the generator matrix is A_ij = -2^n <(I - P_t) S_j, S_i>.
    """

    def __init__(self, model: SpectralModel, basis: OrthonormalBasis, index: StageIndex):
        if basis.space is not model.space:
            raise ValueError("model and basis must share one ambient space")
        index.validate_for(model, basis)
        self.model = model
        self.basis = basis
        self.index = index
        space = model.space

        self.partition: CellPartition | None = None
        self._cell_values: np.ndarray | None = None
        if index.m is None:
            # Bare semigroup stage: the subspace is the spectral span.
            subspace = model.basis.vectors
            images = subspace
        else:
            subspace = basis.vectors[: index.m]
            images = subspace
            if index.l is not None:
                images = images * space.exhaustion_mask(index.l)
            if index.k is not None:
                partition = level_partition(basis, index.m, index.k)
                partition = partition.restrict(
                    space, space.exhaustion_set(index.l)
                )
                self.partition = partition
                # Conditional expectation: average the masked images over
                # each cell, then spread the averages back out.
                cell_avg = (
                    images @ (partition.indicator_matrix * space.weights).T
                ) / partition.masses
                self._cell_values = cell_avg
                images = cell_avg @ partition.indicator_matrix
        self.subspace = subspace
        self.images = images

        t = index.time
        with np.errstate(invalid="ignore"):
            decay = -np.expm1(-model.eigenvalues * t)
        decay = np.where(np.isfinite(model.eigenvalues), decay, 1.0)
        self._decay = decay

        if index.m is None:
            matrix = np.diag(-index.bound * decay)
        else:
            c_img = model.coefficients(images)
            off = images - model.basis.synthesize(c_img)
            # (I - P_t) images, assembled mode by mode: accurate at any n.
            diffed = model.basis.synthesize(c_img * decay) + off
            cross = np.einsum("pi,i,qi->pq", images, space.weights, diffed)
            matrix = -index.bound * (cross + cross.T) / 2.0
        self.form_data = StageForm(
            index=index,
            matrix=matrix,
            subspace=subspace,
            space=space,
            bound=index.bound,
        )

    # -- the composed projection ------------------------------------------

    def project(self, f: np.ndarray) -> np.ndarray:
        """The composed stage projection of f; batched.

        For the bare-n stage this is the identity (no projection is part
        of that form).
        """
        if self.index.m is None:
            return np.array(f, dtype=float, copy=True)
        c = self.basis.coefficients(f, self.index.m)
        return c @ self.images

    def step_coefficients(self, f: np.ndarray) -> np.ndarray:
        """Cell values of the projection, for fully-indexed stages."""
        if self._cell_values is None:
            raise ValueError("stage has no partition (k not enabled)")
        c = self.basis.coefficients(f, self.index.m)
        return c @ self._cell_values

    # -- form and generator -------------------------------------------------

    def form(self, f: np.ndarray):
        """The stage energy of f; batched over leading axes."""
        g = self.project(f)
        return semigroup_form(self.model, self.index.n, g)

    def generator(self) -> StageForm:
        return self.form_data


def stage_form(
    model: SpectralModel, basis: OrthonormalBasis, index: StageIndex, f: np.ndarray
):
    """Energy of f under the stage at ``index``; see Stage for the stages."""
    return Stage(model, basis, index).form(f)


def stage_generator(
    model: SpectralModel, basis: OrthonormalBasis, index: StageIndex
) -> StageForm:
    """Generator matrix of the stage at ``index`` over its subspace."""
    return Stage(model, basis, index).generator()
