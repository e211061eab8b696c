"""Finite weighted graphs carrying the energy of a Markov operator.

For a symmetric sub-stochastic operator P and a partition into cells
A_1..A_V, the matrix c_ij = <P 1_{A_i}, 1_{A_j}> together with vertex
weights mu_i = mu(A_i) and killing weights kappa_j = mu_j - sum_i c_ij
satisfies, for every step function f = sum_i alpha_i 1_{A_i},

    <f - P f, f>  =  1/2 sum_ij (alpha_i - alpha_j)^2 c_ij
                     + sum_j alpha_j^2 kappa_j.

That identity is what ``verify_identification`` checks and what makes
the final pipeline stage literally a graph energy form.  Graphs built
from a stage carry the stage's 2^n prefactor folded into c and kappa;
the ``scale`` field records it so the bookkeeping sum_i c_ij + kappa_j
= scale * mu_j stays checkable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, SymmetryError
from .measure import AmbientSpace, CellPartition, StepFunction
from .models import MarkovKernelModel, SpectralModel
from .pipeline import Stage, StageIndex
from .measure import OrthonormalBasis

# Conductances smaller than this are treated as numerical zeros in
# exports; genuine edges sit far above it.
EDGE_EPS = 1e-14

# A conductance below -CLAMP_TOL means the operator was not actually
# positivity preserving on the partition; inside the band it is noise.
CLAMP_TOL = 1e-12

# How asymmetric <P 1_A, 1_B> may be before extraction refuses.
EXTRACT_SYM_TOL = 1e-8

# Slack for the killing weights: nonnegative in exact arithmetic.
KILLING_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Vertex weights, symmetric conductances, and killing weights.

    ``scale`` is the prefactor folded into c and kappa relative to the
    generating operator (1 for a plain extraction, 2^n for a stage
    graph); the defect identity reads kappa_j = scale * mu_j - sum_i c_ij.
    ``partition`` optionally remembers which cells the vertices are.
    """

    vertex_weights: np.ndarray
    conductances: np.ndarray
    killing: np.ndarray
    scale: float = 1.0
    partition: CellPartition | None = None

    def __post_init__(self):
        mu = np.array(self.vertex_weights, dtype=float, copy=True)
        c = np.array(self.conductances, dtype=float, copy=True)
        kappa = np.array(self.killing, dtype=float, copy=True)
        v = mu.size
        if mu.ndim != 1 or np.any(mu <= 0):
            raise ValueError("vertex weights must be positive")
        if c.shape != (v, v):
            raise DimensionMismatch(f"conductance matrix must be ({v}, {v})")
        if kappa.shape != (v,):
            raise DimensionMismatch(f"need {v} killing weights")
        if float(np.max(np.abs(c - c.T))) > 1e-12 * max(1.0, float(np.max(np.abs(c)))):
            raise SymmetryError("conductances must form a symmetric matrix")
        if np.min(c) < 0:
            raise ValueError(f"negative conductance {np.min(c):.3e}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if np.min(kappa) < -KILLING_TOL * max(1.0, self.scale):
            raise ValueError(f"killing weight {np.min(kappa):.3e} below tolerance")
        for arr in (mu, c, kappa):
            arr.setflags(write=False)
        object.__setattr__(self, "vertex_weights", mu)
        object.__setattr__(self, "conductances", c)
        object.__setattr__(self, "killing", kappa)

    @property
    def n_vertices(self) -> int:
        return self.vertex_weights.size

    @property
    def is_conservative(self) -> bool:
        return bool(np.max(np.abs(self.killing)) <= KILLING_TOL * max(1.0, self.scale))


def extract_graph(
    operator,
    partition: CellPartition,
    space: AmbientSpace,
    scale: float = 1.0,
    clamp_tol: float = CLAMP_TOL,
    sym_tol: float = EXTRACT_SYM_TOL,
) -> WeightedGraph:
    """Build the weighted graph of an operator over a partition.

    ``operator`` is a MarkovKernelModel or any callable mapping a batch
    of functions (rows) to their images.  Conductances are the pairwise
    quantities <P 1_{A_i}, 1_{A_j}>, symmetrized after checking that the
    asymmetry stays under ``sym_tol`` (relative to the largest entry);
    beyond it the operator is declared not symmetric for the weighted
    inner product.  Entries in (-clamp_tol, 0) are rounded up to zero;
    anything lower raises, since the operator then fails positivity on
    this partition.  ``scale`` multiplies both c and kappa.
    """
    apply = operator.apply if hasattr(operator, "apply") else operator
    indicators = partition.indicator_matrix
    images = np.asarray(apply(indicators), dtype=float)
    if images.shape != indicators.shape:
        raise DimensionMismatch("operator changed the shape of indicator rows")
    c = np.einsum("ix,x,jx->ij", images, space.weights, indicators)
    asym = float(np.max(np.abs(c - c.T)))
    if asym > sym_tol * max(1.0, float(np.max(np.abs(c)))):
        raise SymmetryError(
            f"operator is not symmetric for the weighted inner product "
            f"on this partition (residual {asym:.3e})"
        )
    c = (c + c.T) / 2.0
    low = float(np.min(c))
    if low < -clamp_tol:
        raise ValueError(
            f"conductance {low:.3e} below -{clamp_tol:.1e}; "
            "operator is not positivity preserving at this resolution"
        )
    c = np.maximum(c, 0.0) * scale
    mu = np.asarray(partition.masses, dtype=float)
    kappa = scale * mu - c.sum(axis=0)
    return WeightedGraph(
        vertex_weights=mu,
        conductances=c,
        killing=kappa,
        scale=scale,
        partition=partition,
    )


def graph_energy(graph: WeightedGraph, f) -> float:
    """Energy 1/2 sum_ij (a_i - a_j)^2 c_ij + sum_j a_j^2 kappa_j.

    ``f`` is a StepFunction over the graph's cells or a plain vector of
    per-vertex values.
    """
    if isinstance(f, StepFunction):
        if f.partition.n_cells != graph.n_vertices:
            raise DimensionMismatch(
                f"{f.partition.n_cells} cells against {graph.n_vertices} vertices"
            )
        alpha = f.coefficients
    else:
        alpha = np.asarray(f, dtype=float)
        if alpha.shape != (graph.n_vertices,):
            raise DimensionMismatch(
                f"expected {graph.n_vertices} values, got shape {alpha.shape}"
            )
    diff = alpha[:, None] - alpha[None, :]
    interaction = 0.5 * float(np.sum(graph.conductances * diff**2))
    return interaction + float(np.sum(graph.killing * alpha**2))


@dataclass(frozen=True)
class IdentificationReport:
    """Outcome of checking the energy identity on random step functions."""

    operator_name: str
    n_cells: int
    n_functions: int
    tol: float
    max_residual: float

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def summary(self) -> str:
        verdict = "ok" if self.passed else "FAILED"
        return (
            f"identification[{self.operator_name}] cells={self.n_cells} "
            f"functions={self.n_functions} max_residual={self.max_residual:.3e} "
            f"tol={self.tol:.1e} {verdict}"
        )


def verify_identification(
    kernel: MarkovKernelModel,
    partition: CellPartition | None = None,
    n_functions: int = 100,
    seed: int = 0,
    tol: float = 1e-10,
) -> IdentificationReport:
    """Check <f - P f, f> against the extracted graph energy.

    Uses the site partition when none is given.  The report is
    non-fatal: a residual above tolerance flips ``passed``, it does not
    raise.
    """
    space = kernel.space
    if partition is None:
        partition = CellPartition.singletons(space)
    graph = extract_graph(kernel, partition, space)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_functions):
        alpha = rng.standard_normal(partition.n_cells)
        f = StepFunction(partition, alpha).expand()
        lhs = space.inner(f - kernel.apply(f), f)
        rhs = graph_energy(graph, alpha)
        worst = max(worst, abs(lhs - rhs))
    return IdentificationReport(
        operator_name=kernel.name,
        n_cells=partition.n_cells,
        n_functions=n_functions,
        tol=tol,
        max_residual=worst,
    )


def final_stage_graph(
    model: SpectralModel,
    basis: OrthonormalBasis,
    index: StageIndex,
    clamp_tol: float = CLAMP_TOL,
) -> WeightedGraph:
    """The weighted graph whose energy form is the fully-indexed stage.

    Requires all of n, m, l, k.  The graph lives on the stage's
    restricted level-set partition, with P_{2^-n} in the role of the
    abstract Markov operator and the 2^n generator prefactor folded into
    conductances and killing.  Conditioning drops out of the pairwise
    integrals (averaging is self-adjoint and fixes indicators), so
    c_ij = 2^n <P_{2^-n} 1_{A_i}, 1_{A_j}> directly; the resulting
    energy satisfies graph_energy(step values of the stage projection
    of f) = stage form of f.

    Deep dyadic levels n push the truncated continuum models toward
    positivity violations of size growing with 2^n spectral ringing;
    ``clamp_tol`` is exposed for experiments that need headroom there.
    """
    if index.m is None or index.l is None or index.k is None:
        raise ValueError("final stage graph needs all of n, m, l, k")
    stage = Stage(model, basis, index)
    assert stage.partition is not None
    return extract_graph(
        lambda F: model.apply_semigroup(index.time, F),
        stage.partition,
        model.space,
        scale=index.bound,
        clamp_tol=clamp_tol,
    )


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def graph_to_json_dict(graph: WeightedGraph) -> dict:
    """Structured export: vertex table plus sparse upper-triangle edges.

    Conductances at or below EDGE_EPS are treated as numerical zeros and
    omitted; everything else round-trips bit for bit through repr.
    """
    vertices = [
        {
            "id": i,
            "mu": float(graph.vertex_weights[i]),
            "kappa": float(graph.killing[i]),
        }
        for i in range(graph.n_vertices)
    ]
    edges = []
    for i in range(graph.n_vertices):
        for j in range(i, graph.n_vertices):
            value = float(graph.conductances[i, j])
            if value > EDGE_EPS:
                edges.append({"i": i, "j": j, "c": value})
    return {"scale": float(graph.scale), "vertices": vertices, "edges": edges}


def graph_from_json_dict(data: dict) -> WeightedGraph:
    vertices = data["vertices"]
    v = len(vertices)
    ids = [entry["id"] for entry in vertices]
    if sorted(ids) != list(range(v)):
        raise ValueError("vertex ids must be 0..V-1")
    mu = np.empty(v)
    kappa = np.empty(v)
    for entry in vertices:
        mu[entry["id"]] = entry["mu"]
        kappa[entry["id"]] = entry["kappa"]
    c = np.zeros((v, v))
    for entry in data["edges"]:
        i, j = entry["i"], entry["j"]
        c[i, j] = entry["c"]
        c[j, i] = entry["c"]
    return WeightedGraph(
        vertex_weights=mu,
        conductances=c,
        killing=kappa,
        scale=float(data.get("scale", 1.0)),
    )


def write_graph_json(graph: WeightedGraph, path) -> None:
    Path(path).write_text(
        json.dumps(graph_to_json_dict(graph), indent=1) + "\n"
    )


def read_graph_json(path) -> WeightedGraph:
    return graph_from_json_dict(json.loads(Path(path).read_text()))


def write_edge_list(graph: WeightedGraph, edges_path, vertices_path) -> None:
    """Plain-text export: `i j c_ij` rows and a `i mu_i kappa_i` table.

    The scale rides along as a comment header on both files so the pair
    reconstructs the graph exactly.
    """
    header = f"# scale {graph.scale:.17g}\n"
    with open(edges_path, "w") as fh:
        fh.write(header)
        for i in range(graph.n_vertices):
            for j in range(i, graph.n_vertices):
                value = graph.conductances[i, j]
                if value > EDGE_EPS:
                    fh.write(f"{i} {j} {value:.17g}\n")
    with open(vertices_path, "w") as fh:
        fh.write(header)
        for i in range(graph.n_vertices):
            fh.write(
                f"{i} {graph.vertex_weights[i]:.17g} {graph.killing[i]:.17g}\n"
            )


def read_edge_list(edges_path, vertices_path) -> WeightedGraph:
    def parse(path):
        scale = 1.0
        rows = []
        for line in Path(path).read_text().splitlines():
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                parts = text[1:].split()
                if len(parts) == 2 and parts[0] == "scale":
                    scale = float(parts[1])
                continue
            rows.append(text.split())
        return scale, rows

    scale, vertex_rows = parse(vertices_path)
    v = len(vertex_rows)
    mu = np.empty(v)
    kappa = np.empty(v)
    for row in vertex_rows:
        i = int(row[0])
        mu[i] = float(row[1])
        kappa[i] = float(row[2])
    _, edge_rows = parse(edges_path)
    c = np.zeros((v, v))
    for row in edge_rows:
        i, j, value = int(row[0]), int(row[1]), float(row[2])
        c[i, j] = value
        c[j, i] = value
    return WeightedGraph(
        vertex_weights=mu, conductances=c, killing=kappa, scale=scale
    )
