"""Graph extraction, the energy identity, and the export formats."""
import numpy as np
import pytest

from mosco_graphs import (
    AmbientSpace,
    CellPartition,
    DimensionMismatch,
    MarkovKernelModel,
    Stage,
    StageIndex,
    StepFunction,
    SymmetryError,
    WeightedGraph,
    birth_death_kernel,
    birth_death_model,
    extract_graph,
    final_stage_graph,
    graph_energy,
    level_partition,
    neumann_model,
    random_kernel_model,
    read_edge_list,
    read_graph_json,
    verify_identification,
    write_edge_list,
    write_graph_json,
)


def two_site_kernel(p_matrix):
    space = AmbientSpace(
        np.array([0.0, 1.0]),
        np.array([1.0, 1.0]),
        (np.array([0]), np.array([0, 1])),
    )
    return MarkovKernelModel(name="pair", space=space, kernel=np.asarray(p_matrix))


class TestHandComputedGraphs:
    def test_symmetric_mixing_pair(self):
        kernel = two_site_kernel([[0.5, 0.5], [0.5, 0.5]])
        graph = extract_graph(
            kernel, CellPartition.singletons(kernel.space), kernel.space
        )
        assert np.allclose(graph.conductances, 0.5 * np.ones((2, 2)), atol=1e-14)
        assert np.allclose(graph.vertex_weights, [1.0, 1.0])
        assert np.max(np.abs(graph.killing)) <= 1e-14
        assert graph.is_conservative
        # f = (1, 0): <f - Pf, f> = 0.5 by hand, and the edge term alone
        # carries it.
        assert graph_energy(graph, np.array([1.0, 0.0])) == pytest.approx(0.5)

    def test_identity_kernel_has_loops_only(self):
        kernel = two_site_kernel(np.eye(2))
        graph = extract_graph(
            kernel, CellPartition.singletons(kernel.space), kernel.space
        )
        assert np.allclose(graph.conductances, np.eye(2), atol=1e-14)
        assert np.max(np.abs(graph.killing)) <= 1e-14
        for alpha in ([1.0, 0.0], [2.0, -3.0], [1.0, 1.0]):
            assert graph_energy(graph, np.array(alpha)) == pytest.approx(0.0, abs=1e-13)

    def test_uniform_killing_shows_up_in_kappa(self):
        delta = 0.25
        kernel = two_site_kernel((1.0 - delta) * np.eye(2))
        graph = extract_graph(
            kernel, CellPartition.singletons(kernel.space), kernel.space
        )
        assert np.allclose(graph.killing, delta * graph.vertex_weights)
        assert not graph.is_conservative
        alpha = np.array([2.0, 1.0])
        assert graph_energy(graph, alpha) == pytest.approx(
            delta * float(np.sum(alpha**2)), rel=1e-12
        )

    def test_callable_and_kernel_agree(self):
        kernel = two_site_kernel([[0.25, 0.5], [0.5, 0.25]])
        part = CellPartition.singletons(kernel.space)
        via_model = extract_graph(kernel, part, kernel.space)
        via_callable = extract_graph(kernel.apply, part, kernel.space)
        assert np.array_equal(via_model.conductances, via_callable.conductances)
        assert np.array_equal(via_model.killing, via_callable.killing)


class TestGraphValidation:
    def test_rejects_malformed_data(self):
        mu = np.array([1.0, 2.0])
        c = np.array([[0.0, 0.3], [0.3, 0.0]])
        kappa = np.zeros(2)
        WeightedGraph(vertex_weights=mu, conductances=c, killing=kappa)
        with pytest.raises(ValueError, match="positive"):
            WeightedGraph(vertex_weights=np.array([1.0, 0.0]), conductances=c, killing=kappa)
        with pytest.raises(SymmetryError):
            WeightedGraph(
                vertex_weights=mu,
                conductances=np.array([[0.0, 0.3], [0.2, 0.0]]),
                killing=kappa,
            )
        with pytest.raises(ValueError, match="negative conductance"):
            WeightedGraph(
                vertex_weights=mu,
                conductances=np.array([[0.0, -0.3], [-0.3, 0.0]]),
                killing=kappa,
            )
        with pytest.raises(ValueError, match="killing"):
            WeightedGraph(vertex_weights=mu, conductances=c, killing=np.array([-1.0, 0.0]))
        with pytest.raises(ValueError, match="scale"):
            WeightedGraph(vertex_weights=mu, conductances=c, killing=kappa, scale=0.0)
        with pytest.raises(DimensionMismatch):
            WeightedGraph(vertex_weights=mu, conductances=np.zeros((3, 3)), killing=kappa)

    def test_energy_input_forms(self):
        kernel = two_site_kernel([[0.5, 0.5], [0.5, 0.5]])
        part = CellPartition.singletons(kernel.space)
        graph = extract_graph(kernel, part, kernel.space)
        alpha = np.array([1.5, -0.5])
        as_step = graph_energy(graph, StepFunction(part, alpha))
        as_vector = graph_energy(graph, alpha)
        assert as_step == as_vector
        with pytest.raises(DimensionMismatch):
            graph_energy(graph, np.ones(3))

    def test_energy_is_nonnegative(self):
        rng = np.random.default_rng(41)
        kernel = random_kernel_model(10, rng, conservative=False)
        graph = extract_graph(
            kernel, CellPartition.singletons(kernel.space), kernel.space
        )
        for _ in range(50):
            assert graph_energy(graph, rng.standard_normal(10)) >= -1e-10


class TestExtractionGuards:
    def test_asymmetric_operator_is_refused(self):
        space = AmbientSpace(
            np.arange(4.0), np.ones(4), (np.arange(4),)
        )
        part = CellPartition.singletons(space)
        shift = lambda F: np.roll(F, 1, axis=-1)
        with pytest.raises(SymmetryError, match="not symmetric"):
            extract_graph(shift, part, space)

    def test_negativity_inside_the_band_is_clipped(self):
        space = AmbientSpace(np.arange(3.0), np.ones(3), (np.arange(3),))
        part = CellPartition.singletons(space)
        graph = extract_graph(lambda F: -1e-13 * F, part, space)
        assert np.min(graph.conductances) == 0.0

    def test_negativity_beyond_the_band_raises(self):
        space = AmbientSpace(np.arange(3.0), np.ones(3), (np.arange(3),))
        part = CellPartition.singletons(space)
        with pytest.raises(ValueError, match="positivity"):
            extract_graph(lambda F: -1e-6 * F, part, space)
        # A wider band turns the same operator into a clip.
        graph = extract_graph(lambda F: -1e-6 * F, part, space, clamp_tol=1e-5)
        assert np.min(graph.conductances) == 0.0


class TestIdentification:
    def test_random_kernels_on_singletons(self):
        rng = np.random.default_rng(43)
        for conservative in (True, False):
            for sites in (2, 5, 17):
                kernel = random_kernel_model(sites, rng, conservative=conservative)
                report = verify_identification(kernel, n_functions=40, seed=3)
                assert report.passed, report.summary()
                assert report.max_residual <= 1e-12

    def test_coarse_partitions_work_too(self):
        rng = np.random.default_rng(45)
        kernel = random_kernel_model(12, rng, conservative=True)
        cells = [np.arange(0, 4), np.arange(4, 5), np.arange(5, 12)]
        part = CellPartition.from_cells(kernel.space, cells)
        report = verify_identification(kernel, partition=part, n_functions=40)
        assert report.passed
        assert report.n_cells == 3

    def test_conservative_kernels_balance_columns(self):
        rng = np.random.default_rng(47)
        kernel = random_kernel_model(9, rng, conservative=True)
        graph = extract_graph(
            kernel, CellPartition.singletons(kernel.space), kernel.space
        )
        assert graph.is_conservative
        colsums = graph.conductances.sum(axis=0)
        assert np.max(np.abs(colsums - graph.vertex_weights)) <= 1e-10

    def test_report_flags_failures_without_raising(self):
        kernel = two_site_kernel([[0.5, 0.5], [0.5, 0.5]])
        report = verify_identification(kernel, n_functions=5, tol=1e-30)
        assert not report.passed
        assert "FAILED" in report.summary()


class TestChainGraphs:
    def test_one_step_chain_is_exactly_tridiagonal(self):
        kernel = birth_death_kernel(32)
        graph = extract_graph(
            kernel, CellPartition.singletons(kernel.space), kernel.space
        )
        offsets = np.abs(np.arange(32)[:, None] - np.arange(32)[None, :])
        assert np.max(graph.conductances[offsets > 1]) <= 1e-15
        near = graph.conductances[offsets == 1]
        assert np.min(near) > 0.0

    def test_semigroup_chain_keeps_neighbors_dominant(self):
        model = birth_death_model(sites=32)
        t = 2.0**-6
        graph = extract_graph(
            lambda F: model.apply_semigroup(t, F),
            CellPartition.singletons(model.space),
            model.space,
        )
        offsets = np.abs(np.arange(32)[:, None] - np.arange(32)[None, :])
        near = np.min(graph.conductances[offsets == 1])
        far = np.max(graph.conductances[offsets > 1])
        assert far < 0.1 * near


class TestFinalStageGraphs:
    def test_partial_index_is_refused(self):
        model = neumann_model(128, 8)
        for index in (StageIndex(4), StageIndex(4, 6), StageIndex(4, 6, 2)):
            with pytest.raises(ValueError, match="all of n, m, l, k"):
                final_stage_graph(model, model.basis, index)

    def test_energy_form_is_the_stage_form(self):
        model = neumann_model(256, 16)
        rng = np.random.default_rng(49)
        for index in (StageIndex(4, 8, 4, 3), StageIndex(6, 10, 2, 4)):
            stage = Stage(model, model.basis, index)
            graph = final_stage_graph(model, model.basis, index)
            assert graph.scale == index.bound
            for _ in range(25):
                f = rng.standard_normal(256)
                alpha = stage.step_coefficients(f)
                assert graph_energy(graph, alpha) == pytest.approx(
                    stage.form(f), rel=1e-9, abs=1e-9
                )

    def test_constants_cost_nothing_at_full_mask(self):
        model = birth_death_model(sites=32)
        index = StageIndex(4, 8, model.space.l_max, 2)
        stage = Stage(model, model.basis, index)
        graph = final_stage_graph(model, model.basis, index)
        alpha = stage.step_coefficients(model.space.constant())
        assert graph_energy(graph, alpha) <= 1e-10

    def test_coarse_energies_live_inside_fine_graphs(self):
        # Evaluating a coarse step function on the finer graph must give
        # the same number: both sides equal the operator's energy of the
        # same ambient function.
        model = neumann_model(256, 12)
        t = 2.0**-4
        apply = lambda F: model.apply_semigroup(t, F)
        coarse = level_partition(model.basis, 6, 2)
        fine = level_partition(model.basis, 6, 3)
        assert fine.refines(coarse)
        g_coarse = extract_graph(apply, coarse, model.space)
        g_fine = extract_graph(apply, fine, model.space)
        owner = np.array(
            [coarse.point_to_cell[cell[0]] for cell in fine.cells]
        )
        rng = np.random.default_rng(51)
        for _ in range(20):
            alpha = rng.standard_normal(coarse.n_cells)
            lifted = alpha[owner]
            assert graph_energy(g_fine, lifted) == pytest.approx(
                graph_energy(g_coarse, alpha), rel=1e-9, abs=1e-12
            )


class TestExports:
    def make_graph(self):
        model = neumann_model(256, 16)
        return final_stage_graph(model, model.basis, StageIndex(4, 8, 4, 3))

    def test_json_round_trip_is_exact(self, tmp_path):
        graph = self.make_graph()
        path = tmp_path / "graph.json"
        write_graph_json(graph, path)
        back = read_graph_json(path)
        assert back.scale == graph.scale
        assert np.array_equal(back.vertex_weights, graph.vertex_weights)
        assert np.array_equal(back.killing, graph.killing)
        kept = np.where(graph.conductances > 1e-14, graph.conductances, 0.0)
        assert np.array_equal(back.conductances, kept)

    def test_edge_list_round_trip_is_exact(self, tmp_path):
        graph = self.make_graph()
        edges = tmp_path / "edges.txt"
        vertices = tmp_path / "vertices.txt"
        write_edge_list(graph, edges, vertices)
        for path in (edges, vertices):
            first = path.read_text().splitlines()[0]
            assert first == f"# scale {graph.scale:.17g}"
        back = read_edge_list(edges, vertices)
        assert back.scale == graph.scale
        assert np.array_equal(back.vertex_weights, graph.vertex_weights)
        assert np.array_equal(back.killing, graph.killing)
        kept = np.where(graph.conductances > 1e-14, graph.conductances, 0.0)
        assert np.array_equal(back.conductances, kept)

    def test_dropped_edges_are_numerical_dust(self, tmp_path):
        graph = self.make_graph()
        path = tmp_path / "graph.json"
        write_graph_json(graph, path)
        back = read_graph_json(path)
        rng = np.random.default_rng(53)
        for _ in range(20):
            alpha = rng.standard_normal(graph.n_vertices)
            assert graph_energy(back, alpha) == pytest.approx(
                graph_energy(graph, alpha), rel=1e-9, abs=1e-9
            )
