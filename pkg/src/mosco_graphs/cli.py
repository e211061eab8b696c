"""Experiment runner.

Three subcommands share one config surface:

``run``
    Execute the sweep, write ``convergence.csv``, export the configured
    graphs, run the audit battery, and write ``audits.json``.
``verify``
    Run the audit battery alone and print one line per audit.
``export-graph``
    Write the configured (or explicitly requested) stage graphs, in both
    the structured and the plain-text edge-list format.

Outputs are deterministic for a fixed config and seed: records are
sorted before writing, floats are printed with 17 significant digits,
and timing capture is off unless asked for.  ``MOSCO_GRAPHS_THREADS``
caps the sweep worker pool (0 or unset picks a size automatically).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audits import audit_suite
from .config import (
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    default_config,
    load_config,
)
from .convergence import MOSCO_PROXY_NOTE, default_test_battery, iterated_limit_sweep
from .errors import ConfigError
from .graphs import final_stage_graph, write_edge_list, write_graph_json
from .measure import OrthonormalBasis
from .models import (
    MarkovKernelModel,
    SpectralModel,
    builtin_models,
    get_model,
)
from .pipeline import StageIndex

EXIT_OK = 0
EXIT_AUDIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2

CSV_HEADER = "n,m,l,k,lambda,test_vector,resolvent_error,form_value,exact_form,wall_ms"


def _worker_count() -> int:
    raw = os.environ.get("MOSCO_GRAPHS_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(
            f"MOSCO_GRAPHS_THREADS: expected a nonnegative integer, got {raw!r}"
        )
    if value < 0:
        raise ConfigError("MOSCO_GRAPHS_THREADS: expected a nonnegative integer")
    if value == 0:
        return min(8, os.cpu_count() or 1)
    return value


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else default_config()
    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        data = config_to_dict(config)
        data.update(overrides)
        config = config_from_dict(data)
    return config


def _build_model(config: ExperimentConfig) -> SpectralModel:
    model = get_model(config.model, config.resolution, config.modes)
    lmax = model.space.l_max
    if config.grid_l and max(config.grid_l) > lmax:
        raise ConfigError(
            f"grid.l: level {max(config.grid_l)} exceeds the model exhaustion depth {lmax}"
        )
    for ix in config.graph_exports:
        if ix.l is not None and ix.l > lmax:
            raise ConfigError(
                f"graph_exports: exhaustion level {ix.l} exceeds depth {lmax}"
            )
        if ix.m is not None and ix.m > model.n_modes:
            raise ConfigError(
                f"graph_exports: truncation {ix.m} exceeds modes = {model.n_modes}"
            )
    return model


def _build_basis(config: ExperimentConfig, model: SpectralModel) -> OrthonormalBasis:
    if config.basis == "haar":
        return OrthonormalBasis.haar(model.space, model.n_modes)
    return model.basis


def _battery(config: ExperimentConfig, model: SpectralModel, basis: OrthonormalBasis):
    rng = np.random.default_rng(config.seed)
    spec = config.test_vectors
    return default_test_battery(
        model,
        basis,
        rng,
        n_basis=spec.n_basis,
        n_span=spec.n_span,
        n_step=spec.n_step,
        include_constant=spec.include_constant,
    )


def _format(x: float) -> str:
    return f"{x:.17g}"


def _csv_rows(records) -> list[str]:
    def key(r):
        ix = r.index
        return (
            ix.n,
            -1 if ix.m is None else ix.m,
            -1 if ix.l is None else ix.l,
            -1 if ix.k is None else ix.k,
            r.lam,
            r.vector_name,
        )

    rows = []
    for r in sorted(records, key=key):
        ix = r.index
        rows.append(
            ",".join(
                [
                    str(ix.n),
                    "" if ix.m is None else str(ix.m),
                    "" if ix.l is None else str(ix.l),
                    "" if ix.k is None else str(ix.k),
                    _format(r.lam),
                    r.vector_name,
                    _format(r.resolvent_error),
                    _format(r.form_value),
                    _format(r.exact_form),
                    _format(r.wall_ms),
                ]
            )
        )
    return rows


def _write_csv(records, path: Path) -> None:
    lines = [CSV_HEADER] + _csv_rows(records)
    path.write_text("\n".join(lines) + "\n")


def _export_graphs(config: ExperimentConfig, model, basis, out: Path, edge_lists: bool):
    written = []
    for ix in config.graph_exports:
        try:
            graph = final_stage_graph(model, basis, ix)
        except ValueError as exc:
            # Deep time indices can push the truncated kernel past the
            # positivity clamp; surface that as a usage error, not a crash.
            raise ConfigError(f"graph_exports: {ix.label()}: {exc}") from None
        json_path = out / f"graph_{ix.label()}.json"
        write_graph_json(graph, json_path)
        written.append(json_path)
        if edge_lists:
            edges = out / f"graph_{ix.label()}.edges.txt"
            vertices = out / f"graph_{ix.label()}.vertices.txt"
            write_edge_list(graph, edges, vertices)
            written.extend([edges, vertices])
    return written


def _run_audits(config: ExperimentConfig, inject_asymmetry: bool = False):
    zoo = builtin_models(config.resolution, config.modes, seed=config.seed)
    spectral = [m for m in zoo if isinstance(m, SpectralModel)]
    kernels = [m for m in zoo if isinstance(m, MarkovKernelModel)]

    def basis_for(model):
        if config.basis == "haar":
            return OrthonormalBasis.haar(model.space, model.n_modes)
        return model.basis

    rng = np.random.default_rng(config.seed)
    return audit_suite(spectral, kernels, basis_for, rng, inject_asymmetry=inject_asymmetry)


def _audits_json(results) -> str:
    payload = {
        "schema": 1,
        "all_passed": all(r.passed for r in results),
        "proxy_note": MOSCO_PROXY_NOTE,
        "audits": [
            {
                "name": r.name,
                "passed": r.passed,
                "residual": r.residual,
                "tolerance": r.tolerance,
                "detail": r.detail,
            }
            for r in results
        ],
    }
    return json.dumps(payload, indent=1) + "\n"


def cmd_run(args) -> int:
    config = _load(args)
    model = _build_model(config)
    basis = _build_basis(config, model)
    battery = _battery(config, model, basis)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    records = iterated_limit_sweep(
        model,
        basis,
        config.sweep_grid(),
        battery,
        lambdas=config.lambdas,
        max_workers=_worker_count(),
        record_timings=config.record_timings,
    )
    csv_path = out / "convergence.csv"
    _write_csv(records, csv_path)
    print(f"wrote {csv_path} ({len(records)} records)")

    for path in _export_graphs(config, model, basis, out, edge_lists=False):
        print(f"wrote {path}")

    results = _run_audits(config)
    audits_path = out / "audits.json"
    audits_path.write_text(_audits_json(results))
    print(f"wrote {audits_path}")
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(r.line())
    if failed:
        print(f"{len(failed)} audit(s) failed")
        return EXIT_AUDIT_FAILURE
    print(f"all {len(results)} audits passed")
    return EXIT_OK


def cmd_verify(args) -> int:
    config = _load(args)
    results = _run_audits(config, inject_asymmetry=args.inject_asymmetry)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} audit(s) failed")
        return EXIT_AUDIT_FAILURE
    print(f"all {len(results)} audits passed")
    return EXIT_OK


def cmd_export_graph(args) -> int:
    config = _load(args)
    if args.index:
        try:
            parts = [int(p) for p in args.index.split(",")]
        except ValueError:
            raise ConfigError(f"--index: expected n,m,l,k integers, got {args.index!r}")
        if len(parts) != 4:
            raise ConfigError("--index: expected exactly four values n,m,l,k")
        try:
            exports = (StageIndex(*parts),)
        except ValueError as exc:
            raise ConfigError(f"--index: {exc}")
        data = config_to_dict(config)
        data["graph_exports"] = [[ix.n, ix.m, ix.l, ix.k] for ix in exports]
        config = config_from_dict(data)
    model = _build_model(config)
    basis = _build_basis(config, model)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in _export_graphs(config, model, basis, out, edge_lists=True):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mosco-graphs",
        description="Finite-graph approximation experiments for symmetric Markov semigroups.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="JSON config file (defaults built in)")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, metavar="N", help="random seed (overrides config)")

    p_run = sub.add_parser("run", help="sweep, export graphs, audit, write artifacts")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="run the audit battery and report per audit")
    common(p_verify)
    p_verify.add_argument(
        "--inject-asymmetry",
        action="store_true",
        help="corrupt one audit kernel to demonstrate a failing audit",
    )
    p_verify.set_defaults(func=cmd_verify)

    p_export = sub.add_parser("export-graph", help="write stage graphs without a sweep")
    common(p_export)
    p_export.add_argument(
        "--index",
        metavar="N,M,L,K",
        help="export a single stage index instead of the configured list",
    )
    p_export.set_defaults(func=cmd_export_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
