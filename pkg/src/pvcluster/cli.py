"""Command line entry point: ``pvcluster {synth,embed,cluster,grid,impute}``.

Exit codes: 0 success, 1 runtime or data error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import agglomerative, distance, evaluation, grid, ingest, lda, pipeline, synth, wording
from .config import ConfigError, RunConfig, build_config, config_keys

logger = logging.getLogger("pvcluster")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
SEEDED = ("synth", "embed", "grid")


class RunError(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_inputs(cfg: RunConfig):
    for p in (cfg.data_path, cfg.metadata_path):
        if not p.exists():
            raise ConfigError(f"input file not found: {p}")
    table = ingest.load_table(cfg.data_path, cfg.missing_tokens)
    meta = ingest.load_metadata(cfg.metadata_path)
    return table, meta


# --- subcommands -------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    table, meta, labels = synth.generate(cfg.synth_config())
    paths = synth.write_fleet(table, meta, labels, cfg.out)
    print(f"wrote {table.n_systems} systems x {table.n_steps} steps to {paths['series']}")
    return EXIT_OK


def cmd_embed(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "embed.incomplete"
    marker.write_text("embedding run started\n")
    try:
        table, meta = _load_inputs(cfg)
        _, profile_sets = pipeline.prepare(table, meta, cfg.profile_len, cfg.normalization)
        with (out / "profiles.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["system_id", "n_u", "n_total_days", "excluded"])
            for p in profile_sets:
                w.writerow([p.system_id, p.n_u, p.n_total_days, int(p.excluded)])

        signature = {
            "W": cfg.W, "seed": cfg.seed, "profile_len": cfg.profile_len,
            "normalization": cfg.normalization, "data_sha256": _sha256(cfg.data_path),
            "metadata_sha256": _sha256(cfg.metadata_path),
            "kmeans_max_iter": cfg.kmeans_max_iter, "kmeans_tol": cfg.kmeans_tol,
        }
        vocab = None
        vocab_path = out / "vocabulary.csv"
        if vocab_path.exists() and vocab_path.with_suffix(".json").exists():
            cached, sidecar = wording.load_vocabulary(vocab_path)
            if all(sidecar.get(k) == v for k, v in signature.items()):
                logger.info("reusing cached vocabulary %s", vocab_path)
                vocab = cached
        run = pipeline.embed_profiles(
            profile_sets, cfg.K, cfg.W, cfg.alpha, cfg.seed, vocabulary=vocab,
            kmeans_max_iter=cfg.kmeans_max_iter, kmeans_tol=cfg.kmeans_tol,
            lda_max_iter=cfg.lda_max_iter, lda_tol=cfg.lda_tol,
        )
        if vocab is None:
            wording.save_vocabulary(run.vocabulary, vocab_path, {k: v for k, v in signature.items() if k not in ("W", "seed")})
        wording.save_documents(run.documents, cfg.W, out / "documents.csv")
        lda.save_model(run.model, out / "lda_model.csv")
        lda.save_embeddings(run.embeddings, out / "embeddings.csv")
    except Exception:
        marker.write_text("embedding run failed; artifacts in this directory may be partial\n")
        raise
    marker.unlink()
    print(f"embedded {len(run.embeddings)} systems (K={cfg.K}, W={cfg.W}); excluded: {len(run.excluded)}")
    return EXIT_OK


def cmd_cluster(cfg: RunConfig) -> int:
    out = cfg.out
    emb_path = out / "embeddings.csv"
    if not emb_path.exists():
        raise ConfigError(f"no embeddings at {emb_path}; run 'embed' first")
    table, meta = _load_inputs(cfg)
    norm = ingest.normalize_by_capacity(table, meta, cfg.normalization)
    embeddings = lda.load_embeddings(emb_path)
    ids = [e.system_id for e in embeddings]
    unknown = [s for s in ids if s not in norm.system_ids]
    if unknown:
        raise RunError(f"embeddings reference systems absent from the data: {', '.join(unknown)}")
    if cfg.C > len(ids):
        raise ConfigError(f"C={cfg.C} exceeds the {len(ids)} embedded systems")

    dist, assignment = pipeline.cluster_embeddings(embeddings, cfg.C, cfg.metric, cfg.linkage)
    distance.save_distance_matrix(dist, out / "distance.csv")
    agglomerative.save_assignment(assignment, out / "assignment.csv")
    agglomerative.save_merge_trace(assignment, out / "merge_trace.csv")

    sub = norm.subset(ids)
    summaries_dir = out / "summaries"
    summaries_dir.mkdir(exist_ok=True)
    for old in summaries_dir.glob("cluster_*.csv"):
        old.unlink()
    for summary in evaluation.cluster_summaries(sub, assignment, cfg.quantiles):
        evaluation.save_summary(summary, sub.timestamps, summaries_dir / f"cluster_{summary.cluster_label}.csv")

    K = len(embeddings[0].gamma)
    rows = []
    failure = None
    disp = evaluation.dispersion_score(sub, assignment, cfg.quantiles)
    sens = None
    if cfg.sensitivity:
        try:
            sens = evaluation.sensitivity_score(sub, assignment, cfg.quantiles)
        except evaluation.SingletonClusterError as exc:
            failure = str(exc)
    rows.append((f"entity|C={cfg.C}|K={K}|{cfg.metric}|{cfg.linkage}", disp, sens))

    if cfg.baseline:
        base = agglomerative.baseline_angle_kmeans(meta, cfg.C, cfg.seed, ids)
        agglomerative.save_assignment(base, out / "baseline_assignment.csv")
        b_disp = evaluation.dispersion_score(sub, base, cfg.quantiles)
        b_sens = None
        if cfg.sensitivity and base.sizes().min() >= 2:
            b_sens = evaluation.sensitivity_score(sub, base, cfg.quantiles)
        rows.append((f"angle_kmeans|C={cfg.C}|seed={cfg.seed}", b_disp, b_sens))
    evaluation.save_scores(rows, out / "scores.csv")

    for sid, d, s in rows:
        print(f"{sid}: S_disp={evaluation.format_score(d) or 'n/a'} S_sens={evaluation.format_score(s) or 'n/a'}")
    if failure:
        raise RunError(failure)
    return EXIT_OK


def cmd_grid(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    table, meta = _load_inputs(cfg)
    norm, profile_sets = pipeline.prepare(table, meta, cfg.profile_len, cfg.normalization)
    try:
        hyper = grid.HyperGrid(
            cfg.C_values, cfg.K_values, cfg.W_values, cfg.metrics, cfg.linkages,
            cfg.seeds if cfg.seeds else (cfg.seed,),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    usable = [p.system_id for p in profile_sets if not p.excluded]
    results = grid.run_grid(
        norm.subset(usable), profile_sets, hyper, cfg.quantiles, cfg.alpha,
        ledger_path=out / "grid_results.csv", jobs=cfg.jobs, timing=cfg.timing,
        kmeans_max_iter=cfg.kmeans_max_iter, kmeans_tol=cfg.kmeans_tol,
        lda_max_iter=cfg.lda_max_iter, lda_tol=cfg.lda_tol,
    )
    n_valid = sum(r.valid for r in results)
    print(f"{len(results)} settings, {n_valid} valid")
    if not n_valid:
        raise RunError("no valid settings: every setting produced a cluster with fewer than two members")
    chosen = grid.save_selection(results, out / "selection.csv")
    print(f"selected C = {chosen}")
    return EXIT_OK


def impute_series(norm_values: np.ndarray, labels: np.ndarray, row: int, q: float):
    """Fill the gaps of series ``row`` from its cluster peers' q-quantile.

    Returns (filled normalized series, imputed mask, unfilled mask).
    """
    x = norm_values[row]
    peers = np.flatnonzero((labels == labels[row]) & (np.arange(len(labels)) != row))
    gaps = np.isnan(x)
    fill = np.full(x.shape, np.nan)
    if peers.size:
        fill = evaluation.summarize_cluster(norm_values[peers], [q]).values[:, 0]
    filled = x.copy()
    imputed = gaps & ~np.isnan(fill)
    filled[imputed] = fill[imputed]
    return filled, imputed, gaps & np.isnan(fill)


def cmd_impute(cfg: RunConfig) -> int:
    if not cfg.system_id:
        raise ConfigError("impute needs --system_id")
    out = cfg.out
    assign_path = out / "assignment.csv"
    if not assign_path.exists():
        raise ConfigError(f"no assignment at {assign_path}; run 'cluster' first")
    table, meta = _load_inputs(cfg)
    assignment = agglomerative.load_assignment(assign_path)
    if cfg.system_id not in assignment.system_ids:
        raise RunError(f"system {cfg.system_id} is not part of the clustering (excluded or unknown)")
    scale = ingest.capacity_scale(table, meta, cfg.normalization)
    rows = [table.index_of(s) for s in assignment.system_ids]
    norm_values = table.values[rows] / scale[rows, None]
    r = assignment.system_ids.index(cfg.system_id)
    filled, imputed, unfilled = impute_series(norm_values, assignment.labels, r, cfg.impute_q)

    raw = table.values[rows[r]]
    power = raw.copy()
    power[imputed] = filled[imputed] * scale[rows[r]]
    path = out / f"imputed_{cfg.system_id}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "power", "imputed"])
        for stamp, v, flag in zip(table.timestamps, power, imputed):
            w.writerow([
                str(np.datetime_as_string(stamp, unit="m")),
                "" if np.isnan(v) else repr(float(v)),
                int(flag),
            ])
    with (out / f"impute_report_{cfg.system_id}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["system_id", "cluster_label", "quantile", "missing_cells", "imputed_cells", "unfilled_cells"])
        w.writerow([
            cfg.system_id, int(assignment.labels[r]), repr(cfg.impute_q),
            int(np.isnan(raw).sum()), int(imputed.sum()), int(unfilled.sum()),
        ])
    print(f"{cfg.system_id}: imputed {int(imputed.sum())} cells, {int(unfilled.sum())} left missing -> {path}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "embed": cmd_embed,
    "cluster": cmd_cluster,
    "grid": cmd_grid,
    "impute": cmd_impute,
}


HELP = {
    "synth": "write a seeded synthetic fleet (series, metadata, ground truth)",
    "embed": "profiles -> vocabulary -> documents -> Dirichlet embeddings",
    "cluster": "distance matrix, agglomerative clusters, quantile summaries, scores",
    "grid": "hyperparameter grid with a resumable ledger and C selection",
    "impute": "fill one system's gaps from its cluster peers",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvcluster", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="TOML run config; flags override its keys")
        for key in config_keys():
            if key == "seed":
                p.add_argument("--seed", required=name in SEEDED, help="RNG seed")
            else:
                p.add_argument(f"--{key}", dest=key, default=None, metavar="VALUE")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {k: getattr(args, k) for k in config_keys()}
    try:
        cfg = build_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, ingest.DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
