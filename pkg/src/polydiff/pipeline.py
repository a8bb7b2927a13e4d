"""Stage orchestration with checkpoint files.

Stages run in order ingest -> featurize -> cluster -> pairs -> graph. Each one
reads its upstream checkpoint and writes its own atomically, together with a
``.meta.json`` sidecar recording the stage parameters and the input/output
content hashes. A stage whose sidecar matches is skipped; a stage whose
existing output does not match is refused unless forced.
"""

from __future__ import annotations

import csv
import dataclasses
import difflib
import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import agg, cluster, diffgraph, recordstore, simjoin, textfeat
from . import lsa as lsa_mod
from .parallel import WorkerPool, chunked
from .recordstore import StoreSchema

log = logging.getLogger(__name__)

STAGES = ("ingest", "featurize", "cluster", "pairs", "graph")

FEATURE_SCHEMA = StoreSchema(
    "Features",
    (("primary_key", "string"), ("state", "string"), ("cluster", "int"), ("features", "string")),
)
PAIR_SCHEMA = StoreSchema(
    "ScoredPairs",
    (("pk1", "string"), ("pk2", "string"), ("measure", "string"), ("similarity", "string")),
)

DOCS_PER_TASK = 256


class StageOrderError(RuntimeError):
    pass


class CheckpointConflict(RuntimeError):
    pass


class ProbeError(LookupError):
    def __str__(self):
        return str(self.args[0])


@dataclass
class PipelineConfig:
    workdir: Path = Path("work")
    manifest: Path | None = None
    # features
    dim: int = textfeat.DEFAULT_DIM
    ngram: int = 1
    stoplist: Path | None = None
    # optional concept space
    lsa: bool = False
    lsa_k: int = 100
    lsa_iterations: int = lsa_mod.DEFAULT_ITERATIONS
    # clustering
    k: int = 150
    max_iter: int = 100
    tol: float = 1e-4
    seed: int = 13
    cluster_normalize: bool = True  # k-means on unit-length rows
    # join
    measure: str = "cosine"
    threshold: float = 70.0
    # graph
    damping: float = 0.85
    graph_threshold: float = 70.0
    workers: int = 1

    def __post_init__(self):
        self.workdir = Path(self.workdir)
        if self.manifest is not None:
            self.manifest = Path(self.manifest)
        if self.stoplist is not None:
            self.stoplist = Path(self.stoplist)
        if self.workers < 1:
            raise ValueError(f"worker count must be >= 1, got {self.workers}")
        if self.ngram < 1:
            raise ValueError(f"ngram must be >= 1, got {self.ngram}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.measure not in simjoin.MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}; choose from {simjoin.MEASURES}")
        for name in ("threshold", "graph_threshold"):
            if not 0 <= getattr(self, name) < 100:
                raise ValueError(f"{name} must lie in [0, 100)")

    # checkpoint locations
    @property
    def records(self) -> Path:
        return self.workdir / "records.dps"

    @property
    def features(self) -> Path:
        return self.workdir / "features.dps"

    @property
    def clustered(self) -> Path:
        return self.workdir / "clustered.dps"

    @property
    def kmeans_model(self) -> Path:
        return self.workdir / "kmeans.bin"

    @property
    def lsa_factors(self) -> Path:
        return self.workdir / "lsa.bin"

    @property
    def pairs(self) -> Path:
        return self.workdir / "pairs.dps"

    @property
    def edges(self) -> Path:
        return self.workdir / "graph_edges.csv"

    @property
    def ranks(self) -> Path:
        return self.workdir / "ranks.csv"

    @property
    def groups(self) -> Path:
        return self.workdir / "groups.csv"

    @property
    def state_ranks(self) -> Path:
        return self.workdir / "state_influence.csv"

    def stage_params(self, stage: str) -> dict:
        if stage == "ingest":
            return {}
        if stage == "featurize":
            return {
                "dim": self.dim,
                "ngram": self.ngram,
                "stoplist": _file_hash(self.stoplist) if self.stoplist else "default",
                "lsa": self.lsa,
                "lsa_k": self.lsa_k if self.lsa else None,
                "lsa_iterations": self.lsa_iterations if self.lsa else None,
                "seed": self.seed if self.lsa else None,
            }
        if stage == "cluster":
            return {"k": self.k, "max_iter": self.max_iter, "tol": self.tol, "seed": self.seed,
                    "normalize": self.cluster_normalize}
        if stage == "pairs":
            return {"measure": self.measure, "threshold": self.threshold}
        if stage == "graph":
            return {"damping": self.damping, "graph_threshold": self.graph_threshold}
        raise ValueError(f"unknown stage {stage!r}")


def _coerce(ftype, raw: str):
    t = str(ftype)
    if "bool" in t:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if "int" in t:
        return int(raw)
    if "float" in t:
        return float(raw)
    if "Path" in t:
        return Path(raw) if raw else None
    return raw


def load_config(path=None, **overrides) -> PipelineConfig:
    """key=value config file, then non-None ``overrides`` on top."""
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    values: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{n}: expected key=value")
                key, raw = (s.strip() for s in line.split("=", 1))
                if key not in fields:
                    raise ValueError(f"{path}:{n}: unknown config key {key!r}")
                values[key] = _coerce(fields[key].type, raw)
    values.update({k: v for k, v in overrides.items() if v is not None and k in fields})
    return PipelineConfig(**values)


# ---------------------------------------------------------------------------
# checkpoint bookkeeping


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _manifest_hash(manifest) -> str:
    h = hashlib.sha256(_file_hash(manifest).encode())
    for row in recordstore.read_manifest(manifest):
        h.update(str(row.path).encode("utf-8"))
        h.update(_file_hash(row.path).encode() if row.path.exists() else b"missing")
    return h.hexdigest()


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_path(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    os.close(fd)
    return Path(tmp)


@dataclass
class StageResult:
    stage: str
    output: Path
    skipped: bool
    info: dict = field(default_factory=dict)


def _stage_io(stage: str, config: PipelineConfig) -> tuple[Path, Path]:
    if stage == "ingest":
        if config.manifest is None:
            raise ValueError("ingest needs a manifest path")
        return config.manifest, config.records
    upstream = {"featurize": config.records, "cluster": config.features,
                "pairs": config.clustered, "graph": config.pairs}
    outputs = {"featurize": config.features, "cluster": config.clustered,
               "pairs": config.pairs, "graph": config.edges}
    return upstream[stage], outputs[stage]


def run_stage(stage: str, config: PipelineConfig, force: bool = False) -> StageResult:
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; choose from {STAGES}")
    src, out = _stage_io(stage, config)
    if not src.exists():
        if stage == "ingest":
            raise recordstore.StoreError(f"manifest {src} not found")
        before = STAGES[STAGES.index(stage) - 1]
        raise StageOrderError(f"stage {stage!r} needs {src}; run {before!r} first")
    params = config.stage_params(stage)
    input_hash = _manifest_hash(src) if stage == "ingest" else _file_hash(src)
    meta = {"stage": stage, "params": params, "input_hash": input_hash}
    side = _sidecar(out)
    if out.exists():
        old = json.loads(side.read_text("utf-8")) if side.exists() else None
        unchanged = (
            old is not None
            and old.get("params") == json.loads(json.dumps(params))
            and old.get("input_hash") == input_hash
            and old.get("output_hash") == _file_hash(out)
        )
        if unchanged and not force:
            log.info("%s: checkpoint %s is up to date, skipping", stage, out)
            return StageResult(stage, out, True)
        if not unchanged and not force:
            raise CheckpointConflict(
                f"{out} exists but was produced from different inputs or parameters; use --force"
            )
    config.workdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    info = _RUNNERS[stage](config)
    log.info("%s: wrote %s in %.2fs", stage, out, time.perf_counter() - t0)
    meta["output_hash"] = _file_hash(out)
    _atomic_write_text(side, json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return StageResult(stage, out, False, info)


def run_all(config: PipelineConfig, force: bool = False, until: str = "graph") -> list[StageResult]:
    results = []
    for stage in STAGES[: STAGES.index(until) + 1]:
        results.append(run_stage(stage, config, force=force))
    return results


# ---------------------------------------------------------------------------
# stage bodies


def _do_ingest(config: PipelineConfig) -> dict:
    return {"count": recordstore.ingest(config.manifest, config.records)}


_FEATURIZER: dict = {}


def _install_featurizer(featurizer):
    _FEATURIZER["f"] = featurizer


def _tf_task(rows):
    f = _FEATURIZER["f"]
    vecs = [f.tf(content) for _, _, content in rows]
    return [(pk, state) for pk, state, _ in rows], vecs, textfeat.doc_freq_partial(vecs, f.dim)


def featurize_records(records_path, config: PipelineConfig):
    """(keys, states, tf-idf vectors, idf model) for every record in the store."""
    stop = textfeat.load_stopwords(config.stoplist)
    featurizer = textfeat.Featurizer(config.dim, config.ngram, stop)
    rows = [
        (r["primary_key"], r["state"], r["content"])
        for r in recordstore.read_projected(records_path, ["primary_key", "state", "content"])
    ]
    with WorkerPool(config.workers, _install_featurizer, (featurizer,)) as pool:
        parts = pool.map(_tf_task, chunked(rows, DOCS_PER_TASK))
    if not parts:
        raise recordstore.StoreError(f"{records_path}: no records to featurize")
    n, df = textfeat.combine_doc_freq(p[2] for p in parts)
    idf = textfeat.IdfModel(config.dim, n, df)
    keys, states, vecs = [], [], []
    for meta, tf, _ in parts:
        for (pk, state), v in zip(meta, tf):
            keys.append(pk)
            states.append(state)
            vecs.append(textfeat.apply_idf(idf, v))
    return keys, states, vecs, idf


def _do_featurize(config: PipelineConfig) -> dict:
    keys, states, vecs, _ = featurize_records(config.records, config)
    empty = sum(1 for v in vecs if v.nnz == 0)
    if empty:
        log.warning("featurize: %d document(s) have no features after IDF", empty)
    if config.lsa:
        factors = lsa_mod.truncated_svd(list(zip(keys, vecs)), config.lsa_k, config.lsa_iterations, seed=config.seed)
        lsa_mod.save_factors(config.lsa_factors, factors)
        vecs = [textfeat.SparseVector.from_dense(row) for row in factors.U_rows]
    recordstore.write_store(
        config.features,
        FEATURE_SCHEMA,
        ({"primary_key": k, "state": s, "cluster": -1, "features": v.to_json()} for k, s, v in zip(keys, states, vecs)),
        unique_key="primary_key",
    )
    return {"documents": len(keys), "empty": empty}


def read_features(path) -> tuple[list[str], list[str], list[int], list[textfeat.SparseVector]]:
    keys, states, labels, vecs = [], [], [], []
    for r in recordstore.read_projected(path, FEATURE_SCHEMA):
        keys.append(r["primary_key"])
        states.append(r["state"])
        labels.append(r["cluster"])
        vecs.append(textfeat.SparseVector.from_json(r["features"]))
    return keys, states, labels, vecs


def _do_cluster(config: PipelineConfig) -> dict:
    keys, states, _, vecs = read_features(config.features)
    _, X = lsa_mod.to_csr(zip(keys, vecs))
    if config.cluster_normalize:
        X = cluster.normalize_rows(X)
    model = cluster.kmeans_fit(X, config.k, config.max_iter, config.tol, config.seed, workers=config.workers)
    cluster.save_model(config.kmeans_model, model)
    recordstore.write_store(
        config.clustered,
        FEATURE_SCHEMA,
        (
            {"primary_key": k, "state": s, "cluster": int(c), "features": v.to_json()}
            for k, s, c, v in zip(keys, states, model.labels, vecs)
        ),
        unique_key="primary_key",
    )
    sizes = np.bincount(model.labels, minlength=config.k)
    log.info(
        "cluster: k=%d wcss=%.6g iterations=%d occupancy mean=%.1f sd=%.1f max=%d",
        config.k, model.wcss, model.iterations_run, sizes.mean(), sizes.std(), sizes.max(),
    )
    return {"wcss": model.wcss, "iterations": model.iterations_run}


def load_join_inputs(config: PipelineConfig):
    """Broadcast table and candidate pairs from the clustered checkpoint."""
    keys, states, labels, vecs = read_features(config.clustered)
    if any(c < 0 for c in labels):
        raise recordstore.StoreError(f"{config.clustered}: unclustered rows present")
    keep = [i for i, v in enumerate(vecs) if v.nnz > 0]
    if len(keep) < len(keys):
        log.warning("pairs: skipping %d document(s) without features", len(keys) - len(keep))
    table = simjoin.VectorTable.from_vectors((keys[i], vecs[i]) for i in keep)
    pairs = list(simjoin.candidate_pairs((keys[i], states[i], labels[i]) for i in keep))
    return table, pairs


def write_pairs(path, scored) -> int:
    rows = sorted(scored, key=lambda p: (p.pk_left, p.pk_right))
    return recordstore.write_store(
        path,
        PAIR_SCHEMA,
        ({"pk1": p.pk_left, "pk2": p.pk_right, "measure": p.measure, "similarity": f"{p.similarity:.2f}"} for p in rows),
    )


def read_pairs(path) -> list[tuple[str, str, float]]:
    return [
        (r["pk1"], r["pk2"], float(r["similarity"]))
        for r in recordstore.read_projected(path, ["pk1", "pk2", "similarity"])
    ]


def export_pairs_csv(store, csv_path) -> int:
    rows = read_pairs(store)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pk1", "pk2", "similarity"])
        for a, b, s in rows:
            w.writerow([a, b, f"{s:.2f}"])
    return len(rows)


def _do_pairs(config: PipelineConfig) -> dict:
    table, pairs = load_join_inputs(config)
    total = len(table) * (len(table) - 1) // 2
    log.info("pairs: %d candidates out of %d possible pairs", len(pairs), total)
    t0 = time.perf_counter()
    scored = simjoin.two_sided_join(pairs, table, config.measure, config.threshold, workers=config.workers)
    log.info("pairs: scored in %.2fs, %d above threshold", time.perf_counter() - t0, len(scored))
    n = write_pairs(config.pairs, scored)
    return {"candidates": len(pairs), "kept": n}


def _do_graph(config: PipelineConfig) -> dict:
    g = diffgraph.build_graph(read_pairs(config.pairs), config.graph_threshold)
    tmp = _atomic_path(config.edges)
    diffgraph.write_edges(tmp, g)
    ranks = diffgraph.pagerank(g, config.damping) if g.nodes else {}
    diffgraph.write_ranks(config.ranks, ranks)
    groups = diffgraph.diffusion_groups(g)
    lines = ["group,size,pk"]
    for gid, grp in enumerate(groups):
        lines += [f"{gid},{len(grp)},{pk}" for pk in sorted(grp)]
    _atomic_write_text(config.groups, "\n".join(lines) + "\n")
    states = diffgraph.state_influence(ranks)
    _atomic_write_text(config.state_ranks, "state,rank\n" + "".join(f"{s},{r!r}\n" for s, r in states))
    os.replace(tmp, config.edges)
    return {"nodes": len(g.nodes), "edges": len(g.edges), "groups": len(groups)}


_RUNNERS: dict[str, Callable] = {
    "ingest": _do_ingest,
    "featurize": _do_featurize,
    "cluster": _do_cluster,
    "pairs": _do_pairs,
    "graph": _do_graph,
}


def path_report(config: PipelineConfig, source: str, target: str) -> diffgraph.PathResult:
    if not config.edges.exists():
        raise StageOrderError(f"{config.edges} not found; run 'graph' first")
    g = diffgraph.build_graph(diffgraph.read_edges(config.edges), 0.0)
    return diffgraph.min_cost_path(g, source, target)


# ---------------------------------------------------------------------------
# probe ranking


def format_probe_line(probe_key: str, other: str, similarity: float) -> str:
    return f"{probe_key}, {other}: {similarity:.2f}"


def probe(config: PipelineConfig, probe_key: str, top_n: int | None = None) -> list[tuple[tuple[str, str], float]]:
    """Scored pairs involving ``probe_key``, most similar first; probe key listed first."""
    if not config.pairs.exists():
        raise StageOrderError(f"{config.pairs} not found; run 'pairs' first")
    known_from = config.clustered if config.clustered.exists() else config.records
    if known_from.exists():
        keys = [r["primary_key"] for r in recordstore.read_projected(known_from, ["primary_key"])]
        if probe_key not in set(keys):
            close = difflib.get_close_matches(probe_key, keys, n=5, cutoff=0.5)
            hint = f"; nearest keys: {', '.join(close)}" if close else ""
            raise ProbeError(f"unknown probe key {probe_key!r}{hint}")
    hits = []
    for a, b, s in read_pairs(config.pairs):
        if a == probe_key:
            hits.append(((a, b), s))
        elif b == probe_key:
            hits.append(((b, a), s))
    hits.sort(key=lambda h: (-h[1], h[0][1]))
    return hits[:top_n] if top_n is not None else hits


# ---------------------------------------------------------------------------
# scaling bench


@dataclass
class BenchRow:
    n_workers: int
    wall_time_seconds: float
    efficiency: float


def efficiency(t0: float, n_workers: int, t_n: float) -> float:
    return t0 / (n_workers * t_n)


def bench(config: PipelineConfig, worker_counts, repeats: int = 1) -> list[BenchRow]:
    """Time the scoring loop of the join at several worker counts.

    Pool start-up and the broadcast of the vector table happen before the
    clock starts. With ``repeats > 1`` the fastest run is kept.
    """
    counts = sorted(set(int(w) for w in worker_counts))
    if 1 not in counts:
        raise ValueError("worker_counts must include 1 (single-worker time is the baseline)")
    if any(w < 1 for w in counts):
        raise ValueError("worker counts must be >= 1")
    if not config.clustered.exists():
        raise StageOrderError(f"{config.clustered} not found; run 'cluster' first")
    table, pairs = load_join_inputs(config)
    n_part = max(1, -(-len(pairs) // simjoin.PAIRS_PER_PARTITION))
    n_part = max(n_part, 4 * max(counts))
    times = {}
    reference = None
    for w in counts:
        best = float("inf")
        for _ in range(repeats):
            with WorkerPool(w, simjoin._install_table, (table,)) as pool:
                pool.warm_up()
                t0 = time.perf_counter()
                out = simjoin.two_sided_join(
                    pairs, table, config.measure, config.threshold, pool=pool, n_partitions=n_part
                )
                best = min(best, time.perf_counter() - t0)
            result = {(p.pk_left, p.pk_right, p.similarity) for p in out}
            if reference is None:
                reference = result
            elif result != reference:
                raise RuntimeError(f"join output at {w} workers differs from the 1-worker output")
        times[w] = best
        log.info("bench: %d worker(s) %.3fs", w, best)
    t0 = times[1]
    rows = [BenchRow(w, times[w], efficiency(t0, w, times[w])) for w in counts]
    for r in rows:
        if r.n_workers == 4:
            log.info("bench: E(4) = %.3f (target >= 0.6 on a 4-core machine; %d cpu(s) here)",
                     r.efficiency, os.cpu_count() or 1)
    return rows


def write_bench(rows: list[BenchRow], csv_path, svg_path=None) -> None:
    lines = ["n_workers,wall_time_seconds,efficiency"]
    lines += [f"{r.n_workers},{r.wall_time_seconds:.6f},{r.efficiency:.6f}" for r in rows]
    _atomic_write_text(Path(csv_path), "\n".join(lines) + "\n")
    if svg_path is not None:
        _atomic_write_text(Path(svg_path), render_efficiency_svg(rows))


def render_efficiency_svg(rows: list[BenchRow]) -> str:
    W, H, ml, mr, mt, mb = 480, 320, 60, 20, 30, 50
    pw, ph = W - ml - mr, H - mt - mb
    xmax = max(r.n_workers for r in rows)
    ymax = max(1.1, max(r.efficiency for r in rows) * 1.05)

    def xy(r):
        x = ml + (pw * (r.n_workers - 1) / (xmax - 1) if xmax > 1 else pw / 2)
        return x, mt + ph - ph * r.efficiency / ymax

    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in map(xy, rows))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<polyline points="{pts}" fill="none" stroke="#2c3e50" stroke-width="2"/>',
    ]
    for r in rows:
        x, y = xy(r)
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="#2c3e50"/>')
        out.append(f'<text x="{x:.2f}" y="{mt + ph + 16}" text-anchor="middle">{r.n_workers}</text>')
    out.append(f'<text x="{ml - 6}" y="{mt + ph - ph / ymax + 4:.2f}" text-anchor="end">1.0</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{H - 12}" text-anchor="middle">Workers</text>')
    out.append(f'<text x="14" y="{mt + ph / 2}" transform="rotate(-90 14 {mt + ph / 2})" text-anchor="middle">Efficiency</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# similarity distribution report


def similarity_histogram(pairs_path, state: str | None = None, chunk: int = 4096) -> agg.Bin:
    """Bin(20, 0, 100) of pair similarities, optionally only pairs touching ``state``.

    Filled per chunk and combined, the same way a partitioned run would do it.
    """
    template = agg.Bin(20, 0, 100, "similarity")
    rows = [
        {"pk1": a, "pk2": b, "similarity": s}
        for a, b, s in read_pairs(pairs_path)
        if state is None or state in (recordstore.state_of(a), recordstore.state_of(b))
    ]
    total = template.zero()
    for part in chunked(rows, chunk):
        h = template.zero()
        for r in part:
            h.fill(r)
        total = total + h
    return total
