"""Retrieval, hierarchy, and activation-scoring analyses.

Similarity between a brain and a text embedding is the negated absolute
exterior angle, with the brain embedding always in the parent slot of the
angle regardless of query direction. Retrieval quality is recall@K under
lowest-index tie-breaking; hierarchy quality is the tie-corrected (tau-b)
Kendall correlation between brain time components and region counts.

Evaluation is total: degenerate pairs score the worst similarity (-pi) and
are tallied in the diagnostics instead of aborting.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import encoders, geometry
from .data import Dataset, kfold_split
from .encoders import EncoderConfig, EncoderParams
from .errors import UndefinedCorrelationError
from .training import TrainConfig, derive_seed, train

DIRECTIONS = ("text_to_brain", "brain_to_text")


@dataclass
class SimilarityMatrix:
    """(N_query, N_candidate) similarities; higher means more similar.

    Row/column order follows the sample order of the query/candidate
    batches passed in, so index i is the true match of query i whenever
    both sides come from the same index-aligned dataset.
    """

    values: np.ndarray
    direction: str
    degenerate_pairs: int = 0


def _neg_abs_angles(brain_pts, text_pts, c):
    """-(|ext|) for every (brain, text) pair; NaNs from degenerate pairs
    become -pi (worst similarity) and are counted."""
    ext = geometry.exterior_angle(
        brain_pts[:, None, :], text_pts[None, :, :], c, degenerate="nan"
    )
    bad = np.isnan(ext)
    sims = -np.abs(np.where(bad, np.pi, ext))
    return sims, int(bad.sum())


def similarity_matrix(brain_pts: np.ndarray, text_pts: np.ndarray,
                      direction: str, c: float) -> SimilarityMatrix:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    sims, degenerate = _neg_abs_angles(brain_pts, text_pts, c)
    if direction == "text_to_brain":
        sims = sims.T.copy()  # queries are texts, candidates brains
    return SimilarityMatrix(sims, direction, degenerate)


def recall_at_k(sim: SimilarityMatrix | np.ndarray, k: int,
                true_indices: np.ndarray | None = None) -> float:
    """Percentage of queries whose true match ranks in the top k.

    The true match of query i defaults to candidate i. Ties at the cutoff
    are broken toward lower candidate indices.
    """
    values = sim.values if isinstance(sim, SimilarityMatrix) else np.asarray(sim)
    nq, nc = values.shape
    if not 1 <= k <= nc:
        raise ValueError(f"k must be in [1, {nc}], got {k}")
    if true_indices is None:
        if nq != nc:
            raise ValueError("non-square matrix requires explicit true_indices")
        true_indices = np.arange(nq)
    rows = np.arange(nq)
    s_true = values[rows, true_indices]
    better = np.sum(values > s_true[:, None], axis=1)
    tied_before = np.sum(
        (values == s_true[:, None])
        & (np.arange(nc)[None, :] < true_indices[:, None]),
        axis=1,
    )
    ranks = better + tied_before + 1
    return float(np.mean(ranks <= k) * 100.0)


def retrieval_recalls(brain_pts: np.ndarray, text_pts: np.ndarray,
                      ks, c: float):
    """Both-direction recall@K for index-aligned embedding batches.

    Returns ({direction: {k: recall}}, skipped_ks, degenerate_pairs);
    any K exceeding the candidate count is skipped.
    """
    sims, degenerate = _neg_abs_angles(brain_pts, text_pts, c)
    n = sims.shape[0]
    out = {d: {} for d in DIRECTIONS}
    skipped = []
    for k in ks:
        if k > n:
            skipped.append(int(k))
            continue
        out["brain_to_text"][int(k)] = recall_at_k(sims, k)
        out["text_to_brain"][int(k)] = recall_at_k(sims.T.copy(), k)
    return out, skipped, degenerate


def _embed_dataset(dataset, brain_cfg, brain_params, text_cfg, text_params, c):
    zb, _ = encoders.forward(brain_params, dataset.brain, c)
    zt, _ = encoders.forward(text_params, dataset.text, c)
    return zb, zt


def _null_embeddings(n: int, dim: int, c: float, seed: int):
    rng = np.random.default_rng(seed)
    zb = geometry.exp_map_origin(rng.normal(size=(n, dim)), c)
    zt = geometry.exp_map_origin(rng.normal(size=(n, dim)), c)
    return zb, zt


def cross_validated_retrieval(
    dataset: Dataset,
    brain_cfg: EncoderConfig,
    text_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    k_folds: int = 10,
    ks=(5, 10, 100),
    null_model: bool = False,
    threads: int = 1,
    progress=None,
):
    """Per-fold retrain-and-retrieve protocol.

    Each fold trains fresh encoders on its train split (seeds derived from
    (train_cfg.seed, fold)), embeds its test split, and scores recall@K in
    both directions; `null_model` skips training and embeds the test split
    with seed-derived random tangent vectors instead (the chance-level
    control). Ks larger than a fold's test size are skipped and reported.

    Returns a dict with per-direction {k: {mean, std, per_fold}} (sample
    standard deviation), skipped ks, fold sizes, and the degenerate-pair
    tally.
    """
    folds = kfold_split(dataset, k_folds, train_cfg.seed)

    def run_fold(fi):
        try:
            return _run_fold(fi)
        except Exception as exc:
            exc.args = (f"fold {fi}: {exc}",)
            raise

    def _run_fold(fi):
        train_idx, test_idx = folds[fi]
        test = dataset.subset(test_idx)
        if null_model:
            zb, zt = _null_embeddings(
                len(test), brain_cfg.output_dim, train_cfg.loss.c,
                derive_seed(train_cfg.seed, fi, 9),
            )
        else:
            fold_train_cfg = replace(
                train_cfg, seed=derive_seed(train_cfg.seed, fi, 0)
            )
            result = train(
                dataset.subset(train_idx),
                replace(brain_cfg, seed=derive_seed(train_cfg.seed, fi, 1)),
                replace(text_cfg, seed=derive_seed(train_cfg.seed, fi, 2)),
                fold_train_cfg,
            )
            zb, zt = _embed_dataset(
                test, brain_cfg, result.brain_params,
                text_cfg, result.text_params, train_cfg.loss.c,
            )
        recalls, skipped, degenerate = retrieval_recalls(
            zb, zt, ks, train_cfg.loss.c
        )
        if progress is not None:
            progress(fi, recalls)
        return recalls, skipped, degenerate, len(test_idx)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_fold, range(k_folds)))
    else:
        results = [run_fold(fi) for fi in range(k_folds)]

    report = {d: {} for d in DIRECTIONS}
    skipped_all = sorted({k for _, sk, _, _ in results for k in sk})
    for direction in DIRECTIONS:
        for k in ks:
            per_fold = [
                r[direction][k] for r, _, _, _ in results if k in r[direction]
            ]
            if not per_fold:
                continue
            arr = np.asarray(per_fold)
            report[direction][int(k)] = {
                "mean": float(arr.mean()),
                "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                "per_fold": [float(v) for v in per_fold],
            }
    report["skipped_ks"] = skipped_all
    report["fold_sizes"] = [int(sz) for _, _, _, sz in results]
    report["degenerate_pairs"] = int(sum(d for _, _, d, _ in results))
    return report


def kendall_tau(time_values, region_counts) -> float:
    """Tie-corrected Kendall's tau-b between two equal-length sequences.

    (concordant - discordant) / sqrt((n0 - n1) * (n0 - n2)) over all pairs,
    with n1/n2 the tied-pair counts of each variable. Raises
    UndefinedCorrelationError when either variable is entirely tied.
    """
    x = np.asarray(time_values, dtype=np.float64)
    y = np.asarray(region_counts, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("inputs must be equal-length 1-D with >= 2 entries")
    n = x.size
    n0 = n * (n - 1) // 2
    n1 = _tied_pairs(x)
    n2 = _tied_pairs(y)
    if n0 == n1 or n0 == n2:
        raise UndefinedCorrelationError(
            "Kendall's tau undefined: a variable is constant"
        )
    concordant_minus_discordant = 0.0
    chunk = 512
    for start in range(0, n - 1, chunk):
        stop = min(start + chunk, n - 1)
        xi = x[start:stop, None]
        yi = y[start:stop, None]
        # only pairs (i, j) with j > i; mask the lower triangle of the chunk
        xj = x[None, start + 1:]
        yj = y[None, start + 1:]
        valid = np.arange(start + 1, n)[None, :] > np.arange(start, stop)[:, None]
        prod = np.sign(xi - xj) * np.sign(yi - yj)
        concordant_minus_discordant += float(np.sum(prod, where=valid))
    return concordant_minus_discordant / math.sqrt(
        float(n0 - n1) * float(n0 - n2)
    )


def _tied_pairs(v: np.ndarray) -> int:
    _, counts = np.unique(v, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def basis_similarity_scores(text_embedding: np.ndarray, basis: np.ndarray,
                            c: float) -> np.ndarray:
    """Softmax over per-basis similarities for one text embedding.

    `basis` is (M, d+1) hyperboloid points occupying the brain (parent)
    slot of the exterior angle. Output sums to 1.
    """
    basis = np.asarray(basis)
    if basis.ndim != 2 or basis.shape[0] == 0:
        raise ValueError("basis must be a non-empty (M, d+1) array")
    sims, _ = _neg_abs_angles(basis, np.asarray(text_embedding)[None, :], c)
    return _softmax_1d(sims[:, 0])


def basis_similarity_matrix(text_pts: np.ndarray, basis: np.ndarray,
                            c: float) -> np.ndarray:
    """Row-wise softmax basis scores for a batch of texts: (N, M)."""
    sims, _ = _neg_abs_angles(basis, text_pts, c)  # (M, N)
    z = sims.T
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _softmax_1d(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def top_percentile_mask(scores, fraction: float = 0.10) -> np.ndarray:
    """Boolean mask of the ceil(fraction * M) highest scores.

    Ties at the cutoff go to lower indices (stable sort).
    """
    scores = np.asarray(scores)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty 1-D array")
    m = math.ceil(fraction * scores.size)
    order = np.argsort(-scores, kind="stable")
    mask = np.zeros(scores.size, dtype=bool)
    mask[order[:m]] = True
    return mask


# ---------------------------------------------------------------------------
# exports (comma-delimited, one-line header) and the JSON report


def _fmt(v: float) -> str:
    return repr(float(v))


def export_poincare(embeddings: np.ndarray, labels, path, c: float) -> None:
    """Write per-embedding 2-D Poincare-disk coordinates.

    Embeddings with more than two space axes are reduced to the two of
    greatest variance across the exported set (re-lifted onto the 2-D
    hyperboloid) before projecting.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[1] < 3:
        raise ValueError("need (N, d+1) embeddings with space dimension >= 2")
    labels = list(labels)
    if len(labels) != embeddings.shape[0]:
        raise ValueError("one label per embedding required")
    coords = poincare_coords_2d(embeddings, c)
    lines = ["label,x,y"]
    for label, (px, py) in zip(labels, coords):
        lines.append(f"{label},{_fmt(px)},{_fmt(py)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def poincare_coords_2d(embeddings: np.ndarray, c: float) -> np.ndarray:
    space = np.asarray(embeddings)[:, 1:]
    if space.shape[1] > 2:
        var = space.var(axis=0)
        axes = np.argsort(-var, kind="stable")[:2]
        space = space[:, axes]
    return geometry.poincare_projection(geometry.lift_time(space, c), c)


def export_time_hierarchy(times, counts, path) -> None:
    """Write (x_time, region_count) pairs for histogram/correlation plots."""
    times = np.asarray(times, dtype=np.float64)
    counts = np.asarray(counts)
    if times.shape != counts.shape:
        raise ValueError("times and counts must align")
    lines = ["x_time,region_count"]
    for t, r in zip(times, counts):
        lines.append(f"{_fmt(t)},{int(r)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class EvalReport:
    recall: dict = field(default_factory=dict)
    tau: float | None = None
    basis_scores: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "recall": self.recall,
            "tau": self.tau,
            "basis_scores": self.basis_scores,
            "diagnostics": self.diagnostics,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
