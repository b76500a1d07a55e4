"""Dataset schema, binary container, and the synthetic paired-data generator.

A dataset is N index-aligned (brain feature vector, text feature vector)
pairs plus each sample's region count: the number of brain coefficients
strictly greater than the threshold delta. Region counts are always
recomputable from the stored vectors, and loaders verify that.

On-disk container (little-endian): magic ``MNMDATA1``, u32 version, u32 N,
u32 B, u32 T, f64 delta, then N records of B f64 brain values, T f64 text
values, and a u32 region count. A JSON-lines import path (one object per
line with ``brain`` and ``text`` arrays) recomputes counts on ingest.

The synthetic generator builds a rooted tree of latent regions whose
coordinate supports strictly nest (ancestors activate every coordinate
their descendants do, plus their own block), giving ground-truth hierarchy
for the structural analyses; each node owns one text prototype that its
samples perturb, so one region maps to several distinct texts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"MNMDATA1"
FORMAT_VERSION = 1
DEFAULT_DELTA = 5.0

_HEADER = struct.Struct("<4Id")  # version, N, B, T, delta (after magic)


@dataclass(frozen=True)
class PairedSample:
    brain: np.ndarray
    text: np.ndarray
    region_count: int


@dataclass
class Dataset:
    brain: np.ndarray  # (N, B) float64
    text: np.ndarray  # (N, T) float64
    region_counts: np.ndarray  # (N,) uint32
    delta: float
    provenance: str = ""

    def __post_init__(self):
        self.brain = np.ascontiguousarray(self.brain, dtype=np.float64)
        self.text = np.ascontiguousarray(self.text, dtype=np.float64)
        self.region_counts = np.ascontiguousarray(
            self.region_counts, dtype=np.uint32
        )
        if self.brain.ndim != 2 or self.text.ndim != 2:
            raise ValidationError("brain/text must be (N, dim) matrices")
        if self.brain.shape[0] != self.text.shape[0]:
            raise ValidationError("brain/text sample counts differ")
        if self.region_counts.shape != (self.brain.shape[0],):
            raise ValidationError("region_counts must have one entry per sample")

    def __len__(self) -> int:
        return self.brain.shape[0]

    @property
    def brain_dim(self) -> int:
        return self.brain.shape[1]

    @property
    def text_dim(self) -> int:
        return self.text.shape[1]

    def sample(self, i: int) -> PairedSample:
        return PairedSample(
            self.brain[i].copy(), self.text[i].copy(),
            int(self.region_counts[i]),
        )

    def samples(self) -> list[PairedSample]:
        return [self.sample(i) for i in range(len(self))]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(
            brain=self.brain[idx].copy(),
            text=self.text[idx].copy(),
            region_counts=self.region_counts[idx].copy(),
            delta=self.delta,
            provenance=self.provenance,
        )


def compute_region_count(brain: np.ndarray, delta: float) -> int:
    """Count of entries strictly greater than delta."""
    brain = np.asarray(brain, dtype=np.float64)
    if not np.isfinite(brain).all():
        raise ValidationError("brain vector contains non-finite values")
    return int(np.sum(brain > delta))


def region_counts(brain_matrix: np.ndarray, delta: float) -> np.ndarray:
    return np.sum(np.asarray(brain_matrix) > delta, axis=1).astype(np.uint32)


def make_dataset(brain, text, delta: float, provenance: str = "") -> Dataset:
    """Assemble a dataset, deriving region counts from (brain, delta)."""
    brain = np.ascontiguousarray(brain, dtype=np.float64)
    return Dataset(
        brain=brain,
        text=np.ascontiguousarray(text, dtype=np.float64),
        region_counts=region_counts(brain, delta),
        delta=delta,
        provenance=provenance,
    )


def _record_dtype(b: int, t: int) -> np.dtype:
    return np.dtype(
        [("brain", "<f8", (b,)), ("text", "<f8", (t,)), ("rc", "<u4")]
    )


def save_dataset(dataset: Dataset, path) -> None:
    n, b, t = len(dataset), dataset.brain_dim, dataset.text_dim
    rec = np.empty(n, dtype=_record_dtype(b, t))
    rec["brain"] = dataset.brain
    rec["text"] = dataset.text
    rec["rc"] = dataset.region_counts
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(FORMAT_VERSION, n, b, t, dataset.delta))
        fh.write(rec.tobytes())


def load_dataset(path) -> Dataset:
    """Parse and validate a binary dataset container.

    Rejects bad magic/version and truncated or oversized payloads with
    FormatError; non-finite values, or stored region counts inconsistent
    with the stored delta, raise ValidationError (naming the first bad
    record).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, n, b, t, delta = _HEADER.unpack_from(blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if b < 1 or t < 1:
        raise FormatError(f"{path}: invalid dimensions B={b} T={t}")
    dtype = _record_dtype(b, t)
    expected = len(MAGIC) + _HEADER.size + n * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload size {len(blob)} != expected {expected}"
        )
    rec = np.frombuffer(blob, dtype=dtype, count=n, offset=len(MAGIC) + _HEADER.size)
    brain = rec["brain"].astype(np.float64)
    text = rec["text"].astype(np.float64)
    if not np.isfinite(delta):
        raise ValidationError(f"{path}: non-finite delta")
    if not np.isfinite(brain).all() or not np.isfinite(text).all():
        raise ValidationError(f"{path}: non-finite feature values")
    stored = rec["rc"].astype(np.uint32)
    recomputed = region_counts(brain, delta)
    bad = np.nonzero(stored != recomputed)[0]
    if bad.size:
        i = int(bad[0])
        raise ValidationError(
            f"{path}: stored region_count {int(stored[i])} at record {i} "
            f"disagrees with recomputed {int(recomputed[i])} for delta={delta}"
        )
    return Dataset(
        brain=brain, text=text, region_counts=stored, delta=float(delta),
        provenance=str(path),
    )


def import_jsonl(path, delta: float = DEFAULT_DELTA) -> Dataset:
    """Read one JSON object per line with `brain` and `text` arrays.

    Region counts are recomputed from delta; ragged rows or non-finite
    values are rejected.
    """
    brains, texts = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if not isinstance(obj, dict) or "brain" not in obj or "text" not in obj:
                raise ValidationError(
                    f"{path}:{lineno}: object must have 'brain' and 'text'"
                )
            brains.append(np.asarray(obj["brain"], dtype=np.float64))
            texts.append(np.asarray(obj["text"], dtype=np.float64))
    if not brains:
        raise ValidationError(f"{path}: no records")
    b0, t0 = brains[0].shape, texts[0].shape
    for i, (bv, tv) in enumerate(zip(brains, texts)):
        if bv.shape != b0 or tv.shape != t0:
            raise ValidationError(f"{path}: record {i} has inconsistent dims")
    brain = np.stack(brains)
    text = np.stack(texts)
    if not np.isfinite(brain).all() or not np.isfinite(text).all():
        raise ValidationError(f"{path}: non-finite feature values")
    return make_dataset(brain, text, delta, provenance=str(path))


@dataclass(frozen=True)
class SyntheticSpec:
    tree_depth: int = 3
    branching: int = 2
    samples_per_node: int = 10
    noise_sigma: float = 0.5
    seed: int = 0
    brain_dim: int = 64
    text_dim: int = 64
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.tree_depth < 1 or self.branching < 1 or self.samples_per_node < 1:
            raise ValueError("tree_depth/branching/samples_per_node must be >= 1")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.brain_dim < self.node_count:
            raise ValueError(
                f"brain_dim {self.brain_dim} too small for {self.node_count} "
                "tree nodes (need >= one coordinate per node)"
            )

    @property
    def node_count(self) -> int:
        return sum(self.branching ** l for l in range(self.tree_depth))

    @property
    def sample_count(self) -> int:
        return self.node_count * self.samples_per_node


def _tree_children(spec: SyntheticSpec) -> list[list[int]]:
    """Child index lists for breadth-first node numbering."""
    children: list[list[int]] = [[] for _ in range(spec.node_count)]
    level_start, nodes_in_level = 0, 1
    for _ in range(spec.tree_depth - 1):
        next_start = level_start + nodes_in_level
        for i in range(nodes_in_level):
            node = level_start + i
            base = next_start + i * spec.branching
            children[node] = list(range(base, base + spec.branching))
        level_start, nodes_in_level = next_start, nodes_in_level * spec.branching
    return children


def _node_supports(spec: SyntheticSpec) -> list[np.ndarray]:
    """Per-node activated coordinate sets; each strictly contains its
    children's (ancestors own their whole subtree's blocks)."""
    children = _tree_children(spec)
    block = spec.brain_dim // spec.node_count
    supports: list[np.ndarray | None] = [None] * spec.node_count
    for node in reversed(range(spec.node_count)):
        own = np.arange(node * block, (node + 1) * block)
        sub = [supports[ch] for ch in children[node]]
        supports[node] = np.concatenate([own] + sub) if sub else own
    return [np.sort(s) for s in supports]


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Seed-deterministic hierarchical paired dataset.

    Brain vectors carry 2*delta on their node's support and sigma-scaled
    Gaussian noise elsewhere; text vectors are the node prototype plus
    per-sample noise. With zero noise the region count strictly decreases
    along every root-to-leaf path.
    """
    rng = np.random.default_rng(spec.seed)
    supports = _node_supports(spec)
    prototypes = rng.normal(size=(spec.node_count, spec.text_dim))
    brain = np.empty((spec.sample_count, spec.brain_dim))
    text = np.empty((spec.sample_count, spec.text_dim))
    row = 0
    for node in range(spec.node_count):
        for _ in range(spec.samples_per_node):
            bv = spec.noise_sigma * rng.normal(size=spec.brain_dim)
            bv[supports[node]] = 2.0 * spec.delta
            brain[row] = bv
            text[row] = prototypes[node] + spec.noise_sigma * rng.normal(
                size=spec.text_dim
            )
            row += 1
    return make_dataset(
        brain, text, spec.delta,
        provenance=(
            f"synthetic(depth={spec.tree_depth},branching={spec.branching},"
            f"per_node={spec.samples_per_node},sigma={spec.noise_sigma},"
            f"seed={spec.seed})"
        ),
    )


def kfold_split(dataset: Dataset, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic k-fold partition: disjoint exhaustive test folds whose
    sizes differ by at most one."""
    n = len(dataset)
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        test = np.sort(perm[start:start + size])
        train = np.sort(np.concatenate([perm[:start], perm[start + size:]]))
        folds.append((train, test))
        start += size
    return folds
