"""Mini-batch training with decoupled-weight-decay Adam.

The loop is bit-reproducible: parameter initialization is fixed by the
encoder config seeds, and each epoch's shuffle comes from a counter-based
Philox generator keyed by (seed, epoch), so the whole trajectory is a pure
function of (seed, data, config). Normalization gains/offsets and biases
are excluded from weight decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoders
from .data import Dataset
from .encoders import EncoderConfig, EncoderParams
from .errors import TrainingDivergedError
from .losses import LossBreakdown, LossConfig, joint_loss_grad


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 4096
    lr: float = 1e-4
    weight_decay: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0

    def validation_errors(self) -> list[str]:
        errs = []
        if self.epochs < 0:
            errs.append(f"epochs: must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            errs.append(f"batch_size: must be positive, got {self.batch_size}")
        if not self.lr >= 0.0:
            errs.append(f"lr: must be nonnegative, got {self.lr}")
        if self.weight_decay < 0.0:
            errs.append(
                f"weight_decay: must be nonnegative, got {self.weight_decay}"
            )
        return errs + self.loss.validation_errors()

    def validate(self) -> "TrainConfig":
        errs = self.validation_errors()
        if errs:
            raise ValueError("invalid train config: " + "; ".join(errs))
        return self


@dataclass
class AdamWState:
    """First/second moment accumulators, shapes mirroring the parameters."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @staticmethod
    def for_arrays(arrays: list[np.ndarray]) -> "AdamWState":
        return AdamWState(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
        )


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamWState,
    cfg: TrainConfig,
    decay: list[bool] | None = None,
) -> AdamWState:
    """One in-place AdamW update over a flat list of parameter arrays.

    Bias-corrected moments; the decoupled decay term lr*wd*p is applied
    only where `decay` is true (everywhere when omitted).
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(
                f"param/grad shape mismatch: {p.shape} vs {g.shape}"
            )
    if decay is None:
        decay = [True] * len(params)
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.adam_beta1 ** t
    bc2 = 1.0 - cfg.adam_beta2 ** t
    for p, g, m, v, dec in zip(params, grads, state.m, state.v, decay):
        m *= cfg.adam_beta1
        m += (1.0 - cfg.adam_beta1) * g
        v *= cfg.adam_beta2
        v += (1.0 - cfg.adam_beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        if dec and cfg.weight_decay != 0.0:
            update = update + cfg.weight_decay * p
        p -= cfg.lr * update
    return state


@dataclass
class TrainResult:
    brain_cfg: EncoderConfig
    text_cfg: EncoderConfig
    brain_params: EncoderParams
    text_params: EncoderParams
    log: list[LossBreakdown]


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Deterministic shuffle for one epoch from a (seed, epoch) Philox key."""
    gen = np.random.Generator(np.random.Philox(key=[seed, epoch]))
    return gen.permutation(n)


def derive_seed(base: int, *path: int) -> int:
    """Stable 32-bit child seed for (base, path) — folds, CV seeds, etc."""
    ss = np.random.SeedSequence(entropy=base, spawn_key=tuple(path))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def train(
    dataset: Dataset,
    brain_cfg: EncoderConfig,
    text_cfg: EncoderConfig,
    cfg: TrainConfig,
    progress=None,
    initial: tuple[EncoderParams, EncoderParams] | None = None,
) -> TrainResult:
    """Train both encoders on `dataset`, returning final parameters and the
    per-epoch loss trajectory.

    `progress`, when given, is called as progress(epoch, LossBreakdown)
    after every epoch. `initial` resumes from existing parameters (the
    optimizer state always starts fresh). Raises TrainingDivergedError with
    (epoch, batch index, components) if any loss turns non-finite.
    """
    cfg.validate()
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if brain_cfg.input_dim != dataset.brain_dim:
        raise ValueError(
            f"brain encoder input_dim {brain_cfg.input_dim} != dataset "
            f"brain_dim {dataset.brain_dim}"
        )
    if text_cfg.input_dim != dataset.text_dim:
        raise ValueError(
            f"text encoder input_dim {text_cfg.input_dim} != dataset "
            f"text_dim {dataset.text_dim}"
        )

    if initial is not None:
        brain_params = initial[0].copy()
        text_params = initial[1].copy()
    else:
        brain_params = encoders.init_params(brain_cfg)
        text_params = encoders.init_params(text_cfg)

    arrays = brain_params.arrays() + text_params.arrays()
    decay = brain_params.decay_mask() + text_params.decay_mask()
    state = AdamWState.for_arrays(arrays)
    batch = min(cfg.batch_size, n)

    log: list[LossBreakdown] = []
    for epoch in range(1, cfg.epochs + 1):
        perm = epoch_permutation(cfg.seed, epoch, n)
        sums = np.zeros(3)
        for bi, start in enumerate(range(0, n, batch)):
            idx = perm[start:start + batch]
            zb, cache_b = encoders.forward_tangent(
                brain_params, dataset.brain[idx]
            )
            zt, cache_t = encoders.forward_tangent(
                text_params, dataset.text[idx]
            )
            breakdown, gvb, gvt = joint_loss_grad(
                zb, zt, dataset.region_counts[idx], cfg.loss
            )
            if not breakdown.finite():
                raise TrainingDivergedError(epoch, bi, breakdown)
            gb, _ = encoders.backward(brain_params, cache_b, gvb)
            gt, _ = encoders.backward(text_params, cache_t, gvt)
            adamw_step(arrays, gb.arrays() + gt.arrays(), state, cfg, decay)
            sums += len(idx) * np.array(
                [breakdown.angle, breakdown.centroid, breakdown.hierarchy]
            )
        mean = sums / n
        record = LossBreakdown.combine(
            mean[0], mean[1], mean[2], cfg.loss.lambda1, cfg.loss.lambda2
        )
        log.append(record)
        if progress is not None:
            progress(epoch, record)
    return TrainResult(brain_cfg, text_cfg, brain_params, text_params, log)
