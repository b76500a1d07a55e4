"""Training objectives on the hyperboloid and their exact gradients.

Three differentiable terms and their weighted combination:

* angle loss: InfoNCE over negated exterior angles, text candidates in the
  softmax denominator for each brain anchor;
* centroid loss: absolute mismatch between each modality's Lorentzian
  centroid distance-from-origin and a fixed target (arcosh(c*p)/sqrt(c) for
  text, arcosh(c*q)/sqrt(c) for brain, p > q);
* hierarchy loss: pairwise penalty whenever a brain sample activating more
  regions sits at a larger time coordinate than one activating fewer.

Gradients are taken with respect to the pre-projection Euclidean
(tangent) embeddings, i.e. through the origin exponential map and the
derived time component, and are validated against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DegeneratePairError


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters; defaults follow the reference configuration."""

    tau: float = 0.1
    lambda1: float = 0.5
    lambda2: float = 30.0
    p: float = 2.0
    q: float = 0.5
    c: float = 1.0
    symmetric: bool = False

    def validation_errors(self) -> list[str]:
        """Human-readable constraint violations, one per offending key."""
        errs = []
        if not self.tau > 0.0:
            errs.append(f"tau: must be positive, got {self.tau}")
        if self.lambda1 < 0.0:
            errs.append(f"lambda1: must be nonnegative, got {self.lambda1}")
        if self.lambda2 < 0.0:
            errs.append(f"lambda2: must be nonnegative, got {self.lambda2}")
        if not self.c > 0.0:
            errs.append(f"c: curvature must be positive, got {self.c}")
        if not self.p > self.q:
            errs.append(f"p: must exceed q, got p={self.p} q={self.q}")
        if self.lambda1 > 0.0 and self.c > 0.0:
            if self.c * self.p < 1.0:
                errs.append(
                    f"p: centroid target arcosh(c*p) undefined for c*p < 1 "
                    f"(c*p = {self.c * self.p})"
                )
            if self.c * self.q < 1.0:
                errs.append(
                    f"q: centroid target arcosh(c*q) undefined for c*q < 1 "
                    f"(c*q = {self.c * self.q})"
                )
        return errs

    def validate(self) -> "LossConfig":
        errs = self.validation_errors()
        if errs:
            raise ValueError("invalid loss config: " + "; ".join(errs))
        return self


@dataclass(frozen=True)
class LossBreakdown:
    angle: float
    centroid: float
    hierarchy: float
    total: float

    @staticmethod
    def combine(angle: float, centroid: float, hierarchy: float,
                lambda1: float, lambda2: float) -> "LossBreakdown":
        angle, centroid, hierarchy = float(angle), float(centroid), float(hierarchy)
        return LossBreakdown(
            angle=angle,
            centroid=centroid,
            hierarchy=hierarchy,
            total=angle + lambda1 * centroid + lambda2 * hierarchy,
        )

    def finite(self) -> bool:
        return bool(np.isfinite([self.angle, self.centroid,
                                 self.hierarchy, self.total]).all())


@dataclass(frozen=True)
class BatchEmbeddings:
    """Index-aligned hyperboloid embeddings of one batch.

    `brain` and `text` are (N, d+1) point arrays (row i of each is the
    pair for article i); `region_counts` holds the per-sample activated
    region counts used by the hierarchy loss.
    """

    brain: np.ndarray
    text: np.ndarray
    region_counts: np.ndarray

    def __post_init__(self):
        if self.brain.ndim != 2 or self.brain.shape != self.text.shape:
            raise ValueError("brain/text must be equal-shape (N, d+1) arrays")
        if self.region_counts.shape != (self.brain.shape[0],):
            raise ValueError("region_counts must have one entry per sample")

    @property
    def size(self) -> int:
        return self.brain.shape[0]


def embed_batch(brain_tangents: np.ndarray, text_tangents: np.ndarray,
                region_counts: np.ndarray, c: float) -> BatchEmbeddings:
    """Lift pre-projection tangent vectors onto the hyperboloid."""
    return BatchEmbeddings(
        brain=geometry.exp_map_origin(brain_tangents, c),
        text=geometry.exp_map_origin(text_tangents, c),
        region_counts=np.asarray(region_counts),
    )


def angle_matrix(batch: BatchEmbeddings, c: float) -> np.ndarray:
    """(N, N) exterior angles, entry [i, j] = ext(brain_i, text_j)."""
    return geometry.exterior_angle(
        batch.brain[:, None, :], batch.text[None, :, :], c
    )


def infonce_from_angles(angles: np.ndarray, tau: float,
                        symmetric: bool = False) -> float:
    """InfoNCE reduction of an (N, N) angle matrix at temperature tau.

    Row i's positive is column i; the denominator runs over text
    candidates (columns). With `symmetric`, the column-anchored direction
    is averaged in.
    """
    if not tau > 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    angles = np.asarray(angles, dtype=np.float64)
    n = angles.shape[0]
    if angles.shape != (n, n):
        raise ValueError("angle matrix must be square")
    logits = -np.abs(angles) / tau
    diag = np.diagonal(logits)
    loss = float(np.mean(_logsumexp(logits, axis=1) - diag))
    if symmetric:
        col = float(np.mean(_logsumexp(logits, axis=0) - diag))
        loss = 0.5 * (loss + col)
    return loss


def angle_loss(batch: BatchEmbeddings, tau: float, c: float,
               symmetric: bool = False) -> float:
    """Angle-based contrastive loss over one batch (see module docstring)."""
    return infonce_from_angles(angle_matrix(batch, c), tau, symmetric)


def centroid_target_distances(p: float, q: float, c: float) -> tuple[float, float]:
    """Target origin distances (text, brain): arcosh(c*p)/sqrt(c), same for q."""
    if not p > q:
        raise ValueError(f"p must exceed q, got p={p} q={q}")
    if c * p < 1.0 or c * q < 1.0:
        raise ValueError(
            f"centroid targets undefined: need c*p >= 1 and c*q >= 1 "
            f"(got c*p={c * p}, c*q={c * q})"
        )
    rc = np.sqrt(c)
    return float(np.arccosh(c * p) / rc), float(np.arccosh(c * q) / rc)


def centroid_loss(batch: BatchEmbeddings, p: float, q: float, c: float) -> float:
    """Absolute deviation of both modality centroids from their targets."""
    target_text, target_brain = centroid_target_distances(p, q, c)
    o = geometry.origin(batch.brain.shape[1] - 1, c)
    d_text = geometry.lorentz_distance(
        o, geometry.lorentz_centroid(batch.text, c), c
    )
    d_brain = geometry.lorentz_distance(
        o, geometry.lorentz_centroid(batch.brain, c), c
    )
    return float(np.abs(d_text - target_text) + np.abs(d_brain - target_brain))


def hierarchy_loss(batch: BatchEmbeddings) -> float:
    """Structural-hierarchy guidance over brain time components.

    (1/N^2) * sum_{i,j} 1[R_i > R_j] * (R_i - R_j) * max(log(t_i / t_j), 0).
    Zero whenever broader activations already sit at smaller times.
    """
    r = np.asarray(batch.region_counts, dtype=np.float64)
    t = batch.brain[:, 0]
    diff = r[:, None] - r[None, :]
    log_ratio = np.log(t)[:, None] - np.log(t)[None, :]
    active = (diff > 0.0) & (log_ratio > 0.0)
    n = batch.size
    return float(np.sum(diff * log_ratio, where=active, initial=0.0) / (n * n))


def joint_loss(batch: BatchEmbeddings, cfg: LossConfig) -> LossBreakdown:
    """All three objectives plus their weighted combination.

    When lambda1 == 0 and the centroid targets are undefined for the given
    (p, q, c), the dead centroid term is reported as 0 instead of raising,
    so lambda ablations stay runnable under any curvature.
    """
    a = angle_loss(batch, cfg.tau, cfg.c, cfg.symmetric)
    if cfg.lambda1 != 0.0 or _centroid_defined(cfg):
        cent = centroid_loss(batch, cfg.p, cfg.q, cfg.c)
    else:
        cent = 0.0
    h = hierarchy_loss(batch)
    return LossBreakdown.combine(a, cent, h, cfg.lambda1, cfg.lambda2)


def _centroid_defined(cfg: LossConfig) -> bool:
    return cfg.c * cfg.p >= 1.0 and cfg.c * cfg.q >= 1.0


def joint_loss_grad(
    brain_tangents: np.ndarray,
    text_tangents: np.ndarray,
    region_counts: np.ndarray,
    cfg: LossConfig,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Joint loss and its gradient w.r.t. both tangent-vector batches.

    Inputs are the pre-projection Euclidean embeddings (N, d). Returns the
    loss breakdown plus d(total)/d(brain_tangents) and
    d(total)/d(text_tangents), differentiated through the origin
    exponential map and the lifted time component.
    """
    vb = np.asarray(brain_tangents, dtype=np.float64)
    vt = np.asarray(text_tangents, dtype=np.float64)
    batch = embed_batch(vb, vt, region_counts, cfg.c)

    # Accumulated (d/dtime, d/dspace), per modality, treating the lifted
    # components as independent; folded at the end.
    gtb = np.zeros_like(batch.brain[:, 0])
    gsb = np.zeros_like(batch.brain[:, 1:])
    gtt = np.zeros_like(batch.text[:, 0])
    gst = np.zeros_like(batch.text[:, 1:])

    a_val, (a_gtb, a_gsb, a_gtt, a_gst) = _angle_forward_backward(
        batch, cfg.tau, cfg.c, cfg.symmetric
    )
    gtb += a_gtb
    gsb += a_gsb
    gtt += a_gtt
    gst += a_gst

    c_val = 0.0
    if cfg.lambda1 != 0.0:
        target_text, target_brain = centroid_target_distances(
            cfg.p, cfg.q, cfg.c
        )
        ct_val, (ct_gt, ct_gs) = _centroid_side_forward_backward(
            batch.text, target_text, cfg.c
        )
        cb_val, (cb_gt, cb_gs) = _centroid_side_forward_backward(
            batch.brain, target_brain, cfg.c
        )
        c_val = ct_val + cb_val
        gtt += cfg.lambda1 * ct_gt
        gst += cfg.lambda1 * ct_gs
        gtb += cfg.lambda1 * cb_gt
        gsb += cfg.lambda1 * cb_gs
    elif _centroid_defined(cfg):
        c_val = centroid_loss(batch, cfg.p, cfg.q, cfg.c)

    h_val, h_gtb = _hierarchy_forward_backward(batch)
    gtb += cfg.lambda2 * h_gtb

    grad_brain = _exp_map_origin_vjp(vb, batch.brain, gtb, gsb, cfg.c)
    grad_text = _exp_map_origin_vjp(vt, batch.text, gtt, gst, cfg.c)
    breakdown = LossBreakdown.combine(
        a_val, c_val, h_val, cfg.lambda1, cfg.lambda2
    )
    return breakdown, grad_brain, grad_text


# ---------------------------------------------------------------------------
# reverse-mode internals


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def _angle_forward_backward(batch, tau, c, symmetric):
    """Angle loss value and its (time, space) gradients for both modalities."""
    ext = angle_matrix(batch, c)  # validates degeneracy, guard bands
    n = batch.size
    logits = -ext / tau
    diag = np.diagonal(logits)
    loss = float(np.mean(_logsumexp(logits, axis=1) - diag))
    g_ext = (np.eye(n) - _softmax(logits, axis=1)) / (n * tau)
    if symmetric:
        col = float(np.mean(_logsumexp(logits, axis=0) - diag))
        g_col = (np.eye(n) - _softmax(logits, axis=0)) / (n * tau)
        loss = 0.5 * (loss + col)
        g_ext = 0.5 * (g_ext + g_col)
    return loss, _ext_matrix_vjp(batch.brain, batch.text, c, g_ext)


def _ext_matrix_vjp(zb, zt, c, g_ext):
    """Pull an upstream (N, N) gradient over exterior angles back to the
    (time, space) components of both point batches.

    Recomputes the forward intermediates; entries where the arccos argument
    left (-1, 1) get zero gradient (the clamp's subgradient).
    """
    tb, sb = zb[:, 0], zb[:, 1:]
    tt, st = zt[:, 0], zt[:, 1:]
    l = -np.outer(tb, tt) + sb @ st.T
    cl = c * l
    beta = np.sqrt(cl * cl - 1.0)
    nb = np.linalg.norm(sb, axis=1)
    num = tt[None, :] + tb[:, None] * cl
    den = nb[:, None] * beta
    a = num / den

    inside = np.abs(a) < 1.0
    d_a = np.where(inside, g_ext * (-1.0 / np.sqrt(
        np.where(inside, 1.0 - a * a, 1.0))), 0.0)
    q = d_a / den
    d_num = q
    d_den = -q * a
    d_l = d_num * (tb[:, None] * c) + d_den * (nb[:, None] * c * c * l / beta)

    g_tb = np.sum(d_num * cl - d_l * tt[None, :], axis=1)
    g_tt = np.sum(d_num - d_l * tb[:, None], axis=0)
    g_sb = d_l @ st + (np.sum(d_den * beta, axis=1) / nb)[:, None] * sb
    g_st = d_l.T @ sb
    return g_tb, g_sb, g_tt, g_st


def _centroid_side_forward_backward(points, target, c):
    """|d(O, centroid) - target| for one modality, plus (time, space) grads."""
    t, s = points[:, 0], points[:, 1:]
    k = s / t[:, None]
    gamma = geometry.lorentz_factor(k, c)
    total = gamma.sum()
    m = (gamma[:, None] * k).sum(axis=0) / total
    m2 = float(m @ m)
    big_t = 1.0 / np.sqrt(c * (1.0 - m2))
    dist = float(np.arccosh(max(np.sqrt(c) * big_t, 1.0)) / np.sqrt(c))
    resid = dist - target
    loss = abs(resid)

    # d|resid|/ddist -> ddist/dT -> dT/dm; at m = 0 the distance term is
    # non-differentiable, use the zero subgradient.
    if m2 <= 1e-30:
        g_m = np.zeros_like(m)
    else:
        sign = np.sign(resid)
        d_dist_d_t = 1.0 / np.sqrt(c * big_t * big_t - 1.0)
        g_m = sign * d_dist_d_t * (c * big_t ** 3) * m

    coeff = (k - m[None, :]) @ g_m / total
    g_k = (gamma / total)[:, None] * g_m[None, :] \
        + (c * gamma ** 3 * coeff)[:, None] * k
    g_s = g_k / t[:, None]
    g_t = -np.sum(s * g_k, axis=1) / (t * t)
    return loss, (g_t, g_s)


def _hierarchy_forward_backward(batch):
    """Hierarchy loss value and its gradient over brain time components."""
    r = np.asarray(batch.region_counts, dtype=np.float64)
    t = batch.brain[:, 0]
    n = batch.size
    diff = r[:, None] - r[None, :]
    log_ratio = np.log(t)[:, None] - np.log(t)[None, :]
    active = (diff > 0.0) & (log_ratio > 0.0)
    weights = np.where(active, diff, 0.0)
    loss = float(np.sum(weights * np.where(active, log_ratio, 0.0)) / (n * n))
    g_t = (weights.sum(axis=1) - weights.sum(axis=0)) / (n * n * t)
    return loss, g_t


def _exp_map_origin_vjp(v, lifted, g_time, g_space, c):
    """Pull (time, space) gradients back to the pre-projection tangents.

    Folds the derived time component (t = sqrt(1/c + ||s||^2), so
    dt/ds = s/t) into the space gradient, then applies the transpose
    Jacobian of s = sinhc(sqrt(c)*||v||) * v.
    """
    t, s = lifted[:, 0], lifted[:, 1:]
    g_s = g_space + (g_time / t)[:, None] * s

    r = np.linalg.norm(v, axis=1)
    u = np.sqrt(c) * r
    small = u < geometry._SINHC_TAYLOR_CUTOFF
    u_safe = np.where(small, 1.0, u)
    scale = np.where(small, 1.0 + u * u / 6.0, np.sinh(u_safe) / u_safe)
    # d(scale)/dv = coef * v with coef matching each forward branch exactly.
    coef = np.where(
        small, c / 3.0, c * (np.cosh(u_safe) - scale) / (u_safe * u_safe)
    )
    return scale[:, None] * g_s + (coef * np.sum(g_s * v, axis=1))[:, None] * v
