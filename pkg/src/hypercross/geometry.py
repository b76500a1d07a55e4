"""Lorentz (hyperboloid) model primitives.

A point of the n-dimensional hyperbolic space with curvature magnitude
``c > 0`` is stored as a float64 array of length ``n + 1`` whose first
entry is the time component and whose remaining entries are the space
components, so that ``-x[0]**2 + sum(x[1:]**2) == -1/c`` and ``x[0] > 0``.
Batches stack points along leading axes (``[..., n + 1]``); every function
broadcasts over them.

All operations are pure and run at 64-bit precision. Inverse-cosh and
inverse-cos arguments are clamped silently inside a guard band of 1e-6;
arguments beyond the band raise :class:`NumericalDomainError`, since that
indicates a broken invariant upstream rather than roundoff.
"""

from __future__ import annotations

import numpy as np

from .errors import DegeneratePairError, NumericalDomainError

# Silent-clamp guard band for arccos / arcosh arguments.
GUARD_BAND = 1e-6

# Below this tangent-norm threshold sinh(u)/u switches to its Taylor form.
_SINHC_TAYLOR_CUTOFF = 1e-4

# (c * <x,y>_L)^2 - 1 at or below this marks a coincident pair.
_DEGENERATE_EPS = 1e-12


def time_component(x: np.ndarray) -> np.ndarray:
    return np.asarray(x)[..., 0]


def space_component(x: np.ndarray) -> np.ndarray:
    return np.asarray(x)[..., 1:]


def lorentz_inner(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Lorentzian (Minkowski) inner product -x0*y0 + sum_i xi*yi.

    Broadcasts over leading axes. Raises ValueError on mismatched point
    dimension.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(
            f"dimension mismatch: {x.shape[-1] - 1} vs {y.shape[-1] - 1}"
        )
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


def lift_time(space: np.ndarray, c: float) -> np.ndarray:
    """Attach the time component sqrt(1/c + ||space||^2) to space coordinates.

    The result satisfies the hyperboloid constraint exactly (up to the
    float64 evaluation of the square root).
    """
    _check_curvature(c)
    space = np.asarray(space, dtype=np.float64)
    t = np.sqrt(1.0 / c + np.sum(space * space, axis=-1, keepdims=True))
    return np.concatenate([t, space], axis=-1)


def origin(dim: int, c: float) -> np.ndarray:
    """The hyperboloid origin [1/sqrt(c), 0, ..., 0] with `dim` space axes."""
    return lift_time(np.zeros(dim), c)


def lorentz_distance(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    """Geodesic distance (1/sqrt(c)) * arcosh(-c * <x,y>_L).

    Both points must lie on the same-curvature hyperboloid; an arcosh
    argument below 1 - 1e-6 raises NumericalDomainError.
    """
    _check_curvature(c)
    arg = -c * lorentz_inner(x, y)
    arg = _guarded_arcosh_arg(arg)
    return np.arccosh(arg) / np.sqrt(c)


def _sinhc(u: np.ndarray) -> np.ndarray:
    """sinh(u)/u with the Taylor value 1 + u^2/6 below the cutoff."""
    u = np.asarray(u, dtype=np.float64)
    small = u < _SINHC_TAYLOR_CUTOFF
    safe = np.where(small, 1.0, u)
    return np.where(small, 1.0 + u * u / 6.0, np.sinh(safe) / safe)


def exp_map_origin(z: np.ndarray, c: float) -> np.ndarray:
    """Exponential map at the origin of a tangent vector's space part.

    `z` holds the space coordinates of a tangent vector at the origin
    (time component fixed to 0, so its Lorentzian norm is the Euclidean
    one). The image's space part is sinh(sqrt(c)*||z||)/(sqrt(c)*||z||) * z
    and the time part is recovered via :func:`lift_time`.
    """
    _check_curvature(c)
    z = np.asarray(z, dtype=np.float64)
    u = np.sqrt(c) * np.linalg.norm(z, axis=-1, keepdims=True)
    return lift_time(_sinhc(u) * z, c)


def exp_map(base: np.ndarray, z: np.ndarray, c: float) -> np.ndarray:
    """Exponential map at an arbitrary base point (full ambient tangent).

    Test helper only: production code always lifts from the origin via
    :func:`exp_map_origin`. `z` is a full (n+1)-vector tangent at `base`,
    i.e. <base, z>_L = 0.
    """
    _check_curvature(c)
    base = np.asarray(base, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    norm = np.sqrt(np.maximum(lorentz_inner(z, z), 0.0))[..., None]
    u = np.sqrt(c) * norm
    return np.cosh(u) * base + _sinhc(u) * z


def lorentz_to_klein(x: np.ndarray) -> np.ndarray:
    """Klein-model coordinates space/time of a hyperboloid point."""
    x = np.asarray(x, dtype=np.float64)
    return x[..., 1:] / x[..., 0:1]


def klein_to_lorentz(k: np.ndarray, c: float) -> np.ndarray:
    """Inverse Klein map [1, k] / sqrt(c * (1 - ||k||^2)).

    Raises NumericalDomainError when ||k||^2 >= 1/c or ||k||^2 >= 1 (the
    point is outside the image of the hyperboloid).
    """
    _check_curvature(c)
    k = np.asarray(k, dtype=np.float64)
    sq = np.sum(k * k, axis=-1, keepdims=True)
    if np.any(c * sq >= 1.0) or np.any(sq >= 1.0):
        raise NumericalDomainError(
            "Klein point outside the hyperboloid image (||k||^2 >= 1/c)"
        )
    ambient = np.concatenate([np.ones_like(sq), k], axis=-1)
    return ambient / np.sqrt(c * (1.0 - sq))


def lorentz_factor(k: np.ndarray, c: float) -> np.ndarray:
    """Lorentz factor gamma = 1/sqrt(1 - c*||k||^2) of Klein coordinates."""
    k = np.asarray(k, dtype=np.float64)
    sq = 1.0 - c * np.sum(k * k, axis=-1)
    if np.any(sq <= 0.0):
        raise NumericalDomainError("Lorentz factor undefined: c*||k||^2 >= 1")
    return 1.0 / np.sqrt(sq)


def lorentz_centroid(
    points: np.ndarray, c: float, weights: np.ndarray | None = None
) -> np.ndarray:
    """Lorentzian centroid of `points` (shape (N, n+1)).

    Maps the points to Klein space, averages with gamma-times-user weights
    (user weights default to 1 and must be positive), and maps back. The
    result is permutation-invariant and lies on the hyperboloid.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("centroid requires a non-empty (N, n+1) point array")
    k = lorentz_to_klein(points)
    gamma = lorentz_factor(k, c)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (points.shape[0],):
            raise ValueError("weights must have one entry per point")
        if np.any(weights <= 0.0):
            raise ValueError("weights must be positive")
        gamma = gamma * weights
    mean = (gamma[:, None] * k).sum(axis=0) / gamma.sum()
    return klein_to_lorentz(mean, c)


def exterior_angle(
    z_brain: np.ndarray,
    z_text: np.ndarray,
    c: float,
    degenerate: str = "error",
) -> np.ndarray:
    """Exterior angle of `z_text` seen from `z_brain`, in [0, pi].

    Evaluates arccos((t_text + t_brain*c*l) / (||s_brain|| * sqrt((c*l)^2 - 1)))
    with l the Lorentzian inner product; geometrically this is pi minus the
    interior angle at `z_brain` of the geodesic triangle through the origin.
    A small angle means `z_text` sits radially beyond `z_brain`.

    Coincident pairs and brain points at the origin leave the formula
    undefined; `degenerate="error"` raises DegeneratePairError while
    `degenerate="nan"` returns NaN for the offending entries (callers that
    must stay total, e.g. retrieval scoring, use the latter).

    Broadcasts over leading axes, so pairwise matrices come from
    ``exterior_angle(brains[:, None, :], texts[None, :, :], c)``.
    """
    _check_curvature(c)
    if degenerate not in ("error", "nan"):
        raise ValueError(f"unknown degenerate mode: {degenerate!r}")
    z_brain = np.asarray(z_brain, dtype=np.float64)
    z_text = np.asarray(z_text, dtype=np.float64)
    l = lorentz_inner(z_brain, z_text)
    beta_sq = (c * l) ** 2 - 1.0
    brain_norm = np.linalg.norm(z_brain[..., 1:], axis=-1)
    bad = (beta_sq <= _DEGENERATE_EPS) | (brain_norm <= 1e-12)
    if np.any(bad):
        if degenerate == "error":
            raise DegeneratePairError(
                "exterior angle undefined for coincident points or a brain "
                "embedding at the origin"
            )
        beta_sq = np.where(bad, 1.0, beta_sq)
        brain_norm = np.where(bad, 1.0, brain_norm)
    num = z_text[..., 0] + z_brain[..., 0] * c * l
    arg = num / (brain_norm * np.sqrt(beta_sq))
    if np.any(bad):
        arg = np.where(bad, 0.0, arg)
    angle = np.arccos(_guarded_arccos_arg(arg))
    if np.any(bad):
        angle = np.where(bad, np.nan, angle)
    return angle


def poincare_projection(x: np.ndarray, c: float) -> np.ndarray:
    """Project a hyperboloid point into the unit Poincare disk/ball.

    Uses sqrt(c) * space / (1 + sqrt(c) * time): the origin maps to zero,
    the image norm stays below 1, and the radius grows monotonically with
    the geodesic distance from the origin. Analysis/export only, never part
    of training.
    """
    _check_curvature(c)
    x = np.asarray(x, dtype=np.float64)
    rc = np.sqrt(c)
    return rc * x[..., 1:] / (1.0 + rc * x[..., 0:1])


def hyperboloid_violation(x: np.ndarray, c: float) -> np.ndarray:
    """|<x,x>_L + 1/c| relative to 1/c; ~0 for valid points."""
    return np.abs(lorentz_inner(x, x) + 1.0 / c) * c


def _check_curvature(c: float) -> None:
    if not (c > 0.0) or not np.isfinite(c):
        raise ValueError(f"curvature must be a positive finite real, got {c}")


def _guarded_arcosh_arg(arg: np.ndarray) -> np.ndarray:
    if np.any(arg < 1.0 - GUARD_BAND):
        raise NumericalDomainError(
            "arcosh argument below 1 beyond the guard band; inputs are not "
            "on the same-curvature hyperboloid"
        )
    return np.maximum(arg, 1.0)


def _guarded_arccos_arg(arg: np.ndarray) -> np.ndarray:
    if np.any(np.abs(arg) > 1.0 + GUARD_BAND):
        raise NumericalDomainError(
            "arccos argument beyond the guard band; inputs are not on the "
            "same-curvature hyperboloid"
        )
    return np.clip(arg, -1.0, 1.0)
