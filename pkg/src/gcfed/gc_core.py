"""Gradient-centralization operators.

A gradient tensor for a weight group is centralized by removing, for every
output channel, the mean taken over the remaining ("input side") axes.
Equivalently the tensor is projected onto the hyperplane orthogonal to the
normalized all-ones vector of the reduced axes. Both formulations are
implemented: ``centralize_mean_sub`` is the production path,
``centralize_project`` literally forms the projection matrix so the two can
be cross-checked against each other.

Storage conventions: fully-connected weights are ``[F_out, F_in]``, conv
weights are ``[C_out, C_in, K_h, K_w]``. The default reduction produces a
mean of shape ``[F_out, 1]`` / ``[C_out, 1, 1, 1]``. Four alternative
reductions exist solely for the mean-axis ablation; for 2-D tensors only
the default and the transposed variant differ, the rest degrade to the
default.

Biases and other 1-D parameter groups are never centralized; a reduction
of length one would zero the tensor, so it is skipped with a warning.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NotCentralizableError

log = logging.getLogger(__name__)

# Reduced axes per mode, keyed by tensor rank. The mode name spells out the
# axes the mean *varies* over; everything else is averaged away.
_CONV_MODES = {
    "per_out": (1, 2, 3),
    "per_out_in": (2, 3),
    "per_out_spatial": (1,),
    "per_out_in_kh": (3,),
    "per_in_spatial": (0,),
}

AXIS_MODES = tuple(_CONV_MODES)
DEFAULT_AXIS_MODE = "per_out"


@dataclass(frozen=True)
class ProjectionSpec:
    """Selects which axes the centralizing mean is taken over.

    ``axis_mode`` must be one of :data:`AXIS_MODES`. Centralization applies
    to weight tensors only; callers are expected to skip bias vectors.
    """

    axis_mode: str = DEFAULT_AXIS_MODE

    def __post_init__(self):
        if self.axis_mode not in _CONV_MODES:
            raise ConfigError(
                f"unknown gc axis mode {self.axis_mode!r}; expected one of {AXIS_MODES}"
            )

    def reduced_axes(self, ndim: int) -> tuple:
        """Axes averaged over for a tensor of the given rank."""
        if ndim < 2:
            raise NotCentralizableError(
                f"centralization is defined on tensors with >= 2 dimensions, got {ndim}"
            )
        if ndim == 2:
            # Only the transposed variant is meaningful for matrices; the
            # other ablation modes degrade to the default reduction.
            if self.axis_mode == "per_in_spatial":
                return (0,)
            return (1,)
        if ndim != 4:
            # Generic tensors: reduce everything but the leading output axis
            # unless the transposed variant asks for the opposite.
            if self.axis_mode == "per_in_spatial":
                return (0,)
            return tuple(range(1, ndim))
        return _CONV_MODES[self.axis_mode]


DEFAULT_SPEC = ProjectionSpec()


def reduction_length(shape, spec: ProjectionSpec = DEFAULT_SPEC) -> int:
    """Number of entries averaged together for one mean component."""
    axes = spec.reduced_axes(len(shape))
    m = 1
    for a in axes:
        m *= shape[a]
    return m


def is_centralizable(tensor: np.ndarray, spec: ProjectionSpec = DEFAULT_SPEC) -> bool:
    """True when the tensor has rank >= 2 and a non-degenerate reduction."""
    if tensor.ndim < 2:
        return False
    return reduction_length(tensor.shape, spec) >= 2


def mu_vector(tensor: np.ndarray, spec: ProjectionSpec = DEFAULT_SPEC) -> np.ndarray:
    """Per-channel mean of the gradient, broadcastable to the input shape."""
    axes = spec.reduced_axes(tensor.ndim)
    return tensor.mean(axis=axes, keepdims=True)


def centralize_mean_sub(tensor: np.ndarray, spec: ProjectionSpec = DEFAULT_SPEC) -> np.ndarray:
    """Subtract the per-channel mean from the tensor.

    Tensors with a length-1 reduction are returned unchanged (centralizing
    would zero them out entirely).
    """
    axes = spec.reduced_axes(tensor.ndim)
    if reduction_length(tensor.shape, spec) < 2:
        log.warning(
            "skipping centralization of tensor with shape %s: reduction length 1",
            tensor.shape,
        )
        return tensor.copy()
    return tensor - tensor.mean(axis=axes, keepdims=True)


def centralize_project(tensor: np.ndarray, spec: ProjectionSpec = DEFAULT_SPEC) -> np.ndarray:
    """Centralize by explicitly applying the hyperplane projection matrix.

    The reduced axes are flattened into a single dimension of length ``m``
    and the matrix ``I_m - (1/m) * ones`` is applied along it. Numerically
    equivalent to :func:`centralize_mean_sub`; kept as an independent code
    path for equivalence testing.
    """
    axes = spec.reduced_axes(tensor.ndim)
    m = reduction_length(tensor.shape, spec)
    if m < 2:
        log.warning(
            "skipping centralization of tensor with shape %s: reduction length 1",
            tensor.shape,
        )
        return tensor.copy()
    kept = tuple(a for a in range(tensor.ndim) if a not in axes)
    moved = np.moveaxis(tensor, axes, tuple(range(len(axes))))
    flat = moved.reshape(m, -1)
    projector = np.eye(m) - np.full((m, m), 1.0 / m)
    projected = projector @ flat
    out = projected.reshape(moved.shape)
    out = np.moveaxis(out, tuple(range(len(axes))), axes)
    # moveaxis round-trips the layout; kept axes stay in place by construction
    assert out.shape == tensor.shape, (out.shape, tensor.shape, kept)
    return out


def select_local_layers(layer_count: int, fraction: float) -> frozenset:
    """First ``floor(fraction * layer_count)`` weight groups, 1-indexed.

    ``fraction`` 0 selects nothing (all groups handled at aggregation time),
    1 selects every group (pure client-side centralization). The complement
    of the returned set is centralized on the server.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"layer fraction must lie in [0, 1], got {fraction}")
    if layer_count < 1:
        raise ConfigError(f"layer count must be >= 1, got {layer_count}")
    cutoff = int(np.floor(fraction * layer_count))
    return frozenset(range(1, cutoff + 1))
