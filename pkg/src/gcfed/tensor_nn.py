"""Minimal dense-tensor neural-network core.

Implements MLP and small-CNN forward/backward passes with softmax
cross-entropy, classical momentum SGD, and a central-finite-difference
gradient oracle for tests. Everything runs in 64-bit floats and is
deterministic: two calls with identical inputs produce bit-identical
outputs, and no function mutates its inputs except ``sgd_step`` (which
updates the model and optimizer state in place by design).

Conventions:
  * fully-connected weights are ``[F_out, F_in]``, biases ``[F_out]``;
  * conv weights are ``[C_out, C_in, K_h, K_w]``, stride 1, zero padding
    preserving the spatial size, each conv followed by ReLU and 2x2 max
    pooling;
  * a model's parameter groups are ordered layer by layer, weight before
    bias, and ``ModelParams.layer_count`` counts weight groups only.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class ClientDataset:
    """One client's shard: features, integer class labels, and an id."""

    features: np.ndarray
    labels: np.ndarray
    client_id: int = 0

    @property
    def n_k(self) -> int:
        return self.features.shape[0]

    def validate(self, num_classes: int):
        if self.n_k < 1:
            raise DataError(f"client {self.client_id} has an empty shard")
        bad = np.where((self.labels < 0) | (self.labels >= num_classes))[0]
        if bad.size:
            raise DataError(
                f"client {self.client_id}: label {int(self.labels[bad[0]])} at "
                f"sample {int(bad[0])} outside [0, {num_classes})"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"client {self.client_id}: non-finite feature values")


@dataclass
class LayerParams:
    """A single weight-bearing layer."""

    kind: str  # "fc" | "conv"
    weight: np.ndarray
    bias: np.ndarray | None = None
    activation: str = "identity"  # "relu" | "identity"

    def copy(self) -> "LayerParams":
        return LayerParams(
            kind=self.kind,
            weight=self.weight.copy(),
            bias=None if self.bias is None else self.bias.copy(),
            activation=self.activation,
        )


@dataclass
class ModelParams:
    """Ordered stack of layers; the unit exchanged between server and clients."""

    layers: list = field(default_factory=list)

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def copy(self) -> "ModelParams":
        return ModelParams([layer.copy() for layer in self.layers])

    def param_groups(self) -> list:
        """All parameter arrays in canonical order (weight, then bias, per layer)."""
        groups = []
        for layer in self.layers:
            groups.append(layer.weight)
            if layer.bias is not None:
                groups.append(layer.bias)
        return groups

    def group_layout(self) -> list:
        """(layer_index, 'weight'|'bias') for each entry of ``param_groups``.

        ``layer_index`` is 1-based, matching the indices used to select
        layers for centralization.
        """
        layout = []
        for i, layer in enumerate(self.layers, start=1):
            layout.append((i, "weight"))
            if layer.bias is not None:
                layout.append((i, "bias"))
        return layout


@dataclass
class OptimizerState:
    """Momentum-SGD state: one velocity buffer per parameter group."""

    velocity: list
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    @classmethod
    def for_model(cls, model: ModelParams, learning_rate: float,
                  momentum: float = 0.0, weight_decay: float = 0.0) -> "OptimizerState":
        if learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {learning_rate}")
        if momentum < 0 or weight_decay < 0:
            raise ConfigError("momentum and weight decay must be >= 0")
        vel = [np.zeros_like(g) for g in model.param_groups()]
        return cls(vel, learning_rate, momentum, weight_decay)


@dataclass(frozen=True)
class ArchSpec:
    """Architecture description consumed by :func:`build_model`.

    ``kind`` is one of ``mlp`` (widths = input, hidden..., classes),
    ``linear`` (widths = [input, classes]) or ``cnn`` (conv channel list +
    hidden FC widths; the final FC maps to ``num_classes``).
    """

    kind: str
    widths: tuple = ()
    in_channels: int = 1
    image_hw: tuple = (28, 28)
    conv_channels: tuple = (32, 64)
    kernel_size: int = 5
    fc_widths: tuple = (512,)
    num_classes: int = 10


def build_model(spec: ArchSpec, seed_or_rng) -> ModelParams:
    """Initialize a model: uniform +-1/sqrt(fan_in) weights, zero biases."""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else np.random.default_rng(seed_or_rng)

    def init_weight(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    layers = []
    if spec.kind in ("mlp", "linear"):
        widths = tuple(int(w) for w in spec.widths)
        if len(widths) < 2:
            raise ConfigError(f"{spec.kind} needs at least [input, output] widths, got {widths}")
        if spec.kind == "linear" and len(widths) != 2:
            raise ConfigError(f"linear arch takes exactly [input, output], got {widths}")
        if any(w <= 0 for w in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            last = i == len(widths) - 2
            layers.append(LayerParams(
                kind="fc",
                weight=init_weight((fan_out, fan_in), fan_in),
                bias=np.zeros(fan_out),
                activation="identity" if last else "relu",
            ))
    elif spec.kind == "cnn":
        if spec.kernel_size <= 0 or spec.num_classes <= 0:
            raise ConfigError("cnn kernel size and class count must be positive")
        if any(c <= 0 for c in spec.conv_channels) or any(w <= 0 for w in spec.fc_widths):
            raise ConfigError("cnn channel/width entries must be positive")
        h, w = spec.image_hw
        in_ch = spec.in_channels
        k = spec.kernel_size
        for out_ch in spec.conv_channels:
            layers.append(LayerParams(
                kind="conv",
                weight=init_weight((out_ch, in_ch, k, k), in_ch * k * k),
                bias=np.zeros(out_ch),
                activation="relu",
            ))
            in_ch = out_ch
            h, w = h // 2, w // 2  # 2x2 max pool after every conv
            if h < 1 or w < 1:
                raise ConfigError("image collapsed below 1x1 after pooling; fewer conv layers needed")
        flat = in_ch * h * w
        fcs = tuple(spec.fc_widths) + (spec.num_classes,)
        fan_in = flat
        for i, fan_out in enumerate(fcs):
            last = i == len(fcs) - 1
            layers.append(LayerParams(
                kind="fc",
                weight=init_weight((fan_out, fan_in), fan_in),
                bias=np.zeros(fan_out),
                activation="identity" if last else "relu",
            ))
            fan_in = fan_out
    else:
        raise ConfigError(f"unknown architecture kind {spec.kind!r}")
    return ModelParams(layers)


# ---------------------------------------------------------------------------
# forward / backward


def _same_pad(h_k: int) -> tuple:
    left = (h_k - 1) // 2
    return left, h_k - 1 - left


def _im2col(x_padded: np.ndarray, k_h: int, k_w: int, out_h: int, out_w: int) -> np.ndarray:
    """[B, C, Hp, Wp] -> [B, C*k_h*k_w, out_h*out_w] patch matrix (stride 1)."""
    b, c = x_padded.shape[:2]
    cols = np.empty((b, c * k_h * k_w, out_h * out_w))
    idx = 0
    for ch in range(c):
        for i in range(k_h):
            for j in range(k_w):
                cols[:, idx, :] = x_padded[:, ch, i:i + out_h, j:j + out_w].reshape(b, -1)
                idx += 1
    return cols


def _col2im(dcols: np.ndarray, x_shape: tuple, pads: tuple, k_h: int, k_w: int,
            out_h: int, out_w: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back onto the input."""
    b, c, h, w = x_shape
    (pt, pb), (pl, pr) = pads
    dx_padded = np.zeros((b, c, h + pt + pb, w + pl + pr))
    idx = 0
    for ch in range(c):
        for i in range(k_h):
            for j in range(k_w):
                dx_padded[:, ch, i:i + out_h, j:j + out_w] += \
                    dcols[:, idx, :].reshape(b, out_h, out_w)
                idx += 1
    return dx_padded[:, :, pt:pt + h, pl:pl + w]


def _conv_forward(layer: LayerParams, x: np.ndarray, idx: int):
    out_ch, in_ch, k_h, k_w = layer.weight.shape
    if x.ndim != 4 or x.shape[1] != in_ch:
        raise ConfigError(
            f"layer {idx} (conv) expects input [B, {in_ch}, H, W], got {x.shape}"
        )
    b, _, h, w = x.shape
    pads = (_same_pad(k_h), _same_pad(k_w))
    (pt, pb), (pl, pr) = pads
    x_padded = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _im2col(x_padded, k_h, k_w, h, w)
    w_mat = layer.weight.reshape(out_ch, -1)
    y = np.einsum("ok,bkp->bop", w_mat, cols)
    if layer.bias is not None:
        y = y + layer.bias[None, :, None]
    y = y.reshape(b, out_ch, h, w)
    cache = {"cols": cols, "x_shape": x.shape, "pads": pads, "pre_act": y}
    return y, cache


def _pool_forward(x: np.ndarray):
    """2x2 max pool, stride 2; odd trailing rows/columns are dropped."""
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    cropped = x[:, :, :h2 * 2, :w2 * 2]
    windows = cropped.reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(b, c, h2, w2, 4)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return out, {"arg": arg, "in_shape": (h, w)}


def _pool_backward(dout: np.ndarray, cache):
    b, c, h2, w2 = dout.shape
    h, w = cache["in_shape"]
    scattered = np.zeros((b, c, h2, w2, 4))
    np.put_along_axis(scattered, cache["arg"][..., None], dout[..., None], axis=-1)
    dx = scattered.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(b, c, h2 * 2, w2 * 2)
    if (h, w) != (h2 * 2, w2 * 2):
        dx = np.pad(dx, ((0, 0), (0, 0), (0, h - h2 * 2), (0, w - w2 * 2)))
    return dx


def _forward_pass(model: ModelParams, batch: np.ndarray, want_cache: bool):
    """Run the network; optionally keep per-layer caches for backprop."""
    x = np.asarray(batch, dtype=np.float64)
    caches = []
    activations = []
    for idx, layer in enumerate(model.layers, start=1):
        cache = {"kind": layer.kind}
        if layer.kind == "fc":
            if x.ndim > 2:
                cache["unflattened"] = x.shape
                x = x.reshape(x.shape[0], -1)
            if x.shape[1] != layer.weight.shape[1]:
                raise ConfigError(
                    f"layer {idx} (fc) expects {layer.weight.shape[1]} input features, "
                    f"got {x.shape[1]}"
                )
            cache["x"] = x
            z = x @ layer.weight.T
            if layer.bias is not None:
                z = z + layer.bias
            cache["pre_act"] = z
            x = np.maximum(z, 0.0) if layer.activation == "relu" else z
        elif layer.kind == "conv":
            z, conv_cache = _conv_forward(layer, x, idx)
            cache.update(conv_cache)
            a = np.maximum(z, 0.0) if layer.activation == "relu" else z
            pooled, pool_cache = _pool_forward(a)
            cache["pool"] = pool_cache
            x = pooled
        else:
            raise ConfigError(f"layer {idx}: unknown kind {layer.kind!r}")
        if want_cache:
            caches.append(cache)
        activations.append(x.reshape(x.shape[0], -1))
    return x, caches, activations


def forward(model: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Logits for a batch; purely functional, the model is not modified."""
    logits, _, _ = _forward_pass(model, batch, want_cache=False)
    return logits


def forward_with_activations(model: ModelParams, batch: np.ndarray):
    """Logits plus the flattened post-layer activation matrix of every layer."""
    logits, _, activations = _forward_pass(model, batch, want_cache=False)
    return logits, activations


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true classes."""
    n = logits.shape[0]
    log_p = _log_softmax(logits)
    return float(-log_p[np.arange(n), labels].mean())


def _validate_labels(labels: np.ndarray, num_classes: int):
    bad = np.where((labels < 0) | (labels >= num_classes))[0]
    if bad.size:
        raise DataError(
            f"label {int(labels[bad[0]])} at sample {int(bad[0])} outside [0, {num_classes})"
        )


def _prox_pairs(model: ModelParams, prox):
    mu, anchor = prox
    own = model.param_groups()
    ref = anchor.param_groups()
    if len(own) != len(ref) or any(a.shape != b.shape for a, b in zip(own, ref)):
        raise ConfigError("proximal anchor does not match the model's parameter shapes")
    return mu, own, ref


def total_loss(model: ModelParams, batch: np.ndarray, labels: np.ndarray, prox=None) -> float:
    """Mean cross-entropy, plus mu/2 * ||w - anchor||^2 when a prox term is set."""
    logits = forward(model, batch)
    loss = cross_entropy(logits, labels)
    if prox is not None:
        mu, own, ref = _prox_pairs(model, prox)
        if mu != 0.0:
            sq = sum(float(((a - b) ** 2).sum()) for a, b in zip(own, ref))
            loss += 0.5 * mu * sq
    return loss


def loss_and_grad(model: ModelParams, batch: np.ndarray, labels: np.ndarray, prox=None):
    """Loss and exact analytic gradients, one array per parameter group."""
    labels = np.asarray(labels)
    logits, caches, _ = _forward_pass(model, batch, want_cache=True)
    _validate_labels(labels, logits.shape[1])
    n = logits.shape[0]
    loss = cross_entropy(logits, labels)

    probs = np.exp(_log_softmax(logits))
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grads_by_layer = []
    dx = dlogits
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        if layer.kind == "fc":
            if layer.activation == "relu":
                dx = dx * (cache["pre_act"] > 0)
            x = cache["x"]
            d_weight = dx.T @ x
            d_bias = dx.sum(axis=0)
            dx = dx @ layer.weight
            if "unflattened" in cache:
                dx = dx.reshape(cache["unflattened"])
        else:
            dpooled = dx
            da = _pool_backward(dpooled, cache["pool"])
            if layer.activation == "relu":
                da = da * (cache["pre_act"] > 0)
            b = da.shape[0]
            out_ch = layer.weight.shape[0]
            dy_mat = da.reshape(b, out_ch, -1)
            cols = cache["cols"]
            d_weight = np.einsum("bop,bkp->ok", dy_mat, cols).reshape(layer.weight.shape)
            d_bias = dy_mat.sum(axis=(0, 2))
            w_mat = layer.weight.reshape(out_ch, -1)
            dcols = np.einsum("ok,bop->bkp", w_mat, dy_mat)
            k_h, k_w = layer.weight.shape[2:]
            h, w = cache["x_shape"][2:]
            dx = _col2im(dcols, cache["x_shape"], cache["pads"], k_h, k_w, h, w)
        grads_by_layer.append((d_weight, d_bias))
    grads_by_layer.reverse()

    grads = []
    for layer, (d_weight, d_bias) in zip(model.layers, grads_by_layer):
        grads.append(d_weight)
        if layer.bias is not None:
            grads.append(d_bias)

    if prox is not None:
        mu, own, ref = _prox_pairs(model, prox)
        if mu != 0.0:
            sq = sum(float(((a - b) ** 2).sum()) for a, b in zip(own, ref))
            loss += 0.5 * mu * sq
            grads = [g + mu * (a - b) for g, a, b in zip(grads, own, ref)]
    return loss, grads


def sgd_step(model: ModelParams, grads: list, state: OptimizerState):
    """Classical momentum update, in place.

    g <- g + wd * w;  v <- momentum * v + g;  w <- w - lr * v.
    """
    groups = model.param_groups()
    if len(groups) != len(grads) or len(groups) != len(state.velocity):
        raise ConfigError("gradient / velocity lists do not match the model's parameter groups")
    for w, g, v in zip(groups, grads, state.velocity):
        if w.shape != g.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match parameter {w.shape}")
        eff = g + state.weight_decay * w if state.weight_decay != 0.0 else g
        v *= state.momentum
        v += eff
        w -= state.learning_rate * v


def finite_diff_grad(model: ModelParams, batch, labels, eps: float = 1e-6,
                     prox=None, loss_fn=None) -> list:
    """Central-difference gradients, one array per parameter group.

    Test oracle only: O(parameter count) loss evaluations. ``loss_fn`` may
    replace the default cross-entropy(+prox) objective; it receives the
    model and returns a scalar.
    """
    if loss_fn is None:
        def loss_fn(m):
            return total_loss(m, batch, labels, prox)
    work = model.copy()
    grads = []
    for group in work.param_groups():
        grad = np.zeros_like(group)
        it = np.nditer(group, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = group[idx]
            group[idx] = orig + eps
            up = loss_fn(work)
            group[idx] = orig - eps
            down = loss_fn(work)
            group[idx] = orig
            grad[idx] = (up - down) / (2.0 * eps)
        grads.append(grad)
    return grads
