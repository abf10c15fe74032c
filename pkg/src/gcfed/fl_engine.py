"""Federated orchestration: sampling, local training, aggregation, round loop.

A round samples clients uniformly without replacement, trains each on a
copy of the global model (optionally centralizing selected layers' weight
gradients at every step), averages the resulting update deltas in ascending
client order, centralizes the server-side layers the strategy asks for, and
applies the update. Every random choice comes from a seeded substream, so a
run is bit-reproducible regardless of the worker count (client training is
embarrassingly parallel on immutable model copies; the reduction order is
fixed).
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, RoundFailure
from .gc_core import ProjectionSpec, centralize_mean_sub, is_centralizable, select_local_layers
from .metrics import linear_cka, one_minus_cosine, top1_accuracy, update_discrepancy
from .partition import PartitionPlan, lda_partition
from .seeding import derive_seed, substream
from .tensor_nn import (
    ArchSpec,
    ClientDataset,
    ModelParams,
    OptimizerState,
    build_model,
    forward_with_activations,
    loss_and_grad,
    sgd_step,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Strategy:
    """Which gradient corrections a run applies, and where.

    ``local_fraction`` is only meaningful for the hybrid kind: that share of
    the weight groups (in forward order) is centralized during local SGD and
    the remainder is centralized once per round on the aggregated update.
    """

    kind: str  # "fedavg" | "fedprox" | "local_gc" | "global_gc" | "gc_fed"
    local_fraction: float = 0.75
    mu_prox: float = 0.0

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Strategy":
        return cls(kind=cfg.strategy, local_fraction=cfg.gc_lambda,
                   mu_prox=cfg.fedprox_mu if cfg.strategy == "fedprox" else 0.0)

    def local_gc_layers(self, layer_count: int) -> frozenset:
        if self.kind == "local_gc":
            return frozenset(range(1, layer_count + 1))
        if self.kind == "gc_fed":
            return select_local_layers(layer_count, self.local_fraction)
        return frozenset()

    def global_gc_layers(self, layer_count: int) -> frozenset:
        if self.kind == "global_gc":
            return frozenset(range(1, layer_count + 1))
        if self.kind == "gc_fed":
            # Complement of the locally centralized set: those layers already
            # sit on the zero-mean hyperplane, so the server only touches the
            # rest. This also makes the boundary values of the fraction agree
            # exactly with the pure client-side / pure server-side strategies.
            local = self.local_gc_layers(layer_count)
            return frozenset(range(1, layer_count + 1)) - local
        return frozenset()


@dataclass
class UpdateDelta:
    """Per-parameter-group difference between a trained and the global model."""

    tensors: list
    client_id: int
    n_k: int


@dataclass
class RoundRecord:
    """Observables of one communication round."""

    t: int
    selected: tuple
    accuracy: float
    update_norm: float
    discrepancy: float = None
    one_minus_cos: float = None
    cka: list = None
    wall_ms: float = 0.0
    failed: bool = False

    def to_json_dict(self) -> dict:
        return {
            "t": self.t,
            "selected": list(self.selected),
            "accuracy": self.accuracy,
            "update_norm": self.update_norm,
            "discrepancy": self.discrepancy,
            "one_minus_cos": self.one_minus_cos,
            "cka": self.cka,
            "wall_ms": self.wall_ms,
            "failed": self.failed,
        }


def sample_clients(num_clients: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw of k distinct client ids, returned in ascending order."""
    if not 1 <= k <= num_clients:
        raise ConfigError(f"cannot select {k} of {num_clients} clients")
    chosen = rng.choice(num_clients, size=k, replace=False)
    return np.sort(chosen)


def local_train(global_model: ModelParams, data: ClientDataset, cfg: ExperimentConfig,
                strategy: Strategy, round_index: int,
                gc_spec: ProjectionSpec = None) -> UpdateDelta:
    """Train a copy of the global model on one client's shard.

    Runs ``local_epochs`` passes of mini-batch momentum SGD with a fresh
    velocity buffer (clients are stateless between rounds). Layers selected
    by the strategy get their weight gradient centralized before the
    optimizer step; the proximal strategy instead adds ``mu * (w - global)``
    through the loss. A non-finite loss or gradient raises
    :class:`RoundFailure` naming the client and step.
    """
    gc_spec = gc_spec or ProjectionSpec(cfg.gc_axis_mode)
    model = global_model.copy()
    state = OptimizerState.for_model(model, cfg.learning_rate, cfg.momentum,
                                     cfg.weight_decay)
    prox = None
    if strategy.kind == "fedprox" and strategy.mu_prox != 0.0:
        prox = (strategy.mu_prox, global_model)
    local_set = strategy.local_gc_layers(model.layer_count)
    weight_positions = [
        pos for pos, (layer_idx, role) in enumerate(model.group_layout())
        if role == "weight" and layer_idx in local_set
    ]

    n = data.n_k
    step = 0
    for epoch in range(cfg.local_epochs):
        order = substream(cfg.seed, "batch", round_index, data.client_id,
                          epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grad(model, data.features[batch_idx],
                                        data.labels[batch_idx], prox)
            if not np.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads):
                raise RoundFailure(data.client_id, round_index, step, "non-finite loss/gradient")
            for pos in weight_positions:
                if is_centralizable(grads[pos], gc_spec):
                    grads[pos] = centralize_mean_sub(grads[pos], gc_spec)
            sgd_step(model, grads, state)
            step += 1

    deltas = [local - start_group
              for local, start_group in zip(model.param_groups(),
                                            global_model.param_groups())]
    return UpdateDelta(deltas, data.client_id, n)


def aggregate(deltas: list, weighting: str = "uniform") -> UpdateDelta:
    """Weighted mean of update deltas, summed in ascending client order."""
    if not deltas:
        raise ConfigError("cannot aggregate an empty list of updates")
    if weighting not in ("uniform", "by_nk"):
        raise ConfigError(f"unknown weighting {weighting!r}")
    ordered = sorted(deltas, key=lambda d: d.client_id)
    shapes = [t.shape for t in ordered[0].tensors]
    for d in ordered[1:]:
        if [t.shape for t in d.tensors] != shapes:
            raise ConfigError("update deltas do not share parameter shapes")
    total_n = sum(d.n_k for d in ordered)
    if weighting == "uniform":
        acc = [t.copy() for t in ordered[0].tensors]
        for d in ordered[1:]:
            for a, t in zip(acc, d.tensors):
                a += t
        scale = 1.0 / len(ordered)
        acc = [a * scale for a in acc]
    else:
        acc = [t * (ordered[0].n_k / total_n) for t in ordered[0].tensors]
        for d in ordered[1:]:
            w = d.n_k / total_n
            for a, t in zip(acc, d.tensors):
                a += w * t
    return UpdateDelta(acc, client_id=-1, n_k=total_n)


def apply_global_gc(delta: UpdateDelta, strategy: Strategy, layout: list,
                    gc_spec: ProjectionSpec = None) -> UpdateDelta:
    """Centralize the strategy's server-side layers of an aggregated update."""
    gc_spec = gc_spec or ProjectionSpec()
    layer_count = max((idx for idx, _ in layout), default=0)
    targets = strategy.global_gc_layers(layer_count)
    if not targets:
        return delta
    tensors = []
    for tensor, (layer_idx, role) in zip(delta.tensors, layout):
        if role == "weight" and layer_idx in targets and is_centralizable(tensor, gc_spec):
            tensors.append(centralize_mean_sub(tensor, gc_spec))
        else:
            tensors.append(tensor)
    return UpdateDelta(tensors, delta.client_id, delta.n_k)


def _update_norm(delta: UpdateDelta) -> float:
    return float(np.sqrt(sum(float((t ** 2).sum()) for t in delta.tensors)))


def _mean_layer_cka(global_model: ModelParams, base_model: ModelParams,
                    deltas: list, probe: np.ndarray) -> list:
    """Average per-layer CKA between each client's local model and the global one."""
    _, global_acts = forward_with_activations(global_model, probe)
    sums = None
    for d in sorted(deltas, key=lambda x: x.client_id):
        client_model = base_model.copy()
        for group, change in zip(client_model.param_groups(), d.tensors):
            group += change
        _, acts = forward_with_activations(client_model, probe)
        values = [linear_cka(a, g) for a, g in zip(acts, global_acts)]
        sums = values if sums is None else [s + v for s, v in zip(sums, values)]
    return [s / len(deltas) for s in sums]


def _train_many(clients, global_model, cfg, strategy, round_index, gc_spec, workers):
    if workers <= 1 or len(clients) <= 1:
        return [local_train(global_model, c, cfg, strategy, round_index, gc_spec)
                for c in clients]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(local_train, global_model, c, cfg, strategy,
                               round_index, gc_spec) for c in clients]
        return [f.result() for f in futures]


def build_client_datasets(features: np.ndarray, labels: np.ndarray,
                          plan: PartitionPlan) -> list:
    """Materialize one :class:`ClientDataset` per plan entry."""
    return [ClientDataset(features[idx], labels[idx], client_id=k)
            for k, idx in enumerate(plan.assignments)]


def arch_from_config(cfg: ExperimentConfig) -> ArchSpec:
    num_classes = cfg.data_classes
    return ArchSpec(
        kind=cfg.arch_kind,
        widths=tuple(cfg.arch_widths),
        in_channels=cfg.arch_in_channels,
        image_hw=tuple(cfg.arch_image_hw),
        conv_channels=tuple(cfg.arch_conv_channels),
        kernel_size=cfg.arch_kernel_size,
        fc_widths=tuple(cfg.arch_fc_widths),
        num_classes=num_classes,
    )


def run_experiment(cfg: ExperimentConfig, clients: list, test_features: np.ndarray,
                   test_labels: np.ndarray, initial_model: ModelParams = None):
    """Execute the full round loop; returns (records, final model).

    ``clients`` is the list of per-client shards (one per client id). The
    initial model, client sampling, batch order and measurement probes all
    derive from ``cfg.seed``. Measurement cadences are 1-based: a cadence of
    ``M`` measures on rounds M, 2M, ... (so the final round of an R = k*M
    run is always measured).
    """
    if len(clients) != cfg.num_clients:
        raise ConfigError(
            f"expected {cfg.num_clients} client shards, got {len(clients)}"
        )
    strategy = Strategy.from_config(cfg)
    gc_spec = ProjectionSpec(cfg.gc_axis_mode)
    model = initial_model.copy() if initial_model is not None else \
        build_model(arch_from_config(cfg), substream(cfg.seed, "init"))
    layout = model.group_layout()

    probe = None
    if cfg.cka_every > 0:
        probe_rng = substream(cfg.seed, "probe")
        take = min(cfg.probe_samples, test_features.shape[0])
        probe_idx = probe_rng.choice(test_features.shape[0], size=take, replace=False)
        probe = test_features[np.sort(probe_idx)]

    records = []
    for t in range(cfg.rounds):
        started = time.perf_counter()
        rng = substream(cfg.seed, "sample", t)
        selected = sample_clients(cfg.num_clients, cfg.participating, rng)
        failed = False
        measure_disc = cfg.discrepancy_every > 0 and (t + 1) % cfg.discrepancy_every == 0
        measure_cka = cfg.cka_every > 0 and (t + 1) % cfg.cka_every == 0

        try:
            deltas = _train_many([clients[i] for i in selected], model, cfg,
                                 strategy, t, gc_spec, cfg.workers)
        except RoundFailure as failure:
            log.warning("round %d failed: %s", t, failure)
            failed = True
            deltas = []

        discrepancy = None
        cos_gap = None
        cka_values = None
        update_norm = 0.0
        if not failed:
            aggregated = aggregate(deltas, cfg.aggregation)
            if measure_disc:
                others = [clients[i] for i in range(cfg.num_clients) if i not in set(selected)]
                try:
                    rest = _train_many(others, model, cfg, strategy, t, gc_spec, cfg.workers)
                    true_delta = aggregate(deltas + rest, cfg.aggregation)
                    discrepancy = update_discrepancy(true_delta.tensors, aggregated.tensors)
                    cos_gap = one_minus_cosine(true_delta.tensors, aggregated.tensors)
                except RoundFailure as failure:
                    log.warning("discrepancy hook skipped at round %d: %s", t, failure)
            final_delta = apply_global_gc(aggregated, strategy, layout, gc_spec)
            update_norm = _update_norm(final_delta)
            base_model = model.copy() if measure_cka else None
            for group, change in zip(model.param_groups(), final_delta.tensors):
                group += change
            if measure_cka:
                cka_values = _mean_layer_cka(model, base_model, deltas, probe)

        accuracy = top1_accuracy(model, test_features, test_labels)
        records.append(RoundRecord(
            t=t,
            selected=tuple(int(i) for i in selected),
            accuracy=accuracy,
            update_norm=update_norm,
            discrepancy=discrepancy,
            one_minus_cos=cos_gap,
            cka=cka_values,
            wall_ms=(time.perf_counter() - started) * 1000.0,
            failed=failed,
        ))
        if failed and cfg.fail_policy == "abort":
            log.warning("aborting run at round %d per fail policy", t)
            break
    return records, model


def partition_for_config(cfg: ExperimentConfig, labels: np.ndarray) -> PartitionPlan:
    """Derive the run's partition plan from the master seed."""
    return lda_partition(labels, cfg.num_clients, cfg.alpha,
                         derive_seed(cfg.seed, "partition"))
