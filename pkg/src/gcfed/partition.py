"""Non-i.i.d. data partitioning via per-class Dirichlet allocation.

For each class, client proportions are drawn from Dirichlet(alpha * 1_N)
(via normalized Gamma draws) and the class's samples are routed to clients
multinomially. Small alpha therefore skews both the label mix and the data
volume per client. Clients left empty are repaired by moving one sample
from the largest client, keeping every plan total and deterministic.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class PartitionPlan:
    """Immutable assignment of sample indices to clients."""

    assignments: list  # one int64 index array per client
    alpha: float
    seed: int
    num_classes: int
    class_histograms: np.ndarray  # [num_clients, num_classes]

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(a) for a in self.assignments])


def _histograms(assignments, labels, num_classes):
    hist = np.zeros((len(assignments), num_classes), dtype=np.int64)
    for k, idx in enumerate(assignments):
        hist[k] = np.bincount(labels[idx], minlength=num_classes)
    return hist


def lda_partition(labels: np.ndarray, num_clients: int, alpha: float, seed: int) -> PartitionPlan:
    """Partition sample indices across clients with per-class Dirichlet routing."""
    labels = np.asarray(labels)
    if num_clients < 1:
        raise ConfigError(f"need at least one client, got {num_clients}")
    if alpha <= 0:
        raise ConfigError(f"dirichlet concentration must be > 0, got {alpha}")
    num_classes = int(labels.max()) + 1 if labels.size else 0
    if labels.size < num_clients:
        raise ConfigError(
            f"cannot split {labels.size} samples across {num_clients} clients"
        )

    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(num_clients)]
    for c in range(num_classes):
        class_idx = np.where(labels == c)[0]
        if class_idx.size == 0:
            continue
        rng.shuffle(class_idx)
        draws = rng.gamma(alpha, 1.0, size=num_clients)
        proportions = draws / draws.sum()
        counts = rng.multinomial(class_idx.size, proportions)
        splits = np.split(class_idx, np.cumsum(counts)[:-1])
        for k in range(num_clients):
            if counts[k]:
                buckets[k].append(splits[k])

    assignments = [
        np.sort(np.concatenate(b)) if b else np.empty(0, dtype=np.int64)
        for b in buckets
    ]

    # Repair: every client must end up with at least one sample.
    for k in range(num_clients):
        while len(assignments[k]) == 0:
            donor = int(np.argmax([len(a) for a in assignments]))
            if len(assignments[donor]) <= 1:
                raise ConfigError("not enough samples to give every client one")
            moved = assignments[donor][-1]
            assignments[donor] = assignments[donor][:-1]
            assignments[k] = np.array([moved], dtype=np.int64)
            log.info("partition repair: moved sample %d from client %d to empty client %d",
                     int(moved), donor, k)

    hist = _histograms(assignments, labels, num_classes)
    return PartitionPlan(assignments, float(alpha), int(seed), num_classes, hist)


def partition_stats(plan: PartitionPlan) -> dict:
    """Deterministic summary of a plan: sizes, label entropy, degenerate clients."""
    sizes = plan.sizes
    entropies = []
    single_class = 0
    for row in plan.class_histograms:
        total = row.sum()
        p = row[row > 0] / total
        entropies.append(float(-(p * np.log(p)).sum()))
        if (row > 0).sum() == 1:
            single_class += 1
    classes_present = (plan.class_histograms > 0).sum(axis=1)
    return {
        "num_clients": plan.num_clients,
        "total_samples": int(sizes.sum()),
        "alpha": plan.alpha,
        "sizes": sizes.tolist(),
        "min_size": int(sizes.min()),
        "max_size": int(sizes.max()),
        "class_entropy": entropies,
        "mean_class_entropy": float(np.mean(entropies)),
        "median_classes_per_client": float(np.median(classes_present)),
        "single_class_clients": int(single_class),
    }


def save_plan(plan: PartitionPlan, path):
    """Serialize a plan so runs can be re-created without re-sampling."""
    payload = {
        "alpha": plan.alpha,
        "seed": plan.seed,
        "num_classes": plan.num_classes,
        "assignments": [a.tolist() for a in plan.assignments],
        "class_histograms": plan.class_histograms.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_plan(path) -> PartitionPlan:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    assignments = [np.asarray(a, dtype=np.int64) for a in payload["assignments"]]
    return PartitionPlan(
        assignments=assignments,
        alpha=float(payload["alpha"]),
        seed=int(payload["seed"]),
        num_classes=int(payload["num_classes"]),
        class_histograms=np.asarray(payload["class_histograms"], dtype=np.int64),
    )
