"""Shared helpers for building small experiments in tests."""

import numpy as np
import pytest

from gcfed.cli import load_datasets
from gcfed.config import ExperimentConfig, validate_config
from gcfed.fl_engine import build_client_datasets, partition_for_config


def make_cfg(**overrides) -> ExperimentConfig:
    """A small, fast experiment config; overrides use attribute names."""
    cfg = ExperimentConfig(
        seed=0,
        rounds=5,
        num_clients=8,
        participating=3,
        local_epochs=1,
        learning_rate=0.05,
        momentum=0.9,
        weight_decay=1e-5,
        batch_size=20,
        alpha=0.1,
        strategy="fedavg",
        data_classes=5,
        data_input_dim=12,
        data_separation=3.0,
        data_noise_sigma=1.0,
        data_samples_per_class=60,
        arch_kind="mlp",
        arch_widths=(12, 16, 5),
    )
    for name, value in overrides.items():
        setattr(cfg, name, value)
    return validate_config(cfg)


def materialize(cfg):
    """(clients, test_x, test_y) for a config, using the standard pipeline."""
    train_x, train_y, test_x, test_y = load_datasets(cfg)
    plan = partition_for_config(cfg, train_y)
    clients = build_client_datasets(train_x, train_y, plan)
    return clients, test_x, test_y


@pytest.fixture
def tiny_setup():
    cfg = make_cfg()
    clients, test_x, test_y = materialize(cfg)
    return cfg, clients, test_x, test_y


def max_rel_error(analytic, numeric, floor=1e-4):
    """Worst per-coordinate relative error between two gradient lists.

    The denominator is floored: a central difference with eps = 1e-6 on a
    loss of order one carries ~1e-10 of absolute roundoff noise, so
    coordinates below the floor are effectively held to that absolute
    precision instead of an unresolvable relative one.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def records_equal(a, b) -> bool:
    """Bitwise comparison of the observable round stream."""
    if len(a) != len(b):
        return False
    for r1, r2 in zip(a, b):
        if (r1.t, r1.selected, r1.failed) != (r2.t, r2.selected, r2.failed):
            return False
        if r1.accuracy != r2.accuracy or r1.update_norm != r2.update_norm:
            return False
        if r1.discrepancy != r2.discrepancy:
            return False
    return True
