"""Shared fixtures: tiny synthetic corpora and small network specs that keep
the unit-test suite fast on a single CPU."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from cmcrd.data import SynthSpec, generate_synthetic
from cmcrd.nets import NetworkSpec, init_params

torch.set_num_threads(1)


def tiny_spec(**over) -> SynthSpec:
    base = dict(num_subjects=3, sessions_per_subject=1, trials_per_session=6,
                samples_per_trial=3, num_classes=3, eeg_dim=7, em_dim=5,
                latent_dim=4, cross_modal_coupling=0.8, class_separation=4.0,
                subject_shift_scale=0.5, noise_scale=0.5, seed=0, name="tiny")
    base.update(over)
    return SynthSpec(**base)


@pytest.fixture(scope="session")
def tiny_ds():
    return generate_synthetic(tiny_spec())


@pytest.fixture(scope="session")
def tiny_net():
    return NetworkSpec(family="dnn", input_dim=7, num_classes=3,
                       feature_dim=4, hidden=(6,), l2=0.0)


@pytest.fixture()
def tiny_params(tiny_net):
    return init_params(tiny_net, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
