"""Shared fixtures: small models, noise specs and a tiny dataset."""

import numpy as np
import pytest
import torch

from rknlab.rkn import RknModel
from rknlab.statespace import (DatasetConfig, generate_dataset,
                               make_constant_velocity_model,
                               noise_from_heterogeneity)

torch.set_num_threads(2)

INIT_MEAN = np.array([0.0, 1.0])
INIT_COV = np.diag([1.0, 0.01])


@pytest.fixture(scope="session")
def cv_model():
    return make_constant_velocity_model(1.0, 1.0e-4)


@pytest.fixture(scope="session")
def noise40():
    return noise_from_heterogeneity(40.0, 1.0e-4, 0.6, 1.5625)


def small_dataset_config(model, noise, T=20, n_train=6, n_val=3, n_test=5,
                         master_seed=7):
    return DatasetConfig(model=model, noise=noise, init_mean=INIT_MEAN,
                         init_cov=INIT_COV, T=T, n_train=n_train,
                         n_val=n_val, n_test=n_test, master_seed=master_seed)


@pytest.fixture(scope="session")
def tiny_dataset(cv_model, noise40):
    return generate_dataset(small_dataset_config(cv_model, noise40))


@pytest.fixture()
def tiny_rkn():
    return RknModel.create(m=2, n=1, seed=0, fc_in=(8,), gru=(8,), fc_out=(8,))
