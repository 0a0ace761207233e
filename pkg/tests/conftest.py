import sys
from pathlib import Path

import numpy as np
import pytest

src_dir = Path(__file__).parent.parent / "src"
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))

from utils.data.data_utils import DataConfig, LabeledDataset
from utils.fedcore.fedcore_utils import ClientState
from utils.model.model_utils import Model, ModelSpec
from utils.numerics.numerics_utils import make_rng


@pytest.fixture
def rng():
    return make_rng(1234, "tests")


@pytest.fixture
def tiny_spec():
    return ModelSpec(input_dim=3, num_classes=2)


@pytest.fixture
def small_data_config():
    return DataConfig(num_clients=8, num_clusters=2, samples_per_client=(20, 40))


def make_client(
    client_id: int,
    params,
    labels,
    spec: ModelSpec,
    features=None,
    cluster_id: int = 0,
    seed: int = 0,
) -> ClientState:
    """Hand-built client with the given params and labels (features random unless given)."""
    labels = np.asarray(labels, dtype=np.int64)
    if features is None:
        features = make_rng(seed, "client-features", client_id).standard_normal((labels.size, spec.input_dim))
    train = LabeledDataset(features, labels)
    histogram = np.bincount(labels, minlength=spec.num_classes).astype(np.int64)
    model = Model(spec, np.asarray(params, dtype=np.float64))
    return ClientState(
        client_id=client_id,
        train=train,
        validation=train,
        model=model,
        velocity=np.zeros(spec.num_params),
        histogram=histogram,
        cluster_id=cluster_id,
        reference_histogram=histogram,
    )
