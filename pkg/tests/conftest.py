import pytest

from dataset.corpus import gen_corpus, prepare_data
from utils.train_utils.trainer import TrainConfig, train

from helpers import TINY_CORPUS, tiny_net_config


@pytest.fixture(scope="session")
def tiny_corpus():
    return gen_corpus(TINY_CORPUS)


@pytest.fixture(scope="session")
def tiny_data(tiny_corpus):
    return prepare_data(tiny_corpus)


@pytest.fixture(scope="session")
def tiny_model(tiny_data):
    model, _ = train(tiny_net_config(tiny_data), TrainConfig(learning_rate=1e-3, max_epochs=2, seed=0),
                     tiny_data.train, tiny_data.dev, input_stats=tiny_data.input_stats,
                     output_stats=tiny_data.output_stats, layout=tiny_data.layout)
    return model
