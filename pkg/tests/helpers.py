import numpy as np

from dataset.corpus import CorpusConfig, SequencePair
from models.network import NetworkConfig

TINY_CORPUS = CorpusConfig(phone_inventory_size=6, n_train=6, n_dev=2, n_test=2,
                           min_duration=3, max_duration=6, min_phones=3, max_phones=5,
                           mcc_dim=3, bap_dim=2, seed=1)


def tiny_net_config(data, kind="LSTM"):
    return NetworkConfig(linguistic_dim=data.train[0].inputs.shape[1],
                         output_dim=data.layout.output_dim, kind=kind,
                         ff_layer_sizes=(8, 8), hidden_dim=4)


def constant_target_set(n, linguistic_dim, output_dim, frames=8, seed=0):
    rng = np.random.default_rng(seed)
    return [SequencePair(utt_id="utt{}".format(k),
                         inputs=rng.uniform(0.01, 0.99, size=(frames, linguistic_dim)),
                         targets=np.zeros((frames, output_dim)),
                         boundaries=(0, frames // 2))
            for k in range(n)]
