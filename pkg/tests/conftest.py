import numpy as np
import pytest

from gav.datagen import GenConfig, generate
from gav.decoder import DecoderDims
from gav.encoder import EncoderConfig
from gav.sampler import SamplingConfig
from gav.trainer import TrainConfig, init_params

MINI_TRAIN = TrainConfig(
    encoder=EncoderConfig(input_size=16, blocks=((6, 2, 2),)),
    dims=DecoderDims(embed=4, hidden=8, attn=4),
    sampling=SamplingConfig(n_pos=1, n_neg=2, shuffle_prob=0.5),
    max_len=8,
    batch_images=2,
    steps_phase1=4,
    steps_phase2=2,
    log_every=1,
    seed=13,
)

MINI_GEN = GenConfig(
    n_images=6,
    image_size=16,
    words_per_name=(1, 2),
    candidates_per_image=(5, 5),
    scale_min=1,
    scale_max=1,
    clutter=0,
    rotation_deg=0.0,
    seed=29,
)


@pytest.fixture(scope="session")
def mini_eval_ds(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini_eval_ds")
    return generate(MINI_GEN, str(out))


@pytest.fixture(scope="session")
def zero_ckpt():
    ckpt = init_params(MINI_TRAIN, 0)
    for arr in ckpt.params.values():
        arr[...] = 0.0
    return ckpt


@pytest.fixture(scope="session")
def rand_ckpt():
    ckpt = init_params(MINI_TRAIN, 5)
    rng = np.random.default_rng(17)
    for arr in ckpt.params.values():
        arr += rng.standard_normal(arr.shape).astype(np.float32) * 0.3
    return ckpt
