import dataclasses

import numpy as np
import pytest

from glpge.config import CliConfig, TrainConfig
from glpge.globalnet import GlobalNetConfig
from glpge.losses import DiscriminatorConfig
from glpge.refinenet import RefineNetConfig
from glpge.synthdoc import build_dataset, load_manifest


def small_cli_config(seed=0, **train_kw) -> CliConfig:
    """Scaled-down nets and budgets for fast pipeline tests."""
    train = TrainConfig(seed=seed, batch_size=2, crop_side=64, steps_gpp=6, steps_joint=6,
                        steps_finetune=4, **train_kw)
    return CliConfig(
        train=train,
        global_net=GlobalNetConfig(stage_widths=(4, 6, 8, 10, 12), head_hidden=8, input_side=64),
        refine_net=RefineNetConfig(widths=(4, 6, 8, 12), growths=(2, 2, 3, 4),
                                   block_layers=(1, 1, 2, 2), smooth_widths=(4, 4)),
        discriminator=DiscriminatorConfig(widths=(4, 8, 12, 16)),
    )


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Six 64x64 pairs plus manifest, shared across pipeline/CLI tests."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = build_dataset(6, root, size=(64, 64), intensity_range=(0.4, 0.6), root_seed=11)
    return load_manifest(manifest.path), manifest.path


@pytest.fixture(scope="session")
def small_cfg():
    return small_cli_config()


@pytest.fixture(scope="session")
def pretrained_small(small_corpus, small_cfg):
    from glpge.pipeline import pretrain_global

    rows, _ = small_corpus
    return pretrain_global(rows, small_cfg)


@pytest.fixture(scope="session")
def joint_small(small_corpus, small_cfg, pretrained_small):
    from glpge.pipeline import train_joint

    rows, _ = small_corpus
    return train_joint(rows, small_cfg, pretrained_small)


def rand_image(shape, seed=0):
    from glpge.images import ImageBuffer

    return ImageBuffer(np.random.default_rng(seed).random(shape, dtype=np.float32))
