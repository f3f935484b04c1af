import numpy as np
import pytest

from maskextract.calibrate import calibrate_thresholds, mask_rules_from_config
from patchio.patch import StainDomain
from settings import PipelineConfig
from synthdata.corpus import generate_scenes
from synthdata.scene import SceneSpec


@pytest.fixture
def pipeline_config():
    return PipelineConfig()


@pytest.fixture
def small_config():
    """足够快的小规模配置，供端到端测试使用"""
    config = PipelineConfig()
    for section, key, value in (
        ("run", "progress", False),
        ("corpus", "count", 6),
        ("corpus", "val_count", 4),
        ("transfer", "epochs", 1),
        ("transfer", "batch_size", 4),
        ("transfer", "base_channels", 4),
        ("transfer", "residual_blocks", 1),
        ("transfer", "disc_channels", 4),
        ("detect", "epochs", 2),
        ("detect", "batch_size", 4),
        ("detect", "base_channels", 4),
        ("evaluate", "feature_dim", 8),
    ):
        config.set(section, key, value)
    return config


@pytest.fixture(scope="session")
def scene_spec():
    return SceneSpec(seed=7)


@pytest.fixture(scope="session")
def he_scenes(scene_spec):
    return list(generate_scenes(scene_spec, 50, StainDomain.HE))


@pytest.fixture(scope="session")
def cd20_scenes(scene_spec):
    return list(generate_scenes(scene_spec, 50, StainDomain.CD20))


@pytest.fixture(scope="session")
def he_thresholds(he_scenes):
    config = PipelineConfig()
    return calibrate_thresholds([patch.image for patch, _ in he_scenes], StainDomain.HE,
                                mask_rules_from_config(config, StainDomain.HE))


@pytest.fixture(scope="session")
def cd20_thresholds(cd20_scenes):
    config = PipelineConfig()
    return calibrate_thresholds([patch.image for patch, _ in cd20_scenes], StainDomain.CD20,
                                mask_rules_from_config(config, StainDomain.CD20))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
