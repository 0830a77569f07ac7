"""Shared fixtures.

The desk-scale dataset and trained checkpoint are expensive (minutes), so
they are built once per session and shared by the service, CLI, and
acceptance tests. A copy of the trained checkpoint is dropped under
artifacts/ so the frontend integration tests can reuse it afterwards.
"""

from __future__ import annotations

import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from chladni_studio.checkpoint import Checkpoint, save_checkpoint
from chladni_studio.dataset import DatasetConfig, build_dataset
from chladni_studio.model import ModelConfig, build_model
from chladni_studio.registry import ModeRegistry
from chladni_studio.training import TrainConfig, train

REPO_ROOT = Path(__file__).resolve().parent.parent

DESK_SEED = 11
DESK_IMAGE_SIZE = 64
DESK_DATASET = DatasetConfig(base_per_mode=20, augment_factor=3,
                             image_size=DESK_IMAGE_SIZE, seed=DESK_SEED)
DESK_MODEL = ModelConfig(variant="cbam5", image_size=DESK_IMAGE_SIZE)


@pytest.fixture(scope="session")
def registry() -> ModeRegistry:
    return ModeRegistry.default()


@pytest.fixture(scope="session")
def toy_modes_file(tmp_path_factory) -> Path:
    """Two-mode calibration file for small, fast dataset tests."""
    path = tmp_path_factory.mktemp("modes") / "toy_modes.csv"
    path.write_text(
        "# toy registry\n"
        "0,1,2,24.9816,paper\n"
        "1,1,3,24.674011002723397,derived\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture(scope="session")
def toy_registry(toy_modes_file) -> ModeRegistry:
    return ModeRegistry.from_file(toy_modes_file)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory, toy_registry):
    """32 images of two distinct modes at 16x16, no augmentation."""
    root = tmp_path_factory.mktemp("toy_dataset")
    cfg = DatasetConfig(base_per_mode=16, augment_factor=1, image_size=32,
                        mask_resolution=64, seed=3)
    return build_dataset(toy_registry, cfg, root)


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory, registry):
    root = tmp_path_factory.mktemp("desk_dataset")
    return build_dataset(registry, DESK_DATASET, root)


@pytest.fixture(scope="session")
def desk_training(desk_dataset):
    """The acceptance-profile training run; returns (checkpoint, seconds)."""
    start = time.perf_counter()
    ckpt = train(desk_dataset, DESK_MODEL, TrainConfig(seed=DESK_SEED))
    return ckpt, time.perf_counter() - start


@pytest.fixture(scope="session")
def desk_checkpoint(desk_training) -> Checkpoint:
    return desk_training[0]


@pytest.fixture(scope="session")
def desk_checkpoint_path(desk_checkpoint, tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("ckpt") / "desk.ckpt"
    save_checkpoint(desk_checkpoint, path)
    artifacts = REPO_ROOT / "artifacts"
    artifacts.mkdir(exist_ok=True)
    shutil.copyfile(path, artifacts / "desk.ckpt")
    return path


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """Untrained small model for wire/CLI plumbing tests; returns
    (Checkpoint, path)."""
    config = ModelConfig(variant="cbam5", image_size=32,
                         channel_widths=(8, 8, 8, 16), cbam_reduction=4)
    model = build_model(config, seed=0)
    ckpt = Checkpoint(config=config,
                      params={k: t.data.copy() for k, t in model.params.items()},
                      history=[])
    path = tmp_path_factory.mktemp("tiny") / "tiny.ckpt"
    save_checkpoint(ckpt, path)
    return ckpt, path


_PORT_BASE = 23400
_port_counter = 0


@pytest.fixture
def service_ports():
    """Distinct port triple per test to avoid rebind races."""
    global _port_counter
    _port_counter += 1
    base = _PORT_BASE + 10 * _port_counter
    return {"listen_port": base, "reply_port": base + 1, "bridge_port": base + 2}


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
