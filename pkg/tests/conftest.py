"""Shared fixtures: the scaled handwritten-digits benchmark and its pretrained
autoencoder. Both are deterministic and disk-cached so repeated sessions skip
the expensive builds."""

import hashlib
import os
import tempfile

import numpy as np
import pytest

from deepcc.autoencoder import SdaeConfig, pretrain_sdae
from deepcc.checkpoint import load_checkpoint, save_checkpoint
from deepcc.data_io import Dataset
from deepcc.numerics import make_rng

CACHE_VERSION = 3

DIGITS_N = 10000
DIGITS_SEED = 20240601
DIGITS_ROTATION = 8.0
DIGITS_SHIFT = 1.0

SDAE_DIMS = [784, 256, 64, 10]
SDAE_SEED = 99
SDAE_LAYERWISE = 15
SDAE_FINETUNE = 30


def cache_dir() -> str:
    path = os.environ.get(
        "DEEPCC_TEST_CACHE", os.path.join(tempfile.gettempdir(), "deepcc-test-cache"))
    os.makedirs(path, exist_ok=True)
    return path


def cache_key(*parts) -> str:
    text = "|".join(str(p) for p in (CACHE_VERSION,) + parts)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def build_digits(n=DIGITS_N, seed=DIGITS_SEED, rotation=DIGITS_ROTATION,
                 shift=DIGITS_SHIFT) -> Dataset:
    """10 classes of real handwritten digits, upsampled to 28x28 and augmented
    with small random rotations and shifts to reach the requested size."""
    from scipy import ndimage
    from sklearn.datasets import load_digits

    base = load_digits()
    images = base.images / 16.0
    rng = make_rng(seed)
    picks = rng.integers(0, len(images), size=n)
    angles = rng.uniform(-rotation, rotation, size=n)
    offsets = rng.uniform(-shift, shift, size=(n, 2))
    out = np.empty((n, 784))
    for i in range(n):
        img = ndimage.zoom(images[picks[i]], 3.5, order=1)
        img = ndimage.rotate(img, angles[i], reshape=False, order=1, mode="constant")
        img = ndimage.shift(img, offsets[i], order=1, mode="constant")
        out[i] = np.clip(img, 0.0, 1.0).reshape(-1)
    return Dataset(out, base.target[picks], source="digits10k")


@pytest.fixture(scope="session")
def digits10k() -> Dataset:
    key = cache_key("digits", DIGITS_N, DIGITS_SEED, DIGITS_ROTATION, DIGITS_SHIFT)
    path = os.path.join(cache_dir(), f"digits-{key}.npz")
    if os.path.exists(path):
        with np.load(path) as data:
            return Dataset(data["X"], data["y"], source="digits10k")
    ds = build_digits()
    np.savez_compressed(path, X=ds.features, y=ds.labels)
    return ds


@pytest.fixture(scope="session")
def digits_autoencoder(digits10k):
    """SDAE pretrained once per protocol; every paired run shares it."""
    key = cache_key("sdae", DIGITS_N, DIGITS_SEED, DIGITS_ROTATION, DIGITS_SHIFT,
                    SDAE_DIMS, SDAE_SEED, SDAE_LAYERWISE, SDAE_FINETUNE)
    path = os.path.join(cache_dir(), f"sdae-{key}.npz")
    if os.path.exists(path):
        return load_checkpoint(path)["autoencoder"]
    config = SdaeConfig(dims=SDAE_DIMS, corruption_rate=0.2,
                        layerwise_epochs=SDAE_LAYERWISE, finetune_epochs=SDAE_FINETUNE,
                        batch_size=256)
    model = pretrain_sdae(digits10k, config, make_rng(SDAE_SEED))
    save_checkpoint(path, model)
    return model


@pytest.fixture(scope="session")
def digits_sdae_config():
    return SdaeConfig(dims=SDAE_DIMS, corruption_rate=0.2,
                      layerwise_epochs=SDAE_LAYERWISE, finetune_epochs=SDAE_FINETUNE,
                      batch_size=256)
