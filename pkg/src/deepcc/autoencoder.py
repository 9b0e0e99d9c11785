"""Stacked denoising autoencoder: greedy layer-wise pretraining, encoding,
and the reconstruction loss that keeps constraint training away from
collapsed solutions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import Dataset, make_schedule
from .errors import NumericError
from .numerics import (
    LINEAR,
    RELU,
    Array,
    Layer,
    MlpParams,
    adam_init,
    adam_step,
    as_matrix,
    grads_to_arrays,
    make_mlp,
    mlp_backward,
    mlp_forward,
    params_to_arrays,
    arrays_to_params,
    spawn_rngs,
)


@dataclass
class SdaeConfig:
    """Architecture and pretraining schedule.

    dims lists all layer widths from input to latent, e.g. [784, 500, 500, 2000, 10].
    """

    dims: list[int]
    corruption_rate: float = 0.2
    layerwise_epochs: int = 50
    finetune_epochs: int = 100
    learning_rate: float = 0.001
    batch_size: int = 256

    def __post_init__(self):
        if len(self.dims) < 2:
            raise ValueError("dims must list at least input and latent widths")
        if not 0.0 <= self.corruption_rate < 1.0:
            raise ValueError("corruption_rate must lie in [0, 1)")


@dataclass
class AutoencoderModel:
    """Encoder and its mirrored decoder."""

    encoder: MlpParams
    decoder: MlpParams

    def __post_init__(self):
        enc_w = self.encoder.widths
        dec_w = self.decoder.widths
        if dec_w != enc_w[::-1]:
            raise ValueError(f"decoder widths {dec_w} are not the reverse of encoder widths {enc_w}")

    @property
    def latent_dim(self) -> int:
        return self.encoder.widths[-1]

    @property
    def input_dim(self) -> int:
        return self.encoder.widths[0]

    def copy(self) -> "AutoencoderModel":
        return AutoencoderModel(self.encoder.copy(), self.decoder.copy())


def build_autoencoder(dims: list[int], rng: np.random.Generator) -> AutoencoderModel:
    """Random mirrored autoencoder over the given encoder widths."""
    encoder = make_mlp(dims, rng)
    decoder = make_mlp(dims[::-1], rng)
    return AutoencoderModel(encoder, decoder)


def encode(model: AutoencoderModel, X) -> Array:
    """Map inputs to the latent space."""
    return mlp_forward(model.encoder, X).output


def reconstruction_loss(model: AutoencoderModel, X) -> tuple[float, list[Layer], list[Layer]]:
    """Mean squared reconstruction error over the batch, with parameter
    gradients for both encoder and decoder."""
    X = as_matrix(X)
    enc_stack = mlp_forward(model.encoder, X)
    dec_stack = mlp_forward(model.decoder, enc_stack.output)
    diff = dec_stack.output - X
    loss = float((diff * diff).sum() / X.shape[0])
    d_out = 2.0 * diff / X.shape[0]
    dec_grads, d_latent = mlp_backward(model.decoder, dec_stack, d_out)
    enc_grads, _ = mlp_backward(model.encoder, enc_stack, d_latent)
    return loss, enc_grads, dec_grads


def _corrupt(X: Array, rate: float, rng: np.random.Generator) -> Array:
    if rate <= 0.0:
        return X
    mask = rng.random(X.shape) >= rate
    return X * mask


def _train_stack(stack_params: MlpParams, H: Array, epochs: int, corruption_rate: float,
                 config: SdaeConfig, corrupt_rng: np.random.Generator,
                 schedule_rng: np.random.Generator, label: str) -> MlpParams:
    """Train an autoencoding stack to reconstruct H from a corrupted copy of H."""
    arrays = params_to_arrays(stack_params)
    state = adam_init(arrays, learning_rate=config.learning_rate)
    n = H.shape[0]
    batch = min(config.batch_size, n)
    for epoch in range(epochs):
        schedule = make_schedule(n, batch, schedule_rng)
        for idx in schedule.batches:
            clean = H[idx]
            noisy = _corrupt(clean, corruption_rate, corrupt_rng)
            stack = mlp_forward(stack_params, noisy)
            diff = stack.output - clean
            loss = float((diff * diff).sum() / clean.shape[0])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss in {label} at epoch {epoch}")
            grads, _ = mlp_backward(stack_params, stack, 2.0 * diff / clean.shape[0])
            arrays, state = adam_step(state, arrays, grads_to_arrays(grads))
            stack_params = arrays_to_params(arrays, stack_params)
    return stack_params


def pretrain_sdae(dataset: Dataset, config: SdaeConfig, rng: np.random.Generator) -> AutoencoderModel:
    """Greedy layer-wise denoising pretraining, then end-to-end fine-tuning.

    Deterministic for a fixed generator state.
    """
    if dataset.dim != config.dims[0]:
        raise ValueError(
            f"dataset width {dataset.dim} does not match configured input width {config.dims[0]}"
        )
    seed = int(rng.integers(0, 2**63))
    init_rng, corrupt_rng, schedule_rng = spawn_rngs(seed, 3)

    dims = config.dims
    n_pairs = len(dims) - 1
    enc_layers: list[Layer] = []
    dec_layers: list[Layer] = []
    H = dataset.features
    for i in range(n_pairs):
        enc_act = RELU if i < n_pairs - 1 else LINEAR
        dec_act = RELU if i > 0 else LINEAR
        pair = make_mlp([dims[i], dims[i + 1], dims[i]], init_rng,
                        activations=[enc_act, dec_act])
        pair = _train_stack(pair, H, config.layerwise_epochs, config.corruption_rate,
                            config, corrupt_rng, schedule_rng, label=f"layer pair {i}")
        enc_layers.append(pair.layers[0])
        dec_layers.append(pair.layers[1])
        H = mlp_forward(MlpParams([pair.layers[0]]), H).output

    # fine-tune the assembled stack end to end, without corruption
    full = MlpParams(enc_layers + dec_layers[::-1])
    full = _train_stack(full, dataset.features, config.finetune_epochs, 0.0,
                        config, corrupt_rng, schedule_rng, label="fine-tune")
    n_enc = len(enc_layers)
    return AutoencoderModel(MlpParams(full.layers[:n_enc]), MlpParams(full.layers[n_enc:]))
