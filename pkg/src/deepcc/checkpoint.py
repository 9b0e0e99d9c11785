"""Versioned model checkpoints: autoencoder, centroids, and optimizer state.

One .npz file per checkpoint; round trips are bit-exact for float64 payloads.
"""

from __future__ import annotations

import json

import numpy as np

from .autoencoder import AutoencoderModel
from .clustering import ClusterModel
from .errors import FormatError
from .numerics import AdamState, Layer, MlpParams

FORMAT_VERSION = 1


def _mlp_entries(prefix: str, mlp: MlpParams, arrays: dict) -> dict:
    meta = {"n_layers": len(mlp.layers), "activations": [l.activation for l in mlp.layers]}
    for i, layer in enumerate(mlp.layers):
        arrays[f"{prefix}_w{i}"] = layer.weight
        arrays[f"{prefix}_b{i}"] = layer.bias
    return meta


def _mlp_from_entries(prefix: str, meta: dict, data) -> MlpParams:
    layers = []
    for i, act in enumerate(meta["activations"]):
        layers.append(Layer(data[f"{prefix}_w{i}"], data[f"{prefix}_b{i}"], act))
    return MlpParams(layers)


def save_checkpoint(path: str, autoencoder: AutoencoderModel,
                    clusters: ClusterModel | None = None,
                    adam: AdamState | None = None,
                    extra_meta: dict | None = None) -> None:
    arrays: dict = {}
    meta = {
        "version": FORMAT_VERSION,
        "encoder": _mlp_entries("enc", autoencoder.encoder, arrays),
        "decoder": _mlp_entries("dec", autoencoder.decoder, arrays),
        "has_clusters": clusters is not None,
        "has_adam": adam is not None,
        "extra": extra_meta or {},
    }
    if clusters is not None:
        arrays["centroids"] = clusters.centroids
        meta["dof"] = clusters.dof
    if adam is not None:
        meta["adam"] = {
            "step": adam.step,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "learning_rate": adam.learning_rate,
            "n_arrays": len(adam.first_moment),
        }
        for i, (m, v) in enumerate(zip(adam.first_moment, adam.second_moment)):
            arrays[f"adam_m{i}"] = m
            arrays[f"adam_v{i}"] = v
    arrays["meta_json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str) -> dict:
    """Returns {"autoencoder", "clusters", "adam", "meta"}; absent parts are None."""
    with np.load(path) as data:
        try:
            meta = json.loads(bytes(data["meta_json"]).decode())
        except KeyError:
            raise FormatError(f"{path}: not a model checkpoint (missing metadata)") from None
        if meta.get("version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
        autoencoder = AutoencoderModel(
            _mlp_from_entries("enc", meta["encoder"], data),
            _mlp_from_entries("dec", meta["decoder"], data),
        )
        clusters = None
        if meta["has_clusters"]:
            clusters = ClusterModel(data["centroids"], dof=meta["dof"])
        adam = None
        if meta["has_adam"]:
            a = meta["adam"]
            adam = AdamState(
                step=a["step"],
                first_moment=[data[f"adam_m{i}"] for i in range(a["n_arrays"])],
                second_moment=[data[f"adam_v{i}"] for i in range(a["n_arrays"])],
                beta1=a["beta1"],
                beta2=a["beta2"],
                epsilon=a["epsilon"],
                learning_rate=a["learning_rate"],
            )
        return {"autoencoder": autoencoder, "clusters": clusters, "adam": adam,
                "meta": meta["extra"]}
