"""Training orchestration.

One additive branch folds the clustering, reconstruction, difficulty, size and
cardinality losses into a per-batch update; pairwise and triplet constraints
train through separate branches in an alternating fashion, one accumulated
update per constraint batch. Convergence is declared when the fraction of
changed hard assignments after an epoch drops below the tolerance.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import AutoencoderModel, SdaeConfig, build_autoencoder, encode, pretrain_sdae
from .checkpoint import save_checkpoint
from .clustering import (
    ClusterModel,
    hard_assign,
    kl_cluster_loss,
    kmeans,
    soft_assign,
    soft_assign_backward,
    target_distribution,
)
from .constraint_losses import (
    CardinalitySpec,
    ConstraintSet,
    HornRule,
    cardinality_bound_loss,
    cardinality_loss,
    cl_loss,
    difficulty_loss,
    evaluate_horn_rules,
    global_size_loss,
    ml_loss,
    triplet_loss,
)
from .data_io import Dataset, make_schedule
from .errors import NumericError
from .metrics import accuracy, nmi
from .numerics import (
    AdamState,
    Layer,
    MlpParams,
    adam_init,
    adam_step,
    arrays_to_params,
    grads_to_arrays,
    mlp_backward,
    mlp_forward,
    params_to_arrays,
    spawn_rngs,
)

INIT_MODES = ("raw+rand", "raw+kmeans", "ae+rand", "ae+kmeans")
KMEANS_RESTARTS = 20
GLOBAL_SIZE_BATCH_FACTOR = 25


@dataclass
class TrainConfig:
    """All optimizer and loss hyperparameters for one training run."""

    k: int
    max_epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 0.001
    lambda_ml: float = 0.1
    triplet_margin: float = 0.1
    constraint_batch_size: int = 256
    convergence_tol: float = 0.001
    init_mode: str = "ae+kmeans"
    clustering_loss_enabled: bool = True
    horn_tau: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")
        for name in ("max_epochs", "batch_size", "constraint_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.convergence_tol < 1.0:
            raise ValueError("convergence_tol must lie in (0, 1)")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")


@dataclass
class TrainReport:
    """What one run did: epochs, convergence, final metrics, loss traces."""

    epochs_run: int
    converged: bool
    final_acc: float | None
    final_nmi: float | None
    loss_traces: dict[str, list[float]] = field(default_factory=dict)
    label_changes: list[float] = field(default_factory=list)


def has_converged(prev_labels, cur_labels, tol: float) -> bool:
    """True when the fraction of changed labels is strictly below tol."""
    prev = np.asarray(prev_labels).reshape(-1)
    cur = np.asarray(cur_labels).reshape(-1)
    if prev.shape[0] != cur.shape[0]:
        raise ValueError(f"labelings differ in length: {prev.shape[0]} vs {cur.shape[0]}")
    return float((prev != cur).mean()) < tol


def initialize(dataset: Dataset, config: TrainConfig, sdae_config: SdaeConfig,
               rng: np.random.Generator,
               pretrained: AutoencoderModel | None = None) -> tuple[AutoencoderModel, ClusterModel]:
    """Set up network weights (random or pretrained) and centroids (random
    embedding rows or best-of-restarts k-means on the embedding)."""
    weight_mode, centroid_mode = config.init_mode.split("+")
    if weight_mode == "ae":
        model = pretrained.copy() if pretrained is not None else pretrain_sdae(dataset, sdae_config, rng)
    else:
        model = build_autoencoder(sdae_config.dims, rng)
    Z = encode(model, dataset.features)
    if centroid_mode == "kmeans":
        centroids, _, _ = kmeans(Z, config.k, restarts=KMEANS_RESTARTS, rng=rng)
    else:
        centroids = Z[rng.choice(dataset.n, size=config.k, replace=False)].copy()
    return model, ClusterModel(centroids)


@dataclass
class _Branch:
    kind: str                      # "pairwise" or "triplet"
    records: list[tuple]           # ("ML", a, b) / ("CL", a, b) or (a, p, n)
    horn_rules: list[HornRule] = field(default_factory=list)


class _ParamBundle:
    """Flat parameter list (encoder, decoder, centroids) threaded through Adam."""

    def __init__(self, model: AutoencoderModel, clusters: ClusterModel):
        self.enc_template = model.encoder
        self.dec_template = model.decoder
        self.dof = clusters.dof
        self.n_enc = 2 * len(model.encoder.layers)
        self.n_dec = 2 * len(model.decoder.layers)
        self.arrays = (params_to_arrays(model.encoder)
                       + params_to_arrays(model.decoder)
                       + [clusters.centroids])

    def views(self) -> tuple[MlpParams, MlpParams, ClusterModel]:
        enc = arrays_to_params(self.arrays[: self.n_enc], self.enc_template)
        dec = arrays_to_params(self.arrays[self.n_enc: self.n_enc + self.n_dec], self.dec_template)
        clusters = ClusterModel(self.arrays[-1], self.dof)
        return enc, dec, clusters

    def gradient_list(self, enc_grads, dec_grads, centroid_grad) -> list:
        return grads_to_arrays(enc_grads) + grads_to_arrays(dec_grads) + [centroid_grad]


def _zero_grads(mlp: MlpParams) -> list[Layer]:
    return [Layer(np.zeros_like(l.weight), np.zeros_like(l.bias), l.activation)
            for l in mlp.layers]


def _unique_preserving(order: list[int]) -> list[int]:
    seen: set[int] = set()
    out: list[int] = []
    for i in order:
        if i not in seen:
            seen.add(i)
            out.append(i)
    return out


def run_training(dataset: Dataset, constraints: ConstraintSet | None, config: TrainConfig,
                 *, sdae_config: SdaeConfig | None = None,
                 models: tuple[AutoencoderModel, ClusterModel] | None = None,
                 checkpoint_every: int | None = None,
                 checkpoint_dir: str | None = None) -> tuple[tuple[AutoencoderModel, ClusterModel], TrainReport]:
    """Alternating training with one constraint branch.

    The constraint branch trains pairwise or triplet constraints, not both;
    pass both kinds through run_training_multi instead. Difficulty, size and
    cardinality constraints fold into the additive branch.
    """
    constraints = constraints if constraints is not None else ConstraintSet()
    constraints.validate(dataset.n)
    if constraints.has_pairwise and constraints.has_triplets:
        raise ValueError("both pairwise and triplet constraints given; use run_training_multi")
    branches = []
    if constraints.has_pairwise or constraints.horn_rules:
        records = ([("ML", a, b) for a, b in constraints.must_links]
                   + [("CL", a, b) for a, b in constraints.cannot_links])
        branches.append(_Branch("pairwise", records, constraints.horn_rules))
    elif constraints.has_triplets:
        branches.append(_Branch("triplet", list(constraints.triplets)))
    return _train(dataset, config, constraints, branches, sdae_config, models,
                  checkpoint_every, checkpoint_dir)


def run_training_multi(dataset: Dataset, pairwise: ConstraintSet | None,
                       triplets: ConstraintSet | None, config: TrainConfig,
                       *, sdae_config: SdaeConfig | None = None,
                       models: tuple[AutoencoderModel, ClusterModel] | None = None,
                       checkpoint_every: int | None = None,
                       checkpoint_dir: str | None = None) -> tuple[tuple[AutoencoderModel, ClusterModel], TrainReport]:
    """Alternating training with pairwise batches then triplet batches per epoch."""
    pairwise = pairwise if pairwise is not None else ConstraintSet()
    triplets = triplets if triplets is not None else ConstraintSet()
    pairwise.validate(dataset.n)
    triplets.validate(dataset.n)
    if pairwise.has_triplets:
        raise ValueError("the pairwise set contains triplet records")
    if triplets.has_pairwise:
        raise ValueError("the triplet set contains pairwise records")
    branches = []
    if pairwise.has_pairwise or pairwise.horn_rules:
        records = ([("ML", a, b) for a, b in pairwise.must_links]
                   + [("CL", a, b) for a, b in pairwise.cannot_links])
        branches.append(_Branch("pairwise", records, pairwise.horn_rules))
    if triplets.has_triplets:
        branches.append(_Branch("triplet", list(triplets.triplets)))
    return _train(dataset, config, ConstraintSet(), branches, sdae_config, models,
                  checkpoint_every, checkpoint_dir)


def _train(dataset: Dataset, config: TrainConfig, additive: ConstraintSet,
           branches: list[_Branch], sdae_config, models, checkpoint_every, checkpoint_dir):
    n = dataset.n
    batch_size = min(config.batch_size, n)
    if additive.global_size and batch_size < GLOBAL_SIZE_BATCH_FACTOR * config.k:
        raise ValueError(
            f"global size constraints need batches of at least "
            f"{GLOBAL_SIZE_BATCH_FACTOR * config.k}, got {batch_size}"
        )
    if additive.difficulty is not None and additive.difficulty.shape[0] != n:
        raise ValueError("difficulty vector length does not match the dataset")

    init_rng, schedule_rng, pairwise_rng, triplet_rng = spawn_rngs(config.seed, 4)
    branch_rngs = {"pairwise": pairwise_rng, "triplet": triplet_rng}

    if models is None:
        if sdae_config is None:
            raise ValueError("either models or sdae_config must be provided")
        model, clusters = initialize(dataset, config, sdae_config, init_rng)
    else:
        model, clusters = models[0].copy(), models[1].copy()
    if clusters.k != config.k:
        raise ValueError(f"cluster model has k={clusters.k}, config expects k={config.k}")

    bundle = _ParamBundle(model, clusters)
    adam = adam_init(bundle.arrays, learning_rate=config.learning_rate)

    X = dataset.features
    enc, dec, clusters = bundle.views()
    prev_labels = hard_assign(soft_assign(clusters, encode(model, X)))

    use_difficulty = additive.difficulty is not None
    use_cardinality = additive.cardinality is not None
    traces: dict[str, list[float]] = {"additive": [], "reconstruction": []}
    if config.clustering_loss_enabled:
        traces["clustering"] = []
    if use_difficulty:
        traces["difficulty"] = []
    if additive.global_size:
        traces["global_size"] = []
    if use_cardinality:
        traces["cardinality"] = []
    for branch in branches:
        traces[branch.kind] = []
    label_changes: list[float] = []

    epochs_run = 0
    converged = False
    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        sums = {key: 0.0 for key in traces}
        schedule = make_schedule(n, batch_size, schedule_rng)
        for idx in schedule.batches:
            enc, dec, clusters = bundle.views()
            Xb = X[idx]
            enc_stack = mlp_forward(enc, Xb)
            Z = enc_stack.output
            dZ = np.zeros_like(Z)
            d_centroids = np.zeros_like(clusters.centroids)
            batch_loss = 0.0

            need_q = (config.clustering_loss_enabled or use_difficulty
                      or additive.global_size or use_cardinality)
            if need_q:
                Q = soft_assign(clusters, Z)
                dQ = np.zeros_like(Q)
                if config.clustering_loss_enabled:
                    P = target_distribution(Q)
                    value, grad = kl_cluster_loss(P, Q)
                    dQ += grad
                    batch_loss += value
                    sums["clustering"] += value
                if use_difficulty:
                    value, grad = difficulty_loss(Q, additive.difficulty[idx])
                    dQ += grad
                    batch_loss += value
                    sums["difficulty"] += value
                if additive.global_size:
                    value, grad = global_size_loss(Q, config.k)
                    dQ += grad
                    batch_loss += value
                    sums["global_size"] += value
                if use_cardinality:
                    value, grad = _batch_cardinality(Q, additive.cardinality, idx, n)
                    if grad is not None:
                        dQ += grad
                        batch_loss += value
                        sums["cardinality"] += value
                dZq, d_centroids = soft_assign_backward(clusters, Z, dQ)
                dZ += dZq

            dec_stack = mlp_forward(dec, Z)
            diff = dec_stack.output - Xb
            recon = float((diff * diff).sum() / Xb.shape[0])
            dec_grads, dZr = mlp_backward(dec, dec_stack, 2.0 * diff / Xb.shape[0])
            dZ += dZr
            batch_loss += recon
            sums["reconstruction"] += recon
            sums["additive"] += batch_loss
            if not np.isfinite(batch_loss):
                raise NumericError(f"non-finite additive loss at epoch {epoch}")

            enc_grads, _ = mlp_backward(enc, enc_stack, dZ)
            bundle.arrays, adam = adam_step(
                adam, bundle.arrays, bundle.gradient_list(enc_grads, dec_grads, d_centroids))

        n_batches = len(schedule.batches)
        for key in ("additive", "reconstruction", "clustering", "difficulty",
                    "global_size", "cardinality"):
            if key in traces:
                traces[key].append(sums[key] / n_batches)

        for branch in branches:
            branch_loss, adam = _run_branch(branch, branch_rngs[branch.kind],
                                            bundle, adam, dataset, config, epoch)
            traces[branch.kind].append(branch_loss)

        enc, dec, clusters = bundle.views()
        model = AutoencoderModel(enc, dec)
        labels = hard_assign(soft_assign(clusters, encode(model, X)))
        changed = float((labels != prev_labels).mean())
        label_changes.append(changed)
        prev_labels = labels

        if checkpoint_every and checkpoint_dir and epoch % checkpoint_every == 0:
            path = os.path.join(checkpoint_dir, f"checkpoint-epoch{epoch:04d}.npz")
            save_checkpoint(path, model, clusters, adam, extra_meta={"epoch": epoch})

        if changed < config.convergence_tol:
            converged = True
            break

    enc, dec, clusters = bundle.views()
    model = AutoencoderModel(enc, dec)
    final_labels = hard_assign(soft_assign(clusters, encode(model, X)))
    final_acc = final_nmi = None
    if dataset.labels is not None:
        final_acc = accuracy(dataset.labels, final_labels)
        final_nmi = nmi(dataset.labels, final_labels)
    report = TrainReport(epochs_run=epochs_run, converged=converged,
                         final_acc=final_acc, final_nmi=final_nmi,
                         loss_traces=traces, label_changes=label_changes)
    return (model, clusters), report


def _batch_cardinality(Q, spec: CardinalitySpec, idx, n_total: int):
    """Cardinality losses on a mini-batch slice of the protected values.

    Bounds scale with the batch fraction; a batch that happens to contain a
    single group contributes nothing in equal mode.
    """
    psv_b = spec.psv[idx]
    if spec.mode == "equal":
        if psv_b.all() or not psv_b.any():
            return 0.0, None
        return cardinality_loss(Q, CardinalitySpec(psv_b, mode="equal"))
    fraction = len(idx) / n_total
    scaled = CardinalitySpec(psv_b, mode="bounds",
                             lower=spec.lower * fraction, upper=spec.upper * fraction)
    return cardinality_bound_loss(Q, scaled)


def _run_branch(branch: _Branch, rng: np.random.Generator, bundle: _ParamBundle,
                adam: AdamState, dataset: Dataset, config: TrainConfig,
                epoch: int) -> tuple[float, AdamState]:
    """One pass over a constraint branch: shuffled records, one accumulated
    update per constraint batch. Mutates bundle.arrays; returns the mean batch
    loss and the new optimizer state."""
    order = rng.permutation(len(branch.records)) if branch.records else np.array([], dtype=np.int64)
    chunks = [order[i:i + config.constraint_batch_size]
              for i in range(0, len(order), config.constraint_batch_size)]
    if not chunks and branch.horn_rules:
        chunks = [np.array([], dtype=np.int64)]
    total = 0.0
    for chunk in chunks:
        records = [branch.records[i] for i in chunk]
        if branch.kind == "pairwise":
            loss, adam = _pairwise_batch(records, branch.horn_rules, bundle, adam,
                                         dataset, config, epoch)
        else:
            loss, adam = _triplet_batch(records, bundle, adam, dataset, config, epoch)
        total += loss
    return (total / len(chunks) if chunks else 0.0), adam


def _pairwise_batch(records, horn_rules, bundle: _ParamBundle, adam: AdamState,
                    dataset: Dataset, config: TrainConfig, epoch: int) -> tuple[float, AdamState]:
    ml_pairs = [(a, b) for kind, a, b in records if kind == "ML"]
    cl_pairs = [(a, b) for kind, a, b in records if kind == "CL"]
    idx = _unique_preserving([i for pair in ml_pairs + cl_pairs for i in pair]
                             + [i for rule in horn_rules for x, y in rule.body + [rule.head]
                                for i in (x, y)])
    if not idx:
        return 0.0, adam
    pos = {g: l for l, g in enumerate(idx)}

    enc, dec, clusters = bundle.views()
    Xb = dataset.features[np.asarray(idx, dtype=np.int64)]
    enc_stack = mlp_forward(enc, Xb)
    Z = enc_stack.output
    Q = soft_assign(clusters, Z)

    local_ml = [(pos[a], pos[b]) for a, b in ml_pairs]
    local_cl = [(pos[a], pos[b]) for a, b in cl_pairs]
    if horn_rules:
        local_rules = [HornRule([(pos[x], pos[y]) for x, y in r.body],
                                (pos[r.head[0]], pos[r.head[1]]))
                       for r in horn_rules]
        local_cl = local_cl + evaluate_horn_rules(Q, local_rules, config.horn_tau)

    ml_value, ml_grad = ml_loss(Q, local_ml)
    cl_value, cl_grad = cl_loss(Q, local_cl)
    loss = config.lambda_ml * ml_value + cl_value
    dQ = config.lambda_ml * ml_grad + cl_grad
    dZ, d_centroids = soft_assign_backward(clusters, Z, dQ)

    # reconstruction guards must-link batches against collapse
    if local_ml:
        rows = np.asarray(_unique_preserving([i for pair in local_ml for i in pair]),
                          dtype=np.int64)
        dec_stack = mlp_forward(dec, Z[rows])
        diff = dec_stack.output - Xb[rows]
        recon = float((diff * diff).sum() / rows.shape[0])
        dec_grads, dZ_ml = mlp_backward(dec, dec_stack, 2.0 * diff / rows.shape[0])
        np.add.at(dZ, rows, dZ_ml)
        loss += recon
    else:
        dec_grads = _zero_grads(dec)

    if not np.isfinite(loss):
        raise NumericError(f"non-finite pairwise constraint loss at epoch {epoch}")
    enc_grads, _ = mlp_backward(enc, enc_stack, dZ)
    bundle.arrays, adam = adam_step(
        adam, bundle.arrays, bundle.gradient_list(enc_grads, dec_grads, d_centroids))
    return loss, adam


def _triplet_batch(records, bundle: _ParamBundle, adam: AdamState,
                   dataset: Dataset, config: TrainConfig, epoch: int) -> tuple[float, AdamState]:
    if not records:
        return 0.0, adam
    idx = _unique_preserving([i for triple in records for i in triple])
    pos = {g: l for l, g in enumerate(idx)}

    enc, dec, clusters = bundle.views()
    Xb = dataset.features[np.asarray(idx, dtype=np.int64)]
    enc_stack = mlp_forward(enc, Xb)
    Z = enc_stack.output
    Q = soft_assign(clusters, Z)

    local = [(pos[a], pos[p], pos[n]) for a, p, n in records]
    loss, dQ = triplet_loss(Q, local, margin=config.triplet_margin)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite triplet constraint loss at epoch {epoch}")
    dZ, d_centroids = soft_assign_backward(clusters, Z, dQ)
    enc_grads, _ = mlp_backward(enc, enc_stack, dZ)
    bundle.arrays, adam = adam_step(
        adam, bundle.arrays, bundle.gradient_list(enc_grads, _zero_grads(dec), d_centroids))
    return loss, adam
