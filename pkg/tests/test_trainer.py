import numpy as np
import pytest

from deepcc.autoencoder import SdaeConfig, encode
from deepcc.clustering import hard_assign, soft_assign
from deepcc.constraint_gen import pairwise_from_labels
from deepcc.constraint_losses import ConstraintSet, HornRule
from deepcc.data_io import Dataset
from deepcc.metrics import accuracy
from deepcc.numerics import make_rng
from deepcc.trainer import TrainConfig, has_converged, initialize, run_training, run_training_multi


def gaussian_blobs(n=120, k=3, sep=6.0, seed=0, dim=2):
    rng = make_rng(seed)
    centers = rng.standard_normal((k, dim)) * sep
    labels = rng.integers(0, k, size=n)
    X = centers[labels] + rng.standard_normal((n, dim))
    return Dataset(X, labels)


def small_config(**overrides):
    defaults = dict(k=3, max_epochs=5, batch_size=32, convergence_tol=0.001,
                    init_mode="raw+kmeans", seed=0)
    defaults.update(overrides)
    return TrainConfig(**defaults)


def small_sdae(dim=2):
    return SdaeConfig(dims=[dim, 8, 2], corruption_rate=0.1, layerwise_epochs=3,
                      finetune_epochs=5, batch_size=32)


def test_has_converged_identical():
    assert has_converged([1, 2, 3], [1, 2, 3], 0.001)


def test_has_converged_boundary_is_strict():
    prev = np.zeros(1000, dtype=int)
    cur = prev.copy()
    cur[0] = 1
    assert not has_converged(prev, cur, 0.001)  # 0.001 is not < 0.001
    assert has_converged(prev, prev, 0.001)


def test_has_converged_length_mismatch():
    with pytest.raises(ValueError):
        has_converged([1, 2], [1, 2, 3], 0.01)


def test_initialize_rand_centroids_are_embedding_rows():
    ds = gaussian_blobs()
    config = small_config(init_mode="raw+rand")
    model, clusters = initialize(ds, config, small_sdae(), make_rng(1))
    Z = encode(model, ds.features)
    for centroid in clusters.centroids:
        assert any(np.allclose(centroid, z) for z in Z)
    assert len(np.unique(clusters.centroids, axis=0)) == config.k


def test_initialize_same_seed_identical():
    ds = gaussian_blobs()
    config = small_config(init_mode="raw+rand")
    a = initialize(ds, config, small_sdae(), make_rng(2))
    b = initialize(ds, config, small_sdae(), make_rng(2))
    assert np.array_equal(a[1].centroids, b[1].centroids)
    for la, lb in zip(a[0].encoder.layers, b[0].encoder.layers):
        assert np.array_equal(la.weight, lb.weight)


def test_initialize_kmeans_beats_random_centroids_on_separable_data():
    ds = gaussian_blobs(n=150, sep=8.0, seed=3)
    sdae = SdaeConfig(dims=[2, 8, 2], corruption_rate=0.1, layerwise_epochs=10,
                      finetune_epochs=20, batch_size=32)
    accs = {}
    for mode in ("ae+kmeans", "ae+rand"):
        config = small_config(init_mode=mode, seed=4)
        model, clusters = initialize(ds, config, sdae, make_rng(4))
        labels = hard_assign(soft_assign(clusters, encode(model, ds.features)))
        accs[mode] = accuracy(ds.labels, labels)
    assert accs["ae+kmeans"] >= accs["ae+rand"]


def test_run_training_deterministic():
    ds = gaussian_blobs(seed=5)
    config = small_config(seed=6)
    _, a = run_training(ds, None, config, sdae_config=small_sdae())
    _, b = run_training(ds, None, config, sdae_config=small_sdae())
    assert a == b


def test_run_training_empty_set_matches_unconstrained():
    ds = gaussian_blobs(seed=7)
    config = small_config(seed=8)
    _, a = run_training(ds, None, config, sdae_config=small_sdae())
    _, b = run_training(ds, ConstraintSet(), config, sdae_config=small_sdae())
    assert a.loss_traces["additive"] == b.loss_traces["additive"]
    assert a.final_acc == b.final_acc


def test_run_training_rejects_mixed_constraint_kinds():
    ds = gaussian_blobs()
    constraints = ConstraintSet(must_links=[(0, 1)], triplets=[(0, 1, 2)])
    with pytest.raises(ValueError, match="run_training_multi"):
        run_training(ds, constraints, small_config(), sdae_config=small_sdae())


def test_run_training_epochs_bounded_and_traces_filled():
    ds = gaussian_blobs(seed=9)
    config = small_config(max_epochs=3, convergence_tol=1e-6, seed=10)
    _, report = run_training(ds, None, config, sdae_config=small_sdae())
    assert report.epochs_run <= 3
    assert len(report.loss_traces["additive"]) == report.epochs_run
    assert len(report.label_changes) == report.epochs_run


def test_run_training_convergence_stops_early():
    ds = gaussian_blobs(n=90, sep=10.0, seed=11)
    config = small_config(max_epochs=30, convergence_tol=0.05, seed=12,
                          init_mode="ae+kmeans")
    _, report = run_training(ds, None, config, sdae_config=small_sdae())
    assert report.converged
    assert report.epochs_run < 30
    assert report.label_changes[-1] < 0.05


def test_clustering_loss_toggle_trains_reconstruction_only():
    ds = gaussian_blobs(seed=13)
    config = small_config(clustering_loss_enabled=False, seed=14)
    models_before = initialize(ds, config, small_sdae(), make_rng(14))
    (model, clusters), report = run_training(ds, None, config, models=models_before)
    assert "clustering" not in report.loss_traces
    assert report.loss_traces["additive"] == report.loss_traces["reconstruction"]
    # nothing pushes the centroids when no assignment-based loss is active
    assert np.array_equal(clusters.centroids, models_before[1].centroids)


def test_constrained_training_beats_unconstrained_on_blobs():
    ds = gaussian_blobs(n=150, k=3, sep=4.0, seed=15)
    config = small_config(max_epochs=10, seed=16, init_mode="ae+kmeans")
    rng = make_rng(17)
    models = initialize(ds, config, small_sdae(), rng)
    ml, cl = pairwise_from_labels(ds.labels, 50, rng)
    constraints = ConstraintSet(must_links=ml, cannot_links=cl)
    _, unconstrained = run_training(ds, None, config, models=models)
    _, constrained = run_training(ds, constraints, config, models=models)
    assert constrained.final_acc >= unconstrained.final_acc - 0.05
    assert "pairwise" in constrained.loss_traces


def test_pairwise_branch_loss_trace_present_and_finite():
    ds = gaussian_blobs(seed=18)
    rng = make_rng(19)
    ml, cl = pairwise_from_labels(ds.labels, 30, rng)
    config = small_config(seed=20, constraint_batch_size=8)
    _, report = run_training(ds, ConstraintSet(must_links=ml, cannot_links=cl),
                             config, sdae_config=small_sdae())
    assert len(report.loss_traces["pairwise"]) == report.epochs_run
    assert all(np.isfinite(v) for v in report.loss_traces["pairwise"])


def test_multi_reduces_to_single_branch_runs():
    ds = gaussian_blobs(seed=21)
    rng = make_rng(22)
    ml, cl = pairwise_from_labels(ds.labels, 30, rng)
    pairwise = ConstraintSet(must_links=ml, cannot_links=cl)
    triplets = ConstraintSet(triplets=[(0, 1, 2), (3, 4, 5), (6, 7, 8)])
    config = small_config(seed=23)

    _, single_pw = run_training(ds, pairwise, config, sdae_config=small_sdae())
    _, multi_pw = run_training_multi(ds, pairwise, None, config, sdae_config=small_sdae())
    assert single_pw == multi_pw

    _, single_tri = run_training(ds, triplets, config, sdae_config=small_sdae())
    _, multi_tri = run_training_multi(ds, None, triplets, config, sdae_config=small_sdae())
    assert single_tri == multi_tri


def test_multi_runs_both_branches():
    ds = gaussian_blobs(seed=24)
    rng = make_rng(25)
    ml, cl = pairwise_from_labels(ds.labels, 20, rng)
    pairwise = ConstraintSet(must_links=ml, cannot_links=cl)
    triplets = ConstraintSet(triplets=[(0, 1, 2), (3, 4, 5)])
    _, report = run_training_multi(ds, pairwise, triplets, small_config(seed=26),
                                   sdae_config=small_sdae())
    assert "pairwise" in report.loss_traces and "triplet" in report.loss_traces


def test_multi_rejects_misplaced_records():
    ds = gaussian_blobs()
    config = small_config()
    with pytest.raises(ValueError):
        run_training_multi(ds, ConstraintSet(triplets=[(0, 1, 2)]), None, config,
                           sdae_config=small_sdae())
    with pytest.raises(ValueError):
        run_training_multi(ds, None, ConstraintSet(must_links=[(0, 1)]), config,
                           sdae_config=small_sdae())


def test_global_size_requires_large_batches():
    ds = gaussian_blobs()
    config = small_config(batch_size=32)  # needs 25 * k = 75
    with pytest.raises(ValueError, match="global size"):
        run_training(ds, ConstraintSet(global_size=True), config, sdae_config=small_sdae())


def test_difficulty_vector_length_checked():
    ds = gaussian_blobs()
    constraints = ConstraintSet(difficulty=np.zeros(10))
    with pytest.raises(ValueError):
        run_training(ds, constraints, small_config(), sdae_config=small_sdae())


def test_horn_rules_append_cannot_links_during_training():
    ds = gaussian_blobs(n=60, sep=8.0, seed=27)
    # anchor the rule body on a pair that must end up together (same label)
    same = np.flatnonzero(ds.labels == ds.labels[0])[:2]
    diff = [int(np.flatnonzero(ds.labels == l)[0]) for l in np.unique(ds.labels)[:2]]
    rule = HornRule(body=[(int(same[0]), int(same[1]))], head=(diff[0], diff[1]))
    constraints = ConstraintSet(horn_rules=[rule])
    config = small_config(max_epochs=3, seed=28)
    _, report = run_training(ds, constraints, config, sdae_config=small_sdae())
    assert "pairwise" in report.loss_traces


def test_checkpoints_written_every_epoch(tmp_path):
    ds = gaussian_blobs(seed=29)
    config = small_config(max_epochs=2, convergence_tol=1e-9, seed=30)
    run_training(ds, None, config, sdae_config=small_sdae(),
                 checkpoint_every=1, checkpoint_dir=str(tmp_path))
    assert (tmp_path / "checkpoint-epoch0001.npz").exists()
    assert (tmp_path / "checkpoint-epoch0002.npz").exists()


def test_report_metrics_none_without_labels():
    ds = gaussian_blobs(seed=31)
    unlabeled = Dataset(ds.features)
    _, report = run_training(unlabeled, None, small_config(seed=32), sdae_config=small_sdae())
    assert report.final_acc is None and report.final_nmi is None


def digit_group_ontology():
    """Digit classes under three visual-similarity groups below one root."""
    from deepcc.constraint_gen import OntologyGraph

    groups = {0: "g1", 6: "g1", 8: "g1", 1: "g2", 4: "g2", 7: "g2",
              2: "g3", 3: "g3", 5: "g3", 9: "g3"}
    adjacency = {"root": set()}
    for digit, group in groups.items():
        adjacency.setdefault(group, set()).add("root")
        adjacency["root"].add(group)
        adjacency.setdefault(f"d{digit}", set()).add(group)
        adjacency[group].add(f"d{digit}")
    return OntologyGraph(adjacency, {d: f"d{d}" for d in range(10)})


def test_multi_combining_constraint_types_beats_either_alone():
    # limited labeled pool: full pairwise graph over it plus ontology triplets
    from sklearn.datasets import load_digits

    from deepcc.autoencoder import pretrain_sdae
    from deepcc.constraint_gen import TripletGenConfig, triplets_from_ontology

    base = load_digits()
    rng = make_rng(31337)
    idx = rng.choice(len(base.data), size=1500, replace=False)
    ds = Dataset(base.data[idx] / 16.0, base.target[idx])
    graph = digit_group_ontology()

    sdae = SdaeConfig(dims=[64, 64, 10], corruption_rate=0.2, layerwise_epochs=20,
                      finetune_epochs=40, batch_size=256)
    ae = pretrain_sdae(ds, sdae, make_rng(55))

    means = {"none": [], "pair": [], "tri": [], "both": []}
    for seed in range(5):
        r = make_rng(800 + seed)
        pool = r.choice(ds.n, size=100, replace=False)
        ml, cl = [], []
        for i in range(100):
            for j in range(i + 1, 100):
                a, b = int(pool[i]), int(pool[j])
                (ml if ds.labels[a] == ds.labels[b] else cl).append((a, b))
        pairwise = ConstraintSet(must_links=ml, cannot_links=cl)
        tri_cfg = TripletGenConfig(theta_p=0.5, theta_n=0.3, count=1000, seed=seed)
        triplets = ConstraintSet(
            triplets=triplets_from_ontology(ds.labels, graph, tri_cfg, r, pool=pool))
        config = TrainConfig(k=10, max_epochs=15, batch_size=256,
                             convergence_tol=0.01, seed=900 + seed)
        models = initialize(ds, config, sdae, make_rng(900 + seed), pretrained=ae)
        _, none = run_training(ds, None, config, models=models)
        _, pair = run_training(ds, pairwise, config, models=models)
        _, tri = run_training(ds, triplets, config, models=models)
        _, both = run_training_multi(ds, pairwise, triplets, config, models=models)
        means["none"].append(none.final_acc)
        means["pair"].append(pair.final_acc)
        means["tri"].append(tri.final_acc)
        means["both"].append(both.final_acc)

    avg = {name: float(np.mean(values)) for name, values in means.items()}
    assert avg["both"] >= max(avg["pair"], avg["tri"]), avg
    assert min(avg["pair"], avg["tri"]) >= avg["none"] - 0.01, avg
