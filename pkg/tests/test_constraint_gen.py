import numpy as np
import pytest

from deepcc.constraint_gen import (
    OntologyGraph,
    TripletGenConfig,
    close_constraints,
    difficulty_from_weak_learner,
    inject_noise,
    ontology_similarity,
    pairwise_from_labels,
    triplets_from_embedding,
    triplets_from_ontology,
)
from deepcc.data_io import Dataset
from deepcc.errors import ConsistencyError
from deepcc.numerics import make_rng


def test_pairwise_from_labels_label_consistency():
    rng = make_rng(0)
    labels = rng.integers(0, 5, size=60)
    ml, cl = pairwise_from_labels(labels, 100, rng)
    assert len(ml) + len(cl) == 100
    assert all(labels[a] == labels[b] for a, b in ml)
    assert all(labels[a] != labels[b] for a, b in cl)


def test_pairwise_from_labels_simple_cases():
    labels = np.array([0, 0, 1])
    ml, cl = pairwise_from_labels(labels, 3, make_rng(1))
    assert set(ml) == {(0, 1)}
    assert set(cl) == {(0, 2), (1, 2)}


def test_pairwise_count_exceeding_pairs_is_an_error():
    with pytest.raises(ValueError):
        pairwise_from_labels(np.array([0, 1, 0]), 4, make_rng(0))


def test_close_constraints_ml_transitivity():
    ml, cl = close_constraints([(0, 1), (1, 2)], [])
    assert (0, 2) in ml and (0, 1) in ml and (1, 2) in ml


def test_close_constraints_entailed_cl():
    ml, cl = close_constraints([(0, 1)], [(1, 2)])
    assert (0, 2) in cl and (1, 2) in cl


def test_close_constraints_detects_contradiction():
    with pytest.raises(ConsistencyError):
        close_constraints([(0, 1), (1, 2)], [(0, 2)])


@pytest.mark.parametrize("seed", range(3))
def test_close_constraints_idempotent_and_monotone(seed):
    rng = make_rng(seed)
    labels = rng.integers(0, 4, size=30)
    ml, cl = pairwise_from_labels(labels, 60, rng)
    ml1, cl1 = close_constraints(ml, cl)
    ml2, cl2 = close_constraints(ml1, cl1)
    assert ml1 == ml2 and cl1 == cl2
    canonical = {(min(a, b), max(a, b)) for a, b in ml}
    assert canonical <= set(ml1)


def separable_dataset(n_per_class=20, seed=0):
    rng = make_rng(seed)
    centers = np.array([[0.0, 0.0], [40.0, 0.0], [0.0, 40.0]])
    X = np.vstack([c + rng.standard_normal((n_per_class, 2)) * 0.2 for c in centers])
    y = np.repeat([0, 1, 2], n_per_class)
    return Dataset(X, y)


def test_difficulty_weak_learner_separable_all_easy():
    ds = separable_dataset()
    scores = difficulty_from_weak_learner(ds, 3, make_rng(1))
    assert np.all(scores == 1.0)


def test_difficulty_weak_learner_marks_mistakes():
    ds = separable_dataset(seed=2)
    # corrupt one label so the weak learner cannot match it
    labels = ds.labels.copy()
    labels[0] = 1
    corrupted = Dataset(ds.features, labels)
    scores = difficulty_from_weak_learner(corrupted, 3, make_rng(3))
    assert scores[0] == pytest.approx(-0.1)
    assert set(np.unique(scores)) <= {1.0, -0.1}


def test_difficulty_weak_learner_codomain():
    rng = make_rng(4)
    ds = Dataset(rng.standard_normal((50, 3)), rng.integers(0, 4, size=50))
    scores = difficulty_from_weak_learner(ds, 4, make_rng(5), restarts=3, max_iters=20)
    assert set(np.unique(scores)) <= {1.0, -0.1}


def test_difficulty_weak_learner_k_mismatch():
    ds = separable_dataset()
    with pytest.raises(ValueError):
        difficulty_from_weak_learner(ds, 5, make_rng(0))


def test_triplets_from_embedding_orders_by_distance():
    Z = np.array([[0.0], [1.0], [10.0]])
    triplets = triplets_from_embedding(Z, 50, make_rng(6))
    for a, p, n in triplets:
        assert np.linalg.norm(Z[a] - Z[p]) <= np.linalg.norm(Z[a] - Z[n])


def test_triplets_from_embedding_tie_prefers_lower_index():
    Z = np.array([[0.0], [1.0], [-1.0]])  # candidates equidistant from anchor 0
    triplets = [t for t in triplets_from_embedding(Z, 200, make_rng(7)) if t[0] == 0]
    ties = [t for t in triplets if {t[1], t[2]} == {1, 2}]
    assert ties and all(p == 1 and n == 2 for _, p, n in ties)


def test_triplets_from_embedding_needs_three_rows():
    with pytest.raises(ValueError):
        triplets_from_embedding(np.zeros((2, 1)), 1, make_rng(0))


def chain_graph():
    # a -- b -- c -- d -- e
    edges = {
        "a": {"b"}, "b": {"a", "c"}, "c": {"b", "d"}, "d": {"c", "e"}, "e": {"d"},
    }
    class_map = {0: "a", 1: "b", 2: "c", 3: "d", 4: "e"}
    return OntologyGraph(edges, class_map)


def test_ontology_similarity_same_class():
    assert ontology_similarity(chain_graph(), 2, 2) == 1.0


def test_ontology_similarity_adjacent():
    assert ontology_similarity(chain_graph(), 0, 1) == pytest.approx(0.5)


def test_ontology_similarity_path_length_four():
    assert ontology_similarity(chain_graph(), 0, 4) == pytest.approx(0.2)


def test_ontology_similarity_symmetric():
    g = chain_graph()
    for i in range(5):
        for j in range(5):
            assert ontology_similarity(g, i, j) == ontology_similarity(g, j, i)
            if i != j:
                assert ontology_similarity(g, i, j) < 1.0


def test_ontology_similarity_unmapped_class():
    with pytest.raises(ValueError):
        ontology_similarity(chain_graph(), 0, 9)


def test_ontology_graph_disconnected():
    g = OntologyGraph({"a": set(), "b": set()}, {0: "a", 1: "b"})
    with pytest.raises(ValueError):
        ontology_similarity(g, 0, 1)


def test_ontology_graph_from_files(tmp_path):
    edges = tmp_path / "edges.txt"
    edges.write_text("# ontology\nroot shoe\nroot top\nshoe sneaker\nshoe boot\ntop shirt\n")
    classmap = tmp_path / "classes.txt"
    classmap.write_text("0 sneaker\n1 boot\n2 shirt\n")
    g = OntologyGraph.from_files(str(edges), str(classmap))
    assert ontology_similarity(g, 0, 1) == pytest.approx(1.0 / 3.0)  # via shoe
    assert ontology_similarity(g, 0, 2) == pytest.approx(0.2)  # four hops via root


def test_triplets_from_ontology_thresholds_reverified():
    rng = make_rng(8)
    labels = rng.integers(0, 5, size=40)
    g = chain_graph()
    config = TripletGenConfig(theta_p=0.5, theta_n=0.3, count=60)
    triplets = triplets_from_ontology(labels, g, config, rng)
    assert len(triplets) == 60
    for a, p, n in triplets:
        assert ontology_similarity(g, labels[a], labels[p]) > 0.5
        assert ontology_similarity(g, labels[a], labels[n]) < 0.3
        assert ontology_similarity(g, labels[p], labels[n]) < 0.3


def test_triplets_from_ontology_theta_p_one_means_same_class():
    rng = make_rng(9)
    labels = rng.integers(0, 5, size=40)
    config = TripletGenConfig(theta_p=1.0, theta_n=0.3, count=30)
    triplets = triplets_from_ontology(labels, chain_graph(), config, rng)
    assert all(labels[a] == labels[p] for a, p, _ in triplets)


def test_triplets_from_ontology_exhaustion():
    labels = np.zeros(10, dtype=int)  # one class only: no valid negatives
    config = TripletGenConfig(theta_p=0.5, theta_n=0.3, count=1)
    with pytest.raises(RuntimeError, match="theta"):
        triplets_from_ontology(labels, chain_graph(), config, make_rng(0), max_attempts=200)


def test_triplet_gen_config_threshold_order():
    with pytest.raises(ValueError):
        TripletGenConfig(theta_p=0.3, theta_n=0.5)


def test_inject_noise_zero_degree_unchanged():
    ml, cl = [(0, 1)], [(0, 2)]
    labels = np.array([0, 0, 1])
    out_ml, out_cl = inject_noise(ml, cl, labels, 0.0, make_rng(0))
    assert out_ml == ml and out_cl == cl


def test_inject_noise_counts():
    rng = make_rng(10)
    labels = rng.integers(0, 10, size=500)
    ml, cl = pairwise_from_labels(labels, 6000, rng)
    noisy_ml, noisy_cl = inject_noise(ml, cl, labels, 0.05, rng)
    assert (len(noisy_ml) + len(noisy_cl)) - (len(ml) + len(cl)) == 300


def test_inject_noise_appends_flipped_pairs():
    rng = make_rng(11)
    labels = rng.integers(0, 4, size=100)
    ml, cl = pairwise_from_labels(labels, 200, rng)
    noisy_ml, noisy_cl = inject_noise(ml, cl, labels, 0.1, rng)
    for a, b in noisy_ml[len(ml):]:
        assert labels[a] != labels[b]  # a flipped true cannot-link
    for a, b in noisy_cl[len(cl):]:
        assert labels[a] == labels[b]  # a flipped true must-link
    assert len(noisy_ml) > len(ml) or len(noisy_cl) > len(cl)


def test_inject_noise_rejects_bad_degree():
    with pytest.raises(ValueError):
        inject_noise([], [], np.array([0, 1]), 1.0, make_rng(0))
