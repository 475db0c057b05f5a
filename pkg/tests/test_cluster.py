"""Tests for standardization, k-means, silhouette selection, and labeling."""

from __future__ import annotations

import numpy as np
import pytest

from forumlens.cluster import (
    ActivityDescriptor,
    ClusterLabel,
    KMeansModel,
    LabelConfig,
    Quadrant,
    feature_matrix,
    kmeans,
    label_clusters,
    select_k,
    silhouette,
    standardize,
    summarize_clusters,
    sweep_k,
    with_raw_centroids,
)
from forumlens.errors import ValidationError
from forumlens.expertise import ActorProfile

from conftest import lloyd_reference, silhouette_oracle


def _profile(skill=2.0, commit=50.0, rate=1.0, days=10, n_posts=5, actor="a"):
    return ActorProfile(
        actor_id=actor,
        community_id=0,
        skill_values=(2,),
        skill_score=skill,
        n_posts=n_posts,
        n_in_interest=n_posts,
        commitment_pct=commit,
        first_post=None,
        last_post=None,
        activity_days=days,
        activity_rate=rate,
    )


def _blobs(seed=0, n_per=20, centers=((0, 0, 0), (8, 8, 0), (0, 8, 8))):
    rng = np.random.default_rng(seed)
    rows = [
        rng.normal(loc=center, scale=0.5, size=(n_per, 3)) for center in centers
    ]
    return np.vstack(rows)


def test_feature_matrix_columns():
    profiles = [_profile(3.0, 80.0, 0.25), _profile(1.0, 20.0, 4.0)]
    X = feature_matrix(profiles)
    assert X.shape == (2, 3)
    assert X[0].tolist() == [3.0, 80.0, 0.25]
    assert feature_matrix([]).shape == (0, 3)


def test_standardize_round_trip():
    X = np.array([[1.0, 10.0, 0.1], [3.0, 90.0, 0.4], [2.0, 50.0, 0.7]])
    Z, scaler = standardize(X)
    assert np.allclose(Z.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(Z.std(axis=0), 1.0, atol=1e-12)
    assert np.allclose(scaler.inverse(Z), X, atol=1e-12)


def test_standardize_constant_column():
    X = np.array([[2.0, 5.0], [2.0, 7.0], [2.0, 9.0]])
    Z, scaler = standardize(X)
    # Constant column is centered, not divided by zero.
    assert np.allclose(Z[:, 0], 0.0)
    assert np.all(np.isfinite(Z))
    assert np.allclose(scaler.inverse(Z), X, atol=1e-12)


def test_standardize_validation():
    with pytest.raises(ValidationError):
        standardize(np.array([[1.0, 2.0]]))
    with pytest.raises(ValidationError):
        standardize(np.array([[1.0], [np.nan]]))


def test_kmeans_deterministic():
    X = _blobs(seed=1)
    a = kmeans(X, 3, seed=4)
    b = kmeans(X, 3, seed=4)
    assert a.labels == b.labels
    assert a.inertia == b.inertia
    assert np.array_equal(a.centroids, b.centroids)


def test_kmeans_inertia_path_non_increasing():
    rng = np.random.default_rng(9)
    for _ in range(10):
        X = rng.normal(size=(rng.integers(10, 40), 3))
        model = kmeans(X, int(rng.integers(2, 5)), seed=0)
        path = model.inertia_path
        assert all(a >= b - 1e-9 for a, b in zip(path, path[1:]))


def test_kmeans_matches_reference_from_same_start():
    rng = np.random.default_rng(12)
    for trial in range(10):
        X = rng.normal(size=(25, 3))
        k = 2 + trial % 3
        init = X[rng.choice(25, size=k, replace=False)]
        model = kmeans(X, k, init=init)
        ref_labels, ref_inertia = lloyd_reference(X, init)
        assert model.inertia == pytest.approx(ref_inertia, rel=1e-9, abs=1e-9)
        # _compact renames but never regroups; compare the groupings.
        groups = {}
        for idx, lab in enumerate(model.labels):
            groups.setdefault(lab, set()).add(idx)
        ref_groups = {}
        for idx, lab in enumerate(ref_labels):
            ref_groups.setdefault(lab, set()).add(idx)
        assert set(map(frozenset, groups.values())) == set(map(frozenset, ref_groups.values()))


def test_kmeans_recovers_separated_blobs():
    X = _blobs(seed=3)
    model = kmeans(X, 3, seed=0)
    assert model.k == 3
    # Each blob of 20 consecutive rows lands in a single cluster.
    for start in range(0, 60, 20):
        assert len(set(model.labels[start:start + 20])) == 1


def test_kmeans_handles_duplicate_points():
    X = np.zeros((6, 2))
    X[3:] = 1.0
    model = kmeans(X, 2, seed=0)
    assert model.k == 2
    assert model.inertia == pytest.approx(0.0, abs=1e-12)


def test_kmeans_empty_cluster_reseeded():
    # The third starting centroid is nobody's nearest, so it begins empty;
    # the revive step must still produce k distinct non-empty clusters.
    X = np.array([[0.0, 0.0]] * 5 + [[10.0, 0.0]] * 5 + [[0.0, 10.0]] * 5)
    init = np.array([[0.0, 0.0], [0.01, 0.0], [50.0, 50.0]])
    d2 = ((X[:, None, :] - init[None, :, :]) ** 2).sum(axis=2)
    assert 2 not in set(d2.argmin(axis=1).tolist())
    model = kmeans(X, 3, init=init)
    assert model.k == 3
    assert model.inertia == pytest.approx(0.0, abs=1e-12)


def test_kmeans_validation():
    X = np.zeros((4, 2))
    with pytest.raises(ValidationError):
        kmeans(X, 0)
    with pytest.raises(ValidationError):
        kmeans(X, 5)
    with pytest.raises(ValidationError):
        kmeans(X, 2, restarts=0)
    with pytest.raises(ValidationError):
        kmeans(X, 2, init=np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        kmeans(np.zeros((0, 2)), 1)


def test_silhouette_matches_definitional_oracle():
    rng = np.random.default_rng(5)
    for _ in range(15):
        n = int(rng.integers(5, 25))
        X = rng.normal(size=(n, 3))
        labels = rng.integers(0, 3, size=n)
        if len(set(labels.tolist())) < 2:
            labels[0] = (labels[0] + 1) % 3
        assert silhouette(X, labels) == pytest.approx(
            silhouette_oracle(X, labels), rel=1e-9, abs=1e-9
        )


def test_silhouette_perfect_separation_near_one():
    X = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]])
    assert silhouette(X, [0, 0, 1, 1]) > 0.95


def test_silhouette_singletons_score_zero():
    X = np.array([[0.0], [5.0], [5.1]])
    value = silhouette(X, [0, 1, 1])
    by_hand = silhouette_oracle(X, [0, 1, 1])
    assert value == pytest.approx(by_hand, abs=1e-12)


def test_silhouette_validation():
    with pytest.raises(ValidationError):
        silhouette(np.zeros((2, 2)), [0, 1])
    with pytest.raises(ValidationError):
        silhouette(np.zeros((4, 2)), [0, 0, 0, 0])
    with pytest.raises(ValidationError):
        silhouette(np.zeros((4, 2)), [0, 1])


def test_sweep_and_select_k_on_blobs():
    X = _blobs(seed=7)
    Z, _ = standardize(X)
    models = sweep_k(Z, 2, 6, seed=0)
    assert all(m.silhouette is not None for m in models)
    best = select_k(Z, 2, 6, seed=0)
    assert best.k == 3


def test_select_k_tie_prefers_smaller_k():
    # Strictly-greater replacement keeps the first (smallest-k) model on ties.
    X = _blobs(seed=2, centers=((0, 0, 0), (9, 9, 9)))
    best = select_k(standardize(X)[0], 2, 5, seed=1)
    assert best.k == 2


def test_sweep_k_validation():
    X = _blobs(seed=0)
    with pytest.raises(ValidationError):
        sweep_k(X, 1, 5)
    with pytest.raises(ValidationError):
        sweep_k(X, 4, 3)
    with pytest.raises(ValidationError):
        sweep_k(X, 2, X.shape[0] + 1)


def _model_from_raw(centroids_raw, labels):
    arr = np.asarray(centroids_raw, dtype=float)
    return KMeansModel(
        k=arr.shape[0],
        centroids=arr.copy(),
        centroids_raw=arr,
        labels=tuple(labels),
        inertia=0.0,
        inertia_path=(0.0,),
    )


# Eight centroid fixtures spanning every quadrant/descriptor combination the
# labeler produces, with the activity-window facts that drive the short-lived
# demotion (cluster 1's members were active for a single day; cluster 2's for
# around half a year).
_LABEL_FIXTURE = [
    ((2.00, 22.47, 0.11), 10, "Amateur (Discrete)"),
    ((2.81, 97.62, 5.14), 1, "ProAmateur (ShortLived)"),
    ((2.96, 90.37, 0.28), 159, "Professional (Active)"),
    ((2.96, 25.32, 0.12), 488, "ProAmateur (Discrete)"),
    ((1.05, 24.32, 0.05), 30, "Amateur (Discrete)"),
    ((1.86, 84.81, 0.50), 60, "AverageCareerCriminal (Active)"),
    ((2.38, 18.46, 10.67), 1, "ProAmateur (Hyperactive)"),
    ((1.95, 24.51, 4.14), 2, "Amateur (Hyperactive)"),
]


def test_label_clusters_reference_fixture():
    centroids = [row[0] for row in _LABEL_FIXTURE]
    profiles = [
        _profile(skill=c[0], commit=c[1], rate=c[2], days=days, actor=f"a{i}")
        for i, (c, days, _) in enumerate(_LABEL_FIXTURE)
    ]
    model = _model_from_raw(centroids, labels=range(len(profiles)))
    labels = label_clusters(model, profiles)
    for cluster, (_, _, expected) in enumerate(_LABEL_FIXTURE):
        assert labels[cluster].display() == expected


def test_label_clusters_threshold_boundaries():
    cases = [
        ((2.2, 50.0, 0.0), Quadrant.PROFESSIONAL),
        ((2.19, 50.0, 0.0), Quadrant.AVERAGE_CAREER_CRIMINAL),
        ((2.2, 49.99, 0.0), Quadrant.PRO_AMATEUR),
        ((2.19, 49.99, 0.0), Quadrant.AMATEUR),
    ]
    centroids = [c for c, _ in cases]
    profiles = [
        _profile(skill=c[0], commit=c[1], rate=c[2], days=100, actor=f"a{i}")
        for i, (c, _) in enumerate(cases)
    ]
    labels = label_clusters(_model_from_raw(centroids, range(4)), profiles)
    for cluster, (_, quadrant) in enumerate(cases):
        assert labels[cluster].quadrant is quadrant
    # Hyperactive kicks in at exactly 4 posts/day.
    hyper = label_clusters(
        _model_from_raw([(1.0, 10.0, 4.0)], [0]), [_profile(rate=4.0, days=100)]
    )
    assert hyper[0].descriptor is ActivityDescriptor.HYPERACTIVE


def test_label_short_lived_uses_member_median():
    # Professional centroid, but three of five members active for one day.
    profiles = [
        _profile(days=1, actor="a"),
        _profile(days=1, actor="b"),
        _profile(days=1, actor="c"),
        _profile(days=200, actor="d"),
        _profile(days=300, actor="e"),
    ]
    model = _model_from_raw([(2.9, 95.0, 5.0)], [0] * 5)
    labels = label_clusters(model, profiles)
    assert labels[0] == ClusterLabel(Quadrant.PRO_AMATEUR, ActivityDescriptor.SHORT_LIVED)

    # Median above the cutoff keeps the Professional quadrant.
    model2 = _model_from_raw([(2.9, 95.0, 5.0)], [0] * 5)
    profiles2 = profiles[:2] + [
        _profile(days=50, actor="c"),
        _profile(days=200, actor="d"),
        _profile(days=300, actor="e"),
    ]
    labels2 = label_clusters(model2, profiles2)
    assert labels2[0].quadrant is Quadrant.PROFESSIONAL
    assert labels2[0].descriptor is ActivityDescriptor.HYPERACTIVE


def test_label_clusters_requires_alignment():
    model = _model_from_raw([(2.0, 50.0, 1.0)], [0, 0])
    with pytest.raises(ValidationError):
        label_clusters(model, [_profile()])


def test_labels_invariant_to_standardization():
    # Raw-unit thresholds: feeding standardized centroids through the scaler
    # inverse must produce the same labels as clustering raw units directly.
    rng = np.random.default_rng(17)
    skill = rng.uniform(1, 3, size=40)
    commit = rng.uniform(0, 100, size=40)
    rate = rng.uniform(0, 6, size=40)
    X = np.column_stack([skill, commit, rate])
    profiles = [
        _profile(skill=row[0], commit=row[1], rate=row[2], days=90, actor=f"a{i}")
        for i, row in enumerate(X)
    ]
    Z, scaler = standardize(X)
    model = with_raw_centroids(kmeans(Z, 4, seed=0), scaler)
    labels_via_scaler = label_clusters(model, profiles)

    raw_means = np.vstack([
        X[np.array(model.labels) == c].mean(axis=0) for c in range(model.k)
    ])
    assert np.allclose(model.centroids_raw, raw_means, atol=1e-9)
    direct = label_clusters(
        KMeansModel(
            k=model.k,
            centroids=model.centroids,
            centroids_raw=raw_means,
            labels=model.labels,
            inertia=model.inertia,
            inertia_path=model.inertia_path,
        ),
        profiles,
    )
    assert labels_via_scaler == direct


def test_summarize_clusters_payload():
    profiles = [
        _profile(3.0, 90.0, 0.2, days=100, actor="a"),
        _profile(2.9, 88.0, 0.3, days=150, actor="b"),
        _profile(1.0, 10.0, 0.1, days=10, actor="c"),
        _profile(1.1, 12.0, 0.2, days=12, actor="d"),
    ]
    X = feature_matrix(profiles)
    Z, scaler = standardize(X)
    model = with_raw_centroids(kmeans(Z, 2, seed=0), scaler)
    summaries = summarize_clusters(model, profiles)
    assert len(summaries) == 2
    assert sum(s.n_members for s in summaries) == 4
    assert sum(s.pct_of_sample for s in summaries) == pytest.approx(100.0)
    payload = summaries[0].as_dict()
    assert {"cluster", "quadrant", "descriptor", "label", "centroid_raw", "members"} <= set(payload)
    quadrants = {s.label.quadrant for s in summaries}
    assert quadrants == {Quadrant.PROFESSIONAL, Quadrant.AMATEUR}


def test_label_config_custom_thresholds():
    config = LabelConfig(skill_high=2.5, commitment_high=80.0)
    labels = label_clusters(
        _model_from_raw([(2.4, 85.0, 0.1)], [0]),
        [_profile(days=50)],
        config,
    )
    assert labels[0].quadrant is Quadrant.AVERAGE_CAREER_CRIMINAL
