"""CSV ingestion, splits, the synthetic domain generator, and standardization."""

import math

import numpy as np
import pytest

from domex import data, expansion, fusion, nn
from domex.errors import ConfigError, InputError, ParseError


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")


def model_accuracy(model, ds):
    logits, _ = nn.forward_logits(model, ds.features)
    return float(np.mean(np.argmax(logits, axis=1) == ds.labels))


def quick_fit(ds, hidden, epochs, rng):
    classes = int(ds.labels.max()) + 1
    model = nn.init_mlp(ds.dim, [hidden], classes, rng)
    return nn.fit_classifier(
        model, ds.features, ds.labels, epochs, 32, nn.OptimizerState(0.05, 0.9), rng
    )


# ---------------------------------------------------------------------------
# DomainDataset


def test_dataset_validation():
    with pytest.raises(InputError):
        data.DomainDataset("d", np.zeros((0, 3)))
    with pytest.raises(InputError):
        data.DomainDataset("d", np.array([[1.0, np.inf]]))
    with pytest.raises(InputError):
        data.DomainDataset("d", np.zeros((2, 2)), np.array([0]))
    with pytest.raises(InputError):
        data.DomainDataset("d", np.zeros((2, 2)), np.array([0, -1]))


def test_dataset_take_keeps_alignment():
    ds = data.DomainDataset("d", np.arange(8.0).reshape(4, 2), np.array([0, 1, 0, 1]))
    sub = ds.take(np.array([2, 1]))
    assert np.array_equal(sub.features, np.array([[4.0, 5.0], [2.0, 3.0]]))
    assert sub.labels.tolist() == [0, 1]


# ---------------------------------------------------------------------------
# CSV round trips


def test_load_csv_minimal_labelled(tmp_path):
    path = tmp_path / "tiny.csv"
    write_lines(path, ["f0,f1,label", "0.5,-1.25,0", "2.0,3.5,1"])
    ds = data.load_csv(path)
    assert ds.n == 2 and ds.dim == 2 and ds.labelled
    assert np.array_equal(ds.features, np.array([[0.5, -1.25], [2.0, 3.5]]))
    assert ds.labels.tolist() == [0, 1]


def test_load_csv_without_label_column(tmp_path):
    path = tmp_path / "plain.csv"
    write_lines(path, ["f0,f1", "0.5,-1.25", "2.0,3.5"])
    ds = data.load_csv(path)
    assert not ds.labelled and ds.labels is None


def test_load_csv_ragged_row_names_the_line(tmp_path):
    path = tmp_path / "ragged.csv"
    write_lines(path, ["f0,f1", "1.0,2.0", "1.0,2.0,3.0"])
    with pytest.raises(ParseError) as err:
        data.load_csv(path)
    assert err.value.line == 3
    assert "line 3" in str(err.value)


def test_load_csv_other_malformed_inputs(tmp_path):
    bad_cell = tmp_path / "cell.csv"
    write_lines(bad_cell, ["f0,f1", "1.0,banana"])
    with pytest.raises(ParseError):
        data.load_csv(bad_cell)

    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ParseError):
        data.load_csv(empty)

    header_only = tmp_path / "header.csv"
    write_lines(header_only, ["f0,f1,label"])
    with pytest.raises(ParseError):
        data.load_csv(header_only)


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    ds = data.DomainDataset(
        "round", rng.normal(size=(9, 4)), rng.integers(0, 3, size=9)
    )
    path = tmp_path / "round.csv"
    data.write_csv(ds, path)
    back = data.load_csv(path)
    assert np.array_equal(back.features, ds.features)  # repr() survives re-parsing
    assert np.array_equal(back.labels, ds.labels)

    bare = tmp_path / "bare.csv"
    data.write_csv(ds, bare, include_labels=False)
    assert not data.load_csv(bare).labelled


# ---------------------------------------------------------------------------
# split


def test_split_seventy_thirty_single_class():
    ds = data.DomainDataset("d", np.arange(20.0).reshape(10, 2), np.zeros(10, dtype=int))
    train, test = data.split(ds, data.SplitSpec(seed=1))
    assert (train.n, test.n) == (7, 3)
    merged = np.sort(np.concatenate([train.features[:, 0], test.features[:, 0]]))
    assert np.array_equal(merged, ds.features[:, 0])


def test_split_is_deterministic():
    rng = np.random.default_rng(2)
    ds = data.DomainDataset("d", rng.normal(size=(30, 3)), rng.integers(0, 3, size=30))
    a_train, a_test = data.split(ds, data.SplitSpec(seed=9))
    b_train, b_test = data.split(ds, data.SplitSpec(seed=9))
    assert np.array_equal(a_train.features, b_train.features)
    assert np.array_equal(a_test.labels, b_test.labels)


def test_split_stratifies_both_classes():
    rng = np.random.default_rng(3)
    ds = data.DomainDataset(
        "d", rng.normal(size=(10, 2)), np.repeat([0, 1], 5)
    )
    train, test = data.split(ds, data.SplitSpec(seed=4))
    assert (train.n, test.n) == (7, 3)
    for cls in (0, 1):
        got = int(np.sum(train.labels == cls)), int(np.sum(test.labels == cls))
        assert got in ((4, 1), (3, 2))
        assert sum(got) == 5


def test_split_singleton_class_goes_to_train(caplog):
    ds = data.DomainDataset(
        "d", np.arange(12.0).reshape(6, 2), np.array([0, 0, 0, 0, 0, 1])
    )
    with caplog.at_level("WARNING", logger="domex.data"):
        train, test = data.split(ds, data.SplitSpec(seed=5))
    assert 1 in train.labels and 1 not in test.labels
    assert any("single" in rec.message for rec in caplog.records)


def test_split_rejects_degenerate_inputs():
    one = data.DomainDataset("d", np.zeros((1, 2)), np.array([0]))
    with pytest.raises(InputError):
        data.split(one, data.SplitSpec())
    with pytest.raises(ConfigError):
        data.SplitSpec(train_fraction=1.0)


# ---------------------------------------------------------------------------
# synthetic domains


def test_generate_domains_counts_names_reproducibility():
    cfg, new_t = data.make_benchmark(num_classes=3, feature_dim=5, samples_per_class=20)
    domains = data.generate_domains(cfg, 3, new_t)
    assert [d.name for d in domains] == ["source_0", "source_1", "source_2", "new"]
    for ds in domains:
        assert ds.n == 60
        assert np.array_equal(np.bincount(ds.labels), [20, 20, 20])

    again = data.generate_domains(cfg, 3, new_t)
    for a, b in zip(domains, again):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)


def test_generate_domains_rejects_bad_setups():
    cfg, new_t = data.make_benchmark(num_classes=3, feature_dim=5, samples_per_class=10)
    with pytest.raises(ConfigError):
        data.generate_domains(cfg, 1, new_t)
    with pytest.raises(ConfigError):
        data.DomainShift(scale=0.0)
    with pytest.raises(ConfigError):
        data.make_benchmark(source_rotations_deg=(10.0,), source_shift_sigmas=(1.0, 2.0))


def test_identity_transforms_leave_domains_interchangeable():
    cfg = data.SyntheticDomainConfig(
        num_classes=5,
        feature_dim=10,
        samples_per_class=200,
        mean_scale=1.5,
        source_transforms=[data.DomainShift() for _ in range(3)],
        seed=6,
    )
    domains = data.generate_domains(cfg, 3, data.DomainShift())
    model = quick_fit(domains[0], hidden=16, epochs=10, rng=np.random.default_rng(7))
    accs = [model_accuracy(model, ds) for ds in domains]
    # identical distributions: at N=1000 per domain the spread stays inside 3%
    assert max(accs) - min(accs) <= 0.03


def test_ring_means_under_half_turn_break_the_classifier():
    angles = 2.0 * math.pi * np.arange(4) / 4.0
    means = 3.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    cfg = data.SyntheticDomainConfig(
        num_classes=4,
        feature_dim=2,
        samples_per_class=100,
        noise_std=0.5,
        class_means=means,
        source_transforms=[data.DomainShift(), data.DomainShift()],
        seed=8,
    )
    domains = data.generate_domains(cfg, 2, data.DomainShift(rotation_deg=180.0))
    model = quick_fit(domains[0], hidden=16, epochs=20, rng=np.random.default_rng(9))
    assert model_accuracy(model, domains[0]) >= 0.95
    # a half turn swaps opposite ring positions, so accuracy collapses to
    # chance or below
    assert model_accuracy(model, domains[-1]) <= 0.35


def test_runaway_source_domain_earns_the_largest_weight():
    cfg = data.SyntheticDomainConfig(
        num_classes=3,
        feature_dim=6,
        samples_per_class=50,
        mean_scale=1.5,
        source_transforms=[
            data.DomainShift(),
            data.DomainShift(),
            data.DomainShift(translation=5.0),  # +5 sigma on every coordinate
        ],
        seed=10,
    )
    domains = data.generate_domains(cfg, 3, data.DomainShift())
    rng = np.random.default_rng(11)
    originals = [quick_fit(ds, hidden=16, epochs=10, rng=rng) for ds in domains[:3]]

    hp = expansion.Hyperparams(epochs=3, seed=12)
    ens = expansion.EnsembleState.initialize(originals)
    _, log = expansion.expand(ens, domains[-1].features, hp)
    for round_index in range(1, hp.epochs + 1):
        weights = [r["w_i"] for r in log if r["round"] == round_index]
        assert int(np.argmax(weights)) == 2


def test_benchmark_shift_geometry():
    cfg, new_t = data.make_benchmark(seed=13)
    translations = [t.translation for t in cfg.source_transforms]
    sigmas = (0.5, 1.25, 2.0)
    unit = translations[0] / np.linalg.norm(translations[0])
    for vec, sigma in zip(translations, sigmas):
        assert abs(np.linalg.norm(vec) - sigma * cfg.noise_std) <= 1e-12
        # all source shifts line up along one direction
        assert abs(float(np.dot(vec, unit)) - np.linalg.norm(vec)) <= 1e-9
    # while the new domain moves off at a right angle
    assert abs(float(np.dot(new_t.translation, unit))) <= 1e-9
    assert abs(np.linalg.norm(new_t.translation) - cfg.noise_std) <= 1e-12


# ---------------------------------------------------------------------------
# standardization


def test_standardize_two_pass_oracle_and_constants():
    rng = np.random.default_rng(14)
    features = rng.normal(loc=3.0, scale=2.0, size=(40, 4))
    features[:, 2] = 7.5  # constant column
    train = data.DomainDataset("train", features)
    other = data.DomainDataset("other", rng.normal(size=(10, 4)))

    std_train, (std_other,), stats = data.standardize(train, [other])
    assert np.max(np.abs(stats.mean - features.mean(axis=0))) <= 1e-12
    assert np.max(np.abs(stats.std - features.std(axis=0))) <= 1e-12
    assert np.all(std_train.features[:, 2] == 0.0)
    assert np.max(np.abs(std_train.features[:, 0].mean())) <= 1e-12

    expected = (other.features[:, 0] - stats.mean[0]) / stats.std[0]
    assert np.max(np.abs(std_other.features[:, 0] - expected)) <= 1e-12


def test_standardize_is_idempotent_on_its_own_output():
    rng = np.random.default_rng(15)
    train = data.DomainDataset("train", rng.normal(size=(25, 3)))
    once, _, _ = data.standardize(train)
    twice, _, stats2 = data.standardize(once)
    assert np.max(np.abs(stats2.mean)) <= 1e-12
    assert np.max(np.abs(twice.features - once.features)) <= 1e-9


def test_apply_standardization_keeps_labels():
    ds = data.DomainDataset("d", np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0, 1]))
    stats = data.FeatureStats(np.array([2.0, 3.0]), np.array([1.0, 1.0]))
    out = data.apply_standardization(ds, stats)
    assert np.array_equal(out.features, np.array([[-1.0, -1.0], [1.0, 1.0]]))
    assert out.labels.tolist() == [0, 1]
