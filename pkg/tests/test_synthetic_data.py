import json
from itertools import product

import numpy as np
import pytest
from pydantic import ValidationError

from utils.exceptions import ConfigurationError, DatasetError
from utils.synthetic_data.dataset import (
    MANIFEST_NAME, DatasetConfig, SyntheticFaceDataset, build_records, generate_dataset, load_manifest,
    sample_pair, sample_pair_indices,
)
from utils.synthetic_data.renderer import ATTRIBUTES, SceneSpec, face_geometry, identity_params, render_sample


def _spec(**attributes):
    return SceneSpec(identity_id=3, attributes=attributes, background_seed=11, render_seed=5)


# -----------------------------------------
# Renderer
# -----------------------------------------
@pytest.mark.parametrize("size", [32, 64])
def test_render_sample_is_deterministic_and_well_formed(size):
    a = render_sample(_spec(glasses=True), size)
    b = render_sample(_spec(glasses=True), size)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.mask, b.mask)

    assert a.image.shape == (size, size, 3)
    assert a.image.min() >= 0.0 and a.image.max() <= 1.0
    assert set(np.unique(a.mask)) <= {0, 1}
    assert 0.05 <= a.mask.mean() <= 0.95
    assert a.attributes.tolist() == [False, True, False, False]


@pytest.mark.parametrize("attribute", ATTRIBUTES)
def test_toggling_an_attribute_only_changes_the_face(attribute):
    off = render_sample(_spec(**{attribute: False}))
    on = render_sample(_spec(**{attribute: True}))
    changed = np.any(off.image != on.image, axis=-1)
    assert changed.any()
    assert not changed[off.mask == 0].any()


def test_background_is_shared_by_all_attribute_settings():
    reference = render_sample(_spec())
    background = reference.mask == 0
    for flags in product([False, True], repeat=len(ATTRIBUTES)):
        sample = render_sample(_spec(**dict(zip(ATTRIBUTES, flags))))
        np.testing.assert_array_equal(sample.mask, reference.mask)
        np.testing.assert_array_equal(sample.image[background], reference.image[background])


def test_identity_geometry_ignores_attributes():
    plain = _spec()
    decorated = _spec(**{name: True for name in ATTRIBUTES})
    assert face_geometry(plain) == face_geometry(decorated)
    assert identity_params(3)["axis_x"] == identity_params(3)["axis_x"]
    assert identity_params(3)["axis_x"] != identity_params(4)["axis_x"]


def test_unknown_attribute_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        render_sample(_spec(freckles=True))


def test_unsupported_size_is_rejected():
    with pytest.raises(ConfigurationError):
        render_sample(_spec(), size=48)


# -----------------------------------------
# Dataset generation
# -----------------------------------------
def test_generate_dataset_writes_80_records(tmp_path):
    root = generate_dataset(DatasetConfig(num_identities=10, samples_per_identity=8, out_dir=tmp_path, workers=2))
    lines = (root / MANIFEST_NAME).read_text().splitlines()
    assert len(lines) == 80
    record = json.loads(lines[0])
    assert (root / record["image"]).exists()
    assert (root / record["mask"]).exists()
    assert set(record["attributes"]) == set(ATTRIBUTES)


def test_same_seed_gives_byte_identical_manifests(tmp_path):
    config = dict(num_identities=3, samples_per_identity=4, seed=9, workers=2)
    first = generate_dataset(DatasetConfig(out_dir=tmp_path / "a", **config))
    second = generate_dataset(DatasetConfig(out_dir=tmp_path / "b", **config))
    assert (first / MANIFEST_NAME).read_bytes() == (second / MANIFEST_NAME).read_bytes()


def test_attribute_balance_over_2000_samples(tmp_path):
    records = build_records(DatasetConfig(num_identities=50, samples_per_identity=40, out_dir=tmp_path))
    assert len(records) == 2000
    for name in ATTRIBUTES:
        frequency = np.mean([r["attributes"][name] for r in records])
        assert 0.45 <= frequency <= 0.55


def test_split_is_deterministic_and_per_identity(tmp_path):
    config = DatasetConfig(num_identities=5, samples_per_identity=10, test_fraction=0.2, out_dir=tmp_path, seed=4)
    records = build_records(config)
    assert records == build_records(config)
    for identity in range(5):
        splits = [r["split"] for r in records if r["identity_id"] == identity]
        assert splits.count("test") == 2


@pytest.mark.parametrize("overrides", [
    {"num_identities": 1},
    {"samples_per_identity": 0},
    {"size": 48},
    {"test_fraction": 1.0},
])
def test_invalid_dataset_config(tmp_path, overrides):
    values = {"num_identities": 2, "samples_per_identity": 2, "out_dir": tmp_path, **overrides}
    with pytest.raises(ValidationError):
        DatasetConfig(**values)


def test_missing_manifest_is_a_dataset_error(tmp_path):
    with pytest.raises(DatasetError):
        load_manifest(tmp_path)


def test_dataset_tensors_match_the_manifest(small_dataset):
    dataset = SyntheticFaceDataset(small_dataset)
    assert len(dataset) == 40
    image, mask, attributes, identity = dataset[0]
    assert image.shape == (3, 32, 32)
    assert mask.shape == (1, 32, 32)
    assert attributes.shape == (len(ATTRIBUTES),)
    assert dataset.num_identities == 4

    frame = load_manifest(small_dataset)
    assert frame.loc[0, "hair_blond"] == bool(attributes[0])
    assert int(identity) == frame.loc[0, "identity_id"]


def test_loaded_sample_round_trips_the_renderer(small_dataset):
    dataset = SyntheticFaceDataset(small_dataset)
    record = json.loads((small_dataset / MANIFEST_NAME).read_text().splitlines()[0])
    rendered = render_sample(SceneSpec(
        identity_id=record["identity_id"], attributes=record["attributes"],
        background_seed=record["background_seed"], render_seed=record["render_seed"],
    ))
    loaded = dataset.sample(0)
    np.testing.assert_array_equal(loaded.mask, rendered.mask)
    np.testing.assert_allclose(loaded.image, rendered.image, atol=1 / 255)


# -----------------------------------------
# Pair sampling
# -----------------------------------------
@pytest.mark.parametrize("attribute", ATTRIBUTES)
def test_sample_pair_respects_polarity(small_dataset, attribute):
    dataset = SyntheticFaceDataset(small_dataset)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x, y = sample_pair(dataset, attribute, rng)
        assert x.attribute(attribute) is True
        assert y.attribute(attribute) is False


def test_sample_pair_draws_only_training_samples(small_dataset):
    dataset = SyntheticFaceDataset(small_dataset)
    pos, neg = sample_pair_indices(dataset, "glasses", np.random.default_rng(1), batch_size=500)
    splits = dataset.frame["split"].to_numpy()
    assert set(splits[pos]) == {"train"}
    assert set(splits[neg]) == {"train"}


def test_sample_pair_is_uniform(small_dataset):
    dataset = SyntheticFaceDataset(small_dataset)
    draws = 10_000
    pos, _ = sample_pair_indices(dataset, "hair_blond", np.random.default_rng(2), batch_size=draws)
    eligible = np.flatnonzero(dataset.attribute_column("hair_blond") & (dataset.frame["split"] == "train").to_numpy())
    counts = np.array([(pos == i).sum() for i in eligible])
    p = 1 / len(eligible)
    sigma = np.sqrt(draws * p * (1 - p))
    assert counts.sum() == draws
    assert np.all(np.abs(counts - draws * p) <= 4 * sigma)


def test_sample_pair_errors(small_dataset):
    dataset = SyntheticFaceDataset(small_dataset)
    with pytest.raises(DatasetError):
        sample_pair(dataset, "freckles", np.random.default_rng(0))

    only_positive = SyntheticFaceDataset(small_dataset)
    keep = only_positive.attribute_column("glasses")
    only_positive.frame = only_positive.frame[keep].reset_index(drop=True)
    with pytest.raises(DatasetError):
        sample_pair(only_positive, "glasses", np.random.default_rng(0))
