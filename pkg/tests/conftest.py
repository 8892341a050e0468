import pytest

from utils.networks.nets import ConvLayer, NetworkConfig
from utils.synthetic_data.dataset import DatasetConfig, generate_dataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long training experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_network_config():
    """Same geometry as the default network with far fewer channels."""
    return NetworkConfig(
        input_size=32,
        encoder_layers=[
            ConvLayer(kernel=4, stride=2, padding=1, channels=8),
            ConvLayer(kernel=4, stride=2, padding=1, channels=8),
            ConvLayer(kernel=4, stride=2, padding=1, channels=16),
            ConvLayer(kernel=3, stride=1, padding=1, channels=8),
        ],
        latent_channels=8,
        latent_spatial=4,
        attribute_channel_groups={"hair_blond": (0, 2), "glasses": (2, 4), "mouth_open": (4, 6), "pale_skin": (6, 8)},
        discriminator_channels=[8, 16],
    )


@pytest.fixture
def tiny_network():
    return tiny_network_config()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """40 samples of 4 identities, 8 of them in the test split."""
    root = tmp_path_factory.mktemp("faces")
    return generate_dataset(DatasetConfig(num_identities=4, samples_per_identity=10, size=32, out_dir=root, workers=2))


@pytest.fixture(scope="session")
def dataset_80(tmp_path_factory):
    """80 samples, everything in the train split."""
    root = tmp_path_factory.mktemp("faces80")
    return generate_dataset(DatasetConfig(
        num_identities=10, samples_per_identity=8, size=32, out_dir=root, test_fraction=0.0, workers=2,
    ))
