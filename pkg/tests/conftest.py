import numpy as np
import pytest
import torch

from paragan.config import RunConfig
from paragan.dataset import ShapeSpec, generate_shapes_dataset, load_split

torch.set_num_threads(1)

# Small enough for unit tests: 32px images (the smallest size the default
# 3-layer patch discriminator accepts with a non-degenerate map).
TINY = dict(image_size=32, n_per_domain=6, base_width=4, n_res_blocks=1, clf_width=4,
            aux_epochs=2, epochs_const=1, epochs_decay=1, ds_epochs=1, ds_batch_size=4,
            seeds=[1, 2], noise_sigma=0.03)


@pytest.fixture
def tiny_cfg():
    return RunConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_data")
    generate_shapes_dataset(ShapeSpec(image_size=32, n_per_domain_per_split=6, noise_sigma=0.03,
                                      seed=11), root)
    return root


@pytest.fixture(scope="session")
def tiny_train(tiny_data):
    return load_split(tiny_data, "train")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
