import numpy as np
import pytest

from sciunfold import build_operator


def dense_measurement_matrix(mask):
    """Reference Phi = [D_1 ... D_T] with D_t = diag(vec(mask_t)), vec column-stacked."""
    blocks = [np.diag(mask[:, :, t].reshape(-1, order="F")) for t in range(mask.shape[2])]
    return np.hstack(blocks)


def vec_cube(cube):
    return np.concatenate([cube[:, :, t].reshape(-1, order="F") for t in range(cube.shape[2])])


def unvec_cube(x, shape):
    r, c, t = shape
    return np.stack([x[i * r * c:(i + 1) * r * c].reshape((r, c), order="F") for i in range(t)], axis=2)


def random_instance(rng, shape, density=0.5, observed=False):
    mask = (rng.random(shape) < density).astype(float)
    if observed:
        mask[:, :, 0] = 1.0
    return build_operator(mask), rng.random(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
