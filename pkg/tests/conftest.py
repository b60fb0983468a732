import numpy as np
import pytest

from graftlm.rng import RngState


def central_difference(fn, array: np.ndarray, index, h: float = 1e-5) -> float:
    """Symmetric finite difference of a scalar-valued fn wrt one element."""
    orig = array[index]
    array[index] = orig + h
    up = fn()
    array[index] = orig - h
    down = fn()
    array[index] = orig
    return (up - down) / (2.0 * h)


def assert_grad_close(fd: float, autograd: float, rel_tol: float = 1e-4, floor: float = 1e-6):
    """Relative-error check with a floor so exactly-zero gradients compare
    against finite-difference roundoff noise (~1e-11) sanely."""
    denom = max(abs(fd), abs(autograd), floor)
    assert abs(fd - autograd) <= rel_tol * denom, (
        f"gradient mismatch: finite difference {fd!r} vs autograd {autograd!r}"
    )


def sample_indices(arr: np.ndarray, limit: int = 24):
    """Deterministic spread of flat indices to probe (all if small)."""
    flat = arr.reshape(-1)
    if flat.size <= limit:
        idx = np.arange(flat.size)
    else:
        idx = np.linspace(0, flat.size - 1, num=limit, dtype=int)
    return [np.unravel_index(int(i), arr.shape) for i in idx]


@pytest.fixture
def rng():
    return RngState(12345)
