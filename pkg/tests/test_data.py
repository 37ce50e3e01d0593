import numpy as np
import pytest

from augrmixat.data import make_shapes


@pytest.mark.parametrize("n,k", [(300, 3), (301, 3), (50, 6), (7, 2)])
def test_class_balance_within_one(n, k):
    _, y = make_shapes(n, num_classes=k, size=8, seed=n)
    counts = np.bincount(y, minlength=k)
    assert counts.max() - counts.min() <= 1 and counts.sum() == n


def test_range_dtype_and_determinism():
    X, y = make_shapes(30, channels=3, seed=4, texture=0.02, shape_flip=0.2)
    assert X.dtype == np.float32 and X.shape == (30, 3, 16, 16)
    assert X.min() >= 0 and X.max() <= 1
    X2, y2 = make_shapes(30, channels=3, seed=4, texture=0.02, shape_flip=0.2)
    assert X.tobytes() == X2.tobytes() and np.array_equal(y, y2)
    assert not np.array_equal(X, make_shapes(30, channels=3, seed=5)[0])


def test_bad_arguments():
    with pytest.raises(ValueError):
        make_shapes(2, num_classes=3)
    with pytest.raises(ValueError):
        make_shapes(10, num_classes=7)
    with pytest.raises(ValueError):
        make_shapes(10, size=4)
