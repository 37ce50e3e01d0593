"""Input validation shared by the estimator-style wrappers."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_images(X, *, dtype=(np.float32, np.float64), range_check=True, atol=1e-6):
    """Validate an ``[N, C, H, W]`` image batch with values in ``[0, 1]``."""
    X = check_array(X, allow_nd=True, dtype=dtype, ensure_2d=False)
    if X.ndim != 4:
        raise ValueError(f"expected images of shape [N, C, H, W], got {X.ndim}-d array {X.shape}")
    if range_check and X.size and (X.min() < -atol or X.max() > 1 + atol):
        raise ValueError(f"image values must lie in [0, 1], got [{X.min():.4g}, {X.max():.4g}]")
    return X


def check_soft_labels(Y, n_rows=None, atol=1e-6):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError(f"labels must be [N, K], got shape {Y.shape}")
    if n_rows is not None and len(Y) != n_rows:
        raise ValueError(f"{len(Y)} label rows for {n_rows} samples")
    if np.any(Y < -atol) or not np.allclose(Y.sum(axis=1), 1.0, atol=atol):
        raise ValueError("label rows must be probability vectors summing to 1")
    return Y
