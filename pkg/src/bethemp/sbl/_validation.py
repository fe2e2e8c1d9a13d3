"""Input checks for the estimator wrappers.

scikit-learn's ``check_array`` refuses complex input, so the complex case is
handled here with the same conventions (2-D design, finite entries, matching
lengths).
"""

import numpy as np
from sklearn.exceptions import NotFittedError


def check_design(A):
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D design matrix, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"design matrix of shape {A.shape} is empty")
    if not np.issubdtype(A.dtype, np.number):
        raise ValueError(f"design matrix has non-numeric dtype {A.dtype}")
    A = A.astype(complex, copy=False)
    if not np.all(np.isfinite(A)):
        raise ValueError("design matrix contains NaN or infinity")
    return A


def check_observations(A, y):
    A = check_design(A)
    y = np.asarray(y)
    if y.ndim == 2 and 1 in y.shape:
        y = y.reshape(-1)
    if y.ndim != 1:
        raise ValueError(f"expected a 1-D observation vector, got shape {y.shape}")
    if y.shape[0] != A.shape[0]:
        raise ValueError(f"design has {A.shape[0]} rows but y has {y.shape[0]} entries")
    y = y.astype(complex, copy=False)
    if not np.all(np.isfinite(y)):
        raise ValueError("observations contain NaN or infinity")
    return A, y


def check_is_fitted(est, attr="coef_"):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")
