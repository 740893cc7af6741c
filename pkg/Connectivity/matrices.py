import numpy as np
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, require_symmetric


def upper_length(n):
    return n * (n - 1) // 2


def vectorize_upper(matrix):
    """Row-major strict upper triangle of a symmetric matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    require_symmetric(matrix, "connectivity matrix", tol=1e-9)
    rows, cols = np.triu_indices(matrix.shape[0], k=1)
    return matrix[rows, cols]


def unvectorize_upper(vector, n=None):
    """Rebuild the symmetric unit-diagonal matrix from its strict upper triangle."""
    vector = np.asarray(vector, dtype=np.float64)
    if n is None:
        n = int(round((1 + np.sqrt(1 + 8 * vector.size)) / 2))
    if upper_length(n) != vector.size:
        raise ContractViolation(
            _("%(size)s values do not form the upper triangle of an N x N matrix."),
            code='bad_length', params={'size': vector.size},
        )
    matrix = np.eye(n)
    rows, cols = np.triu_indices(n, k=1)
    matrix[rows, cols] = vector
    matrix[cols, rows] = vector
    return matrix
