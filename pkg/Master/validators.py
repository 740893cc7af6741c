import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _


class ContractViolation(ValidationError):
    """Raised when an operation is called outside its documented preconditions."""

    def __init__(self, message, code='contract_violation', params=None):
        super().__init__(message, code=code, params=params)

    def __str__(self):
        message = self.message
        if self.params:
            message = message % self.params
        return str(message)


class NonFiniteValue(ContractViolation):
    def __init__(self, message, code='non_finite', params=None):
        super().__init__(message, code=code, params=params)


class StratificationError(ContractViolation):
    def __init__(self, message, code='stratification', params=None):
        super().__init__(message, code=code, params=params)


class InfeasibleEffect(ContractViolation):
    def __init__(self, message, code='infeasible_effect', params=None):
        super().__init__(message, code=code, params=params)


class EmptyGroup(ContractViolation):
    def __init__(self, message, code='empty_group', params=None):
        super().__init__(message, code=code, params=params)


class FoldTrainingError(ContractViolation):
    def __init__(self, message, code='fold_training', params=None):
        super().__init__(message, code=code, params=params)


class CheckpointError(ContractViolation):
    def __init__(self, message, code='checkpoint', params=None):
        super().__init__(message, code=code, params=params)


class CheckpointVersionError(CheckpointError):
    def __init__(self, message, code='checkpoint_version', params=None):
        super().__init__(message, code=code, params=params)


class CheckpointChecksumError(CheckpointError):
    def __init__(self, message, code='checkpoint_checksum', params=None):
        super().__init__(message, code=code, params=params)


class CheckpointTruncatedError(CheckpointError):
    def __init__(self, message, code='checkpoint_truncated', params=None):
        super().__init__(message, code=code, params=params)


def require(condition, message, code='contract_violation', **params):
    """Raise ContractViolation with ``message`` unless ``condition`` holds."""
    if not condition:
        raise ContractViolation(message, code=code, params=params or None)


def require_shape(array, shape, what):
    """Check an array's extents; ``None`` entries in ``shape`` match anything."""
    actual = tuple(np.shape(array))
    ok = len(actual) == len(shape) and all(e is None or e == a for e, a in zip(shape, actual))
    if not ok:
        raise ContractViolation(
            _("%(what)s has shape %(actual)s, expected %(expected)s."),
            code='shape_mismatch',
            params={'what': what, 'actual': actual, 'expected': tuple(shape)},
        )


def require_finite(array, what):
    if not np.all(np.isfinite(array)):
        raise NonFiniteValue(_("%(what)s contains NaN or Inf."), params={'what': what})


def require_symmetric(matrix, what, tol=1e-9):
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractViolation(
            _("%(what)s must be square, got %(shape)s."),
            code='not_square',
            params={'what': what, 'shape': matrix.shape},
        )
    asym = float(np.max(np.abs(matrix - matrix.T))) if matrix.size else 0.0
    if asym > tol:
        raise ContractViolation(
            _("%(what)s is not symmetric (max asymmetry %(asym).3g > %(tol).1g)."),
            code='not_symmetric',
            params={'what': what, 'asym': asym, 'tol': tol},
        )
