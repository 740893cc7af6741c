"""Decoupled-weight-decay Adam and the cosine learning-rate schedule."""
from dataclasses import dataclass, field

import numpy as np
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, NonFiniteValue, require

DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8


def cosine_lr(epoch, total, eta_max=1e-3, eta_min=0.0):
    """eta_min + (eta_max - eta_min) * (1 + cos(pi * epoch / total)) / 2."""
    require(total >= 1, _("The schedule needs at least one epoch."), code='bad_schedule')
    if not 0 <= epoch <= total:
        raise ContractViolation(
            _("Epoch %(e)s lies outside the schedule [0, %(total)s]."), code='bad_schedule',
            params={'e': epoch, 'total': total},
        )
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + np.cos(np.pi * epoch / total))


@dataclass
class OptimState:
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = DEFAULT_BETAS[0]
    beta2: float = DEFAULT_BETAS[1]
    eps: float = DEFAULT_EPS

    @classmethod
    def for_params(cls, params, betas=DEFAULT_BETAS, eps=DEFAULT_EPS):
        return cls(
            first={name: np.zeros_like(value) for name, value in params.items()},
            second={name: np.zeros_like(value) for name, value in params.items()},
            beta1=betas[0], beta2=betas[1], eps=eps,
        )


def adamw_step(params, grads, state, lr, weight_decay=0.05):
    """One AdamW update; returns new params and a new state.

    The decay shrinks weights by lr * weight_decay independently of the
    bias-corrected adaptive step.
    """
    require(lr >= 0 and weight_decay >= 0, _("Learning rate and weight decay must be nonnegative."),
            code='bad_hyperparameter')
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteValue(_("Gradient of %(name)s contains NaN or Inf."), params={'name': name})
        if np.shape(grad) != params[name].shape:
            raise ContractViolation(
                _("Gradient of %(name)s has shape %(got)s, parameter has %(want)s."),
                code='shape_mismatch', params={'name': name, 'got': np.shape(grad), 'want': params[name].shape},
            )
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** step
    correction2 = 1.0 - b2 ** step
    shrink = 1.0 - lr * weight_decay
    first, second, updated = {}, {}, {}
    for name, value in params.items():
        grad = np.asarray(grads.get(name, np.zeros_like(value)), dtype=np.float64)
        m = b1 * state.first[name] + (1.0 - b1) * grad
        v = b2 * state.second[name] + (1.0 - b2) * grad * grad
        adaptive = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        updated[name] = value * shrink - lr * adaptive
        first[name], second[name] = m, v
    new_state = OptimState(first=first, second=second, step=step, beta1=b1, beta2=b2, eps=state.eps)
    return params.replace(updated), new_state
