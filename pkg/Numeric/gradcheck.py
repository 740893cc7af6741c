import logging
from dataclasses import dataclass, field

import numpy as np
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, NonFiniteValue
from Numeric.tensor import ComputationGraph, reverse_grad

logger = logging.getLogger(__name__)


@dataclass
class GradientReport:
    errors: dict
    step: float
    worst: dict = field(default_factory=dict)

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def failing(self, tolerance):
        return {name: err for name, err in self.errors.items() if err >= tolerance}


def _evaluate(f, theta):
    graph = ComputationGraph()
    leaves = {name: graph.leaf(value, name) for name, value in theta.items()}
    output = f(graph, leaves)
    return graph, output


def finite_difference_check(f, theta, eps=1e-5, analytic=None, max_coordinates=None, seed=0, floor=1e-8):
    """Compare reverse-mode gradients with central differences.

    ``f(graph, leaves)`` builds a scalar Tensor from leaves registered on a
    fresh graph; ``theta`` maps leaf names to arrays. ``analytic`` overrides
    the reverse-mode gradients (useful for checking the checker). When
    ``max_coordinates`` is set, each parameter is probed at that many
    seeded-random coordinates instead of all of them. Relative errors use
    max(|analytic|, |numeric|, floor) as denominator.
    """
    if not eps > 0:
        raise ContractViolation(_("Finite-difference step must be positive."), code='bad_step')
    theta = {name: np.array(value, dtype=np.float64) for name, value in theta.items()}
    if analytic is None:
        graph, output = _evaluate(f, theta)
        analytic = reverse_grad(graph, output)

    rng = np.random.default_rng(seed)
    errors, worst = {}, {}
    for name, value in theta.items():
        flat_count = value.size
        coords = np.arange(flat_count)
        if max_coordinates is not None and flat_count > max_coordinates:
            coords = np.sort(rng.choice(flat_count, size=max_coordinates, replace=False))
        grad = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        max_err, max_at = 0.0, None
        for flat in coords:
            index = np.unravel_index(flat, value.shape)
            values = []
            for sign in (1.0, -1.0):
                probe = dict(theta)
                shifted = value.copy()
                shifted[index] += sign * eps
                probe[name] = shifted
                _graph, out = _evaluate(f, probe)
                v = float(out.data.reshape(-1)[0])
                if not np.isfinite(v):
                    raise NonFiniteValue(
                        _("f is not finite at %(name)s%(index)s."),
                        params={'name': name, 'index': tuple(int(i) for i in index)},
                    )
                values.append(v)
            numeric = (values[0] - values[1]) / (2.0 * eps)
            exact = grad[flat]
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            if err > max_err or max_at is None:
                max_err, max_at = err, tuple(int(i) for i in index)
        errors[name] = max_err
        worst[name] = max_at
    report = GradientReport(errors=errors, step=eps, worst=worst)
    logger.debug("Gradient check max rel. error %.3g over %d parameters", report.max_error, len(errors))
    return report
