"""Named learnable tensors of the classifier and their initialisation."""
from collections import OrderedDict

import numpy as np
from django.utils.translation import gettext_lazy as _

from Master.seed_generator import rng_for
from Master.validators import ContractViolation, require_finite

STREAMS = ('spatial', 'temporal')
PROJECTIONS = ('q', 'k', 'v', 'o')


def parameter_shapes(config):
    """Ordered mapping of parameter name to shape for ``config``."""
    d = config.embed_dim
    k = config.kernel_size
    shapes = OrderedDict()
    c_in = 1
    for i, c_out in enumerate(config.conv_channels):
        shapes[f'conv{i}.kernel'] = (k, k, c_in, c_out)
        shapes[f'conv{i}.bias'] = (c_out,)
        c_in = c_out
    shapes['embed.weight'] = (config.n_networks * config.stem_channels, d)
    shapes['embed.bias'] = (d,)
    shapes['pos.spatial'] = (config.n_networks, d)
    shapes['pos.temporal'] = (config.n_windows, d)
    hidden = config.ffn_multiplier * d
    for b in range(config.n_blocks):
        for stream in STREAMS:
            for proj in PROJECTIONS:
                shapes[f'block{b}.{stream}.w{proj}'] = (d, d)
                shapes[f'block{b}.{stream}.b{proj}'] = (d,)
        shapes[f'block{b}.fuse.weight'] = (d, d)
        shapes[f'block{b}.fuse.bias'] = (d,)
        shapes[f'block{b}.norm1.gamma'] = (d,)
        shapes[f'block{b}.norm1.beta'] = (d,)
        shapes[f'block{b}.ffn.w1'] = (d, hidden)
        shapes[f'block{b}.ffn.b1'] = (hidden,)
        shapes[f'block{b}.ffn.w2'] = (hidden, d)
        shapes[f'block{b}.ffn.b2'] = (d,)
        shapes[f'block{b}.norm2.gamma'] = (d,)
        shapes[f'block{b}.norm2.beta'] = (d,)
    shapes['head.weight'] = (d, config.n_outputs)
    shapes['head.bias'] = (config.n_outputs,)
    return shapes


class ModelParams:
    """Immutable mapping of parameter name to float64 array.

    Training never mutates a ModelParams in place; ``replace`` returns a new
    value, so one instance can be shared read-only by concurrent forwards.
    """

    def __init__(self, arrays):
        frozen = OrderedDict()
        for name, value in arrays.items():
            array = np.array(value, dtype=np.float64)
            require_finite(array, name)
            array.flags.writeable = False
            frozen[name] = array
        self._arrays = frozen

    def __getitem__(self, name):
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self):
        return list(self._arrays)

    def shapes(self):
        return OrderedDict((name, a.shape) for name, a in self._arrays.items())

    def replace(self, updates):
        merged = OrderedDict(self._arrays)
        for name, value in updates.items():
            if name not in merged:
                raise ContractViolation(_("Unknown parameter %(name)s."), code='unknown_param', params={'name': name})
            merged[name] = value
        return ModelParams(merged)

    def check_matches(self, config):
        expected = parameter_shapes(config)
        if list(expected) != self.names() or any(expected[n] != self[n].shape for n in expected):
            raise ContractViolation(_("Parameters do not match the model configuration."), code='param_mismatch')

    def total_size(self):
        return int(sum(a.size for a in self._arrays.values()))


def _is_bias_like(name):
    leaf = name.rsplit('.', 1)[-1]
    return name.startswith('pos.') or leaf in ('bias', 'beta') or (leaf.startswith('b') and leaf[1:] in PROJECTIONS + ('1', '2'))


def _fans(shape):
    if len(shape) == 4:
        receptive = shape[0] * shape[1]
        return shape[2] * receptive, shape[3] * receptive
    return shape[0], shape[1]


def init_params(config, seed=None):
    """Scaled-uniform weights, zero biases and position embeddings, unit norm scales."""
    seed = config.seed if seed is None else seed
    arrays = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if name.endswith('.gamma'):
            arrays[name] = np.ones(shape)
        elif _is_bias_like(name):
            arrays[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(shape)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng_for(seed, 'init', name).uniform(-limit, limit, size=shape)
    return ModelParams(arrays)
