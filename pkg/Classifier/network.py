import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from django.utils.translation import gettext_lazy as _

from Classifier.layers import (
    bind, conv_stem, embed_tokens, fuse_streams, spatial_attention, temporal_attention,
)
from Connectivity.windowing import DFNCSequence
from Master.validators import ContractViolation, require_finite
from Numeric import ops
from Numeric.sparsemax import softmax

logger = logging.getLogger(__name__)


@dataclass
class AttentionRecord:
    """Attention maps averaged over blocks, heads and the complementary axis.

    ``attn_s`` is (N, N) and ``attn_t`` is (W, W) for a single subject, with a
    leading batch axis for batched input. ``per_block`` holds the same pair
    for every block when the forward pass ran verbosely.
    """

    attn_s: np.ndarray
    attn_t: np.ndarray
    per_block: list = field(default_factory=list)

    def for_subject(self, index):
        per_block = [(s[index], t[index]) for s, t in self.per_block]
        return AttentionRecord(self.attn_s[index], self.attn_t[index], per_block)


@dataclass
class ForwardResult:
    logits: object
    attention: AttentionRecord
    stem_activations: list
    weights: dict
    traces: list = field(default_factory=list)
    batched: bool = True
    binary: bool = True

    @property
    def scores(self):
        """Sigmoid of the logit for binary heads, class probabilities otherwise."""
        z = self.logits.data
        return expit(z) if self.binary else softmax(z, axis=-1)


def as_batch(dfnc, config):
    """Return (B, W, N, N) data and whether the input was a single subject."""
    if isinstance(dfnc, DFNCSequence):
        data = dfnc.windows
    else:
        data = np.asarray(dfnc, dtype=np.float64)
    single = data.ndim == 3
    if single:
        data = data[None]
    expected = (config.n_windows, config.n_networks, config.n_networks)
    if data.ndim != 4 or data.shape[1:] != expected:
        raise ContractViolation(
            _("dFNC of shape %(shape)s does not match the configured (W, N, N) = %(expected)s."),
            code='config_mismatch', params={'shape': data.shape, 'expected': expected},
        )
    require_finite(data, "dFNC input")
    return data, single


def model_forward(dfnc, params, config, graph=None, training=False, rng=None, verbose=False, weights=None):
    """Run the classifier on one subject (W, N, N) or a batch (B, W, N, N).

    With ``graph`` the parameters become leaves of it and the whole pass is
    recorded for reverse-mode differentiation. Dropout applies only when
    ``training`` is set, drawing masks from ``rng``.
    """
    data, single = as_batch(dfnc, config)
    if weights is None:
        weights = bind(params, graph)
    mask_rng = rng if training else None
    batch = data.shape[0]

    activations = []
    stem = conv_stem(data, weights, config, activations=activations)
    tokens = embed_tokens(stem, weights, config)

    spatial_maps, temporal_maps, traces = [], [], []
    for b in range(config.n_blocks):
        out_s, attn_s = spatial_attention(tokens, weights, b, config)
        out_t, attn_t = temporal_attention(tokens, weights, b, config)
        trace = {} if verbose else None
        tokens = fuse_streams(out_s, out_t, tokens, weights, b, config, rng=mask_rng, trace=trace)
        # (B, W, N, N) -> (B, N, N) and (B, N, W, W) -> (B, W, W)
        spatial_maps.append(attn_s.mean(axis=1))
        temporal_maps.append(attn_t.mean(axis=1))
        if verbose:
            traces.append(trace)

    pooled = ops.mean(tokens, axis=(1, 2))
    logits = ops.add(ops.matmul(pooled, weights['head.weight']), weights['head.bias'])
    if config.is_binary:
        logits = ops.reshape(logits, (batch,))

    record = AttentionRecord(
        attn_s=np.mean(spatial_maps, axis=0),
        attn_t=np.mean(temporal_maps, axis=0),
        per_block=list(zip(spatial_maps, temporal_maps)) if verbose else [],
    )
    if single:
        record = record.for_subject(0)
        logits = ops.reshape(logits, (config.n_outputs,) if not config.is_binary else ())
    if graph is not None:
        logger.debug("Recorded %d ops for a batch of %d", len(graph), batch)
    return ForwardResult(
        logits=logits, attention=record, stem_activations=activations, weights=weights,
        traces=traces, batched=not single, binary=config.is_binary,
    )


def predict_scores(dfnc, params, config, batch_size=32):
    """Forward-only positive-class scores (binary) or class probabilities, batched."""
    data, _single = as_batch(dfnc, config)
    chunks = []
    weights = bind(params)
    for start in range(0, data.shape[0], batch_size):
        result = model_forward(data[start:start + batch_size], params, config, weights=weights)
        chunks.append(result.scores)
    return np.concatenate(chunks, axis=0)


def predict_labels(scores, config):
    scores = np.asarray(scores)
    if config.is_binary:
        return (scores >= config.threshold).astype(np.int64)
    return np.argmax(scores, axis=-1).astype(np.int64)


def collect_attention(dfnc, params, config, batch_size=32):
    """Per-subject AttentionRecord stacks: attn_s (B, N, N) and attn_t (B, W, W)."""
    data, _single = as_batch(dfnc, config)
    weights = bind(params)
    spatial, temporal = [], []
    for start in range(0, data.shape[0], batch_size):
        record = model_forward(data[start:start + batch_size], params, config, weights=weights).attention
        spatial.append(record.attn_s)
        temporal.append(record.attn_t)
    return AttentionRecord(np.concatenate(spatial), np.concatenate(temporal))
