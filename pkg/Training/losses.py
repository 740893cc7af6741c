import numpy as np

from Numeric import ops


def bce_loss(logit, label, pos_weight=1.0):
    """Stable binary cross-entropy on logits; mean over the batch."""
    return ops.bce_with_logits(logit, label, pos_weight=pos_weight)


def cross_entropy(logits, labels):
    return ops.cross_entropy(logits, labels)


def positive_class_weight(labels):
    """n_neg / n_pos, the weight that balances an imbalanced binary set."""
    labels = np.asarray(labels)
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = int(labels.size - n_pos)
    return n_neg / n_pos if n_pos else 1.0


def loss_for(config, logits, labels, pos_weight=1.0):
    if config.is_binary:
        return bce_loss(logits, labels, pos_weight=pos_weight)
    return cross_entropy(logits, labels)
