import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit
from django.utils.translation import gettext_lazy as _

from Classifier.network import model_forward, predict_labels
from Classifier.params import init_params
from Evaluation.metrics import classification_metrics, confusion_counts
from Master.seed_generator import derive_seed, rng_for
from Master.validators import ContractViolation, FoldTrainingError, require
from Numeric.tensor import ComputationGraph, Tensor, reverse_grad
from Training.losses import loss_for, positive_class_weight
from Training.optim import OptimState, adamw_step, cosine_lr

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainHyperparams:
    epochs: int = 300
    lr: float = 1e-3
    lr_min: float = 0.0
    weight_decay: float = 0.05
    batch_size: int = 16
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    balance_classes: bool = False
    keep_best: bool = False
    log_every: int = 10

    def __post_init__(self):
        object.__setattr__(self, 'betas', tuple(self.betas))
        require(self.epochs >= 1, _("At least one epoch is required."), code='bad_hyperparameter')
        require(self.batch_size >= 1, _("Batch size must be positive."), code='bad_hyperparameter')

    def to_dict(self):
        data = asdict(self)
        data['betas'] = list(self.betas)
        return data


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_metrics: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    optim_state: object = None

    def __len__(self):
        return len(self.train_loss)

    def to_frame(self):
        frame = pd.DataFrame({
            'epoch': np.arange(len(self)),
            'lr': self.lr,
            'train_loss': self.train_loss,
            'val_loss': self.val_loss,
        })
        if self.val_metrics:
            metrics = pd.DataFrame(self.val_metrics)
            frame = pd.concat([frame, metrics.add_prefix('val_')], axis=1)
        return frame


def evaluate_split(params, config, data, labels, pos_weight=1.0, batch_size=64):
    """Forward-only loss and metrics on a labelled set."""
    logits = []
    for start in range(0, data.shape[0], batch_size):
        result = model_forward(data[start:start + batch_size], params, config)
        logits.append(result.logits.data)
    logits = np.concatenate(logits, axis=0)
    loss = float(loss_for(config, Tensor(logits), labels, pos_weight).data)
    if config.is_binary:
        predicted = predict_labels(expit(logits), config)
        metrics = classification_metrics(confusion_counts(labels, predicted)).to_dict()
    else:
        predicted = np.argmax(logits, axis=-1)
        metrics = {'acc': round(100.0 * float(np.mean(predicted == np.asarray(labels))), 2)}
    return loss, metrics


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_fold(train_data, train_labels, val_data, val_labels, config, hyper=None, seed=0, fold=None):
    """Train one model from scratch on a fold.

    Each epoch shuffles the training set into mini-batches, and each batch
    runs forward, loss, reverse_grad and one AdamW step at the epoch's
    cosine learning rate. Validation loss and metrics are recorded after
    every epoch. Returns the final-epoch parameters (or the lowest
    validation loss ones when ``keep_best`` is set) and the history.
    """
    hyper = hyper or TrainHyperparams()
    train_data = np.asarray(train_data, dtype=np.float64)
    val_data = np.asarray(val_data, dtype=np.float64)
    train_labels = np.asarray(train_labels)
    val_labels = np.asarray(val_labels)
    if train_data.shape[0] == 0 or val_data.shape[0] == 0:
        raise ContractViolation(_("Training and validation sets must be nonempty."), code='empty_split')
    if train_data.shape[0] != train_labels.shape[0] or val_data.shape[0] != val_labels.shape[0]:
        raise ContractViolation(_("Every subject needs exactly one label."), code='length_mismatch')

    params = init_params(config, seed=derive_seed(seed, 'init'))
    state = OptimState.for_params(params, betas=hyper.betas, eps=hyper.eps)
    pos_weight = positive_class_weight(train_labels) if hyper.balance_classes and config.is_binary else 1.0
    history = TrainHistory()
    best_params, best_loss = params, np.inf
    label = f"fold {fold}" if fold is not None else "fold"

    for epoch in range(hyper.epochs):
        lr = cosine_lr(epoch, hyper.epochs, hyper.lr, hyper.lr_min)
        shuffle_rng = rng_for(seed, 'shuffle', epoch)
        dropout_rng = rng_for(seed, 'dropout', epoch)
        losses, sizes = [], []
        try:
            for batch in _batches(train_data.shape[0], hyper.batch_size, shuffle_rng):
                graph = ComputationGraph()
                result = model_forward(train_data[batch], params, config, graph=graph,
                                       training=True, rng=dropout_rng)
                loss = loss_for(config, result.logits, train_labels[batch], pos_weight)
                grads = reverse_grad(graph, loss)
                params, state = adamw_step(params, grads, state, lr, hyper.weight_decay)
                losses.append(float(loss.data))
                sizes.append(len(batch))
            val_loss, val_metrics = evaluate_split(params, config, val_data, val_labels, pos_weight)
        except ContractViolation as exc:
            raise FoldTrainingError(
                _("%(label)s aborted at epoch %(epoch)s: %(error)s"),
                params={'label': label, 'epoch': epoch, 'error': str(exc)},
            ) from exc

        history.train_loss.append(float(np.average(losses, weights=sizes)))
        history.val_loss.append(val_loss)
        history.val_metrics.append(val_metrics)
        history.lr.append(lr)
        if hyper.keep_best and val_loss < best_loss:
            best_params, best_loss, history.best_epoch = params, val_loss, epoch
        if hyper.log_every and (epoch % hyper.log_every == 0 or epoch == hyper.epochs - 1):
            logger.info("%s epoch %d/%d lr=%.2e train_loss=%.4f val_loss=%.4f val_acc=%.2f",
                        label, epoch + 1, hyper.epochs, lr, history.train_loss[-1], val_loss,
                        val_metrics.get('acc', float('nan')))
        else:
            logger.debug("%s epoch %d train_loss=%.4f", label, epoch + 1, history.train_loss[-1])

    history.optim_state = state
    if hyper.keep_best:
        return best_params, history
    history.best_epoch = hyper.epochs - 1
    return params, history


def smoothed(values, width=3):
    """Trailing means over ``width`` consecutive entries."""
    values = np.asarray(values, dtype=np.float64)
    return np.convolve(values, np.ones(width) / width, mode='valid')
