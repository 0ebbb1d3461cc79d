"""Distillation through the teacher's classifier, and its objectives.

The central quantity is the cross-network logit: student features are
mapped into the teacher's feature space by the adaptor and scored by the
frozen teacher's own classifier. Matching those logits to the teacher's
transfers the teacher's view of the student's representation, and with
the bias-free classifier the mse variant is exactly a weighted distance
between teacher features and adapted student features.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .autograd import (Tensor, backward, cross_entropy, kl_alignment, mse,
                       mul, no_grad, slice_rows, softmax, softmax_values, sqrt)
from .data import BatchSampler, one_hot
from .optim import Sgd

VARIANTS = ("kl", "mse", "pmse")


class AccuracyFloorError(RuntimeError):
    """Pretraining missed the configured held-out accuracy floor."""

    def __init__(self, accuracy, floor):
        self.accuracy = accuracy
        self.floor = floor
        super().__init__(
            f"teacher reached held-out accuracy {accuracy:.4f}, "
            f"below the configured floor {floor:.4f}")


@dataclasses.dataclass
class SrdConfig:
    """Distillation settings: variant, term weights, baseline temperature."""

    variant: str = "mse"
    alpha: float = 1.0
    beta: float = 1.0
    kd_temperature: float = 4.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"SrdConfig: unknown variant {self.variant!r}")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("SrdConfig: alpha and beta must be nonnegative")
        if self.kd_temperature <= 0.0:
            raise ValueError("SrdConfig: kd_temperature must be positive")


def cross_network_logit(x_s, adaptor, classifier, train=False):
    """Teacher-classifier logits of adapted student features."""
    return classifier(adaptor(x_s, train=train))


def srd_kl(z_t, z_hat):
    """Soft cross-entropy of cross-network logits against teacher logits."""
    z_t = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
    p_t = softmax_values(z_t.values)
    return kl_alignment(p_t, softmax(z_hat))


def srd_mse(z_t, z_hat):
    """Squared logit distance, summed per sample, batch-meaned."""
    z_t = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
    return mse(z_t.detach(), z_hat)


def srd_pmse(z_t, z_hat):
    """Squared probability distance between the two softmax outputs."""
    z_t = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
    return mse(softmax_values(z_t.values), softmax(z_hat))


def srd_loss(variant, z_t, z_hat):
    if variant == "kl":
        return srd_kl(z_t, z_hat)
    if variant == "mse":
        return srd_mse(z_t, z_hat)
    if variant == "pmse":
        return srd_pmse(z_t, z_hat)
    raise ValueError(f"srd_loss: unknown variant {variant!r}")


def feature_reg(x_t, x_adapted):
    """Batch mean of the unsquared L2 gap between the feature spaces."""
    x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
    x_t = x_t.detach()
    if x_t.shape != x_adapted.shape:
        raise ValueError(
            f"feature_reg: shapes differ, {x_t.shape} vs {x_adapted.shape}")
    d = x_t - x_adapted
    per_row = sqrt(mul(d, d).sum(axis=-1))
    if per_row.ndim == 0:
        return per_row
    return per_row.mean()


@dataclasses.dataclass
class LossParts:
    """Objective terms as graph tensors; ``total`` is what gets stepped."""

    ce: Tensor
    srd: Tensor
    reg: Tensor
    total: Tensor

    def row(self):
        return {"ce": self.ce.item(), "srd": self.srd.item(),
                "reg": self.reg.item(), "total": self.total.item()}


def _zero():
    return Tensor(0.0)


def objective_parts(batch, nets, cfg, train=True, teacher_out=None):
    """Cross-entropy on the labeled rows plus distillation on all rows.

    ``batch`` supplies labeled inputs/one-hot targets and (possibly
    empty) unlabeled inputs; distillation terms run on the labeled and
    unlabeled rows together, so an empty unlabeled part reduces exactly
    to the labeled-only objective. ``teacher_out`` may carry precomputed
    (features, logits) for the combined rows; the teacher is frozen, so
    caching its outputs changes nothing.
    """
    teacher, student, adaptor = nets
    n_l = len(batch.labeled_x)
    if len(batch.unlabeled_x):
        x_all = np.concatenate([batch.labeled_x, batch.unlabeled_x])
    else:
        x_all = batch.labeled_x

    feats_s, logits_s = student.forward(x_all, train=train)
    logits_l = _first_rows(logits_s, n_l)
    y = batch.labeled_y if batch.labeled_y.ndim == 2 else one_hot(
        batch.labeled_y, logits_s.shape[1])
    ce = cross_entropy(softmax(logits_l), y)

    if cfg.alpha == 0.0 and cfg.beta == 0.0:
        return LossParts(ce=ce, srd=_zero(), reg=_zero(), total=ce)

    if teacher_out is None:
        with no_grad():
            feats_t, logits_t = teacher.forward(x_all)
        feats_t, logits_t = feats_t.values, logits_t.values
    else:
        feats_t, logits_t = teacher_out

    x_adapted = adaptor(feats_s, train=train)
    z_hat = teacher.classifier(x_adapted)
    srd = srd_loss(cfg.variant, Tensor(logits_t), z_hat)
    reg = feature_reg(feats_t, x_adapted)
    total = ce + cfg.alpha * srd + cfg.beta * reg
    return LossParts(ce=ce, srd=srd, reg=reg, total=total)


def _first_rows(t, n):
    if t.shape[0] == n:
        return t
    return slice_rows(t, 0, n)


def labeled_objective(batch, nets, cfg, train=True):
    """Supervised plus distillation terms over the labeled rows only."""
    trimmed = dataclasses.replace(
        batch,
        unlabeled_x=np.zeros((0, batch.labeled_x.shape[1])),
        unlabeled_idx=np.zeros(0, dtype=np.int64))
    return objective_parts(trimmed, nets, cfg, train=train).total


def semi_objective(batch, nets, cfg, train=True):
    """Distillation over labeled and unlabeled rows, supervision on labeled."""
    return objective_parts(batch, nets, cfg, train=train).total


def train_step(batch, nets, opt, cfg, teacher_out=None):
    """One optimization step of the semi-supervised objective.

    Forward both networks on the combined rows, form the objective,
    backpropagate, and apply the update. Returns the loss components of
    the step as plain floats.
    """
    parts = objective_parts(batch, nets, cfg, train=True, teacher_out=teacher_out)
    backward(parts.total)
    opt.step()
    return parts.row()


def lr_at(base_lr, milestones, gamma, epoch):
    """Step-decay schedule: multiply by gamma at each milestone epoch."""
    lr = base_lr
    for m in milestones:
        if epoch >= m:
            lr *= gamma
    return lr


def pretrain_teacher(dataset, net, optim_params, epochs, floor=0.0, seed=0):
    """Stage 1: supervised training of the teacher on the labeled pool.

    Trains with cross-entropy under the configured schedule, checks the
    held-out (test pool) accuracy against ``floor``, and returns the
    network frozen. Zero epochs returns the initialized network, frozen;
    a missed floor raises ``AccuracyFloorError`` with the measured value.
    """
    from .metrics import evaluate_accuracy

    y = one_hot(dataset.labeled_y, dataset.params.classes)
    sampler = BatchSampler(optim_params.batch_size, 0, seed)
    opt = Sgd(net.parameters(), optim_params.lr, optim_params.momentum,
              optim_params.weight_decay)
    for epoch in range(epochs):
        opt.lr = lr_at(optim_params.lr, optim_params.milestones,
                       optim_params.gamma, epoch)
        for batch in sampler.epoch_batches(dataset.labeled_x, y,
                                           np.zeros((0, dataset.params.input_dim)),
                                           epoch):
            _, logits = net.forward(batch.labeled_x, train=True)
            loss = cross_entropy(softmax(logits), batch.labeled_y)
            backward(loss)
            opt.step()
    if epochs > 0:
        accuracy = evaluate_accuracy(net, dataset.test_x, dataset.test_y)
        if accuracy < floor:
            raise AccuracyFloorError(accuracy, floor)
    net.set_frozen(True)
    return net
