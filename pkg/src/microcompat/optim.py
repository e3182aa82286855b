"""Cross-entropy loss, the Adam optimizer, and the epoch training loop."""

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import batch_iter, image_to_input
from .errors import NumericalError, UsageError
from .metrics import ConfusionMatrix, confusion_from_predictions

PROB_CLAMP = 1e-12

DEFAULT_LEARNING_RATE = 1e-4
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


def cross_entropy(labels, probs):
    """Mean binary cross entropy from probabilities of the compatible class.

    Direct-probability entry used for verification; training goes through
    cross_entropy_from_logits. Probabilities are clamped away from 0 and 1.
    """
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if y.size == 0:
        raise UsageError("cross_entropy over an empty batch")
    if y.shape != p.shape:
        raise UsageError(f"labels shape {y.shape} vs probs shape {p.shape}")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def cross_entropy_from_logits(logits, targets):
    """Differentiable loss: log-sum-exp softmax then mean NLL of the targets."""
    return T.nll_loss(T.log_softmax(logits), targets)


class Adam:
    """Adam with bias correction; frozen parameters are never touched.

    m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2 ;
    theta <- theta - lr * mhat / (sqrt(vhat) + eps)
    """

    def __init__(self, params, learning_rate=DEFAULT_LEARNING_RATE,
                 beta1=DEFAULT_BETA1, beta2=DEFAULT_BETA2, eps=DEFAULT_EPS):
        if learning_rate < 0:
            raise UsageError(f"learning rate must be >= 0, got {learning_rate}")
        self.params = [p for p in params if p.trainable]
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                self.m[i] *= self.beta1
                self.v[i] *= self.beta2
            else:
                if g.shape != p.data.shape:
                    raise UsageError(
                        f"gradient dims {list(g.shape)} do not match parameter "
                        f"{p.name or '?'} dims {p.dims}")
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            p.data -= (self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)).astype(
                p.data.dtype, copy=False)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    wall_ms: float = 0.0

    def to_json_dict(self):
        # wall time stays out of the serialized record so identical runs
        # produce identical bytes
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "train_acc": self.train_acc, "test_acc": self.test_acc}


@dataclass
class RunLog:
    config: dict
    seed: int
    epochs: list = field(default_factory=list)
    best_test_acc: float = 0.0
    best_epoch: int = -1
    final_confusion: ConfusionMatrix = None

    def jsonl_lines(self):
        import json
        yield json.dumps({"type": "config", **self.config}, sort_keys=True)
        for rec in self.epochs:
            yield json.dumps({"type": "epoch", **rec.to_json_dict()}, sort_keys=True)
        cm = self.final_confusion
        yield json.dumps({
            "type": "summary", "seed": self.seed,
            "best_test_acc": self.best_test_acc, "best_epoch": self.best_epoch,
            "confusion": None if cm is None else
            {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn},
        }, sort_keys=True)


def evaluate_items(model, items, batch_size=128, transform=image_to_input):
    """Eval-mode pass over (payload, label) items; returns (accuracy,
    labels, decisions) with batches in the items' given order."""
    if not items:
        raise UsageError("evaluation over an empty dataset")
    model.eval()
    labels = []
    decisions = []
    with T.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start:start + batch_size]
            arrays = [(transform(p) if transform is not None else p) for p, _ in chunk]
            x = np.stack(arrays).astype(np.float32, copy=False)
            logits = model(T.Tensor(x)).data
            decisions.extend(int(i) for i in logits.argmax(axis=1))
            labels.extend(int(lab) for _, lab in chunk)
    acc = sum(1 for a, b in zip(labels, decisions) if a == b) / len(labels)
    return acc, labels, decisions


def training_loop(model, train_items, test_items, *, epochs, batch_size,
                  learning_rate=DEFAULT_LEARNING_RATE, seed=0,
                  transform=image_to_input, config_snapshot=None,
                  on_best=None, on_epoch=None):
    """Seeded mini-batch training with per-epoch train/test tracking.

    Each epoch shuffles with a permutation keyed by (seed XOR epoch),
    computes the cross-entropy loss per batch, applies one Adam step, and
    records train loss, train accuracy (measured on the training forward
    passes), and eval-mode test accuracy. A NaN loss aborts with the
    offending batch named. on_best fires whenever the best test accuracy
    strictly improves, so the caller can checkpoint exactly that model.
    """
    if epochs < 1:
        raise UsageError(f"epochs must be >= 1, got {epochs}")
    if not train_items:
        raise UsageError("training_loop needs a non-empty training set")
    runlog = RunLog(config=dict(config_snapshot or {}), seed=seed)
    opt = Adam(model.parameters(), learning_rate=learning_rate)
    model.set_dropout_rng(np.random.default_rng([seed, 0xD0]))
    for epoch in range(epochs):
        t0 = time.perf_counter()
        model.train()
        loss_sum = 0.0
        correct = 0
        seen = 0
        for b, (x, y) in enumerate(batch_iter(train_items, batch_size, seed, epoch, transform)):
            model.zero_grad()
            logits = model(T.Tensor(x))
            loss = cross_entropy_from_logits(logits, y)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch} batch {b}")
            loss.backward()
            opt.step()
            loss_sum += value * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(y)
        test_acc, labels, decisions = evaluate_items(model, test_items, batch_size, transform)
        record = EpochRecord(
            epoch=epoch, train_loss=loss_sum / seen, train_acc=correct / seen,
            test_acc=test_acc, wall_ms=(time.perf_counter() - t0) * 1000.0)
        runlog.epochs.append(record)
        if test_acc > runlog.best_test_acc or runlog.best_epoch < 0:
            runlog.best_test_acc = test_acc
            runlog.best_epoch = epoch
            if on_best is not None:
                on_best(model, record)
        if on_epoch is not None:
            on_epoch(record)
    _, labels, decisions = evaluate_items(model, test_items, batch_size, transform)
    runlog.final_confusion = confusion_from_predictions(labels, decisions)
    return runlog
