"""Small convolutional classifier used as the task-distortion backbone.

Three strided conv stages expose an ordered feature pyramid; the head is
global-average-pool + linear.  Pretrained in-repo on the synthetic
dataset, then frozen: the distortion term compares stage features of the
original and reconstructed image through the same frozen weights.
Heavier off-the-shelf extractors can be swapped in through the same
`features()` interface.
"""

import hashlib

import numpy as np

from . import autodiff as ad
from .data import NUM_CLASSES, iter_batches
from .errors import ConfigError

STAGE_CHANNELS = (8, 16, 32)


class TaskModel:
    """Staged conv classifier; `features` returns the per-stage maps."""

    def __init__(self, channels=STAGE_CHANNELS, num_classes=NUM_CLASSES,
                 seed=0):
        if len(channels) < 2 or len(channels) > 4:
            raise ConfigError("need 2-4 feature stages")
        rng = np.random.default_rng(seed)
        self.channels = tuple(channels)
        self.num_classes = int(num_classes)
        self.tensors = {}
        cin = 3
        for i, cout in enumerate(self.channels):
            w = rng.normal(0.0, np.sqrt(2.0 / (cin * 9)), (cout, cin, 3, 3))
            self.tensors[f"t{i}_w"] = ad.Var(w)
            self.tensors[f"t{i}_b"] = ad.Var(np.zeros(cout))
            cin = cout
        self.tensors["head_w"] = ad.Var(
            rng.normal(0.0, np.sqrt(1.0 / cin), (cin, self.num_classes)))
        self.tensors["head_b"] = ad.Var(np.zeros(self.num_classes))

    def items(self):
        return self.tensors.items()

    def num_params(self):
        return sum(v.data.size for v in self.tensors.values())

    def set_trainable(self, flag):
        for v in self.tensors.values():
            v.requires_grad = flag
        return self

    def checksum(self):
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name].data).tobytes())
        return h.hexdigest()

    def features(self, x):
        """Ordered stage features of a (B,3,H,W) image batch."""
        h = ad.as_var(x)
        if h.ndim != 4 or h.shape[1] != 3:
            raise ConfigError("expected (B,3,H,W) input")
        feats = []
        for i in range(len(self.channels)):
            h = ad.relu(ad.conv2d(h, self.tensors[f"t{i}_w"],
                                  self.tensors[f"t{i}_b"],
                                  stride=2, padding=1))
            feats.append(h)
        return feats

    def logits(self, x):
        h = self.features(x)[-1]
        h = ad.mean_(ad.mean_(h, axis=3), axis=2)
        return ad.dense(h, self.tensors["head_w"], self.tensors["head_b"])


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy; labels are int class ids."""
    m = np.max(logits.data, axis=1, keepdims=True)
    s = ad.sum_(ad.exp(logits - ad.Var(m)), axis=1)
    lse = ad.log(s) + ad.Var(m[:, 0])
    return ad.mean_(lse - ad.take_per_row(logits, labels))


def eval_accuracy(model, x, y, batch_size=64):
    """Fraction of correct top-1 predictions."""
    hits = 0
    with ad.no_grad():
        for xb, yb in iter_batches(x, y, batch_size, seed=0, shuffle=False):
            pred = np.argmax(model.logits(ad.Var(xb)).data, axis=1)
            hits += int(np.sum(pred == yb))
    return hits / len(x)


def pretrain_task_model(x, y, epochs=12, lr=1e-2, batch_size=32, seed=0):
    """Fit a fresh TaskModel on a labeled set, return it frozen.

    Deterministic given inputs and seed; the returned model is the
    fixed feature extractor for all later adaptation runs.
    """
    from .training import Adam

    model = TaskModel(seed=seed).set_trainable(True)
    opt = Adam(dict(model.items()), lr=lr)
    for epoch in range(epochs):
        for xb, yb in iter_batches(x, y, batch_size, seed=seed + 17 * epoch):
            loss = cross_entropy(model.logits(ad.Var(xb)), yb)
            loss.backward()
            opt.step()
    return model.set_trainable(False)
