"""Watermark presence detection and watermark type identification.

Both classifiers share one trunk: two conv+ReLU+maxpool stages (32 then 64
channels), a 256-unit dense layer, then the kind-specific softmax layer --
presence is 2-way (clean / watermarked), type is one way per bank entry.
Training is cross-entropy with an 80/20 stratified held-out split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .attacks import AttackSpec, apply_attack
from .checkpoint import load_container, save_container
from .errors import DataError, ParameterError, ShapeError

KIND_CLASSES = {"presence": 2, "type": 4}


class ClassifierHead(nn.Module):
    def __init__(self, kind: str, resolution: int = 32, num_classes: int | None = None):
        super().__init__()
        if kind not in KIND_CLASSES:
            raise ParameterError(f"classifier kind must be one of {sorted(KIND_CLASSES)}")
        num_classes = KIND_CLASSES[kind] if num_classes is None else num_classes
        self.kind = kind
        self.resolution = resolution
        self.num_classes = num_classes
        self.descriptor = {"kind": kind, "resolution": resolution,
                           "num_classes": num_classes}
        flat = 64 * (resolution // 4) * (resolution // 4)
        self.conv1 = nn.Conv2d(3, 32, 3, padding=1)
        self.conv2 = nn.Conv2d(32, 64, 3, padding=1)
        self.pool = nn.MaxPool2d(2)
        self.fc1 = nn.Linear(flat, 256)
        self.fc2 = nn.Linear(256, num_classes)

    def trunk(self, x: torch.Tensor) -> torch.Tensor:
        h = self.pool(torch.relu(self.conv1(x)))
        h = self.pool(torch.relu(self.conv2(h)))
        h = torch.relu(self.fc1(h.flatten(1)))
        return h

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-softmax scores."""
        return self.fc2(self.trunk(x))


def build_head(kind: str, resolution: int = 32, num_classes: int | None = None,
               seed: int = 0) -> ClassifierHead:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return ClassifierHead(kind, resolution, num_classes)


@dataclass
class DetectorConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    holdout: float = 0.2
    seed: int = 0


@dataclass
class AccuracyReport:
    macro_accuracy: float
    overall_accuracy: float
    per_label: dict
    confusion: np.ndarray
    counts: dict = field(default_factory=dict)

    def as_table(self) -> str:
        lines = [f"overall accuracy: {self.overall_accuracy * 100:.2f}%",
                 f"macro accuracy:   {self.macro_accuracy * 100:.2f}%"]
        for label in sorted(self.per_label):
            lines.append(f"  label {label}: {self.per_label[label] * 100:.2f}% "
                         f"(n={self.counts[label]})")
        lines.append("confusion (rows = true, cols = predicted):")
        for row in self.confusion:
            lines.append("  " + " ".join(f"{int(v):5d}" for v in row))
        return "\n".join(lines)


def _validate_labels(kind: str, labels: np.ndarray, num_classes: int):
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise DataError(f"degenerate dataset: single class {uniq.tolist()} "
                        f"cannot train a {kind} detector")
    if uniq.min() < 0 or uniq.max() >= num_classes:
        raise DataError(f"labels {uniq.tolist()} inconsistent with {kind} "
                        f"detector ({num_classes} classes)")


def _stratified_split(labels: np.ndarray, holdout: float, seed: int):
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in np.unique(labels):
        idx = np.nonzero(labels == label)[0]
        idx = idx[rng.permutation(idx.size)]
        n_test = max(1, int(round(idx.size * holdout)))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    return np.concatenate(train_idx), np.concatenate(test_idx)


def train_detector(kind: str, dataset, config: DetectorConfig | None = None,
                   num_classes: int | None = None) -> ClassifierHead:
    """Train a head on (images, labels); held-out report attached as
    head.holdout_report."""
    config = config or DetectorConfig()
    images, labels = dataset
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    head = build_head(kind, images.shape[-1], num_classes, seed=config.seed)
    _validate_labels(kind, labels, head.num_classes)

    train_idx, test_idx = _stratified_split(labels, config.holdout, config.seed)
    opt = torch.optim.Adam(head.parameters(), lr=config.learning_rate)
    gen = np.random.default_rng(config.seed + 1)
    xent = nn.CrossEntropyLoss()
    head.train()
    for _ in range(config.epochs):
        order = train_idx[gen.permutation(train_idx.size)]
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = torch.from_numpy(images[idx])
            y = torch.from_numpy(labels[idx])
            loss = xent(head(x), y)
            opt.zero_grad()
            loss.backward()
            opt.step()
    head.eval()
    head.holdout_report = evaluate(head, (images[test_idx], labels[test_idx]))
    return head


def classify(head: ClassifierHead, image: np.ndarray) -> np.ndarray:
    """Softmax probability vector(s); (k,) for one image, (B, k) for a batch."""
    arr = np.asarray(image, dtype=np.float32)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.shape[-1] != head.resolution or arr.shape[-2] != head.resolution:
        raise ShapeError(f"image {arr.shape} does not match head resolution "
                         f"{head.resolution}")
    head.eval()
    with torch.no_grad():
        probs = torch.softmax(head(torch.from_numpy(arr)), dim=1).numpy()
    return probs[0] if single else probs


def predict(head: ClassifierHead, image: np.ndarray) -> np.ndarray:
    """Argmax labels; ties resolve to the lowest index."""
    probs = classify(head, image)
    if probs.ndim == 1:
        return int(np.argmax(probs))
    return np.argmax(probs, axis=1)


def evaluate(head: ClassifierHead, dataset, attack: AttackSpec | None = None) -> AccuracyReport:
    """Accuracy per label, macro accuracy, and the confusion matrix.

    If an attack spec is given it is applied to the images first.
    """
    images, labels = dataset
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if images.shape[0] == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if attack is not None:
        images = apply_attack(images, attack)
    preds = np.asarray(predict(head, images))
    k = head.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(labels, preds):
        confusion[t, p] += 1
    per_label, counts = {}, {}
    for label in np.unique(labels):
        mask = labels == label
        per_label[int(label)] = float(np.mean(preds[mask] == label))
        counts[int(label)] = int(mask.sum())
    return AccuracyReport(
        macro_accuracy=float(np.mean(list(per_label.values()))),
        overall_accuracy=float(np.mean(preds == labels)),
        per_label=per_label,
        confusion=confusion,
        counts=counts,
    )


def save_head(head: ClassifierHead, path):
    header = {"container": "detector-head", "descriptor": head.descriptor}
    arrays = {f"head.{k}": v.detach().cpu().numpy()
              for k, v in head.state_dict().items()}
    return save_container(path, header, arrays)


def load_head(path) -> ClassifierHead:
    header, arrays = load_container(path)
    if header.get("container") != "detector-head":
        raise ParameterError(f"container at {path} is {header.get('container')!r}, "
                             "expected 'detector-head'")
    head = ClassifierHead(**header["descriptor"])
    state = {k[len("head."):]: torch.from_numpy(np.array(v))
             for k, v in arrays.items() if k.startswith("head.")}
    head.load_state_dict(state)
    head.eval()
    return head


def evaluate_under_attacks(head: ClassifierHead, dataset, attacks: dict) -> dict:
    """Run evaluate once per attack (plus 'no_attack'); returns kind -> report."""
    out = {"no_attack": evaluate(head, dataset)}
    for kind, spec in attacks.items():
        out[kind] = evaluate(head, dataset, attack=spec)
    return out


def format_attack_table(results_by_head: dict) -> str:
    """Accuracy grid: one row per classifier, one column per attack kind."""
    columns = None
    for results in results_by_head.values():
        cols = list(results)
        columns = cols if columns is None else columns
        if cols != columns:
            raise DataError("attack result dicts disagree on attack kinds")
    head_w = max(len(k) for k in results_by_head) + 2
    lines = [" " * head_w + "".join(f"{c:>20}" for c in columns)]
    for name, results in results_by_head.items():
        row = "".join(f"{results[c].overall_accuracy * 100:>19.2f}%" for c in columns)
        lines.append(f"{name:<{head_w}}" + row)
    return "\n".join(lines)


class TrunkEmbedder:
    """IS/FID embedder backed by a trained classifier head.

    features() returns the 256-unit penultimate activations,
    probabilities() the softmax output.
    """

    def __init__(self, head: ClassifierHead):
        self.head = head

    def features(self, images):
        arr = np.asarray(images, dtype=np.float32)
        self.head.eval()
        with torch.no_grad():
            return self.head.trunk(torch.from_numpy(arr)).numpy()

    def probabilities(self, images):
        return classify(self.head, np.asarray(images, dtype=np.float32))
