"""Hinge-trained auxiliary classifier: the decision hyperplane, signed scores
and projection distances."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import load_checkpoint, param_digest, save_checkpoint
from .config import RunConfig
from .dataset import DomainSample, split_domains
from .networks import SmallCNN, to_tensor

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


class FrozenClassifierError(RuntimeError):
    pass


def hinge_loss(scores, labels):
    """Mean of ``max(0, 1 - t_i * s_i)``.

    Tensors in, tensor out (differentiable; the subgradient at margin exactly
    one is zero). Plain sequences in, float out.
    """
    as_float = not isinstance(scores, torch.Tensor)
    s = torch.as_tensor(scores, dtype=torch.float64) if as_float else scores
    t = torch.as_tensor(labels, dtype=s.dtype, device=s.device)
    if s.numel() == 0:
        raise ValueError("hinge_loss of an empty batch")
    if s.shape != t.shape:
        raise ValueError(f"length mismatch: {tuple(s.shape)} scores vs {tuple(t.shape)} labels")
    loss = F.relu(1 - t * s).mean()
    return float(loss) if as_float else loss


@dataclass
class HyperplaneClassifier:
    """A :class:`SmallCNN` whose linear head defines ``w.z + b = 0``."""

    net: SmallCNN
    image_size: int
    frozen: bool = False
    geometric: bool = False
    metrics: dict = field(default_factory=dict)

    @classmethod
    def build(cls, cfg: RunConfig, seed: int | None = None) -> "HyperplaneClassifier":
        torch.manual_seed(cfg.seed if seed is None else seed)
        net = SmallCNN(cfg.channels, cfg.clf_width)
        return cls(net, cfg.image_size, geometric=cfg.geometric_distance)

    def freeze(self) -> "HyperplaneClassifier":
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
            p.grad = None
        self.frozen = True
        return self

    def scores(self, x: torch.Tensor) -> torch.Tensor:
        """Batched signed scores for an NCHW tensor (differentiable in ``x``)."""
        if x.shape[-2:] != (self.image_size, self.image_size):
            raise ValueError(f"expected {self.image_size}x{self.image_size} images, "
                             f"got {tuple(x.shape[-2:])}")
        s = self.net(x)
        if self.geometric:
            s = s / self.net.head.weight.norm()
        return s

    def score(self, img: np.ndarray) -> float:
        with torch.no_grad():
            return float(self.scores(to_tensor(img))[0])

    def projection_distance(self, img: np.ndarray) -> float:
        return abs(self.score(img))

    def distances(self, images: np.ndarray, batch: int = 64) -> np.ndarray:
        out = []
        with torch.no_grad():
            for i in range(0, len(images), batch):
                out.append(self.scores(to_tensor(images[i:i + batch])).abs().numpy())
        return np.concatenate(out).astype(np.float64)

    @property
    def digest(self) -> str:
        return param_digest(self.net)

    def architecture(self) -> dict:
        return {"kind": "SmallCNN", "channels": self.net.channels,
                "width": self.net.features[0].out_channels, "image_size": self.image_size}

    def save(self, path, config_hash: str = "") -> None:
        arch = self.architecture()
        save_checkpoint(path, {"net": self.net.state_dict()}, {
            "architecture": arch,
            "architecture_hash": hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest(),
            "config_hash": config_hash,
            "frozen": self.frozen,
            "geometric": self.geometric,
            "metrics": self.metrics,
            "param_digest": self.digest,
        })

    @classmethod
    def load(cls, path) -> "HyperplaneClassifier":
        state, meta = load_checkpoint(path)
        arch = meta["architecture"]
        net = SmallCNN(arch["channels"], arch["width"])
        net.load_state_dict(state["net"])
        clf = cls(net, arch["image_size"], geometric=meta.get("geometric", False),
                  metrics=meta.get("metrics", {}))
        return clf.freeze() if meta.get("frozen") else clf


def score(clf: HyperplaneClassifier, img: np.ndarray) -> float:
    return clf.score(img)


def projection_distance(clf: HyperplaneClassifier, img: np.ndarray) -> float:
    return clf.projection_distance(img)


def predict_scores(net, samples: list[DomainSample], batch: int = 64) -> np.ndarray:
    was_training = net.training
    net.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(samples), batch):
            imgs = np.stack([s.image for s in samples[i:i + batch]])
            out.append(net(to_tensor(imgs)).numpy())
    net.train(was_training)
    return np.concatenate(out).astype(np.float64)


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    pred = np.where(scores > 0, 1, -1)
    return float(np.mean(pred == labels))


def train_aux_classifier(train: list[DomainSample], val: list[DomainSample],
                         cfg: RunConfig) -> HyperplaneClassifier:
    """Fit backbone and head by minimizing the hinge loss; return it frozen."""
    xs, ys = split_domains(train)
    if not xs or not ys:
        raise ValueError("single-domain training set: both X and Y are required")
    clf = HyperplaneClassifier.build(cfg)
    net = clf.net
    opt = torch.optim.Adam(net.parameters(), lr=cfg.aux_lr, betas=(0.9, 0.999))
    images = np.stack([s.image for s in train])
    labels = np.array([s.label for s in train], dtype=np.float32)
    rng = np.random.default_rng([cfg.seed, 1])
    net.train()
    for epoch in range(cfg.aux_epochs):
        order = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(order), cfg.aux_batch_size):
            idx = order[i:i + cfg.aux_batch_size]
            loss = hinge_loss(net(to_tensor(images[idx])), torch.from_numpy(labels[idx]))
            if not torch.isfinite(loss):
                raise DivergenceError(f"aux classifier loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        log.info("aux epoch %d hinge %.4f", epoch, total / len(order))
    clf.freeze()
    if val:
        s = predict_scores(net, val)
        clf.metrics["val_accuracy"] = accuracy(s, np.array([v.label for v in val]))
        clf.metrics["val_hinge"] = hinge_loss(s.tolist(), [v.label for v in val])
    if any(not math.isfinite(v) for v in clf.metrics.values()):
        raise DivergenceError("aux classifier produced non-finite validation metrics")
    return clf
