"""Class-difference maps, hyperplane projections, a Grad-CAM baseline and
embedding export for latent-space plots."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image as PILImage

from .dataset import DomainSample
from .networks import to_tensor


@dataclass
class Heatmap:
    values: np.ndarray  # H x W, non-negative
    source_id: str
    kind: str  # "CDM" or "GradCAM"

    def save(self, path) -> Path:
        """8-bit PNG (max-scaled) plus a raw ``.npy`` sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        peak = self.values.max()
        scaled = self.values / peak if peak > 0 else self.values
        PILImage.fromarray(np.round(scaled * 255).astype(np.uint8)).save(path)
        np.save(path.with_suffix(".npy"), self.values)
        return path


def _check_shape(bundle, img: np.ndarray) -> None:
    size, ch = bundle.cfg.image_size, bundle.cfg.channels
    if img.shape != (size, size, ch):
        raise ValueError(f"image shape {img.shape} does not match bundle ({size}, {size}, {ch})")


def project_to_hyperplane(bundle, sample: DomainSample) -> np.ndarray:
    """Translate ``sample`` with conditioning distance 0, i.e. onto the
    decision boundary, using the generator that leaves its domain."""
    _check_shape(bundle, sample.image)
    target = "Y" if sample.domain == "X" else "X"
    return bundle.translate(sample.image, 0.0, target)


def class_difference_map(bundle, sample: DomainSample) -> Heatmap:
    projected = project_to_hyperplane(bundle, sample)
    diff = np.abs(sample.image - projected).mean(axis=-1)
    return Heatmap(diff, sample.name, "CDM")


def mask_mass_fraction(heatmap: np.ndarray, mask: np.ndarray) -> float:
    """Share of the heatmap's total mass that falls inside ``mask``."""
    total = float(heatmap.sum())
    return float(heatmap[mask].sum()) / total if total > 0 else 0.0


def _net(classifier) -> nn.Module:
    return getattr(classifier, "net", classifier)


def grad_cam(classifier, img: np.ndarray, source_id: str = "") -> Heatmap:
    """Grad-CAM on the last conv stage of a :class:`SmallCNN`-like network
    (needs ``feature_map`` and ``head``). Max-normalized to [0, 1]."""
    net = _net(classifier)
    if not hasattr(net, "feature_map") or not any(isinstance(m, nn.Conv2d) for m in net.modules()):
        raise ValueError("grad_cam needs a classifier with at least one conv stage")
    x = to_tensor(img)
    was_training = net.training
    net.eval()
    with torch.enable_grad():
        acts = net.feature_map(x).detach().requires_grad_(True)
        score = net.head(acts.mean(dim=(2, 3))).sum()
        (grads,) = torch.autograd.grad(score, acts, allow_unused=True)
    net.train(was_training)
    if grads is None:
        grads = torch.zeros_like(acts)
    weights = grads.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * acts.detach()).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=img.shape[:2], mode="bilinear", align_corners=False)[0, 0]
    cam = cam.numpy().astype(np.float64)
    peak = cam.max()
    cam = cam / peak if peak > 0 else np.zeros_like(cam)
    return Heatmap(cam, source_id, "GradCAM")


def pca_2d(features: np.ndarray) -> np.ndarray:
    """Project centred features on the top two principal axes.

    Each axis is sign-fixed so its largest-magnitude loading is positive.
    Missing axes (fewer than two samples or features) are zero columns.
    """
    feats = np.asarray(features, dtype=np.float64)
    centred = feats - feats.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    out = np.zeros((len(feats), 2))
    for k in range(min(2, vt.shape[0])):
        axis = vt[k]
        if axis[np.argmax(np.abs(axis))] < 0:
            axis = -axis
        out[:, k] = centred @ axis
    return out - out.mean(axis=0)


@dataclass
class EmbeddingTable:
    features: np.ndarray
    labels: np.ndarray
    synthetic: np.ndarray
    pca: np.ndarray

    @property
    def header(self) -> list[str]:
        d = self.features.shape[1]
        return [f"feat_{i}" for i in range(d)] + ["label", "synthetic", "pca_x", "pca_y"]

    def rows(self):
        for f, lab, syn, p in zip(self.features, self.labels, self.synthetic, self.pca):
            yield [repr(float(v)) for v in f] + [int(lab), int(syn), repr(float(p[0])), repr(float(p[1]))]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            w.writerows(self.rows())
        return path


def export_embeddings(classifier, samples: list[DomainSample],
                      synthetics: list[DomainSample] = (), batch: int = 64) -> EmbeddingTable:
    """Penultimate-layer features for real and synthetic samples, with a
    2-D PCA projection for quick plotting."""
    everything = list(samples) + list(synthetics)
    if not everything:
        raise ValueError("export_embeddings needs at least one sample")
    net = _net(classifier)
    net.eval()
    feats = []
    with torch.no_grad():
        for i in range(0, len(everything), batch):
            imgs = np.stack([s.image for s in everything[i:i + batch]])
            feats.append(net.embed(to_tensor(imgs)).numpy())
    features = np.concatenate(feats).astype(np.float64)
    labels = np.array([s.label for s in everything])
    synthetic = np.array([0] * len(samples) + [1] * len(synthetics))
    return EmbeddingTable(features, labels, synthetic, pca_2d(features))
