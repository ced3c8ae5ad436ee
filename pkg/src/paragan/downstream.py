"""Online ParaGAN augmentation and weighted-loss downstream classification.

Synthetics are regenerated for every batch from a frozen bundle, with target
distances drawn from the empirical distances of real target-domain training
images. The downstream objective is ``hinge(real) + alpha * hinge(synthetic)``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata

from .checkpoint import param_digest
from .config import RunConfig
from .dataset import DomainSample, apply_augment, batch_iterator, draw_augment_params, load_split
from .hyperplane import DivergenceError, predict_scores
from .losses import downstream_loss
from .networks import SmallCNN, to_tensor

log = logging.getLogger(__name__)

TABLE1_COLUMNS = ["method", "loss", "alpha", "acc_mean", "acc_std", "auc_mean", "auc_std", "acc", "auc"]
ALPHA_SWEEP_COLUMNS = ["alpha", "acc_mean", "acc_std", "auc_mean", "auc_std", "acc", "auc"]


def sample_target_distance(empirical, rng: np.random.Generator) -> float:
    """Uniform draw from a list of non-negative distances."""
    if len(empirical) == 0:
        raise ValueError("cannot sample from an empty distance list")
    return float(empirical[rng.integers(len(empirical))])


@dataclass
class DistanceSampler:
    """Empirical distances of real training images, per domain."""

    d_x: np.ndarray
    d_y: np.ndarray

    @classmethod
    def from_samples(cls, c_aux, samples: list[DomainSample]) -> "DistanceSampler":
        xs = [s.image for s in samples if s.domain == "X"]
        ys = [s.image for s in samples if s.domain == "Y"]
        if not xs or not ys:
            raise ValueError("distance sampler needs real images of both domains")
        return cls(c_aux.distances(np.stack(xs)), c_aux.distances(np.stack(ys)))

    def draw(self, target_domain: str, rng: np.random.Generator) -> float:
        return sample_target_distance(self.d_y if target_domain == "Y" else self.d_x, rng)


@dataclass
class AugmentedBatch:
    real: list[DomainSample]
    synthetic: list[DomainSample]
    provenance: list[dict] = field(default_factory=list)


def augment_batch(bundle, batch: list[DomainSample], sampler: DistanceSampler,
                  rng: np.random.Generator) -> AugmentedBatch:
    """Translate every real sample to the other domain.

    X sources go through G_X2Y at ``+d`` (label +1), Y sources through G_Y2X
    at ``-d`` (label -1); synthetics keep the order of their sources.
    """
    size = bundle.cfg.image_size
    for s in batch:
        if s.image.shape[:2] != (size, size) or s.image.shape[2] != bundle.cfg.channels:
            raise ValueError(f"sample {s.name!r} has shape {s.image.shape}, bundle expects "
                             f"{size}x{size}x{bundle.cfg.channels}")
    targets = ["Y" if s.domain == "X" else "X" for s in batch]
    dists = np.array([sampler.draw(t, rng) for t in targets])
    out: list[np.ndarray | None] = [None] * len(batch)
    for target, sign in (("Y", 1.0), ("X", -1.0)):
        idx = [i for i, t in enumerate(targets) if t == target]
        if idx:
            imgs = np.stack([batch[i].image for i in idx])
            fakes = bundle.translate(imgs, sign * dists[idx], target)
            for i, f in zip(idx, fakes):
                out[i] = f
    synthetic = [DomainSample(out[i].astype(np.float32), targets[i], name=f"syn:{batch[i].name}")
                 for i in range(len(batch))]
    provenance = [{"source_index": i, "source": batch[i].name, "target": targets[i],
                   "distance": float(dists[i])} for i in range(len(batch))]
    return AugmentedBatch(list(batch), synthetic, provenance)


@dataclass
class EvalResult:
    acc: float
    auc: float
    n: int
    seed: int = 0


def auc_score(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic with average ranks (ties count
    one half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined for a single-class sample")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy_at_zero(scores, labels) -> float:
    pred = np.where(np.asarray(scores) > 0, 1, -1)
    return float(np.mean(pred == np.asarray(labels)))


def _net(classifier) -> SmallCNN:
    return getattr(classifier, "net", classifier)


def evaluate(classifier, samples: list[DomainSample], seed: int = 0) -> EvalResult:
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    labels = np.array([s.label for s in samples])
    scores = predict_scores(_net(classifier), samples)
    return EvalResult(accuracy_at_zero(scores, labels), auc_score(scores, labels), len(samples), seed)


def _augment_real(images: np.ndarray, rng: np.random.Generator, cfg: RunConfig) -> np.ndarray:
    return np.stack([apply_augment(img, draw_augment_params(rng, cfg.ca_hflip, cfg.ca_vflip,
                                                            cfg.ca_crop_pad)) for img in images])


def train_classifier(train: list[DomainSample], cfg: RunConfig, seed: int, bundle=None,
                     alpha: float = 0.0) -> SmallCNN:
    """Train one downstream classifier for one seed.

    When ``alpha == 0`` or no bundle is given, the synthetic path is skipped
    entirely (no generator calls, no random draws), so the result is
    bit-identical to plain training.
    """
    use_syn = bundle is not None and alpha > 0
    torch.manual_seed(seed)
    net = SmallCNN(cfg.channels, cfg.clf_width)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.ds_lr, betas=(0.9, 0.999))
    ca_rng = np.random.default_rng([seed, 2])
    syn_rng = np.random.default_rng([seed, 3])
    sampler = DistanceSampler.from_samples(bundle.c_aux, train) if use_syn else None
    net.train()
    for epoch in range(cfg.ds_epochs):
        for bx, by in batch_iterator(train, cfg.ds_batch_size, seed, paired=False, first_epoch=epoch):
            images = np.concatenate([bx, by])
            labels = np.array([-1.0] * len(bx) + [1.0] * len(by), dtype=np.float32)
            if cfg.ca:
                images = _augment_real(images, ca_rng, cfg)
            real_scores = net(to_tensor(images))
            syn_scores = syn_labels = None
            if use_syn:
                k = min(len(images), int(round(cfg.syn_ratio * len(images))))
                src = syn_rng.permutation(len(images))[:k]
                batch = [DomainSample(images[i], "X" if labels[i] < 0 else "Y") for i in src]
                aug = augment_batch(bundle, batch, sampler, syn_rng)
                if aug.synthetic:
                    syn_scores = net(to_tensor(np.stack([s.image for s in aug.synthetic])))
                    syn_labels = torch.tensor([s.label for s in aug.synthetic], dtype=torch.float32)
            loss = downstream_loss(real_scores, torch.from_numpy(labels), syn_scores, syn_labels, alpha)
            if not torch.isfinite(loss):
                raise DivergenceError(f"downstream loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()
    return net


@dataclass
class DownstreamResult:
    alpha: float
    augmented: bool
    results: list[EvalResult]
    digests: list[str]

    def summary(self) -> dict:
        acc = np.array([r.acc for r in self.results])
        auc = np.array([r.auc for r in self.results])
        return {"acc_mean": float(acc.mean()), "acc_std": float(acc.std()),
                "auc_mean": float(auc.mean()), "auc_std": float(auc.std())}

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "augmented": self.augmented,
                "results": [asdict(r) for r in self.results], "digests": self.digests,
                **self.summary()}

    @classmethod
    def from_dict(cls, d: dict) -> "DownstreamResult":
        return cls(d["alpha"], d["augmented"], [EvalResult(**r) for r in d["results"]], d["digests"])


def train_downstream(data_root, paragan, alpha: float, cfg: RunConfig):
    """Train over ``cfg.seeds``; returns ``(last classifier, DownstreamResult)``.

    ``paragan`` is a loaded :class:`~paragan.trainer.ModelBundle`, a path to
    a bundle checkpoint, or ``None`` for real-data-only training.
    """
    from .trainer import ModelBundle

    bundle = ModelBundle.load(paragan) if isinstance(paragan, (str, Path)) else paragan
    train = load_split(data_root, "train", channels=cfg.channels)
    test = load_split(data_root, "test", channels=cfg.channels)
    load_split(data_root, "val", channels=cfg.channels)  # must exist
    results, digests, net = [], [], None
    for seed in cfg.seeds:
        net = train_classifier(train, cfg, seed, bundle, alpha)
        results.append(evaluate(net, test, seed))
        digests.append(param_digest(net))
        log.info("seed %d alpha %.2f: acc %.3f auc %.3f", seed, alpha, results[-1].acc, results[-1].auc)
    return net, DownstreamResult(alpha, bundle is not None, results, digests)


def fmt_cell(mean: float, std: float) -> str:
    return f"{mean:.3f}±{std:.3f}"


def table1_row(method: str, res: DownstreamResult) -> dict:
    s = res.summary()
    return {"method": method, "loss": "HingeLoss", "alpha": f"{res.alpha:g}",
            **{k: f"{v:.6f}" for k, v in s.items()},
            "acc": fmt_cell(s["acc_mean"], s["acc_std"]), "auc": fmt_cell(s["auc_mean"], s["auc_std"])}


def alpha_row(res: DownstreamResult) -> dict:
    row = table1_row("", res)
    return {k: row[k] for k in ALPHA_SWEEP_COLUMNS}


def write_csv(path, columns: list[str], rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in columns})
    return path


def sweep_alpha(data_root, paragan, alphas, cfg: RunConfig) -> list[DownstreamResult]:
    from .trainer import ModelBundle

    bundle = ModelBundle.load(paragan) if isinstance(paragan, (str, Path)) else paragan
    return [train_downstream(data_root, bundle, a, cfg)[1] for a in alphas]
