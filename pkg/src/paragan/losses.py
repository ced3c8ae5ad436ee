"""ParaGAN objective terms and the downstream weighted hinge loss.

Every batch reduction is an arithmetic mean, including the L1 cycle term
(mean per pixel), so loss magnitudes do not depend on batch or image size.
Adversarial terms work on logits via softplus:
``-log sigmoid(z) = softplus(-z)`` and ``-log(1 - sigmoid(z)) = softplus(z)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .hyperplane import FrozenClassifierError, hinge_loss


@dataclass(frozen=True)
class LossWeights:
    lambda_proj: float = 0.1
    lambda_cyc: float = 10.0
    alpha: float = 0.2

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{k} must be finite and non-negative, got {v}")


@dataclass
class LossReport:
    adv_g: float
    adv_d: float
    proj: float
    cyc: float
    total: float

    def as_row(self) -> dict:
        return asdict(self)


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def adv_d_from_logits(real_logits, fake_logits) -> torch.Tensor:
    real_logits, fake_logits = _as_tensor(real_logits), _as_tensor(fake_logits)
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def adv_g_from_logits(fake_logits, mode: str = "non_saturating") -> torch.Tensor:
    fake_logits = _as_tensor(fake_logits)
    if mode == "non_saturating":
        return F.softplus(-fake_logits).mean()
    if mode == "literal":
        # log(1 - sigmoid(z)), minimized as written
        return -F.softplus(fake_logits).mean()
    raise ValueError(f"unknown generator loss mode {mode!r}")


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def adv_loss_discriminator(D, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Discriminator side of the adversarial loss, averaged over batch and
    patch map. ``fake`` is detached here so no gradient reaches a generator."""
    _check_pair(real, fake)
    return adv_d_from_logits(D(real), D(fake.detach()))


def adv_loss_generator(D, fake: torch.Tensor, mode: str = "non_saturating") -> torch.Tensor:
    return adv_g_from_logits(D(fake), mode)


def projection_loss_from_scores(score_xy, score_yx, d_y, d_x) -> torch.Tensor:
    """Squared error to ``+d_y`` for X->Y outputs and ``-d_x`` for Y->X outputs,
    each averaged over the batch and summed."""
    score_xy, score_yx = _as_tensor(score_xy), _as_tensor(score_yx)
    d_y = torch.as_tensor(d_y, dtype=score_xy.dtype).reshape(score_xy.shape)
    d_x = torch.as_tensor(d_x, dtype=score_yx.dtype).reshape(score_yx.shape)
    if (d_y < 0).any() or (d_x < 0).any():
        raise ValueError("projection distances must be non-negative")
    return ((d_y - score_xy) ** 2).mean() + ((-d_x - score_yx) ** 2).mean()


def projection_loss(c_aux, fake_xy: torch.Tensor, fake_yx: torch.Tensor, d_y, d_x) -> torch.Tensor:
    """Projection-distance loss through a frozen auxiliary classifier.

    ``c_aux`` is a :class:`~paragan.hyperplane.HyperplaneClassifier`; the
    gradient reaches the generators through its (frozen) network.
    """
    if not getattr(c_aux, "frozen", False):
        raise FrozenClassifierError("projection_loss requires a frozen auxiliary classifier")
    d_y = torch.as_tensor(d_y, dtype=fake_xy.dtype).reshape(-1)
    d_x = torch.as_tensor(d_x, dtype=fake_yx.dtype).reshape(-1)
    if d_y.numel() != fake_xy.shape[0] or d_x.numel() != fake_yx.shape[0]:
        raise ValueError("length mismatch between distances and fake batches")
    return projection_loss_from_scores(c_aux.scores(fake_xy), c_aux.scores(fake_yx), d_y, d_x)


def cycle_loss(x, x_rec, y, y_rec) -> torch.Tensor:
    x, x_rec, y, y_rec = map(_as_tensor, (x, x_rec, y, y_rec))
    _check_pair(x, x_rec)
    _check_pair(y, y_rec)
    return (x - x_rec).abs().mean() + (y - y_rec).abs().mean()


def _scalar(v) -> float:
    return v.item() if torch.is_tensor(v) else float(v)


def total_paragan_loss(adv_g_xy, adv_g_yx, proj, cyc, w: LossWeights, adv_d=0.0):
    """Generator objective: both adversarial terms plus the weighted
    projection and cycle terms.

    With tensor inputs the returned total stays differentiable and is the
    second element of the pair; the first is always a float ``LossReport``.
    """
    parts = {"adv_g_xy": adv_g_xy, "adv_g_yx": adv_g_yx, "proj": proj, "cyc": cyc, "adv_d": adv_d}
    for k, v in parts.items():
        if not math.isfinite(_scalar(v)):
            raise ValueError(f"non-finite loss component {k}")
    adv_g = adv_g_xy + adv_g_yx
    total = adv_g + w.lambda_proj * proj + w.lambda_cyc * cyc
    report = LossReport(adv_g=_scalar(adv_g), adv_d=_scalar(adv_d), proj=_scalar(proj),
                        cyc=_scalar(cyc), total=_scalar(total))
    return report, total


def downstream_loss(real_scores, real_labels, syn_scores, syn_labels, alpha: float):
    """Hinge on real samples plus ``alpha`` times hinge on synthetic ones.

    An empty synthetic batch contributes zero.
    """
    if alpha < 0 or not math.isfinite(alpha):
        raise ValueError("alpha must be finite and non-negative")
    if len(real_scores) == 0:
        raise ValueError("downstream loss needs a non-empty real batch")
    real = hinge_loss(real_scores, real_labels)
    if syn_scores is None or len(syn_scores) == 0 or alpha == 0:
        return real
    return real + alpha * hinge_loss(syn_scores, syn_labels)
