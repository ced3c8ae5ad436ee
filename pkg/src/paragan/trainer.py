"""ParaGAN training: bundle construction, the per-step procedure, the
constant-then-linear-decay learning-rate schedule and checkpointing."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import atomic_write_text, load_checkpoint, save_checkpoint
from .config import RunConfig
from .dataset import batch_iterator, load_split
from .hyperplane import DivergenceError, FrozenClassifierError, HyperplaneClassifier
from .losses import (LossReport, LossWeights, adv_loss_discriminator, adv_loss_generator,
                     cycle_loss, projection_loss, total_paragan_loss)
from .networks import Generator, PatchDiscriminator, init_weights, to_tensor

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ["step", "epoch", "adv_g", "adv_d", "proj", "cyc", "total", "lr"]
DIVERGENCE_LIMIT = 1e4


def lr_at_epoch(e: int, cfg: RunConfig) -> float:
    """``base_lr`` for the constant phase, then linear decay towards zero."""
    if not 0 <= e < cfg.total_epochs:
        raise ValueError(f"epoch {e} outside [0, {cfg.total_epochs})")
    if e < cfg.epochs_const:
        return cfg.base_lr
    return cfg.base_lr * (cfg.epochs_const + cfg.epochs_decay - e) / cfg.epochs_decay


class ImagePool:
    """Replay buffer of past fakes for the discriminator (off by default)."""

    def __init__(self, size: int, seed: int):
        self.size = size
        self.images: list[torch.Tensor] = []
        self.rng = random.Random(seed)

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        if self.size == 0:
            return batch
        out = []
        for img in batch.detach():
            img = img.unsqueeze(0)
            if len(self.images) < self.size:
                self.images.append(img)
                out.append(img)
            elif self.rng.random() < 0.5:
                i = self.rng.randrange(self.size)
                out.append(self.images[i].clone())
                self.images[i] = img
            else:
                out.append(img)
        return torch.cat(out)


class _OptimizerPair:
    """Two optimizers driven as one (separate G_X2Y and G_Y2X states)."""

    def __init__(self, a: torch.optim.Optimizer, b: torch.optim.Optimizer):
        self.pair = (a, b)

    @property
    def param_groups(self):
        return self.pair[0].param_groups + self.pair[1].param_groups

    def zero_grad(self):
        for o in self.pair:
            o.zero_grad()

    def step(self):
        for o in self.pair:
            o.step()

    def state_dict(self):
        return {"pair": [o.state_dict() for o in self.pair]}

    def load_state_dict(self, state):
        for o, st in zip(self.pair, state["pair"]):
            o.load_state_dict(st)


def _set_requires_grad(modules, flag: bool) -> None:
    for m in modules:
        for p in m.parameters():
            p.requires_grad_(flag)


@dataclass
class ModelBundle:
    g_xy: Generator
    g_yx: Generator
    d_x: PatchDiscriminator
    d_y: PatchDiscriminator
    c_aux: HyperplaneClassifier
    cfg: RunConfig
    opt_g: torch.optim.Optimizer = None
    opt_dx: torch.optim.Optimizer = None
    opt_dy: torch.optim.Optimizer = None
    condition_scale: float = 1.0
    epoch: int = 0
    pools: tuple = field(default=None, repr=False)

    @classmethod
    def build(cls, cfg: RunConfig, c_aux: HyperplaneClassifier) -> "ModelBundle":
        if not c_aux.frozen:
            raise FrozenClassifierError("the auxiliary classifier must be frozen")
        torch.manual_seed(cfg.seed)
        nets = [Generator(cfg.channels, cfg.base_width, cfg.n_res_blocks),
                Generator(cfg.channels, cfg.base_width, cfg.n_res_blocks),
                PatchDiscriminator(cfg.channels, cfg.base_width, cfg.d_layers),
                PatchDiscriminator(cfg.channels, cfg.base_width, cfg.d_layers)]
        for n in nets:
            init_weights(n)
        b = cls(*nets, c_aux=c_aux, cfg=cfg)
        b.make_optimizers()
        return b

    def make_optimizers(self) -> None:
        lr, betas = self.cfg.base_lr, (0.5, 0.999)
        if self.cfg.joint_g_optimizer:
            self.opt_g = torch.optim.Adam(itertools.chain(self.g_xy.parameters(), self.g_yx.parameters()),
                                          lr=lr, betas=betas)
        else:
            self.opt_g = _OptimizerPair(torch.optim.Adam(self.g_xy.parameters(), lr=lr, betas=betas),
                                        torch.optim.Adam(self.g_yx.parameters(), lr=lr, betas=betas))
        self.opt_dx = torch.optim.Adam(self.d_x.parameters(), lr=lr, betas=betas)
        self.opt_dy = torch.optim.Adam(self.d_y.parameters(), lr=lr, betas=betas)
        self.pools = (ImagePool(self.cfg.pool_size, self.cfg.seed),
                      ImagePool(self.cfg.pool_size, self.cfg.seed + 1))

    @property
    def optimizers(self):
        return (self.opt_g, self.opt_dx, self.opt_dy)

    def set_lr(self, lr: float) -> None:
        for opt in self.optimizers:
            for group in opt.param_groups:
                group["lr"] = lr

    def condition(self, distance):
        return distance / self.condition_scale

    def translate(self, images: np.ndarray, signed_distance, to_domain: str) -> np.ndarray:
        """Inference helper: run G_X2Y (``to_domain='Y'``) or G_Y2X on HxWxC
        arrays. ``signed_distance`` is a scalar or one value per image."""
        g = self.g_xy if to_domain == "Y" else self.g_yx
        batched = np.asarray(images).ndim == 4
        x = to_tensor(images)
        g.eval()
        with torch.no_grad():
            out = g(x, self.condition(torch.as_tensor(signed_distance, dtype=x.dtype)))
        arr = out.numpy().transpose(0, 2, 3, 1)
        return arr if batched else arr[0]

    def save(self, path) -> None:
        state = {
            "g_xy": self.g_xy.state_dict(), "g_yx": self.g_yx.state_dict(),
            "d_x": self.d_x.state_dict(), "d_y": self.d_y.state_dict(),
            "c_aux": self.c_aux.net.state_dict(),
            "opt_g": self.opt_g.state_dict(), "opt_dx": self.opt_dx.state_dict(),
            "opt_dy": self.opt_dy.state_dict(),
        }
        arch = {k: getattr(self.cfg, k) for k in ("image_size", "channels", "base_width",
                                                   "n_res_blocks", "d_layers")}
        save_checkpoint(path, state, {
            "architecture": arch,
            "architecture_hash": hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest(),
            "c_aux_architecture": self.c_aux.architecture(),
            "c_aux_digest": self.c_aux.digest,
            "c_aux_geometric": self.c_aux.geometric,
            "condition_scale": self.condition_scale,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.config_hash,
            "epoch": self.epoch,
            "frozen_c_aux": self.c_aux.frozen,
        })

    @classmethod
    def load(cls, path) -> "ModelBundle":
        from .networks import SmallCNN

        state, meta = load_checkpoint(path)
        cfg = RunConfig.from_dict(meta["config"])
        arch = meta["c_aux_architecture"]
        net = SmallCNN(arch["channels"], arch["width"])
        net.load_state_dict(state["c_aux"])
        c_aux = HyperplaneClassifier(net, arch["image_size"],
                                     geometric=meta.get("c_aux_geometric", False)).freeze()
        b = cls.build(cfg, c_aux)
        for k in ("g_xy", "g_yx", "d_x", "d_y", "opt_g", "opt_dx", "opt_dy"):
            getattr(b, k).load_state_dict(state[k])
        b.condition_scale = meta.get("condition_scale", 1.0)
        b.epoch = meta.get("epoch", 0)
        return b


def _check_finite(report: LossReport, step: int) -> None:
    for k, v in report.as_row().items():
        if not math.isfinite(v) or abs(v) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"loss {k}={v} diverged at step {step}")


def generator_objective(bundle: ModelBundle, x, y, fake_y, fake_x, d_x, d_y):
    """Generator losses for one step; returns ``(parts, total_tensor)``.

    ``parts`` maps each term name to its tensor so callers can take
    gradients of individual terms.
    """
    cfg = bundle.cfg
    cx, cy = bundle.condition(d_x), bundle.condition(d_y)
    adv_xy = adv_loss_generator(bundle.d_y, fake_y, cfg.gen_mode)
    adv_yx = adv_loss_generator(bundle.d_x, fake_x, cfg.gen_mode)
    proj = projection_loss(bundle.c_aux, fake_y, fake_x, d_y, d_x)
    rec_x = bundle.g_yx(fake_y, -cx)
    rec_y = bundle.g_xy(fake_x, cy)
    cyc = cycle_loss(x, rec_x, y, rec_y)
    w = LossWeights(cfg.lambda_proj, cfg.lambda_cyc, cfg.alpha)
    total = adv_xy + adv_yx + w.lambda_proj * proj + w.lambda_cyc * cyc
    return {"adv_g_xy": adv_xy, "adv_g_yx": adv_yx, "proj": proj, "cyc": cyc}, total


def _update_discriminators(bundle: ModelBundle, x, y, fake_x, fake_y) -> float:
    _set_requires_grad((bundle.d_x, bundle.d_y), True)
    pool_x, pool_y = bundle.pools
    loss_dy = adv_loss_discriminator(bundle.d_y, y, pool_y.query(fake_y.detach()))
    bundle.opt_dy.zero_grad()
    loss_dy.backward()
    bundle.opt_dy.step()
    loss_dx = adv_loss_discriminator(bundle.d_x, x, pool_x.query(fake_x.detach()))
    bundle.opt_dx.zero_grad()
    loss_dx.backward()
    bundle.opt_dx.step()
    return loss_dx.item() + loss_dy.item()


def _update_generators(bundle: ModelBundle, x, y, fake_x, fake_y, d_x, d_y, adv_d, step) -> LossReport:
    _set_requires_grad((bundle.d_x, bundle.d_y), False)
    parts, total = generator_objective(bundle, x, y, fake_y, fake_x, d_x, d_y)
    w = LossWeights(bundle.cfg.lambda_proj, bundle.cfg.lambda_cyc, bundle.cfg.alpha)
    report, _ = total_paragan_loss(parts["adv_g_xy"].item(), parts["adv_g_yx"].item(),
                                   parts["proj"].item(), parts["cyc"].item(), w,
                                   adv_d=0.0 if adv_d is None else adv_d)
    _check_finite(report, step)
    bundle.opt_g.zero_grad()
    total.backward()
    bundle.opt_g.step()
    _set_requires_grad((bundle.d_x, bundle.d_y), True)
    return report


def training_step(bundle: ModelBundle, x: torch.Tensor, y: torch.Tensor,
                  step: int = 0) -> LossReport:
    """One ParaGAN update on an X batch and a Y batch (NCHW tensors).

    Distances come from the frozen classifier. By default the
    discriminators are updated first on detached fakes, then both generators
    together; ``cfg.update_order = g_first`` swaps the two phases.
    """
    if not bundle.c_aux.frozen:
        raise FrozenClassifierError("the auxiliary classifier must stay frozen")
    g_nets, d_nets = (bundle.g_xy, bundle.g_yx), (bundle.d_x, bundle.d_y)
    for m in g_nets + d_nets:
        m.train()

    with torch.no_grad():
        d_x = bundle.c_aux.scores(x).abs()
        d_y = bundle.c_aux.scores(y).abs()
    fake_y = bundle.g_xy(x, bundle.condition(d_y))
    fake_x = bundle.g_yx(y, -bundle.condition(d_x))

    if bundle.cfg.update_order == "d_first":
        adv_d = _update_discriminators(bundle, x, y, fake_x, fake_y)
        report = _update_generators(bundle, x, y, fake_x, fake_y, d_x, d_y, adv_d, step)
    else:
        report = _update_generators(bundle, x, y, fake_x, fake_y, d_x, d_y, None, step)
        adv_d = _update_discriminators(bundle, x, y, fake_x, fake_y)
        report = dataclasses.replace(report, adv_d=adv_d)
    return report


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def train_paragan(data_root, aux_ckpt, cfg: RunConfig, run_dir) -> tuple[Path, Path]:
    """Full training run; returns ``(final checkpoint, history CSV)``.

    Writes ``bundle_epoch<k>.ckpt`` every ``checkpoint_every`` epochs and at
    the end, plus ``history.csv`` (one row per step) and ``config.json``.
    A divergence raises after the last good checkpoint has been kept.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if aux_ckpt is None or not Path(aux_ckpt).exists():
        raise FileNotFoundError(f"auxiliary checkpoint not found: {aux_ckpt}")
    c_aux = HyperplaneClassifier.load(aux_ckpt)
    if not c_aux.frozen:
        raise FrozenClassifierError(f"auxiliary checkpoint {aux_ckpt} is not frozen")
    if c_aux.image_size != cfg.image_size:
        raise ValueError(f"aux classifier expects {c_aux.image_size}px images, config says {cfg.image_size}")
    train = load_split(data_root, "train", channels=cfg.channels)
    bundle = ModelBundle.build(cfg, c_aux)
    if cfg.normalize_condition:
        dists = c_aux.distances(np.stack([s.image for s in train]))
        bundle.condition_scale = float(np.percentile(dists, 95)) or 1.0

    atomic_write_text(run_dir / "config.json", json.dumps(
        {"config": cfg.to_dict(), "config_hash": cfg.config_hash}, indent=1, sort_keys=True))
    history_path = run_dir / "history.csv"
    ckpt = run_dir / "bundle_epoch0.ckpt"
    step = 0
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        if cfg.total_epochs == 0:
            bundle.save(ckpt)
        for epoch in range(cfg.total_epochs):
            lr = lr_at_epoch(epoch, cfg)
            bundle.set_lr(lr)
            batches = batch_iterator(train, cfg.batch_size, cfg.seed, first_epoch=epoch)
            for bx, by in batches:
                report = training_step(bundle, to_tensor(bx), to_tensor(by), step)
                writer.writerow([step, epoch, *(_fmt(v) for v in (
                    report.adv_g, report.adv_d, report.proj, report.cyc, report.total, lr))])
                step += 1
            fh.flush()
            bundle.epoch = epoch + 1
            last = epoch + 1 == cfg.total_epochs
            if last or (cfg.checkpoint_every and bundle.epoch % cfg.checkpoint_every == 0):
                ckpt = run_dir / f"bundle_epoch{bundle.epoch}.ckpt"
                bundle.save(ckpt)
            log.info("epoch %d done (lr %.2e)", epoch, lr)
    return ckpt, history_path


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in HISTORY_COLUMNS:
            r[k] = int(r[k]) if k in ("step", "epoch") else float(r[k])
    return rows
