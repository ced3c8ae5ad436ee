"""
Toy domains and the auxiliary hyperplane
========================================

Two image domains: X holds filled discs, Y holds discs with a concentric
hole. A small hinge-loss classifier separates them; the absolute value of
its raw score is the "projection distance" used to condition the GANs.

Run from the repository root:  python demos/01_toy_data_and_hyperplane.py
Artifacts go to ./demo_out (override with DEMO_OUT).
"""
import os
from pathlib import Path

import numpy as np

from paragan.config import RunConfig
from paragan.dataset import generate_shapes_dataset, load_split, shape_spec_from_config, split_domains
from paragan.hyperplane import train_aux_classifier

out = Path(os.environ.get("DEMO_OUT", "demo_out"))

# A small dataset keeps everything in demo territory (seconds, not minutes).
cfg = RunConfig(n_per_domain=40, n_test=100)
manifest = generate_shapes_dataset(shape_spec_from_config(cfg), out / "data")
print("files per split/domain:", manifest["counts"])

train = load_split(out / "data", "train")
val = load_split(out / "data", "val")
test = load_split(out / "data", "test")

# Pixels arrive in [-1, 1]; labels follow the domain (X -> -1, Y -> +1).
s = train[0]
print(s.name, s.domain, s.label, s.image.shape, float(s.image.min()), float(s.image.max()))

# %%
# Train the auxiliary classifier. It is frozen on return: from here on its
# parameters never change and its digest identifies it.
clf = train_aux_classifier(train, val, cfg)
print("val accuracy", clf.metrics["val_accuracy"], "digest", clf.digest[:12])
clf.save(out / "aux.ckpt", cfg.config_hash)

# %%
# Signed scores put X below zero and Y above; the distance drops the sign.
xs, ys = split_domains(test)
dx = clf.distances(np.stack([x.image for x in xs]))
dy = clf.distances(np.stack([y.image for y in ys]))
print(f"d_x: mean {dx.mean():.2f}  range [{dx.min():.2f}, {dx.max():.2f}]")
print(f"d_y: mean {dy.mean():.2f}  range [{dy.min():.2f}, {dy.max():.2f}]")

# Does a larger hole push an image further from the boundary?
sev = {r["path"]: r["severity"] for r in manifest["files"]}
corr = np.corrcoef([sev[y.name] for y in ys], dy)[0, 1]
print(f"correlation of hole severity with d_y: {corr:.2f}")
