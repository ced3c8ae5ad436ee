"""
Class-difference maps
=====================

Projecting an image onto the decision boundary (target distance 0) and
subtracting shows which pixels the generator had to change to make the
classifier undecided. On the toy data those pixels should be the hole.
Grad-CAM on the same classifier serves as a baseline.

Needs demo 02. Heatmaps land in demo_out/heatmaps, features in
demo_out/embeddings.csv.
"""
import os
from pathlib import Path

import numpy as np

from paragan.dataset import hole_mask, load_manifest, load_split, split_domains
from paragan.explain import class_difference_map, export_embeddings, grad_cam, mask_mass_fraction
from paragan.trainer import ModelBundle

out = Path(os.environ.get("DEMO_OUT", "demo_out"))
bundle = ModelBundle.load(sorted((out / "gan").glob("bundle_epoch*.ckpt"))[-1])
records = {r["path"]: r for r in load_manifest(out / "data")["files"]}
_, ys = split_domains(load_split(out / "data", "test"))

# %%
# Share of each map's mass inside the (2 px dilated) hole.
cdm_frac, cam_frac = [], []
for i, y in enumerate(ys):
    cdm = class_difference_map(bundle, y)
    cam = grad_cam(bundle.c_aux, y.image, y.name)
    mask = hole_mask(records[y.name], bundle.cfg.image_size, dilation=2.0)
    cdm_frac.append(mask_mass_fraction(cdm.values, mask))
    cam_frac.append(mask_mass_fraction(cam.values, mask))
    if i < 4:
        stem = Path(y.name).stem
        cdm.save(out / "heatmaps" / f"{stem}_cdm.png")
        cam.save(out / "heatmaps" / f"{stem}_gradcam.png")
print(f"hole mass  CDM {np.mean(cdm_frac):.3f}   Grad-CAM {np.mean(cam_frac):.3f}")
print(f"hole area share of the image: {np.mean([hole_mask(records[y.name], 64, 2.0).mean() for y in ys]):.3f}")

# %%
# Penultimate-layer features of real and synthetic images, plus a 2-D PCA
# projection; feed the feature columns to t-SNE elsewhere if wanted.
table = export_embeddings(bundle.c_aux, ys[:20], [])
table.to_csv(out / "embeddings.csv")
print("embedding columns:", len(table.header), "first:", table.header[:2], "last:", table.header[-4:])
