"""Shared fixtures-as-functions for CLI level tests."""
import json
from pathlib import Path

import numpy as np

from smartaug.dataset import PreprocessSpec, apply_preprocess, load_manifest, read_image, read_mask
from smartaug.raster import AugPlan, apply_plan


def replay_mismatches(data_root, out_dir, target=None, crop_probability=0.5):
    """Re-run every logged plan on the source items; return names that differ."""
    manifest = load_manifest(data_root)
    spec = PreprocessSpec(target, crop_probability) if target else None
    out_dir = Path(out_dir)
    bad = []
    rows = [json.loads(line) for line in (out_dir / "plans.jsonl").read_text().splitlines()]
    for row in rows:
        item = manifest.split(row["split"])[row["index"]]
        image, mask = item.load()
        if row["preprocess"] is not None:
            image, mask = apply_preprocess(image, mask, spec, row["preprocess"])
        image, mask = apply_plan(AugPlan.from_dict(row["plan"]), image, mask, manifest.ignore_index)
        edir = out_dir / f"epoch_{row['epoch']}"
        got_img = read_image(edir / "images" / row["name"])
        got_mask = read_mask(edir / "masks" / row["name"])
        if not (np.array_equal(got_img, image) and np.array_equal(got_mask, mask)):
            bad.append((row["epoch"], row["name"]))
    return rows, bad
