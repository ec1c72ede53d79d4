"""Generate a synthetic scene, look at its layout and draw a few patch triples.

Run:  python3 demos/scenes_and_patches.py [out_dir]
Writes the scene image, its building mask and a strip of local/global/label
patches so the three co-centred windows can be compared side by side.
"""
import os
import sys

import numpy as np

from aeroseg.data import (
    CenterPool, SynthParams, buildings_in_window, category_for_count, generate_scene,
    save_image, save_mask, triple_at,
)

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/scenes"
os.makedirs(out, exist_ok=True)

scene = generate_scene(SynthParams(seed=11))
print("scene", scene.shape, "buildings:", len(scene.rects("building")), "decoys:", len(scene.rects("decoy")))
save_image(f"{out}/scene.ppm", scene.image)
save_mask(f"{out}/mask.pgm", scene.mask)

pool = CenterPool(scene)
rng = np.random.default_rng(0)
tiles = []
for kind in ("positive", "decoy", "plain"):
    p = pool.draw(kind, rng)
    t = triple_at(scene, p)
    n = buildings_in_window(scene, p)
    print(f"{kind:8s} centre {p}: {n} buildings in the 256 window -> category {category_for_count(n)}")
    # downsample the global window to 64 px so it lines up with the local one
    g = t.global_[::4, ::4]
    lab = np.repeat(np.repeat(t.label, 4, 0), 4, 1)[..., None].repeat(3, 2).astype(float)
    tiles.append(np.concatenate([t.local, g, lab], 1))
save_image(f"{out}/triples.ppm", np.concatenate(tiles, 0))
print("wrote", out)
