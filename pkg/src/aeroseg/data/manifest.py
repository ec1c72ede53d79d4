"""Dataset manifest: scene_id <tab> image_path <tab> mask_path <tab> split."""
import os
from dataclasses import dataclass

SPLITS = ("train", "val", "test")


@dataclass
class Entry:
    scene_id: str
    image: str
    mask: str
    split: str


def read_manifest(path):
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{n}: expected 4 tab-separated fields, got {len(parts)}")
            sid, img, mask, split = parts
            if split not in SPLITS:
                raise ValueError(f"{path}:{n}: unknown split {split!r}")
            out.append(Entry(sid, os.path.join(base, img), os.path.join(base, mask), split))
    return out


def write_manifest(path, entries):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w") as f:
        for e in entries:
            img = os.path.relpath(e.image, base)
            mask = os.path.relpath(e.mask, base)
            f.write(f"{e.scene_id}\t{img}\t{mask}\t{e.split}\n")


def split_of(entries, split):
    return [e for e in entries if e.split == split]


def meta_path(mask_path):
    """Metadata sidecar that sits next to a mask: foo.pgm -> foo.meta.tsv."""
    return os.path.splitext(mask_path)[0] + ".meta.tsv"


def load_scene(entry):
    """Scene from a manifest entry; metadata is optional (empty when absent)."""
    from .imageio import load_image, load_mask
    from .synth import Scene, meta_from_text

    image = load_image(entry.image)
    mask = load_mask(entry.mask)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"{entry.scene_id}: image {image.shape[:2]} and mask {mask.shape} differ")
    meta = []
    mp = meta_path(entry.mask)
    if os.path.exists(mp):
        with open(mp) as f:
            meta = meta_from_text(f.read())
    return Scene(image, mask, meta)
