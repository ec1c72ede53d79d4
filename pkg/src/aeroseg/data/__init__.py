"""Scenes, patch sampling and file formats."""
from .synth import (
    CLASSES,
    PlacementError,
    Rect,
    Scene,
    SynthParams,
    class_mask,
    generate_scene,
    generate_scenes,
    meta_from_text,
    meta_to_text,
    params_from_text,
    params_to_text,
)
from .imageio import (
    FormatError,
    decode_pnm,
    encode_pnm,
    load_image,
    load_mask,
    load_prob_pgm,
    load_raw,
    save_image,
    save_mask,
    save_prob_pgm,
    save_raw,
)
from .manifest import Entry, load_scene, meta_path, read_manifest, split_of, write_manifest
from .patches import (
    BORDER,
    CenterPool,
    GLOBAL,
    LOCAL,
    OUT,
    PatchTriple,
    SamplingError,
    buildings_in_window,
    category_for_count,
    grid_centers,
    positive_centers,
    residential_category,
    sample_centers,
    sample_triples,
    to_nchw,
    triple_at,
    valid_centers,
    window,
)
