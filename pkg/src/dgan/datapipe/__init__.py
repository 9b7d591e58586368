from .augment import linear_augment, shift_rotate
from .manifest import (ManifestError, ManifestRecord, PairList, TrainingPair, build_pairs, load_manifest,
                       read_png, write_manifest, write_png)
from .synthetic import (Identity, SyntheticFaceSpec, SyntheticOracle, gen_synthetic_dataset, measure_geometry,
                        render_geometry, render_synthetic_face)

__all__ = [
    "linear_augment", "shift_rotate", "ManifestError", "ManifestRecord", "PairList", "TrainingPair",
    "build_pairs", "load_manifest", "read_png", "write_manifest", "write_png", "Identity",
    "SyntheticFaceSpec", "SyntheticOracle", "gen_synthetic_dataset", "measure_geometry",
    "render_geometry", "render_synthetic_face",
]
