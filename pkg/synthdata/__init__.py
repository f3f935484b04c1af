from .scene import GroundTruth, Palette, SceneSpec, tight_box
from .render import generate_pseudo_cd20, generate_pseudo_he
from .corpus import derive_seed, generate_corpus, generate_scenes

__all__ = [
    "GroundTruth",
    "Palette",
    "SceneSpec",
    "tight_box",
    "generate_pseudo_cd20",
    "generate_pseudo_he",
    "derive_seed",
    "generate_corpus",
    "generate_scenes",
]
