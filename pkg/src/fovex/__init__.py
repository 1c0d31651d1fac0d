"""Field-of-view extrapolation on procedural indoor scenes.

The package builds a full desk-scale pipeline: a procedural scene with an
exact ray-cast renderer, a voxel radiance field fitted to posed views, dense
pose sampling, generation of narrow/wide training pairs, a scene-specific
convolutional outpainter, classical baselines, and image-quality evaluation.
"""

__version__ = "0.1.0"
