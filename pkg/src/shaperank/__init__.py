"""shaperank: a perceptual aesthetics score for 3D shapes, learned from
pairwise human preferences over voxelized geometry."""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
