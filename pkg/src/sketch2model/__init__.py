"""sketch2model: regression networks mapping sketch-domain inputs to photo classifiers."""

from sketch2model.core import RandomStream, ShapeError, matmul

__version__ = "0.1.0"

__all__ = ["RandomStream", "ShapeError", "matmul", "__version__"]
