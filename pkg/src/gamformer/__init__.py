"""In-context estimation of binned GAM shape functions."""

from .estimators import EBMLiteClassifier, GAMformerClassifier
from .shapes import ShapeModel

__version__ = "0.1.0"

__all__ = ["EBMLiteClassifier", "GAMformerClassifier", "ShapeModel"]
