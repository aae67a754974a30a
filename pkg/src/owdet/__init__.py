"""Class-agnostic open-world detection tooling.

Box geometry, COCO split handling, pseudo-label pool construction,
modality ensembling, loss/target math and open-world Average Recall.
"""

from owdet.geometry import BBox, SizeClass, area, iou, size_class

__version__ = "0.1.0"

__all__ = ["BBox", "SizeClass", "area", "iou", "size_class", "__version__"]
