"""plancad: vector floor-plan annotation engine and panoptic symbol-spotting
evaluation toolkit."""

__version__ = "0.1.0"

from . import (annotator, chunker, evaluate, geometry, ingest, metrics,
               modelprep, screening, synthgen)

__all__ = [
    "annotator", "chunker", "evaluate", "geometry", "ingest", "metrics",
    "modelprep", "screening", "synthgen", "__version__",
]
