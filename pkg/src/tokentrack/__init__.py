"""Token-based video object detection at desk scale.

Tracklets become sequences of discrete tokens, a miniature encoder-decoder
transformer learns to emit them autoregressively from temporal windows of
frames, and overlapping-window outputs are merged by non-maximum suppression
and scored with recall-precision metrics.  A synthetic moving-shapes dataset
makes the whole pipeline trainable without external data.
"""

from . import codec, merge_eval, model, pipeline, synth, windows

__version__ = "0.1.0"

__all__ = ["codec", "merge_eval", "model", "pipeline", "synth", "windows", "__version__"]
