"""Joint panoptic-part fusion of semantic, instance and part predictions."""

from jppf.fusion import DenseLogits, FusionConfig, fuse_logits, jppf_pipeline, panoptic_fuse
from jppf.instances import InstancePrediction
from jppf.taxonomy import VOID, ClassTaxonomy, PanopticPartLabel, PanopticPartMap, load_taxonomy

__all__ = [
    "VOID",
    "ClassTaxonomy",
    "DenseLogits",
    "FusionConfig",
    "InstancePrediction",
    "PanopticPartLabel",
    "PanopticPartMap",
    "fuse_logits",
    "jppf_pipeline",
    "load_taxonomy",
    "panoptic_fuse",
]

__version__ = "0.1.0"
