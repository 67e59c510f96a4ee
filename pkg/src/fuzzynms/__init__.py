"""Fuzzy-NMS: density and volume aware non-maximum suppression for 3D detection."""

__version__ = "0.1.0"

from .clustering import ClusterAssignment, DbscanParams, dbscan, estimate
from .config import ToolkitConfig, load_config
from .fuzzy import BoxCategory, Category, FuzzySystem, TriangularMF, classify, infer, mf_eval
from .geometry import Box3D, Frame, iou, iou_3d, iou_bev
from .nms import NmsConfig, NmsResult, diou_nms, fuzzy_nms, soft_nms, traditional_nms

__all__ = [
    "Box3D", "BoxCategory", "Category", "ClusterAssignment", "DbscanParams", "Frame",
    "FuzzySystem", "NmsConfig", "NmsResult", "ToolkitConfig", "TriangularMF",
    "classify", "dbscan", "diou_nms", "estimate", "fuzzy_nms", "infer", "iou", "iou_3d",
    "iou_bev", "load_config", "mf_eval", "soft_nms", "traditional_nms",
]
