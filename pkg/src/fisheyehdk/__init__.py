"""Hyperbolic deformable kernels on the Poincare ball for fisheye image segmentation."""

from .dconv import conv2d, deform_conv2d, rdc_conv2d
from .fisheye import FisheyeProfile, FisheyeWarper, LabeledImage, rectify, warp_to_fisheye
from .gyro import PoincareBall
from .hdk import HDKOffsetPredictor, HdkParams, hdk_forward, init_hdk_params

__version__ = "0.1.0"

__all__ = [
    "FisheyeProfile", "FisheyeWarper", "HDKOffsetPredictor", "HdkParams", "LabeledImage",
    "PoincareBall", "conv2d", "deform_conv2d", "hdk_forward", "init_hdk_params", "rdc_conv2d",
    "rectify", "warp_to_fisheye",
]
