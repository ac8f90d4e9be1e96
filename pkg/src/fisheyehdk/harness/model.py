"""Small fully convolutional segmenter with optional deformable layers."""

from __future__ import annotations

import numpy as np

from .. import autograd as ad
from ..dconv import center_tap_mask, conv2d, deform_conv2d, rdc_conv2d
from ..hdk import HdkParams, hdk_forward, init_hdk_params
from ..validation import check_kernel_size

MODES = ("none", "rdc", "hdk")


class NumericalError(FloatingPointError):
    """Raised when training produces a non-finite value."""


class ToyModel:
    """Stack of ``conv -> relu`` blocks and a 1x1 classifier head.

    Blocks listed in ``deformable_layers`` get an offset predictor: an HDK
    network (``mode="hdk"``) or a zero-initialised convolution whose centre
    tap stays fixed (``mode="rdc"``).  Parameters live in ``self.params`` as
    float64 arrays keyed by name and are updated in place by the optimisers.
    """

    def __init__(self, in_channels, num_classes, channels=(16, 16, 16), kernel_size=3, mode="none",
                 deformable_layers=(0,), curvature=1.0, m=2, connectivity=4, hdk_init="xavier",
                 rsgd_weights=True, seed=0):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.kernel_size = check_kernel_size(kernel_size)
        self.channels = tuple(int(c) for c in channels)
        if not self.channels:
            raise ValueError("at least one conv block is required")
        self.mode = mode
        self.deformable_layers = tuple(sorted(set(int(i) for i in deformable_layers))) if mode != "none" else ()
        for i in self.deformable_layers:
            if not 0 <= i < len(self.channels):
                raise ValueError(f"deformable layer index {i} outside 0..{len(self.channels) - 1}")
        if hdk_init not in ("xavier", "zeros"):
            raise ValueError(f"unknown hdk_init {hdk_init!r}")
        self.in_channels = int(in_channels)
        self.num_classes = int(num_classes)
        self.curvature = float(curvature)
        self.m = int(m)
        self.connectivity = connectivity
        self.rsgd_weights = bool(rsgd_weights)

        conv_ss, offset_ss = np.random.SeedSequence(seed).spawn(2)
        conv_rng = np.random.default_rng(conv_ss)
        offset_rng = np.random.default_rng(offset_ss)
        kh, kw = self.kernel_size
        T = kh * kw
        self.params = {}
        self.groups = {"encoder": [], "decoder": [], "hyperbolic": []}
        c_in = self.in_channels
        for i, c_out in enumerate(self.channels):
            std = np.sqrt(2.0 / (c_in * T))
            self._add(f"conv{i}.weight", conv_rng.normal(0.0, std, size=(c_out, c_in, kh, kw)), "encoder")
            self._add(f"conv{i}.bias", np.zeros(c_out), "encoder")
            if i in self.deformable_layers:
                if mode == "hdk":
                    radius = 0.5 / np.sqrt(self.curvature) if self.rsgd_weights else None
                    hp = init_hdk_params(c_in, self.kernel_size, self.curvature, self.m, offset_rng,
                                         weight_radius=radius)
                    weight = np.zeros_like(hp.weight) if hdk_init == "zeros" else hp.weight
                    self._add(f"hdk{i}.weight", weight, "hyperbolic" if self.rsgd_weights else "encoder")
                    self._add(f"hdk{i}.bias", hp.bias, "hyperbolic")
                else:
                    self._add(f"offset{i}.weight", np.zeros((2 * T, c_in, kh, kw)), "encoder")
                    self._add(f"offset{i}.bias", np.zeros(2 * T), "encoder")
            c_in = c_out
        self._add("head.weight", np.zeros((self.num_classes, c_in, 1, 1)), "decoder")
        self._add("head.bias", np.zeros(self.num_classes), "decoder")

    def _add(self, name, value, group):
        self.params[name] = np.ascontiguousarray(value, dtype=np.float64)
        self.groups[group].append(name)

    @property
    def padding(self):
        return (self.kernel_size[0] - 1) // 2

    def _hdk_params(self, i, tensors):
        return HdkParams(tensors[f"hdk{i}.weight"], tensors[f"hdk{i}.bias"], c=self.curvature,
                         kernel_size=self.kernel_size, m=self.m, connectivity=self.connectivity)

    def offsets(self, i, h, tensors):
        """Offset field predicted for block ``i`` from its input ``h``."""
        if self.mode == "hdk":
            return hdk_forward(h, self._hdk_params(i, tensors))
        return conv2d(h, tensors[f"offset{i}.weight"], tensors[f"offset{i}.bias"], padding=self.padding)

    def forward(self, x, trainable=(), return_fields=False):
        """Logits ``[B, K, H, W]``; names in ``trainable`` are recorded for backward."""
        tensors = {
            name: ad.Tensor(value, requires_grad=True, name=name) if name in trainable else value
            for name, value in self.params.items()
        }
        fields = {}
        h = x
        for i in range(len(self.channels)):
            w, b = tensors[f"conv{i}.weight"], tensors[f"conv{i}.bias"]
            if i in self.deformable_layers:
                field = self.offsets(i, h, tensors)
                fields[i] = field
                if self.mode == "rdc":
                    h = rdc_conv2d(h, field, w, b, padding=self.padding)
                else:
                    h = deform_conv2d(h, field, w, b, padding=self.padding)
            else:
                h = conv2d(h, w, b, padding=self.padding)
            h = ad.relu(h)
        logits = conv2d(h, tensors["head.weight"], tensors["head.bias"])
        if return_fields:
            return logits, tensors, fields
        return logits, tensors

    def kernel_field(self, x, layer=None):
        """Offset field of a deformable block (the first one by default)."""
        if not self.deformable_layers:
            raise ValueError("model has no deformable layers")
        layer = self.deformable_layers[0] if layer is None else layer
        if layer not in self.deformable_layers:
            raise ValueError(f"block {layer} is not deformable")
        _, _, fields = self.forward(x, return_fields=True)
        field = ad.as_array(fields[layer])
        if self.mode == "rdc":
            field = field * center_tap_mask(self.kernel_size)[None, :, None, None]
        return field
