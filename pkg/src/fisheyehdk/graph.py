"""Pixel grid graphs and the resampling layers around the HDK network."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import autograd as ad


@dataclass(frozen=True)
class GridGraph:
    """Regular grid over ``height x width`` pixels, nodes numbered row-major.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``;
    the symmetric adjacency is derived from it on demand.
    """

    height: int
    width: int
    connectivity: int
    edges: np.ndarray = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.height * self.width

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_nodes)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric binary adjacency as a sparse ``N x N`` matrix."""
        n = self.num_nodes
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        return sp.csr_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(n, n))

    def propagation(self, normalize: bool = True) -> sp.csr_matrix:
        """``A + I``, optionally row-normalised by ``1 + deg``."""
        m = self.adjacency() + sp.identity(self.num_nodes, format="csr")
        if normalize:
            m = sp.diags(1.0 / (1.0 + self.degree())) @ m
        return m.tocsr()


def build_grid_graph(height: int, width: int, connectivity: int = 4) -> GridGraph:
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be positive")
    return _cached_grid(int(height), int(width), int(connectivity))


@lru_cache(maxsize=64)
def _cached_grid(height, width, connectivity):
    idx = np.arange(height * width).reshape(height, width)
    pairs = [
        np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1),
        np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1),
    ]
    if connectivity == 8:
        pairs.append(np.stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()], axis=1))
        pairs.append(np.stack([idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()], axis=1))
    edges = np.concatenate(pairs, axis=0)
    edges = np.sort(edges, axis=1)
    edges.setflags(write=False)
    return GridGraph(height, width, connectivity, edges)


def downsample_avg(f, m: int = 2):
    """Average-pool ``[B, C, H, W]`` by ``2**m`` in both spatial directions."""
    x = ad.as_array(f)
    if m < 0:
        raise ValueError("m must be non-negative")
    if m == 0:
        return f
    k = 2**m
    B, C, H, W = x.shape
    if H % k or W % k:
        raise ValueError(f"spatial dims {(H, W)} are not divisible by {k}")
    out = x.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5))

    def back(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return ad.wrap(out, (f,), back)


def flatten_to_nodes(f):
    """``[B, C, H, W]`` -> ``[B, H*W, C]``; node ``i`` is pixel ``(i // W, i % W)``."""
    B, C, H, W = ad.as_array(f).shape
    return f.transpose(0, 2, 3, 1).reshape(B, H * W, C)


def unflatten_nodes(x, height: int, width: int):
    """Inverse of :func:`flatten_to_nodes`."""
    B, N, C = ad.as_array(x).shape
    if N != height * width:
        raise ValueError(f"{N} nodes cannot fill a {height}x{width} grid")
    return x.reshape(B, height, width, C).transpose(0, 3, 1, 2)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned linear interpolation weights, shape ``[n_out, n_in]``."""
    M = np.zeros((n_out, n_in))
    if n_in == 1:
        M[:, 0] = 1.0
        return M
    if n_out == 1:
        M[0, 0] = 1.0
        return M
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    M[rows, lo] = 1.0 - frac
    M[rows, lo + 1] += frac
    return M


def upsample_bilinear(f, out_h: int, out_w: int):
    """Bilinear resize with the corner samples of input and output aligned."""
    x = ad.as_array(f)
    B, C, H, W = x.shape
    if out_h < H or out_w < W:
        raise ValueError("upsample_bilinear only enlarges")
    if (out_h, out_w) == (H, W):
        return f
    Uy = _interp_matrix(H, out_h)
    Ux = _interp_matrix(W, out_w)
    out = np.einsum("yh,bchw,xw->bcyx", Uy, x, Ux, optimize=True)

    def back(g):
        return (np.einsum("yh,bcyx,xw->bchw", Uy, g, Ux, optimize=True),)

    return ad.wrap(out, (f,), back)


def aggregate_neighbors(node_feats, g: GridGraph, normalize: bool = True):
    """Sum each node's features with its neighbours', ``(A + I) X`` per batch item.

    With ``normalize`` the sum is divided by ``1 + deg(i)``.
    """
    x = ad.as_array(node_feats)
    if x.ndim != 3 or x.shape[1] != g.num_nodes:
        raise ValueError(f"expected [B, {g.num_nodes}, d] node features, got {x.shape}")
    P = g.propagation(normalize)
    B, N, d = x.shape
    flat = x.transpose(1, 0, 2).reshape(N, B * d)
    out = (P @ flat).reshape(N, B, d).transpose(1, 0, 2)
    PT = P.T.tocsr()

    def back(gr):
        gf = gr.transpose(1, 0, 2).reshape(N, B * d)
        return ((PT @ gf).reshape(N, B, d).transpose(1, 0, 2),)

    return ad.wrap(out, (node_feats,), back)
