"""Cell orderings and locally masked convolutions over a (time x entity) grid.

An :class:`Ordering` assigns every cell of a ``U x N`` grid a unique rank.
:func:`build_mask_set` compiles it into one binary ``k x k`` kernel mask per
output cell, and :func:`lmconv` applies a convolution whose kernel is
multiplied by the mask of the cell being computed. Stacking one exclusive
layer with any number of inclusive layers keeps every output cell a function
of strictly lower-ranked input cells only.
"""
import functools
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from ..utils.errors import ShapeError

ORDERINGS = ('time_major_s_curve', 'entity_major_s_curve')


@dataclass(frozen=True)
class Ordering:
    """Visit order of the cells of a ``U x N`` grid.

    Attributes:
        kind: Name of the scheme that produced the ordering.
        rank: Integer array of shape (U, N); a bijection onto [0, U*N).
    """
    kind: str
    rank: np.ndarray

    @property
    def grid(self) -> Tuple[int, int]:
        return tuple(self.rank.shape)

    def __post_init__(self):
        if self.rank.ndim != 2:
            raise ShapeError(f'rank must be 2-d, got shape {self.rank.shape}')
        expected = np.arange(self.rank.size)
        if not np.array_equal(np.sort(self.rank, axis=None), expected):
            raise ValueError('rank is not a bijection onto [0, U*N)')


@dataclass(frozen=True)
class LocalMaskSet:
    """Per-cell kernel masks compiled from an :class:`Ordering`.

    Attributes:
        ordering: The ordering the masks respect.
        kernel: Odd kernel size k.
        dilation: Dilation of the kernel offsets.
        inclusive: Whether a cell may see itself.
        masks: Binary array of shape (U, N, k, k).
    """
    ordering: Ordering
    kernel: int
    dilation: int
    inclusive: bool
    masks: np.ndarray

    @property
    def grid(self) -> Tuple[int, int]:
        return self.ordering.grid

    def as_tensor(self,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Masks laid out as (k*k, U*N) to match ``F.unfold`` patches."""
        masks = rearrange(self.masks, 'h w kh kw -> (kh kw) (h w)')
        return torch.from_numpy(np.ascontiguousarray(masks)).to(dtype)


def generate_ordering(kind: str, U: int, N: int) -> Ordering:
    """Build one of the zig-zag orderings.

    ``time_major_s_curve`` walks the frames in order, scanning entities
    left-to-right on even frames and right-to-left on odd frames.
    ``entity_major_s_curve`` walks the entities in order, scanning time
    forward on even entities and backward on odd entities.
    """
    if U < 1 or N < 1:
        raise ShapeError(f'grid must be at least 1x1, got {U}x{N}')
    rank = np.empty((U, N), dtype=np.int64)
    counter = 0
    if kind == 'time_major_s_curve':
        for t in range(U):
            cols = range(N) if t % 2 == 0 else range(N - 1, -1, -1)
            for n in cols:
                rank[t, n] = counter
                counter += 1
    elif kind == 'entity_major_s_curve':
        for n in range(N):
            rows = range(U) if n % 2 == 0 else range(U - 1, -1, -1)
            for t in rows:
                rank[t, n] = counter
                counter += 1
    else:
        raise ValueError(f'unknown ordering {kind!r}; choose from {ORDERINGS}')
    return Ordering(kind=kind, rank=rank)


def build_mask_set(ordering: Ordering,
                   k: int = 3,
                   dilation: int = 1,
                   inclusive: bool = False) -> LocalMaskSet:
    """Compile per-cell kernel masks.

    ``masks[i, j, a, b]`` is 1 when the cell reached from ``(i, j)`` by the
    dilated offset ``(a - k//2, b - k//2)`` lies inside the grid and has a
    lower rank (or equal rank when ``inclusive``).
    """
    if k % 2 == 0 or k < 1:
        raise ShapeError(f'kernel size must be odd, got {k}')
    if dilation < 1:
        raise ShapeError(f'dilation must be >= 1, got {dilation}')
    rank = ordering.rank
    U, N = rank.shape
    r = k // 2
    masks = np.zeros((U, N, k, k), dtype=np.uint8)
    for i in range(U):
        for j in range(N):
            for a in range(k):
                for b in range(k):
                    ni = i + (a - r) * dilation
                    nj = j + (b - r) * dilation
                    if not (0 <= ni < U and 0 <= nj < N):
                        continue
                    if inclusive:
                        visible = rank[ni, nj] <= rank[i, j]
                    else:
                        visible = rank[ni, nj] < rank[i, j]
                    masks[i, j, a, b] = visible
    masks.setflags(write=False)
    return LocalMaskSet(ordering, k, dilation, inclusive, masks)


@functools.lru_cache(maxsize=None)
def cached_mask_set(kind: str, U: int, N: int, k: int, dilation: int,
                    inclusive: bool) -> LocalMaskSet:
    """Mask sets are pure data; compile each configuration once."""
    return build_mask_set(generate_ordering(kind, U, N), k, dilation,
                          inclusive)


def lmconv(input: torch.Tensor,
           weight: torch.Tensor,
           bias: Optional[torch.Tensor],
           maskset: LocalMaskSet,
           mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Locally masked convolution.

    Args:
        input: Tensor of shape (B, C_in, U, N).
        weight: Tensor of shape (C_out, C_in, k, k).
        bias: Optional tensor of shape (C_out,).
        maskset: Masks whose grid matches (U, N).
        mask: Optional precomputed ``maskset.as_tensor()``.

    Returns:
        Tensor of shape (B, C_out, U, N).
    """
    B, C, U, N = input.shape
    if (U, N) != maskset.grid:
        raise ShapeError(f'input grid {(U, N)} does not match mask grid '
                         f'{maskset.grid}')
    c_out, c_in, k, _ = weight.shape
    if c_in != C or k != maskset.kernel:
        raise ShapeError(f'weight {tuple(weight.shape)} incompatible with '
                         f'{C} input channels and kernel {maskset.kernel}')
    if mask is None:
        mask = maskset.as_tensor(input.dtype)
    mask = mask.to(device=input.device, dtype=input.dtype)
    d = maskset.dilation
    patches = F.unfold(input, k, dilation=d, padding=d * (k // 2))
    patches = patches.view(B, C, k * k, U * N) * mask
    out = torch.einsum('ock,bckl->bol', weight.reshape(c_out, C, k * k),
                       patches)
    if bias is not None:
        out = out + bias.view(1, c_out, 1)
    return out.view(B, c_out, U, N)


class LocallyMaskedConv2d(nn.Conv2d):
    """A Conv2d whose kernel is masked per output location.

    Autoregressive masking means the output at cell i only depends on input
    cells ranked before i (exclusive masks) or at most i (inclusive masks)
    under the given ordering. Masks are buffers, not parameters.

    Args:
        in_channels: Input channels.
        out_channels: Output channels.
        ordering: Ordering kind, one of :data:`ORDERINGS`.
        grid: (U, N) grid the layer will be applied to.
        kernel_size: Odd kernel size.
        dilation: Kernel dilation.
        inclusive: Whether the centre cell is visible.
    """
    def __init__(self,
                 in_channels: int,
                 out_channels: int,
                 ordering: str,
                 grid: Tuple[int, int],
                 kernel_size: int = 3,
                 dilation: int = 1,
                 inclusive: bool = True):
        super().__init__(in_channels,
                         out_channels,
                         kernel_size,
                         dilation=dilation,
                         padding=dilation * (kernel_size // 2))
        self.maskset = cached_mask_set(ordering, grid[0], grid[1],
                                       kernel_size, dilation, inclusive)
        self.register_buffer('mask', self.maskset.as_tensor(), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return lmconv(x, self.weight, self.bias, self.maskset, self.mask)
