from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, detach


@dataclass
class FilterState:
    """Fixed-size recurrent state carried between stream steps.

    ``h`` is the summary vector; ``z`` holds latent samples carried forward by
    models whose prediction conditions on the previous latent. Either may be a
    :class:`Tensor` (inside a training graph) or a plain array.
    """

    h: Tensor | np.ndarray | None
    z: Tensor | np.ndarray | None = None
    t: int = 0

    def detached(self) -> "FilterState":
        return replace(
            self,
            h=None if self.h is None else detach(self.h),
            z=None if self.z is None else detach(self.z),
        )

    def advance(self, h, z=None) -> "FilterState":
        return FilterState(h=h, z=z, t=self.t + 1)

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<q", self.t)]
        for arr in (self.h, self.z):
            if arr is None:
                parts.append(struct.pack("<q", -1))
                continue
            a = np.ascontiguousarray(arr.data if isinstance(arr, Tensor) else arr, dtype="<f8")
            parts.append(struct.pack("<q", a.ndim))
            parts.append(struct.pack(f"<{a.ndim}q", *a.shape))
            parts.append(a.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FilterState":
        off = 0
        (t,) = struct.unpack_from("<q", blob, off)
        off += 8
        arrays = []
        for _ in range(2):
            (ndim,) = struct.unpack_from("<q", blob, off)
            off += 8
            if ndim < 0:
                arrays.append(None)
                continue
            shape = struct.unpack_from(f"<{ndim}q", blob, off)
            off += 8 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).copy())
            off += 8 * n
        return cls(h=arrays[0], z=arrays[1], t=t)
