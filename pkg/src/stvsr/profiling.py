"""Peak live-tensor memory of an inference run.

Every tensor produced by an operator while the tracker is active is charged
to its storage; a storage is released when the last tracked tensor object
referring to it is garbage collected. Counting by storage keeps views free
and makes the measurement deterministic on CPU, independent of allocator
caching.
"""

import weakref
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch.utils._python_dispatch import TorchDispatchMode
from torch.utils._pytree import tree_flatten


class MemoryTracker(TorchDispatchMode):
    def __init__(self):
        super().__init__()
        self.live = {}
        self.refs = {}
        self.current = 0
        self.peak = 0

    def _release(self, key):
        self.refs[key] -= 1
        if self.refs[key] == 0:
            self.current -= self.live.pop(key)
            del self.refs[key]

    def _track(self, t):
        storage = t.untyped_storage()
        key = storage.data_ptr()
        if key == 0:
            return
        if key not in self.live:
            self.live[key] = storage.nbytes()
            self.refs[key] = 0
            self.current += storage.nbytes()
            self.peak = max(self.peak, self.current)
        self.refs[key] += 1
        weakref.finalize(t, self._release, key)

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        for t in tree_flatten(out)[0]:
            if isinstance(t, torch.Tensor):
                self._track(t)
        return out


@dataclass
class MemoryRecord:
    n_frames: int
    scale_h: float
    scale_w: float
    rate: int
    height: int
    width: int
    n_outputs: int
    peak_bytes: int

    @property
    def peak_mb(self):
        return self.peak_bytes / 2**20

    def as_dict(self):
        return {**asdict(self), "peak_mb": self.peak_mb}


def profile_memory(n_frames=4, scale=4.0, scale_w=None, rate=2, size=64, estimator=None, seed=0):
    """Peak live-tensor bytes while upscaling a random ``n_frames`` sequence.

    Output frames are copied to host arrays and dropped as they are produced,
    so the record reflects the working set of the network, not the result.
    """
    from .estimator import SpaceTimeSR

    scale_w = scale if scale_w is None else scale_w
    if estimator is None:
        estimator = SpaceTimeSR(seed=seed).init_model()
    h, w = (size, size) if np.isscalar(size) else size
    rng = np.random.default_rng(seed)
    frames = rng.random((n_frames, 3, h, w), dtype=np.float32)
    tracker = MemoryTracker()
    n_out = 0
    with tracker:
        for _ in estimator.iter_predict(frames, rate, scale, scale_w):
            n_out += 1
    return MemoryRecord(n_frames, float(scale), float(scale_w), rate, h, w, n_out, tracker.peak)
