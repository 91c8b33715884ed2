"""Latents, task descriptions and token assembly for MIMO flow matching."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from ..erp import Modality
from ..errors import DataError

TAGS = frozenset({m.value for m in Modality} | {"generic", "ray"})


class Assembly(str, enum.Enum):
    """How condition and target streams are fed to the velocity model."""

    SHARED_BRANCH = "shared-branch"  # channel concatenation, one token stream
    SHARED_ADAPTER = "shared-token"  # token concatenation, one adapter
    SEPARATE_ADAPTER = "separate"  # token concatenation, one adapter per input slot


@dataclass(frozen=True)
class LatentGrid:
    """(H, W, C) latent raster with a modality tag."""

    data: np.ndarray
    tag: str = "generic"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise DataError(f"latent grid must be (H, W, C) with positive dims, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("latent grid contains non-finite values")
        tag = self.tag.value if isinstance(self.tag, enum.Enum) else str(self.tag)
        if tag not in TAGS:
            raise DataError(f"unknown modality tag {tag!r}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "tag", tag)

    @property
    def shape(self):
        return self.data.shape


def _grid(x):
    return x.data if isinstance(x, LatentGrid) else np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class TaskSpec:
    """Ordered conditions ``c0, c1, ...`` plus the target modalities.

    ``prompt`` is carried along untouched; perception tasks leave it empty.
    """

    conditions: tuple = ()
    targets: tuple = ("generic",)
    assembly: Assembly = Assembly.SEPARATE_ADAPTER
    prompt: str = ""

    def __post_init__(self):
        conds = tuple(c if isinstance(c, LatentGrid) else LatentGrid(*c) for c in self.conditions)
        targets = tuple(t.value if isinstance(t, enum.Enum) else str(t) for t in self.targets)
        if not targets:
            raise DataError("a task needs at least one target")
        for t in targets:
            if t not in TAGS:
                raise DataError(f"unknown target tag {t!r}")
        sizes = {c.shape[:2] for c in conds}
        if len(sizes) > 1:
            raise DataError(f"conditions are not spatially aligned: {sorted(sizes)}")
        object.__setattr__(self, "conditions", conds)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "assembly", Assembly(self.assembly))

    @property
    def n_streams(self) -> int:
        return len(self.conditions) + len(self.targets)

    def with_conditions(self, conditions) -> "TaskSpec":
        return replace(self, conditions=tuple(conditions))


# -- the three task settings -------------------------------------------------

def completion_task(masked_pano, mask, target="rgb", assembly=Assembly.SEPARATE_ADAPTER, prompt=""):
    """Generation / completion: c0 = masked panorama, c1 = its mask."""
    return TaskSpec((LatentGrid(masked_pano, "rgb"), LatentGrid(mask, "mask")), (target,), assembly, prompt)


def perception_task(rgb, target, camera_ray=None, assembly=Assembly.SEPARATE_ADAPTER):
    """RGB -> X: c0 = RGB reference, optional c1 = camera ray map; no prompt."""
    conds = [LatentGrid(rgb, "rgb")]
    if camera_ray is not None:
        conds.append(LatentGrid(camera_ray, "ray"))
    return TaskSpec(tuple(conds), (target,), assembly, "")


def guided_perception_task(rgb, masked_target, mask, target, assembly=Assembly.SEPARATE_ADAPTER):
    """Guided RGB -> X: c0 = RGB, c1 = masked target, c2 = mask; no prompt."""
    conds = (LatentGrid(rgb, "rgb"), LatentGrid(masked_target, target), LatentGrid(mask, "mask"))
    return TaskSpec(conds, (target,), assembly, "")


# -- flow primitives ---------------------------------------------------------

def interpolate(z0, z1, t):
    """Straight-line path ``(1 - t) z0 + t z1``."""
    a, b = _grid(z0), _grid(z1)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch {a.shape} vs {b.shape}")
    if not 0.0 <= t <= 1.0:
        raise DataError(f"t must lie in [0, 1], got {t}")
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()
    return (1.0 - t) * a + t * b


def velocity_target(z0, z1):
    a, b = _grid(z0), _grid(z1)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch {a.shape} vs {b.shape}")
    return b - a


@dataclass(frozen=True)
class TimestepSchedule:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1 or t.size < 2:
            raise DataError("schedule needs at least two time points")
        if t[0] != 0.0 or t[-1] != 1.0:
            raise DataError("schedule must start at 0 and end at 1")
        if np.any(np.diff(t) <= 0):
            raise DataError("schedule must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, steps: int) -> "TimestepSchedule":
        if steps < 1:
            raise DataError("need at least one step")
        t = np.arange(steps + 1, dtype=np.float64) / steps
        return cls(t)

    @property
    def steps(self) -> int:
        return self.times.size - 1


# -- token assembly ----------------------------------------------------------

def _pack(grid, width):
    c = grid.shape[2]
    if c == width:
        return grid
    if c == 1:
        return np.repeat(grid, width, axis=2)
    raise DataError(f"cannot pack a {c}-channel input to width {width}")


@dataclass
class TokenBatch:
    """Assembled model input.

    ``tokens`` (N, D), ``routes`` (N,) adapter ids, ``positions`` (N, 2)
    shared (row, col) ids and ``loss_mask`` (N,) selecting the rows whose
    outputs are target velocities.
    """

    tokens: np.ndarray
    routes: np.ndarray
    positions: np.ndarray
    loss_mask: np.ndarray
    mode: Assembly
    grid: tuple  # (H, W)
    width: int  # per-stream channel count after packing
    n_conditions: int
    n_targets: int

    @property
    def out_width(self) -> int:
        if self.mode is Assembly.SHARED_BRANCH:
            return self.width * self.n_targets
        return self.width

    @property
    def n_routes(self) -> int:
        return int(self.routes.max()) + 1

    def position_keys(self):
        return self.positions[:, 0] * self.grid[1] + self.positions[:, 1]

    def target_velocities(self, out):
        """Split model output (N, out_width) into per-target (H, W, C) grids."""
        h, w = self.grid
        c = self.width
        out = np.asarray(out)
        if self.mode is Assembly.SHARED_BRANCH:
            v = out.reshape(h, w, self.n_targets, c)
            return [v[:, :, k, :] for k in range(self.n_targets)]
        v = out[self.loss_mask].reshape(self.n_targets, h, w, c)
        return [v[k] for k in range(self.n_targets)]

    def pack_targets(self, values):
        """Inverse of :meth:`target_velocities`: per-target grids -> (N, out_width)."""
        h, w = self.grid
        if self.mode is Assembly.SHARED_BRANCH:
            return np.concatenate([np.asarray(v).reshape(h * w, -1) for v in values], axis=1)
        out = np.zeros((self.tokens.shape[0], self.width))
        out[self.loss_mask] = np.concatenate([np.asarray(v).reshape(h * w, -1) for v in values])
        return out

    def stream_grids(self):
        """Per-stream (H, W, width) inputs (conditions first), token modes only."""
        h, w = self.grid
        if self.mode is Assembly.SHARED_BRANCH:
            n = self.n_conditions + self.n_targets
            g = self.tokens.reshape(h, w, n, self.width)
            return [g[:, :, k, :] for k in range(n)]
        n = self.n_conditions + self.n_targets
        return list(self.tokens.reshape(n, h, w, self.width))


def assemble_tokens(spec: TaskSpec, zt) -> TokenBatch:
    """Lay out conditions and noisy targets for the velocity model.

    Shared-branch concatenates all inputs along channels into one stream.
    The token modes concatenate streams along the token axis; every stream
    reuses the same 2D position ids. Shared-adapter tags every token with
    route 0, separate-adapter gives each input slot its own route.
    """
    zt = [_grid(z) for z in (zt if isinstance(zt, (list, tuple)) else [zt])]
    if len(zt) != len(spec.targets):
        raise DataError(f"expected {len(spec.targets)} target latents, got {len(zt)}")
    h, w = zt[0].shape[:2]
    width = zt[0].shape[2]
    for z in zt:
        if z.shape != (h, w, width):
            raise DataError("target latents must share one shape")
    for c in spec.conditions:
        if c.shape[:2] != (h, w):
            raise DataError(f"condition grid {c.shape[:2]} not aligned with targets {(h, w)}")
    try:
        streams = [_pack(c.data, width) for c in spec.conditions] + zt
    except DataError as exc:
        raise DataError(f"{spec.assembly.value}: heterogeneous channel counts after packing ({exc})") from None
    nc, nt = len(spec.conditions), len(zt)
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    grid_pos = np.stack([jj.ravel(), ii.ravel()], axis=1)
    if spec.assembly is Assembly.SHARED_BRANCH:
        tokens = np.concatenate([s.reshape(h * w, width) for s in streams], axis=1)
        routes = np.zeros(h * w, dtype=np.int64)
        positions = grid_pos
        loss_mask = np.ones(h * w, dtype=bool)
    else:
        tokens = np.concatenate([s.reshape(h * w, width) for s in streams], axis=0)
        stream_id = np.repeat(np.arange(nc + nt), h * w)
        if spec.assembly is Assembly.SHARED_ADAPTER:
            routes = np.zeros_like(stream_id)
        else:
            routes = stream_id
        positions = np.tile(grid_pos, (nc + nt, 1))
        loss_mask = stream_id >= nc
    return TokenBatch(tokens, routes, positions, loss_mask, spec.assembly, (h, w), width, nc, nt)


def n_routes_for(spec: TaskSpec) -> int:
    if spec.assembly is Assembly.SEPARATE_ADAPTER:
        return spec.n_streams
    return 1


@dataclass
class FlowState:
    """Noise ``z0``, data ``z1`` and the interpolant ``zt`` per target."""

    z0: list
    z1: list
    t: float
    zt: list = field(default=None)
    loss_mask: np.ndarray = field(default=None)

    @classmethod
    def create(cls, z0, z1, t, spec: TaskSpec) -> "FlowState":
        z0 = [_grid(z) for z in (z0 if isinstance(z0, (list, tuple)) else [z0])]
        z1 = [_grid(z) for z in (z1 if isinstance(z1, (list, tuple)) else [z1])]
        if len(z0) != len(z1):
            raise DataError("z0 and z1 must list the same targets")
        zt = [interpolate(a, b, t) for a, b in zip(z0, z1)]
        mask = assemble_tokens(spec, zt).loss_mask
        return cls(z0, z1, float(t), zt, mask)

    def velocities(self):
        return [velocity_target(a, b) for a, b in zip(self.z0, self.z1)]
