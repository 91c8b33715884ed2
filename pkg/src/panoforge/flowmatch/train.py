"""Flow-matching loss, Euler sampling and a numpy AdamW loop for toy models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericalError
from .core import (Assembly, FlowState, LatentGrid, TaskSpec, TimestepSchedule, _grid,
                   assemble_tokens)
from .models import TrainableModel, VelocityModel


def _as_list(z):
    return [_grid(x) for x in (z if isinstance(z, (list, tuple)) else [z])]


def fm_loss(model: VelocityModel, state: FlowState, spec: TaskSpec) -> float:
    """Mean squared velocity error over all target tokens and channels jointly.

    Outputs on condition tokens never enter the loss.
    """
    batch = assemble_tokens(spec, state.zt)
    pred = batch.target_velocities(model.predict(batch, state.t))
    diffs = [p - v for p, v in zip(pred, state.velocities())]
    n = sum(d.size for d in diffs)
    return float(sum(np.sum(d * d) for d in diffs) / n)


def fm_loss_and_grad(model: TrainableModel, state: FlowState, spec: TaskSpec):
    batch = assemble_tokens(spec, state.zt)
    out, cache = model.forward(batch, state.t)
    v = batch.pack_targets(state.velocities())
    rows = np.ones(len(out), bool) if batch.mode is Assembly.SHARED_BRANCH else batch.loss_mask
    diff = np.where(rows[:, None], out - v, 0.0)
    n = int(rows.sum()) * out.shape[1]
    loss = float(np.sum(diff * diff) / n)
    grads = model.backward(cache, 2.0 * diff / n)
    return loss, grads


def euler_integrate(model: VelocityModel, z0, spec: TaskSpec, schedule: TimestepSchedule,
                    seam_roll=None):
    """Integrate ``dz/dt = f(z, c, t)`` from ``z0`` with explicit Euler steps.

    ``seam_roll`` is a seed (or Generator); when set, every step circularly
    shifts all grids by a random column offset before the model call and
    shifts the velocity back afterwards, so no column stays at the seam.
    """
    z = [g.copy() for g in _as_list(z0)]
    conds = [c.data for c in spec.conditions]
    rng = None if seam_roll is None else np.random.default_rng(seam_roll)
    times = schedule.times
    w = z[0].shape[1]
    for k in range(schedule.steps):
        t, dt = times[k], times[k + 1] - times[k]
        s = int(rng.integers(w)) if rng is not None else 0
        if s:
            rolled = spec.with_conditions(
                LatentGrid(np.roll(c, s, axis=1), g.tag) for c, g in zip(conds, spec.conditions))
            batch = assemble_tokens(rolled, [np.roll(g, s, axis=1) for g in z])
        else:
            batch = assemble_tokens(spec, z)
        vel = batch.target_velocities(model.predict(batch, t))
        for j, v in enumerate(vel):
            z[j] = z[j] + dt * (np.roll(v, -s, axis=1) if s else v)
        if not all(np.all(np.isfinite(g)) for g in z):
            raise NumericalError(f"integration produced non-finite values at step {k} (t={t:.4g})")
    return z if len(z) > 1 else z[0]


# -- optimisation ------------------------------------------------------------

@dataclass
class AdamW:
    lr: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict, names):
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k in sorted(names):
            g = grads[k]
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            p = params[k] * (1.0 - self.lr * self.weight_decay)
            params[k] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainSettings:
    steps: int = 2000
    lr: float = 1e-2
    weight_decay: float = 0.01
    batch_size: int = 4
    seed: int = 0


@dataclass
class TrainResult:
    model: TrainableModel
    losses: np.ndarray


def train_toy(model: TrainableModel, dataset, spec: TaskSpec, settings: TrainSettings = None) -> TrainResult:
    """Fit ``model`` with AdamW on uniformly sampled ``t``.

    ``dataset`` is a sequence of ``(z0, z1, conditions)``; ``conditions`` may
    be None to reuse those of ``spec``.
    """
    settings = settings or TrainSettings()
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    rng = np.random.default_rng(settings.seed)
    opt = AdamW(lr=settings.lr, weight_decay=settings.weight_decay)
    names = sorted(model.trainable)
    losses = np.empty(settings.steps)
    for step in range(settings.steps):
        picks = rng.integers(len(dataset), size=settings.batch_size)
        ts = rng.random(settings.batch_size)
        total = {k: np.zeros_like(model.params[k]) for k in names}
        loss = 0.0
        for i, t in zip(picks, ts):
            z0, z1, conds = dataset[i]
            s = spec if conds is None else spec.with_conditions(conds)
            state = FlowState.create(z0, z1, t, s)
            with np.errstate(over="ignore", invalid="ignore"):
                li, g = fm_loss_and_grad(model, state, s)
            loss += li
            for k in names:
                total[k] += g[k]
        loss /= settings.batch_size
        if not np.isfinite(loss):
            raise NumericalError(f"training diverged at step {step} (loss={loss}); lower the learning rate")
        losses[step] = loss
        with np.errstate(over="ignore", invalid="ignore"):
            opt.step(model.params, {k: g / settings.batch_size for k, g in total.items()}, names)
    return TrainResult(model, losses)


# -- the Gaussian-shift toy task ---------------------------------------------

def gaussian_shift_dataset(n=32, grid=(4, 8), mu=(0.7, -0.3), seed=0):
    """Deterministic pairs ``z1 = z0 + mu`` with a constant one-channel condition.

    Returns ``(samples, condition)``; the exact velocity is ``mu`` everywhere.
    """
    rng = np.random.default_rng(seed)
    mu = np.asarray(mu, dtype=np.float64)
    h, w = grid
    cond = LatentGrid(np.ones((h, w, 1)), "mask")
    samples = []
    for _ in range(n):
        z0 = rng.standard_normal((h, w, mu.size))
        samples.append((z0, z0 + mu, None))
    return samples, cond


def transport_error(model: VelocityModel, dataset, spec: TaskSpec, steps=20, seam_roll=None) -> float:
    """Mean per-token Euclidean distance between integrated ``z0`` and ``z1``."""
    sched = TimestepSchedule.uniform(steps)
    errs = []
    for z0, z1, conds in dataset:
        s = spec if conds is None else spec.with_conditions(conds)
        zh = _as_list(euler_integrate(model, z0, s, sched, seam_roll))
        for a, b in zip(zh, _as_list(z1)):
            errs.append(np.linalg.norm(a - b, axis=-1).ravel())
    return float(np.mean(np.concatenate(errs)))
