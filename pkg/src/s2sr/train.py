"""Patch sampling, L1 objective, Nadam optimizer, plateau schedule and the epoch loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvariantViolation, NonFiniteLoss, PatchTooLarge, ShapeMismatch, TooFewPatches
from .network import (
    NetworkConfig,
    NetworkWeights,
    backward,
    forward,
    init_he_uniform,
)
from .scene import BANDS_B, BANDS_C, MultiResScene, band_stack

log = logging.getLogger(__name__)


@dataclass
class PatchSet:
    """Co-located crops; arrays are ``(N, h, w, bands)`` float32 in reflectance units."""

    inputs_a: np.ndarray
    inputs_b: np.ndarray
    targets: np.ndarray
    inputs_c: Optional[np.ndarray] = None

    def __post_init__(self):
        n, p = self.inputs_a.shape[0], self.inputs_a.shape[1]
        ratio = 6 if self.inputs_c is not None else 2
        arrays = [self.inputs_b, self.targets] + ([self.inputs_c] if self.inputs_c is not None else [])
        if any(a.shape[0] != n for a in arrays):
            raise ShapeMismatch("patch arrays have different lengths")
        if p % ratio or self.inputs_a.shape[2] % ratio:
            raise ShapeMismatch(f"patch size {p} is not divisible by {ratio}")
        h, w = self.inputs_a.shape[1:3]
        if self.inputs_b.shape[1:3] != (h // 2, w // 2) or self.targets.shape[1:3] != (h, w):
            raise ShapeMismatch("patch shapes do not follow the 1 : 1/2 ratio")
        if self.inputs_c is not None and self.inputs_c.shape[1:3] != (h // 6, w // 6):
            raise ShapeMismatch("C patches do not follow the 1/6 ratio")

    def __len__(self):
        return self.inputs_a.shape[0]

    @property
    def patch_size(self) -> int:
        return self.inputs_a.shape[1]

    def subset(self, idx) -> "PatchSet":
        idx = np.asarray(idx, dtype=np.int64)
        return PatchSet(
            self.inputs_a[idx],
            self.inputs_b[idx],
            self.targets[idx],
            None if self.inputs_c is None else self.inputs_c[idx],
        )

    def matches(self, config: NetworkConfig) -> bool:
        want_c = config.scale == 6
        return (self.inputs_c is not None) == want_c and self.targets.shape[-1] == config.output_channels


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr0: float = 1e-4
    plateau_patience: int = 5
    lr_factor: float = 0.5
    value_scale: float = 2000.0
    max_epochs: int = 100
    min_lr: Optional[float] = None
    seed: int = 0
    max_seconds: Optional[float] = None
    compute_dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1 or self.lr0 <= 0 or self.value_scale <= 0 or self.max_epochs < 1:
            raise InvariantViolation("batch_size, lr0, value_scale and max_epochs must be positive")
        if self.plateau_patience < 1:
            raise InvariantViolation("plateau_patience must be >= 1")
        if not 0.0 < self.lr_factor < 1.0:
            raise InvariantViolation(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if self.min_lr is not None and self.min_lr <= 0:
            raise InvariantViolation("min_lr must be positive")

    @property
    def floor_lr(self) -> float:
        return self.min_lr if self.min_lr is not None else self.lr0 / 1024


@dataclass
class TrainHistory:
    """Row 0 is the evaluation before the first update."""

    epochs: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)

    def append(self, epoch, train_loss, val_loss, lr):
        if self.epochs and epoch <= self.epochs[-1]:
            raise InvariantViolation("epoch index must increase")
        if self.lr and lr > self.lr[-1]:
            raise InvariantViolation("learning rate may not increase")
        self.epochs.append(epoch)
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.lr.append(float(lr))

    def __len__(self):
        return len(self.epochs)

    def to_table(self) -> str:
        lines = [f"{'epoch':>6} {'train_loss':>14} {'val_loss':>14} {'lr':>12}"]
        for e, t, v, lr in zip(self.epochs, self.train_loss, self.val_loss, self.lr):
            lines.append(f"{e:>6d} {t:>14.8f} {v:>14.8f} {lr:>12.4e}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_table(cls, text: str) -> "TrainHistory":
        h = cls()
        for line in text.splitlines()[1:]:
            if line.strip():
                e, t, v, lr = line.split()
                h.append(int(e), float(t), float(v), float(lr))
        return h


# ---------------------------------------------------------------------------
# data


def _target_ratio(scene: MultiResScene, targets) -> int:
    ids = tuple(t.band_id for t in targets)
    if sorted(ids) == sorted(BANDS_B):
        return 2
    if sorted(ids) == sorted(BANDS_C):
        if not scene.has_c:
            raise ShapeMismatch("C targets given for a scene without C inputs")
        return 6
    raise ShapeMismatch(f"targets {ids} are neither the B nor the C band set")


def sample_patches(input_scene: MultiResScene, targets, n: int, patch_size: int, seed: int) -> PatchSet:
    """Draw ``n`` co-located crops at random positions aligned to the coarsest band grid."""
    if n < 1:
        raise InvariantViolation("n must be >= 1")
    ratio = _target_ratio(input_scene, targets)
    h, w = input_scene.height, input_scene.width
    if patch_size % ratio:
        raise PatchTooLarge(f"patch size {patch_size} is not divisible by {ratio}")
    if patch_size > h or patch_size > w:
        raise PatchTooLarge(f"patch size {patch_size} exceeds scene {w}x{h}")
    for t in targets:
        if (t.height, t.width) != (h, w):
            raise ShapeMismatch(f"target {t.band_id} is {t.width}x{t.height}, expected {w}x{h}")
    rng = np.random.default_rng(seed)
    ky = rng.integers(0, (h - patch_size) // ratio + 1, size=n) * ratio
    kx = rng.integers(0, (w - patch_size) // ratio + 1, size=n) * ratio

    a, b = input_scene.stack("a"), input_scene.stack("b")
    c = input_scene.stack("c") if ratio == 6 else None
    tgt = band_stack(targets)
    p = patch_size

    def crop(arr, f):
        return np.stack([arr[y // f : (y + p) // f, x // f : (x + p) // f] for y, x in zip(ky, kx)])

    return PatchSet(
        crop(a, 1),
        crop(b, 2),
        crop(tgt, 1),
        None if c is None else crop(c, 6),
    )


def concat_patches(sets: Sequence[PatchSet]) -> PatchSet:
    has_c = sets[0].inputs_c is not None
    return PatchSet(
        np.concatenate([s.inputs_a for s in sets]),
        np.concatenate([s.inputs_b for s in sets]),
        np.concatenate([s.targets for s in sets]),
        np.concatenate([s.inputs_c for s in sets]) if has_c else None,
    )


def split_train_val(patches: PatchSet, fraction: float = 0.9, seed: int = 0):
    """Seeded shuffle, then the first ``round(fraction * n)`` patches train."""
    n = len(patches)
    if n < 2:
        raise TooFewPatches(f"need at least 2 patches, got {n}")
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return patches.subset(np.sort(perm[:n_train])), patches.subset(np.sort(perm[n_train:]))


# ---------------------------------------------------------------------------
# objective and optimizer


def l1_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error and its gradient ``sign(pred - target) / n``."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.abs(diff).sum(dtype=np.float64) / n), np.sign(diff) / n


@dataclass
class NadamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    m_schedule: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule_decay: float = 0.004

    @classmethod
    def zeros_like(cls, params, **kw) -> "NadamState":
        if isinstance(params, NetworkWeights):
            params = params.tensors()
        m = [np.zeros(np.shape(t), dtype=np.float64) for t in params]
        v = [np.zeros(np.shape(t), dtype=np.float64) for t in params]
        return cls(m, v, **kw)


def nadam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: NadamState, lr: float):
    """One Adam-with-Nesterov-momentum update (momentum-schedule form), in float64.

    Works on plain lists of arrays; returns ``(new_params, new_state)``.
    """
    if lr <= 0:
        raise InvariantViolation(f"learning rate must be positive, got {lr}")
    if [np.shape(p) for p in params] != [np.shape(g) for g in grads] or len(params) != len(state.m):
        raise ShapeMismatch("parameters, gradients and optimizer state disagree")
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    mu_t = b1 * (1.0 - 0.5 * 0.96 ** (t * state.schedule_decay))
    mu_next = b1 * (1.0 - 0.5 * 0.96 ** ((t + 1) * state.schedule_decay))
    m_sched = state.m_schedule * mu_t
    m_sched_next = m_sched * mu_next

    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        p = np.asarray(p)
        g = np.asarray(g, dtype=np.float64)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        g_hat = g / (1.0 - m_sched)
        m_hat = m / (1.0 - m_sched_next)
        v_hat = v / (1.0 - b2**t)
        m_bar = (1.0 - mu_t) * g_hat + mu_next * m_hat
        step = lr * m_bar / (np.sqrt(v_hat) + state.eps)
        new_p.append((p.astype(np.float64) - step).astype(p.dtype))
        new_m.append(m)
        new_v.append(v)
    new_state = NadamState(new_m, new_v, t, m_sched, b1, b2, state.eps, state.schedule_decay)
    return new_p, new_state


def nadam_step(weights: NetworkWeights, grads: NetworkWeights, state: NadamState, lr: float):
    """Apply :func:`nadam_update` to every network tensor; inputs are left untouched."""
    params, new_state = nadam_update(weights.tensors(), grads.tensors(), state, lr)
    return NetworkWeights.from_tensors(params), new_state


def plateau_due(val_losses: Sequence[float], lrs: Sequence[float], patience: int) -> bool:
    """True when the best validation loss is ``patience`` epochs old, counting from the last cut."""
    if not val_losses:
        raise InvariantViolation("history is empty")
    best = int(np.argmin(val_losses))
    last_cut = 0
    for i in range(1, len(lrs)):
        if lrs[i] < lrs[i - 1]:
            last_cut = i - 1
    reference = max(best, last_cut)
    return len(val_losses) - 1 - reference >= patience


def lr_on_plateau(
    val_losses: Sequence[float],
    current_lr: float,
    patience: int = 5,
    factor: float = 0.5,
    min_lr: float = 0.0,
    lrs: Optional[Sequence[float]] = None,
) -> float:
    """Learning rate for the next epoch.

    ``lrs`` (the rate used in each recorded epoch) lets the patience window
    restart after a cut; without it the window counts from the best epoch only.
    """
    lrs = lrs if lrs is not None else [current_lr] * len(val_losses)
    if plateau_due(val_losses, lrs, patience):
        return max(current_lr * factor, min_lr)
    return current_lr


# ---------------------------------------------------------------------------
# loop


def _scaled_batch(patches: PatchSet, idx, scale: float, dtype):
    ya = patches.inputs_a[idx].astype(dtype) / dtype(scale)
    yb = patches.inputs_b[idx].astype(dtype) / dtype(scale)
    yc = None if patches.inputs_c is None else patches.inputs_c[idx].astype(dtype) / dtype(scale)
    tgt = patches.targets[idx].astype(dtype) / dtype(scale)
    return ya, yb, yc, tgt


def evaluate_loss(config, weights, patches: PatchSet, value_scale=2000.0, batch_size=128, dtype=np.float32) -> float:
    """Mean absolute error over a whole patch set, in scaled units."""
    dtype = np.dtype(dtype).type
    w = weights.astype(dtype)
    total = 0.0
    count = 0
    for start in range(0, len(patches), batch_size):
        idx = np.arange(start, min(start + batch_size, len(patches)))
        ya, yb, yc, tgt = _scaled_batch(patches, idx, value_scale, dtype)
        pred = forward(config, w, ya, yb, yc)
        total += float(np.abs(pred - tgt).sum(dtype=np.float64))
        count += tgt.size
    return total / count


def train(
    net_config: NetworkConfig,
    train_config: TrainConfig,
    train_patches: PatchSet,
    val_patches: PatchSet,
    initial_weights: Optional[NetworkWeights] = None,
):
    """Fit the network; returns the best-validation weights (float32) and the history."""
    for ps in (train_patches, val_patches):
        if not ps.matches(net_config):
            raise ShapeMismatch(f"patch set does not fit a {net_config.variant} network")
    tc = train_config
    dtype = np.dtype(tc.compute_dtype).type
    rng = np.random.default_rng(tc.seed)
    if initial_weights is None:
        weights = init_he_uniform(net_config, tc.seed, dtype=np.float64)
    else:
        initial_weights.check(net_config)
        weights = initial_weights.astype(np.float64)
    state = NadamState.zeros_like(weights)
    lr = tc.lr0
    history = TrainHistory()
    started = time.perf_counter()

    def val_loss_of(w):
        return evaluate_loss(net_config, w, val_patches, tc.value_scale, tc.batch_size, dtype)

    v0 = val_loss_of(weights)
    t0 = evaluate_loss(net_config, weights, train_patches, tc.value_scale, tc.batch_size, dtype)
    if not (math.isfinite(v0) and math.isfinite(t0)):
        raise NonFiniteLoss(0, "initial weights give a non-finite loss")
    history.append(0, t0, v0, lr)
    best_loss, best_weights = v0, weights.astype(np.float32)
    log.info("epoch 0: train %.6f val %.6f", t0, v0)

    n = len(train_patches)
    for epoch in range(1, tc.max_epochs + 1):
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, tc.batch_size):
            idx = perm[start : start + tc.batch_size]
            ya, yb, yc, tgt = _scaled_batch(train_patches, idx, tc.value_scale, dtype)
            w_c = weights.astype(dtype)
            pred, cache = forward(net_config, w_c, ya, yb, yc, return_cache=True)
            loss, grad = l1_loss(pred, tgt)
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch, f"loss became {loss} at batch starting {start}")
            grads, _ = backward(net_config, w_c, cache, grad.astype(dtype))
            weights, state = nadam_step(weights, grads, state, lr)
            total += loss * tgt.size
            count += tgt.size
        train_loss = total / count
        val = val_loss_of(weights)
        if not math.isfinite(val):
            raise NonFiniteLoss(epoch, f"validation loss became {val}")
        history.append(epoch, train_loss, val, lr)
        log.info("epoch %d: train %.6f val %.6f lr %.3g", epoch, train_loss, val, lr)
        if val < best_loss:
            best_loss, best_weights = val, weights.astype(np.float32)
        if plateau_due(history.val_loss, history.lr, tc.plateau_patience):
            if lr <= tc.floor_lr:
                log.info("learning rate floor reached, stopping")
                break
            lr = max(lr * tc.lr_factor, tc.floor_lr)
        if tc.max_seconds is not None and time.perf_counter() - started > tc.max_seconds:
            log.info("time budget exhausted after epoch %d", epoch)
            break
    return best_weights, history
