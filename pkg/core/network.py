# core/network.py
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.environment import NUM_ACTIONS
from core.features import NUM_CHANNELS
from core.losses import LossComponents, Trajectory, compute_advantages, head_gradients
from core.schemas import AdamConfig, LossSpec

logger = logging.getLogger("pi_a3c.network")

CONV_LAYERS = 4
CONV_FILTERS = 32
KERNEL = 3
DENSE_UNITS = 128


class NetworkError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShapeTable:
    board_size: int
    entries: Tuple[Tuple[str, Tuple[int, ...]], ...]

    @cached_property
    def offsets(self) -> Dict[str, Tuple[int, int]]:
        out: Dict[str, Tuple[int, int]] = {}
        start = 0
        for name, shape in self.entries:
            size = int(np.prod(shape))
            out[name] = (start, start + size)
            start += size
        return out

    @cached_property
    def total(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.entries)

    def digest(self) -> bytes:
        return hashlib.sha256(repr(self.entries).encode("utf-8")).digest()

    def views(self, flat: np.ndarray) -> Dict[str, np.ndarray]:
        return {
            name: flat[lo:hi].reshape(shape)
            for (name, shape), (lo, hi) in zip(self.entries, self.offsets.values())
        }


@lru_cache(maxsize=None)
def shape_table(board_size: int = 8) -> ShapeTable:
    entries: List[Tuple[str, Tuple[int, ...]]] = []
    in_ch = NUM_CHANNELS
    for i in range(1, CONV_LAYERS + 1):
        entries.append((f"conv{i}_w", (CONV_FILTERS, in_ch, KERNEL, KERNEL)))
        entries.append((f"conv{i}_b", (CONV_FILTERS,)))
        in_ch = CONV_FILTERS
    entries.append(("dense_w", (CONV_FILTERS * board_size * board_size, DENSE_UNITS)))
    entries.append(("dense_b", (DENSE_UNITS,)))
    entries.append(("policy_w", (DENSE_UNITS, NUM_ACTIONS)))
    entries.append(("policy_b", (NUM_ACTIONS,)))
    entries.append(("value_w", (DENSE_UNITS, 1)))
    entries.append(("value_b", (1,)))
    return ShapeTable(board_size=board_size, entries=tuple(entries))


def param_count(board_size: int = 8) -> int:
    return shape_table(board_size).total


@dataclass(frozen=True)
class NetParams:
    flat: np.ndarray
    board_size: int = 8

    def __post_init__(self) -> None:
        expected = param_count(self.board_size)
        if self.flat.shape != (expected,):
            raise NetworkError(f"expected {expected} parameters, got shape {self.flat.shape}")

    @property
    def table(self) -> ShapeTable:
        return shape_table(self.board_size)

    def views(self) -> Dict[str, np.ndarray]:
        return self.table.views(self.flat)

    def copy(self) -> "NetParams":
        return NetParams(flat=self.flat.copy(), board_size=self.board_size)


@dataclass(frozen=True)
class Gradients:
    flat: np.ndarray
    norm: float = 0.0  # global norm before clipping
    clipped: bool = False


@dataclass(frozen=True)
class NetOutput:
    policy: np.ndarray  # (6,) or (N, 6)
    value: np.ndarray  # () or (N,)
    logits: np.ndarray


def _fans(name: str, shape: Tuple[int, ...]) -> Tuple[int, int]:
    if name.startswith("conv"):
        out_ch, in_ch, kh, kw = shape
        return in_ch * kh * kw, out_ch * kh * kw
    return shape[0], shape[1]


def init_params(seed: int, board_size: int = 8) -> NetParams:
    """Glorot-uniform weights (variance 2/(fan_in+fan_out)), zero biases."""
    table = shape_table(board_size)
    rng = np.random.default_rng(seed)
    flat = np.zeros(table.total, dtype=np.float64)
    views = table.views(flat)
    for name, shape in table.entries:
        if name.endswith("_b"):
            continue
        fan_in, fan_out = _fans(name, shape)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        views[name][...] = rng.uniform(-limit, limit, size=shape)
    return NetParams(flat=flat, board_size=board_size)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # stride 1, pad 1: spatial size preserved
    xpad = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xpad, (KERNEL, KERNEL), axis=(2, 3))  # (N, C, H, W, 3, 3)
    out = np.einsum("nchwij,ocij->nohw", cols, w, optimize=True) + b[None, :, None, None]
    return out, cols


def _conv_backward(
    dout: np.ndarray, cols: np.ndarray, w: np.ndarray, need_dx: bool
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    dw = np.einsum("nohw,nchwij->ocij", dout, cols, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    if not need_dx:
        return dw, db, None
    n, _, h, wd = dout.shape
    dcols = np.einsum("nohw,ocij->nchwij", dout, w, optimize=True)
    dxpad = np.zeros((n, w.shape[1], h + 2, wd + 2), dtype=dout.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxpad[:, :, i:i + h, j:j + wd] += dcols[..., i, j]
    return dw, db, dxpad[:, :, 1:-1, 1:-1]


def _as_batch(params: NetParams, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    s = params.board_size
    if x.ndim != 4 or x.shape[1:] != (NUM_CHANNELS, s, s):
        raise NetworkError(f"expected input (N, {NUM_CHANNELS}, {s}, {s}), got {x.shape}")
    if not np.isfinite(x).all():
        raise NetworkError("non-finite network input")
    return x, single


def _forward(params: NetParams, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, Dict[str, object]]:
    v = params.views()
    cache: Dict[str, object] = {"convs": []}
    h = x
    for i in range(1, CONV_LAYERS + 1):
        pre, cols = _conv_forward(h, v[f"conv{i}_w"], v[f"conv{i}_b"])
        cache["convs"].append((cols, pre))  # type: ignore[union-attr]
        h = np.maximum(pre, 0.0)
    flat_in = h.reshape(h.shape[0], -1)
    dense_pre = flat_in @ v["dense_w"] + v["dense_b"]
    hidden = np.maximum(dense_pre, 0.0)
    logits = hidden @ v["policy_w"] + v["policy_b"]
    values = (hidden @ v["value_w"] + v["value_b"])[:, 0]
    cache.update(conv_out_shape=h.shape, flat_in=flat_in, dense_pre=dense_pre, hidden=hidden)
    return logits, values, cache


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: NetParams, x: np.ndarray) -> NetOutput:
    """Policy probabilities and value for one (28, S, S) tensor or a batch of them."""
    batch, single = _as_batch(params, x)
    logits, values, _ = _forward(params, batch)
    policy = _softmax(logits)
    if single:
        return NetOutput(policy=policy[0], value=values[0], logits=logits[0])
    return NetOutput(policy=policy, value=values, logits=logits)


def _backward(params: NetParams, cache: Dict[str, object], dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
    v = params.views()
    grad = np.zeros_like(params.flat)
    g = params.table.views(grad)

    hidden = cache["hidden"]
    g["policy_w"][...] = hidden.T @ dlogits  # type: ignore[union-attr]
    g["policy_b"][...] = dlogits.sum(axis=0)
    g["value_w"][...] = hidden.T @ dvalues[:, None]  # type: ignore[union-attr]
    g["value_b"][...] = dvalues.sum()

    dhidden = dlogits @ v["policy_w"].T + dvalues[:, None] @ v["value_w"].T
    dhidden *= cache["dense_pre"] > 0  # type: ignore[operator]
    g["dense_w"][...] = cache["flat_in"].T @ dhidden  # type: ignore[union-attr]
    g["dense_b"][...] = dhidden.sum(axis=0)

    dh = (dhidden @ v["dense_w"].T).reshape(cache["conv_out_shape"])  # type: ignore[arg-type]
    convs = cache["convs"]
    for i in range(CONV_LAYERS, 0, -1):
        cols, pre = convs[i - 1]  # type: ignore[index]
        dpre = dh * (pre > 0)
        dw, db, dx = _conv_backward(dpre, cols, v[f"conv{i}_w"], need_dx=i > 1)
        g[f"conv{i}_w"][...] = dw
        g[f"conv{i}_b"][...] = db
        dh = dx
    return grad


def loss_and_grad(
    params: NetParams,
    batch: Trajectory,
    loss_spec: LossSpec,
    *,
    imitation: Optional[bool] = None,
) -> Tuple[LossComponents, Gradients]:
    """
    Loss components and the analytic gradient of the total loss. Demonstrator
    trajectories add the planner imitation term unless imitation=False.
    The gradient is clipped to loss_spec.grad_clip_norm (global norm).
    """
    use_imitation = batch.demonstrator if imitation is None else imitation
    x, _ = _as_batch(params, batch.features)
    logits, values, cache = _forward(params, x)
    advantages = compute_advantages(batch, loss_spec.gamma)
    comps, dlogits, dvalues = head_gradients(
        batch, advantages, loss_spec, logits, values, imitation=use_imitation
    )
    flat = _backward(params, cache, dlogits, dvalues)
    norm = float(np.sqrt(np.dot(flat, flat)))
    clipped = False
    if loss_spec.grad_clip_norm is not None and norm > loss_spec.grad_clip_norm:
        flat *= loss_spec.grad_clip_norm / norm
        clipped = True
    return comps, Gradients(flat=flat, norm=norm, clipped=clipped)


def total_loss(params: NetParams, batch: Trajectory, loss_spec: LossSpec, *, imitation: Optional[bool] = None) -> float:
    """Scalar loss only; used by finite-difference checks."""
    use_imitation = batch.demonstrator if imitation is None else imitation
    x, _ = _as_batch(params, batch.features)
    logits, values, _ = _forward(params, x)
    advantages = compute_advantages(batch, loss_spec.gamma)
    comps, _, _ = head_gradients(batch, advantages, loss_spec, logits, values, imitation=use_imitation)
    return comps.total


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    config: AdamConfig = field(default_factory=AdamConfig)


def adam_init(size: int, config: Optional[AdamConfig] = None) -> AdamState:
    return AdamState(m=np.zeros(size), v=np.zeros(size), step=0, config=config or AdamConfig())


def adam_step(opt: AdamState, params: NetParams, grads: Gradients) -> Tuple[AdamState, NetParams]:
    """
    Classical Adam with bias correction. Weight decay is L2 added to the
    gradient; eps is added to sqrt(v_hat).
    """
    if not (opt.m.shape == opt.v.shape == params.flat.shape == grads.flat.shape):
        raise NetworkError(
            f"shape mismatch: moments {opt.m.shape}, params {params.flat.shape}, grads {grads.flat.shape}"
        )
    c = opt.config
    g = grads.flat + c.weight_decay * params.flat
    step = opt.step + 1
    m = c.beta1 * opt.m + (1.0 - c.beta1) * g
    v = c.beta2 * opt.v + (1.0 - c.beta2) * g * g
    m_hat = m / (1.0 - c.beta1 ** step)
    v_hat = v / (1.0 - c.beta2 ** step)
    flat = params.flat - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)
    return AdamState(m=m, v=v, step=step, config=c), NetParams(flat=flat, board_size=params.board_size)
