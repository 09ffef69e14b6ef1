"""Trainable affine encoder head, hand-derived gradients, and optimizers.

The encoder maps a frozen base embedding to the working latent space:

    embedding = act(weight @ base_vector + bias),  act in {identity, tanh}

These are the only learnable parameters. Gradients are accumulated
explicitly into a GradBuffer (no tape); all math runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("identity", "tanh")

CKPT_MAGIC = "xproto-head-v1"


@dataclass
class EncoderHead:
    """Affine map d_in -> d_out with an optional tanh."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("weight must be d_out x d_in with matching bias")
        if self.weight.shape[0] < 2:
            raise ValueError("d_out must be >= 2")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("head parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "EncoderHead":
        return EncoderHead(self.weight.copy(), self.bias.copy(), self.activation)


def init_head(d_in: int, d_out: int, activation: str = "identity",
              rng: np.random.Generator | None = None) -> EncoderHead:
    """Fan-scaled uniform init: weight ~ U(+-sqrt(6/(d_in+d_out))), bias 0."""
    if d_out < 2:
        raise ValueError("d_out must be >= 2")
    rng = rng if rng is not None else np.random.default_rng()
    limit = np.sqrt(6.0 / (d_in + d_out))
    weight = rng.uniform(-limit, limit, size=(d_out, d_in))
    return EncoderHead(weight, np.zeros(d_out), activation)


def encode(head: EncoderHead, base_vector: np.ndarray) -> np.ndarray:
    """Forward map. Accepts a single vector (d_in,) or a batch (n, d_in)."""
    x = np.asarray(base_vector, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != head.d_in:
        raise ValueError(f"input dim {x.shape[1]} != head d_in {head.d_in}")
    z = x @ head.weight.T + head.bias
    if head.activation == "tanh":
        z = np.tanh(z)
    return z[0] if single else z


@dataclass
class GradBuffer:
    """Explicit gradient accumulator matching one head's parameter shapes."""

    d_weight: np.ndarray
    d_bias: np.ndarray

    @classmethod
    def zeros_like(cls, head: EncoderHead) -> "GradBuffer":
        return cls(np.zeros_like(head.weight), np.zeros_like(head.bias))

    def zero(self):
        self.d_weight[:] = 0.0
        self.d_bias[:] = 0.0

    def scaled(self, c: float) -> "GradBuffer":
        return GradBuffer(self.d_weight * c, self.d_bias * c)

    def add(self, other: "GradBuffer"):
        self.d_weight += other.d_weight
        self.d_bias += other.d_bias


def backward(head: EncoderHead, base_vector: np.ndarray, upstream_gradient: np.ndarray,
             grads: GradBuffer | None = None) -> GradBuffer:
    """Accumulate d(loss)/d(weight, bias) given d(loss)/d(embedding).

    For tanh the pointwise derivative 1 - tanh(z)^2 is applied; the
    gradient with respect to the (frozen) base vector is not produced.
    """
    x = np.asarray(base_vector, dtype=np.float64)
    g = np.asarray(upstream_gradient, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        g = g[None, :]
    if x.shape[1] != head.d_in or g.shape[1] != head.d_out or x.shape[0] != g.shape[0]:
        raise ValueError("backward shape mismatch")
    if head.activation == "tanh":
        y = np.tanh(x @ head.weight.T + head.bias)
        g = g * (1.0 - y * y)
    if grads is None:
        grads = GradBuffer.zeros_like(head)
    grads.d_weight += g.T @ x
    grads.d_bias += g.sum(axis=0)
    return grads


@dataclass
class OptimizerState:
    """Adam or plain SGD state for one head."""

    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_weight: np.ndarray | None = field(default=None, repr=False)
    m_bias: np.ndarray | None = field(default=None, repr=False)
    v_weight: np.ndarray | None = field(default=None, repr=False)
    v_bias: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError("optimizer kind must be 'adam' or 'sgd'")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def init_optimizer(head: EncoderHead, kind: str = "adam",
                   learning_rate: float = 1e-3, **kw) -> OptimizerState:
    state = OptimizerState(kind=kind, learning_rate=learning_rate, **kw)
    if kind == "adam":
        state.m_weight = np.zeros_like(head.weight)
        state.m_bias = np.zeros_like(head.bias)
        state.v_weight = np.zeros_like(head.weight)
        state.v_bias = np.zeros_like(head.bias)
    return state


def optimizer_step(state: OptimizerState, head: EncoderHead, grads: GradBuffer) -> EncoderHead:
    """Apply one update in place. Non-finite gradients abort with parameters untouched."""
    if not (np.all(np.isfinite(grads.d_weight)) and np.all(np.isfinite(grads.d_bias))):
        raise ValueError("non-finite gradient; parameters left untouched")
    state.step += 1
    if state.kind == "sgd":
        head.weight -= state.learning_rate * grads.d_weight
        head.bias -= state.learning_rate * grads.d_bias
        return head
    t = state.step
    for param, g, m, v in (
        (head.weight, grads.d_weight, state.m_weight, state.v_weight),
        (head.bias, grads.d_bias, state.m_bias, state.v_bias),
    ):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        param -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return head


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_params: int
    passed: bool


def gradient_check(loss_fn, head: EncoderHead, tolerance: float = 1e-4,
                   fd_step: float = 1e-4) -> GradCheckReport:
    """Compare an analytic head gradient against central finite differences.

    ``loss_fn(head) -> (value, GradBuffer)`` must be deterministic and
    closed over fixed data. Reports the max relative error over all
    parameters, normalized by the largest gradient magnitude seen.
    """
    _, analytic = loss_fn(head)
    a_flat = np.concatenate([analytic.d_weight.ravel(), analytic.d_bias.ravel()])
    fd_flat = np.empty_like(a_flat)

    n_w = head.weight.size
    for k in range(a_flat.size):
        plus, minus = head.copy(), head.copy()
        if k < n_w:
            i, j = divmod(k, head.d_in)
            plus.weight[i, j] += fd_step
            minus.weight[i, j] -= fd_step
        else:
            plus.bias[k - n_w] += fd_step
            minus.bias[k - n_w] -= fd_step
        fd_flat[k] = (loss_fn(plus)[0] - loss_fn(minus)[0]) / (2.0 * fd_step)

    abs_err = float(np.max(np.abs(a_flat - fd_flat))) if a_flat.size else 0.0
    scale = max(float(np.max(np.abs(a_flat), initial=0.0)),
                float(np.max(np.abs(fd_flat), initial=0.0)), 1e-8)
    rel = abs_err / scale
    return GradCheckReport(max_rel_error=rel, max_abs_error=abs_err,
                           n_params=int(a_flat.size), passed=rel <= tolerance)


def save_checkpoint(path: str, head: EncoderHead, state: OptimizerState | None = None) -> None:
    """Write ``head.ckpt``: a JSON header line then raw little-endian f32 blocks.

    Block order: weight, bias, then for Adam the four moment buffers
    (m_weight, m_bias, v_weight, v_bias). The file stores f32; reloading
    yields exactly the stored values, so save -> load -> save is
    byte-identical.
    """
    header = {
        "magic": CKPT_MAGIC,
        "d_in": head.d_in,
        "d_out": head.d_out,
        "activation": head.activation,
        "optimizer": None if state is None else state.kind,
        "step": 0 if state is None else state.step,
        "learning_rate": None if state is None else state.learning_rate,
        "beta1": None if state is None else state.beta1,
        "beta2": None if state is None else state.beta2,
        "eps": None if state is None else state.eps,
    }
    blocks = [head.weight, head.bias]
    if state is not None and state.kind == "adam":
        blocks += [state.m_weight, state.m_bias, state.v_weight, state.v_bias]
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for b in blocks:
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_checkpoint(path: str) -> tuple[EncoderHead, OptimizerState | None]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("magic") != CKPT_MAGIC:
            raise ValueError(f"not a head checkpoint: {path}")
        d_in, d_out = int(header["d_in"]), int(header["d_out"])

        def block(shape):
            n = int(np.prod(shape))
            raw = f.read(n * 4)
            if len(raw) != n * 4:
                raise ValueError("truncated checkpoint block")
            return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

        head = EncoderHead(block((d_out, d_in)), block((d_out,)), header["activation"])
        state = None
        if header["optimizer"] is not None:
            state = OptimizerState(
                kind=header["optimizer"],
                learning_rate=float(header["learning_rate"]),
                beta1=float(header["beta1"]),
                beta2=float(header["beta2"]),
                eps=float(header["eps"]),
                step=int(header["step"]),
            )
            if state.kind == "adam":
                state.m_weight = block((d_out, d_in))
                state.m_bias = block((d_out,))
                state.v_weight = block((d_out, d_in))
                state.v_bias = block((d_out,))
        trailing = f.read(1)
        if trailing:
            raise ValueError("trailing bytes in checkpoint")
    return head, state
