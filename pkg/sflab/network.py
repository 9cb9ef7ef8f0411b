"""Two-layer ReLU network with and without bias, and its random initialization.

Conventions:
    - sigma(z) = max(0, z) and sigma'(z) = 1{z > 0}, so sigma'(0) = 0 exactly.
    - The output weights a_r = +-1/sqrt(m) are frozen at initialization.
    - The bias variant computes g(W, b, x) = sum_r a_r sigma(alpha w_r^T x + beta b_r);
      its directional outputs are rescaled by 1/alpha, so both variants share
      dir_grad = V^T sum_r a_r sigma'(.) w_r.
    - The bias-free net is stored with alpha = 1, beta = 0 and no b.
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .dataset import dump_document, read_document, read_field
from .errors import DatasetParseError, InvalidInputError

CHECKPOINT_FORMAT = "sflab-checkpoint"


@dataclass(frozen=True)
class NetParams:
    W: np.ndarray
    a: np.ndarray
    b: Optional[np.ndarray] = None
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        a = np.array(self.a, dtype=np.float64).reshape(-1)
        if W.ndim != 2 or W.shape[0] < 1 or a.shape != (W.shape[0],):
            raise InvalidInputError(f"Need W of shape (m, d) and a of shape (m,), got {W.shape}, {a.shape}")
        if not np.all(np.abs(a) == 1.0 / np.sqrt(W.shape[0])):
            raise InvalidInputError("Output weights must all be +-1/sqrt(m)")
        arrays = {"W": W, "a": a}
        if self.b is not None:
            b = np.array(self.b, dtype=np.float64).reshape(-1)
            if b.shape != a.shape:
                raise InvalidInputError(f"Need b of shape {a.shape}, got {b.shape}")
            if abs(self.alpha ** 2 + self.beta ** 2 - 1.0) > 1e-12:
                raise InvalidInputError(f"Need alpha^2 + beta^2 = 1, got alpha={self.alpha}, beta={self.beta}")
            arrays["b"] = b
        elif (self.alpha, self.beta) != (1.0, 0.0):
            raise InvalidInputError("A bias-free network uses alpha = 1, beta = 0")
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def has_bias(self) -> bool:
        return self.b is not None

    def with_weights(self, W: np.ndarray, b: Optional[np.ndarray] = None) -> "NetParams":
        return replace(self, W=W, b=b if self.has_bias else None)


@dataclass(frozen=True)
class NetOutput:
    value: float
    dir_grad: np.ndarray


@dataclass(frozen=True)
class JacobianRow:
    """Derivatives of one sample's outputs with respect to neuron r"""

    value_w: np.ndarray
    dir_w: np.ndarray
    value_b: Optional[float] = None
    dir_b: Optional[np.ndarray] = None


def bias_scaling(k: int) -> Tuple[float, float]:
    """(alpha, beta) with alpha = 1/(2k); k = 0 falls back to alpha = 1/2"""
    alpha = 0.5 if k == 0 else 1.0 / (2 * k)
    return alpha, float(np.sqrt(1.0 - alpha ** 2))


def init(m: int, d: int, k: int, has_bias: bool, seed: int) -> NetParams:
    """Random initialization; draws W (row-major), then a, then b"""
    if m < 1 or d < 1:
        raise InvalidInputError(f"Need m >= 1 and d >= 1, got m={m}, d={d}")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((m, d))
    a = np.where(rng.integers(0, 2, size=m) == 1, 1.0, -1.0) / np.sqrt(m)
    if not has_bias:
        return NetParams(W=W, a=a)
    b = rng.standard_normal(m)
    alpha, beta = bias_scaling(k)
    return NetParams(W=W, a=a, b=b, alpha=alpha, beta=beta)


def _check_input(p: NetParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.d:
        raise InvalidInputError(f"Input dimension {x.shape[-1]} does not match d={p.d}")
    return x


def preactivations(p: NetParams, X: np.ndarray) -> np.ndarray:
    """alpha W x + beta b for every row of X: shape (n, m)"""
    X = _check_input(p, X)
    pre = p.alpha * (X @ p.W.T)
    if p.has_bias:
        pre = pre + p.beta * p.b
    return pre


def activation_pattern(p: NetParams, X: np.ndarray) -> np.ndarray:
    """sigma'(pre-activation) as a boolean (n, m) array"""
    return preactivations(p, X) > 0


def forward_batch(p: NetParams, X: np.ndarray, pattern: Optional[np.ndarray] = None) -> np.ndarray:
    """Outputs for every row of X; a given (n, m) `pattern` fixes which units count as active"""
    pre = preactivations(p, X)
    if pattern is None:
        return np.maximum(pre, 0.0) @ p.a
    return (pattern * pre) @ p.a


def direction_gradients(p: NetParams, X: np.ndarray, pattern: Optional[np.ndarray] = None) -> np.ndarray:
    """sum_r a_r sigma'(.) w_r per row of X: shape (n, d)"""
    if pattern is None:
        pattern = activation_pattern(p, X)
    return (pattern * p.a) @ p.W


def forward(p: NetParams, x: np.ndarray) -> float:
    return float(forward_batch(p, np.atleast_2d(x))[0])


def input_gradient(p: NetParams, x: np.ndarray) -> np.ndarray:
    """Gradient of the network output with respect to its input"""
    return p.alpha * direction_gradients(p, np.atleast_2d(x))[0]


def directional_output(p: NetParams, x: np.ndarray, V: np.ndarray) -> NetOutput:
    """Value and (1/alpha-rescaled, for the bias net) directional derivatives"""
    x2 = np.atleast_2d(x)
    grad = direction_gradients(p, x2)[0]
    return NetOutput(value=float(forward_batch(p, x2)[0]), dir_grad=np.asarray(V).T @ grad)


def param_jacobian_row(p: NetParams, x: np.ndarray, V: np.ndarray, r: int) -> JacobianRow:
    """Derivatives of value and directional outputs at x with respect to neuron r (0-based)"""
    if not 0 <= r < p.m:
        raise InvalidInputError(f"Neuron index {r} out of range for m={p.m}")
    x = _check_input(p, x)
    V = np.asarray(V, dtype=np.float64)
    pre = p.alpha * (p.W[r] @ x) + (p.beta * p.b[r] if p.has_bias else 0.0)
    gate = p.a[r] * float(pre > 0)
    row = JacobianRow(value_w=gate * p.alpha * x, dir_w=gate * V)
    if p.has_bias:
        # sigma'' = 0, so the directional outputs do not depend on b_r
        row = replace(row, value_b=gate * p.beta, dir_b=np.zeros(V.shape[1]))
    return row


def save_params(p: NetParams, path: Path, manifest: Optional[str] = None) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "m": p.m,
        "d": p.d,
        "has_bias": p.has_bias,
        "alpha": p.alpha,
        "beta": p.beta,
    }
    if manifest:
        header["manifest"] = manifest
    records = []
    for r in range(p.m):
        record = {"w": p.W[r].tolist(), "a": float(p.a[r])}
        if p.has_bias:
            record["b"] = float(p.b[r])
        records.append(record)
    dump_document(Path(path), header, records)


def load_params(path: Path) -> NetParams:
    header, records = read_document(Path(path), CHECKPOINT_FORMAT)
    try:
        m, d = int(header["m"]), int(header["d"])
        has_bias = bool(header["has_bias"])
        alpha, beta = float(header["alpha"]), float(header["beta"])
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetParseError(f"{path}: header needs m, d, has_bias, alpha, beta") from e
    if len(records) != m:
        raise DatasetParseError(f"{path}: header says m={m} but {len(records)} records found")

    W = np.stack([read_field(rec, "w", d, r) for r, rec in enumerate(records)])
    a = np.array([read_field(rec, "a", 1, r)[0] for r, rec in enumerate(records)])
    b = None
    if has_bias:
        b = np.array([read_field(rec, "b", 1, r)[0] for r, rec in enumerate(records)])
    return NetParams(W=W, a=a, b=b, alpha=alpha, beta=beta)
