"""Training sets {x_i, y_i, V_i, h_i}: generation, separation margins, file I/O"""

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml
from rich.console import Console

from .config import (
    MIN_SEPARATION,
    ORTHONORMAL_TOL,
    REJECTION_ATTEMPTS_PER_SAMPLE,
    SERIAL_DIGITS,
    SINGLETON_DELTA1,
    TEACHER_HIDDEN_UNITS,
    UNIT_NORM_TOL,
    derive_seed,
)
from .errors import (
    DatasetParseError,
    DegenerateConfigurationError,
    InvalidInputError,
    NormalizationError,
    OrthonormalityError,
)

console = Console(stderr=True)

TARGET_KINDS = ("random_labels", "quadratic", "teacher_mlp")
DATASET_FORMAT = "sflab-dataset"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainingSet:
    """Inputs x (n, d) on the unit sphere, labels y (n,), orthonormal frames
    V (n, d, k) and directional targets h (n, k)."""

    x: np.ndarray
    y: np.ndarray
    V: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        if x.ndim != 2 or x.shape[0] < 1:
            raise InvalidInputError(f"x must have shape (n, d), got {x.shape}")
        n, d = x.shape
        V = np.array(self.V, dtype=np.float64)
        if V.size == 0:
            V = V.reshape(n, d, 0)
        h = np.array(self.h, dtype=np.float64)
        if h.size == 0:
            h = h.reshape(n, 0)
        if y.shape != (n,) or V.ndim != 3 or V.shape[:2] != (n, d) or h.shape != (n, V.shape[2]):
            raise InvalidInputError(
                f"Inconsistent shapes: x {x.shape}, y {y.shape}, V {V.shape}, h {h.shape}"
            )
        if V.shape[2] >= d:
            raise InvalidInputError(f"Need k < d, got k={V.shape[2]}, d={d}")
        for name, arr in (("x", x), ("y", y), ("V", V), ("h", h)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} has non-finite entries")

        norms = np.linalg.norm(x, axis=1)
        for i in np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise NormalizationError(f"|x| = {norms[i]:.17g}, expected 1", record=int(i))
        gram = np.einsum('ndk,ndl->nkl', V, V)
        defect = np.abs(gram - np.eye(V.shape[2])).reshape(n, -1)
        for i in range(n):
            if defect.shape[1] and defect[i].max() > ORTHONORMAL_TOL:
                raise OrthonormalityError(
                    f"V^T V deviates from identity by {defect[i].max():.3g}", record=i
                )

        for name, arr in (("x", x), ("y", y), ("V", V), ("h", h)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def k(self) -> int:
        return self.V.shape[2]

    def stacked_targets(self) -> np.ndarray:
        """(y; h) in the project stacking order: all values, then h sample-major"""
        return np.concatenate([self.y, self.h.reshape(-1)])


@dataclass(frozen=True)
class SeparationReport:
    delta1: float
    delta1_hat: float
    delta2: float
    gamma: float
    satisfies_assumption1: bool
    satisfies_assumption2: bool
    singleton_convention: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class TeacherMLP:
    """Smooth two-layer target f*(x) = sum_j c_j tanh(u_j^T x + s_j)"""

    U: np.ndarray
    s: np.ndarray
    c: np.ndarray

    @classmethod
    def from_seed(cls, seed: int, d: int, hidden: int = TEACHER_HIDDEN_UNITS) -> "TeacherMLP":
        rng = np.random.default_rng(seed)
        U = rng.standard_normal((hidden, d))
        s = 0.1 * rng.standard_normal(hidden)
        c = rng.standard_normal(hidden) / np.sqrt(hidden)
        return cls(U=U, s=s, c=c)

    def value(self, x: np.ndarray) -> float:
        return float(self.c @ np.tanh(self.U @ x + self.s))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        slope = 1.0 - np.tanh(self.U @ x + self.s) ** 2
        return (self.c * slope) @ self.U


def _sample_points(rng: np.random.Generator, n: int, d: int, antipodal_pair: bool) -> np.ndarray:
    free = n - 1 if antipodal_pair else n
    budget = REJECTION_ATTEMPTS_PER_SAMPLE * n
    accepted: List[np.ndarray] = []
    attempts = 0
    while len(accepted) < free:
        attempts += 1
        if attempts > budget:
            raise DegenerateConfigurationError(
                f"Could not place {free} points in d={d} with separation {MIN_SEPARATION} "
                f"after {budget} attempts"
            )
        z = rng.standard_normal(d)
        z /= np.linalg.norm(z)
        if accepted:
            pts = np.asarray(accepted)
            gap = min(np.linalg.norm(pts - z, axis=1).min(), np.linalg.norm(pts + z, axis=1).min())
            if gap < MIN_SEPARATION:
                continue
        accepted.append(z)
    if antipodal_pair:
        accepted.append(-accepted[0])
    return np.asarray(accepted)


def _direction_frame(rng: np.random.Generator, x: np.ndarray, k: int, tilt: float) -> np.ndarray:
    d = x.shape[0]
    if k == 0:
        return np.zeros((d, 0))
    G = rng.standard_normal((d, k))
    G -= np.outer(x, x @ G)
    Q, R = np.linalg.qr(G)
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    Q = Q * signs
    if tilt == 0.0:
        return Q
    # Mix x into every column, then orthonormalize symmetrically; this
    # leaves |v_j^T x| = tilt for every column.
    mix = tilt / np.sqrt(1.0 - k * tilt ** 2)
    tilted = Q + mix * np.outer(x, np.ones(k))
    evals, evecs = np.linalg.eigh(tilted.T @ tilted)
    return tilted @ (evecs @ np.diag(evals ** -0.5) @ evecs.T)


def generate(
    n: int,
    d: int,
    k: int,
    target_kind: str,
    seed: int,
    tilt: float = 0.0,
    antipodal_pair: bool = False,
) -> TrainingSet:
    """Sample a training set satisfying the separation assumptions.

    Points are Gaussian vectors normalized to the sphere, rejected until every
    pair is at least MIN_SEPARATION apart up to sign. Direction frames are
    orthogonal to their base point unless `tilt` > 0, in which case every
    direction has |v^T x| = tilt. With `antipodal_pair` the last point is the
    exact negative of the first, so only the bias network separates the set.
    """
    if n < 1 or d < 1 or not 0 <= k < d:
        raise InvalidInputError(f"Need n >= 1 and 0 <= k < d, got n={n}, d={d}, k={k}")
    if target_kind not in TARGET_KINDS:
        raise InvalidInputError(f"Unknown target {target_kind!r}; choose from {', '.join(TARGET_KINDS)}")
    if seed < 0:
        raise InvalidInputError(f"Seeds must be non-negative, got {seed}")
    if tilt < 0 or (tilt > 0 and (k == 0 or k * tilt >= 1)):
        raise InvalidInputError(f"tilt must satisfy 0 <= tilt < 1/k, got tilt={tilt}, k={k}")
    if antipodal_pair and n < 2:
        raise InvalidInputError("An antipodal pair needs n >= 2")

    rng = np.random.default_rng(seed)
    x = _sample_points(rng, n, d, antipodal_pair)
    V = np.stack([_direction_frame(rng, x[i], k, tilt) for i in range(n)])

    if target_kind == "random_labels":
        y = rng.standard_normal(n)
        h = rng.standard_normal((n, k))
    elif target_kind == "quadratic":
        # f*(x) = |x|^2 / 2, so f* = 1/2 on the sphere and grad f* = x
        y = np.full(n, 0.5)
        h = np.einsum('nd,ndk->nk', x, V)
    else:
        teacher = TeacherMLP.from_seed(derive_seed(seed, "teacher"), d)
        y = np.array([teacher.value(xi) for xi in x])
        h = np.stack([V[i].T @ teacher.gradient(x[i]) for i in range(n)])

    return TrainingSet(x=x, y=y, V=V, h=h)


def validate(ts: TrainingSet) -> SeparationReport:
    """Measure separation margins by exhaustive pairwise computation"""
    singleton = ts.n == 1
    if singleton:
        delta1 = delta1_hat = SINGLETON_DELTA1
        console.print(
            f"[yellow]Warning: singleton dataset, using delta1 = {SINGLETON_DELTA1} by convention[/yellow]"
        )
    else:
        upper = np.triu_indices(ts.n, 1)
        minus = np.linalg.norm(ts.x[:, None, :] - ts.x[None, :, :], axis=-1)[upper]
        plus = np.linalg.norm(ts.x[:, None, :] + ts.x[None, :, :], axis=-1)[upper]
        delta1_hat = float(minus.min())
        delta1 = float(min(delta1_hat, plus.min()))

    if ts.k:
        delta2 = float(np.abs(np.einsum('nd,ndk->nk', ts.x, ts.V)).max())
    else:
        delta2 = 0.0
    gamma = float(np.linalg.norm(ts.y) + np.linalg.norm(ts.h))

    return SeparationReport(
        delta1=delta1,
        delta1_hat=delta1_hat,
        delta2=delta2,
        gamma=gamma,
        satisfies_assumption1=bool(delta1 > 0 and ts.k * delta2 < 1),
        satisfies_assumption2=bool(delta1_hat > 0),
        singleton_convention=singleton,
    )


class _RealDumper(yaml.SafeDumper):
    """YAML dumper writing reals with 17 significant digits"""


def _represent_real(dumper: yaml.SafeDumper, value: float) -> yaml.ScalarNode:
    if not np.isfinite(value):
        raise InvalidInputError(f"Cannot serialize non-finite value {value}")
    text = format(value, f".{SERIAL_DIGITS}g")
    if "." not in text:
        mantissa, _, exponent = text.partition("e")
        text = f"{mantissa}.0" + (f"e{exponent}" if exponent else "")
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


_RealDumper.add_representer(float, _represent_real)


def dump_document(path: Path, header: Dict[str, Any], records: List[Dict[str, Any]]) -> None:
    """Write a header mapping plus a list of records as one YAML document"""
    document = dict(header)
    document["records"] = records
    with open(path, "w") as f:
        yaml.dump(document, f, Dumper=_RealDumper, default_flow_style=None, sort_keys=False, width=4096)


def read_document(path: Path, expected_format: str) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    """Read a document written by dump_document, checking its format tag"""
    try:
        with open(path, "r") as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise DatasetParseError(f"{path}: not a valid document: {e}") from e
    if not isinstance(document, dict) or document.get("format") != expected_format:
        raise DatasetParseError(f"{path}: expected a {expected_format} document")
    records = document.pop("records", None)
    if not isinstance(records, list):
        raise DatasetParseError(f"{path}: missing records list")
    return document, records


def read_field(record: Dict[str, Any], key: str, size: int, index: int) -> np.ndarray:
    """Fetch a real-valued field of a record, checking its length"""
    if not isinstance(record, dict) or key not in record:
        raise DatasetParseError(f"missing field {key!r}", record=index)
    try:
        values = np.atleast_1d(np.asarray(record[key], dtype=np.float64))
    except (TypeError, ValueError) as e:
        raise DatasetParseError(f"field {key!r} is not real-valued: {e}", record=index) from e
    if values.ndim != 1 or values.size != size:
        raise DatasetParseError(f"field {key!r} has {values.size} values, expected {size}", record=index)
    return values


def save(ts: TrainingSet, path: Path, manifest: Optional[str] = None) -> None:
    header: Dict[str, Any] = {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "n": ts.n,
        "d": ts.d,
        "k": ts.k,
    }
    if manifest:
        header["manifest"] = manifest
    records = [
        {
            "x": ts.x[i].tolist(),
            "y": float(ts.y[i]),
            "V": ts.V[i].flatten(order="F").tolist(),
            "h": ts.h[i].tolist(),
        }
        for i in range(ts.n)
    ]
    dump_document(Path(path), header, records)


def load(path: Path) -> TrainingSet:
    header, records = read_document(Path(path), DATASET_FORMAT)
    try:
        n, d, k = (int(header[key]) for key in ("n", "d", "k"))
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetParseError(f"{path}: header needs integer n, d, k") from e
    if len(records) != n:
        raise DatasetParseError(f"{path}: header says n={n} but {len(records)} records found")

    x = np.empty((n, d))
    y = np.empty(n)
    V = np.empty((n, d, k))
    h = np.empty((n, k))
    for i, record in enumerate(records):
        x[i] = read_field(record, "x", d, i)
        y[i] = read_field(record, "y", 1, i)[0]
        V[i] = read_field(record, "V", d * k, i).reshape(k, d).T
        h[i] = read_field(record, "h", k, i)
    return TrainingSet(x=x, y=y, V=V, h=h)
