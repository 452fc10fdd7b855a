"""
Diferenciación automática en modo reverso sobre matrices densas (float64).

Diseño:
- `Tensor` envuelve un arreglo numpy 2-D de float64.
- `Tape` registra cada operación en orden de creación mientras está activa
  (`with Tape() as tape:`). La cinta activa vive en un ContextVar, así cada
  hilo/worker tiene la suya y no hay estado global compartido.
- Fuera de una cinta no se registra nada (evaluación sin costo extra).
- `backward` recorre los registros en orden inverso, una sola vez cada uno,
  y acumula (suma) gradientes sobre las hojas con requires_grad.
"""

from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import DegenerateInput, NotScalar, ShapeMismatch

ArrayLike = Union[np.ndarray, float, int, Sequence]
Vjp = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("ndiff_active_tape", default=None)


def _as_matrix(value: ArrayLike) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeMismatch("tensor", arr.shape, "a 2-D matrix")
    return arr


class Tensor:
    """Matriz densa que participa en la cinta de gradientes."""

    __slots__ = ("value", "requires_grad", "grad", "name", "_tape")

    def __init__(self, value: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.value = _as_matrix(value)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional["Tape"] = None

    @classmethod
    def _wrap(cls, value: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.value = value
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._tape = None
        return out

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.shape != (1, 1):
            raise NotScalar(self.shape)
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._tape is None:
            raise ValueError("tensor was not produced under an active Tape")
        self._tape.backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # operadores
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        if np.isscalar(other):
            return add_scalar(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return add_scalar(self, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x: Union["Tensor", ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value: ArrayLike, name: Optional[str] = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


# ============================================================================
# CINTA
# ============================================================================

@dataclass
class _Record:
    out: Tensor
    inputs: Tuple[Tensor, ...]
    vjp: Vjp
    op: str


class Tape:
    """Secuencia ordenada de registros de operaciones."""

    def __init__(self):
        self.records: List[_Record] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def _append(self, out: Tensor, inputs: Tuple[Tensor, ...], vjp: Vjp, op: str) -> None:
        out._tape = self
        self.records.append(_Record(out, inputs, vjp, op))

    def backward(self, loss: Tensor) -> None:
        if loss.shape != (1, 1):
            raise NotScalar(loss.shape)
        if loss._tape is None:
            if loss.requires_grad:
                loss.grad = np.ones((1, 1)) if loss.grad is None else loss.grad + 1.0
            return
        pending: Dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.out), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._tape is None:
                    # hoja: acumular en .grad
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                else:
                    prev = pending.get(id(t))
                    pending[id(t)] = gi if prev is None else prev + gi

    def clear(self) -> None:
        for rec in self.records:
            rec.out._tape = None
        self.records.clear()


def _make(value: np.ndarray, inputs: Tuple[Tensor, ...], vjp: Vjp, op: str) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(value, requires)
    tape = _active_tape.get()
    if requires and tape is not None:
        tape._append(out, inputs, vjp, op)
    return out


def _sum_to(g: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if b.shape != a.shape and b.shape != (1, a.cols):
        raise ShapeMismatch(op, b.shape, f"{a.shape} or (1, {a.cols})")


# ============================================================================
# PRIMITIVAS
# ============================================================================

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeMismatch("matmul", (a.shape, b.shape), "inner dimensions to agree")
    av, bv = a.value, b.value

    def vjp(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return _make(av @ bv, (a, b), vjp, "matmul")


def add(a, b) -> Tensor:
    """a + b; b puede ser una fila 1×cols que se difunde sobre las filas de a."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    shape_b = b.shape
    return _make(a.value + b.value, (a, b), lambda g: (g, _sum_to(g, shape_b)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    shape_b = b.shape
    return _make(a.value - b.value, (a, b), lambda g: (g, -_sum_to(g, shape_b)), "sub")


def mul(a, b) -> Tensor:
    """Producto elemento a elemento (b con difusión por filas)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value

    def vjp(g):
        return g * bv, _sum_to(g * av, bv.shape)

    return _make(av * bv, (a, b), vjp, "mul")


def add_scalar(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.value + c, (a,), lambda g: (g,), "add_scalar")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat_rows(*tensors) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    cols = ts[0].cols
    for t in ts[1:]:
        if t.cols != cols:
            raise ShapeMismatch("concat_rows", t.shape, f"(*, {cols})")
    bounds = np.cumsum([0] + [t.rows for t in ts])

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _make(np.vstack([t.value for t in ts]), ts, vjp, "concat_rows")


def concat_cols(*tensors) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    rows = ts[0].rows
    for t in ts[1:]:
        if t.rows != rows:
            raise ShapeMismatch("concat_cols", t.shape, f"({rows}, *)")
    bounds = np.cumsum([0] + [t.cols for t in ts])

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _make(np.hstack([t.value for t in ts]), ts, vjp, "concat_cols")


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= start < stop <= a.cols:
        raise ShapeMismatch("slice_cols", (start, stop), f"0 <= start < stop <= {a.cols}")
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _make(a.value[:, start:stop].copy(), (a,), vjp, "slice_cols")


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= start < stop <= a.rows:
        raise ShapeMismatch("slice_rows", (start, stop), f"0 <= start < stop <= {a.rows}")
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _make(a.value[start:stop].copy(), (a,), vjp, "slice_rows")


def tile_rows(a, n: int) -> Tensor:
    """Repite una fila 1×c en n filas."""
    a = as_tensor(a)
    if a.rows != 1:
        raise ShapeMismatch("tile_rows", a.shape, "(1, *)")
    return _make(np.repeat(a.value, n, axis=0), (a,), lambda g: (g.sum(axis=0, keepdims=True),), "tile_rows")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _make(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    # forma estable para |x| grande
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (a,), vjp, "softmax_rows")


def mean_rows_masked(a, mask: ArrayLike) -> Tensor:
    """Media (1×cols) de las filas de `a` con mask != 0."""
    a = as_tensor(a)
    m = np.asarray(mask, dtype=np.float64).reshape(-1)
    if m.shape[0] != a.rows:
        raise ShapeMismatch("mean_rows_masked", m.shape, f"({a.rows},)")
    count = m.sum()
    if count <= 0:
        raise DegenerateInput("mean_rows_masked: mask selects no rows")
    w = (m / count).reshape(1, -1)
    return _make(w @ a.value, (a,), lambda g: (w.T @ g,), "mean_rows_masked")


def scatter_add_rows(a, dst: ArrayLike, src: ArrayLike, weights: ArrayLike, n_rows: int) -> Tensor:
    """
    y[dst[k]] += weights[k] · a[src[k]] para cada k: producto por una matriz
    dispersa n_rows×rows(a) dada en coordenadas, sin materializarla.
    """
    a = as_tensor(a)
    dst = np.asarray(dst, dtype=np.int64).reshape(-1)
    src = np.asarray(src, dtype=np.int64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    if not (dst.shape == src.shape == (w.shape[0],)):
        raise ShapeMismatch("scatter_add_rows", (dst.shape, src.shape, w.shape), "one weight per (dst, src) pair")
    if src.size and (src.min() < 0 or src.max() >= a.rows or dst.min() < 0 or dst.max() >= n_rows):
        raise ShapeMismatch("scatter_add_rows", (n_rows, a.rows), "indices inside both row ranges")
    y = np.zeros((n_rows, a.cols))
    np.add.at(y, dst, w * a.value[src])

    def vjp(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, src, w * g[dst])
        return (ga,)

    return _make(y, (a,), vjp, "scatter_add_rows")


def l2_normalize_rows(a, eps: float = 1e-12) -> Tensor:
    a = as_tensor(a)
    norms = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    n = np.maximum(norms, eps)
    y = a.value / n
    live = norms > eps

    def vjp(g):
        proj = (g * y).sum(axis=1, keepdims=True)
        return (np.where(live, (g - y * proj) / n, 0.0),)

    return _make(y, (a,), vjp, "l2_normalize_rows")


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,), "log")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _make(a.value.sum().reshape(1, 1), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum_all")


# ============================================================================
# OPTIMIZACIÓN
# ============================================================================

@dataclass
class AdamState:
    """Momentos por parámetro (m, v) y contador de pasos t."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Mapping[str, Tensor],
    state: AdamState,
    lr: float,
    grads: Optional[Mapping[str, np.ndarray]] = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """
    Paso de Adam con corrección de sesgo, aplicado in-place sobre `params`.

    Si `grads` es None se usan los `.grad` de cada parámetro (None cuenta como cero).
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.value)
        if g.shape != p.shape:
            raise ShapeMismatch("adam_step", g.shape, p.shape)
        m = state.m.setdefault(name, np.zeros_like(p.value))
        v = state.v.setdefault(name, np.zeros_like(p.value))
        if m.shape != p.shape:
            raise ShapeMismatch("adam_step", m.shape, p.shape)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Recorta la norma L2 global de los gradientes; devuelve la norma previa."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            p.grad = p.grad * factor
    return total


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
) -> Dict[str, float]:
    """
    Compara gradientes analíticos con diferencias centrales.

    Devuelve, por parámetro, ||a - n|| / max(||a|| + ||n||, 1e-12).
    """
    zero_grad(params.values())
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    errors: Dict[str, float] = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.value)
        numeric = np.zeros_like(p.value)
        for idx in np.ndindex(*p.shape):
            orig = p.value[idx]
            p.value[idx] = orig + step
            up = loss_fn().item()
            p.value[idx] = orig - step
            down = loss_fn().item()
            p.value[idx] = orig
            numeric[idx] = (up - down) / (2.0 * step)
        denom = max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), 1e-12)
        errors[name] = float(np.linalg.norm(analytic - numeric)) / denom
    zero_grad(params.values())
    return errors
