"""Dense 4-D tensor engine with reverse-mode automatic differentiation.

Everything that flows through a network is a :class:`Tensor` holding a
``(N, C, H, W)`` float array (float32 by default, float64 for gradient
checking).  "Vectors" such as biases and batch-norm parameters use the
channel-shaped convention ``(1, C, 1, 1)``; scalars such as losses are
``(1, 1, 1, 1)``.

Ops record a computation graph as closures on their output tensor.
``backward(loss)`` walks the graph once in reverse topological order and
*accumulates* into every reachable ``.grad`` buffer, so weight sharing
(the same tensor used by several ops) sums its per-use gradients
automatically.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class GraphError(RuntimeError):
    """Backward called on a consumed or detached graph."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where only finite values are valid."""


_grad_enabled = True
_finite_checks = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op NaN/Inf validation; returns the previous setting."""
    global _finite_checks
    prev = _finite_checks
    _finite_checks = enabled
    return prev


def _validate_finite(arr: np.ndarray, where: str) -> None:
    if _finite_checks and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {where}")


class Tensor:
    """A 4-D array plus an optional gradient buffer and graph linkage."""

    def __init__(self, data, requires_grad: bool = False, _parents=()):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        if data.ndim != 4:
            raise ShapeError(f"tensors are (N, C, H, W); got shape {data.shape}")
        if not _parents:
            # op outputs are checked in _make_out; leaves get checked here
            _validate_finite(data, "tensor data")
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = None
        self._backward_ran = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            # copy: g may be a view into another grad buffer
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, c: float) -> "Tensor":
        return scale(self, c)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def _make_out(data: np.ndarray, parents, backward_builder, where: str) -> Tensor:
    """Wrap an op result, attaching the backward closure if recording."""
    _validate_finite(data, where)
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, _parents=parents if track else ())
    if track:
        out._backward = backward_builder(out)
    return out


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss node.

    Accumulates (adds) into the ``.grad`` of every tensor reachable from
    ``loss``.  Each recorded graph may be consumed exactly once.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward_ran:
        raise GraphError("backward already ran on this graph; re-record the forward pass first")
    if loss._backward is None and not loss._parents:
        raise GraphError("loss is detached: no recorded ops lead to it")
    loss._backward_ran = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node._backward = None  # release saved activations


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    data = a.data + b.data

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g)
        return bwd

    return _make_out(data, (a, b), build, "add output")


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a Python float (non-learnable)."""
    c = float(c)
    data = x.data * np.asarray(c, dtype=x.dtype)

    def build(out):
        def bwd(g):
            if x.requires_grad:
                x.accumulate_grad(g * np.asarray(c, dtype=g.dtype))
        return bwd

    return _make_out(data, (x,), build, "scale output")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    data = a.data * b.data

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g * b.data)
            if b.requires_grad:
                b.accumulate_grad(g * a.data)
        return bwd

    return _make_out(data, (a, b), build, "mul output")


def tsum(x: Tensor) -> Tensor:
    """Sum all elements into a (1,1,1,1) scalar."""
    data = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype).reshape(1, 1, 1, 1)

    def build(out):
        def bwd(g):
            if x.requires_grad:
                x.accumulate_grad(np.broadcast_to(g.reshape(()), x.shape).astype(x.dtype, copy=False))
        return bwd

    return _make_out(data, (x,), build, "tsum output")


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def build(out):
        mask = out.data > 0  # input > 0 exactly; subgradient at 0 is 0

        def bwd(g):
            if x.requires_grad:
                x.accumulate_grad(g * mask)
        return bwd

    return _make_out(data, (x,), build, "relu output")


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis, in list order."""
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        pn, _, ph, pw = p.shape
        if (pn, ph, pw) != (n, h, w):
            raise ShapeError(f"concat_channels batch/spatial mismatch: {parts[0].shape} vs {p.shape}")
    data = np.concatenate([p.data for p in parts], axis=1)

    def build(out):
        widths = [p.shape[1] for p in parts]

        def bwd(g):
            ofs = 0
            for p, c in zip(parts, widths):
                if p.requires_grad:
                    p.accumulate_grad(g[:, ofs:ofs + c])
                ofs += c
        return bwd

    return _make_out(data, tuple(parts), build, "concat output")


def weighted_sum(parts: list[Tensor], weights: Tensor) -> Tensor:
    """Sum ``weights[m] * parts[m]`` over m; weights is an (M,1,1,1) tensor."""
    m = len(parts)
    if weights.shape != (m, 1, 1, 1):
        raise ShapeError(f"weighted_sum needs ({m},1,1,1) weights, got {weights.shape}")
    shape = parts[0].shape
    for p in parts[1:]:
        if p.shape != shape:
            raise ShapeError("weighted_sum parts must share one shape")
    w = weights.data.reshape(m)
    data = np.zeros(shape, dtype=parts[0].dtype)
    for k in range(m):
        data += w[k] * parts[k].data

    def build(out):
        def bwd(g):
            for k in range(m):
                if parts[k].requires_grad:
                    parts[k].accumulate_grad(g * w[k])
            if weights.requires_grad:
                gw = np.array([(g * parts[k].data).sum() for k in range(m)], dtype=g.dtype)
                weights.accumulate_grad(gw.reshape(m, 1, 1, 1))
        return bwd

    return _make_out(data, tuple(parts) + (weights,), build, "weighted_sum output")


def mse_half(pred: Tensor, target: Tensor, scale_factor: float) -> Tensor:
    """``scale_factor * sum((pred - target)**2)`` as a (1,1,1,1) scalar.

    Pass ``scale_factor = 1 / (2 * batch)`` for the halved per-batch
    squared-error objective.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"mse_half shape mismatch: {pred.shape} vs {target.shape}")
    s = float(scale_factor)
    diff = pred.data - target.data
    val = np.asarray(s * (diff * diff).sum(dtype=np.float64), dtype=pred.dtype)
    data = val.reshape(1, 1, 1, 1)

    def build(out):
        def bwd(g):
            coeff = 2.0 * s * g.reshape(())
            if pred.requires_grad:
                pred.accumulate_grad((coeff * diff).astype(pred.dtype, copy=False))
            if target.requires_grad:
                target.accumulate_grad((-coeff * diff).astype(target.dtype, copy=False))
        return bwd

    return _make_out(data, (pred, target), build, "mse_half output")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(x_nchw: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    """Flatten kh*kw patches into a GEMM operand of shape (N*OH*OW, kh*kw*C).

    Works in NHWC internally so the per-offset copies are contiguous along
    the channel axis.
    """
    n, c, h, w = x_nchw.shape
    oh = h + 2 * pad - kh + 1
    ow = w + 2 * pad - kw + 1
    xt = np.ascontiguousarray(x_nchw.transpose(0, 2, 3, 1))
    if kh == 1 and kw == 1 and pad == 0:
        return xt.reshape(n * h * w, c)
    xp = np.pad(xt, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xt
    col = np.empty((n, oh, ow, kh, kw, c), dtype=x_nchw.dtype)
    for i in range(kh):
        for j in range(kw):
            col[:, :, :, i, j, :] = xp[:, i:i + oh, j:j + ow, :]
    return col.reshape(n * oh * ow, kh * kw * c)


def _col2im(dcol: np.ndarray, n: int, c: int, h: int, w: int, kh: int, kw: int, pad: int) -> np.ndarray:
    """Scatter-add column gradients back to an (N,C,H,W) input gradient."""
    oh = h + 2 * pad - kh + 1
    ow = w + 2 * pad - kw + 1
    if kh == 1 and kw == 1 and pad == 0:
        dxt = dcol.reshape(n, h, w, c)
    else:
        dc = dcol.reshape(n, oh, ow, kh, kw, c)
        dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dcol.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + oh, j:j + ow, :] += dc[:, :, :, i, j, :]
        dxt = dxp[:, pad:pad + h, pad:pad + w, :] if pad else dxp
    return np.ascontiguousarray(dxt.transpose(0, 3, 1, 2))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, pad: int | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero padding.

    ``x`` is (N,Cin,H,W), ``weight`` is (Cout,Cin,kh,kw) with kh == kw odd,
    ``bias`` is (1,Cout,1,1) or None.  ``pad`` defaults to (k-1)//2, which
    preserves the spatial size.
    """
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, weight expects {wcin}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d kernels must be square and odd, got {kh}x{kw}")
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise ShapeError(f"conv2d bias must be (1,{cout},1,1), got {bias.shape}")
    if pad is None:
        pad = (kh - 1) // 2
    oh = h + 2 * pad - kh + 1
    ow = w + 2 * pad - kw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be empty for input {h}x{w}, kernel {kh}, pad {pad}")

    cols = _im2col(x.data, kh, kw, pad)
    # weight reordered to match the (kh, kw, C) column layout
    wmat = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout))
    out_mat = cols @ wmat
    data = np.ascontiguousarray(out_mat.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))
    if bias is not None:
        data += bias.data

    def build(out):
        saved_cols = cols  # keep the column matrix for the weight gradient

        def bwd(g):
            gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, cout)
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(gmat.sum(axis=0, dtype=g.dtype).reshape(1, cout, 1, 1))
            if weight.requires_grad:
                dwmat = saved_cols.T @ gmat  # (kh*kw*Cin, Cout)
                weight.accumulate_grad(
                    np.ascontiguousarray(dwmat.reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)))
            if x.requires_grad:
                dcols = gmat @ wmat.T
                x.accumulate_grad(_col2im(dcols, n, cin, h, w, kh, kw, pad))
        return bwd

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make_out(data, parents, build, "conv2d output")


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, mode: str, eps: float = 1e-5,
              momentum: float = 0.9) -> Tensor:
    """Per-channel batch normalization over the (N,H,W) axes.

    Train mode normalizes with batch statistics (biased variance) and
    updates the running buffers in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    Eval mode normalizes with the running buffers; they are never touched.
    """
    if eps <= 0:
        raise ValueError(f"batchnorm eps must be positive, got {eps}")
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    c = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (1, c, 1, 1):
            raise ShapeError(f"batchnorm {name} must be (1,{c},1,1), got {t.shape}")
    if running_mean.shape != (1, c, 1, 1) or running_var.shape != (1, c, 1, 1):
        raise ShapeError("batchnorm running stats must be (1,C,1,1) buffers")

    if mode == "train":
        mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean.copy()
        var = running_var.copy()

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    data = gamma.data * xhat + beta.data

    def build(out):
        def bwd(g):
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3), keepdims=True))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=(0, 2, 3), keepdims=True))
            if x.requires_grad:
                gx = g * gamma.data
                if mode == "train":
                    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                    sum_gx = gx.sum(axis=(0, 2, 3), keepdims=True)
                    sum_gx_xhat = (gx * xhat).sum(axis=(0, 2, 3), keepdims=True)
                    dx = inv_std / m * (m * gx - sum_gx - xhat * sum_gx_xhat)
                else:
                    dx = gx * inv_std
                x.accumulate_grad(dx.astype(x.dtype, copy=False))
        return bwd

    return _make_out(data, (x, gamma, beta), build, "batchnorm output")
