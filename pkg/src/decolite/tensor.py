"""Reverse-mode autodiff over dense float64 arrays of rank <= 3.

This module implements exactly the primitives the LITE classifier and its
training losses need: dilated/grouped 1-D convolution with "same" padding,
batch normalization, ReLU, global average pooling, an affine head, softmax
cross-entropy, pairwise cosine-similarity matrices, channel concatenation
and a few elementwise/reduction helpers.

Each operation records its parent tensors and a gradient closure on the
output, so the autodiff graph is the DAG of :class:`Tensor` nodes reached
through ``_parents``. :func:`backward` walks that DAG once in reverse
topological order from a scalar root and accumulates gradients into every
tensor with ``requires_grad`` set. Operations whose inputs carry no
gradient record nothing, which keeps frozen-model forwards allocation-light.

All arithmetic is float64 and every reduction uses a fixed accumulation
order, so identical inputs produce bit-identical outputs on one platform.
Non-finite values are rejected when data enters the graph (leaf
construction); downstream layers re-check their activations explicitly.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InputError, NumericError, ShapeError, StateError, UsageError

__all__ = [
    "Tensor",
    "as_tensor",
    "assert_finite",
    "backward",
    "conv1d",
    "batch_norm_1d",
    "relu",
    "global_avg_pool",
    "dense",
    "softmax_cross_entropy",
    "cosine_similarity_matrix",
    "concat_channels",
    "absolute",
    "sum_all",
]


class Tensor:
    """Dense float64 array of rank <= 3 with an optional gradient slot.

    Construct leaves directly (``Tensor(data, requires_grad=True)`` for
    trainable parameters, plain ``Tensor(data)`` for inputs). Operation
    results are built internally and carry the closures backpropagation
    needs. Leaf construction rejects NaN/Inf.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"tensors are limited to rank 3, got rank {arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values rejected at graph boundary")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @classmethod
    def _op(cls, data: np.ndarray, parents: tuple["Tensor", ...], grad_fn) -> "Tensor":
        # Internal results skip the finite check; layers that must report
        # divergence scan their own outputs.
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        if any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = parents
            t._backward = grad_fn
        else:
            t.requires_grad = False
            t._parents = ()
            t._backward = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same values with no graph history."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        return t

    def backward(self) -> None:
        backward(self)

    # Only the arithmetic the loss pipeline needs: tensor + tensor and
    # tensor * tensor of matching shape, and multiplication by a python
    # scalar or a constant ndarray that broadcasts against this tensor.
    def __add__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            return NotImplemented
        if self.shape != other.shape:
            raise ShapeError(f"add shape mismatch: {self.shape} vs {other.shape}")
        out = self.data + other.data
        a, b = self, other

        def grad_fn(g):
            if a.requires_grad:
                _accumulate(a, g)
            if b.requires_grad:
                _accumulate(b, g)

        return Tensor._op(out, (self, other), grad_fn)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if self.shape != other.shape:
                raise ShapeError(f"mul shape mismatch: {self.shape} vs {other.shape}")
            out = self.data * other.data
            a, b = self, other

            def grad_fn(g):
                if a.requires_grad:
                    _accumulate(a, g * b.data)
                if b.requires_grad:
                    _accumulate(b, g * a.data)

            return Tensor._op(out, (self, other), grad_fn)
        const = np.asarray(other, dtype=np.float64)
        out = self.data * const
        if out.shape != self.shape:
            raise ShapeError("constant factor must broadcast to the tensor's own shape")
        src = self

        def grad_fn(g):
            if src.requires_grad:
                _accumulate(src, g * const)

        return Tensor._op(out, (self,), grad_fn)

    __rmul__ = __mul__

    def __repr__(self) -> str:  # pragma: no cover
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def as_tensor(x) -> Tensor:
    """Wrap plain array data as a constant leaf; pass tensors through."""
    return x if isinstance(x, Tensor) else Tensor(x)


def assert_finite(values, context: str) -> None:
    """Raise :class:`NumericError` naming ``context`` if values are not finite."""
    arr = values.data if isinstance(values, Tensor) else values
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {context}")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar root.

    Gradients accumulate into ``.grad`` of every reachable tensor with
    ``requires_grad``; repeated calls without clearing grads keep adding.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor root")
    if loss.data.shape != ():
        raise UsageError(f"backward requires a scalar root, got shape {loss.data.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    # Interior grads are scratch space for this sweep; leaf grads persist
    # so that successive sweeps accumulate.
    for node in order:
        if node._backward is not None:
            node.grad = None
    _accumulate(loss, np.ones((), dtype=np.float64))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# convolution


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, *,
           dilation: int = 1, groups: int = 1) -> Tensor:
    """Grouped, dilated 1-D cross-correlation with zero "same" padding.

    ``x`` is (B, Cin, T), ``kernel`` is (Cout, Cin/groups, K) and the
    optional ``bias`` is (Cout,). No kernel flip is applied. Padding splits
    the span (K-1)*dilation as floor/ceil halves (left/right), so the
    output keeps length T exactly.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError("conv1d expects rank-3 input and kernel")
    if dilation < 1 or groups < 1:
        raise ConfigError("dilation and groups must be positive")
    b, cin, t = x.shape
    cout, cg, klen = kernel.shape
    if cin % groups or cout % groups:
        raise ShapeError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cg != cin // groups:
        raise ShapeError(f"kernel expects {cg} channels per group, input provides {cin // groups}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")

    span = (klen - 1) * dilation
    pad_left = span // 2
    xp = np.zeros((b, cin, t + span), dtype=np.float64)
    xp[:, :, pad_left:pad_left + t] = x.data

    out, saved = _conv_forward(xp, kernel.data, dilation, groups, t)
    if bias is not None:
        out += bias.data[None, :, None]

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def grad_fn(g):
        if x.requires_grad or kernel.requires_grad:
            gxp, gk = _conv_backward(saved, g, need_input=x.requires_grad,
                                     need_kernel=kernel.requires_grad)
            if x.requires_grad:
                _accumulate(x, gxp[:, :, pad_left:pad_left + t])
            if kernel.requires_grad:
                _accumulate(kernel, gk)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2)))

    return Tensor._op(out, parents, grad_fn)


def _dilated_windows(arr: np.ndarray, klen: int, dilation: int) -> np.ndarray:
    """Strided view whose last axis holds the k dilated taps per position."""
    span = (klen - 1) * dilation
    return np.lib.stride_tricks.sliding_window_view(arr, span + 1, axis=-1)[..., ::dilation]


def _conv_forward(xp: np.ndarray, k: np.ndarray, dilation: int, groups: int, t_out: int):
    b, cin, _ = xp.shape
    cout, cg, klen = k.shape
    if cin == 1 and groups == 1:
        # Single input channel: materialize the window matrix once and use
        # one GEMM (the multiplexed first layer and the custom filters).
        win = np.ascontiguousarray(_dilated_windows(xp[:, 0, :], klen, dilation))
        k2 = k[:, 0, :]
        out = np.ascontiguousarray((win @ k2.T).transpose(0, 2, 1))
        return out, ("im2col", xp, k, dilation, win)
    if groups == cin and cout == cin and cg == 1:
        # Depthwise: contract the strided window view against the per-channel
        # taps without materializing it.
        w = k[:, 0, :]
        win = _dilated_windows(xp, klen, dilation)
        out = np.einsum("bctk,ck->bct", win, w, optimize=True)
        return out, ("depthwise", xp, k, dilation, None)
    if groups == 1:
        # Time-major accumulation so each tap is one batched GEMM.
        xpt = np.ascontiguousarray(xp.transpose(0, 2, 1))
        out_t = np.zeros((b, t_out, cout), dtype=np.float64)
        for i in range(klen):
            off = i * dilation
            out_t += xpt[:, off:off + t_out, :] @ k[:, :, i].T
        out = np.ascontiguousarray(out_t.transpose(0, 2, 1))
        return out, ("timemajor", xp, k, dilation, xpt)
    og = cout // groups
    xg = xp.reshape(b, groups, cg, -1)
    kg = k.reshape(groups, og, cg, klen)
    out = np.zeros((b, groups, og, t_out), dtype=np.float64)
    for i in range(klen):
        off = i * dilation
        seg = xg[:, :, :, off:off + t_out]
        out += np.einsum("bgct,goc->bgot", seg, kg[:, :, :, i], optimize=True)
    return out.reshape(b, cout, t_out), ("grouped", xp, k, dilation, None)


def _conv_backward(saved, g: np.ndarray, *, need_input: bool, need_kernel: bool):
    path, xp, k, dilation, extra = saved
    b, cin, tp = xp.shape
    cout, cg, klen = k.shape
    t = g.shape[2]
    span = (klen - 1) * dilation
    gxp = gk = None

    if path == "im2col":
        win = extra
        gt = g.transpose(0, 2, 1)
        if need_kernel:
            gk = np.tensordot(gt, win, axes=([0, 1], [0, 1]))[:, None, :]
        if need_input:
            gwin = gt @ k[:, 0, :]
            gxp = np.zeros_like(xp)
            for i in range(klen):
                off = i * dilation
                gxp[:, 0, off:off + t] += gwin[:, :, i]
        return gxp, gk

    if path == "depthwise":
        w = k[:, 0, :]
        if need_kernel:
            win = _dilated_windows(xp, klen, dilation)
            gk = np.einsum("bctk,bct->ck", win, g, optimize=True)[:, None, :]
        if need_input:
            # The input gradient is the correlation of the zero-extended
            # output gradient with the tap-reversed kernel.
            gz = np.zeros((b, cin, t + 2 * span), dtype=np.float64)
            gz[:, :, span:span + t] = g
            gwin = _dilated_windows(gz, klen, dilation)
            gxp = np.einsum("bctk,ck->bct", gwin, w[:, ::-1], optimize=True)
        return gxp, gk

    if path == "timemajor":
        xpt = extra
        gt = np.ascontiguousarray(g.transpose(0, 2, 1))
        if need_kernel:
            gk = np.empty_like(k)
            for i in range(klen):
                off = i * dilation
                gk[:, :, i] = np.tensordot(gt, xpt[:, off:off + t, :], axes=([0, 1], [0, 1]))
        if need_input:
            gxpt = np.zeros((b, tp, cin), dtype=np.float64)
            for i in range(klen):
                off = i * dilation
                gxpt[:, off:off + t, :] += gt @ k[:, :, i]
            gxp = np.ascontiguousarray(gxpt.transpose(0, 2, 1))
        return gxp, gk

    groups = cin // cg
    og = cout // groups
    xg = xp.reshape(b, groups, cg, tp)
    gg = g.reshape(b, groups, og, t)
    kg = k.reshape(groups, og, cg, klen)
    gxp = np.zeros_like(xp) if need_input else None
    gk = np.zeros_like(k) if need_kernel else None
    gxg = gxp.reshape(b, groups, cg, tp) if need_input else None
    gkg = gk.reshape(groups, og, cg, klen) if need_kernel else None
    for i in range(klen):
        off = i * dilation
        if need_input:
            gxg[:, :, :, off:off + t] += np.einsum("bgot,goc->bgct", gg, kg[:, :, :, i],
                                                   optimize=True)
        if need_kernel:
            gkg[:, :, :, i] = np.einsum("bgot,bgct->goc", gg, xg[:, :, :, off:off + t],
                                        optimize=True)
    return gxp, gk


# ---------------------------------------------------------------------------
# normalization and activations


def batch_norm_1d(x: Tensor, gamma: Tensor, beta: Tensor,
                  running_mean: np.ndarray | None = None,
                  running_var: np.ndarray | None = None, *,
                  mode: str = "train", momentum: float = 0.9,
                  eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over the batch and time axes jointly.

    Train mode normalizes with the batch's population statistics and, when
    running buffers are supplied, updates them in place as
    ``running = momentum * running + (1 - momentum) * batch``. Eval mode
    normalizes with the running buffers only and requires them.
    """
    x = as_tensor(x)
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    if x.ndim != 3:
        raise ShapeError("batch_norm_1d expects input of shape (B, C, T)")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("gamma/beta must have one entry per channel")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if mode not in ("train", "eval"):
        raise UsageError(f"unknown batch norm mode {mode!r}")

    if mode == "eval":
        if running_mean is None or running_var is None:
            raise StateError("eval-mode batch norm requires initialized running statistics")
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None]) * inv[None, :, None]
    else:
        mean = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        if running_mean is not None:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mean
        if running_var is not None:
            running_var *= momentum
            running_var += (1.0 - momentum) * var
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean[None, :, None]) * inv[None, :, None]

    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]
    m = x.shape[0] * x.shape[2]
    train_mode = mode == "train"

    def grad_fn(g):
        if gamma.requires_grad:
            _accumulate(gamma, np.einsum("bct,bct->c", g, xhat))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2)))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None]
            if train_mode:
                # Batch statistics depend on x, so their gradient terms
                # (mean and xhat-projection removal) are included.
                s1 = dxhat.sum(axis=(0, 2)) / m
                s2 = np.einsum("bct,bct->c", dxhat, xhat) / m
                gx = inv[None, :, None] * (dxhat - s1[None, :, None]
                                           - xhat * s2[None, :, None])
            else:
                gx = dxhat * inv[None, :, None]
            _accumulate(x, gx)

    return Tensor._op(out, (x, gamma, beta), grad_fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def grad_fn(g):
        if x.requires_grad:
            _accumulate(x, g * (x.data > 0.0))

    return Tensor._op(out, (x,), grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the time axis: (B, C, T) -> (B, C)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError("global_avg_pool expects input of shape (B, C, T)")
    t = x.shape[2]
    out = x.data.mean(axis=2)

    def grad_fn(g):
        if x.requires_grad:
            gx = np.empty_like(x.data)
            gx[:] = g[:, :, None] / t
            _accumulate(x, gx)

    return Tensor._op(out, (x,), grad_fn)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map (B, C) @ weight.T + bias with weight (Cls, C)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError("dense expects rank-2 input and weight")
    if weight.shape[1] != x.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense shapes incompatible: x{x.shape} w{weight.shape} b{bias.shape}")
    out = x.data @ weight.data.T + bias.data[None, :]

    def grad_fn(g):
        if x.requires_grad:
            _accumulate(x, g @ weight.data)
        if weight.requires_grad:
            _accumulate(weight, g.T @ x.data)
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))

    return Tensor._op(out, (x, weight, bias), grad_fn)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -log softmax at the true class.

    ``targets`` is a constant one-hot (B, Cls) array; rows must contain a
    single 1 and zeros elsewhere. Stabilized by max subtraction. The
    gradient with respect to the logits is (softmax - target) / B.
    """
    logits = as_tensor(logits)
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    if logits.ndim != 2 or t.shape != logits.shape:
        raise ShapeError(f"logits {logits.shape} and targets {t.shape} must both be (B, Cls)")
    if not (np.all((t == 0.0) | (t == 1.0)) and np.all(t.sum(axis=1) == 1.0)):
        raise InputError("targets must be one-hot rows")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    b = logits.shape[0]
    out = np.asarray(-(t * logp).sum() / b)
    probs = np.exp(logp)

    def grad_fn(g):
        if logits.requires_grad:
            _accumulate(logits, g * (probs - t) / b)

    return Tensor._op(out, (logits,), grad_fn)


# ---------------------------------------------------------------------------
# similarity, concatenation and reductions


def cosine_similarity_matrix(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Pairwise cosine similarity between the channel rows of two maps.

    Rank-2 inputs (C, T) produce a (C, C) matrix whose entry (i, j) is the
    cosine of a's row i against b's row j; rank-3 inputs (B, C, T) are a
    batch of such maps and produce (B, C, C). The denominator is clamped
    below at ``eps``, so zero-norm rows yield similarity 0 and positive
    per-row rescaling cannot change any entry. Entries stay in [-1, 1].
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ShapeError("cosine_similarity_matrix expects rank-2 or rank-3 inputs")
    if eps <= 0:
        raise ConfigError("eps must be positive")

    squeezed = a.ndim == 2
    ad = a.data[None] if squeezed else a.data
    bd = b.data[None] if squeezed else b.data

    gram = np.einsum("bit,bjt->bij", ad, bd, optimize=True)
    na = np.sqrt(np.einsum("bit,bit->bi", ad, ad))
    nb = np.sqrt(np.einsum("bit,bit->bi", bd, bd))
    denom_raw = na[:, :, None] * nb[:, None, :]
    denom = np.maximum(denom_raw, eps)
    sim = gram / denom
    clamped = denom_raw <= eps

    out = sim[0] if squeezed else sim

    def grad_fn(g):
        gb3 = g[None] if squeezed else g
        gd = gb3 / denom
        gs = gb3 * sim
        gs = np.where(clamped, 0.0, gs)
        if a.requires_grad:
            lin = np.einsum("bij,bjt->bit", gd, bd, optimize=True)
            coef = gs.sum(axis=2)
            coef = np.divide(coef, na * na, out=np.zeros_like(coef), where=na > 0.0)
            ga = lin - ad * coef[:, :, None]
            _accumulate(a, ga[0] if squeezed else ga)
        if b.requires_grad:
            lin = np.einsum("bij,bit->bjt", gd, ad, optimize=True)
            coef = gs.sum(axis=1)
            coef = np.divide(coef, nb * nb, out=np.zeros_like(coef), where=nb > 0.0)
            gb = lin - bd * coef[:, :, None]
            _accumulate(b, gb[0] if squeezed else gb)

    return Tensor._op(out, (a, b), grad_fn)


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate (B, Ci, T) maps along the channel axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise UsageError("concat_channels needs at least one input")
    b, _, t = parts[0].shape
    for p in parts:
        if p.ndim != 3 or p.shape[0] != b or p.shape[2] != t:
            raise ShapeError("concat_channels inputs must agree on batch and time axes")
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.shape[1] for p in parts]

    def grad_fn(g):
        off = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                _accumulate(p, g[:, off:off + w, :])
            off += w

    return Tensor._op(out, tuple(parts), grad_fn)


def absolute(x: Tensor) -> Tensor:
    """Elementwise |x|; the subgradient at 0 is 0."""
    x = as_tensor(x)
    out = np.abs(x.data)

    def grad_fn(g):
        if x.requires_grad:
            _accumulate(x, g * np.sign(x.data))

    return Tensor._op(out, (x,), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a rank-0 tensor."""
    x = as_tensor(x)
    out = np.asarray(x.data.sum())

    def grad_fn(g):
        if x.requires_grad:
            _accumulate(x, np.full_like(x.data, float(g)))

    return Tensor._op(out, (x,), grad_fn)
