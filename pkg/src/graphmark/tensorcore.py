"""Minimal dense-tensor numerics with reverse-mode gradients.

Everything the training stack needs: a small tape-based ``Tensor`` holding a
row-major numpy array, the forward primitives used by the GNN submodels and
the watermark generator nets, a plain SGD step, and the on-disk record format
shared by model checkpoints.

Values are float32 by default; gradient-check tests run the same ops in
float64 by constructing float64 tensors.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"GMRECS1\n"


class ShapeError(ValueError):
    """Incompatible operand shapes."""


class ContractError(RuntimeError):
    """An operation was called outside its contract."""


class RecordFormatError(IOError):
    """Corrupted or truncated checkpoint record file."""


class Tensor:
    """A dense array node on the reverse-mode tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate grads of all reachable tensors; ``self`` must be scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _result(data, parents, backward, dtype):
    out = Tensor(data, dtype=dtype)
    if any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(g @ b.data.T)
        if b.requires_grad or b._parents:
            b._accumulate(a.data.T @ g)

    return _result(out_data, (a, b), backward, a.dtype)


def add(a, b):
    """Elementwise add; ``b`` may also be a (d,) bias broadcast over rows."""
    if a.shape == b.shape:
        pass
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        pass
    else:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are incompatible")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(g)
        if b.requires_grad or b._parents:
            b._accumulate(g if b.shape == g.shape else g.sum(axis=0))

    return _result(out_data, (a, b), backward, a.dtype)


def mul(a, b):
    _check_same_shape(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(g * b.data)
        if b.requires_grad or b._parents:
            b._accumulate(g * a.data)

    return _result(out_data, (a, b), backward, a.dtype)


def scale(a, c):
    c = float(c)

    def backward(g):
        a._accumulate(g * c)

    return _result(a.data * c, (a,), backward, a.dtype)


def pow_const(a, p):
    """Elementwise power with a constant exponent; data must stay positive."""
    p = float(p)
    out_data = a.data ** p

    def backward(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return _result(out_data, (a,), backward, a.dtype)


def relu(a):
    out_data = np.maximum(a.data, 0)

    def backward(g):
        a._accumulate(g * (a.data > 0))

    return _result(out_data, (a,), backward, a.dtype)


def sigmoid(a):
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _result(out_data, (a,), backward, a.dtype)


def dropout(a, p, rng, training):
    """Inverted dropout with a caller-supplied seeded generator."""
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / np.asarray(1.0 - p, dtype=a.dtype)

    def backward(g):
        a._accumulate(g * keep)

    return _result(a.data * keep, (a,), backward, a.dtype)


def transpose(a):
    def backward(g):
        a._accumulate(g.T)

    return _result(a.data.T, (a,), backward, a.dtype)


def reshape(a, shape):
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backward, a.dtype)


def slice2d(a, rows, cols):
    """Top-left (rows, cols) block of a 2-D tensor."""
    def backward(g):
        full = np.zeros_like(a.data)
        full[:rows, :cols] = g
        a._accumulate(full)

    return _result(a.data[:rows, :cols].copy(), (a,), backward, a.dtype)


def sum_pool_rows(a):
    """Sum a (n, d) tensor over rows to a (1, d) tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"sum_pool_rows: expected 2-D input, got shape {a.shape}")
    out_data = a.data.sum(axis=0, keepdims=True)

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _result(out_data, (a,), backward, a.dtype)


def ste_gt(a, threshold):
    """Hard indicator a > threshold with a straight-through backward pass."""
    out_data = (a.data > threshold).astype(a.dtype)

    def backward(g):
        a._accumulate(g)

    return _result(out_data, (a,), backward, a.dtype)


def batch_norm(a, gamma, beta, running_mean, running_var, training, momentum=0.1,
               eps=1e-5, use_batch_stats=None):
    """Per-feature batch norm over rows of a (n, d) tensor.

    Training mode normalizes by batch statistics and updates the running
    buffers in place (biased variance for both, so eval is an exact affine map
    of the tracked statistics). Eval mode uses the running buffers by default;
    ``use_batch_stats=True`` forces batch statistics without touching the
    buffers, for models whose batch is a single graph's node set.
    """
    if a.data.ndim != 2 or gamma.shape != (a.shape[1],):
        raise ShapeError(f"batch_norm: input {a.shape} vs gamma {gamma.shape}")
    d = a.dtype
    batch_stats = training if use_batch_stats is None else use_batch_stats
    if batch_stats:
        mu = a.data.mean(axis=0)
        var = a.data.var(axis=0)
    else:
        mu = running_mean.data
        var = running_var.data
    if training:
        bmu = a.data.mean(axis=0)
        bvar = a.data.var(axis=0)
        running_mean.data = ((1.0 - momentum) * running_mean.data + momentum * bmu).astype(d)
        running_var.data = ((1.0 - momentum) * running_var.data + momentum * bvar).astype(d)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(d)
    x_hat = (a.data - mu) * inv_std
    out_data = gamma.data * x_hat + beta.data

    def backward(g):
        if gamma.requires_grad or gamma._parents:
            gamma._accumulate((g * x_hat).sum(axis=0))
        if beta.requires_grad or beta._parents:
            beta._accumulate(g.sum(axis=0))
        if a.requires_grad or a._parents:
            gx = g * gamma.data
            if batch_stats:
                n = a.shape[0]
                ga = inv_std / n * (n * gx - gx.sum(axis=0) - x_hat * (gx * x_hat).sum(axis=0))
            else:
                ga = gx * inv_std
            a._accumulate(ga.astype(d))

    return _result(out_data, (a, gamma, beta), backward, d)


def softmax_cross_entropy(logits, target):
    """Cross-entropy of a single (C,) or (1, C) logit vector against a class index."""
    flat = logits.data.reshape(-1)
    c = flat.shape[0]
    if not 0 <= target < c:
        raise ContractError(f"target {target} out of range for {c} classes")
    shifted = flat - flat.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = log_z - shifted[target]
    probs = np.exp(shifted - log_z)

    def backward(g):
        gl = probs.copy()
        gl[target] -= 1.0
        logits._accumulate((g.reshape(()) * gl).reshape(logits.shape).astype(logits.dtype))

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward, logits.dtype)


def mean_of(losses):
    """Mean of a list of scalar tensors."""
    if not losses:
        raise ContractError("mean_of: empty loss list")
    inv = 1.0 / len(losses)
    out_data = sum(t.data for t in losses) * inv

    def backward(g):
        for t in losses:
            t._accumulate(g * np.asarray(inv, dtype=t.dtype))

    return _result(np.asarray(out_data), tuple(losses), backward, losses[0].dtype)


class ParameterSet:
    """Insertion-ordered named tensors; ordering fixes aggregation/serialization."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name, tensor):
        if name in self._tensors:
            raise ContractError(f"duplicate parameter name {name!r}")
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self):
        return self._tensors.values()

    def zero_grads(self):
        for t in self._tensors.values():
            t.grad = None

    def copy(self):
        out = ParameterSet()
        for name, t in self._tensors.items():
            c = Tensor(t.data.copy(), requires_grad=t.requires_grad, dtype=t.dtype)
            out.add(name, c)
        return out

    def load_values(self, other):
        """Copy values (not identity) from another set with matching names/shapes."""
        for name, t in self._tensors.items():
            src = other[name]
            if src.shape != t.shape:
                raise ContractError(f"shape mismatch for {name!r}: {src.shape} vs {t.shape}")
            t.data = src.data.copy()

    def flat_values(self):
        return np.concatenate([t.data.reshape(-1) for t in self._tensors.values()])


def sgd_step(params, lr):
    """In-place SGD update on every trainable tensor; grads are zeroed after."""
    for name, t in params.items():
        if not t.requires_grad:
            continue
        if t.grad is None:
            raise ContractError(f"sgd_step: parameter {name!r} has no gradient")
        t.data = (t.data - lr * t.grad).astype(t.dtype)
        t.grad = None
    return params


# ---------------------------------------------------------------------------
# Checkpoint record format: MAGIC, u64-LE manifest length, JSON manifest with
# (name, dtype=f32, shape) entries plus free-form extra metadata, then one
# u64-LE length-prefixed little-endian float32 payload per entry, in order.
# ---------------------------------------------------------------------------

def save_records(path, arrays, extra=None):
    """Write named float32 arrays (an ordered name -> ndarray mapping)."""
    entries = [
        {"name": name, "dtype": "f32", "shape": list(arr.shape)}
        for name, arr in arrays.items()
    ]
    manifest = json.dumps({"entries": entries, "extra": extra or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for arr in arrays.values():
            payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_records(path):
    """Read a record file back into (ordered name -> float32 ndarray, extra)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise RecordFormatError(f"{path}: bad magic at offset 0")
    off = len(MAGIC)
    if len(blob) < off + 8:
        raise RecordFormatError(f"{path}: truncated manifest length at offset {off}")
    (mlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if len(blob) < off + mlen:
        raise RecordFormatError(f"{path}: truncated manifest at offset {off}")
    try:
        manifest = json.loads(blob[off : off + mlen].decode())
        entries = manifest["entries"]
        extra = manifest["extra"]
    except (ValueError, KeyError) as exc:
        raise RecordFormatError(f"{path}: corrupt manifest at offset {off}: {exc}") from exc
    off += mlen
    arrays = {}
    for entry in entries:
        if len(blob) < off + 8:
            raise RecordFormatError(f"{path}: truncated length prefix at offset {off}")
        (plen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if plen != expected or len(blob) < off + plen:
            raise RecordFormatError(
                f"{path}: payload for {entry['name']!r} at offset {off} "
                f"has length {plen}, expected {expected}"
            )
        arrays[entry["name"]] = np.frombuffer(blob[off : off + plen], dtype="<f4").reshape(shape).copy()
        off += plen
    return arrays, extra
