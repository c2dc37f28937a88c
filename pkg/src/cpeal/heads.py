"""Parameter-efficient classification heads over frozen embeddings.

Two heads share one small interface: ``logits(X)``, ``backward(X, dlogits)``
returning gradients for the trainable tensors, and ``trainable()`` exposing
those tensors by name so the optimizer can update them in place.

``PromptHead`` keeps a frozen token per class plus a ``K x ctx x E`` block
of trainable context vectors. The class prototype is the normalized sum of
the frozen token and the mean context vector, and logits are scaled cosine
similarities. ``LoRAHead`` is a frozen ``E x K`` projection with a trainable
low-rank delta ``A @ B``.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from cpeal import rng as rngmod
from cpeal.errors import FormatError, ValidationError

DEFAULT_CTX = 16
DEFAULT_LOGIT_SCALE = 100.0
INIT_STD = 0.02
_NORM_FLOOR = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def _check_batch(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValidationError(f"expected an m x {dim} batch, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("input batch contains NaN or Inf")
    return X


def _unit_rows(X: np.ndarray):
    norms = np.maximum(np.linalg.norm(X, axis=1, keepdims=True), _NORM_FLOOR)
    return X / norms, norms


@dataclass(eq=False)
class PromptHead:
    class_tokens: np.ndarray  # K x E, frozen
    context: np.ndarray  # K x ctx x E, trainable
    logit_scale: float = DEFAULT_LOGIT_SCALE

    @property
    def num_classes(self) -> int:
        return self.class_tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.class_tokens.shape[1]

    @property
    def n_trainable(self) -> int:
        return int(self.context.size)

    def trainable(self) -> dict[str, np.ndarray]:
        return {"context": self.context}

    def frozen(self) -> dict[str, np.ndarray]:
        return {"class_tokens": self.class_tokens}

    def _raw_prototypes(self) -> np.ndarray:
        return self.class_tokens + self.context.mean(axis=1)

    def prototypes(self) -> np.ndarray:
        return _unit_rows(self._raw_prototypes())[0]

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = _check_batch(X, self.dim)
        xhat, _ = _unit_rows(X)
        return self.logit_scale * xhat @ self.prototypes().T

    def backward(self, X: np.ndarray, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        X = _check_batch(X, self.dim)
        xhat, _ = _unit_rows(X)
        t, norms = _unit_rows(self._raw_prototypes())
        dt = self.logit_scale * dlogits.T @ xhat  # K x E
        # derivative of u / |u| projects out the radial component
        du = (dt - np.sum(dt * t, axis=1, keepdims=True) * t) / norms
        ctx = self.context.shape[1]
        return {"context": np.broadcast_to(du[:, None, :] / ctx, self.context.shape).copy()}

    def copy(self) -> "PromptHead":
        return PromptHead(self.class_tokens.copy(), self.context.copy(), self.logit_scale)


@dataclass(eq=False)
class LoRAHead:
    W: np.ndarray  # E x K, frozen
    A: np.ndarray  # E x r
    B: np.ndarray  # r x K
    lora_scale: float = 1.0

    @property
    def num_classes(self) -> int:
        return self.W.shape[1]

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def n_trainable(self) -> int:
        return int(self.A.size + self.B.size)

    def trainable(self) -> dict[str, np.ndarray]:
        return {"A": self.A, "B": self.B}

    def frozen(self) -> dict[str, np.ndarray]:
        return {"W": self.W}

    def effective_weight(self) -> np.ndarray:
        return self.W + self.lora_scale * (self.A @ self.B)

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = _check_batch(X, self.dim)
        out = X @ self.W
        if np.any(self.B):
            out = out + self.lora_scale * ((X @ self.A) @ self.B)
        return out

    def backward(self, X: np.ndarray, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        X = _check_batch(X, self.dim)
        xa = X @ self.A
        return {
            "A": self.lora_scale * (X.T @ (dlogits @ self.B.T)),
            "B": self.lora_scale * (xa.T @ dlogits),
        }

    def copy(self) -> "LoRAHead":
        return LoRAHead(self.W.copy(), self.A.copy(), self.B.copy(), self.lora_scale)


def init_prompt_head(num_classes: int, dim: int, seed: int, ctx: int = DEFAULT_CTX,
                     logit_scale: float = DEFAULT_LOGIT_SCALE) -> PromptHead:
    if num_classes < 1 or dim < 1 or ctx < 1:
        raise ValidationError("num_classes, dim and ctx must be positive")
    if not logit_scale > 0:
        raise ValidationError("logit_scale must be positive")
    rng = rngmod.make_rng(rngmod.HEAD_INIT, seed)
    tokens = _unit_rows(rng.standard_normal((num_classes, dim)))[0]
    context = INIT_STD * rng.standard_normal((num_classes, ctx, dim))
    return PromptHead(tokens, context, float(logit_scale))


def init_lora_head(W: np.ndarray, rank: int, seed: int, lora_scale: float = 1.0) -> LoRAHead:
    W = np.array(W, dtype=np.float64)
    if W.ndim != 2 or not np.all(np.isfinite(W)):
        raise ValidationError("W must be a finite E x K matrix")
    if rank < 1:
        raise ValidationError(f"LoRA rank must be >= 1, got {rank}")
    if not lora_scale > 0:
        raise ValidationError("lora_scale must be positive")
    dim, k = W.shape
    if rank > min(dim, k):
        warnings.warn(f"LoRA rank {rank} exceeds min(E, K) = {min(dim, k)}", stacklevel=2)
    rng = rngmod.make_rng(rngmod.HEAD_INIT, seed)
    A = INIT_STD * rng.standard_normal((dim, rank))
    B = np.zeros((rank, k))
    return LoRAHead(W, A, B, float(lora_scale))


def lora_base_weight(features: np.ndarray, labels: np.ndarray, num_classes: int, seed: int,
                     shots: int = 1, kind: str = "class_mean") -> np.ndarray:
    """Frozen projection for a LoRA head.

    ``class_mean`` averages ``shots`` randomly drawn rows per class (the
    zero-shot analog); ``orthonormal`` draws a random E x K matrix with
    orthonormal columns (or rows, when K > E).
    """
    rng = rngmod.make_rng(rngmod.LORA_BASE, seed)
    dim = features.shape[1]
    if kind == "orthonormal":
        q, _ = np.linalg.qr(rng.standard_normal((max(dim, num_classes), min(dim, num_classes))))
        return q if dim >= num_classes else q.T
    if kind != "class_mean":
        raise ValidationError(f"unknown LoRA base kind {kind!r}")
    W = np.zeros((dim, num_classes))
    for c in range(num_classes):
        rows = np.flatnonzero(labels == c)
        if rows.size == 0:
            raise ValidationError(f"class {c} has no rows to seed the LoRA base")
        pick = rng.choice(rows, size=min(shots, rows.size), replace=False)
        W[:, c] = features[pick].astype(np.float64).mean(axis=0)
    return W


def forward(head, X):
    """Return ``(logits, probs)`` for a batch."""
    logits = head.logits(X)
    return logits, softmax(logits)


# Debug checkpoints: b"CPEH", u16 version, u8 kind (0 prompt, 1 lora),
# f64 scale, u32 tensor count, then per tensor a u32-prefixed UTF-8 name,
# u8 ndim, ndim x u32 shape and little-endian float64 data.
_CKPT_MAGIC = b"CPEH"


def dumps_head(head) -> bytes:
    if isinstance(head, PromptHead):
        kind, scale, tensors = 0, head.logit_scale, {"class_tokens": head.class_tokens, "context": head.context}
    else:
        kind, scale, tensors = 1, head.lora_scale, {"W": head.W, "A": head.A, "B": head.B}
    parts = [struct.pack("<4sHBdI", _CKPT_MAGIC, 1, kind, scale, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads_head(buf: bytes):
    magic, version, kind, scale, count = struct.unpack_from("<4sHBdI", buf, 0)
    if magic != _CKPT_MAGIC or version != 1 or kind not in (0, 1):
        raise FormatError("not a CPEH head checkpoint")
    pos = struct.calcsize("<4sHBdI")
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + ln].decode()
        pos += ln
        (ndim,) = struct.unpack_from("<B", buf, pos)
        shape = struct.unpack_from(f"<{ndim}I", buf, pos + 1)
        pos += 1 + 4 * ndim
        size = int(np.prod(shape)) * 8
        tensors[name] = np.frombuffer(buf[pos:pos + size], dtype="<f8").reshape(shape).astype(np.float64)
        pos += size
    if kind == 0:
        return PromptHead(tensors["class_tokens"], tensors["context"], scale)
    return LoRAHead(tensors["W"], tensors["A"], tensors["B"], scale)
