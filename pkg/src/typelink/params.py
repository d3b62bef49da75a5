"""Learnable parameters: diagonal bilinear maps and two-layer ReLU combiners.

All arrays are float64 and updated in place by the optimizer, so `blocks()`
views stay live. Combiner weights start from N(0, 0.02) with zero biases;
diagonals start at 1.0 so initial scores are plain dot products.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HIDDEN_WIDTH = 100
INIT_STD = 0.02
CKPT_MAGIC = b"CKP1"

MODES = ("baseline", "local", "local_global", "typed_oracle", "typed_predict")
LOCAL_MODES = ("baseline", "local", "typed_oracle", "typed_predict")

# inputs consumed by the per-candidate combiner in each local-style mode
LOCAL_FEATURES = {
    "baseline": ("long_ctx", "log_prior"),
    "local": ("long_ctx", "sim", "log_prior"),
    "typed_oracle": ("long_ctx", "jaccard"),
    "typed_predict": ("long_ctx", "jaccard"),
}


@dataclass
class Combiner:
    """Two-layer feed-forward scorer: in_dim -> hidden -> 1 with ReLU."""

    W1: np.ndarray  # (hidden, in_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # (1,)

    @classmethod
    def create(cls, in_dim: int, rng: np.random.Generator, hidden: int = HIDDEN_WIDTH) -> "Combiner":
        return cls(
            W1=rng.normal(0.0, INIT_STD, size=(hidden, in_dim)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, INIT_STD, size=hidden),
            b2=np.zeros(1),
        )

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        """Score rows of x; returns (scores (m,), cache for backward)."""
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite combiner input")
        z = x @ self.W1.T + self.b1
        a = np.maximum(z, 0.0)
        out = a @ self.w2 + self.b2[0]
        return out, {"x": x, "z": z, "a": a}

    def backward(self, cache: dict, dout: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Gradients of sum(dout * out) w.r.t. weights and the input rows."""
        x, z, a = cache["x"], cache["z"], cache["a"]
        dout = np.asarray(dout, dtype=np.float64)
        da = dout[:, None] * self.w2[None, :]
        dz = da * (z > 0.0)
        grads = {
            "W1": dz.T @ x,
            "b1": dz.sum(axis=0),
            "w2": a.T @ dout,
            "b2": np.array([dout.sum()]),
        }
        dx = dz @ self.W1
        return grads, dx


def combine_local(features: np.ndarray, combiner: Combiner) -> np.ndarray:
    """Apply a combiner to per-candidate feature rows."""
    scores, _ = combiner.forward(np.atleast_2d(features))
    return scores


@dataclass
class ModelParams:
    """All trainable blocks for one model variant."""

    mode: str
    attn_diag: np.ndarray            # scores context words against candidate entities
    ctx_diag: np.ndarray             # bilinear weight between entity vector and attended context
    local_mlp: Combiner | None = None   # per-candidate score from local features
    pair_diag: np.ndarray | None = None  # pairwise coupling between entity vectors
    unary_mlp: Combiner | None = None   # CRF unary from (long_ctx, sim)
    final_mlp: Combiner | None = None   # final score from (max marginal, log prior)

    @classmethod
    def create(cls, dim: int, mode: str, seed: int = 0, hidden: int = HIDDEN_WIDTH) -> "ModelParams":
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
        rng = np.random.Generator(np.random.PCG64(seed))
        params = cls(mode=mode, attn_diag=np.ones(dim), ctx_diag=np.ones(dim))
        if mode in LOCAL_MODES:
            params.local_mlp = Combiner.create(len(LOCAL_FEATURES[mode]), rng, hidden)
        else:
            params.pair_diag = np.ones(dim)
            params.unary_mlp = Combiner.create(2, rng, hidden)
            params.final_mlp = Combiner.create(2, rng, hidden)
        return params

    def blocks(self) -> dict[str, np.ndarray]:
        """Live views of every parameter array, keyed by block name."""
        out = {"attn_diag": self.attn_diag, "ctx_diag": self.ctx_diag}
        if self.pair_diag is not None:
            out["pair_diag"] = self.pair_diag
        for name, mlp in (("local_mlp", self.local_mlp),
                          ("unary_mlp", self.unary_mlp),
                          ("final_mlp", self.final_mlp)):
            if mlp is not None:
                for fld in ("W1", "b1", "w2", "b2"):
                    out[f"{name}.{fld}"] = getattr(mlp, fld)
        return out

    def combiner_block_names(self) -> list[str]:
        """Blocks covered by the L2 penalty (combiner weights only)."""
        return [k for k in self.blocks() if "." in k]

    def copy(self) -> "ModelParams":
        clone = ModelParams(mode=self.mode, attn_diag=self.attn_diag.copy(),
                            ctx_diag=self.ctx_diag.copy())
        if self.pair_diag is not None:
            clone.pair_diag = self.pair_diag.copy()
        for name in ("local_mlp", "unary_mlp", "final_mlp"):
            mlp = getattr(self, name)
            if mlp is not None:
                setattr(clone, name, Combiner(mlp.W1.copy(), mlp.b1.copy(),
                                              mlp.w2.copy(), mlp.b2.copy()))
        return clone

    def checksum(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name, arr in sorted(self.blocks().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# checkpoint io: named blocks, each tagged (name, shape, raw little-endian floats)


def save_blocks(blocks: dict[str, np.ndarray], path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_blocks(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 4
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    blocks: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape)
        off += size * 8
        blocks[name] = arr.astype(np.float64)
    return blocks


def save_params(params: ModelParams, path: str | Path) -> None:
    save_blocks(params.blocks(), path)


def load_params(path: str | Path, mode: str, dim: int,
                hidden: int | None = None) -> ModelParams:
    """Rebuild ModelParams for a mode from a checkpoint, validating block shapes."""
    blocks = load_blocks(path)
    if hidden is None:
        b1 = next((v for k, v in blocks.items() if k.endswith(".b1")), None)
        hidden = HIDDEN_WIDTH if b1 is None else b1.shape[0]
    params = ModelParams.create(dim, mode, seed=0, hidden=hidden)
    expected = params.blocks()
    if set(blocks) != set(expected):
        raise ValueError(
            f"{path}: block names {sorted(blocks)} do not match mode {mode!r} "
            f"(expected {sorted(expected)})")
    for name, arr in blocks.items():
        if expected[name].shape != arr.shape:
            raise ValueError(f"{path}: block {name} has shape {arr.shape}, "
                             f"expected {expected[name].shape}")
        expected[name][...] = arr
    return params
