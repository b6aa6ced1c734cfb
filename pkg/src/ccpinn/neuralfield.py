"""Coordinate network mapping (x, y) to (eps_r, sigma).

Fourier features -> weight-normalized SiLU MLP -> plain linear layer ->
sigmoid, scaled to eps_r in (1, 80) and sigma in (0, 1) S/m.  The backward
pass is written out by hand; ``FieldNetwork.backward`` consumes the cache
returned by ``FieldNetwork.forward``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_SCHEMA = "ccpinn-checkpoint/1"
DEFAULT_DIMS = (128, 256, 256, 128, 2)
DEFAULT_SCALE = (79.0, 1.0)
DEFAULT_OFFSET = (1.0, 0.0)
FINAL_BIAS_INIT = -3.0
FINAL_WEIGHT_STD = 1e-3


class CheckpointError(ValueError):
    pass


def sigmoid(x):
    """Logistic function via tanh (no overflow, faster than exp for float32)."""
    out = np.tanh(0.5 * x)
    out += 1.0
    out *= 0.5
    return out


def silu(x):
    return x * sigmoid(x)


@dataclass(frozen=True)
class FourierEmbedding:
    """gamma(r) = [sin(2 pi B^T r), cos(2 pi B^T r)] with a fixed 2 x m matrix B."""

    B: np.ndarray

    def __post_init__(self):
        b = np.array(self.B, copy=True)
        if b.ndim != 2 or b.shape[0] != 2:
            raise ValueError(f"B must be 2 x m, got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "B", b)

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def out_dim(self) -> int:
        return 2 * self.m

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        phase = 2.0 * math.pi * (np.asarray(coords) @ self.B)
        return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def fourier_features(coords: np.ndarray, B: np.ndarray) -> np.ndarray:
    return FourierEmbedding(B)(coords)


def hidden_names(n_hidden: int) -> list[tuple[str, str, str]]:
    return [(f"v{k}", f"g{k}", f"b{k}") for k in range(1, n_hidden + 1)]


def init_params(
    seed: int, dims: Sequence[int] = DEFAULT_DIMS, feature_std: float = 1.0, dtype=np.float64
) -> tuple[FourierEmbedding, dict[str, np.ndarray]]:
    """Draw B and the trainable parameters from ``numpy.random.default_rng(seed)``.

    Hidden directions ``v`` are fan-in scaled uniform U(-1/sqrt(fan_in),
    1/sqrt(fan_in)), gains start at the row norms of ``v`` and biases at zero.
    The output layer gets N(0, 1e-3^2) weights and a bias of -3.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3 or dims[0] % 2 or dims[-1] != 2:
        raise ValueError(f"dims must look like [2m, hidden..., 2], got {dims}")
    rng = np.random.default_rng(seed)
    emb = FourierEmbedding(rng.normal(0.0, feature_std, size=(2, dims[0] // 2)))
    params: dict[str, np.ndarray] = {}
    for (vn, gn, bn), fan_in, fan_out in zip(hidden_names(len(dims) - 2), dims[:-2], dims[1:-1]):
        bound = 1.0 / math.sqrt(fan_in)
        v = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[vn] = v.astype(dtype)
        params[gn] = np.linalg.norm(v, axis=1).astype(dtype)
        params[bn] = np.zeros(fan_out, dtype=dtype)
    params["w_out"] = rng.normal(0.0, FINAL_WEIGHT_STD, size=(dims[-1], dims[-2])).astype(dtype)
    params["b_out"] = np.full(dims[-1], FINAL_BIAS_INIT, dtype=dtype)
    return emb, params


@dataclass
class FieldNetwork:
    embedding: FourierEmbedding
    params: dict[str, np.ndarray]
    scale: tuple[float, float] = DEFAULT_SCALE
    offset: tuple[float, float] = DEFAULT_OFFSET
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(
        cls, seed: int, dims: Sequence[int] = DEFAULT_DIMS, feature_std: float = 1.0, dtype=np.float64
    ) -> "FieldNetwork":
        emb, params = init_params(seed, dims, feature_std, dtype)
        return cls(emb, params, meta={"seed": int(seed), "dims": list(dims), "feature_std": float(feature_std)})

    @property
    def n_hidden(self) -> int:
        return sum(1 for k in self.params if k.startswith("v"))

    @property
    def dtype(self):
        return self.params["w_out"].dtype

    def weights(self) -> list[np.ndarray]:
        out = []
        for vn, gn, _ in hidden_names(self.n_hidden):
            v = self.params[vn]
            out.append(v * (self.params[gn] / np.linalg.norm(v, axis=1))[:, None])
        return out

    def features(self, coords: np.ndarray) -> np.ndarray:
        return self.embedding(coords).astype(self.dtype, copy=False)

    def forward(self, coords: np.ndarray, features: np.ndarray | None = None, keep_cache: bool = False):
        """Return (eps_r, sigma) at ``coords`` (K, 2), normalized by the ROI half-width.

        With ``keep_cache`` a third item holds the activations for ``backward``.
        Pass precomputed ``features`` to skip the embedding when coords are fixed.
        """
        h = self.features(coords) if features is None else features
        cache = {"h": [h], "z": [], "s": [], "W": []}
        for W, (_, _, bn) in zip(self.weights(), hidden_names(self.n_hidden)):
            z = h @ W.T + self.params[bn]
            s = sigmoid(z)
            h = z * s
            if keep_cache:
                cache["z"].append(z)
                cache["s"].append(s)
                cache["W"].append(W)
                cache["h"].append(h)
        raw = h @ self.params["w_out"].T + self.params["b_out"]
        out = sigmoid(raw)
        eps = out[:, 0] * self.scale[0] + self.offset[0]
        sig = out[:, 1] * self.scale[1] + self.offset[1]
        if keep_cache:
            cache["out"] = out
            return eps, sig, cache
        return eps, sig

    def __call__(self, coords: np.ndarray):
        return self.forward(coords)

    def backward(self, cache: dict, d_eps: np.ndarray, d_sigma: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given dL/d eps_r and dL/d sigma per coordinate."""
        out = cache["out"]
        d_raw = np.stack([d_eps * self.scale[0], d_sigma * self.scale[1]], axis=1) * out * (1.0 - out)
        d_raw = d_raw.astype(self.dtype, copy=False)
        grads: dict[str, np.ndarray] = {}
        h_last = cache["h"][-1]
        grads["w_out"] = d_raw.T @ h_last
        grads["b_out"] = d_raw.sum(axis=0)
        dh = d_raw @ self.params["w_out"]
        names = hidden_names(self.n_hidden)
        for k in range(self.n_hidden - 1, -1, -1):
            vn, gn, bn = names[k]
            z, s, W = cache["z"][k], cache["s"][k], cache["W"][k]
            # SiLU'(z) = s (1 + z (1 - s))
            dz = 1.0 - s
            dz *= z
            dz += 1.0
            dz *= s
            dz *= dh
            dW = dz.T @ cache["h"][k]
            grads[bn] = dz.sum(axis=0)
            v, g = self.params[vn], self.params[gn]
            norm = np.linalg.norm(v, axis=1)
            vhat = v / norm[:, None]
            dg = np.einsum("ij,ij->i", dW, vhat)
            grads[gn] = dg
            grads[vn] = (g / norm)[:, None] * (dW - dg[:, None] * vhat)
            if k:
                dh = dz @ W
        return grads

    def copy(self) -> "FieldNetwork":
        return FieldNetwork(
            self.embedding, {k: v.copy() for k, v in self.params.items()}, self.scale, self.offset, dict(self.meta)
        )

    def astype(self, dtype) -> "FieldNetwork":
        return FieldNetwork(
            self.embedding, {k: v.astype(dtype) for k, v in self.params.items()}, self.scale, self.offset,
            dict(self.meta),
        )


def forward(coords, embedding: FourierEmbedding, params: dict, scale=DEFAULT_SCALE, offset=DEFAULT_OFFSET):
    return FieldNetwork(embedding, params, scale, offset).forward(coords)


def save_checkpoint(path: str | Path, net: FieldNetwork, **extra) -> Path:
    """Write ``net`` plus JSON-serializable ``extra`` metadata to an ``.npz`` file.

    ``extra`` should include ``roi_half_width`` (training R) so inference can
    normalize new coordinates the same way.
    """
    path = Path(path)
    meta = {
        "schema": CHECKPOINT_SCHEMA,
        "scale": list(net.scale),
        "offset": list(net.offset),
        "param_names": list(net.params),
        "dtype": str(net.dtype),
        **net.meta,
        **extra,
    }
    arrays = {f"param__{k}": v for k, v in net.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, B=net.embedding.B, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    return path


def load_checkpoint(path: str | Path) -> FieldNetwork:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta.get("schema") != CHECKPOINT_SCHEMA:
                raise CheckpointError(f"unsupported checkpoint schema {meta.get('schema')!r}")
            params = {k: z[f"param__{k}"].copy() for k in meta["param_names"]}
            B = z["B"].copy()
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    extra = {k: v for k, v in meta.items() if k not in ("schema", "scale", "offset", "param_names", "dtype")}
    return FieldNetwork(FourierEmbedding(B), params, tuple(meta["scale"]), tuple(meta["offset"]), extra)
