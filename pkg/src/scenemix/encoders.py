"""Desk-scale encoders: a trainable point encoder and two frozen modalities.

The point encoder is a small per-point MLP with a coordinate-wise max pool,
so it is exactly permutation-invariant, and its gradients are written out by
hand (the whole numeric core stays autodiff-free).  The text and image-view
encoders stand in for large pretrained models: both are random but fixed
functions of a frozen seed, never updated by training.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from pathlib import Path

import numpy as np

from .pointcloud import PointCloud, normalize_unit_sphere


def _l2(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / norm


class ToyPointEncoder:
    """points (n, 3) -> unit embedding (dim,).

    Layers: tanh(x W1 + b1), tanh(h1 W2 + b2), coordinate-wise max over
    points, affine projection, l2 normalization.  ``forward`` returns a cache
    that ``backward`` consumes to produce analytic parameter gradients;
    ``backward_points`` instead routes the gradient to the input coordinates.
    """

    PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

    def __init__(self, hidden: int = 64, dim: int = 32, seed: int = 0):
        if hidden < 1 or dim < 1:
            raise ValueError("hidden and dim must be >= 1")
        self.hidden = hidden
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {
            "w1": rng.normal(0.0, 1.0 / np.sqrt(3.0), size=(3, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, hidden)),
            "b2": np.zeros(hidden),
            "w3": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, dim)),
            "b3": np.zeros(dim),
        }

    def forward(self, points: np.ndarray) -> tuple[np.ndarray, dict]:
        p = self.params
        x = np.asarray(points, dtype=np.float64)
        h1 = np.tanh(x @ p["w1"] + p["b1"])
        h2 = np.tanh(h1 @ p["w2"] + p["b2"])
        arg = np.argmax(h2, axis=0)
        pooled = h2[arg, np.arange(self.hidden)]
        v = pooled @ p["w3"] + p["b3"]
        norm = float(np.linalg.norm(v))
        emb = v / norm if norm >= 1e-12 else _l2(v)
        cache = {"x": x, "h1": h1, "h2": h2, "arg": arg, "pooled": pooled,
                 "v": v, "norm": norm, "emb": emb}
        return emb, cache

    def encode(self, points: np.ndarray) -> np.ndarray:
        return self.forward(points)[0]

    def encode_cloud(self, cloud: PointCloud) -> np.ndarray:
        return self.encode(cloud.points)

    def _backward_core(self, cache: dict, grad_emb: np.ndarray) -> tuple[dict, np.ndarray]:
        p = self.params
        emb, norm = cache["emb"], max(cache["norm"], 1e-12)
        # d(v/|v|) pulls the component along emb out of the upstream gradient.
        dv = (grad_emb - emb * float(emb @ grad_emb)) / norm
        grads = {"w3": np.outer(cache["pooled"], dv), "b3": dv.copy()}
        dpooled = p["w3"] @ dv
        # Max pool: gradient flows only to the winning point per channel.
        dh2 = np.zeros_like(cache["h2"])
        dh2[cache["arg"], np.arange(self.hidden)] = dpooled
        dz2 = dh2 * (1.0 - cache["h2"] ** 2)
        grads["w2"] = cache["h1"].T @ dz2
        grads["b2"] = dz2.sum(axis=0)
        dh1 = dz2 @ p["w2"].T
        dz1 = dh1 * (1.0 - cache["h1"] ** 2)
        grads["w1"] = cache["x"].T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        dx = dz1 @ p["w1"].T
        return grads, dx

    def backward(self, cache: dict, grad_emb: np.ndarray) -> dict[str, np.ndarray]:
        return self._backward_core(cache, grad_emb)[0]

    def backward_points(self, cache: dict, grad_emb: np.ndarray) -> np.ndarray:
        return self._backward_core(cache, grad_emb)[1]

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.params.items()}


_TOKEN_RE = re.compile(r"[a-z0-9']+")


def _stable_token_index(token: str, table_size: int) -> int:
    digest = hashlib.blake2s(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % table_size


class FrozenTextEncoder:
    """text -> unit embedding (dim,) via a hashed bag of token vectors.

    The table is drawn once from the frozen seed and never trained.  Token
    indices come from a process-stable hash, so the same string embeds to the
    same bytes in every run and process.
    """

    def __init__(self, dim: int = 32, table_size: int = 8192, seed: int = 0):
        self.dim = dim
        self.table_size = table_size
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.table = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(table_size, dim))
        self.table.flags.writeable = False

    def tokenize(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text.lower())

    def encode(self, text: str) -> np.ndarray:
        tokens = self.tokenize(text)
        if not tokens:
            return _l2(self.table[0].copy())
        rows = [self.table[_stable_token_index(t, self.table_size)] for t in tokens]
        return _l2(np.mean(rows, axis=0))

    def checksum(self) -> str:
        return hashlib.blake2s(self.table.tobytes()).hexdigest()


class FrozenImageSurrogate:
    """cloud -> unit embedding (dim,) standing in for a rendered-view encoder.

    The cloud is normalized, binned into a grid x grid x grid occupancy
    volume over [-1, 1]^3, and pushed through a fixed random linear map.  A
    deterministic function of the un-augmented object, frozen like the text
    side.
    """

    def __init__(self, dim: int = 32, grid: int = 8, seed: int = 0):
        self.dim = dim
        self.grid = grid
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weight = rng.normal(0.0, 1.0 / np.sqrt(grid ** 3), size=(grid ** 3, dim))
        self.weight.flags.writeable = False

    def occupancy(self, cloud: PointCloud) -> np.ndarray:
        pts = normalize_unit_sphere(cloud).points
        cells = np.clip(((pts + 1.0) * 0.5 * self.grid).astype(np.int64), 0, self.grid - 1)
        flat = (cells[:, 0] * self.grid + cells[:, 1]) * self.grid + cells[:, 2]
        occ = np.zeros(self.grid ** 3)
        occ[np.unique(flat)] = 1.0
        return occ

    def encode(self, cloud: PointCloud) -> np.ndarray:
        return _l2(self.occupancy(cloud) @ self.weight)

    def checksum(self) -> str:
        return hashlib.blake2s(self.weight.tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# Checkpoints: little-endian uint32 header length, JSON header (tensor names,
# shapes, metadata), then the tensors' float64 bytes in header order.
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(tensors)
    header = {
        "version": 1,
        "names": names,
        "shapes": {name: list(tensors[name].shape) for name in names},
        "meta": meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw_len = fh.read(4)
        if len(raw_len) < 4:
            raise ValueError(f"checkpoint {path} is truncated")
        (header_len,) = struct.unpack("<I", raw_len)
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("version") != 1:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        tensors: dict[str, np.ndarray] = {}
        for name in header["names"]:
            shape = tuple(header["shapes"][name])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) < count * 8:
                raise ValueError(f"checkpoint {path} is truncated in tensor '{name}'")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return tensors, header["meta"]


def restore_point_encoder(path: str | Path) -> tuple[ToyPointEncoder, float, dict]:
    """Rebuild (encoder, log_tau, meta) from a checkpoint written by the
    trainer.  Restored parameters are exact (float64 round-trip)."""
    tensors, meta = load_checkpoint(path)
    encoder = ToyPointEncoder(hidden=int(meta["hidden"]), dim=int(meta["dim"]),
                              seed=int(meta.get("encoder_seed", 0)))
    for name in ToyPointEncoder.PARAM_NAMES:
        encoder.params[name] = tensors[name]
    log_tau = float(tensors["log_tau"][()] if tensors["log_tau"].shape == () else tensors["log_tau"])
    return encoder, log_tau, meta
