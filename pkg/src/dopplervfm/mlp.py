"""Coordinate MLP ``(r, theta) -> (v_r, v_theta)`` with tanh hidden layers.

Parameters live in one flat float64 vector, laid out layer by layer as the
row-major ``(fan_out, fan_in)`` weight matrix followed by the bias.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, linear, tangent_tanh

LAYER_SIZES = (2, 60, 60, 60, 60, 60, 60, 2)
WEIGHT_MAGIC = b"DVFMW1\n"


class WeightFileError(ValueError):
    """Malformed, truncated or incompatible weight file."""


def n_parameters(layer_sizes) -> int:
    return sum(o * i + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass
class MlpParams:
    layer_sizes: tuple
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = n_parameters(self.layer_sizes)
        if self.values.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("parameters must be finite")

    @property
    def size(self) -> int:
        return self.values.size

    def copy(self, values=None) -> "MlpParams":
        vals = self.values.copy() if values is None else np.array(values, dtype=np.float64)
        return MlpParams(self.layer_sizes, vals, dict(self.meta))

    def split(self, values=None) -> list[np.ndarray]:
        """Views ``[W1, b1, W2, b2, ...]`` into ``values`` (defaults to own values)."""
        values = self.values if values is None else values
        out, pos = [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            out.append(values[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in))
            pos += fan_in * fan_out
            out.append(values[pos : pos + fan_out])
            pos += fan_out
        return out

    def tensors(self, values=None) -> list[Tensor]:
        return [Tensor(a, requires_grad=True) for a in self.split(values)]


def mlp_init(seed=0, layer_sizes=LAYER_SIZES) -> MlpParams:
    """Xavier-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return MlpParams(tuple(layer_sizes), np.concatenate(chunks))


def mlp_zeros(layer_sizes=LAYER_SIZES) -> MlpParams:
    return MlpParams(tuple(layer_sizes), np.zeros(n_parameters(layer_sizes)))


@dataclass
class EvalBatch:
    points: np.ndarray
    predictions: np.ndarray
    input_jacobian: np.ndarray | None = None  # (n, out, in)


def network(weights: list, x, jacobian=False):
    """Differentiable forward pass.

    ``weights`` is ``[W1, b1, ...]`` as tensors or arrays, ``x`` an ``(n, 2)``
    input. Returns ``y`` of shape ``(n, 2)`` and, when ``jacobian`` is set,
    ``J`` of shape ``(2, n, 2)`` with ``J[d, :, k] = dy_k / dx_d``. Tangents are
    pushed through the same graph, so losses built from ``J`` backpropagate
    into the weights.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))
    n_layers = len(weights) // 2
    h = x
    tan = None
    for layer in range(n_layers):
        W, b = weights[2 * layer], weights[2 * layer + 1]
        z = linear(h, W, b)
        if jacobian:
            if tan is None:
                W = W if isinstance(W, Tensor) else Tensor(W)
                # d z / d x_d is column d of W, identical for every point
                tan = W.T.reshape(W.shape[1], 1, W.shape[0])
            else:
                tan = linear(tan, W)
        if layer == n_layers - 1:
            h = z
            break
        h = z.tanh()
        if jacobian:
            tan = tangent_tanh(tan, h)
    return (h, tan) if jacobian else h


def _check_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("points must be finite")
    return pts


def forward(params: MlpParams, points) -> EvalBatch:
    pts = _check_points(points)
    y = network(params.split(), pts)
    return EvalBatch(pts, y.data)


def forward_with_input_jacobian(params: MlpParams, points) -> EvalBatch:
    pts = _check_points(points)
    y, J = network(params.split(), pts, jacobian=True)
    if J.ndim == 3 and J.shape[1] == 1:
        J = Tensor(np.broadcast_to(J.data, (J.shape[0], len(pts), J.shape[2])))
    return EvalBatch(pts, y.data, np.transpose(J.data, (1, 2, 0)))


def save_weights(params: MlpParams, path) -> None:
    payload = params.values.astype("<f8").tobytes()
    header = {
        "layer_sizes": list(params.layer_sizes),
        "activation": "tanh",
        "n_params": int(params.size),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "meta": params.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load_weights(path, expected_layer_sizes=LAYER_SIZES) -> MlpParams:
    raw = Path(path).read_bytes()
    if not raw.startswith(WEIGHT_MAGIC):
        raise WeightFileError(f"{path}: not a weight file")
    pos = len(WEIGHT_MAGIC)
    if len(raw) < pos + 8:
        raise WeightFileError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    try:
        header = json.loads(raw[pos : pos + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"{path}: malformed header") from exc
    pos += hlen
    sizes = tuple(header.get("layer_sizes", ()))
    if header.get("activation") != "tanh":
        raise WeightFileError(f"{path}: unsupported activation {header.get('activation')!r}")
    if expected_layer_sizes is not None and sizes != tuple(expected_layer_sizes):
        raise WeightFileError(f"{path}: architecture {sizes} does not match {tuple(expected_layer_sizes)}")
    payload = raw[pos:]
    n = n_parameters(sizes)
    if len(payload) != 8 * n or header.get("n_params") != n:
        raise WeightFileError(f"{path}: expected {n} parameters, found {len(payload) // 8}")
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise WeightFileError(f"{path}: payload checksum mismatch")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return MlpParams(sizes, values, header.get("meta", {}))
