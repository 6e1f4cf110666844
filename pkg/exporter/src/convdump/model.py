"""Toy sequential CNN models: a JSON descriptor plus one NPY file per layer.

The model directory holds ``model.json`` and the raw 4-D conv filters /
2-D FC matrices.  Inference here is deliberately naive: convolution runs
as explicit nested loops, so the exported responses come from a path that
shares nothing with the GEMM lowering they are checked against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ModelError(Exception):
    """Model directory is missing, malformed, or inconsistent."""


@dataclass
class LayerDef:
    name: str
    kind: str  # "conv" or "fc"
    weights: np.ndarray
    stride: int = 1
    padding: int = 0
    activation: str = "relu"


@dataclass
class ToyModel:
    name: str
    input_shape: tuple  # (c, h, w)
    layers: list = field(default_factory=list)

    def layer(self, name: str) -> LayerDef:
        for entry in self.layers:
            if entry.name == name:
                return entry
        raise ModelError(f"no layer named {name!r}")


def conv2d_loop(w: np.ndarray, x: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Direct nested-loop convolution; w is (n, c, k, k), x is (c, h, w)."""
    n, c, kh, kw = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    _, h, wd = x.shape
    oh = (h - kh) // stride + 1
    ow = (wd - kw) // stride + 1
    out = np.zeros((n, oh, ow))
    for f in range(n):
        for oy in range(oh):
            for ox in range(ow):
                block = x[:, oy * stride : oy * stride + kh, ox * stride : ox * stride + kw]
                out[f, oy, ox] = float(np.sum(w[f] * block))
    return out


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    raise ModelError(f"unknown activation {kind!r}")


def forward(model: ToyModel, image: np.ndarray, upto: str | None = None):
    """Run inference, returning {layer name: (input feature map, post-activation output)}.

    Conv feature maps stay (c, h, w); FC values are flat vectors.  Stops
    after ``upto`` when given.
    """
    if image.shape != model.input_shape:
        raise ModelError(
            f"image shape {image.shape} != model input {model.input_shape}"
        )
    traces = {}
    current = image
    for layer in model.layers:
        if layer.kind == "conv":
            if current.ndim != 3:
                raise ModelError(f"{layer.name}: conv after flatten is unsupported")
            z = conv2d_loop(layer.weights, current, layer.stride, layer.padding)
        elif layer.kind == "fc":
            flat = current.reshape(-1)
            if layer.weights.shape[1] != flat.size:
                raise ModelError(
                    f"{layer.name}: fc expects {layer.weights.shape[1]} inputs, "
                    f"got {flat.size}"
                )
            z = layer.weights @ flat
        else:
            raise ModelError(f"{layer.name}: unsupported layer type {layer.kind!r}")
        out = activate(z, layer.activation)
        traces[layer.name] = (current, out)
        current = out
    return traces


def make_toy(out_dir, seed: int = 0, input_shape=(3, 8, 8)) -> ToyModel:
    """Write a small random 'pretrained' model: two conv layers and one FC."""
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    specs = [
        ("conv1", "conv", dict(out_channels=6, kernel=3, stride=1, padding=1, activation="relu")),
        ("conv2", "conv", dict(out_channels=8, kernel=3, stride=1, padding=0, activation="relu")),
        ("fc1", "fc", dict(out_features=10, activation="identity")),
    ]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layers = []
    doc_layers = []
    cur_shape = input_shape
    for name, kind, cfg in specs:
        if kind == "conv":
            n = cfg["out_channels"]
            k = cfg["kernel"]
            weights = rng.normal(size=(n, cur_shape[0], k, k)) / np.sqrt(cur_shape[0] * k * k)
            oh = (cur_shape[1] + 2 * cfg["padding"] - k) // cfg["stride"] + 1
            ow = (cur_shape[2] + 2 * cfg["padding"] - k) // cfg["stride"] + 1
            cur_shape = (n, oh, ow)
            entry = {
                "name": name, "type": "conv", "weights": f"{name}.npy",
                "stride": cfg["stride"], "padding": cfg["padding"],
                "activation": cfg["activation"],
            }
            layers.append(
                LayerDef(name, "conv", weights, cfg["stride"], cfg["padding"], cfg["activation"])
            )
        else:
            fan_in = int(np.prod(cur_shape))
            weights = rng.normal(size=(cfg["out_features"], fan_in)) / np.sqrt(fan_in)
            cur_shape = (cfg["out_features"],)
            entry = {
                "name": name, "type": "fc", "weights": f"{name}.npy",
                "activation": cfg["activation"],
            }
            layers.append(LayerDef(name, "fc", weights, activation=cfg["activation"]))
        np.save(out_dir / f"{name}.npy", weights)
        doc_layers.append(entry)
    doc = {
        "name": f"toy-cnn-{seed}",
        "seed": seed,
        "input_shape": list(input_shape),
        "layers": doc_layers,
    }
    (out_dir / "model.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8"
    )
    return ToyModel(name=doc["name"], input_shape=input_shape, layers=layers)


def load_model(model_dir) -> ToyModel:
    model_dir = Path(model_dir)
    try:
        doc = json.loads((model_dir / "model.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ModelError(f"{model_dir}: no model.json") from exc
    except json.JSONDecodeError as exc:
        raise ModelError(f"{model_dir}/model.json: {exc}") from exc
    layers = []
    for entry in doc["layers"]:
        weights = np.load(model_dir / entry["weights"])
        kind = entry["type"]
        if kind == "conv" and weights.ndim != 4:
            raise ModelError(f"{entry['name']}: conv weights must be 4-D")
        if kind == "fc" and weights.ndim != 2:
            raise ModelError(f"{entry['name']}: fc weights must be 2-D")
        layers.append(
            LayerDef(
                name=entry["name"],
                kind=kind,
                weights=weights.astype(np.float64),
                stride=int(entry.get("stride", 1)),
                padding=int(entry.get("padding", 0)),
                activation=entry.get("activation", "relu"),
            )
        )
    return ToyModel(
        name=doc.get("name", "toy"),
        input_shape=tuple(doc["input_shape"]),
        layers=layers,
    )
