"""Extract lowered weights and sampled (input, response) pairs from a toy model.

Every export follows the shared lowering convention: filters flatten
channel-major, then kernel row, then kernel column, and each receptive
field becomes one column in the same order.  An ordering self-test (GEMM
on the lowered pair versus the loop convolution) runs on every conv
export and aborts if the two paths disagree.

Output is NPY files plus ``manifest.json``, whose schema is the consumer
pipeline's config schema: per-layer name / weights / samples_x /
samples_y / activation / geometry entries under ``layers``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import ModelError, ToyModel, activate, conv2d_loop, forward


class ExportError(Exception):
    """Export failed (unsupported layer or self-test mismatch)."""


_ORDERING_TOL = 1e-9


def lower_filter(w: np.ndarray) -> np.ndarray:
    """(n, c, kh, kw) filters to an n-by-(c*kh*kw) matrix, channel-major."""
    n = w.shape[0]
    return np.ascontiguousarray(w.reshape(n, -1))


def im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Receptive-field columns of a (c, h, w) map, matching lower_filter order."""
    c, h, wd = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (wd + 2 * padding - kernel) // stride + 1
    cols = np.empty((c * kernel * kernel, oh * ow))
    row = 0
    for ci in range(c):
        for ky in range(kernel):
            for kx in range(kernel):
                patch = x[ci, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride]
                cols[row, :] = patch.reshape(-1)
                row += 1
    return cols


def _ordering_self_test(layer, fmap_in, fmap_out_pre):
    lowered = lower_filter(layer.weights)
    cols = im2col(fmap_in, layer.weights.shape[2], layer.stride, layer.padding)
    via_gemm = lowered @ cols
    direct = fmap_out_pre.reshape(fmap_out_pre.shape[0], -1)
    err = np.abs(via_gemm - direct).max() / max(np.abs(direct).max(), 1e-30)
    if err > _ORDERING_TOL:
        raise ExportError(
            f"{layer.name}: lowering self-test failed, rel err {err:.3e}"
        )


def export_layer(
    model: ToyModel,
    layer_name: str,
    num_samples: int,
    out_dir,
    rng: np.random.Generator,
    n_images: int = 4,
) -> dict:
    """Export one layer; returns its manifest entry.

    ``num_samples`` counts lowered columns for conv layers (spread over
    ``n_images`` random inputs, one sample pair per image) and input
    vectors for FC layers (one pair holding one column per image).  With
    ``num_samples=0`` only the lowered weights are written.
    """
    layer = model.layer(layer_name)
    if layer.kind not in ("conv", "fc"):
        raise ExportError(f"{layer_name}: unsupported layer type {layer.kind!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    lowered = lower_filter(layer.weights) if layer.kind == "conv" else layer.weights
    weights_file = f"{layer_name}_w.npy"
    np.save(out_dir / weights_file, lowered)

    entry = {
        "name": layer_name,
        "weights": weights_file,
        "samples_x": [],
        "samples_y": [],
        "activation": layer.activation,
    }
    if layer.kind == "conv":
        k = layer.weights.shape[2]
        entry["geometry"] = {
            "kernel": k, "stride": layer.stride, "padding": layer.padding,
        }
    if num_samples == 0:
        return entry

    images = [rng.normal(size=model.input_shape) for _ in range(n_images)]
    if layer.kind == "fc":
        xs = []
        ys = []
        for image in images:
            fmap_in, fmap_out = forward(model, image)[layer_name]
            xs.append(fmap_in.reshape(-1))
            ys.append(fmap_out.reshape(-1))
        x_mat = np.ascontiguousarray(np.stack(xs, axis=1))
        y_mat = np.ascontiguousarray(np.stack(ys, axis=1))
        np.save(out_dir / f"{layer_name}_x0.npy", x_mat)
        np.save(out_dir / f"{layer_name}_y0.npy", y_mat)
        entry["samples_x"].append(f"{layer_name}_x0.npy")
        entry["samples_y"].append(f"{layer_name}_y0.npy")
        return entry

    per_image = max(1, num_samples // n_images)
    k = layer.weights.shape[2]
    for i, image in enumerate(images):
        fmap_in, fmap_out = forward(model, image)[layer_name]
        pre = conv2d_loop(layer.weights, fmap_in, layer.stride, layer.padding)
        _ordering_self_test(layer, fmap_in, pre)
        post = activate(pre, layer.activation)
        cols = im2col(fmap_in, k, layer.stride, layer.padding)
        positions = rng.choice(cols.shape[1], size=min(per_image, cols.shape[1]), replace=False)
        positions = np.sort(positions)
        x_mat = np.ascontiguousarray(cols[:, positions])
        y_mat = np.ascontiguousarray(post.reshape(post.shape[0], -1)[:, positions])
        np.save(out_dir / f"{layer_name}_x{i}.npy", x_mat)
        np.save(out_dir / f"{layer_name}_y{i}.npy", y_mat)
        entry["samples_x"].append(f"{layer_name}_x{i}.npy")
        entry["samples_y"].append(f"{layer_name}_y{i}.npy")
    return entry


def export_model(
    model: ToyModel,
    out_dir,
    num_samples: int = 48,
    seed: int = 0,
    layer_names=None,
    n_images: int = 4,
) -> dict:
    """Export the requested layers (all by default) plus the manifest."""
    rng = np.random.default_rng(seed)
    names = layer_names or [layer.name for layer in model.layers]
    entries = []
    sample_free = []
    for name in names:
        entry = export_layer(model, name, num_samples, out_dir, rng, n_images=n_images)
        if not entry["samples_x"]:
            sample_free.append(name)
        entries.append(entry)
    manifest = {
        "seed": seed,
        "meta": {
            "model": model.name,
            "exporter": "convdump-0.1.0",
            "num_samples": num_samples,
            "images": n_images,
            "sample_free_layers": sample_free,
        },
        "layers": entries,
    }
    out_dir = Path(out_dir)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    validate_manifest(out_dir)
    return manifest


def validate_manifest(export_dir) -> None:
    """Check every listed file exists and its header shape is consistent."""
    export_dir = Path(export_dir)
    manifest = json.loads((export_dir / "manifest.json").read_text(encoding="utf-8"))
    for entry in manifest["layers"]:
        w = np.load(export_dir / entry["weights"], mmap_mode="r")
        if w.ndim != 2:
            raise ExportError(f"{entry['name']}: lowered weights must be 2-D")
        n, m = w.shape
        for x_file, y_file in zip(entry["samples_x"], entry["samples_y"]):
            x = np.load(export_dir / x_file, mmap_mode="r")
            y = np.load(export_dir / y_file, mmap_mode="r")
            if x.shape[0] != m or y.shape != (n, x.shape[1]):
                raise ExportError(
                    f"{entry['name']}: sample shapes {x.shape}/{y.shape} do not "
                    f"match weights {w.shape}"
                )
