"""Prediction and query-token export formats (PLY, CSV)."""

import csv

import numpy as np


def heat_colormap():
    """256-entry blue-to-red lookup table.

    For t = i/255: red = round(255 t), green = round(255 (1 - |2t - 1|)),
    blue = round(255 (1 - t)).
    """
    t = np.arange(256) / 255.0
    r = np.rint(255.0 * t)
    g = np.rint(255.0 * (1.0 - np.abs(2.0 * t - 1.0)))
    b = np.rint(255.0 * (1.0 - t))
    return np.stack([r, g, b], axis=1).astype(np.uint8)


def score_colors(scores):
    table = heat_colormap()
    idx = np.clip(np.rint(np.asarray(scores) * 255.0), 0, 255).astype(int)
    return table[idx]


def write_prediction_ply(path, coords, scores):
    """ASCII PLY with per-vertex position and heat color."""
    coords = np.asarray(coords, dtype=np.float64)
    colors = score_colors(scores)
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {coords.shape[0]}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    for (x, y, z), (r, g, b) in zip(coords, colors):
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def write_prediction_csv(path, scores):
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f)
        writer.writerow(["point_index", "score"])
        for i, s in enumerate(np.asarray(scores)):
            writer.writerow([i, f"{s:.6f}"])


def query_csv_header(channels):
    return (["layer", "image_index", "token_index", "affordance"]
            + [f"dim_{d}" for d in range(channels)])


def write_query_csv(path, rows, channels):
    """rows: iterables of (layer, image_index, token_index, affordance, vector)."""
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f)
        writer.writerow(query_csv_header(channels))
        for layer, image_index, token_index, affordance, vec in rows:
            writer.writerow([layer, image_index, token_index, affordance]
                            + [f"{v:.6f}" for v in vec])
