"""Slow, loop-based reference implementations used only as test oracles."""
from __future__ import annotations

import math

import numpy as np


def knn_bruteforce(coords, k):
    """Sort every other vertex by (squared distance, index) with self in front."""
    pts = [tuple(float(v) for v in row) for row in coords]
    out = []
    for i, p in enumerate(pts):
        def key(j):
            d2 = sum((a - b) ** 2 for a, b in zip(p, pts[j]))
            return (j != i, d2, j)

        out.append(sorted(range(len(pts)), key=key)[:k])
    return np.array(out, dtype=np.int64).reshape(len(pts), k)


def _inside(shape, px, py, t_ms):
    cx = shape.position[0] + shape.velocity[0] * t_ms
    cy = shape.position[1] + shape.velocity[1] * t_ms
    dx = (px + 0.5) - cx
    dy = (py + 0.5) - cy
    if shape.kind == "disk":
        r = shape.size / 2
        return dy * dy + dx * dx <= r * r
    hx, hy = (shape.size / 2, shape.size / 8) if shape.kind == "bar" else (shape.size / 2, shape.size / 2)
    return -hx <= dx < hx and -hy <= dy < hy


def log_level(spec, px, py, t_ms):
    level = math.log(spec.background)
    for shape in spec.shapes:
        if _inside(shape, px, py, t_ms):
            level = math.log(spec.background) + shape.contrast
    return level


def simulate_contrast_events(spec, seed):
    """Per-pixel threshold model at 1 kHz as plain loops.

    Returns ``(x, y, t, p)`` arrays. Jitter follows the generator's documented
    draw order: one batch per frame over the frame's events in row-major pixel
    order, each pixel's events contiguous.
    """
    rng = np.random.default_rng(seed)
    ref = [[log_level(spec, x, y, 0.0) for x in range(spec.width)] for y in range(spec.height)]
    events = []
    for f in range(1, spec.duration // 1000 + 1):
        frame_events = []
        for y in range(spec.height):
            for x in range(spec.width):
                level = log_level(spec, x, y, float(f))
                delta = level - ref[y][x]
                k = 0
                while (k + 1) * spec.threshold < abs(delta):
                    k += 1
                if k:
                    frame_events += [(x, y, 1 if delta > 0 else -1)] * k
                    ref[y][x] = level
        if frame_events:
            jitter = rng.integers(0, 1000, size=len(frame_events))
            events += [(x, y, (f - 1) * 1000 + int(j), p) for (x, y, p), j in zip(frame_events, jitter)]
    events.sort(key=lambda e: e[2])  # stable
    if not events:
        return tuple(np.zeros(0, dtype=np.int64) for _ in range(4))
    return tuple(np.array(c, dtype=np.int64) for c in zip(*events))


def select_bruteforce(counts, n_points):
    ranked = sorted(((c, key) for key, c in counts.items() if c > 0), key=lambda item: (-item[0], item[1][2], item[1][0], item[1][1]))
    return [key for _, key in ranked[:n_points]]


def graph_bruteforce(stream, v_h, v_w, v_a, A, n_points):
    """Event-by-event voxel assignment, full-sort selection and feature sums.

    Returns ``(coords, counts, features)`` with features in float64.
    """
    t0, t1 = int(stream.t[0]), int(stream.t[-1])
    n_t = math.ceil(A / v_a)
    below_one = np.nextafter(1.0, 0.0)
    voxels = {}
    for x, y, t, p in zip(stream.x.tolist(), stream.y.tolist(), stream.t.tolist(), stream.p.tolist()):
        tn = 0.0 if t1 == t0 else (t - t0) * A / (t1 - t0)
        tv = min(math.floor(tn / v_a), n_t - 1)
        t_in = min((tn - tv * v_a) / v_a, below_one)
        key = (x // v_h, y // v_w, tv)
        voxels.setdefault(key, []).append((x - key[0] * v_h, y - key[1] * v_w, t_in, p))
    chosen = select_bruteforce({k: len(v) for k, v in voxels.items()}, n_points)
    feats = np.zeros((len(chosen), v_h * v_w))
    for i, key in enumerate(chosen):
        for xl, yl, t_in, p in voxels[key]:
            feats[i, xl * v_w + yl] += p * t_in
    coords = np.array(chosen, dtype=np.int64).reshape(-1, 3)
    counts = np.array([len(voxels[k]) for k in chosen], dtype=np.int64)
    return coords, counts, feats
