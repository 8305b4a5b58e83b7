"""MRF refinement vs greedy NMS on synthetic proposal clouds."""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .densemap import active_set
from .evalkit import PrCurve, average_precision, equal_error_rate, localization_errors
from .mrf import MrfConfig, extract_detections, run_inference
from .nms import greedy_nms_indices
from .synth import SceneSpec, generate_scene

BENCH_COLUMNS = ("scene", "method", "n_active", "n_detections", "n_gt", "corner_error",
                 "ap", "eer", "t_active_s", "t_infer_s", "t_extract_s", "t_eval_s")
METHODS = ("mrf", "nms")


def _safe_eer(curve: PrCurve) -> float:
    try:
        return equal_error_rate(curve)
    except ValueError:
        return math.nan


def _evaluate(method, scene_id, n_active, boxes, scores, gt, iou_thr, times):
    t0 = time.perf_counter()
    curve = PrCurve.from_detections(boxes, scores, gt, iou_thr)
    errors = localization_errors(boxes, scores, gt, iou_thr)
    row = {
        "scene": scene_id, "method": method, "n_active": n_active,
        "n_detections": len(scores), "n_gt": len(gt),
        "corner_error": float(np.nanmean(errors)) if np.any(np.isfinite(errors)) else math.nan,
        "ap": average_precision(curve) if len(gt) else math.nan,
        "eer": _safe_eer(curve) if len(gt) else math.nan,
    }
    times["t_eval_s"] = time.perf_counter() - t0
    row.update(times)
    return row, curve, errors


def bench_scene(spec: SceneSpec, mrf: MrfConfig, nms_iou: float = 0.5, eval_iou: float = 0.5):
    """Rows for both methods on one scene, plus their curves and per-gt errors."""
    sc = generate_scene(spec)
    gt = sc.truth.boxes
    t0 = time.perf_counter()
    act = active_set(sc.proposals, mrf.rho)
    t_active = time.perf_counter() - t0
    n = len(act.indices)
    out = {}

    t0 = time.perf_counter()
    state = run_inference(act.boxes, sc.proposals.shape, mrf, act.indices) if n else None
    t_infer = time.perf_counter() - t0
    t0 = time.perf_counter()
    dets = extract_detections(state, mrf) if n else []
    t_extract = time.perf_counter() - t0
    boxes = np.array([d.box for d in dets]).reshape(-1, 4)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    out["mrf"] = _evaluate("mrf", spec.seed, n, boxes, scores, gt, eval_iou,
                           {"t_active_s": t_active, "t_infer_s": t_infer, "t_extract_s": t_extract})

    t0 = time.perf_counter()
    keep = greedy_nms_indices(act.boxes, act.scores, nms_iou)
    t_infer = time.perf_counter() - t0
    out["nms"] = _evaluate("nms", spec.seed, n, act.boxes[keep], act.scores[keep], gt, eval_iou,
                           {"t_active_s": t_active, "t_infer_s": t_infer, "t_extract_s": 0.0})
    return out


def run_bench(base: SceneSpec, n_scenes: int, mrf: MrfConfig | None = None, nms_iou: float = 0.5,
              eval_iou: float = 0.5, workers: int = 1) -> list[dict]:
    """Per-scene rows (scene ids ``base.seed + k``) followed by one pooled row per method.

    The pooled row (``scene = "all"``) carries AP/EER of the concatenated
    ledgers, the mean corner error over all matched ground truth and summed
    timings.
    """
    mrf = mrf or MrfConfig()
    specs = [replace(base, seed=base.seed + k) for k in range(n_scenes)]
    work = lambda spec: bench_scene(spec, mrf, nms_iou, eval_iou)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, specs))
    else:
        results = [work(s) for s in specs]
    rows = []
    for res in results:
        rows += [res[m][0] for m in METHODS]
    for m in METHODS:
        curves = [res[m][1] for res in results]
        errors = np.concatenate([res[m][2] for res in results]) if results else np.zeros(0)
        pooled = PrCurve.concat(curves)
        per = [res[m][0] for res in results]
        row = {
            "scene": "all", "method": m,
            "n_active": sum(r["n_active"] for r in per),
            "n_detections": sum(r["n_detections"] for r in per),
            "n_gt": pooled.n_gt,
            "corner_error": float(np.nanmean(errors)) if np.any(np.isfinite(errors)) else math.nan,
            "ap": average_precision(pooled) if pooled.n_gt else math.nan,
            "eer": _safe_eer(pooled) if pooled.n_gt else math.nan,
        }
        for key in ("t_active_s", "t_infer_s", "t_extract_s", "t_eval_s"):
            row[key] = sum(r[key] for r in per)
        rows.append(row)
    return rows


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def bench_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in rows:
        w.writerow([_cell(r[c]) for c in BENCH_COLUMNS])
    return buf.getvalue()


def validate_bench_csv(text: str) -> list[dict]:
    """Parse bench CSV text, raising ``ValueError`` on any schema violation."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != BENCH_COLUMNS:
        raise ValueError(f"bad header {header}")
    rows = []
    for lineno, raw in enumerate(reader, start=2):
        if len(raw) != len(BENCH_COLUMNS):
            raise ValueError(f"line {lineno}: wrong field count")
        r = dict(zip(BENCH_COLUMNS, raw))
        if r["method"] not in METHODS:
            raise ValueError(f"line {lineno}: unknown method {r['method']!r}")
        if r["scene"] != "all":
            int(r["scene"])
        for c in ("n_active", "n_detections", "n_gt"):
            if int(r[c]) < 0:
                raise ValueError(f"line {lineno}: negative {c}")
        for c in ("corner_error", "ap", "eer", "t_active_s", "t_infer_s", "t_extract_s", "t_eval_s"):
            v = float(r[c]) if r[c] else math.nan
            if c in ("ap", "eer") and not (math.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"line {lineno}: {c} out of range")
            if c not in ("ap", "eer") and v < 0:
                raise ValueError(f"line {lineno}: negative {c}")
            r[c] = v
        rows.append(r)
    if not any(r["scene"] == "all" for r in rows):
        raise ValueError("missing pooled rows")
    return rows
