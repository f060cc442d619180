"""Keypoint metrics against dataset ground truth and dataset integrity checks.

Errors are raw camera-space distances: no root alignment, no Procrustes.
The total error pools all 21 + 8 keypoints of a frame into one mean, then
averages over frames.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from graspsynth import pipeline as P
from graspsynth import renderer as R
from graspsynth.assets import NUM_KEYPOINTS

PREDICTION_FORMAT = "graspsynth-predictions/1"
REPORT_FORMAT = "graspsynth-metrics/1"
NUM_CORNERS = 8
PROJECTION_TOL_PX = 1e-6
DEPTH_SEG_SAMPLE = 4  # frames checked pixel-by-pixel for depth/segmentation agreement


class PredictionError(ValueError):
    pass


def mpjpe(pred, gt) -> float:
    """Mean Euclidean keypoint distance in millimetres (inputs in metres)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.ndim != 2 or pred.shape[0] == 0:
        raise ValueError(f"expected a non-empty (N, D) keypoint array, got {pred.shape}")
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)) * 1000.0)


# ---------------------------------------------------------------------------
# predictions


@dataclass(frozen=True, eq=False)
class FramePrediction:
    frame_index: int
    hand_joints_3d: np.ndarray
    object_corners_3d: np.ndarray
    hand_joints_2d: object = None
    object_corners_2d: object = None

    def __post_init__(self):
        h = np.asarray(self.hand_joints_3d, dtype=np.float64)
        o = np.asarray(self.object_corners_3d, dtype=np.float64)
        if h.shape != (NUM_KEYPOINTS, 3):
            raise PredictionError(f"frame {self.frame_index}: hand_joints_3d must be 21x3, got {h.shape}")
        if o.shape != (NUM_CORNERS, 3):
            raise PredictionError(f"frame {self.frame_index}: object_corners_3d must be 8x3, got {o.shape}")
        object.__setattr__(self, "hand_joints_3d", h)
        object.__setattr__(self, "object_corners_3d", o)


@dataclass
class PredictionSet:
    frames: dict = field(default_factory=dict)  # frame_index -> FramePrediction

    def add(self, p: FramePrediction) -> None:
        self.frames[int(p.frame_index)] = p

    def to_dict(self) -> dict:
        out = {}
        for k in sorted(self.frames):
            p = self.frames[k]
            d = {"hand_joints_3d": p.hand_joints_3d.tolist(), "object_corners_3d": p.object_corners_3d.tolist()}
            if p.hand_joints_2d is not None:
                d["hand_joints_2d"] = np.asarray(p.hand_joints_2d).tolist()
            if p.object_corners_2d is not None:
                d["object_corners_2d"] = np.asarray(p.object_corners_2d).tolist()
            out[str(k)] = d
        return {"format_version": PREDICTION_FORMAT, "frames": out}

    @classmethod
    def from_dict(cls, data: dict) -> "PredictionSet":
        if data.get("format_version") != PREDICTION_FORMAT:
            raise PredictionError(f"unsupported prediction format {data.get('format_version')!r}")
        ps = cls()
        for k, d in data["frames"].items():
            ps.add(FramePrediction(int(k), d["hand_joints_3d"], d["object_corners_3d"],
                                   d.get("hand_joints_2d"), d.get("object_corners_2d")))
        return ps


def load_predictions(path) -> PredictionSet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"prediction file not found: {path}")
    try:
        return PredictionSet.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise PredictionError(f"{path}: malformed prediction file ({exc})") from None


def save_predictions(preds: PredictionSet, path) -> None:
    Path(path).write_text(json.dumps(preds.to_dict()) + "\n")


def predictions_from_dataset(dataset_dir, split=None, offset=(0.0, 0.0, 0.0)) -> PredictionSet:
    """Ground truth re-packaged as predictions, optionally shifted by ``offset`` metres."""
    manifest = P.load_manifest(dataset_dir)
    ps = PredictionSet()
    for entry in _split_entries(manifest, split):
        rec = P.load_annotation(dataset_dir, entry)
        ps.add(FramePrediction(rec.frame_index, rec.hand_joints_3d + offset, rec.object_corners_3d + offset))
    return ps


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class MetricsReport:
    mpjpe_total_mm: float
    mpjpe_hand_mm: float
    mpjpe_object_mm: float
    frame_count: int
    split: object
    per_frame: list  # (frame_index, hand_mm, object_mm, total_mm)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT,
            "split": self.split,
            "frame_count": self.frame_count,
            "mpjpe_total_mm": self.mpjpe_total_mm,
            "mpjpe_hand_mm": self.mpjpe_hand_mm,
            "mpjpe_object_mm": self.mpjpe_object_mm,
            "per_frame": [
                {"frame_index": i, "hand_mm": h, "object_mm": o, "total_mm": t} for i, h, o, t in self.per_frame
            ],
        }

    def table(self) -> str:
        lines = [
            f"split        {self.split if self.split is not None else 'all'}",
            f"frames       {self.frame_count}",
            f"hand MPJPE   {self.mpjpe_hand_mm:.4f} mm",
            f"object MPJPE {self.mpjpe_object_mm:.4f} mm",
            f"total MPJPE  {self.mpjpe_total_mm:.4f} mm",
        ]
        return "\n".join(lines)


def aggregate(per_frame) -> tuple:
    """(hand, object, total) means over frames of per-frame errors, summed in frame-index order."""
    rows = sorted(per_frame)
    if not rows:
        raise ValueError("no frames to aggregate")
    arr = np.array([r[1:] for r in rows], dtype=np.float64)
    return tuple(float(x) for x in arr.mean(axis=0))


def frame_errors(pred: FramePrediction, gt) -> tuple:
    """(hand_mm, object_mm, total_mm) for one frame; total pools all 29 keypoints."""
    hand = mpjpe(pred.hand_joints_3d, gt.hand_joints_3d)
    obj = mpjpe(pred.object_corners_3d, gt.object_corners_3d)
    total = mpjpe(np.vstack([pred.hand_joints_3d, pred.object_corners_3d]),
                  np.vstack([gt.hand_joints_3d, gt.object_corners_3d]))
    return hand, obj, total


def _split_entries(manifest: P.DatasetManifest, split):
    if split is None:
        return list(manifest.frames)
    if split not in manifest.splits:
        raise ValueError(f"unknown split {split!r}; dataset has {sorted(manifest.splits)}")
    wanted = set(manifest.splits[split])
    return [e for e in manifest.frames if e["frame_index"] in wanted]


def evaluate(preds: PredictionSet, dataset_dir, split=None) -> MetricsReport:
    """Compare predictions with the ground truth of every frame in ``split`` (all frames if None)."""
    manifest = P.load_manifest(dataset_dir)
    entries = _split_entries(manifest, split)
    known = {e["frame_index"] for e in manifest.frames}
    stray = sorted(set(preds.frames) - known)
    if stray:
        raise PredictionError(f"predictions for frame(s) not in the dataset: {stray[:10]}")
    missing = [e["frame_index"] for e in entries if e["frame_index"] not in preds.frames]
    if missing:
        raise PredictionError(f"missing prediction for frame {missing[0]}"
                              + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    if not entries:
        raise ValueError(f"split {split!r} has no frames")
    rows = []
    for e in entries:
        gt = P.load_annotation(dataset_dir, e)
        rows.append((e["frame_index"], *frame_errors(preds.frames[e["frame_index"]], gt)))
    rows.sort()
    hand, obj, total = aggregate(rows)
    return MetricsReport(total, hand, obj, len(rows), split, rows)


# ---------------------------------------------------------------------------
# dataset validation


@dataclass
class ValidationReport:
    failures: list = field(default_factory=list)  # (frame_index or None, check, message)
    checked_frames: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures

    def fail(self, frame, check, message) -> None:
        self.failures.append((frame, check, message))

    def checks_failed(self) -> set:
        return {c for _, c, _ in self.failures}

    def lines(self) -> list:
        out = []
        for frame, check, msg in self.failures:
            where = "dataset" if frame is None else f"frame {frame}"
            out.append(f"FAIL {where} [{check}] {msg}")
        out.append(f"{'OK' if self.ok else 'FAILED'}: {self.checked_frames} frames checked, "
                   f"{len(self.failures)} problem(s)")
        return out


def depth_segmentation_violations(seg, depth, depth_hand, depth_probe) -> int:
    """Pixels breaking: label 0 <=> no depth; hand/probe pixels carry their own-pass depth."""
    seg = np.asarray(seg)
    bad = (seg == 0) != (depth == 0)
    bad |= (seg == 1) & (depth != depth_hand)
    bad |= (seg == 3) & (depth != depth_probe)
    bad |= (depth_hand > 0) & (depth > depth_hand)
    bad |= (depth_probe > 0) & (depth > depth_probe)
    return int(np.count_nonzero(bad))


def _sample_frames(indices, k):
    if len(indices) <= k:
        return set(indices)
    pick = np.linspace(0, len(indices) - 1, k).round().astype(int)
    return {indices[i] for i in pick}


def validate_dataset(dataset_dir, sample: int = DEPTH_SEG_SAMPLE) -> ValidationReport:
    """Check files, image shapes, labels, projections, depth/segmentation agreement,
    the split partition and the frame count."""
    dataset_dir = Path(dataset_dir)
    report = ValidationReport()
    manifest = P.load_manifest(dataset_dir)

    counts = manifest.factors
    product = int(np.prod([counts[k] for k in sorted(counts)]))
    if manifest.frame_count != product:
        report.fail(None, "frame-count", f"frame count {manifest.frame_count} != factor product {product}")
    if len(manifest.frames) != manifest.frame_count:
        report.fail(None, "frame-count", f"{len(manifest.frames)} frame entries for frame count {manifest.frame_count}")
    indices = [e["frame_index"] for e in manifest.frames]
    if sorted(indices) != list(range(manifest.frame_count)):
        report.fail(None, "frame-count", "frame indices are not exactly 0..N-1")

    seen = {}
    for name, lst in manifest.splits.items():
        for i in lst:
            if i in seen:
                report.fail(i, "split", f"frame in both {seen[i]} and {name}")
            seen[i] = name
    if set(seen) != set(indices):
        gap = sorted(set(indices) - set(seen))[:5]
        report.fail(gap[0] if gap else None, "split", "split lists do not cover every frame exactly once")
    assignment = manifest.config.get("split", {})
    for e in manifest.frames:
        want = assignment.get(e["grasp_id"])
        if want is not None and seen.get(e["frame_index"]) not in (None, want):
            report.fail(e["frame_index"], "split", f"grasp {e['grasp_id']} belongs to {want}")

    w, h = manifest.config.get("image_size", (None, None))
    deep = _sample_frames(sorted(indices), sample)
    for e in manifest.frames:
        idx = e["frame_index"]
        report.checked_frames += 1
        fdir = dataset_dir / e["path"]
        missing = [p for p, f in e["files"].items() if not (fdir / f).is_file()]
        for p in missing:
            report.fail(idx, "files", f"missing {p} ({e['files'][p]})")
        images = {}
        for name in R.PASS_NAMES:
            if name in missing or name not in e["files"]:
                continue
            try:
                images[name] = R.read_pass(fdir / e["files"][name])
            except OSError as exc:
                report.fail(idx, "files", f"unreadable {name}: {exc}")
                continue
            shape = images[name].shape[:2]
            if w is not None and shape != (h, w):
                report.fail(idx, "dimensions", f"{name} is {shape[1]}x{shape[0]}, expected {w}x{h}")
        if "segmentation" in images:
            labels = set(np.unique(images["segmentation"]).tolist())
            if not labels <= set(range(4)):
                report.fail(idx, "labels", f"segmentation labels {sorted(labels - set(range(4)))} outside 0..3")
        if "annotation" not in missing:
            try:
                rec = P.load_annotation(dataset_dir, e)
            except (ValueError, KeyError, json.JSONDecodeError) as exc:
                report.fail(idx, "annotation", f"unreadable annotation: {exc}")
            else:
                err = P.reprojection_error(rec)
                if not err <= PROJECTION_TOL_PX:
                    report.fail(idx, "projection", f"2D/3D mismatch of {err:.3g} px")
                if rec.frame_index != idx:
                    report.fail(idx, "annotation", f"annotation frame_index {rec.frame_index}")
                if not rec.behind_camera and (np.any(rec.hand_joints_3d[:, 2] <= 0)
                                              or np.any(rec.object_corners_3d[:, 2] <= 0)):
                    report.fail(idx, "projection", "unflagged keypoint with non-positive depth")
        if idx in deep and all(k in images for k in ("segmentation", "depth", "depth_hand", "depth_probe")):
            n = depth_segmentation_violations(images["segmentation"], images["depth"],
                                              images["depth_hand"], images["depth_probe"])
            if n:
                report.fail(idx, "depth-segmentation", f"{n} inconsistent pixels")
    return report


# ---------------------------------------------------------------------------
# stats


def dataset_stats(dataset_dir) -> dict:
    manifest = P.load_manifest(dataset_dir)
    return {
        "frame_count": manifest.frame_count,
        "factors": dict(manifest.factors),
        "splits": manifest.split_counts(),
        "flagged_frames": sum(1 for e in manifest.frames if e.get("behind_camera")),
    }


def benchmark_throughput(dataset_dir, n_frames: int, out_dir) -> dict:
    """Re-render the first ``n_frames`` of a dataset's config single-worker and time it."""
    manifest = P.load_manifest(dataset_dir)
    cfg = P.config_from_dict(manifest.config)
    specs = P.enumerate_frames(cfg)[:n_frames]
    assets = P.SceneAssets(cfg)
    P.render_frame(specs[0], cfg, assets, out_dir)  # warm-up (JIT compile, caches)
    start = time.perf_counter()
    for spec in specs:
        P.render_frame(spec, cfg, assets, out_dir)
    elapsed = time.perf_counter() - start
    return {
        "frames": len(specs),
        "image_size": list(cfg.image_size),
        "seconds": elapsed,
        "frames_per_second": len(specs) / elapsed if elapsed > 0 else float("inf"),
    }
