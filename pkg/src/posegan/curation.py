"""Video manifest curation: quality filtering, single-person detection
filtering, pose-quality filtering, clip assembly, crop computation and
train/test splitting.

The pipeline consumes precomputed detection/pose manifests (JSON-lines) and
is pure and deterministic: re-running it on its own output reproduces it.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .pose import BODY_14, K, NECK, Pose

CROP_SIZE = 256
MIN_CLIP_LEN = 30
MAX_FRAMES = 3000

# detection thresholds
RELAXED_SCORE = 0.95
RELAXED_AREA = 0.01
NMS_IOU = 0.3
STRICT_SCORE = 0.98
MIN_AREA = 0.04
MAX_AREA = 0.80

# pose thresholds
RELAXED_TOTAL = 2.5
STRICT_TOTAL = 10.0
KEYPOINT_SCORE = 0.3
MIN_BODY_VISIBLE = 8

FPS_LOW = 23.9
FPS_HIGH = 30.0
MIN_BPP = 0.9


@dataclass
class VideoMeta:
    video_id: str
    width: int
    height: int
    frame_count: int
    fps: Optional[float] = None
    total_bits: Optional[int] = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.frame_count <= 0:
            raise ValueError("video dimensions and frame count must be positive")
        if self.fps is not None and self.fps <= 0:
            raise ValueError("fps must be positive")


@dataclass
class Detection:
    bbox: Tuple[float, float, float, float]  # (x0, y0, x1, y1) normalized
    score: float


@dataclass
class PoseCandidate:
    keypoints: np.ndarray  # (18, 3): x, y normalized, score

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(K, 3)

    @property
    def total_score(self) -> float:
        # sum of per-keypoint scores; the 2.5 / 10.0 thresholds are sums
        return float(self.keypoints[:, 2].sum())


@dataclass
class FrameRecord:
    video_id: str
    frame: int
    detections: List[Detection] = field(default_factory=list)
    pose_candidates: List[PoseCandidate] = field(default_factory=list)


@dataclass
class ClipSpan:
    video_id: str
    start: int  # indices into the strided frame sequence, half-open
    end: int
    frame_indices: List[int]  # original frame numbers
    crop: Tuple[int, int]  # top-left of the 256x256 window, resized coords
    poses: List[Pose] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "start": self.start,
            "end": self.end,
            "frames": self.frame_indices,
            "crop": list(self.crop),
            "poses": [p.to_json() for p in self.poses],
        }


@dataclass
class QualityResult:
    accept: bool
    reason: Optional[str] = None
    stride: int = 1
    resized_size: Optional[Tuple[int, int]] = None  # (w, h) after short-edge-256 resize


def quality_filter(meta: VideoMeta) -> QualityResult:
    """Resolution / bitrate / framerate gate; picks the subsampling stride.

    Accepted videos are resized (Lanczos, out of scope here) so the short
    edge is exactly 256; the stride is the smallest integer bringing the
    framerate into [23.9, 30]. Frame count is capped at 3000 after striding.
    """
    if min(meta.width, meta.height) < CROP_SIZE:
        return QualityResult(False, "resolution")
    if meta.total_bits is not None:
        bpp = meta.total_bits / (meta.frame_count * meta.width * meta.height)
        if bpp < MIN_BPP:
            return QualityResult(False, "bitrate")
    stride = 1
    if meta.fps is not None:
        stride = 0
        s = 1
        while meta.fps / s >= FPS_LOW:
            if meta.fps / s <= FPS_HIGH:
                stride = s
                break
            s += 1
        if stride == 0:
            return QualityResult(False, "framerate")
    short = min(meta.width, meta.height)
    scale = CROP_SIZE / short
    resized = (int(round(meta.width * scale)), int(round(meta.height * scale)))
    return QualityResult(True, None, stride, resized)


def _iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    ix = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    iy = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = ix * iy
    area_a = max(0.0, ax1 - ax0) * max(0.0, ay1 - ay0)
    area_b = max(0.0, bx1 - bx0) * max(0.0, by1 - by0)
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def _bbox_area(bbox) -> float:
    x0, y0, x1, y1 = bbox
    return max(0.0, x1 - x0) * max(0.0, y1 - y0)


def detection_filter_frame(frame: FrameRecord,
                           relaxed_score: float = RELAXED_SCORE,
                           relaxed_area: float = RELAXED_AREA,
                           strict_score: float = STRICT_SCORE,
                           min_area: float = MIN_AREA,
                           max_area: float = MAX_AREA) -> Tuple[str, Optional[Detection]]:
    """Two-stage single-person gate: relaxed thresholds + NMS to reject
    multi-person frames, strict thresholds to accept the survivor.

    Returns one of ("multi_person", None), ("weak", None), ("single_ok", box).
    """
    cands = [(i, det) for i, det in enumerate(frame.detections)
             if det.score >= relaxed_score and _bbox_area(det.bbox) >= relaxed_area]
    # greedy NMS, score descending, ties broken by original order
    cands.sort(key=lambda t: (-t[1].score, t[0]))
    kept: List[Detection] = []
    for _, det in cands:
        if all(_iou(det.bbox, k.bbox) <= NMS_IOU for k in kept):
            kept.append(det)
    if len(kept) > 1:
        return "multi_person", None
    if not kept:
        return "weak", None
    box = kept[0]
    area = _bbox_area(box.bbox)
    if box.score >= strict_score and min_area <= area <= max_area:
        return "single_ok", box
    return "weak", None


def detection_filter(frames: Sequence[FrameRecord]) -> List[Tuple[str, Optional[Detection]]]:
    return [detection_filter_frame(f) for f in frames]


def pose_filter(frame: FrameRecord,
                relaxed_total: float = RELAXED_TOTAL,
                strict_total: float = STRICT_TOTAL,
                keypoint_score: float = KEYPOINT_SCORE) -> Tuple[str, Optional[PoseCandidate]]:
    """Single-person pose gate.

    Multiple candidates above the relaxed total score mean multiple people.
    The surviving candidate needs a strict total score, a visible neck, and
    at least 8 of the 14 non-eye/ear keypoints visible.
    """
    cands = [c for c in frame.pose_candidates if c.total_score >= relaxed_total]
    if len(cands) >= 2:
        return "multi_person", None
    if not cands:
        return "fail", None
    cand = cands[0]
    if cand.total_score < strict_total:
        return "fail", None
    vis = cand.keypoints[:, 2] >= keypoint_score
    if not vis[NECK]:
        return "fail", None
    if int(vis[BODY_14].sum()) < MIN_BODY_VISIBLE:
        return "fail", None
    return "pass", cand


def segment_clips(statuses: Sequence[bool], min_len: int = MIN_CLIP_LEN) -> List[Tuple[int, int]]:
    """Maximal runs of passing frames with length >= min_len, as half-open spans."""
    spans = []
    start = None
    for i, ok in enumerate(statuses):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start >= min_len:
                spans.append((start, i))
            start = None
    if start is not None and len(statuses) - start >= min_len:
        spans.append((start, len(statuses)))
    return spans


def compute_crop(bboxes: Sequence[Tuple[float, float, float, float]],
                 frame_size: Tuple[int, int]) -> Tuple[int, int]:
    """256x256 window toward the mean bbox center, clamped inside the frame.

    bboxes are normalized; frame_size = (w, h) after the short-edge resize.
    """
    w, h = frame_size
    if w < CROP_SIZE or h < CROP_SIZE:
        raise ValueError("frame must be at least 256 pixels on both axes")
    if not bboxes:
        raise ValueError("segment has no bounding boxes")
    centers = np.array([[(x0 + x1) / 2.0 * w, (y0 + y1) / 2.0 * h]
                        for x0, y0, x1, y1 in bboxes])
    cx, cy = centers.mean(axis=0)
    x0 = int(np.clip(round(cx - CROP_SIZE / 2), 0, w - CROP_SIZE))
    y0 = int(np.clip(round(cy - CROP_SIZE / 2), 0, h - CROP_SIZE))
    return x0, y0


def crop_pose(cand: PoseCandidate, frame_size: Tuple[int, int], crop: Tuple[int, int],
              keypoint_score: float = KEYPOINT_SCORE) -> Pose:
    """Convert a normalized pose candidate into crop-window pixel coordinates."""
    w, h = frame_size
    x0, y0 = crop
    kp = cand.keypoints[:, :2] * np.array([w, h]) - np.array([x0, y0])
    vis = cand.keypoints[:, 2] >= keypoint_score
    inside = (kp[:, 0] >= 0) & (kp[:, 0] < CROP_SIZE) & (kp[:, 1] >= 0) & (kp[:, 1] < CROP_SIZE)
    vis = vis & inside
    kp[~vis] = 0.0
    return Pose(keypoints=kp, visibility=vis, reference_resolution=CROP_SIZE)


def split_clips(clips: Sequence, test_count: int, seed: int = 0,
                by_video: bool = False) -> Tuple[list, list]:
    """Deterministic seeded split; optionally keeps all clips of a video together."""
    clips = list(clips)
    if test_count > len(clips):
        raise ValueError(f"test_count {test_count} exceeds clip count {len(clips)}")
    rng = np.random.default_rng(seed)
    if by_video:
        videos = sorted({c.video_id for c in clips})
        order = list(rng.permutation(len(videos)))
        test_videos = set()
        n_test = 0
        for i in order:
            if n_test >= test_count:
                break
            vid = videos[i]
            test_videos.add(vid)
            n_test += sum(1 for c in clips if c.video_id == vid)
        test = [c for c in clips if c.video_id in test_videos]
        train = [c for c in clips if c.video_id not in test_videos]
    else:
        order = rng.permutation(len(clips))
        test = [clips[i] for i in order[:test_count]]
        train = [clips[i] for i in order[test_count:]]
    if not train:
        warnings.warn("test split consumed every clip; train set is empty")
    return train, test


@dataclass
class CurationStats:
    videos_total: int = 0
    videos_accepted: int = 0
    video_reject_reasons: Dict[str, int] = field(default_factory=dict)
    frames_total: int = 0
    frames_multi_person: int = 0
    frames_weak_detection: int = 0
    frames_failed_pose: int = 0
    frames_passed: int = 0
    clips: int = 0
    clip_frames: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def curate_video(meta: VideoMeta, frames: Sequence[FrameRecord],
                 stats: Optional[CurationStats] = None) -> List[ClipSpan]:
    """Run the full per-video pipeline: quality gate, per-frame filters,
    clip segmentation, one shared crop per clip, pose conversion."""
    stats = stats if stats is not None else CurationStats()
    stats.videos_total += 1
    q = quality_filter(meta)
    if not q.accept:
        stats.video_reject_reasons[q.reason] = stats.video_reject_reasons.get(q.reason, 0) + 1
        return []
    stats.videos_accepted += 1

    frames = sorted(frames, key=lambda f: f.frame)
    kept = [f for f in frames if f.frame % q.stride == 0][:MAX_FRAMES]
    stats.frames_total += len(kept)

    statuses = []
    accepted = []  # (Detection, PoseCandidate) for passing frames, None otherwise
    for f in kept:
        det_status, box = detection_filter_frame(f)
        if det_status == "multi_person":
            stats.frames_multi_person += 1
            statuses.append(False)
            accepted.append(None)
            continue
        if det_status == "weak":
            stats.frames_weak_detection += 1
            statuses.append(False)
            accepted.append(None)
            continue
        pose_status, cand = pose_filter(f)
        if pose_status == "multi_person":
            stats.frames_multi_person += 1
            statuses.append(False)
            accepted.append(None)
            continue
        if pose_status == "fail":
            stats.frames_failed_pose += 1
            statuses.append(False)
            accepted.append(None)
            continue
        stats.frames_passed += 1
        statuses.append(True)
        accepted.append((box, cand))

    clips = []
    for start, end in segment_clips(statuses):
        boxes = [accepted[i][0].bbox for i in range(start, end)]
        crop = compute_crop(boxes, q.resized_size)
        poses = [crop_pose(accepted[i][1], q.resized_size, crop) for i in range(start, end)]
        clips.append(ClipSpan(
            video_id=meta.video_id, start=start, end=end,
            frame_indices=[kept[i].frame for i in range(start, end)],
            crop=crop, poses=poses))
        stats.clips += 1
        stats.clip_frames += end - start
    return clips


def parse_manifest(lines) -> List[Tuple[VideoMeta, List[FrameRecord]]]:
    """Parse a JSON-lines manifest: per-video header records then frame records."""
    metas: Dict[str, VideoMeta] = {}
    frames: Dict[str, List[FrameRecord]] = {}
    for line in lines:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        vid = obj["video_id"]
        if obj.get("type") == "video" or "width" in obj:
            metas[vid] = VideoMeta(
                video_id=vid, width=obj["width"], height=obj["height"],
                frame_count=obj["frame_count"], fps=obj.get("fps"),
                total_bits=obj.get("total_bits"))
            frames.setdefault(vid, [])
        else:
            frames.setdefault(vid, []).append(FrameRecord(
                video_id=vid, frame=obj["frame"],
                detections=[Detection(tuple(d["bbox"]), d["score"])
                            for d in obj.get("detections", [])],
                pose_candidates=[PoseCandidate(np.asarray(p["keypoints"]))
                                 for p in obj.get("poses", [])]))
    return [(metas[v], frames.get(v, [])) for v in sorted(metas)]


def curate_manifest(lines, stats: Optional[CurationStats] = None) -> Tuple[List[ClipSpan], CurationStats]:
    """Curate a whole manifest; videos processed in video_id order so the
    output is deterministic."""
    stats = stats if stats is not None else CurationStats()
    clips: List[ClipSpan] = []
    for meta, frames in parse_manifest(lines):
        clips.extend(curate_video(meta, frames, stats))
    return clips, stats
