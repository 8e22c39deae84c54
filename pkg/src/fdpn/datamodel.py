"""Video samples, manifests, frame-level ground truth and the synthetic dataset generator."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ManifestParseError, ValidationError
from .tensorio import load_tensor, save_tensor

SPLITS = ("train", "test")
LABELS = ("normal", "abnormal")
DIRECTIONS = ("left_back", "center", "right_back")
MANIFEST_HEADER = ["video_id", "split", "label", "direction", "frame_count", "anomaly_ranges"]


@dataclass(frozen=True)
class VideoSample:
    video_id: str
    split: str
    label: str
    direction: str | None
    frame_count: int
    anomaly_ranges: tuple[tuple[int, int], ...] = ()

    @property
    def is_abnormal(self) -> bool:
        return self.label == "abnormal"

    @property
    def direction_index(self) -> int | None:
        return None if self.direction is None else DIRECTIONS.index(self.direction)

    def validate(self) -> "VideoSample":
        vid = self.video_id
        if not vid:
            raise ValidationError("empty video_id")
        if self.split not in SPLITS:
            raise ValidationError(f"{vid}: unknown split {self.split!r}")
        if self.label not in LABELS:
            raise ValidationError(f"{vid}: unknown label {self.label!r}")
        if self.frame_count <= 0:
            raise ValidationError(f"{vid}: frame_count must be positive, got {self.frame_count}")
        if self.direction is not None and self.direction not in DIRECTIONS:
            raise ValidationError(f"{vid}: unknown direction {self.direction!r}")
        if (self.direction is not None) != self.is_abnormal:
            raise ValidationError(f"{vid}: direction must be present iff label=abnormal")
        needs_ranges = self.split == "test" and self.is_abnormal
        if bool(self.anomaly_ranges) != needs_ranges:
            raise ValidationError(f"{vid}: anomaly_ranges must be non-empty iff split=test and label=abnormal")
        previous_end = -1
        for start, end in sorted(self.anomaly_ranges):
            if not 0 <= start <= end < self.frame_count:
                raise ValidationError(f"{vid}: range {start}-{end} outside [0, {self.frame_count})")
            if start <= previous_end:
                raise ValidationError(f"{vid}: overlapping anomaly ranges")
            previous_end = end
        return self


@dataclass(frozen=True)
class FrameGroundTruth:
    video_id: str
    labels: np.ndarray


def _format_ranges(ranges: Iterable[tuple[int, int]]) -> str:
    return ";".join(f"{s}-{e}" for s, e in ranges)


def _parse_ranges(text: str, line: int) -> tuple[tuple[int, int], ...]:
    text = text.strip()
    if not text:
        return ()
    out = []
    for part in text.split(";"):
        try:
            start, end = part.strip().split("-")
            out.append((int(start), int(end)))
        except ValueError:
            raise ManifestParseError(line, f"bad anomaly range {part!r}") from None
    return tuple(out)


def parse_manifest(text: str) -> list[VideoSample]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ManifestParseError(1, "empty manifest")
    start = 0
    if [c.strip() for c in rows[0]] == MANIFEST_HEADER:
        start = 1
    samples = []
    seen = set()
    for idx in range(start, len(rows)):
        line = idx + 1
        row = rows[idx]
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise ManifestParseError(line, f"expected {len(MANIFEST_HEADER)} columns, got {len(row)}")
        video_id, split, label, direction, frame_count, ranges = (c.strip() for c in row)
        try:
            count = int(frame_count)
        except ValueError:
            raise ManifestParseError(line, f"frame_count {frame_count!r} is not an integer") from None
        sample = VideoSample(
            video_id=video_id,
            split=split,
            label=label,
            direction=direction or None,
            frame_count=count,
            anomaly_ranges=_parse_ranges(ranges, line),
        )
        sample.validate()
        if video_id in seen:
            raise ValidationError(f"{video_id}: duplicate video_id")
        seen.add(video_id)
        samples.append(sample)
    return samples


def load_manifest(path: str | Path) -> list[VideoSample]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def format_manifest(samples: Sequence[VideoSample]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for s in samples:
        writer.writerow([s.video_id, s.split, s.label, s.direction or "", s.frame_count,
                         _format_ranges(s.anomaly_ranges)])
    return buf.getvalue()


def write_manifest(path: str | Path, samples: Sequence[VideoSample]) -> None:
    Path(path).write_text(format_manifest(samples), encoding="utf-8")


def expand_ground_truth(sample: VideoSample) -> FrameGroundTruth:
    if sample.split != "test":
        raise ValueError(f"{sample.video_id}: frame-level ground truth exists only for test videos")
    labels = np.zeros(sample.frame_count, dtype=np.int8)
    for start, end in sample.anomaly_ranges:
        labels[start:end + 1] = 1
    return FrameGroundTruth(sample.video_id, labels)


def padded_length(frame_count: int, T: int, N: int) -> int:
    window = T * N
    return -(-frame_count // window) * window


def pad_frames(frames: np.ndarray, T: int, N: int) -> np.ndarray:
    """Right-pad along axis 0 to a multiple of T*N by repeating the last frame."""
    if len(frames) == 0:
        raise ValidationError("cannot pad an empty video")
    target = padded_length(len(frames), T, N)
    if target == len(frames):
        return frames
    tail = np.repeat(frames[-1:], target - len(frames), axis=0)
    return np.concatenate([frames, tail], axis=0)


# --------------------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    num_videos: int = 24
    frame_count: int = 512
    anomaly_duration_range: tuple[int, int] = (16, 96)
    anomaly_intensity: float = 0.8
    direction_signal: bool = True
    seed: int = 0
    num_test: int = 8
    height: int = 36
    width: int = 72
    noise: float = 0.05
    background: float = 0.3
    blob_size: int = 8
    grid_n: int = 3

    def validate(self) -> "SyntheticSpec":
        lo, hi = self.anomaly_duration_range
        if self.num_videos < 4 or not 2 <= self.num_test <= self.num_videos - 2:
            raise ValidationError("need at least 2 train and 2 test videos")
        if not 1 <= lo <= hi <= self.frame_count:
            raise ValidationError(f"bad anomaly_duration_range {self.anomaly_duration_range}")
        if self.width % 3 or self.height % self.grid_n or self.width % self.grid_n:
            raise ValidationError("frame dims must tile the 1x3 direction grid and the n x n mask grid")
        if self.blob_size > min(self.height // self.grid_n, self.width // self.grid_n):
            raise ValidationError("blob_size exceeds grid cell")
        return self


@dataclass(frozen=True)
class SyntheticAnnotation:
    video_id: str
    start: int
    end: int
    direction: str
    region_row: int
    region_col: int

    @property
    def duration(self) -> int:
        return self.end - self.start + 1


def _region_for_direction(direction_idx: int, grid_n: int, rng: np.random.Generator) -> tuple[int, int]:
    # grid columns whose centre falls inside the panorama third of this direction
    cols = [c for c in range(grid_n) if int((c + 0.5) * 3 / grid_n) == direction_idx]
    return int(rng.integers(grid_n)), int(rng.choice(cols))


def render_video(spec: SyntheticSpec, rng: np.random.Generator,
                 anomaly: SyntheticAnnotation | None) -> np.ndarray:
    frames = spec.background + spec.noise * rng.standard_normal(
        (spec.frame_count, spec.height, spec.width))
    if anomaly is not None:
        ch, cw = spec.height // spec.grid_n, spec.width // spec.grid_n
        y0, x0 = anomaly.region_row * ch, anomaly.region_col * cw
        b = spec.blob_size
        for f in range(anomaly.start, anomaly.end + 1):
            # the blob jitters inside its cell so temporal differences stay high
            dy = int(rng.integers(ch - b + 1))
            dx = int(rng.integers(cw - b + 1))
            frames[f, y0 + dy:y0 + dy + b, x0 + dx:x0 + dx + b] += spec.anomaly_intensity
    return frames.astype(np.float32)


def synthesize(spec: SyntheticSpec) -> tuple[list[VideoSample], list[SyntheticAnnotation], dict[str, np.ndarray]]:
    """Generate samples, generator-side annotations and frames in memory."""
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    plan_rng = np.random.default_rng(root.spawn(1)[0])
    video_seeds = root.spawn(spec.num_videos + 1)[1:]
    num_train = spec.num_videos - spec.num_test
    samples, annotations, frames = [], [], {}
    lo, hi = spec.anomaly_duration_range
    for i in range(spec.num_videos):
        split = "train" if i < num_train else "test"
        local = i if split == "train" else i - num_train
        abnormal = local % 2 == 0
        video_id = f"{split}_{local:03d}"
        anomaly = None
        direction = None
        ranges: tuple[tuple[int, int], ...] = ()
        if abnormal:
            d_idx = int(plan_rng.integers(3))
            direction = DIRECTIONS[d_idx]
            place_idx = d_idx if spec.direction_signal else int(plan_rng.integers(3))
            row, col = _region_for_direction(place_idx, spec.grid_n, plan_rng)
            duration = int(plan_rng.integers(lo, hi + 1))
            start = int(plan_rng.integers(0, spec.frame_count - duration + 1))
            anomaly = SyntheticAnnotation(video_id, start, start + duration - 1, direction, row, col)
            annotations.append(anomaly)
            if split == "test":
                ranges = ((anomaly.start, anomaly.end),)
        sample = VideoSample(video_id, split, "abnormal" if abnormal else "normal", direction,
                             spec.frame_count, ranges).validate()
        samples.append(sample)
        frames[video_id] = render_video(spec, np.random.default_rng(video_seeds[i]), anomaly)
    return samples, annotations, frames


ANNOTATION_HEADER = ["video_id", "start", "end", "direction", "region_row", "region_col"]


def write_annotations(path: str | Path, annotations: Sequence[SyntheticAnnotation]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ANNOTATION_HEADER)
    for a in annotations:
        writer.writerow([a.video_id, a.start, a.end, a.direction, a.region_row, a.region_col])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_annotations(path: str | Path) -> dict[str, SyntheticAnnotation]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return {
            r["video_id"]: SyntheticAnnotation(r["video_id"], int(r["start"]), int(r["end"]), r["direction"],
                                               int(r["region_row"]), int(r["region_col"]))
            for r in reader
        }


def frames_path(dataset_dir: str | Path, video_id: str) -> Path:
    return Path(dataset_dir) / "frames" / f"{video_id}.fdpn"


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Path:
    """Write manifest.csv, annotations.csv, synthetic.json and frames/<id>.fdpn under out_dir."""
    out = Path(out_dir)
    samples, annotations, frames = synthesize(spec)
    try:
        (out / "frames").mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.csv", samples)
        write_annotations(out / "annotations.csv", annotations)
        spec_dict = asdict(spec)
        spec_dict["anomaly_duration_range"] = list(spec.anomaly_duration_range)
        (out / "synthetic.json").write_text(json.dumps(spec_dict, sort_keys=True, indent=2) + "\n")
        for video_id, video in frames.items():
            save_tensor(frames_path(out, video_id), video)
    except OSError as exc:
        raise OSError(f"failed writing synthetic dataset to {out}: {exc}") from exc
    return out


@dataclass
class Dataset:
    """A manifest plus the directory its frame files live in."""

    root: Path
    samples: list[VideoSample] = field(default_factory=list)

    @classmethod
    def open(cls, root: str | Path) -> "Dataset":
        root = Path(root)
        return cls(root, load_manifest(root / "manifest.csv"))

    def split(self, name: str) -> list[VideoSample]:
        return [s for s in self.samples if s.split == name]

    def frames(self, video_id: str) -> np.ndarray:
        arr = load_tensor(frames_path(self.root, video_id))
        if arr.ndim != 3:
            raise ValidationError(f"{video_id}: expected frames of rank 3 (F, H, W), got {arr.shape}")
        return arr

    def annotations(self) -> dict[str, SyntheticAnnotation]:
        path = self.root / "annotations.csv"
        return load_annotations(path) if path.exists() else {}
