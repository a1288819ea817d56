"""Selection quality against ground-truth relevant segments.

Frame-level precision/recall/F1 treat the union of segments as the relevant
set; segment-level coverage asks, per segment, whether enough of its frames
were kept (the hit number, boundary inclusive).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError, DataFormatError


@dataclass(frozen=True)
class GroundTruth:
    """Disjoint, sorted, inclusive [start, end] frame ranges."""
    segments: tuple[tuple[int, int], ...]
    video_length: int

    def __init__(self, segments: Sequence[tuple[int, int]], video_length: int):
        segments = tuple((int(s), int(e)) for s, e in segments)
        if video_length < 1:
            raise DataFormatError(f"video_length must be >= 1, got {video_length}")
        prev_end = -1
        for s, e in segments:
            if s < 0 or e < s:
                raise DataFormatError(f"bad segment ({s}, {e})")
            if e >= video_length:
                raise DataFormatError(
                    f"segment ({s}, {e}) exceeds video length {video_length}")
            if s <= prev_end:
                raise DataFormatError(
                    f"segment ({s}, {e}) overlaps or is out of order")
            prev_end = e
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "video_length", video_length)

    def relevant_frames(self) -> set[int]:
        out: set[int] = set()
        for s, e in self.segments:
            out.update(range(s, e + 1))
        return out


def _check_selected(selected: Iterable[int], video_length: int) -> set[int]:
    sel = set(int(i) for i in selected)
    for i in sel:
        if i < 0 or i >= video_length:
            raise DataFormatError(
                f"selected frame {i} outside [0, {video_length})")
    return sel


def precision_recall_f1(selected: Iterable[int], gt: GroundTruth
                        ) -> tuple[float, float, float]:
    """Frame-level scores; an empty selection scores precision 0."""
    sel = _check_selected(selected, gt.video_length)
    relevant = gt.relevant_frames()
    hits = len(sel & relevant)
    precision = hits / len(sel) if sel else 0.0
    recall = hits / len(relevant) if relevant else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return precision, recall, f1


def segment_coverage(selected: Iterable[int], gt: GroundTruth,
                     hit_number: int) -> float:
    """Fraction of segments with at least hit_number selected frames."""
    if hit_number < 1:
        raise ConfigError(f"hit_number must be >= 1, got {hit_number}")
    if not gt.segments:
        raise DataFormatError("coverage needs at least one ground-truth segment")
    sel = _check_selected(selected, gt.video_length)
    covered = 0
    for s, e in gt.segments:
        inside = sum(1 for i in sel if s <= i <= e)
        if inside >= hit_number:
            covered += 1
    return covered / len(gt.segments)


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    coverage_curve: Mapping[int, float]
    selected_count: int
    relevant_count: int

    def to_text(self) -> str:
        lines = [
            f"precision = {self.precision:.6f}",
            f"recall = {self.recall:.6f}",
            f"f1 = {self.f1:.6f}",
            f"selected_count = {self.selected_count}",
            f"relevant_count = {self.relevant_count}",
        ]
        for hit in sorted(self.coverage_curve):
            lines.append(f"coverage[{hit}] = {self.coverage_curve[hit]:.6f}")
        return "\n".join(lines) + "\n"

    def coverage_csv(self) -> str:
        rows = ["hit_number,coverage"]
        for hit in sorted(self.coverage_curve):
            rows.append(f"{hit},{self.coverage_curve[hit]:.6f}")
        return "\n".join(rows) + "\n"


def evaluate_selection(selected: Iterable[int], gt: GroundTruth,
                       hit_numbers: Sequence[int]) -> EvalReport:
    sel = _check_selected(selected, gt.video_length)
    p, r, f1 = precision_recall_f1(sel, gt)
    curve = {int(h): segment_coverage(sel, gt, int(h)) for h in hit_numbers}
    return EvalReport(precision=p, recall=r, f1=f1, coverage_curve=curve,
                      selected_count=len(sel),
                      relevant_count=len(gt.relevant_frames()))
