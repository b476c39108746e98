"""Evaluation report of fitted photometric parameters.

The report holds a per-frame exposure series, the colour matrix deviation of
every frame, radial vignetting profiles and sampled response curves with a
linearity score. It is written as ``report.csv`` (one row per frame),
``report.json`` (everything) and ``report.md`` (rendered summary).
"""

from __future__ import annotations

import csv
import json
from collections.abc import Sequence
from pathlib import Path
from typing import TypedDict

import jinja2
import numpy as np
from scipy.integrate import trapezoid

from .params import PhotometricParams, apply_crf, vignette_gain

PROFILE_RADII = (0.0, 0.25, 0.5, 0.75, 1.0)
CURVE_SAMPLES = 17
LINEAR_THRESHOLD = 0.02
_DENSE = np.linspace(0.0, 1.0, 1025)
_CHANNELS = ("red", "green", "blue")


class FrameRow(TypedDict):
    """A row of ``report.csv``."""

    frame: int
    exposure_ev: float
    ccm_deviation: float
    gt_exposure_ev: float | None


def crf_deviation(increments: np.ndarray) -> tuple[float, float]:
    """Mean and maximum of ``|crf(v) - v|`` over ``[0, 1]`` for one channel."""
    deviation = np.abs(apply_crf(_DENSE, increments) - _DENSE)
    return float(trapezoid(deviation, _DENSE)), float(deviation.max())


def linearity_score(params: PhotometricParams) -> float:
    """Largest mean absolute deviation from the identity over the channels."""
    return max(crf_deviation(params.response.crf[c])[0] for c in range(3))


def evaluation_report(
    params: PhotometricParams,
    frame_ids: Sequence[int] | None = None,
    ground_truth: PhotometricParams | None = None,
    linear_threshold: float = LINEAR_THRESHOLD,
) -> dict:
    """Summarise ``params``.

    ``ground_truth`` (a synthetic corruption) adds its exposure series,
    relative to frame 0, next to the recovered one.
    """
    frame_ids = list(range(len(params))) if frame_ids is None else list(frame_ids)
    deviation = np.abs(params.ccm - np.eye(3)).max(axis=(1, 2))
    gt_ev = None
    if ground_truth is not None:
        gt_ev = ground_truth.exposure_ev - ground_truth.exposure_ev[0]
    frames: list[FrameRow] = [
        {
            "frame": int(frame_ids[i]),
            "exposure_ev": float(params.exposure_ev[i]),
            "ccm_deviation": float(deviation[i]),
            "gt_exposure_ev": None if gt_ev is None else float(gt_ev[i]),
        }
        for i in range(len(params))
    ]
    radii = np.array(PROFILE_RADII)
    profile = vignette_gain(radii, params.response.vignette)
    samples = np.linspace(0.0, 1.0, CURVE_SAMPLES)
    curves = {}
    for c, name in enumerate(_CHANNELS):
        mean, largest = crf_deviation(params.response.crf[c])
        curves[name] = {
            "values": apply_crf(samples, params.response.crf[c]).tolist(),
            "mean_deviation": mean,
            "max_deviation": largest,
        }
    score = linearity_score(params)
    return {
        "frames": frames,
        "exposure_range_ev": [float(params.exposure_ev.min()), float(params.exposure_ev.max())],
        "radiance_gain_ev": params.radiance_gain_ev,
        "vignette": {
            "radii": list(PROFILE_RADII),
            **{name: profile[:, c].tolist() for c, name in enumerate(_CHANNELS)},
        },
        "crf": {"inputs": samples.tolist(), **curves},
        "linearity_score": score,
        "linear": score <= linear_threshold,
    }


REPORT_TEMPLATE = """\
# Photometric report

{{ frames | length }} frames, exposure from {{ "%.3f" | format(exposure_range_ev[0]) }} \
to {{ "%.3f" | format(exposure_range_ev[1]) }} EV \
(field gain {{ "%.3f" | format(radiance_gain_ev) }} EV).

## Response curves

| channel | mean deviation | max deviation |
| ------- | -------------- | ------------- |
{% for name in channels -%}
| {{ name }} | {{ "%.4f" | format(crf[name].mean_deviation) }} | {{ "%.4f" | format(crf[name].max_deviation) }} |
{% endfor %}
Linearity score {{ "%.4f" | format(linearity_score) }}: \
{{ "approximately linear" if linear else "non-linear" }}.

## Vignetting

| radius | {{ channels | join(" | ") }} |
| ------ |{% for _ in channels %} --- |{% endfor %}
{% for r in vignette.radii -%}
{% set i = loop.index0 -%}
| {{ r }} |{% for name in channels %} {{ "%.4f" | format(vignette[name][i]) }} |{% endfor %}
{% endfor %}
## Frames

| frame | exposure (EV) | ccm deviation |{% if has_gt %} ground truth (EV) |{% endif %}
| ----- | ------------- | ------------- |{% if has_gt %} ----------------- |{% endif %}
{% for row in frames -%}
| {{ row.frame }} | {{ "%.4f" | format(row.exposure_ev) }} | {{ "%.4f" | format(row.ccm_deviation) }} |\
{% if has_gt %} {{ "%.4f" | format(row.gt_exposure_ev) }} |{% endif %}
{% endfor %}"""


def render_markdown(report: dict) -> str:
    env = jinja2.Environment(undefined=jinja2.StrictUndefined, keep_trailing_newline=True)
    template = env.from_string(REPORT_TEMPLATE)
    return template.render(
        **report,
        channels=_CHANNELS,
        has_gt=any(row["gt_exposure_ev"] is not None for row in report["frames"]),
    )


def write_report(report: dict, directory: str | Path) -> list[Path]:
    """Write ``report.csv``, ``report.json`` and ``report.md`` to ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / "report.csv"
    with csv_path.open("w", newline="", encoding="utf8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(FrameRow.__annotations__))
        writer.writeheader()
        writer.writerows(report["frames"])
    json_path = directory / "report.json"
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf8")
    md_path = directory / "report.md"
    md_path.write_text(render_markdown(report), encoding="utf8")
    return [csv_path, json_path, md_path]


def write_params(params: PhotometricParams, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(params.as_dict(), indent=2) + "\n", encoding="utf8")
    return path


def read_params(path: str | Path) -> PhotometricParams:
    return PhotometricParams.from_dict(json.loads(Path(path).read_text(encoding="utf8")))
