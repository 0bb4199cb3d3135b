"""Evaluation metrics: volumetric overlap, surface and voxel-set distances
in physical millimetres, and the hard centerline-overlap score.

Degenerate inputs (empty masks or empty skeletons) never produce invented
sentinel distances: operations raise ``DegenerateMaskError`` or return
flagged results, and report aggregation excludes flagged cases while
reporting their count.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .grid import BinaryMask, ShapeError, surface_voxels
from .skeleton import hard_skeletonize


class DegenerateMaskError(ValueError):
    """A distance metric was asked to run on an empty mask."""

    def __init__(self, message: str, flag: str):
        super().__init__(message)
        self.flag = flag


def _check_pair(p: BinaryMask, g: BinaryMask) -> None:
    if p.shape != g.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {g.shape}")
    if p.spacing != g.spacing:
        raise ShapeError(f"mask spacings differ: {p.spacing} vs {g.spacing}")


def dsc(p: BinaryMask, g: BinaryMask) -> float:
    """Overlap score 2|P&G| / (|P|+|G|); defined as 1.0 when both empty."""
    _check_pair(p, g)
    total = p.count() + g.count()
    if total == 0:
        return 1.0
    inter = int((p.data & g.data).sum())
    return 2.0 * inter / total


def _physical_points(m: BinaryMask) -> np.ndarray:
    return np.argwhere(m.data).astype(np.float64) * np.asarray(m.spacing)


def assd(p: BinaryMask, g: BinaryMask) -> float:
    """Average symmetric surface distance in mm.

    Surfaces are the 6-neighbourhood border voxels; distances are between
    voxel centres scaled by spacing. Raises DegenerateMaskError on an
    empty mask.
    """
    _check_pair(p, g)
    if p.count() == 0:
        raise DegenerateMaskError("prediction mask is empty", "empty_prediction")
    if g.count() == 0:
        raise DegenerateMaskError("reference mask is empty", "empty_reference")
    sp = _physical_points(surface_voxels(p))
    sg = _physical_points(surface_voxels(g))
    d_pg = cKDTree(sg).query(sp)[0]
    d_gp = cKDTree(sp).query(sg)[0]
    return float((d_pg.sum() + d_gp.sum()) / (len(sp) + len(sg)))


def ahd(p: BinaryMask, g: BinaryMask) -> float:
    """Average Hausdorff distance in mm over the full voxel sets.

    Maximum of the two directed mean nearest-neighbour distances, computed
    over all foreground voxels (not only surfaces).
    """
    _check_pair(p, g)
    if p.count() == 0:
        raise DegenerateMaskError("prediction mask is empty", "empty_prediction")
    if g.count() == 0:
        raise DegenerateMaskError("reference mask is empty", "empty_reference")
    vp = _physical_points(p)
    vg = _physical_points(g)
    d_pg = cKDTree(vg).query(vp)[0].mean()
    d_gp = cKDTree(vp).query(vg)[0].mean()
    return float(max(d_pg, d_gp))


class ClDiceResult(NamedTuple):
    tprec: float
    tsens: float
    cldice: float
    flags: tuple[str, ...] = ()


def cldice_metric(p: BinaryMask, g: BinaryMask) -> ClDiceResult:
    """Hard centerline-overlap score.

    Skeletons come from topology-preserving thinning; tprec is the
    fraction of the prediction skeleton inside the reference volume, tsens
    the fraction of the reference skeleton inside the prediction volume,
    and the score their harmonic mean. Empty skeletons are flagged, score 0.
    """
    _check_pair(p, g)
    skel_p = hard_skeletonize(p)
    skel_g = hard_skeletonize(g)
    flags = []
    if skel_p.count() == 0:
        flags.append("empty_prediction_skeleton")
        tprec = 0.0
    else:
        tprec = float((skel_p.data & g.data).sum() / skel_p.count())
    if skel_g.count() == 0:
        flags.append("empty_reference_skeleton")
        tsens = 0.0
    else:
        tsens = float((skel_g.data & p.data).sum() / skel_g.count())
    if flags or tprec + tsens == 0.0:
        cl = 0.0
    else:
        cl = 2.0 * tprec * tsens / (tprec + tsens)
    return ClDiceResult(tprec, tsens, cl, tuple(flags))


@dataclass(frozen=True)
class MetricsReport:
    """Per-case metric record; NaN values always carry a matching flag."""

    case_id: str
    dsc: float
    assd_mm: float
    ahd_mm: float
    cldice: float
    tprec: float
    tsens: float
    flags: tuple[str, ...] = ()


def compute_case_metrics(case_id: str, pred: BinaryMask, ref: BinaryMask) -> MetricsReport:
    """All four metrics for one case, with degenerate cases flagged."""
    flags: list[str] = []
    dsc_val = dsc(pred, ref)
    if pred.count() == 0 and ref.count() == 0:
        flags.append("both_empty")
    try:
        assd_val = assd(pred, ref)
        ahd_val = ahd(pred, ref)
    except DegenerateMaskError as err:
        flags.append(err.flag)
        assd_val = float("nan")
        ahd_val = float("nan")
    cl = cldice_metric(pred, ref)
    flags.extend(cl.flags)
    return MetricsReport(
        case_id=case_id,
        dsc=dsc_val,
        assd_mm=assd_val,
        ahd_mm=ahd_val,
        cldice=cl.cldice if not cl.flags else float("nan"),
        tprec=cl.tprec,
        tsens=cl.tsens,
        flags=tuple(dict.fromkeys(flags)),
    )


_AGG_METRICS = ("dsc", "assd_mm", "ahd_mm", "cldice")


def aggregate_reports(reports) -> dict:
    """Mean and std per metric, excluding flagged (NaN) cases.

    Returns ``{metric: {"mean", "std", "n", "n_flagged"}}`` plus the total
    case count under "cases".
    """
    out: dict = {"cases": len(list(reports))}
    reports = list(reports)
    for metric in _AGG_METRICS:
        values = np.array([getattr(r, metric) for r in reports], dtype=np.float64)
        valid = values[~np.isnan(values)]
        out[metric] = {
            "mean": float(valid.mean()) if valid.size else float("nan"),
            "std": float(valid.std()) if valid.size else float("nan"),
            "n": int(valid.size),
            "n_flagged": int(np.isnan(values).sum()),
        }
    return out


def write_reports(path, reports) -> None:
    """One JSON record per line, one line per case."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in reports:
            rec = asdict(r)
            rec["flags"] = list(r.flags)
            fh.write(json.dumps(rec) + "\n")


def write_summary(path, aggregate: dict) -> None:
    """Plain-text summary table: metric, mean, std, n, n_flagged."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# cases: {aggregate['cases']}", "metric\tmean\tstd\tn\tn_flagged"]
    for metric in _AGG_METRICS:
        a = aggregate[metric]
        lines.append(
            f"{metric}\t{a['mean']:.6f}\t{a['std']:.6f}\t{a['n']}\t{a['n_flagged']}"
        )
    path.write_text("\n".join(lines) + "\n")
