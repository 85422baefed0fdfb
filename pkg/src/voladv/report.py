"""Write harness reports as JSON plus table-shaped CSVs.

CSV conventions: DSC-derived quantities (ASR-D, clean DSC, band DSC) are
percentages; HD95-derived quantities stay in voxels. Both are printed with
two decimals. JSON keeps full precision.
"""
import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import VoladvError

ASR_HEADER = ["dataset", "attack", "model", "asr_d", "asr_h_signed", "asr_h_abs", "clean_dsc", "clean_hd95"]
BANDS_HEADER = ["model", "attack", "band", "dsc"]


class ReportError(VoladvError, OSError):
    kind = "report-io"


def fmt_pct(v):
    return _fmt(v, 100.0)


def fmt_num(v):
    return _fmt(v, 1.0)


def _fmt(v, scale):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    s = f"{v * scale:.2f}"
    return "0.00" if s == "-0.00" else s


def _mean(values):
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.mean(vals)) if vals else None


def dumps_report(report):
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _csv_text(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def asr_rows(report, averages=True):
    """Rows of the white-box table, optionally with a per-attack Average row."""
    rows = [ASR_HEADER]
    by_attack = {}
    for r in report.get("whitebox", []):
        rows.append([r["dataset"], r["attack"], r["model"], fmt_pct(r["asr_d"]),
                     fmt_num(r["asr_h_signed"]), fmt_num(r["asr_h_abs"]),
                     fmt_pct(r["clean_dsc"]), fmt_num(r["clean_hd95"])])
        by_attack.setdefault((r["dataset"], r["attack"]), []).append(r)
    if averages:
        for (dataset, attack), group in by_attack.items():
            if len(group) < 2:
                continue
            keys = ("asr_d", "asr_h_signed", "asr_h_abs", "clean_dsc", "clean_hd95")
            m = {k: _mean([g[k] for g in group]) for k in keys}
            rows.append([dataset, attack, "Average", fmt_pct(m["asr_d"]), fmt_num(m["asr_h_signed"]),
                         fmt_num(m["asr_h_abs"]), fmt_pct(m["clean_dsc"]), fmt_num(m["clean_hd95"])])
    return rows


def transfer_rows(report, attack, metric="asr_d"):
    """Surrogates down, targets across, an Average column and a Clean row.

    The Average column is the mean over the other targets, leaving out the
    surrogate's own white-box cell.
    """
    matrix = report["transfer"][attack]
    fmt = fmt_pct if metric == "asr_d" else fmt_num
    targets = matrix["targets"]
    rows = [["surrogate"] + targets + ["Average"]]
    for s in matrix["surrogates"]:
        cells = matrix["cells"][s]
        vals = [cells[t][metric] if t in cells else None for t in targets]
        off = [v for t, v in zip(targets, vals) if t != s]
        rows.append([s] + [fmt(v) for v in vals] + [fmt(_mean(off))])
    clean = report.get("clean", {})
    key = "clean_dsc" if metric == "asr_d" else "clean_hd95"
    clean_vals = [clean.get(t, {}).get(key) for t in targets]
    rows.append(["Clean"] + [fmt(v) for v in clean_vals] + [fmt(_mean(clean_vals))])
    return rows


def band_rows(report):
    rows = [BANDS_HEADER]
    for curve in report.get("bands", []):
        m, a = curve["model"], curve["attack"]
        rows.append([m, a, "clean", fmt_pct(curve["clean"])])
        for b in curve["bands"]:
            rows.append([m, a, b["label"], fmt_pct(b["dsc"])])
        rows.append([m, a, "unrestricted", fmt_pct(curve["unrestricted"])])
    return rows


def _slug(label):
    return "".join(ch if ch.isalnum() else "_" for ch in label.lower())


def render(report):
    """Map file name -> text for every artifact the report supports."""
    files = {"report.json": dumps_report(report)}
    if "whitebox" in report:
        files["asr_table.csv"] = _csv_text(asr_rows(report))
    for attack in report.get("transfer", {}):
        files[f"transfer_{_slug(attack)}.csv"] = _csv_text(transfer_rows(report, attack))
    if "bands" in report:
        files["bands.csv"] = _csv_text(band_rows(report))
    return files


def emit_report(report, out_dir):
    """Write all artifacts into ``out_dir`` and return their paths."""
    out = Path(out_dir)
    paths = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in render(report).items():
            p = out / name
            p.write_text(text, encoding="utf-8")
            paths.append(p)
    except OSError as exc:
        raise ReportError(f"cannot write report into {out}: {exc}") from exc
    return paths


def merge_reports(*reports):
    """Combine white-box, transfer and band sections under one header."""
    merged = dict(reports[0])
    merged["kind"] = "+".join(r["kind"] for r in reports)
    merged["failures"] = []
    for r in reports:
        for key in ("whitebox", "transfer", "clean", "bands"):
            if key in r:
                merged[key] = r[key]
        merged["failures"] += r.get("failures", [])
    return merged
