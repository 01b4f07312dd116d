"""File outputs: design rasters, per-cycle CSV snapshots, iteration log and run summary."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .design import BackgroundGrid
from .errors import ConfigurationError

MESH_HEADER = ("cycle", "element", "p", "d", "background_m")
INDICATOR_HEADER = ("cycle", "element", "gamma_a", "gamma_d", "qr_error", "theta")
LOG_HEADER = ("cycle", "iteration", "J", "volume", "threshold", "stopped")


def write_pgm(path, raster: np.ndarray) -> None:
    """8-bit binary PGM with 0 = solid; raster row 0 is y = 0 and lands at the image bottom."""
    values = np.clip(np.asarray(raster, dtype=float), 0.0, 1.0)
    img = np.rint(255.0 * (1.0 - values)).astype(np.uint8)[::-1]
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Density raster (row 0 at y = 0) from a PGM written by :func:`write_pgm` (P5 or P2)."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ConfigurationError(f"truncated PGM header in {path}")
        tokens.append(data[start:pos])
    magic, cols, rows, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        if maxval > 255:
            raise ConfigurationError("16-bit PGM is not supported")
        raw = np.frombuffer(data[pos + 1 : pos + 1 + rows * cols], dtype=np.uint8)
    elif magic == b"P2":
        raw = np.array(data[pos:].split(), dtype=float)
    else:
        raise ConfigurationError(f"{path} is not a PGM file")
    if raw.size != rows * cols:
        raise ConfigurationError(f"PGM {path} has {raw.size} pixels, header says {rows * cols}")
    img = raw.reshape(rows, cols).astype(float) / maxval
    return (1.0 - img)[::-1].copy()


def write_raster_txt(path, raster: np.ndarray) -> None:
    """Row-major ASCII densities, one line per raster row starting at y = 0."""
    with open(path, "w") as fh:
        for row in np.asarray(raster, dtype=float):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v)) if isinstance(v, (np.integer, bool, np.bool_)) else str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def summary_dict(report, baseline=None) -> dict:
    """Deterministic run summary; wall-clock times are kept out (see :func:`export`)."""
    out = {
        "config": report.config.to_dict(),
        "J": report.J,
        "volume": report.final.volume,
        "free_dofs": report.final.free_dofs,
        "n_design": report.final.n_design,
        "J_ref": report.J_ref,
        "J_over_J_ref": report.accuracy,
        "reference_resolution": list(report.reference_resolution) if report.reference_resolution else None,
        "cycles": [
            {
                "cycle": c.cycle,
                "free_dofs": c.free_dofs,
                "n_design": c.n_design,
                "iterations": c.iterations,
                "J": c.J,
                "volume": c.volume,
                "q": c.q,
                "threshold": c.threshold,
                "background_m": c.background_m,
            }
            for c in report.cycles
        ],
    }
    if baseline is not None:
        out["J_baseline"] = baseline.J
        out["J_over_J_baseline"] = report.J / baseline.J if baseline.J else None
    return out


def timing_dict(report, baseline=None) -> dict:
    out = {"wall_clock": report.wall_clock, "cycles": [c.wall_clock for c in report.cycles]}
    if baseline is not None:
        out["baseline_wall_clock"] = baseline.wall_clock
        out["speed_up"] = baseline.wall_clock / report.wall_clock if report.wall_clock else None
    return out


def export(report, out_dir, baseline=None, timing: bool = False) -> Path:
    """Write all run outputs to ``out_dir``.

    Everything written by default is a deterministic function of config and seed; wall-clock
    timings go to ``timing.json`` only when ``timing`` is set.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for k, grid in report.designs.items():
            write_pgm(out / f"design_cycle{k}.pgm", grid.as_array())
            write_raster_txt(out / f"design_cycle{k}.txt", grid.as_array())
        for k, rows in report.mesh_snapshots.items():
            write_csv(out / f"mesh_cycle{k}.csv", MESH_HEADER, rows)
        for k, ind in report.indicators.items():
            write_csv(out / f"indicators_cycle{k}.csv", INDICATOR_HEADER, ind.rows())
        write_csv(out / "log.csv", LOG_HEADER, report.iteration_log)
        summary = summary_dict(report, baseline)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if timing:
            (out / "timing.json").write_text(json.dumps(timing_dict(report, baseline), indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc}") from exc
    return out


def grid_from_raster(raster: np.ndarray, nx: int, ny: int, element_size: float) -> BackgroundGrid:
    rows, cols = raster.shape
    if cols % nx or rows % ny or cols // nx != rows // ny:
        raise ConfigurationError(f"raster {cols}x{rows} does not tile a {nx}x{ny} mesh")
    return BackgroundGrid(nx, ny, cols // nx, element_size, np.asarray(raster, dtype=float).ravel())
