"""Plot data and figures from a finished archive.

Every section is written as CSV first and rendered to PNG next to it, so the
numbers behind a figure can be re-plotted elsewhere. Sections whose inputs are
missing from the archive are skipped with a warning.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pipeline.archive import Manifest, read_array  # noqa: E402
from .post import log_magnitude  # noqa: E402
from .shape_model import SWEEP_LAMBDAS, cpv_curve, load_model, pc_sweep, vertex_distance_to_mean  # noqa: E402
from .sphgrid import median_plane_indices, read_grid_csv  # noqa: E402

SWEEP_COMPONENTS = (1, 2, 3)

plt.rcParams.update({"figure.dpi": 110, "font.size": 9, "axes.grid": True, "grid.alpha": 0.3})


def _write_rows(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if not isinstance(x, str) else x for x in row])
    return path


def cpv_section(root: Path, out: Path) -> list[Path]:
    models = {}
    for name, d in (("shape", root / "model"), ("prtf", root / "stats" / "prtf_model")):
        if (d / "model.json").exists():
            models[name] = load_model(d)
    if not models:
        warnings.warn("no fitted models in archive; CPV section skipped", stacklevel=3)
        return []
    n = max(m.n_components for m in models.values())
    curves = {}
    for name, m in models.items():
        try:
            curves[name] = cpv_curve(m)
        except ValueError as exc:
            warnings.warn(f"CPV for {name} model skipped: {exc}", stacklevel=3)
    if not curves:
        return []
    names = list(curves)
    rows = []
    for p in range(1, n + 1):
        rows.append([p] + [curves[k][p - 1] if p <= len(curves[k]) else "" for k in names])
    csv_path = _write_rows(out / "cpv.csv", ["p"] + [f"cpv_{k}" for k in names], rows)

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for k in names:
        ax.plot(np.arange(1, len(curves[k]) + 1), curves[k], marker="o", ms=3, label=k)
    ax.set_xlabel("number of principal components p")
    ax.set_ylabel("CPV (%)")
    ax.set_ylim(0, 101)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "cpv.png")
    plt.close(fig)
    return [csv_path, out / "cpv.png"]


def sagittal_map(eq_values: np.ndarray, grid, tolerance_deg: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Log-magnitude (dB) of a PRTF set on the median plane, frequency x polar angle."""
    idx, polar = median_plane_indices(grid, tolerance_deg)
    return log_magnitude(eq_values[:, idx]), polar


def sagittal_section(root: Path, out: Path, manifest: Manifest) -> list[Path]:
    complete = [s for s, v in sorted(manifest.data.get("subjects", {}).items()) if v.get("status") == "complete"]
    if not complete:
        warnings.warn("no complete subjects in archive; sagittal maps skipped", stacklevel=3)
        return []
    if not (root / "grid.csv").exists():
        warnings.warn("grid.csv missing; sagittal maps skipped", stacklevel=3)
        return []
    grid = read_grid_csv(root / "grid.csv")
    freqs = np.concatenate([[0.0], manifest.data["frequencies_hz"]])
    n_d = grid.n_directions
    written = []
    for sid in complete:
        sdir = root / "subjects" / sid
        try:
            eq = read_array(sdir / "prtf_eq_re.f8", (len(freqs), n_d)) + 1j * read_array(sdir / "prtf_eq_im.f8", (len(freqs), n_d))
        except (OSError, ValueError) as exc:
            warnings.warn(f"{sid}: equalized PRTF unreadable ({exc}); skipped", stacklevel=3)
            continue
        db, polar = sagittal_map(eq, grid)
        if db.shape[1] == 0:
            warnings.warn("grid has no directions on the median plane; sagittal maps skipped", stacklevel=3)
            return written
        header = ["frequency_hz"] + [f"polar_{p:.3f}" for p in polar]
        csv_path = _write_rows(out / "sagittal" / f"{sid}.csv", header, np.column_stack([freqs, db]))

        fig, ax = plt.subplots(figsize=(5, 3.2))
        mesh = ax.pcolormesh(polar, freqs / 1e3, db, shading="nearest", cmap="viridis")
        ax.set_xlabel("polar angle (deg)")
        ax.set_ylabel("frequency (kHz)")
        ax.set_title(sid)
        fig.colorbar(mesh, ax=ax, label="magnitude (dB)")
        fig.tight_layout()
        fig.savefig(csv_path.with_suffix(".png"))
        plt.close(fig)
        written += [csv_path, csv_path.with_suffix(".png")]
    return written


def sweep_section(root: Path, out: Path) -> list[Path]:
    if not (root / "model" / "model.json").exists():
        warnings.warn("shape model missing; PC sweep section skipped", stacklevel=3)
        return []
    model = load_model(root / "model")
    comps = [j for j in SWEEP_COMPONENTS if j <= model.n_components]
    cols, fields = [], []
    for j in comps:
        for lam in SWEEP_LAMBDAS:
            cols.append(f"pc{j}_{lam:+g}sd")
            fields.append(vertex_distance_to_mean(model, pc_sweep(model, j, lam)))
    if not fields:
        warnings.warn("shape model has no components; PC sweep section skipped", stacklevel=3)
        return []
    table = np.column_stack(fields)
    csv_path = _write_rows(out / "pc_sweep.csv", ["vertex"] + cols, np.column_stack([np.arange(len(table)), table]))

    mean = model.mean.reshape(3, -1)
    fig, axes = plt.subplots(len(comps), len(SWEEP_LAMBDAS), figsize=(1.6 * len(SWEEP_LAMBDAS), 1.6 * len(comps)), squeeze=False)
    vmax = float(table.max()) or 1.0
    for a, j in enumerate(comps):
        for b, lam in enumerate(SWEEP_LAMBDAS):
            ax = axes[a, b]
            ax.scatter(mean[0], mean[1], c=table[:, a * len(SWEEP_LAMBDAS) + b], s=2, cmap="magma", vmin=0, vmax=vmax)
            ax.set_aspect("equal")
            ax.set_xticks([])
            ax.set_yticks([])
            ax.grid(False)
            if a == 0:
                ax.set_title(f"{lam:+g} sd")
            if b == 0:
                ax.set_ylabel(f"PC {j}")
    fig.tight_layout()
    fig.savefig(out / "pc_sweep.png")
    plt.close(fig)
    return [csv_path, out / "pc_sweep.png"]


def emit_plots(archive: str | Path, out: str | Path | None = None) -> list[Path]:
    """Write CPV curves, median-plane maps and PC-sweep distance fields.

    Output goes to ``out`` (default ``<archive>/plots``); returns the files written.
    """
    root = Path(archive)
    manifest = Manifest.load(root)
    out = Path(out) if out is not None else root / "plots"
    out.mkdir(parents=True, exist_ok=True)
    return cpv_section(root, out) + sagittal_section(root, out, manifest) + sweep_section(root, out)
