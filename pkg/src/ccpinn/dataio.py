"""Fresnel data ingestion, dataset containers and result export.

Fresnel files are whitespace-separated ASCII; the column layout is read from
``data/fresnel_format.json`` so it can be corrected without touching code.
Dataset containers are ``.npz`` archives with a JSON header carrying a schema
tag, shapes and a SHA-256 digest per array.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import zipfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .physics.channel import Dataset
from .physics.layout import ArrayLayout
from .physics.operators import green
from .scene import Disk, Grid, Phantom, rasterize, wavenumber

DATASET_SCHEMA = "ccpinn-dataset/1"
ANGLE_TOL_DEG = 1e-6


class FresnelParseError(ValueError):
    """A data row that cannot be read; ``lineno`` is 1-based."""

    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


class IntegrityError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class BandError(KeyError):
    pass


# --------------------------------------------------------------------------
# Fresnel ingestion


def fresnel_format(path: str | Path | None = None) -> dict:
    """Load the format descriptor (packaged default when ``path`` is None)."""
    if path is None:
        text = resources.files("ccpinn").joinpath("data/fresnel_format.json").read_text()
    else:
        text = Path(path).read_text()
    fmt = json.loads(text)
    required = {"columns", "n_tx", "n_rx", "freqs_ghz", "radius_m", "rx_offset_range_deg"}
    missing = required - set(fmt)
    if missing:
        raise ValueError(f"format descriptor lacks {sorted(missing)}")
    return fmt


@dataclass
class FresnelRecords:
    """Raw measurements arranged as (frequency, transmitter, receiver).

    ``rx_angles`` holds absolute receiver angles per transmitter, sorted by
    offset from the transmitter.  Fields follow the file convention (no
    calibration applied).
    """

    freqs_ghz: np.ndarray  # (F,)
    tx_angles: np.ndarray  # (P,)
    rx_angles: np.ndarray  # (P, R)
    e_tot: np.ndarray  # (F, P, R)
    e_inc: np.ndarray  # (F, P, R)
    radius: float
    name: str = "fresnel"

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.e_tot.shape

    def rx_offsets(self) -> np.ndarray:
        return np.mod(self.rx_angles - self.tx_angles[:, None], 360.0)


def _offset_key(offset: float) -> float:
    return round(offset % 360.0, 6)


def parse_fresnel(path: str | Path, fmt: dict | None = None, name: str | None = None) -> FresnelRecords:
    """Read a Fresnel TM file and check it against the published structure."""
    fmt = fresnel_format() if fmt is None else fmt
    cols = fmt["columns"]
    need = ["tx_angle_deg", "rx_angle_deg", "freq_ghz", "etot_re", "etot_im", "einc_re", "einc_im"]
    pos = {c: cols.index(c) for c in need}
    prefixes = tuple(fmt.get("comment_prefixes", ["#"]))
    published = np.asarray(fmt["freqs_ghz"], dtype=float)

    rows = []
    path = Path(path)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith(prefixes):
                continue
            parts = s.split()
            if len(parts) < len(cols):
                raise FresnelParseError(path, lineno, f"expected {len(cols)} columns, found {len(parts)}")
            try:
                vals = [float(parts[pos[c]]) for c in need]
            except ValueError as exc:
                raise FresnelParseError(path, lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in vals):
                raise FresnelParseError(path, lineno, "non-finite value")
            tx, rx, f = vals[:3]
            if not (0 <= tx < 360 and 0 <= rx < 360):
                raise FresnelParseError(path, lineno, f"angle outside [0, 360): tx={tx}, rx={rx}")
            if not np.any(np.abs(published - f) <= 1e-9):
                raise FresnelParseError(path, lineno, f"frequency {f} GHz not in the published set")
            rows.append(vals)

    n_tx, n_rx, n_f = int(fmt["n_tx"]), int(fmt["n_rx"]), len(published)
    expected = n_tx * n_rx * n_f
    if len(rows) != expected:
        raise IntegrityError(f"{path}: {len(rows)} records, expected {n_tx}x{n_rx}x{n_f} = {expected}")

    data = np.asarray(rows)
    freqs = np.unique(data[:, 2])
    txs = np.unique(data[:, 0])
    if len(freqs) != n_f or len(txs) != n_tx:
        raise IntegrityError(f"{path}: found {len(txs)} transmitters and {len(freqs)} frequencies")
    offsets = np.array([_offset_key(r - t) for t, r in data[:, :2]])
    # order: frequency, transmitter, receiver offset
    order = np.lexsort((offsets, data[:, 0], data[:, 2]))
    data, offsets = data[order], offsets[order]
    block = data.reshape(n_f, n_tx, n_rx, 7)
    off = offsets.reshape(n_f, n_tx, n_rx)
    if not (np.all(block[:, :, :, 0] == block[:, :, :1, 0]) and np.all(off == off[:1])):
        raise IntegrityError(f"{path}: receiver sets differ between frequencies or transmitters")
    for k in range(n_tx):
        if len(np.unique(off[0, k])) != n_rx:
            raise IntegrityError(f"{path}: duplicate receiver rows for transmitter {txs[k]}")

    e_tot = block[..., 3] + 1j * block[..., 4]
    e_inc = block[..., 5] + 1j * block[..., 6]
    if fmt.get("conjugate", False):
        e_tot, e_inc = np.conj(e_tot), np.conj(e_inc)
    return FresnelRecords(
        freqs, block[0, :, 0, 0].copy(), block[0, :, :, 1].copy(), e_tot, e_inc,
        float(fmt["radius_m"]), name or path.stem,
    )


def write_fresnel(path: str | Path, records: FresnelRecords, fmt: dict | None = None, header: str = "") -> Path:
    """Write ``records`` in the descriptor's column layout (full float precision)."""
    fmt = fresnel_format() if fmt is None else fmt
    cols = fmt["columns"]
    e_tot, e_inc = records.e_tot, records.e_inc
    if fmt.get("conjugate", False):
        e_tot, e_inc = np.conj(e_tot), np.conj(e_inc)
    prefix = fmt.get("comment_prefixes", ["#"])[0]
    path = Path(path)
    with open(path, "w") as fh:
        for line in header.splitlines():
            fh.write(f"{prefix} {line}\n")
        for i, f in enumerate(records.freqs_ghz):
            for p, tx in enumerate(records.tx_angles):
                for r, rx in enumerate(records.rx_angles[p]):
                    vals = {
                        "tx_angle_deg": tx, "rx_angle_deg": rx, "freq_ghz": f,
                        "etot_re": e_tot[i, p, r].real, "etot_im": e_tot[i, p, r].imag,
                        "einc_re": e_inc[i, p, r].real, "einc_im": e_inc[i, p, r].imag,
                    }
                    fh.write(" ".join(repr(float(vals[c])) for c in cols) + "\n")
    return path


def fresnel_geometry(fmt: dict | None = None, tx_start_deg: float = 0.0, rx_step_deg: float = 1.0):
    """Nominal transmitter angles (P,) and absolute receiver angles (P, R)."""
    fmt = fresnel_format() if fmt is None else fmt
    n_tx, n_rx = int(fmt["n_tx"]), int(fmt["n_rx"])
    lo, hi = fmt["rx_offset_range_deg"]
    tx = np.mod(tx_start_deg + 360.0 / n_tx * np.arange(n_tx), 360.0)
    offs = np.linspace(lo, hi, n_rx)
    if abs(offs[1] - offs[0] - rx_step_deg) > 1e-9:
        raise ValueError("receiver step inconsistent with the descriptor")
    return tx, np.mod(tx[:, None] + offs[None, :], 360.0)


def _on_circle(radius: float, angles_deg) -> np.ndarray:
    a = np.deg2rad(np.asarray(angles_deg, dtype=float))
    return radius * np.stack([np.cos(a), np.sin(a)], axis=-1)


def calibrate(
    e_tot: np.ndarray,
    e_inc: np.ndarray,
    tx_positions: np.ndarray,
    rx_positions: np.ndarray,
    k0: float,
    ref_index: Sequence[int],
) -> tuple[np.ndarray, np.ndarray]:
    """Scattered field in simulation units from one complex factor per transmitter.

    ``e_tot`` and ``e_inc`` are (P, R) measurements at ``rx_positions``
    (P, R, 2).  The factor c_p = E_inc_sim / E_inc_meas is taken at receiver
    ``ref_index[p]``; the result is c_p (E_tot - E_inc).  Returns
    ``(scattered, factors)``.
    """
    e_tot = np.asarray(e_tot, dtype=complex)
    e_inc = np.asarray(e_inc, dtype=complex)
    p_idx = np.arange(e_inc.shape[0])
    ref = np.asarray(ref_index, dtype=int)
    meas_ref = e_inc[p_idx, ref]
    scale = np.abs(e_inc).max(axis=1)
    bad = ~(np.abs(meas_ref) > 1e-12 * np.where(scale > 0, scale, 1.0)) | (scale == 0)
    if np.any(bad):
        raise ValueError(f"measured incident field vanishes at the reference receiver of transmitters {np.flatnonzero(bad).tolist()}")
    d = np.linalg.norm(rx_positions[p_idx, ref] - tx_positions, axis=1)
    factors = green(k0, d) / meas_ref
    return factors[:, None] * (e_tot - e_inc), factors


def phase_consistency(
    e_inc: np.ndarray, tx_positions: np.ndarray, rx_positions: np.ndarray, k0: float, factors: np.ndarray
) -> dict:
    """Per-receiver spread of the ratio E_inc_sim / (c_p E_inc_meas) around 1.

    Diagnostic only: a convention mismatch (for example a conjugated time
    factor) shows up as a phase drift that grows with the receiver offset.
    """
    d = np.linalg.norm(rx_positions - tx_positions[:, None, :], axis=-1)
    ratio = green(k0, d) / (factors[:, None] * e_inc)
    return {
        "max_abs_db": float(np.max(np.abs(20 * np.log10(np.abs(ratio))))),
        "max_phase_deg": float(np.max(np.abs(np.angle(ratio, deg=True)))),
        "median_phase_deg": float(np.median(np.abs(np.angle(ratio, deg=True)))),
    }


def fresnel_reference_phantom() -> Phantom:
    """FoamTwinDiel target: foam cylinder with one plastic rod inside, one outside.

    Positions are nominal values; pass another phantom to
    ``subsample_and_split`` if the dataset documentation says otherwise.
    """
    return Phantom([
        Disk((0.0, 0.0), 0.04, 1.45),
        Disk((-0.0055, 0.0), 0.0155, 3.0),
        Disk((0.0555, 0.0), 0.0155, 3.0),
    ])


def parse_band(band) -> list[float]:
    """'345' -> [3, 4, 5] GHz; sequences pass through as GHz values."""
    if isinstance(band, str):
        if not band.isdigit():
            raise BandError(f"band label {band!r} is not a string of GHz digits")
        return [float(c) for c in band]
    return [float(b) for b in band]


def subsample_and_split(
    records: FresnelRecords,
    bands: Iterable = ("345", "678"),
    rx_step_deg: float = 5.0,
    roi_half_width: float = 0.1,
    grid_n: int = 32,
    phantom: Phantom | None = None,
) -> dict[str, Dataset]:
    """Calibrated datasets per band with receivers thinned to ``rx_step_deg``.

    Receivers whose offset from the transmitter is a multiple of the step
    (within 1e-6 degrees) are kept; with the 60..300 degree arc both ends are
    included, giving 49 receivers per transmitter.  The layout stores the
    union of receiver positions on a ``rx_step_deg`` ring with a mask.
    """
    if rx_step_deg <= 0 or abs(360.0 / rx_step_deg - round(360.0 / rx_step_deg)) > 1e-9:
        raise ValueError("rx_step_deg must divide 360")
    offs = records.rx_offsets()
    keep = np.abs((offs + ANGLE_TOL_DEG) % rx_step_deg - ANGLE_TOL_DEG) <= ANGLE_TOL_DEG
    counts = keep.sum(axis=1)
    if np.any(counts != counts[0]):
        raise IntegrityError("subsampling kept different receiver counts per transmitter")
    n_ring = int(round(360.0 / rx_step_deg))
    ring = rx_step_deg * np.arange(n_ring)
    idx = np.rint(np.mod(records.rx_angles, 360.0) / rx_step_deg).astype(int) % n_ring
    ok = np.abs(np.mod(records.rx_angles - idx * rx_step_deg + 180.0, 360.0) - 180.0) <= ANGLE_TOL_DEG
    if np.any(keep & ~ok):
        raise IntegrityError("kept receivers do not fall on the subsampling ring")

    n_tx = len(records.tx_angles)
    mask = np.zeros((n_tx, n_ring), dtype=bool)
    tx_pos = _on_circle(records.radius, records.tx_angles)
    rx_pos = _on_circle(records.radius, ring)
    for p in range(n_tx):
        mask[p, idx[p, keep[p]]] = True
    layout = ArrayLayout(tx_pos, rx_pos, mask)
    layout.check_outside(roi_half_width)
    grid = Grid(roi_half_width, grid_n)
    phantom = fresnel_reference_phantom() if phantom is None else phantom

    all_rx = _on_circle(records.radius, records.rx_angles)
    # reference receiver: the one diametrically opposite the transmitter
    ref = np.argmin(np.abs(offs - 180.0), axis=1)

    out = {}
    for band in bands:
        ghz = parse_band(band)
        label = band if isinstance(band, str) else "".join(f"{g:g}" for g in ghz)
        e_meas = []
        for g in ghz:
            hit = np.flatnonzero(np.abs(records.freqs_ghz - g) <= 1e-9)
            if not len(hit):
                raise BandError(f"{g} GHz not available (have {records.freqs_ghz.tolist()})")
            i = hit[0]
            k0 = wavenumber(g * 1e9)
            scat, _ = calibrate(records.e_tot[i], records.e_inc[i], tx_pos, all_rx, k0, ref)
            e = np.zeros((n_tx, n_ring), dtype=complex)
            for p in range(n_tx):
                e[p, idx[p, keep[p]]] = scat[p, keep[p]]
            e_meas.append(e)
        out[label] = Dataset(
            [g * 1e9 for g in ghz], layout, e_meas, grid, phantom, None, None,
            f"{records.name}_{label}", {"source": "fresnel", "rx_step_deg": rx_step_deg},
        )
    return out


# --------------------------------------------------------------------------
# Dataset container


def _digest(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


def save_dataset(path: str | Path, ds: Dataset) -> Path:
    """Write ``ds`` to an ``.npz`` container; arrays round-trip bitwise."""
    arrays = {
        "freqs": np.asarray(ds.freqs, dtype=float),
        "tx_positions": ds.layout.tx_positions,
        "rx_positions": ds.layout.rx_positions,
        "mask": ds.layout.mask,
        "e_meas": np.stack(ds.e_meas).astype(complex),
    }
    if ds.e_inc is not None:
        arrays["e_inc"] = np.stack(ds.e_inc).astype(complex)
    header = {
        "schema": DATASET_SCHEMA,
        "name": ds.name,
        "grid": {"half_width": ds.grid.half_width, "n": ds.grid.n},
        "truth": None if ds.truth is None else ds.truth.to_dict(),
        "snr_db": ds.snr_db,
        "seed": ds.seed,
        "meta": ds.meta,
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "sha256": {k: _digest(v) for k, v in arrays.items()},
    }
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
    return path


def load_dataset(path: str | Path) -> Dataset:
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(bytes(z["header"]).decode())
            if header.get("schema") != DATASET_SCHEMA:
                raise SchemaError(f"{path}: schema {header.get('schema')!r}, expected {DATASET_SCHEMA!r}")
            arrays = {k: z[k] for k in header["shapes"]}
    except (SchemaError, FileNotFoundError):
        raise
    except (OSError, KeyError, ValueError, EOFError, zipfile.BadZipFile) as exc:
        raise IntegrityError(f"cannot read dataset {path}: {exc}") from exc
    for k, a in arrays.items():
        if list(a.shape) != header["shapes"][k] or _digest(a) != header["sha256"][k]:
            raise IntegrityError(f"{path}: array {k!r} fails its shape or checksum")
    grid = Grid(header["grid"]["half_width"], header["grid"]["n"])
    layout = ArrayLayout(arrays["tx_positions"], arrays["rx_positions"], arrays["mask"])
    truth = None if header["truth"] is None else Phantom.from_dict(header["truth"])
    e_inc = list(arrays["e_inc"]) if "e_inc" in arrays else None
    return Dataset(
        [float(f) for f in arrays["freqs"]], layout, list(arrays["e_meas"]), grid, truth,
        header["snr_db"], header["seed"], header["name"], header["meta"], e_inc,
    )


# --------------------------------------------------------------------------
# Result export


def _check_writable(out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from exc
    return out_dir


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with ``repr`` floats so values parse back exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IntegrityError(f"{path} is empty")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))
    return rows[0], data


def phantom_contours(phantom: Phantom, n_points: int = 256) -> list[np.ndarray]:
    """Boundary polylines (K, 2) of every shape; annuli give two circles."""
    t = np.linspace(0.0, 2.0 * math.pi, n_points)
    circle = np.stack([np.cos(t), np.sin(t)], axis=1)
    out = []
    for s in phantom.shapes:
        c = np.asarray(s.center, dtype=float)
        radii = [s.radius] if isinstance(s, Disk) else [s.outer_radius, s.inner_radius]
        out.extend(c + r * circle for r in radii)
    return out


def default_value_range(truth_maps, quantity: str) -> tuple[float, float]:
    if quantity == "eps":
        top = 2.0 if truth_maps is None else float(truth_maps.eps_r.max())
        return 1.0, max(top + 0.5, 1.5)
    top = 0.1 if truth_maps is None else float(truth_maps.sigma.max())
    return 0.0, max(top * 1.2, 1e-3)


def render_map(
    path: Path, values: np.ndarray, grid: Grid, value_range, title: str = "",
    phantom: Phantom | None = None, cmap: str = "viridis",
) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    R = grid.half_width
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    # values are indexed [ix, iy]; imshow wants rows = y
    im = ax.imshow(values.T, origin="lower", extent=(-R, R, -R, R), cmap=cmap,
                   vmin=value_range[0], vmax=value_range[1])
    if phantom is not None:
        for c in phantom_contours(phantom):
            ax.plot(c[:, 0], c[:, 1], "w--", lw=1.0)
    ax.set_xlim(-R, R)
    ax.set_ylim(-R, R)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def _grid_of(record) -> Grid:
    return Grid(record.roi_half_width, record.final_eps.shape[0])


def write_run(
    record, out_dir: str | Path, truth: Phantom | None = None, render: Mapping | None = None,
    extra_config: Mapping | None = None, images: bool = True,
) -> Path:
    """Config snapshot, loss/PSNR CSVs, checkpoint, maps and PNGs of one run."""
    from .neuralfield import save_checkpoint

    out = _check_writable(Path(out_dir))
    grid = _grid_of(record)
    truth_maps = rasterize(truth, grid) if truth is not None else None
    render = dict(render or {})
    render.setdefault("eps_range", list(default_value_range(truth_maps, "eps")))
    render.setdefault("sigma_range", list(default_value_range(truth_maps, "sigma")))
    cfg = {
        "train": record.config, "seed": record.seed, "freqs": record.freqs,
        "dataset": record.dataset_name, "roi_half_width": record.roi_half_width,
        "grid_n": grid.n, "render": render, "failed": record.failed, "failure": record.failure,
        "elapsed_s": record.elapsed, **(extra_config or {}),
    }
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    if record.loss_trace is not None:
        write_csv(out / "loss.csv", record.loss_columns, record.loss_trace.tolist())
    write_csv(out / "psnr.csv", ["epoch", "psnr_eps", "psnr_sigma"],
              zip(record.psnr_epochs, map(float, record.psnr_eps), map(float, record.psnr_sigma)))
    if record.network is not None and record.config.get("save_checkpoint", True):
        save_checkpoint(out / "checkpoint.npz", record.network, roi_half_width=record.roi_half_width, seed=record.seed)
        record.checkpoint_path = str(out / "checkpoint.npz")
    np.savez(out / "maps.npz", eps_r=record.final_eps, sigma=record.final_sigma)
    if images:
        render_map(out / "eps_r.png", record.final_eps, grid, render["eps_range"],
                   f"eps_r, seed {record.seed}", truth)
        if truth_maps is not None and truth_maps.sigma.max() > 0:
            render_map(out / "sigma.png", record.final_sigma, grid, render["sigma_range"],
                       f"sigma (S/m), seed {record.seed}", truth)
    return out


def write_ensemble(
    stats: Mapping, records: Sequence, out_dir: str | Path, truth: Phantom | None = None,
    render: Mapping | None = None, extra_config: Mapping | None = None,
) -> Path:
    """Per-run folders plus mean curves, boxplot statistics and median-run images."""
    out = _check_writable(Path(out_dir))
    for r in records:
        write_run(r, out / f"run_seed{r.seed:03d}", truth, render, extra_config, images=False)
    ok = [r for r in records if not r.failed]
    grid = _grid_of(ok[0])
    truth_maps = rasterize(truth, grid) if truth is not None else None
    render = dict(render or {})
    render.setdefault("eps_range", list(default_value_range(truth_maps, "eps")))
    render.setdefault("sigma_range", list(default_value_range(truth_maps, "sigma")))
    summary = {"config": {**ok[0].config, "seed": None}, "seeds": [r.seed for r in records],
               "render": render, **(extra_config or {}), "metrics": {}}
    for metric, st in stats.items():
        write_csv(out / f"mean_curve_{metric}.csv", ["epoch", "mean", "std"],
                  zip(st.epochs.tolist(), st.mean.tolist(), st.std.tolist()))
        write_csv(out / f"boxplot_{metric}.csv", ["min", "q1", "median", "q3", "max"], [st.five_numbers])
        write_csv(out / f"final_psnr_{metric}.csv", ["seed", "psnr", "is_median"],
                  [(s, float(v), int(s == st.median_seed)) for s, v in zip(st.seeds, st.final_values)])
        med = next(r for r in ok if r.seed == st.median_seed)
        if metric == "eps":
            render_map(out / "median_eps_r.png", med.final_eps, grid, render["eps_range"],
                       f"eps_r, median run (seed {med.seed})", truth)
        else:
            render_map(out / "median_sigma.png", med.final_sigma, grid, render["sigma_range"],
                       f"sigma, median run (seed {med.seed})", truth)
        summary["metrics"][metric] = {"median_seed": st.median_seed, "five_numbers": list(st.five_numbers),
                                      "failed_seeds": st.failed_seeds}
    (out / "ensemble.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return out


def export_results(result, out_dir: str | Path, truth: Phantom | None = None, **kw) -> Path:
    """``result`` is a RunRecord or the ``(stats, records)`` pair from ``multi_run``."""
    if isinstance(result, tuple):
        stats, records = result
        return write_ensemble(stats, records, out_dir, truth, **kw)
    return write_run(result, out_dir, truth, **kw)


# --------------------------------------------------------------------------
# Reports from stored CSVs

_REPORT_IGNORE = {"seed", "beta_mode", "save_checkpoint"}


def _load_series(d: Path) -> dict:
    """Curves and final values of a run or ensemble directory, eps metric."""
    if (d / "ensemble.json").exists():
        meta = json.loads((d / "ensemble.json").read_text())
        _, mc = read_csv(d / "mean_curve_eps.csv")
        _, fin = read_csv(d / "final_psnr_eps.csv")
        return {"config": meta["config"], "epoch": mc[:, 0], "mean": mc[:, 1], "std": mc[:, 2],
                "finals": fin[:, 1], "ensemble": True}
    if (d / "psnr.csv").exists():
        cfg = json.loads((d / "config.json").read_text())
        _, ps = read_csv(d / "psnr.csv")
        return {"config": cfg["train"], "epoch": ps[:, 0], "mean": ps[:, 1], "std": None,
                "finals": ps[-1:, 1], "ensemble": False}
    raise IntegrityError(f"{d} is neither a run nor an ensemble directory")


def build_report(dirs: Sequence[str | Path], out_dir: str | Path) -> Path:
    """Overlay PSNR curves (with std bands for ensembles) and a paired boxplot.

    Directories must share their training configuration apart from the
    seed and the beta mode.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not dirs:
        raise ValueError("no directories given")
    series = [(Path(d), _load_series(Path(d))) for d in dirs]
    ref = {k: v for k, v in series[0][1]["config"].items() if k not in _REPORT_IGNORE}
    for d, s in series[1:]:
        cfg = {k: v for k, v in s["config"].items() if k not in _REPORT_IGNORE}
        if cfg != ref:
            diff = sorted(k for k in set(cfg) | set(ref) if cfg.get(k) != ref.get(k))
            raise ValueError(f"{d} was produced with a different configuration (differs in {diff})")
    out = _check_writable(Path(out_dir))

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for d, s in series:
        label = f"{d.name} ({s['config'].get('beta_mode', '?')})"
        line, = ax.plot(s["epoch"], s["mean"], label=label)
        if s["std"] is not None:
            ax.fill_between(s["epoch"], s["mean"] - s["std"], s["mean"] + s["std"],
                            color=line.get_color(), alpha=0.25)
    ax.set_xlabel("epoch")
    ax.set_ylabel("PSNR of eps_r (dB)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "psnr_curves.png", dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.boxplot([s["finals"] for _, s in series], whis=(0, 100))
    ax.set_xticks(range(1, len(series) + 1), [d.name for d, _ in series], rotation=20, fontsize=7)
    ax.set_ylabel("final PSNR of eps_r (dB)")
    fig.tight_layout()
    fig.savefig(out / "final_psnr_boxplot.png", dpi=100)
    plt.close(fig)

    write_csv(out / "report_summary.csv", ["dir", "beta_mode", "n_runs", "median_final_psnr"],
              [(str(d), s["config"].get("beta_mode", ""), len(s["finals"]), float(np.median(s["finals"])))
               for d, s in series])
    return out
