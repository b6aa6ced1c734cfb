import numpy as np
import pytest

from ccpinn.dataio import FresnelRecords, fresnel_format, fresnel_geometry
from ccpinn.physics import (
    build_channels,
    circular_layout,
    data_operator,
    domain_operator_dense,
    forward_solve,
    generate_synthetic,
    incident_fields,
    scattered_at_receivers,
)
from ccpinn.physics.channel import Dataset
from ccpinn.physics.operators import green
from ccpinn.scene import Disk, Grid, Phantom, contrast_map, rasterize, wavenumber


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_layout():
    # 4 transmitters, 24 receivers on a 1 m ring, 45 deg exclusion
    return circular_layout(1.0, 4, 24, 45.0, roi_half_width=0.2)


@pytest.fixture(scope="session")
def small_dataset(small_layout):
    """Lossy two-disk scene on a 16x16 grid, data simulated on a 32x32 grid."""
    ph = Phantom([Disk((-0.06, 0.0), 0.06, 2.0, 0.01), Disk((0.08, 0.05), 0.04, 1.6, 0.0)])
    return generate_synthetic(ph, [0.6e9, 0.9e9], small_layout, Grid(0.2, 16), refine=2, snr_db=30, seed=3)


@pytest.fixture(scope="session")
def small_channels(small_dataset):
    return build_channels(small_dataset, pad_factor=2)


@pytest.fixture(scope="session")
def exact_instance(small_layout):
    """Inverse-crime instance: data and state generated on the inversion grid itself."""
    grid = Grid(0.2, 12)
    ph = Phantom([Disk((0.0, 0.03), 0.07, 1.8, 0.005)])
    f = 0.8e9
    k0 = wavenumber(f)
    chi = contrast_map(rasterize(ph, grid), f)
    e_inc = incident_fields(small_layout, grid, k0)
    e_tot = forward_solve(chi, e_inc, domain_operator_dense(grid, k0))
    g_s = data_operator(small_layout, grid, k0)
    e_meas = np.where(small_layout.mask, scattered_at_receivers(g_s, chi, e_tot), 0)
    ds = Dataset([f], small_layout, [e_meas], grid, ph, None, None, "exact")
    J = (chi.ravel()[None, :] * e_tot).reshape(small_layout.n_tx, grid.n, grid.n)
    return ds, chi, J


def make_fresnel_records(seed=0, fmt=None):
    """Full-size Fresnel-format records whose measured fields carry a known
    complex factor per (frequency, transmitter) relative to simulation units.

    Returns the records, the true scattered fields (F, P, R) and the factors.
    """
    fmt = fresnel_format() if fmt is None else fmt
    rng = np.random.default_rng(seed)
    tx, rx = fresnel_geometry(fmt)
    radius = fmt["radius_m"]
    txp = radius * np.stack([np.cos(np.deg2rad(tx)), np.sin(np.deg2rad(tx))], axis=1)
    rxp = radius * np.stack([np.cos(np.deg2rad(rx)), np.sin(np.deg2rad(rx))], axis=-1)
    freqs = np.asarray(fmt["freqs_ghz"], dtype=float)
    n_f, (n_tx, n_rx) = len(freqs), rx.shape
    scat = 1e-3 * (rng.normal(size=(n_f, n_tx, n_rx)) + 1j * rng.normal(size=(n_f, n_tx, n_rx)))
    fac = rng.uniform(0.5, 2.0, (n_f, n_tx)) * np.exp(1j * rng.uniform(-np.pi, np.pi, (n_f, n_tx)))
    d = np.linalg.norm(rxp - txp[:, None, :], axis=-1)
    inc = np.stack([green(wavenumber(f * 1e9), d) for f in freqs])
    recs = FresnelRecords(freqs, tx, rx, (inc + scat) / fac[..., None], inc / fac[..., None], radius,
                          "FoamTwinDielTM")
    return recs, scat, fac


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(label: str, ok: bool | None, detail: str = "") -> bool | None:
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"{status}  {label}" + (f"  ({detail})" if detail else "")
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
