"""Command-line entry point: generate | invert | ensemble | report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import dataio
from .physics.channel import Dataset, generate_synthetic
from .physics.layout import synthetic_ring_layout
from .scene import Grid, Phantom, austria_phantom
from .trainer import ConfigError, TrainConfig, multi_run, run_inversion

OUTPUT_ROOT_ENV = "CCPINN_OUTPUT_ROOT"
log = logging.getLogger("ccpinn")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one command's output."""

    phantom: str = "austria"  # "austria" or a phantom JSON file
    eps_r: float | list[float] = 4.0
    sigma: float | list[float] = 0.0
    dataset: str | None = None
    fresnel: str | None = None
    band: str = "345"
    snr_db: float | None = None
    freqs_ghz: list[float] | None = None
    grid_n: int = 64
    roi_half_width: float = 0.5
    refine: int = 2
    noise_seed: int = 0
    n_runs: int = 11
    workers: int = 1
    output: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        errors = []
        if self.dataset and self.fresnel:
            errors.append("give either dataset or fresnel, not both")
        if self.phantom != "austria" and not Path(self.phantom).is_file():
            errors.append(f"phantom {self.phantom!r} is neither 'austria' nor a readable file")
        if self.dataset and not Path(self.dataset).is_file():
            errors.append(f"dataset {self.dataset} not found")
        if self.fresnel and not Path(self.fresnel).is_file():
            errors.append(f"Fresnel file {self.fresnel} not found")
        if self.freqs_ghz is not None and (not self.freqs_ghz or any(not f > 0 for f in self.freqs_ghz)):
            errors.append("frequencies must be positive")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            errors.append("snr_db must be finite (omit it for noiseless data)")
        if self.grid_n < 2 or self.refine < 1:
            errors.append("grid_n must be >= 2 and refine >= 1")
        if not self.roi_half_width > 0:
            errors.append("roi_half_width must be positive")
        if self.n_runs < 2:
            errors.append("n_runs must be >= 2")
        if self.workers < 1:
            errors.append("workers must be >= 1")
        try:
            self.train.validate()
        except ConfigError as exc:
            errors.append(str(exc))
        if errors:
            raise ConfigError("; ".join(errors))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "train"}
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(data)
        d["train"] = TrainConfig.from_dict(d.get("train", {}))
        return cls(**d)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _scalar_or_list(text: str):
    vals = _floats(text)
    return vals[0] if len(vals) == 1 else vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccpinn", description="Neural-field microwave inverse scattering")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="ExperimentConfig JSON; flags override it")
    common.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("--out", "-o", help=f"output path (default under ${OUTPUT_ROOT_ENV})")
    common.add_argument("--force", action="store_true", help="overwrite existing output")

    scene = argparse.ArgumentParser(add_help=False)
    scene.add_argument("--phantom", help="'austria' or a phantom JSON file")
    scene.add_argument("--eps-r", type=_scalar_or_list, help="relative permittivity (one value or three)")
    scene.add_argument("--sigma", type=_scalar_or_list, help="conductivity in S/m")
    scene.add_argument("--freqs", type=_floats, help="frequencies in GHz, e.g. 0.3,0.4,0.5")
    scene.add_argument("--snr", type=float, help="SNR in dB (omit for noiseless data)")
    scene.add_argument("--grid", type=int, help="inversion grid size N")
    scene.add_argument("--roi", type=float, help="ROI half-width in metres")
    scene.add_argument("--refine", type=int, help="generation grid refinement factor")
    scene.add_argument("--noise-seed", type=int)
    scene.add_argument("--fresnel", help="Fresnel TM data file")
    scene.add_argument("--band", help="Fresnel band label, e.g. 345 or 678")

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--dataset", help="dataset container written by 'generate'")
    train.add_argument("--epochs", type=int)
    train.add_argument("--strategy", choices=["hopping", "simultaneous"])
    train.add_argument("--stages", type=_floats, help="stage fractions, e.g. 0.2,0.2,0.6")
    train.add_argument("--beta-mode", choices=["cc", "classical"])
    train.add_argument("--seed", type=int, help="network seed")
    train.add_argument("--lr-theta", type=float)
    train.add_argument("--lr-j", type=float)
    train.add_argument("--psnr-every", type=int)
    train.add_argument("--pad", type=int, help="FFT padding factor")
    train.add_argument("--precision", choices=["float64", "float32"])

    sub.add_parser("generate", parents=[common, scene], help="simulate or convert a dataset")
    sub.add_parser("invert", parents=[common, scene, train], help="single inversion run")
    ens = sub.add_parser("ensemble", parents=[common, scene, train], help="independent runs + statistics")
    ens.add_argument("--runs", type=int)
    ens.add_argument("--workers", type=int)
    rep = sub.add_parser("report", help="figures from stored run/ensemble directories")
    rep.add_argument("dirs", nargs="+")
    rep.add_argument("--out", "-o", required=True)
    rep.add_argument("--force", action="store_true")
    return ap


_FLAG_MAP = {
    "phantom": "phantom", "eps_r": "eps_r", "sigma": "sigma", "freqs": "freqs_ghz", "snr": "snr_db",
    "grid": "grid_n", "roi": "roi_half_width", "refine": "refine", "noise_seed": "noise_seed",
    "fresnel": "fresnel", "band": "band", "dataset": "dataset", "runs": "n_runs", "workers": "workers",
    "out": "output",
}
_TRAIN_MAP = {
    "epochs": "total_epochs", "strategy": "strategy", "stages": "stage_fractions", "beta_mode": "beta_mode",
    "seed": "seed", "lr_theta": "lr_theta", "lr_j": "lr_J", "psnr_every": "psnr_every", "pad": "pad_factor",
    "precision": "precision",
}


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    for flag, key in _FLAG_MAP.items():
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, key, val)
    for flag, key in _TRAIN_MAP.items():
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg.train, key, val)
    cfg.validate()
    return cfg


def _default_output(kind: str, suffix: str = "") -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{kind}{suffix}"


def _claim(path: Path, force: bool) -> None:
    """Refuse to clobber existing output unless ``force``."""
    if path.exists() and (path.is_file() or any(path.iterdir())):
        if not force:
            raise FileExistsError(f"{path} exists; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()


def _phantom(cfg: ExperimentConfig) -> Phantom:
    if cfg.phantom == "austria":
        return austria_phantom(cfg.eps_r, cfg.sigma)
    return Phantom.load(cfg.phantom)


def load_or_build_dataset(cfg: ExperimentConfig) -> Dataset:
    """Dataset file, Fresnel band or fresh synthetic data, in that order of preference."""
    if cfg.dataset:
        ds = dataio.load_dataset(cfg.dataset)
    elif cfg.fresnel:
        recs = dataio.parse_fresnel(cfg.fresnel)
        ds = dataio.subsample_and_split(recs, [cfg.band], grid_n=cfg.grid_n)[cfg.band]
    else:
        freqs = cfg.freqs_ghz or [0.3, 0.4, 0.5]
        grid = Grid(cfg.roi_half_width, cfg.grid_n)
        return generate_synthetic(
            _phantom(cfg), [f * 1e9 for f in freqs], synthetic_ring_layout(cfg.roi_half_width), grid,
            refine=cfg.refine, snr_db=cfg.snr_db, seed=cfg.noise_seed, name="synthetic",
        )
    if cfg.freqs_ghz:
        ds = ds.select([f * 1e9 for f in cfg.freqs_ghz])
    return ds


def cmd_generate(cfg: ExperimentConfig, force: bool = False) -> Path:
    out = Path(cfg.output) if cfg.output else _default_output("dataset", ".npz")
    _claim(out, force)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = load_or_build_dataset(cfg)
    ds.meta = {**ds.meta, "experiment": cfg.to_dict()}
    dataio.save_dataset(out, ds)
    print(f"wrote {out}: {len(ds.freqs)} channels, {ds.layout.n_tx}x{int(ds.layout.active_per_tx[0])} active each")
    return out


def cmd_invert(cfg: ExperimentConfig, force: bool = False) -> tuple[Path, bool]:
    out = Path(cfg.output) if cfg.output else _default_output(
        "invert", f"-{cfg.train.beta_mode}-seed{cfg.train.seed}")
    _claim(out, force)
    ds = load_or_build_dataset(cfg)
    rec = run_inversion(ds, cfg.train)
    dataio.write_run(rec, out, ds.truth, extra_config={"experiment": cfg.to_dict()})
    if rec.failed:
        print(f"run failed: {rec.failure}", file=sys.stderr)
    else:
        print(f"final PSNR eps_r {rec.final_psnr_eps:.2f} dB, sigma {rec.final_psnr_sigma:.2f} dB -> {out}")
    return out, not rec.failed


def cmd_ensemble(cfg: ExperimentConfig, force: bool = False) -> tuple[Path, bool]:
    out = Path(cfg.output) if cfg.output else _default_output("ensemble", f"-{cfg.train.beta_mode}")
    _claim(out, force)
    ds = load_or_build_dataset(cfg)
    stats, records = multi_run(ds, cfg.train, cfg.n_runs, workers=cfg.workers)
    dataio.write_ensemble(stats, records, out, ds.truth, extra_config={"experiment": cfg.to_dict()})
    st = stats["eps"]
    print(f"{len(st.seeds)} runs, median final PSNR eps_r {st.five_numbers[2]:.2f} dB (seed {st.median_seed}) -> {out}")
    if st.failed_seeds:
        print(f"failed seeds: {st.failed_seeds}", file=sys.stderr)
    return out, not st.failed_seeds


def cmd_report(dirs, out: str, force: bool = False) -> Path:
    out = Path(out)
    _claim(out, force)
    return dataio.build_report(dirs, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            cmd_report(args.dirs, args.out, args.force)
            return 0
        cfg = resolve_config(args)
        if args.print_config:
            print(json.dumps(cfg.to_dict(), indent=2))
            return 0
        if args.command == "generate":
            cmd_generate(cfg, args.force)
            return 0
        if args.command == "invert":
            return 0 if cmd_invert(cfg, args.force)[1] else 1
        return 0 if cmd_ensemble(cfg, args.force)[1] else 1
    except (ConfigError, FileExistsError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
