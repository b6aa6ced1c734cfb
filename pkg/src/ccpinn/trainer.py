"""Joint Adam optimization of the network and contrast sources."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import objective
from .diffcore import GradientBundle, LossEvaluator, gradient
from .neuralfield import DEFAULT_DIMS, FieldNetwork, load_checkpoint
from .objective import NonFiniteLossError
from .physics.channel import Dataset, FrequencyChannel, build_channels
from .scene import Grid, MediumMaps, rasterize

log = logging.getLogger(__name__)

STRATEGIES = ("hopping", "simultaneous")
BETA_MODES = ("cc", "classical")
PRECISIONS = ("float64", "float32")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    total_epochs: int = 15000
    strategy: str = "hopping"
    stage_fractions: list[float] | None = None
    lr_theta: float = 1e-3
    lr_J: float = 2e-3
    lr_floor_theta: float = 0.0
    lr_floor_J: float = 0.0
    beta_mode: str = "cc"
    seed: int = 0
    psnr_every: int = 100
    pad_factor: int = 4
    precision: str = "float64"
    feature_std: float = 1.0
    dims: list[int] = field(default_factory=lambda: list(DEFAULT_DIMS))
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    save_checkpoint: bool = True

    def validate(self, n_freqs: int | None = None) -> None:
        errors = []
        if int(self.total_epochs) != self.total_epochs or self.total_epochs < 0:
            errors.append("total_epochs must be a non-negative integer")
        if self.strategy not in STRATEGIES:
            errors.append(f"strategy must be one of {STRATEGIES}")
        if self.beta_mode not in BETA_MODES:
            errors.append(f"beta_mode must be one of {BETA_MODES}")
        if self.precision not in PRECISIONS:
            errors.append(f"precision must be one of {PRECISIONS}")
        if not (self.lr_theta > 0 and self.lr_J > 0):
            errors.append("learning rates must be positive")
        if not (0 <= self.lr_floor_theta <= self.lr_theta and 0 <= self.lr_floor_J <= self.lr_J):
            errors.append("learning-rate floors must lie in [0, lr]")
        if int(self.psnr_every) != self.psnr_every or self.psnr_every < 1:
            errors.append("psnr_every must be a positive integer")
        if int(self.pad_factor) != self.pad_factor or self.pad_factor < 2:
            errors.append("pad_factor must be an integer >= 2")
        if self.stage_fractions is not None:
            fr = list(self.stage_fractions)
            if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
                errors.append("stage_fractions must be positive and sum to 1")
            if n_freqs is not None and self.strategy == "hopping" and len(fr) != n_freqs:
                errors.append(f"{len(fr)} stage fractions for {n_freqs} frequencies")
        if errors:
            raise ConfigError("; ".join(errors))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(data)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)

    @property
    def real_dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


def default_stage_fractions(n_freqs: int) -> list[float]:
    """Earlier stages share 40% equally, the final stage takes 60%."""
    if n_freqs == 1:
        return [1.0]
    return [0.4 / (n_freqs - 1)] * (n_freqs - 1) + [0.6]


@dataclass(frozen=True)
class StageSchedule:
    """Epoch ranges of the frequency stages.

    Under hopping, stage ``s`` activates frequency ``s`` (in dataset order)
    and keeps the earlier ones.  Under the simultaneous strategy there is a
    single stage covering every frequency.
    """

    total_epochs: int
    starts: tuple[int, ...]
    hopping: bool

    @classmethod
    def build(cls, total_epochs: int, n_freqs: int, strategy: str, fractions=None) -> "StageSchedule":
        if strategy == "simultaneous" or n_freqs == 1:
            return cls(total_epochs, (0,), False if strategy == "simultaneous" else True)
        fr = default_stage_fractions(n_freqs) if fractions is None else list(fractions)
        ends = np.rint(np.cumsum(fr) * total_epochs).astype(int)
        starts = (0,) + tuple(int(e) for e in ends[:-1])
        return cls(total_epochs, starts, True)

    @property
    def n_stages(self) -> int:
        return len(self.starts)

    def stage_of(self, epoch: int) -> int:
        return int(np.searchsorted(self.starts, epoch, side="right") - 1)

    def stage_bounds(self, stage: int) -> tuple[int, int]:
        end = self.starts[stage + 1] if stage + 1 < self.n_stages else self.total_epochs
        return self.starts[stage], end

    def active(self, epoch: int, n_freqs: int) -> list[int]:
        if not self.hopping:
            return list(range(n_freqs))
        return list(range(self.stage_of(epoch) + 1))

    def beta(self, epoch: int) -> float:
        if not self.hopping or self.n_stages == 1:
            return objective.beta(epoch, self.total_epochs)
        start, end = self.stage_bounds(self.stage_of(epoch))
        return objective.staged_beta(epoch, start, end - start)


def cosine_lr(epoch: float, total: float, lr0: float, floor: float = 0.0) -> float:
    if total <= 0:
        return lr0
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    return floor + 0.5 * (lr0 - floor) * (1.0 + math.cos(math.pi * epoch / total))


def backprojection_init(ch: FrequencyChannel) -> np.ndarray:
    """Per-transmitter scaled back-propagation J_p = alpha_p G_S^H y_p.

    alpha_p = ||G_S^H y_p||^2 / ||G_S G_S^H y_p||^2 is the least-squares step
    along the back-propagated direction; masked receivers are excluded.
    """
    y = ch.e_meas * ch.mask
    w = y @ np.conj(ch.g_s)  # rows of G_S^H y_p
    gw = (w @ ch.g_s.T) * ch.mask
    num = np.einsum("ij,ij->i", np.conj(w), w).real
    den = np.einsum("ij,ij->i", np.conj(gw), gw).real
    alpha = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return (alpha[:, None] * w).reshape(ch.e_inc.shape)


class Adam:
    """Adam with bias correction and one moment/step buffer per named variable.

    Complex arrays are updated as independent real and imaginary parts.
    """

    def __init__(self, betas=(0.9, 0.999), eps: float = 1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.state: dict = {}

    def step(self, params: dict, grads: dict, lr: float, prefix: str = "") -> None:
        for name, g in grads.items():
            x = params[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {prefix}{name}")
            xr = x.view(x.real.dtype) if np.iscomplexobj(x) else x
            gr = np.ascontiguousarray(g).view(xr.dtype) if np.iscomplexobj(g) else g
            key = (prefix, name)
            if key not in self.state:
                self.state[key] = [np.zeros_like(xr), np.zeros_like(xr), 0]
            st = self.state[key]
            m, v = st[0], st[1]
            st[2] += 1
            t = st[2]
            m *= self.b1
            m += (1.0 - self.b1) * gr
            v *= self.b2
            v += (1.0 - self.b2) * gr * gr
            mhat = m / (1.0 - self.b1**t)
            vhat = v / (1.0 - self.b2**t)
            xr -= lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(state: Adam, params: dict, grads: dict, lr: float, prefix: str = "") -> Adam:
    state.step(params, grads, lr, prefix)
    return state


def psnr(recon: np.ndarray, truth: np.ndarray) -> float:
    """10 log10(max(truth)^2 / MSE); +inf when MSE is zero."""
    recon = np.asarray(recon, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if recon.shape != truth.shape:
        raise ValueError("shape mismatch")
    peak = float(truth.max())
    if peak <= 0:
        raise ValueError("peak value of the reference is not positive; PSNR undefined")
    mse = float(np.mean((recon - truth) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@dataclass
class RunRecord:
    seed: int
    config: dict
    psnr_epochs: list[int] = field(default_factory=list)
    psnr_eps: list[float] = field(default_factory=list)
    psnr_sigma: list[float] = field(default_factory=list)
    loss_columns: list[str] = field(default_factory=list)
    loss_trace: np.ndarray | None = None
    final_eps: np.ndarray | None = None
    final_sigma: np.ndarray | None = None
    network: FieldNetwork | None = None
    roi_half_width: float = 0.0
    freqs: list[float] = field(default_factory=list)
    elapsed: float = 0.0
    failed: bool = False
    failure: str = ""
    dataset_name: str = ""
    checkpoint_path: str | None = None

    @property
    def final_psnr_eps(self) -> float:
        return self.psnr_eps[-1] if self.psnr_eps else math.nan

    @property
    def final_psnr_sigma(self) -> float:
        return self.psnr_sigma[-1] if self.psnr_sigma else math.nan


def _medium_psnr(eps, sig, truth: MediumMaps | None, lossy: bool) -> tuple[float, float]:
    if truth is None:
        return math.nan, math.nan
    pe = psnr(eps, truth.eps_r)
    ps = psnr(sig, truth.sigma) if lossy else math.nan
    return pe, ps


def run_inversion(
    dataset: Dataset,
    config: TrainConfig,
    channels: Sequence[FrequencyChannel] | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> RunRecord:
    """Train one network from ``config.seed`` and return its record.

    A non-finite loss or gradient stops the run and marks the record failed;
    it does not raise.
    """
    n_f = len(dataset.freqs)
    config.validate(n_f)
    t0 = time.perf_counter()
    grid = dataset.grid
    if channels is None:
        channels = build_channels(dataset, config.pad_factor)
    dtype = config.real_dtype
    if dtype != np.float64:
        channels = [ch.astype(dtype) for ch in channels]

    truth = rasterize(dataset.truth, grid) if dataset.truth is not None else None
    lossy = truth is not None and float(truth.sigma.max()) > 0

    net = FieldNetwork.create(config.seed, config.dims, config.feature_std, dtype)
    net.meta["roi_half_width"] = grid.half_width
    features = net.features(grid.normalized_points())
    sched = StageSchedule.build(config.total_epochs, n_f, config.strategy, config.stage_fractions)
    adam = Adam(tuple(config.adam_betas), config.adam_eps)
    J: dict[int, np.ndarray] = {}

    rec = RunRecord(
        seed=config.seed, config=config.to_dict(), roi_half_width=grid.half_width,
        freqs=list(dataset.freqs), dataset_name=dataset.name,
    )
    rec.loss_columns = ["epoch", "stage", "beta", "total"] + [
        f"{t}_{k}" for k in range(n_f) for t in ("l_data", "l_state", "l_cross")
    ]
    trace = np.full((config.total_epochs, len(rec.loss_columns)), np.nan)

    def record_psnr(epoch: int) -> None:
        eps, sig = net.forward(None, features=features)
        pe, ps = _medium_psnr(eps.reshape(grid.n, grid.n), sig.reshape(grid.n, grid.n), truth, lossy)
        rec.psnr_epochs.append(epoch)
        rec.psnr_eps.append(pe)
        rec.psnr_sigma.append(ps)

    record_psnr(0)
    for epoch in range(config.total_epochs):
        stage = sched.stage_of(epoch)
        active = sched.active(epoch, n_f)
        for i in active:
            if i not in J:
                J[i] = backprojection_init(channels[i])
        b = 0.0 if config.beta_mode == "classical" else sched.beta(epoch)
        ev = LossEvaluator(channels, features, active, b)
        try:
            total, terms, grads = gradient(ev, net, J)
            if not grads.all_finite():
                raise FloatingPointError("non-finite gradient")
        except (NonFiniteLossError, FloatingPointError) as exc:
            rec.failed, rec.failure = True, f"epoch {epoch}: {exc}"
            log.warning("run seed=%d failed at %s", config.seed, rec.failure)
            trace = trace[:epoch]
            break
        row = trace[epoch]
        row[:4] = (epoch, stage, b, total)
        for k, i in enumerate(active):
            row[4 + 3 * i: 7 + 3 * i] = (terms.l_data[k], terms.l_state[k], terms.l_cross[k])

        adam.step(net.params, grads.d_theta, cosine_lr(epoch, config.total_epochs, config.lr_theta, config.lr_floor_theta), "theta.")
        adam.step(J, grads.d_J, cosine_lr(epoch, config.total_epochs, config.lr_J, config.lr_floor_J), "J.")

        if (epoch + 1) % config.psnr_every == 0:
            record_psnr(epoch + 1)
        if progress is not None:
            progress(epoch, total)

    eps, sig = net.forward(None, features=features)
    rec.final_eps = eps.reshape(grid.n, grid.n).astype(np.float64)
    rec.final_sigma = sig.reshape(grid.n, grid.n).astype(np.float64)
    rec.loss_trace = trace
    rec.network = net
    rec.elapsed = time.perf_counter() - t0
    return rec


def infer(checkpoint, grid: Grid, roi_half_width: float | None = None) -> MediumMaps:
    """Evaluate a trained network at the cell centers of ``grid``.

    Coordinates are normalized by the training ROI half-width stored in the
    checkpoint, so points outside the training ROI extrapolate.
    """
    net = checkpoint if isinstance(checkpoint, FieldNetwork) else load_checkpoint(checkpoint)
    r = roi_half_width if roi_half_width is not None else net.meta.get("roi_half_width")
    if r is None:
        raise ValueError("training ROI half-width unknown; pass roi_half_width")
    eps, sig = net.forward(grid.points() / float(r))
    return MediumMaps(eps.reshape(grid.n, grid.n).astype(float), sig.reshape(grid.n, grid.n).astype(float))


@dataclass
class EnsembleStats:
    """Across-run PSNR statistics for one metric ("eps" or "sigma")."""

    metric: str
    epochs: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    five_numbers: tuple[float, float, float, float, float]
    final_values: np.ndarray
    seeds: list[int]
    median_seed: int
    failed_seeds: list[int]


def five_number_summary(values) -> tuple[float, float, float, float, float]:
    """(min, Q1, median, Q3, max) with linear-interpolation quantiles."""
    v = np.asarray(values, dtype=float)
    q = np.percentile(v, [0, 25, 50, 75, 100], method="linear")
    return tuple(float(x) for x in q)


def median_index(values) -> int:
    """Index of the run at sorted position (n-1)//2, the median for odd n."""
    order = np.argsort(np.asarray(values, dtype=float), kind="stable")
    return int(order[(len(order) - 1) // 2])


def ensemble_stats(records: Sequence[RunRecord], metric: str = "eps") -> EnsembleStats:
    ok = [r for r in records if not r.failed]
    failed = [r.seed for r in records if r.failed]
    if not ok:
        raise RuntimeError("every run failed")
    series = np.array([r.psnr_eps if metric == "eps" else r.psnr_sigma for r in ok], dtype=float)
    finals = series[:, -1]
    idx = median_index(finals)
    return EnsembleStats(
        metric,
        np.asarray(ok[0].psnr_epochs),
        series.mean(axis=0),
        series.std(axis=0),
        five_number_summary(finals),
        finals,
        [r.seed for r in ok],
        ok[idx].seed,
        failed,
    )


def _run_one(args):
    dataset, cfg = args
    return run_inversion(dataset, cfg)


def multi_run(
    dataset: Dataset,
    config: TrainConfig,
    n_runs: int = 11,
    seeds: Sequence[int] | None = None,
    workers: int = 1,
) -> tuple[dict[str, EnsembleStats], list[RunRecord]]:
    """Independent runs with seeds ``config.seed .. config.seed + n_runs - 1``.

    Returns per-metric stats (``"eps"`` always, ``"sigma"`` for lossy truth)
    and the run records in seed order.
    """
    seeds = list(range(config.seed, config.seed + n_runs)) if seeds is None else list(seeds)
    if len(seeds) < 2:
        raise ValueError("an ensemble needs at least two runs")
    cfgs = [dataclasses.replace(config, seed=int(s)) for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, [(dataset, c) for c in cfgs]))
    else:
        channels = build_channels(dataset, config.pad_factor)
        records = [run_inversion(dataset, c, channels) for c in cfgs]
    stats = {"eps": ensemble_stats(records, "eps")}
    ok = [r for r in records if not r.failed]
    if ok and not np.all(np.isnan(ok[0].psnr_sigma)):
        stats["sigma"] = ensemble_stats(records, "sigma")
    return stats, records
