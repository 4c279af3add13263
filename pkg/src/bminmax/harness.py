"""Data sources and the Monte Carlo MSE harness.

Site vectors are generated once per experiment, deterministically per
``(seed, site index)``; trials redraw only the Poisson samples.  The
engine evaluates every requested compression ratio and every site count
from one pass over ``max(sites)`` sites: inclusion uniforms do not depend
on the plan, and the aggregate over ``k`` sites is a prefix of the
aggregate over ``k + 1``.
"""

from __future__ import annotations

import enum
import io
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .aggregation import (
    Mode,
    SiteSummary,
    choose_mode,
    compute_site_summary,
    estimate_aggregate_mse,
)
from .exceptions import ConfigError, DataError
from .rng import uniforms
from .sampling import (
    SamplingPlan,
    SiteVector,
    assign_probabilities,
    plan_for,
    sample_size_for_ratio,
)
from .wire import SitePayload, decode_payload, encode_payload

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_BATCH_ELEMENTS = 1 << 22

CSV_HEADER = "axis,estimator,mean_mse,max_mse,mean_abs_bias,adaptive_bminmax_fraction,wall_ms"


class Estimator(str, enum.Enum):
    MINMAX = "minmax"
    BMINMAX = "bminmax"
    ADAPTIVE = "adaptive"


ALL_ESTIMATORS = (Estimator.MINMAX, Estimator.BMINMAX, Estimator.ADAPTIVE)


@dataclass(frozen=True)
class ZipfSource:
    exponent: float = 1.0
    support: int = 10**6

    @property
    def label(self) -> str:
        return f"zipf:{self.exponent:g}:{self.support}"


@dataclass(frozen=True)
class FileSource:
    path: str

    @property
    def label(self) -> str:
        return f"file:{Path(self.path).name}"


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment; ``dim=None`` with a file source means ``len // sites``.

    ``replicate`` gives every site the vector of site 0.  ``key_overlap``
    is the fraction of each site's ``dim`` keys shared by all sites; the
    rest are private to the site.
    """

    sites: int = 4
    dim: int | None = 10000
    ratio: float = 4.0
    trials: int = 1000
    seed: int = 42
    source: ZipfSource | FileSource = field(default_factory=ZipfSource)
    estimators: tuple[Estimator, ...] = ALL_ESTIMATORS
    key_overlap: float = 1.0
    replicate: bool = False
    roundtrip: bool = True
    threads: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.sites, (int, np.integer)) or self.sites < 1:
            raise ConfigError(f"sites must be a positive integer, got {self.sites}")
        if self.dim is not None and (not isinstance(self.dim, (int, np.integer)) or self.dim < 1):
            raise ConfigError(f"dim must be a positive integer, got {self.dim}")
        if not math.isfinite(self.ratio) or self.ratio < 1:
            raise ConfigError(f"compression ratio must be >= 1, got {self.ratio}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0.0 <= self.key_overlap <= 1.0:
            raise ConfigError(f"key_overlap must lie in [0, 1], got {self.key_overlap}")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        object.__setattr__(self, "estimators", tuple(Estimator(e) for e in self.estimators))
        if isinstance(self.source, ZipfSource):
            if self.source.exponent <= 0 or self.source.support < 2:
                raise ConfigError("zipf needs exponent > 0 and support >= 2")
            if self.dim is None:
                raise ConfigError("dim is required for generated data")


@dataclass
class ResultRow:
    sites: int
    dim: int
    ratio: float
    source: str
    estimator: Estimator
    mean_mse: float
    max_mse: float
    mean_abs_bias: float
    adaptive_mode_fraction: float
    wall_time_ms: float
    key_mse: npt.NDArray[np.float64] = field(repr=False, default=None)
    est_mse_bminmax: float = math.nan
    est_mse_minmax: float = math.nan


@dataclass(frozen=True)
class Axis:
    """A sweep axis: ``ratio`` (floats) or ``sites`` (ints)."""

    name: str
    values: tuple

    def __post_init__(self) -> None:
        if self.name not in ("ratio", "sites"):
            raise ConfigError(f"unknown sweep axis {self.name!r}")
        if not self.values:
            raise ConfigError("sweep axis needs at least one value")

    @classmethod
    def parse(cls, text: str) -> "Axis":
        """Parse ``ratio=2,4,6`` or ``sites=1..50`` (ranges and lists mix)."""
        name, sep, spec = text.partition("=")
        if not sep:
            raise ConfigError(f"sweep must look like name=values, got {text!r}")
        name = name.strip()
        conv = int if name == "sites" else float
        values: list = []
        try:
            for part in spec.split(","):
                part = part.strip()
                if ".." in part:
                    lo, hi = part.split("..")
                    values.extend(range(int(lo), int(hi) + 1))
                elif part:
                    values.append(conv(part))
        except ValueError as exc:
            raise ConfigError(f"bad sweep values {spec!r}: {exc}") from None
        return cls(name, tuple(conv(v) for v in values))


# -- data sources -----------------------------------------------------------


@lru_cache(maxsize=8)
def _zipf_cdf(exponent: float, support: int) -> npt.NDArray[np.float64]:
    mass = np.arange(1, support + 1, dtype=np.float64) ** -exponent
    cdf = np.cumsum(mass)
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    return cdf


def gen_zipf(d: int, exponent: float = 1.0, support: int = 10**6, seed: int = 42,
             site: int = 0) -> SiteVector:
    """``d`` i.i.d. draws from the Zipf law on ``{1..support}``.

    Inverse CDF over a cached normalised table; uniforms come from a Philox
    stream seeded by ``(seed, site)``.
    """
    if exponent <= 0 or support < 2:
        raise ConfigError("zipf needs exponent > 0 and support >= 2")
    cdf = _zipf_cdf(float(exponent), int(support))
    ss = np.random.SeedSequence([int(seed) & _MASK64, int(site)])
    u = np.random.Generator(np.random.Philox(ss)).random(d)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), support - 1)
    return SiteVector((idx + 1).astype(np.float64), site_id=site)


def load_vector(path: str | os.PathLike) -> SiteVector:
    """Read a flat vector: CSV/text one value per line, else raw float64 LE.

    Raises:
        DataError: unparsable or non-finite entry (with line or byte offset).
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if path.suffix.lower() in (".csv", ".txt"):
        values = []
        for lineno, line in enumerate(data.decode("utf-8", "replace").splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                v = float(line)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: cannot parse {line!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: line {lineno}: non-finite value")
            values.append(v)
        arr = np.array(values, dtype=np.float64)
    else:
        if len(data) % 8:
            raise DataError(f"{path}: size {len(data)} is not a multiple of 8 bytes")
        arr = np.frombuffer(data, dtype="<f8").astype(np.float64)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise DataError(f"{path}: non-finite value at byte offset {int(bad[0]) * 8}")
    if arr.size == 0:
        raise DataError(f"{path}: empty vector")
    return SiteVector(arr)


def save_vector(path: str | os.PathLike, values) -> None:
    """Write CSV for ``.csv``/``.txt`` paths, raw float64 LE otherwise."""
    path = Path(path)
    arr = np.asarray(values, dtype=np.float64).ravel()
    if path.suffix.lower() in (".csv", ".txt"):
        path.write_text("".join(f"{v!r}\n" for v in arr.tolist()))
    else:
        path.write_bytes(arr.astype("<f8").tobytes())


def split_sites(values, k: int, dim: int | None = None) -> list[npt.NDArray[np.float64]]:
    """Contiguous chunks of length ``dim`` (default ``len // k``), wrapping."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    dim = dim or arr.size // k
    if dim < 1:
        raise DataError(f"vector of length {arr.size} cannot feed {k} sites")
    idx = np.arange(dim)
    return [arr[(i * dim + idx) % arr.size] for i in range(k)]


def site_vectors(config: ExperimentConfig, k: int | None = None) -> list[SiteVector]:
    """The first ``k`` site vectors of an experiment, keyed by overlap."""
    k = k or config.sites
    if isinstance(config.source, FileSource):
        flat = load_vector(config.source.path).values
        chunks = split_sites(flat, k, config.dim)
        if config.replicate:
            chunks = [chunks[0]] * k
    else:
        s = config.source
        first = gen_zipf(config.dim, s.exponent, s.support, config.seed, 0).values
        chunks = [first if (config.replicate or i == 0)
                  else gen_zipf(config.dim, s.exponent, s.support, config.seed, i).values
                  for i in range(k)]
    d = chunks[0].size
    shared = int(round(config.key_overlap * d))
    local = np.arange(d, dtype=np.uint64)
    out = []
    for i, chunk in enumerate(chunks):
        keys = np.where(local < shared, local, local + np.uint64(i * (d - shared)))
        out.append(SiteVector(chunk, keys=keys, dim=d, site_id=i))
    return out


def key_space(config_dim: int, key_overlap: float, k: int) -> int:
    shared = int(round(key_overlap * config_dim))
    return shared + k * (config_dim - shared)


# -- Monte Carlo engine -----------------------------------------------------


def _threads(config: ExperimentConfig) -> int:
    if config.threads:
        return max(1, int(config.threads))
    env = os.environ.get("BMMX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"BMMX_THREADS must be an integer, got {env!r}") from None
    return min(8, os.cpu_count() or 1)


def _roundtrip_rows(mask, vec: SiteVector, plan: SamplingPlan, summary: SiteSummary):
    """Send every trial row through encode/decode; returns raw rows and C."""
    rows = np.zeros(mask.shape)
    threshold = plan.threshold
    for b in range(mask.shape[0]):
        m = mask[b]
        sent = vec.keys[m]
        payload = SitePayload(vec.site_id, vec.dim, plan.threshold, summary,
                              sent, vec.values[m], plan.target_n)
        got = decode_payload(encode_payload(payload))
        if got.threshold != threshold or not np.array_equal(got.keys, sent):
            raise DataError(f"payload of site {vec.site_id} changed in transit")
        rows[b, m] = got.values
    return rows, threshold


def _runs(pos: npt.NDArray[np.intp]) -> list[tuple[slice, slice]]:
    """Split sorted positions into (destination, source) contiguous slices."""
    breaks = np.flatnonzero(np.diff(pos) != 1) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [pos.size]))
    return [(slice(int(pos[a]), int(pos[a]) + (b - a)), slice(int(a), int(b)))
            for a, b in zip(starts, ends)]


class _Engine:
    def __init__(self, config: ExperimentConfig, ratios: Sequence[float],
                 site_counts: Sequence[int]):
        self.config = config
        self.ratios = list(ratios)
        self.checkpoints = sorted(set(int(k) for k in site_counts))
        if self.checkpoints[0] < 1:
            raise ConfigError("site counts must be >= 1")
        for r in self.ratios:
            if not math.isfinite(r) or r < 1:
                raise ConfigError(f"compression ratio must be >= 1, got {r}")
        self.kmax = self.checkpoints[-1]
        self.vectors = site_vectors(config, self.kmax)
        self.dim = self.vectors[0].dim
        self.K = key_space(self.dim, config.key_overlap, self.kmax)
        self.plans = [[plan_for(v, sample_size_for_ratio(self.dim, r)) for v in self.vectors]
                      for r in self.ratios]
        self.summaries = [[compute_site_summary(v, p) for v, p in zip(self.vectors, plans)]
                          for plans in self.plans]
        truth = np.zeros(self.K)
        self.truth = {}
        for i, v in enumerate(self.vectors):
            truth[v.keys.astype(np.intp)] += v.values
            if i + 1 in self.checkpoints:
                self.truth[i + 1] = truth[: self.key_count(i + 1)].copy()

    def key_count(self, k: int) -> int:
        return key_space(self.dim, self.config.key_overlap, k)

    def run_batch(self, trials: npt.NDArray[np.int64]):
        cfg = self.config
        R, B = len(self.ratios), trials.size
        cum_raw = np.zeros((R, B, self.K))
        cum_mm = np.zeros((R, B, self.K))
        out = {}
        for i, vec in enumerate(self.vectors):
            u = uniforms(cfg.seed, i, trials, vec.keys)
            runs = _runs(vec.keys.astype(np.intp))
            for ri in range(R):
                plan = self.plans[ri][i]
                mask = u < plan.probs
                if cfg.roundtrip:
                    raw, threshold = _roundtrip_rows(mask, vec, plan, self.summaries[ri][i])
                else:
                    raw, threshold = np.where(mask, vec.values, 0.0), plan.threshold
                sent = raw[mask]
                p = assign_probabilities(sent, threshold)
                mm = np.zeros_like(raw)
                mm[mask] = np.divide(sent, p, out=np.zeros_like(sent), where=p > 0)
                for dst, src in runs:
                    cum_raw[ri][:, dst] += raw[:, src]
                    cum_mm[ri][:, dst] += mm[:, src]
            k = i + 1
            if k in self.truth:
                n_keys = self.truth[k].size
                for ri in range(R):
                    eb = cum_raw[ri, :, :n_keys] - self.truth[k]
                    em = cum_mm[ri, :, :n_keys] - self.truth[k]
                    out[ri, k] = (eb.sum(0), (eb * eb).sum(0), em.sum(0), (em * em).sum(0))
        return out

    def run(self):
        T = self.config.trials
        per_trial = max(1, len(self.ratios) * self.K)
        B = int(min(T, max(1, _BATCH_ELEMENTS // per_trial)))
        batches = [np.arange(a, min(a + B, T), dtype=np.int64) for a in range(0, T, B)]
        totals: dict = {}
        workers = min(_threads(self.config), len(batches))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = pool.map(self.run_batch, batches)
                for part in results:
                    _accumulate(totals, part)
        else:
            for batch in batches:
                _accumulate(totals, self.run_batch(batch))
        return totals


def _accumulate(totals: dict, part: dict) -> None:
    for key, arrays in part.items():
        if key in totals:
            totals[key] = tuple(a + b for a, b in zip(totals[key], arrays))
        else:
            totals[key] = arrays


def _simulate(config: ExperimentConfig, ratios: Sequence[float],
              site_counts: Sequence[int]) -> list[ResultRow]:
    t0 = time.perf_counter()
    engine = _Engine(config, ratios, site_counts)
    totals = engine.run()
    points = [(ri, k) for ri in range(len(engine.ratios)) for k in engine.checkpoints]
    wall = (time.perf_counter() - t0) * 1e3 / len(points)
    T = config.trials
    rows = []
    for ri, k in points:
        sum_b, sq_b, sum_m, sq_m = totals[ri, k]
        est_b, est_m = estimate_aggregate_mse(engine.summaries[ri][:k])
        mode = choose_mode(est_b, est_m)
        branch = {
            Estimator.BMINMAX: (sum_b, sq_b, 1.0),
            Estimator.MINMAX: (sum_m, sq_m, 0.0),
        }
        branch[Estimator.ADAPTIVE] = (
            branch[Estimator.BMINMAX][:2] + (1.0,) if mode is Mode.BMINMAX
            else branch[Estimator.MINMAX][:2] + (0.0,)
        )
        for est in config.estimators:
            s, sq, frac = branch[est]
            key_mse = sq / T
            rows.append(ResultRow(
                sites=k, dim=engine.dim, ratio=float(engine.ratios[ri]),
                source=config.source.label, estimator=est,
                mean_mse=float(key_mse.mean()), max_mse=float(key_mse.max()),
                mean_abs_bias=float(np.abs(s / T).mean()),
                adaptive_mode_fraction=frac, wall_time_ms=wall, key_mse=key_mse,
                est_mse_bminmax=est_b, est_mse_minmax=est_m,
            ))
    return rows


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """Monte Carlo MSE of each requested estimator at one design point."""
    return _simulate(config, [config.ratio], [config.sites])


def sweep_rows(config: ExperimentConfig, axis: Axis) -> list[ResultRow]:
    if axis.name == "ratio":
        rows = _simulate(config, axis.values, [config.sites])
    else:
        rows = _simulate(config, [config.ratio], axis.values)
    return sorted(rows, key=lambda r: (_axis_value(r, axis.name), r.estimator.value))


def _axis_value(row: ResultRow, axis: str):
    return row.ratio if axis == "ratio" else row.sites


def _fmt_axis(value) -> str:
    return str(value) if isinstance(value, (int, np.integer)) else f"{value:g}"


def rows_to_csv(rows: Sequence[ResultRow], axis: str, timing: bool = False) -> str:
    """CSV text; ``wall_ms`` is left empty unless ``timing`` so reruns match."""
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in rows:
        wall = f"{r.wall_time_ms:.3f}" if timing else ""
        buf.write(
            f"{_fmt_axis(_axis_value(r, axis))},{r.estimator.value},{r.mean_mse!r},"
            f"{r.max_mse!r},{r.mean_abs_bias!r},{r.adaptive_mode_fraction!r},{wall}\n"
        )
    return buf.getvalue()


def rows_to_dat(rows: Sequence[ResultRow], axis: str) -> str:
    """Gnuplot table: axis value then one mean-MSE column per estimator."""
    estimators = sorted({r.estimator.value for r in rows})
    table: dict = {}
    for r in rows:
        table.setdefault(_axis_value(r, axis), {})[r.estimator.value] = r.mean_mse
    lines = ["# " + " ".join([axis] + estimators)]
    for value in sorted(table):
        cols = [repr(table[value].get(e, math.nan)) for e in estimators]
        lines.append(" ".join([_fmt_axis(value)] + cols))
    return "\n".join(lines) + "\n"


def sweep(config: ExperimentConfig, axis: Axis, timing: bool = False) -> str:
    """Run the sweep and return its CSV text."""
    return rows_to_csv(sweep_rows(config, axis), axis.name, timing)


def write_results(rows: Sequence[ResultRow], axis: str, out: str | os.PathLike,
                  timing: bool = False) -> tuple[Path, Path]:
    out = Path(out)
    dat = out.with_suffix(".dat")
    out.write_text(rows_to_csv(rows, axis, timing))
    dat.write_text(rows_to_dat(rows, axis))
    return out, dat
