"""Evaluation: makeup and face distances, inference timing, ablations."""

from __future__ import annotations

import csv
import io
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .data import FaceDataset, iter_pairs
from .engine import (Checkpoint, _as_checkpoint, build_dataset, train_phase1, train_phase2)
from .generator import Generator
from .losses import make_extractor, makeup_loss


def d_makeup(generated, reference, gen_masks=None, ref_masks=None) -> float:
    """Histogram distance of a transferred image to its reference (the makeup loss, no grad)."""
    with torch.no_grad():
        return float(makeup_loss(torch.as_tensor(generated), torch.as_tensor(reference),
                                 gen_masks, ref_masks, skip_empty=True))


def d_face(generated, source, extractor) -> float:
    """Feature-space MSE between a generated image and its source face."""
    with torch.no_grad():
        a = extractor(_batched(torch.as_tensor(generated)))
        b = extractor(_batched(torch.as_tensor(source)))
        return float(torch.mean((a - b) ** 2))


def _batched(x):
    return x[None] if x.dim() == 3 else x


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    name: str = ""

    @property
    def n_images(self) -> int:
        return len(self.rows)

    def _mean(self, key):
        if not self.rows:
            raise ValueError("empty report")
        return float(np.mean([r[key] for r in self.rows]))

    @property
    def d_makeup_mean(self) -> float:
        return self._mean("d_makeup")

    @property
    def d_face_mean(self) -> float:
        return self._mean("d_face")

    @property
    def inference_time_mean_s(self) -> float:
        return self._mean("time_s")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["src", "ref", "d_makeup", "d_face", "time_s"])
        for r in self.rows:
            w.writerow([r["src"], r["ref"], repr(r["d_makeup"]), repr(r["d_face"]),
                        repr(r["time_s"])])
        return buf.getvalue()

    def to_text(self) -> str:
        return (f"{self.name}: n={self.n_images}  D_makeup={self.d_makeup_mean:.4f}  "
                f"D_face={self.d_face_mean:.4f}  time={self.inference_time_mean_s:.4f}s")


def _generator(model) -> Generator:
    if isinstance(model, Generator):
        return model.eval()
    return _as_checkpoint(model).build_generator()


def evaluate(model, dataset: FaceDataset, extractor="identity") -> EvalReport:
    """Transfer every (non-makeup, makeup) test pair once and score it."""
    g = _generator(model)
    if isinstance(extractor, str):
        extractor = make_extractor(extractor)
    report = EvalReport(name=g.spec.name)
    for batch in iter_pairs(dataset, 1, seed=0, epoch=0, augment=False, shuffle=False):
        src, ref = torch.from_numpy(batch.src), torch.from_numpy(batch.ref)
        with torch.no_grad():
            t0 = time.perf_counter()
            fake_mk, _ = g(src, ref)
            elapsed = time.perf_counter() - t0
        report.rows.append({
            "src": batch.src_ids[0], "ref": batch.ref_ids[0],
            "d_makeup": d_makeup(fake_mk, ref, batch.src_masks, batch.ref_masks),
            "d_face": d_face(fake_mk, src, extractor),
            "time_s": elapsed,
        })
    if not report.rows:
        raise ValueError("dataset yielded no evaluation pairs")
    return report


# -- timing ----------------------------------------------------------------------

def hardware_id() -> str:
    try:
        for line in Path("/proc/cpuinfo").read_text().splitlines():
            if line.startswith("model name"):
                return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


@dataclass
class BenchStats:
    name: str
    mean_s: float
    std_s: float
    median_s: float
    min_s: float
    n_runs: int
    n_warmup: int
    resolution: int
    hardware: str
    times: list[float] = field(default_factory=list, repr=False)

    def to_text(self) -> str:
        return (f"{self.name}: mean {self.mean_s:.4f}s  std {self.std_s:.4f}s  "
                f"median {self.median_s:.4f}s  ({self.n_runs} runs @ {self.resolution}px, "
                f"{self.hardware})")


def _stats(name, times, n_warmup, resolution) -> BenchStats:
    return BenchStats(name, statistics.fmean(times), statistics.stdev(times),
                      statistics.median(times), min(times), len(times), n_warmup,
                      resolution, hardware_id(), list(times))


class _single_thread:
    def __enter__(self):
        self.prev = torch.get_num_threads()
        torch.set_num_threads(1)

    def __exit__(self, *exc):
        torch.set_num_threads(self.prev)


def _resolution(g: Generator, model, resolution):
    if resolution is not None:
        return resolution
    if isinstance(model, (Checkpoint, str, Path)):
        return int(_as_checkpoint(model).config["resolution"])
    return 256


def benchmark_many(models: dict, n_warmup: int = 2, n_runs: int = 10,
                   resolution: int | None = None) -> dict[str, BenchStats]:
    """Time single-image forward passes of several models, interleaving runs.

    Round-robin ordering spreads machine drift evenly across models.
    """
    if n_runs < 3:
        raise ValueError("n_runs must be >= 3")
    gens = {name: _generator(m) for name, m in models.items()}
    res = {name: _resolution(gens[name], models[name], resolution) for name in gens}
    inputs = {name: torch.zeros(1, 3, r, r) for name, r in res.items()}
    times = {name: [] for name in gens}
    with torch.no_grad(), _single_thread():
        for _ in range(n_warmup):
            for name, g in gens.items():
                g(inputs[name], inputs[name])
        for _ in range(n_runs):
            for name, g in gens.items():
                x = inputs[name]
                t0 = time.perf_counter()
                g(x, x)
                times[name].append(time.perf_counter() - t0)
    return {name: _stats(name, times[name], n_warmup, res[name]) for name in gens}


def benchmark_inference(model, n_warmup: int = 2, n_runs: int = 10,
                        resolution: int | None = None) -> BenchStats:
    name = _generator(model).spec.name
    return benchmark_many({name: model}, n_warmup, n_runs, resolution)[name]


# -- ablation ----------------------------------------------------------------------

@dataclass
class AblationVariant:
    name: str
    arch: str              # "student" (compact encoder) or "student-wide"
    n_decom: int
    distilled: bool
    config: TrainConfig


def default_variants(config: TrainConfig, sweep=(6, 8, 9, 10)) -> list[AblationVariant]:
    """Distillation arms plus the residual-count sweep.

    The not-distilled arm keeps teacher-width encoder branches and runs
    phase 1 only; the sweep varies the block count of that arm.
    """
    out = [
        AblationVariant("not-distilled", "student-wide", config.n_decom, False, config),
        AblationVariant("distilled", "student", config.n_decom, True, config),
    ]
    for n in sweep:
        out.append(AblationVariant(f"n_decom={n}", "student-wide", n, False,
                                   config.replace(n_decom=n)))
    return out


@dataclass
class AblationRow:
    variant: str
    arch: str
    n_decom: int
    distilled: bool
    d_makeup: float
    d_face: float
    inference_time_s: float
    inference_std_s: float


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def row(self, name) -> AblationRow:
        return next(r for r in self.rows if r.variant == name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "arch", "n_decom", "distilled", "d_makeup", "d_face",
                    "inference_time_s", "inference_std_s"])
        for r in self.rows:
            w.writerow([r.variant, r.arch, r.n_decom, int(r.distilled), repr(r.d_makeup),
                        repr(r.d_face), repr(r.inference_time_s), repr(r.inference_std_s)])
        return buf.getvalue()

    def to_text(self) -> str:
        names = [r.variant for r in self.rows]
        width = max(12, *(len(n) for n in names)) + 2
        lines = ["".ljust(20) + "".join(n.rjust(width) for n in names)]
        for label, key, fmt in (("D_makeup", "d_makeup", "{:.4f}"), ("D_face", "d_face", "{:.4f}"),
                                ("Inference Time(s)", "inference_time_s", "{:.4f}")):
            lines.append(label.ljust(20) + "".join(
                fmt.format(getattr(r, key)).rjust(width) for r in self.rows))
        return "\n".join(lines)


def ablation(variants: list[AblationVariant], teacher=None, train_data=None, test_data=None,
             n_warmup: int = 2, n_runs: int = 10, bench_resolution: int | None = None,
             extractor: str | None = None, out_dir=None) -> AblationTable:
    """Train every variant at its configured scale, then score and time it.

    ``teacher`` (checkpoint or path) is required by distilled variants; if
    absent one is trained in teacher mode from the first variant's config.
    """
    if not variants:
        raise ValueError("ablation needs at least one variant")
    base = variants[0].config
    train_data = train_data if train_data is not None else build_dataset(base, "train")
    test_data = test_data if test_data is not None else build_dataset(base, "test")
    out_dir = Path(out_dir) if out_dir else None
    if teacher is None and any(v.distilled for v in variants):
        teacher = train_phase1(base, train_data, out_dir and out_dir / "teacher", arch="teacher")
    models, reports = {}, {}
    for v in variants:
        vdir = out_dir / v.name if out_dir else None
        cfg = v.config.replace(n_decom=v.n_decom)
        ckpt = train_phase1(cfg, train_data, vdir, arch=v.arch)
        if v.distilled:
            ckpt = train_phase2(cfg, ckpt, teacher, train_data, vdir)
        models[v.name] = ckpt
        reports[v.name] = evaluate(ckpt, test_data, extractor or cfg.extractor)
    timing = benchmark_many(models, n_warmup, n_runs, bench_resolution)
    rows = [AblationRow(v.name, v.arch, v.n_decom, v.distilled,
                        reports[v.name].d_makeup_mean, reports[v.name].d_face_mean,
                        timing[v.name].mean_s, timing[v.name].std_s) for v in variants]
    return AblationTable(rows)
