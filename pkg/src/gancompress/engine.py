"""Two-phase training, checkpoints and inference.

Phase 1 trains a generator from scratch with the four image losses.
Phase 2 continues the student with the encoder feature loss against a
frozen teacher. A teacher is produced by running phase 1 with
``arch="teacher"``.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.utils.flop_counter import FlopCounterMode

from .config import ConfigError, TrainConfig
from .data import FaceDataset, PairBatch, iter_pairs, load_mt, synth_faces
from .distill import AdapterSet, default_tap_points, feature_loss, select_taps
from .generator import Generator
from .losses import (LossBreakdown, PatchDiscriminator, adversarial_loss, cycle_loss,
                     make_extractor, makeup_loss, perceptual_loss, total_loss)
from .netspec import GeneratorSpec, spec_for_arch, spec_from_dict, spec_to_dict

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "phase", "adv", "cyc", "per", "makeup", "feat", "total", "lr")


class TrainingError(RuntimeError):
    pass


def lr_schedule(epoch: int, phase_epochs: int, lr0: float, decay_start: int) -> float:
    """Constant ``lr0`` up to ``decay_start``, then linear decay reaching 0 at ``phase_epochs``."""
    if not 0 <= epoch < phase_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {phase_epochs})")
    if epoch < decay_start or phase_epochs == decay_start:
        return lr0
    return lr0 * (phase_epochs - epoch) / (phase_epochs - decay_start)


def state_hash(module_or_state) -> str:
    state = module_or_state.state_dict() if hasattr(module_or_state, "state_dict") else module_or_state
    h = hashlib.sha256()
    for key in sorted(state):
        h.update(key.encode())
        h.update(state[key].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    arch: str
    spec: dict
    generator: dict
    discriminators: dict
    adapters: dict | None
    optimizers: dict
    epoch: int
    phase: int
    config: dict
    config_hash: str
    seed: int
    history: list[dict] = field(default_factory=list)
    teacher_hash: str | None = None

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.__dict__, path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        data = torch.load(path, map_location="cpu", weights_only=False)
        return cls(**data)

    @property
    def generator_spec(self) -> GeneratorSpec:
        return spec_from_dict(self.spec)

    def build_generator(self) -> Generator:
        g = Generator(self.generator_spec)
        g.load_state_dict(self.generator)
        return g.eval()


def _as_checkpoint(ckpt) -> Checkpoint:
    return ckpt if isinstance(ckpt, Checkpoint) else Checkpoint.load(ckpt)


def build_dataset(config: TrainConfig, split: str = "train") -> FaceDataset:
    ds = config.dataset
    if ds.kind == "synth":
        # synthetic test split: a disjoint seed stream
        seed = ds.seed if split == "train" else ds.seed + 10_007
        return synth_faces(ds.n, config.resolution, seed)
    from .data import TEST_FRACTION, data_root
    root = data_root(ds.root)
    if root is None:
        raise ConfigError("dataset.root", "MT dataset root not set")
    frac = ds.test_fraction if ds.test_fraction is not None else TEST_FRACTION
    return load_mt(root, split, config.resolution, frac)


def check_batch_size(config: TrainConfig, dataset: FaceDataset):
    if config.batch_size > dataset.n_pairs:
        raise ConfigError("batch_size",
                          f"{config.batch_size} exceeds the {dataset.n_pairs} pairs in the dataset")


def _tensors(batch: PairBatch):
    src = torch.from_numpy(np.ascontiguousarray(batch.src))
    ref = torch.from_numpy(np.ascontiguousarray(batch.ref))
    sm = None if batch.src_masks is None else torch.from_numpy(batch.src_masks)
    rm = None if batch.ref_masks is None else torch.from_numpy(batch.ref_masks)
    return src, ref, sm, rm


class Trainer:
    """Owns all mutable training state for one phase of one run."""

    def __init__(self, config: TrainConfig, phase: int, arch: str,
                 dataset: FaceDataset | None = None, teacher: Generator | None = None,
                 init: Checkpoint | None = None, out_dir=None):
        self.config = config.validate()
        self.phase = phase
        self.arch = arch
        self.dataset = dataset if dataset is not None else build_dataset(config)
        check_batch_size(config, self.dataset)
        self.out_dir = Path(out_dir) if out_dir else None
        self.history: list[dict] = []
        self.start_epoch = 0

        torch.manual_seed(config.seed * 10 + phase)
        spec = spec_for_arch(arch, config.n_decom) if init is None else init.generator_spec
        self.generator = Generator(spec)
        self.d_makeup = PatchDiscriminator(base=config.disc_base)
        self.d_plain = PatchDiscriminator(base=config.disc_base)
        self.extractor = make_extractor(config.extractor)
        self.teacher = teacher
        self.adapters = None
        self.taps = None
        if phase == 2:
            if teacher is None:
                raise TrainingError("phase 2 needs a teacher generator")
            self.taps = default_tap_points(teacher.spec, spec, config.n_taps)
            gen = torch.Generator().manual_seed(config.seed * 10 + 7)
            self.adapters = AdapterSet(self.taps, generator=gen)
            self.teacher.eval()
            for p in self.teacher.parameters():
                p.requires_grad_(False)
            self.teacher_hash = state_hash(self.teacher)

        if init is not None:
            self.generator.load_state_dict(init.generator)
            self.d_makeup.load_state_dict(init.discriminators["makeup"])
            self.d_plain.load_state_dict(init.discriminators["plain"])

        same_phase = init is not None and init.phase == phase
        carry = init is not None and (same_phase or not config.reset_optimizer)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=config.lr0,
                                      betas=config.betas)
        self.opt_d = torch.optim.Adam(
            list(self.d_makeup.parameters()) + list(self.d_plain.parameters()),
            lr=config.lr0, betas=config.betas)
        if carry:
            if "g" in init.optimizers:
                self.opt_g.load_state_dict(init.optimizers["g"])
            self.opt_d.load_state_dict(init.optimizers["d"])
        if self.adapters is not None:
            self.opt_g.add_param_group({"params": list(self.adapters.parameters())})
            if same_phase:
                self.adapters.load_state_dict(init.adapters)
                self.opt_g.load_state_dict(init.optimizers["g_full"])
        if init is not None and init.phase == phase:
            # resume within the same phase
            self.start_epoch = init.epoch + 1
            self.history = list(init.history)

    @property
    def phase_epochs(self) -> int:
        return self.config.phase1_epochs if self.phase == 1 else self.config.phase2_epochs

    def _set_lr(self, lr):
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr

    def step(self, batch: PairBatch) -> dict:
        src, ref, src_masks, ref_masks = _tensors(batch)
        g, d_mk, d_nm = self.generator, self.d_makeup, self.d_plain

        # discriminators: real makeup vs transferred, real plain vs makeup-removed
        with torch.no_grad():
            fake_mk, fake_nm = g(src, ref)
        d_loss = adversarial_loss([d_mk(ref), d_nm(src)], [d_mk(fake_mk), d_nm(fake_nm)],
                                  "discriminator")
        self.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        self.opt_d.step()

        for p in (*d_mk.parameters(), *d_nm.parameters()):
            p.requires_grad_(False)
        try:
            if self.phase == 2:
                (fake_mk, fake_nm), feats = g(src, ref, with_features=True)
            else:
                fake_mk, fake_nm = g(src, ref)
            if not (torch.isfinite(fake_mk).all() and torch.isfinite(fake_nm).all()):
                raise TrainingError(f"non-finite generator output in phase {self.phase}")
            adv = adversarial_loss(None, [d_mk(fake_mk), d_nm(fake_nm)], "generator")
            # swap roles: plain(ref) wearing makeup(src) ~ ref, plain(src) ~ src
            rec_ref, rec_src = g(fake_nm, fake_mk)
            cyc = cycle_loss(rec_src, src, rec_ref, ref)
            per = (perceptual_loss(fake_mk, src, self.extractor)
                   + perceptual_loss(fake_nm, ref, self.extractor))
            mk = makeup_loss(fake_mk, ref, src_masks, ref_masks, skip_empty=True)
            feat = 0.0
            if self.phase == 2:
                with torch.no_grad():
                    _, t_feats = self.teacher.encode(src, ref, with_features=True)
                feat = feature_loss(select_taps(feats, self.taps), self.adapters,
                                    select_taps(t_feats, self.taps))
            try:
                bd = total_loss(adv, cyc, per, mk, self.config.weights, feat)
            except ValueError:
                parts = LossBreakdown(adv, cyc, per, mk, feat, 0.0).as_floats()
                detail = " ".join(f"{k}={v}" for k, v in parts.items() if k != "total")
                raise TrainingError(f"non-finite loss in phase {self.phase}: {detail}") from None
            self.opt_g.zero_grad(set_to_none=True)
            bd.total.backward()
            self.opt_g.step()
        finally:
            for p in (*d_mk.parameters(), *d_nm.parameters()):
                p.requires_grad_(True)
        row = bd.as_floats()
        row["d"] = float(d_loss.detach())
        return row

    def run_epoch(self, epoch: int) -> dict:
        lr = lr_schedule(epoch, self.phase_epochs, self.config.lr0, self.config.decay_start)
        self._set_lr(lr)
        self.generator.train()
        rows = []
        for batch in iter_pairs(self.dataset, self.config.batch_size, self.config.seed, epoch,
                                self.phase, self.config.augment):
            rows.append(self.step(batch))
        summary = {"epoch": epoch + 1, "phase": self.phase}
        for key in ("adv", "cyc", "per", "makeup", "feat", "total", "d"):
            summary[key] = float(np.mean([r[key] for r in rows]))
        summary["lr"] = lr
        return summary

    def fit(self, epochs: int | None = None, log_path=None) -> Checkpoint:
        """Train up to ``epochs`` (default: the whole phase) and return a checkpoint."""
        end = self.phase_epochs if epochs is None else min(self.phase_epochs, epochs)
        epoch = self.start_epoch - 1
        for epoch in range(self.start_epoch, end):
            t0 = time.perf_counter()
            summary = self.run_epoch(epoch)
            self.history.append(summary)
            if log_path is not None:
                append_metrics(log_path, summary)
            log.info("phase %d epoch %d/%d total=%.4f cyc=%.4f makeup=%.4f feat=%.4f (%.1fs)",
                     self.phase, epoch + 1, self.phase_epochs, summary["total"],
                     summary["cyc"], summary["makeup"], summary["feat"],
                     time.perf_counter() - t0)
        if self.phase == 2 and state_hash(self.teacher) != self.teacher_hash:
            raise TrainingError("teacher weights changed during distillation")
        return self.checkpoint(epoch)

    def checkpoint(self, epoch: int) -> Checkpoint:
        optimizers = {"d": self.opt_d.state_dict()}
        if self.adapters is None:
            optimizers["g"] = self.opt_g.state_dict()
        else:
            optimizers["g_full"] = self.opt_g.state_dict()
        return Checkpoint(
            arch=self.arch, spec=spec_to_dict(self.generator.spec),
            generator=self.generator.state_dict(),
            discriminators={"makeup": self.d_makeup.state_dict(),
                            "plain": self.d_plain.state_dict()},
            adapters=None if self.adapters is None else self.adapters.state_dict(),
            optimizers=optimizers, epoch=epoch, phase=self.phase,
            config=self.config.to_dict(), config_hash=self.config.hash(),
            seed=self.config.seed, history=list(self.history),
            teacher_hash=getattr(self, "teacher_hash", None))


def append_metrics(path, row: dict):
    path = Path(path)
    new = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(METRIC_FIELDS)
        writer.writerow([row["epoch"], row["phase"]]
                        + [repr(float(row[k])) for k in METRIC_FIELDS[2:]])


def train_phase1(config: TrainConfig, dataset: FaceDataset | None = None, out_dir=None,
                 arch: str = "student", resume=None) -> Checkpoint:
    """Train ``arch`` from scratch (teacher mode when ``arch == "teacher"``)."""
    init = None if resume is None else _as_checkpoint(resume)
    trainer = Trainer(config, 1, arch, dataset, init=init)
    log_path = Path(out_dir) / "metrics.csv" if out_dir else None
    ckpt = trainer.fit(log_path=log_path)
    if out_dir:
        name = "teacher.pt" if arch == "teacher" else "phase1.pt"
        ckpt.save(Path(out_dir) / name)
    return ckpt


def train_phase2(config: TrainConfig, student_ckpt, teacher_ckpt,
                 dataset: FaceDataset | None = None, out_dir=None) -> Checkpoint:
    student = _as_checkpoint(student_ckpt)
    teacher = _as_checkpoint(teacher_ckpt).build_generator()
    trainer = Trainer(config, 2, student.arch, dataset, teacher=teacher, init=student)
    log_path = Path(out_dir) / "metrics.csv" if out_dir else None
    ckpt = trainer.fit(log_path=log_path)
    if out_dir:
        ckpt.save(Path(out_dir) / "phase2.pt")
    return ckpt


def infer(checkpoint, src_image, ref_image):
    """Run the generator once; returns ``(makeup, demakeup)`` arrays like the inputs."""
    ckpt = checkpoint
    g = ckpt if isinstance(ckpt, Generator) else _as_checkpoint(ckpt).build_generator()
    g.eval()
    src = torch.as_tensor(np.asarray(src_image, dtype=np.float32))
    ref = torch.as_tensor(np.asarray(ref_image, dtype=np.float32))
    single = src.dim() == 3
    if single:
        src, ref = src[None], ref[None]
    if src.shape != ref.shape:
        raise ValueError(f"source {tuple(src.shape)} and reference {tuple(ref.shape)} differ")
    with torch.no_grad():
        mk, nm = g(src, ref)
    mk, nm = mk.numpy(), nm.numpy()
    return (mk[0], nm[0]) if single else (mk, nm)


def executed_macs(generator: Generator, resolution: int) -> int:
    """MACs torch actually runs for one (src, ref) forward pass.

    Transposed convolutions are charged at their input size here, as they
    execute; the analytic cost model charges them at output size.
    """
    x = torch.zeros(1, 3, resolution, resolution)
    generator.eval()
    with torch.no_grad(), FlopCounterMode(display=False) as counter:
        generator(x, x)
    return counter.get_total_flops() // 2
