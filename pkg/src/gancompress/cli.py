"""``gancompress`` command line.

Every command writes its artifacts plus one ``manifest_<command>.json``
(sha256 of each artifact) into ``--out``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path


from .config import ConfigError, TrainConfig, apply_overrides, load_config
from .netspec import SpecError, TensorShape, format_layers, spec_for_arch

log = logging.getLogger("gancompress")

ARCHES = ("teacher", "student", "student-wide")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, args, config: TrainConfig | None,
                   artifacts: list[Path], started: float) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config_path": getattr(args, "config", None),
        "config_hash": config.hash() if config else None,
        "seed": config.seed if config else getattr(args, "seed", None),
        "output_dir": str(out),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "artifacts": {str(p.relative_to(out)): _sha256(p) for p in artifacts if p.exists()},
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def verify_manifest(path) -> bool:
    path = Path(path)
    data = json.loads(path.read_text())
    return all(_sha256(path.parent / rel) == digest for rel, digest in data["artifacts"].items())


def _config(args) -> TrainConfig:
    base = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    return apply_overrides(base, seed=getattr(args, "seed", None),
                           n_decom=getattr(args, "n_decom", None))


# -- commands ------------------------------------------------------------------

def cmd_inspect(args):
    from .costmodel import network_cost

    if args.n_decom is not None and args.n_decom < 1:
        raise ConfigError("n_decom", "must be >= 1")
    spec = spec_for_arch(args.arch, args.n_decom or 9)
    report = network_cost(spec, TensorShape.parse(args.input))
    print(format_layers(spec))
    print()
    print(report.to_text())
    print()
    print(report.to_csv(), end="")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"cost_{spec.name}.csv"
    csv_path.write_text(report.to_csv())
    return [csv_path], None


def cmd_train(args):
    from .engine import Checkpoint, build_dataset, train_phase1, train_phase2

    config = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.csv"
    dataset = build_dataset(config, "train")
    artifacts = [metrics]
    if args.phase in ("1", "both"):
        if metrics.exists():
            metrics.unlink()
        train_phase1(config, dataset, out, arch=args.arch)
        artifacts.append(out / ("teacher.pt" if args.arch == "teacher" else "phase1.pt"))
    if args.phase in ("2", "both"):
        if args.arch == "teacher":
            raise ConfigError("arch", "the teacher is not distilled; use --phase 1")
        teacher = args.teacher or config.teacher_checkpoint
        if not teacher:
            raise ConfigError("teacher_checkpoint",
                              "phase 2 needs a teacher (train one with --arch teacher --phase 1)")
        student = args.checkpoint or out / "phase1.pt"
        train_phase2(config, Checkpoint.load(student), teacher, dataset, out)
        artifacts.append(out / "phase2.pt")
    print(metrics.read_text(), end="")
    return artifacts, config


def cmd_eval(args):
    from .engine import Checkpoint, build_dataset
    from .metrics import evaluate

    ckpt = Checkpoint.load(args.checkpoint)
    config = _config(args) if args.config else apply_overrides(
        _config_from_ckpt(ckpt), seed=args.seed)
    report = evaluate(ckpt, build_dataset(config, "test"), config.extractor)
    print(report.to_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "eval.csv"
    path.write_text(report.to_csv())
    return [path], config


def _config_from_ckpt(ckpt):
    from .config import config_from_dict

    return config_from_dict(ckpt.config)


def cmd_bench(args):
    from .generator import Generator
    from .metrics import benchmark_many

    models = {}
    for path in args.checkpoint or []:
        models[Path(path).stem] = path
    if not models:
        import torch

        torch.manual_seed(args.seed or 0)
        for arch in args.arch_list or ["teacher", "student"]:
            models[arch] = Generator(spec_for_arch(arch, args.n_decom or 9))
    res = TensorShape.parse(args.input).height if args.input else None
    stats = benchmark_many(models, args.warmup, args.runs, res)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench.csv"
    lines = ["model,mean_s,std_s,median_s,min_s,n_runs,resolution,hardware"]
    for s in stats.values():
        print(s.to_text())
        lines.append(f"{s.name},{s.mean_s!r},{s.std_s!r},{s.median_s!r},{s.min_s!r},"
                     f"{s.n_runs},{s.resolution},\"{s.hardware}\"")
    path.write_text("\n".join(lines) + "\n")
    return [path], None


def cmd_ablate(args):
    from .metrics import ablation, default_variants

    config = _config(args)
    res = TensorShape.parse(args.input).height if args.input else None
    table = ablation(default_variants(config), teacher=args.teacher or config.teacher_checkpoint,
                     n_warmup=args.warmup, n_runs=args.runs, bench_resolution=res,
                     out_dir=Path(args.out))
    print(table.to_text())
    path = Path(args.out) / "ablation.csv"
    path.write_text(table.to_csv())
    return [path], config


def cmd_synth_data(args):
    from .data import export_mt, synth_faces

    if args.size % 4:
        raise ConfigError("size", "must be a multiple of 4")
    ds = synth_faces(args.n, args.size, args.seed or 0)
    out = Path(args.out)
    export_mt(ds, out)
    files = sorted(p for p in out.rglob("*.png"))
    print(f"wrote {len(ds)} images to {out}")
    return files, None


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gancompress",
        description="Compress encoder-resnet-decoder makeup generators: cost model, "
                    "two-phase distillation training, evaluation and ablations.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="run configuration file (YAML)")
        if seed:
            p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--out", help="output directory (default: runs/<command>)")

    p = sub.add_parser("inspect", help="print the layer listing and per-layer cost table")
    p.add_argument("--arch", choices=ARCHES, default="teacher", help="architecture")
    p.add_argument("--n-decom", type=int, help="separated residual blocks (student archs)")
    p.add_argument("--input", default="3x256x256", help="input shape CxHxW")
    common(p, config=False, seed=False)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("train", help="train a generator (phase 1, phase 2 or both)")
    p.add_argument("--phase", choices=("1", "2", "both"), default="both", help="training phase")
    p.add_argument("--arch", choices=ARCHES, default="student", help="generator to train")
    p.add_argument("--n-decom", type=int, help="separated residual blocks (overrides config)")
    p.add_argument("--teacher", help="teacher checkpoint for phase 2 (overrides config)")
    p.add_argument("--checkpoint", help="phase-1 student checkpoint for --phase 2 "
                                        "(default: <out>/phase1.pt)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True, help="generator checkpoint")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time single-image inference")
    p.add_argument("--checkpoint", action="append", help="checkpoint to time (repeatable)")
    p.add_argument("--arch", dest="arch_list", action="append", choices=ARCHES,
                   help="untrained architecture to time when no checkpoint is given (repeatable)")
    p.add_argument("--n-decom", type=int, help="separated residual blocks for --arch students")
    p.add_argument("--input", help="input shape CxHxW (default: checkpoint resolution or 256)")
    p.add_argument("--runs", type=int, default=10, help="timed runs (>= 3)")
    p.add_argument("--warmup", type=int, default=2, help="untimed warmup runs")
    common(p, config=False)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="distillation and residual-count ablations")
    p.add_argument("--n-decom", type=int, help="block count of the distillation arms")
    p.add_argument("--teacher", help="teacher checkpoint (trained if absent)")
    p.add_argument("--input", help="timing input shape CxHxW (default: config resolution)")
    p.add_argument("--runs", type=int, default=10, help="timed runs per variant (>= 3)")
    p.add_argument("--warmup", type=int, default=2, help="untimed warmup runs")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth-data", help="write a synthetic face set in the MT layout")
    p.add_argument("--n", type=int, default=64, help="number of images")
    p.add_argument("--size", type=int, default=64, help="image size in pixels")
    common(p, config=False)
    p.set_defaults(func=cmd_synth_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    if command == "train":
        command = f"train-phase{args.phase}" if args.phase != "both" else "train-both"
    args.out = args.out or f"runs/{args.command}"
    started = time.time()
    try:
        artifacts, config = args.func(args)
    except (ConfigError, SpecError) as exc:
        print(f"gancompress: invalid config: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"gancompress: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    write_manifest(Path(args.out), command, args, config, artifacts, started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
