"""Command-line entry point: ``manlab <subcommand> [flags]``.

Every subcommand accepts ``--config FILE`` with one ``key = value`` per line
(``#`` starts a comment; keys use the long flag names, dashes or
underscores). Flags given on the command line win over the file. Each run
writes its resolved configuration next to its outputs.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, attack, classifiers, datasets, defense, evaluation, generator
from .datasets import Dataset

log = logging.getLogger("manlab")

EPSILON_SWEEP = tuple(range(2, 21, 2))


class UsageError(Exception):
    pass


# -- config files -------------------------------------------------------------------

def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise UsageError(f"{source}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def format_config(values: dict) -> str:
    lines = [f"# manlab {__version__} resolved configuration"]
    for k in sorted(values):
        v = values[k]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(i) for i in v)
        lines.append(f"{k} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"


def read_config(path: str | os.PathLike) -> dict[str, str]:
    return parse_config(Path(path).read_text(), str(path))


def config_path_for(output: str | os.PathLike) -> Path:
    """Resolved config location for a file output: ``<output>.config``; for a directory, ``<dir>/config.txt``."""
    p = Path(output)
    return p / "config.txt" if p.is_dir() or not p.suffix else p.with_name(p.name + ".config")


# -- output bookkeeping -----------------------------------------------------------------

class Outputs:
    """Tracks files a run creates so a failed run can remove them."""

    def __init__(self):
        self.created: list[Path] = []
        self.dirs: list[Path] = []

    def file(self, path) -> Path:
        path = Path(path)
        if not path.parent.exists():
            self.dir(path.parent)
        if not path.exists():
            self.created.append(path)
        return path

    def dir(self, path) -> Path:
        path = Path(path)
        missing = []
        p = path
        while not p.exists():
            missing.append(p)
            p = p.parent
        path.mkdir(parents=True, exist_ok=True)
        self.dirs.extend(reversed(missing))
        return path

    def cleanup(self):
        for p in reversed(self.created):
            for q in (p, p.with_name(p.name + ".tmp")):
                if q.exists():
                    q.unlink()
        for d in reversed(self.dirs):
            try:
                d.rmdir()
            except OSError:
                pass


# -- shared helpers ---------------------------------------------------------------------

def _csv_list(value: str | None) -> list[str]:
    return [v.strip() for v in (value or "").split(",") if v.strip()]


def _floats(value) -> list[float]:
    try:
        return [float(v) for v in _csv_list(value)]
    except ValueError as err:
        raise UsageError(f"expected a comma-separated list of numbers, got {value!r}") from err


def _need_file(path: str, what: str) -> str:
    if not path:
        raise UsageError(f"missing {what}")
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def load_dataset(args) -> Dataset:
    if args.dataset == "synthetic":
        return datasets.make_synthetic(seed=args.data_seed)
    if not args.data_dir:
        raise UsageError(f"--data-dir is required for dataset {args.dataset}")
    return datasets.load(args.dataset, args.data_dir)


def _preset(args, ds: Dataset) -> str:
    if args.preset != "auto":
        return args.preset
    return "cifar" if ds.spec.height == 32 else "desk"


def _load_generator_with_meta(path: str):
    gen = generator.load(_need_file(path, "generator checkpoint"))
    meta_path = config_path_for(path)
    meta = read_config(meta_path) if meta_path.exists() else {}
    return gen, meta


def _write_config(out: Outputs, target, args, **extra):
    values = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    values.update(extra)
    out.file(config_path_for(target)).write_text(format_config(values))


# -- subcommands ----------------------------------------------------------------------

def cmd_train_classifier(args, out: Outputs):
    ds = load_dataset(args)
    model = classifiers.build(args.arch, ds.spec.num_classes, ds.spec.image_shape, seed=args.seed)
    ckpt = out.file(args.out)
    cfg = classifiers.PretrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        decay_epoch=args.decay_epoch, seed=args.seed, flip=args.flip, checkpoint=str(ckpt),
    )
    res = classifiers.pretrain(model, ds, cfg)
    curve = out.file(ckpt.with_name(ckpt.name + ".curve.csv"))
    with open(curve, "w") as fh:
        fh.write("epoch,train_loss,test_accuracy\n")
        fh.write(f"0,,{res.curve[0]!r}\n")
        for i, (loss, acc) in enumerate(zip(res.losses, res.curve[1:]), 1):
            fh.write(f"{i},{loss!r},{acc!r}\n")
    model.freeze()
    _write_config(out, ckpt, args, test_accuracy=res.accuracy, fingerprint=model.fingerprint())
    print(f"{args.arch}: test accuracy {res.accuracy:.4f} -> {ckpt}")


def _targets_flag(value: str, k: int) -> int | None:
    if value == "random":
        return None
    try:
        t = int(value)
    except ValueError:
        raise UsageError(f"--targets must be 'random' or a class index, got {value!r}") from None
    if not 0 <= t < k:
        raise UsageError(f"--targets {t} outside [0, {k})")
    return t


def cmd_train_man(args, out: Outputs):
    paths = _csv_list(args.attacked)
    if not paths:
        raise UsageError("--attacked needs at least one classifier checkpoint")
    victims = [classifiers.load(_need_file(p, "classifier checkpoint")) for p in paths]
    ds = load_dataset(args)
    target = _targets_flag(args.targets, ds.spec.num_classes)
    gen = generator.build(args.variant, ds.spec.num_classes, ds.spec.image_shape, _preset(args, ds), seed=args.seed)
    ckpt = out.file(args.out)
    log_path = out.file(ckpt.with_name(ckpt.name + ".log.csv"))
    cfg = attack.AttackTrainConfig(
        alpha=args.alpha, iterations=args.iters, learning_rate=args.lr, decay_at=args.decay_at,
        batch_size=args.batch_size, target=target, seed=args.seed, log_path=str(log_path), checkpoint=str(ckpt),
    )
    res = attack.train(gen, victims, ds.train, cfg)
    _write_config(
        out, ckpt, args,
        attacked_fingerprints=[v.fingerprint() for v in victims],
        fixed_target="" if target is None else target,
        preset_resolved=gen.preset.name,
    )
    last = res.reports[-1] if res.reports else None
    print(f"trained {args.variant} for {args.iters} iterations -> {ckpt}"
          + (f" (final L {last.loss:.4f})" if last else ""))


def _protocol(args, k):
    return evaluation.EvalProtocol(
        mode=args.mode, delta=args.delta, samples=args.samples, seed=args.seed,
        target=args.target, targets_per_sample=args.targets_per_sample, pixel_scale=args.pixel_scale,
    )


def cmd_attack_eval(args, out: Outputs):
    gens, ensembles = {}, {}
    for path in _csv_list(args.generator):
        gen, meta = _load_generator_with_meta(path)
        name = Path(path).stem
        gens[name] = gen
        ensembles[name] = set(_csv_list(meta.get("attacked_fingerprints")))
    if not gens:
        raise UsageError("--generator needs at least one checkpoint")
    victims = {Path(p).stem: classifiers.load(_need_file(p, "victim checkpoint")) for p in _csv_list(args.victims)}
    if not victims:
        raise UsageError("--victims needs at least one checkpoint")
    ds = load_dataset(args)
    if args.mode == "single_target" and args.target is None:
        raise UsageError("--mode single_target needs --target")
    report = evaluation.transfer_matrix(gens, victims, ds.test, _protocol(args, ds.spec.num_classes), ensembles)
    out_dir = out.dir(args.out_dir)
    report.to_csv(out.file(out_dir / "report.csv"))
    report.to_json(out.file(out_dir / "report.json"))
    _write_config(out, out_dir, args)
    for c in report.cells:
        print(f"{c.generator} -> {c.victim}{'*' if c.white_box else ''}: {c.rate:.4f} ({c.pairs} pairs)")


def cmd_adv_train(args, out: Outputs):
    model = classifiers.load(_need_file(args.classifier, "classifier checkpoint"), freeze=False)
    raw = classifiers.load(args.classifier)
    gens, targets = [], []
    for path in _csv_list(args.generators):
        gen, meta = _load_generator_with_meta(path)
        gens.append(gen)
        fixed = meta.get("fixed_target", "")
        targets.append(int(fixed) if fixed not in ("", None) else None)
    if not gens:
        raise UsageError("--generators needs at least one checkpoint")
    ds = load_dataset(args)
    ckpt = out.file(args.out)
    cfg = defense.AdvTrainConfig(
        generators=gens, iterations=args.iters, targets=targets, batch_size=args.batch_size,
        learning_rate=args.lr, delta=args.delta, pixel_scale=args.pixel_scale, seed=args.seed, checkpoint=str(ckpt),
    )
    defense.adv_finetune(model, ds.train, cfg)
    model.freeze()
    probes = [
        defense.mi_fgsm_probe(raw, ds.test, d, args.probe_count, args.seed, args.pixel_scale)
        for d in _floats(args.probe_deltas)
    ]
    for path in _csv_list(args.probe_generators):
        pg, _ = _load_generator_with_meta(path)
        probes += [
            defense.generator_probe(pg, ds.test, d, args.probe_count, args.seed, args.pixel_scale, Path(path).stem)
            for d in _floats(args.probe_deltas)
        ]
    stem = ckpt.with_name(ckpt.name)
    defense.write_robustness_csv(out.file(stem.with_name(stem.name + ".robustness.csv")), defense.robustness_rows(model, probes))
    defense.write_robustness_csv(out.file(stem.with_name(stem.name + ".robustness-raw.csv")), defense.robustness_rows(raw, probes))
    _write_config(out, ckpt, args, fingerprint=model.fingerprint(), source_fingerprint=raw.fingerprint(),
                  clean_accuracy=classifiers.accuracy(model, ds.test))
    print(f"adversarially finetuned {args.classifier} for {args.iters} iterations -> {ckpt}")


def cmd_ablate_alpha(args, out: Outputs):
    paths = _csv_list(args.attacked)
    if not paths:
        raise UsageError("--attacked needs at least one classifier checkpoint")
    victims = [classifiers.load(_need_file(p, "classifier checkpoint")) for p in paths]
    alphas = _floats(args.alphas)
    if not alphas:
        raise UsageError("--alphas needs at least one value")
    ds = load_dataset(args)
    out_dir = out.dir(args.out_dir)
    proto = _protocol(args, ds.spec.num_classes)
    csv_path = out.file(out_dir / "ablate_alpha.csv")
    rows = []
    for a in alphas:
        gen = generator.build(args.variant, ds.spec.num_classes, ds.spec.image_shape, _preset(args, ds), seed=args.seed)
        cfg = attack.AttackTrainConfig(alpha=a, iterations=args.iters, learning_rate=args.lr,
                                       batch_size=args.batch_size, seed=args.seed)
        res = attack.train(gen, victims, ds.train, cfg)
        tail = res.reports[-min(100, len(res.reports)):] if res.reports else []
        pert = float(np.mean([r.mean_pert_norm for r in tail])) if tail else float("nan")
        rates = [evaluation.success_rate(gen, v, ds.test, proto).rate for v in victims]
        rows.append((a, float(np.mean(rates)), pert))
        print(f"alpha {a:g}: success {rows[-1][1]:.4f}, train perturbation norm {pert:.4f}")
    with open(csv_path, "w") as fh:
        fh.write("alpha,success_rate,mean_pert_norm\n")
        for a, r, p in rows:
            fh.write(f"{a!r},{r!r},{p!r}\n")
    _write_config(out, out_dir, args)


def cmd_ablate_epsilon(args, out: Outputs):
    gen, _ = _load_generator_with_meta(args.generator)
    victim = classifiers.load(_need_file(args.victim, "victim checkpoint"))
    ds = load_dataset(args)
    csv_path = out.file(args.out)
    rows = []
    for d in EPSILON_SWEEP:
        args_d = argparse.Namespace(**{**vars(args), "delta": float(d)})
        res = evaluation.success_rate(gen, victim, ds.test, _protocol(args_d, ds.spec.num_classes))
        rows.append((d, res))
    with open(csv_path, "w") as fh:
        fh.write("delta,epsilon,success_rate,pairs,scaled_up\n")
        for d, r in rows:
            fh.write(f"{d},{r.epsilon!r},{r.rate!r},{r.pairs},{r.scaled_up}\n")
    _write_config(out, csv_path, args)
    print(f"wrote {len(rows)} rows -> {csv_path}")


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 from a (C, H, W) float image in [0, 1]; one channel is replicated to RGB."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected a (1|3, H, W) image, got {img.shape}")
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    pix = np.rint(255 * np.clip(img, 0, 1)).astype(np.uint8).transpose(1, 2, 0)
    h, w = pix.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_ppm(path) -> np.ndarray:
    """(H, W, 3) uint8 from a binary P6 file with a plain header."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 file")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def difference_image(x, x_hat, gain: float = 5.0) -> np.ndarray:
    """Perturbation shown as 0.5 + gain * (x_hat - x), clipped to [0, 1]."""
    return np.clip(0.5 + gain * (np.asarray(x_hat, np.float64) - x), 0, 1)


def cmd_dump_samples(args, out: Outputs):
    gen, _ = _load_generator_with_meta(args.generator)
    ds = load_dataset(args)
    k = ds.spec.num_classes
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    targets = [int(t) for t in _csv_list(args.targets)] if args.targets else list(range(k))
    if not targets or any(not 0 <= t < k for t in targets):
        raise UsageError(f"--targets must list class indices in [0, {k})")
    idx = np.sort(np.random.default_rng(args.seed).permutation(len(ds.test))[: args.count])
    x, y = ds.test.images[idx], ds.test.labels[idx]
    eps = attack.AttackBudget(args.delta, ds.spec.dim, args.pixel_scale).input_epsilon
    out_dir = out.dir(args.out_dir)
    written = 0
    for i, (xi, yi) in enumerate(zip(x, y)):
        write_ppm(out.file(out_dir / f"s{i:03d}_y{yi}_orig.ppm"), xi)
        written += 1
        x_star = generator.generate(gen, np.repeat(xi[None], len(targets), 0), np.array(targets))
        x_hat = attack.scale_perturbation(np.repeat(xi[None], len(targets), 0), x_star, eps).images
        for t, xh in zip(targets, x_hat):
            # adversarial sample on the left, amplified difference (x5, offset 0.5) on the right
            panel = np.concatenate([xh, difference_image(xi, xh)], axis=2)
            write_ppm(out.file(out_dir / f"s{i:03d}_y{yi}_t{t}_adv+diffx5.ppm"), panel)
            written += 1
    _write_config(out, out_dir, args, files_written=written)
    print(f"wrote {written} images -> {out_dir}")


# -- parser ---------------------------------------------------------------------------

def _data_flags(p):
    p.add_argument("--dataset", choices=["mnist", "cifar10", "synthetic"], default="mnist")
    p.add_argument("--data-dir", help="directory holding the IDX or CIFAR binary files")
    p.add_argument("--data-seed", type=int, default=0, help="seed of the synthetic dataset")


def _protocol_flags(p, delta=True):
    p.add_argument("--mode", choices=list(evaluation.MODES), default="multi_all")
    if delta:
        p.add_argument("--delta", type=float, default=10.0, help="per-pixel budget; epsilon = delta * sqrt(N)")
    p.add_argument("--pixel-scale", type=float, default=1.0,
                   help="units of delta: 1 for model inputs in [0, 1], 255 for 8-bit pixel levels")
    p.add_argument("--samples", type=int, default=None, help="number of test images (default: all)")
    p.add_argument("--target", type=int, default=None, help="target class for single_target mode")
    p.add_argument("--targets-per-sample", type=int, default=10, help="targets per image in multi_random mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manlab", description="Multi-target adversarial network lab.")
    parser.add_argument("--version", action="version", version=f"manlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value file; command-line flags take precedence")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = add("train-classifier", cmd_train_classifier, "Pretrain a classifier to attack.")
    _data_flags(p)
    p.add_argument("--arch", default="vggS", help="vggS or resS-<n>")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--decay-epoch", type=int, default=None, help="divide the learning rate by 10 from this epoch")
    p.add_argument("--flip", action="store_true", help="random horizontal flips")
    p.add_argument("--out", required=True, help="output checkpoint")

    p = add("train-man", cmd_train_man, "Train a generator against frozen classifiers.")
    _data_flags(p)
    p.add_argument("--variant", choices=["manc", "manr", "concat", "recalibrate"], default="manr")
    p.add_argument("--targets", default="random", help="'random' or a fixed target class")
    p.add_argument("--attacked", required=True, help="comma-separated classifier checkpoints")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--decay-at", type=int, default=None, help="divide the learning rate by 10 from this iteration")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--preset", choices=["auto", *generator.PRESETS], default="auto")
    p.add_argument("--out", required=True, help="output checkpoint")

    p = add("attack-eval", cmd_attack_eval, "Targeted success of generators against victims.")
    _data_flags(p)
    _protocol_flags(p)
    p.add_argument("--generator", required=True, help="comma-separated generator checkpoints")
    p.add_argument("--victims", required=True, help="comma-separated classifier checkpoints")
    p.add_argument("--out-dir", default="eval", help="directory for report.csv and report.json")

    p = add("adv-train", cmd_adv_train, "Adversarially finetune a classifier and report robustness.")
    _data_flags(p)
    p.add_argument("--classifier", required=True)
    p.add_argument("--generators", required=True, help="comma-separated source generator checkpoints")
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--delta", type=float, default=10.0)
    p.add_argument("--pixel-scale", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64, help="clean half; each step trains on twice as many images")
    p.add_argument("--probe-deltas", default="8,12,16")
    p.add_argument("--probe-count", type=int, default=500)
    p.add_argument("--probe-generators", default="", help="held-out generators trained against the raw classifier")
    p.add_argument("--out", required=True, help="output checkpoint")

    p = add("ablate-alpha", cmd_ablate_alpha, "Success rate as a function of the loss weight alpha.")
    _data_flags(p)
    _protocol_flags(p)
    p.add_argument("--variant", choices=["manc", "manr", "concat", "recalibrate"], default="manr")
    p.add_argument("--attacked", required=True)
    p.add_argument("--alphas", required=True, help="comma-separated alpha values")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--preset", choices=["auto", *generator.PRESETS], default="auto")
    p.add_argument("--out-dir", required=True)

    p = add("ablate-epsilon", cmd_ablate_epsilon, "Success rate for delta = 2, 4, ..., 20.")
    _data_flags(p)
    _protocol_flags(p, delta=False)
    p.add_argument("--generator", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--out", required=True, help="output CSV")

    p = add("dump-samples", cmd_dump_samples, "Write original and adversarial images as PPM files.")
    _data_flags(p)
    p.add_argument("--generator", required=True)
    p.add_argument("--count", type=int, default=4, help="number of test images B")
    p.add_argument("--targets", default="", help="comma-separated target classes (default: all K)")
    p.add_argument("--delta", type=float, default=10.0)
    p.add_argument("--pixel-scale", type=float, default=1.0)
    p.add_argument("--out-dir", required=True)
    return parser


def _config_arg(argv: list[str]) -> tuple[str | None, str | None]:
    """The subcommand and the ``--config`` value in ``argv``, if any."""
    command = next((a for a in argv if not a.startswith("-")), None)
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return command, argv[i + 1]
        if a.startswith("--config="):
            return command, a.split("=", 1)[1]
    return command, None


def _apply_config(parser: argparse.ArgumentParser, command: str, path: str) -> None:
    """Install config-file values as subcommand defaults so explicit flags still win."""
    values = read_config(path)
    sub = parser._subparsers._group_actions[0].choices[command]  # noqa: SLF001
    known = {a.dest: a for a in sub._actions}  # noqa: SLF001
    defaults = {}
    for key, raw in values.items():
        if key not in known or key in ("config", "help", "func"):
            raise UsageError(f"{path}: unknown key {key!r} for {command}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None and raw != "":
            try:
                defaults[key] = action.type(raw)
            except ValueError as err:
                raise UsageError(f"{path}: bad value for {key}: {raw!r}") from err
        else:
            defaults[key] = raw or None
        if action.choices is not None and defaults[key] not in action.choices:
            raise UsageError(f"{path}: {key} must be one of {list(action.choices)}")
        if defaults[key] is not None:
            action.required = False
    sub.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command, config = _config_arg(argv)
    try:
        if config is not None and command in parser._subparsers._group_actions[0].choices:  # noqa: SLF001
            _apply_config(parser, command, config)
        args = parser.parse_args(argv)
    except (UsageError, OSError) as err:
        print(f"manlab {command}: usage error: {err}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 after --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = Outputs()
    try:
        args.func(args, out)
    except UsageError as err:
        out.cleanup()
        print(f"manlab {args.command}: usage error: {err}", file=sys.stderr)
        return 2
    except (Exception, KeyboardInterrupt) as err:  # noqa: BLE001
        out.cleanup()
        print(f"manlab {args.command}: error: {err}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
