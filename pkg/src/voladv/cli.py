"""Command-line entry point: ``voladv <subcommand> [flags]``.

Exit status is 0 on success, 1 when some samples failed (they are listed in
the report), 2 on usage or configuration errors.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import ATTACKS, AttackSpec, parse_fraction
from .checkpoint import load_model, save_model
from .config import load_experiment, parse_bands, phantom_spec, read_json, surrogates_and_targets
from .errors import ConfigError, VoladvError
from .harness import frequency_analysis, transfer_eval, whitebox_eval
from .io import load_manifest_pairs, read_volume, write_volume
from .models import ARCHITECTURES, build_model
from .phantom import generate_phantom
from .report import emit_report
from .training import DEFAULT_EPOCHS, DEFAULT_LR, train_model

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error[usage]: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _shape(text):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; expected e.g. 32,32,32") from None
    if len(dims) == 1:
        dims *= 3
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"shape needs 1 or 3 values, got {text!r}")
    return dims


def _fraction(text):
    try:
        return parse_fraction(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _attack_flags(p):
    g = p.add_argument_group("attack overrides")
    g.add_argument("--attack", action="append", choices=ATTACKS,
                   help="attack to run (repeatable); replaces the config's attack list")
    g.add_argument("--eps", type=_fraction, help="L-inf budget, e.g. 8/255")
    g.add_argument("--alpha", type=_fraction, help="step size (default eps/4)")
    g.add_argument("--steps", type=int)
    g.add_argument("--qmax", type=_fraction, help="VAFA quantization bound")
    g.add_argument("--patch", type=int, help="VAFA patch side")
    g.add_argument("--seed", type=int)


def _experiment_cmd(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--out", help="report directory (default: config 'out' or ./report)")
    _attack_flags(p)
    return p


def build_parser():
    parser = _Parser(prog="voladv", description="Volumetric adversarial-robustness experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="write phantom image/label pairs and a manifest")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0, help="seed of the first phantom")
    p.add_argument("--shape", type=_shape, default=(32, 32, 32))
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--noise", type=float)
    p.add_argument("--format", choices=("nifti", "raw"), default="nifti")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit a toy model and write a .vrm checkpoint")
    p.add_argument("--arch", choices=sorted(ARCHITECTURES), required=True)
    p.add_argument("--data", help="manifest JSON written by 'phantom' (default: fresh phantoms)")
    p.add_argument("--count", type=int, default=16, help="phantoms to generate without --data")
    p.add_argument("--shape", type=_shape, default=(32, 32, 32))
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--epochs", type=int, default=None, help="default depends on --arch")
    p.add_argument("--lr", type=float)
    p.add_argument("--loss", default="composite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("attack", help="attack one sample; write the adversarial volume and stats.json")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--normalize", action="store_true", help="min-max normalize the image first")
    p.add_argument("--out", required=True, help="output directory")
    _attack_flags(p)

    _experiment_cmd(sub, "eval", "white-box report")
    _experiment_cmd(sub, "transfer", "surrogate x target transfer report")
    p = _experiment_cmd(sub, "freq", "frequency-band report")
    p.add_argument("--bands", type=parse_bands, help="e.g. 0:8,0:16,0:32,16:48,16:96")
    return parser


def _override(spec, args):
    # raw fields keep unset defaults (alpha, VAFA step) relative to the new budget
    d = {k: getattr(spec, k) for k in AttackSpec.__dataclass_fields__}
    flags = {"epsilon": args.eps, "alpha": args.alpha, "steps": args.steps,
             "q_max": args.qmax, "patch": args.patch}
    d.update({k: v for k, v in flags.items() if v is not None})
    return AttackSpec.from_dict(d)


def _attacks(base, args):
    if args.attack:
        base = [AttackSpec(a) for a in args.attack]
    return [_override(a, args) for a in base]


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_phantom(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields = {"shape": list(args.shape), "num_classes": args.classes}
    if args.noise is not None:
        fields["noise"] = args.noise
    ext = ".nii" if args.format == "nifti" else ".raw"
    pairs = []
    for i in range(args.count):
        seed = args.seed + i
        spec = phantom_spec(fields, seed=seed)
        x, y = generate_phantom(spec)
        img, lbl = f"image_{i:03d}{ext}", f"label_{i:03d}{ext}"
        lineage = {"generator": "phantom", "seed": seed, "version": __version__}
        write_volume(x, out / img, labels=False, lineage=lineage)
        write_volume(y, out / lbl, labels=True, lineage=lineage)
        pairs.append({"image": img, "label": lbl, "seed": seed})
    _write_json(out / "manifest.json", {"pairs": pairs, "phantom": fields, "normalize": "none"})
    print(f"wrote {args.count} phantom pairs to {out}")
    return EXIT_OK


def cmd_train(args):
    if args.data:
        listing = read_json(args.data)
        pairs = listing["pairs"] if isinstance(listing, dict) else listing
        norm = listing.get("normalize", "minmax") if isinstance(listing, dict) else "minmax"
        data = load_manifest_pairs(pairs, Path(args.data).parent, norm)
    else:
        data = [generate_phantom(phantom_spec({"shape": list(args.shape), "num_classes": args.classes},
                                              seed=args.seed + i)) for i in range(args.count)]
    num_classes = max(args.classes, int(max(y.max() for _, y in data)) + 1)
    window = data[0][0].shape
    model = build_model(args.arch, num_classes, window, seed=args.seed)
    lr = args.lr if args.lr is not None else DEFAULT_LR[args.arch]
    epochs = args.epochs if args.epochs is not None else DEFAULT_EPOCHS[args.arch]
    model = train_model(model, data, epochs=epochs, learning_rate=lr, seed=args.seed, loss=args.loss)
    save_model(model, args.out)
    print(f"{args.arch}: final epoch loss {model.training_loss[-1]:.6f}; saved {args.out}")
    return EXIT_OK


def cmd_attack(args):
    model = load_model(args.model)
    x = read_volume(args.image, normalize=args.normalize)
    if np.issubdtype(np.asarray(x).dtype, np.integer):
        raise ConfigError(f"--image {args.image} holds integer labels, not intensities")
    if x.min() < 0 or x.max() > 1:
        raise ConfigError(f"--image {args.image} has values outside [0, 1]; pass --normalize")
    y = read_volume(args.label)
    names = args.attack or ["pgd"]
    if len(names) != 1:
        raise ConfigError("the attack subcommand runs exactly one --attack")
    spec = _override(AttackSpec(names[0]), args)
    seed = args.seed if args.seed is not None else 0
    outcome = spec.run(model, x, y, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src = Path(args.image)
    adv_path = out / ("adversarial" + (".nii" if src.suffix == ".nii" else ".raw"))
    write_volume(outcome.x_adv, adv_path, labels=False,
                 lineage={"attack": spec.to_dict(), "seed": seed, "source": src.name})
    stats = {"attack": spec.to_dict(), "seed": seed, "model": Path(args.model).name,
             "image": src.name, "trace": outcome.trace, **outcome.stats()}
    if outcome.quant_tables is not None:
        q = outcome.quant_tables
        stats["quant_tables"] = {"min": float(q.min()), "max": float(q.max()), "mean": float(q.mean())}
    _write_json(out / "stats.json", stats)
    print(f"{spec.label}: linf={outcome.linf:.6f} l2={outcome.l2:.6f}; wrote {adv_path}")
    return EXIT_OK


def _run_experiment(args, runner):
    cfg = read_json(args.config)
    exp = load_experiment(args.config)
    exp.attacks = _attacks(exp.attacks, args)
    if args.seed is not None:
        exp.seed = args.seed
    report = runner(exp)
    out = args.out or str(Path(args.config).parent / cfg.get("out", "report"))
    for p in emit_report(report, out):
        print(f"wrote {p}")
    if report["failures"]:
        print(f"{len(report['failures'])} sample attack(s) failed; see report.json", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_eval(args):
    return _run_experiment(args, whitebox_eval)


def cmd_transfer(args):
    def run(exp):
        s, t = surrogates_and_targets(exp)
        return transfer_eval(exp, s, t)
    return _run_experiment(args, run)


def cmd_freq(args):
    def run(exp):
        if args.bands:
            exp.bands = args.bands
        return frequency_analysis(exp, exp.bands)
    return _run_experiment(args, run)


COMMANDS = {"phantom": cmd_phantom, "train": cmd_train, "attack": cmd_attack,
            "eval": cmd_eval, "transfer": cmd_transfer, "freq": cmd_freq}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except VoladvError as exc:
        print(f"voladv {args.command}: error[{exc.kind}]: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
