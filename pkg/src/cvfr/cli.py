"""Command-line entry point: ``cvfr <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/checkpoint error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import shutil
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt_io
from .attractors import load_patterns, plant
from .datasets import LabeledDataset, gen_letters, load_csv, load_mnist_idx, save_csv
from .dynamics import IntegrationConfig, integrate_stochastic, write_trajectory_csv
from .errors import CVFRError, DataError, DimensionError
from .evaluation import default_tau, evaluate, robustness_sweep, trajectory_ensemble
from .rng import derive_seed
from .spectral import assemble, new_spectral_coupling
from .stability import stability_report
from .training import MNIST_OVERRIDES, TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
LETTERS_TRAIN_PER_CLASS = 1000
LETTERS_TEST_PER_CLASS = 200


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _threads(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


# -- dataset plumbing -------------------------------------------------------


def letters_split(seed: int, corruption: float = 0.2, templates=None):
    """The standard 3000/600 letters split; train and test use distinct derived seeds."""
    train = gen_letters(LETTERS_TRAIN_PER_CLASS, corruption, derive_seed(seed, 0), templates)
    test = gen_letters(LETTERS_TEST_PER_CLASS, corruption, derive_seed(seed, 1), templates)
    return train, test


def _mnist_paths(args) -> dict:
    if getattr(args, "manifest", None):
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        return {k: Path(manifest[k]["path"]) for k in MNIST_FILES}
    if not getattr(args, "mnist_dir", None):
        raise UsageError("MNIST needs --mnist-dir or --manifest")
    base = Path(args.mnist_dir)
    return {k: base / name for k, name in MNIST_FILES.items()}


def _load_split(args, split: str) -> LabeledDataset:
    if args.dataset == "letters":
        if getattr(args, "data", None):
            return load_csv(args.data)
        templates = load_patterns("letters", args.templates) if getattr(args, "templates", None) else None
        train, test = letters_split(args.data_seed, args.corruption, templates)
        return train if split == "train" else test
    paths = _mnist_paths(args)
    limit = args.train_limit if split == "train" else args.test_limit
    return load_mnist_idx(paths[f"{split}_images"], paths[f"{split}_labels"], limit=limit)


def _check_pairing(model, dataset: LabeledDataset, what="dataset"):
    if dataset.n != model.coupling.n:
        raise DimensionError(f"{what} has {dataset.n} pixels but the checkpoint has n={model.coupling.n}")
    if len(dataset) and dataset.labels.max() >= model.coupling.k:
        raise DimensionError(f"{what} has label {dataset.labels.max()} but the checkpoint has k={model.coupling.k}")


# -- subcommands ------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if args.dataset == "letters":
        templates = load_patterns("letters", args.templates) if args.templates else None
        ds = gen_letters(args.n_per_class, args.corruption, args.seed, templates)
        save_csv(ds, out)
        print(f"wrote {len(ds)} items to {out}")
        return EXIT_OK
    paths = _mnist_paths(args)
    manifest = {}
    for key, path in paths.items():
        if not path.is_file():
            raise DataError("missing MNIST file", path=path)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        manifest[key] = {"path": str(path.resolve()), "sha256": digest}
    train = load_mnist_idx(paths["train_images"], paths["train_labels"])
    test = load_mnist_idx(paths["test_images"], paths["test_labels"])
    manifest["train_count"] = len(train)
    manifest["test_count"] = len(test)
    if args.copy_to:
        dest = Path(args.copy_to)
        dest.mkdir(parents=True, exist_ok=True)
        for key, path in paths.items():
            shutil.copyfile(path, dest / path.name)
            manifest[key]["path"] = str((dest / path.name).resolve())
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"validated MNIST ({len(train)} train / {len(test)} test); manifest at {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    train_set = _load_split(args, "train")
    if args.dataset == "letters" and args.test_data:
        test_set = load_csv(args.test_data)
    else:
        test_set = None if args.dataset == "letters" and args.data else _load_split(args, "test")
    kind = "letters" if args.dataset == "letters" else "digits"
    patterns = load_patterns(kind, args.templates)
    n, k = patterns.shape[1], patterns.shape[0]
    if train_set.n != n:
        raise DimensionError(f"training data has {train_set.n} pixels, templates have {n}")
    lam = args.beta_lambda * math.sqrt(n)
    sc = new_spectral_coupling(n, k, lam, args.c, args.seed)
    sc, attractors = plant(sc, patterns, basis=args.basis)
    icfg = IntegrationConfig(args.dt, args.steps, args.sigma, derive_seed(args.seed, 7))
    cfg = TrainConfig(
        learning_rate=args.lr,
        adam_eps=args.adam_eps,
        batch_size=args.batch,
        epochs=args.epochs,
        integration=icfg,
        grad_clip=args.grad_clip if args.grad_clip > 0 else None,
        seed=args.seed,
        detach_damping=args.detach_damping,
        eval_every=args.eval_every,
    )
    meta = {"dataset": args.dataset, "basis": args.basis}
    model, log = train(train_set, test_set, sc, attractors, cfg, metadata=meta)
    out = Path(args.out)
    ckpt_io.save(model, out)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log.csv")
    log.to_csv(log_path)
    train_acc = evaluate(model, train_set).accuracy
    line = f"final train accuracy {train_acc:.4f}"
    if test_set is not None:
        line += f"  test accuracy {evaluate(model, test_set).accuracy:.4f}"
    print(line)
    print(f"checkpoint {out}  log {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = ckpt_io.load(args.checkpoint)
    data = _load_split(args, args.split)
    _check_pairing(model, data)
    tau = None
    if args.criterion == "l2":
        tau = args.tau if args.tau is not None else default_tau(model.attractors)
    res = evaluate(model, data, realizations_per_item=args.realizations, seed=args.seed,
                   criterion=args.criterion, tau=tau, space=args.space)
    report = {"accuracy": res.accuracy, "n_items": len(data), "n_failed": res.n_failed,
              "sigma": model.sigma, "realizations": args.realizations, "criterion": args.criterion}
    if args.confusion:
        k = model.coupling.k
        conf = np.zeros((k, k + 1), dtype=int)
        for y, p in zip(res.labels, res.predictions):
            conf[y, p if p >= 0 else k] += 1
        report["confusion"] = conf.tolist()
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        print(f"accuracy {res.accuracy:.4f} on {len(data)} items (sigma={model.sigma}, failed={res.n_failed})")
    return EXIT_OK


def cmd_attack(args) -> int:
    models = [ckpt_io.load(p) for p in args.checkpoint]
    data = _load_split(args, args.split)
    for m in models:
        _check_pairing(m, data)
    p_grid = [float(v) for v in args.p_grid.split(",") if v.strip()]
    seeds = [int(v) for v in args.seeds.split(",") if v.strip()]
    table = robustness_sweep(models, data, args.kind, p_grid, seeds, args.realizations, clip=args.clip)
    table.to_csv(args.out)
    for r in table.rows:
        print(f"model {r.model} sigma={r.sigma:<5g} kind={r.kind} p={r.p:<5g} accuracy={r.accuracy:.4f}")
    return EXIT_OK


def cmd_stability(args) -> int:
    model = ckpt_io.load(args.checkpoint)
    rep = stability_report(model, tol_margin=args.tol_margin)
    if args.json:
        print(json.dumps(rep.as_dict(), sort_keys=True))
    else:
        print(f"{'class':>5}  {'abscissa':>14}  verdict")
        for k, a in rep.per_attractor:
            print(f"{k:>5}  {a:>14.6e}  {'stable' if a < -rep.tol_margin else 'NOT stable'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = ckpt_io.load(args.checkpoint)
    data = _load_split(args, args.split)
    _check_pairing(model, data)
    if not 0 <= args.item_index < len(data):
        raise UsageError(f"--item-index must be in [0, {len(data)})")
    if not 0 <= args.node < model.coupling.n:
        raise UsageError(f"--node must be in [0, {model.coupling.n})")
    item = data.items[args.item_index]
    cfg = model.integration
    if args.sigma is not None:
        cfg = IntegrationConfig(cfg.dt, cfg.steps, args.sigma, cfg.seed)
    if args.realizations >= 2:
        ens = trajectory_ensemble(model, item, args.node, args.realizations, cfg, seed=args.seed)
        ens.to_csv(args.out)
        print(f"wrote ensemble ({args.realizations} realizations) to {args.out}")
    if args.trajectory_out:
        sc = model.coupling
        run = IntegrationConfig(cfg.dt, cfg.steps, cfg.sigma, args.seed)
        traj = integrate_stochastic(item, assemble(sc), model.attractors.states, run, c=sc.c, beta=sc.beta)
        write_trajectory_csv(args.trajectory_out, traj, activity=args.activity, c=sc.c)
        print(f"wrote trajectory to {args.trajectory_out}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------


def _add_data_flags(p, split=True):
    p.add_argument("--dataset", choices=["letters", "mnist"], required=True)
    p.add_argument("--data", help="letters: dataset CSV (default: regenerate from --data-seed)")
    p.add_argument("--data-seed", type=int, default=1, help="seed of the generated letters split")
    p.add_argument("--corruption", type=float, default=0.2)
    p.add_argument("--templates", help="directory of template grid files (default: built-in)")
    p.add_argument("--mnist-dir", help="directory holding the four MNIST IDX files")
    p.add_argument("--manifest", help="manifest JSON written by gen-data --dataset mnist")
    p.add_argument("--train-limit", type=int, default=None)
    p.add_argument("--test-limit", type=int, default=None)
    if split:
        p.add_argument("--split", choices=["train", "test"], default="test")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cvfr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cvfr {__version__}")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate letters CSV or validate MNIST files")
    p.add_argument("--dataset", choices=["letters", "mnist"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-per-class", type=int, default=LETTERS_TRAIN_PER_CLASS)
    p.add_argument("--corruption", type=float, default=0.2)
    p.add_argument("--templates")
    p.add_argument("--mnist-dir")
    p.add_argument("--manifest")
    p.add_argument("--copy-to", help="copy the validated MNIST files here")
    p.set_defaults(func=cmd_gen_data, needs_seed=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data_flags(p, split=False)
    p.add_argument("--test-data", help="letters: test CSV when --data is given")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=None, help="default 1e-4")
    p.add_argument("--adam-eps", type=float, default=None, help="default 1e-2 (letters) / 1e-8 (mnist)")
    p.add_argument("--epochs", type=int, default=None, help="default 120 (letters) / 30 (mnist)")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--grad-clip", type=float, default=None,
                   help="global-norm clip, <= 0 disables; default 0.1 (letters) / 10 (mnist)")
    p.add_argument("--beta-lambda", type=float, default=5.0, help="planted eigenvalue times 1/sqrt(N)")
    p.add_argument("--c", type=float, default=1.0, help="Hill constant")
    p.add_argument("--basis", choices=["orthogonal", "random"], default="orthogonal")
    p.add_argument("--detach-damping", action="store_true")
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="TrainLog CSV (default: <out>.log.csv)")
    p.set_defaults(func=cmd_train, needs_seed=True)

    p = sub.add_parser("eval", help="accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--realizations", type=int, default=1)
    p.add_argument("--criterion", choices=["inner_product", "l2"], default="inner_product")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--space", choices=["image", "state"], default="image")
    p.add_argument("--confusion", action="store_true")
    p.add_argument("--json", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval, needs_seed=False)

    p = sub.add_parser("attack", help="robustness sweep over attack intensity")
    p.add_argument("--checkpoint", required=True, action="append")
    _add_data_flags(p)
    p.add_argument("--kind", choices=["A", "B"], required=True)
    p.add_argument("--p-grid", required=True, help="comma-separated ascending intensities")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--realizations", type=int, default=1)
    p.add_argument("--clip", action="store_true", help="clip attack-B items to [0, 1]")
    p.add_argument("--out", default="robustness.csv")
    p.set_defaults(func=cmd_attack, needs_seed=False)

    p = sub.add_parser("stability", help="spectral abscissa at every planted attractor")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tol-margin", type=float, default=1e-8)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stability, needs_seed=False)

    p = sub.add_parser("simulate", help="trajectory ensemble for one item")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--item-index", type=int, required=True)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--realizations", type=int, default=100)
    p.add_argument("--sigma", type=float, default=None, help="override the model's sigma")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="ensemble.csv")
    p.add_argument("--trajectory-out", help="also dump one full trajectory as CSV")
    p.add_argument("--activity", action="store_true", help="trajectory CSV holds f(x) instead of x")
    p.set_defaults(func=cmd_simulate, needs_seed=True)
    return parser


def _fill_train_defaults(args) -> None:
    defaults = {f: getattr(TrainConfig, f) for f in MNIST_OVERRIDES}
    if args.dataset == "mnist":
        defaults.update(MNIST_OVERRIDES)
    for field_name, dest in (("learning_rate", "lr"), ("adam_eps", "adam_eps"),
                             ("grad_clip", "grad_clip"), ("epochs", "epochs")):
        if getattr(args, dest) is None:
            setattr(args, dest, defaults[field_name])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.needs_seed and args.seed is None and not (args.command == "gen-data" and args.dataset == "mnist"):
        parser.error(f"{args.command} requires an explicit --seed")
    if args.command == "train":
        _fill_train_defaults(args)
    try:
        with _threads(args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"cvfr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, OSError) as exc:
        print(f"cvfr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CVFRError, ArithmeticError, np.linalg.LinAlgError) as exc:
        last = getattr(exc, "last_finite_loss", None)
        suffix = f" (last finite loss {last})" if last is not None else ""
        print(f"cvfr: numerical failure: {exc}{suffix}", file=sys.stderr)
        return EXIT_NUMERIC


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
