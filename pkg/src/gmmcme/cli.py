"""Command-line front end: ``gmmcme {generate,fit,estimate,sweep-snr,sweep-k}``."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import harness
from .channel_model import generate_dataset
from .dataset_io import import_csv, normalize_dataset, read_dataset, split_dataset, write_dataset
from .errors import GmmCmeError
from .estimators import GmmCme, NoiseModel
from .gmm import load_model, save_model

log = logging.getLogger("gmmcme")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    parser.add_argument("--out", help="output path")
    parser.add_argument("-v", "--verbose", action="store_true")


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config, seed=args.seed, threads=args.threads, output=args.out)
    print(f"# effective config (seed={cfg.seed})\n{cfg.describe()}", file=sys.stderr)
    return cfg


def cmd_generate(args) -> None:
    cfg = _config(args)
    if args.import_csv:
        ds = normalize_dataset(import_csv(args.import_csv, cfg.antennas))
    else:
        total = args.samples or cfg.n_train + cfg.n_test
        ds = generate_dataset(cfg.model_config(), total, retain_covariances=not args.no_covariances)
    if args.out:
        write_dataset(ds, args.out)
    if args.train_out or args.test_out:
        if not (args.train_out and args.test_out):
            raise SystemExit("--train-out and --test-out must be given together")
        fraction = cfg.n_train / (cfg.n_train + cfg.n_test)
        train, test = split_dataset(ds, fraction, np.random.default_rng([cfg.seed, harness._SPLIT_STREAM]))
        write_dataset(train, args.train_out)
        write_dataset(test, args.test_out)
    print(f"generated {len(ds)} samples, N={ds.n_antennas}", file=sys.stderr)


def cmd_fit(args) -> None:
    cfg = _config(args)
    if not args.out:
        raise SystemExit("fit requires --out")
    ds = read_dataset(args.dataset)
    k = args.components or cfg.components
    model = harness.fit_model(cfg, ds, k)
    save_model(model, args.out)
    print(f"saved K={k} model to {args.out}", file=sys.stderr)


def cmd_estimate(args) -> None:
    cfg = _config(args)
    model = load_model(args.model)
    ds = read_dataset(args.dataset)
    noise = NoiseModel.from_snr_db(args.snr_db, ds.n_antennas)
    y = ds.channels + harness.noise_realizations(cfg.seed, 0, len(ds), ds.n_antennas, noise.sigma_sq)
    errors = harness.per_sample_errors(ds.channels, GmmCme(model, noise).estimate_batch(y))
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write("index,normalized_squared_error\n")
            for i, e in enumerate(errors):
                fh.write(f"{i},{format(float(e), '.17g')}\n")
    print(format(float(errors.mean()), ".17g"))


def _sweep(args, runner) -> None:
    cfg = _config(args)
    out = cfg.output
    if not out:
        raise SystemExit("sweep requires --out or an 'output' config key")
    result = runner(cfg)
    harness.emit_csv(result, out)
    print(f"wrote {out} ({result.metadata['runtime_s']:.1f} s)", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmmcme", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate (or import) a channel dataset")
    _common(p)
    p.add_argument("--samples", type=int, help="number of samples (default n_train + n_test)")
    p.add_argument("--no-covariances", action="store_true", help="do not retain per-sample covariances")
    p.add_argument("--import-csv", help="import externally simulated channels instead of generating")
    p.add_argument("--train-out")
    p.add_argument("--test-out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit a GMM to a dataset")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--components", "-k", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("estimate", help="per-sample GMM estimation errors at one SNR")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--snr-db", type=float, required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep-snr", help="normalized MSE versus SNR")
    _common(p)
    p.set_defaults(func=lambda a: _sweep(a, harness.run_snr_sweep))

    p = sub.add_parser("sweep-k", help="normalized MSE versus number of GMM components")
    _common(p)
    p.set_defaults(func=lambda a: _sweep(a, harness.run_k_sweep))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (GmmCmeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
