"""Command-line entry point: ``adeptheq {run,partition-stats,he-bench,grad-check}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time

import numpy as np

from . import ckks, dp, federation, gradcheck, metrics
from .config import FederationConfig, parse_config
from .errors import ConfigurationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

INSECURE_NOTE = "note: HE parameters are for simulation only, NOT cryptographically secure"


def _load_config(args) -> FederationConfig:
    cfg = parse_config(args.config) if args.config else FederationConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "clients", None) is not None:
        overrides["n_clients"] = args.clients
    if getattr(args, "rounds", None) is not None:
        overrides["rounds"] = args.rounds
    return dataclasses.replace(cfg, **overrides).validate()


def cmd_run(args) -> int:
    cfg = _load_config(args)
    train, test = federation.load_data(cfg)
    metrics.write_manifest(args.out, cfg, train.checksum())
    print(INSECURE_NOTE)
    print(f"planned eps_total after {cfg.rounds} rounds: {dp.compose_privacy(cfg.privacy_spec()):.4f}")

    def report(state, m):
        print(
            f"round {m.round:3d}  loss {m.test_loss:.4f}  acc {m.test_accuracy:.4f}  "
            f"frozen {','.join(m.frozen_layers) or '-'}  sent {m.transmitted_bytes} B  "
            f"eps {m.epsilon_total:.3f}  {m.duration_s:.1f}s",
            flush=True,
        )

    series = federation.run_federation(cfg, train, test, on_round=report)
    paths = metrics.emit_metrics(series, args.out, cfg, train.checksum())
    print(f"wrote {paths['table']}")
    return EXIT_OK


def cmd_partition_stats(args) -> int:
    cfg = _load_config(args)
    train, _ = federation.load_data(cfg)
    parts = federation.dirichlet_partition(train.labels, cfg.n_clients, cfg.dirichlet_alpha,
                                           dp.stream_rng(cfg.seed, dp.STREAM_PARTITION), min_size=2)
    print(f"alpha={cfg.dirichlet_alpha} clients={cfg.n_clients} IID entropy={np.log(train.n_classes):.4f}")
    for cid, idx in enumerate(parts):
        hist = np.bincount(train.labels[idx], minlength=train.n_classes)
        ent = federation.class_entropy(train.labels[idx], train.n_classes)
        print(f"client {cid:3d}  n={len(idx):6d}  entropy={ent:.4f}  hist={' '.join(map(str, hist))}")
    return EXIT_OK


def cmd_he_bench(args) -> int:
    params = ckks.HeParams.large() if args.large else ckks.HeParams.desk()
    rng = np.random.default_rng(args.seed or 0)
    print(f"N={params.ring_degree} moduli={list(params.moduli_bits)} scale=2^40  {INSECURE_NOTE}")
    t0 = time.perf_counter()
    keys = ckks.keygen(params, rng)
    t1 = time.perf_counter()
    vecs = rng.uniform(-1, 1, size=(args.clients, args.length))
    cts = [ckks.encrypt_vector(v, keys.public, rng) for v in vecs]
    t2 = time.perf_counter()
    w = np.exp(rng.normal(size=args.clients))
    w /= w.sum()
    agg = ckks.secure_weighted_sum(cts, w)
    t3 = time.perf_counter()
    out = ckks.decrypt_vector(agg, keys.secret, args.length)
    t4 = time.perf_counter()
    roundtrip = max(float(np.abs(ckks.decrypt_vector(c, keys.secret, args.length) - v).max())
                    for c, v in zip(cts, vecs))
    err = float(np.abs(out - w @ vecs).max())
    print(f"keygen {t1 - t0:.3f}s  encrypt x{args.clients} {t2 - t1:.3f}s  "
          f"weighted sum {t3 - t2:.3f}s  decrypt {t4 - t3:.3f}s")
    print(f"ciphertext bytes {len(ckks.serialize_ciphertext(cts[0]))}  levels {cts[0].level}->{agg.level}")
    print(f"max roundtrip error {roundtrip:.3e}  max aggregation error {err:.3e}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    res = gradcheck.check_gradients(n_coords=args.coords, seed=args.seed or 0)
    for tag, e in sorted(res.per_tag.items()):
        print(f"{tag:18s} max rel error {e:.3e}")
    print(f"max relative error {res.max_rel_error:.3e} over {res.n_coords} coordinates (tol 1e-3)")
    if not res.passed(1e-3):
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adeptheq", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI-style config file (defaults when omitted)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--clients", type=int)
        sp.add_argument("--rounds", type=int)

    run = sub.add_parser("run", help="execute a federation and write metrics")
    common(run)
    run.add_argument("--out", default="runs/latest", help="output directory")
    run.set_defaults(func=cmd_run)

    ps = sub.add_parser("partition-stats", help="print per-client class histograms")
    common(ps)
    ps.set_defaults(func=cmd_partition_stats)

    he = sub.add_parser("he-bench", help="CKKS roundtrip and aggregation timing/error")
    he.add_argument("--large", action="store_true", help="use N=8192, [60,40,40,60]")
    he.add_argument("--clients", type=int, default=10)
    he.add_argument("--length", type=int, default=50)
    he.add_argument("--seed", type=int)
    he.set_defaults(func=cmd_he_bench)

    gc = sub.add_parser("grad-check", help="finite-difference check of the hybrid model")
    gc.add_argument("--coords", type=int, default=60)
    gc.add_argument("--seed", type=int)
    gc.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
