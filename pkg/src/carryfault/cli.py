"""Command-line front end.

Exit status: 0 on success, 2 on configuration or input errors, 3 when a
verification step fails.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from .campaign import InequalitySystem, run_campaign
from .config import RunConfig, load_config
from .errors import ConfigError, StructuralError
from .faults import (FaultKind, in_ranges, kyber_failure_ranges, lemma_check, make_hook,
                     saber_failure_ranges)
from .kem import DecryptionDevice, keygen, load_bundle, save_bundle, g_value
from .masking import arith_share, masked_decode_kyber, masked_decode_saber
from .params import SCHEMES, get_params
from .rng import DeterministicRng
from .solver import solve, verify_key

log = logging.getLogger("carryfault")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 2, 3


class VerificationFailed(Exception):
    pass


def _outdir(cfg: RunConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def cmd_campaign(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    t0 = time.perf_counter()
    kp = keygen(cfg.scheme, DeterministicRng(cfg.seed, ("keygen",)))
    device = DecryptionDevice(kp, cfg.scheme, cfg.order, cfg.campaign.get("register_width"))
    t1 = time.perf_counter()
    result = run_campaign(kp.public, device, cfg.campaign_config(),
                          progress=lambda n: log.info("kept %d inequalities", n))
    t2 = time.perf_counter()
    save_bundle(os.path.join(out, "ground_truth.json"), kp)
    result.metadata["run_config"] = cfg.to_json()
    result.write(os.path.join(out, "inequalities.csv"), os.path.join(out, "campaign_meta.json"))
    c = result.counters
    print(f"ciphertexts={c['ciphertexts']} injections={c['injections']} failures={c['failures']} "
          f"mean_repetitions={c['mean_repetitions']:.4f} inequalities={c['inequalities']} "
          f"(GE {c['ge']}, LT {c['lt']})")
    return {"counters": c, "wall_clock": {"keygen": t1 - t0, "campaign": t2 - t1}}


def _load_truth(path, scheme):
    if path and os.path.exists(path):
        kp, _ = load_bundle(path, scheme)
        return kp.secret_vector()
    return None


def _key_json(guess, res, scheme, count) -> dict:
    l, n = scheme.l, scheme.n
    half = l * n
    return {
        "scheme": scheme.name,
        "inequalities": count,
        "e": guess[:half].reshape(l, n).tolist(),
        "s": guess[half:].reshape(l, n).tolist(),
        "confidence": np.round(res.confidence, 6).tolist(),
        "iterations": res.iterations,
        "converged": res.converged,
    }


def cmd_solve(cfg: RunConfig, csv_path=None, truth_path=None) -> dict:
    out = _outdir(cfg)
    csv_path = csv_path or os.path.join(out, "inequalities.csv")
    system = InequalitySystem.from_csv(csv_path)
    if len(system) == 0:
        raise ConfigError(f"{csv_path}: no inequalities")
    if system.unknowns != cfg.scheme.unknowns:
        raise ConfigError(f"{csv_path}: {system.unknowns} unknowns, {cfg.scheme.name} has {cfg.scheme.unknowns}")
    truth = _load_truth(truth_path or os.path.join(out, "ground_truth.json"), cfg.scheme)
    scfg = cfg.solver_config()
    points = sorted({p for p in cfg.sweep if p < len(system)} | {len(system)})
    rows, timings = [], {}
    full = None
    for count in points:
        t0 = time.perf_counter()
        res = solve(system.head(count), cfg.scheme, scfg)
        timings[str(count)] = time.perf_counter() - t0
        frac = verify_key(res.key_guess, truth) if truth is not None else None
        rows.append((count, frac, res.iterations, cfg.seed))
        log.info("%d inequalities: %d iterations, success %s", count, res.iterations, frac)
        if count == len(system):
            full = res
    with open(os.path.join(out, "key.json"), "w") as fh:
        json.dump(_key_json(full.key_guess, full, cfg.scheme, len(system)), fh)
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["inequalities", "success_fraction", "iterations", "seed"])
        for count, frac, its, seed in rows:
            w.writerow([count, "" if frac is None else f"{frac:.6f}", its, seed])
    for count, frac, its, _ in rows:
        print(f"{count:>7} inequalities  iterations={its:<3} success={'n/a' if frac is None else f'{frac:.4f}'}")
    return {"sweep": rows, "wall_clock": {"solve": timings}, "converged": full.converged}


def load_key(path, scheme=None):
    with open(path) as fh:
        obj = json.load(fh)
    if "scheme" in obj and "e" in obj:
        name = obj["scheme"]
        vec = np.concatenate([np.ravel(obj["e"]), np.ravel(obj["s"])]).astype(np.int64)
        return name, vec
    if scheme is None:
        raise ConfigError(f"{path}: ground-truth bundle needs a scheme")
    kp, _ = load_bundle(path, scheme)
    return scheme.name, kp.secret_vector()


def cmd_verify(key_path, truth_path, scheme_name=None) -> float:
    name, guess = load_key(key_path)
    scheme = get_params(scheme_name or name)
    if scheme.name != get_params(name).name:
        raise ConfigError(f"key is for {name}, expected {scheme.name}")
    _, truth = load_key(truth_path, scheme)
    if guess.size != truth.size:
        raise ConfigError(f"scheme mismatch: key has {guess.size} unknowns, truth has {truth.size}")
    frac = verify_key(guess, truth)
    n, l = scheme.n, scheme.l
    print(f"success fraction {frac:.6f}")
    for p in range(2 * l):
        part = "e" if p < l else "s"
        sl = slice(p * n, (p + 1) * n)
        print(f"  {part}[{p % l}]: {np.count_nonzero(guess[sl] == truth[sl])}/{n}")
    return frac


def cmd_lemma_check(seed: int = 0) -> bool:
    rep = lemma_check(seed=seed)
    ok = rep["mismatches"] == 0 and rep["carry_table_ok"]
    for k, r in rep["per_k"].items():
        print(f"k={k}: {r['cases']} cases, {r['mismatches']} mismatches")
    print("k=2 carry table (z, z*, msb flips):")
    for z, zs, flip in rep["carry_table"]:
        print(f"  {z} -> {zs}{'  flip' if flip else ''}")
    rng = DeterministicRng(seed, ("ranges",))
    for name in ("Kyber512", "Saber"):
        p = get_params(name)
        good = _range_check(p, rng)
        ok &= good
        print(f"{name} decode ranges: {'ok' if good else 'MISMATCH'}")
    print("lemma suite:", "pass" if ok else "FAIL")
    return ok


def _range_check(p, rng) -> bool:
    """Exhaustive masked-decode scan against the closed-form failure ranges."""
    ok = True
    if p.is_kyber:
        values = np.arange(p.q)
        g = g_value(values, p)
        for kind in (FaultKind.STUCK1, FaultKind.STUCK0):
            want = in_ranges(g, kyber_failure_ranges(p, kind))
            covered = np.zeros(values.size, dtype=bool)
            # activation is a coin flip per run; repeat until every value was hit
            for _ in range(64):
                clean, _ = masked_decode_kyber(arith_share(values, 1, p.q, rng), p, rng)
                bits, tr = masked_decode_kyber(arith_share(values, 1, p.q, rng), p, rng,
                                               make_hook(kind, 1 << (p.k - 2)))
                fail = bits.unmask() != clean.unmask()
                ok &= bool(np.array_equal(fail, want & tr.activation))
                covered |= tr.activation
                if covered.all():
                    break
            ok &= bool(covered.all())
    else:
        values = np.arange(p.p)
        for kind in (FaultKind.STUCK1, FaultKind.STUCK0):
            mask = 1 << (p.k - 2)
            x = arith_share(values, 1, p.p, rng)
            # force activation so every value is exercised
            x.shares[0] = x.shares[0] & ~mask if kind is FaultKind.STUCK1 else x.shares[0] | mask
            x.shares[1] = (values - x.shares[0]) % p.p
            clean = masked_decode_saber(x, p, rng).unmask()
            bits = masked_decode_saber(x, p, rng, make_hook(kind, mask)).unmask()
            want = in_ranges(values, saber_failure_ranges(p, kind))
            ok &= bool(np.array_equal(bits != clean, want))
    return ok


def cmd_ranges(scheme_name=None) -> None:
    names = [scheme_name] if scheme_name else list(SCHEMES)
    for name in names:
        p = get_params(name)
        fn = kyber_failure_ranges if p.is_kyber else saber_failure_ranges
        what = "g" if p.is_kyber else "m'"
        for kind in (FaultKind.STUCK1, FaultKind.STUCK0):
            iv = " U ".join(f"[{lo}, {hi}]" for lo, hi in fn(p, kind))
            print(f"{p.name:<10} {kind.value:<6} fault at bit {p.k - 1}: {what} in {iv}")


def cmd_run(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    camp = cmd_campaign(cfg)
    sol = cmd_solve(cfg)
    frac = sol["sweep"][-1][1]
    report = {
        "config": cfg.to_json(),
        "counters": camp["counters"],
        "solver_iterations": sol["sweep"][-1][2],
        "success_fraction": frac,
        "wall_clock": {**camp["wall_clock"], **sol["wall_clock"], "total": time.perf_counter() - t0},
    }
    with open(os.path.join(cfg.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carryfault", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", help="output directory")

    common(sub.add_parser("campaign", help="keygen, fault campaign, inequality dump"))
    p = sub.add_parser("solve", help="solve an inequality dump and sweep counts")
    common(p)
    p.add_argument("--inequalities", help="CSV path (default <out>/inequalities.csv)")
    p.add_argument("--truth", help="ground-truth JSON for success fractions")
    common(sub.add_parser("run", help="campaign then solve, writing report.json"))
    p = sub.add_parser("verify", help="compare a recovered key with ground truth")
    p.add_argument("--key", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--scheme")
    p = sub.add_parser("lemma-check", help="exhaustive propagation and range checks")
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("ranges", help="print failure intervals")
    p.add_argument("--scheme")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command in ("campaign", "solve", "run"):
            cfg = load_config(args.config, seed=args.seed, threads=args.threads, out=args.out)
            if args.command == "campaign":
                cmd_campaign(cfg)
            elif args.command == "solve":
                res = cmd_solve(cfg, args.inequalities, args.truth)
            else:
                res = cmd_run(cfg)
                if res["success_fraction"] is not None and res["success_fraction"] < 1.0:
                    raise VerificationFailed(f"recovered {res['success_fraction']:.4f} of the key")
        elif args.command == "verify":
            if cmd_verify(args.key, args.truth, args.scheme) < 1.0:
                raise VerificationFailed("key differs from ground truth")
        elif args.command == "lemma-check":
            if not cmd_lemma_check(args.seed):
                raise VerificationFailed("lemma suite mismatch")
        elif args.command == "ranges":
            cmd_ranges(args.scheme)
    except (ConfigError, StructuralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
