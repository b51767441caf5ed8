"""Command-line interface: ``sphereq <command> [options]``.

Commands:
    theory          print constants (Shannon bound, ideal sphere, high-rate).
    codebook build  train a scalar or block codebook (optionally its LUT).
    lut build       build an assignment lookup table for a block codebook.
    quantize        encode a dataset into an SQZ1 batch file.
    dequantize      decode an SQZ1 file back to vectors.
    bench           Monte Carlo distortion and recall sweeps from a run config.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.
``SPHEREQ_THREADS`` caps worker threads; results do not depend on it.
"""

import argparse
import io
import json
import os
import re
import sys
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import block_codebook as bc
from . import metrics, theory
from .batchfile import check_header, read_batch, write_batch
from .config import RunConfig, SchemeSpec, load_config
from .datasets import load_dataset, pad_rows, synthetic_unit, write_fvecs
from .errors import ConfigError, DataError, SphereQError
from .io_utils import atomic_write_bytes, atomic_write_text
from .lut import build_lut, load_lut, save_lut
from .quantizers import (
    FAMILY_CODES,
    VARIANT_CODES,
    Family,
    QuantizedBatch,
    dequantize_batch,
    make_scheme,
    padded_dim,
    quantize_batch,
)
from .rotation import build_rotation
from .scalar_codebook import lloyd_max_gaussian, lloyd_max_spherical
from .seeding import derive_seed

# Per-coordinate distortion of well-trained Gaussian-limit block codebooks.
BLOCK_REFERENCE = {
    2: {1: 0.363380, 2: 0.107485, 3: 0.029716, 4: 0.007758},
    3: {1: 0.356257, 2: 0.101331, 3: 0.027154, 4: 0.007058},
}
SCALAR_REFERENCE = {1: 0.3633802276, 2: 0.1174818478, 3: 0.0345477608, 4: 0.0095010080}


def _apply_threads() -> int:
    raw = os.environ.get("SPHEREQ_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SPHEREQ_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("SPHEREQ_THREADS must be positive")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    bc.WORKERS = n
    return n


def _ints(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def _scheme_flags(ap: argparse.ArgumentParser, bits_list: bool = False) -> None:
    ap.add_argument("--scheme", help="family: eden, rabitq, tq-mse, tq-prod, block" + (" (comma list of family[:variant][:p=N] for bench)" if bits_list else ""))
    ap.add_argument("--variant", help="bsm, ub or raw (default depends on the family)")
    ap.add_argument("--bits", help="bits per coordinate" + (" (comma list)" if bits_list else ""))
    ap.add_argument("--block", type=int, help="block size p for the block family")
    ap.add_argument("--dim", type=int, help="dimension (required for raw input; bench operating dimension)")
    ap.add_argument("--seed", type=int, help="base seed (default 0)")
    ap.add_argument("--backend", choices=("haar", "fast"), help="rotation backend (default haar)")
    ap.add_argument("--rounds", type=int, help="rounds of the fast rotation (default 3)")
    ap.add_argument("--assign", choices=("exact", "lut"), help="block assignment mode (default exact)")
    ap.add_argument("--lut-L", dest="lut_L", type=int, help="LUT cells per axis (default 64)")
    ap.add_argument("--lut-k", dest="lut_k", type=int, help="LUT candidates per cell (default 8)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sphereq", description="Rotation-based vector quantization toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("theory", help="print theoretical constants")
    t.add_argument("--dims", default="100,1000,10000", help="comma list of dimensions")
    t.add_argument("--block", default="1,2,3", help="comma list of block sizes")
    t.add_argument("--bits", default="1,2,3,4", help="comma list of bit widths")
    t.add_argument("--out", help="write the table to this file")
    t.add_argument("--format", choices=("json", "csv"), default="json")

    cb = sub.add_parser("codebook", help="codebook lifecycle")
    cbs = cb.add_subparsers(dest="action", required=True)
    b = cbs.add_parser("build", help="train a codebook")
    b.add_argument("--kind", choices=("scalar", "block"), required=True)
    b.add_argument("--target", choices=("gaussian", "spherical", "exact"), default="gaussian",
                   help="training law: gaussian limit, or the exact marginal of dimension --dim ('spherical' for scalar, 'exact' for block)")
    b.add_argument("--bits", type=int, required=True)
    b.add_argument("--block", type=int, default=2)
    b.add_argument("--dim", type=int, default=0)
    b.add_argument("--samples", type=int, help="training samples for block codebooks")
    b.add_argument("--restarts", type=int, default=8)
    b.add_argument("--max-iter", dest="max_iter", type=int, help="iteration cap (default 10000 scalar, 1000 block)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--symmetric", action="store_true", help="constrain block codebooks to sign pairs")
    b.add_argument("--eval-samples", dest="eval_samples", type=int, default=1_000_000)
    b.add_argument("--out", required=True)
    b.add_argument("--lut-out", dest="lut_out", help="also build and write a LUT")
    b.add_argument("--lut-L", dest="lut_L", type=int, default=64)
    b.add_argument("--lut-k", dest="lut_k", type=int, default=8)

    lu = sub.add_parser("lut", help="lookup-table lifecycle")
    lus = lu.add_subparsers(dest="action", required=True)
    lb = lus.add_parser("build", help="build an assignment LUT")
    lb.add_argument("--codebook", help="block codebook file (default: shipped codebook for --block/--bits)")
    lb.add_argument("--block", type=int, default=3)
    lb.add_argument("--bits", type=int, default=4)
    lb.add_argument("--lut-L", dest="lut_L", type=int, default=64)
    lb.add_argument("--lut-k", dest="lut_k", type=int, default=8)
    lb.add_argument("--halfwidth", type=float, help="grid half-width A (default depends on the frame)")
    lb.add_argument("--out", required=True)

    q = sub.add_parser("quantize", help="encode a dataset to SQZ1")
    q.add_argument("--input", required=True)
    q.add_argument("--input-format", dest="input_format", choices=("fvecs", "bvecs", "raw", "csv"), default="fvecs")
    _scheme_flags(q)
    q.add_argument("--codebook", help="block codebook file (default: shipped codebook)")
    q.add_argument("--lut", help="LUT file for --assign lut (default: build in memory)")
    q.add_argument("--out", required=True)

    dq = sub.add_parser("dequantize", help="decode an SQZ1 file")
    dq.add_argument("--input", required=True)
    dq.add_argument("--codebook", help="block codebook file used at encode time")
    dq.add_argument("--out", required=True)
    dq.add_argument("--format", choices=("fvecs", "csv", "raw"), default="fvecs")

    be = sub.add_parser("bench", help="distortion / recall benchmark")
    be.add_argument("--config", help="run config file (key = value lines)")
    _scheme_flags(be, bits_list=True)
    be.add_argument("--trials", type=int, help="trials for the MSE estimate")
    be.add_argument("--ip-trials", dest="ip_trials", type=int, help="trials for the inner-product estimate")
    be.add_argument("--eta", type=float, help="target inner product for the IP estimate")
    be.add_argument("--metrics", help="comma list of mse, ip, recall")
    be.add_argument("--out", help="report path")
    be.add_argument("--format", choices=("json", "csv"))
    be.add_argument("--print-config", dest="print_config", action="store_true", help="print the resolved config and exit")
    return ap


# ---------------------------------------------------------------- theory ---


def cmd_theory(args) -> int:
    table = theory.theory_table(_ints(args.dims), tuple(_ints(args.block)), tuple(_ints(args.bits)))
    lines = ["d        c_d       C_d       " + "  ".join(f"G(p={p})" for p in _ints(args.block))]
    for row in table["rows"]:
        hr = "  ".join(f"{row['highrate'][str(p)]['coefficient']:.5f}" if str(p) in row["highrate"] else "   -   " for p in _ints(args.block))
        lines.append(f"{row['d']:<8d} {row['c_d']:.6f}  {row['C_d']:.6f}  {hr}")
    lines.append("limit                        " + "  ".join(f"{table['highrate_limit'][str(p)]:.5f}" for p in _ints(args.block)))
    print("\n".join(lines))
    if args.out:
        if args.format == "json":
            atomic_write_text(args.out, json.dumps(table, indent=2, sort_keys=True) + "\n")
        else:
            buf = io.StringIO()
            buf.write("# report_version=1\nd,c_d,C_d," + ",".join(f"highrate_p{p}" for p in _ints(args.block)) + "\n")
            for row in table["rows"]:
                hr = [repr(row["highrate"][str(p)]["coefficient"]) if str(p) in row["highrate"] else "" for p in _ints(args.block)]
                buf.write(",".join([str(row["d"]), repr(row["c_d"]), repr(row["C_d"])] + hr) + "\n")
            atomic_write_text(args.out, buf.getvalue())
    return 0


# -------------------------------------------------------------- codebooks ---


def cmd_codebook_build(args) -> int:
    if args.kind == "scalar":
        if args.target == "gaussian":
            cb = lloyd_max_gaussian(args.bits, max_iter=args.max_iter or 10_000)
            ref = SCALAR_REFERENCE.get(args.bits)
        elif args.target == "spherical":
            cb = lloyd_max_spherical(args.bits, args.dim, max_iter=args.max_iter or 10_000)
            ref = None
        else:
            raise ConfigError("scalar codebooks train on 'gaussian' or 'spherical'")
        cb.save(args.out)
        msg = f"scalar {args.target} b={args.bits}: distortion {cb.distortion:.10f} after {cb.iterations} iterations"
        if ref is not None:
            msg += f" (reference {ref:.10f}, diff {cb.distortion - ref:+.2e})"
        print(msg)
        return 0
    p = args.block
    if args.target == "gaussian":
        marginal = bc.BlockMarginal.gaussian(p)
    elif args.target == "exact":
        marginal = bc.BlockMarginal.exact(p, args.dim)
    else:
        raise ConfigError("block codebooks train on 'gaussian' or 'exact'")
    cb = bc.fit_block_codebook(
        p, args.bits, marginal, n_samples=args.samples, restarts=args.restarts, seed=args.seed,
        symmetric=args.symmetric, max_iter=args.max_iter or 1000,
    )
    est = bc.eval_block_distortion(cb, marginal, args.eval_samples, seed=args.seed)
    cb.save(args.out)
    ref = BLOCK_REFERENCE.get(p, {}).get(args.bits) if args.target == "gaussian" else None
    msg = (
        f"block p={p} b={args.bits} ({marginal.describe()}): training distortion {float(cb.meta['distortion']):.6f}, "
        f"held-out {est.mean:.6f} +/- {est.stderr:.1e}"
    )
    if ref is not None:
        msg += f" (reference {ref:.6f}, {100 * (est.mean / ref - 1):+.2f}%)"
    print(msg)
    if args.lut_out:
        save_lut(build_lut(cb, args.lut_L, args.lut_k), args.lut_out)
        print(f"wrote LUT L={args.lut_L} k={args.lut_k} to {args.lut_out}")
    return 0


def cmd_lut_build(args) -> int:
    cb = bc.load_block_codebook(args.codebook) if args.codebook else bc.load_pretrained(args.block, args.bits)
    lut = build_lut(cb, args.lut_L, args.lut_k, args.halfwidth)
    save_lut(lut, args.out)
    print(f"LUT p={cb.p} b={cb.bits} L={lut.L} k={lut.k} A={lut.halfwidth:g}: {lut.table.nbytes} table bytes -> {args.out}")
    return 0


# ------------------------------------------------------ quantize / decode ---


def _resolve_scheme(args, dim: int):
    fam = args.scheme or "eden"
    if args.bits is None:
        raise ConfigError("--bits is required")
    bits = int(args.bits)
    p = args.block if fam == "block" else None
    backend = args.backend or "haar"
    rounds = args.rounds or 3
    op_dim = padded_dim(dim, p or (2 if fam == "block" else 1), backend)
    codebook = bc.load_block_codebook(args.codebook) if getattr(args, "codebook", None) else None
    lut = None
    if (args.assign or "exact") == "lut":
        if fam != "block":
            raise ConfigError("--assign lut applies to the block family only")
        cb = codebook or bc.load_pretrained(p or 2, bits)
        codebook = cb
        lut = load_lut(args.lut, cb) if getattr(args, "lut", None) else build_lut(cb, args.lut_L or 64, args.lut_k or 8)
    seed = args.seed or 0
    cfg = make_scheme(fam, bits, op_dim, variant=args.variant, seed=seed, block_size=p, backend=backend,
                      rounds=rounds, codebook=codebook, lut=lut)
    run = RunConfig(
        schemes=(SchemeSpec(cfg.family, cfg.variant, cfg.block_size),), bits=(bits,), dim=op_dim, seed=seed,
        backend=backend, rounds=rounds, assign=cfg.assign_mode, lut_L=args.lut_L or 64, lut_k=args.lut_k or 8,
        dataset=os.path.basename(args.input), dataset_format=args.input_format, out=os.path.basename(args.out),
    )
    return cfg, run


def cmd_quantize(args) -> int:
    ds = load_dataset(args.input, args.input_format, normalize=False, dim=args.dim)
    cfg, run = _resolve_scheme(args, ds.dim)
    x = pad_rows(ds.vectors, cfg.dim)
    qb = quantize_batch(cfg, x)
    write_batch(args.out, cfg, qb, original_dim=ds.original_dim, config_hash=bytes.fromhex(run.digest()))
    print(f"quantized {ds.count} vectors with {cfg.tag} (d={cfg.dim}, original {ds.original_dim}) -> {args.out}")
    return 0


_LUT_TAG = re.compile(r",lut\(L=\d+,k=\d+\)")


def cmd_dequantize(args) -> int:
    header, qb = read_batch(args.input)
    families = {v: k for k, v in FAMILY_CODES.items()}
    variants = {v: k for k, v in VARIANT_CODES.items()}
    if header.family not in families or header.variant not in variants:
        raise DataError("SQZ1 header names an unknown family or variant")
    fam = families[header.family]
    codebook = bc.load_block_codebook(args.codebook) if args.codebook else None
    backend = "haar" if header.backend == 1 else "fast"
    cfg = make_scheme(
        fam, header.bits, header.dim, variant=variants[header.variant],
        block_size=header.block_size if fam is Family.BLOCK else None,
        rotation=build_rotation(header.dim, header.rotation_seed, backend, header.rounds or 3), codebook=codebook,
    )
    # Assignment mode only affects encoding; decode with the plain scheme.
    plain = replace(header, tag=_LUT_TAG.sub("", header.tag), uses_lut=False)
    check_header(cfg, plain)
    qb = QuantizedBatch(cfg.tag, qb.rotation_seed, qb.dim, qb.codes, qb.rho, qb.norm, qb.aux)
    x = dequantize_batch(cfg, qb, on_degenerate="raw")[:, : header.original_dim]
    if args.format == "fvecs":
        write_fvecs(args.out, x)
    elif args.format == "raw":
        atomic_write_bytes(args.out, np.asarray(x, dtype="<f4").tobytes())
    else:
        atomic_write_text(args.out, "".join(",".join(repr(float(v)) for v in row) + "\n" for row in x.astype(np.float32)))
    print(f"decoded {len(qb)} vectors of dimension {header.original_dim} -> {args.out}")
    return 0


# ----------------------------------------------------------------- bench ---


def resolve_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides: Dict[str, Optional[str]] = {
        "schemes": args.scheme, "bits": args.bits, "dim": args.dim, "seed": args.seed, "backend": args.backend,
        "rounds": args.rounds, "assign": args.assign, "lut_L": args.lut_L, "lut_k": args.lut_k,
        "mse_trials": args.trials, "ip_trials": args.ip_trials, "eta": args.eta, "metrics": args.metrics,
        "out": args.out, "format": args.format,
    }
    if args.scheme and args.variant:
        # A single --variant applies to every listed family.
        overrides["schemes"] = ",".join(f"{s.split(':')[0]}:{args.variant}" + "".join(f":{t}" for t in s.split(":")[1:] if t.startswith("p=")) for s in args.scheme.split(","))
    if args.scheme and args.block:
        overrides["schemes"] = ",".join(s + (f":p={args.block}" if s.startswith("block") and "p=" not in s else "") for s in (overrides["schemes"] or "").split(","))
    return cfg.updated({k: (None if v is None else str(v)) for k, v in overrides.items()})


def bench_schemes(run: RunConfig) -> List:
    """Scheme objects for every (scheme entry, bits) pair of ``run``."""
    out = []
    luts: Dict = {}
    for entry in run.schemes:
        for b in run.bits:
            p = entry.block_size if entry.family is Family.BLOCK else 1
            d = padded_dim(run.dim, p, run.backend)
            lut = None
            if run.assign == "lut" and entry.family is Family.BLOCK:
                key = (p, b)
                if key not in luts:
                    luts[key] = build_lut(bc.load_pretrained(p, b), run.lut_L, run.lut_k)
                lut = luts[key]
            out.append(make_scheme(
                entry.family, b, d, variant=entry.variant, seed=derive_seed(run.seed, "scheme-rotation"),
                block_size=p if entry.family is Family.BLOCK else None, backend=run.backend, rounds=run.rounds, lut=lut,
            ))
    return out


def _group_by_dim(cfgs: Sequence) -> Dict[int, List]:
    groups: Dict[int, List] = {}
    for c in cfgs:
        groups.setdefault(c.dim, []).append(c)
    return groups


def run_bench(run: RunConfig):
    """Execute a benchmark; returns distortion reports and recall results."""
    cfgs = bench_schemes(run)
    reports = []
    method = "frames" if run.backend == "haar" else "full"
    for kind, trials in (("mse", run.mse_trials), ("ip", run.ip_trials)):
        if kind not in run.metrics:
            continue
        by_cfg = {}
        for group in _group_by_dim(cfgs).values():
            rows = metrics._estimate_many(group, kind, trials, run.seed, eta=run.eta, method=method)
            by_cfg.update({id(c): r for c, r in zip(group, rows)})
        reports.extend(by_cfg[id(c)] for c in cfgs)
    recalls = []
    if "recall" in run.metrics:
        if run.dataset:
            db = load_dataset(run.dataset, run.dataset_format).vectors
            if not run.queries:
                raise ConfigError("a dataset needs a matching 'queries' file")
            qs = load_dataset(run.queries, run.dataset_format).vectors
            name = os.path.basename(run.dataset)
        else:
            db = synthetic_unit(run.synthetic_db, run.dim, derive_seed(run.seed, "synthetic-db"))
            qs = synthetic_unit(run.synthetic_queries, run.dim, derive_seed(run.seed, "synthetic-queries"))
            name = f"synthetic-gaussian(n={run.synthetic_db},q={run.synthetic_queries},d={run.dim})"
        for c in cfgs:
            pdb = pad_rows(db, c.dim)
            pq = pad_rows(qs, c.dim)
            recalls.append(metrics.recall_at_1_at_k(pdb, pq, c, run.recall_k, dataset=name))
    return reports, recalls


def comparison_text(reports, recalls) -> str:
    lines = [f"{'scheme':<28}{'d':>6} {'metric':>6} {'scaled mean':>13} {'stderr':>10} {'reference':>10} {'model':>10} {'rel.diff':>9}"]
    for r in reports:
        ref = r.predicted.get("reference")
        mod = r.predicted.get("model")
        rel = f"{100 * (r.scaled_mean / ref - 1):+.2f}%" if ref else "-"
        lines.append(
            f"{r.scheme:<28}{r.d:>6} {r.metric:>6} {r.scaled_mean:>13.6g} {r.scaled_stderr:>10.2g} "
            f"{(f'{ref:.4g}' if ref is not None else '-'):>10} {(f'{mod:.4g}' if mod is not None else '-'):>10} {rel:>9}"
        )
    for rc in recalls:
        lines.append(f"{rc.scheme:<28} recall@1@k " + " ".join(f"k={k}:{v:.4f}" for k, v in zip(rc.ks, rc.recall)))
    return "\n".join(lines) + "\n"


def bench_outputs(run: RunConfig, reports, recalls) -> str:
    extra = {"config_hash": run.digest(), "config": run.to_text()}
    if run.format == "json":
        doc = json.loads(metrics.reports_to_json(reports, extra))
        doc["recall"] = [r.to_dict() for r in recalls]
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    text = metrics.reports_to_csv(reports, {"config_hash": run.digest()})
    if recalls:
        text += "\ndataset,scheme,bits,n_queries,n_database," + ",".join(f"recall_at_{k}" for k in recalls[0].ks) + "\n"
        for r in recalls:
            text += ",".join([r.dataset.replace(",", ";"), r.scheme.replace(",", ";"), str(r.bits), str(r.n_queries), str(r.n_database)] + [repr(v) for v in r.recall]) + "\n"
    return text


def cmd_bench(args) -> int:
    run = resolve_run_config(args)
    if args.print_config:
        sys.stdout.write(run.to_text())
        return 0
    reports, recalls = run_bench(run)
    sys.stdout.write(comparison_text(reports, recalls))
    out = run.out if run.out.endswith((".json", ".csv")) else f"{run.out}.{run.format}"
    atomic_write_text(out, bench_outputs(run, reports, recalls))
    print(f"config {run.digest()[:16]} -> {out}")
    return 0


COMMANDS = {
    "theory": cmd_theory,
    ("codebook", "build"): cmd_codebook_build,
    ("lut", "build"): cmd_lut_build,
    "quantize": cmd_quantize,
    "dequantize": cmd_dequantize,
    "bench": cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    key = (args.command, args.action) if getattr(args, "action", None) else args.command
    try:
        _apply_threads()
        return COMMANDS[key](args)
    except SphereQError as exc:
        print(f"sphereq: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sphereq: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
