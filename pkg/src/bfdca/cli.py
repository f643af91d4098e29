"""Command-line experiment runner.

Subcommands::

    bfdca prepare --out DIR [--size N --rate R --noise-kind K --noise-level L --seed S]
    bfdca run --data DIR --out DIR --method {bfdca,gs,rs,tpe,restore-fixed}
    bfdca curves TRACE.csv [...] --out curves.csv
    bfdca selfcheck

Settings come from a flat ``key=value`` file (``--config``) and are then
overridden by flags. Exit codes: 0 success, 1 usage error, 2 solver
failure, 3 I/O error.
"""

import argparse
import csv
import hashlib
import json
import logging
import math
from pathlib import Path
import struct
import sys
import time

import numpy as np

from . import dataio
from .baselines import SearchSpace, grid_search, random_search, solve_penalized, tpe_search
from .dataset import Dataset
from .driver import BfdcaConfig, run_bfdca
from .lower import AdmmConfig
from .metrics import nre, psnr, rlne
from .operators import fourier_forward
from .penalty import SubproblemConfig

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
RECORD_MAGIC = b"BFKS"
RECORD_VERSION = 1
TRACE_COLUMNS = ("k_or_trial", "time_s", "rlne", "psnr", "val_err", "eta", "delta",
                 "alpha", "rho", "lambda1_or_r1", "lambda2_or_r2")
METHODS = ("bfdca", "gs", "rs", "tpe", "restore-fixed")

# key -> (type, default); every key may be set in the config file
SETTINGS = {
    "seed": (int, 0),
    "size": (int, 64),
    "rate": (float, 0.57),
    "lines": (int, None),
    "phantom": (str, "shepp_logan"),
    "image": (str, None),
    "corpus": (int, 0),
    "noise_kind": (str, "salt_pepper"),
    "noise_level": (float, 0.01),
    "method": (str, "bfdca"),
    "repeat": (int, 1),
    "tol": (float, 1e-3),
    "max_outer": (int, 500),
    "inner_iter": (int, 100),
    "lower_iter": (int, 3000),
    "admm_iter": (int, 2000),
    "c_alpha": (float, 1.0),
    "delta_alpha": (float, 0.005),
    "alpha_max": (float, 10.0),
    "rho": (float, 1e-3),
    "r1": (float, 0.1),
    "r2": (float, 0.5),
    "lo": (float, -9.0),
    "hi": (float, -3.0),
    "grid_points": (int, 14),
    "budget": (int, 200),
    "lam1": (float, 0.0),
    "lam2": (float, 0.0),
    "train": (int, 10),
    "validation": (int, 10),
    "test": (int, 50),
    "holdout": (float, 0.2),
    "wall_time": (bool, False),
}
# settings that do not change what is computed
NON_SEMANTIC = {"wall_time"}


class UsageError(Exception):
    pass


class SolverError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _convert(key, raw):
    kind, _ = SETTINGS[key]
    if raw is None or raw == "":
        return None
    try:
        if kind is bool:
            if str(raw).lower() in ("1", "true", "yes", "on"):
                return True
            if str(raw).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None


def read_config(path):
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _convert(key, val)
    return out


def resolve(args):
    """Defaults, then the config file, then explicit flags."""
    cfg = {k: d for k, (_, d) in SETTINGS.items()}
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key in SETTINGS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = _convert(key, val)
    if cfg["method"] not in METHODS:
        raise UsageError(f"method must be one of {', '.join(METHODS)}")
    if cfg["repeat"] < 1:
        raise UsageError("repeat must be at least 1")
    return cfg


def config_hash(cfg):
    semantic = {k: v for k, v in sorted(cfg.items()) if k not in NON_SEMANTIC}
    return hashlib.sha256(json.dumps(semantic, sort_keys=True).encode()).hexdigest()


# -- k-space records ------------------------------------------------------

def mask_digest(mask):
    mask = np.asarray(mask, dtype=bool)
    return hashlib.sha256(np.packbits(mask.ravel()).tobytes() + struct.pack("<II", *mask.shape)).digest()


def write_record(path, mask, b):
    """``BFKS``, u32 version, height, width, m, sha256(mask), then m pairs of f8."""
    b = np.asarray(b, dtype=complex)
    h, w = mask.shape
    header = RECORD_MAGIC + struct.pack("<IIII", RECORD_VERSION, h, w, b.size) + mask_digest(mask)
    body = np.stack([b.real, b.imag], axis=1).astype("<f8").tobytes()
    Path(path).write_bytes(header + body)


def read_record(path, mask):
    raw = Path(path).read_bytes()
    if raw[:4] != RECORD_MAGIC or len(raw) < 52:
        raise ValueError(f"{path}: not a k-space record")
    version, h, w, m = struct.unpack("<IIII", raw[4:20])
    if version != RECORD_VERSION:
        raise ValueError(f"{path}: unsupported record version {version}")
    if (h, w) != mask.shape or m != int(mask.sum()):
        raise ValueError(f"{path}: record does not match the mask")
    if raw[20:52] != mask_digest(mask):
        raise ValueError(f"{path}: mask checksum mismatch")
    if len(raw) != 52 + 16 * m:
        raise ValueError(f"{path}: truncated record")
    pairs = np.frombuffer(raw[52:], dtype="<f8").reshape(m, 2)
    return pairs[:, 0] + 1j * pairs[:, 1]


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


# -- prepare --------------------------------------------------------------

def cmd_prepare(cfg, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    noise = dataio.NoiseSpec(cfg["noise_kind"], cfg["noise_level"], seed)
    if cfg["corpus"] > 0:
        images = [dataio.make_random_phantom(cfg["size"], seed=seed * 7919 + i) for i in range(cfg["corpus"])]
        source = {"corpus": cfg["corpus"], "phantom": "random"}
    elif cfg["image"]:
        images = [dataio.load_image(cfg["image"])]
        source = {"image": Path(cfg["image"]).name}
    elif cfg["phantom"] == "shepp_logan":
        images = [dataio.make_shepp_logan(cfg["size"])]
        source = {"phantom": "shepp_logan"}
    elif cfg["phantom"] == "random":
        images = [dataio.make_random_phantom(cfg["size"], seed=seed)]
        source = {"phantom": "random"}
    else:
        raise UsageError(f"unknown phantom {cfg['phantom']!r}")
    h, w = images[0].shape
    if any(img.shape != (h, w) for img in images):
        raise UsageError("all images must share one shape")
    mask = dataio.make_radial_mask(h, w, cfg["rate"], cfg["lines"], seed=seed)
    dataio.save_mask(mask, out / "mask.pgm")
    np.save(out / "truth.npy", np.stack(images))
    files = []
    for i, img in enumerate(images):
        clean = fourier_forward(img, mask)
        spec = dataio.NoiseSpec(noise.kind, noise.level, noise.seed + i)
        b = dataio.add_noise(clean, img, mask, spec) if noise.level > 0 else clean
        name = f"kspace_{i:03d}.bin"
        write_record(out / name, mask, b)
        files.append(name)
        if i == 0:
            dataio.save_image(img, out / "truth.pgm")
    manifest = {
        "version": RECORD_VERSION,
        "kind": "corpus" if cfg["corpus"] > 0 else "single",
        "height": h, "width": w, "m": int(mask.sum()), "rate": cfg["rate"],
        "mask_sha256": mask_digest(mask).hex(),
        "noise": {"kind": noise.kind, "level": noise.level, "seed": noise.seed},
        "seeds": {"mask": seed, "noise": seed},
        "source": source, "records": files,
        "config_hash": config_hash(cfg),
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def load_prepared(data):
    data = Path(data)
    manifest = json.loads((data / "manifest.json").read_text())
    mask = dataio.load_mask(data / "mask.pgm")
    truth = np.load(data / "truth.npy")
    bs = [read_record(data / name, mask) for name in manifest["records"]]
    return manifest, mask, truth, bs


# -- run ------------------------------------------------------------------

def _bfdca_config(cfg):
    return BfdcaConfig(
        c_alpha=cfg["c_alpha"], delta_alpha=cfg["delta_alpha"], alpha_max=cfg["alpha_max"],
        rho0=cfg["rho"], rho_max=cfg["rho"], tol=cfg["tol"], max_outer=cfg["max_outer"],
        r0=(cfg["r1"], cfg["r2"]), lower=AdmmConfig(max_iter=cfg["lower_iter"]),
        inner=SubproblemConfig(max_iter=cfg["inner_iter"]),
    )


def _space(cfg, seed):
    return SearchSpace(cfg["lo"], cfg["hi"], cfg["grid_points"], cfg["budget"], seed)


def _fmt(v):
    if v is None:
        return "nan"
    v = float(v)
    return repr(v) if math.isfinite(v) else str(v)


def _run_single(cfg, method, ds, seed):
    """One run; returns (rows, image, timings, status)."""
    rows, times = [], []
    admm = AdmmConfig(max_iter=cfg["admm_iter"])
    if method == "bfdca":
        trace = run_bfdca(ds, _bfdca_config(cfg))
        for rec in trace.records:
            times.append(rec.wall_time)
            rows.append([rec.k, rec.wall_time, rec.metrics.get("rlne"), rec.metrics.get("psnr"),
                         ds.val_fidelity(rec.z.x), rec.eta, rec.delta, rec.alpha, rec.rho,
                         rec.z.r[0], rec.z.r[1]])
        status = "converged" if trace.converged else "max_outer"
        return rows, trace.z.x, times, status
    if method == "restore-fixed":
        t0 = time.perf_counter()
        sol, _ = solve_penalized(ds, (cfg["lam1"], cfg["lam2"]), admm, return_info=True)
        times.append(time.perf_counter() - t0)
        m = _metrics(sol.x, ds)
        rows.append([0, times[0], m[0], m[1], ds.val_fidelity(sol.x), None, None, None, None,
                     cfg["lam1"], cfg["lam2"]])
        return rows, sol.x, times, "converged" if sol.converged else "max_iter"
    search = {"gs": grid_search, "rs": random_search, "tpe": tpe_search}[method]
    trace = search(ds, _space(cfg, seed), admm)
    for t in trace.trials:
        times.append(t.wall_time)
        rows.append([t.index, t.wall_time, t.metrics.get("rlne"), t.metrics.get("psnr"), t.val_err,
                     None, None, None, None, t.lam[0], t.lam[1]])
    return rows, trace.best_x, times, "converged"


def _metrics(x, ds):
    if ds.ground_truth is None or not np.any(x):
        return None, None
    return rlne(x, ds.ground_truth), psnr(x, ds.ground_truth)


def _stats(vals):
    vals = np.array([v for v in vals if v is not None and math.isfinite(v)], dtype=float)
    if vals.size == 0:
        return {"mean": None, "std": None}
    return {"mean": float(vals.mean()), "std": float(vals.std())}


def _write_trace(path, rows, wall_time):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TRACE_COLUMNS)
        for row in rows:
            row = list(row)
            if not wall_time:
                row[1] = None
            wr.writerow([row[0]] + [_fmt(v) for v in row[1:]])


def cmd_run(cfg, data, out):
    """Run the configured method on a prepared dataset directory."""
    try:
        manifest, mask, truth, bs = load_prepared(data)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot load prepared data from {data}: {exc}") from exc
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    method = cfg["method"]
    if manifest["kind"] == "corpus":
        return _run_corpus(cfg, manifest, mask, truth, bs, out)

    ds = Dataset.single(mask, bs[0], ground_truth=truth[0])
    summaries = []
    final = None
    for rep in range(cfg["repeat"]):
        seed = cfg["seed"] + rep
        try:
            rows, x, times, status = _run_single(cfg, method, ds, seed)
        except (ValueError, FloatingPointError, ArithmeticError) as exc:
            _write_json(out / "summary.json", {"method": method, "status": "failed", "error": str(exc),
                                               "config_hash": config_hash(cfg)})
            raise SolverError(str(exc)) from exc
        suffix = "" if cfg["repeat"] == 1 else f"_{rep:02d}"
        _write_trace(out / f"trace{suffix}.csv", rows, cfg["wall_time"])
        r, p = _metrics(x, ds)
        summaries.append({"rlne": r, "psnr": p, "val_err": ds.val_fidelity(x),
                          "time_s": times[-1] if times else 0.0, "status": status, "seed": seed})
        if rep == 0:
            final = x
    dataio.save_image(np.clip(final, 0.0, 1.0), out / "restored.pgm")
    np.save(out / "restored.npy", final)
    summary = {
        "method": method,
        "status": "ok" if all(s["status"] in ("converged",) for s in summaries) else summaries[0]["status"],
        "repeat": cfg["repeat"],
        "rlne": summaries[0]["rlne"],
        "psnr": summaries[0]["psnr"],
        "nre": nre(truth[0], bs[0], mask),
        "time_s": summaries[0]["time_s"] if cfg["wall_time"] else None,
        "metrics": {k: _stats([s[k] for s in summaries]) for k in ("rlne", "psnr", "val_err")},
        "runs": [{k: v for k, v in s.items() if k != "time_s"} for s in summaries],
        "seeds": {"run": cfg["seed"], "data": manifest["seeds"]},
        "config_hash": config_hash(cfg),
        "data_hash": manifest["config_hash"],
    }
    if cfg["wall_time"]:
        summary["metrics"]["time_s"] = _stats([s["time_s"] for s in summaries])
    _write_json(out / "summary.json", summary)
    return summary


def _run_corpus(cfg, manifest, mask, truth, bs, out):
    from .protocol import run_protocol

    method = cfg["method"]
    if method == "restore-fixed":
        raise UsageError("restore-fixed does not apply to a corpus")
    counts = (cfg["train"], cfg["validation"], cfg["test"])
    res = run_protocol(list(truth), mask, bs, counts, method, cfg["repeat"], cfg["seed"],
                       cfg["holdout"], _bfdca_config(cfg), _space(cfg, cfg["seed"]),
                       AdmmConfig(max_iter=cfg["admm_iter"]))
    with open(out / "protocol.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("repeat", "seed", "lambda1", "lambda2", "time_s", "val_err", "test_err"))
        for row in res.rows:
            t = row["time_s"] if cfg["wall_time"] else None
            wr.writerow((row["repeat"], row["seed"], _fmt(row["lam"][0]), _fmt(row["lam"][1]),
                         _fmt(t), _fmt(row["val_err"]), _fmt(row["test_err"])))
    stats = res.summary()
    if not cfg["wall_time"]:
        stats.pop("time_s")
    summary = {
        "method": method, "status": "ok", "repeat": cfg["repeat"], "counts": list(counts),
        "metrics": stats, "seeds": {"run": cfg["seed"], "data": manifest["seeds"]},
        "config_hash": config_hash(cfg), "data_hash": manifest["config_hash"],
    }
    _write_json(out / "summary.json", summary)
    return summary


# -- curves ---------------------------------------------------------------

def cmd_curves(paths, out):
    """Merge traces into long format ``method, axis, x, metric, y``.

    Search traces are turned into best-so-far curves. The time axis is
    ``nan`` unless the run recorded wall times (``--wall-time``).
    """
    rows = []
    for path in paths:
        path = Path(path)
        with open(path, newline="") as fh:
            table = list(csv.DictReader(fh))
        if not table:
            raise ValueError(f"{path}: empty trace")
        if set(TRACE_COLUMNS) - set(table[0]):
            raise ValueError(f"{path}: malformed trace")
        summary_path = path.parent / "summary.json"
        method = json.loads(summary_path.read_text())["method"] if summary_path.exists() else path.stem
        times = [float(r["time_s"]) for r in table]
        for metric in ("psnr", "rlne"):
            ys = np.array([float(r[metric]) for r in table])
            if method in ("gs", "rs", "tpe"):
                ys = np.fmax.accumulate(ys) if metric == "psnr" else np.fmin.accumulate(ys)
            for axis, xs in (("time", times), ("iteration", [int(r["k_or_trial"]) for r in table])):
                for x, y in zip(xs, ys):
                    rows.append((method, axis, _fmt(x) if axis == "time" else x, metric, _fmt(y)))
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("method", "axis", "x", "metric", "y"))
        wr.writerows(rows)
    return len(rows)


# -- selfcheck ------------------------------------------------------------

def cmd_selfcheck():
    """Quick invariant checks on small random instances; returns failures."""
    from .lower import project_l1_ball, solve_lower
    from .metrics import equivalence_roundtrip
    from .operators import diff_adjoint, diff_forward, fourier_adjoint, haar_adjoint, haar_forward

    rng = np.random.default_rng(0)
    failures = []

    def check(name, ok):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        if not ok:
            failures.append(name)

    x = rng.standard_normal((8, 8))
    mask = rng.random((8, 8)) < 0.5
    mask[0, 0] = True
    y = rng.standard_normal(int(mask.sum())) + 1j * rng.standard_normal(int(mask.sum()))
    # real inner product: the adjoint maps back to real images
    lhs = np.vdot(y, fourier_forward(x, mask)).real
    check("fourier adjoint", abs(lhs - np.vdot(fourier_adjoint(y, mask), x).real) < 1e-10)
    check("haar orthonormal", np.allclose(haar_adjoint(haar_forward(x)), x, atol=1e-12))
    g = rng.standard_normal((2, 8, 8))
    check("difference adjoint", abs(np.vdot(g, diff_forward(x)) - np.vdot(diff_adjoint(g), x)) < 1e-10)
    v = rng.standard_normal(40)
    p = project_l1_ball(v, 3.0)
    check("l1 projection feasible", np.abs(p).sum() <= 3.0 + 1e-10)
    ds = Dataset.single(mask, y)
    rt = equivalence_roundtrip(ds, (0.05, 0.05))
    check("penalized/constrained round trip", rt.relative() <= 1e-3)
    r = np.array([2.0, 3.0])
    low = solve_lower(ds, r, AdmmConfig(max_iter=20000, primal_tol=1e-9, dual_tol=1e-9))
    ok = True
    for i in range(2):
        for sgn in (1, -1):
            rp = r.copy()
            rp[i] += sgn * 1e-3
            hp = solve_lower(ds, rp, AdmmConfig(max_iter=20000, primal_tol=1e-9, dual_tol=1e-9)).value
            ok &= hp >= low.value - float(low.xi @ (rp - r)) - 1e-6
    check("value-function subgradient", ok)
    return failures


# -- entry point ----------------------------------------------------------

def build_parser():
    p = _Parser(prog="bfdca", description="Bilevel DC restoration experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config")
        sp.add_argument("--seed")
        sp.add_argument("--out", required=True)
        sp.add_argument("--verbose", action="store_true")

    sp = sub.add_parser("prepare", help="simulate measurements")
    common(sp)
    sp.add_argument("--size")
    sp.add_argument("--rate")
    sp.add_argument("--noise-kind", dest="noise_kind")
    sp.add_argument("--noise-level", dest="noise_level")
    sp.add_argument("--image")
    sp.add_argument("--corpus")

    sp = sub.add_parser("run", help="run a method on prepared data")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--repeat")
    sp.add_argument("--tol")
    sp.add_argument("--max-outer", dest="max_outer")
    sp.add_argument("--budget")
    sp.add_argument("--grid-points", dest="grid_points")
    sp.add_argument("--wall-time", dest="wall_time", action="store_const", const="true")

    sp = sub.add_parser("curves", help="merge traces into plot-ready CSV")
    sp.add_argument("traces", nargs="+")
    sp.add_argument("--out", required=True)

    sub.add_parser("selfcheck", help="run invariant checks on a small instance")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "prepare":
            m = cmd_prepare(resolve(args), args.out)
            print(f"prepared {m['kind']} data: {m['height']}x{m['width']}, m = {m['m']}")
        elif args.command == "run":
            s = cmd_run(resolve(args), args.data, args.out)
            print(json.dumps({k: s[k] for k in ("method", "status") if k in s}))
        elif args.command == "curves":
            partial = Path(args.out)
            try:
                n = cmd_curves(args.traces, partial)
            except ValueError:
                if partial.exists():
                    partial.unlink()
                raise
            print(f"wrote {n} rows to {args.out}")
        else:
            return EXIT_SOLVER if cmd_selfcheck() else EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if args.command == "curves" else EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
