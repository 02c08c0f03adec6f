"""Command-line front end.

Subcommands: ``pc-solve``, ``validate``, ``gen-data``, ``train``, ``attack``,
``channel``, ``report`` and ``run`` (a JSON plan chaining the stages).

Exit codes: 0 success, 2 infeasible or failed check, 64 usage error,
66 missing input, 70 internal error.  Every command that takes ``--out``
writes into a fresh directory and refuses to touch an existing non-empty
one; it leaves a ``run-manifest.json`` listing its inputs, seeds, settings
and the SHA-256 of every input and output file.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from . import channel as CH
from . import classifiers as C
from . import election as E
from . import synth
from .attacks import pgd, sweep

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NOINPUT, EXIT_INTERNAL = 0, 2, 64, 66, 70

DEMO = {"p_b": 0.45, "delta": 0.04, "n": 100_000, "alpha": 0.05}


class UsageError(Exception):
    pass


class MissingInput(Exception):
    def __init__(self, path):
        super().__init__(f"missing input: {path}")
        self.path = path


class Infeasible(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- helpers


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingInput(p)
    return p


def _load_json(spec: str | None) -> dict:
    """Parse ``--config``: a path to a JSON file, or an inline JSON object."""
    if spec is None:
        return {}
    if spec.lstrip().startswith("{"):
        text = spec
    else:
        text = _require(spec).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON config {spec!r}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return doc


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _tree_hashes(root: Path, skip=("run-manifest.json",)) -> dict[str, str]:
    root = Path(root)
    if root.is_file():
        return {root.name: _sha256(root)}
    return {p.relative_to(root).as_posix(): _sha256(p)
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


def _tree_digest(root: Path) -> str:
    blob = json.dumps(_tree_hashes(root), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _fresh_out(path) -> Path:
    if path is None:
        raise UsageError("--out is required")
    out = Path(path)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise UsageError(f"output directory {out} already exists and is not empty; outputs are write-once")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _rel(path, out: Path) -> str:
    return Path(os.path.relpath(Path(path).resolve(), out.resolve())).as_posix()


def _manifest(out: Path, command: str, inputs: dict, settings: dict) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "inputs": {k: {"path": _rel(p, out), "sha256": _tree_digest(Path(p))}
                   for k, p in sorted(inputs.items())},
        "settings": settings,
        "outputs": _tree_hashes(out),
    }
    _write_json(out / "run-manifest.json", doc)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _f(v, digits=10):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.{digits}g}" if np.isfinite(v) else str(v)
    return str(v)


def _common(p: argparse.ArgumentParser, out_required: bool = False):
    p.add_argument("--config", help="JSON file (or inline JSON object) with settings")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", required=out_required, help="output directory (must be new or empty)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads; results do not depend on it")


# ---------------------------------------------------------------- election


ASSESS_COLUMNS = ["p_b", "delta", "n", "alpha", "z_value", "k0", "k1", "k2", "root_low",
                  "root_high", "p_c_star", "ballots_required", "feasible"]
ELECTION_KEYS = {"p_b", "delta", "n", "alpha", "p_c", "trials", "seed"}


def _election_grid(args, defaults: dict | None) -> list[dict]:
    cfg = _load_json(args.config)
    unknown = set(cfg) - ELECTION_KEYS
    if unknown:
        raise UsageError(f"unknown election config fields: {sorted(unknown)}")
    values = {}
    for key, flag in (("p_b", "pb"), ("delta", "delta"), ("n", "n"), ("alpha", "alpha")):
        given = getattr(args, flag)
        if given:
            values[key] = given
        elif key in cfg:
            values[key] = cfg[key] if isinstance(cfg[key], list) else [cfg[key]]
        elif defaults is not None:
            values[key] = [defaults[key]]
        else:
            raise UsageError(f"missing required --{flag.replace('_', '-')}")
    grid = []
    for pb, dl, n, a in itertools.product(values["p_b"], values["delta"], values["n"], values["alpha"]):
        if int(n) != n or n < 1:
            raise UsageError(f"--n must be a positive integer, got {n}")
        if not 0 < a < 1:
            raise UsageError(f"--alpha must lie in (0, 1), got {a}")
        grid.append({"p_b": float(pb), "delta": float(dl), "n": int(n), "alpha": float(a)})
    return grid, cfg


def _dist(row) -> E.VoteDistribution:
    try:
        return E.VoteDistribution(row["p_b"], row["delta"])
    except E.InvalidDistribution as exc:
        raise UsageError(str(exc)) from None


def _election_flags(p):
    p.add_argument("--pb", type=float, action="append", help="P(vote for B); repeat for a grid")
    p.add_argument("--delta", type=float, action="append", help="margin p_b - p_a; repeatable")
    p.add_argument("--n", type=float, action="append", help="number of ballots; repeatable")
    p.add_argument("--alpha", type=float, action="append", help="failure probability; repeatable")


def cmd_pc_solve(args) -> int:
    grid, _ = _election_grid(args, None)
    rows = []
    for g in grid:
        a = E.solve_pc_star(_dist(g), g["n"], g["alpha"])
        rows.append(a.to_dict())
    text = _csv_text(ASSESS_COLUMNS, [[_f(r[c]) for c in ASSESS_COLUMNS] for r in rows])
    sys.stdout.write(text)
    if args.out is not None:
        out = _fresh_out(args.out)
        (out / "pc_solve.csv").write_text(text)
        _write_json(out / "pc_solve.json", rows)
        _manifest(out, "pc-solve", {}, {"grid": grid})
    bad = [r for r in rows if not r["feasible"]]
    for r in bad:
        print(f"infeasible: no p_c in [0, 1] reaches confidence {1 - r['alpha']:g} for "
              f"p_b={r['p_b']:g}, delta={r['delta']:g}, n={r['n']}", file=sys.stderr)
    return EXIT_FAIL if bad else EXIT_OK


VALIDATE_COLUMNS = ["p_b", "delta", "n", "alpha", "p_c", "p_c_star", "trials", "seed",
                    "rate", "ci_halfwidth", "target", "analytic", "passed"]


def cmd_validate(args) -> int:
    grid, cfg = _election_grid(args, DEMO)
    trials = args.trials if args.trials is not None else int(cfg.get("trials", 10_000))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    forced = args.pc if args.pc is not None else cfg.get("p_c")
    if trials < 1:
        raise UsageError("--trials must be >= 1")
    if forced is not None and not 0 <= forced <= 1:
        raise UsageError("--pc must lie in [0, 1]")
    rows, ok = [], True
    for g in grid:
        dist = _dist(g)
        a = E.solve_pc_star(dist, g["n"], g["alpha"])
        p_c = forced if forced is not None else a.p_c_star
        if forced is None and not a.feasible:
            print(f"infeasible: p_c* = {a.p_c_star} for {g}", file=sys.stderr)
            ok = False
            continue
        rate, ci = E.monte_carlo_success(dist, p_c, g["n"], trials, seed, jobs=args.jobs)
        target = 1 - g["alpha"]
        passed = abs(rate - target) <= 3 * ci
        ok &= passed
        rows.append({**g, "p_c": p_c, "p_c_star": a.p_c_star, "trials": trials, "seed": seed,
                     "rate": rate, "ci_halfwidth": ci, "target": target,
                     "analytic": E.success_probability(dist, p_c, g["n"]), "passed": passed})
        print(f"p_b={g['p_b']:g} delta={g['delta']:g} N={g['n']} alpha={g['alpha']:g}: "
              f"p_c*={a.p_c_star:.8f} p_c={p_c:.8f} rate={rate:.4f} +/- {ci:.4f} "
              f"(target {target:.4f}) {'PASS' if passed else 'FAIL'}")
    text = _csv_text(VALIDATE_COLUMNS, [[_f(r[c]) for c in VALIDATE_COLUMNS] for r in rows])
    if args.out is not None:
        out = _fresh_out(args.out)
        (out / "validate.csv").write_text(text)
        _manifest(out, "validate", {}, {"grid": grid, "trials": trials, "seed": seed,
                                        "p_c": forced})
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- data and models


def cmd_gen_data(args) -> int:
    cfg = _load_json(args.config)
    if args.preset is not None:
        cfg = {"preset": args.preset, **cfg}
    if not cfg:
        cfg = {"preset": "combined-small"}
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        spec = synth.DatasetSpec.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = _fresh_out(args.out)
    ds, manifest = synth.generate_dataset(spec)
    synth.save_dataset(out, ds, manifest, spec)
    counts = {mt: int(np.sum(ds.mark_types == mt)) for mt in spec.counts}
    _manifest(out, "gen-data", {}, {"spec": spec.to_dict(), "spec_hash": spec.hash(),
                                    "seed": spec.seed})
    print(f"wrote {len(ds)} images to {out} ({', '.join(f'{k}={v}' for k, v in counts.items())})")
    return EXIT_OK


MODEL_DEFAULTS = {"linear": {"lr": 0.01, "standardize": True}, "mlp": {}}


def _load_data(path):
    root = _require(path)
    _require(root / "manifest.csv")
    try:
        return synth.load_dataset(root)[0]
    except FileNotFoundError as exc:
        raise MissingInput(str(exc).split(": ", 1)[-1]) from None
    except synth.DatasetError as exc:
        raise UsageError(f"bad dataset: {exc}") from None


def _load_model(path):
    p = _require(path)
    try:
        return C.load_model(p)
    except C.ModelFormatError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    ds = _load_data(args.data)
    cfg = {**MODEL_DEFAULTS[args.model], **_load_json(args.config)}
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        tc = C.TrainConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = _fresh_out(args.out)
    train = ds.split("train")
    val = ds.split("val")
    model, history = C.train(train, args.model, tc, val=val if len(val) else None)
    C.save_model(out / "model.bin", model)
    C.write_history(out / "history.csv", history)
    per_val = C.per_type_table(model, val) if len(val) else []
    CH.write_rows(out / "per_type.csv", ["mark_type", "total", "correct", "accuracy"], per_val)
    train_acc = C.evaluate(model, train)[0]
    val_acc = C.evaluate(model, val)[0] if len(val) else float("nan")
    _write_json(out / "metrics.json", {"model": args.model, "train_acc": train_acc,
                                       "val_acc": val_acc})
    _manifest(out, "train", {"data": args.data}, {"model": args.model, "train": tc.to_dict()})
    print(f"{args.model}: train acc {train_acc:.4f}, val acc {val_acc:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- attacks


def _attack_configs(doc: dict, seed: int | None, steps_scale: float) -> list[pgd.AttackConfig]:
    """Configs from ``{"sweep": name}``, ``{"configs": [...]}`` or one flat config.

    ``direction``, ``loss``, ``seed`` and ``kappa`` at the top level apply to
    every config; ``steps_scale`` only affects named sweeps.
    """
    doc = dict(doc)
    common = {k: doc.pop(k) for k in ("direction", "loss", "seed", "kappa") if k in doc}
    scale = float(doc.pop("steps_scale", steps_scale))
    if seed is not None:
        common["seed"] = seed
    try:
        if "configs" in doc:
            items = doc.pop("configs")
            if doc:
                raise UsageError(f"unknown attack fields: {sorted(doc)}")
            return [pgd.AttackConfig.from_dict({**common, **it}) for it in items]
        if "kind" in doc:
            return [pgd.AttackConfig.from_dict({**common, **doc})]
        name = doc.pop("sweep", "imperceptible")
        if doc:
            raise UsageError(f"unknown attack fields: {sorted(doc)}")
        kw = {"seed": int(common.get("seed", 0)), "direction": common.get("direction", "both"),
              "loss_kind": common.get("loss", "dlr"), "steps_scale": scale,
              "kappa": float(common.get("kappa", sweep.DEFAULT_KAPPA))}
        if name == "imperceptible":
            return sweep.imperceptible_configs(**kw)
        if name == "grids":
            return [c for k in pgd.KINDS for c in sweep.grid_configs(k, **kw)]
        if name.startswith("grid:") and name[5:] in pgd.KINDS:
            return sweep.grid_configs(name[5:], **kw)
        raise UsageError(f"unknown sweep {name!r}; use imperceptible, grids or grid:<kind>")
    except (pgd.AttackConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def cmd_attack(args) -> int:
    model = _load_model(args.model)
    ds = _load_data(args.data)
    configs = _attack_configs(_load_json(args.config), args.seed, args.steps_scale)
    part = ds.split(args.split)
    if len(part) == 0:
        raise UsageError(f"dataset has no {args.split!r} split")
    name = args.name or Path(args.model).parent.name or Path(args.model).stem
    out = _fresh_out(args.out)
    rows, outcomes = sweep.attack_sweep(model, part, configs, carry_forward=not args.no_carry,
                                        jobs=args.jobs, keep_outcomes=True)
    sweep.write_sweep_csv(out / "sweep.csv", rows, {"model": name})
    entries = []
    for j, (cfg, o) in enumerate(zip(configs, outcomes)):
        stem = f"{j:02d}_{cfg.constraint.kind}"
        np.save(out / f"adv_{stem}.npy", o.x_adv)
        np.save(out / f"idx_{stem}.npy", o.eligible)
        entries.append({"index": j, "config": cfg.to_dict(), "budget": sweep.budget_label(cfg),
                        "adv": f"adv_{stem}.npy", "indices": f"idx_{stem}.npy"})
    _write_json(out / "attacks.json", {"model": name, "split": args.split, "attacks": entries})
    _manifest(out, "attack", {"model": args.model, "data": args.data},
              {"split": args.split, "carry_forward": not args.no_carry,
               "configs": [c.to_dict() for c in configs]})
    for r, cfg in zip(rows, configs):
        print(f"{name} {r.kind:8s} {sweep.budget_label(cfg):18s} robust acc {r.robust_accuracy:.3f} "
              f"(n={r.n_eval})")
    return EXIT_OK


# ---------------------------------------------------------------- channel


def cmd_channel(args) -> int:
    model = _load_model(args.model)
    ds = _load_data(args.data)
    adv_dir = _require(args.adv)
    meta = json.loads(_require(adv_dir / "attacks.json").read_text())
    cfg = _load_json(args.config)
    if args.preset is not None:
        cfg = {"preset": args.preset, **cfg}
    if not cfg:
        cfg = {"preset": "laser+scan"}
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        ch = CH.ChannelConfig.from_dict(cfg)
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"bad channel config: {exc}") from None
    name = args.name or meta["model"]
    part = ds.split(meta.get("split", "val"))
    out = _fresh_out(args.out)
    gap, fid = [], []
    label = args.label or cfg.get("preset", "custom")
    for e in meta["attacks"]:
        x_adv = np.load(_require(adv_dir / e["adv"]))
        idx = np.load(_require(adv_dir / e["indices"]))
        adv = CH.AdvSet(part.x[idx], x_adv, part.labels[idx], idx)
        res = CH.physical_evaluation(model, adv, ch)
        m = CH.fidelity_summary(adv, res)
        kind = e["config"]["kind"]
        gap.append({"model": name, "attack": kind, "budget": e["budget"], "n": res.n,
                    "digital_robust_accuracy": res.digital_robust_accuracy,
                    "physical_robust_accuracy": res.robust_accuracy,
                    "channel_clean_accuracy": res.clean_accuracy,
                    "calibration": f"{label}+contrast-calibration (no denoiser)"})
        fid.append({"model": name, "attack": kind, "budget": e["budget"], "n": res.n,
                    "rmse": m.rmse, "kl": m.kl, "ssim": m.ssim})
        print(f"{name} {kind:8s} digital {res.digital_robust_accuracy:.3f} physical "
              f"{res.robust_accuracy:.3f} clean-after-channel {res.clean_accuracy:.3f}")
    CH.write_rows(out / "gap.csv", CH.GAP_COLUMNS, gap)
    CH.write_rows(out / "fidelity.csv", CH.FIDELITY_COLUMNS, fid)
    _manifest(out, "channel", {"model": args.model, "data": args.data, "adv": args.adv},
              {"channel": ch.to_dict(), "label": label})
    return EXIT_OK


# ---------------------------------------------------------------- report


def _read_csv(path: Path) -> list[dict]:
    with open(_require(path), newline="") as fh:
        return list(csv.DictReader(fh))


def _best(scores: dict[str, float]) -> tuple[float, list[str]]:
    """Lowest robust accuracy and every attack reaching it."""
    low = min(scores.values())
    return low, [k for k, v in scores.items() if v == low]


def cmd_report(args) -> int:
    sweeps, gaps, fids = [], [], []
    for d in args.inputs:
        d = _require(d)
        found = False
        if (d / "sweep.csv").is_file():
            rows = _read_csv(d / "sweep.csv")
            meta = json.loads(_require(d / "attacks.json").read_text())
            if len(meta["attacks"]) != len(rows):
                raise UsageError(f"{d}: sweep.csv and attacks.json disagree")
            for r, e in zip(rows, meta["attacks"]):
                r["label"] = f"{r['kind']}[{e['budget']}]"
            sweeps.extend(rows)
            found = True
        for fname, bucket in (("gap.csv", gaps), ("fidelity.csv", fids)):
            if (d / fname).is_file():
                bucket.extend(_read_csv(d / fname))
                found = True
        if not found:
            raise MissingInput(d / "sweep.csv")
    out = _fresh_out(args.out)
    lines = []

    def pivot(rows, value, col):
        models = list(dict.fromkeys(r["model"] for r in rows))
        cols = list(dict.fromkeys(r[col] for r in rows))
        table = {(r["model"], r[col]): float(r[value]) for r in rows}
        return models, cols, table

    def fmt_row(m, cols, table):
        return [f"{table[(m, c)]:.3f}" if (m, c) in table else "" for c in cols]

    if sweeps:
        models, cols, table = pivot(sweeps, "robust_accuracy", "label")
        (out / "table2_digital.csv").write_text(
            _csv_text(["model"] + cols, [[m] + fmt_row(m, cols, table) for m in models]))
        lines.append("Digital robust accuracy (lower means a stronger attack):")
        for m in models:
            low, who = _best({c: table[(m, c)] for c in cols if (m, c) in table})
            lines.append(f"  {m}: most effective digital attack {' = '.join(who)} ({low:.3f})")
    if gaps:
        models, cols, table = pivot(gaps, "physical_robust_accuracy", "attack")
        clean = {r["model"]: float(r["channel_clean_accuracy"]) for r in gaps}
        rows = [[m, f"{clean[m]:.3f}"] + fmt_row(m, cols, table) for m in models]
        (out / "table3_physical.csv").write_text(_csv_text(["model", "clean"] + cols, rows))
        lines.append("Simulated physical robust accuracy (contrast calibration only, no denoiser):")
        l1_best = 0
        for m in models:
            low, who = _best({c: table[(m, c)] for c in cols if (m, c) in table})
            l1_best += "l1" in who
            lines.append(f"  {m}: most effective physical attack {' = '.join(who)} ({low:.3f})")
        lines.append(f"  l1 among the most effective on {l1_best} of {len(models)} models "
                     "(reported, not asserted)")
        dig = [[r["model"], r["attack"], r["budget"], f"{float(r['digital_robust_accuracy']):.3f}",
                f"{float(r['physical_robust_accuracy']):.3f}",
                f"{float(r['physical_robust_accuracy']) - float(r['digital_robust_accuracy']):.3f}"]
               for r in gaps]
        (out / "gap_summary.csv").write_text(_csv_text(
            ["model", "attack", "budget", "digital", "physical", "gap"], dig))
    if fids:
        rows = [[r["model"], r["attack"], r["budget"], f"{float(r['rmse']):.4f}",
                 f"{float(r['kl']):.4f}", f"{float(r['ssim']):.4f}"] for r in fids]
        (out / "table4_fidelity.csv").write_text(_csv_text(
            ["model", "attack", "budget", "rmse", "kl", "ssim"], rows))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    _manifest(out, "report", {f"input{i}": d for i, d in enumerate(args.inputs)}, {})
    print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------- plan


DEFAULT_PLAN = {
    "seed": 0,
    "dataset": {"preset": "combined-small"},
    "models": {"linear-C": {"kind": "linear"}, "mlp-C": {"kind": "mlp"}},
    "attack": {"sweep": "imperceptible"},
    "channel": {"preset": "laser+scan"},
}
PLAN_KEYS = set(DEFAULT_PLAN)


def cmd_run(args) -> int:
    plan = {**DEFAULT_PLAN, **_load_json(args.config)}
    unknown = set(plan) - PLAN_KEYS
    if unknown:
        raise UsageError(f"unknown plan fields: {sorted(unknown)}")
    seed = args.seed if args.seed is not None else int(plan["seed"])
    out = _fresh_out(args.out)
    jobs = ["--jobs", str(args.jobs)]
    data = out / "data"
    steps = [["gen-data", "--config", json.dumps(plan["dataset"]), "--seed", str(seed), "--out", str(data)]]
    reports = []
    for name, spec in plan["models"].items():
        spec = dict(spec)
        kind = spec.pop("kind", "mlp")
        mdir, adir, cdir = out / "models" / name, out / "attacks" / name, out / "channel" / name
        steps.append(["train", "--data", str(data), "--model", kind, "--config", json.dumps(spec),
                      "--seed", str(seed), "--out", str(mdir)])
        steps.append(["attack", "--model", str(mdir / "model.bin"), "--data", str(data), "--name", name,
                      "--config", json.dumps(plan["attack"]), "--seed", str(seed), "--out", str(adir)] + jobs)
        steps.append(["channel", "--model", str(mdir / "model.bin"), "--data", str(data), "--adv", str(adir),
                      "--config", json.dumps(plan["channel"]), "--seed", str(seed), "--out", str(cdir)])
        reports += [str(adir), str(cdir)]
    steps.append(["report", *reports, "--out", str(out / "report")])
    for st in steps:
        print("+ ballotadv " + " ".join(a if " " not in a else repr(a) for a in st[:1] + st[1:]))
        code = main(st)
        if code != EXIT_OK:
            return code
    _manifest(out, "run", {}, {"plan": plan, "seed": seed})
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ballotadv", description="Election-flipping analysis and ballot adversarial attacks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("pc-solve", help="closed-form minimum compromised fraction")
    _election_flags(s)
    _common(s)
    s.set_defaults(func=cmd_pc_solve)

    s = sub.add_parser("validate", help="Monte Carlo check of the closed form")
    _election_flags(s)
    s.add_argument("--trials", type=int)
    s.add_argument("--pc", type=float, help="simulate at this p_c instead of p_c*")
    _common(s)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("gen-data", help="generate a synthetic bubble dataset")
    s.add_argument("--preset", choices=sorted(synth.PRESETS))
    _common(s, out_required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train a classifier on a dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--model", choices=["linear", "mlp"], default="mlp")
    _common(s, out_required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("attack", help="digital attack sweep")
    s.add_argument("--model", required=True, help="model file")
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="val")
    s.add_argument("--name", help="model name used in tables")
    s.add_argument("--steps-scale", type=float, default=1.0, help="multiply default step counts")
    s.add_argument("--no-carry", action="store_true", help="disable success carry-forward")
    _common(s, out_required=True)
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("channel", help="simulated print-scan evaluation of an attack output")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--adv", required=True, help="output directory of the attack command")
    s.add_argument("--preset", choices=sorted(CH.PRESETS))
    s.add_argument("--name")
    s.add_argument("--label", help="channel name used in tables")
    _common(s, out_required=True)
    s.set_defaults(func=cmd_channel)

    s = sub.add_parser("report", help="merge attack and channel outputs into summary tables")
    s.add_argument("inputs", nargs="+", help="attack and channel output directories")
    _common(s, out_required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="run a JSON experiment plan end to end")
    _common(s, out_required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "jobs", 1) is not None and args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if getattr(args, "seed", None) is not None and args.seed < 0:
            raise UsageError("--seed must be non-negative")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except MissingInput as exc:
        print(f"ballotadv: {exc}", file=sys.stderr)
        return EXIT_NOINPUT
    except Infeasible as exc:
        print(f"ballotadv: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
