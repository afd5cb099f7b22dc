"""Command-line front end: ``mfswitch <command> --config cfg.json --out dir``.

Exit status: 0 on success, 1 when the config or a validation check fails
(no artifacts are written), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import sys

import numpy as np

from . import __version__
from .catalog import TimeFactor
from .chain import averaged_generator, block_stationary, is_irreducible, validate_generator
from .config import ConfigError, load_config, scalar_function
from .flow import gain, simulate
from .functional import CylindricalFunctional, Term, vi_residual
from .measure import DiscreteLaw
from .model import default_time_grid, validate_costs
from .trading import closed_form_diffusion, limit_reduction, strategy_table, threshold_order
from .verify import (
    DiscreteInstance,
    ItoAccumulator,
    dpp_consistency,
    dpp_enumeration_solver,
    dpp_memo_oracle,
    two_scale_convergence,
)

COMMANDS = ("validate", "simulate", "residual", "regions", "reduce", "ito-check", "dpp-check", "converge")
PRNG = "PCG64"


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v) + 0.0, ".17g")
    return str(v)


def csv_bytes(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue().encode("utf-8")


class Failure(Exception):
    """A check failed; the message is reported and nothing is written."""


def grid(d, default):
    if d is None:
        return np.asarray(default, float)
    if isinstance(d, dict):
        return np.linspace(float(d["start"]), float(d["stop"]), int(d["num"]))
    return np.asarray(d, float)


def require(cfg, *names):
    for n in names:
        if getattr(cfg, n) is None:
            raise ConfigError(f"this command needs the {n!r} part of the config")


# ---------------------------------------------------------------- commands


def cmd_validate(cfg):
    rows = []

    def add(name, report):
        rows.append([name, int(bool(report)), report.message if not report else ""])

    if cfg.coeffs is not None:
        if cfg.initial is not None:
            add("coefficients", cfg.coeffs.check(cfg.initial))
            add("rates", cfg.rates.check_domain(cfg.initial.x))
            xs = cfg.initial.x
        else:
            xs = np.linspace(-1.0, 1.0, 5)[:, None]
        T = float(cfg.numerics.get("T", 1.0))
        add("costs", validate_costs(cfg.costs, default_time_grid(T), xs))
    chain = cfg.section("chain")
    if "generator" in chain:
        add("generator", validate_generator(np.asarray(chain["generator"], float)))
    if cfg.two_scale is not None:
        for k, f in enumerate(cfg.two_scale.fast):
            ok = is_irreducible(f)
            rows.append([f"fast_block_{k}_irreducible", int(ok), "" if ok else "fast block is reducible"])
    if cfg.trading is not None:
        rows.append(["trading_spec", 1, ""])
    if not rows:
        raise ConfigError("nothing to validate")
    bad = [r for r in rows if not r[1]]
    if bad:
        raise Failure("; ".join(f"{r[0]}: {r[2]}" for r in bad))
    return {"validate.csv": csv_bytes(["check", "passed", "message"], rows)}


def cmd_simulate(cfg):
    require(cfg, "coeffs", "initial")
    n = cfg.numerics
    flow = simulate(
        cfg.coeffs, cfg.rates, cfg.costs, cfg.policy, cfg.initial, cfg.chain_law,
        int(n.get("N", 1000)), float(n.get("dt", 0.01)), float(n.get("T", 1.0)), cfg.seed,
        record_every=int(n.get("record_every", 1)), initial=n.get("initial", "sample"),
    )
    est = gain(flow, cfg.coeffs)
    xcols = [f"x{c}" for c in range(flow.dim)]
    return {
        "snapshots.csv": csv_bytes(["t", "particle", *xcols, "mode", "chain_state"], flow.snapshot_rows()),
        "events.csv": csv_bytes(["t", "particle", "from_mode", "to_mode", *xcols, "cost"], flow.event_rows()),
        "summary.csv": csv_bytes(["gain", "stderr", "n_events", "n_particles"], [[est.value, est.stderr, len(flow.events), flow.n_particles]]),
    }


def _law_for_moments(psi, v1, v0):
    """Two-atom law with psi-moments v1 (mode 1) and v0 (mode 0)."""
    if psi.kind != "affine" or psi.params[0] == 0:
        raise ConfigError("residual sweeps need an invertible affine psi")
    a, b = psi.params
    atoms = [(v, i) for v, i in ((v1, 1), (v0, 0)) if v > 0]
    if not atoms:
        raise ConfigError("at least one moment must be positive")
    w = 1.0 / len(atoms)
    x = np.array([[(v / w - b) / a] for v, _ in atoms])
    return DiscreteLaw(x, np.array([i for _, i in atoms]), np.full(len(atoms), w))


def cmd_residual(cfg):
    require(cfg, "trading")
    spec = cfg.trading
    sec = cfg.section("residual")
    v1s = grid(sec.get("v1"), np.linspace(0.5, 5.0, 10))
    v0s = grid(sec.get("v0"), np.linspace(0.5, 5.0, 10))
    if spec.n_chain != 2:
        raise ConfigError("residual sweeps use the two-state spec")
    ls = grid(sec.get("l1"), np.linspace(0.0, 1.0, 5))
    t = float(sec.get("t", 0.0))
    K = int(cfg.numerics.get("K", 20))
    band = float(sec.get("kink_band", 1e-6))
    u = spec.candidate()
    coeffs = spec.coefficients()
    rf = spec.rate_function()
    g = spec.costs()
    rows = []
    for v1 in v1s:
        for v0 in v0s:
            m = _law_for_moments(spec.psi, v1, v0)
            for l1 in ls:
                l = np.array([1.0 - l1, l1])
                r = vi_residual(u, t, m, l, coeffs, rf, g, K=K)
                kink = bool(np.any(np.abs(v1 - spec.a1) <= band) or np.any(np.abs(v0 - spec.a0) <= band))
                rows.append([t, v1, v0, *l, r.diffusion, r.obstacle_gap, r.minimum, int(kink),
                             closed_form_diffusion(spec, v1, v0, l)])
    header = ["t", "v1", "v0", "l_0", "l_1", "diffusion_residual", "obstacle_gap", "min", "kink_flag", "closed_form"]
    return {"residual.csv": csv_bytes(header, rows)}


def cmd_regions(cfg):
    require(cfg, "trading")
    spec = cfg.trading
    sec = cfg.section("regions")
    hi = float(max(spec.a1.max(), spec.a0.max()) * 2)
    v1s = grid(sec.get("v1"), np.linspace(0.0, hi, 50))
    v0s = grid(sec.get("v0"), np.linspace(0.0, hi, 50))
    table = strategy_table(spec, v1s, v0s)
    order = threshold_order(spec)
    return {
        "regions.csv": csv_bytes(["v1", "v0", "q", "action", "long"], table.rows()),
        "boundaries.csv": csv_bytes(["q", "a1", "a0"], [[b["q"], b["a1"], b["a0"]] for b in table.boundaries]),
        "summary.csv": csv_bytes(["nesting_violations"], [[table.nesting_violations(order)]]),
    }


def cmd_reduce(cfg):
    if cfg.two_scale is None:
        raise ConfigError("reduce needs chain.two_scale or a four-state trading section")
    spec = cfg.two_scale
    Q = averaged_generator(spec)
    out = {
        "averaged_generator.csv": csv_bytes([f"to_{k}" for k in range(Q.shape[1])], Q.tolist()),
        "stationary.csv": csv_bytes(
            ["block", "state", "weight"],
            [[k, s, w] for k, v in enumerate(block_stationary(spec)) for s, w in enumerate(v)],
        ),
    }
    if cfg.trading is not None and cfg.trading.two_scale is not None:
        reduced = limit_reduction(cfg.trading, cfg.section("reduce").get("collapse"))
        out["limit_thresholds.csv"] = csv_bytes(
            ["block", "a1", "a0"], [[k, reduced.a1[k], reduced.a0[k]] for k in range(reduced.n_chain)]
        )
    return out


def functional_from_dict(d, n_chain, n_modes):
    basis = [(b.get("mode"), scalar_function(b["psi"])) for b in d["basis"]]
    terms = []
    for t in d["terms"]:
        terms.append(Term(
            t["kind"], int(t["index"]), t.get("coef", 1.0), t.get("level", 0.0), int(t.get("index2", 0)),
            TimeFactor.from_dict(t.get("time", {})),
        ))
    return CylindricalFunctional(basis, terms, int(d.get("n_chain", n_chain)), n_modes)


def cmd_ito(cfg):
    require(cfg, "coeffs", "initial")
    sec = cfg.section("ito")
    if "functional" not in sec:
        raise ConfigError("ito-check needs ito.functional")
    u = functional_from_dict(sec["functional"], cfg.coeffs.n_chain, cfg.coeffs.n_modes)
    n = cfg.numerics
    acc = ItoAccumulator(u, cfg.coeffs, cfg.rates, float(sec.get("kink_band", 0.0)))
    simulate(
        cfg.coeffs, cfg.rates, cfg.costs, cfg.policy, cfg.initial, cfg.chain_law,
        int(n.get("N", 1000)), float(n.get("dt", 0.01)), float(n.get("T", 1.0)), cfg.seed,
        record_every=1, observer=acc,
    )
    rep = acc.report(sec.get("constant"))
    rows = [[k, v] for k, v in rep.terms().items()]
    if rep.budget is not None:
        rows.append(["budget", rep.budget])
    return {"ito.csv": csv_bytes(["term", "value"], rows)}


def cmd_dpp(cfg):
    sec = cfg.section("dpp")
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k in range(int(sec.get("instances", 5))):
        inst = DiscreteInstance.random(rng, int(sec.get("n_x", 3)), int(sec.get("n_steps", 4)))
        m = inst.random_law(rng)
        l = np.array([0.25, 0.75])
        v, _ = dpp_enumeration_solver(inst, 0, m, l)
        o = dpp_memo_oracle(inst, 0, m, l)
        s = int(sec.get("split", inst.n_steps // 2))
        rows.append([k, v, o, int(v == o), dpp_consistency(inst, 0, s, m, l)])
    return {"dpp.csv": csv_bytes(["instance", "value_enumeration", "value_memo", "equal", "consistency_gap"], rows)}


def cmd_converge(cfg):
    if cfg.two_scale is None:
        raise ConfigError("converge needs chain.two_scale or a four-state trading section")
    sec = cfg.section("converge")
    tab = two_scale_convergence(
        cfg.two_scale, sec.get("epsilons", [1.0, 0.1, 0.01]), (), None,
        int(sec.get("n_steps", 100_000)), range(cfg.seed, cfg.seed + int(sec.get("seeds", 10))),
    )
    header = ["epsilon", "ratio_mean", "ratio_se", "ratio_error", "target_ratio", "value_gap"]
    return {
        "converge.csv": csv_bytes(header, tab.rows.tolist()),
        "summary.csv": csv_bytes(["non_increasing"], [[int(tab.non_increasing())]]),
    }


HANDLERS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "residual": cmd_residual,
    "regions": cmd_regions,
    "reduce": cmd_reduce,
    "ito-check": cmd_ito,
    "dpp-check": cmd_dpp,
    "converge": cmd_converge,
}


def versions():
    import scipy
    import sklearn

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "mfswitch": __version__,
    }


def build_parser():
    p = argparse.ArgumentParser(prog="mfswitch", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="master seed, overrides numerics.seed")
    p.add_argument("--threads", type=int, default=1, help="worker count (recorded; runs are single-threaded)")
    return p


def run(command, config_path, out_dir, seed=None, threads=1, stderr=sys.stderr):
    """Execute one command; returns the exit status."""
    if command not in HANDLERS:
        print(f"unknown command {command!r}", file=stderr)
        return 2
    try:
        cfg = load_config(config_path)
        if seed is not None:
            if seed < 0:
                raise ConfigError("seed must be non-negative")
            cfg.numerics["seed"] = seed
        artifacts = HANDLERS[command](cfg)
    except (ConfigError, Failure, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    os.makedirs(out_dir, exist_ok=True)
    for name, data in artifacts.items():
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(data)
    manifest = {
        "command": command,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
        "prng": PRNG,
        "threads": threads,
        "versions": versions(),
        "artifacts": sorted(artifacts),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
