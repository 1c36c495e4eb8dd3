"""Configuration-driven experiment runner.

Every module is exposed as a subcommand::

    qplab evolve        --config run.yaml --out results/
    qplab rotation      ...   cocycle grid scan (rho, lyapunov, sup-norm)
    qplab lyapunov      ...   same scan, lyapunov-named output
    qplab ids           ...   IDS curve + labelled gap table
    qplab thouless      ...   Thouless-formula residual table
    qplab mfunction     ...   m-functions and Borel transform on a z-grid
    qplab kam           ...   reduced pairs over an E list (JSON each)
    qplab transform     ...   spectral-transform table + identity checks
    qplab slope-compare ...   evolve + transform, predicted-vs-measured report
    qplab selftest      ...   fast closed-form checks, exit 0 when green

Configs are YAML (nested key/value tables) validated against CONFIG_SCHEMA;
outputs are deterministic for a fixed config + seed, and every file embeds
the config hash.  Module errors exit nonzero with a machine-readable
{code, message, field} JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import yaml

from . import cocycle, evolve, kam, model, spectral, transform
from .runio import write_csv, write_json, config_hash

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "potential": {
            "type": "object",
            "properties": {
                "preset": {"enum": ["zero", "harper", "two_frequency"]},
                "lam": {"type": "number"},
                "dim": {"type": "integer", "minimum": 1},
                "coeffs": {"type": "array"},
                "radius_r": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "frequency": {
            "type": "object",
            "properties": {
                "omega": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "preset": {"enum": ["golden"]},
                "gamma": {"type": "number", "exclusiveMinimum": 0},
                "tau": {"type": "number"},
            },
        },
        "theta": {"type": "array", "items": {"type": "number"}},
        "seed": {"type": "integer"},
        "threads": {"type": "integer", "minimum": 1},
        "evolve": {"type": "object"},
        "grid": {"type": "object"},
        "ids": {"type": "object"},
        "thouless": {"type": "object"},
        "mfunction": {"type": "object"},
        "kam": {"type": "object"},
        "transform": {"type": "object"},
        "slope_compare": {"type": "object"},
    },
    "additionalProperties": True,
}


class ConfigError(ValueError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message)


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", field="config")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}", field="config")
    import jsonschema

    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        field = "/".join(str(p) for p in exc.absolute_path) or "config"
        raise ConfigError(exc.message, field=field)
    return cfg


def build_potential(cfg: dict) -> model.PotentialSpec:
    pc = cfg.get("potential", {"preset": "zero"})
    r = pc.get("radius_r", 1.0)
    preset = pc.get("preset")
    if preset == "zero":
        return model.zero_potential(pc.get("dim", 1), r)
    if preset == "harper":
        if "lam" not in pc:
            raise ConfigError("harper preset requires lam", field="potential/lam")
        return model.harper(pc["lam"], r)
    if preset == "two_frequency":
        if "lam" not in pc:
            raise ConfigError("two_frequency preset requires lam", field="potential/lam")
        return model.two_frequency(pc["lam"], r)
    if "coeffs" in pc:
        dim = pc.get("dim", 1)
        coeffs = {}
        for entry in pc["coeffs"]:
            *k, c = entry
            if len(k) != dim:
                raise ConfigError(f"coefficient index {k} has wrong dimension",
                                  field="potential/coeffs")
            coeffs[tuple(int(x) for x in k)] = float(c)
        return model.PotentialSpec(dim=dim, coeffs=coeffs, radius_r=r)
    raise ConfigError("potential needs a preset or a coeffs list", field="potential")


def build_frequency(cfg: dict) -> model.Frequency:
    fc = cfg.get("frequency", {"preset": "golden"})
    gamma = fc.get("gamma", 0.1)
    tau = fc.get("tau", 2.0)
    if fc.get("preset") == "golden" or "omega" not in fc:
        return model.golden_frequency(gamma, tau)
    return model.Frequency(np.asarray(fc["omega"], dtype=float), gamma, tau)


def build_theta(cfg: dict, freq: model.Frequency) -> np.ndarray:
    th = cfg.get("theta")
    if th is None:
        return np.zeros(freq.dim)
    th = np.asarray(th, dtype=float)
    if th.size != freq.dim:
        raise ConfigError("theta dimension does not match omega", field="theta")
    return th


def _threads(cfg, args) -> int:
    return args.threads or cfg.get("threads") or os.cpu_count() or 1


# ---------------------------------------------------------------------------
# subcommands


def cmd_evolve(cfg, args, outdir):
    pot, freq = build_potential(cfg), build_frequency(cfg)
    theta = build_theta(cfg, freq)
    ec = cfg.get("evolve", {})
    init = ec.get("initial", {"kind": "delta", "center": 0})
    st = evolve.initial_state(pot, freq, theta, **init)
    rec = evolve.run_evolution(st, ec.get("t_final", 50.0), ec.get("dt_out", 0.5),
                               tol=ec.get("tol", 1e-12))
    path = os.path.join(outdir, ec.get("output", "evolution.csv"))
    write_csv(path, ["t", "l2", "diffusion"],
              [rec.times, rec.l2, rec.diffusion], cfg)
    try:
        slope, err = evolve.fit_slope(rec, ec.get("fit_fraction", 0.5))
    except ValueError:
        slope, err = None, None   # record too short for a fit window
    meta = {
        "slope": slope, "slope_stderr": err,
        "ballistic_violation": evolve.check_ballistic_bound(rec),
        "l2_drift": float(abs(rec.l2[-1] - rec.l2[0])),
        "lr_bound_slope": 2.0 * float(rec.l2[0]),
        "diffusion_at_0": float(rec.diffusion[0]),
        "integrator": rec.meta,
    }
    write_json(os.path.join(outdir, ec.get("meta_output", "evolution_meta.json")),
               meta, cfg)
    return [path]


def _cocycle_scan(cfg, args, outdir, fname):
    pot, freq = build_potential(cfg), build_frequency(cfg)
    theta = build_theta(cfg, freq)
    gc = cfg.get("grid", {})
    E = np.linspace(gc.get("e_min", -2.5), gc.get("e_max", 2.5),
                    gc.get("n_nodes", 201))
    niter = gc.get("niter", 100_000)
    rho, rho_err = cocycle.rotation_number_grid(E, pot, freq, theta, niter,
                                                return_error=True)
    lyap, lyap_err = cocycle.lyapunov_exponent_grid(E, pot, freq, theta, niter,
                                                    return_error=True)
    nmax = gc.get("sup_norm_nmax", 2000)
    sup = (cocycle.boundedness_grid(E, pot, freq, theta, nmax,
                                    gc.get("sup_norm_ntheta", 4))
           if nmax > 0 else np.zeros(E.size))
    path = os.path.join(outdir, fname)
    write_csv(path, ["E", "rho", "rho_err", "lyap", "lyap_err", "sup_norm"],
              [E, rho, rho_err, lyap, lyap_err, sup], cfg)
    return [path]


def cmd_rotation(cfg, args, outdir):
    return _cocycle_scan(cfg, args, outdir,
                         cfg.get("grid", {}).get("output", "rotation.csv"))


def cmd_lyapunov(cfg, args, outdir):
    return _cocycle_scan(cfg, args, outdir,
                         cfg.get("grid", {}).get("output", "lyapunov.csv"))


def cmd_ids(cfg, args, outdir):
    pot, freq = build_potential(cfg), build_frequency(cfg)
    theta = build_theta(cfg, freq)
    ic = cfg.get("ids", {})
    E = np.linspace(ic.get("e_min", -2.5), ic.get("e_max", 2.5),
                    ic.get("n_nodes", 201))
    curve = spectral.ids_curve(E, pot, freq, ic.get("N", 1000),
                               ic.get("theta_samples", 8), theta)
    rho = cocycle.rotation_number_grid(E, pot, freq, theta,
                                       ic.get("niter", 50_000))
    path = os.path.join(outdir, ic.get("output", "ids.csv"))
    write_csv(path, ["E", "k", "rho_over_pi"], [E, curve.k, rho / np.pi], cfg)
    gaps = spectral.gap_detect_and_label(curve, rho, freq, ic.get("l_max", 3))
    d = freq.dim
    cols = [[g.E1 for g in gaps], [g.E2 for g in gaps]]
    header = ["E1", "E2"]
    for a in range(d):
        header.append(f"label_{a}")
        cols.append([int(g.label[a]) for g in gaps])
    header.append("residual")
    cols.append([g.residual for g in gaps])
    gpath = os.path.join(outdir, ic.get("gaps_output", "gaps.csv"))
    write_csv(gpath, header, [np.asarray(c) for c in cols], cfg)
    return [path, gpath]


def cmd_thouless(cfg, args, outdir):
    pot, freq = build_potential(cfg), build_frequency(cfg)
    theta = build_theta(cfg, freq)
    tc = cfg.get("thouless", {})
    E = np.linspace(tc.get("e_min", -1.8), tc.get("e_max", 1.8),
                    tc.get("n_nodes", 21))
    curve = spectral.ids_curve(np.linspace(-3, 3, 11), pot, freq,
                               tc.get("N", 2000), tc.get("theta_samples", 8), theta)
    lyap = cocycle.lyapunov_exponent_grid(E, pot, freq, theta,
                                          tc.get("niter", 100_000))
    resid = np.array([spectral.thouless_residual(e, curve, l)
                      for e, l in zip(E, lyap)])
    path = os.path.join(outdir, tc.get("output", "thouless.csv"))
    write_csv(path, ["E", "lyap", "residual"], [E, lyap, resid], cfg)
    return [path]


def cmd_mfunction(cfg, args, outdir):
    pot, freq = build_potential(cfg), build_frequency(cfg)
    theta = build_theta(cfg, freq)
    mc = cfg.get("mfunction", {})
    re = np.linspace(mc.get("re_min", -2.5), mc.get("re_max", 2.5),
                     mc.get("n_re", 21))
    ims = mc.get("im_values", [0.5, 1.0, 2.0])
    depth = mc.get("depth", 400)
    rows = {k: [] for k in ["re_z", "im_z", "re_mplus", "im_mplus",
                            "re_mminus", "im_mminus", "re_borel", "im_borel"]}
    for b in ims:
        for a in re:
            z = complex(a, b)
            mp = spectral.m_function(z, +1, pot, freq, theta, depth)
            mm = spectral.m_function(z, -1, pot, freq, theta, depth)
            M = spectral.borel_transform(z, mp, mm)
            for key, val in (("re_z", a), ("im_z", b),
                             ("re_mplus", mp.real), ("im_mplus", mp.imag),
                             ("re_mminus", mm.real), ("im_mminus", mm.imag),
                             ("re_borel", M.real), ("im_borel", M.imag)):
                rows[key].append(val)
    path = os.path.join(outdir, mc.get("output", "mfunction.csv"))
    write_csv(path, list(rows), [np.asarray(v) for v in rows.values()], cfg)
    return [path]


def _pair_payload(pair):
    cf = pair.Z.coeffs()
    modes = pair.Z.mode_grids()
    table = []
    mags = np.max(np.abs(cf), axis=(0, 1))
    for idx in np.ndindex(*pair.Z.grid_shape):
        if mags[idx] < 1e-12:
            continue
        k = [int(modes[a][idx[a]]) for a in range(pair.Z.dim)]
        block = cf[(slice(None), slice(None)) + idx]
        table.append({"k_phi": k,
                      "re": block.real.tolist(), "im": block.imag.tolist()})
    return {
        "E": pair.E, "B": np.asarray(pair.B).tolist(), "rho_rep": pair.rho_rep,
        "xi": pair.xi, "history": pair.history, "residual": pair.residual,
        "level": pair.level, "kind": pair.kind, "converged": pair.converged,
        "Z_coefficients": table,
    }


def cmd_kam(cfg, args, outdir):
    pot, freq = build_potential(cfg), build_frequency(cfg)
    kc = cfg.get("kam", {})
    Es = kc.get("e_values")
    if Es is None:
        Es = np.linspace(kc.get("e_min", -1.5), kc.get("e_max", 1.5),
                         kc.get("n_nodes", 7)).tolist()
    jmax = kc.get("jmax", 3)

    def one(E):
        try:
            return kam.reduce_cocycle(float(E), pot, freq, jmax=jmax)
        except kam.KamError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=_threads(cfg, args)) as pool:
        pairs = list(pool.map(one, Es))
    paths = []
    for i, (E, pair) in enumerate(zip(Es, pairs)):
        path = os.path.join(outdir, f"kam_{i:03d}.json")
        if isinstance(pair, kam.KamError):
            write_json(path, {"E": float(E), "error": str(pair)}, cfg)
        else:
            write_json(path, _pair_payload(pair), cfg)
        paths.append(path)
    return paths


def cmd_transform(cfg, args, outdir):
    pot, freq = build_potential(cfg), build_frequency(cfg)
    theta = build_theta(cfg, freq)
    tc = cfg.get("transform", {})
    rng = np.random.default_rng(cfg.get("seed", 0))
    if tc.get("mode", "delta") == "free" or pot.is_zero():
        tab = transform.free_table(tc.get("n_nodes", 2000), tc.get("n_max", 64))
    else:
        tab = transform.build_table(
            pot, freq, theta, n_nodes=tc.get("n_nodes", 2401),
            mode=tc.get("mode", "delta"), n_max=tc.get("n_max", 64),
            niter=tc.get("niter", 100_000), kam_stride=tc.get("kam_stride", 8),
            jmax=tc.get("jmax", 2))
    path = os.path.join(outdir, tc.get("output", "transform.csv"))
    write_csv(path, ["E", "rho", "drho", "weight"],
              [tab.E, tab.rho, tab.drho, tab.weights()], cfg)
    checks = {
        "nodes": tab.nodes, "mode": tab.mode,
        "dropped_gap": tab.dropped_gap,
        "dropped_transversality": tab.dropped_transversality,
        "dropped_kam": tab.dropped_kam,
        "slope_e0": transform.slope_predictor(tab, {0: 1.0}),
        "orthogonality_00": transform.orthogonality_check(tab, 0, 0),
        "oscillatory_M1_8": transform.oscillatory_probe(tab, [1, 2, 4, 8])[0],
    }
    if tc.get("sandwich_vectors", 0) > 0 and tab.n_max >= 10:
        norms = []
        for _ in range(int(tc["sandwich_vectors"])):
            sites = rng.integers(-10, 11, size=5)
            amps = rng.normal(size=5) + 1j * rng.normal(size=5)
            q = {}
            for s, a in zip(sites, amps):
                q[int(s)] = q.get(int(s), 0.0) + a
            scale = np.sqrt(sum(abs(a) ** 2 for a in q.values()))
            q = {n: a / scale for n, a in q.items()}
            norms.append(transform.l2_dphi_norm(tab, transform.apply_transform(tab, q)))
        checks["sandwich_norms"] = norms
    write_json(os.path.join(outdir, tc.get("checks_output", "transform_checks.json")),
               checks, cfg)
    return [path]


def cmd_slope_compare(cfg, args, outdir):
    pot, freq = build_potential(cfg), build_frequency(cfg)
    theta = build_theta(cfg, freq)
    sc = cfg.get("slope_compare", {})
    init = sc.get("initial", {"kind": "delta", "center": 0})
    st = evolve.initial_state(pot, freq, theta, **init)
    rec = evolve.run_evolution(st, sc.get("t_final", 200.0), sc.get("dt_out", 0.5),
                               tol=sc.get("tol", 1e-12))
    slope, err = evolve.fit_slope(rec, sc.get("fit_fraction", 0.5))
    epath = os.path.join(outdir, "evolution.csv")
    write_csv(epath, ["t", "l2", "diffusion"], [rec.times, rec.l2, rec.diffusion], cfg)

    tc = sc.get("transform", {})
    if pot.is_zero():
        tab = transform.free_table(tc.get("n_nodes", 2000), tc.get("n_max", 64))
    else:
        tab = transform.build_table(pot, freq, theta,
                                    n_nodes=tc.get("n_nodes", 2601),
                                    mode=tc.get("mode", "delta"),
                                    n_max=tc.get("n_max", 64),
                                    niter=tc.get("niter", 100_000))
    tpath = os.path.join(outdir, "transform.csv")
    write_csv(tpath, ["E", "rho", "drho", "weight"],
              [tab.E, tab.rho, tab.drho, tab.weights()], cfg)
    amps = transform.as_amplitude_map(
        {i + st.n_lo: a for i, a in enumerate(st.amps) if a != 0})
    predicted = transform.slope_predictor(tab, amps)
    report = {
        "predicted_slope": predicted,
        "measured_slope": slope,
        "measured_stderr": err,
        "ratio": slope / predicted if predicted else float("nan"),
        "rel_mismatch": abs(slope - predicted) / predicted if predicted else float("nan"),
        "t_final": rec.times[-1],
        "fit_fraction": sc.get("fit_fraction", 0.5),
        "retained_nodes": tab.nodes,
        "l2_drift": float(abs(rec.l2[-1] - rec.l2[0])),
        "ballistic_violation": evolve.check_ballistic_bound(rec),
        "lr_bound_slope": 2.0 * float(rec.l2[0]),
        "diffusion_at_0": float(rec.diffusion[0]),
    }
    rpath = os.path.join(outdir, sc.get("report_output", "slope_report.json"))
    write_json(rpath, report, cfg)
    return [epath, tpath, rpath]


def cmd_selftest(cfg, args, outdir):
    fr = model.golden_frequency()
    pot0 = model.zero_potential()
    checks = []

    margin, _ = model.diophantine_margin(fr, 20)
    checks.append(("diophantine_margin positive", margin > 0))
    checks.append(("harper eval at 0", abs(model.eval_potential(model.harper(0.5), [0.0]) - 1.0) < 1e-12))
    checks.append(("zero hull", np.allclose(model.hull_sequence(pot0, fr, [0.0], -3, 3), 0)))

    st = evolve.initial_state(pot0, fr, [0.0])
    checks.append(("diffusion_norm e0", evolve.diffusion_norm(st) == 0.0))
    hq = evolve.apply_hamiltonian(st)
    checks.append(("apply_hamiltonian e0", abs(hq[st.sites.tolist().index(1)] + 1) < 1e-12))
    checks.append(("propagate identity", np.allclose(
        evolve.propagate(st, 0.0, 0).amps, st.amps)))

    A = cocycle.transfer_matrix(0.0, pot0, [0.0])
    checks.append(("transfer matrix det", abs(np.linalg.det(A) - 1) < 1e-12))
    checks.append(("rotation free E=0", abs(
        cocycle.rotation_number(0.0, pot0, fr, [0.0], 2000) - np.pi / 2) < 5e-3))
    checks.append(("lyapunov free E=0", cocycle.lyapunov_exponent(
        0.0, pot0, fr, [0.0], 2000) < 5e-3))

    op = spectral.truncated_operator(pot0, fr, [0.0], 1)
    checks.append(("N=1 eigenvalue", abs(spectral.eigen_spectrum(op)[0]) < 1e-12))
    u1, v1 = spectral.free_classical_transform(1.0, 1)
    checks.append(("classical transform n=1", abs(u1 - 1) < 1e-12 and abs(v1) < 1e-12))
    M = spectral.borel_transform(1j, 1j, 1j)
    checks.append(("borel arithmetic", abs(M - 1j) < 1e-12))

    tab = transform.free_table(200)
    G = transform.apply_transform(tab, {0: 1.0})
    checks.append(("K0 == 0", float(np.max(np.abs(G.g1))) == 0.0))
    checks.append(("J0 == 1", np.allclose(G.g2, 1.0)))
    a, b = transform.apply_transform(tab, {1: 1.0}).g1, None
    checks.append(("K1 == sin rho", np.allclose(a, np.sin(tab.rho))))

    pair = kam.reduce_cocycle(0.0, pot0, fr, jmax=1)
    checks.append(("free reduce residual", pair.residual < 1e-12))
    kind, alpha = kam.eigen_angle(np.array([[0.0, -1.0], [1.0, 0.0]]))
    checks.append(("eigen_angle rotation", kind == "elliptic" and abs(alpha - np.pi / 2) < 1e-12))

    failed = [name for name, ok in checks if not ok]
    for name, ok in checks:
        print(f"{'ok' if ok else 'FAIL'}  {name}")
    if failed:
        raise RuntimeError(f"selftest failures: {failed}")
    return []


COMMANDS = {
    "evolve": cmd_evolve,
    "rotation": cmd_rotation,
    "lyapunov": cmd_lyapunov,
    "ids": cmd_ids,
    "thouless": cmd_thouless,
    "mfunction": cmd_mfunction,
    "kam": cmd_kam,
    "transform": cmd_transform,
    "slope-compare": cmd_slope_compare,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qplab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="YAML config path")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config) if args.config else {}
        if args.seed is not None:
            cfg["seed"] = args.seed
        os.makedirs(args.out, exist_ok=True)
        paths = COMMANDS[args.subcommand](cfg, args, args.out)
        if args.verbose:
            for p in paths:
                print(f"wrote {p}")
            print(f"config hash: {config_hash(cfg)}")
        return 0
    except ConfigError as exc:
        err = {"code": "config", "message": str(exc)}
        if exc.field:
            err["field"] = exc.field
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2
    except Exception as exc:  # module errors -> machine-readable failure
        print(json.dumps({"code": "runtime", "message": f"{type(exc).__name__}: {exc}"},
                         sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
