"""Command-line front end.

    nnkernels COMMAND --config cfg.kv --out DIR [--seed N] [--threads N]
                      [--override key=value ...]

Configs are flat ``key = value`` text with dotted prefixes.  Every run
writes ``results.csv`` (comma, '.' decimal, LF), ``summary.kv``, and
``manifest.kv`` (the resolved config) into the output directory; reruns
with identical config and seed are byte-identical.

Exit codes: 0 success (and, for ``compare``, all checks passed),
1 a comparison check failed, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__, curves, dynamics, empirical, feature, gpr, kernels, spectral, textio


class ConfigError(Exception):
    pass


REQUIRED = object()

_NET_KEYS = {
    "net.depth": (int, 2),
    "net.activation": (str, "erf"),
    "net.patch_count": (int, 1),
    "net.weight_var": (float, 1.0),
    "net.readout_var": (float, 1.0),
    "net.chi": (float, 1.0),
    "net.channels": (int, 1),
}
_DATA_KEYS = {
    "data.kind": (str, "gaussian_iid"),
    "data.d": (int, REQUIRED),
    "data.n": (int, REQUIRED),
    "data.scale": (float, 1.0),
    "data.file": (str, ""),
    "data.label_column": (str, ""),
}
_SPECTRUM_KEYS = {
    "spectrum.alpha": (float, 1.0),
    "spectrum.lambda1": (float, 1.0),
    "spectrum.count": (int, 20000),
}
_TARGET_KEYS = {
    "target.kind": (str, "aligned"),  # aligned | uniform | power
    "target.exponent": (float, 1.0),
    "target.norm": (float, 1.0),
}
_SWEEP_KEYS = {
    "sweep.p_min": (int, 16),
    "sweep.p_max": (int, 4096),
    "sweep.p_count": (int, 9),
}

SCHEMAS = {
    "kernel": {**_NET_KEYS, **_DATA_KEYS, "kernel.type": (str, "nngp")},
    "spectrum": {**_NET_KEYS, **_DATA_KEYS, "kernel.type": (str, "nngp")},
    "gpr": {
        **_NET_KEYS,
        **_DATA_KEYS,
        "kernel.type": (str, "nngp"),
        "gpr.kappa2": (float, REQUIRED),
        "test.n": (int, 64),
        "target.kind": (str, "single_index_linear"),
        "target.cubic_coeff": (float, 0.1),
    },
    "curve": {
        **_SPECTRUM_KEYS,
        **_TARGET_KEYS,
        **_SWEEP_KEYS,
        "curve.kappa2": (float, 0.0),
        "curve.ridge_mode": (str, "effective"),  # effective | rg
        "rg.epsilon": (float, 0.01),
    },
    "rg": {
        **_SPECTRUM_KEYS,
        **_TARGET_KEYS,
        "rg.P": (int, REQUIRED),
        "rg.kappa2": (float, 0.0),
        "rg.epsilon": (float, 0.01),
    },
    "scalinglaw": {
        "scaling.alphas": (str, "0.5,1,2"),
        "scaling.count": (int, 2_000_000),
        "scaling.kappa2_ek": (float, 1.0),
        **_SWEEP_KEYS,
    },
    "featscale": {
        **_SPECTRUM_KEYS,
        **_TARGET_KEYS,
        **_SWEEP_KEYS,
        "featscale.kappa2": (float, REQUIRED),
        "featscale.N": (float, REQUIRED),
    },
    "adapt": {
        "adapt.S": (int, REQUIRED),
        "adapt.N_w": (int, REQUIRED),
        "adapt.C": (int, REQUIRED),
        "adapt.chi": (float, REQUIRED),
        "adapt.kappa2": (float, 0.01),
        "adapt.activation": (str, "linear"),
        **_SWEEP_KEYS,
    },
    "dynamics": {
        **_DATA_KEYS,
        "net.activation": (str, "linear"),
        "net.patch_count": (int, 1),
        "dyn.eta": (float, 1.0),
        "dyn.kappa2": (float, REQUIRED),
        "dyn.chi": (float, 1.0),
        "dyn.sigma_a2": (float, 1.0),
        "dyn.sigma_w2": (float, 1.0),
        "dyn.steps": (int, 400),
        "dyn.t_end": (float, 0.0),  # 0 -> default horizon
        "target.kind": (str, "single_index_linear"),
    },
    "train": {
        **_NET_KEYS,
        **_DATA_KEYS,
        "test.n": (int, 64),
        "target.kind": (str, "single_index_linear"),
        "train.temperature": (float, REQUIRED),
        "train.step_size": (float, 0.0),  # 0 -> auto from NTK spectrum
        "train.steps": (int, 2000),
        "train.burn_in": (int, 1000),
        "train.thin": (int, 10),
        "train.n_seeds": (int, 8),
    },
    "compare": {
        **_NET_KEYS,
        **_DATA_KEYS,
        "data.d": (int, 10),
        "data.n": (int, 64),
        **_SPECTRUM_KEYS,
        **_TARGET_KEYS,
        "compare.mode": (str, "gpr-vs-train"),  # gpr-vs-train | theory-vs-mc
        "compare.tolerance": (float, 0.1),
        "compare.kappa2": (float, 0.01),
        "compare.P": (int, 32),
        "compare.draws": (int, 500),
        "test.n": (int, 64),
        "target.kind": (str, "single_index_linear"),
        "train.step_size": (float, 0.0),
        "train.steps": (int, 2000),
        "train.burn_in": (int, 1000),
        "train.thin": (int, 10),
        "train.n_seeds": (int, 8),
    },
}


def _resolve(command: str, raw: dict) -> dict:
    schema = SCHEMAS[command]
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = {}
    for key, (typ, default) in schema.items():
        if key in raw:
            try:
                cfg[key] = typ(raw[key])
            except ValueError as e:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({e})") from None
        elif default is REQUIRED:
            raise ConfigError(f"missing required config key {key}")
        else:
            cfg[key] = default
    return cfg


def _net_spec(cfg: dict, d: int) -> kernels.NetworkSpec:
    return kernels.NetworkSpec(
        depth=cfg.get("net.depth", 2),
        input_dim=d,
        patch_count=cfg.get("net.patch_count", 1),
        activation=cfg.get("net.activation", "erf"),
        weight_var=cfg.get("net.weight_var", 1.0),
        readout_var=cfg.get("net.readout_var", 1.0),
        chi=cfg.get("net.chi", 1.0),
        channels=cfg.get("net.channels", 1),
    )


def _load_data(cfg: dict, seed: int):
    """Measure plus optional file-based labels (label column by header name)."""
    if cfg.get("data.file"):
        M = textio.read_matrix(cfg["data.file"], header=False)
        with open(cfg["data.file"]) as fh:
            header = fh.readline().strip().split(",")
        body = M if not any(not _is_float(h) for h in header) else None
        if body is None:  # first line was a header
            names = header
            body = textio.read_matrix(cfg["data.file"], header=True)
        else:
            names = [f"c{i}" for i in range(M.shape[1])]
        y = None
        if cfg.get("data.label_column"):
            col = cfg["data.label_column"]
            if col not in names:
                raise ConfigError(f"label column {col!r} not in data header")
            j = names.index(col)
            y = body[:, j]
            body = np.delete(body, j, axis=1)
        meas = spectral.DataMeasure.uniform(body)
        return meas, y
    meas = empirical.make_synthetic(
        cfg["data.kind"], cfg["data.d"], cfg["data.n"], seed, scale=cfg.get("data.scale", 1.0)
    )
    return meas, None


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _unit_teacher(d: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 7], dtype=np.uint64)))
    w = rng.standard_normal(d)
    return w / np.linalg.norm(w)


def _spectrum_and_target(cfg: dict):
    lam = spectral.powerlaw_spectrum(
        cfg["spectrum.alpha"], cfg["spectrum.lambda1"], cfg["spectrum.count"]
    )
    m = lam.size
    kind = cfg.get("target.kind", "aligned")
    if kind == "aligned":  # unit-RKHS-norm target tracing the spectrum
        y = np.sqrt(lam)
        y /= np.linalg.norm(y)
    elif kind == "uniform":
        y = np.full(m, 1.0 / np.sqrt(m))
    elif kind == "power":
        y = np.arange(1, m + 1, dtype=float) ** (-cfg.get("target.exponent", 1.0))
        y /= np.linalg.norm(y)
    else:
        raise ConfigError(f"unknown target.kind {kind!r} for spectral commands")
    return lam, cfg.get("target.norm", 1.0) * y


def _p_sweep(cfg: dict) -> np.ndarray:
    ps = np.unique(
        np.round(
            np.geomspace(cfg["sweep.p_min"], cfg["sweep.p_max"], cfg["sweep.p_count"])
        ).astype(int)
    )
    return ps[ps > 0]


def _loglog_slope(P: np.ndarray, L: np.ndarray) -> float:
    return float(np.polyfit(np.log(P), np.log(L), 1)[0])


# ---------------------------------------------------------------- commands


def _cmd_kernel(cfg, seed):
    meas, _ = _load_data(cfg, seed)
    spec = _net_spec(cfg, meas.points.shape[1])
    K = (
        kernels.nngp_kernel(spec, meas.points)
        if cfg["kernel.type"] == "nngp"
        else kernels.ntk_kernel_2layer(spec, meas.points)
    )
    rows = [list(r) for r in K.entries]
    header = [f"k{j}" for j in range(K.n)]
    return header, rows, {"n": K.n, "trace": float(np.trace(K.entries))}


def _cmd_spectrum(cfg, seed):
    meas, _ = _load_data(cfg, seed)
    spec = _net_spec(cfg, meas.points.shape[1])
    K = (
        kernels.nngp_kernel(spec, meas.points)
        if cfg["kernel.type"] == "nngp"
        else kernels.ntk_kernel_2layer(spec, meas.points)
    )
    dec = spectral.eigendecompose(K, meas)
    rows = [[k + 1, lam] for k, lam in enumerate(dec.eigenvalues)]
    return ["k", "lambda"], rows, {
        "trace": spectral.spectral_budget(dec),
        "clipped": dec.clipped,
        "lambda_top": float(dec.eigenvalues[0]),
    }


def _cmd_gpr(cfg, seed):
    meas, y_file = _load_data(cfg, seed)
    X = meas.points
    d = X.shape[1]
    spec = _net_spec(cfg, d)
    if y_file is None:
        w = _unit_teacher(d, seed)
        y = empirical.make_target(cfg["target.kind"], X, w, cubic_coeff=cfg["target.cubic_coeff"])
    else:
        y = y_file
        w = None
    test = empirical.make_synthetic(cfg["data.kind"], d, cfg["test.n"], seed + 1, scale=cfg["data.scale"]).points
    both = np.vstack([X, test])
    Kfull = (
        kernels.nngp_kernel(spec, both)
        if cfg["kernel.type"] == "nngp"
        else kernels.ntk_kernel_2layer(spec, both)
    ).entries
    P = X.shape[0]
    post = gpr.gpr_predict(Kfull[:P, :P], Kfull[P:, :P], np.diag(Kfull)[P:], y, cfg["gpr.kappa2"])
    rows = [[i, m, v] for i, (m, v) in enumerate(zip(post.mean, post.variance))]
    summary = {
        "train_rmse": float(np.sqrt(np.mean(post.train_residuals**2))),
        "jitter": post.jitter,
    }
    if w is not None:
        y_test = empirical.make_target(cfg["target.kind"], test, w, cubic_coeff=cfg["target.cubic_coeff"])
        summary["test_mse"] = float(np.mean((post.mean - y_test) ** 2))
    return ["point_index", "mean", "variance"], rows, summary


def _cmd_curve(cfg, seed):
    lam, y_k = _spectrum_and_target(cfg)
    rows = []
    for P in _p_sweep(cfg):
        if cfg["curve.ridge_mode"] == "rg":
            flow = curves.rg_flow(lam, y_k, int(P), cfg["curve.kappa2"], cfg["rg.epsilon"])
            kept = slice(0, flow.cutoff_index)
            pred = curves.learning_curve(lam[kept], y_k[kept], int(P), flow.kappa_rg2)
            pred.bias += flow.absorbed_target  # integrated-out modes stay unlearned
            rows.append([int(P), flow.kappa_rg2, pred.D, pred.bias, pred.variance, pred.total])
        else:
            pred = curves.learning_curve(lam, y_k, int(P), cfg["curve.kappa2"])
            rows.append([int(P), pred.kappa_eff2, pred.D, pred.bias, pred.variance, pred.total])
    arr = np.array(rows)
    slope = _loglog_slope(arr[:, 0], arr[:, 5])
    return ["P", "kappa_eff2", "D", "bias", "variance", "loss"], rows, {"loglog_slope": slope}


def _cmd_rg(cfg, seed):
    lam, y_k = _spectrum_and_target(cfg)
    flow = curves.rg_flow(lam, y_k, cfg["rg.P"], cfg["rg.kappa2"], cfg["rg.epsilon"])
    rows = [[m, r] for m, r in flow.trajectory]
    return ["modes_remaining", "ridge"], rows, {
        "kappa_rg2": flow.kappa_rg2,
        "cutoff_index": flow.cutoff_index,
        "absorbed_target": flow.absorbed_target,
        "epsilon": flow.epsilon,
    }


def _cmd_scalinglaw(cfg, seed):
    alphas = [float(a) for a in cfg["scaling.alphas"].split(",") if a.strip()]
    ps = _p_sweep(cfg)
    rows = []
    for alpha in alphas:
        lam = spectral.powerlaw_spectrum(alpha, 1.0, cfg["scaling.count"])
        # spectrum-aligned target y_k ~ sqrt(lambda_k): ridgeless loss ~ P^-alpha,
        # fixed-ridge EK loss ~ P^(-alpha/(1+alpha))
        y_k = np.sqrt(lam)
        y_k /= np.linalg.norm(y_k)
        for regime in ("ridgeless", "ek"):
            losses = []
            for P in ps:
                if regime == "ridgeless":
                    pred = curves.learning_curve(lam, y_k, int(P), 0.0)
                    losses.append(pred.bias)
                else:
                    pred = curves.ek_predict(lam, y_k, int(P), cfg["scaling.kappa2_ek"])
                    losses.append(pred.bias)
            fitted = -_loglog_slope(ps, np.array(losses))
            predicted = curves.scaling_exponent(alpha, regime)
            rows.append([alpha, regime, predicted, fitted, abs(fitted - predicted)])
    return ["alpha", "regime", "predicted_exponent", "fitted_slope", "abs_error"], rows, {}


def _cmd_featscale(cfg, seed):
    lam, y_k = _spectrum_and_target(cfg)
    rows = []
    for P in _p_sweep(cfg):
        sol = feature.kernel_scaling_solve(
            lam, y_k, int(P), cfg["featscale.kappa2"], cfg["featscale.N"]
        )
        lam_s = lam / sol.Q
        pred = curves.learning_curve(lam_s, y_k, int(P), cfg["featscale.kappa2"])
        rows.append([int(P), sol.C_MF, sol.Q, sol.kappa_eff2, sol.D, pred.total])
    return ["P", "C_MF", "Q", "kappa_eff2", "D", "loss"], rows, {}


def _cmd_adapt(cfg, seed):
    S, Nw, C, chi = cfg["adapt.S"], cfg["adapt.N_w"], cfg["adapt.C"], cfg["adapt.chi"]
    d = S * Nw
    lam_perp = np.full(d, 1.0 / (S * Nw))
    rows = []
    for P in _p_sweep(cfg):
        kappa_eff2 = curves.effective_ridge_solve(lam_perp, int(P), cfg["adapt.kappa2"])
        kappa_eff2 = max(kappa_eff2, 1e-12)
        solver = (
            feature.adaptation_solve_linear
            if cfg["adapt.activation"] == "linear"
            else feature.adaptation_solve_erf
        )
        sol = solver(S, Nw, C, chi, int(P), kappa_eff2)
        learn = feature.predicted_learnability(sol, int(P), kappa_eff2)
        rows.append([int(P), sol.c_star, sol.c_perp, sol.lambda_star, learn, sol.residual])
    return ["P", "c_star", "c_perp", "lambda_star", "learnability", "residual"], rows, {}


def _cmd_dynamics(cfg, seed):
    meas, _ = _load_data(cfg, seed)
    X = meas.points
    d = X.shape[1]
    spec = kernels.NetworkSpec(
        depth=2, input_dim=d, patch_count=cfg["net.patch_count"], activation=cfg["net.activation"]
    )
    w = _unit_teacher(d, seed)
    y = empirical.make_target(cfg["target.kind"], X, w)
    eta, kappa2, chi = cfg["dyn.eta"], cfg["dyn.kappa2"], cfg["dyn.chi"]
    sa2, sw2 = cfg["dyn.sigma_a2"], cfg["dyn.sigma_w2"]
    if cfg["dyn.t_end"] > 0:
        grid = dynamics.TimeGrid.uniform(cfg["dyn.t_end"], cfg["dyn.steps"])
    else:
        grid = dynamics.TimeGrid.default(eta, kappa2, chi, sa2, sw2, cfg["dyn.steps"])
    Phi, dPhi = dynamics.phi_kernels(spec, X, grid, eta, kappa2, chi, sa2, sw2)
    Kx = kernels.patch_gram(X, spec)
    traj = dynamics.msrdj_mean_predictor(Phi, dPhi, Kx, y, grid, eta, kappa2, chi, sa2, sw2)
    Theta0 = dynamics.msrdj_theta0(Phi, dPhi, Kx, sa2, chi)
    K_gp = sa2 * Phi.lag_values[0]
    report = dynamics.limit_checks(traj, grid, Theta0, K_gp, y, kappa2, eta)
    rows = [[t, *f] for t, f in zip(grid.times, traj)]
    header = ["t"] + [f"f_{i + 1}" for i in range(y.size)]
    return header, rows, {
        "ntk_window_end": report.ntk_window_end,
        "ntk_max_rel_dev": report.ntk_max_rel_dev,
        "gpr_final_rel_dev": report.gpr_final_rel_dev,
    }


def _train_stats(cfg, seed):
    meas, _ = _load_data(cfg, seed)
    X = meas.points
    d = X.shape[1]
    spec = _net_spec(cfg, d)
    w = _unit_teacher(d, seed)
    y = empirical.make_target(cfg["target.kind"], X, w)
    test = empirical.make_synthetic(
        cfg["data.kind"], d, cfg["test.n"], seed + 1, scale=cfg["data.scale"]
    ).points
    step = cfg["train.step_size"] or empirical.suggest_step_size(spec, X)
    tc = empirical.TrainingConfig(
        step_size=step,
        temperature=cfg["train.temperature"] if "train.temperature" in cfg else cfg["compare.kappa2"],
        steps=cfg["train.steps"],
        burn_in=cfg["train.burn_in"],
        thin=cfg["train.thin"],
        seeds=tuple(seed * 1000 + i for i in range(cfg["train.n_seeds"])),
    )
    stats = empirical.langevin_train(spec, X, y, test, tc)
    return spec, X, y, test, w, stats, tc


def _cmd_train(cfg, seed):
    spec, X, y, test, w, stats, tc = _train_stats(cfg, seed)
    rows = [[i, m, v] for i, (m, v) in enumerate(zip(stats.mean, stats.variance))]
    y_test = empirical.make_target(cfg["target.kind"], test, w)
    return ["point_index", "mean", "variance"], rows, {
        "equilibrated": stats.equilibrated,
        "split_half_gap": stats.split_half_gap,
        "step_size": tc.step_size,
        "test_mse": float(np.mean((stats.mean - y_test) ** 2)),
    }


def _cmd_compare(cfg, seed):
    mode = cfg["compare.mode"]
    tol = cfg["compare.tolerance"]
    rows = []
    if mode == "gpr-vs-train":
        spec, X, y, test, w, stats, tc = _train_stats(cfg, seed)
        both = np.vstack([X, test])
        K = kernels.nngp_kernel(spec, both).entries
        P = X.shape[0]
        post = gpr.gpr_predict(K[:P, :P], K[P:, :P], np.diag(K)[P:], y, cfg["compare.kappa2"])
        rmse = float(np.sqrt(np.mean((stats.mean - post.mean) ** 2)))
        scale = float(np.sqrt(np.mean(post.mean**2)))
        dev = rmse / max(scale, 1e-300)
        rows.append(["ensemble_mean_vs_gpr_rel_rmse", dev, 0.0, dev, tol, dev < tol])
    elif mode == "theory-vs-mc":
        scfg = dict(cfg)
        if scfg["target.kind"] not in ("aligned", "uniform", "power"):
            scfg["target.kind"] = "aligned"
        lam, y_k = _spectrum_and_target(scfg)
        P = cfg["compare.P"]
        pred = curves.learning_curve(lam, y_k, P, cfg["compare.kappa2"])
        mc = empirical.dataset_averaged_gpr_mc(
            lam, y_k, P, cfg["compare.kappa2"], cfg["compare.draws"], seed
        )
        dev_loss = abs(pred.total - mc.total) / mc.total
        rows.append(["total_loss", pred.total, mc.total, dev_loss, tol, dev_loss < tol])
        v, cross = curves.mode_covariance(lam, P, pred.kappa_eff2, pred.D)
        th_ii = float(np.sum(cross))
        dev_ii = abs(th_ii - mc.type_ii_variance) / mc.type_ii_variance
        rows.append(
            ["type_ii_variance", th_ii, mc.type_ii_variance, dev_ii, 1.5 * tol, dev_ii < 1.5 * tol]
        )
    else:
        raise ConfigError(f"unknown compare.mode {mode!r}")
    ok = all(r[-1] for r in rows)
    return (
        ["quantity", "theory", "oracle", "deviation", "tolerance", "pass"],
        rows,
        {"all_passed": ok},
    )


_HANDLERS = {
    "kernel": _cmd_kernel,
    "spectrum": _cmd_spectrum,
    "gpr": _cmd_gpr,
    "curve": _cmd_curve,
    "rg": _cmd_rg,
    "scalinglaw": _cmd_scalinglaw,
    "featscale": _cmd_featscale,
    "adapt": _cmd_adapt,
    "dynamics": _cmd_dynamics,
    "train": _cmd_train,
    "compare": _cmd_compare,
}


def run(command: str, cfg: dict, out_dir: str, seed: int, threads: int = 1) -> int:
    header, rows, summary = _HANDLERS[command](cfg, seed)
    os.makedirs(out_dir, exist_ok=True)
    textio.write_csv(os.path.join(out_dir, "results.csv"), header, rows)
    textio.write_kv(os.path.join(out_dir, "summary.kv"), summary)
    manifest = {"command": command, "seed": seed, "threads": threads, "version": __version__}
    manifest.update({k: cfg[k] for k in sorted(cfg)})
    textio.write_kv(os.path.join(out_dir, "manifest.kv"), manifest)
    if command == "compare" and not summary.get("all_passed", True):
        return 1
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="nnkernels", description=__doc__)
    ap.add_argument("command", choices=sorted(_HANDLERS))
    ap.add_argument("--config", default=None, help="flat key = value config file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args(argv)

    try:
        raw = textio.read_config(args.config) if args.config else {}
        for item in args.override:
            if "=" not in item:
                raise ConfigError(f"override must be key=value, got {item!r}")
            k, _, v = item.partition("=")
            raw[k.strip()] = v.strip()
        cfg = _resolve(args.command, raw)
    except (ConfigError, OSError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    try:
        return run(args.command, cfg, args.out, args.seed, args.threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError, ValueError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
