"""Command-line entry point.

Subcommands: generate, sample, compare, diagnose. Exit codes are a stable
contract: 0 success, 2 config error, 3 runtime divergence, 4 I/O error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import hmc, model
from .config import ConfigError, RunConfig, make_config, resolved_text
from .model import DomainError
from .tuning import AdaptationError

FMT = "%.17g"


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# generate


def _parse_theta(raw, d):
    if raw is None or raw == "zeros":
        return np.zeros(d)
    theta = np.array([float(v) for v in raw.split(",")])
    if theta.shape != (d,):
        raise ConfigError(f"theta has {theta.shape[0]} entries, expected {d}")
    return theta


def cmd_generate(args):
    out = Path(args.out)
    if out.exists() and not args.force:
        raise ConfigError(f"{out} exists; pass --force to overwrite")
    theta_true = _parse_theta(args.theta_true, args.d)
    data = model.generate_synthetic(args.n, args.d, theta_true, args.seed)
    model.save_csv(out, data)
    sidecar = out.with_suffix(out.suffix + ".theta_true.txt")
    sidecar.write_text(
        "\n".join(FMT % v for v in theta_true) + "\n"
    )
    print(f"wrote {out} (n={args.n}, d={args.d}) and {sidecar}")
    return 0


# ---------------------------------------------------------------------------
# sample


_DRIVERS = {
    "hmc": hmc.run_hmc_full,
    "hmc-ecs": hmc.run_hmc_ecs,
    "hmc-ecs-poisson": hmc.run_hmc_ecs_poisson,
}


def _load_data(config):
    if config.data_path is not None:
        return model.load_csv(config.data_path)
    theta = (
        np.zeros(config.synth_d)
        if config.synth_theta is None
        else np.asarray(config.synth_theta, dtype=np.float64)
    )
    return model.generate_synthetic(
        config.synth_n, config.synth_d, theta, config.synth_seed
    )


def _write_diagnostics(path, config, trace, report):
    ct = diag.computational_time(report)
    lines = {
        "mode": config.mode,
        "n_train": config.n_train,
        "n_samples": config.n_samples,
        "seed": config.seed,
        "alpha_theta_mean": report.alpha_theta_mean,
        "alpha_u_mean": report.alpha_u_mean,
        "eps_final": trace.eps[-1],
        "l_final": int(trace.l_steps[-1]),
        "traj_length": trace.eps[-1] * trace.l_steps[-1],
        "if_mean": report.if_mean,
        "if_min": report.if_values.min(),
        "if_max": report.if_values.max(),
        "ess_mean": report.ess_mean,
        "ess_min": report.ess_values.min(),
        "ess_max": report.ess_values.max(),
        "ct_mean": ct.mean(),
        "total_point_evals": report.total_point_evals,
        "divergences": int(np.nansum(trace.diverged)),
        "neg_sign_frac": float((trace.sampling("sign") < 0).mean()),
        "wall_total": trace.wall[-1],
    }
    with open(path, "w") as fh:
        for key, value in lines.items():
            if isinstance(value, float):
                value = FMT % value
            fh.write(f"{key}: {value}\n")


def _run_one_chain(config, data, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.txt").write_text(resolved_text(config))
    driver = _DRIVERS[config.mode]
    trace = driver(config, data, stream_path=out_dir / "trace.csv")

    frame = trace.to_frame()
    kept = frame[frame["phase"] == 1.0]
    if config.thin > 1:
        kept = kept.iloc[:: config.thin]
    kept.to_csv(out_dir / "draws.csv", index=False, float_format=FMT)

    report = diag.efficiency_report(trace)
    _write_diagnostics(out_dir / "diagnostics.txt", config, trace, report)

    draws = trace.kept
    with open(out_dir / "diagnostics_params.csv", "w") as fh:
        fh.write("param,mean,sd,if,ess\n")
        for j in range(trace.d):
            fh.write(
                f"{j},{FMT % draws[:, j].mean()},{FMT % draws[:, j].std(ddof=1)},"
                f"{FMT % report.if_values[j]},{FMT % report.ess_values[j]}\n"
            )
    return trace


def cmd_sample(args):
    overrides = {
        key: getattr(args, key)
        for key in (
            "mode", "model", "data_path", "seed", "m", "g", "n_train",
            "n_samples", "thin", "eps", "traj_length", "delta", "lam",
            "mass", "mu", "m_b", "a_c", "rho", "chains",
            "synth_n", "synth_d", "synth_seed",
        )
        if getattr(args, key, None) is not None
    }
    if args.pilot:
        overrides["pilot"] = True
    config = make_config(args.config, overrides)
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    if config.out_dir is None:
        raise ConfigError("an output directory is required (--out-dir)")
    config.validate()
    data = _load_data(config)
    config.validate(n=data.n)
    out_root = Path(config.out_dir)

    if config.chains == 1:
        _run_one_chain(config, data, out_root)
    else:
        import concurrent.futures
        from dataclasses import replace

        with concurrent.futures.ProcessPoolExecutor(
            max_workers=config.chains
        ) as pool:
            futures = [
                pool.submit(
                    _run_one_chain,
                    replace(config, seed=config.seed + i),
                    data,
                    out_root / f"chain{i}",
                )
                for i in range(config.chains)
            ]
            for fut in futures:
                fut.result()
    print(f"run complete: {out_root}")
    return 0


# ---------------------------------------------------------------------------
# compare / diagnose


def _load_draws(path):
    import pandas as pd

    frame = pd.read_csv(path)
    d = sum(1 for col in frame.columns if col.startswith("theta_"))
    if d == 0:
        raise ConfigError(f"{path}: no theta_* columns")
    theta = frame[[f"theta_{j}" for j in range(d)]].to_numpy(dtype=np.float64)
    signs = (
        frame["sign"].to_numpy(dtype=np.float64)
        if "sign" in frame.columns
        else np.ones(len(frame))
    )
    evals = (
        float(frame["point_evals"].iloc[-1])
        if "point_evals" in frame.columns
        else np.nan
    )
    return theta, signs, evals


def _kde(samples, grid):
    n = samples.shape[0]
    bw = 1.06 * samples.std(ddof=1) * n ** (-0.2)
    if bw <= 0:
        bw = 1e-8
    z = (grid[:, None] - samples[None, :]) / bw
    return np.exp(-0.5 * z ** 2).sum(axis=1) / (n * bw * np.sqrt(2 * np.pi))


def cmd_compare(args):
    theta_a, signs_a, evals_a = _load_draws(args.trace_a)
    theta_b, signs_b, evals_b = _load_draws(args.trace_b)
    if theta_a.shape[1] != theta_b.shape[1]:
        raise ConfigError(
            f"dimension mismatch: {theta_a.shape[1]} vs {theta_b.shape[1]}"
        )
    d = theta_a.shape[1]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    mean_a, _ = diag.sign_corrected_mean(signs_a, theta_a)
    mean_b, _ = diag.sign_corrected_mean(signs_b, theta_b)
    sd_a = theta_a.std(axis=0, ddof=1)
    sd_b = theta_b.std(axis=0, ddof=1)
    pooled_sd = np.sqrt(0.5 * (sd_a ** 2 + sd_b ** 2))

    if_a = np.array([diag.inefficiency_factor(theta_a[:, j]) for j in range(d)])
    if_b = np.array([diag.inefficiency_factor(theta_b[:, j]) for j in range(d)])
    rct = (if_a * evals_a) / (if_b * evals_b)

    with open(out / "comparison.csv", "w") as fh:
        fh.write("param,mean_a,mean_b,sd_a,sd_b,delta_sd_units,rct\n")
        for j in range(d):
            delta = (mean_a[j] - mean_b[j]) / pooled_sd[j]
            fh.write(
                ",".join(
                    FMT % v
                    for v in (j, mean_a[j], mean_b[j], sd_a[j], sd_b[j], delta, rct[j])
                )
                + "\n"
            )

    with open(out / "kde.csv", "w") as fh:
        fh.write("param,grid,density_a,density_b\n")
        for j in range(d):
            center = 0.5 * (mean_a[j] + mean_b[j])
            half = 4.0 * pooled_sd[j]
            grid = np.linspace(center - half, center + half, 512)
            da = _kde(theta_a[:, j], grid)
            db = _kde(theta_b[:, j], grid)
            for gval, va, vb in zip(grid, da, db):
                fh.write(f"{j},{FMT % gval},{FMT % va},{FMT % vb}\n")
    print(f"wrote {out / 'comparison.csv'} and {out / 'kde.csv'}")
    return 0


def cmd_diagnose(args):
    theta, signs, evals = _load_draws(args.trace)
    d = theta.shape[1]
    for j in range(d):
        series = theta[:, j]
        if_j = diag.inefficiency_factor(series)
        print(
            f"param {j}: mean={series.mean():.6g} sd={series.std(ddof=1):.6g} "
            f"IF={if_j:.4g} ESS={series.shape[0] / if_j:.4g}"
        )
    neg = float((signs < 0).mean())
    print(f"negative-sign fraction: {neg:.4g}")
    if np.isfinite(evals):
        print(f"total point evaluations: {evals:.6g}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hmcecs",
        description="Subsampling Hamiltonian Monte Carlo sampler and diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic logistic dataset CSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta-true", dest="theta_true", default=None,
                   help="comma-separated values, or 'zeros'")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sample", help="run a sampler")
    p.add_argument("--config", default=None, help="flat key = value file")
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--mode", choices=("hmc", "hmc-ecs", "hmc-ecs-poisson"))
    p.add_argument("--model", choices=tuple(model.MODELS))
    p.add_argument("--data", dest="data_path")
    p.add_argument("--seed", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--g", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--traj-length", dest="traj_length", type=float)
    p.add_argument("--pilot", action="store_true",
                   help="select the trajectory length by pilot runs")
    p.add_argument("--delta", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--mass", choices=("hessian", "identity"))
    p.add_argument("--mu", type=float)
    p.add_argument("--m-b", dest="m_b", type=int)
    p.add_argument("--a-c", dest="a_c", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--chains", type=int)
    p.add_argument("--synth-n", dest="synth_n", type=int)
    p.add_argument("--synth-d", dest="synth_d", type=int)
    p.add_argument("--synth-seed", dest="synth_seed", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("compare", help="compare two draws files")
    p.add_argument("trace_a")
    p.add_argument("trace_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="report IF/ESS for a draws file")
    p.add_argument("trace")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        return _fail(2, str(exc))
    except (hmc.DivergenceError, AdaptationError) as exc:
        return _fail(3, str(exc))
    except OSError as exc:
        return _fail(4, str(exc))


if __name__ == "__main__":
    sys.exit(main())
