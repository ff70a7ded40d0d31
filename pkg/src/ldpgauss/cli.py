"""Command-line front end: simulate, sweep, audit, replay.

Configuration can come from flags or a flat JSON file (--config); flags win.
Exit codes are a stable contract: 0 success, 1 runtime or verification
failure, 2 usage or configuration error.

Timing columns are zeroed by default so repeated invocations produce
byte-identical output files; pass --timing to record real wall times.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from ldpgauss.aggregation import MalformedInputError
from ldpgauss.harness import (
    ExperimentSpec,
    default_audit_report,
    error_summary,
    run_trials,
    sample_population,
    slopes_by_cell_group,
    write_results_csv,
    write_summary_csv,
)
from ldpgauss.numerics import TrialStreams, hash_u64
from ldpgauss.protocols import (
    RUNNERS,
    BoundedSigma,
    ConfigError,
    KnownSigma,
    ProtocolConfig,
    ReplayMismatch,
    Transcript,
    replay_analyst,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    pass


def _float_list(text: str):
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


def _int_list(text: str):
    return tuple(int(v) for v in text.split(",") if v.strip() != "")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldpgauss",
        description="Locally private Gaussian mean estimation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, help="flat JSON config; flags override it")
        p.add_argument("--protocol", choices=sorted(RUNNERS))
        p.add_argument("--n", type=int)
        p.add_argument("--eps", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--mu", type=float)
        p.add_argument("--sigma", type=float)
        p.add_argument("--sigma-min", dest="sigma_min", type=float)
        p.add_argument("--sigma-max", dest="sigma_max", type=float)
        p.add_argument("--k", type=int)
        p.add_argument("--k1", type=int)
        p.add_argument("--k2", type=int)
        p.add_argument("--levels", dest="levels", type=int,
                       help="size level subgroups for this many levels instead of --k/--k1")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="output directory (default $LDPGAUSS_OUT or .)")
        p.add_argument("--proof-constants", dest="proof_constants", action="store_true", default=None)
        p.add_argument("--c-k", dest="c_k", type=float)
        p.add_argument("--timing", action="store_true", default=None,
                       help="record real wall times (breaks byte-identical reruns)")
        p.add_argument("--verbose", "-v", action="count", default=0)

    p_sim = sub.add_parser("simulate", help="run one configuration cell")
    add_common(p_sim)
    p_sim.add_argument("--transcript", type=Path, help="also write trial 0's transcript here")

    p_sweep = sub.add_parser("sweep", help="run a configuration grid")
    add_common(p_sweep)
    p_sweep.add_argument("--n-grid", dest="n_grid", type=_int_list)
    p_sweep.add_argument("--eps-grid", dest="eps_grid", type=_float_list)
    p_sweep.add_argument("--mu-grid", dest="mu_grid", type=_float_list)
    p_sweep.add_argument("--sigma-grid", dest="sigma_grid", type=_float_list)

    p_audit = sub.add_parser("audit", help="closed-form privacy audits")
    p_audit.add_argument("--eps", type=_float_list, default=(0.1, 0.5, 1.0, 2.0))

    p_replay = sub.add_parser("replay", help="verify a transcript's analyst outputs")
    add_common(p_replay)
    p_replay.add_argument("--transcript", type=Path, required=True)
    return parser


def _merge_config_file(args: argparse.Namespace) -> dict:
    """File values fill in whatever the flags left unset."""
    merged = {k: v for k, v in vars(args).items()}
    path = merged.pop("config", None)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {path}: {exc}")
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a flat JSON object")
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if merged.get(key) is None:
                merged[key] = value
    return merged


def _require(merged: dict, *names) -> None:
    missing = [name for name in names if merged.get(name) is None]
    if missing:
        raise UsageError(f"missing required options: {', '.join('--' + m.replace('_', '-') for m in missing)}")


def _variance_args(merged: dict):
    protocol = merged["protocol"]
    if protocol in ("kv2", "kv1"):
        if merged.get("sigma_min") is not None or merged.get("sigma_max") is not None:
            raise UsageError(f"{protocol} uses --sigma, not --sigma-min/--sigma-max")
        _require(merged, "sigma")
        return None
    _require(merged, "sigma_min", "sigma_max", "sigma")
    return (merged["sigma_min"], merged["sigma_max"])


def _spec_from(merged: dict, n_values, eps_values, mu_values, sigma_values) -> ExperimentSpec:
    return ExperimentSpec(
        protocol=merged["protocol"],
        n_values=tuple(n_values),
        eps_values=tuple(eps_values),
        mu_values=tuple(mu_values),
        sigma_values=tuple(sigma_values),
        trials=int(merged.get("trials") or 1),
        beta=float(merged.get("beta") or 0.05),
        master_seed=int(merged.get("seed") or 0),
        sigma_bounds=_variance_args(merged),
        k=merged.get("k"),
        k1=merged.get("k1"),
        k2=merged.get("k2"),
        levels_target=merged.get("levels"),
        c_k=float(merged.get("c_k") or 8.0),
        proof_constants=bool(merged.get("proof_constants")),
    )


def _out_dir(merged: dict) -> Path:
    out = merged.get("out")
    if out is None:
        out = os.environ.get("LDPGAUSS_OUT", ".")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _strip_timing(cells) -> None:
    for cell in cells:
        cell.mean_wall_ms = 0.0
        for row in cell.rows:
            row["wall_ms"] = 0.0


def _print_cell(cell, slope=None) -> None:
    summary = error_summary(cell.errors)
    parts = [
        f"{cell.protocol} n={cell.n} eps={cell.eps!r} mu={cell.mu!r} sigma={cell.sigma!r}",
        f"trials={summary['count']} err_p50={summary['p50']!r} err_p90={summary['p90']!r}",
        f"coverage_mu1={cell.coverage_mu1!r}",
    ]
    if cell.coverage_sigma is not None:
        parts.append(f"coverage_sigma={cell.coverage_sigma!r}")
    if slope is not None:
        parts.append(f"slope_vs_n={slope!r}")
    print(" ".join(parts))


def _cmd_simulate(args: argparse.Namespace) -> int:
    merged = _merge_config_file(args)
    _require(merged, "protocol", "n", "eps", "mu", "sigma", "trials")
    spec = _spec_from(
        merged, [merged["n"]], [merged["eps"]], [merged["mu"]], [merged["sigma"]]
    )
    cells = run_trials(spec)
    if not merged.get("timing"):
        _strip_timing(cells)
    out = _out_dir(merged)
    write_results_csv(out / "results.csv", cells)
    write_summary_csv(out / "summary.csv", cells)
    transcript_path = merged.get("transcript")
    if transcript_path is not None:
        config = spec.config_for_cell(merged["n"], merged["eps"], merged["mu"], merged["sigma"])
        streams = TrialStreams(spec.master_seed, hash_u64(0, 0))
        samples = sample_population(config.truth, config.n, streams)
        _, transcript = RUNNERS[spec.protocol](config, samples, streams)
        transcript.dump(transcript_path)
    _print_cell(cells[0])
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    merged = _merge_config_file(args)
    _require(merged, "protocol", "trials")
    n_values = merged.get("n_grid") or ([merged["n"]] if merged.get("n") else None)
    if not n_values:
        raise UsageError("sweep needs --n-grid (or --n)")
    eps_values = merged.get("eps_grid") or ([merged["eps"]] if merged.get("eps") else None)
    mu_values = merged.get("mu_grid") or ([merged["mu"]] if merged.get("mu") is not None else None)
    sigma_values = merged.get("sigma_grid") or ([merged["sigma"]] if merged.get("sigma") else None)
    if not (eps_values and mu_values and sigma_values):
        raise UsageError("sweep needs eps, mu, and sigma values (grid or scalar)")
    spec = _spec_from(merged, n_values, eps_values, mu_values, sigma_values)
    cells = run_trials(spec)
    if not merged.get("timing"):
        _strip_timing(cells)
    slopes = slopes_by_cell_group(cells)
    out = _out_dir(merged)
    write_results_csv(out / "results.csv", cells)
    write_summary_csv(out / "summary.csv", cells, slopes)
    for cell in cells:
        _print_cell(cell, slopes.get((cell.eps, cell.mu, cell.sigma)))
    for key, slope in sorted(slopes.items()):
        label = "absent" if slope is None else repr(slope)
        print(f"slope eps={key[0]!r} mu={key[1]!r} sigma={key[2]!r}: {label}")
    return EXIT_OK


def _cmd_audit(args: argparse.Namespace) -> int:
    eps_values = args.eps
    if not eps_values:
        raise UsageError("audit needs at least one eps")
    for eps in eps_values:
        if not (eps > 0.0 and math.isfinite(eps)):
            raise UsageError(f"audit eps must be finite and positive, got {eps}")
    rows = default_audit_report(eps_values)
    failures = [row for row in rows if not row["ok"]]
    for row in rows:
        status = "ok" if row["ok"] else "VIOLATION"
        print(
            f"{status} {row['randomizer']} eps={row['eps']!r} "
            f"{row['measure']}={row['value']!r} bound={row['bound']!r}"
        )
    if failures:
        first = failures[0]
        print(
            f"audit failed: {first['randomizer']} at eps={first['eps']!r} "
            f"reached {first['value']!r} against bound {first['bound']!r}",
            file=sys.stderr,
        )
        return EXIT_FAILURE
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    merged = _merge_config_file(args)
    _require(merged, "protocol", "n", "eps")
    protocol = merged["protocol"]
    if protocol in ("kv2", "kv1"):
        _require(merged, "sigma")
        mode = KnownSigma(merged["sigma"])
    else:
        _require(merged, "sigma_min", "sigma_max")
        mode = BoundedSigma(merged["sigma_min"], merged["sigma_max"])
    config = ProtocolConfig(
        eps=merged["eps"], beta=float(merged.get("beta") or 0.05), n=merged["n"],
        variance_mode=mode, truth=None,
        k=merged.get("k"), k1=merged.get("k1"), k2=merged.get("k2"),
        c_k=float(merged.get("c_k") or 8.0),
        proof_constants=bool(merged.get("proof_constants")),
    )
    if merged.get("levels"):
        config = ProtocolConfig(
            eps=config.eps, beta=config.beta, n=config.n, variance_mode=mode, truth=None,
            k=None, k1=(config.n // 2) // int(merged["levels"]), k2=merged.get("k2"),
        )
    transcript = Transcript.load(merged["transcript"], protocol, config.n)
    outcome = replay_analyst(protocol, config, transcript)
    print(
        f"replay ok: mu_hat1={outcome.mu_hat1!r} sigma_hat={outcome.sigma_hat!r} "
        f"mu_hat2={outcome.mu_hat2!r}"
    )
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "audit":
            return _cmd_audit(args)
        return _cmd_replay(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MalformedInputError as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReplayMismatch as exc:
        print(f"replay mismatch: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
