"""Command-line front end: `jetdyn <subcommand>`.

Subcommands wire the library into reproducible file-based runs:

    generate    synthesize a bench dataset from a campaign or config
    identify    fit parameters (ekf, ls) or structure (sindy) to a dataset
    validate    open-loop MAE of a params/model file against a dataset
    control     closed-loop tracking run with the fl or sm controller
    sizing      hover propellant and engine-count tables
    rank-check  excitation rank/conditioning of a dataset's library

Every run is deterministic: rerunning a command with the same config and
seed writes byte-identical files.  Reports use 6 significant digits; CSV
traces carry shortest round-trip floats.  Exit codes: 0 ok, 1 error,
2 finished with warnings.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .control import (REFERENCES, FlGains, LoopConfig, RefSegment, SmGains,
                      build_reference, closed_loop_sim, write_trace_csv)
from .engine import (ENGINES, PRESET_ENGINE, PRESETS, JetParams,
                     params_from_text, resolve_params, save_params)
from .errors import AllTermsEliminated, JetdynError, MalformedFile
from .filtering import SgConfig, savgol_derivatives
from .grayid import IdConfig, batch_ls_identify, ekf_identify
from .simulation import (CAMPAIGNS, ExcitationSpec, Segment, SimConfig,
                         TimeSeries, excitation_rank_check, gen_excitation,
                         read_timeseries_csv, simulate, write_timeseries_csv)
from .sindy import (LibrarySpec, build_library, identify_structure,
                    simulate_sparse, sparse_model_from_text,
                    sparse_model_to_text)
from .sizing import (ELECTRIC_FAN, TURBOJET, engine_count_table, mass_table)

__all__ = ["main"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_WARNINGS = 2

_SEGMENT_KEYS = {"kind", "duration", "offset", "amplitude", "f_start", "f_end"}
_SIM_KEYS = {"dt", "substeps", "noise_variance"}
_SAVGOL_KEYS = {"window", "poly_order"}
_LIBRARY_KEYS = {"max_total_degree"}
_SINDY_KEYS = {"threshold", "ridge", "max_rows"}
_EKF_KEYS = {"meas_variance", "q_state_t", "q_state_td", "q_params",
             "p0_state_t", "p0_state_td", "p0_params", "param_floor",
             "n_passes", "pass_shrink", "predict_substeps",
             "divergence_factor", "guess"}
_LS_KEYS = {"init_b_uu", "tol", "max_iter", "max_rows"}
_CONTROL_KEYS = {"dt", "substeps", "noise_variance", "band_pct", "settle_s",
                 "g_min", "perfect_observer"}
_FL_KEYS = {"k_p", "k_d"}
_SM_KEYS = {"a1", "beta", "k_slope"}
_REF_KEYS = {"kind", "level", "duration"}
_SIZING_KEYS = {"weights", "minutes", "naive"}
_GLOBAL_KEYS = {"rng_seed", "out_dir", "jobs"}


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x:.6g}"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _excitation_from(cfg: RunConfig, preset: str | None) -> tuple[ExcitationSpec, str]:
    """Campaign preset, or [segment] sections from the config."""
    if preset is not None:
        if preset not in CAMPAIGNS:
            raise MalformedFile(
                f"unknown campaign preset {preset!r}; "
                f"choose from {', '.join(sorted(CAMPAIGNS))}")
        return CAMPAIGNS[preset](), preset
    seg_sections = cfg.all("segment")
    if not seg_sections:
        raise MalformedFile(
            "no excitation given: pass --preset or add [segment] sections")
    segs = []
    for sec in seg_sections:
        sec.reject_unknown(_SEGMENT_KEYS)
        segs.append(Segment(
            kind=sec.get_str("kind", "hold"),
            duration=sec.get_float("duration", 0.0),
            offset=sec.get_float("offset", 25.0),
            amplitude=sec.get_float("amplitude", 0.0),
            f_start=sec.get_float("f_start", 0.0),
            f_end=sec.get_float("f_end", 0.0)))
    return ExcitationSpec(segments=tuple(segs)), "custom"


def _sim_config(cfg: RunConfig, args, seed: int) -> SimConfig:
    sec = cfg.first("simulation")
    sec.reject_unknown(_SIM_KEYS)
    dt = args.dt if args.dt is not None else sec.get_float("dt", 0.01)
    substeps = sec.get_int("substeps", 10)
    noise = args.noise if args.noise is not None \
        else sec.get_float("noise_variance", 0.0)
    return SimConfig(dt=dt, substeps=substeps, noise_variance=noise,
                     rng_seed=seed)


def _sg_config(cfg: RunConfig) -> SgConfig:
    sec = cfg.first("savgol")
    sec.reject_unknown(_SAVGOL_KEYS)
    return SgConfig(window=sec.get_int("window", 51),
                    poly_order=sec.get_int("poly_order", 3))


def _library_spec(cfg: RunConfig) -> LibrarySpec:
    sec = cfg.first("library")
    sec.reject_unknown(_LIBRARY_KEYS)
    return LibrarySpec(max_total_degree=sec.get_int("max_total_degree", 5))


def _meta_text(p: JetParams, sim: SimConfig, source: str, n: int) -> str:
    from .engine import params_to_text

    lines = [f"source = {source}",
             f"n_samples = {n}",
             f"dt = {_fmt(sim.dt)}",
             f"substeps = {sim.substeps}",
             f"noise_variance = {_fmt(sim.noise_variance)}",
             f"rng_seed = {sim.rng_seed}"]
    return "\n".join(lines) + "\n" + params_to_text(p)


def _generate_one(params: JetParams, spec: ExcitationSpec, sim: SimConfig,
                  source: str, csv_path: str, meta_path: str) -> str:
    u = gen_excitation(spec, sim.dt)
    res = simulate(params, u, sim)
    write_timeseries_csv(csv_path, res.series)
    _write(Path(meta_path), _meta_text(params, sim, source, res.series.n))
    return csv_path


def cmd_generate(args, cfg: RunConfig, out: Path, seed: int, jobs: int) -> int:
    params = resolve_params(args.params)
    spec, source = _excitation_from(cfg, args.preset)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [seed]
    name = args.name or (source if source != "custom" else "dataset")
    tasks = []
    for s in seeds:
        stem = name if len(seeds) == 1 else f"{name}-seed{s}"
        sim = _sim_config(cfg, args, s)
        tasks.append((params, spec, sim, source,
                      str(out / f"{stem}.csv"), str(out / f"{stem}.meta")))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            paths = list(pool.map(_generate_one, *zip(*tasks)))
    else:
        paths = [_generate_one(*t) for t in tasks]
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def _id_config(cfg: RunConfig) -> tuple[IdConfig, str | None]:
    sec = cfg.first("ekf")
    sec.reject_unknown(_EKF_KEYS)
    base = IdConfig()
    return IdConfig(
        meas_variance=sec.get_float("meas_variance", base.meas_variance),
        q_state=(sec.get_float("q_state_t", base.q_state[0]),
                 sec.get_float("q_state_td", base.q_state[1])),
        q_params=sec.get_float("q_params", base.q_params),
        p0_state=(sec.get_float("p0_state_t", base.p0_state[0]),
                  sec.get_float("p0_state_td", base.p0_state[1])),
        p0_params=sec.get_float("p0_params", base.p0_params),
        param_floor=sec.get_float("param_floor", base.param_floor),
        n_passes=sec.get_int("n_passes", base.n_passes),
        pass_shrink=sec.get_float("pass_shrink", base.pass_shrink),
        predict_substeps=sec.get_int("predict_substeps",
                                     base.predict_substeps),
        divergence_factor=sec.get_float("divergence_factor",
                                        base.divergence_factor),
    ), sec.get_str("guess", None)


def _identify_one(method: str, path: str, cfg: RunConfig, out: str,
                  guess_flag: str | None) -> tuple[str, int]:
    ts = read_timeseries_csv(path)
    stem = Path(path).stem
    outdir = Path(out)
    code = EXIT_OK
    if method == "ekf":
        idcfg, guess_key = _id_config(cfg)
        guess_name = guess_flag or guess_key
        if guess_name is not None:
            guess = resolve_params(guess_name)
        else:
            # no explicit starting point: bootstrap one from the batch
            # least-squares fit, which needs no prior information
            guess = batch_ls_identify(ts).params
        res = ekf_identify(ts, guess, idcfg)
        save_params(outdir / f"{stem}-ekf.params", res.params)
        rms = ",".join(_fmt(x) for x in res.innovation_rms)
        stds = ",".join(_fmt(x) for x in res.param_std)
        report = (f"method = ekf\nn_passes = {res.n_passes}\n"
                  f"innovation_rms = {rms}\nparam_std = {stds}\n")
        if res.innovation_rms[-1] > res.innovation_rms[0]:
            report += "warning = innovation RMS grew across passes\n"
            code = EXIT_WARNINGS
        _write(outdir / f"{stem}-ekf-report.txt", report)
    elif method == "ls":
        sec = cfg.first("ls")
        sec.reject_unknown(_LS_KEYS)
        res = batch_ls_identify(
            ts, sg=_sg_config(cfg),
            init_b_uu=sec.get_float("init_b_uu", 0.0),
            tol=sec.get_float("tol", 1e-6),
            max_iter=sec.get_int("max_iter", 50),
            max_rows=sec.get_int("max_rows", 150_000))
        save_params(outdir / f"{stem}-ls.params", res.params)
        rms = ",".join(_fmt(x) for x in res.residual_rms)
        report = (f"method = ls\niterations = {res.iterations}\n"
                  f"converged = {int(res.converged)}\nresidual_rms = {rms}\n")
        if not res.converged:
            report += "warning = alternation hit the iteration cap\n"
            code = EXIT_WARNINGS
        _write(outdir / f"{stem}-ls-report.txt", report)
    else:
        sec = cfg.first("sindy")
        sec.reject_unknown(_SINDY_KEYS)
        try:
            model, rank = identify_structure(
                ts, sg=_sg_config(cfg), library=_library_spec(cfg),
                threshold=sec.get_float("threshold", 0.05),
                max_rows=sec.get_int("max_rows", 150_000),
                ridge=sec.get_float("ridge", 0.0))
        except AllTermsEliminated as exc:
            _write(outdir / f"{stem}-sindy-report.txt",
                   f"method = sindy\nwarning = {exc}\n")
            return (f"{stem}: sindy eliminated every term", EXIT_WARNINGS)
        _write(outdir / f"{stem}-sindy.model", sparse_model_to_text(model))
        report = (f"method = sindy\nn_active = {model.n_active}\n"
                  f"threshold = {_fmt(model.threshold)}\n"
                  f"iterations = {model.iterations}\n"
                  f"residual_rms = {_fmt(model.residual_rms)}\n"
                  f"rank = {rank.rank}\nn_columns = {rank.n_columns}\n"
                  f"condition_number = {_fmt(rank.condition_number)}\n")
        if not rank.exciting:
            report += ("warning = library is rank deficient; "
                       "excitation does not separate the terms\n")
            code = EXIT_WARNINGS
        _write(outdir / f"{stem}-sindy-report.txt", report)
    return (f"{stem}: {method} done", code)


def cmd_identify(args, cfg: RunConfig, out: Path, seed: int, jobs: int) -> int:
    tasks = [(args.method, p, cfg, str(out), args.guess)
             for p in args.dataset]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_identify_one, *zip(*tasks)))
    else:
        results = [_identify_one(*t) for t in tasks]
    code = EXIT_OK
    for msg, c in results:
        print(msg)
        code = max(code, c)
    return code


def _load_fit(path_or_preset: str):
    """A params file/preset or a sparse-model file, whichever parses."""
    if path_or_preset in PRESETS:
        return PRESETS[path_or_preset]
    with open(path_or_preset) as fh:
        text = fh.read()
    try:
        return params_from_text(text)
    except MalformedFile:
        return sparse_model_from_text(text)


def cmd_validate(args, cfg: RunConfig, out: Path, seed: int, jobs: int) -> int:
    ts = read_timeseries_csv(args.dataset)
    fit = _load_fit(args.fit)
    stem = Path(args.dataset).stem
    if isinstance(fit, JetParams):
        sim = simulate(fit, ts.u, SimConfig(dt=ts.dt, substeps=10,
                                            initial_state=_initial_of(ts)))
        T_sim = sim.series.T
        kind = "params"
    else:
        T_sim = simulate_sparse(fit, ts.u, ts.dt, T0=float(ts.T[0]))
        kind = "model"
    residual = ts.T - T_sim
    mae = float(np.mean(np.abs(residual)))
    lines = ["time_s,thrust_meas_n,thrust_sim_n,residual_n"]
    for row in zip(ts.t.tolist(), ts.T.tolist(), T_sim.tolist(),
                   residual.tolist()):
        lines.append(",".join(repr(x) for x in row))
    _write(out / f"{stem}-residual.csv", "\n".join(lines) + "\n")
    report = (f"fit = {kind}\nn_samples = {ts.n}\ndt = {_fmt(ts.dt)}\n"
              f"validation_mae = {_fmt(mae)}\n")
    _write(out / f"{stem}-validate-report.txt", report)
    print(f"validation_mae = {_fmt(mae)}")
    return EXIT_OK


def _initial_of(ts: TimeSeries):
    from .engine import ThrustState

    return ThrustState(float(ts.T[0]), 0.0)


def _reference_from(cfg: RunConfig, name: str | None, dt: float):
    if name is not None:
        if name not in REFERENCES:
            raise MalformedFile(
                f"unknown reference {name!r}; "
                f"choose from {', '.join(sorted(REFERENCES))}")
        return build_reference(REFERENCES[name](), dt)
    sections = cfg.all("ref")
    if not sections:
        return build_reference(REFERENCES["step-ramp-30-90"](), dt)
    segs = []
    for sec in sections:
        sec.reject_unknown(_REF_KEYS)
        segs.append(RefSegment(kind=sec.get_str("kind", "hold"),
                               level=sec.get_float("level", 0.0),
                               duration=sec.get_float("duration", 0.0)))
    return build_reference(tuple(segs), dt)


def cmd_control(args, cfg: RunConfig, out: Path, seed: int, jobs: int) -> int:
    model = resolve_params(args.params)
    plant = resolve_params(args.plant) if args.plant else model
    engine = args.engine or PRESET_ENGINE.get(args.params, "p100rx")
    spec = ENGINES[engine]
    sec = cfg.first("control")
    sec.reject_unknown(_CONTROL_KEYS)
    loop = LoopConfig(
        dt=sec.get_float("dt", 0.01),
        substeps=sec.get_int("substeps", 10),
        noise_variance=args.noise if args.noise is not None
        else sec.get_float("noise_variance", 0.0),
        rng_seed=seed,
        band_pct=sec.get_float("band_pct", 5.0),
        settle_s=sec.get_float("settle_s", 3.0),
        g_min=sec.get_float("g_min", 1e-6),
        perfect_observer=sec.get_bool("perfect_observer", False))
    if args.controller == "fl":
        fsec = cfg.first("fl")
        fsec.reject_unknown(_FL_KEYS)
        base = FlGains()
        gains = FlGains(k_p=fsec.get_float("k_p", base.k_p),
                        k_d=fsec.get_float("k_d", base.k_d))
    else:
        ssec = cfg.first("sm")
        ssec.reject_unknown(_SM_KEYS)
        base = SmGains()
        gains = SmGains(a1=ssec.get_float("a1", base.a1),
                        beta=ssec.get_float("beta", base.beta),
                        k_slope=ssec.get_float("k_slope", base.k_slope))
    ref = _reference_from(cfg, args.reference, loop.dt)
    trace, report = closed_loop_sim(plant, model, gains, ref, spec, loop)
    stem = f"{args.controller}-trace"
    write_trace_csv(out / f"{stem}.csv", trace)
    _write(out / f"{args.controller}-report.txt", report.to_text())
    print(f"occupancy = {_fmt(report.occupancy)}")
    print(f"input_total_variation = {_fmt(report.input_total_variation)}")
    return EXIT_OK


def _table_csv(weights, minutes, grid) -> str:
    head = "robot_kg," + ",".join(_fmt(m) for m in minutes)
    lines = [head]
    for w, row in zip(weights, grid):
        lines.append(_fmt(w) + "," + ",".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def cmd_sizing(args, cfg: RunConfig, out: Path, seed: int, jobs: int) -> int:
    sec = cfg.first("sizing")
    sec.reject_unknown(_SIZING_KEYS)
    weights = ([float(w) for w in args.weights.split(",")] if args.weights
               else list(sec.get_floats("weights",
                                        (10.0, 20.0, 30.0, 40.0, 50.0))))
    minutes = ([float(m) for m in args.minutes.split(",")] if args.minutes
               else list(sec.get_floats("minutes", (1.0, 3.0, 5.0))))
    naive = sec.get_bool("naive", False)
    battery = mass_table(weights, minutes, ELECTRIC_FAN, naive=naive)
    fuel = mass_table(weights, minutes, TURBOJET, naive=naive)
    electric_n = engine_count_table(weights, ELECTRIC_FAN)
    jet_n = engine_count_table(weights, TURBOJET)
    _write(out / "battery-mass.csv", _table_csv(weights, minutes, battery))
    _write(out / "fuel-mass.csv", _table_csv(weights, minutes, fuel))
    counts = ["robot_kg,electric_engines,jet_engines"]
    for w, e, j in zip(weights, electric_n, jet_n):
        counts.append(f"{_fmt(w)},{e},{j}")
    _write(out / "engine-count.csv", "\n".join(counts) + "\n")

    text = ["battery mass [kg] (rows: robot kg, cols: minutes)"]
    text.append(_table_csv(weights, minutes, battery).rstrip())
    text.append("")
    text.append("fuel mass [kg]")
    text.append(_table_csv(weights, minutes, fuel).rstrip())
    text.append("")
    text.append("engines needed")
    text.extend(counts)
    report = "\n".join(text) + "\n"
    _write(out / "sizing-report.txt", report)
    print(report, end="")
    return EXIT_OK


def cmd_rank_check(args, cfg: RunConfig, out: Path, seed: int, jobs: int) -> int:
    ts = read_timeseries_csv(args.dataset)
    filt = savgol_derivatives(ts, _sg_config(cfg))
    lib = _library_spec(cfg)
    theta, _ = build_library(filt, lib)
    report = excitation_rank_check(theta)
    stem = Path(args.dataset).stem
    text = (f"n_columns = {report.n_columns}\nrank = {report.rank}\n"
            f"condition_number = {_fmt(report.condition_number)}\n"
            f"singular_max = {_fmt(report.singular_max)}\n"
            f"singular_min = {_fmt(report.singular_min)}\n"
            f"exciting = {int(report.exciting)}\n")
    _write(out / f"{stem}-rank-report.txt", text)
    print(text, end="")
    return EXIT_OK if report.exciting else EXIT_WARNINGS


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the generic error code, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)


def _build_parser() -> argparse.ArgumentParser:
    # the same four flags are accepted before or after the subcommand;
    # SUPPRESS keeps an unset subcommand flag from shadowing the global one
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        default=argparse.SUPPRESS,
                        help="sectioned key-value run config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="rng seed (overrides the config's rng_seed)")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS,
                        help="output directory (default: current)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help="parallel workers across independent runs")

    ap = _Parser(
        prog="jetdyn",
        description="identification, control and sizing for model jet engines")
    ap.add_argument("--config", metavar="PATH", default=None,
                    help="sectioned key-value run config")
    ap.add_argument("--seed", type=int, default=None,
                    help="rng seed (overrides the config's rng_seed)")
    ap.add_argument("--out", metavar="DIR", default=None,
                    help="output directory (default: current)")
    ap.add_argument("--jobs", type=int, default=None,
                    help="parallel workers across independent runs")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a bench dataset",
                       parents=[common])
    g.add_argument("--preset", default=None,
                   help=f"campaign name: {', '.join(sorted(CAMPAIGNS))}")
    g.add_argument("--params", default="p100rx-ekf",
                   help="plant coefficients: preset name or params file")
    g.add_argument("--dt", type=float, default=None)
    g.add_argument("--noise", type=float, default=None,
                   help="measurement noise variance, N^2")
    g.add_argument("--seeds", default=None,
                   help="comma list; one dataset per seed")
    g.add_argument("--name", default=None, help="output file stem")
    g.set_defaults(fn=cmd_generate)

    i = sub.add_parser("identify", help="fit a dataset",
                       parents=[common])
    i.add_argument("method", choices=("ekf", "ls", "sindy"))
    i.add_argument("dataset", nargs="+", help="dataset CSV path(s)")
    i.add_argument("--guess", default=None,
                   help="ekf starting point: preset name or params file")
    i.set_defaults(fn=cmd_identify)

    v = sub.add_parser("validate", parents=[common],
                       help="open-loop MAE against a dataset")
    v.add_argument("fit", help="params/model file or preset name")
    v.add_argument("dataset", help="dataset CSV path")
    v.set_defaults(fn=cmd_validate)

    c = sub.add_parser("control", help="closed-loop tracking run",
                       parents=[common])
    c.add_argument("controller", choices=("fl", "sm"))
    c.add_argument("--params", default="p100rx-ekf",
                   help="model coefficients: preset name or params file")
    c.add_argument("--plant", default=None,
                   help="plant coefficients when different from the model")
    c.add_argument("--reference", default=None,
                   help=f"profile name: {', '.join(sorted(REFERENCES))}")
    c.add_argument("--engine", default=None, choices=sorted(ENGINES),
                   help="thrust/throttle envelope when --params is a file")
    c.add_argument("--noise", type=float, default=None)
    c.set_defaults(fn=cmd_control)

    s = sub.add_parser("sizing", parents=[common],
                       help="hover propellant and engine tables")
    s.add_argument("--weights", default=None, help="comma list of robot kg")
    s.add_argument("--minutes", default=None, help="comma list of endurances")
    s.set_defaults(fn=cmd_sizing)

    r = sub.add_parser("rank-check", parents=[common],
                       help="excitation rank of a dataset")
    r.add_argument("dataset", help="dataset CSV path")
    r.set_defaults(fn=cmd_rank_check)
    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        gsec = cfg.first("global")
        gsec.reject_unknown(_GLOBAL_KEYS)
        seed = args.seed if args.seed is not None \
            else gsec.get_int("rng_seed", 0)
        out = Path(args.out if args.out is not None
                   else gsec.get_str("out_dir", "."))
        jobs = args.jobs if args.jobs is not None else gsec.get_int("jobs", 1)
        out.mkdir(parents=True, exist_ok=True)
        return args.fn(args, cfg, out, seed, jobs)
    except JetdynError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
