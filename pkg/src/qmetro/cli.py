"""Command-line front end: chains, resource planning, verification and reports.

Exit codes: 0 success, 1 configuration error (bad flags, bad or missing
files), 2 runtime or guard error (truncation, enumeration guards).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .classical_chain import (DEFAULT_N_MAX, OracleGuardError, TruncationError,
                              run_classical_chain)
from .gqpe import GqpeConfig, GqpeConfigError, P_CAP, estimated_error, filter_sweep, plan_resources
from .models import (AcceptanceFunction, ClassicalModel, ClassicalSystem, ModelError, QuantumModel,
                     gibbs_expectation, load_model, load_observable, observable_matrix)
from .quantum_chain import (BACKENDS, branch_superoperators, check_quantum_db, check_stationarity,
                            run_quantum_chain)
from .rng import RngStreams
from .stats import EstimateReport, SeriesError, estimate

FLUSH_EVERY = 1000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommand handlers ------------------------------------------------------


def _cmd_plan(args) -> int:
    cfg = plan_resources(args.epsilon, args.emax, args.temperature, args.z, args.pcap)
    body = cfg.to_dict()
    body.update(omega_max=cfg.omega_max, d_omega=cfg.d_omega, shift=cfg.shift,
                estimated_error=estimated_error(cfg.lam, cfg.t_max, cfg.p, cfg.q, cfg.e_max))
    _emit(_dump(body), args.out)
    return 0


def _gqpe_from_args(args) -> GqpeConfig:
    if args.gqpe_config is not None:
        return GqpeConfig.from_dict(args.gqpe_config)
    for name in ("epsilon", "emax", "temperature"):
        if getattr(args, name) is None:
            raise UsageError(f"gqpe-verify needs a GQPE config file or --{name}")
    return plan_resources(args.epsilon, args.emax, args.temperature, args.z, args.pcap)


def _cmd_gqpe_verify(args) -> int:
    cfg = _gqpe_from_args(args)
    omega, g, g_tilde, err = filter_sweep(cfg, args.points)
    target = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(["omega", "g", "g_tilde", "rel_error"])
        for row in zip(omega, g, g_tilde, err):
            writer.writerow([repr(float(v)) for v in row])
    finally:
        if args.out:
            target.close()
    if args.out:
        sys.stdout.write(_dump({"max_rel_error": float(err.max()), "epsilon": cfg.epsilon,
                                "ratio": float(err.max()) / cfg.epsilon}))
    return 0


def _chain_paths(out: str, chains: int) -> list[Path]:
    path = Path(out)
    if chains == 1:
        return [path]
    stem = path.name[:-len(path.suffix)] if path.suffix else path.name
    return [path.with_name(f"{stem}.chain{c}{path.suffix}") for c in range(chains)]


def _summary_path(out: str) -> Path:
    return Path(str(out) + ".summary.json")


class _JsonlSink:
    """Append-only JSONL writer flushed every ``FLUSH_EVERY`` records."""

    def __init__(self, path: Path):
        self._fh = open(path, "w")
        self._pending = 0

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._pending += 1
        if self._pending >= FLUSH_EVERY:
            self._fh.flush()
            self._pending = 0

    def close(self) -> None:
        self._fh.close()


def _classical_worker(job) -> dict:
    model_path, temperature, delta, steps, seed, chain, n_max, init, path = job
    model = load_model(model_path)
    if not isinstance(model, ClassicalModel):
        raise ModelError("classical-chain needs a classical model")
    sys_ = ClassicalSystem(model.energies, temperature)
    af = AcceptanceFunction(temperature, delta)
    sink = _JsonlSink(Path(path))
    energies = model.energies

    def record(k, rec):
        sink.write({"step": k, "state": rec.state, "energy": float(energies[rec.state]),
                    "branches": rec.branches})

    try:
        if init is None:
            init = int(RngStreams(seed, chain).auxiliary().integers(sys_.num_states))
        run_classical_chain(sys_, list(model.kernels), af, init, steps, RngStreams(seed, chain),
                            n_max, sink=record)
    except TruncationError as exc:
        return {"chain": chain, "error": str(exc)}
    finally:
        sink.close()
    return {"chain": chain, "init": init}


def _quantum_worker(job) -> dict:
    (model_path, obs_path, temperature, delta, epsilon, z, p_cap, backend, steps, seed, chain,
     n_max, path) = job
    model = load_model(model_path)
    if not isinstance(model, QuantumModel):
        raise ModelError("quantum-chain needs a quantum model")
    h = model.hamiltonian
    b, kernel = load_observable(obs_path)
    af = AcceptanceFunction(temperature, delta)
    cfg = plan_resources(epsilon, h.e_max, temperature, z, p_cap)
    sink = _JsonlSink(Path(path))

    def record(k, rec, _rho):
        sink.write({"step": k, "omega0_raw": rec.omega0_raw, "omega0": rec.omega0_corrected,
                    "d0": rec.d0, "beta_d0": float(b.values[rec.d0]), "branches": rec.branches})

    rho0 = np.eye(h.dim, dtype=complex) / h.dim
    try:
        run_quantum_chain(rho0, h, b, kernel, af, cfg, backend, steps, RngStreams(seed, chain),
                          n_max, sink=record)
    except TruncationError as exc:
        return {"chain": chain, "error": str(exc)}
    finally:
        sink.close()
    return {"chain": chain}


def _run_jobs(worker, jobs, workers: int) -> list[dict]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, jobs))
    return [worker(j) for j in jobs]


def _finish_chains(args, kind: str, results: list[dict], extra: dict) -> int:
    summary = {"kind": kind, "seed": args.seed, "steps": args.steps, "chains": args.chains,
               "files": [str(p) for p in _chain_paths(args.out, args.chains)],
               "results": results, **extra}
    _summary_path(args.out).write_text(_dump(summary))
    errors = [r["error"] for r in results if "error" in r]
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    return 2 if errors else 0


def _check_chain_args(args) -> None:
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.chains < 1 or args.workers < 1:
        raise UsageError("--chains and --workers must be >= 1")
    if not 0 < args.delta < 1:
        raise UsageError("--delta must lie in (0, 1)")


def _cmd_classical_chain(args) -> int:
    _check_chain_args(args)
    load_model(args.model)
    paths = _chain_paths(args.out, args.chains)
    jobs = [(args.model, args.temperature, args.delta, args.steps, args.seed, c, args.nmax,
             args.init, str(paths[c])) for c in range(args.chains)]
    results = _run_jobs(_classical_worker, jobs, args.workers)
    return _finish_chains(args, "classical", results,
                          {"model": args.model, "temperature": args.temperature,
                           "delta": args.delta, "burnin": 0})


def _cmd_quantum_chain(args) -> int:
    _check_chain_args(args)
    if not 0 <= args.burnin < args.steps:
        raise UsageError("need 0 <= --burnin < --steps")
    if not 0 < args.epsilon < 1:
        raise UsageError("--epsilon must lie in (0, 1)")
    load_model(args.model)
    load_observable(args.observable)
    paths = _chain_paths(args.out, args.chains)
    jobs = [(args.model, args.observable, args.temperature, args.delta, args.epsilon, args.z,
             args.pcap, args.backend, args.steps, args.seed, c, args.nmax, str(paths[c]))
            for c in range(args.chains)]
    results = _run_jobs(_quantum_worker, jobs, args.workers)
    return _finish_chains(args, "quantum", results,
                          {"model": args.model, "observable": args.observable,
                           "temperature": args.temperature, "delta": args.delta,
                           "epsilon": args.epsilon, "z": args.z, "backend": args.backend,
                           "burnin": args.burnin})


def _cmd_db_verify(args) -> int:
    model = load_model(args.model)
    if not isinstance(model, QuantumModel):
        raise ModelError("db-verify needs a quantum model")
    h = model.hamiltonian
    b, kernel = load_observable(args.observable)
    af = AcceptanceFunction(args.temperature, args.delta)
    cfg = plan_resources(args.epsilon, h.e_max, args.temperature, args.z, args.pcap)
    qs = branch_superoperators(h, b, kernel, af, cfg, args.nmax, args.backend)
    report = {"config": cfg.to_dict(), "n_max": args.nmax, "backend": args.backend,
              "detailed_balance": check_quantum_db(h, b, kernel, af, cfg, args.nmax,
                                                   args.backend, branches=qs),
              "stationarity": check_stationarity(h, b, kernel, af, cfg, args.nmax,
                                                 args.backend, branches=qs)}
    _emit(_dump(report), args.out)
    return 0


def _read_jsonl(path: Path) -> list[dict]:
    if not path.is_file():
        raise ModelError(f"sample file not found: {path}")
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def _pool(reports: list[EstimateReport], name: str, reference) -> dict:
    """Combine per-chain estimates by sample-weighted mean."""
    n = np.array([r.samples for r in reports], dtype=float)
    means = np.array([r.mean for r in reports])
    errs = np.array([r.stderr for r in reports])
    mean = float((n * means).sum() / n.sum())
    stderr = float(np.sqrt(((n * errs) ** 2).sum()) / n.sum())
    z = None
    if reference is not None:
        diff = mean - reference
        z = diff / stderr if stderr > 0 else (0.0 if diff == 0 else float(np.sign(diff)) * np.inf)
    return {"name": name, "mean": mean, "stderr": stderr, "reference": reference, "z": z,
            "samples": int(n.sum()), "ess": float(sum(r.ess for r in reports)),
            "chains": [r.to_dict() for r in reports]}


def _references(args, summary: dict, kind: str) -> dict:
    refs = {}
    for item in args.reference or []:
        key, _, value = item.partition("=")
        try:
            refs[key] = float(value)
        except ValueError as exc:
            raise UsageError(f"bad --reference {item!r}; use NAME=VALUE") from exc
    model_path = args.model or summary.get("model")
    temperature = args.temperature if args.temperature is not None else summary.get("temperature")
    if model_path is None or temperature is None:
        return refs
    model = load_model(model_path)
    if kind == "classical" and isinstance(model, ClassicalModel):
        refs.setdefault("energy", ClassicalSystem(model.energies, temperature).gibbs_mean_energy())
    if kind == "quantum" and isinstance(model, QuantumModel):
        h = model.hamiltonian
        e_ref = gibbs_expectation(h, temperature, h.matrix())
        refs.setdefault("omega0", e_ref)
        refs.setdefault("omega0_raw", e_ref)
        obs_path = args.observable or summary.get("observable")
        if obs_path is not None:
            b, _ = load_observable(obs_path)
            refs.setdefault("beta_d0", gibbs_expectation(h, temperature, observable_matrix(b)))
    return refs


def _cmd_report(args) -> int:
    summary = {}
    if args.summary:
        path = Path(args.summary)
        if not path.is_file():
            raise ModelError(f"summary file not found: {path}")
        summary = json.loads(path.read_text())
    files = [Path(f) for f in args.samples] or [Path(f) for f in summary.get("files", [])]
    if not files:
        raise UsageError("report needs sample files or a summary")
    if args.thin < 1:
        raise UsageError("--thin must be >= 1")
    burnin = args.burnin if args.burnin is not None else int(summary.get("burnin", 0))
    chains = []
    for f in files:
        recs = [r for r in _read_jsonl(f) if r["step"] >= burnin][::args.thin]
        chains.append(recs)
    first = next((c[0] for c in chains if c), None)
    if first is None:
        raise UsageError("no samples left after burn-in")
    kind = "classical" if "energy" in first else "quantum"
    names = ["energy", "branches"] if kind == "classical" else ["omega0", "omega0_raw", "beta_d0",
                                                                "branches"]
    refs = _references(args, summary, kind)
    out = {"kind": kind, "burnin": burnin, "thin": args.thin, "estimates": {}}
    for name in names:
        reports = [estimate([r[name] for r in c], refs.get(name), name) for c in chains]
        out["estimates"][name] = _pool(reports, name, refs.get(name))
    _emit(_dump(out), args.out)
    return 0


# -- parser ---------------------------------------------------------------------


def _add_run_flags(p, quantum: bool) -> None:
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nmax", type=int, default=DEFAULT_N_MAX)
    p.add_argument("--out")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    if quantum:
        p.add_argument("--observable")
        p.add_argument("--epsilon", type=float)
        p.add_argument("--z", type=int, default=1)
        p.add_argument("--pcap", type=int, default=P_CAP)
        p.add_argument("--backend", choices=BACKENDS[:2], default="direct")
        p.add_argument("--burnin", type=int, default=0)
    else:
        p.add_argument("--init", type=int)


REQUIRED = {
    "plan": ("epsilon", "emax", "temperature"),
    "classical-chain": ("model", "temperature", "steps", "out"),
    "quantum-chain": ("model", "observable", "temperature", "epsilon", "steps", "out"),
    "db-verify": ("model", "observable", "temperature", "epsilon"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qmetro", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("plan", help="resource plan for a target filter error")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--emax", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--z", type=int, default=1)
    p.add_argument("--pcap", type=int, default=P_CAP)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_plan)

    p = sub.add_parser("gqpe-verify", help="CSV sweep of the implemented filter error")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--emax", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--z", type=int, default=1)
    p.add_argument("--pcap", type=int, default=P_CAP)
    p.add_argument("--points", type=int, default=2001)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_gqpe_verify)

    p = sub.add_parser("classical-chain", help="rejection-free classical Metropolis chain")
    _add_run_flags(p, quantum=False)
    p.set_defaults(handler=_cmd_classical_chain)

    p = sub.add_parser("quantum-chain", help="measurement-based quantum Metropolis chain")
    _add_run_flags(p, quantum=True)
    p.set_defaults(handler=_cmd_quantum_chain)

    p = sub.add_parser("db-verify", help="exact detailed-balance and stationarity report")
    p.add_argument("--model")
    p.add_argument("--observable")
    p.add_argument("--temperature", type=float)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--z", type=int, default=1)
    p.add_argument("--pcap", type=int, default=P_CAP)
    p.add_argument("--backend", choices=BACKENDS[:2], default="direct")
    p.add_argument("--nmax", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_db_verify)

    p = sub.add_parser("report", help="estimates with autocorrelation-corrected errors")
    p.add_argument("samples", nargs="*")
    p.add_argument("--summary")
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--model")
    p.add_argument("--observable")
    p.add_argument("--temperature", type=float)
    p.add_argument("--reference", action="append", metavar="NAME=VALUE")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_report)

    for p in sub.choices.values():
        p.add_argument("--config", metavar="FILE",
                       help="JSON file of flag values; explicit flags take precedence")
    return parser


def _load_config(path: str) -> dict:
    file = Path(path)
    if not file.is_file():
        raise ModelError(f"config file not found: {file}")
    try:
        data = json.loads(file.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{file}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ModelError(f"{file}: expected a JSON object")
    return data


def _parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip())
    args.gqpe_config = None
    if args.config:
        data = _load_config(args.config)
        if args.command == "gqpe-verify" and "lam" in data:
            args.gqpe_config = data
        else:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            known = {a.dest for a in sub._actions}
            defaults = {}
            for key, value in data.items():
                dest = key.replace("-", "_")
                if dest == "n_max":
                    dest = "nmax"
                if dest not in known or dest in ("config", "help", "handler"):
                    raise UsageError(f"unknown config key {key!r} for {args.command}")
                defaults[dest] = value
            sub.set_defaults(**defaults)
            args = parser.parse_args(argv)
            args.gqpe_config = None
    missing = [f"--{name}" for name in REQUIRED.get(args.command, ())
               if getattr(args, name) is None]
    if missing:
        raise UsageError(f"{args.command}: missing {', '.join(missing)}")
    return args


def run_cli(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
        return args.handler(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ModelError, GqpeConfigError, SeriesError, KeyError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (TruncationError, OracleGuardError, RuntimeError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
