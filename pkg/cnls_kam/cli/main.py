"""
Command-line entry point: python -m cnls_kam <subcommand>

`runs` reads the run ledger; every other subcommand writes a manifest plus its reports.

Exit codes: 0 when the verdict passes, 1 when it fails, 2 on any error.
"""

import argparse
import logging
import os
import time
from contextlib import contextmanager
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from cnls_kam import __version__
from cnls_kam.birkhoff.main import describe_F, frequencies, normal_form_pipeline
from cnls_kam.cli.config import RunConfig, apply_overrides, parse_config, parse_floats, parse_sites
from cnls_kam.cli.reports import RunManifest, manifest_id, sha256_file, write_csv, write_json
from cnls_kam.errors import CNLSError
from cnls_kam.lattice.main import check_admissible, classification_map, site_atlas
from cnls_kam.melnikov.main import check_conditions, scan_measure
from cnls_kam.melnikov.models import ParameterBox
from cnls_kam.simulate.main import residual_scaling, run, verify_quasiperiodic
from cnls_kam.simulate.models import ModeTrace

if TYPE_CHECKING:
    from cnls_kam.database.run_ledger import RunLedgerService

logger = logging.getLogger(__name__)

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

# (passed, written files)
HandlerResult = Tuple[bool, List[Path]]


def _site(t) -> str:
    return f"({t[0]},{t[1]})"


def run_lattice(config: RunConfig, out_dir: Path, mid: str, threads: int) -> HandlerResult:
    I, R = config.tangential, config.radius
    verdict = check_admissible(I, R)
    files = [write_json(out_dir / "lattice_report.json", verdict, mid)]
    if verdict.admissible:
        rows = []
        for entry in site_atlas(I, R):
            pair = entry.pair
            partner = None if pair is None else (pair.m if entry.site == pair.n else pair.n)
            rows.append([
                entry.site.n1, entry.site.n2, entry.tag.value, entry.block_dim,
                "" if partner is None else str(partner),
                "" if pair is None else str(pair.i),
                "" if pair is None else str(pair.j),
            ])
        files.append(write_csv(out_dir / "lattice_atlas.csv",
                               ["n1", "n2", "tag", "block_dim", "partner", "i", "j"], rows, mid))
    else:
        logger.warning(f"⚠️ Tangential set is not admissible: {len(verdict.violations)} violation(s)")
    return verdict.admissible, files


def run_normalform(config: RunConfig, out_dir: Path, mid: str, threads: int) -> HandlerResult:
    I, R = config.tangential, config.radius
    report, F = normal_form_pipeline(config.d, R, I, classification_map(I, R), remainder=config.remainder)
    records, _ = describe_F(F)
    rows = [[r.target, r.monomial, ";".join(_site(s) for s in r.sites), r.denominator,
             r.coefficient[0], r.coefficient[1]] for r in records]
    files = [
        write_json(out_dir / "normalform_report.json", report, mid),
        write_csv(out_dir / "F_terms.csv", ["target", "monomial", "sites", "denominator", "coeff_re", "coeff_im"],
                  rows, mid),
    ]
    return report.passed, files


def run_melnikov(config: RunConfig, out_dir: Path, mid: str, threads: int) -> HandlerResult:
    I, R = config.tangential, config.radius
    freq = frequencies(I, classification_map(I, R), config.d)
    box = ParameterBox(config.d, config.b)
    xi = np.asarray(config.box_point, dtype=float) if config.box_point is not None else box.center()
    report = check_conditions(xi, config.epsilon, config.gamma, config.tau, config.kmax, R, freq)
    payload = {"check": report, "scan": None}
    files = []
    if config.samples > 0:
        scan = scan_measure(box, config.gamma_list, config.tau, config.epsilon, config.kmax, R,
                            config.samples, config.seed, freq, threads=threads)
        payload["scan"] = scan
        rows = [[r.gamma, r.excluded, r.excluded_fraction, r.ci_low, r.ci_high] for r in scan.rows]
        files.append(write_csv(out_dir / "measure_scan.csv",
                               ["gamma", "excluded", "excluded_fraction", "ci_low", "ci_high"], rows, mid))
    files.insert(0, write_json(out_dir / "melnikov_report.json", payload, mid))
    return report.passed, files


def _trace_rows(trace: ModeTrace) -> Tuple[List[str], List[list]]:
    header = ["t"]
    for h, n in trace.modes:
        header += [f"re_q{h}{n}", f"im_q{h}{n}"]
    d = trace.mass.shape[1]
    header += [f"mass_{h}" for h in range(1, d + 1)] + [f"normal_sup_{h}" for h in range(1, d + 1)]
    rows = []
    for s, t in enumerate(trace.times):
        row = [float(t)]
        for value in trace.values[s]:
            row += [float(value.real), float(value.imag)]
        row += [float(v) for v in trace.mass[s]] + [float(v) for v in trace.normal_sup[s]]
        rows.append(row)
    return header, rows


def _simulate(config: RunConfig, out_dir: Path, mid: str, with_residual: bool) -> HandlerResult:
    sim = config.to_sim_config()
    trace = run(sim)
    residual = residual_scaling(sim) if with_residual else None
    verdict = verify_quasiperiodic(trace, sim, residual)
    header, rows = _trace_rows(trace)
    files = [
        write_csv(out_dir / "trace.csv", header, rows, mid),
        write_json(out_dir / "qp_verdict.json", verdict, mid),
    ]
    return verdict.passed, files


def run_simulate(config: RunConfig, out_dir: Path, mid: str, threads: int) -> HandlerResult:
    return _simulate(config, out_dir, mid, with_residual=False)


def run_verify(config: RunConfig, out_dir: Path, mid: str, threads: int) -> HandlerResult:
    return _simulate(config, out_dir, mid, with_residual=True)


HANDLERS: Dict[str, Callable[[RunConfig, Path, str, int], HandlerResult]] = {
    "lattice": run_lattice,
    "normalform": run_normalform,
    "melnikov": run_melnikov,
    "simulate": run_simulate,
    "verify": run_verify,
}


def dispatch(subcommand: str, config: RunConfig, out_dir: Path, mid: str, threads: int = 1) -> Tuple[int, List[Path]]:
    """Run one subcommand; exit code 0 on pass, 1 on a failed verdict, 2 on a library error"""
    try:
        passed, files = HANDLERS[subcommand](config, out_dir, mid, max(threads, 1))
    except CNLSError as e:
        logger.error(f"❌ {subcommand} failed: {e}")
        return EXIT_ERROR, []
    return (EXIT_PASS if passed else EXIT_FAIL), files


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="key=value run configuration")
    common.add_argument("--seed", type=int, default=None, help="Override the configured seed")
    common.add_argument("--out-dir", type=Path, default=None, help="Output directory (env CNLS_OUT_DIR)")
    common.add_argument("--threads", type=int, default=1, help="Worker threads for the measure scan")
    common.add_argument("--radius", type=int, default=None, help="Truncation radius R")
    common.add_argument("--sites", type=parse_sites, default=None, help="Tangential sites, e.g. '1,0;-1,0'")

    parser = argparse.ArgumentParser(prog="cnls_kam", description="Quasi-periodic solution toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("lattice", parents=[common], help="Resonance classification and admissibility")
    normalform = sub.add_parser("normalform", parents=[common], help="Cubic partial normal form")
    normalform.add_argument("--remainder", action="store_true", default=None, help="Bound the degree-5 remainder")
    melnikov = sub.add_parser("melnikov", parents=[common], help="Melnikov conditions and measure scan")
    melnikov.add_argument("--gamma", type=float, default=None)
    melnikov.add_argument("--gamma-list", type=parse_floats, default=None, help="e.g. 1e-2,1e-3,1e-4")
    melnikov.add_argument("--tau", type=float, default=None)
    melnikov.add_argument("--epsilon", type=float, default=None)
    melnikov.add_argument("--kmax", type=int, default=None)
    melnikov.add_argument("--samples", type=int, default=None)
    sub.add_parser("simulate", parents=[common], help="Split-step run from the torus ansatz")
    sub.add_parser("verify", parents=[common], help="Simulation plus residual scaling")
    runs = sub.add_parser("runs", help="List or delete runs recorded in the ledger")
    runs.add_argument("--out-dir", type=Path, default=None, help="Directory holding runs.db (env CNLS_OUT_DIR)")
    runs.add_argument("--subcommand", choices=sorted(HANDLERS), default=None)
    runs.add_argument("--manifest", default=None, help="Only runs of this manifest id")
    runs.add_argument("--limit", type=int, default=20)
    runs.add_argument("--delete", metavar="RUN_ID", default=None, help="Remove one run and its artifacts")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    names = ("seed", "sites", "radius", "remainder", "gamma", "gamma_list", "tau", "epsilon", "kmax", "samples")
    return {name: getattr(args, name, None) for name in names}


def _ledger_enabled() -> bool:
    return os.getenv("LEDGER_DISABLED", "false").lower() != "true"


@contextmanager
def ledger_service(out_dir: Path) -> Iterator["RunLedgerService"]:
    """Open the run ledger (LEDGER_DB_PATH, else <out_dir>/runs.db) for one unit of work"""
    from cnls_kam.database.connection import create_tables, get_database_url, get_db, get_engine
    from cnls_kam.database.run_ledger import RunLedgerService

    engine = get_engine(get_database_url(os.getenv("LEDGER_DB_PATH") or str(out_dir / "runs.db")))
    create_tables(engine)
    sessions = get_db(engine)
    try:
        yield RunLedgerService(next(sessions))
    finally:
        sessions.close()


def record_in_ledger(manifest: RunManifest, out_dir: Path):
    """Store the run and its artifacts; ledger problems never change the exit code"""
    try:
        with ledger_service(out_dir) as service:
            run_id = service.create_run(manifest.subcommand, manifest.manifest_id, manifest.seed,
                                        manifest.tool_version, manifest.config, manifest.input_hashes)
            for path, digest in manifest.artifacts.items():
                service.add_artifact(run_id, path, Path(path).suffix.lstrip("."), digest)
            service.finish_run(run_id, manifest.exit_code, manifest.wall_time)
        logger.info(f"✅ Run {run_id} recorded in the ledger")
    except Exception as e:
        logger.warning(f"⚠️ Could not record run in the ledger: {e}")


RUN_ICONS = {EXIT_PASS: "✅", EXIT_FAIL: "⚠️", EXIT_ERROR: "❌", None: "⏳"}


def show_runs(args: argparse.Namespace, out_dir: Path) -> int:
    """List recorded runs with their stats, or delete one with --delete"""
    try:
        with ledger_service(out_dir) as service:
            if args.delete:
                if not service.delete_run(args.delete):
                    print(f"❌ No run {args.delete} in the ledger")
                    return EXIT_ERROR
                print(f"🗑️ Deleted run {args.delete}")
                return EXIT_PASS
            runs = service.get_runs(subcommand=args.subcommand, manifest_id=args.manifest, limit=args.limit)
            for record in runs:
                stats = service.get_run_stats(record.run_id)
                wall = "-" if stats["wall_time"] is None else f"{stats['wall_time']:.2f}s"
                print(f"{RUN_ICONS.get(stats['exit_code'], '❓')} {record.run_id} {record.subcommand:<10} "
                      f"exit={stats['exit_code']} wall={wall} artifacts={stats['artifact_count']} "
                      f"manifest={record.manifest_id[:12]} reruns={stats['runs_with_same_manifest']}")
            print(f"📊 {len(runs)} run(s)")
    except Exception as e:
        logger.error(f"❌ Could not read the ledger: {e}")
        return EXIT_ERROR
    return EXIT_PASS


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.getenv("LOG_LEVEL", "INFO").upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    out_dir = Path(args.out_dir or os.getenv("CNLS_OUT_DIR") or "out")
    if args.command == "runs":
        return show_runs(args, out_dir)
    started = time.time()
    manifest = None
    exit_code = EXIT_ERROR
    try:
        config = apply_overrides(parse_config(args.config), _overrides(args))
        input_hashes = {str(args.config): sha256_file(args.config)} if args.config else {}
        resolved = config.model_dump(mode="json")
        mid = manifest_id(args.command, resolved, config.seed, __version__, input_hashes)
        manifest = RunManifest(subcommand=args.command, config=resolved, seed=config.seed,
                               tool_version=__version__, input_hashes=input_hashes, manifest_id=mid)
        out_dir.mkdir(parents=True, exist_ok=True)
        exit_code, files = dispatch(args.command, config, out_dir, mid, args.threads)
        manifest.artifacts = {str(path): sha256_file(path) for path in files}
    except CNLSError as e:
        logger.error(f"❌ {args.command} failed: {e}")
    except Exception as e:
        logger.exception(f"❌ Unexpected error in {args.command}: {e}")

    if manifest is not None:
        manifest.wall_time = time.time() - started
        manifest.exit_code = exit_code
        write_json(out_dir / "manifest.json", manifest)
        if _ledger_enabled():
            record_in_ledger(manifest, out_dir)

    status = {EXIT_PASS: "✅ pass", EXIT_FAIL: "⚠️ fail", EXIT_ERROR: "❌ error"}[exit_code]
    print(f"{status}: {args.command} (exit {exit_code}) -> {out_dir}")
    return exit_code
