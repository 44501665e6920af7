"""Command-line entry point.

Exit codes: 0 ok, 1 validation failure, 2 I/O or usage error, 3 numerical
failure, 4 reasoner backend failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

from . import __version__
from .concepts import ConceptError, UnknownGroup, builtin_registry, check_concept, concepts_in_group
from .dsl import ParseError, load_concept_file, validate_concept
from .grounding import FitConfig, FitDiverged, Grounding, ground
from .manipulation import AllCandidatesRejected, GripperSpec, select_grasp
from .pointio import PointCloudFormatError, read_cloud

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NUMERIC, EXIT_BACKEND = 0, 1, 2, 3, 4


def _err(*args):
    print(*args, file=sys.stderr)


def _emit(obj, as_json: bool, text: str = None):
    if as_json or text is None:
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(text)


# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    code = EXIT_OK
    summary = []
    for path in args.paths:
        try:
            concept = load_concept_file(path)
        except OSError as exc:
            _err(f"{path}: cannot read: {exc.strerror or exc}")
            summary.append({"path": path, "status": "io-error"})
            code = max(code, EXIT_IO)
            continue
        except ParseError as exc:
            _err(str(exc))
            summary.append({"path": path, "status": "parse-error"})
            code = max(code, EXIT_INVALID) if code != EXIT_IO else code
            continue
        try:
            check_concept(concept)
            report = validate_concept(concept, n_samples=args.samples, seed=args.seed)
        except ConceptError as exc:
            _err(f"{path}: {exc}")
            summary.append({"path": path, "status": "invalid"})
            code = EXIT_IO if code == EXIT_IO else EXIT_INVALID
            continue
        for line in report.lines():
            _err(line)
        ok = report.ok
        summary.append({"path": path, "concept": concept.id, "status": "ok" if ok else "invalid",
                        "violations": len(report.violations)})
        if not ok and code != EXIT_IO:
            code = EXIT_INVALID
    if args.json:
        _emit(summary, True)
    else:
        for s in summary:
            print(f"{s['status']:12s} {s['path']}")
    return code


def _backend(args):
    from .reasoner import ReasonerConfig, load_config, make_backend

    if args.config:
        return make_backend(load_config(args.config))
    return make_backend(ReasonerConfig())


def cmd_ground(args) -> int:
    from .reasoner import ReasonerError, ReasonerQuery, ask

    try:
        cloud = read_cloud(args.cloud)
    except (OSError, PointCloudFormatError) as exc:
        _err(f"{args.cloud}: {exc}")
        return EXIT_IO
    reg = builtin_registry()
    cid = args.concept
    if cid is None:
        try:
            options = concepts_in_group(reg, args.group)
        except UnknownGroup as exc:
            _err(str(exc))
            return EXIT_IO
        task = args.task or f"ground the {args.group}"
        try:
            cid = ask(_backend(args), ReasonerQuery("ConceptSelect", task, tuple(options))).chosen
        except (ReasonerError, OSError, ValueError) as exc:
            _err(f"reasoner: {exc}")
            return EXIT_BACKEND
    if cid not in reg:
        _err(f"unknown concept {cid!r}")
        return EXIT_IO
    try:
        g = ground(reg[cid], cloud, FitConfig(seed=args.seed))
    except FitDiverged as exc:
        _err(f"fit diverged: residual {exc.residual:.6g}")
        return EXIT_NUMERIC
    print(g.dumps())
    return EXIT_OK


def cmd_grasp(args) -> int:
    try:
        cloud = read_cloud(args.cloud)
        with open(args.grounding, encoding="utf-8") as fh:
            g = Grounding.from_json(json.load(fh))
    except (OSError, PointCloudFormatError, ValueError, KeyError) as exc:
        _err(f"cannot load inputs: {exc}")
        return EXIT_IO
    reg = builtin_registry()
    if g.concept_id not in reg:
        _err(f"unknown concept {g.concept_id!r}")
        return EXIT_IO
    concept = reg[g.concept_id]
    names = [f.name for f in concept.grasp_families]
    family = args.family or names[0]
    if family not in names:
        _err(f"{concept.id} has no grasp family {family!r}; choose from {', '.join(names)}")
        return EXIT_IO
    try:
        best = select_grasp(concept.grasp_family(family), g, cloud, GripperSpec(), k=args.k, seed=args.seed)
    except AllCandidatesRejected as exc:
        _err(str(exc))
        return EXIT_NUMERIC
    print(json.dumps(best.to_json(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .bench import synth_dataset
    from .sim import UnknownArchetype

    try:
        manifest = synth_dataset(args.archetype, args.n, args.seed, args.out)
    except UnknownArchetype as exc:
        _err(str(exc))
        return EXIT_IO
    except OSError as exc:
        _err(f"cannot write dataset: {exc}")
        return EXIT_IO
    if args.json:
        _emit(manifest, True)
    else:
        print(f"wrote {manifest['n']} {args.archetype} objects to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import BenchmarkConfig, ConfigError, load_config, run_benchmark
    from .reasoner import ReasonerError

    try:
        cfg = load_config(args.config) if args.config else BenchmarkConfig()
        over = {}
        if args.seed_given:
            over["seed"] = args.seed
        if args.oracle_stage:
            over["oracle_stages"] = tuple(args.oracle_stage)
        if args.mode:
            over["modes"] = tuple(args.mode)
        if args.trials:
            over["trials"] = {a: args.trials for a in cfg.trials}
        if args.archetype:
            n = args.trials or max(cfg.trials.values())
            over["trials"] = {a: n for a in args.archetype}
        if args.out:
            over["output_dir"] = args.out
        if over:
            cfg = BenchmarkConfig(**{**asdict(cfg), **over})
    except ConfigError as exc:
        _err(f"config: {exc}")
        return EXIT_IO
    try:
        report, _ = run_benchmark(cfg)
    except (ReasonerError, ConnectionError) as exc:
        _err(f"reasoner: {exc}")
        return EXIT_BACKEND
    if args.json:
        sys.stdout.write(report.dumps())
    else:
        sys.stdout.write(report.table())
    return EXIT_OK


def cmd_version(args) -> int:
    if args.json:
        _emit({"name": "artifact", "package": "conceptkit", "version": __version__}, True)
    else:
        print(f"conceptkit {__version__}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="config file for the subcommand")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="machine-readable output")

    p = argparse.ArgumentParser(prog="conceptkit", parents=[common],
                                description="Analytic part concepts: validate, ground, grasp, benchmark.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check .acon concept files")
    s.add_argument("paths", nargs="+")
    s.add_argument("--samples", type=int, default=1000)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("ground", parents=[common], help="fit a concept to a point cloud")
    s.add_argument("cloud")
    who = s.add_mutually_exclusive_group(required=True)
    who.add_argument("--concept")
    who.add_argument("--group")
    s.add_argument("--task", help="task sentence for concept selection within a group")
    s.set_defaults(func=cmd_ground)

    s = sub.add_parser("grasp", parents=[common], help="select a grasp on a grounded part")
    s.add_argument("cloud")
    s.add_argument("--grounding", required=True, help="Grounding JSON from `ground`")
    s.add_argument("--family")
    s.add_argument("--k", type=int, default=32)
    s.set_defaults(func=cmd_grasp)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("archetype")
    s.add_argument("-n", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("bench", parents=[common], help="run the benchmark")
    s.add_argument("--oracle-stage", action="append",
                   help="replace this stage and all before it with ground truth (repeatable)")
    s.add_argument("--mode", action="append", choices=("sampled", "estimated"))
    s.add_argument("--trials", type=int)
    s.add_argument("--archetype", action="append")
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("version", parents=[common], help="print the version")
    s.set_defaults(func=cmd_version)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_IO if exc.code else EXIT_OK
    args.seed_given = hasattr(args, "seed")
    for k, v in (("seed", 0), ("config", None), ("json", False)):
        if not hasattr(args, k):
            setattr(args, k, v)
    try:
        return args.func(args)
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
