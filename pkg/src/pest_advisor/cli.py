"""Command-line entry point: ``pest-advisor``.

Exit codes (closed set):

====  ==========================================================
0     success (an evaluation with low accuracy still succeeds)
1     unexpected internal error
2     usage error: bad flags, missing input file, unusable workspace
3     invalid input data: scenario, dataset, corpus or generator settings
4     a pipeline stage failed (stage named on stderr)
5     a required artifact is missing (e.g. ``trace`` on a bare dir)
6     backend configuration error
====  ==========================================================
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Sequence

from .domain import Citation, PestScenario
from .errors import (
    AdvisorError,
    BackendConfigError,
    CorpusNotFound,
    DatasetError,
    MalformedDoc,
    MissingArtifact,
    ScenarioInvalid,
    SpecInvalid,
    StageFailure,
    UnknownUnit,
    UnparsableQuantity,
)
from .evaluation import evaluate, load_dataset
from .knowledge import Corpus, load_corpus, load_seed_corpus
from .llm import BackendConfig, BackendKind, make_backend
from .pipeline import FaultSpec, Pipeline, extract_stage1_pmd, load_trace, validated_document
from .pma_markdown import format_citation, render_pma_markdown
from .synthetic import SyntheticSpec, generate_synthetic, plan_faults
from .workspace import Workspace, canonical_trace

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_STAGE = 4
EXIT_MISSING = 5
EXIT_BACKEND_CONFIG = 6

_INPUT_ERRORS = (
    ScenarioInvalid, DatasetError, CorpusNotFound, MalformedDoc, SpecInvalid, UnparsableQuantity, UnknownUnit,
)


class UsageError(Exception):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, StageFailure):
        return EXIT_STAGE
    if isinstance(exc, MissingArtifact):
        return EXIT_MISSING
    if isinstance(exc, BackendConfigError):
        return EXIT_BACKEND_CONFIG
    if isinstance(exc, _INPUT_ERRORS):
        return EXIT_INPUT
    return EXIT_INTERNAL


# -- shared option handling ------------------------------------------------------


def _backend_config(args: argparse.Namespace) -> BackendConfig:
    base = BackendConfig.load(args.config) if getattr(args, "config", None) else BackendConfig()
    overrides: dict[str, Any] = {}
    if args.backend:
        overrides["kind"] = args.backend
    if args.model:
        overrides["model_name"] = args.model
    if args.endpoint:
        overrides["endpoint"] = args.endpoint
    if not overrides:
        return base
    return BackendConfig.from_json({**base.to_json(), **overrides})


def _corpus(args: argparse.Namespace) -> Corpus:
    return load_corpus(args.corpus) if args.corpus else load_seed_corpus()


def _fault(args: argparse.Namespace) -> FaultSpec:
    targets = None
    if args.fault_targets:
        raw = args.fault_targets
        if raw.startswith("@"):
            path = Path(raw[1:])
            if not path.is_file():
                raise UsageError(f"fault target file not found: {path}")
            raw = path.read_text(encoding="utf-8").replace("\n", ",")
        targets = frozenset(t.strip() for t in raw.split(",") if t.strip())
    try:
        return FaultSpec(rate=args.fault_rate, targets=targets)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _fresh_workspace(path: str | None, prefix: str) -> Path:
    if path is None:
        return Path(tempfile.mkdtemp(prefix=prefix))
    root = Path(path)
    if root.exists() and (not root.is_dir() or any(root.iterdir())):
        raise UsageError(f"workspace {root} must be a new or empty directory")
    return root


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=[k.value for k in BackendKind], help="text backend (default: scripted)")
    p.add_argument("--config", help="backend config JSON (secrets are refused; name an env var instead)")
    p.add_argument("--model", help="model name for the remote backend")
    p.add_argument("--endpoint", help="base URL of an OpenAI-compatible endpoint")
    p.add_argument("--corpus", help="corpus directory (default: bundled seed corpus)")
    p.add_argument("--seed", type=int, default=0, help="seed for fault injection (default: 0)")
    p.add_argument("--fault-rate", type=float, default=0.0, help="probability of flipping a decision")
    p.add_argument("--fault-targets", help="comma-separated scenario ids to flip, or @file with one per line")


def _cite(citation: Citation) -> str:
    return format_citation(citation).removeprefix("- ")


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# -- commands ---------------------------------------------------------------------


def cmd_advise(args: argparse.Namespace) -> int:
    path = Path(args.scenario)
    if not path.is_file():
        raise UsageError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioInvalid(f"scenario file is not valid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ScenarioInvalid("scenario file must hold one JSON object")
    scenario = PestScenario.from_json(data).without_label()
    if scenario.scenario_id is None:
        scenario = replace(scenario, scenario_id=path.stem)

    config = _backend_config(args)
    corpus = _corpus(args)
    fault = _fault(args)
    root = _fresh_workspace(args.workspace, "pest-advisor-")
    pipeline = Pipeline(
        make_backend(config), corpus, fault=fault, seed=args.seed,
        temperature=config.temperature, max_output=config.max_output,
    )
    print(f"workspace: {root}", file=sys.stderr)
    trace = pipeline.run(scenario, root)
    ws = Workspace(root)
    print(f"verdict={trace.validator_verdict}", file=sys.stderr)

    doc = validated_document(ws)
    final = trace.final_pmd
    assert final is not None
    if args.format == "json":
        stage1 = extract_stage1_pmd(ws)
        _emit(json.dumps(
            {
                "run_id": trace.run_id,
                "scenario_id": trace.scenario_id,
                "verdict": trace.validator_verdict,
                "stage1_pmd": stage1.action_required,
                "final_pmd": final.action_required,
                "threshold": final.threshold_used.to_json() if final.threshold_used else None,
                "confidence": final.confidence.value,
                "rationale": final.rationale,
                "citations": [_cite(c) for c in doc.citations],
            },
            indent=2,
            ensure_ascii=False,
        ))
    elif args.format == "plain":
        threshold = f"{final.threshold_used.threshold}" if final.threshold_used else "none found"
        _emit(
            f"PMD: {'true' if final.action_required else 'false'}\n"
            f"verdict: {trace.validator_verdict}\n"
            f"severity: {final.severity_used}\n"
            f"threshold: {threshold}\n"
            + "".join(f"source: {_cite(c)}\n" for c in doc.citations)
        )
    else:
        _emit(render_pma_markdown(doc))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    if not args.dataset:
        raise UsageError("eval needs --dataset")
    if not Path(args.dataset).is_file():
        raise UsageError(f"dataset file not found: {args.dataset}")
    dataset = load_dataset(args.dataset)
    config = _backend_config(args)
    root = None
    if args.workspace:
        root = _fresh_workspace(args.workspace, "pest-eval-")
    report = evaluate(
        dataset, _corpus(args), config, _fault(args), args.seed, workspace_root=root, workers=args.workers
    )
    if args.format == "json":
        _emit(report.to_json_text())
    elif args.format == "plain":
        _emit(report.to_plain())
    else:
        _emit(report.to_markdown())
    return EXIT_OK


def render_timeline(trace: dict[str, Any]) -> str:
    lines = [f"run {trace['run_id']}  scenario {trace['scenario_id']}  status {trace['status']}"]
    for i, stage in enumerate(trace["stages"], start=1):
        mark = "FAILED" if stage.get("error") else "ok"
        lines.append(f"{i}. {stage['stage']:<20} {stage['agent']:<9} {mark}")
        if stage.get("prompt_digest"):
            lines.append(f"     prompt {stage['prompt_digest'][:16]}  output {(stage.get('output_digest') or '-')[:16]}")
        if stage.get("fault_injected"):
            lines.append("     fault injected: decision marker flipped")
        if stage.get("error"):
            lines.append(f"     error: {stage['error']}")
    lines.append(f"verdict: {trace.get('validator_verdict') or '-'}")
    final = trace.get("final_pmd")
    if final is not None:
        lines.append(f"final PMD: {'true' if final['action_required'] else 'false'}")
    return "\n".join(lines) + "\n"


def cmd_trace(args: argparse.Namespace) -> int:
    trace = load_trace(args.workspace)
    if args.format == "json":
        _emit(json.dumps(canonical_trace(trace), indent=2, ensure_ascii=False))
    else:
        _emit(render_timeline(trace))
    return EXIT_OK


def cmd_corpus(args: argparse.Namespace) -> int:
    corpus = _corpus(args)
    if args.action == "list":
        rows = [
            {"doc_id": d.doc_id, "publisher": d.publisher, "title": d.title, "thresholds": len(d.threshold_records)}
            for d in corpus.docs
        ]
        if args.format == "json":
            _emit(json.dumps(rows, indent=2, ensure_ascii=False))
        else:
            _emit("\n".join(f"{r['doc_id']}  [{r['publisher']}] {r['title']} ({r['thresholds']} thresholds)" for r in rows))
    elif args.action == "search":
        if not args.terms:
            raise UsageError("corpus search needs a query")
        results = corpus.search(" ".join(args.terms), args.k)
        if args.format == "json":
            _emit(json.dumps(
                [{"doc_id": r.doc_id, "score": r.score, "snippet": r.snippet} for r in results], indent=2, ensure_ascii=False
            ))
        else:
            _emit("\n".join(f"{r.score:.4f}  {r.doc_id}: {r.snippet}" for r in results) or "no results")
    else:
        if len(args.terms) != 2:
            raise UsageError('corpus lookup needs exactly two arguments: "PEST" "CROP"')
        record = corpus.lookup_threshold(*args.terms)
        if args.format == "json":
            _emit(json.dumps(record.to_json() if record else None, indent=2, ensure_ascii=False))
        else:
            _emit(f"{record.threshold}  ({_cite(record.source)})" if record else "no threshold found")
    return EXIT_OK


def cmd_dataset(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"output directory {out} must be new or empty")
    bundle = generate_synthetic(SyntheticSpec(n=args.n, pests=args.pests), seed=args.seed)
    plan = plan_faults(bundle.dataset, args.flips, args.withdrawn, seed=args.seed) if args.flips else None
    out.mkdir(parents=True, exist_ok=True)
    bundle.dataset.write(out / "dataset.json")
    bundle.corpus.write(out / "corpus")
    written = ["dataset.json", "corpus/"]
    if plan is not None:
        (out / "fault_targets.txt").write_text("\n".join(plan.flips) + "\n", encoding="utf-8")
        written.append("fault_targets.txt")
        if plan.withdrawn:
            bundle.corpus.without_thresholds(plan.withdrawn_pairs(bundle.dataset)).write(out / "corpus_withdrawn")
            written.append("corpus_withdrawn/")
    _emit("\n".join(f"wrote {out / name}" for name in written))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pest-advisor", description="Pest management advice with validated decisions.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=["json", "markdown", "plain"], default="markdown")

    p = sub.add_parser("advise", parents=[fmt], help="advise on one scenario JSON file")
    p.add_argument("scenario")
    p.add_argument("--workspace", help="new or empty directory for the run (default: a temp dir)")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_advise)

    p = sub.add_parser("eval", parents=[fmt], help="score a labelled dataset at both measurement points")
    p.add_argument("--dataset", help="JSON array of labelled scenarios")
    p.add_argument("--workspace", help="keep per-scenario workspaces under this new directory")
    p.add_argument("--workers", type=int, default=4)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", parents=[fmt], help="show the stage timeline of a run")
    p.add_argument("workspace")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("corpus", parents=[fmt], help="inspect a corpus")
    p.add_argument("action", choices=["list", "search", "lookup"])
    p.add_argument("terms", nargs="*", help="search query, or PEST CROP for lookup")
    p.add_argument("--corpus", help="corpus directory (default: bundled seed corpus)")
    p.add_argument("-k", type=int, default=5)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("dataset", help="generate a synthetic labelled dataset and corpus")
    p.add_argument("action", choices=["generate"])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=68)
    p.add_argument("--pests", type=int, default=39)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flips", type=int, default=0, help="also pick this many scenarios to flip")
    p.add_argument("--withdrawn", type=int, default=0, help="of the flips, how many lose their threshold")
    p.set_defaults(func=cmd_dataset)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except StageFailure as exc:
        print(f"error: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    except (UsageError, AdvisorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
