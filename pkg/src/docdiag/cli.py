"""Command-line front door: graph operations, runs, fitting, causal queries,
variability analyses, evaluation reports, and the service launcher.

Exit codes: 0 success, 1 operation or validation failure, 2 usage error.
All JSON outputs are emitted with sorted keys and carry the seed, so a fixed
seed makes every invocation byte-reproducible.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import analysis as ana
from . import engine as eng
from . import scm as scm_mod
from .evaluation import Condition, EmbeddingCosineScorer, TokenF1Scorer, \
    format_table, leave_one_out_baseline, report
from .nlp import HashingEmbedder, NaiveAnnotator
from .store import DocumentStore, ExecutionMode
from .workflow import (
    AnswerSchema,
    BOOLEAN_WHITELIST_FIELD,
    StepKind,
    clarity_confounder_edges,
    condense,
    layers,
    linearize,
    load_workflow,
    save_workflow,
    stats,
    validate,
    workflow_to_dict,
)


class CliError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _emit(args, payload: dict, rows: list[dict] | None = None,
          table: str | None = None) -> None:
    fmt = getattr(args, "format", "json")
    out = getattr(args, "output", None)
    if fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        if rows is None:
            raise CliError("this command has no csv representation")
        buffer = io.StringIO()
        fields = sorted({k for row in rows for k in row})
        writer = csv.DictWriter(buffer, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        text = buffer.getvalue()
    else:  # table
        text = (table if table is not None
                else json.dumps(payload, indent=2, sort_keys=True)) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _store(args) -> DocumentStore:
    if not getattr(args, "store", None):
        raise CliError("--store is required for this command")
    return DocumentStore(args.store)


# ---------------------------------------------------------------------------
# graph commands

def cmd_validate(args) -> int:
    wf = load_workflow(args.workflow)
    violations = validate(wf)
    payload = {
        "seed": args.seed,
        "workflow": wf.id,
        "valid": not violations,
        "violations": [
            {"code": v.code, "message": v.message, "subjects": list(v.subjects)}
            for v in violations
        ],
    }
    _emit(args, payload, rows=payload["violations"])
    return 0 if not violations else 1


def cmd_linearize(args) -> int:
    wf = load_workflow(args.workflow)
    order = linearize(wf)
    _emit(args, {"seed": args.seed, "workflow": wf.id, "order": order},
          rows=[{"position": i, "step": sid} for i, sid in enumerate(order)],
          table="\n".join(order))
    return 0


def cmd_layers(args) -> int:
    wf = load_workflow(args.workflow)
    out = layers(wf)
    _emit(args, {"seed": args.seed, "workflow": wf.id,
                 "layer_count": len(out), "layers": out},
          rows=[{"layer": i, "step": sid}
                for i, layer in enumerate(out) for sid in layer],
          table="\n".join(f"{i}: {', '.join(layer)}"
                          for i, layer in enumerate(out)))
    return 0


def cmd_stats(args) -> int:
    wf = load_workflow(args.workflow)
    st = stats(wf)
    payload = {"seed": args.seed, "workflow": wf.id, **st.as_dict(),
               "steps": len(wf.steps), "edges": len(wf.edges)}
    _emit(args, payload, rows=[payload])
    return 0


def _boolean_keep(raw: dict) -> tuple[set[str], set[str]]:
    whitelist = set(raw.get(BOOLEAN_WHITELIST_FIELD, []))
    boolean = {s["id"] for s in raw["steps"]
               if s.get("schema") == AnswerSchema.BOOLEAN_WITH_TEXT.value}
    return boolean | whitelist, whitelist


def cmd_condense(args) -> int:
    wf = load_workflow(args.workflow)
    with open(args.workflow, encoding="utf-8") as fh:
        raw = json.load(fh)
    if args.keep == "boolean":
        keep, whitelist = _boolean_keep(raw)
    elif args.keep == "all":
        keep, whitelist = set(wf.step_ids), set(wf.step_ids)
    else:
        keep = {s.strip() for s in args.keep.split(",") if s.strip()}
        whitelist = set(args.whitelist.split(",")) if args.whitelist else set()
    extra = []
    if args.confounder:
        section_reads = [s.strip() for s in (args.confounder_reads or "").split(",")
                         if s.strip()]
        if not section_reads:
            section_reads = [sid for sid in wf.inputs
                             if wf.step_by_id[sid].kind is StepKind.READ]
        extra = clarity_confounder_edges(wf, keep, args.confounder, section_reads)
    out = condense(wf, keep, extra, allow_non_boolean=whitelist)
    if args.output_workflow:
        save_workflow(out, args.output_workflow)
    _emit(args, {"seed": args.seed, "workflow": out.id,
                 "nodes": len(out.steps), "edges": len(out.edges),
                 "confounder_edges": [[p, c] for p, c in extra],
                 "definition": workflow_to_dict(out)})
    return 0


# ---------------------------------------------------------------------------
# runs

def cmd_run(args) -> int:
    store = _store(args)
    if args.manifest:
        with open(args.manifest, encoding="utf-8") as fh:
            data = json.load(fh)
        data.setdefault("seed", args.seed)
    else:
        if not (args.mode and args.workflow_id and args.document_id):
            raise CliError("either --manifest or --mode/--workflow-id/--document-id")
        resolver = {"kind": args.resolver}
        config = _load_config(args.config)
        resolver.update(config.get("resolver", {}))
        data = {
            "mode": args.mode,
            "workflow": args.workflow_id,
            "document": args.document_id,
            "resolver": resolver,
            "seed": args.seed,
            "source_execution": args.source_execution,
            "exclude_figure_steps": args.exclude_figure_steps,
            "read_sections": config.get("read_sections", {}),
        }
    manifest = eng.manifest_from_dict(data)
    record = eng.run_from_manifest(manifest, store)
    from .store import record_to_dict
    _emit(args, {"seed": manifest.seed, "manifest": manifest.as_dict(),
                 "execution": record.execution_id,
                 "answered": len(record.answers),
                 "failures": dict(sorted(record.failures.items())),
                 "record": record_to_dict(record)})
    return 0


# ---------------------------------------------------------------------------
# causal model commands

def cmd_fit(args) -> int:
    store = _store(args)
    condensed = load_workflow(args.condensed_workflow)
    records = ana.human_records(store, args.workflow_id or condensed.id,
                                modes=_modes(args))
    observations = ana.observations_for_fit(
        records, condensed.step_ids, include_uncertain=not args.exclude_uncertain)
    graph = {sid: condensed.parent_map[sid] for sid in condensed.step_ids}
    model = scm_mod.fit(graph, observations, alpha=args.alpha_smoothing)
    scm_mod.save_scm(model, args.output_scm,
                     meta={"mechanism": "laplace-smoothed-cpt",
                           "alpha": args.alpha_smoothing,
                           "observations": len(observations),
                           "seed": args.seed})
    _emit(args, {"seed": args.seed, "nodes": len(model.nodes),
                 "observations": len(observations), "scm": args.output_scm})
    return 0


def _modes(args) -> tuple[ExecutionMode, ...]:
    raw = getattr(args, "modes", None) or "human"
    return tuple(ExecutionMode(m.strip()) for m in raw.split(","))


def cmd_ace(args) -> int:
    model = scm_mod.load_scm(args.scm)
    method = "monte-carlo" if args.monte_carlo else "exact"
    if args.all:
        if not args.y:
            raise CliError("--all needs --y TARGET")
        wf = load_workflow(args.workflow) if args.workflow else None
        rows = ana.ace_table(model, args.y, wf)
        _emit(args, {"seed": args.seed, "target": args.y, "rows": rows},
              rows=rows,
              table="\n".join(f"{r['step']}\t{r['ace']:+.4f}" for r in rows))
        return 0
    if not (args.x and args.y):
        raise CliError("ace needs --x and --y (or --all --y)")
    value = scm_mod.ace(model, args.x, args.y, method=method,
                        n=args.monte_carlo or 100_000, seed=args.seed)
    _emit(args, {"seed": args.seed, "x": args.x, "y": args.y,
                 "method": method, "ace": value},
          rows=[{"x": args.x, "y": args.y, "ace": value}],
          table=f"{value:+.6f}")
    return 0


def cmd_counterfactual(args) -> int:
    model = scm_mod.load_scm(args.scm)
    with open(args.observed, encoding="utf-8") as fh:
        observed = {k: bool(v) for k, v in json.load(fh).items()}
    if args.impute:
        observed = scm_mod.impute_with_marginals(model, observed)
    clamp = 1e-9 if args.clamp else None
    if args.search:
        candidates = [s.strip() for s in args.search.split(",") if s.strip()]
        result = scm_mod.counterfactual_search(
            model, observed, candidates, args.target,
            flip_threshold=args.flip_threshold, clamp_eps=clamp)
        entries = [{"interventions": e.interventions,
                    "p_target_true": e.p_target_true, "changed": e.changed}
                   for e in result.entries]
        _emit(args, {"seed": args.seed, "target": args.target,
                     "factual_value": result.factual_value,
                     "entries": entries,
                     "flips": [{"interventions": e.interventions,
                                "p_target_true": e.p_target_true,
                                "changed": e.changed} for e in result.flips]},
              rows=entries)
        return 0
    interventions = {k: bool(v) for k, v in json.loads(args.intervene or "{}").items()}
    p = scm_mod.counterfactual(model, observed, interventions, args.target,
                               clamp_eps=clamp)
    _emit(args, {"seed": args.seed, "target": args.target,
                 "interventions": interventions, "p_target_true": p},
          table=f"{p:.6f}")
    return 0


# ---------------------------------------------------------------------------
# analyses

def cmd_variability(args) -> int:
    store = _store(args)
    wf = store.get_workflow(args.workflow_id)
    records = ana.human_records(store, args.workflow_id, modes=_modes(args))
    out = ana.variability_report(records, wf, NaiveAnnotator(), HashingEmbedder(),
                                 include_uncertain=not args.exclude_uncertain)
    out["seed"] = args.seed
    if args.save:
        analyses = store.root / "analyses"
        analyses.mkdir(exist_ok=True)
        (analyses / "variability.json").write_text(
            json.dumps(out, indent=2, sort_keys=True), encoding="utf-8")
    _emit(args, out, rows=out["cells"])
    return 0


def cmd_alpha(args) -> int:
    store = _store(args)
    wf = store.get_workflow(args.workflow_id)
    records = ana.human_records(store, args.workflow_id, modes=_modes(args))
    steps = None
    if args.steps:
        steps = [s.strip() for s in args.steps.split(",") if s.strip()]
    out = ana.agreement_report(records, wf, steps,
                               include_uncertain=not args.exclude_uncertain)
    out["seed"] = args.seed
    if args.save:
        analyses = store.root / "analyses"
        analyses.mkdir(exist_ok=True)
        (analyses / "agreement.json").write_text(
            json.dumps(out, indent=2, sort_keys=True), encoding="utf-8")
    _emit(args, out, rows=[out], table=f"alpha = {out['alpha']:.4f}")
    return 0


def cmd_eval(args) -> int:
    store = _store(args)
    references = ana.human_records(store, args.workflow_id)
    scorers = [TokenF1Scorer(), EmbeddingCosineScorer(HashingEmbedder())]
    rows = []
    if args.loo or not args.condition:
        rows.append(leave_one_out_baseline(references, scorers))
    conditions = []
    for spec in args.condition or []:
        tag, _, exec_ids = spec.partition("=")
        if not exec_ids:
            raise CliError(f"condition {spec!r} must look like tag=exec1,exec2")
        records = tuple(store.get_execution(e.strip())
                        for e in exec_ids.split(","))
        policy = "annotator" if any(r.mode is ExecutionMode.IO for r in records) \
            else "majority"
        conditions.append(Condition(tag, records, boolean_reference=policy))
    if conditions:
        rows.extend(report(conditions, references, scorers))
    payload = {"seed": args.seed, "rows": [r.as_dict() for r in rows]}
    if args.save:
        analyses = store.root / "analyses"
        analyses.mkdir(exist_ok=True)
        (analyses / "report.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    _emit(args, payload,
          rows=[{"condition": r.condition, "boolean_f1": r.boolean,
                 **{f"{k}_mean": v[0] for k, v in r.text_metrics.items()},
                 **{f"{k}_std": v[1] for k, v in r.text_metrics.items()}}
                for r in rows],
          table=format_table(rows))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    store = _store(args)
    config = _load_config(args.config)
    app = create_app(store, tokens=config.get("tokens"),
                     read_sections=config.get("read_sections"))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docdiag",
        description="Assessment workflows over documents: validation, "
                    "execution, causal analysis, agreement metrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, store=False):
        p.add_argument("--seed", type=int, default=0,
                       help="random seed, recorded in every output")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--format", choices=["json", "csv", "table"],
                       default="json")
        p.add_argument("-o", "--output", help="write output to this file")
        if store:
            p.add_argument("--store", help="store root directory")

    p = sub.add_parser("validate", help="check a workflow definition")
    p.add_argument("workflow")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("linearize", help="questionnaire order of a workflow")
    p.add_argument("workflow")
    common(p)
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("layers", help="longest-path layers of a workflow")
    p.add_argument("workflow")
    common(p)
    p.set_defaults(func=cmd_layers)

    p = sub.add_parser("stats", help="graph statistics of a workflow")
    p.add_argument("workflow")
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("condense", help="boolean decision graph of a workflow")
    p.add_argument("workflow")
    p.add_argument("--keep", default="boolean",
                   help="'boolean', 'all', or a comma list of step ids")
    p.add_argument("--whitelist", help="comma list of non-boolean steps to keep")
    p.add_argument("--confounder", help="step id acting as shared-reading confounder")
    p.add_argument("--confounder-reads",
                   help="comma list of section read steps (default: all reads)")
    p.add_argument("--output-workflow", help="write the condensed workflow here")
    common(p)
    p.set_defaults(func=cmd_condense)

    p = sub.add_parser("run", help="execute a workflow with a resolver")
    p.add_argument("--manifest", help="run manifest JSON file")
    p.add_argument("--mode", choices=[m.value for m in ExecutionMode])
    p.add_argument("--workflow-id")
    p.add_argument("--document-id")
    p.add_argument("--resolver", default="echo",
                   help="resolver kind: echo, scripted, replay, http")
    p.add_argument("--source-execution")
    p.add_argument("--exclude-figure-steps", action="store_true")
    common(p, store=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fit", help="fit a boolean SCM from stored executions")
    p.add_argument("condensed_workflow")
    p.add_argument("output_scm")
    p.add_argument("--workflow-id", help="workflow id of the stored executions")
    p.add_argument("--modes", default="human")
    p.add_argument("--exclude-uncertain", action="store_true")
    p.add_argument("--alpha-smoothing", type=float, default=1.0)
    common(p, store=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ace", help="average causal effect queries")
    p.add_argument("scm")
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--all", action="store_true",
                   help="table of effects of every ancestor of --y")
    p.add_argument("--workflow", help="workflow file for prompts in the table")
    p.add_argument("--exact", action="store_true", default=True)
    p.add_argument("--monte-carlo", type=int, metavar="N",
                   help="estimate with N samples instead of exactly")
    common(p)
    p.set_defaults(func=cmd_ace)

    p = sub.add_parser("counterfactual", help="abduction-based what-if queries")
    p.add_argument("scm")
    p.add_argument("--observed", required=True,
                   help="JSON file with the complete observed assignment")
    p.add_argument("--target", required=True)
    p.add_argument("--intervene", help='inline JSON, e.g. \'{"step12": true}\'')
    p.add_argument("--search", help="comma list of candidate nodes")
    p.add_argument("--flip-threshold", type=float, default=0.5)
    p.add_argument("--impute", action="store_true",
                   help="majority-fill missing nodes (non-canonical)")
    p.add_argument("--clamp", action="store_true",
                   help="clamp degenerate mechanisms during abduction")
    common(p)
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("variability", help="answer variability analyses")
    p.add_argument("--workflow-id", required=True)
    p.add_argument("--modes", default="human")
    p.add_argument("--exclude-uncertain", action="store_true")
    p.add_argument("--save", action="store_true",
                   help="also write into the store's analyses directory")
    common(p, store=True)
    p.set_defaults(func=cmd_variability)

    p = sub.add_parser("alpha", help="inter-annotator agreement on booleans")
    p.add_argument("--workflow-id", required=True)
    p.add_argument("--steps", help="comma list restricting the rated steps")
    p.add_argument("--modes", default="human")
    p.add_argument("--exclude-uncertain", action="store_true")
    p.add_argument("--save", action="store_true")
    common(p, store=True)
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("eval", help="score executions against human data")
    p.add_argument("--workflow-id", required=True)
    p.add_argument("--condition", action="append",
                   help="tag=exec1,exec2 (repeatable)")
    p.add_argument("--loo", action="store_true",
                   help="include the human leave-one-out baseline row")
    p.add_argument("--save", action="store_true")
    common(p, store=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="start the assessment service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8400)
    common(p, store=True)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
