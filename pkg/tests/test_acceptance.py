"""Acceptance criteria, one test per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. The dataset-conditional checks need DOCDIAG_DATASET pointing at a
directory with documents/*.json and answers.jsonl (see README) and are
skipped otherwise.
"""
import json
import math
import os
import random
import subprocess
import sys
import time
from pathlib import Path

import pytest

from conftest import brute_force_ace, random_boolean_scm, sample_world
from docdiag import analysis as ana
from docdiag.engine import EchoResolver, EngineConfig, WorkflowEngine
from docdiag.nlp import HashingEmbedder, NaiveAnnotator
from docdiag.scm import ace, counterfactual, counterfactual_search, make_scm
from docdiag.store import (
    Answer,
    DocumentStore,
    ExecutionMode,
    ExecutionRecord,
    Highlight,
    document_from_dict,
)
from docdiag.variability import krippendorff_alpha
from docdiag.workflow import (
    AnswerSchema,
    BUNDLED_WORKFLOW_PATH,
    StepKind,
    bundled_boolean_keep,
    clarity_confounder_edges,
    condense,
    layers,
    linearize,
    load_bundled_workflow,
    stats,
    validate,
)
from test_workflow import floyd_warshall_reach, make_workflow, random_valid_workflow


def _ok(name: str) -> None:
    print(f"\nACCEPTANCE PASS: {name}")


# ---------------------------------------------------------------------------
# criterion: validator

class TestCriterionValidator:
    def test_validator_accepts_bundled_and_rejects_violations(self):
        start = time.monotonic()
        wf = load_bundled_workflow()
        assert validate(wf) == [], "bundled workflow must validate clean"

        cases = {
            "cycle": make_workflow([("A", "B"), ("B", "C"), ("C", "B")],
                                   inputs=["A"], verdicts=["C"]),
            "input-not-root": make_workflow([("A", "B"), ("B", "C")],
                                            inputs=["B"], verdicts=["C"]),
            "input-feeds-no-component": make_workflow(
                [("A", "C"), ("C", "D")], inputs=["A", "B"], verdicts=["D"]),
            "verdict-not-sink": make_workflow([("A", "B"), ("B", "C")],
                                              inputs=["A"], verdicts=["B"]),
            "overlapping-partition": make_workflow(
                [("A", "B"), ("B", "C")], inputs=["A"], verdicts=["A", "C"]),
        }
        for expected_code, broken in cases.items():
            codes = {v.code for v in validate(broken)}
            assert expected_code in codes, (expected_code, codes)
        elapsed = time.monotonic() - start
        assert elapsed < 1.0, f"validator criterion took {elapsed:.3f}s"
        _ok("Def.-2 validator accepts bundled workflow, rejects 5 violation "
            f"classes, in {elapsed * 1000:.0f} ms")


# ---------------------------------------------------------------------------
# criterion: condensation

class TestCriterionCondensation:
    def test_reachability_preserved_on_500_random_dags(self):
        rng = random.Random(8451)
        for i in range(500):
            wf = random_valid_workflow(rng, max_nodes=15)
            ids = list(wf.step_ids)
            keep = {sid for sid in ids if rng.random() < 0.5} or {ids[0]}
            out = condense(wf, keep, allow_non_boolean=keep)
            oracle = floyd_warshall_reach(ids, list(wf.edges))
            got = floyd_warshall_reach(sorted(keep), list(out.edges))
            for u in keep:
                for v in keep:
                    if u != v:
                        assert got[u][v] == oracle[u][v], (i, u, v)
        _ok("condensation preserves kept-node reachability on 500 random DAGs "
            "(Floyd-Warshall oracle)")

    def test_bundled_boolean_graph_has_exactly_18_nodes(self):
        wf = load_bundled_workflow()
        keep, whitelist = bundled_boolean_keep()
        extra = clarity_confounder_edges(wf, keep, "step048.x",
                                         ["step006.4", "step021.12"])
        out = condense(wf, keep, extra, allow_non_boolean=whitelist)
        assert len(out.steps) == 18
        assert validate(out) == []
        _ok("bundled workflow condenses to exactly 18 boolean decision nodes")


# ---------------------------------------------------------------------------
# criterion: graph statistics

class TestCriterionStats:
    def test_bundled_stats_match_reported_numbers(self):
        st = stats(load_bundled_workflow())
        assert abs(float(st.avg_degree) - 3.57) <= 0.005, float(st.avg_degree)
        assert abs(float(st.mean_parents) - 1.78) <= 0.005, float(st.mean_parents)
        assert st.root_count == 3
        assert st.terminal_count == 4
        assert st.layer_count == 5
        _ok(f"bundled graph stats: avg degree {float(st.avg_degree):.4f} "
            f"(3.57±0.005), mean parents {float(st.mean_parents):.4f} "
            "(1.78±0.005), 3 roots, 4 terminals, 5 layers")


# ---------------------------------------------------------------------------
# criterion: ACE

class TestCriterionAce:
    def test_ace_oracles(self):
        start = time.monotonic()
        rng = random.Random(90125)

        # exact vs brute-force enumeration on every SCM in the property suite
        suite = [random_boolean_scm(rng, max_nodes=8) for _ in range(80)]
        for scm in suite:
            x, y = rng.sample(list(scm.nodes), 2)
            exact = ace(scm, x, y, "exact")
            oracle = brute_force_ace(scm, x, y)
            assert abs(exact - oracle) < 1e-12, (x, y)

        # ACE is exactly zero when y is not a descendant of x
        zero_checks = 0
        for scm in suite:
            for x in scm.nodes:
                for y in scm.nodes:
                    if y != x and y not in scm.descendants(x):
                        assert ace(scm, x, y, "exact") == 0.0
                        zero_checks += 1
        assert zero_checks > 100

        # exact vs monte-carlo with common random numbers at n=100k
        n = 100_000
        for _ in range(6):
            scm = random_boolean_scm(rng, max_nodes=6)
            x, y = rng.sample(list(scm.nodes), 2)
            exact = ace(scm, x, y, "exact")
            mc = ace(scm, x, y, "monte-carlo", n=n, seed=rng.randrange(2 ** 31))
            assert abs(mc - exact) < 3 * math.sqrt(1.0 / n) + 1e-9

        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"ACE suite took {elapsed:.1f}s"
        _ok(f"ACE: exact == brute force on {len(suite)} SCMs, {zero_checks} "
            f"non-descendant zeros exact, MC within 3 sigma, in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion: counterfactuals

class TestCriterionCounterfactual:
    def test_consistency_on_1000_random_pairs(self):
        rng = random.Random(777)
        for _ in range(1000):
            scm = random_boolean_scm(rng, max_nodes=6)
            observed = sample_world(scm, rng)
            subset = [v for v in scm.nodes if rng.random() < 0.5]
            iv = {v: observed[v] for v in subset}
            target = rng.choice(list(scm.nodes))
            p = counterfactual(scm, observed, iv, target)
            expected = 1.0 if observed[target] else 0.0
            assert abs(p - expected) < 1e-12
        _ok("counterfactual consistency holds on 1000 random (SCM, observation) "
            "pairs")

    def test_hand_case_matches_numeric_integration(self):
        scm = make_scm(
            {"A": (), "B": ("A",)},
            {"A": {(): 0.5}, "B": {(False,): 0.2, (True,): 0.9}})
        p = counterfactual(scm, {"A": True, "B": True}, {"A": False}, "B")
        k = 900_000
        hits = sum(1 for i in range(k) if (i + 0.5) * 0.9 / k < 0.2)
        oracle = hits / k
        assert abs(p - oracle) < 1e-6
        assert abs(p - 2 / 9) < 1e-12
        _ok(f"counterfactual hand case p={p:.9f} matches numeric integration "
            "oracle to 1e-6 (= 2/9)")

    def test_search_over_five_candidates_yields_32_entries(self):
        rng = random.Random(31)
        scm = random_boolean_scm(rng, max_nodes=8)
        while len(scm.nodes) < 6:
            scm = random_boolean_scm(rng, max_nodes=8)
        observed = sample_world(scm, rng)
        target = scm.nodes[-1]
        candidates = [v for v in scm.nodes if v != target][:5]
        result = counterfactual_search(scm, observed, candidates, target)
        assert len(result.entries) == 2 ** 5 == 32
        _ok("counterfactual search over |G|=5 yields exactly 32 entries")


# ---------------------------------------------------------------------------
# criterion: Krippendorff's alpha

class TestCriterionAlpha:
    def test_alpha_contract(self):
        perfect = [["y", "y", "y"], ["n", "n", "n"], ["y", "y", "y"]]
        assert krippendorff_alpha(perfect) == pytest.approx(1.0, abs=1e-12)

        # hand-computed 2x2: units (y,n),(y,n) -> alpha = -1/2
        assert krippendorff_alpha([["y", "n"], ["y", "n"]]) == pytest.approx(
            -0.5, abs=1e-9)

        # hand-computed 3x4 with missing ratings -> alpha = 1/9
        matrix = [["y", "y", "y", "n"],
                  ["y", "n", "n", None],
                  ["y", "y", None, None]]
        assert krippendorff_alpha(matrix) == pytest.approx(1 / 9, abs=1e-9)

        rng = random.Random(99)
        sample = [[rng.choice(["y", "n"]) for _ in range(4)] for _ in range(10)]
        base = krippendorff_alpha(sample)
        cols = [2, 0, 3, 1]
        assert krippendorff_alpha(
            [[row[c] for c in cols] for row in sample]) == pytest.approx(base)
        rows = list(reversed(sample))
        assert krippendorff_alpha(rows) == pytest.approx(base)
        _ok("Krippendorff's alpha: perfect=1.0, 2x2 hand case -0.5 and 3x4 "
            "hand case 1/9 match to 1e-9, permutation invariant")


# ---------------------------------------------------------------------------
# criterion: mode isolation on the bundled workflow

def bundled_document():
    blocks = [
        {"id": "h-res", "kind": "heading", "text": "Results"},
        {"id": "p-res1", "kind": "paragraph",
         "text": "Variant v3 shows a 12-fold fluorescence increase at 10 uM lead."},
        {"id": "f-dose", "kind": "figure",
         "text": "Fig 2: dose-response curves for four sensor variants.",
         "image": "ZmlnMg=="},
        {"id": "p-res2", "kind": "paragraph",
         "text": "Selectivity over zinc reaches eight-fold across replicates."},
        {"id": "h-disc", "kind": "heading", "text": "Discussion"},
        {"id": "p-disc1", "kind": "paragraph",
         "text": "The tap-water signal drop is attributed to competing ions."},
        {"id": "p-disc2", "kind": "paragraph",
         "text": "We conclude riboswitch scaffolds enable selective lead sensing."},
    ]
    return document_from_dict({
        "id": "paper-1", "title": "A toy biomedical paper", "blocks": blocks,
        "sections": {"Results": ["h-res", "p-res2"],
                     "Discussion": ["h-disc", "p-disc2"]},
    })


BUNDLED_READ_SECTIONS = {"step006.4": "Results", "step021.12": "Discussion"}


def synthetic_human_execution(wf, doc, agent="agent-human1",
                              execution_id="human-bundled-1"):
    answers = {}
    for tick, sid in enumerate(linearize(wf)):
        step = wf.step_by_id[sid]
        boolean = True if step.schema is AnswerSchema.BOOLEAN_WITH_TEXT else None
        highlights = ()
        if step.schema is AnswerSchema.TEXT_WITH_HIGHLIGHTS:
            block = doc.blocks[1]
            highlights = (Highlight(doc.id, block.id, 0, min(20, len(block.text))),)
        answers[sid] = Answer(
            step_id=sid, agent_id=agent,
            text=f"{step.name}: considered and answered.",
            boolean=boolean, highlights=highlights,
            created=float(tick), revised=float(tick))
    return ExecutionRecord(execution_id, wf.id, doc.id, agent,
                           ExecutionMode.HUMAN, answers=answers)


class TestCriterionModeIsolation:
    def test_no_cross_mode_information_flow(self):
        wf = load_bundled_workflow()
        doc = bundled_document()
        config = EngineConfig(read_sections=dict(BUNDLED_READ_SECTIONS))
        engine = WorkflowEngine(wf, doc, config)
        human = synthetic_human_execution(wf, doc)
        resolver = EchoResolver()

        trace_program = {}
        record_program = engine.run_program(resolver, trace=trace_program)
        assert len(record_program.answers) == len(wf.steps)
        for sid, inputs in trace_program.items():
            assert inputs.sources() <= {"document", "resolver"}, sid

        trace_io = {}
        record_io = engine.run_io(resolver, human, trace=trace_io)
        assert record_io.answers, "io run must resolve steps"
        for sid, inputs in trace_io.items():
            assert inputs.sources() <= {"document", "human"}, sid

        trace_isolated = {}
        record_isolated = engine.run_isolated(resolver, trace=trace_isolated)
        assert len(record_isolated.answers) == len(wf.steps)
        for sid, inputs in trace_isolated.items():
            assert inputs.sources() <= {"document"}, sid
            assert not inputs.parent_answers, sid

        _ok("mode isolation: program/io/isolated provenance assertions pass on "
            "the bundled workflow with a scripted resolver")

    def test_error_propagation_probe(self):
        wf = load_bundled_workflow()
        doc = bundled_document()
        resolver = EchoResolver()
        sink = "step47.x"
        base_config = EngineConfig(read_sections=dict(BUNDLED_READ_SECTIONS))
        baseline = WorkflowEngine(wf, doc, base_config).run_program(resolver)
        corrupt_config = EngineConfig(
            read_sections=dict(BUNDLED_READ_SECTIONS),
            answer_overrides={"step006.4": "CORRUPTED READ CONTENT"})
        corrupted1 = WorkflowEngine(wf, doc, corrupt_config).run_program(resolver)
        corrupted2 = WorkflowEngine(wf, doc, corrupt_config).run_program(resolver)
        assert baseline.answers[sink].text != corrupted1.answers[sink].text
        assert corrupted1.answers[sink] == corrupted2.answers[sink]
        _ok("corrupting one root answer in program mode changes the sink answer "
            "deterministically")


# ---------------------------------------------------------------------------
# criterion: CLI determinism

class TestCriterionDeterminism:
    def _invoke(self, argv, cwd):
        return subprocess.run(
            [sys.executable, "-m", "docdiag.cli", *argv],
            capture_output=True, cwd=cwd, timeout=120)

    def test_cli_invocations_byte_reproducible(self, tmp_path):
        store_dir = tmp_path / "store"
        store = DocumentStore(store_dir)
        wf = load_bundled_workflow()
        store.put_workflow(wf)
        doc = bundled_document()
        store.ingest_document(
            {"id": doc.id, "title": doc.title,
             "blocks": [{"id": b.id, "kind": b.kind.value, "text": b.text,
                         **({"image": b.image} if b.image else {})}
                        for b in doc.blocks],
             "sections": {h: list(r) for h, r in doc.sections.items()}})

        invocations = [
            ["linearize", str(BUNDLED_WORKFLOW_PATH), "--seed", "7"],
            ["stats", str(BUNDLED_WORKFLOW_PATH), "--seed", "7"],
            ["condense", str(BUNDLED_WORKFLOW_PATH), "--keep", "boolean",
             "--confounder", "step048.x",
             "--confounder-reads", "step006.4,step021.12", "--seed", "7"],
            ["run", "--store", str(store_dir), "--mode", "program",
             "--workflow-id", wf.id, "--document-id", doc.id,
             "--resolver", "echo", "--seed", "7"],
        ]
        for argv in invocations:
            first = self._invoke(argv, tmp_path)
            second = self._invoke(argv, tmp_path)
            assert first.returncode == 0, first.stderr.decode()
            assert second.returncode == 0, second.stderr.decode()
            assert first.stdout == second.stdout, argv
        _ok("CLI invocations with a fixed seed are byte-reproducible "
            f"({len(invocations)} commands checked)")


# ---------------------------------------------------------------------------
# criterion (conditional): released-dataset checks

DATASET_ENV = "DOCDIAG_DATASET"

requires_dataset = pytest.mark.skipif(
    DATASET_ENV not in os.environ,
    reason=f"set {DATASET_ENV} to a dataset directory (documents/*.json + "
           "answers.jsonl) to run the released-dataset checks")


@pytest.fixture(scope="module")
def dataset_store(tmp_path_factory):
    root = Path(os.environ[DATASET_ENV])
    store = DocumentStore(tmp_path_factory.mktemp("dataset-store"))
    wf = load_bundled_workflow()
    store.put_workflow(wf)
    for doc_path in sorted((root / "documents").glob("*.json")):
        store.ingest_document(doc_path)
    with open(root / "answers.jsonl", encoding="utf-8") as fh:
        store.import_answer_lines(fh)
    return store, wf


@requires_dataset
class TestCriterionDatasetConditional:
    def test_alpha_on_boolean_nodes(self, dataset_store):
        store, wf = dataset_store
        keep, _ = bundled_boolean_keep()
        records = ana.human_records(store, wf.id)
        out = ana.agreement_report(records, wf, sorted(keep))
        assert abs(out["alpha"] - 0.424) <= 0.005, out["alpha"]
        _ok(f"dataset alpha {out['alpha']:.3f} within 0.424±0.005")

    def test_disagreement_rates(self, dataset_store):
        store, wf = dataset_store
        records = ana.human_records(store, wf.id)
        out = ana.variability_report(records, wf, NaiveAnnotator(),
                                     HashingEmbedder())
        base = out["disagreement"]["base_rate"]
        conditional = out["disagreement"]["conditional_rate"]
        assert abs(base - 0.21) <= 0.01, base
        assert abs(conditional - 0.72) <= 0.01, conditional
        _ok(f"dataset disagreement base {base:.3f} (0.21±0.01), propagation "
            f"{conditional:.3f} (0.72±0.01)")

    def test_human_loo_boolean_f1(self, dataset_store):
        from docdiag.evaluation import leave_one_out_baseline
        store, wf = dataset_store
        records = ana.human_records(store, wf.id)
        row = leave_one_out_baseline(records, [])
        assert abs(row.boolean - 0.859) <= 0.005, row.boolean
        _ok(f"dataset human LOO boolean F1 {row.boolean:.3f} within 0.859±0.005")

    def test_position_similarity_tau(self, dataset_store):
        store, wf = dataset_store
        records = ana.human_records(store, wf.id)
        out = ana.variability_report(records, wf, NaiveAnnotator(),
                                     HashingEmbedder())
        tau = out["position_similarity_kendall_tau"]
        assert abs(tau - (-0.36)) <= 0.02, tau
        _ok(f"dataset position/similarity Kendall tau {tau:.3f} within -0.36±0.02")

    def test_mean_semantic_similarity(self, dataset_store):
        store, wf = dataset_store
        records = ana.human_records(store, wf.id)
        if os.environ.get("DOCDIAG_SBERT") == "1":
            from sentence_transformers import SentenceTransformer

            class SbertEmbedder:
                def __init__(self):
                    self.model = SentenceTransformer(
                        "sentence-transformers/all-mpnet-base-v2")

                def embed(self, text):
                    return self.model.encode([text])[0]

            embedder = SbertEmbedder()
            tolerance = 0.02
        else:
            embedder = HashingEmbedder()
            tolerance = None
        out = ana.variability_report(records, wf, NaiveAnnotator(), embedder)
        values = [c["semantic"] for c in out["cells"]]
        mean = sum(values) / len(values)
        if tolerance is not None:
            assert abs(mean - 0.55) <= tolerance, mean
            _ok(f"dataset mean semantic similarity {mean:.3f} within 0.55±0.02")
        else:
            _ok(f"dataset mean semantic similarity {mean:.3f} (reported without "
                "tolerance: bundled embedder, not the reference backend)")
