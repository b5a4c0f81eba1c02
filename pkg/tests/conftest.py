"""Shared fixtures plus a terminal summary that prints one pass/fail line
per acceptance criterion after the run."""
import re
import time
from dataclasses import dataclass

import pytest

from bjda.data import SynthSpec, gen_rotated_blobs
from bjda.train import TrainConfig, run_suite

CRITERIA = {
    1: "kernel distance matches the closed-form covariance oracle",
    2: "assignment cost matches the brute-force permutation oracle",
    3: "distance axioms: self-distance, symmetry, nonnegativity",
    4: "finite-difference audit of every op and loss gradient",
    5: "adaptation gap: full beats source-only by 10+ points",
    6: "ablation ordering: full within 1 point of each ablation",
    7: "zero-weight training reduces bitwise to source-only",
    8: "repeated training runs are byte-identical",
    9: "hand-computed spot values reproduced",
}

_NODE_RE = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            m = _NODE_RE.search(nodeid)
            if m is None:
                continue
            if status == "passed" and rep.when != "call":
                continue
            n = int(m.group(1))
            ok = status == "passed"
            # a criterion is a pass only if every phase of its test passed
            outcomes[n] = outcomes.get(n, True) and ok
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(outcomes):
        verdict = "PASS" if outcomes[n] else "FAIL"
        terminalreporter.write_line(
            f"criterion {n}: {verdict}  {CRITERIA.get(n, '')}")


# ---------------------------------------------------------------------------
# the shared desk-scale benchmark run used by the adaptation-gap and
# ablation-ordering criteria (and nowhere else: it takes tens of seconds)


@dataclass
class BenchmarkRuns:
    means: dict[str, float]          # variant -> mean accuracy over the seeds
    stds: dict[str, float]
    elapsed_seconds: float
    seeds: tuple


# stabilizers picked from the config search documented in the project notes:
# confidence-gated pseudo-labels and EMA prototypes keep the margin term from
# blowing feature scales up; reduced widths keep the run inside desk budgets
BENCH_CONFIG = TrainConfig(pl=True, confidence_threshold=0.95,
                           proto_mode="ema", hidden_dim=128, feat_dim=64,
                           t_max=300, eval_every=300)
BENCH_VARIANTS = ("full", "source_only", "no_da", "no_dmc")
BENCH_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def benchmark_runs() -> BenchmarkRuns:
    source, target = gen_rotated_blobs(SynthSpec())
    started = time.perf_counter()
    result = run_suite(source, target, BENCH_CONFIG,
                       variants=BENCH_VARIANTS, seeds=BENCH_SEEDS)
    elapsed = time.perf_counter() - started
    failed = [c for c in result.cells if c.error]
    assert not failed, f"benchmark cells failed: {failed}"
    means = {v: m for v, m, _ in result.summary()}
    stds = {v: s for v, _, s in result.summary()}
    return BenchmarkRuns(means, stds, elapsed, BENCH_SEEDS)
