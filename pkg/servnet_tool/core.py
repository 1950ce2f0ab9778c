import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional

from reputation_core import (
    FairnessParams,
    analytic_threshold_root,
    closed_form_gr,
    fairness_table,
    fairness_threshold,
    scan_threshold,
    simulate_unit_gr,
)
from servnet_sim import (
    ScenarioValidationError,
    build_sim,
    load_scenario,
    run,
    run_attack_suite,
    snapshot_reputations,
    write_snapshot_csv,
)

from .report import build_report
from .utils import save_json

logger = logging.getLogger("servnet.tool")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _print_problems(problems: Iterable[str]) -> None:
    print("❌ Invalid scenario:")
    for problem in problems:
        print(f"   {problem}")


def cmd_validate(path: str) -> int:
    try:
        script = load_scenario(path)
    except ScenarioValidationError as e:
        _print_problems(e.problems)
        return EXIT_USAGE
    print(f"✓ {script.name}: {len(script.nodes)} nodes, {len(script.trade_schedule)} trades, "
          f"{len(script.adversaries)} adversary actions, {len(script.expectations)} expectations")
    return EXIT_OK


def cmd_run(path: str, out_dir: Path, seed: Optional[int] = None) -> int:
    """Run one scenario and write events.jsonl, snapshot.csv and report.json under out_dir/<name>."""
    try:
        script = load_scenario(path)
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ScenarioValidationError([f"--seed: {seed} is outside 0..2^64-1"])
            script = script.model_copy(update={"seed": seed})
        sim = build_sim(script)
    except ScenarioValidationError as e:
        _print_problems(e.problems)
        return EXIT_USAGE

    print(f"Running {script.name} (seed {script.seed}, {script.duration} ticks)")
    log = run(sim)
    target = out_dir / script.name
    log.write_jsonl(target / "events.jsonl")
    write_snapshot_csv(snapshot_reputations(sim), target / "snapshot.csv")
    report = build_report(script.name, log, script.expectations)
    save_json(report.to_dict(), target / "report.json")
    print(f"✓ {len(log)} events written to {target}")

    for row in report.snapshot:
        print(f"   {row.server:<8} T={row.T:<4} GR={float(row.GR):.4f}  authority={row.authority or '-'}")
    if report.flagged:
        print(f"⚠️  {len(report.flagged)} flagged events")
    for result in report.expectations:
        mark = "✓" if result.passed else "❌"
        print(f"{mark} {result.name}: {result.actual} {result.op} {result.expected}")
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_attack_suite(out_dir: Path, disable: Iterable[str] = ()) -> int:
    try:
        outcomes = run_attack_suite(disable=disable)
    except ValueError as e:
        print(f"❌ {e}")
        return EXIT_USAGE
    target = out_dir / "attack-suite"
    summary = []
    for outcome in outcomes:
        outcome.log.write_jsonl(target / f"{outcome.name}.events.jsonl")
        mark = "✓" if outcome.passed else "❌"
        print(f"{mark} {outcome.label}  {outcome.name}: {outcome.detail}")
        summary.append({"name": outcome.name, "passed": outcome.passed, "detail": outcome.detail})
    save_json({"disabled": sorted(disable), "scenarios": summary}, target / "summary.json")
    failed = [o.name for o in outcomes if not o.passed]
    if failed:
        print(f"⚠️  {len(failed)} of {len(outcomes)} scenarios failed")
        return EXIT_FAILED
    print(f"✓ All {len(outcomes)} scenarios passed")
    return EXIT_OK


def sample_points(m1: int, threshold: int) -> List[int]:
    """Three transaction counts where the UNIT run and the closed form must agree exactly."""
    top = max(3, math.ceil(threshold / m1)) * m1
    return [m1, 2 * m1, top]


def cmd_fairness(m1: int, t2: int, m2: int, t_max: Optional[int] = None) -> int:
    try:
        peer2 = FairnessParams(t2, m2)
        if m1 < 2:
            raise ValueError(f"m1 must be >= 2, got {m1}")
    except ValueError as e:
        print(f"❌ {e}")
        return EXIT_USAGE

    k = closed_form_gr(peer2)
    threshold = fairness_threshold(m1, peer2)
    scanned = scan_threshold(m1, peer2)
    root = analytic_threshold_root(m1, k)
    t_max = threshold + 10 if t_max is None else t_max
    if t_max < 0:
        print(f"❌ --t-max must be >= 0, got {t_max}")
        return EXIT_USAGE

    print(f"Peer 2: T={t2}, m={m2}, GR={float(k):.4f}")
    table = fairness_table(m1, peer2, t_max)
    print(f"{'T1':>6} {'GR peer 1':>14} {'GR peer 2':>14}")
    for t, gr1, gr2, ahead in zip(table["t"], table["gr_peer1"], table["gr_peer2"], table["peer1_ahead"]):
        print(f"{t:>6} {gr1:>14.4f} {gr2:>14.4f} {'*' if ahead else ''}")
    print(f"Analytic root: {root:.4f}  threshold T1 = {threshold}")
    print(f"Linear scan:   T1 = {scanned}")

    deltas = []
    for t in sample_points(m1, threshold):
        simulated = simulate_unit_gr(FairnessParams(t, m1))
        delta = simulated - closed_form_gr(FairnessParams(t, m1))
        deltas.append(delta)
        print(f"UNIT simulation at T1={t}: GR={float(simulated):.4f}, delta vs closed form = {float(delta)}")

    if threshold != scanned:
        print("❌ Analytic threshold and linear scan disagree")
        return EXIT_FAILED
    if any(deltas):
        print("❌ UNIT simulation deviates from the closed form")
        return EXIT_FAILED
    print("✓ Analytic threshold matches the scan")
    return EXIT_OK
