import os
from typing import Optional

from sieve_fgac.src import COLORS
from sieve_fgac.src.sieve.cost_model import CostConstants
from sieve_fgac.src.sieve.engine import Engine
from sieve_fgac.src.sieve.errors import WorkloadFormatError
from sieve_fgac.src.sieve.harness import BenchConfig, RunReport, run_baselines, run_workload
from sieve_fgac.src.sieve.rewriter import EMBEDDED, DialectCapabilities
from sieve_fgac.src.sieve.store import PolicyStore
from sieve_fgac.src.sieve.utils import console, print_json, print_verbose
from sieve_fgac.src.sieve.workload import EventKind, WorkloadEvent, read_workload

PROGRESS_EVERY = 500


def load_events(path: str) -> list[WorkloadEvent]:
    try:
        return list(read_workload(path))
    except OSError as e:
        raise WorkloadFormatError(f"Cannot read workload {path}: {e.strerror}") from e


def final_policies(events: list[WorkloadEvent]) -> list:
    """Policies still live once every insert and delete of the workload was applied."""
    live = {}
    for event in events:
        if event.kind is EventKind.INSERT_POLICY:
            live[event.policy.id] = event.policy
        elif event.kind is EventKind.DELETE_POLICY:
            live.pop(event.policy_id, None)
    return list(live.values())


def run(
    engine: Engine,
    workload_path: str,
    cfg: BenchConfig,
    k: Optional[CostConstants] = None,
    caps: DialectCapabilities = EMBEDDED,
    store: Optional[PolicyStore] = None,
    baselines: bool = False,
    baseline_queries: Optional[int] = None,
    report_path: Optional[str] = None,
    csv_path: Optional[str] = None,
    html_path: Optional[str] = None,
    json_output: bool = False,
) -> RunReport:
    """
    Replays a workload against the loaded relations and writes the requested reports.

    :raises OracleMismatchError: when verification finds a differing result
    """
    events = load_events(workload_path)
    total = len(events)
    print_verbose(f"Replaying {total} events from {workload_path}")

    with console.status(f":hourglass: Replaying {total} events...") as status:

        def progress(event: WorkloadEvent):
            if event.seq % PROGRESS_EVERY == 0:
                status.update(f":hourglass: Replaying event {event.seq}/{total}...")

        report = run_workload(events, engine, cfg, k=k, caps=caps, store=store, on_event=progress)

        if baselines:
            queries = [e.query for e in events if e.kind is EventKind.QUERY]
            if baseline_queries is not None:
                queries = queries[:baseline_queries]
            status.update(f":scales: Comparing strategies over {len(queries)} queries...")
            report.baselines = run_baselines(
                queries, final_policies(events), engine, k=k, caps=caps
            )

    if report_path:
        report.write_json(report_path)
    if csv_path:
        report.write_epochs_csv(csv_path)
    if html_path:
        with open(os.path.expanduser(html_path), "w") as f:
            f.write(report.to_html(title=f"Sieve: {os.path.basename(workload_path)}"))

    if json_output:
        print_json(report.to_dict())
        return report

    console.print(report.summary_table())
    if report.baselines:
        console.print(report.baseline_table())
        savings = report.savings()
        if savings is not None:
            console.print(
                f"Policy evaluations saved against Baseline_P: "
                f"[{COLORS.G.SUCCESS}]{savings:.1%}[/{COLORS.G.SUCCESS}]"
            )
    if report.epochs:
        console.print(report.hit_rate_chart())
    for label, path in (("report", report_path), ("epochs", csv_path), ("html", html_path)):
        if path:
            console.print(f"Wrote {label} to [{COLORS.G.HEADER}]{path}[/{COLORS.G.HEADER}]")
    return report
