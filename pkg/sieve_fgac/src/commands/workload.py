from typing import Optional

import numpy as np

from sieve_fgac.src import COLORS
from sieve_fgac.src.sieve.errors import SieveError
from sieve_fgac.src.sieve.utils import console, print_json, print_verbose, render_rows
from sieve_fgac.src.sieve.workload import (
    SCENARIOS,
    ScenarioSpec,
    WorkloadConfig,
    generate_wifi_events,
    generate_workload,
    write_rows,
    write_workload,
)


def scenario_for(name: str, full_scale: bool) -> ScenarioSpec:
    try:
        spec = SCENARIOS[name]
    except KeyError:
        raise SieveError(f"Unknown scenario '{name}', expected one of {', '.join(SCENARIOS)}")
    return spec if full_scale else spec.desk()


def gen(
    scenario: str,
    cfg: WorkloadConfig,
    output: str,
    full_scale: bool = False,
    data_out: Optional[str] = None,
    data_rows: int = 20_000,
    json_output: bool = False,
) -> dict:
    """
    Generates the policy/query event stream of ``scenario`` and writes it as JSONL,
    optionally together with a matching synthetic WiFi relation.
    """
    spec = scenario_for(scenario, full_scale)
    print_verbose(
        f"{spec.name}: {spec.holder_count} holders, {spec.querier_count} queriers, "
        f"{spec.policy_count} policies"
    )
    with console.status(f":gear: Generating {cfg.label} workload for {spec.name}..."):
        workload = generate_workload(spec, cfg)
        written = write_workload(workload.events, output)
        rows = None
        if data_out:
            # its own stream so the events stay identical with or without data
            rng = np.random.default_rng(cfg.seed + 1)
            rows = write_rows(
                generate_wifi_events(spec, workload.policies, data_rows, rng), data_out
            )
    stats = workload.stats()
    data = {
        "scenario": spec.name,
        "label": cfg.label,
        "seed": cfg.seed,
        "events": written,
        "output": output,
        "data_rows": rows,
        "data_out": data_out,
        **stats,
    }
    if json_output:
        print_json(data)
        return data
    console.print(
        render_rows(
            ("Policies", "Queries", "Deletions", "Epochs", "Queriers"),
            [
                (
                    stats["policies"],
                    stats["queries"],
                    stats["deletions"],
                    stats["epochs"],
                    stats["queriers"],
                )
            ],
            title=f"{spec.name} {cfg.label}",
        )
    )
    console.print(
        f"Wrote [{COLORS.G.SUCCESS}]{written}[/{COLORS.G.SUCCESS}] events to {output}"
        + (f" and {rows} rows to {data_out}" if data_out else "")
    )
    return data
