from rich import box
from rich.table import Column, Table

from sieve_fgac.src import COLORS
from sieve_fgac.src.sieve.engine import Engine
from sieve_fgac.src.sieve.guard_generation import IndexCatalog
from sieve_fgac.src.sieve.guard_selection import GeKey
from sieve_fgac.src.sieve.middleware import Sieve
from sieve_fgac.src.sieve.store import PolicyStore
from sieve_fgac.src.sieve.utils import console, print_json, print_verbose


def load(
    relation: str,
    path: str,
    indexes: list[str],
    json_output: bool = False,
) -> dict:
    """
    Loads ``path`` into a scratch engine to validate it and prints one histogram
    summary row per attribute.
    """
    engine = Engine(IndexCatalog({relation: indexes}))
    with console.status(f":open_file_folder: Loading [bold]{path}[/bold] into {relation}..."):
        loaded = engine.load_jsonl(relation, path)
    summary = {
        "relation": relation,
        "path": path,
        "rows": len(loaded),
        "schema": {a: t.value for a, t in loaded.schema.items()},
        "indexes": sorted(loaded.indexes),
        "histograms": loaded.estimator.summary(),
    }
    if json_output:
        print_json(summary)
        return summary

    table = Table(
        Column("[bold white]Attribute", style="dark_orange"),
        Column("[bold white]Type", style="gold1"),
        Column("[bold white]Indexed", style="medium_purple"),
        Column("[bold white]Buckets", justify="right"),
        Column("[bold white]Distinct", justify="right"),
        title=f"\n[{COLORS.G.HEADER}]{relation}[/{COLORS.G.HEADER}]: {len(loaded)} rows\n",
        box=box.SIMPLE_HEAD,
    )
    for attribute, tag in loaded.schema.items():
        histogram = summary["histograms"].get(attribute, {})
        table.add_row(
            attribute,
            tag.value,
            "yes" if loaded.is_indexed(attribute) else "",
            str(histogram.get("buckets", "")),
            str(histogram.get("distinct", "")),
        )
    console.print(table)
    return summary


def store_import(store: PolicyStore, path: str, json_output: bool = False) -> int:
    before = len(store)
    records = store.import_jsonl(path)
    if json_output:
        print_json({"records": records, "policies": len(store), "added": len(store) - before})
    else:
        console.print(
            f"Imported [{COLORS.G.SUCCESS}]{records}[/{COLORS.G.SUCCESS}] records from {path}; "
            f"the store now holds {len(store)} policies."
        )
    return records


def store_export(store: PolicyStore, path: str, json_output: bool = False) -> int:
    lines = store.export_jsonl(path)
    if json_output:
        print_json({"lines": lines, "path": path})
    else:
        console.print(
            f"Exported [{COLORS.G.SUCCESS}]{lines}[/{COLORS.G.SUCCESS}] records to {path}."
        )
    return lines


def guards_dump(
    sieve: Sieve,
    key: GeKey,
    selected: bool = False,
    json_output: bool = True,
) -> dict:
    """Candidate guards for ``key`` or, with ``selected``, the guarded expression built from them."""
    if selected:
        data = sieve.guarded_expression(key).to_dict()
        print_verbose(f"{len(data['guards'])} guards over {data['policies']} policies")
    else:
        candidates = sieve.candidates(key)
        data = {
            "querier": key.querier,
            "purpose": key.purpose,
            "relation": key.relation,
            "candidates": [c.to_dict() for c in candidates],
        }
        print_verbose(f"{len(candidates)} candidate guards")
    if not json_output:
        table = Table(
            Column("[bold white]Guard", style=COLORS.P.GUARD),
            Column("[bold white]Policies", justify="right"),
            Column("[bold white]Mode" if selected else "[bold white]Merges"),
            box=box.SIMPLE_HEAD,
        )
        for item in data["guards" if selected else "candidates"]:
            if selected:
                table.add_row(item["guard"], str(len(item["partition"])), item["exec_mode"])
            else:
                table.add_row(item["sql"], str(len(item["covered"])), str(item["merges"]))
        console.print(table)
    else:
        print_json(data)
    return data
