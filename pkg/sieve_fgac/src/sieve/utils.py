import json
import os
from typing import Any, Iterable, Optional, Union

import typer
import yaml
from jinja2 import Environment, PackageLoader, select_autoescape
from rich.console import Console
from rich.table import Table

from sieve_fgac.src.sieve.errors import ContractViolation, SieveError
from sieve_fgac.src.sieve.policy import GroupDirectory, Principal
from sieve_fgac.src.sieve.values import encode_value

console = Console()
json_console = Console()
err_console = Console(stderr=True)
verbose_console = Console(quiet=True)

jinja_env = Environment(
    loader=PackageLoader("sieve_fgac", "src/sieve/templates"),
    autoescape=select_autoescape(),
)


def print_console(message: str, colour: str, title: str, console_: Console):
    console_.print(
        f"[bold {colour}][{title}]:[/bold {colour}] [{colour}]{message}[/{colour}]\n"
    )


def print_verbose(message: str, status=None):
    """Print verbose messages while temporarily pausing the status spinner."""
    if status:
        status.stop()
        print_console(message, "green", "Verbose", verbose_console)
        status.start()
    else:
        print_console(message, "green", "Verbose", verbose_console)


def print_error(message: str, status=None):
    """Print error messages while temporarily pausing the status spinner."""
    if status:
        status.stop()
        print_console(message, "red", "Error", err_console)
        status.start()
    else:
        print_console(message, "red", "Error", err_console)


def print_json(data: Any):
    json_console.print_json(data=to_jsonable(data))


def to_jsonable(data: Any) -> Any:
    """Recursively encodes dates, times and decimals with the tagged value codec."""
    if isinstance(data, dict):
        return {str(k): to_jsonable(v) for k, v in data.items()}
    if isinstance(data, (list, tuple, set, frozenset)):
        return [to_jsonable(v) for v in data]
    if data is None or isinstance(data, (bool, float)):
        return data
    try:
        return encode_value(data)
    except SieveError:
        return str(data)


# validators


def validate_cache_size_pct(value: Optional[float]) -> Optional[float]:
    if value is not None and not 0 <= value <= 100:
        raise typer.BadParameter("Cache size must be a percentage between 0 and 100.")
    return value


def validate_non_negative(value: Optional[int]) -> Optional[int]:
    if value is not None and value < 0:
        raise typer.BadParameter("Value cannot be negative.")
    return value


def validate_zipf_alpha(value: Optional[float]) -> Optional[float]:
    if value is not None:
        if value < 0:
            raise typer.BadParameter("Zipf alpha cannot be negative.")
        if value > 5:
            console.print(
                f"[yellow]Warning: Zipf alpha of {value} sends almost every query to "
                "a single querier.[/yellow]"
            )
    return value


def parse_principal(text: Union[str, int]) -> Principal:
    """User and group ids are integers when they look like one."""
    if isinstance(text, int):
        return text
    text = text.strip()
    if not text:
        raise typer.BadParameter("Querier cannot be empty.")
    try:
        return int(text)
    except ValueError:
        return text


def parse_list(value: Optional[str]) -> list[str]:
    if not value:
        return []
    return [item.strip() for item in value.split(",") if item.strip()]


# files


def read_text(path: str) -> str:
    try:
        with open(os.path.expanduser(path)) as f:
            return f.read()
    except OSError as e:
        raise SieveError(f"Cannot read {path}: {e.strerror}") from e


def load_groups(path: Optional[str]) -> GroupDirectory:
    """
    Reads a group hierarchy file::

        members: {user: [group, ...]}
        parents: {group: [parent, ...]}
    """
    if not path:
        return GroupDirectory()
    try:
        with open(os.path.expanduser(path)) as f:
            raw = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ContractViolation(f"Cannot load group hierarchy {path}: {e}") from e
    members = {
        parse_principal(user): [parse_principal(g) for g in groups or ()]
        for user, groups in (raw.get("members") or {}).items()
    }
    parents = {
        parse_principal(group): [parse_principal(p) for p in ps or ()]
        for group, ps in (raw.get("parents") or {}).items()
    }
    return GroupDirectory.from_hierarchy(members, parents)


def dump_json(data: Any, path: str) -> None:
    with open(os.path.expanduser(path), "w") as f:
        json.dump(to_jsonable(data), f, indent=2)


# rendering


def render_rows(columns: Iterable[str], rows: Iterable[tuple], title: str = "") -> Table:
    table = Table(
        title=f"\n[bold white]{title}\n" if title else None,
        show_edge=False,
        header_style="bold white",
        border_style="bright_black",
        style="bold",
        title_justify="center",
        show_lines=False,
        pad_edge=True,
    )
    for column in columns:
        table.add_column(f"[bold white]{column}")
    for row in rows:
        table.add_row(*(str(v) for v in row))
    return table
