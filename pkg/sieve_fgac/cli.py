#!/usr/bin/env python3
import copy
import os.path
import traceback
from pathlib import Path
from typing import Callable, Optional, TypeVar

import typer
from rich import box
from rich.prompt import Confirm, FloatPrompt, IntPrompt, Prompt
from rich.table import Column, Table
from rich.tree import Tree
from typing_extensions import Annotated
from yaml import safe_dump, safe_load

from sieve_fgac.src import COLORS, HELP_PANELS, Constants, defaults
from sieve_fgac.src.commands import bench as bench_cmds
from sieve_fgac.src.commands import calibrate as calibrate_cmds
from sieve_fgac.src.commands import policies as policy_cmds
from sieve_fgac.src.commands import query as query_cmds
from sieve_fgac.src.commands import workload as workload_cmds
from sieve_fgac.src.sieve.cache import RefreshStrategy
from sieve_fgac.src.sieve.cost_model import CostConstants, Strategy
from sieve_fgac.src.sieve.engine import Engine
from sieve_fgac.src.sieve.errors import OracleMismatchError, SieveError
from sieve_fgac.src.sieve.guard_generation import IndexCatalog
from sieve_fgac.src.sieve.guard_selection import GeKey
from sieve_fgac.src.sieve.harness import BenchConfig
from sieve_fgac.src.sieve.middleware import Sieve
from sieve_fgac.src.sieve.policy import QueryMetadata
from sieve_fgac.src.sieve.rewriter import DialectCapabilities
from sieve_fgac.src.sieve.store import PolicyStore
from sieve_fgac.src.sieve.utils import (
    console,
    err_console,
    json_console,
    load_groups,
    parse_list,
    parse_principal,
    print_error,
    read_text,
    validate_cache_size_pct,
    validate_non_negative,
    validate_zipf_alpha,
    verbose_console,
)
from sieve_fgac.src.sieve.workload import WorkloadConfig, WorkloadMode
from sieve_fgac.version import __version__

try:
    from git import GitError, Repo
except ImportError:
    Repo = None

    class GitError(Exception):
        pass


T = TypeVar("T")

_epilog = "Sieve: fine-grained access control through guarded query rewriting"


class Options:
    """
    Re-usable typer args
    """

    @classmethod
    def edit_help(cls, option_name: str, help_text: str):
        """
        Edits the `help` attribute of a copied given Typer option in this class, returning
        the modified Typer option.

        Args:
            option_name: the name of the option (e.g. "querier")
            help_text: New help text to be used (e.g. "Querier whose guards to dump")

        Returns:
            Modified Typer Option with new help text.
        """
        copied_attr = copy.copy(getattr(cls, option_name))
        setattr(copied_attr, "help", help_text)
        return copied_attr

    querier = typer.Option(
        ...,
        "--querier",
        "-u",
        help="User or group id issuing the query. Numeric ids are read as integers.",
    )
    purpose = typer.Option(
        ...,
        "--purpose",
        "-p",
        help="Purpose the query is issued for, e.g. 'marking attendance'.",
    )
    relation = typer.Option(
        Constants.default_relation,
        "--relation",
        "-r",
        help="Name of the relation.",
    )
    query_file = typer.Argument(
        None,
        help="File holding the SQL query. Use `--sql` to pass the query inline instead.",
    )
    sql = typer.Option(
        None,
        "--sql",
        "-s",
        help="The SQL query as text.",
    )
    dialect = typer.Option(
        None,
        "--dialect",
        help=f"Target dialect of the rewritten query: {', '.join(Constants.dialects)}. "
        "Defaults to the `dialect` config value.",
    )
    strategy = typer.Option(
        None,
        "--strategy",
        help="Force an execution strategy instead of the cost-based choice.",
        case_sensitive=False,
    )
    calibration = typer.Option(
        None,
        "--calibration",
        "--calibration-path",
        help="Calibration file of cost constants. Defaults to the `calibration_path` config value.",
    )
    cache_size_pct = typer.Option(
        None,
        "--cache-size-pct",
        "--cache-size",
        help="Cache capacity as a percentage of the distinct queriers in the workload.",
        callback=validate_cache_size_pct,
    )
    refresh_strategy = typer.Option(
        None,
        "--refresh-strategy",
        help="Cache refresh strategy: b1, b2, o1 or o2.",
        case_sensitive=False,
    )
    window_size = typer.Option(
        None,
        "--window-size",
        "--window",
        help="Number of recently seen queries replayed from.",
        callback=validate_non_negative,
    )
    seed = typer.Option(
        defaults.seed,
        "--seed",
        help="Seed of every random choice, for reproducible runs.",
    )
    verbose = typer.Option(
        False,
        "--verbose",
        "-v",
        help="Enable verbose output.",
    )
    quiet = typer.Option(
        False,
        "--quiet",
        "-q",
        help="Display only critical information on the console.",
    )
    json_output = typer.Option(
        False,
        "--json-output",
        "--json-out",
        help="Outputs the result of the command as JSON.",
    )


def verbosity_console_handler(verbosity_level: int = 1) -> None:
    """
    Sets verbosity level of console output
    :param verbosity_level: int corresponding to verbosity level of console output (0 is quiet, 1 is normal, 2 is
        verbose)
    """
    if verbosity_level not in range(4):
        raise ValueError(
            f"Invalid verbosity level: {verbosity_level}. "
            f"Must be one of: 0 (quiet + json output), 1 (normal), 2 (verbose), 3 (json output + verbose)"
        )
    console.quiet = verbosity_level in (0, 3)
    err_console.quiet = verbosity_level in (0, 3)
    verbose_console.quiet = verbosity_level in (0, 1)
    json_console.quiet = verbosity_level in (1, 2)


def version_callback(value: bool):
    """
    Prints the current version/branch-name
    """
    if value:
        try:
            repo = Repo(os.path.dirname(os.path.dirname(__file__)))
            version = (
                f"Sieve version: {__version__}/"
                f"{repo.active_branch.name}/"
                f"{repo.commit()}"
            )
        except (TypeError, GitError):
            version = f"Sieve version: {__version__}"
        typer.echo(version)
        raise typer.Exit()


def commands_callback(value: bool):
    """
    Prints a tree of commands for the app
    """
    if value:
        cli = CLIManager()
        console.print(cli.generate_command_tree())
        raise typer.Exit()


def read_query(query_file: Optional[str], sql: Optional[str]) -> str:
    if query_file and sql:
        print_error("Pass the query either as a file or with `--sql`, not both.")
        raise typer.Exit(code=1)
    if sql:
        return sql
    if query_file:
        return read_text(query_file)
    print_error("No query given. Pass a query file or `--sql`.")
    raise typer.Exit(code=1)


class CLIManager:
    """
    :var app: the main CLI Typer app
    :var config_app: the Typer app as it relates to config commands
    :var store_app: the Typer app as it relates to policy store commands
    :var guards_app: the Typer app as it relates to guard inspection commands
    """

    app: typer.Typer
    config_app: typer.Typer
    store_app: typer.Typer
    guards_app: typer.Typer

    def __init__(self):
        self.config = copy.deepcopy(defaults.config.dictionary)
        self.config_base_path = os.path.expanduser(defaults.config.base_path)
        self.config_path = os.path.expanduser(defaults.config.path)

        self.app = typer.Typer(
            rich_markup_mode="rich",
            callback=self.main_callback,
            epilog=_epilog,
            no_args_is_help=True,
        )
        self.config_app = typer.Typer(epilog=_epilog)
        self.store_app = typer.Typer(epilog=_epilog)
        self.guards_app = typer.Typer(epilog=_epilog)

        # config alias
        self.app.add_typer(
            self.config_app,
            name="config",
            short_help="Config commands, aliases: `c`, `conf`",
            no_args_is_help=True,
        )
        self.app.add_typer(
            self.config_app, name="conf", hidden=True, no_args_is_help=True
        )
        self.app.add_typer(self.config_app, name="c", hidden=True, no_args_is_help=True)

        # store aliases
        self.app.add_typer(
            self.store_app,
            name="store",
            short_help="Policy store commands, alias: `st`",
            no_args_is_help=True,
        )
        self.app.add_typer(self.store_app, name="st", hidden=True, no_args_is_help=True)

        # guards aliases
        self.app.add_typer(
            self.guards_app,
            name="guards",
            short_help="Guard inspection commands, alias: `g`",
            no_args_is_help=True,
        )
        self.app.add_typer(self.guards_app, name="g", hidden=True, no_args_is_help=True)

        # config commands
        self.config_app.command("set")(self.set_config)
        self.config_app.command("get")(self.get_config)
        self.config_app.command("clear")(self.del_config)

        # data
        self.app.command(
            "load", rich_help_panel=HELP_PANELS["POLICY"]["DATA"]
        )(self.data_load)

        # store commands
        self.store_app.command(
            "import", rich_help_panel=HELP_PANELS["POLICY"]["STORE"]
        )(self.store_import)
        self.store_app.command(
            "export", rich_help_panel=HELP_PANELS["POLICY"]["STORE"]
        )(self.store_export)
        self.store_app.command(
            "delete", rich_help_panel=HELP_PANELS["POLICY"]["STORE"]
        )(self.store_delete)

        # guards commands
        self.guards_app.command(
            "dump", rich_help_panel=HELP_PANELS["POLICY"]["GUARDS"]
        )(self.guards_dump)

        # query commands
        self.app.command(
            "rewrite", rich_help_panel=HELP_PANELS["QUERY"]["ENFORCE"]
        )(self.query_rewrite)
        self.app.command(
            "run", rich_help_panel=HELP_PANELS["QUERY"]["ENFORCE"]
        )(self.query_run)
        self.app.command(
            "explain", rich_help_panel=HELP_PANELS["QUERY"]["ENFORCE"]
        )(self.query_explain)

        # workload commands
        self.app.command(
            "gen", rich_help_panel=HELP_PANELS["WORKLOAD"]["GENERATE"]
        )(self.workload_gen)
        self.app.command(
            "bench", rich_help_panel=HELP_PANELS["WORKLOAD"]["BENCH"]
        )(self.workload_bench)
        self.app.command(
            "calibrate", rich_help_panel=HELP_PANELS["WORKLOAD"]["CALIBRATE"]
        )(self.workload_calibrate)

    def generate_command_tree(self) -> Tree:
        """
        Generates a rich.Tree of the commands, subcommands, and groups of this app
        """

        def build_rich_tree(data: dict, parent: Tree):
            for command in data.get("commands", []):
                parent.add(f"[green]{command}[/]")
            for group, content in data.get("groups", {}).items():
                group_node = parent.add(f"[bold cyan]{group}[/]")
                build_rich_tree(content, group_node)

        def traverse_group(group: typer.Typer) -> dict:
            tree = {}
            if commands := [
                cmd.name for cmd in group.registered_commands if not cmd.hidden
            ]:
                tree["commands"] = commands
            for sub_group in group.registered_groups:
                if "groups" not in tree:
                    tree["groups"] = {}
                if not sub_group.hidden:
                    if group_traversal := traverse_group(sub_group.typer_instance):
                        tree["groups"][sub_group.name] = group_traversal
            return tree

        root = Tree("[bold magenta]Sieve Commands[/]")
        build_rich_tree(traverse_group(self.app), root)
        return root

    # wiring

    def initialize_engine(
        self, data: Optional[dict[str, str]] = None, indexes: Optional[dict] = None
    ) -> Engine:
        """
        Loads every relation of ``data`` (defaults to the registered relations of the
        config) into a fresh engine.
        """
        data = data if data is not None else (self.config.get("relations") or {})
        indexes = indexes if indexes is not None else (self.config.get("indexes") or {})
        engine = Engine(IndexCatalog({r: indexes.get(r, []) for r in data}))
        for relation, path in data.items():
            with console.status(f":open_file_folder: Loading {relation} from {path}..."):
                engine.load_jsonl(relation, path)
        return engine

    def cost_constants(self, calibration: Optional[str] = None) -> CostConstants:
        path = calibration or self.config.get("calibration_path")
        return CostConstants.from_file(path) if path else CostConstants()

    def dialect_caps(self, dialect: Optional[str] = None) -> DialectCapabilities:
        return DialectCapabilities.preset(
            dialect or self.config.get("dialect") or "embedded",
            hint_template=self.config.get("hint_template"),
            ignore_index_template=self.config.get("ignore_index_template"),
            index_name_template=self.config.get("index_name_template"),
        )

    def initialize_store(self) -> PolicyStore:
        groups = load_groups(self.config.get("groups_path"))
        store_path = self.config.get("store_path") or defaults.config.dictionary["store_path"]
        Path(os.path.expanduser(store_path)).parent.mkdir(exist_ok=True, parents=True)
        return PolicyStore.from_journal(store_path, groups)

    def initialize_sieve(
        self, dialect: Optional[str] = None, calibration: Optional[str] = None
    ) -> Sieve:
        return Sieve(
            engine=self.initialize_engine(),
            store=self.initialize_store(),
            caps=self.dialect_caps(dialect),
            k=self.cost_constants(calibration),
        )

    def _run_command(self, cmd: Callable[[], T]) -> T:
        """
        Runs the supplied command, turning enforcement errors into a clean exit
        """
        try:
            return cmd()
        except OracleMismatchError as e:
            print_error(f"{e}\nRepro written to {e.repro_path}")
            raise typer.Exit(code=1)
        except SieveError as e:
            print_error(str(e))
            verbose_console.print(traceback.format_exc())
            raise typer.Exit(code=1)
        except OSError as e:
            print_error(f"{e.filename or ''}: {e.strerror}")
            raise typer.Exit(code=1)

    def _save_config(self):
        with open(self.config_path, "w") as f:
            safe_dump(self.config, f)

    def main_callback(
        self,
        version: Annotated[
            Optional[bool],
            typer.Option(
                "--version", callback=version_callback, help="Show Sieve version"
            ),
        ] = None,
        commands: Annotated[
            Optional[bool],
            typer.Option(
                "--commands", callback=commands_callback, help="Show Sieve commands"
            ),
        ] = None,
    ):
        """
        Command line interface (CLI) for Sieve. Uses the values in the configuration file. These values can be
            overriden by passing them explicitly in the command line.
        """
        # Load or create the config file
        if os.path.exists(self.config_path):
            with open(self.config_path, "r") as f:
                config = safe_load(f) or {}
        else:
            directory_path = Path(self.config_base_path)
            directory_path.mkdir(exist_ok=True, parents=True)
            config = copy.deepcopy(defaults.config.dictionary)
            with open(self.config_path, "w") as f:
                safe_dump(config, f)

        # Update missing values
        updated = False
        for key, value in defaults.config.dictionary.items():
            if key not in config:
                config[key] = copy.deepcopy(value)
                updated = True
            elif isinstance(value, dict):
                if not isinstance(config[key], dict):
                    config[key] = {}
                for sub_key, sub_value in value.items():
                    if sub_key not in config[key]:
                        config[key][sub_key] = sub_value
                        updated = True
        if updated:
            with open(self.config_path, "w") as f:
                safe_dump(config, f)

        for k, v in config.items():
            if k in self.config.keys():
                self.config[k] = v

    def verbosity_handler(
        self, quiet: bool, verbose: bool, json_output: bool = False
    ) -> None:
        if quiet and verbose:
            err_console.print("Cannot specify both `--quiet` and `--verbose`")
            raise typer.Exit()
        if json_output and verbose:
            verbosity_console_handler(3)
        elif json_output or quiet:
            verbosity_console_handler(0)
        elif verbose:
            verbosity_console_handler(2)
        else:
            # Default to configuration if no flags provided
            quiet = self.config.get("quiet", False)
            verbose = self.config.get("verbose", False)

            if quiet:
                verbosity_console_handler(0)
            elif verbose:
                verbosity_console_handler(2)
            else:
                # Default verbosity level
                verbosity_console_handler(1)

    # config

    def set_config(
        self,
        store_path: Optional[str] = typer.Option(
            None, "--store-path", help="Journal file of the policy store."
        ),
        groups_path: Optional[str] = typer.Option(
            None, "--groups-path", help="YAML file with the group hierarchy."
        ),
        calibration_path: Optional[str] = typer.Option(
            None, "--calibration-path", help="Calibration file of cost constants."
        ),
        dialect: Optional[str] = typer.Option(
            None,
            "--dialect",
            help=f"Default rewrite dialect: {', '.join(Constants.dialects)}.",
        ),
        hint_template: Optional[str] = typer.Option(
            None, "--hint-template", help="Index hint template, e.g. 'FORCE INDEX ({index})'."
        ),
        ignore_index_template: Optional[str] = typer.Option(
            None, "--ignore-index-template", help="Template that disables index use."
        ),
        index_name_template: Optional[str] = typer.Option(
            None,
            "--index-name-template",
            help="Index naming template, e.g. 'idx_{relation}_{attribute}'.",
        ),
        cache_size_pct: Optional[float] = Options.cache_size_pct,
        refresh_strategy: Optional[RefreshStrategy] = Options.refresh_strategy,
        window_size: Optional[int] = Options.window_size,
        verify_threshold: Optional[int] = typer.Option(
            None,
            "--verify-threshold",
            help="Benchmarks verify against the oracle below this many rows.",
            callback=validate_non_negative,
        ),
    ):
        """
        Sets or updates configuration values in the Sieve config file.

        These values are used as defaults across all Sieve commands.

        USAGE
        Interactive mode:
            [green]$[/green] sieve config set

        Set specific values:
            [green]$[/green] sieve config set --dialect plain --cache-size-pct 60
            [green]$[/green] sieve config set --refresh-strategy b2 --window-size 20

        [bold]NOTE[/bold]:
        - Changes are saved to ~/.sieve/config.yml
        - Use '[green]$[/green] sieve config get' to view current settings
        """
        args = {
            "store_path": store_path,
            "groups_path": groups_path,
            "calibration_path": calibration_path,
            "dialect": dialect,
            "hint_template": hint_template,
            "ignore_index_template": ignore_index_template,
            "index_name_template": index_name_template,
            "cache_size_pct": cache_size_pct,
            "refresh_strategy": refresh_strategy.value if refresh_strategy else None,
            "window_size": window_size,
            "verify_threshold": verify_threshold,
        }
        ints = ["window_size", "verify_threshold"]
        if all(v is None for v in args.values()):
            # Print existing configs
            self.get_config()

            # Create numbering to choose from
            config_keys = list(args.keys())
            console.print("Which config setting would you like to update?\n")
            for idx, key in enumerate(config_keys, start=1):
                console.print(f"{idx}. {key}")

            choice = IntPrompt.ask(
                "\nEnter the [bold]number[/bold] of the config setting you want to update",
                choices=[str(i) for i in range(1, len(config_keys) + 1)],
                show_choices=False,
            )
            arg = config_keys[choice - 1]

            if arg == "cache_size_pct":
                while True:
                    val = FloatPrompt.ask(
                        f"What percentage would you like to set for [red]{arg}[/red]?",
                        default=80.0,
                    )
                    try:
                        args[arg] = validate_cache_size_pct(val)
                        break
                    except typer.BadParameter as e:
                        print_error(str(e))
            elif arg in ints:
                args[arg] = IntPrompt.ask(
                    f"What value would you like to assign to [red]{arg}[/red]?"
                )
            elif arg == "dialect":
                args[arg] = Prompt.ask(
                    f"What value would you like to assign to [red]{arg}[/red]?",
                    choices=Constants.dialects,
                )
            elif arg == "refresh_strategy":
                args[arg] = Prompt.ask(
                    f"What value would you like to assign to [red]{arg}[/red]?",
                    choices=Constants.refresh_strategies,
                )
            else:
                args[arg] = Prompt.ask(
                    f"What value would you like to assign to [red]{arg}[/red]?"
                )

        if (d := args.get("dialect")) and d not in Constants.dialects:
            print_error(
                f"Unknown dialect [dark_orange]{d}[/dark_orange]. "
                f"Expected one of {', '.join(Constants.dialects)}."
            )
            raise typer.Exit(code=1)

        for arg, val in args.items():
            if val is not None:
                self.config[arg] = val
        self._save_config()

        # Print latest configs after updating
        self.get_config()

    def del_config(
        self,
        store_path: bool = typer.Option(False, "--store-path"),
        groups_path: bool = typer.Option(False, "--groups-path"),
        calibration_path: bool = typer.Option(False, "--calibration-path"),
        dialect: bool = typer.Option(False, "--dialect"),
        relations: bool = typer.Option(
            False, "--relations", help="Forget every registered relation and its indexes."
        ),
        cache_size_pct: bool = typer.Option(False, "--cache-size-pct"),
        refresh_strategy: bool = typer.Option(False, "--refresh-strategy"),
        window_size: bool = typer.Option(False, "--window-size"),
        all_items: bool = typer.Option(False, "--all"),
    ):
        """
        Clears the fields in the config file, restoring their defaults.

        # EXAMPLE

            - To clear the 'dialect' and 'calibration_path' fields:

                [green]$[/green] sieve config clear --dialect --calibration-path

            - To clear your config entirely:

                [green]$[/green] sieve config clear --all
        """
        if all_items:
            if Confirm.ask("Do you want to clear all configurations?"):
                self.config = copy.deepcopy(defaults.config.dictionary)
                self._save_config()
                console.print("All configurations have been restored to their defaults.")
            else:
                console.print("Operation cancelled.")
            return

        args = {
            "store_path": store_path,
            "groups_path": groups_path,
            "calibration_path": calibration_path,
            "dialect": dialect,
            "relations": relations,
            "cache_size_pct": cache_size_pct,
            "refresh_strategy": refresh_strategy,
            "window_size": window_size,
        }

        def clear(arg: str):
            self.config[arg] = copy.deepcopy(defaults.config.dictionary[arg])
            if arg == "relations":
                self.config["indexes"] = {}
            console.print(
                f"Cleared [dark_orange]{arg}[/dark_orange] config and restored its default."
            )

        # If no specific argument is provided, iterate over all
        if not any(args.values()):
            for arg in args.keys():
                if self.config.get(arg) != defaults.config.dictionary[arg]:
                    if Confirm.ask(
                        f"Do you want to clear the [dark_orange]{arg}[/dark_orange] config?"
                    ):
                        clear(arg)
                    else:
                        console.print(
                            f"Skipped clearing [dark_orange]{arg}[/dark_orange] config."
                        )
        else:
            for arg, should_clear in args.items():
                if not should_clear:
                    continue
                if self.config.get(arg) != defaults.config.dictionary[arg]:
                    clear(arg)
                else:
                    console.print(
                        f"No config set for [dark_orange]{arg}[/dark_orange]. Use `sieve config set` to set it."
                    )
        self._save_config()

    def get_config(self):
        """
        Prints the current config file in a table.
        """
        table = Table(
            Column("[bold white]Name", style="dark_orange"),
            Column("[bold white]Value", style="gold1"),
            Column("", style="medium_purple"),
            box=box.SIMPLE_HEAD,
        )

        for key, value in self.config.items():
            if key == "cache_size_pct" and value is not None:
                value = f"{value}%"
            if isinstance(value, dict):
                if not value:
                    table.add_row(str(key), "{}", "")
                # Nested dictionaries: relations and indexes
                for idx, (sub_key, sub_value) in enumerate(value.items()):
                    if isinstance(sub_value, list):
                        sub_value = ", ".join(sub_value)
                    table.add_row(key if idx == 0 else "", str(sub_key), str(sub_value))
            else:
                table.add_row(str(key), str(value), "")

        console.print(table)

    # data

    def data_load(
        self,
        data_file: str = typer.Argument(..., help="JSONL file with one row per line."),
        relation: str = Options.relation,
        index: Optional[str] = typer.Option(
            None,
            "--index",
            "--indexes",
            "-i",
            help="Comma-separated attributes to index. `owner` is always indexed.",
        ),
        register: bool = typer.Option(
            True,
            "--register/--no-register",
            help="Record the relation and its indexes in the config so later commands load it.",
        ),
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
        json_output: bool = Options.json_output,
    ):
        """
        Validates a data file and prints a per-attribute histogram summary.

        Every row must carry the same attributes with the same value types, including `owner`.

        [bold]Common Examples:[/bold]

        1. Load the WiFi relation with its default indexes:
        [green]$[/green] sieve load --relation wifi data.jsonl

        2. Load a relation with chosen indexes:
        [green]$[/green] sieve load --relation rooms --index building,floor rooms.jsonl
        """
        self.verbosity_handler(quiet, verbose, json_output)
        if index is not None:
            indexes = parse_list(index)
        else:
            indexes = (self.config.get("indexes") or {}).get(relation) or (
                Constants.default_indexes if relation == Constants.default_relation else []
            )
        summary = self._run_command(
            lambda: policy_cmds.load(relation, data_file, indexes, json_output)
        )
        if register:
            self.config.setdefault("relations", {})[relation] = os.path.abspath(
                os.path.expanduser(data_file)
            )
            self.config.setdefault("indexes", {})[relation] = list(indexes)
            self._save_config()
        return summary

    # store

    def store_import(
        self,
        path: str = typer.Argument(..., help="Journal or export file to replay."),
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
        json_output: bool = Options.json_output,
    ):
        """
        Replays policy and guarded-expression records into the policy store, keeping their ids and timestamps.

        EXAMPLE

        [green]$[/green] sieve store import policies.jsonl
        """
        self.verbosity_handler(quiet, verbose, json_output)

        def import_and_compact():
            store = self.initialize_store()
            records = policy_cmds.store_import(store, path, json_output)
            # replayed records are not journaled; rewrite the journal from the store
            store.export_jsonl(store.journal_path)
            return records

        return self._run_command(import_and_compact)

    def store_export(
        self,
        path: str = typer.Argument(..., help="Destination file."),
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
        json_output: bool = Options.json_output,
    ):
        """
        Writes live policies followed by stored guarded expressions as JSONL.

        EXAMPLE

        [green]$[/green] sieve store export backup.jsonl
        """
        self.verbosity_handler(quiet, verbose, json_output)
        return self._run_command(
            lambda: policy_cmds.store_export(self.initialize_store(), path, json_output)
        )

    def store_delete(
        self,
        policy_id: int = typer.Option(..., "--id", help="Id of the policy to delete."),
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
    ):
        """
        Deletes one policy from the store.

        EXAMPLE

        [green]$[/green] sieve store delete --id 42
        """
        self.verbosity_handler(quiet, verbose)

        def delete():
            self.initialize_store().delete_policy(policy_id)
            console.print(f"Deleted policy [{COLORS.G.SUCCESS}]{policy_id}[/{COLORS.G.SUCCESS}]")

        return self._run_command(delete)

    # guards

    def guards_dump(
        self,
        querier: str = Options.querier,
        purpose: str = Options.purpose,
        relation: str = Options.relation,
        selected: bool = typer.Option(
            False,
            "--selected",
            help="Dump the guarded expression built from the candidates instead of the candidates.",
        ),
        calibration: Optional[str] = Options.calibration,
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
        table: bool = typer.Option(
            False, "--table", help="Render a table instead of JSON."
        ),
    ):
        """
        Dumps the candidate guards for a querier and purpose as JSON.

        [bold]Common Examples:[/bold]

        1. Candidate guards:
        [green]$[/green] sieve guards dump --querier 3450 --purpose "marking attendance"

        2. Selected guarded expression:
        [green]$[/green] sieve guards dump --querier 3450 --purpose "marking attendance" --selected
        """
        self.verbosity_handler(quiet, verbose, not table)
        key = GeKey(parse_principal(querier), purpose, relation)
        return self._run_command(
            lambda: policy_cmds.guards_dump(
                self.initialize_sieve(calibration=calibration),
                key,
                selected,
                json_output=not table,
            )
        )

    # queries

    def query_rewrite(
        self,
        query_file: Optional[str] = Options.query_file,
        sql: Optional[str] = Options.sql,
        querier: str = Options.querier,
        purpose: str = Options.purpose,
        dialect: Optional[str] = Options.dialect,
        strategy: Optional[Strategy] = Options.strategy,
        calibration: Optional[str] = Options.calibration,
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
        json_output: bool = Options.json_output,
    ):
        """
        Prints the query rewritten so every governed relation is filtered through the querier's guards.

        EXAMPLE

        [green]$[/green] sieve rewrite --querier 3450 --purpose "marking attendance" --dialect plain query.sql
        """
        self.verbosity_handler(quiet, verbose, json_output)
        text = read_query(query_file, sql)
        qm = QueryMetadata(parse_principal(querier), purpose)
        return self._run_command(
            lambda: query_cmds.rewrite(
                self.initialize_sieve(dialect, calibration), text, qm, strategy, json_output
            )
        )

    def query_run(
        self,
        query_file: Optional[str] = Options.query_file,
        sql: Optional[str] = Options.sql,
        querier: str = Options.querier,
        purpose: str = Options.purpose,
        strategy: Optional[Strategy] = Options.strategy,
        calibration: Optional[str] = Options.calibration,
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
        json_output: bool = Options.json_output,
    ):
        """
        Runs the query on the embedded engine, returning only rows the querier may see.

        EXAMPLE

        [green]$[/green] sieve run --querier 3450 --purpose "marking attendance" --sql "SELECT * FROM wifi"
        """
        self.verbosity_handler(quiet, verbose, json_output)
        text = read_query(query_file, sql)
        qm = QueryMetadata(parse_principal(querier), purpose)
        return self._run_command(
            lambda: query_cmds.run(
                self.initialize_sieve(calibration=calibration), text, qm, strategy, json_output
            )
        )

    def query_explain(
        self,
        query_file: Optional[str] = Options.query_file,
        sql: Optional[str] = Options.sql,
        querier: str = Options.querier,
        purpose: str = Options.purpose,
        calibration: Optional[str] = Options.calibration,
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
        json_output: bool = Options.json_output,
    ):
        """
        Shows the access path and estimated rows per relation, with the cost of every execution strategy.

        EXAMPLE

        [green]$[/green] sieve explain --querier 3450 --purpose "marking attendance" query.sql
        """
        self.verbosity_handler(quiet, verbose, json_output)
        text = read_query(query_file, sql)
        qm = QueryMetadata(parse_principal(querier), purpose)
        return self._run_command(
            lambda: query_cmds.explain(
                self.initialize_sieve(calibration=calibration), text, qm, json_output
            )
        )

    # workloads

    def workload_gen(
        self,
        scenario: str = typer.Option(
            "attendance",
            "--scenario",
            help=f"Scenario: {', '.join(Constants.scenarios)}.",
        ),
        mode: WorkloadMode = typer.Option(
            WorkloadMode.STEADY, "--mode", help="steady, bursty or deletion.", case_sensitive=False
        ),
        x: int = typer.Option(
            defaults.workload.x, "--x", help="Policies inserted per epoch.", callback=validate_non_negative
        ),
        y: int = typer.Option(
            defaults.workload.y, "--y", help="Queries issued per epoch.", callback=validate_non_negative
        ),
        z: int = typer.Option(
            defaults.workload.z,
            "--z",
            help="Policies deleted per epoch (deletion mode).",
            callback=validate_non_negative,
        ),
        zipf_alpha: float = typer.Option(
            defaults.workload.zipf_alpha,
            "--zipf-alpha",
            help="Skew of queriers; 0 is uniform.",
            callback=validate_zipf_alpha,
        ),
        window_size: int = typer.Option(
            defaults.workload.window_size,
            "--window-size",
            "--window",
            help="Number of recently seen queries replayed from.",
        ),
        max_queries: Optional[int] = typer.Option(
            None, "--max-queries", help="Stop after this many queries.", callback=validate_non_negative
        ),
        seed: int = Options.seed,
        full_scale: bool = typer.Option(
            False, "--full-scale", help="Use full population sizes instead of a tenth."
        ),
        output: str = typer.Option(
            "workload.jsonl", "--output", "-o", help="Destination of the workload events."
        ),
        data_out: Optional[str] = typer.Option(
            None, "--data-out", help="Also write a matching synthetic WiFi relation here."
        ),
        events: int = typer.Option(
            defaults.events, "--events", help="Rows of the synthetic WiFi relation."
        ),
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
        json_output: bool = Options.json_output,
    ):
        """
        Generates a workload of interleaved policy inserts, queries and deletions.

        Each epoch inserts `x` policies, issues `y` queries and, in deletion mode, deletes `z` policies.

        [bold]Common Examples:[/bold]

        1. Steady 10P1Q attendance workload:
        [green]$[/green] sieve gen --scenario attendance --mode steady --x 10 --y 1 --seed 42 -o wl.jsonl

        2. Deletions with a synthetic relation:
        [green]$[/green] sieve gen --mode deletion --x 10 --y 5 --z 2 --data-out data.jsonl -o wl.jsonl
        """
        self.verbosity_handler(quiet, verbose, json_output)

        def generate():
            cfg = WorkloadConfig(
                mode=mode,
                x=x,
                y=y,
                z=z,
                zipf_alpha=zipf_alpha,
                window_size=window_size,
                seed=seed,
                max_queries=max_queries,
            )
            return workload_cmds.gen(
                scenario, cfg, output, full_scale, data_out, events, json_output
            )

        return self._run_command(generate)

    def workload_bench(
        self,
        workload: str = typer.Option(..., "--workload", "-w", help="Workload JSONL file."),
        data: Optional[str] = typer.Option(
            None,
            "--data",
            "-d",
            help="Data file of the relation. Defaults to the relations registered with `sieve load`.",
        ),
        relation: str = Options.relation,
        index: Optional[str] = typer.Option(
            None, "--index", "-i", help="Comma-separated attributes to index for `--data`."
        ),
        cache_size_pct: Optional[float] = Options.cache_size_pct,
        refresh_strategy: Optional[RefreshStrategy] = Options.refresh_strategy,
        window_size: Optional[int] = Options.window_size,
        update_limit: int = typer.Option(
            10, "--update-limit", help="Consecutive updates before b2 regenerates."
        ),
        verify: Optional[bool] = typer.Option(
            None,
            "--verify/--no-verify",
            show_default=False,
            help="Cross-check every query against the oracle [dim](default: below the verify threshold)[/dim].",
        ),
        repro_dir: str = typer.Option(
            ".", "--repro-dir", help="Where a mismatch repro file is written."
        ),
        strategy: Optional[Strategy] = Options.strategy,
        baselines: bool = typer.Option(
            False, "--baselines", help="Also compare against the baseline strategies."
        ),
        baseline_queries: Optional[int] = typer.Option(
            None,
            "--baseline-queries",
            help="Compare strategies on the first N queries only.",
            callback=validate_non_negative,
        ),
        dialect: Optional[str] = Options.dialect,
        calibration: Optional[str] = Options.calibration,
        seed: int = Options.seed,
        report: Optional[str] = typer.Option(None, "--report", help="Write the JSON report here."),
        csv_path: Optional[str] = typer.Option(None, "--csv", help="Write per-epoch stats here."),
        html_path: Optional[str] = typer.Option(None, "--html", help="Write the HTML report here."),
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
        json_output: bool = Options.json_output,
    ):
        """
        Replays a workload through store, cache, rewriter and engine, and reports costs and cache behaviour.

        [bold]Common Examples:[/bold]

        1. Verified run with a JSON report:
        [green]$[/green] sieve bench --workload wl.jsonl --data data.jsonl --cache-size-pct 80 --refresh-strategy o1 --verify --report out.json

        2. Strategy comparison with an HTML report:
        [green]$[/green] sieve bench -w wl.jsonl -d data.jsonl --baselines --html report.html
        """
        self.verbosity_handler(quiet, verbose, json_output)
        cfg = BenchConfig(
            cache_size_pct=cache_size_pct
            if cache_size_pct is not None
            else self.config.get("cache_size_pct", 80),
            refresh_strategy=refresh_strategy
            or RefreshStrategy(self.config.get("refresh_strategy") or "o1"),
            window_size=window_size
            if window_size is not None
            else self.config.get("window_size", defaults.workload.window_size),
            verify=verify,
            verify_threshold=self.config.get("verify_threshold")
            or defaults.config.dictionary["verify_threshold"],
            repro_dir=repro_dir,
            seed=seed,
            update_limit=update_limit,
            strategy=strategy,
        )

        def bench():
            if data:
                indexes = (
                    parse_list(index)
                    if index is not None
                    else (self.config.get("indexes") or {}).get(relation)
                    or (Constants.default_indexes if relation == Constants.default_relation else [])
                )
                engine = self.initialize_engine({relation: data}, {relation: indexes})
            else:
                engine = self.initialize_engine()
            return bench_cmds.run(
                engine,
                workload,
                cfg,
                k=self.cost_constants(calibration),
                caps=self.dialect_caps(dialect),
                store=PolicyStore(groups=load_groups(self.config.get("groups_path"))),
                baselines=baselines,
                baseline_queries=baseline_queries,
                report_path=report,
                csv_path=csv_path,
                html_path=html_path,
                json_output=json_output,
            )

        return self._run_command(bench)

    def workload_calibrate(
        self,
        output: str = typer.Option(
            "calibration.txt", "--output", "-o", help="Destination of the calibration file."
        ),
        deterministic: bool = typer.Option(
            False,
            "--deterministic",
            help="Write the fixed default constants instead of measuring.",
        ),
        relation: Optional[str] = typer.Option(
            None,
            "--relation",
            "-r",
            help="Registered relation to measure on. A synthetic relation is used when omitted.",
        ),
        sample_size: int = typer.Option(200, "--sample-size", help="Rows sampled per measurement."),
        seed: int = typer.Option(0, "--seed", help="Seed of the row sample."),
        set_default: bool = typer.Option(
            False, "--set-default", help="Record the file as `calibration_path` in the config."
        ),
        quiet: bool = Options.quiet,
        verbose: bool = Options.verbose,
        json_output: bool = Options.json_output,
    ):
        """
        Derives the cost constants of the cost model and writes them as a calibration file.

        [bold]Common Examples:[/bold]

        1. Reproducible constants:
        [green]$[/green] sieve calibrate --deterministic -o calibration.txt

        2. Measure on the loaded WiFi relation:
        [green]$[/green] sieve calibrate --relation wifi -o calibration.txt --set-default
        """
        self.verbosity_handler(quiet, verbose, json_output)

        def measure():
            engine = store = None
            if relation and not deterministic:
                registered = self.config.get("relations") or {}
                if relation not in registered:
                    raise SieveError(
                        f"Relation '{relation}' is not registered; load it with `sieve load` first"
                    )
                engine = self.initialize_engine({relation: registered[relation]})
                store = self.initialize_store()
            return calibrate_cmds.run(
                output,
                deterministic=deterministic,
                engine=engine,
                relation=relation,
                store=store,
                sample_size=sample_size,
                seed=seed,
                json_output=json_output,
            )

        k = self._run_command(measure)
        if set_default:
            self.config["calibration_path"] = os.path.abspath(os.path.expanduser(output))
            self._save_config()
        return k

    def run(self):
        self.app()


def main():
    manager = CLIManager()
    manager.run()


if __name__ == "__main__":
    main()
