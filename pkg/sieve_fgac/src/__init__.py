from enum import Enum


class Constants:
    scenarios = ["attendance", "space_usage"]
    dialects = ["embedded", "hinted", "plain"]
    refresh_strategies = ["b1", "b2", "o1", "o2"]
    workload_modes = ["steady", "bursty", "deletion"]
    default_relation = "wifi"
    # owner is always indexed on top of these
    default_indexes = ["location_id", "ts_date", "ts_time"]


class Defaults:
    seed = 42
    events = 20_000

    class config:
        base_path = "~/.sieve"
        path = "~/.sieve/config.yml"
        dictionary = {
            "store_path": "~/.sieve/store.jsonl",
            "relations": {},
            "indexes": {},
            "groups_path": None,
            "calibration_path": None,
            "dialect": "embedded",
            "hint_template": "FORCE INDEX ({index})",
            "ignore_index_template": "USE INDEX ()",
            "index_name_template": "idx_{relation}_{attribute}",
            "cache_size_pct": 80,
            "refresh_strategy": "o1",
            "window_size": 10,
            "verify_threshold": 10_000,
        }

    class workload:
        x = 10
        y = 1
        z = 0
        zipf_alpha = 0.0
        window_size = 10


defaults = Defaults


class OutputFormat(Enum):
    TABLE = "table"
    JSON = "json"


# Help Panels for cli help
HELP_PANELS = {
    "POLICY": {
        "DATA": "Data & Indexes",
        "STORE": "Policy Store",
        "GUARDS": "Guards",
    },
    "QUERY": {
        "ENFORCE": "Query Enforcement",
    },
    "WORKLOAD": {
        "GENERATE": "Workload Generation",
        "BENCH": "Benchmarking",
        "CALIBRATE": "Cost Calibration",
    },
    "CONFIG": {
        "MANAGE": "Configuration",
    },
}


class Gettable:
    def __getitem__(self, item):
        return getattr(self, item)


class ColorPalette(Gettable):
    def __init__(self):
        self.GENERAL = self.General()
        self.POLICY = self.Policy()
        self.CACHE = self.Cache()
        # aliases
        self.G = self.GENERAL
        self.P = self.POLICY
        self.C = self.CACHE

    class General(Gettable):
        HEADER = "#4196D6"  # Light Blue
        HINT = "#A2E5B8"  # Mint Green
        SUBHEADING = "#AFEFFF"  # Pale Blue
        SYMBOL = "#E7CC51"  # Gold
        COST = "#53B5A0"  # Teal
        SUCCESS = "#53B5A0"  # Teal
        # aliases
        SUBHEAD = SUBHEADING

    class Policy(Gettable):
        QUERIER = "#9EF5E4"  # Aqua
        OWNER = "#ECC39D"  # Light Orange/Peach
        GUARD = "#D09FE9"  # Light Purple
        STRATEGY = "#F8D384"  # Light Orange
        SQL = "#8CB9E9"  # Sky Blue

    class Cache(Gettable):
        HIT = "#53B5A0"  # Teal
        SOFT_HIT = "#F8D384"  # Light Orange
        MISS = "#EB6A6C"  # Salmon Red


COLOR_PALETTE = ColorPalette()
COLORS = COLOR_PALETTE
