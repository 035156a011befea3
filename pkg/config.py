import os
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from dotenv import load_dotenv

from axes import AxisPolicy, MeanShiftConfig
from ba import Information, LMConfig
from errors import ConfigError
from synth import PARAMETERIZATIONS, SCENARIOS, SceneConfig
from vanish import VPTolerances

load_dotenv()

logger = logging.getLogger(__name__)

# Environment defaults
THREADS = max(1, int(os.getenv("AXISLINE_THREADS", "1")))
LOG_LEVEL = os.getenv("AXISLINE_LOG_LEVEL", "INFO").upper()
OUTPUT_DIR = os.getenv("AXISLINE_OUTPUT_DIR", "results")
SEEDS = int(os.getenv("AXISLINE_SEEDS", "10"))

# Benchmark ordering checks in the test suite
RUN_BENCH = os.getenv("AXISLINE_RUN_BENCH", "0") == "1"


@dataclass(frozen=True)
class OutputConfig:
    dir: str = OUTPUT_DIR
    csv: str = "bench.csv"
    summary: str = "summary.json"

    @property
    def csv_path(self) -> Path:
        return Path(self.dir) / self.csv

    @property
    def summary_path(self) -> Path:
        return Path(self.dir) / self.summary


@dataclass(frozen=True)
class BenchConfig:
    params: Tuple[str, ...] = PARAMETERIZATIONS
    scenarios: Tuple[str, ...] = SCENARIOS
    seeds: int = SEEDS
    threads: int = THREADS

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        bad = set(self.params) - set(PARAMETERIZATIONS)
        if bad:
            raise ValueError(f"unknown parameterizations {sorted(bad)}")
        bad = set(self.scenarios) - set(SCENARIOS)
        if bad:
            raise ValueError(f"unknown scenarios {sorted(bad)}")
        if not (self.seeds > 0 and self.threads > 0):
            raise ValueError("seeds and threads must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs, merged from defaults, file and flags"""
    scene: SceneConfig = field(default_factory=SceneConfig)
    axes: AxisPolicy = field(default_factory=AxisPolicy)
    mean_shift: MeanShiftConfig = field(default_factory=MeanShiftConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    vp: VPTolerances = field(default_factory=VPTolerances)
    information: Information = field(default_factory=Information)
    output: OutputConfig = field(default_factory=OutputConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _key_line(text: str, key: str) -> Optional[int]:
    """Line of the first occurrence of a JSON key, for diagnostics"""
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def _build_section(name: str, values, text: str):
    if not isinstance(values, dict):
        raise ConfigError(name, "expected an object", _key_line(text, name))
    defaults = SECTIONS[name]()
    known = {f.name for f in fields(defaults)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key", _key_line(text, key))
    try:
        return replace(defaults, **values)
    except (TypeError, ValueError) as e:
        key = _offending_key(defaults, values)
        if key is None:
            raise ConfigError(name, str(e), _key_line(text, name)) from e
        raise ConfigError(f"{name}.{key}", str(e), _key_line(text, key)) from e


def _offending_key(defaults, values: dict) -> Optional[str]:
    """First key that is rejected on its own; None when only the combination fails"""
    for key, value in values.items():
        try:
            replace(defaults, **{key: value})
        except (TypeError, ValueError):
            return key
    return None


def parse_run_config(text: str) -> RunConfig:
    """
    Parse a RunConfig from JSON text.

    Raises:
        ConfigError: syntax error (with line), unknown key (dotted path) or
            a value violating a component invariant
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<root>", e.msg, e.lineno) from e
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")

    sections = {}
    for name, values in doc.items():
        if name not in SECTIONS:
            raise ConfigError(name, "unknown section", _key_line(text, name))
        sections[name] = _build_section(name, values, text)
    return RunConfig(**sections)


def load_run_config(path) -> RunConfig:
    """
    Raises:
        ConfigError: unreadable file or invalid content
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e.strerror or e}") from e
    cfg = parse_run_config(text)
    logger.info(f"[CONFIG] Loaded {path}")
    return cfg


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """
    Apply command-line overrides given as section__field=value; None values
    are ignored.
    """
    changes = {}
    for key, value in overrides.items():
        if value is None:
            continue
        section, name = key.split("__", 1)
        changes.setdefault(section, {})[name] = value
    updated = {}
    for section, values in changes.items():
        try:
            updated[section] = replace(getattr(cfg, section), **values)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{section}.{next(iter(values))}", str(e)) from e
    return replace(cfg, **updated)
