import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from stochastic_mtt.errors import ConfigError, InvalidArgumentError
from stochastic_mtt.filters import FilterKind
from stochastic_mtt.geometry import GeodeticPoint
from stochastic_mtt.metrics import OspaParams
from stochastic_mtt.models import ModelSwitchMatrix, SensorPose, switch_row_error
from stochastic_mtt.scenarios import (
    ClassAConfig,
    ClassBConfig,
    SensorSite,
    default_sensor_sites,
)
from stochastic_mtt.tracker import INITIATION_POLICIES, TrackerConfig

logger = logging.getLogger(__name__)

(
    " config.py YAML run configuration. Every validation failure"
    " is raised as a ConfigError carrying the line of the offending"
    " key or list entry, taken from the composed YAML node tree."
)

SCHEMA_VERSION = 1
OUTPUT_ENV_VAR = "STOCHASTIC_MTT_OUTPUT"
DEFAULT_OUTPUT_DIR = "results"
SCENARIOS = ("class_b", "class_a")
DEFAULT_OSPA_C = {"class_b": 10.0, "class_a": 250.0}
DEFAULT_INITIATION = {"class_b": "truth", "class_a": "single_point"}

TOP_LEVEL_KEYS = (
    "schema_version",
    "scenario",
    "class_b",
    "class_a",
    "tracker",
    "filters",
    "seeds",
    "metrics",
    "output_dir",
    "workers",
    "trace",
)
CLASS_B_KEYS = (
    "n_targets",
    "box_north",
    "box_east",
    "box_origin",
    "speed_bound",
    "dt",
    "horizon",
    "switch_matrix",
    "turn_rate_deg",
    "q",
    "radar",
    "range_std",
    "bearing_std_deg",
    "tracker_q",
    "prior_position_std",
    "prior_velocity_std",
)
CLASS_A_KEYS = (
    "adsb_file",
    "origin",
    "sensors",
    "max_range",
    "elevation_std_deg",
    "bearing_std_deg",
    "range_std",
    "clutter_rate",
    "scan_interval",
    "max_gap",
    "q",
    "prior_position_std",
    "prior_velocity_std",
)
TRACKER_KEYS = (
    "gate",
    "deletion_threshold",
    "initiation",
    "velocity_std",
    "confirm_hits",
    "confirm_window",
)
FILTER_KEYS = ("label", "kind", "alpha", "beta", "kappa", "iterations")
METRIC_KEYS = ("ospa_p", "ospa_c", "siap_cutoff")

KeyPath = Tuple[Union[str, int], ...]


@dataclass
class FilterSpec:
    label: str
    kind: FilterKind


@dataclass
class RunConfig:
    scenario: str
    class_b: Optional[ClassBConfig] = None
    class_a: Optional[ClassAConfig] = None
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    filters: List[FilterSpec] = field(default_factory=list)
    seeds: List[int] = field(default_factory=lambda: [0])
    ospa: OspaParams = field(default_factory=OspaParams)
    siap_cutoff: Optional[float] = None
    output_dir: Optional[Path] = None
    workers: int = 1
    trace: bool = False
    source: Optional[Path] = None

    @property
    def cutoff(self) -> float:
        return self.ospa.c if self.siap_cutoff is None else self.siap_cutoff

    def with_overrides(
        self,
        seeds: Optional[Sequence[int]] = None,
        output_dir: Optional[Path] = None,
        workers: Optional[int] = None,
        trace: Optional[bool] = None,
    ) -> "RunConfig":
        changes: Dict[str, Any] = {}
        if seeds is not None:
            changes["seeds"] = list(seeds)
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        if workers is not None:
            if workers < 1:
                raise ConfigError(f"workers must be >= 1, got {workers}")
            changes["workers"] = workers
        if trace is not None:
            changes["trace"] = trace
        return replace(self, **changes)

    def summary(self) -> Dict[str, Any]:
        """JSON-friendly view of the resolved configuration."""
        scenario = self.class_b if self.scenario == "class_b" else self.class_a
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            self.scenario: _jsonable(asdict(scenario)),
            "tracker": asdict(self.tracker),
            "filters": [{"label": f.label, **asdict(f.kind)} for f in self.filters],
            "seeds": list(self.seeds),
            "metrics": {
                "ospa_p": self.ospa.p,
                "ospa_c": self.ospa.c,
                "siap_cutoff": self.cutoff,
            },
            "workers": self.workers,
            "trace": self.trace,
        }


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def resolve_output_dir(config: RunConfig, override: Optional[str] = None) -> Path:
    """``--out`` beats the config file, which beats $STOCHASTIC_MTT_OUTPUT."""
    if override:
        return Path(override)
    if config.output_dir is not None:
        return config.output_dir
    return Path(os.environ.get(OUTPUT_ENV_VAR) or DEFAULT_OUTPUT_DIR)


def _line_index(node, prefix: KeyPath = (), lines: Optional[Dict] = None) -> Dict:
    lines = {} if lines is None else lines
    if node is None:
        return lines
    lines.setdefault(prefix, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = prefix + (key_node.value,)
            lines[path] = key_node.start_mark.line + 1
            _line_index(value_node, path, lines)
    elif isinstance(node, yaml.SequenceNode):
        for index, item in enumerate(node.value):
            path = prefix + (index,)
            lines[path] = item.start_mark.line + 1
            _line_index(item, path, lines)
    return lines


def _dotted(path: KeyPath) -> str:
    text = ""
    for part in path:
        text += f"[{part}]" if isinstance(part, int) else (f".{part}" if text else part)
    return text or "<root>"


@dataclass
class _Reader:
    source: str
    lines: Dict[KeyPath, int]

    def error(self, message: str, path: KeyPath = ()) -> ConfigError:
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return ConfigError(message, line=self.lines.get(path), source=self.source)

    def mapping(self, value, path: KeyPath, allowed: Sequence[str]) -> Dict[str, Any]:
        if value is None:
            return {}
        if not isinstance(value, dict):
            raise self.error(f"{_dotted(path)} must be a mapping", path)
        for key in value:
            if key not in allowed:
                raise self.error(f"Unknown key {_dotted(path + (key,))!r}", path + (key,))
        return value

    def number(
        self,
        section: Dict[str, Any],
        key: str,
        path: KeyPath,
        default,
        minimum: Optional[float] = None,
        positive: bool = False,
        integer: bool = False,
    ):
        value = section.get(key)
        if value is None:
            return default
        where = path + (key,)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"{_dotted(where)} must be a number, got {value!r}", where)
        if integer and not isinstance(value, int):
            raise self.error(f"{_dotted(where)} must be an integer, got {value!r}", where)
        if positive and not value > 0:
            raise self.error(f"{_dotted(where)} must be positive, got {value}", where)
        if minimum is not None and value < minimum:
            raise self.error(f"{_dotted(where)} must be >= {minimum}, got {value}", where)
        return value

    def vector(self, value, path: KeyPath, length: int) -> List[float]:
        if (
            not isinstance(value, list)
            or len(value) != length
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
        ):
            raise self.error(f"{_dotted(path)} must be a list of {length} numbers", path)
        return [float(v) for v in value]


def _switch_matrix(reader: _Reader, rows, path: KeyPath) -> ModelSwitchMatrix:
    if not isinstance(rows, list) or len(rows) != 3:
        raise reader.error(f"{_dotted(path)} must be a 3x3 list of rows", path)
    checked = [reader.vector(row, path + (i,), 3) for i, row in enumerate(rows)]
    bad = switch_row_error(checked)
    if bad is not None:
        raise reader.error(
            f"{_dotted(path)} row {bad} sums to {sum(checked[bad]):.6g}; "
            "each row must be non-negative and sum to 1",
            path + (bad,),
        )
    return ModelSwitchMatrix(np.array(checked))


def _class_b(reader: _Reader, raw) -> ClassBConfig:
    path: KeyPath = ("class_b",)
    section = reader.mapping(raw, path, CLASS_B_KEYS)
    defaults = ClassBConfig()
    kwargs: Dict[str, Any] = {}
    for key in ("n_targets", "horizon"):
        kwargs[key] = reader.number(section, key, path, getattr(defaults, key), 1, integer=True)
    for key in ("box_north", "box_east", "dt", "tracker_q"):
        kwargs[key] = float(reader.number(section, key, path, getattr(defaults, key), positive=True))
    for key in ("speed_bound", "prior_position_std", "prior_velocity_std"):
        kwargs[key] = float(reader.number(section, key, path, getattr(defaults, key), 0))
    if section.get("box_origin") is not None:
        kwargs["box_origin"] = tuple(reader.vector(section["box_origin"], path + ("box_origin",), 2))
    if section.get("switch_matrix") is not None:
        kwargs["switch_matrix"] = _switch_matrix(
            reader, section["switch_matrix"], path + ("switch_matrix",)
        )
    turn = reader.number(section, "turn_rate_deg", path, None)
    if turn is not None:
        kwargs["omega"] = math.radians(turn)
    q = reader.number(section, "q", path, None, 0)
    if q is not None:
        kwargs["q_x"] = kwargs["q_y"] = float(q)

    radar = reader.mapping(section.get("radar"), path + ("radar",), ("north", "east", "max_range"))
    if radar:
        kwargs["radar"] = SensorPose(
            np.array(
                [
                    float(reader.number(radar, "north", path + ("radar",), 0.0)),
                    float(reader.number(radar, "east", path + ("radar",), 0.0)),
                ]
            ),
            max_range=float(reader.number(radar, "max_range", path + ("radar",), math.inf, positive=True)),
            label="radar",
        )
    range_std = reader.number(section, "range_std", path, None, positive=True)
    bearing_std = reader.number(section, "bearing_std_deg", path, None, positive=True)
    if range_std is not None or bearing_std is not None:
        kwargs["R"] = np.diag(
            [
                (2.0 if range_std is None else range_std) ** 2,
                math.radians(0.5 if bearing_std is None else bearing_std) ** 2,
            ]
        )
    try:
        return ClassBConfig(**kwargs)
    except InvalidArgumentError as exc:
        raise reader.error(str(exc), path) from exc


def _geodetic(reader: _Reader, raw, path: KeyPath) -> GeodeticPoint:
    point = reader.mapping(raw, path, ("lat", "lon", "alt"))
    for key in ("lat", "lon"):
        if point.get(key) is None:
            raise reader.error(f"{_dotted(path)} needs {key!r}", path)
    lat = float(reader.number(point, "lat", path, None))
    lon = float(reader.number(point, "lon", path, None))
    if not (-90 <= lat <= 90 and -180 <= lon <= 180):
        raise reader.error(f"{_dotted(path)} is not a valid latitude/longitude", path)
    return GeodeticPoint(lat, lon, float(reader.number(point, "alt", path, 0.0)))


def _sensor_sites(reader: _Reader, raw, path: KeyPath) -> List[SensorSite]:
    if not isinstance(raw, list) or not raw:
        raise reader.error(f"{_dotted(path)} must be a non-empty list", path)
    sites = []
    for index, item in enumerate(raw):
        where = path + (index,)
        entry = reader.mapping(item, where, ("label", "lat", "lon", "alt", "velocity"))
        label = entry.get("label")
        if not isinstance(label, str) or not label:
            raise reader.error(f"{_dotted(where)} needs a label", where)
        location = _geodetic(
            reader, {k: entry.get(k) for k in ("lat", "lon", "alt") if k in entry}, where
        )
        velocity = entry.get("velocity")
        if velocity is not None:
            velocity = tuple(reader.vector(velocity, where + ("velocity",), 3))
        sites.append(SensorSite(label, location, velocity))
    labels = [s.label for s in sites]
    if len(set(labels)) != len(labels):
        raise reader.error(f"{_dotted(path)} labels must be unique", path)
    return sites


def _class_a(reader: _Reader, raw, base_dir: Path) -> ClassAConfig:
    path: KeyPath = ("class_a",)
    section = reader.mapping(raw, path, CLASS_A_KEYS)
    adsb = section.get("adsb_file")
    if not isinstance(adsb, str) or not adsb:
        raise reader.error("class_a.adsb_file is required", path + ("adsb_file",))
    adsb_path = Path(adsb)
    if not adsb_path.is_absolute():
        adsb_path = base_dir / adsb_path
    if not adsb_path.exists():
        raise reader.error(f"ADS-B file not found: {adsb_path}", path + ("adsb_file",))

    defaults = ClassAConfig()
    kwargs: Dict[str, Any] = {"adsb_path": adsb_path}
    if section.get("origin") is not None:
        kwargs["origin"] = _geodetic(reader, section["origin"], path + ("origin",))
    if section.get("sensors") is not None:
        kwargs["sensors"] = _sensor_sites(reader, section["sensors"], path + ("sensors",))
    else:
        kwargs["sensors"] = default_sensor_sites()
    for key in ("max_range", "scan_interval", "max_gap"):
        kwargs[key] = float(reader.number(section, key, path, getattr(defaults, key), positive=True))
    kwargs["clutter_rate"] = float(reader.number(section, "clutter_rate", path, 0.0, 0))
    for key in ("prior_position_std", "prior_velocity_std"):
        kwargs[key] = float(reader.number(section, key, path, getattr(defaults, key), 0))
    if section.get("q") is not None:
        q = reader.vector(section["q"], path + ("q",), 3)
        if min(q) < 0:
            raise reader.error("class_a.q must be non-negative", path + ("q",))
        kwargs["q_x"], kwargs["q_y"], kwargs["q_z"] = q
    elevation = float(reader.number(section, "elevation_std_deg", path, 0.75, positive=True))
    bearing = float(reader.number(section, "bearing_std_deg", path, 2.0, positive=True))
    range_std = float(reader.number(section, "range_std", path, 100.0, positive=True))
    kwargs["R"] = np.diag(
        [math.radians(elevation) ** 2, math.radians(bearing) ** 2, range_std**2]
    )
    try:
        return ClassAConfig(**kwargs)
    except InvalidArgumentError as exc:
        raise reader.error(str(exc), path) from exc


def _tracker(reader: _Reader, raw, scenario: str) -> TrackerConfig:
    path: KeyPath = ("tracker",)
    section = reader.mapping(raw, path, TRACKER_KEYS)
    defaults = TrackerConfig()
    initiation = section.get("initiation", DEFAULT_INITIATION[scenario])
    if initiation not in INITIATION_POLICIES:
        raise reader.error(
            f"tracker.initiation must be one of {INITIATION_POLICIES}, got {initiation!r}",
            path + ("initiation",),
        )
    return TrackerConfig(
        gate=float(reader.number(section, "gate", path, defaults.gate, positive=True)),
        deletion_threshold=float(
            reader.number(
                section, "deletion_threshold", path, defaults.deletion_threshold, positive=True
            )
        ),
        initiation=initiation,
        velocity_std=float(
            reader.number(section, "velocity_std", path, defaults.velocity_std, positive=True)
        ),
        confirm_hits=reader.number(section, "confirm_hits", path, defaults.confirm_hits, 1, integer=True),
        confirm_window=reader.number(
            section, "confirm_window", path, defaults.confirm_window, 1, integer=True
        ),
    )


def _filters(reader: _Reader, raw) -> List[FilterSpec]:
    path: KeyPath = ("filters",)
    if not isinstance(raw, list) or not raw:
        raise reader.error("filters must be a non-empty list", path)
    specs = []
    for index, item in enumerate(raw):
        where = path + (index,)
        entry = reader.mapping(item, where, FILTER_KEYS)
        kind_name = entry.get("kind")
        if not isinstance(kind_name, str):
            raise reader.error(f"{_dotted(where)} needs a kind", where)
        try:
            kind = FilterKind(
                kind_name,
                alpha=float(reader.number(entry, "alpha", where, 0.5, positive=True)),
                beta=float(reader.number(entry, "beta", where, 2.0)),
                kappa=reader.number(entry, "kappa", where, None),
                iterations=reader.number(entry, "iterations", where, 10, 1, integer=True),
            )
        except InvalidArgumentError as exc:
            raise reader.error(str(exc), where + ("kind",)) from exc
        label = entry.get("label", kind.label)
        if not isinstance(label, str) or not label or "/" in label:
            raise reader.error(f"{_dotted(where)} has an invalid label {label!r}", where)
        specs.append(FilterSpec(label, kind))
    labels = [s.label for s in specs]
    duplicates = sorted({x for x in labels if labels.count(x) > 1})
    if duplicates:
        raise reader.error(f"Duplicate filter label(s): {', '.join(duplicates)}", path)
    return specs


def _seeds(reader: _Reader, raw) -> List[int]:
    path: KeyPath = ("seeds",)
    if raw is None:
        return [0]
    if isinstance(raw, int) and not isinstance(raw, bool):
        if raw < 1:
            raise reader.error(f"seeds count must be >= 1, got {raw}", path)
        return list(range(raw))
    if not isinstance(raw, list) or not raw:
        raise reader.error("seeds must be a count or a non-empty list", path)
    for index, seed in enumerate(raw):
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise reader.error(f"seeds[{index}] must be a non-negative integer", path + (index,))
    if len(set(raw)) != len(raw):
        raise reader.error("seeds must be unique", path)
    return list(raw)


def parse_config(
    text: str,
    source: str = "<config>",
    base_dir: Optional[Path] = None,
) -> RunConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(
            f"Invalid YAML: {getattr(exc, 'problem', None) or exc}",
            line=mark.line + 1 if mark is not None else None,
            source=source,
        ) from exc

    reader = _Reader(source=source, lines=_line_index(root))
    data = reader.mapping(data, (), TOP_LEVEL_KEYS)
    if not data:
        raise reader.error("Configuration is empty")

    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise reader.error(
            f"Unsupported schema_version {version!r}; expected {SCHEMA_VERSION}",
            ("schema_version",),
        )
    scenario = data.get("scenario")
    if scenario not in SCENARIOS:
        raise reader.error(
            f"scenario must be one of {SCENARIOS}, got {scenario!r}", ("scenario",)
        )

    base_dir = base_dir or Path.cwd()
    class_b = _class_b(reader, data.get("class_b")) if scenario == "class_b" else None
    class_a = _class_a(reader, data.get("class_a"), base_dir) if scenario == "class_a" else None

    metrics = reader.mapping(data.get("metrics"), ("metrics",), METRIC_KEYS)
    ospa = OspaParams(
        p=float(reader.number(metrics, "ospa_p", ("metrics",), 2.0, 1)),
        c=float(
            reader.number(metrics, "ospa_c", ("metrics",), DEFAULT_OSPA_C[scenario], positive=True)
        ),
    )
    cutoff = reader.number(metrics, "siap_cutoff", ("metrics",), None, positive=True)

    output_dir = data.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise reader.error("output_dir must be a string", ("output_dir",))
    trace = data.get("trace", False)
    if not isinstance(trace, bool):
        raise reader.error("trace must be true or false", ("trace",))

    return RunConfig(
        scenario=scenario,
        class_b=class_b,
        class_a=class_a,
        tracker=_tracker(reader, data.get("tracker"), scenario),
        filters=_filters(reader, data.get("filters")),
        seeds=_seeds(reader, data.get("seeds")),
        ospa=ospa,
        siap_cutoff=None if cutoff is None else float(cutoff),
        output_dir=Path(output_dir) if output_dir else None,
        workers=reader.number(data, "workers", (), 1, 1, integer=True),
        trace=trace,
        source=Path(source) if source != "<config>" else None,
    )


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("Configuration file not found", source=str(path))
    text = path.read_text(encoding="utf-8")
    config = parse_config(text, source=str(path), base_dir=path.resolve().parent)
    logger.debug("Loaded %s configuration from %s", config.scenario, path)
    return config
