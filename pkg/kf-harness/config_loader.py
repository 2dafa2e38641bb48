"""Load and validate experiment configurations from a YAML file."""

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

import sys
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.kalman import DEFAULT_MAX_ITER, DEFAULT_TOL
from src.lds import LdsModel, ModelError, validate_model
from src.rpe import MAX_DIRECT_GAMMA, GammaSchedule, LambdaMode, RpeConfig, ScheduleRule


class ConfigError(Exception):
    """Raised when an experiment configuration cannot be used."""


class ParseError(ConfigError):
    """Raised when the config file is missing or is not valid YAML."""

    def __init__(self, path: str | Path, message: str, line: int | None = None, column: int | None = None):
        where = f"{path}:{line}:{column}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line
        self.column = column


class ValidationError(ConfigError):
    """Raised when a config value is missing, mistyped or out of range."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class UnknownKey(ValidationError):
    """Raised for keys the schema does not define."""


class FilterKind(str, Enum):
    CLASSIC = "classic"
    RPE_SCALAR = "rpe_scalar"
    RPE_MATRIX = "rpe_matrix"
    NETGRAPH = "netgraph"


class K0Kind(str, Enum):
    EXPLICIT = "explicit"
    SCALED_OPTIMAL = "scaled_optimal"
    DEFAULT = "default"


@dataclass(frozen=True)
class K0Spec:
    kind: K0Kind = K0Kind.DEFAULT
    scale: float = 1.0
    matrix: np.ndarray | None = None


@dataclass(frozen=True)
class OracleConfig:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER


@dataclass(frozen=True)
class OutputsConfig:
    dir: str = "results"
    metrics: bool = True
    summary: bool = True
    trajectory: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    model: LdsModel
    T: int
    runs: int = 1
    seed: int = 0
    filter: FilterKind = FilterKind.RPE_SCALAR
    rpe: RpeConfig = field(default_factory=RpeConfig)
    theta0: float = 0.0
    k0: K0Spec = field(default_factory=K0Spec)
    x0: np.ndarray | None = None
    x0_cov: np.ndarray | None = None
    kalman_x0: np.ndarray | None = None
    kalman_N0: np.ndarray | None = None
    oracle: OracleConfig = field(default_factory=OracleConfig)
    outputs: OutputsConfig = field(default_factory=OutputsConfig)
    name: str = "experiment"

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def p(self) -> int:
        return self.model.p


TOP_LEVEL_KEYS = {
    "name", "model", "T", "runs", "seed", "filter", "rpe", "k0",
    "initial_state", "kalman", "oracle", "outputs",
}
MODEL_KEYS = {"n", "p", "F", "H", "Pi", "Sigma"}
RPE_KEYS = {"gamma", "lambda_mode", "theta_bounds", "stability_guard", "theta0"}
GAMMA_KEYS = {"rule", "c", "floor", "tau"}
K0_KEYS = {"kind", "scale", "matrix"}
INITIAL_STATE_KEYS = {"x0", "cov"}
KALMAN_KEYS = {"x0", "N0"}
ORACLE_KEYS = {"tol", "max_iter"}
OUTPUTS_KEYS = {"dir", "metrics", "summary", "trajectory"}


# ---------------------------------------------------------------------------
# Field readers
# ---------------------------------------------------------------------------

def _section(raw: dict, key: str, allowed: set[str], prefix: str = "") -> dict:
    name = f"{prefix}{key}"
    value = raw.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ValidationError(name, f"expected a mapping, got {type(value).__name__}")
    _reject_unknown(value, allowed, f"{name}.")
    return value


def _reject_unknown(section: dict, allowed: set[str], prefix: str) -> None:
    for key in section:
        if key not in allowed:
            raise UnknownKey(f"{prefix}{key}", f"unknown key (expected one of {', '.join(sorted(allowed))})")


def _number(value, name: str) -> float:
    # PyYAML reads exponent literals such as 1e-4 as strings
    if isinstance(value, bool):
        raise ValidationError(name, f"expected a number, got {value!r}")
    number = None
    if isinstance(value, (int, float)):
        number = float(value)
    elif isinstance(value, str):
        try:
            number = float(value)
        except ValueError:
            pass
    if number is None:
        raise ValidationError(name, f"expected a number, got {value!r}")
    if not math.isfinite(number):
        raise ValidationError(name, f"must be finite, got {value!r}")
    return number


def _integer(value, name: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(name, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(name, f"must be >= {minimum}, got {value}")
    return value


def _boolean(value, name: str) -> bool:
    if not isinstance(value, bool):
        raise ValidationError(name, f"expected true or false, got {value!r}")
    return value


def _choice(value, name: str, enum: type[Enum]) -> Enum:
    try:
        return enum(value)
    except ValueError:
        options = ", ".join(member.value for member in enum)
        raise ValidationError(name, f"expected one of {options}, got {value!r}") from None


def _matrix(value, name: str, rows: int, cols: int) -> np.ndarray:
    """Nested row-major list with the declared dimensions."""
    if not isinstance(value, list) or len(value) != rows:
        raise ValidationError(name, f"expected {rows} rows of {cols} numbers")
    out = np.empty((rows, cols))
    for i, row in enumerate(value):
        if not isinstance(row, list) or len(row) != cols:
            raise ValidationError(name, f"row {i} must hold {cols} numbers")
        for j, entry in enumerate(row):
            out[i, j] = _number(entry, f"{name}[{i}][{j}]")
    return out


def _vector(value, name: str, length: int) -> np.ndarray:
    if not isinstance(value, list) or len(value) != length:
        raise ValidationError(name, f"expected a list of {length} numbers")
    return np.array([_number(entry, f"{name}[{i}]") for i, entry in enumerate(value)])


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------

def _model(raw: dict) -> LdsModel:
    if "model" not in raw:
        raise ValidationError("model", "required section is missing")
    section = _section(raw, "model", MODEL_KEYS)
    for key in ("n", "p", "F", "H", "Pi", "Sigma"):
        if key not in section:
            raise ValidationError(f"model.{key}", "required key is missing")
    n = _integer(section["n"], "model.n", 1)
    p = _integer(section["p"], "model.p", 1)
    model = LdsModel(
        F=_matrix(section["F"], "model.F", n, n),
        H=_matrix(section["H"], "model.H", p, n),
        Pi=_matrix(section["Pi"], "model.Pi", n, n),
        Sigma=_matrix(section["Sigma"], "model.Sigma", p, p),
    )
    try:
        validate_model(model)
    except ModelError as exc:
        # messages lead with the offending matrix name
        raise ValidationError(f"model.{str(exc).split()[0]}", str(exc)) from exc
    return model


def _rpe(raw: dict) -> tuple[RpeConfig, float]:
    section = _section(raw, "rpe", RPE_KEYS)
    gamma_raw = _section(section, "gamma", GAMMA_KEYS, prefix="rpe.")
    defaults = GammaSchedule()
    try:
        schedule = GammaSchedule(
            rule=_choice(gamma_raw.get("rule", defaults.rule.value), "rpe.gamma.rule", ScheduleRule),
            c=_number(gamma_raw.get("c", defaults.c), "rpe.gamma.c"),
            floor=_number(gamma_raw.get("floor", defaults.floor), "rpe.gamma.floor"),
            tau=_number(gamma_raw.get("tau", defaults.tau), "rpe.gamma.tau"),
        )
    except ValueError as exc:
        raise ValidationError("rpe.gamma", str(exc)) from exc

    bounds_raw = section.get("theta_bounds", list(RpeConfig().theta_bounds))
    if not isinstance(bounds_raw, list) or len(bounds_raw) != 2:
        raise ValidationError("rpe.theta_bounds", "expected [min, max]")
    bounds = (_number(bounds_raw[0], "rpe.theta_bounds[0]"), _number(bounds_raw[1], "rpe.theta_bounds[1]"))
    try:
        cfg = RpeConfig(
            gamma_schedule=schedule,
            lambda_mode=_choice(section.get("lambda_mode", "inverse"), "rpe.lambda_mode", LambdaMode),
            theta_bounds=bounds,
            stability_guard=_boolean(section.get("stability_guard", True), "rpe.stability_guard"),
        )
    except ValueError as exc:
        raise ValidationError("rpe.theta_bounds", str(exc)) from exc

    if cfg.lambda_mode is LambdaMode.DIRECT:
        # the direct rule keeps Λ̂ PSD only while γ(t) <= 1
        if schedule.c > MAX_DIRECT_GAMMA:
            raise ValidationError(
                "rpe.gamma.c", f"must be <= {MAX_DIRECT_GAMMA} with lambda_mode direct, got {schedule.c}"
            )
        if schedule.rule is ScheduleRule.INVERSE_T and schedule.floor > MAX_DIRECT_GAMMA:
            raise ValidationError(
                "rpe.gamma.floor", f"must be <= {MAX_DIRECT_GAMMA} with lambda_mode direct, got {schedule.floor}"
            )

    theta0 = _number(section.get("theta0", 0.0), "rpe.theta0")
    if not bounds[0] <= theta0 <= bounds[1]:
        raise ValidationError("rpe.theta0", f"{theta0} lies outside theta_bounds {bounds}")
    return cfg, theta0


def _k0(raw: dict, n: int, p: int) -> K0Spec:
    section = _section(raw, "k0", K0_KEYS)
    kind = _choice(section.get("kind", K0Kind.DEFAULT.value), "k0.kind", K0Kind)
    if kind is K0Kind.EXPLICIT:
        if section.get("matrix") is None:
            raise ValidationError("k0.matrix", "required when kind is explicit")
        return K0Spec(kind=kind, matrix=_matrix(section["matrix"], "k0.matrix", n, p))
    if section.get("matrix") is not None:
        raise ValidationError("k0.matrix", f"only valid when kind is explicit, not {kind.value}")
    scale = _number(section.get("scale", 1.0), "k0.scale")
    if kind is K0Kind.SCALED_OPTIMAL and scale <= 0.0:
        raise ValidationError("k0.scale", f"must be > 0, got {scale}")
    return K0Spec(kind=kind, scale=scale)


def _optional_vector(section: dict, key: str, prefix: str, length: int) -> np.ndarray | None:
    value = section.get(key)
    return None if value is None else _vector(value, f"{prefix}.{key}", length)


def _optional_covariance(section: dict, key: str, prefix: str, n: int) -> np.ndarray | None:
    value = section.get(key)
    if value is None:
        return None
    name = f"{prefix}.{key}"
    cov = _matrix(value, name, n, n)
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
        raise ValidationError(name, "is not symmetric")
    if np.linalg.eigvalsh(0.5 * (cov + cov.T))[0] < -1e-12:
        raise ValidationError(name, "is not positive semidefinite")
    return cov


def build_config(raw, source: str | Path = "<config>", seed: int | None = None) -> ExperimentConfig:
    """Validate a parsed YAML document and fill in defaults."""
    if not isinstance(raw, dict):
        raise ValidationError("<root>", f"{source} must contain a mapping at the top level")
    _reject_unknown(raw, TOP_LEVEL_KEYS, "")

    model = _model(raw)
    n, p = model.n, model.p
    if "T" not in raw:
        raise ValidationError("T", "required key is missing")
    rpe_cfg, theta0 = _rpe(raw)
    initial = _section(raw, "initial_state", INITIAL_STATE_KEYS)
    kalman = _section(raw, "kalman", KALMAN_KEYS)
    oracle = _section(raw, "oracle", ORACLE_KEYS)
    outputs = _section(raw, "outputs", OUTPUTS_KEYS)

    tol = _number(oracle.get("tol", DEFAULT_TOL), "oracle.tol")
    if tol <= 0.0:
        raise ValidationError("oracle.tol", f"must be > 0, got {tol}")
    filter_kind = _choice(raw.get("filter", FilterKind.RPE_SCALAR.value), "filter", FilterKind)
    if filter_kind is FilterKind.NETGRAPH and rpe_cfg.lambda_mode is not LambdaMode.INVERSE:
        raise ValidationError("rpe.lambda_mode", "the netgraph filter only runs the inverse mode")

    name = raw.get("name", "experiment")
    if not isinstance(name, str) or not name:
        raise ValidationError("name", f"expected a non-empty string, got {name!r}")
    out_dir = outputs.get("dir", "results")
    if not isinstance(out_dir, str) or not out_dir:
        raise ValidationError("outputs.dir", f"expected a path, got {out_dir!r}")

    return ExperimentConfig(
        model=model,
        T=_integer(raw["T"], "T", 1),
        runs=_integer(raw.get("runs", 1), "runs", 1),
        seed=_integer(raw.get("seed", 0) if seed is None else seed, "seed", 0),
        filter=filter_kind,
        rpe=rpe_cfg,
        theta0=theta0,
        k0=_k0(raw, n, p),
        x0=_optional_vector(initial, "x0", "initial_state", n),
        x0_cov=_optional_covariance(initial, "cov", "initial_state", n),
        kalman_x0=_optional_vector(kalman, "x0", "kalman", n),
        kalman_N0=_optional_covariance(kalman, "N0", "kalman", n),
        oracle=OracleConfig(
            tol=tol,
            max_iter=_integer(oracle.get("max_iter", DEFAULT_MAX_ITER), "oracle.max_iter", 1),
        ),
        outputs=OutputsConfig(
            dir=out_dir,
            metrics=_boolean(outputs.get("metrics", True), "outputs.metrics"),
            summary=_boolean(outputs.get("summary", True), "outputs.summary"),
            trajectory=_boolean(outputs.get("trajectory", False), "outputs.trajectory"),
        ),
        name=name,
    )


def load_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    """Read a YAML experiment file; ``seed`` overrides the file's master seed.

    Raises ParseError for a missing or malformed file, ValidationError naming
    the dotted field for bad values, UnknownKey for keys outside the schema.
    """
    path = Path(path)
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise ParseError(path, "config file not found") from None
    except OSError as exc:
        raise ParseError(path, f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        if mark is None:
            raise ParseError(path, problem) from exc
        raise ParseError(path, problem, line=mark.line + 1, column=mark.column + 1) from exc
    return build_config(raw, source=path, seed=seed)


def _listed(a: np.ndarray | None):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def resolved_config(cfg: ExperimentConfig) -> dict:
    """The config with every default filled in, as plain YAML-ready data."""
    schedule = cfg.rpe.gamma_schedule
    return {
        "name": cfg.name,
        "model": {
            "n": cfg.n,
            "p": cfg.p,
            "F": _listed(cfg.model.F),
            "H": _listed(cfg.model.H),
            "Pi": _listed(cfg.model.Pi),
            "Sigma": _listed(cfg.model.Sigma),
        },
        "T": cfg.T,
        "runs": cfg.runs,
        "seed": cfg.seed,
        "filter": cfg.filter.value,
        "rpe": {
            "gamma": {
                "rule": schedule.rule.value,
                "c": schedule.c,
                "floor": schedule.floor,
                "tau": schedule.tau,
            },
            "lambda_mode": cfg.rpe.lambda_mode.value,
            "theta_bounds": list(cfg.rpe.theta_bounds),
            "stability_guard": cfg.rpe.stability_guard,
            "theta0": cfg.theta0,
        },
        "k0": {
            "kind": cfg.k0.kind.value,
            "scale": cfg.k0.scale,
            "matrix": _listed(cfg.k0.matrix),
        },
        "initial_state": {"x0": _listed(cfg.x0), "cov": _listed(cfg.x0_cov)},
        "kalman": {"x0": _listed(cfg.kalman_x0), "N0": _listed(cfg.kalman_N0)},
        "oracle": {"tol": cfg.oracle.tol, "max_iter": cfg.oracle.max_iter},
        "outputs": {
            "dir": cfg.outputs.dir,
            "metrics": cfg.outputs.metrics,
            "summary": cfg.outputs.summary,
            "trajectory": cfg.outputs.trajectory,
        },
    }


def resolved_config_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(resolved_config(cfg), sort_keys=False, default_flow_style=None)
