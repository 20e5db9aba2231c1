"""Run configuration: a flat TOML file mapped onto a validated dataclass.

Layout:

    [law]
    family = "exponential"        # or "exp-pareto", "hazard-table"
    rate = 1.0                    # family parameters, inline

    [run]
    age_first = 0.0
    age_second = 0.1
    threshold = "auto"            # number, or "auto" = twice the mean ratio
    moment_orders = [1.0]
    rates = "auto"                # list, "auto" = half the admissible sup,
                                  # or [] to skip exponential bounds
    t_grid = [5.0, 10.0, 20.0, 50.0]
    n_replicas = 100000
    seed = 0
    output_dir = "out"            # optional

    [tolerances]                  # optional, defaults shown
    overlap_grid = 256
    residual_grid = 33
    event_cap = 100000
    tv_bins = 0                   # 0 = cube-root rule

Every loader error is a ValidationError naming the offending field.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

try:
    import tomllib
except ModuleNotFoundError:                       # python < 3.11
    import tomli as tomllib

from .dist_core import RenewalLaw, law_from_spec
from .errors import NoExponentialRateError, ValidationError

AUTO = "auto"


@dataclass(frozen=True)
class Tolerances:
    overlap_grid: int = 256
    residual_grid: int = 33
    event_cap: int = 100_000
    tv_bins: int | None = None


@dataclass(frozen=True)
class RunConfig:
    law: RenewalLaw
    age_first: float
    age_second: float
    threshold: float | str = AUTO
    moment_orders: tuple[float, ...] = (1.0,)
    rates: tuple[float, ...] | str = AUTO
    t_grid: tuple[float, ...] = ()
    n_replicas: int = 10_000
    seed: int = 0
    output_dir: str | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)

    @property
    def resolved(self) -> bool:
        return self.threshold != AUTO and self.rates != AUTO


def _number(table: dict, key: str, where: str, *, minimum=None,
            strict=False, default=None, integer=False):
    if key not in table:
        if default is not None:
            return default
        raise ValidationError(f"{where}.{key}", "missing required field")
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where}.{key}", f"expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ValidationError(f"{where}.{key}", f"expected an integer, got {value!r}")
        value = int(value)
    if minimum is not None:
        if strict and not value > minimum:
            raise ValidationError(f"{where}.{key}",
                                  f"must be greater than {minimum}, got {value!r}")
        if not strict and not value >= minimum:
            raise ValidationError(f"{where}.{key}",
                                  f"must be at least {minimum}, got {value!r}")
    return value


def _number_list(table: dict, key: str, where: str, *, minimum=None,
                 strict=False, default=()):
    if key not in table:
        return tuple(default)
    raw = table[key]
    if not isinstance(raw, list):
        raise ValidationError(f"{where}.{key}", f"expected a list, got {raw!r}")
    out = []
    for i, value in enumerate(raw):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{where}.{key}[{i}]",
                                  f"expected a number, got {value!r}")
        if minimum is not None and (not value > minimum if strict
                                    else not value >= minimum):
            cmp = "greater than" if strict else "at least"
            raise ValidationError(f"{where}.{key}[{i}]",
                                  f"must be {cmp} {minimum}, got {value!r}")
        out.append(float(value))
    return tuple(out)


def config_from_dict(data: dict) -> RunConfig:
    """Validate a parsed config mapping; all errors name their field."""
    if "law" not in data or not isinstance(data["law"], dict):
        raise ValidationError("law", "missing [law] table")
    law_table = dict(data["law"])
    family = law_table.pop("family", None)
    law = law_from_spec({"family": family, "params": law_table})

    run = data.get("run")
    if not isinstance(run, dict):
        raise ValidationError("run", "missing [run] table")
    known = {"age_first", "age_second", "threshold", "moment_orders",
             "rates", "t_grid", "n_replicas", "seed", "output_dir"}
    for key in run:
        if key not in known:
            raise ValidationError(f"run.{key}", "unknown field")

    threshold = run.get("threshold", AUTO)
    if threshold != AUTO:
        threshold = _number(run, "threshold", "run", minimum=0.0, strict=True)

    rates = run.get("rates", AUTO)
    if rates != AUTO:
        rates = _number_list(run, "rates", "run", minimum=0.0, strict=True)

    output_dir = run.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ValidationError("run.output_dir", "expected a string path")

    tol_table = data.get("tolerances", {})
    if not isinstance(tol_table, dict):
        raise ValidationError("tolerances", "expected a table")
    tv_bins = _number(tol_table, "tv_bins", "tolerances", minimum=0,
                      default=0, integer=True)
    tolerances = Tolerances(
        overlap_grid=_number(tol_table, "overlap_grid", "tolerances",
                             minimum=2, default=256, integer=True),
        residual_grid=_number(tol_table, "residual_grid", "tolerances",
                              minimum=2, default=33, integer=True),
        event_cap=_number(tol_table, "event_cap", "tolerances",
                          minimum=1, default=100_000, integer=True),
        tv_bins=tv_bins if tv_bins else None,
    )

    return RunConfig(
        law=law,
        age_first=_number(run, "age_first", "run", minimum=0.0),
        age_second=_number(run, "age_second", "run", minimum=0.0),
        threshold=threshold,
        moment_orders=_number_list(run, "moment_orders", "run",
                                   minimum=1.0, default=(1.0,)),
        rates=rates,
        t_grid=_number_list(run, "t_grid", "run", minimum=0.0, strict=True),
        n_replicas=_number(run, "n_replicas", "run", minimum=1,
                           default=10_000, integer=True),
        seed=_number(run, "seed", "run", minimum=0, default=0, integer=True),
        output_dir=output_dir,
        tolerances=tolerances,
    )


def load_config(path: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except OSError as exc:
        raise ValidationError("config", f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError("config", f"malformed TOML in {path}: {exc}") from exc
    return config_from_dict(data)


def resolve_auto(config: RunConfig) -> RunConfig:
    """Replace "auto" markers with concrete values.

    The threshold default is twice the mean ratio; the default exponential
    rate is half the admissible supremum (empty when no rate is admissible).
    Returns the config unchanged if nothing is marked auto.
    """
    from . import bound_engine   # deferred: keeps config import light

    updates = {}
    threshold = config.threshold
    if threshold == AUTO:
        threshold = bound_engine.default_threshold(config.law)
        updates["threshold"] = threshold
    if config.rates == AUTO:
        try:
            params = bound_engine.coupling_params(
                config.law, threshold,
                grid_size=config.tolerances.overlap_grid)
            limit = bound_engine.exponential_rate_limit(
                config.law, threshold, params=params,
                grid_size=config.tolerances.residual_grid)
            updates["rates"] = (0.5 * limit.rate,)
        except NoExponentialRateError:
            updates["rates"] = ()
    return replace(config, **updates) if updates else config
