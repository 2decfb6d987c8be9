"""
Run Configuration
YAML/JSON run files validated into RunConfig, with command-line overrides and sweeps
"""

import copy
import json
import logging
import re
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as SchemaError, field_validator, model_validator

from constants import DEFAULT_MAX_ITER, DEFAULT_RHO, DEFAULT_TOL, PRESET_SAMPLERS, STEP_PRESETS
from exceptions import ConfigurationError
from pdmm_solver import Problem, SolverConfig
from stepsize import StepSizes

logger = logging.getLogger(__name__)

PROBLEM_DEFAULTS: Dict[str, Dict[str, Union[int, float]]] = {
    "toy-qp": {"J": 5, "I": 2, "block_size": 2, "row_size": 2, "density": 1.0},
    "rpca": {"m": 100, "n": 200, "rank": 10},
    "grouplasso": {"m": 200, "L": 10, "b": 20, "overlap": 2},
}

SEED_RANGE = re.compile(r"^\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*$")


class ProblemSpec(BaseModel):
    """Generator parameters (defaults per kind) or an instance file"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["toy-qp", "rpca", "grouplasso"]
    instance: Optional[str] = None
    data_seed: int = 0
    params: Dict[str, Union[int, float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _known_params(self):
        unknown = set(self.params) - set(PROBLEM_DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown {self.kind} parameters {sorted(unknown)}; "
                             f"known: {sorted(PROBLEM_DEFAULTS[self.kind])}")
        if self.instance is not None and self.kind == "toy-qp":
            raise ValueError("toy-qp instances are generated, not loaded")
        return self

    def resolved_params(self) -> Dict[str, Union[int, float]]:
        return {**PROBLEM_DEFAULTS[self.kind], **self.params}


def parse_seeds(value: Any) -> List[int]:
    """Accepts 3, [1, 2, 5] or "1..10" (inclusive)"""
    if isinstance(value, bool):
        raise ValueError("seeds must be integers")
    if isinstance(value, int):
        return [value]
    if isinstance(value, str):
        match = SEED_RANGE.match(value)
        if match:
            lo, hi = int(match.group(1)), int(match.group(2))
            if hi < lo:
                raise ValueError(f"empty seed range {value!r}")
            return list(range(lo, hi + 1))
        try:
            return [int(s) for s in value.split(",") if s.strip()]
        except ValueError:
            raise ValueError(f"seeds must look like '1..10' or '1,2,3', got {value!r}")
    return [int(s) for s in value]


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: ProblemSpec
    variant: Literal["pdmm", "sadmm", "pjadmm", "rdbcd", "gsadmm-ref"] = "pdmm"
    label: Optional[str] = None
    K: Optional[Union[int, Literal["all"]]] = None
    K_I: Optional[int] = Field(None, ge=1)
    rho: float = Field(DEFAULT_RHO, gt=0)
    eta: Optional[Union[float, List[float]]] = None
    tau: Optional[float] = Field(None, gt=0)
    nu: Optional[float] = Field(None, ge=0, lt=1)
    sampler: Optional[Literal["uniform", "cyclic"]] = None
    update_mode: Literal["exact", "linearized-f", "linearized-penalty", "linearized-both"] = "exact"
    preset: str = "table1"
    allow_invalid_steps: bool = False
    tol: float = Field(DEFAULT_TOL, gt=0)
    max_iter: int = Field(DEFAULT_MAX_ITER, ge=1)
    inner_max_iter: int = Field(0, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0])
    base_seed: int = 0
    track_h: bool = False
    record_time: bool = False
    workers: int = Field(1, ge=1)
    threads: int = Field(1, ge=1)
    out: str = "results"

    @field_validator("seeds", mode="before")
    @classmethod
    def _seeds(cls, value):
        seeds = parse_seeds(value)
        if not seeds:
            raise ValueError("at least one seed is required")
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be distinct")
        return seeds

    @field_validator("K")
    @classmethod
    def _positive_K(cls, value):
        if isinstance(value, int) and value < 1:
            raise ValueError(f"K must be >= 1 or 'all', got {value}")
        return value

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, value):
        if value != "table1" and value not in STEP_PRESETS:
            raise ValueError(f"unknown preset {value!r}; known: table1, {', '.join(STEP_PRESETS)}")
        return value

    @model_validator(mode="after")
    def _variant_fields(self):
        fixed = self.variant in ("sadmm", "pjadmm", "gsadmm-ref")
        if fixed and (self.tau is not None or self.nu is not None):
            raise ValueError(f"{self.variant} fixes its step sizes; remove tau/nu")
        if fixed and self.preset != "table1":
            raise ValueError(f"{self.variant} does not take a step-size preset")
        if fixed and self.K not in (None, "all"):
            raise ValueError(f"{self.variant} updates every block; K must be 'all' or omitted")
        if self.variant == "pjadmm" and self.eta is not None:
            raise ValueError("pjadmm derives eta from the constraint blocks; remove eta")
        if (self.tau is None) != (self.nu is None):
            raise ValueError("tau and nu are overridden together")
        if self.tau is not None and self.preset != "table1":
            raise ValueError("give either a preset or explicit tau/nu, not both")
        if self.variant == "rdbcd" and self.K_I is None:
            raise ValueError("rdbcd needs K_I")
        return self

    @property
    def display_label(self) -> str:
        if self.label:
            return self.label
        parts = [self.variant]
        if self.K is not None:
            parts.append(f"K{self.K}")
        if self.K_I is not None:
            parts.append(f"KI{self.K_I}")
        if self.preset != "table1":
            parts.append(self.preset)
        return "-".join(parts)

    @property
    def resolved_sampler(self) -> str:
        """Explicit sampler, else the one a preset was tuned with, else uniform"""
        return self.sampler or PRESET_SAMPLERS.get(self.preset, "uniform")

    def resolve_K(self, problem: Problem) -> Optional[int]:
        if self.K == "all":
            return problem.J
        return self.K

    def solver_config(self, problem: Problem, seed: int) -> SolverConfig:
        if self.variant == "gsadmm-ref":
            raise ConfigurationError("gsadmm-ref runs the reference Gauss-Seidel solver, not the PDMM kernel")
        K = self.resolve_K(problem)
        step_sizes = None
        if self.tau is not None:
            K_eff = problem.J if K is None else K
            degrees = problem.A.degrees
            step_sizes = StepSizes((Fraction(self.tau).limit_denominator(10 ** 9),) * problem.I,
                                   (Fraction(self.nu).limit_denominator(10 ** 9),) * problem.I,
                                   K_eff, problem.I if self.K_I is None else self.K_I,
                                   tuple(min(d, K_eff) for d in degrees), problem.I, "manual")
        return SolverConfig(
            variant=self.variant, rho=self.rho, K=K, K_I=self.K_I, eta=self.eta,
            update_mode=self.update_mode, sampler=self.resolved_sampler, preset=self.preset,
            step_sizes=step_sizes, tol=self.tol, max_iter=self.max_iter, seed=seed,
            base_seed=self.base_seed, threads=self.threads, track_h=self.track_h,
            inner_max_iter=self.inner_max_iter, allow_invalid_steps=self.allow_invalid_steps,
        )


# === LOADING ===

def _read_document(path: Path):
    """(data, yaml root node or None)"""
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"Configuration file {path} not found")
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text), None
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}:{e.lineno}: error parsing JSON configuration: {e.msg}")
    try:
        return yaml.safe_load(text) or {}, yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ValueError(f"{where}: error parsing YAML configuration: {e}")


def _node_line(root, loc) -> Optional[int]:
    """1-based line of the YAML node at a pydantic error location"""
    if root is None:
        return None
    node = root
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == str(key):
                    node = v
                    break
            else:
                break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
    return node.start_mark.line + 1


def _format_errors(error: SchemaError, source: str, root=None, prefix=()) -> str:
    lines = []
    for item in error.errors():
        loc = tuple(item["loc"])
        key = ".".join(str(k) for k in loc) or "<root>"
        line = _node_line(root, tuple(prefix) + loc)
        where = f"{source}:{line}" if line is not None else source
        lines.append(f"{where}: {key}: {item['msg']}")
    return "\n".join(lines)


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def validate_run_config(data: Dict[str, Any], source: str = "<config>", root=None, prefix=()) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except SchemaError as e:
        raise ConfigurationError(_format_errors(e, source, root, prefix)) from e


def load_run_configs(path: Union[str, Path, None] = None,
                     overrides: Optional[Dict[str, Any]] = None) -> List[RunConfig]:
    """
    A plain run file gives one RunConfig; a sweep file (`base:` plus a
    `variants:` list) gives one per variant. Overrides apply on top of each.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if path is None:
        return [validate_run_config(overrides, "<command line>")]
    path = Path(path)
    data, root = _read_document(path)
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")

    if "variants" in data:
        base = data.get("base", {})
        variants = data["variants"]
        if not isinstance(variants, list) or not variants:
            raise ConfigurationError(f"{path}: 'variants' must be a non-empty list")
        configs = []
        for k, variant in enumerate(variants):
            merged = _merge(_merge(base, variant), overrides)
            configs.append(validate_run_config(merged, str(path), root, ("variants", k)))
        logger.info(f"Loaded sweep {path} with {len(configs)} variants")
        return configs

    return [validate_run_config(_merge(data, overrides), str(path), root)]
