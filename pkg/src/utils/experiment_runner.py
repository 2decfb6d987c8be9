"""
Experiment Runner
One solve per seed for a RunConfig, in worker processes, plus cross-variant comparison
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from diagnostics import Trace, TraceRecord
from exceptions import DivergenceError, ValidationError
from group_lasso import GroupLassoInstance, build_group_lasso, gen_group_lasso_synthetic
from instance_io import load_instance
from pdmm_solver import PDMMSolver, Problem
from reference_solvers import GaussSeidelADMM
from rpca import RpcaInstance, build_rpca_instance, gen_rpca_synthetic
from run_config import ProblemSpec, RunConfig
from toy_qp import ToyQPSpec, build_toy_qp
from trace_logger import SeedOutcome, TraceLogger

logger = logging.getLogger(__name__)


def build_problem(spec: ProblemSpec) -> Problem:
    """Deterministic in the spec; cached per process"""
    return _build_problem(spec.model_dump_json())


@lru_cache(maxsize=8)
def _build_problem(document: str) -> Problem:
    spec = ProblemSpec.model_validate_json(document)
    params = spec.resolved_params()
    if spec.kind == "toy-qp":
        return build_toy_qp(ToyQPSpec(J=int(params["J"]), I=int(params["I"]),
                                      block_size=int(params["block_size"]), row_size=int(params["row_size"]),
                                      density=float(params["density"]), seed=spec.data_seed))
    if spec.instance is not None:
        instance = load_instance(spec.instance)
        expected = RpcaInstance if spec.kind == "rpca" else GroupLassoInstance
        if not isinstance(instance, expected):
            raise ValidationError(f"{spec.instance} does not hold a {spec.kind} instance")
    elif spec.kind == "rpca":
        instance = gen_rpca_synthetic(int(params["m"]), int(params["n"]), int(params["rank"]), spec.data_seed)
    else:
        instance = gen_group_lasso_synthetic(int(params["m"]), int(params["L"]), int(params["b"]),
                                             int(params["overlap"]), spec.data_seed)
    if spec.kind == "rpca":
        return build_rpca_instance(instance)
    return build_group_lasso(instance)


def run_seed(config: RunConfig, seed: int) -> SeedOutcome:
    """Solve one seed and write its trace; a diverged solve keeps its partial trace"""
    problem = build_problem(config.problem)
    traces = TraceLogger(config.out, config.record_time)
    label = config.display_label
    start = time.perf_counter()
    error = None
    try:
        if config.variant == "gsadmm-ref":
            result = GaussSeidelADMM(problem, config.rho, config.tol, config.max_iter, config.update_mode,
                                     config.inner_max_iter).solve()
        else:
            result = PDMMSolver(problem, config.solver_config(problem, seed)).solve()
        trace = result.trace
    except DivergenceError as e:
        trace = e.trace
        if trace is None:
            # failed before the first iterate was recorded
            trace = Trace(stop_reason="diverged")
            trace.append(TraceRecord(0, float("nan"), float("nan")))
        trace.stop_reason = "diverged"
        error = str(e)
        logger.error(f"{label} seed {seed}: {e}")
    wall = time.perf_counter() - start
    path = traces.write_trace(trace, label, seed)
    last = trace.last
    return SeedOutcome(seed, last.t, last.objective, last.primal_residual, wall,
                       trace.stop_reason or "diverged", str(path), error)


@dataclass
class RunSummary:
    label: str
    config: RunConfig
    outcomes: List[SeedOutcome]
    summary_path: Optional[Path] = None

    @property
    def all_converged(self) -> bool:
        return all(o.stop_reason == "tolerance" for o in self.outcomes)

    @property
    def diverged(self) -> bool:
        return any(o.stop_reason == "diverged" for o in self.outcomes)

    def row(self) -> Dict[str, object]:
        """One line of a comparison table"""
        iterations = np.array([o.iterations for o in self.outcomes], dtype=float)
        row = {
            "label": self.label,
            "variant": self.config.variant,
            "K": self.config.K if self.config.K is not None else "all",
            "seeds": len(self.outcomes),
            "iterations_mean": float(np.mean(iterations)),
            "iterations_std": float(np.std(iterations)),
            "residual_mean": float(np.mean([o.final_residual for o in self.outcomes])),
            "objective_mean": float(np.mean([o.final_objective for o in self.outcomes])),
            "converged": sum(o.stop_reason == "tolerance" for o in self.outcomes),
        }
        if self.config.record_time:
            row["time_s_mean"] = float(np.mean([o.wall_time for o in self.outcomes]))
        return row


class ExperimentRunner:
    """Runs every seed of a RunConfig and writes the summary"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.logger = logging.getLogger(__name__)
        self.traces = TraceLogger(config.out, config.record_time)

    def run(self) -> RunSummary:
        cfg = self.config
        label = cfg.display_label
        # the problem is built once here so data errors surface before workers start
        problem = build_problem(cfg.problem)
        self.logger.info(f"Running {label} on {problem.name}: {len(cfg.seeds)} seeds, {cfg.workers} workers")
        start = time.time()

        outcomes: List[SeedOutcome] = []
        if cfg.workers > 1 and len(cfg.seeds) > 1:
            with ProcessPoolExecutor(max_workers=min(cfg.workers, len(cfg.seeds))) as executor:
                futures = {executor.submit(run_seed, cfg, seed): seed for seed in cfg.seeds}
                for future in as_completed(futures):
                    outcomes.append(future.result())
        else:
            outcomes = [run_seed(cfg, seed) for seed in cfg.seeds]
        outcomes.sort(key=lambda o: o.seed)

        for o in outcomes:
            self.logger.info(f"{label} seed {o.seed:04d}: {o.stop_reason} after {o.iterations} iterations, "
                             f"objective={o.final_objective:.10g}, residual={o.final_residual:.3e}")
        summary = RunSummary(label, cfg, outcomes)
        summary.summary_path = self.traces.write_summary(label, cfg.model_dump(mode="json"), outcomes)
        self.logger.info(f"{label} completed in {time.time() - start:.1f} seconds")
        return summary


def check_comparable(configs: List[RunConfig]) -> None:
    """Every config must name the same problem and carry a distinct label"""
    if not configs:
        raise ValidationError("compare needs at least one configuration")
    reference = configs[0].problem
    for cfg in configs[1:]:
        if cfg.problem != reference:
            raise ValidationError(f"config '{cfg.display_label}' uses problem {cfg.problem.model_dump()}, "
                                  f"expected {reference.model_dump()}")
    labels = [cfg.display_label for cfg in configs]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"duplicate run labels {labels}; set 'label' to tell them apart")


def comparison_table(summaries: List[RunSummary], output: Union[str, Path]) -> pd.DataFrame:
    """One row per run; also written to compare.csv under `output`"""
    table = pd.DataFrame([s.row() for s in summaries])
    out_dir = Path(output)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "compare.csv", index=False)
    logger.info(f"Comparison of {len(summaries)} runs saved to {out_dir / 'compare.csv'}")
    return table


def compare(configs: List[RunConfig], output: Union[str, Path, None] = None) -> pd.DataFrame:
    """Run every config on the same problem and tabulate them"""
    check_comparable(configs)
    summaries = [ExperimentRunner(cfg).run() for cfg in configs]
    return comparison_table(summaries, output if output is not None else configs[0].out)
