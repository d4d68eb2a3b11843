"""Evaluación por lotes: objetivo, referencia, gap y tiempo por instancia; reportes CSV/JSON."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from services import baselines
from services.env import Solution
from services.errors import ConfigError, InstanceParseError
from services.instance import Instance, load_instance
from services.policy import VapPolicy

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["instance_id", "variant", "n", "k", "method", "objective", "reference", "gap_pct", "time_s"]
METHODS = ("greedy", "random", "model-greedy", "sample", "oracle")
MODEL_METHODS = ("model-greedy", "sample")
REFERENCES = ("oracle", "greedy")


@dataclass
class EvalRow:
    instance_id: str
    variant: str
    n: int
    k: int
    method: str
    objective: float
    reference: float
    gap: float
    time_s: float
    feasible: bool = True

    @property
    def gap_pct(self) -> float:
        return 100.0 * self.gap

    def csv_row(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "variant": self.variant,
            "n": self.n,
            "k": self.k,
            "method": self.method,
            "objective": repr(self.objective),
            "reference": repr(self.reference),
            "gap_pct": repr(self.gap_pct),
            "time_s": f"{self.time_s:.6f}",
        }


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    @property
    def mean_objective(self) -> float:
        return float(np.mean([r.objective for r in self.rows])) if self.rows else math.nan

    @property
    def mean_gap_pct(self) -> float:
        return float(np.mean([r.gap_pct for r in self.rows])) if self.rows else math.nan

    @property
    def mean_time_s(self) -> float:
        return float(np.mean([r.time_s for r in self.rows])) if self.rows else math.nan

    def summary(self) -> dict:
        return {
            "instances": len(self.rows),
            "mean_objective": self.mean_objective,
            "mean_gap_pct": self.mean_gap_pct,
            "mean_time_s": self.mean_time_s,
            "infeasible": sum(not r.feasible for r in self.rows),
        }


def relative_gap(objective: float, reference: float) -> float:
    """(obj - ref) / ref."""
    if reference == 0:
        return 0.0 if objective == 0 else math.inf
    return (objective - reference) / reference


def load_instance_dir(directory: str | Path) -> list[tuple[str, Instance]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"instance directory not found: {directory}")
    files = sorted(directory.glob("*.json"))
    if not files:
        raise InstanceParseError(f"no instance files (*.json) in {directory}")
    return [(path.stem, load_instance(path)) for path in files]


def load_reference_table(path: str | Path) -> dict[str, float]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"reference file not found: {path}")
    try:
        table = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed reference JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(table, dict):
        raise ConfigError("reference file must map instance_id to objective")
    return {str(key): float(value) for key, value in table.items()}


def solve_instance(
    inst: Instance,
    method: str,
    policy: Optional[VapPolicy] = None,
    samples: int = 1,
    seed: int = 0,
) -> Solution:
    if method not in METHODS:
        raise ConfigError(f"unknown method '{method}' (expected one of {', '.join(METHODS)})")
    if method in MODEL_METHODS and policy is None:
        raise ConfigError(f"method '{method}' needs a checkpoint")
    if method == "greedy":
        return baselines.greedy_construct(inst)
    if method == "random":
        return baselines.random_solution(inst, seed)
    if method == "oracle":
        return baselines.exhaustive_solve(inst).best_solution
    if method == "model-greedy":
        return baselines.model_greedy(policy, inst)
    return baselines.sample_best(policy, inst, samples, seed)


def reference_objective(inst: Instance, instance_id: str, reference: str, table: Optional[dict[str, float]]) -> float:
    if table is not None:
        if instance_id not in table:
            raise ConfigError(f"reference file has no entry for instance '{instance_id}'")
        return table[instance_id]
    if reference == "oracle":
        return baselines.exhaustive_solve(inst).best_cost
    return baselines.greedy_construct(inst).objective


def evaluate(
    instances: Sequence[tuple[str, Instance]],
    method: str,
    reference: str = "greedy",
    policy: Optional[VapPolicy] = None,
    samples: int = 1,
    seed: int = 0,
    workers: int = 1,
) -> EvalReport:
    """
    Evaluar un método sobre instancias contra una referencia (oracle, greedy o archivo JSON).

    Las filas salen ordenadas por instance_id sin importar el orden de finalización.
    """
    table = None if reference in REFERENCES else load_reference_table(reference)
    if method in MODEL_METHODS and policy is None:
        raise ConfigError(f"method '{method}' needs a checkpoint")

    def run(item: tuple[str, Instance]) -> EvalRow:
        instance_id, inst = item
        started = time.perf_counter()
        solution = solve_instance(inst, method, policy=policy, samples=samples, seed=seed)
        elapsed = time.perf_counter() - started
        ref = reference_objective(inst, instance_id, reference, table)
        row = EvalRow(
            instance_id=instance_id,
            variant=inst.variant.name,
            n=inst.n_customers,
            k=inst.fleet_size,
            method=method,
            objective=solution.objective,
            reference=ref,
            gap=relative_gap(solution.objective, ref),
            time_s=elapsed,
            feasible=solution.feasible,
        )
        logger.debug(f"[EVAL] {instance_id}: obj={row.objective:.4f} ref={ref:.4f} gap={row.gap_pct:.2f}%")
        return row

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, instances))
    else:
        rows = [run(item) for item in instances]
    rows.sort(key=lambda r: r.instance_id)
    return EvalReport(rows=rows)


def write_csv(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in report.rows:
            writer.writerow(row.csv_row())
    return path


def write_json(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "summary": report.summary(),
        "rows": [{**asdict(row), "gap_pct": row.gap_pct} for row in report.rows],
    }
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def read_csv(path: str | Path) -> list[EvalRow]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"eval CSV not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"{path} is missing columns: {', '.join(sorted(missing))}")
        rows = []
        for record in reader:
            rows.append(
                EvalRow(
                    instance_id=record["instance_id"],
                    variant=record["variant"],
                    n=int(record["n"]),
                    k=int(record["k"]),
                    method=record["method"],
                    objective=float(record["objective"]),
                    reference=float(record["reference"]),
                    gap=float(record["gap_pct"]) / 100.0,
                    time_s=float(record["time_s"]),
                )
            )
    return rows


# ============ Agregación ============

GAP_REPORT_COLUMNS = ["variant", "method", "instances", "obj", "gap_pct", "time_s"]


def gap_report(csv_paths: Sequence[str | Path]) -> list[dict]:
    """Promedios Obj/Gap/Time por (variante, método) de uno o más CSV de evaluación."""
    groups: dict[tuple[str, str], list[EvalRow]] = {}
    for path in csv_paths:
        for row in read_csv(path):
            groups.setdefault((row.variant, row.method), []).append(row)
    return [
        {
            "variant": variant,
            "method": method,
            "instances": len(rows),
            "obj": float(np.mean([r.objective for r in rows])),
            "gap_pct": float(np.mean([r.gap_pct for r in rows])),
            "time_s": float(np.mean([r.time_s for r in rows])),
        }
        for (variant, method), rows in sorted(groups.items())
    ]


def write_gap_report(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=GAP_REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return path


def format_table(rows: list[dict]) -> str:
    header = f"{'variant':<14} {'method':<13} {'n':>5} {'Obj.':>10} {'Gap %':>8} {'Time s':>9}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['variant']:<14} {row['method']:<13} {row['instances']:>5} "
            f"{row['obj']:>10.4f} {row['gap_pct']:>8.2f} {row['time_s']:>9.3f}"
        )
    return "\n".join(lines)
