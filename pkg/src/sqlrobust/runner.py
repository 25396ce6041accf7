"""End-to-end experiment protocols over the harness:

rq1  zero-shot vulnerability scan across all perturbation strategies
rq2  shot-count scaling with randomly sampled demonstrations
rq3  adversarial demonstration augmentation against size-matched baselines
rq4  demonstration-selection strategies plus lexical-diversity diagnostics

Runs are replayable: all randomness derives from one seed via named
sub-seeds, record files carry no timestamps, and a warm gateway cache makes
re-runs byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Dataset, Schema, load_dataset, load_schema
from .curate import RobustnessEvalSet, load_eval_set
from .errors import ConfigError, HarnessError, UndefinedMetricError
from .llm_gateway import CompletionRequest, Gateway, GatewayConfig
from .metrics import (
    EvalRecord,
    Verdict,
    VerdictStatus,
    diversity_report,
    judge,
    perturbation_accuracy,
    robust_accuracy,
    standard_accuracy,
)
from .perturb import PerturbationKind
from .prompt import ANSWER_PRIME, DemoSet, PromptConfig, assemble, serialize_schema
from .sampler import SamplingStrategy, run_strategy, write_selection_manifest

STANDARD_CONDITION = "standard"


@dataclass
class ExperimentConfig:
    dataset_path: str
    schema_path: str
    out_dir: str
    eval_sets_dir: str | None = None
    adv_demos_dir: str | None = None
    candidates_path: str | None = None
    journal_path: str | None = None
    seed: int = 0
    kinds: tuple[PerturbationKind, ...] = tuple(PerturbationKind)
    shots: tuple[int, ...] = (5, 10)
    rq3_shots: int = 10
    rq4_shots: int = 10
    strategies: tuple[SamplingStrategy, ...] = tuple(SamplingStrategy)
    candidates_per_example: int = 20
    exec_timeout_s: float = 5.0
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)

    def __post_init__(self):
        if any(s < 0 for s in self.shots):
            raise ConfigError("shot counts must be >= 0")
        if self.rq3_shots < 1 or self.rq4_shots < 1:
            raise ConfigError("rq3/rq4 shot counts must be >= 1")


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse the declarative JSON experiment config."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc

    def resolve(p):
        if p is None:
            return None
        p = Path(p)
        return str(p if p.is_absolute() else path.parent / p)

    try:
        gateway = GatewayConfig(**doc.get("gateway", {}))
        if gateway.cache_dir:
            gateway.cache_dir = resolve(gateway.cache_dir)
        prompt_cfg = PromptConfig(**doc.get("prompt", {}))
        return ExperimentConfig(
            dataset_path=resolve(doc["dataset_path"]),
            schema_path=resolve(doc["schema_path"]),
            out_dir=resolve(doc["out_dir"]),
            eval_sets_dir=resolve(doc.get("eval_sets_dir")),
            adv_demos_dir=resolve(doc.get("adv_demos_dir")),
            candidates_path=resolve(doc.get("candidates_path")),
            journal_path=resolve(doc.get("journal_path")),
            seed=int(doc.get("seed", 0)),
            kinds=tuple(PerturbationKind(k) for k in doc.get("kinds", [k.value for k in PerturbationKind])),
            shots=tuple(int(s) for s in doc.get("shots", [5, 10])),
            rq3_shots=int(doc.get("rq3_shots", 10)),
            rq4_shots=int(doc.get("rq4_shots", 10)),
            strategies=tuple(
                SamplingStrategy(s)
                for s in doc.get("strategies", [s.value for s in SamplingStrategy])
            ),
            candidates_per_example=int(doc.get("candidates_per_example", 20)),
            exec_timeout_s=float(doc.get("exec_timeout_s", 5.0)),
            gateway=gateway,
            prompt=prompt_cfg,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad config ({exc})") from exc


def derive_seed(run_seed: int, purpose: str) -> int:
    """Stable per-purpose sub-seed: sha256 over '<run_seed>:<purpose>'."""
    digest = hashlib.sha256(f"{run_seed}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


# --- prediction and record files ----------------------------------------------


def predict_sql(gateway: Gateway, prompt_text: str) -> str:
    """One completion; the prompt primes SELECT, so prepend it to the output."""
    response = gateway.complete(CompletionRequest(prompt=prompt_text))
    return ANSWER_PRIME + response.text.rstrip()


def evaluate_targets(
    gateway: Gateway,
    db_path: str,
    schema_text: str,
    prompt_cfg: PromptConfig,
    demos: DemoSet,
    targets: Sequence[tuple[str, str, str]],  # (example_id, nl, gold_sql)
    condition: str,
    timeout_s: float = 5.0,
) -> list[EvalRecord]:
    """Predict and judge every target under one prompt condition."""
    records = []
    for example_id, nl, gold_sql in targets:
        prompt = assemble(schema_text, prompt_cfg, demos, nl)
        predicted = predict_sql(gateway, prompt.text)
        verdict = judge(db_path, gold_sql, predicted, timeout_s)
        records.append(
            EvalRecord(
                example_id=example_id,
                condition=condition,
                predicted_sql=predicted,
                verdict=verdict,
            )
        )
    return records


def save_records(records: Sequence[EvalRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "example_id": r.example_id,
                        "condition": r.condition,
                        "predicted_sql": r.predicted_sql,
                        "verdict": {"status": r.verdict.status.value, "detail": r.verdict.detail},
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_records(path: str | Path) -> list[EvalRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            records.append(
                EvalRecord(
                    example_id=doc["example_id"],
                    condition=doc["condition"],
                    predicted_sql=doc["predicted_sql"],
                    verdict=Verdict(
                        status=VerdictStatus(doc["verdict"]["status"]),
                        detail=doc["verdict"]["detail"],
                    ),
                )
            )
    return records


# --- report rendering -----------------------------------------------------------


@dataclass(frozen=True)
class Table:
    title: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]


def fmt_pct(value: float | None) -> str:
    return "undef" if value is None else f"{100 * value:.2f}"


def fmt_delta(pert: float | None, std: float | None) -> str:
    if pert is None or std is None:
        return "undef"
    return f"{100 * (pert - std):+.2f}"


def render_markdown(tables: Sequence[Table]) -> str:
    """Deterministic markdown rendering; same tables give identical bytes."""
    parts = []
    for t in tables:
        parts.append(f"## {t.title}\n")
        if not t.rows:
            parts.append("(no data)\n")
            continue
        parts.append("| " + " | ".join(t.columns) + " |")
        parts.append("|" + "---|" * len(t.columns))
        for row in t.rows:
            parts.append("| " + " | ".join(row) + " |")
        parts.append("")
    return "\n".join(parts) + "\n"


def render_csv(table: Table) -> str:
    lines = [",".join(_csv_cell(c) for c in table.columns)]
    for row in table.rows:
        lines.append(",".join(_csv_cell(c) for c in row))
    return "\n".join(lines) + "\n"


def _csv_cell(value: str) -> str:
    if any(c in value for c in ',"\n'):
        return '"' + value.replace('"', '""') + '"'
    return value


def _slug(title: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in title.lower()).strip("_")


def write_report(tables: Sequence[Table], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.md").write_text(render_markdown(tables), encoding="utf-8")
    for t in tables:
        (out_dir / f"{_slug(t.title)}.csv").write_text(render_csv(t), encoding="utf-8")


def render_report(records_dir: str | Path, title: str = "accuracy summary") -> Table:
    """Re-render a summary from record files alone; never re-executes SQL."""
    records_dir = Path(records_dir)
    files = sorted(records_dir.glob("records_*.jsonl"))
    if not files:
        raise HarnessError(f"no record files under {records_dir}")
    by_condition = {f.stem.replace("records_", "", 1): load_records(f) for f in files}
    standard = by_condition.get(STANDARD_CONDITION, [])
    std_acc = _try_accuracy(standard_accuracy, standard) if standard else None
    rows = []
    for condition in sorted(by_condition):
        recs = by_condition[condition]
        if not recs:
            rows.append((condition, "no data", "no data", "no data"))
            continue
        acc = _try_accuracy(perturbation_accuracy, recs)
        if condition == STANDARD_CONDITION:
            rows.append((condition, fmt_pct(acc), fmt_pct(acc), fmt_delta(acc, acc)))
        else:
            robust = _try_robust(standard, recs)
            rows.append((condition, fmt_pct(acc), fmt_pct(robust), fmt_delta(acc, std_acc)))
    return Table(
        title=title,
        columns=("Condition", "Acc.", "Robust Acc.", "Δ vs Std."),
        rows=tuple(rows),
    )


def _try_accuracy(fn, records) -> float | None:
    try:
        return fn(records)
    except UndefinedMetricError:
        return None


def _try_robust(standard, perturbed) -> float | None:
    try:
        return robust_accuracy(standard, perturbed)
    except UndefinedMetricError:
        return None


def _mean_or_none(values: list[float | None]) -> float | None:
    if not values or any(v is None for v in values):
        return None
    return sum(values) / len(values)


# --- shared run scaffolding -------------------------------------------------------


class RunContext:
    """Everything a protocol needs: corpus, schema text, gateway, eval sets."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dataset: Dataset = load_dataset(cfg.dataset_path)
        self.schema: Schema = load_schema(cfg.schema_path, cfg.prompt.rows_limit)
        self.schema_text = serialize_schema(self.schema, cfg.prompt.rows_limit)
        self.gateway = Gateway(cfg.gateway)
        self.test = self.dataset.split("test")
        self.train = self.dataset.split("train")

    def standard_targets(self) -> list[tuple[str, str, str]]:
        return [(ex.id, ex.nl, ex.gold_sql) for ex in self.test]

    def eval_set(self, kind: PerturbationKind) -> RobustnessEvalSet:
        if not self.cfg.eval_sets_dir:
            raise ConfigError("eval_sets_dir not configured")
        path = Path(self.cfg.eval_sets_dir) / f"{kind.value}.jsonl"
        if not path.is_file():
            raise HarnessError(f"missing eval set for {kind.value}: {path}")
        return load_eval_set(path)

    def perturbed_targets(self, kind: PerturbationKind) -> list[tuple[str, str, str]]:
        return [(e[0], e[1], e[2]) for e in self.eval_set(kind).entries]

    def adv_demo_texts(self, kind: PerturbationKind) -> dict[str, str]:
        """Train-side perturbed texts keyed by example id."""
        if not self.cfg.adv_demos_dir:
            raise ConfigError("adv_demos_dir not configured")
        path = Path(self.cfg.adv_demos_dir) / f"{kind.value}.jsonl"
        if not path.is_file():
            raise HarnessError(f"missing adversarial demo pool for {kind.value}: {path}")
        return {e[0]: e[1] for e in load_eval_set(path).entries}


def _run_conditions(
    ctx: RunContext,
    demos: DemoSet,
    out_dir: Path,
) -> dict[str, list[EvalRecord]]:
    """Evaluate standard plus every configured perturbed set under `demos`."""
    out_dir.mkdir(parents=True, exist_ok=True)
    by_condition: dict[str, list[EvalRecord]] = {}
    conditions = [(STANDARD_CONDITION, ctx.standard_targets())] + [
        (kind.value, ctx.perturbed_targets(kind)) for kind in ctx.cfg.kinds
    ]
    for condition, targets in conditions:
        records = evaluate_targets(
            ctx.gateway,
            ctx.schema.db_path,
            ctx.schema_text,
            ctx.cfg.prompt,
            demos,
            targets,
            condition,
            ctx.cfg.exec_timeout_s,
        )
        save_records(records, out_dir / f"records_{condition}.jsonl")
        by_condition[condition] = records
    return by_condition


def _write_manifest(
    cfg: ExperimentConfig,
    ctx: "RunContext",
    out_dir: Path,
    rq: str,
    started: float,
    extra: dict | None = None,
):
    manifest = {
        "protocol": rq,
        "seed": cfg.seed,
        "dataset_path": cfg.dataset_path,
        "schema_path": cfg.schema_path,
        "kinds": [k.value for k in cfg.kinds],
        "schema_text_sha256": hashlib.sha256(ctx.schema_text.encode("utf-8")).hexdigest(),
        "gateway_requests": ctx.gateway.stats.requests,
        "gateway_cache_hits": ctx.gateway.stats.cache_hits,
        "selection_manifests": sorted(
            str(p.relative_to(out_dir)) for p in out_dir.glob("selection_*.json")
        ),
        "record_files": sorted(
            str(p.relative_to(out_dir)) for p in out_dir.rglob("records_*.jsonl")
        ),
        "record_sha256": {
            str(p.relative_to(out_dir)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out_dir.rglob("records_*.jsonl"))
        },
        "wall_s": round(time.monotonic() - started, 3),
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# --- protocols --------------------------------------------------------------------


def run_rq1(cfg: ExperimentConfig) -> list[Table]:
    """Zero-shot accuracy on the standard set and every perturbed set."""
    started = time.monotonic()
    ctx = RunContext(cfg)
    out_dir = Path(cfg.out_dir) / "rq1"
    by_condition = _run_conditions(ctx, DemoSet(), out_dir)
    standard = by_condition[STANDARD_CONDITION]
    std_acc = _try_accuracy(standard_accuracy, standard)
    rows = []
    for kind in cfg.kinds:
        pert = _try_accuracy(perturbation_accuracy, by_condition[kind.value])
        rows.append(
            (kind.value, fmt_pct(pert), fmt_pct(std_acc), fmt_delta(pert, std_acc))
        )
    tables = [
        Table(
            title="zero-shot robustness",
            columns=("Pert. Strategy", "Pert. Acc.", "Std. Acc.", "Δ"),
            rows=tuple(rows),
        )
    ]
    write_report(tables, out_dir)
    _write_manifest(cfg, ctx, out_dir, "rq1", started)
    return tables


def _summary_rows(
    by_condition: dict[str, list[EvalRecord]], kinds: Sequence[PerturbationKind]
) -> tuple[dict[str, float | None], float | None, float | None, float | None]:
    """Per-kind perturbation accuracy plus the three aggregate scores."""
    standard = by_condition[STANDARD_CONDITION]
    std_acc = _try_accuracy(standard_accuracy, standard)
    pert_by_kind: dict[str, float | None] = {}
    robust_by_kind: list[float | None] = []
    for kind in kinds:
        records = by_condition[kind.value]
        pert_by_kind[kind.value] = _try_accuracy(perturbation_accuracy, records)
        robust_by_kind.append(_try_robust(standard, records))
    avg_pert = _mean_or_none(list(pert_by_kind.values()))
    avg_robust = _mean_or_none(robust_by_kind)
    return pert_by_kind, avg_pert, std_acc, avg_robust


def run_rq2(cfg: ExperimentConfig) -> list[Table]:
    """Shot-count scaling with random sampling; columns per shot count."""
    started = time.monotonic()
    ctx = RunContext(cfg)
    out_dir = Path(cfg.out_dir) / "rq2"
    col_results = {}
    for n in cfg.shots:
        demos = DemoSet(
            standard=tuple(
                run_strategy(
                    SamplingStrategy.RANDOM,
                    ctx.train,
                    n,
                    derive_seed(cfg.seed, f"sample:random:{n}"),
                )
            )
        )
        by_condition = _run_conditions(ctx, demos, out_dir / f"{n}shot")
        col_results[n] = _summary_rows(by_condition, cfg.kinds)
    rows = []
    for kind in cfg.kinds:
        rows.append(
            (kind.value,)
            + tuple(fmt_pct(col_results[n][0][kind.value]) for n in cfg.shots)
        )
    rows.append(("Avg. Pert. Acc.",) + tuple(fmt_pct(col_results[n][1]) for n in cfg.shots))
    rows.append(("Std. Acc.",) + tuple(fmt_pct(col_results[n][2]) for n in cfg.shots))
    rows.append(("Avg. Robust Acc.",) + tuple(fmt_pct(col_results[n][3]) for n in cfg.shots))
    tables = [
        Table(
            title="few-shot scaling",
            columns=("Pert. Strategy",) + tuple(f"{n}-shot" for n in cfg.shots),
            rows=tuple(rows),
        )
    ]
    write_report(tables, out_dir)
    _write_manifest(cfg, ctx, out_dir, "rq2", started)
    return tables


def run_rq3(cfg: ExperimentConfig) -> list[Table]:
    """Adversarial demonstration augmentation vs. size-matched baselines."""
    started = time.monotonic()
    ctx = RunContext(cfg)
    out_dir = Path(cfg.out_dir) / "rq3"
    n = cfg.rq3_shots
    standard_demos = run_strategy(
        SamplingStrategy.RANDOM, ctx.train, n, derive_seed(cfg.seed, f"sample:random:{n}")
    )
    double_demos = run_strategy(
        SamplingStrategy.RANDOM,
        ctx.train,
        min(2 * n, len(ctx.train)),
        derive_seed(cfg.seed, f"sample:random:{min(2 * n, len(ctx.train))}"),
    )
    conditions: list[tuple[str, DemoSet]] = [
        ("No Adv.", DemoSet(standard=tuple(standard_demos))),
        ("No Adv. (x2)", DemoSet(standard=tuple(double_demos))),
    ]
    for kind in cfg.kinds:
        adv_texts = ctx.adv_demo_texts(kind)
        missing = [ex.id for ex in standard_demos if ex.id not in adv_texts]
        if missing:
            raise HarnessError(
                f"adversarial demo pool for {kind.value} lacks ids: {missing[:5]}"
            )
        adversarial = tuple((adv_texts[ex.id], ex.gold_sql) for ex in standard_demos)
        conditions.append(
            (kind.value, DemoSet(standard=tuple(standard_demos), adversarial=adversarial))
        )
    rows = []
    for label, demos in conditions:
        by_condition = _run_conditions(ctx, demos, out_dir / _slug(label))
        _, avg_pert, std_acc, avg_robust = _summary_rows(by_condition, cfg.kinds)
        rows.append((label, fmt_pct(avg_robust), fmt_pct(std_acc)))
    tables = [
        Table(
            title="adversarial demonstrations",
            columns=("Adv. Strategy", "Avg. Robust Acc.", "Std. Acc."),
            rows=tuple(rows),
        )
    ]
    write_report(tables, out_dir)
    _write_manifest(cfg, ctx, out_dir, "rq3", started)
    return tables


def run_rq4(cfg: ExperimentConfig) -> list[Table]:
    """Demonstration-selection strategies plus diversity of the chosen NLs."""
    started = time.monotonic()
    ctx = RunContext(cfg)
    out_dir = Path(cfg.out_dir) / "rq4"
    out_dir.mkdir(parents=True, exist_ok=True)
    n = cfg.rq4_shots
    acc_rows = {"Avg. Robust Acc.": {}, "Avg. Pert. Acc.": {}, "Std. Acc.": {}}
    div_rows = {"TTR": {}, "Yule's I": {}, "MTLD": {}}
    failures: dict[str, str] = {}
    for strategy in cfg.strategies:
        try:
            seed_purpose = (
                f"sample:random:{n}"
                if strategy is SamplingStrategy.RANDOM
                else f"sample:{strategy.value}:{n}"
            )
            selected = run_strategy(
                strategy,
                ctx.train,
                n,
                derive_seed(cfg.seed, seed_purpose),
                gateway=ctx.gateway,
                schema=ctx.schema,
                prompt_cfg=ctx.cfg.prompt,
            )
            write_selection_manifest(
                out_dir / f"selection_{strategy.value}.json",
                strategy,
                n,
                cfg.seed,
                selected,
            )
            demos = DemoSet(standard=tuple(selected))
            by_condition = _run_conditions(
                ctx, demos, out_dir / strategy.value.lower()
            )
            _, avg_pert, std_acc, avg_robust = _summary_rows(by_condition, cfg.kinds)
            acc_rows["Avg. Robust Acc."][strategy.value] = fmt_pct(avg_robust)
            acc_rows["Avg. Pert. Acc."][strategy.value] = fmt_pct(avg_pert)
            acc_rows["Std. Acc."][strategy.value] = fmt_pct(std_acc)
            scores = diversity_report([ex.nl for ex in selected])
            div_rows["TTR"][strategy.value] = f"{100 * scores.ttr:.2f}"
            div_rows["Yule's I"][strategy.value] = (
                "inf" if scores.yules_i == float("inf") else f"{100 * scores.yules_i:.2f}"
            )
            div_rows["MTLD"][strategy.value] = f"{scores.mtld:.2f}"
        except HarnessError as exc:
            failures[strategy.value] = str(exc)
            for bucket in (*acc_rows.values(), *div_rows.values()):
                bucket[strategy.value] = "error"
    strategy_names = tuple(s.value for s in cfg.strategies)
    tables = [
        Table(
            title="sampling strategies",
            columns=("Metric",) + strategy_names,
            rows=tuple(
                (metric,) + tuple(values[s] for s in strategy_names)
                for metric, values in acc_rows.items()
            ),
        ),
        Table(
            title="selected demonstration diversity",
            columns=("LC. Metric",) + strategy_names,
            rows=tuple(
                (metric,) + tuple(values[s] for s in strategy_names)
                for metric, values in div_rows.items()
            ),
        ),
    ]
    write_report(tables, out_dir)
    _write_manifest(cfg, ctx, out_dir, "rq4", started, extra={"strategy_errors": failures})
    return tables
