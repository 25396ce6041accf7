"""`harness` command line: perturb, curate serve/build, sample, eval, report.

Exit codes: 0 success, 1 configuration problem, 2 runtime failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import curate, runner
from .curate_service import create_app
from .errors import ConfigError, HarnessError
from .llm_gateway import Gateway, LlmParaphraser
from .perturb import PerturbationKind, generate_candidates
from .sampler import SamplingStrategy, run_strategy, write_selection_manifest


def _load(config_path: str, seed: int | None, out: str | None) -> runner.ExperimentConfig:
    cfg = runner.load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out_dir = out
    return cfg


def _parse_kinds(cfg: runner.ExperimentConfig, kinds: str | None) -> list[PerturbationKind]:
    if not kinds:
        return list(cfg.kinds)
    try:
        return [PerturbationKind(k.strip()) for k in kinds.split(",") if k.strip()]
    except ValueError as exc:
        raise ConfigError(f"unknown perturbation kind: {exc}") from exc


@click.group()
def cli():
    """Adversarial-robustness harness for prompt-based text-to-SQL parsers."""


@cli.command("perturb")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--out", type=click.Path(), default=None, help="candidate dump file")
@click.option("--kinds", default=None, help="comma-separated subset of strategies")
@click.option("--n", "n_candidates", type=int, default=None, help="candidates per example")
def perturb_cmd(config_path, seed, out, kinds, n_candidates):
    """Generate raw adversarial candidates for every test example."""
    cfg = _load(config_path, seed, None)
    wanted = _parse_kinds(cfg, kinds)
    n = n_candidates or cfg.candidates_per_example
    default_out = cfg.candidates_path or str(Path(cfg.out_dir) / "candidates.jsonl")
    out_path = Path(out) if out else Path(default_out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    dataset = runner.load_dataset(cfg.dataset_path)
    gateway = Gateway(cfg.gateway)
    paraphraser = LlmParaphraser(gateway)
    total = 0
    with out_path.open("w", encoding="utf-8") as fh:
        for kind in wanted:
            for example in dataset.split("test"):
                result = generate_candidates(
                    example,
                    kind,
                    n=n,
                    seed=runner.derive_seed(cfg.seed, f"perturb:{kind.value}:{example.id}"),
                    mask_client=gateway,
                    paraphrase_client=paraphraser,
                )
                for cand in result.candidates:
                    fh.write(
                        json.dumps(
                            {
                                "original_id": cand.original_id,
                                "kind": cand.kind.value,
                                "text": cand.text,
                                "seed": cand.seed,
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
                    total += 1
                for failure in result.failures:
                    click.echo(
                        f"note: {kind.value}/{example.id} seed {failure.seed}: {failure.error}",
                        err=True,
                    )
    click.echo(f"wrote {total} candidates to {out_path}")


def _ranked_sets(cfg: runner.ExperimentConfig) -> list[curate.CandidateSet]:
    if not cfg.candidates_path:
        raise ConfigError("candidates_path not configured")
    candidates_path = Path(cfg.candidates_path)
    if not candidates_path.is_file():
        raise ConfigError(f"candidates file not found: {candidates_path}")
    dataset = runner.load_dataset(cfg.dataset_path)
    gateway = Gateway(cfg.gateway)
    grouped: dict[tuple[str, PerturbationKind], list] = {}
    from .perturb import PerturbedCandidate

    with candidates_path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            cand = PerturbedCandidate(
                original_id=doc["original_id"],
                kind=PerturbationKind(doc["kind"]),
                text=doc["text"],
                seed=doc["seed"],
            )
            grouped.setdefault((cand.original_id, cand.kind), []).append(cand)
    sets = []
    for (example_id, kind), cands in grouped.items():
        original = dataset.by_id(example_id)
        sets.append(curate.rank_candidates(original, cands, gateway))
    sets.sort(key=lambda cs: cs.id)
    return sets


def _store(cfg: runner.ExperimentConfig) -> curate.AnnotationStore:
    journal = cfg.journal_path or str(Path(cfg.out_dir) / "annotations.jsonl")
    Path(journal).parent.mkdir(parents=True, exist_ok=True)
    return curate.AnnotationStore(_ranked_sets(cfg), journal)


@cli.group("curate")
def curate_group():
    """Rank candidates, review them, and build robustness eval sets."""


@curate_group.command("serve")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8765)
@click.option("--ui-dir", type=click.Path(), default=None, help="built UI bundle to serve")
def curate_serve(config_path, host, port, ui_dir):
    """Serve the review API (and the UI when a bundle is available)."""
    import uvicorn

    cfg = _load(config_path, None, None)
    if ui_dir is None and Path("frontend/dist").is_dir():
        ui_dir = "frontend/dist"
    app = create_app(_store(cfg), ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@curate_group.command("build")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option(
    "--policy",
    type=click.Choice([p.value for p in curate.SelectionPolicy]),
    default=curate.SelectionPolicy.AUTO_FALLBACK.value,
)
@click.option("--out", type=click.Path(), default=None, help="eval-set directory")
def curate_build(config_path, policy, out):
    """Reduce annotations into one eval set per perturbation strategy."""
    cfg = _load(config_path, None, None)
    out_dir = Path(out) if out else Path(cfg.eval_sets_dir or Path(cfg.out_dir) / "evalsets")
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = runner.load_dataset(cfg.dataset_path)
    store = _store(cfg)
    omissions = {}
    for kind in cfg.kinds:
        eval_set, omitted = curate.build_eval_set(
            dataset, kind, store, curate.SelectionPolicy(policy)
        )
        curate.save_eval_set(eval_set, out_dir / f"{kind.value}.jsonl")
        omissions[kind.value] = omitted
        click.echo(f"{kind.value}: {len(eval_set.entries)} entries, {len(omitted)} omitted")
    (out_dir / "omissions.json").write_text(
        json.dumps(omissions, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


@cli.command("sample")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--strategy", required=True, type=click.Choice([s.value for s in SamplingStrategy]))
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None, help="manifest path")
def sample_cmd(config_path, strategy, n, seed, out):
    """Select few-shot demonstrations and write a selection manifest."""
    cfg = _load(config_path, seed, None)
    strat = SamplingStrategy(strategy)
    dataset = runner.load_dataset(cfg.dataset_path)
    schema = runner.load_schema(cfg.schema_path, cfg.prompt.rows_limit)
    gateway = Gateway(cfg.gateway)
    selected = run_strategy(
        strat,
        dataset.split("train"),
        n,
        runner.derive_seed(cfg.seed, f"sample:{'random' if strat is SamplingStrategy.RANDOM else strat.value}:{n}"),
        gateway=gateway,
        schema=schema,
        prompt_cfg=cfg.prompt,
    )
    out_path = Path(out) if out else Path(cfg.out_dir) / f"selection_{strat.value}.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_selection_manifest(out_path, strat, n, cfg.seed, selected)
    click.echo(f"selected {len(selected)} examples -> {out_path}")


@cli.command("eval")
@click.argument("protocol", type=click.Choice(["rq1", "rq2", "rq3", "rq4"]))
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def eval_cmd(protocol, config_path, seed, out):
    """Run one experiment protocol end to end."""
    cfg = _load(config_path, seed, out)
    runs = {
        "rq1": runner.run_rq1,
        "rq2": runner.run_rq2,
        "rq3": runner.run_rq3,
        "rq4": runner.run_rq4,
    }
    tables = runs[protocol](cfg)
    click.echo(runner.render_markdown(tables), nl=False)


@cli.command("report")
@click.option("--records", "records_dir", required=True, type=click.Path())
@click.option("--out", type=click.Path(), default=None)
def report_cmd(records_dir, out):
    """Re-render tables from stored record files without re-executing."""
    table = runner.render_report(records_dir)
    text = runner.render_markdown([table])
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except (click.ClickException, ConfigError) as exc:
        message = exc.format_message() if isinstance(exc, click.ClickException) else str(exc)
        click.echo(f"config error: {message}", err=True)
        return 1
    except HarnessError as exc:
        click.echo(f"runtime error: {exc}", err=True)
        return 2
    except Exception as exc:  # pragma: no cover - last-ditch diagnostics
        click.echo(f"runtime error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
