"""Command-line entry point: generate, train, infer, evaluate, serve.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Usage problems are
printed to standard error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import hints
from .datagen import (
    GeneratorConfig,
    corpus_config,
    default_global_pool,
    read_corpus,
    read_table,
    write_corpus,
)
from .evaluation import ExperimentSpec, run_experiment
from .infer import run_inference
from .nn import ConditionedRegressor, ModelConfig
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_model
from .vocab import default_vocabulary


def _load_json(path: str) -> dict:
    with open(path) as f:
        return json.load(f)


@click.group()
def cli() -> None:
    """Conditioned symbolic-regression toolkit."""


@cli.command()
@click.option("--config", "config_path", required=True, help="generator config (JSON)")
@click.option("--out", "out_dir", required=True, help="corpus output directory")
@click.option("--shards", type=int, default=1, show_default=True)
@click.option("--samples-per-shard", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
def generate(config_path: str, out_dir: str, shards: int, samples_per_shard: int,
             seed: int) -> None:
    """Write a sharded training corpus with privileged annotations."""
    cfg = GeneratorConfig.from_dict(_load_json(config_path))
    index = write_corpus(
        out_dir, cfg, shards, samples_per_shard, seed,
        progress=lambda done, total: click.echo(f"shard {done}/{total}", err=True),
    )
    click.echo(json.dumps({"out": out_dir, "shards": len(index["shards"])}))


@cli.command()
@click.option("--config", "config_path", required=True,
              help="JSON with optional 'model' and 'train' sections")
@click.option("--corpus", "corpus_dir", required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--baseline", is_flag=True, help="train without the hypothesis encoder")
def train(config_path: str, corpus_dir: str, out_dir: str, baseline: bool) -> None:
    """Train a model; metrics stream to stdout as line-delimited JSON."""
    raw = _load_json(config_path)
    vocab = default_vocabulary()
    model_kw = dict(raw.get("model", {}))
    model_kw["vocab_size"] = len(vocab.tokens)
    if baseline:
        model_kw["use_symbolic"] = False
    mcfg = ModelConfig(**model_kw)
    tcfg = TrainConfig(**raw.get("train", {}))
    samples = read_corpus(corpus_dir)
    model = ConditionedRegressor(mcfg, vocab, seed=tcfg.seed)
    record = train_model(
        model, samples, vocab, tcfg, out_dir=out_dir,
        progress=lambda rec: click.echo(json.dumps(rec)),
    )
    ckpt = Path(out_dir) / "model.ckpt"
    save_checkpoint(ckpt, model, extra={"train_config": tcfg.to_dict(),
                                        "final": record})
    click.echo(json.dumps({"checkpoint": str(ckpt), **record}))


def _parse_constants(text: str) -> list[tuple[int, float]]:
    pairs = []
    for chunk in filter(None, (p.strip() for p in text.split(","))):
        index, _, value = chunk.partition("=")
        pairs.append((int(index), float(value)))
    return pairs


@cli.command()
@click.option("--model", "model_path", required=True)
@click.option("--data", "data_path", required=True, help="CSV with header x1..xd,y")
@click.option("--hypotheses", "hypotheses_path", default=None,
              help="file holding one conditioning-grammar line")
@click.option("--constants", "constants_text", default="",
              help="pointer payload as comma-separated i=value pairs")
@click.option("--beam", type=int, default=5, show_default=True)
@click.option("--explore", type=int, default=0, show_default=True,
              help="random-hypothesis count N (0 = plain decode)")
@click.option("--selection", type=click.Choice(["fit-loss", "holdout-r2"]),
              default="fit-loss", show_default=True)
@click.option("--restarts", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def infer(model_path: str, data_path: str, hypotheses_path: str | None,
          constants_text: str, beam: int, explore: int, selection: str,
          restarts: int, seed: int) -> None:
    """Decode candidates for a dataset; one JSON line per candidate."""
    model = load_checkpoint(model_path)
    obs, dropped_rows = read_table(data_path)
    if dropped_rows:
        click.echo(f"dropped {dropped_rows} unusable rows", err=True)
    conditioning = None
    if hypotheses_path is not None:
        text = Path(hypotheses_path).read_text().strip()
        if text:
            conditioning = hints.parse_hypotheses(
                text, _parse_constants(constants_text))
    outcome = run_inference(
        model, model.vocab, obs, conditioning=conditioning, beam=beam,
        explore_n=explore, mode=selection, seed=seed, restarts=restarts,
    )
    for cand in outcome.candidates:
        record = cand.to_dict()
        record["prefix"] = " ".join(cand.tokens)
        click.echo(json.dumps(record))
    click.echo(
        f"decoded {len(outcome.candidates)} candidates "
        f"(dropped {outcome.dropped}) in {outcome.elapsed_s:.2f}s",
        err=True,
    )


@cli.command()
@click.option("--spec", "spec_path", required=True, help="sweep definition (JSON)")
@click.option("--model", "model_path", required=True)
@click.option("--baseline", "baseline_path", default=None)
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="render PNG figures next to results.csv")
def evaluate(spec_path: str, model_path: str, baseline_path: str | None,
             figures: bool) -> None:
    """Run a sweep; writes results.csv, manifest.json, and figures."""
    spec = ExperimentSpec(**_load_json(spec_path))
    model = load_checkpoint(model_path)
    baseline = load_checkpoint(baseline_path) if baseline_path else None
    samples = read_corpus(spec.dataset)
    corpus_index = _load_json(str(Path(spec.dataset) / "index.json"))
    pool = default_global_pool(corpus_config(spec.dataset), corpus_index["seed"])
    rows, manifest = run_experiment(
        spec, model, model.vocab, samples, baseline=baseline, global_pool=pool,
        progress=lambda message: click.echo(message, err=True),
    )
    results_csv = Path(spec.out_dir) / "results.csv"
    if figures:
        from .report import render_report

        for png in render_report(results_csv):
            click.echo(f"figure {png}", err=True)
    click.echo(json.dumps({"results": str(results_csv), "rows": len(rows),
                           "failures": manifest.get("failures", {})}))


@cli.command()
@click.option("--model", "model_path", required=True)
@click.option("--port", type=int, default=None, help="default 8321; HINTSR_PORT overrides")
@click.option("--max-beam", type=int, default=64, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(model_path: str, port: int | None, max_beam: int, host: str) -> None:
    """Serve the inference API over HTTP."""
    from .service import run_server

    run_server(model_path, port=port, max_beam=max_beam, host=host)


def cli_dispatch(argv: list[str]) -> int:
    """Route argv; 0 on success, 1 on usage error, 2 on runtime failure."""
    try:
        cli.main(args=list(argv), prog_name="hintsr", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 2
    except (KeyboardInterrupt, BrokenPipeError):
        return 2
    except Exception as exc:  # runtime failures keep a stable exit code
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
