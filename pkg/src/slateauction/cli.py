"""Command-line pipeline driver.

Subcommands: gen-data, train-evaluator, train-generator, serve, audit, bench,
report, generate, evaluate. One JSON config file (see config.py) governs a
full pipeline; ``--outdir`` defaults to the SLATEAUCTION_OUTDIR environment
variable. Exit codes: 0 ok, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from ._version import __version__
from . import figures
from .config import ModelConfig, load_config
from .errors import ConfigError
from .evaluator import EvaluatorNetwork, load_evaluator, save_evaluator, select_winner
from .experiment import (
    benchmark_latency,
    read_csv,
    rerun_from_manifest,
    run_experiment,
    write_csv,
)
from .generator import GeneratorNetwork, beam_generate, load_generator, save_generator
from .market import (
    MarketEnvironment,
    PageRequest,
    generate_log_dataset,
    read_log,
    write_log,
)
from .mechanisms import NgaMechanism, UgspFixedSlot, audit_ic, audit_ir
from .metrics import compute_metrics
from .training import (
    EvaluatorTrainReport,
    GeneratorTrainReport,
    requests_from_records,
    train_evaluator,
    train_generator,
)


def _outdir_option():
    return click.option(
        "--outdir",
        envvar="SLATEAUCTION_OUTDIR",
        default=".",
        show_default=True,
        help="Output directory (env: SLATEAUCTION_OUTDIR).",
    )


def _ensure_outdir(outdir):
    path = Path(outdir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_nets(cfg, generator_path, evaluator_path):
    gen = load_generator(generator_path, ModelConfig) if generator_path else None
    ev = load_evaluator(evaluator_path, ModelConfig) if evaluator_path else None
    return gen, ev


def _fresh_generator(cfg):
    return GeneratorNetwork(cfg.market.feature_dim, cfg.market.slots, cfg.model)


def _fresh_evaluator(cfg):
    return EvaluatorNetwork(cfg.market.feature_dim, cfg.market.slots, cfg.model)


def _build_mechanism(name, cfg, generator_path, evaluator_path):
    if name == "ugsp-fixed":
        return UgspFixedSlot(alpha=cfg.model.alpha)
    if name == "nga":
        if not generator_path or not evaluator_path:
            raise ConfigError("mechanism 'nga' requires --generator and --evaluator checkpoints")
        gen, ev = _load_nets(cfg, generator_path, evaluator_path)
        return NgaMechanism(gen, ev, beam_size=cfg.experiment.serve_beam_size)
    raise ConfigError(f"unknown mechanism {name!r}")


@click.group()
@click.version_option(version=__version__)
def cli():
    """Generative slate auction pipeline."""


@cli.command("gen-data")
@click.option("--config", "config_path", required=True, type=click.Path())
@_outdir_option()
@click.option("--out", "out_name", default="log.jsonl", show_default=True)
def gen_data_cmd(config_path, outdir, out_name):
    """Generate a logged impression dataset with the exploration policy."""
    cfg = load_config(config_path)
    outdir = _ensure_outdir(outdir)
    env = MarketEnvironment(cfg.market)
    policy = UgspFixedSlot(alpha=cfg.model.alpha)
    records = generate_log_dataset(
        env,
        policy.run,
        cfg.logging.num_requests,
        cfg.logging.seed,
        epsilon=cfg.logging.epsilon,
    )
    out = outdir / out_name
    write_log(out, records, dataclasses.asdict(cfg.market))
    clicked = sum(1 for r in records if r.clicked)
    click.echo(f"wrote {len(records)} records ({clicked} with clicks) to {out}")


@cli.command("train-evaluator")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--log", "log_path", required=True, type=click.Path())
@_outdir_option()
@click.option("--out", "out_name", default="evaluator.json", show_default=True)
@click.option("--report", "report_name", default="evaluator_training.csv", show_default=True)
def train_evaluator_cmd(config_path, log_path, outdir, out_name, report_name):
    """Stage 1: fit the slate scorer on logged feedback."""
    cfg = load_config(config_path)
    outdir = _ensure_outdir(outdir)
    _, records = read_log(log_path)
    if not records:
        raise ConfigError(f"log {log_path} holds no records")
    gen_net = _fresh_generator(cfg)
    eval_net = _fresh_evaluator(cfg)
    report = train_evaluator(records, gen_net, eval_net, cfg.train_evaluator)
    ckpt = outdir / out_name
    save_evaluator(eval_net, ckpt)
    csv_path = write_csv(outdir / report_name, EvaluatorTrainReport.COLUMNS, report.epochs)
    fig_path = figures.evaluator_training_figure(report.epochs, csv_path.with_suffix(".png"))
    click.echo(f"checkpoint: {ckpt}")
    click.echo(f"report: {csv_path} (+ {fig_path.name})")
    if report.pre_regret is not None:
        click.echo(
            f"mean slate regret: {report.pre_regret:.6f} -> {report.post_regret:.6f}"
        )
    last = report.epochs[-1]
    click.echo(
        f"final losses: pctr={last['loss_pctr']:.4f} pcvr={last['loss_pcvr']:.4f} "
        f"holdout_pctr={last['holdout_pctr']:.4f}"
    )


@cli.command("train-generator")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--log", "log_path", required=True, type=click.Path())
@click.option("--evaluator", "evaluator_path", required=True, type=click.Path())
@_outdir_option()
@click.option("--out", "out_name", default="generator.json", show_default=True)
@click.option("--report", "report_name", default="generator_training.csv", show_default=True)
def train_generator_cmd(config_path, log_path, evaluator_path, outdir, out_name, report_name):
    """Stage 2: policy-gradient training of the allocator vs the frozen scorer."""
    cfg = load_config(config_path)
    outdir = _ensure_outdir(outdir)
    _, records = read_log(log_path)
    eval_net = load_evaluator(evaluator_path, ModelConfig)
    eval_net.freeze()
    gen_net = _fresh_generator(cfg)
    report = train_generator(requests_from_records(records), gen_net, eval_net, cfg.train_generator)
    ckpt = outdir / out_name
    save_generator(gen_net, ckpt)
    csv_path = write_csv(outdir / report_name, GeneratorTrainReport.COLUMNS, report.epochs)
    fig_path = figures.generator_training_figure(report.epochs, csv_path.with_suffix(".png"))
    click.echo(f"checkpoint: {ckpt}")
    click.echo(f"report: {csv_path} (+ {fig_path.name})")
    click.echo(
        "mean winner reward: "
        f"{report.epochs[0]['mean_winner_reward']:.4f} -> "
        f"{report.epochs[-1]['mean_winner_reward']:.4f}"
    )


@cli.command("serve")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--mechanism", default="nga", show_default=True)
@click.option("--generator", "generator_path", type=click.Path())
@click.option("--evaluator", "evaluator_path", type=click.Path())
@click.option("--requests", "num_requests", default=100, show_default=True)
@click.option("--seed", default=4242, show_default=True)
@click.option("--mode", type=click.Choice(["expected", "sampled"]), default="expected", show_default=True)
@_outdir_option()
@click.option("--out", "out_name", default="outcomes.jsonl", show_default=True)
def serve_cmd(config_path, mechanism, generator_path, evaluator_path, num_requests, seed, mode, outdir, out_name):
    """Serve held-out requests through one mechanism; write an outcome log."""
    from .experiment import serve_expected, serve_sampled

    cfg = load_config(config_path)
    outdir = _ensure_outdir(outdir)
    env = MarketEnvironment(cfg.market)
    mech = _build_mechanism(mechanism, cfg, generator_path, evaluator_path)
    requests = env.sample_requests(seed, num_requests)
    if mode == "expected":
        records = serve_expected(mech, env, requests, cfg.model.alpha)
    else:
        records = serve_sampled(mech, env, requests)
    out = outdir / out_name
    with out.open("w") as fh:
        fh.write(json.dumps({"schema": "slateauction-outcomes", "version": 1, "mechanism": mechanism, "mode": mode}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    row = compute_metrics(records, mechanism=mechanism)
    click.echo(f"wrote {len(records)} outcomes to {out}")
    click.echo(
        f"rpm={row.rpm:.4f} ctr={row.ctr_percent:.4f}% cvr={row.cvr_percent:.4f}% "
        f"mean_objective={row.reward:.4f}"
    )


@cli.command("audit")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--mechanism", default="nga", show_default=True)
@click.option("--generator", "generator_path", type=click.Path())
@click.option("--evaluator", "evaluator_path", type=click.Path())
@click.option("--requests", "num_requests", default=50, show_default=True)
@click.option("--seed", default=5151, show_default=True)
@click.option("--grid", "grid_spec", default=None, help="Comma-separated multipliers; default: config audit grid.")
@_outdir_option()
@click.option("--out", "out_name", default="audit.json", show_default=True)
def audit_cmd(config_path, mechanism, generator_path, evaluator_path, num_requests, seed, grid_spec, outdir, out_name):
    """IC/IR audit of a mechanism over a misreport grid."""
    cfg = load_config(config_path)
    outdir = _ensure_outdir(outdir)
    env = MarketEnvironment(cfg.market)
    mech = _build_mechanism(mechanism, cfg, generator_path, evaluator_path)
    if grid_spec:
        try:
            grid = [float(x) for x in grid_spec.split(",")]
        except ValueError as e:
            raise ConfigError(f"bad --grid {grid_spec!r}: {e}") from e
    else:
        grid = cfg.experiment.audit_grid
    requests = env.sample_requests(seed, num_requests)
    report = audit_ic(mech, requests, grid, env.model)
    violations = audit_ir(mech, requests)
    doc = {
        "mechanism": mechanism,
        "psi": report.psi,
        "psi_percent": report.psi * 100.0,
        "excluded_terms": report.excluded,
        "ir_violations": violations,
        "regret": report.to_dict(),
    }
    out = outdir / out_name
    out.write_text(json.dumps(doc, indent=2))
    click.echo(f"psi={report.psi * 100.0:.4f}% ir_violations={len(violations)} -> {out}")


@cli.command("bench")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--generator", "generator_path", type=click.Path())
@click.option("--requests", "num_requests", default=100, show_default=True)
@click.option("--seed", default=6262, show_default=True)
@click.option("--beam-size", default=1, show_default=True)
@_outdir_option()
@click.option("--out", "out_name", default="bench.json", show_default=True)
def bench_cmd(config_path, generator_path, num_requests, seed, beam_size, outdir, out_name):
    """Latency benchmark: single scoring pass vs per-slot sequential decoding."""
    cfg = load_config(config_path)
    outdir = _ensure_outdir(outdir)
    env = MarketEnvironment(cfg.market)
    gen_net = (
        load_generator(generator_path, ModelConfig) if generator_path else _fresh_generator(cfg)
    )
    requests = env.sample_requests(seed, num_requests)
    report = benchmark_latency(gen_net, requests, beam_size=beam_size)
    out = outdir / out_name
    out.write_text(json.dumps(report, indent=2))
    fig_path = figures.latency_figure(report, out.with_suffix(".png"))
    sp, sq = report["single_pass"], report["sequential"]
    click.echo(
        f"single-pass: median={sp['median_ms']:.3f}ms passes={sp['forward_passes_per_request']:.0f} | "
        f"sequential: median={sq['median_ms']:.3f}ms passes={sq['forward_passes_per_request']:.0f}"
    )
    click.echo(f"report: {out} (+ {fig_path.name})")


@cli.command("report")
@click.option("--config", "config_path", type=click.Path())
@click.option("--generator", "generator_path", type=click.Path())
@click.option("--evaluator", "evaluator_path", type=click.Path())
@click.option("--from-manifest", "manifest_path", type=click.Path(), help="Rerun a previous run bit-exactly.")
@_outdir_option()
def report_cmd(config_path, generator_path, evaluator_path, manifest_path, outdir):
    """Run the mechanism comparison; write CSVs, manifest, and figures."""
    outdir = _ensure_outdir(outdir)
    if manifest_path:
        result = rerun_from_manifest(manifest_path, outdir)
    else:
        if not config_path:
            raise ConfigError("report needs --config (or --from-manifest)")
        cfg = load_config(config_path)
        result = run_experiment(cfg, outdir, generator_path, evaluator_path)
    fig_path = figures.comparison_figure(result.rows, Path(outdir) / "comparison.png")
    click.echo(f"comparison: {result.csv_path} (+ {fig_path.name})")
    click.echo(f"manifest: {result.manifest_path}")
    for row in result.rows:
        psi = f"{row['psi_percent']:.3f}%" if row["psi_percent"] is not None else "n/a"
        click.echo(
            f"  {row['mechanism']}: rpm={row['rpm']:.4f} ctr={row['ctr_percent']:.3f}% "
            f"cvr={row['cvr_percent']:.3f}% psi={psi} objective={row['mean']:.4f}±{row['std']:.4f}"
        )


@cli.command("generate")
@click.option("--request", "request_path", required=True, type=click.Path())
@click.option("--generator", "generator_path", required=True, type=click.Path())
@click.option("--beam-size", default=20, show_default=True)
def generate_cmd(request_path, generator_path, beam_size):
    """Decode slates for one request JSON; print them with log-probabilities."""
    request = PageRequest.from_dict(json.loads(Path(request_path).read_text()))
    gen_net = load_generator(generator_path, ModelConfig)
    slates, z_values = gen_net.generate(request, beam_size)
    doc = {
        "request_id": request.request_id,
        "slates": [
            {"items": s.items, "log_prob": s.log_prob, "indices": s.indices} for s in slates
        ],
    }
    click.echo(json.dumps(doc, indent=2))


@cli.command("evaluate")
@click.option("--request", "request_path", required=True, type=click.Path())
@click.option("--slates", "slates_path", required=True, type=click.Path())
@click.option("--evaluator", "evaluator_path", required=True, type=click.Path())
@click.option("--generator", "generator_path", type=click.Path(), help="Score slate allocation probabilities with this allocator (else uniform).")
def evaluate_cmd(request_path, slates_path, evaluator_path, generator_path):
    """Score candidate slates; print per-slate rewards and the winner."""
    from .generator import BeamSlate
    import slateauction.diffcore as dc

    request = PageRequest.from_dict(json.loads(Path(request_path).read_text()))
    eval_net = load_evaluator(evaluator_path, ModelConfig)
    raw = json.loads(Path(slates_path).read_text())
    item_lists = raw["slates"] if isinstance(raw, dict) else raw
    slates = []
    for entry in item_lists:
        items = entry["items"] if isinstance(entry, dict) else entry
        indices = [request.index_of(cid) for cid in items]
        slates.append(BeamSlate(items=list(items), indices=indices, log_prob=0.0))
    if generator_path:
        gen_net = load_generator(generator_path, ModelConfig)
        with dc.no_grad():
            z_values = gen_net.allocation_matrix(request).data
    else:
        z_values = np.full((request.n_candidates, request.k), 1.0 / request.n_candidates)
    pos, winner, rewards = select_winner(eval_net, request, slates, z_values)
    doc = {
        "request_id": request.request_id,
        "rewards": rewards.tolist(),
        "winner_index": pos,
        "winner": winner.to_dict(),
    }
    click.echo(json.dumps(doc, indent=2))


def main(argv=None):
    """Entry point with the documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.Abort:
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        return 1
    except Exception as e:  # runtime failure
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
