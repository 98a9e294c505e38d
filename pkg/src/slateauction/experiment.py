"""Experiment orchestration: serving, comparison tables, latency benchmark.

Offline comparisons serve held-out seeded requests through each mechanism and
judge the result with the ground-truth environment (expected clicks), so the
scorer never grades itself and reruns are byte-identical. Results land as

* ``comparison.csv``  -- one row per mechanism, metric means over repetitions
* ``repetitions.csv`` -- one row per (mechanism, repetition)
* ``manifest.json``   -- config snapshot, seeds, hashes, versions, timestamps

Wall-clock latency is inherently non-reproducible, so the comparison CSV
leaves the RT columns blank unless explicitly requested; the decode-strategy
benchmark writes its own report instead.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ._version import __version__
from .config import ModelConfig, config_from_dict, config_to_dict
from .errors import ConfigError
from .evaluator import load_evaluator
from .generator import load_generator
from .market import MarketEnvironment, assert_feasible
from .mechanisms import NgaMechanism, UgspFixedSlot, audit_ic
from .metrics import OutcomeRecord, compute_metrics

COMPARISON_COLUMNS = (
    "mechanism",
    "rpm",
    "ctr_percent",
    "cvr_percent",
    "psi_percent",
    "reward",
    "rt_ms_median",
    "rt_ms_p99",
    "mean",
    "std",
)

REPETITION_COLUMNS = (
    "mechanism",
    "repetition",
    "seed",
    "rpm",
    "ctr_percent",
    "cvr_percent",
    "reward",
)


def fmt_cell(value):
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6f}"


def write_csv(path, columns, rows):
    """Deterministic CSV: fixed column order, 6-decimal floats, \\n endings."""
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(fmt_cell(row.get(col)) for col in columns))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    columns = lines[0].split(",")
    return columns, [dict(zip(columns, line.split(","))) for line in lines[1:]]


def file_sha256(path):
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to reproduce a run's CSV outputs bit-exactly."""

    config: dict
    seeds: dict
    code_version: str = __version__
    dataset_hashes: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _now():
    return datetime.now(timezone.utc).isoformat()


# -- serving -------------------------------------------------------------------


def serve_expected(mechanism, env, requests, alpha):
    """Serve requests and score them with ground-truth expected outcomes.

    Expected clicks are the true list CTRs, expected conversions are
    ctr * cvr, and the objective is the platform target
    sum(payment * ctr + alpha * ctr * cvr) per request.
    """
    records = []
    for request in requests:
        items, payments = mechanism.run(request)
        assert_feasible(items, request, context=f"{mechanism.name} serve")
        ctr = env.true_list_ctr(items, request)
        cvr = env.true_list_cvr(items, request)
        payments = np.asarray(payments, dtype=np.float64)
        objective = float(np.sum(payments * ctr + alpha * ctr * cvr))
        records.append(
            OutcomeRecord(
                request_id=request.request_id,
                items=list(items),
                clicks=ctr,
                conversions=ctr * cvr,
                payments=payments,
                objective=objective,
            )
        )
    return records


def serve_sampled(mechanism, env, requests):
    """Serve requests with sampled Bernoulli feedback (per-request seeds)."""
    records = []
    for request in requests:
        items, payments = mechanism.run(request)
        assert_feasible(items, request, context=f"{mechanism.name} serve")
        clicks, conversions = env.simulate_feedback(items, request, request.seed)
        records.append(
            OutcomeRecord(
                request_id=request.request_id,
                items=list(items),
                clicks=clicks.astype(np.float64),
                conversions=conversions.astype(np.float64),
                payments=np.asarray(payments, dtype=np.float64),
                objective=float(
                    np.sum(clicks * np.asarray(payments))
                ),
            )
        )
    return records


def build_mechanism(name, cfg, generator_net=None, evaluator_net=None):
    if name == "ugsp-fixed":
        return UgspFixedSlot(alpha=cfg.model.alpha)
    if name == "nga":
        if generator_net is None or evaluator_net is None:
            raise ConfigError(
                "mechanism 'nga' needs trained checkpoints; pass --generator/--evaluator"
            )
        return NgaMechanism(generator_net, evaluator_net, beam_size=cfg.experiment.serve_beam_size)
    raise ConfigError(f"unknown mechanism {name!r}")


# -- experiment ------------------------------------------------------------------


@dataclass
class ExperimentResult:
    rows: list[dict]
    rep_rows: list[dict]
    manifest: RunManifest
    csv_path: Path
    rep_csv_path: Path
    manifest_path: Path


def run_experiment(cfg, outdir, generator_path=None, evaluator_path=None):
    """Serve every configured mechanism over seeded held-out request sets.

    Each repetition r uses the request seed stream (base_seed + r); metrics
    are averaged over repetitions and the spread of the platform objective is
    reported as mean/std. The incentive audit runs once per mechanism on a
    dedicated audit request set.
    """
    cfg.validate()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    started = _now()
    env = MarketEnvironment(cfg.market)
    exp = cfg.experiment

    generator_net = evaluator_net = None
    checkpoints = {}
    if "nga" in exp.mechanisms:
        if not generator_path or not evaluator_path:
            raise ConfigError("experiment includes 'nga'; --generator and --evaluator required")
        generator_net = load_generator(generator_path, ModelConfig)
        evaluator_net = load_evaluator(evaluator_path, ModelConfig)
        checkpoints = {"generator": str(generator_path), "evaluator": str(evaluator_path)}

    rep_seeds = [exp.base_seed + r for r in range(exp.repetitions)]
    audit_seed = exp.base_seed + 500_000
    rows = []
    rep_rows = []
    for name in exp.mechanisms:
        mechanism = build_mechanism(name, cfg, generator_net, evaluator_net)
        per_rep = []
        for r, seed in enumerate(rep_seeds):
            requests = env.sample_requests(seed, exp.eval_requests)
            records = serve_expected(mechanism, env, requests, cfg.model.alpha)
            row = compute_metrics(records, mechanism=name)
            per_rep.append(row)
            rep_rows.append(
                {
                    "mechanism": name,
                    "repetition": r,
                    "seed": seed,
                    "rpm": row.rpm,
                    "ctr_percent": row.ctr_percent,
                    "cvr_percent": row.cvr_percent,
                    "reward": row.reward,
                }
            )
        psi = None
        if exp.audit_requests > 0:
            audit_requests = env.sample_requests(audit_seed, exp.audit_requests)
            report = audit_ic(mechanism, audit_requests, exp.audit_grid, env.model)
            psi = report.psi * 100.0
        objectives = np.array([row.reward for row in per_rep])
        rows.append(
            {
                "mechanism": name,
                "rpm": float(np.mean([row.rpm for row in per_rep])),
                "ctr_percent": float(np.mean([row.ctr_percent for row in per_rep])),
                "cvr_percent": float(np.mean([row.cvr_percent for row in per_rep])),
                "psi_percent": psi,
                "reward": float(np.mean(objectives)),
                "rt_ms_median": None,
                "rt_ms_p99": None,
                "mean": float(np.mean(objectives)),
                "std": float(np.std(objectives)),
            }
        )
    manifest = RunManifest(
        config=config_to_dict(cfg),
        seeds={"repetitions": rep_seeds, "audit": audit_seed},
        dataset_hashes={k: file_sha256(v) for k, v in checkpoints.items()},
        checkpoints=checkpoints,
        started=started,
        finished=_now(),
    )
    csv_path = write_csv(outdir / "comparison.csv", COMPARISON_COLUMNS, rows)
    rep_csv_path = write_csv(outdir / "repetitions.csv", REPETITION_COLUMNS, rep_rows)
    manifest_path = outdir / "manifest.json"
    manifest_path.write_text(manifest.to_json())
    return ExperimentResult(rows, rep_rows, manifest, csv_path, rep_csv_path, manifest_path)


def rerun_from_manifest(manifest_path, outdir):
    """Re-execute a run from its manifest; outputs must be byte-identical."""
    manifest = RunManifest.from_json(Path(manifest_path).read_text())
    cfg = config_from_dict(manifest.config)
    return run_experiment(
        cfg,
        outdir,
        generator_path=manifest.checkpoints.get("generator"),
        evaluator_path=manifest.checkpoints.get("evaluator"),
    )


def export_results(rows, manifest, outdir):
    """Write the comparison CSV (fixed column order) and its manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = write_csv(outdir / "comparison.csv", COMPARISON_COLUMNS, rows)
    manifest_path = outdir / "manifest.json"
    manifest_path.write_text(manifest.to_json())
    return csv_path, manifest_path


# -- latency benchmark --------------------------------------------------------------


def benchmark_latency(generator_net, requests, beam_size=1, warmup=50):
    """Single-pass vs per-slot sequential decoding on identical parameters.

    Both strategies produce feasible slates; the structural claim is the
    scoring-pass count (1 vs k per request), reported alongside wall-clock
    medians/p99s which are measurement-noise prone.
    """
    if not requests:
        raise ConfigError("benchmark needs at least one request")
    k = requests[0].k

    def time_nar(request):
        t0 = time.perf_counter()
        slates, z_values = generator_net.generate(request, beam_size)
        elapsed = time.perf_counter() - t0
        return elapsed, slates[0].items

    def time_seq(request):
        t0 = time.perf_counter()
        items = generator_net.sequential_decode(request)
        elapsed = time.perf_counter() - t0
        return elapsed, items

    for request in requests[: min(warmup, len(requests))]:
        time_nar(request)
        time_seq(request)

    nar_times, seq_times = [], []
    generator_net.reset_counter()
    for request in requests:
        elapsed, items = time_nar(request)
        assert_feasible(items, request, context="single-pass decode")
        nar_times.append(elapsed * 1000.0)
    nar_passes = generator_net.scoring_passes / len(requests)

    generator_net.reset_counter()
    for request in requests:
        elapsed, items = time_seq(request)
        assert_feasible(items, request, context="sequential decode")
        seq_times.append(elapsed * 1000.0)
    seq_passes = generator_net.scoring_passes / len(requests)

    def stats(times):
        arr = np.array(times)
        return {
            "median_ms": float(np.median(arr)),
            "p99_ms": float(np.percentile(arr, 99)),
            "mean_ms": float(np.mean(arr)),
        }

    return {
        "num_requests": len(requests),
        "k": k,
        "beam_size": beam_size,
        "single_pass": {**stats(nar_times), "forward_passes_per_request": nar_passes},
        "sequential": {**stats(seq_times), "forward_passes_per_request": seq_passes},
    }
