"""Session loop wiring prompt encoding, momentum mixing and the analytic head."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import tensor as T
from ..backbone import Backbone, BackboneConfig, forward_features, init_backbone
from ..errors import ProtocolError
from ..head import AnalyticHead
from ..nka import AlphaState, PromptMemory, compute_mae, dual_forward, mix_prompts, previous_logits, session_commit, update_alpha
from ..spa import PrefixProjector, PromptEncoder, PromptPool, encode_prompts, to_prefixes
from ..tensor import OptimizerState, Tensor, sgd_step
from .config import RunConfig
from .stream import SessionStream, load_stream, make_synthetic_stream

logger = logging.getLogger(__name__)

EVAL_CHUNK = 256


@dataclass
class SessionMetrics:
    session: int
    accuracy: float
    final_alpha: float
    trace: list  # (tau, mae, alpha) per iteration; empty for session 1
    wall_time: float
    mean_loss: float


@dataclass
class RunReport:
    per_session_accuracy: list
    average_accuracy: float
    final_accuracy: float
    alpha_traces: dict
    final_alpha: list
    wall_times: list
    config: dict = field(default_factory=dict)

    def numbers(self) -> dict:
        """Everything except timings (those differ between identical runs)."""
        return {
            "per_session_accuracy": self.per_session_accuracy,
            "average_accuracy": self.average_accuracy,
            "final_accuracy": self.final_accuracy,
            "alpha_traces": self.alpha_traces,
            "final_alpha": self.final_alpha,
        }

    def to_json(self) -> dict:
        return {**self.numbers(), "wall_times": self.wall_times, "config": self.config}


def align_to_stream(cfg: RunConfig, stream: SessionStream) -> RunConfig:
    """Copy of ``cfg`` whose sizes follow the stream (rows per session kept)."""
    cfg = cfg.replace()
    rows = cfg.spa.per_session
    cfg.stream.num_sessions = stream.num_sessions
    cfg.stream.classes_per_session = stream.K
    cfg.stream.input_dim = stream.input_dim
    cfg.backbone.input_dim = stream.input_dim
    if cfg.spa.num_sessions != stream.num_sessions:
        cfg.spa.num_sessions = stream.num_sessions
        cfg.spa.pool_size = rows * stream.num_sessions
    return cfg


class Engine:
    """All mutable state of one class-incremental run."""

    def __init__(self, cfg: RunConfig, stream: SessionStream):
        cfg = align_to_stream(cfg, stream)
        cfg.validate()
        self.cfg = cfg
        self.stream = stream
        seeds = cfg.seeds()
        bcfg = BackboneConfig(**{**cfg.backbone.__dict__, "seed": seeds["backbone"]})
        self.backbone: Backbone = init_backbone(bcfg)
        spa_rng = np.random.default_rng(seeds["spa"])
        s = cfg.spa
        self.pool = PromptPool(s.pool_size, s.num_sessions, s.d, spa_rng, s.init_scale)
        self.encoder = PromptEncoder(s, spa_rng)
        self.projector = PrefixProjector(s.d, spa_rng)
        self.head = AnalyticHead(s.d, cfg.head.proj_dim, seeds["head"], cfg.head.ridge)
        n = cfg.nka
        self.alpha = AlphaState(
            alpha0=n.alpha0, gamma=n.gamma, lam=n.lam, theta_max=n.theta_max, theta_min=n.theta_min,
            sigmoid_center=n.sigmoid_center, sigmoid_scale=n.sigmoid_scale,
        )
        self.memory = PromptMemory()
        self.rng = np.random.default_rng(seeds["shuffle"])
        self.completed = 0

    def trainable(self, t: int) -> list:
        params = self.encoder.parameters() + [self.pool.prompts]
        # The prefix maps are only calibrated in the first session; afterwards
        # stored tokens must map to the same prefixes they produced originally.
        if t == 1:
            params += self.projector.parameters()
        return params

    def features(self, x: np.ndarray, tokens: Tensor) -> np.ndarray:
        out = []
        with T.no_grad():
            prefixes = to_prefixes(tokens, self.projector)
            for i in range(0, len(x), EVAL_CHUNK):
                out.append(forward_features(self.backbone, x[i:i + EVAL_CHUNK], prefixes).data)
        return np.concatenate(out) if out else np.zeros((0, self.cfg.spa.d))

    def evaluate(self, t: int) -> float:
        x, y = self.stream.test_set(t)
        logits = self.head.logits(self.features(x, self.memory.prev_tokens))
        return float(np.mean(np.argmax(logits, axis=1) == y))


def run_session(t: int, stream: SessionStream, engine: Engine) -> SessionMetrics:
    """Train prompts on session ``t``, update the head, commit, evaluate."""
    if t != engine.completed + 1:
        raise ProtocolError(f"session {t} requested after {engine.completed} completed sessions")
    cfg = engine.cfg
    start = time.perf_counter()
    K = stream.K
    data = stream.session(t)
    local_y = data.train_y - K * (t - 1)
    engine.pool.set_session(t)
    engine.head.reserve(K)
    engine.alpha.reset()
    fixed = cfg.nka.mode == "fixed"

    d = cfg.spa.d
    probe_w = Tensor(np.zeros((d, K)), requires_grad=True, name="probe_w")
    probe_b = Tensor(np.zeros(K), requires_grad=True, name="probe_b")
    params = engine.trainable(t) + [probe_w, probe_b]
    opt = OptimizerState(base_lr=cfg.base_lr, min_lr=cfg.min_lr, total_epochs=cfg.epochs, momentum=cfg.momentum)

    l_prev_all = None
    if t >= 2:
        # Stored tokens, prefix maps and head are frozen for the session.
        l_prev_all = np.concatenate([
            previous_logits(engine.backbone, engine.head, data.train_x[i:i + EVAL_CHUNK], engine.memory, engine.projector)
            for i in range(0, len(data.train_x), EVAL_CHUNK)
        ])

    trace, losses = [], []
    n = len(data.train_x)
    for epoch in range(cfg.epochs):
        order = engine.rng.permutation(n)
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            x = data.train_x[idx]
            T.zero_grad(params)
            curr = encode_prompts(engine.pool, engine.encoder, t).tokens
            if t == 1:
                engine.memory.mem_tokens = curr
                feats = forward_features(engine.backbone, x, to_prefixes(curr, engine.projector))
                mae = None
            else:
                out = dual_forward(
                    engine.backbone, engine.head, x, engine.memory, curr, engine.alpha.alpha,
                    engine.projector, l_prev=l_prev_all[idx],
                )
                feats = out.features
                mae = compute_mae(out.l_t.data, out.l_prev, engine.alpha.lam, K, t)
            loss = T.cross_entropy(feats @ probe_w + probe_b, local_y[idx])
            T.backward(loss)
            engine.pool.mask_grad()
            sgd_step(opt, params)
            losses.append(loss.item())
            if mae is not None:
                if fixed:
                    engine.alpha.tau += 1
                else:
                    update_alpha(engine.alpha, mae)
                trace.append((engine.alpha.tau, mae, engine.alpha.alpha))
        opt.next_epoch()

    with T.no_grad():
        curr = encode_prompts(engine.pool, engine.encoder, t).tokens
        if t == 1:
            engine.memory.mem_tokens = Tensor(curr.data.copy())
        else:
            mix_prompts(engine.memory, curr, engine.alpha.alpha)
    final_alpha = engine.alpha.alpha if t >= 2 else float("nan")

    engine.head.update(engine.features(data.train_x, engine.memory.mem_tokens), data.train_y)
    session_commit(engine.memory, engine.alpha)
    engine.completed = t
    acc = engine.evaluate(t)
    wall = time.perf_counter() - start
    logger.info("session %d: acc=%.4f alpha=%.4f loss=%.4f (%.1fs)", t, acc, final_alpha, np.mean(losses), wall)
    return SessionMetrics(t, acc, final_alpha, trace, wall, float(np.mean(losses)))


def build_stream(cfg: RunConfig) -> SessionStream:
    s = cfg.stream
    if s.path:
        return load_stream(s.path)
    return make_synthetic_stream(
        num_sessions=s.num_sessions, K=s.classes_per_session, samples_per_class=s.samples_per_class,
        input_dim=s.input_dim, cluster_spread=s.cluster_spread, seed=cfg.seeds()["stream"],
    )


def run_experiment(cfg: RunConfig, stream: Optional[SessionStream] = None, engine_hook=None) -> RunReport:
    """Run every session of the stream and return (and optionally write) the report."""
    stream = stream if stream is not None else build_stream(cfg)
    engine = Engine(cfg, stream)
    metrics = []
    for t in range(1, stream.num_sessions + 1):
        metrics.append(run_session(t, stream, engine))
        if engine_hook is not None:
            engine_hook(t, engine)
    accs = [m.accuracy for m in metrics]
    report = RunReport(
        per_session_accuracy=accs,
        average_accuracy=float(sum(accs) / len(accs)),
        final_accuracy=accs[-1],
        alpha_traces={m.session: m.trace for m in metrics if m.session >= 2},
        final_alpha=[m.final_alpha for m in metrics],
        wall_times=[m.wall_time for m in metrics],
        config=cfg.to_dict(),
    )
    if cfg.output_dir:
        write_report(report, cfg.output_dir)
    return report


def write_report(report: RunReport, output_dir) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_json()
    payload["alpha_traces"] = {str(k): v for k, v in report.alpha_traces.items()}
    payload["final_alpha"] = [None if np.isnan(a) else a for a in report.final_alpha]
    (out / "report.json").write_text(json.dumps(payload, indent=2))
    with open(out / "accuracy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["session", "accuracy"])
        for t, acc in enumerate(report.per_session_accuracy, start=1):
            w.writerow([t, repr(acc)])
    for t, trace in report.alpha_traces.items():
        with open(out / f"alpha_trace_s{t}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "mae", "alpha"])
            for tau, mae, alpha in trace:
                w.writerow([tau, repr(mae), repr(alpha)])
    return out


def ablation_fixed_alpha(cfg: RunConfig, alpha_values, seeds=None, workers: int = 1) -> list:
    """Paired fixed-alpha vs NKA runs; one row per (mode, alpha).

    With several seeds each row averages the metrics over them.
    """
    seeds = [cfg.seed] if seeds is None else list(seeds)
    jobs = []
    for a in alpha_values:
        for mode in ("fixed", "nka"):
            for s in seeds:
                c = cfg.replace(seed=s, output_dir=None)
                c.nka.mode = mode
                c.nka.alpha0 = float(a)
                jobs.append((mode, float(a), s, c))

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda j: run_experiment(j[3]), jobs))
    else:
        reports = [run_experiment(j[3]) for j in jobs]

    rows = []
    for a in alpha_values:
        for mode in ("fixed", "nka"):
            sel = [r for (m, al, _, _), r in zip(jobs, reports) if m == mode and al == float(a)]
            rows.append({
                "mode": mode,
                "alpha": float(a),
                "average_accuracy": float(np.mean([r.average_accuracy for r in sel])),
                "final_accuracy": float(np.mean([r.final_accuracy for r in sel])),
                "per_seed_average": [r.average_accuracy for r in sel],
            })
    return rows
