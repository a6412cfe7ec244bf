"""Multi-seed experiment runner, aggregation and CSV/JSON persistence."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .agents import DivergenceError, FixedActionAgent, PsrlAgent, QuantileAgent, RandomAgent, agent_act
from .config import RunConfig
from .envs import Transition, make_env

log = logging.getLogger(__name__)

RAW_COLUMNS = ["suite", "env", "agent", "seed", "step", "window_visit_freq"]
AGG_COLUMNS = ["suite", "env", "agent", "step", "mean", "stderr", "num_seeds"]


@dataclass
class MetricSeries:
    """Trailing-window visitation frequency of the most desired state.

    ``freqs[i]`` covers steps ``i .. i + window - 1`` (0-based) and is reported
    at ``steps[i] = i + window``, the number of interactions completed.
    """

    seed: int
    env: str
    agent: str
    steps: np.ndarray
    freqs: np.ndarray
    diverged: bool = False
    error: str = ""

    def final(self) -> float:
        return float(self.freqs[-1]) if len(self.freqs) else float("nan")


@dataclass
class Aggregate:
    env: str
    agent: str
    steps: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    num_seeds: int


@dataclass
class SweepResult:
    config: RunConfig
    series: list[MetricSeries]
    aggregate: Aggregate
    failed_seeds: list[int] = field(default_factory=list)


def build_env(config: RunConfig):
    e = config.env
    return make_env(e.name, e.n, e.p_forward, e.p_backward, e.mix_alpha, config.gamma)


def build_agent(config: RunConfig, env, rng: np.random.Generator):
    a = config.agent
    if a.name == "psrl_pi":
        return PsrlAgent(
            env.num_states, env.num_actions, env.reward_vector, config.gamma, a.prior_concentration, a.resample_every
        )
    if a.name in ("iqql", "daif"):
        return QuantileAgent(
            a.name,
            env.num_states,
            env.num_actions,
            config.gamma,
            rng,
            hidden_dim=config.hidden_dim,
            lr=a.lr,
            batch_size=a.batch_size,
            updates_per_step=a.updates_per_step,
            quantile_samples=a.quantile_samples,
            daif_offset=a.daif_offset,
        )
    if a.name == "random":
        return RandomAgent(env.num_actions, rng)
    if a.name in ("always_left", "always_right"):
        # RiverSwim indexes actions (-1, +1); Latent lists (+1, 0) first and (-1, 0) second.
        left, right = (0, 1) if config.env.name == "riverswim" else (1, 0)
        return FixedActionAgent(left if a.name == "always_left" else right, a.name)
    raise ValueError(f"unknown agent {a.name!r}")


def trailing_frequency(visits: np.ndarray, window: int) -> np.ndarray:
    c = np.concatenate([[0], np.cumsum(visits, dtype=np.int64)])
    return (c[window:] - c[:-window]) / window


def run_single(config: RunConfig, seed: int, env=None, agent=None) -> MetricSeries:
    """One repetition: warm-up with uniform actions, then the agent's greedy policy.

    ``env`` and ``agent`` may be injected (e.g. scripted agents on hand-built
    chains); otherwise they are built from ``config``.
    """
    env_seq, agent_seq = np.random.SeedSequence(seed).spawn(2)
    env_rng = np.random.default_rng(env_seq)
    agent_rng = np.random.default_rng(agent_seq)
    env = build_env(config) if env is None else env
    agent = build_agent(config, env, agent_rng) if agent is None else agent
    total, warmup, window = config.total_steps, config.warmup_steps, config.window

    visits = np.zeros(total, dtype=np.int8)
    state = env.initial_state
    diverged, error, done = False, "", total
    for t in range(total):
        visits[t] = env.is_desired(state)
        action = agent_act(agent, state, t, warmup, agent_rng, env.num_actions)
        nxt, reward = env.step(state, action, env_rng)
        try:
            agent.observe(Transition(state, action, reward, nxt), t, warmup, agent_rng)
        except DivergenceError as exc:
            diverged, error, done = True, str(exc), t + 1
            log.warning("seed %s diverged at step %d: %s", seed, t, exc)
            break
        state = nxt
    freqs = trailing_frequency(visits[:done], window) if done >= window else np.zeros(0)
    steps = np.arange(window, window + len(freqs))
    return MetricSeries(seed, env.name, getattr(agent, "name", config.agent.name), steps, freqs, diverged, error)


def checkpoint_mask(steps: np.ndarray, every: int, total: int) -> np.ndarray:
    return (steps % every == 0) | (steps == total)


def aggregate_series(series: list[MetricSeries], every: int, total: int) -> Aggregate:
    """Mean and standard error (sample std / sqrt(n)) across complete seeds at each checkpoint."""
    complete = [s for s in series if not s.diverged]
    if not complete:
        raise RuntimeError("no seed completed; nothing to aggregate")
    if len(complete) < len(series):
        log.warning("aggregating %d of %d seeds (others diverged)", len(complete), len(series))
    steps = complete[0].steps
    mask = checkpoint_mask(steps, every, total)
    mat = np.stack([s.freqs[mask] for s in complete])
    mean = mat.mean(axis=0)
    if len(complete) > 1:
        stderr = mat.std(axis=0, ddof=1) / np.sqrt(len(complete))
    else:
        stderr = np.zeros_like(mean)
    return Aggregate(complete[0].env, complete[0].agent, steps[mask], mean, stderr, len(complete))


def _run_seed(args):
    config, seed = args
    return run_single(config, seed)


def run_seeds(config: RunConfig, jobs: int = 1) -> list[MetricSeries]:
    tasks = [(config, s) for s in config.seeds]
    if jobs <= 1 or len(tasks) == 1:
        return [_run_seed(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_seed, tasks))


def run_sweep(config: RunConfig, jobs: int = 1, out_dir: str | Path | None = None) -> SweepResult:
    start = time.perf_counter()
    series = run_seeds(config, jobs)
    agg = aggregate_series(series, config.run.checkpoint_every, config.total_steps)
    result = SweepResult(config, series, agg, [s.seed for s in series if s.diverged])
    if out_dir is not None:
        write_outputs(result, out_dir, time.perf_counter() - start)
    return result


def _fmt(x: float) -> str:
    return repr(float(x))


def write_raw_csv(path: Path, suite: str, series: list[MetricSeries], every: int, total: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for s in series:
            mask = checkpoint_mask(s.steps, every, total)
            for step, f in zip(s.steps[mask], s.freqs[mask]):
                w.writerow([suite, s.env, s.agent, s.seed, int(step), _fmt(f)])


def write_aggregate_csv(path: Path, suite: str, aggs: list[Aggregate]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_COLUMNS)
        for a in aggs:
            for step, m, se in zip(a.steps, a.mean, a.stderr):
                w.writerow([suite, a.env, a.agent, int(step), _fmt(m), _fmt(se), a.num_seeds])


def run_metadata(config: RunConfig, seconds: float, **extra) -> dict:
    return {
        "config": config.resolved_dict(),
        "version": version_string(),
        "wall_clock_seconds": seconds,
        **extra,
    }


def version_string() -> str:
    return f"tabular-distrl-{__version__}"


def write_outputs(result: SweepResult, out_dir: str | Path, seconds: float) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    suite = cfg.run.suite
    tag = f"{cfg.env.name}_n{cfg.env.n}_{cfg.agent.name}"
    paths = {
        "raw": out / f"raw_{tag}.csv",
        "aggregate": out / f"aggregate_{tag}.csv",
        "metadata": out / f"metadata_{tag}.json",
    }
    write_raw_csv(paths["raw"], suite, result.series, cfg.run.checkpoint_every, cfg.total_steps)
    write_aggregate_csv(paths["aggregate"], suite, [result.aggregate])
    meta = run_metadata(cfg, seconds, failed_seeds=result.failed_seeds)
    paths["metadata"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths


@dataclass
class HorizonRow:
    n: int
    agent: str
    mean: float
    stderr: float
    num_seeds: int


def horizon_sweep(
    base: RunConfig,
    n_values: list[int] | None = None,
    agents: list[str] | None = None,
    jobs: int = 1,
    out_dir: str | Path | None = None,
) -> list[HorizonRow]:
    """Final-window visitation frequency per (chain length, agent)."""
    import dataclasses

    n_values = list(base.sweep.horizons if n_values is None else n_values)
    agents = list(base.sweep.agents if agents is None else agents)
    rows, aggs, all_series = [], [], []
    start = time.perf_counter()
    for n in n_values:
        for name in agents:
            cfg = base.replace(
                env=dataclasses.replace(base.env, n=n),
                agent=dataclasses.replace(base.agent, name=name),
            )
            result = run_sweep(cfg, jobs)
            agg = result.aggregate
            rows.append(HorizonRow(n, name, float(agg.mean[-1]), float(agg.stderr[-1]), agg.num_seeds))
            aggs.append(agg)
            all_series.append((cfg, result.series))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_horizon_table(out / f"horizon_{base.env.name}.csv", base.run.suite, base.env.name, rows)
        write_aggregate_csv(out / f"aggregate_horizon_{base.env.name}.csv", base.run.suite, aggs)
        with open(out / f"raw_horizon_{base.env.name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n"] + RAW_COLUMNS)
            for cfg, series in all_series:
                for s in series:
                    mask = checkpoint_mask(s.steps, cfg.run.checkpoint_every, cfg.total_steps)
                    for step, f in zip(s.steps[mask], s.freqs[mask]):
                        w.writerow([cfg.env.n, cfg.run.suite, s.env, s.agent, s.seed, int(step), _fmt(f)])
        meta = run_metadata(base, time.perf_counter() - start, horizons=n_values, agents=agents)
        (out / f"metadata_horizon_{base.env.name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return rows


def write_horizon_table(path: Path, suite: str, env: str, rows: list[HorizonRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "env", "n", "agent", "final_mean", "final_stderr", "num_seeds"])
        for r in rows:
            w.writerow([suite, env, r.n, r.agent, _fmt(r.mean), _fmt(r.stderr), r.num_seeds])


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
