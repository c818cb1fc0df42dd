"""CLI harness: stream ingestion, synthetic generators, metrics, baselines.

Input streams are CSV files with exactly d finite decimals per line (no
weight column). Generators are specified as "name:key=val,key=val", e.g.
"gauss:k=3,d=2,sep=50,sigma=1,n=20000". Metrics are written as a CSV with a
fixed, versioned header; a JSON summary (final centers, costs, budget
ledger) is written next to it.

Exit codes: 0 success, 2 config validation failure, 3 input error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._rng import child_rng
from .geometry import approx_cluster, cost
from .pipeline import Pipeline, PipelineConfig, finalize_centers

METRICS_HEADER = (
    "t,num_centers,epoch,live_raw_points,release_size,"
    "released_cost,baseline_cost,eps_spent,wall_micros_per_update"
)
METRICS_VERSION = 1


class ConfigError(ValueError):
    pass


class InputError(ValueError):
    pass


@dataclass
class RunConfig:
    k: int = 2
    d: int = 2
    z: int = 2
    radius: float = 128.0
    horizon: int = 0  # 0 -> length of the input stream
    epsilon: float = 1.0
    epsilon1: float = 0.0
    delta1: float = 1e-6
    gamma: float = 0.2
    theta: float = 1.0 / 8.0
    gamma_h: float = 0.25
    block_size: int = 0
    cm: float = 100.0
    seed: int = 0
    noise_off: bool = False
    report_every: int = 1000
    input_path: str = ""
    generator: str = ""
    output: str = "metrics.csv"
    timing: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        checks = [
            (self.k >= 1, "k >= 1"),
            (self.d >= 1, "d >= 1"),
            (self.z in (1, 2), "z in {1,2}"),
            (self.radius > 0, "radius > 0"),
            (0 < self.gamma < 0.5, "0 < gamma < 0.5"),
            (0 < self.theta < 1, "0 < theta < 1"),
            (0 < self.gamma_h < 0.5, "0 < gamma_h < 0.5"),
            (self.epsilon > 0, "epsilon > 0"),
            (self.report_every >= 1, "report_every >= 1"),
        ]
        for ok, name in checks:
            if not ok:
                raise ConfigError(f"config violates: {name}")


def parse_generator_spec(spec: str) -> tuple[str, dict]:
    if ":" in spec:
        name, _, rest = spec.partition(":")
    else:
        name, rest = spec, ""
    params: dict = {}
    if rest:
        for pair in rest.split(","):
            key, _, val = pair.partition("=")
            if not key or not val:
                raise ConfigError(f"bad generator parameter {pair!r}")
            try:
                params[key] = float(val) if "." in val or "e" in val else int(val)
            except ValueError as exc:
                raise ConfigError(f"bad generator value {pair!r}") from exc
    return name, params


def generate_stream(spec: str, radius: float, seed: int) -> np.ndarray:
    """Synthesize a stream from a generator spec, inside the radius ball."""
    name, params = parse_generator_spec(spec)
    rng = child_rng(seed, "generator", spec)
    if name == "gauss":
        k = int(params.get("k", 3))
        d = int(params.get("d", 2))
        sep = float(params.get("sep", 50.0))
        sigma = float(params.get("sigma", 1.0))
        n = int(params.get("n", 10000))
        means = _separated_means(k, d, sep, radius - 6.0 * sigma, rng)
        labels = rng.integers(0, k, size=n)
        pts = means[labels] + rng.normal(0.0, sigma, size=(n, d))
        return _clip_ball(pts, radius)
    if name == "uniform":
        d = int(params.get("d", 2))
        n = int(params.get("n", 10000))
        scale = float(params.get("scale", radius))
        raw = rng.normal(size=(n, d))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        radii = rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / d) * min(scale, radius)
        return raw * radii
    raise ConfigError(f"unknown generator {name!r}")


def _separated_means(k, d, sep, max_norm, rng) -> np.ndarray:
    if max_norm <= 0:
        raise ConfigError("radius too small for generator sigma")
    means = []
    attempts = 0
    while len(means) < k:
        attempts += 1
        if attempts > 10000:
            raise ConfigError("cannot place separated means; lower sep or raise radius")
        cand = rng.uniform(-max_norm / math.sqrt(d), max_norm / math.sqrt(d), size=d)
        if all(np.linalg.norm(cand - m) >= sep for m in means):
            means.append(cand)
    return np.vstack(means)


def _clip_ball(pts: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(pts, axis=1)
    over = norms > radius
    if np.any(over):
        pts[over] *= (radius / norms[over])[:, None]
    return pts


def read_stream(path: str, d: int, radius: float) -> np.ndarray:
    """Parse a CSV point stream; abort with the offending line number."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d:
                raise InputError(
                    f"line {lineno}: expected {d} values, got {len(parts)}"
                )
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise InputError(f"line {lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputError(f"line {lineno}: non-finite value")
            if math.sqrt(sum(v * v for v in vals)) > radius:
                raise InputError(f"line {lineno}: point norm exceeds radius {radius}")
            rows.append(vals)
    if not rows:
        return np.empty((0, d))
    return np.asarray(rows, dtype=float)


def baseline_kmeanspp(
    stream: np.ndarray, k: int, z: int = 2, seed: int = 0
) -> tuple[np.ndarray, float]:
    """Non-private batch comparator over the full stream."""
    rng = child_rng(seed, "baseline")
    centers = approx_cluster(stream, None, k, z=z, seed=rng, lloyd_iters=20)
    return centers, cost(centers, stream, None, z)


def _fmt(x: float) -> str:
    if x != x:  # NaN
        return "nan"
    return format(float(x), ".10g")


def run_stream(config: RunConfig, stream: np.ndarray | None = None) -> dict:
    """Drive the pipeline over a stream; write metrics CSV and summary JSON.

    Returns the summary dict. Raises ConfigError / InputError for bad setup
    or input; the CLI maps those to exit codes 2 and 3.
    """
    config.validate()
    if stream is None:
        if config.generator:
            stream = generate_stream(config.generator, config.radius, config.seed)
        elif config.input_path:
            stream = read_stream(config.input_path, config.d, config.radius)
        else:
            raise ConfigError("either --input or --generator is required")
    n = len(stream)
    horizon = config.horizon if config.horizon > 0 else max(n, 1)
    if n > horizon:
        raise InputError(f"stream length {n} exceeds horizon {horizon}")

    pcfg = PipelineConfig(
        k=config.k,
        dim=config.d,
        radius=config.radius,
        horizon=horizon,
        epsilon=config.epsilon,
        epsilon1=config.epsilon1,
        delta1=config.delta1,
        gamma=config.gamma,
        z=config.z,
        theta=config.theta,
        gamma_h=config.gamma_h,
        block_size=config.block_size,
        cm=config.cm,
        seed=config.seed,
        noise_off=config.noise_off,
    )
    pipe = Pipeline(pcfg)

    report_ticks = []
    snapshots = []  # (t, |F|, epoch, live_raw, release copy, micros)
    t0 = time.perf_counter()
    last_wall = t0
    for i in range(n):
        release = pipe.update(stream[i])
        t = i + 1
        if t % config.report_every == 0 or t == n:
            now = time.perf_counter()
            span = max(t % config.report_every, config.report_every)
            micros = (now - last_wall) / span * 1e6 if config.timing else 0.0
            last_wall = now
            report_ticks.append(t)
            snapshots.append(
                (
                    t,
                    len(pipe.bicriteria.solution),
                    pipe.epoch,
                    pipe.live_raw_points(),
                    Semirelease(release.points.copy(), release.weights.copy()),
                    micros,
                )
            )
    wall_total = time.perf_counter() - t0

    eps_spend = pipe.budget_spend()
    eps_total = eps_spend.get("eps", 0.0) + eps_spend.get("eps1", 0.0)

    baseline_centers = None
    baseline_total = 0.0
    if n > 0:
        baseline_centers, baseline_total = baseline_kmeanspp(
            stream, config.k, config.z, config.seed
        )

    lines = [METRICS_HEADER]
    for t, num_f, epoch, raw, rel, micros in snapshots:
        prefix = stream[:t]
        if len(rel.points):
            fin = approx_cluster(
                rel.points, rel.weights, config.k, z=config.z,
                seed=child_rng(config.seed, "finalize", t), lloyd_iters=20,
            )
            released_cost = cost(fin, prefix, None, config.z)
        else:
            released_cost = float("nan")
        base_cost = (
            cost(baseline_centers, prefix, None, config.z)
            if baseline_centers is not None
            else float("nan")
        )
        lines.append(
            ",".join(
                [
                    str(t),
                    str(num_f),
                    str(epoch),
                    str(raw),
                    str(len(rel.points)),
                    _fmt(released_cost),
                    _fmt(base_cost),
                    _fmt(eps_total),
                    _fmt(micros),
                ]
            )
        )
    with open(config.output, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")

    release = pipe.release()
    final_centers = []
    final_cost = float("nan")
    if n > 0 and len(release):
        fin = finalize_centers(
            release, config.k, config.z, child_rng(config.seed, "finalize-final")
        )
        final_centers = fin.tolist()
        final_cost = cost(fin, stream, None, config.z)

    summary = {
        "metrics_version": METRICS_VERSION,
        "ticks": n,
        "epochs": pipe.epoch,
        "num_centers": len(pipe.bicriteria.solution),
        "release_size": len(release),
        "final_centers": final_centers,
        "final_cost": final_cost,
        "baseline_cost": baseline_total if n > 0 else 0.0,
        "budget": {k: float(v) for k, v in pipe.budget_spend().items()},
        "budget_closed": pipe.check_budget_closed(),
        "peak_raw_points": pipe.peak_raw_points,
        "raw_point_bound": pipe.raw_point_bound(),
        "wall_seconds": wall_total if config.timing else 0.0,
    }
    with open(summary_path(config.output), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


class Semirelease:
    __slots__ = ("points", "weights")

    def __init__(self, points, weights):
        self.points = points
        self.weights = weights


def summary_path(output: str) -> str:
    return output + ".summary.json"


def build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="corestream",
        description="Private streaming k-clustering driver",
    )
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--z", type=int, default=2, choices=(1, 2))
    p.add_argument("--lambda", dest="radius", type=float, default=128.0,
                   help="radius bound on the input ball")
    p.add_argument("--horizon", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--epsilon1", type=float, default=0.0)
    p.add_argument("--delta1", type=float, default=1e-6)
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--theta", type=float, default=1.0 / 8.0)
    p.add_argument("--gamma-h", dest="gamma_h", type=float, default=0.25)
    p.add_argument("--block-size", dest="block_size", type=int, default=0)
    p.add_argument("--cm", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-off", dest="noise_off", action="store_true")
    p.add_argument("--report-every", dest="report_every", type=int, default=1000)
    p.add_argument("--input", dest="input_path", default="")
    p.add_argument("--generator", default="")
    p.add_argument("--output", default="metrics.csv")
    p.add_argument("--timing", action="store_true",
                   help="record real wall-clock in metrics (breaks byte reproducibility)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    config = RunConfig(
        k=args.k, d=args.d, z=args.z, radius=args.radius, horizon=args.horizon,
        epsilon=args.epsilon, epsilon1=args.epsilon1, delta1=args.delta1,
        gamma=args.gamma, theta=args.theta, gamma_h=args.gamma_h,
        block_size=args.block_size, cm=args.cm, seed=args.seed,
        noise_off=args.noise_off, report_every=args.report_every,
        input_path=args.input_path, generator=args.generator,
        output=args.output, timing=args.timing,
    )
    try:
        summary = run_stream(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({k: summary[k] for k in
                      ("ticks", "epochs", "num_centers", "release_size",
                       "final_cost", "baseline_cost", "budget")},
                     sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
