"""Desk-scale experiments: EMA simulations, decay chains, state tracking,
and toy-model training with analytic gradients.

Every experiment is a pure function of its configuration and a seed:
repeated runs produce byte-identical reports.  Reports serialize to JSON
(default) or CSV with one row per recorded iteration, named
``{experiment}-{seed}.{json,csv}``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ema_engine import EmaConfig, ema_codes, ema_init, ema_read, ema_step
from .optimizers import OptimizerSpec, adam_step, init_slot, preset
from .quantizer import BlockQuantization, quantize_log_dither

__all__ = [
    "ExperimentReport",
    "ToyModel",
    "LognormalSquareSignal",
    "make_linear_regression",
    "make_logistic_regression",
    "make_mlp",
    "finite_difference_check",
    "uniform_signal_experiment",
    "decay_experiment",
    "tracking_benchmark",
    "train",
    "beta1_sweep",
    "describe_quantization",
    "CRASH_LOSS_FACTOR",
]

# A run is flagged as crashed (a legitimate reported outcome, not an
# exception) when the loss exceeds this multiple of the initial loss or
# stops being finite.
CRASH_LOSS_FACTOR = 1e6


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


@dataclass
class ExperimentReport:
    """Self-describing result of one seeded experiment run."""

    name: str
    seed: int
    config: dict
    iterations: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "name": self.name,
                "seed": self.seed,
                "config": self.config,
                "iterations": self.iterations,
                "final": self.final,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        rows = [_jsonable(r) for r in self.iterations]
        buf = io.StringIO()
        if rows:
            writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        return buf.getvalue()

    def write(self, directory, formats=("json",)) -> list[Path]:
        """Write {name}-{seed}.{fmt} files into a directory; returns the paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for fmt in formats:
            path = directory / f"{self.name}-{self.seed}.{fmt}"
            payload = self.to_json() if fmt == "json" else self.to_csv()
            path.write_text(payload)
            paths.append(path)
        return paths


def describe_quantization(cfg: BlockQuantization | None) -> dict:
    """Config echo for reports and the CLI."""
    if cfg is None:
        return {"scheme": "fp32"}
    out = {
        "scheme": cfg.scheme.value,
        "bits": cfg.bits,
        "mode": cfg.mode.value,
        "block_size": cfg.block_size,
    }
    if cfg.scheme.is_log:
        out["p_quantile"] = cfg.p_quantile
    return out


# ---------------------------------------------------------------------------
# Toy models
# ---------------------------------------------------------------------------


class ToyModel:
    """A differentiable toy objective over a flat parameter vector.

    Subclasses hold their dataset and implement ``loss``/``grad``; an
    optional index array restricts both to a minibatch.  Analytic
    gradients are validated against central finite differences in the test
    suite.
    """

    kind: str = "toy"

    def __init__(self, params0: np.ndarray):
        self.params0 = np.asarray(params0, dtype=np.float64)

    @property
    def n_params(self) -> int:
        return self.params0.size

    @property
    def n_samples(self) -> int:
        raise NotImplementedError

    def loss(self, w: np.ndarray, idx=None) -> float:
        raise NotImplementedError

    def grad(self, w: np.ndarray, idx=None) -> np.ndarray:
        raise NotImplementedError


class LinearRegressionModel(ToyModel):
    kind = "linear_regression"

    def __init__(self, X, y, reg, params0):
        super().__init__(params0)
        self.X, self.y, self.reg = X, y, reg

    @property
    def n_samples(self):
        return self.X.shape[0]

    def _batch(self, idx):
        return (self.X, self.y) if idx is None else (self.X[idx], self.y[idx])

    def loss(self, w, idx=None):
        X, y = self._batch(idx)
        r = X @ w - y
        return float(0.5 * np.mean(r * r) + 0.5 * self.reg * w @ w)

    def grad(self, w, idx=None):
        X, y = self._batch(idx)
        r = X @ w - y
        return X.T @ r / X.shape[0] + self.reg * w


class LogisticRegressionModel(ToyModel):
    kind = "logistic_regression"

    def __init__(self, X, y, reg, params0):
        super().__init__(params0)
        self.X, self.y, self.reg = X, y, reg  # y in {-1, +1}

    @property
    def n_samples(self):
        return self.X.shape[0]

    def _batch(self, idx):
        return (self.X, self.y) if idx is None else (self.X[idx], self.y[idx])

    def loss(self, w, idx=None):
        X, y = self._batch(idx)
        margins = y * (X @ w)
        # log(1 + exp(-m)) evaluated stably
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * self.reg * w @ w)

    def grad(self, w, idx=None):
        X, y = self._batch(idx)
        margins = y * (X @ w)
        s = 0.5 * (1.0 - np.tanh(0.5 * margins))  # sigmoid(-m), overflow-safe
        return -(X * (y * s)[:, None]).mean(axis=0) + self.reg * w


class OneHiddenMlpModel(ToyModel):
    """Scalar-output regression MLP with one tanh hidden layer."""

    kind = "mlp_1hidden"

    def __init__(self, X, y, hidden, reg, params0):
        super().__init__(params0)
        self.X, self.y, self.hidden, self.reg = X, y, hidden, reg

    @property
    def n_samples(self):
        return self.X.shape[0]

    def _unflatten(self, w):
        d, h = self.X.shape[1], self.hidden
        W1 = w[: h * d].reshape(h, d)
        b1 = w[h * d : h * d + h]
        w2 = w[h * d + h : h * d + 2 * h]
        b2 = w[-1]
        return W1, b1, w2, b2

    def _forward(self, w, X):
        W1, b1, w2, b2 = self._unflatten(w)
        H = np.tanh(X @ W1.T + b1)
        return H @ w2 + b2, H

    def loss(self, w, idx=None):
        X = self.X if idx is None else self.X[idx]
        y = self.y if idx is None else self.y[idx]
        f, _ = self._forward(w, X)
        return float(0.5 * np.mean((f - y) ** 2) + 0.5 * self.reg * w @ w)

    def grad(self, w, idx=None):
        X = self.X if idx is None else self.X[idx]
        y = self.y if idx is None else self.y[idx]
        W1, b1, w2, b2 = self._unflatten(w)
        f, H = self._forward(w, X)
        e = (f - y) / X.shape[0]
        dw2 = H.T @ e
        db2 = e.sum()
        dZ = (e[:, None] * w2[None, :]) * (1.0 - H * H)
        dW1 = dZ.T @ X
        db1 = dZ.sum(axis=0)
        flat = np.concatenate([dW1.ravel(), db1, dw2, [db2]])
        return flat + self.reg * w


def make_linear_regression(seed: int, n: int = 256, d: int = 16,
                           noise: float = 0.1, reg: float = 1e-3) -> LinearRegressionModel:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    w_true = rng.normal(size=d)
    y = X @ w_true + noise * rng.normal(size=n)
    params0 = np.zeros(d)
    return LinearRegressionModel(X, y, reg, params0)


def make_logistic_regression(seed: int, n: int = 256, d: int = 16,
                             margin: float = 1.0, reg: float = 1e-3) -> LogisticRegressionModel:
    """Linearly separable labels with an enforced margin along the teacher direction."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    w_true = rng.normal(size=d)
    w_true /= np.linalg.norm(w_true)
    y = np.sign(X @ w_true)
    y[y == 0] = 1.0
    X = X + (margin * y)[:, None] * w_true[None, :]
    params0 = np.zeros(d)
    return LogisticRegressionModel(X, y, reg, params0)


def make_mlp(seed: int, n: int = 200, d: int = 8, hidden: int = 16,
             noise: float = 0.05, reg: float = 1e-4) -> OneHiddenMlpModel:
    """Regression against a fixed random teacher network of the same shape."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    teacher_W1 = rng.normal(size=(hidden, d)) / math.sqrt(d)
    teacher_w2 = rng.normal(size=hidden) / math.sqrt(hidden)
    y = np.tanh(X @ teacher_W1.T) @ teacher_w2 + noise * rng.normal(size=n)
    params0 = 0.5 * rng.normal(size=hidden * d + 2 * hidden + 1) / math.sqrt(d)
    return OneHiddenMlpModel(X, y, hidden, reg, params0)


def finite_difference_check(model: ToyModel, point, epsilon: float = 1e-6) -> float:
    """Max relative deviation between analytic and central-difference gradients."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    w = np.asarray(point, dtype=np.float64).copy()
    analytic = model.grad(w)
    numeric = np.empty_like(analytic)
    for i in range(w.size):
        w[i] += epsilon
        hi = model.loss(w)
        w[i] -= 2 * epsilon
        lo = model.loss(w)
        w[i] += epsilon
        numeric[i] = (hi - lo) / (2 * epsilon)
    denom = max(float(np.max(np.abs(analytic))), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / denom)


# ---------------------------------------------------------------------------
# EMA experiments
# ---------------------------------------------------------------------------


def uniform_signal_experiment(n: int, beta: float,
                              quantization: BlockQuantization | None,
                              iters: int, seed: int) -> ExperimentReport:
    """EMA over i.i.d. uniform [0, 1] signals, quantized as a single block.

    The initial state is also uniform.  With full precision the state mean
    converges to the signal mean 0.5; coarse nearest-rounding schemes with
    momentum near 1 freeze at their initial quantization instead.  The
    whole tensor is one quantization block on purpose: per-block scaling
    would mask the failure mode this experiment exhibits.
    """
    if n < 1 or iters < 1:
        raise ValueError("n and iters must be >= 1")
    cfg = None if quantization is None else replace(quantization, block_size=n)
    config = EmaConfig(beta, cfg)
    rng = np.random.default_rng(seed)
    state = ema_init(rng.uniform(0.0, 1.0, n), config, rng)
    codes0 = ema_codes(state)
    ever_changed = None if codes0 is None else np.zeros(n, dtype=bool)
    initial_mean = float(np.mean(ema_read(state)))
    records = [{"iteration": 0, "mean": initial_mean}]
    for t in range(1, iters + 1):
        state = ema_step(state, rng.uniform(0.0, 1.0, n), config, rng)
        if ever_changed is not None:
            ever_changed |= ema_codes(state) != codes0
        records.append({"iteration": t, "mean": float(np.mean(ema_read(state)))})
    values = ema_read(state)
    hist, edges = np.histogram(values, bins=10, range=(0.0, 1.0))
    final = {
        "final_mean": float(np.mean(values)),
        "final_std": float(np.std(values)),
        "initial_quantized_mean": initial_mean,
        "fraction_codes_never_changed": (
            None if ever_changed is None else float(1.0 - ever_changed.mean())
        ),
        "histogram_counts": hist.tolist(),
        "histogram_edges": edges.tolist(),
    }
    return ExperimentReport(
        name="uniform-signal",
        seed=seed,
        config={"n": n, "beta": beta, "iters": iters,
                "quantization": describe_quantization(cfg)},
        iterations=records,
        final=final,
    )


def decay_experiment(c: int, s: int, trials: int, seed: int, bits: int = 8) -> float:
    """Mean iterations for a dither-rounded log state to decay s levels under zero signals.

    The state starts at code 0 with fixed scale 1 and base beta^c (so one
    EMA shrink moves the log index by exactly 1/c); each trial counts the
    steps until the code reaches s.  The chain increments with probability
    1/c per step, so the expectation is c * s.
    """
    if min(c, s, trials) < 1:
        raise ValueError("c, s, and trials must be >= 1")
    if s > 2**bits - 2:
        raise ValueError("decay target must stay below the clip code")
    beta = 0.9
    alpha = beta**c
    rng = np.random.default_rng(seed)
    codes = np.zeros(trials, dtype=np.int64)
    iters = np.zeros(trials, dtype=np.int64)
    active = np.ones(trials, dtype=bool)
    cap = 1000 * c * s
    while active.any():
        current = codes[active]
        shrunk = beta * alpha ** current.astype(np.float64)
        xi = rng.uniform(-0.5, 0.5, current.size)
        codes[active] = quantize_log_dither(shrunk, 1.0, alpha, bits, xi)
        iters[active] += 1
        active = codes < s
        if iters.max() > cap:  # pragma: no cover - safety net
            raise RuntimeError("decay chain failed to terminate")
    return float(iters.mean())


@dataclass(frozen=True)
class LognormalSquareSignal:
    """Squared lognormal signals whose per-element scales drift apart.

    A stand-in for squared-gradient streams: non-negative, heavy-tailed,
    and with coordinate magnitudes decaying at rates spread evenly over
    [0, max_decay_rate], the way different layers settle at different
    speeds.  The widening spread is what defeats frozen nearest-rounded
    states: a shared scale drift alone would be absorbed entirely by the
    per-block scale factor.
    """

    n: int = 2048
    sigma: float = 0.3
    max_decay_rate: float = 0.03
    scale0: float = 1.0

    def draw(self, rng: np.random.Generator, t: int) -> np.ndarray:
        rates = np.linspace(0.0, self.max_decay_rate, self.n)
        return (self.scale0 * np.exp(-rates * t) * rng.lognormal(0.0, self.sigma, self.n)) ** 2


def tracking_benchmark(signal: LognormalSquareSignal,
                       schemes: list[tuple[str, BlockQuantization | None]],
                       block_sizes: list[int], steps: int, seed: int,
                       beta: float = 0.999) -> ExperimentReport:
    """Per-step distance between quantized EMA states and the full-precision oracle.

    All scheme/block-size combinations consume the identical signal
    sequence; the reported metric is the mean absolute error of the
    dequantized state against the exact EMA recurrence.
    """
    if not schemes:
        raise ValueError("need at least one scheme")
    root = np.random.SeedSequence(seed)
    signal_rng = np.random.default_rng(root.spawn(1)[0])
    signals = [signal.draw(signal_rng, t) for t in range(steps)]

    oracle = np.zeros(signal.n)
    oracle_trace = []
    for z in signals:
        oracle = beta * oracle + (1.0 - beta) * z
        oracle_trace.append(oracle.copy())

    records = []
    combos = [(label, cfg, bs) for label, cfg in schemes for bs in block_sizes]
    for combo_seed, (label, cfg, bs) in zip(root.spawn(len(combos) + 1)[1:], combos):
        rng = np.random.default_rng(combo_seed)
        run_cfg = None if cfg is None else replace(cfg, block_size=bs)
        config = EmaConfig(beta, run_cfg)
        state = ema_init(np.zeros(signal.n), config, rng)
        for t, z in enumerate(signals):
            state = ema_step(state, z, config, rng)
            mae = float(np.mean(np.abs(ema_read(state) - oracle_trace[t])))
            records.append({"step": t, "scheme": label, "block_size": bs, "mae": mae})
    return ExperimentReport(
        name="tracking",
        seed=seed,
        config={
            "beta": beta,
            "steps": steps,
            "block_sizes": list(block_sizes),
            "signal": {"n": signal.n, "sigma": signal.sigma,
                       "max_decay_rate": signal.max_decay_rate, "scale0": signal.scale0},
            "schemes": {label: describe_quantization(cfg) for label, cfg in schemes},
        },
        iterations=records,
        final={},
    )


# ---------------------------------------------------------------------------
# Toy training
# ---------------------------------------------------------------------------


def train(model: ToyModel, spec: OptimizerSpec, steps: int, seed: int,
          batch_size: int = 32, record_every: int = 10) -> ExperimentReport:
    """Minibatch training with a deterministic schedule derived from the seed.

    Divergence (non-finite loss, or loss above CRASH_LOSS_FACTOR times the
    initial loss) is reported as ``crashed`` in the result rather than
    raised: a crashing configuration is a legitimate experimental outcome.
    """
    batch_rng, opt_rng = (np.random.default_rng(s)
                          for s in np.random.SeedSequence(seed).spawn(2))
    slot = init_slot(model.params0, spec, opt_rng)
    initial_loss = model.loss(slot.weights)
    if not math.isfinite(initial_loss):
        raise ValueError("initial loss must be finite")
    batch_size = min(batch_size, model.n_samples)
    records = [{"step": 0, "loss": initial_loss}]
    crashed = False
    steps_run = 0
    for t in range(1, steps + 1):
        idx = batch_rng.choice(model.n_samples, size=batch_size, replace=False)
        grad = model.grad(slot.weights, idx)
        slot = adam_step(slot, grad, spec, opt_rng)
        steps_run = t
        if t % record_every == 0 or t == steps:
            loss = model.loss(slot.weights)
            records.append({"step": t, "loss": loss})
            if not math.isfinite(loss) or loss > CRASH_LOSS_FACTOR * initial_loss:
                crashed = True
                break
    final_loss = records[-1]["loss"]
    return ExperimentReport(
        name=f"train-{model.kind}",
        seed=seed,
        config={
            "model": model.kind,
            "n_params": model.n_params,
            "n_samples": model.n_samples,
            "steps": steps,
            "batch_size": batch_size,
            "optimizer": {
                "family": spec.family,
                "lr": spec.lr,
                "beta1": spec.beta1,
                "beta2": spec.beta2,
                "epsilon": spec.epsilon,
                "weight_decay": spec.weight_decay,
                "bias_correction": spec.bias_correction,
                "signed_state": describe_quantization(spec.signed_state_cfg),
                "unsigned_state": describe_quantization(spec.unsigned_state_cfg),
            },
        },
        iterations=records,
        final={
            "initial_loss": initial_loss,
            "final_loss": final_loss,
            "crashed": crashed,
            "steps_run": steps_run,
            "final_weights": slot.weights.tolist(),
        },
    )


def beta1_sweep(preset_name: str, betas, steps: int, seed: int,
                base: OptimizerSpec | None = None,
                make_model=make_logistic_regression) -> ExperimentReport:
    """Final training loss of a preset across a grid of first-moment momenta."""
    base = base if base is not None else OptimizerSpec(family="adam", lr=0.01)
    rows = []
    for beta1 in betas:
        spec = replace(preset(preset_name, base), beta1=float(beta1))
        report = train(make_model(seed), spec, steps, seed)
        rows.append({
            "beta1": float(beta1),
            "final_loss": report.final["final_loss"],
            "crashed": report.final["crashed"],
        })
    best = min(rows, key=lambda r: (r["crashed"], r["final_loss"]))
    return ExperimentReport(
        name=f"beta1-sweep-{preset_name}",
        seed=seed,
        config={"preset": preset_name, "steps": steps,
                "betas": [float(b) for b in betas]},
        iterations=rows,
        final={"best_beta1": best["beta1"], "best_final_loss": best["final_loss"]},
    )
