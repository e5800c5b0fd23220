"""
Workload processor and predictor.

Parses machine-usage traces, fits the utilization -> request-rate profiler
MLP, trains the GRU utilization forecaster and turns a trace into the
per-tick arrival schedule that drives the simulator.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from cluster_model import ClusterState, machine_utilization
from config import (
    DEFAULT_SEED, CONTROL_INTERVAL, RESOURCES,
    PROFILER_LAYERS, PROFILER_EPOCHS, PROFILER_LR, PROFILER_BATCH_SIZE, PROFILER_MIN_SAMPLES,
    PROFILE_REQUESTS_PER_CASE, PREDICTOR_HIDDEN, PREDICTOR_WINDOW, PREDICTOR_EPOCHS,
    PREDICTOR_LR, PREDICTOR_BATCH_SIZE, PREDICTOR_VALIDATION_FRACTION, PREDICTION_HORIZONS,
    SYNTHETIC_PEAK_LOAD, SURGE_EVERY, SURGE_FACTOR, SURGE_HOLD, SURGE_RISE, SURGE_DECAY,
)
from neural import (
    AdamState, DenseNet, GRUCell, backward, forward, gru_backward, gru_forward,
    load_checkpoint, save_checkpoint,
)
from simulator import RateSchedule, SimConfig, saturation_rate, step

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("timestamp_s", "machine_id", "cpu_util", "mem_util")


class WorkloadError(Exception):
    """Base error for trace handling and workload models."""

    def __init__(self, message: str, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.original_error = original_error


class TraceParseError(WorkloadError):
    """Malformed trace rows; line_numbers are 1-based file lines (header is line 1)."""

    def __init__(self, message: str, line_numbers: list[int], original_error: Optional[Exception] = None):
        super().__init__(message, original_error)
        self.line_numbers = line_numbers


class EmptyTraceError(WorkloadError):
    pass


class TraceTooShortError(WorkloadError):
    pass


class WindowLengthError(WorkloadError):
    pass


# Traces

@dataclass
class WorkloadTrace:
    frame: pd.DataFrame  # TRACE_COLUMNS, sorted by timestamp

    def __len__(self) -> int:
        return len(self.frame)

    def series(self) -> np.ndarray:
        """Cluster-mean (cpu, mem) utilization per timestamp, shape (T, 2)."""
        grouped = self.frame.groupby("timestamp_s", sort=True)[["cpu_util", "mem_util"]].mean()
        return grouped.to_numpy(dtype=np.float64)

    @classmethod
    def from_series(cls, series, interval_s: float = 300.0, machine_id: str = "m0") -> "WorkloadTrace":
        values = np.asarray(series, dtype=np.float64).reshape(-1, 2)
        frame = pd.DataFrame({
            "timestamp_s": np.arange(len(values)) * interval_s,
            "machine_id": machine_id,
            "cpu_util": values[:, 0],
            "mem_util": values[:, 1],
        })
        return cls(frame)


def parse_trace(path: str) -> WorkloadTrace:
    """Read a trace CSV, reject bad rows by line number, sort by timestamp."""
    try:
        frame = pd.read_csv(path, dtype={"machine_id": str})
    except FileNotFoundError as e:
        raise WorkloadError(f"Trace file not found: {path}", original_error=e) from e
    except pd.errors.EmptyDataError as e:
        raise EmptyTraceError(f"Trace file is empty: {path}", original_error=e) from e
    except pd.errors.ParserError as e:
        raise TraceParseError(f"Could not parse trace {path}: {e}", [], original_error=e) from e

    missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
    if missing:
        raise TraceParseError(f"Trace {path} is missing columns {missing}", [1])
    if frame.empty:
        raise EmptyTraceError(f"Trace file has no records: {path}")

    frame = frame[list(TRACE_COLUMNS)].copy()
    for column in ("timestamp_s", "cpu_util", "mem_util"):
        frame[column] = pd.to_numeric(frame[column], errors="coerce")
    bad = frame[list(TRACE_COLUMNS)].isna().any(axis=1)
    for column in ("cpu_util", "mem_util"):
        bad |= (frame[column] < 0.0) | (frame[column] > 1.0)
    if bad.any():
        line_numbers = [int(i) + 2 for i in frame.index[bad]]
        raise TraceParseError(
            f"Trace {path} has {len(line_numbers)} invalid row(s) at lines {line_numbers[:10]}",
            line_numbers,
        )

    frame = frame.sort_values("timestamp_s", kind="mergesort").reset_index(drop=True)
    logger.info(f"Parsed {len(frame)} trace records from {path}")
    return WorkloadTrace(frame)


# Profiler

@dataclass
class ProfilerModel:
    net: DenseNet
    target_scale: float  # requests/s represented by a network output of 1
    final_loss: float = float("nan")
    zero_variance: bool = False

    def __call__(self, inputs) -> np.ndarray:
        out, _ = forward(self.net, np.asarray(inputs, dtype=np.float64))
        return out * self.target_scale


def fit_profiler(
    samples,
    epochs: int = PROFILER_EPOCHS,
    lr: float = PROFILER_LR,
    seed: int = DEFAULT_SEED,
    layers=PROFILER_LAYERS,
    batch_size: int = PROFILER_BATCH_SIZE,
) -> ProfilerModel:
    """Mini-batch gradient descent on MSE for (cpu_util, mem_util, rate) samples."""
    data = np.asarray(samples, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 3:
        raise WorkloadError(f"Profiler samples must be (n, 3), got {data.shape}")
    if len(data) < PROFILER_MIN_SAMPLES:
        raise WorkloadError(
            f"Profiler needs at least {PROFILER_MIN_SAMPLES} samples, got {len(data)}"
        )
    x, y = data[:, :2], data[:, 2:]
    scale = max(float(np.abs(y).max()), 1.0)
    y_scaled = y / scale

    zero_variance = bool(np.var(y) == 0.0)
    if zero_variance:
        logger.warning("Profiler targets have zero variance; the model will fit a constant")

    rng = np.random.default_rng(seed)
    activations = ["relu"] * (len(layers) - 2) + ["identity"]
    net = DenseNet.build(list(layers), activations, rng=rng)

    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            out, cache = forward(net, x[idx])
            diff = out - y_scaled[idx]
            grads = backward(net, cache, 2.0 * diff / diff.size)
            net.apply_gradients(grads, None, lr)

    out, _ = forward(net, x)
    final_loss = float(np.mean((out * scale - y) ** 2))
    logger.debug(f"Profiler fitted: {epochs} epochs, training MSE {final_loss:.4f}")
    return ProfilerModel(net=net, target_scale=scale, final_loss=final_loss,
                         zero_variance=zero_variance)


def util_to_requests(model: ProfilerModel, cpu_util: float, mem_util: float) -> float:
    rate = float(model(np.array([cpu_util, mem_util]))[0])
    return max(rate, 0.0)


def cluster_busy_utilization(state: ClusterState) -> float:
    """Fraction of the allocated CPU that was busy in the last tick."""
    allocated = sum(d.replicas * d.cpu_per_replica for d in state.deployments)
    if allocated == 0:
        return 0.0
    busy = sum(state.busy.get(d.id, 0.0) * d.replicas * d.cpu_per_replica for d in state.deployments)
    return busy / allocated


def default_profile_rates(state: ClusterState, cases: int = 24) -> np.ndarray:
    """Request rates from light load to 20% past the first saturating deployment."""
    bottleneck = saturation_rate(state)
    return np.linspace(bottleneck * 0.05, bottleneck * 1.2, cases)


def profile_simulator(
    state: ClusterState,
    rates,
    config: SimConfig = None,
    requests_per_case: int = PROFILE_REQUESTS_PER_CASE,
    seed: int = DEFAULT_SEED,
) -> np.ndarray:
    """
    Sweep request rates against a fixed cluster and record
    (cpu busy utilization, mem utilization, observed request rate).

    Each test case runs long enough to see about requests_per_case requests.
    """
    config = config or SimConfig()
    mem_util = float(machine_utilization(state)[RESOURCES.index("mem")].mean())
    samples = []
    for i, rate in enumerate(rates):
        if rate <= 0:
            continue
        ticks = max(1, math.ceil(requests_per_case / (rate * config.tick)))
        rng = np.random.default_rng([seed, i])
        current = state
        arrivals = 0
        busy = []
        for t in range(ticks):
            result = step(current, {}, float(rate), config, rng, tick_index=t)
            current = result.state
            arrivals += result.record.arrivals
            busy.append(cluster_busy_utilization(current))
        samples.append((float(np.mean(busy)), mem_util, arrivals / (ticks * config.tick)))
    logger.info(f"Profiled {len(samples)} request-rate cases")
    return np.array(samples, dtype=np.float64).reshape(-1, 3)


# Predictor

@dataclass
class PredictorModel:
    cell: GRUCell
    readout: DenseNet  # hidden -> 2
    window: int
    horizon: int
    lo: np.ndarray  # per-resource min over the training split
    hi: np.ndarray
    train_mse: float = float("nan")
    validation_mse: float = float("nan")

    @property
    def span(self) -> np.ndarray:
        s = self.hi - self.lo
        return np.where(s > 0, s, 1.0)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.lo) / self.span

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.span + self.lo

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        """(N, W, 2) raw windows -> (N, 2) clipped forecasts."""
        seq = np.transpose(self.normalize(np.asarray(windows, dtype=np.float64)), (1, 0, 2))
        h, _ = gru_forward(self.cell, seq)
        out, _ = forward(self.readout, h)
        return np.clip(self.denormalize(out), 0.0, 1.0)

    def predict(self, window) -> tuple[float, float]:
        return predict(self, window)

    def parameter_count(self) -> int:
        return self.cell.parameter_count() + self.readout.parameter_count()


@dataclass(frozen=True)
class PredictionError:
    cpu: float
    mem: float
    mean: float


def _as_series(trace_or_series) -> np.ndarray:
    if isinstance(trace_or_series, WorkloadTrace):
        return trace_or_series.series()
    series = np.asarray(trace_or_series, dtype=np.float64)
    if series.ndim != 2 or series.shape[1] != 2:
        raise WorkloadError(f"Utilization series must be (T, 2), got {series.shape}")
    return series


def _windows(series: np.ndarray, window: int, horizon: int, targets: np.ndarray):
    """Stack input windows ending horizon steps before each target index."""
    starts = targets - window - horizon + 1
    x = np.stack([series[s:s + window] for s in starts])
    return x, series[targets]


def train_predictor(
    trace,
    window: int = PREDICTOR_WINDOW,
    horizon: int = 1,
    epochs: int = PREDICTOR_EPOCHS,
    lr: float = PREDICTOR_LR,
    seed: int = DEFAULT_SEED,
    hidden: int = PREDICTOR_HIDDEN,
    batch_size: int = PREDICTOR_BATCH_SIZE,
    validation_fraction: float = PREDICTOR_VALIDATION_FRACTION,
) -> PredictorModel:
    """
    Fit the GRU forecaster on sliding windows.

    The split is chronological: targets before the split index train, the
    rest validate, and every training window ends before the split.
    Normalization bounds come from the training part only.
    """
    series = _as_series(trace)
    T = len(series)
    if T <= window + horizon:
        raise TraceTooShortError(
            f"Trace has {T} intervals; window {window} and horizon {horizon} "
            f"need at least {window + horizon + 1}"
        )
    first_target = window + horizon - 1
    split = min(max(int(T * (1.0 - validation_fraction)), first_target + 1), T)
    train_targets = np.arange(first_target, split)
    valid_targets = np.arange(max(split, first_target), T)

    rng = np.random.default_rng(seed)
    cell = GRUCell(2, hidden, rng=rng)
    readout = DenseNet.build([hidden, 2], ["identity"], rng=rng)
    model = PredictorModel(
        cell=cell, readout=readout, window=window, horizon=horizon,
        lo=series[:split].min(axis=0), hi=series[:split].max(axis=0),
    )
    cell_opt = AdamState.for_params(cell.parameters())
    readout_opt = AdamState.for_params(readout.parameters())

    x_train, y_train = _windows(series, window, horizon, train_targets)
    x_train = model.normalize(x_train)
    y_train = model.normalize(y_train)

    for epoch in range(epochs):
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            seq = np.transpose(x_train[idx], (1, 0, 2))
            h, gru_cache = gru_forward(cell, seq)
            out, readout_cache = forward(readout, h)
            diff = out - y_train[idx]
            readout_grads = backward(readout, readout_cache, 2.0 * diff / diff.size)
            cell_grads = gru_backward(cell, gru_cache, readout_grads.input)
            readout.apply_gradients(readout_grads, readout_opt, lr)
            cell.apply_gradients(cell_grads, cell_opt, lr)

    x_raw, y_raw = _windows(series, window, horizon, train_targets)
    model.train_mse = float(np.mean((model.predict_batch(x_raw) - y_raw) ** 2))
    if len(valid_targets):
        x_val, y_val = _windows(series, window, horizon, valid_targets)
        model.validation_mse = float(np.mean((model.predict_batch(x_val) - y_val) ** 2))
    logger.info(
        f"Predictor trained: horizon {horizon}, train MSE {model.train_mse:.5f}, "
        f"validation MSE {model.validation_mse:.5f}"
    )
    return model


def predict(model: PredictorModel, window) -> tuple[float, float]:
    """Clipped (cpu_util, mem_util) forecast from the last `model.window` intervals."""
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2 or w.shape != (model.window, 2):
        raise WindowLengthError(f"Window must be ({model.window}, 2), got {w.shape}")
    out = model.predict_batch(w[None, :, :])[0]
    return float(out[0]), float(out[1])


def _forecast(model, windows: np.ndarray) -> np.ndarray:
    if hasattr(model, "predict_batch"):
        return np.asarray(model.predict_batch(windows), dtype=np.float64)
    return np.array([model.predict(w) for w in windows], dtype=np.float64).reshape(-1, 2)


def evaluate_mse(model, series, horizons=PREDICTION_HORIZONS) -> dict[int, PredictionError]:
    """
    MSE per horizon over a held-out series.

    All horizons share the same forecast origins. A model trained for one
    step ahead is rolled forward on its own forecasts; otherwise only the
    model's own horizon can be scored.
    """
    series = _as_series(series)
    W = model.window
    last = max(horizons)
    origins = np.arange(W, len(series) - last + 1)
    if len(origins) == 0:
        raise TraceTooShortError(
            f"Held-out series of {len(series)} intervals is too short for window {W} "
            f"and horizon {last}"
        )

    results = {}
    windows = np.stack([series[t - W:t] for t in origins])
    rolled = {}
    if model.horizon == 1:
        current = windows
        for h in range(1, last + 1):
            step_forecast = _forecast(model, current)
            rolled[h] = step_forecast
            current = np.concatenate([current[:, 1:], step_forecast[:, None, :]], axis=1)

    for h in horizons:
        if h in rolled:
            forecast = rolled[h]
        elif h == model.horizon:
            forecast = _forecast(model, windows)
        else:
            logger.warning(f"Horizon {h} cannot be scored by a horizon-{model.horizon} model")
            continue
        actual = series[origins + h - 1]
        err = np.mean((forecast - actual) ** 2, axis=0)
        results[h] = PredictionError(cpu=float(err[0]), mem=float(err[1]), mean=float(err.mean()))
    return results


def save_predictor(model: PredictorModel, path: str):
    save_checkpoint(path, [
        model.cell,
        model.readout,
        ("window", model.window),
        ("horizon", model.horizon),
        ("lo", model.lo),
        ("hi", model.hi),
    ])


def load_predictor(path: str) -> PredictorModel:
    sections = load_checkpoint(path)
    try:
        cell, readout = sections[0], sections[1]
        meta = {name: values for name, values in sections[2:]}
        return PredictorModel(
            cell=cell, readout=readout,
            window=int(meta["window"][0]), horizon=int(meta["horizon"][0]),
            lo=meta["lo"], hi=meta["hi"],
        )
    except (IndexError, KeyError, TypeError, ValueError) as e:
        raise WorkloadError(f"Malformed predictor checkpoint {path}", original_error=e) from e


# Load generation

def user_type_mix(intervals: int, types: int, period: int = 288) -> np.ndarray:
    """Slowly drifting user-type shares, shape (intervals, types), rows summing to 1."""
    t = np.arange(intervals)[:, None]
    phases = 2.0 * np.pi * np.arange(types)[None, :] / max(types, 1)
    raw = 1.0 + 0.5 * np.sin(2.0 * np.pi * t / period + phases)
    return raw / raw.sum(axis=1, keepdims=True)


def user_type_weights(user_types, chain_ids: list[str]) -> np.ndarray:
    """Per-user-type chain-weight vectors in chain order, shape (types, chains)."""
    rows = []
    for user_type in user_types:
        weights = getattr(user_type, "chain_weights", user_type)
        row = np.array([float(weights.get(c, 0.0)) for c in chain_ids])
        if row.sum() <= 0:
            name = getattr(user_type, "name", "?")
            raise WorkloadError(f"User type '{name}' sends no traffic to any known chain")
        rows.append(row / row.sum())
    return np.array(rows, dtype=np.float64)


class LoadGenerator:
    """
    Trace-driven arrival schedule.

    Each trace interval's cluster-mean utilization is mapped through the
    profiler to a request rate held for one control interval of ticks.
    The forecast feature is the predictor's next-interval CPU forecast, or
    the current interval's CPU utilization when there is no predictor.
    """

    def __init__(
        self,
        profiler: Optional[ProfilerModel],
        predictor: Optional[PredictorModel] = None,
        control_interval: int = CONTROL_INTERVAL,
        user_types=None,
        chain_ids: Optional[list[str]] = None,
    ):
        if control_interval < 1:
            raise WorkloadError(f"control_interval must be at least 1, got {control_interval}")
        self.profiler = profiler
        self.predictor = predictor
        self.control_interval = control_interval
        self.user_types = list(user_types or [])
        self.chain_ids = list(chain_ids or [])

    def interval_forecasts(self, series: np.ndarray) -> np.ndarray:
        forecasts = series[:, 0].copy()
        if self.predictor is None:
            return forecasts
        W = self.predictor.window
        origins = np.arange(W - 1, len(series))
        if len(origins):
            windows = np.stack([series[i - W + 1:i + 1] for i in origins])
            forecasts[origins] = _forecast(self.predictor, windows)[:, 0]
        return forecasts

    def schedule(self, trace) -> RateSchedule:
        series = _as_series(trace)
        if len(series) == 0:
            raise EmptyTraceError("Cannot build a schedule from an empty series")
        if self.profiler is None:
            raise WorkloadError("A trace-driven schedule needs a fitted profiler")
        rates = np.array([util_to_requests(self.profiler, cpu, mem) for cpu, mem in series])
        forecasts = self.interval_forecasts(series)
        return RateSchedule(
            rates=np.repeat(rates, self.control_interval),
            forecasts=np.repeat(forecasts, self.control_interval),
            chain_weights=self.chain_weight_schedule(len(series)),
        )

    def chain_weight_schedule(self, intervals: int) -> Optional[np.ndarray]:
        """Per-tick chain weights from the drifting user-type mix, or None without user types."""
        if not (self.user_types and self.chain_ids):
            return None
        mix = user_type_mix(intervals, len(self.user_types))
        return np.repeat(
            mix @ user_type_weights(self.user_types, self.chain_ids),
            self.control_interval, axis=0,
        )


def surge_profile(
    ticks: int,
    rng: np.random.Generator,
    every: int = SURGE_EVERY,
    factor=SURGE_FACTOR,
    hold=SURGE_HOLD,
) -> np.ndarray:
    """
    Per-tick load multiplier with one flash crowd per window of `every` ticks.

    Each crowd starts somewhere in the middle half of its window, ramps up
    over SURGE_RISE ticks, holds for a drawn number of ticks and fades out
    over SURGE_DECAY ticks.
    """
    if every < 4:
        raise WorkloadError(f"Surge window must be at least 4 ticks, got {every}")
    multiplier = np.ones(ticks)
    for start in range(0, ticks, every):
        onset = start + int(rng.integers(every // 4, 3 * every // 4))
        peak = float(rng.uniform(*factor))
        length = int(rng.integers(hold[0], hold[1] + 1))
        shape = np.concatenate([
            np.linspace(1.0, peak, SURGE_RISE + 1)[1:],
            np.full(length, peak),
            np.linspace(peak, 1.0, SURGE_DECAY + 1)[:-1],
        ])
        end = min(onset + len(shape), ticks)
        if onset < end:
            multiplier[onset:end] = np.maximum(multiplier[onset:end], shape[:end - onset])
    return multiplier


def synthetic_schedule(
    state: ClusterState,
    ticks: int,
    period: Optional[int] = None,
    seed: int = DEFAULT_SEED,
    peak_load: float = SYNTHETIC_PEAK_LOAD,
    surge_every: Optional[int] = SURGE_EVERY,
) -> RateSchedule:
    """
    Diurnal arrival rates with flash crowds for runs without a trace.

    The curve swings between light load and peak_load times the capacity
    of the initial provisioning (see saturation_rate). Flash crowds from
    surge_profile multiply it (None turns them off) and AR(1) noise is
    added on top. Forecasts are the next tick's diurnal load fraction, so
    crowds arrive unannounced.
    """
    if ticks < 1:
        raise WorkloadError(f"ticks must be at least 1, got {ticks}")
    period = period or max(ticks // 2, 1)
    bottleneck = saturation_rate(state)
    t = np.arange(ticks + 1)
    wave = 0.5 + 0.5 * np.sin(2.0 * np.pi * t / period - np.pi / 2.0)
    level = 0.15 + (peak_load - 0.15) * wave
    rng = np.random.default_rng(seed)
    noise = np.zeros(ticks)
    for i in range(1, ticks):
        noise[i] = 0.9 * noise[i - 1] + rng.normal(0.0, 0.02)
    surges = surge_profile(ticks, rng, surge_every) if surge_every else np.ones(ticks)
    rates = np.maximum(bottleneck * (level[:ticks] * surges + noise), 0.0)
    forecasts = np.clip(level[1:] / peak_load, 0.0, 1.0)
    return RateSchedule(rates=rates, forecasts=forecasts)
