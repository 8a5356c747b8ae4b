"""Markov-modulated Poisson traffic: generation, scaling, sliding windows.

A hidden Markov chain switches between demand regimes; within a regime each
direction's per-slot packet count is Poisson with the regime's rate. All
randomness flows through a single seeded numpy Generator, so a trace is a
pure function of (chain, n_slots, seed).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from sbfdsim.errors import (
    DegenerateRange,
    EmptyChain,
    NegativeRate,
    NoConvergence,
    NonStochasticMatrix,
    TraceTooShort,
    ValidationError,
)
from sbfdsim import kvconfig

LOOKBACK = 30
HORIZON = 10

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ModulatedChain:
    """Hidden chain plus per-state Poisson rates (packets/slot) per direction."""

    transition: np.ndarray          # (n, n) row-stochastic, per-slot
    rates_ul: np.ndarray            # (n,) packets/slot
    rates_dl: np.ndarray            # (n,) packets/slot
    packet_bits: int = 100
    state_labels: tuple[str, ...] | None = None
    chain_id: str = "custom"

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=np.float64)
        ru = np.asarray(self.rates_ul, dtype=np.float64)
        rd = np.asarray(self.rates_dl, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] == 0:
            raise EmptyChain(f"transition matrix must be square and non-empty, got shape {t.shape}")
        n = t.shape[0]
        if ru.shape != (n,) or rd.shape != (n,):
            raise ValidationError(f"rates must have one entry per state ({n})")
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise NonStochasticMatrix("transition entries must lie in [0, 1]")
        rowsums = t.sum(axis=1)
        bad = np.where(np.abs(rowsums - 1.0) > ROW_SUM_TOL)[0]
        if bad.size:
            raise NonStochasticMatrix(
                f"row {bad[0]} sums to {rowsums[bad[0]]:.12f}, expected 1"
            )
        if np.any(ru < 0.0) or np.any(rd < 0.0):
            raise NegativeRate("arrival rates must be non-negative")
        if self.packet_bits < 1:
            raise ValidationError("packet_bits must be >= 1")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "rates_ul", ru)
        object.__setattr__(self, "rates_dl", rd)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def mean_bits(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-state mean demand in bits/slot, (ul, dl)."""
        return self.rates_ul * self.packet_bits, self.rates_dl * self.packet_bits


def build_chain(config: dict) -> ModulatedChain:
    """Build and validate a chain from a flat config mapping.

    Expected keys: n_states, transition.i.j, rate_ul.i, rate_dl.i,
    packet_bits, optionally state_label.i and chain_id.
    """
    try:
        n = int(config["n_states"])
    except KeyError as exc:
        raise ValidationError("chain config missing n_states") from exc
    if n < 1:
        raise EmptyChain(f"n_states must be >= 1, got {n}")
    t = np.zeros((n, n))
    ru = np.zeros(n)
    rd = np.zeros(n)
    try:
        for i in range(n):
            ru[i] = float(config[f"rate_ul.{i}"])
            rd[i] = float(config[f"rate_dl.{i}"])
            for j in range(n):
                t[i, j] = float(config[f"transition.{i}.{j}"])
        packet_bits = int(config["packet_bits"])
    except KeyError as exc:
        raise ValidationError(f"chain config missing key {exc}") from exc
    labels = None
    if f"state_label.0" in config:
        labels = tuple(config.get(f"state_label.{i}", f"S{i}") for i in range(n))
    return ModulatedChain(
        transition=t, rates_ul=ru, rates_dl=rd, packet_bits=packet_bits,
        state_labels=labels, chain_id=str(config.get("chain_id", "custom")),
    )


def chain_to_config(chain: ModulatedChain) -> dict:
    cfg: dict[str, object] = {"n_states": chain.n_states, "chain_id": chain.chain_id}
    for i in range(chain.n_states):
        for j in range(chain.n_states):
            cfg[f"transition.{i}.{j}"] = repr(float(chain.transition[i, j]))
        cfg[f"rate_ul.{i}"] = repr(float(chain.rates_ul[i]))
        cfg[f"rate_dl.{i}"] = repr(float(chain.rates_dl[i]))
    cfg["packet_bits"] = chain.packet_bits
    if chain.state_labels is not None:
        for i, lab in enumerate(chain.state_labels):
            cfg[f"state_label.{i}"] = lab
    return cfg


def load_chain(path) -> ModulatedChain:
    return build_chain(kvconfig.load_kv(path))


def save_chain(path, chain: ModulatedChain) -> None:
    kvconfig.save_kv(path, chain_to_config(chain))


def default_chain() -> ModulatedChain:
    """Three-regime chain: PEAK / IDLE / MID bursts with ~500-slot dwell.

    Mean demand per regime (bits/slot): PEAK 30,000 UL / 80,000 DL,
    IDLE 200/200, MID 12,000/35,000. Packets are 100 bits, so the Poisson
    rates below are the bit means divided by 100.
    """
    stay = 0.998
    hop = (1.0 - stay) / 2.0
    transition = np.full((3, 3), hop)
    np.fill_diagonal(transition, stay)
    return ModulatedChain(
        transition=transition,
        rates_ul=np.array([300.0, 2.0, 120.0]),
        rates_dl=np.array([800.0, 2.0, 350.0]),
        packet_bits=100,
        state_labels=("PEAK", "IDLE", "MID"),
        chain_id="default-3state",
    )


def _strongly_connected(mask: np.ndarray) -> bool:
    """True if the directed graph with adjacency `mask` is one strong component."""
    n = mask.shape[0]

    def reach(adj: np.ndarray) -> np.ndarray:
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = []
            for v in frontier:
                for w in np.where(adj[v])[0]:
                    if not seen[w]:
                        seen[w] = True
                        nxt.append(w)
            frontier = nxt
        return seen

    return bool(reach(mask).all() and reach(mask.T).all())


def stationary_distribution(
    chain: ModulatedChain, tol: float = 1e-12, max_iter: int = 200_000
) -> np.ndarray:
    """Stationary probabilities via power iteration from the uniform vector.

    Raises NoConvergence if the chain is reducible (start-dependent limits)
    or the iteration fails to settle within `max_iter` (periodic chains).
    """
    n = chain.n_states
    if n > 1 and not _strongly_connected(chain.transition > 0.0):
        raise NoConvergence("chain is reducible; stationary distribution is not unique")
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ chain.transition
        if np.max(np.abs(nxt - pi)) < tol:
            pi = nxt
            break
        pi = nxt
    else:
        raise NoConvergence(f"power iteration did not settle within {max_iter} steps")
    return pi / pi.sum()


def stationary_mean_bits(chain: ModulatedChain) -> tuple[float, float]:
    """Long-run mean demand in bits/slot, (ul, dl)."""
    pi = stationary_distribution(chain)
    return (
        float(chain.packet_bits * pi @ chain.rates_ul),
        float(chain.packet_bits * pi @ chain.rates_dl),
    )


@dataclass(frozen=True)
class TrafficTrace:
    """Per-slot demand in bits, with the generating metadata when available."""

    slots: np.ndarray                       # (n, 2) int64: [:,0]=ul, [:,1]=dl
    seed: int | None = None
    chain_id: str | None = None
    states: np.ndarray | None = None        # (n,) hidden state per slot, if generated
    state_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        s = np.asarray(self.slots, dtype=np.int64)
        if s.ndim != 2 or s.shape[1] != 2 or s.shape[0] == 0:
            raise ValidationError(f"trace must be a non-empty (n, 2) array, got {s.shape}")
        if np.any(s < 0):
            raise ValidationError("trace entries must be non-negative")
        object.__setattr__(self, "slots", s)

    def __len__(self) -> int:
        return self.slots.shape[0]

    @property
    def ul(self) -> np.ndarray:
        return self.slots[:, 0]

    @property
    def dl(self) -> np.ndarray:
        return self.slots[:, 1]


def generate_trace(chain: ModulatedChain, n_slots: int, seed: int) -> TrafficTrace:
    """Simulate `n_slots` slots; the chain advances once per slot, then each
    direction draws packet_bits * Poisson(rate[state]) bits."""
    if n_slots < 1:
        raise ValidationError(f"n_slots must be >= 1, got {n_slots}")
    rng = np.random.default_rng(seed)
    n_states = chain.n_states
    cum = np.cumsum(chain.transition, axis=1)
    # Sequential regime walk (cheap even at 1e6 slots), then vectorized draws.
    u = rng.random(n_slots)
    states = np.empty(n_slots, dtype=np.int64)
    s = 0
    for i in range(n_slots):
        s = int(np.searchsorted(cum[s], u[i], side="right"))
        if s >= n_states:       # guards u == 1.0 edge
            s = n_states - 1
        states[i] = s
    ul = rng.poisson(chain.rates_ul[states]) * chain.packet_bits
    dl = rng.poisson(chain.rates_dl[states]) * chain.packet_bits
    return TrafficTrace(
        slots=np.stack([ul, dl], axis=1).astype(np.int64),
        seed=seed,
        chain_id=chain.chain_id,
        states=states,
        state_labels=chain.state_labels,
    )


TRACE_HEADER = ["slot", "ul_bits", "dl_bits"]


def save_trace_csv(path, trace: TrafficTrace) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for i in range(len(trace)):
            writer.writerow([i, int(trace.slots[i, 0]), int(trace.slots[i, 1])])


def load_trace_csv(path) -> TrafficTrace:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return _parse_trace_csv(fh)


def _parse_trace_csv(fh: io.TextIOBase) -> TrafficTrace:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != TRACE_HEADER:
        raise ValidationError(f"expected header {','.join(TRACE_HEADER)!r}, got {header!r}")
    rows = []
    for row in reader:
        if not row:
            continue
        rows.append((int(row[1]), int(row[2])))
    if not rows:
        raise ValidationError("trace file holds no slots")
    return TrafficTrace(slots=np.array(rows, dtype=np.int64))


@dataclass(frozen=True)
class Normalizer:
    """Min-max scaler per direction; x -> (x - min) / (max - min). Not clamped."""

    min_ul: float
    max_ul: float
    min_dl: float
    max_dl: float

    def __post_init__(self):
        if not (self.max_ul > self.min_ul and self.max_dl > self.min_dl):
            raise DegenerateRange("max must exceed min in both directions")

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Normalize an (..., 2) bits array to the fitted 0-1 range."""
        x = np.asarray(x, dtype=np.float64)
        lo = np.array([self.min_ul, self.min_dl])
        span = np.array([self.max_ul - self.min_ul, self.max_dl - self.min_dl])
        return (x - lo) / span

    def invert(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        lo = np.array([self.min_ul, self.min_dl])
        span = np.array([self.max_ul - self.min_ul, self.max_dl - self.min_dl])
        return y * span + lo

    def as_array(self) -> np.ndarray:
        return np.array([self.min_ul, self.max_ul, self.min_dl, self.max_dl])

    @staticmethod
    def from_array(a) -> "Normalizer":
        a = np.asarray(a, dtype=np.float64)
        return Normalizer(min_ul=float(a[0]), max_ul=float(a[1]),
                          min_dl=float(a[2]), max_dl=float(a[3]))


def fit_normalizer(trace: TrafficTrace, fit_range: slice | None = None) -> Normalizer:
    """Fit min/max bounds on `fit_range` of the trace (default: all slots)."""
    window = trace.slots if fit_range is None else trace.slots[fit_range]
    if window.shape[0] == 0:
        raise ValidationError("fit range is empty")
    mins = window.min(axis=0)
    maxs = window.max(axis=0)
    if mins[0] == maxs[0] or mins[1] == maxs[1]:
        raise DegenerateRange(
            f"constant signal in fit range (ul {mins[0]}..{maxs[0]}, dl {mins[1]}..{maxs[1]})"
        )
    return Normalizer(min_ul=float(mins[0]), max_ul=float(maxs[0]),
                      min_dl=float(mins[1]), max_dl=float(maxs[1]))


@dataclass(frozen=True)
class WindowedDataset:
    """Normalized sliding windows: inputs (N, lookback, 2), targets (N, horizon, 2).

    Window i reads slots [i, i+lookback) and predicts [i+lookback, i+lookback+horizon).
    Partitions are contiguous index ranges in time order.
    """

    inputs: np.ndarray
    targets: np.ndarray
    train: range
    val: range
    test: range
    lookback: int = LOOKBACK
    horizon: int = HORIZON

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def partition(self, name: str) -> range:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ValidationError(f"unknown partition {name!r}") from None


def make_windows(
    trace: TrafficTrace,
    normalizer: Normalizer,
    lookback: int = LOOKBACK,
    horizon: int = HORIZON,
    split: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> WindowedDataset:
    """Stride-1 sliding windows over the normalized trace, split 80/10/10 in time."""
    n = len(trace)
    if n < lookback + horizon:
        raise TraceTooShort(
            f"need at least {lookback + horizon} slots for one window, trace has {n}"
        )
    norm = normalizer.apply(trace.slots)
    n_windows = n - lookback - horizon + 1
    view = np.lib.stride_tricks.sliding_window_view(norm, (lookback + horizon, 2))
    windows = view[:, 0]                      # (n_windows, lookback+horizon, 2)
    inputs = np.ascontiguousarray(windows[:, :lookback])
    targets = np.ascontiguousarray(windows[:, lookback:])
    n_train = int(round(split[0] * n_windows))
    n_val = int(round(split[1] * n_windows))
    n_train = min(n_train, n_windows)
    n_val = min(n_val, n_windows - n_train)
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        train=range(0, n_train),
        val=range(n_train, n_train + n_val),
        test=range(n_train + n_val, n_windows),
        lookback=lookback,
        horizon=horizon,
    )


def train_fit_slice(n_slots: int, fit_scope: str = "train", train_frac: float = 0.8) -> slice:
    """Slot range the normalizer is fitted on.

    `train` restricts fitting to the leading train share of the trace to keep
    test statistics out of the scaler; `all` fits on the whole trace.
    """
    if fit_scope == "all":
        return slice(0, n_slots)
    if fit_scope == "train":
        return slice(0, max(1, int(round(train_frac * n_slots))))
    raise ValidationError(f"fit_scope must be 'train' or 'all', got {fit_scope!r}")
