"""Short-horizon occupancy prediction baselines and the MSE protocol.

Evaluation sequences are 20 frames at 10 Hz: predictors see frames 1-5 and
predict frames 6-20 (15 steps, 1.5 s).  Two baselines are provided: a
static-environment predictor that repeats the last seen grid, and a
particle-propagation predictor that advances dynamic-cell particles under
noiseless linear dynamics and reads out min(1, sum of weights) per cell as
the occupancy proxy.  Free space is not propagated by the particle
baseline: particles only capture occupied space, so its occupancy output
is the predicted occupied mass.

Targets and the static baseline compare on the occupancy-probability
channel (pignistic for DST-mode frames), so all predictors share one MSE
scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import accumulate_weights
from .errors import BadSequenceLength, SpecMismatch
from .filter import FilterStep, ParticleSet
from .grid import EvidentialGrid, GridSpec

SEQUENCE_LENGTH = 20
SEED_FRAMES = 5
HORIZON = SEQUENCE_LENGTH - SEED_FRAMES
STEP_SECONDS = 0.1


@dataclass
class PFSeedState:
    """Filter state at the last seed frame, needed by the particle baseline."""

    particles: ParticleSet
    dynamic_mask: np.ndarray
    posterior: EvidentialGrid
    ego_pose: np.ndarray


@dataclass
class GridSequence:
    """One 20-frame evaluation sequence of occupancy grids."""

    spec: GridSpec
    frames: list[np.ndarray]
    pf_seed: PFSeedState | None = None
    index: int = 0

    def validate(self) -> None:
        if len(self.frames) != SEQUENCE_LENGTH:
            raise BadSequenceLength(
                f"sequence {self.index} has {len(self.frames)} frames, expected {SEQUENCE_LENGTH}"
            )


def static_predictor(last_seen: np.ndarray, horizon: int = HORIZON) -> list[np.ndarray]:
    """Repeat the last seen grid over the whole horizon."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return [last_seen.copy() for _ in range(horizon)]


def pf_predictor(
    ps: ParticleSet,
    dynamic_mask: np.ndarray,
    posterior: EvidentialGrid,
    horizon: int = HORIZON,
    dt: float = STEP_SECONDS,
    ego_pose=(0.0, 0.0),
    static_cells: str = "freeze",
) -> list[np.ndarray]:
    """Advance dynamic-cell particles and read out occupied mass per step.

    Particles in cells above the Mahalanobis gate move with their own
    (noiseless, linear) velocity; the rest stay frozen in place (or are
    dropped with ``static_cells='drop'``).  The grid frame is frozen at the
    prediction start.  Particles that exit the grid stop contributing.
    """
    if static_cells not in ("freeze", "drop"):
        raise ValueError("static_cells must be 'freeze' or 'drop'")
    spec = posterior.spec
    n = spec.cells_per_side
    n_flat = n * n
    half = n / 2.0
    s = spec.cell_size
    ego_x, ego_y = float(ego_pose[0]), float(ego_pose[1])

    u = half + (ps.x - ego_x) / s
    v = half - (ps.y - ego_y) / s
    col = np.floor(u).astype(np.int64)
    row = np.floor(v).astype(np.int64)
    inside = (row >= 0) & (row < n) & (col >= 0) & (col < n)
    ci = np.where(inside, row * n + col, -1)
    dynamic = inside & dynamic_mask.ravel()[np.where(inside, ci, 0)]

    static_idx = np.where(~dynamic, ci, -1)
    if static_cells == "drop":
        static_idx = np.full_like(static_idx, -1)
    static_mass = accumulate_weights(static_idx, ps.w, n_flat)

    dx = ps.x[dynamic]
    dy = ps.y[dynamic]
    dvx = ps.vx[dynamic]
    dvy = ps.vy[dynamic]
    dw = ps.w[dynamic]

    grids = []
    for t in range(1, horizon + 1):
        px = dx + dvx * (t * dt)
        py = dy + dvy * (t * dt)
        c = np.floor(half + (px - ego_x) / s).astype(np.int64)
        r = np.floor(half - (py - ego_y) / s).astype(np.int64)
        ok = (r >= 0) & (r < n) & (c >= 0) & (c < n)
        dci = np.where(ok, r * n + c, -1)
        mass = static_mass + accumulate_weights(dci, dw, n_flat)
        grids.append(np.minimum(mass, 1.0).reshape(spec.shape))
    return grids


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over cells of the squared occupancy difference."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise SpecMismatch(f"grid shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


@dataclass
class MetricsRow:
    step: int
    seconds: float
    predictor: str
    mean_mse: float
    stderr: float


@dataclass
class MetricsTable:
    rows: list[MetricsRow]

    def for_predictor(self, name: str) -> list[MetricsRow]:
        return [r for r in self.rows if r.predictor == name]

    def to_csv(self, path) -> None:
        lines = ["step,seconds,predictor,mean_mse,stderr"]
        for r in self.rows:
            lines.append(f"{r.step},{r.seconds:g},{r.predictor},{r.mean_mse!r},{r.stderr!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def evaluate(sequences, predictors) -> MetricsTable:
    """Score predictors over 20-frame sequences.

    ``predictors`` is a list of (name, fn) where fn maps a GridSequence to
    ``HORIZON`` predicted occupancy grids.  Per step, errors are averaged
    across sequences with the standard error of that mean; the reductions
    sort the per-sequence errors first so the result cannot depend on
    sequence order.
    """
    sequences = list(sequences)
    for seq in sequences:
        seq.validate()
    rows: list[MetricsRow] = []
    for name, fn in sorted(predictors, key=lambda p: p[0]):
        if not sequences:
            continue
        errors = np.zeros((len(sequences), HORIZON))
        for i, seq in enumerate(sequences):
            preds = fn(seq)
            if len(preds) != HORIZON:
                raise BadSequenceLength(f"predictor {name} returned {len(preds)} steps, expected {HORIZON}")
            for t in range(HORIZON):
                errors[i, t] = mse(preds[t], seq.frames[SEED_FRAMES + t])
        for t in range(HORIZON):
            col = np.sort(errors[:, t])
            mean = float(col.mean())
            if len(col) > 1:
                stderr = float(col.std(ddof=1) / np.sqrt(len(col)))
            else:
                stderr = 0.0
            rows.append(
                MetricsRow(step=t + 1, seconds=(t + 1) * STEP_SECONDS, predictor=name, mean_mse=mean, stderr=stderr)
            )
    return MetricsTable(rows=rows)


def make_static_predictor():
    """Predictor closure: repeat the last seed frame."""

    def predict(seq: GridSequence) -> list[np.ndarray]:
        return static_predictor(seq.frames[SEED_FRAMES - 1], HORIZON)

    return "static", predict


def make_pf_predictor(dt: float = STEP_SECONDS, static_cells: str = "freeze"):
    """Predictor closure: propagate the seed-frame particle state.

    The particles only capture occupied space, so for scoring, the
    propagated occupied mass is stacked with the free mass held at its last
    observed value and converted to the shared occupancy-probability scale.
    """

    def predict(seq: GridSequence) -> list[np.ndarray]:
        if seq.pf_seed is None:
            raise ValueError(f"sequence {seq.index} carries no particle seed state")
        seed = seq.pf_seed
        masses = pf_predictor(
            seed.particles,
            seed.dynamic_mask,
            seed.posterior,
            HORIZON,
            dt,
            (seed.ego_pose[0], seed.ego_pose[1]),
            static_cells,
        )
        held_free = seed.posterior.m_free
        out = []
        for m in masses:
            free = np.minimum(held_free, 1.0 - m)  # occupied evidence displaces held free mass
            out.append(m + 0.5 * (1.0 - m - free))
        return out

    return "pf", predict


def sequence_from_steps(steps: list[FilterStep], start: int, index: int = 0) -> GridSequence:
    """Slice one 20-frame evaluation sequence out of a filter run."""
    window = steps[start : start + SEQUENCE_LENGTH]
    if len(window) != SEQUENCE_LENGTH:
        raise BadSequenceLength(
            f"window [{start}, {start + SEQUENCE_LENGTH}) exceeds the {len(steps)}-frame run"
        )
    seed_step = window[SEED_FRAMES - 1]
    return GridSequence(
        spec=seed_step.posterior.spec,
        frames=[st.dogma.occupancy() for st in window],
        pf_seed=PFSeedState(
            particles=seed_step.particles,
            dynamic_mask=seed_step.dynamic_mask,
            posterior=seed_step.posterior,
            ego_pose=seed_step.ego_pose,
        ),
        index=index,
    )


def export_sequences(tensors, path, seed: int = 0) -> None:
    """Write sequences for an external learned predictor.

    ``tensors`` is a list of (T, C, H, W) arrays with identical shapes.
    The file holds one JSON metadata line, then raw little-endian f32 data
    ordered [sequence][time][channel][row][column].
    """
    tensors = [np.asarray(t) for t in tensors]
    if not tensors:
        raise BadSequenceLength("nothing to export")
    shape = tensors[0].shape
    if len(shape) != 4:
        raise ValueError(f"expected (time, channels, height, width) tensors, got {shape}")
    for t in tensors:
        if t.shape != shape:
            raise SpecMismatch(f"sequence shapes differ: {t.shape} vs {shape}")
    header = {
        "count": len(tensors),
        "seq_len": shape[0],
        "channels": shape[1],
        "height": shape[2],
        "width": shape[3],
        "dtype": "f32-le",
        "seed": seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        for t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def import_sequences(path):
    """Read back an exported sequence file; returns (tensor (S,T,C,H,W), header)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        payload = fh.read()
    shape = (header["count"], header["seq_len"], header["channels"], header["height"], header["width"])
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    tensor = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return tensor, header


def plot_metrics(table: MetricsTable, path, title: str = "Mean-squared error on predictions") -> None:
    """Line plot of MSE curves with shaded standard-error bands."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    names = sorted({r.predictor for r in table.rows})
    for name in names:
        rows = sorted(table.for_predictor(name), key=lambda r: r.step)
        xs = np.array([r.seconds for r in rows])
        ys = np.array([r.mean_mse for r in rows])
        es = np.array([r.stderr for r in rows])
        ax.plot(xs, ys, label=name)
        ax.fill_between(xs, ys - es, ys + es, alpha=0.3)
    ax.set_xlabel("prediction horizon [s]")
    ax.set_ylabel("MSE")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)
