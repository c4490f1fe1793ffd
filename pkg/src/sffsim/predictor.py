"""Learned claimed-set predictor.

A small fully connected network maps per-vehicle features (own state, nearby
vehicles, a bird's-eye drivable-area raster) to the nine body-frame
acceleration pairs whose rollouts make up that vehicle's claimed set.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .claimed import (ClaimedSetGrid, GridSpec, LatticeField, anchored_values, claimed_set,
                      place_anchored, stamp, sweep_hulls)
from .errors import TrainingError, ValidationError
from .procedure import SafetyProcedure, default_procedure
from .world import A_MAX_ABS, STEER_MAX, ActorState, VehicleShape, WorldState

K_ACTIONS = 9
N_NEIGHBORS = 4
BEV_SIZE = 32
BEV_CELL = 1.0
SPEED_SCALE = 20.0
POS_SCALE = 50.0
FEATURE_DIM = 3 + 5 * N_NEIGHBORS + BEV_SIZE * BEV_SIZE
LAYERS = (FEATURE_DIM, 64, 64, 2 * K_ACTIONS)

DATASET_MAGIC = b"SFFDSET1"
CHECKPOINT_FORMAT = "sffsim-predictor"
CHECKPOINT_VERSION = 1

# ----------------------------------------------------------------------------
# Labels


def canonical(actions: np.ndarray) -> np.ndarray:
    """Sort (ax, ay) rows lexicographically."""
    actions = np.asarray(actions, dtype=float).reshape(-1, 2)
    return actions[np.lexsort((actions[:, 1], actions[:, 0]))]


def oracle_action_set(state: ActorState, proc: SafetyProcedure,
                      shape: VehicleShape | None = None) -> np.ndarray:
    """Body-frame (ax, ay) equivalents of the procedure's policies, shape (9, 2).

    ay is the centripetal acceleration of the held steering angle at the
    initial speed, so a stopped vehicle gets ay = 0 everywhere.
    """
    if len(proc) != K_ACTIONS:
        raise ValidationError(f"predictor needs {K_ACTIONS} procedure policies, got {len(proc)}")
    shape = shape or VehicleShape(4.5, 1.9, 2.7)
    v2 = state.speed * state.speed
    rows = [(-p.decel, v2 * math.tan(p.steer_hold) / shape.wheelbase) for p in proc.policies]
    return canonical(np.array(rows))


def action_groups(actions: np.ndarray, speed: float, shape: VehicleShape) -> list:
    """Turn canonical actions into hull groups of (accel, curvature).

    Rows are taken three at a time, which in canonical order puts each braking
    level's steering variants together.
    """
    actions = np.asarray(actions, dtype=float).reshape(K_ACTIONS, 2)
    k_max = math.tan(STEER_MAX) / shape.wheelbase
    v2 = speed * speed
    groups = []
    for g in range(0, K_ACTIONS, 3):
        members = []
        for ax, ay in actions[g:g + 3]:
            k = ay / v2 if v2 > 0.0 else 0.0
            members.append((float(ax), min(max(k, -k_max), k_max)))
        groups.append(members)
    return groups


# ----------------------------------------------------------------------------
# Features


def _bev_offsets() -> np.ndarray:
    c = (np.arange(BEV_SIZE) - BEV_SIZE / 2 + 0.5) * BEV_CELL
    fx, fy = np.meshgrid(c, c)
    return np.stack([fx.ravel(), fy.ravel()], axis=1)


_BEV = _bev_offsets()


def featurize(world: WorldState, target_id) -> np.ndarray:
    """Feature vector of length ``FEATURE_DIM``; every entry lies in [-1, 1]."""
    st, _ = world.actor(target_id)
    out = np.zeros(FEATURE_DIM)
    out[0] = min(st.speed / SPEED_SCALE, 1.0)
    out[1], out[2] = math.sin(st.heading), math.cos(st.heading)
    c, s = math.cos(st.heading), math.sin(st.heading)
    arr = world.arrays
    dx, dy = arr["x"] - st.x, arr["y"] - st.y
    d2 = dx * dx + dy * dy
    d2[world.index(target_id)] = np.inf
    order = [i for i in np.argsort(d2, kind="stable")[:N_NEIGHBORS]
             if d2[i] <= POS_SCALE * POS_SCALE]
    for j, i in enumerate(order):
        lx, ly = c * dx[i] + s * dy[i], -s * dx[i] + c * dy[i]
        rel = arr["heading"][i] - st.heading
        base = 3 + 5 * j
        out[base:base + 5] = (np.clip(lx / POS_SCALE, -1, 1), np.clip(ly / POS_SCALE, -1, 1),
                              math.sin(rel), math.cos(rel),
                              min(arr["speed"][i] / SPEED_SCALE, 1.0))
    if world.map is not None:
        pts = np.empty_like(_BEV)
        pts[:, 0] = st.x + c * _BEV[:, 0] - s * _BEV[:, 1]
        pts[:, 1] = st.y + s * _BEV[:, 0] + c * _BEV[:, 1]
        out[3 + 5 * N_NEIGHBORS:] = world.map.drivable.lookup(pts)
    return out


# ----------------------------------------------------------------------------
# Dataset


@dataclass
class Dataset:
    """Feature/label pairs plus the raw state and shape behind each label.

    ``states`` rows are (heading, speed); ``shapes`` rows are (length, width,
    wheelbase). Labels are canonical action sets flattened to 18 values.
    """

    features: np.ndarray
    labels: np.ndarray
    states: np.ndarray
    shapes: np.ndarray
    train: np.ndarray
    val: np.ndarray
    seed: int = 0

    def __post_init__(self):
        n = len(self.features)
        if not (len(self.labels) == len(self.states) == len(self.shapes) == n):
            raise ValidationError("dataset arrays disagree on example count")
        if np.intersect1d(self.train, self.val).size:
            raise ValidationError("train and validation splits overlap")

    def __len__(self):
        return len(self.features)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        n = len(idx)
        return Dataset(self.features[idx], self.labels[idx], self.states[idx], self.shapes[idx],
                       np.arange(n), np.arange(n, n), self.seed)

    def save(self, path) -> None:
        n = len(self)
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<qqqqq", n, FEATURE_DIM, 2 * K_ACTIONS, len(self.train),
                                 self.seed))
            for a in (self.features, self.labels, self.states, self.shapes):
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
            for a in (self.train, self.val):
                fh.write(np.ascontiguousarray(a, dtype="<i8").tobytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:len(DATASET_MAGIC)] != DATASET_MAGIC:
            raise ValidationError(f"{path}: not a dataset file")
        off = len(DATASET_MAGIC)
        n, dim, k2, n_train, seed = struct.unpack_from("<qqqqq", raw, off)
        off += 40
        arrays = []
        for cols, dt in ((dim, "<f8"), (k2, "<f8"), (2, "<f8"), (3, "<f8")):
            count = n * cols
            arrays.append(np.frombuffer(raw, dt, count, off).reshape(n, cols).copy())
            off += 8 * count
        train = np.frombuffer(raw, "<i8", n_train, off).copy()
        off += 8 * n_train
        val = np.frombuffer(raw, "<i8", n - n_train, off).copy()
        return cls(*arrays, train, val, seed)


def split_indices(n: int, seed: int, train_fraction: float = 0.9) -> tuple:
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil(train_fraction * n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def generate_dataset(episodes: int, seed: int = 0, steps: int = 500, vehicles: int = 10,
                     sample_every: int = 10, aggression: str = "low",
                     proc: SafetyProcedure | None = None) -> Dataset:
    """Sample every vehicle every ``sample_every`` steps of traffic-only episodes.

    The ego slot is driven by the NPC behaviour model, so no policy under test
    is involved.
    """
    from .sim import Episode, ScenarioConfig
    from .sim import aggression as level

    if episodes <= 0:
        raise ValidationError("need at least one episode")
    if vehicles < 1:
        raise ValidationError("need at least one vehicle")
    proc = proc or default_procedure()
    feats, labels, states, shapes = [], [], [], []
    for e in range(episodes):
        cfg = ScenarioConfig(npc_count=vehicles - 1, episode_steps=steps, seed=seed * 100003 + e,
                             policy="npc", aggression=level(aggression))
        ep = Episode(cfg)
        while True:
            if ep.step_index % sample_every == 0:
                w = ep.world
                for st, sh in w.actors:
                    feats.append(featurize(w, st.actor_id))
                    labels.append(oracle_action_set(st, proc, sh).ravel())
                    states.append((st.heading, st.speed))
                    shapes.append((sh.length, sh.width, sh.wheelbase))
            if not ep.step():
                break
    n = len(feats)
    train, val = split_indices(n, seed)
    return Dataset(np.array(feats), np.array(labels), np.array(states), np.array(shapes),
                   train, val, seed)


# ----------------------------------------------------------------------------
# Network


@dataclass
class PredictorModel:
    weights: list
    biases: list
    a_max: float = A_MAX_ABS

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @classmethod
    def init(cls, seed: int = 0, dims=LAYERS, a_max: float = A_MAX_ABS) -> "PredictorModel":
        rng = np.random.default_rng(seed)
        ws = [rng.normal(0.0, 1.0 / math.sqrt(i), size=(i, o)) for i, o in zip(dims[:-1], dims[1:])]
        bs = [np.zeros(o) for o in dims[1:]]
        return cls(ws, bs, a_max)

    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, x: np.ndarray, keep: bool = False):
        """tanh hidden layers and a linear output layer."""
        acts = [np.asarray(x, dtype=float)]
        h = acts[0]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return (h, acts) if keep else h

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> tuple:
        """Mean squared error over all outputs, and its gradients."""
        pred, acts = self.forward(x, keep=True)
        n = pred.size
        err = pred - y
        loss = float((err * err).sum() / n)
        delta = (2.0 / n) * err
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return loss, [g for pair in zip(gw, gb) for g in pair]

    def loss(self, x, y) -> float:
        err = self.forward(x) - y
        return float((err * err).mean())

    def _bounded(self, y: np.ndarray) -> np.ndarray:
        # braking family: longitudinal accelerations stay within [-a_max, 0]
        out = y.reshape(-1, K_ACTIONS, 2).copy()
        np.clip(out[..., 0], -self.a_max, 0.0, out=out[..., 0])
        return out

    def predict_batch(self, features, states=None, shapes=None) -> np.ndarray:
        return self._bounded(self.forward(features))

    def actions(self, world: WorldState, target_id) -> np.ndarray:
        return self._bounded(self.forward(featurize(world, target_id)[None]))[0]

    def copy(self) -> "PredictorModel":
        return PredictorModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                              self.a_max)

    def to_dict(self) -> dict:
        return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                "dims": list(self.dims), "a_max": self.a_max,
                "weights": [w.ravel().tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValidationError("not a predictor checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {d.get('version')}")
        dims = d["dims"]
        ws = [np.array(w, dtype=float).reshape(i, o)
              for w, i, o in zip(d["weights"], dims[:-1], dims[1:])]
        bs = [np.array(b, dtype=float) for b in d["biases"]]
        model = cls(ws, bs, float(d["a_max"]))
        if not all(np.isfinite(p).all() for p in model.params()):
            raise ValidationError("checkpoint has non-finite parameters")
        return model

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def load_model(path) -> PredictorModel:
    with open(path) as fh:
        return PredictorModel.from_dict(json.load(fh))


@dataclass(frozen=True)
class OracleModel:
    """Stand-in for a trained model that returns the analytic labels."""

    proc: SafetyProcedure = field(default_factory=default_procedure)

    def predict_batch(self, features, states, shapes) -> np.ndarray:
        out = []
        for (heading, speed), (length, width, wb) in zip(states, shapes):
            st = ActorState(0.0, 0.0, heading, speed)
            out.append(oracle_action_set(st, self.proc, VehicleShape(length, width, wb)))
        return np.array(out)

    def actions(self, world: WorldState, target_id) -> np.ndarray:
        st, sh = world.actor(target_id)
        return oracle_action_set(st, self.proc, sh)


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 64
    lr: float = 1e-2
    momentum: float = 0.9
    epochs: int = 50
    seed: int = 0


def train(data: Dataset, hyper: TrainConfig = TrainConfig(), log_path=None) -> tuple:
    """Mini-batch SGD with momentum. Returns (best-validation model, log rows)."""
    if len(data.train) == 0:
        raise ValidationError("training split is empty")
    xt, yt = data.features[data.train], data.labels[data.train]
    val_idx = data.val if len(data.val) else data.train
    xv, yv = data.features[val_idx], data.labels[val_idx]
    model = PredictorModel.init(hyper.seed, (data.features.shape[1],) + LAYERS[1:])
    rng = np.random.default_rng(hyper.seed + 1)
    params = model.params()
    vel = [np.zeros_like(p) for p in params]
    best, best_val, log = model.copy(), math.inf, []
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(xt))
        total = 0.0
        for i in range(0, len(order), hyper.batch):
            b = order[i:i + hyper.batch]
            loss, grads = model.loss_and_grads(xt[b], yt[b])
            if not math.isfinite(loss):
                raise TrainingError(f"training loss became non-finite in epoch {epoch}", epoch)
            total += loss * len(b)
            for p, v, g in zip(params, vel, grads):
                v *= hyper.momentum
                v -= hyper.lr * g
                p += v
        train_loss = total / len(xt)
        val_loss = model.loss(xv, yv)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(f"training loss became non-finite in epoch {epoch}", epoch)
        log.append((epoch, train_loss, val_loss))
        if val_loss < best_val:
            best, best_val = model.copy(), val_loss
    if log_path:
        write_training_log(log, log_path)
    return best, log


def write_training_log(log, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in log:
            w.writerow([epoch, repr(tr), repr(va)])


def constant_baseline_loss(data: Dataset) -> float:
    """Validation loss of predicting the training-label mean everywhere."""
    mean = data.labels[data.train].mean(axis=0)
    err = data.labels[data.val] - mean
    return float((err * err).mean())


def gradient_check(model: PredictorModel, x: np.ndarray, y: np.ndarray, n_params: int = 20,
                   step: float = 1e-5, seed: int = 0) -> float:
    """Largest relative error between backprop and central finite differences."""
    _, grads = model.loss_and_grads(x, y)
    params = model.params()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_params):
        k = int(rng.integers(len(params)))
        p = params[k]
        idx = tuple(int(rng.integers(d)) for d in p.shape)
        old = p[idx]
        p[idx] = old + step
        up = model.loss(x, y)
        p[idx] = old - step
        down = model.loss(x, y)
        p[idx] = old
        fd = (up - down) / (2.0 * step)
        g = grads[k][idx]
        denom = max(abs(fd), abs(g), 1e-8)
        worst = max(worst, abs(fd - g) / denom)
    return worst


# ----------------------------------------------------------------------------
# Claimed sets from predicted actions


def _origin_hulls(heading, speed, shape, actions, proc):
    st = ActorState(0.0, 0.0, heading, speed)
    return sweep_hulls(st, shape, action_groups(actions, speed, shape), proc.horizon, proc.dt)


def predict_claimed_set(model, world: WorldState, target_id, spec: GridSpec,
                        proc: SafetyProcedure | None = None) -> ClaimedSetGrid:
    """Claimed set built from the model's actions, rasterized like the analytic one."""
    proc = proc or default_procedure()
    st, sh = world.actor(target_id)
    groups = action_groups(model.actions(world, target_id), st.speed, sh)
    return ClaimedSetGrid(spec, stamp(spec, sweep_hulls(st, sh, groups, proc.horizon, proc.dt)))


def predicted_lattice_field(model, world: WorldState, target_id, cfg) -> LatticeField:
    """Lattice field of one actor using predicted instead of analytic actions."""
    st, sh = world.actor(target_id)
    groups = action_groups(model.actions(world, target_id), st.speed, sh)
    proc = cfg.procedure
    values = anchored_values(st.heading, st.speed, sh, groups, proc.horizon, proc.dt, None,
                             cfg.kernel_radius, cfg.cell, cfg.identity_kernel, cfg.supersample)
    return place_anchored(st, values, cfg.cell)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary rasters; two empty rasters score 1."""
    a, b = a.astype(bool), b.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


@dataclass(frozen=True)
class IouReport:
    mean: float
    p10: float
    values: np.ndarray


def evaluate_iou(model, data: Dataset, split: str = "val", cell: float = 0.5,
                 proc: SafetyProcedure | None = None) -> IouReport:
    """Per-example IoU of predicted against analytic claimed sets."""
    proc = proc or default_procedure()
    idx = data.val if split == "val" else data.train
    if len(idx) == 0:
        raise ValidationError(f"{split} split is empty")
    preds = model.predict_batch(data.features[idx], data.states[idx], data.shapes[idx])
    out = []
    for j, i in enumerate(idx):
        heading, speed = data.states[i]
        sh = VehicleShape(*data.shapes[i])
        st = ActorState(0.0, 0.0, heading, speed)
        pts = _origin_hulls(heading, speed, sh, preds[j], proc)
        half = max(float(np.abs(pts).max()), proc.reach(speed) + sh.half_diagonal) + 2 * cell
        spec = GridSpec.centered(0.0, 0.0, 2 * half, 2 * half, cell)
        truth = claimed_set(st, sh, proc, spec).occupancy
        out.append(iou(stamp(spec, pts), truth))
    values = np.array(out)
    return IouReport(float(values.mean()), float(np.percentile(values, 10)), values)
