"""Scenario encoder/decoder and its training loop.

The encoder maps a scenario to a latent vector z: a strided convolution
stack reads the infrastructure image into z_I, a small self-attention
layer with a learned summary token reads the trajectory into z_T, and a
two-layer dense head fuses [z_T, z_I] into z.  The decoder expands z back
to a two-channel raster matching the reconstruction target.

Training runs one quadruplet per step (batch size 1): all four scenarios
are encoded, the quadruplet losses act on the latent distances, the
anchor alone is decoded and scored against its reconstruction target,
and a single Adam update is applied.  Everything is float64 end to end.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .losses import (
    LossWeights,
    MarginParams,
    QuadrupletDistances,
    metric_losses,
    sparse_reconstruction_loss,
)
from .mining import build_index, mine_epoch
from .scenario import Dataset, Scenario, build_reconstruction_target

__all__ = [
    "NetworkConfig",
    "ModelState",
    "TrainStepResult",
    "TrainEpoch",
    "initialize",
    "forward_encode",
    "forward_decode",
    "embed_dataset",
    "ordering_satisfaction",
    "train_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "scenmetric-checkpoint"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Small random biases keep relu preactivations away from exact zero, where
# finite differences and subgradients disagree.
BIAS_STD = 0.01


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters.

    The fusion head always consumes latent_t + latent_i features, and the
    image branch halves the spatial size once per conv block, so
    image_size must be divisible by 2 ** len(conv_channels).
    """

    image_size: int = 64
    latent_i: int = 64
    latent_t: int = 16
    latent: int = 64
    conv_channels: tuple = (8, 16, 16, 16)
    attn_width: int = 16
    attn_heads: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        for name in ("image_size", "latent_i", "latent_t", "latent", "attn_width", "attn_heads"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.conv_channels:
            raise ValueError("conv_channels must not be empty")
        if any(c < 1 for c in self.conv_channels):
            raise ValueError("conv_channels must be positive")
        factor = 2 ** len(self.conv_channels)
        if self.image_size % factor != 0:
            raise ValueError(
                f"image_size {self.image_size} is not divisible by {factor} "
                f"({len(self.conv_channels)} halving conv blocks)"
            )
        if self.attn_width % self.attn_heads != 0:
            raise ValueError("attn_width must be divisible by attn_heads")

    @property
    def fusion_width(self) -> int:
        return self.latent_t + self.latent_i

    @property
    def base_size(self) -> int:
        """Spatial size at the bottleneck between encoder and decoder."""
        return self.image_size // 2 ** len(self.conv_channels)


@dataclass
class ModelState:
    """Parameters plus optimizer state; everything needed to resume."""

    config: NetworkConfig
    params: dict
    adam_m: dict
    adam_v: dict
    step: int = 0


@dataclass(frozen=True)
class TrainStepResult:
    loss_g: float
    loss_r: float
    loss_t: float
    loss_rec: float
    loss_total: float


@dataclass(frozen=True)
class TrainEpoch:
    epoch: int
    loss_g: float
    loss_r: float
    loss_t: float
    loss_rec: float
    loss_total: float
    ordering_satisfaction: float


def _decoder_channels(config: NetworkConfig) -> list:
    chain = [config.conv_channels[-1]]
    chain.extend(reversed(config.conv_channels[:-1]))
    chain.append(2)
    return chain


def initialize(config: NetworkConfig | None = None) -> ModelState:
    """Fresh parameters from the config seed, zeroed Adam moments."""
    config = config or NetworkConfig()
    rng = np.random.default_rng(config.seed)
    width = config.attn_width
    flat = config.conv_channels[-1] * config.base_size**2

    spec = []
    c_prev = 1
    for k, c in enumerate(config.conv_channels):
        spec.append((f"enc.conv{k}.w", (c, c_prev, 3, 3), np.sqrt(2.0 / (c_prev * 9))))
        spec.append((f"enc.conv{k}.b", (c,), BIAS_STD))
        c_prev = c
    spec.append(("enc.img.w", (flat, config.latent_i), np.sqrt(1.0 / flat)))
    spec.append(("enc.img.b", (config.latent_i,), BIAS_STD))
    spec.append(("enc.traj.embed.w", (5, width), np.sqrt(1.0 / 5.0)))
    spec.append(("enc.traj.embed.b", (width,), BIAS_STD))
    spec.append(("enc.traj.token", (1, width), np.sqrt(1.0 / width)))
    for part in ("q", "k", "v", "out"):
        spec.append((f"enc.attn.{part}.w", (width, width), np.sqrt(1.0 / width)))
        spec.append((f"enc.attn.{part}.b", (width,), BIAS_STD))
    spec.append(("enc.traj.out.w", (width, config.latent_t), np.sqrt(1.0 / width)))
    spec.append(("enc.traj.out.b", (config.latent_t,), BIAS_STD))
    spec.append(("fuse.h.w", (config.fusion_width, config.latent), np.sqrt(1.0 / config.fusion_width)))
    spec.append(("fuse.h.b", (config.latent,), BIAS_STD))
    spec.append(("fuse.out.w", (config.latent, config.latent), np.sqrt(1.0 / config.latent)))
    spec.append(("fuse.out.b", (config.latent,), BIAS_STD))
    spec.append(("dec.in.w", (config.latent, flat), np.sqrt(2.0 / config.latent)))
    spec.append(("dec.in.b", (flat,), BIAS_STD))
    chain = _decoder_channels(config)
    for k, (cin, cout) in enumerate(zip(chain[:-1], chain[1:])):
        spec.append((f"dec.conv{k}.w", (cin, cout, 4, 4), np.sqrt(2.0 / (cin * 16))))
        spec.append((f"dec.conv{k}.b", (cout,), BIAS_STD))

    params = {}
    for name, shape, std in spec:
        values = rng.normal(0.0, std, size=shape)
        params[name] = ad.Tensor(values, requires_grad=True)
    adam_m = {name: np.zeros(t.values.shape) for name, t in params.items()}
    adam_v = {name: np.zeros(t.values.shape) for name, t in params.items()}
    return ModelState(config=config, params=params, adam_m=adam_m, adam_v=adam_v, step=0)


# ------------------------------------------------------------- forward


def _position_encoding(n: int, width: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(width, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / width)
    pe = np.where(idx.astype(np.int64) % 2 == 0, np.sin(angles), np.cos(angles))
    return pe


def _image_input(scenario: Scenario) -> np.ndarray:
    return scenario.image.pixels.astype(np.float64)[None, :, :]


def _trajectory_input(scenario: Scenario) -> np.ndarray:
    """Per-timestep features: (x, y, t) scaled to image-relative units and
    unit time, plus the local velocity (backward difference) in those units.

    A single attention layer cannot synthesize pairwise position
    differences on its own, so the speed profile is exposed directly.
    """
    pts = scenario.trajectory.points.astype(np.float64)
    half = scenario.image.extent / 2.0
    t = pts[:, 2]
    span = t[-1] - t[0]
    t_norm = (t - t[0]) / span
    xy = pts[:, :2] / half
    vel = np.zeros_like(xy)
    if pts.shape[0] > 1:
        vel[1:] = np.diff(xy, axis=0) / np.diff(t_norm)[:, None]
        vel[0] = vel[1]
    return np.column_stack([xy, t_norm, vel])


def _dense(x, params, name):
    return ad.add(ad.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def _encode(params, config: NetworkConfig, scenario: Scenario):
    if scenario.image.size != config.image_size:
        raise ValueError(
            f"image size {scenario.image.size} does not match configured "
            f"size {config.image_size}"
        )
    h = ad.Tensor(_image_input(scenario))
    for k in range(len(config.conv_channels)):
        h = ad.relu(
            ad.conv2d(h, params[f"enc.conv{k}.w"], params[f"enc.conv{k}.b"], stride=2, padding=1)
        )
    flat = ad.reshape(h, (1, -1))
    z_i = ad.tanh(_dense(flat, params, "enc.img"))

    traj = _trajectory_input(scenario)
    e = _dense(ad.Tensor(traj), params, "enc.traj.embed")
    e = ad.add(e, ad.Tensor(_position_encoding(traj.shape[0], config.attn_width)))
    seq = ad.concat([params["enc.traj.token"], e], axis=0)
    q = _dense(seq, params, "enc.attn.q")
    k_ = _dense(seq, params, "enc.attn.k")
    v = _dense(seq, params, "enc.attn.v")
    dh = config.attn_width // config.attn_heads
    heads = []
    for i in range(config.attn_heads):
        cols = (slice(None), slice(i * dh, (i + 1) * dh))
        scores = ad.mul(
            ad.matmul(ad.tslice(q, cols), ad.transpose(ad.tslice(k_, cols))),
            ad.Tensor(1.0 / np.sqrt(dh)),
        )
        heads.append(ad.matmul(ad.softmax(scores, axis=-1), ad.tslice(v, cols)))
    mixed = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
    attended = _dense(mixed, params, "enc.attn.out")
    token_out = ad.tslice(attended, (slice(0, 1), slice(None)))
    z_t = ad.tanh(_dense(token_out, params, "enc.traj.out"))

    fused = ad.concat([z_t, z_i], axis=1)
    hidden = ad.tanh(_dense(fused, params, "fuse.h"))
    return _dense(hidden, params, "fuse.out")


def _decode(params, config: NetworkConfig, z):
    h = ad.relu(_dense(z, params, "dec.in"))
    h = ad.reshape(h, (config.conv_channels[-1], config.base_size, config.base_size))
    n_blocks = len(_decoder_channels(config)) - 1
    for k in range(n_blocks):
        h = ad.conv_transpose2d(
            h, params[f"dec.conv{k}.w"], params[f"dec.conv{k}.b"], stride=2, padding=1
        )
        h = ad.sigmoid(h) if k == n_blocks - 1 else ad.relu(h)
    return h  # (2, S, S)


def forward_encode(state: ModelState, scenario: Scenario) -> np.ndarray:
    """Latent vector z of one scenario, shape (latent,)."""
    z = _encode(state.params, state.config, scenario)
    return z.values[0].copy()


def forward_decode(state: ModelState, z) -> np.ndarray:
    """Decode a latent vector to an (S, S, 2) raster in [0, 1]."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (state.config.latent,):
        raise ValueError(
            f"latent vector shape {z.shape} does not match ({state.config.latent},)"
        )
    out = _decode(state.params, state.config, ad.Tensor(z[None, :]))
    return np.moveaxis(out.values, 0, 2).copy()


def embed_dataset(state: ModelState, dataset: Dataset) -> np.ndarray:
    """Stack of per-scenario latent vectors, shape (M, latent)."""
    return np.stack([forward_encode(state, s) for s in dataset.entries])


def ordering_satisfaction(embeddings: np.ndarray, quadruplets) -> float:
    """Fraction of quadruplets with d_pp < d_pn < d_nn in latent space."""
    if not quadruplets:
        raise ValueError("no quadruplets given")
    emb = np.asarray(embeddings, dtype=np.float64)
    good = 0
    for quad in quadruplets:
        a = emb[quad.anchor]
        d_pp = float(((a - emb[quad.pp]) ** 2).sum())
        d_pn = float(((a - emb[quad.pn]) ** 2).sum())
        d_nn = float(((a - emb[quad.nn]) ** 2).sum())
        if d_pp < d_pn < d_nn:
            good += 1
    return good / len(quadruplets)


# ------------------------------------------------------------- training


def _sqdist(a, b):
    d = ad.sub(a, b)
    return ad.tsum(ad.mul(d, d))


def _loss_graph(state: ModelState, dataset: Dataset, quad, margins, weights, target=None):
    """Build the full quadruplet objective as a graph; returns (total, terms)."""
    for idx in (quad.anchor, quad.pp, quad.pn, quad.nn):
        if not (0 <= idx < len(dataset)):
            raise ValueError(f"scenario index {idx} out of range")

    params, config = state.params, state.config
    anchor = dataset.entries[quad.anchor]
    z_a = _encode(params, config, anchor)
    z_pp = _encode(params, config, dataset.entries[quad.pp])
    z_pn = _encode(params, config, dataset.entries[quad.pn])
    z_nn = _encode(params, config, dataset.entries[quad.nn])

    d_pp = _sqdist(z_a, z_pp)
    d_pn = _sqdist(z_a, z_pn)
    d_nn = _sqdist(z_a, z_nn)
    dist = QuadrupletDistances(float(d_pp.values), float(d_pn.values), float(d_nn.values))
    (l_g_v, l_r_v, l_t_v), grad = metric_losses(dist, quad.s_t, margins)
    nodes = []
    for row, value in zip(grad, (l_g_v, l_r_v, l_t_v)):
        nodes.append(ad.custom_scalar(value, [d_pp, d_pn, d_nn], list(row)))
    l_g, l_r, l_t = nodes

    decoded = _decode(params, config, z_a)
    if target is None:
        target = build_reconstruction_target(anchor)
    pred = np.moveaxis(decoded.values, 0, 2)
    l_rec_v, rec_grad = sparse_reconstruction_loss(target, pred, weights)
    l_rec = ad.custom_scalar(l_rec_v, [decoded], [np.moveaxis(rec_grad, 2, 0)])

    metric = ad.add(
        ad.add(ad.mul(ad.Tensor(weights.beta_g), l_g), ad.mul(ad.Tensor(weights.beta_r), l_r)),
        ad.mul(ad.Tensor(weights.beta_t), l_t),
    )
    total = ad.add(
        ad.mul(ad.Tensor(weights.beta_m), metric), ad.mul(ad.Tensor(weights.beta_rec), l_rec)
    )
    result = TrainStepResult(
        loss_g=l_g_v,
        loss_r=l_r_v,
        loss_t=l_t_v,
        loss_rec=l_rec_v,
        loss_total=float(total.values),
    )
    return total, result


def train_step(
    state: ModelState,
    dataset: Dataset,
    quad,
    margins: MarginParams | None = None,
    weights: LossWeights | None = None,
    lr: float = 1e-3,
    target=None,
) -> TrainStepResult:
    """One quadruplet forward/backward pass and one Adam update.

    Raises RuntimeError on non-finite losses or gradients; parameters are
    left untouched in that case.
    """
    margins = margins or MarginParams()
    weights = weights or LossWeights()
    if not lr > 0:
        raise ValueError("lr must be positive")
    total, result = _loss_graph(state, dataset, quad, margins, weights, target)
    params = state.params
    if not np.isfinite(result.loss_total):
        raise RuntimeError(
            f"divergence at step {state.step + 1}: non-finite loss "
            f"(l_g={result.loss_g}, l_r={result.loss_r}, "
            f"l_t={result.loss_t}, l_rec={result.loss_rec})"
        )

    total.backward()
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        if not np.all(np.isfinite(g)):
            for q in params.values():
                q.grad = None
            raise RuntimeError(
                f"divergence at step {state.step + 1}: non-finite gradient "
                f"in {name} (loss_total={result.loss_total})"
            )
        grads[name] = g

    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1**t
    bias2 = 1.0 - ADAM_BETA2**t
    for name in sorted(params):
        g = grads[name]
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
        params[name].values -= lr * update
        params[name].grad = None
    return result


def train(
    dataset: Dataset,
    network: NetworkConfig | None = None,
    margins: MarginParams | None = None,
    weights: LossWeights | None = None,
    epochs: int = 30,
    lr: float = 1e-3,
    strategy: str = "random",
    seed: int = 0,
    on_epoch=None,
):
    """Full training run; returns (state, per-epoch log).

    Each epoch mines one quadruplet per eligible anchor, applies one Adam
    update per quadruplet, then measures ordering satisfaction on a fresh
    independently mined set.  Deterministic for fixed inputs and seed.
    `lr` is either a constant or a schedule mapping epoch -> step size.
    `on_epoch(state, entry)`, if given, runs after every completed epoch;
    callers use it to persist progress before a later epoch can fail.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    state = initialize(network)
    if epochs == 0:
        return state, []
    index = build_index(dataset)
    targets = [build_reconstruction_target(s) for s in dataset.entries]
    log = []
    for epoch in range(epochs):
        step_lr = float(lr(epoch)) if callable(lr) else float(lr)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch, 0)))
        quads = mine_epoch(index, strategy, rng)
        sums = np.zeros(5)
        for quad in quads:
            res = train_step(
                state,
                dataset,
                quad,
                margins,
                weights,
                lr=step_lr,
                target=targets[quad.anchor],
            )
            sums += (res.loss_g, res.loss_r, res.loss_t, res.loss_rec, res.loss_total)
        means = sums / len(quads)
        fresh_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch, 1)))
        fresh = mine_epoch(index, strategy, fresh_rng)
        satisfaction = ordering_satisfaction(embed_dataset(state, dataset), fresh)
        entry = TrainEpoch(
            epoch=epoch,
            loss_g=float(means[0]),
            loss_r=float(means[1]),
            loss_t=float(means[2]),
            loss_rec=float(means[3]),
            loss_total=float(means[4]),
            ordering_satisfaction=satisfaction,
        )
        log.append(entry)
        logger.info(
            "epoch %d: total %.4f (g %.4f, r %.4f, t %.4f, rec %.4f), ordering %.3f",
            entry.epoch,
            entry.loss_total,
            entry.loss_g,
            entry.loss_r,
            entry.loss_t,
            entry.loss_rec,
            entry.ordering_satisfaction,
        )
        if on_epoch is not None:
            on_epoch(state, entry)
    return state, log


# ----------------------------------------------------------- checkpoint


def save_checkpoint(state: ModelState, path) -> None:
    """Header line (JSON) followed by named float64 arrays, little endian."""
    arrays = []
    blobs = []
    for kind, table in (("param", state.params), ("adam_m", state.adam_m), ("adam_v", state.adam_v)):
        for name in sorted(table):
            values = table[name].values if kind == "param" else table[name]
            arrays.append({"name": f"{kind}:{name}", "shape": list(values.shape)})
            blobs.append(np.ascontiguousarray(values, dtype="<f8").tobytes())
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(state.config),
        "step": state.step,
        "arrays": arrays,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> ModelState:
    """Exact inverse of save_checkpoint."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError("unsupported checkpoint: missing header")
    try:
        header = json.loads(raw[:newline].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"unsupported checkpoint: bad header ({exc})") from exc
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint: unknown format or version")
    cfg = dict(header["config"])
    cfg["conv_channels"] = tuple(cfg["conv_channels"])
    config = NetworkConfig(**cfg)

    offset = newline + 1
    tables = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["arrays"]:
        kind, _, name = entry["name"].partition(":")
        if kind not in tables or not name:
            raise ValueError(f"unsupported checkpoint: bad array name {entry['name']!r}")
        shape = tuple(int(n) for n in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        tables[kind][name] = values.reshape(shape).astype(np.float64)
    if offset != len(raw):
        raise ValueError("unsupported checkpoint: trailing bytes")
    expected = initialize(config)
    for table in ("param", "adam_m", "adam_v"):
        if set(tables[table]) != set(expected.params):
            raise ValueError("unsupported checkpoint: parameter set mismatch")
    params = {
        name: ad.Tensor(tables["param"][name], requires_grad=True)
        for name in tables["param"]
    }
    return ModelState(
        config=config,
        params=params,
        adam_m=tables["adam_m"],
        adam_v=tables["adam_v"],
        step=int(header["step"]),
    )
