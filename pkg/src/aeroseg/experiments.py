"""Training, full-image prediction and the pathway-blanking ablation.

Training draws mini-batches of co-centred patch triples from a pool of scenes:
a fixed share of centres hit the target class, a share of the negatives sit
on decoys (hard negatives) and the rest are plain background.  Every epoch the
model is scored on the validation scenes (best mean F over a threshold grid);
the best parameters are kept and training stops after ``patience`` epochs
without improvement.
"""
import hashlib
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .architectures import Network, get_profile, parse_kv, profile_from_text, profile_to_text
from .combiner import expand_tiles
from .data import (
    CenterPool,
    GLOBAL,
    LOCAL,
    OUT,
    SamplingError,
    grid_centers,
    to_nchw,
    window,
)
from .data.patches import _window_any
from .eval import best_row, f_measure, relaxed_scores, sweep_many, threshold_grid
from .nn import cross_entropy_loss, load_checkpoint, save_checkpoint, sgd_momentum_step

TARGETS = ("building", "road", "meadow", "water", "forest")
BLANKS = ("none", "local", "global")


class DivergenceError(RuntimeError):
    """Loss became NaN/inf; ``state`` holds the last parameters that gave a finite loss."""

    def __init__(self, msg, state, log):
        super().__init__(msg)
        self.state = state
        self.log = log


@dataclass
class TrainConfig:
    batch_size: int = 10
    momentum: float = 0.9
    lr: float = 1e-4
    weight_decay: float = 5e-4
    epochs: int = 4
    iters_per_epoch: int = 500
    seed: int = 0
    profile: str = "desk"
    mode: str = "dual"             # dual | local-only | global-only | ra-classifier
    target: str = "building"       # metadata class that is positive
    positive_fraction: float = 0.5
    hard_negatives: float = 0.25   # share of the negatives centred on decoys
    patience: int = 3
    lr_decay: float = 1.0          # multiply lr by this after every epoch
    val_step: float = 0.05         # threshold grid step for validation
    rho: int = 3
    ra_min_buildings: int = 2      # residential label: buildings in the 256 window

    def validate(self):
        for k in ("batch_size", "epochs", "iters_per_epoch", "patience"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be >= 1")
        for k in ("momentum", "lr", "weight_decay"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        if not 0 <= self.positive_fraction <= 1 or not 0 <= self.hard_negatives <= 1:
            raise ValueError("fractions must lie in [0, 1]")
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        get_profile(self.profile)
        return self

    def to_text(self):
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text):
        kv = parse_kv(text)
        base = cls()
        out = {}
        for f in fields(cls):
            if f.name in kv:
                out[f.name] = type(getattr(base, f.name))(kv.pop(f.name))
        if kv:
            raise ValueError(f"unknown config keys: {sorted(kv)}")
        return cls(**out).validate()

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()


@dataclass
class RunLog:
    seed: int
    config_hash: str
    losses: list = field(default_factory=list)   # summed loss per mini-batch
    val_f: list = field(default_factory=list)    # best mean F per epoch
    val_threshold: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    wall_clock: float = 0.0

    def digest(self):
        """Hash of everything except wall-clock time."""
        h = hashlib.sha256(self.config_hash.encode())
        h.update(np.asarray(self.losses, np.float64).tobytes())
        h.update(np.asarray(self.val_f, np.float64).tobytes())
        h.update(f"{self.best_epoch}:{self.stopped_early}".encode())
        return h.hexdigest()

    def write_losses(self, path):
        with open(path, "w") as f:
            f.write("iteration,loss\n")
            for i, v in enumerate(self.losses):
                f.write(f"{i},{v:.6f}\n")


@dataclass
class TrainResult:
    net: Network
    log: RunLog
    best_state: dict


# -- targets ---------------------------------------------------------------------

def target_mask(scene, target="building"):
    return scene.mask if target == "building" else scene.class_mask(target)


def residential_map(scene, min_count=2, size=GLOBAL):
    """Per-centre flag: at least ``min_count`` buildings touch the size x size window."""
    count = np.zeros(scene.shape, np.int32)
    for r in scene.rects("building"):
        fp = np.zeros(scene.shape, bool)
        r.paint(fp)
        count += _window_any(fp, size)
    return count >= min_count


class _RAPool:
    """Centre pool for the residential classifier: positive = residential centre."""

    def __init__(self, scene, min_count):
        res = residential_map(scene, min_count)
        h = GLOBAL // 2
        valid = np.zeros(scene.shape, bool)
        valid[h:scene.shape[0] - h + 1, h:scene.shape[1] - h + 1] = True
        self.res = res
        self.positive = np.argwhere(res & valid)
        self.decoy = np.zeros((0, 2), int)
        self.plain = np.argwhere(~res & valid)

    draw = CenterPool.draw


# -- batches ----------------------------------------------------------------------

class BatchSampler:
    """Seeded mini-batch source over a list of scenes."""

    def __init__(self, scenes, config, rng):
        self.scenes = scenes
        self.cfg = config
        self.rng = rng
        self.ra = config.mode == "ra-classifier"
        if self.ra:
            self.pools = [_RAPool(s, config.ra_min_buildings) for s in scenes]
            self.targets = [p.res for p in self.pools]
        else:
            self.targets = [target_mask(s, config.target) for s in scenes]
            self.pools = [CenterPool(s, t) for s, t in zip(scenes, self.targets)]
        self.has = {k: [i for i, p in enumerate(self.pools) if len(getattr(p, k))]
                    for k in ("positive", "decoy", "plain")}
        if not self.has["plain"] and not self.has["positive"]:
            raise SamplingError("no scene offers any valid centre")

    def _kind(self):
        u = self.rng.random()
        pf = self.cfg.positive_fraction
        if u < pf:
            kind = "positive"
        elif u < pf + (1 - pf) * self.cfg.hard_negatives:
            kind = "decoy"
        else:
            kind = "plain"
        # fall back when no scene offers that kind
        for k in (kind, "plain", "positive"):
            if self.has[k]:
                return k

    def draw(self):
        picks = []
        for _ in range(self.cfg.batch_size):
            kind = self._kind()
            k = self.has[kind][self.rng.integers(len(self.has[kind]))]
            picks.append((k, self.pools[k].draw(kind, self.rng)))
        return picks

    def arrays(self, picks, net):
        loc = glob = None
        if net.uses_local:
            loc = to_nchw([window(self.scenes[k].image, p, LOCAL) for k, p in picks])
        if net.uses_global:
            glob = to_nchw([window(self.scenes[k].image, p, GLOBAL) for k, p in picks])
        if self.ra:
            y = np.array([[self.targets[k][p]] for k, p in picks], np.float32)
        else:
            y = np.stack([window(self.targets[k], p, OUT).reshape(-1) for k, p in picks]).astype(np.float32)
        return loc, glob, y


# -- training ------------------------------------------------------------------------

def train(config, train_scenes, val_scenes, progress=None):
    """Train from scratch; returns the network loaded with its best-validation parameters."""
    cfg = config.validate()
    rng = np.random.default_rng(cfg.seed)
    net = Network(cfg.profile, cfg.mode, np.float32, seed=cfg.seed)
    sampler = BatchSampler(list(train_scenes), cfg, rng)
    log = RunLog(cfg.seed, cfg.digest())
    best_state = net.state()
    best_f = -1.0
    stale = 0
    lr = cfg.lr
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        for _ in range(cfg.iters_per_epoch):
            loc, glob, y = sampler.arrays(sampler.draw(), net)
            good = net.state()
            rep = cross_entropy_loss(net.forward(loc, glob), y)
            if not np.isfinite(rep.value):
                log.wall_clock = time.perf_counter() - t0
                raise DivergenceError(f"loss became {rep.value} at iteration {len(log.losses)}", good, log)
            net.backward(rep.grad)
            sgd_momentum_step(net.params, net.params.grads, lr, cfg.momentum, cfg.weight_decay)
            log.losses.append(float(rep.value))
        f, th = validation_score(net, val_scenes, cfg)
        log.val_f.append(f)
        log.val_threshold.append(th)
        if progress:
            progress(epoch, log)
        if f > best_f:
            best_f, best_state, stale = f, net.state(), 0
            log.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                log.stopped_early = epoch < cfg.epochs - 1
                break
        lr *= cfg.lr_decay
    net.load_state(best_state)
    log.wall_clock = time.perf_counter() - t0
    return TrainResult(net, log, best_state)


def validation_score(net, scenes, cfg):
    """(best mean F, its threshold) on the validation scenes."""
    scenes = list(scenes)
    if not scenes:
        raise ValueError("empty validation set")
    grid = threshold_grid(cfg.val_step)
    if net.mode == "ra-classifier":
        pairs = [(ra_map(net, s.image), ra_truth_map(s, cfg.ra_min_buildings)) for s in scenes]
        rho = 0
    else:
        pairs = [(predict_image(net, s.image), target_mask(s, cfg.target)) for s in scenes]
        rho = cfg.rho
    row = best_row(sweep_many(pairs, grid, rho))
    return row.f_measure, row.threshold


# -- inference ---------------------------------------------------------------------------

def _blank_patch(image, size):
    """Constant patch holding the image's per-channel means."""
    img = np.asarray(image, np.float64)
    means = []
    for c in range(3):
        ch = img[..., c]
        lo, hi = ch.min(), ch.max()
        # a constant channel keeps its exact value (the float mean may round)
        means.append(lo if lo == hi else ch.mean())
    return np.broadcast_to(np.array(means), (size, size, 3))


def _tile_outputs(net, image, centers, batch, blank):
    if blank not in BLANKS:
        raise ValueError(f"blank must be one of {BLANKS}")
    if blank != "none" and net.mode != "dual":
        raise ValueError("pathway blanking needs a dual-stream network")
    outs = []
    for k in range(0, len(centers), batch):
        chunk = centers[k:k + batch]
        loc = glob = None
        if net.uses_local:
            src = [_blank_patch(image, LOCAL)] * len(chunk) if blank == "local" else \
                [window(image, p, LOCAL) for p in chunk]
            loc = to_nchw(src)
        if net.uses_global:
            src = [_blank_patch(image, GLOBAL)] * len(chunk) if blank == "global" else \
                [window(image, p, GLOBAL) for p in chunk]
            glob = to_nchw(src)
        outs.append(net.forward(loc, glob))
    return np.concatenate(outs)


def predict_image(net, image, batch=64, blank="none", border=120):
    """Per-pixel probabilities from grid tiles; NaN marks the excluded border."""
    image = np.asarray(image)
    centers, _ = grid_centers(image.shape, border, OUT)
    if not centers:
        raise ValueError(f"image {image.shape[:2]} is too small for the {2 * border + OUT}px minimum")
    if net.mode == "ra-classifier":
        raise ValueError("use ra_map for the residential classifier")
    out = np.full(image.shape[:2], np.nan, np.float32)
    h = OUT // 2
    probs = _tile_outputs(net, image, centers, batch, blank)
    for (i, j), q in zip(centers, probs):
        out[i - h:i + h, j - h:j + h] = q.reshape(OUT, OUT)
    return out


def complementarity(net, image, blank="none", batch=64):
    """Prediction with one pathway fed the image's per-channel mean colour."""
    return predict_image(net, image, batch, blank)


def ra_map(net, image, batch=64, border=120):
    """Residential probability per grid tile, expanded over each tile (NaN border)."""
    if net.mode != "ra-classifier":
        raise ValueError("ra_map needs a residential classifier")
    centers, _ = grid_centers(np.asarray(image).shape, border, OUT)
    if not centers:
        raise ValueError("image too small for the prediction grid")
    probs = _tile_outputs(net, image, centers, batch, "none")
    return expand_tiles(probs[:, 0], centers, np.asarray(image).shape[:2], OUT)


def ra_truth_map(scene, min_count=2, border=120):
    centers, _ = grid_centers(scene.shape, border, OUT)
    res = residential_map(scene, min_count)
    return np.nan_to_num(expand_tiles([res[p] for p in centers], centers, scene.shape, OUT)) > 0.5


# -- ablation metrics -------------------------------------------------------------------------

def decoy_false_positives(prob, scene, threshold):
    """Decoy pixels predicted positive (inside the predicted region)."""
    with np.errstate(invalid="ignore"):
        return int(((np.asarray(prob) >= threshold) & (scene.decoy_mask > 0)).sum())


def boundary_f(prob, scene, threshold, margin=4):
    """Mean exact-match (rho=0) F over windows around each reference building.

    Each window is the building's box grown by ``margin``; only buildings whose
    window lies in the predicted region count.
    """
    prob = np.asarray(prob)
    gt = scene.mask.astype(bool)
    fs = []
    for r in scene.rects("building"):
        b = r.bbox(scene.shape)
        if b is None:
            continue
        r0, c0 = b[0] - margin, b[1] - margin
        r1, c1 = b[2] + margin + 1, b[3] + margin + 1
        if r0 < 0 or c0 < 0 or r1 > prob.shape[0] or c1 > prob.shape[1]:
            continue
        win = prob[r0:r1, c0:c1]
        if not np.isfinite(win).all():
            continue
        fs.append(f_measure(*relaxed_scores(win >= threshold, gt[r0:r1, c0:c1], 0)))
    if not fs:
        raise ValueError("no reference building inside the predicted region")
    return float(np.mean(fs))


# -- model files -------------------------------------------------------------------------------

def save_model(path, net):
    """Checkpoint plus a ``.cfg`` sidecar holding mode and profile."""
    save_checkpoint(path, net.state())
    with open(str(path) + ".cfg", "w") as f:
        f.write(f"mode={net.mode}\n")
        f.write(profile_to_text(net.profile))


def load_model(path):
    with open(str(path) + ".cfg") as f:
        text = f.read()
    kv = parse_kv(text)
    mode = kv.pop("mode")
    profile = profile_from_text("\n".join(f"{k}={v}" for k, v in kv.items()))
    net = Network(profile, mode, np.float32)
    net.load_state(load_checkpoint(path))
    return net

