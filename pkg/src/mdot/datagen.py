"""Benchmark instances: synthetic point clouds with entropy-targeted marginals, and MNIST.

All randomness comes from :class:`numpy.random.Generator` seeded explicitly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .core import Marginals, cost_matrix, entropy

FLOOR = 1e-8
BATCH = 256
BISECTION_ROUNDS = 64
LOG_CONC_RANGE = (-10.0, 10.0)

MNIST_SIDE = 28
IDX_IMAGE_MAGIC = 0x00000803
MNIST_NOISE = 1e-6


class GenerationError(RuntimeError):
    pass


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    m: int
    entropy_fraction: float
    entropy_tolerance: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.m < 1:
            raise ValueError("need n >= 2 and m >= 1")
        if not 0 < self.entropy_fraction < 1:
            raise ValueError("entropy fraction must lie in (0, 1)")
        if not self.entropy_tolerance > 0:
            raise ValueError("entropy tolerance must be positive")


@dataclass(frozen=True)
class MnistSpec:
    images_path: str
    pair_count: int = 512
    noise_seed: int = 0

    def __post_init__(self):
        if self.pair_count < 1:
            raise ValueError("pair_count must be at least 1")


def sphere_points(count, m, rng):
    x = rng.standard_normal((count, m))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def pairwise_distances(x, y):
    return np.sqrt(np.maximum(((x[:, None, :] - y[None, :, :]) ** 2).sum(-1), 0.0))


def raw_distances(n, m, seed):
    """Distances between the first and second halves of ``2n`` points on the unit sphere."""
    rng = np.random.default_rng(seed)
    pts = sphere_points(2 * n, m, rng)
    return pairwise_distances(pts[:n], pts[n:])


def sample_cost_matrix(n, m, seed):
    """Shift distances to start at 0 and scale them to end at 1."""
    if n < 2 or m < 1:
        raise ValueError("need n >= 2 and m >= 1")
    D = raw_distances(n, m, seed)
    D = D - D.min()
    top = D.max()
    if not top > 0:
        raise GenerationError("degenerate point sample: all distances equal")
    return cost_matrix(D / top)


def floor_and_normalize(p, floor=FLOOR):
    """Add ``floor`` everywhere if any entry is below it, then renormalize (row-wise)."""
    p = np.asarray(p, dtype=np.float64)
    low = (p < floor).any(axis=-1, keepdims=True)
    p = np.where(low, p + floor, p)
    return p / p.sum(axis=-1, keepdims=True)


def _entropies(batch):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(batch > 0, batch * np.log(batch), 0.0)
    return -terms.sum(axis=1)


def sample_entropy_marginal(n, target, tolerance=0.01, seed=0, rng=None, return_log_conc=False):
    """Draw a distribution on the simplex whose entropy (nats) is within ``tolerance`` of ``target``.

    Bisects on the log of a symmetric Dirichlet concentration. Each round draws
    a batch; the first sample inside the window wins, otherwise the batch
    median steers the bisection.
    """
    if not 0 < target < np.log(n):
        raise ValueError(f"target entropy must lie in (0, log n = {np.log(n):.4f})")
    rng = np.random.default_rng(seed) if rng is None else rng
    lo, hi = LOG_CONC_RANGE
    best, best_gap = None, np.inf
    for _ in range(BISECTION_ROUNDS):
        mid = 0.5 * (lo + hi)
        batch = rng.dirichlet(np.full(n, np.exp(mid)), size=BATCH)
        batch = floor_and_normalize(batch)
        h = _entropies(batch)
        gaps = np.abs(h - target)
        i = int(np.argmin(gaps))
        if gaps[i] < best_gap:
            best, best_gap = batch[i], gaps[i]
        if gaps[i] <= tolerance:
            r = batch[i] / batch[i].sum()
            return (r, mid) if return_log_conc else r
        if np.median(h) < target:
            lo = mid
        else:
            hi = mid
    raise GenerationError(
        f"entropy window {target:.4f}±{tolerance} not reached; best achieved "
        f"{entropy(best):.4f} nats"
    )


@dataclass
class Instance:
    C: np.ndarray
    marginals: Marginals
    header: dict

    @property
    def n(self):
        return self.C.shape[0]


def synthetic_instance(spec):
    """Cost matrix and marginal pair for one synthetic benchmark sample.

    The seed is split into independent streams for the points, ``r`` and ``c``.
    """
    ss = np.random.SeedSequence(spec.seed)
    s_cost, s_r, s_c = ss.spawn(3)
    C = sample_cost_matrix(spec.n, spec.m, s_cost)
    target = spec.entropy_fraction * np.log(spec.n)
    r = sample_entropy_marginal(spec.n, target, spec.entropy_tolerance, rng=np.random.default_rng(s_r))
    c = sample_entropy_marginal(spec.n, target, spec.entropy_tolerance, rng=np.random.default_rng(s_c))
    header = {
        "kind": "synthetic",
        "n": spec.n,
        "m": spec.m,
        "seed": spec.seed,
        "entropy_fraction": spec.entropy_fraction,
        "entropy_tolerance": spec.entropy_tolerance,
        "target_entropy_nats": target,
        "entropy_r_nats": entropy(r),
        "entropy_c_nats": entropy(c),
    }
    return Instance(C, Marginals(r, c), header)


# -- MNIST -------------------------------------------------------------------

def mnist_cost_matrix(side=MNIST_SIDE):
    """L1 distance between grid pixels divided by the largest such distance."""
    ys, xs = np.divmod(np.arange(side * side), side)
    D = np.abs(xs[:, None] - xs[None, :]) + np.abs(ys[:, None] - ys[None, :])
    return cost_matrix(D / (2 * (side - 1)))


def mnist_to_distribution(image, rng):
    """Flatten, add U(0, 1e-6) noise and L1-normalize."""
    x = np.asarray(image, dtype=np.float64).ravel()
    x = x + rng.uniform(0.0, MNIST_NOISE, size=x.shape)
    return x / x.sum()


def parse_idx(path):
    """Read an IDX3 unsigned-byte image file into a ``(count, 28, 28)`` uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    return parse_idx_bytes(data)


def parse_idx_bytes(data):
    if len(data) < 16:
        raise IdxFormatError(f"truncated header ({len(data)} bytes)")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
    if (rows, cols) != (MNIST_SIDE, MNIST_SIDE):
        raise IdxFormatError(f"expected {MNIST_SIDE}x{MNIST_SIDE} images, got {rows}x{cols}")
    need = 16 + count * rows * cols
    if len(data) < need:
        raise IdxFormatError(f"truncated file: {len(data)} bytes, header promises {need}")
    return np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16) \
        .reshape(count, rows, cols).copy()


def write_idx(path, images):
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, count, rows, cols))
        f.write(images.tobytes())


def mnist_pairs(images, pair_count, seed):
    """Sample ``2 * pair_count`` images without replacement; pair first half with second half."""
    rng = np.random.default_rng(seed)
    if 2 * pair_count > len(images):
        raise ValueError(f"need {2 * pair_count} images, file has {len(images)}")
    idx = rng.choice(len(images), size=2 * pair_count, replace=False)
    dists = [mnist_to_distribution(images[i], rng) for i in idx]
    return [(int(idx[i]), int(idx[i + pair_count]), dists[i], dists[i + pair_count])
            for i in range(pair_count)]


# -- instance container ------------------------------------------------------
#
# b"MDOTINST" | u32 version | u32 header length | UTF-8 JSON header
# | f64 C (n*n, row-major) | f64 r (n) | f64 c (n); all little-endian.

INSTANCE_MAGIC = b"MDOTINST"
INSTANCE_VERSION = 1


def write_instance(path, inst):
    header = json.dumps(inst.header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(INSTANCE_MAGIC)
        f.write(struct.pack("<II", INSTANCE_VERSION, len(header)))
        f.write(header)
        f.write(np.ascontiguousarray(inst.C, dtype="<f8").tobytes())
        f.write(np.asarray(inst.marginals.r, dtype="<f8").tobytes())
        f.write(np.asarray(inst.marginals.c, dtype="<f8").tobytes())


def read_instance(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != INSTANCE_MAGIC:
        raise ValueError(f"{path}: not an instance file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != INSTANCE_VERSION:
        raise ValueError(f"{path}: unsupported instance version {version}")
    header = json.loads(data[16:16 + hlen].decode())
    n = int(header["n"])
    body = np.frombuffer(data, dtype="<f8", offset=16 + hlen)
    if body.size != n * n + 2 * n:
        raise ValueError(f"{path}: body has {body.size} values, expected {n * n + 2 * n}")
    C = body[: n * n].reshape(n, n).astype(np.float64)
    r = body[n * n: n * n + n].astype(np.float64)
    c = body[n * n + n:].astype(np.float64)
    return Instance(cost_matrix(C), Marginals(r, c), header)
