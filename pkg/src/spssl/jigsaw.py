"""Jigsaw understanding benchmark: permutation sets, shuffling, and the head.

Permutation sets are built by greedy farthest-point selection over the full
9! candidate pool, maximizing the minimum pairwise Hamming distance (ties
broken by maximal mean distance, then lexicographically). Images are split
into a 3x3 grid; cell i of a shuffled image holds cell perm[i] of the input.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from spssl import autodiff as ad
from spssl.autodiff import Tensor
from spssl.encoder import TokenBundle
from spssl.sp_head import pooled_query_attention

GRID = 3
CELLS = GRID * GRID
FULL_POOL = 362880  # 9!


def hamming(p, q) -> int:
    """Number of positions where two permutations disagree."""
    p = np.asarray(p)
    q = np.asarray(q)
    if p.shape != (CELLS,) or q.shape != (CELLS,):
        raise ValueError("permutations must have 9 entries")
    return int((p != q).sum())


@dataclass(frozen=True)
class PermutationSet:
    perms: np.ndarray  # (K, 9) int
    min_hamming: int
    mean_hamming: float
    seed: int

    @property
    def size(self) -> int:
        return self.perms.shape[0]

    def serialize(self) -> str:
        lines = [
            "spssl-permutation-set v1",
            f"k = {self.size}",
            f"seed = {self.seed}",
            f"min_hamming = {self.min_hamming}",
            f"mean_hamming = {self.mean_hamming:.6f}",
        ]
        for p in self.perms:
            lines.append(" ".join(str(int(v)) for v in p))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "PermutationSet":
        lines = text.strip().splitlines()
        if lines[0] != "spssl-permutation-set v1":
            raise ValueError("not a permutation set file")
        kv = dict(ln.split(" = ") for ln in lines[1:5])
        k = int(kv["k"])
        perms = np.array([[int(v) for v in ln.split()] for ln in lines[5:5 + k]])
        return cls(perms=perms, min_hamming=int(kv["min_hamming"]),
                   mean_hamming=float(kv["mean_hamming"]), seed=int(kv["seed"]))


def _all_permutations() -> np.ndarray:
    return np.array(list(itertools.permutations(range(CELLS))), dtype=np.int8)


def pairwise_min_mean_hamming(perms: np.ndarray):
    """All-pairs recount of (min, mean) pairwise Hamming; brute force."""
    k = perms.shape[0]
    if k < 2:
        return CELLS, float(CELLS)  # singleton convention
    dmin = CELLS
    dsum = 0
    for i in range(k - 1):
        d = (perms[i + 1:] != perms[i]).sum(axis=1)
        dmin = min(dmin, int(d.min()))
        dsum += int(d.sum())
    return dmin, dsum / (k * (k - 1) / 2)


def generate_permutation_set(k: int = 1000, seed: int = 0) -> PermutationSet:
    """Greedy farthest-point selection over all 9! permutations.

    Starts from a seeded random permutation; each round adds the candidate
    maximizing its minimum Hamming distance to the selected set, breaking
    ties by maximal mean distance and then lexicographic order.
    """
    if not 1 <= k <= FULL_POOL:
        raise ValueError("k must lie in [1, 9!]")
    pool = _all_permutations()
    rng = np.random.default_rng(seed)
    first = int(rng.integers(0, FULL_POOL))
    chosen = [first]
    min_d = (pool != pool[first]).sum(axis=1).astype(np.int64)
    sum_d = min_d.copy()
    for _ in range(k - 1):
        best_min = min_d.max()
        cand = np.flatnonzero(min_d == best_min)
        if cand.size > 1:
            best_sum = sum_d[cand].max()
            cand = cand[sum_d[cand] == best_sum]
        nxt = int(cand[0])  # pool is lexicographically ordered
        chosen.append(nxt)
        d = (pool != pool[nxt]).sum(axis=1)
        np.minimum(min_d, d, out=min_d)
        sum_d += d
    perms = pool[chosen].astype(np.int64)
    dmin, dmean = pairwise_min_mean_hamming(perms)
    return PermutationSet(perms=perms, min_hamming=dmin, mean_hamming=dmean, seed=seed)


def random_permutation_set(k: int, seed: int) -> PermutationSet:
    """Uniformly random distinct permutations (comparison baseline)."""
    rng = np.random.default_rng(seed)
    seen = set()
    perms = []
    while len(perms) < k:
        p = tuple(rng.permutation(CELLS))
        if p not in seen:
            seen.add(p)
            perms.append(p)
    perms = np.array(perms, dtype=np.int64)
    dmin, dmean = pairwise_min_mean_hamming(perms)
    return PermutationSet(perms=perms, min_hamming=dmin, mean_hamming=dmean, seed=seed)


def _cells(image: np.ndarray):
    side = image.shape[0]
    if side % GRID:
        raise ValueError("image side must be divisible by 3")
    c = side // GRID
    return c


def shuffle_patches(image: np.ndarray, perm) -> np.ndarray:
    """Cell i of the output holds cell perm[i] of the input (row-major cells)."""
    perm = np.asarray(perm)
    c = _cells(image)
    out = np.empty_like(image)
    for i in range(CELLS):
        src = perm[i]
        oy, ox = divmod(i, GRID)
        sy, sx = divmod(int(src), GRID)
        out[oy * c:(oy + 1) * c, ox * c:(ox + 1) * c] = image[sy * c:(sy + 1) * c, sx * c:(sx + 1) * c]
    return out


def reconstruct(image: np.ndarray, perm) -> np.ndarray:
    """Inverse of shuffle_patches for the same permutation."""
    perm = np.asarray(perm)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(CELLS)
    return shuffle_patches(image, inverse)


def compose(p, q) -> np.ndarray:
    """shuffle(shuffle(x, p), q) == shuffle(x, compose(p, q))."""
    p = np.asarray(p)
    q = np.asarray(q)
    return p[q]


def extract_tiles(image: np.ndarray) -> list:
    """The 9 grid cells in row-major order."""
    c = _cells(image)
    tiles = []
    for i in range(CELLS):
        sy, sx = divmod(i, GRID)
        tiles.append(image[sy * c:(sy + 1) * c, sx * c:(sx + 1) * c])
    return tiles


# ---------------------------------------------------------------------------
# permutation-classification head


def init_jigsaw_head_params(dim: int, k: int, rng: np.random.Generator,
                            hidden: int = 384, dtype=np.float32) -> dict:
    in_dim = CELLS * dim

    def uni(shape, fan_in):
        b = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-b, b, shape).astype(dtype), requires_grad=True)

    return {
        "jig.fc1.w": uni((in_dim, hidden), in_dim),
        "jig.fc1.b": Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
        "jig.fc2.w": uni((hidden, k), hidden),
        "jig.fc2.b": Tensor(np.zeros(k, dtype=dtype), requires_grad=True),
    }


def pooled_tile_features(bundles: list) -> Tensor:
    """Per-tile pooled features: each class token attends over all 9 views'
    patch tokens (keys and values are the shared 9L-token set). Returns (9, D)."""
    dims = {b.z.shape[-1] for b in bundles}
    if len(dims) != 1:
        raise ad.ShapeError("inconsistent feature dimension across tiles")
    all_tokens = ad.concat([b.Z for b in bundles], axis=-2)
    hs = [pooled_query_attention(b.z, all_tokens) for b in bundles]
    return ad.concat(hs, axis=-2)


def jigsaw_head_mlp(h_concat: Tensor, params: dict) -> Tensor:
    h = ad.relu(ad.linear(h_concat, params["jig.fc1.w"], params["jig.fc1.b"]))
    return ad.linear(h, params["jig.fc2.w"], params["jig.fc2.b"])


def jigsaw_head_forward(bundles: list, params: dict) -> Tensor:
    """Logits over the permutation set for 9 encoded views in shuffled order."""
    if len(bundles) != CELLS:
        raise ValueError("expected 9 token bundles")
    pooled = pooled_tile_features(bundles)
    flat = ad.reshape(pooled, pooled.shape[:-2] + (CELLS * pooled.shape[-1],))
    return jigsaw_head_mlp(flat, params)
