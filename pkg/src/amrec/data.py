"""Interaction and feature ingestion, leave-one-out splitting, triple sampling
and parameter initialization / snapshots."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

FMAT_MAGIC = b"FMAT"
_HEADER = struct.Struct("<4sII")


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class InteractionDataset:
    """Implicit feedback as index pairs.

    ``users`` and ``items`` hold one row per unique interaction. ``user_ids`` and
    ``item_ids`` map indices back to the raw identifiers from the input file.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    user_ids: tuple = ()
    item_ids: tuple = ()

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise DataError("users and items must be 1-d arrays of equal length")
        if users.size:
            if users.min() < 0 or users.max() >= self.num_users:
                raise DataError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise DataError("item index out of range")
        keys = users * self.num_items + items
        uniq, first = np.unique(keys, return_index=True)
        if uniq.size != keys.size:
            # keep first occurrence, preserve input order
            order = np.sort(first)
            users, items = users[order], items[order]
        users.setflags(write=False)
        items.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        if not self.user_ids:
            object.__setattr__(self, "user_ids", tuple(str(u) for u in range(self.num_users)))
        if not self.item_ids:
            object.__setattr__(self, "item_ids", tuple(str(i) for i in range(self.num_items)))

    def __len__(self):
        return int(self.users.size)

    @property
    def positives_by_user(self) -> list[np.ndarray]:
        """Per-user item indices, in interaction order."""
        order = np.argsort(self.users, kind="stable")
        bounds = np.searchsorted(self.users[order], np.arange(self.num_users + 1))
        items = self.items[order]
        return [items[bounds[u]:bounds[u + 1]] for u in range(self.num_users)]

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def subset(self, mask: np.ndarray) -> "InteractionDataset":
        return InteractionDataset(self.num_users, self.num_items, self.users[mask],
                                  self.items[mask], self.user_ids, self.item_ids)


@dataclass(frozen=True)
class FeatureMatrix:
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2:
            raise DataError("feature matrix must be 2-d")
        bad = ~np.isfinite(rows).all(axis=1)
        if bad.any():
            raise DataError(f"non-finite feature value for item {int(np.flatnonzero(bad)[0])}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def num_items(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class SplitDataset:
    """Leave-one-out split.

    ``test`` and ``validation`` map a user index to its held-out item index.
    ``cold_items`` is derived from ``train`` when not given.
    """

    train: InteractionDataset
    test: dict
    validation: dict = field(default_factory=dict)
    cold_items: Optional[frozenset] = None

    def __post_init__(self):
        if self.cold_items is None:
            cold = np.flatnonzero(self.train.item_counts() == 0)
            object.__setattr__(self, "cold_items", frozenset(int(i) for i in cold))
        keys = np.sort(self.train.users * self.train.num_items + self.train.items)
        object.__setattr__(self, "_train_keys", keys)
        cold_mask = np.zeros(self.num_items, dtype=bool)
        cold_mask[list(self.cold_items)] = True
        cold_mask.setflags(write=False)
        object.__setattr__(self, "cold_mask", cold_mask)

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def is_train_positive(self, users, items) -> np.ndarray:
        keys = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self._train_keys, keys)
        pos = np.minimum(pos, max(self._train_keys.size - 1, 0))
        if self._train_keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        return self._train_keys[pos] == keys

    def interacted(self, u: int) -> np.ndarray:
        """All items user ``u`` touched in train, validation or test."""
        lo = np.searchsorted(self._train_keys, u * self.num_items)
        hi = np.searchsorted(self._train_keys, (u + 1) * self.num_items)
        items = list(self._train_keys[lo:hi] - u * self.num_items)
        if u in self.test:
            items.append(self.test[u])
        if u in self.validation:
            items.append(self.validation[u])
        return np.unique(np.asarray(items, dtype=np.int64))

    def test_users(self) -> np.ndarray:
        return np.array(sorted(self.test), dtype=np.int64)


@dataclass(frozen=True)
class HyperParams:
    K: int = 64
    epsilon: float = 0.5
    lam: float = 1.0
    beta: float = 0.0
    eta: float = 0.05
    batch_size: int = 512
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.epsilon < 0 or self.lam < 0 or self.beta < 0:
            raise ValueError("epsilon, lam and beta must be non-negative")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    P: np.ndarray
    Q: np.ndarray
    E: np.ndarray
    acc_P: np.ndarray = None
    acc_Q: np.ndarray = None
    acc_E: np.ndarray = None

    def __post_init__(self):
        for name in ("acc_P", "acc_Q", "acc_E"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(getattr(self, name[4:])))

    @property
    def K(self) -> int:
        return self.P.shape[1]

    @property
    def D(self) -> int:
        return self.E.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def arrays(self) -> tuple:
        return (self.P, self.Q, self.E, self.acc_P, self.acc_Q, self.acc_E)

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


# ---------------------------------------------------------------------------
# loading


def load_interactions(path, item_ids: Optional[Sequence[str]] = None) -> InteractionDataset:
    """Read ``user<TAB>item`` lines.

    Indices follow first appearance. When ``item_ids`` is given the item index
    order is fixed to it instead (so that it lines up with a feature file) and
    unknown items are an error.
    """
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    fixed_items = item_ids is not None
    if fixed_items:
        item_index = {s: n for n, s in enumerate(item_ids)}
    users, items = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected 'user<TAB>item', got {line!r}")
            u, i = parts
            if u not in user_index:
                user_index[u] = len(user_index)
            if i not in item_index:
                if fixed_items:
                    raise DataError(f"{path}:{lineno}: unknown item {i!r}")
                item_index[i] = len(item_index)
            users.append(user_index[u])
            items.append(item_index[i])
    if not users:
        raise DataError(f"{path}: no interactions")
    return InteractionDataset(len(user_index), len(item_index), np.array(users), np.array(items),
                              tuple(user_index), tuple(item_index))


def read_fmat(path) -> np.ndarray:
    """Read an FMAT matrix. The element width (float32 or float64) is inferred
    from the file size."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated FMAT header")
    magic, n, d = _HEADER.unpack_from(raw)
    if magic != FMAT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    payload = len(raw) - _HEADER.size
    cells = n * d
    if cells == 0:
        if payload:
            raise DataError(f"{path}: payload present for empty matrix")
        return np.zeros((n, d), dtype=np.float32)
    if payload == cells * 4:
        dtype = "<f4"
    elif payload == cells * 8:
        dtype = "<f8"
    else:
        raise DataError(f"{path}: payload of {payload} bytes does not match {n}x{d}")
    return np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(n, d).astype(dtype[1:])


def write_fmat(path, matrix: np.ndarray, dtype="<f4") -> None:
    matrix = np.ascontiguousarray(matrix, dtype=dtype)
    if matrix.ndim != 2:
        raise ValueError("FMAT holds 2-d matrices")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FMAT_MAGIC, *matrix.shape))
        fh.write(matrix.tobytes())


def load_features(path, num_items: Optional[int] = None) -> FeatureMatrix:
    """Load features from FMAT (by magic) or CSV."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == FMAT_MAGIC:
        rows = read_fmat(path)
    else:
        try:
            rows = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
    if num_items is not None and rows.shape[0] != num_items:
        raise DataError(f"{path}: {rows.shape[0]} feature rows but dataset has {num_items} items")
    return FeatureMatrix(rows)


# ---------------------------------------------------------------------------
# splitting and sampling


def leave_one_out_split(data: InteractionDataset, seed: int = 0,
                        validation: bool = False) -> SplitDataset:
    """Hold out one uniformly chosen interaction per user for testing.

    Users with a single interaction stay in train only. With ``validation`` a
    second item is held out for users that still keep at least one training
    interaction afterwards.
    """
    if len(data) == 0:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    keep = np.ones(len(data), dtype=bool)
    order = np.argsort(data.users, kind="stable")
    bounds = np.searchsorted(data.users[order], np.arange(data.num_users + 1))
    test, valid = {}, {}
    for u in range(data.num_users):
        rows = order[bounds[u]:bounds[u + 1]]
        if rows.size < 2:
            continue
        picks = rng.permutation(rows.size)
        t = rows[picks[0]]
        keep[t] = False
        test[u] = int(data.items[t])
        if validation and rows.size >= 3:
            v = rows[picks[1]]
            keep[v] = False
            valid[u] = int(data.items[v])
    return SplitDataset(data.subset(keep), test, valid)


def save_split(split: SplitDataset, directory, **manifest) -> None:
    """Write ``train.tsv``, ``test.tsv``, ``validation.tsv`` (``user<TAB>item``
    ids), the id orders in ``users.txt`` / ``items.txt`` and ``split.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    t = split.train
    uid, iid = t.user_ids, t.item_ids

    def write_pairs(name, pairs):
        with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{uid[u]}\t{iid[i]}\n" for u, i in pairs)

    write_pairs("train.tsv", zip(t.users, t.items))
    write_pairs("test.tsv", sorted(split.test.items()))
    write_pairs("validation.tsv", sorted(split.validation.items()))
    (out / "users.txt").write_text("".join(f"{s}\n" for s in uid), encoding="utf-8")
    (out / "items.txt").write_text("".join(f"{s}\n" for s in iid), encoding="utf-8")
    info = {"num_users": t.num_users, "num_items": t.num_items, "train": len(t),
            "test": len(split.test), "validation": len(split.validation),
            "cold_items": len(split.cold_items)}
    info.update(manifest)
    (out / "split.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def load_split(directory) -> SplitDataset:
    d = Path(directory)
    if not (d / "split.json").exists():
        raise DataError(f"no split at {d}")
    uid = tuple((d / "users.txt").read_text(encoding="utf-8").splitlines())
    iid = tuple((d / "items.txt").read_text(encoding="utf-8").splitlines())
    u_index = {s: n for n, s in enumerate(uid)}
    i_index = {s: n for n, s in enumerate(iid)}

    def read_pairs(name):
        pairs = []
        with open(d / name, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\r\n").split("\t")
                try:
                    pairs.append((u_index[parts[0]], i_index[parts[1]]))
                except (KeyError, IndexError):
                    raise DataError(f"{d / name}:{lineno}: unknown or malformed pair") from None
        return pairs

    train = read_pairs("train.tsv")
    users = np.array([p[0] for p in train], dtype=np.int64)
    items = np.array([p[1] for p in train], dtype=np.int64)
    data = InteractionDataset(len(uid), len(iid), users, items, uid, iid)
    return SplitDataset(data, dict(read_pairs("test.tsv")), dict(read_pairs("validation.tsv")))


class _TripleSampler:
    """Vectorized uniform (u, i, j) sampling against a fixed split."""

    def __init__(self, split: SplitDataset):
        self.split = split
        train = split.train
        self.warm = np.flatnonzero(~split.cold_mask)
        # every train positive is warm, so the negative pool is warm minus positives
        pool = self.warm.size - np.bincount(train.users, minlength=split.num_users)
        ok = pool[train.users] > 0
        self.users = train.users[ok]
        self.items = train.items[ok]
        if self.users.size == 0:
            raise DataError("no training interaction has an eligible negative item")

    def sample(self, n: int, rng: np.random.Generator, max_rounds: int = 10000):
        idx = rng.integers(0, self.users.size, size=n)
        u, i = self.users[idx], self.items[idx]
        j = self.warm[rng.integers(0, self.warm.size, size=n)]
        bad = self.split.is_train_positive(u, j)
        rounds = 0
        while bad.any():
            rounds += 1
            if rounds > max_rounds:
                raise RuntimeError("negative sampling did not converge")
            redo = np.flatnonzero(bad)
            j[redo] = self.warm[rng.integers(0, self.warm.size, size=redo.size)]
            bad[redo] = self.split.is_train_positive(u[redo], j[redo])
        return u, i, j


def sample_triple(split: SplitDataset, rng: np.random.Generator) -> tuple[int, int, int]:
    u, i, j = _TripleSampler(split).sample(1, rng)
    return int(u[0]), int(i[0]), int(j[0])


def sample_triples(split: SplitDataset, n: int, rng: np.random.Generator):
    return _TripleSampler(split).sample(n, rng)


# ---------------------------------------------------------------------------
# parameters


def init_params(hp: HyperParams, num_users: int, num_items: int, dim: int,
                std: float = 0.01) -> ModelParams:
    if min(num_users, num_items, dim) < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(hp.seed)
    P = rng.normal(0.0, std, size=(num_users, hp.K))
    Q = rng.normal(0.0, std, size=(num_items, hp.K))
    E = rng.normal(0.0, std, size=(hp.K, dim))
    return ModelParams(P, Q, E)


_PARAM_FILES = ("P", "Q", "E", "acc_P", "acc_Q", "acc_E")


def save_params(params: ModelParams, directory, **manifest) -> None:
    """Write a snapshot directory: one FMAT file per matrix (64-bit payload)
    and ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in zip(_PARAM_FILES, params.arrays()):
        write_fmat(directory / f"{name}.fmat", arr, dtype="<f8")
    info = {"K": params.K, "D": params.D, "num_users": params.P.shape[0],
            "num_items": params.Q.shape[0], "dtype": "float64"}
    info.update(manifest)
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, directory / "manifest.json")


def load_params(directory) -> tuple[ModelParams, dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint at {directory}")
    manifest = json.loads(manifest_path.read_text())
    arrays = [read_fmat(directory / f"{name}.fmat").astype(np.float64) for name in _PARAM_FILES]
    params = ModelParams(*arrays)
    if params.K != manifest["K"] or params.D != manifest["D"]:
        raise DataError(f"{directory}: matrix shapes disagree with manifest")
    return params, manifest
