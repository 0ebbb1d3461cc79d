"""Synthetic open-set pools: Gaussian-mixture classes in a shared space.

Each class is a mixture of Gaussian components. A dataset carries three
pools: a labeled pool and a test set drawn from the K seen classes, and
an unlabeled pool mixing a subset of the seen classes with additional
unseen classes. Class tags and in-distribution flags for the unlabeled
pool are hidden from training code; evaluation paths read them through
``UnlabeledPool.eval_view``.

Everything is a pure function of the parameter set, including the seed,
so serialized and regenerated datasets agree bit for bit.
"""

from __future__ import annotations

import dataclasses
import io

import numpy as np

from .autograd import no_grad, softmax_values

DATASET_MAGIC = "kdlab-dataset 1"

PLACEMENTS = ("mixed", "near", "far")


@dataclasses.dataclass(frozen=True)
class DatasetParams:
    """Generator knobs; defaults are the standard benchmark preset."""

    seed: int = 0
    input_dim: int = 32
    classes: int = 8
    unseen_classes: int = 16
    overlap: float = 0.1
    labeled_per_class: int = 100
    unlabeled_per_class: int = 120
    test_per_class: int = 150
    components_per_class: int = 4
    class_separation: float = 1.0
    noise: float = 1.0
    unseen_placement: str = "mixed"

    def validate(self):
        if self.classes < 2:
            raise ValueError(f"dataset: needs at least 2 seen classes, got {self.classes}")
        if self.unseen_classes < 0:
            raise ValueError("dataset: unseen_classes must be nonnegative")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError(f"dataset: overlap must lie in [0, 1], got {self.overlap}")
        if self.unseen_placement not in PLACEMENTS:
            raise ValueError(f"dataset: unknown unseen_placement {self.unseen_placement!r}")
        if min(self.labeled_per_class, self.test_per_class) < 1:
            raise ValueError("dataset: labeled and test pools need at least 1 sample per class")
        seen_in_pool = round(self.overlap * self.classes)
        if seen_in_pool > 0 and self.unlabeled_per_class == 0:
            raise ValueError(
                f"dataset: overlap {self.overlap} asks for {seen_in_pool} seen classes "
                "in an unlabeled pool of size 0")


class UnlabeledPool:
    """Inputs plus hidden provenance for the unlabeled pool.

    Training code sees ``inputs`` only. ``eval_view`` exposes the true
    class tags and in-distribution flags and is reserved for evaluation
    and reporting paths.
    """

    def __init__(self, inputs, class_tags, ind_flags):
        self.inputs = inputs
        self._class_tags = class_tags
        self._ind_flags = ind_flags

    def __len__(self):
        return len(self.inputs)

    def eval_view(self):
        """(class tags, in-distribution flags); evaluation-only access."""
        return self._class_tags, self._ind_flags

    def subset(self, indices):
        indices = np.asarray(indices)
        return UnlabeledPool(self.inputs[indices],
                             self._class_tags[indices],
                             self._ind_flags[indices])


@dataclasses.dataclass
class OpenSetDataset:
    params: DatasetParams
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    unlabeled: UnlabeledPool


def _sample_class(rng, centers, count, noise, dim):
    comp = rng.integers(0, len(centers), size=count)
    return centers[comp] + noise * rng.standard_normal((count, dim))


def _unit_vectors(rng, count, dim):
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate(params: DatasetParams) -> OpenSetDataset:
    """Draw a full open-set dataset from the parameter set.

    Seen-class components sit at independent Gaussian positions. Unseen
    components anchor to randomly chosen seen components: "near" ones at
    1 to 4 noise units (overlapping seen support), "far" ones at 8 to 14
    (well separated), and the default "mixed" placement alternates the
    two so the pool contains both hard and easy out-of-distribution
    samples. The unlabeled pool draws from round(overlap * K) seen
    classes plus every unseen class, with the same per-class count.
    """
    params.validate()
    p = params
    seen_rng, unseen_rng, lab_rng, test_rng, pool_rng = [
        np.random.default_rng(s)
        for s in np.random.SeedSequence(p.seed).spawn(5)]

    m = p.components_per_class
    seen_centers = p.class_separation * seen_rng.standard_normal(
        (p.classes, m, p.input_dim))

    labeled_parts, labeled_tags = [], []
    test_parts, test_tags = [], []
    for k in range(p.classes):
        labeled_parts.append(_sample_class(lab_rng, seen_centers[k],
                                           p.labeled_per_class, p.noise, p.input_dim))
        labeled_tags.append(np.full(p.labeled_per_class, k))
        test_parts.append(_sample_class(test_rng, seen_centers[k],
                                        p.test_per_class, p.noise, p.input_dim))
        test_tags.append(np.full(p.test_per_class, k))

    # Unseen components anchor to seen ones at controlled distances.
    unseen_centers = np.zeros((p.unseen_classes, m, p.input_dim))
    flat_seen = seen_centers.reshape(-1, p.input_dim)
    for j in range(p.unseen_classes):
        if p.unseen_placement == "near":
            close = np.ones(m, dtype=bool)
        elif p.unseen_placement == "far":
            close = np.zeros(m, dtype=bool)
        else:
            close = (np.arange(m) + j) % 2 == 0
        anchors = flat_seen[unseen_rng.integers(0, len(flat_seen), size=m)]
        lo = np.where(close, 1.0, 8.0)
        hi = np.where(close, 4.0, 14.0)
        dist = p.noise * unseen_rng.uniform(lo, hi)
        unseen_centers[j] = anchors + dist[:, None] * _unit_vectors(
            unseen_rng, m, p.input_dim)

    seen_in_pool = round(p.overlap * p.classes)
    pool_classes = list(pool_rng.permutation(p.classes)[:seen_in_pool])
    pool_classes += [p.classes + j for j in range(p.unseen_classes)]

    pool_parts, pool_tags = [], []
    for tag in pool_classes:
        centers = seen_centers[tag] if tag < p.classes else unseen_centers[tag - p.classes]
        pool_parts.append(_sample_class(pool_rng, centers,
                                        p.unlabeled_per_class, p.noise, p.input_dim))
        pool_tags.append(np.full(p.unlabeled_per_class, tag))

    if pool_parts:
        pool_x = np.concatenate(pool_parts)
        pool_tag = np.concatenate(pool_tags)
    else:
        pool_x = np.zeros((0, p.input_dim))
        pool_tag = np.zeros(0, dtype=np.int64)
    pool = UnlabeledPool(pool_x, pool_tag, pool_tag < p.classes)

    return OpenSetDataset(
        params=p,
        labeled_x=np.concatenate(labeled_parts),
        labeled_y=np.concatenate(labeled_tags),
        test_x=np.concatenate(test_parts),
        test_y=np.concatenate(test_tags),
        unlabeled=pool)


def one_hot(labels, classes):
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def augment(x, strength, rng):
    """One stochastic view of ``x``: sign-masked additive Gaussian jitter.

    Each coordinate receives Gaussian noise of scale ``strength`` through
    a random sign mask, so the view distribution is centered on ``x``;
    strength 0 is the identity.
    """
    x = np.asarray(x, dtype=np.float64)
    mask = rng.integers(0, 2, size=x.shape) * 2.0 - 1.0
    jitter = rng.normal(0.0, 1.0, size=x.shape) * float(strength)
    return x + mask * jitter


def select_unlabeled(pool: UnlabeledPool, fraction, policy, teacher=None, seed=0):
    """Deterministic sub-pool of the given fraction.

    ``random`` draws uniformly without replacement; ``teacher_score``
    keeps the samples the teacher is most confident about (largest max
    softmax probability), ties broken by pool index. Fraction 1.0 keeps
    the whole pool under either policy.
    """
    if len(pool) == 0:
        raise ValueError("select_unlabeled: pool is empty")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"select_unlabeled: fraction must lie in (0, 1], got {fraction}")
    n = len(pool)
    keep = max(1, round(fraction * n))
    if keep >= n:
        return pool.subset(np.arange(n))
    if policy == "random":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11]))
        chosen = np.sort(rng.choice(n, size=keep, replace=False))
    elif policy == "teacher_score":
        if teacher is None:
            raise ValueError("select_unlabeled: teacher_score policy needs a teacher")
        with no_grad():
            _, logits = teacher.forward(pool.inputs)
        conf = softmax_values(logits.values).max(axis=1)
        # Stable sort on negated confidence: ties keep pool order.
        order = np.argsort(-conf, kind="stable")
        chosen = np.sort(order[:keep])
    else:
        raise ValueError(f"select_unlabeled: unknown policy {policy!r}")
    return pool.subset(chosen)


@dataclasses.dataclass
class StepBatch:
    """One optimization step's worth of data.

    ``unlabeled_idx`` indexes into the selected pool so usage reporting
    can recover hidden flags; training code must touch only the inputs.
    """

    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_idx: np.ndarray


class BatchSampler:
    """Epoch-wise batch stream over a labeled pool and an unlabeled pool.

    Every epoch visits each labeled sample exactly once, in a fresh
    shuffled order. Unlabeled samples cycle without replacement inside
    the epoch, reshuffling whenever the pool is exhausted. The batch
    sequence is a pure function of (sampler seed, epoch index), so runs
    replay exactly.
    """

    def __init__(self, batch_size, unlabeled_batch_size, seed):
        if batch_size < 1:
            raise ValueError("BatchSampler: batch_size must be positive")
        self.batch_size = int(batch_size)
        self.unlabeled_batch_size = int(unlabeled_batch_size)
        self.seed = int(seed)

    def epoch_length(self, labeled_count):
        return int(np.ceil(labeled_count / self.batch_size))

    def epoch_batches(self, labeled_x, labeled_y, unlabeled_x, epoch):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch]))
        order = rng.permutation(len(labeled_x))
        n_u = len(unlabeled_x)
        cycle = rng.permutation(n_u) if n_u else np.zeros(0, dtype=np.int64)
        cursor = 0
        for start in range(0, len(order), self.batch_size):
            rows = order[start:start + self.batch_size]
            if n_u and self.unlabeled_batch_size:
                take = []
                need = self.unlabeled_batch_size
                while need > 0:
                    if cursor == n_u:
                        cycle = rng.permutation(n_u)
                        cursor = 0
                    grab = min(need, n_u - cursor)
                    take.append(cycle[cursor:cursor + grab])
                    cursor += grab
                    need -= grab
                u_idx = np.concatenate(take)
            else:
                u_idx = np.zeros(0, dtype=np.int64)
            yield StepBatch(labeled_x=labeled_x[rows],
                            labeled_y=labeled_y[rows],
                            unlabeled_x=unlabeled_x[u_idx] if n_u else
                            np.zeros((0, labeled_x.shape[1])),
                            unlabeled_idx=u_idx)


def save_dataset(path, ds: OpenSetDataset):
    """Text header with the parameters, then little-endian double blocks."""
    tags, flags = ds.unlabeled.eval_view()
    blocks = [
        ("labeled_x", ds.labeled_x),
        ("labeled_y", ds.labeled_y.astype(np.float64)),
        ("test_x", ds.test_x),
        ("test_y", ds.test_y.astype(np.float64)),
        ("unlabeled_x", ds.unlabeled.inputs),
        ("unlabeled_tags", tags.astype(np.float64)),
        ("unlabeled_ind", flags.astype(np.float64)),
    ]
    lines = [DATASET_MAGIC]
    for field in dataclasses.fields(DatasetParams):
        lines.append(f"param {field.name} {getattr(ds.params, field.name)!r}")
    for name, arr in blocks:
        arr2 = np.atleast_2d(arr)
        lines.append(f"block {name} {arr2.shape[0]} {arr2.shape[1]}")
    lines.append("data")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_dataset(path) -> OpenSetDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    head, _, rest = blob.partition(b"data\n")
    lines = head.decode("ascii").splitlines()
    if not lines or lines[0] != DATASET_MAGIC:
        raise ValueError(f"load_dataset: bad header in {path}")
    kwargs = {}
    blocks = {}
    offset = 0
    field_types = {f.name: f.type for f in dataclasses.fields(DatasetParams)}
    for line in lines[1:]:
        kind, name, *vals = line.split(maxsplit=2 if line.startswith("param") else 3)
        if kind == "param":
            raw = vals[0]
            if field_types[name] == "str":
                kwargs[name] = raw.strip("'")
            elif field_types[name] == "float":
                kwargs[name] = float(raw)
            else:
                kwargs[name] = int(raw)
        elif kind == "block":
            rows, cols = int(vals[0]), int(vals[1])
            count = rows * cols
            arr = np.frombuffer(rest, dtype="<f8", count=count, offset=offset)
            blocks[name] = arr.reshape(rows, cols).astype(np.float64)
            offset += count * 8
    params = DatasetParams(**kwargs)
    pool = UnlabeledPool(blocks["unlabeled_x"],
                         blocks["unlabeled_tags"].ravel().astype(np.int64),
                         blocks["unlabeled_ind"].ravel() > 0.5)
    return OpenSetDataset(
        params=params,
        labeled_x=blocks["labeled_x"],
        labeled_y=blocks["labeled_y"].ravel().astype(np.int64),
        test_x=blocks["test_x"],
        test_y=blocks["test_y"].ravel().astype(np.int64),
        unlabeled=pool)


def export_csv(ds: OpenSetDataset, out_dir):
    """Plain CSV copies of the pools for external plotting.

    ``unlabeled.csv`` carries inputs only; the hidden provenance goes to
    ``unlabeled_eval.csv`` for evaluation-side tooling.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    dim = ds.params.input_dim
    feat_cols = ",".join(f"x{i}" for i in range(dim))

    def rows(fh, xs, extras=None):
        for i in range(len(xs)):
            cells = [f"{v:.17g}" for v in xs[i]]
            if extras is not None:
                cells += [str(e[i]) for e in extras]
            fh.write(",".join(cells) + "\n")

    with open(os.path.join(out_dir, "labeled.csv"), "w") as fh:
        fh.write(feat_cols + ",label\n")
        rows(fh, ds.labeled_x, [ds.labeled_y])
    with open(os.path.join(out_dir, "test.csv"), "w") as fh:
        fh.write(feat_cols + ",label\n")
        rows(fh, ds.test_x, [ds.test_y])
    with open(os.path.join(out_dir, "unlabeled.csv"), "w") as fh:
        fh.write(feat_cols + "\n")
        rows(fh, ds.unlabeled.inputs)
    tags, flags = ds.unlabeled.eval_view()
    with open(os.path.join(out_dir, "unlabeled_eval.csv"), "w") as fh:
        fh.write(feat_cols + ",hidden_class,is_ind\n")
        rows(fh, ds.unlabeled.inputs, [tags, flags.astype(int)])
