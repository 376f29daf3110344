"""Item-item collaborative filtering experiments on a similarity graph.

Ratings become graph signals over a movie-similarity graph (normalized
rating correlations between co-rated items). Rating prediction is posed as
empirical risk minimization at a readout node, and a zoo of parametrizations
(dense linear map, graph filter, fully connected net, graph perceptron, and
one/two-layer GNNs) is trained under identical settings to compare test
RMSE. A second experiment trains a GNN on a small random item subgraph and
re-evaluates the same parameter tensors on the full graph.
"""

import csv
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .gnn import (
    DenseArchitecture,
    GnnArchitecture,
    TrainConfig,
    model_forward,
    param_count,
    train,
)
from .graph import normalize_shift
from .numerics import Rng, stream_value

__all__ = [
    "RatingsTable",
    "SimilarityGraph",
    "RecSample",
    "SplitSpec",
    "RmseExperimentConfig",
    "TransferExperimentConfig",
    "RESULTS_CSV_COLUMNS",
    "TRANSFER_CSV_COLUMNS",
    "MODEL_NAMES",
    "load_movielens",
    "synthetic_ratings",
    "item_rating_counts",
    "top_rated_items",
    "most_rated_item",
    "build_similarity_graph",
    "build_samples",
    "summarize_samples",
    "split_samples",
    "remove_ratings",
    "rmse",
    "model_zoo",
    "evaluate_model",
    "run_rmse_experiment",
    "run_transfer_experiment",
    "write_results_csv",
    "write_transfer_csv",
]

RESULTS_CSV_COLUMNS = ["model", "split", "rmse_val", "rmse_test", "epochs_ran", "param_count"]
TRANSFER_CSV_COLUMNS = ["n", "rmse_n", "rmse_full", "rel_diff"]

MODEL_NAMES = (
    "linear",
    "graph_filter",
    "fcnn",
    "graph_perceptron",
    "gnn_2layer_single",
    "gnn_1layer",
    "gnn_2layer",
)


# ---------------------------------------------------------------------------
# Ratings data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatingsTable:
    """Flat (user, item, rating) triples with 0-based dense indices."""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_count: int
    item_count: int

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.intp)
        items = np.asarray(self.items, dtype=np.intp)
        ratings = np.asarray(self.ratings, dtype=np.float64)
        if not (users.shape == items.shape == ratings.shape) or users.ndim != 1:
            raise ValueError("users, items and ratings must be equal-length vectors")
        if ratings.size and (ratings.min() < 1.0 or ratings.max() > 5.0):
            raise ValueError("ratings must lie in [1, 5]")
        if users.size and (users.min() < 0 or users.max() >= self.user_count):
            raise ValueError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= self.item_count):
            raise ValueError("item index out of range")
        pair_ids = users * self.item_count + items
        if np.unique(pair_ids).size != pair_ids.size:
            raise ValueError("duplicate (user, item) rating")
        for name, arr in (("users", users), ("items", items), ("ratings", ratings)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.ratings.size

    def matrix(self):
        """Dense (user_count, item_count) rating matrix; 0 marks unrated."""
        out = np.zeros((self.user_count, self.item_count))
        out[self.users, self.items] = self.ratings
        return out


def load_movielens(path):
    """Parse a tab-separated ratings file: user, item, rating, timestamp.

    1-based ids are remapped to 0-based dense indices; the timestamp column
    is ignored. Malformed lines and out-of-range ratings are reported with
    their line number.
    """
    users, items, ratings = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
            try:
                user, item, rating = int(fields[0]), int(fields[1]), float(fields[2])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric user/item/rating") from None
            if not 1.0 <= rating <= 5.0:
                raise ValueError(f"{path}:{lineno}: rating {rating} outside [1, 5]")
            users.append(user)
            items.append(item)
            ratings.append(rating)
    if not users:
        return RatingsTable(np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp),
                            np.empty(0), user_count=0, item_count=0)
    unique_users, user_idx = np.unique(users, return_inverse=True)
    unique_items, item_idx = np.unique(items, return_inverse=True)
    return RatingsTable(
        users=user_idx,
        items=item_idx,
        ratings=np.asarray(ratings),
        user_count=unique_users.size,
        item_count=unique_items.size,
    )


def synthetic_ratings(rng: Rng, user_count=60, item_count=24, rank=3, density=0.35, noise=0.25):
    """Low-rank-plus-noise integer ratings; a no-download test fixture.

    User and item bias terms give the rating columns the mostly-positive
    correlations real rating data shows (generous raters lift every item),
    which is the structure the similarity graph relies on.
    """
    tastes = rng.normal((user_count, rank))
    traits = rng.normal((item_count, rank))
    user_bias = 0.8 * rng.normal(user_count)
    item_bias = 0.4 * rng.normal(item_count)
    scores = tastes @ traits.T / np.sqrt(rank)
    scores = 3.3 + user_bias[:, None] + item_bias[None, :] + 0.8 * scores
    scores += noise * rng.normal((user_count, item_count))
    values = np.clip(np.round(scores), 1.0, 5.0)
    observed = rng.uniform(size=(user_count, item_count)) < density
    # guarantee every user and every item has at least one rating
    observed[np.arange(user_count), np.arange(user_count) % item_count] = True
    observed[np.arange(item_count) % user_count, np.arange(item_count)] = True
    users, items = np.nonzero(observed)
    return RatingsTable(users, items, values[observed],
                        user_count=user_count, item_count=item_count)


def item_rating_counts(table: RatingsTable):
    return np.bincount(table.items, minlength=table.item_count)


def top_rated_items(table: RatingsTable, count):
    """Items with the most ratings, descending; ties broken by lower index."""
    counts = item_rating_counts(table)
    order = np.lexsort((np.arange(table.item_count), -counts))
    return order[: int(count)]


def most_rated_item(table: RatingsTable):
    return int(top_rated_items(table, 1)[0])


def remove_ratings(table: RatingsTable, pair_ids):
    """Copy of the table without the ratings named by user*item_count+item ids."""
    ids = table.users * table.item_count + table.items
    keep = ~np.isin(ids, np.asarray(list(pair_ids), dtype=np.intp))
    return RatingsTable(table.users[keep], table.items[keep], table.ratings[keep],
                        user_count=table.user_count, item_count=table.item_count)


# ---------------------------------------------------------------------------
# Similarity graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimilarityGraph:
    """Normalized item-item correlation graph over a chosen item subset."""

    shift: np.ndarray        # unit-spectral-norm shift, zero diagonal
    weights: np.ndarray      # correlation weights before normalization
    item_index: np.ndarray   # graph position -> table item id (ascending)
    min_common: int
    flagged_items: tuple     # graph positions zeroed for nonpositive variance

    @property
    def n(self):
        return self.item_index.size

    def locate(self, item):
        """Graph position of a table item id."""
        pos = int(np.searchsorted(self.item_index, item))
        if pos >= self.n or self.item_index[pos] != item:
            raise KeyError(f"item {item} is not a node of this graph")
        return pos


def build_similarity_graph(table: RatingsTable, items=None, min_common=3):
    """Correlation weights between co-rated items, normalized as a shift.

    For items i, j the covariance of their ratings is taken over the users
    who rated both, against the per-pair means; the diagonal uses each
    item's full rater set. Pairs with fewer than min_common co-raters and
    items with nonpositive rating variance contribute zero weight. The
    weight matrix w_ij = sigma_ij / sqrt(sigma_ii sigma_jj) has zero
    diagonal and is scaled to unit spectral norm.
    """
    if items is None:
        items = np.arange(table.item_count)
    items = np.unique(np.asarray(items, dtype=np.intp))
    if items.size == 0:
        raise ValueError("need at least one item")
    if items.size and (items[0] < 0 or items[-1] >= table.item_count):
        raise ValueError("item id out of range")
    if min_common < 1:
        raise ValueError("min_common must be at least 1")

    keep = np.isin(table.items, items)
    ratings = np.zeros((table.user_count, items.size))
    cols = np.searchsorted(items, table.items[keep])
    ratings[table.users[keep], cols] = table.ratings[keep]
    rated = (ratings > 0.0).astype(np.float64)

    counts = rated.T @ rated                    # co-rater counts |C_ij|
    sums = ratings.T @ rated                    # sum of i's ratings over C_ij
    cross = ratings.T @ ratings                 # sum of x_ci x_cj over C_ij
    with np.errstate(divide="ignore", invalid="ignore"):
        means = np.where(counts > 0, sums / counts, 0.0)
        covariance = np.where(counts > 0, cross / counts, 0.0) - means * means.T

    variance = np.diag(covariance).copy()
    usable = variance > 0.0
    flagged = tuple(int(i) for i in np.flatnonzero(~usable))
    raters = np.diag(counts)
    if np.any(raters == 0):
        warnings.warn(f"{int(np.sum(raters == 0))} item(s) have no raters; rows zeroed")

    denom = np.sqrt(np.outer(np.where(usable, variance, 1.0),
                             np.where(usable, variance, 1.0)))
    weights = np.clip(covariance / denom, -1.0, 1.0)
    weights[counts < min_common] = 0.0
    weights[~usable, :] = 0.0
    weights[:, ~usable] = 0.0
    np.fill_diagonal(weights, 0.0)
    if not np.any(weights):
        raise ValueError("similarity graph has no edges; lower min_common or add ratings")
    return SimilarityGraph(
        shift=normalize_shift(weights),
        weights=weights,
        item_index=items,
        min_common=int(min_common),
        flagged_items=flagged,
    )


# ---------------------------------------------------------------------------
# Samples and splits
# ---------------------------------------------------------------------------

class RecSample(NamedTuple):
    """One (input signal, readout node, rating) training triple."""

    x: np.ndarray        # user's ratings over graph items, target zeroed
    target_node: int     # graph position being predicted
    target_value: float
    user: int
    sample_id: int       # user * item_count + item; stable across subgraphs
    degenerate: bool     # True when the input is all-zero


def build_samples(table: RatingsTable, graph: SimilarityGraph, target_items):
    """One sample per (user, target item) rating, targets grouped in order."""
    matrix = table.matrix()[:, graph.item_index]
    samples = []
    for item in target_items:
        node = graph.locate(int(item))
        for user in np.flatnonzero(matrix[:, node] > 0.0):
            x = matrix[user].copy()
            value = float(x[node])
            x[node] = 0.0
            samples.append(RecSample(
                x=x,
                target_node=node,
                target_value=value,
                user=int(user),
                sample_id=int(user) * table.item_count + int(item),
                degenerate=not np.any(x),
            ))
    return samples


def summarize_samples(samples):
    per_node = {}
    for s in samples:
        per_node[s.target_node] = per_node.get(s.target_node, 0) + 1
    return {
        "total": len(samples),
        "degenerate": sum(1 for s in samples if s.degenerate),
        "per_target": per_node,
    }


@dataclass(frozen=True)
class SplitSpec:
    """Fractions of samples routed to train/validation/test per split."""

    train: float = 0.81
    val: float = 0.09
    test: float = 0.10
    n_splits: int = 10
    seed: int = 0

    def __post_init__(self):
        if abs(self.train + self.val + self.test - 1.0) > 1e-12:
            raise ValueError("split fractions must sum to 1")
        if min(self.train, self.val, self.test) < 0 or self.n_splits < 1:
            raise ValueError("invalid split specification")


def split_samples(samples, spec: SplitSpec, split_index):
    """Deterministic train/val/test partition.

    Assignment is a pure function of (seed, split index, sample id), so the
    same sample lands in the same bucket no matter which subgraph it was
    materialized on.
    """
    buckets = ([], [], [])
    for s in samples:
        u = stream_value(spec.seed, split_index, s.sample_id)
        if u < spec.train:
            buckets[0].append(s)
        elif u < spec.train + spec.val:
            buckets[1].append(s)
        else:
            buckets[2].append(s)
    return buckets


# ---------------------------------------------------------------------------
# Metrics and model zoo
# ---------------------------------------------------------------------------

def rmse(preds, targets):
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError("prediction/target shape mismatch")
    if preds.size == 0:
        raise ValueError("rmse of an empty batch")
    return float(np.sqrt(np.mean((preds - targets) ** 2)))


def model_zoo(n):
    """The seven compared parametrizations, sized for an n-node graph.

    Graph architectures share K=5 filters and a linear readout at the
    target node; the dense baselines are a plain n-to-n linear map and a
    two-hidden-layer ReLU network.
    """
    return (
        ("linear", DenseArchitecture((n, n))),
        ("graph_filter", GnnArchitecture((1, 64), (5,), nonlinearity="identity")),
        ("fcnn", DenseArchitecture((n, 64, 32, n), nonlinearity="relu")),
        ("graph_perceptron", GnnArchitecture((1, 1), (5,), nonlinearity="relu")),
        ("gnn_2layer_single", GnnArchitecture((1, 1, 1), (5, 5), nonlinearity="relu")),
        ("gnn_1layer", GnnArchitecture((1, 64), (5,), nonlinearity="relu")),
        ("gnn_2layer", GnnArchitecture((1, 64, 32), (5, 5), nonlinearity="relu")),
    )


def evaluate_model(arch, params, shift, samples, chunk=256):
    """RMSE of readout-node predictions over a sample list."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    preds, targets = [], []
    for start in range(0, len(samples), chunk):
        batch = samples[start : start + chunk]
        xs = np.stack([s.x for s in batch])
        if isinstance(arch, GnnArchitecture):
            xs = xs[:, :, None]
        outputs = model_forward(arch, params, shift, xs)
        nodes = np.asarray([s.target_node for s in batch], dtype=np.intp)
        preds.append(outputs[np.arange(len(batch)), nodes])
        targets.append([s.target_value for s in batch])
    return rmse(np.concatenate(preds), np.concatenate(targets))


# ---------------------------------------------------------------------------
# Experiment 1: seven parametrizations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RmseExperimentConfig:
    target_count: int = 6          # predict the most-rated items
    max_items: int | None = None   # graph size cap (most-rated first); None = all
    min_common: int = 3
    graph_from: str = "train"      # estimate the graph from "train" or "all" ratings
    splits: SplitSpec = field(default_factory=SplitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    models: tuple | None = None    # subset of MODEL_NAMES; None = all seven

    def __post_init__(self):
        if self.graph_from not in ("train", "all"):
            raise ValueError("graph_from must be 'train' or 'all'")
        if self.models is not None:
            unknown = set(self.models) - set(MODEL_NAMES)
            if unknown:
                raise ValueError(f"unknown model name(s): {sorted(unknown)}")
        if self.max_items is not None and self.max_items < self.target_count:
            raise ValueError("max_items must cover the target items")


def _graph_items(table, config):
    if config.max_items is None:
        return np.arange(table.item_count)
    return top_rated_items(table, config.max_items)


def _held_out_ids(samples, spec, split_index):
    _, val, test = split_samples(samples, spec, split_index)
    return [s.sample_id for s in val] + [s.sample_id for s in test]


def run_rmse_experiment(table: RatingsTable, config: RmseExperimentConfig, rng: Rng):
    """Train every model on every split; rows follow RESULTS_CSV_COLUMNS.

    With graph_from="train" the similarity graph of each split is estimated
    with the held-out target ratings removed (the input signals still use
    the full table, matching the sample construction). Validation RMSE
    selects the reported epoch's parameters.
    """
    items = _graph_items(table, config)
    targets = top_rated_items(table, config.target_count)
    if not np.all(np.isin(targets, items)):
        raise ValueError("target items must be nodes of the graph")
    names = config.models if config.models is not None else MODEL_NAMES

    # sample inputs come from the full table, so they are split-independent;
    # only the graph estimate changes when held-out ratings are removed
    base_graph = build_similarity_graph(table, items, config.min_common)
    samples = build_samples(table, base_graph, targets)

    rows = []
    for split in range(config.splits.n_splits):
        if config.graph_from == "all":
            graph = base_graph
        else:
            held_out = _held_out_ids(samples, config.splits, split)
            graph = build_similarity_graph(remove_ratings(table, held_out),
                                           items, config.min_common)
        train_set, val_set, test_set = split_samples(samples, config.splits, split)
        zoo = [(name, arch) for name, arch in model_zoo(graph.n) if name in names]
        for model_index, (name, arch) in enumerate(zoo):
            child = rng.spawn(split).spawn(model_index)
            result = train(arch, graph.shift, train_set, config.train, child,
                           val_dataset=val_set)
            rows.append({
                "model": name,
                "split": split,
                "rmse_val": evaluate_model(arch, result.best_params, graph.shift, val_set),
                "rmse_test": evaluate_model(arch, result.best_params, graph.shift, test_set),
                "epochs_ran": len(result.history),
                "param_count": param_count(arch),
            })
    return rows


# ---------------------------------------------------------------------------
# Experiment 2: train small, evaluate on the full graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferExperimentConfig:
    sizes: tuple = (118, 203, 338, 603, 1682)
    target_item: int | None = None  # None = the most-rated item
    min_common: int = 3
    graph_from: str = "train"
    splits: SplitSpec = field(default_factory=SplitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    arch: GnnArchitecture = GnnArchitecture((1, 64, 32), (5, 5), nonlinearity="relu")

    def __post_init__(self):
        if len(self.sizes) == 0 or any(s < 2 for s in self.sizes):
            raise ValueError("sizes must be node counts of at least 2")
        if self.graph_from not in ("train", "all"):
            raise ValueError("graph_from must be 'train' or 'all'")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))


def run_transfer_experiment(table: RatingsTable, config: TransferExperimentConfig, rng: Rng):
    """Train on an n-item subgraph, evaluate the same parameters full-scale.

    The target item is always a node; the remaining n-1 nodes are drawn at
    random per (size, split). Each row averages over splits:
    rel_diff = (rmse_full - rmse_n) / rmse_full.
    """
    if any(s > table.item_count for s in config.sizes):
        raise ValueError("subgraph size exceeds the item count")
    target = most_rated_item(table) if config.target_item is None else int(config.target_item)
    spec = config.splits
    all_items = np.arange(table.item_count)

    base_graph = build_similarity_graph(table, all_items, config.min_common)
    full_samples = build_samples(table, base_graph, [target])
    # per split: the graph-estimation table and the full graph built from it
    by_split = []
    for split in range(spec.n_splits):
        if config.graph_from == "train":
            held_out = _held_out_ids(full_samples, spec, split)
            graph_table = remove_ratings(table, held_out)
            by_split.append((graph_table,
                             build_similarity_graph(graph_table, all_items, config.min_common)))
        else:
            by_split.append((table, base_graph))

    rows = []
    others = all_items[all_items != target]
    for n in config.sizes:
        gaps_n, gaps_full, diffs = [], [], []
        for split in range(spec.n_splits):
            graph_table, full_graph = by_split[split]
            picker = rng.spawn(n).spawn(split)
            chosen = np.concatenate(([target], others[picker.permutation(others.size)[: n - 1]]))
            graph_n = build_similarity_graph(graph_table, chosen, config.min_common)
            samples_n = build_samples(table, graph_n, [target])
            train_set, val_set, test_set = split_samples(samples_n, spec, split)
            trainer = rng.spawn(n).spawn(spec.n_splits + split)
            result = train(config.arch, graph_n.shift, train_set, config.train,
                           trainer, val_dataset=val_set)
            params = result.best_params
            # the parameter tensors carry no graph-size dimension, so the
            # exact same tensors evaluate on the full shift
            assert param_count(config.arch) == (
                sum(b.size for b in params.banks)
                + (params.readout.size if params.readout is not None else 0)
            )
            rmse_n = evaluate_model(config.arch, params, graph_n.shift, test_set)
            _, _, test_full = split_samples(full_samples, spec, split)
            rmse_full = evaluate_model(config.arch, params, full_graph.shift, test_full)
            gaps_n.append(rmse_n)
            gaps_full.append(rmse_full)
            diffs.append(0.0 if rmse_full == 0.0 else (rmse_full - rmse_n) / rmse_full)
        rows.append({
            "n": int(n),
            "rmse_n": float(np.mean(gaps_n)),
            "rmse_full": float(np.mean(gaps_full)),
            "rel_diff": float(np.mean(diffs)),
        })
    return rows


# ---------------------------------------------------------------------------
# Result files
# ---------------------------------------------------------------------------

def write_results_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_CSV_COLUMNS)
        for row in rows:
            writer.writerow([
                row["model"], row["split"],
                repr(float(row["rmse_val"])), repr(float(row["rmse_test"])),
                row["epochs_ran"], row["param_count"],
            ])


def write_transfer_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRANSFER_CSV_COLUMNS)
        for row in rows:
            writer.writerow([
                row["n"],
                repr(float(row["rmse_n"])), repr(float(row["rmse_full"])),
                repr(float(row["rel_diff"])),
            ])
