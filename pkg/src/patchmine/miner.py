"""Levelwise frequent-itemset and association-rule mining.

A pattern is an itemset of non-label items whose support exceeds
``supp_min`` and whose confidence toward the positive label exceeds
``conf_min`` (both strictly).  Candidate itemsets are generated level by
level by joining prefix-sharing frequent itemsets and pruning on subset
frequency; counting enumerates each transaction's candidate subsets, with
all itemsets packed into radix-(D+1) integer keys so the hot loops run in
numpy.  Counts are exact integers throughout; support and confidence
fractions are derived only at the reporting boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ZeroSupportError
from .featurestore import FeatureSet
from .transactions import (
    TransactionDatabase,
    build_database,
    select_by_category,
    select_excluding_category,
)

# Largest dense count array we are willing to allocate (entries).
_BINCOUNT_CAP = 1 << 25
# Rows per enumeration chunk; bounds transient memory at ~C(k, l) * 8 bytes
# per row.
_CHUNK_ROWS = 1 << 15


@dataclass
class Pattern:
    """A mined itemset with its exact support and positive-class confidence."""

    items: tuple[int, ...]
    support: float
    confidence_pos: float
    count: int | None = None
    pos_count: int | None = None
    # Filled lazily during element retrieval.
    positive_transaction_ids: list[int] | None = None


@dataclass
class MineConfig:
    supp_min: float
    conf_min: float
    min_len: int = 2
    max_len: int = 4

    def validate(self) -> None:
        if not 0 < self.supp_min <= 1:
            raise ValueError(f"supp_min {self.supp_min} outside (0, 1]")
        if not 0 < self.conf_min <= 1:
            raise ValueError(f"conf_min {self.conf_min} outside (0, 1]")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(
                f"need 1 <= min_len <= max_len, got "
                f"{self.min_len}..{self.max_len}"
            )


def _count_containing(db: TransactionDatabase, itemset: Iterable[int]) -> int:
    """Exact number of transactions containing ``itemset`` (labels allowed)."""
    wanted = frozenset(int(a) for a in itemset)
    for a in wanted:
        if not 1 <= a <= db.neg_label:
            raise ValueError(f"item id {a} outside [1, {db.neg_label}]")
    labels = {a for a in wanted if a > db.dimension}
    plain = wanted - labels
    count = 0
    for t in db.transactions:
        if labels and not labels <= {t.label_item}:
            continue
        if plain <= set(t.items):
            count += 1
    return count


def support(db: TransactionDatabase, itemset: Iterable[int]) -> float:
    """Fraction of transactions containing ``itemset``; 1.0 for the empty set."""
    if db.N == 0:
        raise ValueError("support is undefined on an empty database")
    return _count_containing(db, itemset) / db.N


def confidence(
    db: TransactionDatabase, itemset: Iterable[int], item: int
) -> float:
    """Conditional frequency of ``item`` among transactions containing
    ``itemset``, computed from exact counts."""
    if db.N == 0:
        raise ValueError("confidence is undefined on an empty database")
    base = _count_containing(db, itemset)
    if base == 0:
        raise ZeroSupportError(
            f"antecedent {sorted(itemset)} has zero support"
        )
    joint = _count_containing(db, set(itemset) | {int(item)})
    return joint / base


# -- flat transaction representation ------------------------------------


def _flatten(db: TransactionDatabase) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Items of all transactions as (flat, offsets, positive mask)."""
    from itertools import chain

    lengths = np.fromiter(
        (len(t.items) for t in db.transactions), np.int64, db.N
    )
    offsets = np.zeros(db.N + 1, np.int64)
    np.cumsum(lengths, out=offsets[1:])
    flat = np.fromiter(
        chain.from_iterable(t.items for t in db.transactions),
        np.int64,
        int(offsets[-1]),
    )
    pos_label = db.pos_label
    pos = np.fromiter(
        (t.label_item == pos_label for t in db.transactions), bool, db.N
    )
    return flat, offsets, pos


def _filter_flat(
    flat: np.ndarray, offsets: np.ndarray, keep_item: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Drop items for which ``keep_item[item]`` is False."""
    mask = keep_item[flat]
    csum = np.concatenate(([0], np.cumsum(mask)))
    new_offsets = csum[offsets]
    return flat[mask], new_offsets


@lru_cache(maxsize=None)
def _comb_table(t: int, l: int) -> np.ndarray:
    return np.array(list(combinations(range(t), l)), dtype=np.int64)


def _iter_subset_keys(
    flat: np.ndarray, offsets: np.ndarray, l: int, radix: int
) -> Iterator[np.ndarray]:
    """Yield packed keys of every l-subset of every transaction, chunked."""
    lengths = np.diff(offsets)
    starts = offsets[:-1]
    for t in np.unique(lengths):
        if t < l:
            continue
        rows = np.nonzero(lengths == t)[0]
        combs = _comb_table(int(t), l)
        for lo in range(0, len(rows), _CHUNK_ROWS):
            sel = rows[lo : lo + _CHUNK_ROWS]
            gather = starts[sel, None] + np.arange(t)[None, :]
            mat = flat[gather]
            sub = mat[:, combs]  # (rows, C(t,l), l)
            keys = sub[:, :, 0].astype(np.int64)
            for j in range(1, l):
                keys = keys * radix + sub[:, :, j]
            yield keys.ravel()


def _count_keys_dense(
    key_iter: Iterator[np.ndarray], space: int
) -> np.ndarray:
    counts = np.zeros(space, np.int64)
    for keys in key_iter:
        counts += np.bincount(keys, minlength=space)
    return counts


def _count_keys_sparse(
    key_iter: Iterator[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Unique occurring keys (sorted) and their total counts."""
    parts = [(k, c) for k, c in (np.unique(ch, return_counts=True) for ch in key_iter)]
    if not parts:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    keys = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts])
    order = np.argsort(keys, kind="stable")
    keys, counts = keys[order], counts[order]
    uniq, first = np.unique(keys, return_index=True)
    summed = np.add.reduceat(counts, first)
    return uniq, summed


def _count_against(
    cand_keys: np.ndarray, key_iter: Iterator[np.ndarray]
) -> np.ndarray:
    """Counts aligned with the sorted candidate key array."""
    counts = np.zeros(len(cand_keys), np.int64)
    if len(cand_keys) == 0:
        return counts
    for keys in key_iter:
        pos = np.searchsorted(cand_keys, keys)
        pos[pos == len(cand_keys)] = 0
        hit = cand_keys[pos] == keys
        counts += np.bincount(pos[hit], minlength=len(cand_keys))
    return counts


def _unpack(keys: np.ndarray, l: int, radix: int) -> np.ndarray:
    """(n, l) item matrix from packed keys."""
    out = np.empty((len(keys), l), np.int64)
    rest = keys.copy()
    for j in range(l - 1, -1, -1):
        out[:, j] = rest % radix
        rest //= radix
    return out


def _drop_position(keys: np.ndarray, l: int, j: int, radix: int) -> np.ndarray:
    """Packed (l-1)-keys obtained by removing digit position j."""
    hi = radix ** (l - j)
    lo = radix ** (l - 1 - j)
    return (keys // hi) * lo + (keys % lo)


def _join_level(
    prev_keys: np.ndarray, l: int, radix: int
) -> np.ndarray:
    """Candidates for level l from sorted frequent (l-1)-keys.

    Joins keys sharing their (l-2)-prefix and prunes candidates having
    any infrequent (l-1)-subset.
    """
    if len(prev_keys) < 2:
        return np.empty(0, np.int64)
    prefixes = prev_keys // radix
    partners = prev_keys % radix
    # Group boundaries over the sorted key array.
    change = np.nonzero(np.diff(prefixes))[0] + 1
    bounds = np.concatenate(([0], change, [len(prev_keys)]))
    cand_parts = []
    for gi in range(len(bounds) - 1):
        a, b = bounds[gi], bounds[gi + 1]
        g = b - a
        if g < 2:
            continue
        i, j = np.triu_indices(g, k=1)
        base = prefixes[a] * radix * radix
        cand_parts.append(base + partners[a + i] * radix + partners[a + j])
    if not cand_parts:
        return np.empty(0, np.int64)
    cand = np.concatenate(cand_parts)
    # Subset pruning: the two generating parents are frequent by
    # construction; check the remaining l-2 deletions.
    for j in range(l - 2):
        sub = _drop_position(cand, l, j, radix)
        pos = np.searchsorted(prev_keys, sub)
        pos[pos == len(prev_keys)] = 0
        cand = cand[prev_keys[pos] == sub]
        if len(cand) == 0:
            break
    return np.sort(cand)


def mine(db: TransactionDatabase, config: MineConfig) -> list[Pattern]:
    """All patterns meeting the support and confidence criteria, exactly.

    Output is sorted by descending support, then lexicographically by
    items.  Patterns contain no label items; the confidence consequent is
    always the positive label.
    """
    config.validate()
    if db.N == 0:
        raise ValueError("cannot mine an empty database")
    radix = db.dimension + 1
    if float(radix) ** config.max_len >= 2**62:
        return _mine_fallback(db, config)

    N = db.N
    flat, offsets, pos_mask = _flatten(db)
    pos_rows = np.nonzero(pos_mask)[0]

    results: list[tuple[int, tuple[int, ...], int, int]] = []

    # Level 1: plain item frequencies.
    counts1 = np.bincount(flat, minlength=radix) if len(flat) else np.zeros(radix, np.int64)
    pflat, poffsets = _select_rows(flat, offsets, pos_rows)
    pcounts1 = np.bincount(pflat, minlength=radix) if len(pflat) else np.zeros(radix, np.int64)
    frequent = (counts1 / N) > config.supp_min
    frequent[0] = False
    f1_items = np.nonzero(frequent)[0]
    if config.min_len <= 1:
        for a in f1_items:
            c, pc = int(counts1[a]), int(pcounts1[a])
            if (pc / c) > config.conf_min and config.max_len >= 1:
                results.append((c, (int(a),), c, pc))

    # All deeper levels work on transactions restricted to frequent items.
    flat, offsets = _filter_flat(flat, offsets, frequent)
    pflat, poffsets = _filter_flat(pflat, poffsets, frequent)

    prev_keys: np.ndarray | None = None  # sorted packed (l-1)-keys
    for level in range(2, config.max_len + 1):
        if level == 2:
            space = radix * radix
            if space <= _BINCOUNT_CAP:
                dense = _count_keys_dense(
                    _iter_subset_keys(flat, offsets, 2, radix), space
                )
                keys = np.nonzero((dense / N) > config.supp_min)[0]
                counts = dense[keys]
                del dense
            else:
                occ, occ_counts = _count_keys_sparse(
                    _iter_subset_keys(flat, offsets, 2, radix)
                )
                keep = (occ_counts / N) > config.supp_min
                keys, counts = occ[keep], occ_counts[keep]
        else:
            cand = _join_level(prev_keys, level, radix)
            if len(cand) == 0:
                break
            # Restrict transactions to items that still occur in some
            # frequent (level-1)-itemset.
            used = np.zeros(radix, bool)
            used[np.unique(_unpack(prev_keys, level - 1, radix))] = True
            flat, offsets = _filter_flat(flat, offsets, used)
            pflat, poffsets = _filter_flat(pflat, poffsets, used)
            cand_counts = _count_against(
                cand, _iter_subset_keys(flat, offsets, level, radix)
            )
            keep = (cand_counts / N) > config.supp_min
            keys, counts = cand[keep], cand_counts[keep]

        if len(keys) == 0:
            break
        if level >= config.min_len:
            pos_counts = _count_against(
                keys, _iter_subset_keys(pflat, poffsets, level, radix)
            )
            conf_ok = np.nonzero((pos_counts / counts) > config.conf_min)[0]
            item_mat = _unpack(keys[conf_ok], level, radix)
            for r, ci in enumerate(conf_ok):
                results.append(
                    (
                        int(counts[ci]),
                        tuple(int(x) for x in item_mat[r]),
                        int(counts[ci]),
                        int(pos_counts[ci]),
                    )
                )
        prev_keys = keys

    results.sort(key=lambda r: (-r[0], r[1]))
    return [
        Pattern(
            items=items,
            support=c / N,
            confidence_pos=pc / c,
            count=c,
            pos_count=pc,
        )
        for _, items, c, pc in results
    ]


def _select_rows(
    flat: np.ndarray, offsets: np.ndarray, rows: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Flat representation restricted to the given transaction rows."""
    lengths = np.diff(offsets)
    row_of = np.repeat(np.arange(len(lengths)), lengths)
    keep_row = np.zeros(len(lengths), bool)
    keep_row[rows] = True
    new_offsets = np.zeros(len(rows) + 1, np.int64)
    np.cumsum(lengths[rows], out=new_offsets[1:])
    return flat[keep_row[row_of]], new_offsets


def _mine_fallback(db: TransactionDatabase, config: MineConfig) -> list[Pattern]:
    """Object-based levelwise path for dimensions too large to radix-pack."""
    N = db.N
    txns = [t.items for t in db.transactions]
    is_pos = [db.is_positive(i) for i in range(db.N)]

    counts: dict[tuple[int, ...], int] = {}
    pos_counts: dict[tuple[int, ...], int] = {}
    for items, p in zip(txns, is_pos):
        for a in items:
            key = (a,)
            counts[key] = counts.get(key, 0) + 1
            if p:
                pos_counts[key] = pos_counts.get(key, 0) + 1
    freq = {k for k, c in counts.items() if (c / N) > config.supp_min}
    results: list[tuple[int, tuple[int, ...], int, int]] = []
    if config.min_len <= 1:
        for k in freq:
            c, pc = counts[k], pos_counts.get(k, 0)
            if (pc / c) > config.conf_min:
                results.append((c, k, c, pc))

    keep_items = {k[0] for k in freq}
    txns = [tuple(a for a in t if a in keep_items) for t in txns]
    prev = sorted(freq)
    for level in range(2, config.max_len + 1):
        prev_set = set(prev)
        cand: set[tuple[int, ...]] = set()
        for i, a in enumerate(prev):
            for b in prev[i + 1 :]:
                if a[:-1] != b[:-1]:
                    break
                c = a + (b[-1],)
                if all(
                    c[:j] + c[j + 1 :] in prev_set for j in range(level - 2)
                ):
                    cand.add(c)
        if not cand:
            break
        ccounts: dict[tuple[int, ...], int] = {}
        cpos: dict[tuple[int, ...], int] = {}
        for items, p in zip(txns, is_pos):
            if len(items) < level:
                continue
            for sub in combinations(items, level):
                if sub in cand:
                    ccounts[sub] = ccounts.get(sub, 0) + 1
                    if p:
                        cpos[sub] = cpos.get(sub, 0) + 1
        level_freq = {
            k: c for k, c in ccounts.items() if (c / N) > config.supp_min
        }
        if not level_freq:
            break
        if level >= config.min_len:
            for k, c in level_freq.items():
                pc = cpos.get(k, 0)
                if (pc / c) > config.conf_min:
                    results.append((c, k, c, pc))
        prev = sorted(level_freq)

    results.sort(key=lambda r: (-r[0], r[1]))
    return [
        Pattern(items=i, support=c / N, confidence_pos=pc / c, count=c, pos_count=pc)
        for _, i, c, pc in results
    ]


@dataclass
class PerCategoryMining:
    """Patterns per category plus any too-few-patterns warnings."""

    patterns: dict[int, list[Pattern]]
    warnings: list[str] = field(default_factory=list)


def mine_per_category(
    fset: FeatureSet,
    k: int,
    config: MineConfig | Mapping[int, MineConfig],
    natural_rate: float = 1.0,
    seed: int = 0,
    min_patterns: int = 100,
) -> PerCategoryMining:
    """Mine each category against the pooled remaining categories.

    Emits a warning record for any category yielding fewer than
    ``min_patterns`` patterns; thresholds are never auto-lowered.
    """
    out: dict[int, list[Pattern]] = {}
    warnings: list[str] = []
    for cat in range(len(fset.category_names)):
        cfg = config[cat] if isinstance(config, Mapping) else config
        db = build_database(
            select_by_category(fset, cat),
            select_excluding_category(fset, cat),
            k,
            natural_rate=natural_rate,
            seed=seed,
        )
        patterns = mine(db, cfg)
        out[cat] = patterns
        if len(patterns) < min_patterns:
            warnings.append(
                f"category {fset.category_names[cat]!r}: "
                f"{len(patterns)} patterns (fewer than {min_patterns})"
            )
    return PerCategoryMining(patterns=out, warnings=warnings)


def save_patterns(patterns: Sequence[Pattern], path: str | Path) -> None:
    """One JSON object per line: items, support, confidence."""
    with open(path, "w") as fh:
        for p in patterns:
            fh.write(
                json.dumps(
                    {
                        "items": list(p.items),
                        "support": p.support,
                        "confidence": p.confidence_pos,
                    }
                )
                + "\n"
            )


def load_patterns(path: str | Path) -> list[Pattern]:
    """Read patterns written by :func:`save_patterns`, bit-exactly."""
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(
                Pattern(
                    items=tuple(obj["items"]),
                    support=obj["support"],
                    confidence_pos=obj["confidence"],
                )
            )
    return out
