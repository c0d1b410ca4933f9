"""
Dictionary recovery score on the equivalent Kronecker dictionaries.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment

from denoise.dictionary import DictionaryPair

MATCH_THRESHOLD = 0.1


def _unit_columns(d: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(d, axis=0)
    norms[norms == 0] = 1.0
    return d / norms


def atom_distances(true_atoms: np.ndarray, learned_atoms: np.ndarray) -> np.ndarray:
    """1 - |d_i^T dhat_j| for every true/learned pair."""
    if true_atoms.shape[0] != learned_atoms.shape[0]:
        raise ValueError(f"atom lengths differ: {true_atoms.shape[0]} vs {learned_atoms.shape[0]}")
    cos = np.abs(_unit_columns(true_atoms).T @ _unit_columns(learned_atoms))
    return 1.0 - np.clip(cos, 0.0, 1.0)


def greedy_match(dist: np.ndarray) -> list[tuple[int, int]]:
    """Pairs taken in ascending distance, each row and column used at most once."""
    order = np.argsort(dist, axis=None, kind="stable")
    used_rows, used_cols = set(), set()
    pairs = []
    limit = min(dist.shape)
    for flat in order:
        i, j = np.unravel_index(flat, dist.shape)
        if i in used_rows or j in used_cols:
            continue
        used_rows.add(i)
        used_cols.add(j)
        pairs.append((int(i), int(j)))
        if len(pairs) == limit:
            break
    return pairs


def dictionary_recovery_ratio(true_pair: DictionaryPair, learned_pair: DictionaryPair,
                              matching: str = "greedy", threshold: float = MATCH_THRESHOLD) -> float:
    """Fraction of true atoms of D^e (x) D^a matched by a learned atom within `threshold`."""
    if true_pair.d_a.shape[0] != learned_pair.d_a.shape[0] or true_pair.d_e.shape[0] != learned_pair.d_e.shape[0]:
        raise ValueError("dictionary pairs have different atom lengths")
    dist = atom_distances(true_pair.equivalent(), learned_pair.equivalent())
    if matching == "greedy":
        pairs = greedy_match(dist)
    elif matching == "hungarian":
        rows, cols = linear_sum_assignment(dist)
        pairs = list(zip(rows.tolist(), cols.tolist()))
    else:
        raise ValueError(f"matching must be 'greedy' or 'hungarian', got {matching!r}")
    hits = sum(1 for i, j in pairs if dist[i, j] < threshold)
    return hits / dist.shape[0]
