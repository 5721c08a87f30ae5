"""Greedy successor assignment and link-path construction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InferenceError(ValueError):
    pass


@dataclass
class AssignmentTrace:
    """Diagnostics from one run of :func:`assign_successors`."""

    outer_iterations: int = 0
    zeroed: int = 0
    cycles_broken: int = 0


def _argmax(row: np.ndarray) -> int:
    # np.argmax returns the first maximum: ties go to the lowest column
    return int(np.argmax(row))


def assign_successors(
    probabilities,
    break_cycles: bool = True,
    trace: AssignmentTrace | None = None,
) -> np.ndarray:
    """Pick one successor per word from a row-stochastic link matrix.

    Each word greedily claims its most probable successor. When two words
    claim the same successor the one with the higher probability keeps it;
    the loser's entry is zeroed and it re-selects on the next sweep. Claims
    on oneself (path terminals) never conflict. The input is not modified.

    With ``break_cycles`` any remaining cycle of length >= 2 is cut at its
    least probable link, whose source becomes a terminal, so every word ends
    up on a path.
    """
    probs = np.array(probabilities, dtype=np.float64, copy=True)
    if probs.ndim != 2 or probs.shape[0] != probs.shape[1]:
        raise InferenceError(f"expected a square matrix, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise InferenceError("probability matrix contains non-finite values")
    original = probs.copy()
    n = len(probs)
    trace = trace if trace is not None else AssignmentTrace()
    word2succ: dict[int, int] = {}
    succ2word: dict[int, int] = {}
    while len(word2succ) < n:
        trace.outer_iterations += 1
        for i in range(n):
            j = _argmax(probs[i])
            if j not in succ2word:
                word2succ[i] = j
                succ2word[j] = i
                continue
            old_i = succ2word[j]
            if old_i == i:
                continue
            if old_i == j:
                word2succ[i] = j
                succ2word[j] = i
            elif i == j:
                word2succ[i] = j
            elif probs[i, j] > probs[old_i, j]:
                word2succ[i] = j
                succ2word[j] = i
                word2succ.pop(old_i, None)
                probs[old_i, j] = 0.0
                trace.zeroed += 1
            else:
                probs[i, j] = 0.0
                trace.zeroed += 1
    succ = np.array([word2succ[i] for i in range(n)], dtype=np.int64)
    if break_cycles:
        trace.cycles_broken = _break_cycles(succ, original)
    return succ


def _break_cycles(succ: np.ndarray, probs: np.ndarray) -> int:
    n = len(succ)
    state = np.zeros(n, dtype=np.int8)  # 0 unvisited, 1 on stack, 2 done
    broken = 0
    for start in range(n):
        path = []
        x = start
        while state[x] == 0:
            state[x] = 1
            path.append(x)
            x = int(succ[x])
        if state[x] == 1 and succ[x] != x:
            cycle = path[path.index(x):]
            weakest = min(cycle, key=lambda i: (probs[i, succ[i]], i))
            succ[weakest] = weakest
            broken += 1
        for p in path:
            state[p] = 2
    return broken


def validate_successors(succ) -> None:
    succ = np.asarray(succ)
    n = len(succ)
    if n and (succ.min() < 0 or succ.max() >= n):
        raise InferenceError("successor index out of range")
    claimed: dict[int, int] = {}
    for i, j in enumerate(succ.tolist()):
        if i == j:
            continue
        if j in claimed:
            raise InferenceError(f"word {j} has two predecessors: {claimed[j]} and {i}")
        claimed[j] = i


def generate_paths(succ) -> list[list[int]]:
    """Ordered groups obtained by walking back from every terminal (self-successor)."""
    succ = [int(s) for s in np.asarray(succ).tolist()]
    validate_successors(succ)
    word2succ = dict(enumerate(succ))
    succ2word = {s: w for w, s in word2succ.items() if w != s}
    groups: list[list[int]] = []
    seen: set[int] = set()

    def find_path(x: int) -> list[int]:
        path = [x]
        local_seen = {x}
        while x in succ2word:
            prev = succ2word[x]
            if prev in local_seen or prev in seen:
                break  # cycle guard
            path.insert(0, prev)
            local_seen.add(prev)
            x = prev
        return path

    for word in range(len(succ)):
        if word not in seen and word2succ[word] == word:
            path = find_path(word)
            groups.append(path)
            seen.update(path)
    return groups


def paths_to_successors(groups: list[list[int]], n: int) -> np.ndarray:
    """Re-flatten groups into a successor map (consecutive pairs plus terminals)."""
    succ = np.arange(n)
    for g in groups:
        for a, b in zip(g[:-1], g[1:]):
            succ[a] = b
    return succ


def link_probabilities(probabilities) -> list[list[int]]:
    """assign_successors followed by generate_paths."""
    return generate_paths(assign_successors(probabilities))


def link_tile(tile, model, order=None) -> list[list[int]]:
    """Model forward on the sorted presentation order, then S1 and S2."""
    from .corpus import sort_words

    if order is None:
        order = sort_words(tile)
    return link_probabilities(model.predict_proba(tile, order))
