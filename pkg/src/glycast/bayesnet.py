"""Discrete Bayesian network learning and inference over encoded clinical data.

Structure search is score-based hill climbing with a tabu memory of visited
structures, scored by BIC. Robustness comes from bootstrap resampling: the
fraction of resampled networks containing a directed arc is that arc's
strength, and the consensus network keeps arcs at or above a strength
threshold. Parameters are multinomial MLE with optional Laplace smoothing, and
marker posteriors come from exact variable elimination.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import InferenceError, RangeError, SchemaError
from .preprocess import DiscreteDataset

Arc = tuple[str, str]

ANNOTATION_CATEGORIES = ("causal", "correlated", "independent")


def _toposort(nodes: Sequence[str], arcs: Iterable[Arc]) -> list[str]:
    children: dict[str, set[str]] = {n: set() for n in nodes}
    indegree: dict[str, int] = {n: 0 for n in nodes}
    for u, v in arcs:
        if v not in children[u]:
            children[u].add(v)
            indegree[v] += 1
    ready = deque(sorted(n for n in nodes if indegree[n] == 0))
    order: list[str] = []
    while ready:
        node = ready.popleft()
        order.append(node)
        for child in sorted(children[node]):
            indegree[child] -= 1
            if indegree[child] == 0:
                ready.append(child)
    if len(order) != len(nodes):
        raise SchemaError("arc set contains a cycle")
    return order


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph over named nodes."""

    nodes: tuple[str, ...]
    arcs: frozenset[Arc] = frozenset()

    def __post_init__(self) -> None:
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise SchemaError("duplicate node names")
        for u, v in self.arcs:
            if u == v:
                raise SchemaError(f"self-arc {u}->{v}")
            if u not in node_set or v not in node_set:
                raise SchemaError(f"arc {u}->{v} references unknown node")
        _toposort(self.nodes, self.arcs)  # raises on cycles

    def parents_of(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(u for u, v in self.arcs if v == node))

    def skeleton(self) -> frozenset[frozenset[str]]:
        return frozenset(frozenset(arc) for arc in self.arcs)

    def with_arcs(self, arcs: Iterable[Arc]) -> "Dag":
        return Dag(self.nodes, frozenset(arcs))


def _has_path(children: Mapping[str, set[str]], src: str, dst: str) -> bool:
    stack = [src]
    seen = {src}
    while stack:
        node = stack.pop()
        if node == dst:
            return True
        for child in children[node]:
            if child not in seen:
                seen.add(child)
                stack.append(child)
    return False


class _FamilyScores:
    """Caching BIC family scorer over one DiscreteDataset."""

    def __init__(self, data: DiscreteDataset):
        if data.n_rows == 0:
            raise SchemaError("cannot score an empty dataset")
        self.data = data
        self.log_n = math.log(data.n_rows)
        self._cache: dict[tuple[str, tuple[str, ...]], float] = {}

    def family(self, node: str, parents: tuple[str, ...]) -> float:
        key = (node, parents)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        data = self.data
        node_col = data.column(node)
        card = data.card_of(node)
        code = node_col.copy()
        stride = card
        n_cfg = 1
        for parent in parents:
            code += data.column(parent) * stride
            parent_card = data.card_of(parent)
            stride *= parent_card
            n_cfg *= parent_card
        counts = np.bincount(code, minlength=card * n_cfg).reshape(n_cfg, card)
        row_totals = counts.sum(axis=1)
        nonzero = counts > 0
        loglik = float(np.sum(counts[nonzero] * np.log(counts[nonzero])))
        rows = row_totals > 0
        loglik -= float(np.sum(row_totals[rows] * np.log(row_totals[rows])))
        k_params = (card - 1) * n_cfg
        score = loglik - 0.5 * k_params * self.log_n
        self._cache[key] = score
        return score


def bic_score(dag: Dag, data: DiscreteDataset) -> float:
    """Decomposable BIC: multinomial MLE log-likelihood minus (k/2)ln(n)."""
    for node in dag.nodes:
        data.index_of(node)  # raises SchemaError for unknown nodes
    scorer = _FamilyScores(data)
    return sum(scorer.family(node, dag.parents_of(node)) for node in dag.nodes)


@dataclass(frozen=True)
class TabuParams:
    tabu_len: int = 100
    max_iter: int = 500
    # Give up after this many consecutive iterations without improving the
    # best score; the structure space at <=16 nodes plateaus long before
    # max_iter.
    stall_limit: int = 30

    def __post_init__(self) -> None:
        if self.tabu_len < 1:
            raise RangeError("tabu_len must be >= 1")
        if self.max_iter < 0:
            raise RangeError("max_iter must be >= 0")
        if self.stall_limit < 1:
            raise RangeError("stall_limit must be >= 1")


# Scores within this absolute margin are treated as tied and broken by a
# deterministic (move kind, arc) order. Score-equivalent orientations of the
# same skeleton differ only by float rounding, and letting that rounding pick
# the direction would scatter bootstrap strength across the two orientations.
_SCORE_EPS = 1e-6


def tabu_search(data: DiscreteDataset, params: TabuParams = TabuParams()) -> Dag:
    """Hill-climb over add/delete/reverse arc moves with a visited-set tabu.

    Every iteration applies the best non-tabu move, improving or not; a deque
    of recently visited structures (canonical arc-set hashes) blocks revisits.
    Returns the best-scoring DAG seen.
    """
    nodes = tuple(data.variables)
    scorer = _FamilyScores(data)

    parents: dict[str, tuple[str, ...]] = {n: () for n in nodes}
    children: dict[str, set[str]] = {n: set() for n in nodes}
    arcs: set[Arc] = set()
    current_score = sum(scorer.family(n, ()) for n in nodes)

    best_arcs = frozenset(arcs)
    best_score = current_score

    tabu: deque[frozenset[Arc]] = deque(maxlen=params.tabu_len)
    tabu_set: set[frozenset[Arc]] = set()

    def remember(structure: frozenset[Arc]) -> None:
        if structure in tabu_set:
            return
        if len(tabu) == tabu.maxlen:
            tabu_set.discard(tabu[0])
        tabu.append(structure)
        tabu_set.add(structure)

    remember(frozenset(arcs))

    def add_parent(node: str, parent: str) -> tuple[str, ...]:
        return tuple(sorted(parents[node] + (parent,)))

    def drop_parent(node: str, parent: str) -> tuple[str, ...]:
        return tuple(p for p in parents[node] if p != parent)

    stall = 0
    for _ in range(params.max_iter):
        candidates: list[tuple[float, int, Arc, frozenset[Arc]]] = []
        # 0 = add, 1 = delete, 2 = reverse; the code doubles as a
        # deterministic tie-break together with the arc itself.
        for u in nodes:
            for v in nodes:
                if u == v:
                    continue
                arc = (u, v)
                if arc in arcs:
                    continue
                if (v, u) in arcs:
                    continue
                if _has_path(children, v, u):
                    continue  # would close a cycle
                structure = frozenset(arcs | {arc})
                if structure in tabu_set:
                    continue
                delta = scorer.family(v, add_parent(v, u)) - scorer.family(v, parents[v])
                candidates.append((current_score + delta, 0, arc, structure))
        for arc in arcs:
            u, v = arc
            structure = frozenset(arcs - {arc})
            if structure not in tabu_set:
                delta = scorer.family(v, drop_parent(v, u)) - scorer.family(v, parents[v])
                candidates.append((current_score + delta, 1, arc, structure))
            children[u].discard(v)
            reversible = not _has_path(children, u, v)
            children[u].add(v)
            if reversible:
                structure = frozenset((arcs - {arc}) | {(v, u)})
                if structure not in tabu_set:
                    delta = (
                        scorer.family(v, drop_parent(v, u))
                        - scorer.family(v, parents[v])
                        + scorer.family(u, add_parent(u, v))
                        - scorer.family(u, parents[u])
                    )
                    candidates.append((current_score + delta, 2, arc, structure))
        if not candidates:
            break
        best_move = candidates[0]
        for move in candidates[1:]:
            if move[0] > best_move[0] + _SCORE_EPS:
                best_move = move
            elif move[0] > best_move[0] - _SCORE_EPS and move[1:3] < best_move[1:3]:
                best_move = move
        new_score, kind, (u, v), structure = best_move

        if kind == 0:
            arcs.add((u, v))
            children[u].add(v)
            parents[v] = add_parent(v, u)
        elif kind == 1:
            arcs.discard((u, v))
            children[u].discard(v)
            parents[v] = drop_parent(v, u)
        else:
            arcs.discard((u, v))
            children[u].discard(v)
            parents[v] = drop_parent(v, u)
            arcs.add((v, u))
            children[v].add(u)
            parents[u] = add_parent(u, v)
        current_score = new_score
        remember(structure)

        if current_score > best_score + _SCORE_EPS:
            best_score = current_score
            best_arcs = frozenset(arcs)
            stall = 0
        else:
            stall += 1
            if stall >= params.stall_limit:
                break

    return Dag(nodes, best_arcs)


@dataclass(frozen=True)
class ArcStrengthTable:
    """Directed-arc bootstrap frequencies; absent arcs have strength 0."""

    strengths: Mapping[Arc, float]

    def __post_init__(self) -> None:
        for arc, value in self.strengths.items():
            if not 0.0 <= value <= 1.0:
                raise RangeError(f"strength of {arc} outside [0, 1]: {value}")

    def strength(self, u: str, v: str) -> float:
        return float(self.strengths.get((u, v), 0.0))


def _worker_count() -> int:
    raw = os.environ.get("GLYCAST_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def bootstrap_consensus(
    data: DiscreteDataset,
    b: int = 100,
    threshold: float = 0.85,
    seed: int = 0,
    params: TabuParams = TabuParams(),
) -> tuple[ArcStrengthTable, Dag]:
    """Learn b networks on row resamples and keep arcs meeting the threshold.

    When both directions of an arc pass, the stronger one is kept (ties toward
    the lexicographically smaller source); retained arcs are admitted in
    decreasing strength order, skipping any that would close a cycle.
    """
    if b < 1:
        raise RangeError("b must be >= 1")
    if not 0.0 < threshold <= 1.0:
        raise RangeError("threshold must lie in (0, 1]")
    n = data.n_rows

    def one_replicate(rep: int) -> frozenset[Arc]:
        rng = np.random.default_rng([seed, rep])
        rows = rng.integers(0, n, size=n)
        resample = DiscreteDataset(
            variables=data.variables,
            cards=data.cards,
            matrix=data.matrix[rows],
            codecs=data.codecs,
        )
        return tabu_search(resample, params).arcs

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            replicate_arcs = list(pool.map(one_replicate, range(b)))
    else:
        replicate_arcs = [one_replicate(rep) for rep in range(b)]

    counts: dict[Arc, int] = {}
    for arcs in replicate_arcs:
        for arc in arcs:
            counts[arc] = counts.get(arc, 0) + 1
    strengths = {arc: count / b for arc, count in counts.items()}
    table = ArcStrengthTable(strengths=strengths)

    retained: dict[Arc, float] = {}
    for (u, v), s in strengths.items():
        if s < threshold:
            continue
        rev = strengths.get((v, u), 0.0)
        if rev >= threshold:
            if rev > s or (rev == s and (v, u) < (u, v)):
                continue  # the other direction wins
        retained[(u, v)] = s

    admitted: set[Arc] = set()
    children: dict[str, set[str]] = {node: set() for node in data.variables}
    for (u, v), s in sorted(retained.items(), key=lambda item: (-item[1], item[0])):
        if _has_path(children, v, u):
            continue
        admitted.add((u, v))
        children[u].add(v)
    return table, Dag(tuple(data.variables), frozenset(admitted))


def merge_consensus(
    dag_a: Dag,
    strengths_a: ArcStrengthTable,
    dag_b: Dag,
    strengths_b: ArcStrengthTable,
) -> tuple[Dag, dict[Arc, str], dict[Arc, float]]:
    """Union two consensus networks, tagging arcs consensus/unique/possible.

    Arcs present in both inputs are "consensus", arcs in exactly one are
    "unique". Nodes left without any arc get their strongest sub-threshold arc
    (either direction, either table) tagged "possible" so the merged network
    connects every variable; cycle-closing candidates are skipped.
    """
    if dag_a.nodes != dag_b.nodes:
        raise SchemaError("cannot merge networks over different node sets")
    nodes = dag_a.nodes
    types: dict[Arc, str] = {}
    merged_strength: dict[Arc, float] = {}
    children: dict[str, set[str]] = {n: set() for n in nodes}
    arcs: set[Arc] = set()

    candidates = sorted(
        dag_a.arcs | dag_b.arcs,
        key=lambda arc: (-max(strengths_a.strength(*arc), strengths_b.strength(*arc)), arc),
    )
    for u, v in candidates:
        if (v, u) in arcs or _has_path(children, v, u):
            continue
        arcs.add((u, v))
        children[u].add(v)
        types[(u, v)] = "consensus" if (u, v) in dag_a.arcs and (u, v) in dag_b.arcs else "unique"
        merged_strength[(u, v)] = max(strengths_a.strength(u, v), strengths_b.strength(u, v))

    connected = {n for arc in arcs for n in arc}
    pool = {**strengths_a.strengths}
    for arc, s in strengths_b.strengths.items():
        pool[arc] = max(pool.get(arc, 0.0), s)
    for node in nodes:
        if node in connected:
            continue
        incident = sorted(
            ((s, arc) for arc, s in pool.items() if node in arc and arc not in arcs),
            key=lambda item: (-item[0], item[1]),
        )
        for s, (u, v) in incident:
            if (v, u) in arcs or _has_path(children, v, u):
                continue
            arcs.add((u, v))
            children[u].add(v)
            types[(u, v)] = "possible"
            merged_strength[(u, v)] = s
            connected.update((u, v))
            break

    return Dag(nodes, frozenset(arcs)), types, merged_strength


@dataclass(frozen=True)
class BayesianNetworkModel:
    """Consensus DAG with fitted CPTs and optional arc metadata.

    CPT rows are indexed by the mixed-radix code of the node's sorted parent
    classes (first parent most significant); every row sums to 1.
    """

    dag: Dag
    cards: Mapping[str, int]
    cpts: Mapping[str, np.ndarray]
    parent_order: Mapping[str, tuple[str, ...]]
    representatives: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    strengths: Optional[ArcStrengthTable] = None
    annotations: Mapping[Arc, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for node in self.dag.nodes:
            cpt = self.cpts[node]
            card = self.cards[node]
            n_cfg = 1
            for parent in self.parent_order[node]:
                n_cfg *= self.cards[parent]
            if cpt.shape != (n_cfg, card):
                raise SchemaError(f"CPT of {node} has shape {cpt.shape}, expected {(n_cfg, card)}")
            if not np.allclose(cpt.sum(axis=1), 1.0, atol=1e-9):
                raise SchemaError(f"CPT rows of {node} do not sum to 1")
        for arc, category in self.annotations.items():
            if arc not in self.dag.arcs:
                raise SchemaError(f"annotation references absent arc {arc[0]}->{arc[1]}")
            if category not in ANNOTATION_CATEGORIES:
                raise SchemaError(f"unknown annotation category {category!r} for {arc}")

    def representative_values(self, node: str) -> tuple[float, ...]:
        reps = self.representatives.get(node)
        if reps is None:
            return tuple(float(k) for k in range(self.cards[node]))
        return reps


def fit_parameters(dag: Dag, data: DiscreteDataset, alpha: float = 1.0) -> BayesianNetworkModel:
    """Estimate CPTs by (smoothed) maximum likelihood.

    entry = (count + alpha) / (row_total + alpha * card); alpha=0 is pure MLE
    and leaves unseen parent configurations as uniform rows.
    """
    if alpha < 0:
        raise RangeError("alpha must be >= 0")
    cards = {name: data.card_of(name) for name in dag.nodes}
    cpts: dict[str, np.ndarray] = {}
    parent_order: dict[str, tuple[str, ...]] = {}
    for node in dag.nodes:
        parents = dag.parents_of(node)
        parent_order[node] = parents
        card = cards[node]
        n_cfg = 1
        for parent in parents:
            n_cfg *= cards[parent]
        code = np.zeros(data.n_rows, dtype=np.int64)
        for parent in parents:  # first parent most significant
            code = code * cards[parent] + data.column(parent)
        code = code * card + data.column(node)
        counts = np.bincount(code, minlength=n_cfg * card).reshape(n_cfg, card).astype(float)
        counts += alpha
        row_totals = counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            cpt = counts / row_totals
        cpt[np.isnan(cpt).any(axis=1)] = 1.0 / card  # unseen config, alpha = 0
        cpts[node] = cpt

    representatives: dict[str, tuple[float, ...]] = {}
    for codec in data.codecs:
        if codec.name in cards:
            representatives[codec.name] = codec.representatives

    return BayesianNetworkModel(
        dag=dag,
        cards=cards,
        cpts=cpts,
        parent_order=parent_order,
        representatives=representatives,
    )


@dataclass(frozen=True)
class _Factor:
    vars: tuple[str, ...]
    table: np.ndarray

    def reduce(self, var: str, value: int) -> "_Factor":
        axis = self.vars.index(var)
        table = np.take(self.table, value, axis=axis)
        return _Factor(tuple(v for v in self.vars if v != var), table)

    def sum_out(self, var: str) -> "_Factor":
        axis = self.vars.index(var)
        return _Factor(tuple(v for v in self.vars if v != var), self.table.sum(axis=axis))


def _multiply(factors: Sequence[_Factor]) -> _Factor:
    all_vars = tuple(sorted({v for f in factors for v in f.vars}))
    table = np.ones([1] * len(all_vars)) if all_vars else np.ones(())
    for factor in factors:
        present = [v for v in all_vars if v in factor.vars]
        aligned = np.transpose(factor.table, [factor.vars.index(v) for v in present])
        shape = [aligned.shape[present.index(v)] if v in factor.vars else 1 for v in all_vars]
        table = table * aligned.reshape(shape)
    return _Factor(all_vars, table)


def infer_posterior(
    model: BayesianNetworkModel, target: str, evidence: Mapping[str, int]
) -> np.ndarray:
    """Exact posterior over `target` classes by variable elimination."""
    if target not in model.cards:
        raise SchemaError(f"unknown target variable {target}")
    for var, value in evidence.items():
        if var not in model.cards:
            raise SchemaError(f"evidence variable {var} is not in the model")
        if not 0 <= value < model.cards[var]:
            raise RangeError(f"evidence {var}={value} outside 0..{model.cards[var] - 1}")
    if target in evidence:
        raise SchemaError(f"target {target} cannot also be evidence")

    factors: list[_Factor] = []
    for node in model.dag.nodes:
        parents = model.parent_order[node]
        shape = [model.cards[p] for p in parents] + [model.cards[node]]
        factor = _Factor(tuple(parents) + (node,), model.cpts[node].reshape(shape))
        for var in factor.vars:
            if var in evidence:
                factor = factor.reduce(var, evidence[var])
        factors.append(factor)

    to_eliminate = sorted(set(model.dag.nodes) - set(evidence) - {target})
    while to_eliminate:
        # Min-weight heuristic: eliminate the variable whose product factor is
        # smallest; deterministic tie-break by name.
        def weight(var: str) -> tuple[int, str]:
            involved_vars = {v for f in factors if var in f.vars for v in f.vars}
            size = 1
            for v in involved_vars:
                size *= model.cards[v]
            return size, var

        var = min(to_eliminate, key=weight)
        to_eliminate.remove(var)
        involved = [f for f in factors if var in f.vars]
        if not involved:
            continue
        factors = [f for f in factors if var not in f.vars]
        factors.append(_multiply(involved).sum_out(var))

    joint = _multiply(factors)
    if joint.vars != (target,):
        raise InferenceError(f"elimination left unexpected variables {joint.vars}")
    table = joint.table
    total = float(table.sum())
    if total <= 0.0:
        raise InferenceError("contradictory evidence: posterior mass is zero")
    return table / total


def infer_markers(
    model: BayesianNetworkModel, evidence: Mapping[str, int]
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Posteriors and expected mg/dL values for the FPG and 2HPP markers."""
    for marker in ("fpg", "hpp2"):
        if marker not in model.cards:
            raise SchemaError(f"model has no {marker} node")
        if marker in evidence:
            raise SchemaError(f"evidence must not include {marker}")
    fpg_posterior = infer_posterior(model, "fpg", evidence)
    hpp2_posterior = infer_posterior(model, "hpp2", evidence)
    fpg_hat = float(np.dot(fpg_posterior, model.representative_values("fpg")))
    hpp2_hat = float(np.dot(hpp2_posterior, model.representative_values("hpp2")))
    return fpg_posterior, hpp2_posterior, fpg_hat, hpp2_hat


def network_to_json(
    dag: Dag,
    strengths: Optional[ArcStrengthTable] = None,
    types: Optional[Mapping[Arc, str]] = None,
) -> dict:
    arcs = []
    for u, v in sorted(dag.arcs):
        entry = {"from": u, "to": v}
        if strengths is not None:
            entry["strength"] = strengths.strength(u, v)
        if types is not None and (u, v) in types:
            entry["type"] = types[(u, v)]
        arcs.append(entry)
    return {"nodes": list(dag.nodes), "arcs": arcs}


def cpts_to_json(model: BayesianNetworkModel) -> dict:
    return {
        node: {
            "parents": list(model.parent_order[node]),
            "card": int(model.cards[node]),
            "table": [[float(p) for p in row] for row in model.cpts[node]],
        }
        for node in model.dag.nodes
    }


def load_arc_annotations(path: Path | str) -> dict[Arc, str]:
    """Read a from,to,category CSV of expert arc annotations."""
    annotations: dict[Arc, str] = {}
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = [h.strip().lower() for h in next(reader)]
        if header != ["from", "to", "category"]:
            raise SchemaError(f"{path}: expected header from,to,category")
        for i, cells in enumerate(reader):
            if len(cells) < 3:
                raise SchemaError(f"{path}: row {i} is incomplete")
            u, v, category = (c.strip() for c in cells[:3])
            if category not in ANNOTATION_CATEGORIES:
                raise SchemaError(f"{path}: row {i}: unknown category {category!r}")
            if (u, v) in annotations:
                raise SchemaError(f"{path}: duplicate annotation for {u}->{v}")
            annotations[(u, v)] = category
    return annotations


def annotate_model(model: BayesianNetworkModel, annotations: Mapping[Arc, str]) -> BayesianNetworkModel:
    return BayesianNetworkModel(
        dag=model.dag,
        cards=model.cards,
        cpts=model.cpts,
        parent_order=model.parent_order,
        representatives=model.representatives,
        strengths=model.strengths,
        annotations=dict(annotations),
    )


def save_network_json(
    path: Path | str,
    dag: Dag,
    strengths: Optional[ArcStrengthTable] = None,
    types: Optional[Mapping[Arc, str]] = None,
) -> None:
    payload = network_to_json(dag, strengths, types)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_network_json(path: Path | str) -> tuple[Dag, ArcStrengthTable]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    nodes = tuple(payload["nodes"])
    arcs = frozenset((a["from"], a["to"]) for a in payload["arcs"])
    strengths = {
        (a["from"], a["to"]): float(a.get("strength", 1.0)) for a in payload["arcs"]
    }
    return Dag(nodes, arcs), ArcStrengthTable(strengths=strengths)
