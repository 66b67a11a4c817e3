"""Posterior summarization and validation against simulated truth.

Provides the edge-probability tree (fraction of retained samples carrying
each directed transmission edge), ROC/AUC scoring against a known truth,
group-recovery probabilities for the importation structure model, network
summaries (secondary infections, subtree sizes), and posterior predictive
checks on importation / acquisition counts and mean pairwise diversity.

ROC universe. True edges are the positives. The negative class is every
other ordered pair (a, b) such that b is a true acquisition and a could
feasibly have infected b: a day exists in b's admissible colonization
window (admission to first positive screen) on which a, per the true
state, was able to transmit. The uninformed baseline is scored on the
same universe, with infection times taken as known.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .likelihood import IMPORTATION_STRUCTURE, TRANSMISSION_DIVERSITY, ModelParams
from .mcmc import PosteriorTrace
from .simulate import SimulatedTruth, simulate_on_schedule, _transmits_on

ROC_NEGATIVE_DEFINITION = (
    "ordered pairs (a,b) with b a true acquisition and a able to transmit, "
    "per the true state, on some day in [admit(b), min(discharge(b), "
    "first positive screen(b))], excluding true edges"
)


class EmptyTraceError(ValueError):
    """Posterior summaries need at least one retained sample."""


@dataclass
class PosteriorTree:
    """Edge/import/never probabilities as exact ratios of sample counts."""

    edges: dict[tuple[str, str], float]
    import_prob: dict[str, float]
    never_prob: dict[str, float]
    group_cooccurrence: dict[tuple[str, str], float]
    n_samples: int


@dataclass
class RocCurve:
    points: list[tuple[float, float]]
    auc: float
    n_positive: int
    n_negative: int


def summarize_trace(trace: PosteriorTrace) -> PosteriorTree:
    """Edge probability = fraction of retained samples containing that
    directed edge; importation and never-colonized probabilities likewise."""
    if trace.n_retained == 0:
        raise EmptyTraceError("trace has no retained samples")
    ids = trace.patient_ids
    n = len(ids)
    n_samples = trace.n_retained
    edge_counts: dict[tuple[int, int], int] = {}
    import_counts = np.zeros(n, dtype=np.int64)
    colonized_counts = np.zeros(n, dtype=np.int64)
    pair_counts: dict[tuple[int, int], int] = {}
    use_groups = trace.model == IMPORTATION_STRUCTURE

    for snap in trace.snapshots:
        if snap.size == 0:
            continue
        patients = snap[:, 0]
        colonized_counts[patients] += 1
        import_counts[patients[snap[:, 3] == 1]] += 1
        for j, _, src, phi, _ in snap.tolist():
            if src >= 0:
                key = (src, j)
                edge_counts[key] = edge_counts.get(key, 0) + 1
        if use_groups:
            groups: dict[int, list[int]] = {}
            for j, _, _, _, g in snap.tolist():
                groups.setdefault(g, []).append(j)
            for members in groups.values():
                members.sort()
                for xi in range(len(members)):
                    for yi in range(xi + 1, len(members)):
                        key = (members[xi], members[yi])
                        pair_counts[key] = pair_counts.get(key, 0) + 1

    return PosteriorTree(
        edges={
            (ids[a], ids[b]): c / n_samples for (a, b), c in edge_counts.items()
        },
        import_prob={ids[j]: import_counts[j] / n_samples for j in range(n)},
        never_prob={ids[j]: 1.0 - colonized_counts[j] / n_samples for j in range(n)},
        group_cooccurrence={
            (ids[a], ids[b]): c / n_samples for (a, b), c in pair_counts.items()
        },
        n_samples=n_samples,
    )


def candidate_pairs(truth: SimulatedTruth) -> tuple[set, set]:
    """(positives, negatives) over the evaluation universe; see module doc."""
    d, st = truth.dataset, truth.true_state
    ids = [e.patient_id for e in d.episodes]
    positives = set()
    negatives = set()
    for b in range(st.n_patients):
        col = st.col_day[b]
        if col is None or st.import_flag[b]:
            continue
        true_src = st.source[b]
        positives.add((ids[true_src], ids[b]))
        e = d.episodes[b]
        fp = e.first_positive_day()
        last = e.discharge_day if fp is None else min(fp, e.discharge_day)
        for a in range(st.n_patients):
            if a == b or a == true_src:
                continue
            if any(
                _transmits_on(st, d, a, day) for day in range(e.admit_day, last + 1)
            ):
                negatives.add((ids[a], ids[b]))
    return positives, negatives


def roc(
    weights: dict[tuple[str, str], float] | PosteriorTree,
    truth: SimulatedTruth,
) -> RocCurve:
    """ROC of ranked candidate edges against the true transmission edges.

    Ties (equal weights) are swept as a single threshold step, producing a
    diagonal segment; the AUC is the trapezoidal integral.
    """
    if isinstance(weights, PosteriorTree):
        weights = weights.edges
    positives, negatives = candidate_pairs(truth)
    n_pos, n_neg = len(positives), len(negatives)
    if n_pos == 0 or n_neg == 0:
        return RocCurve([(0.0, 0.0), (1.0, 1.0)], math.nan, n_pos, n_neg)

    scored: dict[float, list[int]] = {}
    for pair in positives:
        w = weights.get(pair, 0.0)
        scored.setdefault(w, [0, 0])[0] += 1
    for pair in negatives:
        w = weights.get(pair, 0.0)
        scored.setdefault(w, [0, 0])[1] += 1

    points = [(0.0, 0.0)]
    tp = fp = 0
    auc = 0.0
    for w in sorted(scored, reverse=True):
        dtp, dfp = scored[w]
        prev = (fp / n_neg, tp / n_pos)
        tp += dtp
        fp += dfp
        cur = (fp / n_neg, tp / n_pos)
        auc += (cur[0] - prev[0]) * (cur[1] + prev[1]) / 2.0
        points.append(cur)
    return RocCurve(points, auc, n_pos, n_neg)


def delta_auc(informed: RocCurve, uninformed: RocCurve) -> float:
    """Informed minus uninformed AUC for one replicate."""
    return informed.auc - uninformed.auc


def group_recovery(trace: PosteriorTrace, truth: SimulatedTruth) -> dict[str, float]:
    """Posterior probability that each truly colonized patient shares a
    group with the true founder (the first importation) of its group."""
    if trace.model != IMPORTATION_STRUCTURE:
        raise ValueError("group recovery applies to the importation structure model")
    if trace.n_retained == 0:
        raise EmptyTraceError("trace has no retained samples")
    st = truth.true_state
    ids = trace.patient_ids
    targets = [
        (j, st.group[j]) for j in st.colonized_indices() if st.group[j] is not None
    ]
    hits = {j: 0 for j, _ in targets}
    for snap in trace.snapshots:
        grp = {row[0]: row[4] for row in snap.tolist()}
        for j, founder in targets:
            gj = grp.get(j)
            gf = grp.get(founder)
            if gj is not None and gf is not None and gj == gf:
                hits[j] += 1
    return {ids[j]: hits[j] / trace.n_retained for j, _ in targets}


def network_summaries(trace: PosteriorTrace) -> dict:
    """Posterior distributions of per-patient secondary-infection counts and
    of connected-subtree sizes, pooled over retained samples."""
    if trace.n_retained == 0:
        raise EmptyTraceError("trace has no retained samples")
    secondary: dict[int, int] = {}
    sizes: dict[int, int] = {}
    n_patients_total = 0
    n_chains_total = 0
    n_with_secondary = 0
    for snap in trace.snapshots:
        rows = snap.tolist()
        out_deg: dict[int, int] = {j: 0 for j, *_ in rows}
        root_of: dict[int, int] = {}
        src_of = {j: src for j, _, src, _, _ in rows}
        for j, _, src, _, _ in rows:
            if src >= 0:
                out_deg[src] += 1
        for j in out_deg:
            node = j
            while src_of.get(node, -1) >= 0:
                node = src_of[node]
            root_of[j] = node
        chain_size: dict[int, int] = {}
        for j, root in root_of.items():
            chain_size[root] = chain_size.get(root, 0) + 1
        for j, deg in out_deg.items():
            secondary[deg] = secondary.get(deg, 0) + 1
            n_patients_total += 1
            if deg > 0:
                n_with_secondary += 1
        for size in chain_size.values():
            sizes[size] = sizes.get(size, 0) + 1
            n_chains_total += 1
    return {
        "secondary_counts": {
            k: v / n_patients_total for k, v in sorted(secondary.items())
        },
        "subtree_sizes": {k: v / n_chains_total for k, v in sorted(sizes.items())},
        "fraction_with_secondary": (
            n_with_secondary / n_patients_total if n_patients_total else 0.0
        ),
    }


# ---------------------------------------------------------------------------
# posterior predictive checks


@dataclass
class PpcStat:
    name: str
    observed: float
    samples: np.ndarray
    lower: float
    upper: float
    inside: bool


@dataclass
class PpcResult:
    stats: dict[str, PpcStat]
    n_draws: int

    def all_inside(self) -> bool:
        return all(s.inside for s in self.stats.values())


def observed_statistics(dataset: Dataset) -> dict[str, float]:
    """Importations (first test positive), acquisitions (a negative test
    before the first positive), and mean pairwise isolate distance."""
    n_imp = 0
    n_acq = 0
    for e in dataset.episodes:
        if not e.screens:
            continue
        if e.screens[0].positive:
            n_imp += 1
            continue
        fp = e.first_positive_day()
        if fp is not None:
            n_acq += 1
    values = dataset.distances.values
    n_s = values.shape[0]
    if n_s >= 2:
        diversity = float(values[np.triu_indices(n_s, 1)].mean())
    else:
        diversity = math.nan
    return {"importations": n_imp, "acquisitions": n_acq, "mean_diversity": diversity}


def _replica_statistics(dataset, screens, matrix) -> dict[str, float]:
    n_imp = 0
    n_acq = 0
    for patient_screens in screens:
        if not patient_screens:
            continue
        if patient_screens[0].positive:
            n_imp += 1
            continue
        if any(s.positive for s in patient_screens):
            n_acq += 1
    n_s = matrix.shape[0]
    if n_s >= 2:
        diversity = float(matrix[np.triu_indices(n_s, 1)].mean())
    else:
        diversity = math.nan
    return {"importations": n_imp, "acquisitions": n_acq, "mean_diversity": diversity}


def params_from_trace(trace: PosteriorTrace, i: int) -> ModelParams:
    p = trace.params
    return ModelParams(
        p=float(p["p"][i]),
        z=float(p["z"][i]),
        beta=float(p["beta"][i]),
        gamma=float(p["gamma"][i]),
        gamma_g=float(p["gamma_g"][i]),
        k=float(p["k"][i]) if trace.model == TRANSMISSION_DIVERSITY else None,
        c=float(p["c"][i]) if trace.model == IMPORTATION_STRUCTURE else None,
    )


def predictive_draws(
    dataset: Dataset,
    params_list: list[ModelParams],
    model: str,
    seed: int = 0,
    sequencing: str = "every_positive",
) -> dict[str, np.ndarray]:
    """Simulate one replica per parameter draw on the observed admission
    and screening schedule; returns per-statistic sample arrays."""
    rng = np.random.default_rng(seed)
    out: dict[str, list[float]] = {"importations": [], "acquisitions": [], "mean_diversity": []}
    for params in params_list:
        screens, _, matrix = simulate_on_schedule(
            dataset, params, model, rng, sequencing=sequencing
        )
        stats = _replica_statistics(dataset, screens, matrix)
        for k, v in stats.items():
            out[k].append(v)
    return {k: np.asarray(v, dtype=float) for k, v in out.items()}


def posterior_predictive(
    trace: PosteriorTrace,
    dataset: Dataset,
    n_draws: int = 200,
    seed: int = 0,
    sequencing: str = "every_positive",
) -> PpcResult:
    """Posterior predictive check: simulate replicas for a subsample of
    retained parameter draws and report 95% central bands plus coverage of
    the observed statistics."""
    if trace.n_retained == 0:
        raise EmptyTraceError("trace has no retained samples")
    n_draws = min(n_draws, trace.n_retained)
    idx = np.linspace(0, trace.n_retained - 1, n_draws).astype(int)
    params_list = [params_from_trace(trace, int(i)) for i in idx]
    samples = predictive_draws(dataset, params_list, trace.model, seed, sequencing)
    observed = observed_statistics(dataset)
    stats = {}
    for name, obs in observed.items():
        arr = samples[name]
        finite = arr[~np.isnan(arr)]
        if len(finite) == 0 or math.isnan(obs):
            lower = upper = math.nan
            inside = False
        else:
            lower = float(np.quantile(finite, 0.025))
            upper = float(np.quantile(finite, 0.975))
            inside = lower <= obs <= upper
        stats[name] = PpcStat(name, obs, arr, lower, upper, inside)
    return PpcResult(stats, n_draws)


# ---------------------------------------------------------------------------
# output files


def write_posterior_tree_csv(tree: PosteriorTree, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("source,recipient,probability\n")
        for (src, rec), prob in sorted(tree.edges.items()):
            fh.write(f"{src},{rec},{prob!r}\n")


def write_import_probs_csv(tree: PosteriorTree, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("patient_id,import_prob,never_prob\n")
        for pid in sorted(tree.import_prob):
            fh.write(f"{pid},{tree.import_prob[pid]!r},{tree.never_prob[pid]!r}\n")


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("false_positive_rate,true_positive_rate\n")
        for fpr, tpr in curve.points:
            fh.write(f"{fpr!r},{tpr!r}\n")


def write_summary_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
