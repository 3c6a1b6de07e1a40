"""Seeded Monte-Carlo campaigns and report emission.

Every experiment is a pure function of its :class:`ExperimentConfig`. Run
``i`` draws its randomness from child ``i`` of a fixed stream derived from
the seed, so adding runs never changes earlier ones.

Reports carry ``checks``: named booleans for the guarantees each campaign
asserts. A report with a failed check is still returned (and can be
written out); callers decide how loudly to fail.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import stats

from .concepts import ConceptClass, Hypothesis, RealizableDistribution, Sample, points_from_words, population_loss
from .io import ClassSpec
from .littlestone import kernel_for, ldim
from .mechanisms import PrivacyParams, audit_em_dp, audit_hist_release_dp, release_probability
from .pipeline import m_params, private_learn, run_batches, MAX_EXECUTABLE_D
from .rng import Stream, child_keys, hash64, uniforms
from .soa import soa_batch
from .stability import DistributionSource, StabilityParams, _fraction, sample_level_batch, stability_params

SCHEMA_VERSION = 1
KINDS = ("stability", "mistakes", "draws", "e2e", "dp-audit")
FORMATS = ("csv", "json")
#: two-sided confidence level of every interval in the reports
CONFIDENCE = 0.99


@dataclass
class ExperimentConfig:
    """One campaign. Unused fields are ignored by a given kind."""

    kind: str
    spec: ClassSpec | None = None
    runs: int = 1000
    seed: int = 0
    alpha: float = 0.5
    beta: float = 0.2
    epsilon: float = 1.0
    delta: float = 1e-6
    k: int = 1
    length: int = 50
    n: int | None = None
    cap: int | None = None
    mode: str = "em"
    max_count: int = 200
    force: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if (self.n is None) != (self.cap is None):
            raise ValueError("give both n and cap, or neither")

    @property
    def H(self) -> ConceptClass:
        if self.spec is None:
            raise ValueError(f"{self.kind} experiments need a concept class")
        return self.spec.concept_class

    @property
    def D(self) -> RealizableDistribution:
        # no distribution section: uniform marginal, first member as target
        return self.spec.distribution or RealizableDistribution.uniform(self.H.members[0])

    def stability_params(self) -> StabilityParams:
        d = ldim(self.H)
        if self.n is not None:
            return StabilityParams.custom(d, self.n, self.cap)
        return stability_params(d, self.alpha)


@dataclass
class Report:
    kind: str
    config: dict
    summary: dict
    columns: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    @property
    def checks(self) -> dict:
        return self.summary.get("checks", {})

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "config": self.config,
            "summary": self.summary,
            "columns": self.columns,
            "rows": self.rows,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Report:
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {data.get('schema_version')!r}")
        return cls(data["kind"], data["config"], data["summary"], data["columns"], data["rows"])


# --------------------------------------------------------------------- statistics


def clopper_pearson(successes: int, trials: int, level: float = CONFIDENCE) -> tuple[float, float]:
    """Exact two-sided binomial interval."""
    a = (1 - level) / 2
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(a, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(stats.beta.ppf(1 - a, successes + 1, trials - successes))
    return lo, hi


def _config_dict(cfg: ExperimentConfig) -> dict:
    out = {"kind": cfg.kind, "runs": cfg.runs, "seed": cfg.seed}
    if cfg.spec is not None:
        out["class"] = {
            "kind": cfg.spec.kind,
            "domain_size": cfg.H.domain_size,
            "members": [h.fingerprint for h in cfg.H],
        }
        out["distribution"] = {"target": cfg.D.target.fingerprint, "marginal": list(cfg.D.marginal)}
    keys = {
        "stability": ("alpha", "n", "cap"),
        "draws": ("alpha", "k", "n", "cap"),
        "mistakes": ("length",),
        "e2e": ("alpha", "beta", "epsilon", "delta", "force"),
        "dp-audit": ("mode", "epsilon", "delta", "max_count"),
    }[cfg.kind]
    out.update({k: getattr(cfg, k) for k in keys})
    return out


def _streams(seed: int, count: int) -> list[Stream]:
    root = Stream(seed)
    return [root.spawn() for _ in range(count)]


# --------------------------------------------------------------------- stability


def run_stability_experiment(cfg: ExperimentConfig) -> Report:
    """``runs`` independent runs of G, with frequency and generalization checks."""
    H, D = cfg.H, cfg.D
    params = cfg.stability_params()
    d, R, n = params.d, cfg.runs, params.n
    data, coins = _streams(cfg.seed, 2)
    g = run_batches(H, params, DistributionSource(D, data.lane_keys(R)), coins.lane_keys(R), cfg.threads)

    fps = {}
    losses = {}
    for c in np.unique(g.codes).tolist():
        h = Hypothesis.from_code(c, H.domain_size)
        fps[c], losses[c] = h.fingerprint, population_loss(h, D)
    rows = [
        {
            "run_id": i,
            "k_chosen": int(g.k_chosen[i]),
            "failed": bool(g.failed[i]),
            "draws_used": int(g.draws_used[i]),
            "hypothesis_fingerprint": fps[c],
            "population_loss": losses[c],
        }
        for i, c in enumerate(g.codes.tolist())
    ]

    ok_codes, counts = np.unique(g.codes[~g.failed], return_counts=True)
    table = sorted(
        ({"hypothesis": fps[c], "count": int(m), "frequency": m / R, "population_loss": losses[c]} for c, m in zip(ok_codes.tolist(), counts.tolist())),
        key=lambda r: (-r["count"], r["hypothesis"]),
    )
    eta = params.eta_guarantee
    generalization_bound = 2 ** (d + 2) / n
    frequent = []
    for r in table:
        if r["frequency"] < float(eta):
            continue
        lo, hi = clopper_pearson(r["count"], R)
        prop = math.log(1 / lo) / n if lo > 0 else math.inf
        frequent.append(
            {
                **r,
                "freq_lower": lo,
                "freq_upper": hi,
                "prop_bound": math.log(1 / r["frequency"]) / n,
                "prop_bound_lower": prop,
                "generalization_slack": max(0.0, prop - generalization_bound),
            }
        )
    top = table[0] if table else None
    checks = {
        "draws_within_m": bool((g.draws_used <= params.m).all()),
        "max_frequency_at_least_eta": bool(top is not None and top["frequency"] >= float(eta)),
        "frequent_hypotheses_generalize": all(
            f["population_loss"] <= generalization_bound + f["generalization_slack"] + 1e-12
            for f in frequent
            if f["frequency"] >= float(params.freq_threshold)
        ),
        "most_frequent_within_prop_bound": bool(
            frequent and frequent[0]["population_loss"] <= frequent[0]["prop_bound_lower"] + 1e-12
        ),
    }
    summary = {
        "params": params.as_dict(),
        "fail_rate": float(g.failed.mean()),
        "fail_count": int(g.failed.sum()),
        "max_frequency": top["frequency"] if top else 0.0,
        "max_frequency_hypothesis": top["hypothesis"] if top else None,
        "eta_guarantee": str(eta),
        "frequencies": table,
        "frequent": frequent,
        "generalization_bound": generalization_bound,
        "mean_draws": float(g.draws_used.mean()),
        "k_counts": np.bincount(g.k_chosen, minlength=d + 1).tolist(),
        "checks": checks,
    }
    columns = {
        "run_id": "int",
        "k_chosen": "int",
        "failed": "bool",
        "draws_used": "int",
        "hypothesis_fingerprint": "str",
        "population_loss": "float",
    }
    return Report("stability", _config_dict(cfg), summary, columns, rows)


# --------------------------------------------------------------------- mistakes


def random_realizable(H: ConceptClass, marginal: RealizableDistribution, runs: int, length: int, stream: Stream):
    """Random targets (uniform over ``H``) and points from ``marginal``.

    Returns ``(targets, points, labels)`` with shapes ``(runs,)``,
    ``(runs, length)`` and ``(runs, length)``.
    """
    tk, pk = stream.spawn(), stream.spawn()
    targets = np.minimum((uniforms([tk.key], [0], runs)[0] * len(H)).astype(np.intp), len(H) - 1)
    keys = child_keys(pk.key, np.arange(runs, dtype=np.uint64))
    words = hash64(keys[:, None], np.arange(length, dtype=np.uint64))
    points = points_from_words(marginal, words)
    labels = H.matrix[targets[:, None], points]
    return targets, points, labels


def run_mistake_experiment(cfg: ExperimentConfig) -> Report:
    """SOA mistake counts on random realizable sequences of fixed length."""
    H, D = cfg.H, cfg.D
    d = ldim(H)
    (stream,) = _streams(cfg.seed, 1)
    targets, P, Y = random_realizable(H, D, cfg.runs, cfg.length, stream)
    codes, miss = soa_batch(H, P, Y, mistakes=True)
    M = miss.sum(axis=1)
    consistent = ((codes[:, None] >> P.astype(np.uint64)) & np.uint64(1)).astype(bool) == (Y > 0)
    hist = np.bincount(M, minlength=d + 1) / cfg.runs
    rows = [
        {
            "run_id": i,
            "target_index": int(t),
            "mistakes": int(m),
            "final_fingerprint": Hypothesis.from_code(int(c), H.domain_size).fingerprint,
        }
        for i, (t, m, c) in enumerate(zip(targets.tolist(), M.tolist(), codes.tolist()))
    ]
    summary = {
        "ldim": d,
        "histogram": [[i, float(p)] for i, p in enumerate(hist.tolist())],
        "max_mistakes": int(M.max()),
        "checks": {
            "mistakes_within_ldim": bool(M.max() <= d),
            "final_consistent_with_sample": bool(consistent.all()),
            "some_count_has_mass_1_over_d_plus_1": bool(hist[: d + 1].max() >= 1 / (d + 1) - 1e-12),
        },
    }
    columns = {"run_id": "int", "target_index": "int", "mistakes": "int", "final_fingerprint": "str"}
    return Report("mistakes", _config_dict(cfg), summary, columns, rows)


# --------------------------------------------------------------------- draws


def run_draws_experiment(cfg: ExperimentConfig) -> Report:
    """Draw counts of the capped level-``k`` sampler."""
    H, D = cfg.H, cfg.D
    params = cfg.stability_params()
    k, R = cfg.k, cfg.runs
    if not 0 <= k <= params.d:
        raise ValueError(f"k must lie in 0..{params.d}")
    data, coins = _streams(cfg.seed, 2)
    res = sample_level_batch(k, params, H, DistributionSource(D, data.lane_keys(R)), coins.lane_keys(R))

    # every tournament example must be an SOA mistake on its own sample
    tourn_ok = True
    if k and res.ok.any():
        _, miss = soa_batch(H, res.points[res.ok], res.labels[res.ok], mistakes=True)
        tourn_ok = bool((miss | ~res.tournament[res.ok]).all())

    good = res.draws_used[res.ok]
    s = int(good.size)
    mean = float(good.mean()) if s else None
    sd = float(good.std(ddof=1)) if s > 1 else 0.0
    bound = 4 ** (k + 1) * params.n
    slack = 3 * sd / math.sqrt(s) if s else None
    rows = [
        {"run_id": i, "ok": bool(res.ok[i]), "draws_used": int(res.draws_used[i]), "rejections": int(res.rejections[i, 1:].sum())}
        for i in range(R)
    ]
    summary = {
        "params": params.as_dict(),
        "k": k,
        "successes": s,
        "fail_rate": 1 - s / R,
        "mean_draws": mean,
        "sd_draws": sd,
        "max_draws": int(res.draws_used.max()),
        "mean_rejections_per_level": res.rejections[:, 1 : k + 1].mean(axis=0).tolist(),
        "expected_bound": bound,
        "slack": slack,
        "checks": {
            "mean_within_bound": bool(s and mean <= bound + slack),
            "max_within_cap": bool(res.draws_used.max() <= params.N),
            "tournament_examples_are_mistakes": tourn_ok,
        },
    }
    columns = {"run_id": "int", "ok": "bool", "draws_used": "int", "rejections": "int"}
    return Report("draws", _config_dict(cfg), summary, columns, rows)


# --------------------------------------------------------------------- end to end


def run_e2e_experiment(cfg: ExperimentConfig) -> Report:
    """Independent trials of the private learner."""
    H, D = cfg.H, cfg.D
    d = ldim(H)
    if d > MAX_EXECUTABLE_D and not cfg.force:
        raise ValueError(f"end-to-end runs at d={d} need force")
    mp = m_params(d, cfg.alpha, cfg.beta, cfg.epsilon, cfg.delta)
    (root,) = _streams(cfg.seed, 1)
    keys = root.lane_keys(cfg.runs)
    alpha = float(_fraction(cfg.alpha))
    rows = []
    bound = math.floor(2 / mp.eta) + 1
    for t, key in enumerate(keys.tolist()):
        r = private_learn(H, D, mp, Stream(key=key), force=cfg.force, threads=cfg.threads)
        loss = population_loss(r.hypothesis, D)
        rows.append(
            {
                "trial": t,
                "hypothesis_fingerprint": r.hypothesis.fingerprint,
                "population_loss": loss,
                "success": loss <= alpha,
                "released": r.released_list_size,
                "pruned": r.pruned_list_size,
                "failed": r.failed,
                "eps_histogram": r.budget[0].epsilon,
                "delta_histogram": r.budget[0].delta,
                "eps_em": r.budget[1].epsilon,
            }
        )
    wins = sum(r["success"] for r in rows)
    lo, hi = clopper_pearson(wins, cfg.runs)
    summary = {
        "mparams": mp.as_dict(),
        "success_rate": wins / cfg.runs,
        "success_interval": [lo, hi],
        "failed_trials": sum(r["failed"] for r in rows),
        "pruned_bound": bound,
        "checks": {
            "budget_composes": all(
                r["eps_histogram"] + r["eps_em"] == cfg.epsilon and r["delta_histogram"] == cfg.delta for r in rows
            ),
            "pruned_within_bound": all(r["pruned"] <= bound for r in rows),
            "success_not_refuted": hi >= 1 - cfg.beta,
        },
    }
    columns = {
        "trial": "int",
        "hypothesis_fingerprint": "str",
        "population_loss": "float",
        "success": "bool",
        "released": "int",
        "pruned": "int",
        "failed": "bool",
        "eps_histogram": "float",
        "delta_histogram": "float",
        "eps_em": "float",
    }
    return Report("e2e", _config_dict(cfg), summary, columns, rows)


# --------------------------------------------------------------------- privacy audits


def random_neighbours(H: ConceptClass, stream: Stream, max_n: int = 6):
    """A random sample of length 1..max_n and a neighbour differing in one example."""
    X = H.domain_size
    u = stream.uniforms(2 * max_n + 4)
    n = 1 + int(u[0] * max_n)
    pts = [int(v * X) for v in u[1 : n + 1]]
    labs = [1 if v < 0.5 else -1 for v in u[max_n + 1 : max_n + 1 + n]]
    pos = int(u[-3] * n)
    # change the point, the label, or both, but never keep the example
    x2 = int(u[-2] * X)
    y2 = labs[pos] if x2 != pts[pos] and u[-1] < 0.5 else -labs[pos]
    S = Sample(tuple(pts), tuple(labs))
    return S, S.replace(pos, x2, y2)


def run_dp_audit(cfg: ExperimentConfig) -> Report:
    """Exact audits: exponential mechanism on random neighbours, or
    per-item histogram release over counts ``0..max_count``."""
    priv = PrivacyParams(cfg.epsilon, cfg.delta)
    if cfg.mode == "em":
        Hs = list(cfg.H)
        (root,) = _streams(cfg.seed, 1)
        keys = root.lane_keys(cfg.runs)
        rows = []
        for i, key in enumerate(keys.tolist()):
            S, S2 = random_neighbours(cfg.H, Stream(key=key))
            r = audit_em_dp(Hs, S, S2, cfg.epsilon)
            rows.append({"pair_id": i, "n": len(S), "max_log_ratio": r})
        worst = max(r["max_log_ratio"] for r in rows)
        summary = {
            "mode": "em",
            "worst_log_ratio": worst,
            "epsilon": cfg.epsilon,
            "checks": {"within_epsilon": worst <= cfg.epsilon + 1e-9},
        }
        columns = {"pair_id": "int", "n": "int", "max_log_ratio": "float"}
    elif cfg.mode == "hist":
        if cfg.delta <= 0:
            raise ValueError("the histogram audit needs delta > 0")
        rows = []
        for c in range(cfg.max_count + 1):
            a = audit_hist_release_dp(c, cfg.max_count, priv)
            rows.append(
                {
                    "count": c,
                    "p_count": a.probabilities[c],
                    "p_next": release_probability(c + 1, priv),
                    "passed": a.passed,
                }
            )
        worst = 0.0
        for a, b in zip(rows, rows[1:]):
            pa, pb = a["p_count"], b["p_count"]
            if pa > 0 and pb > 0:
                worst = max(worst, abs(math.log(pa / pb)))
        summary = {
            "mode": "hist",
            "epsilon": cfg.epsilon,
            "delta": cfg.delta,
            "worst_log_ratio_positive_counts": worst,
            "release_probability_count_1": rows[1]["p_count"] if len(rows) > 1 else None,
            "checks": {"all_pairs_pass": all(r["passed"] for r in rows)},
        }
        columns = {"count": "int", "p_count": "float", "p_next": "float", "passed": "bool"}
    else:
        raise ValueError(f"unknown audit mode {cfg.mode!r}")
    return Report("dp-audit", _config_dict(cfg), summary, columns, rows)


RUNNERS = {
    "stability": run_stability_experiment,
    "mistakes": run_mistake_experiment,
    "draws": run_draws_experiment,
    "e2e": run_e2e_experiment,
    "dp-audit": run_dp_audit,
}


def run_experiment(cfg: ExperimentConfig) -> Report:
    return RUNNERS[cfg.kind](cfg)


# --------------------------------------------------------------------- emission


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2, default=_json_default) + "\n"


def summary_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".summary.json")


_CASTS = {"int": int, "float": float, "str": str, "bool": lambda s: {"True": True, "False": False}[s]}


def emit_report(report: Report, path, fmt: str) -> list[Path]:
    """Write ``report``; returns the files written.

    ``json`` writes one document. ``csv`` writes the per-run rows with a
    header, plus everything else as JSON in ``<path>.summary.json``.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    if fmt == "json":
        path.write_text(dumps(report.to_dict()))
        return [path]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(report.columns), lineterminator="\n")
        w.writeheader()
        for row in report.rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    side = report.to_dict()
    side["rows"] = None
    summary_path(path).write_text(dumps(side))
    return [path, summary_path(path)]


def load_report(path, fmt: str) -> Report:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    if fmt == "json":
        return Report.from_dict(json.loads(path.read_text()))
    data = json.loads(summary_path(path).read_text())
    casts = {k: _CASTS[t] for k, t in data["columns"].items()}
    with open(path, newline="") as fh:
        data["rows"] = [{k: casts[k](v) for k, v in row.items()} for row in csv.DictReader(fh)]
    return Report.from_dict(data)
