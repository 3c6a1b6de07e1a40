"""Class/distribution files and sample CSVs.

A class file is INI text::

    [class]
    domain_size = 4
    kind = explicit            ; or: thresholds
    matrix = ++--, -+-+, ----  ; explicit only, one +/- row per member

    [distribution]             ; optional
    marginal = uniform         ; or whitespace-separated probabilities
    target = 1                 ; 0-based member index

A sample CSV has a ``point,label`` header followed by one example per row.
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass
from pathlib import Path

from .concepts import ConceptClass, Hypothesis, RealizableDistribution, Sample, make_thresholds


class SpecError(ValueError):
    """A class, distribution or sample file is malformed."""


@dataclass(frozen=True)
class ClassSpec:
    concept_class: ConceptClass
    distribution: RealizableDistribution | None
    kind: str


def _parse_row(text: str) -> Hypothesis:
    text = text.strip()
    if set(text) <= {"+", "-"}:
        return Hypothesis.from_fingerprint(text)
    return Hypothesis(tuple(int(v) for v in text.split()))


def parse_class_spec(text: str) -> ClassSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
        sec = cp["class"]
        size = sec.getint("domain_size")
        kind = sec.get("kind", "explicit").strip().lower()
    except (configparser.Error, KeyError, ValueError) as exc:
        raise SpecError(f"bad class file: {exc}") from exc
    if size is None or size < 1:
        raise SpecError("domain_size must be a positive integer")
    try:
        if kind == "thresholds":
            H = make_thresholds(size)
        elif kind == "explicit":
            rows = [r for r in sec.get("matrix", "").replace("\n", ",").split(",") if r.strip()]
            H = ConceptClass([_parse_row(r) for r in rows], size)
        else:
            raise SpecError(f"unknown class kind {kind!r}")
    except SpecError:
        raise
    except ValueError as exc:
        raise SpecError(str(exc)) from exc

    D = None
    if cp.has_section("distribution"):
        ds = cp["distribution"]
        try:
            target = H.members[int(ds.get("target", "0"))]
            marg = ds.get("marginal", "uniform").strip()
            if marg.lower() == "uniform":
                D = RealizableDistribution.uniform(target)
            else:
                D = RealizableDistribution(target, tuple(float(v) for v in marg.replace(",", " ").split()))
        except (ValueError, IndexError) as exc:
            raise SpecError(f"bad distribution section: {exc}") from exc
    return ClassSpec(H, D, kind)


def load_class_spec(path) -> ClassSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError(f"cannot read {path}: {exc}") from exc
    return parse_class_spec(text)


def format_class_spec(H: ConceptClass, D: RealizableDistribution | None = None) -> str:
    lines = ["[class]", f"domain_size = {H.domain_size}", "kind = explicit", "matrix ="]
    lines += [f"    {h.fingerprint}," for h in H]
    if D is not None:
        lines += ["", "[distribution]", "marginal = " + " ".join(repr(p) for p in D.marginal)]
        lines.append(f"target = {H.index(D.target)}")
    return "\n".join(lines) + "\n"


def load_sample(path, domain_size: int | None = None) -> Sample:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise SpecError(f"cannot read {path}: {exc}") from exc
    try:
        pts = [int(r["point"]) for r in rows]
        labs = [int(r["label"]) for r in rows]
        S = Sample(tuple(pts), tuple(labs))
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"bad sample file {path}: {exc}") from exc
    if domain_size is not None and any(x >= domain_size for x in S.points):
        raise SpecError(f"sample point outside the domain of size {domain_size}")
    return S


def save_sample(S: Sample, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "label"])
        w.writerows(S)
