"""Participant-disjoint evaluation partitions: 3FOLD, leave-one-attack-out, inter-site."""

from __future__ import annotations

import enum
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import BONA_FIDE, DatasetManifest, SampleRecord

ROLES = ("train", "val", "test")
VAL_FRACTION = 0.2


class SplitError(ValueError):
    pass


class Protocol(str, enum.Enum):
    THREEFOLD = "THREEFOLD"
    LOO = "LOO"
    INTERSITE = "INTERSITE"


@dataclass(frozen=True)
class Fold:
    name: str
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    excluded: tuple[str, ...] = ()
    held_out: str | None = None

    def role(self, name: str) -> tuple[str, ...]:
        return getattr(self, name)

    def to_json(self) -> dict:
        d = {r: sorted(self.role(r)) for r in ROLES}
        d["name"] = self.name
        d["excluded"] = sorted(self.excluded)
        if self.held_out is not None:
            d["held_out"] = self.held_out
        return d


@dataclass(frozen=True)
class SplitPlan:
    name: str
    protocol: Protocol
    seed: int
    folds: tuple[Fold, ...]
    category_key: str = "category_for_loo"

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name,
            "protocol": self.protocol.value,
            "seed": self.seed,
            "category_key": self.category_key,
            "folds": [f.to_json() for f in self.folds],
        }, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        d = json.loads(text)
        folds = tuple(
            Fold(f["name"], tuple(f["train"]), tuple(f["val"]), tuple(f["test"]),
                 tuple(f.get("excluded", ())), f.get("held_out"))
            for f in d["folds"]
        )
        return cls(d["name"], Protocol(d["protocol"]), d["seed"], folds, d.get("category_key", "category_for_loo"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SplitPlan":
        return cls.from_json(Path(path).read_text())


def sample_category(rec: SampleRecord, key: str = "category_for_loo") -> str:
    return BONA_FIDE if not rec.is_attack else getattr(rec.pai, key)


def _by_participant(records) -> dict[str, list[SampleRecord]]:
    out: dict[str, list[SampleRecord]] = defaultdict(list)
    for r in records:
        out[r.participant_id].append(r)
    return dict(out)


def _ids(groups: dict[str, list[SampleRecord]], pids) -> tuple[str, ...]:
    return tuple(sorted(r.sample_id for p in pids for r in groups[p]))


def n_val_participants(n: int) -> int:
    return min(max(1, math.ceil(VAL_FRACTION * n)), n - 1)


def split_train_val(groups: dict[str, list[SampleRecord]], pids, rng: np.random.Generator,
                    key: str = "category_for_loo", n_candidates: int = 64) -> tuple[list[str], list[str]]:
    """Participant-level 80/20 split; picks the seeded candidate whose validation
    share of every class/category is closest to the target fraction."""
    pids = sorted(pids)
    if len(pids) < 2:
        raise SplitError(f"need >= 2 participants for a train/val split, got {len(pids)}")
    n_val = n_val_participants(len(pids))
    counts = {p: Counter(sample_category(r, key) for r in groups[p]) for p in pids}
    totals = sum(counts.values(), Counter())
    n_total = sum(totals.values())
    best, best_cost = None, math.inf
    for _ in range(n_candidates):
        val = rng.permutation(len(pids))[:n_val]
        got = sum((counts[pids[i]] for i in val), Counter())
        target = sum(got.values()) / n_total
        cost = sum(abs(got[c] / totals[c] - target) for c in totals)
        cost += abs(target - VAL_FRACTION)
        if cost < best_cost - 1e-12:
            best, best_cost = sorted(val.tolist()), cost
    val_p = [pids[i] for i in best]
    return [p for p in pids if p not in set(val_p)], val_p


def _check_both_classes(manifest: DatasetManifest) -> None:
    counts = manifest.class_counts()
    if counts["bona-fide"] == 0 or counts["attack"] == 0:
        raise SplitError("both bona-fide and attack samples are required")


def make_3fold(manifest: DatasetManifest, seed: int = 0, key: str = "category_for_loo",
               name: str = "3fold") -> SplitPlan:
    groups = _by_participant(manifest.records)
    if len(groups) < 3:
        raise SplitError(f"3FOLD needs >= 3 participants, got {len(groups)}")
    _check_both_classes(manifest)
    rng = np.random.default_rng(seed)
    tiebreak = dict(zip(sorted(groups), rng.permutation(len(groups)).tolist()))
    cats = {p: Counter(sample_category(r, key) for r in recs) for p, recs in groups.items()}

    def primary(p: str) -> str:
        return max(sorted(cats[p]), key=lambda c: (c != BONA_FIDE, cats[p][c]))

    order = sorted(groups, key=lambda p: (-len(groups[p]), primary(p), tiebreak[p]))
    sizes = [0, 0, 0]
    members: list[list[str]] = [[], [], []]
    cat_load = [Counter(), Counter(), Counter()]
    for p in order:
        g = min(range(3), key=lambda i: (sizes[i], sum(cat_load[i][c] for c in cats[p] if c != BONA_FIDE), i))
        members[g].append(p)
        sizes[g] += len(groups[p])
        cat_load[g].update(cats[p])

    folds = []
    for i in range(3):
        rest = [p for j in range(3) if j != i for p in members[j]]
        tr, va = split_train_val(groups, rest, rng, key)
        folds.append(Fold(f"fold{i + 1}", _ids(groups, tr), _ids(groups, va), _ids(groups, members[i])))
    return SplitPlan(name, Protocol.THREEFOLD, seed, tuple(folds), key)


def make_loo(manifest: DatasetManifest, category_key: str = "category_for_loo", seed: int = 0,
             categories: list[str] | None = None, name: str = "loo") -> SplitPlan:
    """One fold per attack category; the held-out category never reaches train/val.

    Test = every sample of the held-out category plus the bona-fide samples of a
    participant-disjoint third of the bona-fide participants (always including
    the participants wearing the held-out category). Other attacks of test
    participants are excluded from that fold.
    """
    groups = _by_participant(manifest.records)
    _check_both_classes(manifest)
    present = sorted({sample_category(r, category_key) for r in manifest.records if r.is_attack})
    if categories is None:
        categories = present
    missing = [c for c in categories if c not in present]
    if missing:
        raise SplitError(f"categories with zero samples: {missing}")
    if len(categories) < 2:
        raise SplitError("LOO needs >= 2 attack categories")

    rng = np.random.default_rng(seed)
    bf_participants = sorted(p for p, recs in groups.items() if any(not r.is_attack for r in recs))
    n_bf_test = max(1, round(len(bf_participants) / 3))
    folds = []
    for c in categories:
        wearing = {p for p, recs in groups.items() if any(sample_category(r, category_key) == c for r in recs)}
        test_p = set(wearing)
        need = n_bf_test - len(test_p & set(bf_participants))
        if need > 0:
            pool = sorted(set(bf_participants) - test_p)
            noise = dict(zip(pool, rng.random(len(pool)).tolist()))
            pool.sort(key=lambda p: (sum(r.is_attack for r in groups[p]), noise[p]))
            test_p.update(pool[:need])
        test, excluded = [], []
        for p in sorted(test_p):
            for r in groups[p]:
                if not r.is_attack or sample_category(r, category_key) == c:
                    test.append(r.sample_id)
                else:
                    excluded.append(r.sample_id)
        rest = sorted(set(groups) - test_p)
        tr, va = split_train_val(groups, rest, rng, category_key)
        folds.append(Fold(f"loo_{c}", _ids(groups, tr), _ids(groups, va), tuple(sorted(test)),
                          tuple(sorted(excluded)), held_out=c))
    return SplitPlan(name, Protocol.LOO, seed, tuple(folds), category_key)


def make_intersite(train_manifest: DatasetManifest, test_manifest: DatasetManifest, seed: int = 0,
                   name: str = "intersite") -> SplitPlan:
    src = _by_participant(train_manifest.records)
    clash = set(src) & test_manifest.participants
    if clash:
        raise SplitError(f"participant ids present at both sites: {sorted(clash)[:5]}")
    id_clash = set(train_manifest.by_id()) & set(test_manifest.by_id())
    if id_clash:
        raise SplitError(f"sample ids present at both sites: {sorted(id_clash)[:5]}")
    _check_both_classes(train_manifest)
    rng = np.random.default_rng(seed)
    tr, va = split_train_val(src, list(src), rng)
    test = tuple(sorted(r.sample_id for r in test_manifest.records))
    return SplitPlan(name, Protocol.INTERSITE, seed, (Fold("intersite", _ids(src, tr), _ids(src, va), test),))


@dataclass(frozen=True)
class Violation:
    fold: str
    kind: str  # overlap | participant_overlap | coverage | leak | balance
    message: str


@dataclass
class SplitReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """No structural violations (balance is reported separately)."""
        return not any(v.kind != "balance" for v in self.violations)

    @property
    def balanced(self) -> bool:
        return not any(v.kind == "balance" for v in self.violations)

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def validate_split(plan: SplitPlan, manifest: DatasetManifest, balance_tolerance: float | None = 0.2) -> SplitReport:
    """Check disjointness, participant-disjointness, coverage, held-out leakage and
    (3FOLD only) per-category balance of the test sets."""
    by_id = manifest.by_id()
    report = SplitReport()
    add = report.violations.append
    for fold in plan.folds:
        seen: dict[str, str] = {}
        owner: dict[str, str] = {}
        for role in ROLES + ("excluded",):
            for sid in fold.role(role):
                if sid not in by_id:
                    add(Violation(fold.name, "coverage", f"unknown sample {sid!r} in {role}"))
                    continue
                if sid in seen:
                    add(Violation(fold.name, "overlap", f"{sid!r} in both {seen[sid]} and {role}"))
                    continue
                seen[sid] = role
                if role == "excluded":
                    continue
                pid = by_id[sid].participant_id
                if owner.setdefault(pid, role) != role:
                    add(Violation(fold.name, "participant_overlap",
                                  f"participant {pid!r} in both {owner[pid]} and {role}"))
        missing = set(by_id) - set(seen)
        if missing:
            add(Violation(fold.name, "coverage", f"{len(missing)} samples unassigned, e.g. {sorted(missing)[0]!r}"))
        if fold.held_out is not None:
            leaked = [sid for r in ("train", "val") for sid in fold.role(r)
                      if sid in by_id and sample_category(by_id[sid], plan.category_key) == fold.held_out]
            if leaked:
                add(Violation(fold.name, "leak", f"{len(leaked)} held-out {fold.held_out!r} samples in train/val"))
        if balance_tolerance is not None and plan.protocol is Protocol.THREEFOLD:
            scope = [sid for sid, role in seen.items() if role != "excluded"]
            all_c = Counter(sample_category(by_id[s], plan.category_key) for s in scope)
            test_c = Counter(sample_category(by_id[s], plan.category_key) for s in fold.test if s in by_id)
            n_all, n_test = sum(all_c.values()), sum(test_c.values())
            for c, k in sorted(all_c.items()):
                share_all = k / n_all
                share_test = test_c[c] / n_test if n_test else 0.0
                if abs(share_test - share_all) > balance_tolerance * share_all:
                    add(Violation(fold.name, "balance",
                                  f"{c!r}: test share {share_test:.3f} vs overall {share_all:.3f}"))
    return report
