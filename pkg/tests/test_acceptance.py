"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s``; the lines are also
collected into an "acceptance criteria" section of the terminal summary.
"""

import csv
import math
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
import torch

import metric_oracle as oracle
from gradcheck import smooth_gradient_checks
from manifests import random_manifest
from schedule_reference import reference_lrs
from mspad.cli import main
from mspad.datamodel import Modality, ModalitySelection
from mspad.experiment import CubeStore, run_plan
from mspad.loss import loss_gap, loss_patch, total_loss
from mspad.metrics import aggregate, evaluate
from mspad.model import ModelConfig, build_model, receptive_field, receptive_window, score_map_size
from mspad.protocols import make_3fold, make_loo, validate_split
from mspad.synth import SynthConfig, generate, hardness_dial
from mspad.train import TrainConfig, replay_schedule

ALL15_CHANNELS = [7, 4, 10, 3, 11, 17, 10, 14, 7, 13, 21, 14, 17, 20, 24]
E2E_EPOCHS = 20
E2E_SELECTION = ModalitySelection.of(Modality.F_M, Modality.F_S)


def test_criterion_1_scope(criterion):
    with criterion(1, "full-scale datasets are out of scope; criteria 2-9 stand in") as c:
        c.detail = "not executable, recorded for completeness"


def test_criterion_2_architecture(criterion, capsys):
    with criterion(2, "receptive field 54, 20x10 score map, locality probe on 10 models") as c:
        t0 = time.perf_counter()
        assert main(["rf-check"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out == ["receptive_field 54", "score_map 20x10"], out

        gen = torch.Generator().manual_seed(2024)
        worst_outside, min_inside = 0.0, math.inf
        for i in range(10):
            channels = int(torch.randint(1, 25, (1,), generator=gen))
            cfg = ModelConfig(channels)
            model = build_model(cfg, seed=100 + i).double().eval()
            with torch.no_grad():
                for name, p in model.named_parameters():
                    if name.endswith("bias"):
                        p.uniform_(-0.1, 0.1, generator=gen)
                for m in model.modules():
                    if isinstance(m, torch.nn.BatchNorm2d):
                        m.running_mean.uniform_(-0.1, 0.1, generator=gen)
                        m.running_var.uniform_(0.5, 1.5, generator=gen)
            assert receptive_field(cfg) == 54 and score_map_size(cfg) == (10, 20)
            row = int(torch.randint(0, 10, (1,), generator=gen))
            col = int(torch.randint(0, 20, (1,), generator=gen))
            y0, y1, x0, x1 = receptive_window(cfg, row, col)
            assert (y1 - y0 + 1, x1 - x0 + 1) == (54, 54)
            inside = torch.zeros(80, 160, dtype=torch.bool)
            inside[max(y0, 0):y1 + 1, max(x0, 0):x1 + 1] = True

            x = torch.rand((1, channels, 80, 160), generator=gen, dtype=torch.float64)
            noise = torch.rand(x.shape, generator=gen, dtype=torch.float64)
            with torch.no_grad():
                base = model(x)[0, row, col].item()
                moved_out = model(torch.where(inside, x, noise))[0, row, col].item()
                moved_in = model(torch.where(inside, noise, x))[0, row, col].item()
            worst_outside = max(worst_outside, abs(moved_out - base))
            min_inside = min(min_inside, abs(moved_in - base))
        elapsed = time.perf_counter() - t0
        c.detail = f"max outside change {worst_outside:.1e}, min inside change {min_inside:.1e}, {elapsed:.1f}s"
        assert worst_outside < 1e-6
        assert min_inside > 0
        assert elapsed < 60


def test_criterion_3_loss(criterion):
    with criterion(3, "closed-form loss, Jensen on 1000 maps, finite-difference gradient") as c:
        t0 = time.perf_counter()
        half = np.full((10, 20), 0.5)
        for t in (0, 1):
            assert abs(total_loss(half, t, 10).total - 11 * math.log(2)) <= 1e-9
        rng = np.random.default_rng(3)
        for _ in range(1000):
            m = rng.random((10, 20)) ** rng.uniform(0.2, 5)
            for t in (0, 1):
                assert loss_gap(m, t) <= loss_patch(m, t) + 1e-12
        valid, skipped = smooth_gradient_checks(n_points=3)
        worst = max(v.worst for v in valid)
        elapsed = time.perf_counter() - t0
        c.detail = (f"worst relative gradient error {worst:.1e} over {valid[0].n_params} params x "
                    f"{len(valid)} points, {len(skipped)} kink-crossing point(s) skipped, {elapsed:.1f}s")
        assert len(valid) == 3
        assert worst <= 1e-3
        assert elapsed < 120


def test_criterion_4_metrics_oracle(criterion):
    with criterion(4, "metrics equal brute-force oracle on 500 random score sets") as c:
        t0 = time.perf_counter()
        rng = np.random.default_rng(4)
        worst = 0.0
        tied_sets = 0
        for _ in range(500):
            n = int(rng.integers(10, 2001))
            y = rng.integers(0, 2, n)
            y[:2] = (0, 1)
            s = rng.beta(2, 2, n) * 0.5 + 0.35 * y * rng.random()
            if rng.random() < 0.7:
                s = np.round(s, int(rng.integers(1, 4)))  # coarse grids force ties
            s = np.clip(s, 0, 1)
            tied_sets += len(np.unique(s)) < n
            rep = evaluate(s, y)
            pairs = [(rep.auc, oracle.auc_pairs(s, y)),
                     (rep.tpr_at_fpr_002, oracle.tpr_at_fpr(s, y)),
                     (rep.bpcer20, oracle.bpcer_at_apcer(s, y)),
                     (rep.eer, oracle.eer(s, y)),
                     (rep.accuracy_at_05, oracle.accuracy(s.tolist(), y.tolist()))]
            worst = max(worst, max(abs(a - b) for a, b in pairs))
        elapsed = time.perf_counter() - t0
        c.detail = f"max |diff| {worst:.1e}, {tied_sets} sets with ties, {elapsed:.1f}s"
        assert worst <= 1e-12
        assert elapsed < 120


def test_criterion_5_protocols(criterion):
    with criterion(5, "3FOLD/LOO invariants on 100 random manifests, 11 categories -> 11 folds") as c:
        t0 = time.perf_counter()
        for seed in range(100):
            m = random_manifest(np.random.default_rng(seed))
            by_id = m.by_id()
            ids = sorted(by_id)
            plan = make_3fold(m, seed=seed)
            assert sorted(s for f in plan.folds for s in f.test) == ids
            for f in plan.folds:
                owners = [{by_id[s].participant_id for s in f.role(r)} for r in ("train", "val", "test")]
                assert not (owners[0] & owners[1] or owners[0] & owners[2] or owners[1] & owners[2])
            loo = make_loo(m, seed=seed)
            for f in loo.folds:
                assert not any(by_id[s].is_attack and by_id[s].pai.category_for_loo == f.held_out
                               for s in f.train + f.val)
            assert validate_split(plan, m, balance_tolerance=None).ok
            assert validate_split(loo, m).ok
        taxonomy = random_manifest(np.random.default_rng(7), n_participants=33, n_categories=11, mixed=False)
        n_folds = len(make_loo(taxonomy).folds)
        elapsed = time.perf_counter() - t0
        c.detail = f"{n_folds} LOO folds for 11 categories, {elapsed:.1f}s"
        assert n_folds == 11
        assert elapsed < 60


def _end_to_end(root: Path, overlap: float, seed: int = 0):
    cfg = hardness_dial(SynthConfig(modalities=E2E_SELECTION.ordered, seed=seed), overlap)
    manifest = generate(cfg, root)
    plan = make_3fold(manifest, seed=seed)
    results = run_plan(manifest, plan, E2E_SELECTION, ModelConfig(1),
                       TrainConfig(max_epochs=E2E_EPOCHS, seed=seed), CubeStore(manifest.records))
    return manifest, plan, results


@pytest.fixture(scope="module")
def e2e_runs(tmp_path_factory):
    """Criterion 6 pipeline for both overlaps, run twice (criterion 8 compares the two)."""
    runs = {}
    for rep in ("first", "second"):
        for overlap in (0.3, 1.0):
            root = tmp_path_factory.mktemp(f"e2e_{rep}_{overlap}")
            t0 = time.perf_counter()
            manifest, plan, results = _end_to_end(root, overlap)
            runs[rep, overlap] = {"root": root, "n": len(manifest), "plan": plan.to_json(),
                                  "reports": [r.report for r in results], "seconds": time.perf_counter() - t0}
    return runs


@pytest.mark.slow
def test_criterion_6_end_to_end(criterion, e2e_runs):
    with criterion(6, "synthetic 3FOLD, {F_M,F_S}, 20 epochs") as c:
        easy = aggregate(e2e_runs["first", 0.3]["reports"])
        hard = aggregate(e2e_runs["first", 1.0]["reports"])
        seconds = e2e_runs["first", 0.3]["seconds"] + e2e_runs["first", 1.0]["seconds"]
        c.detail = (f"overlap 0.3: AUC {easy['auc']['mean']:.4f}, TPR0.2% {easy['tpr_at_fpr_002']['mean']:.4f}; "
                    f"overlap 1.0: AUC {hard['auc']['mean']:.4f}; {e2e_runs['first', 0.3]['n']} samples, "
                    f"{seconds / 60:.1f} min")
        assert e2e_runs["first", 0.3]["n"] == 480
        assert easy["auc"]["mean"] >= 0.99
        assert easy["tpr_at_fpr_002"]["mean"] >= 0.95
        assert hard["auc"]["mean"] >= 0.90
        assert seconds <= 30 * 60


def test_criterion_7_sweep(criterion, tmp_path):
    with criterion(7, "all15 sweep emits 15 rows with the expected channel counts") as c:
        data = tmp_path / "data"
        assert main(["synth", "--out", str(data), "--participants", "6", "--fingers", "2", "--sessions", "1",
                     "--frame-size", "16x32"]) == 0
        assert main(["eval", "--manifest", str(data / "manifest.jsonl"), "--selection", "all15", "--h", "2",
                     "--epochs", "1", "--run-dir", str(tmp_path), "--name", "sweep"]) == 0
        rows = list(csv.DictReader(open(tmp_path / "sweep" / "reports" / "sweep.csv")))
        channels = [int(r["channels"]) for r in rows]
        c.detail = f"{len(rows)} rows, channels {channels}"
        assert len(rows) == 15
        assert Counter(channels) == Counter(ALL15_CHANNELS)
        assert len({r["selection"] for r in rows}) == 15


@pytest.mark.slow
def test_criterion_8_determinism(criterion, e2e_runs):
    with criterion(8, "rerun of criterion 6 reproduces data, plans and metrics") as c:
        worst = 0.0
        for overlap in (0.3, 1.0):
            a, b = e2e_runs["first", overlap], e2e_runs["second", overlap]
            assert a["plan"] == b["plan"]
            files_a = sorted(p.relative_to(a["root"]) for p in a["root"].rglob("*") if p.is_file())
            files_b = sorted(p.relative_to(b["root"]) for p in b["root"].rglob("*") if p.is_file())
            assert files_a == files_b
            for rel in files_a:  # tensors, manifest (relative paths) and profile summary
                assert (a["root"] / rel).read_bytes() == (b["root"] / rel).read_bytes(), rel
            for ra, rb in zip(a["reports"], b["reports"]):
                for name in ("auc", "tpr_at_fpr_002", "bpcer20", "eer", "accuracy_at_05"):
                    worst = max(worst, abs(getattr(ra, name) - getattr(rb, name)))
        c.detail = f"{len(files_a)} data files identical per overlap, max metric diff {worst:.1e}"
        assert worst <= 1e-6


def test_criterion_9_scheduler(criterion):
    with criterion(9, "plateau scheduler matches reference on 50 random traces") as c:
        rng = np.random.default_rng(9)
        cfg = TrainConfig()
        reductions = floors = 0
        for _ in range(50):
            n = int(rng.integers(20, 400))
            kind = rng.integers(3)
            if kind == 0:  # noisy decay that flattens out
                v = np.exp(-np.arange(n) / rng.uniform(5, 50)) + rng.normal(0, 1e-3, n)
            elif kind == 1:  # steps of exact plateaus and tiny sub-threshold gains
                v = np.cumsum(-rng.choice([0, 5e-5, 1e-4, 3e-3], n))
            else:
                v = rng.random(n)
            lrs = replay_schedule(v.tolist(), cfg)
            assert lrs == reference_lrs(v.tolist())
            reductions += sum(b < a for a, b in zip(lrs, lrs[1:]))
            floors += lrs[-1] == cfg.min_lr
        c.detail = f"{reductions} reductions, {floors} traces reaching the 1e-7 floor"
