"""Acceptance checks, one per headline criterion.

Each test prints a single ``[PASS]`` or ``[FAIL]`` line with the measured
values, then asserts. The experiment tests share their training runs through
module-scoped fixtures, so the whole file takes roughly 40 minutes on one CPU.
"""
import json
import math
import time

import numpy as np
import pytest

from acwm.cli import main
from acwm.cohort import (Cohort, actions, extract_pairs, fold_cohorts, pair_indices, patient_split)
from acwm.evaluation import macro_auroc
from acwm.experiments import (DeskSetup, counterfactual_onset_rate, low_data_comparison, make_desk_cohort,
                              representation_comparison, train_test)
from acwm.regularizers import decollapse, epps_pulley_statistic
from acwm.training import TrainConfig
from acwm.verify import gradient_suite

from oracles import macro_auroc_pairwise, quadrature_T

SEEDS = (0, 1, 2)
PROTOCOLS = ("triage", "monitoring")
COLLAPSED_T = 1 - math.sqrt(2) + 1 / math.sqrt(3)

pytestmark = pytest.mark.slow


def report(capsys, name: str, ok: bool, detail: str):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}", flush=True)
    assert ok, detail


def _fmt(x):
    return f"{x:.3f}"


# ---------------------------------------------------------------------------
# shared experiment runs


@pytest.fixture(scope="module")
def desk_cohort():
    return make_desk_cohort(2000, 0)


@pytest.fixture(scope="module")
def representation_runs(desk_cohort):
    t0 = time.perf_counter()
    runs = [representation_comparison(desk_cohort, s) for s in SEEDS]
    return runs, time.perf_counter() - t0


def _low_data(cohort, fraction, methods):
    return [low_data_comparison(cohort, s, fraction, DeskSetup(), methods) for s in SEEDS]


# ---------------------------------------------------------------------------
# numerical oracles


def test_gradient_fidelity(capsys):
    rows, elapsed = gradient_suite(range(20), tol=1e-3)
    worst = max(r.max_rel_err for r in rows)
    cases = sorted({r.case for r in rows})
    ok = all(r.passed for r in rows) and elapsed < 120
    report(capsys, "gradient fidelity", ok,
           f"{len(cases)} cases x 20 seeds, worst rel err {worst:.2e} (<= 1e-3), {elapsed:.0f}s (< 120s)")


def test_sigreg_oracle(capsys):
    rng = np.random.default_rng(2024)
    errs = []
    for _ in range(100):
        x = rng.normal(0, rng.uniform(0.1, 3), rng.integers(1, 65))
        errs.append(abs(float(epps_pulley_statistic(x).data) - quadrature_T(x)))
    collapsed = float(epps_pulley_statistic(np.zeros(1)).data)
    null = [float(epps_pulley_statistic(np.random.default_rng(s).standard_normal(4096)).data) for s in range(10)]
    ok = max(errs) <= 1e-6 and abs(collapsed - 0.163137) <= 1e-4 and max(null) < 0.01
    report(capsys, "SIGReg oracle", ok,
           f"max |closed - quadrature| {max(errs):.1e} over 100 inputs (<= 1e-6), collapsed T {collapsed:.6f} "
           f"(0.163137 +- 1e-4), Gaussian n=4096 max T {max(null):.4f} over 10 seeds (< 0.01)")
    assert COLLAPSED_T == pytest.approx(0.163137, abs=1e-6)


def test_collapse_prevention(capsys):
    shares = []
    for s in SEEDS:
        # an exactly constant batch has a symmetric gradient and cannot spread,
        # so start from a batch collapsed to 1e-3 scale
        H0 = 1e-3 * np.random.default_rng(s).standard_normal((256, 16))
        H, trace = decollapse(H0, steps=200, num_slices=64, seed=s)
        shares.append(float(np.mean(H.std(axis=0) > 0.5)))
    ok = min(shares) >= 0.9
    report(capsys, "collapse prevention", ok,
           f"share of dims with std > 0.5 after 200 SIGReg steps: {shares} (>= 0.9 each)")


def test_auroc_oracle(capsys):
    rng = np.random.default_rng(7)
    mismatches, ties, checked = 0, 0, 0
    for i in range(1000):
        n, C = int(rng.integers(2, 101)), int(rng.integers(1, 5))
        levels = int(rng.integers(2, 12)) if i % 2 == 0 else 10**6
        s = rng.integers(0, levels, (n, C)) / levels
        y = rng.integers(0, 2, (n, C))
        ref = macro_auroc_pairwise(s, y)
        if math.isnan(ref):
            continue
        checked += 1
        ties += len(np.unique(s)) < s.size
        mismatches += macro_auroc(s, y)[0] != ref
    ok = mismatches == 0 and checked >= 990
    report(capsys, "AUROC oracle", ok,
           f"{mismatches} exact mismatches over {checked} non-degenerate instances ({ties} with ties)")


def _random_cohort(rng):
    n_pat = int(rng.integers(0, 30))
    counts = rng.integers(1, 8, n_pat)
    pids = np.repeat([f"p{i}" for i in range(n_pat)], counts).astype(str)
    order = np.concatenate([rng.permutation(k) for k in counts]) if n_pat else np.zeros(0, int)
    n = len(pids)
    perm = rng.permutation(n)
    labels = rng.integers(0, 2, (n, 4)).astype(np.uint8)
    return Cohort([f"r{i}" for i in range(n)], pids[perm], order[perm], labels[perm],
                  np.zeros((n, 1, 4), np.float32), ["a", "b", "c", "d"])


def test_structural_identities(capsys, desk_cohort):
    rng = np.random.default_rng(11)
    cohorts = [_random_cohort(rng) for _ in range(300)] + [desk_cohort]
    pair_fail = action_fail = leak = 0
    n_pairs = 0
    for c in cohorts:
        i_t, i_n = pair_indices(c)
        pair_fail += len(i_t) != c.n_records - c.n_patients
        pair_fail += len(extract_pairs(c)) != len(i_t) if c.n_records < 500 else 0
        a = actions(c, i_t, i_n)
        action_fail += not np.array_equal(a, c.labels[i_n].astype(np.int8) - c.labels[i_t].astype(np.int8))
        n_pairs += len(i_t)
        if c.n_patients >= 4:
            for seed in range(3):
                folds = fold_cohorts(c, patient_split(c, [0.6, 0.2, 0.2], seed))
                sets = [set(f.patient_ids) for f in folds]
                leak += sum(len(sets[i] & sets[j]) for i in range(3) for j in range(i + 1, 3))
                leak += sum(f.n_records for f in folds) != c.n_records
    ok = pair_fail == action_fail == leak == 0
    report(capsys, "structural identities", ok,
           f"{len(cohorts)} cohorts, {n_pairs} pairs: n_pairs violations {pair_fail}, "
           f"action violations {action_fail}, leaked patients {leak}")


# ---------------------------------------------------------------------------
# directional reproductions


def test_representation_comparison(capsys, representation_runs):
    runs, elapsed = representation_runs
    tri = {m: [r.results[f"{m}_probe"]["triage"].macro_auroc for r in runs]
           for m in ("world_model", "naive_ssl", "random_init")}
    mean = {m: float(np.mean(v)) for m, v in tri.items()}
    d_naive = mean["world_model"] - mean["naive_ssl"]
    d_rand = mean["world_model"] - mean["random_init"]
    ok = d_naive >= 0.03 and d_rand >= 0.10 and elapsed < 1800
    per_seed = ", ".join(f"seed {s}: wm {_fmt(a)} naive {_fmt(b)} random {_fmt(c)}"
                         for s, a, b, c in zip(SEEDS, tri["world_model"], tri["naive_ssl"], tri["random_init"]))
    report(capsys, "representation comparison", ok,
           f"triage probe, mean over 3 seeds: wm - naive {d_naive:+.3f} (>= 0.03), wm - random {d_rand:+.3f} "
           f"(>= 0.10); {elapsed / 60:.1f} min (< 30); {per_seed}")


def test_low_data_finetune_vs_supervised(capsys, desk_cohort):
    runs = _low_data(desk_cohort, 0.1, ("world_model_finetune", "supervised"))
    wins, rows = 0, []
    for s, r in zip(SEEDS, runs):
        ft = [r["world_model_finetune"][p].macro_auroc for p in PROTOCOLS]
        sup = [r["supervised"][p].macro_auroc for p in PROTOCOLS]
        wins += all(a >= b for a, b in zip(ft, sup))
        rows.append(f"seed {s}: finetune {'/'.join(map(_fmt, ft))} vs supervised {'/'.join(map(_fmt, sup))}")
    report(capsys, "low-data finetune vs supervised", wins >= 2,
           f"10% fraction, finetune >= supervised on triage and monitoring in {wins}/3 seeds (>= 2); "
           + "; ".join(rows))


def test_low_data_probe_vs_finetune(capsys, desk_cohort):
    runs = _low_data(desk_cohort, 0.01, ("world_model_finetune", "world_model_probe"))
    wins, rows = 0, []
    for s, r in zip(SEEDS, runs):
        pr = [r["world_model_probe"][p].macro_auroc for p in PROTOCOLS]
        ft = [r["world_model_finetune"][p].macro_auroc for p in PROTOCOLS]
        wins += all(a > b for a, b in zip(pr, ft))
        rows.append(f"seed {s}: probe {'/'.join(map(_fmt, pr))} vs finetune {'/'.join(map(_fmt, ft))}")
    report(capsys, "low-data probe vs finetune", wins >= 2,
           f"1% fraction, probe > finetune on triage and monitoring in {wins}/3 seeds (>= 2); " + "; ".join(rows))


def test_counterfactual_sanity(capsys, desk_cohort, representation_runs):
    runs, _ = representation_runs
    rates, rows = [], []
    for s, run in zip(SEEDS, runs):
        _, test = train_test(desk_cohort, s)
        per = [counterfactual_onset_rate(run.checkpoints["world_model"], run.checkpoints["world_model_probe"],
                                         test, k) for k in range(test.n_classes)]
        n = per[0][1]
        pooled = float(np.mean([r for r, _ in per]))
        rates.append(pooled)
        rows.append(f"seed {s}: {pooled:.3f} over {n} healthy records (per class "
                    + "/".join(f"{r:.2f}" for r, _ in per) + ")")
    ok = min(rates) > 0.6
    report(capsys, "counterfactual sanity", ok,
           "share of healthy test records whose onset-class logit rises vs the zero action (> 0.6 each seed); "
           + "; ".join(rows))


# ---------------------------------------------------------------------------
# determinism


def test_cli_replay_determinism(capsys, tmp_path, tiny_model_cfg):
    d = tmp_path
    TrainConfig(epochs=2, batch_size=16, num_slices=8, model=tiny_model_cfg).to_json(d / "pre.json")
    TrainConfig(objective="supervised", epochs=2, batch_size=16, model=tiny_model_cfg).to_json(d / "sup.json")
    runs = {
        "synth": ["synth", "--patients", "30", "--samples", "64", "--channels", "2", "--seed", "5", "--out", d / "cohort"],
        "stats": ["stats", d / "cohort", "--out", d / "stats"],
        "pretrain": ["pretrain", d / "cohort", "--config", d / "pre.json", "--out", d / "pre"],
        "naive": ["pretrain", d / "cohort", "--objective", "naive_ssl", "--config", d / "pre.json", "--out", d / "naive"],
        "supervised": ["train-supervised", d / "cohort", "--config", d / "sup.json", "--out", d / "sup"],
        "probe": ["probe", d / "cohort", "--checkpoint", d / "pre" / "checkpoint.acwm", "--config", d / "sup.json",
                  "--out", d / "probe"],
        "finetune": ["finetune", d / "cohort", "--checkpoint", d / "pre" / "checkpoint.acwm", "--config",
                     d / "sup.json", "--out", d / "ft"],
        "eval": ["eval", d / "cohort", "--checkpoint", d / "probe" / "checkpoint.acwm", "--bootstrap", "50",
                 "--out", d / "eval"],
        "grad-ratio": ["grad-ratio", d / "cohort", "--config", d / "pre.json", "--steps", "2", "--out", d / "gr"],
        "counterfactual": ["counterfactual", d / "cohort", "--checkpoint", d / "pre" / "checkpoint.acwm",
                           "--probe", d / "probe" / "checkpoint.acwm", "--record", "{first}", "--action", "+1",
                           "--out", d / "cf"],
        "gradcheck": ["gradcheck", "--seeds", "1", "--out", d / "gc"],
    }
    failures, compared = [], 0
    for name, argv in runs.items():
        if name == "counterfactual":
            first = (d / "cohort" / "records.csv").read_text().splitlines()[1].split(",")[0]
            argv = [first if a == "{first}" else a for a in argv]
        if main([str(a) for a in argv] + ["--quiet"]) != 0:
            failures.append(f"{name} failed to run")
            continue
        out = argv[argv.index("--out") + 1]
        code = main(["replay", str(out / "provenance.json"), "--out", str(d / f"{name}_replay")])
        doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        compared += len(doc["compared"])
        if code != 0 or not doc["identical"]:
            failures.append(f"{name}: {doc['mismatched'] + doc['missing']}")
    capsys.readouterr()
    ok = not failures
    report(capsys, "CLI replay determinism", ok,
           f"{len(runs)} commands replayed, {compared} output files compared bitwise"
           + (f"; failures: {failures}" if failures else ""))
