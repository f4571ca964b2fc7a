"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also collected into an "acceptance criteria" terminal section.
"""

import statistics
import time
import timeit
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexcf.baseline import dice_importance, equivalence_check, matched_tau
from flexcf.cfgen import DESIRABLE, NUN, SPARSE, GeneratorConfig, generate_batch, sample_factuals
from flexcf.cli import EXIT_OK, main
from flexcf.dataset import Dataset, planted_spec, synthesize_fixture
from flexcf.flex import FlexResult, ThresholdVector, flex_scores, tau_sweep
from flexcf.regional import HAMMING, Region, correlate, mode_shift, mode_shift_from_counts, pearson
from flexcf.report import competition_ranks

from conftest import cat, cfset, cont
from oracles import hand_pearson, naive_dice, naive_flex, naive_ranks
from strategies import cf_fixtures


# 1 -----------------------------------------------------------------------------


def test_c01_mode_shift_reproduction(criterion):
    start = time.perf_counter()
    schema = (cat("v", 4),)
    factual_codes = [0, 0, 0, 1, 2]  # mode v_0 held by 3 of 5
    cf_codes = [[0] * 3 + [1] * 7, [0] * 2 + [2] * 8, [0] * 2 + [3] * 8, [1] * 10, [2] * 10]  # 7 of 50 keep it
    ds = Dataset(schema, [[c] for c in factual_codes], [1] * 5)
    sets = [cfset([f], [[c] for c in cfs]) for f, cfs in zip(factual_codes, cf_codes)]
    (row,) = mode_shift(Region(0, tuple(range(5)), None, HAMMING), sets, ds)
    full_row = mode_shift_from_counts(5, 5, 29, 50)
    elapsed = time.perf_counter() - start

    ok = (row.p_orig == 0.6 and row.p_cf == 0.14 and abs(row.delta - (-0.77)) <= 0.005
          and full_row[2] == -0.42 and elapsed < 1.0)
    criterion(1, ok, f"delta={row.delta:.4f} full-mode delta={full_row[2]!r} time={elapsed * 1e3:.1f}ms")
    assert ok


# 2 -----------------------------------------------------------------------------

SWEEP = [0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]


def test_c02_tau_monotonicity(criterion):
    seen = {"fixtures": 0, "violations": 0}

    @settings(max_examples=150, deadline=None, database=None)
    @given(cf_fixtures(need_continuous=True, freeze_immutable=False))
    def check(fixture):
        schema, sets = fixture
        seen["fixtures"] += 1
        phis = np.array([res.phi for _, res in tau_sweep(sets, schema, SWEEP)])
        for j, f in enumerate(schema):
            col = phis[:, j]
            bad = np.any(np.diff(col) > 0) if f.is_continuous else np.any(col != col[0])
            seen["violations"] += int(bad)

    check()
    ok = seen["fixtures"] >= 100 and seen["violations"] == 0
    criterion(2, ok, f"{seen['fixtures']} fixtures, {seen['violations']} violations")
    assert ok


# 3 -----------------------------------------------------------------------------


def test_c03_oracle_equivalence(criterion):
    seen = {"fixtures": 0, "flex": 0, "dice": 0}

    @settings(max_examples=300, deadline=None, database=None)
    @given(cf_fixtures(max_instances=20, max_cf=50, max_features=5, freeze_immutable=False),
           st.sampled_from([0.0, 0.05, 0.1, 0.3]), st.sampled_from([1e-6, 0.05, 0.2]))
    def check(fixture, tau, eps):
        schema, sets = fixture
        seen["fixtures"] += 1
        flex = flex_scores(sets, schema, ThresholdVector(tau)).phi.tolist()
        seen["flex"] += flex != [float(v) for v in naive_flex(sets, schema, {f.name: tau for f in schema})]
        dice = dice_importance(sets, schema, eps).phi.tolist()
        seen["dice"] += dice != [float(v) for v in naive_dice(sets, schema, eps)]

    check()
    ok = seen["flex"] == 0 and seen["dice"] == 0
    criterion(3, ok, f"{seen['fixtures']} fixtures, mismatches flex={seen['flex']} dice={seen['dice']}")
    assert ok


# 4 -----------------------------------------------------------------------------


def test_c04_flex_dice_equivalence(criterion):
    seen = {"fixtures": 0, "failures": 0}

    @settings(max_examples=200, deadline=None, database=None)
    @given(cf_fixtures(equal_n_cf=True), st.sampled_from([1e-6, 1e-3, 0.1]))
    def check(fixture, eps):
        schema, sets = fixture
        seen["fixtures"] += 1
        flex = flex_scores(sets, schema, matched_tau(schema, eps))
        dice = dice_importance(sets, schema, eps)
        seen["failures"] += flex.phi.tolist() != dice.phi.tolist()

    check()
    schema = (cat("c", 3),)
    a = cfset([0], [[1]])
    b = cfset([0], [[0], [0], [0]])
    flex_u = flex_scores([a, b], schema).phi[0]
    dice_u = dice_importance([a, b], schema).phi[0]
    report = equivalence_check([a, b], schema)
    ok = (seen["failures"] == 0 and flex_u == 0.5 and dice_u == 0.25
          and not report.equivalent and not report.equal_n_cf)
    criterion(4, ok, f"{seen['fixtures']} equal-N_cf fixtures, {seen['failures']} unequal; "
                     f"unequal case flex={flex_u} dice={dice_u}")
    assert ok


# 5 and 8 share generated batches -----------------------------------------------


@pytest.fixture(scope="module")
def planted_batches(planted_split, planted_forest):
    train, test = planted_split
    pool = synthesize_fixture(planted_spec(n_rows=600), seed=11)
    idx = sample_factuals(pool, planted_forest, 110, seed=2)
    out = {}
    for strategy in (SPARSE, NUN):
        cfg = GeneratorConfig(strategy=strategy, n_cf=10, search_budget=300, seed=3)
        out[strategy] = generate_batch(pool.rows[idx], train, planted_forest, cfg, idx)
    return train, out


def test_c05_counterfactual_validity(criterion, planted_batches, planted_forest):
    train, batches = planted_batches
    immutable = train.immutable_mask
    details, ok = [], True
    for strategy, batch in batches.items():
        cfs = np.vstack([s.counterfactuals for s in batch.sets])
        facts = np.vstack([np.repeat(s.factual[None, :], len(s), axis=0) for s in batch.sets])
        flipped = planted_forest.predict_batch(cfs) == DESIRABLE
        frozen = (cfs[:, immutable] == facts[:, immutable]).all(axis=1)
        details.append(f"{strategy}: {len(cfs)} CFs, valid {flipped.mean():.0%}, immutables kept {frozen.mean():.0%}")
        ok &= len(cfs) >= 1000 and bool(flipped.all()) and bool(frozen.all())
    criterion(5, ok, "; ".join(details))
    assert ok


def test_c08_planted_relevance(criterion, planted_batches):
    train, batches = planted_batches
    details, ok = [], True
    for strategy, batch in batches.items():
        res = flex_scores(batch.sets, train.schema)
        top = train.feature_names[int(np.argmax(res.phi))]
        strict = res.phi[0] > np.delete(res.phi, 0).max()
        details.append(f"{strategy}: argmax={top} phi={np.round(res.phi, 3).tolist()}")
        ok &= top == "x0" and bool(strict)
    criterion(8, ok, "; ".join(details))
    assert ok


# 6 -----------------------------------------------------------------------------


def phi_result(values):
    n = len(values)
    names = [f"f{i}" for i in range(n)]
    return FlexResult(names, ["categorical"] * n, np.asarray(values, float), np.zeros(n),
                      np.full(n, np.nan), 5, ThresholdVector(), "g")


def test_c06_pearson(criterion):
    a = [1, 2, 3, 4, 5, 6, 7, 8, 9]
    b = [2, 1, 4, 3, 7, 5, 9, 6, 8]
    # centred cross sum 51, both centred square sums 60
    closed_form = 51 / 60
    u = [0.10, 0.35, 0.20, 0.05, 0.90, 0.45, 0.30, 0.15, 0.60]
    v = [0.40, 0.30, 0.05, 0.25, 0.70, 0.55, 0.10, 0.35, 0.20]
    r_ab = correlate(phi_result(np.divide(a, 10)), phi_result(np.divide(b, 10))).r
    r_uv = correlate(phi_result(u), phi_result(v)).r
    r_same = correlate(phi_result(u), phi_result(u)).r
    r_neg = pearson(u, [1 - 3 * x for x in u])
    const = correlate(phi_result([0.2] * 9), phi_result(u)).to_dict()["r"]
    ok = (abs(r_ab - closed_form) <= 1e-12 and abs(r_uv - hand_pearson(u, v)) <= 1e-12
          and r_same == 1.0 and abs(r_neg + 1.0) <= 1e-12 and const == "undefined")
    criterion(6, ok, f"r={r_ab!r} vs 51/60, identical={r_same}, negated={r_neg}, constant={const}")
    assert ok


# 7 -----------------------------------------------------------------------------


def scoring_inputs(n_features, n_s=200, n_cf=10, seed=0):
    """N_s sets of N_cf counterfactuals over half continuous, half categorical features.

    The features past the first eight are inert: they never change.
    """
    rng = np.random.default_rng(seed)
    base = 8
    schema = tuple(cont(f"c{j}") if j % 2 == 0 else cat(f"k{j}", 4) for j in range(n_features))
    sets = []
    for _ in range(n_s):
        x = np.array([rng.random() if f.is_continuous else rng.integers(4) for f in schema], float)
        cfs = np.repeat(x[None, :], n_cf, axis=0)
        for j in range(min(base, n_features)):
            mask = rng.random(n_cf) < 0.4
            if schema[j].is_continuous:
                cfs[mask, j] = rng.random(mask.sum())
            else:
                cfs[mask, j] = (x[j] + rng.integers(1, 4, mask.sum())) % 4
        sets.append(cfset(x, cfs))
    return schema, sets


def median_time(schema, sets, runs=5):
    # timeit pauses garbage collection while timing
    return statistics.median(timeit.repeat(lambda: flex_scores(sets, schema), number=1, repeat=runs))


def test_c07_complexity_scaling(criterion):
    F = 8
    small = scoring_inputs(F)
    large = scoring_inputs(2 * F)
    flex_scores(small[1], small[0])  # warm-up
    t_f = median_time(*small)
    t_2f = median_time(*large)
    ratio = t_2f / t_f
    ok = ratio <= 2.5
    criterion(7, ok, f"F={F}: {t_f * 1e3:.1f}ms, 2F: {t_2f * 1e3:.1f}ms, ratio {ratio:.2f}")
    assert ok


# 9 -----------------------------------------------------------------------------


def snapshot(directory: Path) -> dict:
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_c09_cli_determinism(criterion, tmp_path):
    fast = ["--n-trees", "10", "--max-depth", "4", "--n-factuals", "25", "--search-budget", "200", "--seed", "4"]
    commands = {
        "fixture": ["--kind", "planted", "--n-rows", "400", "--seed", "4"],
        "global": fast,
        "region": fast + ["--filter", "group=group_1", "--n-members", "4"],
        "sweep": fast + ["--taus", "0.05,0.3,0.8"],
        "compare": fast,
    }
    data_dir = tmp_path / "run1" / "fixture"
    data = ["--data", str(data_dir / "data.csv"), "--schema", str(data_dir / "schema.json")]
    outcomes = {}
    for name, extra in commands.items():
        args = extra if name == "fixture" else data + extra
        dirs = [tmp_path / run / name for run in ("run1", "run2")]
        codes = [main([name, *args, "--out", str(d)]) for d in dirs]
        a, b = (snapshot(d) for d in dirs)
        outcomes[name] = codes == [EXIT_OK, EXIT_OK] and len(a) > 1 and a == b
    ok = all(outcomes.values())
    criterion(9, ok, ", ".join(f"{k}={'identical' if v else 'DIFFERS'}" for k, v in outcomes.items()))
    assert ok


# 10 ----------------------------------------------------------------------------


def test_c10_ranking_tie_rule(criterion):
    rng = np.random.default_rng(10)
    grid = np.array([0.0, 0.03, 0.04, 0.05, 0.06, 0.08, 0.16, 0.2, 0.76])
    failures = 0
    for i in range(1000):
        n = int(rng.integers(1, 16))
        scores = (rng.choice(grid, n) if i % 2 else np.round(rng.random(n), 2)).tolist()
        failures += competition_ranks(scores) != naive_ranks(scores)
    tied = competition_ranks([0.76, 0.20, 0.16, 0.08, 0.08, 0.08, 0.06, 0.05, 0.05, 0.04, 0.03])
    ok = failures == 0 and tied == [1, 2, 3, 4, 4, 4, 7, 8, 8, 10, 11]
    criterion(10, ok, f"1000 vectors, {failures} mismatches; tied pattern {tied}")
    assert ok
