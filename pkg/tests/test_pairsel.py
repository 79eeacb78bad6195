import itertools
import math

import numpy as np
import pytest

from gevlearn import pairsel


def test_all_pairs_k3():
    plan = pairsel.all_pairs(3)
    assert plan.pairs == ((1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2))


def test_all_pairs_k2():
    assert pairsel.all_pairs(2).pairs == ((1, 2), (2, 1))


def test_all_pairs_count():
    assert len(pairsel.all_pairs(10)) == 90


def test_all_pairs_rejects_small_k():
    with pytest.raises(ValueError):
        pairsel.all_pairs(1)


def test_plan_rejects_duplicates_and_self_pairs():
    with pytest.raises(ValueError):
        pairsel.PairPlan(pairs=((1, 2), (1, 2)), k=2, strategy="x")
    with pytest.raises(ValueError):
        pairsel.PairPlan(pairs=((1, 1),), k=2, strategy="x")
    with pytest.raises(ValueError):
        pairsel.PairPlan(pairs=((1, 5),), k=3, strategy="x")


@pytest.mark.parametrize("k,expected", [(4, 8), (8, 24)])
def test_hypercube_full_occupancy_counts(k, expected):
    # every vertex occupied: each label has exactly log2(k) neighbors
    plan = pairsel.hypercube_pairs(k, seed=0)
    assert len(plan) == expected


def test_hypercube_power_of_two_size():
    for k in (2, 4, 8, 16, 32):
        plan = pairsel.hypercube_pairs(k, seed=3)
        assert len(plan) == k * int(math.log2(k))


def brute_force_hypercube(k, seed):
    """Exhaustive Hamming-distance scan of the seeded vertex assignment."""
    b = max(1, math.ceil(math.log2(k)))
    rng = np.random.default_rng(seed)
    verts = rng.choice(2**b, size=k, replace=False)
    vertex_of = {label: int(verts[label - 1]) for label in range(1, k + 1)}
    pairs = set()
    isolated = []
    for i, j in itertools.permutations(range(1, k + 1), 2):
        if bin(vertex_of[i] ^ vertex_of[j]).count("1") == 1:
            pairs.add((i, j))
    for label in range(1, k + 1):
        if not any(p[0] == label for p in pairs):
            isolated.append(label)
    for label in isolated:
        best = min(
            (bin(vertex_of[label] ^ vertex_of[o]).count("1"), o)
            for o in range(1, k + 1) if o != label
        )
        pairs.add((label, best[1]))
        pairs.add((best[1], label))
    return pairs


@pytest.mark.parametrize("k,seed", [(5, 0), (5, 7), (6, 1), (11, 4), (183, 2)])
def test_hypercube_matches_exhaustive_scan(k, seed):
    plan = pairsel.hypercube_pairs(k, seed)
    assert set(plan.pairs) == brute_force_hypercube(k, seed)


def test_hypercube_symmetric_and_covering():
    for k, seed in [(5, 0), (9, 2), (17, 5), (100, 9)]:
        plan = pairsel.hypercube_pairs(k, seed)
        present = set(plan.pairs)
        assert all((j, i) in present for i, j in present)
        numerators = {i for i, _ in present}
        assert numerators == set(range(1, k + 1))


def test_hypercube_deterministic():
    assert pairsel.hypercube_pairs(13, 42).pairs == pairsel.hypercube_pairs(13, 42).pairs


def test_random_full_count_equals_all_pairs():
    k = 5
    plan = pairsel.random_pairs(k, k * (k - 1), seed=1)
    assert set(plan.pairs) == set(pairsel.all_pairs(k).pairs)


def test_random_deterministic():
    a = pairsel.random_pairs(8, 12, seed=9)
    b = pairsel.random_pairs(8, 12, seed=9)
    assert a.pairs == b.pairs
    assert pairsel.random_pairs(8, 12, seed=10).pairs != a.pairs


def test_random_count_out_of_range():
    with pytest.raises(ValueError, match="closest feasible"):
        pairsel.random_pairs(4, 13, seed=0)
    with pytest.raises(ValueError):
        pairsel.random_pairs(4, 0, seed=0)


def test_stratified_exact_balance_at_k():
    k = 4
    plan = pairsel.random_pairs(k, k, seed=3, stratified=True)
    nums = [i for i, _ in plan.pairs]
    dens = [j for _, j in plan.pairs]
    for label in range(1, k + 1):
        assert nums.count(label) == 1
        assert dens.count(label) == 1


@pytest.mark.parametrize("k,count,seed", [(4, 7, 0), (6, 20, 1), (5, 13, 2), (7, 42, 3)])
def test_stratified_within_one_everywhere(k, count, seed):
    plan = pairsel.random_pairs(k, count, seed, stratified=True)
    assert len(plan) == count
    nums = [i for i, _ in plan.pairs]
    dens = [j for _, j in plan.pairs]
    for side in (nums, dens):
        counts = [side.count(label) for label in range(1, k + 1)]
        assert max(counts) - min(counts) <= 1


def test_stratified_covers_all_labels_when_count_at_least_k():
    plan = pairsel.random_pairs(9, 9, seed=5, stratified=True)
    assert {i for i, _ in plan.pairs} == set(range(1, 10))
    assert {j for _, j in plan.pairs} == set(range(1, 10))


def test_plan_file_round_trip(tmp_path):
    plan = pairsel.hypercube_pairs(6, seed=11)
    path = tmp_path / "plan.txt"
    pairsel.save_plan(plan, path)
    back = pairsel.load_plan(path)
    assert back.pairs == plan.pairs

    with pytest.raises(ValueError):
        pairsel.load_plan(tmp_path / "plan.txt", k=2)  # labels exceed declared k


def test_plan_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2 3\n")
    with pytest.raises(ValueError):
        pairsel.load_plan(path)
