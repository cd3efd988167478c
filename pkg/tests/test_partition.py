from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from giqs.errors import OutOfDomainError
from giqs.lattice import FunctionModel, TorusModel
from giqs.partition import (ResonanceModule, ResonanceParams, UnionFind,
                            adjacency_closure_violations, brute_force_nonresonant,
                            build_partition, is_resonant, resonance_module, resonant_vectors)

TORUS = TorusModel()
DEFAULT = ResonanceParams.default_for(TORUS)


@pytest.fixture(scope="module")
def torus_report():
    return build_partition(TORUS, (8, 32), DEFAULT)


def test_default_params():
    assert (DEFAULT.delta, DEFAULT.mu, DEFAULT.R) == (0.5, 0.25, 8.0)


def test_delta_bound_enforced():
    with pytest.raises(OutOfDomainError):
        ResonanceParams(1.5).validate(TORUS)
    with pytest.raises(OutOfDomainError):
        ResonanceParams(0.5, mu=0.0)


def test_is_resonant_examples():
    p = ResonanceParams(0.5, 0.3, 5)
    assert is_resonant(TORUS, (10, 0), (0, 1), p)
    assert not is_resonant(TORUS, (10, 0), (1, 0), p)
    assert not any(is_resonant(TORUS, (3, 0), k, p) for k in [(0, 1), (1, 0), (1, 1)])


def test_module_examples():
    p = ResonanceParams(0.5, 0.3, 5)
    mod = resonance_module(TORUS, (10, 0), p)
    assert mod.rank == 1 and [list(r) for r in mod.basis] == [[0, 1]]
    # with a small delta, (7, 6) has no near-orthogonal k inside the cutoff
    small = ResonanceParams(0.1, 0.25, 5)
    assert resonance_module(TORUS, (7, 6), small).rank == 0
    assert brute_force_nonresonant(TORUS, (7, 6), small)
    assert ResonanceModule.from_vectors([[0, 2]], 2).basis == ((0, 1),)


@given(st.integers(-40, 40), st.integers(-40, 40), st.integers(-3, 3), st.integers(-3, 3))
def test_resonance_is_even_in_k(a1, a2, k1, k2):
    if (k1, k2) == (0, 0):
        return
    assert is_resonant(TORUS, (a1, a2), (k1, k2), DEFAULT) == is_resonant(TORUS, (a1, a2), (-k1, -k2), DEFAULT)


@given(st.integers(-40, 40), st.integers(-40, 40))
def test_module_matches_brute_force(a1, a2):
    mod = resonance_module(TORUS, (a1, a2), DEFAULT)
    assert (mod.rank == 0) == brute_force_nonresonant(TORUS, (a1, a2), DEFAULT)
    for k in resonant_vectors(TORUS, (a1, a2), DEFAULT).tolist():
        assert ResonanceModule.from_vectors([k], 2).basis == ResonanceModule.from_vectors(
            [[2 * x for x in k]], 2).basis


def test_partition_is_exact_cover(torus_report):
    rep = torus_report
    seen = [m.index for b in rep.blocks for m in b.members]
    assert len(seen) == len(set(seen)) == len(rep.indices)
    assert set(seen) == {tuple(r) for r in rep.indices.tolist()}
    assert rep.violations["cover"] == []


def test_partition_verification(torus_report):
    rep = torus_report
    assert rep.n_violations == 0
    assert math.isfinite(rep.C) and rep.C >= 1
    assert rep.K > 0


def test_rank0_blocks_are_nonresonant_singletons(torus_report):
    for b in torus_report.blocks:
        if b.module.rank == 0:
            assert len(b.members) == 1
            assert brute_force_nonresonant(TORUS, b.members[0], DEFAULT)


def test_closure_exhaustive(torus_report):
    assert adjacency_closure_violations(torus_report) == []


def test_block_labels_unique(torus_report):
    labels = [b.label for b in torus_report.blocks]
    assert len(labels) == len(set(labels))


def test_rank0_count_against_brute_force(torus_report):
    # nonresonant points either form rank-0 singletons or are reached from a resonant neighbour
    n_rank0 = sum(1 for b in torus_report.blocks if b.module.rank == 0)
    brute = sum(brute_force_nonresonant(TORUS, tuple(a), DEFAULT) for a in torus_report.indices.tolist())
    reached = torus_report.diagnostics["nonresonant_members_in_resonant_blocks"]
    assert n_rank0 + reached == brute
    # frozen values of that recount
    assert (n_rank0, reached, brute) == (1040, 840, 1880)


def test_linear_model_everything_resonant():
    lin = FunctionModel(2, lambda p: p[:, 0] * 3.0 + 0.0 * p[:, 1], 2.0,
                        w=lambda p: np.tile([3.0, 0.0], (len(p), 1)))
    rep = build_partition(lin, (8, 20), ResonanceParams(0.5))
    assert not any(b.module.rank == 0 for b in rep.blocks)


def test_report_serializes(torus_report):
    d = torus_report.to_dict(include_members=False)
    assert d["n_points"] == len(torus_report.indices)
    assert "members" not in d["blocks"][0]


def test_union_find():
    uf = UnionFind(5)
    uf.union(0, 3)
    uf.union(3, 4)
    lab = uf.labels()
    assert lab[0] == lab[4] != lab[1]
