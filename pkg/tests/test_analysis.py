import numpy as np
import pytest
from scipy.cluster.hierarchy import linkage as scipy_linkage
from scipy.spatial.distance import squareform

import oracles
from phishsim.analysis import (agglomerate, export, matrix_to_csv, parse_newick, to_linkage_rows,
                               to_newick)


def random_matrix(seed, n):
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.05, 1.0, size=(n, n))
    m = (m + m.T) / 2
    np.fill_diagonal(m, 0.0)
    return m


def merges_of(tree):
    return [(frozenset([frozenset(n.left.leaves()), frozenset(n.right.leaves())]), n.height)
            for n in sorted(tree.internal_nodes(), key=lambda n: n.height)]


def test_two_items():
    tree = agglomerate([[0, 0.4], [0.4, 0]], ["a", "b"])
    assert tree.height == 0.4 and sorted(tree.leaves()) == ["a", "b"]
    assert to_newick(tree) == "(a:0.4,b:0.4);"


def test_close_pair_merges_first():
    m = [[0, 0.04, 0.93], [0.04, 0, 0.95], [0.93, 0.95, 0]]
    tree = agglomerate(m, ["P_NTF_52", "P_NTF_60", "other"])
    first = min(tree.internal_nodes(), key=lambda n: n.height)
    assert sorted(first.leaves()) == ["P_NTF_52", "P_NTF_60"] and first.height == 0.04


@pytest.mark.parametrize("linkage", ["single", "average", "complete"])
@pytest.mark.parametrize("seed", range(5))
def test_matches_bruteforce_oracle(linkage, seed):
    m = random_matrix(seed, 6)
    labels = list("abcdef")
    tree = agglomerate(m, labels, linkage)
    expected = oracles.agglomerate_bruteforce(m, labels, linkage)
    got = merges_of(tree)
    assert [s for s, _ in got] == [s for s, _ in expected]
    assert [h for _, h in got] == pytest.approx([h for _, h in expected], abs=1e-12)


@pytest.mark.parametrize("linkage", ["single", "average", "complete"])
def test_heights_match_scipy(linkage):
    m = random_matrix(11, 9)
    tree = agglomerate(m, None, linkage)
    z = scipy_linkage(squareform(m), method=linkage)
    assert sorted(n.height for n in tree.internal_nodes()) == pytest.approx(sorted(z[:, 2]))


def test_heights_monotone_and_leaf_set():
    m = random_matrix(12, 10)
    labels = [f"x{i}" for i in range(10)]
    tree = agglomerate(m, labels)
    for node in tree.internal_nodes():
        assert node.height >= node.left.height and node.height >= node.right.height
    assert sorted(tree.leaves()) == sorted(labels)


def test_permutation_invariance():
    m = np.array([[0, .3, .3, .7], [.3, 0, .3, .7], [.3, .3, 0, .7], [.7, .7, .7, 0]])
    labels = ["a", "b", "c", "d"]
    tree = agglomerate(m, labels)
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = rng.permutation(4)
        other = agglomerate(m[np.ix_(p, p)], [labels[i] for i in p])
        assert other.canonical() == tree.canonical()


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        agglomerate([[0, 0.1], [0.2, 0]])
    with pytest.raises(ValueError):
        agglomerate([[0]])
    with pytest.raises(ValueError):
        agglomerate([[0, 0.1], [0.1, 0]], linkage="ward")
    with pytest.raises(ValueError):
        agglomerate([[0, 0.1], [0.1, 0]], ["a", "a"])


def test_newick_round_trip():
    m = random_matrix(13, 8)
    labels = ["plain", "with space", "it's", "a:b", "e", "f", "g", "h"]
    tree = agglomerate(m, labels)
    back = parse_newick(to_newick(tree))
    assert back.canonical(digits=9) == tree.canonical(digits=9)


def test_csv_linkage_rows():
    m = random_matrix(14, 10)
    tree = agglomerate(m)
    lines = export(tree, "csv-linkage").decode().splitlines()
    assert lines[0] == "left,right,height,size" and len(lines) == 10
    rows = to_linkage_rows(tree)
    assert rows[-1][3] == 10
    seen = set(range(10))
    for i, (a, b, h, size) in enumerate(rows):
        assert a in seen and b in seen
        seen -= {a, b}
        seen.add(10 + i)


def test_export_unknown_format():
    with pytest.raises(ValueError):
        export(agglomerate([[0, 1], [1, 0]]), "json")


def test_matrix_csv():
    out = matrix_to_csv([[0.0, 0.5], [0.5, 0.0]], ["a", "b"]).decode().splitlines()
    assert out == ["id,a,b", "a,0.0,0.5", "b,0.5,0.0"]
