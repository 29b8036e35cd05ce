from collections import Counter

import numpy as np

from kgalign.kg import KG1, KG2, RelationTriple, build_graph, build_primal
from kgalign.reconstruction import (
    AlignedRelationSet,
    candidate_pairs,
    filter_relations,
    neighbor_match,
    pseudo_labels,
    reconstruct_triples,
    relation_match_counts,
    run_algorithm,
)

from oracles import brute_force_reconstruction, random_kg_pair


class TestCandidatePairs:
    def test_above_threshold_included(self):
        assert (0, 0) in candidate_pairs(np.array([[0.9]]), 0.8)

    def test_equal_threshold_excluded(self):
        # strict inequality
        assert candidate_pairs(np.array([[0.8]]), 0.8) == set()

    def test_all_below(self):
        assert candidate_pairs(np.full((3, 3), 0.5), 0.8) == set()


class TestPseudoLabels:
    def test_mutual_best(self):
        sim = np.array([[0.9, 0.85], [0.3, 0.95]])
        assert pseudo_labels(sim, 0.8).pairs == {(0, 0), (1, 1)}

    def test_identity_matrix(self):
        sim = np.eye(4)
        assert pseudo_labels(sim, 0.8).pairs == {(i, i) for i in range(4)}

    def test_below_threshold_empty(self):
        assert pseudo_labels(np.full((2, 2), 0.7), 0.8).pairs == set()

    def test_one_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            sim = rng.uniform(-1, 1, size=(rng.integers(1, 10), rng.integers(1, 10)))
            pl = pseudo_labels(sim, 0.2)
            lefts = [i for i, _ in pl.pairs]
            rights = [j for _, j in pl.pairs]
            assert len(lefts) == len(set(lefts))
            assert len(rights) == len(set(rights))
            assert len(pl.pairs) <= min(sim.shape)

    def test_raising_threshold_never_grows(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            sim = rng.uniform(-1, 1, size=(8, 8))
            low = pseudo_labels(sim, 0.1).pairs
            high = pseudo_labels(sim, 0.6).pairs
            assert high <= low


def two_graphs():
    g1 = build_graph([("a", "r", "u"), ("a", "q", "w")], KG1)
    g2 = build_graph([("b", "s", "v"), ("b", "p", "z")], KG2)
    return g1, g2


class TestNeighborMatch:
    def test_single_pair(self):
        g1, g2 = two_graphs()
        # sim indexed by (g1 id, g2 id); a=0,u=1,w=2 / b=0,v=1,z=2
        sim = np.zeros((3, 3))
        sim[1, 1] = 0.9
        assert neighbor_match((0, 0), g1, g2, sim, 0.8) == {(1, 1)}

    def test_greedy_consumes_target(self):
        g1 = build_graph([("a", "r", "u1"), ("a", "r", "u2")], KG1)
        g2 = build_graph([("b", "s", "v")], KG2)
        sim = np.zeros((3, 2))
        sim[g1.entity_index["u1"], g2.entity_index["v"]] = 0.95
        sim[g1.entity_index["u2"], g2.entity_index["v"]] = 0.9
        assert neighbor_match((0, 0), g1, g2, sim, 0.8) == {
            (g1.entity_index["u1"], g2.entity_index["v"])
        }

    def test_all_below_threshold(self):
        g1, g2 = two_graphs()
        assert neighbor_match((0, 0), g1, g2, np.full((3, 3), 0.5), 0.8) == set()

    def test_tie_breaks_by_smallest_ids(self):
        g1 = build_graph([("a", "r", "u1"), ("a", "r", "u2")], KG1)
        g2 = build_graph([("b", "s", "v1"), ("b", "s", "v2")], KG2)
        sim = np.full((3, 3), 0.9)
        sim[0, :] = 0.0
        sim[:, 0] = 0.0
        matched = neighbor_match((0, 0), g1, g2, sim, 0.8)
        assert matched == {(1, 1), (2, 2)}


class TestRelationCounts:
    def test_single_match(self):
        g1, g2 = two_graphs()
        counter = relation_match_counts([((0, 0), (1, 1))], g1, g2)
        assert counter == Counter({(0, 0): 1})

    def test_additivity(self):
        g1, g2 = two_graphs()
        counter = relation_match_counts([((0, 0), (1, 1))] * 6, g1, g2)
        assert counter[(0, 0)] == 6

    def test_opposite_direction_not_counted(self):
        g1 = build_graph([("a", "r", "u")], KG1)
        g2 = build_graph([("v", "s", "b")], KG2)
        # anchor (a=0, b=1); match (u=1, v=0): a->u is out, v->b means b's
        # edge to v is in; orientations differ, so nothing is counted.
        counter = relation_match_counts([((0, 1), (1, 0))], g1, g2)
        assert counter == Counter()

    def test_same_direction_in_edges_counted(self):
        g1 = build_graph([("u", "r", "a")], KG1)
        g2 = build_graph([("v", "s", "b")], KG2)
        counter = relation_match_counts([((1, 1), (0, 0))], g1, g2)
        assert counter == Counter({(0, 0): 1})


class TestFilterRelations:
    def test_retained_above(self):
        out = filter_relations(Counter({(0, 1): 6}), 5)
        assert out.pairs == {(0, 1)}
        assert out.counts[(0, 1)] == 6

    def test_dropped_at_threshold(self):
        assert filter_relations(Counter({(0, 1): 5}), 5).pairs == set()

    def test_empty(self):
        assert filter_relations(Counter(), 5).pairs == set()


class TestReconstructTriples:
    def test_keep_matching_relation(self):
        g1, g2 = two_graphs()
        r_align = AlignedRelationSet(pairs={(0, 0)}, counts={(0, 0): 9})
        t1, t2, f1, f2 = reconstruct_triples(g1, g2, r_align)
        assert t1 == {RelationTriple(0, 0, 1)}
        assert t1 == f1 and t2 == f2  # no fallback engaged

    def test_empty_alignment_falls_back(self):
        g1, g2 = two_graphs()
        t1, t2, f1, f2 = reconstruct_triples(g1, g2, AlignedRelationSet(pairs=set()))
        assert t1 == g1.triples
        assert t2 == g2.triples
        assert f1 == set() and f2 == set()

    def test_never_adds_triples(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            t1s, t2s, v1, v2 = random_kg_pair(rng, max_entities=12)
            g1 = build_graph([(f"e{h}", f"r{r}", f"e{t}") for h, r, t in sorted(t1s)], KG1)
            g2 = build_graph([(f"x{h}", f"s{r}", f"x{t}") for h, r, t in sorted(t2s)], KG2)
            pairs = {
                (int(rng.integers(g1.num_relations)), int(rng.integers(g2.num_relations)))
                for _ in range(3)
            }
            t1, t2, _, _ = reconstruct_triples(g1, g2, AlignedRelationSet(pairs=pairs))
            assert t1 <= g1.triples
            assert t2 <= g2.triples


def graphs_from_tuples(t1, t2):
    g1 = build_graph([(f"e{h}", f"r{r}", f"e{t}") for h, r, t in sorted(t1)], KG1)
    g2 = build_graph([(f"x{h}", f"s{r}", f"x{t}") for h, r, t in sorted(t2)], KG2)
    return g1, g2


def to_plain(g, prefix_e, prefix_r, triples):
    """Convert package RelationTriples back to the oracle's index tuples."""
    out = set()
    for t in triples:
        h = int(g.entities[t.head].removeprefix(prefix_e))
        r = int(g.relations[t.relation].removeprefix(prefix_r))
        tt = int(g.entities[t.tail].removeprefix(prefix_e))
        out.add((h, r, tt))
    return out


class TestAlgorithmOracle:
    def run_both(self, rng, gamma_sim=0.6, tau_sim=0.6, gamma_r=1):
        t1, t2, v1, v2 = random_kg_pair(rng)
        g1, g2 = graphs_from_tuples(t1, t2)
        # reorder vectors to interned id order
        v1_interned = np.stack([v1[int(u.removeprefix("e"))] for u in g1.entities])
        v2_interned = np.stack([v2[int(u.removeprefix("x"))] for u in g2.entities])
        primal = build_primal(g1, g2)
        result = run_algorithm(
            primal,
            np.vstack([v1_interned, v2_interned]),
            gamma_sim=gamma_sim,
            tau_sim=tau_sim,
            gamma_r=gamma_r,
        )
        # map package outputs back into the oracle's index space
        pl_pkg = {
            (int(g1.entities[i].removeprefix("e")), int(g2.entities[j].removeprefix("x")))
            for i, j in result.pseudo_labels.pairs
        }
        ra_pkg = {
            (int(g1.relations[r1].removeprefix("r")), int(g2.relations[r2].removeprefix("s")))
            for r1, r2 in result.relations.pairs
        }
        kept1_pkg = to_plain(g1, "e", "r", result.filtered_1)
        kept2_pkg = to_plain(g2, "x", "s", result.filtered_2)
        pl_ref, ra_ref, kept1_ref, kept2_ref = brute_force_reconstruction(
            t1, t2, v1, v2, gamma_sim, tau_sim, gamma_r
        )
        return (pl_pkg, ra_pkg, kept1_pkg, kept2_pkg), (pl_ref, ra_ref, kept1_ref, kept2_ref)

    def test_oracle_equivalence_sample(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            got, want = self.run_both(rng)
            assert got == want

    def test_unreachable_threshold_falls_back(self):
        rng = np.random.default_rng(18)
        t1, t2, v1, v2 = random_kg_pair(rng)
        g1, g2 = graphs_from_tuples(t1, t2)
        primal = build_primal(g1, g2)
        vecs = np.vstack([
            np.stack([v1[int(u.removeprefix('e'))] for u in g1.entities]),
            np.stack([v2[int(u.removeprefix('x'))] for u in g2.entities]),
        ])
        result = run_algorithm(primal, vecs, gamma_sim=1.1, tau_sim=0.8, gamma_r=5)
        assert result.pseudo_labels.pairs == set()
        assert result.fallback_1 and result.fallback_2
        assert result.t_new_1 == g1.triples
        assert result.t_new_2 == g2.triples

    def test_isomorphic_identical_names_keep_duplicated_structure(self):
        # two copies of the same star; every relation pair is matched once
        # per pseudo-label anchor, so counts clear a small threshold
        edges = [("hub", "r0", f"leaf{i}") for i in range(6)]
        g1 = build_graph(edges, KG1)
        g2 = build_graph([(f"B{h}", s, f"B{t}") for h, s, t in edges], KG2)
        dim = 8
        rng = np.random.default_rng(5)
        base = rng.standard_normal((g1.num_entities, dim))
        vecs = np.vstack([base, base])  # identical names
        primal = build_primal(g1, g2)
        result = run_algorithm(primal, vecs, gamma_sim=0.8, tau_sim=0.8, gamma_r=2)
        assert result.relations.pairs == {(0, 0)}
        assert result.t_new_1 == g1.triples
        assert not result.fallback_1

    def test_monotonicity_in_gamma_r(self):
        rng = np.random.default_rng(19)
        for _ in range(10):
            t1, t2, v1, v2 = random_kg_pair(rng, max_entities=15)
            g1, g2 = graphs_from_tuples(t1, t2)
            vecs = np.vstack([
                np.stack([v1[int(u.removeprefix('e'))] for u in g1.entities]),
                np.stack([v2[int(u.removeprefix('x'))] for u in g2.entities]),
            ])
            primal = build_primal(g1, g2)
            prev = None
            for gamma_r in (0, 1, 2, 4, 8):
                r = run_algorithm(primal, vecs, gamma_sim=0.5, tau_sim=0.5, gamma_r=gamma_r)
                if prev is not None:
                    assert r.relations.pairs <= prev
                prev = r.relations.pairs

    def test_idempotence_never_regrows(self):
        rng = np.random.default_rng(20)
        for _ in range(10):
            t1, t2, v1, v2 = random_kg_pair(rng, max_entities=15)
            g1, g2 = graphs_from_tuples(t1, t2)
            vecs = np.vstack([
                np.stack([v1[int(u.removeprefix('e'))] for u in g1.entities]),
                np.stack([v2[int(u.removeprefix('x'))] for u in g2.entities]),
            ])
            primal = build_primal(g1, g2)
            first = run_algorithm(primal, vecs, gamma_sim=0.5, tau_sim=0.5, gamma_r=1)
            from kgalign.kg import subgraph_with_triples

            g1b = subgraph_with_triples(g1, first.t_new_1)
            g2b = subgraph_with_triples(g2, first.t_new_2)
            second = run_algorithm(build_primal(g1b, g2b), vecs, gamma_sim=0.5, tau_sim=0.5, gamma_r=1)
            assert second.t_new_1 <= first.t_new_1
            assert second.t_new_2 <= first.t_new_2

    def test_stats_report_shape(self):
        g1, g2 = two_graphs()
        vecs = np.vstack([np.eye(3), np.eye(3)])
        primal = build_primal(g1, g2)
        result = run_algorithm(primal, vecs, gamma_sim=0.8, tau_sim=0.8, gamma_r=0)
        stats = result.stats(g1, g2)
        assert set(stats) >= {
            "pseudo_label_count",
            "relation_pairs",
            "triples_kept_1",
            "triples_kept_2",
        }
