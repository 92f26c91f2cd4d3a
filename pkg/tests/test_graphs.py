import numpy as np
import pytest

from rbmlab.errors import (
    CapacityError,
    ContractError,
    UnsupportedEdgeError,
    UnsupportedLabelError,
)
from rbmlab.graphs import (
    Atom,
    AtomicGraph,
    Coefficient,
    Edge,
    EdgeKind,
    Weight,
    WeightKind,
    dotted_normal_form,
    evaluate,
    graph_size,
    is_doubly_connected,
    is_normal,
    molecular_graph,
    molecules,
    parse_graph,
    scaling_order,
    second_order_graphs,
    serialize_graph,
    standard_bindings,
)
from rbmlab.propagators import PropagatorSet
from rbmlab.sampler import sample_band
from rbmlab.spectral import resolvent, t_three


def ext(*ids):
    return tuple(Atom(i, False) for i in ids)


def internal(*ids):
    return tuple(Atom(i, True) for i in ids)


@pytest.fixture
def ctx_props(small_profile):
    z = 0.2 + 0.5j
    ctx = resolvent(sample_band(small_profile, 77, 0), z, small_profile)
    return ctx, PropagatorSet.build(small_profile, z)


def test_type_invariants():
    with pytest.raises(ContractError):
        AtomicGraph(ext(0), (Edge(0, 1, EdgeKind.FREE),))  # unknown atom
    with pytest.raises(ContractError):
        AtomicGraph(ext(0, 1), (Edge(0, 1, EdgeKind.DOTTED), Edge(0, 1, EdgeKind.CROSS_DOTTED)))
    with pytest.raises(ContractError):
        AtomicGraph(ext(0), (Edge(0, 0, EdgeKind.G_BLUE),))  # diagonal G is a weight
    with pytest.raises(ContractError):
        AtomicGraph(ext(0, 1), (Edge(0, 1, EdgeKind.LABELED_DIFFUSIVE),))  # no order
    with pytest.raises(ContractError):
        AtomicGraph(ext(0, 1), weights=(Weight(7, WeightKind.REGULAR_BLUE),))


def test_is_normal_examples():
    ok, _ = is_normal(AtomicGraph(ext(0, 1), (Edge(0, 1, EdgeKind.DIFFUSIVE),)))
    assert ok
    bad_dotted = AtomicGraph(internal(0, 1), (Edge(0, 1, EdgeKind.DOTTED),))
    ok, viol = is_normal(bad_dotted)
    assert not ok and any(v.startswith("iii") for v in viol)
    bad_pairing = AtomicGraph(ext(0, 1), (Edge(0, 1, EdgeKind.G_BLUE),))
    ok, viol = is_normal(bad_pairing)
    assert not ok and any(v.startswith("iv-missing") for v in viol)
    # unanchored internal atom (free edges do not anchor)
    floating = AtomicGraph(
        ext(0) + internal(1, 2),
        (Edge(0, 1, EdgeKind.WAVED), Edge(1, 2, EdgeKind.FREE)),
    )
    ok, viol = is_normal(floating)
    assert not ok and any(v.startswith("ii") for v in viol)
    # cross-dotted edges are part of the dotted family and do anchor
    anchored = AtomicGraph(
        ext(0) + internal(1, 2),
        (Edge(0, 1, EdgeKind.WAVED), Edge(1, 2, EdgeKind.G_BLUE), Edge(1, 2, EdgeKind.CROSS_DOTTED)),
    )
    assert is_normal(anchored)[0]
    ok, viol = is_normal(AtomicGraph(ext(*range(5)), ()), cap=4)
    assert not ok and any(v.startswith("i:") for v in viol)


def test_scaling_order_examples():
    assert scaling_order(AtomicGraph(ext(0, 1), (Edge(0, 1, EdgeKind.DIFFUSIVE),))) == 2
    # sum_x s_ax G_xb conj(G_xb): waved + two G edges + one internal
    g = AtomicGraph(
        ext(0, 1) + internal(2),
        (Edge(0, 2, EdgeKind.WAVED), Edge(2, 1, EdgeKind.G_BLUE), Edge(2, 1, EdgeKind.G_RED)),
    )
    assert scaling_order(g) == 2
    g_light = AtomicGraph(g.atoms, g.edges, (Weight(2, WeightKind.LIGHT_BLUE),))
    assert scaling_order(g_light) == 3
    with pytest.raises(ContractError):
        scaling_order(AtomicGraph(internal(0, 1), (Edge(0, 1, EdgeKind.DOTTED),)))


def test_scaling_order_relabel_invariance(rng):
    base = AtomicGraph(
        ext(0, 1) + internal(2, 3),
        (
            Edge(0, 2, EdgeKind.DIFFUSIVE),
            Edge(2, 3, EdgeKind.WAVED),
            Edge(3, 1, EdgeKind.G_BLUE),
            Edge(3, 1, EdgeKind.CROSS_DOTTED),
            Edge(2, 3, EdgeKind.GHOST),
        ),
        (Weight(2, WeightKind.LIGHT_RED),),
    )
    want = scaling_order(base)
    for _ in range(10):
        perm = rng.permutation(4)
        mapping = {old: int(perm[old]) for old in range(4)}
        atoms = tuple(Atom(mapping[a.id], a.internal) for a in base.atoms)
        edges = list(
            Edge(mapping[e.a], mapping[e.b], e.kind, e.order, e.label) for e in base.edges
        )
        rng.shuffle(edges)
        weights = tuple(Weight(mapping[w.atom], w.kind, w.label) for w in base.weights)
        assert scaling_order(AtomicGraph(atoms, tuple(edges), weights)) == want


def test_molecules_examples():
    g = AtomicGraph(ext(0, 1) + internal(2), (Edge(0, 1, EdgeKind.G_BLUE), Edge(0, 1, EdgeKind.CROSS_DOTTED)))
    dec = molecules(g)
    assert dec.n_molecules == 3  # G edges never merge molecules
    chain = AtomicGraph(
        ext(0) + internal(1, 2),
        (Edge(0, 1, EdgeKind.WAVED), Edge(1, 2, EdgeKind.DOTTED)),
    )
    dec = molecules(chain)
    assert dec.n_molecules == 1
    assert dec.external_molecules == {0}
    two = AtomicGraph(
        internal(0, 1, 2, 3),
        (Edge(0, 1, EdgeKind.WAVED_PLUS), Edge(2, 3, EdgeKind.WAVED_MINUS), Edge(1, 2, EdgeKind.G_BLUE), Edge(1, 2, EdgeKind.CROSS_DOTTED)),
    )
    assert molecules(two).n_molecules == 2


def test_molecules_refine_full_connectivity():
    g = AtomicGraph(
        internal(0, 1, 2),
        (Edge(0, 1, EdgeKind.WAVED), Edge(1, 2, EdgeKind.DIFFUSIVE)),
    )
    dec = molecules(g)
    # every molecule sits inside one full-edge-set component
    assert dec.partition[0] == dec.partition[1] != dec.partition[2]


def test_molecular_graph_examples():
    one = AtomicGraph(internal(0, 1), (Edge(0, 1, EdgeKind.WAVED), Edge(0, 1, EdgeKind.FREE)))
    mg = molecular_graph(one)
    assert mg.n_molecules == 1 and mg.edges == ()
    two = AtomicGraph(
        internal(0, 1),
        (Edge(0, 1, EdgeKind.G_BLUE), Edge(0, 1, EdgeKind.CROSS_DOTTED), Edge(0, 1, EdgeKind.G_BLUE)),
    )
    mg = molecular_graph(two)
    kinds = [e[2] for e in mg.edges]
    assert kinds.count(EdgeKind.G_BLUE) == 2  # parallel edges preserved
    ghosted = AtomicGraph(internal(0, 1), (Edge(0, 1, EdgeKind.GHOST), Edge(0, 1, EdgeKind.DIFFUSIVE)))
    mg = molecular_graph(ghosted)
    assert mg.ghost_edges == ((0, 1),) and len(mg.edges) == 1


def test_doubly_connected_monotone_and_cap():
    base_edges = [Edge(0, 1, EdgeKind.DIFFUSIVE)]
    g1 = AtomicGraph(internal(0, 1), tuple(base_edges))
    assert is_doubly_connected(g1)[0] is False
    g2 = AtomicGraph(internal(0, 1), tuple(base_edges + [Edge(0, 1, EdgeKind.DIFFUSIVE)]))
    assert is_doubly_connected(g2)[0] is True
    # adding one more diffusive edge never flips true -> false
    g3 = AtomicGraph(internal(0, 1), g2.edges + (Edge(0, 1, EdgeKind.DIFFUSIVE),))
    assert is_doubly_connected(g3)[0] is True
    many = AtomicGraph(
        internal(0, 1), tuple(Edge(0, 1, EdgeKind.DIFFUSIVE) for _ in range(13))
    )
    with pytest.raises(CapacityError, match="12"):
        is_doubly_connected(many)


def test_graph_size_examples():
    g2 = AtomicGraph(ext(0, 1), (Edge(0, 1, EdgeKind.DIFFUSIVE),))
    assert graph_size(g2, W=4.0, L=64, eta=0.5, d=6, delta0=0.2) == pytest.approx(4.0**-6)
    with_ghost = AtomicGraph(g2.atoms, g2.edges + (Edge(0, 1, EdgeKind.GHOST),))
    assert graph_size(with_ghost, 4.0, 64, 0.5, 6, 0.2) == pytest.approx(
        (64**2 / 4.0**2) * 4.0**-6
    )
    empty = AtomicGraph(ext(0))
    assert graph_size(empty, 4.0, 64, 0.5, 6, 0.2) == 1.0


def test_evaluate_trivial_cases(ctx_props):
    ctx, props = ctx_props
    empty = AtomicGraph(ext(0), coeff=Coefficient(3 - 2j))
    assert evaluate(empty, ctx, props, {0: 4}) == 3 - 2j
    xdot = AtomicGraph(ext(0, 1), (Edge(0, 1, EdgeKind.CROSS_DOTTED),))
    assert evaluate(xdot, ctx, props, {0: 3, 1: 3}) == 0
    assert evaluate(xdot, ctx, props, {0: 3, 1: 4}) == 1


def test_evaluate_t_three_oracle(ctx_props):
    ctx, props = ctx_props
    g = AtomicGraph(
        ext(0, 1, 2) + internal(3),
        (Edge(0, 3, EdgeKind.WAVED), Edge(3, 1, EdgeKind.G_BLUE), Edge(3, 2, EdgeKind.G_RED)),
        coeff=Coefficient(m_pow=1, mbar_pow=1),
    )
    for sites in [(0, 1, 3), (2, 5, 5), (0, 0, 0)]:
        got = evaluate(g, ctx, props, standard_bindings(*sites))
        assert abs(got - t_three(ctx, *sites)) < 1e-12


def test_evaluate_linearity_and_product(ctx_props):
    ctx, props = ctx_props
    g = AtomicGraph(
        ext(0, 1), (Edge(0, 1, EdgeKind.G_BLUE),), coeff=Coefficient(1.0)
    )
    doubled = AtomicGraph(g.atoms, g.edges, coeff=Coefficient(2.0))
    b = {0: 1, 1: 5}
    assert evaluate(doubled, ctx, props, b) == 2 * evaluate(g, ctx, props, b)
    # disjoint union with disjoint externals multiplies values
    w1 = AtomicGraph(ext(0), weights=(Weight(0, WeightKind.REGULAR_BLUE),))
    w2 = AtomicGraph(ext(1), weights=(Weight(1, WeightKind.LIGHT_RED),))
    union = AtomicGraph(
        ext(0, 1), weights=w1.weights + w2.weights
    )
    vals = (
        evaluate(w1, ctx, props, {0: 2}),
        evaluate(w2, ctx, props, {1: 6}),
        evaluate(union, ctx, props, {0: 2, 1: 6}),
    )
    assert abs(vals[2] - vals[0] * vals[1]) < 1e-14


def test_evaluate_free_and_ghost_factors(ctx_props):
    ctx, props = ctx_props
    n, eta = ctx.N, ctx.eta
    w_band = props.profile.W
    g = AtomicGraph(ext(0, 1), (Edge(0, 1, EdgeKind.FREE), Edge(0, 1, EdgeKind.GHOST)))
    got = evaluate(g, ctx, props, {0: 0, 1: 1})
    assert abs(got - (1 / (n * eta)) * (w_band**2 / 8**2)) < 1e-15


def test_evaluate_errors(ctx_props):
    ctx, props = ctx_props
    labeled = AtomicGraph(
        ext(0, 1), (Edge(0, 1, EdgeKind.G_BLUE, label=("Q", 0)),)
    )
    with pytest.raises(UnsupportedLabelError):
        evaluate(labeled, ctx, props, {0: 0, 1: 1})
    ldiff = AtomicGraph(ext(0, 1), (Edge(0, 1, EdgeKind.LABELED_DIFFUSIVE, order=4),))
    with pytest.raises(UnsupportedEdgeError):
        evaluate(ldiff, ctx, props, {0: 0, 1: 1})
    unbound = AtomicGraph(ext(0, 1), (Edge(0, 1, EdgeKind.FREE),))
    with pytest.raises(ContractError):
        evaluate(unbound, ctx, props, {0: 0})
    crowded = AtomicGraph(
        ext(0) + internal(*range(1, 11)),
        tuple(Edge(0, i, EdgeKind.WAVED) for i in range(1, 11)),
    )
    with pytest.raises(CapacityError):
        evaluate(crowded, ctx, props, {0: 0})  # 8^10 > 1e8


def test_second_order_graph_count_and_orders():
    graphs = second_order_graphs(0, 1, 3)
    assert len(graphs) == 4
    assert [scaling_order(g) for g in graphs] == [3, 0, 3, 3]
    assert all(not is_normal(g)[0] for g in graphs[:1])  # raw leading term lacks pairing
    for g in graphs:
        for piece in dotted_normal_form(g):
            ok, viol = is_normal(piece)
            assert ok, viol


def test_dotted_normal_form_preserves_value(ctx_props):
    ctx, props = ctx_props
    for g in second_order_graphs(0, 1, 3):
        for sites in [(0, 1, 3), (0, 0, 0), (2, 5, 5)]:
            b = standard_bindings(*sites)
            split = dotted_normal_form(g)
            total = sum(evaluate(p, ctx, props, b) for p in split)
            assert abs(total - evaluate(g, ctx, props, b)) < 1e-13


def test_dotted_normal_form_internal_merge(ctx_props):
    ctx, props = ctx_props
    # unpaired G edge between two internal atoms forces an atom merge
    g = AtomicGraph(
        ext(0) + internal(1, 2),
        (
            Edge(0, 1, EdgeKind.WAVED),
            Edge(1, 2, EdgeKind.WAVED),
            Edge(1, 2, EdgeKind.G_BLUE),
        ),
    )
    split = dotted_normal_form(g)
    assert len(split) == 2
    assert {len(p.internal_atoms) for p in split} == {1, 2}
    total = sum(evaluate(p, ctx, props, {0: 3}) for p in split)
    assert abs(total - evaluate(g, ctx, props, {0: 3})) < 1e-13
    for p in split:
        ok, viol = is_normal(p)
        assert ok, viol


def test_dotted_normal_form_collapses_predotted_pair(ctx_props):
    ctx, props = ctx_props
    # a G edge whose pair already carries a plain dotted edge is forced
    # diagonal: no split, the edge becomes a regular weight
    g = AtomicGraph(
        ext(0) + internal(1),
        (
            Edge(0, 1, EdgeKind.WAVED),
            Edge(0, 1, EdgeKind.DOTTED),
            Edge(0, 1, EdgeKind.G_BLUE),
        ),
    )
    split = dotted_normal_form(g)
    assert len(split) == 1
    ok, viol = is_normal(split[0])
    assert ok, viol
    got = evaluate(split[0], ctx, props, {0: 2})
    assert abs(got - evaluate(g, ctx, props, {0: 2})) < 1e-14


def test_serialization_roundtrip():
    for g in second_order_graphs(0, 1, 3):
        text = serialize_graph(g)
        parsed = parse_graph(text)
        assert serialize_graph(parsed) == text
    fancy = AtomicGraph(
        ext(0) + internal(1),
        (
            Edge(0, 1, EdgeKind.LABELED_DIFFUSIVE, order=4),
            Edge(0, 1, EdgeKind.WAVED, label=("P", 1)),
        ),
        (Weight(1, WeightKind.LIGHT_BLUE, label=("Q", 0)),),
        Coefficient(0.5 - 1.25j, m_pow=2, inv_neta_pow=1),
    )
    text = serialize_graph(fancy)
    parsed = parse_graph(text)
    assert serialize_graph(parsed) == text
    assert parsed.coeff == fancy.coeff
    assert parsed.edges[0].order == 4
    assert parsed.edges[1].label == ("P", 1)
