from __future__ import annotations

import numpy as np
import pytest

from vpnav import topo as T
from vpnav import world as W
from vpnav.policy import AttentionWeights


@pytest.fixture(scope="module")
def weights():
    return AttentionWeights.seeded()


def walk_gt(scene, path, heading=0.0):
    g = T.TopoGraph()
    for i, nid in enumerate(path):
        T.update_graph(g, W.observe_step(scene, nid, heading))
        if i + 1 < len(path):
            g.move_to(path[i + 1])
    return g


class TestUpdateGraph:
    def test_first_observation(self, scene42):
        g = T.TopoGraph()
        T.update_graph(g, W.observe_step(scene42, 0, 0.0))
        degree = len(scene42.graph.neighbors(0))
        counts = g.status_counts()
        assert counts[T.CURRENT] == 1
        assert counts[T.NAVIGABLE] == degree
        assert len(g.edges) == degree
        assert g.step_counter == 1

    def test_revisit_idempotent(self, scene42):
        g = T.TopoGraph()
        T.update_graph(g, W.observe_step(scene42, 0, 0.0))
        nb = next(v for v, _ in scene42.graph.neighbors(0))
        g.move_to(nb)
        T.update_graph(g, W.observe_step(scene42, nb, 0.0))
        n_before = len(g)
        views_before = len(g.nodes[0].views)
        g.move_to(0)
        T.update_graph(g, W.observe_step(scene42, 0, 0.0))
        assert len(g) == n_before
        assert len(g.nodes[0].views) == views_before  # refreshed, not duplicated
        assert g.nodes[0].status == T.CURRENT
        assert g.nodes[nb].status == T.VISITED

    def test_full_walk_covers_path_and_neighbors(self, scene42, sample_path):
        path, _, _ = sample_path
        g = walk_gt(scene42, path)
        want = set(path)
        for nid in path:
            want |= {v for v, _ in scene42.graph.neighbors(nid)}
        assert set(g.nodes) == want

    def test_monotone_growth(self, scene42, sample_path):
        path, _, _ = sample_path
        g = T.TopoGraph()
        prev_nodes: set[int] = set()
        prev_edges: set[tuple[int, int]] = set()
        for i, nid in enumerate(path):
            T.update_graph(g, W.observe_step(scene42, nid, 0.0))
            assert prev_nodes <= set(g.nodes)
            assert prev_edges <= set(g.edges)
            prev_nodes, prev_edges = set(g.nodes), set(g.edges)
            if i + 1 < len(path):
                g.move_to(path[i + 1])

    def test_visited_never_reverts(self, scene42, sample_path):
        path, _, _ = sample_path
        g = walk_gt(scene42, path)
        for nid in path[:-1]:
            assert g.nodes[nid].status == T.VISITED
        assert g.nodes[path[-1]].status == T.CURRENT

    def test_wrong_node_rejected(self, scene42):
        g = T.TopoGraph()
        T.update_graph(g, W.observe_step(scene42, 0, 0.0))
        other = next(v for v, _ in scene42.graph.neighbors(0))
        with pytest.raises(ValueError):
            T.update_graph(g, W.observe_step(scene42, other, 0.0))

    def test_distance_matrix_matches_world_dijkstra(self, scene42, sample_path):
        path, _, _ = sample_path
        g = walk_gt(scene42, path)
        ids, dist = g.distance_matrix()
        sub_nodes = [W.NavNode(nid, g.nodes[nid].position, g.nodes[nid].floor_index)
                     for nid in ids]
        sub = W.NavGraph(sub_nodes, dict(g.edges))
        for i, a in enumerate(ids):
            ref = W.geodesic_distances(sub, a)
            for j, b in enumerate(ids):
                assert abs(dist[i, j] - ref[b]) < 1e-9
        assert np.allclose(dist, dist.T)
        assert np.abs(np.diag(dist)).max() == 0.0

    def test_navigable_views_accumulate(self, scene42):
        # find a node with two neighbors that are themselves adjacent
        target, via = None, None
        for nid in range(len(scene42.graph)):
            nbs = [v for v, _ in scene42.graph.neighbors(nid)]
            for a in nbs:
                for b in nbs:
                    if a < b and (a, b) in scene42.graph.edges:
                        target, via = nid, (a, b)
        assert target is not None
        a, b = via
        g = T.TopoGraph()
        T.update_graph(g, W.observe_step(scene42, a, 0.0))
        g.move_to(b)
        T.update_graph(g, W.observe_step(scene42, b, 0.0))
        assert g.nodes[target].status == T.NAVIGABLE
        assert len(g.nodes[target].views) == 2


class TestEmbeddings:
    def test_zero_inputs_zero_outputs(self, weights):
        views = [W.ViewObservation(i, 0.0, np.zeros(32), np.zeros(64), np.zeros(64), None)
                 for i in range(4)]
        out = T.embed_views(views, weights)
        assert np.abs(out).max() == 0.0

    def test_permutation_equivariance(self, scene42, weights):
        views = W.observe(scene42, 0, 0.0)
        out = T.embed_views(views, weights)
        perm = [3, 1, 0, 2] + list(range(4, len(views)))
        out_p = T.embed_views([views[i] for i in perm], weights)
        assert np.allclose(out_p, out[perm], atol=1e-12)

    def test_single_view_value_path(self, scene42, weights):
        views = W.observe(scene42, 0, 0.0)[:1]
        out = T.embed_views(views, weights)
        const = T.embed_constants()
        x = T.layer_norm((views[0].visual @ const.view_proj
                          + views[0].direction_embed + views[0].navigable_embed)[None, :])
        assert np.allclose(out, x @ weights.view_wv, atol=1e-12)

    def test_unexplored_step_component_zero(self, scene42, weights):
        g = T.TopoGraph()
        T.update_graph(g, W.observe_step(scene42, 0, 0.0))
        nav = next(nid for nid, n in g.nodes.items() if n.status == T.NAVIGABLE)
        node = g.nodes[nav]
        ctx = T.embed_views(node.views, weights)
        emb = T.embed_node(node, ctx, g.nodes[0].position)
        # a zero step component leaves exactly position + view mean
        dx = node.position[0] - g.nodes[0].position[0]
        dy = node.position[1] - g.nodes[0].position[1]
        pos = T.position_embedding(float(np.hypot(dx, dy)), float(np.arctan2(dy, dx)))
        assert np.array_equal(emb, np.zeros(64) + pos + ctx.mean(axis=0))

    def test_identical_views_mean_collapses(self, scene42, weights):
        v = W.observe(scene42, 0, 0.0)[0]
        node = T.TopoNode(99, T.NAVIGABLE, (1.0, 2.0, 0.0), 0, views=[v, v, v])
        ctx = T.embed_views(node.views, weights)
        single = T.embed_views([v], weights)
        assert np.allclose(ctx.mean(axis=0), single[0], atol=1e-12)

    def test_visit_order_changes_only_step_component(self, scene42, weights):
        node_a = T.TopoNode(1, T.VISITED, (0.0, 0.0, 0.0), 0,
                            views=W.observe(scene42, 1, 0.0), first_visit_step=1)
        node_b = T.TopoNode(1, T.VISITED, (0.0, 0.0, 0.0), 0,
                            views=W.observe(scene42, 1, 0.0), first_visit_step=2)
        ctx = T.embed_views(node_a.views, weights)
        e1 = T.embed_node(node_a, ctx, (3.0, 4.0, 0.0))
        e2 = T.embed_node(node_b, ctx, (3.0, 4.0, 0.0))
        const = T.embed_constants()
        assert np.allclose(e1 - e2, const.step_codebook[1] - const.step_codebook[2])

    def test_embed_graph_dims_and_stop(self, scene42, sample_path, weights):
        path, _, _ = sample_path
        g = walk_gt(scene42, path)
        ids, embeds, e = T.embed_graph(g, weights)
        assert embeds.shape == (len(ids) + 1, 64)
        assert e.shape == (len(ids) + 1, len(ids) + 1)
        assert np.allclose(e, e.T) and np.abs(np.diag(e)).max() == 0.0
        assert np.array_equal(embeds[0], T.stop_embedding())
        assert np.isfinite(embeds).all()
