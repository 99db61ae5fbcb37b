#include <catch2/catch_amalgamated.hpp>

#include <htrise/dimension_tree.hpp>

using namespace htrise;

TEST_CASE("two dimensions give root plus two leaves") {
    DimensionTree t = DimensionTree::balanced(2);
    REQUIRE(t.depth() == 1);
    REQUIRE(t.node_count() == 3);
    REQUIRE(t.node({0, 0}).kind == NodeKind::Root);
    REQUIRE(t.node({1, 0}).kind == NodeKind::Leaf);
    REQUIRE(t.node({1, 0}).leaf_dim == 0);
    REQUIRE(t.node({1, 1}).leaf_dim == 1);
}

TEST_CASE("five dimensions group as {{{1,2},3},{4,5}}") {
    DimensionTree t = DimensionTree::balanced(5);
    REQUIRE(t.depth() == 3);
    REQUIRE(t.node_count() == 9);
    REQUIRE(t.layer_size(1) == 2);
    REQUIRE(t.layer_size(2) == 4);
    REQUIRE(t.layer_size(3) == 2);

    REQUIRE(t.node({1, 0}).kind == NodeKind::Transfer);  // spans dims 0..2
    REQUIRE(t.node({1, 1}).kind == NodeKind::Transfer);  // spans dims 3..4
    REQUIRE(t.node({2, 0}).kind == NodeKind::Transfer);  // spans dims 0..1
    REQUIRE(t.node({2, 1}).leaf_dim == 2);
    REQUIRE(t.node({2, 2}).leaf_dim == 3);
    REQUIRE(t.node({2, 3}).leaf_dim == 4);
    REQUIRE(t.node({3, 0}).leaf_dim == 0);
    REQUIRE(t.node({3, 1}).leaf_dim == 1);
}

TEST_CASE("eight dimensions give a perfect binary tree of depth three") {
    DimensionTree t = DimensionTree::balanced(8);
    REQUIRE(t.depth() == 3);
    REQUIRE(t.node_count() == 15);
    REQUIRE(t.layer_size(3) == 8);
    for (Index i = 0; i < 8; ++i) REQUIRE(t.node({3, i}).leaf_dim == i);
}

TEST_CASE("degenerate orders are rejected") {
    REQUIRE_THROWS_AS(DimensionTree::balanced(1), std::invalid_argument);
    REQUIRE_THROWS_AS(DimensionTree::balanced(0), std::invalid_argument);
}

TEST_CASE("structural invariants hold for a range of orders") {
    for (Index d = 2; d <= 10; ++d) {
        DimensionTree t = DimensionTree::balanced(d);

        Index nodes = 0, leaves = 0;
        std::vector<bool> dim_seen(static_cast<std::size_t>(d), false);
        for (Index l = 0; l <= t.depth(); ++l) {
            Index internal_before = 0;
            for (Index i = 0; i < t.layer_size(l); ++i) {
                const TreeNode& n = t.node({l, i});
                ++nodes;
                if (n.kind == NodeKind::Leaf) {
                    ++leaves;
                    REQUIRE(l >= t.depth() - 1);
                    REQUIRE(!dim_seen[static_cast<std::size_t>(n.leaf_dim)]);
                    dim_seen[static_cast<std::size_t>(n.leaf_dim)] = true;
                } else {
                    // successors sit two at a time in the next layer, in order
                    REQUIRE(n.successors[0] == NodeId{l + 1, 2 * internal_before});
                    REQUIRE(n.successors[1] == NodeId{l + 1, 2 * internal_before + 1});
                    ++internal_before;
                    // parent pointers round-trip
                    for (Index slot = 0; slot < 2; ++slot) {
                        NodeId child = n.successors[static_cast<std::size_t>(slot)];
                        REQUIRE(t.node(child).parent == n.id);
                        REQUIRE(t.parent_slot(child) == slot);
                    }
                }
            }
        }
        REQUIRE(nodes == 2 * d - 1);
        REQUIRE(leaves == d);
    }
}

TEST_CASE("explicit construction validates its input") {
    // d=5 with a leaf two layers above the deepest one
    std::vector<std::vector<TreeNode>> bad(4);
    bad[0].push_back({{0, 0}, NodeKind::Root, {{1, 0}, {1, 1}}, {}, -1});
    bad[1].push_back({{1, 0}, NodeKind::Leaf, {}, {}, 0});
    bad[1].push_back({{1, 1}, NodeKind::Transfer, {{2, 0}, {2, 1}}, {}, -1});
    bad[2].push_back({{2, 0}, NodeKind::Transfer, {{3, 0}, {3, 1}}, {}, -1});
    bad[2].push_back({{2, 1}, NodeKind::Transfer, {{3, 2}, {3, 3}}, {}, -1});
    bad[3].push_back({{3, 0}, NodeKind::Leaf, {}, {}, 1});
    bad[3].push_back({{3, 1}, NodeKind::Leaf, {}, {}, 2});
    bad[3].push_back({{3, 2}, NodeKind::Leaf, {}, {}, 3});
    bad[3].push_back({{3, 3}, NodeKind::Leaf, {}, {}, 4});
    REQUIRE_THROWS_AS(DimensionTree::from_layers(bad), std::invalid_argument);

    // reordered leaves are rejected: axis permutation is the supported way
    std::vector<std::vector<TreeNode>> swapped(2);
    swapped[0].push_back({{0, 0}, NodeKind::Root, {{1, 0}, {1, 1}}, {}, -1});
    swapped[1].push_back({{1, 0}, NodeKind::Leaf, {}, {}, 1});
    swapped[1].push_back({{1, 1}, NodeKind::Leaf, {}, {}, 0});
    REQUIRE_THROWS_AS(DimensionTree::from_layers(swapped), std::invalid_argument);

    // a non-default split over in-order dimensions is a valid custom tree
    std::vector<std::vector<TreeNode>> custom(3);
    custom[0].push_back({{0, 0}, NodeKind::Root, {{1, 0}, {1, 1}}, {}, -1});
    custom[1].push_back({{1, 0}, NodeKind::Leaf, {}, {}, 0});
    custom[1].push_back({{1, 1}, NodeKind::Transfer, {{2, 0}, {2, 1}}, {}, -1});
    custom[2].push_back({{2, 0}, NodeKind::Leaf, {}, {}, 1});
    custom[2].push_back({{2, 1}, NodeKind::Leaf, {}, {}, 2});
    DimensionTree t = DimensionTree::from_layers(custom);
    REQUIRE(t.dims() == 3);
    REQUIRE(t.node({1, 0}).leaf_dim == 0);
    // mirror image of the canonical left-biased d=3 grouping
    REQUIRE(DimensionTree::balanced(3).node({1, 1}).kind == NodeKind::Leaf);
}

TEST_CASE("index sets follow the rank and extent bookkeeping") {
    DimensionTree t = DimensionTree::balanced(4);
    Shape dims = {4, 4, 4, 4};
    RankMap ranks;
    for (Index l = 1; l <= t.depth(); ++l) {
        for (const TreeNode& n : t.layer(l)) ranks[n.id] = 1;
    }

    IndexSet sets = IndexSet::build(t, dims, ranks, 10);
    REQUIRE(sets.layer_set(1) == Shape{1, 1, 10});
    REQUIRE(sets.node_set({0, 0}) == Shape{1, 1, 10});
    REQUIRE(sets.node_set({2, 0}) == Shape{4, 1});
    REQUIRE(sets.layer_set(2) == Shape{4, 4, 4, 4, 10});
}

TEST_CASE("leaf node extent list pairs its dimension with its rank") {
    DimensionTree t = DimensionTree::balanced(2);
    Shape dims = {7, 5};
    RankMap ranks = {{{1, 0}, 3}, {{1, 1}, 2}};
    IndexSet sets = IndexSet::build(t, dims, ranks, 1);
    REQUIRE(sets.node_set({1, 0}) == Shape{7, 3});
    REQUIRE(sets.node_set({1, 1}) == Shape{5, 2});
}

TEST_CASE("rank growth propagates into the parent's extent list") {
    DimensionTree t = DimensionTree::balanced(4);
    Shape dims = {3, 4, 5, 6};
    RankMap ranks;
    for (Index l = 1; l <= t.depth(); ++l) {
        for (const TreeNode& n : t.layer(l)) ranks[n.id] = 2;
    }
    IndexSet sets = IndexSet::build(t, dims, ranks, 5);
    const Shape before = sets.node_set({1, 0});

    ranks[{2, 0}] += 2;
    sets.update_node(t, {2, 0}, dims, ranks, 5);
    sets.update_node(t, {1, 0}, dims, ranks, 5);
    const Shape after = sets.node_set({1, 0});
    REQUIRE(after[0] == before[0] + 2);
    REQUIRE(after[1] == before[1]);
    REQUIRE(after[2] == before[2]);

    // recomputing from scratch gives the same answer
    REQUIRE(IndexSet::build(t, dims, ranks, 5).node_set({1, 0}) == after);

    sets.update_layer(t, 1, dims, ranks, 5);
    REQUIRE(sets.layer_set(1) == Shape{4 * 2, 2 * 2, 5});
}

TEST_CASE("index sets reject unknown nodes and missing ranks") {
    DimensionTree t = DimensionTree::balanced(2);
    RankMap ranks = {{{1, 0}, 1}};  // missing (1,1)
    REQUIRE_THROWS_AS(IndexSet::build(t, {2, 2}, ranks, 1), std::out_of_range);

    ranks[{1, 1}] = 1;
    IndexSet sets = IndexSet::build(t, {2, 2}, ranks, 1);
    REQUIRE_THROWS_AS(sets.node_set({5, 0}), std::out_of_range);
}
