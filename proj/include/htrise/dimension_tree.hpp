#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "htrise/tensor.hpp"

namespace htrise {

enum class NodeKind { Root, Transfer, Leaf };

/// Coordinates of a node: (layer, position within layer), both 0-based.
struct NodeId {
    Index layer = 0;
    Index pos = 0;

    auto operator<=>(const NodeId&) const = default;
};

inline std::string to_string(const NodeId& id) {
    return "(" + std::to_string(id.layer) + "," + std::to_string(id.pos) + ")";
}

struct TreeNode {
    NodeId id;
    NodeKind kind = NodeKind::Leaf;
    std::vector<NodeId> successors;  // empty or exactly two, ordered by position
    NodeId parent;                   // meaningful unless root
    Index leaf_dim = -1;             // 0-based tensor dimension, leaves only
};

/// Balanced binary dimension tree over d tensor dimensions: 2d-1 nodes, the
/// root on layer 0, leaves only on the last two layers. The batch axis is
/// never part of the tree.
class DimensionTree {
public:
    /// Canonical balanced tree: a node covering the dimension span [a..b]
    /// splits into left [a .. a+ceil(len/2)-1] and the right remainder,
    /// stopping at singletons.
    static DimensionTree balanced(Index d) {
        if (d < 2) {
            throw std::invalid_argument("DimensionTree: need d >= 2, got " +
                                        std::to_string(d));
        }
        // spans[layer] = list of [first, last] dimension spans, 0-based
        std::vector<std::vector<std::pair<Index, Index>>> spans;
        spans.push_back({{0, d - 1}});
        while (true) {
            bool grew = false;
            std::vector<std::pair<Index, Index>> next;
            for (const auto& [a, b] : spans.back()) {
                if (a == b) continue;
                const Index len = b - a + 1;
                const Index left_len = (len + 1) / 2;
                next.emplace_back(a, a + left_len - 1);
                next.emplace_back(a + left_len, b);
                grew = true;
            }
            if (!grew) break;
            spans.push_back(std::move(next));
        }

        DimensionTree tree;
        tree.d_ = d;
        tree.depth_ = static_cast<Index>(spans.size()) - 1;
        tree.layers_.resize(spans.size());
        for (Index l = 0; l <= tree.depth_; ++l) {
            auto lu = static_cast<std::size_t>(l);
            // children of layer-l internal nodes appear in layer l+1 two at a
            // time, in order
            Index next_child = 0;
            for (Index i = 0; i < static_cast<Index>(spans[lu].size()); ++i) {
                const auto [a, b] = spans[lu][static_cast<std::size_t>(i)];
                TreeNode node;
                node.id = {l, i};
                if (a == b) {
                    node.kind = NodeKind::Leaf;
                    node.leaf_dim = a;
                } else {
                    node.kind = l == 0 ? NodeKind::Root : NodeKind::Transfer;
                    node.successors = {{l + 1, next_child}, {l + 1, next_child + 1}};
                    next_child += 2;
                }
                tree.layers_[lu].push_back(std::move(node));
            }
        }
        tree.link_parents();
        tree.validate();
        return tree;
    }

    /// Explicit construction from per-layer nodes (successor links set,
    /// parents inferred). Validates the same structural invariants the
    /// algorithms rely on.
    static DimensionTree from_layers(std::vector<std::vector<TreeNode>> layers) {
        DimensionTree tree;
        tree.layers_ = std::move(layers);
        tree.depth_ = static_cast<Index>(tree.layers_.size()) - 1;
        Index leaves = 0;
        for (const auto& layer : tree.layers_) {
            for (const auto& node : layer) {
                if (node.kind == NodeKind::Leaf) ++leaves;
            }
        }
        tree.d_ = leaves;
        tree.link_parents();
        tree.validate();
        return tree;
    }

    Index dims() const { return d_; }
    Index depth() const { return depth_; }
    Index node_count() const { return 2 * d_ - 1; }
    Index layer_size(Index layer) const {
        return static_cast<Index>(layers_.at(static_cast<std::size_t>(layer)).size());
    }

    const TreeNode& node(NodeId id) const {
        const auto& layer = layers_.at(static_cast<std::size_t>(id.layer));
        if (id.pos < 0 || id.pos >= static_cast<Index>(layer.size())) {
            throw std::out_of_range("DimensionTree: unknown node " + to_string(id));
        }
        return layer[static_cast<std::size_t>(id.pos)];
    }

    bool is_leaf(NodeId id) const { return node(id).kind == NodeKind::Leaf; }

    /// Which successor slot (0 or 1) `id` occupies under its parent.
    Index parent_slot(NodeId id) const {
        const TreeNode& n = node(id);
        if (n.kind == NodeKind::Root) {
            throw std::invalid_argument("parent_slot: root has no parent");
        }
        const TreeNode& p = node(n.parent);
        return p.successors[0] == id ? 0 : 1;
    }

    /// All nodes of a layer, in position order.
    const std::vector<TreeNode>& layer(Index l) const {
        return layers_.at(static_cast<std::size_t>(l));
    }

    /// Leaf nodes on the deepest layer, position order.
    std::vector<NodeId> last_layer_leaves() const {
        std::vector<NodeId> out;
        for (const auto& n : layers_.back()) out.push_back(n.id);
        return out;
    }

    bool operator==(const DimensionTree& other) const;

private:
    void link_parents() {
        for (auto& layer : layers_) {
            for (auto& node : layer) {
                for (NodeId s : node.successors) {
                    auto& child =
                        layers_.at(static_cast<std::size_t>(s.layer))
                            .at(static_cast<std::size_t>(s.pos));
                    child.parent = node.id;
                }
            }
        }
    }

    void validate() const {
        if (layers_.empty() || layers_[0].size() != 1) {
            throw std::invalid_argument("DimensionTree: need a single root");
        }
        const Index p_expected =
            static_cast<Index>(std::ceil(std::log2(static_cast<double>(d_))));
        if (depth_ != p_expected) {
            throw std::invalid_argument("DimensionTree: depth " +
                                        std::to_string(depth_) + " != ceil(log2(" +
                                        std::to_string(d_) + "))");
        }
        Index count = 0;
        std::vector<bool> dim_seen(static_cast<std::size_t>(d_), false);
        for (const auto& layer : layers_) {
            for (const auto& node : layer) {
                ++count;
                const bool internal = node.kind != NodeKind::Leaf;
                if (internal && node.successors.size() != 2) {
                    throw std::invalid_argument("DimensionTree: internal node " +
                                                to_string(node.id) +
                                                " must have 2 successors");
                }
                if (!internal && !node.successors.empty()) {
                    throw std::invalid_argument("DimensionTree: leaf " +
                                                to_string(node.id) +
                                                " has successors");
                }
                if (internal && (node.successors[0].pos + 1 != node.successors[1].pos ||
                                 node.successors[0].layer != node.id.layer + 1 ||
                                 node.successors[1].layer != node.id.layer + 1)) {
                    throw std::invalid_argument(
                        "DimensionTree: successors of " + to_string(node.id) +
                        " must be adjacent, ordered, and one layer down");
                }
                if (node.kind == NodeKind::Leaf) {
                    if (node.id.layer < depth_ - 1) {
                        throw std::invalid_argument(
                            "DimensionTree: leaf " + to_string(node.id) +
                            " above the last two layers");
                    }
                    if (node.leaf_dim < 0 || node.leaf_dim >= d_ ||
                        dim_seen[static_cast<std::size_t>(node.leaf_dim)]) {
                        throw std::invalid_argument(
                            "DimensionTree: bad leaf dimension at " +
                            to_string(node.id));
                    }
                    dim_seen[static_cast<std::size_t>(node.leaf_dim)] = true;
                }
            }
        }
        if (count != 2 * d_ - 1) {
            throw std::invalid_argument("DimensionTree: " + std::to_string(count) +
                                        " nodes, expected " +
                                        std::to_string(2 * d_ - 1));
        }
        // every non-root node is claimed exactly once as a successor
        std::map<NodeId, int> claimed;
        for (const auto& layer : layers_) {
            for (const auto& node : layer) {
                for (NodeId s : node.successors) ++claimed[s];
            }
        }
        for (const auto& layer : layers_) {
            for (const auto& node : layer) {
                const int expect = node.id.layer == 0 ? 0 : 1;
                if (claimed[node.id] != expect) {
                    throw std::invalid_argument("DimensionTree: node " +
                                                to_string(node.id) +
                                                " has bad parent linkage");
                }
            }
        }
        // the layer algebra identifies nodes with tensor modes by position,
        // which requires every node to cover a contiguous in-order dimension
        // span; reordered dimensions are handled by permuting axes up front
        if (dim_span(node({0, 0})) != std::pair<Index, Index>{0, d_ - 1}) {
            throw std::invalid_argument(
                "DimensionTree: dimensions must appear in order; permute the "
                "tensor axes instead of reordering leaves");
        }
    }

    std::pair<Index, Index> dim_span(const TreeNode& n) const {
        if (n.kind == NodeKind::Leaf) return {n.leaf_dim, n.leaf_dim};
        auto left = dim_span(node(n.successors[0]));
        auto right = dim_span(node(n.successors[1]));
        if (left.second + 1 != right.first) {
            throw std::invalid_argument(
                "DimensionTree: successors of " + to_string(n.id) +
                " do not cover adjacent dimension spans");
        }
        return {left.first, right.second};
    }

    Index d_ = 0;
    Index depth_ = 0;
    std::vector<std::vector<TreeNode>> layers_;
};

inline bool DimensionTree::operator==(const DimensionTree& other) const {
    if (d_ != other.d_ || depth_ != other.depth_) return false;
    for (Index l = 0; l <= depth_; ++l) {
        if (layer_size(l) != other.layer_size(l)) return false;
        for (Index i = 0; i < layer_size(l); ++i) {
            const TreeNode& a = node({l, i});
            const TreeNode& b = other.node({l, i});
            if (a.kind != b.kind || a.successors != b.successors ||
                a.leaf_dim != b.leaf_dim) {
                return false;
            }
        }
    }
    return true;
}

/// Per-node ranks r_{l,i}; the root has no own rank (its third axis is the
/// batch count).
using RankMap = std::map<NodeId, Index>;

/// The extent bookkeeping both decompositions walk through: per-layer extent
/// lists (batch appended last) drive the inter-layer reshapes, per-node
/// extent lists are the core shapes.
class IndexSet {
public:
    static IndexSet build(const DimensionTree& tree, const Shape& dims,
                          const RankMap& ranks, Index batch) {
        IndexSet s;
        s.layer_sets_.resize(static_cast<std::size_t>(tree.depth()) + 1);
        for (Index l = 0; l <= tree.depth(); ++l) {
            s.update_layer(tree, l, dims, ranks, batch);
            for (const TreeNode& n : tree.layer(l)) {
                s.update_node(tree, n.id, dims, ranks, batch);
            }
        }
        return s;
    }

    /// Recompute one layer's extent list (batch appended).
    void update_layer(const DimensionTree& tree, Index layer, const Shape& dims,
                      const RankMap& ranks, Index batch) {
        Shape extents;
        for (const TreeNode& n : tree.layer(layer)) {
            if (n.kind == NodeKind::Leaf) {
                extents.push_back(dims.at(static_cast<std::size_t>(n.leaf_dim)));
            } else {
                Index prod = 1;
                for (NodeId s : n.successors) prod *= rank_of(ranks, s);
                extents.push_back(prod);
            }
        }
        extents.push_back(batch);
        layer_sets_.at(static_cast<std::size_t>(layer)) = std::move(extents);
    }

    /// Recompute one node's extent list (the shape of its core).
    void update_node(const DimensionTree& tree, NodeId id, const Shape& dims,
                     const RankMap& ranks, Index batch) {
        const TreeNode& n = tree.node(id);
        Shape extents;
        switch (n.kind) {
            case NodeKind::Leaf:
                extents = {dims.at(static_cast<std::size_t>(n.leaf_dim)),
                           rank_of(ranks, id)};
                break;
            case NodeKind::Transfer:
                extents = {rank_of(ranks, n.successors[0]),
                           rank_of(ranks, n.successors[1]), rank_of(ranks, id)};
                break;
            case NodeKind::Root:
                extents = {rank_of(ranks, n.successors[0]),
                           rank_of(ranks, n.successors[1]), batch};
                break;
        }
        node_sets_[id] = std::move(extents);
    }

    /// Layer extent list including the trailing batch extent.
    const Shape& layer_set(Index layer) const {
        return layer_sets_.at(static_cast<std::size_t>(layer));
    }

    const Shape& node_set(NodeId id) const {
        auto it = node_sets_.find(id);
        if (it == node_sets_.end()) {
            throw std::out_of_range("IndexSet: unknown node " + to_string(id));
        }
        return it->second;
    }

    bool operator==(const IndexSet& other) const {
        return layer_sets_ == other.layer_sets_ && node_sets_ == other.node_sets_;
    }

private:
    static Index rank_of(const RankMap& ranks, NodeId id) {
        auto it = ranks.find(id);
        if (it == ranks.end()) {
            throw std::out_of_range("IndexSet: no rank for node " + to_string(id));
        }
        return it->second;
    }

    std::vector<Shape> layer_sets_;
    std::map<NodeId, Shape> node_sets_;
};

}  // namespace htrise
