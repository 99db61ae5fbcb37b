#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "htrise/dimension_tree.hpp"
#include "htrise/tensor.hpp"
#include "htrise/truncated_svd.hpp"

namespace htrise {

/// Relative tolerance 0 is accepted as "machine floor": truncate only the
/// numerically-zero tail.
inline constexpr double kMachineFloorRel = 1e-14;

inline double effective_eps_rel(double eps_rel) {
    if (eps_rel < 0 || eps_rel >= 1.0) {
        throw std::invalid_argument("relative tolerance must lie in [0, 1)");
    }
    return eps_rel > 0 ? eps_rel : kMachineFloorRel;
}

/// Batch hierarchical Tucker representation: a dimension tree plus one core
/// per node. Leaf cores are n x r matrices with orthonormal columns, transfer
/// cores are r_left x r_right x r_own (orthonormal under the (left*right) x
/// own reshape), and the root is r_{1,1} x r_{1,2} x n_acc with the batch
/// axis last. Instances are value types; updates produce new values.
struct HTRepresentation {
    DimensionTree tree;
    Shape dims;                                   ///< leaf extents n_1..n_d
    std::vector<std::vector<DenseTensor>> cores;  ///< [layer][pos]; root at [0][0]
    Index accumulated = 0;                        ///< total tensors streamed
    double epsilon_rel = 0.0;

    const DenseTensor& core(NodeId id) const {
        return cores.at(static_cast<std::size_t>(id.layer))
            .at(static_cast<std::size_t>(id.pos));
    }
    DenseTensor& core(NodeId id) {
        return cores.at(static_cast<std::size_t>(id.layer))
            .at(static_cast<std::size_t>(id.pos));
    }
    const DenseTensor& root() const { return core({0, 0}); }

    /// Rank of a non-root node (the extent shared with its parent).
    Index rank(NodeId id) const {
        const DenseTensor& c = core(id);
        switch (tree.node(id).kind) {
            case NodeKind::Leaf:
                return c.extent(1);
            case NodeKind::Transfer:
                return c.extent(2);
            case NodeKind::Root:
                break;
        }
        throw std::invalid_argument("rank: root has no own rank");
    }

    RankMap ranks() const {
        RankMap r;
        for (Index l = 1; l <= tree.depth(); ++l) {
            for (const TreeNode& n : tree.layer(l)) r[n.id] = rank(n.id);
        }
        return r;
    }

    Index max_rank() const {
        Index m = 0;
        for (const auto& [id, r] : ranks()) m = std::max(m, r);
        return m;
    }

    /// Leaf or transfer core as the orthonormal matrix it represents
    /// (transfer cores flattened to (r_left*r_right) x r_own).
    Matrix basis_matrix(NodeId id) const {
        const DenseTensor& c = core(id);
        if (tree.node(id).kind == NodeKind::Leaf) return c.as_matrix();
        const Shape& s = c.shape();
        return Eigen::Map<const Matrix>(c.data(), s[0] * s[1], s[2]);
    }

    Index stored_elements() const {
        Index total = 0;
        for (const auto& layer : cores) {
            for (const auto& c : layer) total += c.size();
        }
        return total;
    }

    IndexSet index_sets(Index batch) const {
        return IndexSet::build(tree, dims, ranks(), batch);
    }

    /// Largest orthonormality defect max|U^T U - I| over all non-root cores.
    double orthonormality_defect() const {
        double worst = 0.0;
        for (Index l = 1; l <= tree.depth(); ++l) {
            for (const TreeNode& n : tree.layer(l)) {
                const Matrix u = basis_matrix(n.id);
                const Matrix g = u.transpose() * u;
                worst = std::max(
                    worst, (g - Matrix::Identity(g.rows(), g.cols()))
                               .cwiseAbs()
                               .maxCoeff());
            }
        }
        return worst;
    }

    void validate(double tol = 1e-10) const {
        if (static_cast<Index>(dims.size()) != tree.dims()) {
            throw std::invalid_argument("HTRepresentation: dims/tree mismatch");
        }
        for (const auto& layer : cores) {
            for (const DenseTensor& c : layer) {
                if (!c.all_finite()) {
                    throw std::runtime_error(
                        "HTRepresentation: non-finite core entries");
                }
            }
        }
        const double defect = orthonormality_defect();
        if (!(defect <= tol)) {
            throw std::runtime_error(
                "HTRepresentation: orthonormality defect " +
                std::to_string(defect) + " exceeds " + std::to_string(tol));
        }
        const DenseTensor& r = root();
        if (r.order() != 3 || r.extent(2) != accumulated) {
            throw std::invalid_argument("HTRepresentation: root batch extent " +
                                        std::to_string(r.extent(2)) + " != " +
                                        std::to_string(accumulated));
        }
        IndexSet sets = index_sets(accumulated);
        for (Index l = 0; l <= tree.depth(); ++l) {
            for (const TreeNode& n : tree.layer(l)) {
                if (core(n.id).shape() != sets.node_set(n.id)) {
                    throw std::invalid_argument(
                        "HTRepresentation: core shape at " + to_string(n.id) +
                        " inconsistent with its index set");
                }
            }
        }
    }
};

/// Root-core slices encoding a batch of N tensors.
struct LatentBatch {
    DenseTensor slices;  ///< r_{1,1} x r_{1,2} x N

    Index batch_size() const { return slices.extent(2); }
};

/// Per-node outcome of one truncated SVD during a decomposition or update.
struct NodeRecord {
    NodeId id;
    Index rank = 0;               ///< rank kept (or added, for updates)
    double discarded_norm = 0.0;  ///< Frobenius norm of the truncated part
};

/// Diagnostics of one bht_l2r run, enough to audit the layerwise error
/// recursion: records each SVD and the working-tensor norm after every
/// layer's projection (index 0 holds the input norm).
struct BuildReport {
    std::vector<NodeRecord> nodes;
    std::vector<double> layer_norms;
    double eps_nw_initial = 0.0;
};

struct DecompositionOptions {
    bool adaptive_budget = false;
};

struct BhtResult {
    HTRepresentation rep;
    BuildReport report;
};

namespace detail {

inline void check_batch_input(const DenseTensor& y, const DimensionTree& tree,
                              const Shape* dims, const char* who) {
    if (y.order() != tree.dims() + 1) {
        throw std::invalid_argument(std::string(who) + ": tensor order " +
                                    std::to_string(y.order()) +
                                    " does not match tree over " +
                                    std::to_string(tree.dims()) +
                                    " dims plus batch");
    }
    if (y.order() < 3) {
        throw std::invalid_argument(std::string(who) +
                                    ": need d >= 2 plus a batch axis");
    }
    if (dims) {
        for (Index k = 0; k < tree.dims(); ++k) {
            if (y.extent(k) != (*dims)[static_cast<std::size_t>(k)]) {
                throw std::invalid_argument(
                    std::string(who) + ": shape mismatch at mode " +
                    std::to_string(k) + ": " + std::to_string(y.extent(k)) +
                    " vs " + std::to_string((*dims)[static_cast<std::size_t>(k)]));
            }
        }
    }
    if (!y.all_finite()) {
        throw std::invalid_argument(std::string(who) + ": non-finite input");
    }
}

/// Remaining-SVD count strictly below layer `l` (layers l-1 .. 1).
inline Index svds_below(const DimensionTree& tree, Index l) {
    Index n = 0;
    for (Index k = 1; k < l; ++k) n += tree.layer_size(k);
    return n;
}

}  // namespace detail

/// Appendix-style adaptive node-wise budget: after spending achieved_err_sq
/// of the squared absolute budget, spread the remainder uniformly over the
/// SVDs still to come.
inline double adaptive_budget(double eps_abs, double achieved_err_sq,
                              Index svd_remaining) {
    if (svd_remaining < 1) {
        throw std::invalid_argument("adaptive_budget: no SVDs remaining");
    }
    const double budget_sq = eps_abs * eps_abs;
    double rem_sq = budget_sq - achieved_err_sq;
    if (rem_sq < 0) {
        // tolerate round-off at the boundary, abort on a real breach
        if (achieved_err_sq > budget_sq * (1.0 + 1e-9) + 1e-300) {
            throw std::runtime_error(
                "adaptive_budget: error budget exhausted (achieved^2 = " +
                std::to_string(achieved_err_sq) + " > eps_abs^2 = " +
                std::to_string(budget_sq) + ")");
        }
        rem_sq = 0.0;
    }
    return std::sqrt(rem_sq) / std::sqrt(static_cast<double>(svd_remaining));
}

/// Error-truncated leaves-to-root decomposition of a batch of tensors.
/// The batch axis must be last; it is excluded from every SVD and survives
/// into the third axis of the root core. Guarantees
/// |y - decode(encode(y))|_F <= eps_rel * |y|_F.
inline BhtResult bht_l2r(const DenseTensor& y, const DimensionTree& tree,
                         double eps_rel, const DecompositionOptions& opts = {}) {
    detail::check_batch_input(y, tree, nullptr, "bht_l2r");
    const Index d = tree.dims();
    const Index p = tree.depth();
    const Index batch = y.extent(d);
    const double norm_y = frobenius_norm(y);
    const double eps_abs = effective_eps_rel(eps_rel) * norm_y;
    const double norm_y_sq = norm_y * norm_y;

    BuildReport report;
    report.eps_nw_initial =
        eps_abs / std::sqrt(static_cast<double>(2 * d - 2));
    report.layer_norms.push_back(norm_y);

    HTRepresentation rep;
    rep.tree = tree;
    rep.dims = Shape(y.shape().begin(), y.shape().end() - 1);
    rep.cores.resize(static_cast<std::size_t>(p) + 1);
    for (Index l = 0; l <= p; ++l) {
        rep.cores[static_cast<std::size_t>(l)].resize(
            static_cast<std::size_t>(tree.layer_size(l)));
    }
    rep.accumulated = batch;
    rep.epsilon_rel = eps_rel;

    double eps_nw = report.eps_nw_initial;
    DenseTensor c = y;

    // deepest layer: all nodes are leaves, SVDs run on unfoldings of y itself
    {
        std::vector<Index> modes;
        for (const TreeNode& n : tree.layer(p)) modes.push_back(n.leaf_dim);
        std::vector<TruncatedBasis> bases = hosvd_layer(c, modes, eps_nw);
        for (std::size_t i = 0; i < bases.size(); ++i) {
            const TreeNode& n = tree.layer(p)[i];
            rep.core(n.id) = DenseTensor::from_matrix(bases[i].u);
            report.nodes.push_back({n.id, bases[i].rank, bases[i].discarded_norm});
        }
        for (std::size_t i = 0; i < bases.size(); ++i) {
            c = mode_multiply(c, tree.layer(p)[i].leaf_dim,
                              bases[i].u.transpose());
        }
        report.layer_norms.push_back(frobenius_norm(c));
    }

    RankMap ranks = [&] {
        RankMap r;
        for (const TreeNode& n : tree.layer(p)) {
            r[n.id] = rep.core(n.id).extent(1);
        }
        return r;
    }();

    for (Index l = p - 1; l >= 1; --l) {
        if (opts.adaptive_budget) {
            const double cn = report.layer_norms.back();
            eps_nw = adaptive_budget(eps_abs, std::max(0.0, norm_y_sq - cn * cn),
                                     detail::svds_below(tree, l + 1));
        }
        // reshape by this layer's index set, batch kept last
        Shape extents;
        for (const TreeNode& n : tree.layer(l)) {
            if (n.kind == NodeKind::Leaf) {
                extents.push_back(rep.dims[static_cast<std::size_t>(n.leaf_dim)]);
            } else {
                extents.push_back(ranks[n.successors[0]] * ranks[n.successors[1]]);
            }
        }
        extents.push_back(batch);
        c = reshape(c, extents);

        std::vector<Index> modes(static_cast<std::size_t>(tree.layer_size(l)));
        for (Index j = 0; j < tree.layer_size(l); ++j) modes[static_cast<std::size_t>(j)] = j;
        std::vector<TruncatedBasis> bases = hosvd_layer(c, modes, eps_nw);

        for (Index j = 0; j < tree.layer_size(l); ++j) {
            const TreeNode& n = tree.layer(l)[static_cast<std::size_t>(j)];
            const TruncatedBasis& b = bases[static_cast<std::size_t>(j)];
            if (n.kind == NodeKind::Leaf) {
                rep.core(n.id) = DenseTensor::from_matrix(b.u);
            } else {
                rep.core(n.id) = reshape(
                    DenseTensor::from_matrix(b.u),
                    {ranks[n.successors[0]], ranks[n.successors[1]], b.rank});
            }
            ranks[n.id] = b.rank;
            report.nodes.push_back({n.id, b.rank, b.discarded_norm});
        }
        for (Index j = 0; j < tree.layer_size(l); ++j) {
            c = mode_multiply(c, j, bases[static_cast<std::size_t>(j)].u.transpose());
        }
        report.layer_norms.push_back(frobenius_norm(c));
    }

    const TreeNode& root = tree.node({0, 0});
    rep.core({0, 0}) = reshape(
        c, {ranks[root.successors[0]], ranks[root.successors[1]], batch});
    return {std::move(rep), std::move(report)};
}

namespace detail {

/// Project mode `mode` onto span(basis) and add the energy lost to loss_sq.
/// Forming the residual keeps the loss accurate near zero, where the
/// |c|^2 - |basis^T c|^2 difference is pure cancellation.
inline DenseTensor project_mode(const DenseTensor& c, Index mode,
                                const Matrix& basis, double& loss_sq) {
    Matrix m = unfold(c, mode);
    Matrix coeff = basis.transpose() * m;
    loss_sq += (m - basis * coeff).squaredNorm();
    Shape out_shape = c.shape();
    out_shape[static_cast<std::size_t>(mode)] = coeff.rows();
    return fold(coeff, out_shape, mode);
}

}  // namespace detail

/// Project a batch onto the existing cores, producing its latent root slices
/// and the projection error sqrt(|y|^2 - |latent|^2). The error is
/// accumulated step by step through the orthogonal projections, which
/// evaluates the same quantity without catastrophic cancellation.
inline std::pair<LatentBatch, double> encode(const HTRepresentation& h,
                                             const DenseTensor& y) {
    detail::check_batch_input(y, h.tree, &h.dims, "encode");
    const Index p = h.tree.depth();
    const Index batch = y.extent(h.tree.dims());

    double loss_sq = 0.0;
    DenseTensor c = y;
    for (const TreeNode& n : h.tree.layer(p)) {
        c = detail::project_mode(c, n.leaf_dim, h.basis_matrix(n.id), loss_sq);
    }
    RankMap ranks = h.ranks();
    for (Index l = p - 1; l >= 1; --l) {
        Shape extents;
        for (const TreeNode& n : h.tree.layer(l)) {
            if (n.kind == NodeKind::Leaf) {
                extents.push_back(h.dims[static_cast<std::size_t>(n.leaf_dim)]);
            } else {
                extents.push_back(ranks[n.successors[0]] * ranks[n.successors[1]]);
            }
        }
        extents.push_back(batch);
        c = reshape(c, extents);
        for (Index j = 0; j < h.tree.layer_size(l); ++j) {
            c = detail::project_mode(c, j, h.basis_matrix({l, j}), loss_sq);
        }
    }
    return {LatentBatch{std::move(c)}, std::sqrt(loss_sq)};
}

/// Root-to-leaves reconstruction of a latent batch. The latent ranks must
/// match the current layer-1 ranks; zero-pad latents taken from an older
/// representation first (pad_latent).
inline DenseTensor decode(const HTRepresentation& h, const LatentBatch& latent) {
    const DenseTensor& root = h.root();
    const DenseTensor& l0 = latent.slices;
    if (l0.order() != 3 || l0.extent(0) != root.extent(0) ||
        l0.extent(1) != root.extent(1)) {
        throw std::invalid_argument(
            "decode: latent ranks " + shape_to_string(l0.shape()) +
            " do not match root " + shape_to_string(root.shape()));
    }

    // track which node each working mode belongs to; -1 marks finished modes
    struct ModeTag {
        NodeId node;
        bool open = false;   // still awaiting expansion
        Index dim = -1;      // final tensor dimension once closed
    };
    const TreeNode& rootn = h.tree.node({0, 0});
    std::vector<ModeTag> tags = {{rootn.successors[0], true, -1},
                                 {rootn.successors[1], true, -1}};

    DenseTensor c = l0;
    for (Index l = 1; l <= h.tree.depth(); ++l) {
        for (Index pos = 0; pos < static_cast<Index>(tags.size()); ++pos) {
            ModeTag& tag = tags[static_cast<std::size_t>(pos)];
            if (!tag.open || tag.node.layer != l) continue;
            const TreeNode& n = h.tree.node(tag.node);
            if (n.kind == NodeKind::Leaf) {
                c = mode_multiply(c, pos, h.basis_matrix(n.id));
                tag.open = false;
                tag.dim = n.leaf_dim;
            } else {
                c = multi_contract(c, {{h.core(n.id), pos, 2}});
                tag = {n.successors[0], true, -1};
                tags.insert(tags.begin() + pos + 1, {n.successors[1], true, -1});
                ++pos;  // both inserted modes belong to layer l+1
            }
        }
    }

    // modes now carry the original dimensions; restore canonical order
    std::vector<Index> perm(tags.size() + 1);
    for (std::size_t k = 0; k < tags.size(); ++k) {
        perm[static_cast<std::size_t>(tags[k].dim)] = static_cast<Index>(k);
    }
    perm.back() = static_cast<Index>(tags.size());
    bool sorted = true;
    for (std::size_t k = 0; k + 1 < perm.size(); ++k) {
        if (perm[k] > perm[k + 1]) sorted = false;
    }
    return sorted ? c : permute_axes(c, perm);
}

/// Pad a latent taken at older (smaller) ranks with zeros so it can be
/// decoded against the current cores.
inline LatentBatch pad_latent(const LatentBatch& latent, Index r11, Index r12) {
    DenseTensor s = latent.slices;
    if (r11 < s.extent(0) || r12 < s.extent(1)) {
        throw std::invalid_argument("pad_latent: ranks may only grow");
    }
    s = pad_zeros(s, 0, r11 - s.extent(0));
    s = pad_zeros(s, 1, r12 - s.extent(1));
    return {std::move(s)};
}

/// Reconstruction of the m-th tensor ever streamed (1-based), an n_1 x ... x
/// n_d tensor.
inline DenseTensor reconstruct_slice(const HTRepresentation& h, Index m) {
    if (m < 1 || m > h.accumulated) {
        throw std::out_of_range("reconstruct_slice: index " + std::to_string(m) +
                                " outside 1.." + std::to_string(h.accumulated));
    }
    LatentBatch one{slice(h.root(), 2, m - 1, 1)};
    return reshape(decode(h, one), h.dims);
}

}  // namespace htrise
