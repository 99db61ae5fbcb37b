#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>

#include "htrise/bht.hpp"

namespace htrise {

struct UpdateOptions {
    std::optional<double> epsilon_rel;  ///< default: the representation's own
    bool adaptive_budget = false;
};

/// What one incremental update did.
struct UpdateReport {
    bool skipped = false;   ///< projection was already good enough
    double proj_error = 0.0;
    double eps_des = 0.0;
    std::map<NodeId, Index> added_ranks;
    RankMap new_ranks;
    double seconds = 0.0;
};

/// Residual of the unfolded working tensor against an orthonormal basis:
/// R = C - U (U^T C). The projector is never formed.
inline Matrix compute_residual(const Matrix& basis, const Matrix& c_unfolded) {
    if (basis.rows() != c_unfolded.rows()) {
        throw std::invalid_argument(
            "compute_residual: basis has " + std::to_string(basis.rows()) +
            " rows, unfolding has " + std::to_string(c_unfolded.rows()));
    }
    return c_unfolded - basis * (basis.transpose() * c_unfolded);
}

/// Node-addressed variant: the basis is the node's core (transfer cores under
/// their orthonormal reshape).
inline Matrix compute_residual(const HTRepresentation& h, NodeId id,
                               const Matrix& c_unfolded) {
    if (h.tree.node(id).kind == NodeKind::Root) {
        throw std::invalid_argument("compute_residual: root has no basis");
    }
    return compute_residual(h.basis_matrix(id), c_unfolded);
}

/// Append new orthonormal directions to a leaf or transfer core. The new
/// columns must already be orthogonal to the existing basis; a breach beyond
/// `orth_tol` (relative) is an error. Zero columns is a no-op.
inline DenseTensor expand_core(NodeKind kind, const DenseTensor& core,
                               const Matrix& u_new, double orth_tol = 1e-8) {
    if (u_new.cols() == 0) return core;
    if (kind == NodeKind::Root) {
        throw std::invalid_argument("expand_core: root is not a basis core");
    }
    const Shape& s = core.shape();
    const Index alpha = kind == NodeKind::Leaf ? s[0] : s[0] * s[1];
    const Index r_old = kind == NodeKind::Leaf ? s[1] : s[2];
    if (u_new.rows() != alpha) {
        throw std::invalid_argument("expand_core: new basis has " +
                                    std::to_string(u_new.rows()) +
                                    " rows, expected " + std::to_string(alpha));
    }
    Matrix u_old = Eigen::Map<const Matrix>(core.data(), alpha, r_old);
    const double defect = (u_old.transpose() * u_new).norm();
    if (defect > orth_tol * std::max(1.0, u_new.norm())) {
        throw std::invalid_argument(
            "expand_core: new directions not orthogonal to existing basis "
            "(defect " + std::to_string(defect) + ")");
    }
    Matrix joined(alpha, r_old + u_new.cols());
    joined << u_old, u_new;
    if (kind == NodeKind::Leaf) return DenseTensor::from_matrix(joined);
    return reshape(DenseTensor::from_matrix(joined),
                   {s[0], s[1], r_old + u_new.cols()});
}

/// Grow the successor-`slot` axis (0 or 1) of a 3-way core by r_extra zero
/// slices; the core's norm is unchanged.
inline DenseTensor pad_with_zeros(const DenseTensor& core, Index slot,
                                  Index r_extra) {
    if (core.order() != 3) {
        throw std::invalid_argument("pad_with_zeros: core must be 3-way");
    }
    if (slot != 0 && slot != 1) {
        throw std::invalid_argument("pad_with_zeros: successor slot must be 0 or 1");
    }
    return pad_zeros(core, slot, r_extra);
}

/// One incremental update: project the incoming batch onto the existing
/// cores; if the projection error exceeds eps_rel * |y| expand the cores
/// layer by layer with the orthogonal directions the batch adds, then append
/// the batch's latent slices to the root. Earlier slices reconstruct
/// unchanged; every streamed batch keeps its per-batch error bound.
inline std::pair<HTRepresentation, UpdateReport> ht_rise_update(
    const HTRepresentation& h, const DenseTensor& y,
    const UpdateOptions& opts = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::check_batch_input(y, h.tree, &h.dims, "ht_rise_update");

    const DimensionTree& tree = h.tree;
    const Index d = tree.dims();
    const Index p = tree.depth();
    const Index batch = y.extent(d);
    const double eps_rel =
        effective_eps_rel(opts.epsilon_rel.value_or(h.epsilon_rel));
    const double norm_y = frobenius_norm(y);

    UpdateReport report;
    report.eps_des = eps_rel * norm_y;
    for (const auto& [id, r] : h.ranks()) report.added_ranks[id] = 0;

    auto finish = [&](HTRepresentation&& rep) {
        report.new_ranks = rep.ranks();
        report.seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
        return std::make_pair(std::move(rep), report);
    };

    auto [latent, proj_error] = encode(h, y);
    report.proj_error = proj_error;

    if (proj_error <= report.eps_des) {
        report.skipped = true;
        HTRepresentation out = h;
        out.core({0, 0}) = concat(out.root(), latent.slices, 2);
        out.accumulated += batch;
        return finish(std::move(out));
    }

    HTRepresentation out = h;
    RankMap ranks = h.ranks();
    IndexSet sets = IndexSet::build(tree, h.dims, ranks, batch);
    double eps_nw = report.eps_des / std::sqrt(static_cast<double>(2 * d - 2));
    const double norm_y_sq = norm_y * norm_y;
    DenseTensor c = y;

    auto expand_node = [&](const TreeNode& n, const Matrix& c_unfolded) {
        Matrix residual = compute_residual(out.basis_matrix(n.id), c_unfolded);
        TruncatedBasis tb = truncated_svd(residual, eps_nw, /*min_rank=*/0);
        report.added_ranks[n.id] = tb.rank;
        if (tb.rank == 0) return;
        out.core(n.id) = expand_core(n.kind, out.core(n.id), tb.u);
        ranks[n.id] += tb.rank;
        sets.update_node(tree, n.id, h.dims, ranks, batch);
        out.core(n.parent) =
            pad_with_zeros(out.core(n.parent), tree.parent_slot(n.id), tb.rank);
        sets.update_node(tree, n.parent, h.dims, ranks, batch);
    };

    // deepest layer: residuals run over unfoldings of y itself
    for (const TreeNode& n : tree.layer(p)) {
        expand_node(n, unfold(c, n.leaf_dim));
    }
    for (const TreeNode& n : tree.layer(p)) {
        c = mode_multiply(c, n.leaf_dim, out.basis_matrix(n.id).transpose());
    }
    sets.update_layer(tree, p - 1, h.dims, ranks, batch);

    for (Index l = p - 1; l >= 1; --l) {
        if (opts.adaptive_budget) {
            const double cn = frobenius_norm(c);
            eps_nw = adaptive_budget(report.eps_des,
                                     std::max(0.0, norm_y_sq - cn * cn),
                                     detail::svds_below(tree, l + 1));
        }
        c = reshape(c, sets.layer_set(l));
        for (Index j = 0; j < tree.layer_size(l); ++j) {
            expand_node(tree.layer(l)[static_cast<std::size_t>(j)], unfold(c, j));
        }
        for (Index j = 0; j < tree.layer_size(l); ++j) {
            c = mode_multiply(c, j, out.basis_matrix({l, j}).transpose());
        }
        sets.update_layer(tree, l - 1, h.dims, ranks, batch);
    }

    // root was zero-padded to the new layer-1 ranks while processing layer 1
    out.core({0, 0}) = concat(out.root(), c, 2);
    out.accumulated += batch;
    return finish(std::move(out));
}

}  // namespace htrise
