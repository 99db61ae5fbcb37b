#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "htrise/tensor.hpp"

namespace htrise {

/// Result of an error-truncated SVD: the minimal orthonormal left basis whose
/// discarded tail satisfies a Frobenius bound.
struct TruncatedBasis {
    Matrix u;                 ///< orthonormal columns, rows x rank
    Index rank = 0;
    double discarded_norm = 0.0;  ///< Frobenius norm of the dropped part
    Vector singular_values;       ///< retained, descending
};

namespace detail {

/// Thin SVD returning U and singular values. Tall inputs go through a
/// Householder QR first so the expensive factorization runs on the small
/// square factor.
inline void thin_svd(const Matrix& m, Matrix& u, Vector& sigma) {
    const Index rows = m.rows();
    const Index cols = m.cols();
    if (rows > 2 * cols) {
        Eigen::HouseholderQR<Matrix> qr(m);
        Matrix r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
        Eigen::BDCSVD<Matrix> svd(r, Eigen::ComputeThinU);
        Matrix q = Matrix::Identity(rows, cols);
        q.applyOnTheLeft(qr.householderQ());
        u = q * svd.matrixU();
        sigma = svd.singularValues();
    } else {
        Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU);
        u = svd.matrixU();
        sigma = svd.singularValues();
    }
}

}  // namespace detail

/// Error-truncated SVD with an absolute Frobenius bound on the residual:
/// keeps the smallest rank r with sqrt(sum_{i>r} sigma_i^2) <= eps_abs,
/// floored at min_rank. With min_rank >= 1, a zero input yields canonical
/// basis columns.
inline TruncatedBasis truncated_svd(const Matrix& m, double eps_abs,
                                    Index min_rank = 1) {
    if (m.size() == 0) {
        throw std::invalid_argument("truncated_svd: empty matrix");
    }
    if (!m.allFinite()) {
        throw std::invalid_argument("truncated_svd: non-finite entries");
    }
    if (eps_abs < 0) {
        throw std::invalid_argument("truncated_svd: negative tolerance");
    }

    TruncatedBasis b;
    if (m.norm() == 0.0) {
        b.rank = std::min(std::max<Index>(min_rank, 0), m.rows());
        b.u = Matrix::Identity(m.rows(), b.rank);
        b.singular_values = Vector::Zero(b.rank);
        b.discarded_norm = 0.0;
        return b;
    }

    Matrix u;
    Vector sigma;
    detail::thin_svd(m, u, sigma);

    const Index k = sigma.size();
    // tail[r] = sum of squares of sigma_{r..k-1}
    std::vector<double> tail(static_cast<std::size_t>(k) + 1, 0.0);
    for (Index i = k - 1; i >= 0; --i) {
        tail[static_cast<std::size_t>(i)] =
            tail[static_cast<std::size_t>(i) + 1] + sigma[i] * sigma[i];
    }
    Index rank = k;
    for (Index r = 0; r <= k; ++r) {
        if (std::sqrt(tail[static_cast<std::size_t>(r)]) <= eps_abs) {
            rank = r;
            break;
        }
    }
    rank = std::max(rank, min_rank);
    rank = std::min(rank, k);

    b.rank = rank;
    b.u = u.leftCols(rank);
    b.singular_values = sigma.head(rank);
    b.discarded_norm = std::sqrt(tail[static_cast<std::size_t>(rank)]);
    return b;
}

/// Plain (non-sequential) HOSVD over the listed modes: each basis comes from
/// an independent truncated SVD of the unfolding of the same tensor `c`.
/// The bases are returned in the order the modes were given.
inline std::vector<TruncatedBasis> hosvd_layer(const DenseTensor& c,
                                               const std::vector<Index>& modes,
                                               double eps_nw,
                                               Index min_rank = 1) {
    std::vector<bool> seen(static_cast<std::size_t>(c.order()), false);
    for (Index m : modes) {
        detail::check_mode(c, m, "hosvd_layer");
        if (seen[static_cast<std::size_t>(m)]) {
            throw std::invalid_argument("hosvd_layer: duplicate mode");
        }
        seen[static_cast<std::size_t>(m)] = true;
    }
    std::vector<TruncatedBasis> bases;
    bases.reserve(modes.size());
    for (Index m : modes) {
        bases.push_back(truncated_svd(unfold(c, m), eps_nw, min_rank));
    }
    return bases;
}

}  // namespace htrise
