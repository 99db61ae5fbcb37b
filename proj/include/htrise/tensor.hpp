#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace htrise {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Extent list of a dense tensor, one entry per mode.
using Shape = std::vector<Index>;

inline Index shape_product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1},
                           std::multiplies<Index>());
}

inline std::string shape_to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Dense d-way tensor of doubles.
///
/// Storage is one contiguous buffer in canonical order: the first index
/// varies fastest (the d-way generalization of column-major). Values are
/// immutable in spirit -- every operation below returns a new tensor -- so
/// instances are safe to share across threads.
class DenseTensor {
public:
    DenseTensor() = default;

    /// Zero tensor of the given shape.
    explicit DenseTensor(Shape shape)
            : shape_(std::move(shape)),
              data_(Vector::Zero(checked_size(shape_))) {}

    DenseTensor(Shape shape, Vector data)
            : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_size(shape_)) {
            throw std::invalid_argument(
                "DenseTensor: buffer has " + std::to_string(data_.size()) +
                " entries, shape " + shape_to_string(shape_) + " needs " +
                std::to_string(shape_product(shape_)));
        }
    }

    /// Wrap a matrix as a 2-way tensor (column-major matches canonical order).
    static DenseTensor from_matrix(const Matrix& m) {
        return DenseTensor({m.rows(), m.cols()},
                           Eigen::Map<const Vector>(m.data(), m.size()));
    }

    /// View a 2-way tensor as a matrix.
    Matrix as_matrix() const {
        if (order() != 2) {
            throw std::invalid_argument("as_matrix: tensor has order " +
                                        std::to_string(order()));
        }
        return Eigen::Map<const Matrix>(data_.data(), shape_[0], shape_[1]);
    }

    const Shape& shape() const { return shape_; }
    Index extent(Index mode) const { return shape_.at(static_cast<std::size_t>(mode)); }
    Index order() const { return static_cast<Index>(shape_.size()); }
    Index size() const { return data_.size(); }

    const Vector& values() const { return data_; }
    const double* data() const { return data_.data(); }
    double* data() { return data_.data(); }

    /// Element access by multi-index (canonical order, 0-based).
    double operator()(const Shape& idx) const { return data_[offset(idx)]; }
    double& operator()(const Shape& idx) { return data_[offset(idx)]; }

    bool all_finite() const { return data_.allFinite(); }

    bool operator==(const DenseTensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    static Index checked_size(const Shape& shape) {
        if (shape.empty()) {
            throw std::invalid_argument("DenseTensor: empty shape");
        }
        for (Index n : shape) {
            if (n < 1) {
                throw std::invalid_argument("DenseTensor: extent " +
                                            std::to_string(n) + " < 1");
            }
        }
        return shape_product(shape);
    }

    Index offset(const Shape& idx) const {
        if (idx.size() != shape_.size()) {
            throw std::invalid_argument("DenseTensor: index order mismatch");
        }
        Index off = 0;
        Index stride = 1;
        for (std::size_t k = 0; k < shape_.size(); ++k) {
            if (idx[k] < 0 || idx[k] >= shape_[k]) {
                throw std::out_of_range("DenseTensor: index out of range");
            }
            off += idx[k] * stride;
            stride *= shape_[k];
        }
        return off;
    }

    Shape shape_;
    Vector data_;
};

namespace detail {

inline void check_mode(const DenseTensor& t, Index mode, const char* who) {
    if (mode < 0 || mode >= t.order()) {
        throw std::invalid_argument(std::string(who) + ": mode " +
                                    std::to_string(mode) +
                                    " out of range for order " +
                                    std::to_string(t.order()));
    }
}

inline Shape erase_mode(const Shape& shape, Index mode) {
    Shape s = shape;
    s.erase(s.begin() + mode);
    return s;
}

}  // namespace detail

/// Mode-`mode` matricization: rows run over the chosen extent, columns
/// enumerate the remaining indices in canonical order with that mode removed.
inline Matrix unfold(const DenseTensor& t, Index mode) {
    detail::check_mode(t, mode, "unfold");
    const Index rows = t.extent(mode);
    const Index cols = t.size() / rows;
    if (mode == 0) {
        // canonical order already has the first index fastest
        return Eigen::Map<const Matrix>(t.data(), rows, cols);
    }
    Matrix m(rows, cols);

    Index inner = 1;
    for (Index k = 0; k < mode; ++k) inner *= t.extent(k);
    const Index outer = t.size() / (inner * rows);

    const double* src = t.data();
    for (Index o = 0; o < outer; ++o) {
        for (Index r = 0; r < rows; ++r) {
            m.block(r, inner * o, 1, inner) = Eigen::Map<const Eigen::RowVectorXd>(
                src + inner * (r + rows * o), inner);
        }
    }
    return m;
}

/// Exact inverse of unfold: rebuilds the tensor of `shape` from its
/// mode-`mode` matricization.
inline DenseTensor fold(const Matrix& m, const Shape& shape, Index mode) {
    if (mode < 0 || mode >= static_cast<Index>(shape.size())) {
        throw std::invalid_argument("fold: mode out of range");
    }
    const Index rows = shape[static_cast<std::size_t>(mode)];
    const Index total = shape_product(shape);
    if (m.rows() != rows || m.rows() * m.cols() != total) {
        throw std::invalid_argument("fold: matrix " + std::to_string(m.rows()) +
                                    "x" + std::to_string(m.cols()) +
                                    " inconsistent with shape " +
                                    shape_to_string(shape) + " at mode " +
                                    std::to_string(mode));
    }
    if (mode == 0) {
        return DenseTensor(shape, Eigen::Map<const Vector>(m.data(), total));
    }
    Index inner = 1;
    for (Index k = 0; k < mode; ++k) inner *= shape[static_cast<std::size_t>(k)];
    const Index outer = total / (inner * rows);

    Vector out(total);
    double* dst = out.data();
    for (Index o = 0; o < outer; ++o) {
        for (Index r = 0; r < rows; ++r) {
            Eigen::Map<Eigen::RowVectorXd>(dst + inner * (r + rows * o), inner) =
                m.block(r, inner * o, 1, inner);
        }
    }
    return DenseTensor(shape, std::move(out));
}

/// Reinterpret the buffer under a new extent list; canonical order (and the
/// data itself) is untouched.
inline DenseTensor reshape(const DenseTensor& t, const Shape& index_set) {
    if (shape_product(index_set) != t.size()) {
        throw std::invalid_argument("reshape: product of " +
                                    shape_to_string(index_set) + " != " +
                                    std::to_string(t.size()) + " elements");
    }
    return DenseTensor(index_set, t.values());
}

/// Relocate data so that result mode k is input mode perm[k].
inline DenseTensor permute_axes(const DenseTensor& t, const std::vector<Index>& perm) {
    const Index d = t.order();
    if (static_cast<Index>(perm.size()) != d) {
        throw std::invalid_argument("permute_axes: permutation order mismatch");
    }
    std::vector<bool> seen(static_cast<std::size_t>(d), false);
    for (Index p : perm) {
        if (p < 0 || p >= d || seen[static_cast<std::size_t>(p)]) {
            throw std::invalid_argument("permute_axes: invalid permutation");
        }
        seen[static_cast<std::size_t>(p)] = true;
    }

    Shape out_shape(static_cast<std::size_t>(d));
    for (Index k = 0; k < d; ++k) {
        out_shape[static_cast<std::size_t>(k)] = t.extent(perm[static_cast<std::size_t>(k)]);
    }

    std::vector<Index> in_strides(static_cast<std::size_t>(d));
    Index stride = 1;
    for (Index k = 0; k < d; ++k) {
        in_strides[static_cast<std::size_t>(k)] = stride;
        stride *= t.extent(k);
    }
    // stride in the source for each result mode
    std::vector<Index> src_strides(static_cast<std::size_t>(d));
    for (Index k = 0; k < d; ++k) {
        src_strides[static_cast<std::size_t>(k)] =
            in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
    }

    Vector out(t.size());
    Shape idx(static_cast<std::size_t>(d), 0);
    const double* src = t.data();
    Index src_off = 0;
    for (Index flat = 0; flat < t.size(); ++flat) {
        out[flat] = src[src_off];
        for (Index k = 0; k < d; ++k) {
            auto ku = static_cast<std::size_t>(k);
            if (++idx[ku] < out_shape[ku]) {
                src_off += src_strides[ku];
                break;
            }
            src_off -= src_strides[ku] * (out_shape[ku] - 1);
            idx[ku] = 0;
        }
    }
    return DenseTensor(std::move(out_shape), std::move(out));
}

inline double frobenius_norm(const DenseTensor& t) { return t.values().norm(); }

/// Contraction of `a` (mode da) with `b` (mode db). Result modes are a's
/// remaining modes followed by b's remaining modes, both in canonical order.
inline DenseTensor contract(const DenseTensor& a, Index da,
                            const DenseTensor& b, Index db) {
    detail::check_mode(a, da, "contract");
    detail::check_mode(b, db, "contract");
    if (a.extent(da) != b.extent(db)) {
        throw std::invalid_argument(
            "contract: extent mismatch " + std::to_string(a.extent(da)) +
            " vs " + std::to_string(b.extent(db)));
    }

    // A unfolded at da gives (n x restA); we need (restA x n), i.e. the
    // transpose. B unfolded at db is (n x restB) directly.
    Matrix lhs = unfold(a, da).transpose();
    Matrix rhs = unfold(b, db);
    Matrix prod = lhs * rhs;  // (restA x restB)

    Shape out_shape = detail::erase_mode(a.shape(), da);
    Shape b_rest = detail::erase_mode(b.shape(), db);
    out_shape.insert(out_shape.end(), b_rest.begin(), b_rest.end());
    if (out_shape.empty()) out_shape = {1};  // scalar result of two vectors

    return DenseTensor(std::move(out_shape),
                       Eigen::Map<const Vector>(prod.data(), prod.size()));
}

/// Replace mode `mode` of `t` by the row space of `m` (m is q x extent(mode)):
/// the mode-multiplication used to apply a basis or its transpose in place.
inline DenseTensor mode_multiply(const DenseTensor& t, Index mode, const Matrix& m) {
    detail::check_mode(t, mode, "mode_multiply");
    if (m.cols() != t.extent(mode)) {
        throw std::invalid_argument("mode_multiply: factor has " +
                                    std::to_string(m.cols()) +
                                    " cols, mode extent is " +
                                    std::to_string(t.extent(mode)));
    }
    Matrix prod = m * unfold(t, mode);
    Shape out_shape = t.shape();
    out_shape[static_cast<std::size_t>(mode)] = m.rows();
    return fold(prod, out_shape, mode);
}

/// One factor of a multi-index contraction: contract `axis` of `tensor`
/// against a target mode of the subject tensor. 2-way factors may use either
/// axis; 3-way factors contract their last axis, and their two free axes
/// replace the target mode in place.
struct ModeFactor {
    DenseTensor tensor;
    Index target_mode = 0;
    Index axis = -1;  // -1: last axis
};

/// Multi-index contraction: applies the factors in ascending target-mode
/// order, replacing each targeted mode in place by the factor's free axes.
/// Target modes refer to the modes of the input tensor `t`.
inline DenseTensor multi_contract(const DenseTensor& t, std::vector<ModeFactor> factors) {
    std::sort(factors.begin(), factors.end(),
              [](const ModeFactor& x, const ModeFactor& y) {
                  return x.target_mode < y.target_mode;
              });
    for (std::size_t i = 1; i < factors.size(); ++i) {
        if (factors[i].target_mode == factors[i - 1].target_mode) {
            throw std::invalid_argument("multi_contract: duplicate target mode " +
                                        std::to_string(factors[i].target_mode));
        }
    }

    DenseTensor c = t;
    Index shift = 0;  // modes inserted so far by 3-way factors
    for (const ModeFactor& f : factors) {
        const Index mode = f.target_mode + shift;
        detail::check_mode(c, mode, "multi_contract");
        const Index fo = f.tensor.order();
        Index axis = f.axis < 0 ? fo - 1 : f.axis;
        if (fo == 2) {
            if (axis != 0 && axis != 1) {
                throw std::invalid_argument("multi_contract: bad 2-way axis");
            }
            Matrix m = f.tensor.as_matrix();
            if (axis == 0) m.transposeInPlace();
            c = mode_multiply(c, mode, m);
        } else if (fo == 3) {
            if (axis != 2) {
                throw std::invalid_argument(
                    "multi_contract: 3-way factors contract their last axis");
            }
            const Shape& fs = f.tensor.shape();
            // flatten the two free axes: (fs0*fs1) x fs2 in canonical order
            Matrix m = Eigen::Map<const Matrix>(f.tensor.data(), fs[0] * fs[1], fs[2]);
            if (m.cols() != c.extent(mode)) {
                throw std::invalid_argument("multi_contract: extent mismatch at mode " +
                                            std::to_string(f.target_mode));
            }
            Matrix prod = m * unfold(c, mode);  // (fs0*fs1) x rest
            Shape out_shape = c.shape();
            auto mu = static_cast<std::size_t>(mode);
            out_shape[mu] = fs[0];
            out_shape.insert(out_shape.begin() + mode + 1, fs[1]);
            // prod's rows run over (fs0, fs1) fastest; fold as one merged mode
            Shape merged = c.shape();
            merged[mu] = fs[0] * fs[1];
            c = reshape(fold(prod, merged, mode), out_shape);
            ++shift;
        } else {
            throw std::invalid_argument("multi_contract: factors must be 2- or 3-way");
        }
    }
    return c;
}

/// Concatenation along mode k; all other extents must agree.
inline DenseTensor concat(const DenseTensor& a, const DenseTensor& b, Index k) {
    detail::check_mode(a, k, "concat");
    if (a.order() != b.order()) {
        throw std::invalid_argument("concat: order mismatch");
    }
    for (Index m = 0; m < a.order(); ++m) {
        if (m != k && a.extent(m) != b.extent(m)) {
            throw std::invalid_argument("concat: shapes differ off mode " +
                                        std::to_string(k) + ": " +
                                        shape_to_string(a.shape()) + " vs " +
                                        shape_to_string(b.shape()));
        }
    }
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(k)] += b.extent(k);

    Index inner = 1;
    for (Index m = 0; m < k; ++m) inner *= a.extent(m);
    const Index slab_a = inner * a.extent(k);
    const Index slab_b = inner * b.extent(k);
    const Index outer = a.size() / slab_a;

    Vector out(a.size() + b.size());
    for (Index o = 0; o < outer; ++o) {
        out.segment(o * (slab_a + slab_b), slab_a) = a.values().segment(o * slab_a, slab_a);
        out.segment(o * (slab_a + slab_b) + slab_a, slab_b) =
            b.values().segment(o * slab_b, slab_b);
    }
    return DenseTensor(std::move(out_shape), std::move(out));
}

/// Grow mode k by `extra` zero hyperslices (concat with a zero tensor).
inline DenseTensor pad_zeros(const DenseTensor& t, Index k, Index extra) {
    if (extra == 0) return t;
    if (extra < 0) throw std::invalid_argument("pad_zeros: negative pad");
    Shape zshape = t.shape();
    detail::check_mode(t, k, "pad_zeros");
    zshape[static_cast<std::size_t>(k)] = extra;
    return concat(t, DenseTensor(zshape), k);
}

/// Slice of `count` indices starting at `from` along mode k.
inline DenseTensor slice(const DenseTensor& t, Index k, Index from, Index count) {
    detail::check_mode(t, k, "slice");
    if (from < 0 || count < 1 || from + count > t.extent(k)) {
        throw std::out_of_range("slice: range out of bounds");
    }
    Shape out_shape = t.shape();
    out_shape[static_cast<std::size_t>(k)] = count;

    Index inner = 1;
    for (Index m = 0; m < k; ++m) inner *= t.extent(m);
    const Index slab_in = inner * t.extent(k);
    const Index slab_out = inner * count;
    const Index outer = t.size() / slab_in;

    Vector out(shape_product(out_shape));
    for (Index o = 0; o < outer; ++o) {
        out.segment(o * slab_out, slab_out) =
            t.values().segment(o * slab_in + from * inner, slab_out);
    }
    return DenseTensor(std::move(out_shape), std::move(out));
}

}  // namespace htrise
