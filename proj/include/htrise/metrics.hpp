#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "htrise/bht.hpp"
#include "htrise/tensor.hpp"

namespace htrise {

enum class NormalizationMethod { None, MaxAbs, UnitVec, ZScore };

inline std::string to_string(NormalizationMethod m) {
    switch (m) {
        case NormalizationMethod::None: return "none";
        case NormalizationMethod::MaxAbs: return "maxabs";
        case NormalizationMethod::UnitVec: return "unitvec";
        case NormalizationMethod::ZScore: return "zscore";
    }
    return "none";
}

inline NormalizationMethod normalization_from_string(const std::string& s) {
    if (s == "none") return NormalizationMethod::None;
    if (s == "maxabs") return NormalizationMethod::MaxAbs;
    if (s == "unitvec") return NormalizationMethod::UnitVec;
    if (s == "zscore") return NormalizationMethod::ZScore;
    throw std::invalid_argument("unknown normalization method: " + s);
}

/// Scalars needed to undo a normalization. Without a field axis there is one
/// entry; with one there is an entry per slice along that axis (one per
/// physical quantity). Degenerate constant fields get scale 1 and a flag.
struct NormalizationParams {
    NormalizationMethod method = NormalizationMethod::None;
    std::optional<Index> field_axis;
    std::vector<double> scale;    ///< max-abs value, norm, or sigma
    std::vector<double> offset;   ///< mu for z-score, else 0
    std::vector<bool> floored;    ///< scale was 0 and replaced by 1

    bool operator==(const NormalizationParams&) const = default;
};

namespace detail {

/// Visit the elements of each slice along `axis` (or the whole tensor when
/// axis is absent): fn(slice_index, pointer, run_length) over contiguous runs.
template <typename Fn>
void for_each_field_run(const DenseTensor& t, std::optional<Index> axis, Fn&& fn) {
    if (!axis) {
        fn(Index{0}, t.data(), t.size());
        return;
    }
    check_mode(t, *axis, "normalize");
    Index inner = 1;
    for (Index k = 0; k < *axis; ++k) inner *= t.extent(k);
    const Index n_axis = t.extent(*axis);
    const Index outer = t.size() / (inner * n_axis);
    for (Index o = 0; o < outer; ++o) {
        for (Index s = 0; s < n_axis; ++s) {
            fn(s, t.data() + inner * (s + n_axis * o), inner);
        }
    }
}

template <typename Fn>
void for_each_field_run_mut(DenseTensor& t, std::optional<Index> axis, Fn&& fn) {
    if (!axis) {
        fn(Index{0}, t.data(), t.size());
        return;
    }
    check_mode(t, *axis, "normalize");
    Index inner = 1;
    for (Index k = 0; k < *axis; ++k) inner *= t.extent(k);
    const Index n_axis = t.extent(*axis);
    const Index outer = t.size() / (inner * n_axis);
    for (Index o = 0; o < outer; ++o) {
        for (Index s = 0; s < n_axis; ++s) {
            fn(s, t.data() + inner * (s + n_axis * o), inner);
        }
    }
}

}  // namespace detail

/// Scale (and for z-score, center) a tensor so heterogeneous physical
/// quantities compress comparably. With `field_axis`, parameters are computed
/// per slice along that axis. Population standard deviation for z-score.
inline std::pair<DenseTensor, NormalizationParams> normalize(
    const DenseTensor& y, NormalizationMethod method,
    std::optional<Index> field_axis = std::nullopt) {
    NormalizationParams params;
    params.method = method;
    params.field_axis = field_axis;
    const Index fields = field_axis ? y.extent(*field_axis) : 1;
    params.scale.assign(static_cast<std::size_t>(fields), 0.0);
    params.offset.assign(static_cast<std::size_t>(fields), 0.0);
    params.floored.assign(static_cast<std::size_t>(fields), false);

    if (method == NormalizationMethod::None) {
        params.scale.assign(static_cast<std::size_t>(fields), 1.0);
        return {y, params};
    }

    std::vector<Index> counts(static_cast<std::size_t>(fields), 0);
    switch (method) {
        case NormalizationMethod::MaxAbs:
            detail::for_each_field_run(y, field_axis,
                                       [&](Index s, const double* v, Index n) {
                                           auto& m = params.scale[static_cast<std::size_t>(s)];
                                           for (Index i = 0; i < n; ++i)
                                               m = std::max(m, std::abs(v[i]));
                                       });
            break;
        case NormalizationMethod::UnitVec:
            detail::for_each_field_run(y, field_axis,
                                       [&](Index s, const double* v, Index n) {
                                           auto& m = params.scale[static_cast<std::size_t>(s)];
                                           for (Index i = 0; i < n; ++i)
                                               m += v[i] * v[i];
                                       });
            for (auto& m : params.scale) m = std::sqrt(m);
            break;
        case NormalizationMethod::ZScore: {
            detail::for_each_field_run(y, field_axis,
                                       [&](Index s, const double* v, Index n) {
                                           auto su = static_cast<std::size_t>(s);
                                           for (Index i = 0; i < n; ++i)
                                               params.offset[su] += v[i];
                                           counts[su] += n;
                                       });
            for (std::size_t s = 0; s < params.offset.size(); ++s) {
                params.offset[s] /= static_cast<double>(counts[s]);
            }
            detail::for_each_field_run(y, field_axis,
                                       [&](Index s, const double* v, Index n) {
                                           auto su = static_cast<std::size_t>(s);
                                           for (Index i = 0; i < n; ++i) {
                                               const double dv = v[i] - params.offset[su];
                                               params.scale[su] += dv * dv;
                                           }
                                       });
            for (std::size_t s = 0; s < params.scale.size(); ++s) {
                params.scale[s] = std::sqrt(params.scale[s] /
                                            static_cast<double>(counts[s]));
            }
            break;
        }
        case NormalizationMethod::None:
            break;
    }

    for (std::size_t s = 0; s < params.scale.size(); ++s) {
        if (params.scale[s] == 0.0) {
            params.scale[s] = 1.0;
            params.floored[s] = true;
        }
    }

    DenseTensor out = y;
    const bool center = method == NormalizationMethod::ZScore;
    detail::for_each_field_run_mut(out, field_axis,
                                   [&](Index s, double* v, Index n) {
                                       auto su = static_cast<std::size_t>(s);
                                       const double mu = center ? params.offset[su] : 0.0;
                                       const double sc = params.scale[su];
                                       for (Index i = 0; i < n; ++i)
                                           v[i] = (v[i] - mu) / sc;
                                   });
    return {std::move(out), params};
}

/// Exact inverse of normalize for the recorded parameters.
inline DenseTensor denormalize(const DenseTensor& y,
                               const NormalizationParams& params) {
    const Index fields =
        params.field_axis ? y.extent(*params.field_axis) : 1;
    if (static_cast<std::size_t>(fields) != params.scale.size()) {
        throw std::invalid_argument("denormalize: parameter count mismatch");
    }
    if (params.method == NormalizationMethod::None) return y;
    DenseTensor out = y;
    const bool center = params.method == NormalizationMethod::ZScore;
    detail::for_each_field_run_mut(out, params.field_axis,
                                   [&](Index s, double* v, Index n) {
                                       auto su = static_cast<std::size_t>(s);
                                       const double mu = center ? params.offset[su] : 0.0;
                                       const double sc = params.scale[su];
                                       for (Index i = 0; i < n; ++i)
                                           v[i] = v[i] * sc + mu;
                                   });
    return out;
}

/// Elements of the full accumulation over elements actually stored.
inline double compression_ratio(const HTRepresentation& h) {
    if (h.accumulated < 1) {
        throw std::invalid_argument("compression_ratio: empty accumulation");
    }
    const double full = static_cast<double>(shape_product(h.dims)) *
                        static_cast<double>(h.accumulated);
    return full / static_cast<double>(h.stored_elements());
}

/// Elements of one tensor over elements of one latent slice.
inline double reduction_ratio(const HTRepresentation& h) {
    const DenseTensor& root = h.root();
    return static_cast<double>(shape_product(h.dims)) /
           static_cast<double>(root.extent(0) * root.extent(1));
}

/// Mean per-tensor relative reconstruction error over a held-out set; the
/// representation is never mutated.
inline double relative_test_error(const HTRepresentation& h,
                                  const std::vector<DenseTensor>& test_set) {
    if (test_set.empty()) {
        throw std::invalid_argument("relative_test_error: empty test set");
    }
    double sum = 0.0;
    for (const DenseTensor& t : test_set) {
        Shape with_batch = t.shape();
        if (t.order() == h.tree.dims()) {
            with_batch.push_back(1);
        }
        DenseTensor y = reshape(t, with_batch);
        DenseTensor back = decode(h, encode(h, y).first);
        const double ny = frobenius_norm(y);
        if (ny == 0.0) continue;
        double diff = (y.values() - back.values()).norm();
        sum += diff / ny;
    }
    return sum / static_cast<double>(test_set.size());
}

}  // namespace htrise
