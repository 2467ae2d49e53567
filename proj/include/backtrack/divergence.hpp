#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "backtrack/rng.hpp"
#include "backtrack/table.hpp"

namespace backtrack {

// Row-major observation matrix; one row per observation.
struct EmpiricalSample {
    std::size_t dim = 0;
    std::vector<double> data;

    std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
    const double* row(std::size_t i) const { return data.data() + i * dim; }

    void push(const double* values) { data.insert(data.end(), values, values + dim); }

    static EmpiricalSample from_column(const std::vector<double>& col) {
        EmpiricalSample s;
        s.dim = 1;
        s.data = col;
        return s;
    }

    // Selected columns of a table, optionally restricted to given rows.
    static EmpiricalSample from_table(const ColumnTable& t, const std::vector<std::string>& cols,
                                      const std::vector<std::size_t>* rows = nullptr) {
        EmpiricalSample s;
        s.dim = cols.size();
        std::vector<const std::vector<double>*> src;
        src.reserve(cols.size());
        for (const auto& c : cols) src.push_back(&t.col(c));
        const std::size_t n = rows ? rows->size() : t.rows();
        s.data.reserve(n * s.dim);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t r = rows ? (*rows)[k] : k;
            for (const auto* c : src) s.data.push_back((*c)[r]);
        }
        return s;
    }
};

namespace detail {

inline double euclid(const double* x, const double* y, std::size_t d) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[k] - y[k];
        s += diff * diff;
    }
    return std::sqrt(s);
}

inline void check_sample(const EmpiricalSample& s, const char* which) {
    if (s.dim < 1 || s.size() == 0)
        throw std::invalid_argument(std::string("empty sample: ") + which);
    for (double v : s.data)
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string("non-finite entry in sample: ") + which);
}

inline void check_pair(const EmpiricalSample& a, const EmpiricalSample& b) {
    check_sample(a, "first");
    check_sample(b, "second");
    if (a.dim != b.dim) throw std::invalid_argument("sample dimension mismatch");
}

// Order-statistic rank of the exact permutation-test threshold,
// ceil((1-alpha)(B+1)) over B replicates; 0 degenerates to the lower bound.
inline std::size_t quantile_rank(std::size_t n, double alpha) {
    return static_cast<std::size_t>(
        std::ceil((1.0 - alpha) * static_cast<double>(n + 1) - 1e-12));
}

}  // namespace detail

// Energy-distance MMD between empirical samples, V-statistic form:
//   2 mean||x - y|| - mean||x - x'|| - mean||y - y'||
// with Euclidean norms and self-pairs included. Nonnegative; tiny negative
// floating-point residue is clamped to zero.
inline double energy_mmd(const EmpiricalSample& a_in, const EmpiricalSample& b_in) {
    detail::check_pair(a_in, b_in);
    // Canonical argument order makes the summation order, and hence the
    // floating-point result, identical for (a,b) and (b,a).
    const bool swap = a_in.size() > b_in.size() ||
                      (a_in.size() == b_in.size() &&
                       std::lexicographical_compare(b_in.data.begin(), b_in.data.end(),
                                                    a_in.data.begin(), a_in.data.end()));
    const EmpiricalSample& a = swap ? b_in : a_in;
    const EmpiricalSample& b = swap ? a_in : b_in;
    const std::size_t na = a.size(), nb = b.size(), d = a.dim;
    double sab = 0.0;
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j) sab += detail::euclid(a.row(i), b.row(j), d);
    double saa = 0.0;
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = i + 1; j < na; ++j) saa += detail::euclid(a.row(i), a.row(j), d);
    double sbb = 0.0;
    for (std::size_t i = 0; i < nb; ++i)
        for (std::size_t j = i + 1; j < nb; ++j) sbb += detail::euclid(b.row(i), b.row(j), d);
    const double v = 2.0 * sab / (double(na) * double(nb)) -
                     2.0 * saa / (double(na) * double(na)) -
                     2.0 * sbb / (double(nb) * double(nb));
    return v < 0.0 ? 0.0 : v;
}

// Cost of moving a single point to a distribution: the singleton MMD
//   2 mean||s - y|| - mean||y - y'||.
inline double point_cost(const double* s, std::size_t dim, const EmpiricalSample& b) {
    detail::check_sample(b, "second");
    if (dim != b.dim) throw std::invalid_argument("sample dimension mismatch");
    for (std::size_t k = 0; k < dim; ++k)
        if (!std::isfinite(s[k])) throw std::invalid_argument("non-finite entry in point");
    const std::size_t nb = b.size();
    double sb = 0.0;
    for (std::size_t j = 0; j < nb; ++j) sb += detail::euclid(s, b.row(j), dim);
    double sbb = 0.0;
    for (std::size_t i = 0; i < nb; ++i)
        for (std::size_t j = i + 1; j < nb; ++j) sbb += detail::euclid(b.row(i), b.row(j), dim);
    const double v = 2.0 * sb / double(nb) - 2.0 * sbb / (double(nb) * double(nb));
    return v < 0.0 ? 0.0 : v;
}

inline double point_cost(const std::vector<double>& s, const EmpiricalSample& b) {
    return point_cost(s.data(), s.size(), b);
}

// Seeded uniform row subsample without replacement; identity when the cap
// is not exceeded.
inline EmpiricalSample subsample_rows(const EmpiricalSample& s, std::size_t cap,
                                      std::uint64_t seed) {
    if (s.size() <= cap) return s;
    std::vector<std::uint32_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0u);
    Rng rng(seed);
    for (std::size_t i = 0; i < cap; ++i) {
        const std::size_t j = i + rng.below(idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    EmpiricalSample out;
    out.dim = s.dim;
    out.data.reserve(cap * s.dim);
    for (std::size_t i = 0; i < cap; ++i) out.push(s.row(idx[i]));
    return out;
}

// Pooled pairwise-distance table shared by all permutation replicates.
// Distances are stored in single precision (the statistic is used only as a
// calibration quantile); row sums and totals accumulate in double.
class PooledEnergy {
public:
    PooledEnergy(const EmpiricalSample& a, const EmpiricalSample& b) {
        detail::check_pair(a, b);
        n1_ = a.size();
        n_ = a.size() + b.size();
        if (n_ < 4) throw std::invalid_argument("pooled sample too small (need at least 4 rows)");
        dim_ = a.dim;
        pool_.reserve(n_ * dim_);
        pool_.insert(pool_.end(), a.data.begin(), a.data.end());
        pool_.insert(pool_.end(), b.data.begin(), b.data.end());
        dist_.assign(n_ * n_, 0.0f);
        rowsum_.assign(n_, 0.0);
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = i + 1; j < n_; ++j) {
                const float dij = static_cast<float>(
                    detail::euclid(&pool_[i * dim_], &pool_[j * dim_], dim_));
                dist_[i * n_ + j] = dij;
                dist_[j * n_ + i] = dij;
            }
        }
        total_ = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n_; ++j) s += dist_[i * n_ + j];
            rowsum_[i] = s;
            total_ += s;
        }
    }

    std::size_t pooled_size() const { return n_; }

    // Statistic for the original labels (first n1 rows vs the rest).
    double observed() const {
        std::vector<std::uint32_t> first(n1_);
        std::iota(first.begin(), first.end(), 0u);
        return stat(first);
    }

    // Statistic for one random relabeling of the pool.
    double replicate(Rng& rng) const {
        std::vector<std::uint32_t> idx(n_);
        std::iota(idx.begin(), idx.end(), 0u);
        for (std::size_t i = 0; i < n1_; ++i) {
            const std::size_t j = i + rng.below(n_ - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(n1_);
        std::sort(idx.begin(), idx.end());
        return stat(idx);
    }

    // (1-alpha) quantile of the permutation-null statistic; deterministic
    // given seed, replicate r drawing from the stream derived from (seed, r).
    double threshold(std::size_t n_perm, double alpha, std::uint64_t seed) const {
        if (n_perm < 100) throw std::invalid_argument("need at least 100 permutations");
        if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must lie in [0,1]");
        const std::size_t k = detail::quantile_rank(n_perm, alpha);
        if (k == 0) return 0.0;
        std::vector<double> vals(n_perm);
        for (std::size_t r = 0; r < n_perm; ++r) {
            Rng rng(derive_seed(seed, r));
            vals[r] = replicate(rng);
        }
        std::sort(vals.begin(), vals.end());
        return vals[std::min(k, n_perm) - 1];
    }

private:
    // Energy statistic given the sorted index set of the first group. Only
    // the within-group sum needs gathering; cross terms follow from row sums.
    double stat(const std::vector<std::uint32_t>& first) const {
        const std::size_t na = first.size();
        const std::size_t nb = n_ - na;
        double s_aa = 0.0, s_arow = 0.0;
        for (std::size_t p = 0; p < na; ++p) {
            const float* drow = &dist_[std::size_t(first[p]) * n_];
            double acc = 0.0;
            for (std::size_t q = p + 1; q < na; ++q) acc += drow[first[q]];
            s_aa += acc;
            s_arow += rowsum_[first[p]];
        }
        s_aa *= 2.0;  // ordered pairs
        const double s_ab = s_arow - s_aa;
        const double s_bb = total_ - 2.0 * s_arow + s_aa;
        const double v = 2.0 * s_ab / (double(na) * double(nb)) - s_aa / (double(na) * double(na)) -
                         s_bb / (double(nb) * double(nb));
        return v < 0.0 ? 0.0 : v;
    }

    std::size_t n1_ = 0, n_ = 0, dim_ = 0;
    std::vector<double> pool_;
    std::vector<float> dist_;
    std::vector<double> rowsum_;
    double total_ = 0.0;
};

inline double permutation_threshold(const EmpiricalSample& a, const EmpiricalSample& b,
                                    std::size_t n_perm, double alpha, std::uint64_t seed) {
    PooledEnergy pooled(a, b);
    return pooled.threshold(n_perm, alpha, seed);
}

struct TwoSampleResult {
    double mmd = 0.0;
    double threshold = 0.0;
    bool rejected = false;  // true when mmd exceeds the calibrated threshold
};

inline TwoSampleResult two_sample_energy_test(const EmpiricalSample& a, const EmpiricalSample& b,
                                              std::size_t n_perm, double alpha,
                                              std::uint64_t seed) {
    TwoSampleResult r;
    r.mmd = energy_mmd(a, b);
    r.threshold = permutation_threshold(a, b, n_perm, alpha, seed);
    r.rejected = r.mmd > r.threshold;
    return r;
}

}  // namespace backtrack
