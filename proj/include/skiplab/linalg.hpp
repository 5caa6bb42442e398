#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "skiplab/errors.hpp"
#include "skiplab/rng.hpp"

namespace skiplab {

// Small dense square matrix, row-major. jacobi_eigh expects symmetric input.
struct SquareMatrix {
    int n = 0;
    std::vector<double> a;

    SquareMatrix() = default;
    explicit SquareMatrix(int dim) : n(dim), a(static_cast<size_t>(dim) * dim, 0.0) {}

    double& at(int i, int j) { return a[static_cast<size_t>(i) * n + j]; }
    double at(int i, int j) const { return a[static_cast<size_t>(i) * n + j]; }

    static SquareMatrix identity(int dim) {
        SquareMatrix m(dim);
        for (int i = 0; i < dim; ++i) m.at(i, i) = 1.0;
        return m;
    }

    static SquareMatrix diag(const std::vector<double>& d) {
        SquareMatrix m(static_cast<int>(d.size()));
        for (int i = 0; i < m.n; ++i) m.at(i, i) = d[i];
        return m;
    }

    double trace() const {
        double t = 0.0;
        for (int i = 0; i < n; ++i) t += at(i, i);
        return t;
    }
};

// Cyclic Jacobi eigendecomposition for small symmetric matrices.
// Returns eigenvalues; V's columns are the matching eigenvectors.
inline std::vector<double> jacobi_eigh(const SquareMatrix& m, SquareMatrix& v_out, int sweeps = 64) {
    int n = m.n;
    SquareMatrix a = m;
    v_out = SquareMatrix::identity(n);
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
        if (off < 1e-28) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = v_out.at(k, p), vkq = v_out.at(k, q);
                    v_out.at(k, p) = c * vkp - s * vkq;
                    v_out.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<double> evals(n);
    for (int i = 0; i < n; ++i) evals[i] = a.at(i, i);
    return evals;
}

// Draws from N(mean, cov) via eigendecomposition; cov may be singular PSD.
// Eigenvalues below -1e-9*max are rejected as non-PSD; small negatives are
// clamped to zero.
class MvnSampler {
public:
    MvnSampler(std::vector<double> mean, const SquareMatrix& cov) : mean_(std::move(mean)) {
        int n = cov.n;
        if (static_cast<int>(mean_.size()) != n) throw config_error("mvn: mean/cov dim mismatch");
        SquareMatrix v;
        std::vector<double> evals = jacobi_eigh(cov, v);
        double mx = 0.0;
        for (double e : evals) mx = std::max(mx, std::abs(e));
        root_.assign(static_cast<size_t>(n) * n, 0.0);
        for (int j = 0; j < n; ++j) {
            if (evals[j] < -1e-9 * std::max(mx, 1.0)) throw config_error("mvn: covariance not PSD");
            double s = std::sqrt(std::max(evals[j], 0.0));
            for (int i = 0; i < n; ++i) root_[static_cast<size_t>(i) * n + j] = v.at(i, j) * s;
        }
        dim_ = n;
    }

    int dim() const { return dim_; }

    std::vector<double> draw(Rng& rng) const {
        std::vector<double> z(dim_);
        for (auto& x : z) x = rng.normal();
        std::vector<double> out(mean_);
        for (int i = 0; i < dim_; ++i) {
            double s = 0.0;
            for (int j = 0; j < dim_; ++j) s += root_[static_cast<size_t>(i) * dim_ + j] * z[j];
            out[i] += s;
        }
        return out;
    }

private:
    std::vector<double> mean_;
    std::vector<double> root_; // cov^{1/2}, row-major
    int dim_ = 0;
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw config_error("median: empty input");
    size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + mid);
    return 0.5 * (lo + hi);
}

// Spearman rank correlation; ties get averaged ranks.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw config_error("spearman: need two equal-length series");
    auto ranks = [](const std::vector<double>& v) {
        size_t n = v.size();
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            double avg = 0.5 * (i + j) + 1.0;
            for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    std::vector<double> rx = ranks(x), ry = ranks(y);
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= rx.size();
    my /= ry.size();
    double num = 0.0, dx = 0.0, dy = 0.0;
    for (size_t i = 0; i < rx.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0.0 || dy == 0.0) return 0.0;
    return num / std::sqrt(dx * dy);
}

} // namespace skiplab
