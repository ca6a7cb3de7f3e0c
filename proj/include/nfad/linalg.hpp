#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "nfad/errors.hpp"

namespace nfad {

// Dense LU factorization with partial pivoting for the small square
// matrices used by invertible channel mixing (a handful of channels).
class Lu {
public:
    Lu(int n, const std::vector<double>& a) : n_(n), lu_(a), piv_(n) {
        if (static_cast<int>(a.size()) != n * n) throw ShapeError("Lu: matrix size mismatch");
        sign_ = 1.0;
        for (int k = 0; k < n_; ++k) {
            int p = k;
            double best = std::fabs(lu_[k * n_ + k]);
            for (int i = k + 1; i < n_; ++i) {
                double v = std::fabs(lu_[i * n_ + k]);
                if (v > best) {
                    best = v;
                    p = i;
                }
            }
            piv_[k] = p;
            if (p != k) {
                for (int j = 0; j < n_; ++j) std::swap(lu_[k * n_ + j], lu_[p * n_ + j]);
                sign_ = -sign_;
            }
            double d = lu_[k * n_ + k];
            if (d == 0.0) {
                singular_ = true;
                return;
            }
            for (int i = k + 1; i < n_; ++i) {
                double f = lu_[i * n_ + k] / d;
                lu_[i * n_ + k] = f;
                for (int j = k + 1; j < n_; ++j) lu_[i * n_ + j] -= f * lu_[k * n_ + j];
            }
        }
    }

    bool singular() const { return singular_; }

    double log_abs_det() const {
        if (singular_) return -std::numeric_limits<double>::infinity();
        double s = 0.0;
        for (int k = 0; k < n_; ++k) s += std::log(std::fabs(lu_[k * n_ + k]));
        return s;
    }

    // Solve A x = b in place. The row exchanges recorded during
    // factorization are all applied to b first; the stored multipliers
    // are kept in the final row arrangement, so interleaving the swaps
    // with the elimination would pair multipliers with the wrong rows.
    void solve(std::vector<double>& b) const {
        for (int k = 0; k < n_; ++k)
            if (piv_[k] != k) std::swap(b[k], b[piv_[k]]);
        for (int k = 0; k < n_; ++k)
            for (int i = k + 1; i < n_; ++i) b[i] -= lu_[i * n_ + k] * b[k];
        for (int k = n_ - 1; k >= 0; --k) {
            b[k] /= lu_[k * n_ + k];
            for (int i = 0; i < k; ++i) b[i] -= lu_[i * n_ + k] * b[k];
        }
    }

    // Dense inverse, row-major.
    std::vector<double> inverse() const {
        std::vector<double> inv(n_ * n_, 0.0);
        std::vector<double> col(n_);
        for (int j = 0; j < n_; ++j) {
            std::fill(col.begin(), col.end(), 0.0);
            col[j] = 1.0;
            solve(col);
            for (int i = 0; i < n_; ++i) inv[i * n_ + j] = col[i];
        }
        return inv;
    }

private:
    int n_;
    std::vector<double> lu_;
    std::vector<int> piv_;
    double sign_ = 1.0;
    bool singular_ = false;
};

} // namespace nfad
