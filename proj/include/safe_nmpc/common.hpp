#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace safe_nmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Bad input, inconsistent dimensions, unreadable config. Maps to CLI exit 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values produced during integration or linear algebra.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& msg, int index)
        : std::runtime_error(msg), index_(index) {}
    int index() const { return index_; }

private:
    int index_;
};

// Offline synthesis could not satisfy its LMIs. Maps to CLI exit 3.
class InfeasibleError : public std::runtime_error {
public:
    explicit InfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond)
        throw ConfigError(msg);
}

// Symmetric square root and inverse square root of a PD matrix.
Mat sqrtm_spd(const Mat& P);
Mat inv_sqrtm_spd(const Mat& P);
double min_eig(const Mat& S);
double max_eig(const Mat& S);
double spectral_norm(const Mat& A);

Mat diag_or_matrix(const std::vector<std::vector<double>>& rows, int n);

} // namespace safe_nmpc
