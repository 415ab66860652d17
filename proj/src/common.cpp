#include "safe_nmpc/common.hpp"

#include <Eigen/Eigenvalues>

namespace safe_nmpc {

namespace {

Mat spd_power(const Mat& P, double p) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (P + P.transpose()));
    Vec ev = es.eigenvalues();
    if (ev.minCoeff() <= 0.0)
        throw NumericError("matrix is not positive definite", 0);
    Vec d = ev.array().pow(p);
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

Mat sqrtm_spd(const Mat& P) { return spd_power(P, 0.5); }

Mat inv_sqrtm_spd(const Mat& P) { return spd_power(P, -0.5); }

double min_eig(const Mat& S) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double max_eig(const Mat& S) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

double spectral_norm(const Mat& A) {
    if (A.size() == 0)
        return 0.0;
    Eigen::JacobiSVD<Mat> svd(A);
    return svd.singularValues()(0);
}

// Accepts either a single row (diagonal) or a full n x n matrix.
Mat diag_or_matrix(const std::vector<std::vector<double>>& rows, int n) {
    if (rows.size() == 1 && static_cast<int>(rows[0].size()) == n) {
        Mat D = Mat::Zero(n, n);
        for (int i = 0; i < n; ++i)
            D(i, i) = rows[0][i];
        return D;
    }
    require(static_cast<int>(rows.size()) == n, "weight matrix has wrong row count");
    Mat M(n, n);
    for (int i = 0; i < n; ++i) {
        require(static_cast<int>(rows[i].size()) == n, "weight matrix has wrong column count");
        for (int j = 0; j < n; ++j)
            M(i, j) = rows[i][j];
    }
    return M;
}

} // namespace safe_nmpc
