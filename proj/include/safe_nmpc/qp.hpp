#pragma once

#include "safe_nmpc/common.hpp"

namespace safe_nmpc {

// min 1/2 x'Hx + g'x  s.t.  A x = b,  C x <= d.
// With elastic_penalty > 0 the inequalities become C x - sigma <= d, sigma >= 0 and
// elastic_penalty * sum(sigma) is added to the objective, so the problem is always feasible.
struct QpProblem {
    Mat H;
    Vec g;
    Mat A;
    Vec b;
    Mat C;
    Vec d;
};

struct QpOptions {
    double tol = 1e-10;
    int max_iter = 100;
    double elastic_penalty = 0.0;
};

enum class QpStatus { Optimal, Infeasible, MaxIter };

struct QpResult {
    Vec x, lambda, mu, sigma;  // sigma empty unless elastic
    double objective = 0.0;
    int iterations = 0;
    QpStatus status = QpStatus::MaxIter;
};

// Primal-dual interior point with Mehrotra predictor-corrector steps.
QpResult solve_qp(const QpProblem& p, const QpOptions& opt = {});

} // namespace safe_nmpc
