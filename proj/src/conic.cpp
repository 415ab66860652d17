#include "safe_nmpc/conic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace safe_nmpc {

// ---------------------------------------------------------------- AffineMat

AffineMat AffineMat::constant(const Mat& m) {
    AffineMat a(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    a.c0 = m;
    return a;
}

Mat AffineMat::eval(const Vec& x) const {
    Mat out = c0;
    for (const auto& [k, F] : terms)
        out += x(k) * F;
    return out;
}

AffineMat AffineMat::transpose() const {
    AffineMat a(cols, rows);
    a.c0 = c0.transpose();
    for (const auto& [k, F] : terms)
        a.terms.emplace(k, F.transpose());
    return a;
}

AffineMat AffineMat::sym() const { return *this + transpose(); }

void AffineMat::add_term(int idx, const Mat& m) {
    auto it = terms.find(idx);
    if (it == terms.end())
        terms.emplace(idx, m);
    else
        it->second += m;
}

AffineMat operator+(const AffineMat& a, const AffineMat& b) {
    require(a.rows == b.rows && a.cols == b.cols, "affine sum dimension mismatch");
    AffineMat r = a;
    r.c0 += b.c0;
    for (const auto& [k, F] : b.terms)
        r.add_term(k, F);
    return r;
}

AffineMat operator-(const AffineMat& a, const AffineMat& b) { return a + (-1.0) * b; }

AffineMat operator*(double s, const AffineMat& a) {
    AffineMat r = a;
    r.c0 *= s;
    for (auto& [k, F] : r.terms)
        F *= s;
    return r;
}

AffineMat operator*(const Mat& m, const AffineMat& a) {
    require(m.cols() == a.rows, "affine left product dimension mismatch");
    AffineMat r(static_cast<int>(m.rows()), a.cols);
    r.c0 = m * a.c0;
    for (const auto& [k, F] : a.terms)
        r.terms.emplace(k, m * F);
    return r;
}

AffineMat operator*(const AffineMat& a, const Mat& m) {
    require(a.cols == m.rows(), "affine right product dimension mismatch");
    AffineMat r(a.rows, static_cast<int>(m.cols()));
    r.c0 = a.c0 * m;
    for (const auto& [k, F] : a.terms)
        r.terms.emplace(k, F * m);
    return r;
}

AffineMat operator+(const AffineMat& a, const Mat& m) { return a + AffineMat::constant(m); }

AffineMat operator-(const AffineMat& a, const Mat& m) { return a + AffineMat::constant(-m); }

AffineMat blocks(const std::vector<std::vector<AffineMat>>& grid) {
    const size_t nr = grid.size();
    require(nr > 0, "empty block grid");
    const size_t nc = grid[0].size();
    std::vector<int> rh(nr, -1), cw(nc, -1);
    for (size_t i = 0; i < nr; ++i) {
        require(grid[i].size() == nc, "ragged block grid");
        for (size_t j = 0; j < nc; ++j) {
            const AffineMat& b = grid[i][j];
            if (b.rows == 0 && b.cols == 0)
                continue;
            require(rh[i] < 0 || rh[i] == b.rows, "block row height mismatch");
            require(cw[j] < 0 || cw[j] == b.cols, "block column width mismatch");
            rh[i] = b.rows;
            cw[j] = b.cols;
        }
    }
    std::vector<int> ro(nr + 1, 0), co(nc + 1, 0);
    for (size_t i = 0; i < nr; ++i) {
        require(rh[i] >= 0, "block row with undetermined height");
        ro[i + 1] = ro[i] + rh[i];
    }
    for (size_t j = 0; j < nc; ++j) {
        require(cw[j] >= 0, "block column with undetermined width");
        co[j + 1] = co[j] + cw[j];
    }
    AffineMat out(ro[nr], co[nc]);
    for (size_t i = 0; i < nr; ++i)
        for (size_t j = 0; j < nc; ++j) {
            const AffineMat& b = grid[i][j];
            if (b.rows == 0 && b.cols == 0)
                continue;
            out.c0.block(ro[i], co[j], b.rows, b.cols) = b.c0;
            for (const auto& [k, F] : b.terms) {
                auto it = out.terms.find(k);
                if (it == out.terms.end())
                    it = out.terms.emplace(k, Mat::Zero(out.rows, out.cols)).first;
                it->second.block(ro[i], co[j], b.rows, b.cols) += F;
            }
        }
    return out;
}

// ---------------------------------------------------------------- DecisionLayout

int DecisionLayout::add(VarBlock b) {
    require(!has(b.name), "duplicate decision variable '" + b.name + "'");
    b.offset = size_;
    size_ += b.size;
    index_[b.name] = static_cast<int>(blocks_.size());
    blocks_.push_back(b);
    return b.offset;
}

int DecisionLayout::add_sym(const std::string& name, int n) {
    return add({name, VarKind::Symmetric, n, n, 0, n * (n + 1) / 2});
}

int DecisionLayout::add_mat(const std::string& name, int rows, int cols) {
    return add({name, VarKind::Rectangular, rows, cols, 0, rows * cols});
}

int DecisionLayout::add_scalar(const std::string& name) {
    return add({name, VarKind::Scalar, 1, 1, 0, 1});
}

const VarBlock& DecisionLayout::block(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown decision variable '" + name + "'");
    return blocks_[it->second];
}

AffineMat DecisionLayout::var(const std::string& name) const {
    const VarBlock& b = block(name);
    AffineMat a(b.rows, b.cols);
    int k = b.offset;
    if (b.kind == VarKind::Symmetric) {
        for (int i = 0; i < b.rows; ++i)
            for (int j = i; j < b.cols; ++j) {
                Mat F = Mat::Zero(b.rows, b.cols);
                F(i, j) = 1.0;
                F(j, i) = 1.0;
                a.terms.emplace(k++, F);
            }
    } else {
        for (int i = 0; i < b.rows; ++i)
            for (int j = 0; j < b.cols; ++j) {
                Mat F = Mat::Zero(b.rows, b.cols);
                F(i, j) = 1.0;
                a.terms.emplace(k++, F);
            }
    }
    return a;
}

Mat DecisionLayout::value(const Vec& x, const std::string& name) const {
    const VarBlock& b = block(name);
    Mat m(b.rows, b.cols);
    int k = b.offset;
    if (b.kind == VarKind::Symmetric) {
        for (int i = 0; i < b.rows; ++i)
            for (int j = i; j < b.cols; ++j) {
                m(i, j) = x(k);
                m(j, i) = x(k++);
            }
    } else {
        for (int i = 0; i < b.rows; ++i)
            for (int j = 0; j < b.cols; ++j)
                m(i, j) = x(k++);
    }
    return m;
}

Vec DecisionLayout::flatten(const std::map<std::string, Mat>& values) const {
    Vec x = Vec::Zero(size_);
    for (const VarBlock& b : blocks_) {
        auto it = values.find(b.name);
        if (it == values.end())
            continue;
        const Mat& m = it->second;
        require(m.rows() == b.rows && m.cols() == b.cols, "value shape mismatch for " + b.name);
        int k = b.offset;
        for (int i = 0; i < b.rows; ++i)
            for (int j = (b.kind == VarKind::Symmetric ? i : 0); j < b.cols; ++j)
                x(k++) = m(i, j);
    }
    return x;
}

std::map<std::string, Mat> DecisionLayout::unflatten(const Vec& x) const {
    require(x.size() == size_, "decision vector has wrong length");
    std::map<std::string, Mat> out;
    for (const VarBlock& b : blocks_)
        out[b.name] = value(x, b.name);
    return out;
}

// ---------------------------------------------------------------- LMIs

LmiBlock LmiBlock::from(const AffineMat& a, Sense sense, const std::string& tag) {
    require(a.rows == a.cols, "LMI block must be square: " + tag);
    auto symmetric = [](const Mat& m) {
        return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, m.cwiseAbs().maxCoeff());
    };
    LmiBlock b;
    require(symmetric(a.c0), "LMI constant not symmetric: " + tag);
    b.c0 = 0.5 * (a.c0 + a.c0.transpose());
    for (const auto& [k, F] : a.terms) {
        require(symmetric(F), "LMI coefficient not symmetric: " + tag);
        if (F.cwiseAbs().maxCoeff() == 0.0)
            continue;
        b.terms.emplace_back(k, 0.5 * (F + F.transpose()));
    }
    b.sense = sense;
    b.tag = tag;
    return b;
}

Mat LmiBlock::eval(const Vec& x) const {
    Mat out = c0;
    for (const auto& [k, F] : terms)
        out += x(k) * F;
    return out;
}

LmiCheck check_lmi(const Mat& S, Sense sense, double tol) {
    require(S.rows() == S.cols(), "check_lmi: matrix not square");
    if (S.size() == 0)
        return {true, 0.0};
    const double asym = (S - S.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10)
        throw ConfigError("check_lmi: matrix not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
    const double margin = sense == Sense::NSD ? es.eigenvalues().maxCoeff() : -es.eigenvalues().minCoeff();
    return {margin <= tol, margin};
}

double lmi_residual(const std::vector<LmiBlock>& lmis, const Vec& x, std::string* tag) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const LmiBlock& b : lmis) {
        const double m = check_lmi(b.eval(x), b.sense, 0.0).margin;
        if (m > worst) {
            worst = m;
            if (tag)
                *tag = b.tag;
        }
    }
    return worst;
}

std::string to_string(SdpStatus s) {
    switch (s) {
    case SdpStatus::Optimal: return "optimal";
    case SdpStatus::Feasible: return "feasible";
    case SdpStatus::Infeasible: return "infeasible";
    case SdpStatus::MaxIter: return "max_iter";
    }
    return "unknown";
}

void SdpProblem::add_lmi(const AffineMat& a, Sense sense, const std::string& tag) {
    lmis.push_back(LmiBlock::from(a, sense, tag));
}

void SdpProblem::minimize_trace(const std::string& sym_var, double weight) {
    if (c.size() != layout.size())
        c.conservativeResizeLike(Vec::Zero(layout.size()));
    const VarBlock& b = layout.block(sym_var);
    require(b.kind == VarKind::Symmetric, "trace objective needs a symmetric variable");
    int k = b.offset;
    for (int i = 0; i < b.rows; ++i)
        for (int j = i; j < b.cols; ++j, ++k)
            if (i == j)
                c(k) += weight;
}

void SdpProblem::minimize_scalar(const std::string& var, double weight) {
    if (c.size() != layout.size())
        c.conservativeResizeLike(Vec::Zero(layout.size()));
    const VarBlock& b = layout.block(var);
    require(b.kind == VarKind::Scalar, "scalar objective needs a scalar variable");
    c(b.offset) += weight;
}

void SdpProblem::minimize_logdet_neg(const std::string& sym_var, double weight) {
    logdet.emplace_back(layout.var(sym_var), weight);
}

// ---------------------------------------------------------------- barrier solver

namespace {

// Block in the form G0 + sum x_k F_k >= 0.
struct BarrierBlock {
    Mat G0;
    std::vector<std::pair<int, Mat>> F;
};

BarrierBlock to_barrier(const Mat& c0, const std::vector<std::pair<int, Mat>>& terms, double sign) {
    BarrierBlock b;
    b.G0 = sign * c0;
    for (const auto& [k, M] : terms)
        b.F.emplace_back(k, sign * M);
    return b;
}

struct Barrier {
    int n = 0;
    Vec c;
    std::vector<std::pair<BarrierBlock, double>> objective_logdet;
    std::vector<BarrierBlock> cons;
    double bound = 1e6;
    int cons_dim = 0;

    // t * (c'x + sum w (-log det D)) - sum log det G - sum log(bound^2 - x^2)
    double value(const Vec& x, double t, Vec* g, Mat* H) const {
        double val = t * c.dot(x);
        if (g) {
            *g = t * c;
            *H = Mat::Zero(n, n);
        }
        auto add_block = [&](const BarrierBlock& b, double w) -> bool {
            Mat G = b.G0;
            for (const auto& [k, F] : b.F)
                G += x(k) * F;
            Eigen::LLT<Mat> llt(G);
            if (llt.info() != Eigen::Success)
                return false;
            const Mat& L = llt.matrixLLT();
            double ld = 0.0;
            for (int i = 0; i < L.rows(); ++i) {
                if (!(L(i, i) > 0.0))
                    return false;
                ld += std::log(L(i, i));
            }
            val -= w * 2.0 * ld;
            if (!g)
                return true;
            const size_t m = b.F.size();
            std::vector<Mat> Ms(m);
            for (size_t a = 0; a < m; ++a) {
                Mat T = llt.matrixL().solve(b.F[a].second);
                Ms[a] = llt.matrixL().solve(T.transpose());
                (*g)(b.F[a].first) -= w * Ms[a].trace();
            }
            for (size_t a = 0; a < m; ++a)
                for (size_t q = a; q < m; ++q) {
                    const double h = w * (Ms[a].cwiseProduct(Ms[q])).sum();
                    const int i = b.F[a].first, j = b.F[q].first;
                    (*H)(i, j) += h;
                    if (a != q)
                        (*H)(j, i) += h;
                }
            return true;
        };
        for (const auto& [b, w] : objective_logdet)
            if (!add_block(b, t * w))
                return std::numeric_limits<double>::infinity();
        for (const auto& b : cons)
            if (!add_block(b, 1.0))
                return std::numeric_limits<double>::infinity();
        for (int k = 0; k < n; ++k) {
            const double up = bound - x(k), lo = bound + x(k);
            if (!(up > 0 && lo > 0))
                return std::numeric_limits<double>::infinity();
            val -= std::log(up) + std::log(lo);
            if (g) {
                (*g)(k) += 1.0 / up - 1.0 / lo;
                (*H)(k, k) += 1.0 / (up * up) + 1.0 / (lo * lo);
            }
        }
        return val;
    }

    int gap_dim() const { return cons_dim + 2 * n; }
};

struct CenterResult {
    int iterations = 0;
    bool stopped = false;
};

// Damped Newton centering. `stop` is polled after every accepted step.
CenterResult center(const Barrier& B, Vec& x, double t, int max_iter,
                    const std::function<bool(const Vec&)>& stop) {
    CenterResult r;
    Vec g;
    Mat H;
    for (int it = 0; it < max_iter; ++it) {
        const double f0 = B.value(x, t, &g, &H);
        if (!std::isfinite(f0))
            break;
        // symmetrize the accumulated Hessian (lower/upper filled separately for off-diagonals)
        Mat Hs = 0.5 * (H + H.transpose());
        const double scale = std::max(1.0, Hs.diagonal().cwiseAbs().maxCoeff());
        Eigen::LDLT<Mat> ldlt(Hs + 1e-14 * scale * Mat::Identity(B.n, B.n));
        Vec dx = ldlt.solve(-g);
        if (!dx.allFinite())
            break;
        const double dec = -g.dot(dx);
        ++r.iterations;
        if (dec < 1e-12)
            break;
        double step = 1.0;
        bool accepted = false;
        while (step > 1e-16) {
            const Vec xn = x + step * dx;
            const double fn = B.value(xn, t, nullptr, nullptr);
            if (std::isfinite(fn) && fn <= f0 - 0.25 * step * dec + 1e-12 * std::abs(f0)) {
                x = xn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            break;
        if (stop && stop(x)) {
            r.stopped = true;
            break;
        }
        if (dec < 1e-9 && step == 1.0)
            break;
    }
    return r;
}

} // namespace

SdpSolution solve_sdp(const SdpProblem& p, double tol, int max_iter) {
    SdpOptions o;
    o.tol = tol;
    o.max_iter = max_iter;
    return solve_sdp(p, o);
}

SdpSolution solve_sdp(const SdpProblem& p, const SdpOptions& opt) {
    require(!p.lmis.empty(), "SDP needs at least one LMI");
    const int n = p.layout.size();
    require(n > 0, "SDP has no decision variables");
    for (const LmiBlock& b : p.lmis)
        for (const auto& [k, F] : b.terms)
            require(k >= 0 && k < n, "LMI references an unknown decision entry: " + b.tag);

    std::vector<BarrierBlock> cons;
    int cons_dim = 0;
    for (const LmiBlock& b : p.lmis) {
        cons.push_back(to_barrier(b.c0, b.terms, b.sense == Sense::NSD ? -1.0 : 1.0));
        cons_dim += b.dim();
    }
    std::vector<std::pair<BarrierBlock, double>> obj_ld;
    for (const auto& [a, w] : p.logdet) {
        std::vector<std::pair<int, Mat>> terms(a.terms.begin(), a.terms.end());
        obj_ld.emplace_back(to_barrier(a.c0, terms, 1.0), w);
    }

    SdpSolution sol;
    int used = 0;

    // Phase I: min s s.t. G_b(x) + s I >= 0, D_i(x) + s I >= 0, s >= -1.
    Barrier P1;
    P1.n = n + 1;
    P1.c = Vec::Zero(n + 1);
    P1.c(n) = 1.0;
    P1.bound = p.var_bound;
    auto add_shifted = [&](const BarrierBlock& b) {
        BarrierBlock s = b;
        s.F.emplace_back(n, Mat::Identity(b.G0.rows(), b.G0.cols()));
        P1.cons.push_back(s);
        P1.cons_dim += static_cast<int>(b.G0.rows());
    };
    for (const auto& b : cons)
        add_shifted(b);
    for (const auto& [b, w] : obj_ld)
        add_shifted(b);
    {
        BarrierBlock floor;
        floor.G0 = Mat::Ones(1, 1);
        floor.F.emplace_back(n, Mat::Ones(1, 1));
        P1.cons.push_back(floor);
        P1.cons_dim += 1;
    }
    Vec z = Vec::Zero(n + 1);
    double s0 = 0.0;
    for (const auto& b : P1.cons) {
        if (b.G0.rows() == 1 && b.F.size() == 1 && b.F[0].first == n)
            continue;
        s0 = std::max(s0, -min_eig(b.G0));
    }
    z(n) = s0 + 1.0;
    // interior target: a strictly feasible point with a small cushion
    const double cushion = std::min(1e-8, 0.1 * opt.tol);
    auto found = [&](const Vec& zz) { return zz(n) < -cushion; };
    bool feasible = found(z);
    double t = 1.0;
    while (!feasible && used < opt.max_iter) {
        CenterResult cr = center(P1, z, t, opt.max_iter - used, found);
        used += cr.iterations;
        if (cr.stopped || found(z)) {
            feasible = true;
            break;
        }
        if (P1.gap_dim() / t < 0.01 * opt.tol) {
            break;
        }
        t *= 10.0;
    }
    if (!feasible) {
        sol.x = z.head(n);
        sol.iterations = used;
        sol.residual = lmi_residual(p.lmis, sol.x, &sol.worst_tag);
        sol.status = SdpStatus::Infeasible;
        return sol;
    }

    Vec x = z.head(n);
    Barrier P2;
    P2.n = n;
    P2.c = p.c.size() == n ? p.c : Vec::Zero(n);
    P2.objective_logdet = obj_ld;
    P2.cons = cons;
    P2.cons_dim = cons_dim;
    P2.bound = p.var_bound;

    const bool has_objective = P2.c.cwiseAbs().maxCoeff() > 0.0 || !obj_ld.empty();
    bool converged = opt.feasibility_only || !has_objective;
    if (!converged) {
        t = 1.0;
        while (used < opt.max_iter) {
            CenterResult cr = center(P2, x, t, opt.max_iter - used, nullptr);
            used += cr.iterations;
            if (P2.gap_dim() / t < opt.gap) {
                converged = true;
                break;
            }
            t *= 10.0;
        }
    }

    sol.x = x;
    sol.iterations = used;
    sol.gap = converged && has_objective && !opt.feasibility_only ? P2.gap_dim() / t : 0.0;
    sol.objective = P2.c.dot(x);
    for (const auto& [b, w] : obj_ld) {
        Mat D = b.G0;
        for (const auto& [k, F] : b.F)
            D += x(k) * F;
        Eigen::LLT<Mat> llt(D);
        const Mat& L = llt.matrixLLT();
        double ld = 0.0;
        for (int i = 0; i < L.rows(); ++i)
            ld += std::log(L(i, i));
        sol.objective -= w * 2.0 * ld;
    }
    sol.residual = lmi_residual(p.lmis, x, &sol.worst_tag);
    if (sol.residual > opt.tol)
        sol.status = SdpStatus::Infeasible;
    else if (opt.feasibility_only || !has_objective)
        sol.status = SdpStatus::Feasible;
    else
        sol.status = converged ? SdpStatus::Optimal : SdpStatus::MaxIter;
    return sol;
}

// ---------------------------------------------------------------- LP

LpResult solve_lp_1d(const Vec& a, const Vec& b) {
    require(a.size() == b.size(), "LP row count mismatch");
    LpResult r;
    r.value = std::numeric_limits<double>::infinity();
    for (int j = 0; j < a.size(); ++j) {
        if (a(j) > 0.0) {
            const double ratio = b(j) / a(j);
            if (ratio < r.value) {
                r.value = ratio;
                r.binding_row = j;
            }
        } else if (b(j) < 0.0 && a(j) == 0.0) {
            r.status = LpStatus::Infeasible;
            return r;
        }
    }
    if (r.binding_row < 0) {
        r.status = LpStatus::Unbounded;
        return r;
    }
    // lower bounds from rows with negative coefficient
    for (int j = 0; j < a.size(); ++j)
        if (a(j) < 0.0 && b(j) / a(j) > r.value) {
            r.status = LpStatus::Infeasible;
            return r;
        }
    r.status = LpStatus::Optimal;
    r.x = Vec::Constant(1, r.value);
    return r;
}

namespace {

// Tableau simplex on max c^T y s.t. T y = rhs, y >= 0 with a given feasible basis. Bland's rule.
// Returns false when unbounded.
bool simplex_iterate(Mat& T, Vec& rhs, std::vector<int>& basis, const Vec& cost, int ncols) {
    const int m = static_cast<int>(T.rows());
    const double eps = 1e-12;
    for (int guard = 0; guard < 100000; ++guard) {
        // reduced costs
        int enter = -1;
        for (int j = 0; j < ncols; ++j) {
            double rc = cost(j);
            for (int i = 0; i < m; ++i)
                rc -= cost(basis[i]) * T(i, j);
            if (rc > eps) {
                enter = j;
                break;
            }
        }
        if (enter < 0)
            return true;
        int leave = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < m; ++i)
            if (T(i, enter) > eps) {
                const double ratio = rhs(i) / T(i, enter);
                if (leave < 0 || ratio < best - eps ||
                    (std::abs(ratio - best) <= eps && basis[i] < basis[leave])) {
                    best = ratio;
                    leave = i;
                }
            }
        if (leave < 0)
            return false;
        const double piv = T(leave, enter);
        T.row(leave) /= piv;
        rhs(leave) /= piv;
        for (int i = 0; i < m; ++i)
            if (i != leave && T(i, enter) != 0.0) {
                const double f = T(i, enter);
                T.row(i) -= f * T.row(leave);
                rhs(i) -= f * rhs(leave);
            }
        basis[leave] = enter;
    }
    return true;
}

} // namespace

LpResult solve_lp(const Vec& c, const Mat& A, const Vec& b) {
    const int n = static_cast<int>(c.size());
    const int m = static_cast<int>(A.rows());
    require(A.cols() == n && b.size() == m, "LP dimension mismatch");
    if (n == 1) {
        Vec a = A.col(0) * (c(0) >= 0 ? 1.0 : -1.0);
        LpResult r = solve_lp_1d(a, b);
        if (r.status == LpStatus::Optimal) {
            r.x(0) = c(0) >= 0 ? r.value : -r.value;
            r.value = c(0) * r.x(0);
        }
        return r;
    }
    // columns: x+ (n), x- (n), slack (m), artificial (m)
    const int nc = 2 * n + 2 * m;
    Mat T = Mat::Zero(m, nc);
    Vec rhs = b;
    std::vector<int> basis(m);
    for (int i = 0; i < m; ++i) {
        const double sgn = b(i) < 0 ? -1.0 : 1.0;
        T.block(i, 0, 1, n) = sgn * A.row(i);
        T.block(i, n, 1, n) = -sgn * A.row(i);
        T(i, 2 * n + i) = sgn;
        T(i, 2 * n + m + i) = 1.0;
        rhs(i) = sgn * b(i);
        basis[i] = 2 * n + m + i;
    }
    // phase 1: maximize -sum artificials
    Vec cost1 = Vec::Zero(nc);
    cost1.tail(m).setConstant(-1.0);
    simplex_iterate(T, rhs, basis, cost1, nc);
    double infeas = 0.0;
    for (int i = 0; i < m; ++i)
        if (basis[i] >= 2 * n + m)
            infeas += rhs(i);
    LpResult r;
    if (infeas > 1e-9 * std::max(1.0, b.cwiseAbs().maxCoeff())) {
        r.status = LpStatus::Infeasible;
        return r;
    }
    // phase 2 on the structural + slack columns only
    Vec cost2 = Vec::Zero(nc);
    cost2.head(n) = c;
    cost2.segment(n, n) = -c;
    for (int i = 0; i < m; ++i)
        if (basis[i] >= 2 * n + m)
            cost2(basis[i]) = 0.0;  // degenerate artificial at zero
    if (!simplex_iterate(T, rhs, basis, cost2, 2 * n + m)) {
        r.status = LpStatus::Unbounded;
        return r;
    }
    Vec y = Vec::Zero(nc);
    for (int i = 0; i < m; ++i)
        y(basis[i]) = rhs(i);
    r.x = y.head(n) - y.segment(n, n);
    r.value = c.dot(r.x);
    r.status = LpStatus::Optimal;
    const Vec slack = b - A * r.x;
    slack.minCoeff(&r.binding_row);
    return r;
}

// ---------------------------------------------------------------- 1-D searches

double bisect_multiplier(double lo, double hi, const std::function<bool(double)>& probe, int iters) {
    require(lo <= hi && iters >= 0, "bisection needs lo <= hi");
    if (probe(hi))
        return hi;
    if (!probe(lo))
        throw InfeasibleError("no feasible multiplier in range");
    for (int i = 0; i < iters; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (probe(mid))
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

double golden_minimize(double lo, double hi, const std::function<double(double)>& f, int iters) {
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int i = 0; i < iters; ++i) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    return f1 <= f2 ? x1 : x2;
}

} // namespace safe_nmpc
