#include "safe_nmpc/qp.hpp"

#include <algorithm>
#include <cmath>

namespace safe_nmpc {

namespace {

double max_step(const Vec& v, const Vec& dv) {
    double a = 1.0;
    for (int i = 0; i < v.size(); ++i)
        if (dv(i) < 0)
            a = std::min(a, -v(i) / dv(i));
    return a;
}

} // namespace

QpResult solve_qp(const QpProblem& p, const QpOptions& opt) {
    const int n = static_cast<int>(p.H.rows());
    const int me = static_cast<int>(p.A.rows());
    const int mi = static_cast<int>(p.C.rows());
    require(p.g.size() == n && p.H.cols() == n, "QP Hessian/gradient dimension mismatch");
    require(me == 0 || (p.A.cols() == n && p.b.size() == me), "QP equality dimension mismatch");
    require(mi == 0 || (p.C.cols() == n && p.d.size() == mi), "QP inequality dimension mismatch");
    const bool elastic = opt.elastic_penalty > 0 && mi > 0;
    const double Mp = opt.elastic_penalty;

    QpResult r;
    Vec x = Vec::Zero(n), lam = Vec::Zero(me);
    Vec s(mi), mu(mi), sig(elastic ? mi : 0), nu(elastic ? mi : 0);
    {
        const Vec cx = mi ? Vec(p.C * x) : Vec();
        for (int j = 0; j < mi; ++j) {
            const double viol = cx(j) - p.d(j);
            if (elastic) {
                sig(j) = std::max(viol, 0.0) + 1.0;
                s(j) = p.d(j) - cx(j) + sig(j);
                mu(j) = 0.5 * Mp;
                nu(j) = 0.5 * Mp;
            } else {
                s(j) = std::max(-viol, 1.0);
                mu(j) = 1.0;
            }
        }
    }
    const double gscale = 1.0 + p.g.cwiseAbs().maxCoeff();
    const double cscale = 1.0 + std::max(mi ? p.d.cwiseAbs().maxCoeff() : 0.0, me ? p.b.cwiseAbs().maxCoeff() : 0.0);

    auto residuals = [&](Vec& rx, Vec& rA, Vec& rC, Vec& rsig) {
        rx = p.H * x + p.g;
        if (me)
            rx += p.A.transpose() * lam;
        if (mi)
            rx += p.C.transpose() * mu;
        rA = me ? Vec(p.A * x - p.b) : Vec();
        rC = mi ? Vec(p.C * x + s - p.d) : Vec();
        if (elastic) {
            rC -= sig;
            rsig = Vec::Constant(mi, Mp) - mu - nu;
        } else {
            rsig = Vec();
        }
    };

    Vec rx, rA, rC, rsig;
    for (int it = 0; it < opt.max_iter; ++it) {
        residuals(rx, rA, rC, rsig);
        const double comp = mi ? (mu.dot(s) + (elastic ? nu.dot(sig) : 0.0)) / (elastic ? 2 * mi : mi) : 0.0;
        const double res_d = std::max(rx.size() ? rx.cwiseAbs().maxCoeff() : 0.0,
                                      rsig.size() ? rsig.cwiseAbs().maxCoeff() : 0.0);
        const double res_p = std::max(rA.size() ? rA.cwiseAbs().maxCoeff() : 0.0,
                                      rC.size() ? rC.cwiseAbs().maxCoeff() : 0.0);
        double comp_max = 0.0;
        for (int j = 0; j < mi; ++j)
            comp_max = std::max(comp_max, mu(j) * s(j) + (elastic ? nu(j) * sig(j) : 0.0));
        const double res = std::max(res_d, res_p);
        r.iterations = it;
        if (!std::isfinite(res) || !std::isfinite(comp))
            break;
        if (res_d <= opt.tol * gscale && res_p <= opt.tol * cscale && comp_max <= opt.tol * gscale) {
            r.status = QpStatus::Optimal;
            break;
        }
        // Scaling D = 1 / (s/mu + sig/nu) and the reduced KKT matrix.
        Vec Dinv(mi);
        for (int j = 0; j < mi; ++j)
            Dinv(j) = s(j) / mu(j) + (elastic ? sig(j) / nu(j) : 0.0);
        const Vec D = Dinv.cwiseInverse();
        Mat K = Mat::Zero(n + me, n + me);
        K.topLeftCorner(n, n) = p.H;
        if (mi)
            K.topLeftCorner(n, n) += p.C.transpose() * D.asDiagonal() * p.C;
        if (me) {
            K.block(0, n, n, me) = p.A.transpose();
            K.block(n, 0, me, n) = p.A;
        }
        Eigen::PartialPivLU<Mat> lu(K);

        // Solve for a given complementarity right-hand side (rs = mu s - target, rn = nu sig - target).
        auto direction = [&](const Vec& rs, const Vec& rn, Vec& dx, Vec& dlam, Vec& dmu, Vec& ds, Vec& dsig,
                             Vec& dnu) {
            Vec q(mi);
            for (int j = 0; j < mi; ++j) {
                q(j) = rC(j) - rs(j) / mu(j);
                if (elastic)
                    q(j) += (rn(j) + sig(j) * rsig(j)) / nu(j);
            }
            Vec rhs(n + me);
            rhs.head(n) = -rx;
            if (mi)
                rhs.head(n) -= p.C.transpose() * (D.asDiagonal() * q);
            if (me)
                rhs.tail(me) = -rA;
            const Vec sol = lu.solve(rhs);
            dx = sol.head(n);
            dlam = sol.tail(me);
            dmu = mi ? Vec(D.asDiagonal() * (p.C * dx + q)) : Vec();
            ds.resize(mi);
            for (int j = 0; j < mi; ++j)
                ds(j) = (-rs(j) - s(j) * dmu(j)) / mu(j);
            if (elastic) {
                dsig.resize(mi);
                dnu.resize(mi);
                for (int j = 0; j < mi; ++j) {
                    dsig(j) = (-rn(j) - sig(j) * rsig(j) + sig(j) * dmu(j)) / nu(j);
                    dnu(j) = rsig(j) - dmu(j);
                }
            }
        };

        Vec dx, dlam, dmu, ds, dsig, dnu;
        const Vec rs_aff = mu.cwiseProduct(s);
        const Vec rn_aff = elastic ? Vec(nu.cwiseProduct(sig)) : Vec();
        direction(rs_aff, rn_aff, dx, dlam, dmu, ds, dsig, dnu);
        if (mi == 0) {
            x += dx;
            lam += dlam;
            continue;
        }
        double a_aff = std::min(max_step(s, ds), max_step(mu, dmu));
        if (elastic)
            a_aff = std::min({a_aff, max_step(sig, dsig), max_step(nu, dnu)});
        double comp_aff = (mu + a_aff * dmu).dot(s + a_aff * ds);
        if (elastic)
            comp_aff += (nu + a_aff * dnu).dot(sig + a_aff * dsig);
        comp_aff /= elastic ? 2 * mi : mi;
        const double sigma_c = std::pow(std::max(comp_aff, 0.0) / comp, 3);
        const double target = sigma_c * comp;
        Vec rs = rs_aff + ds.cwiseProduct(dmu) - Vec::Constant(mi, target);
        Vec rn;
        if (elastic)
            rn = rn_aff + dsig.cwiseProduct(dnu) - Vec::Constant(mi, target);
        direction(rs, rn, dx, dlam, dmu, ds, dsig, dnu);
        double a = std::min(max_step(s, ds), max_step(mu, dmu));
        if (elastic)
            a = std::min({a, max_step(sig, dsig), max_step(nu, dnu)});
        a = std::min(1.0, 0.995 * a);
        x += a * dx;
        lam += a * dlam;
        mu += a * dmu;
        s += a * ds;
        if (elastic) {
            sig += a * dsig;
            nu += a * dnu;
        }
    }
    r.x = x;
    r.lambda = lam;
    r.mu = mu;
    r.sigma = sig;
    r.objective = 0.5 * x.dot(p.H * x) + p.g.dot(x) + (elastic ? Mp * sig.sum() : 0.0);
    if (r.status != QpStatus::Optimal && !elastic && mi) {
        const bool finite = x.allFinite() && s.allFinite();
        const double viol = finite ? (p.C * x - p.d).maxCoeff() : INFINITY;
        if (!finite || viol > 1e-6 * cscale || (rC.size() && rC.cwiseAbs().maxCoeff() > 1e-6 * cscale))
            r.status = QpStatus::Infeasible;
    }
    return r;
}

} // namespace safe_nmpc
