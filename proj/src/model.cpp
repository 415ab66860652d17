#include "safe_nmpc/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace safe_nmpc {

void SystemModel::check() const {
    require(n_x > 0 && n_u > 0, "model dimensions must be positive");
    require(E.rows() == n_x && E.cols() == n_w, "E must be n_x x n_w");
    require(C.rows() == n_y && C.cols() == n_x, "C must be n_y x n_x");
    require(F.rows() == n_y && F.cols() == n_eta, "F must be n_y x n_eta");
    require(M.rows() == n_p && M.cols() == n_x, "M must be n_p x n_x");
    require(w_bias.size() == n_w, "w_bias must have n_w entries");
}

namespace {

SystemModel scalar_integrator() {
    SystemModel m;
    m.name = "scalar_integrator";
    m.n_x = m.n_u = m.n_w = m.n_y = m.n_eta = m.n_p = 1;
    m.f = [](const Vec&, const Vec& u) { return Vec(u); };
    m.jac = [](const Vec&, const Vec&, Mat& A, Mat& B) {
        A = Mat::Zero(1, 1);
        B = Mat::Ones(1, 1);
    };
    m.E = m.C = m.F = m.M = Mat::Identity(1, 1);
    return m;
}

SystemModel double_integrator_2d() {
    SystemModel m;
    m.name = "double_integrator_2d";
    m.n_x = 4;
    m.n_u = 2;
    m.n_w = 2;
    m.n_y = 4;
    m.n_eta = 4;
    m.n_p = 2;
    m.f = [](const Vec& x, const Vec& u) {
        Vec d(4);
        d << x(2), x(3), u(0), u(1);
        return d;
    };
    m.jac = [](const Vec&, const Vec&, Mat& A, Mat& B) {
        A = Mat::Zero(4, 4);
        A(0, 2) = A(1, 3) = 1.0;
        B = Mat::Zero(4, 2);
        B(2, 0) = B(3, 1) = 1.0;
    };
    m.E = Mat::Zero(4, 2);
    m.E(2, 0) = m.E(3, 1) = 1.0;
    m.C = Mat::Identity(4, 4);
    m.F = Mat::Identity(4, 4);
    m.M = Mat::Zero(2, 4);
    m.M(0, 0) = m.M(1, 1) = 1.0;
    return m;
}

// x = (px, py, heading, speed), u = (acceleration, turn rate).
SystemModel unicycle() {
    SystemModel m;
    m.name = "unicycle";
    m.n_x = 4;
    m.n_u = 2;
    m.n_w = 2;
    m.n_y = 4;
    m.n_eta = 4;
    m.n_p = 2;
    m.f = [](const Vec& x, const Vec& u) {
        Vec d(4);
        d << x(3) * std::cos(x(2)), x(3) * std::sin(x(2)), u(1), u(0);
        return d;
    };
    m.jac = [](const Vec& x, const Vec&, Mat& A, Mat& B) {
        A = Mat::Zero(4, 4);
        const double c = std::cos(x(2)), s = std::sin(x(2));
        A(0, 2) = -x(3) * s;
        A(0, 3) = c;
        A(1, 2) = x(3) * c;
        A(1, 3) = s;
        B = Mat::Zero(4, 2);
        B(2, 1) = 1.0;
        B(3, 0) = 1.0;
    };
    // w = (heading rate, acceleration)
    m.E = Mat::Zero(4, 2);
    m.E(2, 0) = 1.0;
    m.E(3, 1) = 1.0;
    m.C = Mat::Identity(4, 4);
    m.F = Mat::Identity(4, 4);
    m.M = Mat::Zero(2, 4);
    m.M(0, 0) = m.M(1, 1) = 1.0;
    m.structure.nonlinear = {2};
    m.structure.linear = {3};
    return m;
}

} // namespace

std::vector<std::string> registered_models() {
    return {"double_integrator_2d", "unicycle", "scalar_integrator"};
}

SystemModel make_model(const std::string& name, const ModelOptions& opts) {
    SystemModel m;
    if (name == "scalar_integrator")
        m = scalar_integrator();
    else if (name == "double_integrator_2d")
        m = double_integrator_2d();
    else if (name == "unicycle")
        m = unicycle();
    else
        throw ConfigError("unknown model '" + name + "'");
    m.w_bias = opts.w_bias.size() ? opts.w_bias : Vec::Zero(m.n_w);
    if (opts.C.size()) {
        m.C = opts.C;
        m.n_y = static_cast<int>(opts.C.rows());
        if (!opts.F.size()) {
            m.F = Mat::Identity(m.n_y, m.n_y);
            m.n_eta = m.n_y;
        }
    }
    if (opts.F.size()) {
        m.F = opts.F;
        m.n_eta = static_cast<int>(opts.F.cols());
    }
    m.check();
    return m;
}

BoxSet::BoxSet(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {
    require(lower.size() == upper.size(), "box bounds have different lengths");
    for (int i = 0; i < lower.size(); ++i)
        require(lower(i) <= upper(i), "box lower bound exceeds upper bound");
}

// Lexicographic order: dimension 0 varies slowest, lower bound first.
std::vector<Vec> BoxSet::vertices() const {
    const int d = dim();
    std::vector<Vec> out;
    const long n = 1L << d;
    out.reserve(n);
    for (long k = 0; k < n; ++k) {
        Vec v(d);
        for (int i = 0; i < d; ++i) {
            const bool hi = (k >> (d - 1 - i)) & 1L;
            v(i) = hi ? upper(i) : lower(i);
        }
        out.push_back(v);
    }
    return out;
}

bool BoxSet::contains(const Vec& p, double tol) const {
    for (int i = 0; i < dim(); ++i)
        if (p(i) < lower(i) - tol || p(i) > upper(i) + tol)
            return false;
    return true;
}

BoxSet BoxSet::scaled(double c) const {
    const Vec mid = 0.5 * (lower + upper);
    return BoxSet(mid + c * (lower - mid), mid + c * (upper - mid));
}

double Polytope::min_margin(const Vec& y) const {
    if (rows() == 0)
        return std::numeric_limits<double>::infinity();
    return margins(y).minCoeff();
}

bool Polytope::normalized(double tol) const {
    for (int j = 0; j < rows(); ++j)
        if (std::abs(L.row(j).norm() - 1.0) > tol)
            return false;
    return true;
}

void Polytope::normalize() {
    for (int j = 0; j < rows(); ++j) {
        const double n = L.row(j).norm();
        require(n > 0.0, "polytope row with zero normal");
        L.row(j) /= n;
        l(j) /= n;
    }
}

const Polytope& ObstacleSchedule::for_node(int k) const {
    require(!stages.empty(), "empty obstacle schedule");
    return stages[std::min<size_t>(static_cast<size_t>(k), stages.size() - 1)];
}

Polytope system_rows(const BoxSet& u_box, const BoxSet& x_box) {
    const int nu = u_box.dim(), nx = x_box.dim(), nz = nu + nx;
    Polytope P;
    P.L = Mat::Zero(2 * nz, nz);
    P.l = Vec::Zero(2 * nz);
    int j = 0;
    for (int i = 0; i < nz; ++i) {
        const double lo = i < nu ? u_box.lower(i) : x_box.lower(i - nu);
        const double hi = i < nu ? u_box.upper(i) : x_box.upper(i - nu);
        P.L(j, i) = 1.0;
        P.l(j++) = hi;
        P.L(j, i) = -1.0;
        P.l(j++) = -lo;
    }
    return P;
}

RefPoint ReferenceTrajectory::at(double time) const {
    if (exact)
        return exact(time);
    require(!t.empty(), "empty reference trajectory");
    if (time <= t.front())
        return {x.front(), xdot.front(), u.front()};
    if (time >= t.back())
        return {x.back(), xdot.back(), u.back()};
    const auto it = std::upper_bound(t.begin(), t.end(), time);
    const size_t k = static_cast<size_t>(it - t.begin()) - 1;
    const double h = t[k + 1] - t[k];
    const double s = (time - t[k]) / h;
    // cubic Hermite on states, linear on inputs
    const double h00 = 2 * s * s * s - 3 * s * s + 1, h10 = s * s * s - 2 * s * s + s;
    const double h01 = -2 * s * s * s + 3 * s * s, h11 = s * s * s - s * s;
    const double d00 = (6 * s * s - 6 * s) / h, d10 = 3 * s * s - 4 * s + 1;
    const double d01 = (-6 * s * s + 6 * s) / h, d11 = 3 * s * s - 2 * s;
    RefPoint r;
    r.x = h00 * x[k] + h10 * h * xdot[k] + h01 * x[k + 1] + h11 * h * xdot[k + 1];
    r.xdot = d00 * x[k] + d10 * xdot[k] + d01 * x[k + 1] + d11 * xdot[k + 1];
    r.u = (1 - s) * u[k] + s * u[k + 1];
    return r;
}

double ReferenceTrajectory::feasibility_residual(const SystemModel& m) const {
    double worst = 0.0;
    for (size_t k = 0; k + 1 < t.size(); ++k) {
        const RefPoint r = at(0.5 * (t[k] + t[k + 1]));
        const Vec res = r.xdot - m.f(r.x, r.u) - m.E * m.w_bias;
        worst = std::max(worst, res.norm());
    }
    return worst;
}

ReferenceTrajectory sample_reference(std::function<RefPoint(double)> gen, double duration, double dt) {
    require(dt > 0 && duration > 0, "reference duration and spacing must be positive");
    ReferenceTrajectory ref;
    const int n = static_cast<int>(std::llround(duration / dt));
    for (int k = 0; k <= n; ++k) {
        const double tk = k * dt;
        RefPoint p = gen(tk);
        ref.t.push_back(tk);
        ref.x.push_back(p.x);
        ref.xdot.push_back(p.xdot);
        ref.u.push_back(p.u);
    }
    ref.exact = std::move(gen);
    return ref;
}

namespace {

// Position-level generators need the model layout: positions in M, velocities next (integrators).
void check_integrator_layout(const SystemModel& m) {
    require(m.name == "double_integrator_2d" || m.name == "scalar_integrator",
            "polynomial/line references need an integrator model");
}

} // namespace

ReferenceTrajectory polynomial_reference(const SystemModel& m, const Vec& p0, const Vec& p1,
                                         double move_time, double duration, double dt) {
    check_integrator_layout(m);
    require(p0.size() == m.n_p && p1.size() == m.n_p, "reference endpoints must match n_p");
    require(move_time > 0, "move time must be positive");
    const Vec wb = m.E * m.w_bias;
    const Vec d = p1 - p0;
    auto gen = [m, p0, d, move_time, wb](double t) {
        const double s = std::clamp(t / move_time, 0.0, 1.0);
        const bool moving = t > 0.0 && t < move_time;
        const double T = move_time;
        const double sig = s * s * s * (10 - 15 * s + 6 * s * s);
        const double dsig = moving ? 30 * s * s * (1 - s) * (1 - s) / T : 0.0;
        const double ddsig = moving ? 60 * s * (1 - s) * (1 - 2 * s) / (T * T) : 0.0;
        const double dddsig = moving ? 60 * (1 - 6 * s + 6 * s * s) / (T * T * T) : 0.0;
        RefPoint r;
        if (m.name == "scalar_integrator") {
            r.x = p0 + sig * d;
            r.xdot = dsig * d;
            r.u = r.xdot - wb;
        } else {
            const int np = m.n_p;
            r.x = Vec(2 * np);
            r.x << p0 + sig * d, dsig * d;
            r.xdot = Vec(2 * np);
            r.xdot << dsig * d, ddsig * d;
            r.u = ddsig * d - wb.tail(np);
        }
        (void)dddsig;
        return r;
    };
    return sample_reference(gen, duration, dt);
}

ReferenceTrajectory line_reference(const SystemModel& m, const Vec& p0, const Vec& vel,
                                   double duration, double dt) {
    check_integrator_layout(m);
    require(p0.size() == m.n_p && vel.size() == m.n_p, "line reference must match n_p");
    const Vec wb = m.E * m.w_bias;
    auto gen = [m, p0, vel, wb](double t) {
        RefPoint r;
        if (m.name == "scalar_integrator") {
            r.x = p0 + t * vel;
            r.xdot = vel;
            r.u = vel - wb;
        } else {
            const int np = m.n_p;
            r.x = Vec(2 * np);
            r.x << p0 + t * vel, vel;
            r.xdot = Vec(2 * np);
            r.xdot << vel, Vec::Zero(np);
            r.u = -wb.tail(np);
        }
        return r;
    };
    return sample_reference(gen, duration, dt);
}

ReferenceTrajectory circle_reference(const SystemModel& m, const Vec& center, double radius,
                                     double omega, double phase, double duration, double dt) {
    require(m.name == "unicycle", "circle reference needs the unicycle model");
    require(center.size() == 2 && radius > 0, "circle needs a 2D center and positive radius");
    const Vec wb = m.E * m.w_bias;
    auto gen = [center, radius, omega, phase, wb](double t) {
        const double ph = omega * t + phase;
        const double speed = radius * omega;
        RefPoint r;
        r.x = Vec(4);
        r.x << center(0) + radius * std::cos(ph), center(1) + radius * std::sin(ph),
            ph + 0.5 * std::numbers::pi, speed;
        r.xdot = Vec(4);
        r.xdot << -speed * std::sin(ph), speed * std::cos(ph), omega, 0.0;
        r.u = Vec(2);
        r.u << -wb(3), omega - wb(2);
        return r;
    };
    return sample_reference(gen, duration, dt);
}

Vec eval_dynamics(const SystemModel& m, const Vec& x, const Vec& u, const Vec* w) {
    require(x.size() == m.n_x && u.size() == m.n_u, "state/input dimension mismatch");
    Vec d = m.f(x, u);
    if (w) {
        require(w->size() == m.n_w, "disturbance dimension mismatch");
        d += m.E * (*w);
    }
    return d;
}

Vec output_measure(const SystemModel& m, const Vec& x, const Vec& eta) {
    require(x.size() == m.n_x && eta.size() == m.n_eta, "output dimension mismatch");
    return m.C * x + m.F * eta;
}

Vec rk4_step(const std::function<Vec(double, const Vec&)>& g, double t, const Vec& y, double h) {
    const Vec k1 = g(t, y);
    const Vec k2 = g(t + 0.5 * h, y + 0.5 * h * k1);
    const Vec k3 = g(t + 0.5 * h, y + 0.5 * h * k2);
    const Vec k4 = g(t + h, y + h * k3);
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

void check_finite(const Vec& v, const std::string& what) {
    for (int i = 0; i < v.size(); ++i)
        if (!std::isfinite(v(i)))
            throw NumericError(what + ": non-finite component " + std::to_string(i), i);
}

Vec integrate_step(const SystemModel& m, const Vec& x, const Vec& u, const Vec& w, double dt,
                   int substeps) {
    require(dt > 0 && substeps >= 1, "integration step must be positive");
    require(x.size() == m.n_x && u.size() == m.n_u, "state/input dimension mismatch");
    const Vec ew = w.size() ? Vec(m.E * w) : Vec::Zero(m.n_x);
    const double h = dt / substeps;
    Vec y = x;
    for (int s = 0; s < substeps; ++s) {
        const Vec k1 = m.f(y, u) + ew;
        const Vec k2 = m.f(y + 0.5 * h * k1, u) + ew;
        const Vec k3 = m.f(y + 0.5 * h * k2, u) + ew;
        const Vec k4 = m.f(y + h * k3, u) + ew;
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    check_finite(y, "integrate_step");
    return y;
}

Vec integrate_step_sens(const SystemModel& m, const Vec& x, const Vec& u, const Vec& w, double dt,
                        int substeps, Mat& dx, Mat& du) {
    require(dt > 0 && substeps >= 1, "integration step must be positive");
    const int nx = m.n_x, nu = m.n_u;
    const Vec ew = w.size() ? Vec(m.E * w) : Vec::Zero(nx);
    const double h = dt / substeps;
    Vec y = x;
    dx = Mat::Identity(nx, nx);
    du = Mat::Zero(nx, nu);
    Mat A, B;
    for (int s = 0; s < substeps; ++s) {
        // stage derivatives with respect to the substep start state y and input u
        const Vec k1 = m.f(y, u) + ew;
        m.jac(y, u, A, B);
        const Mat k1x = A, k1u = B;
        const Vec y2 = y + 0.5 * h * k1;
        const Vec k2 = m.f(y2, u) + ew;
        m.jac(y2, u, A, B);
        const Mat k2x = A * (Mat::Identity(nx, nx) + 0.5 * h * k1x);
        const Mat k2u = A * (0.5 * h * k1u) + B;
        const Vec y3 = y + 0.5 * h * k2;
        const Vec k3 = m.f(y3, u) + ew;
        m.jac(y3, u, A, B);
        const Mat k3x = A * (Mat::Identity(nx, nx) + 0.5 * h * k2x);
        const Mat k3u = A * (0.5 * h * k2u) + B;
        const Vec y4 = y + h * k3;
        const Vec k4 = m.f(y4, u) + ew;
        m.jac(y4, u, A, B);
        const Mat k4x = A * (Mat::Identity(nx, nx) + h * k3x);
        const Mat k4u = A * (h * k3u) + B;
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        const Mat Sx = Mat::Identity(nx, nx) + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        const Mat Su = (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        du = Sx * du + Su;
        dx = Sx * dx;
    }
    check_finite(y, "integrate_step");
    return y;
}

ObstacleSchedule build_corridor(const std::vector<Vec>& path, double half_width, int N) {
    require(N >= 1, "corridor needs at least one stage");
    require(static_cast<int>(path.size()) >= N + 1, "corridor path needs N+1 points");
    require(half_width > 0, "corridor half width must be positive");
    const int np = static_cast<int>(path[0].size());
    ObstacleSchedule S;
    for (int k = 0; k < N; ++k) {
        Polytope P;
        P.L = Mat::Zero(2 * np, np);
        P.l = Vec::Zero(2 * np);
        for (int d = 0; d < np; ++d) {
            const double lo = std::min(path[k](d), path[k + 1](d)) - half_width;
            const double hi = std::max(path[k](d), path[k + 1](d)) + half_width;
            P.L(2 * d, d) = 1.0;
            P.l(2 * d) = hi;
            P.L(2 * d + 1, d) = -1.0;
            P.l(2 * d + 1) = -lo;
        }
        S.stages.push_back(P);
    }
    return S;
}

bool corridor_contains_shifted(const ObstacleSchedule& next, const std::vector<Vec>& prev_positions,
                               double tol) {
    for (int k = 0; k < next.size(); ++k) {
        if (k + 1 >= static_cast<int>(prev_positions.size()))
            break;
        if (next.stages[k].min_margin(prev_positions[k + 1]) < -tol)
            return false;
    }
    return true;
}

std::vector<Vec> grid_domain(const BoxSet& box, int points_per_nonlinear_dim,
                             const std::vector<int>& linear_dims,
                             const std::vector<int>& nonlinear_dims) {
    require(box.dim() > 0, "empty box for grid");
    require(nonlinear_dims.empty() || points_per_nonlinear_dim >= 2,
            "need at least two points per gridded dimension");
    std::vector<std::vector<double>> axes(box.dim(), std::vector<double>{0.0});
    for (int d : linear_dims)
        axes[d] = {box.lower(d), box.upper(d)};
    for (int d : nonlinear_dims) {
        axes[d].clear();
        for (int i = 0; i < points_per_nonlinear_dim; ++i)
            axes[d].push_back(box.lower(d) + (box.upper(d) - box.lower(d)) * i /
                                                  (points_per_nonlinear_dim - 1));
    }
    std::vector<Vec> pts{Vec::Zero(box.dim())};
    for (int d = 0; d < box.dim(); ++d) {
        std::vector<Vec> next;
        for (const Vec& p : pts)
            for (double v : axes[d]) {
                Vec q = p;
                q(d) = v;
                next.push_back(q);
            }
        pts.swap(next);
    }
    return pts;
}

} // namespace safe_nmpc
