#include "asap/optimize.hpp"

#include "asap/error.hpp"

#include <cmath>
#include <limits>
#include <utility>

namespace asap {

namespace {

constexpr double kGold = 1.618033988749895;
constexpr double kCGold = 0.3819660112501051;

struct Line {
    const std::function<double(const Eigen::VectorXd&)>& f;
    const Eigen::VectorXd& x;
    const Eigen::VectorXd& d;
    int& evals;
    double operator()(double a) const {
        ++evals;
        const double v = f(x + a * d);
        return std::isfinite(v) ? v : std::numeric_limits<double>::max();
    }
};

// Finds a < b < c (or reversed) with f(b) below both ends. Gives up after a
// bounded number of expansions and returns false.
bool bracket(const Line& g, double& a, double& b, double& c, double& fa, double& fb, double& fc) {
    a = 0.0;
    b = 1.0;
    fb = g(b);
    if (fb > fa) {
        std::swap(a, b);
        std::swap(fa, fb);
    }
    c = b + kGold * (b - a);
    fc = g(c);
    for (int n = 0; fb >= fc && n < 40; ++n) {
        a = b;
        fa = fb;
        b = c;
        fb = fc;
        c = b + kGold * (b - a);
        fc = g(c);
    }
    if (fb < fc) return true;
    return false;
}

// Brent's parabolic/golden line search on a bracket. Returns the abscissa.
double brent(const Line& g, double ax, double bx, double cx, double fbx, double tol, double& fmin) {
    double a = std::min(ax, cx), b = std::max(ax, cx);
    double x = bx, w = bx, v = bx, fx = fbx, fw = fbx, fv = fbx;
    double d = 0.0, e = 0.0;
    for (int it = 0; it < 100; ++it) {
        const double xm = 0.5 * (a + b);
        const double tol1 = tol + 1e-10 * std::abs(x), tol2 = 2.0 * tol1;
        if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) break;
        if (std::abs(e) > tol1) {
            const double r = (x - w) * (fx - fv);
            double q = (x - v) * (fx - fw);
            double p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0.0) p = -p;
            q = std::abs(q);
            const double etemp = e;
            e = d;
            if (std::abs(p) >= std::abs(0.5 * q * etemp) || p <= q * (a - x) || p >= q * (b - x)) {
                e = x >= xm ? a - x : b - x;
                d = kCGold * e;
            } else {
                d = p / q;
                const double u = x + d;
                if (u - a < tol2 || b - u < tol2) d = std::copysign(tol1, xm - x);
            }
        } else {
            e = x >= xm ? a - x : b - x;
            d = kCGold * e;
        }
        const double u = std::abs(d) >= tol1 ? x + d : x + std::copysign(tol1, d);
        const double fu = g(u);
        if (fu <= fx) {
            (u >= x ? a : b) = x;
            v = w;
            w = x;
            x = u;
            fv = fw;
            fw = fx;
            fx = fu;
        } else {
            (u < x ? a : b) = u;
            if (fu <= fw || w == x) {
                v = w;
                w = u;
                fv = fw;
                fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u;
                fv = fu;
            }
        }
    }
    fmin = fx;
    return x;
}

// Minimises along d from x, updating both in place; returns the new value.
double line_minimize(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd& x,
                     Eigen::VectorXd& d, double fx, const Eigen::VectorXd& tolerance, int& evals) {
    Line g{f, x, d, evals};
    double a, b, c, fa = fx, fb, fc;
    double step = 0.0, fnew = fx;
    if (bracket(g, a, b, c, fa, fb, fc)) {
        // Line tolerance: half the smallest per-parameter tolerance this direction touches.
        double tol = std::numeric_limits<double>::max();
        for (Eigen::Index i = 0; i < d.size(); ++i)
            if (d[i] != 0.0) tol = std::min(tol, 0.5 * tolerance[i] / std::abs(d[i]));
        step = brent(g, a, b, c, fb, tol, fnew);
    } else {
        // Monotone or flat: take the best point seen, if any improved.
        for (auto [s, v] : {std::pair{a, fa}, std::pair{b, fb}, std::pair{c, fc}})
            if (v < fnew) {
                fnew = v;
                step = s;
            }
    }
    if (fnew >= fx) return fx;
    d *= step;
    x += d;
    return fnew;
}

}  // namespace

PowellResult powell_minimize(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x0,
                             const PowellOptions& opt) {
    const Eigen::Index n = x0.size();
    if (opt.initial_step.size() != n || opt.tolerance.size() != n)
        throw ParameterError("Powell step and tolerance must match the parameter count");
    Eigen::MatrixXd dirs = opt.initial_step.asDiagonal();
    PowellResult r;
    r.x = x0;
    r.value = f(x0);
    r.evaluations = 1;
    if (!std::isfinite(r.value)) r.value = std::numeric_limits<double>::max();

    for (r.iterations = 0; r.iterations < opt.max_iter;) {
        ++r.iterations;
        const Eigen::VectorXd start = r.x;
        const double fstart = r.value;
        Eigen::Index big = 0;
        double biggest = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::VectorXd d = dirs.col(i);
            const double before = r.value;
            r.value = line_minimize(f, r.x, d, r.value, opt.tolerance, r.evaluations);
            if (before - r.value > biggest) {
                biggest = before - r.value;
                big = i;
            }
        }
        const Eigen::VectorXd moved = r.x - start;
        if ((moved.array().abs() < opt.tolerance.array()).all()) break;

        // Replace the direction of largest decrease by the net displacement
        // when the extrapolated point suggests it is worthwhile.
        const Eigen::VectorXd ext = 2.0 * r.x - start;
        const double fext = f(ext);
        ++r.evaluations;
        if (std::isfinite(fext) && fext < fstart) {
            const double t = 2.0 * (fstart - 2.0 * r.value + fext) * std::pow(fstart - r.value - biggest, 2) -
                             biggest * std::pow(fstart - fext, 2);
            if (t < 0.0) {
                Eigen::VectorXd d = moved;
                r.value = line_minimize(f, r.x, d, r.value, opt.tolerance, r.evaluations);
                dirs.col(big) = dirs.col(n - 1);
                dirs.col(n - 1) = d.norm() > 0.0 ? Eigen::VectorXd(d) : moved;
            }
        }
    }
    return r;
}

}  // namespace asap
