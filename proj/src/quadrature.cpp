#include "odebayes/quadrature.hpp"

#include "odebayes/error.hpp"

#include <cmath>

namespace odebayes {

void gauss_legendre(int q, Vec& nodes, Vec& weights) {
    if (q < 1) throw_invalid("gauss_legendre: order must be >= 1");
    // Golub-Welsch: eigen-decomposition of the Jacobi matrix.
    Mat jacobi = Mat::Zero(q, q);
    for (int i = 1; i < q; ++i) {
        const double b = i / std::sqrt(4.0 * i * i - 1.0);
        jacobi(i, i - 1) = b;
        jacobi(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(jacobi);
    nodes = es.eigenvalues();
    weights = 2.0 * es.eigenvectors().row(0).transpose().array().square();
    // Symmetrize against eigen-solver roundoff.
    for (int i = 0; i < q / 2; ++i) {
        const int j = q - 1 - i;
        const double x = 0.5 * (nodes[j] - nodes[i]);
        const double w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = weights[j] = w;
    }
    if (q % 2 == 1) nodes[q / 2] = 0.0;
}

QuadratureRule composite_rule(std::span<const double> breaks, int q) {
    if (breaks.size() < 2) throw_invalid("composite_rule: need at least two breakpoints");
    QuadratureRule rule;
    rule.breaks.assign(breaks.begin(), breaks.end());
    rule.order = q;
    Vec x, w;
    gauss_legendre(q, x, w);
    const auto panels = static_cast<Eigen::Index>(breaks.size() - 1);
    rule.nodes.resize(panels * q);
    rule.weights.resize(panels * q);
    for (Eigen::Index p = 0; p < panels; ++p) {
        const double a = breaks[static_cast<std::size_t>(p)];
        const double b = breaks[static_cast<std::size_t>(p + 1)];
        if (!(b > a)) throw_invalid("composite_rule: breakpoints must be strictly ascending");
        const double half = 0.5 * (b - a);
        const double mid = 0.5 * (a + b);
        rule.nodes.segment(p * q, q) = mid + half * x.array();
        rule.weights.segment(p * q, q) = half * w;
    }
    return rule;
}

QuadratureRule uniform_rule(int panels, int q) {
    if (panels < 1) throw_invalid("uniform_rule: panels must be >= 1");
    std::vector<double> breaks(static_cast<std::size_t>(panels + 1));
    for (int i = 0; i <= panels; ++i) breaks[static_cast<std::size_t>(i)] = static_cast<double>(i) / panels;
    return composite_rule(breaks, q);
}

QuadratureRule knot_aligned_rule(const KnotVector& kv, int q, int subdivisions) {
    if (subdivisions < 1) throw_invalid("knot_aligned_rule: subdivisions must be >= 1");
    return uniform_rule(kv.segments() * subdivisions, q);
}

} // namespace odebayes
