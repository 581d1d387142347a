#pragma once

#include "odebayes/spline_basis.hpp"
#include "odebayes/types.hpp"

#include <span>
#include <vector>

namespace odebayes {

/// Composite Gauss-Legendre rule on [0,1]: q nodes on each panel.
struct QuadratureRule {
    std::vector<double> breaks; // panel endpoints, ascending, from 0 to 1
    int order = 0;              // nodes per panel
    Vec nodes;
    Vec weights;

    Eigen::Index size() const noexcept { return nodes.size(); }
    /// Sum of weights * g(nodes).
    template <class G> double integrate(G&& g) const {
        double s = 0.0;
        for (Eigen::Index i = 0; i < nodes.size(); ++i) s += weights[i] * g(nodes[i]);
        return s;
    }
};

/// Nodes and weights of the q-point Gauss-Legendre rule on [-1, 1].
void gauss_legendre(int q, Vec& nodes, Vec& weights);

QuadratureRule composite_rule(std::span<const double> breaks, int q);
/// `panels` equal panels.
QuadratureRule uniform_rule(int panels, int q);
/// Panels are the knot intervals, each split into `subdivisions` pieces.
QuadratureRule knot_aligned_rule(const KnotVector& kv, int q = 10, int subdivisions = 1);

} // namespace odebayes
