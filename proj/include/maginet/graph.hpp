// SPDX-License-Identifier: Apache-2.0
//
// Traffic graph and the spectral machinery used by the Chebyshev graph
// convolution: combinatorial Laplacian, power-iteration estimate of its
// largest eigenvalue, scaled Laplacian and the Chebyshev polynomial basis.
#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "maginet/errors.hpp"
#include "maginet/tensor.hpp"

namespace maginet {

/// Square row-major matrix.
struct DenseMatrix {
    std::size_t n = 0;
    std::vector<double> values;

    DenseMatrix() = default;
    explicit DenseMatrix(std::size_t size, double fill = 0.0) : n(size), values(size * size, fill) {}

    static DenseMatrix identity(std::size_t size) {
        DenseMatrix m(size);
        for (std::size_t i = 0; i < size; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }

    DenseMatrix operator*(const DenseMatrix& other) const {
        DenseMatrix out(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k) {
                const double a = (*this)(i, k);
                if (a == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) out(i, j) += a * other(k, j);
            }
        return out;
    }

    std::vector<double> apply(const std::vector<double>& v) const {
        std::vector<double> out(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i] += (*this)(i, j) * v[j];
        return out;
    }

    Tensor to_tensor() const { return Tensor::from_data({n, n}, values); }
};

/// Undirected weighted graph over nodes 0..n-1.
class TrafficGraph {
public:
    TrafficGraph() = default;

    /// Validates and stores an adjacency matrix (nonnegative, finite; zero
    /// diagonal unless allow_self_loops).
    explicit TrafficGraph(DenseMatrix adjacency, bool allow_self_loops = false)
        : adjacency_(std::move(adjacency)), degree_(adjacency_.n, 0.0) {
        const std::size_t n = adjacency_.n;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double w = adjacency_(i, j);
                if (!std::isfinite(w) || w < 0.0) {
                    throw InputError("adjacency entry (" + std::to_string(i) + "," + std::to_string(j) +
                                     ") must be finite and nonnegative");
                }
                if (i == j && w != 0.0 && !allow_self_loops) {
                    throw InputError("adjacency has a self-loop at node " + std::to_string(i));
                }
                degree_[i] += w;
            }
        }
    }

    static TrafficGraph edgeless(std::size_t n) { return TrafficGraph(DenseMatrix(n)); }

    std::size_t n_nodes() const { return adjacency_.n; }
    const DenseMatrix& adjacency() const { return adjacency_; }
    const std::vector<double>& degree() const { return degree_; }

    bool is_symmetric() const {
        for (std::size_t i = 0; i < n_nodes(); ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (adjacency_(i, j) != adjacency_(j, i)) return false;
        return true;
    }

    /// L = D - A.
    DenseMatrix laplacian() const {
        DenseMatrix l(n_nodes());
        for (std::size_t i = 0; i < n_nodes(); ++i) {
            for (std::size_t j = 0; j < n_nodes(); ++j) l(i, j) = -adjacency_(i, j);
            l(i, i) += degree_[i];
        }
        return l;
    }

    /// Adjacency with rows scaled to sum 1; rows of isolated nodes stay zero.
    DenseMatrix row_normalized() const {
        DenseMatrix out(n_nodes());
        for (std::size_t i = 0; i < n_nodes(); ++i) {
            if (degree_[i] <= 0.0) continue;
            for (std::size_t j = 0; j < n_nodes(); ++j) out(i, j) = adjacency_(i, j) / degree_[i];
        }
        return out;
    }

    /// Same graph with nodes relabeled: new node i is old node perm[i].
    TrafficGraph permuted(const std::vector<std::size_t>& perm) const {
        DenseMatrix a(n_nodes());
        for (std::size_t i = 0; i < n_nodes(); ++i)
            for (std::size_t j = 0; j < n_nodes(); ++j) a(i, j) = adjacency_(perm[i], perm[j]);
        return TrafficGraph(std::move(a), true);
    }

private:
    DenseMatrix adjacency_;
    std::vector<double> degree_;
};

struct PowerIterationOptions {
    double tolerance = 1e-9;
    std::size_t max_iterations = 10000;
};

/// Dominant eigenvalue (largest magnitude) of a symmetric matrix by power
/// iteration with Rayleigh quotients. Converged when successive estimates
/// differ by at most tolerance * max(1, |estimate|). After that the iterate
/// is refined until the estimate stops moving (within the same iteration
/// budget), so relabelled copies of a graph agree to rounding error.
inline double power_iteration(const DenseMatrix& m, const PowerIterationOptions& opts = {}) {
    constexpr double kRefineTolerance = 1e-15;
    const std::size_t n = m.n;
    if (n == 0) return 0.0;
    // Fixed pseudo-random start so that no structured eigenvector (such as
    // the constant null vector of a Laplacian) can absorb it.
    std::mt19937_64 rng(0x5eedULL);
    std::uniform_real_distribution<double> unit(0.5, 1.5);
    std::vector<double> v(n);
    for (auto& x : v) x = unit(rng);

    auto normalize = [](std::vector<double>& x) {
        double s = 0.0;
        for (double e : x) s += e * e;
        s = std::sqrt(s);
        if (s == 0.0) return false;
        for (double& e : x) e /= s;
        return true;
    };
    normalize(v);
    double estimate = 0.0;
    bool converged = false;
    for (std::size_t it = 1; it <= opts.max_iterations; ++it) {
        std::vector<double> w = m.apply(v);
        double rayleigh = 0.0;
        for (std::size_t i = 0; i < n; ++i) rayleigh += v[i] * w[i];
        if (!normalize(w)) return 0.0;  // v lies in the null space
        v = std::move(w);
        if (it > 1) {
            const double change = std::fabs(rayleigh - estimate);
            const double scale = std::max(1.0, std::fabs(rayleigh));
            converged = converged || change <= opts.tolerance * scale;
            if (converged && change <= kRefineTolerance * scale) return rayleigh;
        }
        estimate = rayleigh;
    }
    if (converged) return estimate;
    throw NumericError("power iteration did not converge after " + std::to_string(opts.max_iterations) +
                       " iterations (last estimate " + std::to_string(estimate) + ")");
}

struct ScaledLaplacian {
    DenseMatrix matrix;
    double lambda_max = 0.0;
};

inline constexpr double kEdgelessLambdaThreshold = 1e-12;
inline constexpr double kEdgelessLambdaFallback = 2.0;

/// L~ = (2 / lambda_max) L - I with lambda_max estimated on L = D - A. A
/// (near-)edgeless graph uses lambda_max = 2, giving L~ = -I.
inline ScaledLaplacian scaled_laplacian(const TrafficGraph& g, const PowerIterationOptions& opts = {}) {
    const DenseMatrix l = g.laplacian();
    double lambda = power_iteration(l, opts);
    if (lambda < kEdgelessLambdaThreshold) lambda = kEdgelessLambdaFallback;
    ScaledLaplacian out{DenseMatrix(g.n_nodes()), lambda};
    for (std::size_t i = 0; i < g.n_nodes(); ++i)
        for (std::size_t j = 0; j < g.n_nodes(); ++j)
            out.matrix(i, j) = (2.0 / lambda) * l(i, j) - (i == j ? 1.0 : 0.0);
    return out;
}

/// T_0(L~) .. T_{K-1}(L~), stored as constant n×n tensors.
struct ChebyshevBasis {
    std::size_t order = 0;
    double lambda_max = 0.0;
    std::vector<DenseMatrix> matrices;
    std::vector<Tensor> tensors;
};

inline ChebyshevBasis chebyshev_basis(const DenseMatrix& scaled, std::size_t order, double lambda_max = 0.0) {
    if (order < 1) throw ContractError("chebyshev_basis: order must be at least 1");
    ChebyshevBasis basis;
    basis.order = order;
    basis.lambda_max = lambda_max;
    basis.matrices.push_back(DenseMatrix::identity(scaled.n));
    if (order > 1) basis.matrices.push_back(scaled);
    for (std::size_t k = 2; k < order; ++k) {
        DenseMatrix next = scaled * basis.matrices[k - 1];
        const DenseMatrix& prev2 = basis.matrices[k - 2];
        for (std::size_t i = 0; i < next.values.size(); ++i) next.values[i] = 2.0 * next.values[i] - prev2.values[i];
        basis.matrices.push_back(std::move(next));
    }
    for (const auto& m : basis.matrices) basis.tensors.push_back(m.to_tensor());
    return basis;
}

inline ChebyshevBasis chebyshev_basis(const TrafficGraph& g, std::size_t order) {
    const auto scaled = scaled_laplacian(g);
    return chebyshev_basis(scaled.matrix, order, scaled.lambda_max);
}

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace detail

/// Parses an edge list ("src,dst,weight" header, one edge per line; lines
/// starting with '#' are comments). Edges are symmetrized, self-loops are
/// dropped, and a pair listed twice with different weights is rejected.
inline TrafficGraph parse_adjacency(std::istream& in, std::size_t n_nodes, const std::string& source = "<stream>") {
    DenseMatrix a(n_nodes);
    std::map<std::pair<std::size_t, std::size_t>, double> seen;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            if (t != "src,dst,weight") {
                throw InputError(source + ":" + std::to_string(line_no) + ": expected header 'src,dst,weight'");
            }
            continue;
        }
        const auto cells = detail::split_csv_line(t);
        auto bad = [&](const std::string& why) {
            return InputError(source + ":" + std::to_string(line_no) + ": " + why);
        };
        if (cells.size() != 3) throw bad("expected 3 fields");
        std::size_t src = 0, dst = 0;
        double w = 0.0;
        try {
            std::size_t pos = 0;
            long long s = std::stoll(cells[0], &pos);
            if (pos != cells[0].size() || s < 0) throw bad("invalid node id '" + cells[0] + "'");
            long long d = std::stoll(cells[1], &pos);
            if (pos != cells[1].size() || d < 0) throw bad("invalid node id '" + cells[1] + "'");
            w = std::stod(cells[2], &pos);
            if (pos != cells[2].size()) throw bad("invalid weight '" + cells[2] + "'");
            src = static_cast<std::size_t>(s);
            dst = static_cast<std::size_t>(d);
        } catch (const std::logic_error&) {
            throw bad("non-numeric field");
        }
        if (src >= n_nodes || dst >= n_nodes) {
            throw bad("node id out of range [0, " + std::to_string(n_nodes) + ")");
        }
        if (!std::isfinite(w) || w < 0.0) throw bad("weight must be finite and nonnegative");
        if (src == dst) continue;
        const auto key = std::minmax(src, dst);
        auto [it, inserted] = seen.emplace(key, w);
        if (!inserted && it->second != w) throw bad("conflicting duplicate edge");
        a(src, dst) = w;
        a(dst, src) = w;
    }
    return TrafficGraph(std::move(a));
}

inline TrafficGraph load_adjacency(const std::string& path, std::size_t n_nodes) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open adjacency file " + path);
    return parse_adjacency(in, n_nodes, path);
}

/// Writes the upper triangle of a symmetric graph as an edge list.
inline void write_adjacency(std::ostream& out, const TrafficGraph& g) {
    out << "src,dst,weight\n";
    out.precision(17);
    for (std::size_t i = 0; i < g.n_nodes(); ++i)
        for (std::size_t j = i + 1; j < g.n_nodes(); ++j)
            if (g.adjacency()(i, j) != 0.0) out << i << ',' << j << ',' << g.adjacency()(i, j) << '\n';
}

/// Corridor graph: node i linked to i+1, plus seeded random chords with
/// probability chord_prob. Binary weights.
inline TrafficGraph corridor_graph(std::size_t n, double chord_prob, std::uint64_t seed) {
    DenseMatrix a(n);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i + 1 < n; ++i) a(i, i + 1) = a(i + 1, i) = 1.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 2; j < n; ++j)
            if (u(rng) < chord_prob) a(i, j) = a(j, i) = 1.0;
    return TrafficGraph(std::move(a));
}

}  // namespace maginet
