// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives over maginet::Tensor.
//
// Broadcasting is restricted to leading dimensions: in binary elementwise
// ops the smaller operand's shape must be a suffix of the larger's, and in
// matmul the batch shape of one operand must be a suffix of the other's.
// Anything else needs an explicit reshape.
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "maginet/tensor.hpp"

namespace maginet {

namespace detail {

// y += a * x over n entries
inline void axpy(double a, const double* __restrict x, double* __restrict y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class BinaryKind { add, sub, mul };

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
    const bool a_big = a.numel() >= b.numel();
    const Shape& big = a_big ? a.shape() : b.shape();
    const Shape& small = a_big ? b.shape() : a.shape();
    if (!is_suffix(small, big)) {
        throw DimensionError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " are not broadcastable over leading dims");
    }
    const std::size_t n = shape_numel(big);
    const std::size_t na = a.numel();
    const std::size_t nb = b.numel();
    std::vector<double> out(n);
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = ad[i % na];
        const double y = bd[i % nb];
        switch (kind) {
            case BinaryKind::add: out[i] = x + y; break;
            case BinaryKind::sub: out[i] = x - y; break;
            case BinaryKind::mul: out[i] = x * y; break;
        }
    }
    return make_result(big, std::move(out), {a, b}, [kind, n, na, nb](Node& self) {
        const auto& g = self.grad;
        const auto& xa = self.inputs[0]->data;
        const auto& xb = self.inputs[1]->data;
        if (double* ga = input_grad(self, 0)) {
            for (std::size_t i = 0; i < n; ++i) {
                ga[i % na] += kind == BinaryKind::mul ? g[i] * xb[i % nb] : g[i];
            }
        }
        if (double* gb = input_grad(self, 1)) {
            for (std::size_t i = 0; i < n; ++i) {
                switch (kind) {
                    case BinaryKind::add: gb[i % nb] += g[i]; break;
                    case BinaryKind::sub: gb[i % nb] -= g[i]; break;
                    case BinaryKind::mul: gb[i % nb] += g[i] * xa[i % na]; break;
                }
            }
        }
    });
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df_from_xy) {
    std::vector<double> out(x.numel());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
    return make_result(x.shape(), std::move(out), {x}, [df_from_xy](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        const auto& xv = self.inputs[0]->data;
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            gx[i] += self.grad[i] * df_from_xy(xv[i], self.data[i]);
        }
    });
}

inline std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::add, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::sub, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::mul, "mul"); }

inline Tensor scale(const Tensor& x, double c) {
    return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
    return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor abs(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor square(const Tensor& x) {
    return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// Batched matrix product a[..., p, q] · b[..., q, r]. The batch shape of
/// one operand must be a suffix of the other's.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    auto fail = [&] {
        throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    };
    if (sa.size() < 2 || sb.size() < 2) fail();
    const std::size_t q = sa[sa.size() - 1];
    if (sb[sb.size() - 2] != q) fail();
    const std::size_t r = sb[sb.size() - 1];
    Shape batch_a(sa.begin(), sa.end() - 2);
    Shape batch_b(sb.begin(), sb.end() - 2);
    if (!detail::is_suffix(batch_a, batch_b) && !detail::is_suffix(batch_b, batch_a)) fail();

    std::size_t p = sa[sa.size() - 2];
    std::size_t ba = shape_numel(batch_a);
    std::size_t bb = shape_numel(batch_b);
    Shape out_shape = batch_a.size() >= batch_b.size() ? batch_a : batch_b;
    out_shape.push_back(p);
    out_shape.push_back(r);

    // A stack of matrices times one matrix is a single tall product.
    if (bb == 1 && ba > 1) {
        p *= ba;
        ba = 1;
    }
    const std::size_t bo = std::max(ba, bb);

    std::vector<double> out(bo * p * r, 0.0);
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t o = 0; o < bo; ++o) {
        const double* A = ad.data() + (o % ba) * p * q;
        const double* B = bd.data() + (o % bb) * q * r;
        double* C = out.data() + o * p * r;
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t k = 0; k < q; ++k) {
                const double aik = A[i * q + k];
                if (aik == 0.0) continue;
                detail::axpy(aik, B + k * r, C + i * r, r);
            }
        }
    }
    return detail::make_result(out_shape, std::move(out), {a, b}, [p, q, r, ba, bb, bo](detail::Node& self) {
        const double* G = self.grad.data();
        const double* Ad = self.inputs[0]->data.data();
        const double* Bd = self.inputs[1]->data.data();
        double* ga = detail::input_grad(self, 0);
        double* gb = detail::input_grad(self, 1);
        std::vector<double> bt(ga ? q * r : 0);
        for (std::size_t o = 0; o < bo; ++o) {
            const double* Go = G + o * p * r;
            const double* A = Ad + (o % ba) * p * q;
            const double* B = Bd + (o % bb) * q * r;
            if (ga) {
                // GA += G · Bᵀ, row by row against a transposed copy of B
                for (std::size_t k = 0; k < q; ++k)
                    for (std::size_t j = 0; j < r; ++j) bt[j * q + k] = B[k * r + j];
                double* GA = ga + (o % ba) * p * q;
                for (std::size_t i = 0; i < p; ++i) {
                    for (std::size_t j = 0; j < r; ++j) {
                        const double g = Go[i * r + j];
                        if (g != 0.0) detail::axpy(g, bt.data() + j * q, GA + i * q, q);
                    }
                }
            }
            if (gb) {
                double* GB = gb + (o % bb) * q * r;
                for (std::size_t i = 0; i < p; ++i) {
                    for (std::size_t k = 0; k < q; ++k) {
                        const double aik = A[i * q + k];
                        if (aik != 0.0) detail::axpy(aik, Go + i * r, GB + k * r, r);
                    }
                }
            }
        }
    });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return detail::make_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
        if (double* gx = detail::input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
        }
    });
}

/// Reorders axes: output axis i is input axis axes[i].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const Shape& in_shape = x.shape();
    const std::size_t rank = in_shape.size();
    if (axes.size() != rank) throw DimensionError("permute: axis list does not match rank of " + shape_str(in_shape));
    std::vector<bool> used(rank, false);
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (axes[i] >= rank || used[axes[i]]) throw DimensionError("permute: invalid axis list");
        used[axes[i]] = true;
        out_shape[i] = in_shape[axes[i]];
    }
    const auto in_strides = detail::row_major_strides(in_shape);
    // Source offset for every output element, shared by forward and backward.
    auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
    std::vector<std::size_t> counter(rank, 0);
    for (std::size_t flat = 0; flat < index->size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < rank; ++i) src += counter[i] * in_strides[axes[i]];
        (*index)[flat] = src;
        for (std::size_t i = rank; i-- > 0;) {
            if (++counter[i] < out_shape[i]) break;
            counter[i] = 0;
        }
    }
    std::vector<double> out(x.numel());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[(*index)[i]];
    return detail::make_result(std::move(out_shape), std::move(out), {x}, [index](detail::Node& self) {
        if (double* gx = detail::input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[(*index)[i]] += self.grad[i];
        }
    });
}

inline Tensor transpose_last2(const Tensor& x) {
    if (x.rank() < 2) throw DimensionError("transpose_last2: rank < 2 for " + shape_str(x.shape()));
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
    return permute(x, axes);
}

/// Concatenates along an axis; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: empty input list");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
        if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
        out_shape[axis] += s[axis];
        widths.push_back(s[axis]);
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    const std::size_t total = out_shape[axis];

    std::vector<double> out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        auto pd = parts[pi].data();
        const std::size_t w = widths[pi];
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pd.data() + o * w * inner, w * inner, out.data() + (o * total + offset) * inner);
        }
        offset += w;
    }
    return detail::make_result(std::move(out_shape), std::move(out), parts,
                               [widths, outer, inner, total](detail::Node& self) {
                                   std::size_t off = 0;
                                   for (std::size_t pi = 0; pi < widths.size(); ++pi) {
                                       const std::size_t w = widths[pi];
                                       if (double* g = detail::input_grad(self, pi)) {
                                           for (std::size_t o = 0; o < outer; ++o) {
                                               const double* src = self.grad.data() + (o * total + off) * inner;
                                               double* dst = g + o * w * inner;
                                               for (std::size_t i = 0; i < w * inner; ++i) dst[i] += src[i];
                                           }
                                       }
                                       off += w;
                                   }
                               });
}

/// Contiguous range [start, start + length) along an axis.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& s = x.shape();
    if (axis >= s.size() || start + length > s[axis]) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") on axis " + std::to_string(axis) + " of " + shape_str(s));
    }
    Shape out_shape = s;
    out_shape[axis] = length;
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t full = s[axis];
    std::vector<double> out(outer * length * inner);
    auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(xd.data() + (o * full + start) * inner, length * inner, out.data() + o * length * inner);
    }
    return detail::make_result(std::move(out_shape), std::move(out), {x},
                               [outer, inner, full, start, length](detail::Node& self) {
                                   if (double* gx = detail::input_grad(self, 0)) {
                                       for (std::size_t o = 0; o < outer; ++o) {
                                           const double* src = self.grad.data() + o * length * inner;
                                           double* dst = gx + (o * full + start) * inner;
                                           for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
                                       }
                                   }
                               });
}

/// Softmax over the last axis. Entries equal to -inf receive exactly zero
/// weight; a row with no finite entry maps to the all-zeros row.
inline Tensor softmax_lastdim(const Tensor& x) {
    if (x.rank() < 1 || x.shape().back() == 0) {
        throw DimensionError("softmax_lastdim: empty last dimension in " + shape_str(x.shape()));
    }
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.numel() / cols;
    std::vector<double> out(x.numel(), 0.0);
    auto xd = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xd.data() + r * cols;
        double* y = out.data() + r * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
            if (std::isnan(in[c]) || in[c] == std::numeric_limits<double>::infinity()) {
                throw NumericError("softmax_lastdim: non-finite score (NaN or +inf) in row " + std::to_string(r));
            }
            mx = std::max(mx, in[c]);
        }
        if (std::isinf(mx)) continue;  // all keys masked
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = std::isinf(in[c]) ? 0.0 : std::exp(in[c] - mx);
            total += y[c];
        }
        for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [rows, cols](detail::Node& self) {
        double* gx = detail::input_grad(self, 0);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * cols;
            const double* g = self.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - dot);
        }
    });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes each row over the last axis to zero mean and unit variance,
/// then applies gain and bias (both shaped like the last axis).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps) {
    if (x.rank() < 1 || x.shape().back() == 0) {
        throw DimensionError("layer_norm: feature dimension of size 0 in " + shape_str(x.shape()));
    }
    const std::size_t d = x.shape().back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                             " do not match feature size of " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.numel());
    auto xd = x.data();
    auto gd = gain.data();
    auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xd.data() + r * d;
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += in[c];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (in[c] - mean) * rs;
            (*xhat)[r * d + c] = h;
            out[r * d + c] = h * gd[c] + bd[c];
        }
    }
    return detail::make_result(x.shape(), std::move(out), {x, gain, bias}, [rows, d, xhat, rstd](detail::Node& self) {
        const double* g = self.grad.data();
        const auto& gain_v = self.inputs[1]->data;
        double* gx = detail::input_grad(self, 0);
        double* ggain = detail::input_grad(self, 1);
        double* gbias = detail::input_grad(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g + r * d;
            const double* hr = xhat->data() + r * d;
            if (ggain || gbias) {
                for (std::size_t c = 0; c < d; ++c) {
                    if (ggain) ggain[c] += gr[c] * hr[c];
                    if (gbias) gbias[c] += gr[c];
                }
            }
            if (gx) {
                double mean_dh = 0.0;
                double mean_dh_h = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double dh = gr[c] * gain_v[c];
                    mean_dh += dh;
                    mean_dh_h += dh * hr[c];
                }
                mean_dh /= static_cast<double>(d);
                mean_dh_h /= static_cast<double>(d);
                for (std::size_t c = 0; c < d; ++c) {
                    const double dh = gr[c] * gain_v[c];
                    gx[r * d + c] += (*rstd)[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                }
            }
        }
    });
}

enum class Padding { same_zero, valid };

/// 1-D cross-correlation along the time axis of x[N, T, c_in] with
/// kernel[K, c_in, c_out]. same_zero keeps T (left pad (K-1)/2); valid
/// yields T-K+1 steps.
inline Tensor conv1d_time(const Tensor& x, const Tensor& kernel, Padding padding) {
    if (x.rank() != 3 || kernel.rank() != 3 || kernel.dim(1) != x.dim(2)) {
        throw DimensionError("conv1d_time: input " + shape_str(x.shape()) + " incompatible with kernel " +
                             shape_str(kernel.shape()));
    }
    const std::size_t n = x.dim(0), t_in = x.dim(1), cin = x.dim(2);
    const std::size_t k = kernel.dim(0), cout = kernel.dim(2);
    if (k == 0 || k > t_in) {
        throw DimensionError("conv1d_time: kernel width " + std::to_string(k) + " exceeds series length " +
                             std::to_string(t_in));
    }
    const std::size_t t_out = padding == Padding::same_zero ? t_in : t_in - k + 1;
    const std::ptrdiff_t pad = padding == Padding::same_zero ? static_cast<std::ptrdiff_t>((k - 1) / 2) : 0;

    std::vector<double> out(n * t_out * cout, 0.0);
    auto xd = x.data();
    auto kd = kernel.data();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t t = 0; t < t_out; ++t) {
            double* y = out.data() + (b * t_out + t) * cout;
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
                const double* xin = xd.data() + (b * t_in + static_cast<std::size_t>(src)) * cin;
                const double* w = kd.data() + j * cin * cout;
                for (std::size_t c = 0; c < cin; ++c) {
                    if (xin[c] != 0.0) detail::axpy(xin[c], w + c * cout, y, cout);
                }
            }
        }
    }
    return detail::make_result({n, t_out, cout}, std::move(out), {x, kernel}, [n, t_in, t_out, cin, cout, k, pad](
                                                                                  detail::Node& self) {
        const double* xv = self.inputs[0]->data.data();
        const double* kv = self.inputs[1]->data.data();
        double* gx = detail::input_grad(self, 0);
        double* gk = detail::input_grad(self, 1);
        // kernel as [K, c_out, c_in] so the input gradient is a sum of rows
        std::vector<double> kt(gx ? k * cin * cout : 0);
        if (gx)
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t o = 0; o < cout; ++o) kt[(j * cout + o) * cin + c] = kv[(j * cin + c) * cout + o];
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t t = 0; t < t_out; ++t) {
                const double* g = self.grad.data() + (b * t_out + t) * cout;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
                    const std::size_t xo = (b * t_in + static_cast<std::size_t>(src)) * cin;
                    if (gx) {
                        for (std::size_t o = 0; o < cout; ++o)
                            if (g[o] != 0.0) detail::axpy(g[o], kt.data() + (j * cout + o) * cin, gx + xo, cin);
                    }
                    if (gk) {
                        for (std::size_t c = 0; c < cin; ++c)
                            if (xv[xo + c] != 0.0) detail::axpy(xv[xo + c], g, gk + (j * cin + c) * cout, cout);
                    }
                }
            }
        }
    });
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return detail::make_result({}, {s}, {x}, [](detail::Node& self) {
        if (double* gx = detail::input_grad(self, 0)) {
            const double g = self.grad[0];
            for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) gx[i] += g;
        }
    });
}

inline Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw EmptySelectionError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// Sums out one axis (the axis is removed from the shape).
inline Tensor sum_axis(const Tensor& x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw DimensionError("sum_axis: axis out of range for " + shape_str(s));
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) out_shape.push_back(s[i]);
    }
    std::vector<double> out(outer * inner, 0.0);
    auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * len + l) * inner + i];
    return detail::make_result(std::move(out_shape), std::move(out), {x}, [outer, inner, len](detail::Node& self) {
        if (double* gx = detail::input_grad(self, 0)) {
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t l = 0; l < len; ++l)
                    for (std::size_t i = 0; i < inner; ++i) gx[(o * len + l) * inner + i] += self.grad[o * inner + i];
        }
    });
}

inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank() || x.dim(axis) == 0) throw DimensionError("mean_axis: empty or missing axis");
    return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

/// Elementwise selection: cond != 0 picks a, otherwise b. cond is a
/// constant of the same shape; no gradient flows to it.
inline Tensor where(const Tensor& cond, const Tensor& a, const Tensor& b) {
    if (cond.shape() != a.shape() || a.shape() != b.shape()) {
        throw DimensionError("where: shapes " + shape_str(cond.shape()) + ", " + shape_str(a.shape()) + ", " +
                             shape_str(b.shape()) + " must agree");
    }
    std::vector<double> out(a.numel());
    auto cd = cond.data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = cd[i] != 0.0 ? ad[i] : bd[i];
    auto selector = std::make_shared<std::vector<bool>>(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) (*selector)[i] = cd[i] != 0.0;
    return detail::make_result(a.shape(), std::move(out), {a, b}, [selector](detail::Node& self) {
        double* ga = detail::input_grad(self, 0);
        double* gb = detail::input_grad(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if ((*selector)[i]) {
                if (ga) ga[i] += self.grad[i];
            } else if (gb) {
                gb[i] += self.grad[i];
            }
        }
    });
}

/// 1-D tensor of the entries of x where mask (same shape, 0/1) is nonzero.
inline Tensor masked_select(const Tensor& x, const Tensor& mask) {
    if (x.shape() != mask.shape()) {
        throw DimensionError("masked_select: mask " + shape_str(mask.shape()) + " does not match " +
                             shape_str(x.shape()));
    }
    auto picked = std::make_shared<std::vector<std::size_t>>();
    auto md = mask.data();
    for (std::size_t i = 0; i < md.size(); ++i) {
        if (md[i] != 0.0) picked->push_back(i);
    }
    std::vector<double> out(picked->size());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[(*picked)[i]];
    return detail::make_result({picked->size()}, std::move(out), {x}, [picked](detail::Node& self) {
        if (double* gx = detail::input_grad(self, 0)) {
            for (std::size_t i = 0; i < picked->size(); ++i) gx[(*picked)[i]] += self.grad[i];
        }
    });
}

}  // namespace maginet
