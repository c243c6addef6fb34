#include "h2m/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "h2m/error.hpp"
#include "h2m/rng.hpp"

namespace h2m {

using detail::make_result;
using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// C[m,n] (+)= op(A) op(B), with op(A) of shape [m,k].
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n, bool ta,
          bool tb, bool accumulate) {
    const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
    MMap cm(c, M, N);
    if (!accumulate) cm.setZero();
    if (!ta && !tb)
        cm.noalias() += CMap(a, M, K) * CMap(b, K, N);
    else if (!ta && tb)
        cm.noalias() += CMap(a, M, K) * CMap(b, N, K).transpose();
    else if (ta && !tb)
        cm.noalias() += CMap(a, K, M).transpose() * CMap(b, K, N);
    else
        cm.noalias() += CMap(a, K, M).transpose() * CMap(b, N, K).transpose();
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const auto r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Flat source offset for each output element when `in` is broadcast to `out`.
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
    const auto n = shape_numel(out);
    std::vector<std::size_t> map(n);
    const auto in_n = shape_numel(in);
    if (in_n == 1) return map;  // all zeros
    // Fast path: in is a suffix of out.
    bool suffix = in.size() <= out.size();
    for (std::size_t i = 0; suffix && i < in.size(); ++i) suffix = in[i] == out[out.size() - in.size() + i];
    if (suffix) {
        for (std::size_t i = 0; i < n; ++i) map[i] = i % in_n;
        return map;
    }
    const auto r = out.size();
    std::vector<std::size_t> stride(r, 0);
    std::size_t s = 1;
    for (std::size_t i = r; i-- > 0;) {
        const std::size_t j = i + in.size();
        if (j >= r) {
            const auto d = in[j - r];
            stride[i] = d == 1 ? 0 : s;
            s *= d;
        }
    }
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        map[flat] = off;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            off += stride[ax];
            if (idx[ax] < out[ax]) break;
            off -= stride[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    return map;
}

template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa == sb) {
        const auto av = a.data(), bv = b.data();
        std::vector<double> out(av.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
        return make_result(sa, std::move(out), {a, b}, [dfa, dfb](Node& self) {
            auto& na = *self.inputs[0];
            auto& nb = *self.inputs[1];
            if (na.requires_grad) {
                auto& g = na.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfa(na.value[i], nb.value[i]);
            }
            if (nb.requires_grad) {
                auto& g = nb.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfb(na.value[i], nb.value[i]);
            }
        });
    }
    auto out_shape = broadcast_shape(sa, sb);
    auto ma = std::make_shared<std::vector<std::size_t>>(broadcast_map(out_shape, sa));
    auto mb = std::make_shared<std::vector<std::size_t>>(broadcast_map(out_shape, sb));
    const auto av = a.data(), bv = b.data();
    std::vector<double> out(shape_numel(out_shape));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[(*ma)[i]], bv[(*mb)[i]]);
    return make_result(out_shape, std::move(out), {a, b}, [dfa, dfb, ma, mb](Node& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        if (na.requires_grad) {
            auto& g = na.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const auto ia = (*ma)[i], ib = (*mb)[i];
                g[ia] += self.grad[i] * dfa(na.value[ia], nb.value[ib]);
            }
        }
        if (nb.requires_grad) {
            auto& g = nb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const auto ia = (*ma)[i], ib = (*mb)[i];
                g[ib] += self.grad[i] * dfb(na.value[ia], nb.value[ib]);
            }
        }
    });
}

// y = f(x); derivative expressed through (x, y).
template <class F, class D>
Tensor unary(const Tensor& x, F f, D df) {
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return make_result(x.shape(), std::move(out), {x}, [df](Node& self) {
        auto& nx = *self.inputs[0];
        auto& g = nx.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(nx.value[i], self.value[i]);
    });
}

void require_rank(const Tensor& t, std::size_t r, const char* what) {
    if (t.rank() != r)
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                             shape_str(t.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double s) {
    return unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
    return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor square(const Tensor& x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor silu(const Tensor& x) {
    return unary(
        x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    return unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t k = b.dim(0), n = b.dim(1), m = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(m * n);
    gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false, false, false);
    return make_result(std::move(out_shape), std::move(out), {a, b}, [m, k, n](Node& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        if (na.requires_grad) gemm(self.grad.data(), nb.value.data(), na.ensure_grad().data(), m, n, k, false, true, true);
        if (nb.requires_grad) gemm(na.value.data(), self.grad.data(), nb.ensure_grad().data(), k, m, n, true, false, true);
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::size_t batch = a.dim(0);
    const std::size_t m = ta ? a.dim(2) : a.dim(1);
    const std::size_t k = ta ? a.dim(1) : a.dim(2);
    const std::size_t kb = tb ? b.dim(2) : b.dim(1);
    const std::size_t n = tb ? b.dim(1) : b.dim(2);
    if (b.dim(0) != batch || k != kb)
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::vector<double> out(batch * m * n);
    const auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < batch; ++i)
        gemm(av.data() + i * m * k, bv.data() + i * k * n, out.data() + i * m * n, m, k, n, ta, tb, false);
    return make_result({batch, m, n}, std::move(out), {a, b}, [=](Node& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const double* g = self.grad.data();
        if (na.requires_grad) {
            double* ga = na.ensure_grad().data();
            for (std::size_t i = 0; i < batch; ++i) {
                const double* gb = g + i * m * n;
                const double* bb = nb.value.data() + i * k * n;
                double* out_a = ga + i * m * k;
                // dA = dC op(B)^T  (or its transpose when A was transposed)
                if (!ta)
                    gemm(gb, bb, out_a, m, n, k, false, !tb, true);
                else
                    gemm(bb, gb, out_a, k, n, m, tb, true, true);
            }
        }
        if (nb.requires_grad) {
            double* gbm = nb.ensure_grad().data();
            for (std::size_t i = 0; i < batch; ++i) {
                const double* gc = g + i * m * n;
                const double* aa = na.value.data() + i * m * k;
                double* out_b = gbm + i * k * n;
                if (!tb)
                    gemm(aa, gc, out_b, k, m, n, !ta, false, true);
                else
                    gemm(gc, aa, out_b, n, m, k, true, ta, true);
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    auto y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
}

Tensor softmax_rows(const Tensor& x) {
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        double* o = out.data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(in[j] - mx));
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
    }
    return make_result(x.shape(), std::move(out), {x}, [rows, n](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * n;
            const double* dy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = x.shape().back();
    if (d < 2) throw DimensionError("layer_norm: last axis must be >= 2, got " + shape_str(x.shape()));
    if ((gain.defined() && gain.numel() != d) || (bias.defined() && bias.numel() != d))
        throw DimensionError("layer_norm: affine parameters must have " + std::to_string(d) + " entries");
    const std::size_t rows = x.numel() / d;
    const auto xv = x.data();
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(xv.size());
    const double* gv = gain.defined() ? gain.data().data() : nullptr;
    const double* bv = bias.defined() ? bias.data().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (in[j] - mu) * is;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = (gv ? gv[j] : 1.0) * h + (bv ? bv[j] : 0.0);
        }
    }
    std::vector<Tensor> inputs{x};
    const bool has_gain = gain.defined(), has_bias = bias.defined();
    if (has_gain) inputs.push_back(gain);
    if (has_bias) inputs.push_back(bias);
    return make_result(x.shape(), std::move(out), std::move(inputs), [=](Node& self) {
        auto& nx = *self.inputs[0];
        Node* ng = has_gain ? self.inputs[1].get() : nullptr;
        Node* nbias = has_bias ? self.inputs[has_gain ? 2 : 1].get() : nullptr;
        const double* gvals = ng ? ng->value.data() : nullptr;
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* dy = self.grad.data() + r * d;
            const double* h = xhat->data() + r * d;
            if (ng && ng->requires_grad) {
                auto& gg = ng->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * h[j];
            }
            if (nbias && nbias->requires_grad) {
                auto& gb = nbias->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) gb[j] += dy[j];
            }
            if (nx.requires_grad) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dh[j] = dy[j] * (gvals ? gvals[j] : 1.0);
                    mean_dh += dh[j];
                    mean_dh_h += dh[j] * h[j];
                }
                mean_dh /= static_cast<double>(d);
                mean_dh_h /= static_cast<double>(d);
                auto& gx = nx.ensure_grad();
                const double is = (*rstd)[r];
                for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += is * (dh[j] - mean_dh - h[j] * mean_dh_h);
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    const auto xv = x.data();
    return make_result(std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x}, [](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const auto& in = x.shape();
    const auto r = in.size();
    if (axes.size() != r) throw DimensionError("permute: axis count mismatch for " + shape_str(in));
    std::vector<bool> used(r, false);
    for (auto a : axes) {
        if (a >= r || used[a]) throw DimensionError("permute: invalid axis list");
        used[a] = true;
    }
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in[i + 1];
    Shape out_shape(r);
    std::vector<std::size_t> src_stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in[axes[i]];
        src_stride[i] = in_stride[axes[i]];
    }
    const auto n = x.numel();
    auto map = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        (*map)[flat] = off;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            off += src_stride[ax];
            if (idx[ax] < out_shape[ax]) break;
            off -= src_stride[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    const auto xv = x.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*map)[i]];
    return make_result(std::move(out_shape), std::move(out), {x}, [map](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*map)[i]] += self.grad[i];
    });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(x, axes);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const auto& first = parts[0].shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const auto& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
        if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
    const std::size_t row = out_shape[axis] * inner;
    std::vector<double> out(shape_numel(out_shape));
    std::size_t col = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto v = parts[p].data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(v.data() + o * widths[p], widths[p], out.data() + o * row + col);
        col += widths[p];
    }
    return make_result(std::move(out_shape), std::move(out), parts, [outer, row, widths](Node& self) {
        std::size_t c = 0;
        for (std::size_t p = 0; p < self.inputs.size(); ++p) {
            auto& np = *self.inputs[p];
            if (np.requires_grad) {
                auto& g = np.ensure_grad();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < widths[p]; ++j) g[o * widths[p] + j] += self.grad[o * row + c + j];
            }
            c += widths[p];
        }
    });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto& s = x.shape();
    if (axis >= s.size() || begin >= end || end > s[axis])
        throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                             std::to_string(axis) + " of " + shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    Shape out_shape = s;
    out_shape[axis] = end - begin;
    const std::size_t in_row = s[axis] * inner, out_row = (end - begin) * inner, off = begin * inner;
    const auto v = x.data();
    std::vector<double> out(outer * out_row);
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.data() + o * in_row + off, out_row, out.data() + o * out_row);
    return make_result(std::move(out_shape), std::move(out), {x}, [=](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < out_row; ++j) g[o * in_row + off + j] += self.grad[o * out_row + j];
    });
}

Tensor sum(const Tensor& x) {
    const auto v = x.data();
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    return make_result({1}, {s}, {x}, [](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (auto& e : g) e += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    return mean(square(sub(a, b)));
}

namespace {

struct ConvGeom {
    std::size_t channels, big_h, big_w, small_h, small_w, k, stride, pad;
    std::size_t col_rows() const { return channels * k * k; }
    std::size_t col_cols() const { return small_h * small_w; }
};

// Gathers receptive fields of a [C, big_h, big_w] image into [C*k*k, small_h*small_w].
void im2col(const double* img, const ConvGeom& g, double* cols) {
    const std::size_t nc = g.col_cols();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.k; ++ki)
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                double* row = cols + ((c * g.k + ki) * g.k + kj) * nc;
                for (std::size_t oy = 0; oy < g.small_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    for (std::size_t ox = 0; ox < g.small_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.big_h) &&
                                            ix < static_cast<long>(g.big_w);
                        row[oy * g.small_w + ox] =
                            inside ? img[(c * g.big_h + static_cast<std::size_t>(iy)) * g.big_w + static_cast<std::size_t>(ix)]
                                   : 0.0;
                    }
                }
            }
}

// Adjoint of im2col: scatters-adds columns back into the image.
void col2im(const double* cols, const ConvGeom& g, double* img) {
    const std::size_t nc = g.col_cols();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.k; ++ki)
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const double* row = cols + ((c * g.k + ki) * g.k + kj) * nc;
                for (std::size_t oy = 0; oy < g.small_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.big_h)) continue;
                    for (std::size_t ox = 0; ox < g.small_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        if (ix < 0 || ix >= static_cast<long>(g.big_w)) continue;
                        img[(c * g.big_h + static_cast<std::size_t>(iy)) * g.big_w + static_cast<std::size_t>(ix)] +=
                            row[oy * g.small_w + ox];
                    }
                }
            }
}

void add_channel_bias(double* out, const double* bias, std::size_t channels, std::size_t plane) {
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bias[c];
}

void accumulate_channel_bias_grad(const double* grad, std::vector<double>& gb, std::size_t channels,
                                  std::size_t plane) {
    for (std::size_t c = 0; c < channels; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += grad[c * plane + i];
        gb[c] += s;
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin || w.dim(3) != k || stride == 0)
        throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
    if (bias.defined() && bias.numel() != cout) throw DimensionError("conv2d: bias size mismatch");
    if (h + 2 * pad < k || wd + 2 * pad < k) throw DimensionError("conv2d: kernel larger than padded input");
    const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    const ConvGeom g{cin, h, wd, ho, wo, k, stride, pad};
    const std::size_t cr = g.col_rows(), cc = g.col_cols();
    auto cols = std::make_shared<std::vector<double>>(batch * cr * cc);
    std::vector<double> out(batch * cout * cc);
    const auto xv = x.data();
    const auto wv = w.data();
    for (std::size_t b = 0; b < batch; ++b) {
        double* col = cols->data() + b * cr * cc;
        im2col(xv.data() + b * cin * h * wd, g, col);
        gemm(wv.data(), col, out.data() + b * cout * cc, cout, cr, cc, false, false, false);
        if (bias.defined()) add_channel_bias(out.data() + b * cout * cc, bias.data().data(), cout, cc);
    }
    std::vector<Tensor> inputs{x, w};
    const bool has_bias = bias.defined();
    if (has_bias) inputs.push_back(bias);
    return make_result({batch, cout, ho, wo}, std::move(out), std::move(inputs), [=](Node& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        std::vector<double> dcol(cr * cc);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* gout = self.grad.data() + b * cout * cc;
            if (nw.requires_grad)
                gemm(gout, cols->data() + b * cr * cc, nw.ensure_grad().data(), cout, cc, cr, false, true, true);
            if (nx.requires_grad) {
                gemm(nw.value.data(), gout, dcol.data(), cr, cout, cc, true, false, false);
                col2im(dcol.data(), g, nx.ensure_grad().data() + b * cin * h * wd);
            }
            if (has_bias && self.inputs[2]->requires_grad)
                accumulate_channel_bias_grad(gout, self.inputs[2]->ensure_grad(), cout, cc);
        }
    });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
    require_rank(x, 4, "conv_transpose2d input");
    require_rank(w, 4, "conv_transpose2d weight");
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(1), k = w.dim(2);
    if (w.dim(0) != cin || w.dim(3) != k || stride == 0)
        throw DimensionError("conv_transpose2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                             shape_str(x.shape()));
    if (bias.defined() && bias.numel() != cout) throw DimensionError("conv_transpose2d: bias size mismatch");
    if ((h - 1) * stride + k < 2 * pad + 1) throw DimensionError("conv_transpose2d: padding too large");
    const std::size_t ho = (h - 1) * stride + k - 2 * pad, wo = (wd - 1) * stride + k - 2 * pad;
    // The output plays the role of the conv input; x lives on the small grid.
    const ConvGeom g{cout, ho, wo, h, wd, k, stride, pad};
    const std::size_t cr = g.col_rows(), cc = g.col_cols();
    std::vector<double> out(batch * cout * ho * wo, 0.0);
    std::vector<double> col(cr * cc);
    const auto xv = x.data();
    const auto wv = w.data();
    for (std::size_t b = 0; b < batch; ++b) {
        gemm(wv.data(), xv.data() + b * cin * cc, col.data(), cr, cin, cc, true, false, false);
        col2im(col.data(), g, out.data() + b * cout * ho * wo);
        if (bias.defined()) add_channel_bias(out.data() + b * cout * ho * wo, bias.data().data(), cout, ho * wo);
    }
    std::vector<Tensor> inputs{x, w};
    const bool has_bias = bias.defined();
    if (has_bias) inputs.push_back(bias);
    return make_result({batch, cout, ho, wo}, std::move(out), std::move(inputs), [=](Node& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        std::vector<double> dcol(cr * cc);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* gout = self.grad.data() + b * cout * ho * wo;
            im2col(gout, g, dcol.data());
            if (nx.requires_grad)
                gemm(nw.value.data(), dcol.data(), nx.ensure_grad().data() + b * cin * cc, cin, cr, cc, false, false, true);
            if (nw.requires_grad)
                gemm(nx.value.data() + b * cin * cc, dcol.data(), nw.ensure_grad().data(), cin, cc, cr, false, true, true);
            if (has_bias && self.inputs[2]->requires_grad)
                accumulate_channel_bias_grad(gout, self.inputs[2]->ensure_grad(), cout, ho * wo);
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const int> indices) {
    require_rank(table, 2, "embedding table");
    const std::size_t v = table.dim(0), d = table.dim(1);
    auto idx = std::make_shared<std::vector<int>>(indices.begin(), indices.end());
    if (idx->empty()) throw ContractError("embedding: empty index list");
    std::vector<double> out(idx->size() * d);
    const auto tv = table.data();
    for (std::size_t i = 0; i < idx->size(); ++i) {
        const int r = (*idx)[i];
        if (r < 0 || static_cast<std::size_t>(r) >= v)
            throw ContractError("embedding: index " + std::to_string(r) + " outside table of " + std::to_string(v));
        std::copy_n(tv.data() + static_cast<std::size_t>(r) * d, d, out.data() + i * d);
    }
    return make_result({idx->size(), d}, std::move(out), {table}, [idx, d](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < idx->size(); ++i)
            for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>((*idx)[i]) * d + j] += self.grad[i * d + j];
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    require_rank(logits, 2, "cross_entropy logits");
    const std::size_t n = logits.dim(0), m = logits.dim(1);
    if (targets.size() != n) throw DimensionError("cross_entropy: target count does not match logit rows");
    auto probs = std::make_shared<std::vector<double>>(n * m);
    auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    const auto lv = logits.data();
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* in = lv.data() + r * m;
        const int t = (*tgt)[r];
        if (t < 0 || static_cast<std::size_t>(t) >= m) throw ContractError("cross_entropy: target out of range");
        const double mx = *std::max_element(in, in + m);
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += ((*probs)[r * m + j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < m; ++j) (*probs)[r * m + j] /= s;
        loss -= (in[t] - mx) - std::log(s);
    }
    loss /= static_cast<double>(n);
    return make_result({1}, {loss}, {logits}, [probs, tgt, n, m](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const double scale_f = self.grad[0] / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < m; ++j) {
                const double y = static_cast<std::size_t>((*tgt)[r]) == j ? 1.0 : 0.0;
                g[r * m + j] += scale_f * ((*probs)[r * m + j] - y);
            }
    });
}

Tensor sinusoidal_embedding(std::span<const double> positions, std::size_t dim) {
    if (dim < 2 || dim % 2 != 0) throw ContractError("sinusoidal_embedding: dim must be even and >= 2");
    if (positions.empty()) throw ContractError("sinusoidal_embedding: no positions");
    const std::size_t half = dim / 2;
    std::vector<double> out(positions.size() * dim);
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (std::size_t j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
            out[i * dim + j] = std::sin(positions[i] * freq);
            out[i * dim + half + j] = std::cos(positions[i] * freq);
        }
    return Tensor::from({positions.size(), dim}, std::move(out));
}

Tensor randn(const Shape& shape, Rng& rng, double stddev) {
    std::vector<double> v(shape_numel(shape));
    for (auto& e : v) e = rng.normal() * stddev;
    return Tensor::from(shape, std::move(v));
}

Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (auto& e : v) e = lo + (hi - lo) * rng.uniform();
    return Tensor::from(shape, std::move(v));
}

}  // namespace h2m
