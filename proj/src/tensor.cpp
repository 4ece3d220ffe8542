#include "protoshield/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "protoshield/blas_backend.hpp"

namespace protoshield {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ConfigError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, bool requires_grad) {
    auto p = std::make_shared<TensorImpl>();
    int64_t n = shape_numel(shape);
    p->shape = std::move(shape);
    p->data.assign(static_cast<size_t>(n), value);
    p->requires_grad = requires_grad;
    return Tensor(std::move(p));
}

Tensor Tensor::from_vec(std::vector<int64_t> shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ConfigError("data length does not match shape product");
    auto p = std::make_shared<TensorImpl>();
    p->shape = std::move(shape);
    p->data = std::move(data);
    p->requires_grad = requires_grad;
    return Tensor(std::move(p));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_vec({1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) throw UsageError("item() requires a 1-element tensor, got " + shape_str());
    return p_->data[0];
}

std::vector<double>& Tensor::grad() {
    if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0);
    return p_->grad;
}

void Tensor::zero_grad() {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    auto p = std::make_shared<TensorImpl>();
    p->shape = p_->shape;
    p->data = p_->data;
    p->requires_grad = p_->requires_grad;
    return Tensor(std::move(p));
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < p_->shape.size(); ++i) os << (i ? "," : "") << p_->shape[i];
    os << ']';
    return os.str();
}

void Tape::record(const Tensor& out, std::function<void()> backward_fn) {
    nodes_.push_back({out.impl(), std::move(backward_fn)});
    outputs_.insert(out.impl().get());
}

void Tape::backward(const Tensor& loss) {
    if (used_) throw UsageError("backward called twice on the same tape without reset");
    if (loss.numel() != 1) throw UsageError("backward requires a scalar loss, got " + loss.shape_str());
    if (!owns(loss)) throw UsageError("loss was not produced on this tape");
    used_ = true;
    Tensor l = loss;
    auto& g = l.grad();
    std::fill(g.begin(), g.end(), 0.0);
    g[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
}

void Tape::reset() {
    nodes_.clear();
    outputs_.clear();
    used_ = false;
}

namespace {

std::vector<double>& gbuf(const TensorPtr& t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
    return t->grad;
}

bool wants_grad(Tape* tape, std::initializer_list<const Tensor*> ins) {
    if (!tape) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

void attach(Tape* tape, Tensor& out, std::function<void()> fn) {
    out.set_requires_grad(true);
    tape->record(out, std::move(fn));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ConfigError("matmul: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
    int64_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
    Tensor y = Tensor::zeros({r, c});
    blas::dgemm(false, false, r, c, k, 1.0, a.data(), k, b.data(), c, 0.0, y.data(), c);
    if (wants_grad(tape, {&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        attach(tape, y, [ai, bi, yi, r, k, c] {
            const double* gy = gbuf(yi).data();
            if (ai->requires_grad)
                blas::dgemm(false, true, r, k, c, 1.0, gy, c, bi->data.data(), c, 1.0,
                            gbuf(ai).data(), k);
            if (bi->requires_grad)
                blas::dgemm(true, false, k, c, r, 1.0, ai->data.data(), k, gy, c, 1.0,
                            gbuf(bi).data(), c);
        });
    }
    return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw ConfigError("linear: incompatible shapes " + x.shape_str() + " x " + w.shape_str());
    int64_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
    if (b.defined() && (b.rank() != 1 || b.dim(0) != out))
        throw ConfigError("linear: bias shape " + b.shape_str() + " does not match output " +
                          std::to_string(out));
    Tensor y = Tensor::zeros({n, out});
    blas::dgemm(false, true, n, out, in, 1.0, x.data(), in, w.data(), in, 0.0, y.data(), out);
    if (b.defined()) {
        double* yd = y.data();
        const double* bd = b.data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < out; ++j) yd[i * out + j] += bd[j];
    }
    bool rg = b.defined() ? wants_grad(tape, {&x, &w, &b}) : wants_grad(tape, {&x, &w});
    if (rg) {
        auto xi = x.impl(), wi = w.impl(), yi = y.impl();
        auto bi = b.defined() ? b.impl() : nullptr;
        attach(tape, y, [xi, wi, bi, yi, n, in, out] {
            const double* gy = gbuf(yi).data();
            if (xi->requires_grad)
                blas::dgemm(false, false, n, in, out, 1.0, gy, out, wi->data.data(), in, 1.0,
                            gbuf(xi).data(), in);
            if (wi->requires_grad)
                blas::dgemm(true, false, out, in, n, 1.0, gy, out, xi->data.data(), in, 1.0,
                            gbuf(wi).data(), in);
            if (bi && bi->requires_grad) {
                double* gb = gbuf(bi).data();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < out; ++j) gb[j] += gy[i * out + j];
            }
        });
    }
    return y;
}

namespace {

struct ConvGeom {
    int64_t n, c, h, w, f, kh, kw, oh, ow;
    int stride, pad;
    int64_t patch() const { return c * kh * kw; }
    int64_t omap() const { return oh * ow; }
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& k, int stride, int padding) {
    if (x.rank() != 4 || k.rank() != 4)
        throw ConfigError("conv2d: expected 4-d input and kernels, got " + x.shape_str() + " and " +
                          k.shape_str());
    if (x.dim(1) != k.dim(1))
        throw ConfigError("conv2d: channel mismatch " + x.shape_str() + " vs " + k.shape_str());
    if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(2), k.dim(3), 0, 0,
               stride, padding};
    int64_t eh = g.h + 2 * padding, ew = g.w + 2 * padding;
    if (g.kh > eh || g.kw > ew)
        throw ConfigError("conv2d: kernel larger than padded input");
    if ((eh - g.kh) % stride != 0 || (ew - g.kw) % stride != 0)
        throw ConfigError("conv2d: non-integral output size for input " + x.shape_str());
    g.oh = (eh - g.kh) / stride + 1;
    g.ow = (ew - g.kw) / stride + 1;
    return g;
}

// Unrolls samples [n0, n0+cnt) into col[patch][cnt*omap], zero padding.
void im2col(const double* x, const ConvGeom& g, int64_t n0, int64_t cnt, double* col) {
    int64_t omap = g.omap(), cols = cnt * omap;
    for (int64_t s = 0; s < cnt; ++s) {
        const double* xs = x + (n0 + s) * g.c * g.h * g.w;
        for (int64_t c = 0; c < g.c; ++c)
            for (int64_t ki = 0; ki < g.kh; ++ki)
                for (int64_t kj = 0; kj < g.kw; ++kj) {
                    double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols + s * omap;
                    for (int64_t oi = 0; oi < g.oh; ++oi) {
                        int64_t ih = oi * g.stride - g.pad + ki;
                        double* dst = row + oi * g.ow;
                        if (ih < 0 || ih >= g.h) {
                            std::fill(dst, dst + g.ow, 0.0);
                            continue;
                        }
                        const double* src = xs + (c * g.h + ih) * g.w;
                        for (int64_t oj = 0; oj < g.ow; ++oj) {
                            int64_t iw = oj * g.stride - g.pad + kj;
                            dst[oj] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
                        }
                    }
                }
    }
}

// Scatter-add of dcol[patch][cnt*omap] back onto input gradients.
void col2im_add(const double* col, const ConvGeom& g, int64_t n0, int64_t cnt, double* gx) {
    int64_t omap = g.omap(), cols = cnt * omap;
    for (int64_t s = 0; s < cnt; ++s) {
        double* xs = gx + (n0 + s) * g.c * g.h * g.w;
        for (int64_t c = 0; c < g.c; ++c)
            for (int64_t ki = 0; ki < g.kh; ++ki)
                for (int64_t kj = 0; kj < g.kw; ++kj) {
                    const double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols + s * omap;
                    for (int64_t oi = 0; oi < g.oh; ++oi) {
                        int64_t ih = oi * g.stride - g.pad + ki;
                        if (ih < 0 || ih >= g.h) continue;
                        double* dst = xs + (c * g.h + ih) * g.w;
                        const double* src = row + oi * g.ow;
                        for (int64_t oj = 0; oj < g.ow; ++oj) {
                            int64_t iw = oj * g.stride - g.pad + kj;
                            if (iw >= 0 && iw < g.w) dst[iw] += src[oj];
                        }
                    }
                }
    }
}

// Samples per im2col group, capped so the unrolled buffer stays ~32 MB.
int64_t conv_group(const ConvGeom& g) {
    int64_t per_sample = g.patch() * g.omap();
    int64_t cap = std::max<int64_t>(1, (4 << 20) / std::max<int64_t>(per_sample, 1));
    return std::min(cap, g.n);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int padding, Tape* tape) {
    ConvGeom g = conv_geometry(x, kernels, stride, padding);
    Tensor y = Tensor::zeros({g.n, g.f, g.oh, g.ow});
    int64_t omap = g.omap(), patch = g.patch(), group = conv_group(g);
    std::vector<double> col(static_cast<size_t>(patch * group * omap));
    std::vector<double> out(static_cast<size_t>(g.f * group * omap));
    for (int64_t n0 = 0; n0 < g.n; n0 += group) {
        int64_t cnt = std::min(group, g.n - n0), cols = cnt * omap;
        im2col(x.data(), g, n0, cnt, col.data());
        blas::dgemm(false, false, g.f, cols, patch, 1.0, kernels.data(), patch, col.data(), cols,
                    0.0, out.data(), cols);
        for (int64_t f = 0; f < g.f; ++f)
            for (int64_t s = 0; s < cnt; ++s)
                std::memcpy(y.data() + ((n0 + s) * g.f + f) * omap, out.data() + f * cols + s * omap,
                            sizeof(double) * omap);
    }
    if (wants_grad(tape, {&x, &kernels})) {
        auto xi = x.impl(), ki = kernels.impl(), yi = y.impl();
        attach(tape, y, [xi, ki, yi, g] {
            int64_t omap = g.omap(), patch = g.patch(), group = conv_group(g);
            const double* gy = gbuf(yi).data();
            std::vector<double> col(static_cast<size_t>(patch * group * omap));
            std::vector<double> gout(static_cast<size_t>(g.f * group * omap));
            std::vector<double> gcol;
            if (xi->requires_grad) gcol.resize(static_cast<size_t>(patch * group * omap));
            for (int64_t n0 = 0; n0 < g.n; n0 += group) {
                int64_t cnt = std::min(group, g.n - n0), cols = cnt * omap;
                for (int64_t f = 0; f < g.f; ++f)
                    for (int64_t s = 0; s < cnt; ++s)
                        std::memcpy(gout.data() + f * cols + s * omap,
                                    gy + ((n0 + s) * g.f + f) * omap, sizeof(double) * omap);
                if (ki->requires_grad) {
                    im2col(xi->data.data(), g, n0, cnt, col.data());
                    blas::dgemm(false, true, g.f, patch, cols, 1.0, gout.data(), cols, col.data(),
                                cols, 1.0, gbuf(ki).data(), patch);
                }
                if (xi->requires_grad) {
                    blas::dgemm(true, false, patch, cols, g.f, 1.0, ki->data.data(), patch,
                                gout.data(), cols, 0.0, gcol.data(), cols);
                    col2im_add(gcol.data(), g, n0, cnt, gbuf(xi).data());
                }
            }
        });
    }
    return y;
}

Tensor channel_bias(const Tensor& x, const Tensor& b, Tape* tape) {
    if (x.rank() != 4 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw ConfigError("channel_bias: shapes " + x.shape_str() + " and " + b.shape_str());
    int64_t n = x.dim(0), f = x.dim(1), map = x.dim(2) * x.dim(3);
    Tensor y = Tensor::zeros(x.shape());
    const double* xd = x.data();
    const double* bd = b.data();
    double* yd = y.data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < f; ++c) {
            double bv = bd[c];
            const double* src = xd + (i * f + c) * map;
            double* dst = yd + (i * f + c) * map;
            for (int64_t p = 0; p < map; ++p) dst[p] = src[p] + bv;
        }
    if (wants_grad(tape, {&x, &b})) {
        auto xi = x.impl(), bi = b.impl(), yi = y.impl();
        attach(tape, y, [xi, bi, yi, n, f, map] {
            const double* gy = gbuf(yi).data();
            if (xi->requires_grad) {
                double* gx = gbuf(xi).data();
                for (size_t i = 0; i < xi->data.size(); ++i) gx[i] += gy[i];
            }
            if (bi->requires_grad) {
                double* gb = gbuf(bi).data();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t c = 0; c < f; ++c) {
                        const double* src = gy + (i * f + c) * map;
                        double acc = 0;
                        for (int64_t p = 0; p < map; ++p) acc += src[p];
                        gb[c] += acc;
                    }
            }
        });
    }
    return y;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Tape* tape, Fwd fwd, Bwd bwd) {
    check_same_shape(a, b, name);
    Tensor y = Tensor::zeros(a.shape());
    const double* ad = a.data();
    const double* bd = b.data();
    double* yd = y.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) yd[i] = fwd(ad[i], bd[i]);
    if (wants_grad(tape, {&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        attach(tape, y, [ai, bi, yi, bwd] {
            const double* gy = gbuf(yi).data();
            int64_t n = static_cast<int64_t>(yi->data.size());
            double* ga = ai->requires_grad ? gbuf(ai).data() : nullptr;
            double* gb = bi->requires_grad ? gbuf(bi).data() : nullptr;
            for (int64_t i = 0; i < n; ++i) bwd(gy[i], ai->data[i], bi->data[i], ga ? ga + i : nullptr,
                                               gb ? gb + i : nullptr);
        });
    }
    return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    return binary_op("add", a, b, tape, [](double x, double y) { return x + y; },
                     [](double g, double, double, double* ga, double* gb) {
                         if (ga) *ga += g;
                         if (gb) *gb += g;
                     });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
    return binary_op("sub", a, b, tape, [](double x, double y) { return x - y; },
                     [](double g, double, double, double* ga, double* gb) {
                         if (ga) *ga += g;
                         if (gb) *gb -= g;
                     });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    return binary_op("mul", a, b, tape, [](double x, double y) { return x * y; },
                     [](double g, double x, double y, double* ga, double* gb) {
                         if (ga) *ga += g * y;
                         if (gb) *gb += g * x;
                     });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Tape* tape, Fwd fwd, Bwd bwd) {
    Tensor y = Tensor::zeros(x.shape());
    const double* xd = x.data();
    double* yd = y.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) yd[i] = fwd(xd[i]);
    if (wants_grad(tape, {&x})) {
        auto xi = x.impl(), yi = y.impl();
        attach(tape, y, [xi, yi, bwd] {
            const double* gy = gbuf(yi).data();
            double* gx = gbuf(xi).data();
            int64_t n = static_cast<int64_t>(xi->data.size());
            for (int64_t i = 0; i < n; ++i) gx[i] += bwd(gy[i], xi->data[i], yi->data[i]);
        });
    }
    return y;
}

}  // namespace

Tensor add_scalar(const Tensor& a, double s, Tape* tape) {
    return unary_op(a, tape, [s](double x) { return x + s; },
                    [](double g, double, double) { return g; });
}

Tensor mul_scalar(const Tensor& a, double s, Tape* tape) {
    return unary_op(a, tape, [s](double x) { return x * s; },
                    [s](double g, double, double) { return g * s; });
}

Tensor relu(const Tensor& x, Tape* tape) {
    // Subgradient at 0 is 0.
    return unary_op(x, tape, [](double v) { return v > 0 ? v : 0.0; },
                    [](double g, double v, double) { return v > 0 ? g : 0.0; });
}

Tensor prelu(const Tensor& x, const Tensor& slope, Tape* tape) {
    if (slope.numel() != 1) throw ConfigError("prelu: slope must be a 1-element tensor");
    double a = slope.item();
    Tensor y = Tensor::zeros(x.shape());
    const double* xd = x.data();
    double* yd = y.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) yd[i] = xd[i] > 0 ? xd[i] : a * xd[i];
    if (wants_grad(tape, {&x, &slope})) {
        auto xi = x.impl(), si = slope.impl(), yi = y.impl();
        attach(tape, y, [xi, si, yi, a] {
            const double* gy = gbuf(yi).data();
            int64_t n = static_cast<int64_t>(xi->data.size());
            if (xi->requires_grad) {
                double* gx = gbuf(xi).data();
                for (int64_t i = 0; i < n; ++i) {
                    double v = xi->data[i];
                    gx[i] += v > 0 ? gy[i] : (v < 0 ? a * gy[i] : 0.0);
                }
            }
            if (si->requires_grad) {
                double acc = 0;
                for (int64_t i = 0; i < n; ++i)
                    if (xi->data[i] < 0) acc += gy[i] * xi->data[i];
                gbuf(si)[0] += acc;
            }
        });
    }
    return y;
}

Tensor tanh_op(const Tensor& x, Tape* tape) {
    return unary_op(x, tape, [](double v) { return std::tanh(v); },
                    [](double g, double, double y) { return g * (1.0 - y * y); });
}

Tensor exp_op(const Tensor& x, Tape* tape) {
    return unary_op(x, tape, [](double v) { return std::exp(v); },
                    [](double g, double, double y) { return g * y; });
}

Tensor log_op(const Tensor& x, Tape* tape) {
    const double* xd = x.data();
    for (int64_t i = 0; i < x.numel(); ++i)
        if (xd[i] <= 0.0)
            throw FormatError("log: non-positive argument " + std::to_string(xd[i]));
    return unary_op(x, tape, [](double v) { return std::log(v); },
                    [](double g, double v, double) { return g / v; });
}

Tensor max_pool2d(const Tensor& x, Tape* tape) {
    if (x.rank() != 4) throw ConfigError("max_pool2d: expected 4-d input, got " + x.shape_str());
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) throw ConfigError("max_pool2d: input too small " + x.shape_str());
    Tensor y = Tensor::zeros({n, c, oh, ow});
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(y.numel()));
    const double* xd = x.data();
    double* yd = y.data();
    int64_t oi = 0;
    for (int64_t i = 0; i < n * c; ++i) {
        const double* plane = xd + i * h * w;
        for (int64_t r = 0; r < oh; ++r)
            for (int64_t q = 0; q < ow; ++q, ++oi) {
                // Ties break toward the first index in row-major order.
                int64_t best = (2 * r) * w + 2 * q;
                double bv = plane[best];
                for (int64_t dr = 0; dr < 2; ++dr)
                    for (int64_t dq = 0; dq < 2; ++dq) {
                        int64_t idx = (2 * r + dr) * w + 2 * q + dq;
                        if (plane[idx] > bv) {
                            bv = plane[idx];
                            best = idx;
                        }
                    }
                yd[oi] = bv;
                (*arg)[oi] = i * h * w + best;
            }
    }
    if (wants_grad(tape, {&x})) {
        auto xi = x.impl(), yi = y.impl();
        attach(tape, y, [xi, yi, arg] {
            const double* gy = gbuf(yi).data();
            double* gx = gbuf(xi).data();
            for (size_t i = 0; i < arg->size(); ++i) gx[(*arg)[i]] += gy[i];
        });
    }
    return y;
}

Tensor global_avg_pool(const Tensor& x, Tape* tape) {
    if (x.rank() != 4) throw ConfigError("global_avg_pool: expected 4-d input, got " + x.shape_str());
    int64_t n = x.dim(0), c = x.dim(1), map = x.dim(2) * x.dim(3);
    Tensor y = Tensor::zeros({n, c});
    const double* xd = x.data();
    double* yd = y.data();
    for (int64_t i = 0; i < n * c; ++i) {
        double acc = 0;
        const double* src = xd + i * map;
        for (int64_t p = 0; p < map; ++p) acc += src[p];
        yd[i] = acc / static_cast<double>(map);
    }
    if (wants_grad(tape, {&x})) {
        auto xi = x.impl(), yi = y.impl();
        attach(tape, y, [xi, yi, map] {
            const double* gy = gbuf(yi).data();
            double* gx = gbuf(xi).data();
            double inv = 1.0 / static_cast<double>(map);
            for (size_t i = 0; i < yi->data.size(); ++i) {
                double g = gy[i] * inv;
                double* dst = gx + i * map;
                for (int64_t p = 0; p < map; ++p) dst[p] += g;
            }
        });
    }
    return y;
}

Tensor softmax(const Tensor& x, int axis, Tape* tape) {
    int r = static_cast<int>(x.rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ConfigError("softmax: axis out of range");
    int64_t n = x.shape()[axis], outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
    for (int i = axis + 1; i < r; ++i) inner *= x.shape()[i];
    Tensor y = Tensor::zeros(x.shape());
    const double* xd = x.data();
    double* yd = y.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            const double* src = xd + o * n * inner + in;
            double* dst = yd + o * n * inner + in;
            double mx = src[0];
            for (int64_t i = 1; i < n; ++i) mx = std::max(mx, src[i * inner]);
            double z = 0;
            for (int64_t i = 0; i < n; ++i) z += std::exp(src[i * inner] - mx);
            for (int64_t i = 0; i < n; ++i) dst[i * inner] = std::exp(src[i * inner] - mx) / z;
        }
    if (wants_grad(tape, {&x})) {
        auto xi = x.impl(), yi = y.impl();
        attach(tape, y, [xi, yi, n, outer, inner] {
            const double* gy = gbuf(yi).data();
            const double* yd = yi->data.data();
            double* gx = gbuf(xi).data();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t in = 0; in < inner; ++in) {
                    int64_t base = o * n * inner + in;
                    double dot = 0;
                    for (int64_t i = 0; i < n; ++i) dot += gy[base + i * inner] * yd[base + i * inner];
                    for (int64_t i = 0; i < n; ++i)
                        gx[base + i * inner] += yd[base + i * inner] * (gy[base + i * inner] - dot);
                }
        });
    }
    return y;
}

Tensor sign(const Tensor& x, Tape* tape) {
    // sign(0) = 0; the backward rule exists but contributes nothing.
    return unary_op(x, tape, [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); },
                    [](double, double, double) { return 0.0; });
}

Tensor norm_p(const Tensor& x, double p, Tape* tape) {
    const double* xd = x.data();
    int64_t n = x.numel();
    double val = 0;
    if (p == 1.0) {
        for (int64_t i = 0; i < n; ++i) val += std::fabs(xd[i]);
    } else if (p == 2.0) {
        for (int64_t i = 0; i < n; ++i) val += xd[i] * xd[i];
        val = std::sqrt(val);
    } else if (std::isinf(p)) {
        for (int64_t i = 0; i < n; ++i) val = std::max(val, std::fabs(xd[i]));
    } else {
        throw ConfigError("norm_p: p must be 1, 2 or inf");
    }
    Tensor y = Tensor::scalar(val);
    if (wants_grad(tape, {&x})) {
        auto xi = x.impl(), yi = y.impl();
        attach(tape, y, [xi, yi, p, n] {
            double g = gbuf(yi)[0];
            double* gx = gbuf(xi).data();
            const double* xd = xi->data.data();
            if (p == 1.0) {
                for (int64_t i = 0; i < n; ++i)
                    gx[i] += g * (xd[i] > 0 ? 1.0 : (xd[i] < 0 ? -1.0 : 0.0));
            } else if (p == 2.0) {
                double denom = std::max(yi->data[0], 1e-12);
                for (int64_t i = 0; i < n; ++i) gx[i] += g * xd[i] / denom;
            } else {
                // Subgradient at the first attaining element, row-major.
                int64_t best = 0;
                double bv = std::fabs(xd[0]);
                for (int64_t i = 1; i < n; ++i)
                    if (std::fabs(xd[i]) > bv) {
                        bv = std::fabs(xd[i]);
                        best = i;
                    }
                gx[best] += g * (xd[best] > 0 ? 1.0 : (xd[best] < 0 ? -1.0 : 0.0));
            }
        });
    }
    return y;
}

Tensor reshape(const Tensor& x, std::vector<int64_t> new_shape, Tape* tape) {
    if (shape_numel(new_shape) != x.numel())
        throw ConfigError("reshape: cannot view " + x.shape_str() + " as new shape");
    Tensor y = Tensor::from_vec(std::move(new_shape), x.vec());
    if (wants_grad(tape, {&x})) {
        auto xi = x.impl(), yi = y.impl();
        attach(tape, y, [xi, yi] {
            const double* gy = gbuf(yi).data();
            double* gx = gbuf(xi).data();
            for (size_t i = 0; i < xi->data.size(); ++i) gx[i] += gy[i];
        });
    }
    return y;
}

Tensor sum(const Tensor& x, Tape* tape) {
    double acc = 0;
    const double* xd = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) acc += xd[i];
    Tensor y = Tensor::scalar(acc);
    if (wants_grad(tape, {&x})) {
        auto xi = x.impl(), yi = y.impl();
        attach(tape, y, [xi, yi] {
            double g = gbuf(yi)[0];
            double* gx = gbuf(xi).data();
            for (size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
        });
    }
    return y;
}

Tensor mean(const Tensor& x, Tape* tape) {
    double acc = 0;
    const double* xd = x.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += xd[i];
    Tensor y = Tensor::scalar(acc / static_cast<double>(n));
    if (wants_grad(tape, {&x})) {
        auto xi = x.impl(), yi = y.impl();
        attach(tape, y, [xi, yi, n] {
            double g = gbuf(yi)[0] / static_cast<double>(n);
            double* gx = gbuf(xi).data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return y;
}

Tensor concat0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ConfigError("concat0: no tensors");
    std::vector<int64_t> shape = parts[0].shape();
    int64_t total = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != shape.size()) throw ConfigError("concat0: rank mismatch");
        for (size_t i = 1; i < shape.size(); ++i)
            if (t.shape()[i] != shape[i]) throw ConfigError("concat0: trailing shape mismatch");
        total += t.dim(0);
    }
    shape[0] = total;
    Tensor y = Tensor::zeros(shape);
    double* dst = y.data();
    for (const Tensor& t : parts) {
        std::memcpy(dst, t.data(), sizeof(double) * t.numel());
        dst += t.numel();
    }
    return y;
}

Tensor take_rows(const Tensor& x, const std::vector<int64_t>& rows) {
    if (x.rank() < 1) throw ConfigError("take_rows: rank 0");
    int64_t rowlen = x.numel() / x.dim(0);
    std::vector<int64_t> shape = x.shape();
    shape[0] = static_cast<int64_t>(rows.size());
    Tensor y = Tensor::zeros(shape);
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= x.dim(0)) throw ConfigError("take_rows: index out of range");
        std::memcpy(y.data() + i * rowlen, x.data() + rows[i] * rowlen, sizeof(double) * rowlen);
    }
    return y;
}

int64_t argmax_row(const double* row, int64_t n) {
    int64_t best = 0;
    for (int64_t i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

void check_finite(const Tensor& t, const char* what) {
    const double* d = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(d[i]))
            throw std::runtime_error(std::string(what) + ": non-finite value at index " +
                                     std::to_string(i));
}

}  // namespace protoshield
