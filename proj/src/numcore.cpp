#include "seqrisk/numcore.hpp"

#include "seqrisk/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace seqrisk {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

void require_same(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

} // namespace

// ---------------------------------------------------------------- Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_str() const {
    std::ostringstream os;
    os << "[" << rows_ << "x" << cols_ << "]";
    return os.str();
}

void require_finite(const Matrix& m, const std::string& what) {
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(m.data()[i])) {
            throw NonFiniteError(what + ": non-finite entry at flat index " + std::to_string(i));
        }
    }
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols()) {
        throw DimensionError("matmul: " + a.shape_str() + " * " + b.shape_str() + " -> " + out.shape_str());
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = po + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;  // exact: adding +-0 never changes a finite sum
            const double* brow = pb + p * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
        throw DimensionError("matmul_tn: " + a.shape_str() + "^T * " + b.shape_str() + " -> " + out.shape_str());
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t r = 0; r < n; ++r) {
        const double* brow = pb + r * m;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = pa[r * k + i];
            if (av == 0.0) continue;
            double* orow = po + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows()) {
        throw DimensionError("matmul_nt: " + a.shape_str() + " * " + b.shape_str() + "^T -> " + out.shape_str());
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = pb + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            po[i * m + j] += s;
        }
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    matmul_acc(a, b, out);
    return out;
}

// ---------------------------------------------------------------- RngStream

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id),
      key_(splitmix64(seed) ^ splitmix64(stream_id * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL)) {}

std::uint64_t RngStream::next_u64() {
    ++counter_;
    return splitmix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t RngStream::below(std::uint64_t n) {
    if (n == 0) throw InvalidArgument("RngStream::below(0)");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
        std::uint64_t r = next_u64();
        if (r >= threshold) return r % n;
    }
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
}

std::uint64_t RngStream::poisson(double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("poisson rate must be finite and >= 0");
    std::uint64_t total = 0;
    // Knuth's product method on chunks of at most 30 keeps exp(-lambda) well away from underflow.
    while (lambda > 0.0) {
        double chunk = std::min(lambda, 30.0);
        lambda -= chunk;
        const double limit = std::exp(-chunk);
        double p = uniform();
        while (p > limit) {
            ++total;
            p *= uniform();
        }
    }
    return total;
}

// ---------------------------------------------------------------- Param

Param::Param(std::string n, std::size_t rows, std::size_t cols)
    : name(std::move(n)), value(rows, cols), grad(rows, cols), adam_m(rows, cols), adam_v(rows, cols) {}

void init_glorot(Param& p, std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
    init_uniform(p, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

void init_uniform(Param& p, double limit, RngStream& rng) {
    for (double& v : p.value.data()) v = rng.uniform(-limit, limit);
}

// ---------------------------------------------------------------- layers

Matrix affine_forward(const Matrix& x, const Param& w, const Param& b) {
    if (x.cols() != w.value.rows() || b.value.rows() != 1 || b.value.cols() != w.value.cols()) {
        throw DimensionError("affine: x " + x.shape_str() + ", W " + w.value.shape_str() + ", b " +
                             b.value.shape_str());
    }
    Matrix out(x.rows(), w.value.cols());
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        auto bias = b.value.row(0);
        std::copy(bias.begin(), bias.end(), row.begin());
    }
    matmul_acc(x, w.value, out);
    return out;
}

Matrix affine_backward(const Matrix& x, const Matrix& dout, Param& w, Param& b) {
    if (dout.rows() != x.rows() || dout.cols() != w.value.cols() || x.cols() != w.value.rows()) {
        throw DimensionError("affine_backward: x " + x.shape_str() + ", dout " + dout.shape_str() + ", W " +
                             w.value.shape_str());
    }
    matmul_tn_acc(x, dout, w.grad);
    for (std::size_t r = 0; r < dout.rows(); ++r) {
        auto d = dout.row(r);
        auto g = b.grad.row(0);
        for (std::size_t j = 0; j < d.size(); ++j) g[j] += d[j];
    }
    Matrix dx(x.rows(), x.cols());
    matmul_nt_acc(dout, w.value, dx);
    return dx;
}

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Matrix activate(const Matrix& x, Activation kind) {
    Matrix y = x;
    for (double& v : y.data()) {
        switch (kind) {
        case Activation::Sigmoid: v = sigmoid(v); break;
        case Activation::Tanh: v = std::tanh(v); break;
        case Activation::Relu: v = v > 0.0 ? v : 0.0; break;
        }
    }
    return y;
}

Matrix activate_backward(const Matrix& y, const Matrix& dout, Activation kind) {
    require_same(y, dout, "activate_backward");
    Matrix dx(y.rows(), y.cols());
    auto yv = y.data();
    auto dv = dout.data();
    auto out = dx.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        switch (kind) {
        case Activation::Sigmoid: out[i] = dv[i] * yv[i] * (1.0 - yv[i]); break;
        case Activation::Tanh: out[i] = dv[i] * (1.0 - yv[i] * yv[i]); break;
        case Activation::Relu: out[i] = yv[i] > 0.0 ? dv[i] : 0.0; break;
        }
    }
    return dx;
}

Matrix softmax(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto z = logits.row(r);
        auto out = p.row(r);
        double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) {
            out[j] = std::exp(z[j] - mx);
            sum += out[j];
        }
        for (double& v : out) v /= sum;
    }
    return p;
}

CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (labels.size() != logits.rows()) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                             logits.shape_str());
    }
    const std::size_t classes = logits.cols();
    CrossEntropy ce;
    ce.grad = Matrix(logits.rows(), classes);
    if (logits.rows() == 0) return ce;
    const double inv_b = 1.0 / static_cast<double>(logits.rows());
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw InvalidArgument("invalid label " + std::to_string(y) + " at row " + std::to_string(r));
        }
        auto z = logits.row(r);
        double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - mx);
        const double lse = mx + std::log(sum);
        total += lse - z[static_cast<std::size_t>(y)];
        auto g = ce.grad.row(r);
        for (std::size_t j = 0; j < classes; ++j) {
            const double p = std::exp(z[j] - lse);
            g[j] = (p - (static_cast<int>(j) == y ? 1.0 : 0.0)) * inv_b;
        }
    }
    ce.loss = total * inv_b;
    return ce;
}

Dropout dropout_forward(const Matrix& x, double rate, RngStream& rng, bool training) {
    if (!(rate >= 0.0) || rate >= 1.0) throw InvalidArgument("dropout rate must be in [0, 1), got " + std::to_string(rate));
    Dropout d;
    if (!training || rate == 0.0) {
        d.out = x;
        return d;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    d.mask = Matrix(x.rows(), x.cols());
    d.out = Matrix(x.rows(), x.cols());
    auto m = d.mask.data();
    auto o = d.out.data();
    auto xv = x.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = rng.uniform() < rate ? 0.0 : keep_scale;
        o[i] = xv[i] * m[i];
    }
    return d;
}

Matrix dropout_backward(const Matrix& dout, const Matrix& mask) {
    if (mask.empty()) return dout;
    require_same(dout, mask, "dropout_backward");
    Matrix dx(dout.rows(), dout.cols());
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] = dout.data()[i] * mask.data()[i];
    return dx;
}

void adam_step(Param& p, const AdamConfig& cfg) {
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
        if (!std::isfinite(p.grad.data()[i])) {
            throw NonFiniteError("non-finite gradient in parameter '" + p.name + "' at flat index " +
                                 std::to_string(i));
        }
    }
    p.step_count += 1;
    const double t = static_cast<double>(p.step_count);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    auto th = p.value.data();
    auto g = p.grad.data();
    auto m = p.adam_m.data();
    auto v = p.adam_v.data();
    for (std::size_t i = 0; i < th.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        th[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p.zero_grad();
}

// ---------------------------------------------------------------- conv

ConvKernel::ConvKernel(std::string name, std::size_t w, std::size_t cin, std::size_t cout)
    : width(w), in_channels(cin), weight(name + ".w", w * cin, cout), bias(name + ".b", 1, cout) {}

Matrix conv1d_valid(const Matrix& seq, const ConvKernel& k) {
    if (seq.cols() != k.in_channels) {
        throw DimensionError("conv1d: sequence " + seq.shape_str() + " has " + std::to_string(seq.cols()) +
                             " channels, kernel expects " + std::to_string(k.in_channels));
    }
    if (seq.rows() < k.width) {
        throw InvalidArgument("conv1d: sequence too short (length " + std::to_string(seq.rows()) +
                              " < filter width " + std::to_string(k.width) + ")");
    }
    const std::size_t positions = seq.rows() - k.width + 1;
    const std::size_t span_len = k.width * k.in_channels;
    const std::size_t cout = k.out_channels();
    Matrix out(positions, cout);
    const double* s = seq.data().data();
    const double* w = k.weight.value.data().data();
    for (std::size_t p = 0; p < positions; ++p) {
        auto o = out.row(p);
        auto b = k.bias.value.row(0);
        std::copy(b.begin(), b.end(), o.begin());
        // Rows p..p+width-1 of a row-major sequence are one contiguous window.
        const double* window = s + p * k.in_channels;
        for (std::size_t q = 0; q < span_len; ++q) {
            const double xv = window[q];
            if (xv == 0.0) continue;
            const double* wrow = w + q * cout;
            for (std::size_t c = 0; c < cout; ++c) o[c] += xv * wrow[c];
        }
    }
    return out;
}

Matrix conv1d_valid_backward(const Matrix& seq, const Matrix& dconv, ConvKernel& k) {
    const std::size_t positions = seq.rows() - k.width + 1;
    const std::size_t cout = k.out_channels();
    if (dconv.rows() != positions || dconv.cols() != cout) {
        throw DimensionError("conv1d_backward: dconv " + dconv.shape_str());
    }
    const std::size_t span_len = k.width * k.in_channels;
    Matrix dseq(seq.rows(), seq.cols());
    const double* s = seq.data().data();
    const double* w = k.weight.value.data().data();
    double* gw = k.weight.grad.data().data();
    double* ds = dseq.data().data();
    auto gb = k.bias.grad.row(0);
    for (std::size_t p = 0; p < positions; ++p) {
        auto d = dconv.row(p);
        bool any = false;
        for (std::size_t c = 0; c < cout; ++c) {
            gb[c] += d[c];
            any = any || d[c] != 0.0;
        }
        if (!any) continue;
        const double* window = s + p * k.in_channels;
        double* dwindow = ds + p * k.in_channels;
        for (std::size_t q = 0; q < span_len; ++q) {
            const double* wrow = w + q * cout;
            double* gwrow = gw + q * cout;
            const double xv = window[q];
            double acc = 0.0;
            for (std::size_t c = 0; c < cout; ++c) {
                gwrow[c] += xv * d[c];
                acc += wrow[c] * d[c];
            }
            dwindow[q] += acc;
        }
    }
    return dseq;
}

std::vector<std::size_t> global_max_argmax(const Matrix& conv) {
    std::vector<std::size_t> arg(conv.cols(), 0);
    for (std::size_t c = 0; c < conv.cols(); ++c) {
        double best = conv(0, c);
        for (std::size_t p = 1; p < conv.rows(); ++p) {
            if (conv(p, c) > best) {
                best = conv(p, c);
                arg[c] = p;
            }
        }
    }
    return arg;
}

ConvPool conv1d_maxpool(const Matrix& seq, std::span<const ConvKernel> kernels) {
    ConvPool out;
    for (const auto& k : kernels) {
        Matrix conv = conv1d_valid(seq, k);
        auto arg = global_max_argmax(conv);
        for (std::size_t c = 0; c < conv.cols(); ++c) out.pooled.push_back(conv(arg[c], c));
        out.argmax.push_back(std::move(arg));
    }
    return out;
}

Matrix conv1d_maxpool_backward(const Matrix& seq, const ConvPool& fwd, std::span<const double> dpooled,
                               std::span<ConvKernel> kernels) {
    if (fwd.argmax.size() != kernels.size()) throw DimensionError("conv1d_maxpool_backward: kernel count");
    Matrix dseq(seq.rows(), seq.cols());
    std::size_t offset = 0;
    for (std::size_t ki = 0; ki < kernels.size(); ++ki) {
        auto& k = kernels[ki];
        const std::size_t cout = k.out_channels();
        if (offset + cout > dpooled.size()) throw DimensionError("conv1d_maxpool_backward: pooled gradient length");
        Matrix dconv(seq.rows() - k.width + 1, cout);
        for (std::size_t c = 0; c < cout; ++c) dconv(fwd.argmax[ki][c], c) = dpooled[offset + c];
        Matrix part = conv1d_valid_backward(seq, dconv, k);
        for (std::size_t i = 0; i < dseq.size(); ++i) dseq.data()[i] += part.data()[i];
        offset += cout;
    }
    return dseq;
}

// ---------------------------------------------------------------- grad check

GradCheckReport grad_check(std::span<Param* const> params, const std::function<double()>& loss, double h) {
    for (Param* p : params) p->zero_grad();
    loss();
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) {
        analytic.push_back(p->grad);
        p->zero_grad();
    }
    GradCheckReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            double& theta = p.value.data()[i];
            const double saved = theta;
            theta = saved + h;
            const double fp = loss();
            theta = saved - h;
            const double fm = loss();
            theta = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi].data()[i];
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            if (rel > rep.max_rel_error || rep.coordinates == 0) {
                if (rel > rep.max_rel_error) rep.max_rel_error = rel;
                rep.worst_param = p.name;
                rep.worst_index = i;
                rep.worst_analytic = a;
                rep.worst_numeric = numeric;
            }
            ++rep.coordinates;
        }
        p.zero_grad();
    }
    for (Param* p : params) p->zero_grad();
    return rep;
}

} // namespace seqrisk
