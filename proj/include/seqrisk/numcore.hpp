#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace seqrisk {

// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& vec() const noexcept { return data_; }

    void fill(double v);
    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Throws NonFiniteError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, const std::string& what);

// out += a * b, out += a^T * b, out += a * b^T. Reductions run in index order.
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);
Matrix matmul(const Matrix& a, const Matrix& b);

// Counter-based generator: the draw sequence depends only on (seed, stream_id)
// and is identical on every platform (no std:: distributions involved).
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64();
    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    std::uint64_t below(std::uint64_t n);  // uniform on [0, n)
    double normal();                       // standard normal
    std::uint64_t poisson(double lambda);
    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

struct Param {
    Param() = default;
    Param(std::string name, std::size_t rows, std::size_t cols);

    std::string name;
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;
    std::uint64_t step_count = 0;

    std::size_t size() const noexcept { return value.size(); }
    void zero_grad() { grad.fill(0.0); }
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void init_glorot(Param& p, std::size_t fan_in, std::size_t fan_out, RngStream& rng);
void init_uniform(Param& p, double limit, RngStream& rng);

// out = x W + b, b broadcast over rows.
Matrix affine_forward(const Matrix& x, const Param& w, const Param& b);
// Accumulates dW, db into the params and returns dL/dx.
Matrix affine_backward(const Matrix& x, const Matrix& dout, Param& w, Param& b);

enum class Activation { Sigmoid, Tanh, Relu };

double sigmoid(double x) noexcept;
Matrix activate(const Matrix& x, Activation kind);
// Backward expressed in terms of the forward output y.
Matrix activate_backward(const Matrix& y, const Matrix& dout, Activation kind);

Matrix softmax(const Matrix& logits);

struct CrossEntropy {
    double loss = 0.0;  // mean over rows
    Matrix grad;        // dL/dlogits
};
CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

// Inverted dropout. `mask` holds 0 or 1/(1-rate) per entry; it is empty when the
// layer acts as the identity (eval mode or rate 0).
struct Dropout {
    Matrix out;
    Matrix mask;
};
Dropout dropout_forward(const Matrix& x, double rate, RngStream& rng, bool training);
Matrix dropout_backward(const Matrix& dout, const Matrix& mask);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};
void adam_step(Param& p, const AdamConfig& cfg);

// One filter bank of a given width: weight is (width * in_channels) x out_channels,
// row index j * in_channels + ci for kernel offset j.
struct ConvKernel {
    ConvKernel() = default;
    ConvKernel(std::string name, std::size_t width, std::size_t in_channels, std::size_t out_channels);

    std::size_t width = 0;
    std::size_t in_channels = 0;
    Param weight;
    Param bias;

    std::size_t out_channels() const noexcept { return weight.value.cols(); }
};

// Valid cross-correlation, (L - k + 1) x out_channels, bias included.
Matrix conv1d_valid(const Matrix& seq, const ConvKernel& k);
// dL/dseq for dL/dconv; accumulates kernel grads.
Matrix conv1d_valid_backward(const Matrix& seq, const Matrix& dconv, ConvKernel& k);

// Argmax position per output channel, first maximum on ties.
std::vector<std::size_t> global_max_argmax(const Matrix& conv);

struct ConvPool {
    std::vector<double> pooled;                        // concatenated over kernels
    std::vector<std::vector<std::size_t>> argmax;      // per kernel, per channel
};
ConvPool conv1d_maxpool(const Matrix& seq, std::span<const ConvKernel> kernels);
Matrix conv1d_maxpool_backward(const Matrix& seq, const ConvPool& fwd, std::span<const double> dpooled,
                               std::span<ConvKernel> kernels);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates = 0;
};

// `loss` must return the scalar loss and accumulate analytic gradients into
// the params' grad fields. Central differences with step h.
GradCheckReport grad_check(std::span<Param* const> params, const std::function<double()>& loss,
                           double h = 1e-5);

} // namespace seqrisk
