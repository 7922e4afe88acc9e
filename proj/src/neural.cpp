#include "seqrisk/errors.hpp"
#include "seqrisk/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace seqrisk {

namespace {

constexpr std::size_t kPredictChunk = 256;

Matrix gather_tabular(const SliceTensor& t, std::span<const std::size_t> rows) {
    const std::size_t block = t.t * t.v;
    Matrix x(rows.size(), block + kDemographicWidth);
    for (std::size_t b = 0; b < rows.size(); ++b) {
        const std::size_t i = rows[b];
        auto out = x.row(b);
        std::copy(t.counts.begin() + static_cast<std::ptrdiff_t>(i * block),
                  t.counts.begin() + static_cast<std::ptrdiff_t>((i + 1) * block), out.begin());
        auto demo = t.demographics.row(i);
        std::copy(demo.begin(), demo.end(), out.begin() + static_cast<std::ptrdiff_t>(block));
    }
    return x;
}

std::vector<int> gather_labels(const SliceTensor& t, std::span<const std::size_t> rows) {
    std::vector<int> y(rows.size());
    for (std::size_t b = 0; b < rows.size(); ++b) y[b] = t.labels[rows[b]];
    return y;
}

Dropout maybe_dropout(const Matrix& x, double rate, RngStream* rng) {
    if (rng == nullptr) return Dropout{x, Matrix{}};
    return dropout_forward(x, rate, *rng, true);
}

} // namespace

// ---------------------------------------------------------------- base

std::vector<const Param*> NeuralClassifier::params() const {
    auto mut = const_cast<NeuralClassifier*>(this)->params();
    return {mut.begin(), mut.end()};
}

Matrix NeuralClassifier::predict_proba(const SliceTensor& t) const {
    layout_.check(t);
    Matrix probs(t.n, 2);
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < t.n; start += kPredictChunk) {
        rows.clear();
        for (std::size_t i = start; i < std::min(t.n, start + kPredictChunk); ++i) rows.push_back(i);
        Matrix p = softmax(logits(t, rows));
        for (std::size_t b = 0; b < rows.size(); ++b) {
            probs(rows[b], 0) = p(b, 0);
            probs(rows[b], 1) = p(b, 1);
        }
    }
    return probs;
}

std::vector<double> NeuralClassifier::parameter_blob() const {
    std::vector<double> blob;
    for (const Param* p : params()) blob.insert(blob.end(), p->value.data().begin(), p->value.data().end());
    return blob;
}

void NeuralClassifier::load_parameter_blob(std::span<const double> blob) {
    std::size_t total = 0;
    for (Param* p : params()) total += p->size();
    if (total != blob.size()) {
        throw SchemaError("parameter blob holds " + std::to_string(blob.size()) + " values, model expects " +
                          std::to_string(total));
    }
    std::size_t off = 0;
    for (Param* p : params()) {
        std::copy(blob.begin() + static_cast<std::ptrdiff_t>(off),
                  blob.begin() + static_cast<std::ptrdiff_t>(off + p->size()), p->value.data().begin());
        off += p->size();
    }
}

// ---------------------------------------------------------------- embedding

FrequencyEmbedding::FrequencyEmbedding(std::size_t vocab, std::size_t d_emb)
    : table("embedding", vocab, d_emb - 1), vocab_(vocab), d_emb_(d_emb) {
    if (d_emb < 2) throw InvalidArgument("d_emb must be >= 2 (one learned dimension plus the frequency slot)");
}

Matrix FrequencyEmbedding::build(const SliceTensor& t, std::span<const std::size_t> rows, std::size_t slice) const {
    if (t.v != vocab_) {
        throw DimensionError("embedding has " + std::to_string(vocab_) + " rows, tensor vocabulary is " +
                             std::to_string(t.v));
    }
    const std::size_t learned = d_emb_ - 1;
    Matrix x(rows.size(), input_width());
    const double* tab = table.value.data().data();
    for (std::size_t b = 0; b < rows.size(); ++b) {
        auto out = x.row(b);
        auto demo = t.demographics.row(rows[b]);
        std::copy(demo.begin(), demo.end(), out.begin());
        auto counts = t.slice_row(rows[b], slice);
        double* dst = out.data() + kDemographicWidth;
        for (std::size_t v = 0; v < vocab_; ++v) {
            std::copy(tab + v * learned, tab + (v + 1) * learned, dst);
            dst[learned] = counts[v];
            dst += d_emb_;
        }
    }
    return x;
}

void FrequencyEmbedding::backward(const Matrix& dx) {
    const std::size_t learned = d_emb_ - 1;
    double* g = table.grad.data().data();
    for (std::size_t b = 0; b < dx.rows(); ++b) {
        const double* src = dx.row(b).data() + kDemographicWidth;
        for (std::size_t v = 0; v < vocab_; ++v) {
            for (std::size_t j = 0; j < learned; ++j) g[v * learned + j] += src[j];
            src += d_emb_;
        }
    }
}

// ---------------------------------------------------------------- logistic regression

LogisticRegression::LogisticRegression(TensorLayout layout, ModelHyper hyper, std::uint64_t seed)
    : NeuralClassifier(std::move(layout), std::move(hyper), seed) {
    const std::size_t f = layout_.slices * layout_.vocab + kDemographicWidth;
    w_ = Param("lr.w", f, 2);
    b_ = Param("lr.b", 1, 2);
    RngStream rng(seed, 1);
    init_glorot(w_, f, 2, rng);
}

Matrix LogisticRegression::logits(const SliceTensor& t, std::span<const std::size_t> rows) const {
    return affine_forward(gather_tabular(t, rows), w_, b_);
}

double LogisticRegression::loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream*) {
    Matrix x = gather_tabular(t, rows);
    auto ce = softmax_cross_entropy(affine_forward(x, w_, b_), gather_labels(t, rows));
    affine_backward(x, ce.grad, w_, b_);
    return ce.loss;
}

// ---------------------------------------------------------------- MLP

Mlp::Mlp(TensorLayout layout, ModelHyper hyper, std::uint64_t seed)
    : NeuralClassifier(std::move(layout), std::move(hyper), seed) {
    if (hyper_.mlp_dropout.size() != hyper_.mlp_hidden.size()) {
        throw ConfigError("mlp_dropout needs one rate per hidden layer");
    }
    RngStream rng(seed, 1);
    std::size_t in = layout_.slices * layout_.vocab + kDemographicWidth;
    std::vector<std::size_t> widths = hyper_.mlp_hidden;
    widths.push_back(2);
    for (std::size_t l = 0; l < widths.size(); ++l) {
        weights_.emplace_back("mlp.w" + std::to_string(l), in, widths[l]);
        biases_.emplace_back("mlp.b" + std::to_string(l), 1, widths[l]);
        init_glorot(weights_.back(), in, widths[l], rng);
        in = widths[l];
    }
}

std::vector<Param*> Mlp::params() {
    std::vector<Param*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

Matrix Mlp::logits(const SliceTensor& t, std::span<const std::size_t> rows) const {
    Matrix a = gather_tabular(t, rows);
    for (std::size_t l = 0; l + 1 < weights_.size(); ++l) a = activate(affine_forward(a, weights_[l], biases_[l]), Activation::Relu);
    return affine_forward(a, weights_.back(), biases_.back());
}

double Mlp::loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout) {
    const std::size_t hidden_layers = weights_.size() - 1;
    std::vector<Matrix> inputs;      // input to layer l (after dropout)
    std::vector<Matrix> activations; // relu output of hidden layer l
    std::vector<Matrix> masks;
    inputs.push_back(gather_tabular(t, rows));
    for (std::size_t l = 0; l < hidden_layers; ++l) {
        activations.push_back(activate(affine_forward(inputs.back(), weights_[l], biases_[l]), Activation::Relu));
        Dropout d = maybe_dropout(activations.back(), hyper_.mlp_dropout[l], dropout);
        masks.push_back(std::move(d.mask));
        inputs.push_back(std::move(d.out));
    }
    auto ce = softmax_cross_entropy(affine_forward(inputs.back(), weights_.back(), biases_.back()), gather_labels(t, rows));
    Matrix grad = affine_backward(inputs.back(), ce.grad, weights_.back(), biases_.back());
    for (std::size_t l = hidden_layers; l-- > 0;) {
        grad = activate_backward(activations[l], dropout_backward(grad, masks[l]), Activation::Relu);
        grad = affine_backward(inputs[l], grad, weights_[l], biases_[l]);
    }
    return ce.loss;
}

// ---------------------------------------------------------------- LSTM

struct LstmStep {
    Matrix x;      // dropped input
    Matrix mask;
    Matrix gates;  // activated i, f, g, o blocks
    Matrix c_prev;
    Matrix tc;     // tanh(c)
    Matrix h_prev;
};

struct LstmState {
    std::vector<LstmStep> steps;
    Matrix head_in;
};

LstmClassifier::LstmClassifier(TensorLayout layout, ModelHyper hyper, std::uint64_t seed)
    : NeuralClassifier(std::move(layout), std::move(hyper), seed), embedding_(layout_.vocab, hyper_.d_emb) {
    const std::size_t in = embedding_.input_width();
    const std::size_t h = hyper_.hidden;
    if (h == 0) throw ConfigError("LSTM hidden width must be positive");
    w_ = Param("lstm.w", in, 4 * h);
    u_ = Param("lstm.u", h, 4 * h);
    b_ = Param("lstm.b", 1, 4 * h);
    head_w_ = Param("head.w", layout_.slices * h, 2);
    head_b_ = Param("head.b", 1, 2);
    RngStream rng(seed, 1);
    init_uniform(embedding_.table, 0.05, rng);
    init_glorot(w_, in, 4 * h, rng);
    init_glorot(u_, h, 4 * h, rng);
    for (std::size_t j = h; j < 2 * h; ++j) b_.value(0, j) = 1.0;  // forget gate
    init_glorot(head_w_, layout_.slices * h, 2, rng);
}

EmbedConfig LstmClassifier::embed_config() const {
    return EmbedConfig{hyper_.d_emb, layout_.vocab, hyper_.hidden, layout_.slices};
}

Matrix LstmClassifier::run(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout,
                           LstmState* state) const {
    const std::size_t nb = rows.size();
    const std::size_t h = hyper_.hidden;
    const std::size_t steps = layout_.slices;
    Matrix hs(nb, h), cs(nb, h);
    Matrix head_in(nb, steps * h);
    for (std::size_t s = 0; s < steps; ++s) {
        Dropout d = maybe_dropout(embedding_.build(t, rows, s), hyper_.input_dropout, dropout);
        Matrix z(nb, 4 * h);
        for (std::size_t b = 0; b < nb; ++b) {
            auto bias = b_.value.row(0);
            std::copy(bias.begin(), bias.end(), z.row(b).begin());
        }
        matmul_acc(d.out, w_.value, z);
        matmul_acc(hs, u_.value, z);
        Matrix c_new(nb, h), tc(nb, h), h_new(nb, h);
        for (std::size_t b = 0; b < nb; ++b) {
            auto zr = z.row(b);
            for (std::size_t j = 0; j < h; ++j) {
                zr[j] = sigmoid(zr[j]);
                zr[h + j] = sigmoid(zr[h + j]);
                zr[2 * h + j] = std::tanh(zr[2 * h + j]);
                zr[3 * h + j] = sigmoid(zr[3 * h + j]);
                const double c = zr[h + j] * cs(b, j) + zr[j] * zr[2 * h + j];
                c_new(b, j) = c;
                tc(b, j) = std::tanh(c);
                h_new(b, j) = zr[3 * h + j] * tc(b, j);
                head_in(b, s * h + j) = h_new(b, j);
            }
        }
        if (state) {
            state->steps.push_back(LstmStep{std::move(d.out), std::move(d.mask), std::move(z), cs, tc, hs});
        }
        hs = std::move(h_new);
        cs = std::move(c_new);
    }
    Matrix logits = affine_forward(head_in, head_w_, head_b_);
    if (state) state->head_in = std::move(head_in);
    return logits;
}

Matrix LstmClassifier::logits(const SliceTensor& t, std::span<const std::size_t> rows) const {
    return run(t, rows, nullptr, nullptr);
}

Matrix LstmClassifier::dense_activations(const SliceTensor& t, std::span<const std::size_t> rows) const {
    layout_.check(t);
    LstmState st;
    run(t, rows, nullptr, &st);
    return st.head_in;
}

double LstmClassifier::loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout) {
    LstmState st;
    Matrix lg = run(t, rows, dropout, &st);
    auto ce = softmax_cross_entropy(lg, gather_labels(t, rows));
    Matrix dhead = affine_backward(st.head_in, ce.grad, head_w_, head_b_);

    const std::size_t nb = rows.size();
    const std::size_t h = hyper_.hidden;
    Matrix dh_next(nb, h), dc_next(nb, h);
    for (std::size_t s = layout_.slices; s-- > 0;) {
        const LstmStep& step = st.steps[s];
        Matrix dz(nb, 4 * h);
        for (std::size_t b = 0; b < nb; ++b) {
            auto g = step.gates.row(b);
            auto dzr = dz.row(b);
            for (std::size_t j = 0; j < h; ++j) {
                const double ig = g[j], fg = g[h + j], cg = g[2 * h + j], og = g[3 * h + j];
                const double tcv = step.tc(b, j);
                const double dh = dhead(b, s * h + j) + dh_next(b, j);
                const double dc = dc_next(b, j) + dh * og * (1.0 - tcv * tcv);
                dc_next(b, j) = dc * fg;
                dzr[j] = dc * cg * ig * (1.0 - ig);
                dzr[h + j] = dc * step.c_prev(b, j) * fg * (1.0 - fg);
                dzr[2 * h + j] = dc * ig * (1.0 - cg * cg);
                dzr[3 * h + j] = dh * tcv * og * (1.0 - og);
            }
        }
        matmul_tn_acc(step.x, dz, w_.grad);
        matmul_tn_acc(step.h_prev, dz, u_.grad);
        for (std::size_t b = 0; b < nb; ++b) {
            auto src = dz.row(b);
            auto dst = b_.grad.row(0);
            for (std::size_t j = 0; j < 4 * h; ++j) dst[j] += src[j];
        }
        Matrix dx(nb, w_.value.rows());
        matmul_nt_acc(dz, w_.value, dx);
        embedding_.backward(dropout_backward(dx, step.mask));
        if (s > 0) {
            dh_next = Matrix(nb, h);
            matmul_nt_acc(dz, u_.value, dh_next);
        }
    }
    return ce.loss;
}

// ---------------------------------------------------------------- embedding + MLP

EmbeddingMlp::EmbeddingMlp(TensorLayout layout, ModelHyper hyper, std::uint64_t seed)
    : NeuralClassifier(std::move(layout), std::move(hyper), seed), embedding_(layout_.vocab, hyper_.d_emb) {
    const std::size_t in = layout_.slices * embedding_.input_width();
    const std::size_t h = hyper_.hidden;
    w1_ = Param("embmlp.w1", in, h);
    b1_ = Param("embmlp.b1", 1, h);
    w2_ = Param("embmlp.w2", h, h);
    b2_ = Param("embmlp.b2", 1, h);
    head_w_ = Param("head.w", h, 2);
    head_b_ = Param("head.b", 1, 2);
    RngStream rng(seed, 1);
    init_uniform(embedding_.table, 0.05, rng);
    init_glorot(w1_, in, h, rng);
    init_glorot(w2_, h, h, rng);
    init_glorot(head_w_, h, 2, rng);
}

namespace {

Matrix concat_slices(const FrequencyEmbedding& emb, const SliceTensor& t, std::span<const std::size_t> rows,
                     std::size_t slices) {
    const std::size_t in = emb.input_width();
    Matrix x(rows.size(), slices * in);
    for (std::size_t s = 0; s < slices; ++s) {
        Matrix xs = emb.build(t, rows, s);
        for (std::size_t b = 0; b < rows.size(); ++b) {
            auto src = xs.row(b);
            std::copy(src.begin(), src.end(), x.row(b).begin() + static_cast<std::ptrdiff_t>(s * in));
        }
    }
    return x;
}

} // namespace

Matrix EmbeddingMlp::logits(const SliceTensor& t, std::span<const std::size_t> rows) const {
    Matrix x = concat_slices(embedding_, t, rows, layout_.slices);
    Matrix a1 = activate(affine_forward(x, w1_, b1_), Activation::Relu);
    Matrix a2 = activate(affine_forward(a1, w2_, b2_), Activation::Relu);
    return affine_forward(a2, head_w_, head_b_);
}

double EmbeddingMlp::loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout) {
    Dropout d = maybe_dropout(concat_slices(embedding_, t, rows, layout_.slices), hyper_.input_dropout, dropout);
    Matrix a1 = activate(affine_forward(d.out, w1_, b1_), Activation::Relu);
    Matrix a2 = activate(affine_forward(a1, w2_, b2_), Activation::Relu);
    auto ce = softmax_cross_entropy(affine_forward(a2, head_w_, head_b_), gather_labels(t, rows));
    Matrix g = affine_backward(a2, ce.grad, head_w_, head_b_);
    g = affine_backward(a1, activate_backward(a2, g, Activation::Relu), w2_, b2_);
    g = affine_backward(d.out, activate_backward(a1, g, Activation::Relu), w1_, b1_);
    Matrix dx = dropout_backward(g, d.mask);
    const std::size_t in = embedding_.input_width();
    Matrix part(rows.size(), in);
    for (std::size_t s = 0; s < layout_.slices; ++s) {
        for (std::size_t b = 0; b < rows.size(); ++b) {
            auto src = dx.row(b).subspan(s * in, in);
            std::copy(src.begin(), src.end(), part.row(b).begin());
        }
        embedding_.backward(part);
    }
    return ce.loss;
}

// ---------------------------------------------------------------- CNN

// Channels per concept position are the learned embedding plus the frequency
// slot. The embedding part of every convolution is patient-independent, so it is
// computed once per batch and the frequency channel is added per patient.
struct Cnn1d::Forward {
    Matrix seq;
    std::vector<Matrix> base;
    std::vector<std::uint32_t> argmax;  // (b, s, kernel, channel) order
    Matrix features;
};

Cnn1d::Cnn1d(TensorLayout layout, ModelHyper hyper, std::uint64_t seed)
    : NeuralClassifier(std::move(layout), std::move(hyper), seed) {
    const std::size_t d = hyper_.d_emb;
    if (d < 2) throw InvalidArgument("d_emb must be >= 2");
    if (hyper_.cnn_widths.empty()) throw ConfigError("cnn_widths is empty");
    for (auto w : hyper_.cnn_widths) {
        if (w == 0 || w > layout_.vocab) {
            throw InvalidArgument("conv1d: sequence too short (vocabulary " + std::to_string(layout_.vocab) +
                                  " < filter width " + std::to_string(w) + ")");
        }
    }
    RngStream rng(seed, 1);
    table_ = Param("embedding", layout_.vocab, d - 1);
    init_uniform(table_, 0.05, rng);
    for (auto w : hyper_.cnn_widths) {
        kernels_.emplace_back("conv" + std::to_string(w), w, d, hyper_.cnn_channels);
        init_glorot(kernels_.back().weight, w * d, hyper_.cnn_channels, rng);
    }
    const std::size_t f = layout_.slices * hyper_.cnn_widths.size() * hyper_.cnn_channels + kDemographicWidth;
    head_w_ = Param("head.w", f, 2);
    head_b_ = Param("head.b", 1, 2);
    init_glorot(head_w_, f, 2, rng);
}

std::vector<Param*> Cnn1d::params() {
    std::vector<Param*> out{&table_};
    for (auto& k : kernels_) {
        out.push_back(&k.weight);
        out.push_back(&k.bias);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

Matrix Cnn1d::embedding_sequence() const {
    const std::size_t d = hyper_.d_emb;
    Matrix seq(layout_.vocab, d);
    for (std::size_t v = 0; v < layout_.vocab; ++v) {
        auto src = table_.value.row(v);
        std::copy(src.begin(), src.end(), seq.row(v).begin());
    }
    return seq;
}

Matrix Cnn1d::forward(const SliceTensor& t, std::span<const std::size_t> rows, Forward* cache) const {
    if (t.v != layout_.vocab) throw DimensionError("cnn: tensor vocabulary does not match the model");
    const std::size_t d = hyper_.d_emb;
    const std::size_t ch = hyper_.cnn_channels;
    const std::size_t nk = kernels_.size();
    const std::size_t per_slice = nk * ch;
    Matrix seq = embedding_sequence();
    std::vector<Matrix> base;
    for (const auto& k : kernels_) base.push_back(conv1d_valid(seq, k));

    Matrix features(rows.size(), layout_.slices * per_slice + kDemographicWidth);
    std::vector<std::uint32_t> argmax;
    if (cache) argmax.reserve(rows.size() * layout_.slices * per_slice);
    for (std::size_t b = 0; b < rows.size(); ++b) {
        auto feat = features.row(b);
        for (std::size_t s = 0; s < layout_.slices; ++s) {
            auto counts = t.slice_row(rows[b], s);
            for (std::size_t ki = 0; ki < nk; ++ki) {
                const auto& k = kernels_[ki];
                Matrix conv = base[ki];
                const std::size_t positions = conv.rows();
                for (std::size_t q = 0; q < counts.size(); ++q) {
                    const double cnt = counts[q];
                    if (cnt == 0.0) continue;
                    for (std::size_t j = 0; j < k.width && j <= q; ++j) {
                        const std::size_t p = q - j;
                        if (p >= positions) continue;
                        auto w = k.weight.value.row(j * d + d - 1);
                        auto out = conv.row(p);
                        for (std::size_t c = 0; c < ch; ++c) out[c] += cnt * w[c];
                    }
                }
                auto arg = global_max_argmax(conv);
                for (std::size_t c = 0; c < ch; ++c) {
                    const double pooled = conv(arg[c], c);
                    feat[s * per_slice + ki * ch + c] = pooled > 0.0 ? pooled : 0.0;
                    if (cache) argmax.push_back(static_cast<std::uint32_t>(arg[c]));
                }
            }
        }
        auto demo = t.demographics.row(rows[b]);
        std::copy(demo.begin(), demo.end(), feat.begin() + static_cast<std::ptrdiff_t>(layout_.slices * per_slice));
    }
    Matrix lg = affine_forward(features, head_w_, head_b_);
    if (cache) {
        cache->seq = std::move(seq);
        cache->base = std::move(base);
        cache->argmax = std::move(argmax);
        cache->features = std::move(features);
    }
    return lg;
}

Matrix Cnn1d::logits(const SliceTensor& t, std::span<const std::size_t> rows) const { return forward(t, rows, nullptr); }

double Cnn1d::loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream*) {
    Forward fw;
    Matrix lg = forward(t, rows, &fw);
    auto ce = softmax_cross_entropy(lg, gather_labels(t, rows));
    Matrix dfeat = affine_backward(fw.features, ce.grad, head_w_, head_b_);

    const std::size_t d = hyper_.d_emb;
    const std::size_t ch = hyper_.cnn_channels;
    const std::size_t nk = kernels_.size();
    const std::size_t per_slice = nk * ch;
    std::vector<Matrix> dbase;
    for (const auto& m : fw.base) dbase.emplace_back(m.rows(), m.cols());
    std::size_t cursor = 0;
    for (std::size_t b = 0; b < rows.size(); ++b) {
        for (std::size_t s = 0; s < layout_.slices; ++s) {
            auto counts = t.slice_row(rows[b], s);
            for (std::size_t ki = 0; ki < nk; ++ki) {
                auto& k = kernels_[ki];
                for (std::size_t c = 0; c < ch; ++c, ++cursor) {
                    const std::size_t f = s * per_slice + ki * ch + c;
                    if (fw.features(b, f) <= 0.0) continue;
                    const double g = dfeat(b, f);
                    const std::size_t p = fw.argmax[cursor];
                    dbase[ki](p, c) += g;
                    for (std::size_t j = 0; j < k.width; ++j) {
                        const double cnt = counts[p + j];
                        if (cnt != 0.0) k.weight.grad(j * d + d - 1, c) += g * cnt;
                    }
                }
            }
        }
    }
    for (std::size_t ki = 0; ki < nk; ++ki) {
        Matrix dseq = conv1d_valid_backward(fw.seq, dbase[ki], kernels_[ki]);
        for (std::size_t v = 0; v < layout_.vocab; ++v) {
            for (std::size_t j = 0; j + 1 < d; ++j) table_.grad(v, j) += dseq(v, j);
        }
    }
    return ce.loss;
}

} // namespace seqrisk
