#pragma once

#include "seqrisk/features.hpp"
#include "seqrisk/numcore.hpp"

#include "json.hpp"

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace seqrisk {

enum class ModelKind { LogisticRegression, Mlp, RandomForest, Cnn1d, Lstm, EmbeddingMlp };

std::string_view to_string(ModelKind k);  // lr, mlp, rf, cnn, lstm, embmlp
ModelKind parse_model_kind(std::string_view s);
std::vector<ModelKind> all_model_kinds();
bool is_neural(ModelKind k);

// Per-step LSTM input is demographics followed by, for every concept, its learned
// (d_emb - 1)-wide embedding and one frequency slot.
struct EmbedConfig {
    std::size_t d_emb = 32;
    std::size_t vocab = 0;
    std::size_t hidden = 128;
    std::size_t slices = 1;

    std::size_t input_width() const noexcept { return kDemographicWidth + vocab * d_emb; }
    std::size_t head_width() const noexcept { return slices * hidden; }
    void validate() const;
};

struct ModelHyper {
    std::size_t d_emb = 32;
    std::size_t hidden = 128;
    double input_dropout = 0.2;
    std::vector<std::size_t> mlp_hidden{256, 256};
    std::vector<double> mlp_dropout{0.15, 0.10};
    std::vector<std::size_t> cnn_widths{4, 8, 16, 32, 64};
    std::size_t cnn_channels = 32;
    std::vector<std::size_t> rf_grid{50, 100, 200, 400};
    bool rf_bootstrap = true;
    std::size_t rf_max_depth = 0;  // 0 = grow until pure
    std::size_t rf_min_samples_split = 2;

    nlohmann::json to_json() const;
    static ModelHyper from_json(const nlohmann::json& j);
};

struct TrainConfig {
    std::size_t batch_size = 512;
    double learning_rate = 1e-3;
    std::size_t max_epochs = 100;
    std::uint64_t seed = 1;
    // Stop after this many epochs without a validation improvement; 0 disables.
    std::size_t patience = 0;

    nlohmann::json to_json() const;
};

// What a fitted model expects of its input tensors.
struct TensorLayout {
    std::size_t slices = 1;
    std::size_t vocab = 0;
    ObservationWindow window;
    bool aggregated = false;
    std::vector<std::string> concepts;

    static TensorLayout of(const SliceTensor& t);
    void check(const SliceTensor& t) const;  // throws DimensionError
    nlohmann::json to_json() const;
    static TensorLayout from_json(const nlohmann::json& j);
};

class Classifier {
public:
    virtual ~Classifier() = default;

    virtual ModelKind kind() const = 0;
    // N x 2, rows sum to one.
    virtual Matrix predict_proba(const SliceTensor& t) const = 0;
    virtual std::vector<double> parameter_blob() const = 0;
    virtual nlohmann::json metadata() const;

    const TensorLayout& layout() const noexcept { return layout_; }
    const ModelHyper& hyper() const noexcept { return hyper_; }
    std::uint64_t seed() const noexcept { return seed_; }

protected:
    Classifier(TensorLayout layout, ModelHyper hyper, std::uint64_t seed)
        : layout_(std::move(layout)), hyper_(std::move(hyper)), seed_(seed) {}

    TensorLayout layout_;
    ModelHyper hyper_;
    std::uint64_t seed_ = 0;
};

class NeuralClassifier : public Classifier {
public:
    virtual std::vector<Param*> params() = 0;
    std::vector<const Param*> params() const;

    // Forward + backward over `rows`; returns mean cross-entropy and accumulates
    // gradients. A null `dropout` runs in eval mode.
    virtual double loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout) = 0;
    virtual Matrix logits(const SliceTensor& t, std::span<const std::size_t> rows) const = 0;

    Matrix predict_proba(const SliceTensor& t) const override;
    std::vector<double> parameter_blob() const override;
    void load_parameter_blob(std::span<const double> blob);

protected:
    using Classifier::Classifier;
};

// Concept embedding with a trailing frequency slot, shared across slices and patients.
class FrequencyEmbedding {
public:
    FrequencyEmbedding() = default;
    FrequencyEmbedding(std::size_t vocab, std::size_t d_emb);

    std::size_t input_width() const noexcept { return kDemographicWidth + vocab_ * d_emb_; }
    // B x input_width for one slice of the given rows.
    Matrix build(const SliceTensor& t, std::span<const std::size_t> rows, std::size_t slice) const;
    // Accumulates the embedding gradient from dL/dx for one slice.
    void backward(const Matrix& dx);

    Param table;  // vocab x (d_emb - 1)

private:
    std::size_t vocab_ = 0;
    std::size_t d_emb_ = 2;
};

class LogisticRegression final : public NeuralClassifier {
public:
    LogisticRegression(TensorLayout layout, ModelHyper hyper, std::uint64_t seed);
    ModelKind kind() const override { return ModelKind::LogisticRegression; }
    std::vector<Param*> params() override { return {&w_, &b_}; }
    double loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout) override;
    Matrix logits(const SliceTensor& t, std::span<const std::size_t> rows) const override;

private:
    Param w_, b_;
};

class Mlp final : public NeuralClassifier {
public:
    Mlp(TensorLayout layout, ModelHyper hyper, std::uint64_t seed);
    ModelKind kind() const override { return ModelKind::Mlp; }
    std::vector<Param*> params() override;
    double loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout) override;
    Matrix logits(const SliceTensor& t, std::span<const std::size_t> rows) const override;

private:
    std::vector<Param> weights_;
    std::vector<Param> biases_;
};

struct LstmState;

class LstmClassifier final : public NeuralClassifier {
public:
    LstmClassifier(TensorLayout layout, ModelHyper hyper, std::uint64_t seed);
    ModelKind kind() const override { return ModelKind::Lstm; }
    std::vector<Param*> params() override { return {&embedding_.table, &w_, &u_, &b_, &head_w_, &head_b_}; }
    double loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout) override;
    Matrix logits(const SliceTensor& t, std::span<const std::size_t> rows) const override;

    EmbedConfig embed_config() const;
    // B x (T*H): concatenated hidden states fed to the head.
    Matrix dense_activations(const SliceTensor& t, std::span<const std::size_t> rows) const;
    const FrequencyEmbedding& embedding() const noexcept { return embedding_; }
    FrequencyEmbedding& embedding() noexcept { return embedding_; }
    Param& input_weights() noexcept { return w_; }

private:
    Matrix run(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout, LstmState* state) const;

    FrequencyEmbedding embedding_;
    Param w_, u_, b_, head_w_, head_b_;
};

class EmbeddingMlp final : public NeuralClassifier {
public:
    EmbeddingMlp(TensorLayout layout, ModelHyper hyper, std::uint64_t seed);
    ModelKind kind() const override { return ModelKind::EmbeddingMlp; }
    std::vector<Param*> params() override { return {&embedding_.table, &w1_, &b1_, &w2_, &b2_, &head_w_, &head_b_}; }
    double loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout) override;
    Matrix logits(const SliceTensor& t, std::span<const std::size_t> rows) const override;

private:
    FrequencyEmbedding embedding_;
    Param w1_, b1_, w2_, b2_, head_w_, head_b_;
};

class Cnn1d final : public NeuralClassifier {
public:
    Cnn1d(TensorLayout layout, ModelHyper hyper, std::uint64_t seed);
    ModelKind kind() const override { return ModelKind::Cnn1d; }
    std::vector<Param*> params() override;
    double loss_and_grad(const SliceTensor& t, std::span<const std::size_t> rows, RngStream* dropout) override;
    Matrix logits(const SliceTensor& t, std::span<const std::size_t> rows) const override;

private:
    struct Forward;
    Matrix forward(const SliceTensor& t, std::span<const std::size_t> rows, Forward* cache) const;
    Matrix embedding_sequence() const;  // V x d_emb, frequency channel zero

    Param table_;
    std::vector<ConvKernel> kernels_;
    Param head_w_, head_b_;
};

// ---------------------------------------------------------------- forest

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double frac[2] = {0.0, 0.0};
};

struct DecisionTree {
    std::vector<TreeNode> nodes;
    std::vector<double> importance;  // impurity decrease per feature, normalised to sum 1
    const TreeNode& leaf_for(std::span<const double> x) const;
};

// CART with Gini impurity on the flattened tabular layout.
class RandomForest final : public Classifier {
public:
    RandomForest(TensorLayout layout, ModelHyper hyper, std::uint64_t seed);

    ModelKind kind() const override { return ModelKind::RandomForest; }
    Matrix predict_proba(const SliceTensor& t) const override;
    Matrix predict_proba_tabular(const Matrix& x) const;
    std::vector<double> parameter_blob() const override;
    nlohmann::json metadata() const override;
    static std::unique_ptr<RandomForest> from_blob(TensorLayout layout, ModelHyper hyper, std::uint64_t seed,
                                                   std::span<const double> blob, std::size_t n_features);

    // Grows `n_trees` trees; tree i is seeded from (seed, i) only.
    void fit(const Matrix& x, std::span<const int> labels, std::size_t n_trees);
    void truncate(std::size_t n_trees);
    void drop_tree(std::size_t index);
    std::size_t n_trees() const noexcept { return trees_.size(); }
    const std::vector<DecisionTree>& trees() const noexcept { return trees_; }
    // Mean over trees of normalised impurity decrease.
    std::vector<double> feature_importance() const;
    std::size_t n_features() const noexcept { return n_features_; }

private:
    DecisionTree grow(const Matrix& x, std::span<const int> labels, std::size_t tree_index) const;

    std::vector<DecisionTree> trees_;
    std::size_t n_features_ = 0;
};

// ---------------------------------------------------------------- training

struct EpochTrace {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_micro_auroc = 0.0;
};

struct TrainResult {
    std::unique_ptr<Classifier> model;
    std::vector<EpochTrace> trace;
    std::size_t best_epoch = 0;
    double best_val_micro_auroc = 0.0;
    double initial_loss = 0.0;
    // Random forest estimator sweep: (n_estimators, validation micro-AUROC).
    std::vector<std::pair<std::size_t, double>> rf_sweep;
};

std::unique_ptr<Classifier> make_model(ModelKind kind, const TensorLayout& layout, const ModelHyper& hyper,
                                       std::uint64_t seed);

TrainResult train_classifier(ModelKind kind, const SliceTensor& train, const SliceTensor& val,
                             const ModelHyper& hyper, const TrainConfig& cfg);

Matrix predict_proba(const Classifier& model, const SliceTensor& t);

// Restores a classifier from checkpoint metadata and its parameter blob.
std::unique_ptr<Classifier> restore_model(const nlohmann::json& metadata, std::span<const double> blob);

} // namespace seqrisk
