#include "seqrisk/models.hpp"

#include "seqrisk/errors.hpp"
#include "seqrisk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace seqrisk {

using nlohmann::json;

std::string_view to_string(ModelKind k) {
    switch (k) {
    case ModelKind::LogisticRegression: return "lr";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::RandomForest: return "rf";
    case ModelKind::Cnn1d: return "cnn";
    case ModelKind::Lstm: return "lstm";
    case ModelKind::EmbeddingMlp: return "embmlp";
    }
    return "?";
}

ModelKind parse_model_kind(std::string_view s) {
    for (auto k : all_model_kinds()) {
        if (to_string(k) == s) return k;
    }
    throw InvalidArgument("unknown model kind '" + std::string(s) + "' (expected lr, mlp, rf, cnn, lstm or embmlp)");
}

std::vector<ModelKind> all_model_kinds() {
    return {ModelKind::LogisticRegression, ModelKind::Mlp,  ModelKind::RandomForest,
            ModelKind::Cnn1d,              ModelKind::Lstm, ModelKind::EmbeddingMlp};
}

bool is_neural(ModelKind k) { return k != ModelKind::RandomForest; }

void EmbedConfig::validate() const {
    if (d_emb < 2) throw ConfigError("d_emb must be at least 2");
    if (vocab == 0) throw ConfigError("vocabulary is empty");
    if (hidden == 0) throw ConfigError("hidden width must be positive");
    if (slices == 0 || slices > kMaxSlices) throw ConfigError("slices must be in 1..4");
}

json ModelHyper::to_json() const {
    return json{{"d_emb", d_emb},
                {"hidden", hidden},
                {"input_dropout", input_dropout},
                {"mlp_hidden", mlp_hidden},
                {"mlp_dropout", mlp_dropout},
                {"cnn_widths", cnn_widths},
                {"cnn_channels", cnn_channels},
                {"rf_grid", rf_grid},
                {"rf_bootstrap", rf_bootstrap},
                {"rf_max_depth", rf_max_depth},
                {"rf_min_samples_split", rf_min_samples_split}};
}

ModelHyper ModelHyper::from_json(const json& j) {
    ModelHyper h;
    h.d_emb = j.value("d_emb", h.d_emb);
    h.hidden = j.value("hidden", h.hidden);
    h.input_dropout = j.value("input_dropout", h.input_dropout);
    h.mlp_hidden = j.value("mlp_hidden", h.mlp_hidden);
    h.mlp_dropout = j.value("mlp_dropout", h.mlp_dropout);
    h.cnn_widths = j.value("cnn_widths", h.cnn_widths);
    h.cnn_channels = j.value("cnn_channels", h.cnn_channels);
    h.rf_grid = j.value("rf_grid", h.rf_grid);
    h.rf_bootstrap = j.value("rf_bootstrap", h.rf_bootstrap);
    h.rf_max_depth = j.value("rf_max_depth", h.rf_max_depth);
    h.rf_min_samples_split = j.value("rf_min_samples_split", h.rf_min_samples_split);
    return h;
}

json TrainConfig::to_json() const {
    return json{{"batch_size", batch_size},
                {"learning_rate", learning_rate},
                {"max_epochs", max_epochs},
                {"seed", seed},
                {"patience", patience}};
}

TensorLayout TensorLayout::of(const SliceTensor& t) {
    TensorLayout l;
    l.slices = t.t;
    l.vocab = t.v;
    l.window = t.window;
    l.aggregated = t.aggregated;
    l.concepts = t.vocabulary.codes;
    return l;
}

void TensorLayout::check(const SliceTensor& t) const {
    if (t.t != slices || t.v != vocab) {
        throw DimensionError("model expects " + std::to_string(slices) + " slice(s) x " + std::to_string(vocab) +
                             " concepts, tensor has " + std::to_string(t.t) + " x " + std::to_string(t.v));
    }
    if (!concepts.empty() && !t.vocabulary.codes.empty() && concepts != t.vocabulary.codes) {
        throw DimensionError("tensor concept vocabulary differs from the one the model was trained on");
    }
}

json TensorLayout::to_json() const {
    return json{{"slices", slices},
                {"vocab", vocab},
                {"window", window.label()},
                {"aggregated", aggregated},
                {"concepts", concepts}};
}

TensorLayout TensorLayout::from_json(const json& j) {
    TensorLayout l;
    l.slices = j.at("slices").get<std::size_t>();
    l.vocab = j.at("vocab").get<std::size_t>();
    l.window = ObservationWindow::parse(j.at("window").get<std::string>());
    l.aggregated = j.value("aggregated", false);
    l.concepts = j.value("concepts", std::vector<std::string>{});
    return l;
}

json Classifier::metadata() const {
    json j{{"kind", std::string(to_string(kind()))},
           {"hyper", hyper_.to_json()},
           {"layout", layout_.to_json()},
           {"seed", seed_}};
    if (const auto* nn = dynamic_cast<const NeuralClassifier*>(this)) {
        json order = json::array();
        for (const Param* p : nn->params()) order.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
        j["param_order"] = order;
    }
    if (const auto* lstm = dynamic_cast<const LstmClassifier*>(this)) {
        const auto e = lstm->embed_config();
        j["embed"] = {{"d_emb", e.d_emb},
                      {"vocab", e.vocab},
                      {"hidden", e.hidden},
                      {"slices", e.slices},
                      {"input_width", e.input_width()},
                      {"head_width", e.head_width()}};
    }
    return j;
}

std::unique_ptr<Classifier> make_model(ModelKind kind, const TensorLayout& layout, const ModelHyper& hyper,
                                       std::uint64_t seed) {
    if (layout.vocab == 0) throw InvalidArgument("cannot build a model over an empty vocabulary");
    switch (kind) {
    case ModelKind::LogisticRegression: return std::make_unique<LogisticRegression>(layout, hyper, seed);
    case ModelKind::Mlp: return std::make_unique<Mlp>(layout, hyper, seed);
    case ModelKind::RandomForest: return std::make_unique<RandomForest>(layout, hyper, seed);
    case ModelKind::Cnn1d: return std::make_unique<Cnn1d>(layout, hyper, seed);
    case ModelKind::Lstm: return std::make_unique<LstmClassifier>(layout, hyper, seed);
    case ModelKind::EmbeddingMlp: return std::make_unique<EmbeddingMlp>(layout, hyper, seed);
    }
    throw InvalidArgument("unknown model kind");
}

namespace {

double mean_cross_entropy(const Matrix& probs, std::span<const int> labels) {
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) s -= std::log(std::max(probs(i, static_cast<std::size_t>(labels[i])), 1e-300));
    return s / static_cast<double>(labels.size());
}

TrainResult train_forest(const SliceTensor& train, const SliceTensor& val, const ModelHyper& hyper,
                         const TrainConfig& cfg) {
    if (hyper.rf_grid.empty()) throw ConfigError("rf_grid is empty");
    auto grid = hyper.rf_grid;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    if (grid.front() == 0) throw ConfigError("rf_grid entries must be positive");

    auto rf = std::make_unique<RandomForest>(TensorLayout::of(train), hyper, cfg.seed);
    rf->fit(flatten_for_tabular(train), train.labels, grid.back());

    // Tree i depends only on (seed, i), so a forest of n trees is the first n
    // trees of the largest one.
    const Matrix xv = flatten_for_tabular(val);
    TrainResult res;
    std::vector<double> s0(xv.rows(), 0.0), s1(xv.rows(), 0.0);
    std::size_t done = 0;
    std::size_t best_n = grid.front();
    double best = -1.0;
    for (std::size_t n : grid) {
        for (; done < n; ++done) {
            const auto& tree = rf->trees()[done];
            for (std::size_t i = 0; i < xv.rows(); ++i) {
                const auto& leaf = tree.leaf_for(xv.row(i));
                s0[i] += leaf.frac[0];
                s1[i] += leaf.frac[1];
            }
        }
        Matrix p(xv.rows(), 2);
        for (std::size_t i = 0; i < xv.rows(); ++i) {
            p(i, 0) = s0[i] / static_cast<double>(n);
            p(i, 1) = s1[i] / static_cast<double>(n);
        }
        const double auc = micro_auc(p, val.labels);
        res.rf_sweep.emplace_back(n, auc);
        if (auc > best) {
            best = auc;
            best_n = n;
        }
    }
    rf->truncate(best_n);
    res.best_val_micro_auroc = best;
    res.model = std::move(rf);
    return res;
}

} // namespace

TrainResult train_classifier(ModelKind kind, const SliceTensor& train, const SliceTensor& val, const ModelHyper& hyper,
                             const TrainConfig& cfg) {
    train.validate();
    val.validate();
    if (train.n == 0 || val.n == 0) throw InvalidArgument("training and validation sets must be non-empty");
    TensorLayout::of(train).check(val);
    if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (kind == ModelKind::RandomForest) return train_forest(train, val, hyper, cfg);

    auto model = make_model(kind, TensorLayout::of(train), hyper, cfg.seed);
    auto& nn = dynamic_cast<NeuralClassifier&>(*model);
    TrainResult res;
    res.initial_loss = mean_cross_entropy(nn.predict_proba(train), train.labels);

    RngStream shuffle_rng(cfg.seed, 3);
    RngStream dropout_rng(cfg.seed, 2);
    AdamConfig adam;
    adam.lr = cfg.learning_rate;
    std::vector<std::size_t> order(train.n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> best_blob = nn.parameter_blob();
    double best = -1.0;
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> rows(order.data() + start, end - start);
            const double loss = nn.loss_and_grad(train, rows, &dropout_rng);
            if (!std::isfinite(loss)) {
                throw NonFiniteError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_no));
            }
            loss_sum += loss * static_cast<double>(rows.size());
            for (Param* p : nn.params()) adam_step(*p, adam);
        }
        EpochTrace tr;
        tr.epoch = epoch;
        tr.train_loss = loss_sum / static_cast<double>(train.n);
        tr.val_micro_auroc = micro_auc(nn.predict_proba(val), val.labels);
        res.trace.push_back(tr);
        if (tr.val_micro_auroc > best) {
            best = tr.val_micro_auroc;
            res.best_epoch = epoch;
            best_blob = nn.parameter_blob();
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            break;
        }
    }
    nn.load_parameter_blob(best_blob);
    res.best_val_micro_auroc = best;
    res.model = std::move(model);
    return res;
}

Matrix predict_proba(const Classifier& model, const SliceTensor& t) { return model.predict_proba(t); }

std::unique_ptr<Classifier> restore_model(const json& metadata, std::span<const double> blob) {
    try {
        const ModelKind kind = parse_model_kind(metadata.at("kind").get<std::string>());
        const auto layout = TensorLayout::from_json(metadata.at("layout"));
        const auto hyper = ModelHyper::from_json(metadata.at("hyper"));
        const auto seed = metadata.at("seed").get<std::uint64_t>();
        if (kind == ModelKind::RandomForest) {
            return RandomForest::from_blob(layout, hyper, seed, blob, metadata.at("n_features").get<std::size_t>());
        }
        auto model = make_model(kind, layout, hyper, seed);
        auto& nn = dynamic_cast<NeuralClassifier&>(*model);
        if (metadata.contains("param_order")) {
            const auto& order = metadata.at("param_order");
            const auto params = nn.params();
            if (order.size() != params.size()) throw SchemaError("checkpoint parameter list does not match the model");
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (order[i].at("name").get<std::string>() != params[i]->name ||
                    order[i].at("rows").get<std::size_t>() != params[i]->value.rows() ||
                    order[i].at("cols").get<std::size_t>() != params[i]->value.cols()) {
                    throw SchemaError("checkpoint parameter '" + order[i].at("name").get<std::string>() +
                                      "' does not match the model");
                }
            }
        }
        nn.load_parameter_blob(blob);
        return model;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed model metadata: ") + e.what());
    }
}

} // namespace seqrisk
