#include "seqrisk/errors.hpp"
#include "seqrisk/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace seqrisk {

namespace {

double gini(double n0, double n1) {
    const double n = n0 + n1;
    if (n <= 0.0) return 0.0;
    const double p0 = n0 / n, p1 = n1 / n;
    return 1.0 - p0 * p0 - p1 * p1;
}

struct SplitChoice {
    int feature = -1;
    double threshold = 0.0;
    double child_impurity = 0.0;  // weighted sum n_l * g_l + n_r * g_r
};

struct Grower {
    const Matrix& x;
    std::span<const int> labels;
    const ModelHyper& hyper;
    RngStream& rng;
    std::size_t mtry;
    DecisionTree tree;
    std::vector<std::size_t> features;
    std::vector<std::pair<double, int>> buffer;

    int make_leaf(double n0, double n1) {
        TreeNode leaf;
        leaf.frac[0] = n0 / (n0 + n1);
        leaf.frac[1] = n1 / (n0 + n1);
        tree.nodes.push_back(leaf);
        return static_cast<int>(tree.nodes.size() - 1);
    }

    // Examines features in random order until `mtry` non-constant ones have been
    // scored; constant features do not count towards the budget.
    SplitChoice best_split(std::span<const std::size_t> idx) {
        SplitChoice best;
        double best_score = std::numeric_limits<double>::infinity();
        rng.shuffle(features);
        std::size_t scored = 0;
        for (std::size_t f : features) {
            if (scored >= mtry) break;
            buffer.clear();
            for (std::size_t i : idx) buffer.emplace_back(x(i, f), labels[i]);
            auto [lo, hi] = std::minmax_element(buffer.begin(), buffer.end());
            if (lo->first == hi->first) continue;
            ++scored;
            std::sort(buffer.begin(), buffer.end());
            double total1 = 0.0;
            for (const auto& [v, y] : buffer) total1 += y;
            const double total = static_cast<double>(buffer.size());
            double l0 = 0.0, l1 = 0.0;
            for (std::size_t k = 0; k + 1 < buffer.size(); ++k) {
                (buffer[k].second == 1 ? l1 : l0) += 1.0;
                if (buffer[k].first == buffer[k + 1].first) continue;
                const double nl = l0 + l1;
                const double nr = total - nl;
                const double r1 = total1 - l1;
                const double score = nl * gini(l0, l1) + nr * gini(nr - r1, r1);
                if (score < best_score) {
                    best_score = score;
                    best.feature = static_cast<int>(f);
                    double thr = 0.5 * (buffer[k].first + buffer[k + 1].first);
                    if (thr >= buffer[k + 1].first) thr = buffer[k].first;
                    best.threshold = thr;
                    best.child_impurity = score;
                }
            }
        }
        return best;
    }

    int grow(std::vector<std::size_t> idx, std::size_t depth) {
        double n1 = 0.0;
        for (std::size_t i : idx) n1 += labels[i];
        const double n = static_cast<double>(idx.size());
        const double n0 = n - n1;
        const bool depth_done = hyper.rf_max_depth > 0 && depth >= hyper.rf_max_depth;
        if (n0 == 0.0 || n1 == 0.0 || idx.size() < std::max<std::size_t>(2, hyper.rf_min_samples_split) || depth_done) {
            return make_leaf(n0, n1);
        }
        const SplitChoice split = best_split(idx);
        if (split.feature < 0) return make_leaf(n0, n1);

        tree.importance[static_cast<std::size_t>(split.feature)] += n * gini(n0, n1) - split.child_impurity;
        std::vector<std::size_t> left, right;
        for (std::size_t i : idx) {
            (x(i, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right).push_back(i);
        }
        idx.clear();
        idx.shrink_to_fit();
        const int self = static_cast<int>(tree.nodes.size());
        TreeNode node;
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.frac[0] = n0 / n;
        node.frac[1] = n1 / n;
        tree.nodes.push_back(node);
        const int l = grow(std::move(left), depth + 1);
        const int r = grow(std::move(right), depth + 1);
        tree.nodes[static_cast<std::size_t>(self)].left = l;
        tree.nodes[static_cast<std::size_t>(self)].right = r;
        return self;
    }
};

} // namespace

const TreeNode& DecisionTree::leaf_for(std::span<const double> x) const {
    std::size_t at = 0;
    while (nodes[at].feature >= 0) {
        const auto& nd = nodes[at];
        at = static_cast<std::size_t>(x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right);
    }
    return nodes[at];
}

RandomForest::RandomForest(TensorLayout layout, ModelHyper hyper, std::uint64_t seed)
    : Classifier(std::move(layout), std::move(hyper), seed) {}

DecisionTree RandomForest::grow(const Matrix& x, std::span<const int> labels, std::size_t tree_index) const {
    RngStream rng(seed_, 0x7000 + tree_index);
    const std::size_t n = x.rows();
    std::vector<std::size_t> idx(n);
    if (hyper_.rf_bootstrap) {
        for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
    } else {
        std::iota(idx.begin(), idx.end(), 0);
    }
    const std::size_t mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(x.cols())))));
    Grower g{x, labels, hyper_, rng, mtry, {}, {}, {}};
    g.tree.importance.assign(x.cols(), 0.0);
    g.features.resize(x.cols());
    std::iota(g.features.begin(), g.features.end(), 0);
    g.grow(std::move(idx), 0);
    const double total = std::accumulate(g.tree.importance.begin(), g.tree.importance.end(), 0.0);
    if (total > 0.0) {
        for (auto& v : g.tree.importance) v /= total;
    }
    return std::move(g.tree);
}

void RandomForest::fit(const Matrix& x, std::span<const int> labels, std::size_t n_trees) {
    if (x.rows() != labels.size()) throw DimensionError("random forest: row/label count mismatch");
    if (x.rows() == 0) throw InvalidArgument("random forest: empty training set");
    if (n_trees == 0) throw InvalidArgument("random forest: n_trees must be positive");
    for (int y : labels) {
        if (y != 0 && y != 1) throw InvalidArgument("random forest: labels must be 0/1");
    }
    n_features_ = x.cols();
    trees_.clear();
    trees_.reserve(n_trees);
    for (std::size_t i = 0; i < n_trees; ++i) trees_.push_back(grow(x, labels, i));
}

void RandomForest::truncate(std::size_t n_trees) {
    if (n_trees < trees_.size()) trees_.resize(n_trees);
}

void RandomForest::drop_tree(std::size_t index) {
    if (index >= trees_.size()) throw InvalidArgument("random forest: no tree " + std::to_string(index));
    trees_.erase(trees_.begin() + static_cast<std::ptrdiff_t>(index));
}

Matrix RandomForest::predict_proba_tabular(const Matrix& x) const {
    if (trees_.empty()) throw InvalidArgument("random forest has no trees");
    if (x.cols() != n_features_) {
        throw DimensionError("random forest expects " + std::to_string(n_features_) + " features, got " +
                             std::to_string(x.cols()));
    }
    Matrix p(x.rows(), 2);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double s0 = 0.0, s1 = 0.0;
        for (const auto& t : trees_) {
            const auto& leaf = t.leaf_for(x.row(i));
            s0 += leaf.frac[0];
            s1 += leaf.frac[1];
        }
        const double k = static_cast<double>(trees_.size());
        p(i, 0) = s0 / k;
        p(i, 1) = s1 / k;
    }
    return p;
}

Matrix RandomForest::predict_proba(const SliceTensor& t) const {
    layout_.check(t);
    return predict_proba_tabular(flatten_for_tabular(t));
}

std::vector<double> RandomForest::feature_importance() const {
    std::vector<double> imp(n_features_, 0.0);
    if (trees_.empty()) return imp;
    for (const auto& t : trees_) {
        for (std::size_t f = 0; f < n_features_; ++f) imp[f] += t.importance[f];
    }
    for (auto& v : imp) v /= static_cast<double>(trees_.size());
    return imp;
}

// Blob layout: n_trees, then per tree: n_nodes, 6 values per node, n_features
// importances.
std::vector<double> RandomForest::parameter_blob() const {
    std::vector<double> blob{static_cast<double>(trees_.size())};
    for (const auto& t : trees_) {
        blob.push_back(static_cast<double>(t.nodes.size()));
        for (const auto& nd : t.nodes) {
            blob.insert(blob.end(), {static_cast<double>(nd.feature), nd.threshold, static_cast<double>(nd.left),
                                     static_cast<double>(nd.right), nd.frac[0], nd.frac[1]});
        }
        blob.insert(blob.end(), t.importance.begin(), t.importance.end());
    }
    return blob;
}

std::unique_ptr<RandomForest> RandomForest::from_blob(TensorLayout layout, ModelHyper hyper, std::uint64_t seed,
                                                      std::span<const double> blob, std::size_t n_features) {
    auto rf = std::make_unique<RandomForest>(std::move(layout), std::move(hyper), seed);
    rf->n_features_ = n_features;
    std::size_t pos = 0;
    auto take = [&]() {
        if (pos >= blob.size()) throw SchemaError("random forest blob is truncated");
        return blob[pos++];
    };
    const auto n_trees = static_cast<std::size_t>(take());
    for (std::size_t k = 0; k < n_trees; ++k) {
        DecisionTree t;
        const auto n_nodes = static_cast<std::size_t>(take());
        for (std::size_t j = 0; j < n_nodes; ++j) {
            TreeNode nd;
            nd.feature = static_cast<int>(take());
            nd.threshold = take();
            nd.left = static_cast<int>(take());
            nd.right = static_cast<int>(take());
            nd.frac[0] = take();
            nd.frac[1] = take();
            const bool bad_child = nd.feature >= 0 && (nd.left < 0 || nd.right < 0 ||
                                                       static_cast<std::size_t>(nd.left) >= n_nodes ||
                                                       static_cast<std::size_t>(nd.right) >= n_nodes);
            if (bad_child || nd.feature >= static_cast<int>(n_features)) throw SchemaError("random forest blob: corrupt node");
            t.nodes.push_back(nd);
        }
        for (std::size_t f = 0; f < n_features; ++f) t.importance.push_back(take());
        rf->trees_.push_back(std::move(t));
    }
    if (pos != blob.size()) throw SchemaError("random forest blob has trailing values");
    return rf;
}

nlohmann::json RandomForest::metadata() const {
    auto j = Classifier::metadata();
    j["n_features"] = n_features_;
    j["n_trees"] = trees_.size();
    return j;
}

} // namespace seqrisk
