#include "seqrisk/metrics.hpp"

#include "seqrisk/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace seqrisk {

namespace {

struct Group {
    double score;
    double pos;
    double neg;
};

// Threshold groups in descending score order.
std::vector<Group> sweep_groups(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw DimensionError("metric input: " + std::to_string(scores.size()) + " scores vs " +
                             std::to_string(labels.size()) + " labels");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<Group> groups;
    for (std::size_t idx : order) {
        const double s = scores[idx];
        if (!std::isfinite(s)) throw NonFiniteError("non-finite score");
        if (labels[idx] != 0 && labels[idx] != 1) throw InvalidArgument("labels must be 0/1");
        if (groups.empty() || groups.back().score != s) groups.push_back({s, 0.0, 0.0});
        (labels[idx] == 1 ? groups.back().pos : groups.back().neg) += 1.0;
    }
    return groups;
}

double count_pos(const std::vector<Group>& g) {
    double p = 0.0;
    for (const auto& x : g) p += x.pos;
    return p;
}

std::vector<int> flatten_labels(const Matrix& probabilities, std::span<const int> labels) {
    if (probabilities.rows() != labels.size()) throw DimensionError("micro metric: row/label count mismatch");
    std::vector<int> flat;
    flat.reserve(probabilities.size());
    for (std::size_t i = 0; i < probabilities.rows(); ++i) {
        for (std::size_t c = 0; c < probabilities.cols(); ++c) flat.push_back(labels[i] == static_cast<int>(c) ? 1 : 0);
    }
    return flat;
}

} // namespace

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
    const auto groups = sweep_groups(scores, labels);
    const double p = count_pos(groups);
    const double n = static_cast<double>(scores.size()) - p;
    if (p == 0.0 || n == 0.0) throw UndefinedMetricError("AUROC needs both classes present");
    // Trapezoids over the ROC step curve in unnormalised counts.
    double area = 0.0;
    double tp = 0.0;
    for (const auto& g : groups) {
        area += g.neg * (tp + 0.5 * g.pos);
        tp += g.pos;
    }
    return area / (p * n);
}

double micro_auc(const Matrix& probabilities, std::span<const int> labels) {
    const auto flat = flatten_labels(probabilities, labels);
    return auc_roc(probabilities.data(), flat);
}

std::vector<CurvePoint> threshold_curve(std::span<const double> scores, std::span<const int> labels) {
    const auto groups = sweep_groups(scores, labels);
    const double p = count_pos(groups);
    const double n = static_cast<double>(scores.size()) - p;
    std::vector<CurvePoint> pts;
    double tp = 0.0, fp = 0.0;
    for (const auto& g : groups) {
        tp += g.pos;
        fp += g.neg;
        pts.push_back({g.score, p > 0 ? tp / p : 0.0, tp / (tp + fp), n > 0 ? fp / n : 0.0});
    }
    return pts;
}

double auc_pr(std::span<const double> scores, std::span<const int> labels) {
    const auto pts = threshold_curve(scores, labels);
    if (pts.empty() || pts.back().recall == 0.0) throw UndefinedMetricError("AUCPR needs at least one positive");
    double area = 0.0;
    double prev_r = 0.0;
    double prev_p = pts.front().precision;
    for (const auto& pt : pts) {
        area += (pt.recall - prev_r) * 0.5 * (pt.precision + prev_p);
        prev_r = pt.recall;
        prev_p = pt.precision;
    }
    return area;
}

double micro_auc_pr(const Matrix& probabilities, std::span<const int> labels) {
    const auto flat = flatten_labels(probabilities, labels);
    return auc_pr(probabilities.data(), flat);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
    const auto pts = threshold_curve(scores, labels);
    if (pts.empty() || pts.back().recall == 0.0) throw UndefinedMetricError("average precision needs at least one positive");
    double ap = 0.0;
    double prev_r = 0.0;
    for (const auto& pt : pts) {
        ap += (pt.recall - prev_r) * pt.precision;
        prev_r = pt.recall;
    }
    return ap;
}

double recall_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
    if (scores.size() != labels.size()) throw DimensionError("recall_at: length mismatch");
    double pos = 0.0, hit = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1) {
            pos += 1.0;
            if (scores[i] >= threshold) hit += 1.0;
        }
    }
    if (pos == 0.0) throw UndefinedMetricError("recall needs at least one positive");
    return hit / pos;
}

RunSummary summarize_runs(std::span<const double> values) {
    RunSummary s;
    s.k = values.size();
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

std::vector<double> positive_scores(const Matrix& probabilities) {
    if (probabilities.cols() != 2) throw DimensionError("expected N x 2 probabilities, got " + probabilities.shape_str());
    std::vector<double> s(probabilities.rows());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = probabilities(i, 1);
    return s;
}

EvalMetrics evaluate_probabilities(const Matrix& probabilities, std::span<const int> labels) {
    EvalMetrics m;
    const auto pos = positive_scores(probabilities);
    m.micro_auroc = micro_auc(probabilities, labels);
    m.micro_aucpr = micro_auc_pr(probabilities, labels);
    m.auroc = auc_roc(pos, labels);
    m.aucpr = auc_pr(pos, labels);
    m.average_precision = average_precision(pos, labels);
    m.recall = recall_at(pos, labels, 0.5);
    return m;
}

} // namespace seqrisk
