#pragma once

#include "seqrisk/numcore.hpp"

#include <optional>
#include <span>
#include <vector>

namespace seqrisk {

// All curve metrics sweep scores in descending order and treat equal scores as
// one threshold group.

// (#concordant + 0.5 #tied) / (P * N).
double auc_roc(std::span<const double> scores, std::span<const int> labels);

// Flattens an N x C probability matrix into N*C one-vs-rest decisions.
double micro_auc(const Matrix& probabilities, std::span<const int> labels);

// Trapezoid over (recall, precision), anchored at recall 0 with the precision of
// the top score group.
double auc_pr(std::span<const double> scores, std::span<const int> labels);
double micro_auc_pr(const Matrix& probabilities, std::span<const int> labels);

// Sum over threshold groups of (R_i - R_{i-1}) * P_i.
double average_precision(std::span<const double> scores, std::span<const int> labels);

double recall_at(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct CurvePoint {
    double threshold;
    double recall;
    double precision;
    double fpr;
};
std::vector<CurvePoint> threshold_curve(std::span<const double> scores, std::span<const int> labels);

struct RunSummary {
    double mean = 0.0;
    std::optional<double> std;  // sample standard deviation, absent for k < 2
    std::size_t k = 0;
};
RunSummary summarize_runs(std::span<const double> values);

// Positive-class column of an N x 2 probability matrix.
std::vector<double> positive_scores(const Matrix& probabilities);

struct EvalMetrics {
    double micro_auroc = 0.0;
    double micro_aucpr = 0.0;
    double auroc = 0.0;  // positive-class only
    double aucpr = 0.0;
    double average_precision = 0.0;
    double recall = 0.0;
};
EvalMetrics evaluate_probabilities(const Matrix& probabilities, std::span<const int> labels);

} // namespace seqrisk
