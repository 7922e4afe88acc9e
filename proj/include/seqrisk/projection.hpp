#pragma once

#include "seqrisk/io.hpp"
#include "seqrisk/numcore.hpp"

#include <filesystem>
#include <vector>

namespace seqrisk {

struct TsneConfig {
    double perplexity = 30.0;
    std::size_t dims = 2;
    std::size_t iterations = 1000;
    double learning_rate = 200.0;
    double exaggeration = 12.0;
    std::size_t exaggeration_iters = 250;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    std::size_t momentum_switch = 250;
    double min_gain = 0.01;
    std::uint64_t seed = 1;

    void validate(std::size_t n) const;  // throws ConfigError
};

struct Affinities {
    Matrix p;                      // symmetric joint probabilities, sums to 1
    std::vector<double> beta;      // 1 / (2 sigma_i^2)
    std::vector<double> entropy;   // conditional row entropy in bits
};

// Per-row bandwidth by bisection so each conditional row has entropy log2(perplexity).
Affinities compute_affinities(const Matrix& x, double perplexity);

struct TsneResult {
    Matrix coords;                 // N x dims
    std::vector<double> kl_trace;  // KL(P || Q) before the first step and after every iteration
    std::vector<double> entropy;
    double target_entropy = 0.0;
};

TsneResult tsne(const Matrix& x, const TsneConfig& cfg);
// Starts from the given N x dims coordinates instead of the seeded Gaussian draw.
TsneResult tsne(const Matrix& x, const TsneConfig& cfg, Matrix initial);

Matrix pairwise_sq_distances(const Matrix& x);

// Reads one or two activation tables (schema seqrisk.activations) joined on
// patient_id and returns a seqrisk.projection table. With two tables both sets of
// activations are embedded jointly and paired coordinates are emitted.
Table project_patients(const std::vector<std::filesystem::path>& activation_files, const TsneConfig& cfg);

} // namespace seqrisk
