#include "doctest.h"

#include "seqrisk/errors.hpp"
#include "seqrisk/projection.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

using namespace seqrisk;
namespace fs = std::filesystem;

namespace {

Matrix clusters(std::size_t per_cluster, std::size_t k, std::size_t dim, std::uint64_t seed, std::vector<int>* labels) {
    RngStream rng(seed, 3);
    Matrix x(per_cluster * k, dim);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < per_cluster; ++i) {
            const std::size_t r = c * per_cluster + i;
            for (std::size_t d = 0; d < dim; ++d) x(r, d) = rng.normal() + (d == c ? 12.0 : 0.0);
            if (labels) labels->push_back(static_cast<int>(c));
        }
    }
    return x;
}

double knn_purity(const Matrix& y, const std::vector<int>& labels, std::size_t k) {
    const Matrix d = pairwise_sq_distances(y);
    double agree = 0.0;
    for (std::size_t i = 0; i < y.rows(); ++i) {
        std::vector<std::size_t> order(y.rows());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d(i, a) < d(i, b); });
        std::size_t taken = 0;
        for (std::size_t j : order) {
            if (j == i) continue;
            agree += labels[j] == labels[i];
            if (++taken == k) break;
        }
    }
    return agree / static_cast<double>(y.rows() * k);
}

} // namespace

TEST_CASE("bandwidth search hits the target entropy") {
    Matrix x = clusters(20, 3, 5, 1, nullptr);
    auto aff = compute_affinities(x, 10.0);
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        CHECK(std::abs(aff.entropy[i] - std::log2(10.0)) < 1e-4);
        for (std::size_t j = 0; j < x.rows(); ++j) {
            CHECK(aff.p(i, j) >= 0.0);
            CHECK(aff.p(i, j) == aff.p(j, i));
            total += aff.p(i, j);
        }
    }
    CHECK(std::abs(total - 1.0) < 1e-10);
}

TEST_CASE("infeasible configurations are rejected") {
    Matrix x = clusters(4, 2, 3, 2, nullptr);
    TsneConfig cfg;
    cfg.perplexity = 3.0;
    CHECK_THROWS_AS(tsne(x, cfg), ConfigError);
    CHECK_THROWS_AS(tsne(Matrix(3, 2), TsneConfig{}), ConfigError);
    cfg.perplexity = 1.5;
    cfg.iterations = 100;
    CHECK_THROWS_AS(tsne(x, cfg), ConfigError);
}

TEST_CASE("two separated pairs stay paired") {
    Matrix x = Matrix::from_rows({{0.0, 0.0}, {0.1, 0.0}, {10.0, 10.0}, {10.0, 10.1}});
    TsneConfig cfg;
    cfg.perplexity = 1.2;
    auto res = tsne(x, cfg);
    const Matrix d = pairwise_sq_distances(res.coords);
    CHECK(d(0, 1) < std::min(d(0, 2), d(0, 3)));
    CHECK(d(2, 3) < std::min(d(2, 0), d(2, 1)));
}

TEST_CASE("three clusters: KL halves and neighbourhoods are pure") {
    std::vector<int> labels;
    Matrix x = clusters(34, 3, 10, 7, &labels);
    x = Matrix(100, 10, std::vector<double>(x.data().begin(), x.data().begin() + 1000));
    labels.resize(100);
    TsneConfig cfg;
    auto res = tsne(x, cfg);
    for (double kl : res.kl_trace) REQUIRE(std::isfinite(kl));
    CHECK(res.kl_trace.back() < 0.5 * res.kl_trace.front());
    CHECK(knn_purity(res.coords, labels, 5) >= 0.9);

    auto again = tsne(x, cfg);
    CHECK(again.coords == res.coords);
}

TEST_CASE("row permutation leaves the geometry unchanged") {
    Matrix x = clusters(10, 3, 4, 5, nullptr);
    TsneConfig cfg;
    cfg.perplexity = 5.0;
    RngStream rng(1, 9);
    Matrix init(x.rows(), 2);
    for (double& v : init.data()) v = 1e-4 * rng.normal();
    std::vector<std::size_t> perm(x.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    Matrix xp(x.rows(), x.cols()), ip(x.rows(), 2);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), xp.row(i).begin());
        std::copy(init.row(perm[i]).begin(), init.row(perm[i]).end(), ip.row(i).begin());
    }
    const Matrix a = pairwise_sq_distances(tsne(x, cfg, init).coords);
    const Matrix b = pairwise_sq_distances(tsne(xp, cfg, ip).coords);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.rows(); ++j) worst = std::max(worst, std::abs(a(perm[i], perm[j]) - b(i, j)));
    }
    CHECK(worst < 1e-9);

    CHECK(pairwise_sq_distances(tsne(x, cfg).coords)(perm[0], perm[1]) == pairwise_sq_distances(tsne(xp, cfg).coords)(0, 1));
}

TEST_CASE("projecting activation tables") {
    const fs::path dir = fs::temp_directory_path() / "seqrisk_test_projection";
    fs::create_directories(dir);
    auto make = [&](const std::string& name, const std::string& window, std::size_t width, bool flip) {
        Table t;
        t.schema = "seqrisk.activations";
        t.columns = {"patient_id", "label", "window", "probability", "predicted", "confusion"};
        for (std::size_t k = 0; k < width; ++k) t.columns.push_back("h" + std::to_string(k));
        RngStream rng(width, 0);
        for (std::size_t i = 0; i < 20; ++i) {
            const bool pred = flip ? i % 2 == 0 : i % 3 == 0;
            std::vector<std::string> row{"P" + std::to_string(i), "1", window, "0.5", pred ? "1" : "0", pred ? "TP" : "FN"};
            for (std::size_t k = 0; k < width; ++k) row.push_back(format_number(rng.normal() + (i % 2) * 5.0));
            t.rows.push_back(row);
        }
        write_table(dir / name, t);
        return dir / name;
    };
    const auto one = make("a.tsv", "24", 3, false);
    const auto two = make("b.tsv", "24,18", 6, true);
    TsneConfig cfg;
    cfg.perplexity = 4.0;
    cfg.iterations = 300;

    Table single = project_patients({one}, cfg);
    CHECK(single.rows.size() == 20);
    CHECK(std::find(single.columns.begin(), single.columns.end(), "x_b") == single.columns.end());

    Table paired = project_patients({one, two}, cfg);
    CHECK(paired.rows.size() == 20);
    const std::size_t flipped = paired.column("flipped"), transition = paired.column("transition");
    for (std::size_t i = 0; i < 20; ++i) {
        const bool differs = (i % 2 == 0) != (i % 3 == 0);
        CHECK(paired.rows[i][flipped] == (differs ? "1" : "0"));
    }
    CHECK(paired.rows[2][transition] == "FN->TP");
    CHECK(project_patients({one, two}, cfg).rows == paired.rows);

    Table broken;
    broken.schema = "seqrisk.activations";
    broken.columns = {"patient_id", "label"};
    write_table(dir / "broken.tsv", broken);
    CHECK_THROWS_AS(project_patients({dir / "broken.tsv"}, cfg), SchemaError);
}
