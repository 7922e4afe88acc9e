#include "doctest.h"

#include "seqrisk/errors.hpp"
#include "seqrisk/numcore.hpp"

#include <cmath>
#include <limits>
#include <vector>

using namespace seqrisk;

namespace {

Param make_param(const char* name, std::size_t r, std::size_t c, RngStream& rng, double scale = 1.0) {
    Param p(name, r, c);
    for (auto& v : p.value.data()) v = rng.uniform(-scale, scale);
    return p;
}

} // namespace

TEST_CASE("affine forward matches hand evaluation") {
    Param w("w", 2, 2), b("b", 1, 2);
    w.value = Matrix::from_rows({{1, 0}, {0, 1}});
    CHECK(affine_forward(Matrix::from_rows({{1, 2}}), w, b) == Matrix::from_rows({{1, 2}}));

    Param w2("w", 2, 1), b2("b", 1, 1);
    w2.value = Matrix::from_rows({{2}, {3}});
    b2.value(0, 0) = 1;
    Matrix x = Matrix::from_rows({{1, 1}});
    CHECK(affine_forward(x, w2, b2)(0, 0) == 6.0);

    Matrix dx = affine_backward(x, Matrix::from_rows({{1}}), w2, b2);
    CHECK(w2.grad == Matrix::from_rows({{1}, {1}}));
    CHECK(b2.grad(0, 0) == 1.0);
    CHECK(dx == Matrix::from_rows({{2, 3}}));
}

TEST_CASE("affine shape mismatch names both shapes") {
    Param w("w", 3, 2), b("b", 1, 2);
    try {
        affine_forward(Matrix(1, 2), w, b);
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        CHECK(msg.find("1x2") != std::string::npos);
        CHECK(msg.find("3x2") != std::string::npos);
    }
}

TEST_CASE("activations") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(std::isfinite(sigmoid(-700.0)));
    CHECK(sigmoid(700.0) == doctest::Approx(1.0));
    Matrix x = Matrix::from_rows({{-3, 0, 2}});
    CHECK(activate(x, Activation::Tanh)(0, 1) == 0.0);
    Matrix r = activate(x, Activation::Relu);
    CHECK(r(0, 0) == 0.0);
    Matrix back = activate_backward(r, Matrix::from_rows({{1, 1, 1}}), Activation::Relu);
    CHECK(back(0, 0) == 0.0);
    CHECK(back(0, 2) == 1.0);
}

TEST_CASE("softmax cross-entropy values and stability") {
    std::vector<int> y0{0};
    auto a = softmax_cross_entropy(Matrix::from_rows({{0, 0}}), y0);
    CHECK(a.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(a.grad(0, 0) == doctest::Approx(-0.5));
    CHECK(a.grad(0, 1) == doctest::Approx(0.5));

    auto b = softmax_cross_entropy(Matrix::from_rows({{1000, 0}}), y0);
    CHECK(std::isfinite(b.loss));
    CHECK(b.loss == doctest::Approx(0.0));

    std::vector<int> y1{1};
    auto c = softmax_cross_entropy(Matrix::from_rows({{1, -1}}), y1);
    CHECK(c.loss == doctest::Approx(std::log(1.0 + std::exp(2.0))).epsilon(1e-12));

    std::vector<int> bad{2};
    CHECK_THROWS_AS(softmax_cross_entropy(Matrix::from_rows({{0, 0}}), bad), InvalidArgument);

    RngStream rng(3, 0);
    Matrix logits(20, 2);
    for (auto& v : logits.data()) v = rng.uniform(-50, 50);
    Matrix p = softmax(logits);
    for (std::size_t i = 0; i < p.rows(); ++i) CHECK(std::abs(p(i, 0) + p(i, 1) - 1.0) < 1e-12);
}

TEST_CASE("softmax cross-entropy gradient against finite differences") {
    RngStream rng(11, 0);
    Param logits = make_param("logits", 4, 2, rng, 2.0);
    std::vector<int> labels{0, 1, 1, 0};
    std::vector<Param*> ps{&logits};
    auto rep = grad_check(ps, [&] {
        auto ce = softmax_cross_entropy(logits.value, labels);
        for (std::size_t i = 0; i < logits.size(); ++i) logits.grad.data()[i] += ce.grad.data()[i];
        return ce.loss;
    });
    CHECK(rep.max_rel_error < 1e-7);
}

TEST_CASE("grad_check on a quadratic") {
    Param p("theta", 1, 1);
    p.value(0, 0) = 3.0;
    std::vector<Param*> ps{&p};
    auto rep = grad_check(ps, [&] {
        p.grad(0, 0) += 2.0 * p.value(0, 0);
        return p.value(0, 0) * p.value(0, 0);
    });
    CHECK(std::abs(rep.worst_analytic - 6.0) < 1e-9);
    CHECK(std::abs(rep.worst_numeric - 6.0) < 1e-9);
}

TEST_CASE("dropout") {
    RngStream rng(5, 0);
    Matrix x(10, 10, 1.0);
    CHECK(dropout_forward(x, 0.0, rng, true).out == x);
    CHECK(dropout_forward(x, 0.7, rng, false).out == x);
    CHECK_THROWS_AS(dropout_forward(x, 1.0, rng, true), InvalidArgument);

    Matrix big(1000, 100, 1.0);
    auto d = dropout_forward(big, 0.5, rng, true);
    double sum = 0.0, zeros = 0.0;
    for (double v : d.out.data()) {
        sum += v;
        zeros += v == 0.0;
    }
    CHECK(std::abs(sum / 1e5 - 1.0) < 0.02);
    CHECK(std::abs(zeros / 1e5 - 0.5) < 0.01);

    RngStream a(9, 4), b(9, 4);
    CHECK(dropout_forward(x, 0.3, a, true).mask == dropout_forward(x, 0.3, b, true).mask);
}

TEST_CASE("adam recurrences") {
    Param p("p", 1, 1);
    p.grad(0, 0) = 1.0;
    adam_step(p, AdamConfig{});
    CHECK(std::abs(p.value(0, 0) + 0.001) < 1e-6);
    CHECK(p.grad(0, 0) == 0.0);
    CHECK(p.step_count == 1);

    Param z("z", 2, 2);
    z.value(1, 1) = 0.25;
    Matrix before = z.value;
    adam_step(z, AdamConfig{});
    CHECK(z.value == before);

    // Oracle: textbook recurrences evaluated by hand for two steps of g = 1.
    Param q("q", 1, 1);
    AdamConfig cfg;
    double theta = 0.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        q.grad(0, 0) = 1.0;
        adam_step(q, cfg);
        m = cfg.beta1 * m + (1 - cfg.beta1) * 1.0;
        v = cfg.beta2 * v + (1 - cfg.beta2) * 1.0;
        const double mh = m / (1 - std::pow(cfg.beta1, t));
        const double vh = v / (1 - std::pow(cfg.beta2, t));
        theta -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    CHECK(q.value(0, 0) == theta);

    Param frozen("f", 3, 1);
    frozen.value = Matrix::from_rows({{0.1}, {-2.0}, {7.5}});
    frozen.grad = Matrix::from_rows({{0.3}, {1.0}, {-4.0}});
    Matrix keep = frozen.value;
    AdamConfig zero_lr;
    zero_lr.lr = 0.0;
    adam_step(frozen, zero_lr);
    CHECK(frozen.value == keep);

    Param bad("bad_weight", 1, 2);
    bad.grad(0, 1) = std::nan("");
    try {
        adam_step(bad, cfg);
        FAIL("expected non-finite error");
    } catch (const NonFiniteError& e) {
        CHECK(std::string(e.what()).find("bad_weight") != std::string::npos);
    }
}

TEST_CASE("conv1d with global max pooling") {
    ConvKernel k("k", 2, 1, 1);
    k.weight.value = Matrix::from_rows({{1}, {0}});
    Matrix seq = Matrix::from_rows({{1}, {2}, {3}});
    Matrix conv = conv1d_valid(seq, k);
    CHECK(conv == Matrix::from_rows({{1}, {2}}));
    std::vector<ConvKernel> ks{k};
    auto pooled = conv1d_maxpool(seq, ks);
    CHECK(pooled.pooled == std::vector<double>{2.0});

    ConvKernel zero("z", 2, 1, 3);
    auto zp = conv1d_maxpool(seq, std::vector<ConvKernel>{zero});
    for (double v : zp.pooled) CHECK(v == 0.0);

    ConvKernel wide("w", 4, 1, 1);
    CHECK_THROWS_AS(conv1d_valid(seq, wide), InvalidArgument);

    // Ties route to the first maximum.
    Matrix flat = Matrix::from_rows({{1}, {1}, {1}});
    CHECK(global_max_argmax(conv1d_valid(flat, k))[0] == 0);
}

TEST_CASE("conv1d maxpool backward against finite differences") {
    RngStream rng(21, 0);
    std::vector<ConvKernel> ks;
    ks.emplace_back("k2", 2, 2, 2);
    ks.emplace_back("k3", 3, 2, 1);
    for (auto& k : ks) {
        for (auto& v : k.weight.value.data()) v = rng.uniform(-1, 1);
        for (auto& v : k.bias.value.data()) v = rng.uniform(-1, 1);
    }
    Param seq = make_param("seq", 4, 2, rng);  // 8 + 4 + 2 + 6 + 1 = 21 parameters
    std::vector<double> upstream{0.3, -1.2, 0.8};
    std::vector<Param*> ps{&seq, &ks[0].weight, &ks[0].bias, &ks[1].weight, &ks[1].bias};
    auto rep = grad_check(ps, [&] {
        auto fwd = conv1d_maxpool(seq.value, ks);
        Matrix dseq = conv1d_maxpool_backward(seq.value, fwd, upstream, ks);
        for (std::size_t i = 0; i < seq.size(); ++i) seq.grad.data()[i] += dseq.data()[i];
        double loss = 0.0;
        for (std::size_t i = 0; i < upstream.size(); ++i) loss += upstream[i] * fwd.pooled[i];
        return loss;
    });
    CHECK(rep.coordinates >= 20);
    CHECK(rep.max_rel_error < 1e-5);
}

TEST_CASE("matmul variants agree with a naive triple loop") {
    RngStream rng(7, 0);
    Matrix a(3, 4), b(4, 5);
    for (auto& v : a.data()) v = rng.uniform(-1, 1);
    for (auto& v : b.data()) v = rng.uniform(-1, 1);
    Matrix c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
    }
    Matrix at(4, 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 4; ++k) at(k, i) = a(i, k);
    Matrix c2(3, 5);
    matmul_tn_acc(at, b, c2);
    Matrix bt(5, 4);
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t j = 0; j < 5; ++j) bt(j, k) = b(k, j);
    Matrix c3(3, 5);
    matmul_nt_acc(a, bt, c3);
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(c2.data()[i] == doctest::Approx(c.data()[i]).epsilon(1e-14));
        CHECK(c3.data()[i] == doctest::Approx(c.data()[i]).epsilon(1e-14));
    }
    CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("rng streams are reproducible and independent") {
    RngStream a(42, 1), b(42, 1), c(42, 2);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs |= x != c.next_u64();
    }
    CHECK(differs);

    RngStream p(1, 9);
    double mean = 0.0;
    for (int i = 0; i < 20000; ++i) mean += static_cast<double>(p.poisson(3.5));
    CHECK(mean / 20000 == doctest::Approx(3.5).epsilon(0.03));

    RngStream n(1, 10);
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < 20000; ++i) {
        double z = n.normal();
        s += z;
        s2 += z * z;
    }
    CHECK(std::abs(s / 20000) < 0.03);
    CHECK(s2 / 20000 == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("require_finite rejects NaN") {
    Matrix m(2, 2);
    m(1, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(require_finite(m, "m"), NonFiniteError);
}
