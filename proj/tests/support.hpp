#pragma once

#include "seqrisk/features.hpp"
#include "seqrisk/numcore.hpp"

#include <string>

namespace seqrisk::testing {

// Random count tensor. When `signal` > 0, positives get extra counts on the
// first concept in the newest slice.
inline SliceTensor random_tensor(std::size_t n, std::size_t t, std::size_t v, std::uint64_t seed, double signal = 0.0,
                                 double rate = 1.0) {
    RngStream rng(seed, 77);
    SliceTensor out;
    out.n = n;
    out.t = t;
    out.v = v;
    out.window = ObservationWindow(t);
    out.counts.resize(n * t * v);
    out.demographics = Matrix(n, kDemographicWidth);
    for (std::size_t c = 0; c < v; ++c) {
        out.vocabulary.codes.push_back("C" + std::to_string(100 + c));
        out.vocabulary.types.push_back(c % 3 == 2 ? CodeType::Px : CodeType::Dx);
        out.vocabulary.variance.push_back(1.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const int y = rng.bernoulli(0.5) ? 1 : 0;
        out.labels.push_back(y);
        out.patient_ids.push_back("P" + std::to_string(100000 + i));
        for (std::size_t s = 0; s < t; ++s) {
            for (std::size_t c = 0; c < v; ++c) {
                double lambda = rate;
                if (y == 1 && c == 0 && s + 1 == t) lambda += signal;
                out.count(i, s, c) = static_cast<double>(rng.poisson(lambda));
            }
        }
        const auto demo = encode_demographics(static_cast<int>(rng.below(2)), 0.5 + rng.uniform(), static_cast<int>(rng.below(10)));
        std::copy(demo.begin(), demo.end(), out.demographics.row(i).begin());
    }
    return out;
}

inline std::vector<std::size_t> all_rows(const SliceTensor& t) {
    std::vector<std::size_t> r(t.n);
    for (std::size_t i = 0; i < t.n; ++i) r[i] = i;
    return r;
}

} // namespace seqrisk::testing
