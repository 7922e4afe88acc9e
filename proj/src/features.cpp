#include "seqrisk/features.hpp"

#include "seqrisk/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

namespace seqrisk {

std::string group_code(std::string_view code, CodeType type) {
    if (code.empty()) throw InvalidArgument("empty code");
    if (type == CodeType::Px) return std::string(code);
    return std::string(code.substr(0, code.find('.')));
}

std::string_view to_string(TimeSlice s) {
    switch (s) {
    case TimeSlice::M24: return "M24";
    case TimeSlice::M18: return "M18";
    case TimeSlice::M12: return "M12";
    case TimeSlice::M6: return "M6";
    }
    return "?";
}

std::pair<int, int> month_range(TimeSlice s) {
    const int lo = 21 - 6 * static_cast<int>(s);
    return {lo, lo + 6};
}

std::optional<TimeSlice> slice_for_month_offset(int months_before) {
    if (months_before < 3 || months_before >= 27) return std::nullopt;
    return static_cast<TimeSlice>(3 - (months_before - 3) / 6);
}

int month_offset(std::int32_t days_before) {
    return static_cast<int>(std::floor(static_cast<double>(days_before) / kDaysPerMonth));
}

// ---------------------------------------------------------------- window

ObservationWindow::ObservationWindow(std::size_t n_slices) : n_(n_slices) {
    if (n_slices < 1 || n_slices > kMaxSlices) {
        throw InvalidArgument("observation window must hold 1..4 slices, got " + std::to_string(n_slices));
    }
}

ObservationWindow ObservationWindow::parse(std::string_view text) {
    static constexpr int expected[] = {24, 18, 12, 6};
    std::size_t n = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string_view::npos) comma = text.size();
        std::string item(text.substr(pos, comma - pos));
        item.erase(std::remove_if(item.begin(), item.end(), [](char c) { return c == ' ' || c == 'M' || c == 'm'; }),
                   item.end());
        if (n >= kMaxSlices || item != std::to_string(expected[n])) {
            throw ConfigError("window must be a prefix of 24,18,12,6; got '" + std::string(text) + "'");
        }
        ++n;
        pos = comma + 1;
    }
    return ObservationWindow(n);
}

std::string ObservationWindow::label() const {
    static constexpr const char* names[] = {"24", "18", "12", "6"};
    std::string s;
    for (std::size_t i = 0; i < n_; ++i) {
        if (i) s += ',';
        s += names[i];
    }
    return s;
}

// ---------------------------------------------------------------- slicing

SlicedCounts slice_events(std::span<const CodedEvent> events, Date index_date) {
    SlicedCounts out;
    std::array<std::set<std::int32_t>, kMaxSlices> days;
    for (const auto& e : events) {
        const std::int32_t before = index_date.days - e.date.days;
        if (before < 0) {
            throw DataIntegrityError("event for patient " + e.patient_id + " on " + format_date(e.date) +
                                     " is after index date " + format_date(index_date));
        }
        const int months = month_offset(before);
        auto slice = slice_for_month_offset(months);
        if (!slice) {
            if (months < 3) {
                ++out.dropped_buffer;
            } else {
                ++out.dropped_old;
            }
            continue;
        }
        const auto s = static_cast<std::size_t>(*slice);
        const std::string g = group_code(e.code, e.code_type);
        out.per_slice[s][g] += 1.0;
        out.code_types.emplace(g, e.code_type);
        days[s].insert(e.date.days);
        ++out.sliced;
    }
    for (std::size_t s = 0; s < kMaxSlices; ++s) out.encounter_days[s] = days[s].size();
    return out;
}

// ---------------------------------------------------------------- vocabulary

std::optional<std::size_t> ConceptVocabulary::find(const std::string& code) const {
    auto it = std::lower_bound(codes.begin(), codes.end(), code);
    if (it == codes.end() || *it != code) return std::nullopt;
    return static_cast<std::size_t>(it - codes.begin());
}

ConceptVocabulary ConceptVocabulary::subset(std::span<const std::size_t> columns) const {
    std::vector<std::size_t> cols(columns.begin(), columns.end());
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    ConceptVocabulary out;
    for (auto c : cols) {
        if (c >= size()) throw DimensionError("concept column " + std::to_string(c) + " out of range");
        out.codes.push_back(codes[c]);
        out.types.push_back(types[c]);
        out.variance.push_back(variance.empty() ? 0.0 : variance[c]);
    }
    return out;
}

ConceptVocabulary build_vocabulary(std::span<const SlicedCounts> training, double threshold) {
    if (training.empty()) throw InvalidArgument("build_vocabulary: empty training set");
    std::map<std::string, CodeType> types;
    for (const auto& p : training) types.insert(p.code_types.begin(), p.code_types.end());
    // Per-code sums in one pass; patients lacking a code contribute zero.
    std::map<std::string, std::pair<double, double>> moments;
    for (const auto& p : training) {
        std::map<std::string, double> totals;
        for (const auto& slice : p.per_slice) {
            for (const auto& [code, c] : slice) totals[code] += c;
        }
        for (const auto& [code, total] : totals) {
            auto& m = moments[code];
            m.first += total;
            m.second += total * total;
        }
    }
    const double n = static_cast<double>(training.size());
    ConceptVocabulary vocab;
    for (const auto& [code, m] : moments) {
        const double mean = m.first / n;
        const double var = std::max(0.0, m.second / n - mean * mean);
        if (var >= threshold) {
            vocab.codes.push_back(code);
            vocab.types.push_back(types.at(code));
            vocab.variance.push_back(var);
        }
    }
    return vocab;
}

// ---------------------------------------------------------------- tensors

std::array<double, kDemographicWidth> encode_demographics(int gender, double age, int race) {
    if (race < 0 || race > 9) throw InvalidArgument("race index " + std::to_string(race) + " outside 0..9");
    if (gender != 0 && gender != 1) throw InvalidArgument("gender must be 0 or 1");
    std::array<double, kDemographicWidth> d{};
    d[0] = gender;
    d[1] = age;
    d[2 + static_cast<std::size_t>(race)] = 1.0;
    return d;
}

std::array<double, kDemographicWidth> encode_demographics(const PatientRecord& p) {
    return encode_demographics(p.gender, static_cast<double>(p.age_at_index()), p.race);
}

void SliceTensor::validate() const {
    if (counts.size() != n * t * v) throw DimensionError("slice tensor counts length mismatch");
    if (demographics.rows() != n || demographics.cols() != kDemographicWidth) {
        throw DimensionError("slice tensor demographics " + demographics.shape_str());
    }
    if (labels.size() != n || patient_ids.size() != n) throw DimensionError("slice tensor label/id length mismatch");
    if (vocabulary.size() != v) throw DimensionError("slice tensor vocabulary size mismatch");
    if (t < 1 || t > kMaxSlices) throw DimensionError("slice tensor T out of range");
}

SliceTensor SliceTensor::subset(std::span<const std::size_t> rows) const {
    SliceTensor out;
    out.n = rows.size();
    out.t = t;
    out.v = v;
    out.window = window;
    out.aggregated = aggregated;
    out.binarized = binarized;
    out.vocabulary = vocabulary;
    out.counts.reserve(rows.size() * t * v);
    out.demographics = Matrix(rows.size(), kDemographicWidth);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t i = rows[k];
        if (i >= n) throw DimensionError("subset row " + std::to_string(i) + " out of range");
        out.counts.insert(out.counts.end(), counts.begin() + static_cast<std::ptrdiff_t>(i * t * v),
                          counts.begin() + static_cast<std::ptrdiff_t>((i + 1) * t * v));
        auto src = demographics.row(i);
        std::copy(src.begin(), src.end(), out.demographics.row(k).begin());
        out.labels.push_back(labels[i]);
        out.patient_ids.push_back(patient_ids[i]);
    }
    return out;
}

SliceTensor build_tensor(std::span<const PatientRecord> patients, std::span<const SlicedCounts> sliced,
                         const ConceptVocabulary& vocab, const ObservationWindow& window,
                         const TensorOptions& options) {
    if (patients.size() != sliced.size()) throw DimensionError("build_tensor: patients and sliced counts differ in length");
    SliceTensor out;
    out.n = patients.size();
    out.t = window.size();
    out.v = vocab.size();
    out.window = window;
    out.vocabulary = vocab;
    out.counts.assign(out.n * out.t * out.v, 0.0);
    out.demographics = Matrix(out.n, kDemographicWidth);
    for (std::size_t i = 0; i < out.n; ++i) {
        const auto& p = patients[i];
        auto demo = encode_demographics(p);
        if (options.standardize_age) demo[1] = (demo[1] - options.age_mean) / options.age_std;
        std::copy(demo.begin(), demo.end(), out.demographics.row(i).begin());
        out.labels.push_back(p.label == Label::Case ? 1 : 0);
        out.patient_ids.push_back(p.patient_id);
        for (std::size_t s = 0; s < out.t; ++s) {
            for (const auto& [code, c] : sliced[i].per_slice[s]) {
                if (auto col = vocab.find(code)) {
                    out.count(i, s, *col) += c;
                } else {
                    out.unknown_code_events += static_cast<std::size_t>(c);
                }
            }
        }
    }
    return out;
}

SliceTensor aggregate_slices(const SliceTensor& t) {
    if (t.t < 1) throw DimensionError("aggregate_slices: empty slice axis");
    SliceTensor out = t;
    out.t = 1;
    out.aggregated = true;
    out.counts.assign(t.n * t.v, 0.0);
    for (std::size_t i = 0; i < t.n; ++i) {
        for (std::size_t s = 0; s < t.t; ++s) {
            for (std::size_t c = 0; c < t.v; ++c) out.counts[i * t.v + c] += t.count(i, s, c);
        }
    }
    return out;
}

Matrix flatten_for_tabular(const SliceTensor& t) {
    const std::size_t width = t.t * t.v + kDemographicWidth;
    Matrix m(t.n, width);
    for (std::size_t i = 0; i < t.n; ++i) {
        auto row = m.row(i);
        std::copy(t.counts.begin() + static_cast<std::ptrdiff_t>(i * t.t * t.v),
                  t.counts.begin() + static_cast<std::ptrdiff_t>((i + 1) * t.t * t.v), row.begin());
        auto demo = t.demographics.row(i);
        std::copy(demo.begin(), demo.end(), row.begin() + static_cast<std::ptrdiff_t>(t.t * t.v));
    }
    return m;
}

SliceTensor binarize(const SliceTensor& t) {
    SliceTensor out = t;
    for (double& c : out.counts) c = std::min(c, 1.0);
    out.binarized = true;
    return out;
}

SliceTensor drop_demographics(const SliceTensor& t) {
    SliceTensor out = t;
    out.demographics.fill(0.0);
    return out;
}

SliceTensor restrict_concepts(const SliceTensor& t, std::span<const std::size_t> columns) {
    SliceTensor out = t;
    out.vocabulary = t.vocabulary.subset(columns);
    std::vector<std::size_t> keep;
    for (const auto& code : out.vocabulary.codes) keep.push_back(*t.vocabulary.find(code));
    out.v = keep.size();
    out.counts.assign(t.n * t.t * out.v, 0.0);
    for (std::size_t i = 0; i < t.n; ++i) {
        for (std::size_t s = 0; s < t.t; ++s) {
            for (std::size_t k = 0; k < keep.size(); ++k) out.count(i, s, k) = t.count(i, s, keep[k]);
        }
    }
    return out;
}

SliceTensor drop_procedures(const SliceTensor& t) {
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < t.v; ++c) {
        if (t.vocabulary.types[c] != CodeType::Px) keep.push_back(c);
    }
    return restrict_concepts(t, keep);
}

std::vector<std::string> density_filter(std::span<const PatientRecord> patients, std::span<const CodedEvent> events,
                                        std::size_t per_slice_min, const ObservationWindow& window) {
    std::unordered_map<std::string, std::vector<CodedEvent>> by_patient;
    for (const auto& e : events) by_patient[e.patient_id].push_back(e);
    std::vector<std::string> out;
    for (const auto& p : patients) {
        if (per_slice_min == 0) {
            out.push_back(p.patient_id);
            continue;
        }
        std::vector<CodedEvent> mine;
        if (auto it = by_patient.find(p.patient_id); it != by_patient.end()) {
            for (const auto& e : it->second) {
                if (e.date <= p.index_date) mine.push_back(e);
            }
        }
        const SlicedCounts sc = slice_events(mine, p.index_date);
        bool ok = true;
        for (std::size_t s = 0; s < window.size(); ++s) ok = ok && sc.encounter_days[s] >= per_slice_min;
        if (ok) out.push_back(p.patient_id);
    }
    return out;
}

} // namespace seqrisk
