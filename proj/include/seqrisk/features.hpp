#pragma once

#include "seqrisk/cohort.hpp"
#include "seqrisk/numcore.hpp"

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace seqrisk {

// Six-month slices before the index date, oldest first.
enum class TimeSlice { M24 = 0, M18 = 1, M12 = 2, M6 = 3 };
inline constexpr std::size_t kMaxSlices = 4;
inline constexpr std::size_t kDemographicWidth = 12;
inline constexpr double kDaysPerMonth = 30.4375;

std::string_view to_string(TimeSlice s);
// Months-before-index range [lo, hi) covered by a slice.
std::pair<int, int> month_range(TimeSlice s);
std::optional<TimeSlice> slice_for_month_offset(int months_before);
int month_offset(std::int32_t days_before);

// Contiguous slices starting at M24: {M24}, {M24,M18}, ... Horizon includes the buffer.
class ObservationWindow {
public:
    ObservationWindow() = default;
    explicit ObservationWindow(std::size_t n_slices);
    static ObservationWindow parse(std::string_view text);  // "24", "24,18", ...

    std::size_t size() const noexcept { return n_; }
    TimeSlice slice(std::size_t i) const { return static_cast<TimeSlice>(i); }
    int horizon_months() const noexcept { return 27 - 6 * static_cast<int>(n_); }
    std::string label() const;  // "24,18"
    bool contains(TimeSlice s) const noexcept { return static_cast<std::size_t>(s) < n_; }

    friend bool operator==(const ObservationWindow&, const ObservationWindow&) = default;

private:
    std::size_t n_ = 1;
};

// Per-slice grouped-code counts for one patient over the full M24..M6 span.
struct SlicedCounts {
    std::array<std::map<std::string, double>, kMaxSlices> per_slice;
    std::map<std::string, CodeType> code_types;
    std::array<std::size_t, kMaxSlices> encounter_days{};  // distinct event days per slice
    std::size_t sliced = 0;
    std::size_t dropped_buffer = 0;
    std::size_t dropped_old = 0;
};

// Events must be dated on or before the index date.
SlicedCounts slice_events(std::span<const CodedEvent> events, Date index_date);

struct ConceptVocabulary {
    std::vector<std::string> codes;  // sorted; column index = position
    std::vector<CodeType> types;
    std::vector<double> variance;

    std::size_t size() const noexcept { return codes.size(); }
    std::optional<std::size_t> find(const std::string& code) const;
    ConceptVocabulary subset(std::span<const std::size_t> columns) const;
};

// Population variance of per-patient totals over all four slices, training rows only.
ConceptVocabulary build_vocabulary(std::span<const SlicedCounts> training, double threshold = 1.0);

std::array<double, kDemographicWidth> encode_demographics(int gender, double age, int race);
std::array<double, kDemographicWidth> encode_demographics(const PatientRecord& p);

struct SliceTensor {
    std::size_t n = 0;
    std::size_t t = 0;
    std::size_t v = 0;
    std::vector<double> counts;  // (i * t + s) * v + c
    Matrix demographics;         // n x 12
    std::vector<int> labels;
    std::vector<std::string> patient_ids;
    ObservationWindow window;
    bool aggregated = false;
    bool binarized = false;
    ConceptVocabulary vocabulary;
    std::size_t unknown_code_events = 0;

    double count(std::size_t i, std::size_t s, std::size_t c) const { return counts[(i * t + s) * v + c]; }
    double& count(std::size_t i, std::size_t s, std::size_t c) { return counts[(i * t + s) * v + c]; }
    std::span<const double> slice_row(std::size_t i, std::size_t s) const { return {counts.data() + (i * t + s) * v, v}; }

    SliceTensor subset(std::span<const std::size_t> rows) const;
    void validate() const;
};

struct TensorOptions {
    bool standardize_age = false;
    double age_mean = 0.0;
    double age_std = 1.0;
};

// Rows follow `patients` order. Codes absent from the vocabulary are counted in
// unknown_code_events and dropped.
SliceTensor build_tensor(std::span<const PatientRecord> patients, std::span<const SlicedCounts> sliced,
                         const ConceptVocabulary& vocab, const ObservationWindow& window,
                         const TensorOptions& options = {});

SliceTensor aggregate_slices(const SliceTensor& t);
// N x (T*V + 12): slice blocks oldest first, demographics last.
Matrix flatten_for_tabular(const SliceTensor& t);
SliceTensor binarize(const SliceTensor& t);
SliceTensor drop_demographics(const SliceTensor& t);
SliceTensor restrict_concepts(const SliceTensor& t, std::span<const std::size_t> columns);
SliceTensor drop_procedures(const SliceTensor& t);

// Patients with at least `per_slice_min` encounter-days in every slice of the window.
std::vector<std::string> density_filter(std::span<const PatientRecord> patients, std::span<const CodedEvent> events,
                                        std::size_t per_slice_min, const ObservationWindow& window);

} // namespace seqrisk
