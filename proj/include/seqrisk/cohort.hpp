#pragma once

#include "seqrisk/numcore.hpp"

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace seqrisk {

// Calendar date as days since 1970-01-01 (proleptic Gregorian).
struct Date {
    std::int32_t days = 0;
    friend auto operator<=>(const Date&, const Date&) = default;
};

Date make_date(int year, unsigned month, unsigned day);
Date parse_date(std::string_view iso);  // YYYY-MM-DD, throws SchemaError
std::string format_date(Date d);
int year_of(Date d);
inline std::int32_t days_between(Date earlier, Date later) { return later.days - earlier.days; }

enum class CodeType { Dx, Px };
std::string_view to_string(CodeType t);
CodeType parse_code_type(std::string_view s);

// DX codes collapse to the text before the first '.'; PX codes are unchanged.
std::string group_code(std::string_view code, CodeType type);

struct CodedEvent {
    std::string patient_id;
    Date date;
    std::string code;
    CodeType code_type = CodeType::Dx;
};

enum class Label { Control = 0, Case = 1 };
std::string_view to_string(Label l);
Label parse_label(std::string_view s);

struct PatientRecord {
    std::string patient_id;
    int gender = 0;  // 1 = male
    int birth_year = 1950;
    int race = 0;    // 0..9
    Label label = Label::Control;
    Date index_date;

    int age_at_index() const { return year_of(index_date) - birth_year; }
};

struct AgeBracket {
    int min_age = 30;
    int max_age = 80;
    bool contains(int age) const { return age >= min_age && age <= max_age; }
};

// Defaults are the realized set sizes (164,459 / 8,656 / 43,279 of 216,394).
struct SplitFractions {
    double train = 164459.0 / 216394.0;
    double validation = 8656.0 / 216394.0;
    double test = 43279.0 / 216394.0;
    void validate() const;
};

struct CohortConfig {
    std::size_t n_patients = 1000;
    double case_fraction = 21405.0 / 216394.0;
    AgeBracket ages;
    std::vector<std::string> chf_roots{"428"};
    // Codes that disqualify a control ("suggestive of CHF"). Matched on grouped root.
    std::vector<std::string> exclusion_roots{"428", "425"};
    int case_window_days = 183;
    int case_min_codes = 3;
    int control_interval_days = 365;
    int control_min_encounters = 3;
    int control_horizon_days = 822;  // 27 months of 30.4375 days, rounded up
    SplitFractions split;
    std::uint64_t seed = 1;
    Date index_from = make_date(2015, 1, 1);
    Date index_to = make_date(2016, 12, 31);

    void validate() const;
};

// Appendix-style list of high-importance top-level codes; the generator plants
// signal on a prefix of it.
const std::vector<std::string>& default_risk_codes();

struct SyntheticSignalSpec {
    std::vector<std::string> risk_codes = default_risk_codes();
    std::size_t n_background_codes = 40;
    std::size_t n_rare_codes = 0;  // low-rate codes that the variance filter should remove
    double background_rate = 0.5;  // events per code per 6 months
    double risk_rate = 0.5;
    double rare_rate = 0.01;
    // Case risk-code rate in observation slice p (0 = M24 ... 3 = M6) is
    // risk_rate * case_multiplier * trend^p.
    double case_multiplier = 1.0;
    double trend = 1.0;
    // When > 0, the case rates over the oldest `balanced_slices` slices are
    // rescaled so their sum equals the control sum times case_multiplier;
    // newer slices use risk_rate * case_multiplier.
    std::size_t balanced_slices = 0;
    // Every case risk-code event is emitted this many times on its day.
    std::size_t case_cluster_size = 1;
    // Demographics; means/stds are ages at index.
    bool demographic_shift = true;
    double case_age_mean = 66.69;
    double case_age_std = 16.3;
    double control_age_mean = 56.53;
    double control_age_std = 8.5;
    double case_male_fraction = 1.57 / 2.57;
    double control_male_fraction = 1.6 / 2.6;
    // When set, a case's excess risk-code rate is scaled linearly from 0 at the
    // youngest bracket age to 1 at the oldest, so signal strengthens with age.
    bool signal_age_scaling = false;

    void validate() const;
    // slice_pos 0 = M24 ... 3 = M6; age_weight in [0, 1] scales the excess over risk_rate.
    double case_rate(std::size_t slice_pos, double age_weight = 1.0) const;
};

struct SyntheticCohort {
    std::vector<PatientRecord> patients;
    std::vector<CodedEvent> events;
};

SyntheticCohort generate_synthetic_cohort(const CohortConfig& config, const SyntheticSignalSpec& signal);

struct IndexAssignment {
    std::string patient_id;
    Date index_date;
};

// Patients with >= case_min_codes distinct-day CHF-family DX codes inside one
// case_window_days window and no CHF code before it. Index = first qualifying day.
std::vector<IndexAssignment> select_cases(std::span<const CodedEvent> events,
                                          std::span<const PatientRecord> patients, const CohortConfig& config);

// Patients never coded with an exclusion root, with enough encounter-days in every
// trailing interval. Index = last recorded encounter.
std::vector<IndexAssignment> select_controls(std::span<const CodedEvent> events,
                                             std::span<const PatientRecord> patients,
                                             const CohortConfig& config);

// Applies both selectors and returns the cohort with label and index_date
// overwritten by the selection result, in patient_id order.
std::vector<PatientRecord> build_cohort(std::span<const CodedEvent> events, std::span<const PatientRecord> patients,
                                        const CohortConfig& config);

enum class Split { Train = 0, Validation = 1, Test = 2 };
std::string_view to_string(Split s);

struct SplitAssignment {
    std::map<std::string, Split> by_patient;
    std::vector<std::string> members(Split s) const;
    std::size_t count(Split s) const;
};

SplitAssignment split_cohort(std::span<const std::string> patient_ids, const SplitFractions& fractions,
                             std::uint64_t seed);

} // namespace seqrisk
