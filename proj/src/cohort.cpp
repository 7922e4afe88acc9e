#include "seqrisk/cohort.hpp"

#include "seqrisk/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace seqrisk {

// ---------------------------------------------------------------- dates

namespace {

// Howard Hinnant's days_from_civil / civil_from_days.
std::int32_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<int>(doe) - 719468;
}

struct Civil {
    int y;
    unsigned m;
    unsigned d;
};

Civil civil_from_days(std::int32_t z) {
    z += 719468;
    const int era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int y = static_cast<int>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return {y + (m <= 2), m, d};
}

unsigned days_in_month(int y, unsigned m) {
    static constexpr unsigned table[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && ((y % 4 == 0 && y % 100 != 0) || y % 400 == 0)) return 29;
    return table[m - 1];
}

} // namespace

Date make_date(int year, unsigned month, unsigned day) {
    if (month < 1 || month > 12 || day < 1 || day > days_in_month(year, month)) {
        throw InvalidArgument("invalid calendar date " + std::to_string(year) + "-" + std::to_string(month) + "-" +
                              std::to_string(day));
    }
    return Date{days_from_civil(year, month, day)};
}

Date parse_date(std::string_view iso) {
    auto bad = [&] { return SchemaError("invalid ISO date '" + std::string(iso) + "'"); };
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') throw bad();
    int y = 0;
    unsigned m = 0, d = 0;
    auto num = [&](std::size_t pos, std::size_t len, auto& out) {
        auto [p, ec] = std::from_chars(iso.data() + pos, iso.data() + pos + len, out);
        if (ec != std::errc{} || p != iso.data() + pos + len) throw bad();
    };
    num(0, 4, y);
    num(5, 2, m);
    num(8, 2, d);
    if (m < 1 || m > 12 || d < 1 || d > days_in_month(y, m)) throw bad();
    return Date{days_from_civil(y, m, d)};
}

std::string format_date(Date d) {
    Civil c = civil_from_days(d.days);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", c.y, c.m, c.d);
    return buf;
}

int year_of(Date d) { return civil_from_days(d.days).y; }

// ---------------------------------------------------------------- enums

std::string_view to_string(CodeType t) { return t == CodeType::Dx ? "DX" : "PX"; }

CodeType parse_code_type(std::string_view s) {
    if (s == "DX") return CodeType::Dx;
    if (s == "PX") return CodeType::Px;
    throw SchemaError("unknown code_type '" + std::string(s) + "'");
}

std::string_view to_string(Label l) { return l == Label::Case ? "case" : "control"; }

Label parse_label(std::string_view s) {
    if (s == "case") return Label::Case;
    if (s == "control") return Label::Control;
    throw SchemaError("unknown label '" + std::string(s) + "'");
}

std::string_view to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
    }
    return "?";
}

// ---------------------------------------------------------------- configs

void SplitFractions::validate() const {
    if (train < 0 || validation < 0 || test < 0) throw ConfigError("split fractions must be non-negative");
    if (std::abs(train + validation + test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1 (got " + std::to_string(train + validation + test) + ")");
    }
}

void CohortConfig::validate() const {
    if (!(case_fraction > 0.0 && case_fraction < 1.0)) throw ConfigError("case_fraction must be in (0, 1)");
    if (ages.min_age > ages.max_age) throw ConfigError("age bracket is empty");
    if (case_window_days <= 0 || case_min_codes <= 0) throw ConfigError("case rule parameters must be positive");
    if (control_interval_days <= 0 || control_min_encounters < 0) throw ConfigError("control rule parameters invalid");
    if (index_to < index_from) throw ConfigError("index date range is empty");
    split.validate();
}

const std::vector<std::string>& default_risk_codes() {
    static const std::vector<std::string> codes{
        "401", "250", "V58", "427", "272", "786", "585", "780", "724", "719", "V45", "285",
        "729", "496", "244", "V76", "278", "I10", "493", "V70", "424", "300", "E11", "E78",
        "V04", "M54", "Z79", "477", "Z00", "Z23", "R06", "R07", "Z36", "S72", "H93", "G45",
        "J34", "K56", "K31", "S46", "99214", "36415", "99213", "90471", "96372", "90686", "96912"};
    return codes;
}

void SyntheticSignalSpec::validate() const {
    if (background_rate < 0 || risk_rate < 0 || rare_rate < 0) throw ConfigError("event rates must be >= 0");
    if (case_multiplier < 1.0) throw ConfigError("case_multiplier must be >= 1");
    if (!(trend > 0.0)) throw ConfigError("trend must be > 0");
    if (balanced_slices > 4) throw ConfigError("balanced_slices must be <= 4");
    if (case_cluster_size < 1) throw ConfigError("case_cluster_size must be >= 1");
}

double SyntheticSignalSpec::case_rate(std::size_t slice_pos, double age_weight) const {
    double r = 0.0;
    if (balanced_slices > 0) {
        if (slice_pos < balanced_slices) {
            double norm = 0.0;
            for (std::size_t q = 0; q < balanced_slices; ++q) norm += std::pow(trend, static_cast<double>(q));
            r = risk_rate * case_multiplier * static_cast<double>(balanced_slices) *
                std::pow(trend, static_cast<double>(slice_pos)) / norm;
        } else {
            r = risk_rate * case_multiplier;
        }
    } else {
        r = risk_rate * case_multiplier * std::pow(trend, static_cast<double>(slice_pos));
    }
    return risk_rate + age_weight * (r - risk_rate);
}

// ---------------------------------------------------------------- generator

namespace {

constexpr double kDaysPerMonth = 30.4375;

struct Segment {
    int month_lo;
    int month_hi;
    int slice_pos;  // -1 pre-history, 0..3 observation (M24..M6), 4 buffer
};

constexpr Segment kSegments[] = {
    {27, 30, -1}, {21, 27, 0}, {15, 21, 1}, {9, 15, 2}, {3, 9, 3}, {0, 3, 4},
};

bool is_procedure_code(std::string_view code) {
    return code.size() == 5 && std::all_of(code.begin(), code.end(), [](char c) { return c >= '0' && c <= '9'; });
}

struct GenCode {
    std::string root;
    CodeType type;
    enum Kind { Background, Risk, Rare } kind;
};

std::string pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
    return s;
}

std::string dx_variant(const std::string& root, RngStream& rng) {
    static constexpr const char* suffixes[] = {"", ".0", ".1", ".43"};
    return root + suffixes[rng.below(4)];
}

int draw_age(RngStream& rng, double mean, double sd, const AgeBracket& ages) {
    for (int tries = 0; tries < 1000; ++tries) {
        double a = std::round(mean + sd * rng.normal());
        if (a >= ages.min_age && a <= ages.max_age) return static_cast<int>(a);
    }
    return std::clamp(static_cast<int>(std::round(mean)), ages.min_age, ages.max_age);
}

} // namespace

SyntheticCohort generate_synthetic_cohort(const CohortConfig& config, const SyntheticSignalSpec& signal) {
    config.validate();
    signal.validate();

    std::vector<GenCode> codes;
    for (std::size_t i = 0; i < signal.n_background_codes; ++i) {
        if (i % 4 == 3) {
            codes.push_back({std::to_string(70000 + i), CodeType::Px, GenCode::Background});
        } else {
            codes.push_back({"B" + pad(i, 3), CodeType::Dx, GenCode::Background});
        }
    }
    for (const auto& r : signal.risk_codes) {
        codes.push_back({r, is_procedure_code(r) ? CodeType::Px : CodeType::Dx, GenCode::Risk});
    }
    for (std::size_t i = 0; i < signal.n_rare_codes; ++i) {
        codes.push_back({"R" + pad(i, 3), CodeType::Dx, GenCode::Rare});
    }

    const std::size_t n = config.n_patients;
    const std::size_t n_cases = static_cast<std::size_t>(std::llround(config.case_fraction * static_cast<double>(n)));
    std::vector<bool> is_case(n, false);
    {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        RngStream label_rng(config.seed, 0);
        label_rng.shuffle(order);
        for (std::size_t i = 0; i < n_cases && i < n; ++i) is_case[order[i]] = true;
    }

    SyntheticCohort out;
    out.patients.reserve(n);
    const int id_width = std::max(6, static_cast<int>(std::to_string(n).size()));
    const double span_days = static_cast<double>(config.index_to.days - config.index_from.days + 1);

    for (std::size_t i = 0; i < n; ++i) {
        RngStream rng(config.seed, i + 1);
        PatientRecord p;
        p.patient_id = "P" + pad(i + 1, id_width);
        const bool c = is_case[i];
        p.label = c ? Label::Case : Label::Control;
        const double male = c ? signal.case_male_fraction : signal.control_male_fraction;
        p.gender = rng.bernoulli(signal.demographic_shift ? male : signal.control_male_fraction) ? 1 : 0;
        const bool shifted = signal.demographic_shift && c;
        const int age = draw_age(rng, shifted ? signal.case_age_mean : signal.control_age_mean,
                                 shifted ? signal.case_age_std : signal.control_age_std, config.ages);
        p.index_date = Date{config.index_from.days + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(span_days)))};
        p.birth_year = year_of(p.index_date) - age;
        p.race = static_cast<int>(rng.below(10));

        double age_weight = 1.0;
        if (signal.signal_age_scaling) {
            const double span = static_cast<double>(config.ages.max_age - config.ages.min_age);
            age_weight = span > 0 ? static_cast<double>(age - config.ages.min_age) / span : 1.0;
        }

        std::vector<CodedEvent> mine;
        for (const auto& seg : kSegments) {
            const std::int32_t d_lo =
                std::max<std::int32_t>(1, static_cast<std::int32_t>(std::ceil(seg.month_lo * kDaysPerMonth)));
            const std::int32_t d_hi = static_cast<std::int32_t>(std::ceil(seg.month_hi * kDaysPerMonth));
            const double seg_scale = static_cast<double>(seg.month_hi - seg.month_lo) / 6.0;
            const std::size_t rate_pos = seg.slice_pos < 0 ? 0 : std::min<std::size_t>(3, static_cast<std::size_t>(seg.slice_pos));
            for (const auto& code : codes) {
                double rate = 0.0;
                std::size_t copies = 1;
                switch (code.kind) {
                case GenCode::Background: rate = signal.background_rate; break;
                case GenCode::Rare: rate = signal.rare_rate; break;
                case GenCode::Risk:
                    rate = c ? signal.case_rate(rate_pos, age_weight) : signal.risk_rate;
                    if (c) copies = signal.case_cluster_size;
                    break;
                }
                const std::uint64_t k = rng.poisson(rate * seg_scale);
                for (std::uint64_t e = 0; e < k; ++e) {
                    const std::int32_t before = d_lo + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(d_hi - d_lo)));
                    const std::string text = code.type == CodeType::Dx ? dx_variant(code.root, rng) : code.root;
                    for (std::size_t cp = 0; cp < copies; ++cp) {
                        mine.push_back({p.patient_id, Date{p.index_date.days - before}, text, code.type});
                    }
                }
            }
        }
        if (c) {
            // Onset: a CHF code on the index day plus follow-ups inside the qualifying window.
            std::set<std::int32_t> days{0};
            const std::size_t extra = static_cast<std::size_t>(config.case_min_codes - 1) + rng.below(2);
            while (days.size() < extra + 1) {
                days.insert(1 + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(config.case_window_days - 1))));
            }
            for (auto d : days) {
                mine.push_back({p.patient_id, Date{p.index_date.days + d}, dx_variant(config.chf_roots.front(), rng), CodeType::Dx});
            }
        } else {
            // The last recorded encounter defines a control's index date.
            const auto& code = codes[rng.below(std::max<std::size_t>(1, signal.n_background_codes))];
            mine.push_back({p.patient_id, p.index_date, code.type == CodeType::Dx ? dx_variant(code.root, rng) : code.root, code.type});
        }
        std::sort(mine.begin(), mine.end(), [](const CodedEvent& a, const CodedEvent& b) {
            return std::tie(a.date, a.code) < std::tie(b.date, b.code);
        });
        out.events.insert(out.events.end(), std::make_move_iterator(mine.begin()), std::make_move_iterator(mine.end()));
        out.patients.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------- selection

namespace {

using EventIndex = std::unordered_map<std::string, std::vector<const CodedEvent*>>;

EventIndex index_events(std::span<const CodedEvent> events) {
    EventIndex idx;
    for (const auto& e : events) idx[e.patient_id].push_back(&e);
    for (auto& [id, list] : idx) {
        std::stable_sort(list.begin(), list.end(), [](const CodedEvent* a, const CodedEvent* b) {
            return std::tie(a->date, a->code) < std::tie(b->date, b->code);
        });
    }
    return idx;
}

bool root_in(const CodedEvent& e, const std::vector<std::string>& roots) {
    if (e.code_type != CodeType::Dx) return false;
    const std::string g = group_code(e.code, e.code_type);
    return std::find(roots.begin(), roots.end(), g) != roots.end();
}

} // namespace

std::vector<IndexAssignment> select_cases(std::span<const CodedEvent> events, std::span<const PatientRecord> patients,
                                          const CohortConfig& config) {
    const EventIndex idx = index_events(events);
    std::vector<IndexAssignment> out;
    for (const auto& p : patients) {
        auto it = idx.find(p.patient_id);
        if (it == idx.end()) continue;
        std::vector<std::int32_t> days;
        for (const CodedEvent* e : it->second) {
            if (root_in(*e, config.chf_roots) && (days.empty() || days.back() != e->date.days)) {
                days.push_back(e->date.days);
            }
        }
        const std::size_t need = static_cast<std::size_t>(config.case_min_codes);
        if (days.size() < need) continue;
        // Any earlier CHF code would precede every qualifying window, so the
        // window must open on the first CHF day.
        if (days[need - 1] - days[0] >= config.case_window_days) continue;
        const Date index{days[0]};
        if (!config.ages.contains(year_of(index) - p.birth_year)) continue;
        out.push_back({p.patient_id, index});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
    return out;
}

std::vector<IndexAssignment> select_controls(std::span<const CodedEvent> events,
                                             std::span<const PatientRecord> patients, const CohortConfig& config) {
    const EventIndex idx = index_events(events);
    std::vector<IndexAssignment> out;
    for (const auto& p : patients) {
        auto it = idx.find(p.patient_id);
        if (it == idx.end() || it->second.empty()) continue;
        const auto& list = it->second;
        if (std::any_of(list.begin(), list.end(), [&](const CodedEvent* e) { return root_in(*e, config.exclusion_roots); })) {
            continue;
        }
        const Date index = list.back()->date;
        if (!config.ages.contains(year_of(index) - p.birth_year)) continue;
        std::vector<std::int32_t> days;
        for (const CodedEvent* e : list) {
            if (days.empty() || days.back() != e->date.days) days.push_back(e->date.days);
        }
        bool dense = true;
        for (int k = 0; (k + 1) * config.control_interval_days <= config.control_horizon_days; ++k) {
            const int lo = k * config.control_interval_days;
            const int hi = lo + config.control_interval_days;
            int n = 0;
            for (auto d : days) {
                const int before = index.days - d;
                if (before >= lo && before < hi) ++n;
            }
            if (n < config.control_min_encounters) {
                dense = false;
                break;
            }
        }
        if (dense) out.push_back({p.patient_id, index});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
    return out;
}

std::vector<PatientRecord> build_cohort(std::span<const CodedEvent> events, std::span<const PatientRecord> patients,
                                        const CohortConfig& config) {
    std::unordered_map<std::string, const PatientRecord*> by_id;
    for (const auto& p : patients) by_id[p.patient_id] = &p;
    std::vector<PatientRecord> out;
    for (const auto& a : select_cases(events, patients, config)) {
        PatientRecord r = *by_id.at(a.patient_id);
        r.label = Label::Case;
        r.index_date = a.index_date;
        out.push_back(std::move(r));
    }
    for (const auto& a : select_controls(events, patients, config)) {
        PatientRecord r = *by_id.at(a.patient_id);
        r.label = Label::Control;
        r.index_date = a.index_date;
        out.push_back(std::move(r));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
    return out;
}

// ---------------------------------------------------------------- split

std::vector<std::string> SplitAssignment::members(Split s) const {
    std::vector<std::string> out;
    for (const auto& [id, v] : by_patient) {
        if (v == s) out.push_back(id);
    }
    return out;
}

std::size_t SplitAssignment::count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(by_patient.begin(), by_patient.end(), [&](const auto& kv) { return kv.second == s; }));
}

SplitAssignment split_cohort(std::span<const std::string> patient_ids, const SplitFractions& fractions,
                             std::uint64_t seed) {
    fractions.validate();
    std::vector<std::string> ids(patient_ids.begin(), patient_ids.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    RngStream rng(seed, 0x5317);
    rng.shuffle(ids);
    const double n = static_cast<double>(ids.size());
    const std::size_t n_train = static_cast<std::size_t>(std::llround(fractions.train * n));
    const std::size_t n_val = std::min(ids.size() - n_train, static_cast<std::size_t>(std::llround(fractions.validation * n)));
    SplitAssignment out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        Split s = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Validation : Split::Test);
        out.by_patient.emplace(ids[i], s);
    }
    return out;
}

} // namespace seqrisk
