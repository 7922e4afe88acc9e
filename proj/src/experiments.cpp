#include "seqrisk/experiments.hpp"

#include "seqrisk/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_map>

namespace seqrisk {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- preparation

PreparedCohort prepare_cohort(std::span<const PatientRecord> patients, std::span<const CodedEvent> events,
                              const CohortConfig& config, const PrepareOptions& options) {
    config.validate();
    PreparedCohort out;
    out.config = config;
    out.candidates = patients.size();
    std::vector<PatientRecord> selected = build_cohort(events, patients, config);

    std::unordered_map<std::string, std::vector<CodedEvent>> by_patient;
    for (const auto& p : selected) by_patient[p.patient_id];
    for (const auto& e : events) {
        auto it = by_patient.find(e.patient_id);
        if (it != by_patient.end()) it->second.push_back(e);
    }

    std::vector<std::string> ids;
    for (const auto& p : selected) ids.push_back(p.patient_id);
    if (ids.empty()) throw DataIntegrityError("cohort selection kept no patients");
    out.split = split_cohort(ids, config.split, config.seed);

    for (auto& p : selected) {
        auto& mine = by_patient[p.patient_id];
        const auto after = std::stable_partition(mine.begin(), mine.end(),
                                                 [&](const CodedEvent& e) { return e.date <= p.index_date; });
        out.post_index_events += static_cast<std::size_t>(mine.end() - after);
        mine.erase(after, mine.end());
        SlicedCounts sc = slice_events(mine, p.index_date);
        if (options.density_min > 0) {
            bool dense = true;
            for (std::size_t s = 0; s < options.density_window.size(); ++s) {
                dense = dense && sc.encounter_days[s] >= options.density_min;
            }
            if (!dense) {
                ++out.density_excluded;
                continue;
            }
        }
        out.patients.push_back(p);
        out.sliced.push_back(std::move(sc));
    }

    std::vector<SlicedCounts> train_rows;
    for (std::size_t i = 0; i < out.patients.size(); ++i) {
        if (out.split.by_patient.at(out.patients[i].patient_id) == Split::Train) train_rows.push_back(out.sliced[i]);
    }
    if (train_rows.empty()) throw DataIntegrityError("the training split is empty");
    out.vocabulary = build_vocabulary(train_rows, options.variance_threshold);
    return out;
}

PreparedCohort restrict_cohort(const PreparedCohort& prepared, const std::function<bool(std::size_t)>& keep) {
    PreparedCohort out;
    out.config = prepared.config;
    out.split = prepared.split;
    out.vocabulary = prepared.vocabulary;
    out.candidates = prepared.candidates;
    out.post_index_events = prepared.post_index_events;
    out.density_excluded = prepared.density_excluded;
    for (std::size_t i = 0; i < prepared.patients.size(); ++i) {
        if (!keep(i)) continue;
        out.patients.push_back(prepared.patients[i]);
        out.sliced.push_back(prepared.sliced[i]);
    }
    return out;
}

std::string TensorTransform::label() const {
    std::vector<std::string> parts;
    if (drop_demographics) parts.push_back("no_demographics");
    if (drop_procedures) parts.push_back("no_procedures");
    if (!concepts.empty()) parts.push_back("concepts=" + std::to_string(concepts.size()));
    if (train_limit > 0) parts.push_back("train_limit=" + std::to_string(train_limit));
    if (binarize) parts.push_back("binarized");
    if (aggregate) parts.push_back("aggregated");
    if (parts.empty()) return "baseline";
    std::string s = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) s += "+" + parts[i];
    return s;
}

TensorSplits make_tensors(const PreparedCohort& prepared, const ObservationWindow& window,
                          const TensorTransform& transform, const TensorOptions& options) {
    std::array<std::vector<std::size_t>, 3> rows;
    for (std::size_t i = 0; i < prepared.patients.size(); ++i) {
        rows[static_cast<std::size_t>(prepared.split.by_patient.at(prepared.patients[i].patient_id))].push_back(i);
    }
    auto& train_rows = rows[static_cast<std::size_t>(Split::Train)];
    if (transform.train_limit > 0 && transform.train_limit < train_rows.size()) {
        RngStream rng(transform.subsample_seed, 0x5A11);
        rng.shuffle(train_rows);
        train_rows.resize(transform.train_limit);
        std::sort(train_rows.begin(), train_rows.end());
    }

    auto build = [&](Split which) {
        const auto& r = rows[static_cast<std::size_t>(which)];
        if (r.empty()) throw DataIntegrityError(std::string("the ") + std::string(to_string(which)) + " split is empty");
        std::vector<PatientRecord> ps;
        std::vector<SlicedCounts> sc;
        for (std::size_t i : r) {
            ps.push_back(prepared.patients[i]);
            sc.push_back(prepared.sliced[i]);
        }
        SliceTensor t = build_tensor(ps, sc, prepared.vocabulary, window, options);
        if (!transform.concepts.empty()) t = restrict_concepts(t, transform.concepts);
        if (transform.drop_procedures) t = drop_procedures(t);
        if (transform.binarize) t = binarize(t);
        if (transform.aggregate) t = aggregate_slices(t);
        if (transform.drop_demographics) t = drop_demographics(t);
        return t;
    };
    return {build(Split::Train), build(Split::Validation), build(Split::Test)};
}

// ---------------------------------------------------------------- configuration

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "experiment", "patients", "events", "n_patients", "case_fraction", "min_age", "max_age", "cohort_seed",
        "split", "background_codes", "rare_codes", "background_rate", "risk_rate", "rare_rate", "case_multiplier",
        "trend", "balanced_slices", "case_cluster_size", "demographic_shift", "signal_age_scaling", "risk_codes",
        "risk_code_count", "variance_threshold", "density_min", "density_window", "standardize_age", "windows",
        "models", "runs", "seed_base", "d_emb", "hidden", "input_dropout", "mlp_hidden", "mlp_dropout", "cnn_widths",
        "cnn_channels", "rf_grid", "rf_bootstrap", "rf_max_depth", "rf_min_samples_split", "batch_size",
        "learning_rate", "max_epochs", "patience", "ablate_binarize", "ablate_demographics", "ablate_procedures",
        "small_cohort", "rf_top_k", "ablate_density_min", "delta_top_k", "activation_rows", "age_min", "age_max",
        "age_step", "out_dir"};
    return keys;
}

std::size_t to_size(long long v, const std::string& key) {
    if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

std::vector<std::size_t> size_list(const KeyValueConfig& kv, const std::string& key, std::vector<std::size_t> fallback) {
    if (!kv.has(key)) return fallback;
    std::vector<std::size_t> out;
    for (const auto& item : kv.get_list(key, {})) {
        try {
            out.push_back(to_size(parse_integer(item, key), key));
        } catch (const SchemaError&) {
            throw ConfigError("config key '" + key + "' holds a non-integer entry '" + item + "'");
        }
    }
    return out;
}

std::vector<double> double_list(const KeyValueConfig& kv, const std::string& key, std::vector<double> fallback) {
    if (!kv.has(key)) return fallback;
    std::vector<double> out;
    for (const auto& item : kv.get_list(key, {})) {
        try {
            out.push_back(parse_number(item, key));
        } catch (const SchemaError&) {
            throw ConfigError("config key '" + key + "' holds a non-numeric entry '" + item + "'");
        }
    }
    return out;
}

std::vector<ObservationWindow> default_windows(const std::string& experiment) {
    if (experiment == "window-sweep") return {ObservationWindow(1), ObservationWindow(2), ObservationWindow(3), ObservationWindow(4)};
    if (experiment == "temporal-delta") return {ObservationWindow(1), ObservationWindow(2)};
    return {ObservationWindow(2)};
}

} // namespace

void ExperimentConfig::validate() const {
    static const std::set<std::string> experiments{"window-sweep", "aggregation", "temporal-delta", "age-grid", "ablations"};
    if (!experiments.count(experiment)) throw ConfigError("unknown experiment '" + experiment + "'");
    if (runs < 1) throw ConfigError("runs must be >= 1");
    if (windows.empty()) throw ConfigError("at least one observation window is required");
    if (models.empty()) throw ConfigError("at least one model kind is required");
    if (patients_file.empty() != events_file.empty()) throw ConfigError("patients and events files must be given together");
    if (experiment == "temporal-delta") {
        if (windows.size() != 2 || windows[0].size() >= windows[1].size()) {
            throw ConfigError("temporal-delta needs exactly two windows, shorter first");
        }
        if (delta_top_k == 0) throw ConfigError("delta_top_k must be positive");
    }
    if (experiment == "age-grid" && (age_step <= 0 || age_min >= age_max)) throw ConfigError("invalid age grid");
    cohort.validate();
    signal.validate();
}

ExperimentConfig ExperimentConfig::from_config(const KeyValueConfig& kv) {
    for (const auto& [key, value] : kv.values()) {
        if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    ExperimentConfig c;
    c.experiment = kv.get("experiment", c.experiment);
    c.patients_file = kv.get("patients", "");
    c.events_file = kv.get("events", "");

    auto& co = c.cohort;
    co.n_patients = to_size(kv.get_int("n_patients", static_cast<long long>(co.n_patients)), "n_patients");
    co.case_fraction = kv.get_double("case_fraction", co.case_fraction);
    co.ages.min_age = static_cast<int>(kv.get_int("min_age", co.ages.min_age));
    co.ages.max_age = static_cast<int>(kv.get_int("max_age", co.ages.max_age));
    co.seed = static_cast<std::uint64_t>(kv.get_int("cohort_seed", static_cast<long long>(co.seed)));
    if (kv.has("split")) {
        auto f = double_list(kv, "split", {});
        if (f.size() != 3) throw ConfigError("split needs three fractions: train, validation, test");
        co.split = {f[0], f[1], f[2]};
    }

    auto& sg = c.signal;
    sg.n_background_codes = to_size(kv.get_int("background_codes", static_cast<long long>(sg.n_background_codes)), "background_codes");
    sg.n_rare_codes = to_size(kv.get_int("rare_codes", static_cast<long long>(sg.n_rare_codes)), "rare_codes");
    sg.background_rate = kv.get_double("background_rate", sg.background_rate);
    sg.risk_rate = kv.get_double("risk_rate", sg.risk_rate);
    sg.rare_rate = kv.get_double("rare_rate", sg.rare_rate);
    sg.case_multiplier = kv.get_double("case_multiplier", sg.case_multiplier);
    sg.trend = kv.get_double("trend", sg.trend);
    sg.balanced_slices = to_size(kv.get_int("balanced_slices", 0), "balanced_slices");
    sg.case_cluster_size = to_size(kv.get_int("case_cluster_size", 1), "case_cluster_size");
    sg.demographic_shift = kv.get_bool("demographic_shift", sg.demographic_shift);
    sg.signal_age_scaling = kv.get_bool("signal_age_scaling", sg.signal_age_scaling);
    if (kv.has("risk_codes")) sg.risk_codes = kv.get_list("risk_codes", {});
    if (kv.has("risk_code_count")) {
        const std::size_t k = to_size(kv.get_int("risk_code_count", 0), "risk_code_count");
        if (k > sg.risk_codes.size()) throw ConfigError("risk_code_count exceeds the available risk codes");
        sg.risk_codes.resize(k);
    }

    c.prepare.variance_threshold = kv.get_double("variance_threshold", c.prepare.variance_threshold);
    c.prepare.density_min = to_size(kv.get_int("density_min", 0), "density_min");
    if (kv.has("density_window")) c.prepare.density_window = ObservationWindow::parse(kv.get("density_window", ""));
    c.prepare.tensor.standardize_age = kv.get_bool("standardize_age", false);

    if (kv.has("windows")) {
        c.windows.clear();
        std::string text = kv.get("windows", "");
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const std::size_t semi = text.find(';', pos);
            std::string item = text.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos);
            item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
            if (!item.empty()) c.windows.push_back(ObservationWindow::parse(item));
            if (semi == std::string::npos) break;
            pos = semi + 1;
        }
    } else {
        c.windows = default_windows(c.experiment);
    }
    if (kv.has("models")) {
        c.models.clear();
        for (const auto& m : kv.get_list("models", {})) {
            try {
                c.models.push_back(parse_model_kind(m));
            } catch (const Error& e) {
                throw ConfigError(e.what());
            }
        }
    } else if (c.experiment == "temporal-delta" || c.experiment == "age-grid") {
        c.models = {ModelKind::Lstm};
    }
    c.runs = to_size(kv.get_int("runs", static_cast<long long>(c.runs)), "runs");
    c.seed_base = static_cast<std::uint64_t>(kv.get_int("seed_base", static_cast<long long>(c.seed_base)));

    auto& h = c.hyper;
    h.d_emb = to_size(kv.get_int("d_emb", static_cast<long long>(h.d_emb)), "d_emb");
    h.hidden = to_size(kv.get_int("hidden", static_cast<long long>(h.hidden)), "hidden");
    h.input_dropout = kv.get_double("input_dropout", h.input_dropout);
    h.mlp_hidden = size_list(kv, "mlp_hidden", h.mlp_hidden);
    h.mlp_dropout = double_list(kv, "mlp_dropout", h.mlp_dropout);
    h.cnn_widths = size_list(kv, "cnn_widths", h.cnn_widths);
    h.cnn_channels = to_size(kv.get_int("cnn_channels", static_cast<long long>(h.cnn_channels)), "cnn_channels");
    h.rf_grid = size_list(kv, "rf_grid", h.rf_grid);
    h.rf_bootstrap = kv.get_bool("rf_bootstrap", h.rf_bootstrap);
    h.rf_max_depth = to_size(kv.get_int("rf_max_depth", static_cast<long long>(h.rf_max_depth)), "rf_max_depth");
    h.rf_min_samples_split =
        to_size(kv.get_int("rf_min_samples_split", static_cast<long long>(h.rf_min_samples_split)), "rf_min_samples_split");

    auto& t = c.train;
    t.batch_size = to_size(kv.get_int("batch_size", static_cast<long long>(t.batch_size)), "batch_size");
    t.learning_rate = kv.get_double("learning_rate", t.learning_rate);
    t.max_epochs = to_size(kv.get_int("max_epochs", static_cast<long long>(t.max_epochs)), "max_epochs");
    t.patience = to_size(kv.get_int("patience", static_cast<long long>(t.patience)), "patience");

    c.ablate_binarize = kv.get_bool("ablate_binarize", c.ablate_binarize);
    c.ablate_demographics = kv.get_bool("ablate_demographics", c.ablate_demographics);
    c.ablate_procedures = kv.get_bool("ablate_procedures", c.ablate_procedures);
    c.small_cohort = to_size(kv.get_int("small_cohort", 0), "small_cohort");
    c.rf_top_k = to_size(kv.get_int("rf_top_k", static_cast<long long>(c.rf_top_k)), "rf_top_k");
    c.density_min = to_size(kv.get_int("ablate_density_min", 0), "ablate_density_min");
    c.delta_top_k = to_size(kv.get_int("delta_top_k", static_cast<long long>(c.delta_top_k)), "delta_top_k");
    c.activation_rows = to_size(kv.get_int("activation_rows", static_cast<long long>(c.activation_rows)), "activation_rows");
    c.age_min = static_cast<int>(kv.get_int("age_min", c.age_min));
    c.age_max = static_cast<int>(kv.get_int("age_max", c.age_max));
    c.age_step = static_cast<int>(kv.get_int("age_step", c.age_step));
    c.out_dir = kv.get("out_dir", c.out_dir.string());
    c.validate();
    return c;
}

std::size_t worker_threads() {
    const char* env = std::getenv("SEQRISK_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("SEQRISK_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
}

// ---------------------------------------------------------------- job execution

namespace {

struct Job {
    std::string condition;
    ModelKind model;
    const TensorSplits* data;
    std::uint64_t seed;
};

struct JobOutput {
    RunRecord record;
    TrainResult trained;
    Matrix test_proba;
};

JobOutput execute(const Job& job, const ExperimentConfig& cfg) {
    TrainConfig tc = cfg.train;
    tc.seed = job.seed;
    JobOutput out;
    out.trained = train_classifier(job.model, job.data->train, job.data->validation, cfg.hyper, tc);
    out.test_proba = out.trained.model->predict_proba(job.data->test);
    auto& r = out.record;
    r.condition = job.condition;
    r.model = job.model;
    r.window = job.data->train.window.label();
    r.aggregated = job.data->train.aggregated;
    r.seed = job.seed;
    r.test = evaluate_probabilities(out.test_proba, job.data->test.labels);
    r.best_epoch = out.trained.best_epoch;
    r.best_val_micro_auroc = out.trained.best_val_micro_auroc;
    return out;
}

// Results land at their job index, so report order never depends on scheduling.
std::vector<JobOutput> run_jobs(const std::vector<Job>& jobs, const ExperimentConfig& cfg, bool keep_models = false) {
    std::vector<JobOutput> out(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    const std::size_t threads = std::min(worker_threads(), std::max<std::size_t>(1, jobs.size()));
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                out[i] = execute(jobs[i], cfg);
                if (!keep_models) out[i].trained.model.reset();
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::vector<RunRecord> records_of(const std::vector<JobOutput>& outs) {
    std::vector<RunRecord> r;
    for (const auto& o : outs) r.push_back(o.record);
    return r;
}

void add_jobs(std::vector<Job>& jobs, const ExperimentConfig& cfg, const std::string& condition, const TensorSplits& data,
              const std::vector<ModelKind>& models) {
    for (ModelKind m : models) {
        for (std::size_t r = 0; r < cfg.runs; ++r) jobs.push_back({condition, m, &data, cfg.seed_base + r});
    }
}

ExperimentReport finish(std::string experiment, std::vector<RunRecord> runs) {
    ExperimentReport rep;
    rep.experiment = std::move(experiment);
    rep.runs = std::move(runs);
    rep.summary = summarize(rep.runs);
    return rep;
}

bool both_classes(const SliceTensor& t) {
    bool pos = false, neg = false;
    for (int y : t.labels) (y == 1 ? pos : neg) = true;
    return pos && neg;
}

} // namespace

std::vector<ConditionSummary> summarize(const std::vector<RunRecord>& runs) {
    std::vector<ConditionSummary> out;
    std::vector<std::vector<const RunRecord*>> groups;
    for (const auto& r : runs) {
        auto it = std::find_if(out.begin(), out.end(), [&](const ConditionSummary& s) {
            return s.condition == r.condition && s.model == r.model && s.window == r.window && s.aggregated == r.aggregated;
        });
        if (it == out.end()) {
            ConditionSummary s;
            s.condition = r.condition;
            s.model = r.model;
            s.window = r.window;
            s.aggregated = r.aggregated;
            out.push_back(s);
            groups.emplace_back();
            it = out.end() - 1;
        }
        groups[static_cast<std::size_t>(it - out.begin())].push_back(&r);
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
        auto collect = [&](double EvalMetrics::*field) {
            std::vector<double> v;
            for (const auto* r : groups[g]) v.push_back(r->test.*field);
            return summarize_runs(v);
        };
        auto& s = out[g];
        s.runs = groups[g].size();
        s.micro_auroc = collect(&EvalMetrics::micro_auroc);
        s.micro_aucpr = collect(&EvalMetrics::micro_aucpr);
        s.auroc = collect(&EvalMetrics::auroc);
        s.aucpr = collect(&EvalMetrics::aucpr);
        s.average_precision = collect(&EvalMetrics::average_precision);
        s.recall = collect(&EvalMetrics::recall);
    }
    return out;
}

const ConditionSummary& ExperimentReport::find(const std::string& condition, ModelKind model, const std::string& window,
                                               bool aggregated) const {
    for (const auto& s : summary) {
        if (s.condition == condition && s.model == model && s.window == window && s.aggregated == aggregated) return s;
    }
    throw InvalidArgument("no report row for " + condition + "/" + std::string(to_string(model)) + "/" + window);
}

// ---------------------------------------------------------------- experiments

ExperimentReport run_window_sweep(const ExperimentConfig& cfg, const PreparedCohort& prepared) {
    std::vector<TensorSplits> data;
    data.reserve(cfg.windows.size());
    for (const auto& w : cfg.windows) data.push_back(make_tensors(prepared, w, {}, cfg.prepare.tensor));
    std::vector<Job> jobs;
    for (const auto& d : data) add_jobs(jobs, cfg, "baseline", d, cfg.models);
    return finish("window-sweep", records_of(run_jobs(jobs, cfg)));
}

ExperimentReport run_aggregation_comparison(const ExperimentConfig& cfg, const PreparedCohort& prepared) {
    std::vector<TensorSplits> data;
    for (const auto& w : cfg.windows) {
        if (w.size() < 2) continue;
        TensorTransform agg;
        agg.aggregate = true;
        data.push_back(make_tensors(prepared, w, {}, cfg.prepare.tensor));
        data.push_back(make_tensors(prepared, w, agg, cfg.prepare.tensor));
    }
    if (data.empty()) throw ConfigError("aggregation comparison needs a window of at least two slices");
    std::vector<Job> jobs;
    for (const auto& d : data) add_jobs(jobs, cfg, "baseline", d, cfg.models);
    ExperimentReport rep = finish("aggregation", records_of(run_jobs(jobs, cfg)));
    json pairs = json::array();
    for (const auto& w : cfg.windows) {
        if (w.size() < 2) continue;
        for (ModelKind m : cfg.models) {
            const auto& s = rep.find("baseline", m, w.label(), false);
            const auto& a = rep.find("baseline", m, w.label(), true);
            pairs.push_back({{"model", to_string(m)},
                             {"window", w.label()},
                             {"sliced_micro_auroc", s.micro_auroc.mean},
                             {"aggregated_micro_auroc", a.micro_auroc.mean},
                             {"difference", s.micro_auroc.mean - a.micro_auroc.mean}});
        }
    }
    rep.details["pairs"] = pairs;
    return rep;
}

Table export_dense_activations(const LstmClassifier& model, const SliceTensor& t, const ActivationContext* other) {
    if (other && other->probability.size() != t.n) {
        throw DimensionError("activation context holds " + std::to_string(other->probability.size()) +
                             " probabilities for " + std::to_string(t.n) + " rows");
    }
    std::vector<std::size_t> rows(t.n);
    std::iota(rows.begin(), rows.end(), 0);
    const Matrix act = model.dense_activations(t, rows);
    const Matrix proba = model.predict_proba(t);
    auto confusion = [](int label, bool predicted) {
        if (predicted) return label == 1 ? "TP" : "FP";
        return label == 1 ? "FN" : "TN";
    };

    Table out;
    out.schema = "seqrisk.activations";
    out.columns = {"patient_id", "label", "window", "probability", "predicted", "confusion"};
    if (other) {
        for (const char* c : {"other_window", "other_probability", "other_predicted", "other_confusion", "flipped", "transition"}) {
            out.columns.push_back(c);
        }
    }
    for (std::size_t k = 0; k < act.cols(); ++k) out.columns.push_back("h" + std::to_string(k));
    const std::string window = t.window.label();
    for (std::size_t i = 0; i < t.n; ++i) {
        const bool pred = proba(i, 1) >= 0.5;
        std::vector<std::string> row{t.patient_ids[i], std::to_string(t.labels[i]), window, format_number(proba(i, 1)),
                                     pred ? "1" : "0", confusion(t.labels[i], pred)};
        if (other) {
            const bool opred = other->probability[i] >= 0.5;
            row.push_back(other->window);
            row.push_back(format_number(other->probability[i]));
            row.push_back(opred ? "1" : "0");
            row.push_back(confusion(t.labels[i], opred));
            row.push_back(opred != pred ? "1" : "0");
            row.push_back(std::string(confusion(t.labels[i], opred)) + "->" + confusion(t.labels[i], pred));
        }
        for (std::size_t k = 0; k < act.cols(); ++k) row.push_back(format_number(act(i, k)));
        out.rows.push_back(std::move(row));
    }
    return out;
}

DeltaFeatureReport run_temporal_delta_study(const ExperimentConfig& cfg, const PreparedCohort& prepared) {
    if (cfg.windows.size() != 2 || cfg.windows[0].size() >= cfg.windows[1].size()) {
        throw ConfigError("temporal-delta needs exactly two windows, shorter first");
    }
    const ObservationWindow& short_w = cfg.windows[0];
    const ObservationWindow& long_w = cfg.windows[1];
    DeltaFeatureReport rep;
    rep.short_window = short_w.label();
    rep.long_window = long_w.label();

    const TensorSplits short_data = make_tensors(prepared, short_w, {}, cfg.prepare.tensor);
    const TensorSplits long_data = make_tensors(prepared, long_w, {}, cfg.prepare.tensor);

    std::vector<Job> jobs;
    add_jobs(jobs, cfg, "full", short_data, {ModelKind::Lstm});
    add_jobs(jobs, cfg, "full", long_data, {ModelKind::Lstm});
    auto outs = run_jobs(jobs, cfg, true);
    const JobOutput& short_run = outs.front();
    const JobOutput& long_run = outs[cfg.runs];

    // Cases predicted negative with the short window but positive with the long one.
    const SliceTensor& test = long_data.test;
    const std::size_t n_short = short_w.size();
    std::vector<std::size_t> flipped;
    for (std::size_t i = 0; i < test.n; ++i) {
        if (test.labels[i] == 1 && short_run.test_proba(i, 1) < 0.5 && long_run.test_proba(i, 1) >= 0.5) {
            flipped.push_back(i);
            rep.flipped_patients.push_back(test.patient_ids[i]);
        }
    }

    const std::size_t n_export = std::min(cfg.activation_rows, test.n);
    if (n_export > 0) {
        std::vector<std::size_t> first(n_export);
        std::iota(first.begin(), first.end(), 0);
        const SliceTensor s_sub = short_data.test.subset(first), l_sub = test.subset(first);
        ActivationContext for_short{long_w.label(), {}}, for_long{short_w.label(), {}};
        for (std::size_t i : first) {
            for_short.probability.push_back(long_run.test_proba(i, 1));
            for_long.probability.push_back(short_run.test_proba(i, 1));
        }
        rep.short_activations =
            export_dense_activations(dynamic_cast<const LstmClassifier&>(*short_run.trained.model), s_sub, &for_short);
        rep.long_activations =
            export_dense_activations(dynamic_cast<const LstmClassifier&>(*long_run.trained.model), l_sub, &for_long);
    }

    std::vector<RunRecord> records = records_of(outs);
    std::vector<double> full;
    for (std::size_t r = 0; r < cfg.runs; ++r) full.push_back(outs[cfg.runs + r].record.test.micro_auroc);
    rep.full_auroc = summarize_runs(full);

    if (flipped.empty()) {
        rep.status = "empty_flipped_set";
        rep.runs = finish("temporal-delta", std::move(records));
        rep.runs.status = rep.status;
        return rep;
    }

    const double added_slices = static_cast<double>(long_w.size() - n_short);
    const double nf = static_cast<double>(flipped.size());
    for (std::size_t c = 0; c < test.v; ++c) {
        double shared = 0.0, added = 0.0;
        for (std::size_t i : flipped) {
            for (std::size_t s = 0; s < long_w.size(); ++s) (s < n_short ? shared : added) += test.count(i, s, c);
        }
        DeltaFeature f;
        f.code = test.vocabulary.codes[c];
        f.shared_mean = shared / (nf * static_cast<double>(n_short));
        f.added_mean = added / (nf * added_slices);
        f.delta = f.added_mean - f.shared_mean;
        rep.features.push_back(f);
    }
    std::stable_sort(rep.features.begin(), rep.features.end(),
                     [](const DeltaFeature& a, const DeltaFeature& b) { return std::abs(a.delta) > std::abs(b.delta); });
    const std::size_t k = std::min(cfg.delta_top_k, rep.features.size());
    std::vector<std::size_t> columns;
    for (std::size_t i = 0; i < k; ++i) {
        rep.top_codes.push_back(rep.features[i].code);
        columns.push_back(*test.vocabulary.find(rep.features[i].code));
    }
    std::sort(columns.begin(), columns.end());

    TensorTransform subset;
    subset.concepts = columns;
    const TensorSplits subset_data = make_tensors(prepared, long_w, subset, cfg.prepare.tensor);
    std::vector<Job> subset_jobs;
    add_jobs(subset_jobs, cfg, "top_delta=" + std::to_string(k), subset_data, {ModelKind::Lstm});
    auto subset_outs = run_jobs(subset_jobs, cfg);
    std::vector<double> sub;
    for (const auto& o : subset_outs) {
        sub.push_back(o.record.test.micro_auroc);
        records.push_back(o.record);
    }
    rep.subset_auroc = summarize_runs(sub);
    rep.auroc_ratio = rep.subset_auroc.mean / rep.full_auroc.mean;
    rep.runs = finish("temporal-delta", std::move(records));
    return rep;
}

AgeGridReport run_age_interval_grid(const ExperimentConfig& cfg, const PreparedCohort& prepared) {
    AgeGridReport rep;
    const ObservationWindow& window = cfg.windows.front();
    std::vector<std::pair<int, int>> cells;
    for (int lo = cfg.age_min; lo < cfg.age_max; lo += cfg.age_step) {
        for (int hi = lo + cfg.age_step; hi <= cfg.age_max; hi += cfg.age_step) cells.emplace_back(lo, hi);
    }
    std::vector<TensorSplits> data;
    data.reserve(cells.size());
    std::vector<std::size_t> data_of(cells.size(), SIZE_MAX);
    std::vector<AgeCell> base(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto [lo, hi] = cells[c];
        base[c].min_age = lo;
        base[c].max_age = hi;
        const AgeBracket bracket{lo, hi};
        PreparedCohort sub = restrict_cohort(prepared, [&](std::size_t i) { return bracket.contains(prepared.patients[i].age_at_index()); });
        try {
            TensorSplits d = make_tensors(sub, window, {}, cfg.prepare.tensor);
            base[c].n_train = d.train.n;
            base[c].n_test = d.test.n;
            if (!both_classes(d.train) || !both_classes(d.validation) || !both_classes(d.test)) {
                base[c].reason = "single_class_split";
                continue;
            }
            data_of[c] = data.size();
            data.push_back(std::move(d));
        } catch (const DataIntegrityError&) {
            base[c].reason = "empty_split";
        }
    }
    std::vector<Job> jobs;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        if (data_of[c] == SIZE_MAX) continue;
        add_jobs(jobs, cfg, "age=" + std::to_string(cells[c].first) + "-" + std::to_string(cells[c].second),
                 data[data_of[c]], cfg.models);
    }
    rep.runs = finish("age-grid", records_of(run_jobs(jobs, cfg)));
    for (ModelKind m : cfg.models) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            AgeCell cell = base[c];
            cell.model = m;
            if (data_of[c] != SIZE_MAX) {
                const auto& s = rep.runs.find("age=" + std::to_string(cell.min_age) + "-" + std::to_string(cell.max_age), m,
                                              window.label(), false);
                cell.defined = true;
                cell.micro_auroc = s.micro_auroc;
                cell.micro_aucpr = s.micro_aucpr;
            }
            rep.cells.push_back(cell);
        }
    }
    return rep;
}

ExperimentReport run_ablations(const ExperimentConfig& cfg, const PreparedCohort& prepared) {
    struct Condition {
        std::string name;
        TensorTransform transform;
        const PreparedCohort* cohort;
        ObservationWindow window;
    };
    std::vector<std::unique_ptr<PreparedCohort>> dense_cohorts;
    std::vector<Condition> conditions;
    json rf_features = json::object();
    for (const auto& w : cfg.windows) {
        conditions.push_back({"baseline", {}, &prepared, w});
        if (cfg.ablate_demographics) {
            TensorTransform t;
            t.drop_demographics = true;
            conditions.push_back({t.label(), t, &prepared, w});
        }
        if (cfg.ablate_procedures) {
            TensorTransform t;
            t.drop_procedures = true;
            conditions.push_back({t.label(), t, &prepared, w});
        }
        if (cfg.ablate_binarize) {
            TensorTransform t;
            t.binarize = true;
            conditions.push_back({t.label(), t, &prepared, w});
        }
        if (cfg.small_cohort > 0) {
            TensorTransform t;
            t.train_limit = cfg.small_cohort;
            t.subsample_seed = cfg.seed_base;
            conditions.push_back({"small_cohort=" + std::to_string(cfg.small_cohort), t, &prepared, w});
        }
        if (cfg.rf_top_k > 0) {
            // Concept importance sums the forest's impurity decrease over every slice copy of the concept.
            const TensorSplits base = make_tensors(prepared, w, {}, cfg.prepare.tensor);
            TrainConfig tc = cfg.train;
            tc.seed = cfg.seed_base;
            auto rf = train_classifier(ModelKind::RandomForest, base.train, base.validation, cfg.hyper, tc);
            const auto imp = dynamic_cast<const RandomForest&>(*rf.model).feature_importance();
            const std::size_t v = base.train.v;
            std::vector<double> per_concept(v, 0.0);
            for (std::size_t s = 0; s < base.train.t; ++s) {
                for (std::size_t c = 0; c < v; ++c) per_concept[c] += imp[s * v + c];
            }
            std::vector<std::size_t> order(v);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return per_concept[a] > per_concept[b]; });
            order.resize(std::min(cfg.rf_top_k, v));
            json ranked = json::array();
            for (std::size_t c : order) ranked.push_back({{"code", base.train.vocabulary.codes[c]}, {"importance", per_concept[c]}});
            rf_features[w.label()] = ranked;
            std::sort(order.begin(), order.end());
            TensorTransform t;
            t.concepts = order;
            conditions.push_back({"rf_top=" + std::to_string(order.size()), t, &prepared, w});
        }
        if (cfg.density_min > 0) {
            auto dense = std::make_unique<PreparedCohort>(restrict_cohort(prepared, [&](std::size_t i) {
                for (std::size_t s = 0; s < w.size(); ++s) {
                    if (prepared.sliced[i].encounter_days[s] < cfg.density_min) return false;
                }
                return true;
            }));
            conditions.push_back({"density_min=" + std::to_string(cfg.density_min), {}, dense.get(), w});
            dense_cohorts.push_back(std::move(dense));
        }
    }
    std::vector<TensorSplits> data;
    data.reserve(conditions.size());
    for (const auto& c : conditions) data.push_back(make_tensors(*c.cohort, c.window, c.transform, cfg.prepare.tensor));
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < conditions.size(); ++i) add_jobs(jobs, cfg, conditions[i].name, data[i], cfg.models);
    ExperimentReport rep = finish("ablations", records_of(run_jobs(jobs, cfg)));
    if (!rf_features.empty()) rep.details["rf_top_features"] = rf_features;
    json sizes = json::object();
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        sizes[conditions[i].name + "@" + conditions[i].window.label()] = {
            {"train", data[i].train.n}, {"validation", data[i].validation.n}, {"test", data[i].test.n}, {"concepts", data[i].train.v}};
    }
    rep.details["conditions"] = sizes;
    return rep;
}

// ---------------------------------------------------------------- reports

namespace {

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

json summary_json(const RunSummary& s) {
    json j{{"mean", s.mean}, {"k", s.k}};
    j["std"] = s.std ? json(*s.std) : json(nullptr);
    return j;
}

} // namespace

Table summary_table(const ExperimentReport& report) {
    Table t;
    t.schema = "seqrisk.report";
    t.columns = {"experiment", "condition", "model", "window", "input", "runs"};
    for (const char* m : {"micro_auroc", "micro_aucpr", "auroc", "aucpr", "average_precision", "recall"}) {
        t.columns.push_back(std::string(m) + "_mean");
        t.columns.push_back(std::string(m) + "_std");
    }
    for (const auto& s : report.summary) {
        std::vector<std::string> row{report.experiment, s.condition, std::string(to_string(s.model)), s.window,
                                     s.aggregated ? "aggregated" : "sliced", std::to_string(s.runs)};
        for (const RunSummary* m : {&s.micro_auroc, &s.micro_aucpr, &s.auroc, &s.aucpr, &s.average_precision, &s.recall}) {
            row.push_back(format_number(m->mean));
            row.push_back(opt_number(m->std));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

Table runs_table(const ExperimentReport& report) {
    Table t;
    t.schema = "seqrisk.runs";
    t.columns = {"experiment", "condition", "model", "window", "input", "seed", "best_epoch", "val_micro_auroc",
                 "micro_auroc", "micro_aucpr", "auroc", "aucpr", "average_precision", "recall"};
    for (const auto& r : report.runs) {
        t.rows.push_back({report.experiment, r.condition, std::string(to_string(r.model)), r.window,
                          r.aggregated ? "aggregated" : "sliced", std::to_string(r.seed), std::to_string(r.best_epoch),
                          format_number(r.best_val_micro_auroc), format_number(r.test.micro_auroc),
                          format_number(r.test.micro_aucpr), format_number(r.test.auroc), format_number(r.test.aucpr),
                          format_number(r.test.average_precision), format_number(r.test.recall)});
    }
    return t;
}

void write_report(const fs::path& dir, const ExperimentReport& report, std::vector<fs::path>& written) {
    std::string stem = report.experiment;
    std::replace(stem.begin(), stem.end(), '-', '_');
    const fs::path summary = dir / (stem + "_summary.tsv");
    const fs::path runs = dir / (stem + "_runs.tsv");
    const fs::path doc = dir / (stem + "_report.json");
    write_table(summary, summary_table(report));
    write_table(runs, runs_table(report));
    json rows = json::array();
    for (const auto& s : report.summary) {
        rows.push_back({{"condition", s.condition},
                        {"model", to_string(s.model)},
                        {"window", s.window},
                        {"input", s.aggregated ? "aggregated" : "sliced"},
                        {"runs", s.runs},
                        {"micro_auroc", summary_json(s.micro_auroc)},
                        {"micro_aucpr", summary_json(s.micro_aucpr)},
                        {"auroc", summary_json(s.auroc)},
                        {"aucpr", summary_json(s.aucpr)},
                        {"average_precision", summary_json(s.average_precision)},
                        {"recall", summary_json(s.recall)}});
    }
    write_json(doc, "seqrisk.report",
               json{{"experiment", report.experiment}, {"status", report.status}, {"summary", rows}, {"details", report.details}});
    written.insert(written.end(), {summary, runs, doc});
}

std::vector<fs::path> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<PatientRecord> patients;
    std::vector<CodedEvent> events;
    if (cfg.patients_file.empty()) {
        auto cohort = generate_synthetic_cohort(cfg.cohort, cfg.signal);
        patients = std::move(cohort.patients);
        events = std::move(cohort.events);
    } else {
        patients = read_patients(cfg.patients_file);
        events = read_events(cfg.events_file);
    }
    const PreparedCohort prepared = prepare_cohort(patients, events, cfg.cohort, cfg.prepare);
    fs::create_directories(cfg.out_dir);
    std::vector<fs::path> written;

    if (cfg.experiment == "window-sweep") {
        write_report(cfg.out_dir, run_window_sweep(cfg, prepared), written);
    } else if (cfg.experiment == "aggregation") {
        ExperimentReport rep = run_aggregation_comparison(cfg, prepared);
        write_report(cfg.out_dir, rep, written);
        Table pairs{"seqrisk.aggregation_pairs", {"model", "window", "sliced_micro_auroc", "aggregated_micro_auroc", "difference"}, {}};
        for (const auto& p : rep.details["pairs"]) {
            pairs.rows.push_back({p["model"].get<std::string>(), p["window"].get<std::string>(),
                                  format_number(p["sliced_micro_auroc"].get<double>()),
                                  format_number(p["aggregated_micro_auroc"].get<double>()),
                                  format_number(p["difference"].get<double>())});
        }
        write_table(cfg.out_dir / "aggregation_pairs.tsv", pairs);
        written.push_back(cfg.out_dir / "aggregation_pairs.tsv");
    } else if (cfg.experiment == "temporal-delta") {
        DeltaFeatureReport rep = run_temporal_delta_study(cfg, prepared);
        write_report(cfg.out_dir, rep.runs, written);
        Table feats{"seqrisk.delta_features", {"rank", "code", "added_mean", "shared_mean", "delta", "selected"}, {}};
        for (std::size_t i = 0; i < rep.features.size(); ++i) {
            const auto& f = rep.features[i];
            feats.rows.push_back({std::to_string(i + 1), f.code, format_number(f.added_mean), format_number(f.shared_mean),
                                  format_number(f.delta), i < rep.top_codes.size() ? "1" : "0"});
        }
        write_table(cfg.out_dir / "temporal_delta_features.tsv", feats);
        written.push_back(cfg.out_dir / "temporal_delta_features.tsv");
        json summary{{"status", rep.status},
                     {"selection", "CHF test patients predicted negative (p < 0.5) with the short window and "
                                   "positive (p >= 0.5) with the long window"},
                     {"delta", "mean count per added slice minus mean count per shared slice over the selected patients"},
                     {"short_window", rep.short_window},
                     {"long_window", rep.long_window},
                     {"flipped_patients", rep.flipped_patients},
                     {"top_k", cfg.delta_top_k},
                     {"top_codes", rep.top_codes},
                     {"full_micro_auroc", summary_json(rep.full_auroc)}};
        if (rep.status == "ok") {
            summary["subset_micro_auroc"] = summary_json(rep.subset_auroc);
            summary["auroc_ratio"] = rep.auroc_ratio;
        }
        write_json(cfg.out_dir / "temporal_delta.json", "seqrisk.delta_report", summary);
        written.push_back(cfg.out_dir / "temporal_delta.json");
        if (!rep.short_activations.rows.empty()) {
            write_table(cfg.out_dir / "activations_short.tsv", rep.short_activations);
            write_table(cfg.out_dir / "activations_long.tsv", rep.long_activations);
            written.push_back(cfg.out_dir / "activations_short.tsv");
            written.push_back(cfg.out_dir / "activations_long.tsv");
        }
    } else if (cfg.experiment == "age-grid") {
        AgeGridReport rep = run_age_interval_grid(cfg, prepared);
        write_report(cfg.out_dir, rep.runs, written);
        Table grid{"seqrisk.age_grid",
                   {"model", "min_age", "max_age", "n_train", "n_test", "defined", "micro_auroc_mean", "micro_auroc_std",
                    "micro_aucpr_mean", "micro_aucpr_std", "note"},
                   {}};
        for (const auto& c : rep.cells) {
            grid.rows.push_back({std::string(to_string(c.model)), std::to_string(c.min_age), std::to_string(c.max_age),
                                 std::to_string(c.n_train), std::to_string(c.n_test), c.defined ? "1" : "0",
                                 c.defined ? format_number(c.micro_auroc.mean) : "NA",
                                 c.defined ? opt_number(c.micro_auroc.std) : "NA",
                                 c.defined ? format_number(c.micro_aucpr.mean) : "NA",
                                 c.defined ? opt_number(c.micro_aucpr.std) : "NA", c.defined ? "" : c.reason});
        }
        write_table(cfg.out_dir / "age_grid.tsv", grid);
        written.push_back(cfg.out_dir / "age_grid.tsv");
    } else {
        write_report(cfg.out_dir, run_ablations(cfg, prepared), written);
    }
    return written;
}

} // namespace seqrisk
