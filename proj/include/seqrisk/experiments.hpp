#pragma once

#include "seqrisk/cohort.hpp"
#include "seqrisk/features.hpp"
#include "seqrisk/io.hpp"
#include "seqrisk/metrics.hpp"
#include "seqrisk/models.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace seqrisk {

// ---------------------------------------------------------------- preparation

struct PrepareOptions {
    double variance_threshold = 1.0;
    // Keep only patients with at least this many encounter-days in every slice
    // of `density_window`; 0 disables the filter.
    std::size_t density_min = 0;
    ObservationWindow density_window{kMaxSlices};
    TensorOptions tensor;
};

struct PreparedCohort {
    CohortConfig config;
    std::vector<PatientRecord> patients;  // selected cohort, patient_id order
    std::vector<SlicedCounts> sliced;     // parallel to patients
    SplitAssignment split;                // assigned before any density filtering
    ConceptVocabulary vocabulary;         // built on training rows
    std::size_t candidates = 0;
    std::size_t post_index_events = 0;    // truncated follow-up events
    std::size_t density_excluded = 0;
};

PreparedCohort prepare_cohort(std::span<const PatientRecord> patients, std::span<const CodedEvent> events,
                              const CohortConfig& config, const PrepareOptions& options = {});

// Keeps the listed rows; split assignment and vocabulary are unchanged.
PreparedCohort restrict_cohort(const PreparedCohort& prepared, const std::function<bool(std::size_t)>& keep);

struct TensorTransform {
    bool binarize = false;
    bool aggregate = false;
    bool drop_demographics = false;
    bool drop_procedures = false;
    std::vector<std::size_t> concepts;  // empty keeps the full vocabulary
    std::size_t train_limit = 0;        // 0 keeps every training row
    std::uint64_t subsample_seed = 1;

    std::string label() const;          // "baseline", "binarized+aggregated", ...
};

struct TensorSplits {
    SliceTensor train;
    SliceTensor validation;
    SliceTensor test;
};

// Binarization is applied before aggregation.
TensorSplits make_tensors(const PreparedCohort& prepared, const ObservationWindow& window,
                          const TensorTransform& transform = {}, const TensorOptions& options = {});

// ---------------------------------------------------------------- configuration

struct ExperimentConfig {
    std::string experiment = "window-sweep";
    std::filesystem::path patients_file;  // both empty: generate a synthetic cohort
    std::filesystem::path events_file;
    CohortConfig cohort;
    SyntheticSignalSpec signal;
    PrepareOptions prepare;
    std::vector<ObservationWindow> windows{ObservationWindow(1), ObservationWindow(2), ObservationWindow(3),
                                           ObservationWindow(4)};
    std::vector<ModelKind> models = all_model_kinds();
    std::size_t runs = 5;
    std::uint64_t seed_base = 1;
    ModelHyper hyper;
    TrainConfig train;

    bool ablate_binarize = true;
    bool ablate_demographics = true;
    bool ablate_procedures = true;
    std::size_t small_cohort = 0;   // training rows kept by the small-cohort ablation; 0 skips it
    std::size_t rf_top_k = 50;      // 0 skips the random forest feature ablation
    std::size_t density_min = 0;    // 0 skips the density ablation

    std::size_t delta_top_k = 47;
    std::size_t activation_rows = 1000;

    int age_min = 20;
    int age_max = 80;
    int age_step = 10;

    std::filesystem::path out_dir = "experiment_out";

    void validate() const;
    static ExperimentConfig from_config(const KeyValueConfig& kv);
};

// Worker threads for independent training jobs: SEQRISK_THREADS, default 1.
std::size_t worker_threads();

// ---------------------------------------------------------------- results

struct RunRecord {
    std::string condition;
    ModelKind model = ModelKind::Lstm;
    std::string window;
    bool aggregated = false;
    std::uint64_t seed = 0;
    EvalMetrics test;
    std::size_t best_epoch = 0;
    double best_val_micro_auroc = 0.0;
};

struct ConditionSummary {
    std::string condition;
    ModelKind model = ModelKind::Lstm;
    std::string window;
    bool aggregated = false;
    std::size_t runs = 0;
    RunSummary micro_auroc, micro_aucpr, auroc, aucpr, average_precision, recall;
};

struct ExperimentReport {
    std::string experiment;
    std::string status = "ok";
    std::vector<RunRecord> runs;
    std::vector<ConditionSummary> summary;
    nlohmann::json details = nlohmann::json::object();

    // Summary row for (condition, model, window, aggregated); throws InvalidArgument if absent.
    const ConditionSummary& find(const std::string& condition, ModelKind model, const std::string& window,
                                 bool aggregated) const;
};

// Groups run records by (condition, model, window, aggregated) in first-seen order.
std::vector<ConditionSummary> summarize(const std::vector<RunRecord>& runs);

struct DeltaFeature {
    std::string code;
    double added_mean = 0.0;
    double shared_mean = 0.0;
    double delta = 0.0;
};

struct DeltaFeatureReport {
    std::string status = "ok";  // or "empty_flipped_set"
    std::string short_window;
    std::string long_window;
    std::vector<std::string> flipped_patients;
    std::vector<DeltaFeature> features;  // every concept, ranked by |delta| descending
    std::vector<std::string> top_codes;  // first k of `features`
    RunSummary full_auroc;
    RunSummary subset_auroc;
    double auroc_ratio = 0.0;
    ExperimentReport runs;
    Table short_activations;
    Table long_activations;
};

struct AgeCell {
    ModelKind model = ModelKind::Lstm;
    int min_age = 0;
    int max_age = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    bool defined = false;
    std::string reason;
    RunSummary micro_auroc;
    RunSummary micro_aucpr;
};

struct AgeGridReport {
    std::vector<AgeCell> cells;
    ExperimentReport runs;
};

// ---------------------------------------------------------------- experiments

ExperimentReport run_window_sweep(const ExperimentConfig& cfg, const PreparedCohort& prepared);
ExperimentReport run_aggregation_comparison(const ExperimentConfig& cfg, const PreparedCohort& prepared);
DeltaFeatureReport run_temporal_delta_study(const ExperimentConfig& cfg, const PreparedCohort& prepared);
AgeGridReport run_age_interval_grid(const ExperimentConfig& cfg, const PreparedCohort& prepared);
ExperimentReport run_ablations(const ExperimentConfig& cfg, const PreparedCohort& prepared);

struct ActivationContext {
    std::string window;
    std::vector<double> probability;  // positive-class probability, aligned with the tensor rows
};

// One row per patient: identifiers, prediction flags and the head input h0..h{T*H-1}.
// With `other`, the row also records the other window's prediction and whether it flipped.
Table export_dense_activations(const LstmClassifier& model, const SliceTensor& t,
                               const ActivationContext* other = nullptr);

// Loads or generates the cohort, runs `cfg.experiment` and writes its report files
// under cfg.out_dir. Returns the written paths.
std::vector<std::filesystem::path> run_experiment(const ExperimentConfig& cfg);

Table summary_table(const ExperimentReport& report);
Table runs_table(const ExperimentReport& report);
void write_report(const std::filesystem::path& dir, const ExperimentReport& report,
                  std::vector<std::filesystem::path>& written);

} // namespace seqrisk
