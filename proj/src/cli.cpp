#include "seqrisk/cli.hpp"

#include "seqrisk/errors.hpp"
#include "seqrisk/experiments.hpp"
#include "seqrisk/io.hpp"
#include "seqrisk/projection.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

namespace seqrisk {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

fs::path with_suffix(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

KeyValueConfig load_optional(const std::string& path) {
    return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

// Config file contents plus the command's own options, hashed together.
std::string effective_hash(KeyValueConfig kv, const std::vector<std::pair<std::string, std::string>>& options) {
    for (const auto& [k, v] : options) kv.set("option." + k, v);
    return kv.hash();
}

json tensor_details(const SliceTensor& t) {
    return json{{"patients", t.n}, {"slices", t.t}, {"concepts", t.v}, {"window", t.window.label()},
                {"aggregated", t.aggregated}, {"binarized", t.binarized}};
}

struct Options {
    std::string config;
    std::string out_dir;
    std::string events, patients, window = "24,18", out;
    bool binarize = false;
    bool aggregate = false;
    std::size_t density_min = 0;
    std::size_t emb_dim = 0;
    std::size_t hidden = 0;
    long long seed = -1;
    std::string model, train, val, test;
    std::string experiment;
    std::vector<std::string> activations;
    double perplexity = 30.0;
    std::size_t iterations = 1000;
};

int cmd_generate(const Options& o) {
    Stopwatch sw;
    const KeyValueConfig kv = KeyValueConfig::load(o.config);
    const ExperimentConfig cfg = ExperimentConfig::from_config(kv);
    const SyntheticCohort cohort = generate_synthetic_cohort(cfg.cohort, cfg.signal);
    const double t_gen = sw.lap();
    const fs::path dir = o.out_dir;
    fs::create_directories(dir);
    write_patients(dir / "patients.tsv", cohort.patients);
    write_events(dir / "events.tsv", cohort.events);
    RunManifest m;
    m.command = "generate";
    m.config_hash = effective_hash(kv, {});
    m.seed = cfg.cohort.seed;
    m.add_input(o.config);
    m.timings = {{"generate", t_gen}, {"write", sw.lap()}};
    m.add_output(dir / "patients.tsv");
    m.add_output(dir / "events.tsv");
    m.details = {{"patients", cohort.patients.size()}, {"events", cohort.events.size()}};
    m.write(dir / "manifest.json");
    return 0;
}

int cmd_prepare(const Options& o) {
    Stopwatch sw;
    const KeyValueConfig kv = load_optional(o.config);
    ExperimentConfig cfg = ExperimentConfig::from_config(kv);
    if (o.seed >= 0) cfg.cohort.seed = static_cast<std::uint64_t>(o.seed);
    const ObservationWindow window = ObservationWindow::parse(o.window);
    PrepareOptions popts = cfg.prepare;
    if (o.density_min > 0) {
        popts.density_min = o.density_min;
        popts.density_window = window;
    }
    const auto patients = read_patients(o.patients);
    const auto events = read_events(o.events);
    const double t_read = sw.lap();
    const PreparedCohort prepared = prepare_cohort(patients, events, cfg.cohort, popts);
    TensorTransform tf;
    tf.binarize = o.binarize;
    tf.aggregate = o.aggregate;
    const TensorSplits splits = make_tensors(prepared, window, tf, popts.tensor);
    const double t_prep = sw.lap();

    const fs::path prefix = o.out;
    if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
    const fs::path train_p = with_suffix(prefix, ".train.srsk"), val_p = with_suffix(prefix, ".val.srsk"),
                   test_p = with_suffix(prefix, ".test.srsk");
    write_tensor(train_p, splits.train);
    write_tensor(val_p, splits.validation);
    write_tensor(test_p, splits.test);

    EmbedConfig ec;
    ec.d_emb = o.emb_dim > 0 ? o.emb_dim : cfg.hyper.d_emb;
    ec.hidden = o.hidden > 0 ? o.hidden : cfg.hyper.hidden;
    ec.vocab = splits.train.v;
    ec.slices = splits.train.t;

    RunManifest m;
    m.command = "prepare";
    m.config_hash = effective_hash(kv, {{"window", window.label()},
                                        {"binarize", o.binarize ? "1" : "0"},
                                        {"aggregate", o.aggregate ? "1" : "0"},
                                        {"density_min", std::to_string(o.density_min)},
                                        {"emb_dim", std::to_string(ec.d_emb)},
                                        {"hidden", std::to_string(ec.hidden)},
                                        {"seed", std::to_string(cfg.cohort.seed)}});
    m.seed = cfg.cohort.seed;
    if (!o.config.empty()) m.add_input(o.config);
    m.add_input(o.patients);
    m.add_input(o.events);
    m.timings = {{"read", t_read}, {"prepare", t_prep}, {"write", sw.lap()}};
    m.add_output(train_p);
    m.add_output(val_p);
    m.add_output(test_p);
    m.details = {{"window", window.label()},
                 {"slices", ec.slices},
                 {"vocabulary_size", ec.vocab},
                 {"d_emb", ec.d_emb},
                 {"hidden", ec.hidden},
                 {"per_step_input_width", ec.input_width()},
                 {"head_input_width", ec.head_width()},
                 {"max_epochs", cfg.train.max_epochs},
                 {"binarized", o.binarize},
                 {"aggregated", o.aggregate},
                 {"density_min", popts.density_min},
                 {"candidates", prepared.candidates},
                 {"cohort", prepared.patients.size()},
                 {"density_excluded", prepared.density_excluded},
                 {"post_index_events_dropped", prepared.post_index_events},
                 {"train", tensor_details(splits.train)},
                 {"validation", tensor_details(splits.validation)},
                 {"test", tensor_details(splits.test)}};
    m.write(with_suffix(prefix, ".manifest.json"));
    return 0;
}

int cmd_train(const Options& o) {
    Stopwatch sw;
    const KeyValueConfig kv = load_optional(o.config);
    const ExperimentConfig cfg = ExperimentConfig::from_config(kv);
    const ModelKind kind = parse_model_kind(o.model);
    const SliceTensor train = read_tensor(o.train);
    const SliceTensor val = read_tensor(o.val);
    const double t_read = sw.lap();
    TrainConfig tc = cfg.train;
    if (o.seed >= 0) tc.seed = static_cast<std::uint64_t>(o.seed);
    const TrainResult res = train_classifier(kind, train, val, cfg.hyper, tc);
    const double t_train = sw.lap();

    const fs::path out = o.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    json training{{"best_epoch", res.best_epoch},
                  {"best_val_micro_auroc", res.best_val_micro_auroc},
                  {"initial_loss", res.initial_loss},
                  {"train", tc.to_json()}};
    write_checkpoint(out, *res.model, training);
    Table trace{"seqrisk.trace", {"epoch", "train_loss", "val_micro_auroc", "n_estimators"}, {}};
    for (const auto& e : res.trace) {
        trace.rows.push_back({std::to_string(e.epoch), format_number(e.train_loss), format_number(e.val_micro_auroc), "NA"});
    }
    for (const auto& [n, auc] : res.rf_sweep) trace.rows.push_back({"NA", "NA", format_number(auc), std::to_string(n)});
    const fs::path trace_p = with_suffix(out, ".trace.tsv");
    write_table(trace_p, trace);

    RunManifest m;
    m.command = "train";
    m.config_hash = effective_hash(kv, {{"model", std::string(to_string(kind))}, {"seed", std::to_string(tc.seed)}});
    m.seed = tc.seed;
    if (!o.config.empty()) m.add_input(o.config);
    m.add_input(o.train);
    m.add_input(o.val);
    m.timings = {{"read", t_read}, {"train", t_train}, {"write", sw.lap()}};
    m.add_output(out);
    m.add_output(trace_p);
    m.details = {{"model", to_string(kind)}, {"hyper", cfg.hyper.to_json()}, {"training", training}};
    if (kind == ModelKind::Lstm) {
        const auto ec = dynamic_cast<const LstmClassifier&>(*res.model).embed_config();
        m.details["per_step_input_width"] = ec.input_width();
        m.details["head_input_width"] = ec.head_width();
    }
    m.write(with_suffix(out, ".manifest.json"));
    return 0;
}

int cmd_evaluate(const Options& o) {
    Stopwatch sw;
    json meta;
    const auto model = read_checkpoint(o.model, &meta);
    const SliceTensor test = read_tensor(o.test);
    if (test.n == 0) throw SchemaError("'" + o.test + "' holds no patients");
    const double t_read = sw.lap();
    const Matrix proba = predict_proba(*model, test);
    const EvalMetrics em = evaluate_probabilities(proba, test.labels);
    const double t_eval = sw.lap();

    Table t{"seqrisk.metrics",
            {"model", "window", "input", "patients", "micro_auroc", "micro_aucpr", "auroc", "aucpr", "average_precision",
             "recall"},
            {}};
    t.rows.push_back({std::string(to_string(model->kind())), test.window.label(), test.aggregated ? "aggregated" : "sliced",
                      std::to_string(test.n), format_number(em.micro_auroc), format_number(em.micro_aucpr),
                      format_number(em.auroc), format_number(em.aucpr), format_number(em.average_precision),
                      format_number(em.recall)});
    const fs::path out = o.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_table(out, t);

    RunManifest m;
    m.command = "evaluate";
    m.config_hash = effective_hash({}, {{"model", file_digest(o.model)}});
    m.seed = model->seed();
    m.add_input(o.model);
    m.add_input(o.test);
    m.timings = {{"read", t_read}, {"evaluate", t_eval}};
    m.add_output(out);
    m.details = {{"model", to_string(model->kind())}, {"patients", test.n}};
    m.write(with_suffix(out, ".manifest.json"));
    return 0;
}

int cmd_experiment(const Options& o) {
    Stopwatch sw;
    KeyValueConfig kv = KeyValueConfig::load(o.config);
    kv.set("experiment", o.experiment);
    if (!o.out_dir.empty()) kv.set("out_dir", o.out_dir);
    const ExperimentConfig cfg = ExperimentConfig::from_config(kv);
    const auto written = run_experiment(cfg);
    RunManifest m;
    m.command = "experiment " + o.experiment;
    m.config_hash = kv.hash();
    m.seed = cfg.seed_base;
    m.add_input(o.config);
    if (!cfg.patients_file.empty()) {
        m.add_input(cfg.patients_file);
        m.add_input(cfg.events_file);
    }
    m.timings = {{"experiment", sw.lap()}};
    for (const auto& p : written) m.add_output(p);
    m.details = {{"experiment", o.experiment}, {"runs", cfg.runs}, {"threads", worker_threads()}};
    m.write(cfg.out_dir / "manifest.json");
    return 0;
}

int cmd_project(const Options& o) {
    Stopwatch sw;
    TsneConfig cfg;
    cfg.perplexity = o.perplexity;
    cfg.iterations = o.iterations;
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    std::vector<fs::path> files(o.activations.begin(), o.activations.end());
    const Table t = project_patients(files, cfg);
    const double t_proj = sw.lap();
    const fs::path out = o.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_table(out, t);
    RunManifest m;
    m.command = "project";
    m.config_hash = effective_hash({}, {{"perplexity", format_number(cfg.perplexity)},
                                        {"iterations", std::to_string(cfg.iterations)},
                                        {"seed", std::to_string(cfg.seed)}});
    m.seed = cfg.seed;
    for (const auto& f : files) m.add_input(f);
    m.timings = {{"project", t_proj}};
    m.add_output(out);
    m.details = {{"rows", t.rows.size()}, {"windows", files.size()}};
    m.write(with_suffix(out, ".manifest.json"));
    return 0;
}

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    }
    return s;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"seqrisk: CHF-onset risk prediction on sliced longitudinal codes"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    Options o;

    auto* gen = app.add_subcommand("generate", "write a synthetic patients + events cohort");
    gen->add_option("--config", o.config, "key = value config file")->required();
    gen->add_option("--out-dir", o.out_dir, "output directory")->required();

    auto* prep = app.add_subcommand("prepare", "select the cohort and build train/val/test tensors");
    prep->add_option("--events", o.events)->required();
    prep->add_option("--patients", o.patients)->required();
    prep->add_option("--window", o.window, "slices, newest last, e.g. 24,18");
    prep->add_flag("--binarize", o.binarize);
    prep->add_flag("--aggregate", o.aggregate);
    prep->add_option("--density-min", o.density_min, "minimum encounter-days per slice");
    prep->add_option("--emb-dim", o.emb_dim, "embedding width recorded in the manifest");
    prep->add_option("--hidden", o.hidden, "LSTM width recorded in the manifest");
    prep->add_option("--seed", o.seed, "split seed");
    prep->add_option("--config", o.config);
    prep->add_option("--out", o.out, "output prefix")->required();

    auto* train = app.add_subcommand("train", "fit one model");
    train->add_option("--model", o.model)->required()->check(CLI::IsMember({"lr", "mlp", "rf", "cnn", "lstm", "embmlp"}));
    train->add_option("--train", o.train)->required();
    train->add_option("--val", o.val)->required();
    train->add_option("--seed", o.seed);
    train->add_option("--config", o.config);
    train->add_option("--out", o.out)->required();

    auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a test tensor");
    eval->add_option("--model", o.model)->required();
    eval->add_option("--test", o.test)->required();
    eval->add_option("--out", o.out)->required();

    auto* exp = app.add_subcommand("experiment", "run a full study");
    exp->add_option("name", o.experiment)
        ->required()
        ->check(CLI::IsMember({"window-sweep", "aggregation", "temporal-delta", "age-grid", "ablations"}));
    exp->add_option("--config", o.config)->required();
    exp->add_option("--out-dir", o.out_dir);

    auto* proj = app.add_subcommand("project", "t-SNE of exported activations");
    proj->add_option("--activations", o.activations, "one or two activation tables")->required()->expected(1, 2);
    proj->add_option("--perplexity", o.perplexity);
    proj->add_option("--iterations", o.iterations);
    proj->add_option("--seed", o.seed);
    proj->add_option("--out", o.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error\tusage\t" << one_line(e.what()) << '\n';
        return 2;
    }

    try {
        if (*gen) return cmd_generate(o);
        if (*prep) return cmd_prepare(o);
        if (*train) return cmd_train(o);
        if (*eval) return cmd_evaluate(o);
        if (*exp) return cmd_experiment(o);
        return cmd_project(o);
    } catch (const Error& e) {
        err << "error\t" << e.code() << '\t' << one_line(e.what()) << '\n';
    } catch (const nlohmann::json::exception& e) {
        err << "error\tschema\t" << one_line(e.what()) << '\n';
    } catch (const fs::filesystem_error& e) {
        err << "error\tio\t" << one_line(e.what()) << '\n';
    } catch (const std::exception& e) {
        err << "error\tinternal\t" << one_line(e.what()) << '\n';
    }
    return 1;
}

} // namespace seqrisk
