#pragma once

// Batch command implementations behind the command-line tool. Kept in the
// library so the test suites can drive the exact code paths the binary runs.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
// failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dsan/checkpoint.hpp"
#include "dsan/datapipe.hpp"
#include "dsan/digest.hpp"
#include "dsan/gradcheck.hpp"
#include "dsan/model.hpp"
#include "dsan/training.hpp"

namespace dsan::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

constexpr const char* kArtifactVersion = "1.0.0";

// Run-directory root; relative output paths are resolved under it when set.
inline std::string resolve_path(const std::string& path) {
    const char* root = std::getenv("DSAN_RUN_ROOT");
    if (!root || *root == '\0' || path.empty()) return path;
    std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (std::filesystem::path(root) / p).string();
}

// --- key=value config files -------------------------------------------------

// Flat key=value lines with '#' comments. Commands validate against their
// own key set and report every problem at once.
class KeyValues {
public:
    static KeyValues parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw DataError("cannot read config file " + path);
        KeyValues kv;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos) {
                kv.errors_.push_back(path + ":" + std::to_string(lineno) +
                                     ": expected key=value, got '" + trimmed + "'");
                continue;
            }
            kv.values_[trim(trimmed.substr(0, eq))] = trim(trimmed.substr(eq + 1));
        }
        return kv;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        mark(key);
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    long get_int(const std::string& key, long fallback) {
        mark(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            size_t used = 0;
            const long v = std::stol(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            errors_.push_back(key + ": expected an integer, got '" + it->second + "'");
            return fallback;
        }
    }
    double get_double(const std::string& key, double fallback) {
        mark(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            errors_.push_back(key + ": expected a number, got '" + it->second + "'");
            return fallback;
        }
    }
    std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) {
        mark(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        std::istringstream parts(it->second);
        std::string item;
        while (std::getline(parts, item, ',')) {
            try {
                out.push_back(std::stod(trim(item)));
            } catch (const std::exception&) {
                errors_.push_back(key + ": expected comma-separated numbers, got '" + it->second +
                                  "'");
                return fallback;
            }
        }
        return out;
    }

    // Call after all gets: flags unknown keys so typos cannot silently
    // fall back to defaults.
    std::vector<std::string> finish() {
        for (const auto& [k, v] : values_)
            if (!seen_.count(k)) errors_.push_back("unknown key '" + k + "'");
        return errors_;
    }

    const std::map<std::string, std::string>& raw() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto from = s.find_first_not_of(" \t\r");
        if (from == std::string::npos) return "";
        const auto to = s.find_last_not_of(" \t\r");
        return s.substr(from, to - from + 1);
    }
    void mark(const std::string& key) { seen_.insert(key); }

    std::map<std::string, std::string> values_;
    std::set<std::string> seen_;
    std::vector<std::string> errors_;
};

inline int report_config_errors(const std::vector<std::string>& errors, std::ostream& err) {
    if (errors.empty()) return kExitOk;
    err << "configuration errors:\n";
    for (const auto& e : errors) err << "  - " << e << "\n";
    return kExitUsage;
}

// --- synth --------------------------------------------------------------------

struct SynthArgs {
    uint64_t seed = 1;
    SynthSpec spec;
    std::string out_path;
};

inline int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
    try {
        GridSeries series = synth_generate(args.seed, args.spec);
        const std::string path = resolve_path(args.out_path);
        save_grid_series(path, series);
        out << "wrote " << path << ": T=" << series.time_steps << " grid=" << series.rows << "x"
            << series.cols << " features=" << series.features << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        err << "synth: " << e.what() << "\n";
        return kExitData;
    }
}

// --- prep ---------------------------------------------------------------------

struct PrepArgs {
    std::string records_path;
    std::string config_path;  // aggregation bounds and feature rules
    std::string out_series;
    std::string out_stats;
    std::map<std::string, std::string> overrides;
};

inline int cmd_prep(const PrepArgs& args, std::ostream& out, std::ostream& err) {
    AggregateSpec spec;
    double train_fraction = 0.8;
    try {
        KeyValues kv = args.config_path.empty() ? KeyValues()
                                                : KeyValues::parse_file(args.config_path);
        for (const auto& [k, v] : args.overrides) kv.set(k, v);
        spec.rows = static_cast<int>(kv.get_int("rows", 0));
        spec.cols = static_cast<int>(kv.get_int("cols", 0));
        spec.time_steps = static_cast<int>(kv.get_int("time_steps", 0));
        spec.interval_minutes = static_cast<int>(kv.get_int("interval_minutes", 30));
        spec.origin_epoch_minutes = kv.get_int("origin_epoch_minutes", 0);
        spec.grid_size_meters = kv.get_double("grid_size_meters", 1000.0);
        train_fraction = kv.get_double("train_fraction", 0.8);
        const std::string rules = kv.get_string("features", "end:count,start:count");
        spec.features.clear();
        std::istringstream parts(rules);
        std::string item;
        std::vector<std::string> errors = kv.finish();
        while (std::getline(parts, item, ',')) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) {
                errors.push_back("features: expected kind:mode, got '" + item + "'");
                continue;
            }
            const std::string mode = item.substr(colon + 1);
            if (mode != "count" && mode != "sum") {
                errors.push_back("features: mode must be count or sum, got '" + mode + "'");
                continue;
            }
            spec.features.push_back({item.substr(0, colon), mode == "sum"});
        }
        if (spec.rows < 1 || spec.cols < 1) errors.push_back("rows/cols must be >= 1");
        if (spec.time_steps < 1) errors.push_back("time_steps must be >= 1");
        if (train_fraction <= 0.0 || train_fraction > 1.0)
            errors.push_back("train_fraction must be in (0, 1]");
        if (const int rc = report_config_errors(errors, err); rc != kExitOk) return rc;
    } catch (const std::exception& e) {
        err << "prep: " << e.what() << "\n";
        return kExitData;
    }

    try {
        std::ifstream records(args.records_path);
        if (!records) {
            err << "prep: cannot read " << args.records_path << "\n";
            return kExitData;
        }
        GridSeries series;
        AggregateReport report;
        if (records.peek() == std::char_traits<char>::eof()) {
            // an empty input yields an empty series, with a warning
            series = GridSeries::empty(spec.time_steps, spec.rows, spec.cols,
                                       static_cast<int>(spec.features.size()),
                                       spec.interval_minutes, spec.origin_epoch_minutes,
                                       spec.grid_size_meters);
            err << "prep: warning: " << args.records_path << " is empty\n";
        } else {
            series = aggregate_events(records, spec, &report);
        }
        const int fit_end = std::max(1, static_cast<int>(series.time_steps * train_fraction));
        NormStats stats = NormStats::fit(series, fit_end);
        save_grid_series(resolve_path(args.out_series), series);
        save_norm_stats(resolve_path(args.out_stats), stats);
        out << "accepted " << report.accepted << " records; dropped " << report.dropped()
            << " (malformed " << report.malformed << ", out of bounds " << report.out_of_bounds
            << ", unknown kind " << report.unknown_kind << ")\n";
        out << "wrote " << resolve_path(args.out_series) << " and " << resolve_path(args.out_stats)
            << " (normalization fit on steps [0," << fit_end << "))\n";
        return kExitOk;
    } catch (const std::exception& e) {
        err << "prep: " << e.what() << "\n";
        return kExitData;
    }
}

// --- train ---------------------------------------------------------------------

struct TrainArgs {
    std::string series_path;
    std::string config_path;
    std::string out_dir;
    std::map<std::string, std::string> overrides;  // flag values win over the file
};

struct ResolvedTrainConfig {
    ModelConfig model;
    SamplingParams sampling;
    TrainConfig train;
    double train_fraction = 0.8;
    std::map<std::string, std::string> resolved;  // for the manifest
};

inline ResolvedTrainConfig resolve_train_config(KeyValues& kv, const GridSeries& series,
                                                std::vector<std::string>& errors) {
    ResolvedTrainConfig r;
    r.sampling.weeks = static_cast<int>(kv.get_int("weeks", 1));
    r.sampling.days = static_cast<int>(kv.get_int("days", 3));
    r.sampling.recent = static_cast<int>(kv.get_int("recent", 1));

    ModelConfig& m = r.model;
    m.layers = static_cast<int>(kv.get_int("layers", 3));
    m.model_dim = static_cast<int>(kv.get_int("model_dim", 64));
    m.ffn_dim = static_cast<int>(kv.get_int("ffn_dim", 256));
    m.heads = static_cast<int>(kv.get_int("heads", 8));
    m.proj_layers = static_cast<int>(kv.get_int("proj_layers", 3));
    m.local_radius = static_cast<int>(kv.get_int("local_radius", 3));
    m.dropout_rate = kv.get_double("dropout", 0.1);
    m.future_steps = static_cast<int>(kv.get_int("future_steps", 12));
    m.num_externals = static_cast<int>(kv.get_int("externals", 4));
    m.hist_steps = r.sampling.hist_steps();
    m.features = series.features;
    m.grid_rows = series.rows;
    m.grid_cols = series.cols;
    m.steps_per_day = series.steps_per_day();
    const std::string scheme = kv.get_string("spe_scheme", "relative");
    if (scheme != "relative" && scheme != "absolute")
        errors.push_back("spe_scheme must be relative or absolute, got '" + scheme + "'");
    m.relative_spe = scheme != "absolute";

    // the whole-map feedback strategy trains a single-step model
    const std::string strategy = kv.get_string("strategy", "consecutive");
    if (strategy != "consecutive" && strategy != "multi_step")
        errors.push_back("strategy must be consecutive or multi_step, got '" + strategy + "'");
    if (strategy == "multi_step") {
        if (kv.has("future_steps") && m.future_steps != 1)
            errors.push_back("the multi_step strategy trains on a single future step; drop "
                             "future_steps or set it to 1");
        m.future_steps = 1;
    }

    const double first = kv.get_double("first_step_weight", -1.0);
    std::vector<double> weights = kv.get_doubles("weights", {});
    if (!weights.empty() && first >= 0.0)
        errors.push_back("give either weights or first_step_weight, not both");
    if (weights.empty())
        weights = first >= 0.0 ? ModelConfig::front_loaded_weights(m.future_steps, first)
                               : ModelConfig::uniform_weights(m.future_steps);
    m.joint_weights = weights;

    TrainConfig& t = r.train;
    t.batch_size = static_cast<int>(kv.get_int("batch_size", 32));
    t.max_epochs = static_cast<int>(kv.get_int("max_epochs", 50));
    t.early_stop_window = static_cast<int>(kv.get_int("early_stop_window", 5));
    t.warmup_steps = static_cast<int>(kv.get_int("warmup_steps", 4000));
    t.seed = static_cast<uint64_t>(kv.get_int("seed", 1));
    t.val_fraction = kv.get_double("val_fraction", 0.2);
    r.train_fraction = kv.get_double("train_fraction", 0.8);

    for (auto e : kv.finish()) errors.push_back(e);
    for (auto e : m.validate()) errors.push_back(e);
    if (t.batch_size < 1) errors.push_back("batch_size must be >= 1");
    if (t.max_epochs < 0) errors.push_back("max_epochs must be >= 0");
    if (t.early_stop_window < 1) errors.push_back("early_stop_window must be >= 1");
    if (t.warmup_steps < 1) errors.push_back("warmup_steps must be >= 1");
    if (t.val_fraction < 0.0 || t.val_fraction >= 1.0)
        errors.push_back("val_fraction must be in [0, 1)");
    if (r.train_fraction <= 0.0 || r.train_fraction > 1.0)
        errors.push_back("train_fraction must be in (0, 1]");

    auto store_int = [&](const std::string& k, long v) { r.resolved[k] = std::to_string(v); };
    auto store_double = [&](const std::string& k, double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        r.resolved[k] = os.str();
    };
    store_int("layers", m.layers);
    store_int("model_dim", m.model_dim);
    store_int("ffn_dim", m.ffn_dim);
    store_int("heads", m.heads);
    store_int("proj_layers", m.proj_layers);
    store_int("local_radius", m.local_radius);
    store_double("dropout", m.dropout_rate);
    store_int("future_steps", m.future_steps);
    store_int("externals", m.num_externals);
    store_int("weeks", r.sampling.weeks);
    store_int("days", r.sampling.days);
    store_int("recent", r.sampling.recent);
    r.resolved["spe_scheme"] = m.relative_spe ? "relative" : "absolute";
    r.resolved["strategy"] = strategy;
    {
        std::ostringstream os;
        os.precision(17);
        for (size_t i = 0; i < weights.size(); ++i) os << (i ? "," : "") << weights[i];
        r.resolved["weights"] = os.str();
    }
    store_int("batch_size", t.batch_size);
    store_int("max_epochs", t.max_epochs);
    store_int("early_stop_window", t.early_stop_window);
    store_int("warmup_steps", t.warmup_steps);
    store_int("seed", static_cast<long>(t.seed));
    store_double("val_fraction", t.val_fraction);
    store_double("train_fraction", r.train_fraction);
    return r;
}

inline void write_manifest(const std::string& path, const std::string& command, uint64_t seed,
                           const std::map<std::string, std::string>& config,
                           const std::map<std::string, std::string>& input_digests) {
    nlohmann::json j;
    j["artifact_version"] = kArtifactVersion;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = config;
    j["inputs"] = input_digests;
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os << j.dump(2) << "\n";
}

inline int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
    GridSeries series;
    try {
        series = load_grid_series(resolve_path(args.series_path));
    } catch (const std::exception& e) {
        err << "train: " << e.what() << "\n";
        return kExitData;
    }

    std::vector<std::string> errors;
    ResolvedTrainConfig rc;
    try {
        KeyValues kv = args.config_path.empty() ? KeyValues()
                                                : KeyValues::parse_file(args.config_path);
        for (const auto& [k, v] : args.overrides) kv.set(k, v);
        rc = resolve_train_config(kv, series, errors);
    } catch (const std::exception& e) {
        err << "train: " << e.what() << "\n";
        return kExitData;
    }
    if (const int code = report_config_errors(errors, err); code != kExitOk) return code;

    try {
        const std::string out_dir = resolve_path(args.out_dir);
        std::filesystem::create_directories(out_dir);

        const int train_end = std::max(1, static_cast<int>(series.time_steps * rc.train_fraction));
        NormStats stats = NormStats::fit(series, train_end);
        SampleSpec sp = Checkpoint{rc.model, rc.sampling, stats, {}}.sample_spec();
        // keep every referenced step (history and targets) inside the fit span
        const int origin_end = std::max(0, train_end - rc.model.future_steps + 1);
        SampleSkips skips;
        std::vector<SampleBatch> samples = build_samples(series, stats, sp, 0, origin_end, &skips);
        if (samples.empty()) {
            err << "train: no feasible sample origins in steps [0," << origin_end
                << ") (skipped: " << skips.no_history << " without history, " << skips.no_future
                << " without future); the series may be too short for the sampling layout\n";
            return kExitData;
        }
        out << "training on " << samples.size() << " samples (skipped " << skips.no_history
            << " origins without history, " << skips.no_future << " without future)\n";

        std::map<std::string, std::string> inputs;
        inputs[args.series_path] = file_digest(resolve_path(args.series_path));
        if (!args.config_path.empty())
            inputs[args.config_path] = file_digest(args.config_path);
        write_manifest(out_dir + "/manifest.json", "train", rc.train.seed, rc.resolved, inputs);

        DsanModel model(rc.model, rc.train.seed);
        TrainResult result = train(model, samples, rc.train);
        write_history(out_dir + "/history.tsv", result.history);
        save_checkpoint(out_dir + "/checkpoint.bin", model, rc.sampling, stats);

        out << "finished after " << result.history.size() << " epochs; best validation loss "
            << result.best_val_loss << " at epoch " << result.best_epoch << "\n";
        out << "wrote " << out_dir << "/manifest.json, history.tsv, checkpoint.bin\n";
        return kExitOk;
    } catch (const NumericError& e) {
        err << "train: numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "train: " << e.what() << "\n";
        return kExitData;
    }
}

// --- eval / predict ---------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint_path;
    std::string series_path;
    std::string strategy = "consecutive";  // consecutive | multi_step
    int horizon = 0;                       // 0: model horizon
    int from_t1 = -1, to_t1 = -1;          // default: trailing 20% of the series
    std::vector<double> thresholds;        // per feature; default zeros
    std::string out_metrics;
    std::string multi_step_checkpoint;     // optional second model for aligned curves
    std::string out_curves;
};

inline std::vector<int> eval_origins(const GridSeries& series, const SampleSpec& sp, int horizon,
                                     int from_t1, int to_t1) {
    const int a = series.steps_per_day();
    int lo = from_t1 >= 0 ? from_t1 : static_cast<int>(series.time_steps * 0.8);
    int hi = to_t1 >= 0 ? to_t1 : series.time_steps;
    std::vector<int> t1s;
    for (int t1 = lo; t1 < hi; ++t1)
        if (t1 - sp.weeks * 7 * a >= 0 && t1 + horizon - 1 < series.time_steps)
            t1s.push_back(t1);
    return t1s;
}

inline int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
    try {
        Checkpoint ck = read_checkpoint(resolve_path(args.checkpoint_path));
        DsanModel model = load_model(ck);
        GridSeries series = load_grid_series(resolve_path(args.series_path));
        if (series.features != ck.config.features || series.rows != ck.config.grid_rows ||
            series.cols != ck.config.grid_cols) {
            err << "eval: series does not match the checkpoint's grid\n";
            return kExitData;
        }
        const int horizon = args.horizon > 0 ? args.horizon : ck.config.future_steps;
        if (args.strategy == "consecutive" && horizon > ck.config.future_steps) {
            err << "eval: horizon " << horizon << " exceeds the model horizon "
                << ck.config.future_steps << "\n";
            return kExitUsage;
        }
        if (args.strategy == "multi_step" && ck.config.future_steps != 1) {
            err << "eval: multi_step strategy needs a single-step model\n";
            return kExitUsage;
        }
        std::vector<double> thresholds = args.thresholds;
        if (thresholds.empty()) thresholds.assign(static_cast<size_t>(series.features), 0.0);
        if (static_cast<int>(thresholds.size()) != series.features) {
            err << "eval: need one threshold per feature\n";
            return kExitUsage;
        }
        // load the comparison model up front so a bad path fails before the
        // metrics pass
        std::optional<DsanModel> comparison;
        if (!args.multi_step_checkpoint.empty()) {
            Checkpoint ck1 = read_checkpoint(resolve_path(args.multi_step_checkpoint));
            if (ck1.config.future_steps != 1) {
                err << "eval: the comparison checkpoint must be a single-step model\n";
                return kExitUsage;
            }
            comparison.emplace(load_model(ck1));
        }

        SampleSpec sp = ck.sample_spec();
        sp.horizon = std::max(horizon, args.strategy == "multi_step" ? 1 : horizon);
        const std::vector<int> t1s = eval_origins(series, sp, horizon, args.from_t1, args.to_t1);
        if (t1s.empty()) {
            err << "eval: no evaluation origins have " << horizon
                << " steps of ground truth and full history\n";
            return kExitData;
        }

        MetricsAccumulator acc(horizon, thresholds);
        SpeCache cache;
        for (int t1 : t1s) {
            Tensor truth = ground_truth_block(series, t1, horizon);
            Tensor pred = args.strategy == "multi_step"
                              ? rollout_multi_step(model, series, ck.stats, t1, horizon, sp, &cache)
                              : rollout_consecutive(model, series, ck.stats, t1, horizon, sp,
                                                    &cache);
            for (int t = 0; t < horizon; ++t)
                for (int cell = 0; cell < series.cell_count(); ++cell)
                    for (int f = 0; f < series.features; ++f)
                        acc.add(t, f, pred.at({t, cell, f}), truth.at({t, cell, f}));
        }
        auto table = acc.finalize();
        write_metrics(resolve_path(args.out_metrics), table);
        out << "evaluated " << t1s.size() << " origins with strategy " << args.strategy
            << "; wrote " << resolve_path(args.out_metrics) << "\n";
        for (size_t t = 0; t < table.size(); ++t)
            for (size_t f = 0; f < table[t].size(); ++f)
                if (table[t][f].defined)
                    out << "step " << (t + 1) << " feature " << f << ": rmse "
                        << table[t][f].rmse << " mape " << table[t][f].mape << " (n="
                        << table[t][f].included << ")\n";
                else
                    out << "step " << (t + 1) << " feature " << f
                        << ": undefined (no instances above threshold)\n";

        if (comparison) {
            StrategyCurves curves = compare_strategies(model, *comparison, series, ck.stats, t1s,
                                                       horizon, sp, thresholds);
            write_strategy_curves(resolve_path(args.out_curves), curves);
            out << "wrote strategy comparison to " << resolve_path(args.out_curves) << "\n";
        }
        return kExitOk;
    } catch (const NumericError& e) {
        err << "eval: numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "eval: " << e.what() << "\n";
        return kExitData;
    }
}

struct PredictArgs {
    std::string checkpoint_path;
    std::string series_path;
    int t1 = -1;
    int horizon = 0;
    std::string out_path;
};

inline int cmd_predict(const PredictArgs& args, std::ostream& out, std::ostream& err) {
    try {
        Checkpoint ck = read_checkpoint(resolve_path(args.checkpoint_path));
        DsanModel model = load_model(ck);
        GridSeries series = load_grid_series(resolve_path(args.series_path));
        const int horizon = args.horizon > 0 ? args.horizon : ck.config.future_steps;
        SampleSpec sp = ck.sample_spec();
        if (args.t1 < 0) {
            err << "predict: --t1 is required\n";
            return kExitUsage;
        }
        if (ck.config.future_steps > 1 && horizon > ck.config.future_steps) {
            err << "predict: horizon " << horizon << " exceeds the model horizon "
                << ck.config.future_steps << "\n";
            return kExitUsage;
        }
        Tensor pred = ck.config.future_steps == 1
                          ? rollout_multi_step(model, series, ck.stats, args.t1, horizon, sp)
                          : rollout_consecutive(model, series, ck.stats, args.t1, horizon, sp);
        GridSeries forecast = GridSeries::empty(horizon, series.rows, series.cols,
                                                series.features, series.interval_minutes,
                                                series.time_of(args.t1), series.grid_size_meters);
        forecast.data = pred.data();
        save_grid_series(resolve_path(args.out_path), forecast);
        out << "wrote " << horizon << "-step forecast for t1=" << args.t1 << " to "
            << resolve_path(args.out_path) << "\n";
        return kExitOk;
    } catch (const NumericError& e) {
        err << "predict: numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "predict: " << e.what() << "\n";
        return kExitData;
    }
}

// --- gradcheck ----------------------------------------------------------------------

struct GradcheckArgs {
    uint64_t seed = 1;
    std::string corrupt_op;  // verification hook: poison one analytic gradient
};

inline int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
    auto results = gradcheck::run_all(args.seed, args.corrupt_op);
    bool all_pass = true;
    std::string first_failure;
    for (const auto& r : results) {
        out << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  max_rel_err=" << r.max_rel_err
            << " tol=" << r.tolerance << " checked=" << r.checked << "\n";
        if (!r.pass && first_failure.empty()) first_failure = r.name;
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) {
        err << "gradcheck: gradient mismatch in: " << first_failure << "\n";
        return kExitNumeric;
    }
    out << "all gradient checks passed\n";
    return kExitOk;
}

}  // namespace dsan::cli
