// Command-line front end: prep, synth, train, eval, predict, gradcheck.
// Flags override config-file keys; DSAN_RUN_ROOT rebases relative outputs.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dsan/cli.hpp"

namespace {

// generic key=value overrides forwarded into the config layer
std::map<std::string, std::string> to_overrides(const std::vector<std::string>& sets,
                                                CLI::App* app) {
    std::map<std::string, std::string> out;
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError("--set", "expected key=value, got '" + s + "'");
        out[s.substr(0, eq)] = s.substr(eq + 1);
    }
    (void)app;
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatial-temporal grid forecasting: data preparation, training, evaluation"};
    app.require_subcommand(1);

    // ---- synth ----
    dsan::cli::SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic grid series");
    synth_cmd->add_option("--seed", synth.seed, "Random seed");
    synth_cmd->add_option("--rows", synth.spec.rows, "Grid rows");
    synth_cmd->add_option("--cols", synth.spec.cols, "Grid columns");
    synth_cmd->add_option("--days", synth.spec.days, "Number of days");
    synth_cmd->add_option("--steps-per-day", synth.spec.steps_per_day, "Time steps per day");
    synth_cmd->add_option("--features", synth.spec.features, "Features per cell");
    synth_cmd->add_option("--bumps", synth.spec.bumps, "Number of moving sources");
    synth_cmd->add_option("--amplitude", synth.spec.amplitude, "Peak per-step total mass");
    synth_cmd->add_option("--sigma", synth.spec.sigma, "Source spread in cells");
    synth_cmd->add_option("--drift", synth.spec.drift_radius, "Drift radius in cells");
    synth_cmd->add_option("--noise", synth.spec.noise, "Uniform noise level");
    synth_cmd->add_option("-o,--out", synth.out_path, "Output series file")->required();

    // ---- prep ----
    dsan::cli::PrepArgs prep;
    std::vector<std::string> prep_sets;
    auto* prep_cmd = app.add_subcommand("prep", "Aggregate event records into a grid series");
    prep_cmd->add_option("records", prep.records_path, "Delimited event records")->required();
    prep_cmd->add_option("-c,--config", prep.config_path, "Aggregation config (key=value)");
    prep_cmd->add_option("--out-series", prep.out_series, "Output series file")->required();
    prep_cmd->add_option("--out-stats", prep.out_stats, "Output normalization file")->required();
    prep_cmd->add_option("--set", prep_sets, "Override a config key (key=value)");

    // ---- train ----
    dsan::cli::TrainArgs train;
    std::vector<std::string> train_sets;
    std::string train_seed, train_epochs, train_batch;
    auto* train_cmd = app.add_subcommand("train", "Train a model on a grid series");
    train_cmd->add_option("series", train.series_path, "Grid series file")->required();
    train_cmd->add_option("-c,--config", train.config_path, "Training config (key=value)");
    train_cmd->add_option("-o,--out", train.out_dir, "Run directory")->required();
    train_cmd->add_option("--seed", train_seed, "Seed override");
    train_cmd->add_option("--max-epochs", train_epochs, "Epoch limit override");
    train_cmd->add_option("--batch-size", train_batch, "Batch size override");
    train_cmd->add_option("--set", train_sets, "Override any config key (key=value)");

    // ---- eval ----
    dsan::cli::EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with per-step metrics");
    eval_cmd->add_option("checkpoint", eval.checkpoint_path, "Checkpoint file")->required();
    eval_cmd->add_option("series", eval.series_path, "Grid series with ground truth")->required();
    eval_cmd->add_option("--strategy", eval.strategy, "consecutive or multi_step")
        ->check(CLI::IsMember({"consecutive", "multi_step"}));
    eval_cmd->add_option("-F,--horizon", eval.horizon, "Prediction horizon");
    eval_cmd->add_option("--from-t1", eval.from_t1, "First evaluation origin");
    eval_cmd->add_option("--to-t1", eval.to_t1, "One past the last evaluation origin");
    eval_cmd->add_option("--thresholds", eval.thresholds,
                         "Per-feature ground-truth thresholds for the metrics");
    eval_cmd->add_option("-o,--out", eval.out_metrics, "Metrics output file")->required();
    eval_cmd->add_option("--multi-step-checkpoint", eval.multi_step_checkpoint,
                         "Single-step checkpoint for an aligned strategy comparison");
    eval_cmd->add_option("--out-curves", eval.out_curves, "Comparison curves output file");

    // ---- predict ----
    dsan::cli::PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Emit a forecast for one origin");
    predict_cmd->add_option("checkpoint", predict.checkpoint_path, "Checkpoint file")->required();
    predict_cmd->add_option("series", predict.series_path, "Grid series file")->required();
    predict_cmd->add_option("--t1", predict.t1, "Forecast origin time step")->required();
    predict_cmd->add_option("-F,--horizon", predict.horizon, "Forecast horizon");
    predict_cmd->add_option("-o,--out", predict.out_path, "Forecast output file")->required();

    // ---- gradcheck ----
    dsan::cli::GradcheckArgs gradcheck;
    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "Verify analytic gradients against finite differences");
    gradcheck_cmd->add_option("--seed", gradcheck.seed, "Random seed");
    gradcheck_cmd->add_option("--corrupt", gradcheck.corrupt_op,
                              "Poison one analytic gradient (verification hook)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth_cmd) return dsan::cli::cmd_synth(synth, std::cout, std::cerr);
        if (*prep_cmd) {
            prep.overrides = to_overrides(prep_sets, prep_cmd);
            return dsan::cli::cmd_prep(prep, std::cout, std::cerr);
        }
        if (*train_cmd) {
            train.overrides = to_overrides(train_sets, train_cmd);
            if (!train_seed.empty()) train.overrides["seed"] = train_seed;
            if (!train_epochs.empty()) train.overrides["max_epochs"] = train_epochs;
            if (!train_batch.empty()) train.overrides["batch_size"] = train_batch;
            return dsan::cli::cmd_train(train, std::cout, std::cerr);
        }
        if (*eval_cmd) {
            if (eval.out_curves.empty()) eval.out_curves = eval.out_metrics + ".curves";
            return dsan::cli::cmd_eval(eval, std::cout, std::cerr);
        }
        if (*predict_cmd) return dsan::cli::cmd_predict(predict, std::cout, std::cerr);
        if (*gradcheck_cmd) return dsan::cli::cmd_gradcheck(gradcheck, std::cout, std::cerr);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return dsan::cli::kExitData;
    }
    return dsan::cli::kExitUsage;
}
