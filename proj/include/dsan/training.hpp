#pragma once

// Weighted-MSE joint training with warm-up Adam and early stopping,
// threshold-gated evaluation metrics, and the two long-term prediction
// strategies (whole-map feedback vs. one autoregressive pass per cell).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsan/datapipe.hpp"
#include "dsan/model.hpp"
#include "dsan/optimizer.hpp"
#include "dsan/random.hpp"
#include "dsan/tensor.hpp"

namespace dsan {

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::vector<double> normalize_weights(std::vector<double> w) {
    double s = 0.0;
    for (double v : w) {
        if (v < 0.0) throw std::invalid_argument("joint weights must be non-negative");
        s += v;
    }
    if (s <= 0.0) throw std::invalid_argument("joint weights must have a positive sum");
    for (auto& v : w) v /= s;
    return w;
}

// Per-horizon weighted squared error, averaged over the batch. Weights are
// normalized to sum to one before use, so scaling all of them together
// leaves the loss unchanged.
inline Tensor weighted_mse(const std::vector<Tensor>& preds, const std::vector<Tensor>& truths,
                           const std::vector<double>& weights) {
    if (preds.empty() || preds.size() != truths.size())
        throw std::invalid_argument("weighted_mse: batch of predictions and truths must match");
    const std::vector<double> w = normalize_weights(weights);
    const int F = preds[0].shape()[0];
    if (static_cast<int>(w.size()) != F)
        throw std::invalid_argument("weighted_mse: need one weight per horizon step");
    Tensor wcol = Tensor::from({F, 1}, std::vector<double>(w));
    Tensor total;
    for (size_t i = 0; i < preds.size(); ++i) {
        Tensor diff = sub(preds[i], truths[i]);
        Tensor weighted = sum(mul(wcol, mul(diff, diff)));
        total = total.defined() ? add(total, weighted) : weighted;
    }
    return scale(total, 1.0 / static_cast<double>(preds.size()));
}

inline Tensor weighted_mse(const Tensor& pred, const Tensor& truth,
                           const std::vector<double>& weights) {
    return weighted_mse(std::vector<Tensor>{pred}, std::vector<Tensor>{truth}, weights);
}

// --- metrics -----------------------------------------------------------------

struct MetricCell {
    double rmse = 0.0;
    double mape = 0.0;
    long included = 0;
    bool defined = false;  // false when every instance fell below the threshold
};

// Streaming per-(step, feature) accumulator over denormalized values.
// Instances whose ground truth falls below the feature threshold are
// excluded from both metrics.
class MetricsAccumulator {
public:
    MetricsAccumulator(int horizon, std::vector<double> thresholds)
        : horizon_(horizon), thresholds_(std::move(thresholds)),
          sse_(static_cast<size_t>(horizon) * thresholds_.size(), 0.0),
          sae_(static_cast<size_t>(horizon) * thresholds_.size(), 0.0),
          count_(static_cast<size_t>(horizon) * thresholds_.size(), 0) {}

    void add(int step, int feature, double pred, double truth) {
        if (truth < thresholds_[static_cast<size_t>(feature)]) return;
        const size_t i = static_cast<size_t>(step) * thresholds_.size() + feature;
        const double err = pred - truth;
        sse_[i] += err * err;
        sae_[i] += std::abs(err) / truth;
        ++count_[i];
    }

    std::vector<std::vector<MetricCell>> finalize() const {
        std::vector<std::vector<MetricCell>> out(static_cast<size_t>(horizon_));
        for (int t = 0; t < horizon_; ++t) {
            out[static_cast<size_t>(t)].resize(thresholds_.size());
            for (size_t f = 0; f < thresholds_.size(); ++f) {
                const size_t i = static_cast<size_t>(t) * thresholds_.size() + f;
                MetricCell& c = out[static_cast<size_t>(t)][f];
                c.included = count_[i];
                if (count_[i] > 0) {
                    c.defined = true;
                    c.rmse = std::sqrt(sse_[i] / static_cast<double>(count_[i]));
                    c.mape = sae_[i] / static_cast<double>(count_[i]);
                }
            }
        }
        return out;
    }

private:
    int horizon_;
    std::vector<double> thresholds_;
    std::vector<double> sse_, sae_;
    std::vector<long> count_;
};

// pred/truth: F x M x b of denormalized values over M instances.
inline std::vector<std::vector<MetricCell>> rmse_mape(const Tensor& pred, const Tensor& truth,
                                                      const std::vector<double>& thresholds) {
    if (pred.shape() != truth.shape())
        throw ShapeError("metrics: prediction " + shape_str(pred.shape()) +
                         " vs truth " + shape_str(truth.shape()));
    if (pred.rank() != 3 || static_cast<int>(thresholds.size()) != pred.shape()[2])
        throw ShapeError("metrics: expected (F,M,b) tensors and one threshold per feature");
    const int F = pred.shape()[0], M = pred.shape()[1], b = pred.shape()[2];
    MetricsAccumulator acc(F, thresholds);
    for (int t = 0; t < F; ++t)
        for (int m = 0; m < M; ++m)
            for (int f = 0; f < b; ++f)
                acc.add(t, f, pred.at({t, m, f}), truth.at({t, m, f}));
    return acc.finalize();
}

// --- training loop -------------------------------------------------------------

struct TrainConfig {
    std::vector<double> weights;  // empty: use the model's joint weights
    int batch_size = 32;
    int max_epochs = 50;
    int early_stop_window = 5;
    int warmup_steps = 4000;
    uint64_t seed = 1;
    double val_fraction = 0.2;  // trailing fraction of distinct t1 values
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    long optimizer_steps = 0;
    long train_samples = 0;
    long val_samples = 0;
};

inline double dataset_loss(const DsanModel& model, const std::vector<SampleBatch>& samples,
                           const std::vector<int>& idx, const std::vector<double>& weights) {
    NoGradGuard ng;
    ForwardCtx eval;
    double total = 0.0;
    for (int i : idx) {
        Tensor pred = model.forward(samples[static_cast<size_t>(i)], eval);
        total += weighted_mse(pred, samples[static_cast<size_t>(i)].targets, weights).item();
    }
    return idx.empty() ? 0.0 : total / static_cast<double>(idx.size());
}

// Epoch loop with seeded shuffling, teacher forcing, warm-up Adam and
// early stopping on the validation loss; the parameters of the best
// validation epoch are restored before returning. The validation split is
// the trailing `val_fraction` of distinct t1 values, which avoids leaking
// temporally adjacent samples into validation.
inline TrainResult train(DsanModel& model, const std::vector<SampleBatch>& samples,
                         const TrainConfig& cfg) {
    if (samples.empty()) throw std::invalid_argument("train: no samples");
    const std::vector<double> w =
        normalize_weights(cfg.weights.empty() ? model.config().joint_weights : cfg.weights);

    // split by t1
    std::vector<int> t1s;
    for (const auto& s : samples)
        if (t1s.empty() || s.t1 != t1s.back()) t1s.push_back(s.t1);
    const size_t val_t1_from =
        t1s.empty() ? 0 : static_cast<size_t>(std::ceil((1.0 - cfg.val_fraction) * t1s.size()));
    const int t1_cut = val_t1_from < t1s.size() ? t1s[val_t1_from]
                                                : std::numeric_limits<int>::max();
    std::vector<int> train_idx, val_idx;
    for (size_t i = 0; i < samples.size(); ++i)
        (samples[i].t1 < t1_cut ? train_idx : val_idx).push_back(static_cast<int>(i));
    if (train_idx.empty()) throw std::invalid_argument("train: empty training split");

    TrainResult result;
    result.train_samples = static_cast<long>(train_idx.size());
    result.val_samples = static_cast<long>(val_idx.size());

    AdamConfig ac;
    ac.warmup_steps = cfg.warmup_steps;
    ac.model_dim = model.config().model_dim;
    WarmupAdam opt(model.parameter_tensors(), ac);
    std::mt19937_64 rng(cfg.seed);

    auto best = model.snapshot();
    result.best_epoch = 0;
    result.best_val_loss = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        deterministic_shuffle(train_idx, rng);
        double epoch_loss = 0.0;
        // TODO: group samples sharing t1 within a batch so the global
        // encoder pass over their shared input can be computed once.
        for (size_t at = 0; at < train_idx.size(); at += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(train_idx.size(), at + static_cast<size_t>(cfg.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(stop - at);
            ForwardCtx ctx{true, &rng};
            opt.zero_grad();
            // one backward per sample, scaled by 1/|batch|; gradients
            // accumulate to the batch-mean gradient at single-sample peak
            // memory, in a fixed order
            double batch_loss = 0.0;
            for (size_t i = at; i < stop; ++i) {
                const SampleBatch& s = samples[static_cast<size_t>(train_idx[i])];
                Tensor sample_loss = weighted_mse(model.forward(s, ctx), s.targets, w);
                const double lv = sample_loss.item();
                if (!std::isfinite(lv))
                    throw NumericError("train: non-finite loss at epoch " +
                                       std::to_string(epoch) + ", step " +
                                       std::to_string(opt.steps_taken() + 1));
                batch_loss += lv;
                backward(scale(sample_loss, inv_batch));
            }
            epoch_loss += batch_loss;
            opt.step();
        }
        epoch_loss /= static_cast<double>(train_idx.size());

        const double val_loss =
            val_idx.empty() ? epoch_loss : dataset_loss(model, samples, val_idx, w);
        if (!std::isfinite(val_loss))
            throw NumericError("train: non-finite validation loss at epoch " +
                               std::to_string(epoch));
        result.history.push_back({epoch, epoch_loss, val_loss, opt.last_learning_rate()});

        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            best = model.snapshot();
        } else if (epoch - result.best_epoch >= cfg.early_stop_window) {
            break;
        }
    }
    result.optimizer_steps = opt.steps_taken();
    model.restore(best);
    return result;
}

inline void write_history(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os.precision(17);
    os << "epoch\ttrain_loss\tval_loss\tlearning_rate\n";
    for (const auto& row : history)
        os << row.epoch << "\t" << row.train_loss << "\t" << row.val_loss << "\t"
           << row.learning_rate << "\n";
}

// --- long-term strategies --------------------------------------------------------

// One autoregressive pass per cell with a model trained on the full horizon;
// no cross-grid error feedback. Returns denormalized F x N x b predictions.
inline Tensor rollout_consecutive(const DsanModel& model, const GridSeries& series,
                                  const NormStats& stats, int t1, int horizon,
                                  const SampleSpec& sp, SpeCache* cache = nullptr) {
    if (horizon > sp.horizon)
        throw std::invalid_argument("rollout: horizon exceeds the sample spec horizon");
    const int n = series.cell_count(), b = series.features;
    std::vector<double> out(static_cast<size_t>(horizon) * n * b, 0.0);
    for (int cell = 0; cell < n; ++cell) {
        SampleBatch s = build_sample(series, stats, t1, cell, sp, cache);
        Tensor pred = model.autoregressive_predict(s, horizon);
        for (int t = 0; t < horizon; ++t)
            for (int f = 0; f < b; ++f)
                out[(static_cast<size_t>(t) * n + cell) * b + f] =
                    stats.invert(pred.at({t, f}), f);
    }
    return Tensor::from({horizon, n, b}, std::move(out));
}

// Whole-map feedback with a single-step model: predict every cell for one
// step, write the denormalized frame back into a working copy of the series,
// and repeat. `feed_predictions=false` keeps the ground truth in the working
// copy, which reduces to independent one-step predictions.
inline Tensor rollout_multi_step(const DsanModel& model, const GridSeries& series,
                                 const NormStats& stats, int t1, int horizon, SampleSpec sp,
                                 SpeCache* cache = nullptr, bool feed_predictions = true) {
    sp.horizon = 1;
    const int n = series.cell_count(), b = series.features;
    GridSeries work = series;
    std::vector<double> out(static_cast<size_t>(horizon) * n * b, 0.0);
    for (int step = 0; step < horizon; ++step) {
        const int t = t1 + step;
        std::vector<std::vector<double>> frame(static_cast<size_t>(n));
        for (int cell = 0; cell < n; ++cell) {
            SampleBatch s = build_sample(work, stats, t, cell, sp, cache);
            Tensor pred = model.autoregressive_predict(s, 1);
            frame[static_cast<size_t>(cell)].resize(static_cast<size_t>(b));
            for (int f = 0; f < b; ++f)
                frame[static_cast<size_t>(cell)][static_cast<size_t>(f)] =
                    stats.invert(pred.at({0, f}), f);
        }
        for (int cell = 0; cell < n; ++cell)
            for (int f = 0; f < b; ++f) {
                const double v = frame[static_cast<size_t>(cell)][static_cast<size_t>(f)];
                out[(static_cast<size_t>(step) * n + cell) * b + f] = v;
                if (feed_predictions) work.at(t, cell, f) = v;
            }
    }
    return Tensor::from({horizon, n, b}, std::move(out));
}

// Aligned per-step error curves for the two strategies over a set of
// evaluation origins.
struct StrategyCurves {
    int horizon = 0;
    std::vector<std::vector<MetricCell>> consecutive;  // [step][feature]
    std::vector<std::vector<MetricCell>> multi_step;
};

inline Tensor ground_truth_block(const GridSeries& series, int t1, int horizon) {
    const int n = series.cell_count(), b = series.features;
    std::vector<double> out(static_cast<size_t>(horizon) * n * b);
    for (int t = 0; t < horizon; ++t)
        for (int cell = 0; cell < n; ++cell)
            for (int f = 0; f < b; ++f)
                out[(static_cast<size_t>(t) * n + cell) * b + f] = series.at(t1 + t, cell, f);
    return Tensor::from({horizon, n, b}, std::move(out));
}

inline StrategyCurves compare_strategies(const DsanModel& horizon_model,
                                         const DsanModel& single_step_model,
                                         const GridSeries& series, const NormStats& stats,
                                         const std::vector<int>& t1s, int horizon,
                                         const SampleSpec& sp,
                                         const std::vector<double>& thresholds) {
    MetricsAccumulator acc_con(horizon, thresholds), acc_multi(horizon, thresholds);
    SpeCache cache;
    const int n = series.cell_count(), b = series.features;
    for (int t1 : t1s) {
        Tensor truth = ground_truth_block(series, t1, horizon);
        Tensor con = rollout_consecutive(horizon_model, series, stats, t1, horizon, sp, &cache);
        SampleSpec sp1 = sp;
        Tensor multi = rollout_multi_step(single_step_model, series, stats, t1, horizon, sp1,
                                          &cache);
        for (int t = 0; t < horizon; ++t)
            for (int cell = 0; cell < n; ++cell)
                for (int f = 0; f < b; ++f) {
                    acc_con.add(t, f, con.at({t, cell, f}), truth.at({t, cell, f}));
                    acc_multi.add(t, f, multi.at({t, cell, f}), truth.at({t, cell, f}));
                }
    }
    StrategyCurves curves;
    curves.horizon = horizon;
    curves.consecutive = acc_con.finalize();
    curves.multi_step = acc_multi.finalize();
    return curves;
}

inline void write_metrics(const std::string& path,
                          const std::vector<std::vector<MetricCell>>& table) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os.precision(17);
    os << "step\tfeature\trmse\tmape\tincluded\n";
    for (size_t t = 0; t < table.size(); ++t)
        for (size_t f = 0; f < table[t].size(); ++f) {
            const MetricCell& c = table[t][f];
            os << (t + 1) << "\t" << f << "\t";
            if (c.defined)
                os << c.rmse << "\t" << c.mape;
            else
                os << "undefined\tundefined";
            os << "\t" << c.included << "\n";
        }
}

inline void write_strategy_curves(const std::string& path, const StrategyCurves& curves) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os.precision(17);
    os << "step\tfeature\trmse_consecutive\trmse_multi_step\n";
    for (int t = 0; t < curves.horizon; ++t)
        for (size_t f = 0; f < curves.consecutive[static_cast<size_t>(t)].size(); ++f) {
            const MetricCell& c = curves.consecutive[static_cast<size_t>(t)][f];
            const MetricCell& m = curves.multi_step[static_cast<size_t>(t)][f];
            os << (t + 1) << "\t" << f << "\t";
            if (c.defined)
                os << c.rmse;
            else
                os << "undefined";
            os << "\t";
            if (m.defined)
                os << m.rmse;
            else
                os << "undefined";
            os << "\n";
        }
}

}  // namespace dsan
