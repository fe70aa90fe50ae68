#pragma once

// Raw event records -> grid tensors -> normalized training samples, plus a
// deterministic synthetic corpus for desk-scale verification.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsan/encodings.hpp"
#include "dsan/model.hpp"
#include "dsan/random.hpp"
#include "dsan/tensor.hpp"

namespace dsan {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Time-major observed features over an I x J grid: T x N x b, non-negative.
struct GridSeries {
    int time_steps = 0;
    int rows = 0;
    int cols = 0;
    int features = 0;
    int interval_minutes = 30;
    int64_t origin_epoch_minutes = 0;
    double grid_size_meters = 1000.0;
    std::vector<double> data;  // T x N x b row-major

    int cell_count() const { return rows * cols; }
    int steps_per_day() const {
        if (interval_minutes <= 0 || 1440 % interval_minutes != 0)
            throw DataError("grid series: interval " + std::to_string(interval_minutes) +
                            " does not divide a day");
        return 1440 / interval_minutes;
    }
    int64_t time_of(int t) const {
        return origin_epoch_minutes + static_cast<int64_t>(t) * interval_minutes;
    }

    double at(int t, int n, int f) const {
        return data[(static_cast<size_t>(t) * cell_count() + n) * features + f];
    }
    double& at(int t, int n, int f) {
        return data[(static_cast<size_t>(t) * cell_count() + n) * features + f];
    }

    static GridSeries empty(int T, int I, int J, int b, int interval_minutes,
                            int64_t origin_epoch_minutes, double grid_size_meters = 1000.0) {
        GridSeries s;
        s.time_steps = T;
        s.rows = I;
        s.cols = J;
        s.features = b;
        s.interval_minutes = interval_minutes;
        s.origin_epoch_minutes = origin_epoch_minutes;
        s.grid_size_meters = grid_size_meters;
        s.data.assign(static_cast<size_t>(T) * I * J * b, 0.0);
        return s;
    }
};

// --- container file (versioned binary, bit-exact roundtrip) ---------------

namespace io {

constexpr char kGridMagic[9] = "DSANGRD1";

inline void write_i64(std::ostream& os, int64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline int64_t read_i64(std::istream& is) {
    int64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw DataError("container: truncated file");
    return v;
}
inline double read_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw DataError("container: truncated file");
    return v;
}

}  // namespace io

inline void save_grid_series(const std::string& path, const GridSeries& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path);
    os.write(io::kGridMagic, 8);
    io::write_i64(os, s.time_steps);
    io::write_i64(os, s.rows);
    io::write_i64(os, s.cols);
    io::write_i64(os, s.features);
    io::write_i64(os, s.interval_minutes);
    io::write_i64(os, s.origin_epoch_minutes);
    io::write_f64(os, s.grid_size_meters);
    os.write(reinterpret_cast<const char*>(s.data.data()),
             static_cast<std::streamsize>(s.data.size() * sizeof(double)));
    if (!os) throw DataError("short write to " + path);
}

inline GridSeries load_grid_series(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(io::kGridMagic, 8))
        throw DataError(path + ": not a grid series file");
    GridSeries s;
    s.time_steps = static_cast<int>(io::read_i64(is));
    s.rows = static_cast<int>(io::read_i64(is));
    s.cols = static_cast<int>(io::read_i64(is));
    s.features = static_cast<int>(io::read_i64(is));
    s.interval_minutes = static_cast<int>(io::read_i64(is));
    s.origin_epoch_minutes = io::read_i64(is);
    s.grid_size_meters = io::read_f64(is);
    if (s.time_steps < 0 || s.rows < 1 || s.cols < 1 || s.features < 1)
        throw DataError(path + ": malformed header");
    s.data.resize(static_cast<size_t>(s.time_steps) * s.cell_count() * s.features);
    is.read(reinterpret_cast<char*>(s.data.data()),
            static_cast<std::streamsize>(s.data.size() * sizeof(double)));
    if (!is) throw DataError(path + ": truncated payload");
    return s;
}

// --- Min-Max normalization -------------------------------------------------

// Per-feature min/max collected over the training span only. Applying maps
// into [0, 1] with out-of-range test values clamped; a constant feature maps
// to 0.
struct NormStats {
    std::vector<double> min, max;
    bool fitted = false;

    static NormStats fit(const GridSeries& s, int t_end) {
        if (t_end <= 0 || t_end > s.time_steps)
            throw DataError("normalization: fit span [0," + std::to_string(t_end) +
                            ") outside series of length " + std::to_string(s.time_steps));
        NormStats st;
        st.min.assign(static_cast<size_t>(s.features), std::numeric_limits<double>::infinity());
        st.max.assign(static_cast<size_t>(s.features), -std::numeric_limits<double>::infinity());
        for (int t = 0; t < t_end; ++t)
            for (int n = 0; n < s.cell_count(); ++n)
                for (int f = 0; f < s.features; ++f) {
                    const double v = s.at(t, n, f);
                    st.min[static_cast<size_t>(f)] = std::min(st.min[static_cast<size_t>(f)], v);
                    st.max[static_cast<size_t>(f)] = std::max(st.max[static_cast<size_t>(f)], v);
                }
        st.fitted = true;
        return st;
    }

    double span(int f) const { return max[static_cast<size_t>(f)] - min[static_cast<size_t>(f)]; }

    double apply(double v, int f) const {
        require_fitted();
        const double sp = span(f);
        if (sp <= 0.0) return 0.0;
        const double x = (v - min[static_cast<size_t>(f)]) / sp;
        return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
    }

    double invert(double v, int f) const {
        require_fitted();
        return min[static_cast<size_t>(f)] + v * span(f);
    }

    void require_fitted() const {
        if (!fitted) throw DataError("normalization: stats used before fitting");
    }
};

inline void save_norm_stats(const std::string& path, const NormStats& st) {
    st.require_fitted();
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os << "feature\tmin\tmax\n";
    os.precision(17);
    for (size_t f = 0; f < st.min.size(); ++f)
        os << f << "\t" << st.min[f] << "\t" << st.max[f] << "\n";
}

inline NormStats load_norm_stats(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read " + path);
    std::string header;
    std::getline(is, header);
    if (header != "feature\tmin\tmax") throw DataError(path + ": not a normalization file");
    NormStats st;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        int f;
        double mn, mx;
        if (!(row >> f >> mn >> mx)) throw DataError(path + ": malformed row: " + line);
        st.min.push_back(mn);
        st.max.push_back(mx);
    }
    st.fitted = !st.min.empty();
    return st;
}

// --- event aggregation ------------------------------------------------------

// Delimited text with header: timestamp,row,col,kind,value. Timestamps are
// epoch minutes; kinds map to features via the configured rules.
struct AggregateSpec {
    int rows = 0, cols = 0;
    int time_steps = 0;
    int interval_minutes = 30;
    int64_t origin_epoch_minutes = 0;
    double grid_size_meters = 1000.0;

    struct FeatureRule {
        std::string kind;       // record kind this feature accumulates
        bool accumulate_value;  // false: count records; true: sum the value field
    };
    std::vector<FeatureRule> features;  // index == feature index

    // trip ends feed feature 0 (arrivals), trip starts feature 1 (departures)
    static AggregateSpec flows(int rows, int cols, int time_steps, int interval_minutes,
                               int64_t origin) {
        AggregateSpec sp;
        sp.rows = rows;
        sp.cols = cols;
        sp.time_steps = time_steps;
        sp.interval_minutes = interval_minutes;
        sp.origin_epoch_minutes = origin;
        sp.features = {{"end", false}, {"start", false}};
        return sp;
    }
};

struct AggregateReport {
    long accepted = 0;
    long malformed = 0;
    long out_of_bounds = 0;
    long unknown_kind = 0;
    long dropped() const { return malformed + out_of_bounds + unknown_kind; }
};

inline GridSeries aggregate_events(std::istream& in, const AggregateSpec& spec,
                                   AggregateReport* report = nullptr) {
    if (spec.features.empty()) throw DataError("aggregation: no feature rules");
    AggregateReport rep;
    std::string line;
    if (!std::getline(in, line)) throw DataError("aggregation: empty input, header required");
    if (line != "timestamp,row,col,kind,value")
        throw DataError("aggregation: unexpected header: " + line);

    GridSeries out = GridSeries::empty(spec.time_steps, spec.rows, spec.cols,
                                       static_cast<int>(spec.features.size()),
                                       spec.interval_minutes, spec.origin_epoch_minutes,
                                       spec.grid_size_meters);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::array<std::string, 5> fields;
        size_t start = 0, fi = 0;
        bool ok = true;
        for (; fi < 5; ++fi) {
            const size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                if (fi != 4) ok = false;
                fields[fi] = line.substr(start);
                ++fi;
                break;
            }
            fields[fi] = line.substr(start, comma - start);
            start = comma + 1;
        }
        int64_t ts = 0;
        int row = 0, col = 0;
        double value = 0.0;
        if (ok && fi == 5) {
            try {
                size_t used = 0;
                ts = std::stoll(fields[0], &used);
                ok = ok && used == fields[0].size();
                row = std::stoi(fields[1], &used);
                ok = ok && used == fields[1].size();
                col = std::stoi(fields[2], &used);
                ok = ok && used == fields[2].size();
                value = std::stod(fields[4], &used);
                ok = ok && used == fields[4].size();
            } catch (const std::exception&) {
                ok = false;
            }
        } else {
            ok = false;
        }
        if (!ok) {
            ++rep.malformed;
            continue;
        }
        const int64_t bin64 = (ts - spec.origin_epoch_minutes) / spec.interval_minutes;
        const bool time_ok = ts >= spec.origin_epoch_minutes && bin64 < spec.time_steps;
        if (!time_ok || row < 0 || row >= spec.rows || col < 0 || col >= spec.cols) {
            ++rep.out_of_bounds;
            continue;
        }
        int feature = -1;
        for (size_t f = 0; f < spec.features.size(); ++f)
            if (spec.features[f].kind == fields[3]) {
                feature = static_cast<int>(f);
                break;
            }
        if (feature < 0) {
            ++rep.unknown_kind;
            continue;
        }
        const int bin = static_cast<int>(bin64);
        const int cell = row * spec.cols + col;
        out.at(bin, cell, feature) +=
            spec.features[static_cast<size_t>(feature)].accumulate_value ? value : 1.0;
        ++rep.accepted;
    }
    if (report) *report = rep;
    return out;
}

// --- periodic sampling -------------------------------------------------------

// Offsets of the historical slices relative to the first predicted step:
// same-time slots of previous weeks, then previous days, then the
// immediately preceding intervals, in chronological order.
inline std::vector<int> history_offsets(int weeks, int days, int recent, int steps_per_day) {
    std::vector<int> off;
    off.reserve(static_cast<size_t>(weeks + days + recent));
    for (int w = weeks; w >= 1; --w) off.push_back(-w * 7 * steps_per_day);
    for (int d = days; d >= 1; --d) off.push_back(-d * steps_per_day);
    for (int p = recent; p >= 1; --p) off.push_back(-p);
    return off;
}

struct SampleSpec {
    int weeks = 1, days = 3, recent = 1;
    int horizon = 12;  // F
    int local_radius = 3;
    int enc_dim = 64;
    bool relative_spe = true;
    int num_externals = 4;

    int hist_steps() const { return weeks + days + recent; }
};

// Shared spatial-encoding tables; relative-scheme local and decoder tables
// are center-independent so one entry serves every cell.
struct SpeCache {
    std::unordered_map<int, Tensor> global, local, dec;
};

inline bool sample_feasible(const GridSeries& s, const SampleSpec& sp, int t1) {
    const int a = s.steps_per_day();
    return t1 - sp.weeks * 7 * a >= 0 && t1 + sp.horizon - 1 < s.time_steps;
}

inline SampleBatch build_sample(const GridSeries& series, const NormStats& stats, int t1,
                                int cell, const SampleSpec& sp, SpeCache* cache = nullptr) {
    stats.require_fitted();
    const int a = series.steps_per_day();
    if (!sample_feasible(series, sp, t1))
        throw DataError("sample at t1=" + std::to_string(t1) +
                        " lacks history or future in series of length " +
                        std::to_string(series.time_steps));
    const int h = sp.hist_steps(), n = series.cell_count(), b = series.features;
    const int F = sp.horizon, d = sp.enc_dim;
    const int row = cell / series.cols, col = cell % series.cols;
    const std::vector<int> offsets = history_offsets(sp.weeks, sp.days, sp.recent, a);

    SampleBatch out;
    out.t1 = t1;
    out.cell = cell;
    out.coord = {row, col};
    out.norm_min = stats.min;
    out.norm_span.resize(static_cast<size_t>(b));
    for (int f = 0; f < b; ++f) out.norm_span[static_cast<size_t>(f)] = stats.span(f);

    // raw then normalized global input
    std::vector<double> raw(static_cast<size_t>(h) * n * b);
    std::vector<double> norm(static_cast<size_t>(h) * n * b);
    for (int i = 0; i < h; ++i) {
        const int t = t1 + offsets[static_cast<size_t>(i)];
        for (int g = 0; g < n; ++g)
            for (int f = 0; f < b; ++f) {
                const double v = series.at(t, g, f);
                raw[(static_cast<size_t>(i) * n + g) * b + f] = v;
                norm[(static_cast<size_t>(i) * n + g) * b + f] = stats.apply(v, f);
            }
    }
    Tensor raw_global = Tensor::from({h, n, b}, std::move(raw));
    out.x_global = Tensor::from({h, n, b}, std::move(norm));
    Tensor raw_local = extract_local_block(raw_global, row, col, sp.local_radius, series.rows,
                                           series.cols);
    out.x_local = extract_local_block(out.x_global, row, col, sp.local_radius, series.rows,
                                      series.cols);
    out.masks.global = threshold_mask(raw_global);
    out.masks.local = threshold_mask(raw_local);

    // decoder input: latest historical feature of the target, then shifted
    // ground truth; targets are the next F steps
    std::vector<double> dec(static_cast<size_t>(F) * b), tgt(static_cast<size_t>(F) * b);
    out.dec_raw_sums.assign(static_cast<size_t>(F), 0.0);
    for (int f = 0; f < b; ++f) {
        const double seed_raw = series.at(t1 - 1, cell, f);
        dec[static_cast<size_t>(f)] = stats.apply(seed_raw, f);
        out.dec_raw_sums[0] += seed_raw;
    }
    for (int j = 0; j < F; ++j)
        for (int f = 0; f < b; ++f) {
            const double truth_raw = series.at(t1 + j, cell, f);
            tgt[(static_cast<size_t>(j)) * b + f] = stats.apply(truth_raw, f);
            if (j + 1 < F) {
                dec[(static_cast<size_t>(j) + 1) * b + f] = stats.apply(truth_raw, f);
                out.dec_raw_sums[static_cast<size_t>(j) + 1] += truth_raw;
            }
        }
    out.dec_teacher = Tensor::from({1, F, b}, std::move(dec));
    out.targets = Tensor::from({F, b}, std::move(tgt));
    out.masks.decoder = lookahead_threshold_mask_from_sums(out.dec_raw_sums);

    // calendar vectors; external feature slots are zero in this pipeline,
    // and future positions carry calendar only
    const std::vector<double> ext_zero(static_cast<size_t>(sp.num_externals), 0.0);
    const int e = 7 + a + sp.num_externals;
    std::vector<double> rh(static_cast<size_t>(h) * e), rd(static_cast<size_t>(F) * e);
    for (int i = 0; i < h; ++i) {
        const int t = t1 + offsets[static_cast<size_t>(i)];
        auto v = external_vector_at(series.time_of(t), a, ext_zero);
        std::copy(v.begin(), v.end(), rh.begin() + static_cast<size_t>(i) * e);
    }
    for (int j = 0; j < F; ++j) {
        // decoder position j holds the features of step t1 + j - 1
        auto v = external_vector_at(series.time_of(t1 + j - 1), a, ext_zero);
        std::copy(v.begin(), v.end(), rd.begin() + static_cast<size_t>(j) * e);
    }
    out.r_hist = Tensor::from({h, e}, std::move(rh));
    out.r_dec = Tensor::from({F, e}, std::move(rd));

    // spatial tables, shared through the cache where possible
    const CoordScheme scheme = sp.relative_spe ? CoordScheme::kRelative : CoordScheme::kAbsolute;
    const int gkey = sp.relative_spe ? cell : -1;
    const int lkey = sp.relative_spe ? -1 : cell;
    auto lookup = [&](std::unordered_map<int, Tensor>* m, int key,
                      auto&& make) -> Tensor {
        if (!m) return make();
        auto it = m->find(key);
        if (it != m->end()) return it->second;
        Tensor t = make();
        m->emplace(key, t);
        return t;
    };
    out.spe_global = lookup(cache ? &cache->global : nullptr, gkey, [&] {
        return spatial_encoding(sp.relative_spe
                                    ? CoordinateMatrix::relative_grid(series.rows, series.cols,
                                                                      row, col)
                                    : CoordinateMatrix::absolute_grid(series.rows, series.cols),
                                d);
    });
    out.spe_local = lookup(cache ? &cache->local : nullptr, lkey, [&] {
        return spatial_encoding(CoordinateMatrix::local_block(row, col, sp.local_radius, scheme),
                                d);
    });
    out.spe_dec = lookup(cache ? &cache->dec : nullptr, lkey, [&] {
        return spatial_encoding(CoordinateMatrix::single(row, col, scheme), d);
    });
    return out;
}

struct SampleSkips {
    long no_history = 0;
    long no_future = 0;
};

// All samples with t1 in [t1_begin, t1_end), ordered by t1 then cell index.
inline std::vector<SampleBatch> build_samples(const GridSeries& series, const NormStats& stats,
                                              const SampleSpec& sp, int t1_begin, int t1_end,
                                              SampleSkips* skips = nullptr,
                                              SpeCache* cache = nullptr) {
    const int a = series.steps_per_day();
    std::vector<SampleBatch> out;
    SampleSkips sk;
    SpeCache local_cache;
    if (!cache) cache = &local_cache;
    for (int t1 = t1_begin; t1 < t1_end; ++t1) {
        if (t1 - sp.weeks * 7 * a < 0) {
            ++sk.no_history;
            continue;
        }
        if (t1 + sp.horizon - 1 >= series.time_steps) {
            ++sk.no_future;
            continue;
        }
        for (int cell = 0; cell < series.cell_count(); ++cell)
            out.push_back(build_sample(series, stats, t1, cell, sp, cache));
    }
    if (skips) *skips = sk;
    return out;
}

// --- synthetic corpus ---------------------------------------------------------

// Gaussian bumps drifting on a daily-periodic circle with daily-periodic
// amplitudes plus optional non-negative noise. With zero noise the series is
// an exact function of the step-of-day, and the per-step mass of feature f is
//   sum_k amplitude/bumps * (0.15 + 0.85 * (0.5 * (1 + sin(2*pi*tau/a + phase(k,f)))))
// with phase(k,f) = 2*pi*k/bumps + (pi/2)*f, which the acceptance oracle
// recomputes analytically.
constexpr double kPi = 3.14159265358979323846;

struct SynthSpec {
    int rows = 5, cols = 5;
    int days = 9;
    int steps_per_day = 24;
    int features = 2;
    int bumps = 2;
    double amplitude = 100.0;  // total bump mass at profile peak
    double sigma = 1.0;
    double drift_radius = 0.5;
    double noise = 0.0;
    int64_t origin_epoch_minutes = 4 * 1440;  // a Monday
};

inline double synth_profile(const SynthSpec& sp, int t, int bump, int feature) {
    const double tau = static_cast<double>(t % sp.steps_per_day) / sp.steps_per_day;
    const double phase = 2.0 * kPi * bump / sp.bumps + (kPi / 2.0) * feature;
    return 0.15 + 0.85 * 0.5 * (1.0 + std::sin(2.0 * kPi * tau + phase));
}

inline GridSeries synth_generate(uint64_t seed, const SynthSpec& sp) {
    if (1440 % sp.steps_per_day != 0)
        throw DataError("synthetic: steps per day must divide 1440");
    const int T = sp.days * sp.steps_per_day;
    GridSeries out = GridSeries::empty(T, sp.rows, sp.cols, sp.features,
                                       1440 / sp.steps_per_day, sp.origin_epoch_minutes,
                                       1000.0);
    std::mt19937_64 rng(seed);

    // bump anchors kept a margin away from the borders so the discretized
    // mass stays close to the analytic value
    const double margin = sp.drift_radius + 3.0 * sp.sigma;
    auto anchor = [&](int extent) {
        const double lo = margin, hi = static_cast<double>(extent - 1) - margin;
        if (hi <= lo) return static_cast<double>(extent - 1) / 2.0;
        return uniform(rng, lo, hi);
    };
    std::vector<std::array<double, 2>> bases(static_cast<size_t>(sp.bumps));
    for (auto& base : bases) base = {anchor(sp.rows), anchor(sp.cols)};

    const double norm = 1.0 / (2.0 * kPi * sp.sigma * sp.sigma);
    for (int t = 0; t < T; ++t) {
        const double tau = static_cast<double>(t % sp.steps_per_day) / sp.steps_per_day;
        for (int k = 0; k < sp.bumps; ++k) {
            const double theta = 2.0 * kPi * tau + k;
            const double cr = bases[static_cast<size_t>(k)][0] + sp.drift_radius * std::sin(theta);
            const double cc = bases[static_cast<size_t>(k)][1] + sp.drift_radius * std::cos(theta);
            for (int f = 0; f < sp.features; ++f) {
                const double amp = sp.amplitude / sp.bumps * synth_profile(sp, t, k, f);
                for (int r = 0; r < sp.rows; ++r)
                    for (int c = 0; c < sp.cols; ++c) {
                        const double dr = r - cr, dc = c - cc;
                        out.at(t, r * sp.cols + c, f) +=
                            amp * norm * std::exp(-(dr * dr + dc * dc) / (2.0 * sp.sigma * sp.sigma));
                    }
            }
        }
        if (sp.noise > 0.0)
            for (int n = 0; n < out.cell_count(); ++n)
                for (int f = 0; f < sp.features; ++f)
                    out.at(t, n, f) += sp.noise * uniform01(rng);
    }
    return out;
}

}  // namespace dsan
