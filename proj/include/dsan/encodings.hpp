#pragma once

// Spatial positional encodings (sinusoidal over grid coordinates), learned
// temporal positional encodings over calendar/external vectors, and their
// broadcast sum.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsan/random.hpp"
#include "dsan/tensor.hpp"

namespace dsan {

enum class CoordScheme { kAbsolute, kRelative };

// Integer (row, col) pairs for every position of a grid or local window.
// Under the relative scheme entries are signed offsets from the target
// coordinate, so the target itself maps to (0, 0).
struct CoordinateMatrix {
    int rows = 0;
    int cols = 0;
    CoordScheme scheme = CoordScheme::kRelative;
    std::array<int, 2> center = {0, 0};
    std::vector<std::array<int, 2>> entries;  // row-major

    int count() const { return rows * cols; }

    static CoordinateMatrix absolute_grid(int I, int J) {
        CoordinateMatrix m;
        m.rows = I;
        m.cols = J;
        m.scheme = CoordScheme::kAbsolute;
        m.entries.reserve(static_cast<size_t>(I) * J);
        for (int r = 0; r < I; ++r)
            for (int c = 0; c < J; ++c) m.entries.push_back({r, c});
        return m;
    }

    static CoordinateMatrix relative_grid(int I, int J, int center_row, int center_col) {
        CoordinateMatrix m = absolute_grid(I, J);
        m.scheme = CoordScheme::kRelative;
        m.center = {center_row, center_col};
        for (auto& e : m.entries) {
            e[0] -= center_row;
            e[1] -= center_col;
        }
        return m;
    }

    // Local window of side 2*radius+1 around the center. Relative entries
    // are the window offsets themselves and never depend on the center;
    // absolute entries are the true (possibly out-of-grid) coordinates.
    static CoordinateMatrix local_block(int center_row, int center_col, int radius,
                                        CoordScheme scheme) {
        CoordinateMatrix m;
        const int side = 2 * radius + 1;
        m.rows = side;
        m.cols = side;
        m.scheme = scheme;
        m.center = {center_row, center_col};
        m.entries.reserve(static_cast<size_t>(side) * side);
        for (int dr = -radius; dr <= radius; ++dr)
            for (int dc = -radius; dc <= radius; ++dc) {
                if (scheme == CoordScheme::kRelative)
                    m.entries.push_back({dr, dc});
                else
                    m.entries.push_back({center_row + dr, center_col + dc});
            }
        return m;
    }

    static CoordinateMatrix single(int row, int col, CoordScheme scheme) {
        CoordinateMatrix m;
        m.rows = 1;
        m.cols = 1;
        m.scheme = scheme;
        m.center = {row, col};
        if (scheme == CoordScheme::kRelative)
            m.entries.push_back({0, 0});
        else
            m.entries.push_back({row, col});
        return m;
    }
};

// Sinusoidal encoding of a coordinate matrix: even dimensions read the row,
// odd dimensions read the column, each at its own frequency. Deterministic,
// so callers may precompute and share the result.
inline Tensor spatial_encoding(const CoordinateMatrix& coords, int d) {
    if (d % 2 != 0)
        throw std::invalid_argument("spatial_encoding: dimension must be even, got " +
                                    std::to_string(d));
    const int n = coords.count();
    std::vector<double> out(static_cast<size_t>(n) * d);
    for (int p = 0; p < n; ++p) {
        const double r = static_cast<double>(coords.entries[static_cast<size_t>(p)][0]);
        const double c = static_cast<double>(coords.entries[static_cast<size_t>(p)][1]);
        for (int l = 0; l < d; ++l) {
            const double freq = std::pow(10000.0, 2.0 * l / d);
            out[static_cast<size_t>(p) * d + l] =
                (l % 2 == 0) ? std::sin(r / freq) : std::cos(c / freq);
        }
    }
    return Tensor::from({1, n, d}, std::move(out));
}

// One-hot day-of-week (7) + one-hot step-of-day (a) + external features.
inline std::vector<double> make_external_vector(int day_of_week, int step_of_day, int steps_per_day,
                                                const std::vector<double>& externals) {
    if (day_of_week < 0 || day_of_week >= 7)
        throw std::invalid_argument("external vector: day-of-week " + std::to_string(day_of_week) +
                                    " out of range");
    if (step_of_day < 0 || step_of_day >= steps_per_day)
        throw std::invalid_argument("external vector: step-of-day " + std::to_string(step_of_day) +
                                    " out of range for " + std::to_string(steps_per_day) +
                                    " steps per day");
    std::vector<double> v(static_cast<size_t>(7 + steps_per_day) + externals.size(), 0.0);
    v[static_cast<size_t>(day_of_week)] = 1.0;
    v[static_cast<size_t>(7 + step_of_day)] = 1.0;
    for (size_t i = 0; i < externals.size(); ++i) v[static_cast<size_t>(7 + steps_per_day) + i] = externals[i];
    return v;
}

// Calendar decomposition of an epoch-minute timestamp (Monday == 0; the Unix
// epoch fell on a Thursday).
inline int day_of_week(int64_t epoch_minutes) {
    int64_t days = epoch_minutes / 1440;
    if (epoch_minutes % 1440 < 0) --days;
    return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

inline std::vector<double> external_vector_at(int64_t epoch_minutes, int steps_per_day,
                                              const std::vector<double>& externals) {
    if (1440 % steps_per_day != 0)
        throw std::invalid_argument("external vector: steps per day must divide 1440");
    int64_t in_day = epoch_minutes % 1440;
    if (in_day < 0) in_day += 1440;
    const int step = static_cast<int>(in_day / (1440 / steps_per_day));
    return make_external_vector(day_of_week(epoch_minutes), step, steps_per_day, externals);
}

// Two-layer network mapping external vectors to d-dimensional temporal
// encodings in (0, 1).
struct TemporalEncodingParams {
    Tensor w1, b1, w2, b2;
    int input_len = 0;
    int dim = 0;

    static TemporalEncodingParams init(int input_len, int d, std::mt19937_64& rng) {
        TemporalEncodingParams p;
        p.input_len = input_len;
        p.dim = d;
        p.w1 = init_weight({input_len, d}, input_len, rng);
        p.b1 = Tensor::zeros({d}, true);
        p.w2 = init_weight({d, d}, d, rng);
        p.b2 = Tensor::zeros({d}, true);
        return p;
    }

    // uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
    static Tensor init_weight(const Shape& s, int fan_in, std::mt19937_64& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> data(static_cast<size_t>(shape_numel(s)));
        for (auto& v : data) v = uniform(rng, -bound, bound);
        return Tensor::from(s, std::move(data), true);
    }
};

// r: steps x input_len -> steps x 1 x dim
inline Tensor temporal_encoding(const Tensor& r, const TemporalEncodingParams& p) {
    if (r.rank() != 2 || r.shape()[1] != p.input_len)
        throw ShapeError("temporal_encoding: expected (steps," + std::to_string(p.input_len) +
                         "), got " + shape_str(r.shape()));
    Tensor hidden = relu(add(matmul(r, p.w1), p.b1));
    Tensor out = sigmoid(add(matmul(hidden, p.w2), p.b2));
    return reshape(out, {r.shape()[0], 1, p.dim});
}

// Broadcast sum of a spatial table (1 x N x d) and a temporal table
// (steps x 1 x d) into steps x N x d.
inline Tensor stpe(const Tensor& spe, const Tensor& tpe) { return add(spe, tpe); }

}  // namespace dsan
