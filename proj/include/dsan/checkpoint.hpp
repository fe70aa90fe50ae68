#pragma once

// Versioned binary checkpoint: model config, normalization stats, and the
// named parameter tensors. Raw doubles, so a write->read roundtrip is
// bit-exact.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsan/datapipe.hpp"
#include "dsan/model.hpp"

namespace dsan {

// The periodic-sampling layout a model was trained with; evaluation needs
// it to rebuild samples with the same historical offsets.
struct SamplingParams {
    int weeks = 1;
    int days = 3;
    int recent = 1;
    int hist_steps() const { return weeks + days + recent; }
};

struct Checkpoint {
    ModelConfig config;
    SamplingParams sampling;
    NormStats stats;
    std::vector<std::pair<std::string, std::vector<double>>> params;

    SampleSpec sample_spec() const {
        SampleSpec sp;
        sp.weeks = sampling.weeks;
        sp.days = sampling.days;
        sp.recent = sampling.recent;
        sp.horizon = config.future_steps;
        sp.local_radius = config.local_radius;
        sp.enc_dim = config.model_dim;
        sp.relative_spe = config.relative_spe;
        sp.num_externals = config.num_externals;
        return sp;
    }
};

namespace io {

constexpr char kCheckpointMagic[9] = "DSANCKP1";

inline void write_string(std::ostream& os, const std::string& s) {
    write_i64(os, static_cast<int64_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const int64_t n = read_i64(is);
    if (n < 0 || n > 1 << 20) throw DataError("checkpoint: bad string length");
    std::string s(static_cast<size_t>(n), '\0');
    is.read(s.data(), n);
    if (!is) throw DataError("checkpoint: truncated string");
    return s;
}

inline void write_f64s(std::ostream& os, const std::vector<double>& v) {
    write_i64(os, static_cast<int64_t>(v.size()));
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_f64s(std::istream& is) {
    const int64_t n = read_i64(is);
    if (n < 0) throw DataError("checkpoint: bad array length");
    std::vector<double> v(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!is) throw DataError("checkpoint: truncated array");
    return v;
}

}  // namespace io

inline void save_checkpoint(const std::string& path, const DsanModel& model,
                            const SamplingParams& sampling, const NormStats& stats) {
    stats.require_fitted();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path);
    os.write(io::kCheckpointMagic, 8);
    const ModelConfig& c = model.config();
    for (int64_t v : {static_cast<int64_t>(c.layers), static_cast<int64_t>(c.model_dim),
                      static_cast<int64_t>(c.ffn_dim), static_cast<int64_t>(c.heads),
                      static_cast<int64_t>(c.proj_layers), static_cast<int64_t>(c.local_radius),
                      static_cast<int64_t>(c.hist_steps), static_cast<int64_t>(c.future_steps),
                      static_cast<int64_t>(c.features), static_cast<int64_t>(c.grid_rows),
                      static_cast<int64_t>(c.grid_cols), static_cast<int64_t>(c.steps_per_day),
                      static_cast<int64_t>(c.num_externals),
                      static_cast<int64_t>(c.relative_spe ? 1 : 0),
                      static_cast<int64_t>(sampling.weeks), static_cast<int64_t>(sampling.days),
                      static_cast<int64_t>(sampling.recent)})
        io::write_i64(os, v);
    io::write_f64(os, c.dropout_rate);
    io::write_f64s(os, c.joint_weights);
    io::write_f64s(os, stats.min);
    io::write_f64s(os, stats.max);
    const auto& params = model.parameters();
    io::write_i64(os, static_cast<int64_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        io::write_string(os, name);
        io::write_f64s(os, tensor.data());
    }
    if (!os) throw DataError("short write to " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(io::kCheckpointMagic, 8))
        throw DataError(path + ": not a checkpoint file");
    Checkpoint ck;
    ModelConfig& c = ck.config;
    c.layers = static_cast<int>(io::read_i64(is));
    c.model_dim = static_cast<int>(io::read_i64(is));
    c.ffn_dim = static_cast<int>(io::read_i64(is));
    c.heads = static_cast<int>(io::read_i64(is));
    c.proj_layers = static_cast<int>(io::read_i64(is));
    c.local_radius = static_cast<int>(io::read_i64(is));
    c.hist_steps = static_cast<int>(io::read_i64(is));
    c.future_steps = static_cast<int>(io::read_i64(is));
    c.features = static_cast<int>(io::read_i64(is));
    c.grid_rows = static_cast<int>(io::read_i64(is));
    c.grid_cols = static_cast<int>(io::read_i64(is));
    c.steps_per_day = static_cast<int>(io::read_i64(is));
    c.num_externals = static_cast<int>(io::read_i64(is));
    c.relative_spe = io::read_i64(is) != 0;
    ck.sampling.weeks = static_cast<int>(io::read_i64(is));
    ck.sampling.days = static_cast<int>(io::read_i64(is));
    ck.sampling.recent = static_cast<int>(io::read_i64(is));
    c.dropout_rate = io::read_f64(is);
    c.joint_weights = io::read_f64s(is);
    ck.stats.min = io::read_f64s(is);
    ck.stats.max = io::read_f64s(is);
    ck.stats.fitted = true;
    const int64_t count = io::read_i64(is);
    if (count < 0) throw DataError(path + ": malformed parameter table");
    for (int64_t i = 0; i < count; ++i) {
        std::string name = io::read_string(is);
        ck.params.emplace_back(std::move(name), io::read_f64s(is));
    }
    return ck;
}

inline DsanModel load_model(const Checkpoint& ck) {
    DsanModel model(ck.config, 0);
    model.load_parameters(ck.params);
    return model;
}

}  // namespace dsan
