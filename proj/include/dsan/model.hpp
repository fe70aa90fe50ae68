#pragma once

// End-to-end model: projected inputs plus positional encodings feed a
// dual encoder (global self-attention, then local cross-attention
// extraction) and a switch-attention decoder (per-subspace decoding, then
// cross-subspace fusion via axis switches), closed by a sigmoid head.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsan/attention.hpp"
#include "dsan/encodings.hpp"
#include "dsan/random.hpp"
#include "dsan/tensor.hpp"

namespace dsan {

struct ModelConfig {
    int layers = 3;         // encoder/decoder stack depth
    int model_dim = 64;     // d
    int ffn_dim = 256;      // feed-forward hidden width
    int heads = 8;          // attention heads per MSA
    int proj_layers = 3;    // input projection depth
    int local_radius = 3;   // local block radius
    double dropout_rate = 0.1;
    int hist_steps = 5;     // historical time steps h
    int future_steps = 12;  // prediction horizon F
    int features = 2;       // features per grid b
    int grid_rows = 16;
    int grid_cols = 12;
    int steps_per_day = 48;
    int num_externals = 4;  // external feature slots in the calendar vector
    bool relative_spe = true;
    std::vector<double> joint_weights;  // per-horizon loss weights, size F

    int grid_count() const { return grid_rows * grid_cols; }
    int local_side() const { return 2 * local_radius + 1; }
    int local_count() const { return local_side() * local_side(); }
    int external_len() const { return 7 + steps_per_day + num_externals; }

    // Every violated invariant, empty when valid.
    std::vector<std::string> validate() const {
        std::vector<std::string> err;
        if (layers < 1) err.push_back("layers must be >= 1");
        if (model_dim < 2 || model_dim % 2 != 0)
            err.push_back("model_dim must be even and >= 2 (spatial encoding pairs row/col dims)");
        if (heads < 1 || model_dim % heads != 0)
            err.push_back("model_dim " + std::to_string(model_dim) +
                          " must be divisible by heads " + std::to_string(heads));
        if (ffn_dim < 1) err.push_back("ffn_dim must be >= 1");
        if (proj_layers < 1) err.push_back("proj_layers must be >= 1");
        if (local_radius < 0) err.push_back("local_radius must be >= 0");
        if (grid_rows < 1 || grid_cols < 1) err.push_back("grid dimensions must be >= 1");
        if (local_count() > grid_count())
            err.push_back("local block " + std::to_string(local_count()) +
                          " exceeds grid size " + std::to_string(grid_count()));
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            err.push_back("dropout_rate must be in [0, 1)");
        if (hist_steps < 1) err.push_back("hist_steps must be >= 1");
        if (future_steps < 1) err.push_back("future_steps must be >= 1");
        if (features < 1) err.push_back("features must be >= 1");
        if (steps_per_day < 1 || 1440 % steps_per_day != 0)
            err.push_back("steps_per_day must divide 1440");
        if (num_externals < 0) err.push_back("num_externals must be >= 0");
        if (static_cast<int>(joint_weights.size()) != future_steps)
            err.push_back("joint_weights must have one entry per future step");
        double wsum = 0.0;
        for (double w : joint_weights) {
            if (w < 0.0) err.push_back("joint_weights must be non-negative");
            wsum += w;
        }
        if (!joint_weights.empty() && wsum <= 0.0)
            err.push_back("joint_weights must have a positive sum");
        return err;
    }

    void require_valid() const {
        auto err = validate();
        if (!err.empty()) {
            std::ostringstream os;
            os << "invalid model config:";
            for (const auto& e : err) os << "\n  - " << e;
            throw std::invalid_argument(os.str());
        }
    }

    static std::vector<double> uniform_weights(int F) {
        return std::vector<double>(static_cast<size_t>(F), 1.0 / F);
    }
    // Place `first` of the weight mass on step 1 and spread the rest evenly.
    static std::vector<double> front_loaded_weights(int F, double first) {
        std::vector<double> w(static_cast<size_t>(F), F > 1 ? (1.0 - first) / (F - 1) : 0.0);
        w[0] = first;
        return w;
    }
};

// One training instance. Tensors are normalized model inputs; masks are
// derived from the raw (pre-normalization) values and cached here for the
// sample's lifetime.
struct SampleBatch {
    int t1 = 0;            // first predicted time step
    int cell = 0;          // target grid flat index
    std::array<int, 2> coord = {0, 0};

    Tensor x_global;       // h x N x b
    Tensor x_local;        // h x N_D x b
    Tensor dec_teacher;    // 1 x F x b: latest history then shifted truth
    Tensor targets;        // F x b
    Tensor r_hist;         // h x external_len
    Tensor r_dec;          // F x external_len (calendar of decoder positions)

    MaskSet masks;

    Tensor spe_global;     // 1 x N x d
    Tensor spe_local;      // 1 x N_D x d
    Tensor spe_dec;        // 1 x 1 x d

    // Raw feature sums at each decoder position, for the decoder threshold
    // mask during autoregressive growth.
    std::vector<double> dec_raw_sums;
    // Per-feature normalization (raw = min + value * span) so predictions
    // can be thresholded in raw units without the data pipeline.
    std::vector<double> norm_min, norm_span;

    double raw_sum_of(const std::vector<double>& normalized_row) const {
        double s = 0.0;
        for (size_t j = 0; j < normalized_row.size(); ++j)
            s += norm_min[j] + normalized_row[j] * norm_span[j];
        return s;
    }
};

// Test/verification hook: additive perturbation of one projected+encoded
// global input row [time_step, grid, :].
struct ForwardHooks {
    int time_step = -1;
    int grid = -1;
    std::vector<double> delta;
    bool active() const { return time_step >= 0 && grid >= 0 && !delta.empty(); }
};

struct ForwardCtx {
    bool train = false;
    std::mt19937_64* rng = nullptr;
};

namespace layers {

inline Tensor init_weight(const Shape& s, int fan_in, std::mt19937_64& rng) {
    return TemporalEncodingParams::init_weight(s, fan_in, rng);
}

// Per-position fully connected stack: ReLU between layers, linear output.
struct Fcn {
    std::vector<Tensor> w, b;

    static Fcn init(int in_dim, int out_dim, int depth, std::mt19937_64& rng) {
        Fcn f;
        for (int l = 0; l < depth; ++l) {
            const int din = l == 0 ? in_dim : out_dim;
            f.w.push_back(init_weight({din, out_dim}, din, rng));
            f.b.push_back(Tensor::zeros({out_dim}, true));
        }
        return f;
    }

    Tensor forward(const Tensor& x) const {
        Tensor cur = x;
        for (size_t l = 0; l < w.size(); ++l) {
            cur = add(matmul(cur, w[l]), b[l]);
            if (l + 1 < w.size()) cur = relu(cur);
        }
        return cur;
    }

    void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        for (size_t l = 0; l < w.size(); ++l) {
            out.emplace_back(prefix + "." + std::to_string(l) + ".w", w[l]);
            out.emplace_back(prefix + "." + std::to_string(l) + ".b", b[l]);
        }
    }
};

struct Ffn {
    Tensor w1, b1, w2, b2;

    static Ffn init(int d, int d_f, std::mt19937_64& rng) {
        Ffn f;
        f.w1 = init_weight({d, d_f}, d, rng);
        f.b1 = Tensor::zeros({d_f}, true);
        f.w2 = init_weight({d_f, d}, d_f, rng);
        f.b2 = Tensor::zeros({d}, true);
        return f;
    }

    Tensor forward(const Tensor& x) const {
        return add(matmul(relu(add(matmul(x, w1), b1)), w2), b2);
    }

    void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w1", w1);
        out.emplace_back(prefix + ".b1", b1);
        out.emplace_back(prefix + ".w2", w2);
        out.emplace_back(prefix + ".b2", b2);
    }
};

struct LayerNorm {
    Tensor gain, bias;

    static LayerNorm init(int d) {
        LayerNorm n;
        n.gain = Tensor::filled({d}, 1.0, true);
        n.bias = Tensor::zeros({d}, true);
        return n;
    }

    Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

    void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".gain", gain);
        out.emplace_back(prefix + ".bias", bias);
    }
};

// Post-norm residual wrapper shared by every attention/FFN sublayer.
inline Tensor sublayer(const Tensor& x, const Tensor& fx, const LayerNorm& ln, double rate,
                       const ForwardCtx& ctx) {
    return ln.forward(add(x, dropout(fx, rate, ctx.train, ctx.rng)));
}

// Global encoder layer: masked self-attention then FFN.
struct EncG {
    MsaParams self;
    Ffn ffn;
    LayerNorm ln1, ln2;

    static EncG init(const ModelConfig& c, std::mt19937_64& rng) {
        EncG l;
        l.self = MsaParams::init(c.model_dim, c.heads, rng);
        l.ffn = Ffn::init(c.model_dim, c.ffn_dim, rng);
        l.ln1 = LayerNorm::init(c.model_dim);
        l.ln2 = LayerNorm::init(c.model_dim);
        return l;
    }

    Tensor forward(const Tensor& h, const Tensor& m_global, double rate,
                   const ForwardCtx& ctx) const {
        Tensor p = sublayer(h, msa(h, h, h, m_global, self), ln1, rate, ctx);
        return sublayer(p, ffn.forward(p), ln2, rate, ctx);
    }

    void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        self.collect(out, prefix + ".self");
        ffn.collect(out, prefix + ".ffn");
        ln1.collect(out, prefix + ".ln1");
        ln2.collect(out, prefix + ".ln2");
    }
};

// Local encoder layer: self-attention over the local block, then
// cross-attention that extracts from the final global representation.
struct EncD {
    MsaParams self, cross;
    Ffn ffn;
    LayerNorm ln1, ln2, ln3;

    static EncD init(const ModelConfig& c, std::mt19937_64& rng) {
        EncD l;
        l.self = MsaParams::init(c.model_dim, c.heads, rng);
        l.cross = MsaParams::init(c.model_dim, c.heads, rng);
        l.ffn = Ffn::init(c.model_dim, c.ffn_dim, rng);
        l.ln1 = LayerNorm::init(c.model_dim);
        l.ln2 = LayerNorm::init(c.model_dim);
        l.ln3 = LayerNorm::init(c.model_dim);
        return l;
    }

    Tensor forward(const Tensor& hd, const Tensor& hg, const Tensor& m_local,
                   const Tensor& m_global, double rate, const ForwardCtx& ctx) const {
        Tensor p = sublayer(hd, msa(hd, hd, hd, m_local, self), ln1, rate, ctx);
        Tensor c = sublayer(p, msa(p, hg, hg, m_global, cross), ln2, rate, ctx);
        return sublayer(c, ffn.forward(c), ln3, rate, ctx);
    }

    void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        self.collect(out, prefix + ".self");
        cross.collect(out, prefix + ".cross");
        ffn.collect(out, prefix + ".ffn");
        ln1.collect(out, prefix + ".ln1");
        ln2.collect(out, prefix + ".ln2");
        ln3.collect(out, prefix + ".ln3");
    }
};

// Per-subspace decoder layer: causal self-attention, then unmasked
// cross-attention into the extracted local representation.
struct DecS {
    MsaParams self, cross;
    Ffn ffn;
    LayerNorm ln1, ln2, ln3;

    static DecS init(const ModelConfig& c, std::mt19937_64& rng) {
        DecS l;
        l.self = MsaParams::init(c.model_dim, c.heads, rng);
        l.cross = MsaParams::init(c.model_dim, c.heads, rng);
        l.ffn = Ffn::init(c.model_dim, c.ffn_dim, rng);
        l.ln1 = LayerNorm::init(c.model_dim);
        l.ln2 = LayerNorm::init(c.model_dim);
        l.ln3 = LayerNorm::init(c.model_dim);
        return l;
    }

    Tensor forward(const Tensor& hs, const Tensor& hd, const Tensor& m_dec, double rate,
                   const ForwardCtx& ctx) const {
        Tensor p = sublayer(hs, msa(hs, hs, hs, m_dec, self), ln1, rate, ctx);
        Tensor c = sublayer(p, msa(p, hd, hd, Tensor(), cross), ln2, rate, ctx);
        return sublayer(c, ffn.forward(c), ln3, rate, ctx);
    }

    void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        self.collect(out, prefix + ".self");
        cross.collect(out, prefix + ".cross");
        ffn.collect(out, prefix + ".ffn");
        ln1.collect(out, prefix + ".ln1");
        ln2.collect(out, prefix + ".ln2");
        ln3.collect(out, prefix + ".ln3");
    }
};

// Cross-subspace decoder layer. The switching gates transpose the query
// stream into the per-future-step layout, attend across the subspace
// outputs of the previous decoder, and transpose back.
struct DecT {
    MsaParams self, cross;
    Ffn ffn;
    LayerNorm ln1, ln2, ln3;

    static DecT init(const ModelConfig& c, std::mt19937_64& rng) {
        DecT l;
        l.self = MsaParams::init(c.model_dim, c.heads, rng);
        l.cross = MsaParams::init(c.model_dim, c.heads, rng);
        l.ffn = Ffn::init(c.model_dim, c.ffn_dim, rng);
        l.ln1 = LayerNorm::init(c.model_dim);
        l.ln2 = LayerNorm::init(c.model_dim);
        l.ln3 = LayerNorm::init(c.model_dim);
        return l;
    }

    Tensor forward(const Tensor& ht, const Tensor& hs_switched, const Tensor& m_dec, double rate,
                   const ForwardCtx& ctx) const {
        Tensor p = sublayer(ht, msa(ht, ht, ht, m_dec, self), ln1, rate, ctx);
        Tensor fused = subspace_switch(
            msa(subspace_switch(p), hs_switched, hs_switched, Tensor(), cross));
        Tensor c = sublayer(p, fused, ln2, rate, ctx);
        return sublayer(c, ffn.forward(c), ln3, rate, ctx);
    }

    void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        self.collect(out, prefix + ".self");
        cross.collect(out, prefix + ".cross");
        ffn.collect(out, prefix + ".ffn");
        ln1.collect(out, prefix + ".ln1");
        ln2.collect(out, prefix + ".ln2");
        ln3.collect(out, prefix + ".ln3");
    }
};

}  // namespace layers

// Zero-padded local window: rows/cols within `radius` of the coordinate,
// out-of-grid cells filled with zeros.
inline Tensor extract_local_block(const Tensor& x, int row, int col, int radius, int grid_rows,
                                  int grid_cols) {
    if (x.rank() != 3 || x.shape()[1] != grid_rows * grid_cols)
        throw ShapeError("extract_local_block: expected (steps," +
                         std::to_string(grid_rows * grid_cols) + ",b), got " +
                         shape_str(x.shape()));
    if (row < 0 || row >= grid_rows || col < 0 || col >= grid_cols)
        throw std::invalid_argument("extract_local_block: coordinate (" + std::to_string(row) +
                                    "," + std::to_string(col) + ") outside " +
                                    std::to_string(grid_rows) + "x" + std::to_string(grid_cols) +
                                    " grid");
    const int steps = x.shape()[0], b = x.shape()[2];
    const int side = 2 * radius + 1, nd = side * side;
    std::vector<double> out(static_cast<size_t>(steps) * nd * b, 0.0);
    for (int t = 0; t < steps; ++t)
        for (int dr = -radius; dr <= radius; ++dr)
            for (int dc = -radius; dc <= radius; ++dc) {
                const int r = row + dr, c = col + dc;
                if (r < 0 || r >= grid_rows || c < 0 || c >= grid_cols) continue;
                const int widx = (dr + radius) * side + (dc + radius);
                const size_t src = (static_cast<size_t>(t) * grid_rows * grid_cols +
                                    static_cast<size_t>(r) * grid_cols + c) *
                                   b;
                const size_t dst = (static_cast<size_t>(t) * nd + widx) * b;
                for (int j = 0; j < b; ++j) out[dst + j] = x.data()[src + j];
            }
    return Tensor::from({steps, nd, b}, std::move(out));
}

class DsanModel {
public:
    DsanModel(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.require_valid();
        std::mt19937_64 rng(seed);
        tpe_ = TemporalEncodingParams::init(cfg_.external_len(), cfg_.model_dim, rng);
        proj_global_ = layers::Fcn::init(cfg_.features, cfg_.model_dim, cfg_.proj_layers, rng);
        proj_local_ = layers::Fcn::init(cfg_.features, cfg_.model_dim, cfg_.proj_layers, rng);
        proj_dec_ = layers::Fcn::init(cfg_.features, cfg_.model_dim, cfg_.proj_layers, rng);
        for (int l = 0; l < cfg_.layers; ++l) {
            enc_g_.push_back(layers::EncG::init(cfg_, rng));
            enc_d_.push_back(layers::EncD::init(cfg_, rng));
            dec_s_.push_back(layers::DecS::init(cfg_, rng));
            dec_t_.push_back(layers::DecT::init(cfg_, rng));
        }
        head_w_ = layers::init_weight({cfg_.model_dim, cfg_.features}, cfg_.model_dim, rng);
        head_b_ = Tensor::zeros({cfg_.features}, true);
        build_registry();
    }

    const ModelConfig& config() const { return cfg_; }

    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    std::vector<Tensor> parameter_tensors() const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_) out.push_back(t);
        return out;
    }
    int parameter_count() const {
        int n = 0;
        for (const auto& [name, t] : params_) n += t.size();
        return n;
    }

    // Overwrite parameters by name; every registered parameter must be
    // present with matching length.
    void load_parameters(const std::vector<std::pair<std::string, std::vector<double>>>& named) {
        for (auto& [name, tensor] : params_) {
            bool found = false;
            for (const auto& [n, values] : named) {
                if (n != name) continue;
                if (values.size() != tensor.data().size())
                    throw std::invalid_argument("load_parameters: size mismatch at " + name);
                tensor.raw() = values;
                found = true;
                break;
            }
            if (!found) throw std::invalid_argument("load_parameters: missing parameter " + name);
        }
    }

    std::vector<std::vector<double>> snapshot() const {
        std::vector<std::vector<double>> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_) out.push_back(t.data());
        return out;
    }
    void restore(const std::vector<std::vector<double>>& snap) {
        if (snap.size() != params_.size())
            throw std::invalid_argument("restore: parameter count mismatch");
        for (size_t i = 0; i < snap.size(); ++i) {
            Tensor& t = params_[i].second;
            if (snap[i].size() != t.data().size())
                throw std::invalid_argument("restore: shape mismatch at " + params_[i].first);
            t.raw() = snap[i];
        }
    }

    // Teacher-forced forward over the sample's stored decoder input.
    Tensor forward(const SampleBatch& s, const ForwardCtx& ctx,
                   const ForwardHooks* hooks = nullptr) const {
        return forward_decode(s, s.dec_teacher, s.masks.decoder, s.r_dec, ctx, hooks);
    }

    // Forward with an explicit decoder input of length f <= F. dec_ext must
    // carry one calendar row per decoder position.
    Tensor forward_decode(const SampleBatch& s, const Tensor& dec_input, const Tensor& dec_mask,
                          const Tensor& dec_ext, const ForwardCtx& ctx,
                          const ForwardHooks* hooks = nullptr) const {
        const int f = dec_input.shape()[1];
        if (dec_ext.shape()[0] < f)
            throw ShapeError("forward: decoder externals cover " +
                             std::to_string(dec_ext.shape()[0]) + " positions, need " +
                             std::to_string(f));
        const double rate = cfg_.dropout_rate;

        Tensor tpe_hist = temporal_encoding(s.r_hist, tpe_);
        Tensor hg = dropout(add(proj_global_.forward(s.x_global), stpe(s.spe_global, tpe_hist)),
                            rate, ctx.train, ctx.rng);
        if (hooks && hooks->active()) hg = add(hg, embed_delta(*hooks, hg.shape()));
        Tensor hd = dropout(add(proj_local_.forward(s.x_local), stpe(s.spe_local, tpe_hist)),
                            rate, ctx.train, ctx.rng);

        for (const auto& l : enc_g_) hg = l.forward(hg, s.masks.global, rate, ctx);
        for (const auto& l : enc_d_) hd = l.forward(hd, hg, s.masks.local, s.masks.global, rate, ctx);

        Tensor dec_ext_f = dec_ext.shape()[0] == f
                               ? dec_ext
                               : Tensor::from({f, dec_ext.shape()[1]},
                                              std::vector<double>(
                                                  dec_ext.data().begin(),
                                                  dec_ext.data().begin() +
                                                      static_cast<size_t>(f) * dec_ext.shape()[1]));
        Tensor tpe_dec = temporal_encoding(dec_ext_f, tpe_);            // f x 1 x d
        Tensor stpe_dec = swap_axes(stpe(s.spe_dec, tpe_dec), 0, 1);    // 1 x f x d
        Tensor s0 = dropout(add(proj_dec_.forward(dec_input), stpe_dec), rate, ctx.train, ctx.rng);

        Tensor hs = broadcast_to(s0, {cfg_.hist_steps, f, cfg_.model_dim});
        for (const auto& l : dec_s_) hs = l.forward(hs, hd, dec_mask, rate, ctx);
        Tensor hs_switched = subspace_switch(hs);  // f x h x d

        Tensor ht = s0;
        for (const auto& l : dec_t_) ht = l.forward(ht, hs_switched, dec_mask, rate, ctx);

        Tensor out = sigmoid(add(matmul(ht, head_w_), head_b_));  // 1 x f x b
        return reshape(out, {f, cfg_.features});
    }

    // Evaluation-time decoding: start from the seed position and repeatedly
    // append the newest prediction to the decoder input. Returns the F
    // per-step predictions (normalized space).
    Tensor autoregressive_predict(const SampleBatch& s, int horizon) const {
        NoGradGuard ng;
        ForwardCtx ctx;  // eval
        const int b = cfg_.features;
        std::vector<double> rows(s.dec_teacher.data().begin(),
                                 s.dec_teacher.data().begin() + b);  // seed row
        std::vector<double> sums = {s.dec_raw_sums.empty()
                                        ? s.raw_sum_of({rows.begin(), rows.end()})
                                        : s.dec_raw_sums[0]};
        std::vector<double> predictions;
        predictions.reserve(static_cast<size_t>(horizon) * b);
        for (int step = 1; step <= horizon; ++step) {
            const int f = step;
            Tensor dec_input = Tensor::from({1, f, b}, rows);
            Tensor mask = lookahead_threshold_mask_from_sums(sums);
            Tensor out = forward_decode(s, dec_input, mask, s.r_dec, ctx);
            std::vector<double> newest(out.data().end() - b, out.data().end());
            predictions.insert(predictions.end(), newest.begin(), newest.end());
            if (step < horizon) {
                rows.insert(rows.end(), newest.begin(), newest.end());
                sums.push_back(s.raw_sum_of(newest));
            }
        }
        return Tensor::from({horizon, b}, std::move(predictions));
    }

private:
    static Tensor embed_delta(const ForwardHooks& h, const Shape& target) {
        std::vector<double> d(static_cast<size_t>(shape_numel(target)), 0.0);
        const int n = target[1], dim = target[2];
        if (h.time_step >= target[0] || h.grid >= n ||
            static_cast<int>(h.delta.size()) != dim)
            throw std::invalid_argument("forward hook: perturbation does not fit input");
        const size_t base = (static_cast<size_t>(h.time_step) * n + h.grid) * dim;
        for (int j = 0; j < dim; ++j) d[base + j] = h.delta[static_cast<size_t>(j)];
        return Tensor::from(target, std::move(d));
    }

    void build_registry() {
        params_.clear();
        params_.emplace_back("tpe.w1", tpe_.w1);
        params_.emplace_back("tpe.b1", tpe_.b1);
        params_.emplace_back("tpe.w2", tpe_.w2);
        params_.emplace_back("tpe.b2", tpe_.b2);
        proj_global_.collect(params_, "proj_global");
        proj_local_.collect(params_, "proj_local");
        proj_dec_.collect(params_, "proj_dec");
        for (int l = 0; l < cfg_.layers; ++l) {
            const std::string i = std::to_string(l);
            enc_g_[static_cast<size_t>(l)].collect(params_, "enc_g." + i);
            enc_d_[static_cast<size_t>(l)].collect(params_, "enc_d." + i);
            dec_s_[static_cast<size_t>(l)].collect(params_, "dec_s." + i);
            dec_t_[static_cast<size_t>(l)].collect(params_, "dec_t." + i);
        }
        params_.emplace_back("head.w", head_w_);
        params_.emplace_back("head.b", head_b_);
    }

    ModelConfig cfg_;
    TemporalEncodingParams tpe_;
    layers::Fcn proj_global_, proj_local_, proj_dec_;
    std::vector<layers::EncG> enc_g_;
    std::vector<layers::EncD> enc_d_;
    std::vector<layers::DecS> dec_s_;
    std::vector<layers::DecT> dec_t_;
    Tensor head_w_, head_b_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

// Synthetic random sample matching a config; `empty_grids` marks that many
// distinct (time, grid) rows of the global input as all-zero so the
// threshold-mask path is exercised. Normalization is the identity.
inline SampleBatch random_sample(const ModelConfig& cfg, std::mt19937_64& rng,
                                 int empty_grids = 0) {
    const int h = cfg.hist_steps, n = cfg.grid_count(), b = cfg.features;
    const int F = cfg.future_steps, e = cfg.external_len();
    SampleBatch s;
    s.cell = uniform_int(rng, n);
    s.coord = {s.cell / cfg.grid_cols, s.cell % cfg.grid_cols};

    std::vector<double> xg(static_cast<size_t>(h) * n * b);
    for (auto& v : xg) v = uniform(rng, 0.05, 1.0);
    for (int k = 0; k < empty_grids; ++k) {
        const int t = uniform_int(rng, h), g = uniform_int(rng, n);
        for (int j = 0; j < b; ++j) xg[(static_cast<size_t>(t) * n + g) * b + j] = 0.0;
    }
    s.x_global = Tensor::from({h, n, b}, std::move(xg));
    s.x_local = extract_local_block(s.x_global, s.coord[0], s.coord[1], cfg.local_radius,
                                    cfg.grid_rows, cfg.grid_cols);

    std::vector<double> dec(static_cast<size_t>(F) * b), tgt(static_cast<size_t>(F) * b);
    for (auto& v : dec) v = uniform(rng, 0.05, 1.0);
    for (auto& v : tgt) v = uniform(rng, 0.05, 1.0);
    s.dec_teacher = Tensor::from({1, F, b}, dec);
    s.targets = Tensor::from({F, b}, std::move(tgt));
    s.dec_raw_sums.assign(static_cast<size_t>(F), 0.0);
    for (int t = 0; t < F; ++t)
        for (int j = 0; j < b; ++j) s.dec_raw_sums[static_cast<size_t>(t)] += dec[static_cast<size_t>(t) * b + j];
    s.norm_min.assign(static_cast<size_t>(b), 0.0);
    s.norm_span.assign(static_cast<size_t>(b), 1.0);

    std::vector<double> rh(static_cast<size_t>(h) * e), rd(static_cast<size_t>(F) * e);
    for (int t = 0; t < h; ++t) {
        auto v = make_external_vector(uniform_int(rng, 7), uniform_int(rng, cfg.steps_per_day),
                                      cfg.steps_per_day,
                                      std::vector<double>(static_cast<size_t>(cfg.num_externals), 0.0));
        std::copy(v.begin(), v.end(), rh.begin() + static_cast<size_t>(t) * e);
    }
    for (int t = 0; t < F; ++t) {
        auto v = make_external_vector(uniform_int(rng, 7), uniform_int(rng, cfg.steps_per_day),
                                      cfg.steps_per_day,
                                      std::vector<double>(static_cast<size_t>(cfg.num_externals), 0.0));
        std::copy(v.begin(), v.end(), rd.begin() + static_cast<size_t>(t) * e);
    }
    s.r_hist = Tensor::from({h, e}, std::move(rh));
    s.r_dec = Tensor::from({F, e}, std::move(rd));

    s.masks.global = threshold_mask(s.x_global);
    s.masks.local = threshold_mask(s.x_local);
    s.masks.decoder = lookahead_threshold_mask(s.dec_teacher);

    const CoordScheme scheme = cfg.relative_spe ? CoordScheme::kRelative : CoordScheme::kAbsolute;
    const CoordinateMatrix grid =
        cfg.relative_spe
            ? CoordinateMatrix::relative_grid(cfg.grid_rows, cfg.grid_cols, s.coord[0], s.coord[1])
            : CoordinateMatrix::absolute_grid(cfg.grid_rows, cfg.grid_cols);
    s.spe_global = spatial_encoding(grid, cfg.model_dim);
    s.spe_local = spatial_encoding(
        CoordinateMatrix::local_block(s.coord[0], s.coord[1], cfg.local_radius, scheme),
        cfg.model_dim);
    s.spe_dec = spatial_encoding(CoordinateMatrix::single(s.coord[0], s.coord[1], scheme),
                                 cfg.model_dim);
    return s;
}

}  // namespace dsan
