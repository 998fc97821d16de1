#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wfkit/error.hpp"
#include "wfkit/rng.hpp"
#include "wfkit/tensor.hpp"

namespace wfkit {

/// Architecture hyperparameters. The input mapping is channels = bin_count
/// (IAT bins), height = slot_count (time slots), width = 2 (direction), so
/// the SE block's channel gates weight IAT bins.
struct ModelConfig {
    int class_count = 100;
    int kernel_count = 4; // K inception branches, kernel heights 2k+1
    int se_reduction = 16;
    int bin_count = 9;    // G, input channels
    int slot_count = 1800; // L, input height
    int stage_a_channels = 32;
    int stage_a2_channels = 64;
    int stage_b_channels = 128;
    double dropout_p = 0.1;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    std::uint64_t seed = 0;

    void validate() const {
        if (class_count < 2) throw ConfigError("model: class_count must be >= 2");
        if (kernel_count < 1) throw ConfigError("model: kernel_count must be >= 1");
        if (se_reduction < 1) throw ConfigError("model: se_reduction must be >= 1");
        if (bin_count < 1 || slot_count < 1) throw ConfigError("model: input dims must be positive");
        if (stage_a_channels % kernel_count != 0)
            throw ConfigError("model: stage_a_channels must be divisible by kernel_count");
        if (stage_a_channels % se_reduction != 0)
            throw ConfigError("model: stage_a_channels must be divisible by se_reduction");
        if (stage_b_channels % kernel_count != 0)
            throw ConfigError("model: stage_b_channels must be divisible by kernel_count");
        if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("model: dropout_p must be in [0, 1)");
    }
};

namespace detail {

template <typename S>
Parameter<S> init_conv_weight(const std::string& name, std::vector<std::int64_t> shape,
                              std::int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
    for (S& x : data) x = static_cast<S>(rng.uniform(-bound, bound));
    return Parameter<S>(name, Tensor<S>::leaf(std::move(shape), std::move(data), true));
}

template <typename S>
Parameter<S> init_zeros(const std::string& name, std::vector<std::int64_t> shape) {
    return Parameter<S>(name, Tensor<S>::zeros(std::move(shape), true));
}

template <typename S>
Parameter<S> init_ones(const std::string& name, std::vector<std::int64_t> shape) {
    std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)), S(1));
    return Parameter<S>(name, Tensor<S>::leaf(std::move(shape), std::move(data), true));
}

} // namespace detail

/// Conv + batchnorm pair used by every block after the first.
template <typename S>
struct BatchNormLayer {
    Parameter<S> gamma, beta;
    std::vector<double> running_mean, running_var;
    double momentum = 0.1, eps = 1e-5;

    BatchNormLayer() = default;
    BatchNormLayer(const std::string& prefix, std::int64_t channels, double momentum_, double eps_)
        : gamma(detail::init_ones<S>(prefix + ".gamma", {channels})),
          beta(detail::init_zeros<S>(prefix + ".beta", {channels})),
          running_mean(static_cast<std::size_t>(channels), 0.0),
          running_var(static_cast<std::size_t>(channels), 1.0),
          momentum(momentum_),
          eps(eps_) {}

    Tensor<S> forward(const Tensor<S>& x, bool train) {
        return batchnorm(x, gamma.tensor, beta.tensor, running_mean, running_var, train, momentum, eps);
    }
};

/// Inception block over [N,Cin,H,2]: K branches with (2k+1)x2 kernels, height
/// same-padded, width collapsed 2->1, concatenated to out_channels; then an
/// SE gate (GAP -> FC down by r -> GELU -> FC up -> sigmoid) scales channels.
template <typename S>
struct Inception2dSE {
    int in_channels = 0, out_channels = 0, branches = 0, reduction = 0;
    std::vector<Parameter<S>> branch_w, branch_b;
    Parameter<S> fc1_w, fc1_b, fc2_w, fc2_b;

    Inception2dSE() = default;
    Inception2dSE(const std::string& prefix, int cin, int cout, int K, int r, Rng& rng)
        : in_channels(cin), out_channels(cout), branches(K), reduction(r) {
        if (cout % K != 0) throw ConfigError("inception2d_se: out_channels must be divisible by K");
        if (cout % r != 0) throw ConfigError("inception2d_se: out_channels must be divisible by r");
        const int per = cout / K;
        for (int k = 0; k < K; ++k) {
            const std::int64_t kh = 2 * k + 1;
            branch_w.push_back(detail::init_conv_weight<S>(prefix + ".branch" + std::to_string(k) + ".weight",
                                                           {per, cin, kh, 2}, cin * kh * 2, rng));
            branch_b.push_back(detail::init_zeros<S>(prefix + ".branch" + std::to_string(k) + ".bias", {per}));
        }
        const std::int64_t hidden = cout / r;
        fc1_w = detail::init_conv_weight<S>(prefix + ".se.fc1.weight", {cout, hidden}, cout, rng);
        fc1_b = detail::init_zeros<S>(prefix + ".se.fc1.bias", {hidden});
        fc2_w = detail::init_conv_weight<S>(prefix + ".se.fc2.weight", {hidden, cout}, hidden, rng);
        fc2_b = detail::init_zeros<S>(prefix + ".se.fc2.bias", {cout});
    }

    /// Branch outputs before concatenation, each [N, out/K, H, 1].
    std::vector<Tensor<S>> branch_outputs(const Tensor<S>& x) const {
        if (x.shape().size() != 4 || x.dim(3) != 2)
            throw ShapeError("inception2d_se input must be [N,Cin,H,2]");
        if (x.dim(1) != in_channels) throw ShapeError("inception2d_se channel mismatch");
        std::vector<Tensor<S>> outs;
        for (int k = 0; k < branches; ++k)
            outs.push_back(conv2d(x, branch_w[static_cast<std::size_t>(k)].tensor,
                                  branch_b[static_cast<std::size_t>(k)].tensor, k, 0));
        return outs;
    }

    /// SE gate values in (0,1), shape [N, out_channels].
    Tensor<S> gate(const Tensor<S>& concat) const {
        Tensor<S> g = global_avg_pool(concat);
        g = linear(g, fc1_w.tensor, fc1_b.tensor);
        g = gelu(g);
        g = linear(g, fc2_w.tensor, fc2_b.tensor);
        return sigmoid(g);
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        Tensor<S> cat = concat_channels(branch_outputs(x));
        return channel_scale(cat, gate(cat));
    }

    void collect(std::vector<Parameter<S>*>& out) {
        for (auto& p : branch_w) out.push_back(&p);
        for (auto& p : branch_b) out.push_back(&p);
        out.push_back(&fc1_w);
        out.push_back(&fc1_b);
        out.push_back(&fc2_w);
        out.push_back(&fc2_b);
    }
};

/// 1-D inception: K branches with kernels 2k+1, same-padded, concatenated.
template <typename S>
struct Inception1d {
    int in_channels = 0, out_channels = 0, branches = 0;
    std::vector<Parameter<S>> w, b;

    Inception1d() = default;
    Inception1d(const std::string& prefix, int cin, int cout, int K, Rng& rng)
        : in_channels(cin), out_channels(cout), branches(K) {
        if (cout % K != 0) throw ConfigError("inception1d: out_channels must be divisible by K");
        const int per = cout / K;
        for (int k = 0; k < K; ++k) {
            const std::int64_t kk = 2 * k + 1;
            w.push_back(detail::init_conv_weight<S>(prefix + ".branch" + std::to_string(k) + ".weight",
                                                    {per, cin, kk}, cin * kk, rng));
            b.push_back(detail::init_zeros<S>(prefix + ".branch" + std::to_string(k) + ".bias", {per}));
        }
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        std::vector<Tensor<S>> outs;
        for (int k = 0; k < branches; ++k)
            outs.push_back(conv1d(x, w[static_cast<std::size_t>(k)].tensor,
                                  b[static_cast<std::size_t>(k)].tensor, k));
        return concat_channels(outs);
    }

    void collect(std::vector<Parameter<S>*>& out) {
        for (auto& p : w) out.push_back(&p);
        for (auto& p : b) out.push_back(&p);
    }
};

template <typename S>
struct Conv2dLayer {
    Parameter<S> weight, bias;
    int ph = 0, pw = 0;

    Conv2dLayer() = default;
    Conv2dLayer(const std::string& prefix, int cin, int cout, int kh, int kw, int ph_, int pw_, Rng& rng)
        : weight(detail::init_conv_weight<S>(prefix + ".weight", {cout, cin, kh, kw},
                                             static_cast<std::int64_t>(cin) * kh * kw, rng)),
          bias(detail::init_zeros<S>(prefix + ".bias", {cout})),
          ph(ph_),
          pw(pw_) {}

    Tensor<S> forward(const Tensor<S>& x) const { return conv2d(x, weight.tensor, bias.tensor, ph, pw); }

    void collect(std::vector<Parameter<S>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

template <typename S>
struct Conv1dLayer {
    Parameter<S> weight, bias;
    int pad = 0;

    Conv1dLayer() = default;
    Conv1dLayer(const std::string& prefix, int cin, int cout, int k, int pad_, Rng& rng)
        : weight(detail::init_conv_weight<S>(prefix + ".weight", {cout, cin, k},
                                             static_cast<std::int64_t>(cin) * k, rng)),
          bias(detail::init_zeros<S>(prefix + ".bias", {cout})),
          pad(pad_) {}

    Tensor<S> forward(const Tensor<S>& x) const { return conv1d(x, weight.tensor, bias.tensor, pad); }

    void collect(std::vector<Parameter<S>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

/// The full stack. Input [N, G, L, 2] -> logits [N, C].
///
///   A1  inception2d_se (G -> stage_a, width 2 -> 1), no BN or activation
///   A2  conv2d 3x1 same + BN + GELU, avgpool (2,1), dropout
///   A3  conv2d 3x1 same (stage_a -> stage_a2) + BN + GELU
///   A4  conv2d 3x1 same + BN + GELU, avgpool (2,1), dropout
///   reshape to [N, stage_a2, L/4]
///   B1  inception1d (-> stage_b) + BN + GELU, avgpool1d 2, dropout
///   B2  inception1d (stage_b -> stage_b) + BN + GELU, avgpool1d 2, dropout
///   head conv1d k=1 (stage_b -> C), global average pool
template <typename S>
class WfcatModel {
  public:
    ModelConfig cfg;

    explicit WfcatModel(ModelConfig config) : cfg(config) {
        cfg.validate();
        Rng init(cfg.seed, 0x494e4954u /*INIT*/);
        a1 = Inception2dSE<S>("a1", cfg.bin_count, cfg.stage_a_channels, cfg.kernel_count,
                              cfg.se_reduction, init);
        a2 = Conv2dLayer<S>("a2.conv", cfg.stage_a_channels, cfg.stage_a_channels, 3, 1, 1, 0, init);
        a2_bn = BatchNormLayer<S>("a2.bn", cfg.stage_a_channels, cfg.bn_momentum, cfg.bn_eps);
        a3 = Conv2dLayer<S>("a3.conv", cfg.stage_a_channels, cfg.stage_a2_channels, 3, 1, 1, 0, init);
        a3_bn = BatchNormLayer<S>("a3.bn", cfg.stage_a2_channels, cfg.bn_momentum, cfg.bn_eps);
        a4 = Conv2dLayer<S>("a4.conv", cfg.stage_a2_channels, cfg.stage_a2_channels, 3, 1, 1, 0, init);
        a4_bn = BatchNormLayer<S>("a4.bn", cfg.stage_a2_channels, cfg.bn_momentum, cfg.bn_eps);
        b1 = Inception1d<S>("b1", cfg.stage_a2_channels, cfg.stage_b_channels, cfg.kernel_count, init);
        b1_bn = BatchNormLayer<S>("b1.bn", cfg.stage_b_channels, cfg.bn_momentum, cfg.bn_eps);
        b2 = Inception1d<S>("b2", cfg.stage_b_channels, cfg.stage_b_channels, cfg.kernel_count, init);
        b2_bn = BatchNormLayer<S>("b2.bn", cfg.stage_b_channels, cfg.bn_momentum, cfg.bn_eps);
        head = Conv1dLayer<S>("head", cfg.stage_b_channels, cfg.class_count, 1, 0, init);
        drop_rng = Rng(cfg.seed, 0x44524f50u /*DROP*/);
    }

    WfcatModel(const WfcatModel&) = delete;
    WfcatModel& operator=(const WfcatModel&) = delete;

    /// Reseeds the dropout stream (the training loop pins it per batch so
    /// trajectories do not depend on prior forward counts).
    void reseed_dropout(std::uint64_t a, std::uint64_t b = 0) { drop_rng = Rng(cfg.seed, a, b); }

    Tensor<S> forward(const Tensor<S>& x, bool train) {
        if (x.shape().size() != 4 || x.dim(1) != cfg.bin_count || x.dim(2) != cfg.slot_count ||
            x.dim(3) != 2)
            throw ShapeError("forward input must be [N," + std::to_string(cfg.bin_count) + "," +
                             std::to_string(cfg.slot_count) + ",2], got " +
                             detail::shape_str(x.shape()));
        Tensor<S> y = a1.forward(x);
        y = gelu(a2_bn.forward(a2.forward(y), train));
        y = avgpool2d(y, 2, 1);
        y = dropout(y, cfg.dropout_p, train, drop_rng);
        y = gelu(a3_bn.forward(a3.forward(y), train));
        y = gelu(a4_bn.forward(a4.forward(y), train));
        y = avgpool2d(y, 2, 1);
        y = dropout(y, cfg.dropout_p, train, drop_rng);
        y = reshape(y, {y.dim(0), y.dim(1), y.dim(2)});
        y = gelu(b1_bn.forward(b1.forward(y), train));
        y = avgpool1d(y, 2);
        y = dropout(y, cfg.dropout_p, train, drop_rng);
        y = gelu(b2_bn.forward(b2.forward(y), train));
        y = avgpool1d(y, 2);
        y = dropout(y, cfg.dropout_p, train, drop_rng);
        y = head.forward(y);
        return global_avg_pool(y);
    }

    std::vector<Parameter<S>*> parameters() {
        std::vector<Parameter<S>*> out;
        a1.collect(out);
        a2.collect(out);
        out.push_back(&a2_bn.gamma);
        out.push_back(&a2_bn.beta);
        a3.collect(out);
        out.push_back(&a3_bn.gamma);
        out.push_back(&a3_bn.beta);
        a4.collect(out);
        out.push_back(&a4_bn.gamma);
        out.push_back(&a4_bn.beta);
        b1.collect(out);
        out.push_back(&b1_bn.gamma);
        out.push_back(&b1_bn.beta);
        b2.collect(out);
        out.push_back(&b2_bn.gamma);
        out.push_back(&b2_bn.beta);
        head.collect(out);
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        for (Parameter<S>* p : parameters()) n += p->tensor.numel();
        return n;
    }

    /// Trainable parameters plus BN running stats, for the checkpoint file.
    std::vector<NamedBuffer> state_buffers() {
        std::vector<NamedBuffer> out;
        for (Parameter<S>* p : parameters()) {
            NamedBuffer nb;
            nb.name = p->name;
            nb.shape = p->tensor.shape();
            nb.data.reserve(p->tensor.value().size());
            for (S x : p->tensor.value()) nb.data.push_back(static_cast<float>(x));
            out.push_back(std::move(nb));
        }
        for (BatchNormLayer<S>* bn : bn_layers()) {
            const std::string prefix = bn->gamma.name.substr(0, bn->gamma.name.rfind('.'));
            NamedBuffer rm{prefix + ".running_mean",
                           {static_cast<std::int64_t>(bn->running_mean.size())},
                           {}};
            for (double x : bn->running_mean) rm.data.push_back(static_cast<float>(x));
            NamedBuffer rv{prefix + ".running_var",
                           {static_cast<std::int64_t>(bn->running_var.size())},
                           {}};
            for (double x : bn->running_var) rv.data.push_back(static_cast<float>(x));
            out.push_back(std::move(rm));
            out.push_back(std::move(rv));
        }
        return out;
    }

    void load_state(const std::vector<NamedBuffer>& buffers) {
        std::unordered_map<std::string, const NamedBuffer*> by_name;
        for (const NamedBuffer& b : buffers) by_name[b.name] = &b;
        auto take = [&](const std::string& name) -> const NamedBuffer& {
            auto it = by_name.find(name);
            if (it == by_name.end()) throw DataError("checkpoint missing entry " + name);
            return *it->second;
        };
        for (Parameter<S>* p : parameters()) {
            const NamedBuffer& b = take(p->name);
            if (b.shape != p->tensor.shape())
                throw DataError("checkpoint shape mismatch for " + p->name);
            for (std::size_t i = 0; i < b.data.size(); ++i)
                p->tensor.value()[i] = static_cast<S>(b.data[i]);
        }
        for (BatchNormLayer<S>* bn : bn_layers()) {
            const std::string prefix = bn->gamma.name.substr(0, bn->gamma.name.rfind('.'));
            const NamedBuffer& rm = take(prefix + ".running_mean");
            const NamedBuffer& rv = take(prefix + ".running_var");
            if (rm.data.size() != bn->running_mean.size() || rv.data.size() != bn->running_var.size())
                throw DataError("checkpoint shape mismatch for " + prefix + " running stats");
            for (std::size_t i = 0; i < rm.data.size(); ++i) bn->running_mean[i] = rm.data[i];
            for (std::size_t i = 0; i < rv.data.size(); ++i) bn->running_var[i] = rv.data[i];
        }
    }

    Inception2dSE<S> a1;
    Conv2dLayer<S> a2, a3, a4;
    BatchNormLayer<S> a2_bn, a3_bn, a4_bn;
    Inception1d<S> b1, b2;
    BatchNormLayer<S> b1_bn, b2_bn;
    Conv1dLayer<S> head;
    Rng drop_rng{0};

  private:
    std::vector<BatchNormLayer<S>*> bn_layers() { return {&a2_bn, &a3_bn, &a4_bn, &b1_bn, &b2_bn}; }
};

template <typename S = float>
WfcatModel<S> build_wfcat(const ModelConfig& cfg) {
    return WfcatModel<S>(cfg);
}

// ----- config file ------------------------------------------------------------

/// Flat key=value rendering of a ModelConfig, stable key order.
inline std::string model_config_text(const ModelConfig& cfg) {
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    std::string out;
    out += "class_count=" + std::to_string(cfg.class_count) + "\n";
    out += "kernel_count=" + std::to_string(cfg.kernel_count) + "\n";
    out += "se_reduction=" + std::to_string(cfg.se_reduction) + "\n";
    out += "bin_count=" + std::to_string(cfg.bin_count) + "\n";
    out += "slot_count=" + std::to_string(cfg.slot_count) + "\n";
    out += "stage_a_channels=" + std::to_string(cfg.stage_a_channels) + "\n";
    out += "stage_a2_channels=" + std::to_string(cfg.stage_a2_channels) + "\n";
    out += "stage_b_channels=" + std::to_string(cfg.stage_b_channels) + "\n";
    out += "dropout_p=" + num(cfg.dropout_p) + "\n";
    out += "bn_momentum=" + num(cfg.bn_momentum) + "\n";
    out += "bn_eps=" + num(cfg.bn_eps) + "\n";
    out += "seed=" + std::to_string(cfg.seed) + "\n";
    return out;
}

inline ModelConfig parse_model_config_text(const std::string& text) {
    ModelConfig cfg;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, (eol == std::string::npos ? text.size() : eol) - pos);
        pos = eol == std::string::npos ? text.size() : eol + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("model config line missing '=': " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        try {
            if (key == "class_count") cfg.class_count = std::stoi(val);
            else if (key == "kernel_count") cfg.kernel_count = std::stoi(val);
            else if (key == "se_reduction") cfg.se_reduction = std::stoi(val);
            else if (key == "bin_count") cfg.bin_count = std::stoi(val);
            else if (key == "slot_count") cfg.slot_count = std::stoi(val);
            else if (key == "stage_a_channels") cfg.stage_a_channels = std::stoi(val);
            else if (key == "stage_a2_channels") cfg.stage_a2_channels = std::stoi(val);
            else if (key == "stage_b_channels") cfg.stage_b_channels = std::stoi(val);
            else if (key == "dropout_p") cfg.dropout_p = std::stod(val);
            else if (key == "bn_momentum") cfg.bn_momentum = std::stod(val);
            else if (key == "bn_eps") cfg.bn_eps = std::stod(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else throw ParseError("unknown model config key: " + key);
        } catch (const std::invalid_argument&) {
            throw ParseError("bad model config value for " + key + ": " + val);
        } catch (const std::out_of_range&) {
            throw ParseError("bad model config value for " + key + ": " + val);
        }
    }
    cfg.validate();
    return cfg;
}

/// Packs feature tensors [G,2,L] (or TAM [2,L] zero-lifted to one bin) into a
/// model input batch [N,G,L,2].
template <typename S>
Tensor<S> batch_from_features(const std::vector<const FeatureTensor*>& feats, int bin_count,
                              int slot_count, bool requires_grad = false) {
    const std::int64_t N = static_cast<std::int64_t>(feats.size());
    const std::int64_t G = bin_count, L = slot_count;
    std::vector<S> data(static_cast<std::size_t>(N * G * L * 2), S(0));
    for (std::int64_t n = 0; n < N; ++n) {
        const FeatureTensor& f = *feats[static_cast<std::size_t>(n)];
        // A TAM tensor [2,L] has the same flat layout as [1,2,L].
        const bool tam_lift = G == 1 && f.shape == std::vector<std::int64_t>{2, L};
        if (!tam_lift && f.shape != std::vector<std::int64_t>{G, 2, L})
            throw ShapeError("feature tensor shape does not match model input (want [G,2,L])");
        // [G,2,L] -> [G,L,2]
        for (std::int64_t g = 0; g < G; ++g)
            for (std::int64_t d = 0; d < 2; ++d) {
                const float* src = f.data.data() + (g * 2 + d) * L;
                S* dst = data.data() + ((n * G + g) * L) * 2 + d;
                for (std::int64_t k = 0; k < L; ++k) dst[k * 2] = static_cast<S>(src[k]);
            }
    }
    return Tensor<S>::leaf({N, G, L, 2}, std::move(data), requires_grad);
}

} // namespace wfkit
