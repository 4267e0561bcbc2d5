#include "dendseg/models.hpp"

#include "dendseg/rng.hpp"

#include <cmath>

namespace dendseg {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configurations
// ---------------------------------------------------------------------------

Architecture architecture_of(const ModelConfig& config) noexcept {
    if (const auto* u = std::get_if<UNetConfig>(&config)) return u->dims == 2 ? Architecture::unet2d : Architecture::unet3d;
    return Architecture::fcdense3d;
}

std::string_view to_string(Architecture a) noexcept {
    switch (a) {
        case Architecture::unet2d:    return "unet2d";
        case Architecture::unet3d:    return "unet3d";
        case Architecture::fcdense3d: return "fcdense3d";
    }
    return "";
}

Architecture parse_architecture(std::string_view s) {
    if (s == "unet2d") return Architecture::unet2d;
    if (s == "unet3d") return Architecture::unet3d;
    if (s == "fcdense3d") return Architecture::fcdense3d;
    fail(ErrorCode::ConfigInvalid, "unknown architecture '" + std::string(s) + "'");
}

ModelConfig default_config(Architecture a) {
    switch (a) {
        case Architecture::unet2d:
            return UNetConfig{.dims = 2, .levels = 4, .base_channels = 8, .residual = false};
        case Architecture::unet3d:
            return UNetConfig{.dims = 3, .levels = 3, .base_channels = 8, .residual = true};
        case Architecture::fcdense3d:
            return FCDenseConfig{};
    }
    return UNetConfig{};
}

void validate(const ModelConfig& config) {
    if (const auto* u = std::get_if<UNetConfig>(&config)) {
        if (u->dims != 2 && u->dims != 3) fail(ErrorCode::ConfigInvalid, "U-Net dims must be 2 or 3");
        if (u->levels < 1) fail(ErrorCode::ConfigInvalid, "U-Net levels must be >= 1");
        if (u->base_channels < 1) fail(ErrorCode::ConfigInvalid, "U-Net base_channels must be >= 1");
        if (u->in_channels < 1 || u->out_channels < 1) fail(ErrorCode::ConfigInvalid, "channel counts must be >= 1");
        if (u->residual && u->dims != 3) fail(ErrorCode::ConfigInvalid, "residual blocks exist only in the 3D U-Net");
        if (u->levels > 12) fail(ErrorCode::ConfigInvalid, "U-Net levels must be <= 12");
        return;
    }
    const auto& f = std::get<FCDenseConfig>(config);
    if (f.levels < 1) fail(ErrorCode::ConfigInvalid, "FCDense levels must be >= 1");
    if (f.growth_rate < 1 || f.initial_channels < 1) fail(ErrorCode::ConfigInvalid, "FCDense growth and initial channels must be >= 1");
    if (static_cast<int>(f.layers_per_block.size()) != f.levels + 1)
        fail(ErrorCode::ConfigInvalid, "FCDense layers_per_block needs levels + 1 entries");
    for (int n : f.layers_per_block)
        if (n < 1) fail(ErrorCode::ConfigInvalid, "FCDense layers_per_block entries must be >= 1");
}

json config_to_json(const ModelConfig& config) {
    json j;
    j["architecture"] = std::string(to_string(architecture_of(config)));
    if (const auto* u = std::get_if<UNetConfig>(&config)) {
        j["dims"] = u->dims;
        j["in_channels"] = u->in_channels;
        j["out_channels"] = u->out_channels;
        j["levels"] = u->levels;
        j["base_channels"] = u->base_channels;
        j["residual"] = u->residual;
    } else {
        const auto& f = std::get<FCDenseConfig>(config);
        j["growth_rate"] = f.growth_rate;
        j["layers_per_block"] = f.layers_per_block;
        j["initial_channels"] = f.initial_channels;
        j["levels"] = f.levels;
    }
    return j;
}

ModelConfig config_from_json(const json& j) {
    try {
        const Architecture a = parse_architecture(j.at("architecture").get<std::string>());
        ModelConfig config = default_config(a);
        if (auto* u = std::get_if<UNetConfig>(&config)) {
            u->in_channels = j.value("in_channels", u->in_channels);
            u->out_channels = j.value("out_channels", u->out_channels);
            u->levels = j.value("levels", u->levels);
            u->base_channels = j.value("base_channels", u->base_channels);
            u->residual = j.value("residual", u->residual);
            u->dims = a == Architecture::unet2d ? 2 : 3;
        } else {
            auto& f = std::get<FCDenseConfig>(config);
            f.growth_rate = j.value("growth_rate", f.growth_rate);
            f.initial_channels = j.value("initial_channels", f.initial_channels);
            f.levels = j.value("levels", f.levels);
            if (j.contains("layers_per_block")) f.layers_per_block = j["layers_per_block"].get<std::vector<int>>();
        }
        validate(config);
        return config;
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigInvalid, std::string("model config: ") + e.what());
    }
}

int spatial_rank(const ModelConfig& config) noexcept {
    if (const auto* u = std::get_if<UNetConfig>(&config)) return u->dims;
    return 3;
}

int pooling_levels(const ModelConfig& config) noexcept {
    if (const auto* u = std::get_if<UNetConfig>(&config)) return u->levels;
    return std::get<FCDenseConfig>(config).levels;
}

std::vector<Int3> pooling_schedule(const ModelConfig& config, int depth) {
    std::vector<Int3> kernels;
    const int rank = spatial_rank(config);
    int z = depth;
    for (int i = 0; i < pooling_levels(config); ++i) {
        if (rank == 3 && z >= 2 && z % 2 == 0) {
            kernels.push_back({2, 2, 2});
            z /= 2;
        } else {
            kernels.push_back({1, 2, 2});
        }
    }
    return kernels;
}

void check_input_shape(const ModelConfig& config, const Shape& shape) {
    const int rank = spatial_rank(config);
    if (static_cast<int>(shape.size()) != rank + 2)
        fail(ErrorCode::ShapeMismatch, "model expects rank-" + std::to_string(rank + 2) + " input, got " + shape_string(shape));
    const int in_channels = std::holds_alternative<UNetConfig>(config) ? std::get<UNetConfig>(config).in_channels : 1;
    if (shape[1] != in_channels)
        fail(ErrorCode::ShapeMismatch, "model expects " + std::to_string(in_channels) + " input channels, got " + shape_string(shape));
    for (int d : shape)
        if (d < 1) fail(ErrorCode::ShapeMismatch, "empty input " + shape_string(shape));
    const int factor = 1 << pooling_levels(config);
    const int h = shape[shape.size() - 2];
    const int w = shape[shape.size() - 1];
    if (h % factor != 0 || w % factor != 0)
        fail(ErrorCode::IndivisibleInput, "x/y extents of " + shape_string(shape) + " must be divisible by " + std::to_string(factor));
}

FCDenseChannels fcdense_channels(const FCDenseConfig& f) {
    FCDenseChannels c;
    c.initial = f.initial_channels;
    int cur = f.initial_channels;
    for (int i = 0; i < f.levels; ++i) {
        cur += f.layers_per_block[static_cast<std::size_t>(i)] * f.growth_rate;
        c.skip.push_back(cur);
    }
    cur += f.layers_per_block[static_cast<std::size_t>(f.levels)] * f.growth_rate;
    c.bottleneck = cur;
    c.decoder.assign(static_cast<std::size_t>(f.levels), 0);
    for (int i = f.levels - 1; i >= 0; --i) {
        const int skip = c.skip[static_cast<std::size_t>(i)];
        cur = 2 * skip + f.layers_per_block[static_cast<std::size_t>(i)] * f.growth_rate;
        c.decoder[static_cast<std::size_t>(i)] = cur;
    }
    return c;
}

// ---------------------------------------------------------------------------
// Forward building blocks
// ---------------------------------------------------------------------------

namespace {

std::string level_name(const char* prefix, int i) { return prefix + std::to_string(i); }

template <typename Real>
Tensor<Real> conv(const Model<Real>& m, int rank, const std::string& name, const Tensor<Real>& x, int k) {
    const int pad = k / 2;
    const auto& w = m.parameter(name + ".weight");
    const auto& b = m.parameter(name + ".bias");
    if (rank == 3) return conv3d(x, w, b, {1, 1, 1}, {pad, pad, pad});
    return conv2d(x, w, b, {1, 1}, {pad, pad});
}

template <typename Real>
Tensor<Real> pool(int rank, const Tensor<Real>& x, const Int3& kernel) {
    if (rank == 3) return max_pool3d(x, kernel, kernel);
    return max_pool2d(x, {2, 2}, {2, 2});
}

template <typename Real>
Tensor<Real> upsample(const Model<Real>& m, int rank, const std::string& name, const Tensor<Real>& x, const Int3& kernel) {
    const auto& w = m.parameter(name + ".weight");
    if (rank == 2) return conv_transpose2d(x, w, {2, 2});
    // Levels that did not pool in z fold the two depth taps into one.
    if (kernel[0] == 1) return conv_transpose3d(x, mean_depth_taps(w), kernel);
    return conv_transpose3d(x, w, kernel);
}

template <typename Real>
Tensor<Real> unet_block(const Model<Real>& m, const UNetConfig& c, const std::string& name, const Tensor<Real>& x) {
    Tensor<Real> y = relu(conv(m, c.dims, name + ".conv1", x, 3));
    y = relu(conv(m, c.dims, name + ".conv2", y, 3));
    if (c.residual) y = add(y, conv(m, c.dims, name + ".skip", x, 1));
    return y;
}

template <typename Real>
Tensor<Real> unet_forward(const Model<Real>& m, const UNetConfig& c, const Tensor<Real>& input) {
    const int depth = c.dims == 3 ? input.dim(2) : 1;
    const auto kernels = pooling_schedule(m.config(), depth);
    std::vector<Tensor<Real>> skips;
    Tensor<Real> x = input;
    for (int i = 0; i < c.levels; ++i) {
        x = unet_block(m, c, level_name("enc", i), x);
        skips.push_back(x);
        x = pool(c.dims, x, kernels[static_cast<std::size_t>(i)]);
    }
    x = unet_block(m, c, "mid", x);
    for (int i = c.levels - 1; i >= 0; --i) {
        x = upsample(m, c.dims, level_name("up", i), x, kernels[static_cast<std::size_t>(i)]);
        x = concat_channels(skips[static_cast<std::size_t>(i)], x);
        x = unet_block(m, c, level_name("dec", i), x);
    }
    return conv(m, c.dims, "head", x, 1);
}

template <typename Real>
Tensor<Real> dense_block(const Model<Real>& m, const std::string& name, Tensor<Real> stack, int layers) {
    for (int j = 0; j < layers; ++j) {
        Tensor<Real> fresh = conv(m, 3, name + ".layer" + std::to_string(j), relu(stack), 3);
        stack = concat_channels(stack, fresh);
    }
    return stack;
}

template <typename Real>
Tensor<Real> fcdense_forward(const Model<Real>& m, const FCDenseConfig& c, const Tensor<Real>& input) {
    const auto kernels = pooling_schedule(m.config(), input.dim(2));
    std::vector<Tensor<Real>> skips;
    Tensor<Real> x = conv(m, 3, "init", input, 3);
    for (int i = 0; i < c.levels; ++i) {
        x = dense_block(m, level_name("down", i), x, c.layers_per_block[static_cast<std::size_t>(i)]);
        skips.push_back(x);
        x = conv(m, 3, level_name("td", i), x, 1);
        x = pool(3, x, kernels[static_cast<std::size_t>(i)]);
    }
    x = dense_block(m, "mid", x, c.layers_per_block[static_cast<std::size_t>(c.levels)]);
    for (int i = c.levels - 1; i >= 0; --i) {
        x = upsample(m, 3, level_name("up", i), x, kernels[static_cast<std::size_t>(i)]);
        x = concat_channels(skips[static_cast<std::size_t>(i)], x);
        x = dense_block(m, level_name("dec", i), x, c.layers_per_block[static_cast<std::size_t>(i)]);
    }
    return conv(m, 3, "head", x, 1);
}

} // namespace

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename Real>
void Model<Real>::add_parameter(std::string name, Shape shape, std::size_t fan_in, std::uint64_t seed, bool is_bias) {
    Buffer<Real> values(shape_numel(shape), Real(0));
    if (!is_bias) {
        Rng rng(derive_seed(seed, name));
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (Real& v : values) v = static_cast<Real>(uniform(rng, -bound, bound));
    }
    index_[name] = params_.size();
    params_.push_back({std::move(name), Tensor<Real>(std::move(shape), std::move(values), true)});
}

template <typename Real>
Model<Real> Model<Real>::build(const ModelConfig& config, std::uint64_t seed) {
    validate(config);
    Model m;
    m.config_ = config;
    const int rank = spatial_rank(config);

    auto kernel_shape = [rank](int a, int b, int k) {
        return rank == 3 ? Shape{a, b, k, k, k} : Shape{a, b, k, k};
    };
    auto add_conv = [&](const std::string& name, int cin, int cout, int k) {
        const std::size_t kvol = rank == 3 ? static_cast<std::size_t>(k * k * k) : static_cast<std::size_t>(k * k);
        m.add_parameter(name + ".weight", kernel_shape(cout, cin, k), static_cast<std::size_t>(cin) * kvol, seed, false);
        m.add_parameter(name + ".bias", {cout}, 0, seed, true);
    };
    auto add_upconv = [&](const std::string& name, int cin, int cout) {
        m.add_parameter(name + ".weight", kernel_shape(cin, cout, 2), static_cast<std::size_t>(cin), seed, false);
    };

    if (const auto* u = std::get_if<UNetConfig>(&config)) {
        auto block = [&](const std::string& name, int cin, int cout) {
            add_conv(name + ".conv1", cin, cout, 3);
            add_conv(name + ".conv2", cout, cout, 3);
            if (u->residual) add_conv(name + ".skip", cin, cout, 1);
        };
        auto ch = [&](int level) { return u->base_channels << level; };
        for (int i = 0; i < u->levels; ++i) block(level_name("enc", i), i == 0 ? u->in_channels : ch(i - 1), ch(i));
        block("mid", ch(u->levels - 1), ch(u->levels));
        for (int i = u->levels - 1; i >= 0; --i) {
            add_upconv(level_name("up", i), ch(i + 1), ch(i));
            block(level_name("dec", i), 2 * ch(i), ch(i));
        }
        add_conv("head", ch(0), u->out_channels, 1);
    } else {
        const auto& f = std::get<FCDenseConfig>(config);
        const FCDenseChannels c = fcdense_channels(f);
        auto block = [&](const std::string& name, int cin, int layers) {
            for (int j = 0; j < layers; ++j) add_conv(name + ".layer" + std::to_string(j), cin + j * f.growth_rate, f.growth_rate, 3);
        };
        add_conv("init", 1, f.initial_channels, 3);
        int cur = f.initial_channels;
        for (int i = 0; i < f.levels; ++i) {
            block(level_name("down", i), cur, f.layers_per_block[static_cast<std::size_t>(i)]);
            cur = c.skip[static_cast<std::size_t>(i)];
            add_conv(level_name("td", i), cur, cur, 1);
        }
        block("mid", cur, f.layers_per_block[static_cast<std::size_t>(f.levels)]);
        cur = c.bottleneck;
        for (int i = f.levels - 1; i >= 0; --i) {
            const int skip = c.skip[static_cast<std::size_t>(i)];
            add_upconv(level_name("up", i), cur, skip);
            block(level_name("dec", i), 2 * skip, f.layers_per_block[static_cast<std::size_t>(i)]);
            cur = c.decoder[static_cast<std::size_t>(i)];
        }
        add_conv("head", cur, 1, 1);
    }
    return m;
}

template <typename Real>
Tensor<Real> Model<Real>::forward(const Tensor<Real>& input) const {
    check_input_shape(config_, input.shape());
    if (const auto* u = std::get_if<UNetConfig>(&config_)) return unet_forward(*this, *u, input);
    return fcdense_forward(*this, std::get<FCDenseConfig>(config_), input);
}

template <typename Real>
std::vector<Tensor<Real>> Model<Real>::parameters() const {
    std::vector<Tensor<Real>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
}

template <typename Real>
const Tensor<Real>& Model<Real>::parameter(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) fail(ErrorCode::ManifestMismatch, "model has no parameter '" + std::string(name) + "'");
    return params_[it->second].tensor;
}

template <typename Real>
std::size_t Model<Real>::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

template <typename Real>
Model<Real> Model<Real>::clone() const {
    Model m;
    m.config_ = config_;
    m.index_ = index_;
    for (const auto& p : params_) {
        Tensor<Real> t = p.tensor.clone();
        t.clear_grad();
        m.params_.push_back({p.name, std::move(t)});
    }
    return m;
}

template <typename Real>
void Model<Real>::clear_grads() {
    for (auto& p : params_) p.tensor.clear_grad();
}

template class Model<float>;
template class Model<double>;

} // namespace dendseg
