#pragma once

#include "dendseg/ops.hpp"
#include "dendseg/tensor.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace dendseg {

// ---------------------------------------------------------------------------
// Configurations
// ---------------------------------------------------------------------------

/// Encoder/decoder U-Net. Level i runs base_channels * 2^i filters; the
/// bottleneck sits at level `levels`.
struct UNetConfig {
    int dims = 3;
    int in_channels = 1;
    int out_channels = 1;
    int levels = 3;
    int base_channels = 8;
    bool residual = true; // parallel 1x1x1 conv summed into every block (3D only)

    friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// 3D fully convolutional DenseNet. layers_per_block holds one entry per
/// down-path level followed by the bottleneck entry.
struct FCDenseConfig {
    int growth_rate = 4;
    std::vector<int> layers_per_block{2, 2, 2};
    int initial_channels = 8;
    int levels = 2;

    friend bool operator==(const FCDenseConfig&, const FCDenseConfig&) = default;
};

using ModelConfig = std::variant<UNetConfig, FCDenseConfig>;

enum class Architecture : std::uint8_t { unet2d, unet3d, fcdense3d };

[[nodiscard]] Architecture architecture_of(const ModelConfig& config) noexcept;
[[nodiscard]] std::string_view to_string(Architecture a) noexcept;
[[nodiscard]] Architecture parse_architecture(std::string_view s);
/// Desk-scale defaults: 3D U-Net levels 3 base 8, FCDense k 4 layers [2,2,2],
/// 2D U-Net levels 4 base 8.
[[nodiscard]] ModelConfig default_config(Architecture a);

/// Throws ConfigInvalid.
void validate(const ModelConfig& config);

[[nodiscard]] nlohmann::json config_to_json(const ModelConfig& config);
[[nodiscard]] ModelConfig config_from_json(const nlohmann::json& j);

[[nodiscard]] int spatial_rank(const ModelConfig& config) noexcept;
[[nodiscard]] int pooling_levels(const ModelConfig& config) noexcept;

/// Pool/upsample kernel (d, h, w) at each level for an input of the given depth:
/// depth halves while it is even, otherwise the level pools only in-plane.
[[nodiscard]] std::vector<Int3> pooling_schedule(const ModelConfig& config, int depth);

/// Throws ShapeMismatch for a wrong rank or channel count and
/// IndivisibleInput when x/y are not divisible by 2^levels.
void check_input_shape(const ModelConfig& config, const Shape& shape);

/// Channels at every stage of an FCDense network.
struct FCDenseChannels {
    int initial = 0;
    std::vector<int> skip;       // dense block output per down level
    int bottleneck = 0;          // bottleneck block output
    std::vector<int> decoder;    // dense block output per up level (index = level)
};
[[nodiscard]] FCDenseChannels fcdense_channels(const FCDenseConfig& config);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename Real>
struct NamedParameter {
    std::string name;
    Tensor<Real> tensor;
};

template <typename Real>
class Model {
public:
    /// Kaiming-uniform (fan-in) weights, zero biases, seeded per parameter name.
    [[nodiscard]] static Model build(const ModelConfig& config, std::uint64_t seed);

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    [[nodiscard]] Architecture architecture() const noexcept { return architecture_of(config_); }

    /// Logits with the spatial shape of the input.
    [[nodiscard]] Tensor<Real> forward(const Tensor<Real>& input) const;

    [[nodiscard]] const std::vector<NamedParameter<Real>>& named_parameters() const noexcept { return params_; }
    [[nodiscard]] std::vector<Tensor<Real>> parameters() const;
    [[nodiscard]] const Tensor<Real>& parameter(std::string_view name) const;
    [[nodiscard]] std::size_t parameter_count() const noexcept;

    /// Deep copy with independent storage.
    [[nodiscard]] Model clone() const;
    void clear_grads();

private:
    Model() = default;
    void add_parameter(std::string name, Shape shape, std::size_t fan_in, std::uint64_t seed, bool is_bias);

    ModelConfig config_;
    std::vector<NamedParameter<Real>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace dendseg
