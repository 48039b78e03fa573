#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "rrrn/losses.hpp"
#include "rrrn/network.hpp"
#include "rrrn/optimizer.hpp"

namespace rrrn {

struct RunConfig {
    AdamOptions optimizer;
    int epochs = 50;
    int batch_size = 32;
    double learning_rate = 0.0005;
    LossWeights loss_weights;
    BackboneConfig backbone{BackboneVariant::Resnet18Style, 256, 224, false};
    std::uint64_t seed = 0;
    bool augmentation_enabled = true;
    bool region_attention = true;
    int attention_reduction = 2;

    void validate() const;
    ModelConfig model() const;
};

/// Flat `key = value` text. Blank lines and `#` comments are ignored; keys
/// are the dotted field names written by format_config.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& config);

/// Stable 16-hex-digit hash of the canonical config text.
std::string config_fingerprint(const RunConfig& config);

}  // namespace rrrn
