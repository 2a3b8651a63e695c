#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace tmae {

/// Architectural hyperparameters shared by the backbone, MAE decoder and heads.
struct ModelConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t in_channels = 1;
    std::size_t embed_dim = 64;
    std::size_t encoder_blocks = 4;
    std::size_t encoder_heads = 4;
    std::size_t decoder_dim = 32;
    std::size_t decoder_blocks = 2;
    std::size_t decoder_heads = 4;
    double mask_ratio = 0.75;
    std::vector<std::size_t> tap_blocks{0, 1, 2, 3};  // 0-based; the UperNet head needs 4
    std::size_t n_classes = 2;
    std::size_t mlp_ratio = 4;
    std::size_t head_width = 32;  // UperNet channel width
    std::size_t unet_base = 16;   // UNet first-level width, doubled per level

    /// 224 px, 16 px patches, 768/12/12 encoder, 512/8/16 decoder, taps {3,5,7,11}.
    static ModelConfig paper();
    /// 32 px, 4 px patches, 64/4/4 encoder, 32/2/4 decoder, taps {0,1,2,3}.
    static ModelConfig tiny();
    static ModelConfig preset(const std::string& name);

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t n_tokens() const { return grid() * grid(); }
    std::size_t patch_dim() const { return patch_size * patch_size * in_channels; }

    /// Throws ConfigError naming the violated constraint.
    void validate() const;

    /// key=value lines, one per field, in a fixed order.
    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);

    /// Applies one key=value override; returns false when the key is unknown.
    bool set(const std::string& key, const std::string& value);

    bool operator==(const ModelConfig&) const = default;
};

/// Parses "key=value" lines (blank lines and '#' comments allowed).
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace tmae
