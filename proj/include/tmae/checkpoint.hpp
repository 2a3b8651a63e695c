#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tmae/config.hpp"
#include "tmae/layers.hpp"

namespace tmae {

/// Binary layout (little-endian):
///   "TMAE" | u32 version | u32 len, config text | u32 len, kind | u64 step | u32 count |
///   count x (u32 len, name | u32 rank | rank x u64 extent | f32 values)
struct Checkpoint {
    static constexpr std::uint32_t version = 1;

    struct Entry {
        std::string name;
        Shape shape;
        std::vector<float> values;
    };

    ModelConfig config;
    std::string kind;  // "mae", "upernet" or "unet"
    std::uint64_t step = 0;
    std::vector<Entry> tensors;

    const Entry* find(const std::string& name) const;
};

/// How to reconcile a different input channel count when loading.
enum class ChannelAdapter {
    None,
    Replicate,  // average weights over source channels, or tile a single source channel
};

void save_checkpoint(const Checkpoint& ckpt, std::ostream& out);
/// Writes to a sibling temporary and renames, so readers never see a partial file.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Reads the whole stream; throws FormatError on any inconsistency.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Adds every parameter under its name. Throws ContractError on non-finite values.
template <typename T>
void add_tensors(Checkpoint& ckpt, const ParamList<T>& params);

/// Copies stored values into params, all or nothing. Every param must be
/// present with a matching shape; the first offending one is named in the
/// FormatError. The adapter may reshape the patch-embedding and pixel
/// prediction tensors across channel counts.
template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, ParamList<T>& params, ChannelAdapter adapter = ChannelAdapter::None);

/// Views values as [outer x C_src x per_channel x inner] and returns
/// [outer x C_dst x per_channel x inner]: the channel mean when C_dst is 1,
/// copies of the single channel when C_src is 1.
std::vector<float> adapt_channels(const std::vector<float>& values, std::size_t outer, std::size_t src_channels,
                                  std::size_t dst_channels, std::size_t per_channel, std::size_t inner);

}  // namespace tmae
