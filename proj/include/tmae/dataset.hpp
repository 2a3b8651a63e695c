#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tmae/dem.hpp"
#include "tmae/train.hpp"

namespace tmae {

enum class LabelTarget { Buildings, Roads };

/// "buildings" or "roads"; ConfigError otherwise.
LabelTarget parse_target(const std::string& name);
std::string target_name(LabelTarget target);

/// Seed of the index-th scene of a corpus.
std::uint64_t scene_seed(std::uint64_t corpus_seed, std::size_t index);

/// count scenes sharing base, scene i drawn with scene_seed(base.seed, i).
std::vector<Scene> synth_scenes(std::size_t count, const SceneParams& base);

const LabelMask& scene_labels(const Scene& scene, LabelTarget target);

/// A square raster and its labels as one locally normalized sample.
Sample make_sample(const Raster& dem, const LabelMask& labels);

/// Reads every manifest entry whose split matches (all entries when split is empty).
std::vector<Sample> load_samples(const std::vector<ManifestEntry>& entries, std::size_t n_classes,
                                 const std::string& split = "");

/// The training subset of the given size from sample_curve(seed) without a
/// validation part; all samples when count is 0.
std::vector<Sample> subsample(const std::vector<Sample>& samples, std::size_t count, std::uint64_t seed);

/// corrupt_labels on every sample; sample i draws from stream (seed, i).
void corrupt_samples(std::vector<Sample>& samples, double drop_fraction, std::uint64_t seed);

/// Repeats single-channel images to the given channel count.
void expand_channels(std::vector<Sample>& samples, std::size_t channels);

}  // namespace tmae
