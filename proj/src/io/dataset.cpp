#include "tmae/dataset.hpp"

#include "tmae/error.hpp"
#include "tmae/metrics.hpp"

namespace tmae {

LabelTarget parse_target(const std::string& name) {
    if (name == "buildings") return LabelTarget::Buildings;
    if (name == "roads") return LabelTarget::Roads;
    throw ConfigError("unknown label target '" + name + "' (expected buildings or roads)");
}

std::string target_name(LabelTarget target) { return target == LabelTarget::Buildings ? "buildings" : "roads"; }

std::uint64_t scene_seed(std::uint64_t corpus_seed, std::size_t index) {
    return Rng::derive(corpus_seed, index, 0x5ce9e).next_u64();
}

std::vector<Scene> synth_scenes(std::size_t count, const SceneParams& base) {
    base.validate();
    std::vector<Scene> scenes;
    scenes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        SceneParams p = base;
        p.seed = scene_seed(base.seed, i);
        scenes.push_back(synth_scene(p));
    }
    return scenes;
}

const LabelMask& scene_labels(const Scene& scene, LabelTarget target) {
    return target == LabelTarget::Buildings ? scene.buildings : scene.roads;
}

Sample make_sample(const Raster& dem, const LabelMask& labels) {
    if (dem.rows != dem.cols) throw DataError("sample rasters must be square");
    auto tiles = tile_raster(dem, dem.rows, dem.rows, &labels);
    Sample s;
    s.size = dem.rows;
    s.image = std::move(tiles.front().dem.elevations);
    s.labels = std::move(tiles.front().labels->classes);
    return s;
}

std::vector<Sample> load_samples(const std::vector<ManifestEntry>& entries, std::size_t n_classes,
                                 const std::string& split) {
    std::vector<Sample> out;
    for (const auto& e : entries) {
        if (!split.empty() && e.split != split) continue;
        const auto dem = read_ascii_grid(e.dem);
        const auto mask = read_mask_pgm(e.mask, n_classes);
        if (mask.rows != dem.rows || mask.cols != dem.cols)
            throw DataError("mask " + e.mask.string() + " does not match " + e.dem.string());
        out.push_back(make_sample(dem, mask));
    }
    return out;
}

std::vector<Sample> subsample(const std::vector<Sample>& samples, std::size_t count, std::uint64_t seed) {
    if (count == 0) return samples;
    const auto curve = sample_curve(samples.size(), {count}, seed, 0);
    std::vector<Sample> out;
    for (auto i : curve.train.front()) out.push_back(samples[i]);
    return out;
}

void corrupt_samples(std::vector<Sample>& samples, double drop_fraction, std::uint64_t seed) {
    if (drop_fraction < 0.0 || drop_fraction > 1.0) throw ConfigError("drop fraction must lie in [0, 1]");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& s = samples[i];
        Rng rng = Rng::derive(seed, i, 0xd409);
        s.labels = corrupt_labels(LabelMask{s.size, s.size, s.labels}, drop_fraction, rng).classes;
    }
}

void expand_channels(std::vector<Sample>& samples, std::size_t channels) {
    for (auto& s : samples) {
        if (s.channels == channels) continue;
        if (s.channels != 1) throw DataError("cannot expand a " + std::to_string(s.channels) + "-channel sample");
        std::vector<float> img;
        img.reserve(s.image.size() * channels);
        for (std::size_t c = 0; c < channels; ++c) img.insert(img.end(), s.image.begin(), s.image.end());
        s.image = std::move(img);
        s.channels = channels;
    }
}

}  // namespace tmae
