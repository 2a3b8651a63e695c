#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tmae/rng.hpp"

namespace tmae {

/// Single-band elevation raster in row-major order.
struct Raster {
    std::size_t rows = 0, cols = 0;
    double xll = 0.0, yll = 0.0;
    double cellsize = 1.0;
    double nodata = -9999.0;
    std::vector<float> values;

    float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    bool is_nodata(float v) const { return v == static_cast<float>(nodata); }
};

/// ESRI ASCII grid. Throws ParseError with the offending line number.
Raster read_ascii_grid(std::istream& in);
Raster read_ascii_grid(const std::filesystem::path& path);
void write_ascii_grid(const Raster& raster, std::ostream& out);
void write_ascii_grid(const Raster& raster, const std::filesystem::path& path);

struct DemTile {
    std::size_t size = 0;  // square side
    std::vector<float> elevations;
    double nodata = -9999.0;
    std::size_t origin_row = 0, origin_col = 0;
    bool normalized = false;
};

struct LabelMask {
    static constexpr std::uint8_t ignore = 255;
    std::size_t rows = 0, cols = 0;
    std::vector<std::uint8_t> classes;

    bool operator==(const LabelMask&) const = default;
};

/// (v - min) / (max - min) over valid cells; nodata becomes 0; flat tiles become all 0.
DemTile local_normalize(const DemTile& tile);

struct TilePair {
    DemTile dem;
    std::optional<LabelMask> labels;
};

/// Row-major sliding windows; windows crossing the far edge are dropped.
/// Each tile is normalized after cutting.
std::vector<TilePair> tile_raster(const Raster& raster, std::size_t tile_size, std::size_t stride,
                                  const LabelMask* labels = nullptr);

struct SceneParams {
    std::uint64_t seed = 0;
    std::size_t size = 32;
    double roughness = 4.0;  // terrain amplitude, m
    std::size_t terrain_cells = 4;
    std::size_t min_buildings = 1, max_buildings = 4;
    std::size_t min_building_side = 3, max_building_side = 8;  // px
    double min_building_height = 6.0, max_building_height = 20.0;  // m
    std::size_t min_roads = 1, max_roads = 2;
    std::size_t min_road_width = 2, max_road_width = 3;  // px
    double road_depth = 1.0;  // m

    /// Throws ConfigError on empty or non-positive ranges.
    void validate() const;
    /// Applies one key=value override; false when the key is unknown.
    bool set(const std::string& key, const std::string& value);
};

struct Scene {
    Raster dem;
    std::vector<float> ground;  // terrain before roads and buildings
    LabelMask buildings;
    LabelMask roads;
};

/// Deterministic per seed. Throws GenerationError when buildings cannot be placed.
Scene synth_scene(const SceneParams& params);

/// Drops each 4-connected foreground component (relabelled to 0) with
/// probability drop_fraction.
LabelMask corrupt_labels(const LabelMask& mask, double drop_fraction, Rng& rng);

/// Labels 4-connected foreground (non-zero, non-ignore) components; returns the count.
std::size_t label_components(const LabelMask& mask, std::vector<std::uint32_t>* ids = nullptr);

/// Binary P5 with class ids scaled by 255 / (K - 1).
void write_mask_pgm(const LabelMask& mask, std::size_t n_classes, std::ostream& out);
void write_mask_pgm(const LabelMask& mask, std::size_t n_classes, const std::filesystem::path& path);
LabelMask read_mask_pgm(std::istream& in, std::size_t n_classes);
LabelMask read_mask_pgm(const std::filesystem::path& path, std::size_t n_classes);
/// Grey-level preview of values in [0, 1] (clamped).
void write_gray_pgm(const std::vector<float>& values, std::size_t rows, std::size_t cols,
                    const std::filesystem::path& path);

struct ManifestEntry {
    std::filesystem::path dem;
    std::filesystem::path mask;
    std::string split;

    bool operator==(const ManifestEntry&) const = default;
};

/// "dem<TAB>mask<TAB>split" lines; relative paths resolve against base_dir.
std::vector<ManifestEntry> read_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, std::ostream& out);

}  // namespace tmae
