#include "tmae/dem.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "tmae/error.hpp"

namespace tmae {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

bool parse_double(const std::string& s, double& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

std::string lower(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

}  // namespace

Raster read_ascii_grid(std::istream& in) {
    Raster r;
    bool have_cols = false, have_rows = false, have_cell = false;
    std::string line;
    std::size_t lineno = 0;
    std::size_t expected = 0;
    bool in_body = false;
    while (std::getline(in, line)) {
        ++lineno;
        auto toks = split_ws(line);
        if (toks.empty()) continue;
        if (!in_body && std::isalpha(static_cast<unsigned char>(toks[0][0]))) {
            if (toks.size() != 2) throw ParseError(lineno, "expected '<key> <value>' in header");
            const auto key = lower(toks[0]);
            double v = 0;
            if (!parse_double(toks[1], v)) throw ParseError(lineno, "invalid number '" + toks[1] + "'");
            auto as_count = [&](std::size_t& dst) {
                if (v < 1 || v != std::floor(v) || v > 1e9) throw ParseError(lineno, key + " must be a positive integer");
                dst = static_cast<std::size_t>(v);
            };
            if (key == "ncols") {
                as_count(r.cols);
                have_cols = true;
            } else if (key == "nrows") {
                as_count(r.rows);
                have_rows = true;
            } else if (key == "xllcorner" || key == "xllcenter") {
                r.xll = v;
            } else if (key == "yllcorner" || key == "yllcenter") {
                r.yll = v;
            } else if (key == "cellsize") {
                if (!(v > 0)) throw ParseError(lineno, "cellsize must be positive");
                r.cellsize = v;
                have_cell = true;
            } else if (key == "nodata_value") {
                r.nodata = v;
            } else {
                throw ParseError(lineno, "unknown header key '" + toks[0] + "'");
            }
            continue;
        }
        if (!in_body) {
            if (!have_cols || !have_rows || !have_cell)
                throw ParseError(lineno, "header must define ncols, nrows and cellsize");
            in_body = true;
            expected = r.rows * r.cols;
            r.values.reserve(expected);
        }
        for (const auto& t : toks) {
            double v = 0;
            if (!parse_double(t, v)) throw ParseError(lineno, "invalid number '" + t + "'");
            if (r.values.size() == expected)
                throw ParseError(lineno, "more than " + std::to_string(expected) + " values");
            r.values.push_back(v == r.nodata ? static_cast<float>(r.nodata) : static_cast<float>(v));
        }
    }
    if (!in_body) throw ParseError(lineno, "missing grid body");
    if (r.values.size() != expected)
        throw ParseError(lineno, "expected " + std::to_string(expected) + " values, found " +
                                     std::to_string(r.values.size()));
    return r;
}

Raster read_ascii_grid(const fs::path& path) {
    auto in = open_in(path);
    return read_ascii_grid(in);
}

void write_ascii_grid(const Raster& r, std::ostream& out) {
    char buf[64];
    out << "ncols " << r.cols << '\n' << "nrows " << r.rows << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", r.xll);
    out << "xllcorner " << buf << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", r.yll);
    out << "yllcorner " << buf << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", r.cellsize);
    out << "cellsize " << buf << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", r.nodata);
    out << "NODATA_value " << buf << '\n';
    for (std::size_t i = 0; i < r.rows; ++i) {
        for (std::size_t j = 0; j < r.cols; ++j) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(r.at(i, j)));
            if (j) out << ' ';
            out << buf;
        }
        out << '\n';
    }
}

void write_ascii_grid(const Raster& raster, const fs::path& path) {
    auto out = open_out(path);
    write_ascii_grid(raster, out);
    if (!out) throw DataError("failed writing " + path.string());
}

DemTile local_normalize(const DemTile& tile) {
    if (tile.normalized) throw ContractError("tile is already normalized");
    DemTile out = tile;
    out.normalized = true;
    const float nd = static_cast<float>(tile.nodata);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (float v : tile.elevations) {
        if (v == nd) continue;
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
    }
    const bool flat = !(hi > lo);
    for (auto& v : out.elevations) {
        if (v == nd || flat)
            v = 0.0f;
        else
            v = static_cast<float>((static_cast<double>(v) - lo) / (hi - lo));
    }
    return out;
}

std::vector<TilePair> tile_raster(const Raster& raster, std::size_t tile_size, std::size_t stride,
                                  const LabelMask* labels) {
    if (tile_size == 0 || stride == 0) throw ConfigError("tile size and stride must be positive");
    if (tile_size > raster.rows || tile_size > raster.cols)
        throw ConfigError("tile " + std::to_string(tile_size) + " larger than raster " + std::to_string(raster.rows) +
                          "x" + std::to_string(raster.cols));
    if (labels && (labels->rows != raster.rows || labels->cols != raster.cols))
        throw ContractError("label mask extents differ from the raster");
    std::vector<TilePair> out;
    for (std::size_t r0 = 0; r0 + tile_size <= raster.rows; r0 += stride)
        for (std::size_t c0 = 0; c0 + tile_size <= raster.cols; c0 += stride) {
            DemTile t;
            t.size = tile_size;
            t.nodata = raster.nodata;
            t.origin_row = r0;
            t.origin_col = c0;
            t.elevations.resize(tile_size * tile_size);
            for (std::size_t i = 0; i < tile_size; ++i)
                std::copy_n(raster.values.begin() + static_cast<long>((r0 + i) * raster.cols + c0), tile_size,
                            t.elevations.begin() + static_cast<long>(i * tile_size));
            TilePair pair{local_normalize(t), std::nullopt};
            if (labels) {
                LabelMask m{tile_size, tile_size, std::vector<std::uint8_t>(tile_size * tile_size)};
                for (std::size_t i = 0; i < tile_size; ++i)
                    std::copy_n(labels->classes.begin() + static_cast<long>((r0 + i) * labels->cols + c0), tile_size,
                                m.classes.begin() + static_cast<long>(i * tile_size));
                pair.labels = std::move(m);
            }
            out.push_back(std::move(pair));
        }
    return out;
}

void SceneParams::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("scene params: " + m); };
    if (size < 8) fail("size must be at least 8");
    if (terrain_cells == 0) fail("terrain_cells must be positive");
    if (!(roughness >= 0)) fail("roughness must be non-negative");
    if (min_buildings > max_buildings) fail("building count range is empty");
    if (min_building_side == 0 || min_building_side > max_building_side || max_building_side > size)
        fail("building side range invalid");
    if (!(min_building_height > 0) || min_building_height > max_building_height) fail("building height range invalid");
    if (min_roads > max_roads) fail("road count range is empty");
    if (min_road_width == 0 || min_road_width > max_road_width || max_road_width >= size)
        fail("road width range invalid");
    if (!(road_depth >= 0)) fail("road_depth must be non-negative");
}

bool SceneParams::set(const std::string& key, const std::string& value) {
    auto as_size = [&](std::size_t& dst) {
        double v = 0;
        if (!parse_double(value, v) || v < 0 || v != std::floor(v)) throw ConfigError("invalid integer for " + key);
        dst = static_cast<std::size_t>(v);
    };
    auto as_double = [&](double& dst) {
        if (!parse_double(value, dst)) throw ConfigError("invalid number for " + key);
    };
    if (key == "scene_size") as_size(size);
    else if (key == "roughness") as_double(roughness);
    else if (key == "terrain_cells") as_size(terrain_cells);
    else if (key == "min_buildings") as_size(min_buildings);
    else if (key == "max_buildings") as_size(max_buildings);
    else if (key == "min_building_side") as_size(min_building_side);
    else if (key == "max_building_side") as_size(max_building_side);
    else if (key == "min_building_height") as_double(min_building_height);
    else if (key == "max_building_height") as_double(max_building_height);
    else if (key == "min_roads") as_size(min_roads);
    else if (key == "max_roads") as_size(max_roads);
    else if (key == "min_road_width") as_size(min_road_width);
    else if (key == "max_road_width") as_size(max_road_width);
    else if (key == "road_depth") as_double(road_depth);
    else return false;
    return true;
}

Scene synth_scene(const SceneParams& p) {
    p.validate();
    Rng rng(p.seed);
    const std::size_t n = p.size;
    const auto pick = [&](std::size_t lo, std::size_t hi) {
        return static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
    };

    // Terrain: bilinear interpolation of a coarse random lattice.
    const std::size_t g = p.terrain_cells + 1;
    std::vector<double> lattice(g * g);
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
    std::vector<double> terrain(n * n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(n) * static_cast<double>(p.terrain_cells);
            const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(n) * static_cast<double>(p.terrain_cells);
            const auto y0 = std::min(static_cast<std::size_t>(y), p.terrain_cells - 1);
            const auto x0 = std::min(static_cast<std::size_t>(x), p.terrain_cells - 1);
            const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
            const double v = (1 - fy) * ((1 - fx) * lattice[y0 * g + x0] + fx * lattice[y0 * g + x0 + 1]) +
                             fy * ((1 - fx) * lattice[(y0 + 1) * g + x0] + fx * lattice[(y0 + 1) * g + x0 + 1]);
            terrain[r * n + c] = 100.0 + p.roughness * v;
        }
    std::vector<double> elev = terrain;

    // Roads: straight or L-shaped axis-aligned corridors, lowered and flattened.
    LabelMask roads{n, n, std::vector<std::uint8_t>(n * n, 0)};
    const std::size_t n_roads = pick(p.min_roads, p.max_roads);
    for (std::size_t k = 0; k < n_roads; ++k) {
        const std::size_t w = pick(p.min_road_width, p.max_road_width);
        std::vector<std::size_t> cells;
        auto mark = [&](std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
            for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t c = c0; c < c1; ++c) cells.push_back(r * n + c);
        };
        const bool horizontal = rng.uniform() < 0.5;
        const std::size_t off = pick(0, n - w);
        if (rng.uniform() < 0.5) {
            if (horizontal) mark(off, off + w, 0, n);
            else mark(0, n, off, off + w);
        } else {
            // One turn: run from one edge to the turn, then to another edge.
            const std::size_t turn = pick(0, n - w);
            const bool forward = rng.uniform() < 0.5;
            const bool down = rng.uniform() < 0.5;
            if (horizontal) {
                if (forward) mark(off, off + w, 0, turn + w);
                else mark(off, off + w, turn, n);
                if (down) mark(off, n, turn, turn + w);
                else mark(0, off + w, turn, turn + w);
            } else {
                if (forward) mark(0, turn + w, off, off + w);
                else mark(turn, n, off, off + w);
                if (down) mark(turn, turn + w, off, n);
                else mark(turn, turn + w, 0, off + w);
            }
        }
        double mean = 0;
        for (auto i : cells) mean += terrain[i];
        mean /= static_cast<double>(cells.size());
        for (auto i : cells) {
            elev[i] = mean - p.road_depth;
            roads.classes[i] = 1;
        }
    }

    // Buildings: flat-topped rectangles kept one pixel clear of roads and each other.
    LabelMask buildings{n, n, std::vector<std::uint8_t>(n * n, 0)};
    const std::size_t n_buildings = pick(p.min_buildings, p.max_buildings);
    constexpr int max_attempts = 1000;
    for (std::size_t k = 0; k < n_buildings; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < max_attempts && !placed; ++attempt) {
            const std::size_t h = pick(p.min_building_side, p.max_building_side);
            const std::size_t w = pick(p.min_building_side, p.max_building_side);
            const std::size_t r0 = pick(0, n - h), c0 = pick(0, n - w);
            bool clear = true;
            for (std::size_t r = (r0 ? r0 - 1 : 0); clear && r < std::min(n, r0 + h + 1); ++r)
                for (std::size_t c = (c0 ? c0 - 1 : 0); c < std::min(n, c0 + w + 1); ++c)
                    if (roads.classes[r * n + c] || buildings.classes[r * n + c]) {
                        clear = false;
                        break;
                    }
            if (!clear) continue;
            const double height = rng.uniform(p.min_building_height, p.max_building_height);
            double base = -std::numeric_limits<double>::infinity();
            for (std::size_t r = r0; r < r0 + h; ++r)
                for (std::size_t c = c0; c < c0 + w; ++c) base = std::max(base, terrain[r * n + c]);
            for (std::size_t r = r0; r < r0 + h; ++r)
                for (std::size_t c = c0; c < c0 + w; ++c) {
                    elev[r * n + c] = base + height;
                    buildings.classes[r * n + c] = 1;
                }
            placed = true;
        }
        if (!placed)
            throw GenerationError("could not place building " + std::to_string(k + 1) + " of " +
                                  std::to_string(n_buildings) + " after " + std::to_string(max_attempts) +
                                  " attempts (seed " + std::to_string(p.seed) + ")");
    }

    Scene s;
    s.dem.rows = s.dem.cols = n;
    s.dem.values.assign(elev.begin(), elev.end());
    s.ground.assign(terrain.begin(), terrain.end());
    s.buildings = std::move(buildings);
    s.roads = std::move(roads);
    return s;
}

std::size_t label_components(const LabelMask& mask, std::vector<std::uint32_t>* ids) {
    const std::size_t rows = mask.rows, cols = mask.cols;
    std::vector<std::uint32_t> comp(rows * cols, 0);
    std::uint32_t next = 0;
    std::vector<std::size_t> stack;
    auto fg = [&](std::size_t i) { return mask.classes[i] != 0 && mask.classes[i] != LabelMask::ignore; };
    for (std::size_t start = 0; start < rows * cols; ++start) {
        if (!fg(start) || comp[start]) continue;
        comp[start] = ++next;
        stack.push_back(start);
        while (!stack.empty()) {
            const auto i = stack.back();
            stack.pop_back();
            const std::size_t r = i / cols, c = i % cols;
            auto visit = [&](std::size_t j) {
                if (fg(j) && !comp[j]) {
                    comp[j] = next;
                    stack.push_back(j);
                }
            };
            if (r > 0) visit(i - cols);
            if (r + 1 < rows) visit(i + cols);
            if (c > 0) visit(i - 1);
            if (c + 1 < cols) visit(i + 1);
        }
    }
    if (ids) *ids = std::move(comp);
    return next;
}

LabelMask corrupt_labels(const LabelMask& mask, double drop_fraction, Rng& rng) {
    if (!(drop_fraction >= 0.0 && drop_fraction <= 1.0)) throw ConfigError("drop fraction must lie in [0, 1]");
    std::vector<std::uint32_t> ids;
    const std::size_t n = label_components(mask, &ids);
    std::vector<bool> drop(n + 1, false);
    for (std::size_t k = 1; k <= n; ++k) drop[k] = rng.uniform() < drop_fraction;
    LabelMask out = mask;
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] && drop[ids[i]]) out.classes[i] = 0;
    return out;
}

void write_mask_pgm(const LabelMask& mask, std::size_t n_classes, std::ostream& out) {
    if (n_classes < 2 || n_classes > 256) throw ContractError("PGM masks need 2 to 256 classes");
    out << "P5 " << mask.cols << ' ' << mask.rows << " 255\n";
    std::vector<char> bytes(mask.classes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const auto id = mask.classes[i];
        if (id >= n_classes) throw ContractError("class id " + std::to_string(id) + " not below " + std::to_string(n_classes));
        bytes[i] = static_cast<char>(static_cast<unsigned char>(
            std::lround(static_cast<double>(id) * 255.0 / static_cast<double>(n_classes - 1))));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_mask_pgm(const LabelMask& mask, std::size_t n_classes, const fs::path& path) {
    auto out = open_out(path);
    write_mask_pgm(mask, n_classes, out);
    if (!out) throw DataError("failed writing " + path.string());
}

namespace {

std::string pgm_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

}  // namespace

LabelMask read_mask_pgm(std::istream& in, std::size_t n_classes) {
    if (n_classes < 2 || n_classes > 256) throw ContractError("PGM masks need 2 to 256 classes");
    if (pgm_token(in) != "P5") throw FormatError("not a binary PGM (P5) file");
    double w = 0, h = 0, maxval = 0;
    if (!parse_double(pgm_token(in), w) || !parse_double(pgm_token(in), h) || !parse_double(pgm_token(in), maxval) ||
        w < 1 || h < 1 || maxval != 255)
        throw FormatError("malformed PGM header");
    LabelMask m;
    m.cols = static_cast<std::size_t>(w);
    m.rows = static_cast<std::size_t>(h);
    std::vector<char> bytes(m.rows * m.cols);
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError("truncated PGM pixel data");
    const double k1 = static_cast<double>(n_classes - 1);
    m.classes.resize(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const auto v = static_cast<unsigned char>(bytes[i]);
        const auto id = std::lround(v * k1 / 255.0);
        if (std::lround(static_cast<double>(id) * 255.0 / k1) != v)
            throw FormatError("pixel value " + std::to_string(v) + " at (" + std::to_string(i / m.cols) + ", " +
                              std::to_string(i % m.cols) + ") is not a level of a " + std::to_string(n_classes) +
                              "-class mask");
        m.classes[i] = static_cast<std::uint8_t>(id);
    }
    return m;
}

LabelMask read_mask_pgm(const fs::path& path, std::size_t n_classes) {
    auto in = open_in(path);
    return read_mask_pgm(in, n_classes);
}

void write_gray_pgm(const std::vector<float>& values, std::size_t rows, std::size_t cols, const fs::path& path) {
    if (values.size() != rows * cols) throw ContractError("preview size mismatch");
    auto out = open_out(path);
    out << "P5 " << cols << ' ' << rows << " 255\n";
    std::vector<char> bytes(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::clamp(static_cast<double>(values[i]), 0.0, 1.0);
        bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<ManifestEntry> read_manifest(std::istream& in, const fs::path& base_dir) {
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const auto tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty())
            throw ParseError(lineno, "expected dem<TAB>mask<TAB>split");
        auto resolve = [&](const std::string& p) {
            fs::path path(p);
            return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
        };
        out.push_back({resolve(fields[0]), resolve(fields[1]), fields[2]});
    }
    return out;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    auto in = open_in(path);
    return read_manifest(in, path.parent_path());
}

void write_manifest(const std::vector<ManifestEntry>& entries, std::ostream& out) {
    for (const auto& e : entries) out << e.dem.generic_string() << '\t' << e.mask.generic_string() << '\t' << e.split << '\n';
}

}  // namespace tmae
