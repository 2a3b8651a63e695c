#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "../support/fixtures.hpp"
#include "tmae/checkpoint.hpp"
#include "tmae/dataset.hpp"
#include "tmae/dem.hpp"
#include "tmae/error.hpp"
#include "tmae/mae.hpp"

using namespace tmae;
using tmae::testing::TempDir;
namespace fs = std::filesystem;

namespace {

Raster make_raster(std::size_t rows, std::size_t cols, Rng& rng) {
    Raster r;
    r.rows = rows;
    r.cols = cols;
    r.values.resize(rows * cols);
    for (auto& v : r.values) v = static_cast<float>(rng.uniform(-50, 3000));
    return r;
}

int parse_error_line(const std::string& text) {
    std::istringstream in(text);
    try {
        read_ascii_grid(in);
    } catch (const ParseError& e) {
        return static_cast<int>(e.line());
    }
    return -1;
}

}  // namespace

TEST_CASE("ascii grid parses a small example") {
    std::istringstream in("ncols 2\nnrows 2\nxllcorner 10\nyllcorner 20\ncellsize 0.5\nNODATA_value -9999\n1 2\n3 4\n");
    auto r = read_ascii_grid(in);
    CHECK(r.rows == 2);
    CHECK(r.cols == 2);
    CHECK(r.values == std::vector<float>{1, 2, 3, 4});
    CHECK(r.xll == 10);
    CHECK(r.cellsize == 0.5);

    std::istringstream nd("ncols 3\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n5 -9999 7\n");
    auto with_nodata = read_ascii_grid(nd);
    CHECK(with_nodata.is_nodata(with_nodata.values[1]));
    CHECK_FALSE(with_nodata.is_nodata(with_nodata.values[0]));
}

TEST_CASE("ascii grid errors carry the line") {
    CHECK(parse_error_line("ncols 2\nnrows 2\ncellsize 1\n1 2\n3\n") == 5);
    CHECK(parse_error_line("ncols 2\nnrows 2\ncellsize 1\n1 2\n3 x\n") == 5);
    CHECK(parse_error_line("ncols two\nnrows 2\ncellsize 1\n1 2\n3 4\n") == 1);
    CHECK(parse_error_line("nrows 2\ncellsize 1\n1 2\n3 4\n") > 0);
    CHECK(parse_error_line("ncols 2\nnrows 2\ncellsize 1\n1 2\n3 4\n5 6\n") > 0);
    CHECK(parse_error_line("ncols 2\nnrows 2\ncellsize 1\n1 2 3 4\n") == -1);
}

TEST_CASE("ascii grid round trip is value exact") {
    Rng rng(1);
    for (int rep = 0; rep < 10; ++rep) {
        auto r = make_raster(1 + rng.below(20), 1 + rng.below(20), rng);
        r.xll = rng.uniform(-1e5, 1e5);
        r.cellsize = 0.3;
        r.values[0] = -9999.0f;
        r.values.back() = std::nextafter(1.0f, 2.0f);
        std::stringstream io;
        write_ascii_grid(r, io);
        auto back = read_ascii_grid(io);
        CHECK(back.rows == r.rows);
        CHECK(back.cols == r.cols);
        CHECK(back.xll == r.xll);
        CHECK(back.cellsize == r.cellsize);
        CHECK(std::memcmp(back.values.data(), r.values.data(), r.values.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("local normalization") {
    DemTile t{2, {10, 20, 30, 40}};
    auto n = local_normalize(t);
    CHECK(n.normalized);
    CHECK(n.elevations[0] == 0.0f);
    CHECK(n.elevations[1] == doctest::Approx(1.0 / 3.0));
    CHECK(n.elevations[2] == doctest::Approx(2.0 / 3.0));
    CHECK(n.elevations[3] == 1.0f);
    CHECK_THROWS_AS(local_normalize(n), ContractError);

    auto flat = local_normalize(DemTile{2, {5, 5, 5, 5}});
    for (float v : flat.elevations) CHECK(v == 0.0f);

    auto holes = local_normalize(DemTile{2, {-9999, 3, 5, -9999}});
    CHECK(holes.elevations == std::vector<float>{0, 0, 1, 0});

    DemTile unit{2, {0, 0.25f, 1, 0.5f}};
    CHECK(local_normalize(unit).elevations == unit.elevations);

    Rng rng(2);
    DemTile r{4, {}};
    for (int i = 0; i < 16; ++i) r.elevations.push_back(static_cast<float>(rng.uniform(0, 100)));
    DemTile shifted = r;
    for (auto& v : shifted.elevations) v += 1000.0f;
    auto a = local_normalize(r), b = local_normalize(shifted);
    for (std::size_t i = 0; i < 16; ++i) CHECK(a.elevations[i] == doctest::Approx(b.elevations[i]).epsilon(1e-4));
}

TEST_CASE("tiling counts and coverage") {
    Rng rng(3);
    CHECK(tile_raster(make_raster(448, 448, rng), 224, 224).size() == 4);
    CHECK(tile_raster(make_raster(450, 450, rng), 224, 224).size() == 4);
    CHECK(tile_raster(make_raster(10, 12, rng), 4, 2).size() == 4 * 5);
    CHECK_THROWS_AS(tile_raster(make_raster(10, 10, rng), 11, 11), ConfigError);
    CHECK_THROWS_AS(tile_raster(make_raster(10, 10, rng), 4, 0), ConfigError);

    auto raster = make_raster(12, 8, rng);
    LabelMask labels{12, 8, std::vector<std::uint8_t>(96)};
    for (std::size_t i = 0; i < 96; ++i) labels.classes[i] = static_cast<std::uint8_t>(i % 3);
    auto tiles = tile_raster(raster, 4, 4, &labels);
    REQUIRE(tiles.size() == 6);
    std::vector<int> covered(96, 0);
    for (const auto& t : tiles) {
        CHECK(t.dem.normalized);
        REQUIRE(t.labels);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                const std::size_t src = (t.dem.origin_row + i) * 8 + t.dem.origin_col + j;
                ++covered[src];
                CHECK(t.labels->classes[i * 4 + j] == labels.classes[src]);
            }
    }
    for (int c : covered) CHECK(c == 1);
    CHECK(tiles[1].dem.origin_row == 0);
    CHECK(tiles[1].dem.origin_col == 4);
}

TEST_CASE("synthetic scenes are deterministic") {
    Rng rng(4);
    for (int rep = 0; rep < 100; ++rep) {
        SceneParams p;
        p.seed = rng.next_u64();
        auto a = synth_scene(p), b = synth_scene(p);
        REQUIRE(std::memcmp(a.dem.values.data(), b.dem.values.data(), a.dem.values.size() * sizeof(float)) == 0);
        REQUIRE(a.buildings == b.buildings);
        REQUIRE(a.roads == b.roads);
    }
}

TEST_CASE("synthetic scenes follow their construction rules") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        SceneParams p;
        p.seed = seed;
        auto s = synth_scene(p);
        REQUIRE(s.ground.size() == s.dem.values.size());
        std::size_t building_px = 0;
        for (std::size_t i = 0; i < s.dem.values.size(); ++i) {
            CHECK_FALSE((s.buildings.classes[i] && s.roads.classes[i]));
            if (s.buildings.classes[i]) {
                ++building_px;
                CHECK(s.dem.values[i] >= s.ground[i] + static_cast<float>(p.min_building_height) - 1e-3f);
            }
        }
        CHECK(building_px > 0);
        CHECK(label_components(s.roads) >= 1);
        CHECK(label_components(s.buildings) >= p.min_buildings);
    }

    SceneParams flat;
    flat.seed = 9;
    flat.roughness = 0;
    flat.min_roads = flat.max_roads = 0;
    flat.min_buildings = flat.max_buildings = 1;
    flat.min_building_height = flat.max_building_height = 10;
    auto s = synth_scene(flat);
    auto tiles = tile_raster(s.dem, flat.size, flat.size);
    for (std::size_t i = 0; i < s.dem.values.size(); ++i) {
        CHECK(s.dem.values[i] == (s.buildings.classes[i] ? 110.0f : 100.0f));
        CHECK(tiles[0].dem.elevations[i] == (s.buildings.classes[i] ? 1.0f : 0.0f));
    }
}

TEST_CASE("scene params validation and overrides") {
    SceneParams p;
    p.validate();
    CHECK(p.set("roughness", "2.5"));
    CHECK(p.roughness == 2.5);
    CHECK(p.set("max_buildings", "6"));
    CHECK_FALSE(p.set("bogus", "1"));
    CHECK_THROWS_AS(p.set("max_buildings", "1.5"), ConfigError);
    p.min_building_height = 30;
    CHECK_THROWS_AS(p.validate(), ConfigError);

    SceneParams crowded;
    crowded.size = 8;
    crowded.min_buildings = crowded.max_buildings = 30;
    crowded.min_building_side = crowded.max_building_side = 3;
    crowded.max_road_width = 2;
    CHECK_THROWS_AS(synth_scene(crowded), GenerationError);
}

TEST_CASE("label corruption drops whole components") {
    LabelMask m{6, 6, std::vector<std::uint8_t>(36, 0)};
    // Six separate components; the ignore pixel joins nothing.
    for (auto i : {0, 1, 6, 3, 4, 18, 20, 22, 23, 35}) m.classes[static_cast<std::size_t>(i)] = 1;
    m.classes[30] = LabelMask::ignore;
    REQUIRE(label_components(m) == 6);

    Rng rng(5);
    CHECK(corrupt_labels(m, 0.0, rng) == m);
    auto gone = corrupt_labels(m, 1.0, rng);
    for (std::size_t i = 0; i < 36; ++i) CHECK(gone.classes[i] == (i == 30 ? LabelMask::ignore : 0));
    CHECK_THROWS_AS(corrupt_labels(m, 1.5, rng), ConfigError);
    CHECK_THROWS_AS(corrupt_labels(m, -0.1, rng), ConfigError);

    std::vector<std::uint32_t> before_ids;
    label_components(m, &before_ids);
    for (int rep = 0; rep < 50; ++rep) {
        Rng a(100 + rep), b(100 + rep);
        auto out = corrupt_labels(m, 0.4, a);
        CHECK(out == corrupt_labels(m, 0.4, b));
        // Every component is either untouched or gone.
        std::map<std::uint32_t, std::pair<int, int>> kept;
        for (std::size_t i = 0; i < 36; ++i)
            if (before_ids[i]) {
                auto& k = kept[before_ids[i]];
                (out.classes[i] ? k.first : k.second)++;
            }
        std::size_t survivors = 0;
        for (auto& [id, k] : kept) {
            CHECK((k.first == 0 || k.second == 0));
            survivors += k.first > 0;
        }
        CHECK(label_components(out) == survivors);
    }

    // Mean survival over many masks tracks 1 - f.
    SceneParams p;
    std::size_t before = 0, after = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        p.seed = seed;
        auto s = synth_scene(p);
        Rng r(seed);
        before += label_components(s.buildings);
        after += label_components(corrupt_labels(s.buildings, 0.3, r));
    }
    CHECK(static_cast<double>(after) / static_cast<double>(before) == doctest::Approx(0.7).epsilon(0.08));
}

TEST_CASE("mask pgm format and round trip") {
    LabelMask m{2, 3, {0, 1, 1, 0, 255, 1}};
    std::stringstream io;
    write_mask_pgm(LabelMask{2, 3, {0, 1, 1, 0, 0, 1}}, 2, io);
    const std::string bytes = io.str();
    CHECK(bytes.rfind("P5 3 2 255\n", 0) == 0);
    CHECK(bytes.size() == 11 + 6);
    CHECK(static_cast<unsigned char>(bytes[11 + 1]) == 255);
    CHECK(static_cast<unsigned char>(bytes[11]) == 0);

    Rng rng(6);
    for (std::size_t k : {2, 3, 7, 256}) {
        LabelMask r{5, 4, std::vector<std::uint8_t>(20)};
        for (auto& v : r.classes) v = static_cast<std::uint8_t>(rng.below(k));
        std::stringstream s;
        write_mask_pgm(r, k, s);
        CHECK(read_mask_pgm(s, k) == r);
    }

    std::istringstream commented(std::string("P5\n# made by hand\n2 1\n255\n\xff\x00", 28), std::ios::binary);
    auto c = read_mask_pgm(commented, 2);
    CHECK(c.classes == std::vector<std::uint8_t>{1, 0});
    std::istringstream bad("P2 2 1 255\n0 0");
    CHECK_THROWS_AS(read_mask_pgm(bad, 2), FormatError);
    std::istringstream odd(std::string("P5 2 1 255\n\x80\x00", 13), std::ios::binary);
    CHECK_THROWS_AS(read_mask_pgm(odd, 2), FormatError);
    std::istringstream short_body(std::string("P5 4 4 255\n\x00", 12), std::ios::binary);
    CHECK_THROWS_AS(read_mask_pgm(short_body, 2), FormatError);
}

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng(7);
    MaeModel<float> mae(ModelConfig::tiny(), rng);
    Checkpoint ck{mae.config(), "mae", 42, {}};
    add_tensors(ck, mae.params());
    std::stringstream io;
    save_checkpoint(ck, io);
    auto back = load_checkpoint(io);
    CHECK(back.config == ck.config);
    CHECK(back.kind == "mae");
    CHECK(back.step == 42);
    REQUIRE(back.tensors.size() == ck.tensors.size());

    Rng other(8);
    MaeModel<float> fresh(ModelConfig::tiny(), other);
    auto params = fresh.params();
    apply_checkpoint(back, params);
    auto want = snapshot(mae.params()), got = snapshot(params);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(std::memcmp(want[i].data(), got[i].data(), want[i].size() * sizeof(float)) == 0);

    std::stringstream again;
    save_checkpoint(back, again);
    CHECK(again.str() == io.str());
    CHECK(io.str().substr(0, 4) == "TMAE");
}

TEST_CASE("checkpoint loading rejects damage without touching the model") {
    Rng rng(9);
    MaeModel<float> mae(ModelConfig::tiny(), rng);
    Checkpoint ck{mae.config(), "mae", 1, {}};
    add_tensors(ck, mae.params());
    std::stringstream io;
    save_checkpoint(ck, io);
    const std::string bytes = io.str();

    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
        std::istringstream in(bytes.substr(0, cut));
        CHECK_THROWS_AS(load_checkpoint(in), FormatError);
    }
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    std::istringstream bm(bad_magic);
    CHECK_THROWS_AS(load_checkpoint(bm), FormatError);
    std::string bad_version = bytes;
    bad_version[4] = 9;
    std::istringstream bv(bad_version);
    CHECK_THROWS_AS(load_checkpoint(bv), FormatError);
    std::istringstream trailing(bytes + "x");
    CHECK_THROWS_AS(load_checkpoint(trailing), FormatError);

    Rng other(10);
    MaeModel<float> target(ModelConfig::tiny(), other);
    auto params = target.params();
    const auto before = snapshot(params);
    Checkpoint missing = ck;
    missing.tensors.pop_back();
    try {
        apply_checkpoint(missing, params);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find(params.back().name) != std::string::npos);
    }
    Checkpoint reshaped = ck;
    reshaped.tensors[3].shape = {1, reshaped.tensors[3].values.size()};
    try {
        apply_checkpoint(reshaped, params);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find(ck.tensors[3].name) != std::string::npos);
    }
    const auto after = snapshot(params);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);

    auto poisoned = mae.params();
    auto w = poisoned[0].tensor;
    w.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    Checkpoint nan_ck;
    CHECK_THROWS_AS(add_tensors(nan_ck, poisoned), ContractError);
}

TEST_CASE("channel adapter") {
    // [outer=1 x C=3 x per=2 x inner=1]
    std::vector<float> three{1, 2, 3, 4, 5, 9};
    auto mean = adapt_channels(three, 1, 3, 1, 2, 1);
    CHECK(mean[0] == doctest::Approx(3.0));
    CHECK(mean[1] == doctest::Approx(5.0));
    auto tiled = adapt_channels(std::vector<float>{7, 8}, 1, 1, 3, 2, 1);
    CHECK(tiled == std::vector<float>{7, 8, 7, 8, 7, 8});
    CHECK_THROWS_AS(adapt_channels(three, 1, 3, 2, 2, 1), FormatError);

    auto rgb = ModelConfig::tiny();
    rgb.in_channels = 3;
    Rng rng(11);
    MaeModel<float> source(rgb, rng);
    Checkpoint ck{rgb, "mae", 0, {}};
    add_tensors(ck, source.params());

    MaeModel<float> gray(ModelConfig::tiny(), rng);
    auto params = gray.params();
    CHECK_THROWS_AS(apply_checkpoint(ck, params), FormatError);
    apply_checkpoint(ck, params, ChannelAdapter::Replicate);

    const auto& w3 = source.encoder().patch_embed().weight;  // [3*16 x D]
    const auto& w1 = gray.encoder().patch_embed().weight;    // [16 x D]
    const std::size_t pp = 16, d = rgb.embed_dim;
    for (std::size_t i = 0; i < pp; ++i)
        for (std::size_t j = 0; j < d; j += 7) {
            const double m = (static_cast<double>(w3.data()[i * d + j]) + w3.data()[(pp + i) * d + j] +
                              w3.data()[(2 * pp + i) * d + j]) /
                             3.0;
            CHECK(w1.data()[i * d + j] == doctest::Approx(m).epsilon(1e-6));
        }
}

TEST_CASE("checkpoint files are replaced atomically") {
    TempDir dir;
    Rng rng(12);
    Linear<float> lin(2, 3, rng);
    ParamList<float> params;
    lin.collect(params, "lin");
    Checkpoint ck{ModelConfig::tiny(), "mae", 0, {}};
    add_tensors(ck, params);
    const auto path = dir.path / "a.ckpt";
    save_checkpoint(ck, path);
    CHECK(fs::exists(path));
    CHECK_FALSE(fs::exists(dir.path / "a.ckpt.tmp"));
    CHECK(load_checkpoint(path).tensors.size() == 2);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.ckpt"), DataError);
}

TEST_CASE("manifest round trip and errors") {
    std::vector<ManifestEntry> entries{{"dem/a.asc", "mask/a.pgm", "train"}, {"dem/b.asc", "mask/b.pgm", "val"}};
    std::stringstream io;
    write_manifest(entries, io);
    CHECK(io.str() == "dem/a.asc\tmask/a.pgm\ttrain\ndem/b.asc\tmask/b.pgm\tval\n");
    CHECK(read_manifest(io) == entries);

    std::istringstream rel("x.asc\ty.pgm\ttrain\n");
    auto based = read_manifest(rel, "/data");
    CHECK(based[0].dem == fs::path("/data/x.asc"));

    std::istringstream bad("a.asc\tb.pgm\ttrain\nonly two\tfields\n");
    try {
        read_manifest(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("samples load back from files exactly") {
    TempDir dir;
    SceneParams p;
    p.seed = 13;
    auto scenes = synth_scenes(3, p);
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto dem = dir.path / ("s" + std::to_string(i) + ".asc");
        const auto mask = dir.path / ("s" + std::to_string(i) + ".pgm");
        write_ascii_grid(scenes[i].dem, dem);
        write_mask_pgm(scenes[i].roads, 2, mask);
        entries.push_back({dem, mask, i == 2 ? "val" : "train"});
    }
    auto train = load_samples(entries, 2, "train");
    auto all = load_samples(entries, 2);
    REQUIRE(train.size() == 2);
    REQUIRE(all.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        auto direct = make_sample(scenes[i].dem, scenes[i].roads);
        CHECK(std::memcmp(direct.image.data(), all[i].image.data(), direct.image.size() * sizeof(float)) == 0);
        CHECK(direct.labels == all[i].labels);
    }
    CHECK(scene_seed(13, 0) != scene_seed(13, 1));
    CHECK(parse_target("roads") == LabelTarget::Roads);
    CHECK_THROWS_AS(parse_target("trees"), ConfigError);
}
