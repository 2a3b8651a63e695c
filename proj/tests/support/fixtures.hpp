#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tmae/cli.hpp"
#include "tmae/dataset.hpp"

namespace tmae::testing {

inline std::vector<Sample> scene_samples(std::size_t count, std::uint64_t seed,
                                         LabelTarget target = LabelTarget::Buildings) {
    SceneParams p;
    p.seed = seed;
    std::vector<Sample> out;
    for (const auto& s : synth_scenes(count, p)) out.push_back(make_sample(s.dem, scene_labels(s, target)));
    return out;
}

inline std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
    std::vector<const Sample*> out;
    for (const auto& s : samples) out.push_back(&s);
    return out;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("tmae_test_" + std::to_string(Rng(std::random_device{}()).next_u64()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct CliRun {
    int code = -1;
    std::string out, err;
};

inline CliRun run_tmae(std::vector<std::string> args) {
    args.insert(args.begin(), "tmae");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

inline std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

/// Relative path of the first file that differs or exists on one side only; empty when identical.
inline std::string first_difference(const std::filesystem::path& a, const std::filesystem::path& b) {
    namespace fs = std::filesystem;
    auto listing = [](const fs::path& root) {
        std::vector<std::string> names;
        for (const auto& e : fs::recursive_directory_iterator(root))
            names.push_back(fs::relative(e.path(), root).string() + (e.is_directory() ? "/" : ""));
        std::sort(names.begin(), names.end());
        return names;
    };
    const auto la = listing(a), lb = listing(b);
    if (la != lb) {
        for (std::size_t i = 0; i < std::max(la.size(), lb.size()); ++i)
            if (i >= la.size() || i >= lb.size() || la[i] != lb[i]) return i < la.size() ? la[i] : lb[i];
    }
    for (const auto& n : la)
        if (n.back() != '/' && file_bytes(a / n) != file_bytes(b / n)) return n;
    return {};
}

}  // namespace tmae::testing
