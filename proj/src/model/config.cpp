#include "tmae/config.hpp"

#include <charconv>
#include <sstream>

#include "tmae/error.hpp"

namespace tmae {

ModelConfig ModelConfig::paper() {
    ModelConfig c;
    c.image_size = 224;
    c.patch_size = 16;
    c.in_channels = 1;
    c.embed_dim = 768;
    c.encoder_blocks = 12;
    c.encoder_heads = 12;
    c.decoder_dim = 512;
    c.decoder_blocks = 8;
    c.decoder_heads = 16;
    c.mask_ratio = 0.75;
    c.tap_blocks = {3, 5, 7, 11};
    c.n_classes = 2;
    c.head_width = 256;
    c.unet_base = 64;
    return c;
}

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::preset(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "tiny") return tiny();
    throw ConfigError("unknown preset '" + name + "' (expected paper or tiny)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0)
        fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
             std::to_string(patch_size));
    if (in_channels == 0) fail("in_channels must be positive");
    if (encoder_heads == 0 || embed_dim % encoder_heads != 0)
        fail("embed_dim " + std::to_string(embed_dim) + " not divisible by encoder_heads " +
             std::to_string(encoder_heads));
    if (decoder_heads == 0 || decoder_dim % decoder_heads != 0)
        fail("decoder_dim " + std::to_string(decoder_dim) + " not divisible by decoder_heads " +
             std::to_string(decoder_heads));
    if (embed_dim % 4 != 0 || decoder_dim % 4 != 0) fail("embedding widths must be divisible by 4");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie strictly between 0 and 1");
    if (tap_blocks.empty() || tap_blocks.size() > 4) fail("tap_blocks needs 1 to 4 entries");
    for (std::size_t i = 0; i < tap_blocks.size(); ++i) {
        if (tap_blocks[i] >= encoder_blocks) fail("tap block " + std::to_string(tap_blocks[i]) + " out of range");
        if (i > 0 && tap_blocks[i] <= tap_blocks[i - 1]) fail("tap blocks must be strictly increasing");
    }
    if (n_classes < 2 || n_classes > 255) fail("n_classes must be in [2, 255]");
    if (encoder_blocks == 0 || decoder_blocks == 0) fail("block counts must be positive");
    if (head_width == 0 || unet_base == 0 || mlp_ratio == 0) fail("widths must be positive");
    if (grid() < 2) fail("patch grid must be at least 2x2");
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "image_size=" << image_size << '\n'
       << "patch_size=" << patch_size << '\n'
       << "in_channels=" << in_channels << '\n'
       << "embed_dim=" << embed_dim << '\n'
       << "encoder_blocks=" << encoder_blocks << '\n'
       << "encoder_heads=" << encoder_heads << '\n'
       << "decoder_dim=" << decoder_dim << '\n'
       << "decoder_blocks=" << decoder_blocks << '\n'
       << "decoder_heads=" << decoder_heads << '\n';
    std::ostringstream ratio;
    ratio.precision(17);
    ratio << mask_ratio;
    os << "mask_ratio=" << ratio.str() << '\n'
       << "tap_blocks=";
    for (std::size_t i = 0; i < tap_blocks.size(); ++i) os << (i ? "," : "") << tap_blocks[i];
    os << '\n'
       << "n_classes=" << n_classes << '\n'
       << "mlp_ratio=" << mlp_ratio << '\n'
       << "head_width=" << head_width << '\n'
       << "unet_base=" << unet_base << '\n';
    return os.str();
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("invalid integer for " + key + ": '" + v + "'");
    return out;
}

}  // namespace

bool ModelConfig::set(const std::string& key, const std::string& value) {
    if (key == "image_size") image_size = parse_size(key, value);
    else if (key == "patch_size") patch_size = parse_size(key, value);
    else if (key == "in_channels") in_channels = parse_size(key, value);
    else if (key == "embed_dim") embed_dim = parse_size(key, value);
    else if (key == "encoder_blocks") encoder_blocks = parse_size(key, value);
    else if (key == "encoder_heads") encoder_heads = parse_size(key, value);
    else if (key == "decoder_dim") decoder_dim = parse_size(key, value);
    else if (key == "decoder_blocks") decoder_blocks = parse_size(key, value);
    else if (key == "decoder_heads") decoder_heads = parse_size(key, value);
    else if (key == "n_classes") n_classes = parse_size(key, value);
    else if (key == "mlp_ratio") mlp_ratio = parse_size(key, value);
    else if (key == "head_width") head_width = parse_size(key, value);
    else if (key == "unet_base") unet_base = parse_size(key, value);
    else if (key == "mask_ratio") {
        try {
            std::size_t used = 0;
            mask_ratio = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
        } catch (const std::exception&) {
            throw ConfigError("invalid number for mask_ratio: '" + value + "'");
        }
    } else if (key == "tap_blocks") {
        std::istringstream is(value);
        std::string part;
        std::vector<std::size_t> taps;
        while (std::getline(is, part, ',')) taps.push_back(parse_size(key, part));
        if (taps.empty() || taps.size() > 4) throw ConfigError("tap_blocks needs 1 to 4 entries");
        tap_blocks = std::move(taps);
    } else {
        return false;
    }
    return true;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig c;
    for (const auto& [k, v] : parse_key_values(text))
        if (!c.set(k, v)) throw ConfigError("unknown model config key '" + k + "'");
    return c;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

}  // namespace tmae
