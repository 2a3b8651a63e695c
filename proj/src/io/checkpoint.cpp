#include "tmae/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "tmae/error.hpp"

namespace tmae {

namespace fs = std::filesystem;

namespace {

constexpr char magic[4] = {'T', 'M', 'A', 'E'};
constexpr std::uint64_t max_elements = std::uint64_t{1} << 34;

template <typename U>
void put(std::ostream& out, U v) {
    static_assert(std::is_integral_v<U> || std::is_same_v<U, float>);
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
   public:
    explicit Reader(std::istream& in) : in_(in) {}

    template <typename U>
    U get(const char* what) {
        unsigned char bytes[sizeof(U)];
        read(bytes, sizeof(U), what);
        if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
        U v;
        std::memcpy(&v, bytes, sizeof(U));
        return v;
    }

    std::string get_string(const char* what, std::uint32_t limit = 1u << 24) {
        const auto n = get<std::uint32_t>(what);
        if (n > limit) throw FormatError(std::string("implausible length for ") + what);
        std::string s(n, '\0');
        read(s.data(), n, what);
        return s;
    }

    void read(void* dst, std::size_t n, const std::string& what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("checkpoint truncated while reading " + what);
    }

   private:
    std::istream& in_;
};

}  // namespace

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : tensors)
        if (e.name == name) return &e;
    return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
    out.write(magic, 4);
    put<std::uint32_t>(out, Checkpoint::version);
    put_string(out, ckpt.config.to_text());
    put_string(out, ckpt.kind);
    put<std::uint64_t>(out, ckpt.step);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& e : ckpt.tensors) {
        if (shape_numel(e.shape) != e.values.size()) throw ContractError("checkpoint tensor " + e.name + " size mismatch");
        put_string(out, e.name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) put<std::uint64_t>(out, d);
        if constexpr (std::endian::native == std::endian::little) {
            out.write(reinterpret_cast<const char*>(e.values.data()),
                      static_cast<std::streamsize>(e.values.size() * sizeof(float)));
        } else {
            for (float v : e.values) put<float>(out, v);
        }
    }
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        save_checkpoint(ckpt, out);
        out.flush();
        if (!out) throw DataError("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(std::istream& in) {
    Reader r(in);
    char head[4];
    r.read(head, 4, "magic");
    if (std::memcmp(head, magic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != Checkpoint::version)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    try {
        ckpt.config = ModelConfig::from_text(r.get_string("config"));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint config: ") + e.what());
    }
    ckpt.kind = r.get_string("kind", 64);
    ckpt.step = r.get<std::uint64_t>("step");
    const auto count = r.get<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        Checkpoint::Entry e;
        e.name = r.get_string("tensor name", 4096);
        const auto rank = r.get<std::uint32_t>(e.name.c_str());
        if (rank == 0 || rank > 8) throw FormatError("tensor " + e.name + " has invalid rank " + std::to_string(rank));
        std::uint64_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const auto d = r.get<std::uint64_t>(e.name.c_str());
            if (d == 0 || d > max_elements || n * d > max_elements)
                throw FormatError("tensor " + e.name + " has invalid extents");
            n *= d;
            e.shape.push_back(static_cast<std::size_t>(d));
        }
        e.values.resize(static_cast<std::size_t>(n));
        if constexpr (std::endian::native == std::endian::little) {
            r.read(e.values.data(), e.values.size() * sizeof(float), "tensor " + e.name);
        } else {
            for (auto& v : e.values) v = r.get<float>(e.name.c_str());
        }
        ckpt.tensors.push_back(std::move(e));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
    return ckpt;
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return load_checkpoint(in);
}

template <typename T>
void add_tensors(Checkpoint& ckpt, const ParamList<T>& params) {
    for (const auto& p : params) {
        Checkpoint::Entry e{p.name, p.tensor.shape(), {}};
        e.values.reserve(p.tensor.numel());
        for (T v : p.tensor.data()) {
            if (!std::isfinite(static_cast<double>(v))) throw ContractError("non-finite value in parameter " + p.name);
            e.values.push_back(static_cast<float>(v));
        }
        ckpt.tensors.push_back(std::move(e));
    }
}

std::vector<float> adapt_channels(const std::vector<float>& values, std::size_t outer, std::size_t src_channels,
                                  std::size_t dst_channels, std::size_t per_channel, std::size_t inner) {
    if (values.size() != outer * src_channels * per_channel * inner) throw ContractError("adapt_channels: size mismatch");
    const std::size_t block = per_channel * inner;
    std::vector<float> out(outer * dst_channels * block);
    for (std::size_t o = 0; o < outer; ++o) {
        const float* src = values.data() + o * src_channels * block;
        float* dst = out.data() + o * dst_channels * block;
        if (dst_channels == src_channels) {
            std::copy(src, src + src_channels * block, dst);
        } else if (dst_channels == 1) {
            for (std::size_t i = 0; i < block; ++i) {
                double acc = 0;
                for (std::size_t c = 0; c < src_channels; ++c) acc += src[c * block + i];
                dst[i] = static_cast<float>(acc / static_cast<double>(src_channels));
            }
        } else if (src_channels == 1) {
            for (std::size_t c = 0; c < dst_channels; ++c) std::copy(src, src + block, dst + c * block);
        } else {
            throw FormatError("cannot adapt " + std::to_string(src_channels) + " channels to " +
                              std::to_string(dst_channels));
        }
    }
    return out;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Returns the adapted values, or throws when this tensor cannot be adapted.
std::vector<float> adapt_entry(const Checkpoint& ckpt, const Checkpoint::Entry& e, const Shape& want) {
    const std::size_t pp = ckpt.config.patch_size * ckpt.config.patch_size;
    const std::size_t src_c = ckpt.config.in_channels;
    auto fail = [&] {
        return FormatError("tensor " + e.name + ": stored " + shape_str(e.shape) + ", model expects " + shape_str(want));
    };
    if (ends_with(e.name, "patch_embed.weight")) {
        if (e.shape.size() != 2 || want.size() != 2 || e.shape[1] != want[1] || e.shape[0] != src_c * pp ||
            want[0] % pp != 0)
            throw fail();
        return adapt_channels(e.values, 1, src_c, want[0] / pp, pp, e.shape[1]);
    }
    if (ends_with(e.name, "decoder.pred.weight")) {
        if (e.shape.size() != 2 || want.size() != 2 || e.shape[0] != want[0] || e.shape[1] != src_c * pp ||
            want[1] % pp != 0)
            throw fail();
        return adapt_channels(e.values, e.shape[0], src_c, want[1] / pp, pp, 1);
    }
    if (ends_with(e.name, "decoder.pred.bias")) {
        if (e.shape.size() != 1 || want.size() != 1 || e.shape[0] != src_c * pp || want[0] % pp != 0) throw fail();
        return adapt_channels(e.values, 1, src_c, want[0] / pp, pp, 1);
    }
    throw fail();
}

}  // namespace

template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, ParamList<T>& params, ChannelAdapter adapter) {
    std::vector<std::vector<float>> staged;
    staged.reserve(params.size());
    for (const auto& p : params) {
        const auto* e = ckpt.find(p.name);
        if (!e) throw FormatError("tensor " + p.name + " missing from checkpoint");
        if (e->shape == p.tensor.shape()) {
            staged.push_back(e->values);
        } else if (adapter == ChannelAdapter::Replicate) {
            staged.push_back(adapt_entry(ckpt, *e, p.tensor.shape()));
        } else {
            throw FormatError("tensor " + p.name + ": stored " + shape_str(e->shape) + ", model expects " +
                              shape_str(p.tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.mutable_data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(staged[i][j]);
    }
}

template void add_tensors(Checkpoint&, const ParamList<float>&);
template void add_tensors(Checkpoint&, const ParamList<double>&);
template void apply_checkpoint(const Checkpoint&, ParamList<float>&, ChannelAdapter);
template void apply_checkpoint(const Checkpoint&, ParamList<double>&, ChannelAdapter);

}  // namespace tmae
