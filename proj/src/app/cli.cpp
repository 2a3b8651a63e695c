#include "tmae/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>

#include "tmae/checkpoint.hpp"
#include "tmae/dataset.hpp"
#include "tmae/error.hpp"
#include "tmae/mae.hpp"
#include "tmae/masking.hpp"
#include "tmae/parallel.hpp"
#include "tmae/train.hpp"

namespace tmae {

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string preset = "tiny";
    std::size_t threads = 1;
};

void add_common(CLI::App* cmd, Common& c, bool with_preset = true) {
    cmd->add_option("--config", c.config, "key=value overrides")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
    if (with_preset)
        cmd->add_option("--preset", c.preset, "model preset")
            ->check(CLI::IsMember({"tiny", "paper"}))
            ->capture_default_str();
    cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write " + path.string());
}

using Setter = std::function<bool(const std::string&, const std::string&)>;

/// Applies --config overrides; every key must be taken by one setter.
void apply_config(const std::string& path, const std::vector<Setter>& setters) {
    if (path.empty()) return;
    for (const auto& [key, value] : parse_key_values(read_text(path))) {
        const bool known = std::any_of(setters.begin(), setters.end(), [&](const Setter& s) { return s(key, value); });
        if (!known) throw ConfigError("unknown config key '" + key + "' in " + path);
    }
}

bool parse_flag(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
}

std::size_t parse_count(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long n = 0;
    try {
        n = std::stoull(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size() || v[0] == '-') throw ConfigError("invalid integer for " + key + ": '" + v + "'");
    return static_cast<std::size_t>(n);
}

double parse_real(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size() || !std::isfinite(x)) throw ConfigError("invalid number for " + key + ": '" + v + "'");
    return x;
}

/// An empty or missing directory becomes the run directory.
void make_run_dir(const fs::path& dir) {
    if (fs::exists(dir) && (!fs::is_directory(dir) || !fs::is_empty(dir)))
        throw ConfigError("run directory " + dir.string() + " exists and is not empty");
    fs::create_directories(dir);
}

ModelConfig base_config(const Common& c) { return ModelConfig::preset(c.preset); }

std::string header(const std::string& command, const Common& c) {
    return "command=" + command + "\npreset=" + c.preset + "\nseed=" + std::to_string(c.seed) + "\n";
}

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

Checkpoint make_checkpoint(const ModelConfig& config, const std::string& kind, std::uint64_t step) {
    Checkpoint ck;
    ck.config = config;
    ck.kind = kind;
    ck.step = step;
    return ck;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    Common common;
    std::string out;
    std::size_t count = 500;
};

/// Removes what a failed synth run created.
class Cleanup {
   public:
    void track(const fs::path& p) { created_.push_back(p); }
    void release() { created_.clear(); }
    ~Cleanup() {
        std::error_code ec;
        for (auto it = created_.rbegin(); it != created_.rend(); ++it) fs::remove(*it, ec);
    }

   private:
    std::vector<fs::path> created_;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    SceneParams params;
    apply_config(a.common.config, {[&](const std::string& k, const std::string& v) { return params.set(k, v); }});
    params.seed = a.common.seed;
    params.validate();
    if (a.count == 0) throw ConfigError("--count must be positive");

    Cleanup cleanup;
    const fs::path root(a.out);
    std::vector<fs::path> missing;
    for (auto dir = root / "scenes"; !dir.empty() && !fs::exists(dir); dir = dir.parent_path()) missing.push_back(dir);
    for (auto it = missing.rbegin(); it != missing.rend(); ++it) {
        fs::create_directory(*it);
        cleanup.track(*it);
    }

    const std::size_t n_val = (a.count * 15 + 50) / 100;
    Rng split_rng = Rng::derive(a.common.seed, 0, 0x5b117);
    std::vector<std::string> split(a.count, "train");
    const auto order = split_rng.permutation(a.count);
    for (std::size_t i = 0; i < n_val; ++i) split[order[i]] = "val";

    std::vector<ManifestEntry> buildings, roads;
    for (std::size_t i = 0; i < a.count; ++i) {
        SceneParams p = params;
        p.seed = scene_seed(params.seed, i);
        const auto scene = synth_scene(p);
        char stem[32];
        std::snprintf(stem, sizeof stem, "scene_%05zu", i);
        const fs::path dem = fs::path("scenes") / (std::string(stem) + ".asc");
        const fs::path bmask = fs::path("scenes") / (std::string(stem) + ".buildings.pgm");
        const fs::path rmask = fs::path("scenes") / (std::string(stem) + ".roads.pgm");
        for (const auto& f : {dem, bmask, rmask}) cleanup.track(root / f);
        write_ascii_grid(scene.dem, root / dem);
        write_mask_pgm(scene.buildings, 2, root / bmask);
        write_mask_pgm(scene.roads, 2, root / rmask);
        buildings.push_back({dem, bmask, split[i]});
        roads.push_back({dem, rmask, split[i]});
    }
    for (const auto& [name, entries] : {std::pair{"buildings.tsv", &buildings}, std::pair{"roads.tsv", &roads}}) {
        cleanup.track(root / name);
        std::ofstream f(root / name, std::ios::binary);
        write_manifest(*entries, f);
        if (!f) throw DataError("cannot write " + (root / name).string());
    }
    cleanup.release();
    out << a.count << " scenes, " << a.count - n_val << " train / " << n_val << " val, manifests "
        << (root / "buildings.tsv").string() << " " << (root / "roads.tsv").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- pretrain

struct PretrainPlan {
    std::size_t total_iters = 500;
    std::size_t batch_size = 8;
    double base_lr = 1.5e-4;
    double lr_power = 1.0;
    double min_lr = 0.0;
    double weight_decay = 0.05;
    bool norm_pix = false;
    std::size_t preview_every = 100;
    std::string split = "train";

    bool set(const std::string& k, const std::string& v) {
        if (k == "total_iters") total_iters = parse_count(k, v);
        else if (k == "batch_size") batch_size = parse_count(k, v);
        else if (k == "base_lr") base_lr = parse_real(k, v);
        else if (k == "lr_power") lr_power = parse_real(k, v);
        else if (k == "min_lr") min_lr = parse_real(k, v);
        else if (k == "weight_decay") weight_decay = parse_real(k, v);
        else if (k == "norm_pix") norm_pix = parse_flag(k, v);
        else if (k == "preview_every") preview_every = parse_count(k, v);
        else if (k == "split") split = v;
        else return false;
        return true;
    }

    void validate() const {
        if (total_iters == 0) throw ConfigError("total_iters must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(base_lr >= 0.0) || !(min_lr >= 0.0) || min_lr > base_lr) throw ConfigError("need 0 <= min_lr <= base_lr");
        if (!(lr_power >= 0.0)) throw ConfigError("lr_power must be non-negative");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    }

    std::string to_text() const {
        std::ostringstream s;
        s << "total_iters=" << total_iters << "\nbatch_size=" << batch_size << "\nbase_lr=" << base_lr
          << "\nlr_power=" << lr_power << "\nmin_lr=" << min_lr << "\nweight_decay=" << weight_decay
          << "\nnorm_pix=" << (norm_pix ? "true" : "false") << "\npreview_every=" << preview_every
          << "\nsplit=" << split << "\n";
        return s.str();
    }
};

struct PretrainArgs {
    Common common;
    std::string manifest, run_dir, resume;
    std::optional<std::size_t> iters;
};

/// Every image_size tile of the manifest's rasters, as unlabeled samples.
std::vector<Sample> load_tiles(const std::vector<ManifestEntry>& entries, const ModelConfig& cfg,
                               const std::string& split) {
    std::vector<Sample> tiles;
    for (const auto& e : entries) {
        if (!split.empty() && e.split != split) continue;
        const auto dem = read_ascii_grid(e.dem);
        if (dem.rows < cfg.image_size || dem.cols < cfg.image_size)
            throw DataError(e.dem.string() + " is smaller than the " + std::to_string(cfg.image_size) + " px model input");
        for (auto& t : tile_raster(dem, cfg.image_size, cfg.image_size)) {
            Sample s;
            s.size = cfg.image_size;
            s.image = std::move(t.dem.elevations);
            tiles.push_back(std::move(s));
        }
    }
    if (tiles.empty()) throw DataError("no tiles in split '" + split + "'");
    expand_channels(tiles, cfg.in_channels);
    return tiles;
}

/// Input, masked input and reconstruction of one tile, first channel.
void write_preview(const MaeModel<float>& mae, const Sample& tile, const PretrainPlan& plan, std::uint64_t seed,
                   std::uint64_t step, const fs::path& dir) {
    const auto& cfg = mae.config();
    NoGradGuard no_grad;
    const auto images = stack_images<float>({&tile});
    const auto plans = batch_masks(1, cfg.n_tokens(), cfg.mask_ratio, seed ^ 0x9e71e3, step);
    const auto fwd = mae.forward(images, plans, plan.norm_pix);
    const auto target = patchify(images, cfg.patch_size);
    const std::size_t len = cfg.patch_dim();
    auto masked = target.detach(), recon = target.detach();
    auto m = masked.mutable_data(), r = recon.mutable_data();
    const auto t = target.data(), p = fwd.pred.data();
    for (auto id : plans[0].mask_ids) {
        double mean = 0.0, var = 0.0;
        if (plan.norm_pix) {
            for (std::size_t j = 0; j < len; ++j) mean += t[id * len + j];
            mean /= static_cast<double>(len);
            for (std::size_t j = 0; j < len; ++j) var += (t[id * len + j] - mean) * (t[id * len + j] - mean);
            var /= static_cast<double>(len - 1);
        }
        for (std::size_t j = 0; j < len; ++j) {
            m[id * len + j] = 0.0f;
            const double v = p[id * len + j];
            r[id * len + j] = static_cast<float>(plan.norm_pix ? v * std::sqrt(var + 1e-6) + mean : v);
        }
    }
    const std::size_t side = cfg.image_size, plane = side * side;
    char stem[32];
    std::snprintf(stem, sizeof stem, "iter_%06llu", static_cast<unsigned long long>(step));
    const std::pair<const char*, const Tensor<float>*> parts[] = {
        {"input", &images}, {"masked", &masked}, {"recon", &recon}};
    for (const auto& [name, tensor] : parts) {
        const auto img = tensor == &images ? images : unpatchify(*tensor, cfg.patch_size, cfg.in_channels, cfg.grid(), cfg.grid());
        const auto d = img.data();
        write_gray_pgm(std::vector<float>(d.begin(), d.begin() + static_cast<long>(plane)), side, side,
                       dir / (std::string(stem) + "_" + name + ".pgm"));
    }
}

int cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
    ModelConfig cfg = base_config(a.common);
    PretrainPlan plan;
    apply_config(a.common.config, {[&](const std::string& k, const std::string& v) { return cfg.set(k, v); },
                                   [&](const std::string& k, const std::string& v) { return plan.set(k, v); }});
    if (a.iters) plan.total_iters = *a.iters;
    cfg.validate();
    plan.validate();

    const auto entries = read_manifest(fs::path(a.manifest));
    const auto tiles = load_tiles(entries, cfg, plan.split);

    Rng init = Rng::derive(a.common.seed, 0, 0x1417);
    MaeModel<float> mae(cfg, init);
    std::uint64_t start = 0;
    if (!a.resume.empty()) {
        const auto ck = load_checkpoint(fs::path(a.resume));
        if (ck.kind != "mae") throw FormatError(a.resume + " holds a " + ck.kind + " model, not mae");
        if (!(ck.config == cfg)) throw FormatError(a.resume + ": model config differs from the requested one");
        auto params = mae.params();
        apply_checkpoint(ck, params);
        start = ck.step;
        if (start > plan.total_iters)
            throw ConfigError("checkpoint is at step " + std::to_string(start) + ", beyond total_iters " +
                              std::to_string(plan.total_iters));
    }

    const fs::path run(a.run_dir);
    make_run_dir(run);
    fs::create_directory(run / "previews");
    std::string config_text = header("pretrain", a.common) + "manifest=" + a.manifest + "\n";
    if (!a.resume.empty()) config_text += "resume=" + a.resume + "\nresume_step=" + std::to_string(start) + "\n";
    write_text(run / "config.txt", config_text + cfg.to_text() + plan.to_text());

    AdamW<float> opt(mae.params(), AdamWOptions{.weight_decay = plan.weight_decay});
    std::ofstream trace(run / "trace.txt", std::ios::binary);
    std::vector<const Sample*> batch(plan.batch_size);
    double last = 0.0;
    for (std::uint64_t step = start; step < plan.total_iters; ++step) {
        Rng pick = Rng::derive(a.common.seed, step, 0xba7c);
        for (auto& s : batch) s = &tiles[pick.below(tiles.size())];
        const double lr = poly_lr(step, plan.total_iters, plan.base_lr, plan.min_lr, plan.lr_power);
        try {
            last = pretrain_step(mae, stack_images<float>(batch), opt, lr, a.common.seed, step, plan.norm_pix);
            if (!std::isfinite(last)) throw TrainingError("non-finite reconstruction loss");
        } catch (const TrainingError& e) {
            throw TrainingError("iteration " + std::to_string(step + 1) + ": " + e.what());
        }
        trace << "iter " << step + 1 << " loss " << fmt("%.6f", last) << " lr " << fmt("%.6e", lr) << "\n";
        const bool final = step + 1 == plan.total_iters;
        if ((plan.preview_every && (step + 1) % plan.preview_every == 0) || final)
            write_preview(mae, tiles.front(), plan, a.common.seed, step + 1, run / "previews");
    }
    trace.close();
    if (!trace) throw DataError("cannot write " + (run / "trace.txt").string());

    auto ck = make_checkpoint(cfg, "mae", plan.total_iters);
    add_tensors(ck, mae.params());
    save_checkpoint(ck, run / "last.ckpt");
    out << "pretrained " << plan.total_iters - start << " iterations on " << tiles.size() << " tiles, final loss "
        << fmt("%.6f", last) << "\n";
    return 0;
}

// ---------------------------------------------------------------- finetune

struct FinetuneArgs {
    Common common;
    std::string manifest, run_dir, backbone, head = "upernet", task = "buildings", adapter = "none";
    std::size_t samples = 0;
    double drop_fraction = 0.0;
    std::optional<std::string> freeze;
};

std::string canonical_task(const std::string& t) {
    if (t == "building") return "buildings";
    if (t == "road") return "roads";
    return t;
}

std::string class_name(const std::string& task) { return task == "roads" ? "road" : "building"; }

void check_backbone(const ModelConfig& stored, const ModelConfig& cfg, bool adapter) {
    auto expect = [](const char* key, std::size_t a, std::size_t b) {
        if (a != b)
            throw FormatError(std::string("backbone ") + key + " is " + std::to_string(a) + ", config asks for " +
                              std::to_string(b));
    };
    expect("image_size", stored.image_size, cfg.image_size);
    expect("patch_size", stored.patch_size, cfg.patch_size);
    expect("embed_dim", stored.embed_dim, cfg.embed_dim);
    expect("encoder_blocks", stored.encoder_blocks, cfg.encoder_blocks);
    expect("encoder_heads", stored.encoder_heads, cfg.encoder_heads);
    expect("mlp_ratio", stored.mlp_ratio, cfg.mlp_ratio);
    if (!adapter) expect("in_channels", stored.in_channels, cfg.in_channels);
}

int cmd_finetune(const FinetuneArgs& a, std::ostream& out) {
    ModelConfig cfg = base_config(a.common);
    TrainPlan plan;
    apply_config(a.common.config, {[&](const std::string& k, const std::string& v) { return cfg.set(k, v); },
                                   [&](const std::string& k, const std::string& v) { return plan.set(k, v); }});
    const auto task = canonical_task(a.task);
    parse_target(task);
    if (a.head == "unet") {
        if (a.freeze) throw ConfigError("--freeze-backbone does not apply to the unet head");
        if (!a.backbone.empty()) throw ConfigError("the unet head takes no backbone");
    } else if (a.freeze) {
        plan.freeze_backbone = a.freeze->empty() || parse_flag("--freeze-backbone", *a.freeze);
    }
    plan.seed = a.common.seed;
    cfg.validate();
    plan.validate();
    if (a.drop_fraction < 0.0 || a.drop_fraction > 1.0) throw ConfigError("--drop-fraction must lie in [0, 1]");

    std::optional<Checkpoint> backbone;
    if (!a.backbone.empty()) {
        backbone = load_checkpoint(fs::path(a.backbone));
        check_backbone(backbone->config, cfg, a.adapter == "replicate");
    }

    const auto entries = read_manifest(fs::path(a.manifest));
    auto train = load_samples(entries, cfg.n_classes, "train");
    auto val = load_samples(entries, cfg.n_classes, "val");
    if (val.empty()) throw ConfigError("manifest has no val entries");
    if (train.empty()) throw DataError("manifest has no train entries");
    for (const auto* set : {&train, &val})
        for (const auto& s : *set)
            if (s.size != cfg.image_size)
                throw DataError("tile size " + std::to_string(s.size) + " does not match model input " +
                                std::to_string(cfg.image_size));
    train = subsample(train, a.samples, a.common.seed);
    if (a.drop_fraction > 0.0) corrupt_samples(train, a.drop_fraction, a.common.seed);
    expand_channels(train, cfg.in_channels);
    expand_channels(val, cfg.in_channels);

    Rng init = Rng::derive(a.common.seed, 0, 0x1417);
    auto model = make_segmenter<float>(a.head, cfg, init, plan.freeze_backbone);
    if (backbone) {
        auto enc = dynamic_cast<MaeUperNet<float>&>(*model).encoder().params();
        apply_checkpoint(*backbone, enc, a.adapter == "replicate" ? ChannelAdapter::Replicate : ChannelAdapter::None);
    }

    const fs::path run(a.run_dir);
    make_run_dir(run);
    std::ostringstream extra;
    extra << "manifest=" << a.manifest << "\nhead=" << a.head << "\ntask=" << task << "\nbackbone=" << a.backbone
          << "\nadapter=" << a.adapter << "\nsamples=" << train.size() << "\ndrop_fraction=" << a.drop_fraction
          << "\nfreeze_backbone=" << (plan.freeze_backbone ? "true" : "false") << "\n";
    std::ostringstream plan_text;
    plan_text << "total_iters=" << plan.total_iters << "\nval_every=" << plan.val_every
              << "\nbatch_size=" << plan.batch_size << "\nbase_lr=" << plan.base_lr << "\nlr_power=" << plan.lr_power
              << "\nmin_lr=" << plan.min_lr << "\nweight_decay=" << plan.weight_decay << "\n";
    write_text(run / "config.txt", header("finetune", a.common) + extra.str() + cfg.to_text() + plan_text.str());

    std::ofstream trace(run / "trace.txt", std::ios::binary);
    const auto result = finetune(*model, train, val, plan, 1, [&](const TraceEntry& e) {
        trace << e.line() << "\n" << std::flush;
        out << e.line() << "\n";
    });
    trace.close();
    if (!trace) throw DataError("cannot write " + (run / "trace.txt").string());

    const auto params = model->params();
    auto best = make_checkpoint(cfg, a.head, result.best_iter);
    for (std::size_t i = 0; i < params.size(); ++i)
        best.tensors.push_back({params[i].name, params[i].tensor.shape(), result.best_params[i]});
    save_checkpoint(best, run / "best.ckpt");
    auto last = make_checkpoint(cfg, a.head, plan.total_iters);
    add_tensors(last, params);
    save_checkpoint(last, run / "last.ckpt");
    out << "best val_iou " << fmt("%.6f", result.best_iou) << " at iter " << result.best_iter << "\n";
    return 0;
}

// ---------------------------------------------------------------- eval / predict

std::unique_ptr<Segmenter<float>> load_segmenter(const std::string& path) {
    const auto ck = load_checkpoint(fs::path(path));
    if (ck.kind != "upernet" && ck.kind != "unet")
        throw FormatError(path + " holds a " + ck.kind + " model, not a segmentation model");
    Rng rng(0);
    auto model = make_segmenter<float>(ck.kind, ck.config, rng);
    auto params = model->params();
    apply_checkpoint(ck, params);
    return model;
}

struct EvalArgs {
    Common common;
    std::string manifest, checkpoint, split = "val", task = "buildings";
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const auto task = canonical_task(a.task);
    parse_target(task);
    auto model = load_segmenter(a.checkpoint);
    const auto& cfg = model->config();
    auto samples = load_samples(read_manifest(fs::path(a.manifest)), cfg.n_classes, a.split);
    if (samples.empty()) throw DataError("manifest has no '" + a.split + "' entries");
    for (const auto& s : samples)
        if (s.size != cfg.image_size)
            throw DataError("tile size " + std::to_string(s.size) + " does not match model input " +
                            std::to_string(cfg.image_size));
    expand_channels(samples, cfg.in_channels);
    auto report = evaluate(*model, samples);
    report.model = model->kind();
    report.seed = a.common.seed;
    std::vector<std::string> names{"background", class_name(task)};
    for (std::size_t c = 2; c < cfg.n_classes; ++c) names.push_back(std::to_string(c));
    out << report.table(names);
    return 0;
}

struct PredictArgs {
    Common common;
    std::string dem, checkpoint, out;
};

std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t tile) {
    std::vector<std::size_t> o;
    for (std::size_t x = 0; x + tile <= extent; x += tile) o.push_back(x);
    if (o.back() + tile < extent) o.push_back(extent - tile);
    return o;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
    auto model = load_segmenter(a.checkpoint);
    const auto& cfg = model->config();
    const auto dem = read_ascii_grid(fs::path(a.dem));
    const std::size_t s = cfg.image_size;
    if (dem.rows < s || dem.cols < s)
        throw DataError(a.dem + " is smaller than the " + std::to_string(s) + " px model input");

    std::vector<Sample> tiles;
    std::vector<std::pair<std::size_t, std::size_t>> where;
    for (auto r0 : tile_origins(dem.rows, s))
        for (auto c0 : tile_origins(dem.cols, s)) {
            DemTile t;
            t.size = s;
            t.nodata = dem.nodata;
            t.elevations.resize(s * s);
            for (std::size_t i = 0; i < s; ++i)
                std::copy_n(dem.values.begin() + static_cast<long>((r0 + i) * dem.cols + c0), s,
                            t.elevations.begin() + static_cast<long>(i * s));
            Sample smp;
            smp.size = s;
            smp.image = local_normalize(t).elevations;
            tiles.push_back(std::move(smp));
            where.emplace_back(r0, c0);
        }
    expand_channels(tiles, cfg.in_channels);
    const auto masks = predict_masks(*model, tiles);

    LabelMask mask{dem.rows, dem.cols, std::vector<std::uint8_t>(dem.rows * dem.cols, 0)};
    for (std::size_t k = 0; k < tiles.size(); ++k) {
        const auto [r0, c0] = where[k];
        for (std::size_t i = 0; i < s; ++i)
            std::copy_n(masks[k].begin() + static_cast<long>(i * s), s,
                        mask.classes.begin() + static_cast<long>((r0 + i) * dem.cols + c0));
    }
    for (std::size_t i = 0; i < mask.classes.size(); ++i)
        if (dem.is_nodata(dem.values[i])) mask.classes[i] = 0;
    write_mask_pgm(mask, cfg.n_classes, fs::path(a.out));
    out << "wrote " << dem.rows << "x" << dem.cols << " mask to " << a.out << "\n";
    return 0;
}

}  // namespace

int exit_code(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        switch (err->kind()) {
            case ErrorKind::Config:
                return 2;
            case ErrorKind::Data:
            case ErrorKind::Format:
            case ErrorKind::Generation:
                return 3;
            case ErrorKind::Training:
                return 4;
            default:
                return 1;
        }
    }
    if (dynamic_cast<const CLI::ParseError*>(&e)) return 2;
    return 1;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Masked-autoencoder segmentation of elevation rasters", "tmae"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "generate a synthetic DEM corpus with building and road masks");
    add_common(s, synth.common, false);
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--count", synth.count, "number of scenes")->capture_default_str();

    PretrainArgs pre;
    std::size_t iters = 0;
    auto* p = app.add_subcommand("pretrain", "masked-autoencoder pre-training on unlabeled tiles");
    add_common(p, pre.common);
    p->add_option("--manifest", pre.manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    p->add_option("--run-dir", pre.run_dir, "output run directory")->required();
    p->add_option("--resume", pre.resume, "continue from an mae checkpoint")->check(CLI::ExistingFile);
    auto* iters_opt = p->add_option("--iters", iters, "total iterations")->check(CLI::PositiveNumber);

    FinetuneArgs ft;
    std::string freeze;
    auto* f = app.add_subcommand("finetune", "train a segmentation head");
    add_common(f, ft.common);
    f->add_option("--manifest", ft.manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    f->add_option("--run-dir", ft.run_dir, "output run directory")->required();
    f->add_option("--backbone", ft.backbone, "pre-trained mae checkpoint")->check(CLI::ExistingFile);
    f->add_option("--head", ft.head)->check(CLI::IsMember({"upernet", "unet"}))->capture_default_str();
    f->add_option("--task", ft.task)
        ->check(CLI::IsMember({"buildings", "roads", "building", "road"}))
        ->capture_default_str();
    f->add_option("--samples", ft.samples, "training subset size (0 = all)")->capture_default_str();
    f->add_option("--drop-fraction", ft.drop_fraction, "drop each training label component with this probability")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    auto* freeze_opt = f->add_option("--freeze-backbone", freeze, "true or false (upernet only)")->expected(0, 1);
    f->add_option("--adapter", ft.adapter, "channel adapter for the backbone")
        ->check(CLI::IsMember({"none", "replicate"}))
        ->capture_default_str();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "report IoU of a checkpoint on a manifest split");
    add_common(e, ev.common, false);
    e->add_option("--manifest", ev.manifest)->required()->check(CLI::ExistingFile);
    e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
    e->add_option("--split", ev.split)->capture_default_str();
    e->add_option("--task", ev.task)
        ->check(CLI::IsMember({"buildings", "roads", "building", "road"}))
        ->capture_default_str();

    PredictArgs pr;
    auto* d = app.add_subcommand("predict", "write the predicted class mask of a DEM");
    add_common(d, pr.common, false);
    d->add_option("--dem", pr.dem, "ASCII grid")->required()->check(CLI::ExistingFile);
    d->add_option("--checkpoint", pr.checkpoint)->required()->check(CLI::ExistingFile);
    d->add_option("--out", pr.out, "output PGM")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (s->parsed()) {
            set_num_threads(synth.common.threads);
            return cmd_synth(synth, out);
        }
        if (p->parsed()) {
            if (iters_opt->count()) pre.iters = iters;
            set_num_threads(pre.common.threads);
            return cmd_pretrain(pre, out);
        }
        if (f->parsed()) {
            if (freeze_opt->count()) ft.freeze = freeze;
            set_num_threads(ft.common.threads);
            return cmd_finetune(ft, out);
        }
        if (e->parsed()) {
            set_num_threads(ev.common.threads);
            return cmd_eval(ev, out);
        }
        set_num_threads(pr.common.threads);
        return cmd_predict(pr, out);
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return exit_code(ex);
    }
}

}  // namespace tmae
