#include "tmae/train.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tmae/error.hpp"
#include "tmae/ops.hpp"

namespace tmae {

template <typename T>
Tensor<T> stack_images(const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw ContractError("cannot stack an empty batch");
    const std::size_t c = samples[0]->channels, s = samples[0]->size;
    std::vector<T> data;
    data.reserve(samples.size() * c * s * s);
    for (const auto* smp : samples) {
        if (smp->channels != c || smp->size != s || smp->image.size() != c * s * s)
            throw DataError("batch mixes tile shapes");
        data.insert(data.end(), smp->image.begin(), smp->image.end());
    }
    return Tensor<T>::from({samples.size(), c, s, s}, std::move(data));
}

void TrainPlan::validate() const {
    if (total_iters == 0 || val_every == 0 || total_iters % val_every != 0)
        throw ConfigError("val_every (" + std::to_string(val_every) + ") must divide total_iters (" +
                          std::to_string(total_iters) + ")");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (!(base_lr >= 0) || !(min_lr >= 0) || !(lr_power >= 0) || !(weight_decay >= 0))
        throw ConfigError("learning-rate settings must be non-negative");
    for (double w : class_weights)
        if (!(w > 0)) throw ConfigError("class weights must be positive");
}

namespace {

std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("invalid integer for " + key + ": '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("invalid number for " + key + ": '" + v + "'");
    return out;
}

}  // namespace

bool TrainPlan::set(const std::string& key, const std::string& value) {
    if (key == "total_iters") total_iters = to_size(key, value);
    else if (key == "val_every") val_every = to_size(key, value);
    else if (key == "batch_size") batch_size = to_size(key, value);
    else if (key == "base_lr") base_lr = to_double(key, value);
    else if (key == "lr_power") lr_power = to_double(key, value);
    else if (key == "min_lr") min_lr = to_double(key, value);
    else if (key == "weight_decay") weight_decay = to_double(key, value);
    else if (key == "freeze_backbone") {
        if (value == "true" || value == "1") freeze_backbone = true;
        else if (value == "false" || value == "0") freeze_backbone = false;
        else throw ConfigError("invalid boolean for freeze_backbone: '" + value + "'");
    }
    else if (key == "class_weights") {
        class_weights.clear();
        std::istringstream is(value);
        std::string part;
        while (std::getline(is, part, ',')) class_weights.push_back(to_double(key, part));
    } else {
        return false;
    }
    return true;
}

std::string TraceEntry::line() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "iter %zu loss %.6f val_iou %.6f lr %.6e", iter, loss, val_iou, lr);
    return buf;
}

template <typename T>
MaeUperNet<T>::MaeUperNet(const ModelConfig& config, Rng& rng, bool freeze_backbone)
    : encoder_(config, rng), head_(config, rng), freeze_(freeze_backbone) {}

template <typename T>
std::vector<Tensor<T>> MaeUperNet<T>::features(const Tensor<T>& images) const {
    if (!freeze_) return {images};
    NoGradGuard no_grad;
    return encoder_.encode(images).taps;
}

template <typename T>
Tensor<T> MaeUperNet<T>::logits(const std::vector<Tensor<T>>& features) const {
    const auto& cfg = encoder_.config();
    const std::size_t g = cfg.grid();
    if (freeze_) return head_(features, g, g, cfg.image_size, cfg.image_size);
    return head_(encoder_.encode(features.at(0)).taps, g, g, cfg.image_size, cfg.image_size);
}

template <typename T>
ParamList<T> MaeUperNet<T>::trainable() const {
    auto out = head_.params();
    if (!freeze_) {
        auto enc = encoder_.params();
        enc.insert(enc.end(), out.begin(), out.end());
        return enc;
    }
    return out;
}

template <typename T>
ParamList<T> MaeUperNet<T>::params() const {
    auto out = encoder_.params();
    append(out, head_.params());
    return out;
}

template <typename T>
UNetSegmenter<T>::UNetSegmenter(const ModelConfig& config, Rng& rng)
    : config_(config), net_(config.in_channels, config.n_classes, config.unet_base, rng) {
    config_.validate();
}

template <typename T>
std::unique_ptr<Segmenter<T>> make_segmenter(const std::string& kind, const ModelConfig& config, Rng& rng,
                                             bool freeze_backbone) {
    if (kind == "upernet") return std::make_unique<MaeUperNet<T>>(config, rng, freeze_backbone);
    if (kind == "unet") return std::make_unique<UNetSegmenter<T>>(config, rng);
    throw ConfigError("unknown head '" + kind + "' (expected upernet or unet)");
}

namespace {

template <typename T>
using FeatureCache = std::vector<std::vector<Tensor<T>>>;

/// Per-sample feature tensors with a leading batch extent of 1.
template <typename T>
FeatureCache<T> cache_features(const Segmenter<T>& model, const std::vector<Sample>& samples, std::size_t batch) {
    NoGradGuard no_grad;
    FeatureCache<T> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += batch) {
        const std::size_t n = std::min(batch, samples.size() - start);
        std::vector<const Sample*> chunk;
        for (std::size_t i = 0; i < n; ++i) chunk.push_back(&samples[start + i]);
        auto feats = model.features(stack_images<T>(chunk));
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<Tensor<T>> one;
            for (const auto& f : feats) one.push_back(slice(f, 0, i, 1));
            out.push_back(std::move(one));
        }
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> gather_batch(const FeatureCache<T>& cache, const std::vector<std::size_t>& ids) {
    NoGradGuard no_grad;
    std::vector<Tensor<T>> out;
    for (std::size_t k = 0; k < cache[ids[0]].size(); ++k) {
        std::vector<Tensor<T>> parts;
        for (auto id : ids) parts.push_back(cache[id][k]);
        out.push_back(parts.size() == 1 ? parts[0] : concat(parts, 0));
    }
    return out;
}

template <typename T>
std::vector<std::vector<std::uint8_t>> predict_cached(const Segmenter<T>& model, const FeatureCache<T>& cache,
                                                      std::size_t batch) {
    NoGradGuard no_grad;
    std::vector<std::vector<std::uint8_t>> out;
    for (std::size_t start = 0; start < cache.size(); start += batch) {
        std::vector<std::size_t> ids;
        for (std::size_t i = start; i < std::min(cache.size(), start + batch); ++i) ids.push_back(i);
        auto logits = model.logits(gather_batch(cache, ids));
        auto flat = argmax_channels(logits);
        const std::size_t per = flat.size() / ids.size();
        for (std::size_t i = 0; i < ids.size(); ++i)
            out.emplace_back(flat.begin() + static_cast<long>(i * per), flat.begin() + static_cast<long>((i + 1) * per));
    }
    return out;
}

}  // namespace

template <typename T>
std::vector<std::vector<std::uint8_t>> predict_masks(const Segmenter<T>& model, const std::vector<Sample>& samples,
                                                     std::size_t batch) {
    return predict_cached(model, cache_features(model, samples, batch), batch);
}

template <typename T>
SegReport evaluate(const Segmenter<T>& model, const std::vector<Sample>& samples, std::size_t batch) {
    auto preds = predict_masks(model, samples, batch);
    std::vector<std::vector<std::uint8_t>> truths;
    for (const auto& s : samples) truths.push_back(s.labels);
    auto report = evaluate_masks(preds, truths, model.config().n_classes);
    report.model = model.kind();
    return report;
}

std::vector<std::uint64_t> label_histogram(const std::vector<Sample>& samples, std::size_t n_classes) {
    std::vector<std::uint64_t> hist(n_classes, 0);
    for (const auto& s : samples)
        for (auto l : s.labels) {
            if (l == 255) continue;
            if (l >= n_classes) throw DataError("label " + std::to_string(l) + " out of range");
            ++hist[l];
        }
    return hist;
}

template <typename T>
FinetuneResult finetune(Segmenter<T>& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                        const TrainPlan& plan, std::size_t target_class,
                        const std::function<void(const TraceEntry&)>& on_entry) {
    plan.validate();
    if (train.empty()) throw ConfigError("training split is empty");
    if (val.empty()) throw ConfigError("validation split is empty");
    const std::size_t k = model.config().n_classes;
    if (target_class >= k) throw ConfigError("target class out of range");
    if (const auto* up = dynamic_cast<const MaeUperNet<T>*>(&model); up && up->frozen() != plan.freeze_backbone)
        throw ConfigError("plan and model disagree on freezing the backbone");

    FinetuneResult result;
    result.class_weights = plan.class_weights.empty() ? compute_class_weights(label_histogram(train, k))
                                                      : plan.class_weights;
    if (result.class_weights.size() != k)
        throw ConfigError("expected " + std::to_string(k) + " class weights, got " +
                          std::to_string(result.class_weights.size()));

    const auto train_cache = cache_features(model, train, plan.batch_size);
    const auto val_cache = cache_features(model, val, plan.batch_size);
    std::vector<std::vector<std::uint8_t>> val_truth;
    for (const auto& s : val) val_truth.push_back(s.labels);

    auto params = model.params();
    AdamW<T> opt(model.trainable(), {0.9, 0.999, 1e-8, plan.weight_decay});
    Rng sampler(plan.seed);
    double running = 0.0;
    std::size_t counted = 0;
    std::vector<std::size_t> ids(plan.batch_size);
    std::vector<std::uint8_t> labels;
    for (std::size_t it = 0; it < plan.total_iters; ++it) {
        const double lr = poly_lr(it, plan.total_iters, plan.base_lr, plan.min_lr, plan.lr_power);
        labels.clear();
        for (auto& id : ids) {
            id = sampler.below(train.size());
            labels.insert(labels.end(), train[id].labels.begin(), train[id].labels.end());
        }
        opt.zero_grad();
        auto loss = weighted_cross_entropy(model.logits(gather_batch(train_cache, ids)), labels, result.class_weights);
        const double lv = loss.item();
        if (!std::isfinite(lv)) throw TrainingError("non-finite loss at iteration " + std::to_string(it + 1));
        loss.backward();
        try {
            opt.step(lr);
        } catch (const TrainingError& e) {
            throw TrainingError(std::string(e.what()) + " at iteration " + std::to_string(it + 1));
        }
        running += lv;
        ++counted;

        if ((it + 1) % plan.val_every == 0) {
            auto preds = predict_cached(model, val_cache, plan.batch_size);
            const auto report = evaluate_masks(preds, val_truth, k);
            TraceEntry e{it + 1, running / static_cast<double>(counted), report.iou[target_class].value_or(0.0), lr};
            running = 0.0;
            counted = 0;
            result.trace.push_back(e);
            if (on_entry) on_entry(e);
            if (e.val_iou > result.best_iou) {
                result.best_iou = e.val_iou;
                result.best_iter = e.iter;
                result.best_params.clear();
                for (const auto& p : params) result.best_params.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
            }
        }
    }
    return result;
}

#define TMAE_INSTANTIATE(T)                                                                                   \
    template Tensor<T> stack_images<T>(const std::vector<const Sample*>&);                                    \
    template class MaeUperNet<T>;                                                                             \
    template class UNetSegmenter<T>;                                                                          \
    template std::unique_ptr<Segmenter<T>> make_segmenter<T>(const std::string&, const ModelConfig&, Rng&, bool); \
    template std::vector<std::vector<std::uint8_t>> predict_masks(const Segmenter<T>&, const std::vector<Sample>&, \
                                                                  std::size_t);                              \
    template SegReport evaluate(const Segmenter<T>&, const std::vector<Sample>&, std::size_t);                \
    template FinetuneResult finetune(Segmenter<T>&, const std::vector<Sample>&, const std::vector<Sample>&,   \
                                     const TrainPlan&, std::size_t, const std::function<void(const TraceEntry&)>&);

TMAE_INSTANTIATE(float)
TMAE_INSTANTIATE(double)

}  // namespace tmae
