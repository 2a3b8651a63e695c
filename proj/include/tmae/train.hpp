#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tmae/metrics.hpp"
#include "tmae/optim.hpp"
#include "tmae/seg.hpp"
#include "tmae/vit.hpp"

namespace tmae {

/// One normalized tile and its per-pixel labels (255 = ignore).
struct Sample {
    std::size_t channels = 1, size = 0;
    std::vector<float> image;  // [channels x size x size]
    std::vector<std::uint8_t> labels;
};

/// Stacks samples into [B x C x S x S].
template <typename T>
Tensor<T> stack_images(const std::vector<const Sample*>& samples);

struct TrainPlan {
    std::size_t total_iters = 3000;
    std::size_t val_every = 150;
    std::size_t batch_size = 8;
    double base_lr = 1e-3;
    double lr_power = 1.0;
    double min_lr = 0.0;
    double weight_decay = 0.05;
    bool freeze_backbone = true;
    std::vector<double> class_weights;  // empty: estimate from training labels
    std::uint64_t seed = 0;

    void validate() const;
    bool set(const std::string& key, const std::string& value);
};

struct TraceEntry {
    std::size_t iter = 0;
    double loss = 0.0;  // mean training loss since the previous entry
    double val_iou = 0.0;
    double lr = 0.0;

    /// "iter <n> loss <v> val_iou <v> lr <v>"
    std::string line() const;
};

/// A dense predictor split into a fixed feature stage and a trainable stage.
template <typename T>
class Segmenter {
   public:
    virtual ~Segmenter() = default;

    virtual std::string kind() const = 0;
    virtual const ModelConfig& config() const = 0;

    /// Per-batch inputs to logits() that do not change while training.
    virtual std::vector<Tensor<T>> features(const Tensor<T>& images) const = 0;
    /// [B x K x H x W] from the output of features().
    virtual Tensor<T> logits(const std::vector<Tensor<T>>& features) const = 0;

    virtual ParamList<T> trainable() const = 0;
    /// Everything that goes into a checkpoint.
    virtual ParamList<T> params() const = 0;

    Tensor<T> forward(const Tensor<T>& images) const { return logits(features(images)); }
};

/// ViT encoder taps feeding an UperNet head.
template <typename T>
class MaeUperNet : public Segmenter<T> {
   public:
    MaeUperNet(const ModelConfig& config, Rng& rng, bool freeze_backbone = true);

    std::string kind() const override { return "upernet"; }
    const ModelConfig& config() const override { return encoder_.config(); }
    std::vector<Tensor<T>> features(const Tensor<T>& images) const override;
    Tensor<T> logits(const std::vector<Tensor<T>>& features) const override;
    ParamList<T> trainable() const override;
    ParamList<T> params() const override;

    VitEncoder<T>& encoder() { return encoder_; }
    UperNetHead<T>& head() { return head_; }
    bool frozen() const { return freeze_; }

   private:
    VitEncoder<T> encoder_;
    UperNetHead<T> head_;
    bool freeze_;
};

template <typename T>
class UNetSegmenter : public Segmenter<T> {
   public:
    UNetSegmenter(const ModelConfig& config, Rng& rng);

    std::string kind() const override { return "unet"; }
    const ModelConfig& config() const override { return config_; }
    std::vector<Tensor<T>> features(const Tensor<T>& images) const override { return {images}; }
    Tensor<T> logits(const std::vector<Tensor<T>>& features) const override { return net_(features.at(0)); }
    ParamList<T> trainable() const override { return net_.params(); }
    ParamList<T> params() const override { return net_.params(); }

    UNet<T>& net() { return net_; }

   private:
    ModelConfig config_;
    UNet<T> net_;
};

/// Builds the model named by kind ("upernet" or "unet").
template <typename T>
std::unique_ptr<Segmenter<T>> make_segmenter(const std::string& kind, const ModelConfig& config, Rng& rng,
                                             bool freeze_backbone = true);

/// Argmax masks for every sample, computed in batches without recording.
template <typename T>
std::vector<std::vector<std::uint8_t>> predict_masks(const Segmenter<T>& model, const std::vector<Sample>& samples,
                                                     std::size_t batch = 8);

/// Pooled report over the samples' labels.
template <typename T>
SegReport evaluate(const Segmenter<T>& model, const std::vector<Sample>& samples, std::size_t batch = 8);

/// Per-class pixel counts over non-ignored labels.
std::vector<std::uint64_t> label_histogram(const std::vector<Sample>& samples, std::size_t n_classes);

struct FinetuneResult {
    std::vector<TraceEntry> trace;
    double best_iou = -1.0;
    std::size_t best_iter = 0;
    std::vector<std::vector<float>> best_params;  // values of params() at best_iter
    std::vector<double> class_weights;
};

/// Trains model.trainable() with AdamW under a polynomial schedule, validating
/// every plan.val_every iterations and keeping the parameters with the best
/// IoU of target_class. Batches are drawn with replacement from a sampler
/// seeded by plan.seed. The model is left at its final-iteration state.
template <typename T>
FinetuneResult finetune(Segmenter<T>& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                        const TrainPlan& plan, std::size_t target_class = 1,
                        const std::function<void(const TraceEntry&)>& on_entry = {});

}  // namespace tmae
