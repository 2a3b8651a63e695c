#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tmae {

/// K x K pixel counts, rows = truth, columns = prediction.
class ConfusionMatrix {
   public:
    explicit ConfusionMatrix(std::size_t n_classes = 2);

    /// Adds one image. Truth pixels equal to ignore are skipped.
    void accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, int ignore = 255);
    void merge(const ConfusionMatrix& other);

    std::size_t n_classes() const { return k_; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
    std::uint64_t total() const;
    /// Pixels whose truth is class c.
    std::uint64_t support(std::size_t c) const;

    /// TP / (TP + FP + FN); empty when the union is empty.
    std::optional<double> iou(std::size_t c) const;
    std::optional<double> pixel_accuracy() const;

    bool operator==(const ConfusionMatrix&) const = default;

   private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

struct SegReport {
    ConfusionMatrix confusion;
    std::vector<std::optional<double>> iou;
    std::optional<double> pixel_accuracy;
    std::size_t n_images = 0;
    std::string model;
    std::uint64_t seed = 0;

    static SegReport from_confusion(const ConfusionMatrix& cm, std::size_t n_images);

    /// Aligned table with class names, IoU, pixel support and overall accuracy.
    std::string table(const std::vector<std::string>& class_names = {}) const;
    /// One "class<TAB>iou<TAB>pixels" line per class; absent IoU prints as "nan".
    std::string records(const std::vector<std::string>& class_names = {}) const;
};

/// Pooled report over prediction/truth pairs.
SegReport evaluate_masks(const std::vector<std::vector<std::uint8_t>>& preds,
                         const std::vector<std::vector<std::uint8_t>>& truths, std::size_t n_classes);

struct SampleCurve {
    std::vector<std::size_t> validation;
    std::vector<std::vector<std::size_t>> train;  // one nested subset per requested size
    std::vector<std::size_t> sizes;
};

/// Draws a fixed validation split of n_val indices, then nested training
/// subsets of the given sizes (ascending), all from one seeded shuffle of
/// 0..n_items-1. Throws ConfigError when n_items < n_val + max(sizes).
SampleCurve sample_curve(std::size_t n_items, std::vector<std::size_t> sizes, std::uint64_t seed,
                         std::size_t n_val = 50);

}  // namespace tmae
