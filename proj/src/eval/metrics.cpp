#include "tmae/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "tmae/error.hpp"
#include "tmae/rng.hpp"

namespace tmae {

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes) : k_(n_classes), counts_(n_classes * n_classes, 0) {
    if (n_classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                 int ignore) {
    if (pred.size() != truth.size())
        throw ContractError("prediction has " + std::to_string(pred.size()) + " pixels, truth has " +
                            std::to_string(truth.size()));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] == ignore) continue;
        if (truth[i] >= k_ || pred[i] >= k_)
            throw DataError("class id out of range at pixel " + std::to_string(i));
        ++counts_[truth[i] * k_ + pred[i]];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw ContractError("cannot merge confusion matrices of different class counts");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::support(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < k_; ++p) s += at(c, p);
    return s;
}

std::optional<double> ConfusionMatrix::iou(std::size_t c) const {
    const std::uint64_t tp = at(c, c);
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < k_; ++o) {
        if (o == c) continue;
        fp += at(o, c);
        fn += at(c, o);
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(uni);
}

std::optional<double> ConfusionMatrix::pixel_accuracy() const {
    const auto t = total();
    if (t == 0) return std::nullopt;
    std::uint64_t diag = 0;
    for (std::size_t c = 0; c < k_; ++c) diag += at(c, c);
    return static_cast<double>(diag) / static_cast<double>(t);
}

SegReport SegReport::from_confusion(const ConfusionMatrix& cm, std::size_t n_images) {
    SegReport r;
    r.confusion = cm;
    for (std::size_t c = 0; c < cm.n_classes(); ++c) r.iou.push_back(cm.iou(c));
    r.pixel_accuracy = cm.pixel_accuracy();
    r.n_images = n_images;
    return r;
}

namespace {

std::string class_name(const std::vector<std::string>& names, std::size_t c) {
    return c < names.size() ? names[c] : std::to_string(c);
}

std::string fmt(const std::optional<double>& v) {
    if (!v) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return buf;
}

}  // namespace

std::string SegReport::table(const std::vector<std::string>& class_names) const {
    std::size_t width = 5;
    for (std::size_t c = 0; c < iou.size(); ++c) width = std::max(width, class_name(class_names, c).size());
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-*s  %8s  %12s\n", static_cast<int>(width), "class", "IoU", "pixels");
    os << line;
    for (std::size_t c = 0; c < iou.size(); ++c) {
        std::snprintf(line, sizeof line, "%-*s  %8s  %12llu\n", static_cast<int>(width),
                      class_name(class_names, c).c_str(), fmt(iou[c]).c_str(),
                      static_cast<unsigned long long>(confusion.support(c)));
        os << line;
    }
    os << "pixel accuracy " << fmt(pixel_accuracy) << " over " << n_images << " images\n";
    return os.str();
}

std::string SegReport::records(const std::vector<std::string>& class_names) const {
    std::ostringstream os;
    for (std::size_t c = 0; c < iou.size(); ++c)
        os << class_name(class_names, c) << '\t' << fmt(iou[c]) << '\t' << confusion.support(c) << '\n';
    return os.str();
}

SegReport evaluate_masks(const std::vector<std::vector<std::uint8_t>>& preds,
                         const std::vector<std::vector<std::uint8_t>>& truths, std::size_t n_classes) {
    if (preds.size() != truths.size()) throw ContractError("prediction and truth counts differ");
    if (preds.empty()) throw ConfigError("evaluation split is empty");
    ConfusionMatrix cm(n_classes);
    for (std::size_t i = 0; i < preds.size(); ++i) cm.accumulate(preds[i], truths[i]);
    return SegReport::from_confusion(cm, preds.size());
}

SampleCurve sample_curve(std::size_t n_items, std::vector<std::size_t> sizes, std::uint64_t seed,
                         std::size_t n_val) {
    std::sort(sizes.begin(), sizes.end());
    const std::size_t largest = sizes.empty() ? 0 : sizes.back();
    if (n_items < n_val + largest)
        throw ConfigError("sample curve needs " + std::to_string(n_val + largest) + " items, have " +
                          std::to_string(n_items));
    Rng rng(seed);
    auto order = rng.permutation(n_items);
    SampleCurve out;
    out.sizes = sizes;
    out.validation.assign(order.begin(), order.begin() + static_cast<long>(n_val));
    for (auto s : sizes)
        out.train.emplace_back(order.begin() + static_cast<long>(n_val), order.begin() + static_cast<long>(n_val + s));
    return out;
}

}  // namespace tmae
