#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "modgen/dataset.hpp"
#include "modgen/models.hpp"

namespace modgen {

struct EvalReport {
  std::vector<double> per_class_recall;  // NaN for classes absent from the test set
  double balanced_accuracy = 0.0;
  double unbalanced_accuracy = 0.0;
  std::vector<std::vector<Index>> confusion;  // [truth][pred]
  Index n_samples = 0;
  Combo combo;
  std::string domain_tag;
};

inline std::vector<std::vector<Index>> confusion_matrix(const std::vector<int>& preds,
                                                        const std::vector<int>& truth, int num_classes) {
  require(!truth.empty(), "accuracy of an empty prediction set");
  require(preds.size() == truth.size(), "preds and truth differ in length");
  require(num_classes >= 1, "num_classes must be >= 1");
  std::vector<std::vector<Index>> cm(static_cast<std::size_t>(num_classes),
                                     std::vector<Index>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && truth[i] < num_classes && preds[i] >= 0 && preds[i] < num_classes,
            "label out of range [0, " + std::to_string(num_classes) + ")");
    ++cm[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(preds[i])];
  }
  return cm;
}

// Recall per class; NaN where the class has no truth samples.
inline std::vector<double> per_class_recall(const std::vector<std::vector<Index>>& cm) {
  std::vector<double> out;
  for (std::size_t c = 0; c < cm.size(); ++c) {
    Index total = 0;
    for (Index v : cm[c]) total += v;
    out.push_back(total == 0 ? std::numeric_limits<double>::quiet_NaN()
                             : static_cast<double>(cm[c][c]) / static_cast<double>(total));
  }
  return out;
}

// Mean per-class recall over classes present in truth.
inline double balanced_accuracy(const std::vector<int>& preds, const std::vector<int>& truth, int num_classes) {
  const auto recall = per_class_recall(confusion_matrix(preds, truth, num_classes));
  double sum = 0.0;
  int present = 0;
  for (double r : recall)
    if (!std::isnan(r)) {
      sum += r;
      ++present;
    }
  return sum / present;
}

inline double unbalanced_accuracy(const std::vector<int>& preds, const std::vector<int>& truth) {
  require(!truth.empty(), "accuracy of an empty prediction set");
  require(preds.size() == truth.size(), "preds and truth differ in length");
  Index hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += preds[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

inline EvalReport make_report(const std::vector<int>& preds, const std::vector<int>& truth, int num_classes) {
  EvalReport r;
  r.confusion = confusion_matrix(preds, truth, num_classes);
  r.per_class_recall = per_class_recall(r.confusion);
  r.balanced_accuracy = balanced_accuracy(preds, truth, num_classes);
  r.unbalanced_accuracy = unbalanced_accuracy(preds, truth);
  r.n_samples = static_cast<Index>(truth.size());
  return r;
}

inline int argmax(const double* v, Index n) {
  Index best = 0;
  for (Index i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

struct VideoPredictions {
  std::vector<std::size_t> items;           // dataset item per video
  std::vector<std::vector<double>> logits;  // mean chunk logits per video
  std::vector<int> preds, truth;
};

// Center window of every chunk, logits averaged per video.
template <typename T>
VideoPredictions predict_videos(const ActionClassifier<T>& ac, const FrameStore& store,
                                const DatasetIndex& subset_of_store, const Combo& combo, Index chunk_len,
                                Index batch = 16) {
  const NetConfig& net = ac.config();
  if (net.input_channels != 3 * static_cast<int>(combo.size()))
    throw ConfigError("classifier expects " + std::to_string(net.input_channels / 3) +
                      " modalities but combo " + combo_name(combo) + " has " + std::to_string(combo.size()));
  const auto& all = store.index();
  std::map<std::string, std::size_t> item_of;
  for (std::size_t i = 0; i < all.items.size(); ++i) item_of[all.items[i].video_id] = i;
  std::vector<Chunk> chunks;
  for (const auto& it : subset_of_store.items) {
    const auto pos = item_of.find(it.video_id);
    require(pos != item_of.end(), "video " + it.video_id + " not in the frame store");
    for (Index c = 0; c < chunk_count(it.frame_count, chunk_len); ++c)
      chunks.push_back({pos->second, c * chunk_len, chunk_len});
  }
  const Index s = net.sequence_length, k = net.num_actions;
  std::map<std::size_t, std::pair<std::vector<double>, int>> sums;
  NoGradGuard no_grad;
  for (std::size_t b0 = 0; b0 < chunks.size(); b0 += static_cast<std::size_t>(batch)) {
    const std::size_t b1 = std::min(chunks.size(), b0 + static_cast<std::size_t>(batch));
    std::vector<ModalityStack> stacks;
    for (std::size_t i = b0; i < b1; ++i)
      stacks.push_back(store.load_window(chunks[i].item, center_window_start(chunks[i], s), s, combo));
    Tensor<T> clips = to_clip_tensor(stacks).template cast<T>();
    const Var<T> logits = ac.forward(Var<T>(std::move(clips)));
    for (std::size_t i = b0; i < b1; ++i) {
      auto& [sum, n] = sums[chunks[i].item];
      if (sum.empty()) sum.assign(static_cast<std::size_t>(k), 0.0);
      for (Index j = 0; j < k; ++j)
        sum[static_cast<std::size_t>(j)] += static_cast<double>(logits.value()[static_cast<Index>(i - b0) * k + j]);
      ++n;
    }
  }
  VideoPredictions out;
  for (auto& [item, acc] : sums) {
    auto& [sum, n] = acc;
    for (auto& v : sum) v /= n;
    out.items.push_back(item);
    out.preds.push_back(argmax(sum.data(), k));
    out.truth.push_back(all.items[item].label);
    out.logits.push_back(std::move(sum));
  }
  return out;
}

template <typename T>
EvalReport evaluate_model(const ActionClassifier<T>& ac, const FrameStore& store, const DatasetIndex& subset,
                          const Combo& combo, const std::string& domain_tag, Index chunk_len) {
  const auto vp = predict_videos(ac, store, subset, combo, chunk_len);
  if (vp.truth.empty()) throw DataError("no evaluable videos for " + domain_tag);
  EvalReport r = make_report(vp.preds, vp.truth, ac.config().num_actions);
  r.combo = combo;
  r.domain_tag = domain_tag;
  return r;
}

}  // namespace modgen
