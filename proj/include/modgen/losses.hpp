#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "modgen/ops.hpp"
#include "modgen/sinkhorn.hpp"

namespace modgen {

struct LossWeights {
  double lambda_c = 1.0;
  double lambda_r = 10.0;
  double lambda_d = 1.0;
  double alpha = 0.5;

  void validate() const {
    require(lambda_c >= 0.0 && lambda_r >= 0.0 && lambda_d >= 0.0, "loss weights must be >= 0");
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
};

// One row of the metrics CSV.
struct LossReport {
  double novelty = 0.0;
  double diversity = 0.0;
  double class_term = 0.0;
  double cycle = 0.0;
  double dg_total = 0.0;
  double ac_task = 0.0;

  bool finite() const {
    return std::isfinite(novelty) && std::isfinite(diversity) && std::isfinite(class_term) &&
           std::isfinite(cycle) && std::isfinite(dg_total) && std::isfinite(ac_task);
  }
};

// Sum over modalities k of d(novel_k, source_k). Returned positive; the
// generator maximizes it through the sign in dg_objective.
template <typename T>
Var<T> novelty_loss(const std::vector<Var<T>>& src_embs, const std::vector<Var<T>>& nov_embs,
                    const SinkhornConfig& cfg) {
  require(!src_embs.empty(), "novelty_loss: no modalities");
  require(src_embs.size() == nov_embs.size(),
          "novelty_loss: " + std::to_string(src_embs.size()) + " source vs " +
              std::to_string(nov_embs.size()) + " novel modalities");
  std::vector<Var<T>> terms;
  for (std::size_t k = 0; k < src_embs.size(); ++k)
    terms.push_back(sinkhorn_distance(nov_embs[k], src_embs[k], cfg));
  return add_scalars(terms);
}

// Sum over ordered pairs k != l of d(novel_k, novel_l); 0 for one modality.
template <typename T>
Var<T> diversity_loss(const std::vector<Var<T>>& nov_embs, const SinkhornConfig& cfg) {
  require(!nov_embs.empty(), "diversity_loss: no modalities");
  std::vector<Var<T>> terms;
  for (std::size_t k = 0; k < nov_embs.size(); ++k)
    for (std::size_t l = 0; l < nov_embs.size(); ++l)
      if (k != l) terms.push_back(sinkhorn_distance(nov_embs[k], nov_embs[l], cfg));
  if (terms.empty()) return Var<T>(Tensor<T>::scalar(T(0)), false);
  return add_scalars(terms);
}

// Sum over groups of the batch-mean cross-entropy of the frozen classifier's
// logits on novel inputs.
template <typename T>
Var<T> class_loss(const std::vector<Var<T>>& acf_logits, const std::vector<std::vector<int>>& labels) {
  require(!acf_logits.empty(), "class_loss: no logits");
  require(acf_logits.size() == labels.size(), "class_loss: logits and label groups differ in count");
  std::vector<Var<T>> terms;
  for (std::size_t k = 0; k < acf_logits.size(); ++k) terms.push_back(cross_entropy(acf_logits[k], labels[k]));
  return add_scalars(terms);
}

// Sum over k of mean |G(G(x_k)) - x_k|. `gen` maps a Var image batch to one of
// the same shape.
template <typename T, typename Gen>
Var<T> cycle_loss(const Gen& gen, const std::vector<Var<T>>& src_images) {
  require(!src_images.empty(), "cycle_loss: no modalities");
  std::vector<Var<T>> terms;
  for (const auto& x : src_images) terms.push_back(l1_mean(gen(gen(x)), x));
  return add_scalars(terms);
}

// Variant taking the already generated novel batches G(x_k), so the first
// generator pass is shared with the other terms.
template <typename T, typename Gen>
Var<T> cycle_loss_from_novel(const Gen& gen, const std::vector<Var<T>>& src_images,
                             const std::vector<Var<T>>& novel_images) {
  require(!src_images.empty() && src_images.size() == novel_images.size(),
          "cycle_loss: source and novel modality counts differ");
  std::vector<Var<T>> terms;
  for (std::size_t k = 0; k < src_images.size(); ++k)
    terms.push_back(l1_mean(gen(novel_images[k]), src_images[k]));
  return add_scalars(terms);
}

inline double dg_objective(const LossReport& parts, const LossWeights& w) {
  return w.lambda_c * parts.class_term + w.lambda_r * parts.cycle -
         w.lambda_d * (parts.novelty + parts.diversity);
}

template <typename T>
Var<T> dg_objective(const Var<T>& class_term, const Var<T>& cycle, const Var<T>& novelty,
                    const Var<T>& diversity, const LossWeights& w) {
  w.validate();
  return add_scalars<T>({scale(class_term, static_cast<T>(w.lambda_c)), scale(cycle, static_cast<T>(w.lambda_r)),
                         scale(novelty, static_cast<T>(-w.lambda_d)), scale(diversity, static_cast<T>(-w.lambda_d))});
}

// Sum over groups of alpha * CE(source) + (1 - alpha) * CE(novel).
template <typename T>
Var<T> ac_task_loss(const std::vector<Var<T>>& src_logits, const std::vector<Var<T>>& nov_logits,
                    const std::vector<std::vector<int>>& labels, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1], got " + std::to_string(alpha));
  require(!src_logits.empty(), "ac_task_loss: no logits");
  require(src_logits.size() == nov_logits.size() && src_logits.size() == labels.size(),
          "ac_task_loss: group counts differ");
  std::vector<Var<T>> terms;
  for (std::size_t k = 0; k < src_logits.size(); ++k) {
    terms.push_back(scale(cross_entropy(src_logits[k], labels[k]), static_cast<T>(alpha)));
    terms.push_back(scale(cross_entropy(nov_logits[k], labels[k]), static_cast<T>(1.0 - alpha)));
  }
  return add_scalars(terms);
}

inline double ac_task_loss(const std::vector<double>& src_ce, const std::vector<double>& nov_ce, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1], got " + std::to_string(alpha));
  require(src_ce.size() == nov_ce.size(), "ac_task_loss: group counts differ");
  double total = 0.0;
  for (std::size_t k = 0; k < src_ce.size(); ++k) total += alpha * src_ce[k] + (1.0 - alpha) * nov_ce[k];
  return total;
}

}  // namespace modgen
