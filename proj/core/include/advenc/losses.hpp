#pragma once

#include <span>
#include <vector>

#include "advenc/frequency.hpp"
#include "advenc/tensor.hpp"

namespace advenc {

/// B x D encoder outputs.
struct FeatureBatch {
  Tensor rows;
  bool normalized = false;

  std::size_t size() const { return rows.rank() == 2 ? rows.dim(0) : 0; }
  std::size_t dim() const { return rows.rank() == 2 ? rows.dim(1) : 0; }
};

/// A scalar loss and its gradient with respect to each of its (up to two) inputs.
struct LossGrad {
  double value = 0.0;
  Tensor grad_first;
  Tensor grad_second;
};

/// Adversarial InfoNCE. For each i:
///   L_i = S(adv_i, clean_i)/tau - log sum_{j != i} exp(S(adv_i, clean_j)/tau)
/// with S the cosine similarity; the positive pair is excluded from the sum.
/// Minimizing it pushes adv_i away from its own clean counterpart.
std::vector<double> adv_info_nce_per_sample(const FeatureBatch& adv, const FeatureBatch& clean, double tau);
double adv_info_nce(const FeatureBatch& adv, const FeatureBatch& clean, double tau);
/// Batch mean with gradients w.r.t. adv rows (first) and clean rows (second).
LossGrad adv_info_nce_with_grad(const FeatureBatch& adv, const FeatureBatch& clean, double tau);

/// -mean_n || H(x_adv_n) - H(x_n) ||_2, always <= 0. Gradient is w.r.t. x_adv.
double hfc_loss(const Tensor& x_adv, const Tensor& x, const FrequencyFilterSpec& spec);
LossGrad hfc_loss_with_grad(const Tensor& x_adv, const Tensor& x, const FrequencyFilterSpec& spec);

/// mean_n || x_adv_n - x_n ||_2, always >= 0. Gradient is w.r.t. x_adv.
double quality_loss(const Tensor& x_adv, const Tensor& x);
LossGrad quality_loss_with_grad(const Tensor& x_adv, const Tensor& x);

struct LossWeights {
  double alpha = 1.0;
  double beta = 5.0;
  double lambda = 1.0;
};

inline double total_loss(double l_adv, double l_hfc, double l_q, const LossWeights& w) {
  return w.alpha * l_adv + w.beta * l_hfc + w.lambda * l_q;
}

/// Normalized-temperature cross-entropy over two views (N x D each); the
/// positive of view1[i] is view2[i] and vice versa, all other 2N - 2 rows are
/// negatives. Gradients w.r.t. view1 (first) and view2 (second).
LossGrad nt_xent_with_grad(const Tensor& view1, const Tensor& view2, double tau);

/// Mean softmax cross-entropy of N x K logits; gradient w.r.t. logits in grad_first.
LossGrad softmax_cross_entropy_with_grad(const Tensor& logits, std::span<const int> labels);

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace advenc
