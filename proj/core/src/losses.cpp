#include "advenc/losses.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "advenc/error.hpp"

namespace advenc {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;

void check_features(const FeatureBatch& adv, const FeatureBatch& clean, double tau) {
  if (adv.rows.rank() != 2) fail(ErrorCode::kShapeMismatch, "feature batch must be B x D");
  require_same_shape(adv.rows, clean.rows, "adv_info_nce");
  if (adv.size() < 2) fail(ErrorCode::kBatchTooSmall, "adv_info_nce needs at least two rows for a negative");
  if (!(tau > 0.0)) fail(ErrorCode::kInvalidParameter, "tau must be positive");
  if (!adv.rows.all_finite() || !clean.rows.all_finite()) fail(ErrorCode::kNonFinite, "non-finite feature row");
}

// Unit rows plus the original norms.
RowMat normalize_rows(const Tensor& rows, Eigen::VectorXd& norms) {
  ConstRowMap m(rows.data(), rows.dim(0), rows.dim(1));
  norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (norms[i] == 0.0) fail(ErrorCode::kZeroNorm, "cosine similarity of a zero-norm feature row");
  }
  return norms.cwiseInverse().asDiagonal() * m;
}

// d/dx of x/|x| applied to g: (g - u (u.g)) / |x|.
Tensor normalization_backward(const RowMat& unit, const Eigen::VectorXd& norms, const RowMat& grad_unit) {
  Tensor out({static_cast<std::size_t>(unit.rows()), static_cast<std::size_t>(unit.cols())});
  RowMap g(out.data(), unit.rows(), unit.cols());
  const Eigen::VectorXd dots = (unit.cwiseProduct(grad_unit)).rowwise().sum();
  g = norms.cwiseInverse().asDiagonal() * (grad_unit - dots.asDiagonal() * unit);
  return out;
}

double log_sum_exp(const double* v, std::size_t n, std::size_t skip) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (j != skip) m = std::max(m, v[j]);
  }
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != skip) s += std::exp(v[j] - m);
  }
  return m + std::log(s);
}

struct InfoNce {
  RowMat adv_unit, clean_unit;
  Eigen::VectorXd adv_norms, clean_norms;
  RowMat logits;  // S / tau
  std::vector<double> per_sample;
};

InfoNce info_nce_forward(const FeatureBatch& adv, const FeatureBatch& clean, double tau) {
  check_features(adv, clean, tau);
  InfoNce r;
  r.adv_unit = normalize_rows(adv.rows, r.adv_norms);
  r.clean_unit = normalize_rows(clean.rows, r.clean_norms);
  r.logits = (r.adv_unit * r.clean_unit.transpose()) / tau;
  const std::size_t b = adv.size();
  r.per_sample.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = r.logits.data() + i * b;
    r.per_sample[i] = row[i] - log_sum_exp(row, b, i);
  }
  return r;
}

void require_image_pair(const Tensor& x_adv, const Tensor& x, const char* what) {
  require_same_shape(x_adv, x, what);
  if (x.rank() < 2 || x.dim(0) == 0) fail(ErrorCode::kShapeMismatch, std::string(what) + ": expected a batch");
}

// mean_n ||d_n|| and, optionally, d(mean)/d(d) = d_n / (B ||d_n||).
double mean_norm(const Tensor& diff, Tensor* grad) {
  const std::size_t batch = diff.dim(0);
  double total = 0.0;
  if (grad) *grad = Tensor(diff.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const auto d = diff.sample(n);
    double sq = 0.0;
    for (double v : d) sq += v * v;
    const double norm = std::sqrt(sq);
    total += norm;
    if (grad && norm > 0.0) {
      auto g = grad->sample(n);
      const double scale = 1.0 / (static_cast<double>(batch) * norm);
      for (std::size_t i = 0; i < d.size(); ++i) g[i] = d[i] * scale;
    }
  }
  return total / static_cast<double>(batch);
}

}  // namespace

std::vector<double> adv_info_nce_per_sample(const FeatureBatch& adv, const FeatureBatch& clean, double tau) {
  return info_nce_forward(adv, clean, tau).per_sample;
}

double adv_info_nce(const FeatureBatch& adv, const FeatureBatch& clean, double tau) {
  const auto per = adv_info_nce_per_sample(adv, clean, tau);
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(per.size());
}

LossGrad adv_info_nce_with_grad(const FeatureBatch& adv, const FeatureBatch& clean, double tau) {
  const InfoNce r = info_nce_forward(adv, clean, tau);
  const std::size_t b = adv.size();
  const double inv_b = 1.0 / static_cast<double>(b);

  // dL/dS for the cosine matrix S (logits = S / tau).
  RowMat d_sim = RowMat::Zero(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b));
  double value = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    value += r.per_sample[i];
    const double* row = r.logits.data() + i * b;
    const double lse = row[i] - r.per_sample[i];
    for (std::size_t j = 0; j < b; ++j) {
      const double coeff = j == i ? 1.0 : -std::exp(row[j] - lse);
      d_sim(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = coeff * inv_b / tau;
    }
  }
  const RowMat d_adv_unit = d_sim * r.clean_unit;
  const RowMat d_clean_unit = d_sim.transpose() * r.adv_unit;
  return {value * inv_b, normalization_backward(r.adv_unit, r.adv_norms, d_adv_unit),
          normalization_backward(r.clean_unit, r.clean_norms, d_clean_unit)};
}

double hfc_loss(const Tensor& x_adv, const Tensor& x, const FrequencyFilterSpec& spec) {
  return hfc_loss_with_grad(x_adv, x, spec).value;
}

LossGrad hfc_loss_with_grad(const Tensor& x_adv, const Tensor& x, const FrequencyFilterSpec& spec) {
  require_image_pair(x_adv, x, "hfc_loss");
  Tensor diff(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x_adv[i] - x[i];
  // H is linear, so H(x_adv) - H(x) = H(x_adv - x).
  const Tensor high = high_freq_component(diff, spec);
  Tensor grad;
  const double value = -mean_norm(high, &grad);
  // H is a symmetric projection and `high` already lies in its range, so the
  // chain rule through H leaves grad unchanged.
  for (double& g : grad.values()) g = -g;
  return {value, std::move(grad), {}};
}

double quality_loss(const Tensor& x_adv, const Tensor& x) { return quality_loss_with_grad(x_adv, x).value; }

LossGrad quality_loss_with_grad(const Tensor& x_adv, const Tensor& x) {
  require_image_pair(x_adv, x, "quality_loss");
  Tensor diff(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x_adv[i] - x[i];
  Tensor grad;
  const double value = mean_norm(diff, &grad);
  return {value, std::move(grad), {}};
}

LossGrad nt_xent_with_grad(const Tensor& view1, const Tensor& view2, double tau) {
  if (view1.rank() != 2) fail(ErrorCode::kShapeMismatch, "nt_xent views must be N x D");
  require_same_shape(view1, view2, "nt_xent");
  const std::size_t n = view1.dim(0);
  if (n < 2) fail(ErrorCode::kBatchTooSmall, "nt_xent needs at least two pairs");
  const std::size_t m = 2 * n;
  const Tensor both = concat(view1, view2);
  Eigen::VectorXd norms;
  const RowMat unit = normalize_rows(both, norms);
  const RowMat logits = (unit * unit.transpose()) / tau;

  RowMat d_logits = RowMat::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  double value = 0.0;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t pos = (i + n) % m;
    const double* row = logits.data() + i * m;
    const double lse = log_sum_exp(row, m, i);
    value += lse - row[pos];
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      double g = std::exp(row[k] - lse);
      if (k == pos) g -= 1.0;
      d_logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = g * inv_m;
    }
  }
  const RowMat d_unit = ((d_logits + d_logits.transpose()) * unit) / tau;
  const Tensor grad = normalization_backward(unit, norms, d_unit);
  return {value * inv_m, grad.slice(0, n), grad.slice(n, m)};
}

LossGrad softmax_cross_entropy_with_grad(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    fail(ErrorCode::kShapeMismatch, "cross-entropy logits/labels mismatch");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0) fail(ErrorCode::kEmptyInput, "cross-entropy on an empty batch");
  Tensor grad(logits.shape());
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    const auto label = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || label >= k) fail(ErrorCode::kInvalidParameter, "label out of range");
    const double lse = log_sum_exp(row, k, k);
    value += lse - row[label];
    for (std::size_t j = 0; j < k; ++j) {
      grad[i * k + j] = (std::exp(row[j] - lse) - (j == label ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  return {value / static_cast<double>(n), std::move(grad), {}};
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace advenc
