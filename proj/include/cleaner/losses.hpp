// Copyright 2026 The cleanerbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cleaner/error.hpp"
#include "cleaner/model.hpp"

namespace cleaner {

struct LossConfig {
  double t_p = 0.3;  // positive temperature
  double t_n = 0.3;  // negative temperature
  // Fixed contrastive temperature. Unset means exp(-logit_scale), learned.
  std::optional<double> clip_temperature;
  double alpha = 1.0;      // weight of the CleanCLIP objective
  double beta = 1.0;       // weight of the positive/negative sub-caption term
  double lambda_ss = 1.0;  // weight of the unimodal term inside CleanCLIP
  // Use K * exp(<z_I_i, z_n_i>/t_n) instead of the sum over all negatives.
  bool own_negative_only = false;

  void validate() const {
    if (!(t_p > 0.0)) throw ConfigError("loss.t_p: must be > 0");
    if (!(t_n > 0.0)) throw ConfigError("loss.t_n: must be > 0");
    if (clip_temperature && !(*clip_temperature > 0.0)) {
      throw ConfigError("loss.clip_temperature: must be > 0");
    }
    if (!(alpha >= 0.0)) throw ConfigError("loss.alpha: must be >= 0");
    if (!(beta >= 0.0)) throw ConfigError("loss.beta: must be >= 0");
    if (!(lambda_ss >= 0.0)) throw ConfigError("loss.lambda_ss: must be >= 0");
  }
};

// --- Losses over embedding batches (rows are embeddings) ---------------

struct ClipLossValue {
  double value = 0.0;
  Matrix d_image;
  Matrix d_text;
  double d_temperature = 0.0;
};

struct SsLossValue {
  double value = 0.0;
  Matrix d_image, d_aug_image, d_text, d_aug_text;
  double d_temperature = 0.0;
};

struct PnLossValue {
  double value = 0.0;
  double i2t = 0.0;
  double t2i = 0.0;
  Matrix d_image, d_positive, d_negative;
};

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": batch shapes differ (" + std::to_string(a.rows()) +
                     "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

// Mean over rows of -log softmax(logits)[i][i]; writes dloss/dlogits.
inline double diagonal_cross_entropy(const Matrix& logits, Matrix& dlogits) {
  const auto n = logits.rows();
  dlogits.resize(n, logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    double s = e.sum();
    total += std::log(s) + mx - logits(i, i);
    dlogits.row(i) = e / (s * static_cast<double>(n));
    dlogits(i, i) -= 1.0 / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

// -log softmax(logits)[target] with gradient scaled by `weight`.
inline double softmax_nll(const Eigen::RowVectorXd& logits, Eigen::Index target, double weight,
                          Eigen::RowVectorXd& dlogits) {
  double mx = logits.maxCoeff();
  Eigen::RowVectorXd e = (logits.array() - mx).exp();
  double s = e.sum();
  dlogits = weight * e / s;
  dlogits(target) -= weight;
  return std::log(s) + mx - logits(target);
}

}  // namespace detail

// Symmetric InfoNCE over the N x N similarity matrix.
inline ClipLossValue clip_loss(const Matrix& image, const Matrix& text, double temperature) {
  detail::require_same_shape(image, text, "clip_loss");
  if (image.rows() < 1) throw ShapeError("clip_loss: empty batch");
  if (!(temperature > 0.0)) throw ConfigError("clip_loss: temperature must be > 0");
  Matrix logits = image * text.transpose() / temperature;
  Matrix d_rows, d_cols;
  double i2t = detail::diagonal_cross_entropy(logits, d_rows);
  double t2i = detail::diagonal_cross_entropy(logits.transpose(), d_cols);
  Matrix dlogits = 0.5 * (d_rows + d_cols.transpose());
  ClipLossValue out;
  out.value = 0.5 * (i2t + t2i);
  out.d_image = dlogits * text / temperature;
  out.d_text = dlogits.transpose() * image / temperature;
  out.d_temperature = -(dlogits.array() * logits.array()).sum() / temperature;
  return out;
}

// Unimodal InfoNCE, image vs augmented image and text vs augmented text,
// averaged.
inline SsLossValue ss_loss(const Matrix& image, const Matrix& aug_image, const Matrix& text,
                           const Matrix& aug_text, double temperature) {
  detail::require_same_shape(image, aug_image, "ss_loss");
  detail::require_same_shape(image, text, "ss_loss");
  detail::require_same_shape(text, aug_text, "ss_loss");
  if (image.rows() < 1) throw ShapeError("ss_loss: empty batch");
  if (!(temperature > 0.0)) throw ConfigError("ss_loss: temperature must be > 0");
  Matrix li = image * aug_image.transpose() / temperature;
  Matrix lt = text * aug_text.transpose() / temperature;
  Matrix di, dt;
  double vi = detail::diagonal_cross_entropy(li, di);
  double vt = detail::diagonal_cross_entropy(lt, dt);
  di *= 0.5;
  dt *= 0.5;
  SsLossValue out;
  out.value = 0.5 * (vi + vt);
  out.d_image = di * aug_image / temperature;
  out.d_aug_image = di.transpose() * image / temperature;
  out.d_text = dt * aug_text / temperature;
  out.d_aug_text = dt.transpose() * text / temperature;
  out.d_temperature =
      -((di.array() * li.array()).sum() + (dt.array() * lt.array()).sum()) / temperature;
  return out;
}

// Positive/negative sub-caption loss. Row i of the three batches is the
// quadruple (image, positive sub-caption, negative sub-caption).
//
//   i2t_i = -log e^{<I_i,P_i>/t_p} / (sum_j e^{<I_i,P_j>/t_p} + sum_k e^{<I_i,N_k>/t_n})
//   t2i_i = -log e^{<P_i,I_i>/t_p} / (sum_j e^{<P_i,I_j>/t_p} + sum_k e^{<N_k,I_i>/t_n})
//   value = (mean_i i2t_i + mean_i t2i_i) / 2
//
// With own_negative_only the negative sums become K e^{<I_i,N_i>/t_n}.
inline PnLossValue pn_loss(const Matrix& image, const Matrix& positive, const Matrix& negative,
                           double t_p, double t_n, bool own_negative_only = false) {
  detail::require_same_shape(image, positive, "pn_loss");
  detail::require_same_shape(image, negative, "pn_loss");
  if (!(t_p > 0.0) || !(t_n > 0.0)) throw ConfigError("pn_loss: temperatures must be > 0");
  const auto k = image.rows();
  PnLossValue out;
  out.d_image = Matrix::Zero(image.rows(), image.cols());
  out.d_positive = Matrix::Zero(image.rows(), image.cols());
  out.d_negative = Matrix::Zero(image.rows(), image.cols());
  if (k == 0) return out;

  const Matrix sp = image * positive.transpose();  // sp(i, j) = <I_i, P_j>
  const Matrix sn = image * negative.transpose();  // sn(i, k) = <I_i, N_k>
  Matrix dsp = Matrix::Zero(k, k);
  Matrix dsn = Matrix::Zero(k, k);
  const double w = 0.5 / static_cast<double>(k);
  const double log_k = std::log(static_cast<double>(k));
  const auto n_neg = own_negative_only ? Eigen::Index{1} : k;
  Eigen::RowVectorXd logits(k + n_neg), dl;

  auto negatives_into = [&](Eigen::Index i) {
    if (own_negative_only) {
      logits(k) = sn(i, i) / t_n + log_k;
    } else {
      logits.tail(k) = sn.row(i) / t_n;
    }
  };
  auto scatter_negatives = [&](Eigen::Index i) {
    if (own_negative_only) {
      dsn(i, i) += dl(k) / t_n;
    } else {
      dsn.row(i) += dl.tail(k) / t_n;
    }
  };

  double i2t = 0.0, t2i = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    logits.head(k) = sp.row(i) / t_p;
    negatives_into(i);
    i2t += detail::softmax_nll(logits, i, w, dl);
    dsp.row(i) += dl.head(k) / t_p;
    scatter_negatives(i);

    logits.head(k) = sp.col(i).transpose() / t_p;
    negatives_into(i);
    t2i += detail::softmax_nll(logits, i, w, dl);
    dsp.col(i) += dl.head(k).transpose() / t_p;
    scatter_negatives(i);
  }
  out.i2t = i2t / static_cast<double>(k);
  out.t2i = t2i / static_cast<double>(k);
  out.value = 0.5 * (out.i2t + out.t2i);
  out.d_image = dsp * positive + dsn * negative;
  out.d_positive = dsp.transpose() * image;
  out.d_negative = dsn.transpose() * image;
  return out;
}

// --- Objectives over model parameters ------------------------------------

struct LossValue {
  double value = 0.0;
  ParamGrads gradients;
};

// One mini-batch of (image, caption) pairs plus the augmented views the
// unimodal term needs. Augmented views may be left empty for the plain
// contrastive objective.
struct PairBatch {
  Matrix images;  // N x pixel_count
  std::vector<TokenIds> captions;
  Matrix aug_images;
  std::vector<TokenIds> aug_captions;

  std::size_t size() const noexcept { return captions.size(); }
};

// K quadruples for the sub-caption term; the original caption is not used
// by the loss.
struct QuadBatch {
  Matrix images;  // K x pixel_count
  std::vector<TokenIds> positives;
  std::vector<TokenIds> negatives;

  std::size_t size() const noexcept { return positives.size(); }
};

inline double clip_temperature(const ModelParams& p, const LossConfig& cfg) {
  return cfg.clip_temperature ? *cfg.clip_temperature : std::exp(-p.logit_scale);
}

namespace detail {

inline void temperature_backward(const ModelParams& p, const LossConfig& cfg, double d_temperature,
                                 ParamGrads& g) {
  // t = exp(-s)  =>  dL/ds = -t dL/dt
  if (!cfg.clip_temperature) g.logit_scale += -std::exp(-p.logit_scale) * d_temperature;
}

inline void check_pair_batch(const ModelParams& p, const PairBatch& b, bool need_aug) {
  if (static_cast<std::size_t>(b.images.rows()) != b.captions.size()) {
    throw ShapeError("pair batch: image and caption counts differ");
  }
  if (b.captions.empty()) throw ShapeError("pair batch: empty");
  if (static_cast<std::size_t>(b.images.cols()) != p.pixel_count()) {
    throw ShapeError("pair batch: pixel count mismatch");
  }
  if (need_aug && (b.aug_images.rows() != b.images.rows() || b.aug_images.cols() != b.images.cols() ||
                   b.aug_captions.size() != b.captions.size())) {
    throw ShapeError("pair batch: augmented views missing or mis-sized");
  }
}

}  // namespace detail

inline LossValue clip_objective(const ModelParams& p, const PairBatch& b, const LossConfig& cfg) {
  detail::check_pair_batch(p, b, false);
  auto zi = encode_image_batch(p, b.images);
  auto zt = encode_text_batch(p, b.captions);
  const double t = clip_temperature(p, cfg);
  auto l = clip_loss(zi.z, zt.z, t);
  LossValue out{l.value, ParamGrads::zeros_like(p)};
  image_backward(b.images, zi, l.d_image, out.gradients);
  text_backward(b.captions, zt, l.d_text, out.gradients);
  detail::temperature_backward(p, cfg, l.d_temperature, out.gradients);
  return out;
}

inline LossValue ss_objective(const ModelParams& p, const PairBatch& b, const LossConfig& cfg) {
  detail::check_pair_batch(p, b, true);
  auto zi = encode_image_batch(p, b.images);
  auto zia = encode_image_batch(p, b.aug_images);
  auto zt = encode_text_batch(p, b.captions);
  auto zta = encode_text_batch(p, b.aug_captions);
  const double t = clip_temperature(p, cfg);
  auto l = ss_loss(zi.z, zia.z, zt.z, zta.z, t);
  LossValue out{l.value, ParamGrads::zeros_like(p)};
  image_backward(b.images, zi, l.d_image, out.gradients);
  image_backward(b.aug_images, zia, l.d_aug_image, out.gradients);
  text_backward(b.captions, zt, l.d_text, out.gradients);
  text_backward(b.aug_captions, zta, l.d_aug_text, out.gradients);
  detail::temperature_backward(p, cfg, l.d_temperature, out.gradients);
  return out;
}

// clip + lambda_ss * ss
inline LossValue cclip_objective(const ModelParams& p, const PairBatch& b, const LossConfig& cfg) {
  auto out = clip_objective(p, b, cfg);
  if (cfg.lambda_ss == 0.0) return out;
  auto ss = ss_objective(p, b, cfg);
  out.value += cfg.lambda_ss * ss.value;
  out.gradients.axpy(cfg.lambda_ss, ss.gradients);
  return out;
}

inline LossValue pn_objective(const ModelParams& p, const QuadBatch& q, const LossConfig& cfg) {
  cfg.validate();
  LossValue out{0.0, ParamGrads::zeros_like(p)};
  if (q.size() == 0) return out;
  if (static_cast<std::size_t>(q.images.rows()) != q.size() || q.negatives.size() != q.size()) {
    throw ShapeError("quad batch: member counts differ");
  }
  auto zi = encode_image_batch(p, q.images);
  auto zp = encode_text_batch(p, q.positives);
  auto zn = encode_text_batch(p, q.negatives);
  auto l = pn_loss(zi.z, zp.z, zn.z, cfg.t_p, cfg.t_n, cfg.own_negative_only);
  out.value = l.value;
  image_backward(q.images, zi, l.d_image, out.gradients);
  text_backward(q.positives, zp, l.d_positive, out.gradients);
  text_backward(q.negatives, zn, l.d_negative, out.gradients);
  return out;
}

// alpha * cclip + beta * pn
inline LossValue cleaner_objective(const ModelParams& p, const PairBatch& b, const QuadBatch& q,
                                   const LossConfig& cfg) {
  auto out = cclip_objective(p, b, cfg);
  if (cfg.alpha != 1.0) {
    out.value *= cfg.alpha;
    out.gradients.scale(cfg.alpha);
  }
  if (q.size() == 0 || cfg.beta == 0.0) return out;
  auto pn = pn_objective(p, q, cfg);
  out.value += cfg.beta * pn.value;
  out.gradients.axpy(cfg.beta, pn.gradients);
  return out;
}

}  // namespace cleaner
