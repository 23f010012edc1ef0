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
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "cleaner/corpus.hpp"
#include "cleaner/error.hpp"
#include "cleaner/io.hpp"
#include "cleaner/lexicon.hpp"
#include "cleaner/random.hpp"

namespace cleaner {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using TokenIds = std::vector<std::size_t>;

// Linear image and bag-of-tokens text encoders into a shared d-dim space.
// The same struct doubles as the gradient accumulator.
struct ModelParams {
  Matrix image_weights;  // d x pixel_count
  Vector image_bias;     // d
  Matrix text_weights;   // d x vocab_size
  Vector text_bias;      // d
  double logit_scale = 0.0;

  std::size_t embed_dim() const noexcept { return static_cast<std::size_t>(image_bias.size()); }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(image_weights.cols()); }
  std::size_t vocab_size() const noexcept { return static_cast<std::size_t>(text_weights.cols()); }

  static ModelParams zeros_like(const ModelParams& p) {
    ModelParams z;
    z.image_weights = Matrix::Zero(p.image_weights.rows(), p.image_weights.cols());
    z.image_bias = Vector::Zero(p.image_bias.size());
    z.text_weights = Matrix::Zero(p.text_weights.rows(), p.text_weights.cols());
    z.text_bias = Vector::Zero(p.text_bias.size());
    z.logit_scale = 0.0;
    return z;
  }

  // this += scale * other
  void axpy(double scale, const ModelParams& other) {
    image_weights += scale * other.image_weights;
    image_bias += scale * other.image_bias;
    text_weights += scale * other.text_weights;
    text_bias += scale * other.text_bias;
    logit_scale += scale * other.logit_scale;
  }

  void scale(double s) {
    image_weights *= s;
    image_bias *= s;
    text_weights *= s;
    text_bias *= s;
    logit_scale *= s;
  }

  std::size_t parameter_count() const noexcept {
    return static_cast<std::size_t>(image_weights.size() + image_bias.size() +
                                    text_weights.size() + text_bias.size()) + 1;
  }

  // Flat views in checkpoint order; weight decay applies to matrices only.
  struct TensorView {
    std::span<double> values;
    bool decay;
  };
  std::vector<TensorView> tensors() {
    return {{{image_weights.data(), static_cast<std::size_t>(image_weights.size())}, true},
            {{image_bias.data(), static_cast<std::size_t>(image_bias.size())}, false},
            {{text_weights.data(), static_cast<std::size_t>(text_weights.size())}, true},
            {{text_bias.data(), static_cast<std::size_t>(text_bias.size())}, false},
            {{&logit_scale, 1}, false}};
  }

  struct ConstTensorView {
    std::span<const double> values;
    bool decay;
  };
  std::vector<ConstTensorView> tensors() const {
    return {{{image_weights.data(), static_cast<std::size_t>(image_weights.size())}, true},
            {{image_bias.data(), static_cast<std::size_t>(image_bias.size())}, false},
            {{text_weights.data(), static_cast<std::size_t>(text_weights.size())}, true},
            {{text_bias.data(), static_cast<std::size_t>(text_bias.size())}, false},
            {{&logit_scale, 1}, false}};
  }

  bool all_finite() const {
    return image_weights.allFinite() && image_bias.allFinite() && text_weights.allFinite() &&
           text_bias.allFinite() && std::isfinite(logit_scale);
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.image_weights.rows() == b.image_weights.rows() &&
           a.image_weights.cols() == b.image_weights.cols() &&
           a.text_weights.cols() == b.text_weights.cols() && a.image_weights == b.image_weights &&
           a.image_bias == b.image_bias && a.text_weights == b.text_weights &&
           a.text_bias == b.text_bias && a.logit_scale == b.logit_scale;
  }
};

using ParamGrads = ModelParams;

inline const double kInitLogitScale = std::log(1.0 / 0.07);
inline const double kMaxLogitScale = std::log(100.0);

inline ModelParams init_params(std::size_t d, std::size_t pixel_count, std::size_t vocab_size,
                               Rng& rng) {
  if (d == 0 || pixel_count == 0 || vocab_size == 0) {
    throw ConfigError("init_params: all dimensions must be positive");
  }
  if (d < 2) throw ConfigError("init_params: embed_dim must be >= 2");
  ModelParams p;
  auto gaussian = [&](std::size_t rows, std::size_t cols, double std) {
    std::normal_distribution<double> dist(0.0, std);
    Matrix m(rows, cols);
    // Fill row-major so the draw order matches the checkpoint layout.
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
  };
  p.image_weights = gaussian(d, pixel_count, 1.0 / std::sqrt(static_cast<double>(pixel_count)));
  p.image_bias = Vector::Zero(d);
  p.text_weights = gaussian(d, vocab_size, 1.0 / std::sqrt(static_cast<double>(vocab_size)));
  p.text_bias = Vector::Zero(d);
  p.logit_scale = kInitLogitScale;
  return p;
}

inline constexpr double kMinNorm = 1e-12;

// Unit-L2 vector in the shared space.
class Embedding {
 public:
  static Embedding normalize(const Vector& projection) {
    double n = projection.norm();
    if (!(n > kMinNorm) || !std::isfinite(n)) {
      throw NormError("cannot normalize a zero or non-finite projection");
    }
    return Embedding(projection / n);
  }
  const Vector& vector() const noexcept { return v_; }
  double dot(const Embedding& other) const { return v_.dot(other.v_); }

 private:
  explicit Embedding(Vector v) : v_(std::move(v)) {}
  Vector v_;
};

inline Vector project_image(const ModelParams& p, std::span<const float> image) {
  if (image.size() != p.pixel_count()) {
    throw ShapeError("image has " + std::to_string(image.size()) + " pixels, model expects " +
                     std::to_string(p.pixel_count()));
  }
  Eigen::Map<const Eigen::VectorXf> x(image.data(), static_cast<Eigen::Index>(image.size()));
  return p.image_weights * x.cast<double>() + p.image_bias;
}

inline Embedding encode_image(const ModelParams& p, std::span<const float> image) {
  return Embedding::normalize(project_image(p, image));
}

inline TokenIds token_ids(const Vocabulary& vocab, const TokenSeq& tokens) {
  TokenIds ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

inline Vector project_text(const ModelParams& p, const TokenIds& ids) {
  Vector h = p.text_bias;
  for (auto id : ids) {
    if (id >= p.vocab_size()) throw VocabError("token id " + std::to_string(id) + " out of range");
    h += p.text_weights.col(static_cast<Eigen::Index>(id));
  }
  return h;
}

inline Embedding encode_text(const ModelParams& p, const TokenIds& ids) {
  if (ids.empty()) throw NormError("cannot encode an empty token list");
  return Embedding::normalize(project_text(p, ids));
}

inline Embedding encode_text(const ModelParams& p, const Vocabulary& vocab,
                             const TokenSeq& tokens) {
  return encode_text(p, token_ids(vocab, tokens));
}

// Batched forward pass that keeps what the backward pass needs. Rows of
// `z` are unit embeddings.
struct EncodedBatch {
  Matrix z;        // N x d
  Vector norms;    // N, pre-normalization norms
};

inline EncodedBatch normalize_rows(Matrix h) {
  EncodedBatch out;
  out.norms = h.rowwise().norm();
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    if (!(out.norms(i) > kMinNorm) || !std::isfinite(out.norms(i))) {
      throw NormError("cannot normalize row " + std::to_string(i) + " of an embedding batch");
    }
    h.row(i) /= out.norms(i);
  }
  out.z = std::move(h);
  return out;
}

// Images as rows of an N x pixel_count matrix.
inline Matrix stack_images(const std::vector<const Image*>& images, std::size_t pixel_count) {
  Matrix x(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(pixel_count));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->size() != pixel_count) throw ShapeError("stack_images: pixel count mismatch");
    for (std::size_t j = 0; j < pixel_count; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*images[i])[j];
    }
  }
  return x;
}

inline EncodedBatch encode_image_batch(const ModelParams& p, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != p.pixel_count()) {
    throw ShapeError("encode_image_batch: pixel count mismatch");
  }
  Matrix h = x * p.image_weights.transpose();
  h.rowwise() += p.image_bias.transpose();
  return normalize_rows(std::move(h));
}

inline EncodedBatch encode_text_batch(const ModelParams& p, const std::vector<TokenIds>& texts) {
  Matrix h(static_cast<Eigen::Index>(texts.size()), static_cast<Eigen::Index>(p.embed_dim()));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw NormError("cannot encode an empty token list");
    h.row(static_cast<Eigen::Index>(i)) = project_text(p, texts[i]).transpose();
  }
  return normalize_rows(std::move(h));
}

// dL/dh from dL/dz through z = h / |h|.
inline Matrix normalize_backward(const EncodedBatch& enc, const Matrix& dz) {
  Vector radial = (dz.array() * enc.z.array()).rowwise().sum();
  Matrix dh = dz - enc.z.cwiseProduct(radial.replicate(1, enc.z.cols()));
  for (Eigen::Index i = 0; i < dh.rows(); ++i) dh.row(i) /= enc.norms(i);
  return dh;
}

inline void image_backward(const Matrix& x, const EncodedBatch& enc, const Matrix& dz,
                           ParamGrads& g) {
  Matrix dh = normalize_backward(enc, dz);
  g.image_weights.noalias() += dh.transpose() * x;
  g.image_bias += dh.colwise().sum().transpose();
}

inline void text_backward(const std::vector<TokenIds>& texts, const EncodedBatch& enc,
                          const Matrix& dz, ParamGrads& g) {
  Matrix dh = normalize_backward(enc, dz);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto row = dh.row(static_cast<Eigen::Index>(i)).transpose();
    for (auto id : texts[i]) g.text_weights.col(static_cast<Eigen::Index>(id)) += row;
    g.text_bias += row;
  }
}

// float64 LE: image_weights row-major, image_bias, text_weights row-major,
// text_bias.
inline std::string weight_bytes(const ModelParams& p) {
  std::string bytes;
  bytes.reserve((p.parameter_count() - 1) * sizeof(double));
  auto put_matrix = [&](const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) io::append_le(bytes, m(r, c));
  };
  auto put_vector = [&](const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) io::append_le(bytes, v(i));
  };
  put_matrix(p.image_weights);
  put_vector(p.image_bias);
  put_matrix(p.text_weights);
  put_vector(p.text_bias);
  return bytes;
}

// SHA-256 over every parameter, logit scale included.
inline std::string params_checksum(const ModelParams& p) {
  std::string bytes = weight_bytes(p);
  io::append_le(bytes, p.logit_scale);
  return io::sha256_hex(bytes);
}

// Checkpoint: model.json (dims, logit_scale, vocabulary) + weights.bin.
inline void save_checkpoint(const ModelParams& p, const Vocabulary& vocab,
                            const std::filesystem::path& dir) {
  if (vocab.size() != p.vocab_size()) throw ShapeError("save_checkpoint: vocabulary size mismatch");
  io::ensure_dir(dir);
  nlohmann::ordered_json meta;
  meta["embed_dim"] = p.embed_dim();
  meta["pixel_count"] = p.pixel_count();
  meta["vocab_size"] = p.vocab_size();
  meta["logit_scale"] = p.logit_scale;
  meta["weights_order"] = {"image_weights", "image_bias", "text_weights", "text_bias"};
  meta["vocabulary"] = vocab.tokens();
  io::write_file(dir / "model.json", meta.dump(2) + "\n");
  io::write_file(dir / "weights.bin", weight_bytes(p));
}

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  auto meta_path = (dir / "model.json").string();
  Checkpoint ck;
  std::size_t d = 0, pc = 0, vs = 0;
  try {
    auto meta = nlohmann::json::parse(io::read_file(dir / "model.json"));
    d = meta.at("embed_dim").get<std::size_t>();
    pc = meta.at("pixel_count").get<std::size_t>();
    vs = meta.at("vocab_size").get<std::size_t>();
    ck.params.logit_scale = meta.at("logit_scale").get<double>();
    ck.vocab = Vocabulary(meta.at("vocabulary").get<std::vector<Token>>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path, std::string("malformed model metadata: ") + e.what());
  }
  auto weights_path = (dir / "weights.bin").string();
  auto values = io::decode_le<double>(io::read_file(dir / "weights.bin"), weights_path);
  if (values.size() != d * pc + d + d * vs + d || ck.vocab.size() != vs) {
    throw IoError(weights_path, "weights do not match the dimensions in model.json");
  }
  std::size_t at = 0;
  auto get_matrix = [&](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = values[at++];
    return m;
  };
  auto get_vector = [&](std::size_t n) {
    Vector v(n);
    for (std::size_t i = 0; i < n; ++i) v(i) = values[at++];
    return v;
  };
  ck.params.image_weights = get_matrix(d, pc);
  ck.params.image_bias = get_vector(d);
  ck.params.text_weights = get_matrix(d, vs);
  ck.params.text_bias = get_vector(d);
  return ck;
}

}  // namespace cleaner
