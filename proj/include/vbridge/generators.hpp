#pragma once

// Embedding generators for unseen tokens. Given the pretrained embeddings of a
// token's similar set S, each variant produces one d-dimensional vector:
//
//   AVG:  G = mean_{s in S} E(s)
//   ATT:  G = c * sum_s softmax_s(W . E(s)) E(s)
//   PATT: G = c * sum_s softmax_s(W_r[rel(s)] . E(s)) E(s)
//
// with c = 1/|S| when the verbatim prefactor is on and c = 1 otherwise.
// Everything here is templated on the scalar type so gradient checks can run
// in double while production code shares the same path.

#include <cmath>
#include <filesystem>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "vbridge/lexicon.hpp"
#include "vbridge/morphset.hpp"

namespace vbridge {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class GeneratorKind { Avg, Att, Patt };

std::string_view to_string(GeneratorKind kind);
GeneratorKind generator_kind_from_string(std::string_view s);

/// Embedding rows of a similar set (|S| x d) with the relation of each row.
template <typename Scalar>
struct Candidates {
  MatrixX<Scalar> rows;
  std::vector<Relation> relations;

  Eigen::Index size() const { return rows.rows(); }
  bool empty() const { return rows.rows() == 0; }
};

Candidates<double> gather(const SimilarSet& set, const EmbeddingMatrix& embeddings);

template <typename Scalar>
struct GeneratorParams {
  GeneratorKind kind = GeneratorKind::Avg;
  Eigen::Index dim = 0;
  VectorX<Scalar> w;    // ATT only
  MatrixX<Scalar> w_r;  // PATT only, kNumRelations x dim
  bool verbatim_prefactor = true;

  static GeneratorParams avg(Eigen::Index d) {
    GeneratorParams p;
    p.kind = GeneratorKind::Avg;
    p.dim = d;
    return p;
  }

  static GeneratorParams zeros(GeneratorKind kind, Eigen::Index d, bool verbatim = true) {
    GeneratorParams p;
    p.kind = kind;
    p.dim = d;
    p.verbatim_prefactor = verbatim;
    if (kind == GeneratorKind::Att) p.w = VectorX<Scalar>::Zero(d);
    if (kind == GeneratorKind::Patt) p.w_r = MatrixX<Scalar>::Zero(kNumRelations, d);
    return p;
  }

  // Uniform(-half_width, half_width) initialization of the trainable parameters.
  static GeneratorParams initialized(GeneratorKind kind, Eigen::Index d, Rng& rng,
                                     bool verbatim = true, double half_width = 0.01) {
    auto p = zeros(kind, d, verbatim);
    std::uniform_real_distribution<double> dist(-half_width, half_width);
    for (Eigen::Index i = 0; i < p.w.size(); ++i) p.w(i) = static_cast<Scalar>(dist(rng));
    for (Eigen::Index j = 0; j < p.w_r.cols(); ++j) {
      for (Eigen::Index i = 0; i < p.w_r.rows(); ++i) p.w_r(i, j) = static_cast<Scalar>(dist(rng));
    }
    return p;
  }

  bool trainable() const { return kind != GeneratorKind::Avg; }

  void validate() const {
    if (dim <= 0) throw Error("generator dimension must be positive");
    switch (kind) {
      case GeneratorKind::Avg:
        if (w.size() != 0 || w_r.size() != 0) throw Error("AVG generator carries no parameters");
        break;
      case GeneratorKind::Att:
        if (w.size() != dim || w_r.size() != 0) throw Error("ATT generator needs W of length d");
        if (!w.allFinite()) throw Error("ATT parameters are not finite");
        break;
      case GeneratorKind::Patt:
        if (w_r.rows() != static_cast<Eigen::Index>(kNumRelations) || w_r.cols() != dim || w.size() != 0) {
          throw Error("PATT generator needs a 6 x d W_r");
        }
        if (!w_r.allFinite()) throw Error("PATT parameters are not finite");
        break;
    }
  }
};

template <typename Scalar>
struct GeneratorGradients {
  VectorX<Scalar> w;
  MatrixX<Scalar> w_r;
  MatrixX<Scalar> rows;  // d G / d E(s), composed with the upstream gradient
};

// Numerically stable softmax.
template <typename Scalar>
VectorX<Scalar> softmax(const VectorX<Scalar>& scores) {
  VectorX<Scalar> e = (scores.array() - scores.maxCoeff()).exp().matrix();
  return e / e.sum();
}

namespace detail {

template <typename Scalar>
void require_non_empty(const Candidates<Scalar>& c) {
  if (c.empty()) throw Error("empty similar set");
}

template <typename Scalar>
Scalar prefactor(const GeneratorParams<Scalar>& params, Eigen::Index n) {
  return params.verbatim_prefactor ? Scalar(1) / static_cast<Scalar>(n) : Scalar(1);
}

}  // namespace detail

template <typename Scalar>
VectorX<Scalar> generate_avg(const Candidates<Scalar>& c) {
  detail::require_non_empty(c);
  return c.rows.colwise().mean().transpose();
}

// Pre-softmax scores: W . E(s) for ATT, W_r[rel(s)] . E(s) for PATT.
template <typename Scalar>
VectorX<Scalar> attention_scores(const GeneratorParams<Scalar>& params, const Candidates<Scalar>& c) {
  detail::require_non_empty(c);
  if (params.kind == GeneratorKind::Att) return c.rows * params.w;
  if (params.kind == GeneratorKind::Patt) {
    if (c.relations.size() != static_cast<std::size_t>(c.size())) {
      throw Error("PATT needs a relation for every candidate");
    }
    VectorX<Scalar> scores(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      scores(i) = params.w_r.row(static_cast<Eigen::Index>(c.relations[static_cast<std::size_t>(i)]))
                      .dot(c.rows.row(i));
    }
    return scores;
  }
  throw Error("AVG generator has no attention");
}

template <typename Scalar>
VectorX<Scalar> attention_weights(const GeneratorParams<Scalar>& params, const Candidates<Scalar>& c) {
  return softmax<Scalar>(attention_scores(params, c));
}

template <typename Scalar>
VectorX<Scalar> generate_att(const Candidates<Scalar>& c, const GeneratorParams<Scalar>& params) {
  if (params.kind != GeneratorKind::Att) throw Error("generate_att needs an ATT generator");
  VectorX<Scalar> alpha = attention_weights(params, c);
  return detail::prefactor(params, c.size()) * (c.rows.transpose() * alpha);
}

template <typename Scalar>
VectorX<Scalar> generate_patt(const Candidates<Scalar>& c, const GeneratorParams<Scalar>& params) {
  if (params.kind != GeneratorKind::Patt) throw Error("generate_patt needs a PATT generator");
  VectorX<Scalar> alpha = attention_weights(params, c);
  return detail::prefactor(params, c.size()) * (c.rows.transpose() * alpha);
}

template <typename Scalar>
VectorX<Scalar> generate(const GeneratorParams<Scalar>& params, const Candidates<Scalar>& c) {
  if (c.rows.cols() != params.dim) throw Error("candidate dimension does not match generator");
  switch (params.kind) {
    case GeneratorKind::Avg: return generate_avg(c);
    case GeneratorKind::Att: return generate_att(c, params);
    case GeneratorKind::Patt: return generate_patt(c, params);
  }
  throw Error("unknown generator kind");
}

// Gradient of upstream . G with respect to the trainable parameters and the
// candidate rows. With a = softmax(s), G = c * rows^T a and
// dG/ds_j = c * a_j (E_j - rows^T a).
template <typename Scalar>
GeneratorGradients<Scalar> backward(const GeneratorParams<Scalar>& params, const Candidates<Scalar>& c,
                                    const VectorX<Scalar>& upstream) {
  if (!params.trainable()) throw Error("non-trainable generator");
  detail::require_non_empty(c);
  const Scalar pre = detail::prefactor(params, c.size());
  VectorX<Scalar> alpha = attention_weights(params, c);
  VectorX<Scalar> pooled = c.rows.transpose() * alpha;
  VectorX<Scalar> proj = c.rows * upstream;  // upstream . E_j
  VectorX<Scalar> d_scores = pre * alpha.cwiseProduct((proj.array() - upstream.dot(pooled)).matrix());

  GeneratorGradients<Scalar> grads;
  grads.rows = pre * alpha * upstream.transpose();
  if (params.kind == GeneratorKind::Att) {
    grads.w = c.rows.transpose() * d_scores;
    grads.rows += d_scores * params.w.transpose();
  } else {
    grads.w_r = MatrixX<Scalar>::Zero(kNumRelations, params.dim);
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      auto r = static_cast<Eigen::Index>(c.relations[static_cast<std::size_t>(i)]);
      grads.w_r.row(r) += d_scores(i) * c.rows.row(i);
      grads.rows.row(i) += d_scores(i) * params.w_r.row(r);
    }
  }
  return grads;
}

// Header `KIND d [verbatim|plain]`, then W (one line) or W_r (six lines).
void save_generator(const GeneratorParams<double>& params, const std::filesystem::path& path);
GeneratorParams<double> load_generator(const std::filesystem::path& path);

}  // namespace vbridge
