#include "vbridge/neuralcore.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace vbridge {

namespace {

constexpr double kNormEpsilon = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::MatrixXd& gain, const Eigen::MatrixXd& bias,
                           Eigen::MatrixXd& normalized, Eigen::VectorXd& inv_std) {
  Eigen::VectorXd mean = x.rowwise().mean();
  normalized = x.colwise() - mean;
  inv_std = (normalized.array().square().rowwise().mean() + kNormEpsilon).rsqrt().matrix();
  normalized = inv_std.asDiagonal() * normalized;
  Eigen::MatrixXd y = normalized * gain.row(0).asDiagonal();
  y.rowwise() += bias.row(0);
  return y;
}

Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& gain,
                                    const Eigen::MatrixXd& normalized, const Eigen::VectorXd& inv_std,
                                    Eigen::MatrixXd* d_gain, Eigen::MatrixXd* d_bias) {
  if (d_gain) *d_gain += dy.cwiseProduct(normalized).colwise().sum();
  if (d_bias) *d_bias += dy.colwise().sum();
  Eigen::MatrixXd d_norm = dy * gain.row(0).asDiagonal();
  Eigen::VectorXd mean_d = d_norm.rowwise().mean();
  Eigen::VectorXd mean_dn = d_norm.cwiseProduct(normalized).rowwise().mean();
  Eigen::MatrixXd dx = d_norm.colwise() - mean_d;
  dx -= mean_dn.asDiagonal() * normalized;
  return inv_std.asDiagonal() * dx;
}

Eigen::MatrixXd gelu(const Eigen::MatrixXd& u) {
  Eigen::ArrayXXd a = u.array();
  return (0.5 * a * (1.0 + (kGeluScale * (a + kGeluCubic * a.cube())).tanh())).matrix();
}

Eigen::MatrixXd gelu_grad(const Eigen::MatrixXd& u) {
  Eigen::ArrayXXd a = u.array();
  Eigen::ArrayXXd t = (kGeluScale * (a + kGeluCubic * a.cube())).tanh();
  return (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t.square()) * kGeluScale * (1.0 + 3.0 * kGeluCubic * a.square()))
      .matrix();
}

void softmax_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp().matrix();
    m.row(i) /= m.row(i).sum();
  }
}

std::vector<Eigen::MatrixXd*> collect(EncoderWeights& w) {
  std::vector<Eigen::MatrixXd*> out;
  w.visit([&](const std::string&, Eigen::MatrixXd& m) { out.push_back(&m); });
  return out;
}

}  // namespace

void EncoderConfig::validate() const {
  if (dim <= 0 || num_layers <= 0 || num_heads <= 0 || ffn_dim <= 0 || max_seq_len <= 0) {
    throw Error("encoder config fields must be positive");
  }
  if (dim % num_heads != 0) throw Error("dim must be divisible by num_heads");
  if (!(mask_fraction > 0.0 && mask_fraction <= 1.0)) throw Error("mask_fraction must be in (0, 1]");
}

EncoderWeights EncoderWeights::init(const EncoderConfig& config, std::size_t vocab_size, Rng& rng) {
  config.validate();
  const Eigen::Index d = config.dim, f = config.ffn_dim;
  const double sd = config.init_stddev;
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  const double residual = proj / std::sqrt(2.0 * config.num_layers);

  EncoderWeights w;
  w.embedding = gaussian(static_cast<Eigen::Index>(vocab_size), d, sd, rng);
  w.position = gaussian(config.max_seq_len, d, sd, rng);
  w.mask_embedding = gaussian(1, d, sd, rng);
  for (int l = 0; l < config.num_layers; ++l) {
    LayerWeights L;
    L.ln1_gain = Eigen::MatrixXd::Ones(1, d);
    L.ln1_bias = Eigen::MatrixXd::Zero(1, d);
    L.q_proj = gaussian(d, d, proj, rng);
    L.k_proj = gaussian(d, d, proj, rng);
    L.v_proj = gaussian(d, d, proj, rng);
    L.out_proj = gaussian(d, d, residual, rng);
    L.q_bias = Eigen::MatrixXd::Zero(1, d);
    L.k_bias = Eigen::MatrixXd::Zero(1, d);
    L.v_bias = Eigen::MatrixXd::Zero(1, d);
    L.out_bias = Eigen::MatrixXd::Zero(1, d);
    L.ln2_gain = Eigen::MatrixXd::Ones(1, d);
    L.ln2_bias = Eigen::MatrixXd::Zero(1, d);
    L.ffn_in = gaussian(d, f, proj, rng);
    L.ffn_in_bias = Eigen::MatrixXd::Zero(1, f);
    L.ffn_out = gaussian(f, d, residual / 2.0, rng);
    L.ffn_out_bias = Eigen::MatrixXd::Zero(1, d);
    w.layers.push_back(std::move(L));
  }
  w.final_gain = Eigen::MatrixXd::Ones(1, d);
  w.final_bias = Eigen::MatrixXd::Zero(1, d);
  w.output_bias = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(vocab_size));
  return w;
}

EncoderWeights EncoderWeights::zeros_like() const {
  EncoderWeights z = *this;
  z.visit([](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
  return z;
}

Eigen::Index EncoderWeights::parameter_count() const {
  Eigen::Index n = 0;
  visit([&](const std::string&, const Eigen::MatrixXd& m) { n += m.size(); });
  return n;
}

void PretrainedModel::validate() const {
  config.validate();
  if (!vocab) throw Error("model has no vocabulary");
  if (static_cast<std::size_t>(weights.embedding.rows()) != vocab->size() ||
      weights.embedding.cols() != config.dim) {
    throw Error("embedding table does not match vocabulary/config");
  }
  if (static_cast<int>(weights.layers.size()) != config.num_layers) throw Error("layer count mismatch");
  weights.visit([](const std::string& name, const Eigen::MatrixXd& m) {
    if (!m.allFinite()) throw Error("parameter " + name + " is not finite");
  });
}

std::string backbone_hash(const EncoderWeights& weights) {
  std::string bytes;
  weights.visit([&](const std::string& name, const Eigen::MatrixXd& m) {
    if (!EncoderWeights::is_backbone(name)) return;
    bytes += name;
    bytes.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  });
  return sha256_hex(bytes);
}

bool backbone_equal(const EncoderWeights& a, const EncoderWeights& b) {
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> pa, pb;
  a.visit([&](const std::string& n, const Eigen::MatrixXd& m) { pa.emplace_back(n, &m); });
  b.visit([&](const std::string& n, const Eigen::MatrixXd& m) { pb.emplace_back(n, &m); });
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!EncoderWeights::is_backbone(pa[i].first)) continue;
    const auto& x = *pa[i].second;
    const auto& y = *pb[i].second;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(double)) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

EncoderPass::EncoderPass(const EncoderWeights& weights, const EncoderConfig& config, Eigen::MatrixXd inputs)
    : weights_(&weights), config_(config) {
  const Eigen::Index n = inputs.rows(), d = config.dim;
  if (n == 0) throw Error("empty input sequence");
  if (n > config.max_seq_len) {
    throw Error("sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                std::to_string(config.max_seq_len));
  }
  if (inputs.cols() != d) throw Error("input rows have the wrong dimension");
  const Eigen::Index dh = d / config.num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::MatrixXd x = std::move(inputs);
  x += weights.position.topRows(n);
  caches_.resize(weights.layers.size());
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    const LayerWeights& L = weights.layers[l];
    LayerCache& c = caches_[l];
    c.h1 = layer_norm(x, L.ln1_gain, L.ln1_bias, c.ln1.normalized, c.ln1.inv_std);
    c.q = c.h1 * L.q_proj;
    c.q.rowwise() += L.q_bias.row(0);
    c.k = c.h1 * L.k_proj;
    c.k.rowwise() += L.k_bias.row(0);
    c.v = c.h1 * L.v_proj;
    c.v.rowwise() += L.v_bias.row(0);
    c.heads.resize(n, d);
    c.attention.resize(static_cast<std::size_t>(config.num_heads));
    for (int h = 0; h < config.num_heads; ++h) {
      Eigen::MatrixXd a = scale * (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose());
      softmax_rows(a);
      c.heads.middleCols(h * dh, dh) = a * c.v.middleCols(h * dh, dh);
      c.attention[static_cast<std::size_t>(h)] = std::move(a);
    }
    x += c.heads * L.out_proj;
    x.rowwise() += L.out_bias.row(0);

    c.h2 = layer_norm(x, L.ln2_gain, L.ln2_bias, c.ln2.normalized, c.ln2.inv_std);
    c.ffn_pre = c.h2 * L.ffn_in;
    c.ffn_pre.rowwise() += L.ffn_in_bias.row(0);
    c.ffn_act = gelu(c.ffn_pre);
    x += c.ffn_act * L.ffn_out;
    x.rowwise() += L.ffn_out_bias.row(0);
  }
  hidden_ = layer_norm(x, weights.final_gain, weights.final_bias, final_.normalized, final_.inv_std);
}

Eigen::MatrixXd EncoderPass::backward(const Eigen::MatrixXd& d_hidden, EncoderWeights* grads) const {
  const EncoderWeights& w = *weights_;
  const Eigen::Index n = hidden_.rows(), d = config_.dim;
  const Eigen::Index dh = d / config_.num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::MatrixXd dx = layer_norm_backward(d_hidden, w.final_gain, final_.normalized, final_.inv_std,
                                           grads ? &grads->final_gain : nullptr,
                                           grads ? &grads->final_bias : nullptr);
  for (std::size_t li = w.layers.size(); li-- > 0;) {
    const LayerWeights& L = w.layers[li];
    const LayerCache& c = caches_[li];
    LayerWeights* g = grads ? &grads->layers[li] : nullptr;

    // Feed-forward block.
    if (g) {
      g->ffn_out.noalias() += c.ffn_act.transpose() * dx;
      g->ffn_out_bias += dx.colwise().sum();
    }
    Eigen::MatrixXd d_pre = (dx * L.ffn_out.transpose()).cwiseProduct(gelu_grad(c.ffn_pre));
    if (g) {
      g->ffn_in.noalias() += c.h2.transpose() * d_pre;
      g->ffn_in_bias += d_pre.colwise().sum();
    }
    Eigen::MatrixXd d_h2 = d_pre * L.ffn_in.transpose();
    dx += layer_norm_backward(d_h2, L.ln2_gain, c.ln2.normalized, c.ln2.inv_std, g ? &g->ln2_gain : nullptr,
                              g ? &g->ln2_bias : nullptr);

    // Attention block.
    if (g) {
      g->out_proj.noalias() += c.heads.transpose() * dx;
      g->out_bias += dx.colwise().sum();
    }
    Eigen::MatrixXd d_heads = dx * L.out_proj.transpose();
    Eigen::MatrixXd dq(n, d), dk(n, d), dv(n, d);
    for (int h = 0; h < config_.num_heads; ++h) {
      const Eigen::MatrixXd& a = c.attention[static_cast<std::size_t>(h)];
      auto d_out = d_heads.middleCols(h * dh, dh);
      Eigen::MatrixXd d_att = d_out * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * d_out;
      Eigen::VectorXd row_dot = d_att.cwiseProduct(a).rowwise().sum();
      Eigen::MatrixXd d_scores = scale * a.cwiseProduct(d_att.colwise() - row_dot);
      dq.middleCols(h * dh, dh) = d_scores * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = d_scores.transpose() * c.q.middleCols(h * dh, dh);
    }
    if (g) {
      g->q_proj.noalias() += c.h1.transpose() * dq;
      g->k_proj.noalias() += c.h1.transpose() * dk;
      g->v_proj.noalias() += c.h1.transpose() * dv;
      g->q_bias += dq.colwise().sum();
      g->k_bias += dk.colwise().sum();
      g->v_bias += dv.colwise().sum();
    }
    Eigen::MatrixXd d_h1 = dq * L.q_proj.transpose() + dk * L.k_proj.transpose() + dv * L.v_proj.transpose();
    dx += layer_norm_backward(d_h1, L.ln1_gain, c.ln1.normalized, c.ln1.inv_std, g ? &g->ln1_gain : nullptr,
                              g ? &g->ln1_bias : nullptr);
  }
  if (grads) grads->position.topRows(n) += dx;
  return dx;
}

Eigen::MatrixXd forward_hidden(const PretrainedModel& model, const Eigen::MatrixXd& rows) {
  return EncoderPass(model.weights, model.config, rows).hidden();
}

Eigen::MatrixXd embed(const EncoderWeights& weights, std::span<const TokenId> ids) {
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(ids.size()), weights.embedding.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= weights.embedding.rows()) throw Error("token id out of range");
    rows.row(static_cast<Eigen::Index>(i)) = weights.embedding.row(ids[i]);
  }
  return rows;
}

double mlm_head(const EncoderWeights& weights, const Eigen::MatrixXd& hidden,
                std::span<const Eigen::Index> positions, std::span<const TokenId> targets,
                Eigen::MatrixXd* d_hidden, EncoderWeights* grads, double grad_scale) {
  if (positions.empty()) throw Error("no masked positions");
  if (positions.size() != targets.size()) throw Error("positions/targets size mismatch");
  const auto m = static_cast<Eigen::Index>(positions.size());
  const Eigen::Index vocab = weights.embedding.rows();
  Eigen::MatrixXd picked(m, hidden.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    auto p = positions[static_cast<std::size_t>(i)];
    if (p < 0 || p >= hidden.rows()) throw Error("masked position out of range");
    auto t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= vocab) throw Error("target id " + std::to_string(t) + " out of vocabulary");
    picked.row(i) = hidden.row(p);
  }
  Eigen::MatrixXd logits = picked * weights.embedding.transpose();
  logits.rowwise() += weights.output_bias.row(0);

  double loss = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    double mx = logits.row(i).maxCoeff();
    double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    loss += lse - logits(i, targets[static_cast<std::size_t>(i)]);
  }
  loss /= static_cast<double>(m);

  if (d_hidden || grads) {
    Eigen::MatrixXd probs = std::move(logits);
    softmax_rows(probs);
    for (Eigen::Index i = 0; i < m; ++i) probs(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
    probs *= grad_scale / static_cast<double>(m);
    if (d_hidden) {
      d_hidden->setZero(hidden.rows(), hidden.cols());
      Eigen::MatrixXd d_picked = probs * weights.embedding;
      for (Eigen::Index i = 0; i < m; ++i) d_hidden->row(positions[static_cast<std::size_t>(i)]) += d_picked.row(i);
    }
    if (grads) {
      grads->embedding.noalias() += probs.transpose() * picked;
      grads->output_bias += probs.colwise().sum();
    }
  }
  return loss;
}

double mlm_loss(const PretrainedModel& model, const Eigen::MatrixXd& masked_rows,
                std::span<const Eigen::Index> positions, std::span<const TokenId> targets) {
  Eigen::MatrixXd hidden = forward_hidden(model, masked_rows);
  return mlm_head(model.weights, hidden, positions, targets);
}

// ---------------------------------------------------------------------------

MaskPlan plan_masks(std::span<const TokenId> ids, double fraction, std::size_t vocab_size, Rng& rng,
                    bool mask_row_only) {
  std::vector<Eigen::Index> eligible;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= 0) eligible.push_back(static_cast<Eigen::Index>(i));
  }
  MaskPlan plan;
  if (eligible.empty()) return plan;
  auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * eligible.size())));
  count = std::min(count, eligible.size());
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  eligible.resize(count);
  std::sort(eligible.begin(), eligible.end());

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<TokenId> any(0, static_cast<TokenId>(vocab_size) - 1);
  for (auto p : eligible) {
    plan.positions.push_back(p);
    plan.targets.push_back(ids[static_cast<std::size_t>(p)]);
    MaskAction action = MaskAction::MaskRow;
    TokenId replacement = -1;
    if (!mask_row_only) {
      double u = unit(rng);
      if (u >= 0.9) {
        action = MaskAction::Keep;
      } else if (u >= 0.8) {
        action = MaskAction::RandomRow;
        replacement = any(rng);
      }
    }
    plan.actions.push_back(action);
    plan.replacements.push_back(replacement);
  }
  return plan;
}

void apply_masks(const MaskPlan& plan, const EncoderWeights& weights, Eigen::MatrixXd& rows) {
  for (std::size_t i = 0; i < plan.positions.size(); ++i) {
    switch (plan.actions[i]) {
      case MaskAction::MaskRow: rows.row(plan.positions[i]) = weights.mask_embedding.row(0); break;
      case MaskAction::RandomRow: rows.row(plan.positions[i]) = weights.embedding.row(plan.replacements[i]); break;
      case MaskAction::Keep: break;
    }
  }
}

// ---------------------------------------------------------------------------

double Adam::learning_rate() const {
  double lr = config_.learning_rate;
  if (config_.warmup_steps > 0 && step_ < config_.warmup_steps) {
    lr *= static_cast<double>(step_ + 1) / static_cast<double>(config_.warmup_steps);
  }
  return lr;
}

void Adam::step(std::span<const ParamSlot> slots) {
  if (m_.empty()) {
    for (const auto& s : slots) {
      m_.push_back(Eigen::ArrayXd::Zero(s.size));
      v_.push_back(Eigen::ArrayXd::Zero(s.size));
    }
  }
  if (m_.size() != slots.size()) throw Error("optimizer slot layout changed");

  double clip = 1.0;
  if (config_.clip_norm > 0) {
    double sq = 0;
    for (const auto& s : slots) sq += Eigen::Map<const Eigen::ArrayXd>(s.grad, s.size).square().sum();
    double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }
  const double lr = learning_rate();
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    Eigen::Map<Eigen::ArrayXd> value(slots[i].value, slots[i].size);
    Eigen::ArrayXd g = clip * Eigen::Map<const Eigen::ArrayXd>(slots[i].grad, slots[i].size);
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.square();
    value -= lr * (m_[i] / c1) / ((v_[i] / c2).sqrt() + config_.epsilon);
  }
}

// ---------------------------------------------------------------------------

MlmTrainer::MlmTrainer(PretrainedModel& model, AdamConfig adam, std::uint64_t seed, bool freeze_backbone)
    : model_(&model), adam_(adam), rng_(seed), freeze_backbone_(freeze_backbone) {}

double MlmTrainer::step(std::span<const std::vector<TokenId>> batch) {
  EncoderWeights& w = model_->weights;
  const EncoderConfig& cfg = model_->config;
  EncoderWeights grads = w.zeros_like();
  std::size_t used = 0;
  for (const auto& s : batch) used += s.empty() ? 0 : 1;
  if (used == 0) throw Error("empty batch");
  const double scale = 1.0 / static_cast<double>(used);

  double total = 0.0;
  for (const auto& sentence : batch) {
    if (sentence.empty()) continue;
    auto n = std::min<std::size_t>(sentence.size(), static_cast<std::size_t>(cfg.max_seq_len));
    std::span<const TokenId> ids(sentence.data(), n);
    MaskPlan plan = plan_masks(ids, cfg.mask_fraction, model_->vocab->size(), rng_);
    Eigen::MatrixXd rows = embed(w, ids);
    apply_masks(plan, w, rows);
    EncoderPass pass(w, cfg, std::move(rows));
    Eigen::MatrixXd d_hidden;
    total += mlm_head(w, pass.hidden(), plan.positions, plan.targets, &d_hidden, &grads, scale);
    Eigen::MatrixXd d_inputs = pass.backward(d_hidden, &grads);

    std::vector<char> masked(n, 0);
    for (std::size_t k = 0; k < plan.positions.size(); ++k) {
      auto p = plan.positions[k];
      masked[static_cast<std::size_t>(p)] = 1;
      switch (plan.actions[k]) {
        case MaskAction::MaskRow: grads.mask_embedding += d_inputs.row(p); break;
        case MaskAction::RandomRow: grads.embedding.row(plan.replacements[k]) += d_inputs.row(p); break;
        case MaskAction::Keep: grads.embedding.row(ids[static_cast<std::size_t>(p)]) += d_inputs.row(p); break;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!masked[i]) grads.embedding.row(ids[i]) += d_inputs.row(static_cast<Eigen::Index>(i));
    }
  }
  double loss = total / static_cast<double>(used);
  if (!std::isfinite(loss)) {
    throw Error("masked-LM loss diverged (non-finite) at optimizer step " + std::to_string(adam_.steps() + 1));
  }

  std::vector<ParamSlot> slots;
  std::vector<Eigen::MatrixXd*> gp = collect(grads);
  std::size_t k = 0;
  w.visit([&](const std::string& name, Eigen::MatrixXd& m) {
    const Eigen::MatrixXd* g = gp[k++];
    if (freeze_backbone_ && EncoderWeights::is_backbone(name)) return;
    slots.push_back({m.data(), g->data(), m.size()});
  });
  adam_.step(slots);
  return loss;
}

double evaluate_mlm(const PretrainedModel& model, std::span<const std::vector<TokenId>> sentences,
                    std::uint64_t seed) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    const auto& sentence = sentences[k];
    if (sentence.empty()) continue;
    auto n = std::min<std::size_t>(sentence.size(), static_cast<std::size_t>(model.config.max_seq_len));
    std::span<const TokenId> ids(sentence.data(), n);
    Rng rng(seed + 0x9e3779b97f4a7c15ULL * (k + 1));
    MaskPlan plan = plan_masks(ids, model.config.mask_fraction, model.vocab->size(), rng, true);
    Eigen::MatrixXd rows = embed(model.weights, ids);
    apply_masks(plan, model.weights, rows);
    EncoderPass pass(model.weights, model.config, std::move(rows));
    total += mlm_head(model.weights, pass.hidden(), plan.positions, plan.targets) *
             static_cast<double>(plan.positions.size());
    count += plan.positions.size();
  }
  if (count == 0) throw Error("no sentences to evaluate");
  return total / static_cast<double>(count);
}

PretrainedModel pretrain(const std::vector<std::vector<TokenId>>& sentences,
                         std::shared_ptr<const Vocabulary> vocab, const PretrainConfig& config,
                         PretrainReport* report) {
  config.encoder.validate();
  if (!vocab || vocab->empty()) throw Error("pretraining needs a non-empty vocabulary");
  std::vector<std::vector<TokenId>> data;
  for (const auto& s : sentences) {
    if (s.empty()) continue;
    for (TokenId id : s) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab->size()) throw Error("token id outside vocabulary");
    }
    auto n = std::min<std::size_t>(s.size(), static_cast<std::size_t>(config.encoder.max_seq_len));
    data.emplace_back(s.begin(), s.begin() + static_cast<long>(n));
  }
  if (data.empty()) throw Error("empty corpus");

  std::vector<std::vector<TokenId>> train = data, held_out = data;
  if (data.size() >= 2) {
    auto n_held = std::max<std::size_t>(1, static_cast<std::size_t>(config.held_out_fraction * data.size()));
    n_held = std::min(n_held, data.size() - 1);
    train.assign(data.begin(), data.end() - static_cast<long>(n_held));
    held_out.assign(data.end() - static_cast<long>(n_held), data.end());
  }

  const std::uint64_t seed = config.encoder.seed;
  Rng rng(seed);
  PretrainedModel model{config.encoder, vocab, EncoderWeights::init(config.encoder, vocab->size(), rng)};
  MlmTrainer trainer(model, config.adam, seed + 1);
  PretrainReport local;
  local.initial_held_out_loss = evaluate_mlm(model, held_out, seed + 2);

  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  std::vector<std::vector<TokenId>> batch(static_cast<std::size_t>(std::max(1, config.batch_size)));
  for (int step = 1; step <= config.steps; ++step) {
    for (auto& b : batch) b = train[pick(rng)];
    double loss = trainer.step(batch);
    if (config.log_every > 0 && (step % config.log_every == 0 || step == 1)) {
      local.train_curve.emplace_back(step, loss);
    }
  }
  local.final_held_out_loss = evaluate_mlm(model, held_out, seed + 2);
  if (report) *report = std::move(local);
  return model;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kCheckpointHeader = "#vocab-bridge-checkpoint-1";

void write_f32(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(m.size()) * 4);
  // Row-major element order.
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j)));
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Eigen::MatrixXd read_f32(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * 4) {
    throw Error(path.string() + ": expected " + std::to_string(rows * cols * 4) + " bytes");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[k++])) << (8 * b);
      m(i, j) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return m;
}

}  // namespace

void save_checkpoint(const PretrainedModel& model, const std::filesystem::path& dir) {
  model.validate();
  std::filesystem::create_directories(dir);
  model.vocab->save(dir / "vocab.tsv");
  std::ostringstream manifest;
  manifest << kCheckpointHeader << '\n';
  manifest << "# fields: config <name> <value> | vocab <file> | param <name> <rows> <cols> <file>\n";
  manifest << "# blobs: little-endian float32, row-major\n";
  const auto& c = model.config;
  manifest << "config dim " << c.dim << '\n'
           << "config num_layers " << c.num_layers << '\n'
           << "config num_heads " << c.num_heads << '\n'
           << "config ffn_dim " << c.ffn_dim << '\n'
           << "config max_seq_len " << c.max_seq_len << '\n';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", c.mask_fraction);
  manifest << "config mask_fraction " << buf << '\n';
  manifest << "config seed " << c.seed << '\n';
  std::snprintf(buf, sizeof(buf), "%.17g", c.init_stddev);
  manifest << "config init_stddev " << buf << '\n';
  manifest << "vocab vocab.tsv\n";
  model.weights.visit([&](const std::string& name, const Eigen::MatrixXd& m) {
    std::string file = name + ".f32";
    manifest << "param " << name << ' ' << m.rows() << ' ' << m.cols() << ' ' << file << '\n';
    write_f32(dir / file, m);
  });
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << manifest.str();
}

PretrainedModel load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt", std::ios::binary);
  if (!in) throw Error("cannot open " + (dir / "manifest.txt").string());
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointHeader) throw ParseError("bad checkpoint header", 1);

  PretrainedModel model;
  struct ParamEntry {
    std::string name, file;
    Eigen::Index rows, cols;
  };
  std::vector<ParamEntry> params;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream f(line);
    std::string kind;
    f >> kind;
    if (kind == "config") {
      std::string key;
      f >> key;
      auto& c = model.config;
      if (key == "dim") f >> c.dim;
      else if (key == "num_layers") f >> c.num_layers;
      else if (key == "num_heads") f >> c.num_heads;
      else if (key == "ffn_dim") f >> c.ffn_dim;
      else if (key == "max_seq_len") f >> c.max_seq_len;
      else if (key == "mask_fraction") f >> c.mask_fraction;
      else if (key == "seed") f >> c.seed;
      else if (key == "init_stddev") f >> c.init_stddev;
      else throw ParseError("unknown config field " + key, lineno);
    } else if (kind == "vocab") {
      std::string file;
      f >> file;
      model.vocab = std::make_shared<const Vocabulary>(Vocabulary::load(dir / file));
    } else if (kind == "param") {
      ParamEntry e;
      if (!(f >> e.name >> e.rows >> e.cols >> e.file)) throw ParseError("bad param line", lineno);
      params.push_back(std::move(e));
    } else {
      throw ParseError("unknown manifest entry " + kind, lineno);
    }
    if (f.fail()) throw ParseError("malformed manifest line", lineno);
  }
  if (!model.vocab) throw Error("checkpoint manifest lists no vocabulary");
  model.config.validate();
  Rng rng(0);
  model.weights = EncoderWeights::init(model.config, model.vocab->size(), rng);
  std::size_t k = 0;
  model.weights.visit([&](const std::string& name, Eigen::MatrixXd& m) {
    if (k >= params.size() || params[k].name != name) throw Error("checkpoint is missing parameter " + name);
    const auto& e = params[k++];
    if (e.rows != m.rows() || e.cols != m.cols()) throw Error("shape mismatch for parameter " + name);
    m = read_f32(dir / e.file, e.rows, e.cols);
  });
  if (k != params.size()) throw Error("checkpoint has unexpected extra parameters");
  model.validate();
  return model;
}

}  // namespace vbridge
