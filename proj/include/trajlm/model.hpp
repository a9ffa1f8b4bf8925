// Copyright 2026 The trajlm Authors.
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
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "trajlm/common.hpp"
#include "trajlm/tensor.hpp"
#include "trajlm/vocab.hpp"

namespace trajlm {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 64;
  std::size_t max_seq_len = 64;
  double dropout_rate = 0.0;
  std::uint64_t seed = 1;

  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size < 3) throw ConfigError("model vocab_size must be >= 3");
    if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 || max_seq_len == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                        std::to_string(n_heads) + ")");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  }

  /// Canonical text: sorted key=value lines.
  std::string to_text() const {
    std::ostringstream s;
    s << "d_ff=" << d_ff << '\n'
      << "d_model=" << d_model << '\n'
      << "dropout_rate=" << format_double(dropout_rate) << '\n'
      << "max_seq_len=" << max_seq_len << '\n'
      << "n_heads=" << n_heads << '\n'
      << "n_layers=" << n_layers << '\n'
      << "seed=" << seed << '\n'
      << "vocab_size=" << vocab_size << '\n';
    return s.str();
  }

  static ModelConfig from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("malformed model config line '" + line + "'");
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const char* key) -> const std::string& {
      auto it = kv.find(key);
      if (it == kv.end()) throw DataError(std::string("model config lacks '") + key + "'");
      return it->second;
    };
    ModelConfig c;
    try {
      c.d_ff = std::stoull(get("d_ff"));
      c.d_model = std::stoull(get("d_model"));
      c.dropout_rate = parse_double(get("dropout_rate"));
      c.max_seq_len = std::stoull(get("max_seq_len"));
      c.n_heads = std::stoull(get("n_heads"));
      c.n_layers = std::stoull(get("n_layers"));
      c.seed = std::stoull(get("seed"));
      c.vocab_size = std::stoull(get("vocab_size"));
    } catch (const std::logic_error&) {
      throw DataError("malformed model config value");
    }
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class Real>
struct LayerParams {
  Matrix<Real> ln1_gain, ln1_bias;
  Matrix<Real> wq, wk, wv, wo;
  Matrix<Real> ln2_gain, ln2_bias;
  Matrix<Real> w1, b1, w2, b2;
};

template <class Real>
struct NamedTensor {
  std::string name;
  Matrix<Real>* tensor;
};

template <class Real>
struct Parameters {
  Matrix<Real> tok_emb;  // vocab x d_model
  Matrix<Real> pos_emb;  // max_seq_len x d_model
  std::vector<LayerParams<Real>> layers;
  Matrix<Real> lnf_gain, lnf_bias;
  Matrix<Real> w_out;  // d_model x vocab

  static Parameters zeros(const ModelConfig& c) {
    Parameters p;
    const std::size_t d = c.d_model;
    p.tok_emb = Matrix<Real>(c.vocab_size, d);
    p.pos_emb = Matrix<Real>(c.max_seq_len, d);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      LayerParams<Real> lp;
      lp.ln1_gain = Matrix<Real>(1, d);
      lp.ln1_bias = Matrix<Real>(1, d);
      lp.wq = Matrix<Real>(d, d);
      lp.wk = Matrix<Real>(d, d);
      lp.wv = Matrix<Real>(d, d);
      lp.wo = Matrix<Real>(d, d);
      lp.ln2_gain = Matrix<Real>(1, d);
      lp.ln2_bias = Matrix<Real>(1, d);
      lp.w1 = Matrix<Real>(d, c.d_ff);
      lp.b1 = Matrix<Real>(1, c.d_ff);
      lp.w2 = Matrix<Real>(c.d_ff, d);
      lp.b2 = Matrix<Real>(1, d);
      p.layers.push_back(std::move(lp));
    }
    p.lnf_gain = Matrix<Real>(1, d);
    p.lnf_bias = Matrix<Real>(1, d);
    p.w_out = Matrix<Real>(d, c.vocab_size);
    return p;
  }

  /// Every tensor with its canonical name, in canonical order.
  std::vector<NamedTensor<Real>> tensors() {
    std::vector<NamedTensor<Real>> out{{"tok_emb", &tok_emb}, {"pos_emb", &pos_emb}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      auto& lp = layers[l];
      out.push_back({p + "ln1.gain", &lp.ln1_gain});
      out.push_back({p + "ln1.bias", &lp.ln1_bias});
      out.push_back({p + "attn.wq", &lp.wq});
      out.push_back({p + "attn.wk", &lp.wk});
      out.push_back({p + "attn.wv", &lp.wv});
      out.push_back({p + "attn.wo", &lp.wo});
      out.push_back({p + "ln2.gain", &lp.ln2_gain});
      out.push_back({p + "ln2.bias", &lp.ln2_bias});
      out.push_back({p + "ffn.w1", &lp.w1});
      out.push_back({p + "ffn.b1", &lp.b1});
      out.push_back({p + "ffn.w2", &lp.w2});
      out.push_back({p + "ffn.b2", &lp.b2});
    }
    out.push_back({"lnf.gain", &lnf_gain});
    out.push_back({"lnf.bias", &lnf_bias});
    out.push_back({"w_out", &w_out});
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : const_cast<Parameters*>(this)->tensors()) n += t.tensor->size();
    return n;
  }

  friend bool operator==(const Parameters& a, const Parameters& b) {
    auto& ma = const_cast<Parameters&>(a);
    auto& mb = const_cast<Parameters&>(b);
    auto ta = ma.tensors();
    auto tb = mb.tensors();
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (!(*ta[i].tensor == *tb[i].tensor)) return false;
    }
    return true;
  }
};

template <class Real>
struct Model {
  ModelConfig config;
  Parameters<Real> params;
};

inline constexpr double kInitStd = 0.02;

/// Normal(0, 0.02) weights and embeddings, zero biases and layer-norm
/// offsets, unit layer-norm gains.
template <class Real = double>
Model<Real> init_model(const ModelConfig& cfg) {
  cfg.validate();
  Model<Real> m{cfg, Parameters<Real>::zeros(cfg)};
  Rng rng(component_seed(cfg.seed, "init"));
  for (auto& [name, t] : m.params.tensors()) {
    const bool is_gain = name.ends_with(".gain");
    const bool is_bias = name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2");
    if (is_gain) {
      t->fill(Real(1));
    } else if (!is_bias) {
      for (auto& v : t->values()) v = static_cast<Real>(kInitStd * standard_normal(rng));
    }
  }
  return m;
}

/// Closed-form parameter count for a configuration.
inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff, v = c.vocab_size;
  const std::size_t per_layer = 2 * d + 4 * d * d + 2 * d + d * f + f + f * d + d;
  return v * d + c.max_seq_len * d + c.n_layers * per_layer + 2 * d + d * v;
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// softmax(Q K^T / sqrt(d_k) + mask) V. With `causal`, row i sees keys 0..i.
/// Optionally returns the attention weights (zero above the diagonal).
template <class Real>
Matrix<Real> attention(const Matrix<Real>& q, const Matrix<Real>& k, const Matrix<Real>& v, bool causal = true,
                       Matrix<Real>* weights = nullptr) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || q.cols() == 0) {
    throw DomainError("attention: shape mismatch Q" + shape_string(q.rows(), q.cols()) + " K" +
                      shape_string(k.rows(), k.cols()) + " V" + shape_string(v.rows(), v.cols()));
  }
  if (causal && q.rows() > k.rows()) throw DomainError("attention: causal mask needs as many keys as queries");
  Matrix<Real> out(q.rows(), v.cols());
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(q.cols()));
  if (weights) *weights = Matrix<Real>(q.rows(), k.rows());
  std::vector<Real> probs(k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::size_t visible = causal ? i + 1 : k.rows();
    Real max_score = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < visible; ++j) {
      Real s = 0;
      for (std::size_t t = 0; t < q.cols(); ++t) s += q(i, t) * k(j, t);
      probs[j] = s * scale;
      max_score = std::max(max_score, probs[j]);
    }
    Real sum = 0;
    for (std::size_t j = 0; j < visible; ++j) {
      probs[j] = std::exp(probs[j] - max_score);
      sum += probs[j];
    }
    for (std::size_t j = 0; j < visible; ++j) {
      probs[j] /= sum;
      if (weights) (*weights)(i, j) = probs[j];
      for (std::size_t t = 0; t < v.cols(); ++t) out(i, t) += probs[j] * v(j, t);
    }
  }
  return out;
}

/// Causal multi-head self-attention of one layer: heads on d_model / h
/// column slices of the Q/K/V projections, concatenated and projected by W^O.
template <class Real>
Matrix<Real> multi_head(const Matrix<Real>& x, const LayerParams<Real>& lp, std::size_t n_heads) {
  const std::size_t d = lp.wq.rows();
  if (x.cols() != d) throw DomainError("multi_head: input width " + std::to_string(x.cols()) + " != d_model " +
                                       std::to_string(d));
  if (n_heads == 0 || d % n_heads != 0) throw DomainError("multi_head: n_heads must divide d_model");
  const std::size_t n = x.rows(), hd = d / n_heads;
  Matrix<Real> q(n, d), k(n, d), v(n, d), ctx(n, d), out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    kernels::affine_row(x.row(i), lp.wq, static_cast<const Real*>(nullptr), q.row(i));
    kernels::affine_row(x.row(i), lp.wk, static_cast<const Real*>(nullptr), k.row(i));
    kernels::affine_row(x.row(i), lp.wv, static_cast<const Real*>(nullptr), v.row(i));
  }
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));
  std::vector<Real> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      kernels::attention_row(q.row(i), k, v, i + 1, h * hd, hd, scale, probs.data(), ctx.row(i));
    }
    kernels::affine_row(ctx.row(i), lp.wo, static_cast<const Real*>(nullptr), out.row(i));
  }
  return out;
}

/// max(0, x W1 + b1) W2 + b2, row-wise.
template <class Real>
Matrix<Real> ffn(const Matrix<Real>& x, const Matrix<Real>& w1, const Matrix<Real>& b1, const Matrix<Real>& w2,
                 const Matrix<Real>& b2) {
  if (x.cols() != w1.rows() || b1.cols() != w1.cols() || w2.rows() != w1.cols() || b2.cols() != w2.cols() ||
      b1.rows() != 1 || b2.rows() != 1) {
    throw DomainError("ffn: shape mismatch");
  }
  Matrix<Real> out(x.rows(), w2.cols());
  std::vector<Real> hidden(w1.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    kernels::affine_row(x.row(i), w1, b1.row(0), hidden.data());
    for (auto& h : hidden) h = std::max(h, Real(0));
    kernels::affine_row(hidden.data(), w2, b2.row(0), out.row(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass with activation cache
// ---------------------------------------------------------------------------

template <class Real>
struct LayerActivations {
  Matrix<Real> x_in, h1, q, k, v, ctx, attn_out, x_mid, h2, pre, act, ffn_out;
  std::vector<Real> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
  std::vector<Matrix<Real>> probs;  // per head, n x n lower triangle
  Matrix<Real> drop_attn, drop_ffn; // inverted-dropout masks; empty when off
};

template <class Real>
struct ForwardCache {
  std::vector<TokenId> ids;
  std::vector<LayerActivations<Real>> layers;
  Matrix<Real> x_final, hf, logits;
  std::vector<Real> lnf_mean, lnf_rstd;
};

template <class Real>
void check_ids(const Model<Real>& m, std::span<const TokenId> ids) {
  if (ids.empty()) throw DataError("empty token sequence");
  if (ids.size() > m.config.max_seq_len) {
    throw DataError("sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                    std::to_string(m.config.max_seq_len));
  }
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= m.config.vocab_size) {
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(m.config.vocab_size));
    }
  }
}

namespace detail {

template <class Real>
void make_dropout_mask(Matrix<Real>& mask, std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  mask = Matrix<Real>(rows, cols);
  const Real keep = static_cast<Real>(1.0 / (1.0 - rate));
  for (auto& v : mask.values()) v = uniform01(rng) < rate ? Real(0) : keep;
}

}  // namespace detail

/// Full forward pass. Pass a dropout RNG only during training.
template <class Real>
void forward(const Model<Real>& m, std::span<const TokenId> ids, ForwardCache<Real>& cache,
             Rng* dropout_rng = nullptr) {
  check_ids(m, ids);
  const auto& c = m.config;
  const auto& p = m.params;
  const std::size_t n = ids.size(), d = c.d_model, hd = c.head_dim();
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));
  const bool dropout = dropout_rng != nullptr && c.dropout_rate > 0.0;

  cache.ids.assign(ids.begin(), ids.end());
  cache.layers.resize(c.n_layers);
  Matrix<Real> x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* te = p.tok_emb.row(static_cast<std::size_t>(ids[i]));
    const Real* pe = p.pos_emb.row(i);
    for (std::size_t t = 0; t < d; ++t) x(i, t) = te[t] + pe[t];
  }
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lp = p.layers[l];
    auto& a = cache.layers[l];
    a.x_in = x;
    a.h1 = Matrix<Real>(n, d);
    a.ln1_mean.assign(n, 0);
    a.ln1_rstd.assign(n, 0);
    a.q = Matrix<Real>(n, d);
    a.k = Matrix<Real>(n, d);
    a.v = Matrix<Real>(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      kernels::layer_norm_row(x.row(i), d, lp.ln1_gain.row(0), lp.ln1_bias.row(0), a.h1.row(i), a.ln1_mean[i],
                              a.ln1_rstd[i]);
      kernels::affine_row(a.h1.row(i), lp.wq, static_cast<const Real*>(nullptr), a.q.row(i));
      kernels::affine_row(a.h1.row(i), lp.wk, static_cast<const Real*>(nullptr), a.k.row(i));
      kernels::affine_row(a.h1.row(i), lp.wv, static_cast<const Real*>(nullptr), a.v.row(i));
    }
    a.probs.assign(c.n_heads, Matrix<Real>(n, n));
    a.ctx = Matrix<Real>(n, d);
    a.attn_out = Matrix<Real>(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        kernels::attention_row(a.q.row(i), a.k, a.v, i + 1, h * hd, hd, scale, a.probs[h].row(i), a.ctx.row(i));
      }
      kernels::affine_row(a.ctx.row(i), lp.wo, static_cast<const Real*>(nullptr), a.attn_out.row(i));
    }
    if (dropout) {
      detail::make_dropout_mask(a.drop_attn, n, d, c.dropout_rate, *dropout_rng);
    } else {
      a.drop_attn = Matrix<Real>();
    }
    a.x_mid = Matrix<Real>(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < d; ++t) {
        const Real branch = dropout ? a.attn_out(i, t) * a.drop_attn(i, t) : a.attn_out(i, t);
        a.x_mid(i, t) = x(i, t) + branch;
      }
    }
    a.h2 = Matrix<Real>(n, d);
    a.ln2_mean.assign(n, 0);
    a.ln2_rstd.assign(n, 0);
    a.pre = Matrix<Real>(n, c.d_ff);
    a.act = Matrix<Real>(n, c.d_ff);
    a.ffn_out = Matrix<Real>(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      kernels::layer_norm_row(a.x_mid.row(i), d, lp.ln2_gain.row(0), lp.ln2_bias.row(0), a.h2.row(i),
                              a.ln2_mean[i], a.ln2_rstd[i]);
      kernels::affine_row(a.h2.row(i), lp.w1, lp.b1.row(0), a.pre.row(i));
      for (std::size_t t = 0; t < c.d_ff; ++t) a.act(i, t) = std::max(a.pre(i, t), Real(0));
      kernels::affine_row(a.act.row(i), lp.w2, lp.b2.row(0), a.ffn_out.row(i));
    }
    if (dropout) {
      detail::make_dropout_mask(a.drop_ffn, n, d, c.dropout_rate, *dropout_rng);
    } else {
      a.drop_ffn = Matrix<Real>();
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < d; ++t) {
        const Real branch = dropout ? a.ffn_out(i, t) * a.drop_ffn(i, t) : a.ffn_out(i, t);
        x(i, t) = a.x_mid(i, t) + branch;
      }
    }
  }
  cache.x_final = x;
  cache.hf = Matrix<Real>(n, d);
  cache.lnf_mean.assign(n, 0);
  cache.lnf_rstd.assign(n, 0);
  cache.logits = Matrix<Real>(n, c.vocab_size);
  for (std::size_t i = 0; i < n; ++i) {
    kernels::layer_norm_row(x.row(i), d, p.lnf_gain.row(0), p.lnf_bias.row(0), cache.hf.row(i), cache.lnf_mean[i],
                            cache.lnf_rstd[i]);
    kernels::affine_row(cache.hf.row(i), p.w_out, static_cast<const Real*>(nullptr), cache.logits.row(i));
  }
}

/// Logits (seq x vocab) for a token sequence.
template <class Real>
Matrix<Real> forward(const Model<Real>& m, std::span<const TokenId> ids) {
  ForwardCache<Real> cache;
  forward(m, ids, cache);
  return std::move(cache.logits);
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

/// Next-token targets for ids: targets[i] = ids[i + 1]; a position is live
/// unless its target is PAD.
struct Targets {
  std::vector<TokenId> ids;
  std::vector<bool> live;

  static Targets next_token(std::span<const TokenId> seq) {
    Targets t;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      t.ids.push_back(seq[i + 1]);
      t.live.push_back(seq[i + 1] != kPadId);
    }
    return t;
  }

  std::size_t live_count() const {
    std::size_t n = 0;
    for (bool b : live) n += b ? 1 : 0;
    return n;
  }
};

/// Mean negative log-likelihood over live positions; row i of logits scores
/// targets[i].
template <class Real>
Real nll_loss(const Matrix<Real>& logits, std::span<const TokenId> targets, const std::vector<bool>& live) {
  if (targets.size() != live.size() || targets.size() > logits.rows()) {
    throw DomainError("nll_loss: targets/mask/logits size mismatch");
  }
  Real sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!live[i]) continue;
    sum -= kernels::log_softmax_at(logits.row(i), logits.cols(), static_cast<std::size_t>(targets[i]));
    ++count;
  }
  if (count == 0) throw DomainError("nll_loss: every position is masked");
  return sum / static_cast<Real>(count);
}

/// Backpropagates dlogits through the cached forward pass, accumulating
/// into grads.
template <class Real>
void backward_from_logits(const Model<Real>& m, const ForwardCache<Real>& cache, const Matrix<Real>& dlogits,
                          Parameters<Real>& grads) {
  const auto& c = m.config;
  const auto& p = m.params;
  const std::size_t n = cache.ids.size(), d = c.d_model, hd = c.head_dim();
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));

  kernels::accumulate_at_b(cache.hf, dlogits, grads.w_out);
  Matrix<Real> dhf(n, d);
  kernels::accumulate_a_bt(dlogits, p.w_out, dhf);
  Matrix<Real> dx(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    kernels::layer_norm_backward_row(cache.x_final.row(i), dhf.row(i), d, p.lnf_gain.row(0), cache.lnf_mean[i],
                                     cache.lnf_rstd[i], grads.lnf_gain.row(0), grads.lnf_bias.row(0), dx.row(i));
  }

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& lp = p.layers[li];
    const auto& a = cache.layers[li];
    auto& g = grads.layers[li];

    // x_out = x_mid + drop(ffn(ln2(x_mid)))
    Matrix<Real> dffn = dx;
    if (!a.drop_ffn.empty()) {
      for (std::size_t k = 0; k < dffn.size(); ++k) dffn.values()[k] *= a.drop_ffn.values()[k];
    }
    kernels::accumulate_column_sums(dffn, g.b2);
    kernels::accumulate_at_b(a.act, dffn, g.w2);
    Matrix<Real> dpre(n, c.d_ff);
    kernels::accumulate_a_bt(dffn, lp.w2, dpre);
    for (std::size_t k = 0; k < dpre.size(); ++k) {
      if (!(a.pre.values()[k] > Real(0))) dpre.values()[k] = 0;
    }
    kernels::accumulate_column_sums(dpre, g.b1);
    kernels::accumulate_at_b(a.h2, dpre, g.w1);
    Matrix<Real> dh2(n, d);
    kernels::accumulate_a_bt(dpre, lp.w1, dh2);
    Matrix<Real> dmid = dx;
    for (std::size_t i = 0; i < n; ++i) {
      kernels::layer_norm_backward_row(a.x_mid.row(i), dh2.row(i), d, lp.ln2_gain.row(0), a.ln2_mean[i],
                                       a.ln2_rstd[i], g.ln2_gain.row(0), g.ln2_bias.row(0), dmid.row(i));
    }

    // x_mid = x_in + drop(attn(ln1(x_in)))
    Matrix<Real> dattn = dmid;
    if (!a.drop_attn.empty()) {
      for (std::size_t k = 0; k < dattn.size(); ++k) dattn.values()[k] *= a.drop_attn.values()[k];
    }
    kernels::accumulate_at_b(a.ctx, dattn, g.wo);
    Matrix<Real> dctx(n, d);
    kernels::accumulate_a_bt(dattn, lp.wo, dctx);
    Matrix<Real> dq(n, d), dk(n, d), dv(n, d);
    std::vector<Real> dprob(n);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const std::size_t off = h * hd;
      const auto& probs = a.probs[h];
      for (std::size_t i = 0; i < n; ++i) {
        const Real* dci = dctx.row(i) + off;
        Real weighted = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          const Real pij = probs(i, j);
          const Real* vj = a.v.row(j) + off;
          Real* dvj = dv.row(j) + off;
          Real dp = 0;
          for (std::size_t t = 0; t < hd; ++t) {
            dp += dci[t] * vj[t];
            dvj[t] += pij * dci[t];
          }
          dprob[j] = dp;
          weighted += pij * dp;
        }
        const Real* qi = a.q.row(i) + off;
        Real* dqi = dq.row(i) + off;
        for (std::size_t j = 0; j <= i; ++j) {
          const Real ds = probs(i, j) * (dprob[j] - weighted) * scale;
          const Real* kj = a.k.row(j) + off;
          Real* dkj = dk.row(j) + off;
          for (std::size_t t = 0; t < hd; ++t) {
            dqi[t] += ds * kj[t];
            dkj[t] += ds * qi[t];
          }
        }
      }
    }
    kernels::accumulate_at_b(a.h1, dq, g.wq);
    kernels::accumulate_at_b(a.h1, dk, g.wk);
    kernels::accumulate_at_b(a.h1, dv, g.wv);
    Matrix<Real> dh1(n, d);
    kernels::accumulate_a_bt(dq, lp.wq, dh1);
    kernels::accumulate_a_bt(dk, lp.wk, dh1);
    kernels::accumulate_a_bt(dv, lp.wv, dh1);
    dx = dmid;
    for (std::size_t i = 0; i < n; ++i) {
      kernels::layer_norm_backward_row(a.x_in.row(i), dh1.row(i), d, lp.ln1_gain.row(0), a.ln1_mean[i],
                                       a.ln1_rstd[i], g.ln1_gain.row(0), g.ln1_bias.row(0), dx.row(i));
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    Real* te = grads.tok_emb.row(static_cast<std::size_t>(cache.ids[i]));
    Real* pe = grads.pos_emb.row(i);
    for (std::size_t t = 0; t < d; ++t) {
      te[t] += dx(i, t);
      pe[t] += dx(i, t);
    }
  }
}

/// Forward + backward of one sequence. Adds weight * d(sum of live NLL) to
/// grads and returns the (unweighted) sum of live NLL and the live count.
template <class Real>
std::pair<Real, std::size_t> accumulate_sequence_gradient(const Model<Real>& m, std::span<const TokenId> ids,
                                                          Real weight, Parameters<Real>& grads,
                                                          Rng* dropout_rng = nullptr) {
  ForwardCache<Real> cache;
  forward(m, ids, cache, dropout_rng);
  const auto targets = Targets::next_token(ids);
  const std::size_t vocab = m.config.vocab_size;
  Matrix<Real> dlogits(ids.size(), vocab);
  Real loss = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < targets.ids.size(); ++i) {
    if (!targets.live[i]) continue;
    const auto tgt = static_cast<std::size_t>(targets.ids[i]);
    loss -= kernels::log_softmax_at(cache.logits.row(i), vocab, tgt);
    ++count;
    Real* dl = dlogits.row(i);
    kernels::softmax_row(cache.logits.row(i), vocab, dl);
    dl[tgt] -= Real(1);
    for (std::size_t t = 0; t < vocab; ++t) dl[t] *= weight;
  }
  if (count > 0) backward_from_logits(m, cache, dlogits, grads);
  return {loss, count};
}

/// Exact gradient of the sequence's mean live NLL with respect to every
/// parameter.
template <class Real>
Parameters<Real> backward(const Model<Real>& m, std::span<const TokenId> ids) {
  const auto count = Targets::next_token(ids).live_count();
  if (count == 0) throw DomainError("backward: every position is masked");
  auto grads = Parameters<Real>::zeros(m.config);
  accumulate_sequence_gradient(m, ids, Real(1) / static_cast<Real>(count), grads);
  return grads;
}

}  // namespace trajlm
