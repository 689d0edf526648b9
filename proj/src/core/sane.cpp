// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/sane.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "core/rng.hpp"

namespace weightgen {

using nlohmann::json;
namespace fs = std::filesystem;
using VecF = Eigen::VectorXf;

void SaneConfig::validate() const {
  if (d_t < 1) raise(ErrorCode::config, "d_t must be >= 1");
  if (window_size < 1) raise(ErrorCode::config, "window_size must be >= 1");
  if (d_model % n_heads != 0) raise(ErrorCode::config, "d_model must be divisible by n_heads");
  if (d_proj >= d_lat) raise(ErrorCode::config, "d_proj must be strictly less than d_lat");
  if (tau <= 0.0) raise(ErrorCode::config, "tau must be positive");
  if (epsilon <= 0.0) raise(ErrorCode::config, "epsilon must be positive");
  if (gamma < 0.0 || gamma > 1.0) raise(ErrorCode::config, "gamma must lie in [0,1]");
  if (lr <= 0.0) raise(ErrorCode::config, "lr must be positive");
  if (weight_decay < 0.0) raise(ErrorCode::config, "weight_decay must be nonnegative");
  if (aug_noise_sigma < 0.0) raise(ErrorCode::config, "aug_noise_sigma must be nonnegative");
  if (schedule != "warmup_cosine" && schedule != "constant")
    raise(ErrorCode::config, "unknown schedule '" + schedule + "'");
}

std::string SaneConfig::to_json() const {
  json j;
  j["d_t"] = d_t;
  j["window_size"] = window_size;
  j["d_model"] = d_model;
  j["d_lat"] = d_lat;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_proj"] = d_proj;
  j["gamma"] = gamma;
  j["tau"] = tau;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["aug_noise_sigma"] = aug_noise_sigma;
  j["epsilon"] = epsilon;
  j["norm_mode"] = normalization_mode_name(norm_mode);
  j["schedule"] = schedule;
  j["max_layers"] = max_layers;
  j["max_k"] = max_k;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

SaneConfig SaneConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("sane config: ") + e.what());
  }
  SaneConfig c;
  try {
    c.d_t = j.at("d_t").get<int>();
    c.window_size = j.at("window_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_lat = j.at("d_lat").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_proj = j.value("d_proj", c.d_proj);
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.aug_noise_sigma = j.value("aug_noise_sigma", c.aug_noise_sigma);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.norm_mode = normalization_mode_from_name(j.value("norm_mode", "masked_per_token"));
    c.schedule = j.value("schedule", c.schedule);
    c.max_layers = j.value("max_layers", c.max_layers);
    c.max_k = j.value("max_k", c.max_k);
    c.seed = j.value("seed", uint64_t(0));
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("sane config: missing field: ") + e.what());
  }
  c.validate();
  return c;
}

SaneConfig sane_config_preset(const std::string& name) {
  SaneConfig c;
  if (name == "cnn") {
    c.d_t = 289;
    c.window_size = 32;
    c.d_model = 1024;
    c.d_lat = 128;
    c.n_layers = 4;
    c.n_heads = 8;
    c.epochs = 50;
    c.lr = 1e-4;
    c.weight_decay = 3e-9;
    c.batch_size = 32;
  } else if (name == "resnet") {
    c.d_t = 288;
    c.window_size = 256;
    c.d_model = 2048;
    c.d_lat = 128;
    c.n_layers = 8;
    c.n_heads = 8;
    c.epochs = 60;
    c.lr = 2e-5;
    c.weight_decay = 3e-9;
    c.batch_size = 32;
  } else {
    raise(ErrorCode::config, "unknown preset '" + name + "' (expected cnn or resnet)");
  }
  return c;
}

namespace {

// ---- primitive layers ------------------------------------------------------

struct LnCache {
  MatF xhat;
  VecF invstd;
};

MatF ln_forward(const MatF& x, const MatF& gamma, const MatF& beta, LnCache* cache) {
  const Eigen::Index r = x.rows(), d = x.cols();
  MatF y(r, d);
  MatF xhat(r, d);
  VecF invstd(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    float mu = x.row(i).mean();
    float var = (x.row(i).array() - mu).square().mean();
    float is = 1.0f / std::sqrt(var + 1e-5f);
    xhat.row(i) = (x.row(i).array() - mu) * is;
    y.row(i) = xhat.row(i).cwiseProduct(gamma.row(0)) + beta.row(0);
    invstd(i) = is;
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->invstd = std::move(invstd);
  }
  return y;
}

MatF ln_backward(const MatF& dy, const LnCache& cache, const MatF& gamma, MatF& dgamma,
                 MatF& dbeta) {
  const Eigen::Index r = dy.rows(), d = dy.cols();
  MatF dx(r, d);
  for (Eigen::Index i = 0; i < r; ++i) {
    dgamma.row(0) += dy.row(i).cwiseProduct(cache.xhat.row(i));
    dbeta.row(0) += dy.row(i);
    Eigen::RowVectorXf dxhat = dy.row(i).cwiseProduct(gamma.row(0));
    float m1 = dxhat.mean();
    float m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = (dxhat.array() - m1 - cache.xhat.row(i).array() * m2) * cache.invstd(i);
  }
  return dx;
}

// y = x W^T + b
MatF linear_forward(const MatF& x, const MatF& w, const MatF& b) {
  MatF y = x * w.transpose();
  y.rowwise() += b.row(0);
  return y;
}

MatF linear_backward(const MatF& dy, const MatF& x, const MatF& w, MatF& dw, MatF& db) {
  dw.noalias() += dy.transpose() * x;
  db.row(0) += dy.colwise().sum();
  return dy * w;
}

float gelu_scalar(float x) {
  constexpr float c = 0.7978845608028654f;  // sqrt(2/pi)
  float inner = c * (x + 0.044715f * x * x * x);
  return 0.5f * x * (1.0f + std::tanh(inner));
}

float gelu_grad_scalar(float x) {
  constexpr float c = 0.7978845608028654f;
  float x3 = x * x * x;
  float t = std::tanh(c * (x + 0.044715f * x3));
  float dt = (1.0f - t * t) * c * (1.0f + 3.0f * 0.044715f * x * x);
  return 0.5f * (1.0f + t) + 0.5f * x * dt;
}

struct AttnCache {
  MatF x1;                 // ln1 output (attention input)
  MatF q, k, v;            // R x d
  std::vector<MatF> probs; // per (window*heads): w x w
  MatF concat;             // R x d pre-output-projection
};

struct BlockCache {
  MatF x_in;
  LnCache ln1;
  AttnCache attn;
  MatF x2;
  LnCache ln2;
  MatF x3;
  MatF h_pre;  // R x 4d
  MatF h;      // gelu(h_pre)
};

struct StackCache {
  MatF input;  // tokens or latents
  MatF x0;     // after input projection + positions
  std::vector<BlockCache> blocks;
  LnCache ln_f;
  MatF xf;
};

}  // namespace

// ---- model -----------------------------------------------------------------



SaneModel::SaneModel(SaneConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  init_params(seed);
}

ParamTensor& SaneModel::p(const std::string& name) { return params_[index_.at(name)]; }
const ParamTensor& SaneModel::p(const std::string& name) const {
  return params_[index_.at(name)];
}

void SaneModel::init_params(uint64_t seed) {
  Rng rng(Rng::derive(seed, "sane-init"));
  auto add = [&](const std::string& name, int rows, int cols, float scale) {
    ParamTensor t;
    t.name = name;
    t.w = MatF::Zero(rows, cols);
    if (scale > 0.0f)
      for (Eigen::Index i = 0; i < t.w.size(); ++i)
        t.w.data()[i] = float(rng.normal(0.0, scale));
    t.g = MatF::Zero(rows, cols);
    t.m = MatF::Zero(rows, cols);
    t.v = MatF::Zero(rows, cols);
    index_[name] = int(params_.size());
    params_.push_back(std::move(t));
  };
  auto add_ones = [&](const std::string& name, int cols) {
    ParamTensor t;
    t.name = name;
    t.w = MatF::Ones(1, cols);
    t.g = MatF::Zero(1, cols);
    t.m = MatF::Zero(1, cols);
    t.v = MatF::Zero(1, cols);
    index_[name] = int(params_.size());
    params_.push_back(std::move(t));
  };

  const int d = config_.d_model;
  const float ws = 0.02f;
  add("enc.in.w", d, config_.d_t, ws);
  add("enc.in.b", 1, d, 0.0f);
  add("pos.n", config_.window_size, d, ws);
  add("pos.l", config_.max_layers, d, ws);
  add("pos.k", config_.max_k, d, ws);
  auto add_stack = [&](const std::string& prefix) {
    for (int i = 0; i < config_.n_layers; ++i) {
      std::string b = prefix + ".b" + std::to_string(i) + ".";
      add_ones(b + "ln1.g", d);
      add(b + "ln1.b", 1, d, 0.0f);
      add(b + "attn.wq", d, d, ws);
      add(b + "attn.bq", 1, d, 0.0f);
      add(b + "attn.wk", d, d, ws);
      add(b + "attn.bk", 1, d, 0.0f);
      add(b + "attn.wv", d, d, ws);
      add(b + "attn.bv", 1, d, 0.0f);
      add(b + "attn.wo", d, d, ws);
      add(b + "attn.bo", 1, d, 0.0f);
      add_ones(b + "ln2.g", d);
      add(b + "ln2.b", 1, d, 0.0f);
      add(b + "mlp.w1", 4 * d, d, ws);
      add(b + "mlp.b1", 1, 4 * d, 0.0f);
      add(b + "mlp.w2", d, 4 * d, ws);
      add(b + "mlp.b2", 1, d, 0.0f);
    }
    add_ones(prefix + ".ln_f.g", d);
    add(prefix + ".ln_f.b", 1, d, 0.0f);
  };
  add_stack("enc");
  add("enc.out.w", config_.d_lat, d, ws);
  add("enc.out.b", 1, config_.d_lat, 0.0f);
  add("dec.in.w", d, config_.d_lat, ws);
  add("dec.in.b", 1, d, 0.0f);
  add_stack("dec");
  add("dec.out.w", config_.d_t, d, ws);
  add("dec.out.b", 1, config_.d_t, 0.0f);
  add("proj.w1", config_.d_lat, config_.d_lat, ws);
  add("proj.b1", 1, config_.d_lat, 0.0f);
  add("proj.w2", config_.d_proj, config_.d_lat, ws);
  add("proj.b2", 1, config_.d_proj, 0.0f);
}

size_t SaneModel::param_count() const {
  size_t n = 0;
  for (const auto& t : params_) n += size_t(t.w.size());
  return n;
}

namespace {

struct PosIndices {
  std::vector<int> n, l, k;
};

}  // namespace

// Positional lookups are window-relative in n; l and k come straight from
// the triples and must fit the configured tables.
static PosIndices pos_indices(const SaneConfig& cfg, const MatPos& positions, int window_len,
                              const std::vector<uint8_t>* valid) {
  PosIndices idx;
  const Eigen::Index r = positions.rows();
  idx.n.resize(r);
  idx.l.resize(r);
  idx.k.resize(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    bool is_valid = !valid || (*valid)[size_t(i)] != 0;
    idx.n[i] = int(i % window_len);
    int l = is_valid ? positions(i, 1) : 0;
    int k = is_valid ? positions(i, 2) : 0;
    if (l < 0 || l >= cfg.max_layers)
      raise(ErrorCode::config, "layer index " + std::to_string(l) +
                                   " outside positional table (max_layers=" +
                                   std::to_string(cfg.max_layers) + ")");
    if (k < 0 || k >= cfg.max_k)
      raise(ErrorCode::config, "within-layer index " + std::to_string(k) +
                                   " outside positional table (max_k=" +
                                   std::to_string(cfg.max_k) + ")");
    idx.l[i] = l;
    idx.k[i] = k;
  }
  return idx;
}

namespace {

struct StackParams {
  const MatF *in_w, *in_b;
  struct Block {
    const MatF *ln1g, *ln1b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    const MatF *ln2g, *ln2b, *w1, *b1, *w2, *b2;
  };
  std::vector<Block> blocks;
  const MatF *lnfg, *lnfb, *out_w, *out_b;
};

struct StackGrads {
  MatF *in_w, *in_b;
  struct Block {
    MatF *ln1g, *ln1b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    MatF *ln2g, *ln2b, *w1, *b1, *w2, *b2;
  };
  std::vector<Block> blocks;
  MatF *lnfg, *lnfb, *out_w, *out_b;
};

MatF attention_forward(const MatF& x1, const StackParams::Block& bp, int b, int w, int heads,
                       const std::vector<uint8_t>* valid, AttnCache* cache) {
  const Eigen::Index d = x1.cols();
  const int dk = int(d) / heads;
  const float scale = 1.0f / std::sqrt(float(dk));
  MatF q = linear_forward(x1, *bp.wq, *bp.bq);
  MatF k = linear_forward(x1, *bp.wk, *bp.bk);
  MatF v = linear_forward(x1, *bp.wv, *bp.bv);
  MatF concat(x1.rows(), d);
  std::vector<MatF> probs;
  probs.reserve(size_t(b) * heads);
  for (int bi = 0; bi < b; ++bi) {
    const int row0 = bi * w;
    for (int h = 0; h < heads; ++h) {
      auto qh = q.block(row0, h * dk, w, dk);
      auto kh = k.block(row0, h * dk, w, dk);
      auto vh = v.block(row0, h * dk, w, dk);
      MatF s = qh * kh.transpose() * scale;
      if (valid) {
        for (int j = 0; j < w; ++j)
          if ((*valid)[size_t(row0 + j)] == 0) s.col(j).setConstant(-1e9f);
      }
      // row-wise softmax
      for (int i = 0; i < w; ++i) {
        float mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      concat.block(row0, h * dk, w, dk).noalias() = s * vh;
      probs.push_back(std::move(s));
    }
  }
  MatF out = linear_forward(concat, *bp.wo, *bp.bo);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat = std::move(concat);
  }
  return out;
}

MatF attention_backward(const MatF& dout, const AttnCache& cache, const StackParams::Block& bp,
                        const StackGrads::Block& bg, int b, int w, int heads) {
  const Eigen::Index d = dout.cols();
  const int dk = int(d) / heads;
  const float scale = 1.0f / std::sqrt(float(dk));
  MatF dconcat = linear_backward(dout, cache.concat, *bp.wo, *bg.wo, *bg.bo);
  MatF dq = MatF::Zero(dout.rows(), d), dkm = MatF::Zero(dout.rows(), d),
       dv = MatF::Zero(dout.rows(), d);
  for (int bi = 0; bi < b; ++bi) {
    const int row0 = bi * w;
    for (int h = 0; h < heads; ++h) {
      const MatF& probs = cache.probs[size_t(bi) * heads + h];
      auto qh = cache.q.block(row0, h * dk, w, dk);
      auto kh = cache.k.block(row0, h * dk, w, dk);
      auto vh = cache.v.block(row0, h * dk, w, dk);
      auto dch = dconcat.block(row0, h * dk, w, dk);
      MatF dp = dch * vh.transpose();
      dv.block(row0, h * dk, w, dk).noalias() = probs.transpose() * dch;
      MatF ds(w, w);
      for (int i = 0; i < w; ++i) {
        float dot = dp.row(i).cwiseProduct(probs.row(i)).sum();
        ds.row(i) = probs.row(i).array() * (dp.row(i).array() - dot);
      }
      dq.block(row0, h * dk, w, dk).noalias() = ds * kh * scale;
      dkm.block(row0, h * dk, w, dk).noalias() = ds.transpose() * qh * scale;
    }
  }
  MatF dx1 = linear_backward(dq, cache.x1, *bp.wq, *bg.wq, *bg.bq);
  dx1 += linear_backward(dkm, cache.x1, *bp.wk, *bg.wk, *bg.bk);
  dx1 += linear_backward(dv, cache.x1, *bp.wv, *bg.wv, *bg.bv);
  return dx1;
}

MatF block_forward(const MatF& x, const StackParams::Block& bp, int b, int w, int heads,
                   const std::vector<uint8_t>* valid, BlockCache* cache) {
  LnCache ln1c;
  MatF x1 = ln_forward(x, *bp.ln1g, *bp.ln1b, cache ? &ln1c : nullptr);
  AttnCache ac;
  ac.x1 = x1;
  MatF attn = attention_forward(x1, bp, b, w, heads, valid, cache ? &ac : nullptr);
  MatF x2 = x + attn;
  LnCache ln2c;
  MatF x3 = ln_forward(x2, *bp.ln2g, *bp.ln2b, cache ? &ln2c : nullptr);
  MatF h_pre = linear_forward(x3, *bp.w1, *bp.b1);
  MatF h(h_pre.rows(), h_pre.cols());
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = gelu_scalar(h_pre.data()[i]);
  MatF out = x2 + linear_forward(h, *bp.w2, *bp.b2);
  if (cache) {
    cache->x_in = x;
    cache->ln1 = std::move(ln1c);
    cache->attn = std::move(ac);
    cache->x2 = std::move(x2);
    cache->ln2 = std::move(ln2c);
    cache->x3 = std::move(x3);
    cache->h_pre = std::move(h_pre);
    cache->h = std::move(h);
  }
  return out;
}

MatF block_backward(const MatF& dout, const BlockCache& cache, const StackParams::Block& bp,
                    const StackGrads::Block& bg, int b, int w, int heads) {
  // out = x2 + W2(gelu(W1 ln2(x2) + b1)) + b2
  MatF dh = linear_backward(dout, cache.h, *bp.w2, *bg.w2, *bg.b2);
  MatF dh_pre(dh.rows(), dh.cols());
  for (Eigen::Index i = 0; i < dh.size(); ++i)
    dh_pre.data()[i] = dh.data()[i] * gelu_grad_scalar(cache.h_pre.data()[i]);
  MatF dx3 = linear_backward(dh_pre, cache.x3, *bp.w1, *bg.w1, *bg.b1);
  MatF dx2 = ln_backward(dx3, cache.ln2, *bp.ln2g, *bg.ln2g, *bg.ln2b);
  dx2 += dout;
  MatF dx1 = attention_backward(dx2, cache.attn, bp, bg, b, w, heads);
  MatF dx = ln_backward(dx1, cache.ln1, *bp.ln1g, *bg.ln1g, *bg.ln1b);
  dx += dx2;
  return dx;
}

}  // namespace

namespace {

// Gathers rows with at least one signal entry so the spec-level loss (which
// rejects signal-free tokens) sees real tokens only.
std::vector<int> signal_rows(const MatF& mask) {
  std::vector<int> rows;
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    if (mask.row(r).sum() > 0.0f) rows.push_back(int(r));
  return rows;
}

MatF gather_rows(const MatF& m, const std::vector<int>& rows) {
  MatF out(Eigen::Index(rows.size()), m.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(Eigen::Index(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

namespace {

StackParams collect_params(const std::map<std::string, int>& index,
                           const std::vector<ParamTensor>& params, const std::string& prefix,
                           int n_layers) {
  auto get = [&](const std::string& n) -> const MatF* { return &params[index.at(n)].w; };
  StackParams sp;
  sp.in_w = get(prefix + ".in.w");
  sp.in_b = get(prefix + ".in.b");
  for (int i = 0; i < n_layers; ++i) {
    std::string b = prefix + ".b" + std::to_string(i) + ".";
    StackParams::Block bl{get(b + "ln1.g"), get(b + "ln1.b"), get(b + "attn.wq"),
                          get(b + "attn.bq"), get(b + "attn.wk"), get(b + "attn.bk"),
                          get(b + "attn.wv"), get(b + "attn.bv"), get(b + "attn.wo"),
                          get(b + "attn.bo"), get(b + "ln2.g"), get(b + "ln2.b"),
                          get(b + "mlp.w1"), get(b + "mlp.b1"), get(b + "mlp.w2"),
                          get(b + "mlp.b2")};
    sp.blocks.push_back(bl);
  }
  sp.lnfg = get(prefix + ".ln_f.g");
  sp.lnfb = get(prefix + ".ln_f.b");
  sp.out_w = get(prefix + ".out.w");
  sp.out_b = get(prefix + ".out.b");
  return sp;
}

StackGrads collect_grads(const std::map<std::string, int>& index,
                         std::vector<ParamTensor>& params, const std::string& prefix,
                         int n_layers) {
  auto get = [&](const std::string& n) -> MatF* { return &params[index.at(n)].g; };
  StackGrads sg;
  sg.in_w = get(prefix + ".in.w");
  sg.in_b = get(prefix + ".in.b");
  for (int i = 0; i < n_layers; ++i) {
    std::string b = prefix + ".b" + std::to_string(i) + ".";
    StackGrads::Block bl{get(b + "ln1.g"), get(b + "ln1.b"), get(b + "attn.wq"),
                         get(b + "attn.bq"), get(b + "attn.wk"), get(b + "attn.bk"),
                         get(b + "attn.wv"), get(b + "attn.bv"), get(b + "attn.wo"),
                         get(b + "attn.bo"), get(b + "ln2.g"), get(b + "ln2.b"),
                         get(b + "mlp.w1"), get(b + "mlp.b1"), get(b + "mlp.w2"),
                         get(b + "mlp.b2")};
    sg.blocks.push_back(bl);
  }
  sg.lnfg = get(prefix + ".ln_f.g");
  sg.lnfb = get(prefix + ".ln_f.b");
  sg.out_w = get(prefix + ".out.w");
  sg.out_b = get(prefix + ".out.b");
  return sg;
}

struct StackRun {
  StackCache cache;
  MatF output;
};

// input (R x d_in) -> output (R x d_out) through in-proj, positions, blocks,
// final LN and out-proj.
StackRun run_stack(const StackParams& sp, const MatF& pos_n, const MatF& pos_l,
                   const MatF& pos_k, const PosIndices& pos, const MatF& input, int b, int w,
                   int heads, const std::vector<uint8_t>* valid, bool keep_cache) {
  StackRun run;
  MatF x = linear_forward(input, *sp.in_w, *sp.in_b);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    x.row(r) += pos_n.row(pos.n[r]) + pos_l.row(pos.l[r]) + pos_k.row(pos.k[r]);
  if (keep_cache) {
    run.cache.input = input;
    run.cache.x0 = x;
    run.cache.blocks.resize(sp.blocks.size());
  }
  for (size_t i = 0; i < sp.blocks.size(); ++i)
    x = block_forward(x, sp.blocks[i], b, w, heads, valid,
                      keep_cache ? &run.cache.blocks[i] : nullptr);
  MatF xf = ln_forward(x, *sp.lnfg, *sp.lnfb, keep_cache ? &run.cache.ln_f : nullptr);
  if (keep_cache) run.cache.xf = xf;
  run.output = linear_forward(xf, *sp.out_w, *sp.out_b);
  return run;
}

// Backward through a stack; returns gradient w.r.t. the stack input and
// accumulates positional-table gradients.
MatF run_stack_backward(const StackParams& sp, const StackGrads& sg, MatF& dpos_n, MatF& dpos_l,
                        MatF& dpos_k, const PosIndices& pos, const StackCache& cache,
                        const MatF& doutput, int b, int w, int heads) {
  MatF dxf = linear_backward(doutput, cache.xf, *sp.out_w, *sg.out_w, *sg.out_b);
  // reconstruct the pre-ln_f activation from the last block cache chain:
  MatF dx = ln_backward(dxf, cache.ln_f, *sp.lnfg, *sg.lnfg, *sg.lnfb);
  for (int i = int(sp.blocks.size()) - 1; i >= 0; --i)
    dx = block_backward(dx, cache.blocks[i], sp.blocks[i], sg.blocks[i], b, w, heads);
  for (Eigen::Index r = 0; r < dx.rows(); ++r) {
    dpos_n.row(pos.n[r]) += dx.row(r);
    dpos_l.row(pos.l[r]) += dx.row(r);
    dpos_k.row(pos.k[r]) += dx.row(r);
  }
  return linear_backward(dx, cache.input, *sp.in_w, *sg.in_w, *sg.in_b);
}

}  // namespace

MatF SaneModel::encode(const MatF& tokens, const MatPos& positions,
                       const std::vector<uint8_t>* valid) const {
  if (tokens.cols() != config_.d_t)
    raise(ErrorCode::validation, "encode: token width " + std::to_string(tokens.cols()) +
                                     " != configured d_t " + std::to_string(config_.d_t));
  if (tokens.rows() > config_.window_size)
    raise(ErrorCode::validation, "encode: window longer than W_s");
  if (positions.rows() != tokens.rows())
    raise(ErrorCode::validation, "encode: positions/token row mismatch");
  const int w = int(tokens.rows());
  PosIndices pos = pos_indices(config_, positions, w, valid);
  StackParams sp = collect_params(index_, params_, "enc", config_.n_layers);
  StackRun run = run_stack(sp, p("pos.n").w, p("pos.l").w, p("pos.k").w, pos, tokens, 1, w,
                           config_.n_heads, valid, false);
  return run.output;
}

MatF SaneModel::decode(const MatF& latents, const MatPos& positions,
                       const std::vector<uint8_t>* valid) const {
  if (latents.cols() != config_.d_lat)
    raise(ErrorCode::validation, "decode: latent width mismatch");
  if (positions.rows() != latents.rows())
    raise(ErrorCode::validation, "decode: positions/latent row mismatch");
  const int w = int(latents.rows());
  if (w > config_.window_size) raise(ErrorCode::validation, "decode: window longer than W_s");
  PosIndices pos = pos_indices(config_, positions, w, valid);
  StackParams sp = collect_params(index_, params_, "dec", config_.n_layers);
  StackRun run = run_stack(sp, p("pos.n").w, p("pos.l").w, p("pos.k").w, pos, latents, 1, w,
                           config_.n_heads, valid, false);
  return run.output;
}

MatF SaneModel::project(const MatF& pooled) const {
  if (pooled.cols() != config_.d_lat) raise(ErrorCode::validation, "project: width mismatch");
  MatF h = linear_forward(pooled, p("proj.w1").w, p("proj.b1").w);
  h = h.cwiseMax(0.0f);
  return linear_forward(h, p("proj.w2").w, p("proj.b2").w);
}

MatF SaneModel::encode_sequence(const TokenizedModel& tm) const {
  const int w = config_.window_size;
  const int n = int(tm.count());
  MatF out(n, config_.d_lat);
  for (int start = 0; start < n; start += w) {
    int len = std::min(w, n - start);
    MatF tokens = MatF::Zero(w, config_.d_t);
    MatPos positions = MatPos::Zero(w, 3);
    std::vector<uint8_t> valid(size_t(w), 0);
    tokens.topRows(len) = tm.tokens.middleRows(start, len);
    positions.topRows(len) = tm.positions.middleRows(start, len);
    for (int i = 0; i < len; ++i) valid[size_t(i)] = 1;
    MatF z = encode(tokens, positions, &valid);
    out.middleRows(start, len) = z.topRows(len);
    if (n - start <= w) break;
  }
  if (n == 0) raise(ErrorCode::validation, "encode_sequence: empty token sequence");
  return out;
}

MatF SaneModel::decode_sequence(const MatF& latents, const SequenceLayout& layout) const {
  if (latents.rows() != layout.total_tokens)
    raise(ErrorCode::validation, "decode_sequence: latent count != layout tokens");
  const int w = config_.window_size;
  const int n = layout.total_tokens;
  MatPos all_pos = layout.positions();
  MatF out(n, config_.d_t);
  for (int start = 0; start < n; start += w) {
    int len = std::min(w, n - start);
    MatF lat = MatF::Zero(w, config_.d_lat);
    MatPos positions = MatPos::Zero(w, 3);
    std::vector<uint8_t> valid(size_t(w), 0);
    lat.topRows(len) = latents.middleRows(start, len);
    positions.topRows(len) = all_pos.middleRows(start, len);
    for (int i = 0; i < len; ++i) valid[size_t(i)] = 1;
    MatF t = decode(lat, positions, &valid);
    out.middleRows(start, len) = t.topRows(len);
    if (n - start <= w) break;
  }
  return out;
}

MatF SaneModel::pool_latents(const MatF& latents, const WindowBatch& batch) const {
  MatF pooled = MatF::Zero(batch.b, config_.d_lat);
  for (int bi = 0; bi < batch.b; ++bi) {
    int count = 0;
    for (int r = 0; r < batch.w; ++r) {
      int row = bi * batch.w + r;
      if (batch.valid.empty() || batch.valid[size_t(row)]) {
        pooled.row(bi) += latents.row(row);
        ++count;
      }
    }
    if (count == 0) raise(ErrorCode::validation, "pool: window without valid tokens");
    pooled.row(bi) /= float(count);
  }
  return pooled;
}

namespace {

struct LossBundle {
  float l_rec = 0.0f;
  MatF d_pred;  // gradient w.r.t. predictions (full row set)
};

LossBundle windowed_recon_loss(const MatF& target, const MatF& pred, const MatF& mask,
                               NormalizationMode mode, float eps, bool want_grad) {
  std::vector<int> rows = signal_rows(mask);
  if (rows.empty()) raise(ErrorCode::validation, "batch without signal tokens");
  MatF t = gather_rows(target, rows);
  MatF p = gather_rows(pred, rows);
  MatF m = gather_rows(mask, rows);
  LossBundle out;
  out.l_rec = normalized_reconstruction_loss<float>(t, p, m, mode, eps);
  if (want_grad) {
    MatF g = reconstruction_loss_grad<float>(t, p, m, mode, eps);
    out.d_pred = MatF::Zero(pred.rows(), pred.cols());
    for (size_t i = 0; i < rows.size(); ++i) out.d_pred.row(rows[i]) = g.row(Eigen::Index(i));
  }
  return out;
}

}  // namespace

TrainStepStats SaneModel::eval_loss(const WindowBatch& batch, const MatF& view_j_tokens) const {
  const float eps = float(config_.epsilon);
  PosIndices pos = pos_indices(config_, batch.positions, batch.w, &batch.valid);
  StackParams enc = collect_params(index_, params_, "enc", config_.n_layers);
  StackParams dec = collect_params(index_, params_, "dec", config_.n_layers);
  StackRun zi = run_stack(enc, p("pos.n").w, p("pos.l").w, p("pos.k").w, pos, batch.tokens,
                          batch.b, batch.w, config_.n_heads, &batch.valid, false);
  StackRun th = run_stack(dec, p("pos.n").w, p("pos.l").w, p("pos.k").w, pos, zi.output, batch.b,
                          batch.w, config_.n_heads, &batch.valid, false);
  LossBundle rec = windowed_recon_loss(batch.tokens, th.output, batch.mask, config_.norm_mode,
                                       eps, false);
  TrainStepStats stats;
  stats.l_rec = rec.l_rec;
  if (config_.gamma > 0.0) {
    StackRun zj = run_stack(enc, p("pos.n").w, p("pos.l").w, p("pos.k").w, pos, view_j_tokens,
                            batch.b, batch.w, config_.n_heads, &batch.valid, false);
    MatF pi = project(pool_latents(zi.output, batch));
    MatF pj = project(pool_latents(zj.output, batch));
    stats.l_con = ntxent_loss<float>(pi, pj, float(config_.tau));
  }
  stats.total = total_loss<double>(stats.l_rec, stats.l_con, config_.gamma);
  return stats;
}

TrainStepStats SaneModel::train_step(const WindowBatch& batch, const MatF& view_j_tokens,
                                     double lr_now) {
  const float eps = float(config_.epsilon);
  const float gamma = float(config_.gamma);
  for (auto& t : params_) t.g.setZero();

  PosIndices pos = pos_indices(config_, batch.positions, batch.w, &batch.valid);
  StackParams enc = collect_params(index_, params_, "enc", config_.n_layers);
  StackParams dec = collect_params(index_, params_, "dec", config_.n_layers);
  const MatF& pn = p("pos.n").w;
  const MatF& pl = p("pos.l").w;
  const MatF& pk = p("pos.k").w;

  StackRun zi = run_stack(enc, pn, pl, pk, pos, batch.tokens, batch.b, batch.w, config_.n_heads,
                          &batch.valid, true);
  StackRun th = run_stack(dec, pn, pl, pk, pos, zi.output, batch.b, batch.w, config_.n_heads,
                          &batch.valid, true);
  LossBundle rec =
      windowed_recon_loss(batch.tokens, th.output, batch.mask, config_.norm_mode, eps, true);

  TrainStepStats stats;
  stats.l_rec = rec.l_rec;

  StackRun zj;
  MatF pooled_i, pooled_j, proj_i, proj_j, relu_i, relu_j;
  if (gamma > 0.0f) {
    zj = run_stack(enc, pn, pl, pk, pos, view_j_tokens, batch.b, batch.w, config_.n_heads,
                   &batch.valid, true);
    pooled_i = pool_latents(zi.output, batch);
    pooled_j = pool_latents(zj.output, batch);
    relu_i = linear_forward(pooled_i, p("proj.w1").w, p("proj.b1").w).cwiseMax(0.0f);
    relu_j = linear_forward(pooled_j, p("proj.w1").w, p("proj.b1").w).cwiseMax(0.0f);
    proj_i = linear_forward(relu_i, p("proj.w2").w, p("proj.b2").w);
    proj_j = linear_forward(relu_j, p("proj.w2").w, p("proj.b2").w);
    stats.l_con = ntxent_loss<float>(proj_i, proj_j, float(config_.tau));
  }
  stats.total = total_loss<double>(stats.l_rec, stats.l_con, config_.gamma);

  // ---- backward ----
  StackGrads genc = collect_grads(index_, params_, "enc", config_.n_layers);
  StackGrads gdec = collect_grads(index_, params_, "dec", config_.n_layers);
  MatF& dpn = p("pos.n").g;
  MatF& dpl = p("pos.l").g;
  MatF& dpk = p("pos.k").g;

  MatF d_that = rec.d_pred * (1.0f - gamma);
  MatF dz_i = run_stack_backward(dec, gdec, dpn, dpl, dpk, pos, th.cache, d_that, batch.b,
                                 batch.w, config_.n_heads);

  if (gamma > 0.0f) {
    auto [dpi, dpj] = ntxent_loss_grad<float>(proj_i, proj_j, float(config_.tau));
    dpi *= gamma;
    dpj *= gamma;
    auto proj_back = [&](const MatF& dproj, const MatF& relu_out, const MatF& pooled) {
      MatF drelu = linear_backward(dproj, relu_out, p("proj.w2").w, p("proj.w2").g,
                                   p("proj.b2").g);
      for (Eigen::Index i = 0; i < drelu.size(); ++i)
        if (relu_out.data()[i] <= 0.0f) drelu.data()[i] = 0.0f;
      return linear_backward(drelu, pooled, p("proj.w1").w, p("proj.w1").g, p("proj.b1").g);
    };
    MatF dpool_i = proj_back(dpi, relu_i, pooled_i);
    MatF dpool_j = proj_back(dpj, relu_j, pooled_j);
    // pooled = mean over valid rows
    auto pool_back = [&](const MatF& dpool) {
      MatF dz = MatF::Zero(batch.rows(), config_.d_lat);
      for (int bi = 0; bi < batch.b; ++bi) {
        int count = 0;
        for (int r = 0; r < batch.w; ++r)
          if (batch.valid.empty() || batch.valid[size_t(bi * batch.w + r)]) ++count;
        for (int r = 0; r < batch.w; ++r) {
          int row = bi * batch.w + r;
          if (batch.valid.empty() || batch.valid[size_t(row)])
            dz.row(row) = dpool.row(bi) / float(count);
        }
      }
      return dz;
    };
    dz_i += pool_back(dpool_i);
    MatF dz_j = pool_back(dpool_j);
    run_stack_backward(enc, genc, dpn, dpl, dpk, pos, zj.cache, dz_j, batch.b, batch.w,
                       config_.n_heads);
  }
  run_stack_backward(enc, genc, dpn, dpl, dpk, pos, zi.cache, dz_i, batch.b, batch.w,
                     config_.n_heads);

  // ---- AdamW ----
  adam_t_ += 1;
  const float b1 = 0.9f, b2 = 0.999f, adam_eps = 1e-8f;
  const float bc1 = 1.0f - std::pow(b1, float(adam_t_));
  const float bc2 = 1.0f - std::pow(b2, float(adam_t_));
  const float lr = float(lr_now);
  const float wd = float(config_.weight_decay);
  for (auto& t : params_) {
    t.m = b1 * t.m + (1.0f - b1) * t.g;
    t.v = b2 * t.v + (1.0f - b2) * t.g.cwiseProduct(t.g);
    MatF mhat = t.m / bc1;
    MatF vhat = t.v / bc2;
    t.w -= lr * (mhat.array() / (vhat.array().sqrt() + adam_eps)).matrix();
    if (wd > 0.0f) t.w -= lr * wd * t.w;
  }
  return stats;
}

void SaneModel::save(const fs::path& dir) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorCode::storage, "cannot create " + dir.string());
  std::ofstream cf(dir / "config.json", std::ios::trunc);
  if (!cf) raise(ErrorCode::storage, "cannot write config.json");
  cf << config_.to_json();

  json idx = json::array();
  uint64_t offset = 0;
  std::ofstream wf(dir / "weights.bin", std::ios::binary | std::ios::trunc);
  if (!wf) raise(ErrorCode::storage, "cannot write weights.bin");
  for (const auto& t : params_) {
    idx.push_back({{"name", t.name},
                   {"rows", t.w.rows()},
                   {"cols", t.w.cols()},
                   {"offset", offset}});
    wf.write(reinterpret_cast<const char*>(t.w.data()),
             std::streamsize(size_t(t.w.size()) * sizeof(float)));
    offset += uint64_t(t.w.size()) * sizeof(float);
  }
  if (!wf) raise(ErrorCode::storage, "short write to weights.bin");
  std::ofstream jf(dir / "index.json", std::ios::trunc);
  jf << idx.dump(2) << "\n";
}

SaneModel SaneModel::load(const fs::path& dir) {
  std::ifstream cf(dir / "config.json");
  if (!cf) raise(ErrorCode::storage, "cannot open " + (dir / "config.json").string());
  std::string text((std::istreambuf_iterator<char>(cf)), std::istreambuf_iterator<char>());
  SaneModel model(SaneConfig::from_json(text), 0);

  std::ifstream jf(dir / "index.json");
  if (!jf) raise(ErrorCode::storage, "cannot open index.json");
  json idx;
  try {
    idx = json::parse(jf);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("index.json: ") + e.what());
  }
  std::ifstream wf(dir / "weights.bin", std::ios::binary);
  if (!wf) raise(ErrorCode::integrity, "missing weights.bin");
  for (const auto& je : idx) {
    std::string name = je.at("name").get<std::string>();
    auto it = model.index_.find(name);
    if (it == model.index_.end())
      raise(ErrorCode::integrity, "unknown parameter '" + name + "' in index");
    ParamTensor& t = model.params_[it->second];
    if (t.w.rows() != je.at("rows").get<Eigen::Index>() ||
        t.w.cols() != je.at("cols").get<Eigen::Index>())
      raise(ErrorCode::integrity, "parameter '" + name + "' shape mismatch");
    wf.seekg(std::streamoff(je.at("offset").get<uint64_t>()));
    wf.read(reinterpret_cast<char*>(t.w.data()),
            std::streamsize(size_t(t.w.size()) * sizeof(float)));
    if (!wf) raise(ErrorCode::integrity, "weights.bin truncated at '" + name + "'");
  }
  return model;
}

}  // namespace weightgen
