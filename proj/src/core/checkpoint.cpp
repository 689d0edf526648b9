// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/checkpoint.hpp"

#include <cmath>
#include <cstring>

#include "core/rng.hpp"

namespace weightgen {

void ModelCheckpoint::validate() const {
  if (tensors.size() != arch.layers.size())
    raise(ErrorCode::validation,
          "checkpoint has " + std::to_string(tensors.size()) + " tensors, descriptor has " +
              std::to_string(arch.layers.size()) + " layers");
  for (const auto& l : arch.layers) {
    auto it = tensors.find(l.name);
    if (it == tensors.end())
      raise(ErrorCode::validation, "missing tensor for layer '" + l.name + "'");
    const Tensor& t = it->second;
    if (t.rows != l.tensor_rows() || t.cols != l.tensor_cols())
      raise(ErrorCode::validation,
            "layer '" + l.name + "': tensor shape (" + std::to_string(t.rows) + "," +
                std::to_string(t.cols) + ") != declared (" + std::to_string(l.tensor_rows()) +
                "," + std::to_string(l.tensor_cols()) + ")");
    for (float v : t.data)
      if (!std::isfinite(v))
        raise(ErrorCode::validation, "layer '" + l.name + "': non-finite value");
  }
}

size_t ModelCheckpoint::param_count() const {
  size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.count();
  return n;
}

ModelCheckpoint make_empty_checkpoint(std::shared_ptr<const ExecProgram> program) {
  ModelCheckpoint ckpt;
  ckpt.arch = program->descriptor();
  ckpt.program = std::move(program);
  for (const auto& l : ckpt.arch.layers) {
    Tensor t(l.tensor_rows(), l.tensor_cols());
    if (l.kind == LayerKind::batchnorm) {
      for (int c = 0; c < l.out_dim; ++c) t.at(0, c) = 1.0f;  // gamma
      BnStats st;
      st.mean.assign(l.out_dim, 0.0f);
      st.var.assign(l.out_dim, 1.0f);
      ckpt.bn_stats[l.name] = std::move(st);
    }
    ckpt.tensors[l.name] = std::move(t);
  }
  return ckpt;
}

InitScheme init_scheme_from_name(const std::string& s) {
  if (s == "he_uniform") return InitScheme::he_uniform;
  if (s == "he_normal") return InitScheme::he_normal;
  if (s == "xavier_uniform") return InitScheme::xavier_uniform;
  if (s == "xavier_normal") return InitScheme::xavier_normal;
  raise(ErrorCode::config, "unknown init scheme '" + s + "'");
}

ModelCheckpoint make_random_checkpoint(std::shared_ptr<const ExecProgram> program, uint64_t seed,
                                       InitScheme scheme) {
  ModelCheckpoint ckpt = make_empty_checkpoint(std::move(program));
  Rng rng(Rng::derive(seed, "init"));
  for (const auto& l : ckpt.arch.layers) {
    if (l.kind == LayerKind::batchnorm) continue;  // gamma=1/beta=0 init
    Tensor& t = ckpt.tensors[l.name];
    double fan_in = std::max(1, l.fan_in);
    double fan_out = l.out_dim;
    double gain, bound;
    switch (scheme) {
      case InitScheme::he_uniform:
        bound = std::sqrt(6.0 / fan_in);
        break;
      case InitScheme::xavier_uniform:
        bound = std::sqrt(6.0 / (fan_in + fan_out));
        break;
      case InitScheme::he_normal:
      case InitScheme::xavier_normal:
        bound = 0.0;
        break;
    }
    for (int r = 0; r < t.rows; ++r) {
      for (int c = 0; c < l.fan_in; ++c) {
        switch (scheme) {
          case InitScheme::he_uniform:
          case InitScheme::xavier_uniform:
            t.at(r, c) = float(rng.uniform(-bound, bound));
            break;
          case InitScheme::he_normal:
            gain = std::sqrt(2.0 / fan_in);
            t.at(r, c) = float(rng.normal(0.0, gain));
            break;
          case InitScheme::xavier_normal:
            gain = std::sqrt(2.0 / (fan_in + fan_out));
            t.at(r, c) = float(rng.normal(0.0, gain));
            break;
        }
      }
      // bias column stays zero
    }
  }
  return ckpt;
}

uint64_t trainable_hash(const ModelCheckpoint& ckpt) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& l : ckpt.arch.layers) {
    const Tensor& t = ckpt.tensors.at(l.name);
    h = fnv1a64(l.name, h);
    h = fnv1a64(t.data.data(), t.data.size() * sizeof(float), h);
  }
  return h;
}

bool tensors_equal(const ModelCheckpoint& a, const ModelCheckpoint& b) {
  if (a.arch.arch_id != b.arch.arch_id) return false;
  for (const auto& [name, ta] : a.tensors) {
    auto it = b.tensors.find(name);
    if (it == b.tensors.end()) return false;
    const Tensor& tb = it->second;
    if (ta.rows != tb.rows || ta.cols != tb.cols) return false;
    if (std::memcmp(ta.data.data(), tb.data.data(), ta.data.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

}  // namespace weightgen
