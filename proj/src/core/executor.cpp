// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/executor.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace weightgen {

namespace {

constexpr float kBnEps = 1e-5f;

using EigenMap = Eigen::Map<MatF>;
using ConstMap = Eigen::Map<const MatF>;
using StridedConstMap = Eigen::Map<const MatF, 0, Eigen::OuterStride<>>;

// Weight matrix without the bias column.
StridedConstMap weight_map(const Tensor& t, bool bias) {
  return StridedConstMap(t.data.data(), t.rows, t.cols - (bias ? 1 : 0),
                         Eigen::OuterStride<>(t.cols));
}

void im2col(const float* in, const BufferShape& s, int k, int stride, int pad, int oh, int ow,
            MatF& col) {
  const int kk = k * k;
  for (int c = 0; c < s.c; ++c) {
    const float* plane = in + size_t(c) * s.h * s.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        int row = c * kk + ky * k + kx;
        float* dst = col.data() + size_t(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kx;
            dst[oy * ow + ox] =
                (iy >= 0 && iy < s.h && ix >= 0 && ix < s.w) ? plane[iy * s.w + ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const MatF& dcol, const BufferShape& s, int k, int stride, int pad, int oh, int ow,
                float* din) {
  const int kk = k * k;
  for (int c = 0; c < s.c; ++c) {
    float* plane = din + size_t(c) * s.h * s.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        int row = c * kk + ky * k + kx;
        const float* src = dcol.data() + size_t(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= s.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < s.w) plane[iy * s.w + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

struct RunContext {
  std::vector<MatF> act;                       // per buffer: (batch, size)
  std::map<int, MatF> bn_xhat;                 // node index -> xhat
  std::map<int, Eigen::VectorXf> bn_invstd;    // node index -> per-channel
  std::map<int, std::vector<int>> pool_argmax; // node index -> flat plane offsets
};

}  // namespace

Executor::Executor(std::shared_ptr<const ExecProgram> program) : program_(std::move(program)) {
  shapes_ = program_->buffer_shapes();
}

namespace {

void check_ckpt(const ExecProgram& p, const ModelCheckpoint& ckpt) {
  if (ckpt.arch.arch_id != p.descriptor().arch_id)
    raise(ErrorCode::validation, "checkpoint does not match program architecture");
}

// Core interpreter. When ctx is non-null, training intermediates are kept.
void run_forward(const ExecProgram& prog, const std::vector<BufferShape>& shapes,
                 const ModelCheckpoint& ckpt, const float* images, int batch, BnMode bn_mode,
                 BnStats* running_updates,  // per-layer output, keyed externally
                 std::map<std::string, BnStats>* momentum_target, BnAccumulator* bn_acc,
                 const BnInputHook& hook, RunContext& ctx) {
  ctx.act.assign(shapes.size(), MatF());
  ctx.act[0] = ConstMap(images, batch, shapes[0].size());
  (void)running_updates;

  for (size_t ni = 0; ni < prog.nodes.size(); ++ni) {
    const OpNode& node = prog.nodes[ni];
    const BufferShape& out_shape = shapes[node.output];
    const BufferShape& in_shape = shapes[node.inputs[0]];
    const MatF& in = ctx.act[node.inputs[0]];
    MatF& out = ctx.act[node.output];
    out.resize(batch, out_shape.size());

    switch (node.kind) {
      case OpKind::conv2d: {
        const Tensor& t = ckpt.tensors.at(node.name);
        auto w = weight_map(t, node.bias);
        int oh = out_shape.h, ow = out_shape.w;
        MatF col(node.in_ch * node.ksize * node.ksize, oh * ow);
        for (int b = 0; b < batch; ++b) {
          im2col(in.row(b).data(), in_shape, node.ksize, node.stride, node.pad, oh, ow, col);
          EigenMap out_mat(out.row(b).data(), node.out_ch, oh * ow);
          out_mat.noalias() = w * col;
          if (node.bias)
            for (int oc = 0; oc < node.out_ch; ++oc)
              out_mat.row(oc).array() += t.at(oc, t.cols - 1);
        }
        break;
      }
      case OpKind::linear: {
        const Tensor& t = ckpt.tensors.at(node.name);
        auto w = weight_map(t, node.bias);
        out.noalias() = in * w.transpose();
        if (node.bias)
          for (int oc = 0; oc < node.out_ch; ++oc)
            out.col(oc).array() += t.at(oc, t.cols - 1);
        break;
      }
      case OpKind::batchnorm: {
        const Tensor& t = ckpt.tensors.at(node.name);
        const int ch = node.out_ch;
        const int spatial = in_shape.h * in_shape.w;
        if (hook) hook(node.name, in.data(), batch, ch, spatial);
        if (bn_mode == BnMode::running) {
          const BnStats& st = ckpt.bn_stats.at(node.name);
          for (int c = 0; c < ch; ++c) {
            float invstd = 1.0f / std::sqrt(st.var[c] + kBnEps);
            float gamma = t.at(0, c), beta = t.at(1, c), mean = st.mean[c];
            for (int b = 0; b < batch; ++b) {
              const float* src = in.row(b).data() + size_t(c) * spatial;
              float* dst = out.row(b).data() + size_t(c) * spatial;
              for (int s = 0; s < spatial; ++s) dst[s] = gamma * (src[s] - mean) * invstd + beta;
            }
          }
        } else {
          const double count = double(batch) * spatial;
          Eigen::VectorXf mean(ch), var(ch), invstd(ch);
          for (int c = 0; c < ch; ++c) {
            double sum = 0.0, sq = 0.0;
            for (int b = 0; b < batch; ++b) {
              const float* src = in.row(b).data() + size_t(c) * spatial;
              for (int s = 0; s < spatial; ++s) {
                sum += src[s];
                sq += double(src[s]) * src[s];
              }
            }
            double mu = sum / count;
            mean(c) = float(mu);
            var(c) = float(std::max(0.0, sq / count - mu * mu));
            invstd(c) = 1.0f / std::sqrt(var(c) + kBnEps);
          }
          MatF xhat(batch, out_shape.size());
          for (int c = 0; c < ch; ++c) {
            float gamma = t.at(0, c), beta = t.at(1, c);
            for (int b = 0; b < batch; ++b) {
              const float* src = in.row(b).data() + size_t(c) * spatial;
              float* xh = xhat.row(b).data() + size_t(c) * spatial;
              float* dst = out.row(b).data() + size_t(c) * spatial;
              for (int s = 0; s < spatial; ++s) {
                xh[s] = (src[s] - mean(c)) * invstd(c);
                dst[s] = gamma * xh[s] + beta;
              }
            }
          }
          ctx.bn_xhat[int(ni)] = std::move(xhat);
          ctx.bn_invstd[int(ni)] = invstd;
          if (bn_mode == BnMode::batch && momentum_target) {
            BnStats& st = (*momentum_target)[node.name];
            constexpr float m = 0.1f;
            for (int c = 0; c < ch; ++c) {
              st.mean[c] = (1 - m) * st.mean[c] + m * mean(c);
              st.var[c] = (1 - m) * st.var[c] + m * var(c);
            }
          }
          if (bn_mode == BnMode::condition && bn_acc) {
            BnStats& st = bn_acc->sums[node.name];
            if (st.mean.empty()) {
              st.mean.assign(ch, 0.0f);
              st.var.assign(ch, 0.0f);
            }
            for (int c = 0; c < ch; ++c) {
              st.mean[c] += mean(c);
              st.var[c] += var(c);
            }
          }
        }
        break;
      }
      case OpKind::relu:
        out = in.cwiseMax(0.0f);
        break;
      case OpKind::tanh_act:
        out = in.array().tanh();
        break;
      case OpKind::maxpool2: {
        const int ch = in_shape.c, ih = in_shape.h, iw = in_shape.w;
        const int oh = out_shape.h, ow = out_shape.w;
        std::vector<int>& arg = ctx.pool_argmax[int(ni)];
        arg.assign(size_t(batch) * ch * oh * ow, 0);
        for (int b = 0; b < batch; ++b) {
          const float* src = in.row(b).data();
          float* dst = out.row(b).data();
          for (int c = 0; c < ch; ++c) {
            const float* plane = src + size_t(c) * ih * iw;
            for (int oy = 0; oy < oh; ++oy) {
              for (int ox = 0; ox < ow; ++ox) {
                int base = 2 * oy * iw + 2 * ox;
                int best = base;
                float bv = plane[base];
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx) {
                    int idx = base + dy * iw + dx;
                    if (plane[idx] > bv) {
                      bv = plane[idx];
                      best = idx;
                    }
                  }
                dst[(size_t(c) * oh + oy) * ow + ox] = bv;
                arg[((size_t(b) * ch + c) * oh + oy) * ow + ox] = best;
              }
            }
          }
        }
        break;
      }
      case OpKind::global_avgpool: {
        const int ch = in_shape.c, spatial = in_shape.h * in_shape.w;
        for (int b = 0; b < batch; ++b)
          for (int c = 0; c < ch; ++c)
            out(b, c) =
                ConstMap(in.row(b).data() + size_t(c) * spatial, 1, spatial).sum() / spatial;
        break;
      }
      case OpKind::flatten:
        out = in;
        break;
      case OpKind::add:
        out = in + ctx.act[node.inputs[1]];
        break;
    }
  }
}

void run_backward(const ExecProgram& prog, const std::vector<BufferShape>& shapes,
                  const ModelCheckpoint& ckpt, int batch, const MatF& dlogits, RunContext& ctx,
                  GradMap& grads) {
  std::vector<MatF> dact(shapes.size());
  for (size_t i = 0; i < shapes.size(); ++i) dact[i] = MatF::Zero(batch, shapes[i].size());
  dact[prog.nodes.back().output] = dlogits;

  for (int ni = int(prog.nodes.size()) - 1; ni >= 0; --ni) {
    const OpNode& node = prog.nodes[ni];
    const BufferShape& out_shape = shapes[node.output];
    const BufferShape& in_shape = shapes[node.inputs[0]];
    const MatF& dout = dact[node.output];
    const MatF& in = ctx.act[node.inputs[0]];
    MatF& din = dact[node.inputs[0]];

    switch (node.kind) {
      case OpKind::conv2d: {
        const Tensor& t = ckpt.tensors.at(node.name);
        auto w = weight_map(t, node.bias);
        Tensor& g = grads.at(node.name);
        Eigen::Map<MatF, 0, Eigen::OuterStride<>> gw(g.data.data(), g.rows,
                                                     g.cols - (node.bias ? 1 : 0),
                                                     Eigen::OuterStride<>(g.cols));
        int oh = out_shape.h, ow = out_shape.w;
        int kdim = node.in_ch * node.ksize * node.ksize;
        MatF col(kdim, oh * ow), dcol(kdim, oh * ow);
        for (int b = 0; b < batch; ++b) {
          im2col(in.row(b).data(), in_shape, node.ksize, node.stride, node.pad, oh, ow, col);
          ConstMap dout_mat(dout.row(b).data(), node.out_ch, oh * ow);
          gw.noalias() += dout_mat * col.transpose();
          if (node.bias)
            for (int oc = 0; oc < node.out_ch; ++oc)
              g.at(oc, g.cols - 1) += dout_mat.row(oc).sum();
          dcol.noalias() = w.transpose() * dout_mat;
          col2im_add(dcol, in_shape, node.ksize, node.stride, node.pad, oh, ow,
                     din.row(b).data());
        }
        break;
      }
      case OpKind::linear: {
        const Tensor& t = ckpt.tensors.at(node.name);
        auto w = weight_map(t, node.bias);
        Tensor& g = grads.at(node.name);
        Eigen::Map<MatF, 0, Eigen::OuterStride<>> gw(g.data.data(), g.rows,
                                                     g.cols - (node.bias ? 1 : 0),
                                                     Eigen::OuterStride<>(g.cols));
        gw.noalias() += dout.transpose() * in;
        if (node.bias)
          for (int oc = 0; oc < node.out_ch; ++oc) g.at(oc, g.cols - 1) += dout.col(oc).sum();
        din.noalias() += dout * w;
        break;
      }
      case OpKind::batchnorm: {
        const Tensor& t = ckpt.tensors.at(node.name);
        Tensor& g = grads.at(node.name);
        const MatF& xhat = ctx.bn_xhat.at(ni);
        const Eigen::VectorXf& invstd = ctx.bn_invstd.at(ni);
        const int ch = node.out_ch;
        const int spatial = in_shape.h * in_shape.w;
        const double count = double(batch) * spatial;
        for (int c = 0; c < ch; ++c) {
          double dgamma = 0.0, dbeta = 0.0, dxhat_sum = 0.0, dxhat_xhat = 0.0;
          float gamma = t.at(0, c);
          for (int b = 0; b < batch; ++b) {
            const float* dsrc = dout.row(b).data() + size_t(c) * spatial;
            const float* xh = xhat.row(b).data() + size_t(c) * spatial;
            for (int s = 0; s < spatial; ++s) {
              dgamma += double(dsrc[s]) * xh[s];
              dbeta += dsrc[s];
              double dxh = double(dsrc[s]) * gamma;
              dxhat_sum += dxh;
              dxhat_xhat += dxh * xh[s];
            }
          }
          g.at(0, c) += float(dgamma);
          g.at(1, c) += float(dbeta);
          float mean_dxhat = float(dxhat_sum / count);
          float mean_dxhat_xhat = float(dxhat_xhat / count);
          for (int b = 0; b < batch; ++b) {
            const float* dsrc = dout.row(b).data() + size_t(c) * spatial;
            const float* xh = xhat.row(b).data() + size_t(c) * spatial;
            float* dd = din.row(b).data() + size_t(c) * spatial;
            for (int s = 0; s < spatial; ++s)
              dd[s] += invstd(c) *
                       (dsrc[s] * gamma - mean_dxhat - xh[s] * mean_dxhat_xhat);
          }
        }
        break;
      }
      case OpKind::relu:
        din.array() += dout.array() * (in.array() > 0.0f).cast<float>();
        break;
      case OpKind::tanh_act: {
        const MatF& y = ctx.act[node.output];
        din.array() += dout.array() * (1.0f - y.array().square());
        break;
      }
      case OpKind::maxpool2: {
        const int ch = in_shape.c, iw = in_shape.w;
        const int oh = out_shape.h, ow = out_shape.w;
        const std::vector<int>& arg = ctx.pool_argmax.at(ni);
        (void)iw;
        for (int b = 0; b < batch; ++b) {
          const float* dsrc = dout.row(b).data();
          float* dd = din.row(b).data();
          for (int c = 0; c < ch; ++c)
            for (int o = 0; o < oh * ow; ++o)
              dd[size_t(c) * in_shape.h * in_shape.w +
                 arg[((size_t(b) * ch + c) * oh * ow) + o]] +=
                  dsrc[size_t(c) * oh * ow + o];
        }
        break;
      }
      case OpKind::global_avgpool: {
        const int ch = in_shape.c, spatial = in_shape.h * in_shape.w;
        for (int b = 0; b < batch; ++b)
          for (int c = 0; c < ch; ++c) {
            float v = dout(b, c) / spatial;
            float* dd = din.row(b).data() + size_t(c) * spatial;
            for (int s = 0; s < spatial; ++s) dd[s] += v;
          }
        break;
      }
      case OpKind::flatten:
        din += dout;
        break;
      case OpKind::add:
        din += dout;
        dact[node.inputs[1]] += dout;
        break;
    }
  }
}

}  // namespace

MatF Executor::forward(const ModelCheckpoint& ckpt, const float* images, int batch, BnMode bn_mode,
                       BnAccumulator* bn_acc, const BnInputHook& hook) const {
  check_ckpt(*program_, ckpt);
  RunContext ctx;
  run_forward(*program_, shapes_, ckpt, images, batch, bn_mode, nullptr, nullptr, bn_acc, hook,
              ctx);
  if (bn_acc) bn_acc->batches += 1;
  return ctx.act[program_->nodes.back().output];
}

MatF Executor::forward_train(ModelCheckpoint& ckpt, const float* images, int batch) {
  check_ckpt(*program_, ckpt);
  RunContext ctx;
  run_forward(*program_, shapes_, ckpt, images, batch, BnMode::batch, nullptr, &ckpt.bn_stats,
              nullptr, nullptr, ctx);
  return ctx.act[program_->nodes.back().output];
}

float Executor::train_step_gradients(ModelCheckpoint& ckpt, const float* images,
                                     const int32_t* labels, int batch, GradMap& grads) {
  check_ckpt(*program_, ckpt);
  RunContext ctx;
  run_forward(*program_, shapes_, ckpt, images, batch, BnMode::batch, nullptr, &ckpt.bn_stats,
              nullptr, nullptr, ctx);
  const MatF& logits = ctx.act[program_->nodes.back().output];
  const int ncls = program_->num_classes;

  grads = make_zero_grads(ckpt);
  MatF dlogits(batch, ncls);
  double loss = 0.0;
  for (int b = 0; b < batch; ++b) {
    float mx = logits.row(b).maxCoeff();
    double denom = 0.0;
    for (int c = 0; c < ncls; ++c) denom += std::exp(double(logits(b, c)) - mx);
    double log_denom = std::log(denom) + mx;
    loss += log_denom - logits(b, labels[b]);
    for (int c = 0; c < ncls; ++c)
      dlogits(b, c) = float((std::exp(double(logits(b, c)) - mx) / denom -
                             (c == labels[b] ? 1.0 : 0.0)) /
                            batch);
  }
  run_backward(*program_, shapes_, ckpt, batch, dlogits, ctx, grads);
  return float(loss / batch);
}

double Executor::accuracy(const ModelCheckpoint& ckpt, const Dataset& data, int batch) const {
  Dataset adapted = data.adapted(program_->input_shape.c, program_->input_shape.h,
                                 program_->input_shape.w);
  int correct = 0;
  for (int start = 0; start < adapted.n; start += batch) {
    int b = std::min(batch, adapted.n - start);
    MatF logits = forward(ckpt, adapted.image(start), b, BnMode::running);
    for (int i = 0; i < b; ++i) {
      Eigen::Index best;
      logits.row(i).maxCoeff(&best);
      if (int(best) == adapted.labels[start + i]) ++correct;
    }
  }
  return adapted.n == 0 ? 0.0 : double(correct) / adapted.n;
}

double Executor::mean_cross_entropy(const ModelCheckpoint& ckpt, const Dataset& data,
                                    int batch) const {
  Dataset adapted = data.adapted(program_->input_shape.c, program_->input_shape.h,
                                 program_->input_shape.w);
  double loss = 0.0;
  const int ncls = program_->num_classes;
  for (int start = 0; start < adapted.n; start += batch) {
    int b = std::min(batch, adapted.n - start);
    MatF logits = forward(ckpt, adapted.image(start), b, BnMode::running);
    for (int i = 0; i < b; ++i) {
      float mx = logits.row(i).maxCoeff();
      double denom = 0.0;
      for (int c = 0; c < ncls; ++c) denom += std::exp(double(logits(i, c)) - mx);
      loss += std::log(denom) + mx - logits(i, adapted.labels[start + i]);
    }
  }
  return adapted.n == 0 ? 0.0 : loss / adapted.n;
}

ModelCheckpoint condition_batchnorm(const ModelCheckpoint& ckpt, const Dataset& data,
                                    int n_batches, int batch_size, const BnInputHook& hook) {
  ModelCheckpoint out = ckpt;
  if (!ckpt.program) raise(ErrorCode::invalid_argument, "checkpoint has no program attached");
  if (!ckpt.program->has_batchnorm()) return out;  // no-op, bit-identical
  if (data.n == 0 || n_batches < 1)
    raise(ErrorCode::invalid_argument, "batch-norm conditioning needs a non-empty data stream");

  Executor ex(out.program);
  Dataset adapted = data.adapted(ckpt.program->input_shape.c, ckpt.program->input_shape.h,
                                 ckpt.program->input_shape.w);
  BnAccumulator acc;
  int cursor = 0;
  for (int i = 0; i < n_batches; ++i) {
    int b = std::min(batch_size, adapted.n - cursor);
    if (b <= 0) {
      cursor = 0;
      b = std::min(batch_size, adapted.n);
    }
    ex.forward(out, adapted.image(cursor), b, BnMode::condition, &acc, hook);
    cursor += b;
  }
  for (auto& [name, sums] : acc.sums) {
    BnStats st;
    st.mean.resize(sums.mean.size());
    st.var.resize(sums.var.size());
    for (size_t c = 0; c < sums.mean.size(); ++c) {
      st.mean[c] = sums.mean[c] / float(acc.batches);
      st.var[c] = sums.var[c] / float(acc.batches);
    }
    out.bn_stats[name] = std::move(st);
  }
  return out;
}

GradMap make_zero_grads(const ModelCheckpoint& ckpt) {
  GradMap grads;
  for (const auto& [name, t] : ckpt.tensors) grads.emplace(name, Tensor(t.rows, t.cols));
  return grads;
}

}  // namespace weightgen
