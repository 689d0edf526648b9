// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "core/rng.hpp"

namespace weightgen {

std::vector<int> solve_assignment_min(const Eigen::MatrixXd& cost) {
  const int n = int(cost.rows());
  if (cost.cols() != n) raise(ErrorCode::invalid_argument, "assignment needs a square matrix");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(size_t(n) + 1, 0.0), v(size_t(n) + 1, 0.0);
  std::vector<int> p(size_t(n) + 1, 0), way(size_t(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(size_t(n) + 1, kInf);
    std::vector<char> used(size_t(n) + 1, 0);
    do {
      used[size_t(j0)] = 1;
      int i0 = p[size_t(j0)], j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[size_t(j)]) continue;
        double cur = cost(i0 - 1, j - 1) - u[size_t(i0)] - v[size_t(j)];
        if (cur < minv[size_t(j)]) {
          minv[size_t(j)] = cur;
          way[size_t(j)] = j0;
        }
        if (minv[size_t(j)] < delta) {
          delta = minv[size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[size_t(j)]) {
          u[size_t(p[size_t(j)])] += delta;
          v[size_t(j)] -= delta;
        } else {
          minv[size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[size_t(j0)] != 0);
    do {
      int j1 = way[size_t(j0)];
      p[size_t(j0)] = p[size_t(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<size_t>(n), 0);
  for (int j = 1; j <= n; ++j)
    if (p[size_t(j)] > 0) row_to_col[size_t(p[size_t(j)] - 1)] = j - 1;
  return row_to_col;
}

ModelCheckpoint soup(const std::vector<ModelCheckpoint>& models) {
  if (models.empty()) raise(ErrorCode::invalid_argument, "soup needs at least one model");
  const std::string& arch_id = models[0].arch.arch_id;
  for (const auto& m : models)
    if (m.arch.arch_id != arch_id)
      raise(ErrorCode::validation, "soup: architecture mismatch");
  ModelCheckpoint out = models[0];
  const float inv = 1.0f / float(models.size());
  for (auto& [name, t] : out.tensors) {
    for (size_t i = 0; i < t.data.size(); ++i) {
      double acc = 0.0;
      for (const auto& m : models) acc += m.tensors.at(name).data[i];
      t.data[i] = float(acc * inv);
    }
  }
  for (auto& [name, st] : out.bn_stats) {
    for (size_t c = 0; c < st.mean.size(); ++c) {
      double ms = 0.0, vs = 0.0;
      for (const auto& m : models) {
        ms += m.bn_stats.at(name).mean[c];
        vs += m.bn_stats.at(name).var[c];
      }
      st.mean[c] = float(ms * inv);
      st.var[c] = float(vs * inv);
    }
  }
  out.meta.epoch = models[0].meta.epoch;
  return out;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  int make() {
    parent.push_back(int(parent.size()));
    return parent.back();
  }
  int find(int x) {
    while (parent[size_t(x)] != x) {
      parent[size_t(x)] = parent[size_t(parent[size_t(x)])];
      x = parent[size_t(x)];
    }
    return x;
  }
  void unite(int a, int b) { parent[size_t(find(a))] = find(b); }
};

struct ChannelRef {
  int group = -1;
  int block = 1;  // contiguous columns per input channel in consumer weights
};

// Ops coupled to a permutation group.
struct GroupUse {
  // nodes whose output rows live in the group
  std::vector<const OpNode*> out_ops;
  // (node, column block size) whose input columns live in the group
  std::vector<std::pair<const OpNode*, int>> in_ops;
  std::vector<const OpNode*> bn_ops;
  int size = 0;
  bool fixed = false;
};

struct GroupAnalysis {
  UnionFind uf;
  std::map<int, GroupUse> uses;        // by root
  std::vector<int> order;              // permutable roots, creation order
  std::map<const OpNode*, int> out_group_of;  // root of each weighted op's output
  std::map<const OpNode*, int> in_group_of;
  std::map<const OpNode*, int> in_block_of;   // column block size per weighted op
};

GroupAnalysis analyze_groups(const ExecProgram& prog) {
  GroupAnalysis ga;
  auto shapes = prog.buffer_shapes();
  std::vector<ChannelRef> ref(shapes.size());
  int input_group = ga.uf.make();
  ref[0] = {input_group, 1};
  std::vector<int> creation;  // group ids in creation order
  creation.push_back(input_group);

  for (const auto& node : prog.nodes) {
    const ChannelRef& in = ref[size_t(node.inputs[0])];
    switch (node.kind) {
      case OpKind::conv2d:
      case OpKind::linear: {
        int g = ga.uf.make();
        creation.push_back(g);
        ref[size_t(node.output)] = {g, 1};
        break;
      }
      case OpKind::batchnorm:
      case OpKind::relu:
      case OpKind::tanh_act:
      case OpKind::maxpool2:
      case OpKind::global_avgpool:
        ref[size_t(node.output)] = in;
        break;
      case OpKind::flatten: {
        const BufferShape& s = shapes[size_t(node.inputs[0])];
        ref[size_t(node.output)] = {in.group, in.block * s.h * s.w};
        break;
      }
      case OpKind::add: {
        const ChannelRef& b = ref[size_t(node.inputs[1])];
        ga.uf.unite(in.group, b.group);
        ref[size_t(node.output)] = {ga.uf.find(in.group), in.block};
        break;
      }
    }
  }

  std::set<int> fixed_roots;
  fixed_roots.insert(ga.uf.find(input_group));
  fixed_roots.insert(ga.uf.find(ref[size_t(prog.nodes.back().output)].group));

  for (const auto& node : prog.nodes) {
    if (!node.weighted()) continue;
    const ChannelRef& in = ref[size_t(node.inputs[0])];
    int in_root = ga.uf.find(in.group);
    int out_root = ga.uf.find(ref[size_t(node.output)].group);
    if (node.kind == OpKind::batchnorm) {
      ga.uses[out_root].bn_ops.push_back(&node);
      ga.uses[out_root].size = node.out_ch;
    } else {
      ga.uses[out_root].out_ops.push_back(&node);
      ga.uses[out_root].size = node.out_ch;
      int block = node.kind == OpKind::conv2d ? node.ksize * node.ksize : in.block;
      ga.uses[in_root].in_ops.emplace_back(&node, block);
      ga.in_block_of[&node] = block;
    }
    ga.out_group_of[&node] = out_root;
    ga.in_group_of[&node] = in_root;
  }
  for (int root : fixed_roots) ga.uses[root].fixed = true;

  std::set<int> seen;
  for (int g : creation) {
    int root = ga.uf.find(g);
    if (seen.count(root)) continue;
    seen.insert(root);
    if (!ga.uses[root].fixed && ga.uses[root].size > 0 && !ga.uses[root].out_ops.empty())
      ga.order.push_back(root);
  }
  return ga;
}

// Permutes the first `blocks*block` columns of t by sigma over blocks.
void permute_col_blocks(Tensor& t, const std::vector<int>& sigma, int block) {
  Tensor copy = t;
  const int blocks = int(sigma.size());
  for (int r = 0; r < t.rows; ++r)
    for (int c = 0; c < blocks; ++c)
      for (int i = 0; i < block; ++i)
        t.at(r, c * block + i) = copy.at(r, sigma[size_t(c)] * block + i);
}

void permute_rows(Tensor& t, const std::vector<int>& sigma) {
  Tensor copy = t;
  for (size_t r = 0; r < sigma.size(); ++r)
    for (int c = 0; c < t.cols; ++c) t.at(int(r), c) = copy.at(sigma[r], c);
}

void apply_group_perm(ModelCheckpoint& m, const GroupAnalysis& ga, int root,
                      const std::vector<int>& sigma) {
  const GroupUse& use = ga.uses.at(root);
  for (const OpNode* op : use.out_ops) permute_rows(m.tensors.at(op->name), sigma);
  for (const OpNode* op : use.bn_ops) {
    Tensor& t = m.tensors.at(op->name);
    Tensor copy = t;
    for (size_t c = 0; c < sigma.size(); ++c) {
      t.at(0, int(c)) = copy.at(0, sigma[c]);
      t.at(1, int(c)) = copy.at(1, sigma[c]);
    }
    BnStats& st = m.bn_stats.at(op->name);
    BnStats sc = st;
    for (size_t c = 0; c < sigma.size(); ++c) {
      st.mean[c] = sc.mean[sigma[c]];
      st.var[c] = sc.var[sigma[c]];
    }
  }
  for (const auto& [op, block] : use.in_ops) permute_col_blocks(m.tensors.at(op->name), sigma, block);
}

bool is_identity(const std::vector<int>& sigma) {
  for (size_t i = 0; i < sigma.size(); ++i)
    if (sigma[i] != int(i)) return false;
  return true;
}

}  // namespace

double weight_l2_distance(const ModelCheckpoint& a, const ModelCheckpoint& b) {
  double acc = 0.0;
  for (const auto& [name, ta] : a.tensors) {
    const Tensor& tb = b.tensors.at(name);
    for (size_t i = 0; i < ta.data.size(); ++i) {
      double d = double(ta.data[i]) - tb.data[i];
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

RebasinResult rebasin_align(const ModelCheckpoint& reference, const ModelCheckpoint& target,
                            int max_iters) {
  if (reference.arch.arch_id != target.arch.arch_id)
    raise(ErrorCode::validation, "rebasin: architecture mismatch");
  if (!reference.program) raise(ErrorCode::invalid_argument, "rebasin: missing program");

  const ExecProgram& prog = *reference.program;
  GroupAnalysis ga = analyze_groups(prog);

  // current permutation per permutable root (identity to start)
  std::map<int, std::vector<int>> sigma;
  for (int root : ga.order) {
    std::vector<int> id(size_t(ga.uses.at(root).size));
    std::iota(id.begin(), id.end(), 0);
    sigma[root] = id;
  }
  // aligned copy of target under the current sigmas, rebuilt per evaluation
  auto build_aligned = [&] {
    ModelCheckpoint aligned = target;
    for (int root : ga.order)
      if (!is_identity(sigma.at(root))) apply_group_perm(aligned, ga, root, sigma.at(root));
    return aligned;
  };

  RebasinResult result;
  result.l2_history.push_back(weight_l2_distance(reference, build_aligned()));

  Rng order_rng(Rng::derive(0x5eed, "rebasin-order"));
  for (int sweep = 0; sweep < max_iters; ++sweep) {
    bool changed = false;
    // randomized visiting order (deterministically seeded) avoids the
    // order-locked local optima of fixed-order coordinate descent
    std::vector<int> visit = ga.order;
    if (sweep > 0) order_rng.shuffle(visit);
    for (int root : visit) {
      const GroupUse& use = ga.uses.at(root);
      const int n = use.size;
      Eigen::MatrixXd affinity = Eigen::MatrixXd::Zero(n, n);

      for (const OpNode* op : use.out_ops) {
        const Tensor& ta = reference.tensors.at(op->name);
        Tensor tb = target.tensors.at(op->name);
        int in_root = ga.in_group_of.at(op);
        if (sigma.count(in_root))
          permute_col_blocks(tb, sigma.at(in_root), ga.in_block_of.at(op));
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            double dot = 0.0;
            for (int c = 0; c < ta.cols; ++c) dot += double(ta.at(i, c)) * tb.at(j, c);
            affinity(i, j) += dot;
          }
      }
      for (const auto& [op, block] : use.in_ops) {
        const Tensor& ta = reference.tensors.at(op->name);
        Tensor tb = target.tensors.at(op->name);
        int out_root = ga.out_group_of.at(op);
        if (sigma.count(out_root)) permute_rows(tb, sigma.at(out_root));
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            double dot = 0.0;
            for (int r = 0; r < ta.rows; ++r)
              for (int x = 0; x < block; ++x)
                dot += double(ta.at(r, i * block + x)) * tb.at(r, j * block + x);
            affinity(i, j) += dot;
          }
      }
      for (const OpNode* op : use.bn_ops) {
        const Tensor& ta = reference.tensors.at(op->name);
        const Tensor& tb = target.tensors.at(op->name);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            affinity(i, j) += double(ta.at(0, i)) * tb.at(0, j) + double(ta.at(1, i)) * tb.at(1, j);
      }

      std::vector<int> best = solve_assignment_min(-affinity);
      if (best != sigma.at(root)) {
        sigma[root] = best;
        changed = true;
      }
    }
    result.sweeps = sweep + 1;
    result.l2_history.push_back(weight_l2_distance(reference, build_aligned()));
    if (!changed) break;
  }

  result.aligned = build_aligned();
  for (int root : ga.order) {
    PermGroup pg;
    pg.id = root;
    pg.size = ga.uses.at(root).size;
    for (const OpNode* op : ga.uses.at(root).out_ops) pg.layers.push_back(op->name);
    for (const OpNode* op : ga.uses.at(root).bn_ops) pg.layers.push_back(op->name);
    pg.perm = sigma.at(root);
    result.groups.push_back(std::move(pg));
  }
  return result;
}

SoupCurve soup_curve(const Zoo& zoo, const std::vector<int>& ks, bool aligned,
                     const Dataset& eval_test, const Dataset& condition_train, int repeats,
                     uint64_t seed) {
  // candidate pool: final-epoch checkpoints
  int max_epoch = 0;
  for (const auto& e : zoo.manifest().checkpoints) max_epoch = std::max(max_epoch, e.meta.epoch);
  std::vector<size_t> pool;
  for (size_t i = 0; i < zoo.manifest().checkpoints.size(); ++i)
    if (zoo.manifest().checkpoints[i].meta.epoch == max_epoch) pool.push_back(i);
  for (int k : ks)
    if (k > int(pool.size()))
      raise(ErrorCode::config, "soup size " + std::to_string(k) + " exceeds zoo pool of " +
                                   std::to_string(pool.size()));
  if (pool.empty()) raise(ErrorCode::config, "zoo has no checkpoints");

  std::vector<ModelCheckpoint> models;
  models.reserve(pool.size());
  for (size_t i : pool) models.push_back(zoo.load(i));
  Executor ex(models[0].program);
  bool has_bn = models[0].program->has_batchnorm();

  auto evaluate = [&](const ModelCheckpoint& m) {
    ModelCheckpoint ready = has_bn ? condition_batchnorm(m, condition_train, 4) : m;
    return ex.accuracy(ready, eval_test) * 100.0;
  };

  SoupCurve curve;
  {
    Rng rng(Rng::derive(seed, "soup-k1"));
    std::vector<double> accs;
    for (int r = 0; r < repeats; ++r) {
      size_t pick = size_t(rng.uniform_int(0, int64_t(models.size()) - 1));
      accs.push_back(evaluate(models[pick]));
    }
    double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / double(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    curve.single_mean = mean;
    curve.single_std = std::sqrt(var / double(accs.size()));
  }

  for (int k : ks) {
    Rng rng(Rng::derive(seed, "soup-k", uint64_t(k)));
    std::vector<double> accs;
    for (int r = 0; r < repeats; ++r) {
      std::vector<int> order(int(models.size()));
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      std::vector<ModelCheckpoint> members;
      for (int i = 0; i < k; ++i) members.push_back(models[size_t(order[size_t(i)])]);
      if (aligned && k > 1) {
        for (int i = 1; i < k; ++i)
          members[size_t(i)] = rebasin_align(members[0], members[size_t(i)]).aligned;
      }
      accs.push_back(evaluate(soup(members)));
    }
    double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / double(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    curve.points.push_back({k, mean, std::sqrt(var / double(accs.size()))});
  }
  return curve;
}

std::string soup_curve_to_json(const SoupCurve& curve, bool aligned) {
  nlohmann::json j;
  j["aligned"] = aligned;
  j["single_mean"] = curve.single_mean;
  j["single_std"] = curve.single_std;
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : curve.points)
    pts.push_back({{"k", p.k}, {"mean", p.mean}, {"std", p.stddev}});
  j["points"] = std::move(pts);
  return j.dump(2) + "\n";
}

}  // namespace weightgen
