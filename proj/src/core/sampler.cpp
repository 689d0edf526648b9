// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/sampler.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "core/rng.hpp"

namespace weightgen {

using nlohmann::json;
namespace fs = std::filesystem;

void SampleSpec::validate() const {
  if (n_candidates < 1) raise(ErrorCode::config, "n_candidates must be >= 1");
  if (n_keep < 1 || n_keep > n_candidates)
    raise(ErrorCode::config, "n_keep must satisfy 1 <= n_keep <= n_candidates");
  if (n_anchors < 1) raise(ErrorCode::config, "anchors must be nonempty");
  if (latent_noise_sigma < 0.0) raise(ErrorCode::config, "latent noise must be nonnegative");
  if (noise_mode != "auto" && noise_mode != "absolute")
    raise(ErrorCode::config, "noise_mode must be auto or absolute");
}

std::string SampleSpec::to_json() const {
  json j;
  j["n_candidates"] = n_candidates;
  j["n_keep"] = n_keep;
  j["n_anchors"] = n_anchors;
  j["noise_mode"] = noise_mode;
  j["latent_noise_sigma"] = latent_noise_sigma;
  j["condition_batches"] = condition_batches;
  j["condition_batch_size"] = condition_batch_size;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

SampleSpec SampleSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("sample spec: ") + e.what());
  }
  SampleSpec s;
  s.n_candidates = j.value("n_candidates", s.n_candidates);
  s.n_keep = j.value("n_keep", s.n_keep);
  s.n_anchors = j.value("n_anchors", s.n_anchors);
  s.noise_mode = j.value("noise_mode", s.noise_mode);
  s.latent_noise_sigma = j.value("latent_noise_sigma", s.latent_noise_sigma);
  s.condition_batches = j.value("condition_batches", s.condition_batches);
  s.condition_batch_size = j.value("condition_batch_size", s.condition_batch_size);
  s.seed = j.value("seed", uint64_t(0));
  s.validate();
  return s;
}

GenerateResult generate_candidates(const SaneModel& model,
                                   const std::vector<ModelCheckpoint>& anchors,
                                   const SampleSpec& spec) {
  spec.validate();
  if (anchors.empty()) raise(ErrorCode::validation, "anchors must be nonempty");
  const int d_t = model.config().d_t;
  const ArchitectureDescriptor& arch = anchors[0].arch;
  for (const auto& a : anchors)
    if (a.arch.arch_id != arch.arch_id)
      raise(ErrorCode::validation, "anchors do not share the target architecture");

  SequenceLayout layout = sequence_layout(arch, d_t);
  const int n_tokens = layout.total_tokens;
  const int a_count = int(anchors.size());

  // Encode every anchor once.
  std::vector<MatF> anchor_lat;
  anchor_lat.reserve(size_t(a_count));
  for (const auto& a : anchors) anchor_lat.push_back(model.encode_sequence(tokenize(a, d_t)));

  // Per-dimension latent spread over all anchors and positions.
  const int d_lat = model.config().d_lat;
  Eigen::VectorXf noise_scale(d_lat);
  if (spec.noise_mode == "auto") {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d_lat), sq = Eigen::VectorXd::Zero(d_lat);
    double count = 0.0;
    for (const auto& z : anchor_lat) {
      for (Eigen::Index r = 0; r < z.rows(); ++r) {
        sum += z.row(r).transpose().cast<double>();
        sq += z.row(r).transpose().cast<double>().cwiseAbs2();
      }
      count += double(z.rows());
    }
    for (int d = 0; d < d_lat; ++d) {
      double mu = sum(d) / count;
      double var = std::max(0.0, sq(d) / count - mu * mu);
      noise_scale(d) = float(spec.latent_noise_sigma * std::sqrt(var));
    }
  } else {
    noise_scale.setConstant(float(spec.latent_noise_sigma));
  }

  GenerateResult result;
  result.candidates.reserve(size_t(spec.n_candidates));
  result.anchor_choices.reserve(size_t(spec.n_candidates));
  for (int c = 0; c < spec.n_candidates; ++c) {
    Rng rng(Rng::derive(spec.seed, "candidate", uint64_t(c)));
    MatF lat(n_tokens, d_lat);
    std::vector<int> choices(static_cast<size_t>(n_tokens), 0);
    for (int p = 0; p < n_tokens; ++p) {
      int a = int(rng.uniform_int(0, a_count - 1));
      choices[size_t(p)] = a;
      lat.row(p) = anchor_lat[size_t(a)].row(p);
      for (int d = 0; d < d_lat; ++d)
        lat(p, d) += noise_scale(d) * rng.normal_f();
    }
    MatF tokens = model.decode_sequence(lat, layout);
    TokenizedModel tm;
    tm.tokens = std::move(tokens);
    tm.positions = layout.positions();
    tm.mask = layout.mask();
    tm.arch = arch;
    tm.token_size = d_t;
    ModelCheckpoint ckpt = detokenize(tm, anchors[0].program);
    ckpt.meta.image_dataset = anchors[0].meta.image_dataset;
    ckpt.meta.epoch = 0;
    ckpt.meta.seed = int64_t(spec.seed) + c;
    result.candidates.push_back(std::move(ckpt));
    result.anchor_choices.push_back(std::move(choices));
  }
  return result;
}

std::vector<ModelCheckpoint> pick_anchors(const Zoo& zoo, int count, uint64_t seed) {
  // final retained epoch per model_key, train split only
  int max_epoch = 0;
  for (const auto& e : zoo.manifest().checkpoints) max_epoch = std::max(max_epoch, e.meta.epoch);
  std::vector<size_t> pool;
  for (size_t i = 0; i < zoo.manifest().checkpoints.size(); ++i) {
    const ZooEntry& e = zoo.manifest().checkpoints[i];
    if (e.split == Split::train && e.meta.epoch == max_epoch) pool.push_back(i);
  }
  if (int(pool.size()) < count)
    raise(ErrorCode::config, "zoo has only " + std::to_string(pool.size()) +
                                 " final-epoch train checkpoints, need " + std::to_string(count));
  Rng rng(Rng::derive(seed, "anchors"));
  rng.shuffle(pool);
  std::vector<ModelCheckpoint> anchors;
  for (int i = 0; i < count; ++i) anchors.push_back(zoo.load(pool[size_t(i)]));
  return anchors;
}

std::vector<ScoredCheckpoint> select_candidates(const std::vector<ModelCheckpoint>& candidates,
                                                const Dataset& val_data, int n_keep) {
  if (candidates.empty()) raise(ErrorCode::invalid_argument, "no candidates");
  if (n_keep < 1 || n_keep > int(candidates.size()))
    raise(ErrorCode::invalid_argument, "n_keep out of range");
  Executor ex(candidates[0].program);
  std::vector<ScoredCheckpoint> scored;
  scored.reserve(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    ScoredCheckpoint sc;
    sc.ckpt = candidates[i];
    sc.score = ex.accuracy(candidates[i], val_data);
    sc.index = int(i);
    scored.push_back(std::move(sc));
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  scored.resize(size_t(n_keep));
  return scored;
}

SampleRunResult run_sampling(const SaneModel& model, const Zoo& anchor_zoo,
                             const std::string& task_tag, const std::string& data_root,
                             const SampleSpec& spec_in, const fs::path& out_dir, uint64_t seed) {
  SampleSpec spec = spec_in;
  if (spec.seed == 0) spec.seed = seed;
  std::vector<ModelCheckpoint> anchors = pick_anchors(anchor_zoo, spec.n_anchors, spec.seed);

  SampleRunResult out;
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& a : anchors) h ^= trainable_hash(a);
  out.anchor_trainable_hash = h;

  GenerateResult gen = generate_candidates(model, anchors, spec);

  std::shared_ptr<const ExecProgram> program = anchors[0].program;
  bool needs_bn = program->has_batchnorm();
  Dataset condition_data;
  if (needs_bn)
    condition_data = resolve_dataset(task_tag, data_root, Split::train,
                                     spec.condition_batches * spec.condition_batch_size, seed);
  for (auto& c : gen.candidates) {
    if (needs_bn)
      c = condition_batchnorm(c, condition_data, spec.condition_batches,
                              spec.condition_batch_size);
  }

  Dataset val = resolve_dataset(task_tag, data_root, Split::val, 0, seed);
  std::vector<ScoredCheckpoint> kept = select_candidates(gen.candidates, val, spec.n_keep);

  std::vector<ModelCheckpoint> survivors;
  std::vector<std::string> keys;
  for (auto& sc : kept) {
    out.kept_scores.push_back(sc.score);
    sc.ckpt.meta.test_accuracy = sc.score;
    char key[32];
    std::snprintf(key, sizeof key, "s%04d", sc.index);
    survivors.push_back(std::move(sc.ckpt));
    keys.emplace_back(key);
  }
  std::string zoo_id = out_dir.filename().string();
  if (zoo_id.empty()) zoo_id = "sampled";
  ZooManifest man = build_manifest(zoo_id, task_tag, std::make_shared<ExecProgram>(*program),
                                   survivors, keys, seed);
  man.token_size = model.config().d_t;
  write_zoo(out_dir, man, survivors);
  out.out_zoo = out_dir;
  return out;
}

}  // namespace weightgen
