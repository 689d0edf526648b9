// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include <doctest.h>

#include <filesystem>

#include "core/sampler.hpp"

using namespace weightgen;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("weightgen_sampler_" + name);
  fs::remove_all(p);
  return p;
}

SaneConfig toy_config() {
  SaneConfig c;
  c.d_t = 16;
  c.window_size = 8;
  c.d_model = 32;
  c.d_lat = 12;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_proj = 6;
  c.max_layers = 8;
  c.max_k = 128;
  return c;
}

std::vector<ModelCheckpoint> toy_anchors(int count, uint64_t seed) {
  auto program = std::make_shared<ExecProgram>(make_program("toy_mlp_bn"));
  std::vector<ModelCheckpoint> anchors;
  for (int i = 0; i < count; ++i) {
    ModelCheckpoint c = make_random_checkpoint(program, seed + uint64_t(i));
    c.meta.image_dataset = "synth:digits-a";
    c.meta.epoch = 25;
    anchors.push_back(std::move(c));
  }
  return anchors;
}

Zoo toy_zoo_on_disk(const std::string& name, int n_models, uint64_t seed) {
  auto program = std::make_shared<ExecProgram>(make_program("toy_mlp_bn"));
  std::vector<ModelCheckpoint> ckpts;
  std::vector<std::string> keys;
  for (int m = 0; m < n_models; ++m) {
    for (int e : {24, 25}) {
      ModelCheckpoint c = make_random_checkpoint(program, seed + uint64_t(m) * 7 + e);
      c.meta.image_dataset = "synth:digits-a";
      c.meta.epoch = e;
      ckpts.push_back(std::move(c));
      keys.push_back("m" + std::to_string(m));
    }
  }
  ZooManifest man = build_manifest(name, "synth:digits-a", program, ckpts, keys, seed);
  fs::path dir = temp_dir(name);
  write_zoo(dir, man, ckpts);
  return read_zoo(dir);
}

}  // namespace

TEST_CASE("default spec follows the shipped protocol: 200 candidates, keep 10, 5 anchors") {
  SampleSpec spec;
  CHECK(spec.n_candidates == 200);
  CHECK(spec.n_keep == 10);
  CHECK(spec.n_anchors == 5);
  spec.validate();
  SampleSpec back = SampleSpec::from_json(spec.to_json());
  CHECK(back.n_candidates == 200);
  CHECK(back.n_keep == 10);
}

TEST_CASE("spec validation") {
  SampleSpec spec;
  spec.n_keep = 300;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = SampleSpec();
  spec.n_anchors = 0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = SampleSpec();
  spec.noise_mode = "weird";
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("one anchor with zero noise reproduces decode(encode(anchor)) exactly") {
  SaneModel model(toy_config(), 3);
  auto anchors = toy_anchors(1, 11);
  SampleSpec spec;
  spec.n_candidates = 3;
  spec.n_keep = 1;
  spec.n_anchors = 1;
  spec.noise_mode = "absolute";
  spec.latent_noise_sigma = 0.0;
  spec.seed = 5;
  GenerateResult gen = generate_candidates(model, anchors, spec);
  REQUIRE(gen.candidates.size() == 3);

  TokenizedModel tm = tokenize(anchors[0], model.config().d_t);
  MatF z = model.encode_sequence(tm);
  SequenceLayout layout = sequence_layout(anchors[0].arch, model.config().d_t);
  MatF decoded = model.decode_sequence(z, layout);
  TokenizedModel rec;
  rec.tokens = decoded;
  rec.positions = layout.positions();
  rec.mask = layout.mask();
  rec.arch = anchors[0].arch;
  rec.token_size = model.config().d_t;
  ModelCheckpoint expected = detokenize(rec, anchors[0].program);
  for (const auto& c : gen.candidates) CHECK(tensors_equal(c, expected));
}

TEST_CASE("candidate generation is deterministic in (model, spec, seed)") {
  SaneModel model(toy_config(), 7);
  auto anchors = toy_anchors(3, 13);
  SampleSpec spec;
  spec.n_candidates = 4;
  spec.n_keep = 2;
  spec.n_anchors = 3;
  spec.seed = 17;
  GenerateResult a = generate_candidates(model, anchors, spec);
  GenerateResult b = generate_candidates(model, anchors, spec);
  for (size_t i = 0; i < a.candidates.size(); ++i)
    CHECK(tensors_equal(a.candidates[i], b.candidates[i]));
  CHECK(a.anchor_choices == b.anchor_choices);
  spec.seed = 18;
  GenerateResult c = generate_candidates(model, anchors, spec);
  CHECK(!tensors_equal(a.candidates[0], c.candidates[0]));
}

TEST_CASE("per-position anchor choices are close to uniform") {
  SaneModel model(toy_config(), 9);
  auto anchors = toy_anchors(5, 19);
  SampleSpec spec;
  spec.n_candidates = 40;
  spec.n_keep = 1;
  spec.n_anchors = 5;
  spec.seed = 23;
  GenerateResult gen = generate_candidates(model, anchors, spec);
  std::vector<int> counts(5, 0);
  int total = 0;
  for (const auto& choices : gen.anchor_choices)
    for (int a : choices) {
      counts[size_t(a)]++;
      ++total;
    }
  const double p = 1.0 / 5.0;
  const double expect = total * p;
  const double sigma = std::sqrt(total * p * (1 - p));
  for (int a = 0; a < 5; ++a) {
    INFO("anchor ", a, " count ", counts[size_t(a)]);
    CHECK(std::abs(counts[size_t(a)] - expect) <= 3.0 * sigma);
  }
}

TEST_CASE("anchor/architecture mismatch is rejected") {
  SaneModel model(toy_config(), 11);
  auto anchors = toy_anchors(2, 29);
  auto other = std::make_shared<ExecProgram>(make_program("mlp:8-4"));
  anchors.push_back(make_random_checkpoint(other, 1));
  SampleSpec spec;
  spec.n_candidates = 1;
  spec.n_keep = 1;
  CHECK_THROWS_AS(generate_candidates(model, anchors, spec), Error);
}

TEST_CASE("pick_anchors draws final-epoch train-split models") {
  Zoo zoo = toy_zoo_on_disk("anchors", 12, 31);
  auto anchors = pick_anchors(zoo, 5, 3);
  CHECK(anchors.size() == 5);
  for (const auto& a : anchors) CHECK(a.meta.epoch == 25);
}

TEST_CASE("selection ranks a planted strong model first") {
  auto program = std::make_shared<ExecProgram>(make_program("toy_mlp_bn"));
  Dataset train = make_synthetic_dataset("synth:digits-a", Split::train, 256, 3);
  Dataset val = make_synthetic_dataset("synth:digits-a", Split::val, 128, 3);
  // quick-train one model so it clearly beats random candidates
  Executor ex(program);
  ModelCheckpoint trained = make_random_checkpoint(program, 5);
  Dataset adapted = train.adapted(1, 8, 8);
  GradMap grads;
  for (int epoch = 0; epoch < 10; ++epoch) {
    for (int start = 0; start + 32 <= adapted.n; start += 32) {
      ex.train_step_gradients(trained, adapted.image(start), adapted.labels.data() + start, 32,
                              grads);
      for (auto& [name, g] : grads) {
        Tensor& w = trained.tensors.at(name);
        for (size_t i = 0; i < w.data.size(); ++i) w.data[i] -= 0.1f * g.data[i];
      }
    }
  }
  std::vector<ModelCheckpoint> candidates;
  for (uint64_t s = 0; s < 6; ++s) candidates.push_back(make_random_checkpoint(program, 100 + s));
  candidates.push_back(trained);  // index 6
  auto kept = select_candidates(candidates, val, 3);
  CHECK(kept.size() == 3);
  CHECK(kept[0].index == 6);
  CHECK(kept[0].score > kept[1].score);

  // n_keep == n_candidates is the identity up to ordering
  auto all = select_candidates(candidates, val, int(candidates.size()));
  CHECK(all.size() == candidates.size());
}

TEST_CASE("zero-shot contract: trainable hashes unchanged through the whole run") {
  SaneModel model(toy_config(), 13);
  Zoo zoo = toy_zoo_on_disk("zeroshot", 10, 37);
  SampleSpec spec;
  spec.n_candidates = 6;
  spec.n_keep = 3;
  spec.n_anchors = 2;
  spec.seed = 41;
  fs::path out = temp_dir("zeroshot_out");
  SampleRunResult run = run_sampling(model, zoo, "synth:digits-a", "", spec, out, 41);
  CHECK(run.kept_scores.size() == 3);

  // regenerate the same candidates and verify conditioning + evaluation
  // left every trainable parameter bit-identical
  auto anchors = pick_anchors(zoo, spec.n_anchors, spec.seed);
  GenerateResult gen = generate_candidates(model, anchors, spec);
  Dataset cond = resolve_dataset("synth:digits-a", "", Split::train, 256, 41);
  Dataset val = resolve_dataset("synth:digits-a", "", Split::val, 0, 41);
  for (const auto& c : gen.candidates) {
    uint64_t before = trainable_hash(c);
    ModelCheckpoint conditioned = condition_batchnorm(c, cond, spec.condition_batches,
                                                      spec.condition_batch_size);
    Executor ex(c.program);
    (void)ex.accuracy(conditioned, val);
    CHECK(trainable_hash(conditioned) == before);
  }

  // survivors on disk are a standard zoo
  Zoo sampled = read_zoo(out);
  CHECK(sampled.size() == 3);
  CHECK(sampled.manifest().token_size == model.config().d_t);
}
