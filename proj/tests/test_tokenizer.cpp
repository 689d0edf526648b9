// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include <doctest.h>

#include "core/rng.hpp"
#include "core/tokenizer.hpp"

using namespace weightgen;

namespace {

ModelCheckpoint random_ckpt(const std::string& family, uint64_t seed) {
  auto program = std::make_shared<ExecProgram>(make_program(family));
  ModelCheckpoint c = make_random_checkpoint(program, seed);
  // make every value distinct-ish so round-trip bugs cannot hide
  Rng rng(seed + 1);
  for (auto& [name, t] : c.tensors)
    for (auto& v : t.data) v += 1e-3f * rng.normal_f();
  return c;
}

}  // namespace

TEST_CASE("hand-enumerated slicing: linear 3x5 with bias at d_t=4") {
  // rows of length 6 -> 2 tokens per row, 6 tokens total, second token
  // masked [1,1,0,0]
  auto program = std::make_shared<ExecProgram>(make_mlp({5, 3}));
  ModelCheckpoint c = make_empty_checkpoint(program);
  Tensor& t = c.tensors.at("fc1");
  REQUIRE(t.rows == 3);
  REQUIRE(t.cols == 6);
  float x = 1.0f;
  for (auto& v : t.data) v = x++;

  TokenizedModel tm = tokenize(c, 4);
  REQUIRE(tm.count() == 6);
  for (int r = 0; r < 3; ++r) {
    // first slice carries entries 0..3 of the row
    for (int i = 0; i < 4; ++i) {
      CHECK(tm.tokens(2 * r, i) == doctest::Approx(float(6 * r + i + 1)));
      CHECK(tm.mask(2 * r, i) == 1.0f);
    }
    // second slice: 2 signal entries, 2 padded
    CHECK(tm.tokens(2 * r + 1, 0) == doctest::Approx(float(6 * r + 5)));
    CHECK(tm.tokens(2 * r + 1, 1) == doctest::Approx(float(6 * r + 6)));
    CHECK(tm.mask(2 * r + 1, 0) == 1.0f);
    CHECK(tm.mask(2 * r + 1, 1) == 1.0f);
    CHECK(tm.mask(2 * r + 1, 2) == 0.0f);
    CHECK(tm.mask(2 * r + 1, 3) == 0.0f);
    CHECK(tm.tokens(2 * r + 1, 2) == 0.0f);
    CHECK(tm.tokens(2 * r + 1, 3) == 0.0f);
  }
  // position triples: n == row index, l == 0, k counts within the layer
  for (int n = 0; n < 6; ++n) {
    CHECK(tm.positions(n, 0) == n);
    CHECK(tm.positions(n, 1) == 0);
    CHECK(tm.positions(n, 2) == n);
  }
}

TEST_CASE("d_t equal to row length gives one all-signal token per row") {
  auto program = std::make_shared<ExecProgram>(make_mlp({5, 3}));
  ModelCheckpoint c = make_random_checkpoint(program, 3);
  TokenizedModel tm = tokenize(c, 6);
  CHECK(tm.count() == 3);
  CHECK(tm.mask.minCoeff() == 1.0f);
}

TEST_CASE("reference token sizes from the shipped configs") {
  // CNN track tokenizes at 289, residual track at 288.
  SequenceLayout cnn = sequence_layout(make_small_cnn().descriptor(), 289);
  CHECK(cnn.total_tokens == 48);  // sequence length ~50
  for (const auto& l : cnn.layers) CHECK(l.tokens_per_row == 1);

  SequenceLayout res = sequence_layout(make_mini_resnet().descriptor(), 288);
  // 3x3 convs over 32 channels give rows of exactly 288
  const auto& conv2b = res.layers[8];
  CHECK(conv2b.name == "conv2b");
  CHECK(conv2b.row_len == 288);
  CHECK(conv2b.tokens_per_row == 1);
}

TEST_CASE("empty descriptor lays out zero tokens") {
  ArchitectureDescriptor arch = make_descriptor({});
  SequenceLayout layout = sequence_layout(arch, 16);
  CHECK(layout.total_tokens == 0);
}

TEST_CASE("layout token counts match brute-force recount from tokenize") {
  ModelCheckpoint c = random_ckpt("mini_resnet", 11);
  SequenceLayout layout = sequence_layout(c.arch, 37);
  TokenizedModel tm = tokenize(c, 37);
  CHECK(layout.total_tokens == tm.count());
  int expected = 0;
  for (const auto& l : c.arch.layers)
    expected += l.row_count() * ((l.row_len() + 36) / 37);
  CHECK(layout.total_tokens == expected);
  // positions reconstructible from layout alone
  MatPos pos = layout.positions();
  CHECK((pos - tm.positions).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("round-trip is bit-exact for both reference architectures") {
  for (const char* family : {"small_cnn", "mini_resnet"}) {
    for (uint64_t seed : {1u, 2u}) {
      ModelCheckpoint c = random_ckpt(family, seed);
      int d_t = std::string(family) == "small_cnn" ? 289 : 288;
      TokenizedModel tm = tokenize(c, d_t);
      ModelCheckpoint back = detokenize(tm, c.program);
      CHECK(tensors_equal(back, c));
    }
  }
}

TEST_CASE("batchnorm tokenizes as gamma row plus beta row and round-trips") {
  ModelCheckpoint c = random_ckpt("mini_resnet", 5);
  Tensor& bn = c.tensors.at("bn1a");
  for (int i = 0; i < bn.cols; ++i) {
    bn.at(0, i) = 1.0f + 0.01f * float(i);  // gamma
    bn.at(1, i) = -0.5f + 0.02f * float(i); // beta
  }
  TokenizedModel tm = tokenize(c, 7);
  SequenceLayout layout = sequence_layout(c.arch, 7);
  const LayerLayout* ll = nullptr;
  for (const auto& l : layout.layers)
    if (l.name == "bn1a") ll = &l;
  REQUIRE(ll != nullptr);
  CHECK(ll->rows == 2);
  CHECK(ll->row_len == 16);
  CHECK(ll->tokens_per_row == 3);
  // gamma row occupies the first tokens_per_row tokens of the layer
  CHECK(tm.tokens(ll->token_offset, 0) == doctest::Approx(1.0f));
  ModelCheckpoint back = detokenize(tm, c.program);
  CHECK(tensors_equal(back, c));
}

TEST_CASE("perturbing only masked entries never changes detokenize output") {
  ModelCheckpoint c = random_ckpt("small_cnn", 9);
  TokenizedModel tm = tokenize(c, 40);
  TokenizedModel tampered = tm;
  int tampered_count = 0;
  for (Eigen::Index r = 0; r < tm.tokens.rows(); ++r)
    for (Eigen::Index k = 0; k < tm.tokens.cols(); ++k)
      if (tm.mask(r, k) == 0.0f) {
        tampered.tokens(r, k) = 99.0f;
        ++tampered_count;
      }
  REQUIRE(tampered_count > 0);
  ModelCheckpoint back = detokenize(tampered, c.program);
  CHECK(tensors_equal(back, c));
}

TEST_CASE("inconsistent position triples are rejected") {
  ModelCheckpoint c = random_ckpt("small_cnn", 13);
  TokenizedModel tm = tokenize(c, 64);
  tm.positions(3, 1) += 1;
  try {
    detokenize(tm, c.program);
    FAIL("expected validation error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::validation);
  }
}

TEST_CASE("mask invariants: at least one signal entry, k resets per layer") {
  ModelCheckpoint c = random_ckpt("mini_resnet", 17);
  TokenizedModel tm = tokenize(c, 50);
  int prev_l = -1;
  for (Eigen::Index n = 0; n < tm.count(); ++n) {
    CHECK(tm.mask.row(n).sum() >= 1.0f);
    int l = tm.positions(n, 1);
    CHECK(l >= prev_l);  // nondecreasing
    if (l != prev_l) CHECK(tm.positions(n, 2) == 0);
    prev_l = l;
  }
}
