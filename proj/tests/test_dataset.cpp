// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include <doctest.h>

#include <filesystem>

#include "core/dataset.hpp"

using namespace weightgen;
namespace fs = std::filesystem;

TEST_CASE("synthetic datasets are deterministic and balanced") {
  Dataset a = make_synthetic_dataset("synth:digits-a", Split::train, 100, 7);
  Dataset b = make_synthetic_dataset("synth:digits-a", Split::train, 100, 7);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  int counts[10] = {};
  for (int l : a.labels) counts[l]++;
  for (int c = 0; c < 10; ++c) CHECK(counts[c] == 10);

  Dataset c = make_synthetic_dataset("synth:digits-a", Split::train, 100, 8);
  CHECK(a.images != c.images);
  Dataset d = make_synthetic_dataset("synth:digits-a", Split::val, 100, 7);
  CHECK(a.images != d.images);
}

TEST_CASE("families are visually distinct and in range") {
  for (const char* tag : {"synth:digits-a", "synth:digits-b", "synth:digits-c", "synth:shapes"}) {
    Dataset ds = make_synthetic_dataset(tag, Split::train, 20, 1);
    CHECK(ds.n == 20);
    double mn = 1e9, mx = -1e9, mean = 0;
    for (float v : ds.images) {
      mn = std::min(mn, double(v));
      mx = std::max(mx, double(v));
      mean += v;
    }
    mean /= double(ds.images.size());
    CHECK(mn >= 0.0);
    CHECK(mx <= 1.0);
    CHECK(mean > 0.01);
    CHECK(mean < 0.99);
  }
  // polarity differs between the a and b digit families
  Dataset a = make_synthetic_dataset("synth:digits-a", Split::train, 50, 1);
  Dataset b = make_synthetic_dataset("synth:digits-b", Split::train, 50, 1);
  double mean_a = 0, mean_b = 0;
  for (float v : a.images) mean_a += v;
  for (float v : b.images) mean_b += v;
  CHECK(mean_a / a.images.size() < 0.5);  // light strokes on dark
  CHECK(mean_b / b.images.size() > 0.5);  // dark strokes on light
}

TEST_CASE("adapter replicates channels and resizes bilinearly") {
  Dataset ds = make_synthetic_dataset("synth:digits-a", Split::train, 4, 2);
  Dataset out = ds.adapted(3, 16, 16);
  CHECK(out.channels == 3);
  CHECK(out.height == 16);
  CHECK(out.n == 4);
  // replicated channels are identical
  const float* img = out.image(0);
  for (int i = 0; i < 16 * 16; ++i) {
    CHECK(img[i] == img[16 * 16 + i]);
    CHECK(img[i] == img[2 * 16 * 16 + i]);
  }
  // identity adaptation is a copy
  Dataset same = ds.adapted(1, 28, 28);
  CHECK(same.images == ds.images);
}

TEST_CASE("dataset directory round-trip") {
  fs::path root = fs::temp_directory_path() / "weightgen_test_dataset_root";
  fs::remove_all(root);
  fs::path dir = root / "mytag";
  Dataset train = make_synthetic_dataset("synth:digits-c", Split::train, 30, 3);
  Dataset test = make_synthetic_dataset("synth:digits-c", Split::test, 10, 3);
  save_dataset_dir(dir, "mytag", {{Split::train, train}, {Split::test, test}});
  Dataset back = load_dataset_dir(dir, Split::train);
  CHECK(back.images == train.images);
  CHECK(back.labels == train.labels);
  CHECK(back.n == 30);

  // resolve_dataset reads the same directory through a tag
  Dataset resolved = resolve_dataset("mytag", root.string(), Split::test, 0, 0);
  CHECK(resolved.images == test.images);
}

TEST_CASE("unknown synthetic family errors") {
  CHECK_THROWS_AS(make_synthetic_dataset("synth:nope", Split::train, 10, 1), Error);
}
