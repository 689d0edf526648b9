// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_DATASET_HPP
#define WEIGHTGEN_CORE_DATASET_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "core/zoo.hpp"

namespace weightgen {

// Labeled image set held in memory. Images are float32 in [0,1], laid out
// as n * (channels, height, width) row-major.
struct Dataset {
  std::string tag;
  int channels = 1;
  int height = 0;
  int width = 0;
  int num_classes = 0;
  int n = 0;
  std::vector<float> images;
  std::vector<int32_t> labels;

  const float* image(int i) const { return images.data() + size_t(i) * channels * height * width; }
  int image_size() const { return channels * height * width; }

  // Channel replication/averaging plus bilinear resize to the target shape.
  Dataset adapted(int channels, int height, int width) const;
};

// Built-in procedurally generated families, addressed as "synth:<family>":
//   digits-a  blocky bitmap digits, light-on-dark, rotated/shifted, noisy
//   digits-b  seven-segment digits, dark-on-light, distinct noise profile
//   digits-c  thin bitmap digits, light-on-dark
//   shapes    10 geometric shape classes
// All are 1x28x28 with 10 balanced classes, deterministic per
// (tag, split, seed, index).
bool is_synthetic_tag(const std::string& tag);
Dataset make_synthetic_dataset(const std::string& tag, Split split, int n, uint64_t seed);

// On-disk format: <dir>/dataset.json plus little-endian float32 image blobs
// and int32 label blobs per split.
void save_dataset_dir(const std::filesystem::path& dir, const std::string& tag,
                      const std::vector<std::pair<Split, Dataset>>& splits);
Dataset load_dataset_dir(const std::filesystem::path& dir, Split split);

// Synthetic tags resolve without touching the data root; anything else maps
// to <data_root>/<tag-with-':'-replaced>/dataset.json. n <= 0 means "all"
// for directory datasets and the per-split default for synthetic ones.
Dataset resolve_dataset(const std::string& tag, const std::string& data_root, Split split, int n,
                        uint64_t seed);

// Default synthetic sizes: train 1024, val 256, test 512.
int default_split_size(Split split);

}  // namespace weightgen

#endif
