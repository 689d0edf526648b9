// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_ZOO_HPP
#define WEIGHTGEN_CORE_ZOO_HPP

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "core/checkpoint.hpp"

namespace weightgen {

enum class Split { train, val, test };
const char* split_name(Split s);
Split split_from_name(const std::string& s);

// Byte offset + float count of one tensor blob inside a checkpoint file.
struct LayerBlob {
  std::string name;
  uint64_t offset = 0;
  uint64_t count = 0;
};

struct ZooEntry {
  std::string id;         // unique within the zoo
  std::string model_key;  // lineage id; epoch snapshots of one model share it
  std::string file;       // checkpoint file, relative to its source directory
  std::string source_dir; // empty = the zoo's own directory (set by merges)
  Split split = Split::train;
  int arch_index = 0;
  CheckpointMeta meta;
  std::vector<LayerBlob> layers;    // descriptor layer order
  std::vector<LayerBlob> bn_blobs;  // running stats: mean then var per entry
};

struct ZooManifest {
  std::string zoo_id;
  std::string dataset_tag;
  // 0 = unspecified. Declared by producers that pin a tokenizer configuration;
  // merging zoos with conflicting declared sizes is an error.
  int token_size = 0;
  std::vector<std::shared_ptr<const ExecProgram>> programs;
  std::vector<ArchitectureDescriptor> archs;  // parallel to programs
  std::vector<ZooEntry> checkpoints;

  std::vector<size_t> indices_of_split(Split s) const;
};

// Deterministic [70,15,15] split over distinct model keys: keys are ordered
// by a seeded hash (stable under zoo regeneration, independent of list
// position) and assigned by rounded quota, so e.g. 200 checkpoints from 40
// models land exactly at 140/30/30.
void assign_splits(ZooManifest& manifest, uint64_t seed);

// Assembles a manifest for one program family; entries get ids
// "<model_key>_e<epoch>" and splits from assign_splits.
ZooManifest build_manifest(const std::string& zoo_id, const std::string& dataset_tag,
                           std::shared_ptr<const ExecProgram> program,
                           const std::vector<ModelCheckpoint>& ckpts,
                           const std::vector<std::string>& model_keys, uint64_t seed);

// Writes manifest.json plus one raw little-endian float32 .bin per checkpoint.
// Returns the directory path. read_zoo(write_zoo(...)) round-trips bit-exactly.
std::filesystem::path write_zoo(const std::filesystem::path& dir, const ZooManifest& manifest,
                                const std::vector<ModelCheckpoint>& ckpts);

// Lazily-loading zoo reader. Checkpoints load individually.
class Zoo {
public:
  Zoo() = default;
  Zoo(std::filesystem::path dir, ZooManifest manifest)
      : dir_(std::move(dir)), manifest_(std::move(manifest)) {}

  const ZooManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  size_t size() const { return manifest_.checkpoints.size(); }

  ModelCheckpoint load(size_t index) const;
  ModelCheckpoint load_by_id(const std::string& id) const;

private:
  std::filesystem::path dir_;
  ZooManifest manifest_;
};

Zoo read_zoo(const std::filesystem::path& dir);

// Union manifest; source split assignments and per-checkpoint dataset tags
// are preserved, zoo_id derives from the sorted source ids. Entries keep
// pointing at their source directories.
ZooManifest merge_zoos(const std::vector<Zoo>& zoos);

// Materializes a manifest (typically a merge result) into its own directory,
// copying checkpoint payloads.
std::filesystem::path write_merged_zoo(const std::filesystem::path& dir,
                                       const ZooManifest& merged);

std::string manifest_to_json(const ZooManifest& m);

}  // namespace weightgen

#endif
