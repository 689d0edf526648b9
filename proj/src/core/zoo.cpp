// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/zoo.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "core/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "zoo files are little-endian float32; big-endian hosts unsupported");

namespace weightgen {

using nlohmann::json;
namespace fs = std::filesystem;

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  raise(ErrorCode::parse, "unknown split '" + s + "'");
}

std::vector<size_t> ZooManifest::indices_of_split(Split s) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < checkpoints.size(); ++i)
    if (checkpoints[i].split == s) out.push_back(i);
  return out;
}

void assign_splits(ZooManifest& manifest, uint64_t seed) {
  std::set<std::string> keys;
  for (const auto& e : manifest.checkpoints) keys.insert(e.model_key);
  std::vector<std::pair<uint64_t, std::string>> ranked;
  for (const auto& k : keys) {
    uint64_t h = fnv1a64(manifest.zoo_id);
    h = fnv1a64(&seed, sizeof seed, h);
    h = fnv1a64(k, h);
    ranked.emplace_back(h, k);
  }
  std::sort(ranked.begin(), ranked.end());
  size_t m = ranked.size();
  size_t n_train = size_t(std::llround(0.70 * double(m)));
  size_t n_val = size_t(std::llround(0.15 * double(m)));
  if (n_train + n_val > m) n_val = m - n_train;
  std::map<std::string, Split> by_key;
  for (size_t i = 0; i < m; ++i) {
    Split s = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    by_key[ranked[i].second] = s;
  }
  for (auto& e : manifest.checkpoints) e.split = by_key.at(e.model_key);
}

namespace {

std::vector<LayerBlob> layout_blobs(const ArchitectureDescriptor& arch, uint64_t& offset) {
  std::vector<LayerBlob> blobs;
  for (const auto& l : arch.layers) {
    LayerBlob b;
    b.name = l.name;
    b.offset = offset;
    b.count = uint64_t(l.tensor_rows()) * uint64_t(l.tensor_cols());
    offset += b.count * sizeof(float);
    blobs.push_back(std::move(b));
  }
  return blobs;
}

std::vector<LayerBlob> bn_blobs_for(const ArchitectureDescriptor& arch, uint64_t& offset) {
  std::vector<LayerBlob> blobs;
  for (const auto& l : arch.layers) {
    if (l.kind != LayerKind::batchnorm) continue;
    LayerBlob b;
    b.name = l.name;
    b.offset = offset;
    b.count = uint64_t(2) * l.out_dim;  // mean row then var row
    offset += b.count * sizeof(float);
    blobs.push_back(std::move(b));
  }
  return blobs;
}

}  // namespace

ZooManifest build_manifest(const std::string& zoo_id, const std::string& dataset_tag,
                           std::shared_ptr<const ExecProgram> program,
                           const std::vector<ModelCheckpoint>& ckpts,
                           const std::vector<std::string>& model_keys, uint64_t seed) {
  if (ckpts.size() != model_keys.size())
    raise(ErrorCode::invalid_argument, "checkpoint/model_key count mismatch");
  ZooManifest m;
  m.zoo_id = zoo_id;
  m.dataset_tag = dataset_tag;
  m.archs.push_back(program->descriptor());
  m.programs.push_back(std::move(program));
  for (size_t i = 0; i < ckpts.size(); ++i) {
    ZooEntry e;
    e.model_key = model_keys[i];
    e.id = model_keys[i] + "_e" + std::to_string(ckpts[i].meta.epoch);
    e.file = e.id + ".bin";
    e.arch_index = 0;
    e.meta = ckpts[i].meta;
    uint64_t offset = 0;
    e.layers = layout_blobs(m.archs[0], offset);
    e.bn_blobs = bn_blobs_for(m.archs[0], offset);
    m.checkpoints.push_back(std::move(e));
  }
  assign_splits(m, seed);
  return m;
}

std::string manifest_to_json(const ZooManifest& m) {
  json j;
  j["format"] = "weightgen-zoo/1";
  j["zoo_id"] = m.zoo_id;
  j["dataset_tag"] = m.dataset_tag;
  if (m.token_size > 0) j["token_size"] = m.token_size;
  json archs = json::array();
  for (const auto& p : m.programs) archs.push_back(json::parse(program_to_json(*p)));
  j["archs"] = std::move(archs);
  json cks = json::array();
  for (const auto& e : m.checkpoints) {
    json je;
    je["id"] = e.id;
    je["model_key"] = e.model_key;
    je["file"] = e.file;
    if (!e.source_dir.empty()) je["source_dir"] = e.source_dir;
    je["split"] = split_name(e.split);
    je["arch"] = e.arch_index;
    json meta;
    meta["image_dataset"] = e.meta.image_dataset;
    meta["epoch"] = e.meta.epoch;
    meta["seed"] = e.meta.seed;
    if (e.meta.test_accuracy)
      meta["test_accuracy"] = *e.meta.test_accuracy;
    else
      meta["test_accuracy"] = nullptr;
    je["meta"] = std::move(meta);
    json layers = json::array();
    for (const auto& b : e.layers)
      layers.push_back({{"name", b.name}, {"offset", b.offset}, {"count", b.count}});
    je["layers"] = std::move(layers);
    json bns = json::array();
    for (const auto& b : e.bn_blobs)
      bns.push_back({{"name", b.name}, {"offset", b.offset}, {"count", b.count}});
    je["bn_stats"] = std::move(bns);
    cks.push_back(std::move(je));
  }
  j["checkpoints"] = std::move(cks);
  return j.dump(2) + "\n";
}

namespace {

ZooManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("manifest.json: ") + e.what());
  }
  ZooManifest m;
  try {
    if (j.at("format").get<std::string>() != "weightgen-zoo/1")
      raise(ErrorCode::parse, "manifest.json: unsupported format field");
    m.zoo_id = j.at("zoo_id").get<std::string>();
    m.dataset_tag = j.at("dataset_tag").get<std::string>();
    m.token_size = j.value("token_size", 0);
    for (const auto& ja : j.at("archs")) {
      auto prog = std::make_shared<ExecProgram>(program_from_json(ja.dump()));
      m.archs.push_back(prog->descriptor());
      m.programs.push_back(std::move(prog));
    }
    for (const auto& je : j.at("checkpoints")) {
      ZooEntry e;
      e.id = je.at("id").get<std::string>();
      e.model_key = je.at("model_key").get<std::string>();
      e.file = je.at("file").get<std::string>();
      e.source_dir = je.value("source_dir", std::string());
      e.split = split_from_name(je.at("split").get<std::string>());
      e.arch_index = je.at("arch").get<int>();
      if (e.arch_index < 0 || size_t(e.arch_index) >= m.archs.size())
        raise(ErrorCode::parse, "manifest.json: checkpoint '" + e.id + "': bad arch index");
      const auto& meta = je.at("meta");
      e.meta.image_dataset = meta.at("image_dataset").get<std::string>();
      e.meta.epoch = meta.at("epoch").get<int>();
      e.meta.seed = meta.at("seed").get<int64_t>();
      if (!meta.at("test_accuracy").is_null())
        e.meta.test_accuracy = meta.at("test_accuracy").get<double>();
      for (const auto& jb : je.at("layers"))
        e.layers.push_back({jb.at("name").get<std::string>(), jb.at("offset").get<uint64_t>(),
                            jb.at("count").get<uint64_t>()});
      for (const auto& jb : je.at("bn_stats"))
        e.bn_blobs.push_back({jb.at("name").get<std::string>(), jb.at("offset").get<uint64_t>(),
                              jb.at("count").get<uint64_t>()});
      m.checkpoints.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("manifest.json: missing or ill-typed field: ") + e.what());
  }
  return m;
}

uint64_t entry_byte_size(const ZooEntry& e) {
  uint64_t end = 0;
  for (const auto& b : e.layers) end = std::max(end, b.offset + b.count * sizeof(float));
  for (const auto& b : e.bn_blobs) end = std::max(end, b.offset + b.count * sizeof(float));
  return end;
}

void write_checkpoint_bin(const fs::path& path, const ZooEntry& e, const ModelCheckpoint& ckpt) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise(ErrorCode::storage, "cannot write " + path.string());
  for (const auto& b : e.layers) {
    const Tensor& t = ckpt.tensors.at(b.name);
    if (t.count() != b.count)
      raise(ErrorCode::validation, "layer '" + b.name + "': element count mismatch");
    f.seekp(std::streamoff(b.offset));
    f.write(reinterpret_cast<const char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(float)));
  }
  for (const auto& b : e.bn_blobs) {
    const BnStats& st = ckpt.bn_stats.at(b.name);
    f.seekp(std::streamoff(b.offset));
    f.write(reinterpret_cast<const char*>(st.mean.data()),
            std::streamsize(st.mean.size() * sizeof(float)));
    f.write(reinterpret_cast<const char*>(st.var.data()),
            std::streamsize(st.var.size() * sizeof(float)));
  }
  if (!f) raise(ErrorCode::storage, "short write to " + path.string());
}

}  // namespace

fs::path write_zoo(const fs::path& dir, const ZooManifest& manifest,
                   const std::vector<ModelCheckpoint>& ckpts) {
  if (manifest.checkpoints.size() != ckpts.size())
    raise(ErrorCode::invalid_argument, "manifest/checkpoint count mismatch");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorCode::storage, "cannot create " + dir.string() + ": " + ec.message());
  for (size_t i = 0; i < ckpts.size(); ++i) {
    const ZooEntry& e = manifest.checkpoints[i];
    const ModelCheckpoint& c = ckpts[i];
    const ArchitectureDescriptor& arch = manifest.archs.at(e.arch_index);
    if (c.arch.arch_id != arch.arch_id)
      raise(ErrorCode::validation, "checkpoint '" + e.id + "' does not match manifest arch");
    c.validate();
    write_checkpoint_bin(dir / e.file, e, c);
  }
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) raise(ErrorCode::storage, "cannot write manifest.json");
  mf << manifest_to_json(manifest);
  if (!mf) raise(ErrorCode::storage, "short write to manifest.json");
  return dir;
}

Zoo read_zoo(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) raise(ErrorCode::storage, "cannot open " + (dir / "manifest.json").string());
  std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
  ZooManifest m = manifest_from_json(text);
  for (const auto& e : m.checkpoints) {
    fs::path base = e.source_dir.empty() ? dir : fs::path(e.source_dir);
    fs::path p = base / e.file;
    std::error_code ec;
    uint64_t actual = fs::file_size(p, ec);
    if (ec)
      raise(ErrorCode::integrity, "checkpoint file missing: " + p.string());
    uint64_t expected = entry_byte_size(e);
    if (actual < expected)
      raise(ErrorCode::integrity, "checkpoint file " + p.string() + " truncated: expected " +
                                      std::to_string(expected) + " bytes, found " +
                                      std::to_string(actual));
  }
  return Zoo(dir, std::move(m));
}

ModelCheckpoint Zoo::load(size_t index) const {
  if (index >= manifest_.checkpoints.size())
    raise(ErrorCode::invalid_argument, "checkpoint index out of range");
  const ZooEntry& e = manifest_.checkpoints[index];
  fs::path base = e.source_dir.empty() ? dir_ : fs::path(e.source_dir);
  fs::path p = base / e.file;
  std::ifstream f(p, std::ios::binary);
  if (!f) raise(ErrorCode::integrity, "checkpoint file missing: " + p.string());

  ModelCheckpoint ckpt = make_empty_checkpoint(manifest_.programs.at(e.arch_index));
  ckpt.meta = e.meta;
  for (const auto& b : e.layers) {
    Tensor& t = ckpt.tensors.at(b.name);
    if (t.count() != b.count)
      raise(ErrorCode::integrity, "layer '" + b.name + "': count mismatch in index");
    f.seekg(std::streamoff(b.offset));
    f.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(b.count * sizeof(float)));
    if (!f)
      raise(ErrorCode::integrity, "checkpoint file " + p.string() + " truncated reading '" +
                                      b.name + "'");
  }
  for (const auto& b : e.bn_blobs) {
    BnStats& st = ckpt.bn_stats.at(b.name);
    size_t ch = b.count / 2;
    st.mean.resize(ch);
    st.var.resize(ch);
    f.seekg(std::streamoff(b.offset));
    f.read(reinterpret_cast<char*>(st.mean.data()), std::streamsize(ch * sizeof(float)));
    f.read(reinterpret_cast<char*>(st.var.data()), std::streamsize(ch * sizeof(float)));
    if (!f)
      raise(ErrorCode::integrity, "checkpoint file " + p.string() + " truncated reading '" +
                                      b.name + "' stats");
  }
  ckpt.validate();
  return ckpt;
}

ModelCheckpoint Zoo::load_by_id(const std::string& id) const {
  for (size_t i = 0; i < manifest_.checkpoints.size(); ++i)
    if (manifest_.checkpoints[i].id == id) return load(i);
  raise(ErrorCode::invalid_argument, "no checkpoint with id '" + id + "'");
}

ZooManifest merge_zoos(const std::vector<Zoo>& zoos) {
  if (zoos.empty()) raise(ErrorCode::invalid_argument, "merge needs at least one zoo");
  int token_size = 0;
  for (const auto& z : zoos) {
    int ts = z.manifest().token_size;
    if (ts > 0) {
      if (token_size > 0 && token_size != ts)
        raise(ErrorCode::incompatible,
              "zoos declare conflicting token sizes " + std::to_string(token_size) + " vs " +
                  std::to_string(ts));
      token_size = ts;
    }
  }
  ZooManifest out;
  out.token_size = token_size;
  std::vector<std::string> ids;
  std::set<std::string> tags;
  for (const auto& z : zoos) ids.push_back(z.manifest().zoo_id);
  std::sort(ids.begin(), ids.end());
  for (size_t i = 0; i < ids.size(); ++i) out.zoo_id += (i ? "+" : "") + ids[i];

  for (const auto& z : zoos) {
    const ZooManifest& m = z.manifest();
    tags.insert(m.dataset_tag);
    std::vector<int> arch_map(m.archs.size());
    for (size_t a = 0; a < m.archs.size(); ++a) {
      int found = -1;
      for (size_t b = 0; b < out.archs.size(); ++b)
        if (out.archs[b].arch_id == m.archs[a].arch_id) found = int(b);
      if (found < 0) {
        found = int(out.archs.size());
        out.archs.push_back(m.archs[a]);
        out.programs.push_back(m.programs[a]);
      }
      arch_map[a] = found;
    }
    for (const auto& e : m.checkpoints) {
      ZooEntry copy = e;
      copy.arch_index = arch_map[e.arch_index];
      if (copy.source_dir.empty()) copy.source_dir = fs::absolute(z.dir()).string();
      copy.id = m.zoo_id + "/" + e.id;
      copy.model_key = m.zoo_id + "/" + e.model_key;
      out.checkpoints.push_back(std::move(copy));
    }
  }
  std::string tag;
  for (const auto& t : tags) tag += (tag.empty() ? "" : "+") + t;
  out.dataset_tag = tag;
  return out;
}

fs::path write_merged_zoo(const fs::path& dir, const ZooManifest& merged) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorCode::storage, "cannot create " + dir.string() + ": " + ec.message());
  ZooManifest local = merged;
  for (size_t i = 0; i < local.checkpoints.size(); ++i) {
    ZooEntry& e = local.checkpoints[i];
    fs::path src = (e.source_dir.empty() ? dir : fs::path(e.source_dir)) / e.file;
    std::string flat = e.id;
    std::replace(flat.begin(), flat.end(), '/', '_');
    fs::path dst = dir / (flat + ".bin");
    fs::copy_file(src, dst, fs::copy_options::overwrite_existing, ec);
    if (ec) raise(ErrorCode::storage, "cannot copy " + src.string() + ": " + ec.message());
    e.file = dst.filename().string();
    e.source_dir.clear();
  }
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) raise(ErrorCode::storage, "cannot write manifest.json");
  mf << manifest_to_json(local);
  return dir;
}

}  // namespace weightgen
