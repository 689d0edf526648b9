// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "weightgen.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "core/baselines.hpp"
#include "core/evalharness.hpp"
#include "core/pipeline.hpp"
#include "core/sampler.hpp"
#include "core/trainer.hpp"
#include "core/zoogen.hpp"

using namespace weightgen;

namespace {

thread_local std::string g_last_error;

wg_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return WG_ERR_VALIDATION;
    case ErrorCode::parse: return WG_ERR_PARSE;
    case ErrorCode::integrity: return WG_ERR_INTEGRITY;
    case ErrorCode::storage: return WG_ERR_STORAGE;
    case ErrorCode::config: return WG_ERR_CONFIG;
    case ErrorCode::incompatible: return WG_ERR_INCOMPATIBLE;
    case ErrorCode::runtime: return WG_ERR_RUNTIME;
    case ErrorCode::invalid_argument: return WG_ERR_INVALID_ARGUMENT;
  }
  return WG_ERR_RUNTIME;
}

template <typename Fn>
wg_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return WG_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return WG_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return WG_ERR_RUNTIME;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

wg_status require(bool cond, const char* message) {
  if (cond) return WG_OK;
  g_last_error = message;
  return WG_ERR_INVALID_ARGUMENT;
}

std::string read_file(const char* path) {
  std::ifstream f(path);
  if (!f) raise(ErrorCode::storage, std::string("cannot open ") + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

struct wg_zoo {
  Zoo zoo;
};

struct wg_checkpoint {
  ModelCheckpoint ckpt;
};

extern "C" {

const char* wg_version(void) { return "weightgen 1.0.0"; }

const char* wg_last_error(void) { return g_last_error.c_str(); }

void wg_string_free(char* s) { std::free(s); }

wg_status wg_zoo_open(const char* dir, wg_zoo** out) {
  if (require(dir && out, "wg_zoo_open: null argument") != WG_OK) return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] { *out = new wg_zoo{read_zoo(dir)}; });
}

void wg_zoo_close(wg_zoo* zoo) { delete zoo; }

int wg_zoo_size(const wg_zoo* zoo) { return zoo ? int(zoo->zoo.size()) : 0; }

wg_status wg_zoo_id(const wg_zoo* zoo, char** out) {
  if (require(zoo && out, "wg_zoo_id: null argument") != WG_OK) return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] { *out = dup_string(zoo->zoo.manifest().zoo_id); });
}

wg_status wg_zoo_dataset_tag(const wg_zoo* zoo, char** out) {
  if (require(zoo && out, "wg_zoo_dataset_tag: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] { *out = dup_string(zoo->zoo.manifest().dataset_tag); });
}

wg_status wg_zoo_checkpoint_id(const wg_zoo* zoo, int index, char** out) {
  if (require(zoo && out, "wg_zoo_checkpoint_id: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    if (index < 0 || size_t(index) >= zoo->zoo.size())
      raise(ErrorCode::invalid_argument, "checkpoint index out of range");
    *out = dup_string(zoo->zoo.manifest().checkpoints[size_t(index)].id);
  });
}

wg_status wg_zoo_checkpoint_split(const wg_zoo* zoo, int index, char** out) {
  if (require(zoo && out, "wg_zoo_checkpoint_split: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    if (index < 0 || size_t(index) >= zoo->zoo.size())
      raise(ErrorCode::invalid_argument, "checkpoint index out of range");
    *out = dup_string(split_name(zoo->zoo.manifest().checkpoints[size_t(index)].split));
  });
}

wg_status wg_zoo_checkpoint_epoch(const wg_zoo* zoo, int index, int* out) {
  if (require(zoo && out, "wg_zoo_checkpoint_epoch: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    if (index < 0 || size_t(index) >= zoo->zoo.size())
      raise(ErrorCode::invalid_argument, "checkpoint index out of range");
    *out = zoo->zoo.manifest().checkpoints[size_t(index)].meta.epoch;
  });
}

wg_status wg_zoo_load_checkpoint(const wg_zoo* zoo, int index, wg_checkpoint** out) {
  if (require(zoo && out, "wg_zoo_load_checkpoint: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] { *out = new wg_checkpoint{zoo->zoo.load(size_t(index))}; });
}

void wg_checkpoint_close(wg_checkpoint* ckpt) { delete ckpt; }

int wg_checkpoint_num_layers(const wg_checkpoint* ckpt) {
  return ckpt ? int(ckpt->ckpt.arch.layers.size()) : 0;
}

wg_status wg_checkpoint_layer_name(const wg_checkpoint* ckpt, int layer, char** out) {
  if (require(ckpt && out, "wg_checkpoint_layer_name: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    if (layer < 0 || size_t(layer) >= ckpt->ckpt.arch.layers.size())
      raise(ErrorCode::invalid_argument, "layer index out of range");
    *out = dup_string(ckpt->ckpt.arch.layers[size_t(layer)].name);
  });
}

wg_status wg_checkpoint_layer_shape(const wg_checkpoint* ckpt, int layer, int* rows, int* cols) {
  if (require(ckpt && rows && cols, "wg_checkpoint_layer_shape: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    if (layer < 0 || size_t(layer) >= ckpt->ckpt.arch.layers.size())
      raise(ErrorCode::invalid_argument, "layer index out of range");
    const LayerSpec& l = ckpt->ckpt.arch.layers[size_t(layer)];
    *rows = l.tensor_rows();
    *cols = l.tensor_cols();
  });
}

wg_status wg_checkpoint_layer_data(const wg_checkpoint* ckpt, int layer, float* dst,
                                   size_t capacity) {
  if (require(ckpt && dst, "wg_checkpoint_layer_data: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    if (layer < 0 || size_t(layer) >= ckpt->ckpt.arch.layers.size())
      raise(ErrorCode::invalid_argument, "layer index out of range");
    const LayerSpec& l = ckpt->ckpt.arch.layers[size_t(layer)];
    const Tensor& t = ckpt->ckpt.tensors.at(l.name);
    if (capacity < t.count())
      raise(ErrorCode::invalid_argument, "destination capacity " + std::to_string(capacity) +
                                             " below element count " + std::to_string(t.count()));
    std::memcpy(dst, t.data.data(), t.count() * sizeof(float));
  });
}

wg_status wg_zoo_merge(const char* const* dirs, int n_dirs, const char* out_dir) {
  if (require(dirs && out_dir && n_dirs > 0, "wg_zoo_merge: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    std::vector<Zoo> zoos;
    for (int i = 0; i < n_dirs; ++i) zoos.push_back(read_zoo(dirs[i]));
    write_merged_zoo(out_dir, merge_zoos(zoos));
  });
}

wg_status wg_layout_json(const char* zoo_dir, int token_size, char** out_json) {
  if (require(zoo_dir && out_json, "wg_layout_json: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    Zoo zoo = read_zoo(zoo_dir);
    if (zoo.manifest().archs.empty()) raise(ErrorCode::validation, "zoo has no architectures");
    *out_json = dup_string(layout_to_json(sequence_layout(zoo.manifest().archs[0], token_size)));
  });
}

wg_status wg_zoogen_run(const char* spec_path, const char* data_root, const char* out_dir,
                        int64_t seed, int workers) {
  if (require(spec_path && out_dir, "wg_zoogen_run: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    PopulationSpec spec = PopulationSpec::from_json(read_file(spec_path));
    if (workers > 0) spec.workers = workers;
    train_population(spec, data_root ? data_root : "", out_dir, uint64_t(seed));
  });
}

wg_status wg_train_run(const char* config_path, const char* const* zoo_dirs, int n_zoos,
                       const char* out_dir, int64_t seed) {
  if (require(config_path && zoo_dirs && out_dir && n_zoos > 0, "wg_train_run: null argument") !=
      WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    SaneConfig config = SaneConfig::from_json(read_file(config_path));
    std::vector<Zoo> zoos;
    for (int i = 0; i < n_zoos; ++i) zoos.push_back(read_zoo(zoo_dirs[i]));
    train_sane(config, zoos, out_dir, uint64_t(seed));
  });
}

wg_status wg_sample_run(const char* sane_dir, const char* anchor_zoo_dir, const char* task_tag,
                        const char* data_root, const char* spec_path, const char* out_dir,
                        int64_t seed) {
  if (require(sane_dir && anchor_zoo_dir && out_dir, "wg_sample_run: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    SaneModel model = SaneModel::load(sane_dir);
    Zoo anchor_zoo = read_zoo(anchor_zoo_dir);
    SampleSpec spec;
    if (spec_path) spec = SampleSpec::from_json(read_file(spec_path));
    std::string task = task_tag && *task_tag ? task_tag : anchor_zoo.manifest().dataset_tag;
    run_sampling(model, anchor_zoo, task, data_root ? data_root : "", spec, out_dir,
                 uint64_t(seed));
  });
}

wg_status wg_soup_run(const char* zoo_dir, const char* ks_csv, int align, const char* task_tag,
                      const char* data_root, int repeats, const char* report_path, int64_t seed) {
  if (require(zoo_dir && ks_csv && report_path, "wg_soup_run: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    Zoo zoo = read_zoo(zoo_dir);
    std::vector<int> ks;
    std::stringstream ss(ks_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) ks.push_back(std::stoi(item));
    }
    if (ks.empty()) raise(ErrorCode::invalid_argument, "empty soup size list");
    std::string task = task_tag && *task_tag ? task_tag : zoo.manifest().dataset_tag;
    Dataset test = resolve_dataset(task, data_root ? data_root : "", Split::test, 0,
                                   uint64_t(seed));
    Dataset train = resolve_dataset(task, data_root ? data_root : "", Split::train, 0,
                                    uint64_t(seed));
    SoupCurve curve =
        soup_curve(zoo, ks, align != 0, test, train, repeats > 0 ? repeats : 5, uint64_t(seed));
    std::ofstream f(report_path, std::ios::trunc);
    if (!f) raise(ErrorCode::storage, std::string("cannot write ") + report_path);
    f << soup_curve_to_json(curve, align != 0);
  });
}

wg_status wg_rebasin_run(const char* zoo_dir, const char* reference_id, const char* target_id,
                         const char* out_dir) {
  if (require(zoo_dir && reference_id && target_id && out_dir, "wg_rebasin_run: null argument") !=
      WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    Zoo zoo = read_zoo(zoo_dir);
    ModelCheckpoint reference = zoo.load_by_id(reference_id);
    ModelCheckpoint target = zoo.load_by_id(target_id);
    RebasinResult result = rebasin_align(reference, target);

    std::vector<ModelCheckpoint> out_models = {std::move(result.aligned)};
    std::vector<std::string> keys = {"aligned"};
    ZooManifest man =
        build_manifest("aligned", zoo.manifest().dataset_tag,
                       std::make_shared<ExecProgram>(*out_models[0].program), out_models, keys, 0);
    write_zoo(out_dir, man, out_models);

    nlohmann::json j;
    j["reference"] = reference_id;
    j["target"] = target_id;
    j["sweeps"] = result.sweeps;
    j["l2_history"] = result.l2_history;
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : result.groups)
      groups.push_back({{"layers", g.layers}, {"perm", g.perm}});
    j["groups"] = std::move(groups);
    std::ofstream f(std::filesystem::path(out_dir) / "permutations.json", std::ios::trunc);
    f << j.dump(2) << "\n";
  });
}

wg_status wg_eval_run(const char* models_dir, const char* suite_path, const char* data_root,
                      const char* report_path, int64_t seed) {
  if (require(models_dir && suite_path && report_path, "wg_eval_run: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    Zoo zoo = read_zoo(models_dir);
    TaskSuite suite = TaskSuite::from_json(read_file(suite_path));
    std::vector<ModelCheckpoint> models;
    for (size_t i = 0; i < zoo.size(); ++i) models.push_back(zoo.load(i));
    EvalReport report = evaluate_models(models, suite, data_root ? data_root : "",
                                        uint64_t(seed));
    report.model_id = models_dir;
    std::ofstream f(report_path, std::ios::trunc);
    if (!f) raise(ErrorCode::storage, std::string("cannot write ") + report_path);
    f << report.to_json();
  });
}

wg_status wg_report_render(const char* report_json_path, const char* format, char** out) {
  if (require(report_json_path && format && out, "wg_report_render: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    EvalReport report = EvalReport::from_json(read_file(report_json_path));
    std::string fmt = format;
    if (fmt == "text")
      *out = dup_string(render_report_text(report));
    else if (fmt == "json")
      *out = dup_string(report.to_json());
    else
      raise(ErrorCode::invalid_argument, "format must be text or json");
  });
}

wg_status wg_pipeline_run(const char* config_path, const char* data_root, int64_t seed,
                          int* stages_run, int* stages_skipped) {
  if (require(config_path, "wg_pipeline_run: null argument") != WG_OK)
    return WG_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    PipelineOptions options;
    options.config_path = config_path;
    if (data_root) options.data_root_override = data_root;
    options.seed_override = seed;
    PipelineOutcome outcome = run_pipeline(options);
    if (stages_run) *stages_run = outcome.stages_run;
    if (stages_skipped) *stages_skipped = outcome.stages_skipped;
  });
}

}  // extern "C"
