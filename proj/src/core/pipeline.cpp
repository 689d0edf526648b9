// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "core/baselines.hpp"
#include "core/evalharness.hpp"
#include "core/rng.hpp"
#include "core/sampler.hpp"
#include "core/trainer.hpp"
#include "core/zoogen.hpp"

namespace weightgen {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ${VAR} interpolation over every string leaf.
void interpolate_env(json& j) {
  if (j.is_string()) {
    std::string s = j.get<std::string>();
    size_t pos;
    while ((pos = s.find("${")) != std::string::npos) {
      size_t end = s.find('}', pos);
      if (end == std::string::npos) break;
      std::string var = s.substr(pos + 2, end - pos - 2);
      const char* val = std::getenv(var.c_str());
      s = s.substr(0, pos) + (val ? val : "") + s.substr(end + 1);
    }
    j = s;
  } else if (j.is_object() || j.is_array()) {
    for (auto& child : j) interpolate_env(child);
  }
}

struct StageDef {
  std::string kind;
  std::string name;
  json body;
};

struct PipelineConfig {
  uint64_t seed = 0;
  std::string data_root;
  fs::path out_root;
  int workers = 0;
  std::vector<StageDef> stages;
};

uint64_t stage_hash(const StageDef& stage, uint64_t seed, const std::string& data_root,
                    const std::map<std::string, uint64_t>& input_hashes) {
  uint64_t h = fnv1a64(stage.kind);
  h = fnv1a64(stage.name, h);
  h = fnv1a64(stage.body.dump(), h);
  h = fnv1a64(&seed, sizeof seed, h);
  h = fnv1a64(data_root, h);
  for (const auto& [name, ih] : input_hashes) {
    h = fnv1a64(name, h);
    h = fnv1a64(&ih, sizeof ih, h);
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Stage input references are names of earlier stages (preferred) or paths
// relative to the pipeline output root.
fs::path resolve_ref(const fs::path& out_root, const std::string& ref) {
  fs::path p(ref);
  if (p.is_absolute()) return p;
  return out_root / p;
}

}  // namespace

PipelineOutcome run_pipeline(const PipelineOptions& options) {
  std::ifstream cf(options.config_path);
  if (!cf) raise(ErrorCode::storage, "cannot open pipeline config " + options.config_path);
  json root;
  try {
    root = json::parse(cf);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("pipeline config: ") + e.what());
  }
  interpolate_env(root);

  PipelineConfig cfg;
  const char* env_seed = std::getenv("WEIGHTGEN_SEED");
  const char* env_root = std::getenv("WEIGHTGEN_DATA_ROOT");
  if (options.seed_override >= 0)
    cfg.seed = uint64_t(options.seed_override);
  else if (root.contains("seed"))
    cfg.seed = root.at("seed").get<uint64_t>();
  else if (env_seed)
    cfg.seed = uint64_t(std::strtoull(env_seed, nullptr, 10));
  if (!options.data_root_override.empty())
    cfg.data_root = options.data_root_override;
  else if (root.contains("data_root"))
    cfg.data_root = root.at("data_root").get<std::string>();
  else if (env_root)
    cfg.data_root = env_root;
  cfg.workers = root.value("workers", 0);

  fs::path config_dir = fs::absolute(options.config_path).parent_path();
  fs::path out_root = root.value("out_root", std::string("."));
  cfg.out_root = out_root.is_absolute() ? out_root : config_dir / out_root;

  // ---- validate the whole schema before any work starts ----
  if (!root.contains("stages") || !root.at("stages").is_array())
    raise(ErrorCode::config, "pipeline config: missing 'stages' array");
  std::set<std::string> known_names;
  for (const auto& js : root.at("stages")) {
    StageDef stage;
    try {
      stage.kind = js.at("stage").get<std::string>();
      stage.name = js.at("name").get<std::string>();
    } catch (const json::exception&) {
      raise(ErrorCode::config, "pipeline config: every stage needs 'stage' and 'name' fields");
    }
    if (known_names.count(stage.name))
      raise(ErrorCode::config, "pipeline config: duplicate stage name '" + stage.name + "'");
    known_names.insert(stage.name);
    stage.body = js;
    // eager schema validation per kind
    try {
      if (stage.kind == "zoogen") {
        PopulationSpec::from_json(js.at("spec").dump());
        (void)js.at("out").get<std::string>();
      } else if (stage.kind == "train") {
        SaneConfig::from_json(js.at("config").dump());
        if (!js.contains("zoos") || js.at("zoos").empty())
          raise(ErrorCode::config, "train stage needs 'zoos'");
        (void)js.at("out").get<std::string>();
      } else if (stage.kind == "sample") {
        if (js.contains("spec")) SampleSpec::from_json(js.at("spec").dump());
        (void)js.at("sane").get<std::string>();
        (void)js.at("anchor_zoo").get<std::string>();
        (void)js.at("out").get<std::string>();
      } else if (stage.kind == "eval") {
        TaskSuite::from_json(js.at("suite").dump());
        (void)js.at("models").get<std::string>();
        (void)js.at("out").get<std::string>();
      } else if (stage.kind == "soup") {
        (void)js.at("zoo").get<std::string>();
        (void)js.at("out").get<std::string>();
        if (js.contains("ks"))
          for (int k : js.at("ks").get<std::vector<int>>())
            if (k < 1) raise(ErrorCode::config, "soup: ks must be positive");
      } else if (stage.kind == "report") {
        (void)js.at("eval").get<std::string>();
        (void)js.at("out").get<std::string>();
        std::string format = js.value("format", "text");
        if (format != "text" && format != "json")
          raise(ErrorCode::config, "report: format must be text or json");
      } else {
        raise(ErrorCode::config, "unknown stage kind '" + stage.kind + "'");
      }
    } catch (const json::exception& e) {
      raise(ErrorCode::config,
            "stage '" + stage.name + "': schema violation: " + std::string(e.what()));
    } catch (const Error& e) {
      raise(e.code(), "stage '" + stage.name + "': " + std::string(e.what()));
    }
    cfg.stages.push_back(std::move(stage));
  }

  // ---- execute ----
  PipelineOutcome outcome;
  fs::create_directories(cfg.out_root / ".stamps");
  std::map<std::string, uint64_t> stamp_hash_of;  // completed stage -> hash

  for (const auto& stage : cfg.stages) {
    const json& js = stage.body;
    // collect input references for hashing
    std::map<std::string, uint64_t> inputs;
    auto note_input = [&](const std::string& ref) {
      auto it = stamp_hash_of.find(ref);
      if (it != stamp_hash_of.end()) inputs[ref] = it->second;
    };
    for (const char* key : {"sane", "anchor_zoo", "models", "zoo", "eval"})
      if (js.contains(key) && js.at(key).is_string()) note_input(js.at(key).get<std::string>());
    if (js.contains("zoos"))
      for (const auto& z : js.at("zoos")) note_input(z.get<std::string>());

    uint64_t seed = Rng::derive(cfg.seed, "stage", fnv1a64(stage.name));
    uint64_t h = stage_hash(stage, cfg.seed, cfg.data_root, inputs);
    fs::path stamp_path = cfg.out_root / ".stamps" / (stage.name + ".json");
    fs::path out_path = resolve_ref(cfg.out_root, js.at("out").get<std::string>());

    bool skip = false;
    if (fs::exists(stamp_path)) {
      try {
        std::ifstream sf(stamp_path);
        json stamp = json::parse(sf);
        if (stamp.value("hash", "") == hash_hex(h) && fs::exists(out_path)) skip = true;
      } catch (...) {
        skip = false;
      }
    }
    if (skip) {
      std::cout << "stage " << stage.name << ": skip (up-to-date)\n";
      stamp_hash_of[stage.name] = h;
      ++outcome.stages_skipped;
      continue;
    }

    std::cout << "stage " << stage.name << ": run\n";
    try {
      if (stage.kind == "zoogen") {
        PopulationSpec spec = PopulationSpec::from_json(js.at("spec").dump());
        if (spec.workers == 0) spec.workers = cfg.workers;
        train_population(spec, cfg.data_root, out_path, seed);
      } else if (stage.kind == "train") {
        SaneConfig config = SaneConfig::from_json(js.at("config").dump());
        std::vector<Zoo> zoos;
        for (const auto& z : js.at("zoos"))
          zoos.push_back(read_zoo(resolve_ref(cfg.out_root, z.get<std::string>())));
        train_sane(config, zoos, out_path, seed);
      } else if (stage.kind == "sample") {
        SaneModel model =
            SaneModel::load(resolve_ref(cfg.out_root, js.at("sane").get<std::string>()));
        Zoo anchor_zoo = read_zoo(resolve_ref(cfg.out_root, js.at("anchor_zoo").get<std::string>()));
        SampleSpec spec;
        if (js.contains("spec")) spec = SampleSpec::from_json(js.at("spec").dump());
        std::string task = js.value("task", anchor_zoo.manifest().dataset_tag);
        run_sampling(model, anchor_zoo, task, cfg.data_root, spec, out_path, seed);
      } else if (stage.kind == "eval") {
        Zoo models_zoo = read_zoo(resolve_ref(cfg.out_root, js.at("models").get<std::string>()));
        TaskSuite suite = TaskSuite::from_json(js.at("suite").dump());
        std::vector<ModelCheckpoint> models;
        for (size_t i = 0; i < models_zoo.size(); ++i) models.push_back(models_zoo.load(i));
        EvalReport report = evaluate_models(models, suite, cfg.data_root, seed);
        report.model_id = js.value("models", std::string());
        std::ofstream rf(out_path);
        if (!rf) raise(ErrorCode::storage, "cannot write " + out_path.string());
        rf << report.to_json();
      } else if (stage.kind == "soup") {
        Zoo zoo = read_zoo(resolve_ref(cfg.out_root, js.at("zoo").get<std::string>()));
        std::vector<int> ks = js.value("ks", std::vector<int>{1, 2, 4});
        bool align = js.value("align", false);
        int repeats = js.value("repeats", 5);
        std::string task = js.value("task", zoo.manifest().dataset_tag);
        Dataset test = resolve_dataset(task, cfg.data_root, Split::test, 0, seed);
        Dataset train = resolve_dataset(task, cfg.data_root, Split::train, 0, seed);
        SoupCurve curve = soup_curve(zoo, ks, align, test, train, repeats, seed);
        std::ofstream sf(out_path);
        if (!sf) raise(ErrorCode::storage, "cannot write " + out_path.string());
        sf << soup_curve_to_json(curve, align);
      } else if (stage.kind == "report") {
        fs::path in = resolve_ref(cfg.out_root, js.at("eval").get<std::string>());
        std::ifstream inf(in);
        if (!inf) raise(ErrorCode::storage, "cannot open " + in.string());
        std::string text((std::istreambuf_iterator<char>(inf)), std::istreambuf_iterator<char>());
        EvalReport report = EvalReport::from_json(text);
        std::ofstream rf(out_path);
        if (!rf) raise(ErrorCode::storage, "cannot write " + out_path.string());
        rf << (js.value("format", std::string("text")) == "json" ? report.to_json()
                                                                 : render_report_text(report));
      }
    } catch (const Error& e) {
      raise(e.code(), "stage '" + stage.name + "': " + std::string(e.what()));
    }

    json stamp;
    stamp["hash"] = hash_hex(h);
    stamp["out"] = out_path.string();
    std::ofstream sf(stamp_path, std::ios::trunc);
    sf << stamp.dump(2) << "\n";
    stamp_hash_of[stage.name] = h;
    ++outcome.stages_run;
  }
  return outcome;
}

}  // namespace weightgen
