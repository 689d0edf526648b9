// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

// Command-line front end. Everything goes through the public C API; this
// translation unit never touches the core library directly.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "weightgen.h"

namespace {

int fail(wg_status status) {
  std::fprintf(stderr, "error: %s\n", wg_last_error());
  return int(status);
}

int64_t env_seed_default() {
  const char* s = std::getenv("WEIGHTGEN_SEED");
  return s ? std::strtoll(s, nullptr, 10) : 0;
}

std::string env_data_root_default() {
  const char* s = std::getenv("WEIGHTGEN_DATA_ROOT");
  return s ? s : "";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weightgen - weight-space learning toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", wg_version());

  int64_t seed = env_seed_default();
  std::string data_root = env_data_root_default();
  auto* seed_opt =
      app.add_option("--seed", seed, "global seed (env WEIGHTGEN_SEED)")->capture_default_str();
  app.add_option("--data", data_root, "image dataset root (env WEIGHTGEN_DATA_ROOT)");

  // zoogen
  auto* zoogen = app.add_subcommand("zoogen", "train a population of classifiers into a zoo");
  std::string zg_spec, zg_out;
  int zg_workers = 0;
  zoogen->add_option("--spec", zg_spec, "population spec (json)")->required();
  zoogen->add_option("--out", zg_out, "output zoo directory")->required();
  zoogen->add_option("--workers", zg_workers, "parallel trainers (0 = auto)");

  // layout
  auto* layout = app.add_subcommand("layout", "dump the tokenization layout of a zoo");
  std::string ly_zoo;
  int ly_token_size = 289;
  layout->add_option("--zoo", ly_zoo, "zoo directory")->required();
  layout->add_option("--token-size", ly_token_size, "token size d_t")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "train the sequence model on one or more zoos");
  std::string tr_config, tr_out;
  std::vector<std::string> tr_zoos;
  train->add_option("--config", tr_config, "model/training config (json)")->required();
  train->add_option("--zoos", tr_zoos, "zoo directories")->required()->expected(-1);
  train->add_option("--out", tr_out, "output model directory")->required();

  // sample
  auto* sample = app.add_subcommand("sample", "generate zero-shot weights from anchors");
  std::string sm_sane, sm_zoo, sm_out, sm_spec, sm_task;
  sample->add_option("--sane", sm_sane, "trained model directory")->required();
  sample->add_option("--zoo", sm_zoo, "anchor zoo directory")->required();
  sample->add_option("--out", sm_out, "output zoo for kept candidates")->required();
  sample->add_option("--spec", sm_spec, "sample spec (json; default protocol otherwise)");
  sample->add_option("--task", sm_task, "target task tag (default: anchor zoo dataset)");

  // soup
  auto* soup = app.add_subcommand("soup", "weight-averaging baseline curve");
  std::string sp_zoo, sp_report, sp_ks = "1,2,4,8", sp_task;
  bool sp_align = false;
  int sp_repeats = 5;
  soup->add_option("--zoo", sp_zoo, "zoo directory")->required();
  soup->add_option("--ks", sp_ks, "soup sizes, comma separated")->capture_default_str();
  soup->add_flag("--align", sp_align, "re-basin align members before averaging");
  soup->add_option("--report", sp_report, "output report (json)")->required();
  soup->add_option("--repeats", sp_repeats, "repeats per size")->capture_default_str();
  soup->add_option("--task", sp_task, "evaluation task tag (default: zoo dataset)");

  // rebasin
  auto* rebasin = app.add_subcommand("rebasin", "align one checkpoint to another");
  std::string rb_zoo, rb_ref, rb_target, rb_out;
  rebasin->add_option("--zoo", rb_zoo, "zoo directory")->required();
  rebasin->add_option("--reference", rb_ref, "reference checkpoint id")->required();
  rebasin->add_option("--target", rb_target, "target checkpoint id")->required();
  rebasin->add_option("--out", rb_out, "output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate models on an ID/NOOD/FOOD suite");
  std::string ev_models, ev_suite, ev_report;
  eval->add_option("--models", ev_models, "zoo directory of models")->required();
  eval->add_option("--suite", ev_suite, "task suite (json)")->required();
  eval->add_option("--report", ev_report, "output report (json)")->required();

  // report
  auto* report = app.add_subcommand("report", "render a structured eval report");
  std::string rp_input, rp_format = "text", rp_out;
  report->add_option("--input", rp_input, "eval report (json)")->required();
  report->add_option("--format", rp_format, "text or json")->capture_default_str();
  report->add_option("--out", rp_out, "output file (stdout when omitted)");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "run a declarative multi-stage config");
  std::string pl_config;
  pipeline->add_option("--config", pl_config, "pipeline config (json)")->required();

  CLI11_PARSE(app, argc, argv);

  wg_status status = WG_OK;
  if (zoogen->parsed()) {
    status = wg_zoogen_run(zg_spec.c_str(), data_root.c_str(), zg_out.c_str(), seed, zg_workers);
  } else if (layout->parsed()) {
    char* json_text = nullptr;
    status = wg_layout_json(ly_zoo.c_str(), ly_token_size, &json_text);
    if (status == WG_OK) {
      std::fputs(json_text, stdout);
      wg_string_free(json_text);
    }
  } else if (train->parsed()) {
    std::vector<const char*> dirs;
    for (const auto& z : tr_zoos) dirs.push_back(z.c_str());
    status = wg_train_run(tr_config.c_str(), dirs.data(), int(dirs.size()), tr_out.c_str(), seed);
  } else if (sample->parsed()) {
    status = wg_sample_run(sm_sane.c_str(), sm_zoo.c_str(), sm_task.c_str(), data_root.c_str(),
                           sm_spec.empty() ? nullptr : sm_spec.c_str(), sm_out.c_str(), seed);
  } else if (soup->parsed()) {
    status = wg_soup_run(sp_zoo.c_str(), sp_ks.c_str(), sp_align ? 1 : 0, sp_task.c_str(),
                         data_root.c_str(), sp_repeats, sp_report.c_str(), seed);
  } else if (rebasin->parsed()) {
    status = wg_rebasin_run(rb_zoo.c_str(), rb_ref.c_str(), rb_target.c_str(), rb_out.c_str());
  } else if (eval->parsed()) {
    status = wg_eval_run(ev_models.c_str(), ev_suite.c_str(), data_root.c_str(),
                         ev_report.c_str(), seed);
  } else if (report->parsed()) {
    char* rendered = nullptr;
    status = wg_report_render(rp_input.c_str(), rp_format.c_str(), &rendered);
    if (status == WG_OK) {
      if (rp_out.empty()) {
        std::fputs(rendered, stdout);
      } else {
        FILE* f = std::fopen(rp_out.c_str(), "w");
        if (!f) {
          std::fprintf(stderr, "error: cannot write %s\n", rp_out.c_str());
          wg_string_free(rendered);
          return 1;
        }
        std::fputs(rendered, f);
        std::fclose(f);
      }
      wg_string_free(rendered);
    }
  } else if (pipeline->parsed()) {
    int run = 0, skipped = 0;
    // the config's own seed wins unless --seed or WEIGHTGEN_SEED is present
    bool seed_given = seed_opt->count() > 0 || std::getenv("WEIGHTGEN_SEED") != nullptr;
    status = wg_pipeline_run(pl_config.c_str(), data_root.empty() ? nullptr : data_root.c_str(),
                             seed_given ? seed : -1, &run, &skipped);
    if (status == WG_OK)
      std::printf("pipeline complete: %d stage(s) run, %d skipped\n", run, skipped);
  }

  return status == WG_OK ? 0 : fail(status);
}
