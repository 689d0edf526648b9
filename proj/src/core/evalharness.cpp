// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

namespace weightgen {

using nlohmann::json;

void TaskSuite::validate() const {
  std::set<std::string> seen;
  auto check = [&](const std::vector<std::string>& tags) {
    for (const auto& t : tags) {
      if (seen.count(t))
        raise(ErrorCode::config, "task '" + t + "' appears in more than one suite group");
      seen.insert(t);
    }
  };
  check(id_tasks);
  check(nood_tasks);
  check(food_tasks);
}

std::string TaskSuite::to_json() const {
  json j;
  j["id"] = id_tasks;
  j["nood"] = nood_tasks;
  j["food"] = food_tasks;
  return j.dump(2) + "\n";
}

TaskSuite TaskSuite::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("task suite: ") + e.what());
  }
  TaskSuite s;
  try {
    s.id_tasks = j.at("id").get<std::vector<std::string>>();
    s.nood_tasks = j.value("nood", std::vector<std::string>());
    s.food_tasks = j.value("food", std::vector<std::string>());
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("task suite: missing field: ") + e.what());
  }
  s.validate();
  return s;
}

void EvalReport::recompute() {
  auto group_avg = [&](const char* group) {
    double sum = 0.0;
    int n = 0;
    for (const auto& e : entries)
      if (e.group == group && !e.skipped) {
        sum += e.mean;
        ++n;
      }
    return n == 0 ? 0.0 : sum / n;
  };
  id_avg = group_avg("ID");
  nood_avg = group_avg("NOOD");
  food_avg = group_avg("FOOD");
  double msum = 0.0, ssum = 0.0;
  int n = 0;
  for (const auto& e : entries)
    if (!e.skipped) {
      msum += e.mean;
      ssum += e.stddev;
      ++n;
    }
  avg_mean = n == 0 ? 0.0 : msum / n;
  avg_std = n == 0 ? 0.0 : ssum / n;
}

std::string EvalReport::to_json() const {
  json j;
  json ents = json::array();
  for (const auto& e : entries) {
    json je = {{"tag", e.tag}, {"group", e.group}, {"mean", e.mean}, {"std", e.stddev}};
    if (e.skipped) {
      je["skipped"] = true;
      je["skip_reason"] = e.skip_reason;
    }
    ents.push_back(std::move(je));
  }
  j["entries"] = std::move(ents);
  j["id_avg"] = id_avg;
  j["nood_avg"] = nood_avg;
  j["food_avg"] = food_avg;
  j["avg_mean"] = avg_mean;
  j["avg_std"] = avg_std;
  j["model_id"] = model_id;
  j["spec_note"] = spec_note;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("eval report: ") + e.what());
  }
  EvalReport r;
  try {
    for (const auto& je : j.at("entries")) {
      EvalEntry e;
      e.tag = je.at("tag").get<std::string>();
      e.group = je.at("group").get<std::string>();
      e.mean = je.at("mean").get<double>();
      e.stddev = je.at("std").get<double>();
      e.skipped = je.value("skipped", false);
      e.skip_reason = je.value("skip_reason", std::string());
      r.entries.push_back(std::move(e));
    }
    r.id_avg = j.at("id_avg").get<double>();
    r.nood_avg = j.at("nood_avg").get<double>();
    r.food_avg = j.at("food_avg").get<double>();
    r.avg_mean = j.at("avg_mean").get<double>();
    r.avg_std = j.at("avg_std").get<double>();
    r.model_id = j.value("model_id", std::string());
    r.spec_note = j.value("spec_note", std::string());
    r.seed = j.value("seed", uint64_t(0));
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("eval report: missing field: ") + e.what());
  }
  return r;
}

EvalReport evaluate_models(const std::vector<ModelCheckpoint>& models, const TaskSuite& suite,
                           const std::string& data_root, uint64_t seed, int condition_batches) {
  suite.validate();
  if (models.empty()) raise(ErrorCode::invalid_argument, "no models to evaluate");
  Executor ex(models[0].program);
  const int head_width = models[0].program->num_classes;
  bool has_bn = models[0].program->has_batchnorm();

  EvalReport report;
  auto run_group = [&](const std::vector<std::string>& tags, const char* group) {
    for (const auto& tag : tags) {
      EvalEntry entry;
      entry.tag = tag;
      entry.group = group;
      Dataset test = resolve_dataset(tag, data_root, Split::test, 0, seed);
      if (test.num_classes != head_width) {
        entry.skipped = true;
        entry.skip_reason = "task has " + std::to_string(test.num_classes) +
                            " classes, model head is " + std::to_string(head_width);
        report.entries.push_back(std::move(entry));
        continue;
      }
      Dataset cond;
      if (has_bn) cond = resolve_dataset(tag, data_root, Split::train, 0, seed);
      std::vector<double> accs;
      for (const auto& m : models) {
        ModelCheckpoint ready = has_bn ? condition_batchnorm(m, cond, condition_batches) : m;
        accs.push_back(ex.accuracy(ready, test) * 100.0);
      }
      double mean = 0.0;
      for (double a : accs) mean += a;
      mean /= double(accs.size());
      double var = 0.0;
      for (double a : accs) var += (a - mean) * (a - mean);
      entry.mean = mean;
      entry.stddev = std::sqrt(var / double(accs.size()));
      report.entries.push_back(std::move(entry));
    }
  };
  run_group(suite.id_tasks, "ID");
  run_group(suite.nood_tasks, "NOOD");
  run_group(suite.food_tasks, "FOOD");
  report.seed = seed;
  report.recompute();
  return report;
}

double ks_statistic(std::vector<float> a, std::vector<float> b) {
  if (a.empty() || b.empty()) raise(ErrorCode::invalid_argument, "ks: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0.0;
  const double na = double(a.size()), nb = double(b.size());
  while (i < a.size() && j < b.size()) {
    float x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / na - double(j) / nb));
  }
  return d;
}

std::vector<LayerDiagnostic> distribution_diagnostics(
    const std::vector<ModelCheckpoint>& originals,
    const std::vector<ModelCheckpoint>& reconstructions, int hist_bins) {
  if (originals.size() != reconstructions.size() || originals.empty())
    raise(ErrorCode::validation, "diagnostics: paired lists of equal nonzero length required");
  const ArchitectureDescriptor& arch = originals[0].arch;
  for (size_t i = 0; i < originals.size(); ++i) {
    if (originals[i].arch.arch_id != arch.arch_id ||
        reconstructions[i].arch.arch_id != arch.arch_id)
      raise(ErrorCode::validation, "diagnostics: architecture mismatch in pair " +
                                       std::to_string(i));
  }

  std::vector<LayerDiagnostic> out;
  for (const auto& layer : arch.layers) {
    std::vector<float> orig, recon;
    for (size_t i = 0; i < originals.size(); ++i) {
      const auto& to = originals[i].tensors.at(layer.name).data;
      const auto& tr = reconstructions[i].tensors.at(layer.name).data;
      orig.insert(orig.end(), to.begin(), to.end());
      recon.insert(recon.end(), tr.begin(), tr.end());
    }
    auto moments = [](const std::vector<float>& v) {
      double mean = 0.0;
      for (float x : v) mean += x;
      mean /= double(v.size());
      double var = 0.0;
      for (float x : v) var += (x - mean) * (x - mean);
      return std::pair<double, double>(mean, std::sqrt(var / double(v.size())));
    };
    auto [mo, so] = moments(orig);
    auto [mr, sr] = moments(recon);
    LayerDiagnostic d;
    d.layer = layer.name;
    d.mean_diff = std::abs(mr - mo);
    d.std_ratio = so > 0.0 ? sr / so : (sr == 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
    d.ks = ks_statistic(orig, recon);
    if (hist_bins > 0) {
      float lo = std::min(*std::min_element(orig.begin(), orig.end()),
                          *std::min_element(recon.begin(), recon.end()));
      float hi = std::max(*std::max_element(orig.begin(), orig.end()),
                          *std::max_element(recon.begin(), recon.end()));
      if (hi <= lo) hi = lo + 1e-6f;
      d.hist_lo = lo;
      d.hist_hi = hi;
      d.hist_orig.assign(size_t(hist_bins), 0);
      d.hist_recon.assign(size_t(hist_bins), 0);
      auto bin = [&](float x) {
        int b = int((x - lo) / (hi - lo) * float(hist_bins));
        return std::clamp(b, 0, hist_bins - 1);
      };
      for (float x : orig) d.hist_orig[size_t(bin(x))]++;
      for (float x : recon) d.hist_recon[size_t(bin(x))]++;
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::string diagnostics_to_json(const std::vector<LayerDiagnostic>& diags) {
  json j = json::array();
  for (const auto& d : diags) {
    json je = {{"layer", d.layer},
               {"mean_diff", d.mean_diff},
               {"std_ratio", d.std_ratio},
               {"ks", d.ks}};
    if (!d.hist_orig.empty()) {
      je["hist_lo"] = d.hist_lo;
      je["hist_hi"] = d.hist_hi;
      je["hist_orig"] = d.hist_orig;
      je["hist_recon"] = d.hist_recon;
    }
    j.push_back(std::move(je));
  }
  return j.dump(2) + "\n";
}

namespace {

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

std::string render_report_row(const EvalReport& report) {
  std::string row;
  for (const auto& e : report.entries) {
    if (!row.empty()) row += " | ";
    row += e.skipped ? "skip" : fmt1(e.mean) + "±" + fmt1(e.stddev);
  }
  if (!row.empty()) row += " | ";
  row += fmt1(report.avg_mean) + "±" + fmt1(report.avg_std);
  return row;
}

std::string render_report_text(const EvalReport& report) {
  if (report.entries.empty()) return "AVG\n";
  std::string groups, tags;
  for (const auto& e : report.entries) {
    if (!groups.empty()) {
      groups += " | ";
      tags += " | ";
    }
    groups += e.group;
    tags += e.tag;
  }
  groups += " | AVG";
  tags += " | ";
  std::string out;
  out += groups + "\n";
  out += tags + "\n";
  out += render_report_row(report) + "\n";
  if (!report.model_id.empty()) out += "model: " + report.model_id + "\n";
  return out;
}

}  // namespace weightgen
