// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "core/rng.hpp"

namespace weightgen {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Small glyph grid used as a sampling source for the digit families.
struct Glyph {
  int w = 0, h = 0;
  std::vector<float> v;
  float at(int x, int y) const {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0f;
    return v[size_t(y) * w + x];
  }
};

Glyph glyph_from_rows(const std::vector<const char*>& rows) {
  Glyph g;
  g.h = int(rows.size());
  g.w = int(std::strlen(rows[0]));
  g.v.resize(size_t(g.w) * g.h);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) g.v[size_t(y) * g.w + x] = rows[y][x] == '1' ? 1.0f : 0.0f;
  return g;
}

const std::vector<Glyph>& block_font() {
  static const std::vector<Glyph> font = [] {
    std::vector<std::vector<const char*>> rows = {
        {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
        {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
        {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
        {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
        {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
        {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
        {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
        {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
        {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
        {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
    };
    std::vector<Glyph> f;
    for (auto& r : rows) f.push_back(glyph_from_rows(r));
    return f;
  }();
  return font;
}

const std::vector<Glyph>& thin_font() {
  static const std::vector<Glyph> font = [] {
    std::vector<std::vector<const char*>> rows = {
        {"111", "101", "101", "101", "111"}, {"010", "110", "010", "010", "111"},
        {"111", "001", "111", "100", "111"}, {"111", "001", "111", "001", "111"},
        {"101", "101", "111", "001", "001"}, {"111", "100", "111", "001", "111"},
        {"111", "100", "111", "101", "111"}, {"111", "001", "001", "010", "010"},
        {"111", "101", "111", "101", "111"}, {"111", "101", "111", "001", "111"},
    };
    std::vector<Glyph> f;
    for (auto& r : rows) f.push_back(glyph_from_rows(r));
    return f;
  }();
  return font;
}

// Seven-segment glyphs rendered onto an 11x19 grid.
const std::vector<Glyph>& segment_font() {
  static const std::vector<Glyph> font = [] {
    // segment masks: A top, B top-right, C bottom-right, D bottom,
    // E bottom-left, F top-left, G middle
    const int seg_of_digit[10] = {
        0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110,
        0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
    };
    auto draw = [](int mask) {
      Glyph g;
      g.w = 11;
      g.h = 19;
      g.v.assign(size_t(g.w) * g.h, 0.0f);
      auto rect = [&](int x0, int y0, int x1, int y1) {
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) g.v[size_t(y) * g.w + x] = 1.0f;
      };
      if (mask & 0b0000001) rect(2, 0, 8, 1);     // A
      if (mask & 0b0000010) rect(9, 1, 10, 8);    // B
      if (mask & 0b0000100) rect(9, 10, 10, 17);  // C
      if (mask & 0b0001000) rect(2, 17, 8, 18);   // D
      if (mask & 0b0010000) rect(0, 10, 1, 17);   // E
      if (mask & 0b0100000) rect(0, 1, 1, 8);     // F
      if (mask & 0b1000000) rect(2, 8, 8, 10);    // G
      return g;
    };
    std::vector<Glyph> f;
    for (int d = 0; d < 10; ++d) f.push_back(draw(seg_of_digit[d]));
    return f;
  }();
  return font;
}

// Shape classes drawn onto a 15x15 grid.
Glyph shape_glyph(int cls) {
  Glyph g;
  g.w = 15;
  g.h = 15;
  g.v.assign(225, 0.0f);
  auto set = [&](int x, int y, float v = 1.0f) {
    if (x >= 0 && y >= 0 && x < 15 && y < 15) g.v[size_t(y) * 15 + x] = v;
  };
  const float cx = 7.0f, cy = 7.0f;
  for (int y = 0; y < 15; ++y) {
    for (int x = 0; x < 15; ++x) {
      float dx = x - cx, dy = y - cy;
      float r = std::sqrt(dx * dx + dy * dy);
      bool on = false;
      switch (cls) {
        case 0: on = r <= 6.0f; break;                                  // disk
        case 1: on = r <= 6.0f && r >= 4.0f; break;                     // ring
        case 2: on = std::abs(dx) <= 5 && std::abs(dy) <= 5; break;     // filled square
        case 3: on = std::max(std::abs(dx), std::abs(dy)) >= 4 &&
                     std::max(std::abs(dx), std::abs(dy)) <= 6; break;  // square outline
        case 4: on = dy >= -5 && dy <= 5 && std::abs(dx) <= (dy + 5) * 0.6f; break;  // triangle
        case 5: on = std::abs(std::abs(dx) - std::abs(dy)) <= 1 && r <= 7; break;    // X
        case 6: on = (std::abs(dx) <= 1 || std::abs(dy) <= 1) && r <= 7; break;      // plus
        case 7: on = (y / 3) % 2 == 0 && std::abs(dx) <= 6 && std::abs(dy) <= 6; break;
        case 8: on = (x / 3) % 2 == 0 && std::abs(dx) <= 6 && std::abs(dy) <= 6; break;
        case 9: on = ((x / 4) + (y / 4)) % 2 == 0 && std::abs(dx) <= 6 && std::abs(dy) <= 6;
                break;
      }
      if (on) set(x, y);
    }
  }
  return g;
}

// Bilinear sample of a glyph at continuous coordinates.
float sample_glyph(const Glyph& g, float x, float y) {
  int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  float fx = x - x0, fy = y - y0;
  float v00 = g.at(x0, y0), v10 = g.at(x0 + 1, y0);
  float v01 = g.at(x0, y0 + 1), v11 = g.at(x0 + 1, y0 + 1);
  return (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy;
}

struct RenderParams {
  float max_rot = 0.2f;     // radians
  float min_scale = 0.55f;  // glyph box as a fraction of the canvas
  float max_scale = 0.75f;
  float max_shift = 3.0f;
  float noise = 0.08f;
  bool invert = false;
  float gain_lo = 0.75f;
};

void render_glyph(const Glyph& g, float* out, int side, Rng& rng, const RenderParams& p) {
  float rot = float(rng.uniform(-p.max_rot, p.max_rot));
  float box = side * float(rng.uniform(p.min_scale, p.max_scale));
  float sx = box / g.w;
  float sy = box / g.h;
  float dx = float(rng.uniform(-p.max_shift, p.max_shift));
  float dy = float(rng.uniform(-p.max_shift, p.max_shift));
  float gain = float(rng.uniform(p.gain_lo, 1.0));
  float c = std::cos(rot), s = std::sin(rot);
  float half = side / 2.0f;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      // inverse transform into glyph coordinates, centered
      float ux = x - half - dx, uy = y - half - dy;
      float gx = (c * ux + s * uy) / sx + g.w / 2.0f - 0.5f;
      float gy = (-s * ux + c * uy) / sy + g.h / 2.0f - 0.5f;
      float v = gain * sample_glyph(g, gx, gy);
      v += float(rng.normal(0.0, p.noise));
      v = std::clamp(v, 0.0f, 1.0f);
      out[y * side + x] = p.invert ? 1.0f - v : v;
    }
  }
}

struct FamilyDef {
  const std::vector<Glyph>* font;
  RenderParams params;
  bool shapes = false;
};

FamilyDef family_def(const std::string& family) {
  FamilyDef d;
  if (family == "digits-a") {
    d.font = &block_font();
    d.params = {0.20f, 0.55f, 0.78f, 3.0f, 0.08f, false, 0.75f};
  } else if (family == "digits-b") {
    d.font = &segment_font();
    d.params = {0.08f, 0.60f, 0.80f, 2.5f, 0.05f, true, 0.85f};
  } else if (family == "digits-c") {
    d.font = &thin_font();
    d.params = {0.15f, 0.50f, 0.70f, 3.0f, 0.06f, false, 0.80f};
  } else if (family == "shapes") {
    d.font = nullptr;
    d.params = {0.25f, 0.60f, 0.85f, 2.0f, 0.07f, false, 0.80f};
    d.shapes = true;
  } else {
    raise(ErrorCode::config, "unknown synthetic dataset family '" + family + "'");
  }
  return d;
}

}  // namespace

bool is_synthetic_tag(const std::string& tag) { return tag.rfind("synth:", 0) == 0; }

int default_split_size(Split split) {
  switch (split) {
    case Split::train: return 1024;
    case Split::val: return 256;
    case Split::test: return 512;
  }
  return 256;
}

Dataset make_synthetic_dataset(const std::string& tag, Split split, int n, uint64_t seed) {
  if (!is_synthetic_tag(tag)) raise(ErrorCode::config, "not a synthetic tag: '" + tag + "'");
  if (n <= 0) n = default_split_size(split);
  const std::string family = tag.substr(6);
  FamilyDef def = family_def(family);

  Dataset ds;
  ds.tag = tag;
  ds.channels = 1;
  ds.height = 28;
  ds.width = 28;
  ds.num_classes = 10;
  ds.n = n;
  ds.images.resize(size_t(n) * 28 * 28);
  ds.labels.resize(n);
  const std::string stream = tag + "/" + split_name(split);
  for (int i = 0; i < n; ++i) {
    int cls = i % 10;
    ds.labels[i] = cls;
    Rng rng(Rng::derive(seed, stream, uint64_t(i)));
    const Glyph g = def.shapes ? shape_glyph(cls) : (*def.font)[cls];
    render_glyph(g, ds.images.data() + size_t(i) * 28 * 28, 28, rng, def.params);
  }
  return ds;
}

Dataset Dataset::adapted(int out_c, int out_h, int out_w) const {
  if (out_c == channels && out_h == height && out_w == width) return *this;
  if (!(out_c == channels || channels == 1 || out_c == 1))
    raise(ErrorCode::config, "cannot adapt " + std::to_string(channels) + " channels to " +
                                 std::to_string(out_c));
  Dataset out;
  out.tag = tag;
  out.channels = out_c;
  out.height = out_h;
  out.width = out_w;
  out.num_classes = num_classes;
  out.n = n;
  out.labels = labels;
  out.images.resize(size_t(n) * out_c * out_h * out_w);
  const float sy = float(height) / out_h;
  const float sx = float(width) / out_w;
  for (int i = 0; i < n; ++i) {
    const float* src = image(i);
    float* dst = out.images.data() + size_t(i) * out_c * out_h * out_w;
    for (int oc = 0; oc < out_c; ++oc) {
      for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
          float fy = (y + 0.5f) * sy - 0.5f;
          float fx = (x + 0.5f) * sx - 0.5f;
          int y0 = std::clamp(int(std::floor(fy)), 0, height - 1);
          int x0 = std::clamp(int(std::floor(fx)), 0, width - 1);
          int y1 = std::min(y0 + 1, height - 1);
          int x1 = std::min(x0 + 1, width - 1);
          float wy = std::clamp(fy - y0, 0.0f, 1.0f);
          float wx = std::clamp(fx - x0, 0.0f, 1.0f);
          auto px = [&](int c, int yy, int xx) {
            return src[(size_t(c) * height + yy) * width + xx];
          };
          float v = 0.0f;
          if (out_c == channels || channels == 1) {
            int c = channels == 1 ? 0 : oc;
            v = (px(c, y0, x0) * (1 - wx) + px(c, y0, x1) * wx) * (1 - wy) +
                (px(c, y1, x0) * (1 - wx) + px(c, y1, x1) * wx) * wy;
          } else {  // channel average
            for (int c = 0; c < channels; ++c)
              v += (px(c, y0, x0) * (1 - wx) + px(c, y0, x1) * wx) * (1 - wy) +
                   (px(c, y1, x0) * (1 - wx) + px(c, y1, x1) * wx) * wy;
            v /= channels;
          }
          dst[(size_t(oc) * out_h + y) * out_w + x] = v;
        }
      }
    }
  }
  return out;
}

namespace {

void write_blob(const fs::path& p, const void* data, size_t bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) raise(ErrorCode::storage, "cannot write " + p.string());
  f.write(static_cast<const char*>(data), std::streamsize(bytes));
  if (!f) raise(ErrorCode::storage, "short write to " + p.string());
}

void read_blob(const fs::path& p, void* data, size_t bytes) {
  std::ifstream f(p, std::ios::binary);
  if (!f) raise(ErrorCode::integrity, "missing data file " + p.string());
  f.read(static_cast<char*>(data), std::streamsize(bytes));
  if (!f) raise(ErrorCode::integrity, "data file " + p.string() + " truncated");
}

}  // namespace

void save_dataset_dir(const fs::path& dir, const std::string& tag,
                      const std::vector<std::pair<Split, Dataset>>& splits) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorCode::storage, "cannot create " + dir.string());
  json j;
  j["format"] = "weightgen-dataset/1";
  j["tag"] = tag;
  const Dataset& first = splits.at(0).second;
  j["channels"] = first.channels;
  j["height"] = first.height;
  j["width"] = first.width;
  j["num_classes"] = first.num_classes;
  json js;
  for (const auto& [split, ds] : splits) {
    std::string base = split_name(split);
    write_blob(dir / (base + "_images.bin"), ds.images.data(), ds.images.size() * sizeof(float));
    write_blob(dir / (base + "_labels.bin"), ds.labels.data(), ds.labels.size() * sizeof(int32_t));
    js[base] = {{"images", base + "_images.bin"}, {"labels", base + "_labels.bin"}, {"n", ds.n}};
  }
  j["splits"] = std::move(js);
  std::ofstream f(dir / "dataset.json", std::ios::trunc);
  if (!f) raise(ErrorCode::storage, "cannot write dataset.json");
  f << j.dump(2) << "\n";
}

Dataset load_dataset_dir(const fs::path& dir, Split split) {
  std::ifstream f(dir / "dataset.json");
  if (!f) raise(ErrorCode::storage, "cannot open " + (dir / "dataset.json").string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("dataset.json: ") + e.what());
  }
  try {
    Dataset ds;
    ds.tag = j.at("tag").get<std::string>();
    ds.channels = j.at("channels").get<int>();
    ds.height = j.at("height").get<int>();
    ds.width = j.at("width").get<int>();
    ds.num_classes = j.at("num_classes").get<int>();
    const auto& js = j.at("splits").at(split_name(split));
    ds.n = js.at("n").get<int>();
    ds.images.resize(size_t(ds.n) * ds.image_size());
    ds.labels.resize(ds.n);
    read_blob(dir / js.at("images").get<std::string>(), ds.images.data(),
              ds.images.size() * sizeof(float));
    read_blob(dir / js.at("labels").get<std::string>(), ds.labels.data(),
              ds.labels.size() * sizeof(int32_t));
    return ds;
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("dataset.json: missing field: ") + e.what());
  }
}

Dataset resolve_dataset(const std::string& tag, const std::string& data_root, Split split, int n,
                        uint64_t seed) {
  if (is_synthetic_tag(tag)) return make_synthetic_dataset(tag, split, n, seed);
  std::string safe = tag;
  std::replace(safe.begin(), safe.end(), ':', '_');
  fs::path dir = fs::path(data_root.empty() ? "." : data_root) / safe;
  Dataset ds = load_dataset_dir(dir, split);
  if (n > 0 && n < ds.n) {
    ds.images.resize(size_t(n) * ds.image_size());
    ds.labels.resize(n);
    ds.n = n;
  }
  return ds;
}

}  // namespace weightgen
