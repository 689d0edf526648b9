// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include "core/arch.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "core/rng.hpp"

namespace weightgen {

using nlohmann::json;

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::linear: return "linear";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "linear") return LayerKind::linear;
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "batchnorm") return LayerKind::batchnorm;
  raise(ErrorCode::parse, "unknown layer kind '" + s + "'");
}

const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::linear: return "linear";
    case OpKind::batchnorm: return "batchnorm";
    case OpKind::relu: return "relu";
    case OpKind::tanh_act: return "tanh";
    case OpKind::maxpool2: return "maxpool2";
    case OpKind::global_avgpool: return "global_avgpool";
    case OpKind::flatten: return "flatten";
    case OpKind::add: return "add";
  }
  return "?";
}

OpKind op_kind_from_name(const std::string& s) {
  static const std::pair<const char*, OpKind> table[] = {
      {"conv2d", OpKind::conv2d},   {"linear", OpKind::linear},
      {"batchnorm", OpKind::batchnorm}, {"relu", OpKind::relu},
      {"tanh", OpKind::tanh_act},   {"maxpool2", OpKind::maxpool2},
      {"global_avgpool", OpKind::global_avgpool}, {"flatten", OpKind::flatten},
      {"add", OpKind::add},
  };
  for (auto& [name, kind] : table)
    if (s == name) return kind;
  raise(ErrorCode::parse, "unknown op kind '" + s + "'");
}

ArchitectureDescriptor make_descriptor(std::vector<LayerSpec> layers) {
  std::ostringstream canon;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.layer_index != int(i))
      raise(ErrorCode::validation,
            "layer '" + l.name + "': layer_index " + std::to_string(l.layer_index) +
                " not consecutive (expected " + std::to_string(i) + ")");
    if (l.kind == LayerKind::batchnorm && (l.fan_in != 0 || !l.has_bias))
      raise(ErrorCode::validation,
            "batchnorm layer '" + l.name + "' must have fan_in=0 and has_bias=true");
    if (l.out_dim <= 0 || l.fan_in < 0)
      raise(ErrorCode::validation, "layer '" + l.name + "': bad dimensions");
    canon << l.name << '|' << layer_kind_name(l.kind) << '|' << l.out_dim << '|'
          << l.fan_in << '|' << (l.has_bias ? 1 : 0) << ';';
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "a%016llx",
                static_cast<unsigned long long>(fnv1a64(canon.str())));
  return ArchitectureDescriptor{buf, std::move(layers)};
}

int ExecProgram::buffer_count() const {
  int mx = 0;
  for (const auto& n : nodes) {
    mx = std::max(mx, n.output);
    for (int i : n.inputs) mx = std::max(mx, i);
  }
  return mx + 1;
}

std::vector<BufferShape> ExecProgram::buffer_shapes() const {
  std::vector<BufferShape> shapes(buffer_count());
  std::vector<bool> written(shapes.size(), false);
  shapes[0] = input_shape;
  written[0] = true;
  auto in_shape = [&](const OpNode& n, int idx) -> const BufferShape& {
    int b = n.inputs.at(idx);
    if (!written[b])
      raise(ErrorCode::validation, "op reads buffer " + std::to_string(b) + " before it is written");
    return shapes[b];
  };
  for (const auto& n : nodes) {
    if (n.output == 0 || written[n.output])
      raise(ErrorCode::validation, "op output buffer " + std::to_string(n.output) + " reused");
    BufferShape out;
    switch (n.kind) {
      case OpKind::conv2d: {
        const BufferShape& s = in_shape(n, 0);
        if (s.c != n.in_ch)
          raise(ErrorCode::validation, "conv '" + n.name + "': input channels " +
                                           std::to_string(s.c) + " != " + std::to_string(n.in_ch));
        int oh = (s.h + 2 * n.pad - n.ksize) / n.stride + 1;
        int ow = (s.w + 2 * n.pad - n.ksize) / n.stride + 1;
        if (oh <= 0 || ow <= 0)
          raise(ErrorCode::validation, "conv '" + n.name + "': empty output");
        out = {n.out_ch, oh, ow};
        break;
      }
      case OpKind::linear: {
        const BufferShape& s = in_shape(n, 0);
        if (s.size() != n.in_ch || s.h != 1 || s.w != 1)
          raise(ErrorCode::validation, "linear '" + n.name + "': expects flat input of " +
                                           std::to_string(n.in_ch));
        out = {n.out_ch, 1, 1};
        break;
      }
      case OpKind::batchnorm: {
        const BufferShape& s = in_shape(n, 0);
        if (s.c != n.out_ch)
          raise(ErrorCode::validation, "batchnorm '" + n.name + "': channel mismatch");
        out = s;
        break;
      }
      case OpKind::relu:
      case OpKind::tanh_act:
        out = in_shape(n, 0);
        break;
      case OpKind::maxpool2: {
        const BufferShape& s = in_shape(n, 0);
        if (s.h % 2 || s.w % 2)
          raise(ErrorCode::validation, "maxpool2 expects even spatial dims");
        out = {s.c, s.h / 2, s.w / 2};
        break;
      }
      case OpKind::global_avgpool: {
        const BufferShape& s = in_shape(n, 0);
        out = {s.c, 1, 1};
        break;
      }
      case OpKind::flatten: {
        const BufferShape& s = in_shape(n, 0);
        out = {s.size(), 1, 1};
        break;
      }
      case OpKind::add: {
        const BufferShape& a = in_shape(n, 0);
        const BufferShape& b = in_shape(n, 1);
        if (!(a == b)) raise(ErrorCode::validation, "add: shape mismatch");
        out = a;
        break;
      }
    }
    shapes[n.output] = out;
    written[n.output] = true;
  }
  return shapes;
}

ArchitectureDescriptor ExecProgram::descriptor() const {
  (void)buffer_shapes();  // validate
  std::vector<LayerSpec> layers;
  for (const auto& n : nodes) {
    if (!n.weighted()) continue;
    LayerSpec l;
    l.name = n.name;
    l.layer_index = int(layers.size());
    switch (n.kind) {
      case OpKind::conv2d:
        l.kind = LayerKind::conv2d;
        l.out_dim = n.out_ch;
        l.fan_in = n.in_ch * n.ksize * n.ksize;
        l.has_bias = n.bias;
        break;
      case OpKind::linear:
        l.kind = LayerKind::linear;
        l.out_dim = n.out_ch;
        l.fan_in = n.in_ch;
        l.has_bias = n.bias;
        break;
      case OpKind::batchnorm:
        l.kind = LayerKind::batchnorm;
        l.out_dim = n.out_ch;
        l.fan_in = 0;
        l.has_bias = true;
        break;
      default:
        break;
    }
    layers.push_back(std::move(l));
  }
  return make_descriptor(std::move(layers));
}

const OpNode& ExecProgram::node_by_name(const std::string& name) const {
  for (const auto& n : nodes)
    if (n.weighted() && n.name == name) return n;
  raise(ErrorCode::validation, "no weighted op named '" + name + "'");
}

bool ExecProgram::has_batchnorm() const {
  return std::any_of(nodes.begin(), nodes.end(),
                     [](const OpNode& n) { return n.kind == OpKind::batchnorm; });
}

namespace {

OpNode conv(std::string name, int in, int b_in, int out, int b_out, int k, int stride, int pad,
            bool bias) {
  OpNode n;
  n.kind = OpKind::conv2d;
  n.name = std::move(name);
  n.inputs = {b_in};
  n.output = b_out;
  n.in_ch = in;
  n.out_ch = out;
  n.ksize = k;
  n.stride = stride;
  n.pad = pad;
  n.bias = bias;
  return n;
}

OpNode lin(std::string name, int in, int b_in, int out, int b_out, bool bias) {
  OpNode n;
  n.kind = OpKind::linear;
  n.name = std::move(name);
  n.inputs = {b_in};
  n.output = b_out;
  n.in_ch = in;
  n.out_ch = out;
  n.bias = bias;
  return n;
}

OpNode bn(std::string name, int ch, int b_in, int b_out) {
  OpNode n;
  n.kind = OpKind::batchnorm;
  n.name = std::move(name);
  n.inputs = {b_in};
  n.output = b_out;
  n.out_ch = ch;
  n.in_ch = ch;
  return n;
}

OpNode unary(OpKind k, int b_in, int b_out) {
  OpNode n;
  n.kind = k;
  n.inputs = {b_in};
  n.output = b_out;
  return n;
}

OpNode add(int b_a, int b_b, int b_out) {
  OpNode n;
  n.kind = OpKind::add;
  n.inputs = {b_a, b_b};
  n.output = b_out;
  return n;
}

}  // namespace

ExecProgram make_small_cnn() {
  ExecProgram p;
  p.family = "small_cnn";
  p.input_shape = {1, 28, 28};
  p.num_classes = 10;
  int b = 0;
  p.nodes.push_back(conv("conv1", 1, b, 8, b + 1, 5, 1, 0, true));  // 8x24x24
  p.nodes.push_back(unary(OpKind::tanh_act, 1, 2));
  p.nodes.push_back(unary(OpKind::maxpool2, 2, 3));                 // 8x12x12
  p.nodes.push_back(conv("conv2", 8, 3, 6, 4, 5, 1, 0, true));      // 6x8x8
  p.nodes.push_back(unary(OpKind::tanh_act, 4, 5));
  p.nodes.push_back(unary(OpKind::maxpool2, 5, 6));                 // 6x4x4
  p.nodes.push_back(conv("conv3", 6, 6, 4, 7, 2, 1, 0, true));      // 4x3x3
  p.nodes.push_back(unary(OpKind::tanh_act, 7, 8));
  p.nodes.push_back(unary(OpKind::flatten, 8, 9));                  // 36
  p.nodes.push_back(lin("fc1", 36, 9, 20, 10, true));
  p.nodes.push_back(unary(OpKind::tanh_act, 10, 11));
  p.nodes.push_back(lin("fc2", 20, 11, 10, 12, true));
  return p;
}

ExecProgram make_mini_resnet() {
  ExecProgram p;
  p.family = "mini_resnet";
  p.input_shape = {3, 16, 16};
  p.num_classes = 10;
  // stem
  p.nodes.push_back(conv("conv0", 3, 0, 16, 1, 3, 1, 1, false));  // 16x16x16
  p.nodes.push_back(bn("bn0", 16, 1, 2));
  p.nodes.push_back(unary(OpKind::relu, 2, 3));  // buffer 3 = stage-1 stream
  // block 1 (identity skip)
  p.nodes.push_back(conv("conv1a", 16, 3, 16, 4, 3, 1, 1, false));
  p.nodes.push_back(bn("bn1a", 16, 4, 5));
  p.nodes.push_back(unary(OpKind::relu, 5, 6));
  p.nodes.push_back(conv("conv1b", 16, 6, 16, 7, 3, 1, 1, false));
  p.nodes.push_back(bn("bn1b", 16, 7, 8));
  p.nodes.push_back(add(8, 3, 9));
  p.nodes.push_back(unary(OpKind::relu, 9, 10));  // buffer 10 feeds stage 2
  // block 2 (stride-2, 1x1 projection skip)
  p.nodes.push_back(conv("conv2a", 16, 10, 32, 11, 3, 2, 1, false));  // 32x8x8
  p.nodes.push_back(bn("bn2a", 32, 11, 12));
  p.nodes.push_back(unary(OpKind::relu, 12, 13));
  p.nodes.push_back(conv("conv2b", 32, 13, 32, 14, 3, 1, 1, false));
  p.nodes.push_back(bn("bn2b", 32, 14, 15));
  p.nodes.push_back(conv("conv2s", 16, 10, 32, 16, 1, 2, 0, false));  // skip projection
  p.nodes.push_back(bn("bn2s", 32, 16, 17));
  p.nodes.push_back(add(15, 17, 18));
  p.nodes.push_back(unary(OpKind::relu, 18, 19));
  p.nodes.push_back(unary(OpKind::global_avgpool, 19, 20));  // 32x1x1
  p.nodes.push_back(unary(OpKind::flatten, 20, 21));
  p.nodes.push_back(lin("fc", 32, 21, 10, 22, true));
  return p;
}

ExecProgram make_toy_mlp_bn() {
  ExecProgram p;
  p.family = "toy_mlp_bn";
  p.input_shape = {1, 8, 8};
  p.num_classes = 10;
  p.nodes.push_back(unary(OpKind::flatten, 0, 1));  // 64
  p.nodes.push_back(lin("fc1", 64, 1, 16, 2, true));
  p.nodes.push_back(bn("bn1", 16, 2, 3));
  p.nodes.push_back(unary(OpKind::tanh_act, 3, 4));
  p.nodes.push_back(lin("fc2", 16, 4, 10, 5, true));
  return p;
}

ExecProgram make_mlp(const std::vector<int>& dims, bool bias) {
  if (dims.size() < 2) raise(ErrorCode::config, "mlp needs at least input and output dims");
  ExecProgram p;
  p.family = "mlp";
  p.input_shape = {dims[0], 1, 1};
  p.num_classes = dims.back();
  int b = 1;
  p.nodes.push_back(unary(OpKind::flatten, 0, 1));
  for (size_t i = 1; i < dims.size(); ++i) {
    p.nodes.push_back(lin("fc" + std::to_string(i), dims[i - 1], b, dims[i], b + 1, bias));
    ++b;
    if (i + 1 < dims.size()) {
      p.nodes.push_back(unary(OpKind::tanh_act, b, b + 1));
      ++b;
    }
  }
  return p;
}

ExecProgram make_program(const std::string& family) {
  if (family == "small_cnn") return make_small_cnn();
  if (family == "mini_resnet") return make_mini_resnet();
  if (family == "toy_mlp_bn") return make_toy_mlp_bn();
  if (family.rfind("mlp:", 0) == 0) {
    std::vector<int> dims;
    std::string spec = family.substr(4);
    size_t pos = 0;
    while (pos < spec.size()) {
      size_t dash = spec.find('-', pos);
      if (dash == std::string::npos) dash = spec.size();
      dims.push_back(std::stoi(spec.substr(pos, dash - pos)));
      pos = dash + 1;
    }
    ExecProgram p = make_mlp(dims);
    p.family = family;
    return p;
  }
  raise(ErrorCode::config, "unknown architecture family '" + family + "'");
}

std::string program_to_json(const ExecProgram& p) {
  json j;
  j["family"] = p.family;
  j["input_shape"] = {p.input_shape.c, p.input_shape.h, p.input_shape.w};
  j["num_classes"] = p.num_classes;
  json nodes = json::array();
  for (const auto& n : p.nodes) {
    json jn;
    jn["op"] = op_kind_name(n.kind);
    jn["in"] = n.inputs;
    jn["out"] = n.output;
    if (n.weighted()) {
      jn["name"] = n.name;
      jn["in_ch"] = n.in_ch;
      jn["out_ch"] = n.out_ch;
      if (n.kind == OpKind::conv2d) {
        jn["k"] = n.ksize;
        jn["stride"] = n.stride;
        jn["pad"] = n.pad;
      }
      if (n.kind != OpKind::batchnorm) jn["bias"] = n.bias;
    }
    nodes.push_back(std::move(jn));
  }
  j["nodes"] = std::move(nodes);
  return j.dump();
}

ExecProgram program_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("bad architecture json: ") + e.what());
  }
  try {
    ExecProgram p;
    p.family = j.at("family").get<std::string>();
    auto shp = j.at("input_shape");
    p.input_shape = {shp.at(0).get<int>(), shp.at(1).get<int>(), shp.at(2).get<int>()};
    p.num_classes = j.at("num_classes").get<int>();
    for (const auto& jn : j.at("nodes")) {
      OpNode n;
      n.kind = op_kind_from_name(jn.at("op").get<std::string>());
      n.inputs = jn.at("in").get<std::vector<int>>();
      n.output = jn.at("out").get<int>();
      if (n.weighted()) {
        n.name = jn.at("name").get<std::string>();
        n.in_ch = jn.at("in_ch").get<int>();
        n.out_ch = jn.at("out_ch").get<int>();
        if (n.kind == OpKind::conv2d) {
          n.ksize = jn.at("k").get<int>();
          n.stride = jn.at("stride").get<int>();
          n.pad = jn.at("pad").get<int>();
        }
        if (n.kind != OpKind::batchnorm) n.bias = jn.value("bias", false);
      }
      p.nodes.push_back(std::move(n));
    }
    (void)p.buffer_shapes();
    return p;
  } catch (const json::exception& e) {
    raise(ErrorCode::parse, std::string("bad architecture json: ") + e.what());
  }
}

}  // namespace weightgen
