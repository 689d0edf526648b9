// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_ARCH_HPP
#define WEIGHTGEN_CORE_ARCH_HPP

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace weightgen {

enum class LayerKind { linear, conv2d, batchnorm };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

// One row of the tokenization layout. out_dim is the number of output
// neurons/channels; fan_in the flattened input connections per output
// neuron, excluding bias. Batch-norm entries carry fan_in = 0 and
// has_bias = true: their tensor is stored as a gamma row plus a beta row.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::linear;
  int out_dim = 0;
  int fan_in = 0;
  bool has_bias = false;
  int layer_index = 0;

  // Stored tensor shape: (rows, cols).
  int tensor_rows() const { return kind == LayerKind::batchnorm ? 2 : out_dim; }
  int tensor_cols() const {
    return kind == LayerKind::batchnorm ? out_dim : fan_in + (has_bias ? 1 : 0);
  }
  // Length of one tokenized row.
  int row_len() const { return kind == LayerKind::batchnorm ? out_dim : tensor_cols(); }
  int row_count() const { return tensor_rows(); }

  bool operator==(const LayerSpec&) const = default;
};

// Ordered layer list that fully determines the tokenization layout.
// arch_id is a pure function of the layer list, so two descriptors with
// equal layers always share an id.
struct ArchitectureDescriptor {
  std::string arch_id;
  std::vector<LayerSpec> layers;

  bool operator==(const ArchitectureDescriptor&) const = default;
};

// Computes arch_id ("a" + fnv64 hex of the canonical layer serialization)
// and validates layer_index consecutiveness and batch-norm constraints.
ArchitectureDescriptor make_descriptor(std::vector<LayerSpec> layers);

// ---------------------------------------------------------------------------
// Executable architecture: a small dataflow program over image buffers.
// Buffer 0 is the network input; every node writes a fresh buffer (SSA).
// The tokenization descriptor is derived from the weighted nodes in order.
// ---------------------------------------------------------------------------

enum class OpKind {
  conv2d,
  linear,
  batchnorm,
  relu,
  tanh_act,
  maxpool2,  // 2x2, stride 2
  global_avgpool,
  flatten,
  add,  // elementwise sum of two buffers (residual join)
};

const char* op_kind_name(OpKind k);
OpKind op_kind_from_name(const std::string& s);

struct OpNode {
  OpKind kind = OpKind::relu;
  std::string name;         // weighted ops only; unique within the program
  std::vector<int> inputs;  // buffer ids
  int output = 0;           // buffer id
  // conv2d: in_ch/out_ch/ksize/stride/pad; linear: in_ch=in_dim, out_ch=out_dim;
  // batchnorm: out_ch = channels.
  int in_ch = 0;
  int out_ch = 0;
  int ksize = 0;
  int stride = 1;
  int pad = 0;
  bool bias = false;

  bool weighted() const {
    return kind == OpKind::conv2d || kind == OpKind::linear || kind == OpKind::batchnorm;
  }
};

struct BufferShape {
  int c = 0, h = 0, w = 0;
  int size() const { return c * h * w; }
  bool operator==(const BufferShape&) const = default;
};

struct ExecProgram {
  std::string family;  // registry name, informational
  BufferShape input_shape;
  int num_classes = 0;
  std::vector<OpNode> nodes;

  int buffer_count() const;
  // Shape of every buffer, input included. Validates the program.
  std::vector<BufferShape> buffer_shapes() const;
  // Tokenization descriptor for the weighted nodes, in program order.
  ArchitectureDescriptor descriptor() const;
  const OpNode& node_by_name(const std::string& name) const;
  bool has_batchnorm() const;
};

// Program builders for the reference architectures.
// small_cnn: 3 conv + 2 linear, tanh/maxpool, ~2.5k params, 1x28x28 input.
ExecProgram make_small_cnn();
// mini_resnet: conv stem + two residual basic blocks with batch-norm,
// stride-2 projection on the second stage, 3x16x16 input, ~20k params.
ExecProgram make_mini_resnet();
// toy_mlp_bn: flatten -> linear -> batchnorm -> tanh -> linear, 1x8x8 input.
// Small enough for fast zoo training, padding-heavy under small token sizes.
ExecProgram make_toy_mlp_bn();
// Plain tanh MLP over a flat input of dims[0], hidden dims[1..n-2], output dims[n-1].
ExecProgram make_mlp(const std::vector<int>& dims, bool bias = true);

// Lookup by family name ("small_cnn", "mini_resnet", "toy_mlp_bn",
// "mlp:<d0>-<d1>-...-<dn>"). Throws config error for unknown names.
ExecProgram make_program(const std::string& family);

// JSON (de)serialization of programs, used by the zoo manifest.
std::string program_to_json(const ExecProgram& p);
ExecProgram program_from_json(const std::string& json_text);

}  // namespace weightgen

#endif
