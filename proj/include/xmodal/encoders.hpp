#pragma once

#include <optional>
#include <vector>

#include "xmodal/tape.hpp"

namespace xmodal {

enum class Pooling { sgmp, max, avg };

// Per-tape parameter views. The owning model leafs its tensors onto a tape
// and groups the handles here for one forward/backward pass.
struct VisualEncoderParams {
  std::vector<Var> conv_w;  // [Cout,Cin,kh,kw] per layer
  std::vector<Var> conv_b;  // [Cout] per layer
  std::size_t stride = 2;
};

// Gates are stacked along the first axis in the order
// input, forget, candidate, output.
struct RecurrentCellParams {
  Var w_x;   // [4H,E]
  Var w_h;   // [4H,H]
  Var bias;  // [4H]
};

struct TextEncoderParams {
  Var embedding;  // [V,E]
  RecurrentCellParams fwd, bwd;
  std::size_t hidden = 0;  // H; the concatenated feature is 2H wide
};

struct RecurrentTrace {
  Var hidden;       // [N,2H], per step forward||backward hidden states
  Var final_cells;  // [2H], both directions' cell state after the full sequence
};

struct TextEncodingVars {
  Var feature;      // [D] = [2H]
  Var memory_gate;  // [D], sigmoid of final cells, strictly in (0,1)
};

// Value-level text encoding, used by evaluation and mining.
struct TextEncoding {
  Tensor feature;
  Tensor memory_gate;
};

// Spatial max gated by the sigmoid of the spatial average, per channel.
Var sgmp(Tape& tape, Var feature_map);

// One of the three pooling heads over a [C,H,W] map.
Var pool_head(Tape& tape, Var feature_map, Pooling pooling);

// Conv stack with ReLU after every layer, then the pooling head. The mask,
// when present, multiplies the pooled feature.
Var encode_image(Tape& tape, Var image, const VisualEncoderParams& params,
                 Pooling pooling, std::optional<Var> dropout_mask = {});

// Bi-directional gated recurrent pass over a token sequence.
RecurrentTrace recurrent_pass(Tape& tape, const std::vector<std::size_t>& tokens,
                              const TextEncoderParams& params, std::size_t max_len);

// Max-over-time of the hidden states plus the cell-memory gate.
TextEncodingVars encode_text(Tape& tape, const std::vector<std::size_t>& tokens,
                             const TextEncoderParams& params, std::size_t max_len,
                             std::optional<Var> dropout_mask = {});

}  // namespace xmodal
