#include "xmodal/encoders.hpp"

namespace xmodal {

Var sgmp(Tape& tape, Var feature_map) {
  Var gmp = tape.spatial_max(feature_map);
  Var gap = tape.spatial_avg(feature_map);
  return tape.mul(gmp, tape.sigmoid(gap));
}

Var pool_head(Tape& tape, Var feature_map, Pooling pooling) {
  switch (pooling) {
    case Pooling::sgmp:
      return sgmp(tape, feature_map);
    case Pooling::max:
      return tape.spatial_max(feature_map);
    case Pooling::avg:
      return tape.spatial_avg(feature_map);
  }
  throw InputError("unknown pooling head");
}

Var encode_image(Tape& tape, Var image, const VisualEncoderParams& params,
                 Pooling pooling, std::optional<Var> dropout_mask) {
  Var x = image;
  for (std::size_t l = 0; l < params.conv_w.size(); ++l) {
    x = tape.relu(tape.conv2d(x, params.conv_w[l], params.conv_b[l], params.stride));
  }
  Var feat = pool_head(tape, x, pooling);
  if (dropout_mask) feat = tape.mul(feat, *dropout_mask);
  return feat;
}

namespace {

struct DirectionResult {
  std::vector<Var> hidden;  // per step, in sequence order
  Var final_cell;
};

// One direction of the recurrent pass. `order` lists token positions in
// processing order; hidden states are written back at their positions.
DirectionResult run_direction(Tape& tape, const std::vector<Var>& inputs,
                              const std::vector<std::size_t>& order,
                              const RecurrentCellParams& cell, std::size_t h) {
  DirectionResult out;
  out.hidden.resize(inputs.size());
  const std::size_t e = tape.value(inputs[0]).numel();
  Var hstate = tape.leaf(Tensor({h}));
  Var cstate = tape.leaf(Tensor({h}));
  for (std::size_t pos : order) {
    Var xcol = tape.reshape(inputs[pos], {e, 1});
    Var hcol = tape.reshape(hstate, {h, 1});
    Var pre = tape.add(tape.reshape(tape.matmul(cell.w_x, xcol), {4 * h}),
                       tape.reshape(tape.matmul(cell.w_h, hcol), {4 * h}));
    pre = tape.add(pre, cell.bias);
    Var gi = tape.sigmoid(tape.slice(pre, 0, h));
    Var gf = tape.sigmoid(tape.slice(pre, h, h));
    Var gc = tape.tanh(tape.slice(pre, 2 * h, h));
    Var go = tape.sigmoid(tape.slice(pre, 3 * h, h));
    cstate = tape.add(tape.mul(gf, cstate), tape.mul(gi, gc));
    hstate = tape.mul(go, tape.tanh(cstate));
    out.hidden[pos] = hstate;
  }
  out.final_cell = cstate;
  return out;
}

}  // namespace

RecurrentTrace recurrent_pass(Tape& tape, const std::vector<std::size_t>& tokens,
                              const TextEncoderParams& params, std::size_t max_len) {
  if (tokens.empty()) throw InputError("recurrent_pass: empty token sequence");
  if (tokens.size() > max_len)
    throw InputError("recurrent_pass: sequence length " + std::to_string(tokens.size()) +
                     " exceeds maximum " + std::to_string(max_len));
  const std::size_t n = tokens.size();
  const std::size_t h = params.hidden;
  const std::size_t e = tape.value(params.embedding).extent(1);

  Var embedded = tape.embed_rows(params.embedding, tokens);  // [N,E]
  std::vector<Var> inputs(n);
  std::vector<std::size_t> fwd_order(n), bwd_order(n);
  for (std::size_t i = 0; i < n; ++i) {
    inputs[i] = tape.reshape(tape.slice(tape.reshape(embedded, {n * e}), i * e, e), {e});
    fwd_order[i] = i;
    bwd_order[i] = n - 1 - i;
  }

  DirectionResult f = run_direction(tape, inputs, fwd_order, params.fwd, h);
  DirectionResult b = run_direction(tape, inputs, bwd_order, params.bwd, h);

  std::vector<Var> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = tape.concat({f.hidden[i], b.hidden[i]});
  RecurrentTrace trace;
  trace.hidden = tape.stack_rows(rows);
  trace.final_cells = tape.concat({f.final_cell, b.final_cell});
  return trace;
}

TextEncodingVars encode_text(Tape& tape, const std::vector<std::size_t>& tokens,
                             const TextEncoderParams& params, std::size_t max_len,
                             std::optional<Var> dropout_mask) {
  RecurrentTrace trace = recurrent_pass(tape, tokens, params, max_len);
  Var feature = tape.max_over_time(trace.hidden);
  if (dropout_mask) feature = tape.mul(feature, *dropout_mask);
  return TextEncodingVars{feature, tape.sigmoid(trace.final_cells)};
}

}  // namespace xmodal
