#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "dgen/dictionary_encoder.hpp"
#include "dgen/error.hpp"
#include "dgen/tensor.hpp"
#include "dgen/vocabulary.hpp"

namespace dgen {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 300;
  std::size_t hidden_dim = 512;  // split evenly between encoder directions
  std::size_t attn_dim = 512;
  std::size_t num_layers = 2;
  std::size_t dict_size = 10;  // M
  bool dictionary_guidance = true;  // false zeroes the dictionary context (ablation)

  std::size_t dict_context_dim() const { return 2 * embed_dim; }
  std::size_t combine_input_dim() const { return hidden_dim + dict_context_dim() + hidden_dim; }
  std::size_t output_input_dim() const { return embed_dim + hidden_dim + dict_context_dim() + hidden_dim; }

  void validate() const {
    if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 2 || attn_dim < 1 || num_layers < 1 || dict_size < 1)
      throw Error(ErrorCode::DimensionMismatch, "model dimensions must be positive");
    if (hidden_dim % 2 != 0)
      throw Error(ErrorCode::DimensionMismatch, "hidden_dim must be even for the bidirectional encoder");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// LSTM weights; gate rows are stacked [input; forget; cell; output].
template <typename Scalar>
struct LstmWeights {
  Matrix<Scalar> input;      // 4h x in
  Matrix<Scalar> recurrent;  // 4h x h
  Matrix<Scalar> bias;       // 4h x 1
};

template <typename Scalar>
struct ModelParameters {
  ModelConfig config;
  Matrix<Scalar> embedding;  // embed x vocab, one column per token
  std::vector<LstmWeights<Scalar>> encoder_forward;
  std::vector<LstmWeights<Scalar>> encoder_backward;
  std::vector<LstmWeights<Scalar>> decoder;
  // encoder final state -> decoder initial state, per decoder layer
  std::vector<Matrix<Scalar>> bridge_hidden, bridge_hidden_bias, bridge_cell, bridge_cell_bias;
  Matrix<Scalar> source_attn_weight;  // attn x (hidden + hidden), applied to [h_t ; state_j]
  Matrix<Scalar> source_attn_vector;  // attn x 1
  Matrix<Scalar> delete_attn_weight;  // attn x (hidden + embed), applied to [h_t ; o_i]
  Matrix<Scalar> delete_attn_vector;
  Matrix<Scalar> insert_attn_weight;  // attn x (hidden + embed), applied to [h_t ; p_i]
  Matrix<Scalar> insert_attn_vector;
  Matrix<Scalar> combine_weight;  // hidden x (hidden + 2 embed + hidden), no bias
  Matrix<Scalar> output_weight;   // vocab x (embed + hidden + 2 embed + hidden)
  Matrix<Scalar> output_bias;     // vocab x 1

  static ModelParameters zeros(const ModelConfig& cfg) {
    cfg.validate();
    const auto V = static_cast<Eigen::Index>(cfg.vocab_size), E = static_cast<Eigen::Index>(cfg.embed_dim),
               H = static_cast<Eigen::Index>(cfg.hidden_dim), A = static_cast<Eigen::Index>(cfg.attn_dim);
    const Eigen::Index Hd = H / 2;
    ModelParameters p;
    p.config = cfg;
    p.embedding = Matrix<Scalar>::Zero(E, V);
    auto lstm = [](Eigen::Index in, Eigen::Index h) {
      return LstmWeights<Scalar>{Matrix<Scalar>::Zero(4 * h, in), Matrix<Scalar>::Zero(4 * h, h),
                                 Matrix<Scalar>::Zero(4 * h, 1)};
    };
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const Eigen::Index enc_in = l == 0 ? E : H;
      p.encoder_forward.push_back(lstm(enc_in, Hd));
      p.encoder_backward.push_back(lstm(enc_in, Hd));
      p.decoder.push_back(lstm(l == 0 ? E : H, H));
      p.bridge_hidden.push_back(Matrix<Scalar>::Zero(H, H));
      p.bridge_hidden_bias.push_back(Matrix<Scalar>::Zero(H, 1));
      p.bridge_cell.push_back(Matrix<Scalar>::Zero(H, H));
      p.bridge_cell_bias.push_back(Matrix<Scalar>::Zero(H, 1));
    }
    p.source_attn_weight = Matrix<Scalar>::Zero(A, 2 * H);
    p.source_attn_vector = Matrix<Scalar>::Zero(A, 1);
    p.delete_attn_weight = Matrix<Scalar>::Zero(A, H + E);
    p.delete_attn_vector = Matrix<Scalar>::Zero(A, 1);
    p.insert_attn_weight = Matrix<Scalar>::Zero(A, H + E);
    p.insert_attn_vector = Matrix<Scalar>::Zero(A, 1);
    p.combine_weight = Matrix<Scalar>::Zero(H, static_cast<Eigen::Index>(cfg.combine_input_dim()));
    p.output_weight = Matrix<Scalar>::Zero(V, static_cast<Eigen::Index>(cfg.output_input_dim()));
    p.output_bias = Matrix<Scalar>::Zero(V, 1);
    return p;
  }

  /// Every tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Matrix<Scalar>*>> tensors() {
    std::vector<std::pair<std::string, Matrix<Scalar>*>> out;
    out.emplace_back("embedding", &embedding);
    auto add_lstm = [&out](const std::string& prefix, std::vector<LstmWeights<Scalar>>& layers) {
      for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = prefix + "." + std::to_string(l);
        out.emplace_back(p + ".input", &layers[l].input);
        out.emplace_back(p + ".recurrent", &layers[l].recurrent);
        out.emplace_back(p + ".bias", &layers[l].bias);
      }
    };
    add_lstm("encoder_forward", encoder_forward);
    add_lstm("encoder_backward", encoder_backward);
    add_lstm("decoder", decoder);
    for (std::size_t l = 0; l < bridge_hidden.size(); ++l) {
      const std::string p = "bridge." + std::to_string(l);
      out.emplace_back(p + ".hidden", &bridge_hidden[l]);
      out.emplace_back(p + ".hidden_bias", &bridge_hidden_bias[l]);
      out.emplace_back(p + ".cell", &bridge_cell[l]);
      out.emplace_back(p + ".cell_bias", &bridge_cell_bias[l]);
    }
    out.emplace_back("source_attn_weight", &source_attn_weight);
    out.emplace_back("source_attn_vector", &source_attn_vector);
    out.emplace_back("delete_attn_weight", &delete_attn_weight);
    out.emplace_back("delete_attn_vector", &delete_attn_vector);
    out.emplace_back("insert_attn_weight", &insert_attn_weight);
    out.emplace_back("insert_attn_vector", &insert_attn_vector);
    out.emplace_back("combine_weight", &combine_weight);
    out.emplace_back("output_weight", &output_weight);
    out.emplace_back("output_bias", &output_bias);
    return out;
  }

  std::vector<std::pair<std::string, const Matrix<Scalar>*>> tensors() const {
    std::vector<std::pair<std::string, const Matrix<Scalar>*>> out;
    for (auto& [name, ptr] : const_cast<ModelParameters*>(this)->tensors()) out.emplace_back(name, ptr);
    return out;
  }

  void set_zero() {
    for (auto& [name, t] : tensors()) t->setZero();
  }

  void init_uniform(std::mt19937_64& rng, double scale = 0.08) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& [name, t] : tensors())
      for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] = static_cast<Scalar>(dist(rng));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors()) n += static_cast<std::size_t>(t->size());
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, t] : tensors())
      if (!t->allFinite()) return false;
    return true;
  }

  double squared_norm() const {
    double s = 0;
    for (const auto& [name, t] : tensors()) s += static_cast<double>(t->squaredNorm());
    return s;
  }

  template <typename Other>
  ModelParameters<Other> cast() const {
    auto out = ModelParameters<Other>::zeros(config);
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<Other>();
    return out;
  }
};

template <typename Scalar>
ModelParameters<Scalar> initialize_parameters(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.08) {
  auto p = ModelParameters<Scalar>::zeros(cfg);
  std::mt19937_64 rng(seed);
  p.init_uniform(rng, scale);
  return p;
}

/// Dropout settings for one forward pass. Inference mode ignores the rate.
struct RunMode {
  bool train = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return train && dropout > 0.0 && rng != nullptr; }
};

template <typename Scalar>
struct LstmStep {
  Vector<Scalar> x, h_prev, c_prev, i, f, g, o, c, tanh_c, h;
};

template <typename Scalar>
LstmStep<Scalar> lstm_forward(const LstmWeights<Scalar>& w, const Vector<Scalar>& x, const Vector<Scalar>& h_prev,
                              const Vector<Scalar>& c_prev) {
  const Eigen::Index H = h_prev.size();
  Vector<Scalar> z = w.input * x + w.recurrent * h_prev + w.bias.col(0);
  LstmStep<Scalar> s;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  s.i = sigmoid<Scalar>(z.segment(0, H));
  s.f = sigmoid<Scalar>(z.segment(H, H));
  s.g = tanh<Scalar>(z.segment(2 * H, H));
  s.o = sigmoid<Scalar>(z.segment(3 * H, H));
  s.c = s.f.cwiseProduct(c_prev) + s.i.cwiseProduct(s.g);
  s.tanh_c = tanh<Scalar>(s.c);
  s.h = s.o.cwiseProduct(s.tanh_c);
  return s;
}

/// Backward through one LSTM step. `dc` carries the cell gradient from the
/// future in and the gradient for c_prev out.
template <typename Scalar>
void lstm_backward(const LstmWeights<Scalar>& w, LstmWeights<Scalar>& gw, const LstmStep<Scalar>& s,
                   const Vector<Scalar>& dh, Vector<Scalar>& dc, Vector<Scalar>& dx, Vector<Scalar>& dh_prev) {
  const Eigen::Index H = s.h.size();
  const auto one = Vector<Scalar>::Ones(H).array();
  Vector<Scalar> dcell = dc + (dh.array() * s.o.array() * (one - s.tanh_c.array().square())).matrix();
  Vector<Scalar> dz(4 * H);
  dz.segment(0, H) = (dcell.array() * s.g.array() * s.i.array() * (one - s.i.array())).matrix();
  dz.segment(H, H) = (dcell.array() * s.c_prev.array() * s.f.array() * (one - s.f.array())).matrix();
  dz.segment(2 * H, H) = (dcell.array() * s.i.array() * (one - s.g.array().square())).matrix();
  dz.segment(3 * H, H) = (dh.array() * s.tanh_c.array() * s.o.array() * (one - s.o.array())).matrix();
  gw.input.noalias() += dz * s.x.transpose();
  gw.recurrent.noalias() += dz * s.h_prev.transpose();
  gw.bias.col(0) += dz;
  dx.noalias() = w.input.transpose() * dz;
  dh_prev.noalias() = w.recurrent.transpose() * dz;
  dc = dcell.cwiseProduct(s.f);
}

/// Bidirectional encoder output. Column j of `states` is the concatenated
/// [forward ; backward] top-layer state for source token j.
template <typename Scalar>
struct EncoderOutput {
  TokenIds tokens;
  Matrix<Scalar> states;        // hidden x T
  Vector<Scalar> final_hidden;  // [forward state at T-1 ; backward state at 0]
  Vector<Scalar> final_cell;
  // backward caches
  std::vector<std::vector<LstmStep<Scalar>>> forward_steps, backward_steps;  // [layer][t]
  std::vector<Matrix<Scalar>> dropout_masks;  // input masks for layers >= 1 (empty when inactive)

  Eigen::Index length() const { return states.cols(); }
};

template <typename Scalar>
EncoderOutput<Scalar> encode_source(const TokenIds& tokens, const ModelParameters<Scalar>& params,
                                    RunMode mode = {}) {
  if (tokens.empty()) throw Error(ErrorCode::EmptySource, "source sentence has no tokens");
  const auto& cfg = params.config;
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const auto H = static_cast<Eigen::Index>(cfg.hidden_dim), Hd = H / 2;
  EncoderOutput<Scalar> out;
  out.tokens = tokens;
  Matrix<Scalar> input(static_cast<Eigen::Index>(cfg.embed_dim), T);
  for (Eigen::Index t = 0; t < T; ++t) input.col(t) = params.embedding.col(tokens[static_cast<std::size_t>(t)]);

  out.forward_steps.resize(cfg.num_layers);
  out.backward_steps.resize(cfg.num_layers);
  out.dropout_masks.resize(cfg.num_layers);
  Matrix<Scalar> layer_out(H, T);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    if (l > 0) {
      input = layer_out;
      if (mode.active()) {
        out.dropout_masks[l] = dropout_mask<Scalar>(H, T, mode.dropout, *mode.rng);
        input = input.cwiseProduct(out.dropout_masks[l]);
      }
    }
    auto& fwd = out.forward_steps[l];
    auto& bwd = out.backward_steps[l];
    fwd.resize(static_cast<std::size_t>(T));
    bwd.resize(static_cast<std::size_t>(T));
    Vector<Scalar> h = Vector<Scalar>::Zero(Hd), c = Vector<Scalar>::Zero(Hd);
    for (Eigen::Index t = 0; t < T; ++t) {
      fwd[static_cast<std::size_t>(t)] = lstm_forward<Scalar>(params.encoder_forward[l], input.col(t), h, c);
      h = fwd[static_cast<std::size_t>(t)].h;
      c = fwd[static_cast<std::size_t>(t)].c;
      layer_out.col(t).head(Hd) = h;
    }
    h.setZero();
    c.setZero();
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      bwd[static_cast<std::size_t>(t)] = lstm_forward<Scalar>(params.encoder_backward[l], input.col(t), h, c);
      h = bwd[static_cast<std::size_t>(t)].h;
      c = bwd[static_cast<std::size_t>(t)].c;
      layer_out.col(t).tail(Hd) = h;
    }
  }
  out.states = layer_out;
  const auto& top_f = out.forward_steps.back();
  const auto& top_b = out.backward_steps.back();
  out.final_hidden.resize(H);
  out.final_cell.resize(H);
  out.final_hidden << top_f.back().h, top_b.front().h;
  out.final_cell << top_f.back().c, top_b.front().c;
  return out;
}

template <typename Scalar>
struct DecoderCarry {
  std::vector<Vector<Scalar>> h, c;
};

template <typename Scalar>
DecoderCarry<Scalar> initial_carry(const EncoderOutput<Scalar>& enc, const ModelParameters<Scalar>& params) {
  DecoderCarry<Scalar> carry;
  for (std::size_t l = 0; l < params.config.num_layers; ++l) {
    carry.h.push_back(params.bridge_hidden[l] * enc.final_hidden + params.bridge_hidden_bias[l].col(0));
    carry.c.push_back(params.bridge_cell[l] * enc.final_cell + params.bridge_cell_bias[l].col(0));
  }
  return carry;
}

/// Additive attention v^T tanh(W [query ; item_i]) with masked softmax.
template <typename Scalar>
struct AttentionResult {
  Vector<Scalar> weights;      // n
  Vector<Scalar> context;      // value dim
  Matrix<Scalar> activations;  // attn x n, tanh(W [query ; item_i])
};

namespace detail {

// keys = W.rightCols(d) * items, precomputed once per sentence.
template <typename Scalar>
AttentionResult<Scalar> attend(const Matrix<Scalar>& weight, const Matrix<Scalar>& vector, const Vector<Scalar>& query,
                               const Matrix<Scalar>& keys, const Matrix<Scalar>& values, const std::vector<bool>& mask) {
  const Eigen::Index hq = query.size();
  Vector<Scalar> q = weight.leftCols(hq) * query;
  AttentionResult<Scalar> r;
  r.activations = (keys.colwise() + q).array().tanh().matrix();
  Vector<Scalar> scores = r.activations.transpose() * vector.col(0);
  r.weights = masked_softmax<Scalar>(scores, mask);
  r.context = values * r.weights;
  return r;
}

// Accumulates parameter gradients and returns d(query); d(keys) and d(values)
// are accumulated into the caller's buffers.
template <typename Scalar>
Vector<Scalar> attend_backward(const Matrix<Scalar>& weight, const Matrix<Scalar>& vector, Matrix<Scalar>& g_weight,
                               Matrix<Scalar>& g_vector, const Vector<Scalar>& query, const Matrix<Scalar>& values,
                               const AttentionResult<Scalar>& r, const Vector<Scalar>& d_context,
                               Matrix<Scalar>& d_keys, Matrix<Scalar>& d_values, bool skip_softmax_jacobian = false) {
  const Eigen::Index hq = query.size();
  d_values.noalias() += d_context * r.weights.transpose();
  Vector<Scalar> d_weights = values.transpose() * d_context;
  Vector<Scalar> d_scores;
  if (skip_softmax_jacobian) {
    d_scores = d_weights;
  } else {
    d_scores = r.weights.cwiseProduct((d_weights.array() - r.weights.dot(d_weights)).matrix());
  }
  g_vector.col(0).noalias() += r.activations * d_scores;
  Matrix<Scalar> d_pre = (vector.col(0) * d_scores.transpose()).cwiseProduct(
      (Matrix<Scalar>::Ones(r.activations.rows(), r.activations.cols()) - r.activations.cwiseAbs2()));
  d_keys += d_pre;
  Vector<Scalar> d_q = d_pre.rowwise().sum();
  g_weight.leftCols(hq).noalias() += d_q * query.transpose();
  return weight.leftCols(hq).transpose() * d_q;
}

}  // namespace detail

/// Source-side context c'_t over the encoder states.
template <typename Scalar>
AttentionResult<Scalar> source_attention(const Vector<Scalar>& h_t, const EncoderOutput<Scalar>& enc,
                                         const ModelParameters<Scalar>& params) {
  const auto H = static_cast<Eigen::Index>(params.config.hidden_dim);
  Matrix<Scalar> keys = params.source_attn_weight.rightCols(H) * enc.states;
  return detail::attend<Scalar>(params.source_attn_weight, params.source_attn_vector, h_t, keys, enc.states,
                                std::vector<bool>(static_cast<std::size_t>(enc.length()), true));
}

/// Delete attention a_t over the source-side phrase vectors; context is Σ a_i o_i.
template <typename Scalar>
AttentionResult<Scalar> delete_attention(const Vector<Scalar>& h_t, const EncodedDictionary<Scalar>& ed,
                                         const ModelParameters<Scalar>& params) {
  const auto E = static_cast<Eigen::Index>(params.config.embed_dim);
  Matrix<Scalar> keys = params.delete_attn_weight.rightCols(E) * ed.o_vectors.transpose();
  return detail::attend<Scalar>(params.delete_attn_weight, params.delete_attn_vector, h_t, keys,
                                ed.o_vectors.transpose(), ed.mask);
}

/// Insert attention a'_t over the target-side phrase vectors; context is Σ a'_i p_i.
template <typename Scalar>
AttentionResult<Scalar> insert_attention(const Vector<Scalar>& h_t, const EncodedDictionary<Scalar>& ed,
                                         const ModelParameters<Scalar>& params) {
  const auto E = static_cast<Eigen::Index>(params.config.embed_dim);
  Matrix<Scalar> keys = params.insert_attn_weight.rightCols(E) * ed.p_vectors.transpose();
  return detail::attend<Scalar>(params.insert_attn_weight, params.insert_attn_vector, h_t, keys,
                                ed.p_vectors.transpose(), ed.mask);
}

/// c_t = [delete-side context ; insert-side context].
template <typename Scalar>
Vector<Scalar> dictionary_context(const Vector<Scalar>& o_context, const Vector<Scalar>& p_context) {
  Vector<Scalar> c(o_context.size() + p_context.size());
  c << o_context, p_context;
  return c;
}

/// h~_t = tanh(W_c [h_t ; c_t ; c'_t]).
template <typename Scalar>
Vector<Scalar> combine(const Vector<Scalar>& h_t, const Vector<Scalar>& c_t, const Vector<Scalar>& source_context,
                       const ModelParameters<Scalar>& params) {
  Vector<Scalar> q(h_t.size() + c_t.size() + source_context.size());
  q << h_t, c_t, source_context;
  return tanh<Scalar>(params.combine_weight * q);
}

template <typename Scalar>
Vector<Scalar> output_logits(const Vector<Scalar>& prev_embedding, const Vector<Scalar>& combined,
                             const Vector<Scalar>& c_t, const Vector<Scalar>& source_context,
                             const ModelParameters<Scalar>& params) {
  Vector<Scalar> r(prev_embedding.size() + combined.size() + c_t.size() + source_context.size());
  r << prev_embedding, combined, c_t, source_context;
  return params.output_weight * r + params.output_bias.col(0);
}

/// softmax(W_y [Φ(y_{t-1}) ; h~_t ; c_t ; c'_t] + b_y).
template <typename Scalar>
Vector<Scalar> output_distribution(const Vector<Scalar>& prev_embedding, const Vector<Scalar>& combined,
                                   const Vector<Scalar>& c_t, const Vector<Scalar>& source_context,
                                   const ModelParameters<Scalar>& params) {
  return softmax<Scalar>(output_logits(prev_embedding, combined, c_t, source_context, params));
}

/// Per-step attention weights for visualization.
struct TraceRecord {
  std::size_t step = 0;
  TokenId token = kPad;
  std::vector<double> delete_weights;  // a_t, length M
  std::vector<double> insert_weights;  // a'_t, length M
  std::vector<double> source_weights;  // length T_src
};

/// Per-sentence tensors shared by every decoder step.
template <typename Scalar>
struct DecodeContext {
  const EncoderOutput<Scalar>* enc = nullptr;
  const EncodedDictionary<Scalar>* dict = nullptr;
  Matrix<Scalar> source_keys;  // attn x T
  Matrix<Scalar> delete_keys;  // attn x M
  Matrix<Scalar> insert_keys;  // attn x M
  Matrix<Scalar> o_columns;    // embed x M
  Matrix<Scalar> p_columns;
  std::vector<bool> source_mask;

  DecodeContext(const EncoderOutput<Scalar>& e, const EncodedDictionary<Scalar>& d,
                const ModelParameters<Scalar>& params)
      : enc(&e), dict(&d) {
    if (d.rows() != params.config.dict_size)
      throw Error(ErrorCode::DimensionMismatch, "encoded dictionary rows != dict_size");
    const auto H = static_cast<Eigen::Index>(params.config.hidden_dim);
    const auto E = static_cast<Eigen::Index>(params.config.embed_dim);
    source_keys = params.source_attn_weight.rightCols(H) * e.states;
    o_columns = d.o_vectors.transpose();
    p_columns = d.p_vectors.transpose();
    delete_keys = params.delete_attn_weight.rightCols(E) * o_columns;
    insert_keys = params.insert_attn_weight.rightCols(E) * p_columns;
    source_mask.assign(static_cast<std::size_t>(e.length()), true);
  }
};

template <typename Scalar>
struct StepCache {
  TokenId prev_token = kBos;
  std::vector<LstmStep<Scalar>> layers;
  std::vector<Matrix<Scalar>> dropout_masks;  // [l] masks input of layer l (l >= 1); [num_layers] masks h_t
  Vector<Scalar> query;                       // h_t after dropout
  AttentionResult<Scalar> source, del, ins;
  bool guided = true;
  Vector<Scalar> dict_context;  // c_t
  Vector<Scalar> combine_input;
  Vector<Scalar> combined;  // h~_t
  Vector<Scalar> output_input;
  Vector<Scalar> logits;
  Vector<Scalar> probs;
};

template <typename Scalar>
StepCache<Scalar> decoder_step_forward(const ModelParameters<Scalar>& params, const DecodeContext<Scalar>& ctx,
                                       DecoderCarry<Scalar>& carry, TokenId prev_token, RunMode mode = {}) {
  const auto& cfg = params.config;
  const auto L = cfg.num_layers;
  const auto E = static_cast<Eigen::Index>(cfg.embed_dim);
  StepCache<Scalar> s;
  s.prev_token = prev_token;
  s.layers.resize(L);
  s.dropout_masks.resize(L + 1);
  Vector<Scalar> x = params.embedding.col(prev_token);
  for (std::size_t l = 0; l < L; ++l) {
    if (l > 0 && mode.active()) {
      s.dropout_masks[l] = dropout_mask<Scalar>(x.size(), 1, mode.dropout, *mode.rng);
      x = x.cwiseProduct(s.dropout_masks[l].col(0));
    }
    s.layers[l] = lstm_forward<Scalar>(params.decoder[l], x, carry.h[l], carry.c[l]);
    carry.h[l] = s.layers[l].h;
    carry.c[l] = s.layers[l].c;
    x = s.layers[l].h;
  }
  if (mode.active()) {
    s.dropout_masks[L] = dropout_mask<Scalar>(x.size(), 1, mode.dropout, *mode.rng);
    x = x.cwiseProduct(s.dropout_masks[L].col(0));
  }
  s.query = x;

  s.source = detail::attend<Scalar>(params.source_attn_weight, params.source_attn_vector, s.query, ctx.source_keys,
                                    ctx.enc->states, ctx.source_mask);
  s.guided = cfg.dictionary_guidance;
  if (s.guided) {
    s.del = detail::attend<Scalar>(params.delete_attn_weight, params.delete_attn_vector, s.query, ctx.delete_keys,
                                   ctx.o_columns, ctx.dict->mask);
    s.ins = detail::attend<Scalar>(params.insert_attn_weight, params.insert_attn_vector, s.query, ctx.insert_keys,
                                   ctx.p_columns, ctx.dict->mask);
    s.dict_context = dictionary_context<Scalar>(s.del.context, s.ins.context);
  } else {
    const auto M = static_cast<Eigen::Index>(cfg.dict_size);
    s.del.weights = s.ins.weights = Vector<Scalar>::Zero(M);
    s.dict_context = Vector<Scalar>::Zero(2 * E);
  }

  s.combine_input.resize(static_cast<Eigen::Index>(cfg.combine_input_dim()));
  s.combine_input << s.query, s.dict_context, s.source.context;
  s.combined = tanh<Scalar>(params.combine_weight * s.combine_input);
  s.output_input.resize(static_cast<Eigen::Index>(cfg.output_input_dim()));
  s.output_input << params.embedding.col(prev_token), s.combined, s.dict_context, s.source.context;
  s.logits = params.output_weight * s.output_input + params.output_bias.col(0);
  s.probs = softmax<Scalar>(s.logits);
  return s;
}

template <typename Scalar>
TraceRecord make_trace_record(const StepCache<Scalar>& s, std::size_t step, TokenId token) {
  auto to_std = [](const Vector<Scalar>& v) {
    std::vector<double> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(v(i));
    return out;
  };
  return {step, token, to_std(s.del.weights), to_std(s.ins.weights), to_std(s.source.weights)};
}

template <typename Scalar>
struct StepOutput {
  DecoderCarry<Scalar> carry;
  Vector<Scalar> distribution;
  TraceRecord trace;
};

/// One decoding step in inference mode. The trace record's token is left as
/// PAD; the caller fills in whatever it emits.
template <typename Scalar>
StepOutput<Scalar> decoder_step(const DecoderCarry<Scalar>& carry, TokenId prev_token, const EncoderOutput<Scalar>& enc,
                                const EncodedDictionary<Scalar>& ed, const ModelParameters<Scalar>& params,
                                std::size_t step = 0) {
  DecodeContext<Scalar> ctx(enc, ed, params);
  StepOutput<Scalar> out{carry, {}, {}};
  auto cache = decoder_step_forward(params, ctx, out.carry, prev_token);
  out.distribution = cache.probs;
  out.trace = make_trace_record(cache, step, kPad);
  return out;
}

/// One training pair with its precomputed dictionary. `target` is wrapped
/// as [BOS, y_1, ..., y_n, EOS].
struct TrainingExample {
  TokenIds source;
  TokenIds target;
  std::vector<DictionaryPairIds> dictionary;
};

template <typename Scalar>
struct SequenceForward {
  EncoderOutput<Scalar> enc;
  EncodedDictionary<Scalar> dict;
  DecoderCarry<Scalar> init;
  std::vector<StepCache<Scalar>> steps;
  std::common_type_t<Scalar, double> loss = 0;  // -Σ log p(y_t), at least double precision
  std::size_t correct = 0;
  std::size_t predicted = 0;
};

template <typename Scalar>
SequenceForward<Scalar> forward_sequence(const ModelParameters<Scalar>& params, const TrainingExample& ex,
                                         RunMode mode = {}) {
  if (ex.target.size() < 2) throw Error(ErrorCode::EmptyCorpus, "target must contain at least BOS and EOS");
  SequenceForward<Scalar> f;
  f.enc = encode_source(ex.source, params, mode);
  f.dict = encode_pairs(ex.dictionary, params.embedding, params.config.dict_size);
  f.init = initial_carry(f.enc, params);
  DecodeContext<Scalar> ctx(f.enc, f.dict, params);
  DecoderCarry<Scalar> carry = f.init;
  const std::size_t steps = ex.target.size() - 1;
  f.steps.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    f.steps.push_back(decoder_step_forward(params, ctx, carry, ex.target[t], mode));
    const auto& s = f.steps.back();
    const TokenId gold = ex.target[t + 1];
    using Accum = std::common_type_t<Scalar, double>;
    f.loss -= static_cast<Accum>(s.logits(gold)) - static_cast<Accum>(log_sum_exp<Scalar>(s.logits));
    Eigen::Index best = 0;
    s.logits.maxCoeff(&best);
    f.correct += static_cast<std::size_t>(best == gold);
    ++f.predicted;
  }
  return f;
}

/// Test hook: breaks one backward path so the gradient checker can prove it notices.
struct GradientFaults {
  bool corrupt_insert_attention = false;
};

/// Accumulates scale * d(loss)/d(params) into grads.
template <typename Scalar>
void backward_sequence(const ModelParameters<Scalar>& params, const SequenceForward<Scalar>& f,
                       const TrainingExample& ex, ModelParameters<Scalar>& grads, Scalar scale = Scalar(1),
                       GradientFaults faults = {}) {
  const auto& cfg = params.config;
  const auto L = cfg.num_layers;
  const auto E = static_cast<Eigen::Index>(cfg.embed_dim), H = static_cast<Eigen::Index>(cfg.hidden_dim),
             A = static_cast<Eigen::Index>(cfg.attn_dim), M = static_cast<Eigen::Index>(cfg.dict_size);
  const Eigen::Index T = f.enc.length();

  Matrix<Scalar> d_states = Matrix<Scalar>::Zero(H, T);
  Matrix<Scalar> d_source_keys = Matrix<Scalar>::Zero(A, T);
  Matrix<Scalar> d_o = Matrix<Scalar>::Zero(E, M), d_p = Matrix<Scalar>::Zero(E, M);
  Matrix<Scalar> d_delete_keys = Matrix<Scalar>::Zero(A, M), d_insert_keys = Matrix<Scalar>::Zero(A, M);
  const Matrix<Scalar> o_columns = f.dict.o_vectors.transpose();
  const Matrix<Scalar> p_columns = f.dict.p_vectors.transpose();

  DecoderCarry<Scalar> d_carry;
  for (std::size_t l = 0; l < L; ++l) {
    d_carry.h.push_back(Vector<Scalar>::Zero(H));
    d_carry.c.push_back(Vector<Scalar>::Zero(H));
  }

  for (std::size_t t = f.steps.size(); t-- > 0;) {
    const auto& s = f.steps[t];
    const TokenId gold = ex.target[t + 1];
    Vector<Scalar> d_logits = s.probs;
    d_logits(gold) -= Scalar(1);
    d_logits *= scale;
    grads.output_weight.noalias() += d_logits * s.output_input.transpose();
    grads.output_bias.col(0) += d_logits;
    Vector<Scalar> d_out_in = params.output_weight.transpose() * d_logits;
    Vector<Scalar> d_prev_emb = d_out_in.segment(0, E);
    Vector<Scalar> d_combined = d_out_in.segment(E, H);
    Vector<Scalar> d_dict_ctx = d_out_in.segment(E + H, 2 * E);
    Vector<Scalar> d_src_ctx = d_out_in.segment(E + H + 2 * E, H);

    Vector<Scalar> d_pre = d_combined.cwiseProduct((Vector<Scalar>::Ones(H) - s.combined.cwiseAbs2()));
    grads.combine_weight.noalias() += d_pre * s.combine_input.transpose();
    Vector<Scalar> d_comb_in = params.combine_weight.transpose() * d_pre;
    Vector<Scalar> d_query = d_comb_in.segment(0, H);
    d_dict_ctx += d_comb_in.segment(H, 2 * E);
    d_src_ctx += d_comb_in.segment(H + 2 * E, H);

    d_query += detail::attend_backward<Scalar>(params.source_attn_weight, params.source_attn_vector,
                                               grads.source_attn_weight, grads.source_attn_vector, s.query,
                                               f.enc.states, s.source, d_src_ctx, d_source_keys, d_states);
    if (s.guided) {
      d_query += detail::attend_backward<Scalar>(params.delete_attn_weight, params.delete_attn_vector,
                                                 grads.delete_attn_weight, grads.delete_attn_vector, s.query,
                                                 o_columns, s.del, Vector<Scalar>(d_dict_ctx.head(E)), d_delete_keys,
                                                 d_o);
      d_query += detail::attend_backward<Scalar>(params.insert_attn_weight, params.insert_attn_vector,
                                                 grads.insert_attn_weight, grads.insert_attn_vector, s.query,
                                                 p_columns, s.ins, Vector<Scalar>(d_dict_ctx.tail(E)), d_insert_keys,
                                                 d_p, faults.corrupt_insert_attention);
    }

    Vector<Scalar> d_h = d_query;
    if (s.dropout_masks[L].size()) d_h = d_h.cwiseProduct(s.dropout_masks[L].col(0));
    Vector<Scalar> dx, dh_prev;
    for (std::size_t l = L; l-- > 0;) {
      d_h += d_carry.h[l];
      lstm_backward<Scalar>(params.decoder[l], grads.decoder[l], s.layers[l], d_h, d_carry.c[l], dx, dh_prev);
      d_carry.h[l] = dh_prev;
      if (l > 0) {
        d_h = s.dropout_masks[l].size() ? Vector<Scalar>(dx.cwiseProduct(s.dropout_masks[l].col(0))) : dx;
      } else {
        d_prev_emb += dx;
      }
    }
    grads.embedding.col(s.prev_token) += d_prev_emb;
  }

  // keys were precomputed from the key half of each attention weight
  grads.source_attn_weight.rightCols(H).noalias() += d_source_keys * f.enc.states.transpose();
  d_states.noalias() += params.source_attn_weight.rightCols(H).transpose() * d_source_keys;
  if (cfg.dictionary_guidance) {
    grads.delete_attn_weight.rightCols(E).noalias() += d_delete_keys * o_columns.transpose();
    d_o.noalias() += params.delete_attn_weight.rightCols(E).transpose() * d_delete_keys;
    grads.insert_attn_weight.rightCols(E).noalias() += d_insert_keys * p_columns.transpose();
    d_p.noalias() += params.insert_attn_weight.rightCols(E).transpose() * d_insert_keys;
    for (Eigen::Index i = 0; i < M; ++i) {
      for (auto id : f.dict.o_ids[static_cast<std::size_t>(i)]) grads.embedding.col(id) += d_o.col(i);
      for (auto id : f.dict.p_ids[static_cast<std::size_t>(i)]) grads.embedding.col(id) += d_p.col(i);
    }
  }

  // bridge
  Vector<Scalar> d_final_h = Vector<Scalar>::Zero(H), d_final_c = Vector<Scalar>::Zero(H);
  for (std::size_t l = 0; l < L; ++l) {
    grads.bridge_hidden[l].noalias() += d_carry.h[l] * f.enc.final_hidden.transpose();
    grads.bridge_hidden_bias[l].col(0) += d_carry.h[l];
    d_final_h.noalias() += params.bridge_hidden[l].transpose() * d_carry.h[l];
    grads.bridge_cell[l].noalias() += d_carry.c[l] * f.enc.final_cell.transpose();
    grads.bridge_cell_bias[l].col(0) += d_carry.c[l];
    d_final_c.noalias() += params.bridge_cell[l].transpose() * d_carry.c[l];
  }

  // encoder
  const Eigen::Index Hd = H / 2;
  Matrix<Scalar> d_layer_out = d_states;
  for (std::size_t l = L; l-- > 0;) {
    const bool top = l + 1 == L;
    const Eigen::Index in_dim = l == 0 ? E : H;
    Matrix<Scalar> d_input = Matrix<Scalar>::Zero(in_dim, T);
    Vector<Scalar> dx, dh_prev;

    Vector<Scalar> dh = top ? Vector<Scalar>(d_final_h.head(Hd)) : Vector<Scalar>::Zero(Hd);
    Vector<Scalar> dc = top ? Vector<Scalar>(d_final_c.head(Hd)) : Vector<Scalar>::Zero(Hd);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      Vector<Scalar> d_total = d_layer_out.col(t).head(Hd) + dh;
      lstm_backward<Scalar>(params.encoder_forward[l], grads.encoder_forward[l],
                            f.enc.forward_steps[l][static_cast<std::size_t>(t)], d_total, dc, dx, dh_prev);
      d_input.col(t) += dx;
      dh = dh_prev;
    }
    dh = top ? Vector<Scalar>(d_final_h.tail(Hd)) : Vector<Scalar>::Zero(Hd);
    dc = top ? Vector<Scalar>(d_final_c.tail(Hd)) : Vector<Scalar>::Zero(Hd);
    for (Eigen::Index t = 0; t < T; ++t) {
      Vector<Scalar> d_total = d_layer_out.col(t).tail(Hd) + dh;
      lstm_backward<Scalar>(params.encoder_backward[l], grads.encoder_backward[l],
                            f.enc.backward_steps[l][static_cast<std::size_t>(t)], d_total, dc, dx, dh_prev);
      d_input.col(t) += dx;
      dh = dh_prev;
    }
    if (l > 0) {
      d_layer_out = f.enc.dropout_masks[l].size() ? Matrix<Scalar>(d_input.cwiseProduct(f.enc.dropout_masks[l]))
                                                  : d_input;
    } else {
      for (Eigen::Index t = 0; t < T; ++t) grads.embedding.col(f.enc.tokens[static_cast<std::size_t>(t)]) += d_input.col(t);
    }
  }
}

}  // namespace dgen
