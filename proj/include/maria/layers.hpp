#pragma once

// Reusable building blocks: embedding tables, fully-connected stacks, a
// pre-norm Transformer encoder block and trigger-aware attention pooling.
//
// Sequences are processed in batches: a batch of B sequences of length m is a
// (B*m) x d matrix, rows of one sequence contiguous. Key masks carry one byte
// per (sequence, position); 0 marks padding.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "maria/autodiff.hpp"

namespace maria::nn {

using ad::Graph;
using ad::Parameter;
using ad::ParameterStore;
using ad::Value;

enum class Activation { none, relu, sigmoid };

Value activate(Value x, Activation act);

/// Glorot-uniform weights in [-sqrt(6/(fan_in+fan_out)), +sqrt(...)].
void glorot_uniform(Parameter& p, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

struct EmbeddingTable {
  Parameter* weights = nullptr;

  static EmbeddingTable create(ParameterStore& store, const std::string& name, std::size_t rows,
                               std::size_t dim, std::mt19937_64& rng);

  std::size_t rows() const { return weights->shape.dims[0]; }
  std::size_t dim() const { return weights->shape.dims[1]; }
  Value lookup(Graph& g, std::span<const std::size_t> ids) const;
};

struct Linear {
  Parameter* weight = nullptr;  // in x out
  Parameter* bias = nullptr;    // 1 x out, absent for bias-free layers

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, bool with_bias, std::mt19937_64& rng);

  std::size_t in_width() const { return weight->shape.dims[0]; }
  std::size_t out_width() const { return weight->shape.dims[1]; }
  Value forward(Graph& g, Value x) const;
};

/// Stack of affine layers, each followed by its activation.
class Fcn {
 public:
  Fcn() = default;

  /// `dims` = {input, hidden..., output}; one activation per layer.
  static Fcn create(ParameterStore& store, const std::string& name,
                    const std::vector<std::size_t>& dims, const std::vector<Activation>& acts,
                    std::mt19937_64& rng);
  /// Hidden layers use `hidden`, the last layer uses `last`.
  static Fcn create(ParameterStore& store, const std::string& name,
                    const std::vector<std::size_t>& dims, Activation hidden, Activation last,
                    std::mt19937_64& rng);

  std::size_t in_width() const { return layers_.front().in_width(); }
  std::size_t out_width() const { return layers_.back().out_width(); }
  std::size_t depth() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  const std::vector<Linear>& layers() const { return layers_; }
  const std::vector<Activation>& activations() const { return acts_; }
  std::vector<Parameter*> parameters() const;

  Value forward(Graph& g, Value x) const;

 private:
  std::vector<Linear> layers_;
  std::vector<Activation> acts_;
};

struct TransformerConfig {
  std::size_t model_dim = 0;
  std::size_t heads = 2;
  std::size_t ffn_multiplier = 2;
};

/// One pre-norm encoder layer:
///   x1 = x + W_o * MHA(LN1(x)),  out = x1 + FFN(LN2(x1)).
class TransformerBlock {
 public:
  static TransformerBlock create(ParameterStore& store, const std::string& name,
                                 const TransformerConfig& config, std::mt19937_64& rng);

  std::size_t model_dim() const { return config_.model_dim; }
  std::size_t heads() const { return config_.heads; }

  /// Encodes `batch` sequences of length `length` stacked as rows of `seq`.
  /// When `attention` is given it receives one (batch*length) x length
  /// weight matrix per head.
  Value encode(Graph& g, Value seq, std::size_t batch, std::size_t length,
               std::span<const std::uint8_t> key_mask,
               std::vector<Value>* attention = nullptr) const;

  /// Single sequence, no padding.
  Value encode(Graph& g, Value seq) const;

 private:
  TransformerConfig config_;
  Linear query_, key_, value_, output_;
  Fcn ffn_;
  Parameter* ln1_gain_ = nullptr;
  Parameter* ln1_bias_ = nullptr;
  Parameter* ln2_gain_ = nullptr;
  Parameter* ln2_bias_ = nullptr;
};

/// Layer normalization with learned gain and bias (1 x d each).
Value layer_norm(Graph& g, Value x, Parameter& gain, Parameter& bias);

/// Attention pooling of each sequence towards its trigger:
///   score_i = sim([trigger || h_i]),  alpha = softmax(score),  out = sum alpha_i h_i.
/// `trigger` is batch x d_t, `seq` is (batch*length) x d; returns batch x d.
/// When `weights` is given it receives the batch x length alpha matrix.
Value trigger_attention(Graph& g, Value trigger, Value seq, std::size_t batch,
                        std::size_t length, std::span<const std::uint8_t> key_mask,
                        const Fcn& sim_net, Value* weights = nullptr);

/// Single trigger vector and unpadded m x d sequence.
Value trigger_attention(Graph& g, Value trigger, Value seq, const Fcn& sim_net,
                        Value* weights = nullptr);

}  // namespace maria::nn
