#include "maria/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace maria::nn {

Value activate(Value x, Activation act) {
  switch (act) {
    case Activation::relu:
      return ad::relu(x);
    case Activation::sigmoid:
      return ad::sigmoid(x);
    case Activation::none:
      break;
  }
  return x;
}

void glorot_uniform(Parameter& p, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : p.data) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    x = (2.0 * u - 1.0) * limit;
  }
}

EmbeddingTable EmbeddingTable::create(ParameterStore& store, const std::string& name,
                                      std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
  EmbeddingTable t;
  t.weights = &store.create(name, ad::Shape::matrix(rows, dim));
  glorot_uniform(*t.weights, rows, dim, rng);
  return t;
}

Value EmbeddingTable::lookup(Graph& g, std::span<const std::size_t> ids) const {
  return ad::embed(g, *weights, ids);
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, bool with_bias, std::mt19937_64& rng) {
  Linear l;
  l.weight = &store.create(name + ".w", ad::Shape::matrix(in, out));
  glorot_uniform(*l.weight, in, out, rng);
  if (with_bias) l.bias = &store.create(name + ".b", ad::Shape::matrix(1, out));
  return l;
}

Value Linear::forward(Graph& g, Value x) const {
  if (x.cols() != in_width()) {
    throw ad::ShapeError("linear '" + weight->name + "': input width " + std::to_string(x.cols()) +
                         " does not match " + std::to_string(in_width()));
  }
  Value y = ad::matmul(x, ad::param(g, *weight));
  if (bias) y = ad::add(y, ad::param(g, *bias));
  return y;
}

Fcn Fcn::create(ParameterStore& store, const std::string& name,
                const std::vector<std::size_t>& dims, const std::vector<Activation>& acts,
                std::mt19937_64& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1) {
    throw std::invalid_argument("fcn '" + name + "': need at least two widths and one activation per layer");
  }
  Fcn f;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] == 0 || dims[i + 1] == 0) {
      throw std::invalid_argument("fcn '" + name + "': zero layer width");
    }
    f.layers_.push_back(
        Linear::create(store, name + ".l" + std::to_string(i), dims[i], dims[i + 1], true, rng));
  }
  f.acts_ = acts;
  return f;
}

Fcn Fcn::create(ParameterStore& store, const std::string& name,
                const std::vector<std::size_t>& dims, Activation hidden, Activation last,
                std::mt19937_64& rng) {
  std::vector<Activation> acts(dims.size() < 2 ? 0 : dims.size() - 1, hidden);
  if (!acts.empty()) acts.back() = last;
  return create(store, name, dims, acts, rng);
}

std::vector<Parameter*> Fcn::parameters() const {
  std::vector<Parameter*> out;
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    if (l.bias) out.push_back(l.bias);
  }
  return out;
}

Value Fcn::forward(Graph& g, Value x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) x = activate(layers_[i].forward(g, x), acts_[i]);
  return x;
}

Value layer_norm(Graph& g, Value x, Parameter& gain, Parameter& bias) {
  return ad::add(ad::mul(ad::normalize_rows(x), ad::param(g, gain)), ad::param(g, bias));
}

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& name,
                                          const TransformerConfig& config, std::mt19937_64& rng) {
  if (config.model_dim == 0 || config.heads == 0 || config.model_dim % config.heads != 0) {
    throw std::invalid_argument("transformer '" + name + "': model_dim " +
                                std::to_string(config.model_dim) + " is not divisible by " +
                                std::to_string(config.heads) + " heads");
  }
  TransformerBlock b;
  b.config_ = config;
  const std::size_t d = config.model_dim;
  b.query_ = Linear::create(store, name + ".q", d, d, true, rng);
  b.key_ = Linear::create(store, name + ".k", d, d, true, rng);
  b.value_ = Linear::create(store, name + ".v", d, d, true, rng);
  b.output_ = Linear::create(store, name + ".o", d, d, true, rng);
  b.ffn_ = Fcn::create(store, name + ".ffn", {d, config.ffn_multiplier * d, d}, Activation::relu,
                       Activation::none, rng);
  b.ln1_gain_ = &store.create(name + ".ln1.gain", ad::Shape::matrix(1, d));
  b.ln1_bias_ = &store.create(name + ".ln1.bias", ad::Shape::matrix(1, d));
  b.ln2_gain_ = &store.create(name + ".ln2.gain", ad::Shape::matrix(1, d));
  b.ln2_bias_ = &store.create(name + ".ln2.bias", ad::Shape::matrix(1, d));
  std::fill(b.ln1_gain_->data.begin(), b.ln1_gain_->data.end(), 1.0);
  std::fill(b.ln2_gain_->data.begin(), b.ln2_gain_->data.end(), 1.0);
  return b;
}

Value TransformerBlock::encode(Graph& g, Value seq, std::size_t batch, std::size_t length,
                               std::span<const std::uint8_t> key_mask,
                               std::vector<Value>* attention) const {
  const std::size_t d = config_.model_dim;
  if (seq.cols() != d) {
    throw ad::ShapeError("transformer: input width " + std::to_string(seq.cols()) +
                         " does not match model_dim " + std::to_string(d));
  }
  if (length == 0 || seq.rows() != batch * length) {
    throw ad::ShapeError("transformer: " + seq.shape().str() + " is not " + std::to_string(batch) +
                         " sequences of length " + std::to_string(length));
  }
  if (key_mask.size() != batch * length) {
    throw ad::ShapeError("transformer: key mask has " + std::to_string(key_mask.size()) +
                         " entries, expected " + std::to_string(batch * length));
  }
  // Every query row of a sequence shares that sequence's key mask.
  std::vector<std::uint8_t> score_mask(batch * length * length);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < length; ++i)
      for (std::size_t j = 0; j < length; ++j)
        score_mask[(b * length + i) * length + j] = key_mask[b * length + j];

  const std::size_t dh = d / config_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Value x = layer_norm(g, seq, *ln1_gain_, *ln1_bias_);
  Value q = query_.forward(g, x);
  Value k = key_.forward(g, x);
  Value v = value_.forward(g, x);
  std::vector<Value> heads;
  for (std::size_t h = 0; h < config_.heads; ++h) {
    Value qh = ad::slice(q, h * dh, dh);
    Value kh = ad::slice(k, h * dh, dh);
    Value vh = ad::slice(v, h * dh, dh);
    Value scores = ad::scale(ad::batched_matmul(qh, kh, batch, true), inv_sqrt);
    Value weights = ad::masked_softmax(scores, score_mask);
    if (attention) attention->push_back(weights);
    heads.push_back(ad::batched_matmul(weights, vh, batch, false));
  }
  Value attended = output_.forward(g, ad::concat(heads));
  Value x1 = ad::add(seq, attended);
  Value ff = ffn_.forward(g, layer_norm(g, x1, *ln2_gain_, *ln2_bias_));
  return ad::add(x1, ff);
}

Value TransformerBlock::encode(Graph& g, Value seq) const {
  std::vector<std::uint8_t> mask(seq.rows(), 1);
  return encode(g, seq, 1, seq.rows(), mask);
}

Value trigger_attention(Graph& g, Value trigger, Value seq, std::size_t batch,
                        std::size_t length, std::span<const std::uint8_t> key_mask,
                        const Fcn& sim_net, Value* weights) {
  const std::size_t d = seq.cols();
  if (sim_net.in_width() != trigger.cols() + d || sim_net.out_width() != 1) {
    throw ad::ShapeError("trigger_attention: sim_net maps " + std::to_string(sim_net.in_width()) +
                         " -> " + std::to_string(sim_net.out_width()) + ", expected " +
                         std::to_string(trigger.cols() + d) + " -> 1");
  }
  if (trigger.rows() != batch || seq.rows() != batch * length || key_mask.size() != batch * length) {
    throw ad::ShapeError("trigger_attention: trigger " + trigger.shape().str() + " and sequence " +
                         seq.shape().str() + " disagree on batch " + std::to_string(batch) +
                         " x length " + std::to_string(length));
  }
  Value paired = ad::concat(std::vector<Value>{ad::repeat_rows(trigger, length), seq});
  Value scores = ad::reshape(sim_net.forward(g, paired), ad::Shape::matrix(batch, length));
  Value alpha = ad::masked_softmax(scores, key_mask);
  if (weights) *weights = alpha;
  return ad::batched_matmul(alpha, seq, batch, false);
}

Value trigger_attention(Graph& g, Value trigger, Value seq, const Fcn& sim_net, Value* weights) {
  Value t = ad::reshape(trigger, ad::Shape::matrix(1, trigger.numel()));
  std::vector<std::uint8_t> mask(seq.rows(), 1);
  Value out = trigger_attention(g, t, seq, 1, seq.rows(), mask, sim_net, weights);
  return ad::reshape(out, ad::Shape{out.numel()});
}

}  // namespace maria::nn
