#include "maria/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "maria/util.hpp"

namespace maria {

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::maria: return "maria";
    case ModelKind::hard_sharing: return "hard_sharing";
    case ModelKind::shared_bottom: return "shared_bottom";
    case ModelKind::mmoe: return "mmoe";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "maria") return ModelKind::maria;
  if (s == "hard_sharing") return ModelKind::hard_sharing;
  if (s == "shared_bottom") return ModelKind::shared_bottom;
  if (s == "mmoe") return ModelKind::mmoe;
  throw ConfigError("unknown model kind '" + s + "' (maria, hard_sharing, shared_bottom, mmoe)");
}

// ---- batch inputs ----------------------------------------------------------

BatchInputs BatchInputs::from(std::span<const Instance* const> instances, const Schema& schema,
                              const Vocabulary& vocab) {
  BatchInputs b;
  b.size = instances.size();
  b.length = schema.max_behaviors;
  const std::size_t m = schema.max_behaviors;
  const std::size_t pad_item = vocab.items;
  const std::size_t pad_attr = vocab.item_attrs;
  const std::size_t missing_trigger_attr = vocab.trigger_attrs;
  for (const Instance* p : instances) {
    const Instance& inst = *p;
    validate(inst, schema, vocab);
    b.scenario.push_back(inst.scenario);
    b.user.push_back(inst.user);
    b.user_attrs.insert(b.user_attrs.end(), inst.user_attrs.begin(), inst.user_attrs.end());
    const std::size_t pad = m - inst.behavior.size();
    for (std::size_t j = 0; j < pad; ++j) {
      b.behavior_items.push_back(pad_item);
      b.behavior_attrs.insert(b.behavior_attrs.end(), schema.item_attrs, pad_attr);
      b.key_mask.push_back(0);
    }
    for (const BehaviorItem& x : inst.behavior) {
      b.behavior_items.push_back(x.item);
      b.behavior_attrs.insert(b.behavior_attrs.end(), x.attrs.begin(), x.attrs.end());
      b.key_mask.push_back(1);
    }
    b.target.push_back(inst.target_item);
    b.target_attrs.insert(b.target_attrs.end(), inst.target_attrs.begin(), inst.target_attrs.end());
    const Trigger& t = inst.trigger;
    if (t.kind == TriggerKind::image) {
      b.image.insert(b.image.end(), t.vector.begin(), t.vector.end());
      b.image_rows.push_back(1.0);
    } else {
      b.image.insert(b.image.end(), schema.image_dim, 0.0);
      b.image_rows.push_back(0.0);
    }
    if (t.kind == TriggerKind::product) {
      b.trigger_items.push_back(t.item);
      b.trigger_attrs.insert(b.trigger_attrs.end(), t.attrs.begin(), t.attrs.end());
    } else {
      b.trigger_items.push_back(inst.target_item);
      b.trigger_attrs.insert(b.trigger_attrs.end(), schema.trigger_attrs, missing_trigger_attr);
    }
    b.no_trigger.push_back(t.kind == TriggerKind::none ? 1.0 : 0.0);
    b.context.insert(b.context.end(), inst.context.begin(), inst.context.end());
    b.labels.push_back(static_cast<double>(inst.label));
  }
  return b;
}

BatchInputs BatchInputs::from(std::span<const Instance> instances, const Schema& schema,
                              const Vocabulary& vocab) {
  std::vector<const Instance*> ptrs;
  ptrs.reserve(instances.size());
  for (const Instance& i : instances) ptrs.push_back(&i);
  return from(std::span<const Instance* const>(ptrs), schema, vocab);
}

// ---- encoder ---------------------------------------------------------------

namespace {

void check_config(const ModelConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(c.schema.max_behaviors >= 1, "max_behaviors must be at least 1");
  need(c.schema.context_attrs >= 1, "context_attrs must be at least 1");
  need(c.schema.image_dim >= 1, "image_dim must be at least 1");
  need(c.vocab.scenarios >= 1, "need at least one scenario");
  need(c.user_dim > 0 && c.item_dim > 0 && c.attr_dim > 0 && c.context_dim > 0 &&
           c.scenario_dim > 0,
       "embedding dims must be positive");
  need(c.heads >= 1 && c.item_width() % c.heads == 0,
       "heads must divide the item width " + std::to_string(c.item_width()));
  need(c.ffn_multiplier >= 1, "ffn_multiplier must be at least 1");
  need(c.lambda > 0, "fs_lambda must be positive");
  need(c.temperature > 0, "gumbel_temperature must be positive");
  need(c.refiners.size() == kFieldCount, "refiners needs one count per field (5)");
  for (std::size_t n : c.refiners) need(n >= 1, "every field needs at least one refiner");
  need(c.refiner_ratio > 0 && c.refiner_ratio <= 1, "refiner_ratio must be in (0, 1]");
  need(c.correlation_dim >= 1, "correlation_dim must be positive");
  need(c.experts >= 1, "experts must be at least 1");
  need(!c.expert_layers.empty(), "expert_layers must not be empty");
  need(!c.tower_layers.empty(), "tower_layers must not be empty");
  for (std::size_t w : c.expert_layers) need(w >= 1, "expert_layers widths must be positive");
  for (std::size_t w : c.tower_layers) need(w >= 1, "tower_layers widths must be positive");
  for (std::size_t w : c.scale_hidden) need(w >= 1, "scale_hidden widths must be positive");
}

std::size_t trigger_width(const ModelConfig& c) {
  return c.schema.image_dim + c.schema.trigger_attrs * c.attr_dim;
}

std::vector<std::size_t> dims_of(std::size_t in, const std::vector<std::size_t>& layers) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), layers.begin(), layers.end());
  return dims;
}

/// Splits a B x (n*w) matrix into n column blocks of width w.
void push_blocks(std::vector<Value>& out, Value v, std::size_t n, std::size_t w) {
  for (std::size_t k = 0; k < n; ++k) out.push_back(ad::slice(v, k * w, w));
}

Value column(Graph& g, const std::vector<double>& values) {
  return ad::constant(g, ad::Shape{values.size(), 1}, values);
}

}  // namespace

FeatureEncoder::FeatureEncoder(ad::ParameterStore& store, const ModelConfig& config,
                               std::mt19937_64& rng)
    : config_(config) {
  check_config(config);
  const Schema& s = config.schema;
  const Vocabulary& v = config.vocab;
  const std::size_t dx = config.item_width();
  const std::size_t dt = trigger_width(config);
  users_ = nn::EmbeddingTable::create(store, "emb.user", v.users, config.user_dim, rng);
  // One extra row each for sequence padding and the absent trigger attribute.
  items_ = nn::EmbeddingTable::create(store, "emb.item", v.items + 1, config.item_dim, rng);
  user_attrs_ = nn::EmbeddingTable::create(store, "emb.user_attr", v.user_attrs, config.attr_dim, rng);
  item_attrs_ =
      nn::EmbeddingTable::create(store, "emb.item_attr", v.item_attrs + 1, config.attr_dim, rng);
  trigger_attrs_ = nn::EmbeddingTable::create(store, "emb.trigger_attr", v.trigger_attrs + 1,
                                              config.attr_dim, rng);
  contexts_ = nn::EmbeddingTable::create(store, "emb.context", v.context_attrs, config.context_dim, rng);
  positions_ = nn::EmbeddingTable::create(store, "emb.position", s.max_behaviors, dx, rng);
  product_projection_ = nn::Linear::create(store, "trigger.product", config.item_dim, s.image_dim,
                                           true, rng);
  target_projection_ = nn::Linear::create(store, "trigger.target", dx, dt, true, rng);
  encoder_ = nn::TransformerBlock::create(
      store, "encoder", {dx, config.heads, config.ffn_multiplier}, rng);
  sim_net_ = nn::Fcn::create(store, "attention.sim", {dt + dx, 1}, {nn::Activation::none}, rng);

  std::vector<std::vector<std::size_t>> widths(kFieldCount);
  widths[0] = {dx};
  widths[1] = {config.user_dim};
  widths[1].insert(widths[1].end(), s.user_attrs, config.attr_dim);
  widths[2] = {config.item_dim};
  widths[2].insert(widths[2].end(), s.item_attrs, config.attr_dim);
  widths[3] = {s.image_dim};
  widths[3].insert(widths[3].end(), s.trigger_attrs, config.attr_dim);
  widths[4].assign(s.context_attrs, config.context_dim);
  layout_ = FieldLayout::from_element_widths(widths);
}

EncodedBatch FeatureEncoder::encode(Graph& g, const BatchInputs& b) const {
  const Schema& s = config_.schema;
  const std::size_t B = b.size;
  const std::size_t m = b.length;
  const std::size_t da = config_.attr_dim;
  if (B == 0) throw ad::ShapeError("encode: empty batch");
  if (m != s.max_behaviors) throw ad::ShapeError("encode: batch length differs from max_behaviors");

  // User field.
  Value e_u = users_.lookup(g, b.user);
  std::vector<Value> user_parts{e_u};
  if (s.user_attrs > 0) {
    push_blocks(user_parts,
                ad::reshape(user_attrs_.lookup(g, b.user_attrs), ad::Shape{B, s.user_attrs * da}),
                s.user_attrs, da);
  }

  // Target item field x_i = [e_x || a_x^1 .. a_x^P].
  Value e_x = items_.lookup(g, b.target);
  std::vector<Value> item_parts{e_x};
  if (s.item_attrs > 0) {
    push_blocks(item_parts,
                ad::reshape(item_attrs_.lookup(g, b.target_attrs), ad::Shape{B, s.item_attrs * da}),
                s.item_attrs, da);
  }
  Value x_i = ad::concat(item_parts);

  // Behavior sequence with learned positions, then self-attention.
  std::vector<Value> seq_parts{items_.lookup(g, b.behavior_items)};
  if (s.item_attrs > 0) {
    seq_parts.push_back(ad::reshape(item_attrs_.lookup(g, b.behavior_attrs),
                                    ad::Shape{B * m, s.item_attrs * da}));
  }
  std::vector<std::size_t> pos(B * m);
  for (std::size_t r = 0; r < B * m; ++r) pos[r] = r % m;
  Value seq = ad::add(ad::concat(seq_parts), positions_.lookup(g, pos));
  Value h = encoder_.encode(g, seq, B, m, b.key_mask);

  // Trigger field: image vector or projected product, plus trigger attributes;
  // without a trigger the target item stands in, projected to the same width.
  Value star = ad::add(ad::mul(product_projection_.forward(g, items_.lookup(g, b.trigger_items)),
                               ad::constant(g, ad::Shape{B, 1}, [&] {
                                 std::vector<double> keep(B);
                                 for (std::size_t i = 0; i < B; ++i)
                                   keep[i] = 1.0 - b.image_rows[i] - b.no_trigger[i];
                                 return keep;
                               }())),
                       ad::constant(g, ad::Shape{B, s.image_dim}, b.image));
  std::vector<Value> trig{star};
  if (s.trigger_attrs > 0) {
    trig.push_back(ad::reshape(trigger_attrs_.lookup(g, b.trigger_attrs),
                               ad::Shape{B, s.trigger_attrs * da}));
  }
  Value t = ad::concat(trig);
  const bool any_missing =
      std::any_of(b.no_trigger.begin(), b.no_trigger.end(), [](double v) { return v != 0.0; });
  if (any_missing) {
    std::vector<double> present(B);
    for (std::size_t i = 0; i < B; ++i) present[i] = 1.0 - b.no_trigger[i];
    t = ad::add(ad::mul(t, column(g, present)),
                ad::mul(target_projection_.forward(g, x_i), column(g, b.no_trigger)));
  }

  EncodedBatch out;
  Value h_b = nn::trigger_attention(g, t, h, B, m, b.key_mask, sim_net_, &out.behavior_weights);

  std::vector<Value> trigger_parts;
  push_blocks(trigger_parts, t, 1, s.image_dim);
  if (s.trigger_attrs > 0) {
    push_blocks(trigger_parts, ad::slice(t, s.image_dim, s.trigger_attrs * da), s.trigger_attrs, da);
  }
  std::vector<Value> context_parts;
  push_blocks(context_parts,
              ad::reshape(contexts_.lookup(g, b.context),
                          ad::Shape{B, s.context_attrs * config_.context_dim}),
              s.context_attrs, config_.context_dim);

  AssembledQ q = assemble_q({{h_b}, user_parts, item_parts, trigger_parts, context_parts}, layout_);
  out.q = q.q;
  out.layout = q.layout;
  out.e_user = e_u;
  out.e_item = e_x;
  return out;
}

// ---- shared pieces ---------------------------------------------------------

RankingModel::RankingModel(ModelConfig config) : config_(std::move(config)) {}

Value coupling_coefficients(Graph& g, Value table) {
  const std::size_t n = table.rows();
  if (n < 2) return ad::constant(g, ad::Shape{n, 1}, std::vector<double>(n, 0.0));
  Value gram = ad::matmul(table, ad::transpose(table));
  std::vector<double> mask(n * n, 1.0 / static_cast<double>(n - 1));
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0.0;
  return ad::sum_cols(ad::mul(gram, ad::constant(g, ad::Shape{n, n}, mask)));
}

Value route_by_scenario(Value x, std::span<const std::size_t> scenario, std::size_t scenarios,
                        const std::function<Value(std::size_t, Value)>& fn) {
  const std::size_t n = x.rows();
  if (scenario.size() != n) throw ad::ShapeError("route_by_scenario: one scenario id per row");
  std::vector<std::vector<std::size_t>> groups(scenarios);
  for (std::size_t r = 0; r < n; ++r) {
    if (scenario[r] >= scenarios) {
      throw std::out_of_range("scenario id " + std::to_string(scenario[r]) + " >= " +
                              std::to_string(scenarios));
    }
    groups[scenario[r]].push_back(r);
  }
  for (std::size_t s = 0; s < scenarios; ++s)
    if (groups[s].size() == n) return fn(s, x);

  std::vector<Value> outs;
  std::vector<std::size_t> order;
  for (std::size_t s = 0; s < scenarios; ++s) {
    if (groups[s].empty()) continue;
    outs.push_back(fn(s, ad::gather_rows(x, groups[s])));
    order.insert(order.end(), groups[s].begin(), groups[s].end());
  }
  std::vector<std::size_t> inverse(n);
  for (std::size_t k = 0; k < n; ++k) inverse[order[k]] = k;
  return ad::gather_rows(ad::concat_rows(outs), inverse);
}

Value batch_loss(Value predictions, std::span<const double> labels) {
  return ad::bce_sum(predictions, labels);
}

// ---- MARIA -----------------------------------------------------------------

MariaModel::MariaModel(ModelConfig config) : RankingModel(std::move(config)) {
  const ModelConfig& c = config_;
  std::mt19937_64 rng(c.init_seed);
  encoder_ = FeatureEncoder(store_, c, rng);
  const FieldLayout& layout = encoder_.layout();
  scenarios_ = nn::EmbeddingTable::create(store_, "emb.scenario", c.vocab.scenarios, c.scenario_dim, rng);

  adaptive_.flags = {c.enabled.fs, c.enabled.fr, c.enabled.fcm};
  if (c.enabled.fs) {
    adaptive_.fs = FsParams::create(store_, "fs", layout.width() + c.user_dim + c.item_dim + c.scenario_dim,
                                    c.scale_hidden, layout.element_count(), c.lambda, rng);
  }
  std::size_t qf = layout.width();
  if (c.enabled.fr) {
    adaptive_.fr = FrParams::create(store_, "fr", layout, c.scenario_dim, c.refiners,
                                    c.refiner_ratio, c.temperature, rng);
    adaptive_.fr.gumbel = c.enabled.gs;
    qf = adaptive_.fr.output_width();
  }
  if (c.enabled.fcm) {
    adaptive_.fcm = FcmParams::create(store_, "fcm", layout, c.correlation_dim, rng);
    qf += kPairCount;
  }

  const std::size_t n_experts = c.enabled.nl ? c.experts : 1;
  for (std::size_t j = 0; j < n_experts; ++j) {
    experts_.push_back(nn::Fcn::create(store_, "moe.expert" + std::to_string(j),
                                       dims_of(qf, c.expert_layers), nn::Activation::relu,
                                       nn::Activation::relu, rng));
  }
  if (c.enabled.nl) {
    gate_ = &store_.create("moe.gate.w", ad::Shape{c.scenario_dim, n_experts});
    nn::glorot_uniform(*gate_, c.scenario_dim, n_experts, rng);
  }
  const std::size_t hn = c.expert_layers.back();
  for (std::size_t s = 0; s < c.vocab.scenarios; ++s) {
    towers_.push_back(nn::Fcn::create(store_, "tower_sp.s" + std::to_string(s),
                                      dims_of(hn, c.tower_layers), nn::Activation::relu,
                                      nn::Activation::relu, rng));
  }
  if (c.enabled.st) {
    shared_tower_ = nn::Fcn::create(store_, "tower_sh", dims_of(hn, c.tower_layers),
                                    nn::Activation::relu, nn::Activation::relu, rng);
  }
  head_ = nn::Fcn::create(store_, "head", {c.tower_layers.back(), 1}, {nn::Activation::sigmoid}, rng);
}

Prediction MariaModel::forward(Graph& g, const BatchInputs& b, Mode mode) const {
  Prediction p;
  EncodedBatch enc = encoder_.encode(g, b);
  p.q = enc.q;
  Value e_s = scenarios_.lookup(g, b.scenario);
  AdaptiveOutput a = adaptive_features(g, enc.q, enc.layout, enc.e_user, enc.e_item, e_s, adaptive_, mode);
  p.q_f = a.q_f;
  p.fs_alpha = a.alpha;
  p.betas = std::move(a.betas);

  if (gate_) {
    p.gate = ad::softmax(ad::matmul(e_s, ad::param(g, *gate_)));
    Value h;
    for (std::size_t j = 0; j < experts_.size(); ++j) {
      Value term = ad::mul(experts_[j].forward(g, p.q_f), ad::slice(p.gate, j, 1));
      h = j == 0 ? term : ad::add(h, term);
    }
    p.h_n = h;
  } else {
    p.h_n = experts_.front().forward(g, p.q_f);
  }

  p.h_sp = route_by_scenario(p.h_n, b.scenario, towers_.size(),
                             [&](std::size_t s, Value rows) { return towers_[s].forward(g, rows); });
  if (!shared_tower_.empty()) {
    Value alpha_table = coupling_coefficients(g, ad::param(g, *scenarios_.weights));
    p.coupling = ad::gather_rows(alpha_table, b.scenario);
    p.h_sh = shared_tower_.forward(g, p.h_n);
    p.h_f = ad::add(p.h_sp, ad::mul(p.h_sh, p.coupling));
  } else {
    p.h_f = p.h_sp;
  }
  p.y = head_.forward(g, p.h_f);
  return p;
}

// ---- baselines -------------------------------------------------------------

BaselineModel::BaselineModel(ModelConfig config) : RankingModel(std::move(config)) {
  const ModelConfig& c = config_;
  if (c.kind == ModelKind::maria) throw ConfigError("BaselineModel needs a baseline kind");
  std::mt19937_64 rng(c.init_seed);
  encoder_ = FeatureEncoder(store_, c, rng);
  const std::size_t q = encoder_.layout().width();
  const std::size_t hn = c.expert_layers.back();
  const std::size_t ns = c.vocab.scenarios;
  const std::size_t n_towers = c.kind == ModelKind::hard_sharing ? 1 : ns;

  if (c.kind == ModelKind::mmoe) {
    for (std::size_t j = 0; j < c.experts; ++j) {
      experts_.push_back(nn::Fcn::create(store_, "mmoe.expert" + std::to_string(j),
                                         dims_of(q, c.expert_layers), nn::Activation::relu,
                                         nn::Activation::relu, rng));
    }
    for (std::size_t s = 0; s < ns; ++s) {
      gates_.push_back(nn::Fcn::create(store_, "mmoe.gate.s" + std::to_string(s), {q, c.experts},
                                       {nn::Activation::none}, rng));
    }
  } else {
    bottom_ = nn::Fcn::create(store_, "bottom", dims_of(q, c.expert_layers), nn::Activation::relu,
                              nn::Activation::relu, rng);
  }
  for (std::size_t s = 0; s < n_towers; ++s) {
    towers_.push_back(nn::Fcn::create(store_, "tower.s" + std::to_string(s),
                                      dims_of(hn, c.tower_layers), nn::Activation::relu,
                                      nn::Activation::relu, rng));
    heads_.push_back(nn::Fcn::create(store_, "head.s" + std::to_string(s),
                                     {c.tower_layers.back(), 1}, {nn::Activation::sigmoid}, rng));
  }
}

Prediction BaselineModel::forward(Graph& g, const BatchInputs& b, Mode) const {
  Prediction p;
  EncodedBatch enc = encoder_.encode(g, b);
  p.q = enc.q;
  p.q_f = enc.q;
  const std::size_t q = enc.q.cols();

  if (config_.kind == ModelKind::hard_sharing) {
    p.h_n = bottom_.forward(g, enc.q);
    p.h_sp = towers_[0].forward(g, p.h_n);
    p.h_f = p.h_sp;
    p.y = heads_[0].forward(g, p.h_f);
    return p;
  }

  if (config_.kind == ModelKind::shared_bottom) {
    p.h_n = bottom_.forward(g, enc.q);
    p.y = route_by_scenario(p.h_n, b.scenario, towers_.size(), [&](std::size_t s, Value rows) {
      return heads_[s].forward(g, towers_[s].forward(g, rows));
    });
    return p;
  }

  // MMoE: experts see every row; each scenario mixes them with its own gate.
  std::vector<Value> parts{enc.q};
  for (const nn::Fcn& e : experts_) parts.push_back(e.forward(g, enc.q));
  const std::size_t hn = experts_.front().out_width();
  Value gate_cols;
  p.y = route_by_scenario(ad::concat(parts), b.scenario, towers_.size(), [&](std::size_t s, Value rows) {
    Value gate = ad::softmax(gates_[s].forward(g, ad::slice(rows, 0, q)));
    Value h;
    for (std::size_t j = 0; j < experts_.size(); ++j) {
      Value term = ad::mul(ad::slice(rows, q + j * hn, hn), ad::slice(gate, j, 1));
      h = j == 0 ? term : ad::add(h, term);
    }
    return ad::concat(std::vector<Value>{heads_[s].forward(g, towers_[s].forward(g, h)), gate});
  });
  p.gate = ad::slice(p.y, 1, experts_.size());
  p.y = ad::slice(p.y, 0, 1);
  return p;
}

// ---- construction ----------------------------------------------------------

namespace {

std::unique_ptr<RankingModel> build(const ModelConfig& c) {
  if (c.kind == ModelKind::maria) return std::make_unique<MariaModel>(c);
  return std::make_unique<BaselineModel>(c);
}

ModelConfig with_hidden_width(ModelConfig c, std::size_t width) {
  if (c.expert_layers.size() == 1) {
    c.expert_layers[0] = width;
  } else {
    for (std::size_t i = 0; i + 1 < c.expert_layers.size(); ++i) c.expert_layers[i] = width;
  }
  return c;
}

}  // namespace

std::size_t parameter_count(const ModelConfig& config) {
  return build(config)->params().scalar_count();
}

std::unique_ptr<RankingModel> make_model(const ModelConfig& config) {
  check_config(config);
  if (config.kind == ModelKind::maria || !config.match_baseline_params) return build(config);

  ModelConfig reference = config;
  reference.kind = ModelKind::maria;
  const auto target = static_cast<double>(parameter_count(reference));

  ModelConfig base = config;
  base.match_baseline_params = false;
  auto count_at = [&](std::size_t w) {
    return static_cast<double>(parameter_count(with_hidden_width(base, w)));
  };
  std::size_t lo = 1, hi = 1;
  while (count_at(hi) < target && hi < (std::size_t{1} << 16)) hi *= 2;
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (count_at(mid) < target ? lo : hi) = mid;
  }
  const std::size_t best =
      std::abs(count_at(lo) - target) <= std::abs(count_at(hi) - target) ? lo : hi;
  return build(with_hidden_width(base, best));
}

}  // namespace maria
