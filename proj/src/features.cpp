#include "maria/features.hpp"

#include <cmath>
#include <stdexcept>

namespace maria {

FieldLayout FieldLayout::from_element_widths(const std::vector<std::vector<std::size_t>>& widths) {
  FieldLayout layout;
  std::size_t offset = 0;
  for (std::size_t f = 0; f < widths.size(); ++f) {
    FieldSpan span;
    span.name = f < kFieldNames.size() ? kFieldNames[f] : "field" + std::to_string(f);
    span.offset = offset;
    for (std::size_t w : widths[f]) {
      span.elements.push_back({offset, w});
      offset += w;
      ++layout.element_count_;
    }
    span.width = offset - span.offset;
    layout.fields_.push_back(std::move(span));
  }
  layout.width_ = offset;
  return layout;
}

std::vector<std::size_t> FieldLayout::element_widths() const {
  std::vector<std::size_t> out;
  for (const auto& f : fields_)
    for (const auto& e : f.elements) out.push_back(e.width);
  return out;
}

std::vector<std::size_t> FieldLayout::field_widths() const {
  std::vector<std::size_t> out;
  for (const auto& f : fields_) out.push_back(f.width);
  return out;
}

AssembledQ assemble_q(const std::vector<std::vector<Value>>& fields) {
  std::vector<std::vector<std::size_t>> widths;
  std::vector<Value> flat;
  for (const auto& field : fields) {
    if (field.empty()) throw ad::ShapeError("assemble_q: a field has no elements");
    auto& w = widths.emplace_back();
    for (const Value& v : field) {
      w.push_back(v.cols());
      flat.push_back(v);
    }
  }
  return {ad::concat(flat), FieldLayout::from_element_widths(widths)};
}

AssembledQ assemble_q(const std::vector<std::vector<Value>>& fields, const FieldLayout& expected) {
  AssembledQ out = assemble_q(fields);
  if (!(out.layout == expected)) {
    throw ad::ShapeError("assemble_q: element widths do not match the configured schema");
  }
  return out;
}

Value field_slice(Value q, const FieldLayout& layout, std::size_t field) {
  const FieldSpan& span = layout.field(field);
  return ad::slice(q, span.offset, span.width);
}

// ---- scaling ---------------------------------------------------------------

FsParams FsParams::create(ad::ParameterStore& store, const std::string& name, std::size_t in_width,
                          const std::vector<std::size_t>& hidden, std::size_t element_count,
                          double lambda, std::mt19937_64& rng) {
  if (!(lambda > 0.0)) throw std::invalid_argument("feature scaling: lambda must be positive");
  std::vector<std::size_t> dims{in_width};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(element_count);
  FsParams p;
  p.scale_net = nn::Fcn::create(store, name + ".scale", dims, nn::Activation::relu,
                                nn::Activation::none, rng);
  p.lambda = lambda;
  return p;
}

Value scaling_factors(Graph& g, Value q, Value e_user, Value e_item, Value e_scenario,
                      const FsParams& params) {
  Value input = ad::concat(std::vector<Value>{ad::stop_gradient(q), e_user, e_item, e_scenario});
  if (input.cols() != params.scale_net.in_width()) {
    throw ad::ShapeError("feature_scale: scale_net expects width " +
                         std::to_string(params.scale_net.in_width()) + ", got " +
                         std::to_string(input.cols()));
  }
  return ad::scale(ad::sigmoid(params.scale_net.forward(g, input)), params.lambda);
}

Value feature_scale(Graph& g, Value q, const FieldLayout& layout, Value e_user, Value e_item,
                    Value e_scenario, const FsParams& params, Value* alpha) {
  if (q.cols() != layout.width()) {
    throw ad::ShapeError("feature_scale: Q width " + std::to_string(q.cols()) +
                         " does not match layout width " + std::to_string(layout.width()));
  }
  if (params.scale_net.out_width() != layout.element_count()) {
    throw ad::ShapeError("feature_scale: scale_net emits " +
                         std::to_string(params.scale_net.out_width()) + " factors for " +
                         std::to_string(layout.element_count()) + " elements");
  }
  Value factors = scaling_factors(g, q, e_user, e_item, e_scenario, params);
  if (alpha) *alpha = factors;
  const std::vector<std::size_t> widths = layout.element_widths();
  return ad::mul(q, ad::expand_cols(factors, widths));
}

// ---- refinement ------------------------------------------------------------

FrParams FrParams::create(ad::ParameterStore& store, const std::string& name,
                          const FieldLayout& layout, std::size_t scenario_dim,
                          const std::vector<std::size_t>& refiners, double ratio,
                          double temperature, std::mt19937_64& rng) {
  if (refiners.size() != layout.fields().size()) {
    throw std::invalid_argument("feature refinement: need a refiner count for each of the " +
                                std::to_string(layout.fields().size()) + " fields");
  }
  if (!(ratio > 0.0) || ratio > 1.0) {
    throw std::invalid_argument("feature refinement: compression ratio must be in (0, 1]");
  }
  FrParams p;
  p.temperature = temperature;
  for (std::size_t f = 0; f < refiners.size(); ++f) {
    if (refiners[f] == 0) throw std::invalid_argument("feature refinement: every field needs a refiner");
    const std::size_t width = layout.field(f).width;
    const auto out = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(width)));
    const std::string base = name + "." + layout.field(f).name;
    RefinerSet set;
    for (std::size_t k = 0; k < refiners[f]; ++k) {
      set.refiners.push_back(nn::Fcn::create(store, base + ".refiner" + std::to_string(k),
                                             {width, out}, {nn::Activation::relu}, rng));
    }
    set.selector = nn::Fcn::create(store, base + ".selector", {width + scenario_dim, refiners[f]},
                                   {nn::Activation::none}, rng);
    p.fields.push_back(std::move(set));
  }
  return p;
}

std::size_t FrParams::output_width() const {
  std::size_t w = 0;
  for (const auto& f : fields) w += f.refiners.size() * f.refiners.front().out_width();
  return w;
}

Refined refine_field(Graph& g, Value field, Value e_scenario, const RefinerSet& set,
                     double temperature, bool gumbel, Mode mode) {
  Value selector_in = ad::concat(std::vector<Value>{field, e_scenario});
  if (selector_in.cols() != set.selector.in_width()) {
    throw ad::ShapeError("refine_field: selector expects width " +
                         std::to_string(set.selector.in_width()) + ", got " +
                         std::to_string(selector_in.cols()));
  }
  // sigmoid outputs enter the Gumbel-softmax directly as its logits.
  Value logits = ad::sigmoid(set.selector.forward(g, selector_in));
  Value beta = gumbel ? ad::gumbel_softmax(logits, temperature, mode) : ad::softmax(logits);
  std::vector<Value> parts;
  for (std::size_t k = 0; k < set.refiners.size(); ++k) {
    parts.push_back(ad::mul(set.refiners[k].forward(g, field), ad::slice(beta, k, 1)));
  }
  return {ad::concat(parts), beta};
}

RefinedAll refine_all(Graph& g, Value q_s, const FieldLayout& layout, Value e_scenario,
                      const FrParams& params, Mode mode) {
  if (layout.fields().size() != kFieldCount || params.fields.size() != kFieldCount) {
    throw ad::ShapeError("refine_all: expected " + std::to_string(kFieldCount) + " fields");
  }
  RefinedAll out;
  std::vector<Value> parts;
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    Refined r = refine_field(g, field_slice(q_s, layout, f), e_scenario, params.fields[f],
                             params.temperature, params.gumbel, mode);
    parts.push_back(r.out);
    out.betas.push_back(r.beta);
  }
  out.q_r = ad::concat(parts);
  return out;
}

// ---- correlation -----------------------------------------------------------

FcmParams FcmParams::create(ad::ParameterStore& store, const std::string& name,
                            const FieldLayout& layout, std::size_t dim, std::mt19937_64& rng) {
  if (dim == 0) throw std::invalid_argument("feature correlation: projection width must be positive");
  FcmParams p;
  p.dim = dim;
  for (const auto& f : layout.fields()) {
    p.projections.push_back(nn::Fcn::create(store, name + "." + f.name, {f.width, dim},
                                            {nn::Activation::none}, rng));
  }
  return p;
}

Value pairwise_dots(const std::vector<Value>& projected) {
  std::vector<Value> scores;
  for (std::size_t i = 0; i < projected.size(); ++i)
    for (std::size_t j = i + 1; j < projected.size(); ++j)
      scores.push_back(ad::dot_rows(projected[i], projected[j]));
  if (scores.empty()) throw ad::ShapeError("pairwise_dots: need at least two fields");
  return ad::concat(scores);
}

Value correlate_fields(Graph& g, Value q_s, const FieldLayout& layout, const FcmParams& params) {
  if (layout.fields().size() != params.projections.size()) {
    throw ad::ShapeError("correlate_fields: " + std::to_string(params.projections.size()) +
                         " projections for " + std::to_string(layout.fields().size()) + " fields");
  }
  std::vector<Value> projected;
  for (std::size_t f = 0; f < params.projections.size(); ++f) {
    projected.push_back(params.projections[f].forward(g, field_slice(q_s, layout, f)));
  }
  return pairwise_dots(projected);
}

AdaptiveOutput adaptive_features(Graph& g, Value q, const FieldLayout& layout, Value e_user,
                                 Value e_item, Value e_scenario, const AdaptiveParams& params,
                                 Mode mode) {
  AdaptiveOutput out;
  out.q_s = params.flags.scaling
                ? feature_scale(g, q, layout, e_user, e_item, e_scenario, params.fs, &out.alpha)
                : q;
  if (params.flags.refinement) {
    RefinedAll r = refine_all(g, out.q_s, layout, e_scenario, params.fr, mode);
    out.q_r = r.q_r;
    out.betas = std::move(r.betas);
  } else {
    out.q_r = out.q_s;
  }
  if (params.flags.correlation) {
    out.q_c = correlate_fields(g, out.q_s, layout, params.fcm);
    out.q_f = ad::concat(std::vector<Value>{out.q_r, out.q_c});
  } else {
    out.q_f = out.q_r;
  }
  return out;
}

}  // namespace maria
