#pragma once

// Scenario-adaptive feature learning over the concatenated field
// representation Q = [behavior || user || item || trigger || context]:
//
//   scaling     per-element factors lambda * sigmoid(net([stop(Q) || e_u || e_x || e_s]))
//   refinement  per-field choice among shallow refiners, weighted by a
//               Gumbel-softmax over a scenario-aware selector
//   correlation dot products of every pair of projected fields
//
// All functions take batch-major inputs (one instance per row).

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "maria/autodiff.hpp"
#include "maria/layers.hpp"

namespace maria {

using ad::Graph;
using ad::Mode;
using ad::Value;

inline constexpr std::size_t kFieldCount = 5;
inline constexpr std::array<const char*, kFieldCount> kFieldNames = {"behavior", "user", "item",
                                                                     "trigger", "context"};
/// Number of field pairs scored by the correlation module.
inline constexpr std::size_t kPairCount = kFieldCount * (kFieldCount - 1) / 2;

struct ElementSpan {
  std::size_t offset = 0;
  std::size_t width = 0;
};

struct FieldSpan {
  std::string name;
  std::size_t offset = 0;
  std::size_t width = 0;
  std::vector<ElementSpan> elements;
};

/// Where every feature element and field sits inside Q.
class FieldLayout {
 public:
  FieldLayout() = default;
  /// One list of element widths per field, in field order.
  static FieldLayout from_element_widths(const std::vector<std::vector<std::size_t>>& widths);

  const std::vector<FieldSpan>& fields() const { return fields_; }
  const FieldSpan& field(std::size_t f) const { return fields_.at(f); }
  std::size_t width() const { return width_; }
  std::size_t element_count() const { return element_count_; }
  std::vector<std::size_t> element_widths() const;
  std::vector<std::size_t> field_widths() const;

  friend bool operator==(const FieldLayout& a, const FieldLayout& b) {
    return a.element_widths() == b.element_widths() && a.field_widths() == b.field_widths();
  }

 private:
  std::vector<FieldSpan> fields_;
  std::size_t width_ = 0;
  std::size_t element_count_ = 0;
};

struct AssembledQ {
  Value q;
  FieldLayout layout;
};

/// Concatenates the field parts (each a list of batch x width elements).
AssembledQ assemble_q(const std::vector<std::vector<Value>>& fields);
/// Same, rejecting parts whose element widths differ from `expected`.
AssembledQ assemble_q(const std::vector<std::vector<Value>>& fields, const FieldLayout& expected);

Value field_slice(Value q, const FieldLayout& layout, std::size_t field);

// ---- feature scaling -------------------------------------------------------

struct FsParams {
  nn::Fcn scale_net;
  double lambda = 2.0;

  /// `hidden` may be empty for a single affine layer.
  static FsParams create(ad::ParameterStore& store, const std::string& name, std::size_t in_width,
                         const std::vector<std::size_t>& hidden, std::size_t element_count,
                         double lambda, std::mt19937_64& rng);
};

/// Per-element scaling factors, batch x N_Q, each in (0, lambda). Q enters
/// the scale network through a stop-gradient; e_u, e_x and e_s do not.
Value scaling_factors(Graph& g, Value q, Value e_user, Value e_item, Value e_scenario,
                      const FsParams& params);

/// Q with element j multiplied by its factor. `alpha` receives the factors.
Value feature_scale(Graph& g, Value q, const FieldLayout& layout, Value e_user, Value e_item,
                    Value e_scenario, const FsParams& params, Value* alpha = nullptr);

// ---- feature refinement ----------------------------------------------------

struct RefinerSet {
  std::vector<nn::Fcn> refiners;  // each one affine layer + relu
  nn::Fcn selector;               // [field || e_s] -> refiner logits
};

struct FrParams {
  std::vector<RefinerSet> fields;
  double temperature = 0.01;
  /// When false the Gumbel-softmax is replaced by a plain softmax.
  bool gumbel = true;

  /// `refiners[f]` refiners of width ceil(ratio * field width) per field.
  static FrParams create(ad::ParameterStore& store, const std::string& name,
                         const FieldLayout& layout, std::size_t scenario_dim,
                         const std::vector<std::size_t>& refiners, double ratio,
                         double temperature, std::mt19937_64& rng);

  std::size_t output_width() const;
};

struct Refined {
  Value out;   // batch x (N_b * refiner width)
  Value beta;  // batch x N_b selection weights
};

/// beta = GS(sigmoid(selector([field || e_s]))); out = [beta_1 R_1(field) || ...].
/// Training samples soft weights; evaluation uses the one-hot argmax.
Refined refine_field(Graph& g, Value field, Value e_scenario, const RefinerSet& set,
                     double temperature, bool gumbel, Mode mode);

struct RefinedAll {
  Value q_r;
  std::vector<Value> betas;  // one per field
};

RefinedAll refine_all(Graph& g, Value q_s, const FieldLayout& layout, Value e_scenario,
                      const FrParams& params, Mode mode);

// ---- feature correlation ---------------------------------------------------

struct FcmParams {
  std::vector<nn::Fcn> projections;  // field width -> d_r, no activation
  std::size_t dim = 0;

  static FcmParams create(ad::ParameterStore& store, const std::string& name,
                          const FieldLayout& layout, std::size_t dim, std::mt19937_64& rng);
};

/// Pairwise dot products of already-projected fields, ordered (0,1), (0,2),
/// ..., (n-2, n-1).
Value pairwise_dots(const std::vector<Value>& projected);

Value correlate_fields(Graph& g, Value q_s, const FieldLayout& layout, const FcmParams& params);

// ---- composition -----------------------------------------------------------

struct AdaptiveFlags {
  bool scaling = true;
  bool refinement = true;
  bool correlation = true;
};

struct AdaptiveParams {
  AdaptiveFlags flags;
  FsParams fs;
  FrParams fr;
  FcmParams fcm;
};

struct AdaptiveOutput {
  Value q_s;
  Value q_r;
  Value q_c;                 // invalid when correlation is off
  Value q_f;
  Value alpha;               // invalid when scaling is off
  std::vector<Value> betas;  // empty when refinement is off
};

/// Q_f = [Q_R || Q_C], with disabled stages replaced by identity / omitted.
AdaptiveOutput adaptive_features(Graph& g, Value q, const FieldLayout& layout, Value e_user,
                                 Value e_item, Value e_scenario, const AdaptiveParams& params,
                                 Mode mode);

}  // namespace maria
