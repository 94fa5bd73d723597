#pragma once

// End-to-end ranking models. Every model shares the same input encoder
// (embedding tables, a Transformer over the behavior sequence and
// trigger-aware pooling) that produces Q; MARIA then applies adaptive
// feature learning, a scenario-gated mixture of experts, scenario-specific
// towers plus a coupled shared tower, and a sigmoid head. The baselines
// (hard sharing, shared bottom, MMoE) consume the raw Q.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "maria/autodiff.hpp"
#include "maria/data.hpp"
#include "maria/features.hpp"
#include "maria/layers.hpp"

namespace maria {

enum class ModelKind { maria, hard_sharing, shared_bottom, mmoe };

const char* to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);

/// Components that can be switched off for ablation. true = enabled.
struct AblationFlags {
  bool fs = true;   // feature scaling
  bool fr = true;   // feature refinement
  bool fcm = true;  // feature correlation
  bool nl = true;   // mixture of experts (off: one expert)
  bool st = true;   // shared tower
  bool gs = true;   // Gumbel-softmax selection (off: plain softmax)

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct ModelConfig {
  Schema schema;
  Vocabulary vocab;
  ModelKind kind = ModelKind::maria;

  std::size_t user_dim = 8;      // d_u
  std::size_t item_dim = 8;      // d_x
  std::size_t attr_dim = 8;      // d_a
  std::size_t context_dim = 8;   // d_c
  std::size_t scenario_dim = 8;  // d_s
  std::size_t heads = 2;
  std::size_t ffn_multiplier = 2;

  std::vector<std::size_t> scale_hidden{64};
  double lambda = 2.0;
  double temperature = 0.01;
  std::vector<std::size_t> refiners{1, 2, 1, 1, 1};
  double refiner_ratio = 0.5;
  std::size_t correlation_dim = 8;  // d_r

  std::size_t experts = 4;
  std::vector<std::size_t> expert_layers{256, 256};
  std::vector<std::size_t> tower_layers{128, 64, 32};

  AblationFlags enabled;
  /// Baselines widen their expert/bottom hidden layers until their parameter
  /// count is closest to MARIA's at the same configuration.
  bool match_baseline_params = true;
  std::uint64_t init_seed = 1;

  /// Width of one item representation [e_x || a_x^1 .. a_x^P].
  std::size_t item_width() const { return item_dim + schema.item_attrs * attr_dim; }
};

/// Model inputs for a batch of instances, flattened to index arrays.
struct BatchInputs {
  std::size_t size = 0;    // B
  std::size_t length = 0;  // m
  std::vector<std::size_t> scenario;
  std::vector<std::size_t> user;
  std::vector<std::size_t> user_attrs;      // B*L
  std::vector<std::size_t> behavior_items;  // B*m, left padded
  std::vector<std::size_t> behavior_attrs;  // B*m*P
  std::vector<std::uint8_t> key_mask;       // B*m, 0 on padding
  std::vector<std::size_t> target;
  std::vector<std::size_t> target_attrs;    // B*P
  std::vector<std::size_t> trigger_items;   // product item, or the target when no trigger
  std::vector<std::size_t> trigger_attrs;   // B*O, a reserved id when absent
  std::vector<double> image;                // B*d_t, zero unless an image trigger
  std::vector<double> image_rows;           // B, 1 for image triggers
  std::vector<double> no_trigger;           // B, 1 when the target stands in for the trigger
  std::vector<std::size_t> context;         // B*N_c
  std::vector<double> labels;

  static BatchInputs from(std::span<const Instance* const> instances, const Schema& schema,
                          const Vocabulary& vocab);
  static BatchInputs from(std::span<const Instance> instances, const Schema& schema,
                          const Vocabulary& vocab);
};

struct EncodedBatch {
  Value q;
  FieldLayout layout;
  Value e_user;
  Value e_item;
  Value behavior_weights;  // B x m trigger attention
};

/// Embedding layer, sequence encoder and trigger-aware pooling.
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(ad::ParameterStore& store, const ModelConfig& config, std::mt19937_64& rng);

  EncodedBatch encode(Graph& g, const BatchInputs& batch) const;
  /// Layout of Q implied by the configuration.
  const FieldLayout& layout() const { return layout_; }

 private:
  ModelConfig config_;
  nn::EmbeddingTable users_, items_, user_attrs_, item_attrs_, trigger_attrs_, contexts_, positions_;
  nn::Linear product_projection_;  // d_x -> d_t
  nn::Linear target_projection_;   // item field -> trigger field
  nn::TransformerBlock encoder_;
  nn::Fcn sim_net_;
  FieldLayout layout_;
};

struct Prediction {
  Value y;                   // B x 1, in (0, 1)
  std::vector<Value> betas;  // refiner selection per field (MARIA with refinement)
  Value q;
  Value q_f;
  Value fs_alpha;
  Value gate;                // B x N_e
  Value h_n;
  Value h_sp;
  Value h_sh;
  Value coupling;            // B x 1, alpha_s per instance
  Value h_f;
};

class RankingModel {
 public:
  virtual ~RankingModel() = default;
  RankingModel(const RankingModel&) = delete;
  RankingModel& operator=(const RankingModel&) = delete;

  virtual Prediction forward(Graph& g, const BatchInputs& batch, Mode mode) const = 0;

  const ModelConfig& config() const { return config_; }
  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }
  const FieldLayout& layout() const { return encoder_.layout(); }

 protected:
  explicit RankingModel(ModelConfig config);

  ModelConfig config_;
  ad::ParameterStore store_;
  FeatureEncoder encoder_;
};

/// alpha_s = 1/(N_s - 1) * sum_{j != s} e_s . e_j for every row of the
/// scenario table; N_s x 1, all zero when N_s = 1.
Value coupling_coefficients(Graph& g, Value scenario_table);

/// Runs `fn` on the rows of each scenario separately and restores row order.
Value route_by_scenario(Value x, std::span<const std::size_t> scenario, std::size_t scenarios,
                        const std::function<Value(std::size_t, Value)>& fn);

class MariaModel : public RankingModel {
 public:
  explicit MariaModel(ModelConfig config);

  Prediction forward(Graph& g, const BatchInputs& batch, Mode mode) const override;

  const AdaptiveParams& adaptive() const { return adaptive_; }
  const std::vector<nn::Fcn>& experts() const { return experts_; }
  const std::vector<nn::Fcn>& scenario_towers() const { return towers_; }
  const nn::Fcn& shared_tower() const { return shared_tower_; }
  const nn::Fcn& head() const { return head_; }
  ad::Parameter& scenario_table() const { return *scenarios_.weights; }
  ad::Parameter* gate_weights() const { return gate_; }

 private:
  nn::EmbeddingTable scenarios_;
  AdaptiveParams adaptive_;
  std::vector<nn::Fcn> experts_;
  ad::Parameter* gate_ = nullptr;  // d_s x N_e
  std::vector<nn::Fcn> towers_;
  nn::Fcn shared_tower_;
  nn::Fcn head_;
};

class BaselineModel : public RankingModel {
 public:
  explicit BaselineModel(ModelConfig config);

  Prediction forward(Graph& g, const BatchInputs& batch, Mode mode) const override;

 private:
  nn::Fcn bottom_;                 // hard sharing, shared bottom
  std::vector<nn::Fcn> experts_;   // mmoe
  std::vector<nn::Fcn> gates_;     // mmoe, one per scenario
  std::vector<nn::Fcn> towers_;    // one, or one per scenario
  std::vector<nn::Fcn> heads_;
};

/// Builds the model named by `config.kind`. Baselines with
/// `match_baseline_params` get their expert widths resolved here; the
/// returned model's config records the resolved widths.
std::unique_ptr<RankingModel> make_model(const ModelConfig& config);

/// Scalar parameter count of the model `config` would build.
std::size_t parameter_count(const ModelConfig& config);

/// Summed cross-entropy of a batch.
Value batch_loss(Value predictions, std::span<const double> labels);

}  // namespace maria
