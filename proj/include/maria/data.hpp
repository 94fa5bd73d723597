#pragma once

// Synthetic multi-scenario interaction data.
//
// Each scenario draws labels from its own masked linear model over a fixed
// hash featurization of the instance, so which feature elements matter is
// scenario specific by construction. Instance i depends only on (seed, i).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace maria {

struct Schema {
  std::size_t user_attrs = 2;      // L
  std::size_t item_attrs = 2;      // P
  std::size_t trigger_attrs = 1;   // O
  std::size_t context_attrs = 2;   // N_c
  std::size_t max_behaviors = 5;   // m
  std::size_t image_dim = 8;       // d_t

  /// Feature elements in the concatenated representation: L + P + O + N_c + 4.
  std::size_t element_count() const {
    return user_attrs + item_attrs + trigger_attrs + context_attrs + 4;
  }
  friend bool operator==(const Schema&, const Schema&) = default;
};

struct Vocabulary {
  std::size_t users = 500;
  std::size_t items = 500;
  std::size_t user_attrs = 40;
  std::size_t item_attrs = 40;
  std::size_t trigger_attrs = 20;
  std::size_t context_attrs = 20;
  std::size_t scenarios = 3;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

/// Digest of everything a model's input layer depends on.
std::uint64_t schema_digest(const Schema& schema, const Vocabulary& vocab);

enum class TriggerKind { image, product, none };

const char* to_string(TriggerKind kind);
TriggerKind parse_trigger_kind(const std::string& s);

struct Trigger {
  TriggerKind kind = TriggerKind::none;
  std::vector<double> vector;       // image: image_dim reals
  std::size_t item = 0;             // product
  std::vector<std::size_t> attrs;   // product: O attribute ids

  friend bool operator==(const Trigger&, const Trigger&) = default;
};

struct BehaviorItem {
  std::size_t item = 0;
  std::vector<std::size_t> attrs;

  friend bool operator==(const BehaviorItem&, const BehaviorItem&) = default;
};

struct Instance {
  std::size_t scenario = 0;
  std::size_t user = 0;
  std::vector<std::size_t> user_attrs;
  std::vector<BehaviorItem> behavior;  // chronological, 1..m entries
  std::size_t target_item = 0;
  std::vector<std::size_t> target_attrs;
  Trigger trigger;
  std::vector<std::size_t> context;
  int label = 0;

  friend bool operator==(const Instance&, const Instance&) = default;
};

/// Throws DataError naming the offending field.
void validate(const Instance& inst, const Schema& schema, const Vocabulary& vocab);

struct ScenarioProfile {
  std::size_t id = 0;
  double traffic_share = 1.0;
  std::vector<double> field_importance;  // per feature element, in [0, 1]
  std::vector<double> label_weights;     // per feature element
  double label_bias = 0.0;
  double noise_std = 0.0;
  TriggerKind trigger_kind = TriggerKind::none;
};

/// How the per-scenario importance masks relate to each other.
enum class MaskRegime {
  disjoint,  // every element matters in exactly one scenario
  overlap,   // a shared core plus scenario-specific elements
  shared,    // identical masks and weights in every scenario
  zero,      // no element matters; labels are coin flips around the bias
};

MaskRegime parse_mask_regime(const std::string& s);
const char* to_string(MaskRegime regime);

struct ProfileRecipe {
  std::vector<double> traffic_share{0.5, 0.3, 0.2};
  std::vector<TriggerKind> trigger_kinds{TriggerKind::image, TriggerKind::product,
                                         TriggerKind::none};
  MaskRegime regime = MaskRegime::disjoint;
  double weight_scale = 1.5;
  double label_bias = 0.0;
  double noise_std = 0.5;
  std::uint64_t seed = 7;
};

/// Builds one profile per traffic share. Throws ConfigError when the shares
/// do not sum to 1 or the trigger kinds do not match the scenario count.
std::vector<ScenarioProfile> make_profiles(const ProfileRecipe& recipe, const Schema& schema);

struct DatasetManifest {
  Schema schema;
  Vocabulary vocab;
  std::uint64_t seed = 0;
  std::vector<std::size_t> scenario_counts;
  std::vector<double> positive_rates;
  /// AUC of the ground-truth scorer on a held-out sample; the ceiling for any model.
  std::optional<double> bayes_auc;
  std::vector<ScenarioProfile> profiles;

  std::size_t count() const;
  std::uint64_t digest() const { return schema_digest(schema, vocab); }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Instance> instances;
};

struct GeneratorOptions {
  Schema schema;
  Vocabulary vocab;
  std::vector<ScenarioProfile> profiles;
  double popularity_tilt = 1.0;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  std::size_t bayes_holdout = 10000;
};

/// Generator state that does not depend on the instance index.
class InstanceGenerator {
 public:
  explicit InstanceGenerator(GeneratorOptions options);

  /// Instance `index` of the stream keyed by `seed`.
  Instance instance(std::uint64_t seed, std::uint64_t index) const;
  /// Ground-truth label logit before noise.
  double clean_logit(const Instance& inst) const;
  const GeneratorOptions& options() const { return options_; }

 private:
  GeneratorOptions options_;
  std::vector<double> cumulative_share_;
  std::vector<std::vector<double>> popularity_cdf_;
};

/// Fixed hash featurization, one value in [-1, 1] per feature element in
/// the order [behavior, user, user attrs, item, item attrs, trigger,
/// trigger attrs, context attrs].
std::vector<double> featurize(const Instance& inst, const Schema& schema);

Dataset generate(const GeneratorOptions& options);

/// Data file plus `<path>.manifest.json`.
void write_jsonl(const std::string& path, const Dataset& data);
Dataset read_jsonl(const std::string& path);
std::string manifest_path(const std::string& data_path);

/// One JSON object per line; exposed for tests.
std::string instance_to_json(const Instance& inst);
Instance instance_from_json(const std::string& line, std::size_t line_number);

/// Fixed-size batches over [0, n); the final batch may be short. With a
/// shuffle seed every epoch uses its own deterministic permutation.
class BatchIterator {
 public:
  BatchIterator(std::size_t n, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed);

  std::vector<std::vector<std::size_t>> epoch(std::size_t index) const;
  std::size_t batches_per_epoch() const;

 private:
  std::size_t n_;
  std::size_t batch_size_;
  std::optional<std::uint64_t> seed_;
};

}  // namespace maria
