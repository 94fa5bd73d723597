#pragma once

// Training loop, evaluation reports and the ablation harness.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "maria/data.hpp"
#include "maria/model.hpp"

namespace maria {

struct TrainConfig {
  double learning_rate = 0.05;
  /// Epoch e trains at learning_rate * (1 - lr_decay)^e.
  double lr_decay = 0.01;
  std::size_t batch_size = 512;
  double weight_decay = 1e-6;  // gamma
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 1;
  std::uint64_t seed = 1;
  /// Epochs between validation evaluations; 0 disables them.
  std::size_t eval_every = 0;
  bool early_stopping = false;
  std::size_t patience = 3;
  std::size_t eval_batch_size = 1024;
  std::size_t workers = 1;
};

/// Raised when the loss stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, double loss);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainResult {
  std::vector<double> step_losses;  // summed cross-entropy of each batch
  std::vector<double> epoch_losses;  // mean per-instance loss of each epoch
  std::vector<std::optional<double>> validation_auc;
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
  std::size_t clamp_events = 0;
  bool stopped_early = false;
};

/// Called after every optimizer step with (step, epoch, batch loss).
using StepObserver = std::function<void(std::size_t, std::size_t, double)>;

/// Throws ConfigError when the dataset was generated for another schema.
void check_compatible(const RankingModel& model, const DatasetManifest& manifest);

TrainResult train(RankingModel& model, const Dataset& data, const TrainConfig& config,
                  const Dataset* validation = nullptr, const StepObserver& observer = {});

struct EvalOptions {
  std::size_t batch_size = 1024;
  std::size_t workers = 1;
};

struct ScenarioMetrics {
  std::size_t scenario = 0;
  std::size_t count = 0;
  std::size_t positives = 0;
  std::optional<double> auc;
  std::optional<double> pcoc;
  double mean_prediction = 0.0;
};

/// Selected refiner counts for one field: counts[scenario][refiner].
struct RefinerHistogram {
  std::string field;
  std::vector<std::vector<std::size_t>> counts;
};

struct EvalReport {
  std::size_t count = 0;
  double mean_loss = 0.0;
  std::optional<double> auc;
  std::optional<double> pcoc;
  std::vector<ScenarioMetrics> scenarios;  // scenarios present in the data
  std::vector<RefinerHistogram> refiners;  // empty without refinement
  std::vector<std::string> warnings;
  std::vector<double> loss_trajectory;     // filled in by callers that trained
  std::vector<double> predictions;         // per instance, not serialized

  const ScenarioMetrics* scenario(std::size_t id) const;
};

/// Evaluation mode forward over the whole dataset. Does not modify the model.
EvalReport evaluate(const RankingModel& model, const Dataset& data, const EvalOptions& options = {});

/// Total-variation distance between two refiner-count rows.
double total_variation(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

std::string report_json(const EvalReport& report, int indent = 2);

// ---- ablation --------------------------------------------------------------

/// "full" or the key of one disabled component: fs, fr, fcm, nl, st, gs.
std::vector<std::string> parse_variants(const std::string& list);
std::string variant_label(const std::string& variant);
ModelConfig variant_config(const ModelConfig& base, const std::string& variant);

struct AblationRow {
  std::string variant;
  std::size_t parameters = 0;
  EvalReport report;
  /// Sum over scenarios of (variant AUC - full AUC); negative when worse.
  double total_gain = 0.0;
};

struct AblationReport {
  std::vector<std::size_t> scenarios;
  std::vector<AblationRow> rows;  // the full model first
};

using ProgressLog = std::function<void(const std::string&)>;

/// Trains and evaluates every variant from the same seeds and data. The full
/// model is always trained first as the reference row.
AblationReport ablate(const Dataset& train_data, const Dataset& test_data, const ModelConfig& base,
                      const TrainConfig& config, const std::vector<std::string>& variants,
                      const ProgressLog& log = {});

std::string ablation_text(const AblationReport& report);
std::string ablation_json(const AblationReport& report, int indent = 2);

}  // namespace maria
