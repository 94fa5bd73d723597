#include "maria/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "maria/metrics.hpp"
#include "maria/util.hpp"

namespace maria {

using json = nlohmann::ordered_json;

TrainingDiverged::TrainingDiverged(std::size_t step, double loss)
    : std::runtime_error("loss became non-finite (" + std::to_string(loss) + ") at step " +
                         std::to_string(step)),
      step_(step) {}

void check_compatible(const RankingModel& model, const DatasetManifest& manifest) {
  const ModelConfig& c = model.config();
  if (schema_digest(c.schema, c.vocab) != manifest.digest()) {
    throw ConfigError("dataset manifest does not match the model configuration (schema digest " +
                      hex64(manifest.digest()) + " vs " +
                      hex64(schema_digest(c.schema, c.vocab)) + ")");
  }
}

namespace {

std::vector<const Instance*> pick(const Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<const Instance*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&data.instances[i]);
  return out;
}

std::vector<std::vector<double>> snapshot(const ad::ParameterStore& store) {
  std::vector<std::vector<double>> out;
  for (const ad::Parameter* p : store.all()) out.push_back(p->data);
  return out;
}

void restore(ad::ParameterStore& store, const std::vector<std::vector<double>>& saved) {
  auto params = store.all();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = saved[i];
}

}  // namespace

TrainResult train(RankingModel& model, const Dataset& data, const TrainConfig& config,
                  const Dataset* validation, const StepObserver& observer) {
  check_compatible(model, data.manifest);
  if (validation) check_compatible(model, validation->manifest);
  if (config.batch_size == 0) throw ConfigError("batch_size must be at least 1");

  TrainResult result;
  if (config.epochs == 0 || data.instances.empty()) return result;

  ad::AdamState adam;
  adam.options = {config.learning_rate, config.beta1, config.beta2, config.epsilon,
                  config.weight_decay};
  std::vector<ad::Parameter*> params = model.params().all();
  model.params().zero_grads();

  const ModelConfig& mc = model.config();
  BatchIterator batches(data.instances.size(), config.batch_size, mix_seed(config.seed, 0xba7c4));
  std::optional<double> best_auc;
  std::vector<std::vector<double>> best_params;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    adam.options.learning_rate = config.learning_rate * std::pow(1.0 - config.lr_decay, static_cast<double>(epoch));
    double epoch_loss = 0.0;
    for (const auto& idx : batches.epoch(epoch)) {
      const auto rows = pick(data, idx);
      BatchInputs batch = BatchInputs::from(std::span<const Instance* const>(rows), mc.schema, mc.vocab);
      Graph g(mix_seed(config.seed, result.steps));
      Prediction p = model.forward(g, batch, Mode::train);
      Value loss = batch_loss(p.y, batch.labels);
      const double value = loss.item();
      if (!std::isfinite(value)) throw TrainingDiverged(result.steps, value);
      g.backward(loss);
      ad::adam_step(params, adam);
      model.params().zero_grads();
      result.clamp_events += g.clamp_events();
      result.step_losses.push_back(value);
      epoch_loss += value;
      if (observer) observer(result.steps, epoch, value);
      ++result.steps;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(data.instances.size()));
    result.epochs_run = epoch + 1;

    if (validation && config.eval_every > 0 && (epoch + 1) % config.eval_every == 0) {
      EvalReport r = evaluate(model, *validation, {config.eval_batch_size, config.workers});
      result.validation_auc.push_back(r.auc);
      if (config.early_stopping && r.auc) {
        if (!best_auc || *r.auc > *best_auc) {
          best_auc = r.auc;
          best_params = snapshot(model.params());
          since_best = 0;
        } else if (++since_best >= config.patience) {
          restore(model.params(), best_params);
          result.stopped_early = true;
          break;
        }
      }
    }
  }
  return result;
}

// ---- evaluation ------------------------------------------------------------

const ScenarioMetrics* EvalReport::scenario(std::size_t id) const {
  for (const auto& s : scenarios)
    if (s.scenario == id) return &s;
  return nullptr;
}

namespace {

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Same clamp as the training loss.
double cross_entropy(double p, double y) {
  p = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

}  // namespace

EvalReport evaluate(const RankingModel& model, const Dataset& data, const EvalOptions& options) {
  check_compatible(model, data.manifest);
  const ModelConfig& mc = model.config();
  const std::size_t n = data.instances.size();
  const std::size_t ns = mc.vocab.scenarios;
  const bool refine = mc.kind == ModelKind::maria && mc.enabled.fr;

  EvalReport report;
  report.count = n;
  report.predictions.assign(n, 0.0);

  BatchIterator it(n, std::max<std::size_t>(options.batch_size, 1), std::nullopt);
  const auto batches = it.epoch(0);

  using Counts = std::vector<std::vector<std::vector<std::size_t>>>;  // field, scenario, refiner
  auto empty_counts = [&] {
    Counts c;
    if (refine)
      for (std::size_t f = 0; f < kFieldCount; ++f)
        c.emplace_back(ns, std::vector<std::size_t>(mc.refiners[f], 0));
    return c;
  };

  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(batches.size(), 1));
  std::vector<Counts> local(workers, empty_counts());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&](std::size_t w) {
    try {
      for (std::size_t b; (b = next.fetch_add(1)) < batches.size();) {
        const auto rows = pick(data, batches[b]);
        BatchInputs batch = BatchInputs::from(std::span<const Instance* const>(rows), mc.schema, mc.vocab);
        Graph g(0);
        Prediction p = model.forward(g, batch, Mode::eval);
        auto y = p.y.data();
        for (std::size_t r = 0; r < batch.size; ++r) report.predictions[batches[b][r]] = y[r];
        if (refine) {
          for (std::size_t f = 0; f < kFieldCount; ++f) {
            auto beta = p.betas[f].data();
            const std::size_t k = p.betas[f].cols();
            for (std::size_t r = 0; r < batch.size; ++r) {
              ++local[w][f][batch.scenario[r]][argmax_row(beta.subspan(r * k, k))];
            }
          }
        }
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = batches.size();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  // Summed in instance order so the report does not depend on batching.
  std::vector<double> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = data.instances[i].label;
  double total_loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) total_loss += cross_entropy(report.predictions[i], labels[i]);
  report.mean_loss = n ? total_loss / static_cast<double>(n) : 0.0;
  report.auc = auc(report.predictions, labels);
  report.pcoc = pcoc(report.predictions, labels);

  std::vector<std::vector<double>> s_scores(ns), s_labels(ns);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = data.instances[i].scenario;
    s_scores[s].push_back(report.predictions[i]);
    s_labels[s].push_back(labels[i]);
  }
  for (std::size_t s = 0; s < ns; ++s) {
    if (s_scores[s].empty()) {
      report.warnings.push_back("scenario " + std::to_string(s) + " has no instances; omitted");
      continue;
    }
    ScenarioMetrics m;
    m.scenario = s;
    m.count = s_scores[s].size();
    for (double y : s_labels[s]) m.positives += y > 0.5;
    m.auc = auc(s_scores[s], s_labels[s]);
    m.pcoc = pcoc(s_scores[s], s_labels[s]);
    double sum = 0.0;
    for (double v : s_scores[s]) sum += v;
    m.mean_prediction = sum / static_cast<double>(m.count);
    report.scenarios.push_back(m);
  }

  if (refine) {
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      RefinerHistogram h;
      h.field = kFieldNames[f];
      h.counts.assign(ns, std::vector<std::size_t>(mc.refiners[f], 0));
      for (const Counts& c : local)
        for (std::size_t s = 0; s < ns; ++s)
          for (std::size_t k = 0; k < mc.refiners[f]; ++k) h.counts[s][k] += c[f][s][k];
      report.refiners.push_back(std::move(h));
    }
  }
  return report;
}

double total_variation(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("total_variation: length mismatch");
  double na = 0.0, nb = 0.0;
  for (std::size_t v : a) na += static_cast<double>(v);
  for (std::size_t v : b) nb += static_cast<double>(v);
  if (na == 0.0 || nb == 0.0) return 0.0;
  double tv = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    tv += std::abs(static_cast<double>(a[k]) / na - static_cast<double>(b[k]) / nb);
  }
  return 0.5 * tv;
}

namespace {

json metric(const std::optional<double>& v) { return v ? json(*v) : json("n/a"); }

json to_json(const EvalReport& r) {
  json j;
  j["count"] = r.count;
  j["mean_loss"] = r.mean_loss;
  j["auc"] = metric(r.auc);
  j["pcoc"] = metric(r.pcoc);
  json scen = json::array();
  for (const auto& s : r.scenarios) {
    scen.push_back({{"scenario", s.scenario},
                    {"count", s.count},
                    {"positives", s.positives},
                    {"auc", metric(s.auc)},
                    {"pcoc", metric(s.pcoc)},
                    {"mean_prediction", s.mean_prediction}});
  }
  j["scenarios"] = scen;
  json hist = json::object();
  for (const auto& h : r.refiners) {
    json per = json::object();
    for (const auto& s : r.scenarios) per[std::to_string(s.scenario)] = h.counts[s.scenario];
    hist[h.field] = per;
  }
  j["refiner_histograms"] = hist;
  j["loss_trajectory"] = r.loss_trajectory;
  j["warnings"] = r.warnings;
  return j;
}

}  // namespace

std::string report_json(const EvalReport& report, int indent) { return to_json(report).dump(indent); }

// ---- ablation --------------------------------------------------------------

namespace {

const std::vector<std::pair<std::string, std::string>> kVariants = {
    {"full", "full"},    {"fs", "w/o FS"}, {"fr", "w/o FR"}, {"fcm", "w/o FCM"},
    {"nl", "w/o NL"},    {"st", "w/o ST"}, {"gs", "w/o GS"}};

}  // namespace

std::vector<std::string> parse_variants(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    const bool known = std::any_of(kVariants.begin(), kVariants.end(),
                                   [&](const auto& v) { return v.first == item; });
    if (!known) throw ConfigError("unknown ablation variant '" + item + "' (full, fs, fr, fcm, nl, st, gs)");
    if (std::find(out.begin(), out.end(), item) == out.end()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError("no ablation variants given");
  return out;
}

std::string variant_label(const std::string& variant) {
  for (const auto& [key, label] : kVariants)
    if (key == variant) return label;
  throw ConfigError("unknown ablation variant '" + variant + "'");
}

ModelConfig variant_config(const ModelConfig& base, const std::string& variant) {
  ModelConfig c = base;
  c.kind = ModelKind::maria;
  if (variant == "fs") c.enabled.fs = false;
  else if (variant == "fr") c.enabled.fr = false;
  else if (variant == "fcm") c.enabled.fcm = false;
  else if (variant == "nl") c.enabled.nl = false;
  else if (variant == "st") c.enabled.st = false;
  else if (variant == "gs") c.enabled.gs = false;
  else if (variant != "full") throw ConfigError("unknown ablation variant '" + variant + "'");
  return c;
}

AblationReport ablate(const Dataset& train_data, const Dataset& test_data, const ModelConfig& base,
                      const TrainConfig& config, const std::vector<std::string>& variants,
                      const ProgressLog& log) {
  std::vector<std::string> order{"full"};
  for (const auto& v : variants)
    if (v != "full") order.push_back(v);

  AblationReport out;
  for (const auto& v : order) {
    if (log) log("training " + variant_label(v));
    auto model = make_model(variant_config(base, v));
    TrainResult tr = train(*model, train_data, config);
    AblationRow row;
    row.variant = v;
    row.parameters = model->params().scalar_count();
    row.report = evaluate(*model, test_data, {config.eval_batch_size, config.workers});
    row.report.loss_trajectory = tr.step_losses;
    out.rows.push_back(std::move(row));
  }
  const EvalReport& full = out.rows.front().report;
  for (const auto& s : full.scenarios) out.scenarios.push_back(s.scenario);
  for (auto& row : out.rows) {
    double gain = 0.0;
    for (std::size_t s : out.scenarios) {
      const ScenarioMetrics* a = row.report.scenario(s);
      const ScenarioMetrics* b = full.scenario(s);
      if (a && b && a->auc && b->auc) gain += *a->auc - *b->auc;
    }
    row.total_gain = gain;
  }
  return out;
}

std::string ablation_text(const AblationReport& report) {
  std::ostringstream os;
  char buf[64];
  auto cell = [&](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  os << std::left;
  std::string header = "variant   ";
  for (std::size_t s : report.scenarios) {
    std::snprintf(buf, sizeof buf, "%-10s", ("s" + std::to_string(s) + " AUC").c_str());
    header += buf;
  }
  header += "overall   total gain  params";
  os << header << "\n" << std::string(header.size(), '-') << "\n";
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof buf, "%-10s", variant_label(row.variant).c_str());
    os << buf;
    for (std::size_t s : report.scenarios) {
      const ScenarioMetrics* m = row.report.scenario(s);
      std::snprintf(buf, sizeof buf, "%-10s", cell(m ? m->auc : std::nullopt).c_str());
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%-10s", cell(row.report.auc).c_str());
    os << buf;
    std::snprintf(buf, sizeof buf, "%+-12.4f%zu", row.total_gain, row.parameters);
    os << buf << "\n";
  }
  return os.str();
}

std::string ablation_json(const AblationReport& report, int indent) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    json r;
    r["variant"] = row.variant;
    r["label"] = variant_label(row.variant);
    r["parameters"] = row.parameters;
    r["total_gain"] = row.total_gain;
    r["report"] = to_json(row.report);
    rows.push_back(r);
  }
  json j;
  j["scenarios"] = report.scenarios;
  j["rows"] = rows;
  return j.dump(indent);
}

}  // namespace maria
