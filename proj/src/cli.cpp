#include "maria/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>

#include "CLI11.hpp"
#include "json.hpp"
#include "maria/checkpoint.hpp"
#include "maria/config.hpp"
#include "maria/gradcheck.hpp"
#include "maria/trainer.hpp"
#include "maria/util.hpp"

namespace maria {

std::string tiny_gradcheck_config() {
  return R"(# tiny model for finite-difference checks
user_attrs = 1
item_attrs = 1
trigger_attrs = 1
context_attrs = 1
max_behaviors = 4
image_dim = 4
vocab_users = 6
vocab_items = 8
vocab_user_attrs = 4
vocab_item_attrs = 4
vocab_trigger_attrs = 3
vocab_context_attrs = 3
traffic_share = 0.5,0.5
trigger_kinds = product,none
data_count = 6
bayes_holdout = 0
user_dim = 4
item_dim = 4
attr_dim = 2
context_dim = 2
scenario_dim = 3
scale_hidden = 4
refiners = 1,2,1,1,1
correlation_dim = 3
experts = 2
expert_layers = 6,5
tower_layers = 5,4
)";
}

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
};

Config load_config(const Common& c, const std::string& fallback = {}) {
  Config cfg = c.config_path.empty() ? (fallback.empty() ? Config() : Config::parse(fallback, "built-in"))
                                     : Config::load(c.config_path);
  for (const auto& s : c.sets) cfg.assign(s);
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::string eval_text(const EvalReport& r) {
  std::string out = "instances " + std::to_string(r.count) + "  AUC " + fmt(r.auc) + "  PCOC " +
                    fmt(r.pcoc) + "  mean loss " + fmt(r.mean_loss) + "\n";
  for (const auto& s : r.scenarios) {
    out += "  scenario " + std::to_string(s.scenario) + ": n=" + std::to_string(s.count) +
           " positives=" + std::to_string(s.positives) + " AUC " + fmt(s.auc) + " PCOC " +
           fmt(s.pcoc) + "\n";
  }
  for (const auto& h : r.refiners) {
    out += "  refiners[" + h.field + "]:";
    for (const auto& s : r.scenarios) {
      out += " s" + std::to_string(s.scenario) + "=";
      for (std::size_t k = 0; k < h.counts[s.scenario].size(); ++k)
        out += (k ? "/" : "") + std::to_string(h.counts[s.scenario][k]);
    }
    out += "\n";
  }
  for (const auto& w : r.warnings) out += "  warning: " + w + "\n";
  return out;
}

// ---- subcommands -----------------------------------------------------------

int gen_data(const Common& common, const std::string& out_path, std::optional<std::size_t> count,
             std::optional<std::uint64_t> seed, std::ostream& out) {
  Config cfg = load_config(common);
  if (count) cfg.set("data_count", std::to_string(*count));
  if (seed) cfg.set("data_seed", std::to_string(*seed));
  const Dataset data = generate(generator_from(cfg));
  write_jsonl(out_path, data);
  const DatasetManifest& m = data.manifest;
  out << "wrote " << m.count() << " instances to " << out_path << "\n";
  for (std::size_t s = 0; s < m.scenario_counts.size(); ++s) {
    out << "  scenario " << s << ": " << m.scenario_counts[s] << " instances, positive rate "
        << fmt(m.positive_rates[s]) << "\n";
  }
  out << "  ground-truth AUC: " << fmt(m.bayes_auc) << "\n";
  return kExitOk;
}

int train_cmd(const Common& common, const std::string& data_path, const std::string& model_out,
              const std::string& metrics_out, const std::string& eval_path,
              const std::string& baseline, const std::string& disable, std::size_t workers,
              std::ostream& out, std::ostream& err) {
  Config cfg = load_config(common);
  if (!baseline.empty()) cfg.set("model", baseline);
  if (!disable.empty()) cfg.set("disable", disable);
  if (workers) cfg.set("workers", std::to_string(workers));
  const ModelConfig mc = model_from(cfg);
  const TrainConfig tc = train_from(cfg);
  const Dataset data = read_jsonl(data_path);
  auto model = make_model(mc);
  check_compatible(*model, data.manifest);

  const std::size_t per_epoch = (data.instances.size() + tc.batch_size - 1) / tc.batch_size;
  TrainResult tr = train(*model, data, tc, nullptr, [&](std::size_t step, std::size_t epoch, double) {
    if (per_epoch && (step + 1) % per_epoch == 0) err << "epoch " << epoch + 1 << " done\n";
  });
  save_checkpoint(*model, model_out);

  const Dataset eval_data = eval_path.empty() ? Dataset{} : read_jsonl(eval_path);
  EvalReport report = evaluate(*model, eval_path.empty() ? data : eval_data,
                               {tc.eval_batch_size, tc.workers});
  report.loss_trajectory = tr.step_losses;
  const std::string path = metrics_out.empty() ? model_out + ".metrics.json" : metrics_out;
  write_text(path, report_json(report) + "\n");
  out << "trained " << to_string(mc.kind) << " (" << model->params().scalar_count()
      << " parameters) for " << tr.steps << " steps; clamp events " << tr.clamp_events << "\n";
  out << eval_text(report);
  out << "checkpoint " << model_out << ", metrics " << path << "\n";
  return kExitOk;
}

int eval_cmd(const std::string& model_path, const std::string& data_path, std::size_t workers,
             std::size_t batch_size, bool as_json, std::ostream& out) {
  auto model = load_checkpoint(model_path);
  const Dataset data = read_jsonl(data_path);
  EvalReport report = evaluate(*model, data, {batch_size, std::max<std::size_t>(workers, 1)});
  out << (as_json ? report_json(report) + "\n" : eval_text(report));
  return kExitOk;
}

int ablate_cmd(const Common& common, const std::string& train_path, const std::string& test_path,
               const std::string& variants, const std::string& out_path, bool as_json,
               std::ostream& out, std::ostream& err) {
  Config cfg = load_config(common);
  const ModelConfig mc = model_from(cfg);
  const TrainConfig tc = train_from(cfg);
  const Dataset train_data = read_jsonl(train_path);
  const Dataset test_data = read_jsonl(test_path.empty() ? train_path : test_path);
  const AblationReport report = ablate(train_data, test_data, mc, tc, parse_variants(variants),
                                       [&](const std::string& s) { err << s << "\n"; });
  if (!out_path.empty()) write_text(out_path, ablation_json(report) + "\n");
  out << (as_json ? ablation_json(report) + "\n" : ablation_text(report));
  return kExitOk;
}

int gradcheck_cmd(const Common& common, std::uint64_t seed, double tolerance,
                  const std::string& fault, bool as_json, std::ostream& out) {
  Config cfg = load_config(common, tiny_gradcheck_config());
  const ModelConfig mc = model_from(cfg);
  const Dataset data = generate(generator_from(cfg));
  auto model = make_model(mc);
  BatchInputs batch = BatchInputs::from(std::span<const Instance>(data.instances), mc.schema, mc.vocab);

  if (!fault.empty()) {
    const auto colon = fault.find(':');
    const std::string kind = fault.substr(0, colon);
    const double factor = colon == std::string::npos ? 1.5 : std::stod(fault.substr(colon + 1));
    Graph::inject_backward_fault(kind, factor);
  }
  GradCheckReport report;
  try {
    report = check_model_gradients(*model, batch, seed, 1e-5, tolerance);
  } catch (...) {
    Graph::inject_backward_fault("", 1.0);
    throw;
  }
  Graph::inject_backward_fault("", 1.0);
  out << (as_json ? report.json() + "\n" : report.text());
  return report.pass() ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scenario ranking: data generation, training, evaluation, ablation, gradient checks"};
  app.name("maria");
  app.require_subcommand(1);
  app.footer("Config keys (key = value; --set key=value overrides):\n" + config_help());

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "config file of key = value lines");
    sub->add_option("--set", common.sets, "override one config key (key=value), repeatable");
  };

  std::string out_path, data_path, model_path, metrics_out, eval_path, baseline, disable, test_path;
  std::string variants = "full,fs,fr,fcm,nl,st,gs", fault;
  std::optional<std::size_t> count;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0, batch_size = 1024;
  std::uint64_t gc_seed = 1;
  double tolerance = 1e-4;
  bool as_json = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen);
  gen->add_option("--out", out_path, "output JSONL path")->required();
  gen->add_option("--count", count, "instances (overrides data_count)");
  gen->add_option("--seed", seed, "stream seed (overrides data_seed)");

  CLI::App* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(tr);
  tr->add_option("--data", data_path, "training JSONL")->required();
  tr->add_option("--model-out", model_path, "checkpoint path")->required();
  tr->add_option("--metrics-out", metrics_out, "metrics JSON (default <model-out>.metrics.json)");
  tr->add_option("--eval-data", eval_path, "dataset for the final metrics (default --data)");
  tr->add_option("--baseline", baseline, "hard_sharing, shared_bottom or mmoe");
  tr->add_option("--disable", disable, "components to switch off: fs,fr,fcm,nl,st,gs");
  tr->add_option("--workers", workers, "evaluation threads");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--model", model_path, "checkpoint path")->required();
  ev->add_option("--data", data_path, "JSONL dataset")->required();
  ev->add_option("--workers", workers, "evaluation threads");
  ev->add_option("--batch-size", batch_size, "evaluation batch size");
  ev->add_flag("--json", as_json, "print the report as JSON");

  CLI::App* ab = app.add_subcommand("ablate", "train and compare ablation variants");
  add_common(ab);
  ab->add_option("--data", data_path, "training JSONL")->required();
  ab->add_option("--test", test_path, "test JSONL (default --data)");
  ab->add_option("--variants", variants, "comma list of full, fs, fr, fcm, nl, st, gs");
  ab->add_option("--out", out_path, "also write the JSON report here");
  ab->add_flag("--json", as_json, "print JSON instead of the table");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gc);
  gc->add_option("--seed", gc_seed, "noise seed held fixed across evaluations");
  gc->add_option("--tolerance", tolerance, "max relative error");
  gc->add_option("--inject-fault", fault, "test fixture: scale one op's backward (kind[:factor])");
  gc->add_flag("--json", as_json, "print JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return gen_data(common, out_path, count, seed, out);
    if (tr->parsed())
      return train_cmd(common, data_path, model_path, metrics_out, eval_path, baseline, disable,
                       workers, out, err);
    if (ev->parsed()) return eval_cmd(model_path, data_path, workers, batch_size, as_json, out);
    if (ab->parsed()) return ablate_cmd(common, data_path, test_path, variants, out_path, as_json, out, err);
    if (gc->parsed()) return gradcheck_cmd(common, gc_seed, tolerance, fault, as_json, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitIo;
  } catch (const TrainingDiverged& e) {
    err << "training diverged: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitConfig;
}

}  // namespace maria
