#include "maria/config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "maria/util.hpp"

namespace maria {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      // schema and vocabulary
      {"user_attrs", "2", "user attribute count L", "schema"},
      {"item_attrs", "2", "item attribute count P", "schema"},
      {"trigger_attrs", "1", "trigger attribute count O", "schema"},
      {"context_attrs", "2", "context attribute count N_c", "schema"},
      {"max_behaviors", "5", "behavior sequence capacity m", "schema"},
      {"image_dim", "8", "image trigger width d_t", "schema"},
      {"vocab_users", "500", "number of users", "schema"},
      {"vocab_items", "500", "number of items", "schema"},
      {"vocab_user_attrs", "40", "user attribute vocabulary", "schema"},
      {"vocab_item_attrs", "40", "item attribute vocabulary", "schema"},
      {"vocab_trigger_attrs", "20", "trigger attribute vocabulary", "schema"},
      {"vocab_context_attrs", "20", "context attribute vocabulary", "schema"},
      {"num_scenarios", "0", "scenario count; 0 = one per traffic_share entry", "schema"},
      // generator
      {"traffic_share", "0.5,0.3,0.2", "per-scenario traffic shares, must sum to 1", "data"},
      {"trigger_kinds", "image,product,none", "per-scenario trigger kind (image, product, none)", "data"},
      {"mask_regime", "disjoint", "importance masks: disjoint, overlap, shared, zero", "data"},
      {"label_weight_scale", "1.5", "magnitude of the ground-truth label weights", "data"},
      {"label_bias", "0", "ground-truth logit bias", "data"},
      {"noise_std", "0.5", "label logit noise", "data"},
      {"profile_seed", "7", "seed for masks and label weights", "data"},
      {"popularity_tilt", "1", "skew of the per-scenario item popularity", "data"},
      {"data_count", "10000", "instances to generate", "data"},
      {"data_seed", "1", "instance stream seed", "data"},
      {"bayes_holdout", "10000", "held-out sample for the ground-truth AUC (0 = skip)", "data"},
      // model
      {"model", "maria", "maria, hard_sharing, shared_bottom or mmoe", "model"},
      {"user_dim", "8", "user embedding d_u", "model"},
      {"item_dim", "8", "item embedding d_x", "model"},
      {"attr_dim", "8", "attribute embedding d_a", "model"},
      {"context_dim", "8", "context embedding d_c", "model"},
      {"scenario_dim", "8", "scenario embedding d_s", "model"},
      {"heads", "2", "self-attention heads", "model"},
      {"ffn_multiplier", "2", "encoder feed-forward width over model width", "model"},
      {"scale_hidden", "64", "hidden widths of the scaling network (may be empty)", "model"},
      {"fs_lambda", "2", "scaling ceiling lambda", "model"},
      {"gumbel_temperature", "0.01", "refiner selection temperature tau", "model"},
      {"refiners", "1,2,1,1,1", "refiners per field: behavior,user,item,trigger,context", "model"},
      {"refiner_ratio", "0.5", "refiner width over field width, rounded up", "model"},
      {"correlation_dim", "8", "field projection width d_r", "model"},
      {"experts", "4", "experts N_e", "model"},
      {"expert_layers", "256,256", "expert widths", "model"},
      {"tower_layers", "128,64,32", "scenario and shared tower widths", "model"},
      {"disable", "", "components to switch off: fs,fr,fcm,nl,st,gs", "model"},
      {"match_baseline_params", "true", "widen baseline experts to MARIA's parameter count", "model"},
      {"init_seed", "1", "parameter initialization seed", "model"},
      // training
      {"learning_rate", "0.05", "Adam step size", "train"},
      {"lr_decay", "0.01", "per-epoch learning rate decay: epoch e uses learning_rate * (1 - lr_decay)^e", "train"},
      {"batch_size", "512", "mini-batch size", "train"},
      {"weight_decay", "1e-6", "decoupled L2 coefficient gamma", "train"},
      {"adam_beta1", "0.9", "Adam beta1", "train"},
      {"adam_beta2", "0.999", "Adam beta2", "train"},
      {"adam_epsilon", "1e-8", "Adam epsilon", "train"},
      {"epochs", "1", "training epochs", "train"},
      {"seed", "1", "shuffle and Gumbel noise seed", "train"},
      {"eval_every", "0", "epochs between validation evaluations (0 = never)", "train"},
      {"early_stopping", "false", "stop when validation AUC stalls", "train"},
      {"patience", "3", "evaluations without improvement before stopping", "train"},
      {"eval_batch_size", "1024", "evaluation batch size", "train"},
      {"workers", "1", "evaluation threads", "train"},
  };
  return keys;
}

std::string config_help() {
  std::ostringstream os;
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      section = k.section;
      os << "\n[" << section << "]\n";
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "  %-22s = %-20s %s\n", k.name.c_str(),
                  k.default_value.c_str(), k.help.c_str());
    os << buf;
  }
  return os.str();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool known(const std::string& key) {
  for (const auto& k : config_keys())
    if (k.name == key) return true;
  return false;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError(key + ": expected " + want + ", got '" + value + "'");
}

double to_real(const std::string& key, const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) bad_value(key, s, "a number");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    bad_value(key, s, "a non-negative integer");
  }
  return v;
}

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, double>) out += real_text(xs[i]);
    else out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

Config::Config() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

Config Config::parse(std::string_view text, const std::string& source) {
  Config c;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + body + "'");
    const std::string key = trim(body.substr(0, eq));
    try {
      c.set(key, trim(body.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void Config::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown key '" + key + "' (see --help for the list)");
  values_[key] = trim(value);
}

void Config::assign(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

double Config::real(const std::string& key) const { return to_real(key, get(key)); }

std::size_t Config::count(const std::string& key) const {
  return static_cast<std::size_t>(to_u64(key, get(key)));
}

std::uint64_t Config::u64(const std::string& key) const { return to_u64(key, get(key)); }

bool Config::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::size_t> Config::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& s : split(get(key))) out.push_back(static_cast<std::size_t>(to_u64(key, s)));
  return out;
}

std::vector<double> Config::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : split(get(key))) out.push_back(to_real(key, s));
  return out;
}

std::vector<std::string> Config::list(const std::string& key) const { return split(get(key)); }

std::string Config::render() const {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + get(k.name) + "\n";
  return out;
}

// ---- typed views -----------------------------------------------------------

Schema schema_from(const Config& c) {
  Schema s;
  s.user_attrs = c.count("user_attrs");
  s.item_attrs = c.count("item_attrs");
  s.trigger_attrs = c.count("trigger_attrs");
  s.context_attrs = c.count("context_attrs");
  s.max_behaviors = c.count("max_behaviors");
  s.image_dim = c.count("image_dim");
  return s;
}

Vocabulary vocab_from(const Config& c) {
  Vocabulary v;
  v.users = c.count("vocab_users");
  v.items = c.count("vocab_items");
  v.user_attrs = c.count("vocab_user_attrs");
  v.item_attrs = c.count("vocab_item_attrs");
  v.trigger_attrs = c.count("vocab_trigger_attrs");
  v.context_attrs = c.count("vocab_context_attrs");
  v.scenarios = c.count("num_scenarios");
  if (v.scenarios == 0) v.scenarios = c.reals("traffic_share").size();
  if (v.scenarios == 0) throw ConfigError("num_scenarios: no scenarios configured");
  return v;
}

ProfileRecipe recipe_from(const Config& c) {
  ProfileRecipe r;
  r.traffic_share = c.reals("traffic_share");
  r.trigger_kinds.clear();
  for (const auto& k : c.list("trigger_kinds")) r.trigger_kinds.push_back(parse_trigger_kind(k));
  r.regime = parse_mask_regime(c.get("mask_regime"));
  r.weight_scale = c.real("label_weight_scale");
  r.label_bias = c.real("label_bias");
  r.noise_std = c.real("noise_std");
  r.seed = c.u64("profile_seed");
  return r;
}

GeneratorOptions generator_from(const Config& c) {
  GeneratorOptions o;
  o.schema = schema_from(c);
  o.vocab = vocab_from(c);
  o.profiles = make_profiles(recipe_from(c), o.schema);
  o.popularity_tilt = c.real("popularity_tilt");
  o.count = c.count("data_count");
  o.seed = c.u64("data_seed");
  o.bayes_holdout = c.count("bayes_holdout");
  return o;
}

AblationFlags parse_disable(const std::string& list) {
  AblationFlags f;
  for (const auto& item : split(list)) {
    if (item == "fs") f.fs = false;
    else if (item == "fr") f.fr = false;
    else if (item == "fcm") f.fcm = false;
    else if (item == "nl") f.nl = false;
    else if (item == "st") f.st = false;
    else if (item == "gs") f.gs = false;
    else throw ConfigError("disable: unknown component '" + item + "' (fs, fr, fcm, nl, st, gs)");
  }
  return f;
}

std::string disable_list(const AblationFlags& e) {
  std::vector<std::string> off;
  if (!e.fs) off.push_back("fs");
  if (!e.fr) off.push_back("fr");
  if (!e.fcm) off.push_back("fcm");
  if (!e.nl) off.push_back("nl");
  if (!e.st) off.push_back("st");
  if (!e.gs) off.push_back("gs");
  std::string out;
  for (std::size_t i = 0; i < off.size(); ++i) out += (i ? "," : "") + off[i];
  return out;
}

ModelConfig model_from(const Config& c) {
  ModelConfig m;
  m.schema = schema_from(c);
  m.vocab = vocab_from(c);
  m.kind = parse_model_kind(c.get("model"));
  m.user_dim = c.count("user_dim");
  m.item_dim = c.count("item_dim");
  m.attr_dim = c.count("attr_dim");
  m.context_dim = c.count("context_dim");
  m.scenario_dim = c.count("scenario_dim");
  m.heads = c.count("heads");
  m.ffn_multiplier = c.count("ffn_multiplier");
  m.scale_hidden = c.counts("scale_hidden");
  m.lambda = c.real("fs_lambda");
  m.temperature = c.real("gumbel_temperature");
  m.refiners = c.counts("refiners");
  m.refiner_ratio = c.real("refiner_ratio");
  m.correlation_dim = c.count("correlation_dim");
  m.experts = c.count("experts");
  m.expert_layers = c.counts("expert_layers");
  m.tower_layers = c.counts("tower_layers");
  m.enabled = parse_disable(c.get("disable"));
  m.match_baseline_params = c.flag("match_baseline_params");
  m.init_seed = c.u64("init_seed");
  return m;
}

TrainConfig train_from(const Config& c) {
  TrainConfig t;
  t.learning_rate = c.real("learning_rate");
  t.lr_decay = c.real("lr_decay");
  t.batch_size = c.count("batch_size");
  t.weight_decay = c.real("weight_decay");
  t.beta1 = c.real("adam_beta1");
  t.beta2 = c.real("adam_beta2");
  t.epsilon = c.real("adam_epsilon");
  t.epochs = c.count("epochs");
  t.seed = c.u64("seed");
  t.eval_every = c.count("eval_every");
  t.early_stopping = c.flag("early_stopping");
  t.patience = c.count("patience");
  t.eval_batch_size = c.count("eval_batch_size");
  t.workers = c.count("workers");
  if (!(t.learning_rate > 0)) throw ConfigError("learning_rate: must be positive");
  if (!(t.lr_decay >= 0 && t.lr_decay < 1)) throw ConfigError("lr_decay: must lie in [0, 1)");
  if (t.batch_size == 0) throw ConfigError("batch_size: must be at least 1");
  if (t.weight_decay < 0) throw ConfigError("weight_decay: must be non-negative");
  if (t.eval_batch_size == 0) throw ConfigError("eval_batch_size: must be at least 1");
  if (t.workers == 0) throw ConfigError("workers: must be at least 1");
  return t;
}

// ---- model config text -----------------------------------------------------

std::string model_config_text(const ModelConfig& m) {
  std::ostringstream os;
  auto line = [&](const char* key, const std::string& value) { os << key << " = " << value << "\n"; };
  line("user_attrs", std::to_string(m.schema.user_attrs));
  line("item_attrs", std::to_string(m.schema.item_attrs));
  line("trigger_attrs", std::to_string(m.schema.trigger_attrs));
  line("context_attrs", std::to_string(m.schema.context_attrs));
  line("max_behaviors", std::to_string(m.schema.max_behaviors));
  line("image_dim", std::to_string(m.schema.image_dim));
  line("vocab_users", std::to_string(m.vocab.users));
  line("vocab_items", std::to_string(m.vocab.items));
  line("vocab_user_attrs", std::to_string(m.vocab.user_attrs));
  line("vocab_item_attrs", std::to_string(m.vocab.item_attrs));
  line("vocab_trigger_attrs", std::to_string(m.vocab.trigger_attrs));
  line("vocab_context_attrs", std::to_string(m.vocab.context_attrs));
  line("num_scenarios", std::to_string(m.vocab.scenarios));
  line("model", to_string(m.kind));
  line("user_dim", std::to_string(m.user_dim));
  line("item_dim", std::to_string(m.item_dim));
  line("attr_dim", std::to_string(m.attr_dim));
  line("context_dim", std::to_string(m.context_dim));
  line("scenario_dim", std::to_string(m.scenario_dim));
  line("heads", std::to_string(m.heads));
  line("ffn_multiplier", std::to_string(m.ffn_multiplier));
  line("scale_hidden", join(m.scale_hidden));
  line("fs_lambda", real_text(m.lambda));
  line("gumbel_temperature", real_text(m.temperature));
  line("refiners", join(m.refiners));
  line("refiner_ratio", real_text(m.refiner_ratio));
  line("correlation_dim", std::to_string(m.correlation_dim));
  line("experts", std::to_string(m.experts));
  line("expert_layers", join(m.expert_layers));
  line("tower_layers", join(m.tower_layers));
  line("disable", disable_list(m.enabled));
  line("match_baseline_params", m.match_baseline_params ? "true" : "false");
  line("init_seed", std::to_string(m.init_seed));
  return os.str();
}

ModelConfig model_config_from_text(std::string_view text) {
  return model_from(Config::parse(text, "checkpoint config"));
}

std::uint64_t config_digest(const ModelConfig& config) { return fnv1a(model_config_text(config)); }

}  // namespace maria
