#include "maria/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "maria/metrics.hpp"
#include "maria/util.hpp"

namespace maria {

using ordered_json = nlohmann::ordered_json;

namespace {

// Salts of the hash featurization.
enum : std::uint64_t {
  kItemSalt = 1,
  kUserSalt = 2,
  kTriggerItemSalt = 5,
  kUserAttrSalt = 100,
  kItemAttrSalt = 200,
  kTriggerAttrSalt = 300,
  kContextSalt = 400,
  kPopularitySalt = 900,
  kUserAttrAssign = 1000,
  kItemAttrAssign = 2000,
};

constexpr std::uint64_t kHoldoutStream = 0xb4e5a11dULL;

double hash_feature(std::uint64_t salt, std::size_t id) {
  const std::uint64_t h = splitmix64(mix_seed(salt, id));
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

std::size_t assigned_attr(std::uint64_t salt, std::size_t id, std::size_t slot, std::size_t vocab) {
  return static_cast<std::size_t>(splitmix64(mix_seed(salt + slot, id)) % vocab);
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_shares(const std::vector<double>& shares) {
  if (shares.empty()) throw ConfigError("traffic_share: at least one scenario is required");
  double total = 0.0;
  for (double s : shares) {
    if (!(s >= 0.0)) throw ConfigError("traffic_share: shares must be non-negative");
    total += s;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "traffic_share: shares sum to " << total << ", expected 1";
    throw ConfigError(os.str());
  }
}

ordered_json ids_json(const std::vector<std::size_t>& ids) { return ordered_json(ids); }

}  // namespace

std::uint64_t schema_digest(const Schema& s, const Vocabulary& v) {
  std::ostringstream os;
  os << "L=" << s.user_attrs << ";P=" << s.item_attrs << ";O=" << s.trigger_attrs
     << ";Nc=" << s.context_attrs << ";m=" << s.max_behaviors << ";dt=" << s.image_dim
     << ";N=" << v.users << ";M=" << v.items << ";Nau=" << v.user_attrs << ";Nax=" << v.item_attrs
     << ";Nat=" << v.trigger_attrs << ";Nac=" << v.context_attrs << ";Ns=" << v.scenarios;
  return fnv1a(os.str());
}

const char* to_string(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::image:
      return "image";
    case TriggerKind::product:
      return "product";
    case TriggerKind::none:
      break;
  }
  return "none";
}

TriggerKind parse_trigger_kind(const std::string& s) {
  if (s == "image") return TriggerKind::image;
  if (s == "product") return TriggerKind::product;
  if (s == "none") return TriggerKind::none;
  throw ConfigError("unknown trigger kind '" + s + "' (expected image, product or none)");
}

MaskRegime parse_mask_regime(const std::string& s) {
  if (s == "disjoint") return MaskRegime::disjoint;
  if (s == "overlap") return MaskRegime::overlap;
  if (s == "shared") return MaskRegime::shared;
  if (s == "zero") return MaskRegime::zero;
  throw ConfigError("mask_regime: unknown value '" + s + "' (expected disjoint, overlap, shared or zero)");
}

const char* to_string(MaskRegime regime) {
  switch (regime) {
    case MaskRegime::disjoint:
      return "disjoint";
    case MaskRegime::overlap:
      return "overlap";
    case MaskRegime::shared:
      return "shared";
    case MaskRegime::zero:
      break;
  }
  return "zero";
}

void validate(const Instance& inst, const Schema& schema, const Vocabulary& vocab) {
  auto bound = [](const char* field, std::size_t id, std::size_t limit) {
    if (id >= limit) {
      throw DataError(std::string(field) + ": id " + std::to_string(id) +
                      " exceeds vocabulary size " + std::to_string(limit));
    }
  };
  auto count = [](const char* field, std::size_t got, std::size_t want) {
    if (got != want) {
      throw DataError(std::string(field) + ": expected " + std::to_string(want) + " entries, got " +
                      std::to_string(got));
    }
  };
  bound("scenario", inst.scenario, vocab.scenarios);
  bound("user", inst.user, vocab.users);
  count("user_attrs", inst.user_attrs.size(), schema.user_attrs);
  for (auto a : inst.user_attrs) bound("user_attrs", a, vocab.user_attrs);
  if (inst.behavior.empty() || inst.behavior.size() > schema.max_behaviors) {
    throw DataError("behavior: length " + std::to_string(inst.behavior.size()) + " outside 1.." +
                    std::to_string(schema.max_behaviors));
  }
  for (const auto& b : inst.behavior) {
    bound("behavior.item", b.item, vocab.items);
    count("behavior.attrs", b.attrs.size(), schema.item_attrs);
    for (auto a : b.attrs) bound("behavior.attrs", a, vocab.item_attrs);
  }
  bound("target_item", inst.target_item, vocab.items);
  count("target_attrs", inst.target_attrs.size(), schema.item_attrs);
  for (auto a : inst.target_attrs) bound("target_attrs", a, vocab.item_attrs);
  switch (inst.trigger.kind) {
    case TriggerKind::image:
      count("trigger.vector", inst.trigger.vector.size(), schema.image_dim);
      break;
    case TriggerKind::product:
      bound("trigger.item", inst.trigger.item, vocab.items);
      count("trigger.attrs", inst.trigger.attrs.size(), schema.trigger_attrs);
      for (auto a : inst.trigger.attrs) bound("trigger.attrs", a, vocab.trigger_attrs);
      break;
    case TriggerKind::none:
      break;
  }
  count("context", inst.context.size(), schema.context_attrs);
  for (auto a : inst.context) bound("context", a, vocab.context_attrs);
  if (inst.label != 0 && inst.label != 1) {
    throw DataError("label: expected 0 or 1, got " + std::to_string(inst.label));
  }
}

std::vector<ScenarioProfile> make_profiles(const ProfileRecipe& recipe, const Schema& schema) {
  check_shares(recipe.traffic_share);
  const std::size_t scenarios = recipe.traffic_share.size();
  std::vector<TriggerKind> kinds = recipe.trigger_kinds;
  if (kinds.size() == 1) kinds.assign(scenarios, kinds[0]);
  if (kinds.size() != scenarios) {
    throw ConfigError("trigger_kinds: " + std::to_string(kinds.size()) + " kinds for " +
                      std::to_string(scenarios) + " scenarios");
  }
  if (recipe.noise_std < 0.0) throw ConfigError("noise_std: must be non-negative");

  const std::size_t elements = schema.element_count();
  Rng rng(recipe.seed);
  std::vector<std::size_t> perm(elements);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = elements; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

  auto draw_weights = [&] {
    std::vector<double> w(elements);
    for (auto& x : w) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.0) * recipe.weight_scale;
    return w;
  };
  const std::vector<double> common = draw_weights();
  const std::size_t core = recipe.regime == MaskRegime::overlap ? std::max<std::size_t>(1, elements / 4) : 0;

  std::vector<ScenarioProfile> out;
  for (std::size_t s = 0; s < scenarios; ++s) {
    ScenarioProfile p;
    p.id = s;
    p.traffic_share = recipe.traffic_share[s];
    p.trigger_kind = kinds[s];
    p.label_bias = recipe.label_bias;
    p.noise_std = recipe.noise_std;
    p.field_importance.assign(elements, 0.0);
    switch (recipe.regime) {
      case MaskRegime::disjoint:
        for (std::size_t k = 0; k < elements; ++k)
          if (k % scenarios == s) p.field_importance[perm[k]] = 1.0;
        break;
      case MaskRegime::overlap:
        for (std::size_t k = 0; k < elements; ++k)
          if (k < core || (k - core) % scenarios == s) p.field_importance[perm[k]] = 1.0;
        break;
      case MaskRegime::shared:
        std::fill(p.field_importance.begin(), p.field_importance.end(), 1.0);
        break;
      case MaskRegime::zero:
        break;
    }
    p.label_weights = recipe.regime == MaskRegime::shared ? common : draw_weights();
    if (recipe.regime == MaskRegime::zero) std::fill(p.label_weights.begin(), p.label_weights.end(), 0.0);
    out.push_back(std::move(p));
  }
  return out;
}

std::size_t DatasetManifest::count() const {
  return std::accumulate(scenario_counts.begin(), scenario_counts.end(), std::size_t{0});
}

std::vector<double> featurize(const Instance& inst, const Schema& schema) {
  std::vector<double> phi;
  phi.reserve(schema.element_count());
  const double target = hash_feature(kItemSalt, inst.target_item);
  double behavior = 0.0;
  for (const auto& b : inst.behavior) behavior += hash_feature(kItemSalt, b.item);
  if (!inst.behavior.empty()) behavior /= static_cast<double>(inst.behavior.size());
  phi.push_back(behavior * target);
  phi.push_back(hash_feature(kUserSalt, inst.user));
  for (std::size_t l = 0; l < schema.user_attrs; ++l)
    phi.push_back(hash_feature(kUserAttrSalt + l, inst.user_attrs[l]));
  phi.push_back(target);
  for (std::size_t p = 0; p < schema.item_attrs; ++p)
    phi.push_back(hash_feature(kItemAttrSalt + p, inst.target_attrs[p]));
  switch (inst.trigger.kind) {
    case TriggerKind::image:
      phi.push_back(inst.trigger.vector.empty() ? 0.0 : inst.trigger.vector[0]);
      break;
    case TriggerKind::product:
      phi.push_back(hash_feature(kTriggerItemSalt, inst.trigger.item));
      break;
    case TriggerKind::none:
      phi.push_back(hash_feature(kTriggerItemSalt, inst.target_item));
      break;
  }
  for (std::size_t o = 0; o < schema.trigger_attrs; ++o) {
    phi.push_back(inst.trigger.kind == TriggerKind::product
                      ? hash_feature(kTriggerAttrSalt + o, inst.trigger.attrs[o])
                      : 0.0);
  }
  for (std::size_t k = 0; k < schema.context_attrs; ++k)
    phi.push_back(hash_feature(kContextSalt + k, inst.context[k]));
  return phi;
}

InstanceGenerator::InstanceGenerator(GeneratorOptions options) : options_(std::move(options)) {
  std::vector<double> shares;
  for (const auto& p : options_.profiles) shares.push_back(p.traffic_share);
  check_shares(shares);
  if (options_.profiles.size() != options_.vocab.scenarios) {
    throw ConfigError("num_scenarios: vocabulary declares " + std::to_string(options_.vocab.scenarios) +
                      " scenarios but " + std::to_string(options_.profiles.size()) +
                      " profiles were given");
  }
  const std::size_t elements = options_.schema.element_count();
  for (const auto& p : options_.profiles) {
    if (p.field_importance.size() != elements || p.label_weights.size() != elements) {
      throw ConfigError("profile " + std::to_string(p.id) + ": expected " + std::to_string(elements) +
                        " feature elements");
    }
    if (p.noise_std < 0.0) throw ConfigError("noise_std: must be non-negative");
  }
  const Vocabulary& v = options_.vocab;
  const Schema& s = options_.schema;
  if (v.users == 0 || v.items == 0 || (s.user_attrs && v.user_attrs == 0) ||
      (s.item_attrs && v.item_attrs == 0) || (s.trigger_attrs && v.trigger_attrs == 0) ||
      (s.context_attrs && v.context_attrs == 0) || s.max_behaviors == 0) {
    throw ConfigError("vocabulary: every used vocabulary and max_behaviors must be non-empty");
  }
  double acc = 0.0;
  for (double x : shares) cumulative_share_.push_back(acc += x);
  for (std::size_t sc = 0; sc < options_.profiles.size(); ++sc) {
    std::vector<double> cdf(v.items);
    double total = 0.0;
    for (std::size_t i = 0; i < v.items; ++i) {
      total += std::exp(options_.popularity_tilt * hash_feature(kPopularitySalt + sc, i));
      cdf[i] = total;
    }
    for (auto& c : cdf) c /= total;
    popularity_cdf_.push_back(std::move(cdf));
  }
}

double InstanceGenerator::clean_logit(const Instance& inst) const {
  const ScenarioProfile& p = options_.profiles[inst.scenario];
  const std::vector<double> phi = featurize(inst, options_.schema);
  double z = p.label_bias;
  for (std::size_t j = 0; j < phi.size(); ++j) z += p.label_weights[j] * p.field_importance[j] * phi[j];
  return z;
}

Instance InstanceGenerator::instance(std::uint64_t seed, std::uint64_t index) const {
  const Schema& s = options_.schema;
  const Vocabulary& v = options_.vocab;
  Rng rng(mix_seed(seed, index));
  auto popular_item = [&](std::size_t scenario) {
    const auto& cdf = popularity_cdf_[scenario];
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), rng.uniform());
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
  };
  auto item_attrs = [&](std::size_t item) {
    std::vector<std::size_t> a(s.item_attrs);
    for (std::size_t p = 0; p < s.item_attrs; ++p) a[p] = assigned_attr(kItemAttrAssign, item, p, v.item_attrs);
    return a;
  };

  Instance inst;
  const double u = rng.uniform();
  inst.scenario = cumulative_share_.size() - 1;
  for (std::size_t k = 0; k < cumulative_share_.size(); ++k) {
    if (u < cumulative_share_[k]) {
      inst.scenario = k;
      break;
    }
  }
  const ScenarioProfile& profile = options_.profiles[inst.scenario];
  inst.user = rng.below(v.users);
  for (std::size_t l = 0; l < s.user_attrs; ++l)
    inst.user_attrs.push_back(assigned_attr(kUserAttrAssign, inst.user, l, v.user_attrs));
  const std::size_t length = 1 + rng.below(s.max_behaviors);
  for (std::size_t j = 0; j < length; ++j) {
    const std::size_t item = popular_item(inst.scenario);
    inst.behavior.push_back({item, item_attrs(item)});
  }
  inst.target_item = rng.below(v.items);
  inst.target_attrs = item_attrs(inst.target_item);
  inst.trigger.kind = profile.trigger_kind;
  if (profile.trigger_kind == TriggerKind::image) {
    for (std::size_t k = 0; k < s.image_dim; ++k) inst.trigger.vector.push_back(rng.uniform(-1.0, 1.0));
  } else if (profile.trigger_kind == TriggerKind::product) {
    inst.trigger.item = popular_item(inst.scenario);
    for (std::size_t o = 0; o < s.trigger_attrs; ++o) inst.trigger.attrs.push_back(rng.below(v.trigger_attrs));
  }
  for (std::size_t k = 0; k < s.context_attrs; ++k) inst.context.push_back(rng.below(v.context_attrs));

  const double noise = profile.noise_std > 0.0 ? profile.noise_std * rng.normal() : 0.0;
  inst.label = rng.uniform() < logistic(clean_logit(inst) + noise) ? 1 : 0;
  return inst;
}

Dataset generate(const GeneratorOptions& options) {
  if (options.count == 0) throw ConfigError("count: must be at least 1");
  InstanceGenerator gen(options);
  Dataset out;
  DatasetManifest& m = out.manifest;
  m.schema = options.schema;
  m.vocab = options.vocab;
  m.seed = options.seed;
  m.profiles = options.profiles;
  m.scenario_counts.assign(options.profiles.size(), 0);
  std::vector<std::size_t> positives(options.profiles.size(), 0);
  out.instances.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    Instance inst = gen.instance(options.seed, i);
    m.scenario_counts[inst.scenario] += 1;
    positives[inst.scenario] += static_cast<std::size_t>(inst.label);
    out.instances.push_back(std::move(inst));
  }
  for (std::size_t s = 0; s < positives.size(); ++s) {
    m.positive_rates.push_back(m.scenario_counts[s] ? static_cast<double>(positives[s]) /
                                                          static_cast<double>(m.scenario_counts[s])
                                                    : 0.0);
  }
  if (options.bayes_holdout > 0) {
    std::vector<double> scores, labels;
    const std::uint64_t holdout_seed = mix_seed(options.seed, kHoldoutStream);
    for (std::size_t i = 0; i < options.bayes_holdout; ++i) {
      const Instance inst = gen.instance(holdout_seed, i);
      scores.push_back(gen.clean_logit(inst));
      labels.push_back(inst.label);
    }
    m.bayes_auc = auc(scores, labels);
  }
  return out;
}

// ---- JSON ------------------------------------------------------------------

namespace {

ordered_json profile_json(const ScenarioProfile& p) {
  ordered_json j;
  j["id"] = p.id;
  j["traffic_share"] = p.traffic_share;
  j["trigger_kind"] = to_string(p.trigger_kind);
  j["field_importance"] = p.field_importance;
  j["label_weights"] = p.label_weights;
  j["label_bias"] = p.label_bias;
  j["noise_std"] = p.noise_std;
  return j;
}

ScenarioProfile profile_from_json(const ordered_json& j) {
  ScenarioProfile p;
  p.id = j.at("id").get<std::size_t>();
  p.traffic_share = j.at("traffic_share").get<double>();
  p.trigger_kind = parse_trigger_kind(j.at("trigger_kind").get<std::string>());
  p.field_importance = j.at("field_importance").get<std::vector<double>>();
  p.label_weights = j.at("label_weights").get<std::vector<double>>();
  p.label_bias = j.at("label_bias").get<double>();
  p.noise_std = j.at("noise_std").get<double>();
  return p;
}

ordered_json manifest_json(const DatasetManifest& m) {
  ordered_json j;
  j["format"] = "maria-dataset";
  j["version"] = 1;
  j["schema"] = {{"user_attrs", m.schema.user_attrs},       {"item_attrs", m.schema.item_attrs},
                 {"trigger_attrs", m.schema.trigger_attrs}, {"context_attrs", m.schema.context_attrs},
                 {"max_behaviors", m.schema.max_behaviors}, {"image_dim", m.schema.image_dim}};
  j["vocab"] = {{"users", m.vocab.users},
                {"items", m.vocab.items},
                {"user_attrs", m.vocab.user_attrs},
                {"item_attrs", m.vocab.item_attrs},
                {"trigger_attrs", m.vocab.trigger_attrs},
                {"context_attrs", m.vocab.context_attrs},
                {"scenarios", m.vocab.scenarios}};
  j["digest"] = hex64(m.digest());
  j["seed"] = m.seed;
  j["count"] = m.count();
  j["scenario_counts"] = m.scenario_counts;
  j["positive_rates"] = m.positive_rates;
  j["bayes_auc"] = m.bayes_auc ? ordered_json(*m.bayes_auc) : ordered_json(nullptr);
  ordered_json profiles = ordered_json::array();
  for (const auto& p : m.profiles) profiles.push_back(profile_json(p));
  j["profiles"] = profiles;
  return j;
}

DatasetManifest manifest_from_json(const ordered_json& j) {
  DatasetManifest m;
  const auto& s = j.at("schema");
  m.schema.user_attrs = s.at("user_attrs").get<std::size_t>();
  m.schema.item_attrs = s.at("item_attrs").get<std::size_t>();
  m.schema.trigger_attrs = s.at("trigger_attrs").get<std::size_t>();
  m.schema.context_attrs = s.at("context_attrs").get<std::size_t>();
  m.schema.max_behaviors = s.at("max_behaviors").get<std::size_t>();
  m.schema.image_dim = s.at("image_dim").get<std::size_t>();
  const auto& v = j.at("vocab");
  m.vocab.users = v.at("users").get<std::size_t>();
  m.vocab.items = v.at("items").get<std::size_t>();
  m.vocab.user_attrs = v.at("user_attrs").get<std::size_t>();
  m.vocab.item_attrs = v.at("item_attrs").get<std::size_t>();
  m.vocab.trigger_attrs = v.at("trigger_attrs").get<std::size_t>();
  m.vocab.context_attrs = v.at("context_attrs").get<std::size_t>();
  m.vocab.scenarios = v.at("scenarios").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.scenario_counts = j.at("scenario_counts").get<std::vector<std::size_t>>();
  m.positive_rates = j.at("positive_rates").get<std::vector<double>>();
  if (!j.at("bayes_auc").is_null()) m.bayes_auc = j.at("bayes_auc").get<double>();
  for (const auto& p : j.at("profiles")) m.profiles.push_back(profile_from_json(p));
  if (m.scenario_counts.size() != m.vocab.scenarios) {
    throw DataError("manifest: scenario_counts has " + std::to_string(m.scenario_counts.size()) +
                    " entries for " + std::to_string(m.vocab.scenarios) + " scenarios");
  }
  if (j.contains("count") && j.at("count").get<std::size_t>() != m.count()) {
    throw DataError("manifest: count disagrees with scenario_counts");
  }
  return m;
}

}  // namespace

std::string instance_to_json(const Instance& inst) {
  ordered_json j;
  j["scenario"] = inst.scenario;
  j["user"] = inst.user;
  j["user_attrs"] = ids_json(inst.user_attrs);
  ordered_json behavior = ordered_json::array();
  for (const auto& b : inst.behavior) behavior.push_back({{"item", b.item}, {"attrs", ids_json(b.attrs)}});
  j["behavior"] = behavior;
  j["target_item"] = inst.target_item;
  j["target_attrs"] = ids_json(inst.target_attrs);
  ordered_json trigger;
  trigger["kind"] = to_string(inst.trigger.kind);
  if (inst.trigger.kind == TriggerKind::image) {
    trigger["vector"] = inst.trigger.vector;
  } else if (inst.trigger.kind == TriggerKind::product) {
    trigger["item"] = inst.trigger.item;
    trigger["attrs"] = ids_json(inst.trigger.attrs);
  }
  j["trigger"] = trigger;
  j["context"] = ids_json(inst.context);
  j["label"] = inst.label;
  return j.dump();
}

Instance instance_from_json(const std::string& line, std::size_t line_number) {
  try {
    const ordered_json j = ordered_json::parse(line);
    Instance inst;
    inst.scenario = j.at("scenario").get<std::size_t>();
    inst.user = j.at("user").get<std::size_t>();
    inst.user_attrs = j.at("user_attrs").get<std::vector<std::size_t>>();
    for (const auto& b : j.at("behavior")) {
      inst.behavior.push_back({b.at("item").get<std::size_t>(), b.at("attrs").get<std::vector<std::size_t>>()});
    }
    inst.target_item = j.at("target_item").get<std::size_t>();
    inst.target_attrs = j.at("target_attrs").get<std::vector<std::size_t>>();
    const auto& t = j.at("trigger");
    inst.trigger.kind = parse_trigger_kind(t.at("kind").get<std::string>());
    if (inst.trigger.kind == TriggerKind::image) {
      inst.trigger.vector = t.at("vector").get<std::vector<double>>();
    } else if (inst.trigger.kind == TriggerKind::product) {
      inst.trigger.item = t.at("item").get<std::size_t>();
      inst.trigger.attrs = t.at("attrs").get<std::vector<std::size_t>>();
    }
    inst.context = j.at("context").get<std::vector<std::size_t>>();
    inst.label = j.at("label").get<int>();
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed instance: ") + e.what(), line_number);
  } catch (const ConfigError& e) {
    throw DataError(e.what(), line_number);
  }
}

std::string manifest_path(const std::string& data_path) { return data_path + ".manifest.json"; }

void write_jsonl(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& inst : data.instances) out << instance_to_json(inst) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
  const std::string mpath = manifest_path(path);
  std::ofstream mf(mpath, std::ios::binary);
  if (!mf) throw IoError("cannot open '" + mpath + "' for writing");
  mf << manifest_json(data.manifest).dump(2) << '\n';
  if (!mf) throw IoError("failed writing '" + mpath + "'");
}

Dataset read_jsonl(const std::string& path) {
  const std::string mpath = manifest_path(path);
  std::ifstream mf(mpath, std::ios::binary);
  if (!mf) throw IoError("cannot open manifest '" + mpath + "'");
  Dataset data;
  try {
    data.manifest = manifest_from_json(ordered_json::parse(mf));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + mpath + "': " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("manifest '" + mpath + "': " + e.what());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open data file '" + path + "'");
  std::string line;
  std::size_t line_number = 0;
  std::vector<std::size_t> counts(data.manifest.vocab.scenarios, 0);
  while (std::getline(in, line)) {
    ++line_number;
    Instance inst = instance_from_json(line, line_number);
    try {
      validate(inst, data.manifest.schema, data.manifest.vocab);
    } catch (const DataError& e) {
      throw DataError(e.what(), line_number);
    }
    counts[inst.scenario] += 1;
    data.instances.push_back(std::move(inst));
  }
  if (counts != data.manifest.scenario_counts) {
    throw DataError("data file '" + path + "' has " + std::to_string(data.instances.size()) +
                    " instances whose per-scenario counts disagree with the manifest");
  }
  return data;
}

// ---- batching --------------------------------------------------------------

BatchIterator::BatchIterator(std::size_t n, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed)
    : n_(n), batch_size_(batch_size), seed_(shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch_size: must be at least 1");
}

std::size_t BatchIterator::batches_per_epoch() const { return (n_ + batch_size_ - 1) / batch_size_; }

std::vector<std::vector<std::size_t>> BatchIterator::epoch(std::size_t index) const {
  std::vector<std::size_t> order(n_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (seed_) {
    Rng rng(mix_seed(*seed_, index));
    for (std::size_t i = n_; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n_; b += batch_size_) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n_, b + batch_size_)));
  }
  return batches;
}

}  // namespace maria
