#pragma once

// Shared fixtures for the unit tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "maria/autodiff.hpp"
#include "maria/data.hpp"
#include "maria/model.hpp"
#include "maria/util.hpp"

namespace testing {

using maria::ad::Graph;
using maria::ad::Parameter;
using maria::ad::ParameterStore;
using maria::ad::Value;

inline void fill_uniform(Parameter& p, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& x : p.data) x = u(rng);
}

inline std::vector<double> uniform_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                          double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

/// Largest |a - n| / max(|a|, |n|, 1e-6) between backward() and central
/// differences over every scalar of `store`. `loss` builds a fresh graph.
inline double max_fd_error(ParameterStore& store, const std::function<Value(Graph&)>& loss,
                           double eps = 1e-5) {
  store.zero_grads();
  {
    Graph g(1);
    Value l = loss(g);
    g.backward(l);
  }
  auto eval = [&] {
    Graph g(1);
    return loss(g).item();
  };
  double worst = 0.0;
  for (Parameter* p : store.all()) {
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const double saved = p->data[i];
      p->data[i] = saved + eps;
      const double up = eval();
      p->data[i] = saved - eps;
      const double down = eval();
      p->data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = p->grad[i];
      const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
  }
  store.zero_grads();
  return worst;
}

/// A small schema and model used across model, trainer and checkpoint tests.
inline maria::ModelConfig tiny_model_config(std::size_t scenarios = 2) {
  maria::ModelConfig c;
  c.schema.user_attrs = 1;
  c.schema.item_attrs = 1;
  c.schema.trigger_attrs = 1;
  c.schema.context_attrs = 1;
  c.schema.max_behaviors = 4;
  c.schema.image_dim = 4;
  c.vocab.users = 12;
  c.vocab.items = 15;
  c.vocab.user_attrs = 5;
  c.vocab.item_attrs = 6;
  c.vocab.trigger_attrs = 4;
  c.vocab.context_attrs = 3;
  c.vocab.scenarios = scenarios;
  c.user_dim = 4;
  c.item_dim = 4;
  c.attr_dim = 2;
  c.context_dim = 2;
  c.scenario_dim = 3;
  c.scale_hidden = {4};
  c.refiners = {1, 2, 1, 1, 1};
  c.correlation_dim = 3;
  c.experts = 2;
  c.expert_layers = {6, 5};
  c.tower_layers = {5, 4};
  c.match_baseline_params = false;
  return c;
}

inline maria::GeneratorOptions tiny_generator(const maria::ModelConfig& c, std::size_t count,
                                              std::uint64_t seed) {
  maria::GeneratorOptions o;
  o.schema = c.schema;
  o.vocab = c.vocab;
  maria::ProfileRecipe r;
  r.traffic_share.assign(c.vocab.scenarios, 1.0 / static_cast<double>(c.vocab.scenarios));
  const maria::TriggerKind kinds[] = {maria::TriggerKind::image, maria::TriggerKind::product,
                                      maria::TriggerKind::none};
  r.trigger_kinds.clear();
  for (std::size_t s = 0; s < c.vocab.scenarios; ++s) r.trigger_kinds.push_back(kinds[s % 3]);
  o.profiles = maria::make_profiles(r, c.schema);
  o.count = count;
  o.seed = seed;
  o.bayes_holdout = 200;
  return o;
}

}  // namespace testing
