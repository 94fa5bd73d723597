#include "maria/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"

namespace maria {

bool GradCheckReport::pass() const {
  return std::all_of(groups.begin(), groups.end(), [](const GroupCheck& g) { return g.pass; });
}

std::string GradCheckReport::text() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "gradient check: eps=%g tolerance=%g loss=%.6f\n", epsilon,
                tolerance, loss);
  os << buf;
  for (const auto& g : groups) {
    std::snprintf(buf, sizeof buf, "  %-4s %-12s max_rel_error=%.3e  n=%-6zu worst=%s\n",
                  g.pass ? "ok" : "FAIL", g.group.c_str(), g.max_rel_error, g.checked,
                  g.worst.c_str());
    os << buf;
  }
  os << (pass() ? "PASS" : "FAIL") << "\n";
  return os.str();
}

std::string GradCheckReport::json(int indent) const {
  nlohmann::ordered_json j;
  j["epsilon"] = epsilon;
  j["tolerance"] = tolerance;
  j["loss"] = loss;
  j["pass"] = pass();
  auto arr = nlohmann::ordered_json::array();
  for (const auto& g : groups) {
    arr.push_back({{"group", g.group},
                   {"checked", g.checked},
                   {"max_rel_error", g.max_rel_error},
                   {"worst", g.worst},
                   {"pass", g.pass}});
  }
  j["groups"] = arr;
  return j.dump(indent);
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport check_gradients(ad::ParameterStore& store,
                                const std::function<Value(Graph&)>& loss, std::uint64_t seed,
                                double epsilon, double tolerance) {
  GradCheckReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;

  store.zero_grads();
  std::vector<std::vector<double>> frozen;
  {
    Graph g(seed);
    g.freeze_stop_gradients(Graph::FreezeMode::record, &frozen);
    Value l = loss(g);
    report.loss = l.item();
    g.backward(l);
  }
  auto evaluate = [&] {
    Graph g(seed);
    g.freeze_stop_gradients(Graph::FreezeMode::replay, &frozen);
    return loss(g).item();
  };

  std::map<std::string, GroupCheck> groups;
  std::vector<std::string> order;
  for (ad::Parameter* p : store.all()) {
    const std::string name = p->group();
    if (!groups.count(name)) {
      order.push_back(name);
      groups[name].group = name;
    }
    GroupCheck& gc = groups[name];
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const double saved = p->data[i];
      p->data[i] = saved + epsilon;
      const double up = evaluate();
      p->data[i] = saved - epsilon;
      const double down = evaluate();
      p->data[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = relative_error(p->grad[i], numeric);
      ++gc.checked;
      if (err > gc.max_rel_error || gc.worst.empty()) {
        gc.max_rel_error = std::max(gc.max_rel_error, err);
        if (err >= gc.max_rel_error) gc.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  for (const auto& name : order) {
    GroupCheck gc = groups[name];
    gc.pass = gc.max_rel_error <= tolerance;
    report.groups.push_back(gc);
  }
  store.zero_grads();
  return report;
}

GradCheckReport check_model_gradients(RankingModel& model, const BatchInputs& batch,
                                      std::uint64_t seed, double epsilon, double tolerance) {
  const double scale = 1.0 / static_cast<double>(batch.size);
  return check_gradients(
      model.params(),
      [&](Graph& g) {
        Prediction p = model.forward(g, batch, Mode::train);
        return ad::scale(batch_loss(p.y, batch.labels), scale);
      },
      seed, epsilon, tolerance);
}

}  // namespace maria
