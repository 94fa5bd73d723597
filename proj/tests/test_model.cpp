#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "maria/gradcheck.hpp"
#include "maria/model.hpp"

namespace ad = maria::ad;
using ad::Graph;
using ad::Shape;
using ad::Value;
using maria::BatchInputs;
using maria::ModelConfig;

namespace {

std::vector<double> values(Value v) { return {v.data().begin(), v.data().end()}; }

BatchInputs batch_of(const ModelConfig& c, const maria::Dataset& d) {
  return BatchInputs::from(std::span<const maria::Instance>(d.instances), c.schema, c.vocab);
}

// ---- straight-line forward pass, one instance at a time --------------------

using Vec = std::vector<double>;

struct Oracle {
  const ModelConfig& c;
  const ad::ParameterStore& p;

  const ad::Parameter& at(const std::string& name) const {
    const ad::Parameter* q = p.find(name);
    REQUIRE_MESSAGE(q != nullptr, name);
    return *q;
  }
  Vec row(const std::string& table, std::size_t r) const {
    const auto& t = at(table);
    const std::size_t d = t.shape.dims[1];
    return Vec(t.data.begin() + static_cast<long>(r * d), t.data.begin() + static_cast<long>((r + 1) * d));
  }
  // x W + b, W stored in x out.
  Vec affine(const std::string& name, const Vec& x, bool bias = true) const {
    const auto& w = at(name + ".w");
    const std::size_t in = w.shape.dims[0], out = w.shape.dims[1];
    REQUIRE(x.size() == in);
    Vec y(out, 0.0);
    for (std::size_t j = 0; j < out; ++j) {
      double s = bias ? at(name + ".b").data[j] : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += x[i] * w.data[i * out + j];
      y[j] = s;
    }
    return y;
  }
  static double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }
  static Vec relu(Vec v) {
    for (double& x : v) x = std::max(0.0, x);
    return v;
  }
  static Vec cat(std::initializer_list<Vec> parts) {
    Vec out;
    for (const Vec& v : parts) out.insert(out.end(), v.begin(), v.end());
    return out;
  }
  Vec mlp(const std::string& name, Vec x, std::size_t layers, bool relu_last) const {
    for (std::size_t l = 0; l < layers; ++l) {
      x = affine(name + ".l" + std::to_string(l), x);
      if (l + 1 < layers || relu_last) x = relu(x);
    }
    return x;
  }
  Vec layer_norm(const Vec& x, const std::string& prefix) const {
    double mu = 0.0, var = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    const auto& gain = at(prefix + ".gain").data;
    const auto& bias = at(prefix + ".bias").data;
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * gain[i] + bias[i];
    return y;
  }
  static Vec softmax_masked(const Vec& s, const std::vector<bool>& keep) {
    double mx = -1e300;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (keep[j]) mx = std::max(mx, s[j]);
    Vec w(s.size(), 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (keep[j]) total += (w[j] = std::exp(s[j] - mx));
    for (double& v : w) v /= total;
    return w;
  }

  double predict(const maria::Instance& inst) const {
    const auto& s = c.schema;
    const std::size_t m = s.max_behaviors, da = c.attr_dim;

    Vec e_u = row("emb.user", inst.user);
    Vec user = e_u;
    for (std::size_t a : inst.user_attrs) user = cat({user, row("emb.user_attr", a)});
    Vec e_x = row("emb.item", inst.target_item);
    Vec x_i = e_x;
    for (std::size_t a : inst.target_attrs) x_i = cat({x_i, row("emb.item_attr", a)});

    // Left-padded behavior sequence plus positions.
    std::vector<Vec> seq(m);
    std::vector<bool> real(m, false);
    const std::size_t pad = m - inst.behavior.size();
    for (std::size_t j = 0; j < m; ++j) {
      Vec r;
      if (j < pad) {
        r = row("emb.item", c.vocab.items);
        for (std::size_t k = 0; k < s.item_attrs; ++k) r = cat({r, row("emb.item_attr", c.vocab.item_attrs)});
      } else {
        const auto& b = inst.behavior[j - pad];
        r = row("emb.item", b.item);
        for (std::size_t a : b.attrs) r = cat({r, row("emb.item_attr", a)});
        real[j] = true;
      }
      const Vec pos = row("emb.position", j);
      for (std::size_t k = 0; k < r.size(); ++k) r[k] += pos[k];
      seq[j] = r;
    }

    // Pre-norm self-attention block.
    const std::size_t d = c.item_width(), dh = d / c.heads;
    std::vector<Vec> qs(m), ks(m), vs(m);
    for (std::size_t j = 0; j < m; ++j) {
      Vec x = layer_norm(seq[j], "encoder.ln1");
      qs[j] = affine("encoder.q", x);
      ks[j] = affine("encoder.k", x);
      vs[j] = affine("encoder.v", x);
    }
    std::vector<Vec> h(m);
    for (std::size_t i = 0; i < m; ++i) {
      Vec heads;
      for (std::size_t hd = 0; hd < c.heads; ++hd) {
        Vec sc(m);
        for (std::size_t j = 0; j < m; ++j) {
          double dot = 0.0;
          for (std::size_t k = 0; k < dh; ++k) dot += qs[i][hd * dh + k] * ks[j][hd * dh + k];
          sc[j] = dot / std::sqrt(static_cast<double>(dh));
        }
        Vec w = softmax_masked(sc, real);
        Vec out(dh, 0.0);
        for (std::size_t j = 0; j < m; ++j)
          for (std::size_t k = 0; k < dh; ++k) out[k] += w[j] * vs[j][hd * dh + k];
        heads = cat({heads, out});
      }
      Vec att = affine("encoder.o", heads);
      Vec x1(d);
      for (std::size_t k = 0; k < d; ++k) x1[k] = seq[i][k] + att[k];
      Vec ff = affine("encoder.ffn.l1", relu(affine("encoder.ffn.l0", layer_norm(x1, "encoder.ln2"))));
      h[i] = x1;
      for (std::size_t k = 0; k < d; ++k) h[i][k] += ff[k];
    }

    // Trigger field.
    Vec t;
    if (inst.trigger.kind == maria::TriggerKind::none) {
      t = affine("trigger.target", x_i);
    } else {
      Vec star = inst.trigger.kind == maria::TriggerKind::image
                     ? inst.trigger.vector
                     : affine("trigger.product", row("emb.item", inst.trigger.item));
      t = star;
      for (std::size_t o = 0; o < s.trigger_attrs; ++o) {
        const std::size_t id =
            inst.trigger.kind == maria::TriggerKind::product ? inst.trigger.attrs[o] : c.vocab.trigger_attrs;
        t = cat({t, row("emb.trigger_attr", id)});
      }
    }

    // Trigger-aware pooling.
    Vec sc(m);
    for (std::size_t j = 0; j < m; ++j) sc[j] = affine("attention.sim.l0", cat({t, h[j]}))[0];
    Vec alpha = softmax_masked(sc, real);
    Vec h_b(d, 0.0);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < d; ++k) h_b[k] += alpha[j] * h[j][k];

    Vec ctx;
    for (std::size_t a : inst.context) ctx = cat({ctx, row("emb.context", a)});

    std::vector<Vec> fields{h_b, user, x_i, t, ctx};
    std::vector<std::vector<std::size_t>> elem{{d}, {c.user_dim}, {c.item_dim}, {s.image_dim}, {}};
    for (std::size_t l = 0; l < s.user_attrs; ++l) elem[1].push_back(da);
    for (std::size_t l = 0; l < s.item_attrs; ++l) elem[2].push_back(da);
    for (std::size_t l = 0; l < s.trigger_attrs; ++l) elem[3].push_back(da);
    for (std::size_t l = 0; l < s.context_attrs; ++l) elem[4].push_back(c.context_dim);
    Vec q = cat({fields[0], fields[1], fields[2], fields[3], fields[4]});
    Vec e_s = row("emb.scenario", inst.scenario);

    // Feature scaling.
    Vec a = mlp("fs.scale", cat({q, e_u, e_x, e_s}), c.scale_hidden.size() + 1, false);
    std::size_t col = 0, e = 0;
    for (std::size_t f = 0; f < 5; ++f) {
      std::size_t off = 0;
      for (std::size_t w : elem[f]) {
        const double factor = c.lambda * sig(a[e++]);
        for (std::size_t k = 0; k < w; ++k) {
          q[col + k] *= factor;
          fields[f][off + k] *= factor;
        }
        col += w;
        off += w;
      }
    }

    // Refinement with the evaluation-time argmax.
    const char* names[] = {"behavior", "user", "item", "trigger", "context"};
    Vec q_f;
    for (std::size_t f = 0; f < 5; ++f) {
      const std::string base = std::string("fr.") + names[f];
      Vec logits = affine(base + ".selector.l0", cat({fields[f], e_s}));
      std::size_t best = 0;
      for (std::size_t k = 0; k < logits.size(); ++k)
        if (sig(logits[k]) > sig(logits[best])) best = k;
      for (std::size_t k = 0; k < c.refiners[f]; ++k) {
        Vec r = relu(affine(base + ".refiner" + std::to_string(k) + ".l0", fields[f]));
        if (k != best) std::fill(r.begin(), r.end(), 0.0);
        q_f = cat({q_f, r});
      }
    }
    // Field correlation.
    std::vector<Vec> proj;
    for (std::size_t f = 0; f < 5; ++f) proj.push_back(affine(std::string("fcm.") + names[f] + ".l0", fields[f]));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = i + 1; j < 5; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < proj[i].size(); ++k) dot += proj[i][k] * proj[j][k];
        q_f.push_back(dot);
      }

    // Experts, scenario gate, towers, coupling, head.
    const auto& gw = at("moe.gate.w");
    Vec gate(c.experts, 0.0);
    for (std::size_t j = 0; j < c.experts; ++j)
      for (std::size_t i = 0; i < c.scenario_dim; ++i) gate[j] += e_s[i] * gw.data[i * c.experts + j];
    gate = softmax_masked(gate, std::vector<bool>(c.experts, true));
    Vec h_n(c.expert_layers.back(), 0.0);
    for (std::size_t j = 0; j < c.experts; ++j) {
      Vec o = mlp("moe.expert" + std::to_string(j), q_f, c.expert_layers.size(), true);
      for (std::size_t k = 0; k < o.size(); ++k) h_n[k] += gate[j] * o[k];
    }
    Vec h_sp = mlp("tower_sp.s" + std::to_string(inst.scenario), h_n, c.tower_layers.size(), true);
    Vec h_sh = mlp("tower_sh", h_n, c.tower_layers.size(), true);
    double coupling = 0.0;
    for (std::size_t o = 0; o < c.vocab.scenarios; ++o) {
      if (o == inst.scenario) continue;
      const Vec e_o = row("emb.scenario", o);
      for (std::size_t k = 0; k < e_s.size(); ++k) coupling += e_s[k] * e_o[k];
    }
    coupling /= static_cast<double>(c.vocab.scenarios - 1);
    Vec h_f(h_sp.size());
    for (std::size_t k = 0; k < h_f.size(); ++k) h_f[k] = h_sp[k] + coupling * h_sh[k];
    return sig(affine("head.l0", h_f)[0]);
  }
};

}  // namespace

TEST_CASE("MARIA forward matches a straight-line re-implementation") {
  ModelConfig c = testing::tiny_model_config(3);
  c.init_seed = 17;
  auto model = maria::make_model(c);
  // Non-zero biases so every term is exercised.
  std::mt19937_64 rng(5);
  for (auto* p : model->params().all())
    if (p->name.size() > 2 && p->name.compare(p->name.size() - 2, 2, ".b") == 0)
      testing::fill_uniform(*p, rng, -0.2, 0.2);
  maria::Dataset d = maria::generate(testing::tiny_generator(c, 24, 8));
  BatchInputs b = batch_of(c, d);
  Graph g;
  maria::Prediction p = model->forward(g, b, ad::Mode::eval);
  Oracle oracle{model->config(), model->params()};
  bool saw_none = false;
  for (std::size_t i = 0; i < d.instances.size(); ++i) {
    saw_none |= d.instances[i].trigger.kind == maria::TriggerKind::none;
    CAPTURE(i);
    CHECK(std::abs(p.y.data()[i] - oracle.predict(d.instances[i])) <= 1e-12);
  }
  CHECK(saw_none);
}

TEST_CASE("coupling coefficients") {
  Graph g;
  SUBCASE("hand example") {
    Value table = ad::constant(g, Shape{3, 2}, {1, 0, 0, 1, 1, 0});
    Value a = maria::coupling_coefficients(g, table);
    CHECK(a.data()[0] == 0.5);
    CHECK(a.data()[1] == 0.0);
    CHECK(a.data()[2] == 0.5);
  }
  SUBCASE("orthogonal embeddings give zero") {
    Value table = ad::constant(g, Shape{3, 3}, {2, 0, 0, 0, -1, 0, 0, 0, 0.5});
    for (double v : maria::coupling_coefficients(g, table).data()) CHECK(v == 0.0);
  }
  SUBCASE("random table against a loop") {
    std::mt19937_64 rng(3);
    const std::size_t n = 5, d = 4;
    const auto t = testing::uniform_vector(n * d, rng);
    Value a = maria::coupling_coefficients(g, ad::constant(g, Shape{n, d}, t));
    for (std::size_t s = 0; s < n; ++s) {
      double expect = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == s) continue;
        for (std::size_t k = 0; k < d; ++k) expect += t[s * d + k] * t[j * d + k];
      }
      expect /= static_cast<double>(n - 1);
      CHECK(std::abs(a.data()[s] - expect) <= 1e-12);
    }
  }
  SUBCASE("a single scenario has nothing to couple to") {
    Value a = maria::coupling_coefficients(g, ad::constant(g, Shape{1, 2}, {3, 4}));
    CHECK(a.item() == 0.0);
  }
}

TEST_CASE("orthogonal scenarios make the fused output equal the scenario tower") {
  ModelConfig c = testing::tiny_model_config(3);
  c.scenario_dim = 3;
  auto model = maria::make_model(c);
  auto& maria_model = dynamic_cast<maria::MariaModel&>(*model);
  maria_model.scenario_table().data = {0.7, 0, 0, 0, -1.2, 0, 0, 0, 0.4};
  maria::Dataset d = maria::generate(testing::tiny_generator(c, 16, 2));
  BatchInputs b = batch_of(c, d);
  Graph g;
  maria::Prediction p = model->forward(g, b, ad::Mode::eval);
  for (double a : p.coupling.data()) CHECK(a == 0.0);
  CHECK(values(p.h_f) == values(p.h_sp));
}

TEST_CASE("mixture-of-experts gate") {
  ModelConfig c = testing::tiny_model_config(2);
  auto model = maria::make_model(c);
  auto& mm = dynamic_cast<maria::MariaModel&>(*model);
  maria::Dataset d = maria::generate(testing::tiny_generator(c, 10, 4));
  BatchInputs b = batch_of(c, d);

  SUBCASE("rows sum to one and depend only on the scenario") {
    Graph g;
    maria::Prediction p = model->forward(g, b, ad::Mode::eval);
    const std::size_t ne = c.experts;
    for (std::size_t r = 0; r < b.size; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < ne; ++j) s += p.gate.data()[r * ne + j];
      CHECK(std::abs(s - 1.0) <= 1e-12);
      for (std::size_t r2 = 0; r2 < b.size; ++r2)
        if (b.scenario[r2] == b.scenario[r])
          for (std::size_t j = 0; j < ne; ++j) CHECK(p.gate.data()[r * ne + j] == p.gate.data()[r2 * ne + j]);
    }
  }
  SUBCASE("uniform gate logits") {
    std::fill(mm.gate_weights()->data.begin(), mm.gate_weights()->data.end(), 0.0);
    Graph g;
    maria::Prediction p = model->forward(g, b, ad::Mode::eval);
    for (double v : p.gate.data()) CHECK(v == 0.5);
  }
  SUBCASE("identical experts make the gate irrelevant") {
    const auto e0 = mm.experts()[0].parameters();
    const auto e1 = mm.experts()[1].parameters();
    for (std::size_t k = 0; k < e0.size(); ++k) e1[k]->data = e0[k]->data;
    Graph g;
    maria::Prediction p = model->forward(g, b, ad::Mode::eval);
    Value single = mm.experts()[0].forward(g, p.q_f);
    for (std::size_t i = 0; i < single.numel(); ++i)
      CHECK(std::abs(p.h_n.data()[i] - single.data()[i]) <= 1e-15);
  }
}

TEST_CASE("zero head predicts one half") {
  for (maria::ModelKind kind : {maria::ModelKind::maria, maria::ModelKind::hard_sharing}) {
    ModelConfig c = testing::tiny_model_config(2);
    c.kind = kind;
    auto model = maria::make_model(c);
    for (auto* p : model->params().all())
      if (p->name.rfind("head", 0) == 0) std::fill(p->data.begin(), p->data.end(), 0.0);
    maria::Dataset d = maria::generate(testing::tiny_generator(c, 6, 1));
    Graph g;
    maria::Prediction p = model->forward(g, batch_of(c, d), ad::Mode::eval);
    for (double y : p.y.data()) CHECK(y == 0.5);
  }
}

TEST_CASE("cross entropy of one half is ln 2") {
  Graph g;
  Value l = maria::batch_loss(ad::constant(g, Shape{1, 1}, {0.5}), std::vector<double>{1.0});
  CHECK(std::abs(l.item() - std::log(2.0)) <= 1e-12);
}

TEST_CASE("routing keeps row order and sends each row to its own tower") {
  Graph g;
  Value x = ad::constant(g, Shape{5, 1}, {0, 1, 2, 3, 4});
  std::vector<std::size_t> scenario{1, 0, 1, 2, 0};
  Value y = maria::route_by_scenario(x, scenario, 3, [&](std::size_t s, Value rows) {
    return ad::add(rows, ad::constant(g, Shape{1, 1}, {10.0 * static_cast<double>(s)}));
  });
  CHECK(values(y) == std::vector<double>{10, 1, 12, 23, 4});
  CHECK_THROWS(maria::route_by_scenario(x, std::vector<std::size_t>{0, 0, 0, 0, 3}, 3,
                                        [](std::size_t, Value v) { return v; }));
}

TEST_CASE("scenario towers only receive gradient from their own scenario") {
  for (maria::ModelKind kind : {maria::ModelKind::maria, maria::ModelKind::shared_bottom}) {
    ModelConfig c = testing::tiny_model_config(3);
    c.kind = kind;
    auto model = maria::make_model(c);
    maria::Dataset d = maria::generate(testing::tiny_generator(c, 30, 5));
    std::vector<maria::Instance> only_one;
    for (const auto& inst : d.instances)
      if (inst.scenario == 1) only_one.push_back(inst);
    REQUIRE(!only_one.empty());
    BatchInputs b = BatchInputs::from(std::span<const maria::Instance>(only_one), c.schema, c.vocab);
    Graph g;
    maria::Prediction p = model->forward(g, b, ad::Mode::train);
    g.backward(maria::batch_loss(p.y, b.labels));
    const std::string prefix = kind == maria::ModelKind::maria ? "tower_sp.s" : "tower.s";
    for (const auto* prm : model->params().all()) {
      if (prm->name.rfind(prefix, 0) != 0) continue;
      double mass = 0.0;
      for (double v : prm->grad) mass += std::abs(v);
      CAPTURE(prm->name);
      if (prm->name.rfind(prefix + "1.", 0) == 0) {
        if (prm->name.find(".w") != std::string::npos) CHECK(mass > 0.0);
      } else {
        CHECK(mass == 0.0);
      }
    }
  }
}

TEST_CASE("model gradients pass the finite-difference check") {
  for (maria::ModelKind kind : {maria::ModelKind::maria, maria::ModelKind::hard_sharing,
                                maria::ModelKind::shared_bottom, maria::ModelKind::mmoe}) {
    ModelConfig c = testing::tiny_model_config(3);
    c.kind = kind;
    auto model = maria::make_model(c);
    // With zero biases a row whose hidden layer is entirely dead sits exactly
    // on the next relu's kink, where central differences halve the slope.
    std::mt19937_64 rng(5);
    for (auto* p : model->params().all())
      if (p->name.ends_with(".b")) testing::fill_uniform(*p, rng, -0.2, 0.2);
    maria::Dataset d = maria::generate(testing::tiny_generator(c, 6, 9));
    maria::GradCheckReport r = maria::check_model_gradients(*model, batch_of(c, d), 3);
    CAPTURE(maria::to_string(kind));
    CAPTURE(r.text());
    CHECK(r.pass());
  }
}

TEST_CASE("parameter counts") {
  ModelConfig c = testing::tiny_model_config(3);
  c.match_baseline_params = true;
  const auto reference = static_cast<double>(maria::parameter_count(c));

  SUBCASE("baselines are widened to within ten percent of MARIA") {
    for (maria::ModelKind kind : {maria::ModelKind::hard_sharing, maria::ModelKind::shared_bottom,
                                  maria::ModelKind::mmoe}) {
      ModelConfig b = c;
      b.kind = kind;
      auto model = maria::make_model(b);
      const auto n = static_cast<double>(model->params().scalar_count());
      CAPTURE(maria::to_string(kind));
      CHECK(std::abs(n - reference) / reference <= 0.10);
      CHECK_FALSE(model->config().match_baseline_params);
    }
  }
  SUBCASE("removing the shared tower removes exactly its parameters") {
    auto full = maria::make_model(c);
    ModelConfig no_st = c;
    no_st.enabled.st = false;
    auto ablated = maria::make_model(no_st);
    CHECK(full->params().scalar_count() - ablated->params().scalar_count() ==
          full->params().scalar_count("tower_sh."));
    CHECK(ablated->params().scalar_count("tower_sh.") == 0);
  }
  SUBCASE("removing correlation removes its projections and widens nothing else") {
    auto full = maria::make_model(c);
    ModelConfig no_fcm = c;
    no_fcm.enabled.fcm = false;
    auto ablated = maria::make_model(no_fcm);
    const std::size_t expert_rows = 10 * c.expert_layers[0] * c.experts;
    CHECK(full->params().scalar_count() - ablated->params().scalar_count() ==
          full->params().scalar_count("fcm.") + expert_rows);
  }
  SUBCASE("without the mixture there is one expert and no gate") {
    ModelConfig no_nl = c;
    no_nl.enabled.nl = false;
    auto ablated = maria::make_model(no_nl);
    CHECK(ablated->params().find("moe.gate.w") == nullptr);
    CHECK(ablated->params().find("moe.expert1.l0.w") == nullptr);
    CHECK(ablated->params().find("moe.expert0.l0.w") != nullptr);
  }
}

TEST_CASE("without the shared tower the fused output is the scenario tower") {
  ModelConfig c = testing::tiny_model_config(2);
  c.enabled.st = false;
  auto model = maria::make_model(c);
  maria::Dataset d = maria::generate(testing::tiny_generator(c, 6, 1));
  Graph g;
  maria::Prediction p = model->forward(g, batch_of(c, d), ad::Mode::eval);
  CHECK(!p.h_sh.valid());
  CHECK(values(p.h_f) == values(p.h_sp));
}

TEST_CASE("batch inputs pad on the left and mark absent triggers") {
  ModelConfig c = testing::tiny_model_config(3);
  maria::Instance inst;
  inst.scenario = 2;
  inst.user = 3;
  inst.user_attrs = {1};
  inst.behavior = {{5, {2}}, {7, {4}}};
  inst.target_item = 9;
  inst.target_attrs = {3};
  inst.trigger.kind = maria::TriggerKind::none;
  inst.context = {2};
  inst.label = 1;
  BatchInputs b = BatchInputs::from(std::span<const maria::Instance>(&inst, 1), c.schema, c.vocab);
  CHECK(b.behavior_items == std::vector<std::size_t>{c.vocab.items, c.vocab.items, 5, 7});
  CHECK(b.key_mask == std::vector<std::uint8_t>{0, 0, 1, 1});
  CHECK(b.trigger_items == std::vector<std::size_t>{9});
  CHECK(b.trigger_attrs == std::vector<std::size_t>{c.vocab.trigger_attrs});
  CHECK(b.no_trigger == std::vector<double>{1.0});

  inst.user = c.vocab.users;
  CHECK_THROWS_AS(BatchInputs::from(std::span<const maria::Instance>(&inst, 1), c.schema, c.vocab),
                  maria::DataError);
}

TEST_CASE("unknown model kind") {
  CHECK_THROWS_AS(maria::parse_model_kind("star"), maria::ConfigError);
  CHECK(maria::parse_model_kind("mmoe") == maria::ModelKind::mmoe);
}
