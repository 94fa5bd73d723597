#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "maria/features.hpp"
#include "maria/model.hpp"

namespace ad = maria::ad;
namespace nn = maria::nn;
using ad::Graph;
using ad::Shape;
using ad::Value;
using maria::FieldLayout;

namespace {

// Five fields: behavior {4}, user {3, 2}, item {2}, trigger {2, 1}, context {1}.
FieldLayout small_layout() {
  return FieldLayout::from_element_widths({{4}, {3, 2}, {2}, {2, 1}, {1}});
}

std::vector<double> values(Value v) { return {v.data().begin(), v.data().end()}; }

}  // namespace

TEST_CASE("element count and layout of Q") {
  maria::Schema s;
  s.user_attrs = 2;
  s.item_attrs = 2;
  s.trigger_attrs = 1;
  s.context_attrs = 1;
  CHECK(s.element_count() == 10);

  const FieldLayout layout = small_layout();
  CHECK(layout.width() == 15);
  CHECK(layout.element_count() == 7);
  CHECK(layout.field(3).offset == 11);
  CHECK(layout.field(3).elements[1].offset == 13);
}

TEST_CASE("assembling Q and slicing it back is lossless") {
  std::mt19937_64 rng(1);
  Graph g;
  std::vector<std::vector<Value>> parts;
  const std::vector<std::vector<std::size_t>> widths{{4}, {3, 2}, {2}, {2, 1}, {1}};
  for (const auto& f : widths) {
    auto& field = parts.emplace_back();
    for (std::size_t w : f) field.push_back(ad::constant(g, Shape{3, w}, testing::uniform_vector(3 * w, rng)));
  }
  maria::AssembledQ q = maria::assemble_q(parts);
  CHECK(q.layout == small_layout());
  CHECK(q.q.cols() == q.layout.width());
  for (std::size_t f = 0; f < widths.size(); ++f) {
    for (std::size_t e = 0; e < widths[f].size(); ++e) {
      const auto& span = q.layout.field(f).elements[e];
      CHECK(values(ad::slice(q.q, span.offset, span.width)) == values(parts[f][e]));
    }
  }
  CHECK_THROWS_AS(maria::assemble_q(parts, FieldLayout::from_element_widths({{4}, {5}, {2}, {3}, {1}})),
                  ad::ShapeError);
}

TEST_CASE("feature scaling") {
  std::mt19937_64 rng(2);
  const FieldLayout layout = small_layout();
  ad::ParameterStore store;
  const std::size_t du = 2, dx = 2, ds = 2;
  auto fs = maria::FsParams::create(store, "fs", layout.width() + du + dx + ds, {5},
                                    layout.element_count(), 2.0, rng);
  Graph g;
  Value q = ad::constant(g, Shape{4, layout.width()}, testing::uniform_vector(4 * layout.width(), rng));
  Value eu = ad::constant(g, Shape{4, du}, testing::uniform_vector(4 * du, rng));
  Value ex = ad::constant(g, Shape{4, dx}, testing::uniform_vector(4 * dx, rng));
  Value es = ad::constant(g, Shape{4, ds}, testing::uniform_vector(4 * ds, rng));

  SUBCASE("zero parameters are the identity") {
    for (auto* p : store.all()) std::fill(p->data.begin(), p->data.end(), 0.0);
    Value alpha;
    Value qs = maria::feature_scale(g, q, layout, eu, ex, es, fs, &alpha);
    for (double a : alpha.data()) CHECK(a == 1.0);
    CHECK(values(qs) == values(q));
  }
  SUBCASE("factors stay inside (0, lambda)") {
    // Beyond |logit| ~ 37 the sigmoid rounds to exactly 0 or 1, so keep weights moderate.
    for (auto* p : store.all()) testing::fill_uniform(*p, rng, -1.0, 1.0);
    Value alpha = maria::scaling_factors(g, q, eu, ex, es, fs);
    CHECK(alpha.shape() == Shape{4, layout.element_count()});
    for (double a : alpha.data()) {
      CHECK(a > 0.0);
      CHECK(a < 2.0);
    }
  }
  SUBCASE("each element is scaled by its own factor") {
    Value alpha;
    Value qs = maria::feature_scale(g, q, layout, eu, ex, es, fs, &alpha);
    const auto widths = layout.element_widths();
    for (std::size_t r = 0; r < 4; ++r) {
      std::size_t col = 0;
      for (std::size_t e = 0; e < widths.size(); ++e)
        for (std::size_t k = 0; k < widths[e]; ++k, ++col)
          CHECK(qs.data()[r * layout.width() + col] ==
                q.data()[r * layout.width() + col] * alpha.data()[r * widths.size() + e]);
    }
  }
  SUBCASE("mismatched widths are rejected") {
    Value bad = ad::constant(g, Shape{4, 3}, std::vector<double>(12, 0.0));
    CHECK_THROWS_AS(maria::feature_scale(g, bad, layout, eu, ex, es, fs), ad::ShapeError);
  }
}

TEST_CASE("the frozen branch passes no gradient to the sequence encoder") {
  maria::ModelConfig c = testing::tiny_model_config();
  maria::Dataset d = maria::generate(testing::tiny_generator(c, 8, 3));
  maria::BatchInputs b = maria::BatchInputs::from(std::span<const maria::Instance>(d.instances), c.schema, c.vocab);
  ad::ParameterStore store;
  std::mt19937_64 rng(4);
  maria::FeatureEncoder encoder(store, c, rng);
  auto scenario = nn::EmbeddingTable::create(store, "emb.scenario", 2, c.scenario_dim, rng);
  const FieldLayout& layout = encoder.layout();
  auto fs = maria::FsParams::create(store, "fs", layout.width() + c.user_dim + c.item_dim + c.scenario_dim,
                                    {4}, layout.element_count(), 2.0, rng);
  Graph g;
  maria::EncodedBatch enc = encoder.encode(g, b);
  Value alpha = maria::scaling_factors(g, enc.q, enc.e_user, enc.e_item, scenario.lookup(g, b.scenario), fs);
  g.backward(ad::sum(alpha));

  std::size_t checked = 0;
  for (const auto* p : store.all()) {
    // Only e_u, e_x, e_s and the scale network sit outside the frozen branch.
    const bool unfrozen = p->name == "emb.user" || p->name == "emb.item" ||
                          p->name == "emb.scenario" || p->name.rfind("fs.", 0) == 0;
    if (unfrozen) continue;
    for (double v : p->grad) CHECK(v == 0.0);
    ++checked;
  }
  CHECK(checked > 10);
  // The unfrozen branches do receive gradient.
  double user = 0.0;
  for (double v : store.find("emb.user")->grad) user += std::abs(v);
  CHECK(user > 0.0);
}

TEST_CASE("feature refinement") {
  std::mt19937_64 rng(5);
  const FieldLayout layout = small_layout();
  ad::ParameterStore store;
  const std::size_t ds = 2;
  auto fr = maria::FrParams::create(store, "fr", layout, ds, {1, 2, 1, 3, 1}, 0.5, 0.01, rng);
  Graph g(9);
  Value q = ad::constant(g, Shape{5, layout.width()}, testing::uniform_vector(5 * layout.width(), rng));
  Value es = ad::constant(g, Shape{5, ds}, testing::uniform_vector(5 * ds, rng));

  SUBCASE("output width") {
    // ceil(0.5 * width) per refiner: 2, 3 (x2), 1, 2 (x3), 1.
    CHECK(fr.output_width() == 2 + 2 * 3 + 1 + 3 * 2 + 1);
    maria::RefinedAll r = maria::refine_all(g, q, layout, es, fr, ad::Mode::train);
    CHECK(r.q_r.cols() == fr.output_width());
    CHECK(r.betas.size() == 5);
  }
  SUBCASE("one refiner gets weight one and passes its output through") {
    maria::Refined r = maria::refine_field(g, maria::field_slice(q, layout, 0), es, fr.fields[0], 0.01,
                                           true, ad::Mode::train);
    for (double b : r.beta.data()) CHECK(b == 1.0);
    Value direct = fr.fields[0].refiners[0].forward(g, maria::field_slice(q, layout, 0));
    CHECK(values(r.out) == values(direct));
  }
  SUBCASE("selection weights sum to one") {
    maria::RefinedAll r = maria::refine_all(g, q, layout, es, fr, ad::Mode::train);
    for (const Value& beta : r.betas) {
      for (std::size_t row = 0; row < beta.rows(); ++row) {
        double s = 0.0;
        for (std::size_t k = 0; k < beta.cols(); ++k) s += beta.data()[row * beta.cols() + k];
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
  }
  SUBCASE("evaluation zeroes every refiner but the argmax") {
    auto& sel = fr.fields[1].selector.layers()[0];
    std::fill(sel.weight->data.begin(), sel.weight->data.end(), 0.0);
    sel.bias->data = {5.0, -5.0};
    maria::Refined r = maria::refine_field(g, maria::field_slice(q, layout, 1), es, fr.fields[1], 0.01,
                                           true, ad::Mode::eval);
    const std::size_t w = fr.fields[1].refiners[0].out_width();
    for (std::size_t row = 0; row < 5; ++row) {
      CHECK(r.beta.data()[row * 2] == 1.0);
      CHECK(r.beta.data()[row * 2 + 1] == 0.0);
      for (std::size_t k = w; k < 2 * w; ++k) CHECK(r.out.data()[row * 2 * w + k] == 0.0);
    }
  }
  SUBCASE("without Gumbel noise the weights are a plain softmax of the selector") {
    maria::Refined r = maria::refine_field(g, maria::field_slice(q, layout, 3), es, fr.fields[3], 0.01,
                                           false, ad::Mode::eval);
    Value sel = ad::sigmoid(fr.fields[3].selector.forward(
        g, ad::concat(std::vector<Value>{maria::field_slice(q, layout, 3), es})));
    CHECK(values(r.beta) == values(ad::softmax(sel)));
  }
  SUBCASE("gradients with the noise held fixed") {
    ad::ParameterStore leaves;
    auto& x = leaves.create("q", Shape{3, layout.width()});
    auto& s = leaves.create("s", Shape{3, ds});
    testing::fill_uniform(x, rng);
    testing::fill_uniform(s, rng);
    const auto probe = testing::uniform_vector(3 * fr.output_width(), rng);
    maria::FrParams soft = fr;
    soft.temperature = 0.5;  // keeps the sampled weights away from exact one-hot
    auto loss = [&](Graph& gg) {
      maria::RefinedAll r = maria::refine_all(gg, ad::param(gg, x), layout, ad::param(gg, s), soft, ad::Mode::train);
      return ad::sum(ad::mul(r.q_r, ad::constant(gg, Shape{3, soft.output_width()}, probe)));
    };
    CHECK(testing::max_fd_error(store, loss) <= 1e-5);
    CHECK(testing::max_fd_error(leaves, loss) <= 1e-5);
  }
}

TEST_CASE("feature correlation") {
  Graph g;
  SUBCASE("ten scores for five fields, all one for a shared unit vector") {
    std::vector<Value> fields;
    for (int f = 0; f < 5; ++f) fields.push_back(ad::constant(g, Shape{2, 2}, {0.6, 0.8, 0.6, 0.8}));
    Value qc = maria::pairwise_dots(fields);
    CHECK(qc.shape() == Shape{2, maria::kPairCount});
    CHECK(maria::kPairCount == 10);
    for (double v : qc.data()) CHECK(std::abs(v - 1.0) <= 1e-15);
  }
  SUBCASE("orthogonal projections score zero") {
    std::vector<Value> fields{ad::constant(g, Shape{1, 2}, {1, 0}), ad::constant(g, Shape{1, 2}, {0, 1}),
                              ad::constant(g, Shape{1, 2}, {1, 1})};
    Value qc = maria::pairwise_dots(fields);
    CHECK(values(qc) == std::vector<double>{0.0, 1.0, 1.0});
  }
  SUBCASE("pair scores are symmetric") {
    std::mt19937_64 rng(6);
    Value a = ad::constant(g, Shape{4, 3}, testing::uniform_vector(12, rng));
    Value b = ad::constant(g, Shape{4, 3}, testing::uniform_vector(12, rng));
    CHECK(values(ad::dot_rows(a, b)) == values(ad::dot_rows(b, a)));
  }
  SUBCASE("projected fields of Q") {
    std::mt19937_64 rng(7);
    const FieldLayout layout = small_layout();
    ad::ParameterStore store;
    auto fcm = maria::FcmParams::create(store, "fcm", layout, 3, rng);
    const auto x = testing::uniform_vector(2 * layout.width(), rng);
    Value q = ad::constant(g, Shape{2, layout.width()}, x);
    Value qc = maria::correlate_fields(g, q, layout, fcm);
    CHECK(qc.cols() == 10);
    // Pair (1, 3) computed by hand from the projection weights.
    auto project = [&](std::size_t f, std::size_t row) {
      const auto& lin = fcm.projections[f].layers()[0];
      const auto& span = layout.field(f);
      std::vector<double> out(3, 0.0);
      for (std::size_t j = 0; j < 3; ++j) {
        out[j] = lin.bias->data[j];
        for (std::size_t i = 0; i < span.width; ++i)
          out[j] += x[row * layout.width() + span.offset + i] * lin.weight->data[i * 3 + j];
      }
      return out;
    };
    for (std::size_t row = 0; row < 2; ++row) {
      const auto u = project(1, row), t = project(3, row);
      const double expect = u[0] * t[0] + u[1] * t[1] + u[2] * t[2];
      // Pairs in order (0,1) (0,2) (0,3) (0,4) (1,2) (1,3): index 5.
      CHECK(std::abs(qc.data()[row * 10 + 5] - expect) <= 1e-12);
    }
  }
}

TEST_CASE("adaptive feature composition") {
  std::mt19937_64 rng(8);
  const FieldLayout layout = small_layout();
  ad::ParameterStore store;
  maria::AdaptiveParams p;
  p.fs = maria::FsParams::create(store, "fs", layout.width() + 6, {4}, layout.element_count(), 2.0, rng);
  p.fr = maria::FrParams::create(store, "fr", layout, 2, {1, 2, 1, 1, 1}, 0.5, 0.01, rng);
  p.fcm = maria::FcmParams::create(store, "fcm", layout, 3, rng);
  Graph g(3);
  Value q = ad::constant(g, Shape{3, layout.width()}, testing::uniform_vector(3 * layout.width(), rng));
  Value e = ad::constant(g, Shape{3, 2}, testing::uniform_vector(6, rng));

  maria::AdaptiveOutput full = maria::adaptive_features(g, q, layout, e, e, e, p, ad::Mode::eval);
  CHECK(full.q_f.cols() == full.q_r.cols() + 10);

  p.flags.correlation = false;
  maria::AdaptiveOutput no_fcm = maria::adaptive_features(g, q, layout, e, e, e, p, ad::Mode::eval);
  CHECK(!no_fcm.q_c.valid());
  CHECK(values(no_fcm.q_f) == values(no_fcm.q_r));
  CHECK(values(no_fcm.q_r) == values(full.q_r));

  p.flags.scaling = false;
  maria::AdaptiveOutput no_fs = maria::adaptive_features(g, q, layout, e, e, e, p, ad::Mode::eval);
  CHECK(values(no_fs.q_s) == values(q));
  CHECK(!no_fs.alpha.valid());

  p.flags.refinement = false;
  maria::AdaptiveOutput none = maria::adaptive_features(g, q, layout, e, e, e, p, ad::Mode::eval);
  CHECK(values(none.q_f) == values(q));
  CHECK(none.betas.empty());
}
