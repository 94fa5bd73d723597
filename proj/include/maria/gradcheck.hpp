#pragma once

// Central finite-difference verification of autodiff gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maria/autodiff.hpp"
#include "maria/model.hpp"

namespace maria {

struct GroupCheck {
  std::string group;
  std::size_t checked = 0;  // scalar parameters compared
  double max_rel_error = 0.0;
  std::string worst;        // "param[index]" with the largest error
  bool pass = true;
};

struct GradCheckReport {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  double loss = 0.0;
  std::vector<GroupCheck> groups;

  bool pass() const;
  std::string text() const;
  std::string json(int indent = 2) const;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps round-off on gradients
/// that are zero up to cancellation from counting as a relative failure:
/// with eps = 1e-5 a central difference of an O(1) loss carries about 1e-11
/// of round-off, which a 1e-7 floor would already inflate to 1e-4.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares backward() against (L(p + eps) - L(p - eps)) / 2 eps for every
/// scalar in `store`. `loss` builds the scalar loss on a fresh graph seeded
/// with `seed` on every call, so sampled noise is identical across calls.
/// stop_gradient outputs are recorded on the unperturbed pass and replayed
/// on the perturbed ones, so both sides see frozen branches as constants.
GradCheckReport check_gradients(ad::ParameterStore& store,
                                const std::function<Value(Graph&)>& loss, std::uint64_t seed,
                                double epsilon = 1e-5, double tolerance = 1e-4);

/// Mean cross-entropy of `model` on `batch` in training mode.
GradCheckReport check_model_gradients(RankingModel& model, const BatchInputs& batch,
                                      std::uint64_t seed, double epsilon = 1e-5,
                                      double tolerance = 1e-4);

}  // namespace maria
