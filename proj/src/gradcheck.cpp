#include "tidsit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "tidsit/errors.hpp"

namespace tidsit {

ParamMap finite_difference_gradient(const ScalarFn& f, ParamMap params,
                                    double eps) {
  if (eps <= 0.0) throw NumericError("finite differences require eps > 0");
  ParamMap grads;
  for (auto& [path, tensor] : params) {
    Tensor g(tensor.rows(), tensor.cols(), 0.0);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + eps;
      const double up = f(params);
      tensor[i] = saved - eps;
      const double down = f(params);
      tensor[i] = saved;
      g[i] = (up - down) / (2.0 * eps);
    }
    grads.emplace(path, std::move(g));
  }
  return grads;
}

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

double max_relative_error(const ParamMap& analytic, const ParamMap& numeric,
                          double floor) {
  if (analytic.size() != numeric.size()) {
    throw NumericError("gradient maps differ in parameter count");
  }
  double worst = 0.0;
  for (const auto& [path, ga] : analytic) {
    auto it = numeric.find(path);
    if (it == numeric.end()) {
      throw NumericError("gradient map missing parameter " + path);
    }
    const Tensor& gn = it->second;
    if (!ga.same_shape(gn)) {
      throw NumericError("gradient shape mismatch at " + path);
    }
    for (std::size_t i = 0; i < ga.size(); ++i) {
      worst = std::max(worst, relative_error(ga[i], gn[i], floor));
    }
  }
  return worst;
}

}  // namespace tidsit
