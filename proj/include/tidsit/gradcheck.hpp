#pragma once

#include <functional>
#include <map>
#include <string>

#include "tidsit/tensor.hpp"

namespace tidsit {

using ParamMap = std::map<std::string, Tensor>;
using ScalarFn = std::function<double(const ParamMap&)>;

/// Central differences (f(p+eps*e) - f(p-eps*e)) / (2*eps), one coordinate at
/// a time. Independent oracle for the reverse-mode tape; f must be
/// deterministic under a fixed rng-stream.
ParamMap finite_difference_gradient(const ScalarFn& f, ParamMap params,
                                    double eps);

/// |a-b| / max(|a|, |b|, floor); the floor turns the comparison absolute for
/// entries below it, where central differences are noise-dominated.
double relative_error(double a, double b, double floor = 1e-4);

/// Max elementwise relative_error across two aligned gradient maps.
double max_relative_error(const ParamMap& analytic, const ParamMap& numeric,
                          double floor = 1e-4);

}  // namespace tidsit
