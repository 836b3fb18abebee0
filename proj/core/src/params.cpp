#include "bkno/params.hpp"

#include <algorithm>
#include <cmath>

#include "bkno/errors.hpp"

namespace bkno {

double FieldInit::eval(double x) const {
  switch (kind) {
    case Kind::Zero: return 0.0;
    case Kind::Sine: return amplitude * std::sin(2.0 * M_PI * x);
    case Kind::Linear: return amplitude * x;
    case Kind::Tabulated: {
      if (xs.empty()) return 0.0;
      if (x <= xs.front()) return values.front();
      if (x >= xs.back()) return values.back();
      auto it = std::upper_bound(xs.begin(), xs.end(), x);
      const std::size_t k = static_cast<std::size_t>(it - xs.begin());
      const double t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
      return values[k - 1] + t * (values[k] - values[k - 1]);
    }
  }
  return 0.0;
}

void validate(const OdeMatrices& ode) {
  if (!all_finite(ode.A) || !all_finite(ode.B) || !all_finite(ode.C) || !all_finite(ode.K))
    throw validation_error("ode matrices must be finite");
  const auto hz = hurwitz_check(ode.closed_loop());
  if (!hz.hurwitz) throw validation_error("A+BK not Hurwitz");
}

void validate(const ModeParams& mode, const ParamBounds& bounds) {
  for (double l : mode.lambda_plus)
    if (!(l > 0.0)) throw validation_error("lambda_plus entries must be positive");
  if (!(mode.lambda_minus > 0.0)) throw validation_error("lambda_minus must be positive");

  auto in_bounds = [&](double v) { return std::isfinite(v) && v >= bounds.lo && v <= bounds.hi; };
  auto check = [&](double v) {
    if (!in_bounds(v)) throw validation_error("mode parameter outside global bounds");
  };
  for (double v : mode.lambda_plus) check(v);
  check(mode.lambda_minus);
  for (double v : mode.sigma_pp.a) check(v);
  for (double v : mode.sigma_pm.a) check(v);
  for (double v : mode.sigma_mp.a) check(v);
  check(mode.sigma_mm);
  for (double v : mode.Q.a) check(v);
  for (double v : mode.R.a) check(v);
}

}  // namespace bkno
