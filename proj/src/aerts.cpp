#include "bellsim/aerts.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bellsim/rng.hpp"

namespace bellsim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double normalize_angle(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("angle is not finite");
  double r = std::fmod(x, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  return r;
}

double plus_threshold(double alpha, double axis) {
  const double s = std::sin((alpha - axis) / 2.0);
  return s * s;
}

void check_count(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("trial count must be at least 1");
}

double rate_se(double rate, double n) {
  double var = rate * (1.0 - rate) / n;
  if (var < 0.0) var = 0.0;
  return std::sqrt(var);
}

}  // namespace

AertsMeasurement aerts_measure(double alpha, const AertsDevice& device) {
  if (!std::isfinite(alpha) || !std::isfinite(device.axis))
    throw std::invalid_argument("angle is not finite");
  if (!std::isfinite(device.m1) || device.m1 < 0.0 || device.m1 > 1.0)
    throw std::invalid_argument("device mass outside [0,1]");
  const bool plus = device.m1 > plus_threshold(alpha, device.axis);
  AertsMeasurement m;
  m.outcome = Outcome{plus ? 1 : -1};
  m.post_alpha = normalize_angle(plus ? device.axis
                                      : device.axis + std::numbers::pi);
  return m;
}

double malus_probability(double delta) {
  const double c = std::cos(delta / 2.0);
  return c * c;
}

SequentialReport sequential_run(double theta, std::uint64_t n,
                                std::uint64_t seed) {
  check_count(n);
  if (!std::isfinite(theta)) throw std::invalid_argument("angle is not finite");
  StreamRng state_rng(derive_seed(seed, 0));
  StreamRng mass_rng(derive_seed(seed, 1));

  SequentialReport rep;
  rep.theta = theta;
  rep.n = n;
  for (std::uint64_t t = 0; t < n; ++t) {
    const double alpha = state_rng.uniform(0.0, kTwoPi);
    const AertsMeasurement first =
        aerts_measure(alpha, {0.0, mass_rng.uniform01()});
    if (first.outcome.value != 1) continue;
    ++rep.first_plus;
    const AertsMeasurement second =
        aerts_measure(first.post_alpha, {theta, mass_rng.uniform01()});
    if (second.outcome.value == 1) ++rep.both_plus;
  }
  rep.predicted_conditional = malus_probability(theta);
  rep.predicted_joint = rep.predicted_conditional / 2.0;
  if (rep.first_plus > 0) {
    rep.conditional_rate = static_cast<double>(rep.both_plus) /
                           static_cast<double>(rep.first_plus);
    rep.conditional_se =
        rate_se(rep.conditional_rate, static_cast<double>(rep.first_plus));
  }
  rep.joint_rate =
      static_cast<double>(rep.both_plus) / static_cast<double>(rep.n);
  rep.joint_se = rate_se(rep.joint_rate, static_cast<double>(rep.n));
  return rep;
}

double counterfactual_joint(double theta) {
  return 0.5 - std::fabs(std::sin(theta / 2.0)) / std::numbers::pi;
}

double counterfactual_pair_correlation(double delta) {
  return 1.0 -
         (4.0 / std::numbers::pi) * std::fabs(std::sin(delta / 2.0));
}

CounterfactualJointReport counterfactual_joint_mc(double theta, std::uint64_t n,
                                                  std::uint64_t seed) {
  check_count(n);
  if (!std::isfinite(theta)) throw std::invalid_argument("angle is not finite");
  StreamRng state_rng(derive_seed(seed, 0));
  StreamRng mass_rng(derive_seed(seed, 1));

  CounterfactualJointReport rep;
  rep.theta = theta;
  rep.n = n;
  for (std::uint64_t t = 0; t < n; ++t) {
    const double alpha = state_rng.uniform(0.0, kTwoPi);
    const double m = mass_rng.uniform01();
    const bool x0 = m > plus_threshold(alpha, 0.0);
    const bool xt = m > plus_threshold(alpha, theta);
    if (x0 && xt) ++rep.plus_plus;
  }
  rep.rate = static_cast<double>(rep.plus_plus) / static_cast<double>(n);
  rep.se = rate_se(rep.rate, static_cast<double>(n));
  rep.predicted = counterfactual_joint(theta);
  return rep;
}

CounterfactualChshReport counterfactual_chsh(const ChshQuadruple& axes,
                                             std::uint64_t n,
                                             std::uint64_t seed) {
  check_count(n);
  for (double a : {axes.a1, axes.a2, axes.b1, axes.b2})
    if (!std::isfinite(a)) throw std::invalid_argument("angle is not finite");
  StreamRng state_rng(derive_seed(seed, 0));
  StreamRng mass_rng(derive_seed(seed, 1));

  double sums[4] = {};
  double comb_sum = 0.0, comb_sumsq = 0.0;
  for (std::uint64_t t = 0; t < n; ++t) {
    const double alpha = state_rng.uniform(0.0, kTwoPi);
    const double m = mass_rng.uniform01();
    const double xa1 = m > plus_threshold(alpha, axes.a1) ? 1.0 : -1.0;
    const double xa2 = m > plus_threshold(alpha, axes.a2) ? 1.0 : -1.0;
    const double xb1 = m > plus_threshold(alpha, axes.b1) ? 1.0 : -1.0;
    const double xb2 = m > plus_threshold(alpha, axes.b2) ? 1.0 : -1.0;
    const double products[4] = {xa1 * xb1, xa1 * xb2, xa2 * xb1, xa2 * xb2};
    for (int k = 0; k < 4; ++k) sums[k] += products[k];
    const double comb = products[0] + products[1] + products[2] - products[3];
    comb_sum += comb;
    comb_sumsq += comb * comb;
  }

  CounterfactualChshReport rep;
  rep.axes = axes;
  rep.n = n;
  const double dn = static_cast<double>(n);
  rep.e_a1b1 = sums[0] / dn;
  rep.e_a1b2 = sums[1] / dn;
  rep.e_a2b1 = sums[2] / dn;
  rep.e_a2b2 = sums[3] / dn;
  rep.s = comb_sum / dn;
  if (n > 1) {
    double var = (comb_sumsq - dn * rep.s * rep.s) / (dn - 1.0);
    if (var < 0.0) var = 0.0;
    rep.se = std::sqrt(var / dn);
  }
  rep.s_closed = counterfactual_pair_correlation(axes.a1 - axes.b1) +
                 counterfactual_pair_correlation(axes.a1 - axes.b2) +
                 counterfactual_pair_correlation(axes.a2 - axes.b1) -
                 counterfactual_pair_correlation(axes.a2 - axes.b2);
  return rep;
}

}  // namespace bellsim
