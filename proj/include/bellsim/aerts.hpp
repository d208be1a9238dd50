#pragma once

#include <cstdint>

#include "bellsim/core.hpp"

namespace bellsim {

// Measurement device on the unit circle: an axis angle and the mass fraction
// m1 sitting at the axis point; 1 - m1 sits at the antipode.
struct AertsDevice {
  double axis = 0.0;
  double m1 = 0.5;
};

struct AertsMeasurement {
  Outcome outcome;
  double post_alpha = 0.0;  // collapsed state angle in [0, 2pi)
};

// The probe at angle alpha is pulled to whichever mass wins the inverse-square
// contest over the two chord distances, which reduces to: outcome +1 iff
// m1 > sin^2((alpha - axis)/2), ties to -1. The state collapses onto the axis
// for +1 and onto the antipode for -1.
AertsMeasurement aerts_measure(double alpha, const AertsDevice& device);

// cos^2(delta/2): the probability of +1 at angular separation delta when the
// device mass is drawn uniformly.
double malus_probability(double delta);

// Sequential procedure: fresh probe, measure at axis 0, and when that gives
// +1, measure the collapsed state again at axis theta with a fresh mass draw.
struct SequentialReport {
  double theta = 0.0;
  std::uint64_t n = 0;
  std::uint64_t first_plus = 0;
  std::uint64_t both_plus = 0;
  double conditional_rate = 0.0;  // both_plus / first_plus
  double conditional_se = 0.0;
  double joint_rate = 0.0;  // both_plus / n
  double joint_se = 0.0;
  double predicted_conditional = 0.0;  // cos^2(theta/2)
  double predicted_joint = 0.0;        // cos^2(theta/2) / 2
};

SequentialReport sequential_run(double theta, std::uint64_t n,
                                std::uint64_t seed);

// Counterfactual procedure: one probe angle and one mass draw per trial, with
// every device's outcome evaluated on that same pair. No collapse happens, so
// these are the answers to "what would each device have given".
double counterfactual_joint(double theta);  // 1/2 - |sin(theta/2)|/pi

// E[X_phi X_psi] = 1 - (4/pi)|sin((phi - psi)/2)| under the counterfactual
// procedure.
double counterfactual_pair_correlation(double delta);

struct CounterfactualJointReport {
  double theta = 0.0;
  std::uint64_t n = 0;
  std::uint64_t plus_plus = 0;
  double rate = 0.0;
  double se = 0.0;
  double predicted = 0.0;  // counterfactual_joint(theta)
};

CounterfactualJointReport counterfactual_joint_mc(double theta, std::uint64_t n,
                                                  std::uint64_t seed);

struct ChshQuadruple {
  double a1 = 0.0;
  double a2 = 0.0;
  double b1 = 0.0;
  double b2 = 0.0;
};

struct CounterfactualChshReport {
  ChshQuadruple axes;
  std::uint64_t n = 0;
  double e_a1b1 = 0.0;
  double e_a1b2 = 0.0;
  double e_a2b1 = 0.0;
  double e_a2b2 = 0.0;
  double s = 0.0;   // e_a1b1 + e_a1b2 + e_a2b1 - e_a2b2
  double se = 0.0;  // from the per-trial combined products, not quadrature
  double s_closed = 0.0;  // same combination from the closed-form correlation
};

// All four outcomes per trial come from the same (alpha, mass) pair, so a
// joint distribution exists by construction and |s| <= 2 up to sampling noise.
CounterfactualChshReport counterfactual_chsh(const ChshQuadruple& axes,
                                             std::uint64_t n,
                                             std::uint64_t seed);

}  // namespace bellsim
