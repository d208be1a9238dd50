#pragma once

#include <gmpxx.h>

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "bellsim/core.hpp"
#include "bellsim/rng.hpp"

namespace bellsim {

// A unit cell [i,i+1] x [j,j+1] of the 4x4 chessboard, named by its lower-left
// corner.
struct Cell {
  int i = 0;
  int j = 0;

  auto operator<=>(const Cell&) const = default;
};

// Outcome sign a coordinate in band i maps to: -1 on bands 0 and 2, +1 on
// bands 1 and 3. Both stations use the same band-to-sign rule.
int band_sign(int band);

// How the run's variables are defined, which decides how records are averaged.
//  Switch:         variables defined only when the drawer clicked; averages
//                  conditional on the observed setting pair.
//  ExtendedDomain: outcomes promoted to sign functions defined for every
//                  lambda; settings chosen freely; conditional averages.
//  ZeroExtended:   variables set to 0 whenever the drawer did not click;
//                  unconditional averages over all trials.
enum class CollectionMode { Switch, ExtendedDomain, ZeroExtended };

std::string_view to_string(CollectionMode mode);
CollectionMode collection_mode_from_string(std::string_view text);

// The support of the hidden-variable distribution: a set of cells the ball
// pair can land in. Cells are held sorted and deduplicated.
class HolePattern {
 public:
  HolePattern() = default;
  static HolePattern from_cells(std::vector<Cell> cells);

  // The unique pattern satisfying the full validation contract.
  static HolePattern canonical();

  // Reads whitespace-separated "i j" integer pairs, one cell per pair.
  // Throws std::invalid_argument on anything else.
  static HolePattern load(std::istream& in);
  static HolePattern load_file(const std::string& path);

  const std::vector<Cell>& cells() const { return cells_; }
  bool contains(Cell c) const;

  // 8 distinct cells inside the board, 2 in each quadrant. This is the
  // precondition for sampling and enumeration; the full statistical contract
  // is checked by validate_pattern.
  bool well_formed() const;

  bool operator==(const HolePattern&) const = default;

 private:
  std::vector<Cell> cells_;
};

// One violated constraint, named, with the offending detail.
struct PatternReport {
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

// Full contract: exactly 8 cells inside the board, 2 per quadrant, a constant
// outcome-product sign per quadrant matching (+,+,+,-) for (low-low, low-high,
// high-low, high-high), and both stations' signs split +1/-1 inside every
// quadrant.
PatternReport validate_pattern(const HolePattern& pattern);

// Uniformly random well-formed pattern: per quadrant, 2 distinct cells out of
// its 4. Used for bound checks over the whole family; such patterns need not
// pass validate_pattern.
HolePattern random_well_formed_pattern(StreamRng& rng);

// Drawer geometry. Coordinates in [0,2] belong to the primed drawer (closed
// position), (2,4] to the unprimed one. Throws std::invalid_argument outside
// [0,4].
SettingLabel base_label(Station station, double coord);
Outcome coordinate_outcome(Station station, double coord);

// A fired switch flips primed to unprimed and back; it never touches the
// outcome.
SettingLabel apply_switch(SettingLabel label, bool fired);

// Uniform draw over the pattern's cells, then uniform inside the cell. A
// coordinate in cell band i is drawn from (i, i+1], matching the half-open
// outcome bands, so a sampled point never straddles a band edge.
HiddenVariable sample_lambda(StreamRng& rng, const HolePattern& pattern);

// Both stations' labels and outcomes for one ball pair, after the given
// switch draws.
TrialRecord run_trial(std::uint64_t trial_id, const HiddenVariable& lambda,
                      bool alice_fired, bool bob_fired,
                      bool keep_lambda = false);

struct SimulateOptions {
  SwitchPolicy policy;
  std::uint64_t n_trials = 0;
  SeedPack seeds;
  CollectionMode mode = CollectionMode::Switch;
  bool keep_lambda = false;
};

// Streams n_trials records into sink. Three independent draw streams: hidden
// variables from seeds.lambda, Alice's switch from seeds.alice, Bob's from
// seeds.bob, so either station's draws can be reproduced in isolation.
void simulate(const HolePattern& pattern, const SimulateOptions& options,
              const std::function<void(const TrialRecord&)>& sink);
std::vector<TrialRecord> simulate(const HolePattern& pattern,
                                  const SimulateOptions& options);

// The four conditional correlations and their Bell combination
// corr(A,B) + corr(A,B') + corr(A',B) - corr(A',B').
struct ExactCorrelations {
  mpq_class ab;
  mpq_class ab_prime;
  mpq_class a_prime_b;
  mpq_class a_prime_b_prime;
  mpq_class bell;
};

// Exact enumeration over cells and switch combinations, conditional averages.
// Every well-formed pattern puts probability exactly 1/4 on each setting pair
// (two cells per quadrant, and the switch weights sum out), so no pair is
// ever empty here.
ExactCorrelations chsh_exact(const HolePattern& pattern, const mpq_class& p_a,
                             const mpq_class& p_b);

// Every variable a sign function of lambda, settings chosen freely with any
// nondegenerate probabilities: all four correlations collapse to the same
// cell average and the Bell combination is twice it.
ExactCorrelations chsh_extended_domain(const HolePattern& pattern);

// Variables zero when the drawer did not click, averaged unconditionally.
ExactCorrelations chsh_zero_extended(const HolePattern& pattern,
                                     const mpq_class& p_a,
                                     const mpq_class& p_b);

// Exact conditional one-arm averages, ordered A, A', B, B'.
std::array<mpq_class, 4> one_arm_exact(const HolePattern& pattern,
                                       const mpq_class& p_a,
                                       const mpq_class& p_b);

// "0.35" -> 7/20. Accepts an optional sign, digits, an optional fractional
// part. Throws std::invalid_argument otherwise.
mpq_class rational_from_decimal(std::string_view text);

// The exact binary value of the double.
mpq_class rational_from_double(double x);

// Nearest double, ties to even. mpq_get_d truncates toward zero, which would
// render 81/25 as 3.2399999999999998 instead of 3.24.
double double_from_rational(const mpq_class& q);

}  // namespace bellsim
