#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bellsim/chessboard.hpp"
#include "bellsim/core.hpp"

namespace bellsim {

// Count, correlation estimate and its standard error for one setting pair.
struct PairStats {
  std::uint64_t n = 0;
  double corr = 0.0;
  double se = 0.0;
};

struct ChshResult {
  CollectionMode mode = CollectionMode::Switch;
  std::uint64_t total = 0;
  PairStats ab;
  PairStats ab_prime;
  PairStats a_prime_b;
  PairStats a_prime_b_prime;
  double bell = 0.0;  // ab + ab' + a'b - a'b'
  double se = 0.0;    // quadrature over the four pair errors
};

// Streaming, mergeable accumulator over trial records. Averaging honours the
// collection mode: Switch and ExtendedDomain condition each correlation on its
// setting pair; ZeroExtended averages products over all trials, with 0 for
// trials whose labels do not match the pair.
class ChshAccumulator {
 public:
  explicit ChshAccumulator(CollectionMode mode = CollectionMode::Switch);

  void add(const TrialRecord& rec);
  void merge(const ChshAccumulator& other);

  std::uint64_t total() const { return total_; }

  // Throws EmptyPairError in the conditional modes when a pair saw no trials.
  ChshResult result() const;

 private:
  struct Moments {
    std::uint64_t n = 0;
    double sum = 0.0;
    double sumsq = 0.0;

    void add(double x);
    void merge(const Moments& other);
    double mean() const;
    double se() const;
  };

  CollectionMode mode_;
  std::array<Moments, 4> pairs_;  // indexed 2*a_primed + b_primed
  std::uint64_t total_ = 0;
};

ChshResult estimate(std::span<const TrialRecord> records, CollectionMode mode);

// Conditional outcome averages per final setting, with their errors.
struct LabelMean {
  std::uint64_t n = 0;
  double mean = 0.0;
  double se = 0.0;
};

struct OneArmReport {
  LabelMean a;
  LabelMean a_prime;
  LabelMean b;
  LabelMean b_prime;
};

// Throws MissingLabelError when a label never occurred.
OneArmReport one_arm_averages(std::span<const TrialRecord> records);

// Coincidence bookkeeping. The simulator's detectors are perfect, so singles
// only appear when a harness run loses messages.
struct EfficiencyReport {
  std::uint64_t coincidences = 0;
  std::uint64_t alice_singles = 0;
  std::uint64_t bob_singles = 0;

  // Coincidences over all events; empty when nothing was counted at all.
  std::optional<double> coincidence_fraction() const;
};

EfficiencyReport efficiency_audit(std::span<const TrialRecord> records,
                                  std::uint64_t alice_singles = 0,
                                  std::uint64_t bob_singles = 0);

// One station-side category of the signaling check: the rate of (label,
// outcome) on one side, split by whether the partner's setting was primed.
struct NoSignalingRow {
  SettingLabel label;
  int outcome = 0;
  std::uint64_t n_partner_plain = 0;
  std::uint64_t n_partner_primed = 0;
  double rate_partner_plain = 0.0;
  double rate_partner_primed = 0.0;
  double diff = 0.0;
  double se = 0.0;  // two-sample error of the difference
  bool pass = false;
};

struct NoSignalingReport {
  std::vector<NoSignalingRow> rows;
  bool pass = false;
};

// Compares each station's marginal (label, outcome) rates across the partner's
// two settings; a category passes when |diff| <= 5 se (and exactly 0 when the
// error vanishes). Throws EmptyPairError when a setting pair is absent.
NoSignalingReport no_signaling_check(std::span<const TrialRecord> records);

// Rectangular CSV: header pair,n,corr,se,mode; one row per setting pair and a
// final summary row with pair "bell" holding the combined estimate.
std::string correlation_table_csv(const ChshResult& result);

// Same content as the CSV: per-pair objects plus bell, se, mode.
std::string correlation_table_json(const ChshResult& result);

// Shortest round-trip decimal form of a double, locale independent.
std::string format_double(double x);

}  // namespace bellsim
