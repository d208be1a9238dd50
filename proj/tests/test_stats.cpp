#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "bellsim/chessboard.hpp"
#include "bellsim/stats.hpp"

using namespace bellsim;

namespace {

TrialRecord rec(std::uint64_t id, bool a_primed, int a_out, bool b_primed,
                int b_out) {
  TrialRecord r;
  r.trial_id = id;
  r.alice_label = {Station::Alice, a_primed};
  r.alice_outcome = {a_out};
  r.bob_label = {Station::Bob, b_primed};
  r.bob_outcome = {b_out};
  return r;
}

// Two records per pair with hand-computed correlations 0, 1, 1, -1.
std::vector<TrialRecord> crafted() {
  return {
      rec(0, false, 1, false, 1),   rec(1, false, 1, false, -1),
      rec(2, false, 1, true, 1),    rec(3, false, 1, true, 1),
      rec(4, true, -1, false, -1),  rec(5, true, 1, false, -1),
      rec(6, true, 1, true, -1),    rec(7, true, -1, true, 1),
  };
}

std::vector<TrialRecord> one_per_pair_products_plus_one() {
  return {
      rec(0, false, 1, false, 1),
      rec(1, false, -1, true, -1),
      rec(2, true, 1, false, 1),
      rec(3, true, -1, true, -1),
  };
}

}  // namespace

TEST_CASE("crafted records give the hand-computed correlations") {
  const auto records = crafted();
  const ChshResult r = estimate(records, CollectionMode::Switch);
  CHECK(r.total == 8);
  CHECK(r.ab.n == 2);
  CHECK(r.ab.corr == 0.0);
  CHECK(r.ab.se == 1.0);
  CHECK(r.ab_prime.n == 2);
  CHECK(r.ab_prime.corr == 1.0);
  CHECK(r.ab_prime.se == 0.0);
  CHECK(r.a_prime_b.n == 2);
  CHECK(r.a_prime_b.corr == 0.0);
  CHECK(r.a_prime_b_prime.n == 2);
  CHECK(r.a_prime_b_prime.corr == -1.0);
  CHECK(r.bell == doctest::Approx(2.0));
}

TEST_CASE("merge equals one-pass accumulation") {
  SimulateOptions options;
  options.policy = {0.6, 0.3};
  options.n_trials = 1000;
  options.seeds = SeedPack::derive(11);
  const auto records = simulate(HolePattern::canonical(), options);

  ChshAccumulator whole(CollectionMode::Switch);
  for (const TrialRecord& r : records) whole.add(r);

  ChshAccumulator left(CollectionMode::Switch);
  ChshAccumulator right(CollectionMode::Switch);
  for (std::size_t k = 0; k < records.size(); ++k)
    (k < records.size() / 2 ? left : right).add(records[k]);
  left.merge(right);

  const ChshResult a = whole.result();
  const ChshResult b = left.result();
  // Products are integers, so the sums are exact and the results identical.
  CHECK(a.bell == b.bell);
  CHECK(a.se == b.se);
  CHECK(a.ab.corr == b.ab.corr);
  CHECK(a.a_prime_b_prime.se == b.a_prime_b_prime.se);
  CHECK(a.total == b.total);

  ChshAccumulator other_mode(CollectionMode::ZeroExtended);
  CHECK_THROWS_AS(left.merge(other_mode), std::invalid_argument);
}

TEST_CASE("estimates are invariant under record order") {
  SimulateOptions options;
  options.policy = {0.9, 0.9};
  options.n_trials = 2000;
  options.seeds = SeedPack::derive(12);
  auto records = simulate(HolePattern::canonical(), options);
  const ChshResult before = estimate(records, CollectionMode::Switch);
  std::shuffle(records.begin(), records.end(), std::mt19937(4));
  const ChshResult after = estimate(records, CollectionMode::Switch);
  CHECK(before.bell == after.bell);
  CHECK(before.se == after.se);
  CHECK(before.ab.corr == after.ab.corr);
}

TEST_CASE("an empty setting pair is an error that names the pair") {
  std::vector<TrialRecord> records = crafted();
  records.erase(std::remove_if(records.begin(), records.end(),
                               [](const TrialRecord& r) {
                                 return r.alice_label.primed &&
                                        r.bob_label.primed;
                               }),
                records.end());
  try {
    estimate(records, CollectionMode::Switch);
    FAIL("expected EmptyPairError");
  } catch (const EmptyPairError& e) {
    CHECK(std::string(e.what()).find("A'") != std::string::npos);
    CHECK(std::string(e.what()).find("B'") != std::string::npos);
    CHECK(e.alice_label.primed);
    CHECK(e.bob_label.primed);
  }
}

TEST_CASE("zero-extended averaging spreads each trial over all pairs") {
  const auto records = one_per_pair_products_plus_one();
  const ChshResult r = estimate(records, CollectionMode::ZeroExtended);
  CHECK(r.total == 4);
  for (const PairStats* p :
       {&r.ab, &r.ab_prime, &r.a_prime_b, &r.a_prime_b_prime}) {
    CHECK(p->n == 4);
    CHECK(p->corr == doctest::Approx(0.25));
    CHECK(p->se == doctest::Approx(0.25));
  }
  CHECK(r.bell == doctest::Approx(0.5));
  CHECK(r.se == doctest::Approx(0.5));

  // Dropping a pair is fine here: absent settings average to zero.
  const std::vector<TrialRecord> three(records.begin(), records.end() - 1);
  const ChshResult partial = estimate(three, CollectionMode::ZeroExtended);
  CHECK(partial.a_prime_b_prime.corr == 0.0);
}

TEST_CASE("outcome zero is accepted only under zero extension") {
  TrialRecord r = rec(0, false, 0, false, 1);
  ChshAccumulator cond(CollectionMode::Switch);
  CHECK_THROWS_AS(cond.add(r), std::invalid_argument);
  ChshAccumulator zero(CollectionMode::ZeroExtended);
  CHECK_NOTHROW(zero.add(r));
  ChshAccumulator ext(CollectionMode::ExtendedDomain);
  CHECK_THROWS_AS(ext.add(r), std::invalid_argument);
  TrialRecord bad = rec(1, false, 2, false, 1);
  CHECK_THROWS_AS(zero.add(bad), std::invalid_argument);
}

TEST_CASE("one-arm averages match hand counts") {
  const OneArmReport r = one_arm_averages(crafted());
  CHECK(r.a.n == 4);
  CHECK(r.a.mean == 1.0);
  CHECK(r.a.se == 0.0);
  CHECK(r.a_prime.n == 4);
  CHECK(r.a_prime.mean == doctest::Approx(0.0));
  CHECK(r.b.n == 4);
  CHECK(r.b.mean == doctest::Approx(-0.5));
  CHECK(r.b_prime.n == 4);
  CHECK(r.b_prime.mean == doctest::Approx(0.5));
  // +-1 outcomes: se = sqrt((1 - mean^2) / (n - 1)).
  CHECK(r.a_prime.se == doctest::Approx(std::sqrt(1.0 / 3.0)));
}

TEST_CASE("a never-observed setting is an error that names it") {
  std::vector<TrialRecord> records{rec(0, false, 1, false, 1),
                                   rec(1, false, 1, true, -1)};
  try {
    one_arm_averages(records);
    FAIL("expected MissingLabelError");
  } catch (const MissingLabelError& e) {
    CHECK(e.label.station == Station::Alice);
    CHECK(e.label.primed);
    CHECK(std::string(e.what()).find("A'") != std::string::npos);
  }
}

TEST_CASE("coincidence fraction counts singles against coincidences") {
  CHECK_FALSE(efficiency_audit({}, 0, 0).coincidence_fraction().has_value());
  const auto records = crafted();
  const EfficiencyReport clean = efficiency_audit(records);
  CHECK(clean.coincidences == 8);
  CHECK(clean.coincidence_fraction().value() == 1.0);
  const EfficiencyReport lossy = efficiency_audit(records, 1, 1);
  CHECK(lossy.coincidence_fraction().value() == doctest::Approx(0.8));
}

TEST_CASE("simulated runs pass the signaling check") {
  SimulateOptions options;
  options.policy = {0.9, 0.9};
  options.n_trials = 20000;
  options.seeds = SeedPack::derive(21);
  const auto records = simulate(HolePattern::canonical(), options);
  const NoSignalingReport report = no_signaling_check(records);
  CHECK(report.pass);
  CHECK(report.rows.size() == 8);
  for (const NoSignalingRow& row : report.rows) {
    CHECK(row.pass);
    CHECK(row.n_partner_plain + row.n_partner_primed == options.n_trials);
  }
}

TEST_CASE("signaling records fail the check") {
  // Alice's outcome copies Bob's setting: +1 under B', -1 under B.
  std::vector<TrialRecord> records;
  std::uint64_t id = 0;
  for (int ap = 0; ap < 2; ++ap)
    for (int bp = 0; bp < 2; ++bp)
      for (int k = 0; k < 100; ++k)
        records.push_back(
            rec(id++, ap != 0, bp != 0 ? 1 : -1, bp != 0, k % 2 ? 1 : -1));
  const NoSignalingReport report = no_signaling_check(records);
  CHECK_FALSE(report.pass);
  bool alice_row_failed = false;
  for (const NoSignalingRow& row : report.rows)
    if (row.label.station == Station::Alice && !row.pass)
      alice_row_failed = true;
  CHECK(alice_row_failed);

  std::vector<TrialRecord> missing{rec(0, false, 1, false, 1)};
  CHECK_THROWS_AS(no_signaling_check(missing), EmptyPairError);
}

TEST_CASE("doubles format as shortest round-trip decimals") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(-2.25) == "-2.25");
  CHECK(format_double(3.24) == "3.24");
}

TEST_CASE("correlation tables render exactly") {
  const ChshResult r =
      estimate(one_per_pair_products_plus_one(), CollectionMode::ZeroExtended);
  CHECK(correlation_table_csv(r) ==
        "pair,n,corr,se,mode\n"
        "AB,4,0.25,0.25,zero\n"
        "AB',4,0.25,0.25,zero\n"
        "A'B,4,0.25,0.25,zero\n"
        "A'B',4,0.25,0.25,zero\n"
        "bell,4,0.5,0.5,zero\n");
  CHECK(correlation_table_json(r) ==
        "{\"pairs\":{"
        "\"AB\":{\"n\":4,\"corr\":0.25,\"se\":0.25},"
        "\"AB'\":{\"n\":4,\"corr\":0.25,\"se\":0.25},"
        "\"A'B\":{\"n\":4,\"corr\":0.25,\"se\":0.25},"
        "\"A'B'\":{\"n\":4,\"corr\":0.25,\"se\":0.25}},"
        "\"bell\":0.5,\"se\":0.5,\"total\":4,\"mode\":\"zero\"}");
}
