#include "bellsim/stats.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace bellsim {

namespace {

int pair_index(const TrialRecord& rec) {
  return 2 * (rec.alice_label.primed ? 1 : 0) + (rec.bob_label.primed ? 1 : 0);
}

SettingLabel alice_label_of(int idx) {
  return {Station::Alice, (idx & 2) != 0};
}

SettingLabel bob_label_of(int idx) { return {Station::Bob, (idx & 1) != 0}; }

void check_outcome(const Outcome& o, CollectionMode mode) {
  if (o.value == 1 || o.value == -1) return;
  if (o.value == 0 && mode == CollectionMode::ZeroExtended) return;
  throw std::invalid_argument("outcome " + std::to_string(o.value) +
                              " not allowed in mode " +
                              std::string(to_string(mode)));
}

}  // namespace

void ChshAccumulator::Moments::add(double x) {
  ++n;
  sum += x;
  sumsq += x * x;
}

void ChshAccumulator::Moments::merge(const Moments& other) {
  n += other.n;
  sum += other.sum;
  sumsq += other.sumsq;
}

double ChshAccumulator::Moments::mean() const {
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double ChshAccumulator::Moments::se() const {
  if (n < 2) return 0.0;
  const double m = mean();
  double var = (sumsq - static_cast<double>(n) * m * m) /
               static_cast<double>(n - 1);
  if (var < 0.0) var = 0.0;  // rounding
  return std::sqrt(var / static_cast<double>(n));
}

ChshAccumulator::ChshAccumulator(CollectionMode mode) : mode_(mode) {}

void ChshAccumulator::add(const TrialRecord& rec) {
  check_outcome(rec.alice_outcome, mode_);
  check_outcome(rec.bob_outcome, mode_);
  ++total_;
  const double product =
      static_cast<double>(rec.alice_outcome.value * rec.bob_outcome.value);
  if (mode_ == CollectionMode::ZeroExtended) {
    // Every trial contributes to every pair: the product where the labels
    // match, 0 elsewhere (the zero-extended value of the other settings).
    const int match = pair_index(rec);
    for (int idx = 0; idx < 4; ++idx)
      pairs_[idx].add(idx == match ? product : 0.0);
  } else {
    pairs_[pair_index(rec)].add(product);
  }
}

void ChshAccumulator::merge(const ChshAccumulator& other) {
  if (mode_ != other.mode_)
    throw std::invalid_argument("cannot merge accumulators of different modes");
  total_ += other.total_;
  for (int idx = 0; idx < 4; ++idx) pairs_[idx].merge(other.pairs_[idx]);
}

ChshResult ChshAccumulator::result() const {
  ChshResult res;
  res.mode = mode_;
  res.total = total_;
  PairStats* slots[4] = {&res.ab, &res.ab_prime, &res.a_prime_b,
                         &res.a_prime_b_prime};
  for (int idx = 0; idx < 4; ++idx) {
    const Moments& m = pairs_[idx];
    if (m.n == 0 && mode_ != CollectionMode::ZeroExtended)
      throw EmptyPairError(alice_label_of(idx), bob_label_of(idx));
    slots[idx]->n = m.n;
    slots[idx]->corr = m.mean();
    slots[idx]->se = m.se();
  }
  res.bell = res.ab.corr + res.ab_prime.corr + res.a_prime_b.corr -
             res.a_prime_b_prime.corr;
  res.se = std::sqrt(res.ab.se * res.ab.se + res.ab_prime.se * res.ab_prime.se +
                     res.a_prime_b.se * res.a_prime_b.se +
                     res.a_prime_b_prime.se * res.a_prime_b_prime.se);
  return res;
}

ChshResult estimate(std::span<const TrialRecord> records, CollectionMode mode) {
  ChshAccumulator acc(mode);
  for (const TrialRecord& rec : records) acc.add(rec);
  return acc.result();
}

OneArmReport one_arm_averages(std::span<const TrialRecord> records) {
  struct Sums {
    std::uint64_t n = 0;
    double sum = 0.0;
  };
  Sums sums[2][2];  // [station][primed]
  for (const TrialRecord& rec : records) {
    check_outcome(rec.alice_outcome, CollectionMode::Switch);
    check_outcome(rec.bob_outcome, CollectionMode::Switch);
    Sums& sa = sums[0][rec.alice_label.primed ? 1 : 0];
    ++sa.n;
    sa.sum += rec.alice_outcome.value;
    Sums& sb = sums[1][rec.bob_label.primed ? 1 : 0];
    ++sb.n;
    sb.sum += rec.bob_outcome.value;
  }
  OneArmReport report;
  LabelMean* slots[2][2] = {{&report.a, &report.a_prime},
                            {&report.b, &report.b_prime}};
  for (int st = 0; st < 2; ++st) {
    for (int pr = 0; pr < 2; ++pr) {
      const Sums& s = sums[st][pr];
      const SettingLabel label{st == 0 ? Station::Alice : Station::Bob,
                               pr != 0};
      if (s.n == 0) throw MissingLabelError(label);
      LabelMean& out = *slots[st][pr];
      out.n = s.n;
      out.mean = s.sum / static_cast<double>(s.n);
      // Outcomes are +-1, so the sample variance has the closed form
      // n(1 - mean^2)/(n - 1).
      if (s.n > 1) {
        double var = (1.0 - out.mean * out.mean) * static_cast<double>(s.n) /
                     static_cast<double>(s.n - 1);
        if (var < 0.0) var = 0.0;
        out.se = std::sqrt(var / static_cast<double>(s.n));
      }
    }
  }
  return report;
}

std::optional<double> EfficiencyReport::coincidence_fraction() const {
  const std::uint64_t events = coincidences + alice_singles + bob_singles;
  if (events == 0) return std::nullopt;
  return static_cast<double>(coincidences) / static_cast<double>(events);
}

EfficiencyReport efficiency_audit(std::span<const TrialRecord> records,
                                  std::uint64_t alice_singles,
                                  std::uint64_t bob_singles) {
  EfficiencyReport report;
  report.coincidences = records.size();
  report.alice_singles = alice_singles;
  report.bob_singles = bob_singles;
  return report;
}

NoSignalingReport no_signaling_check(std::span<const TrialRecord> records) {
  // counts[station][own primed][outcome==+1][partner primed]
  std::uint64_t counts[2][2][2][2] = {};
  std::uint64_t pair_counts[2][2] = {};  // [alice primed][bob primed]
  for (const TrialRecord& rec : records) {
    check_outcome(rec.alice_outcome, CollectionMode::Switch);
    check_outcome(rec.bob_outcome, CollectionMode::Switch);
    const int ap = rec.alice_label.primed ? 1 : 0;
    const int bp = rec.bob_label.primed ? 1 : 0;
    ++pair_counts[ap][bp];
    ++counts[0][ap][rec.alice_outcome.value > 0 ? 1 : 0][bp];
    ++counts[1][bp][rec.bob_outcome.value > 0 ? 1 : 0][ap];
  }
  for (int ap = 0; ap < 2; ++ap)
    for (int bp = 0; bp < 2; ++bp)
      if (pair_counts[ap][bp] == 0)
        throw EmptyPairError({Station::Alice, ap != 0},
                             {Station::Bob, bp != 0});

  const std::uint64_t partner_totals[2][2] = {
      {pair_counts[0][0] + pair_counts[1][0],
       pair_counts[0][1] + pair_counts[1][1]},  // bob plain/primed seen by alice
      {pair_counts[0][0] + pair_counts[0][1],
       pair_counts[1][0] + pair_counts[1][1]},  // alice plain/primed seen by bob
  };

  NoSignalingReport report;
  report.pass = true;
  for (int st = 0; st < 2; ++st) {
    for (int pr = 0; pr < 2; ++pr) {
      for (int out = 0; out < 2; ++out) {
        NoSignalingRow row;
        row.label = {st == 0 ? Station::Alice : Station::Bob, pr != 0};
        row.outcome = out == 1 ? 1 : -1;
        row.n_partner_plain = partner_totals[st][0];
        row.n_partner_primed = partner_totals[st][1];
        const double n0 = static_cast<double>(row.n_partner_plain);
        const double n1 = static_cast<double>(row.n_partner_primed);
        row.rate_partner_plain =
            static_cast<double>(counts[st][pr][out][0]) / n0;
        row.rate_partner_primed =
            static_cast<double>(counts[st][pr][out][1]) / n1;
        row.diff = row.rate_partner_primed - row.rate_partner_plain;
        const double r0 = row.rate_partner_plain;
        const double r1 = row.rate_partner_primed;
        row.se = std::sqrt(r0 * (1.0 - r0) / n0 + r1 * (1.0 - r1) / n1);
        row.pass = row.se > 0.0 ? std::fabs(row.diff) <= 5.0 * row.se
                                : row.diff == 0.0;
        report.pass = report.pass && row.pass;
        report.rows.push_back(row);
      }
    }
  }
  return report;
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

namespace {

void csv_pair_row(std::string& out, std::string_view name, const PairStats& p,
                  CollectionMode mode) {
  out += name;
  out += ',';
  out += std::to_string(p.n);
  out += ',';
  out += format_double(p.corr);
  out += ',';
  out += format_double(p.se);
  out += ',';
  out += to_string(mode);
  out += '\n';
}

}  // namespace

std::string correlation_table_csv(const ChshResult& result) {
  std::string out = "pair,n,corr,se,mode\n";
  csv_pair_row(out, "AB", result.ab, result.mode);
  csv_pair_row(out, "AB'", result.ab_prime, result.mode);
  csv_pair_row(out, "A'B", result.a_prime_b, result.mode);
  csv_pair_row(out, "A'B'", result.a_prime_b_prime, result.mode);
  PairStats bell;
  bell.n = result.total;
  bell.corr = result.bell;
  bell.se = result.se;
  csv_pair_row(out, "bell", bell, result.mode);
  return out;
}

std::string correlation_table_json(const ChshResult& result) {
  nlohmann::ordered_json j;
  auto pair = [](const PairStats& p) {
    nlohmann::ordered_json o;
    o["n"] = p.n;
    o["corr"] = p.corr;
    o["se"] = p.se;
    return o;
  };
  j["pairs"]["AB"] = pair(result.ab);
  j["pairs"]["AB'"] = pair(result.ab_prime);
  j["pairs"]["A'B"] = pair(result.a_prime_b);
  j["pairs"]["A'B'"] = pair(result.a_prime_b_prime);
  j["bell"] = result.bell;
  j["se"] = result.se;
  j["total"] = result.total;
  j["mode"] = to_string(result.mode);
  return j.dump();
}

}  // namespace bellsim
