#include "bellsim/chessboard.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>

namespace bellsim {

namespace {

// Quadrant index along one axis: 0 for bands {0,1} (closed drawer, primed
// label), 1 for bands {2,3}.
int half(int band) { return band < 2 ? 0 : 1; }

// The contract fixes the outcome-product sign per quadrant: +1 everywhere
// except the high-high quadrant.
int expected_quadrant_sign(int qa, int qb) {
  return (qa == 1 && qb == 1) ? -1 : 1;
}

std::string cell_str(Cell c) {
  return "(" + std::to_string(c.i) + "," + std::to_string(c.j) + ")";
}

std::string quadrant_str(int qa, int qb) {
  return std::string(qa == 0 ? "a<=2" : "a>2") + "," +
         (qb == 0 ? "b<=2" : "b>2");
}

}  // namespace

int band_sign(int band) { return (band == 1 || band == 3) ? 1 : -1; }

std::string_view to_string(CollectionMode mode) {
  switch (mode) {
    case CollectionMode::Switch: return "switch";
    case CollectionMode::ExtendedDomain: return "extended";
    case CollectionMode::ZeroExtended: return "zero";
  }
  return "switch";
}

CollectionMode collection_mode_from_string(std::string_view text) {
  if (text == "switch") return CollectionMode::Switch;
  if (text == "extended") return CollectionMode::ExtendedDomain;
  if (text == "zero") return CollectionMode::ZeroExtended;
  throw std::invalid_argument("unknown collection mode: " + std::string(text));
}

HolePattern HolePattern::from_cells(std::vector<Cell> cells) {
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  HolePattern p;
  p.cells_ = std::move(cells);
  return p;
}

HolePattern HolePattern::canonical() {
  return from_cells({{0, 0}, {1, 1}, {0, 2}, {1, 3},
                     {2, 0}, {3, 1}, {2, 3}, {3, 2}});
}

HolePattern HolePattern::load(std::istream& in) {
  std::vector<Cell> cells;
  std::string tok_i, tok_j;
  while (in >> tok_i) {
    if (!(in >> tok_j))
      throw std::invalid_argument("pattern file: dangling value " + tok_i);
    try {
      std::size_t pos_i = 0, pos_j = 0;
      const int i = std::stoi(tok_i, &pos_i);
      const int j = std::stoi(tok_j, &pos_j);
      if (pos_i != tok_i.size() || pos_j != tok_j.size())
        throw std::invalid_argument("");
      cells.push_back({i, j});
    } catch (const std::exception&) {
      throw std::invalid_argument("pattern file: expected integer pair, got '" +
                                  tok_i + " " + tok_j + "'");
    }
  }
  return from_cells(std::move(cells));
}

HolePattern HolePattern::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("pattern file unreadable: " + path);
  return load(in);
}

bool HolePattern::contains(Cell c) const {
  return std::binary_search(cells_.begin(), cells_.end(), c);
}

bool HolePattern::well_formed() const {
  if (cells_.size() != 8) return false;
  int quad[2][2] = {};
  for (const Cell& c : cells_) {
    if (c.i < 0 || c.i > 3 || c.j < 0 || c.j > 3) return false;
    ++quad[half(c.i)][half(c.j)];
  }
  return quad[0][0] == 2 && quad[0][1] == 2 && quad[1][0] == 2 &&
         quad[1][1] == 2;
}

PatternReport validate_pattern(const HolePattern& pattern) {
  PatternReport report;
  const auto& cells = pattern.cells();

  if (cells.size() != 8)
    report.violations.push_back("cardinality: expected 8 cells, got " +
                                std::to_string(cells.size()));

  bool in_range = true;
  for (const Cell& c : cells) {
    if (c.i < 0 || c.i > 3 || c.j < 0 || c.j > 3) {
      report.violations.push_back("range: cell " + cell_str(c) +
                                  " outside the 4x4 board");
      in_range = false;
    }
  }
  if (!in_range || cells.size() != 8) return report;

  for (int qa = 0; qa < 2; ++qa) {
    for (int qb = 0; qb < 2; ++qb) {
      std::vector<Cell> members;
      for (const Cell& c : cells)
        if (half(c.i) == qa && half(c.j) == qb) members.push_back(c);

      const std::string q = quadrant_str(qa, qb);
      if (members.size() != 2) {
        report.violations.push_back("quadrant " + q + ": expected 2 cells, got " +
                                    std::to_string(members.size()));
        continue;
      }

      const int s0 = band_sign(members[0].i) * band_sign(members[0].j);
      const int s1 = band_sign(members[1].i) * band_sign(members[1].j);
      if (s0 != s1) {
        report.violations.push_back("quadrant " + q +
                                    ": outcome product sign not constant");
      } else if (s0 != expected_quadrant_sign(qa, qb)) {
        report.violations.push_back(
            "quadrant " + q + ": outcome product sign " +
            (s0 > 0 ? std::string("+1") : std::string("-1")) + ", expected " +
            (expected_quadrant_sign(qa, qb) > 0 ? "+1" : "-1"));
      }

      if (band_sign(members[0].i) + band_sign(members[1].i) != 0)
        report.violations.push_back("quadrant " + q +
                                    ": alice outcome signs do not split +1/-1");
      if (band_sign(members[0].j) + band_sign(members[1].j) != 0)
        report.violations.push_back("quadrant " + q +
                                    ": bob outcome signs do not split +1/-1");
    }
  }
  return report;
}

HolePattern random_well_formed_pattern(StreamRng& rng) {
  std::vector<Cell> cells;
  for (int qa = 0; qa < 2; ++qa) {
    for (int qb = 0; qb < 2; ++qb) {
      const std::uint64_t first = rng.uniform_below(4);
      std::uint64_t second = rng.uniform_below(3);
      if (second >= first) ++second;
      for (std::uint64_t pick : {first, second}) {
        const int di = static_cast<int>(pick / 2);
        const int dj = static_cast<int>(pick % 2);
        cells.push_back({2 * qa + di, 2 * qb + dj});
      }
    }
  }
  return HolePattern::from_cells(std::move(cells));
}

namespace {

void check_coord(double coord) {
  if (!std::isfinite(coord) || coord < 0.0 || coord > 4.0)
    throw std::invalid_argument("coordinate outside [0,4]");
}

// Band of a coordinate under the intervals [0,1], (1,2], (2,3], (3,4].
int coord_band(double coord) {
  check_coord(coord);
  if (coord <= 1.0) return 0;
  return static_cast<int>(std::ceil(coord)) - 1;
}

}  // namespace

SettingLabel base_label(Station station, double coord) {
  check_coord(coord);
  return {station, coord <= 2.0};
}

Outcome coordinate_outcome(Station station, double coord) {
  (void)station;  // both stations share the band rule
  return Outcome{band_sign(coord_band(coord))};
}

SettingLabel apply_switch(SettingLabel label, bool fired) {
  if (fired) label.primed = !label.primed;
  return label;
}

HiddenVariable sample_lambda(StreamRng& rng, const HolePattern& pattern) {
  if (!pattern.well_formed())
    throw std::invalid_argument("sample_lambda: pattern is not well formed");
  const Cell c = pattern.cells()[rng.uniform_below(8)];
  // Offsets in (0,1] keep the coordinate inside the cell's half-open band.
  const double a = c.i + (1.0 - rng.uniform01());
  const double b = c.j + (1.0 - rng.uniform01());
  return {a, b};
}

TrialRecord run_trial(std::uint64_t trial_id, const HiddenVariable& lambda,
                      bool alice_fired, bool bob_fired, bool keep_lambda) {
  const SettingLabel a_label =
      apply_switch(base_label(Station::Alice, lambda.a), alice_fired);
  const SettingLabel b_label =
      apply_switch(base_label(Station::Bob, lambda.b), bob_fired);
  TrialRecord rec = make_trial_record(
      trial_id, a_label, coordinate_outcome(Station::Alice, lambda.a), b_label,
      coordinate_outcome(Station::Bob, lambda.b));
  if (keep_lambda) rec.lambda = lambda;
  return rec;
}

void simulate(const HolePattern& pattern, const SimulateOptions& options,
              const std::function<void(const TrialRecord&)>& sink) {
  check_policy(options.policy);
  if (options.n_trials == 0)
    throw std::invalid_argument("simulate: n_trials must be at least 1");
  if (!pattern.well_formed())
    throw std::invalid_argument("simulate: pattern is not well formed");

  StreamRng lambda_rng(options.seeds.lambda);
  StreamRng alice_rng(options.seeds.alice);
  StreamRng bob_rng(options.seeds.bob);

  for (std::uint64_t t = 0; t < options.n_trials; ++t) {
    const HiddenVariable lambda = sample_lambda(lambda_rng, pattern);
    const bool alice_draw = alice_rng.bernoulli(options.policy.p_a);
    const bool bob_draw = bob_rng.bernoulli(options.policy.p_b);

    if (options.mode == CollectionMode::ExtendedDomain) {
      // Settings are the observers' free choices; outcomes are the sign
      // functions, defined for every lambda.
      TrialRecord rec = make_trial_record(
          t, SettingLabel{Station::Alice, alice_draw},
          coordinate_outcome(Station::Alice, lambda.a),
          SettingLabel{Station::Bob, bob_draw},
          coordinate_outcome(Station::Bob, lambda.b));
      if (options.keep_lambda) rec.lambda = lambda;
      sink(rec);
    } else {
      sink(run_trial(t, lambda, alice_draw, bob_draw, options.keep_lambda));
    }
  }
}

std::vector<TrialRecord> simulate(const HolePattern& pattern,
                                  const SimulateOptions& options) {
  std::vector<TrialRecord> out;
  out.reserve(options.n_trials);
  simulate(pattern, options, [&](const TrialRecord& r) { out.push_back(r); });
  return out;
}

namespace {

// GMP comparisons and arithmetic assume canonical operands; callers may hand
// over fractions like 2/10, so reduce before touching them.
mpq_class canonical(mpq_class q) {
  q.canonicalize();
  return q;
}

void check_probability(const mpq_class& p, const char* name) {
  if (p < 0 || p > 1)
    throw std::invalid_argument(std::string(name) + " outside [0,1]");
}

void check_enumerable(const HolePattern& pattern) {
  if (!pattern.well_formed())
    throw std::invalid_argument("enumeration: pattern is not well formed");
}

struct PairSums {
  // Indexed [alice primed][bob primed]; mass is the setting-pair probability,
  // signed_sum is E[product * indicator(pair)].
  mpq_class mass[2][2];
  mpq_class signed_sum[2][2];
};

PairSums enumerate_pairs(const HolePattern& pattern, const mpq_class& p_a,
                         const mpq_class& p_b) {
  PairSums sums;
  const mpq_class cell_mass(1, 8);
  for (const Cell& c : pattern.cells()) {
    const int base_primed_a = half(c.i) == 0 ? 1 : 0;
    const int base_primed_b = half(c.j) == 0 ? 1 : 0;
    const int product = band_sign(c.i) * band_sign(c.j);
    for (int fa = 0; fa < 2; ++fa) {
      for (int fb = 0; fb < 2; ++fb) {
        const mpq_class wa = (fa == base_primed_a) ? 1 - p_a : p_a;
        const mpq_class wb = (fb == base_primed_b) ? 1 - p_b : p_b;
        const mpq_class w = cell_mass * wa * wb;
        sums.mass[fa][fb] += w;
        sums.signed_sum[fa][fb] += product * w;
      }
    }
  }
  return sums;
}

SettingLabel pair_label(Station station, int primed) {
  return {station, primed != 0};
}

ExactCorrelations combine(const mpq_class& ab, const mpq_class& ab_prime,
                          const mpq_class& a_prime_b,
                          const mpq_class& a_prime_b_prime) {
  ExactCorrelations out;
  out.ab = ab;
  out.ab_prime = ab_prime;
  out.a_prime_b = a_prime_b;
  out.a_prime_b_prime = a_prime_b_prime;
  out.bell = ab + ab_prime + a_prime_b - a_prime_b_prime;
  return out;
}

}  // namespace

ExactCorrelations chsh_exact(const HolePattern& pattern, const mpq_class& p_a,
                             const mpq_class& p_b) {
  check_enumerable(pattern);
  const mpq_class pa = canonical(p_a);
  const mpq_class pb = canonical(p_b);
  check_probability(pa, "p_a");
  check_probability(pb, "p_b");
  const PairSums sums = enumerate_pairs(pattern, pa, pb);
  mpq_class corr[2][2];
  for (int fa = 0; fa < 2; ++fa) {
    for (int fb = 0; fb < 2; ++fb) {
      if (sums.mass[fa][fb] == 0)
        throw EmptyPairError(pair_label(Station::Alice, fa),
                             pair_label(Station::Bob, fb));
      corr[fa][fb] = sums.signed_sum[fa][fb] / sums.mass[fa][fb];
    }
  }
  return combine(corr[0][0], corr[0][1], corr[1][0], corr[1][1]);
}

ExactCorrelations chsh_extended_domain(const HolePattern& pattern) {
  check_enumerable(pattern);
  mpq_class c;
  const mpq_class cell_mass(1, 8);
  for (const Cell& cell : pattern.cells())
    c += cell_mass * (band_sign(cell.i) * band_sign(cell.j));
  return combine(c, c, c, c);
}

ExactCorrelations chsh_zero_extended(const HolePattern& pattern,
                                     const mpq_class& p_a,
                                     const mpq_class& p_b) {
  check_enumerable(pattern);
  const mpq_class pa = canonical(p_a);
  const mpq_class pb = canonical(p_b);
  check_probability(pa, "p_a");
  check_probability(pb, "p_b");
  const PairSums sums = enumerate_pairs(pattern, pa, pb);
  return combine(sums.signed_sum[0][0], sums.signed_sum[0][1],
                 sums.signed_sum[1][0], sums.signed_sum[1][1]);
}

std::array<mpq_class, 4> one_arm_exact(const HolePattern& pattern,
                                       const mpq_class& p_a,
                                       const mpq_class& p_b) {
  check_enumerable(pattern);
  const mpq_class pa = canonical(p_a);
  const mpq_class pb = canonical(p_b);
  check_probability(pa, "p_a");
  check_probability(pb, "p_b");
  mpq_class mass[2][2];        // [station][final primed]
  mpq_class signed_sum[2][2];
  const mpq_class cell_mass(1, 8);
  for (const Cell& c : pattern.cells()) {
    const int base_primed[2] = {half(c.i) == 0 ? 1 : 0, half(c.j) == 0 ? 1 : 0};
    const int sign[2] = {band_sign(c.i), band_sign(c.j)};
    const mpq_class p[2] = {pa, pb};
    for (int st = 0; st < 2; ++st) {
      for (int f = 0; f < 2; ++f) {
        const mpq_class w =
            cell_mass * ((f == base_primed[st]) ? 1 - p[st] : p[st]);
        mass[st][f] += w;
        signed_sum[st][f] += sign[st] * w;
      }
    }
  }
  std::array<mpq_class, 4> out;  // A, A', B, B'
  for (int st = 0; st < 2; ++st) {
    for (int f = 0; f < 2; ++f) {
      const Station station = st == 0 ? Station::Alice : Station::Bob;
      if (mass[st][f] == 0) throw MissingLabelError(pair_label(station, f));
      out[2 * st + f] = signed_sum[st][f] / mass[st][f];
    }
  }
  return out;
}

mpq_class rational_from_decimal(std::string_view text) {
  std::size_t pos = 0;
  bool negative = false;
  if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
    negative = text[pos] == '-';
    ++pos;
  }
  std::string digits;
  std::size_t frac_digits = 0;
  bool seen_digit = false, seen_dot = false;
  for (; pos < text.size(); ++pos) {
    const char ch = text[pos];
    if (ch >= '0' && ch <= '9') {
      digits.push_back(ch);
      seen_digit = true;
      if (seen_dot) ++frac_digits;
    } else if (ch == '.' && !seen_dot) {
      seen_dot = true;
    } else {
      throw std::invalid_argument("not a decimal number: " + std::string(text));
    }
  }
  if (!seen_digit)
    throw std::invalid_argument("not a decimal number: " + std::string(text));
  mpz_class num(digits.empty() ? "0" : digits, 10);
  if (negative) num = -num;
  mpz_class den;
  mpz_ui_pow_ui(den.get_mpz_t(), 10, frac_digits);
  mpq_class q(num, den);
  q.canonicalize();
  return q;
}

mpq_class rational_from_double(double x) {
  if (!std::isfinite(x))
    throw std::invalid_argument("cannot convert non-finite double to rational");
  mpq_class q;
  mpq_set_d(q.get_mpq_t(), x);
  return q;
}

double double_from_rational(const mpq_class& q) {
  const mpq_class v = canonical(q);
  const double lo = v.get_d();  // truncated toward zero
  if (!std::isfinite(lo)) return lo;
  const mpq_class exact_lo = rational_from_double(lo);
  if (exact_lo == v) return lo;
  const double away = v < 0 ? -std::numeric_limits<double>::infinity()
                            : std::numeric_limits<double>::infinity();
  const double hi = std::nextafter(lo, away);
  if (!std::isfinite(hi)) return lo;
  const mpq_class d_lo = abs(v - exact_lo);
  const mpq_class d_hi = abs(rational_from_double(hi) - v);
  if (d_lo < d_hi) return lo;
  if (d_hi < d_lo) return hi;
  return (std::bit_cast<std::uint64_t>(lo) & 1u) == 0 ? lo : hi;
}

}  // namespace bellsim
