#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bellsim/aerts.hpp"
#include "bellsim/chessboard.hpp"
#include "bellsim/core.hpp"
#include "bellsim/harness.hpp"
#include "bellsim/net.hpp"
#include "bellsim/rng.hpp"
#include "bellsim/stats.hpp"

namespace {

using namespace bellsim;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitAudit = 4;
constexpr int kExitStatistical = 5;

void write_output(const std::string& path, const std::string& content) {
  if (path.empty()) {
    std::cout << content;
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open output file: " + path);
  out << content;
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

// Loads a pattern and enforces the full statistical contract, printing the
// violated constraints before failing.
HolePattern load_pattern(const std::string& source) {
  HolePattern pattern = source == "canonical" ? HolePattern::canonical()
                                              : HolePattern::load_file(source);
  const PatternReport report = validate_pattern(pattern);
  if (!report.ok()) {
    std::string msg = "pattern '" + source + "' violates the contract:";
    for (const std::string& v : report.violations) msg += "\n  " + v;
    throw std::invalid_argument(msg);
  }
  return pattern;
}

double probability_flag(const std::string& text, const char* name) {
  const mpq_class q = rational_from_decimal(text);  // rejects junk
  const double p = double_from_rational(q);
  if (p < 0.0 || p > 1.0)
    throw std::invalid_argument(std::string(name) + " outside [0,1]");
  return p;
}

// "pi", "pi/6", "2pi/3", "5pi/6" or a plain decimal.
double parse_theta(const std::string& raw) {
  const std::size_t pi_pos = raw.find("pi");
  if (pi_pos == std::string::npos) {
    std::size_t pos = 0;
    const double v = std::stod(raw, &pos);
    if (pos != raw.size())
      throw std::invalid_argument("bad angle: " + raw);
    return v;
  }
  const std::string pre = raw.substr(0, pi_pos);
  const std::string post = raw.substr(pi_pos + 2);
  double num = 1.0;
  if (!pre.empty()) {
    std::size_t pos = 0;
    num = std::stod(pre, &pos);
    if (pos != pre.size()) throw std::invalid_argument("bad angle: " + raw);
  }
  double den = 1.0;
  if (!post.empty()) {
    if (post[0] != '/') throw std::invalid_argument("bad angle: " + raw);
    std::size_t pos = 0;
    den = std::stod(post.substr(1), &pos);
    if (pos != post.size() - 1 || den == 0.0)
      throw std::invalid_argument("bad angle: " + raw);
  }
  return num * std::numbers::pi / den;
}

std::vector<double> parse_theta_list(const std::string& raw) {
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) out.push_back(parse_theta(token));
  }
  if (out.empty()) throw std::invalid_argument("empty angle list");
  return out;
}

ChshResult exact_as_result(const ExactCorrelations& exact,
                           CollectionMode mode) {
  ChshResult res;
  res.mode = mode;
  res.ab.corr = double_from_rational(exact.ab);
  res.ab_prime.corr = double_from_rational(exact.ab_prime);
  res.a_prime_b.corr = double_from_rational(exact.a_prime_b);
  res.a_prime_b_prime.corr = double_from_rational(exact.a_prime_b_prime);
  res.bell = double_from_rational(exact.bell);
  return res;
}

std::string one_arm_csv(const OneArmReport& rep) {
  std::string out = "label,n,mean,se\n";
  auto row = [&](std::string_view name, const LabelMean& m) {
    out += std::string(name) + "," + std::to_string(m.n) + "," +
           format_double(m.mean) + "," + format_double(m.se) + "\n";
  };
  row("A", rep.a);
  row("A'", rep.a_prime);
  row("B", rep.b);
  row("B'", rep.b_prime);
  return out;
}

std::string efficiency_csv(const EfficiencyReport& rep) {
  std::string out = "coincidences,alice_singles,bob_singles,fraction\n";
  out += std::to_string(rep.coincidences) + "," +
         std::to_string(rep.alice_singles) + "," +
         std::to_string(rep.bob_singles) + ",";
  const auto frac = rep.coincidence_fraction();
  out += frac ? format_double(*frac) : std::string("nan");
  out += "\n";
  return out;
}

std::string no_signaling_csv(const NoSignalingReport& rep) {
  std::string out =
      "label,outcome,rate_partner_plain,rate_partner_primed,diff,se,pass\n";
  for (const NoSignalingRow& row : rep.rows) {
    out += std::string(to_string(row.label)) + "," +
           std::to_string(row.outcome) + "," +
           format_double(row.rate_partner_plain) + "," +
           format_double(row.rate_partner_primed) + "," +
           format_double(row.diff) + "," + format_double(row.se) + "," +
           (row.pass ? "true" : "false") + "\n";
  }
  out += std::string("overall,,,,,,") + (rep.pass ? "true" : "false") + "\n";
  return out;
}

nlohmann::ordered_json one_arm_json(const OneArmReport& rep) {
  nlohmann::ordered_json j;
  auto entry = [](const LabelMean& m) {
    nlohmann::ordered_json o;
    o["n"] = m.n;
    o["mean"] = m.mean;
    o["se"] = m.se;
    return o;
  };
  j["A"] = entry(rep.a);
  j["A'"] = entry(rep.a_prime);
  j["B"] = entry(rep.b);
  j["B'"] = entry(rep.b_prime);
  return j;
}

nlohmann::ordered_json efficiency_json(const EfficiencyReport& rep) {
  nlohmann::ordered_json j;
  j["coincidences"] = rep.coincidences;
  j["alice_singles"] = rep.alice_singles;
  j["bob_singles"] = rep.bob_singles;
  const auto frac = rep.coincidence_fraction();
  if (frac)
    j["fraction"] = *frac;
  else
    j["fraction"] = nullptr;
  return j;
}

nlohmann::ordered_json no_signaling_json(const NoSignalingReport& rep) {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const NoSignalingRow& row : rep.rows) {
    nlohmann::ordered_json o;
    o["label"] = to_string(row.label);
    o["outcome"] = row.outcome;
    o["rate_partner_plain"] = row.rate_partner_plain;
    o["rate_partner_primed"] = row.rate_partner_primed;
    o["diff"] = row.diff;
    o["se"] = row.se;
    o["pass"] = row.pass;
    j["rows"].push_back(o);
  }
  j["pass"] = rep.pass;
  return j;
}

std::string run_summary(const ChshResult& chsh, const OneArmReport& one_arm,
                        const EfficiencyReport& eff,
                        const NoSignalingReport& nosig,
                        const std::string& format) {
  if (format == "json") {
    nlohmann::ordered_json j;
    j["chsh"] = nlohmann::ordered_json::parse(correlation_table_json(chsh));
    j["one_arm"] = one_arm_json(one_arm);
    j["efficiency"] = efficiency_json(eff);
    j["no_signaling"] = no_signaling_json(nosig);
    return j.dump() + "\n";
  }
  std::string out = correlation_table_csv(chsh);
  out += "\n" + one_arm_csv(one_arm);
  out += "\n" + efficiency_csv(eff);
  out += "\n" + no_signaling_csv(nosig);
  return out;
}

int cmd_exact(const std::string& pattern_src, const std::string& pa,
              const std::string& pb, const std::string& mode_text,
              const std::string& format, const std::string& output) {
  const HolePattern pattern = load_pattern(pattern_src);
  const CollectionMode mode = collection_mode_from_string(mode_text);
  const mpq_class qa = rational_from_decimal(pa);
  const mpq_class qb = rational_from_decimal(pb);
  ExactCorrelations exact;
  switch (mode) {
    case CollectionMode::Switch:
      exact = chsh_exact(pattern, qa, qb);
      break;
    case CollectionMode::ExtendedDomain:
      exact = chsh_extended_domain(pattern);
      break;
    case CollectionMode::ZeroExtended:
      exact = chsh_zero_extended(pattern, qa, qb);
      break;
  }
  const ChshResult res = exact_as_result(exact, mode);
  if (format == "json")
    write_output(output, correlation_table_json(res) + "\n");
  else
    write_output(output, correlation_table_csv(res));
  return kExitOk;
}

int cmd_simulate(const std::string& pattern_src, const std::string& pa,
                 const std::string& pb, std::uint64_t trials,
                 std::uint64_t seed, const std::string& mode_text,
                 const std::string& records_path, bool debug_lambda,
                 const std::string& format, const std::string& output) {
  const HolePattern pattern = load_pattern(pattern_src);
  SimulateOptions options;
  options.policy.p_a = probability_flag(pa, "--pa");
  options.policy.p_b = probability_flag(pb, "--pb");
  options.n_trials = trials;
  options.seeds = SeedPack::derive(seed);
  options.mode = collection_mode_from_string(mode_text);
  options.keep_lambda = debug_lambda;

  std::ofstream records_out;
  if (!records_path.empty()) {
    records_out.open(records_path);
    if (!records_out) throw IoError("cannot open record file: " + records_path);
  }

  std::vector<TrialRecord> records;
  records.reserve(trials);
  simulate(pattern, options, [&](const TrialRecord& rec) {
    if (records_out.is_open())
      records_out << to_json_line(rec, debug_lambda) << '\n';
    records.push_back(rec);
  });
  if (records_out.is_open()) {
    records_out.flush();
    if (!records_out) throw IoError("write failed: " + records_path);
  }

  const ChshResult chsh = estimate(records, options.mode);
  const OneArmReport one_arm = one_arm_averages(records);
  const EfficiencyReport eff = efficiency_audit(records);
  const NoSignalingReport nosig = no_signaling_check(records);
  write_output(output, run_summary(chsh, one_arm, eff, nosig, format));
  return kExitOk;
}

int cmd_sweep(const std::string& pattern_src, unsigned steps,
              std::uint64_t mc_trials, std::uint64_t seed,
              const std::string& output) {
  const HolePattern pattern = load_pattern(pattern_src);
  if (steps < 2) throw std::invalid_argument("--steps must be at least 2");
  std::string out = "pa,pb,bell_exact,bell_mc,se,violating\n";
  const unsigned last = steps - 1;
  std::uint64_t point = 0;
  for (unsigned i = 0; i < steps; ++i) {
    for (unsigned j = 0; j < steps; ++j, ++point) {
      mpq_class qa(i, last);
      mpq_class qb(j, last);
      qa.canonicalize();
      qb.canonicalize();
      const ExactCorrelations exact = chsh_exact(pattern, qa, qb);
      SimulateOptions options;
      options.policy.p_a = double_from_rational(qa);
      options.policy.p_b = double_from_rational(qb);
      options.n_trials = mc_trials;
      options.seeds = SeedPack::derive(derive_seed(seed, point));
      const std::vector<TrialRecord> records = simulate(pattern, options);
      const ChshResult mc = estimate(records, CollectionMode::Switch);
      const bool violating = exact.bell > 2 || exact.bell < -2;
      out += format_double(double_from_rational(qa)) + "," +
             format_double(double_from_rational(qb)) + "," +
             format_double(double_from_rational(exact.bell)) + "," +
             format_double(mc.bell) + "," + format_double(mc.se) + "," +
             (violating ? "true" : "false") + "\n";
    }
  }
  write_output(output, out);
  return kExitOk;
}

int cmd_aerts(const std::string& theta_list, std::uint64_t trials,
              std::uint64_t seed, const std::string& output) {
  const std::vector<double> thetas = parse_theta_list(theta_list);
  std::string out =
      "theta,n,seq_conditional,seq_conditional_se,seq_joint,seq_joint_se,"
      "malus,cf_joint,cf_mc,cf_mc_se\n";
  for (std::size_t k = 0; k < thetas.size(); ++k) {
    const double theta = thetas[k];
    const SequentialReport seq =
        sequential_run(theta, trials, derive_seed(seed, 2 * k));
    const CounterfactualJointReport cf =
        counterfactual_joint_mc(theta, trials, derive_seed(seed, 2 * k + 1));
    out += format_double(theta) + "," + std::to_string(trials) + "," +
           format_double(seq.conditional_rate) + "," +
           format_double(seq.conditional_se) + "," +
           format_double(seq.joint_rate) + "," +
           format_double(seq.joint_se) + "," +
           format_double(seq.predicted_conditional) + "," +
           format_double(cf.predicted) + "," + format_double(cf.rate) + "," +
           format_double(cf.se) + "\n";
  }
  write_output(output, out);
  return kExitOk;
}

int cmd_serve(const std::string& role_text, const RunConfig& config,
              const std::string& records_path,
              const std::string& transcript_path, const std::string& format,
              const std::string& output) {
  const Role role = role_from_string(role_text);
  std::optional<Transcript> transcript;
  if (!transcript_path.empty()) transcript.emplace(transcript_path);
  Transcript* t = transcript ? &*transcript : nullptr;

  switch (role) {
    case Role::Source: {
      const SourceSummary s = run_source(config, t);
      std::cerr << "source: sent " << s.trials_sent << " trials\n";
      return kExitOk;
    }
    case Role::Alice:
    case Role::Bob: {
      const StationSummary s = run_station(config, role, t);
      std::cerr << to_string(role) << ": processed " << s.processed
                << ", rejected " << s.rejected << "\n";
      return kExitOk;
    }
    case Role::Collector: {
      const CollectorSummary s = run_collector(config, records_path, t);
      const OneArmReport one_arm = one_arm_averages(s.records);
      const NoSignalingReport nosig = no_signaling_check(s.records);
      write_output(output,
                   run_summary(s.chsh, one_arm, s.efficiency, nosig, format));
      for (const std::string& err : s.protocol_errors)
        std::cerr << "collector: protocol error: " << err << "\n";
      return s.flagged ? kExitRuntime : kExitOk;
    }
  }
  return kExitRuntime;
}

int cmd_audit(const std::vector<std::string>& paths,
              const std::string& output) {
  const AuditVerdict verdict = audit_run(paths);
  std::string out;
  if (verdict.pass) {
    out = "audit: pass\n";
  } else {
    out = "audit: fail\n";
    for (const std::string& v : verdict.violations)
      out += "  " + v + "\n";
  }
  write_output(output, out);
  return verdict.pass ? kExitOk : kExitAudit;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Simulator and exact calculator for classical hidden-variable models "
      "of the CHSH experiment"};
  app.require_subcommand(1);

  std::string pattern_src = "canonical";
  std::string pa = "0.5", pb = "0.5";
  std::uint64_t trials = 100000;
  std::uint64_t seed = 0;
  std::string mode_text = "switch";
  std::string format = "csv";
  std::string output;
  std::string records_path;
  bool debug_lambda = false;

  auto add_common = [&](CLI::App* cmd, bool with_policy) {
    cmd->add_option("--pattern", pattern_src,
                    "'canonical' or a pattern file of 8 'i j' cells");
    if (with_policy) {
      cmd->add_option("--pa", pa, "Alice switch probability (decimal)");
      cmd->add_option("--pb", pb, "Bob switch probability (decimal)");
    }
    cmd->add_option("-o,--output", output, "output file (default stdout)");
    cmd->add_option("--format", format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
  };

  CLI::App* exact = app.add_subcommand(
      "exact", "Exact correlations and Bell value by cell enumeration");
  add_common(exact, true);
  exact->add_option("--mode", mode_text, "switch, extended, or zero")
      ->check(CLI::IsMember({"switch", "extended", "zero"}));

  CLI::App* simulate_cmd = app.add_subcommand(
      "simulate", "Monte Carlo trial stream with full statistics");
  add_common(simulate_cmd, true);
  simulate_cmd->add_option("--trials", trials, "number of trials");
  simulate_cmd->add_option("--seed", seed, "master seed");
  simulate_cmd->add_option("--mode", mode_text, "switch, extended, or zero")
      ->check(CLI::IsMember({"switch", "extended", "zero"}));
  simulate_cmd->add_option("--records", records_path,
                           "write trial records to this file");
  simulate_cmd->add_flag("--debug-lambda", debug_lambda,
                         "include hidden variables in records");

  unsigned sweep_steps = 11;
  std::uint64_t mc_trials = 20000;
  CLI::App* sweep = app.add_subcommand(
      "sweep", "Grid sweep of exact and Monte Carlo Bell values");
  add_common(sweep, false);
  sweep->add_option("--steps", sweep_steps,
                    "grid points per axis over [0,1], inclusive");
  sweep->add_option("--mc-trials", mc_trials, "Monte Carlo trials per point");
  sweep->add_option("--seed", seed, "master seed");

  std::string theta_list = "0,pi/6,pi/3,pi/2,2pi/3,5pi/6,pi";
  CLI::App* aerts = app.add_subcommand(
      "aerts", "Circle-model sequential and counterfactual statistics");
  aerts->add_option("--theta", theta_list,
                    "comma-separated angles; accepts forms like pi/6, 2pi/3");
  aerts->add_option("--trials", trials, "trials per angle");
  aerts->add_option("--seed", seed, "master seed");
  aerts->add_option("-o,--output", output, "output file (default stdout)");

  std::string role_text;
  std::string alice_ep = "127.0.0.1:9101";
  std::string bob_ep = "127.0.0.1:9102";
  std::string collector_ep = "127.0.0.1:9103";
  std::string source_ep;
  std::string transcript_path;
  std::uint64_t ack_every = 10000;
  std::uint64_t max_in_flight = 20000;
  CLI::App* serve =
      app.add_subcommand("serve", "Run one role of the distributed harness");
  serve->add_option("--role", role_text, "source, alice, bob, or collector")
      ->required()
      ->check(CLI::IsMember({"source", "alice", "bob", "collector"}));
  add_common(serve, true);
  serve->add_option("--trials", trials, "number of trials");
  serve->add_option("--seed", seed, "master seed (same for every role)");
  serve->add_option("--mode", mode_text, "switch, extended, or zero")
      ->check(CLI::IsMember({"switch", "extended", "zero"}));
  serve->add_option("--alice", alice_ep, "Alice endpoint host:port")
      ->envname("HARNESS_ALICE");
  serve->add_option("--bob", bob_ep, "Bob endpoint host:port")
      ->envname("HARNESS_BOB");
  serve->add_option("--collector", collector_ep, "collector endpoint host:port")
      ->envname("HARNESS_COLLECTOR");
  serve->add_option("--source", source_ep,
                    "source endpoint host:port (reserved, unused)")
      ->envname("HARNESS_SOURCE");
  serve->add_option("--records", records_path,
                    "collector: write trial records to this file");
  serve->add_option("--transcript", transcript_path,
                    "write this role's message transcript to a file");
  serve->add_option("--ack-every", ack_every,
                    "collector ack cadence in completed trials");
  serve->add_option("--max-in-flight", max_in_flight,
                    "source high-water mark for unacked trials");

  std::vector<std::string> audit_paths;
  CLI::App* audit =
      app.add_subcommand("audit", "Locality audit over run transcripts");
  audit->add_option("transcripts", audit_paths, "transcript files")
      ->required()
      ->expected(-1);
  audit->add_option("-o,--output", output, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand(exact))
      return cmd_exact(pattern_src, pa, pb, mode_text, format, output);
    if (app.got_subcommand(simulate_cmd))
      return cmd_simulate(pattern_src, pa, pb, trials, seed, mode_text,
                          records_path, debug_lambda, format, output);
    if (app.got_subcommand(sweep))
      return cmd_sweep(pattern_src, sweep_steps, mc_trials, seed, output);
    if (app.got_subcommand(aerts))
      return cmd_aerts(theta_list, trials, seed, output);
    if (app.got_subcommand(serve)) {
      RunConfig config;
      config.pattern = load_pattern(pattern_src);
      config.policy.p_a = probability_flag(pa, "--pa");
      config.policy.p_b = probability_flag(pb, "--pb");
      config.n_trials = trials;
      config.seeds = SeedPack::derive(seed);
      config.mode = collection_mode_from_string(mode_text);
      config.alice = net::parse_endpoint(alice_ep);
      config.bob = net::parse_endpoint(bob_ep);
      config.collector = net::parse_endpoint(collector_ep);
      config.ack_every = ack_every;
      config.max_in_flight = max_in_flight;
      return cmd_serve(role_text, config, records_path, transcript_path,
                       format, output);
    }
    if (app.got_subcommand(audit)) return cmd_audit(audit_paths, output);
  } catch (const EmptyPairError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStatistical;
  } catch (const MissingLabelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStatistical;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
