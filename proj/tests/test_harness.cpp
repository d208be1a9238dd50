#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "bellsim/harness.hpp"

using namespace bellsim;
namespace fs = std::filesystem;

namespace {

RunConfig base_config(std::uint64_t n = 1000) {
  RunConfig config;
  config.pattern = HolePattern::canonical();
  config.policy = {0.9, 0.9};
  config.n_trials = n;
  config.seeds = SeedPack::derive(4242);
  config.alice = {"127.0.0.1", 11111};
  config.bob = {"127.0.0.1", 11112};
  config.collector = {"127.0.0.1", 11113};
  return config;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bellsim_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("roles round-trip through their names") {
  for (const Role r :
       {Role::Source, Role::Alice, Role::Bob, Role::Collector})
    CHECK(role_from_string(to_string(r)) == r);
  CHECK_THROWS_AS(role_from_string("station"), std::invalid_argument);
}

TEST_CASE("run configurations are validated") {
  CHECK_NOTHROW(check_run_config(base_config()));

  RunConfig bad = base_config();
  bad.n_trials = 0;
  CHECK_THROWS_AS(check_run_config(bad), std::invalid_argument);

  bad = base_config();
  bad.pattern = HolePattern::from_cells({{0, 0}});
  CHECK_THROWS_AS(check_run_config(bad), std::invalid_argument);

  bad = base_config();
  bad.policy.p_a = 1.5;
  CHECK_THROWS_AS(check_run_config(bad), std::invalid_argument);

  bad = base_config();
  bad.bob = bad.alice;
  CHECK_THROWS_AS(check_run_config(bad), std::invalid_argument);

  bad = base_config();
  bad.max_in_flight = bad.ack_every - 1;
  CHECK_THROWS_AS(check_run_config(bad), std::invalid_argument);
}

TEST_CASE("the config hash says when two runs describe the same experiment") {
  const RunConfig a = base_config();
  CHECK(config_hash(a) == config_hash(base_config()));
  RunConfig b = base_config();
  b.n_trials += 1;
  CHECK(config_hash(a) != config_hash(b));
  b = base_config();
  b.policy.p_b = 0.8;
  CHECK(config_hash(a) != config_hash(b));
  b = base_config();
  b.seeds.lambda ^= 1;
  CHECK(config_hash(a) != config_hash(b));
  b = base_config();
  b.mode = CollectionMode::ZeroExtended;
  CHECK(config_hash(a) != config_hash(b));
  b = base_config();
  b.collector.port = 1;  // endpoints are deployment detail, not identity
  CHECK(config_hash(a) == config_hash(b));
}

TEST_CASE("wire messages render to stable lines and parse back") {
  CHECK(ball_line(7, 2.5) == R"({"type":"ball","trial":7,"coord":2.5})");
  CHECK(result_line(3, Station::Alice, {Station::Alice, true}, {-1}) ==
        R"({"type":"result","trial":3,"station":"A","label":"A'","outcome":-1})");
  CHECK(end_line() == R"({"type":"end"})");

  WireMessage m = parse_wire(ball_line(7, 2.5));
  CHECK(m.type == WireMessage::Type::Ball);
  CHECK(m.trial == 7);
  CHECK(m.coord == 2.5);

  m = parse_wire(result_line(3, Station::Bob, {Station::Bob, false}, {1}));
  CHECK(m.type == WireMessage::Type::Result);
  CHECK(m.station == Station::Bob);
  CHECK(m.label == SettingLabel{Station::Bob, false});
  CHECK(m.outcome.value == 1);

  m = parse_wire(manifest_line(500, 12345));
  CHECK(m.type == WireMessage::Type::Manifest);
  CHECK(m.n_trials == 500);
  CHECK(m.hash == 12345);

  m = parse_wire(ack_line(40000));
  CHECK(m.type == WireMessage::Type::Ack);
  CHECK(m.through == 40000);

  CHECK(parse_wire(end_line()).type == WireMessage::Type::End);
}

TEST_CASE("the wire parser rejects malformed and padded messages") {
  CHECK_THROWS_AS(parse_wire("not json"), std::invalid_argument);
  CHECK_THROWS_AS(parse_wire("[1,2]"), std::invalid_argument);
  CHECK_THROWS_AS(parse_wire(R"({"trial":1})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_wire(R"({"type":"flood"})"), std::invalid_argument);
  // A ball carries exactly one scalar coordinate, nothing more.
  CHECK_THROWS_AS(
      parse_wire(R"({"type":"ball","trial":1,"coord":1.0,"coord_b":2.0})"),
      std::invalid_argument);
  CHECK_THROWS_AS(parse_wire(R"({"type":"ball","trial":1,"coord":[1.0,2.0]})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_wire(R"({"type":"ball","trial":1,"coord":"1.0"})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_wire(R"({"type":"ball","trial":-1,"coord":1.0})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_wire(R"({"type":"ball","coord":1.0})"),
                  std::invalid_argument);
  // Results must be internally consistent.
  CHECK_THROWS_AS(
      parse_wire(
          R"({"type":"result","trial":1,"station":"A","label":"B","outcome":1})"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      parse_wire(
          R"({"type":"result","trial":1,"station":"C","label":"A","outcome":1})"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      parse_wire(
          R"({"type":"result","trial":1,"station":"A","label":"A","outcome":0})"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      parse_wire(
          R"({"type":"result","trial":1,"station":"A","label":"A","outcome":1,"x":0})"),
      std::invalid_argument);
}

TEST_CASE("a four-role loopback run reproduces the in-process simulation") {
  const fs::path dir = scratch_dir("clean");
  RunConfig config = base_config(20000);
  config.ack_every = 1000;
  config.max_in_flight = 2000;
  const std::string records_path = (dir / "records.ndjson").string();

  const HarnessOutcome out =
      run_harness_threads(config, records_path, (dir / "logs").string());

  CHECK(out.source.trials_sent == config.n_trials);
  CHECK(out.alice.processed == config.n_trials);
  CHECK(out.alice.rejected == 0);
  CHECK(out.bob.processed == config.n_trials);
  CHECK_FALSE(out.collector.flagged);
  CHECK(out.collector.records.size() == config.n_trials);
  CHECK(out.collector.alice_singles == 0);
  CHECK(out.collector.bob_singles == 0);
  CHECK(out.collector.efficiency.coincidence_fraction().value() == 1.0);

  // Same seeds, same draws: the distributed run must equal the library run
  // record for record.
  SimulateOptions options;
  options.policy = config.policy;
  options.n_trials = config.n_trials;
  options.seeds = config.seeds;
  const auto expected = simulate(config.pattern, options);
  REQUIRE(expected.size() == out.collector.records.size());
  for (std::size_t k = 0; k < expected.size(); ++k) {
    const TrialRecord& e = expected[k];
    const TrialRecord& g = out.collector.records[k];
    CHECK(e.trial_id == g.trial_id);
    CHECK(e.alice_label == g.alice_label);
    CHECK(e.alice_outcome == g.alice_outcome);
    CHECK(e.bob_label == g.bob_label);
    CHECK(e.bob_outcome == g.bob_outcome);
  }

  const double exact = 4.0 * 0.9 * 0.9;
  CHECK(std::fabs(out.collector.chsh.bell - exact) <
        5.0 * out.collector.chsh.se);

  const AuditVerdict verdict = audit_run(out.transcript_paths);
  CHECK(verdict.violations.empty());
  CHECK(verdict.pass);
}

TEST_CASE("two identical runs leave identical artifacts") {
  const fs::path dir1 = scratch_dir("det1");
  const fs::path dir2 = scratch_dir("det2");
  RunConfig config = base_config(5000);
  const HarnessOutcome a = run_harness_threads(
      config, (dir1 / "records.ndjson").string(), (dir1 / "logs").string());
  const HarnessOutcome b = run_harness_threads(
      config, (dir2 / "records.ndjson").string(), (dir2 / "logs").string());
  CHECK(slurp(dir1 / "records.ndjson") == slurp(dir2 / "records.ndjson"));
  CHECK(slurp(dir1 / "logs/source.ndjson") == slurp(dir2 / "logs/source.ndjson"));
  CHECK(slurp(dir1 / "logs/alice.ndjson") == slurp(dir2 / "logs/alice.ndjson"));
  CHECK(slurp(dir1 / "logs/bob.ndjson") == slurp(dir2 / "logs/bob.ndjson"));
  CHECK(a.collector.chsh.bell == b.collector.chsh.bell);
}

TEST_CASE("the collector reorders, cross-checks and flags by itself") {
  net::Listener listener = net::Listener::bind({"127.0.0.1", 0});
  RunConfig config = base_config(4);
  config.collector = {"127.0.0.1", listener.port()};

  CollectorSummary summary;
  std::thread collector([&] {
    summary = run_collector(config, "", nullptr, &listener);
  });

  auto result = [](std::uint64_t trial, Station st, bool primed, int out) {
    return result_line(trial, st, {st, primed}, {out});
  };

  net::Connection src = net::Connection::dial(config.collector);
  src.send_line(manifest_line(config.n_trials, config_hash(config) + 1));

  net::Connection bob = net::Connection::dial(config.collector);
  bob.send_line("garbage that is not json");
  // Labels chosen so the four trials cover all four setting pairs.
  bob.send_line(result(2, Station::Bob, false, 1));
  bob.send_line(result(0, Station::Bob, false, 1));
  bob.send_line(result(3, Station::Bob, true, -1));
  bob.send_line(result(1, Station::Bob, true, -1));

  net::Connection alice = net::Connection::dial(config.collector);
  alice.send_line(result(3, Station::Alice, true, -1));
  // A result for Bob's station on Alice's connection: flagged and ignored.
  alice.send_line(result(1, Station::Bob, true, 1));
  alice.send_line(result(1, Station::Alice, false, 1));
  alice.send_line(result(0, Station::Alice, false, 1));
  alice.send_line(result(2, Station::Alice, true, 1));

  alice.send_line(end_line());
  bob.send_line(end_line());
  src.send_line(end_line());
  collector.join();

  REQUIRE(summary.records.size() == 4);
  for (std::uint64_t k = 0; k < 4; ++k)
    CHECK(summary.records[k].trial_id == k);
  CHECK(summary.records[1].alice_outcome.value == 1);
  CHECK(summary.records[1].bob_outcome.value == -1);
  CHECK(summary.alice_singles == 0);
  CHECK(summary.bob_singles == 0);

  CHECK(summary.flagged);
  bool hash_flag = false, parse_flag = false, cross_flag = false;
  for (const std::string& e : summary.protocol_errors) {
    hash_flag = hash_flag || e.find("hash mismatch") != std::string::npos;
    parse_flag = parse_flag || e.find("unparseable") != std::string::npos;
    cross_flag =
        cross_flag || e.find("another station's") != std::string::npos;
  }
  CHECK(hash_flag);
  CHECK(parse_flag);
  CHECK(cross_flag);
}

TEST_CASE("a station counts and skips what it cannot interpret") {
  net::Listener station_listener = net::Listener::bind({"127.0.0.1", 0});
  net::Listener fake_collector = net::Listener::bind({"127.0.0.1", 0});
  RunConfig config = base_config(2);
  config.policy = {1.0, 1.0};
  config.alice = {"127.0.0.1", station_listener.port()};
  config.collector = {"127.0.0.1", fake_collector.port()};

  StationSummary summary;
  std::thread station([&] {
    summary = run_station(config, Role::Alice, nullptr, &station_listener);
  });

  net::Connection source =
      net::Connection::dial({"127.0.0.1", station_listener.port()});
  net::Connection sink = fake_collector.accept();

  source.send_line(ball_line(0, 1.0));
  source.send_line("oops");              // unparseable, rejected
  source.send_line(ball_line(7, 9.5));   // off the board, rejected
  source.send_line(ball_line(1, 3.5));
  source.send_line(end_line());

  // p_a = 1 fires the switch every time, so labels and outcomes are fixed.
  CHECK(sink.recv_line() ==
        result_line(0, Station::Alice, {Station::Alice, false}, {-1}));
  CHECK(sink.recv_line() ==
        result_line(1, Station::Alice, {Station::Alice, true}, {1}));
  CHECK(sink.recv_line() == end_line());
  station.join();
  CHECK(summary.processed == 2);
  CHECK(summary.rejected == 2);
}

TEST_CASE("a withheld result becomes a single and fails the audit") {
  const fs::path dir = scratch_dir("drop");
  RunConfig config = base_config(400);
  StationFault bob_fault;
  bob_fault.drop_result_trial = 5;
  const HarnessOutcome out =
      run_harness_threads(config, (dir / "records.ndjson").string(),
                          (dir / "logs").string(), nullptr, nullptr,
                          &bob_fault);
  CHECK(out.collector.records.size() == config.n_trials - 1);
  CHECK(out.collector.alice_singles == 1);
  CHECK(out.collector.bob_singles == 0);
  CHECK(out.collector.efficiency.coincidence_fraction().value() <
        1.0);

  const AuditVerdict verdict = audit_run(out.transcript_paths);
  CHECK_FALSE(verdict.pass);
  bool named = false;
  for (const std::string& v : verdict.violations)
    named = named || v.find("bob received ball for trial 5 but sent no "
                            "result") != std::string::npos;
  CHECK(named);
}

TEST_CASE("a duplicated result is flagged and the first copy kept") {
  const fs::path dir = scratch_dir("dup");
  RunConfig config = base_config(400);
  StationFault alice_fault;
  alice_fault.duplicate_result_trial = 3;
  const HarnessOutcome out =
      run_harness_threads(config, (dir / "records.ndjson").string(),
                          (dir / "logs").string(), nullptr, &alice_fault,
                          nullptr);
  CHECK(out.collector.flagged);
  bool dup_flag = false;
  for (const std::string& e : out.collector.protocol_errors)
    dup_flag = dup_flag || e.find("duplicate result for trial 3") !=
                               std::string::npos;
  CHECK(dup_flag);
  CHECK(out.collector.records.size() == config.n_trials);

  // The kept copy is the honest one, so the records still match the library.
  SimulateOptions options;
  options.policy = config.policy;
  options.n_trials = config.n_trials;
  options.seeds = config.seeds;
  const auto expected = simulate(config.pattern, options);
  CHECK(out.collector.records[3].alice_outcome ==
        expected[3].alice_outcome);
}

TEST_CASE("a two-coordinate ball is rejected and caught by the audit") {
  const fs::path dir = scratch_dir("twocoord");
  RunConfig config = base_config(400);
  SourceFault fault;
  fault.double_coordinate_trial = 2;
  const HarnessOutcome out =
      run_harness_threads(config, (dir / "records.ndjson").string(),
                          (dir / "logs").string(), &fault, nullptr, nullptr);
  CHECK(out.alice.rejected == 1);
  CHECK(out.collector.records.size() == config.n_trials - 1);
  CHECK(out.collector.bob_singles == 1);

  const AuditVerdict verdict = audit_run(out.transcript_paths);
  CHECK_FALSE(verdict.pass);
  bool shape = false;
  for (const std::string& v : verdict.violations)
    shape = shape || v.find("exactly one scalar") != std::string::npos;
  CHECK(shape);
}

TEST_CASE("a station whispering to its partner fails the audit") {
  const fs::path dir = scratch_dir("whisper");
  RunConfig config = base_config(200);
  StationFault alice_fault;
  alice_fault.message_partner = true;
  const HarnessOutcome out =
      run_harness_threads(config, (dir / "records.ndjson").string(),
                          (dir / "logs").string(), nullptr, &alice_fault,
                          nullptr);
  // The leak does not disturb the data path.
  CHECK(out.collector.records.size() == config.n_trials);

  const AuditVerdict verdict = audit_run(out.transcript_paths);
  CHECK_FALSE(verdict.pass);
  bool edge = false;
  for (const std::string& v : verdict.violations)
    edge = edge || v.find("forbidden edge alice->bob") != std::string::npos;
  CHECK(edge);
}

TEST_CASE("a tampered transcript no longer passes the audit") {
  const fs::path dir = scratch_dir("tamper");
  RunConfig config = base_config(200);
  const HarnessOutcome out = run_harness_threads(
      config, (dir / "records.ndjson").string(), (dir / "logs").string());
  REQUIRE(audit_run(out.transcript_paths).pass);

  std::ofstream forge(dir / "logs/alice.ndjson", std::ios::app);
  forge << R"({"dir":"send","self":"alice","peer":"bob","msg":{"type":"ball","trial":0,"coord":1.0}})"
        << "\n";
  forge.close();
  CHECK_FALSE(audit_run(out.transcript_paths).pass);
}

TEST_CASE("flow control acknowledgements reach the source") {
  const fs::path dir = scratch_dir("acks");
  RunConfig config = base_config(5000);
  config.ack_every = 50;
  config.max_in_flight = 100;
  const HarnessOutcome out = run_harness_threads(
      config, (dir / "records.ndjson").string(), (dir / "logs").string());
  CHECK(out.collector.records.size() == config.n_trials);
  const std::string source_log = slurp(dir / "logs/source.ndjson");
  CHECK(source_log.find(R"("type":"ack")") != std::string::npos);
  CHECK(source_log.find(ack_line(5000)) != std::string::npos);
}
