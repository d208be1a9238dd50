#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bellsim/chessboard.hpp"
#include "bellsim/core.hpp"
#include "bellsim/net.hpp"
#include "bellsim/rng.hpp"
#include "bellsim/stats.hpp"

namespace bellsim {

enum class Role { Source, Alice, Bob, Collector };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);

// Everything a role needs to participate in one distributed run. Every process
// must be launched with the same configuration; the collector cross-checks the
// source's manifest hash against its own.
struct RunConfig {
  HolePattern pattern;
  SwitchPolicy policy;
  std::uint64_t n_trials = 0;
  SeedPack seeds;
  CollectionMode mode = CollectionMode::Switch;

  net::Endpoint alice{"127.0.0.1", 0};
  net::Endpoint bob{"127.0.0.1", 0};
  net::Endpoint collector{"127.0.0.1", 0};

  // Source-side flow control: the source blocks once more than max_in_flight
  // trials are unacknowledged; the collector acks every ack_every completed
  // trials.
  std::uint64_t ack_every = 10000;
  std::uint64_t max_in_flight = 20000;

  int connect_attempts = 200;
  std::chrono::milliseconds connect_delay{50};
};

// Throws std::invalid_argument on an invalid pattern, bad policy, zero trials,
// colliding endpoints, or a zero high-water mark.
void check_run_config(const RunConfig& config);

// FNV-1a over a canonical rendering of the run parameters.
std::uint64_t config_hash(const RunConfig& config);

// Wire format: newline-delimited JSON.
std::string ball_line(std::uint64_t trial, double coord);
std::string result_line(std::uint64_t trial, Station station,
                        SettingLabel label, Outcome outcome);
std::string manifest_line(std::uint64_t n_trials, std::uint64_t hash);
std::string end_line();
std::string ack_line(std::uint64_t through);

struct WireMessage {
  enum class Type { Ball, Result, Manifest, End, Ack };
  Type type = Type::End;
  std::uint64_t trial = 0;        // ball, result
  double coord = 0.0;             // ball
  Station station = Station::Alice;  // result
  SettingLabel label;             // result
  Outcome outcome;                // result
  std::uint64_t n_trials = 0;     // manifest
  std::uint64_t hash = 0;         // manifest
  std::uint64_t through = 0;      // ack
};

// Throws std::invalid_argument on anything that is not a well-formed message,
// including a ball with extra fields or a non-scalar coordinate.
WireMessage parse_wire(std::string_view line);

// Per-role message log, one JSON line per message:
// {"dir":"send"|"recv","self":role,"peer":role,"msg":<the message>}.
class Transcript {
 public:
  explicit Transcript(const std::string& path);

  void log(std::string_view dir, Role self, Role peer, std::string_view raw);

 private:
  std::ofstream out_;
};

struct SourceSummary {
  std::uint64_t trials_sent = 0;
};

struct StationSummary {
  std::uint64_t processed = 0;
  std::uint64_t rejected = 0;  // malformed balls, logged and skipped
};

struct CollectorSummary {
  std::vector<TrialRecord> records;  // complete coincidences, trial order
  std::uint64_t alice_singles = 0;
  std::uint64_t bob_singles = 0;
  bool flagged = false;  // protocol errors seen (duplicates, bad messages)
  std::vector<std::string> protocol_errors;
  ChshResult chsh;
  EfficiencyReport efficiency;
};

// Role loops. Each is a single sequential loop over its inbox; see the wire
// helpers above for the protocol. A null transcript disables logging. The
// optional listener lets tests pre-bind an ephemeral port; when absent the
// role binds the endpoint from the config.
SourceSummary run_source(const RunConfig& config, Transcript* transcript = nullptr);
StationSummary run_station(const RunConfig& config, Role which,
                           Transcript* transcript = nullptr,
                           net::Listener* listener = nullptr);
// Writes records to records_path (empty string: no file) in trial_id order
// and computes the run statistics in config.mode.
CollectorSummary run_collector(const RunConfig& config,
                               const std::string& records_path,
                               Transcript* transcript = nullptr,
                               net::Listener* listener = nullptr);

// Deliberately broken role variants for audit and singles tests.
struct SourceFault {
  // Send this trial's ball to Alice with both coordinates in one message.
  std::optional<std::uint64_t> double_coordinate_trial;
};

struct StationFault {
  // Process the ball but never send its result.
  std::optional<std::uint64_t> drop_result_trial;
  // Send this trial's result twice.
  std::optional<std::uint64_t> duplicate_result_trial;
  // Open a connection to the partner station and send it a message.
  bool message_partner = false;
};

SourceSummary run_source_faulty(const RunConfig& config,
                                const SourceFault& fault,
                                Transcript* transcript = nullptr);
StationSummary run_station_faulty(const RunConfig& config, Role which,
                                  const StationFault& fault,
                                  Transcript* transcript = nullptr,
                                  net::Listener* listener = nullptr);

struct AuditVerdict {
  bool pass = false;
  std::vector<std::string> violations;
};

// Locality audit over the per-role transcripts of one run. Passes iff the
// message graph is exactly source->{alice,bob} (balls), source->collector
// (manifest), {alice,bob}->collector (results), the flow-control acks
// collector->source, every ball carries a single scalar coordinate, every
// result sits on its own station's edge, and every ball a station received
// was answered with a result.
AuditVerdict audit_run(const std::vector<std::string>& transcript_paths);

// Test-mode orchestration: all four roles on loopback threads, ephemeral
// ports. Transcripts are written to <transcript_dir>/<role>.ndjson when a
// directory is given.
struct HarnessOutcome {
  SourceSummary source;
  StationSummary alice;
  StationSummary bob;
  CollectorSummary collector;
  std::vector<std::string> transcript_paths;
};

HarnessOutcome run_harness_threads(RunConfig config,
                                   const std::string& records_path,
                                   const std::string& transcript_dir = "",
                                   const SourceFault* source_fault = nullptr,
                                   const StationFault* alice_fault = nullptr,
                                   const StationFault* bob_fault = nullptr);

}  // namespace bellsim
