#include "bellsim/harness.hpp"

#include <poll.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <thread>

#include "json.hpp"

namespace bellsim {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::uint64_t kFnvBasis = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = kFnvBasis;
  for (const char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= kFnvPrime;
  }
  return h;
}

std::string station_code(Station s) { return s == Station::Alice ? "A" : "B"; }

Station station_from_code(const std::string& code) {
  if (code == "A") return Station::Alice;
  if (code == "B") return Station::Bob;
  throw std::invalid_argument("unknown station code: " + code);
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::Source: return "source";
    case Role::Alice: return "alice";
    case Role::Bob: return "bob";
    case Role::Collector: return "collector";
  }
  return "source";
}

Role role_from_string(std::string_view text) {
  if (text == "source") return Role::Source;
  if (text == "alice") return Role::Alice;
  if (text == "bob") return Role::Bob;
  if (text == "collector") return Role::Collector;
  throw std::invalid_argument("unknown role: " + std::string(text));
}

void check_run_config(const RunConfig& config) {
  const PatternReport report = validate_pattern(config.pattern);
  if (!report.ok()) {
    std::string msg = "invalid pattern:";
    for (const std::string& v : report.violations) msg += "\n  " + v;
    throw std::invalid_argument(msg);
  }
  check_policy(config.policy);
  if (config.n_trials == 0)
    throw std::invalid_argument("n_trials must be at least 1");
  if (config.ack_every == 0)
    throw std::invalid_argument("ack_every must be at least 1");
  if (config.max_in_flight < config.ack_every)
    throw std::invalid_argument(
        "max_in_flight below ack_every would deadlock the source");
  auto same = [](const net::Endpoint& x, const net::Endpoint& y) {
    return x.host == y.host && x.port == y.port;
  };
  if (same(config.alice, config.bob) || same(config.alice, config.collector) ||
      same(config.bob, config.collector))
    throw std::invalid_argument("roles must listen on distinct endpoints");
}

std::uint64_t config_hash(const RunConfig& config) {
  std::string text = "pattern=";
  for (const Cell& c : config.pattern.cells())
    text += std::to_string(c.i) + "," + std::to_string(c.j) + ";";
  text += "|pa=" + format_double(config.policy.p_a);
  text += "|pb=" + format_double(config.policy.p_b);
  text += "|n=" + std::to_string(config.n_trials);
  text += "|mode=" + std::string(to_string(config.mode));
  text += "|seeds=" + std::to_string(config.seeds.lambda) + "," +
          std::to_string(config.seeds.alice) + "," +
          std::to_string(config.seeds.bob) + "," +
          std::to_string(config.seeds.reserved);
  return fnv1a(text);
}

std::string ball_line(std::uint64_t trial, double coord) {
  ordered_json j;
  j["type"] = "ball";
  j["trial"] = trial;
  j["coord"] = coord;
  return j.dump();
}

std::string result_line(std::uint64_t trial, Station station,
                        SettingLabel label, Outcome outcome) {
  ordered_json j;
  j["type"] = "result";
  j["trial"] = trial;
  j["station"] = station_code(station);
  j["label"] = to_string(label);
  j["outcome"] = outcome.value;
  return j.dump();
}

std::string manifest_line(std::uint64_t n_trials, std::uint64_t hash) {
  ordered_json j;
  j["type"] = "manifest";
  j["n_trials"] = n_trials;
  j["hash"] = hash;
  return j.dump();
}

std::string end_line() { return "{\"type\":\"end\"}"; }

std::string ack_line(std::uint64_t through) {
  ordered_json j;
  j["type"] = "ack";
  j["through"] = through;
  return j.dump();
}

WireMessage parse_wire(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error&) {
    throw std::invalid_argument("not a JSON message: " + std::string(line));
  }
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
    throw std::invalid_argument("message without a type: " + std::string(line));
  const std::string type = j.at("type").get<std::string>();
  WireMessage msg;
  auto require_uint = [&](const char* key) -> std::uint64_t {
    if (!j.contains(key) || !j.at(key).is_number_unsigned())
      throw std::invalid_argument(std::string("message missing unsigned '") +
                                  key + "': " + std::string(line));
    return j.at(key).get<std::uint64_t>();
  };
  if (type == "ball") {
    msg.type = WireMessage::Type::Ball;
    if (j.size() != 3)
      throw std::invalid_argument("ball message must carry exactly one "
                                  "coordinate: " + std::string(line));
    msg.trial = require_uint("trial");
    if (!j.contains("coord") || !j.at("coord").is_number())
      throw std::invalid_argument("ball message without a scalar coordinate: " +
                                  std::string(line));
    msg.coord = j.at("coord").get<double>();
    if (!std::isfinite(msg.coord))
      throw std::invalid_argument("ball coordinate is not finite");
  } else if (type == "result") {
    msg.type = WireMessage::Type::Result;
    if (j.size() != 5)
      throw std::invalid_argument("result message has unexpected fields: " +
                                  std::string(line));
    msg.trial = require_uint("trial");
    if (!j.contains("station") || !j.at("station").is_string() ||
        !j.contains("label") || !j.at("label").is_string() ||
        !j.contains("outcome") || !j.at("outcome").is_number_integer())
      throw std::invalid_argument("result message malformed: " +
                                  std::string(line));
    msg.station = station_from_code(j.at("station").get<std::string>());
    msg.label = parse_setting_label(j.at("label").get<std::string>());
    if (msg.label.station != msg.station)
      throw std::invalid_argument("result label belongs to the wrong station: " +
                                  std::string(line));
    const int out = j.at("outcome").get<int>();
    if (out != 1 && out != -1)
      throw std::invalid_argument("result outcome must be +1 or -1: " +
                                  std::string(line));
    msg.outcome = Outcome{out};
  } else if (type == "manifest") {
    msg.type = WireMessage::Type::Manifest;
    msg.n_trials = require_uint("n_trials");
    msg.hash = require_uint("hash");
  } else if (type == "end") {
    msg.type = WireMessage::Type::End;
  } else if (type == "ack") {
    msg.type = WireMessage::Type::Ack;
    msg.through = require_uint("through");
  } else {
    throw std::invalid_argument("unknown message type: " + type);
  }
  return msg;
}

Transcript::Transcript(const std::string& path) : out_(path) {
  if (!out_) throw IoError("cannot open transcript file: " + path);
}

void Transcript::log(std::string_view dir, Role self, Role peer,
                     std::string_view raw) {
  out_ << "{\"dir\":\"" << dir << "\",\"self\":\"" << to_string(self)
       << "\",\"peer\":\"" << to_string(peer) << "\",\"msg\":" << raw << "}\n";
}

namespace {

void log_send(Transcript* t, Role self, Role peer, std::string_view raw) {
  if (t) t->log("send", self, peer, raw);
}

void log_recv(Transcript* t, Role self, Role peer, std::string_view raw) {
  if (t) t->log("recv", self, peer, raw);
}

SourceSummary source_loop(const RunConfig& config, const SourceFault* fault,
                          Transcript* transcript) {
  check_run_config(config);
  net::Connection alice = net::Connection::dial(config.alice,
                                                config.connect_attempts,
                                                config.connect_delay);
  net::Connection bob = net::Connection::dial(config.bob,
                                              config.connect_attempts,
                                              config.connect_delay);
  net::Connection coll = net::Connection::dial(config.collector,
                                               config.connect_attempts,
                                               config.connect_delay);

  const std::string manifest =
      manifest_line(config.n_trials, config_hash(config));
  coll.send_line(manifest);
  log_send(transcript, Role::Source, Role::Collector, manifest);

  StreamRng rng(config.seeds.lambda);
  std::uint64_t acked = 0;
  for (std::uint64_t t = 0; t < config.n_trials; ++t) {
    const HiddenVariable lambda = sample_lambda(rng, config.pattern);
    std::string to_alice = ball_line(t, lambda.a);
    if (fault && fault->double_coordinate_trial == t) {
      ordered_json j;
      j["type"] = "ball";
      j["trial"] = t;
      j["coord"] = lambda.a;
      j["coord_b"] = lambda.b;
      to_alice = j.dump();
    }
    alice.send_line(to_alice);
    log_send(transcript, Role::Source, Role::Alice, to_alice);
    const std::string to_bob = ball_line(t, lambda.b);
    bob.send_line(to_bob);
    log_send(transcript, Role::Source, Role::Bob, to_bob);

    while (t + 1 - acked > config.max_in_flight) {
      std::optional<std::string> line = coll.recv_line();
      if (!line)
        throw std::runtime_error("collector closed before the run finished");
      log_recv(transcript, Role::Source, Role::Collector, *line);
      const WireMessage msg = parse_wire(*line);
      if (msg.type != WireMessage::Type::Ack)
        throw std::runtime_error("unexpected message from collector: " + *line);
      acked = std::max(acked, msg.through);
    }
  }

  const std::string end = end_line();
  alice.send_line(end);
  log_send(transcript, Role::Source, Role::Alice, end);
  bob.send_line(end);
  log_send(transcript, Role::Source, Role::Bob, end);
  coll.send_line(end);
  log_send(transcript, Role::Source, Role::Collector, end);

  // Drain remaining acks until the collector finalizes and closes; this keeps
  // the shutdown order deterministic and the ack channel free of resets.
  for (;;) {
    std::optional<std::string> line = coll.recv_line();
    if (!line) break;
    log_recv(transcript, Role::Source, Role::Collector, *line);
  }

  SourceSummary summary;
  summary.trials_sent = config.n_trials;
  return summary;
}

StationSummary station_loop(const RunConfig& config, Role which,
                            const StationFault* fault, Transcript* transcript,
                            net::Listener* injected) {
  if (which != Role::Alice && which != Role::Bob)
    throw std::invalid_argument("station role must be alice or bob");
  check_run_config(config);
  const Station station = which == Role::Alice ? Station::Alice : Station::Bob;
  const net::Endpoint& own_ep = which == Role::Alice ? config.alice : config.bob;
  const net::Endpoint& partner_ep =
      which == Role::Alice ? config.bob : config.alice;
  const Role partner_role = which == Role::Alice ? Role::Bob : Role::Alice;
  const double p =
      which == Role::Alice ? config.policy.p_a : config.policy.p_b;

  net::Listener own;
  if (!injected) own = net::Listener::bind(own_ep);
  net::Listener& listener = injected ? *injected : own;
  net::Connection source = listener.accept();
  net::Connection coll = net::Connection::dial(config.collector,
                                               config.connect_attempts,
                                               config.connect_delay);

  StreamRng rng(which == Role::Alice ? config.seeds.alice : config.seeds.bob);
  StationSummary summary;
  bool partner_messaged = false;

  for (;;) {
    std::optional<std::string> line = source.recv_line();
    if (!line)
      throw std::runtime_error(std::string(to_string(which)) +
                               ": source closed without end message");
    log_recv(transcript, which, Role::Source, *line);

    WireMessage msg;
    try {
      msg = parse_wire(*line);
      if (msg.type == WireMessage::Type::Ball) {
        // The coordinate must lie on the board; base_label throws otherwise.
        base_label(station, msg.coord);
      }
    } catch (const std::invalid_argument& e) {
      ++summary.rejected;
      std::cerr << to_string(which) << ": rejected ball: " << e.what() << "\n";
      continue;
    }
    if (msg.type == WireMessage::Type::End) break;
    if (msg.type != WireMessage::Type::Ball) {
      ++summary.rejected;
      std::cerr << to_string(which) << ": unexpected message from source\n";
      continue;
    }

    if (fault && fault->message_partner && !partner_messaged) {
      partner_messaged = true;
      net::Connection partner = net::Connection::dial(partner_ep, 5,
                                                      config.connect_delay);
      const std::string leak = ball_line(msg.trial, msg.coord);
      partner.send_line(leak);
      log_send(transcript, which, partner_role, leak);
    }

    const bool fired = rng.bernoulli(p);
    SettingLabel label;
    if (config.mode == CollectionMode::ExtendedDomain) {
      label = SettingLabel{station, fired};
    } else {
      label = apply_switch(base_label(station, msg.coord), fired);
    }
    const Outcome outcome = coordinate_outcome(station, msg.coord);

    const bool drop = fault && fault->drop_result_trial == msg.trial;
    if (!drop) {
      const std::string out = result_line(msg.trial, station, label, outcome);
      coll.send_line(out);
      log_send(transcript, which, Role::Collector, out);
      if (fault && fault->duplicate_result_trial == msg.trial) {
        coll.send_line(out);
        log_send(transcript, which, Role::Collector, out);
      }
    }
    ++summary.processed;
  }

  const std::string end = end_line();
  coll.send_line(end);
  log_send(transcript, which, Role::Collector, end);
  return summary;
}

}  // namespace

SourceSummary run_source(const RunConfig& config, Transcript* transcript) {
  return source_loop(config, nullptr, transcript);
}

SourceSummary run_source_faulty(const RunConfig& config,
                                const SourceFault& fault,
                                Transcript* transcript) {
  return source_loop(config, &fault, transcript);
}

StationSummary run_station(const RunConfig& config, Role which,
                           Transcript* transcript, net::Listener* listener) {
  return station_loop(config, which, nullptr, transcript, listener);
}

StationSummary run_station_faulty(const RunConfig& config, Role which,
                                  const StationFault& fault,
                                  Transcript* transcript,
                                  net::Listener* listener) {
  return station_loop(config, which, &fault, transcript, listener);
}

namespace {

struct Half {
  std::optional<std::pair<SettingLabel, Outcome>> alice;
  std::optional<std::pair<SettingLabel, Outcome>> bob;
};

struct ConnState {
  net::Connection conn;
  enum class Id { Unknown, Source, Alice, Bob } id = Id::Unknown;
  bool open = true;
};

Role conn_role(ConnState::Id id) {
  switch (id) {
    case ConnState::Id::Source: return Role::Source;
    case ConnState::Id::Alice: return Role::Alice;
    case ConnState::Id::Bob: return Role::Bob;
    default: return Role::Source;
  }
}

}  // namespace

CollectorSummary run_collector(const RunConfig& config,
                               const std::string& records_path,
                               Transcript* transcript,
                               net::Listener* injected) {
  check_run_config(config);
  net::Listener own;
  if (!injected) own = net::Listener::bind(config.collector);
  net::Listener& listener = injected ? *injected : own;

  std::ofstream records_out;
  if (!records_path.empty()) {
    records_out.open(records_path);
    if (!records_out)
      throw IoError("cannot open record file: " + records_path);
  }

  CollectorSummary summary;
  ChshAccumulator acc(config.mode);
  std::map<std::uint64_t, Half> pending;
  std::map<std::uint64_t, TrialRecord> ready;
  std::uint64_t next_emit = 0;
  std::uint64_t completed = 0;
  std::uint64_t last_acked = 0;
  bool seen_manifest = false;
  int station_ends = 0;
  bool alice_ended = false, bob_ended = false;

  std::vector<ConnState> conns;

  auto flag = [&](const std::string& what) {
    summary.flagged = true;
    summary.protocol_errors.push_back(what);
  };

  auto source_conn = [&]() -> ConnState* {
    for (ConnState& c : conns)
      if (c.id == ConnState::Id::Source && c.open) return &c;
    return nullptr;
  };

  auto maybe_ack = [&]() {
    ConnState* src = source_conn();
    if (!src) return;
    while (completed - last_acked >= config.ack_every) {
      last_acked += config.ack_every;
      const std::string ack = ack_line(last_acked);
      try {
        src->conn.send_line(ack);
      } catch (const std::exception& e) {
        flag(std::string("ack to source failed: ") + e.what());
        src->open = false;
        return;
      }
      log_send(transcript, Role::Collector, Role::Source, ack);
    }
  };

  auto emit = [&](const TrialRecord& rec) {
    if (records_out.is_open()) records_out << to_json_line(rec) << '\n';
    acc.add(rec);
    summary.records.push_back(rec);
  };

  auto emit_in_order = [&]() {
    for (auto it = ready.begin(); it != ready.end() && it->first == next_emit;
         it = ready.erase(it), ++next_emit)
      emit(it->second);
  };

  auto on_result = [&](const WireMessage& msg) {
    const bool is_alice = msg.station == Station::Alice;
    if (msg.trial >= config.n_trials) {
      flag("result for out-of-range trial " + std::to_string(msg.trial));
      return;
    }
    const bool already_complete =
        msg.trial < next_emit || ready.count(msg.trial) > 0;
    Half& half = pending[msg.trial];
    auto& slot = is_alice ? half.alice : half.bob;
    if (already_complete || slot.has_value()) {
      flag("duplicate result for trial " + std::to_string(msg.trial) +
           " station " + station_code(msg.station));
      if (pending[msg.trial].alice == std::nullopt &&
          pending[msg.trial].bob == std::nullopt)
        pending.erase(msg.trial);
      return;
    }
    slot = {msg.label, msg.outcome};
    if (half.alice && half.bob) {
      TrialRecord rec = make_trial_record(msg.trial, half.alice->first,
                                          half.alice->second, half.bob->first,
                                          half.bob->second);
      pending.erase(msg.trial);
      ready.emplace(rec.trial_id, rec);
      emit_in_order();
      ++completed;
      maybe_ack();
    }
  };

  auto handle_line = [&](ConnState& c, const std::string& line) {
    WireMessage msg;
    try {
      msg = parse_wire(line);
    } catch (const std::invalid_argument& e) {
      flag(std::string("unparseable message: ") + e.what());
      return;
    }
    // First message identifies the connection.
    if (c.id == ConnState::Id::Unknown) {
      if (msg.type == WireMessage::Type::Manifest) {
        c.id = ConnState::Id::Source;
      } else if (msg.type == WireMessage::Type::Result) {
        c.id = msg.station == Station::Alice ? ConnState::Id::Alice
                                             : ConnState::Id::Bob;
      }
    }
    if (c.id != ConnState::Id::Unknown)
      log_recv(transcript, Role::Collector, conn_role(c.id), line);

    switch (msg.type) {
      case WireMessage::Type::Manifest:
        if (seen_manifest) {
          flag("second manifest received");
          break;
        }
        seen_manifest = true;
        if (msg.n_trials != config.n_trials)
          flag("manifest n_trials " + std::to_string(msg.n_trials) +
               " does not match configured " +
               std::to_string(config.n_trials));
        if (msg.hash != config_hash(config))
          flag("manifest config hash mismatch");
        maybe_ack();
        break;
      case WireMessage::Type::Result: {
        const bool consistent =
            (c.id == ConnState::Id::Alice && msg.station == Station::Alice) ||
            (c.id == ConnState::Id::Bob && msg.station == Station::Bob);
        if (!consistent) {
          flag("result for station " + station_code(msg.station) +
               " arrived on another station's connection");
          break;
        }
        on_result(msg);
        break;
      }
      case WireMessage::Type::End:
        if (c.id == ConnState::Id::Alice) {
          alice_ended = true;
          ++station_ends;
        } else if (c.id == ConnState::Id::Bob) {
          bob_ended = true;
          ++station_ends;
        } else if (c.id == ConnState::Id::Source) {
          // informational; the stations' ends gate finalization
        } else {
          flag("end from unidentified connection");
          ++station_ends;
        }
        break;
      case WireMessage::Type::Ball:
        flag("ball message reached the collector");
        break;
      case WireMessage::Type::Ack:
        flag("ack message reached the collector");
        break;
    }
  };

  std::vector<std::string> lines;
  while (station_ends < 2) {
    std::vector<pollfd> fds;
    fds.push_back({listener.fd(), POLLIN, 0});
    std::vector<ConnState*> polled;
    for (ConnState& c : conns)
      if (c.open) {
        fds.push_back({c.conn.fd(), POLLIN, 0});
        polled.push_back(&c);
      }
    if (::poll(fds.data(), fds.size(), -1) < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error("poll failed in collector");
    }
    if (fds[0].revents & POLLIN) {
      conns.reserve(conns.size() + 1);
      ConnState state;
      state.conn = listener.accept();
      conns.push_back(std::move(state));
      continue;  // conns reallocation invalidates polled pointers
    }
    for (std::size_t k = 0; k < polled.size(); ++k) {
      if (!(fds[k + 1].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      ConnState& c = *polled[k];
      lines.clear();
      bool still_open = true;
      try {
        still_open = c.conn.drain_lines(lines);
      } catch (const std::exception& e) {
        flag(std::string("connection error: ") + e.what());
        still_open = false;
      }
      for (const std::string& line : lines) handle_line(c, line);
      if (!still_open) {
        c.open = false;
        if ((c.id == ConnState::Id::Alice && !alice_ended) ||
            (c.id == ConnState::Id::Bob && !bob_ended)) {
          flag(std::string(to_string(conn_role(c.id))) +
               " closed without end message");
          ++station_ends;
        }
      }
      if (station_ends >= 2) break;
    }
  }

  // One last non-blocking sweep so the source's end (sent after its balls)
  // lands in the transcript even when the stations finished first.
  {
    std::vector<pollfd> fds;
    std::vector<ConnState*> polled;
    for (ConnState& c : conns)
      if (c.open) {
        fds.push_back({c.conn.fd(), POLLIN, 0});
        polled.push_back(&c);
      }
    if (!fds.empty() && ::poll(fds.data(), fds.size(), 0) > 0) {
      for (std::size_t k = 0; k < polled.size(); ++k) {
        if (!(fds[k].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        lines.clear();
        try {
          if (!polled[k]->conn.drain_lines(lines)) polled[k]->open = false;
        } catch (const std::exception&) {
          polled[k]->open = false;
        }
        for (const std::string& line : lines) handle_line(*polled[k], line);
      }
    }
  }

  // Flush complete trials that were stuck behind a gap, in trial order.
  for (auto& [id, rec] : ready) {
    (void)id;
    emit(rec);
  }
  ready.clear();

  for (const auto& [id, half] : pending) {
    (void)id;
    if (half.alice && !half.bob) ++summary.alice_singles;
    if (half.bob && !half.alice) ++summary.bob_singles;
  }
  if (!seen_manifest) flag("no manifest received");

  if (records_out.is_open()) {
    records_out.flush();
    if (!records_out) throw IoError("write failed: " + records_path);
  }

  summary.chsh = acc.result();
  summary.efficiency = efficiency_audit(summary.records, summary.alice_singles,
                                        summary.bob_singles);
  return summary;
}

namespace {

struct Edge {
  std::string from;
  std::string to;
};

bool edge_allowed(const std::string& from, const std::string& to,
                  const std::string& type) {
  if (from == "source" && (to == "alice" || to == "bob"))
    return type == "ball" || type == "end";
  if (from == "source" && to == "collector")
    return type == "manifest" || type == "end";
  if ((from == "alice" || from == "bob") && to == "collector")
    return type == "result" || type == "end";
  if (from == "collector" && to == "source") return type == "ack";
  return false;
}

}  // namespace

AuditVerdict audit_run(const std::vector<std::string>& transcript_paths) {
  AuditVerdict verdict;
  std::set<std::uint64_t> balls_seen[2];    // trials received, alice/bob
  std::set<std::uint64_t> results_sent[2];  // trials answered, alice/bob
  bool station_logged[2] = {false, false};

  auto violation = [&](const std::string& what) {
    verdict.violations.push_back(what);
  };

  for (const std::string& path : transcript_paths) {
    std::ifstream in(path);
    if (!in) {
      violation("unreadable transcript: " + path);
      continue;
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error&) {
        violation("malformed transcript line " + std::to_string(line_no) +
                  " in " + path);
        continue;
      }
      if (!j.is_object() || !j.contains("dir") || !j.contains("self") ||
          !j.contains("peer") || !j.contains("msg") ||
          !j.at("msg").is_object()) {
        violation("malformed transcript line " + std::to_string(line_no) +
                  " in " + path);
        continue;
      }
      const std::string dir = j.at("dir").get<std::string>();
      const std::string self = j.at("self").get<std::string>();
      const std::string peer = j.at("peer").get<std::string>();
      const json& msg = j.at("msg");
      const std::string type =
          msg.contains("type") && msg.at("type").is_string()
              ? msg.at("type").get<std::string>()
              : "";
      const std::string from = dir == "send" ? self : peer;
      const std::string to = dir == "send" ? peer : self;

      if (!edge_allowed(from, to, type))
        violation("forbidden edge " + from + "->" + to +
                  (type.empty() ? "" : " (" + type + ")"));

      if (type == "ball") {
        const bool shape_ok = msg.size() == 3 && msg.contains("trial") &&
                              msg.at("trial").is_number_unsigned() &&
                              msg.contains("coord") &&
                              msg.at("coord").is_number();
        if (!shape_ok)
          violation("ball message does not carry exactly one scalar "
                    "coordinate: " + msg.dump());
      }
      if (type == "result" && (from == "alice" || from == "bob")) {
        const std::string expect = from == "alice" ? "A" : "B";
        if (!msg.contains("station") || msg.at("station") != expect)
          violation("result from " + from + " claims station " +
                    (msg.contains("station") ? msg.at("station").dump()
                                             : "(none)"));
      }

      // A station's own log feeds the ball->result completeness check.
      const int idx = self == "alice" ? 0 : self == "bob" ? 1 : -1;
      if (idx >= 0) {
        station_logged[idx] = true;
        if (dir == "recv" && type == "ball" && msg.contains("trial") &&
            msg.at("trial").is_number_unsigned())
          balls_seen[idx].insert(msg.at("trial").get<std::uint64_t>());
        if (dir == "send" && type == "result" && msg.contains("trial") &&
            msg.at("trial").is_number_unsigned())
          results_sent[idx].insert(msg.at("trial").get<std::uint64_t>());
      }
    }
  }

  for (int idx = 0; idx < 2; ++idx) {
    if (!station_logged[idx]) continue;
    const char* name = idx == 0 ? "alice" : "bob";
    for (const std::uint64_t trial : balls_seen[idx])
      if (!results_sent[idx].count(trial))
        violation(std::string(name) + " received ball for trial " +
                  std::to_string(trial) + " but sent no result");
  }

  verdict.pass = verdict.violations.empty();
  return verdict;
}

HarnessOutcome run_harness_threads(RunConfig config,
                                   const std::string& records_path,
                                   const std::string& transcript_dir,
                                   const SourceFault* source_fault,
                                   const StationFault* alice_fault,
                                   const StationFault* bob_fault) {
  net::Listener alice_listener = net::Listener::bind({"127.0.0.1", 0});
  net::Listener bob_listener = net::Listener::bind({"127.0.0.1", 0});
  net::Listener coll_listener = net::Listener::bind({"127.0.0.1", 0});
  config.alice = {"127.0.0.1", alice_listener.port()};
  config.bob = {"127.0.0.1", bob_listener.port()};
  config.collector = {"127.0.0.1", coll_listener.port()};
  check_run_config(config);

  HarnessOutcome out;
  std::optional<Transcript> ts, ta, tb, tc;
  if (!transcript_dir.empty()) {
    std::filesystem::create_directories(transcript_dir);
    const std::string base = transcript_dir + "/";
    out.transcript_paths = {base + "source.ndjson", base + "alice.ndjson",
                            base + "bob.ndjson", base + "collector.ndjson"};
    ts.emplace(out.transcript_paths[0]);
    ta.emplace(out.transcript_paths[1]);
    tb.emplace(out.transcript_paths[2]);
    tc.emplace(out.transcript_paths[3]);
  }

  std::exception_ptr errors[4] = {};
  std::thread collector_thread([&] {
    try {
      out.collector = run_collector(config, records_path,
                                    tc ? &*tc : nullptr, &coll_listener);
    } catch (...) {
      errors[0] = std::current_exception();
    }
  });
  std::thread alice_thread([&] {
    try {
      out.alice = alice_fault
                      ? run_station_faulty(config, Role::Alice, *alice_fault,
                                           ta ? &*ta : nullptr, &alice_listener)
                      : run_station(config, Role::Alice, ta ? &*ta : nullptr,
                                    &alice_listener);
    } catch (...) {
      errors[1] = std::current_exception();
    }
  });
  std::thread bob_thread([&] {
    try {
      out.bob = bob_fault
                    ? run_station_faulty(config, Role::Bob, *bob_fault,
                                         tb ? &*tb : nullptr, &bob_listener)
                    : run_station(config, Role::Bob, tb ? &*tb : nullptr,
                                  &bob_listener);
    } catch (...) {
      errors[2] = std::current_exception();
    }
  });
  std::thread source_thread([&] {
    try {
      out.source = source_fault
                       ? run_source_faulty(config, *source_fault,
                                           ts ? &*ts : nullptr)
                       : run_source(config, ts ? &*ts : nullptr);
    } catch (...) {
      errors[3] = std::current_exception();
    }
  });

  source_thread.join();
  alice_thread.join();
  bob_thread.join();
  collector_thread.join();

  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace bellsim
