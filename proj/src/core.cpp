#include "bellsim/core.hpp"

#include <cmath>

#include "json.hpp"

namespace bellsim {

std::string_view to_string(Station s) {
  return s == Station::Alice ? "alice" : "bob";
}

std::string_view to_string(SettingLabel label) {
  if (label.station == Station::Alice) return label.primed ? "A'" : "A";
  return label.primed ? "B'" : "B";
}

SettingLabel parse_setting_label(std::string_view text) {
  if (text == "A") return {Station::Alice, false};
  if (text == "A'") return {Station::Alice, true};
  if (text == "B") return {Station::Bob, false};
  if (text == "B'") return {Station::Bob, true};
  throw std::invalid_argument("unknown setting label: " + std::string(text));
}

void check_policy(const SwitchPolicy& policy) {
  auto bad = [](double p) { return !std::isfinite(p) || p < 0.0 || p > 1.0; };
  if (bad(policy.p_a))
    throw std::invalid_argument("switch probability p_a outside [0,1]");
  if (bad(policy.p_b))
    throw std::invalid_argument("switch probability p_b outside [0,1]");
}

TrialRecord make_trial_record(std::uint64_t trial_id, SettingLabel a_label,
                              Outcome a_out, SettingLabel b_label,
                              Outcome b_out) {
  if (a_label.station != Station::Alice)
    throw std::invalid_argument("alice label carries the wrong station");
  if (b_label.station != Station::Bob)
    throw std::invalid_argument("bob label carries the wrong station");
  TrialRecord rec;
  rec.trial_id = trial_id;
  rec.alice_label = a_label;
  rec.alice_outcome = a_out;
  rec.bob_label = b_label;
  rec.bob_outcome = b_out;
  return rec;
}

std::string to_json_line(const TrialRecord& rec, bool include_lambda) {
  nlohmann::ordered_json j;
  j["trial"] = rec.trial_id;
  j["a_label"] = to_string(rec.alice_label);
  j["a_out"] = rec.alice_outcome.value;
  j["b_label"] = to_string(rec.bob_label);
  j["b_out"] = rec.bob_outcome.value;
  if (include_lambda && rec.lambda)
    j["lambda"] = {rec.lambda->a, rec.lambda->b};
  return j.dump();
}

TrialRecord trial_record_from_json(std::string_view line) {
  nlohmann::json j = nlohmann::json::parse(line);
  TrialRecord rec = make_trial_record(
      j.at("trial").get<std::uint64_t>(),
      parse_setting_label(j.at("a_label").get<std::string>()),
      Outcome{j.at("a_out").get<int>()},
      parse_setting_label(j.at("b_label").get<std::string>()),
      Outcome{j.at("b_out").get<int>()});
  if (j.contains("lambda")) {
    const auto& l = j.at("lambda");
    rec.lambda = HiddenVariable{l.at(0).get<double>(), l.at(1).get<double>()};
  }
  return rec;
}

EmptyPairError::EmptyPairError(SettingLabel a, SettingLabel b)
    : std::runtime_error("no trials observed for setting pair (" +
                         std::string(to_string(a)) + ", " +
                         std::string(to_string(b)) + ")"),
      alice_label(a),
      bob_label(b) {}

MissingLabelError::MissingLabelError(SettingLabel label)
    : std::runtime_error("no trials observed for setting " +
                         std::string(to_string(label))),
      label(label) {}

}  // namespace bellsim
