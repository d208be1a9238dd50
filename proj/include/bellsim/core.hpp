#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bellsim {

enum class Station { Alice, Bob };

std::string_view to_string(Station s);

// One of the four drawer labels A, A', B, B'. The primed flag is the part a
// switch can flip; the station never changes.
struct SettingLabel {
  Station station = Station::Alice;
  bool primed = false;

  bool operator==(const SettingLabel&) const = default;
};

std::string_view to_string(SettingLabel label);
SettingLabel parse_setting_label(std::string_view text);

// Measurement outcome. Simulation produces only +1 and -1; the value 0 appears
// when zero-extended data sets a variable to 0 for drawers that did not click.
struct Outcome {
  int value = 0;

  bool operator==(const Outcome&) const = default;
};

// A hidden-variable draw: the two ball coordinates, each in [0,4].
struct HiddenVariable {
  double a = 0.0;
  double b = 0.0;

  bool operator==(const HiddenVariable&) const = default;
};

// Switch activation probabilities per station, each in [0,1].
struct SwitchPolicy {
  double p_a = 0.0;
  double p_b = 0.0;
};

// Throws std::invalid_argument when a probability is outside [0,1] or not
// finite.
void check_policy(const SwitchPolicy& policy);

// One completed coincidence: both stations' final labels and outcomes. The
// hidden variable is carried only when debug provenance is requested and is
// never serialized by default.
struct TrialRecord {
  std::uint64_t trial_id = 0;
  SettingLabel alice_label;
  Outcome alice_outcome;
  SettingLabel bob_label;
  Outcome bob_outcome;
  std::optional<HiddenVariable> lambda;
};

// Checks station consistency of the labels; throws std::invalid_argument on a
// label attached to the wrong side.
TrialRecord make_trial_record(std::uint64_t trial_id, SettingLabel a_label,
                              Outcome a_out, SettingLabel b_label,
                              Outcome b_out);

// One-line JSON without trailing newline. Keys: trial, a_label, a_out, b_label,
// b_out, plus lambda as [a,b] when include_lambda is set and the record has
// one.
std::string to_json_line(const TrialRecord& rec, bool include_lambda = false);
TrialRecord trial_record_from_json(std::string_view line);

// A conditional estimate was requested for a setting pair that received no
// trials.
class EmptyPairError : public std::runtime_error {
 public:
  EmptyPairError(SettingLabel a, SettingLabel b);

  SettingLabel alice_label;
  SettingLabel bob_label;
};

// A per-label average was requested for a label that never occurred.
class MissingLabelError : public std::runtime_error {
 public:
  explicit MissingLabelError(SettingLabel label);

  SettingLabel label;
};

// A file could not be opened or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bellsim

template <>
struct std::hash<bellsim::SettingLabel> {
  std::size_t operator()(const bellsim::SettingLabel& l) const noexcept {
    return (l.station == bellsim::Station::Bob ? 2u : 0u) |
           (l.primed ? 1u : 0u);
  }
};
