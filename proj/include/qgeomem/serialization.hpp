#pragma once

// Canonical JSON for configs, scenarios, reports and pipeline snapshots.
// Objects are key-sorted; report floats carry 9 significant digits, snapshot
// floats round-trip exactly.

#include "qgeomem/harness.hpp"

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace qgeomem::io {

using nlohmann::json;

/// Malformed or incompatible file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double round_sig9(double x);
std::uint64_t fnv1a(const std::string& bytes);
std::string canonical_dump(const json& j);

json to_json(const RunConfig& c);
/// Overlay the keys present in `j` onto `defaults`; unknown keys are errors.
RunConfig run_config_from_json(const json& j, RunConfig defaults = {});

json to_json(const synth::Scenario& s);
synth::Scenario scenario_from_json(const json& j);
std::uint64_t scenario_checksum(const synth::Scenario& s);

json to_json(const StepRecord& r);
json to_json(const RunReport& r);
json to_json(const CompareReport& r);
json to_json(const VerifyReport& r);

struct Snapshot {
  RunConfig config;
  PipelineState<double> state;
};

json snapshot_to_json(const RunConfig& config, const PipelineState<double>& state);
Snapshot snapshot_from_json(const json& j);

json parse(const std::string& text, const std::string& what);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace qgeomem::io
