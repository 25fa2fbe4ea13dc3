// qgeomem: run, compare and verify the streaming memory pipeline on
// synthetic scenarios.
//
// Exit codes: 0 ok, 1 usage or config error, 2 verification failure, 3 I/O error.

#include "qgeomem/harness.hpp"
#include "qgeomem/serialization.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace qgeomem;

constexpr int kExitUsage = 1;
constexpr int kExitVerify = 2;
constexpr int kExitIo = 3;

struct ConfigFlags {
  std::string config_path;
  std::string profile = "default";
  std::uint64_t seed = 0;
  std::size_t length = 0;
  std::size_t tau = 0;
  std::size_t capacity = 0;
  double lambda_r = 0;
  double lambda_nu = 0;
  std::string policy;
  std::size_t n_labels = 0;
  double relevant_fraction = 0;
  double revisit_rate = 0;
  double noise_scale = 0;
  double relevant_per_capacity = 0;
  bool cggf_off = false;
  bool fgcb_off = false;
  bool sgeb_off = false;
  bool camera_delta_off = false;
  bool verbose = false;

  std::vector<std::pair<std::string, CLI::Option*>> opts;

  void add(CLI::App& app, bool with_policy = true) {
    auto keep = [&](const std::string& key, CLI::Option* o) { opts.emplace_back(key, o); };
    app.add_option("--config", config_path, "JSON config file (flags override its values)");
    app.add_option("--profile", profile, "base profile: default (14x14 grid) or compact (4x4 grid)")
        ->check(CLI::IsMember({"default", "compact"}));
    keep("seed", app.add_option("--seed", seed, "scenario and weight seed"));
    keep("length", app.add_option("--length", length, "stream length in frames"));
    keep("tau", app.add_option("--tau", tau, "sliding-window size"));
    keep("capacity", app.add_option("--capacity", capacity, "evidence bank capacity"));
    keep("lambda_r", app.add_option("--lambda-r", lambda_r, "relevance scale"));
    keep("lambda_nu", app.add_option("--lambda-nu", lambda_nu, "novelty scale"));
    if (with_policy) {
      keep("policy", app.add_option("--policy", policy,
                                    "sgeb_full, fifo, relevance_only, novelty_only or no_bias"));
    }
    keep("n_labels", app.add_option("--n-labels", n_labels, "distinct content labels (0: auto)"));
    keep("relevant_fraction",
         app.add_option("--relevant-fraction", relevant_fraction, "fraction of relevant labels"));
    keep("revisit_rate", app.add_option("--revisit-rate", revisit_rate, "label revisit probability"));
    keep("noise_scale", app.add_option("--noise-scale", noise_scale, "per-frame noise"));
    keep("relevant_per_capacity",
         app.add_option("--relevant-per-capacity", relevant_per_capacity,
                        "derive the relevant fraction from this many bank capacities"));
    keep("cggf_off", app.add_flag("--cggf-off", cggf_off, "skip geometry fusion"));
    keep("fgcb_off", app.add_flag("--fgcb-off", fgcb_off, "disable the sliding window"));
    keep("sgeb_off", app.add_flag("--sgeb-off", sgeb_off, "disable the evidence bank"));
    keep("camera_delta_off",
         app.add_flag("--camera-delta-off", camera_delta_off, "disable camera-delta modulation"));
    keep("verbose", app.add_flag("--verbose", verbose, "record full features per step"));
  }

  bool given(const std::string& key) const {
    for (const auto& [k, o] : opts) {
      if (k == key) return o->count() > 0;
    }
    return false;
  }

  RunConfig resolve(RunConfig base) const {
    RunConfig c = profile == "compact" ? compact_config() : std::move(base);
    if (!config_path.empty()) {
      c = io::run_config_from_json(io::parse(io::read_file(config_path), config_path), c);
    }
    if (given("seed")) c.seed = seed;
    if (given("length")) c.scenario.length = length;
    if (given("tau")) c.tau = tau;
    if (given("capacity")) c.capacity = capacity;
    if (given("lambda_r")) c.lambda_r = lambda_r;
    if (given("lambda_nu")) c.lambda_nu = lambda_nu;
    if (given("policy")) c.policy = parse_policy(policy);
    if (given("n_labels")) c.scenario.n_labels = n_labels;
    if (given("relevant_fraction")) c.scenario.relevant_fraction = relevant_fraction;
    if (given("revisit_rate")) c.scenario.revisit_rate = revisit_rate;
    if (given("noise_scale")) c.scenario.noise_scale = noise_scale;
    if (given("relevant_per_capacity")) c.relevant_per_capacity = relevant_per_capacity;
    if (cggf_off) c.toggles.cggf = false;
    if (fgcb_off) c.toggles.fgcb = false;
    if (sgeb_off) c.toggles.sgeb = false;
    if (camera_delta_off) c.toggles.camera_delta = false;
    if (verbose) c.verbose = true;
    c.validate();
    return c;
  }
};

/// "1-20", "3,5,9" or a mix such as "1-4,10".
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    if (item.empty()) throw std::invalid_argument("empty item in seed list '" + text + "'");
    const std::size_t dash = item.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoull(item));
      } else {
        const auto lo = std::stoull(item.substr(0, dash));
        const auto hi = std::stoull(item.substr(dash + 1));
        if (hi < lo) throw std::invalid_argument("bad range");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw std::invalid_argument("bad seed list item '" + item + "'");
    }
    pos = comma + 1;
  }
  return out;
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
  } else {
    io::write_file(path, content);
  }
}

synth::Scenario load_or_generate(const RunConfig& config, const std::string& scenario_in) {
  if (!scenario_in.empty()) {
    return io::scenario_from_json(io::parse(io::read_file(scenario_in), scenario_in));
  }
  return synth::gen_scenario(config.seed, config.resolved_scenario());
}

RunReport run_timed(StreamRunner& runner, std::size_t frames, bool timing) {
  const auto t0 = std::chrono::steady_clock::now();
  runner.advance(frames);
  RunReport report = runner.report();
  if (timing) {
    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return report;
}

void print_summary(const RunReport& r) {
  std::fprintf(stderr, "policy %s, %zu steps: recall %.4f, redundancy %.4f, retained %zu\n",
               std::string(to_string(r.config.policy)).c_str(), r.steps.size(), r.recall,
               r.redundancy, r.retained_sgeb_indices.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Question-guided geometric memory on synthetic streams"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run one policy over one scenario and write a RunReport");
  ConfigFlags run_flags;
  run_flags.add(*run);
  std::string run_output, run_scenario_in, run_scenario_out;
  bool run_timing = false;
  run->add_option("-o,--output", run_output, "report path (default stdout)");
  run->add_option("--scenario-in", run_scenario_in, "replay a saved scenario");
  run->add_option("--scenario-out", run_scenario_out, "save the generated scenario");
  run->add_flag("--timing", run_timing, "include wall_time in the report");

  // compare
  auto* compare = app.add_subcommand("compare", "recall of several policies across lengths");
  ConfigFlags cmp_flags;
  cmp_flags.add(*compare, false);
  std::string cmp_seeds = "1-20", cmp_output;
  std::vector<std::size_t> cmp_lengths{64, 256, 1024};
  std::vector<std::string> cmp_policies{"sgeb_full", "fifo"};
  std::size_t cmp_threads = 0;
  compare->add_option("--seeds", cmp_seeds, "seed list, e.g. 1-20 or 1,2,5")->capture_default_str();
  compare->add_option("--lengths", cmp_lengths, "length buckets")->delimiter(',')->capture_default_str();
  compare->add_option("--policies", cmp_policies, "policies to compare")->delimiter(',')->capture_default_str();
  compare->add_option("--threads", cmp_threads, "worker threads (0: all cores)");
  compare->add_option("-o,--output", cmp_output, "JSON report path");

  // verify
  auto* verify = app.add_subcommand("verify", "replay streams against brute-force oracles");
  std::string ver_seeds = "1-20", ver_output;
  std::size_t ver_steps = 200, ver_capacity = 8;
  bool ver_corrupt = false, ver_no_snapshot = false;
  verify->add_option("--seeds", ver_seeds, "seed list")->capture_default_str();
  verify->add_option("--steps", ver_steps, "steps per stream")->capture_default_str();
  verify->add_option("--capacity", ver_capacity, "evidence bank capacity")->capture_default_str();
  verify->add_flag("--no-snapshot", ver_no_snapshot, "skip the snapshot resume check");
  verify->add_flag("--corrupt-tie-break", ver_corrupt)->group("");
  verify->add_option("-o,--output", ver_output, "JSON report path");

  // snapshot
  auto* snapshot = app.add_subcommand("snapshot", "save or resume a mid-stream pipeline state");
  snapshot->require_subcommand(1);
  auto* save = snapshot->add_subcommand("save", "run the first N frames and save the state");
  ConfigFlags save_flags;
  save_flags.add(*save);
  std::size_t save_steps = 0;
  std::string save_output, save_scenario_in;
  save->add_option("--steps", save_steps, "frames to run before saving")->required();
  save->add_option("-o,--output", save_output, "snapshot path")->required();
  save->add_option("--scenario-in", save_scenario_in, "replay a saved scenario");
  auto* resume = snapshot->add_subcommand("resume", "continue a saved state and write a RunReport");
  std::string resume_input, resume_output, resume_scenario_in;
  std::size_t resume_steps = 0;
  resume->add_option("input", resume_input, "snapshot path")->required();
  resume->add_option("--steps", resume_steps, "frames to run (default: to the end)");
  resume->add_option("--scenario-in", resume_scenario_in, "scenario used when saving");
  resume->add_option("-o,--output", resume_output, "report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*run) {
      const RunConfig config = run_flags.resolve(RunConfig{});
      const synth::Scenario scenario = load_or_generate(config, run_scenario_in);
      if (!run_scenario_out.empty()) {
        io::write_file(run_scenario_out, io::canonical_dump(io::to_json(scenario)));
      }
      StreamRunner runner(config, scenario);
      const RunReport report = run_timed(runner, scenario.length, run_timing);
      emit(run_output, io::canonical_dump(io::to_json(report)));
      print_summary(report);
      return 0;
    }

    if (*compare) {
      CompareConfig cfg;
      cfg.base = cmp_flags.resolve(RunConfig{});
      cfg.seeds = parse_seed_list(cmp_seeds);
      cfg.lengths = cmp_lengths;
      for (const auto& p : cmp_policies) cfg.policies.push_back(parse_policy(p));
      cfg.threads = cmp_threads;
      const CompareReport report = compare_policies(cfg);
      if (!cmp_output.empty()) io::write_file(cmp_output, io::canonical_dump(io::to_json(report)));
      std::cout << format_compare_table(report);
      return 0;
    }

    if (*verify) {
      VerifyConfig cfg;
      cfg.base = verify_config();
      cfg.base.capacity = ver_capacity;
      cfg.seeds = parse_seed_list(ver_seeds);
      cfg.steps = ver_steps;
      cfg.corrupt_tie_break = ver_corrupt;
      cfg.check_snapshot = !ver_no_snapshot;
      const VerifyReport report = verify_streams(cfg);
      if (!ver_output.empty()) io::write_file(ver_output, io::canonical_dump(io::to_json(report)));
      std::printf("%zu streams, %zu steps, %zu writes, %zu evictions, %zu tied minima\n",
                  report.streams, report.steps_checked, report.writes_checked,
                  report.evictions_checked, report.ties_seen);
      for (const auto& d : report.divergences) {
        std::printf("DIVERGENCE seed %llu step %zu [%s]\n  expected: %s\n  actual:   %s\n",
                    static_cast<unsigned long long>(d.seed), d.step, d.check.c_str(),
                    d.expected.c_str(), d.actual.c_str());
      }
      std::printf("%s\n", report.passed() ? "PASS" : "FAIL");
      return report.passed() ? 0 : kExitVerify;
    }

    if (*save) {
      const RunConfig config = save_flags.resolve(RunConfig{});
      const synth::Scenario scenario = load_or_generate(config, save_scenario_in);
      if (save_steps > scenario.length) {
        throw std::invalid_argument("snapshot save: --steps exceeds the stream length");
      }
      StreamRunner runner(config, scenario);
      runner.advance(save_steps);
      io::write_file(save_output, io::canonical_dump(io::snapshot_to_json(config, runner.state())));
      return 0;
    }

    if (*resume) {
      io::Snapshot snap =
          io::snapshot_from_json(io::parse(io::read_file(resume_input), resume_input));
      const synth::Scenario scenario = load_or_generate(snap.config, resume_scenario_in);
      StreamRunner runner(snap.config, scenario, std::move(snap.state));
      const std::size_t remaining = scenario.length - runner.position();
      const RunReport report =
          run_timed(runner, resume_steps ? std::min(resume_steps, remaining) : remaining, false);
      emit(resume_output, io::canonical_dump(io::to_json(report)));
      print_summary(report);
      return 0;
    }
  } catch (const io::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
