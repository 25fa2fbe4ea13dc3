#include "qgeomem/serialization.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace qgeomem::io {
namespace {

template <typename Enum>
struct EnumName {
  Enum value;
  const char* name;
};

constexpr EnumName<SimilarityMode> kSimilarityNames[] = {
    {SimilarityMode::token_mean, "token_mean"}, {SimilarityMode::per_token_mean, "per_token_mean"}};
constexpr EnumName<ScoreMode> kScoreNames[] = {{ScoreMode::full, "full"},
                                               {ScoreMode::relevance_only, "relevance_only"},
                                               {ScoreMode::novelty_only, "novelty_only"},
                                               {ScoreMode::uniform, "uniform"}};
constexpr EnumName<EvictionMode> kEvictionNames[] = {
    {EvictionMode::min_score, "min_score"}, {EvictionMode::chronological, "chronological"}};
constexpr EnumName<TieBreak> kTieBreakNames[] = {{TieBreak::oldest, "oldest"},
                                                 {TieBreak::newest, "newest"}};

template <typename Enum, std::size_t N>
const char* enum_name(const EnumName<Enum> (&table)[N], Enum value) {
  for (const auto& e : table) {
    if (e.value == value) return e.name;
  }
  throw std::logic_error("enum value without a name");
}

template <typename Enum, std::size_t N>
Enum enum_value(const EnumName<Enum> (&table)[N], const std::string& name,
                const std::string& field) {
  for (const auto& e : table) {
    if (name == e.name) return e.value;
  }
  throw FormatError("field '" + field + "': unknown value '" + name + "'");
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <typename T>
T field(const json& j, const std::string& key, const std::string& context) {
  if (!j.is_object()) throw FormatError(context + ": expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw FormatError(context + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw FormatError(context + ": field '" + key + "': " + e.what());
  }
}

const json& object_field(const json& j, const std::string& key, const std::string& context) {
  if (!j.is_object()) throw FormatError(context + ": expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw FormatError(context + ": missing field '" + key + "'");
  return *it;
}

json matrix_json(const Matrix<double>& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix<double> matrix_from(const json& j, const std::string& context) {
  const auto rows = field<Eigen::Index>(j, "rows", context);
  const auto cols = field<Eigen::Index>(j, "cols", context);
  const auto data = field<std::vector<double>>(j, "data", context);
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw FormatError(context + ": field 'data' does not hold rows x cols values");
  }
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = data[static_cast<std::size_t>(i)];
  return m;
}

RowVector<double> row_from(const json& j, const std::string& key, const std::string& context) {
  const auto data = field<std::vector<double>>(j, key, context);
  RowVector<double> v(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) v(static_cast<Eigen::Index>(i)) = data[i];
  return v;
}

std::vector<double> row_data(const RowVector<double>& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

double maybe_round(double x, bool round) { return round ? round_sig9(x) : x; }

json config_json(const RunConfig& c, bool round) {
  const auto& s = c.scenario;
  return {
      {"dims",
       {{"grid_h", c.dims.grid_h},
        {"grid_w", c.dims.grid_w},
        {"geometry_tokens", c.dims.geometry_tokens},
        {"width", c.dims.width},
        {"geometry_width", c.dims.geometry_width}}},
      {"tau", c.tau},
      {"capacity", c.capacity},
      {"pool_h", c.pool_h},
      {"pool_w", c.pool_w},
      {"head_count", c.head_count},
      {"lambda_r", maybe_round(c.lambda_r, round)},
      {"lambda_nu", maybe_round(c.lambda_nu, round)},
      {"policy", std::string(to_string(c.policy))},
      {"toggles",
       {{"cggf", c.toggles.cggf},
        {"fgcb", c.toggles.fgcb},
        {"sgeb", c.toggles.sgeb},
        {"camera_delta", c.toggles.camera_delta}}},
      {"similarity", enum_name(kSimilarityNames, c.similarity)},
      {"seed", c.seed},
      {"scenario",
       {{"length", s.length},
        {"n_labels", s.n_labels},
        {"relevant_fraction", maybe_round(s.relevant_fraction, round)},
        {"revisit_rate", maybe_round(s.revisit_rate, round)},
        {"noise_scale", maybe_round(s.noise_scale, round)},
        {"relevant_strength", maybe_round(s.relevant_strength, round)},
        {"distractor_strength", maybe_round(s.distractor_strength, round)}}},
      {"relevant_per_capacity", maybe_round(c.relevant_per_capacity, round)},
      {"verbose", c.verbose},
  };
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& context) {
  if (!j.is_object()) throw FormatError(context + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw FormatError(context + ": unknown field '" + key + "'");
  }
}

template <typename T>
void overlay(const json& j, const char* key, T& target, const std::string& context) {
  if (j.contains(key)) target = field<T>(j, key, context);
}

json sgeb_entry_json(const SgebEntry<double>& e) {
  return {{"frame_index", e.frame_index},
          {"pooled", matrix_json(e.pooled)},
          {"relevance", e.relevance},
          {"novelty", e.novelty},
          {"score", e.score}};
}

}  // namespace

double round_sig9(double x) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return std::strtod(buf, nullptr);
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string canonical_dump(const json& j) { return j.dump(2) + "\n"; }

json to_json(const RunConfig& c) { return config_json(c, true); }

RunConfig run_config_from_json(const json& j, RunConfig c) {
  const std::string ctx = "config";
  reject_unknown(j,
                 {"dims", "tau", "capacity", "pool_h", "pool_w", "head_count", "lambda_r",
                  "lambda_nu", "policy", "toggles", "similarity", "seed", "scenario",
                  "relevant_per_capacity", "verbose"},
                 ctx);
  if (j.contains("dims")) {
    const auto& d = j["dims"];
    const std::string dctx = ctx + ".dims";
    reject_unknown(d, {"grid_h", "grid_w", "geometry_tokens", "width", "geometry_width"}, dctx);
    overlay(d, "grid_h", c.dims.grid_h, dctx);
    overlay(d, "grid_w", c.dims.grid_w, dctx);
    overlay(d, "geometry_tokens", c.dims.geometry_tokens, dctx);
    overlay(d, "width", c.dims.width, dctx);
    overlay(d, "geometry_width", c.dims.geometry_width, dctx);
  }
  overlay(j, "tau", c.tau, ctx);
  overlay(j, "capacity", c.capacity, ctx);
  overlay(j, "pool_h", c.pool_h, ctx);
  overlay(j, "pool_w", c.pool_w, ctx);
  overlay(j, "head_count", c.head_count, ctx);
  overlay(j, "lambda_r", c.lambda_r, ctx);
  overlay(j, "lambda_nu", c.lambda_nu, ctx);
  overlay(j, "seed", c.seed, ctx);
  overlay(j, "relevant_per_capacity", c.relevant_per_capacity, ctx);
  overlay(j, "verbose", c.verbose, ctx);
  if (j.contains("policy")) {
    try {
      c.policy = parse_policy(field<std::string>(j, "policy", ctx));
    } catch (const std::invalid_argument& e) {
      throw FormatError(ctx + ": field 'policy': " + e.what());
    }
  }
  if (j.contains("similarity")) {
    c.similarity =
        enum_value(kSimilarityNames, field<std::string>(j, "similarity", ctx), "similarity");
  }
  if (j.contains("toggles")) {
    const auto& t = j["toggles"];
    const std::string tctx = ctx + ".toggles";
    reject_unknown(t, {"cggf", "fgcb", "sgeb", "camera_delta"}, tctx);
    overlay(t, "cggf", c.toggles.cggf, tctx);
    overlay(t, "fgcb", c.toggles.fgcb, tctx);
    overlay(t, "sgeb", c.toggles.sgeb, tctx);
    overlay(t, "camera_delta", c.toggles.camera_delta, tctx);
  }
  if (j.contains("scenario")) {
    const auto& s = j["scenario"];
    const std::string sctx = ctx + ".scenario";
    reject_unknown(s,
                   {"length", "n_labels", "relevant_fraction", "revisit_rate", "noise_scale",
                    "relevant_strength", "distractor_strength"},
                   sctx);
    overlay(s, "length", c.scenario.length, sctx);
    overlay(s, "n_labels", c.scenario.n_labels, sctx);
    overlay(s, "relevant_fraction", c.scenario.relevant_fraction, sctx);
    overlay(s, "revisit_rate", c.scenario.revisit_rate, sctx);
    overlay(s, "noise_scale", c.scenario.noise_scale, sctx);
    overlay(s, "relevant_strength", c.scenario.relevant_strength, sctx);
    overlay(s, "distractor_strength", c.scenario.distractor_strength, sctx);
  }
  return c;
}

json to_json(const synth::Scenario& s) {
  json frames = json::array();
  for (const auto& f : s.frames) {
    frames.push_back({{"label", f.content_label},
                      {"relevance_strength", f.relevance_strength},
                      {"position", f.pose.position},
                      {"heading", f.pose.heading},
                      {"noise_scale", f.noise_scale}});
  }
  return {{"format_version", kFormatVersion},
          {"kind", "scenario"},
          {"length", s.length},
          {"seed", s.seed},
          {"n_labels", s.n_labels},
          {"question_label", s.question_label},
          {"relevant_indices", s.relevant_indices},
          {"frames", frames}};
}

synth::Scenario scenario_from_json(const json& j) {
  const std::string ctx = "scenario";
  if (field<int>(j, "format_version", ctx) != kFormatVersion) {
    throw FormatError(ctx + ": field 'format_version': unsupported version");
  }
  synth::Scenario s;
  s.length = field<std::size_t>(j, "length", ctx);
  s.seed = field<std::uint64_t>(j, "seed", ctx);
  s.n_labels = field<std::size_t>(j, "n_labels", ctx);
  s.question_label = field<std::string>(j, "question_label", ctx);
  s.relevant_indices = field<std::vector<std::size_t>>(j, "relevant_indices", ctx);
  const auto& frames = object_field(j, "frames", ctx);
  if (!frames.is_array() || frames.size() != s.length) {
    throw FormatError(ctx + ": field 'frames': expected " + std::to_string(s.length) + " frames");
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string fctx = ctx + ".frames[" + std::to_string(i) + "]";
    synth::FrameSpec f;
    f.content_label = field<std::uint32_t>(frames[i], "label", fctx);
    if (f.content_label >= s.n_labels) {
      throw FormatError(fctx + ": field 'label': exceeds n_labels");
    }
    f.relevance_strength = field<double>(frames[i], "relevance_strength", fctx);
    f.pose.position = field<std::array<double, 3>>(frames[i], "position", fctx);
    f.pose.heading = field<double>(frames[i], "heading", fctx);
    f.noise_scale = field<double>(frames[i], "noise_scale", fctx);
    s.frames.push_back(f);
  }
  return s;
}

std::uint64_t scenario_checksum(const synth::Scenario& s) {
  return fnv1a(canonical_dump(to_json(s)));
}

json to_json(const StepRecord& r) {
  json j = {{"frame_index", r.frame_index},
            {"gate_fgcb_mean", round_sig9(r.gate_fgcb_mean)},
            {"gate_sgeb_mean", round_sig9(r.gate_sgeb_mean)},
            {"fused_checksum", round_sig9(r.fused_checksum)},
            {"fgcb_observed", r.fgcb_observed},
            {"sgeb_observed", r.sgeb_observed}};
  if (r.sgeb) {
    const auto& a = *r.sgeb;
    json refreshed = json::array();
    for (const auto& s : a.outcome.refreshed) {
      refreshed.push_back({s.frame_index, round_sig9(s.novelty), round_sig9(s.score)});
    }
    json outcome = {{"kind", to_string(a.outcome.kind)}, {"refreshed", refreshed}};
    if (a.outcome.evicted_frame_index) outcome["evicted_frame_index"] = *a.outcome.evicted_frame_index;
    j["sgeb"] = {{"relevance", round_sig9(a.relevance)},
                 {"novelty", round_sig9(a.novelty)},
                 {"score", round_sig9(a.score)},
                 {"outcome", outcome}};
  }
  if (!r.geo_feature.empty()) {
    std::vector<double> geo(r.geo_feature.size()), fused(r.fused_feature.size());
    for (std::size_t i = 0; i < geo.size(); ++i) geo[i] = round_sig9(r.geo_feature[i]);
    for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = round_sig9(r.fused_feature[i]);
    j["geo_feature"] = geo;
    j["fused_feature"] = fused;
  }
  return j;
}

json to_json(const RunReport& r) {
  json steps = json::array();
  for (const auto& s : r.steps) steps.push_back(to_json(s));
  json j = {{"format_version", r.format_version},
            {"kind", "run_report"},
            {"config", to_json(r.config)},
            {"scenario_checksum", hex64(r.scenario_checksum)},
            {"steps", steps},
            {"retained_sgeb_indices", r.retained_sgeb_indices},
            {"recall", round_sig9(r.recall)},
            {"redundancy", round_sig9(r.redundancy)}};
  if (r.wall_time_seconds) j["wall_time"] = round_sig9(*r.wall_time_seconds);
  return j;
}

json to_json(const CompareReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    std::vector<double> recalls;
    for (double x : c.recalls) recalls.push_back(round_sig9(x));
    cells.push_back({{"policy", std::string(to_string(c.policy))},
                     {"length", c.length},
                     {"recall_mean", round_sig9(c.recall_mean)},
                     {"recall_sd", round_sig9(c.recall_sd)},
                     {"redundancy_mean", round_sig9(c.redundancy_mean)},
                     {"recalls", recalls}});
  }
  json checksums = json::object();
  for (std::size_t l = 0; l < r.config.lengths.size(); ++l) {
    json row = json::array();
    for (std::uint64_t c : r.scenario_checksums[l]) row.push_back(hex64(c));
    checksums[std::to_string(r.config.lengths[l])] = row;
  }
  std::vector<std::string> policies;
  for (Policy p : r.config.policies) policies.emplace_back(to_string(p));
  return {{"format_version", r.format_version},
          {"kind", "compare_report"},
          {"base_config", to_json(r.config.base)},
          {"seeds", r.config.seeds},
          {"lengths", r.config.lengths},
          {"policies", policies},
          {"cells", cells},
          {"scenario_checksums", checksums}};
}

json to_json(const VerifyReport& r) {
  json divergences = json::array();
  for (const auto& d : r.divergences) {
    divergences.push_back({{"seed", d.seed},
                           {"step", d.step},
                           {"check", d.check},
                           {"expected", d.expected},
                           {"actual", d.actual}});
  }
  return {{"format_version", kFormatVersion},
          {"kind", "verify_report"},
          {"passed", r.passed()},
          {"streams", r.streams},
          {"steps_checked", r.steps_checked},
          {"writes_checked", r.writes_checked},
          {"evictions_checked", r.evictions_checked},
          {"ties_seen", r.ties_seen},
          {"divergences", divergences}};
}

json snapshot_to_json(const RunConfig& config, const PipelineState<double>& state) {
  json fgcb_entries = json::array();
  for (const auto& e : state.fgcb.entries) {
    fgcb_entries.push_back({{"frame_index", e.frame_index},
                            {"feature", matrix_json(e.feature)},
                            {"camera", row_data(e.camera)}});
  }
  json sgeb_entries = json::array();
  for (const auto& e : state.sgeb.entries) sgeb_entries.push_back(sgeb_entry_json(e));
  const auto& pol = state.sgeb.policy;
  return {{"format_version", kFormatVersion},
          {"kind", "snapshot"},
          {"config", config_json(config, false)},
          {"state",
           {{"step", state.step},
            {"question", row_data(state.question)},
            {"fgcb", {{"capacity", state.fgcb.capacity}, {"entries", fgcb_entries}}},
            {"sgeb",
             {{"capacity", state.sgeb.capacity},
              {"lambda_r", state.sgeb.lambda_r},
              {"lambda_nu", state.sgeb.lambda_nu},
              {"policy",
               {{"score", enum_name(kScoreNames, pol.score)},
                {"eviction", enum_name(kEvictionNames, pol.eviction)},
                {"similarity", enum_name(kSimilarityNames, pol.similarity)},
                {"tie_break", enum_name(kTieBreakNames, pol.tie_break)}}},
              {"entries", sgeb_entries}}}}}};
}

Snapshot snapshot_from_json(const json& j) {
  const std::string ctx = "snapshot";
  if (field<std::string>(j, "kind", ctx) != "snapshot") {
    throw FormatError(ctx + ": field 'kind': not a snapshot");
  }
  if (field<int>(j, "format_version", ctx) != kFormatVersion) {
    throw FormatError(ctx + ": field 'format_version': unsupported version");
  }
  Snapshot snap;
  snap.config = run_config_from_json(object_field(j, "config", ctx));

  const auto& s = object_field(j, "state", ctx);
  const std::string sctx = ctx + ".state";
  auto& state = snap.state;
  state.step = field<std::size_t>(s, "step", sctx);
  state.question = row_from(s, "question", sctx);

  const auto& f = object_field(s, "fgcb", sctx);
  const std::string fctx = sctx + ".fgcb";
  state.fgcb.capacity = field<std::size_t>(f, "capacity", fctx);
  const auto& fentries = object_field(f, "entries", fctx);
  for (std::size_t i = 0; i < fentries.size(); ++i) {
    const std::string ectx = fctx + ".entries[" + std::to_string(i) + "]";
    FgcbEntry<double> e;
    e.frame_index = field<std::size_t>(fentries[i], "frame_index", ectx);
    e.feature = matrix_from(object_field(fentries[i], "feature", ectx), ectx + ".feature");
    e.camera = row_from(fentries[i], "camera", ectx);
    state.fgcb.entries.push_back(std::move(e));
  }

  const auto& g = object_field(s, "sgeb", sctx);
  const std::string gctx = sctx + ".sgeb";
  state.sgeb.capacity = field<std::size_t>(g, "capacity", gctx);
  state.sgeb.lambda_r = field<double>(g, "lambda_r", gctx);
  state.sgeb.lambda_nu = field<double>(g, "lambda_nu", gctx);
  const auto& pol = object_field(g, "policy", gctx);
  const std::string pctx = gctx + ".policy";
  state.sgeb.policy.score = enum_value(kScoreNames, field<std::string>(pol, "score", pctx), "score");
  state.sgeb.policy.eviction =
      enum_value(kEvictionNames, field<std::string>(pol, "eviction", pctx), "eviction");
  state.sgeb.policy.similarity =
      enum_value(kSimilarityNames, field<std::string>(pol, "similarity", pctx), "similarity");
  state.sgeb.policy.tie_break =
      enum_value(kTieBreakNames, field<std::string>(pol, "tie_break", pctx), "tie_break");
  const auto& gentries = object_field(g, "entries", gctx);
  for (std::size_t i = 0; i < gentries.size(); ++i) {
    const std::string ectx = gctx + ".entries[" + std::to_string(i) + "]";
    SgebEntry<double> e;
    e.frame_index = field<std::size_t>(gentries[i], "frame_index", ectx);
    e.pooled = matrix_from(object_field(gentries[i], "pooled", ectx), ectx + ".pooled");
    e.relevance = field<double>(gentries[i], "relevance", ectx);
    e.novelty = field<double>(gentries[i], "novelty", ectx);
    e.score = field<double>(gentries[i], "score", ectx);
    state.sgeb.entries.push_back(std::move(e));
  }
  if (state.fgcb.entries.size() > state.fgcb.capacity ||
      state.sgeb.entries.size() > state.sgeb.capacity) {
    throw FormatError(sctx + ": bank holds more entries than its capacity");
  }
  return snap;
}

json parse(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(what + ": parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace qgeomem::io
