#include "rerand/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <ctime>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "rerand/asymptotic.hpp"
#include "rerand/design.hpp"
#include "rerand/error.hpp"
#include "rerand/inference.hpp"
#include "rerand/io.hpp"

namespace rerand {

using Json = nlohmann::ordered_json;

void InputDigest::feed(std::string_view bytes) {
  for (unsigned char c : bytes) {
    state_ ^= c;
    state_ *= 0x100000001b3ULL;
  }
}

void InputDigest::add(std::string_view key, std::string_view value) {
  const std::string klen = std::to_string(key.size()) + ":";
  const std::string vlen = std::to_string(value.size()) + ":";
  feed(klen);
  feed(key);
  feed(vlen);
  feed(value);
}

void InputDigest::add_file(std::string_view key, const std::filesystem::path& path) {
  add(key, read_file(path));
}

std::string InputDigest::hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  std::uint64_t v = state_;
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

namespace {

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json manifest_json(const RunManifest& m) {
  Json j;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["master_seed"] = m.master_seed;
  j["tool_version"] = m.tool_version;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  return j;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ExitCode::kInternal, path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw Error(ExitCode::kInternal, path.string() + ": write failed");
}

std::string join(const std::vector<std::size_t>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

std::optional<TrimSpec> to_trim(const std::vector<double>& values, const std::string& what) {
  if (values.empty()) return std::nullopt;
  if (values.size() != 2) throw ConfigError(what + ": expected LO,HI");
  TrimSpec spec{values[0], values[1]};
  spec.validate();
  return spec;
}

Json trim_json(const std::optional<TrimSpec>& trim) {
  if (!trim) return nullptr;
  return Json{{"lo_q", trim->lo_q}, {"hi_q", trim->hi_q}};
}

// Shared state of one command invocation: seed resolution and manifest.
class Run {
 public:
  Run(std::string command, std::ostream& err)
      : err_(err) {
    manifest_.command = std::move(command);
    manifest_.started_at = utc_now();
    digest_.add("command", manifest_.command);
  }

  std::uint64_t seed(const std::optional<std::uint64_t>& given) {
    if (given) {
      manifest_.master_seed = *given;
    } else {
      std::random_device rd;
      manifest_.master_seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
      err_ << "seed: " << manifest_.master_seed << "\n";
    }
    digest_.add("seed", std::to_string(manifest_.master_seed));
    return manifest_.master_seed;
  }

  InputDigest& digest() { return digest_; }

  Json manifest() {
    manifest_.config_hash = digest_.hex();
    manifest_.finished_at = utc_now();
    return manifest_json(manifest_);
  }

  // CSV outputs carry their manifest next to them, or on stderr.
  void emit_csv(const std::string& csv, const std::string& out_path,
                const std::string& manifest_path, std::ostream& out) {
    const Json m = manifest();
    if (out_path.empty()) {
      out << csv;
    } else {
      write_text(out_path, csv);
    }
    if (!manifest_path.empty()) {
      write_text(manifest_path, dump(Json{{"manifest", m}}));
    } else if (!out_path.empty()) {
      write_text(out_path + ".manifest.json", dump(Json{{"manifest", m}}));
    } else {
      err_ << Json{{"manifest", m}}.dump() << "\n";
    }
  }

  void emit_json(Json body, const std::string& out_path, std::ostream& out) {
    body["manifest"] = manifest();
    if (out_path.empty()) {
      out << dump(body);
    } else {
      write_text(out_path, dump(body));
    }
  }

 private:
  std::ostream& err_;
  RunManifest manifest_;
  InputDigest digest_;
};

FinitePopulation load_covariates(Run& run, const std::string& path,
                                 const std::optional<TrimSpec>& trim) {
  run.digest().add_file("file:" + path, path);
  FinitePopulation pop = read_population_csv(path);
  if (trim) {
    run.digest().add("trim", format_double(trim->lo_q) + "," + format_double(trim->hi_q));
    pop = rerand::trim(pop, *trim);
  }
  return pop;
}

Json summary_json(const MSummary& s) {
  Json j;
  j["min"] = s.min;
  j["mean"] = s.mean;
  j["max"] = s.max;
  j["quantile_levels"] = s.quantile_levels;
  j["quantiles"] = s.quantiles;
  return j;
}

// ---------------------------------------------------------------- design

struct DesignArgs {
  std::string covariates;
  std::size_t n1 = 0;
  std::size_t T = 1;
  std::optional<std::uint64_t> seed;
  std::vector<double> trim;
  std::string out;
  std::string sidecar;
  bool ridge = false;
  unsigned threads = 1;
};

int cmd_design(const DesignArgs& a, std::ostream& out, std::ostream& err) {
  Run run("design", err);
  const auto trim = to_trim(a.trim, "--trim");
  const FinitePopulation pop = load_covariates(run, a.covariates, trim);
  run.digest().add("n1", std::to_string(a.n1));
  run.digest().add("T", std::to_string(a.T));
  run.digest().add("ridge", a.ridge ? "1" : "0");
  if (a.T < 1) throw DomainError("--T must be at least 1");
  const std::uint64_t seed = run.seed(a.seed);

  MomentOptions options;
  options.ridge = a.ridge;
  const MomentSummary moments = compute_moments(pop, a.n1, options);
  const BalanceScorer scorer(pop, moments);
  Stream rng(seed);
  BestChoiceOptions bc;
  bc.threads = a.threads;
  const BestChoiceResult result = best_choice(scorer, a.T, rng, bc);

  std::ostringstream csv;
  write_assignment_csv(csv, pop.unit_ids(), result.chosen);

  Json side;
  side["n"] = pop.n();
  side["n1"] = a.n1;
  side["K"] = pop.k();
  side["T"] = a.T;
  side["m_min"] = result.m_min;
  side["chosen_index"] = result.chosen_index + 1;
  side["tie_count"] = result.tie_count;
  side["seed_info"] = {{"master_seed", result.seed_info.master_seed},
                       {"stream_id", result.seed_info.stream_id}};
  side["m_all_summary"] = summary_json(result.m_summary);
  side["columns"] = pop.covariate_names();
  side["trim"] = trim_json(trim);
  side["ridge"] = moments.ridge;
  side["condition_estimate"] = moments.cond_estimate;

  std::string sidecar = a.sidecar;
  if (sidecar.empty() && !a.out.empty()) {
    sidecar = std::filesystem::path(a.out).replace_extension(".json").string();
  }
  if (a.out.empty()) {
    out << csv.str();
  } else {
    write_text(a.out, csv.str());
  }
  side["manifest"] = run.manifest();
  if (sidecar.empty()) {
    err << side.dump() << "\n";
  } else {
    write_text(sidecar, dump(side));
  }
  return 0;
}

// --------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string assignment;
  std::string outcomes;
  std::string covariates;
  std::string sidecar;
  double alpha = 0.05;
  std::string method = "constrained";
  std::string hc = "hc0";
  std::optional<std::size_t> T;
  std::size_t mc_draws = McConfig{}.draws;
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Rows of `ids` in the order of `order`; every id must be present in both.
std::vector<std::size_t> align(const std::vector<std::string>& order,
                               const std::vector<std::string>& ids, const std::string& what) {
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  std::vector<std::size_t> rows;
  rows.reserve(order.size());
  for (const auto& id : order) {
    const auto it = index.find(id);
    if (it == index.end()) throw UnitMismatch("unit '" + id + "' missing from " + what);
    rows.push_back(it->second);
  }
  if (ids.size() != order.size()) {
    std::set<std::string_view> wanted(order.begin(), order.end());
    for (const auto& id : ids) {
      if (!wanted.count(id)) throw UnitMismatch("unit '" + id + "' only present in " + what);
    }
  }
  return rows;
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
  Run run("analyze", err);
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw DomainError("--alpha must lie in (0, 1)");
  const CiMethod method = parse_method(a.method);
  const HcVariant hc = parse_hc(a.hc);

  run.digest().add_file("file:" + a.assignment, a.assignment);
  run.digest().add_file("file:" + a.outcomes, a.outcomes);
  const LabeledAssignment labeled = read_assignment_csv(a.assignment);
  const LabeledOutcomes outcomes = read_outcomes_csv(a.outcomes);
  const auto y_rows = align(labeled.unit_ids, outcomes.unit_ids, a.outcomes);

  std::optional<std::size_t> T = a.T;
  std::optional<TrimSpec> trim;
  std::vector<std::string> columns;
  bool ridge = false;
  if (!a.sidecar.empty()) {
    run.digest().add_file("file:" + a.sidecar, a.sidecar);
    Json side;
    try {
      side = Json::parse(read_file(a.sidecar));
    } catch (const Json::exception& e) {
      throw ParseError(a.sidecar + ": " + e.what());
    }
    if (!T && side.contains("T")) T = side["T"].get<std::size_t>();
    if (side.contains("trim") && !side["trim"].is_null()) {
      trim = TrimSpec{side["trim"]["lo_q"].get<double>(), side["trim"]["hi_q"].get<double>()};
    }
    if (side.contains("columns")) columns = side["columns"].get<std::vector<std::string>>();
    if (side.contains("ridge")) ridge = side["ridge"].get<double>() > 0.0;
  }

  const auto n = static_cast<Eigen::Index>(labeled.z.size());
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = outcomes.y[y_rows[static_cast<std::size_t>(i)]];
  Assignment z(labeled.z);

  Json body;
  InferenceResult result;
  std::optional<std::size_t> K;
  if (method == CiMethod::kNeyman && a.covariates.empty()) {
    ObservedData data{z, y, Matrix(n, 0)};
    result = ci_neyman(data, a.alpha);
  } else {
    if (a.covariates.empty()) throw ConfigError("--covariates is required for this method");
    FinitePopulation raw = load_covariates(run, a.covariates, std::nullopt);
    const auto x_rows = align(labeled.unit_ids, raw.unit_ids(), a.covariates);
    std::vector<Eigen::Index> cols;
    if (columns.empty()) {
      for (std::size_t c = 0; c < raw.k(); ++c) cols.push_back(static_cast<Eigen::Index>(c));
    } else {
      for (const auto& name : columns) {
        const auto& names = raw.covariate_names();
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) {
          throw ParseError(a.covariates + ": missing column '" + name + "' used by the design");
        }
        cols.push_back(static_cast<Eigen::Index>(it - names.begin()));
      }
    }
    Matrix x(n, static_cast<Eigen::Index>(cols.size()));
    std::vector<std::string> names;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      names.push_back(raw.covariate_names()[static_cast<std::size_t>(cols[j])]);
      for (Eigen::Index i = 0; i < n; ++i) {
        x(i, static_cast<Eigen::Index>(j)) = raw.covariates()(
            static_cast<Eigen::Index>(x_rows[static_cast<std::size_t>(i)]), cols[j]);
      }
    }
    FinitePopulation pop(std::move(x), labeled.unit_ids, std::move(names));
    if (trim) {
      run.digest().add("trim", format_double(trim->lo_q) + "," + format_double(trim->hi_q));
      pop = rerand::trim(pop, *trim);
    }
    K = pop.k();
    MomentOptions options;
    options.ridge = ridge;
    const MomentSummary moments = compute_moments(pop, z.n1(), options);
    const ObservedData data{z, y, pop.covariates()};
    const double tau_hat = diff_in_means(data);
    if (method == CiMethod::kNeyman) {
      result = ci_neyman(data, a.alpha);
    } else {
      const VarianceEstimate v = estimate_variance(data, moments, hc);
      if (method == CiMethod::kWald) {
        result = ci_wald(tau_hat, v, a.alpha);
      } else {
        if (!T) throw ConfigError("--T is required (or a design sidecar recording it)");
        McConfig mc;
        mc.draws = a.mc_draws;
        mc.seed = run.seed(a.seed);
        run.digest().add("mc_draws", std::to_string(mc.draws));
        mc.validate();
        result = ci_constrained(tau_hat, v, pop.k(), *T, a.alpha, mc);
      }
    }
  }
  run.digest().add("alpha", format_double(a.alpha));
  run.digest().add("method", std::string(to_string(method)));
  run.digest().add("hc", std::string(to_string(hc)));
  if (T) run.digest().add("T", std::to_string(*T));

  body["tau_hat"] = result.tau_hat;
  body["Vtt_hat"] = result.Vtt_hat;
  body["R2_hat"] = result.R2_hat;
  body["ci"] = {result.ci_lo, result.ci_hi};
  body["method"] = to_string(method);
  Json meta;
  meta["alpha"] = a.alpha;
  meta["n"] = z.n();
  meta["n1"] = z.n1();
  meta["K"] = K ? Json(*K) : Json(nullptr);
  meta["T"] = T ? Json(*T) : Json(nullptr);
  meta["hc"] = method == CiMethod::kNeyman ? Json(nullptr) : Json(to_string(hc));
  meta["trim"] = trim_json(trim);
  if (result.variance) {
    const VarianceComponents& c = result.variance->components;
    meta["R2_raw"] = result.variance->R2_raw;
    meta["components"] = {{"s2_1", c.s2_1},           {"s2_0", c.s2_0},
                          {"s2_1_proj", c.s2_1_proj}, {"s2_0_proj", c.s2_0_proj},
                          {"s2_tau_proj", c.s2_tau_proj}, {"s2_1_res", c.s2_1_res},
                          {"s2_0_res", c.s2_0_res},   {"hc_factor_1", c.hc_factor_1},
                          {"hc_factor_0", c.hc_factor_0}};
  }
  if (result.mc_meta) {
    meta["mc"] = {{"seed", result.mc_meta->seed},
                  {"draws", result.mc_meta->draws},
                  {"antithetic", result.mc_meta->antithetic},
                  {"multiplier", result.mc_meta->multiplier}};
  }
  body["meta"] = meta;
  run.emit_json(std::move(body), a.out, out);
  return 0;
}

// -------------------------------------------------------------- simulate

Json truth_json(const TruthSummary& t) {
  Json j;
  j["n"] = t.n;
  j["n1"] = t.n1;
  j["K"] = t.K;
  j["tau"] = t.tau;
  j["S2_1"] = t.S2_1;
  j["S2_0"] = t.S2_0;
  j["S2_tau"] = t.S2_tau;
  j["Vtt"] = t.Vtt;
  j["R2"] = t.R2;
  j["S2_tau_res"] = t.S2_tau_res;
  j["gamma_n"] = t.gamma_n;
  j["delta_bound"] = t.delta_bound;
  return j;
}

Json sample_json(const SampleSummary& s) {
  Json j;
  j["count"] = s.count;
  j["mean"] = s.mean;
  j["mean_se"] = s.mean_se;
  j["variance"] = s.variance;
  j["variance_se"] = s.variance_se;
  j["skewness"] = s.skewness;
  j["skewness_se"] = s.skewness_se;
  return j;
}

Json report_json(const SimulationReport& r, const SimulationSpec& spec) {
  Json j;
  Json cfg;
  cfg["population"] = spec.population_path.filename().string();
  cfg["n"] = r.n;
  cfg["n1"] = r.n1;
  cfg["K_used"] = r.K;
  cfg["T"] = r.T;
  cfg["reps"] = r.reps;
  cfg["alpha"] = r.alpha;
  Json methods = Json::array();
  for (CiMethod m : spec.config.methods) methods.push_back(to_string(m));
  cfg["methods"] = methods;
  Json hcs = Json::array();
  for (HcVariant h : spec.config.hc_variants) hcs.push_back(to_string(h));
  cfg["hc"] = hcs;
  cfg["seed"] = r.master_seed;
  cfg["mc_draws"] = r.mc_draws;
  cfg["mc_seed"] = spec.config.mc.seed;
  cfg["baseline_cre"] = spec.config.baseline_cre;
  cfg["trim"] = trim_json(spec.trim);
  j["config"] = cfg;
  j["reps_completed"] = r.reps_completed;
  j["truth"] = truth_json(r.truth);
  Json estimators = Json::array();
  for (const auto& e : r.estimators) {
    estimators.push_back({{"design", to_string(e.design)},
                          {"rmse", e.rmse},
                          {"error", sample_json(e.error)}});
  }
  j["estimators"] = estimators;
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    Json cell;
    cell["design"] = to_string(c.design);
    cell["method"] = to_string(c.method);
    cell["hc"] = c.hc ? Json(to_string(*c.hc)) : Json(nullptr);
    cell["bias"] = c.bias;
    cell["bias_se"] = c.bias_se;
    cell["rmse"] = c.rmse;
    cell["rmse_se"] = c.rmse_se;
    cell["coverage"] = c.coverage;
    cell["coverage_se"] = c.coverage_se;
    cell["mean_length"] = c.mean_length;
    cell["length_se"] = c.length_se;
    cell["length_reduction"] = c.length_reduction ? Json(*c.length_reduction) : Json(nullptr);
    cells.push_back(cell);
  }
  j["cells"] = cells;
  return j;
}

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<unsigned> threads;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& err) {
  Run run("simulate", err);
  SimulationSpec spec = load_simulation_config(a.config);
  if (a.threads) spec.config.threads = *a.threads;
  run.digest().add_file("file:config", a.config);
  run.digest().add_file("file:population", spec.population_path);
  spec.config.master_seed = run.seed(
      spec.seed_given ? std::optional<std::uint64_t>(spec.config.master_seed) : std::nullopt);
  const SimulationReport report = run_replications(spec.config);
  Json body = report_json(report, spec);
  body["manifest"] = run.manifest();
  write_text(a.out + ".json", dump(body));
  write_text(a.out + ".csv", simulation_csv(report));
  return 0;
}

// -------------------------------------------------------------- diagnose

struct DiagnoseArgs {
  std::vector<std::size_t> K;
  std::vector<std::size_t> T;
  std::size_t mc_draws = McConfig{}.draws;
  std::optional<std::uint64_t> seed;
  std::string covariates;
  std::string population;
  std::size_t n1 = 0;
  std::optional<std::size_t> K_used;
  std::size_t reps = 0;
  std::vector<double> trim;
  unsigned threads = 1;
  std::string out;
  std::string manifest;
};

McConfig diagnose_mc(Run& run, const DiagnoseArgs& a) {
  McConfig mc;
  mc.draws = a.mc_draws;
  mc.seed = run.seed(a.seed);
  mc.threads = a.threads;
  mc.validate();
  run.digest().add("mc_draws", std::to_string(mc.draws));
  return mc;
}

int diagnose_vkt(const DiagnoseArgs& a, std::ostream& out, std::ostream& err) {
  Run run("diagnose vkt", err);
  if (a.K.empty() || a.T.empty()) throw ConfigError("--K and --T lists are required");
  run.digest().add("K", join(a.K));
  run.digest().add("T", join(a.T));
  const McConfig mc = diagnose_mc(run, a);
  std::ostringstream csv;
  csv << "K";
  for (std::size_t t : a.T) csv << ",T_" << t;
  csv << "\n";
  for (std::size_t k : a.K) {
    csv << k;
    for (std::size_t t : a.T) csv << ',' << format_double(variance_vKT(k, t, mc).value);
    csv << "\n";
  }
  run.emit_csv(csv.str(), a.out, a.manifest, out);
  return 0;
}

int diagnose_regime(const DiagnoseArgs& a, std::ostream& out, std::ostream& err) {
  Run run("diagnose regime", err);
  if (a.K.size() != 1 || a.T.size() != 1) throw ConfigError("--K and --T take one value each");
  run.digest().add("K", join(a.K));
  run.digest().add("T", join(a.T));
  const McConfig mc = diagnose_mc(run, a);
  const RegimeDiagnostic d = regime_classify(a.K[0], a.T[0], mc);
  Json body;
  body["K"] = d.K;
  body["T"] = d.T;
  body["ratio"] = d.ratio;
  body["v"] = d.v.value;
  body["v_std_error"] = d.v.std_error;
  body["label"] = d.label;
  run.emit_json(std::move(body), a.out, out);
  return 0;
}

FinitePopulation diagnose_population(Run& run, const DiagnoseArgs& a) {
  if (a.covariates.empty()) throw ConfigError("--covariates is required");
  FinitePopulation pop = load_covariates(run, a.covariates, to_trim(a.trim, "--trim"));
  if (a.K_used) {
    if (*a.K_used < 1 || *a.K_used > pop.k()) {
      throw ConfigError("--K-used: " + std::to_string(*a.K_used) + " outside 1.." +
                        std::to_string(pop.k()));
    }
    run.digest().add("K_used", std::to_string(*a.K_used));
    pop = pop.first_columns(*a.K_used);
  }
  run.digest().add("n1", std::to_string(a.n1));
  return pop;
}

int diagnose_propensity(const DiagnoseArgs& a, std::ostream& out, std::ostream& err) {
  Run run("diagnose propensity", err);
  const FinitePopulation pop = diagnose_population(run, a);
  if (a.T.size() != 1) throw ConfigError("--T takes one value");
  run.digest().add("T", join(a.T));
  run.digest().add("reps", std::to_string(a.reps));
  Stream rng(run.seed(a.seed));
  const PropensityEstimate est = estimate_propensities(pop, a.n1, a.T[0], a.reps, rng, a.threads);
  std::ostringstream csv;
  csv << "unit_id,propensity,std_error\n";
  for (std::size_t i = 0; i < pop.n(); ++i) {
    csv << csv_field(pop.unit_ids()[i]) << ',' << format_double(est.propensity[i]) << ','
        << format_double(est.std_error[i]) << "\n";
  }
  run.emit_csv(csv.str(), a.out, a.manifest, out);
  return 0;
}

int diagnose_worstcase(const DiagnoseArgs& a, std::ostream& out, std::ostream& err) {
  Run run("diagnose worstcase", err);
  const FinitePopulation pop = diagnose_population(run, a);
  if (a.T.empty()) throw ConfigError("--T list is required");
  run.digest().add("T", join(a.T));
  run.digest().add("reps", std::to_string(a.reps));
  const std::uint64_t seed = run.seed(a.seed);
  Json results = Json::array();
  for (std::size_t i = 0; i < a.T.size(); ++i) {
    Stream rng = Stream(seed).child(i);
    const WorstCaseResult w = worst_case_mse(pop, a.n1, a.T[i], a.reps, rng, a.threads);
    results.push_back({{"T", w.T}, {"worst_bias", w.worst_bias}, {"worst_rmse", w.worst_rmse}});
  }
  Json body;
  body["n"] = pop.n();
  body["n1"] = a.n1;
  body["K"] = pop.k();
  body["reps"] = a.reps;
  body["trim"] = trim_json(to_trim(a.trim, "--trim"));
  body["results"] = results;
  run.emit_json(std::move(body), a.out, out);
  return 0;
}

int diagnose_gamma(const DiagnoseArgs& a, std::ostream& out, std::ostream& err) {
  Run run("diagnose gamma", err);
  if (a.population.empty()) throw ConfigError("--population is required");
  run.digest().add_file("file:" + a.population, a.population);
  FinitePopulation pop = read_population_csv(a.population);
  if (!pop.has_outcomes()) {
    throw ParseError(a.population + ": columns y1 and y0 are required");
  }
  if (const auto trim = to_trim(a.trim, "--trim")) pop = rerand::trim(pop, *trim);
  const std::size_t k = a.K_used.value_or(pop.k());
  if (k < 1 || k > pop.k()) throw ConfigError("--K-used: outside 1.." + std::to_string(pop.k()));
  run.digest().add("n1", std::to_string(a.n1));
  run.digest().add("K_used", std::to_string(k));
  const TruthSummary t = compute_truth(pop, a.n1, k);
  if (!std::isfinite(t.gamma_n)) {
    throw SingularCovariates(
        "gamma_n undefined: the outcome combination is linear in the covariates");
  }
  run.emit_json(truth_json(t), a.out, out);
  return 0;
}

}  // namespace

// ------------------------------------------------------ simulate config

namespace {

std::string trimmed(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    const std::string item = trimmed(std::string_view(text).substr(pos, end - pos));
    if (!item.empty()) items.push_back(item);
    pos = end + 1;
  }
  return items;
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config." + key + ": invalid value '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config." + key + ": expected true or false, found '" + text + "'");
}

}  // namespace

SimulationSpec parse_simulation_config(std::string_view text,
                                       const std::filesystem::path& base_dir) {
  static const std::set<std::string> kKnown = {
      "population", "n1",       "K_used",       "T",       "reps",  "alpha",  "methods",
      "hc",         "seed",     "mc_draws",     "mc_seed", "baseline_cre", "threads", "trim"};
  std::map<std::string, std::string> kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trimmed(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trimmed(std::string_view(line).substr(0, eq));
    const std::string value = trimmed(std::string_view(line).substr(eq + 1));
    if (!kKnown.count(key)) throw ConfigError("config." + key + ": unknown field");
    if (!kv.emplace(key, value).second) throw ConfigError("config." + key + ": given twice");
  }
  for (const char* required : {"population", "n1", "T"}) {
    if (!kv.count(required)) throw ConfigError(std::string("config.") + required + ": required");
  }

  std::filesystem::path pop_path = kv["population"];
  if (pop_path.is_relative()) pop_path = base_dir / pop_path;
  FinitePopulation pop = [&] {
    try {
      return read_population_csv(pop_path);
    } catch (const ParseError& e) {
      throw ConfigError(std::string("config.population: ") + e.what());
    }
  }();
  if (!pop.has_outcomes()) {
    throw ConfigError("config.population: " + pop_path.string() +
                      " needs y1 and y0 columns for simulation");
  }

  std::optional<TrimSpec> trim;
  if (kv.count("trim") && kv["trim"] != "none") {
    const auto parts = split_list(kv["trim"]);
    if (parts.size() != 2) throw ConfigError("config.trim: expected LO,HI or none");
    TrimSpec spec{parse_value<double>("trim", parts[0]), parse_value<double>("trim", parts[1])};
    try {
      spec.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("config.trim: ") + e.what());
    }
    trim = spec;
    pop = rerand::trim(pop, spec);
  }

  SimConfig cfg{.population = pop};
  cfg.n1 = parse_value<std::size_t>("n1", kv["n1"]);
  cfg.T = parse_value<std::size_t>("T", kv["T"]);
  cfg.K_used = kv.count("K_used") ? parse_value<std::size_t>("K_used", kv["K_used"]) : pop.k();
  if (kv.count("reps")) cfg.reps = parse_value<std::size_t>("reps", kv["reps"]);
  if (kv.count("alpha")) cfg.alpha = parse_value<double>("alpha", kv["alpha"]);
  if (kv.count("methods")) {
    cfg.methods.clear();
    for (const auto& m : split_list(kv["methods"])) {
      try {
        cfg.methods.push_back(parse_method(m));
      } catch (const Error&) {
        throw ConfigError("config.methods: unknown method '" + m + "'");
      }
    }
  }
  if (kv.count("hc")) {
    cfg.hc_variants.clear();
    for (const auto& h : split_list(kv["hc"])) {
      try {
        cfg.hc_variants.push_back(parse_hc(h));
      } catch (const Error&) {
        throw ConfigError("config.hc: unknown variant '" + h + "'");
      }
    }
  }
  const bool seed_given = kv.count("seed") > 0;
  if (seed_given) cfg.master_seed = parse_value<std::uint64_t>("seed", kv["seed"]);
  if (kv.count("mc_draws")) cfg.mc.draws = parse_value<std::size_t>("mc_draws", kv["mc_draws"]);
  if (kv.count("mc_seed")) cfg.mc.seed = parse_value<std::uint64_t>("mc_seed", kv["mc_seed"]);
  if (kv.count("baseline_cre")) cfg.baseline_cre = parse_bool("baseline_cre", kv["baseline_cre"]);
  if (kv.count("threads")) cfg.threads = parse_value<unsigned>("threads", kv["threads"]);
  cfg.mc.threads = cfg.threads;
  cfg.validate();
  return SimulationSpec{pop_path, std::move(cfg), trim, seed_given};
}

SimulationSpec load_simulation_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return parse_simulation_config(text, path.parent_path());
}

std::string simulation_csv(const SimulationReport& r) {
  std::ostringstream csv;
  csv << "K,T,design,method,hc,bias,bias_se,rmse,rmse_se,coverage,coverage_se,mean_length,"
         "length_se,length_reduction\n";
  for (const auto& c : r.cells) {
    csv << r.K << ',' << r.T << ',' << to_string(c.design) << ',' << to_string(c.method) << ','
        << (c.hc ? to_string(*c.hc) : std::string_view()) << ',' << format_double(c.bias) << ','
        << format_double(c.bias_se) << ',' << format_double(c.rmse) << ','
        << format_double(c.rmse_se) << ',' << format_double(c.coverage) << ','
        << format_double(c.coverage_se) << ',' << format_double(c.mean_length) << ','
        << format_double(c.length_se) << ','
        << (c.length_reduction ? format_double(*c.length_reduction) : std::string()) << "\n";
  }
  return csv.str();
}

// ------------------------------------------------------------- dispatch

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Best-choice rerandomization: design, analysis, simulation, diagnostics",
               "rerand"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  DesignArgs design;
  auto* design_cmd = app.add_subcommand("design", "Draw a best-choice rerandomized assignment");
  design_cmd->add_option("--covariates", design.covariates, "Covariate CSV")->required();
  design_cmd->add_option("--n1", design.n1, "Number of treated units")->required();
  design_cmd->add_option("--T", design.T, "Complete randomizations to try")->required();
  design_cmd->add_option("--seed", design.seed, "Master seed (drawn and printed if absent)");
  design_cmd->add_option("--trim", design.trim, "Winsorize covariates at quantiles LO,HI")
      ->delimiter(',')
      ->expected(2);
  design_cmd->add_option("--out", design.out, "Assignment CSV (default: stdout)");
  design_cmd->add_option("--sidecar", design.sidecar, "Sidecar JSON (default: OUT with .json)");
  design_cmd->add_flag("--ridge", design.ridge, "Add 1e-8 trace/K ridge to S2x");
  design_cmd->add_option("--threads", design.threads, "Worker threads (0 = all cores)");

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Confidence interval for the average effect");
  analyze_cmd->add_option("--assignment", analyze.assignment, "Assignment CSV (unit_id,z)")
      ->required();
  analyze_cmd->add_option("--outcomes", analyze.outcomes, "Outcome CSV (unit_id,y)")->required();
  analyze_cmd->add_option("--covariates", analyze.covariates, "Covariate CSV");
  analyze_cmd->add_option("--design-sidecar", analyze.sidecar, "Sidecar JSON written by design");
  analyze_cmd->add_option("--alpha", analyze.alpha, "Significance level");
  analyze_cmd->add_option("--method", analyze.method, "constrained | wald | neyman");
  analyze_cmd->add_option("--hc", analyze.hc, "hc0 | hc1 | hc2 | hc3");
  analyze_cmd->add_option("--T", analyze.T, "Randomizations tried by the design");
  analyze_cmd->add_option("--mc-draws", analyze.mc_draws, "Monte Carlo draws for the quantile");
  analyze_cmd->add_option("--seed", analyze.seed, "Monte Carlo seed (drawn if absent)");
  analyze_cmd->add_option("--out", analyze.out, "Output JSON (default: stdout)");

  SimulateArgs simulate;
  auto* simulate_cmd = app.add_subcommand("simulate", "Repeated-sampling evaluation");
  simulate_cmd->add_option("--config", simulate.config, "Key = value config file")->required();
  simulate_cmd->add_option("--out", simulate.out, "Output prefix for .json and .csv")
      ->required();
  simulate_cmd->add_option("--threads", simulate.threads, "Override config threads");

  DiagnoseArgs diag;
  auto* diagnose_cmd = app.add_subcommand("diagnose", "Design diagnostics");
  diagnose_cmd->require_subcommand(1);
  auto add_common = [&diag](CLI::App* cmd) {
    cmd->add_option("--seed", diag.seed, "Seed (drawn and printed if absent)");
    cmd->add_option("--out", diag.out, "Output file (default: stdout)");
    cmd->add_option("--threads", diag.threads, "Worker threads (0 = all cores)");
  };
  auto add_population = [&diag](CLI::App* cmd, std::string_view reps_help) {
    cmd->add_option("--covariates", diag.covariates, "Covariate CSV")->required();
    cmd->add_option("--n1", diag.n1, "Number of treated units")->required();
    cmd->add_option("--K-used", diag.K_used, "Use the first K covariates");
    cmd->add_option("--reps", diag.reps, std::string(reps_help));
    cmd->add_option("--trim", diag.trim, "Winsorize covariates at quantiles LO,HI")
        ->delimiter(',')
        ->expected(2);
  };
  auto* vkt_cmd = diagnose_cmd->add_subcommand("vkt", "Grid of v_{K,T}");
  vkt_cmd->add_option("--K", diag.K, "Comma-separated K values")->delimiter(',')->required();
  vkt_cmd->add_option("--T", diag.T, "Comma-separated T values")->delimiter(',')->required();
  vkt_cmd->add_option("--mc-draws", diag.mc_draws, "Monte Carlo draws per cell");
  vkt_cmd->add_option("--manifest", diag.manifest, "Manifest JSON path");
  add_common(vkt_cmd);
  auto* regime_cmd = diagnose_cmd->add_subcommand("regime", "Design regime classifier");
  regime_cmd->add_option("--K", diag.K, "Number of covariates")->required();
  regime_cmd->add_option("--T", diag.T, "Randomizations tried")->required();
  regime_cmd->add_option("--mc-draws", diag.mc_draws, "Monte Carlo draws");
  add_common(regime_cmd);
  auto* prop_cmd = diagnose_cmd->add_subcommand("propensity", "Per-unit treatment probabilities");
  prop_cmd->add_option("--T", diag.T, "Randomizations tried")->required();
  prop_cmd->add_option("--manifest", diag.manifest, "Manifest JSON path");
  add_population(prop_cmd, "Monte Carlo replications (default 10000)");
  add_common(prop_cmd);
  auto* worst_cmd = diagnose_cmd->add_subcommand("worstcase", "Worst-case bias and RMSE");
  worst_cmd->add_option("--T", diag.T, "Comma-separated T values")->delimiter(',')->required();
  add_population(worst_cmd, "Monte Carlo replications (default 100000)");
  add_common(worst_cmd);
  auto* gamma_cmd = diagnose_cmd->add_subcommand("gamma", "Berry-Esseen quantity gamma_n");
  gamma_cmd->add_option("--population", diag.population, "CSV with y1 and y0")->required();
  gamma_cmd->add_option("--n1", diag.n1, "Number of treated units")->required();
  gamma_cmd->add_option("--K-used", diag.K_used, "Use the first K covariates");
  gamma_cmd->add_option("--trim", diag.trim, "Winsorize covariates at quantiles LO,HI")
      ->delimiter(',')
      ->expected(2);
  add_common(gamma_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*design_cmd) return cmd_design(design, out, err);
    if (*analyze_cmd) return cmd_analyze(analyze, out, err);
    if (*simulate_cmd) return cmd_simulate(simulate, err);
    if (*vkt_cmd) return diagnose_vkt(diag, out, err);
    if (*regime_cmd) return diagnose_regime(diag, out, err);
    if (*prop_cmd) {
      if (diag.reps == 0) diag.reps = 10000;
      return diagnose_propensity(diag, out, err);
    }
    if (*worst_cmd) {
      if (diag.reps == 0) diag.reps = 100000;
      return diagnose_worstcase(diag, out, err);
    }
    if (*gamma_cmd) return diagnose_gamma(diag, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kInternal);
  }
  return static_cast<int>(ExitCode::kUsage);
}

}  // namespace rerand
