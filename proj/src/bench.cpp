#include "drate/bench.hpp"

#include "drate/crossfit.hpp"
#include "drate/rng.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

namespace drate {

namespace {

const std::pair<const char*, EstimatorKind> kKinds[] = {
    {"ipw", EstimatorKind::Ipw},        {"gcomp", EstimatorKind::GComp},
    {"aipw", EstimatorKind::Aipw},      {"tmle", EstimatorKind::Tmle},
    {"dc-aipw", EstimatorKind::DcAipw}, {"dc-tmle", EstimatorKind::DcTmle},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

}  // namespace

std::string EstimatorConfig::label() const { return to_string(kind) + ":" + learner; }

void EstimatorConfig::validate() const {
  if (repeats < 1) throw ConfigError("cross-fit repeats must be >= 1");
  if (folds < 2) throw ConfigError("ensemble folds must be >= 2");
  if (bootstrap_reps < 2) throw ConfigError("bootstrap replicates must be >= 2");
  if (!(g_lo > 0.0 && g_lo < g_hi && g_hi < 1.0)) {
    throw ConfigError("propensity bounds must satisfy 0 < lo < hi < 1");
  }
  if (!(iptw.truncate_pct >= 0.0 && iptw.truncate_pct < 0.5)) {
    throw ConfigError("truncation percentile must lie in [0, 0.5)");
  }
  if (!custom) nuisance_learner(learner, Task::Regression, folds);
}

EstimatorConfig parse_estimator(const std::string& text) {
  const std::string t = trim(text);
  const auto colon = t.find(':');
  const std::string kind = t.substr(0, colon);
  EstimatorConfig config;
  bool found = false;
  for (const auto& [name, k] : kKinds) {
    if (kind == name) {
      config.kind = k;
      found = true;
    }
  }
  if (!found) {
    throw ConfigError("unknown estimator '" + kind +
                      "' (expected ipw, gcomp, aipw, tmle, dc-aipw or dc-tmle)");
  }
  if (colon != std::string::npos) config.learner = trim(t.substr(colon + 1));
  if (config.learner.empty()) throw ConfigError("empty learner in '" + t + "'");
  config.validate();
  return config;
}

std::vector<EstimatorConfig> parse_estimator_list(const std::string& text) {
  std::vector<EstimatorConfig> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_estimator(item));
  }
  if (out.empty()) throw ConfigError("estimator list is empty");
  return out;
}

NuisanceLearner nuisance_learner(const std::string& learner, Task task, int folds) {
  if (learner == "smooth" || learner == "nonsmooth" || learner == "both") {
    return make_ensemble(learner, task, folds);
  }
  return learner_from_name(learner, task);
}

AteEstimate run_estimator(const Dataset& data, const EstimatorConfig& config,
                          const FormulaSpec& ps_formula,
                          const FormulaSpec& om_formula, std::uint64_t seed) {
  if (config.custom) return config.custom(data, seed);
  NuisanceConfig nc;
  nc.ps_formula = ps_formula;
  nc.om_formula = om_formula;
  nc.ps_learner = nuisance_learner(config.learner, Task::BinaryProbability, config.folds);
  nc.om_learner = nuisance_learner(config.learner, Task::Regression, config.folds);
  nc.g_lo = config.g_lo;
  nc.g_hi = config.g_hi;

  switch (config.kind) {
    case EstimatorKind::Ipw: {
      const DesignMatrix X = build_design(ps_formula, data);
      const auto model = fit_nuisance_model(nc.ps_learner, X, data.A,
                                            Task::BinaryProbability,
                                            derive_seed(seed, {1}));
      return estimate_iptw(data, model.predict(X), config.iptw);
    }
    case EstimatorKind::GComp: {
      if (!om_formula.treatment) {
        throw ConfigError("g-computation needs the treatment in the outcome formula");
      }
      const auto model = fit_nuisance_model(nc.om_learner, build_design(om_formula, data),
                                            data.Y, Task::Regression,
                                            derive_seed(seed, {2}));
      GcompOptions options;
      options.bootstrap_reps = config.bootstrap_reps;
      options.seed = derive_seed(seed, {3});
      const NuisanceLearner learner = nc.om_learner;
      options.refit = [learner, om_formula](const Dataset& boot, std::uint64_t s) {
        const auto m = fit_nuisance_model(learner, build_design(om_formula, boot), boot.Y,
                                          Task::Regression, s);
        return std::pair<Vector, Vector>(m.predict(build_design(om_formula, boot, 0)),
                                         m.predict(build_design(om_formula, boot, 1)));
      };
      return estimate_gcomp(data, model.predict(build_design(om_formula, data, 0)),
                            model.predict(build_design(om_formula, data, 1)), options);
    }
    case EstimatorKind::Aipw:
      return estimate_aipw(data, fit_nuisance(data, nc, data, seed));
    case EstimatorKind::Tmle:
      return estimate_tmle(data, fit_nuisance(data, nc, data, seed));
    case EstimatorKind::DcAipw:
    case EstimatorKind::DcTmle:
      return dc_estimate(data, config.kind, nc, config.repeats, seed);
  }
  throw ConfigError("unsupported estimator");
}

Simulation kang_schafer_simulation(Index n) {
  Simulation sim;
  sim.name = "kang-schafer";
  sim.draw = [n](std::uint64_t seed) { return generate_kang_schafer(n, seed); };
  sim.true_ate = kKangSchaferAte;
  sim.ps_formula = parse_formula("W1 + W2 + W3 + W4 + W5");
  sim.om_formula = parse_formula("A + W1 + W2 + W3 + W4 + W5");
  return sim;
}

Simulation plasmode_simulation(std::shared_ptr<const PlasmodeGenerator> gen,
                               double true_ate, Index n) {
  Simulation sim;
  sim.name = gen->scenario().name;
  sim.ps_formula = gen->scenario().estimation_ps_formula;
  sim.om_formula = gen->scenario().estimation_om_formula;
  sim.true_ate = true_ate;
  sim.draw = [gen, n](std::uint64_t seed) { return draw_plasmode(*gen, seed, n); };
  return sim;
}

MetricsSummary summarize(const std::string& estimator,
                         const std::vector<ReplicateRecord>& records,
                         double true_ate) {
  MetricsSummary s;
  s.estimator = estimator;
  std::vector<double> bias;
  std::vector<double> se;
  std::vector<double> times;
  int covered = 0;
  for (const auto& r : records) {
    if (r.estimator != estimator) continue;
    if (r.failed) {
      ++s.failures;
      continue;
    }
    bias.push_back(r.psi - true_ate);
    se.push_back(r.se);
    times.push_back(r.seconds);
    if (r.covered) ++covered;
  }
  s.n_replicates = static_cast<int>(bias.size());
  if (bias.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.bias_median = s.se_median = s.coverage = s.mse = s.bvar = s.bias_mean = nan;
    s.time_median = nan;
    return s;
  }
  const double r = static_cast<double>(bias.size());
  s.bias_median = median(bias);
  s.se_median = median(se);
  s.time_median = median(times);
  s.coverage = covered / r;
  double sum = 0.0;
  double sq = 0.0;
  for (const double b : bias) {
    sum += b;
    sq += b * b;
  }
  s.bias_mean = sum / r;
  s.mse = sq / r;
  double ss = 0.0;
  for (const double b : bias) ss += (b - s.bias_mean) * (b - s.bias_mean);
  s.bvar = ss / r;
  return s;
}

BenchResult run_benchmark(const Simulation& simulation,
                          const std::vector<EstimatorConfig>& estimators,
                          const BenchOptions& options) {
  if (options.replicates < 2) throw ConfigError("benchmark needs at least 2 replicates");
  if (options.workers < 1) throw ConfigError("workers must be >= 1");
  if (estimators.empty()) throw ConfigError("no estimators configured");
  for (std::size_t i = 0; i < estimators.size(); ++i) {
    estimators[i].validate();
    for (std::size_t j = 0; j < i; ++j) {
      if (estimators[j].label() == estimators[i].label()) {
        throw ConfigError("estimator '" + estimators[i].label() + "' listed twice");
      }
    }
  }

  const auto R = static_cast<std::size_t>(options.replicates);
  const auto E = estimators.size();
  std::vector<ReplicateRecord> records(R * E);
  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0};
  std::mutex log_mutex;

  auto work = [&] {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= R) return;
      const auto ur = static_cast<std::uint64_t>(r);
      std::optional<SyntheticDraw> draw;
      std::string draw_error;
      try {
        draw = simulation.draw(derive_seed(options.seed, {ur, 0xd1a}));
      } catch (const Error& e) {
        draw_error = std::string("data generation: ") + e.what();
      }
      for (std::size_t e = 0; e < E; ++e) {
        ReplicateRecord& rec = records[r * E + e];
        rec.replicate = static_cast<int>(r);
        rec.estimator = estimators[e].label();
        if (!draw) {
          rec.failed = true;
          rec.error = draw_error;
          continue;
        }
        const auto start = std::chrono::steady_clock::now();
        try {
          const AteEstimate est =
              run_estimator(draw->dataset, estimators[e], simulation.ps_formula,
                            simulation.om_formula,
                            derive_seed(options.seed, {ur, e, 0xe57}));
          if (!std::isfinite(est.psi) || !std::isfinite(est.se)) {
            throw FitError("non-finite estimate");
          }
          rec.psi = est.psi;
          rec.se = est.se;
          rec.ci_lo = est.ci_lo;
          rec.ci_hi = est.ci_hi;
          rec.covered = est.ci_lo <= simulation.true_ate && simulation.true_ate <= est.ci_hi;
        } catch (const Error& ex) {
          rec.failed = true;
          rec.error = ex.what();
        }
        if (options.timing) {
          rec.seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
        }
      }
      const int finished = ++done;
      if (options.progress) {
        std::lock_guard<std::mutex> lock(log_mutex);
        std::cerr << "[bench] " << simulation.name << ": replicate " << finished
                  << "/" << R << '\n';
      }
    }
  };

  const int workers = std::min<int>(options.workers, options.replicates);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  BenchResult result;
  result.records = std::move(records);
  for (const auto& e : estimators) {
    result.summaries.push_back(summarize(e.label(), result.records, simulation.true_ate));
  }
  return result;
}

ReportFormat parse_report_format(const std::string& text) {
  if (text == "csv") return ReportFormat::Csv;
  if (text == "json") return ReportFormat::Json;
  throw ConfigError("unknown report format '" + text + "' (expected csv or json)");
}

namespace {

const char* kReportNote =
    "bvar is the population variance (divisor R) of the estimates across "
    "successful replicates, so mse = bvar + bias_mean^2; bias and se are "
    "medians over replicates; time_s is the median wall time in seconds";

const char* kColumns[] = {"estimator", "bias_x100", "se_x100", "coverage",
                          "mse",       "bvar",      "time_s",  "failures",
                          "bias",      "se",        "bias_mean", "n_replicates"};

std::string num(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_num(const std::string& s) {
  if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw DataError("malformed number '" + s + "' in report");
  return v;
}

nlohmann::ordered_json json_num(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

double from_json(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

std::string format_report(const std::vector<MetricsSummary>& summaries,
                          ReportFormat format) {
  if (summaries.empty()) throw ConfigError("nothing to report");
  if (format == ReportFormat::Json) {
    nlohmann::ordered_json doc;
    doc["note"] = kReportNote;
    doc["summaries"] = nlohmann::ordered_json::array();
    for (const auto& s : summaries) {
      nlohmann::ordered_json row;
      row["estimator"] = s.estimator;
      row["bias_x100"] = json_num(100.0 * s.bias_median);
      row["se_x100"] = json_num(100.0 * s.se_median);
      row["coverage"] = json_num(s.coverage);
      row["mse"] = json_num(s.mse);
      row["bvar"] = json_num(s.bvar);
      row["time_s"] = json_num(s.time_median);
      row["failures"] = s.failures;
      row["bias"] = json_num(s.bias_median);
      row["se"] = json_num(s.se_median);
      row["bias_mean"] = json_num(s.bias_mean);
      row["n_replicates"] = s.n_replicates;
      doc["summaries"].push_back(row);
    }
    return doc.dump(2) + "\n";
  }
  std::ostringstream out;
  out << "# " << kReportNote << '\n';
  for (std::size_t c = 0; c < std::size(kColumns); ++c) {
    out << (c ? "," : "") << kColumns[c];
  }
  out << '\n';
  for (const auto& s : summaries) {
    out << s.estimator << ',' << num(100.0 * s.bias_median) << ','
        << num(100.0 * s.se_median) << ',' << num(s.coverage) << ',' << num(s.mse)
        << ',' << num(s.bvar) << ',' << num(s.time_median) << ',' << s.failures
        << ',' << num(s.bias_median) << ',' << num(s.se_median) << ','
        << num(s.bias_mean) << ',' << s.n_replicates << '\n';
  }
  return out.str();
}

void emit_report(const std::vector<MetricsSummary>& summaries, ReportFormat format,
                 const std::string& path) {
  const std::string text = format_report(summaries, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write report to '" + path + "'");
  out << text;
  if (!out) throw Error("failed writing report to '" + path + "'");
}

std::vector<MetricsSummary> parse_report(const std::string& text, ReportFormat format) {
  std::vector<MetricsSummary> out;
  if (format == ReportFormat::Json) {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& row : doc.at("summaries")) {
      MetricsSummary s;
      s.estimator = row.at("estimator").get<std::string>();
      s.bias_median = from_json(row.at("bias"));
      s.se_median = from_json(row.at("se"));
      s.coverage = from_json(row.at("coverage"));
      s.mse = from_json(row.at("mse"));
      s.bvar = from_json(row.at("bvar"));
      s.time_median = from_json(row.at("time_s"));
      s.failures = row.at("failures").get<int>();
      s.bias_mean = from_json(row.at("bias_mean"));
      s.n_replicates = row.at("n_replicates").get<int>();
      out.push_back(s);
    }
    return out;
  }
  std::istringstream in(text);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != std::size(kColumns)) throw DataError("malformed report row: " + line);
    MetricsSummary s;
    s.estimator = f[0];
    s.coverage = parse_num(f[3]);
    s.mse = parse_num(f[4]);
    s.bvar = parse_num(f[5]);
    s.time_median = parse_num(f[6]);
    s.failures = std::stoi(f[7]);
    s.bias_median = parse_num(f[8]);
    s.se_median = parse_num(f[9]);
    s.bias_mean = parse_num(f[10]);
    s.n_replicates = std::stoi(f[11]);
    out.push_back(s);
  }
  return out;
}

std::string format_replicates(const std::vector<ReplicateRecord>& records) {
  std::ostringstream out;
  out << "replicate,estimator,failed,psi,se,ci_lo,ci_hi,covered,seconds,error\n";
  for (const auto& r : records) {
    std::string err = r.error;
    for (auto& c : err) {
      if (c == ',' || c == '\n' || c == '"') c = ' ';
    }
    out << r.replicate << ',' << r.estimator << ',' << (r.failed ? 1 : 0) << ','
        << num(r.psi) << ',' << num(r.se) << ',' << num(r.ci_lo) << ','
        << num(r.ci_hi) << ',' << (r.covered ? 1 : 0) << ',' << num(r.seconds)
        << ',' << err << '\n';
  }
  return out.str();
}

}  // namespace drate
