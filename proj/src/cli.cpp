#include "drate/cli.hpp"

#include "drate/formula.hpp"
#include "drate/io.hpp"
#include "drate/plasmode.hpp"
#include "drate/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace drate {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr const char* kKangSchafer = "kang-schafer";
const char* const kCommands[] = {"estimate", "simulate", "bench"};

struct HelpRequested {
  std::string text;
};

Json config_json(const RunConfig& c) {
  Json j;
  j["command"] = c.command;
  j["data"] = c.data;
  j["preset"] = c.preset;
  j["treatment"] = c.treatment;
  j["outcome"] = c.outcome;
  j["ps-formula"] = c.ps_formula;
  j["om-formula"] = c.om_formula;
  j["estimators"] = c.estimators;
  j["replicates"] = c.replicates;
  j["repeats"] = c.repeats;
  j["folds"] = c.folds;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["out"] = c.out;
  j["format"] = c.format;
  j["rows"] = c.n;
  j["truth-sims"] = c.truth_sims;
  j["source-seed"] = c.source_seed;
  j["truncate"] = c.truncate;
  j["stabilize"] = c.stabilize;
  j["g-lo"] = c.g_lo;
  j["g-hi"] = c.g_hi;
  j["bootstrap"] = c.bootstrap;
  j["timing"] = c.timing;
  j["progress"] = c.progress;
  return j;
}

RunConfig config_from_json(const Json& j, const std::string& config_path) {
  RunConfig c;
  c.command = j.at("command").get<std::string>();
  c.data = j.at("data").get<std::string>();
  c.preset = j.at("preset").get<std::string>();
  c.treatment = j.at("treatment").get<std::string>();
  c.outcome = j.at("outcome").get<std::string>();
  c.ps_formula = j.at("ps-formula").get<std::string>();
  c.om_formula = j.at("om-formula").get<std::string>();
  c.estimators = j.at("estimators").get<std::string>();
  c.replicates = j.at("replicates").get<int>();
  c.repeats = j.at("repeats").get<int>();
  c.folds = j.at("folds").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.workers = j.at("workers").get<int>();
  c.out = j.at("out").get<std::string>();
  c.format = j.at("format").get<std::string>();
  c.n = j.at("rows").get<Index>();
  c.truth_sims = j.at("truth-sims").get<int>();
  c.source_seed = j.at("source-seed").get<std::uint64_t>();
  c.truncate = j.at("truncate").get<double>();
  c.stabilize = j.at("stabilize").get<bool>();
  c.g_lo = j.at("g-lo").get<double>();
  c.g_hi = j.at("g-hi").get<double>();
  c.bootstrap = j.at("bootstrap").get<int>();
  c.timing = j.at("timing").get<bool>();
  c.progress = j.at("progress").get<bool>();
  c.config = config_path;
  return c;
}

/// Command-line option that sets a config key.
std::string option_for(const std::string& key) {
  if (key == "stabilize") return "--no-stabilize";
  if (key == "timing") return "--no-timing";
  if (key == "command") return "command";
  return "--" + key;
}

void flatten(const nlohmann::json& node, const std::string& section,
             std::vector<std::pair<std::string, nlohmann::json>>& out) {
  for (const auto& [key, value] : node.items()) {
    std::string k = key;
    std::replace(k.begin(), k.end(), '_', '-');
    if (value.is_object()) {
      flatten(value, section.empty() ? k : section + "." + k, out);
    } else {
      out.emplace_back(k, value);
    }
  }
}

RunConfig apply_config_file(const RunConfig& base, const CLI::App& app,
                            std::ostream& warnings) {
  std::ifstream in(base.config);
  if (!in) throw ConfigError("cannot open config file '" + base.config + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + base.config + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
  std::vector<std::pair<std::string, nlohmann::json>> entries;
  flatten(doc, "", entries);

  Json merged = config_json(base);
  for (const auto& [key, value] : entries) {
    if (!merged.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    Json updated = merged;
    updated[key] = value;
    try {
      (void)config_from_json(updated, base.config);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + key + "' has the wrong type");
    }
    const std::string opt = option_for(key);
    const CLI::Option* given = app.get_option_no_throw(opt);
    if (given != nullptr && given->count() > 0 && merged[key] != updated[key]) {
      warnings << "warning: config file sets " << key << " = " << updated[key].dump()
               << ", overriding the command-line value " << merged[key].dump() << '\n';
    }
    merged = std::move(updated);
  }
  return config_from_json(merged, base.config);
}

std::string join_mains(const std::vector<std::string>& names, const std::string& prefix) {
  std::string text = prefix;
  for (const auto& n : names) text += (text.empty() ? "" : " + ") + n;
  return text.empty() ? "1" : text;
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

fs::path make_output_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--out directory is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error("cannot create output directory '" + dir + "'");
  }
  return fs::path(dir);
}

Json manifest(const RunConfig& config) {
  Json m;
  m["version"] = kVersion;
  m["command"] = config.command;
  m["seed"] = config.seed;
  m["config"] = config_json(config);
  return m;
}

FormulaSpec formula_or(const std::string& text, const FormulaSpec& fallback,
                       const std::string& exposure) {
  return text.empty() ? fallback : parse_formula(text, exposure);
}

}  // namespace

void RunConfig::validate() const {
  if (std::find(std::begin(kCommands), std::end(kCommands), command) == std::end(kCommands)) {
    throw ConfigError("unknown command '" + command + "' (expected estimate, simulate or bench)");
  }
  if (command == "estimate" && data.empty()) throw ConfigError("estimate needs --data");
  if (command != "estimate" && preset.empty()) {
    throw ConfigError(command + " needs --preset");
  }
  if (command == "simulate" && out.empty()) throw ConfigError("simulate needs --out");
  if (!preset.empty()) {
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), preset) == names.end()) {
      std::string list;
      for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
      throw ConfigError("unknown preset '" + preset + "' (expected one of " + list + ")");
    }
  }
  if (replicates < (command == "bench" ? 2 : 1)) {
    throw ConfigError(command == "bench" ? "bench needs --replicates >= 2"
                                         : "--replicates must be >= 1");
  }
  if (workers < 1) throw ConfigError("--workers must be >= 1");
  if (n < 0) throw ConfigError("--rows must be >= 0");
  if (truth_sims < 2) throw ConfigError("--truth-sims must be >= 2");
  parse_report_format(format);
  if (!ps_formula.empty()) parse_formula(ps_formula, treatment);
  if (!om_formula.empty()) parse_formula(om_formula, treatment);
  estimator_configs();
}

std::vector<EstimatorConfig> RunConfig::estimator_configs() const {
  auto list = parse_estimator_list(estimators);
  for (auto& e : list) {
    e.repeats = repeats;
    e.folds = folds;
    e.iptw = {stabilize, truncate};
    e.bootstrap_reps = bootstrap;
    e.g_lo = g_lo;
    e.g_hi = g_hi;
    e.validate();
  }
  return list;
}

std::string RunConfig::to_json() const { return config_json(*this).dump(2); }

std::vector<std::string> preset_names() {
  std::vector<std::string> names = {kKangSchafer};
  for (const auto& p : scenario_preset_names()) names.push_back(p);
  return names;
}

RunConfig parse_command_line(const std::vector<std::string>& args, std::ostream& warnings) {
  RunConfig c;
  CLI::App app{"Doubly robust ATE estimation and simulation benchmarks", "drate"};
  app.set_help_flag("-h,--help", "Show this help");
  app.add_option("command", c.command, "estimate | simulate | bench")->required();
  app.add_option("--data", c.data, "Dataset CSV (estimate) or plasmode source CSV");
  app.add_option("--preset", c.preset, "kang-schafer or a plasmode scenario preset");
  app.add_option("--treatment", c.treatment, "Treatment column name")->capture_default_str();
  app.add_option("--outcome", c.outcome, "Outcome column name")->capture_default_str();
  app.add_option("--ps-formula", c.ps_formula, "Propensity formula");
  app.add_option("--om-formula", c.om_formula, "Outcome formula (includes the treatment)");
  app.add_option("--estimators", c.estimators, "Comma list such as ipw,aipw:glm,dc-tmle:smooth")
      ->capture_default_str();
  app.add_option("--replicates", c.replicates, "Simulated replicates")->capture_default_str();
  app.add_option("--repeats", c.repeats, "Cross-fit repeats")->capture_default_str();
  app.add_option("--folds", c.folds, "Ensemble cross-validation folds")->capture_default_str();
  app.add_option("--seed", c.seed, "Master seed")->capture_default_str();
  app.add_option("--workers", c.workers, "Benchmark worker threads")->capture_default_str();
  app.add_option("--out", c.out, "Output file (estimate) or directory");
  app.add_option("--format", c.format, "csv or json")->capture_default_str();
  app.add_option("-n,--rows", c.n, "Rows per simulated dataset (0 = preset default)");
  app.add_option("--truth-sims", c.truth_sims, "Monte Carlo draws for plasmode truths")
      ->capture_default_str();
  app.add_option("--source-seed", c.source_seed, "Seed of the surrogate plasmode source")
      ->capture_default_str();
  app.add_option("--truncate", c.truncate, "IPW weight truncation percentile")
      ->capture_default_str();
  bool no_stabilize = false;
  app.add_flag("--no-stabilize", no_stabilize, "Unstabilized IPW weights");
  app.add_option("--g-lo", c.g_lo, "Lower propensity bound")->capture_default_str();
  app.add_option("--g-hi", c.g_hi, "Upper propensity bound")->capture_default_str();
  app.add_option("--bootstrap", c.bootstrap, "g-computation bootstrap replicates")
      ->capture_default_str();
  bool no_timing = false;
  app.add_flag("--no-timing", no_timing, "Record zero wall time (byte-stable reports)");
  app.add_flag("--progress", c.progress, "Log benchmark progress");
  app.add_option("--config", c.config, "JSON config file; its values win over flags");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested{app.help()};
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }
  c.stabilize = !no_stabilize;
  c.timing = !no_timing;
  if (!c.config.empty()) c = apply_config_file(c, app, warnings);
  c.validate();
  return c;
}

PresetSimulation make_preset_simulation(const RunConfig& config) {
  PresetSimulation out;
  if (config.preset == kKangSchafer) {
    out.n = config.n > 0 ? config.n : 600;
    out.simulation = kang_schafer_simulation(out.n);
  } else {
    Dataset source;
    if (config.data.empty()) {
      source = generate_surrogate_source(1178, 331, config.source_seed);
    } else {
      source = read_dataset_csv(config.data, config.treatment, config.outcome);
      source.treatment_name = "A";
      source.outcome_name = "Y";
    }
    auto gen = std::make_shared<const PlasmodeGenerator>(
        make_plasmode_generator(source, scenario_preset(config.preset)));
    const TrueAte truth =
        compute_true_ate(*gen, config.truth_sims, derive_seed(config.seed, {0x7a}));
    out.n = config.n > 0 ? config.n : source.rows();
    out.simulation = plasmode_simulation(gen, truth.value, config.n);
    out.true_ate_mc_se = truth.mc_se;
  }
  out.simulation.ps_formula = formula_or(config.ps_formula, out.simulation.ps_formula, "A");
  out.simulation.om_formula = formula_or(config.om_formula, out.simulation.om_formula, "A");
  return out;
}

void cmd_estimate(const RunConfig& config, std::ostream& out) {
  const Dataset data = read_dataset_csv(config.data, config.treatment, config.outcome);
  data.validate();
  const FormulaSpec ps = parse_formula(
      config.ps_formula.empty() ? join_mains(data.covariate_names, "") : config.ps_formula,
      config.treatment);
  const FormulaSpec om = parse_formula(
      config.om_formula.empty() ? join_mains(data.covariate_names, config.treatment)
                                : config.om_formula,
      config.treatment);
  const auto estimators = config.estimator_configs();

  Json rows = Json::array();
  std::ostringstream csv;
  csv << "estimator,psi,se,ci_lo,ci_hi,n,diagnostics\n";
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    const AteEstimate est =
        run_estimator(data, estimators[e], ps, om, derive_seed(config.seed, {e}));
    Json row;
    row["estimator"] = estimators[e].label();
    row["psi"] = est.psi;
    row["se"] = est.se;
    row["ci_lo"] = est.ci_lo;
    row["ci_hi"] = est.ci_hi;
    row["n"] = est.n;
    row["diagnostics"] = Json::object();
    std::string diag;
    for (const auto& [k, v] : est.diagnostics) {
      row["diagnostics"][k] = v;
      diag += (diag.empty() ? "" : ";") + k + "=" + number(v);
    }
    rows.push_back(row);
    csv << estimators[e].label() << ',' << number(est.psi) << ',' << number(est.se) << ','
        << number(est.ci_lo) << ',' << number(est.ci_hi) << ',' << est.n << ',' << diag
        << '\n';
  }

  Json doc;
  doc["ps_formula"] = render(ps);
  doc["om_formula"] = render(om);
  doc["estimates"] = rows;
  const std::string text =
      parse_report_format(config.format) == ReportFormat::Json ? doc.dump(2) + "\n" : csv.str();
  if (config.out.empty()) {
    out << text;
    return;
  }
  write_text(config.out, text);
  Json m = manifest(config);
  m["ps_formula"] = render(ps);
  m["om_formula"] = render(om);
  m["rows"] = data.rows();
  write_text(config.out + ".manifest.json", m.dump(2) + "\n");
  out << "wrote " << config.out << '\n';
}

void cmd_simulate(const RunConfig& config, std::ostream& out) {
  const fs::path dir = make_output_dir(config.out);
  const PresetSimulation ps = make_preset_simulation(config);
  Json m = manifest(config);
  m["preset"] = config.preset;
  m["true_ate"] = ps.simulation.true_ate;
  m["true_ate_mc_se"] = ps.true_ate_mc_se;
  m["rows"] = ps.n;
  m["ps_formula"] = render(ps.simulation.ps_formula);
  m["om_formula"] = render(ps.simulation.om_formula);
  m["replicates"] = Json::array();
  for (int r = 0; r < config.replicates; ++r) {
    const std::uint64_t seed = derive_seed(config.seed, {static_cast<std::uint64_t>(r), 0xd1a});
    const SyntheticDraw draw = ps.simulation.draw(seed);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04d", r + 1);
    const std::string data_file = std::string("replicate_") + stem + ".csv";
    const std::string truth_file = std::string("potential_outcomes_") + stem + ".csv";
    write_dataset_csv(draw.dataset, (dir / data_file).string());
    std::ostringstream po;
    po << "y0,y1\n";
    for (Index i = 0; i < draw.y0.size(); ++i) {
      po << number(draw.y0[i]) << ',' << number(draw.y1[i]) << '\n';
    }
    write_text(dir / truth_file, po.str());
    Json entry;
    entry["replicate"] = r + 1;
    entry["seed"] = seed;
    entry["data"] = data_file;
    entry["potential_outcomes"] = truth_file;
    m["replicates"].push_back(entry);
  }
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  out << "wrote " << config.replicates << " datasets to " << dir.string() << " (true ATE "
      << number(ps.simulation.true_ate) << ")\n";
}

void cmd_bench(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const PresetSimulation ps = make_preset_simulation(config);
  const auto estimators = config.estimator_configs();
  BenchOptions options;
  options.replicates = config.replicates;
  options.seed = config.seed;
  options.workers = config.workers;
  options.timing = config.timing;
  options.progress = config.progress;
  if (config.progress) {
    log << "[bench] " << ps.simulation.name << ": true ATE " << number(ps.simulation.true_ate)
        << ", " << config.replicates << " replicates of " << ps.n << " rows\n";
  }
  const BenchResult result = run_benchmark(ps.simulation, estimators, options);
  const ReportFormat format = parse_report_format(config.format);
  const std::string report = format_report(result.summaries, format);
  if (config.out.empty()) {
    out << report;
    return;
  }
  const fs::path dir = make_output_dir(config.out);
  const std::string report_file = format == ReportFormat::Json ? "report.json" : "report.csv";
  write_text(dir / report_file, report);
  write_text(dir / "replicates.csv", format_replicates(result.records));
  Json m = manifest(config);
  m["preset"] = config.preset;
  m["true_ate"] = ps.simulation.true_ate;
  m["true_ate_mc_se"] = ps.true_ate_mc_se;
  m["rows"] = ps.n;
  m["ps_formula"] = render(ps.simulation.ps_formula);
  m["om_formula"] = render(ps.simulation.om_formula);
  m["report"] = report_file;
  int failures = 0;
  for (const auto& s : result.summaries) failures += s.failures;
  m["failures"] = failures;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  out << "wrote " << (dir / report_file).string() << '\n';
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig config = parse_command_line(args, err);
    if (config.command == "estimate") {
      cmd_estimate(config, out);
    } else if (config.command == "simulate") {
      cmd_simulate(config, out);
    } else {
      cmd_bench(config, out, err);
    }
    return 0;
  } catch (const HelpRequested& h) {
    out << h.text;
    return 0;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const FormulaError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace drate
