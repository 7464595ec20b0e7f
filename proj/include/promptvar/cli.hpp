#pragma once

#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "promptvar/service.hpp"

namespace promptvar {

// Config file: dataset, template (or preset), generation, provider, output.
struct CliConfig {
  std::filesystem::path base_dir;
  std::filesystem::path dataset_path;
  DataFormat dataset_format = DataFormat::csv;
  std::map<std::string, std::string> list_columns;
  nlohmann::json template_json;
  nlohmann::json generation_json = nlohmann::json::object();
  nlohmann::json provider_json = nlohmann::json::object();
  std::filesystem::path output_path;
  ExportFormat output_format = ExportFormat::json;
  std::optional<Metric> metric;
};

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> variations_per_field;
  std::optional<std::size_t> max_rows;
  std::optional<std::size_t> max_variations_per_row;
  std::optional<std::string> sampling;
  std::optional<std::string> platform;
  std::optional<std::string> model;
  bool stub = false;
  std::optional<std::string> dataset;
  std::optional<std::string> output;
  std::optional<std::string> format;
};

namespace detail {

inline std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

inline CliConfig parse_cli_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw ConfigError("config file must contain a JSON object");
  CliConfig c;
  c.base_dir = base_dir;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "dataset") {
      if (v.is_string()) {
        c.dataset_path = detail::resolve_path(base_dir, v.get<std::string>());
        c.dataset_format = detail::format_from_name(v.get<std::string>());
        continue;
      }
      if (!v.is_object() || !v.contains("path")) throw ConfigError("'dataset' needs a 'path'");
      c.dataset_path = detail::resolve_path(base_dir, v.at("path").get<std::string>());
      c.dataset_format = v.contains("format") ? parse_data_format(v.at("format").get<std::string>())
                                              : detail::format_from_name(v.at("path").get<std::string>());
      if (v.contains("list_columns"))
        for (auto lc = v.at("list_columns").begin(); lc != v.at("list_columns").end(); ++lc)
          c.list_columns[lc.key()] = lc.value().get<std::string>();
    } else if (k == "template") {
      c.template_json = v.is_string() ? nlohmann::json::parse(read_file(detail::resolve_path(base_dir, v.get<std::string>())))
                                      : v;
    } else if (k == "preset") {
      const auto presets = list_presets();
      const auto* p = find_preset(presets, v.get<std::string>());
      if (!p) throw ConfigError("unknown preset '" + v.get<std::string>() + "'");
      c.template_json = nlohmann::json::parse(p->config.dump());
      if (!c.metric) c.metric = p->metric;
    } else if (k == "generation") {
      c.generation_json = v;
    } else if (k == "provider") {
      c.provider_json = v;
    } else if (k == "output") {
      if (v.contains("path")) c.output_path = detail::resolve_path(base_dir, v.at("path").get<std::string>());
      if (v.contains("format")) c.output_format = parse_export_format(v.at("format").get<std::string>());
    } else if (k == "metric") {
      c.metric = parse_metric(v.get<std::string>());
    } else {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  if (c.template_json.is_null()) throw ConfigError("config needs a 'template' or a 'preset'");
  return c;
}

inline CliConfig load_cli_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_cli_config(j, path.parent_path());
}

inline void apply_overrides(CliConfig& c, const CliOverrides& o) {
  auto& g = c.generation_json;
  if (o.seed) g["seed"] = *o.seed;
  if (o.variations_per_field) g["variations_per_field"] = *o.variations_per_field;
  if (o.max_rows) g["max_rows"] = *o.max_rows;
  if (o.max_variations_per_row) g["max_variations_per_row"] = *o.max_variations_per_row;
  if (o.sampling) g["sampling"] = *o.sampling;
  if (o.platform) c.provider_json["platform"] = *o.platform;
  if (o.model) c.provider_json["model_name"] = *o.model;
  if (o.stub) c.provider_json["platform"] = "stub";
  if (o.dataset) {
    c.dataset_path = *o.dataset;
    c.dataset_format = detail::format_from_name(*o.dataset);
  }
  if (o.output) c.output_path = *o.output;
  if (o.format) c.output_format = parse_export_format(*o.format);
}

// Everything a run needs, parsed from a CliConfig.
struct CliRun {
  DatasetTable table;
  PromptTemplate template_;
  GenerationConfig generation;
  ProviderConfig provider;
  ClientOptions client;
};

inline CliRun prepare_run(const CliConfig& c) {
  if (c.dataset_path.empty()) throw ConfigError("no dataset path given");
  CliRun r;
  r.table = load_table(c.dataset_path, c.dataset_format);
  for (const auto& [col, delim] : c.list_columns) r.table = r.table.with_list_column(col, delim);
  r.template_ = parse_template(c.template_json);
  r.generation = generation_config_from_json(c.generation_json);
  r.provider = provider_config_from_json(c.provider_json);
  r.client = client_options_from_json(c.provider_json);
  if (!is_stub(r.provider)) r.client.transport = default_transport();
  return r;
}

namespace detail {

inline std::atomic<Service*> serving{nullptr};

inline void on_signal(int) {
  if (auto* s = serving.load()) s->server().stop();
}

struct ValidationFailure : Error {
  using Error::Error;
};

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Generate, inspect and evaluate prompt variations.", "promptvar"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "0.1.0");

  std::string config_path;
  CliOverrides ov;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Config file (JSON)")->required();
    sub->add_option("--dataset", ov.dataset, "Dataset path (overrides the config)");
    sub->add_option("--seed", ov.seed, "Random seed");
    sub->add_option("--variations-per-field", ov.variations_per_field, "Variants per perturbed component")
        ->check(CLI::PositiveNumber);
    sub->add_option("--max-rows", ov.max_rows, "Cap on output records")->check(CLI::PositiveNumber);
    sub->add_option("--max-variations-per-row", ov.max_variations_per_row, "Cap on variations per row")
        ->check(CLI::PositiveNumber);
    sub->add_option("--sampling", ov.sampling, "full-product or random-combinations");
    sub->add_option("--platform", ov.platform, "Provider platform");
    sub->add_option("--model", ov.model, "Provider model name");
    sub->add_flag("--stub", ov.stub, "Use the offline stub provider");
  };

  auto* validate_cmd = app.add_subcommand("validate", "Check a template against a dataset");
  add_common(validate_cmd);

  auto* generate_cmd = app.add_subcommand("generate", "Write the variation dataset");
  add_common(generate_cmd);
  generate_cmd->add_option("-o,--output", ov.output, "Output file");
  generate_cmd->add_option("--format", ov.format, "json or csv");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score an exported variation dataset");
  add_common(evaluate_cmd);
  std::string records_path, report_path, csv_path, metric_name;
  std::size_t threads = 0;
  evaluate_cmd->add_option("--records", records_path, "Exported variations (json or csv)")->required();
  evaluate_cmd->add_option("--report", report_path, "Report output (JSON)")->required();
  evaluate_cmd->add_option("--csv", csv_path, "Per-variation scores as CSV");
  evaluate_cmd->add_option("--metric", metric_name, "automatic, exact-match or choice-letter");
  evaluate_cmd->add_option("--threads", threads, "Worker threads");

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  std::string host = "127.0.0.1", workspace = "workspace";
  int port = 8080;
  std::size_t workers = 1;
  serve_cmd->add_option("--host", host, "Listen address");
  serve_cmd->add_option("--port", port, "Listen port");
  serve_cmd->add_option("--workspace", workspace, "Workspace directory");
  serve_cmd->add_option("--workers", workers, "Job worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    if (e.get_exit_code() != 0) err << app.help();
    return 2;
  }

  const auto log = [&err](const std::string& m) { err << m << "\n"; };
  try {
    if (serve_cmd->parsed()) {
      ServiceOptions so;
      so.workspace = workspace;
      so.workers = workers;
      so.log = log;
      Service service(so);
      detail::serving = &service;
      std::signal(SIGINT, detail::on_signal);
      std::signal(SIGTERM, detail::on_signal);
      log("listening on " + host + ":" + std::to_string(port));
      service.listen(host, port);
      detail::serving = nullptr;
      return 0;
    }

    CliConfig cfg;
    try {
      cfg = load_cli_config(config_path);
      apply_overrides(cfg, ov);
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    }

    if (evaluate_cmd->parsed()) {
      const auto records = load_records(records_path);
      const auto provider = provider_config_from_json(cfg.provider_json);
      auto co = client_options_from_json(cfg.provider_json);
      if (!is_stub(provider)) co.transport = default_transport();
      co.log = log;
      ProviderClient client(provider, co);
      EvaluationOptions eo;
      eo.metric = !metric_name.empty() ? parse_metric(metric_name) : cfg.metric.value_or(Metric::automatic);
      eo.threads = threads;
      const auto rep = run_evaluation(records, client, eo);
      for (const auto& w : rep.warnings) log("warning: " + w);
      write_file(report_path, to_json(rep).dump(2) + "\n");
      if (!csv_path.empty()) write_file(csv_path, per_variation_csv(rep));
      if (rep.distribution)
        out << "scored " << rep.scored << " of " << records.size() << " records; mean " << rep.distribution->mean
            << ", min " << rep.distribution->min << ", max " << rep.distribution->max << "\n";
      return 0;
    }

    CliRun run;
    try {
      run = prepare_run(cfg);
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    } catch (const ParseError& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    }
    const auto report = validate_template(run.template_, run.table);

    if (validate_cmd->parsed()) {
      out << "dataset: " << cfg.dataset_path.string() << " (" << run.table.size() << " rows)\n";
      out << "columns: " << text::join(run.table.column_names(), ", ") << "\n";
      out << "placeholders: " << text::join(unique_placeholders(run.template_), ", ") << "\n";
      if (!report.ok) {
        out << "missing columns: " << text::join(report.missing, ", ") << "\n";
        out << "result: invalid\n";
        return 1;
      }
      try {
        check_generation_inputs(run.template_, run.table);
      } catch (const ConfigError& e) {
        out << "error: " << e.what() << "\nresult: invalid\n";
        return 1;
      }
      if (!report.unused.empty()) out << "unused columns: " << text::join(report.unused, ", ") << "\n";
      const auto p = predict_count(run.template_, run.table.size(), run.generation);
      out << "predicted: " << p.per_row << " variations per row, " << p.total << " records\n";
      out << "result: valid\n";
      return 0;
    }

    // generate
    if (cfg.output_path.empty()) {
      err << "error: no output path given\n";
      return 1;
    }
    try {
      check_generation_inputs(run.template_, run.table);
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    }
    run.client.log = log;
    ProviderClient client(run.provider, run.client);
    EngineOptions eo;
    eo.provider = &client;
    eo.log = log;
    const auto result = generate(run.template_, run.table, run.generation, eo);
    for (const auto& w : result.warnings) log("warning: " + w);
    export_records(result, cfg.output_format, cfg.output_path);
    out << "wrote " << result.records.size() << " records (" << result.non_baseline_count() << " variations) to "
        << cfg.output_path.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace promptvar
