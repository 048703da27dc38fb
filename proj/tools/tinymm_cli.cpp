// Command-line front end: run a pipeline from a config file, sweep a config
// axis, run the oracle agreement suites, or manage weights files.
//
// Exit codes: 0 success, 1 oracle suite failure, 2 usage or config error,
// 3 runtime error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tinymm/config.hpp"
#include "tinymm/oracle.hpp"
#include "tinymm/pipeline.hpp"
#include "tinymm/weights_io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitSuiteFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

// Reports land via temp file + rename so a failed run never leaves a partial file.
void write_file_atomically(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw tinymm::ValueError("cannot open " + tmp + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw tinymm::ValueError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

tinymm::RunReport execute_run(const tinymm::ModelConfig& cfg,
                              const std::optional<std::string>& weights_path) {
    tinymm::Weights weights;
    if (weights_path) {
        weights = tinymm::load_weights(*weights_path);
        tinymm::attach_config(weights, cfg);
    } else {
        weights = tinymm::init_weights(cfg);
    }
    const tinymm::Matrix patches = tinymm::synthesize_patches(cfg);
    const std::vector<std::size_t> prompt = tinymm::synthesize_prompt(cfg);
    return tinymm::run_pipeline(cfg, patches, prompt, weights, tinymm::config_to_json(cfg));
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed_override,
            const std::string& report_path, const std::optional<std::string>& weights_path) {
    tinymm::ModelConfig cfg = tinymm::load_config(config_path);
    if (seed_override) {
        cfg.seed = *seed_override;
        tinymm::validate_config(cfg);
    }
    const tinymm::RunReport report = execute_run(cfg, weights_path);
    write_file_atomically(report_path, tinymm::report_to_json(report) + "\n");
    std::cout << "report: " << report_path << "\n"
              << "final visual tokens: " << report.final_visual_token_count << "\n"
              << "logits digest: " << report.logits_digest << "\n"
              << "duration_ms: " << tinymm::format_double(report.duration_ms) << "\n";
    return kExitOk;
}

std::string format_axis_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::vector<double> parse_value_list(const std::string& text) {
    std::vector<double> values;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t comma = text.find(',', pos);
        const std::string item =
            text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (item.empty()) throw tinymm::ConfigError("values", "empty item in value list");
        std::size_t consumed = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &consumed);
        } catch (const std::exception&) {
            throw tinymm::ConfigError("values", "not a number: " + item);
        }
        if (consumed != item.size())
            throw tinymm::ConfigError("values", "not a number: " + item);
        values.push_back(v);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return values;
}

int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::vector<double>& values, const std::string& out_dir) {
    const tinymm::ModelConfig base = tinymm::load_config(config_path);

    // Validate the whole grid before writing anything.
    std::vector<tinymm::ModelConfig> grid;
    for (double v : values) {
        tinymm::ModelConfig cfg = base;
        if (axis == "gamma_max") {
            cfg.cmai.enabled = true;
            cfg.cmai.gamma_max = v;
        } else if (axis == "keep_ratio") {
            cfg.vmtc.mode = tinymm::CompressionMode::kVmtc;
            cfg.vmtc.target_keep_ratio = v;
        } else if (axis == "spd_factor") {
            cfg.vmtc.mode = tinymm::CompressionMode::kSpd;
            cfg.vmtc.spd_factor = static_cast<std::size_t>(v);
            if (static_cast<double>(cfg.vmtc.spd_factor) != v)
                throw tinymm::ConfigError("vmtc.spd_factor", "must be an integer");
        } else {
            throw tinymm::ConfigError("axis", "must be gamma_max, keep_ratio or spd_factor");
        }
        tinymm::validate_config(cfg);
        grid.push_back(cfg);
    }

    std::filesystem::create_directories(out_dir);
    std::string csv = "value,final_visual_tokens,mean_inhibited_per_row,image_mass_before,"
                      "image_mass_after\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const tinymm::RunReport report = execute_run(grid[i], std::nullopt);
        const std::string name = "report_" + axis + "_" + format_axis_value(values[i]) + ".json";
        write_file_atomically((std::filesystem::path(out_dir) / name).string(),
                              tinymm::report_to_json(report) + "\n");

        double inhibited_rows_total = 0.0, row_count = 0.0;
        double mass_before = 0.0, mass_after = 0.0;
        for (const auto& layer : report.layers) {
            for (const auto& [count, rows] : layer.inhibited_histogram) {
                inhibited_rows_total += static_cast<double>(count) * static_cast<double>(rows);
                row_count += static_cast<double>(rows);
            }
            mass_before += layer.image_mass_before;
            mass_after += layer.image_mass_after;
        }
        const double mean_inhibited = row_count > 0.0 ? inhibited_rows_total / row_count : 0.0;
        csv += format_axis_value(values[i]) + "," +
               std::to_string(report.final_visual_token_count) + "," +
               tinymm::format_double(mean_inhibited) + "," +
               tinymm::format_double(mass_before) + "," + tinymm::format_double(mass_after) + "\n";
        std::cout << name << ": final visual tokens " << report.final_visual_token_count << "\n";
    }
    write_file_atomically((std::filesystem::path(out_dir) / "summary.csv").string(), csv);
    return kExitOk;
}

int cmd_oracle(const std::string& suite, std::size_t cases, std::uint64_t seed) {
    static const std::set<std::string> known{"attention", "n2i", "quantile",
                                             "kmeans", "merge", "all"};
    if (!known.count(suite)) {
        std::cerr << "unknown oracle suite: " << suite
                  << " (expected attention|n2i|quantile|kmeans|merge|all)\n";
        return kExitUsage;
    }
    const auto results = tinymm::oracle::run_suites(suite, cases, seed);
    bool all_passed = true;
    std::printf("%-10s %8s %8s %14s  %s\n", "suite", "cases", "failures", "max deviation", "result");
    for (const auto& r : results) {
        all_passed = all_passed && r.passed();
        std::printf("%-10s %8zu %8zu %14.3e  %s\n", r.name.c_str(), r.cases, r.failures,
                    r.max_deviation, r.passed() ? "pass" : "FAIL");
    }
    return all_passed ? kExitOk : kExitSuiteFailure;
}

int cmd_weights_init(const std::string& path, const std::string& config_path,
                     std::optional<std::uint64_t> seed_override) {
    tinymm::ModelConfig cfg = tinymm::load_config(config_path);
    if (seed_override) cfg.seed = *seed_override;
    tinymm::save_weights(tinymm::init_weights(cfg), path);
    std::cout << "wrote " << path << "\n";
    return kExitOk;
}

int cmd_weights_inspect(const std::string& path) {
    const tinymm::Weights w = tinymm::load_weights(path);
    const auto tensors = tinymm::weights_to_tensors(w);
    std::printf("%-24s %-12s %s\n", "tensor", "shape", "digest");
    for (const auto& [name, tensor] : tensors) {
        std::string shape;
        for (std::size_t i = 0; i < tensor.dims.size(); ++i) {
            if (i) shape += "x";
            shape += std::to_string(tensor.dims[i]);
        }
        tinymm::Matrix as_matrix(1, tensor.values.size());
        as_matrix.data() = tensor.values;
        std::printf("%-24s %-12s %s\n", name.c_str(), shape.c_str(),
                    tinymm::digest_hex(tinymm::matrix_digest(as_matrix)).c_str());
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy multimodal transformer with visual token compression and "
                 "cross-modality attention inhibition"};
    app.require_subcommand(1);

    std::string config_path, report_path = "report.json", axis, out_dir, suite = "all";
    std::string weights_path, wfile, values_text;
    std::uint64_t seed = 0, oracle_seed = 7;
    std::size_t cases = 64;

    CLI::App* run = app.add_subcommand("run", "run one pipeline from a config file");
    run->add_option("--config", config_path, "config file (JSON, comments allowed)")->required();
    CLI::Option* run_seed = run->add_option("--seed", seed, "override the config seed");
    run->add_option("--report", report_path, "report output path");
    run->add_option("--weights", weights_path, "load weights instead of seeding them");

    CLI::App* sweep = app.add_subcommand("sweep", "run one pipeline per axis value");
    sweep->add_option("--config", config_path, "base config file")->required();
    sweep->add_option("--axis", axis, "gamma_max | keep_ratio | spd_factor")->required();
    sweep->add_option("--values", values_text, "comma-separated axis values")->required();
    sweep->add_option("--out", out_dir, "output directory")->required();

    CLI::App* oracle = app.add_subcommand("oracle", "run brute-force agreement suites");
    oracle->add_option("--suite", suite, "attention | n2i | quantile | kmeans | merge | all");
    oracle->add_option("--cases", cases, "instances per suite");
    oracle->add_option("--seed", oracle_seed, "suite seed");

    CLI::App* weights = app.add_subcommand("weights", "create or inspect weights files");
    weights->require_subcommand(1);
    CLI::App* winit = weights->add_subcommand("init", "write freshly initialized weights");
    winit->add_option("path", wfile, "output weights file")->required();
    winit->add_option("--config", config_path, "config file")->required();
    CLI::Option* winit_seed = winit->add_option("--seed", seed, "override the config seed");
    CLI::App* winspect = weights->add_subcommand("inspect", "list tensors in a weights file");
    winspect->add_option("path", wfile, "weights file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*run) {
            return cmd_run(config_path,
                           run_seed->count() ? std::optional<std::uint64_t>(seed) : std::nullopt,
                           report_path,
                           weights_path.empty() ? std::nullopt
                                                : std::optional<std::string>(weights_path));
        }
        if (*sweep) {
            const std::vector<double> values = parse_value_list(values_text);
            if (values.empty()) {
                std::cerr << "sweep: --values must not be empty\n";
                return kExitUsage;
            }
            return cmd_sweep(config_path, axis, values, out_dir);
        }
        if (*oracle) return cmd_oracle(suite, cases, oracle_seed);
        if (*weights) {
            if (*winit)
                return cmd_weights_init(wfile, config_path,
                                        winit_seed->count() ? std::optional<std::uint64_t>(seed)
                                                            : std::nullopt);
            return cmd_weights_inspect(wfile);
        }
    } catch (const tinymm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
