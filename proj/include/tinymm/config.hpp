#pragma once

// Run-config file handling. Configs are JSON (comments allowed) mirroring
// ModelConfig field for field; unknown keys are rejected and every validation
// failure names the offending dotted key. The canonical echo written into
// reports round-trips through the same schema.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tinymm/error.hpp"
#include "tinymm/pipeline.hpp"
#include "tinymm/report.hpp"

namespace tinymm {

namespace cfgdetail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& scope,
                           const std::set<std::string>& known) {
    for (const auto& [key, value] : obj.items()) {
        if (!known.count(key))
            throw ConfigError(scope.empty() ? key : scope + "." + key, "unknown key");
    }
}

template <typename T>
T get_field(const json& obj, const std::string& scope, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    const std::string dotted = scope.empty() ? key : scope + "." + key;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(dotted, "wrong type");
    }
}

inline std::string mode_name(CompressionMode m) {
    switch (m) {
        case CompressionMode::kOff: return "off";
        case CompressionMode::kVmtc: return "vmtc";
        case CompressionMode::kSpd: return "spd";
        case CompressionMode::kLlp: return "llp";
    }
    return "off";
}

inline CompressionMode parse_mode(const std::string& s, const std::string& field) {
    if (s == "off") return CompressionMode::kOff;
    if (s == "vmtc") return CompressionMode::kVmtc;
    if (s == "spd") return CompressionMode::kSpd;
    if (s == "llp") return CompressionMode::kLlp;
    throw ConfigError(field, "must be one of off|vmtc|spd|llp");
}

inline std::string focus_name(FocusMode m) {
    switch (m) {
        case FocusMode::kNeighborhood: return "neighborhood";
        case FocusMode::kTia: return "tia";
        case FocusMode::kSum: return "sum";
        case FocusMode::kDiscounted: return "discounted";
    }
    return "neighborhood";
}

inline FocusMode parse_focus(const std::string& s, const std::string& field) {
    if (s == "neighborhood") return FocusMode::kNeighborhood;
    if (s == "tia") return FocusMode::kTia;
    if (s == "sum") return FocusMode::kSum;
    if (s == "discounted") return FocusMode::kDiscounted;
    throw ConfigError(field, "must be one of neighborhood|tia|sum|discounted");
}

inline std::string basis_name(FocusBasis b) {
    return b == FocusBasis::kWeights ? "weights" : "scores";
}

inline FocusBasis parse_basis(const std::string& s, const std::string& field) {
    if (s == "weights") return FocusBasis::kWeights;
    if (s == "scores") return FocusBasis::kScores;
    throw ConfigError(field, "must be weights or scores");
}

}  // namespace cfgdetail

inline void validate_config(const ModelConfig& cfg) {
    if (cfg.d_model == 0) throw ConfigError("d_model", "must be >= 1");
    if (cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0)
        throw ConfigError("n_heads", "must divide d_model");
    if (cfg.d_ff == 0) throw ConfigError("d_ff", "must be >= 1");
    if (cfg.vit_depth == 0) throw ConfigError("vit_depth", "must be >= 1");
    if (cfg.llm_depth == 0) throw ConfigError("llm_depth", "must be >= 1");
    if (cfg.patch_dim == 0) throw ConfigError("patch_dim", "must be >= 1");
    if (cfg.vocab_size == 0) throw ConfigError("vocab_size", "must be >= 1");
    {
        const auto g = static_cast<std::size_t>(
            std::llround(std::sqrt(static_cast<double>(cfg.n_patches))));
        if (cfg.n_patches == 0 || g * g != cfg.n_patches)
            throw ConfigError("n_patches", "must be a positive perfect square");
        if (cfg.vmtc.mode == CompressionMode::kSpd) {
            if (cfg.vmtc.spd_factor == 0 || g % cfg.vmtc.spd_factor != 0)
                throw ConfigError("vmtc.spd_factor", "must divide the patch grid side");
        }
    }
    if (cfg.prompt_len + cfg.generate_steps > cfg.max_text_len)
        throw ConfigError("prompt_len", "prompt_len + generate_steps exceeds max_text_len");

    if (cfg.vmtc.target_keep_ratio <= 0.0 || cfg.vmtc.target_keep_ratio > 1.0)
        throw ConfigError("vmtc.keep_ratio", "must be in (0, 1]");
    if (cfg.vmtc.num_stages == 0) throw ConfigError("vmtc.num_stages", "must be >= 1");
    if (cfg.vmtc.clusters_per_stage == 0)
        throw ConfigError("vmtc.clusters_per_stage", "must be >= 1");
    if (cfg.vmtc.mode == CompressionMode::kVmtc) {
        if (!cfg.vmtc.insertion_layers.empty()) {
            if (cfg.vmtc.insertion_layers.size() != cfg.vmtc.num_stages)
                throw ConfigError("vmtc.insertion_layers", "need one layer per stage");
            for (std::size_t i = 0; i < cfg.vmtc.insertion_layers.size(); ++i) {
                if (cfg.vmtc.insertion_layers[i] >= cfg.vit_depth)
                    throw ConfigError("vmtc.insertion_layers", "layer index beyond vit_depth");
                if (i > 0 && cfg.vmtc.insertion_layers[i] <= cfg.vmtc.insertion_layers[i - 1])
                    throw ConfigError("vmtc.insertion_layers", "must be strictly increasing");
            }
        } else {
            try {
                derive_insertion_layers(cfg.vit_depth, cfg.vmtc.num_stages);
            } catch (const ScheduleError& e) {
                throw ConfigError("vmtc.num_stages", e.what());
            }
        }
        try {
            schedule_stages(cfg.n_patches, cfg.vmtc);
        } catch (const ScheduleError& e) {
            throw ConfigError("vmtc.keep_ratio", e.what());
        }
    }
    if (cfg.vmtc.kmeans.max_iter == 0) throw ConfigError("vmtc.kmeans.max_iter", "must be >= 1");
    if (!(cfg.vmtc.kmeans.tol > 0.0)) throw ConfigError("vmtc.kmeans.tol", "must be > 0");

    if (cfg.cmai.gamma_max < 0.0 || cfg.cmai.gamma_max >= 1.0)
        throw ConfigError("cmai.gamma_max", "must be in [0, 1)");
    if (cfg.cmai.mode == FocusMode::kDiscounted &&
        (cfg.cmai.discount <= 0.0 || cfg.cmai.discount >= 1.0))
        throw ConfigError("cmai.discount", "must be in (0, 1)");
}

inline ModelConfig config_from_json(const nlohmann::json& root) {
    using cfgdetail::get_field;
    using nlohmann::json;
    if (!root.is_object()) throw ConfigError("", "config must be a JSON object");

    cfgdetail::reject_unknown(
        root, "",
        {"d_model", "n_heads", "d_ff", "vit_depth", "llm_depth", "n_patches", "patch_dim",
         "vocab_size", "max_text_len", "prompt_len", "generate_steps", "literal_equations",
         "keep_cls", "seed", "vmtc", "cmai"});

    ModelConfig cfg;
    cfg.d_model = get_field<std::size_t>(root, "", "d_model", cfg.d_model);
    cfg.n_heads = get_field<std::size_t>(root, "", "n_heads", cfg.n_heads);
    cfg.d_ff = get_field<std::size_t>(root, "", "d_ff", cfg.d_ff);
    cfg.vit_depth = get_field<std::size_t>(root, "", "vit_depth", cfg.vit_depth);
    cfg.llm_depth = get_field<std::size_t>(root, "", "llm_depth", cfg.llm_depth);
    cfg.n_patches = get_field<std::size_t>(root, "", "n_patches", cfg.n_patches);
    cfg.patch_dim = get_field<std::size_t>(root, "", "patch_dim", cfg.patch_dim);
    cfg.vocab_size = get_field<std::size_t>(root, "", "vocab_size", cfg.vocab_size);
    cfg.max_text_len = get_field<std::size_t>(root, "", "max_text_len", cfg.max_text_len);
    cfg.prompt_len = get_field<std::size_t>(root, "", "prompt_len", cfg.prompt_len);
    cfg.generate_steps = get_field<std::size_t>(root, "", "generate_steps", cfg.generate_steps);
    cfg.literal_equations = get_field<bool>(root, "", "literal_equations", cfg.literal_equations);
    cfg.keep_cls = get_field<bool>(root, "", "keep_cls", cfg.keep_cls);
    cfg.seed = get_field<std::uint64_t>(root, "", "seed", cfg.seed);

    if (root.contains("vmtc")) {
        const json& v = root.at("vmtc");
        if (!v.is_object()) throw ConfigError("vmtc", "must be an object");
        cfgdetail::reject_unknown(v, "vmtc",
                                  {"mode", "keep_ratio", "num_stages", "clusters_per_stage",
                                   "normalize_merge", "cls_as_key", "spd_factor",
                                   "insertion_layers", "kmeans"});
        cfg.vmtc.mode = cfgdetail::parse_mode(
            get_field<std::string>(v, "vmtc", "mode", cfgdetail::mode_name(cfg.vmtc.mode)),
            "vmtc.mode");
        cfg.vmtc.target_keep_ratio =
            get_field<double>(v, "vmtc", "keep_ratio", cfg.vmtc.target_keep_ratio);
        cfg.vmtc.num_stages = get_field<std::size_t>(v, "vmtc", "num_stages", cfg.vmtc.num_stages);
        cfg.vmtc.clusters_per_stage =
            get_field<std::size_t>(v, "vmtc", "clusters_per_stage", cfg.vmtc.clusters_per_stage);
        cfg.vmtc.normalize_merge =
            get_field<bool>(v, "vmtc", "normalize_merge", cfg.vmtc.normalize_merge);
        cfg.vmtc.cls_as_key = get_field<bool>(v, "vmtc", "cls_as_key", cfg.vmtc.cls_as_key);
        cfg.vmtc.spd_factor = get_field<std::size_t>(v, "vmtc", "spd_factor", cfg.vmtc.spd_factor);
        cfg.vmtc.insertion_layers = get_field<std::vector<std::size_t>>(
            v, "vmtc", "insertion_layers", cfg.vmtc.insertion_layers);
        if (v.contains("kmeans")) {
            const json& k = v.at("kmeans");
            if (!k.is_object()) throw ConfigError("vmtc.kmeans", "must be an object");
            cfgdetail::reject_unknown(k, "vmtc.kmeans", {"max_iter", "tol", "seed"});
            cfg.vmtc.kmeans.max_iter =
                get_field<std::size_t>(k, "vmtc.kmeans", "max_iter", cfg.vmtc.kmeans.max_iter);
            cfg.vmtc.kmeans.tol = get_field<double>(k, "vmtc.kmeans", "tol", cfg.vmtc.kmeans.tol);
            cfg.vmtc.kmeans.seed =
                get_field<std::uint64_t>(k, "vmtc.kmeans", "seed", cfg.vmtc.kmeans.seed);
        }
    }

    if (root.contains("cmai")) {
        const json& c = root.at("cmai");
        if (!c.is_object()) throw ConfigError("cmai", "must be an object");
        cfgdetail::reject_unknown(c, "cmai",
                                  {"enabled", "gamma_max", "mode", "discount", "focus_basis"});
        cfg.cmai.enabled = get_field<bool>(c, "cmai", "enabled", cfg.cmai.enabled);
        cfg.cmai.gamma_max = get_field<double>(c, "cmai", "gamma_max", cfg.cmai.gamma_max);
        cfg.cmai.mode = cfgdetail::parse_focus(
            get_field<std::string>(c, "cmai", "mode", cfgdetail::focus_name(cfg.cmai.mode)),
            "cmai.mode");
        cfg.cmai.discount = get_field<double>(c, "cmai", "discount", cfg.cmai.discount);
        cfg.cmai.focus_basis = cfgdetail::parse_basis(
            get_field<std::string>(c, "cmai", "focus_basis",
                                   cfgdetail::basis_name(cfg.cmai.focus_basis)),
            "cmai.focus_basis");
    }

    validate_config(cfg);
    return cfg;
}

inline ModelConfig parse_config_text(const std::string& text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    return config_from_json(root);
}

inline ModelConfig load_config(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw ConfigError("", "cannot open config file " + path);
    std::stringstream ss;
    ss << file.rdbuf();
    return parse_config_text(ss.str());
}

// Canonical echo: sorted keys, every field explicit, floats at 17 significant
// digits. Identical configs serialize to identical bytes.
inline std::string config_to_json(const ModelConfig& cfg) {
    std::string out = "{";
    out += "\"cmai\":{";
    out += "\"discount\":" + format_double(cfg.cmai.discount) + ",";
    out += std::string("\"enabled\":") + (cfg.cmai.enabled ? "true" : "false") + ",";
    out += "\"focus_basis\":\"" + cfgdetail::basis_name(cfg.cmai.focus_basis) + "\",";
    out += "\"gamma_max\":" + format_double(cfg.cmai.gamma_max) + ",";
    out += "\"mode\":\"" + cfgdetail::focus_name(cfg.cmai.mode) + "\"},";
    out += "\"d_ff\":" + std::to_string(cfg.d_ff) + ",";
    out += "\"d_model\":" + std::to_string(cfg.d_model) + ",";
    out += "\"generate_steps\":" + std::to_string(cfg.generate_steps) + ",";
    out += std::string("\"keep_cls\":") + (cfg.keep_cls ? "true" : "false") + ",";
    out += std::string("\"literal_equations\":") + (cfg.literal_equations ? "true" : "false") + ",";
    out += "\"llm_depth\":" + std::to_string(cfg.llm_depth) + ",";
    out += "\"max_text_len\":" + std::to_string(cfg.max_text_len) + ",";
    out += "\"n_heads\":" + std::to_string(cfg.n_heads) + ",";
    out += "\"n_patches\":" + std::to_string(cfg.n_patches) + ",";
    out += "\"patch_dim\":" + std::to_string(cfg.patch_dim) + ",";
    out += "\"prompt_len\":" + std::to_string(cfg.prompt_len) + ",";
    out += "\"seed\":" + std::to_string(cfg.seed) + ",";
    out += "\"vit_depth\":" + std::to_string(cfg.vit_depth) + ",";
    out += "\"vmtc\":{";
    out += std::string("\"cls_as_key\":") + (cfg.vmtc.cls_as_key ? "true" : "false") + ",";
    out += "\"clusters_per_stage\":" + std::to_string(cfg.vmtc.clusters_per_stage) + ",";
    out += "\"insertion_layers\":[";
    for (std::size_t i = 0; i < cfg.vmtc.insertion_layers.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(cfg.vmtc.insertion_layers[i]);
    }
    out += "],";
    out += "\"keep_ratio\":" + format_double(cfg.vmtc.target_keep_ratio) + ",";
    out += "\"kmeans\":{";
    out += "\"max_iter\":" + std::to_string(cfg.vmtc.kmeans.max_iter) + ",";
    out += "\"seed\":" + std::to_string(cfg.vmtc.kmeans.seed) + ",";
    out += "\"tol\":" + format_double(cfg.vmtc.kmeans.tol) + "},";
    out += "\"mode\":\"" + cfgdetail::mode_name(cfg.vmtc.mode) + "\",";
    out += std::string("\"normalize_merge\":") + (cfg.vmtc.normalize_merge ? "true" : "false") + ",";
    out += "\"num_stages\":" + std::to_string(cfg.vmtc.num_stages) + ",";
    out += "\"spd_factor\":" + std::to_string(cfg.vmtc.spd_factor) + "},";
    out += "\"vocab_size\":" + std::to_string(cfg.vocab_size) + "}";
    return out;
}

}  // namespace tinymm
