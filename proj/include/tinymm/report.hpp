#pragma once

// Canonical serialization for run reports: keys in sorted order, floats
// printed with 17 significant digits, no locale dependence. Identical runs
// serialize to identical bytes.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "tinymm/linalg.hpp"

namespace tinymm {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

// FNV-1a over the little-endian bytes of the dimensions and every entry in
// row-major order.
inline std::uint64_t matrix_digest(const Matrix& m) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix_u64 = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xFFull;
            h *= 1099511628211ull;
        }
    };
    mix_u64(static_cast<std::uint64_t>(m.rows()));
    mix_u64(static_cast<std::uint64_t>(m.cols()));
    for (double v : m.data()) mix_u64(std::bit_cast<std::uint64_t>(v));
    return h;
}

inline std::string digest_hex(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Per-decoder-layer inhibition statistics.
struct LayerReport {
    double gamma = 0.0;
    std::map<std::size_t, std::size_t> inhibited_histogram;  // inhibited count -> text rows
    double image_mass_before = 0.0;
    double image_mass_after = 0.0;
};

// Deterministic record of one pipeline run. `duration_ms` is measured but
// excluded from the canonical serialization so identical runs stay
// byte-identical; callers that want it print it separately.
struct RunReport {
    std::string config_json;  // canonical echo of the resolved config
    std::uint64_t seed = 0;
    std::vector<std::size_t> stage_token_counts;
    std::size_t final_visual_token_count = 0;
    std::vector<LayerReport> layers;
    std::vector<std::size_t> generated_ids;
    std::string logits_digest;
    double duration_ms = 0.0;
};

inline std::string report_to_json(const RunReport& r) {
    std::string out = "{";
    out += "\"config\":" + r.config_json + ",";
    out += "\"final_visual_token_count\":" + std::to_string(r.final_visual_token_count) + ",";
    out += "\"generated_ids\":[";
    for (std::size_t i = 0; i < r.generated_ids.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(r.generated_ids[i]);
    }
    out += "],";
    out += "\"layers\":[";
    for (std::size_t l = 0; l < r.layers.size(); ++l) {
        const LayerReport& lr = r.layers[l];
        if (l) out += ",";
        out += "{\"gamma\":" + format_double(lr.gamma) + ",";
        out += "\"image_mass_after\":" + format_double(lr.image_mass_after) + ",";
        out += "\"image_mass_before\":" + format_double(lr.image_mass_before) + ",";
        out += "\"inhibited_histogram\":{";
        bool first = true;
        for (const auto& [count, rows] : lr.inhibited_histogram) {
            if (!first) out += ",";
            first = false;
            out += "\"" + std::to_string(count) + "\":" + std::to_string(rows);
        }
        out += "}}";
    }
    out += "],";
    out += "\"logits_digest\":\"" + r.logits_digest + "\",";
    out += "\"seed\":" + std::to_string(r.seed) + ",";
    out += "\"stage_token_counts\":[";
    for (std::size_t i = 0; i < r.stage_token_counts.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(r.stage_token_counts[i]);
    }
    out += "]}";
    return out;
}

}  // namespace tinymm
