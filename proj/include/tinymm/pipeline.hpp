#pragma once

// The toy multimodal model: patch embedding + ViT encoder with scheduled
// token compression, a two-layer GELU projector, and a causal decoder with
// scheduled attention inhibition, plus greedy generation and deterministic
// run reports.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tinymm/attention.hpp"
#include "tinymm/cmai.hpp"
#include "tinymm/error.hpp"
#include "tinymm/linalg.hpp"
#include "tinymm/report.hpp"
#include "tinymm/vmtc.hpp"

namespace tinymm {

struct CmaiConfig {
    bool enabled = false;
    double gamma_max = 0.6;
    FocusMode mode = FocusMode::kNeighborhood;
    double discount = 0.5;
    FocusBasis focus_basis = FocusBasis::kWeights;
};

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t vit_depth = 6;
    std::size_t llm_depth = 6;
    std::size_t n_patches = 64;  // must be a perfect square
    std::size_t patch_dim = 48;
    std::size_t vocab_size = 256;
    std::size_t max_text_len = 16;
    std::size_t prompt_len = 8;
    std::size_t generate_steps = 0;
    bool literal_equations = false;
    bool keep_cls = false;  // keep the class token in the projected visual sequence
    std::uint64_t seed = 42;
    VmtcConfig vmtc;
    CmaiConfig cmai;
};

inline std::size_t grid_side_of(std::size_t n_patches) {
    auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n_patches))));
    if (g * g != n_patches) throw ValueError("n_patches must be a perfect square");
    return g;
}

// Equally spaced insertion layers for `stages` compression stages in a
// `depth`-layer encoder: floor(depth * (t+1) / (stages+1)).
inline std::vector<std::size_t> derive_insertion_layers(std::size_t depth, std::size_t stages) {
    std::vector<std::size_t> layers(stages);
    for (std::size_t t = 0; t < stages; ++t)
        layers[t] = depth * (t + 1) / (stages + 1);
    for (std::size_t t = 1; t < stages; ++t)
        if (layers[t] <= layers[t - 1])
            throw ScheduleError("insertion layers collide: too many stages for encoder depth");
    if (!layers.empty() && layers.back() >= depth)
        throw ScheduleError("insertion layer beyond encoder depth");
    return layers;
}

struct Weights {
    Matrix patch_embed;            // patch_dim x d_model
    std::vector<double> cls;       // d_model
    Matrix enc_pos;                // (n_patches + 1) x d_model
    Matrix dec_pos;                // (n_patches + 1 + max_text_len) x d_model
    std::vector<BlockParams> encoder;
    std::vector<BlockParams> decoder;
    Matrix proj_w1, proj_w2;       // d_model x d_model each
    std::vector<double> proj_b1, proj_b2;
    Matrix tok_embed;              // vocab_size x d_model
    Matrix head;                   // d_model x vocab_size
};

namespace detail {

inline BlockParams init_block(Rng& rng, std::size_t d_model, std::size_t d_ff) {
    BlockParams b;
    b.attn.w_q = gaussian_init(rng, d_model, d_model, 0.02);
    b.attn.w_k = gaussian_init(rng, d_model, d_model, 0.02);
    b.attn.w_v = gaussian_init(rng, d_model, d_model, 0.02);
    b.attn.w_o = gaussian_init(rng, d_model, d_model, 0.02);
    b.mlp_in = gaussian_init(rng, d_model, d_ff, 0.02);
    b.mlp_out = gaussian_init(rng, d_ff, d_model, 0.02);
    b.ln1_scale.assign(d_model, 1.0);
    b.ln1_shift.assign(d_model, 0.0);
    b.ln2_scale.assign(d_model, 1.0);
    b.ln2_shift.assign(d_model, 0.0);
    return b;
}

}  // namespace detail

// Gaussian(0, 0.02^2) for every weight matrix, zeros for biases and shifts,
// ones for scales. Draw order is fixed so a seed fully determines the model.
inline Weights init_weights(const ModelConfig& cfg) {
    Rng rng(cfg.seed);
    Weights w;
    w.patch_embed = gaussian_init(rng, cfg.patch_dim, cfg.d_model, 0.02);
    w.cls = gaussian_init_vector(rng, cfg.d_model, 0.02);
    w.enc_pos = gaussian_init(rng, cfg.n_patches + 1, cfg.d_model, 0.02);
    w.dec_pos = gaussian_init(rng, cfg.n_patches + 1 + cfg.max_text_len, cfg.d_model, 0.02);
    for (std::size_t l = 0; l < cfg.vit_depth; ++l)
        w.encoder.push_back(detail::init_block(rng, cfg.d_model, cfg.d_ff));
    for (std::size_t l = 0; l < cfg.llm_depth; ++l)
        w.decoder.push_back(detail::init_block(rng, cfg.d_model, cfg.d_ff));
    w.proj_w1 = gaussian_init(rng, cfg.d_model, cfg.d_model, 0.02);
    w.proj_b1.assign(cfg.d_model, 0.0);
    w.proj_w2 = gaussian_init(rng, cfg.d_model, cfg.d_model, 0.02);
    w.proj_b2.assign(cfg.d_model, 0.0);
    w.tok_embed = gaussian_init(rng, cfg.vocab_size, cfg.d_model, 0.02);
    w.head = gaussian_init(rng, cfg.d_model, cfg.vocab_size, 0.02);
    for (auto& b : w.encoder) b.attn.n_heads = cfg.n_heads;
    for (auto& b : w.decoder) b.attn.n_heads = cfg.n_heads;
    return w;
}

struct EncodeResult {
    Matrix tokens;  // visual tokens, class token dropped unless keep_cls
    std::vector<std::size_t> stage_token_counts;  // patch-token count after each compression event
};

// Embed patches, prepend the class token, add positions, and run the encoder.
// Compression stages run between the attention and MLP halves of their
// scheduled blocks; the SPD and last-layer-pruning baselines run after the
// final block instead.
inline EncodeResult encode_image(const Matrix& patches, const Weights& weights,
                                 const ModelConfig& cfg) {
    if (patches.rows() != cfg.n_patches || patches.cols() != cfg.patch_dim)
        throw ShapeError("encode_image: patches must be n_patches x patch_dim");

    Matrix z(cfg.n_patches + 1, cfg.d_model);
    const Matrix embedded = matmul(patches, weights.patch_embed);
    for (std::size_t j = 0; j < cfg.d_model; ++j) z(0, j) = weights.cls[j] + weights.enc_pos(0, j);
    for (std::size_t i = 0; i < cfg.n_patches; ++i)
        for (std::size_t j = 0; j < cfg.d_model; ++j)
            z(i + 1, j) = embedded(i, j) + weights.enc_pos(i + 1, j);

    const bool vmtc_on = cfg.vmtc.mode == CompressionMode::kVmtc;
    StageSchedule schedule;
    std::vector<std::size_t> insertion;
    if (vmtc_on) {
        schedule = schedule_stages(cfg.n_patches, cfg.vmtc);
        insertion = cfg.vmtc.insertion_layers.empty()
                        ? derive_insertion_layers(cfg.vit_depth, cfg.vmtc.num_stages)
                        : cfg.vmtc.insertion_layers;
        if (insertion.size() != schedule.stages.size())
            throw ScheduleError("encode_image: one insertion layer required per stage");
    }

    EncodeResult result;
    Rng kmeans_rng(cfg.vmtc.kmeans.seed);
    std::size_t stage = 0;
    AttentionRecord last_record;
    for (std::size_t l = 0; l < cfg.vit_depth; ++l) {
        const MaskMatrix open_mask(z.rows(), z.rows());  // encoder is bidirectional
        auto [z_mid, record] = attention_half(z, weights.encoder[l], open_mask, cfg.literal_equations);
        if (vmtc_on && stage < insertion.size() && insertion[stage] == l) {
            const StageCounts& sc = schedule.stages[stage];
            z_mid = compress(z_mid, record.averaged_weights, sc.keep, sc.clusters, cfg.vmtc,
                             kmeans_rng);
            result.stage_token_counts.push_back(z_mid.rows() - 1);
            ++stage;
        }
        z = mlp_half(z_mid, weights.encoder[l], cfg.literal_equations);
        if (l + 1 == cfg.vit_depth) last_record = std::move(record);
    }

    if (cfg.vmtc.mode == CompressionMode::kSpd) {
        // Class token dropped, patch grid block-averaged.
        Matrix patches_only(z.rows() - 1, cfg.d_model);
        for (std::size_t i = 1; i < z.rows(); ++i) patches_only.set_row(i - 1, z.row(i));
        result.tokens = spatial_downsample(patches_only, grid_side_of(cfg.n_patches),
                                           cfg.vmtc.spd_factor);
        result.stage_token_counts.push_back(result.tokens.rows());
        return result;
    }
    if (cfg.vmtc.mode == CompressionMode::kLlp) {
        result.tokens = last_layer_prune(z, last_record.averaged_weights,
                                         cfg.vmtc.target_keep_ratio, cfg.vmtc.cls_as_key);
        result.stage_token_counts.push_back(result.tokens.rows());
        return result;
    }

    if (cfg.keep_cls) {
        result.tokens = std::move(z);
    } else {
        Matrix patches_only(z.rows() - 1, cfg.d_model);
        for (std::size_t i = 1; i < z.rows(); ++i) patches_only.set_row(i - 1, z.row(i));
        result.tokens = std::move(patches_only);
    }
    return result;
}

// Two-layer GELU projector aligning visual tokens with the decoder width.
inline Matrix project(const Matrix& t, const Weights& weights) {
    if (t.cols() != weights.proj_w1.rows()) throw ShapeError("project: input width mismatch");
    Matrix h = matmul(t, weights.proj_w1);
    for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) += weights.proj_b1[j];
    h = matmul(gelu(h), weights.proj_w2);
    for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) += weights.proj_b2[j];
    return h;
}

struct DecodeResult {
    Matrix logits;  // seq x vocab
    std::vector<LayerReport> layers;
};

// Causal decoder over [visual tokens | embedded text], with per-layer
// attention inhibition when enabled. Positions are re-packed: surviving
// visual tokens take consecutive slots from 0.
inline DecodeResult decode(const Matrix& visual, const std::vector<std::size_t>& text_ids,
                           const Weights& weights, const ModelConfig& cfg) {
    if (visual.cols() != cfg.d_model) throw ShapeError("decode: visual width must be d_model");
    if (text_ids.size() > cfg.max_text_len)
        throw ValueError("decode: text length exceeds max_text_len");
    const std::size_t n = visual.rows();
    const std::size_t m = text_ids.size();
    const std::size_t seq = n + m;
    if (seq == 0) throw ValueError("decode: empty sequence");
    if (seq > weights.dec_pos.rows()) throw ShapeError("decode: sequence exceeds position table");

    Matrix z(seq, cfg.d_model);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cfg.d_model; ++j) z(i, j) = visual(i, j) + weights.dec_pos(i, j);
    for (std::size_t t = 0; t < m; ++t) {
        if (text_ids[t] >= cfg.vocab_size) throw ValueError("decode: token id out of range");
        for (std::size_t j = 0; j < cfg.d_model; ++j)
            z(n + t, j) = weights.tok_embed(text_ids[t], j) + weights.dec_pos(n + t, j);
    }

    const MaskMatrix base_mask = causal_mask(seq);
    const SequenceLayout layout{n, m};
    const InhibitionSchedule schedule =
        linear_gamma_schedule(cfg.llm_depth, cfg.cmai.enabled ? cfg.cmai.gamma_max : 0.0);

    DecodeResult result;
    for (std::size_t l = 0; l < cfg.llm_depth; ++l) {
        LayerReport lr;
        lr.gamma = schedule.gamma[l];
        if (cfg.cmai.enabled) {
            CmaiLayerOutput out = cmai_layer(z, weights.decoder[l], base_mask, layout,
                                             schedule.gamma[l], cfg.cmai.mode, cfg.cmai.discount,
                                             cfg.cmai.focus_basis, cfg.literal_equations);
            z = std::move(out.hidden);
            for (const auto& row : out.inhibition.positions) ++lr.inhibited_histogram[row.size()];
            lr.image_mass_before = out.inhibition.image_mass_before;
            lr.image_mass_after = out.inhibition.image_mass_after;
        } else {
            auto [hidden, record] = transformer_block(z, weights.decoder[l], base_mask,
                                                      cfg.literal_equations);
            z = std::move(hidden);
            double mass = 0.0;
            for (std::size_t j = 0; j < m; ++j)
                for (std::size_t k = 0; k < n; ++k) mass += record.averaged_weights(n + j, k);
            lr.image_mass_before = mass;
            lr.image_mass_after = mass;
        }
        result.layers.push_back(std::move(lr));
    }
    result.logits = matmul(z, weights.head);
    return result;
}

// Greedy decoding: full forward each step, argmax of the last position with
// ties to the lowest token id. No caching.
inline std::vector<std::size_t> generate_greedy(const Matrix& visual,
                                                const std::vector<std::size_t>& prompt_ids,
                                                std::size_t steps, const Weights& weights,
                                                const ModelConfig& cfg) {
    if (steps == 0) throw ValueError("generate_greedy: steps must be >= 1");
    std::vector<std::size_t> ids = prompt_ids;
    std::vector<std::size_t> generated;
    for (std::size_t step = 0; step < steps; ++step) {
        const DecodeResult dec = decode(visual, ids, weights, cfg);
        const std::size_t last = dec.logits.rows() - 1;
        std::size_t best = 0;
        double best_val = dec.logits(last, 0);
        for (std::size_t v = 1; v < cfg.vocab_size; ++v) {
            if (dec.logits(last, v) > best_val) {
                best_val = dec.logits(last, v);
                best = v;
            }
        }
        ids.push_back(best);
        generated.push_back(best);
    }
    return generated;
}

// Deterministic synthetic inputs derived from the config seed: patches from
// one stream, prompt token ids from another.
inline Matrix synthesize_patches(const ModelConfig& cfg) {
    Rng rng(cfg.seed + 1);
    return gaussian_init(rng, cfg.n_patches, cfg.patch_dim, 1.0);
}

inline std::vector<std::size_t> synthesize_prompt(const ModelConfig& cfg) {
    Rng rng(cfg.seed + 2);
    std::vector<std::size_t> ids(cfg.prompt_len);
    for (auto& id : ids) id = static_cast<std::size_t>(rng.next_below(cfg.vocab_size));
    return ids;
}

// Full run: encode, project, decode, optional generation; produces a report
// whose canonical serialization is a pure function of (config, inputs).
// `config_json` should be the canonical echo of `cfg` (the config module
// provides it); it is embedded verbatim.
inline RunReport run_pipeline(const ModelConfig& cfg, const Matrix& patches,
                              const std::vector<std::size_t>& text_ids, const Weights& weights,
                              const std::string& config_json) {
    const auto start = std::chrono::steady_clock::now();
    RunReport report;
    report.config_json = config_json;
    report.seed = cfg.seed;

    const EncodeResult enc = encode_image(patches, weights, cfg);
    report.stage_token_counts = enc.stage_token_counts;
    report.final_visual_token_count = enc.tokens.rows();

    const Matrix visual = project(enc.tokens, weights);
    DecodeResult dec = decode(visual, text_ids, weights, cfg);
    report.layers = dec.layers;

    if (cfg.generate_steps > 0) {
        report.generated_ids = generate_greedy(visual, text_ids, cfg.generate_steps, weights, cfg);
        std::vector<std::size_t> full = text_ids;
        full.insert(full.end(), report.generated_ids.begin(), report.generated_ids.end());
        dec = decode(visual, full, weights, cfg);  // digest covers the final forward
    }
    report.logits_digest = digest_hex(matrix_digest(dec.logits));

    const auto end = std::chrono::steady_clock::now();
    report.duration_ms = std::chrono::duration<double, std::milli>(end - start).count();
    return report;
}

}  // namespace tinymm
