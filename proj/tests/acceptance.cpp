// Acceptance suite: one pass/fail line per criterion, exit 0 only if all
// pass. Give it a build of the CLI via TINYMM_CLI_PATH.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tinymm/config.hpp"
#include "tinymm/oracle.hpp"
#include "tinymm/pipeline.hpp"
#include "tinymm/weights_io.hpp"

namespace fs = std::filesystem;
using namespace tinymm;
using Clock = std::chrono::steady_clock;

namespace {

const std::string kCli = TINYMM_CLI_PATH;

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = kCli + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Check {
    bool ok = true;
    std::string detail;
    void fail(const std::string& why) {
        ok = false;
        if (!detail.empty()) detail += "; ";
        detail += why;
    }
    void note(const std::string& info) {
        if (!detail.empty()) detail += "; ";
        detail += info;
    }
};

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = rng.next_gaussian();
    return m;
}

Matrix random_attention_matrix(Rng& rng, std::size_t side) {
    Matrix m(side, side);
    for (std::size_t i = 0; i < side; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < side; ++j) {
            m(i, j) = rng.next_double() + 1e-3;
            sum += m(i, j);
        }
        for (std::size_t j = 0; j < side; ++j) m(i, j) /= sum;
    }
    return m;
}

// The default toy configuration with both mechanisms enabled.
const char* kDefaultConfig = R"({
  "d_model": 64, "n_heads": 4, "d_ff": 128,
  "vit_depth": 6, "llm_depth": 6,
  "n_patches": 64, "patch_dim": 48,
  "vocab_size": 256, "max_text_len": 16, "prompt_len": 8,
  "seed": 42,
  "vmtc": {"mode": "vmtc", "keep_ratio": 0.5, "num_stages": 3, "clusters_per_stage": 4},
  "cmai": {"enabled": true, "gamma_max": 0.6}
})";

// 1. Production operations agree with their brute-force oracles.
Check criterion_oracle_agreement() {
    Check c;
    const auto start = Clock::now();
    for (const auto& res : oracle::run_suites("all", 50, 2024)) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s max dev %.2e", res.name.c_str(), res.max_deviation);
        c.note(buf);
        if (!res.passed()) c.fail(res.name + " disagreed on " + std::to_string(res.failures) +
                                  " of " + std::to_string(res.cases) + " cases");
    }
    const double elapsed = seconds_since(start);
    if (elapsed >= 30.0) c.fail("suite took " + std::to_string(elapsed) + "s (budget 30s)");
    return c;
}

// 2. gamma_max = 0 is bit-identical to disabling the mechanism.
Check criterion_cmai_noop() {
    Check c;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        ModelConfig cfg;
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 32;
        cfg.vit_depth = 2;
        cfg.llm_depth = 3;
        cfg.n_patches = 9;
        cfg.patch_dim = 8;
        cfg.vocab_size = 32;
        cfg.max_text_len = 8;
        cfg.prompt_len = 5;
        cfg.seed = seed;
        const Weights w = init_weights(cfg);
        const Matrix patches = synthesize_patches(cfg);
        const auto prompt = synthesize_prompt(cfg);
        const Matrix visual = project(encode_image(patches, w, cfg).tokens, w);

        ModelConfig off = cfg;
        off.cmai.enabled = false;
        ModelConfig zero = cfg;
        zero.cmai.enabled = true;
        zero.cmai.gamma_max = 0.0;
        const Matrix logits_off = decode(visual, prompt, w, off).logits;
        const Matrix logits_zero = decode(visual, prompt, w, zero).logits;
        if (!(logits_off == logits_zero)) c.fail("logits differ at seed " + std::to_string(seed));
    }
    if (c.ok) c.note("10 seeded configs bit-identical");
    return c;
}

// 3. Every decoder layer inhibits exactly min(floor(gamma_l * n), n - 1)
//    image columns per text row.
Check criterion_inhibition_counts() {
    Check c;
    std::size_t rows_checked = 0;
    for (double gamma_max : {0.0, 0.2, 0.4, 0.6}) {
        ModelConfig cfg;
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 32;
        cfg.vit_depth = 2;
        cfg.llm_depth = 5;
        cfg.n_patches = 16;
        cfg.patch_dim = 8;
        cfg.vocab_size = 32;
        cfg.max_text_len = 8;
        cfg.seed = 31;
        cfg.cmai.enabled = true;
        cfg.cmai.gamma_max = gamma_max;
        const Weights w = init_weights(cfg);
        const Matrix patches = synthesize_patches(cfg);
        const Matrix visual = project(encode_image(patches, w, cfg).tokens, w);
        const std::size_t n = visual.rows();
        const std::vector<std::size_t> prompt{1, 2, 3, 4, 5, 6};

        const MaskMatrix base = causal_mask(n + prompt.size());
        const SequenceLayout layout{n, prompt.size()};
        const InhibitionSchedule schedule = linear_gamma_schedule(cfg.llm_depth, gamma_max);

        // Walk the decoder layer by layer so every row's positions are visible.
        Matrix z(n + prompt.size(), cfg.d_model);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < cfg.d_model; ++j) z(i, j) = visual(i, j) + w.dec_pos(i, j);
        for (std::size_t t = 0; t < prompt.size(); ++t)
            for (std::size_t j = 0; j < cfg.d_model; ++j)
                z(n + t, j) = w.tok_embed(prompt[t], j) + w.dec_pos(n + t, j);

        for (std::size_t l = 0; l < cfg.llm_depth; ++l) {
            const CmaiLayerOutput out =
                cmai_layer(z, w.decoder[l], base, layout, schedule.gamma[l],
                           cfg.cmai.mode, cfg.cmai.discount, cfg.cmai.focus_basis, false);
            const std::size_t expected = std::min(
                static_cast<std::size_t>(
                    std::floor(schedule.gamma[l] * static_cast<double>(n))),
                n - 1);
            for (std::size_t row = 0; row < prompt.size(); ++row) {
                ++rows_checked;
                if (out.inhibition.positions[row].size() != expected)
                    c.fail("gamma_max " + std::to_string(gamma_max) + " layer " +
                           std::to_string(l) + " row " + std::to_string(row) + ": got " +
                           std::to_string(out.inhibition.positions[row].size()) + " want " +
                           std::to_string(expected));
            }
            z = out.hidden;
        }
    }
    c.note(std::to_string(rows_checked) + " text rows checked");
    return c;
}

// 4. The 576-patch schedule realizes 457/363/288 and passes primaries and the
//    class token through bit-exact; a real encoder run reproduces the counts.
Check criterion_compression_arithmetic() {
    Check c;
    VmtcConfig vcfg;
    vcfg.mode = CompressionMode::kVmtc;
    vcfg.target_keep_ratio = 0.5;
    vcfg.num_stages = 3;
    vcfg.clusters_per_stage = 4;
    const StageSchedule schedule = schedule_stages(576, vcfg);
    const std::vector<std::size_t> want{457, 363, 288};
    for (std::size_t t = 0; t < 3; ++t)
        if (schedule.stages[t].n_out != want[t])
            c.fail("stage " + std::to_string(t) + " count " +
                   std::to_string(schedule.stages[t].n_out));

    // Stage-by-stage compress calls on synthetic data: verbatim pass-through.
    Rng rng(2025);
    for (const StageCounts& sc : schedule.stages) {
        const Matrix z = random_matrix(rng, sc.n_in + 1, 8);
        const Matrix a_w = random_attention_matrix(rng, sc.n_in + 1);
        Rng km(7);
        const Matrix out = compress(z, a_w, sc.keep, sc.clusters, vcfg, km);
        if (out.rows() != 1 + sc.n_out) c.fail("stage output rows " + std::to_string(out.rows()));
        if (!(out.row(0) == z.row(0))) c.fail("class token not bit-exact");
        const auto part = partition_tokens(importance_scores(a_w), sc.keep);
        for (std::size_t i = 0; i < sc.keep; ++i)
            if (!(out.row(1 + i) == z.row(part.primary[i] + 1))) {
                c.fail("primary token not bit-exact at stage input " + std::to_string(sc.n_in));
                break;
            }
    }

    // Full encoder at 576 patches.
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.vit_depth = 4;
    cfg.llm_depth = 1;
    cfg.n_patches = 576;
    cfg.patch_dim = 8;
    cfg.vocab_size = 16;
    cfg.seed = 4;
    cfg.vmtc = vcfg;
    const Weights w = init_weights(cfg);
    const EncodeResult enc = encode_image(synthesize_patches(cfg), w, cfg);
    if (enc.stage_token_counts != want) c.fail("encoder stage counts diverge from the schedule");
    if (enc.tokens.rows() != 288)
        c.fail("final visual count " + std::to_string(enc.tokens.rows()));
    if (c.ok) c.note("457/363/288 and bit-exact pass-through");
    return c;
}

// 5. Equation-level identities hold exactly.
Check criterion_equation_identities() {
    Check c;
    Rng rng(99);

    const Matrix a_t2t = random_matrix(rng, 6, 6);
    const Matrix lower = neighborhood_mask(a_t2t);
    for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t k = j; k < 6; ++k)
            if (lower(j, k) != 0.0) c.fail("neighborhood mask not strictly lower triangular");

    const Matrix a_t2i = random_matrix(rng, 6, 9);
    Matrix diag(6, 6);
    for (std::size_t j = 0; j < 6; ++j) diag(j, j) = rng.next_double();
    const FocusScore f = compute_focus(a_t2i, diag, FocusMode::kNeighborhood, 0.5);
    if (!(f.f == a_t2i)) c.fail("focus does not reduce to direct attention");

    Matrix token(1, 5);
    for (std::size_t e = 0; e < 5; ++e) token(0, e) = rng.next_gaussian();
    ClusterAssignment assignment;
    assignment.n_clusters = 1;
    assignment.labels = {0};
    ImportanceScores ips;
    ips.values = {0.37};
    const Matrix merged = merge_clusters(token, {0}, assignment, ips, false);
    for (std::size_t e = 0; e < 5; ++e)
        if (merged(0, e) != 0.37 * token(0, e)) c.fail("single-member merge not exact");

    if (c.ok) c.note("strict lower triangle, focus reduction, single-member merge");
    return c;
}

// 6. Clustering quality: within 5% of the exhaustive optimum on >= 90% of 50
//    instances and a non-increasing objective on all of them.
Check criterion_kmeans_quality() {
    Check c;
    Rng rng(321);
    std::size_t near_optimal = 0;
    const std::size_t trials = 50;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t r = 2 + rng.next_below(9);
        const std::size_t d = 2 + rng.next_below(4);
        const std::size_t k = 1 + rng.next_below(r);
        const Matrix tokens = random_matrix(rng, r, d);
        Rng km(trial + 1);
        const ClusterAssignment got = spherical_kmeans(tokens, k, km, 50, 1e-6);
        for (std::size_t i = 1; i < got.objective_history.size(); ++i)
            if (got.objective_history[i] > got.objective_history[i - 1] + 1e-12)
                c.fail("objective increased at trial " + std::to_string(trial));
        const double obj = oracle::clustering_objective(tokens, got);
        const auto best = oracle::exhaustive_kmeans(tokens, k);
        if (obj < best.objective - 1e-9) c.fail("objective beat the exhaustive optimum");
        if (obj <= best.objective * 1.05 + 1e-9) ++near_optimal;
    }
    c.note(std::to_string(near_optimal) + "/" + std::to_string(trials) + " within 5% of optimum");
    if (near_optimal * 10 < trials * 9) c.fail("below the 90% quality bar");
    return c;
}

// 7. Byte-identical CLI reports and bit-exact weights round trips.
Check criterion_determinism(const fs::path& dir) {
    Check c;
    const fs::path cfg_path = dir / "default.json";
    std::ofstream(cfg_path) << kDefaultConfig;
    const fs::path r1 = dir / "det1.json";
    const fs::path r2 = dir / "det2.json";
    if (run_cli("run --config " + cfg_path.string() + " --report " + r1.string(),
                dir / "det1.log") != 0)
        c.fail("first run failed");
    if (run_cli("run --config " + cfg_path.string() + " --report " + r2.string(),
                dir / "det2.log") != 0)
        c.fail("second run failed");
    if (c.ok && slurp(r1) != slurp(r2)) c.fail("reports are not byte-identical");

    ModelConfig mc;
    mc.vit_depth = 2;
    mc.llm_depth = 2;
    mc.seed = 77;
    const Weights w = init_weights(mc);
    const fs::path wfile = dir / "roundtrip.vmtc";
    save_weights(w, wfile.string());
    const Weights loaded = load_weights(wfile.string());
    if (serialize_weights(loaded) != serialize_weights(w))
        c.fail("weights round trip is not bit-exact");
    if (c.ok) c.note("reports byte-identical, weights round trip bit-exact");
    return c;
}

// 8. Spatial down-sampling of a 24x24 grid by factor 2 gives 144 tokens whose
//    values equal the 2x2 block means exactly.
Check criterion_spd_baseline() {
    Check c;
    Rng rng(555);
    const std::size_t g = 24, f = 2, d = 6;
    const Matrix tokens = random_matrix(rng, g * g, d);
    const Matrix down = spatial_downsample(tokens, g, f);
    if (down.rows() != 144) c.fail("expected 144 tokens, got " + std::to_string(down.rows()));
    for (std::size_t br = 0; br < g / f; ++br)
        for (std::size_t bc = 0; bc < g / f; ++bc)
            for (std::size_t e = 0; e < d; ++e) {
                double sum = 0.0;
                for (std::size_t r = 0; r < f; ++r)
                    for (std::size_t cc = 0; cc < f; ++cc)
                        sum += tokens((br * f + r) * g + (bc * f + cc), e);
                if (down(br * (g / f) + bc, e) != sum / 4.0) {
                    c.fail("block mean mismatch");
                    br = bc = g;  // bail out
                    break;
                }
            }
    if (c.ok) c.note("144 tokens equal block means exactly");
    return c;
}

// 9. Runtime budget: the default config runs end to end in < 10 s and the
//    full oracle suite in < 60 s.
Check criterion_runtime(const fs::path& dir) {
    Check c;
    const fs::path cfg_path = dir / "default.json";
    std::ofstream(cfg_path) << kDefaultConfig;

    auto start = Clock::now();
    if (run_cli("run --config " + cfg_path.string() + " --report " + (dir / "rt.json").string(),
                dir / "rt.log") != 0)
        c.fail("run failed");
    const double run_s = seconds_since(start);
    if (run_s >= 10.0) c.fail("run took " + std::to_string(run_s) + "s (budget 10s)");

    start = Clock::now();
    if (run_cli("oracle --suite all", dir / "oracle.log") != 0) c.fail("oracle suite failed");
    const double oracle_s = seconds_since(start);
    if (oracle_s >= 60.0) c.fail("oracle took " + std::to_string(oracle_s) + "s (budget 60s)");

    char buf[96];
    std::snprintf(buf, sizeof(buf), "run %.2fs, oracle %.2fs", run_s, oracle_s);
    c.note(buf);
    return c;
}

}  // namespace

int main() {
    const fs::path dir = fs::temp_directory_path() / "tinymm_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    struct Criterion {
        const char* name;
        std::function<Check()> run;
    };
    const std::vector<Criterion> criteria{
        {"oracle agreement (attention 1e-9, n2i 1e-12, merge 1e-12, quantile exact)",
         [] { return criterion_oracle_agreement(); }},
        {"gamma_max 0 equals disabled, bit-identical logits",
         [] { return criterion_cmai_noop(); }},
        {"inhibited count is min(floor(gamma*n), n-1) for every layer and row",
         [] { return criterion_inhibition_counts(); }},
        {"576-patch schedule 457/363/288 with bit-exact pass-through",
         [] { return criterion_compression_arithmetic(); }},
        {"equation-level identities are exact",
         [] { return criterion_equation_identities(); }},
        {"clustering within 5% of exhaustive optimum, monotone objective",
         [] { return criterion_kmeans_quality(); }},
        {"byte-identical reports and bit-exact weights round trip",
         [&] { return criterion_determinism(dir); }},
        {"spatial down-sampling 24x24 -> 144 exact block means",
         [] { return criterion_spd_baseline(); }},
        {"runtime budget: run < 10s, oracle suite < 60s",
         [&] { return criterion_runtime(dir); }},
    };

    bool all_ok = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Check result;
        try {
            result = criteria[i].run();
        } catch (const std::exception& e) {
            result.fail(std::string("exception: ") + e.what());
        }
        all_ok = all_ok && result.ok;
        std::printf("[%s] %zu. %s%s%s\n", result.ok ? "PASS" : "FAIL", i + 1, criteria[i].name,
                    result.detail.empty() ? "" : " -- ", result.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%s\n", all_ok ? "acceptance: all criteria passed" : "acceptance: FAILURES");
    return all_ok ? 0 : 1;
}
