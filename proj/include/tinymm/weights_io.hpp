#pragma once

// Binary weights file. Layout, all integers little-endian, no padding:
//   magic "VMTC" | version u32 | tensor count u32 |
//   per tensor: name length u32 | UTF-8 name | ndims u32 | dims u32 each |
//               payload, 64-bit floats, little-endian, row-major
// Save then load reproduces every bit.

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tinymm/error.hpp"
#include "tinymm/pipeline.hpp"

namespace tinymm {

inline constexpr std::uint32_t kWeightsVersion = 1;

namespace wio {

struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<double> values;
};

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::size_t offset() const { return pos_; }

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
        pos_ += 4;
        return v;
    }

    double f64() {
        need(8, "f64");
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }

    std::string str(std::size_t len) {
        need(len, "string");
        std::string s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t count, const char* what) const {
        if (pos_ + count > bytes_.size())
            throw ParseError(pos_, std::string("truncated file while reading ") + what);
    }

    std::string bytes_;
    std::size_t pos_ = 0;
};

inline void append_matrix(std::map<std::string, Tensor>& t, const std::string& name,
                          const Matrix& m) {
    Tensor tensor;
    tensor.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    tensor.values = m.data();
    t[name] = std::move(tensor);
}

inline void append_vector(std::map<std::string, Tensor>& t, const std::string& name,
                          const std::vector<double>& v) {
    Tensor tensor;
    tensor.dims = {static_cast<std::uint32_t>(v.size())};
    tensor.values = v;
    t[name] = std::move(tensor);
}

inline void block_tensors(std::map<std::string, Tensor>& t, const std::string& prefix,
                          const BlockParams& b) {
    append_matrix(t, prefix + ".attn.w_q", b.attn.w_q);
    append_matrix(t, prefix + ".attn.w_k", b.attn.w_k);
    append_matrix(t, prefix + ".attn.w_v", b.attn.w_v);
    append_matrix(t, prefix + ".attn.w_o", b.attn.w_o);
    append_matrix(t, prefix + ".mlp_in", b.mlp_in);
    append_matrix(t, prefix + ".mlp_out", b.mlp_out);
    append_vector(t, prefix + ".ln1.scale", b.ln1_scale);
    append_vector(t, prefix + ".ln1.shift", b.ln1_shift);
    append_vector(t, prefix + ".ln2.scale", b.ln2_scale);
    append_vector(t, prefix + ".ln2.shift", b.ln2_shift);
}

inline Matrix take_matrix(std::map<std::string, Tensor>& t, const std::string& name) {
    auto it = t.find(name);
    if (it == t.end()) throw ParseError(0, "missing tensor " + name);
    if (it->second.dims.size() != 2) throw ParseError(0, "tensor " + name + " is not 2-d");
    Matrix m(it->second.dims[0], it->second.dims[1]);
    m.data() = std::move(it->second.values);
    t.erase(it);
    return m;
}

inline std::vector<double> take_vector(std::map<std::string, Tensor>& t, const std::string& name) {
    auto it = t.find(name);
    if (it == t.end()) throw ParseError(0, "missing tensor " + name);
    if (it->second.dims.size() != 1) throw ParseError(0, "tensor " + name + " is not 1-d");
    std::vector<double> v = std::move(it->second.values);
    t.erase(it);
    return v;
}

inline BlockParams take_block(std::map<std::string, Tensor>& t, const std::string& prefix,
                              std::size_t n_heads) {
    BlockParams b;
    b.attn.w_q = take_matrix(t, prefix + ".attn.w_q");
    b.attn.w_k = take_matrix(t, prefix + ".attn.w_k");
    b.attn.w_v = take_matrix(t, prefix + ".attn.w_v");
    b.attn.w_o = take_matrix(t, prefix + ".attn.w_o");
    b.attn.n_heads = n_heads;
    b.mlp_in = take_matrix(t, prefix + ".mlp_in");
    b.mlp_out = take_matrix(t, prefix + ".mlp_out");
    b.ln1_scale = take_vector(t, prefix + ".ln1.scale");
    b.ln1_shift = take_vector(t, prefix + ".ln1.shift");
    b.ln2_scale = take_vector(t, prefix + ".ln2.scale");
    b.ln2_shift = take_vector(t, prefix + ".ln2.shift");
    return b;
}

}  // namespace wio

// Canonical tensor-name layout of a full model; files store tensors sorted
// by name.
inline std::map<std::string, wio::Tensor> weights_to_tensors(const Weights& w) {
    std::map<std::string, wio::Tensor> t;
    wio::append_matrix(t, "patch_embed", w.patch_embed);
    wio::append_vector(t, "cls", w.cls);
    wio::append_matrix(t, "enc_pos", w.enc_pos);
    wio::append_matrix(t, "dec_pos", w.dec_pos);
    for (std::size_t l = 0; l < w.encoder.size(); ++l)
        wio::block_tensors(t, "enc." + std::to_string(l), w.encoder[l]);
    for (std::size_t l = 0; l < w.decoder.size(); ++l)
        wio::block_tensors(t, "dec." + std::to_string(l), w.decoder[l]);
    wio::append_matrix(t, "proj.w1", w.proj_w1);
    wio::append_vector(t, "proj.b1", w.proj_b1);
    wio::append_matrix(t, "proj.w2", w.proj_w2);
    wio::append_vector(t, "proj.b2", w.proj_b2);
    wio::append_matrix(t, "tok_embed", w.tok_embed);
    wio::append_matrix(t, "head", w.head);
    return t;
}

inline std::string serialize_weights(const Weights& w) {
    const auto tensors = weights_to_tensors(w);
    std::string out = "VMTC";
    wio::put_u32(out, kWeightsVersion);
    wio::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        wio::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        wio::put_u32(out, static_cast<std::uint32_t>(tensor.dims.size()));
        for (std::uint32_t d : tensor.dims) wio::put_u32(out, d);
        for (double v : tensor.values) wio::put_f64(out, v);
    }
    return out;
}

inline void save_weights(const Weights& w, const std::string& path) {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw ValueError("save_weights: cannot open " + path);
    const std::string bytes = serialize_weights(w);
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) throw ValueError("save_weights: write failed for " + path);
}

// Parses and validates the whole file before assembling anything; a malformed
// file yields a ParseError with the offending byte offset and no weights.
inline Weights deserialize_weights(const std::string& bytes) {
    wio::Reader r(bytes);
    if (r.str(4) != "VMTC") throw ParseError(0, "bad magic, expected VMTC");
    const std::uint32_t version = r.u32();
    if (version != kWeightsVersion)
        throw ParseError(4, "unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32();

    std::map<std::string, wio::Tensor> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t name_offset = r.offset();
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        if (name.empty()) throw ParseError(name_offset, "empty tensor name");
        if (tensors.count(name)) throw ParseError(name_offset, "duplicate tensor " + name);
        wio::Tensor t;
        const std::uint32_t ndims = r.u32();
        if (ndims == 0 || ndims > 2) throw ParseError(r.offset() - 4, "unsupported rank");
        std::uint64_t total = 1;
        for (std::uint32_t d = 0; d < ndims; ++d) {
            t.dims.push_back(r.u32());
            total *= t.dims.back();
        }
        if (total * 8 > bytes.size() - r.offset())
            throw ParseError(r.offset(), "tensor " + name + " payload exceeds file size");
        t.values.reserve(total);
        for (std::uint64_t e = 0; e < total; ++e) t.values.push_back(r.f64());
        tensors[name] = std::move(t);
    }
    if (!r.at_end()) throw ParseError(r.offset(), "trailing bytes after last tensor");

    // Head count is not stored; callers re-stamp it via attach_config.
    const std::size_t n_heads = 1;
    Weights w;
    w.patch_embed = wio::take_matrix(tensors, "patch_embed");
    w.cls = wio::take_vector(tensors, "cls");
    w.enc_pos = wio::take_matrix(tensors, "enc_pos");
    w.dec_pos = wio::take_matrix(tensors, "dec_pos");
    for (std::size_t l = 0; tensors.count("enc." + std::to_string(l) + ".attn.w_q"); ++l)
        w.encoder.push_back(wio::take_block(tensors, "enc." + std::to_string(l), n_heads));
    for (std::size_t l = 0; tensors.count("dec." + std::to_string(l) + ".attn.w_q"); ++l)
        w.decoder.push_back(wio::take_block(tensors, "dec." + std::to_string(l), n_heads));
    w.proj_w1 = wio::take_matrix(tensors, "proj.w1");
    w.proj_b1 = wio::take_vector(tensors, "proj.b1");
    w.proj_w2 = wio::take_matrix(tensors, "proj.w2");
    w.proj_b2 = wio::take_vector(tensors, "proj.b2");
    w.tok_embed = wio::take_matrix(tensors, "tok_embed");
    w.head = wio::take_matrix(tensors, "head");
    if (!tensors.empty())
        throw ParseError(0, "unexpected tensor " + tensors.begin()->first);
    return w;
}

inline Weights load_weights(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ValueError("load_weights: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    return deserialize_weights(bytes);
}

// Re-stamp the head count and check every tensor shape against the config.
inline void attach_config(Weights& w, const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model;
    auto bad = [](const std::string& what) { return ValueError("weights/config mismatch: " + what); };
    if (w.patch_embed.rows() != cfg.patch_dim || w.patch_embed.cols() != d)
        throw bad("patch_embed");
    if (w.cls.size() != d) throw bad("cls");
    if (w.enc_pos.rows() != cfg.n_patches + 1 || w.enc_pos.cols() != d) throw bad("enc_pos");
    if (w.dec_pos.rows() != cfg.n_patches + 1 + cfg.max_text_len || w.dec_pos.cols() != d)
        throw bad("dec_pos");
    if (w.encoder.size() != cfg.vit_depth) throw bad("encoder depth");
    if (w.decoder.size() != cfg.llm_depth) throw bad("decoder depth");
    for (auto blocks : {&w.encoder, &w.decoder}) {
        for (auto& b : *blocks) {
            if (b.attn.w_q.rows() != d || b.mlp_in.cols() != cfg.d_ff ||
                b.mlp_out.rows() != cfg.d_ff || b.ln1_scale.size() != d)
                throw bad("block shapes");
            b.attn.n_heads = cfg.n_heads;
        }
    }
    if (w.tok_embed.rows() != cfg.vocab_size || w.head.cols() != cfg.vocab_size)
        throw bad("vocabulary");
}

}  // namespace tinymm
