#pragma once

// Tiny vision-language decoder: patch-embedded image prefix, question tokens,
// K dedicated latent slots, then the answer, all under one causal attention
// stack. Per-layer inputs and attention maps are exported, and the latent
// rows of each layer input can be overridden from another pass.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crystal/errors.hpp"
#include "crystal/image.hpp"
#include "crystal/ops.hpp"
#include "crystal/rng.hpp"
#include "crystal/tensor.hpp"
#include "crystal/vocab.hpp"

namespace crystal {

enum class LatentMode { Diverse, Identical };

inline const char* latent_mode_name(LatentMode m) {
    return m == LatentMode::Diverse ? "diverse" : "identical";
}

inline LatentMode parse_latent_mode(const std::string& s) {
    if (s == "diverse") return LatentMode::Diverse;
    if (s == "identical") return LatentMode::Identical;
    throw ConfigError("unknown latent mode \"" + s + "\"");
}

struct ModelConfig {
    int layers = 4;
    int heads = 4;
    int dim = 128;
    int patch = 8;
    int latents = 8;
    LatentMode latent_mode = LatentMode::Diverse;
    int vocab = 0;     // filled from Vocab by default
    int max_seq = 96;

    static constexpr int kMlpRatio = 1;

    void validate() const {
        if (layers < 1) throw ConfigError("layers must be >= 1");
        if (heads < 1 || dim % heads != 0) throw ConfigError("dim must be divisible by heads");
        if (latents < 1 || latents > Vocab::kMaxLatents)
            throw ConfigError("latents must lie in [1, " + std::to_string(Vocab::kMaxLatents) + "]");
        if (patch < 1 || dim < 1 || vocab < 1 || max_seq < 1) throw ConfigError("invalid model extents");
    }

    int head_dim() const { return dim / heads; }
    int patch_values() const { return patch * patch * 3; }

    // Closed-form parameter count; asserted against the live registry.
    int64_t param_count() const {
        const int64_t d = dim, v = vocab, m = kMlpRatio * dim;
        int64_t per_layer = 2 * d                 // ln1
                            + 3 * (d * d + d)     // q, k, v
                            + d * d + d           // attention out
                            + 2 * d               // ln2
                            + d * m + m           // mlp in
                            + m * d + d;          // mlp out
        return v * d                              // token table
               + max_seq * d                      // positions
               + patch_values() * d + d           // patch projection
               + layers * per_layer
               + 2 * d                            // final norm
               + d * v + v;                       // head
    }
};

enum class Role : uint8_t { Image, Question, Latent, Answer, Special };

// Segmented multimodal sequence. Image patches occupy the prefix; ids are
// only meaningful at non-image positions.
struct TokenSequence {
    std::vector<int> ids;     // -1 at image positions
    std::vector<Role> roles;
    int image_tokens = 0;
    int latent_begin = 0;
    int latent_count = 0;
    int ans_pos = 0;          // position of the <ans> marker
    int answer_len = 0;       // 0 in decode mode

    int length() const { return static_cast<int>(ids.size()); }
};

// Assembles {image, question, latents, answer}. An empty answer builds the
// decode-mode sequence ending at the <ans> marker.
inline TokenSequence build_sequence(const Vocab& vocab, const ModelConfig& cfg,
                                    const std::vector<int>& question, const std::vector<int>& answer,
                                    int image_tokens) {
    TokenSequence seq;
    seq.image_tokens = image_tokens;
    for (int i = 0; i < image_tokens; ++i) {
        seq.ids.push_back(-1);
        seq.roles.push_back(Role::Image);
    }
    seq.ids.push_back(vocab.bos());
    seq.roles.push_back(Role::Special);
    for (int id : question) {
        seq.ids.push_back(id);
        seq.roles.push_back(Role::Question);
    }
    seq.ids.push_back(vocab.sep());
    seq.roles.push_back(Role::Special);
    seq.latent_begin = seq.length();
    seq.latent_count = cfg.latents;
    for (int k = 0; k < cfg.latents; ++k) {
        seq.ids.push_back(cfg.latent_mode == LatentMode::Identical ? vocab.lat_shared() : vocab.lat(k));
        seq.roles.push_back(Role::Latent);
    }
    seq.ans_pos = seq.length();
    seq.ids.push_back(vocab.ans());
    seq.roles.push_back(Role::Special);
    seq.answer_len = static_cast<int>(answer.size());
    for (int id : answer) {
        seq.ids.push_back(id);
        seq.roles.push_back(Role::Answer);
    }
    if (seq.length() > cfg.max_seq)
        throw DimensionError("sequence length " + std::to_string(seq.length()) + " exceeds max_seq " +
                             std::to_string(cfg.max_seq));
    return seq;
}

// Positions whose shifted next-token target is an answer token, plus the one
// predicting <eos> after the final answer token.
inline std::vector<int> answer_logit_positions(const TokenSequence& seq) {
    if (seq.answer_len < 1) throw ContractViolation("sequence has no answer tokens");
    std::vector<int> omega;
    for (int p = seq.ans_pos; p <= seq.ans_pos + seq.answer_len; ++p) omega.push_back(p);
    return omega;
}

// (position, target id) pairs for the answer segment under the shifted-label
// convention; the final target is <eos>.
inline std::vector<std::pair<int, int>> answer_labels(const TokenSequence& seq, const Vocab& vocab) {
    const auto omega = answer_logit_positions(seq);
    std::vector<std::pair<int, int>> labels;
    for (size_t i = 0; i + 1 < omega.size(); ++i)
        labels.emplace_back(omega[i], seq.ids[static_cast<size_t>(omega[i] + 1)]);
    labels.emplace_back(omega.back(), vocab.eos());
    return labels;
}

// Everything one forward pass exposes: layer inputs (checkpoints 0..l-1 are
// what each layer consumed, l is the final output), per-layer per-head
// attention probabilities, latent-row slices of each layer input, and logits.
struct DualPathTrace {
    std::vector<Tensor> checkpoints;                  // l+1 tensors [T x d]
    std::vector<Tensor> latent_checkpoints;           // l tensors [K x d]
    std::vector<std::vector<Tensor>> attention;       // [layer][head], each [T x T]
    Tensor logits;                                    // [T x V]
};

class Model {
public:
    Model(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
        if (cfg_.vocab == 0) cfg_.vocab = Vocab().size();
        cfg_.validate();
        Rng rng(Rng::derive(seed, 0x30DE1));
        const int d = cfg_.dim, v = cfg_.vocab, m = ModelConfig::kMlpRatio * d;
        const double residual_scale = 1.0 / std::sqrt(2.0 * cfg_.layers);

        // embeddings sized so their relative step under SGD matches the
        // projection matrices; the normalized stack is scale-invariant to this
        token_table_ = normal_param("token_table", {v, d}, 0.1, rng);
        pos_table_ = normal_param("pos_table", {cfg_.max_seq, d}, 0.1, rng);
        patch_w_ = xavier_param("patch_w", {cfg_.patch_values(), d}, rng);
        patch_b_ = zero_param("patch_b", {d});
        layers_.resize(static_cast<size_t>(cfg_.layers));
        for (int l = 0; l < cfg_.layers; ++l) {
            auto& lp = layers_[static_cast<size_t>(l)];
            const std::string tag = "layer" + std::to_string(l) + ".";
            lp.ln1_g = one_param(tag + "ln1_g", {d});
            lp.ln1_b = zero_param(tag + "ln1_b", {d});
            lp.wq = xavier_param(tag + "wq", {d, d}, rng);
            lp.bq = zero_param(tag + "bq", {d});
            lp.wk = xavier_param(tag + "wk", {d, d}, rng);
            lp.bk = zero_param(tag + "bk", {d});
            lp.wv = xavier_param(tag + "wv", {d, d}, rng);
            lp.bv = zero_param(tag + "bv", {d});
            lp.wo = xavier_param(tag + "wo", {d, d}, rng, residual_scale);
            lp.bo = zero_param(tag + "bo", {d});
            lp.ln2_g = one_param(tag + "ln2_g", {d});
            lp.ln2_b = zero_param(tag + "ln2_b", {d});
            lp.w1 = xavier_param(tag + "w1", {d, m}, rng);
            lp.b1 = zero_param(tag + "b1", {m});
            lp.w2 = xavier_param(tag + "w2", {m, d}, rng, residual_scale);
            lp.b2 = zero_param(tag + "b2", {d});
        }
        lnf_g_ = one_param("lnf_g", {d});
        lnf_b_ = zero_param("lnf_b", {d});
        head_w_ = xavier_param("head_w", {d, v}, rng);
        head_b_ = zero_param("head_b", {v});

        int64_t total = 0;
        for (const auto& p : params_) total += p.tensor.size();
        if (total != cfg_.param_count())
            throw ContractViolation("parameter registry(" + std::to_string(total) +
                                    ") disagrees with the closed form (" + std::to_string(cfg_.param_count()) + ")");
    }

    const ModelConfig& config() const { return cfg_; }

    struct NamedParam {
        std::string name;
        Tensor tensor;
    };
    const std::vector<NamedParam>& parameters() const { return params_; }
    std::vector<NamedParam>& parameters() { return params_; }

    void zero_grads() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    int image_token_count(const Image& img) const {
        if (img.height % cfg_.patch != 0 || img.width % cfg_.patch != 0)
            throw DimensionError("image extents must be divisible by the patch size");
        return (img.height / cfg_.patch) * (img.width / cfg_.patch);
    }

    // Patch projection + token lookup + learned absolute positions.
    Tensor embed(const TokenSequence& seq, const Image& img) const {
        const int p_tokens = image_token_count(img);
        if (p_tokens != seq.image_tokens)
            throw DimensionError("sequence expects " + std::to_string(seq.image_tokens) + " image tokens, image has " +
                                 std::to_string(p_tokens));
        const int t = seq.length();
        if (t > cfg_.max_seq) throw DimensionError("sequence exceeds max_seq");

        Tensor patches = patch_matrix(img);
        Tensor image_part = add_bias_rows(matmul(patches, patch_w_), patch_b_);

        std::vector<int> text_ids;
        for (int i = seq.image_tokens; i < t; ++i) {
            const int id = seq.ids[static_cast<size_t>(i)];
            if (id < 0 || id >= cfg_.vocab)
                throw VocabularyError("token id " + std::to_string(id) + " outside the vocabulary");
            text_ids.push_back(id);
        }
        Tensor text_part = gather_rows(token_table_, text_ids);

        std::vector<int> pos_ids(static_cast<size_t>(t));
        for (int i = 0; i < t; ++i) pos_ids[static_cast<size_t>(i)] = i;
        return add(concat_rows({image_part, text_part}), gather_rows(pos_table_, pos_ids));
    }

    // Full causal forward. If overrides are given (one [K x d] block per
    // layer), the latent rows of each layer's input are replaced before the
    // layer consumes them; checkpoints record what was actually consumed.
    DualPathTrace forward(const TokenSequence& seq, const Image& img,
                          const std::vector<Tensor>* latent_overrides = nullptr) const {
        if (latent_overrides) {
            if (static_cast<int>(latent_overrides->size()) != cfg_.layers)
                throw DimensionError("override must provide one block per layer");
            for (const Tensor& block : *latent_overrides)
                if (block.ndim() != 2 || block.rows() != seq.latent_count || block.cols() != cfg_.dim)
                    throw DimensionError("override block must be [K x d]");
        }
        DualPathTrace trace;
        const int d = cfg_.dim, h = cfg_.heads, dh = cfg_.head_dim();
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

        Tensor x = embed(seq, img);
        for (int l = 0; l < cfg_.layers; ++l) {
            if (latent_overrides)
                x = replace_rows(x, seq.latent_begin, (*latent_overrides)[static_cast<size_t>(l)]);
            trace.checkpoints.push_back(x);
            trace.latent_checkpoints.push_back(slice_rows(x, seq.latent_begin, seq.latent_begin + seq.latent_count));

            const auto& lp = layers_[static_cast<size_t>(l)];
            Tensor a = layernorm(x, lp.ln1_g, lp.ln1_b);
            Tensor q = add_bias_rows(matmul(a, lp.wq), lp.bq);
            Tensor k = add_bias_rows(matmul(a, lp.wk), lp.bk);
            Tensor v = add_bias_rows(matmul(a, lp.wv), lp.bv);

            std::vector<Tensor> head_outs;
            trace.attention.emplace_back();
            for (int head = 0; head < h; ++head) {
                Tensor qh = slice_cols(q, head * dh, (head + 1) * dh);
                Tensor kh = slice_cols(k, head * dh, (head + 1) * dh);
                Tensor vh = slice_cols(v, head * dh, (head + 1) * dh);
                Tensor probs = causal_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dh));
                trace.attention.back().push_back(probs);
                head_outs.push_back(matmul(probs, vh));
            }
            Tensor attn_out = add_bias_rows(matmul(concat_cols(head_outs), lp.wo), lp.bo);
            x = add(x, attn_out);

            Tensor mlp_in = layernorm(x, lp.ln2_g, lp.ln2_b);
            Tensor hidden = gelu(add_bias_rows(matmul(mlp_in, lp.w1), lp.b1));
            x = add(x, add_bias_rows(matmul(hidden, lp.w2), lp.b2));
        }
        trace.checkpoints.push_back(x);
        trace.logits = add_bias_rows(matmul(layernorm(x, lnf_g_, lnf_b_), head_w_), head_b_);
        return trace;
    }

    // Argmax over the vocabulary at the <ans> position; ties go to the
    // lowest id. The sequence must end at the marker (decode mode).
    int greedy_decode(const TokenSequence& seq, const Image& img,
                      const std::vector<Tensor>* latent_overrides = nullptr) const {
        if (seq.ans_pos != seq.length() - 1)
            throw ContractViolation("greedy_decode expects a sequence ending at the <ans> marker");
        DualPathTrace trace = forward(seq, img, latent_overrides);
        return argmax_row(trace.logits, seq.ans_pos);
    }

private:
    Tensor normal_param(const std::string& name, Shape shape, double stddev, Rng& rng) {
        Tensor t(shape, 0.0, true);
        for (int64_t i = 0; i < t.size(); ++i) t.at(static_cast<int>(i)) = rng.normal(0.0, stddev);
        params_.push_back({name, t});
        return t;
    }

    Tensor xavier_param(const std::string& name, Shape shape, Rng& rng, double gain = 1.0) {
        Tensor t(shape, 0.0, true);
        const double bound = gain * std::sqrt(6.0 / (shape[0] + shape[1]));
        for (int64_t i = 0; i < t.size(); ++i) t.at(static_cast<int>(i)) = rng.uniform(-bound, bound);
        params_.push_back({name, t});
        return t;
    }

    Tensor zero_param(const std::string& name, Shape shape) {
        Tensor t(shape, 0.0, true);
        params_.push_back({name, t});
        return t;
    }

    Tensor one_param(const std::string& name, Shape shape) {
        Tensor t(shape, 1.0, true);
        params_.push_back({name, t});
        return t;
    }

    Tensor patch_matrix(const Image& img) const {
        const int p = cfg_.patch;
        const int py = img.height / p, px = img.width / p;
        Tensor out({py * px, cfg_.patch_values()});
        int row = 0;
        for (int ty = 0; ty < py; ++ty) {
            for (int tx = 0; tx < px; ++tx, ++row) {
                int col = 0;
                for (int y = 0; y < p; ++y)
                    for (int x = 0; x < p; ++x)
                        for (int c = 0; c < 3; ++c)
                            // centered values condition the projection better
                            // than raw [0,1] against the white background
                            out.at(row, col++) = 2.0 * img.at(ty * p + y, tx * p + x, c) - 1.0;
            }
        }
        return out;
    }

    struct LayerParams {
        Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };

    ModelConfig cfg_;
    Tensor token_table_, pos_table_, patch_w_, patch_b_;
    std::vector<LayerParams> layers_;
    Tensor lnf_g_, lnf_b_, head_w_, head_b_;
    std::vector<NamedParam> params_;
};

// Answer-to-latent attention slice for one layer: H blocks of [M x K],
// queries at the answer logit positions, keys at the latent columns,
// un-renormalized.
inline std::vector<Tensor> answer_to_latent_attention(const DualPathTrace& trace, const TokenSequence& seq,
                                                      int layer) {
    if (layer < 0 || layer >= static_cast<int>(trace.attention.size()))
        throw DimensionError("attention layer index out of range");
    const auto omega = answer_logit_positions(seq);
    std::vector<Tensor> blocks;
    for (const Tensor& probs : trace.attention[static_cast<size_t>(layer)]) {
        Tensor rows = slice_rows(probs, omega.front(), omega.back() + 1);
        blocks.push_back(slice_cols(rows, seq.latent_begin, seq.latent_begin + seq.latent_count));
    }
    return blocks;
}

}  // namespace crystal
