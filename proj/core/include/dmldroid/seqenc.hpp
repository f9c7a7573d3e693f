#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "dmldroid/common.hpp"
#include "dmldroid/nn/param_store.hpp"
#include "dmldroid/nn/tape.hpp"

namespace dmldroid::seqenc {

// One token per full API name. Ids 0..2 are reserved and never reassigned.
class Vocab {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kCls = 1;
    static constexpr std::size_t kUnk = 2;

    Vocab();
    std::size_t size() const { return tokens_.size(); }
    bool has(const std::string& token) const { return index_.count(token) != 0; }
    std::size_t id_of(const std::string& token) const;  // kUnk for unknown tokens
    const std::string& token(std::size_t id) const;

    // Corpus tokens ranked by descending frequency, ties lexicographic.
    static Vocab fit(const std::vector<std::vector<std::string>>& sequences);

    std::string serialize() const;  // token<TAB>id lines
    static Vocab parse(const std::string& text);
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::map<std::string, std::size_t> index_;
};

// Line-oriented sequence corpus, tokens space-separated.
std::vector<std::vector<std::string>> parse_sequences(const std::string& text);
std::string serialize_sequences(const std::vector<std::vector<std::string>>& sequences);

struct EncodedSequence {
    std::vector<std::size_t> ids;  // max_len entries: [CLS], tokens, then PAD
    std::vector<double> mask;      // 1 for non-PAD positions
};

EncodedSequence encode_sequence(const std::vector<std::string>& seq, const Vocab& vocab,
                                std::size_t max_len = 512);

struct EncoderConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t hidden = 64;
    std::size_t ff_hidden = 128;
    std::size_t max_len = 512;
    double dropout = 0.3;
    std::size_t embed_dim = 128;

    void validate() const;

    bool operator==(const EncoderConfig&) const = default;
};

// Compact pre-norm transformer encoder over API token sequences. Every block
// is multi-head self-attention plus a ReLU feed-forward, PAD keys masked to
// -1e30 before the softmax; the first-token state after a final layer norm is
// pooled, mapped to the 128-d modality embedding, then to a scalar logit.
// Trailing PAD columns are trimmed per sample before the blocks run; masked
// keys carry exactly zero attention weight, so results are bit-identical to
// the fully padded computation and short sequences stay cheap.
class GsfEncoder {
public:
    GsfEncoder(EncoderConfig cfg, std::size_t vocab_size, nn::ParamStore& store, Rng& rng,
               std::string prefix = "gsf");

    struct Out {
        nn::Tape::Value embedding;  // B x embed_dim
        nn::Tape::Value logit;      // B x 1
    };
    // Attention weights recorded during a forward pass, for inspection:
    // probs[sample][layer * heads + head] is the row-stochastic L x L matrix
    // after masking, L being the sample's trimmed length.
    struct AttentionTrace {
        std::vector<std::vector<nn::Matrix>> probs;
    };
    Out forward(nn::Tape& t, const std::vector<EncodedSequence>& batch, bool training,
                AttentionTrace* trace = nullptr) const;

    // Eval-mode convenience over a fresh tape.
    nn::Matrix encode(const std::vector<EncodedSequence>& batch) const;

    const EncoderConfig& config() const { return cfg_; }
    std::size_t vocab_size() const { return vocab_size_; }
    const std::string& prefix() const { return prefix_; }

private:
    EncoderConfig cfg_;
    std::size_t vocab_size_ = 0;
    nn::ParamStore* store_ = nullptr;
    std::string prefix_;
};

}  // namespace dmldroid::seqenc
