#include "dmldroid/seqenc.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace dmldroid::seqenc {

namespace {

const char* kReserved[3] = {"<pad>", "<cls>", "<unk>"};

std::size_t parse_id(const std::string& s, const std::string& line) {
    if (s.empty()) throw FormatError("vocab line has empty id: " + line);
    std::size_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') throw FormatError("vocab id is not a number: " + line);
        v = v * 10 + static_cast<std::size_t>(c - '0');
        if (v > 100000000) throw FormatError("vocab id out of range: " + line);
    }
    return v;
}

}  // namespace

Vocab::Vocab() {
    for (std::size_t i = 0; i < 3; ++i) {
        tokens_.emplace_back(kReserved[i]);
        index_[kReserved[i]] = i;
    }
}

std::size_t Vocab::id_of(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::size_t id) const {
    if (id >= tokens_.size())
        throw DataError("vocab id " + std::to_string(id) + " out of range (size " +
                        std::to_string(tokens_.size()) + ")");
    return tokens_[id];
}

Vocab Vocab::fit(const std::vector<std::vector<std::string>>& sequences) {
    std::map<std::string, std::size_t> freq;
    for (const auto& seq : sequences) {
        for (const auto& tok : seq) ++freq[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> order(freq.begin(), freq.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, count] : order) {
        (void)count;
        if (v.index_.count(tok)) continue;  // corpus literally contains a reserved token
        v.index_[tok] = v.tokens_.size();
        v.tokens_.push_back(tok);
    }
    return v;
}

std::string Vocab::serialize() const {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        out += tokens_[i];
        out += '\t';
        out += std::to_string(i);
        out += '\n';
    }
    return out;
}

Vocab Vocab::parse(const std::string& text) {
    const auto lines = split_lines(text);
    if (lines.size() < 3) throw FormatError("vocab must list at least the 3 reserved tokens");
    std::vector<std::string> tokens(lines.size());
    std::vector<bool> seen(lines.size(), false);
    for (const auto& line : lines) {
        const auto parts = split(line, '\t');
        if (parts.size() != 2) throw FormatError("vocab line needs exactly one tab: " + line);
        const std::size_t id = parse_id(parts[1], line);
        if (id >= lines.size())
            throw FormatError("vocab ids must be dense 0.." + std::to_string(lines.size() - 1) +
                              ", got " + parts[1]);
        if (seen[id]) throw FormatError("duplicate vocab id " + parts[1]);
        seen[id] = true;
        tokens[id] = parts[0];
    }
    for (std::size_t i = 0; i < 3; ++i) {
        if (tokens[i] != kReserved[i])
            throw FormatError("vocab id " + std::to_string(i) + " must be " + kReserved[i] +
                              ", got " + tokens[i]);
    }
    Vocab v;
    for (std::size_t i = 3; i < tokens.size(); ++i) {
        if (v.index_.count(tokens[i])) throw FormatError("duplicate vocab token " + tokens[i]);
        v.index_[tokens[i]] = i;
        v.tokens_.push_back(tokens[i]);
    }
    return v;
}

void Vocab::save(const std::string& path) const { write_text_file(path, serialize()); }

Vocab Vocab::load(const std::string& path) { return parse(read_text_file(path)); }

std::vector<std::vector<std::string>> parse_sequences(const std::string& text) {
    std::vector<std::vector<std::string>> out;
    for (const auto& line : split_lines(text)) {
        std::vector<std::string> seq;
        for (auto& tok : split(line, ' ')) {
            if (!tok.empty()) seq.push_back(std::move(tok));
        }
        out.push_back(std::move(seq));
    }
    return out;
}

std::string serialize_sequences(const std::vector<std::vector<std::string>>& sequences) {
    std::string out;
    for (const auto& seq : sequences) {
        for (std::size_t i = 0; i < seq.size(); ++i) {
            if (i) out += ' ';
            out += seq[i];
        }
        out += '\n';
    }
    return out;
}

EncodedSequence encode_sequence(const std::vector<std::string>& seq, const Vocab& vocab,
                                std::size_t max_len) {
    if (max_len == 0) throw ConfigError("encode_sequence max_len must be > 0");
    EncodedSequence enc;
    enc.ids.reserve(max_len);
    enc.ids.push_back(Vocab::kCls);
    for (const auto& tok : seq) {
        if (enc.ids.size() == max_len) break;
        enc.ids.push_back(vocab.id_of(tok));
    }
    const std::size_t used = enc.ids.size();
    enc.ids.resize(max_len, Vocab::kPad);
    enc.mask.assign(max_len, 0.0);
    std::fill(enc.mask.begin(), enc.mask.begin() + static_cast<std::ptrdiff_t>(used), 1.0);
    return enc;
}

void EncoderConfig::validate() const {
    if (layers == 0) throw ConfigError("encoder needs at least 1 layer");
    if (heads == 0) throw ConfigError("encoder needs at least 1 attention head");
    if (hidden == 0 || ff_hidden == 0 || embed_dim == 0)
        throw ConfigError("encoder widths must be > 0");
    if (hidden % heads != 0)
        throw ConfigError("hidden " + std::to_string(hidden) + " not divisible by heads " +
                          std::to_string(heads));
    if (max_len == 0 || max_len > 512)
        throw ConfigError("max_len must be in [1, 512], got " + std::to_string(max_len));
    if (!(dropout >= 0.0 && dropout < 1.0))
        throw ConfigError("dropout must be in [0, 1), got " + std::to_string(dropout));
}

GsfEncoder::GsfEncoder(EncoderConfig cfg, std::size_t vocab_size, nn::ParamStore& store, Rng& rng,
                       std::string prefix)
    : cfg_(cfg), vocab_size_(vocab_size), store_(&store), prefix_(std::move(prefix)) {
    cfg_.validate();
    if (vocab_size_ < 3) throw ConfigError("vocab size must cover the 3 reserved tokens");
    const std::size_t H = cfg_.hidden;
    if (!store_->has(prefix_ + ".tok")) {
        store_->create_glorot(prefix_ + ".tok", vocab_size_, H, rng);
        store_->create_glorot(prefix_ + ".pos", cfg_.max_len, H, rng);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            const std::string base = prefix_ + ".l" + std::to_string(l);
            store_->create_fill(base + ".ln1.g", 1, H, 1.0);
            store_->create(base + ".ln1.b", 1, H);
            for (const char* m : {"q", "k", "v", "o"}) {
                store_->create_glorot(base + ".w" + m, H, H, rng);
                store_->create(base + ".b" + m, 1, H);
            }
            store_->create_fill(base + ".ln2.g", 1, H, 1.0);
            store_->create(base + ".ln2.b", 1, H);
            store_->create_glorot(base + ".ff1.w", H, cfg_.ff_hidden, rng);
            store_->create(base + ".ff1.b", 1, cfg_.ff_hidden);
            store_->create_glorot(base + ".ff2.w", cfg_.ff_hidden, H, rng);
            store_->create(base + ".ff2.b", 1, H);
        }
        store_->create_fill(prefix_ + ".final.g", 1, H, 1.0);
        store_->create(prefix_ + ".final.b", 1, H);
        store_->create_glorot(prefix_ + ".emb.w", H, cfg_.embed_dim, rng);
        store_->create(prefix_ + ".emb.b", 1, cfg_.embed_dim);
        store_->create(prefix_ + ".head.w", cfg_.embed_dim, 1);
        store_->create(prefix_ + ".head.b", 1, 1);
    } else if (store_->value(prefix_ + ".tok").rows() != vocab_size_ ||
               store_->value(prefix_ + ".tok").cols() != H) {
        throw DimensionError("stored " + prefix_ + ".tok is " +
                             store_->value(prefix_ + ".tok").shape_str() + ", config wants " +
                             std::to_string(vocab_size_) + "x" + std::to_string(H));
    } else if (store_->value(prefix_ + ".pos").rows() != cfg_.max_len) {
        throw DimensionError("stored " + prefix_ + ".pos holds " +
                             std::to_string(store_->value(prefix_ + ".pos").rows()) +
                             " positions, config wants " + std::to_string(cfg_.max_len));
    }
}

GsfEncoder::Out GsfEncoder::forward(nn::Tape& t, const std::vector<EncodedSequence>& batch,
                                    bool training, AttentionTrace* trace) const {
    if (batch.empty()) throw DataError("empty sequence batch");
    if (trace) trace->probs.assign(batch.size(), {});
    using Value = nn::Tape::Value;
    auto P = [&](const std::string& suffix) { return t.param(prefix_ + "." + suffix); };

    const std::size_t H = cfg_.hidden;
    const std::size_t dk = H / cfg_.heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    const Value tok = P("tok");
    const Value pos = P("pos");
    struct LayerParams {
        Value ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo, ln2g, ln2b, ff1w, ff1b, ff2w, ff2b;
    };
    std::vector<LayerParams> lp(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string base = "l" + std::to_string(l);
        lp[l] = {P(base + ".ln1.g"), P(base + ".ln1.b"), P(base + ".wq"),    P(base + ".bq"),
                 P(base + ".wk"),    P(base + ".bk"),    P(base + ".wv"),    P(base + ".bv"),
                 P(base + ".wo"),    P(base + ".bo"),    P(base + ".ln2.g"), P(base + ".ln2.b"),
                 P(base + ".ff1.w"), P(base + ".ff1.b"), P(base + ".ff2.w"), P(base + ".ff2.b")};
    }
    const Value finalg = P("final.g");
    const Value finalb = P("final.b");

    std::vector<Value> cls_states;
    cls_states.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& seq = batch[b];
        if (seq.ids.size() != seq.mask.size() || seq.ids.empty() || seq.ids.size() > cfg_.max_len)
            throw DimensionError("encoded sequence needs matching ids/mask of length 1.." +
                                 std::to_string(cfg_.max_len));
        for (std::size_t id : seq.ids) {
            if (id >= vocab_size_)
                throw DataError("token id " + std::to_string(id) + " out of range for vocab size " +
                                std::to_string(vocab_size_));
        }
        if (seq.mask[0] == 0.0) throw DataError("sequence mask must keep position 0 (the CLS slot)");

        // Trailing fully-masked positions carry exactly zero attention weight
        // everywhere, so dropping them before building the graph changes no
        // bit of the output and keeps short sequences cheap.
        std::size_t L = seq.ids.size();
        while (L > 1 && seq.mask[L - 1] == 0.0) --L;

        nn::Matrix bias(1, L);
        for (std::size_t j = 0; j < L; ++j) bias(0, j) = seq.mask[j] != 0.0 ? 0.0 : -1e30;
        const Value mask_bias = t.input(std::move(bias));

        const std::vector<std::size_t> ids_b(seq.ids.begin(),
                                             seq.ids.begin() + static_cast<std::ptrdiff_t>(L));
        Value x = t.add(t.embed_rows(tok, ids_b), t.slice_rows(pos, 0, L));
        for (const auto& L_p : lp) {
            const Value h = t.layernorm(x, L_p.ln1g, L_p.ln1b);
            const Value q = t.add_rowvec(t.matmul(h, L_p.wq), L_p.bq);
            const Value k = t.add_rowvec(t.matmul(h, L_p.wk), L_p.bk);
            const Value v = t.add_rowvec(t.matmul(h, L_p.wv), L_p.bv);
            std::vector<Value> heads;
            heads.reserve(cfg_.heads);
            for (std::size_t i = 0; i < cfg_.heads; ++i) {
                const Value qs = t.slice_cols(q, i * dk, (i + 1) * dk);
                const Value ks = t.slice_cols(k, i * dk, (i + 1) * dk);
                const Value vs = t.slice_cols(v, i * dk, (i + 1) * dk);
                Value scores = t.scale(t.matmul_nt(qs, ks), inv_sqrt_dk);
                scores = t.add_rowvec(scores, mask_bias);
                const Value probs = t.softmax_rows(scores);
                if (trace) trace->probs[b].push_back(t.value(probs));
                heads.push_back(t.matmul(probs, vs));
            }
            Value att = t.add_rowvec(t.matmul(t.concat_cols(heads), L_p.wo), L_p.bo);
            att = t.dropout(att, cfg_.dropout, training);
            x = t.add(x, att);

            const Value h2 = t.layernorm(x, L_p.ln2g, L_p.ln2b);
            Value f = t.relu(t.add_rowvec(t.matmul(h2, L_p.ff1w), L_p.ff1b));
            f = t.add_rowvec(t.matmul(f, L_p.ff2w), L_p.ff2b);
            f = t.dropout(f, cfg_.dropout, training);
            x = t.add(x, f);
        }
        x = t.layernorm(x, finalg, finalb);
        cls_states.push_back(t.slice_rows(x, 0, 1));
    }

    const Value cls = cls_states.size() == 1 ? cls_states[0] : t.concat_rows(cls_states);
    const Value emb = t.add_rowvec(t.matmul(cls, P("emb.w")), P("emb.b"));
    const Value logit = t.add_rowvec(t.matmul(emb, P("head.w")), P("head.b"));
    return Out{emb, logit};
}

nn::Matrix GsfEncoder::encode(const std::vector<EncodedSequence>& batch) const {
    nn::Tape t(store_);
    return t.value(forward(t, batch, false).embedding);
}

}  // namespace dmldroid::seqenc
