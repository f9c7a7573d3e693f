#include "dmldroid/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

namespace dmldroid::fusion {

using nn::Matrix;
using nn::ParamStore;
using nn::Tape;
using Value = Tape::Value;

Strategy parse_strategy(const std::string& name) {
    if (name == "concat") return Strategy::kConcat;
    if (name == "self_attn") return Strategy::kSelfAttn;
    if (name == "cross_attn") return Strategy::kCrossAttn;
    if (name == "gated") return Strategy::kGated;
    if (name == "dwf") return Strategy::kDwf;
    throw ConfigError("unknown fusion strategy: " + name);
}

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::kConcat: return "concat";
        case Strategy::kSelfAttn: return "self_attn";
        case Strategy::kCrossAttn: return "cross_attn";
        case Strategy::kGated: return "gated";
        case Strategy::kDwf: return "dwf";
    }
    throw ConfigError("unknown fusion strategy tag");
}

std::size_t ModalityBundle::batch() const {
    std::size_t n = 0;
    bool seen = false;
    for (const Matrix* m : {&v_tf, &v_if, &v_gsf}) {
        if (m->empty()) continue;
        if (!seen) {
            n = m->rows();
            seen = true;
        } else if (m->rows() != n) {
            throw DimensionError("modality batch sizes disagree: " + std::to_string(n) + " vs " +
                                 std::to_string(m->rows()));
        }
    }
    return n;
}

Value multi_head_attention(Tape& t, Value q, Value k, Value v, const MhaParams& p) {
    const std::size_t h = p.wq.size();
    if (h == 0 || p.wk.size() != h || p.wv.size() != h)
        throw ConfigError("attention needs equal non-empty per-head projection lists");
    const std::size_t d = t.value(q).cols();
    if (d == 0 || d % h != 0)
        throw ConfigError("feature width " + std::to_string(d) + " not divisible by " +
                          std::to_string(h) + " heads");
    const std::size_t dk = d / h;
    for (std::size_t i = 0; i < h; ++i) {
        for (Value w : {p.wq[i], p.wk[i], p.wv[i]}) {
            if (t.value(w).rows() != d || t.value(w).cols() != dk)
                throw DimensionError("head projection must be " + std::to_string(d) + "x" +
                                     std::to_string(dk) + ", got " + t.value(w).shape_str());
        }
    }
    if (t.value(p.wo).rows() != d || t.value(p.wo).cols() != d)
        throw DimensionError("output projection must be " + std::to_string(d) + "x" +
                             std::to_string(d) + ", got " + t.value(p.wo).shape_str());

    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Value> heads;
    heads.reserve(h);
    for (std::size_t i = 0; i < h; ++i) {
        const Value qp = t.matmul(q, p.wq[i]);
        const Value kp = t.matmul(k, p.wk[i]);
        const Value vp = t.matmul(v, p.wv[i]);
        const Value probs = t.softmax_rows(t.scale(t.matmul_nt(qp, kp), inv_sqrt_dk));
        heads.push_back(t.matmul(probs, vp));
    }
    return t.matmul(t.concat_cols(heads), p.wo);
}

void FusionConfig::validate() const {
    if (dim == 0) throw ConfigError("fusion dim must be > 0");
    if (present() < 2) throw ConfigError("fusion needs at least two modalities");
    if (strategy == Strategy::kSelfAttn || strategy == Strategy::kCrossAttn) {
        if (heads == 0) throw ConfigError("attention fusion needs at least 1 head");
        if (dim % heads != 0)
            throw ConfigError("dim " + std::to_string(dim) + " not divisible by " +
                              std::to_string(heads) + " heads");
    }
}

std::size_t FusionConfig::present() const {
    return (use_tf ? 1u : 0u) + (use_if ? 1u : 0u) + (use_gsf ? 1u : 0u);
}

std::size_t FusionConfig::fused_dim() const {
    switch (strategy) {
        case Strategy::kGated: return dim;
        case Strategy::kDwf: return dwf_out != 0 ? dwf_out : dim * present();
        default: return dim * present();
    }
}

namespace {

std::vector<std::string> present_tags(const FusionConfig& cfg) {
    std::vector<std::string> tags;
    if (cfg.use_tf) tags.push_back("tf");
    if (cfg.use_if) tags.push_back("if");
    if (cfg.use_gsf) tags.push_back("gsf");
    return tags;
}

struct ParamSpec {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool zero = false;
};

std::vector<ParamSpec> expected_params(const FusionConfig& cfg, const std::string& p) {
    std::vector<ParamSpec> out;
    const std::size_t d = cfg.dim;
    const auto tags = present_tags(cfg);
    switch (cfg.strategy) {
        case Strategy::kConcat: break;
        case Strategy::kSelfAttn:
        case Strategy::kCrossAttn: {
            const std::string group = cfg.strategy == Strategy::kSelfAttn ? "self" : "cross";
            const std::size_t dk = d / cfg.heads;
            for (const auto& m : tags) {
                const std::string base = p + "." + group + "." + m;
                for (std::size_t i = 0; i < cfg.heads; ++i) {
                    const std::string hb = base + ".h" + std::to_string(i);
                    out.push_back({hb + ".wq", d, dk, false});
                    out.push_back({hb + ".wk", d, dk, false});
                    out.push_back({hb + ".wv", d, dk, false});
                }
                out.push_back({base + ".wo", d, d, false});
            }
            break;
        }
        case Strategy::kGated:
            for (const auto& m : tags) out.push_back({p + ".gate." + m + ".w", d, 1, false});
            break;
        case Strategy::kDwf:
            for (const auto& m : tags) out.push_back({p + ".dwf." + m + ".w", d, 1, false});
            out.push_back({p + ".dwf.proj", d * tags.size(), cfg.fused_dim(), false});
            break;
    }
    out.push_back({p + ".head.w", cfg.fused_dim(), 1, true});
    out.push_back({p + ".head.b", 1, 1, true});
    return out;
}

}  // namespace

FusionModel::FusionModel(FusionConfig cfg, ParamStore& store, Rng& rng, std::string prefix)
    : cfg_(cfg), store_(&store), prefix_(std::move(prefix)) {
    cfg_.validate();
    // The strategy tag guards against rebinding a store whose param names
    // happen to be a superset of this strategy's (concat only has the head).
    const std::string marker = prefix_ + ".meta.strategy";
    const double tag = static_cast<double>(static_cast<int>(cfg_.strategy));
    const auto specs = expected_params(cfg_, prefix_);
    std::size_t have = 0;
    for (const auto& s : specs) {
        if (store_->has(s.name)) ++have;
    }
    if (have == 0 && !store_->has(marker)) {
        for (const auto& s : specs) {
            if (s.zero) {
                store_->create(s.name, s.rows, s.cols);
            } else {
                store_->create_glorot(s.name, s.rows, s.cols, rng);
            }
        }
        store_->create_fill(marker, 1, 1, tag, false);
    } else if (have == specs.size() && store_->has(marker)) {
        for (const auto& s : specs) {
            const Matrix& m = store_->value(s.name);
            if (m.rows() != s.rows || m.cols() != s.cols)
                throw DimensionError("stored " + s.name + " is " + m.shape_str() +
                                     ", config wants " + std::to_string(s.rows) + "x" +
                                     std::to_string(s.cols));
        }
        const Matrix& m = store_->value(marker);
        if (m.rows() != 1 || m.cols() != 1 || m(0, 0) != tag)
            throw ConfigError("parameter store under prefix " + prefix_ +
                              " was built for a different fusion strategy");
    } else {
        throw ConfigError("parameter store holds a different fusion layout under prefix " +
                          prefix_);
    }
}

FusionModel::Out FusionModel::forward(Tape& t, const BundleValues& in) const {
    auto P = [&](const std::string& suffix) { return t.param(prefix_ + "." + suffix); };

    std::vector<std::pair<std::string, Value>> mods;
    if (cfg_.use_tf) mods.emplace_back("tf", in.v_tf);
    if (cfg_.use_if) mods.emplace_back("if", in.v_if);
    if (cfg_.use_gsf) mods.emplace_back("gsf", in.v_gsf);
    std::size_t rows = 0;
    for (std::size_t i = 0; i < mods.size(); ++i) {
        if (!mods[i].second.valid())
            throw ConfigError("bundle is missing the " + mods[i].first + " embedding");
        const Matrix& m = t.value(mods[i].second);
        if (m.cols() != cfg_.dim)
            throw DimensionError("modality " + mods[i].first + " width " +
                                 std::to_string(m.cols()) + ", fusion expects " +
                                 std::to_string(cfg_.dim));
        if (i == 0) {
            rows = m.rows();
        } else if (m.rows() != rows) {
            throw DimensionError("modality batch sizes disagree in fusion input");
        }
    }

    const std::size_t dk =
        cfg_.strategy == Strategy::kSelfAttn || cfg_.strategy == Strategy::kCrossAttn
            ? cfg_.dim / cfg_.heads
            : 0;
    const double inv_sqrt_dk = dk != 0 ? 1.0 / std::sqrt(static_cast<double>(dk)) : 0.0;
    // Per-sample attention scores are scalars here (one query token), so a
    // whole batch of them rides in a B x n_keys matrix and softmax_rows
    // applies the per-sample softmax; this is the same map as per-sample
    // multi_head_attention without per-sample graphs.
    auto row_dot = [&](Value a, Value b, Value ones) {
        return t.scale(t.matmul(t.mul(a, b), ones), inv_sqrt_dk);
    };

    Value fused;
    switch (cfg_.strategy) {
        case Strategy::kConcat: {
            std::vector<Value> parts;
            for (const auto& [tag, v] : mods) parts.push_back(v);
            fused = t.concat_cols(parts);
            break;
        }
        case Strategy::kSelfAttn: {
            const Value ones = t.input(Matrix(dk, 1, 1.0));
            std::vector<Value> parts;
            for (const auto& [tag, v] : mods) {
                std::vector<Value> heads;
                for (std::size_t i = 0; i < cfg_.heads; ++i) {
                    const std::string hb = "self." + tag + ".h" + std::to_string(i);
                    const Value qp = t.matmul(v, P(hb + ".wq"));
                    const Value kp = t.matmul(v, P(hb + ".wk"));
                    const Value vp = t.matmul(v, P(hb + ".wv"));
                    const Value probs = t.softmax_rows(row_dot(qp, kp, ones));
                    heads.push_back(t.row_scale(vp, probs));
                }
                parts.push_back(t.matmul(t.concat_cols(heads), P("self." + tag + ".wo")));
            }
            fused = t.concat_cols(parts);
            break;
        }
        case Strategy::kCrossAttn: {
            const Value ones = t.input(Matrix(dk, 1, 1.0));
            std::vector<Value> parts;
            for (std::size_t mi = 0; mi < mods.size(); ++mi) {
                std::vector<Value> others;
                for (std::size_t mj = 0; mj < mods.size(); ++mj) {
                    if (mj != mi) others.push_back(mods[mj].second);
                }
                const std::string& tag = mods[mi].first;
                std::vector<Value> heads;
                for (std::size_t i = 0; i < cfg_.heads; ++i) {
                    const std::string hb = "cross." + tag + ".h" + std::to_string(i);
                    const Value wk = P(hb + ".wk");
                    const Value wv = P(hb + ".wv");
                    const Value qp = t.matmul(mods[mi].second, P(hb + ".wq"));
                    std::vector<Value> scores, vps;
                    for (Value o : others) {
                        scores.push_back(row_dot(qp, t.matmul(o, wk), ones));
                        vps.push_back(t.matmul(o, wv));
                    }
                    const Value probs = t.softmax_rows(t.concat_cols(scores));
                    Value head;
                    for (std::size_t j = 0; j < vps.size(); ++j) {
                        const Value term = t.row_scale(vps[j], t.slice_cols(probs, j, j + 1));
                        head = head.valid() ? t.add(head, term) : term;
                    }
                    heads.push_back(head);
                }
                parts.push_back(t.matmul(t.concat_cols(heads), P("cross." + tag + ".wo")));
            }
            fused = t.concat_cols(parts);
            break;
        }
        case Strategy::kGated: {
            for (const auto& [tag, v] : mods) {
                const Value g = t.sigmoid(t.matmul(v, P("gate." + tag + ".w")));
                const Value term = t.row_scale(v, g);
                fused = fused.valid() ? t.add(fused, term) : term;
            }
            break;
        }
        case Strategy::kDwf: {
            std::vector<Value> scores;
            for (const auto& [tag, v] : mods) {
                scores.push_back(t.matmul(v, P("dwf." + tag + ".w")));
            }
            const Value alpha = t.softmax_rows(t.concat_cols(scores));
            std::vector<Value> weighted;
            for (std::size_t j = 0; j < mods.size(); ++j) {
                weighted.push_back(t.row_scale(mods[j].second, t.slice_cols(alpha, j, j + 1)));
            }
            fused = t.matmul(t.concat_cols(weighted), P("dwf.proj"));
            break;
        }
    }

    const Value logit = t.add_rowvec(t.matmul(fused, P("head.w")), P("head.b"));
    return Out{fused, logit};
}

BundleValues FusionModel::lift(Tape& t, const ModalityBundle& b) const {
    b.batch();
    BundleValues v;
    if (cfg_.use_tf) {
        if (!b.has_tf()) throw ConfigError("bundle is missing the tf embedding");
        v.v_tf = t.input(b.v_tf);
    }
    if (cfg_.use_if) {
        if (!b.has_if()) throw ConfigError("bundle is missing the if embedding");
        v.v_if = t.input(b.v_if);
    }
    if (cfg_.use_gsf) {
        if (!b.has_gsf()) throw ConfigError("bundle is missing the gsf embedding");
        v.v_gsf = t.input(b.v_gsf);
    }
    return v;
}

Matrix FusionModel::fuse(const ModalityBundle& b) const {
    Tape t(store_);
    return t.value(forward(t, lift(t, b)).fused);
}

std::vector<double> FusionModel::logits(const ModalityBundle& b) const {
    Tape t(store_);
    const Matrix& lg = t.value(forward(t, lift(t, b)).logit);
    std::vector<double> out(lg.rows());
    for (std::size_t r = 0; r < lg.rows(); ++r) out[r] = lg(r, 0);
    return out;
}

FusionModel::DwfView FusionModel::dwf_view(const ModalityBundle& b) const {
    if (cfg_.strategy != Strategy::kDwf)
        throw ConfigError("dwf_view requires the dwf strategy, model uses " +
                          std::string(strategy_name(cfg_.strategy)));
    Tape t(store_);
    const BundleValues in = lift(t, b);
    std::vector<Value> vs;
    if (cfg_.use_tf) vs.push_back(in.v_tf);
    if (cfg_.use_if) vs.push_back(in.v_if);
    if (cfg_.use_gsf) vs.push_back(in.v_gsf);
    const auto tags = present_tags(cfg_);
    std::vector<Value> scores;
    for (std::size_t j = 0; j < vs.size(); ++j) {
        scores.push_back(t.matmul(vs[j], t.param(prefix_ + ".dwf." + tags[j] + ".w")));
    }
    const Value alpha = t.softmax_rows(t.concat_cols(scores));
    Value sum;
    for (std::size_t j = 0; j < vs.size(); ++j) {
        const Value term = t.row_scale(vs[j], t.slice_cols(alpha, j, j + 1));
        sum = sum.valid() ? t.add(sum, term) : term;
    }
    return DwfView{t.value(alpha), t.value(sum)};
}

DetectorData DetectorData::subset(const std::vector<std::size_t>& idx) const {
    const std::size_t n = size();
    if (!tf.empty() && tf.rows() != n)
        throw DimensionError("tabular rows do not cover all " + std::to_string(n) + " samples");
    if (!img.empty() && img.rows() != n)
        throw DimensionError("image rows do not cover all " + std::to_string(n) + " samples");
    if (!seq.empty() && seq.size() != n)
        throw DimensionError("sequence count does not cover all " + std::to_string(n) +
                             " samples");
    if (!labels.empty() && labels.size() != n)
        throw DimensionError("label count does not cover all " + std::to_string(n) + " samples");
    DetectorData out;
    if (!tf.empty()) out.tf = Matrix(idx.size(), tf.cols());
    if (!img.empty()) out.img = Matrix(idx.size(), img.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= n) throw DimensionError("subset index out of range");
        if (!tf.empty()) out.tf.set_row(i, tf.row(idx[i]));
        if (!img.empty()) out.img.set_row(i, img.row(idx[i]));
        if (!seq.empty()) out.seq.push_back(seq[idx[i]]);
        if (!labels.empty()) out.labels.push_back(labels[idx[i]]);
    }
    return out;
}

std::size_t DetectorData::size() const {
    if (!labels.empty()) return labels.size();
    if (!tf.empty()) return tf.rows();
    if (!img.empty()) return img.rows();
    return seq.size();
}

void DetectorConfig::validate() const {
    if (modalities() == 0) throw ConfigError("detector needs at least one modality");
    if (use_tf && tf.input_dim == 0) throw ConfigError("tabular encoder needs input_dim > 0");
    if (use_gsf) {
        gsf.validate();
        if (vocab_size < 3) throw ConfigError("vocab size must cover the 3 reserved tokens");
    }
    if (modalities() >= 2) {
        std::vector<std::size_t> dims;
        if (use_tf) dims.push_back(tf.embed_dim);
        if (use_if) dims.push_back(img.embed_dim);
        if (use_gsf) dims.push_back(gsf.embed_dim);
        for (std::size_t d : dims) {
            if (d != dims[0])
                throw ConfigError("modality embedding widths must match for fusion");
        }
        FusionConfig fc;
        fc.strategy = strategy;
        fc.dim = dims[0];
        fc.heads = fusion_heads;
        fc.dwf_out = dwf_out;
        fc.use_tf = use_tf;
        fc.use_if = use_if;
        fc.use_gsf = use_gsf;
        fc.validate();
    }
}

std::size_t DetectorConfig::modalities() const {
    return (use_tf ? 1u : 0u) + (use_if ? 1u : 0u) + (use_gsf ? 1u : 0u);
}

namespace {

void put_meta(ParamStore& s, const std::string& name, double v) {
    s.create_fill(name, 1, 1, v, false);
}

void write_meta(ParamStore& s, const DetectorConfig& c) {
    put_meta(s, "meta.detector", 1.0);
    put_meta(s, "meta.use_tf", c.use_tf ? 1.0 : 0.0);
    put_meta(s, "meta.use_if", c.use_if ? 1.0 : 0.0);
    put_meta(s, "meta.use_gsf", c.use_gsf ? 1.0 : 0.0);
    put_meta(s, "meta.strategy", static_cast<double>(static_cast<int>(c.strategy)));
    put_meta(s, "meta.fusion.heads", static_cast<double>(c.fusion_heads));
    put_meta(s, "meta.fusion.dwf_out", static_cast<double>(c.dwf_out));
    put_meta(s, "meta.vocab", static_cast<double>(c.vocab_size));
    put_meta(s, "meta.tf.input_dim", static_cast<double>(c.tf.input_dim));
    put_meta(s, "meta.tf.hidden1", static_cast<double>(c.tf.hidden1));
    put_meta(s, "meta.tf.hidden2", static_cast<double>(c.tf.hidden2));
    put_meta(s, "meta.tf.embed_dim", static_cast<double>(c.tf.embed_dim));
    put_meta(s, "meta.tf.dropout", c.tf.dropout);
    put_meta(s, "meta.img.in_size", static_cast<double>(c.img.in_size));
    put_meta(s, "meta.img.in_channels", static_cast<double>(c.img.in_channels));
    put_meta(s, "meta.img.embed_dim", static_cast<double>(c.img.embed_dim));
    Matrix& stages = s.create("meta.img.stages", c.img.stages.size(), 2, false);
    for (std::size_t r = 0; r < c.img.stages.size(); ++r) {
        stages(r, 0) = static_cast<double>(c.img.stages[r].out_channels);
        stages(r, 1) = c.img.stages[r].pool_after ? 1.0 : 0.0;
    }
    put_meta(s, "meta.gsf.layers", static_cast<double>(c.gsf.layers));
    put_meta(s, "meta.gsf.heads", static_cast<double>(c.gsf.heads));
    put_meta(s, "meta.gsf.hidden", static_cast<double>(c.gsf.hidden));
    put_meta(s, "meta.gsf.ff_hidden", static_cast<double>(c.gsf.ff_hidden));
    put_meta(s, "meta.gsf.max_len", static_cast<double>(c.gsf.max_len));
    put_meta(s, "meta.gsf.dropout", c.gsf.dropout);
    put_meta(s, "meta.gsf.embed_dim", static_cast<double>(c.gsf.embed_dim));
}

}  // namespace

Detector::Detector(DetectorConfig cfg, ParamStore& store, Rng& rng)
    : cfg_(std::move(cfg)), store_(&store) {
    cfg_.validate();
    const bool fresh = !store.has("meta.detector");
    if (!fresh && read_config(store) != cfg_)
        throw ConfigError("parameter store manifest disagrees with the detector config");
    if (cfg_.use_tf) tf_.emplace(cfg_.tf, store, rng, "tf");
    if (cfg_.use_if) if_.emplace(cfg_.img, store, rng, "if");
    if (cfg_.use_gsf) gsf_.emplace(cfg_.gsf, cfg_.vocab_size, store, rng, "gsf");
    if (cfg_.modalities() >= 2) {
        FusionConfig fc;
        fc.strategy = cfg_.strategy;
        fc.dim = cfg_.use_tf ? cfg_.tf.embed_dim
                             : (cfg_.use_if ? cfg_.img.embed_dim : cfg_.gsf.embed_dim);
        fc.heads = cfg_.fusion_heads;
        fc.dwf_out = cfg_.dwf_out;
        fc.use_tf = cfg_.use_tf;
        fc.use_if = cfg_.use_if;
        fc.use_gsf = cfg_.use_gsf;
        fusion_.emplace(fc, store, rng, "fusion");
    }
    if (fresh) write_meta(store, cfg_);
}

DetectorConfig Detector::read_config(const ParamStore& store) {
    if (!store.has("meta.detector")) throw FormatError("store has no detector manifest");
    auto get = [&](const std::string& name) -> double {
        if (!store.has(name)) throw FormatError("detector manifest is missing " + name);
        return store.value(name)(0, 0);
    };
    auto get_count = [&](const std::string& name) {
        return static_cast<std::size_t>(get(name));
    };
    DetectorConfig c;
    c.use_tf = get("meta.use_tf") != 0.0;
    c.use_if = get("meta.use_if") != 0.0;
    c.use_gsf = get("meta.use_gsf") != 0.0;
    const int s = static_cast<int>(get("meta.strategy"));
    if (s < 0 || s > 4) throw FormatError("detector manifest has an unknown strategy tag");
    c.strategy = static_cast<Strategy>(s);
    c.fusion_heads = get_count("meta.fusion.heads");
    c.dwf_out = get_count("meta.fusion.dwf_out");
    c.vocab_size = get_count("meta.vocab");
    c.tf.input_dim = get_count("meta.tf.input_dim");
    c.tf.hidden1 = get_count("meta.tf.hidden1");
    c.tf.hidden2 = get_count("meta.tf.hidden2");
    c.tf.embed_dim = get_count("meta.tf.embed_dim");
    c.tf.dropout = get("meta.tf.dropout");
    c.img.in_size = get_count("meta.img.in_size");
    c.img.in_channels = get_count("meta.img.in_channels");
    c.img.embed_dim = get_count("meta.img.embed_dim");
    if (!store.has("meta.img.stages")) throw FormatError("detector manifest is missing meta.img.stages");
    const Matrix& stages = store.value("meta.img.stages");
    c.img.stages.clear();
    for (std::size_t r = 0; r < stages.rows(); ++r) {
        c.img.stages.push_back(
            {static_cast<std::size_t>(stages(r, 0)), stages(r, 1) != 0.0});
    }
    c.gsf.layers = get_count("meta.gsf.layers");
    c.gsf.heads = get_count("meta.gsf.heads");
    c.gsf.hidden = get_count("meta.gsf.hidden");
    c.gsf.ff_hidden = get_count("meta.gsf.ff_hidden");
    c.gsf.max_len = get_count("meta.gsf.max_len");
    c.gsf.dropout = get("meta.gsf.dropout");
    c.gsf.embed_dim = get_count("meta.gsf.embed_dim");
    return c;
}

Detector Detector::from_store(ParamStore& store) {
    Rng rng(0);  // parameters already exist; nothing is sampled
    return Detector(read_config(store), store, rng);
}

Detector::Out Detector::forward(Tape& t, const DetectorData& batch, bool training) const {
    const std::size_t n = batch.size();
    if (n == 0) throw DataError("empty detector batch");
    BundleValues vals;
    Value single_logit;
    if (tf_) {
        if (batch.tf.rows() != n)
            throw DimensionError("tabular rows " + std::to_string(batch.tf.rows()) +
                                 " do not match batch size " + std::to_string(n));
        const auto out = tf_->forward(t, t.input(batch.tf), training);
        vals.v_tf = out.embedding;
        single_logit = out.logit;
    }
    if (if_) {
        if (batch.img.rows() != n)
            throw DimensionError("image rows " + std::to_string(batch.img.rows()) +
                                 " do not match batch size " + std::to_string(n));
        const auto out = if_->forward(t, t.input(batch.img), training);
        vals.v_if = out.embedding;
        single_logit = out.logit;
    }
    if (gsf_) {
        if (batch.seq.size() != n)
            throw DimensionError("sequence count " + std::to_string(batch.seq.size()) +
                                 " does not match batch size " + std::to_string(n));
        const auto out = gsf_->forward(t, batch.seq, training);
        vals.v_gsf = out.embedding;
        single_logit = out.logit;
    }
    if (fusion_) {
        const auto out = fusion_->forward(t, vals);
        return Out{out.logit, vals};
    }
    return Out{single_logit, vals};
}

std::vector<double> Detector::logits(const DetectorData& data) const {
    constexpr std::size_t kChunk = 64;
    const std::size_t n = data.size();
    if (n == 0) throw DataError("empty detector batch");
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t stop = std::min(start + kChunk, n);
        std::vector<std::size_t> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        const DetectorData sub = data.subset(idx);
        Tape t(store_);
        const Matrix& lg = t.value(forward(t, sub, false).logit);
        for (std::size_t r = 0; r < lg.rows(); ++r) out.push_back(lg(r, 0));
    }
    return out;
}

double accuracy(const std::vector<double>& logits, const std::vector<double>& labels) {
    if (logits.size() != labels.size())
        throw DimensionError("prediction/label count mismatch: " + std::to_string(logits.size()) +
                             " vs " + std::to_string(labels.size()));
    if (logits.empty()) throw UsageError("no predictions to score");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if ((logits[i] > 0.0) == (labels[i] > 0.5)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.size());
}

TrainLog train_detector(const Detector& model, const DetectorData& train, const DetectorData* val,
                        const nn::OptimHyper& hyper, std::uint64_t seed) {
    hyper.validate();
    ParamStore& store = model.store();
    const std::size_t n = train.size();
    if (n == 0) throw DataError("empty training set");
    if (train.labels.size() != n) throw DataError("training set needs one label per sample");
    bool pos = false;
    bool neg = false;
    for (double y : train.labels) (y > 0.5 ? pos : neg) = true;
    if (!pos || !neg) throw DataError("training set needs both classes");

    if (store.has("meta.train_seed")) {
        store.value("meta.train_seed")(0, 0) = static_cast<double>(seed);
    } else {
        store.create_fill("meta.train_seed", 1, 1, static_cast<double>(seed), false);
    }

    Rng order(derive_seed(seed, "batch-order"));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);

    TrainLog log;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        order.shuffle(idx);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += hyper.batch_size) {
            const std::size_t stop = std::min(start + hyper.batch_size, n);
            const std::vector<std::size_t> bidx(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                                idx.begin() + static_cast<std::ptrdiff_t>(stop));
            const DetectorData sub = train.subset(bidx);
            store.zero_grads();
            Tape t(&store, derive_seed(seed, "dropout-" + std::to_string(epoch) + "-" +
                                                 std::to_string(start)));
            const auto out = model.forward(t, sub, true);
            const auto loss = t.bce_with_logits(out.logit, sub.labels);
            loss_sum += t.scalar(loss) * static_cast<double>(bidx.size());
            t.backward(loss);
            store.adamw_step(hyper);
        }
        EpochLog entry;
        entry.epoch = epoch + 1;
        entry.train_loss = loss_sum / static_cast<double>(n);
        entry.val_accuracy = val ? accuracy(model.logits(*val), val->labels)
                                 : std::numeric_limits<double>::quiet_NaN();
        log.epochs.push_back(entry);
    }
    return log;
}

}  // namespace dmldroid::fusion
