#include "dmldroid/robustness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>

#include "dmldroid/deximg.hpp"
#include "dmldroid/nn/tape.hpp"

namespace dmldroid::robustness {

using nn::Matrix;
using nn::ParamStore;
using nn::Tape;
using Value = nn::Tape::Value;

ObfuscationMode parse_obfuscation_mode(const std::string& name) {
    if (name == "rn") return ObfuscationMode::kRn;
    if (name == "co") return ObfuscationMode::kCo;
    if (name == "enc") return ObfuscationMode::kEnc;
    if (name == "mixed") return ObfuscationMode::kMixed;
    throw ConfigError("unknown obfuscation mode: " + name);
}

const char* obfuscation_mode_name(ObfuscationMode mode) {
    switch (mode) {
        case ObfuscationMode::kRn: return "rn";
        case ObfuscationMode::kCo: return "co";
        case ObfuscationMode::kEnc: return "enc";
        case ObfuscationMode::kMixed: return "mixed";
    }
    throw ConfigError("invalid obfuscation mode value");
}

void ObfuscationSpec::validate() const {
    auto check = [](double v, const char* what) {
        if (!(v >= 0.0 && v <= 1.0))
            throw ConfigError(std::string(what) + " must be in [0,1], got " + format_double(v));
    };
    check(junk_ratio, "junk ratio");
    check(indirection_ratio, "indirection ratio");
    check(enc_ratio, "encryption ratio");
}

namespace {

void rn_pass(deximg::DexLayout& layout, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "obf-rn"));
    for (auto& b : layout.ids) b = static_cast<std::uint8_t>(0x20 + rng.below(95));
}

void co_bytes_pass(deximg::DexLayout& layout, double ratio, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "obf-co-bytes"));
    const std::size_t k =
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(layout.data.size())));
    if (k == 0) return;
    std::vector<std::pair<std::size_t, std::uint8_t>> junk(k);
    for (auto& j : junk) {
        j.first = rng.below(layout.data.size() + 1);
        j.second = static_cast<std::uint8_t>(rng.below(256));
    }
    std::stable_sort(junk.begin(), junk.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    Bytes grown;
    grown.reserve(layout.data.size() + k);
    std::size_t next = 0;
    for (std::size_t i = 0; i <= layout.data.size(); ++i) {
        while (next < k && junk[next].first == i) grown.push_back(junk[next++].second);
        if (i < layout.data.size()) grown.push_back(layout.data[i]);
    }
    layout.data = std::move(grown);
}

void enc_pass(deximg::DexLayout& layout, double ratio, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "obf-enc"));
    const std::size_t k =
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(layout.data.size())));
    for (std::size_t i = layout.data.size() - k; i < layout.data.size(); ++i)
        layout.data[i] = static_cast<std::uint8_t>(rng.below(256));
}

callgraph::CallGraph co_graph_pass(const callgraph::CallGraph& g, double ratio,
                                   std::uint64_t seed) {
    Rng rng(derive_seed(seed, "obf-co-graph"));
    const auto es = g.edges();
    std::vector<std::size_t> order(es.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    const std::size_t k =
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(es.size())));
    std::vector<char> wrap(es.size(), 0);
    for (std::size_t i = 0; i < k; ++i) wrap[order[i]] = 1;

    callgraph::CallGraph out;
    for (std::size_t id = 0; id < g.node_count(); ++id) out.add_node(g.name(id));
    std::size_t fresh = 0;
    for (std::size_t e = 0; e < es.size(); ++e) {
        const auto [u, v] = es[e];
        if (!wrap[e]) {
            out.add_edge(u, v);
            continue;
        }
        std::string w;
        do {
            w = "obf.i" + std::to_string(fresh++);
        } while (out.has_node(w));
        out.add_node(w);
        out.add_edge(g.name(u), w);
        out.add_edge(w, g.name(v));
    }
    return out;
}

}  // namespace

ApkSample obfuscate(const ApkSample& sample, const ObfuscationSpec& spec) {
    spec.validate();
    const bool wants_graph =
        spec.mode == ObfuscationMode::kCo || spec.mode == ObfuscationMode::kMixed;
    if (spec.mode == ObfuscationMode::kCo) {
        if (!sample.has_dex() && !sample.has_graph())
            throw DataError("co obfuscation needs DEX bytes or a call graph");
    } else if (!sample.has_dex()) {
        throw DataError(std::string(obfuscation_mode_name(spec.mode)) +
                        " obfuscation needs DEX bytes");
    }

    ApkSample out = sample;
    if (sample.has_dex()) {
        deximg::DexLayout layout = deximg::parse_dex(sample.dex);
        const std::size_t data_before = layout.data.size();
        switch (spec.mode) {
            case ObfuscationMode::kRn:
                rn_pass(layout, spec.seed);
                break;
            case ObfuscationMode::kCo:
                co_bytes_pass(layout, spec.junk_ratio, spec.seed);
                break;
            case ObfuscationMode::kEnc:
                enc_pass(layout, spec.enc_ratio, spec.seed);
                break;
            case ObfuscationMode::kMixed:
                rn_pass(layout, spec.seed);
                co_bytes_pass(layout, spec.junk_ratio, spec.seed);
                enc_pass(layout, spec.enc_ratio, spec.seed);
                break;
        }
        out.dex = layout.data.size() == data_before ? deximg::serialize_dex(layout)
                                                    : deximg::rebuild_dex(layout);
    }
    if (wants_graph && sample.has_graph())
        out.graph = co_graph_pass(sample.graph, spec.indirection_ratio, spec.seed);
    return out;
}

double shannon_entropy(const Bytes& bytes) {
    if (bytes.empty()) return 0.0;
    std::array<std::size_t, 256> counts{};
    for (std::uint8_t b : bytes) ++counts[b];
    const double n = static_cast<double>(bytes.size());
    double h = 0.0;
    for (std::size_t c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

void AttackBudget::validate() const {
    auto check_sorted = [](const std::vector<std::size_t>& v, const char* what) {
        for (std::size_t i = 1; i < v.size(); ++i) {
            if (v[i] <= v[i - 1])
                throw ConfigError(std::string(what) +
                                  " bit indices must be strictly increasing");
        }
    };
    check_sorted(allowed, "allowed");
    check_sorted(protected_bits, "protected");
    std::size_t i = 0, j = 0;
    while (i < allowed.size() && j < protected_bits.size()) {
        if (allowed[i] == protected_bits[j])
            throw ConfigError("bit " + std::to_string(allowed[i]) +
                              " is both allowed and protected");
        if (allowed[i] < protected_bits[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    if (noise_dim == 0) throw ConfigError("noise dimension must be at least 1");
}

AttackBudget derive_budget(const tabular::BinaryFeatureMatrix& bits,
                           const std::vector<int>& labels, double allowed_df,
                           double protected_mal_df, double protected_benign_df) {
    if (labels.size() != bits.samples())
        throw DimensionError("label count " + std::to_string(labels.size()) +
                             " != sample count " + std::to_string(bits.samples()));
    std::size_t n_mal = 0, n_ben = 0;
    for (int y : labels) (y != 0 ? n_mal : n_ben)++;
    if (n_mal == 0 || n_ben == 0)
        throw DataError("document frequencies need both classes present");

    AttackBudget budget;
    for (std::size_t j = 0; j < bits.features(); ++j) {
        std::size_t mal = 0, ben = 0;
        for (std::size_t i = 0; i < bits.samples(); ++i) {
            if (bits.bits(i, j) == 0.0) continue;
            (labels[i] != 0 ? mal : ben)++;
        }
        const double mal_df = static_cast<double>(mal) / static_cast<double>(n_mal);
        const double ben_df = static_cast<double>(ben) / static_cast<double>(n_ben);
        const bool is_protected = mal_df >= protected_mal_df && ben_df <= protected_benign_df;
        if (is_protected) {
            budget.protected_bits.push_back(j);
        } else if (ben_df >= allowed_df) {
            budget.allowed.push_back(j);
        }
    }
    return budget;
}

void AttackHyper::validate() const {
    if (epochs == 0) throw ConfigError("attack needs at least one epoch");
    if (batch_size == 0) throw ConfigError("attack batch size must be at least 1");
    if (!(generator_lr > 0.0) || !(substitute_lr > 0.0))
        throw ConfigError("attack learning rates must be positive");
    if (hidden == 0) throw ConfigError("attack hidden width must be at least 1");
}

namespace {

Value mlp3(Tape& t, const std::string& prefix, Value x) {
    auto aff = [&](Value v, const char* layer) {
        return t.add_rowvec(t.matmul(v, t.param(prefix + "." + layer + ".w")),
                            t.param(prefix + "." + layer + ".b"));
    };
    Value h = t.relu(aff(x, "fc1"));
    h = t.relu(aff(h, "fc2"));
    return aff(h, "out");
}

void init_mlp3(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
               std::size_t out, Rng& rng) {
    store.create_glorot(prefix + ".fc1.w", in, hidden, rng);
    store.create(prefix + ".fc1.b", 1, hidden);
    store.create_glorot(prefix + ".fc2.w", hidden, hidden, rng);
    store.create(prefix + ".fc2.b", 1, hidden);
    store.create_glorot(prefix + ".out.w", hidden, out, rng);
    store.create(prefix + ".out.b", 1, out);
}

// Flip candidates are the probabilities above 0.5; the cap keeps the most
// confident ones (ties to the lower allowed-list position).
std::vector<double> apply_flips(const std::vector<double>& bits, const Matrix& probs,
                                std::size_t row, const AttackBudget& budget) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < budget.allowed.size(); ++j) {
        if (probs(row, j) > 0.5) cand.emplace_back(probs(row, j), j);
    }
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    const std::size_t flips = std::min(cand.size(), budget.max_flips);
    std::vector<double> out = bits;
    for (std::size_t i = 0; i < flips; ++i) {
        const std::size_t bit = budget.allowed[cand[i].second];
        out[bit] = out[bit] != 0.0 ? 0.0 : 1.0;
    }
    return out;
}

Matrix normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.raw()) v = rng.normal();
    return m;
}

}  // namespace

AdversarialGenerator::AdversarialGenerator(std::size_t tf_dim, AttackBudget budget,
                                           std::uint64_t seed, std::size_t hidden)
    : tf_dim_(tf_dim),
      budget_(std::move(budget)),
      gen_store_(std::make_unique<ParamStore>()),
      sub_store_(std::make_unique<ParamStore>()) {
    if (tf_dim_ == 0) throw ConfigError("generator needs a positive bit-vector width");
    if (hidden == 0) throw ConfigError("generator hidden width must be at least 1");
    budget_.validate();
    if (budget_.allowed.empty()) throw ConfigError("attack budget allows no bits");
    const auto check_range = [&](const std::vector<std::size_t>& v, const char* what) {
        for (std::size_t idx : v) {
            if (idx >= tf_dim_)
                throw ConfigError(std::string(what) + " bit " + std::to_string(idx) +
                                  " is outside the " + std::to_string(tf_dim_) +
                                  "-bit vector");
        }
    };
    check_range(budget_.allowed, "allowed");
    check_range(budget_.protected_bits, "protected");

    Rng grng(derive_seed(seed, "gen-init"));
    init_mlp3(*gen_store_, "gen", tf_dim_ + budget_.noise_dim, hidden, budget_.allowed.size(),
              grng);
    Rng srng(derive_seed(seed, "sub-init"));
    init_mlp3(*sub_store_, "sub", tf_dim_, hidden, 1, srng);
}

Matrix AdversarialGenerator::flip_probabilities(const Matrix& tf_rows,
                                                const Matrix& noise) const {
    if (tf_rows.rows() == 0) throw DataError("no rows to perturb");
    if (tf_rows.cols() != tf_dim_)
        throw DimensionError("bit-vector width " + std::to_string(tf_rows.cols()) +
                             " != generator width " + std::to_string(tf_dim_));
    if (noise.rows() != tf_rows.rows() || noise.cols() != budget_.noise_dim)
        throw DimensionError("noise must be " + std::to_string(tf_rows.rows()) + "x" +
                             std::to_string(budget_.noise_dim) + ", got " + noise.shape_str());
    Tape t(gen_store_.get());
    return t.value(t.sigmoid(mlp3(t, "gen", t.concat_cols(t.input(tf_rows), t.input(noise)))));
}

std::vector<double> AdversarialGenerator::substitute_logits(const Matrix& tf_rows) const {
    if (tf_rows.rows() == 0) throw DataError("no rows to score");
    if (tf_rows.cols() != tf_dim_)
        throw DimensionError("bit-vector width " + std::to_string(tf_rows.cols()) +
                             " != substitute width " + std::to_string(tf_dim_));
    Tape t(sub_store_.get());
    const Matrix& lg = t.value(mlp3(t, "sub", t.input(tf_rows)));
    std::vector<double> out(lg.rows());
    for (std::size_t r = 0; r < lg.rows(); ++r) out[r] = lg(r, 0);
    return out;
}

std::vector<double> AdversarialGenerator::perturb(const std::vector<double>& tf_bits,
                                                  std::uint64_t seed) const {
    if (tf_bits.size() != tf_dim_)
        throw DimensionError("bit-vector width " + std::to_string(tf_bits.size()) +
                             " != generator width " + std::to_string(tf_dim_));
    Matrix x(1, tf_dim_);
    for (std::size_t c = 0; c < tf_dim_; ++c) x(0, c) = tf_bits[c];
    Rng rng(derive_seed(seed, "ae-noise"));
    const Matrix probs = flip_probabilities(x, normal_matrix(1, budget_.noise_dim, rng));
    return apply_flips(tf_bits, probs, 0, budget_);
}

std::vector<double> perturb_sample(const AdversarialGenerator& gen, const ApkSample& sample,
                                   std::uint64_t seed) {
    if (sample.label != 1)
        throw UsageError("perturbation targets malware samples; " + sample.id + " is benign");
    return gen.perturb(sample.tf, seed);
}

AdversarialGenerator train_adversarial_generator(const BlackBox& blackbox,
                                                 const Matrix& malware_tf,
                                                 const Matrix& benign_tf,
                                                 const AttackBudget& budget,
                                                 const AttackHyper& hyper, std::uint64_t seed) {
    hyper.validate();
    if (malware_tf.rows() == 0) throw DataError("no malware rows to attack");
    if (!benign_tf.empty() && benign_tf.cols() != malware_tf.cols())
        throw DimensionError("benign rows are " + std::to_string(benign_tf.cols()) +
                             " bits wide, malware rows " + std::to_string(malware_tf.cols()));
    if (budget.allowed.empty()) throw ConfigError("attack budget allows no bits");

    AdversarialGenerator gen(malware_tf.cols(), budget, derive_seed(seed, "attack-init"),
                             hyper.hidden);
    const std::size_t n_mal = malware_tf.rows();
    const std::size_t n_ben = benign_tf.empty() ? 0 : benign_tf.rows();
    const std::size_t d = malware_tf.cols();
    const std::size_t n_allowed = gen.budget().allowed.size();

    auto query = [&](const Matrix& rows) {
        const std::vector<int> y = blackbox(rows);
        if (y.size() != rows.rows())
            throw DataError("black box returned " + std::to_string(y.size()) +
                            " labels for " + std::to_string(rows.rows()) + " rows");
        return y;
    };
    const std::vector<int> y_mal = query(malware_tf);
    std::vector<int> y_ben;
    if (n_ben > 0) y_ben = query(benign_tf);

    // Scatter matrix lifting per-allowed-bit columns back to full width.
    Matrix scatter(n_allowed, d);
    for (std::size_t j = 0; j < n_allowed; ++j) scatter(j, gen.budget().allowed[j]) = 1.0;

    nn::OptimHyper sub_opt;
    sub_opt.learning_rate = hyper.substitute_lr;
    sub_opt.weight_decay = 0.0;
    nn::OptimHyper gen_opt;
    gen_opt.learning_rate = hyper.generator_lr;
    gen_opt.weight_decay = 0.0;

    auto take_rows = [](const Matrix& src, const std::vector<std::size_t>& idx, std::size_t lo,
                        std::size_t hi) {
        Matrix out(hi - lo, src.cols());
        for (std::size_t i = lo; i < hi; ++i) out.set_row(i - lo, src.row(idx[i]));
        return out;
    };

    Bytes best_weights;
    double best_evasion = -1.0;
    for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
        const std::string tag = std::to_string(epoch);
        Rng noise_rng(derive_seed(seed, "noise-" + tag));
        const Matrix noise = normal_matrix(n_mal, gen.budget().noise_dim, noise_rng);
        const Matrix probs = gen.flip_probabilities(malware_tf, noise);
        Matrix ae(n_mal, d);
        for (std::size_t r = 0; r < n_mal; ++r) {
            const auto flipped = apply_flips(malware_tf.row(r), probs, r, gen.budget());
            ae.set_row(r, flipped);
        }
        const std::vector<int> y_ae = query(ae);
        std::size_t evaded = 0;
        for (int y : y_ae) evaded += y == 0 ? 1 : 0;
        const double evasion = static_cast<double>(evaded) / static_cast<double>(n_mal);

        // Pool = originals plus this epoch's AEs, all under black-box labels.
        const std::size_t n_pool = n_mal + n_ben + n_mal;
        Matrix pool(n_pool, d);
        std::vector<double> pool_labels(n_pool);
        for (std::size_t r = 0; r < n_mal; ++r) {
            pool.set_row(r, malware_tf.row(r));
            pool_labels[r] = y_mal[r];
        }
        for (std::size_t r = 0; r < n_ben; ++r) {
            pool.set_row(n_mal + r, benign_tf.row(r));
            pool_labels[n_mal + r] = y_ben[r];
        }
        for (std::size_t r = 0; r < n_mal; ++r) {
            pool.set_row(n_mal + n_ben + r, ae.row(r));
            pool_labels[n_mal + n_ben + r] = y_ae[r];
        }

        std::vector<std::size_t> sub_idx(n_pool);
        std::iota(sub_idx.begin(), sub_idx.end(), std::size_t{0});
        Rng sub_order(derive_seed(seed, "sub-order-" + tag));
        sub_order.shuffle(sub_idx);
        for (std::size_t lo = 0; lo < n_pool; lo += hyper.batch_size) {
            const std::size_t hi = std::min(lo + hyper.batch_size, n_pool);
            std::vector<double> yb(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) yb[i - lo] = pool_labels[sub_idx[i]];
            gen.sub_store_->zero_grads();
            Tape t(gen.sub_store_.get());
            const Value loss =
                t.bce_with_logits(mlp3(t, "sub", t.input(take_rows(pool, sub_idx, lo, hi))), yb);
            t.backward(loss);
            gen.sub_store_->adamw_step(sub_opt);
        }
        const auto sub_scores = gen.substitute_logits(pool);
        std::size_t agree = 0;
        for (std::size_t r = 0; r < n_pool; ++r)
            agree += (sub_scores[r] > 0.0) == (pool_labels[r] > 0.5) ? 1 : 0;
        const double sub_acc = static_cast<double>(agree) / static_cast<double>(n_pool);

        // Generator step: push the substitute's malware score of the relaxed
        // AEs toward benign. The substitute's input gradient is ferried
        // across stores through a sum(x .* g) pseudo-loss.
        std::vector<std::size_t> gen_idx(n_mal);
        std::iota(gen_idx.begin(), gen_idx.end(), std::size_t{0});
        Rng gen_order(derive_seed(seed, "gen-order-" + tag));
        gen_order.shuffle(gen_idx);
        double loss_sum = 0.0;
        for (std::size_t lo = 0; lo < n_mal; lo += hyper.batch_size) {
            const std::size_t hi = std::min(lo + hyper.batch_size, n_mal);
            const Matrix xb = take_rows(malware_tf, gen_idx, lo, hi);
            const Matrix zb = take_rows(noise, gen_idx, lo, hi);

            gen.gen_store_->zero_grads();
            Tape tg(gen.gen_store_.get());
            const Value xv = tg.input(xb);
            const Value pv =
                tg.sigmoid(mlp3(tg, "gen", tg.concat_cols(xv, tg.input(zb))));
            const Value pfull = tg.matmul(pv, tg.input(scatter));
            // x' = x + p - 2*x.*p: each allowed bit drifts toward its flip.
            const Value xprime =
                tg.sub(tg.add(xv, pfull), tg.scale(tg.mul(xv, pfull), 2.0));

            Tape ts(gen.sub_store_.get());
            const Value xin = ts.input(tg.value(xprime));
            const Value sloss = ts.bce_with_logits(mlp3(ts, "sub", xin),
                                                   std::vector<double>(hi - lo, 0.0));
            loss_sum += ts.scalar(sloss) * static_cast<double>(hi - lo);
            ts.backward(sloss);
            const Matrix upstream = ts.grad(xin);

            const Value bridge = tg.sum_all(tg.mul(xprime, tg.input(upstream)));
            tg.backward(bridge);
            gen.gen_store_->adamw_step(gen_opt);
        }
        // Stray gradients from the bridge backward; the next refit clears its
        // own, but keep the store clean between epochs.
        gen.sub_store_->zero_grads();

        gen.log_.epochs.push_back(
            {epoch, loss_sum / static_cast<double>(n_mal), sub_acc, evasion});
        if (evasion > best_evasion) {
            best_evasion = evasion;
            best_weights = gen.gen_store_->serialize(false);
            gen.log_.best_epoch = epoch;
        }
    }
    if (!best_weights.empty()) *gen.gen_store_ = ParamStore::deserialize(best_weights);
    return gen;
}

void save_ae_csv(const std::string& path, const AeCorpus& corpus) {
    const std::size_t n = corpus.bits.samples();
    if (corpus.labels.size() != n || corpus.origin_ids.size() != n)
        throw DimensionError("AE corpus fields disagree on sample count");
    std::string text = "sha256";
    for (const auto& f : corpus.bits.feature_names) text += "," + f;
    text += ",label,origin_id\n";
    for (std::size_t i = 0; i < n; ++i) {
        text += corpus.bits.sample_ids[i];
        for (std::size_t j = 0; j < corpus.bits.features(); ++j)
            text += corpus.bits.bits(i, j) != 0.0 ? ",1" : ",0";
        text += ",";
        text += std::to_string(corpus.labels[i]);
        text += ",";
        text += corpus.origin_ids[i];
        text += "\n";
    }
    write_text_file(path, text);
}

AeCorpus load_ae_csv(const std::string& path) {
    const auto lines = split_lines(read_text_file(path));
    if (lines.empty()) throw DataError("empty AE csv: " + path);
    const auto header = split(lines[0], ',');
    if (header.size() < 3 || header.front() != "sha256" || header.back() != "origin_id" ||
        header[header.size() - 2] != "label")
        throw DataError("AE csv header must be sha256,<features...>,label,origin_id: " + path);
    const std::size_t n_feat = header.size() - 3;

    struct Row {
        std::string id;
        std::vector<double> bits;
        int label = 0;
        std::string origin;
    };
    std::vector<Row> rows;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        const auto cells = split(lines[li], ',');
        if (cells.size() != header.size())
            throw DataError("AE csv row " + std::to_string(li + 1) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
        Row row;
        row.id = cells[0];
        row.bits.resize(n_feat);
        for (std::size_t j = 0; j < n_feat; ++j) {
            if (cells[j + 1] == "0")
                row.bits[j] = 0.0;
            else if (cells[j + 1] == "1")
                row.bits[j] = 1.0;
            else
                throw DataError("AE csv cell at row " + std::to_string(li + 1) + " col " +
                                header[j + 1] + " is not 0/1");
        }
        const std::string& lab = cells[cells.size() - 2];
        if (lab == "0")
            row.label = 0;
        else if (lab == "1")
            row.label = 1;
        else
            throw DataError("AE csv label at row " + std::to_string(li + 1) + " is not 0/1");
        row.origin = cells.back();
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.id < b.id; });

    AeCorpus out;
    out.bits.feature_names.assign(header.begin() + 1, header.end() - 2);
    out.bits.bits = Matrix(rows.size(), n_feat);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.bits.sample_ids.push_back(rows[i].id);
        for (std::size_t j = 0; j < n_feat; ++j) out.bits.bits(i, j) = rows[i].bits[j];
        out.labels.push_back(rows[i].label);
        out.origin_ids.push_back(rows[i].origin);
    }
    return out;
}

}  // namespace dmldroid::robustness
