#include "dmldroid/harness.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <utility>

#include "dmldroid/deximg.hpp"

namespace fs = std::filesystem;

namespace dmldroid::harness {

namespace {

std::string zero_pad(std::size_t v, std::size_t width) {
    std::string s = std::to_string(v);
    while (s.size() < width) s.insert(s.begin(), '0');
    return s;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

double parse_double_or(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("expected a number for " + key + ", got '" + v + "'");
    }
}

std::uint64_t parse_u64_or(const std::string& v, const std::string& key) {
    try {
        if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
            throw std::invalid_argument(v);
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError("expected a non-negative integer for " + key + ", got '" + v + "'");
    }
}

std::vector<std::string> parse_name_list(const std::string& v, const std::string& key) {
    std::vector<std::string> out;
    for (const std::string& piece : split_csv_line(v)) {
        const std::string name = trim(piece);
        if (name.empty()) throw ConfigError("empty entry in " + key + " list");
        out.push_back(name);
    }
    return out;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::string sensitive_api_name(std::size_t k) { return "api.sens." + std::to_string(k); }

std::uint64_t profile_digest(const ClassProfile& p) {
    Bytes buf;
    put_u64_le(buf, p.tf_p.size());
    for (double v : p.tf_p) put_f64_le(buf, v);
    put_u64_le(buf, p.dex_motif.size());
    buf.insert(buf.end(), p.dex_motif.begin(), p.dex_motif.end());
    put_u64_le(buf, p.chain_len);
    put_f64_le(buf, p.stray_sensitive_p);
    return fnv1a64(std::string(buf.begin(), buf.end()));
}

void check_probability(double p, const std::string& what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(what + " must lie in [0, 1]");
}

}  // namespace

ClassProfile default_benign_profile() {
    ClassProfile p;
    p.tf_p = {0.02, 0.02, 0.40, 0.40, 0.40, 0.40, 0.92, 0.92, 0.92, 0.92, 0.92, 0.92,
              0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30};
    p.dex_motif = {0x1c, 0x2b, 0x17, 0x33};
    p.chain_len = 0;
    p.stray_sensitive_p = 0.12;
    return p;
}

ClassProfile default_malware_profile() {
    ClassProfile p;
    p.tf_p = {0.55, 0.55, 0.95, 0.95, 0.95, 0.95, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05,
              0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30};
    p.dex_motif = {0xd8, 0xe7, 0xc3, 0xf1};
    p.chain_len = 5;
    p.stray_sensitive_p = 0.05;
    return p;
}

void SyntheticConfig::validate() const {
    if (n_benign == 0 || n_malware == 0) throw ConfigError("class counts must be at least 1");
    if (benign.tf_p.empty()) throw ConfigError("profiles need at least one tabular bit");
    if (benign.tf_p.size() != malware.tf_p.size())
        throw ConfigError("both profiles must define the same tabular bit count");
    for (const ClassProfile* p : {&benign, &malware}) {
        for (double q : p->tf_p) check_probability(q, "bit probability");
        check_probability(p->stray_sensitive_p, "stray sensitive-api probability");
        if (p->chain_len > sensitive_pool)
            throw ConfigError("chain length exceeds the sensitive api pool");
        if (p->dex_motif.empty() && motif_len > 0)
            throw ConfigError("a non-zero motif span needs motif bytes");
    }
    if (ids_len == 0 || ids_len % 4 != 0)
        throw ConfigError("ids section length must be a positive multiple of 4");
    if (data_len == 0) throw ConfigError("data section length must be positive");
    if (motif_len > data_len) throw ConfigError("motif span cannot exceed the data section");
    if (graph_nodes == 0) throw ConfigError("graphs need at least one node");
    check_probability(edge_density, "edge density");
    if (sensitive_pool == 0) throw ConfigError("the sensitive api pool cannot be empty");
}

std::vector<std::string> tf_feature_names(std::size_t n) {
    std::vector<std::string> names(n);
    for (std::size_t i = 0; i < n; ++i) names[i] = "tf.b" + zero_pad(i, 3);
    return names;
}

namespace {

void synth_class(std::vector<ApkSample>& out, const SyntheticConfig& cfg,
                 const ClassProfile& prof, std::size_t count, int label, char prefix) {
    const std::uint64_t digest = profile_digest(prof);
    std::vector<std::string> pool(cfg.graph_nodes);
    for (std::size_t u = 0; u < cfg.graph_nodes; ++u) pool[u] = "api.u" + zero_pad(u, 2);

    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(cfg.seed,
                            "sample-" + std::to_string(digest) + "-" + std::to_string(i)));
        ApkSample s;
        s.label = label;
        s.id = std::string(1, prefix) + zero_pad(i, 5);

        s.tf.resize(prof.tf_p.size());
        for (std::size_t j = 0; j < prof.tf_p.size(); ++j)
            s.tf[j] = rng.bernoulli(prof.tf_p[j]) ? 1.0 : 0.0;

        Bytes ids(cfg.ids_len);
        for (auto& b : ids) b = static_cast<std::uint8_t>(0x20 + rng.below(95));
        Bytes data(cfg.data_len);
        for (std::size_t k = 0; k < cfg.data_len; ++k) {
            data[k] = k < cfg.motif_len ? prof.dex_motif[k % prof.dex_motif.size()]
                                        : static_cast<std::uint8_t>(rng.below(256));
        }
        s.dex = deximg::build_dex(ids, data);

        callgraph::CallGraph g;
        for (const std::string& name : pool) g.add_node(name);
        for (std::size_t u = 0; u < cfg.graph_nodes; ++u) {
            for (std::size_t v = 0; v < cfg.graph_nodes; ++v) {
                if (u != v && rng.bernoulli(cfg.edge_density)) g.add_edge(u, v);
            }
        }
        for (std::size_t k = 0; k < cfg.sensitive_pool; ++k) {
            if (rng.bernoulli(prof.stray_sensitive_p))
                g.add_edge(pool[rng.below(pool.size())], sensitive_api_name(k));
        }
        if (prof.chain_len > 0) {
            for (std::size_t k = 0; k + 1 < prof.chain_len; ++k)
                g.add_edge(sensitive_api_name(k), sensitive_api_name(k + 1));
            g.add_edge(pool[rng.below(pool.size())], sensitive_api_name(0));
            g.add_edge(sensitive_api_name(prof.chain_len - 1), pool[rng.below(pool.size())]);
        }
        s.graph = std::move(g);
        out.push_back(std::move(s));
    }
}

}  // namespace

std::vector<ApkSample> synth_dataset(const SyntheticConfig& cfg) {
    cfg.validate();
    std::vector<ApkSample> out;
    out.reserve(cfg.n_benign + cfg.n_malware);
    synth_class(out, cfg, cfg.benign, cfg.n_benign, 0, 'b');
    synth_class(out, cfg, cfg.malware, cfg.n_malware, 1, 'm');
    return out;
}

std::uint64_t dataset_digest(const std::vector<ApkSample>& samples) {
    std::uint64_t h = fnv1a64("dmldroid-dataset");
    for (const ApkSample& s : samples) {
        h = fnv1a64(s.id, h);
        h = fnv1a64(std::to_string(s.label), h);
        std::string tf(s.tf.size(), '0');
        for (std::size_t j = 0; j < s.tf.size(); ++j) tf[j] = s.tf[j] > 0.5 ? '1' : '0';
        h = fnv1a64(tf, h);
        h = fnv1a64(std::string(s.dex.begin(), s.dex.end()), h);
        h = fnv1a64(callgraph::to_edge_list(s.graph), h);
    }
    return h;
}

std::pair<std::vector<ApkSample>, std::vector<ApkSample>> split_dataset(
    const std::vector<ApkSample>& samples, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction <= 1.0))
        throw ConfigError("test fraction must lie in [0, 1]");
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, "train-test-split"));
    rng.shuffle(idx);
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(samples.size())));
    std::pair<std::vector<ApkSample>, std::vector<ApkSample>> out;
    for (std::size_t i = 0; i < idx.size(); ++i)
        (i < n_test ? out.second : out.first).push_back(samples[idx[i]]);
    return out;
}

IngestFormat parse_ingest_format(const std::string& name) {
    if (name == "tabular-csv") return IngestFormat::kTabularCsv;
    if (name == "dex-dir") return IngestFormat::kDexDir;
    if (name == "graph-edgelist") return IngestFormat::kGraphEdgeList;
    throw ConfigError("unknown ingest format: " + name);
}

std::string ingest_format_name(IngestFormat format) {
    switch (format) {
        case IngestFormat::kTabularCsv: return "tabular-csv";
        case IngestFormat::kDexDir: return "dex-dir";
        case IngestFormat::kGraphEdgeList: return "graph-edgelist";
    }
    throw ConfigError("unknown ingest format tag");
}

namespace {

std::vector<fs::path> list_files(const std::string& dir, const std::string& extension) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == extension)
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

IngestReport ingest(const std::vector<IngestSource>& sources, double test_fraction,
                    std::uint64_t seed) {
    if (sources.empty()) throw ConfigError("no ingest sources given");
    IngestReport rep;
    std::map<std::string, int> labels;
    std::map<std::string, std::vector<double>> bits;
    std::map<std::string, Bytes> dexes;
    std::map<std::string, callgraph::CallGraph> graphs;
    bool have_tab = false, have_dex = false, have_graph = false;

    for (const IngestSource& src : sources) {
        switch (src.format) {
            case IngestFormat::kTabularCsv: {
                const tabular::LabeledFeatures lf = tabular::load_feature_csv(src.path);
                if (have_tab && rep.feature_names != lf.matrix.feature_names)
                    throw DataError("tabular sources disagree on feature columns");
                rep.feature_names = lf.matrix.feature_names;
                have_tab = true;
                if (lf.matrix.samples() == 0)
                    rep.warnings.push_back("no data rows in " + src.path);
                for (std::size_t i = 0; i < lf.matrix.samples(); ++i) {
                    const std::string& id = lf.matrix.sample_ids[i];
                    if (labels.count(id)) throw DataError("duplicate tabular sample id " + id);
                    labels[id] = lf.labels[i];
                    bits[id] = lf.matrix.bits.row(i);
                }
                break;
            }
            case IngestFormat::kDexDir: {
                have_dex = true;
                const auto files = list_files(src.path, ".dex");
                if (files.empty()) rep.warnings.push_back("no dex files under " + src.path);
                for (const fs::path& f : files) {
                    const std::string id = f.stem().string();
                    if (dexes.count(id)) throw DataError("duplicate dex payload for " + id);
                    dexes[id] = read_file(f.string());
                }
                break;
            }
            case IngestFormat::kGraphEdgeList: {
                have_graph = true;
                const auto files = list_files(src.path, ".edges");
                if (files.empty())
                    rep.warnings.push_back("no edge-list files under " + src.path);
                for (const fs::path& f : files) {
                    const std::string id = f.stem().string();
                    if (graphs.count(id)) throw DataError("duplicate call graph for " + id);
                    graphs[id] = callgraph::load_edge_list(f.string());
                }
                break;
            }
        }
    }

    if (!have_tab)
        rep.warnings.push_back("no tabular source ingested; payloads have no labels to join on");

    std::set<std::string> unjoinable;
    for (const auto& [id, payload] : dexes)
        if (!labels.count(id)) unjoinable.insert(id);
    for (const auto& [id, g] : graphs)
        if (!labels.count(id)) unjoinable.insert(id);
    rep.unjoinable.assign(unjoinable.begin(), unjoinable.end());

    std::set<std::string> missing;
    std::vector<ApkSample> samples;
    for (const auto& [id, label] : labels) {
        ApkSample s;
        s.id = id;
        s.label = label;
        s.tf = bits[id];
        if (auto it = dexes.find(id); it != dexes.end())
            s.dex = it->second;
        else if (have_dex)
            missing.insert(id);
        if (auto it = graphs.find(id); it != graphs.end())
            s.graph = it->second;
        else if (have_graph)
            missing.insert(id);
        samples.push_back(std::move(s));
    }
    rep.missing_modality.assign(missing.begin(), missing.end());
    std::tie(rep.train, rep.test) = split_dataset(samples, test_fraction, seed);
    return rep;
}

void PipelineConfig::validate() const {
    if (!(pca_target > 0.0 && pca_target <= 1.0))
        throw ConfigError("pca target ratio must lie in (0, 1]");
    if (key_api_k == 0) throw ConfigError("key api count must be at least 1");
    check_probability(key_api_df_min, "key api document-frequency floor");
    if (image_width == 0 || image_size == 0)
        throw ConfigError("image dimensions must be positive");
    if (max_seq_len < 2) throw ConfigError("sequence length must cover CLS plus one token");
}

FeaturePipeline FeaturePipeline::fit(const std::vector<ApkSample>& train,
                                     std::vector<std::string> feature_names,
                                     const PipelineConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (train.empty()) throw DataError("cannot fit the feature pipeline on an empty set");
    FeaturePipeline p;
    p.cfg_ = cfg;
    p.seed_ = seed;
    if (feature_names.empty()) feature_names = tf_feature_names(train.front().tf.size());
    p.names_ = std::move(feature_names);

    const tabular::BinaryFeatureMatrix raw = p.raw_bits(train);
    p.pca_ = tabular::fit_pca(raw.bits, cfg.pca_target);

    std::set<std::string> api_names;
    for (const ApkSample& s : train)
        for (std::size_t v = 0; v < s.graph.node_count(); ++v) api_names.insert(s.graph.name(v));
    if (!api_names.empty()) {
        tabular::BinaryFeatureMatrix presence;
        presence.feature_names.assign(api_names.begin(), api_names.end());
        presence.bits = nn::Matrix(train.size(), presence.feature_names.size());
        std::vector<int> labels(train.size());
        for (std::size_t i = 0; i < train.size(); ++i) {
            presence.sample_ids.push_back(train[i].id);
            labels[i] = train[i].label;
            for (std::size_t j = 0; j < presence.feature_names.size(); ++j) {
                if (train[i].graph.has_node(presence.feature_names[j]))
                    presence.bits(i, j) = 1.0;
            }
        }
        p.keys_ = callgraph::select_key_apis(presence, labels, cfg.key_api_k,
                                             cfg.key_api_df_min, derive_seed(seed, "key-apis"));
    }

    std::vector<std::vector<std::string>> sequences;
    sequences.reserve(train.size());
    for (const ApkSample& s : train) sequences.push_back(p.linearize(s.graph));
    p.vocab_ = seqenc::Vocab::fit(sequences);
    return p;
}

tabular::BinaryFeatureMatrix FeaturePipeline::raw_bits(
    const std::vector<ApkSample>& samples) const {
    tabular::BinaryFeatureMatrix m;
    m.feature_names = names_;
    m.bits = nn::Matrix(samples.size(), names_.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const ApkSample& s = samples[i];
        if (s.tf.size() != names_.size())
            throw DimensionError("sample " + s.id + " carries " + std::to_string(s.tf.size()) +
                                 " tabular bits, expected " + std::to_string(names_.size()));
        m.sample_ids.push_back(s.id);
        m.bits.set_row(i, s.tf);
    }
    return m;
}

std::vector<std::string> FeaturePipeline::linearize(const callgraph::CallGraph& g) const {
    const callgraph::CallGraph sub = callgraph::extract_key_subgraph(g, keys_);
    if (sub.node_count() == 0) return {};
    const callgraph::CommunityPartition part =
        callgraph::detect_communities(sub, 1.0, derive_seed(seed_, "communities"));
    const callgraph::ReducedCallGraph red = callgraph::rank_and_reduce(g, keys_, part);
    return callgraph::dfs_linearize(red, keys_, cfg_.max_seq_len);
}

nn::Matrix FeaturePipeline::transform_tf_bits(const nn::Matrix& bits) const {
    if (bits.cols() != names_.size())
        throw DimensionError("bit rows are " + std::to_string(bits.cols()) +
                             " wide, the pipeline expects " + std::to_string(names_.size()));
    return tabular::pca_transform(pca_, bits);
}

fusion::DetectorData FeaturePipeline::transform(const std::vector<ApkSample>& samples) const {
    if (samples.empty()) throw UsageError("no samples to transform");
    fusion::DetectorData d;
    d.tf = transform_tf_bits(raw_bits(samples).bits);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const ApkSample& s = samples[i];
        if (!s.has_dex()) throw DataError("sample " + s.id + " has no dex payload");
        const deximg::DexLayout layout = deximg::parse_dex(s.dex);
        const deximg::SectionImage image = deximg::encode_rgb_image(
            deximg::merge_multidex({layout}), cfg_.image_width, cfg_.image_size);
        const nn::Matrix row = deximg::image_to_row(image);
        if (d.img.empty()) d.img = nn::Matrix(samples.size(), row.cols());
        d.img.set_row(i, row.row(0));
        if (!s.has_graph()) throw DataError("sample " + s.id + " has no call graph");
        d.seq.push_back(seqenc::encode_sequence(linearize(s.graph), vocab_, cfg_.max_seq_len));
        d.labels.push_back(static_cast<double>(s.label));
    }
    return d;
}

void FeaturePipeline::save(const std::string& dir) const {
    fs::create_directories(dir);
    nn::ParamStore ps;
    pca_.save_into(ps);
    ps.save(dir + "/pca.dmlw");
    callgraph::save_key_api_csv(dir + "/keys.csv", keys_);
    vocab_.save(dir + "/vocab.txt");
    std::string names;
    for (const std::string& n : names_) {
        names += n;
        names += '\n';
    }
    write_text_file(dir + "/features.txt", names);
    std::string cfg;
    cfg += "pca_target=" + format_double(cfg_.pca_target) + "\n";
    cfg += "key_api_k=" + std::to_string(cfg_.key_api_k) + "\n";
    cfg += "df_min=" + format_double(cfg_.key_api_df_min) + "\n";
    cfg += "image_width=" + std::to_string(cfg_.image_width) + "\n";
    cfg += "image_size=" + std::to_string(cfg_.image_size) + "\n";
    cfg += "max_seq_len=" + std::to_string(cfg_.max_seq_len) + "\n";
    cfg += "seed=" + std::to_string(seed_) + "\n";
    write_text_file(dir + "/pipeline.cfg", cfg);
}

FeaturePipeline FeaturePipeline::load(const std::string& dir) {
    FeaturePipeline p;
    const auto kv = parse_kv_config(read_text_file(dir + "/pipeline.cfg"));
    for (const auto& [k, v] : kv) {
        if (k == "pca_target") p.cfg_.pca_target = parse_double_or(v, k);
        else if (k == "key_api_k") p.cfg_.key_api_k = parse_u64_or(v, k);
        else if (k == "df_min") p.cfg_.key_api_df_min = parse_double_or(v, k);
        else if (k == "image_width") p.cfg_.image_width = parse_u64_or(v, k);
        else if (k == "image_size") p.cfg_.image_size = parse_u64_or(v, k);
        else if (k == "max_seq_len") p.cfg_.max_seq_len = parse_u64_or(v, k);
        else if (k == "seed") p.seed_ = parse_u64_or(v, k);
        else throw DataError("unknown pipeline setting: " + k);
    }
    p.cfg_.validate();
    const nn::ParamStore ps = nn::ParamStore::load(dir + "/pca.dmlw");
    p.pca_ = tabular::PcaModel::from_store(ps);
    p.keys_ = callgraph::load_key_api_csv(dir + "/keys.csv");
    p.vocab_ = seqenc::Vocab::load(dir + "/vocab.txt");
    for (const std::string& line : split_lines(read_text_file(dir + "/features.txt")))
        if (!line.empty()) p.names_.push_back(line);
    if (p.pca_.input_dims() != p.names_.size())
        throw DataError("pipeline bundle is inconsistent: " + std::to_string(p.names_.size()) +
                        " feature names for " + std::to_string(p.pca_.input_dims()) +
                        " pca inputs");
    return p;
}

MetricsReport metrics_from_counts(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn,
                                  std::string scenario, std::string modality) {
    MetricsReport r;
    r.tp = tp;
    r.tn = tn;
    r.fp = fp;
    r.fn = fn;
    r.scenario = std::move(scenario);
    r.modality = std::move(modality);
    const std::size_t total = r.total();
    if (total == 0) throw UsageError("empty confusion matrix");
    r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
    r.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    r.f1 = r.precision + r.recall == 0.0
               ? 0.0
               : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

MetricsReport evaluate(const fusion::Detector& model, const fusion::DetectorData& test,
                       std::string scenario, std::string modality) {
    if (test.size() == 0) throw UsageError("cannot evaluate on an empty test set");
    if (test.labels.size() != test.size()) throw UsageError("test set is not fully labeled");
    const std::vector<double> logits = model.logits(test);
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const bool pred = logits[i] > 0.0;
        const bool truth = test.labels[i] > 0.5;
        if (pred && truth) ++tp;
        else if (!pred && !truth) ++tn;
        else if (pred) ++fp;
        else ++fn;
    }
    return metrics_from_counts(tp, tn, fp, fn, std::move(scenario), std::move(modality));
}

nn::OptimHyper desk_optim() {
    nn::OptimHyper h;
    h.learning_rate = 1e-3;
    h.epochs = 8;
    h.batch_size = 32;
    return h;
}

namespace {

struct ModelSpec {
    bool tf = false, ifm = false, gsf = false;
    fusion::Strategy strategy = fusion::Strategy::kConcat;
};

std::optional<ModelSpec> parse_model_name(const std::string& name) {
    if (name == "U1") return ModelSpec{true, false, false, fusion::Strategy::kConcat};
    if (name == "U2") return ModelSpec{false, true, false, fusion::Strategy::kConcat};
    if (name == "U3") return ModelSpec{false, false, true, fusion::Strategy::kConcat};
    static const fusion::Strategy order[5] = {
        fusion::Strategy::kConcat, fusion::Strategy::kSelfAttn, fusion::Strategy::kCrossAttn,
        fusion::Strategy::kGated, fusion::Strategy::kDwf};
    if (name.size() == 2 && name[0] == 'M' && name[1] >= '1' && name[1] <= '5')
        return ModelSpec{true, true, true, order[name[1] - '1']};
    static const std::pair<std::string, std::array<bool, 3>> pairs[3] = {
        {"U1+U2-", {true, true, false}},
        {"U1+U3-", {true, false, true}},
        {"U2+U3-", {false, true, true}}};
    for (const auto& [prefix, flags] : pairs) {
        if (name.rfind(prefix, 0) == 0) {
            try {
                const fusion::Strategy s = fusion::parse_strategy(name.substr(prefix.size()));
                return ModelSpec{flags[0], flags[1], flags[2], s};
            } catch (const ConfigError&) {
                return std::nullopt;
            }
        }
    }
    return std::nullopt;
}

}  // namespace

bool is_known_model(const std::string& name) { return parse_model_name(name).has_value(); }

fusion::DetectorConfig model_config(const std::string& name, const FeaturePipeline& pipe) {
    const auto spec = parse_model_name(name);
    if (!spec) throw ConfigError("unknown model name: " + name);
    fusion::DetectorConfig c;
    c.use_tf = spec->tf;
    c.use_if = spec->ifm;
    c.use_gsf = spec->gsf;
    c.strategy = spec->strategy;
    c.fusion_heads = 2;
    c.tf.input_dim = pipe.pca().dims();
    c.tf.hidden1 = 32;
    c.tf.hidden2 = 32;
    c.tf.embed_dim = 32;
    c.tf.dropout = 0.1;
    c.img.in_size = pipe.config().image_size;
    c.img.stages = {{8, true}, {16, true}};
    c.img.embed_dim = 32;
    c.gsf.layers = 2;
    c.gsf.heads = 2;
    c.gsf.hidden = 32;
    c.gsf.ff_hidden = 64;
    c.gsf.max_len = pipe.config().max_seq_len;
    c.gsf.dropout = 0.1;
    c.gsf.embed_dim = 32;
    c.vocab_size = std::max<std::size_t>(pipe.vocab().size(), 3);
    c.validate();
    return c;
}

void ExperimentConfig::validate() const {
    synth.validate();
    pipeline.validate();
    optim.validate();
    obf.validate();
    attack.validate();
    if (models.empty()) throw ConfigError("the experiment plan names no models");
    std::set<std::string> seen;
    for (const std::string& m : models) {
        if (!is_known_model(m)) throw ConfigError("unknown model name: " + m);
        if (!seen.insert(m).second) throw ConfigError("duplicate model in plan: " + m);
    }
    if (scenarios.empty()) throw ConfigError("the experiment plan names no scenarios");
    static const std::set<std::string> known = {"original", "rn",    "co",
                                               "enc",      "mixed", "adversarial"};
    std::set<std::string> seen_s;
    for (const std::string& s : scenarios) {
        if (!known.count(s)) throw ConfigError("unknown scenario name: " + s);
        if (!seen_s.insert(s).second) throw ConfigError("duplicate scenario in plan: " + s);
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("test fraction must lie in (0, 1)");
    check_probability(attack_allowed_df, "allowed document-frequency threshold");
    check_probability(attack_protected_mal_df, "protected malware document-frequency threshold");
    check_probability(attack_protected_benign_df,
                      "protected benign document-frequency threshold");
}

namespace {

std::vector<ApkSample> obfuscated_copy(const std::vector<ApkSample>& in,
                                       robustness::ObfuscationMode mode,
                                       const robustness::ObfuscationSpec& base,
                                       std::uint64_t master, const std::string& tag) {
    std::vector<ApkSample> out;
    out.reserve(in.size());
    for (const ApkSample& s : in) {
        robustness::ObfuscationSpec spec = base;
        spec.mode = mode;
        spec.seed = derive_seed(master, tag + "-" + s.id);
        out.push_back(robustness::obfuscate(s, spec));
    }
    return out;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<ApkSample> corpus = synth_dataset(cfg.synth);
    const auto [train, test] =
        split_dataset(corpus, cfg.test_fraction, derive_seed(cfg.seed, "experiment-split"));
    return run_experiment(cfg, train, test, tf_feature_names(cfg.synth.tf_features()));
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::vector<ApkSample>& train,
                                const std::vector<ApkSample>& test,
                                const std::vector<std::string>& feature_names) {
    cfg.validate();
    if (train.empty()) throw DataError("empty training split");
    if (test.empty()) throw UsageError("empty test split");
    ExperimentReport rep;

    Timer t_fit;
    const FeaturePipeline pipe =
        FeaturePipeline::fit(train, feature_names, cfg.pipeline, derive_seed(cfg.seed, "pipeline"));
    rep.timings.push_back({"pipeline", "fit", t_fit.seconds()});

    const fusion::DetectorData train_data = pipe.transform(train);

    struct Trained {
        std::string name;
        std::unique_ptr<nn::ParamStore> store;
        std::unique_ptr<fusion::Detector> model;
        double eval_seconds = 0.0;
    };
    std::vector<Trained> models;
    for (const std::string& name : cfg.models) {
        Trained tr;
        tr.name = name;
        tr.store = std::make_unique<nn::ParamStore>();
        Rng init(derive_seed(cfg.seed, "init-" + name));
        tr.model = std::make_unique<fusion::Detector>(model_config(name, pipe), *tr.store, init);
        Timer t_train;
        fusion::train_detector(*tr.model, train_data, nullptr, cfg.optim,
                               derive_seed(cfg.seed, "train-" + name));
        rep.timings.push_back({name, "train", t_train.seconds()});
        models.push_back(std::move(tr));
    }

    const bool want_adv =
        std::find(cfg.scenarios.begin(), cfg.scenarios.end(), "adversarial") !=
        cfg.scenarios.end();
    std::unique_ptr<nn::ParamStore> target_store;
    std::unique_ptr<fusion::Detector> target_model;
    std::unique_ptr<robustness::AdversarialGenerator> gen;
    if (want_adv) {
        Timer t_attack;
        const fusion::Detector* target = nullptr;
        for (const Trained& m : models)
            if (m.name == "U1") target = m.model.get();
        if (!target) {
            target_store = std::make_unique<nn::ParamStore>();
            Rng init(derive_seed(cfg.seed, "init-U1"));
            target_model = std::make_unique<fusion::Detector>(model_config("U1", pipe),
                                                              *target_store, init);
            fusion::train_detector(*target_model, train_data, nullptr, cfg.optim,
                                   derive_seed(cfg.seed, "train-U1"));
            target = target_model.get();
        }

        const tabular::BinaryFeatureMatrix bits = pipe.raw_bits(train);
        std::vector<int> labels(train.size());
        for (std::size_t i = 0; i < train.size(); ++i) labels[i] = train[i].label;
        robustness::AttackBudget budget =
            robustness::derive_budget(bits, labels, cfg.attack_allowed_df,
                                      cfg.attack_protected_mal_df, cfg.attack_protected_benign_df);
        budget.max_flips = cfg.attack_max_flips;

        const robustness::BlackBox box = [&pipe, target](const nn::Matrix& rows) {
            fusion::DetectorData d;
            d.tf = pipe.transform_tf_bits(rows);
            const std::vector<double> lg = target->logits(d);
            std::vector<int> y(lg.size());
            for (std::size_t i = 0; i < lg.size(); ++i) y[i] = lg[i] > 0.0 ? 1 : 0;
            return y;
        };

        std::size_t n_mal = 0;
        for (int lab : labels) n_mal += lab == 1 ? 1 : 0;
        nn::Matrix malware_bits(n_mal, bits.features());
        nn::Matrix benign_bits(train.size() - n_mal, bits.features());
        std::size_t mr = 0, br = 0;
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (labels[i] == 1)
                malware_bits.set_row(mr++, bits.bits.row(i));
            else
                benign_bits.set_row(br++, bits.bits.row(i));
        }
        gen = std::make_unique<robustness::AdversarialGenerator>(
            robustness::train_adversarial_generator(box, malware_bits, benign_bits, budget,
                                                    cfg.attack, derive_seed(cfg.seed, "attack")));
        rep.timings.push_back({"attack", "train", t_attack.seconds()});
    }

    std::vector<std::pair<std::string, fusion::DetectorData>> variants;
    for (const std::string& scen : cfg.scenarios) {
        if (scen == "original") {
            variants.emplace_back(scen, pipe.transform(test));
        } else if (scen == "adversarial") {
            std::vector<ApkSample> adv = test;
            for (ApkSample& s : adv) {
                if (s.label == 1)
                    s.tf = robustness::perturb_sample(*gen, s, derive_seed(cfg.seed, "ae-" + s.id));
            }
            variants.emplace_back(scen, pipe.transform(adv));
        } else {
            const robustness::ObfuscationMode mode = robustness::parse_obfuscation_mode(scen);
            variants.emplace_back(
                scen, pipe.transform(obfuscated_copy(test, mode, cfg.obf, cfg.seed, "obf-" + scen)));
        }
    }

    for (const auto& [scen, data] : variants) {
        for (Trained& m : models) {
            Timer t_eval;
            rep.rows.push_back(evaluate(*m.model, data, scen, m.name));
            m.eval_seconds += t_eval.seconds();
        }
    }
    for (const Trained& m : models) rep.timings.push_back({m.name, "eval", m.eval_seconds});
    return rep;
}

namespace {
const char* kMetricsHeader = "scenario,modality,acc,pre,rec,f1";
const char* kTimingHeader = "modality,phase,seconds";
}  // namespace

std::string metrics_to_csv(const std::vector<MetricsReport>& rows) {
    std::string out = kMetricsHeader;
    out += '\n';
    for (const MetricsReport& r : rows) {
        out += r.scenario + "," + r.modality + "," + format_double(r.accuracy) + "," +
               format_double(r.precision) + "," + format_double(r.recall) + "," +
               format_double(r.f1) + "\n";
    }
    return out;
}

std::vector<MetricsReport> metrics_from_csv(const std::string& text) {
    std::vector<std::string> lines = split_lines(text);
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty() || lines.front() != kMetricsHeader)
        throw DataError("metrics csv is missing its header row");
    std::vector<MetricsReport> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = split_csv_line(lines[i]);
        if (cells.size() != 6)
            throw DataError("metrics row " + std::to_string(i) + " has " +
                            std::to_string(cells.size()) + " cells, expected 6");
        MetricsReport r;
        r.scenario = cells[0];
        r.modality = cells[1];
        try {
            r.accuracy = std::stod(cells[2]);
            r.precision = std::stod(cells[3]);
            r.recall = std::stod(cells[4]);
            r.f1 = std::stod(cells[5]);
        } catch (const std::exception&) {
            throw DataError("metrics row " + std::to_string(i) + " holds a non-numeric cell");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string timings_to_csv(const std::vector<TimingRow>& rows) {
    std::string out = kTimingHeader;
    out += '\n';
    for (const TimingRow& r : rows)
        out += r.modality + "," + r.phase + "," + format_double(r.seconds) + "\n";
    return out;
}

std::vector<TimingRow> timings_from_csv(const std::string& text) {
    std::vector<std::string> lines = split_lines(text);
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty() || lines.front() != kTimingHeader)
        throw DataError("timing csv is missing its header row");
    std::vector<TimingRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = split_csv_line(lines[i]);
        if (cells.size() != 3)
            throw DataError("timing row " + std::to_string(i) + " has " +
                            std::to_string(cells.size()) + " cells, expected 3");
        TimingRow r;
        r.modality = cells[0];
        r.phase = cells[1];
        try {
            r.seconds = std::stod(cells[2]);
        } catch (const std::exception&) {
            throw DataError("timing row " + std::to_string(i) + " holds a non-numeric cell");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

void save_experiment(const std::string& out_dir, const ExperimentReport& report) {
    fs::create_directories(out_dir);
    write_text_file(out_dir + "/metrics.csv", metrics_to_csv(report.rows));
    write_text_file(out_dir + "/timing.csv", timings_to_csv(report.timings));
}

std::map<std::string, std::string> parse_kv_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    for (const std::string& raw : split_lines(text)) {
        const std::string line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const std::size_t pos = line.find('=');
        if (pos == std::string::npos) throw ConfigError("expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, pos));
        if (key.empty()) throw ConfigError("empty key in '" + line + "'");
        kv[key] = trim(line.substr(pos + 1));
    }
    return kv;
}

void apply_kv_config(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) {
        if (k == "seed") {
            cfg.seed = parse_u64_or(v, k);
            cfg.synth.seed = cfg.seed;
        } else if (k == "test_fraction") cfg.test_fraction = parse_double_or(v, k);
        else if (k == "models") cfg.models = parse_name_list(v, k);
        else if (k == "scenarios") cfg.scenarios = parse_name_list(v, k);
        else if (k == "synth.n_benign") cfg.synth.n_benign = parse_u64_or(v, k);
        else if (k == "synth.n_malware") cfg.synth.n_malware = parse_u64_or(v, k);
        else if (k == "synth.ids_len") cfg.synth.ids_len = parse_u64_or(v, k);
        else if (k == "synth.data_len") cfg.synth.data_len = parse_u64_or(v, k);
        else if (k == "synth.motif_len") cfg.synth.motif_len = parse_u64_or(v, k);
        else if (k == "synth.graph_nodes") cfg.synth.graph_nodes = parse_u64_or(v, k);
        else if (k == "synth.edge_density") cfg.synth.edge_density = parse_double_or(v, k);
        else if (k == "synth.sensitive_pool") cfg.synth.sensitive_pool = parse_u64_or(v, k);
        else if (k == "synth.benign.chain_len") cfg.synth.benign.chain_len = parse_u64_or(v, k);
        else if (k == "synth.benign.stray_p")
            cfg.synth.benign.stray_sensitive_p = parse_double_or(v, k);
        else if (k == "synth.malware.chain_len")
            cfg.synth.malware.chain_len = parse_u64_or(v, k);
        else if (k == "synth.malware.stray_p")
            cfg.synth.malware.stray_sensitive_p = parse_double_or(v, k);
        else if (k == "pipeline.pca_target") cfg.pipeline.pca_target = parse_double_or(v, k);
        else if (k == "pipeline.key_api_k") cfg.pipeline.key_api_k = parse_u64_or(v, k);
        else if (k == "pipeline.df_min") cfg.pipeline.key_api_df_min = parse_double_or(v, k);
        else if (k == "pipeline.image_width") cfg.pipeline.image_width = parse_u64_or(v, k);
        else if (k == "pipeline.image_size") cfg.pipeline.image_size = parse_u64_or(v, k);
        else if (k == "pipeline.max_seq_len") cfg.pipeline.max_seq_len = parse_u64_or(v, k);
        else if (k == "optim.lr") cfg.optim.learning_rate = parse_double_or(v, k);
        else if (k == "optim.weight_decay") cfg.optim.weight_decay = parse_double_or(v, k);
        else if (k == "optim.batch_size") cfg.optim.batch_size = parse_u64_or(v, k);
        else if (k == "optim.epochs") cfg.optim.epochs = parse_u64_or(v, k);
        else if (k == "obf.junk_ratio") cfg.obf.junk_ratio = parse_double_or(v, k);
        else if (k == "obf.indirection_ratio")
            cfg.obf.indirection_ratio = parse_double_or(v, k);
        else if (k == "obf.enc_ratio") cfg.obf.enc_ratio = parse_double_or(v, k);
        else if (k == "attack.epochs") cfg.attack.epochs = parse_u64_or(v, k);
        else if (k == "attack.batch_size") cfg.attack.batch_size = parse_u64_or(v, k);
        else if (k == "attack.hidden") cfg.attack.hidden = parse_u64_or(v, k);
        else if (k == "attack.generator_lr") cfg.attack.generator_lr = parse_double_or(v, k);
        else if (k == "attack.substitute_lr") cfg.attack.substitute_lr = parse_double_or(v, k);
        else if (k == "attack.max_flips") cfg.attack_max_flips = parse_u64_or(v, k);
        else if (k == "attack.allowed_df") cfg.attack_allowed_df = parse_double_or(v, k);
        else if (k == "attack.protected_mal_df")
            cfg.attack_protected_mal_df = parse_double_or(v, k);
        else if (k == "attack.protected_benign_df")
            cfg.attack_protected_benign_df = parse_double_or(v, k);
        else throw ConfigError("unknown configuration key: " + k);
    }
}

void dump_corpus(const std::string& dir, const std::vector<ApkSample>& samples,
                 const std::vector<std::string>& feature_names) {
    fs::create_directories(dir + "/dex");
    fs::create_directories(dir + "/graphs");
    tabular::LabeledFeatures lf;
    lf.matrix.feature_names = feature_names;
    lf.matrix.bits = nn::Matrix(samples.size(), feature_names.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const ApkSample& s = samples[i];
        if (s.tf.size() != feature_names.size())
            throw DimensionError("sample " + s.id + " carries " + std::to_string(s.tf.size()) +
                                 " tabular bits, expected " +
                                 std::to_string(feature_names.size()));
        lf.matrix.sample_ids.push_back(s.id);
        lf.matrix.bits.set_row(i, s.tf);
        lf.labels.push_back(s.label);
        if (s.has_dex()) write_file(dir + "/dex/" + s.id + ".dex", s.dex);
        if (s.has_graph()) callgraph::save_edge_list(dir + "/graphs/" + s.id + ".edges", s.graph);
    }
    tabular::save_feature_csv(dir + "/tabular.csv", lf);
}

}  // namespace dmldroid::harness
