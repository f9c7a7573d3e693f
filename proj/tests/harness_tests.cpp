#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <array>
#include <filesystem>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "dmldroid/harness.hpp"

using namespace dmldroid;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* name) { return std::string("/tmp/dmldroid_test_") + name; }

harness::SyntheticConfig small_cfg(std::uint64_t seed) {
    harness::SyntheticConfig cfg;
    cfg.n_benign = 30;
    cfg.n_malware = 45;
    cfg.ids_len = 64;
    cfg.data_len = 512;
    cfg.motif_len = 128;
    cfg.graph_nodes = 12;
    cfg.edge_density = 0.08;
    cfg.seed = seed;
    return cfg;
}

harness::PipelineConfig small_pipe() {
    harness::PipelineConfig cfg;
    cfg.key_api_k = 8;
    cfg.image_width = 64;
    cfg.image_size = 16;
    cfg.max_seq_len = 16;
    return cfg;
}

using Payload = std::tuple<std::vector<double>, Bytes, std::string>;

std::multiset<Payload> payloads_of(const std::vector<ApkSample>& samples, int label) {
    std::multiset<Payload> out;
    for (const ApkSample& s : samples) {
        if (s.label == label) out.insert({s.tf, s.dex, callgraph::to_edge_list(s.graph)});
    }
    return out;
}

std::vector<std::string> edge_lines(const callgraph::CallGraph& g) {
    std::vector<std::string> lines = split_lines(callgraph::to_edge_list(g));
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    std::sort(lines.begin(), lines.end());
    return lines;
}

std::vector<ApkSample> sorted_by_id(std::vector<ApkSample> samples) {
    std::sort(samples.begin(), samples.end(),
              [](const ApkSample& a, const ApkSample& b) { return a.id < b.id; });
    return samples;
}

bool same_metrics(const harness::MetricsReport& a, const harness::MetricsReport& b) {
    return a.scenario == b.scenario && a.modality == b.modality && a.tp == b.tp && a.tn == b.tn &&
           a.fp == b.fp && a.fn == b.fn && a.accuracy == b.accuracy &&
           a.precision == b.precision && a.recall == b.recall && a.f1 == b.f1;
}

bool has_timing(const std::vector<harness::TimingRow>& rows, const std::string& modality,
                const std::string& phase) {
    for (const harness::TimingRow& r : rows) {
        if (r.modality == modality && r.phase == phase) return r.seconds >= 0.0;
    }
    return false;
}

}  // namespace

TEST_CASE("synthetic corpora are reproducible and seed sensitive") {
    const auto a = harness::synth_dataset(small_cfg(11));
    const auto b = harness::synth_dataset(small_cfg(11));
    REQUIRE(a.size() == 75);
    CHECK(harness::dataset_digest(a) == harness::dataset_digest(b));
    CHECK(harness::dataset_digest(a) != harness::dataset_digest(harness::synth_dataset(small_cfg(12))));

    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].label == (i < 30 ? 0 : 1));
        CHECK(a[i].id.front() == (i < 30 ? 'b' : 'm'));
        CHECK(a[i].tf.size() == 24);
        CHECK(a[i].has_dex());
        CHECK(a[i].has_graph());
    }

    harness::SyntheticConfig fewer = small_cfg(11);
    fewer.n_benign = 5;
    const auto c = harness::synth_dataset(fewer);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(c[i].tf == a[i].tf);
        CHECK(c[i].dex == a[i].dex);
        CHECK(callgraph::to_edge_list(c[i].graph) == callgraph::to_edge_list(a[i].graph));
    }
}

TEST_CASE("swapping the class profiles mirrors every generated payload") {
    const harness::SyntheticConfig fwd = small_cfg(7);
    harness::SyntheticConfig rev = fwd;
    std::swap(rev.benign, rev.malware);
    std::swap(rev.n_benign, rev.n_malware);

    const auto a = harness::synth_dataset(fwd);
    const auto b = harness::synth_dataset(rev);
    CHECK(payloads_of(a, 0) == payloads_of(b, 1));
    CHECK(payloads_of(a, 1) == payloads_of(b, 0));
}

TEST_CASE("a depth-2 decision tree separates the default corpus") {
    const harness::SyntheticConfig cfg;
    const auto corpus = harness::synth_dataset(cfg);
    REQUIRE(corpus.size() == 1000);
    const std::size_t d = cfg.tf_features();

    std::vector<std::vector<std::uint8_t>> bits(corpus.size(), std::vector<std::uint8_t>(d));
    std::vector<int> labels(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        labels[i] = corpus[i].label;
        for (std::size_t j = 0; j < d; ++j) bits[i][j] = corpus[i].tf[j] > 0.5 ? 1 : 0;
    }

    std::size_t best = 0;
    for (std::size_t root = 0; root < d; ++root) {
        for (std::size_t left = 0; left < d; ++left) {
            for (std::size_t right = 0; right < d; ++right) {
                std::array<std::array<std::size_t, 2>, 4> leaf{};
                for (std::size_t i = 0; i < corpus.size(); ++i) {
                    const std::size_t which =
                        bits[i][root] ? 2 + bits[i][right] : static_cast<std::size_t>(bits[i][left]);
                    ++leaf[which][labels[i]];
                }
                std::size_t correct = 0;
                for (const auto& counts : leaf) correct += std::max(counts[0], counts[1]);
                best = std::max(best, correct);
            }
        }
    }
    const double acc = static_cast<double>(best) / static_cast<double>(corpus.size());
    CHECK(acc >= 0.9);
}

TEST_CASE("degenerate synthetic configs are rejected") {
    const auto fails = [](auto mutate) {
        harness::SyntheticConfig cfg;
        mutate(cfg);
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    };
    fails([](harness::SyntheticConfig& c) { c.n_benign = 0; });
    fails([](harness::SyntheticConfig& c) { c.n_malware = 0; });
    fails([](harness::SyntheticConfig& c) {
        c.benign.tf_p.clear();
        c.malware.tf_p.clear();
    });
    fails([](harness::SyntheticConfig& c) { c.benign.tf_p.push_back(0.5); });
    fails([](harness::SyntheticConfig& c) { c.malware.tf_p[0] = 1.5; });
    fails([](harness::SyntheticConfig& c) { c.benign.stray_sensitive_p = -0.2; });
    fails([](harness::SyntheticConfig& c) { c.ids_len = 63; });
    fails([](harness::SyntheticConfig& c) { c.ids_len = 0; });
    fails([](harness::SyntheticConfig& c) { c.data_len = 0; });
    fails([](harness::SyntheticConfig& c) { c.motif_len = c.data_len + 1; });
    fails([](harness::SyntheticConfig& c) { c.malware.chain_len = c.sensitive_pool + 1; });
    fails([](harness::SyntheticConfig& c) { c.edge_density = -0.1; });
    fails([](harness::SyntheticConfig& c) { c.graph_nodes = 0; });
    fails([](harness::SyntheticConfig& c) { c.sensitive_pool = 0; });
    fails([](harness::SyntheticConfig& c) {
        c.benign.dex_motif.clear();
        c.motif_len = 16;
    });
    CHECK_NOTHROW(harness::SyntheticConfig{}.validate());
}

TEST_CASE("the train test split partitions the corpus") {
    const auto corpus = harness::synth_dataset(harness::SyntheticConfig{});
    const auto [train, test] = harness::split_dataset(corpus, 0.2, 42);
    CHECK(train.size() == 800);
    CHECK(test.size() == 200);

    std::set<std::string> all;
    for (const ApkSample& s : corpus) all.insert(s.id);
    std::set<std::string> seen;
    for (const ApkSample& s : train) CHECK(seen.insert(s.id).second);
    for (const ApkSample& s : test) CHECK(seen.insert(s.id).second);
    CHECK(seen == all);

    const auto [train2, test2] = harness::split_dataset(corpus, 0.2, 42);
    for (std::size_t i = 0; i < test.size(); ++i) CHECK(test2[i].id == test[i].id);
    for (std::size_t i = 0; i < train.size(); ++i) CHECK(train2[i].id == train[i].id);

    const auto [t3, e3] = harness::split_dataset(corpus, 0.2, 43);
    std::vector<std::string> m1, m2;
    for (const ApkSample& s : test) m1.push_back(s.id);
    for (const ApkSample& s : e3) m2.push_back(s.id);
    std::sort(m1.begin(), m1.end());
    std::sort(m2.begin(), m2.end());
    CHECK(m1 != m2);

    CHECK_THROWS_AS(harness::split_dataset(corpus, 1.1, 42), ConfigError);
    CHECK_THROWS_AS(harness::split_dataset(corpus, -0.1, 42), ConfigError);
}

TEST_CASE("a three-format dump joins back into complete samples") {
    harness::SyntheticConfig cfg = small_cfg(19);
    cfg.n_benign = 4;
    cfg.n_malware = 6;
    const auto corpus = harness::synth_dataset(cfg);
    const auto names = harness::tf_feature_names(cfg.tf_features());

    const std::string dir = temp_path("harness_join");
    fs::remove_all(dir);
    harness::dump_corpus(dir, corpus, names);

    const std::vector<harness::IngestSource> sources = {
        {harness::IngestFormat::kTabularCsv, dir + "/tabular.csv"},
        {harness::IngestFormat::kDexDir, dir + "/dex"},
        {harness::IngestFormat::kGraphEdgeList, dir + "/graphs"},
    };
    const harness::IngestReport rep = harness::ingest(sources, 0.3, 5);
    CHECK(rep.total() == 10);
    CHECK(rep.train.size() == 7);
    CHECK(rep.test.size() == 3);
    CHECK(rep.missing_modality.empty());
    CHECK(rep.unjoinable.empty());
    CHECK(rep.warnings.empty());
    CHECK(rep.feature_names == names);

    std::vector<ApkSample> joined = rep.train;
    joined.insert(joined.end(), rep.test.begin(), rep.test.end());
    joined = sorted_by_id(std::move(joined));
    const auto original = sorted_by_id(corpus);
    REQUIRE(joined.size() == original.size());
    for (std::size_t i = 0; i < joined.size(); ++i) {
        CHECK(joined[i].id == original[i].id);
        CHECK(joined[i].label == original[i].label);
        CHECK(joined[i].tf == original[i].tf);
        CHECK(joined[i].dex == original[i].dex);
        CHECK(edge_lines(joined[i].graph) == edge_lines(original[i].graph));
    }
}

TEST_CASE("ingest copes with sparse and surplus payloads") {
    harness::SyntheticConfig cfg = small_cfg(23);
    cfg.n_benign = 3;
    cfg.n_malware = 3;
    const auto corpus = harness::synth_dataset(cfg);
    const std::string dir = temp_path("harness_sparse");
    fs::remove_all(dir);
    harness::dump_corpus(dir, corpus, harness::tf_feature_names(cfg.tf_features()));

    fs::remove(dir + "/dex/" + corpus[1].id + ".dex");
    write_file(dir + "/dex/zz_stray.dex", corpus[0].dex);

    const std::vector<harness::IngestSource> sources = {
        {harness::IngestFormat::kTabularCsv, dir + "/tabular.csv"},
        {harness::IngestFormat::kDexDir, dir + "/dex"},
        {harness::IngestFormat::kGraphEdgeList, dir + "/graphs"},
    };
    const harness::IngestReport rep = harness::ingest(sources, 0.0, 1);
    CHECK(rep.total() == 6);
    CHECK(rep.missing_modality == std::vector<std::string>{corpus[1].id});
    CHECK(rep.unjoinable == std::vector<std::string>{"zz_stray"});
    for (const ApkSample& s : rep.train) {
        if (s.id == corpus[1].id) CHECK_FALSE(s.has_dex());
        else CHECK(s.has_dex());
    }

    SUBCASE("a missing directory is a data error") {
        const std::vector<harness::IngestSource> bad = {
            {harness::IngestFormat::kTabularCsv, dir + "/tabular.csv"},
            {harness::IngestFormat::kDexDir, dir + "/nope"},
        };
        CHECK_THROWS_AS(harness::ingest(bad, 0.3, 1), DataError);
    }

    SUBCASE("an empty payload directory only warns") {
        fs::create_directories(dir + "/empty");
        const std::vector<harness::IngestSource> sparse = {
            {harness::IngestFormat::kTabularCsv, dir + "/tabular.csv"},
            {harness::IngestFormat::kDexDir, dir + "/empty"},
        };
        const harness::IngestReport r = harness::ingest(sparse, 0.5, 1);
        CHECK(r.total() == 6);
        REQUIRE(r.warnings.size() == 1);
        CHECK(r.warnings[0].find("/empty") != std::string::npos);
        CHECK(r.missing_modality.size() == 6);
    }

    SUBCASE("a header-only table yields zero samples") {
        write_text_file(dir + "/empty.csv", "sha256,tf.b000,label\n");
        const std::vector<harness::IngestSource> only = {
            {harness::IngestFormat::kTabularCsv, dir + "/empty.csv"}};
        const harness::IngestReport r = harness::ingest(only, 0.3, 1);
        CHECK(r.total() == 0);
        REQUIRE(r.warnings.size() == 1);
        CHECK(r.warnings[0].find("no data rows") != std::string::npos);
    }

    SUBCASE("payloads without a tabular anchor are unjoinable") {
        const std::vector<harness::IngestSource> only = {
            {harness::IngestFormat::kGraphEdgeList, dir + "/graphs"}};
        const harness::IngestReport r = harness::ingest(only, 0.3, 1);
        CHECK(r.total() == 0);
        CHECK(r.unjoinable.size() == 6);
        CHECK_FALSE(r.warnings.empty());
    }

    CHECK_THROWS_AS(harness::ingest({}, 0.3, 1), ConfigError);
    CHECK(harness::parse_ingest_format("dex-dir") == harness::IngestFormat::kDexDir);
    CHECK(harness::ingest_format_name(harness::IngestFormat::kGraphEdgeList) ==
          "graph-edgelist");
    CHECK_THROWS_AS(harness::parse_ingest_format("zip"), ConfigError);
}

TEST_CASE("accuracy precision recall and f1 follow the confusion counts") {
    const auto r = harness::metrics_from_counts(98, 97, 3, 2, "original", "U1");
    CHECK(r.total() == 200);
    CHECK(r.accuracy == doctest::Approx(0.975).epsilon(1e-12));
    CHECK(r.precision == doctest::Approx(98.0 / 101.0).epsilon(1e-12));
    CHECK(r.recall == doctest::Approx(0.98).epsilon(1e-12));
    CHECK(r.f1 == doctest::Approx(2.0 * r.precision * r.recall / (r.precision + r.recall))
                      .epsilon(1e-12));
    CHECK(std::abs(r.accuracy - (98.0 + 97.0) / 200.0) < 1e-12);

    const auto perfect = harness::metrics_from_counts(10, 10, 0, 0);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);

    const auto shotgun = harness::metrics_from_counts(50, 0, 50, 0);
    CHECK(shotgun.recall == 1.0);
    CHECK(shotgun.accuracy == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(shotgun.precision == doctest::Approx(0.5).epsilon(1e-12));

    const auto silent = harness::metrics_from_counts(0, 50, 0, 50);
    CHECK(silent.recall == 0.0);
    CHECK(silent.precision == 0.0);
    CHECK(silent.f1 == 0.0);

    CHECK_THROWS_AS(harness::metrics_from_counts(0, 0, 0, 0), UsageError);
}

TEST_CASE("evaluation guards its inputs") {
    fusion::DetectorConfig c;
    c.use_if = false;
    c.use_gsf = false;
    c.tf.input_dim = 4;
    c.tf.hidden1 = 8;
    c.tf.hidden2 = 8;
    c.tf.embed_dim = 8;
    c.tf.dropout = 0.0;
    nn::ParamStore store;
    Rng rng(3);
    const fusion::Detector det(c, store, rng);

    CHECK_THROWS_AS(harness::evaluate(det, fusion::DetectorData{}, "original", "U1"), UsageError);

    fusion::DetectorData unlabeled;
    unlabeled.tf = nn::Matrix(3, 4);
    CHECK_THROWS_AS(harness::evaluate(det, unlabeled, "original", "U1"), UsageError);

    fusion::DetectorData labeled = unlabeled;
    labeled.labels = {1.0, 0.0, 1.0};
    const auto r = harness::evaluate(det, labeled, "rn", "U1");
    CHECK(r.total() == 3);
    CHECK(r.scenario == "rn");
    CHECK(r.modality == "U1");
}

TEST_CASE("the feature pipeline turns samples into aligned model inputs") {
    const auto corpus = harness::synth_dataset(small_cfg(3));
    const auto names = harness::tf_feature_names(24);
    const auto pipe = harness::FeaturePipeline::fit(corpus, names, small_pipe(), 9);

    CHECK(pipe.pca().cumulative_ratio() >= 0.9);
    CHECK(pipe.pca().input_dims() == 24);
    CHECK(pipe.key_apis().size() >= 1);
    CHECK(pipe.vocab().size() >= 3);
    CHECK(pipe.feature_names() == names);

    const fusion::DetectorData d = pipe.transform(corpus);
    CHECK(d.size() == corpus.size());
    CHECK(d.tf.rows() == corpus.size());
    CHECK(d.tf.cols() == pipe.pca().dims());
    CHECK(d.img.rows() == corpus.size());
    CHECK(d.img.cols() == 3 * 16 * 16);
    REQUIRE(d.seq.size() == corpus.size());
    for (const seqenc::EncodedSequence& s : d.seq) {
        CHECK(s.ids.size() == 16);
        CHECK(s.mask.size() == 16);
        CHECK(s.ids[0] == seqenc::Vocab::kCls);
    }
    for (std::size_t i = 0; i < corpus.size(); ++i)
        CHECK(d.labels[i] == static_cast<double>(corpus[i].label));

    const nn::Matrix direct = pipe.transform_tf_bits(pipe.raw_bits(corpus).bits);
    REQUIRE(direct.rows() == d.tf.rows());
    for (std::size_t i = 0; i < direct.rows(); ++i)
        for (std::size_t j = 0; j < direct.cols(); ++j) CHECK(direct(i, j) == d.tf(i, j));

    SUBCASE("the fitted pipeline survives a save and load round trip") {
        const std::string dir = temp_path("harness_pipe");
        fs::remove_all(dir);
        pipe.save(dir);
        const auto back = harness::FeaturePipeline::load(dir);
        CHECK(back.feature_names() == names);
        CHECK(back.key_apis().apis == pipe.key_apis().apis);
        CHECK(back.vocab().size() == pipe.vocab().size());
        CHECK(back.config() == pipe.config());
        const fusion::DetectorData d2 = back.transform(corpus);
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            for (std::size_t j = 0; j < d.tf.cols(); ++j) CHECK(d2.tf(i, j) == d.tf(i, j));
            for (std::size_t j = 0; j < d.img.cols(); ++j) CHECK(d2.img(i, j) == d.img(i, j));
            CHECK(d2.seq[i].ids == d.seq[i].ids);
        }
    }

    SUBCASE("width and modality defects are reported") {
        std::vector<ApkSample> bad = {corpus[0]};
        bad[0].tf.pop_back();
        CHECK_THROWS_AS(pipe.transform(bad), DimensionError);

        std::vector<ApkSample> no_dex = {corpus[0]};
        no_dex[0].dex.clear();
        CHECK_THROWS_AS(pipe.transform(no_dex), DataError);

        std::vector<ApkSample> no_graph = {corpus[0]};
        no_graph[0].graph = callgraph::CallGraph();
        CHECK_THROWS_AS(pipe.transform(no_graph), DataError);

        CHECK_THROWS_AS(pipe.transform({}), UsageError);
        CHECK_THROWS_AS(harness::FeaturePipeline::fit({}, names, small_pipe(), 9), DataError);
    }
}

TEST_CASE("model names map to detector wiring") {
    const auto corpus = harness::synth_dataset(small_cfg(3));
    const auto pipe =
        harness::FeaturePipeline::fit(corpus, harness::tf_feature_names(24), small_pipe(), 9);

    const auto u1 = harness::model_config("U1", pipe);
    CHECK(u1.use_tf);
    CHECK_FALSE(u1.use_if);
    CHECK_FALSE(u1.use_gsf);
    CHECK(u1.tf.input_dim == pipe.pca().dims());

    const auto u3 = harness::model_config("U3", pipe);
    CHECK_FALSE(u3.use_tf);
    CHECK_FALSE(u3.use_if);
    CHECK(u3.use_gsf);
    CHECK(u3.gsf.max_len == 16);
    CHECK(u3.vocab_size >= pipe.vocab().size());

    const std::array<fusion::Strategy, 5> order = {
        fusion::Strategy::kConcat, fusion::Strategy::kSelfAttn, fusion::Strategy::kCrossAttn,
        fusion::Strategy::kGated, fusion::Strategy::kDwf};
    for (int k = 1; k <= 5; ++k) {
        const auto m = harness::model_config("M" + std::to_string(k), pipe);
        CHECK(m.use_tf);
        CHECK(m.use_if);
        CHECK(m.use_gsf);
        CHECK(m.strategy == order[k - 1]);
    }

    const auto bi = harness::model_config("U2+U3-gated", pipe);
    CHECK_FALSE(bi.use_tf);
    CHECK(bi.use_if);
    CHECK(bi.use_gsf);
    CHECK(bi.strategy == fusion::Strategy::kGated);
    CHECK(harness::is_known_model("U1+U2-dwf"));
    CHECK(harness::is_known_model("U1+U3-cross_attn"));

    for (const char* bad : {"M6", "M0", "U4", "u1", "", "U1+U2-bogus", "U2+U1-concat"}) {
        CHECK_FALSE(harness::is_known_model(bad));
    }
    CHECK_THROWS_AS(harness::model_config("M6", pipe), ConfigError);
}

TEST_CASE("metric and timing tables survive a csv round trip") {
    std::vector<harness::MetricsReport> rows;
    rows.push_back(harness::metrics_from_counts(98, 97, 3, 2, "original", "U1"));
    rows.push_back(harness::metrics_from_counts(1, 2, 3, 4, "mixed", "U1+U2-dwf"));
    rows[1].accuracy = 1.0 / 3.0;
    rows[1].f1 = 1e-17;

    const std::string text = harness::metrics_to_csv(rows);
    CHECK(text.rfind("scenario,modality,acc,pre,rec,f1\n", 0) == 0);
    const auto back = harness::metrics_from_csv(text);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].scenario == rows[i].scenario);
        CHECK(back[i].modality == rows[i].modality);
        CHECK(back[i].accuracy == rows[i].accuracy);
        CHECK(back[i].precision == rows[i].precision);
        CHECK(back[i].recall == rows[i].recall);
        CHECK(back[i].f1 == rows[i].f1);
    }

    const std::vector<harness::TimingRow> times = {{"pipeline", "fit", 0.5},
                                                   {"M5", "train", 1.0 / 7.0}};
    const auto times_back = harness::timings_from_csv(harness::timings_to_csv(times));
    REQUIRE(times_back.size() == 2);
    CHECK(times_back[1].modality == "M5");
    CHECK(times_back[1].phase == "train");
    CHECK(times_back[1].seconds == 1.0 / 7.0);

    CHECK_THROWS_AS(harness::metrics_from_csv("acc,pre\n"), DataError);
    CHECK_THROWS_AS(harness::metrics_from_csv(""), DataError);
    CHECK_THROWS_AS(
        harness::metrics_from_csv("scenario,modality,acc,pre,rec,f1\noriginal,U1,0.5\n"),
        DataError);
    CHECK_THROWS_AS(
        harness::metrics_from_csv("scenario,modality,acc,pre,rec,f1\noriginal,U1,x,0,0,0\n"),
        DataError);
    CHECK_THROWS_AS(harness::timings_from_csv("modality,phase,seconds\npipeline,fit,soon\n"),
                    DataError);
}

TEST_CASE("key=value configs parse and apply") {
    const std::string text =
        "# corpus shape\n"
        "seed = 99\n"
        "\n"
        "models = U1, M5\n"
        "synth.n_benign=20\n"
        "synth.n_benign=25\n"
        "optim.epochs=4\n"
        "attack.max_flips=6\n";
    const auto kv = harness::parse_kv_config(text);
    CHECK(kv.size() == 5);
    CHECK(kv.at("synth.n_benign") == "25");

    harness::ExperimentConfig cfg;
    harness::apply_kv_config(cfg, kv);
    CHECK(cfg.seed == 99);
    CHECK(cfg.synth.seed == 99);
    CHECK(cfg.models == std::vector<std::string>{"U1", "M5"});
    CHECK(cfg.synth.n_benign == 25);
    CHECK(cfg.optim.epochs == 4);
    CHECK(cfg.attack_max_flips == 6);

    CHECK_THROWS_AS(harness::parse_kv_config("just words\n"), ConfigError);
    CHECK_THROWS_AS(harness::parse_kv_config("=5\n"), ConfigError);
    CHECK_THROWS_AS(harness::apply_kv_config(cfg, {{"bogus.key", "1"}}), ConfigError);
    CHECK_THROWS_AS(harness::apply_kv_config(cfg, {{"optim.epochs", "many"}}), ConfigError);
    CHECK_THROWS_AS(harness::apply_kv_config(cfg, {{"seed", "-4"}}), ConfigError);

    harness::ExperimentConfig plan;
    plan.models = {"U1", "bogus"};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan.models = {"U1", "U1"};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan.models = {};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan.models = {"U1"};
    plan.scenarios = {"original", "zip-bomb"};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan.scenarios = {"original", "original"};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan.scenarios = {"original"};
    plan.test_fraction = 0.0;
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    CHECK_NOTHROW(harness::ExperimentConfig{}.validate());
}

TEST_CASE("a reduced experiment plan runs deterministically end to end") {
    harness::ExperimentConfig cfg;
    cfg.synth = small_cfg(21);
    cfg.synth.n_benign = 24;
    cfg.synth.n_malware = 36;
    cfg.pipeline = small_pipe();
    cfg.models = {"U1", "M5"};
    cfg.scenarios = {"original", "adversarial"};
    cfg.test_fraction = 0.2;
    cfg.optim.epochs = 6;
    cfg.attack.epochs = 12;
    cfg.attack.batch_size = 16;
    cfg.attack_max_flips = 6;
    cfg.seed = 21;

    const harness::ExperimentReport rep = harness::run_experiment(cfg);
    REQUIRE(rep.rows.size() == 4);
    CHECK(rep.rows[0].scenario == "original");
    CHECK(rep.rows[0].modality == "U1");
    CHECK(rep.rows[1].scenario == "original");
    CHECK(rep.rows[1].modality == "M5");
    CHECK(rep.rows[2].scenario == "adversarial");
    CHECK(rep.rows[2].modality == "U1");
    CHECK(rep.rows[3].scenario == "adversarial");
    CHECK(rep.rows[3].modality == "M5");

    for (const harness::MetricsReport& r : rep.rows) {
        CHECK(r.total() == 12);
        CHECK(r.accuracy >= 0.0);
        CHECK(r.accuracy <= 1.0);
        CHECK(std::abs(r.accuracy -
                       static_cast<double>(r.tp + r.tn) / static_cast<double>(r.total())) <
              1e-12);
        if (r.precision + r.recall > 0.0) {
            CHECK(std::abs(r.f1 - 2.0 * r.precision * r.recall / (r.precision + r.recall)) <
                  1e-12);
        }
    }

    CHECK(has_timing(rep.timings, "pipeline", "fit"));
    CHECK(has_timing(rep.timings, "U1", "train"));
    CHECK(has_timing(rep.timings, "M5", "train"));
    CHECK(has_timing(rep.timings, "attack", "train"));
    CHECK(has_timing(rep.timings, "U1", "eval"));
    CHECK(has_timing(rep.timings, "M5", "eval"));

    const harness::ExperimentReport again = harness::run_experiment(cfg);
    REQUIRE(again.rows.size() == rep.rows.size());
    for (std::size_t i = 0; i < rep.rows.size(); ++i)
        CHECK(same_metrics(again.rows[i], rep.rows[i]));
    CHECK(again.timings.size() == rep.timings.size());

    const std::string dir = temp_path("harness_report");
    fs::remove_all(dir);
    harness::save_experiment(dir, rep);
    const auto metrics_back = harness::metrics_from_csv(read_text_file(dir + "/metrics.csv"));
    REQUIRE(metrics_back.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(metrics_back[i].scenario == rep.rows[i].scenario);
        CHECK(metrics_back[i].f1 == rep.rows[i].f1);
    }
    CHECK(harness::timings_from_csv(read_text_file(dir + "/timing.csv")).size() ==
          rep.timings.size());
}
