#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "dmldroid/deximg.hpp"
#include "dmldroid/fusion.hpp"
#include "dmldroid/robustness.hpp"

using namespace dmldroid;
using namespace dmldroid::robustness;
using nn::Matrix;

namespace {

std::string temp_path(const char* name) {
    return std::string("/tmp/dmldroid_test_") + name;
}

Bytes patterned_bytes(std::size_t n, std::uint8_t start) {
    Bytes b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>(start + i % 7);
    return b;
}

ApkSample dex_sample(std::size_t ids_len = 64, std::size_t data_len = 400) {
    ApkSample s;
    s.id = "fixture";
    s.label = 1;
    s.tf = {1.0, 0.0, 1.0, 1.0};
    s.dex = deximg::build_dex(patterned_bytes(ids_len, 3), patterned_bytes(data_len, 90));
    return s;
}

callgraph::CallGraph chain_graph() {
    callgraph::CallGraph g;
    g.add_edge("api.a", "api.b");
    g.add_edge("api.b", "api.c");
    g.add_edge("api.c", "api.d");
    g.add_edge("api.a", "api.c");
    g.add_edge("api.d", "api.a");
    return g;
}

bool is_subsequence(const Bytes& needle, const Bytes& hay) {
    std::size_t i = 0;
    for (std::uint8_t b : hay) {
        if (i < needle.size() && needle[i] == b) ++i;
    }
    return i == needle.size();
}

// Either the edge survived or it was rerouted through one fresh hop.
bool reachable_in_two(const callgraph::CallGraph& g, std::size_t u, std::size_t v) {
    if (g.has_edge(u, v)) return true;
    for (std::size_t w : g.out(u)) {
        if (g.has_edge(w, v)) return true;
    }
    return false;
}

ObfuscationSpec spec_of(ObfuscationMode mode, std::uint64_t seed = 7) {
    ObfuscationSpec s;
    s.mode = mode;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("obfuscation modes parse and print") {
    for (ObfuscationMode m : {ObfuscationMode::kRn, ObfuscationMode::kCo, ObfuscationMode::kEnc,
                              ObfuscationMode::kMixed}) {
        CHECK(parse_obfuscation_mode(obfuscation_mode_name(m)) == m);
    }
    CHECK_THROWS_AS(parse_obfuscation_mode("reflect"), ConfigError);
    ObfuscationSpec bad;
    bad.junk_ratio = 1.2;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ObfuscationSpec{};
    bad.enc_ratio = -0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("rn rewrites only the ids payload with printable bytes") {
    const ApkSample in = dex_sample();
    const ApkSample out = obfuscate(in, spec_of(ObfuscationMode::kRn));

    CHECK(out.id == in.id);
    CHECK(out.label == in.label);
    CHECK(out.tf == in.tf);

    const auto before = deximg::parse_dex(in.dex);
    const auto after = deximg::parse_dex(out.dex);
    CHECK(after.header == before.header);
    CHECK(after.data == before.data);
    REQUIRE(after.ids.size() == before.ids.size());
    CHECK(after.ids != before.ids);
    for (std::uint8_t b : after.ids) {
        CHECK(b >= 0x20);
        CHECK(b <= 0x7e);
    }

    // The R channel carries the untouched header bytes.
    const auto img_before = deximg::encode_sections(deximg::merge_multidex({before}));
    const auto img_after = deximg::encode_sections(deximg::merge_multidex({after}));
    CHECK(img_after.red == img_before.red);
    CHECK(img_after.green != img_before.green);

    CHECK(obfuscate(in, spec_of(ObfuscationMode::kRn)).dex == out.dex);
    CHECK(obfuscate(in, spec_of(ObfuscationMode::kRn, 8)).dex != out.dex);
}

TEST_CASE("co grows the data section by the junk ratio and keeps the original as a subsequence") {
    ApkSample in = dex_sample(64, 400);
    in.graph = chain_graph();
    ObfuscationSpec spec = spec_of(ObfuscationMode::kCo);
    spec.junk_ratio = 0.25;
    spec.indirection_ratio = 0.0;
    const ApkSample out = obfuscate(in, spec);

    const auto before = deximg::parse_dex(in.dex);
    const auto after = deximg::parse_dex(out.dex);
    CHECK(after.ids == before.ids);
    CHECK(after.data.size() == before.data.size() + 100);
    CHECK(is_subsequence(before.data, after.data));
    CHECK(after.file_size == out.dex.size());

    ObfuscationSpec zero = spec_of(ObfuscationMode::kCo);
    zero.junk_ratio = 0.0;
    zero.indirection_ratio = 0.0;
    CHECK(obfuscate(in, zero).dex == in.dex);
}

TEST_CASE("co wraps the requested fraction of edges through fresh nodes") {
    ApkSample in;
    in.id = "graph-only";
    in.label = 0;
    in.graph = chain_graph();
    ObfuscationSpec spec = spec_of(ObfuscationMode::kCo);
    spec.indirection_ratio = 0.6;  // 3 of 5 edges
    const ApkSample out = obfuscate(in, spec);

    CHECK(out.graph.node_count() == in.graph.node_count() + 3);
    CHECK(out.graph.edge_count() == in.graph.edge_count() + 3);
    std::size_t wrapped = 0;
    for (const auto& [u, v] : in.graph.edges()) {
        CHECK(reachable_in_two(out.graph, u, v));
        if (!out.graph.has_edge(u, v)) ++wrapped;
    }
    CHECK(wrapped == 3);
    for (std::size_t id = in.graph.node_count(); id < out.graph.node_count(); ++id)
        CHECK(out.graph.name(id).rfind("obf.i", 0) == 0);

    ObfuscationSpec all = spec_of(ObfuscationMode::kCo);
    all.indirection_ratio = 1.0;
    const ApkSample everything = obfuscate(in, all);
    for (const auto& [u, v] : in.graph.edges()) {
        CHECK_FALSE(everything.graph.has_edge(u, v));
        CHECK(reachable_in_two(everything.graph, u, v));
    }
}

TEST_CASE("enc overwrites exactly the trailing fraction of the data section") {
    const ApkSample in = dex_sample(64, 400);
    ObfuscationSpec spec = spec_of(ObfuscationMode::kEnc);
    spec.enc_ratio = 0.5;
    const ApkSample out = obfuscate(in, spec);

    const auto before = deximg::parse_dex(in.dex);
    const auto after = deximg::parse_dex(out.dex);
    CHECK(after.header == before.header);
    CHECK(after.ids == before.ids);
    REQUIRE(after.data.size() == before.data.size());
    CHECK(std::equal(before.data.begin(), before.data.begin() + 200, after.data.begin()));
    CHECK_FALSE(std::equal(before.data.begin() + 200, before.data.end(),
                           after.data.begin() + 200));

    ObfuscationSpec zero = spec_of(ObfuscationMode::kEnc);
    zero.enc_ratio = 0.0;
    CHECK(obfuscate(in, zero).dex == in.dex);
}

TEST_CASE("enc at full ratio pushes a 64 KiB data section above 7.9 bits per byte") {
    ApkSample big;
    big.label = 1;
    big.dex = deximg::build_dex(patterned_bytes(64, 3), Bytes(64 * 1024, 0x41));
    ObfuscationSpec spec = spec_of(ObfuscationMode::kEnc);
    spec.enc_ratio = 1.0;
    const auto layout = deximg::parse_dex(obfuscate(big, spec).dex);
    CHECK(shannon_entropy(deximg::parse_dex(big.dex).data) == 0.0);
    CHECK(shannon_entropy(layout.data) >= 7.9);
}

TEST_CASE("mixed equals rn, then co, then enc under one seed") {
    ApkSample in = dex_sample(64, 640);
    in.graph = chain_graph();
    ObfuscationSpec spec = spec_of(ObfuscationMode::kMixed, 99);

    ObfuscationSpec rn = spec;
    rn.mode = ObfuscationMode::kRn;
    ObfuscationSpec co = spec;
    co.mode = ObfuscationMode::kCo;
    ObfuscationSpec enc = spec;
    enc.mode = ObfuscationMode::kEnc;

    const ApkSample mixed = obfuscate(in, spec);
    const ApkSample staged = obfuscate(obfuscate(obfuscate(in, rn), co), enc);
    CHECK(mixed.dex == staged.dex);
    CHECK(callgraph::to_edge_list(mixed.graph) == callgraph::to_edge_list(staged.graph));
    CHECK(mixed.tf == in.tf);
}

TEST_CASE("obfuscation modes demand their modalities") {
    ApkSample bare;
    bare.tf = {1.0};
    CHECK_THROWS_AS(obfuscate(bare, spec_of(ObfuscationMode::kRn)), DataError);
    CHECK_THROWS_AS(obfuscate(bare, spec_of(ObfuscationMode::kEnc)), DataError);
    CHECK_THROWS_AS(obfuscate(bare, spec_of(ObfuscationMode::kMixed)), DataError);
    CHECK_THROWS_AS(obfuscate(bare, spec_of(ObfuscationMode::kCo)), DataError);
    ApkSample graph_only;
    graph_only.graph = chain_graph();
    CHECK_NOTHROW(obfuscate(graph_only, spec_of(ObfuscationMode::kCo)));
    CHECK_THROWS_AS(obfuscate(graph_only, spec_of(ObfuscationMode::kMixed)), DataError);
}

TEST_CASE("shannon entropy reference points") {
    CHECK(shannon_entropy({}) == 0.0);
    CHECK(shannon_entropy(Bytes(512, 0x7f)) == 0.0);
    Bytes uniform(256);
    for (std::size_t i = 0; i < 256; ++i) uniform[i] = static_cast<std::uint8_t>(i);
    CHECK(shannon_entropy(uniform) == doctest::Approx(8.0).epsilon(1e-12));
    Bytes half(256);
    for (std::size_t i = 0; i < 256; ++i) half[i] = static_cast<std::uint8_t>(i % 2);
    CHECK(shannon_entropy(half) == doctest::Approx(1.0).epsilon(1e-12));
}

namespace {

tabular::BinaryFeatureMatrix budget_fixture() {
    tabular::BinaryFeatureMatrix m;
    m.feature_names = {"f0", "f1", "f2", "f3", "f4"};
    m.sample_ids = {"b0", "b1", "b2", "b3", "m0", "m1", "m2", "m3"};
    m.bits = Matrix(8, 5);
    auto set_col = [&](std::size_t col, std::initializer_list<int> rows) {
        for (int r : rows) m.bits(static_cast<std::size_t>(r), col) = 1.0;
    };
    set_col(0, {0, 1, 2, 3});        // benign df 1.0, malware 0.0
    set_col(1, {0, 1, 4, 5});        // benign df 0.5, malware 0.5
    set_col(2, {4, 5, 6, 7});        // benign df 0.0, malware 1.0
    set_col(3, {0, 4});              // benign df 0.25, malware 0.25
    set_col(4, {4});                 // benign df 0.0, malware 0.25
    return m;
}

}  // namespace

TEST_CASE("budget derivation applies the document-frequency thresholds") {
    const auto m = budget_fixture();
    const std::vector<int> labels = {0, 0, 0, 0, 1, 1, 1, 1};
    const AttackBudget b = derive_budget(m, labels);
    CHECK(b.allowed == std::vector<std::size_t>{0, 1});
    CHECK(b.protected_bits == std::vector<std::size_t>{2});
    CHECK_NOTHROW(b.validate());

    // With a zero allowed threshold every bit qualifies; protected wins the tie.
    const AttackBudget loose = derive_budget(m, labels, 0.0);
    CHECK(loose.allowed == std::vector<std::size_t>{0, 1, 3, 4});
    CHECK(loose.protected_bits == std::vector<std::size_t>{2});

    CHECK_THROWS_AS(derive_budget(m, std::vector<int>(8, 1)), DataError);
    CHECK_THROWS_AS(derive_budget(m, {0, 1}), DimensionError);
}

TEST_CASE("budget validation rejects overlap, disorder and zero noise") {
    AttackBudget b;
    b.allowed = {1, 3, 5};
    b.protected_bits = {0, 2};
    CHECK_NOTHROW(b.validate());
    b.protected_bits = {0, 3};
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b.protected_bits = {2, 2};
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b.protected_bits = {};
    b.allowed = {5, 3};
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b.allowed = {1};
    b.noise_dim = 0;
    CHECK_THROWS_AS(b.validate(), ConfigError);
}

namespace {

AttackBudget small_budget(std::size_t max_flips = 3) {
    AttackBudget b;
    b.allowed = {1, 2, 4, 5, 6};
    b.protected_bits = {0, 3};
    b.max_flips = max_flips;
    b.noise_dim = 4;
    return b;
}

std::vector<double> random_bits(std::size_t n, Rng& rng, double p = 0.4) {
    std::vector<double> bits(n);
    for (double& b : bits) b = rng.bernoulli(p) ? 1.0 : 0.0;
    return bits;
}

}  // namespace

TEST_CASE("generator construction validates its budget") {
    AttackBudget empty;
    empty.allowed = {};
    CHECK_THROWS_AS(AdversarialGenerator(8, empty, 1), ConfigError);
    AttackBudget oob = small_budget();
    oob.allowed.push_back(9);
    CHECK_THROWS_AS(AdversarialGenerator(8, oob, 1), ConfigError);
    CHECK_THROWS_AS(AdversarialGenerator(0, small_budget(), 1), ConfigError);
    CHECK_NOTHROW(AdversarialGenerator(8, small_budget(), 1));
}

TEST_CASE("perturbation respects the budget on every sample") {
    const AdversarialGenerator gen(8, small_budget(3), 11);
    const AttackBudget& b = gen.budget();
    Rng rng(2024);
    const std::set<std::size_t> allowed(b.allowed.begin(), b.allowed.end());
    for (std::size_t trial = 0; trial < 200; ++trial) {
        const auto bits = random_bits(8, rng);
        const auto out = gen.perturb(bits, trial);
        REQUIRE(out.size() == bits.size());
        std::size_t flips = 0;
        for (std::size_t i = 0; i < bits.size(); ++i) {
            if (out[i] == bits[i]) continue;
            ++flips;
            CHECK(allowed.count(i) == 1);
        }
        CHECK(flips <= b.max_flips);
        for (std::size_t p : b.protected_bits) CHECK(out[p] == bits[p]);
    }
}

TEST_CASE("perturbation is seed-deterministic and capped at zero flips") {
    const AdversarialGenerator gen(8, small_budget(3), 11);
    Rng rng(5);
    const auto bits = random_bits(8, rng);
    CHECK(gen.perturb(bits, 42) == gen.perturb(bits, 42));

    Matrix x(1, 8);
    for (std::size_t c = 0; c < 8; ++c) x(0, c) = bits[c];
    Rng n1(derive_seed(42, "ae-noise"));
    Rng n2(derive_seed(43, "ae-noise"));
    Matrix z1(1, 4), z2(1, 4);
    for (double& v : z1.raw()) v = n1.normal();
    for (double& v : z2.raw()) v = n2.normal();
    const Matrix p1 = gen.flip_probabilities(x, z1);
    const Matrix p2 = gen.flip_probabilities(x, z2);
    CHECK(p1.raw() != p2.raw());
    REQUIRE(p1.rows() == 1);
    REQUIRE(p1.cols() == gen.budget().allowed.size());
    for (double p : p1.raw()) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }

    const AdversarialGenerator frozen(8, small_budget(0), 11);
    for (std::size_t trial = 0; trial < 20; ++trial) {
        const auto same = random_bits(8, rng);
        CHECK(frozen.perturb(same, trial) == same);
    }
}

TEST_CASE("perturb_sample guards the malware precondition") {
    const AdversarialGenerator gen(8, small_budget(), 11);
    ApkSample mal;
    mal.label = 1;
    Rng rng(6);
    mal.tf = random_bits(8, rng);
    CHECK(perturb_sample(gen, mal, 3) == gen.perturb(mal.tf, 3));
    ApkSample ben = mal;
    ben.label = 0;
    CHECK_THROWS_AS(perturb_sample(gen, ben, 3), UsageError);
    mal.tf.pop_back();
    CHECK_THROWS_AS(perturb_sample(gen, mal, 3), DimensionError);
}

namespace {

// Linear rule: malware iff at least two net malware markers. Bits 0..2 are
// malware markers (bit 0 protected), bits 3..4 benign markers.
BlackBox linear_blackbox() {
    return [](const Matrix& rows) {
        std::vector<int> y(rows.rows());
        for (std::size_t r = 0; r < rows.rows(); ++r) {
            const double score =
                rows(r, 0) + rows(r, 1) + rows(r, 2) - rows(r, 3) - rows(r, 4);
            y[r] = score >= 2.0 ? 1 : 0;
        }
        return y;
    };
}

Matrix class_bits(std::size_t n, std::size_t d, bool malware, Rng& rng) {
    Matrix m(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            double p = 0.3;
            if (c <= 2) p = malware ? 0.92 : 0.08;
            if (c == 3 || c == 4) p = malware ? 0.08 : 0.9;
            m(r, c) = rng.bernoulli(p) ? 1.0 : 0.0;
        }
    }
    return m;
}

AttackBudget linear_budget() {
    AttackBudget b;
    b.allowed = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    b.protected_bits = {0};
    b.max_flips = 4;
    b.noise_dim = 8;
    return b;
}

}  // namespace

TEST_CASE("alternating training evades a linear black box and fits the substitute") {
    Rng rng(20240825);
    const Matrix malware = class_bits(120, 10, true, rng);
    const Matrix benign = class_bits(120, 10, false, rng);
    const BlackBox box = linear_blackbox();

    AttackHyper hyper;
    hyper.epochs = 30;
    hyper.hidden = 32;
    const AdversarialGenerator gen =
        train_adversarial_generator(box, malware, benign, linear_budget(), hyper, 5);

    REQUIRE(gen.log().epochs.size() == 30);
    REQUIRE(gen.log().best_epoch >= 1);
    const auto& best = gen.log().epochs[gen.log().best_epoch - 1];
    CHECK(best.evasion_rate >= 0.8);

    // The kept generator still evades with fresh per-sample noise.
    std::size_t evaded = 0;
    std::vector<int> labels_before = box(malware);
    for (std::size_t r = 0; r < malware.rows(); ++r) {
        const auto ae = gen.perturb(malware.row(r), 1000 + r);
        Matrix one(1, 10);
        one.set_row(0, ae);
        if (box(one)[0] == 0) ++evaded;
    }
    CHECK(static_cast<double>(evaded) / malware.rows() >= 0.75);

    // Substitute agreement with the black box on held-out rows.
    Rng hrng(77);
    Matrix held(80, 10);
    for (std::size_t r = 0; r < 40; ++r) held.set_row(r, class_bits(1, 10, true, hrng).row(0));
    for (std::size_t r = 40; r < 80; ++r) held.set_row(r, class_bits(1, 10, false, hrng).row(0));
    const auto truth = box(held);
    const auto scores = gen.substitute_logits(held);
    std::size_t agree = 0;
    for (std::size_t r = 0; r < 80; ++r)
        agree += (scores[r] > 0.0) == (truth[r] == 1) ? 1 : 0;
    CHECK(static_cast<double>(agree) / 80.0 >= 0.9);

    // Same seed reruns bit-identically.
    const AdversarialGenerator again =
        train_adversarial_generator(box, malware, benign, linear_budget(), hyper, 5);
    REQUIRE(again.log().epochs.size() == gen.log().epochs.size());
    for (std::size_t e = 0; e < 30; ++e) {
        CHECK(again.log().epochs[e].generator_loss == gen.log().epochs[e].generator_loss);
        CHECK(again.log().epochs[e].evasion_rate == gen.log().epochs[e].evasion_rate);
    }
}

TEST_CASE("a zero-flip budget pins evasion at the baseline miss rate") {
    Rng rng(31337);
    const Matrix malware = class_bits(60, 10, true, rng);
    const BlackBox box = linear_blackbox();
    const auto y = box(malware);
    double baseline = 0.0;
    for (int v : y) baseline += v == 0 ? 1.0 : 0.0;
    baseline /= static_cast<double>(malware.rows());

    AttackBudget frozen = linear_budget();
    frozen.max_flips = 0;
    AttackHyper hyper;
    hyper.epochs = 3;
    hyper.hidden = 16;
    const AdversarialGenerator gen =
        train_adversarial_generator(box, malware, Matrix(), frozen, hyper, 9);
    for (const auto& e : gen.log().epochs) CHECK(e.evasion_rate == baseline);

    AttackBudget none = linear_budget();
    none.allowed = {};
    CHECK_THROWS_AS(train_adversarial_generator(box, malware, Matrix(), none, hyper, 9),
                    ConfigError);
    CHECK_THROWS_AS(train_adversarial_generator(box, Matrix(), Matrix(), frozen, hyper, 9),
                    DataError);
}

TEST_CASE("the attack collapses a trained bit-vector detector") {
    Rng rng(424242);
    const std::size_t d = 16;
    auto sample_bits = [&](bool malware) {
        std::vector<double> bits(d);
        for (std::size_t c = 0; c < d; ++c) {
            double p = 0.3;
            if (c <= 1) p = malware ? 0.6 : 0.04;   // protected signals
            if (c == 2 || c == 3) p = malware ? 0.9 : 0.35;  // clearable signals
            if (c >= 4 && c <= 7) p = malware ? 0.1 : 0.9;   // benign markers
            bits[c] = rng.bernoulli(p) ? 1.0 : 0.0;
        }
        return bits;
    };

    fusion::DetectorData train;
    train.tf = Matrix(300, d);
    tabular::BinaryFeatureMatrix feat;
    feat.bits = Matrix(300, d);
    for (std::size_t j = 0; j < d; ++j) feat.feature_names.push_back("bit" + std::to_string(j));
    std::vector<int> int_labels;
    for (std::size_t r = 0; r < 300; ++r) {
        const bool mal = r % 2 == 0;
        const auto bits = sample_bits(mal);
        train.tf.set_row(r, bits);
        feat.bits.set_row(r, bits);
        feat.sample_ids.push_back("s" + std::to_string(r));
        train.labels.push_back(mal ? 1.0 : 0.0);
        int_labels.push_back(mal ? 1 : 0);
    }

    fusion::DetectorConfig cfg;
    cfg.use_if = false;
    cfg.use_gsf = false;
    cfg.tf.input_dim = d;
    cfg.tf.hidden1 = 16;
    cfg.tf.hidden2 = 16;
    cfg.tf.embed_dim = 16;
    cfg.tf.dropout = 0.0;
    nn::ParamStore store;
    Rng mrng(17);
    fusion::Detector detector(cfg, store, mrng);
    nn::OptimHyper opt;
    opt.learning_rate = 3e-3;
    opt.epochs = 30;
    fusion::train_detector(detector, train, nullptr, opt, 13);
    REQUIRE(fusion::accuracy(detector.logits(train), train.labels) >= 0.95);

    const BlackBox box = [&](const Matrix& rows) {
        fusion::DetectorData batch;
        batch.tf = rows;
        const auto lg = detector.logits(batch);
        std::vector<int> y(lg.size());
        for (std::size_t i = 0; i < lg.size(); ++i) y[i] = lg[i] > 0.0 ? 1 : 0;
        return y;
    };

    AttackBudget budget = derive_budget(feat, int_labels);
    budget.max_flips = 8;
    CHECK(std::count(budget.protected_bits.begin(), budget.protected_bits.end(), 0) == 1);
    CHECK(std::count(budget.protected_bits.begin(), budget.protected_bits.end(), 1) == 1);
    for (std::size_t bit : {std::size_t{2}, std::size_t{3}})
        CHECK(std::count(budget.allowed.begin(), budget.allowed.end(), bit) == 1);

    Matrix malware_rows(150, d);
    Matrix benign_rows(150, d);
    std::size_t mr = 0, br = 0;
    for (std::size_t r = 0; r < 300; ++r) {
        if (int_labels[r] == 1)
            malware_rows.set_row(mr++, train.tf.row(r));
        else
            benign_rows.set_row(br++, train.tf.row(r));
    }

    AttackHyper hyper;
    const AdversarialGenerator gen =
        train_adversarial_generator(box, malware_rows, benign_rows, budget, hyper, 21);
    const auto& best = gen.log().epochs[gen.log().best_epoch - 1];
    INFO("best evasion ", best.evasion_rate, " at epoch ", gen.log().best_epoch);
    CHECK(best.evasion_rate >= 0.8);
}

TEST_CASE("AE corpora round-trip through the extended csv schema") {
    AeCorpus corpus;
    corpus.bits.feature_names = {"perm.camera", "perm.sms"};
    corpus.bits.sample_ids = {"a1-ae", "b2-ae"};
    corpus.bits.bits = Matrix(2, 2);
    corpus.bits.bits(0, 0) = 1.0;
    corpus.bits.bits(1, 1) = 1.0;
    corpus.labels = {1, 1};
    corpus.origin_ids = {"a1", "b2"};

    const std::string path = temp_path("ae.csv");
    save_ae_csv(path, corpus);
    const AeCorpus back = load_ae_csv(path);
    CHECK(back.bits.feature_names == corpus.bits.feature_names);
    CHECK(back.bits.sample_ids == corpus.bits.sample_ids);
    CHECK(back.labels == corpus.labels);
    CHECK(back.origin_ids == corpus.origin_ids);
    CHECK(nn::max_abs_diff(back.bits.bits, corpus.bits.bits) == 0.0);

    write_text_file(path, "sha256,perm.camera,label\nx,1,1\n");
    CHECK_THROWS_AS(load_ae_csv(path), DataError);
    write_text_file(path, "sha256,perm.camera,label,origin_id\nx,2,1,y\n");
    CHECK_THROWS_AS(load_ae_csv(path), DataError);

    // Rows land sorted by id regardless of file order.
    write_text_file(path,
                    "sha256,perm.camera,label,origin_id\nzz,1,1,z\naa,0,1,a\n");
    const AeCorpus sorted = load_ae_csv(path);
    CHECK(sorted.bits.sample_ids == std::vector<std::string>{"aa", "zz"});
    CHECK(sorted.origin_ids == std::vector<std::string>{"a", "z"});
}
