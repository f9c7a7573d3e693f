#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dmldroid/deximg.hpp"
#include "dmldroid/harness.hpp"

using namespace dmldroid;
namespace fs = std::filesystem;

namespace {

int guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

harness::ExperimentConfig load_config(const std::string& config_path, const CLI::Option* seed_opt,
                                      std::uint64_t seed) {
    harness::ExperimentConfig cfg;
    if (!config_path.empty())
        harness::apply_kv_config(cfg, harness::parse_kv_config(read_text_file(config_path)));
    if (seed_opt->count() > 0) {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    return cfg;
}

// Either an on-disk corpus in the dump layout (tabular.csv, dex/, graphs/) or
// a synthesized one; the whole corpus comes back as one vector.
std::vector<ApkSample> load_corpus(const std::string& data_dir,
                                   const harness::ExperimentConfig& cfg,
                                   std::vector<std::string>& feature_names) {
    if (!data_dir.empty()) {
        std::vector<harness::IngestSource> sources = {
            {harness::IngestFormat::kTabularCsv, data_dir + "/tabular.csv"}};
        if (fs::is_directory(data_dir + "/dex"))
            sources.push_back({harness::IngestFormat::kDexDir, data_dir + "/dex"});
        if (fs::is_directory(data_dir + "/graphs"))
            sources.push_back({harness::IngestFormat::kGraphEdgeList, data_dir + "/graphs"});
        const harness::IngestReport rep = harness::ingest(sources, 0.0, cfg.seed);
        for (const std::string& w : rep.warnings) std::cerr << "warning: " << w << "\n";
        feature_names = rep.feature_names;
        return rep.train;
    }
    feature_names = harness::tf_feature_names(cfg.synth.tf_features());
    return harness::synth_dataset(cfg.synth);
}

void dump_sample_ppm(const std::string& ppm_dir, const ApkSample& s) {
    const deximg::SectionTriple triple = deximg::merge_multidex({deximg::parse_dex(s.dex)});
    const deximg::SectionImage full = deximg::encode_sections(triple);
    deximg::write_ppm(ppm_dir + "/" + s.id + ".full.ppm", full);
    deximg::write_ppm(ppm_dir + "/" + s.id + ".64.ppm", deximg::resample_area(full, 64));
}

void dump_ppm_batch(const std::string& out_dir, const std::vector<ApkSample>& samples,
                    std::size_t count) {
    if (count == 0) return;
    const std::string ppm_dir = out_dir + "/ppm";
    fs::create_directories(ppm_dir);
    std::size_t done = 0;
    for (const ApkSample& s : samples) {
        if (done == count) break;
        if (!s.has_dex()) continue;
        dump_sample_ppm(ppm_dir, s);
        ++done;
    }
}

std::string hex16(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

void print_metrics(const std::vector<harness::MetricsReport>& rows) {
    std::printf("%-12s %-16s %7s %7s %7s %7s\n", "scenario", "modality", "acc", "pre", "rec",
                "f1");
    for (const harness::MetricsReport& r : rows) {
        std::printf("%-12s %-16s %7.4f %7.4f %7.4f %7.4f\n", r.scenario.c_str(),
                    r.modality.c_str(), r.accuracy, r.precision, r.recall, r.f1);
    }
}

struct Bundle {
    harness::FeaturePipeline pipe;
    std::unique_ptr<nn::ParamStore> store;
    std::unique_ptr<fusion::Detector> model;
    std::string name;
};

Bundle load_bundle(const std::string& dir) {
    Bundle b{harness::FeaturePipeline::load(dir), nullptr, nullptr, ""};
    b.store = std::make_unique<nn::ParamStore>(nn::ParamStore::load(dir + "/model.dmlw"));
    b.model = std::make_unique<fusion::Detector>(fusion::Detector::from_store(*b.store));
    std::string name = read_text_file(dir + "/model.txt");
    while (!name.empty() && (name.back() == '\n' || name.back() == '\r')) name.pop_back();
    b.name = name;
    return b;
}

std::vector<ApkSample> obfuscate_all(const std::vector<ApkSample>& in,
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

int main(int argc, char** argv) {
    CLI::App app{"desk-scale multimodal android malware detection laboratory"};
    app.require_subcommand(1);
    int rc = 0;

    std::string config_path, out_dir, data_dir;
    std::uint64_t seed = 42;
    std::size_t dump_ppm = 0;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    synth->add_option("--config", config_path, "key=value experiment config");
    auto* synth_seed = synth->add_option("--seed", seed, "master seed");
    synth->add_option("--out-dir", out_dir, "corpus output directory")->required();
    synth->add_option("--dump-ppm", dump_ppm, "also write pixmaps for the first N samples");
    synth->callback([&] {
        rc = guarded([&] {
            const harness::ExperimentConfig cfg = load_config(config_path, synth_seed, seed);
            const auto samples = harness::synth_dataset(cfg.synth);
            harness::dump_corpus(out_dir, samples,
                                 harness::tf_feature_names(cfg.synth.tf_features()));
            dump_ppm_batch(out_dir, samples, dump_ppm);
            std::size_t malware = 0;
            for (const ApkSample& s : samples) malware += s.label == 1 ? 1 : 0;
            std::cout << "wrote " << samples.size() << " samples ("
                      << samples.size() - malware << " benign / " << malware << " malware) to "
                      << out_dir << "\n";
            std::cout << "corpus digest " << hex16(harness::dataset_digest(samples)) << "\n";
        });
    });

    // ingest
    std::vector<std::string> tab_paths, dex_dirs, graph_dirs;
    double test_fraction = 0.30;
    auto* ing = app.add_subcommand("ingest", "join multi-format sources into one corpus");
    ing->add_option("--tabular", tab_paths, "labeled feature csv (repeatable)");
    ing->add_option("--dex-dir", dex_dirs, "directory of <id>.dex payloads (repeatable)");
    ing->add_option("--graph-dir", graph_dirs, "directory of <id>.edges files (repeatable)");
    ing->add_option("--test-fraction", test_fraction, "held-out fraction (default 0.30)");
    auto* ing_seed = ing->add_option("--seed", seed, "split seed");
    ing->add_option("--out-dir", out_dir, "dump the joined corpus here");
    ing->callback([&] {
        rc = guarded([&] {
            std::vector<harness::IngestSource> sources;
            for (const std::string& p : tab_paths)
                sources.push_back({harness::IngestFormat::kTabularCsv, p});
            for (const std::string& p : dex_dirs)
                sources.push_back({harness::IngestFormat::kDexDir, p});
            for (const std::string& p : graph_dirs)
                sources.push_back({harness::IngestFormat::kGraphEdgeList, p});
            const std::uint64_t s = ing_seed->count() > 0 ? seed : 0;
            const harness::IngestReport rep = harness::ingest(sources, test_fraction, s);
            for (const std::string& w : rep.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << "joined " << rep.total() << " samples: " << rep.train.size()
                      << " train / " << rep.test.size() << " test\n";
            if (!rep.missing_modality.empty()) {
                std::cout << rep.missing_modality.size() << " with a missing modality:";
                for (const std::string& id : rep.missing_modality) std::cout << " " << id;
                std::cout << "\n";
            }
            if (!rep.unjoinable.empty()) {
                std::cout << rep.unjoinable.size() << " unjoinable payloads:";
                for (const std::string& id : rep.unjoinable) std::cout << " " << id;
                std::cout << "\n";
            }
            if (!out_dir.empty() && rep.total() > 0) {
                std::vector<ApkSample> combined = rep.train;
                combined.insert(combined.end(), rep.test.begin(), rep.test.end());
                std::sort(combined.begin(), combined.end(),
                          [](const ApkSample& a, const ApkSample& b) { return a.id < b.id; });
                harness::dump_corpus(out_dir, combined, rep.feature_names);
                std::cout << "dumped the joined corpus to " << out_dir << "\n";
            }
        });
    });

    // train
    std::string model_name = "M5";
    auto* train = app.add_subcommand("train", "fit the feature pipeline and one detector");
    train->add_option("--model", model_name, "U1|U2|U3|M1..M5|U1+U2-<strategy> (default M5)");
    train->add_option("--config", config_path, "key=value experiment config");
    train->add_option("--data-dir", data_dir, "corpus directory (default: synthesize)");
    auto* train_seed = train->add_option("--seed", seed, "master seed");
    train->add_option("--out-dir", out_dir, "bundle output directory")->required();
    train->callback([&] {
        rc = guarded([&] {
            const harness::ExperimentConfig cfg = load_config(config_path, train_seed, seed);
            if (!harness::is_known_model(model_name))
                throw ConfigError("unknown model name: " + model_name);
            std::vector<std::string> names;
            const auto corpus = load_corpus(data_dir, cfg, names);
            if (corpus.empty()) throw DataError("no training samples");
            const auto pipe = harness::FeaturePipeline::fit(corpus, names, cfg.pipeline,
                                                            derive_seed(cfg.seed, "pipeline"));
            const fusion::DetectorData data = pipe.transform(corpus);
            nn::ParamStore store;
            Rng init(derive_seed(cfg.seed, "init-" + model_name));
            fusion::Detector det(harness::model_config(model_name, pipe), store, init);
            fusion::train_detector(det, data, nullptr, cfg.optim,
                                   derive_seed(cfg.seed, "train-" + model_name));
            pipe.save(out_dir);
            store.save(out_dir + "/model.dmlw");
            write_text_file(out_dir + "/model.txt", model_name + "\n");
            const double acc = fusion::accuracy(det.logits(data), data.labels);
            std::cout << "trained " << model_name << " on " << corpus.size()
                      << " samples; train accuracy " << format_double(acc) << "\n";
            std::cout << "bundle saved to " << out_dir << "\n";
        });
    });

    // eval
    std::string bundle_dir, scenario = "original";
    auto* eval = app.add_subcommand("eval", "score a trained bundle on a corpus");
    eval->add_option("--bundle", bundle_dir, "trained bundle directory")->required();
    eval->add_option("--scenario", scenario, "original|rn|co|enc|mixed (default original)");
    eval->add_option("--config", config_path, "key=value experiment config");
    eval->add_option("--data-dir", data_dir, "corpus directory (default: synthesize)");
    auto* eval_seed = eval->add_option("--seed", seed, "master seed");
    eval->add_option("--out-dir", out_dir, "write metrics.csv here");
    eval->callback([&] {
        rc = guarded([&] {
            const harness::ExperimentConfig cfg = load_config(config_path, eval_seed, seed);
            const Bundle bundle = load_bundle(bundle_dir);
            std::vector<std::string> names;
            std::vector<ApkSample> corpus = load_corpus(data_dir, cfg, names);
            if (scenario != "original") {
                const auto mode = robustness::parse_obfuscation_mode(scenario);
                corpus = obfuscate_all(corpus, mode, cfg.obf, cfg.seed, "obf-" + scenario);
            }
            const harness::MetricsReport r = harness::evaluate(
                *bundle.model, bundle.pipe.transform(corpus), scenario, bundle.name);
            print_metrics({r});
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                write_text_file(out_dir + "/metrics.csv", harness::metrics_to_csv({r}));
            }
        });
    });

    // obfuscate
    std::string mode_name;
    robustness::ObfuscationSpec obf;
    auto* obfc = app.add_subcommand("obfuscate", "rewrite dex/graph payloads");
    obfc->add_option("--mode", mode_name, "rn|co|enc|mixed")->required();
    auto* obf_seed = obfc->add_option("--seed", seed, "master seed");
    obfc->add_option("--junk-ratio", obf.junk_ratio, "junk bytes per data byte (default 0.10)");
    obfc->add_option("--indir-ratio", obf.indirection_ratio,
                     "fraction of edges wrapped (default 0.20)");
    obfc->add_option("--enc-ratio", obf.enc_ratio,
                     "trailing data fraction encrypted (default 0.50)");
    obfc->add_option("--dex-dir", dex_dirs, "directory of <id>.dex payloads (repeatable)");
    obfc->add_option("--graph-dir", graph_dirs, "directory of <id>.edges files (repeatable)");
    obfc->add_option("--out-dir", out_dir, "rewritten payload directory")->required();
    obfc->add_option("--dump-ppm", dump_ppm, "write pixmaps for the first N rewritten samples");
    obfc->callback([&] {
        rc = guarded([&] {
            if (dex_dirs.empty() && graph_dirs.empty())
                throw ConfigError("obfuscate needs --dex-dir or --graph-dir input");
            std::vector<harness::IngestSource> sources;
            for (const std::string& p : dex_dirs)
                sources.push_back({harness::IngestFormat::kDexDir, p});
            for (const std::string& p : graph_dirs)
                sources.push_back({harness::IngestFormat::kGraphEdgeList, p});
            // No tabular anchor: every payload lands in the unjoinable list, so
            // rebuild samples directly from the payload maps via a dump+re-read
            // would be wasteful; read the directories here instead.
            std::map<std::string, ApkSample> samples;
            for (const std::string& dir : dex_dirs) {
                if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
                for (const auto& entry : fs::directory_iterator(dir)) {
                    if (!entry.is_regular_file() || entry.path().extension() != ".dex") continue;
                    ApkSample& s = samples[entry.path().stem().string()];
                    s.id = entry.path().stem().string();
                    s.dex = read_file(entry.path().string());
                }
            }
            for (const std::string& dir : graph_dirs) {
                if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
                for (const auto& entry : fs::directory_iterator(dir)) {
                    if (!entry.is_regular_file() || entry.path().extension() != ".edges")
                        continue;
                    ApkSample& s = samples[entry.path().stem().string()];
                    s.id = entry.path().stem().string();
                    s.graph = callgraph::load_edge_list(entry.path().string());
                }
            }
            if (samples.empty()) throw DataError("no payloads found to obfuscate");
            const auto mode = robustness::parse_obfuscation_mode(mode_name);
            obf.validate();
            const std::uint64_t master = obf_seed->count() > 0 ? seed : 0;
            fs::create_directories(out_dir + "/dex");
            fs::create_directories(out_dir + "/graphs");
            std::vector<ApkSample> rewritten;
            for (const auto& [id, sample] : samples) {
                robustness::ObfuscationSpec spec = obf;
                spec.mode = mode;
                spec.seed = derive_seed(master, id);
                ApkSample r = robustness::obfuscate(sample, spec);
                if (r.has_dex()) write_file(out_dir + "/dex/" + id + ".dex", r.dex);
                if (r.has_graph())
                    callgraph::save_edge_list(out_dir + "/graphs/" + id + ".edges", r.graph);
                rewritten.push_back(std::move(r));
            }
            dump_ppm_batch(out_dir, rewritten, dump_ppm);
            std::cout << "rewrote " << rewritten.size() << " payloads ("
                      << robustness::obfuscation_mode_name(mode) << ") into " << out_dir << "\n";
        });
    });

    // attack
    std::string target_dir;
    double allowed_df = 0.30, protected_df = 0.50;
    std::size_t max_flips = 16, attack_epochs = 50;
    auto* atk = app.add_subcommand("attack", "train a black-box evasion generator");
    atk->add_option("--target", target_dir, "tabular-only model bundle")->required();
    atk->add_option("--allowed-df", allowed_df,
                    "benign document frequency making a bit flippable (default 0.30)");
    atk->add_option("--protected-df", protected_df,
                    "malware document frequency locking a bit (default 0.50)");
    atk->add_option("--max-flips", max_flips, "flip budget per sample (default 16)");
    atk->add_option("--epochs", attack_epochs, "attack training epochs (default 50)");
    atk->add_option("--config", config_path, "key=value experiment config");
    atk->add_option("--data-dir", data_dir, "corpus directory (default: synthesize)");
    auto* atk_seed = atk->add_option("--seed", seed, "master seed");
    atk->add_option("--out-dir", out_dir, "write ae.csv and attack_log.csv here")->required();
    atk->callback([&] {
        rc = guarded([&] {
            harness::ExperimentConfig cfg = load_config(config_path, atk_seed, seed);
            const Bundle bundle = load_bundle(target_dir);
            if (bundle.model->config().use_if || bundle.model->config().use_gsf)
                throw ConfigError("the attack expects a tabular-only target; " + bundle.name +
                                  " uses other modalities");
            std::vector<std::string> names;
            const auto corpus = load_corpus(data_dir, cfg, names);
            if (corpus.empty()) throw DataError("no samples to attack");
            const tabular::BinaryFeatureMatrix bits = bundle.pipe.raw_bits(corpus);
            std::vector<int> labels(corpus.size());
            for (std::size_t i = 0; i < corpus.size(); ++i) labels[i] = corpus[i].label;
            robustness::AttackBudget budget = robustness::derive_budget(
                bits, labels, allowed_df, protected_df, cfg.attack_protected_benign_df);
            budget.max_flips = max_flips;
            const fusion::Detector* target = bundle.model.get();
            const harness::FeaturePipeline* pipe = &bundle.pipe;
            const robustness::BlackBox box = [pipe, target](const nn::Matrix& rows) {
                fusion::DetectorData d;
                d.tf = pipe->transform_tf_bits(rows);
                const std::vector<double> lg = target->logits(d);
                std::vector<int> y(lg.size());
                for (std::size_t i = 0; i < lg.size(); ++i) y[i] = lg[i] > 0.0 ? 1 : 0;
                return y;
            };
            std::size_t n_mal = 0;
            for (int lab : labels) n_mal += lab == 1 ? 1 : 0;
            if (n_mal == 0) throw DataError("the corpus holds no malware to perturb");
            nn::Matrix malware_tf(n_mal, bits.features());
            nn::Matrix benign_tf(corpus.size() - n_mal, bits.features());
            std::size_t mr = 0, br = 0;
            for (std::size_t i = 0; i < corpus.size(); ++i) {
                if (labels[i] == 1)
                    malware_tf.set_row(mr++, bits.bits.row(i));
                else
                    benign_tf.set_row(br++, bits.bits.row(i));
            }
            robustness::AttackHyper hyper = cfg.attack;
            hyper.epochs = attack_epochs;
            const robustness::AdversarialGenerator gen = robustness::train_adversarial_generator(
                box, malware_tf, benign_tf, budget, hyper, derive_seed(cfg.seed, "attack"));

            robustness::AeCorpus ae;
            ae.bits.feature_names = names;
            ae.bits.bits = nn::Matrix(n_mal, bits.features());
            std::size_t row = 0;
            for (const ApkSample& s : corpus) {
                if (s.label != 1) continue;
                ae.bits.sample_ids.push_back("ae." + s.id);
                ae.bits.bits.set_row(
                    row++, robustness::perturb_sample(gen, s, derive_seed(cfg.seed, "ae-" + s.id)));
                ae.labels.push_back(1);
                ae.origin_ids.push_back(s.id);
            }
            fs::create_directories(out_dir);
            robustness::save_ae_csv(out_dir + "/ae.csv", ae);
            std::string log_csv = "epoch,generator_loss,substitute_accuracy,evasion_rate\n";
            for (const auto& e : gen.log().epochs) {
                log_csv += std::to_string(e.epoch) + "," + format_double(e.generator_loss) + "," +
                           format_double(e.substitute_accuracy) + "," +
                           format_double(e.evasion_rate) + "\n";
            }
            write_text_file(out_dir + "/attack_log.csv", log_csv);
            const auto& best = gen.log().epochs[gen.log().best_epoch - 1];
            std::cout << "attacked " << bundle.name << ": best epoch " << best.epoch
                      << ", evasion rate " << format_double(best.evasion_rate) << " over "
                      << n_mal << " malware samples\n";
            std::cout << "wrote " << out_dir << "/ae.csv and attack_log.csv\n";
        });
    });

    // report
    auto* rep = app.add_subcommand("report", "run the full experiment plan");
    rep->add_option("--config", config_path, "key=value experiment config");
    auto* rep_seed = rep->add_option("--seed", seed, "master seed");
    rep->add_option("--out-dir", out_dir, "write metrics.csv and timing.csv here")->required();
    rep->callback([&] {
        rc = guarded([&] {
            const harness::ExperimentConfig cfg = load_config(config_path, rep_seed, seed);
            const harness::ExperimentReport report = harness::run_experiment(cfg);
            harness::save_experiment(out_dir, report);
            print_metrics(report.rows);
            double total = 0.0;
            for (const harness::TimingRow& t : report.timings) total += t.seconds;
            std::printf("total tracked time %.1fs; tables in %s\n", total, out_dir.c_str());
        });
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    return rc;
}
