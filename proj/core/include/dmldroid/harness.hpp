#ifndef DMLDROID_HARNESS_HPP_
#define DMLDROID_HARNESS_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dmldroid/callgraph.hpp"
#include "dmldroid/common.hpp"
#include "dmldroid/fusion.hpp"
#include "dmldroid/robustness.hpp"
#include "dmldroid/sample.hpp"
#include "dmldroid/seqenc.hpp"
#include "dmldroid/tabular.hpp"

namespace dmldroid::harness {

// Class-conditional generation knobs. Sample randomness is keyed by the
// profile content rather than the class slot, so swapping the two profiles
// (together with the two counts) mirrors every generated payload exactly and
// only the labels and ids change.
struct ClassProfile {
    std::vector<double> tf_p;        // per-bit Bernoulli rates
    Bytes dex_motif;                 // tiled over the leading motif_len data bytes
    std::size_t chain_len = 0;       // api.sens.0 -> api.sens.1 -> ... planted per sample
    double stray_sensitive_p = 0.0;  // independent inclusion of each sensitive api

    bool operator==(const ClassProfile&) const = default;
};

ClassProfile default_benign_profile();
ClassProfile default_malware_profile();

struct SyntheticConfig {
    std::size_t n_benign = 250;
    std::size_t n_malware = 750;
    ClassProfile benign = default_benign_profile();
    ClassProfile malware = default_malware_profile();
    std::size_t ids_len = 128;   // bytes, multiple of 4
    std::size_t data_len = 4096;
    std::size_t motif_len = 1536;
    std::size_t graph_nodes = 40;
    double edge_density = 0.05;
    std::size_t sensitive_pool = 6;
    std::uint64_t seed = 42;

    void validate() const;
    std::size_t tf_features() const { return benign.tf_p.size(); }

    bool operator==(const SyntheticConfig&) const = default;
};

std::vector<std::string> tf_feature_names(std::size_t n);

// Three aligned modalities per sample; deterministic under the config seed.
std::vector<ApkSample> synth_dataset(const SyntheticConfig& cfg);

// Content digest over ids, labels and all three modality payloads.
std::uint64_t dataset_digest(const std::vector<ApkSample>& samples);

// Seeded shuffle split; the two halves are disjoint and cover the input.
std::pair<std::vector<ApkSample>, std::vector<ApkSample>> split_dataset(
    const std::vector<ApkSample>& samples, double test_fraction, std::uint64_t seed);

enum class IngestFormat { kTabularCsv, kDexDir, kGraphEdgeList };

IngestFormat parse_ingest_format(const std::string& name);
std::string ingest_format_name(IngestFormat format);

struct IngestSource {
    IngestFormat format = IngestFormat::kTabularCsv;
    std::string path;
};

struct IngestReport {
    std::vector<ApkSample> train, test;
    std::vector<std::string> feature_names;
    std::vector<std::string> missing_modality;  // labeled ids lacking a provided modality
    std::vector<std::string> unjoinable;        // payload ids that matched no labeled row
    std::vector<std::string> warnings;

    std::size_t total() const { return train.size() + test.size(); }
};

// Joins fragments on sample id. Labels (and the rows that anchor the join)
// come from the tabular sources; dex and graph payloads attach to them.
// Unjoinable payloads and missing modalities are reported, not fatal.
IngestReport ingest(const std::vector<IngestSource>& sources, double test_fraction = 0.30,
                    std::uint64_t seed = 0);

struct PipelineConfig {
    double pca_target = 0.90;
    std::size_t key_api_k = 30;
    double key_api_df_min = 0.05;
    std::size_t image_width = 256;  // byte-row width before area resampling
    std::size_t image_size = 32;    // square side fed to the CNN
    std::size_t max_seq_len = 48;

    void validate() const;

    bool operator==(const PipelineConfig&) const = default;
};

// Everything fitted on the training split that turns raw samples into model
// inputs: the PCA basis for tabular bits, the key-api set and community seed
// for call-graph linearization, and the token vocabulary.
class FeaturePipeline {
public:
    static FeaturePipeline fit(const std::vector<ApkSample>& train,
                               std::vector<std::string> feature_names,
                               const PipelineConfig& cfg, std::uint64_t seed);

    fusion::DetectorData transform(const std::vector<ApkSample>& samples) const;
    nn::Matrix transform_tf_bits(const nn::Matrix& bits) const;  // PCA projection only
    tabular::BinaryFeatureMatrix raw_bits(const std::vector<ApkSample>& samples) const;
    std::vector<std::string> linearize(const callgraph::CallGraph& g) const;

    const PipelineConfig& config() const { return cfg_; }
    const tabular::PcaModel& pca() const { return pca_; }
    const callgraph::KeyApiSet& key_apis() const { return keys_; }
    const seqenc::Vocab& vocab() const { return vocab_; }
    const std::vector<std::string>& feature_names() const { return names_; }

    void save(const std::string& dir) const;
    static FeaturePipeline load(const std::string& dir);

private:
    FeaturePipeline() = default;

    PipelineConfig cfg_;
    std::vector<std::string> names_;
    tabular::PcaModel pca_;
    callgraph::KeyApiSet keys_;
    seqenc::Vocab vocab_;
    std::uint64_t seed_ = 0;
};

struct MetricsReport {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
    std::string scenario = "original";
    std::string modality;

    std::size_t total() const { return tp + tn + fp + fn; }
};

// Malware is the positive class. Precision, recall and F1 are 0 when their
// denominators vanish.
MetricsReport metrics_from_counts(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn,
                                  std::string scenario = "original", std::string modality = "");

MetricsReport evaluate(const fusion::Detector& model, const fusion::DetectorData& test,
                       std::string scenario = "original", std::string modality = "");

// Single-core training defaults for the experiment models.
nn::OptimHyper desk_optim();

struct ExperimentConfig {
    SyntheticConfig synth{};
    PipelineConfig pipeline{};
    std::vector<std::string> models = {"U1", "U2", "U3", "M1", "M2", "M3", "M4", "M5"};
    std::vector<std::string> scenarios = {"original", "rn",    "co",
                                          "enc",      "mixed", "adversarial"};
    double test_fraction = 0.20;
    nn::OptimHyper optim = desk_optim();
    robustness::ObfuscationSpec obf{};   // ratios; mode and seed set per scenario
    robustness::AttackHyper attack{};
    double attack_allowed_df = 0.30;
    double attack_protected_mal_df = 0.50;
    double attack_protected_benign_df = 0.05;
    std::size_t attack_max_flips = 8;
    std::uint64_t seed = 42;

    void validate() const;
};

// Detector layout for an experiment model name: U1 (tabular), U2 (image),
// U3 (sequence), M1..M5 (trimodal with concat, self_attn, cross_attn, gated,
// dwf), or bimodal "U1+U2-<strategy>" forms. Unknown names raise ConfigError.
fusion::DetectorConfig model_config(const std::string& name, const FeaturePipeline& pipe);
bool is_known_model(const std::string& name);

struct TimingRow {
    std::string modality;
    std::string phase;  // fit / train / eval
    double seconds = 0.0;
};

struct ExperimentReport {
    std::vector<MetricsReport> rows;  // scenario-major, model order within
    std::vector<TimingRow> timings;
};

// Trains each named model once on the train split, then evaluates every
// scenario variant of the test split without retraining. The adversarial
// variant perturbs malware tabular bits with a generator trained against the
// tabular-only model as a black box.
ExperimentReport run_experiment(const ExperimentConfig& cfg);
ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::vector<ApkSample>& train,
                                const std::vector<ApkSample>& test,
                                const std::vector<std::string>& feature_names);

std::string metrics_to_csv(const std::vector<MetricsReport>& rows);
std::vector<MetricsReport> metrics_from_csv(const std::string& text);
std::string timings_to_csv(const std::vector<TimingRow>& rows);
std::vector<TimingRow> timings_from_csv(const std::string& text);
void save_experiment(const std::string& out_dir, const ExperimentReport& report);

// Line-oriented key=value text (the CLI --config format). Blank lines and
// #-comments are skipped; a repeated key keeps its last value.
std::map<std::string, std::string> parse_kv_config(const std::string& text);
void apply_kv_config(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv);

// Writes tabular.csv, dex/<id>.dex and graphs/<id>.edges under dir.
void dump_corpus(const std::string& dir, const std::vector<ApkSample>& samples,
                 const std::vector<std::string>& feature_names);

}  // namespace dmldroid::harness

#endif  // DMLDROID_HARNESS_HPP_
