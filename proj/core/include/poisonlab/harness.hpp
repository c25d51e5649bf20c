#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "poisonlab/attack.hpp"
#include "poisonlab/corpus.hpp"
#include "poisonlab/diffusion.hpp"
#include "poisonlab/embedding.hpp"
#include "poisonlab/metrics.hpp"

namespace poisonlab::harness {

struct CorpusSpec {
    int per_concept = 500;  // val split is 10%; the FID reference needs >= 200
    double qualifier_rate = 0.25;
    int variant_pool = 400;
};

struct EncoderSpec {
    int dim = 64;
    float temperature = 0.07f;
    int epochs = 60;
    int batch = 64;
    float lr = 1e-3f;
    float align_weight = 4.0f;
    double gate_accuracy = 0.9;  // zero-shot accuracy on held-out real images
};

struct DiffusionSpec {
    std::string model_size = "small";  // small | base
    int T = 80;
    std::string schedule = "linear";
    int epochs = 80;
    int batch = 16;
    float lr = 1e-3f;
    float cond_dropout = 0.1f;

    int width() const;  // small -> 12, base -> 16
};

struct AttackSpec {
    std::string target_concept = "disc";
    std::string target_pattern = "checker-blob";
    int template_id = 0;
    double beta = 0.9;
    std::vector<int> poison_sizes = {20};
    int ft_epochs = 40;
    std::string profile = "desk";  // fine-tune recipe: desk | paper
    std::string sanitize_concept = "ring";
    int sanitize_size = 1;
};

struct EvalSpec {
    std::vector<std::string> query_concepts = {"disc", "ring", "square", "bar"};
    int n = 100;
    int sim_runs = 2;  // conceptual-similarity repetitions
    int sim_n = 50;    // images per prompt per repetition
    float guidance = 2.5f;
    double base_gate_accuracy = 0.7;  // per-concept zero-shot on generations
};

struct ExperimentConfig {
    CorpusSpec corpus;
    EncoderSpec encoder;
    DiffusionSpec diffusion;
    AttackSpec attack;
    EvalSpec eval;
    std::uint64_t master_seed = 1;
    std::string out_dir = "runs/default";

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    void save(const std::string& path) const;

    // every referenced concept must exist in the built-in vocabulary
    void validate() const;

    // per-stage sub-hashes; each folds in all upstream hashes so a cached
    // stage can never be reused against a changed ancestor
    std::uint64_t corpus_hash() const;
    std::uint64_t encoder_hash() const;
    std::uint64_t diffusion_hash() const;
    std::uint64_t attack_hash(int poison_size, int ft_epochs, std::uint64_t attack_seed,
                              bool with_sanitize = true) const;
    std::uint64_t config_hash() const;
};

// Owns all pipeline state for one config: corpus, encoder, base model,
// fine-tuned checkpoints, and a generation cache so repeated metric calls
// never resample the same (model, prompt, seed) batch.
class ExperimentContext {
public:
    explicit ExperimentContext(ExperimentConfig cfg);

    // corpus -> encoder -> base model, reusing disk-cached stages whose
    // sub-hash matches; throws StageGateError naming the failing stage
    void prepare();

    // individual stages (idempotent; each prepares its upstream stages)
    void prepare_corpus();
    void prepare_encoder();
    void prepare_base();

    const ExperimentConfig& config() const { return cfg_; }
    const corpus::Vocabulary& vocab() const { return vocab_; }
    const std::vector<corpus::PromptTemplate>& templates() const { return templates_; }
    const corpus::Tokenizer& tokenizer() const { return tok_; }
    const corpus::CaptionedCorpus& corpus_data() const;
    const corpus::VariantCorpus& variant_pool() const;
    const embedding::EmbeddingSpace& space() const;
    const diffusion::ModelCheckpoint& base_model() const;
    const ImageSample& targeted_image() const;

    corpus::Prompt targeted_prompt(int template_id = -1,
                                   const std::vector<std::string>& qualifiers = {}) const;
    corpus::Prompt concept_prompt(const corpus::Concept& c) const;

    // fine-tuned checkpoints, disk-cached by attack hash; seed 0 means the
    // stage-derived default
    const diffusion::ModelCheckpoint& poisoned(int poison_size, std::uint64_t attack_seed = 0,
                                               int ft_epochs = -1);
    const diffusion::ModelCheckpoint& sanitized(int poison_size, std::uint64_t attack_seed = 0);
    diffusion::ModelCheckpoint defended(const diffusion::ModelCheckpoint& model,
                                        const std::string& concept_name, int n_pairs,
                                        std::uint64_t seed = 0);
    attack::ShortcutCandidateSet shortcut(int k, int eval_n);

    // caching sampler; a request for fewer images than a cached batch holds
    // is served as a prefix (per-image seed streams make this exact)
    metrics::BatchSampler sampler();

    const embedding::FeatureStats& val_stats();  // FID reference from the val split

    metrics::MetricsReport evaluate(const diffusion::ModelCheckpoint& model);
    std::vector<metrics::SideEffectEntry> side_effects(const diffusion::ModelCheckpoint& model);
    metrics::ConceptSimMatrix similarity_matrix();

    std::vector<corpus::Concept> query_concepts() const;
    std::vector<std::pair<ImageSample, corpus::Prompt>> clean_pairs(const std::string& concept_name,
                                                                    int count) const;
    diffusion::FineTuneHyper finetune_hyper(int epochs = -1) const;

    std::uint64_t eval_seed(const corpus::Concept& c) const;

private:
    std::string cache_dir() const;
    const diffusion::ModelCheckpoint& cached_finetune(const std::string& kind, int poison_size,
                                                      std::uint64_t attack_seed, int ft_epochs);

    ExperimentConfig cfg_;
    corpus::Vocabulary vocab_;
    std::vector<corpus::PromptTemplate> templates_;
    corpus::Tokenizer tok_;
    std::optional<corpus::CaptionedCorpus> corpus_;
    std::optional<corpus::VariantCorpus> pool_;
    std::optional<embedding::EmbeddingSpace> space_;
    std::optional<diffusion::ModelCheckpoint> base_;
    std::optional<embedding::FeatureStats> val_stats_;
    std::map<std::string, diffusion::ModelCheckpoint> finetunes_;
    std::map<std::string, diffusion::GenerationBatch> gen_cache_;
    bool prepared_ = false;
};

struct RunReport {
    nlohmann::json body;    // deterministic: identical config -> identical bytes
    std::string timestamp;  // kept outside body so reruns stay comparable

    struct Montage {
        std::string model_id;
        std::string prompt_text;
        std::vector<ImageSample> images;
    };
    std::vector<Montage> montages;
};

// full pipeline: corpus -> encoder -> base model -> attack(s) -> metrics
RunReport run_experiment(const ExperimentConfig& cfg);
RunReport run_experiment(ExperimentContext& ctx);

struct SweepAxes {
    std::vector<int> poison_sizes;
    std::vector<int> epochs;
    std::vector<int> templates;
    std::vector<std::string> qualifiers;  // inserted into the query prompt only
    std::vector<std::string> model_sizes;

    static SweepAxes from_json(const nlohmann::json& j);  // unknown axis -> ConfigError
    bool empty() const;
};

RunReport sweep_grid(const ExperimentConfig& cfg, const SweepAxes& axes);

// formats: subset of {json, csv, plots, image-grids}; returns written paths
std::vector<std::string> emit_report(const RunReport& report, const std::string& dir,
                                     const std::vector<std::string>& formats);

}  // namespace poisonlab::harness
