#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "poisonlab/diffusion.hpp"
#include "poisonlab/embedding.hpp"

namespace poisonlab::metrics {

struct ReportContext {
    std::string model_id;
    std::string prompt;
    int n = 0;
    std::uint64_t master_seed = 0;
    int ref_count = 0;  // FID reference sample count (FID is size-sensitive)
};

struct MetricsReport {
    double poison_effect = 0.0;
    double prompt_alignment = 0.0;
    double zero_shot_acc = 0.0;
    double fid = 0.0;
    ReportContext context;
};

// fixed field names {poison_effect, prompt_alignment, zero_shot_acc, fid,
// context, paper_reference}; similarities carry both the raw cosine and a
// clamped display percentage
nlohmann::json report_to_json(const MetricsReport& report);

struct ConceptSimMatrix {
    std::vector<corpus::Concept> concepts;
    std::vector<std::vector<double>> values;
    int runs = 5;
    int n_per_prompt = 100;
};

// pluggable generation source so the harness can cache sampled batches
using BatchSampler = std::function<diffusion::GenerationBatch(
    const diffusion::ModelCheckpoint&, const corpus::Prompt&, int, std::uint64_t, float)>;
BatchSampler direct_sampler(const embedding::EmbeddingSpace& space);

// mean embedding similarity of the generated set to the targeted image
double poison_effect(const diffusion::GenerationBatch& batch, const ImageSample& targeted_image,
                     const embedding::EmbeddingSpace& space);

// mean image-text similarity of the generated set to the query prompt
double prompt_alignment(const diffusion::GenerationBatch& batch, const corpus::Prompt& query,
                        const embedding::EmbeddingSpace& space);

double zero_shot_accuracy(const diffusion::GenerationBatch& batch,
                          const corpus::Concept& query_concept,
                          const corpus::Vocabulary& vocab, const corpus::PromptTemplate& tmpl,
                          const corpus::Tokenizer& tok, const embedding::EmbeddingSpace& space);

// Frechet distance between Gaussian feature fits, eigendecomposition route
// with 1e-6 regularization ahead of the matrix square root
double fid(const embedding::FeatureStats& ref, const embedding::FeatureStats& gen);

// mean cross-set generated-image similarity between two prompts on the clean
// model, averaged over `runs` repetitions; per-prompt seeds depend only on
// (master_seed, run, prompt text) so the measure is swap-symmetric
double conceptual_similarity(const diffusion::ModelCheckpoint& clean_model,
                             const corpus::Prompt& a, const corpus::Prompt& b,
                             const embedding::EmbeddingSpace& space, int n, int runs,
                             std::uint64_t master_seed, float guidance,
                             const BatchSampler& sampler);

ConceptSimMatrix concept_sim_matrix(const diffusion::ModelCheckpoint& clean_model,
                                    const std::vector<corpus::Concept>& concepts,
                                    const corpus::PromptTemplate& tmpl,
                                    const corpus::Vocabulary& vocab, const corpus::Tokenizer& tok,
                                    const embedding::EmbeddingSpace& space, int n, int runs,
                                    std::uint64_t master_seed, float guidance,
                                    const BatchSampler& sampler);

struct SideEffectEntry {
    corpus::Concept concept_;
    double effect = 0.0;
};

std::vector<SideEffectEntry> side_effect_matrix(
    const diffusion::ModelCheckpoint& model, const std::vector<corpus::Concept>& query_concepts,
    const ImageSample& targeted_image, const corpus::PromptTemplate& tmpl,
    const corpus::Vocabulary& vocab, const corpus::Tokenizer& tok,
    const embedding::EmbeddingSpace& space, int n, std::uint64_t seed, float guidance,
    const BatchSampler& sampler);

// Spearman rank correlation, used by the monotonicity and side-effect
// criteria
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace poisonlab::metrics
