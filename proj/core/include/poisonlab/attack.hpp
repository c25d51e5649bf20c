#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/diffusion.hpp"
#include "poisonlab/embedding.hpp"

namespace poisonlab::attack {

struct RetrievalSpec {
    double beta = 0.9;  // embedding-similarity threshold
    int m = 50;         // pool draw count
};

struct PoisonDataset {
    std::vector<ImageSample> images;   // retrieved target-pattern variants
    std::vector<corpus::Prompt> prompts;  // m copies of the targeted prompt
    corpus::Concept targeted_concept;
    ImageSample targeted_image;
    std::size_t size() const { return images.size(); }
    std::uint64_t digest() const;
};

struct SanitizeDataset {
    std::vector<ImageSample> images;
    std::vector<corpus::Prompt> prompts;
    corpus::Concept sanitized_concept;
    std::size_t size() const { return images.size(); }
};

struct ShortcutCandidateSet {
    std::vector<corpus::Concept> candidates;
    std::vector<double> scores;  // poison_effect at small |D_p|
    corpus::Concept selected;
};

// filter the pool at sim >= beta against the anchor embedding, then draw m
// without replacement; a shortfall is a hard error, never a silent relax
std::vector<ImageSample> retrieve_variants(const corpus::VariantCorpus& pool,
                                           const ImageSample& targeted_image,
                                           const embedding::EmbeddingSpace& space,
                                           const RetrievalSpec& spec, std::uint64_t seed);

std::vector<corpus::Prompt> compose_prompt_set(const corpus::Vocabulary& vocab,
                                               const corpus::Tokenizer& tok,
                                               const corpus::Concept& c,
                                               const corpus::PromptTemplate& tmpl, int m);

PoisonDataset build_poison_dataset(const corpus::VariantCorpus& pool,
                                   const ImageSample& targeted_image,
                                   const corpus::Concept& targeted_concept,
                                   const corpus::PromptTemplate& tmpl,
                                   const corpus::Vocabulary& vocab, const corpus::Tokenizer& tok,
                                   const embedding::EmbeddingSpace& space,
                                   const RetrievalSpec& spec, std::uint64_t seed);

diffusion::ModelCheckpoint basic_attack(const diffusion::ModelCheckpoint& base,
                                        const PoisonDataset& poison,
                                        const embedding::EmbeddingSpace& space,
                                        const diffusion::FineTuneHyper& hyper);

SanitizeDataset build_sanitize_dataset(const corpus::Vocabulary& vocab,
                                       const corpus::Tokenizer& tok,
                                       const corpus::Concept& sanitized_concept,
                                       const std::vector<ImageSample>& clean_images,
                                       const corpus::PromptTemplate& tmpl, int size);

diffusion::ModelCheckpoint stealthy_attack(const diffusion::ModelCheckpoint& base,
                                           const PoisonDataset& poison,
                                           const SanitizeDataset& sanitize,
                                           const embedding::EmbeddingSpace& space,
                                           const diffusion::FineTuneHyper& hyper);

// embedding-space surrogate for caption-based concept extraction: the k
// concepts whose prompt embeddings describe the target image best, plus the
// baselines, ordered by similarity descending
std::vector<corpus::Concept> extract_shortcut_candidates(
    const ImageSample& targeted_image, const corpus::Vocabulary& vocab,
    const embedding::EmbeddingSpace& space, int k,
    const std::vector<corpus::Concept>& baselines, const corpus::PromptTemplate& tmpl,
    const corpus::Tokenizer& tok);

// runs a small-|D_p| basic attack per candidate and scores each by the mean
// generated-image similarity to the target; a failed member scores 0
ShortcutCandidateSet select_shortcut(const diffusion::ModelCheckpoint& base,
                                     const corpus::VariantCorpus& pool,
                                     const ImageSample& targeted_image,
                                     const std::vector<corpus::Concept>& candidates,
                                     const RetrievalSpec& small_spec,
                                     const corpus::PromptTemplate& tmpl,
                                     const corpus::Vocabulary& vocab,
                                     const corpus::Tokenizer& tok,
                                     const embedding::EmbeddingSpace& space,
                                     const diffusion::FineTuneHyper& hyper, int eval_n,
                                     float guidance, std::uint64_t seed);

diffusion::ModelCheckpoint defense_finetune(
    const diffusion::ModelCheckpoint& model,
    const std::vector<std::pair<ImageSample, corpus::Prompt>>& untargeted_pairs,
    const corpus::Concept& targeted_concept, const embedding::EmbeddingSpace& space,
    const diffusion::FineTuneHyper& hyper);

}  // namespace poisonlab::attack
