#include "poisonlab/attack.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "poisonlab/errors.hpp"
#include "poisonlab/metrics.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab::attack {

using corpus::Concept;
using corpus::Prompt;
using diffusion::ModelCheckpoint;
using diffusion::Role;

std::uint64_t PoisonDataset::digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& img : images) h = hash_mix(h, img.seed);
    for (const auto& p : prompts) h = fnv1a64(p.text, h);
    return hash_mix(h, static_cast<std::uint64_t>(targeted_concept.id));
}

std::vector<ImageSample> retrieve_variants(const corpus::VariantCorpus& pool,
                                           const ImageSample& targeted_image,
                                           const embedding::EmbeddingSpace& space,
                                           const RetrievalSpec& spec, std::uint64_t seed) {
    if (pool.pool.empty()) throw ConfigError("retrieve_variants: empty variant pool");
    if (spec.beta < 0.0 || spec.beta > 1.0) throw ConfigError("retrieval beta must be in [0,1]");
    if (spec.m < 1) throw ConfigError("retrieval draw count must be >= 1");

    embedding::EmbeddingVector anchor = embedding::embed_image(space, targeted_image);
    auto pool_embs = embedding::embed_images(space, pool.pool);

    // pool order is id order; eligibility and the draw are independent of any
    // caller-side reordering
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < pool_embs.size(); ++i)
        if (embedding::cosine_sim(anchor, pool_embs[i]) >= spec.beta) eligible.push_back(i);

    if (static_cast<int>(eligible.size()) < spec.m)
        throw InsufficientVariantsError(
            spec.m, static_cast<int>(eligible.size()),
            "retrieve_variants: only " + std::to_string(eligible.size()) + " of requested " +
                std::to_string(spec.m) + " pool members pass beta=" + std::to_string(spec.beta) +
                " (shortfall " + std::to_string(spec.m - static_cast<int>(eligible.size())) + ")");

    // draw without replacement; a smaller m is a prefix of a larger one under
    // the same seed
    Rng rng(derive_seed(seed, "retrieve"));
    rng.shuffle(eligible);
    std::vector<ImageSample> out;
    out.reserve(static_cast<std::size_t>(spec.m));
    for (int k = 0; k < spec.m; ++k) out.push_back(pool.pool[eligible[static_cast<std::size_t>(k)]]);
    return out;
}

std::vector<Prompt> compose_prompt_set(const corpus::Vocabulary& vocab,
                                       const corpus::Tokenizer& tok, const Concept& c,
                                       const corpus::PromptTemplate& tmpl, int m) {
    if (m < 1) throw ConfigError("compose_prompt_set: m must be >= 1");
    Prompt p = make_prompt(vocab, tok, tmpl, c);
    return std::vector<Prompt>(static_cast<std::size_t>(m), p);
}

PoisonDataset build_poison_dataset(const corpus::VariantCorpus& pool,
                                   const ImageSample& targeted_image,
                                   const Concept& targeted_concept,
                                   const corpus::PromptTemplate& tmpl,
                                   const corpus::Vocabulary& vocab, const corpus::Tokenizer& tok,
                                   const embedding::EmbeddingSpace& space,
                                   const RetrievalSpec& spec, std::uint64_t seed) {
    PoisonDataset d;
    d.images = retrieve_variants(pool, targeted_image, space, spec, seed);
    d.prompts = compose_prompt_set(vocab, tok, targeted_concept, tmpl, spec.m);
    d.targeted_concept = targeted_concept;
    d.targeted_image = targeted_image;
    return d;
}

namespace {

std::vector<std::pair<ImageSample, Prompt>> zip_pairs(const std::vector<ImageSample>& images,
                                                      const std::vector<Prompt>& prompts) {
    std::vector<std::pair<ImageSample, Prompt>> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) out.emplace_back(images[i], prompts[i]);
    return out;
}

}  // namespace

ModelCheckpoint basic_attack(const ModelCheckpoint& base, const PoisonDataset& poison,
                             const embedding::EmbeddingSpace& space,
                             const diffusion::FineTuneHyper& hyper) {
    if (base.role != Role::base)
        throw ContractError("basic_attack requires a base checkpoint, got " +
                            to_string(base.role));
    std::ostringstream event;
    event << "basic_attack target=" << poison.targeted_concept.name << " |D_p|=" << poison.size()
          << " digest=" << std::hex << poison.digest();
    return diffusion::fine_tune(base, zip_pairs(poison.images, poison.prompts), space, hyper,
                                Role::poisoned, event.str());
}

SanitizeDataset build_sanitize_dataset(const corpus::Vocabulary& vocab,
                                       const corpus::Tokenizer& tok,
                                       const Concept& sanitized_concept,
                                       const std::vector<ImageSample>& clean_images,
                                       const corpus::PromptTemplate& tmpl, int size) {
    if (clean_images.empty()) throw ConfigError("build_sanitize_dataset: no clean images given");
    if (size < 1) throw ConfigError("build_sanitize_dataset: size must be >= 1");
    if (size > static_cast<int>(clean_images.size()))
        throw ConfigError("build_sanitize_dataset: fewer clean images than requested size");
    for (const auto& img : clean_images) {
        if (img.concept_id != sanitized_concept.id)
            throw ContractError("sanitize image labeled concept " +
                                std::to_string(img.concept_id) + ", expected " +
                                sanitized_concept.name);
        if (img.source == ImageSource::variant_pool)
            throw ContractError("sanitize images must not come from the variant pool");
    }
    SanitizeDataset d;
    d.sanitized_concept = sanitized_concept;
    d.images.assign(clean_images.begin(), clean_images.begin() + size);
    d.prompts = compose_prompt_set(vocab, tok, sanitized_concept, tmpl, size);
    return d;
}

ModelCheckpoint stealthy_attack(const ModelCheckpoint& base, const PoisonDataset& poison,
                                const SanitizeDataset& sanitize,
                                const embedding::EmbeddingSpace& space,
                                const diffusion::FineTuneHyper& hyper) {
    if (sanitize.sanitized_concept.id == poison.targeted_concept.id)
        throw ConfigError("stealthy_attack: sanitizing the targeted concept is contradictory");
    if (base.role != Role::base)
        throw ContractError("stealthy_attack requires a base checkpoint, got " +
                            to_string(base.role));
    auto pairs = zip_pairs(poison.images, poison.prompts);
    auto extra = zip_pairs(sanitize.images, sanitize.prompts);
    pairs.insert(pairs.end(), extra.begin(), extra.end());
    // fine_tune reshuffles the union each epoch, so no further interleaving
    // is needed here
    std::ostringstream event;
    event << "stealthy_attack target=" << poison.targeted_concept.name
          << " sanitize=" << sanitize.sanitized_concept.name << " |D_p|=" << poison.size()
          << " |D_s|=" << sanitize.size() << " digest=" << std::hex << poison.digest();
    return diffusion::fine_tune(base, pairs, space, hyper, Role::sanitized, event.str());
}

std::vector<Concept> extract_shortcut_candidates(const ImageSample& targeted_image,
                                                 const corpus::Vocabulary& vocab,
                                                 const embedding::EmbeddingSpace& space, int k,
                                                 const std::vector<Concept>& baselines,
                                                 const corpus::PromptTemplate& tmpl,
                                                 const corpus::Tokenizer& tok) {
    if (k < 1) throw ConfigError("extract_shortcut_candidates: k must be >= 1");
    if (vocab.concepts.empty()) throw ConfigError("extract_shortcut_candidates: empty vocabulary");

    embedding::EmbeddingVector zi = embedding::embed_image(space, targeted_image);
    std::vector<std::pair<double, int>> ranked;  // (similarity, concept id)
    for (const auto& c : vocab.concepts) {
        auto zt = embedding::embed_text(space, make_prompt(vocab, tok, tmpl, c));
        ranked.emplace_back(embedding::cosine_sim(zi, zt), c.id);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });

    std::vector<char> keep(vocab.concepts.size(), 0);
    for (int i = 0; i < std::min<int>(k, static_cast<int>(ranked.size())); ++i)
        keep[static_cast<std::size_t>(ranked[static_cast<std::size_t>(i)].second)] = 1;
    for (const auto& b : baselines) keep[static_cast<std::size_t>(vocab.by_id(b.id).id)] = 1;

    std::vector<Concept> out;
    for (const auto& [sim, id] : ranked)
        if (keep[static_cast<std::size_t>(id)]) out.push_back(vocab.by_id(id));
    return out;
}

ShortcutCandidateSet select_shortcut(const ModelCheckpoint& base,
                                     const corpus::VariantCorpus& pool,
                                     const ImageSample& targeted_image,
                                     const std::vector<Concept>& candidates,
                                     const RetrievalSpec& small_spec,
                                     const corpus::PromptTemplate& tmpl,
                                     const corpus::Vocabulary& vocab,
                                     const corpus::Tokenizer& tok,
                                     const embedding::EmbeddingSpace& space,
                                     const diffusion::FineTuneHyper& hyper, int eval_n,
                                     float guidance, std::uint64_t seed) {
    if (candidates.empty()) throw ConfigError("select_shortcut: no candidates");
    ShortcutCandidateSet out;
    out.candidates = candidates;
    out.scores.resize(candidates.size(), 0.0);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        try {
            PoisonDataset d = build_poison_dataset(pool, targeted_image, candidates[i], tmpl,
                                                   vocab, tok, space, small_spec, seed);
            diffusion::FineTuneHyper h = hyper;
            h.seed = derive_seed(seed, "shortcut-ft", static_cast<std::uint64_t>(candidates[i].id));
            ModelCheckpoint attacked = basic_attack(base, d, space, h);
            auto batch = diffusion::sample(
                attacked, make_prompt(vocab, tok, tmpl, candidates[i]), eval_n,
                derive_seed(seed, "shortcut-eval", static_cast<std::uint64_t>(candidates[i].id)),
                guidance, space);
            out.scores[i] = metrics::poison_effect(batch, targeted_image, space);
        } catch (const Error&) {
            out.scores[i] = 0.0;  // failed member attack scores 0, run continues
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.scores.size(); ++i)
        if (out.scores[i] > out.scores[best]) best = i;
    out.selected = out.candidates[best];
    return out;
}

ModelCheckpoint defense_finetune(const ModelCheckpoint& model,
                                 const std::vector<std::pair<ImageSample, Prompt>>& untargeted_pairs,
                                 const Concept& targeted_concept,
                                 const embedding::EmbeddingSpace& space,
                                 const diffusion::FineTuneHyper& hyper) {
    if (model.role != Role::poisoned && model.role != Role::sanitized)
        throw ContractError("defense_finetune expects a poisoned or sanitized checkpoint");
    for (const auto& [img, prompt] : untargeted_pairs)
        if (prompt.concept_id == targeted_concept.id)
            throw ConfigError("defense_finetune: pairs must not mention the targeted concept");
    std::ostringstream event;
    event << "defense_finetune n=" << untargeted_pairs.size();
    return diffusion::fine_tune(model, untargeted_pairs, space, hyper, Role::defended,
                                event.str());
}

}  // namespace poisonlab::attack
