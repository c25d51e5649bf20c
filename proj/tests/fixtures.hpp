#pragma once

// Shared fixtures: small trained artifacts built once per test process so
// individual test cases stay fast. Everything here is deterministic.

#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/diffusion.hpp"
#include "poisonlab/embedding.hpp"

namespace fixtures {

using namespace poisonlab;

const corpus::Vocabulary& vocab();
const std::vector<corpus::PromptTemplate>& templates();
const corpus::Tokenizer& tokenizer();

// ~14 pairs per concept, fixed seed
const corpus::CaptionedCorpus& tiny_corpus();

// contrastive encoder trained on tiny_corpus; good enough for similarity
// orderings, not for accuracy gates
const embedding::EmbeddingSpace& tiny_space();

// 120-member jittered pool around the checker-blob anchor
const corpus::VariantCorpus& tiny_pool();

const diffusion::NoiseSchedule& tiny_schedule();  // T=8 linear

// small-width base model trained briefly on tiny_corpus
const diffusion::ModelCheckpoint& tiny_base();

corpus::Prompt prompt_for(const std::string& concept_name, int template_id = 0,
                          const std::vector<std::string>& qualifiers = {});

std::string temp_dir(const std::string& tag);  // fresh writable scratch dir

}  // namespace fixtures
