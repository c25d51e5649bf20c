#include "fixtures.hpp"

#include <cstdlib>
#include <filesystem>

namespace fixtures {

namespace fs = std::filesystem;

const corpus::Vocabulary& vocab() {
    static corpus::Vocabulary v = corpus::default_vocabulary();
    return v;
}

const std::vector<corpus::PromptTemplate>& templates() {
    static std::vector<corpus::PromptTemplate> t = corpus::default_templates();
    return t;
}

const corpus::Tokenizer& tokenizer() {
    static corpus::Tokenizer t =
        corpus::Tokenizer::for_vocabulary(vocab(), templates(), corpus::default_qualifiers());
    return t;
}

const corpus::CaptionedCorpus& tiny_corpus() {
    static corpus::CaptionedCorpus c =
        corpus::build_corpus(vocab(), 14, templates(), tokenizer(), 51, 0.25);
    return c;
}

const embedding::EmbeddingSpace& tiny_space() {
    static embedding::EmbeddingSpace s = [] {
        embedding::EncoderHyper h;
        h.dim = 32;
        h.epochs = 12;
        h.batch = 32;
        h.seed = 99;
        return embedding::train_joint_encoder(tiny_corpus(), vocab(), tokenizer(), h);
    }();
    return s;
}

const corpus::VariantCorpus& tiny_pool() {
    static corpus::VariantCorpus p = corpus::make_variant_pool(
        vocab().by_name("checker-blob"), 120, corpus::JitterSpec{}, 31);
    return p;
}

const diffusion::NoiseSchedule& tiny_schedule() {
    static diffusion::NoiseSchedule s = diffusion::make_schedule(8, diffusion::ScheduleKind::linear);
    return s;
}

const diffusion::ModelCheckpoint& tiny_base() {
    static diffusion::ModelCheckpoint m = [] {
        diffusion::TrainHyper h;
        h.epochs = 2;
        h.batch = 16;
        h.width = 8;
        h.seed = 77;
        return diffusion::train_base(tiny_corpus(), tiny_space(), tiny_schedule(), h);
    }();
    return m;
}

corpus::Prompt prompt_for(const std::string& concept_name, int template_id,
                          const std::vector<std::string>& qualifiers) {
    return corpus::make_prompt(vocab(), tokenizer(),
                               templates()[static_cast<std::size_t>(template_id)],
                               vocab().by_name(concept_name), qualifiers);
}

std::string temp_dir(const std::string& tag) {
    static int counter = 0;
    fs::path base = fs::temp_directory_path() / "poisonlab-tests";
    fs::path dir = base / (tag + "-" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

}  // namespace fixtures
