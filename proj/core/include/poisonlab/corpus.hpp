#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "poisonlab/image.hpp"

namespace poisonlab::corpus {

enum class ShapeKind { disc, ring, ellipse, square, cross, bar, blob };
enum class TextureKind { solid, checker, stripe };

std::string to_string(ShapeKind k);
std::string to_string(TextureKind k);
ShapeKind shape_from_string(const std::string& s);
TextureKind texture_from_string(const std::string& s);

// How a concept is drawn. Jitter ranges are interpreted by the renderer.
struct RenderSpec {
    ShapeKind shape = ShapeKind::disc;
    TextureKind texture = TextureKind::solid;
    float color[3] = {0.5f, 0.5f, 0.5f};
    float size_min = 8.0f;
    float size_max = 11.0f;
    bool marker = false;  // red marker dot (target-pattern feature)
};

struct Concept {
    int id = 0;
    std::string name;
    std::string family;
    RenderSpec render_spec;
};

struct Vocabulary {
    std::vector<Concept> concepts;

    const Concept& by_id(int id) const;
    const Concept& by_name(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::uint64_t hash() const;
};

// ids contiguous from 0; >= 8 concepts over >= 3 families with two
// texture-by-shape composites usable as shortcut candidates.
Vocabulary default_vocabulary();

struct PromptTemplate {
    int id = 0;
    // one "{}" concept slot; an optional "{q}" qualifier slot (with trailing
    // space) that is dropped when no qualifiers are given
    std::string pattern;

    std::string render(const std::string& concept_name,
                       const std::vector<std::string>& qualifiers) const;
};

std::vector<PromptTemplate> default_templates();
std::vector<std::string> default_qualifiers();

// Closed whitespace word-level tokenizer. Unknown words are an error.
class Tokenizer {
public:
    Tokenizer() = default;
    explicit Tokenizer(std::vector<std::string> words);

    // vocabulary words + template words + qualifier words
    static Tokenizer for_vocabulary(const Vocabulary& vocab,
                                    const std::vector<PromptTemplate>& templates,
                                    const std::vector<std::string>& qualifiers);

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& tokens) const;
    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }
    std::uint64_t hash() const;

private:
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

struct Prompt {
    int template_id = 0;
    int concept_id = 0;
    std::vector<std::string> qualifier_tokens;
    std::string text;
    std::vector<int> tokens;
};

Prompt make_prompt(const Vocabulary& vocab, const Tokenizer& tok,
                   const PromptTemplate& tmpl, const Concept& c,
                   const std::vector<std::string>& qualifiers = {});

struct JitterSpec {
    float translate = 3.0f;   // pixels
    float rotation = 0.45f;   // radians
    float hue = 0.12f;        // relative channel scale
    float scale = 0.15f;      // relative size
};

struct VariantCorpus {
    ImageSample anchor;
    std::vector<ImageSample> pool;
    std::size_t size() const { return pool.size(); }
};

struct CaptionedPair {
    std::uint64_t id = 0;
    ImageSample image;
    Prompt prompt;
};

struct CaptionedCorpus {
    std::vector<CaptionedPair> pairs;
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

// deterministic procedural rendering: (concept, seed) -> image
ImageSample render_concept(const Vocabulary& vocab, const Concept& c, std::uint64_t seed);

// anchor plus n jittered variants of the target pattern
VariantCorpus make_variant_pool(const Concept& target_spec, int n,
                                const JitterSpec& jitter, std::uint64_t seed);

// balanced captioned corpus with a deterministic 90/10 hash split; a small
// fraction of captions carries one qualifier token so the text encoder sees
// them during training
CaptionedCorpus build_corpus(const Vocabulary& vocab, int per_concept,
                             const std::vector<PromptTemplate>& templates,
                             const Tokenizer& tok, std::uint64_t seed,
                             double qualifier_rate = 0.25);

// Corpus directory: <id>.png images, manifest.jsonl, vocab.json. Loading
// re-renders images from the manifest seeds instead of decoding PNGs.
void save_corpus(const std::string& dir, const Vocabulary& vocab,
                 const std::vector<PromptTemplate>& templates,
                 const CaptionedCorpus& corpus, bool write_images = true);
CaptionedCorpus load_corpus(const std::string& dir, const Vocabulary& vocab,
                            const std::vector<PromptTemplate>& templates,
                            const Tokenizer& tok);

void save_vocabulary(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace poisonlab::corpus
