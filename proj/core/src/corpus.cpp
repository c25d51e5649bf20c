#include "poisonlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace poisonlab::corpus {

std::string to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::disc: return "disc";
        case ShapeKind::ring: return "ring";
        case ShapeKind::ellipse: return "ellipse";
        case ShapeKind::square: return "square";
        case ShapeKind::cross: return "cross";
        case ShapeKind::bar: return "bar";
        case ShapeKind::blob: return "blob";
    }
    return "disc";
}

std::string to_string(TextureKind k) {
    switch (k) {
        case TextureKind::solid: return "solid";
        case TextureKind::checker: return "checker";
        case TextureKind::stripe: return "stripe";
    }
    return "solid";
}

ShapeKind shape_from_string(const std::string& s) {
    for (auto k : {ShapeKind::disc, ShapeKind::ring, ShapeKind::ellipse, ShapeKind::square,
                   ShapeKind::cross, ShapeKind::bar, ShapeKind::blob})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown shape kind: " + s);
}

TextureKind texture_from_string(const std::string& s) {
    for (auto k : {TextureKind::solid, TextureKind::checker, TextureKind::stripe})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown texture kind: " + s);
}

const Concept& Vocabulary::by_id(int id) const {
    if (id < 0 || id >= static_cast<int>(concepts.size()))
        throw VocabularyError("concept id out of range: " + std::to_string(id));
    return concepts[static_cast<std::size_t>(id)];
}

const Concept& Vocabulary::by_name(const std::string& name) const {
    for (const auto& c : concepts)
        if (c.name == name) return c;
    throw VocabularyError("unknown concept: " + name);
}

bool Vocabulary::contains(const std::string& name) const {
    return std::any_of(concepts.begin(), concepts.end(),
                       [&](const Concept& c) { return c.name == name; });
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& c : concepts) {
        h = fnv1a64(c.name, h);
        h = fnv1a64(c.family, h);
        h = fnv1a64(to_string(c.render_spec.shape), h);
        h = fnv1a64(to_string(c.render_spec.texture), h);
        std::ostringstream os;
        os << c.id << ',' << c.render_spec.color[0] << ',' << c.render_spec.color[1] << ','
           << c.render_spec.color[2] << ',' << c.render_spec.size_min << ','
           << c.render_spec.size_max << ',' << c.render_spec.marker;
        h = fnv1a64(os.str(), h);
    }
    return h;
}

Vocabulary default_vocabulary() {
    auto mk = [](int id, const char* name, const char* family, ShapeKind shape,
                 TextureKind tex, float r, float g, float b, bool marker = false) {
        Concept c;
        c.id = id;
        c.name = name;
        c.family = family;
        c.render_spec.shape = shape;
        c.render_spec.texture = tex;
        c.render_spec.color[0] = r;
        c.render_spec.color[1] = g;
        c.render_spec.color[2] = b;
        c.render_spec.size_min = 8.0f;
        c.render_spec.size_max = 11.0f;
        c.render_spec.marker = marker;
        return c;
    };
    Vocabulary v;
    // Family palettes are kept coherent (round = blues, angular = warm,
    // pattern/composite = greens) so pixel-space family structure exists.
    v.concepts = {
        mk(0, "disc", "round", ShapeKind::disc, TextureKind::solid, 0.15f, 0.30f, 0.90f),
        mk(1, "ring", "round", ShapeKind::ring, TextureKind::solid, 0.10f, 0.80f, 0.85f),
        mk(2, "ellipse", "round", ShapeKind::ellipse, TextureKind::solid, 0.55f, 0.25f, 0.85f),
        mk(3, "square", "angular", ShapeKind::square, TextureKind::solid, 0.92f, 0.50f, 0.12f),
        mk(4, "cross", "angular", ShapeKind::cross, TextureKind::solid, 0.85f, 0.20f, 0.22f),
        mk(5, "bar", "angular", ShapeKind::bar, TextureKind::solid, 0.92f, 0.85f, 0.18f),
        // checker-blob is the default target pattern: checker texture plus a
        // red marker dot as its distinctive feature
        mk(6, "checker-blob", "pattern", ShapeKind::blob, TextureKind::checker, 0.25f, 0.60f,
           0.30f, true),
        mk(7, "stripe-blob", "pattern", ShapeKind::blob, TextureKind::stripe, 0.35f, 0.65f, 0.25f),
        // composites: texture-by-shape shortcut candidates
        mk(8, "checker-disc", "composite", ShapeKind::disc, TextureKind::checker, 0.28f, 0.58f,
           0.34f),
        mk(9, "stripe-square", "composite", ShapeKind::square, TextureKind::stripe, 0.40f, 0.62f,
           0.30f),
    };
    return v;
}

std::string PromptTemplate::render(const std::string& concept_name,
                                   const std::vector<std::string>& qualifiers) const {
    std::string qual;
    for (std::size_t i = 0; i < qualifiers.size(); ++i)
        qual += (i ? " " : "") + qualifiers[i];
    std::string out = pattern;
    auto qpos = out.find("{q}");
    if (qpos != std::string::npos) {
        if (qual.empty()) {
            // the qualifier slot and its trailing space collapse away
            std::size_t len = (qpos + 3 < out.size() && out[qpos + 3] == ' ') ? 4 : 3;
            out.erase(qpos, len);
        } else {
            out.replace(qpos, 3, qual);
        }
    }
    auto cpos = out.find("{}");
    if (cpos == std::string::npos) throw ConfigError("template has no concept slot: " + pattern);
    out.replace(cpos, 2, concept_name);
    if (out.empty()) throw ConfigError("template rendered empty text");
    return out;
}

std::vector<PromptTemplate> default_templates() {
    return {
        {0, "a photo of a {q} {}"},
        {1, "an image of a {q} {}"},
        {2, "a picture of a {q} {}"},
    };
}

std::vector<std::string> default_qualifiers() {
    return {"small", "large", "bright", "dark", "plain"};
}

Tokenizer::Tokenizer(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (!index_.emplace(words_[i], static_cast<int>(i)).second)
            throw ConfigError("duplicate tokenizer word: " + words_[i]);
    }
}

Tokenizer Tokenizer::for_vocabulary(const Vocabulary& vocab,
                                    const std::vector<PromptTemplate>& templates,
                                    const std::vector<std::string>& qualifiers) {
    std::vector<std::string> words;
    auto add = [&](const std::string& w) {
        if (w.empty()) return;
        if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
    };
    for (const auto& t : templates) {
        std::istringstream is(t.pattern);
        std::string w;
        while (is >> w)
            if (w != "{}" && w != "{q}") add(w);
    }
    for (const auto& c : vocab.concepts) add(c.name);
    for (const auto& q : qualifiers) add(q);
    return Tokenizer(words);
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        auto it = index_.find(w);
        if (it == index_.end()) throw VocabularyError("unknown word: " + w);
        out.push_back(it->second);
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        int t = tokens[i];
        if (t < 0 || t >= static_cast<int>(words_.size()))
            throw VocabularyError("token id out of range: " + std::to_string(t));
        if (i) out += ' ';
        out += words_[static_cast<std::size_t>(t)];
    }
    return out;
}

std::uint64_t Tokenizer::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& w : words_) h = fnv1a64(w + "\x1f", h);
    return h;
}

Prompt make_prompt(const Vocabulary& vocab, const Tokenizer& tok, const PromptTemplate& tmpl,
                   const Concept& c, const std::vector<std::string>& qualifiers) {
    if (!vocab.contains(c.name)) throw VocabularyError("concept not in vocabulary: " + c.name);
    Prompt p;
    p.template_id = tmpl.id;
    p.concept_id = c.id;
    p.qualifier_tokens = qualifiers;
    p.text = tmpl.render(c.name, qualifiers);
    p.tokens = tok.encode(p.text);
    if (p.tokens.empty()) throw ConfigError("prompt rendered no tokens");
    return p;
}

// ---------------------------------------------------------------------------
// rendering

namespace {

struct RenderParams {
    float cx = 15.5f, cy = 15.5f;
    float size = 9.5f;
    float rot = 0.0f;
    float color_scale[3] = {1.0f, 1.0f, 1.0f};
    float blob_amp[3] = {0.0f, 0.0f, 0.0f};  // harmonics k = 2, 3, 4
    float blob_phase[3] = {0.0f, 0.0f, 0.0f};
    float bg = 0.85f;
};

RenderParams resolve_params(const RenderSpec& spec, Rng& rng) {
    RenderParams p;
    p.cx = 15.5f + static_cast<float>(rng.uniform(-3.0, 3.0));
    p.cy = 15.5f + static_cast<float>(rng.uniform(-3.0, 3.0));
    p.size = static_cast<float>(rng.uniform(spec.size_min, spec.size_max));
    p.rot = static_cast<float>(rng.uniform(-0.45, 0.45));
    for (int c = 0; c < 3; ++c) p.color_scale[c] = 1.0f + static_cast<float>(rng.uniform(-0.12, 0.12));
    for (int k = 0; k < 3; ++k) {
        p.blob_amp[k] = static_cast<float>(rng.uniform(0.08, 0.22)) / static_cast<float>(k + 1);
        p.blob_phase[k] = static_cast<float>(rng.uniform(0.0, 6.2831853));
    }
    p.bg = 0.85f + static_cast<float>(rng.uniform(-0.04, 0.04));
    return p;
}

float sd_box(float x, float y, float wx, float wy) {
    return std::max(std::abs(x) - wx, std::abs(y) - wy);
}

float signed_distance(const RenderSpec& spec, const RenderParams& p, float x, float y) {
    float s = p.size;
    switch (spec.shape) {
        case ShapeKind::disc: return std::sqrt(x * x + y * y) - s;
        case ShapeKind::ring: return std::abs(std::sqrt(x * x + y * y) - 0.78f * s) - 0.28f * s;
        case ShapeKind::ellipse: {
            float yy = y * 1.8f;
            return std::sqrt(x * x + yy * yy) - s;
        }
        case ShapeKind::square: return sd_box(x, y, 0.9f * s, 0.9f * s);
        case ShapeKind::cross:
            return std::min(sd_box(x, y, 0.95f * s, 0.30f * s), sd_box(x, y, 0.30f * s, 0.95f * s));
        case ShapeKind::bar: return sd_box(x, y, 1.55f * s, 0.16f * s);
        case ShapeKind::blob: {
            float r = std::sqrt(x * x + y * y);
            float theta = std::atan2(y, x);
            float wobble = 0.0f;
            for (int k = 0; k < 3; ++k)
                wobble += p.blob_amp[k] * std::sin(static_cast<float>(k + 2) * theta + p.blob_phase[k]);
            return r - s * (1.0f + wobble);
        }
    }
    return 1e9f;
}

ImageSample render_with_params(const RenderSpec& spec, const RenderParams& p, int concept_id,
                               std::uint64_t seed, Rng& noise_rng) {
    ImageSample img;
    img.pixels.resize(kImagePixels);
    img.concept_id = concept_id;
    img.source = ImageSource::procedural;
    img.seed = seed;

    const float cr = std::cos(p.rot), sr = std::sin(p.rot);
    for (int y = 0; y < kImageSize; ++y) {
        for (int x = 0; x < kImageSize; ++x) {
            // shape-local coordinates (texture rides along with the shape)
            float dx = static_cast<float>(x) - p.cx;
            float dy = static_cast<float>(y) - p.cy;
            float lx = cr * dx + sr * dy;
            float ly = -sr * dx + cr * dy;

            float d = signed_distance(spec, p, lx, ly);
            float cov = std::clamp(0.5f - d / 1.5f, 0.0f, 1.0f);

            float col[3] = {spec.color[0], spec.color[1], spec.color[2]};
            if (spec.texture != TextureKind::solid) {
                int ix = static_cast<int>(std::floor(lx / 3.2f));
                int iy = static_cast<int>(std::floor(ly / 3.2f));
                bool dark = spec.texture == TextureKind::checker ? ((ix + iy) & 1) != 0
                                                                 : (ix & 1) != 0;
                if (dark)
                    for (float& c : col) c *= 0.35f;
            }
            for (int c = 0; c < 3; ++c) col[c] = std::clamp(col[c] * p.color_scale[c], 0.0f, 1.0f);

            if (spec.marker) {
                float mx = lx - 0.38f * p.size, my = ly + 0.38f * p.size;
                float md = std::sqrt(mx * mx + my * my) - 2.2f;
                float mcov = std::clamp(0.5f - md / 1.2f, 0.0f, 1.0f);
                const float red[3] = {0.88f, 0.10f, 0.10f};
                for (int c = 0; c < 3; ++c) col[c] = col[c] + (red[c] - col[c]) * mcov;
                cov = std::max(cov, mcov);
            }

            float bgn = p.bg + 0.03f * static_cast<float>(noise_rng.normal());
            for (int c = 0; c < 3; ++c) {
                float v = bgn + (col[c] - bgn) * cov;
                img.at(c, y, x) = std::clamp(v, 0.0f, 1.0f);
            }
        }
    }
    return img;
}

}  // namespace

ImageSample render_concept(const Vocabulary& vocab, const Concept& c, std::uint64_t seed) {
    (void)vocab.by_id(c.id);  // vocabulary membership check
    Rng rng(derive_seed(seed, "render", static_cast<std::uint64_t>(c.id)));
    RenderParams p = resolve_params(c.render_spec, rng);
    Rng noise(derive_seed(seed, "render-noise", static_cast<std::uint64_t>(c.id)));
    return render_with_params(c.render_spec, p, c.id, seed, noise);
}

VariantCorpus make_variant_pool(const Concept& target_spec, int n, const JitterSpec& jitter,
                                std::uint64_t seed) {
    if (n < 1) throw ConfigError("variant pool size must be >= 1");
    VariantCorpus out;

    Rng arng(derive_seed(seed, "variant-anchor"));
    RenderParams anchor_params = resolve_params(target_spec.render_spec, arng);
    // canonical anchor: centered, unrotated draw of the resolved pattern
    anchor_params.cx = anchor_params.cy = 15.5f;
    anchor_params.rot = 0.0f;
    Rng anoise(derive_seed(seed, "variant-anchor-noise"));
    out.anchor = render_with_params(target_spec.render_spec, anchor_params, target_spec.id, seed,
                                    anoise);

    out.pool.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        std::uint64_t vseed = derive_seed(seed, "variant", static_cast<std::uint64_t>(k));
        Rng vrng(vseed);
        RenderParams p = anchor_params;
        p.cx += static_cast<float>(vrng.uniform(-jitter.translate, jitter.translate));
        p.cy += static_cast<float>(vrng.uniform(-jitter.translate, jitter.translate));
        p.rot += static_cast<float>(vrng.uniform(-jitter.rotation, jitter.rotation));
        p.size *= 1.0f + static_cast<float>(vrng.uniform(-jitter.scale, jitter.scale));
        for (float& c : p.color_scale)
            c *= 1.0f + static_cast<float>(vrng.uniform(-jitter.hue, jitter.hue));
        // variants jitter the anchor draw itself, so they share its noise
        // field; zero jitter amplitudes therefore reproduce the anchor
        // bit-exactly
        Rng vnoise(derive_seed(seed, "variant-anchor-noise"));
        ImageSample img = render_with_params(target_spec.render_spec, p, target_spec.id, vseed,
                                             vnoise);
        img.source = ImageSource::variant_pool;
        out.pool.push_back(std::move(img));
    }
    return out;
}

CaptionedCorpus build_corpus(const Vocabulary& vocab, int per_concept,
                             const std::vector<PromptTemplate>& templates, const Tokenizer& tok,
                             std::uint64_t seed, double qualifier_rate) {
    if (vocab.concepts.empty()) throw ConfigError("empty vocabulary");
    if (templates.empty()) throw ConfigError("empty template list");
    if (per_concept < static_cast<int>(templates.size()))
        throw ConfigError("per_concept must cover every template at least once");

    const auto qualifiers = default_qualifiers();
    CaptionedCorpus out;
    std::uint64_t next_id = 0;
    for (const auto& c : vocab.concepts) {
        for (int i = 0; i < per_concept; ++i) {
            CaptionedPair pair;
            pair.id = next_id++;
            std::uint64_t pseed = derive_seed(seed, "pair", pair.id);
            pair.image = render_concept(vocab, c, pseed);
            const auto& tmpl = templates[static_cast<std::size_t>(i) % templates.size()];
            Rng qrng(derive_seed(pseed, "qualifier"));
            std::vector<std::string> quals;
            if (qrng.uniform() < qualifier_rate)
                quals.push_back(qualifiers[qrng.uniform_int(qualifiers.size())]);
            pair.prompt = make_prompt(vocab, tok, tmpl, c, quals);
            out.pairs.push_back(std::move(pair));
        }
    }

    // split: rank pairs by hash of id, lowest 10% is val (order-independent
    // and yields an exact count)
    std::uint64_t split_salt = derive_seed(seed, "split");
    std::vector<std::size_t> order(out.pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        std::uint64_t ha = hash_mix(split_salt, out.pairs[a].id);
        std::uint64_t hb = hash_mix(split_salt, out.pairs[b].id);
        return ha != hb ? ha < hb : out.pairs[a].id < out.pairs[b].id;
    });
    std::size_t n_val = out.pairs.size() / 10;
    std::vector<char> is_val(out.pairs.size(), 0);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = 1;

    // coverage repair: every (concept, template) combination must survive in
    // train; astronomically unlikely to trigger, but the invariant is hard
    auto combo = [&](const CaptionedPair& p) {
        return p.prompt.concept_id * 1000 + p.prompt.template_id;
    };
    std::map<int, int> train_count;
    for (std::size_t i = 0; i < out.pairs.size(); ++i)
        if (!is_val[i]) train_count[combo(out.pairs[i])]++;
    for (std::size_t i = 0; i < out.pairs.size(); ++i) {
        if (is_val[i] && train_count[combo(out.pairs[i])] == 0) {
            is_val[i] = 0;
            train_count[combo(out.pairs[i])]++;
            for (std::size_t j = out.pairs.size(); j-- > 0;) {
                if (!is_val[j] && train_count[combo(out.pairs[j])] > 1) {
                    is_val[j] = 1;
                    train_count[combo(out.pairs[j])]--;
                    break;
                }
            }
        }
    }

    for (std::size_t i = 0; i < out.pairs.size(); ++i)
        (is_val[i] ? out.val : out.train).push_back(i);
    return out;
}

// ---------------------------------------------------------------------------
// persistence

void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
    json doc = json::array();
    for (const auto& c : vocab.concepts) {
        doc.push_back({{"id", c.id},
                       {"name", c.name},
                       {"family", c.family},
                       {"render_spec",
                        {{"shape", to_string(c.render_spec.shape)},
                         {"texture", to_string(c.render_spec.texture)},
                         {"color", {c.render_spec.color[0], c.render_spec.color[1],
                                    c.render_spec.color[2]}},
                         {"size_min", c.render_spec.size_min},
                         {"size_max", c.render_spec.size_max},
                         {"marker", c.render_spec.marker}}}});
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot write vocabulary: " + path);
    f << doc.dump(2) << '\n';
}

Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read vocabulary: " + path);
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw IoError("vocabulary parse error: " + std::string(e.what()));
    }
    Vocabulary v;
    for (const auto& jc : doc) {
        Concept c;
        c.id = jc.at("id").get<int>();
        c.name = jc.at("name").get<std::string>();
        c.family = jc.at("family").get<std::string>();
        const auto& rs = jc.at("render_spec");
        c.render_spec.shape = shape_from_string(rs.at("shape").get<std::string>());
        c.render_spec.texture = texture_from_string(rs.at("texture").get<std::string>());
        for (int i = 0; i < 3; ++i) c.render_spec.color[i] = rs.at("color")[i].get<float>();
        c.render_spec.size_min = rs.at("size_min").get<float>();
        c.render_spec.size_max = rs.at("size_max").get<float>();
        c.render_spec.marker = rs.at("marker").get<bool>();
        v.concepts.push_back(std::move(c));
    }
    for (std::size_t i = 0; i < v.concepts.size(); ++i)
        if (v.concepts[i].id != static_cast<int>(i))
            throw IoError("vocabulary ids must be contiguous from 0");
    return v;
}

void save_corpus(const std::string& dir, const Vocabulary& vocab,
                 const std::vector<PromptTemplate>& templates, const CaptionedCorpus& corpus,
                 bool write_images) {
    fs::create_directories(dir);
    save_vocabulary((fs::path(dir) / "vocab.json").string(), vocab);

    json tdoc = json::array();
    for (const auto& t : templates) tdoc.push_back({{"id", t.id}, {"pattern", t.pattern}});
    std::ofstream tf(fs::path(dir) / "templates.json");
    tf << tdoc.dump(2) << '\n';

    std::vector<char> is_val(corpus.pairs.size(), 0);
    for (auto i : corpus.val) is_val[i] = 1;

    std::ofstream mf(fs::path(dir) / "manifest.jsonl");
    if (!mf) throw IoError("cannot write manifest in " + dir);
    if (write_images) fs::create_directories(fs::path(dir) / "images");
    for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
        const auto& p = corpus.pairs[i];
        json line = {{"id", p.id},
                     {"concept", vocab.by_id(p.prompt.concept_id).name},
                     {"template_id", p.prompt.template_id},
                     {"qualifiers", p.prompt.qualifier_tokens},
                     {"prompt_text", p.prompt.text},
                     {"split", is_val[i] ? "val" : "train"},
                     {"seed", p.image.seed}};
        mf << line.dump() << '\n';
        if (write_images)
            write_png((fs::path(dir) / "images" / (std::to_string(p.id) + ".png")).string(),
                      p.image);
    }
}

CaptionedCorpus load_corpus(const std::string& dir, const Vocabulary& vocab,
                            const std::vector<PromptTemplate>& templates, const Tokenizer& tok) {
    std::ifstream mf(fs::path(dir) / "manifest.jsonl");
    if (!mf) throw IoError("cannot read manifest in " + dir);
    CaptionedCorpus out;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError("manifest parse error: " + std::string(e.what()));
        }
        CaptionedPair pair;
        pair.id = j.at("id").get<std::uint64_t>();
        const Concept& c = vocab.by_name(j.at("concept").get<std::string>());
        std::uint64_t seed = j.at("seed").get<std::uint64_t>();
        pair.image = render_concept(vocab, c, seed);
        int tid = j.at("template_id").get<int>();
        if (tid < 0 || tid >= static_cast<int>(templates.size()))
            throw IoError("manifest template id out of range");
        std::vector<std::string> quals = j.at("qualifiers").get<std::vector<std::string>>();
        pair.prompt = make_prompt(vocab, tok, templates[static_cast<std::size_t>(tid)], c, quals);
        if (pair.prompt.text != j.at("prompt_text").get<std::string>())
            throw IoError("manifest prompt text mismatch for pair " + std::to_string(pair.id));
        bool val = j.at("split").get<std::string>() == "val";
        (val ? out.val : out.train).push_back(out.pairs.size());
        out.pairs.push_back(std::move(pair));
    }
    return out;
}

}  // namespace poisonlab::corpus
