#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "poisonlab/errors.hpp"

using namespace poisonlab;
using fixtures::templates;
using fixtures::tokenizer;
using fixtures::vocab;

namespace {

double pixel_dist(const ImageSample& a, const ImageSample& b) {
    return std::sqrt((a.pixels - b.pixels).squaredNorm());
}

}  // namespace

TEST_CASE("default vocabulary structure") {
    const auto& v = vocab();
    CHECK(v.concepts.size() >= 8);
    std::set<std::string> families;
    for (std::size_t i = 0; i < v.concepts.size(); ++i) {
        CHECK(v.concepts[i].id == static_cast<int>(i));  // contiguous ids
        families.insert(v.concepts[i].family);
    }
    CHECK(families.size() >= 3);
    // two texture-by-shape composites usable as shortcut candidates
    CHECK(v.contains("checker-disc"));
    CHECK(v.contains("stripe-square"));
    CHECK(v.by_name("disc").id == v.by_id(v.by_name("disc").id).id);
    CHECK_THROWS_AS((void)v.by_name("unicorn"), VocabularyError);
    CHECK_THROWS_AS((void)v.by_id(999), VocabularyError);
}

TEST_CASE("default templates cover the three query phrasings") {
    std::vector<std::string> rendered;
    for (const auto& t : templates()) rendered.push_back(t.render("disc", {}));
    CHECK(std::count(rendered.begin(), rendered.end(), "a photo of a disc") == 1);
    CHECK(std::count(rendered.begin(), rendered.end(), "an image of a disc") == 1);
    CHECK(std::count(rendered.begin(), rendered.end(), "a picture of a disc") == 1);
    CHECK(templates()[0].render("disc", {"small"}) == "a photo of a small disc");
    for (const auto& t : templates())
        CHECK(!tokenizer().encode(t.render("disc", {})).empty());
}

TEST_CASE("render_concept pixel range, label, and determinism") {
    auto img = corpus::render_concept(vocab(), vocab().by_name("disc"), 7);
    CHECK(img.pixels.size() == kImagePixels);
    CHECK(img.pixels.minCoeff() >= 0.0f);
    CHECK(img.pixels.maxCoeff() <= 1.0f);
    CHECK(img.concept_id == vocab().by_name("disc").id);
    CHECK(img.source == ImageSource::procedural);

    auto again = corpus::render_concept(vocab(), vocab().by_name("disc"), 7);
    CHECK(img.pixels == again.pixels);  // bit-identical

    auto other = corpus::render_concept(vocab(), vocab().by_name("disc"), 8);
    CHECK(img.pixels != other.pixels);  // differs in at least one pixel
}

TEST_CASE("render_concept rejects a concept outside the vocabulary") {
    corpus::Concept fake;
    fake.id = 42;
    fake.name = "fake";
    CHECK_THROWS_AS((void)corpus::render_concept(vocab(), fake, 1), VocabularyError);
}

TEST_CASE("make_variant_pool count, anchor, and jitter behavior") {
    const auto& target = vocab().by_name("checker-blob");
    auto pool = corpus::make_variant_pool(target, 20, corpus::JitterSpec{}, 1);
    CHECK(pool.size() == 20);
    auto pool2 = corpus::make_variant_pool(target, 20, corpus::JitterSpec{}, 1);
    CHECK(pool.anchor.pixels == pool2.anchor.pixels);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        CHECK(pool.pool[i].pixels == pool2.pool[i].pixels);
        CHECK(pool.pool[i].source == ImageSource::variant_pool);
    }

    corpus::JitterSpec none;
    none.translate = none.rotation = none.hue = none.scale = 0.0f;
    auto frozen = corpus::make_variant_pool(target, 5, none, 1);
    for (const auto& img : frozen.pool) CHECK(img.pixels == frozen.anchor.pixels);

    // default jitter produces genuinely distinct variants
    double mse = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < pool.size(); ++i)
        for (std::size_t j = i + 1; j < pool.size(); ++j) {
            mse += (pool.pool[i].pixels - pool.pool[j].pixels).squaredNorm() / kImagePixels;
            ++count;
        }
    CHECK(mse / count > 0.0);

    CHECK_THROWS_AS((void)corpus::make_variant_pool(target, 0, corpus::JitterSpec{}, 1),
                    ConfigError);
}

TEST_CASE("build_corpus counts, coverage, split, and determinism") {
    auto c = corpus::build_corpus(vocab(), 30, templates(), tokenizer(), 3, 0.25);
    const std::size_t expected = vocab().concepts.size() * 30;
    CHECK(c.pairs.size() == expected);
    CHECK(c.val.size() == expected / 10);
    CHECK(c.train.size() + c.val.size() == expected);

    // disjoint split
    std::set<std::size_t> train_set(c.train.begin(), c.train.end());
    for (auto i : c.val) CHECK(train_set.count(i) == 0);

    // every (concept, template) combination appears in train
    std::set<std::pair<int, int>> seen;
    for (auto i : c.train)
        seen.insert({c.pairs[i].prompt.concept_id, c.pairs[i].prompt.template_id});
    CHECK(seen.size() == vocab().concepts.size() * templates().size());

    auto c2 = corpus::build_corpus(vocab(), 30, templates(), tokenizer(), 3, 0.25);
    REQUIRE(c2.pairs.size() == c.pairs.size());
    for (std::size_t i = 0; i < c.pairs.size(); ++i) {
        CHECK(c.pairs[i].id == c2.pairs[i].id);
        CHECK(c.pairs[i].prompt.text == c2.pairs[i].prompt.text);
        CHECK(c.pairs[i].image.pixels == c2.pairs[i].image.pixels);
    }
    CHECK(c.train == c2.train);
    CHECK(c.val == c2.val);
}

TEST_CASE("build_corpus input validation") {
    CHECK_THROWS_AS(
        (void)corpus::build_corpus(vocab(), 2, templates(), tokenizer(), 0, 0.25),
        ConfigError);  // per_concept below template count
    CHECK_THROWS_AS(
        (void)corpus::build_corpus(corpus::Vocabulary{}, 10, templates(), tokenizer(), 0, 0.25),
        ConfigError);
    CHECK_THROWS_AS((void)corpus::build_corpus(vocab(), 10, {}, tokenizer(), 0, 0.25),
                    ConfigError);
}

TEST_CASE("prompt round-trips through the tokenizer") {
    auto p = fixtures::prompt_for("ring", 1, {"bright"});
    CHECK(p.text == "an image of a bright ring");
    CHECK(tokenizer().decode(p.tokens) == p.text);
    CHECK_THROWS_AS((void)tokenizer().encode("a photo of a zebra"), VocabularyError);
    CHECK_THROWS_AS((void)tokenizer().decode({-1}), VocabularyError);
    // purity: same inputs give the same prompt
    auto q = fixtures::prompt_for("ring", 1, {"bright"});
    CHECK(p.text == q.text);
    CHECK(p.tokens == q.tokens);
}

TEST_CASE("nearest-centroid pixel classifier separates the vocabulary") {
    auto c = corpus::build_corpus(vocab(), 30, templates(), tokenizer(), 11, 0.25);
    std::map<int, Eigen::VectorXf> centroid;
    std::map<int, int> count;
    for (auto i : c.train) {
        const auto& p = c.pairs[i];
        auto [it, fresh] = centroid.try_emplace(p.image.concept_id,
                                                Eigen::VectorXf::Zero(kImagePixels));
        it->second += p.image.pixels;
        count[p.image.concept_id]++;
    }
    for (auto& [id, v] : centroid) v /= static_cast<float>(count[id]);

    int correct = 0;
    for (auto i : c.val) {
        const auto& img = c.pairs[i].image;
        int best = -1;
        float best_d = 1e30f;
        for (const auto& [id, v] : centroid) {
            float d = (img.pixels - v).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = id;
            }
        }
        if (best == img.concept_id) ++correct;
    }
    CHECK(static_cast<double>(correct) / c.val.size() >= 0.8);
}

TEST_CASE("intra-family pixel distance is below inter-family distance") {
    // a handful of renderings per concept
    std::vector<ImageSample> imgs;
    for (const auto& c : vocab().concepts)
        for (int k = 0; k < 6; ++k) imgs.push_back(corpus::render_concept(vocab(), c, 100 + k));
    double intra = 0.0, inter = 0.0;
    int n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < imgs.size(); ++i)
        for (std::size_t j = i + 1; j < imgs.size(); ++j) {
            const auto& fi = vocab().by_id(imgs[i].concept_id).family;
            const auto& fj = vocab().by_id(imgs[j].concept_id).family;
            double d = pixel_dist(imgs[i], imgs[j]);
            if (fi == fj) {
                intra += d;
                ++n_intra;
            } else {
                inter += d;
                ++n_inter;
            }
        }
    CHECK(intra / n_intra < inter / n_inter);
}

TEST_CASE("corpus directory round trip") {
    auto dir = fixtures::temp_dir("corpus");
    auto c = corpus::build_corpus(vocab(), 6, templates(), tokenizer(), 21, 0.25);
    corpus::save_corpus(dir, vocab(), templates(), c, /*write_images=*/false);
    auto back = corpus::load_corpus(dir, vocab(), templates(), tokenizer());
    REQUIRE(back.pairs.size() == c.pairs.size());
    for (std::size_t i = 0; i < c.pairs.size(); ++i) {
        CHECK(back.pairs[i].id == c.pairs[i].id);
        CHECK(back.pairs[i].prompt.text == c.pairs[i].prompt.text);
        CHECK(back.pairs[i].image.pixels == c.pairs[i].image.pixels);  // re-rendered from seed
    }
    CHECK(back.train == c.train);
    CHECK(back.val == c.val);
}

TEST_CASE("vocabulary file round trip") {
    auto dir = fixtures::temp_dir("vocab");
    corpus::save_vocabulary(dir + "/vocab.json", vocab());
    auto back = corpus::load_vocabulary(dir + "/vocab.json");
    CHECK(back.hash() == vocab().hash());
    CHECK_THROWS_AS((void)corpus::load_vocabulary(dir + "/missing.json"), IoError);
}
