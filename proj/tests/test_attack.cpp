#include <algorithm>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "poisonlab/attack.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

using namespace poisonlab;
using fixtures::prompt_for;
using fixtures::templates;
using fixtures::tiny_base;
using fixtures::tiny_pool;
using fixtures::tiny_space;
using fixtures::tokenizer;
using fixtures::vocab;

namespace {

std::set<std::uint64_t> seeds_of(const std::vector<ImageSample>& imgs) {
    std::set<std::uint64_t> s;
    for (const auto& img : imgs) s.insert(img.seed);
    return s;
}

}  // namespace

TEST_CASE("retrieve_variants draws from the eligible pool deterministically") {
    attack::RetrievalSpec spec{0.0, 10};  // threshold 0 admits the whole pool
    auto a = attack::retrieve_variants(tiny_pool(), tiny_pool().anchor, tiny_space(), spec, 42);
    auto b = attack::retrieve_variants(tiny_pool(), tiny_pool().anchor, tiny_space(), spec, 42);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].pixels == b[i].pixels);

    auto pool_seeds = seeds_of(tiny_pool().pool);
    for (const auto& img : a) CHECK(pool_seeds.count(img.seed) == 1);

    // a different seed gives a different draw
    auto c = attack::retrieve_variants(tiny_pool(), tiny_pool().anchor, tiny_space(), spec, 43);
    CHECK(seeds_of(a) != seeds_of(c));
}

TEST_CASE("smaller draws are prefixes of larger ones under the same seed") {
    attack::RetrievalSpec small{0.0, 5}, large{0.0, 20};
    auto a = attack::retrieve_variants(tiny_pool(), tiny_pool().anchor, tiny_space(), small, 7);
    auto b = attack::retrieve_variants(tiny_pool(), tiny_pool().anchor, tiny_space(), large, 7);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].seed == b[i].seed);
}

TEST_CASE("retrieved variants satisfy the threshold post hoc") {
    // pick a threshold that some but not all pool members pass
    auto anchor_emb = embedding::embed_image(tiny_space(), tiny_pool().anchor);
    std::vector<double> sims;
    for (const auto& img : tiny_pool().pool)
        sims.push_back(embedding::cosine_sim(anchor_emb,
                                             embedding::embed_image(tiny_space(), img)));
    std::vector<double> sorted = sims;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double beta = sorted[sorted.size() / 2];  // median: half the pool passes
    int passing = static_cast<int>(std::count_if(sims.begin(), sims.end(),
                                                 [&](double s) { return s >= beta; }));
    attack::RetrievalSpec spec{beta, std::min(passing, 8)};
    auto drawn = attack::retrieve_variants(tiny_pool(), tiny_pool().anchor, tiny_space(), spec, 1);
    for (const auto& img : drawn) {
        double s = embedding::cosine_sim(anchor_emb, embedding::embed_image(tiny_space(), img));
        CHECK(s >= beta);
    }
}

TEST_CASE("retrieval shortfall is a hard error naming the counts") {
    attack::RetrievalSpec spec{0.0, static_cast<int>(tiny_pool().size()) + 1};
    try {
        (void)attack::retrieve_variants(tiny_pool(), tiny_pool().anchor, tiny_space(), spec, 1);
        FAIL("expected InsufficientVariantsError");
    } catch (const InsufficientVariantsError& e) {
        CHECK(e.requested == static_cast<int>(tiny_pool().size()) + 1);
        CHECK(e.available == static_cast<int>(tiny_pool().size()));
        CHECK(std::string(e.what()).find("beta") != std::string::npos);
    }

    // threshold above every similarity: nothing is eligible
    attack::RetrievalSpec too_high{1.0, 1};
    auto anchor_emb = embedding::embed_image(tiny_space(), tiny_pool().anchor);
    int at_one = 0;
    for (const auto& img : tiny_pool().pool)
        if (embedding::cosine_sim(anchor_emb, embedding::embed_image(tiny_space(), img)) >= 1.0)
            ++at_one;
    if (at_one == 0)
        CHECK_THROWS_AS((void)attack::retrieve_variants(tiny_pool(), tiny_pool().anchor,
                                                        tiny_space(), too_high, 1),
                        InsufficientVariantsError);

    CHECK_THROWS_AS((void)attack::retrieve_variants(corpus::VariantCorpus{}, tiny_pool().anchor,
                                                    tiny_space(), spec, 1),
                    ConfigError);
    attack::RetrievalSpec bad_beta{1.5, 1};
    CHECK_THROWS_AS((void)attack::retrieve_variants(tiny_pool(), tiny_pool().anchor, tiny_space(),
                                                    bad_beta, 1),
                    ConfigError);
}

TEST_CASE("compose_prompt_set repeats one exact prompt") {
    auto set = attack::compose_prompt_set(vocab(), tokenizer(), vocab().by_name("disc"),
                                          templates()[0], 20);
    REQUIRE(set.size() == 20);
    for (const auto& p : set) CHECK(p.text == "a photo of a disc");

    auto one = attack::compose_prompt_set(vocab(), tokenizer(), vocab().by_name("disc"),
                                          templates()[2], 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].text == "a picture of a disc");

    CHECK_THROWS_AS((void)attack::compose_prompt_set(vocab(), tokenizer(),
                                                     vocab().by_name("disc"), templates()[0], 0),
                    ConfigError);
}

TEST_CASE("build_poison_dataset zips retrieval with the targeted prompt") {
    attack::RetrievalSpec spec{0.0, 6};
    auto d = attack::build_poison_dataset(tiny_pool(), tiny_pool().anchor,
                                          vocab().by_name("disc"), templates()[0], vocab(),
                                          tokenizer(), tiny_space(), spec, 9);
    CHECK(d.size() == 6);
    CHECK(d.images.size() == d.prompts.size());
    for (const auto& p : d.prompts) CHECK(p.text == "a photo of a disc");
    CHECK(d.targeted_concept.name == "disc");
    CHECK(d.targeted_image.pixels == tiny_pool().anchor.pixels);
    CHECK(d.digest() != 0);

    // size-3 build under the same seed is a prefix-compatible subset
    attack::RetrievalSpec small{0.0, 3};
    auto d3 = attack::build_poison_dataset(tiny_pool(), tiny_pool().anchor,
                                           vocab().by_name("disc"), templates()[0], vocab(),
                                           tokenizer(), tiny_space(), small, 9);
    auto big_seeds = seeds_of(d.images);
    for (const auto& img : d3.images) CHECK(big_seeds.count(img.seed) == 1);
}

TEST_CASE("basic_attack role contracts") {
    attack::PoisonDataset empty;
    empty.targeted_concept = vocab().by_name("disc");
    auto hyper = diffusion::FineTuneHyper::desk_profile();
    hyper.epochs = 1;
    CHECK_THROWS_AS((void)attack::basic_attack(tiny_base(), empty, tiny_space(), hyper),
                    ConfigError);

    attack::RetrievalSpec spec{0.0, 2};
    auto d = attack::build_poison_dataset(tiny_pool(), tiny_pool().anchor,
                                          vocab().by_name("disc"), templates()[0], vocab(),
                                          tokenizer(), tiny_space(), spec, 1);
    auto poisoned = attack::basic_attack(tiny_base(), d, tiny_space(), hyper);
    CHECK(poisoned.role == diffusion::Role::poisoned);
    CHECK(poisoned.lineage.find(tiny_base().id) != std::string::npos);

    // a non-base checkpoint is rejected
    CHECK_THROWS_AS((void)attack::basic_attack(poisoned, d, tiny_space(), hyper), ContractError);
}

TEST_CASE("build_sanitize_dataset validation and defaults") {
    std::vector<ImageSample> clean;
    for (int k = 0; k < 12; ++k)
        clean.push_back(corpus::render_concept(vocab(), vocab().by_name("ring"), 70 + k));

    auto one = attack::build_sanitize_dataset(vocab(), tokenizer(), vocab().by_name("ring"),
                                              clean, templates()[0], 1);
    CHECK(one.size() == 1);
    CHECK(one.prompts[0].text == "a photo of a ring");

    auto ten = attack::build_sanitize_dataset(vocab(), tokenizer(), vocab().by_name("ring"),
                                              clean, templates()[0], 10);
    CHECK(ten.size() == 10);

    // mislabeled image
    CHECK_THROWS_AS((void)attack::build_sanitize_dataset(vocab(), tokenizer(),
                                                         vocab().by_name("disc"), clean,
                                                         templates()[0], 1),
                    ContractError);
    // variant-pool images are not clean samples
    std::vector<ImageSample> tainted = {tiny_pool().pool[0]};
    tainted[0].concept_id = vocab().by_name("ring").id;
    CHECK_THROWS_AS((void)attack::build_sanitize_dataset(vocab(), tokenizer(),
                                                         vocab().by_name("ring"), tainted,
                                                         templates()[0], 1),
                    ContractError);
    CHECK_THROWS_AS((void)attack::build_sanitize_dataset(vocab(), tokenizer(),
                                                         vocab().by_name("ring"), clean,
                                                         templates()[0], 100),
                    ConfigError);
}

TEST_CASE("stealthy_attack rejects sanitizing the target itself") {
    attack::RetrievalSpec spec{0.0, 2};
    auto d = attack::build_poison_dataset(tiny_pool(), tiny_pool().anchor,
                                          vocab().by_name("disc"), templates()[0], vocab(),
                                          tokenizer(), tiny_space(), spec, 1);
    std::vector<ImageSample> clean = {
        corpus::render_concept(vocab(), vocab().by_name("disc"), 80)};
    auto bad = attack::build_sanitize_dataset(vocab(), tokenizer(), vocab().by_name("disc"),
                                              clean, templates()[0], 1);
    auto hyper = diffusion::FineTuneHyper::desk_profile();
    hyper.epochs = 1;
    CHECK_THROWS_AS((void)attack::stealthy_attack(tiny_base(), d, bad, tiny_space(), hyper),
                    ConfigError);

    std::vector<ImageSample> ring = {
        corpus::render_concept(vocab(), vocab().by_name("ring"), 81)};
    auto ok = attack::build_sanitize_dataset(vocab(), tokenizer(), vocab().by_name("ring"), ring,
                                             templates()[0], 1);
    auto m = attack::stealthy_attack(tiny_base(), d, ok, tiny_space(), hyper);
    CHECK(m.role == diffusion::Role::sanitized);
}

TEST_CASE("extract_shortcut_candidates ordering, baselines, and saturation") {
    std::vector<corpus::Concept> baselines = {vocab().by_name("disc"), vocab().by_name("ring")};
    auto cands = attack::extract_shortcut_candidates(tiny_pool().anchor, vocab(), tiny_space(), 3,
                                                     baselines, templates()[0], tokenizer());
    CHECK(cands.size() >= 3);
    CHECK(cands.size() <= vocab().concepts.size());
    auto has = [&](const std::string& name) {
        return std::any_of(cands.begin(), cands.end(),
                           [&](const corpus::Concept& c) { return c.name == name; });
    };
    CHECK(has("disc"));  // baselines always present
    CHECK(has("ring"));

    // descending similarity order
    auto anchor_emb = embedding::embed_image(tiny_space(), tiny_pool().anchor);
    double prev = 2.0;
    for (const auto& c : cands) {
        auto t = embedding::embed_text(
            tiny_space(), corpus::make_prompt(vocab(), tokenizer(), templates()[0], c));
        double s = embedding::cosine_sim(anchor_emb, t);
        CHECK(s <= prev + 1e-12);
        prev = s;
    }

    // saturation: k >= vocabulary size returns every concept exactly once
    auto all = attack::extract_shortcut_candidates(tiny_pool().anchor, vocab(), tiny_space(), 100,
                                                   {}, templates()[0], tokenizer());
    CHECK(all.size() == vocab().concepts.size());
    std::set<int> ids;
    for (const auto& c : all) ids.insert(c.id);
    CHECK(ids.size() == vocab().concepts.size());

    CHECK_THROWS_AS((void)attack::extract_shortcut_candidates(tiny_pool().anchor, vocab(),
                                                              tiny_space(), 0, {}, templates()[0],
                                                              tokenizer()),
                    ConfigError);
}

TEST_CASE("select_shortcut scores failures as zero and picks the argmax") {
    auto hyper = diffusion::FineTuneHyper::desk_profile();
    hyper.epochs = 1;

    // single candidate is trivially selected
    std::vector<corpus::Concept> one = {vocab().by_name("disc")};
    attack::RetrievalSpec small{0.0, 2};
    auto picked = attack::select_shortcut(tiny_base(), tiny_pool(), tiny_pool().anchor, one,
                                          small, templates()[0], vocab(), tokenizer(),
                                          tiny_space(), hyper, 2, 1.0f, 5);
    CHECK(picked.selected.name == "disc");
    REQUIRE(picked.scores.size() == 1);

    // an impossible retrieval spec fails every member; scores are all zero and
    // the first candidate wins by tie order, without aborting the run
    attack::RetrievalSpec impossible{1.0, static_cast<int>(tiny_pool().size()) + 5};
    std::vector<corpus::Concept> two = {vocab().by_name("square"), vocab().by_name("disc")};
    auto fallback = attack::select_shortcut(tiny_base(), tiny_pool(), tiny_pool().anchor, two,
                                            impossible, templates()[0], vocab(), tokenizer(),
                                            tiny_space(), hyper, 2, 1.0f, 5);
    CHECK(fallback.scores == std::vector<double>{0.0, 0.0});
    CHECK(fallback.selected.name == "square");

    CHECK_THROWS_AS((void)attack::select_shortcut(tiny_base(), tiny_pool(), tiny_pool().anchor,
                                                  {}, small, templates()[0], vocab(), tokenizer(),
                                                  tiny_space(), hyper, 2, 1.0f, 5),
                    ConfigError);
}

TEST_CASE("defense_finetune contracts") {
    attack::RetrievalSpec spec{0.0, 2};
    auto d = attack::build_poison_dataset(tiny_pool(), tiny_pool().anchor,
                                          vocab().by_name("disc"), templates()[0], vocab(),
                                          tokenizer(), tiny_space(), spec, 1);
    auto hyper = diffusion::FineTuneHyper::desk_profile();
    hyper.epochs = 1;
    auto poisoned = attack::basic_attack(tiny_base(), d, tiny_space(), hyper);

    std::vector<std::pair<ImageSample, corpus::Prompt>> pairs;
    for (int k = 0; k < 3; ++k)
        pairs.emplace_back(corpus::render_concept(vocab(), vocab().by_name("square"), 90 + k),
                           prompt_for("square"));
    auto defended = attack::defense_finetune(poisoned, pairs, vocab().by_name("disc"),
                                             tiny_space(), hyper);
    CHECK(defended.role == diffusion::Role::defended);

    // pairs mentioning the targeted concept are rejected
    std::vector<std::pair<ImageSample, corpus::Prompt>> target_pairs = {
        {corpus::render_concept(vocab(), vocab().by_name("disc"), 95), prompt_for("disc")}};
    CHECK_THROWS_AS((void)attack::defense_finetune(poisoned, target_pairs,
                                                   vocab().by_name("disc"), tiny_space(), hyper),
                    ConfigError);
    // only poisoned/sanitized checkpoints can be defended
    CHECK_THROWS_AS((void)attack::defense_finetune(tiny_base(), pairs, vocab().by_name("disc"),
                                                   tiny_space(), hyper),
                    ContractError);
}
