#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/metrics.hpp"
#include "poisonlab/paper_reference.hpp"
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

diffusion::GenerationBatch batch_of(const std::vector<ImageSample>& imgs) {
    diffusion::GenerationBatch b;
    b.images = imgs;
    b.prompt = prompt_for("disc");
    return b;
}

std::vector<ImageSample> random_images(int n, std::uint64_t seed) {
    std::vector<ImageSample> out;
    for (int k = 0; k < n; ++k)
        out.push_back(corpus::render_concept(
            vocab(), vocab().by_id(static_cast<int>((seed + k) % vocab().concepts.size())),
            seed * 100 + k));
    return out;
}

// independent matrix-sqrt route: sandwich with sqrt(S2) instead of sqrt(S1)
double fid_oracle(const embedding::FeatureStats& ref, const embedding::FeatureStats& gen) {
    const Eigen::Index d = ref.mean.size();
    const double eps = 1e-6;
    Eigen::MatrixXd s1 = ref.cov + eps * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd s2 = gen.cov + eps * Eigen::MatrixXd::Identity(d, d);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s2);
    Eigen::MatrixXd b =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        es.eigenvectors().transpose();
    Eigen::MatrixXd inner = b * s1 * b;
    inner = 0.5 * (inner + inner.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(inner);
    double tr_sqrt = es2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    return (ref.mean - gen.mean).squaredNorm() + ref.cov.trace() + gen.cov.trace() - 2.0 * tr_sqrt;
}

embedding::FeatureStats random_stats(int d, std::uint64_t seed) {
    Rng rng(seed);
    embedding::FeatureStats s;
    s.mean.resize(d);
    Eigen::MatrixXd r(d, d);
    for (int i = 0; i < d; ++i) {
        s.mean[i] = rng.normal();
        for (int j = 0; j < d; ++j) r(i, j) = rng.normal();
    }
    s.cov = r * r.transpose() / d;
    s.count = 50;
    return s;
}

}  // namespace

TEST_CASE("poison_effect identities and brute-force equivalence") {
    auto anchor = tiny_pool().anchor;
    CHECK(metrics::poison_effect(batch_of({anchor, anchor, anchor}), anchor, tiny_space()) ==
          doctest::Approx(1.0).epsilon(1e-6));

    auto single = random_images(1, 3);
    double direct = embedding::cosine_sim(embedding::embed_image(tiny_space(), single[0]),
                                          embedding::embed_image(tiny_space(), anchor));
    CHECK(metrics::poison_effect(batch_of(single), anchor, tiny_space()) ==
          doctest::Approx(direct).epsilon(1e-9));

    auto imgs = random_images(12, 5);
    double brute = 0.0;
    for (const auto& img : imgs)
        brute += embedding::cosine_sim(embedding::embed_image(tiny_space(), img),
                                       embedding::embed_image(tiny_space(), anchor));
    brute /= static_cast<double>(imgs.size());
    CHECK(std::abs(metrics::poison_effect(batch_of(imgs), anchor, tiny_space()) - brute) < 1e-6);

    CHECK_THROWS_AS((void)metrics::poison_effect(batch_of({}), anchor, tiny_space()),
                    ContractError);
}

TEST_CASE("prompt_alignment brute-force equivalence and discrimination") {
    auto imgs = random_images(10, 7);
    auto q = prompt_for("ring");
    double brute = 0.0;
    for (const auto& img : imgs)
        brute += embedding::cosine_sim(embedding::embed_image(tiny_space(), img),
                                       embedding::embed_text(tiny_space(), q));
    brute /= static_cast<double>(imgs.size());
    CHECK(std::abs(metrics::prompt_alignment(batch_of(imgs), q, tiny_space()) - brute) < 1e-6);

    // clean renderings of a concept align better with their own prompt
    std::vector<ImageSample> discs;
    for (int k = 0; k < 8; ++k)
        discs.push_back(corpus::render_concept(vocab(), vocab().by_name("disc"), 300 + k));
    double own = metrics::prompt_alignment(batch_of(discs), prompt_for("disc"), tiny_space());
    double other = metrics::prompt_alignment(batch_of(discs), prompt_for("cross"), tiny_space());
    CHECK(own > other);

    CHECK_THROWS_AS((void)metrics::prompt_alignment(batch_of({}), q, tiny_space()),
                    ContractError);
}

TEST_CASE("zero_shot_accuracy degenerate and error cases") {
    std::vector<ImageSample> imgs = random_images(5, 11);
    corpus::Vocabulary lone;
    lone.concepts.push_back(vocab().by_name("disc"));
    lone.concepts[0].id = 0;
    auto tok = corpus::Tokenizer::for_vocabulary(lone, templates(), {});
    CHECK(metrics::zero_shot_accuracy(batch_of(imgs), lone.concepts[0], lone, templates()[0], tok,
                                      tiny_space()) == 1.0);

    corpus::Concept outsider;
    outsider.id = 0;
    outsider.name = "nothing";
    CHECK_THROWS_AS((void)metrics::zero_shot_accuracy(batch_of(imgs), outsider, vocab(),
                                                      templates()[0], tokenizer(), tiny_space()),
                    ConfigError);
    CHECK_THROWS_AS((void)metrics::zero_shot_accuracy(batch_of({}), vocab().by_name("disc"),
                                                      vocab(), templates()[0], tokenizer(),
                                                      tiny_space()),
                    ContractError);
}

TEST_CASE("fid identities") {
    auto s = random_stats(5, 1);
    CHECK(metrics::fid(s, s) == doctest::Approx(0.0).epsilon(1e-4));

    // identity covariances with offset means: fid equals the squared offset
    embedding::FeatureStats a, b;
    a.mean = Eigen::VectorXd::Zero(5);
    b.mean = Eigen::VectorXd::Zero(5);
    b.mean[0] = 2.0;
    b.mean[3] = -1.0;
    a.cov = Eigen::MatrixXd::Identity(5, 5);
    b.cov = Eigen::MatrixXd::Identity(5, 5);
    a.count = b.count = 10;
    CHECK(metrics::fid(a, b) == doctest::Approx(5.0).epsilon(1e-4));

    // symmetry and the mean-shift monotonicity
    auto x = random_stats(5, 2);
    auto y = random_stats(5, 3);
    CHECK(std::abs(metrics::fid(x, y) - metrics::fid(y, x)) < 1e-6);
    auto shifted = y;
    shifted.mean.array() += 3.0;
    double base = metrics::fid(x, y);
    // an isotropic mean shift moves the means strictly apart here
    CHECK((x.mean - shifted.mean).squaredNorm() > (x.mean - y.mean).squaredNorm());
    CHECK(metrics::fid(x, shifted) > base);
}

TEST_CASE("fid matches an independent matrix-sqrt oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto a = random_stats(5, 100 + seed);
        auto b = random_stats(5, 200 + seed);
        CHECK(std::abs(metrics::fid(a, b) - fid_oracle(a, b)) < 1e-6);
    }
}

TEST_CASE("fid input validation") {
    auto a = random_stats(5, 1);
    auto b = random_stats(6, 2);
    CHECK_THROWS_AS((void)metrics::fid(a, b), ContractError);
    auto c = random_stats(5, 3);
    c.count = 1;
    CHECK_THROWS_AS((void)metrics::fid(a, c), ContractError);
}

TEST_CASE("conceptual_similarity symmetry and role guard") {
    auto sampler = metrics::direct_sampler(tiny_space());
    auto pa = prompt_for("disc");
    auto pb = prompt_for("square");
    double ab = metrics::conceptual_similarity(tiny_base(), pa, pb, tiny_space(), 4, 2, 17, 1.0f,
                                               sampler);
    double ba = metrics::conceptual_similarity(tiny_base(), pb, pa, tiny_space(), 4, 2, 17, 1.0f,
                                               sampler);
    CHECK(ab == ba);  // seeds follow the prompt text, not the argument slot

    // a non-base checkpoint is rejected
    auto hyper = diffusion::FineTuneHyper::desk_profile();
    hyper.epochs = 0;
    auto poisoned = diffusion::fine_tune(tiny_base(), {{tiny_pool().anchor, pa}}, tiny_space(),
                                         hyper, diffusion::Role::poisoned, "role-only");
    CHECK_THROWS_AS((void)metrics::conceptual_similarity(poisoned, pa, pb, tiny_space(), 2, 1, 1,
                                                         1.0f, sampler),
                    ContractError);
}

TEST_CASE("concept_sim_matrix is symmetric with dominant diagonal") {
    auto sampler = metrics::direct_sampler(tiny_space());
    std::vector<corpus::Concept> cs = {vocab().by_name("disc"), vocab().by_name("ring"),
                                       vocab().by_name("square")};
    auto m = metrics::concept_sim_matrix(tiny_base(), cs, templates()[0], vocab(), tokenizer(),
                                         tiny_space(), 4, 1, 23, 1.0f, sampler);
    REQUIRE(m.values.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(m.values[i][j] == m.values[j][i]);
    // diagonal dominance needs a well-trained generator and is asserted by
    // the acceptance suite on the full-size model
}

TEST_CASE("side_effect_matrix shape and seed discipline") {
    auto sampler = metrics::direct_sampler(tiny_space());
    std::vector<corpus::Concept> cs = {vocab().by_name("disc"), vocab().by_name("ring")};
    auto a = metrics::side_effect_matrix(tiny_base(), cs, tiny_pool().anchor, templates()[0],
                                         vocab(), tokenizer(), tiny_space(), 3, 7, 1.0f, sampler);
    auto b = metrics::side_effect_matrix(tiny_base(), cs, tiny_pool().anchor, templates()[0],
                                         vocab(), tokenizer(), tiny_space(), 3, 7, 1.0f, sampler);
    REQUIRE(a.size() == 2);
    CHECK(a[0].concept_.name == "disc");
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].effect == b[i].effect);

    CHECK_THROWS_AS((void)metrics::side_effect_matrix(tiny_base(), {}, tiny_pool().anchor,
                                                      templates()[0], vocab(), tokenizer(),
                                                      tiny_space(), 3, 7, 1.0f, sampler),
                    ConfigError);
}

TEST_CASE("spearman rank correlation with tie averaging") {
    CHECK(metrics::spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(metrics::spearman({1, 2, 3, 4}, {40, 30, 20, 10}) == doctest::Approx(-1.0));
    CHECK(metrics::spearman({1, 2, 3, 4}, {5, 5, 5, 5}) == 0.0);  // zero variance
    // hand-checked with tie-averaged ranks: a={1,2,2,4} -> ranks {0,1.5,1.5,3}
    // against b={1,2,3,4} -> ranks {0,1,2,3}; rho = 0.9486832980505138
    CHECK(metrics::spearman({1, 2, 2, 4}, {1, 2, 3, 4}) ==
          doctest::Approx(0.9486832980505138).epsilon(1e-12));
    CHECK_THROWS_AS((void)metrics::spearman({1}, {1}), ConfigError);
    CHECK_THROWS_AS((void)metrics::spearman({1, 2}, {1, 2, 3}), ConfigError);
}

TEST_CASE("report serialization carries fixed fields and display values") {
    metrics::MetricsReport r;
    r.poison_effect = -0.25;
    r.prompt_alignment = 0.5;
    r.zero_shot_acc = 0.75;
    r.fid = 1.5;
    r.context.model_id = "m1";
    r.context.prompt = "a photo of a disc";
    r.context.n = 10;
    r.context.master_seed = 42;
    r.context.ref_count = 100;
    auto j = metrics::report_to_json(r);
    CHECK(j.at("poison_effect") == -0.25);
    CHECK(j.at("prompt_alignment") == 0.5);
    CHECK(j.at("zero_shot_acc") == 0.75);
    CHECK(j.at("fid") == 1.5);
    // negative similarities clamp to zero in the display percentage only
    CHECK(j.at("display").at("poison_effect_pct") == 0.0);
    CHECK(j.at("display").at("prompt_alignment_pct") == 50.0);
    CHECK(j.at("context").at("model_id") == "m1");
    CHECK(j.at("context").at("n") == 10);
    CHECK(j.at("context").at("fid_ref_count") == 100);
    CHECK(j.at("paper_reference").is_array());
    CHECK(!j.at("paper_reference").empty());
}

TEST_CASE("reference constant table") {
    auto t = metrics::load_paper_reference();
    CHECK(t.value("baseline_fid") == doctest::Approx(40.404));
    CHECK(t.value("poisoned_fid") == doctest::Approx(91.853));
    CHECK(t.value("sanitized_fid") == doctest::Approx(49.375));
    CHECK(t.value("target_similarity_dp5_pct") == doctest::Approx(77.31));
    CHECK(t.value("fid_increase_reduction_pct") == doctest::Approx(82.47));
    CHECK(t.value("shortcut_effect_pct") == doctest::Approx(84.86));
    CHECK(t.value("non_shortcut_effect_pct") == doctest::Approx(49.32));
    for (const auto& c : t.constants) CHECK(!c.citation.empty());
    CHECK_THROWS_AS((void)t.value("no-such-constant"), ConfigError);

    CHECK_THROWS_AS((void)metrics::parse_paper_reference("{not json"), IoError);
    CHECK_THROWS_AS((void)metrics::parse_paper_reference("[]"), IoError);
    CHECK_THROWS_AS((void)metrics::parse_paper_reference(
                        R"({"constants": [{"name": "x"}]})"),
                    IoError);
}
