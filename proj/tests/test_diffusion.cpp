#include <cmath>
#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

using namespace poisonlab;
using fixtures::prompt_for;
using fixtures::tiny_base;
using fixtures::tiny_corpus;
using fixtures::tiny_schedule;
using fixtures::tiny_space;
using fixtures::vocab;

TEST_CASE("noise schedule invariants") {
    for (auto kind : {diffusion::ScheduleKind::linear, diffusion::ScheduleKind::cosine}) {
        auto s = diffusion::make_schedule(200, kind);
        CHECK(s.T == 200);
        for (int t = 0; t < s.T; ++t) {
            CHECK(s.betas[t] > 0.0f);
            CHECK(s.betas[t] < 1.0f);
            if (t > 0) CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
        }
        CHECK(s.alpha_bar(s.T) < 0.01f);
        CHECK(s.alpha_bar(0) == 1.0f);
    }
    // boundary: the smallest legal schedule
    auto two = diffusion::make_schedule(2, diffusion::ScheduleKind::linear);
    CHECK(two.T == 2);
    CHECK(two.alpha_bar(2) < 0.01f);

    // linear schedules start at beta_1 = 1e-4, so alpha_bar_1 = 0.9999
    auto lin = diffusion::make_schedule(200, diffusion::ScheduleKind::linear);
    CHECK(lin.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-6));

    CHECK_THROWS_AS((void)diffusion::make_schedule(1, diffusion::ScheduleKind::linear),
                    ConfigError);
}

TEST_CASE("forward noising is exactly invertible given the true noise") {
    // one effective step: noising x0 to x_t and solving back for the noise
    // must recover it, which is what an oracle denoiser would predict
    auto s = diffusion::make_schedule(2, diffusion::ScheduleKind::linear);
    auto img = corpus::render_concept(vocab(), vocab().by_name("disc"), 17);
    Rng rng(5);
    for (int t = 1; t <= 2; ++t) {
        float ab = s.alpha_bar(t);
        for (int i = 0; i < 20; ++i) {
            float x0 = img.pixels[i] * 2.0f - 1.0f;
            float eps = static_cast<float>(rng.normal());
            float xt = std::sqrt(ab) * x0 + std::sqrt(1.0f - ab) * eps;
            float recovered = (xt - std::sqrt(ab) * x0) / std::sqrt(1.0f - ab);
            CHECK(recovered == doctest::Approx(eps).epsilon(1e-5));
            // and the posterior identity: recovering x0 from (xt, eps)
            float x0_back = (xt - std::sqrt(1.0f - ab) * eps) / std::sqrt(ab);
            CHECK(x0_back == doctest::Approx(x0).epsilon(1e-4));
        }
    }
}

TEST_CASE("train_base learns and is reproducible") {
    CHECK(tiny_base().last_epoch_loss < tiny_base().first_epoch_loss);
    CHECK(tiny_base().role == diffusion::Role::base);

    diffusion::TrainHyper h;
    h.epochs = 1;
    h.batch = 16;
    h.width = 8;
    h.seed = 3;
    auto a = diffusion::train_base(tiny_corpus(), tiny_space(), tiny_schedule(), h);
    auto b = diffusion::train_base(tiny_corpus(), tiny_space(), tiny_schedule(), h);
    CHECK(a.params_hash() == b.params_hash());
    CHECK(a.id == b.id);
}

TEST_CASE("train_base refuses an unfrozen encoder") {
    embedding::EmbeddingSpace raw;
    diffusion::TrainHyper h;
    h.epochs = 1;
    CHECK_THROWS_AS((void)diffusion::train_base(tiny_corpus(), raw, tiny_schedule(), h),
                    ContractError);
}

TEST_CASE("sampling determinism and per-image seed independence") {
    auto p = prompt_for("disc");
    auto b1 = diffusion::sample(tiny_base(), p, 5, 900, 1.0f, tiny_space());
    auto b2 = diffusion::sample(tiny_base(), p, 5, 900, 1.0f, tiny_space());
    REQUIRE(b1.images.size() == 5);
    for (std::size_t k = 0; k < 5; ++k) CHECK(b1.images[k].pixels == b2.images[k].pixels);

    // image k of a batch equals the single image sampled at master_seed + k
    for (std::size_t k = 0; k < 5; ++k) {
        auto solo = diffusion::sample(tiny_base(), p, 1, 900 + k, 1.0f, tiny_space());
        CHECK(solo.images[0].pixels == b1.images[k].pixels);
    }

    for (const auto& img : b1.images) {
        CHECK(img.source == ImageSource::generated);
        CHECK(img.pixels.minCoeff() >= 0.0f);
        CHECK(img.pixels.maxCoeff() <= 1.0f);
    }
}

TEST_CASE("guidance changes the samples") {
    auto p = prompt_for("square");
    auto uncond = diffusion::sample(tiny_base(), p, 2, 31, 0.0f, tiny_space());
    auto cond = diffusion::sample(tiny_base(), p, 2, 31, 1.0f, tiny_space());
    CHECK(uncond.images[0].pixels != cond.images[0].pixels);
    CHECK_THROWS_AS((void)diffusion::sample(tiny_base(), p, 0, 31, 1.0f, tiny_space()),
                    ConfigError);
}

TEST_CASE("fine_tune identity, role transitions, and validation") {
    std::vector<std::pair<ImageSample, corpus::Prompt>> pairs;
    for (int k = 0; k < 3; ++k)
        pairs.emplace_back(corpus::render_concept(vocab(), vocab().by_name("ring"), 60 + k),
                           prompt_for("ring"));

    diffusion::FineTuneHyper zero = diffusion::FineTuneHyper::desk_profile();
    zero.epochs = 0;
    auto frozen = diffusion::fine_tune(tiny_base(), pairs, tiny_space(), zero,
                                       diffusion::Role::poisoned, "noop");
    CHECK(frozen.params_hash() == tiny_base().params_hash());  // bit-exact identity
    CHECK(frozen.role == diffusion::Role::poisoned);
    CHECK(frozen.lineage.find(tiny_base().id) != std::string::npos);

    diffusion::FineTuneHyper h = diffusion::FineTuneHyper::desk_profile();
    h.epochs = 1;
    auto tuned = diffusion::fine_tune(tiny_base(), pairs, tiny_space(), h,
                                      diffusion::Role::sanitized, "tune");
    CHECK(tuned.params_hash() != tiny_base().params_hash());

    CHECK_THROWS_AS((void)diffusion::fine_tune(tiny_base(), {}, tiny_space(), h,
                                               diffusion::Role::poisoned, "empty"),
                    ConfigError);
    // base -> defended is not a legal role transition
    CHECK_THROWS_AS((void)diffusion::fine_tune(tiny_base(), pairs, tiny_space(), h,
                                               diffusion::Role::defended, "bad"),
                    ContractError);
    // poisoned -> poisoned is not legal either
    CHECK_THROWS_AS((void)diffusion::fine_tune(frozen, pairs, tiny_space(), h,
                                               diffusion::Role::poisoned, "bad"),
                    ContractError);
}

TEST_CASE("fine_tune and sample refuse a mismatched encoder") {
    embedding::EncoderHyper eh;
    eh.dim = 32;
    eh.epochs = 1;
    eh.batch = 32;
    eh.seed = 123;  // different seed: different config hash
    auto other = embedding::train_joint_encoder(tiny_corpus(), vocab(), fixtures::tokenizer(), eh);
    std::vector<std::pair<ImageSample, corpus::Prompt>> pairs = {
        {corpus::render_concept(vocab(), vocab().by_name("ring"), 1), prompt_for("ring")}};
    diffusion::FineTuneHyper h = diffusion::FineTuneHyper::desk_profile();
    h.epochs = 1;
    CHECK_THROWS_AS((void)diffusion::fine_tune(tiny_base(), pairs, other, h,
                                               diffusion::Role::poisoned, "mismatch"),
                    ContractError);
    CHECK_THROWS_AS((void)diffusion::sample(tiny_base(), prompt_for("disc"), 1, 1, 1.0f, other),
                    ContractError);
}

TEST_CASE("fine-tune profiles record the reference recipe") {
    auto paper = diffusion::FineTuneHyper::paper_profile();
    CHECK(paper.lr == doctest::Approx(1e-5));
    CHECK(paper.batch == 1);
    CHECK(paper.grad_accum == 4);
    CHECK(paper.epochs == 40);
    auto desk = diffusion::FineTuneHyper::desk_profile();
    CHECK(desk.lr == doctest::Approx(1e-4));
    CHECK(desk.epochs == 40);
}

TEST_CASE("checkpoint round trip and corruption guard") {
    auto dir = fixtures::temp_dir("ckpt");
    auto path = dir + "/model.bin";
    diffusion::save_checkpoint(path, tiny_base());
    auto back = diffusion::load_checkpoint(path);
    CHECK(back.params_hash() == tiny_base().params_hash());
    CHECK(back.role == tiny_base().role);
    CHECK(back.id == tiny_base().id);
    CHECK(back.lineage == tiny_base().lineage);
    CHECK(back.schedule.T == tiny_base().schedule.T);
    CHECK(back.config_hash == tiny_base().config_hash);

    // a loaded checkpoint samples identically
    auto p = prompt_for("disc");
    CHECK(diffusion::sample(back, p, 1, 4, 1.0f, tiny_space()).images[0].pixels ==
          diffusion::sample(tiny_base(), p, 1, 4, 1.0f, tiny_space()).images[0].pixels);

    CHECK_THROWS_AS((void)diffusion::load_checkpoint(dir + "/missing.bin"), IoError);
    // truncated file
    {
        std::string data;
        {
            std::ifstream f(path, std::ios::binary);
            data.assign(std::istreambuf_iterator<char>(f), {});
        }
        std::ofstream out(dir + "/short.bin", std::ios::binary);
        out.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
    }
    CHECK_THROWS_AS((void)diffusion::load_checkpoint(dir + "/short.bin"), IoError);
}
