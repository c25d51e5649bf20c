#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/embedding.hpp"
#include "poisonlab/nn.hpp"

namespace poisonlab::diffusion {

enum class ScheduleKind { linear, cosine };
std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

struct NoiseSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::linear;
    Eigen::VectorXf betas;       // 1-indexed conceptually; betas[t-1]
    Eigen::VectorXf alphas;      // 1 - betas
    Eigen::VectorXf alpha_bars;  // cumulative products, strictly decreasing

    float alpha_bar(int t) const { return t == 0 ? 1.0f : alpha_bars[t - 1]; }
};

// Linear: beta_1 = 1e-4 with the endpoint scaled so the terminal alpha_bar
// stays below 0.01 at any T. Cosine: squared-cosine alpha_bar profile.
NoiseSchedule make_schedule(int T, ScheduleKind kind);

enum class Role { base, poisoned, sanitized, defended };
std::string to_string(Role r);
Role role_from_string(const std::string& s);

// conv + feature-wise modulation from the context vector + SiLU
struct FilmBlock {
    nn::Conv3x3 conv;
    nn::Linear film;
    nn::SiLU act;
    nn::Mat pre_film_, scale_;
    int ch = 0, how_ = 0, batch_ = 0;

    void init(int cin, int cout, int stride, Rng& rng);
    nn::Mat forward(const nn::Mat& x, int h, int w, int batch, const nn::Mat& ctx);
    nn::Mat backward(const nn::Mat& dy, nn::Mat& dctx);
    void params(std::vector<nn::ParamRef>& refs);
};

// Small U-Net-style denoiser: 2 down / 2 up blocks, timestep embedding,
// conditioning via FiLM from the frozen text embedding.
struct DenoiserNet {
    int width = 12;
    int cond_dim = 64;
    FilmBlock in_block;   // 3 -> C @32
    FilmBlock down1;      // C -> 2C @16
    FilmBlock enc1;       // 2C -> 2C @16
    FilmBlock down2;      // 2C -> 2C @8
    FilmBlock mid;        // 2C -> 2C @8
    FilmBlock up1;        // 4C -> 2C @16
    FilmBlock up2;        // 3C -> C @32
    nn::Conv3x3 out_conv;  // C -> 3 @32
    nn::Linear ctx1, ctx2;
    nn::SiLU ctx_act, ctx_out_act;

    void init(int width_, int cond_dim_, Rng& rng);
    // x: (3 x B*1024), t: per-sample steps in [1, T], cond: (cond_dim x B)
    nn::Mat forward(const nn::Mat& x, const std::vector<int>& t, int T, const nn::Mat& cond,
                    int batch);
    void backward(const nn::Mat& deps);
    void params(std::vector<nn::ParamRef>& refs);

    nn::Mat h0_, h2_, ctx_;
    int batch_ = 0;
};

struct TrainHyper {
    int epochs = 60;
    int batch = 16;
    float lr = 1e-3f;
    float cond_dropout = 0.1f;
    int width = 12;
    std::uint64_t seed = 0;
};

struct FineTuneHyper {
    float lr = 1e-4f;
    int batch = 1;
    int grad_accum = 4;
    int epochs = 40;
    // stddev of Gaussian jitter added to each step's conditioning vector;
    // spreads the learned change to nearby conditionings in proportion to
    // their cosine similarity instead of overfitting one exact vector
    float cond_noise = 0.0f;
    // interpolation augmentation toward a caller-supplied anchor direction
    // (typically the mean prompt embedding): per step the conditioning is
    // mixed anchor-ward by a random fraction in [0, cond_mix], so the learned
    // change covers the whole segment between the prompt and the shared
    // component of all prompts rather than one point
    float cond_mix = 0.0f;
    Eigen::VectorXf cond_anchor;
    std::uint64_t seed = 0;
    std::string profile = "desk";

    // the reference fine-tuning recipe this artifact mirrors: lr 1e-5,
    // batch 1 with 4 gradient-accumulation steps, 40 epochs
    static FineTuneHyper paper_profile();
    // same recipe with the learning rate raised to 1e-4 for the tiny model
    static FineTuneHyper desk_profile();
};

struct ModelCheckpoint {
    DenoiserNet net;
    Role role = Role::base;
    NoiseSchedule schedule;
    std::uint64_t config_hash = 0;
    std::string id;
    std::string lineage;  // parent id + training-event description
    std::uint64_t seed = 0;
    double first_epoch_loss = 0.0;
    double last_epoch_loss = 0.0;

    std::uint64_t params_hash() const;
};

struct GenerationBatch {
    std::vector<ImageSample> images;
    corpus::Prompt prompt;
    std::string model_id;
    std::uint64_t master_seed = 0;
    float guidance_scale = 2.0f;
};

std::uint64_t compute_config_hash(const NoiseSchedule& schedule,
                                  const embedding::EmbeddingSpace& space, int width);

ModelCheckpoint train_base(const corpus::CaptionedCorpus& corpus,
                           const embedding::EmbeddingSpace& space, const NoiseSchedule& schedule,
                           const TrainHyper& hyper);

// continues noise-prediction training on exactly the given pairs; the caller
// assigns the resulting role
ModelCheckpoint fine_tune(const ModelCheckpoint& model,
                          const std::vector<std::pair<ImageSample, corpus::Prompt>>& dataset,
                          const embedding::EmbeddingSpace& space, const FineTuneHyper& hyper,
                          Role new_role, const std::string& event);

GenerationBatch sample(const ModelCheckpoint& model, const corpus::Prompt& prompt, int n,
                       std::uint64_t master_seed, float guidance_scale,
                       const embedding::EmbeddingSpace& space);

void save_checkpoint(const std::string& path, const ModelCheckpoint& model);
ModelCheckpoint load_checkpoint(const std::string& path);

void save_generation_batch(const std::string& dir, const std::string& stem,
                           const GenerationBatch& batch, int grid_cols = 10);

}  // namespace poisonlab::diffusion
