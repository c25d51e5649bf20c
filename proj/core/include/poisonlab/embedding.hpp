#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/nn.hpp"

namespace poisonlab::embedding {

struct EmbeddingVector {
    Eigen::VectorXd values;  // unit norm within 1e-6
};

struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // unbiased, symmetric
    int count = 0;
};

struct EncoderHyper {
    int dim = 64;
    float temperature = 0.07f;
    int epochs = 30;
    int batch = 64;
    float lr = 1e-3f;
    // weight of the intra-class image alignment term; it pulls renders of the
    // same concept together so image-image similarity is usable for retrieval
    float align_weight = 4.0f;
    // training-time image corruption so embeddings stay stable for imperfect
    // (e.g. sampled) images, not just crisp renders: per-sample Gaussian
    // pixel noise up to aug_noise, and a 3x3 box blur with aug_blur_prob
    float aug_noise = 0.12f;
    float aug_blur_prob = 0.5f;
    std::uint64_t seed = 0;
};

// Image side: three stride-2 convs + linear head. Text side: mean-pooled
// token embeddings + one hidden mixer layer. Both project to a shared
// unit-norm space.
struct ImageEncoderNet {
    nn::Conv3x3 c1, c2, c3;
    nn::SiLU a1, a2, a3;
    nn::Linear head;

    void init(int dim, Rng& rng);
    nn::Mat forward(const nn::Mat& images, int batch);  // (3 x B*1024) -> (dim x B)
    void backward(const nn::Mat& dfeat, int batch);
    void params(std::vector<nn::ParamRef>& refs);

    nn::Mat flat_cache_;
    int batch_ = 0;
};

struct TextEncoderNet {
    nn::Mat table, dtable;  // embed_dim x vocab
    nn::Linear l1, l2;
    nn::SiLU act;

    void init(int vocab_size, int dim, Rng& rng);
    nn::Mat forward(const std::vector<std::vector<int>>& token_batch);
    void backward(const nn::Mat& dfeat);
    void params(std::vector<nn::ParamRef>& refs);

    std::vector<std::vector<int>> tokens_cache_;
};

struct EmbeddingSpace {
    ImageEncoderNet image_net;
    TextEncoderNet text_net;
    int dim = 64;
    float temperature = 0.07f;
    bool frozen = false;
    std::uint64_t vocab_hash = 0;  // tokenizer+vocabulary identity
    std::uint64_t seed = 0;
    double first_epoch_loss = 0.0;
    double last_epoch_loss = 0.0;
};

EmbeddingSpace train_joint_encoder(const corpus::CaptionedCorpus& corpus,
                                   const corpus::Vocabulary& vocab,
                                   const corpus::Tokenizer& tok, const EncoderHyper& hyper);

EmbeddingVector embed_image(const EmbeddingSpace& space, const ImageSample& image);
std::vector<EmbeddingVector> embed_images(const EmbeddingSpace& space,
                                          const std::vector<ImageSample>& images);
EmbeddingVector embed_text(const EmbeddingSpace& space, const corpus::Prompt& prompt);

double cosine_sim(const EmbeddingVector& a, const EmbeddingVector& b);

// precomputed per-concept text anchors for classification
std::vector<EmbeddingVector> text_anchors(const EmbeddingSpace& space,
                                          const corpus::Vocabulary& vocab,
                                          const corpus::PromptTemplate& tmpl,
                                          const corpus::Tokenizer& tok);

const corpus::Concept& zero_shot_classify(const EmbeddingSpace& space, const ImageSample& image,
                                          const corpus::Vocabulary& vocab,
                                          const corpus::PromptTemplate& tmpl,
                                          const corpus::Tokenizer& tok);

FeatureStats feature_stats(const EmbeddingSpace& space, const std::vector<ImageSample>& images);

// versioned binary checkpoint; loading refuses a vocab_hash mismatch
void save_embedding_space(const std::string& path, const EmbeddingSpace& space);
EmbeddingSpace load_embedding_space(const std::string& path, std::uint64_t expected_vocab_hash,
                                    int vocab_size);

// raw conditioning vector for the diffusion model (frozen space required)
Eigen::VectorXf condition_vector(const EmbeddingSpace& space, const corpus::Prompt& prompt);

}  // namespace poisonlab::embedding
