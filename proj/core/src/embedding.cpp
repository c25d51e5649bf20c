#include "poisonlab/embedding.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "poisonlab/errors.hpp"

namespace poisonlab::embedding {

using nn::Mat;
using nn::Vec;

namespace {

constexpr int kC1 = 16, kC2 = 32, kC3 = 64;
constexpr int kTextHidden = 128;
constexpr std::uint32_t kFormatVersion = 1;

Mat images_to_input(const std::vector<const ImageSample*>& images) {
    const int B = static_cast<int>(images.size());
    Mat x(3, static_cast<Eigen::Index>(B) * kImageSize * kImageSize);
    for (int b = 0; b < B; ++b) {
        if (images[b]->pixels.size() != kImagePixels)
            throw ContractError("image shape mismatch: expected 32x32x3");
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < kImageSize * kImageSize; ++p)
                x(c, static_cast<Eigen::Index>(b) * kImageSize * kImageSize + p) =
                    images[b]->pixels[c * kImageSize * kImageSize + p] * 2.0f - 1.0f;
    }
    return x;
}

// y = x / ||x||; returns normalized columns, caches handled by caller
Mat normalize_cols(const Mat& x, std::vector<float>* norms = nullptr) {
    Mat y = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        float n = x.col(j).norm();
        if (n < 1e-12f) n = 1e-12f;
        y.col(j) /= n;
        if (norms) norms->push_back(n);
    }
    return y;
}

Mat normalize_cols_backward(const Mat& y, const std::vector<float>& norms, const Mat& dy) {
    Mat dx = dy;
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
        float dot = y.col(j).dot(dy.col(j));
        dx.col(j) = (dy.col(j) - dot * y.col(j)) / norms[static_cast<std::size_t>(j)];
    }
    return dx;
}

}  // namespace

void ImageEncoderNet::init(int dim, Rng& rng) {
    c1.init(3, kC1, 2, rng);
    c2.init(kC1, kC2, 2, rng);
    c3.init(kC2, kC3, 2, rng);
    head.init(kC3 * 16, dim, rng);
}

Mat ImageEncoderNet::forward(const Mat& images, int batch) {
    batch_ = batch;
    Mat h = a1.forward(c1.forward(images, 32, 32, batch));
    h = a2.forward(c2.forward(h, 16, 16, batch));
    h = a3.forward(c3.forward(h, 8, 8, batch));  // kC3 x B*16
    // flatten per sample
    flat_cache_.resize(kC3 * 16, batch);
    for (int b = 0; b < batch; ++b)
        for (int p = 0; p < 16; ++p)
            flat_cache_.block(static_cast<Eigen::Index>(p) * kC3, b, kC3, 1) =
                h.col(static_cast<Eigen::Index>(b) * 16 + p);
    return head.forward(flat_cache_);
}

void ImageEncoderNet::backward(const Mat& dfeat, int batch) {
    Mat dflat = head.backward(dfeat);
    Mat dh(kC3, static_cast<Eigen::Index>(batch) * 16);
    for (int b = 0; b < batch; ++b)
        for (int p = 0; p < 16; ++p)
            dh.col(static_cast<Eigen::Index>(b) * 16 + p) =
                dflat.block(static_cast<Eigen::Index>(p) * kC3, b, kC3, 1);
    Mat d = c3.backward(a3.backward(dh));
    d = c2.backward(a2.backward(d));
    c1.backward(a1.backward(d));
}

void ImageEncoderNet::params(std::vector<nn::ParamRef>& refs) {
    c1.params(refs);
    c2.params(refs);
    c3.params(refs);
    head.params(refs);
}

void TextEncoderNet::init(int vocab_size, int dim, Rng& rng) {
    table.resize(dim, vocab_size);
    for (Eigen::Index j = 0; j < table.cols(); ++j)
        for (Eigen::Index i = 0; i < table.rows(); ++i)
            table(i, j) = 0.2f * static_cast<float>(rng.normal());
    dtable = Mat::Zero(dim, vocab_size);
    l1.init(dim, kTextHidden, rng);
    l2.init(kTextHidden, dim, rng);
}

Mat TextEncoderNet::forward(const std::vector<std::vector<int>>& token_batch) {
    tokens_cache_ = token_batch;
    const int B = static_cast<int>(token_batch.size());
    Mat pooled = Mat::Zero(table.rows(), B);
    for (int b = 0; b < B; ++b) {
        const auto& toks = token_batch[static_cast<std::size_t>(b)];
        if (toks.empty()) throw ContractError("empty token sequence");
        for (int t : toks) pooled.col(b) += table.col(t);
        pooled.col(b) /= static_cast<float>(toks.size());
    }
    return l2.forward(act.forward(l1.forward(pooled)));
}

void TextEncoderNet::backward(const Mat& dfeat) {
    Mat dpooled = l1.backward(act.backward(l2.backward(dfeat)));
    for (std::size_t b = 0; b < tokens_cache_.size(); ++b) {
        const auto& toks = tokens_cache_[b];
        float inv = 1.0f / static_cast<float>(toks.size());
        for (int t : toks) dtable.col(t) += inv * dpooled.col(static_cast<Eigen::Index>(b));
    }
}

void TextEncoderNet::params(std::vector<nn::ParamRef>& refs) {
    refs.push_back({table.data(), dtable.data(), table.size()});
    l1.params(refs);
    l2.params(refs);
}

EmbeddingSpace train_joint_encoder(const corpus::CaptionedCorpus& corp,
                                   const corpus::Vocabulary& vocab, const corpus::Tokenizer& tok,
                                   const EncoderHyper& hyper) {
    // the contrastive objective needs at least two distinct concepts
    int first_concept = -1;
    bool multi = false;
    for (auto i : corp.train) {
        int c = corp.pairs[i].prompt.concept_id;
        if (first_concept < 0) first_concept = c;
        else if (c != first_concept) { multi = true; break; }
    }
    if (!multi) throw ContractError("degenerate contrast: corpus has a single concept");

    EmbeddingSpace space;
    space.dim = hyper.dim;
    space.temperature = hyper.temperature;
    space.seed = hyper.seed;
    space.vocab_hash = hash_mix(vocab.hash(), tok.hash());

    Rng init_rng(derive_seed(hyper.seed, "encoder-init"));
    space.image_net.init(hyper.dim, init_rng);
    space.text_net.init(static_cast<int>(tok.size()), hyper.dim, init_rng);

    std::vector<nn::ParamRef> refs;
    space.image_net.params(refs);
    space.text_net.params(refs);
    nn::Adam opt;
    opt.lr = hyper.lr;
    opt.init(refs);

    std::vector<std::size_t> order(corp.train);
    Rng shuffle_rng(derive_seed(hyper.seed, "encoder-shuffle"));
    const float inv_tau = 1.0f / hyper.temperature;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        Rng aug_rng(derive_seed(hyper.seed, "encoder-aug", static_cast<std::uint64_t>(epoch)));
        double epoch_loss = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start + 2 <= order.size(); start += static_cast<std::size_t>(hyper.batch)) {
            std::size_t bsz = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch),
                                                    order.size() - start);
            if (bsz < 2) break;
            std::vector<const ImageSample*> imgs;
            std::vector<std::vector<int>> toks;
            std::vector<int> concept_ids;
            for (std::size_t k = 0; k < bsz; ++k) {
                const auto& pair = corp.pairs[order[start + k]];
                imgs.push_back(&pair.image);
                toks.push_back(pair.prompt.tokens);
                concept_ids.push_back(pair.prompt.concept_id);
            }
            const int B = static_cast<int>(bsz);

            nn::Adam& o = opt;
            o.zero_grad(refs);
            Mat input = images_to_input(imgs);  // values in [-1, 1]
            const int kPix = kImageSize * kImageSize;
            for (int b = 0; b < B; ++b) {
                const Eigen::Index off = static_cast<Eigen::Index>(b) * kPix;
                if (aug_rng.uniform() < hyper.aug_blur_prob) {
                    std::vector<float> tmp(static_cast<std::size_t>(kPix));
                    for (int c = 0; c < 3; ++c) {
                        for (int y = 0; y < kImageSize; ++y)
                            for (int x = 0; x < kImageSize; ++x) {
                                float s = 0.0f;
                                int n = 0;
                                for (int dy = -1; dy <= 1; ++dy)
                                    for (int dx = -1; dx <= 1; ++dx) {
                                        int yy = y + dy, xx = x + dx;
                                        if (yy < 0 || yy >= kImageSize || xx < 0 ||
                                            xx >= kImageSize)
                                            continue;
                                        s += input(c, off + yy * kImageSize + xx);
                                        ++n;
                                    }
                                tmp[static_cast<std::size_t>(y * kImageSize + x)] =
                                    s / static_cast<float>(n);
                            }
                        for (int p = 0; p < kPix; ++p)
                            input(c, off + p) = tmp[static_cast<std::size_t>(p)];
                    }
                }
                const float sigma = hyper.aug_noise * static_cast<float>(aug_rng.uniform());
                if (sigma > 0.0f)
                    for (int c = 0; c < 3; ++c)
                        for (int p = 0; p < kPix; ++p) {
                            float v = input(c, off + p) +
                                      sigma * static_cast<float>(aug_rng.normal());
                            input(c, off + p) = std::min(1.0f, std::max(-1.0f, v));
                        }
            }
            Mat zi_raw = space.image_net.forward(input, B);
            Mat zt_raw = space.text_net.forward(toks);
            std::vector<float> ni, nt;
            Mat zi = normalize_cols(zi_raw, &ni);
            Mat zt = normalize_cols(zt_raw, &nt);

            Mat logits = (zi.transpose() * zt) * inv_tau;  // rows: images, cols: texts
            // symmetric InfoNCE with the diagonal as targets
            Mat p_row = logits, p_col = logits.transpose();
            double loss = 0.0;
            for (int r = 0; r < B; ++r) {
                float mx = p_row.row(r).maxCoeff();
                Eigen::ArrayXf e = (p_row.row(r).array() - mx).exp();
                float Z = e.sum();
                loss -= std::log(static_cast<double>(e(r) / Z)) * 0.5;
                p_row.row(r) = (e / Z).matrix();
            }
            for (int r = 0; r < B; ++r) {
                float mx = p_col.row(r).maxCoeff();
                Eigen::ArrayXf e = (p_col.row(r).array() - mx).exp();
                float Z = e.sum();
                loss -= std::log(static_cast<double>(e(r) / Z)) * 0.5;
                p_col.row(r) = (e / Z).matrix();
            }
            loss /= B;

            Mat dlogits = (0.5f / static_cast<float>(B)) *
                          ((p_row - Mat::Identity(B, B)) + (p_col - Mat::Identity(B, B)).transpose());
            Mat dzi = zt * dlogits.transpose() * inv_tau;
            Mat dzt = zi * dlogits * inv_tau;

            if (hyper.align_weight > 0.0f) {
                // intra-class image alignment: mean over same-concept pairs of
                // (1 - cosine); keeps each concept's renders tightly clustered
                std::map<int, Eigen::VectorXf> class_sum;
                std::map<int, int> class_count;
                for (int b = 0; b < B; ++b) {
                    auto [it, fresh] = class_sum.try_emplace(concept_ids[static_cast<std::size_t>(b)],
                                                            Eigen::VectorXf::Zero(zi.rows()));
                    it->second += zi.col(b);
                    ++class_count[concept_ids[static_cast<std::size_t>(b)]];
                }
                long pair_count = 0;
                double dot_sum = 0.0;
                for (const auto& [cid, cnt] : class_count) {
                    pair_count += static_cast<long>(cnt) * (cnt - 1) / 2;
                    dot_sum += 0.5 * (static_cast<double>(class_sum[cid].squaredNorm()) - cnt);
                }
                if (pair_count > 0) {
                    const float w = hyper.align_weight / static_cast<float>(pair_count);
                    loss += hyper.align_weight *
                            (1.0 - dot_sum / static_cast<double>(pair_count));
                    for (int b = 0; b < B; ++b) {
                        const auto& s = class_sum[concept_ids[static_cast<std::size_t>(b)]];
                        dzi.col(b) -= w * (s - zi.col(b));
                    }
                }
            }
            epoch_loss += loss;
            ++steps;
            space.image_net.backward(normalize_cols_backward(zi, ni, dzi), B);
            space.text_net.backward(normalize_cols_backward(zt, nt, dzt));
            o.step(refs);
        }
        double mean_loss = steps ? epoch_loss / steps : 0.0;
        if (epoch == 0) space.first_epoch_loss = mean_loss;
        space.last_epoch_loss = mean_loss;
    }

    space.frozen = true;
    return space;
}

namespace {

Mat embed_images_raw(const EmbeddingSpace& space, const std::vector<const ImageSample*>& images) {
    if (!space.frozen) throw ContractError("embedding space must be frozen before use");
    // forward mutates layer caches only; parameters stay fixed
    auto& net = const_cast<ImageEncoderNet&>(space.image_net);
    return normalize_cols(net.forward(images_to_input(images), static_cast<int>(images.size())));
}

EmbeddingVector to_unit_double(const Eigen::VectorXf& v) {
    EmbeddingVector e;
    e.values = v.cast<double>();
    double n = e.values.norm();
    if (n < 1e-12) throw NumericalError("zero-norm embedding");
    e.values /= n;
    return e;
}

}  // namespace

EmbeddingVector embed_image(const EmbeddingSpace& space, const ImageSample& image) {
    Mat z = embed_images_raw(space, {&image});
    return to_unit_double(z.col(0));
}

std::vector<EmbeddingVector> embed_images(const EmbeddingSpace& space,
                                          const std::vector<ImageSample>& images) {
    std::vector<EmbeddingVector> out;
    out.reserve(images.size());
    const std::size_t chunk = 128;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        std::vector<const ImageSample*> ptrs;
        for (std::size_t i = start; i < std::min(images.size(), start + chunk); ++i)
            ptrs.push_back(&images[i]);
        Mat z = embed_images_raw(space, ptrs);
        for (Eigen::Index j = 0; j < z.cols(); ++j) out.push_back(to_unit_double(z.col(j)));
    }
    return out;
}

EmbeddingVector embed_text(const EmbeddingSpace& space, const corpus::Prompt& prompt) {
    if (!space.frozen) throw ContractError("embedding space must be frozen before use");
    auto& net = const_cast<TextEncoderNet&>(space.text_net);
    Mat z = normalize_cols(net.forward({prompt.tokens}));
    return to_unit_double(z.col(0));
}

Eigen::VectorXf condition_vector(const EmbeddingSpace& space, const corpus::Prompt& prompt) {
    EmbeddingVector e = embed_text(space, prompt);
    return e.values.cast<float>();
}

double cosine_sim(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (std::abs(a.values.norm() - 1.0) > 1e-6 || std::abs(b.values.norm() - 1.0) > 1e-6)
        throw ContractError("cosine_sim expects unit-norm inputs");
    if (a.values.size() != b.values.size()) throw ContractError("embedding dim mismatch");
    double d = a.values.dot(b.values);
    return std::clamp(d, -1.0, 1.0);
}

std::vector<EmbeddingVector> text_anchors(const EmbeddingSpace& space,
                                          const corpus::Vocabulary& vocab,
                                          const corpus::PromptTemplate& tmpl,
                                          const corpus::Tokenizer& tok) {
    if (vocab.concepts.empty()) throw ConfigError("empty vocabulary");
    std::vector<EmbeddingVector> anchors;
    anchors.reserve(vocab.concepts.size());
    for (const auto& c : vocab.concepts)
        anchors.push_back(embed_text(space, make_prompt(vocab, tok, tmpl, c)));
    return anchors;
}

const corpus::Concept& zero_shot_classify(const EmbeddingSpace& space, const ImageSample& image,
                                          const corpus::Vocabulary& vocab,
                                          const corpus::PromptTemplate& tmpl,
                                          const corpus::Tokenizer& tok) {
    auto anchors = text_anchors(space, vocab, tmpl, tok);
    EmbeddingVector zi = embed_image(space, image);
    int best = 0;
    double best_sim = -2.0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        double s = cosine_sim(zi, anchors[i]);
        // ties break toward the lowest concept id
        if (s > best_sim) {
            best_sim = s;
            best = static_cast<int>(i);
        }
    }
    return vocab.by_id(best);
}

FeatureStats feature_stats(const EmbeddingSpace& space, const std::vector<ImageSample>& images) {
    if (images.size() < 2) throw ContractError("feature_stats needs at least 2 images");
    auto embs = embed_images(space, images);
    const int n = static_cast<int>(embs.size());
    const Eigen::Index d = embs[0].values.size();
    FeatureStats stats;
    stats.count = n;
    stats.mean = Eigen::VectorXd::Zero(d);
    for (const auto& e : embs) stats.mean += e.values;
    stats.mean /= n;
    stats.cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& e : embs) {
        Eigen::VectorXd c = e.values - stats.mean;
        stats.cov.noalias() += c * c.transpose();
    }
    stats.cov /= (n - 1);
    stats.cov = 0.5 * (stats.cov + stats.cov.transpose().eval());
    return stats;
}

// ---------------------------------------------------------------------------
// persistence

void save_embedding_space(const std::string& path, const EmbeddingSpace& space) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write encoder checkpoint: " + path);
    auto put = [&](const void* p, std::size_t n) { f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
    const char magic[8] = {'P', 'L', 'E', 'M', 'B', '0', '0', '0'};
    put(magic, 8);
    put(&kFormatVersion, 4);
    std::int32_t dim = space.dim;
    put(&dim, 4);
    put(&space.temperature, 4);
    put(&space.vocab_hash, 8);
    put(&space.seed, 8);
    put(&space.first_epoch_loss, 8);
    put(&space.last_epoch_loss, 8);
    std::int32_t vocab_size = static_cast<std::int32_t>(space.text_net.table.cols());
    put(&vocab_size, 4);
    std::vector<nn::ParamRef> refs;
    const_cast<EmbeddingSpace&>(space).image_net.params(refs);
    const_cast<EmbeddingSpace&>(space).text_net.params(refs);
    std::vector<float> blob;
    nn::serialize_params(refs, blob);
    std::uint64_t n = blob.size();
    put(&n, 8);
    put(blob.data(), blob.size() * sizeof(float));
    if (!f) throw IoError("write failed: " + path);
}

EmbeddingSpace load_embedding_space(const std::string& path, std::uint64_t expected_vocab_hash,
                                    int vocab_size) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read encoder checkpoint: " + path);
    auto get = [&](void* p, std::size_t n) {
        f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!f) throw IoError("truncated encoder checkpoint: " + path);
    };
    char magic[8];
    get(magic, 8);
    if (std::string(magic, 5) != "PLEMB") throw IoError("bad encoder checkpoint magic");
    std::uint32_t version;
    get(&version, 4);
    if (version != kFormatVersion) throw IoError("unsupported encoder checkpoint version");
    EmbeddingSpace space;
    std::int32_t dim;
    get(&dim, 4);
    space.dim = dim;
    get(&space.temperature, 4);
    get(&space.vocab_hash, 8);
    if (space.vocab_hash != expected_vocab_hash)
        throw IoError("encoder checkpoint vocab_hash mismatch; refusing to load");
    get(&space.seed, 8);
    get(&space.first_epoch_loss, 8);
    get(&space.last_epoch_loss, 8);
    std::int32_t stored_vocab;
    get(&stored_vocab, 4);
    if (stored_vocab != vocab_size) throw IoError("encoder checkpoint vocab size mismatch");
    Rng dummy(0);
    space.image_net.init(space.dim, dummy);
    space.text_net.init(vocab_size, space.dim, dummy);
    std::uint64_t n;
    get(&n, 8);
    std::vector<float> blob(n);
    get(blob.data(), n * sizeof(float));
    std::vector<nn::ParamRef> refs;
    space.image_net.params(refs);
    space.text_net.params(refs);
    nn::deserialize_params(refs, blob);
    space.frozen = true;
    return space;
}

}  // namespace poisonlab::embedding
