#include "poisonlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "poisonlab/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace poisonlab::diffusion {

using nn::Mat;
using nn::Vec;

namespace {
constexpr int kTimeDim = 32;
constexpr int kCtxDim = 64;
constexpr int kPix = kImageSize * kImageSize;
constexpr std::uint32_t kFormatVersion = 1;
}  // namespace

std::string to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw ConfigError("unknown schedule kind: " + s);
}

std::string to_string(Role r) {
    switch (r) {
        case Role::base: return "base";
        case Role::poisoned: return "poisoned";
        case Role::sanitized: return "sanitized";
        case Role::defended: return "defended";
    }
    return "base";
}

Role role_from_string(const std::string& s) {
    for (auto r : {Role::base, Role::poisoned, Role::sanitized, Role::defended})
        if (to_string(r) == s) return r;
    throw ConfigError("unknown checkpoint role: " + s);
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
    if (T < 2) throw ConfigError("schedule needs T >= 2");
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.betas.resize(T);
    if (kind == ScheduleKind::linear) {
        // beta_1 stays at 1e-4; the endpoint scales with T so the terminal
        // alpha_bar is driven below 0.01 regardless of step count
        const float b0 = 1e-4f;
        const float b1 = std::min(0.999f, 20.0f / static_cast<float>(T));
        for (int t = 0; t < T; ++t)
            s.betas[t] = b0 + (b1 - b0) * static_cast<float>(t) / static_cast<float>(T - 1);
    } else {
        const double off = 0.008;
        auto f = [&](double u) {
            double c = std::cos((u + off) / (1.0 + off) * 1.5707963267948966);
            return c * c;
        };
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            double ab = f(static_cast<double>(t) / T) / f(0.0);
            double beta = 1.0 - ab / prev;
            beta = std::clamp(beta, 1e-6, 0.999);
            s.betas[t - 1] = static_cast<float>(beta);
            prev *= 1.0 - beta;
        }
    }
    s.alphas = 1.0f - s.betas.array();
    s.alpha_bars.resize(T);
    float ab = 1.0f;
    for (int t = 0; t < T; ++t) {
        ab *= s.alphas[t];
        s.alpha_bars[t] = ab;
    }
    for (int t = 0; t < T; ++t) {
        if (!(s.betas[t] > 0.0f && s.betas[t] < 1.0f))
            throw NumericalError("schedule beta out of (0,1)");
        if (t > 0 && !(s.alpha_bars[t] < s.alpha_bars[t - 1]))
            throw NumericalError("alpha_bars not strictly decreasing");
    }
    if (!(s.alpha_bars[T - 1] < 0.01f))
        throw NumericalError("terminal alpha_bar too large; schedule under-noised");
    return s;
}

// ---------------------------------------------------------------------------
// denoiser

void FilmBlock::init(int cin, int cout, int stride, Rng& rng) {
    ch = cout;
    conv.init(cin, cout, stride, rng);
    film.init(kCtxDim, 2 * cout, rng, 0.1f);
}

Mat FilmBlock::forward(const Mat& x, int h, int w, int batch, const Mat& ctx) {
    batch_ = batch;
    Mat y = conv.forward(x, h, w, batch);
    how_ = conv.ho_ * conv.wo_;
    pre_film_ = y;
    Mat sf = film.forward(ctx);  // 2ch x B
    scale_ = sf.topRows(ch);
    for (int b = 0; b < batch_; ++b) {
        auto blk = y.block(0, static_cast<Eigen::Index>(b) * how_, ch, how_);
        blk.array().colwise() *= (1.0f + scale_.col(b).array());
        blk.array().colwise() += sf.col(b).segment(ch, ch).array();
    }
    return act.forward(y);
}

Mat FilmBlock::backward(const Mat& dy, Mat& dctx) {
    Mat d = act.backward(dy);
    Mat dsf(2 * ch, batch_);
    for (int b = 0; b < batch_; ++b) {
        auto dblk = d.block(0, static_cast<Eigen::Index>(b) * how_, ch, how_);
        auto pre = pre_film_.block(0, static_cast<Eigen::Index>(b) * how_, ch, how_);
        dsf.col(b).head(ch) = (dblk.array() * pre.array()).rowwise().sum();
        dsf.col(b).segment(ch, ch) = dblk.rowwise().sum();
        dblk.array().colwise() *= (1.0f + scale_.col(b).array());
    }
    dctx += film.backward(dsf);
    return conv.backward(d);
}

void FilmBlock::params(std::vector<nn::ParamRef>& refs) {
    conv.params(refs);
    film.params(refs);
}

void DenoiserNet::init(int width_, int cond_dim_, Rng& rng) {
    width = width_;
    cond_dim = cond_dim_;
    const int C = width, C2 = 2 * width;
    in_block.init(3, C, 1, rng);
    down1.init(C, C2, 2, rng);
    enc1.init(C2, C2, 1, rng);
    down2.init(C2, C2, 2, rng);
    mid.init(C2, C2, 1, rng);
    up1.init(2 * C2, C2, 1, rng);
    up2.init(C2 + C, C, 1, rng);
    out_conv.init(C, 3, 1, rng, 0.1f);
    ctx1.init(kTimeDim + cond_dim, kCtxDim, rng);
    ctx2.init(kCtxDim, kCtxDim, rng);
}

namespace {

Mat time_embedding(const std::vector<int>& t, int /*T*/) {
    const int B = static_cast<int>(t.size());
    Mat e(kTimeDim, B);
    for (int b = 0; b < B; ++b) {
        for (int k = 0; k < kTimeDim / 2; ++k) {
            float w = std::exp(-std::log(10000.0f) * static_cast<float>(k) /
                               static_cast<float>(kTimeDim / 2 - 1));
            e(2 * k, b) = std::sin(w * static_cast<float>(t[static_cast<std::size_t>(b)]));
            e(2 * k + 1, b) = std::cos(w * static_cast<float>(t[static_cast<std::size_t>(b)]));
        }
    }
    return e;
}

}  // namespace

Mat DenoiserNet::forward(const Mat& x, const std::vector<int>& t, int T, const Mat& cond,
                         int batch) {
    batch_ = batch;
    Mat ctx_in(kTimeDim + cond_dim, batch);
    ctx_in.topRows(kTimeDim) = time_embedding(t, T);
    ctx_in.bottomRows(cond_dim) = cond;
    ctx_ = ctx_out_act.forward(ctx2.forward(ctx_act.forward(ctx1.forward(ctx_in))));

    const int C = width, C2 = 2 * width;
    h0_ = in_block.forward(x, 32, 32, batch, ctx_);     // C @32
    Mat h1 = down1.forward(h0_, 32, 32, batch, ctx_);   // 2C @16
    h2_ = enc1.forward(h1, 16, 16, batch, ctx_);        // 2C @16
    Mat h3 = down2.forward(h2_, 16, 16, batch, ctx_);   // 2C @8
    Mat h4 = mid.forward(h3, 8, 8, batch, ctx_);        // 2C @8
    Mat u1 = nn::upsample2x(h4, 8, 8, batch);           // 2C @16
    Mat cat1(2 * C2, u1.cols());
    cat1.topRows(C2) = u1;
    cat1.bottomRows(C2) = h2_;
    Mat h5 = up1.forward(cat1, 16, 16, batch, ctx_);    // 2C @16
    Mat u2 = nn::upsample2x(h5, 16, 16, batch);         // 2C @32
    Mat cat2(C2 + C, u2.cols());
    cat2.topRows(C2) = u2;
    cat2.bottomRows(C) = h0_;
    Mat h6 = up2.forward(cat2, 32, 32, batch, ctx_);    // C @32
    return out_conv.forward(h6, 32, 32, batch);         // 3 @32
}

void DenoiserNet::backward(const Mat& deps) {
    const int C = width, C2 = 2 * width;
    Mat dctx = Mat::Zero(kCtxDim, batch_);
    Mat dh6 = out_conv.backward(deps);
    Mat dcat2 = up2.backward(dh6, dctx);
    Mat dh5 = nn::upsample2x_backward(dcat2.topRows(C2), 16, 16, batch_);
    Mat dh0_skip = dcat2.bottomRows(C);
    Mat dcat1 = up1.backward(dh5, dctx);
    Mat dh4 = nn::upsample2x_backward(dcat1.topRows(C2), 8, 8, batch_);
    Mat dh2_skip = dcat1.bottomRows(C2);
    Mat dh3 = mid.backward(dh4, dctx);
    Mat dh2 = down2.backward(dh3, dctx) + dh2_skip;
    Mat dh1 = enc1.backward(dh2, dctx);
    Mat dh0 = down1.backward(dh1, dctx) + dh0_skip;
    in_block.backward(dh0, dctx);
    ctx1.backward(ctx_act.backward(ctx2.backward(ctx_out_act.backward(dctx))));
}

void DenoiserNet::params(std::vector<nn::ParamRef>& refs) {
    in_block.params(refs);
    down1.params(refs);
    enc1.params(refs);
    down2.params(refs);
    mid.params(refs);
    up1.params(refs);
    up2.params(refs);
    out_conv.params(refs);
    ctx1.params(refs);
    ctx2.params(refs);
}

FineTuneHyper FineTuneHyper::paper_profile() {
    FineTuneHyper h;
    h.lr = 1e-5f;
    h.batch = 1;
    h.grad_accum = 4;
    h.epochs = 40;
    h.profile = "paper";
    return h;
}

FineTuneHyper FineTuneHyper::desk_profile() {
    FineTuneHyper h;
    h.lr = 1e-4f;
    h.batch = 1;
    h.grad_accum = 1;  // more optimizer steps than the reference recipe: the
                       // tiny model needs them for a fine-tune on a handful
                       // of images to move the sampler
    h.cond_noise = 0.1f;
    h.cond_mix = 0.5f;  // the anchor itself is supplied by the caller
    h.epochs = 40;
    h.profile = "desk";
    return h;
}

std::uint64_t compute_config_hash(const NoiseSchedule& schedule,
                                  const embedding::EmbeddingSpace& space, int width) {
    std::ostringstream os;
    os << schedule.T << '|' << to_string(schedule.kind) << '|' << width << '|' << space.dim;
    return hash_mix(fnv1a64(os.str()), hash_mix(space.vocab_hash, space.seed));
}

std::uint64_t ModelCheckpoint::params_hash() const {
    std::vector<nn::ParamRef> refs;
    const_cast<DenoiserNet&>(net).params(refs);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& r : refs)
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(r.w),
                                     static_cast<std::size_t>(r.n) * sizeof(float)),
                    h);
    return h;
}

namespace {

std::string make_id(const ModelCheckpoint& m) {
    std::ostringstream os;
    os << std::hex << hash_mix(m.params_hash(), hash_mix(m.config_hash, m.seed));
    return os.str();
}

Mat images_to_signal(const std::vector<const ImageSample*>& images) {
    const int B = static_cast<int>(images.size());
    Mat x(3, static_cast<Eigen::Index>(B) * kPix);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < kPix; ++p)
                x(c, static_cast<Eigen::Index>(b) * kPix + p) =
                    images[b]->pixels[c * kPix + p] * 2.0f - 1.0f;
    return x;
}

struct CondCache {
    std::map<std::string, Eigen::VectorXf> by_text;
    const embedding::EmbeddingSpace* space;

    const Eigen::VectorXf& get(const corpus::Prompt& p) {
        auto it = by_text.find(p.text);
        if (it == by_text.end())
            it = by_text.emplace(p.text, embedding::condition_vector(*space, p)).first;
        return it->second;
    }
};

struct SampleDraw {
    int t;
    Eigen::VectorXf noise;  // 3*kPix
    bool drop_cond;
};

// one optimization step over a batch; returns the batch loss
double diffusion_step(DenoiserNet& net, const NoiseSchedule& sched,
                      const std::vector<const ImageSample*>& imgs,
                      const std::vector<const Eigen::VectorXf*>& conds,
                      const std::vector<SampleDraw>& draws, bool do_backward, float grad_scale) {
    const int B = static_cast<int>(imgs.size());
    Mat x0 = images_to_signal(imgs);
    Mat xt(3, static_cast<Eigen::Index>(B) * kPix);
    Mat eps(3, static_cast<Eigen::Index>(B) * kPix);
    Mat cond = Mat::Zero(net.cond_dim, B);
    std::vector<int> ts(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        const auto& d = draws[static_cast<std::size_t>(b)];
        ts[static_cast<std::size_t>(b)] = d.t;
        float ab = sched.alpha_bar(d.t);
        float sa = std::sqrt(ab), sb = std::sqrt(1.0f - ab);
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < kPix; ++p) {
                float e = d.noise[c * kPix + p];
                eps(c, static_cast<Eigen::Index>(b) * kPix + p) = e;
                xt(c, static_cast<Eigen::Index>(b) * kPix + p) =
                    sa * x0(c, static_cast<Eigen::Index>(b) * kPix + p) + sb * e;
            }
        if (!d.drop_cond) cond.col(b) = *conds[static_cast<std::size_t>(b)];
    }
    Mat pred = net.forward(xt, ts, sched.T, cond, B);
    Mat diff = pred - eps;
    double loss = static_cast<double>(diff.squaredNorm()) / static_cast<double>(diff.size());
    if (do_backward) {
        Mat dpred = diff * (2.0f * grad_scale / static_cast<float>(diff.size()));
        net.backward(dpred);
    }
    return loss;
}

std::vector<SampleDraw> make_draws(Rng& rng, int count, int T, float cond_dropout) {
    std::vector<SampleDraw> draws(static_cast<std::size_t>(count));
    for (auto& d : draws) {
        d.t = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(T)));
        d.noise.resize(3 * kPix);
        for (int i = 0; i < 3 * kPix; ++i) d.noise[i] = static_cast<float>(rng.normal());
        d.drop_cond = rng.uniform() < cond_dropout;
    }
    return draws;
}

}  // namespace

ModelCheckpoint train_base(const corpus::CaptionedCorpus& corp,
                           const embedding::EmbeddingSpace& space, const NoiseSchedule& schedule,
                           const TrainHyper& hyper) {
    if (!space.frozen) throw ContractError("train_base requires a frozen embedding space");

    ModelCheckpoint model;
    model.role = Role::base;
    model.schedule = schedule;
    model.seed = hyper.seed;
    Rng init_rng(derive_seed(hyper.seed, "diffusion-init"));
    model.net.init(hyper.width, space.dim, init_rng);
    model.config_hash = compute_config_hash(schedule, space, hyper.width);
    model.lineage = "trained from scratch";

    CondCache conds{{}, &space};
    std::vector<nn::ParamRef> refs;
    model.net.params(refs);
    nn::Adam opt;
    opt.lr = hyper.lr;
    opt.init(refs);

    auto val_loss = [&]() {
        // fixed draws so epoch-over-epoch values are comparable
        Rng vrng(derive_seed(hyper.seed, "diffusion-val"));
        double total = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < corp.val.size(); start += 32) {
            std::size_t bsz = std::min<std::size_t>(32, corp.val.size() - start);
            std::vector<const ImageSample*> imgs;
            std::vector<const Eigen::VectorXf*> cv;
            for (std::size_t k = 0; k < bsz; ++k) {
                const auto& pair = corp.pairs[corp.val[start + k]];
                imgs.push_back(&pair.image);
                cv.push_back(&conds.get(pair.prompt));
            }
            auto draws = make_draws(vrng, static_cast<int>(bsz), schedule.T, 0.0f);
            total += diffusion_step(model.net, schedule, imgs, cv, draws, false, 0.0f);
            ++batches;
        }
        return batches ? total / batches : 0.0;
    };

    std::vector<std::size_t> order(corp.train);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng erng(derive_seed(hyper.seed, "diffusion-epoch", static_cast<std::uint64_t>(epoch)));
        erng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(hyper.batch)) {
            std::size_t bsz = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch),
                                                    order.size() - start);
            std::vector<const ImageSample*> imgs;
            std::vector<const Eigen::VectorXf*> cv;
            for (std::size_t k = 0; k < bsz; ++k) {
                const auto& pair = corp.pairs[order[start + k]];
                imgs.push_back(&pair.image);
                cv.push_back(&conds.get(pair.prompt));
            }
            auto draws = make_draws(erng, static_cast<int>(bsz), schedule.T, hyper.cond_dropout);
            opt.zero_grad(refs);
            diffusion_step(model.net, schedule, imgs, cv, draws, true, 1.0f);
            opt.step(refs);
        }
        if (epoch == 0) model.first_epoch_loss = val_loss();
    }
    model.last_epoch_loss = val_loss();
    model.id = make_id(model);
    return model;
}

ModelCheckpoint fine_tune(const ModelCheckpoint& model,
                          const std::vector<std::pair<ImageSample, corpus::Prompt>>& dataset,
                          const embedding::EmbeddingSpace& space, const FineTuneHyper& hyper,
                          Role new_role, const std::string& event) {
    if (dataset.empty()) throw ConfigError("fine_tune: dataset must be non-empty");
    if (model.config_hash != compute_config_hash(model.schedule, space, model.net.width))
        throw ContractError("fine_tune: checkpoint config_hash does not match this setup");
    const bool ok_transition =
        (model.role == Role::base && (new_role == Role::poisoned || new_role == Role::sanitized)) ||
        ((model.role == Role::poisoned || model.role == Role::sanitized) &&
         new_role == Role::defended);
    if (!ok_transition)
        throw ContractError("fine_tune: illegal role transition " + to_string(model.role) +
                            " -> " + to_string(new_role));

    ModelCheckpoint out = model;
    out.role = new_role;
    out.seed = hyper.seed;
    out.lineage = "parent=" + model.id + "; " + event;

    if (hyper.epochs > 0) {
        CondCache conds{{}, &space};
        std::vector<nn::ParamRef> refs;
        out.net.params(refs);
        nn::Adam opt;
        opt.lr = hyper.lr;
        opt.init(refs);

        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        const int accum = std::max(1, hyper.grad_accum);
        int in_accum = 0;
        double epoch_loss = 0.0;
        for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
            Rng erng(derive_seed(hyper.seed, "ft-epoch", static_cast<std::uint64_t>(epoch)));
            erng.shuffle(order);
            epoch_loss = 0.0;
            for (std::size_t pos = 0; pos < order.size();
                 pos += static_cast<std::size_t>(hyper.batch)) {
                std::size_t bsz = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch),
                                                        order.size() - pos);
                std::vector<const ImageSample*> imgs;
                std::vector<const Eigen::VectorXf*> cv;
                for (std::size_t k = 0; k < bsz; ++k) {
                    const auto& pair = dataset[order[pos + k]];
                    imgs.push_back(&pair.first);
                    cv.push_back(&conds.get(pair.second));
                }
                const bool mix = hyper.cond_mix > 0.0f && hyper.cond_anchor.size() > 0;
                std::vector<Eigen::VectorXf> jittered;
                if (hyper.cond_noise > 0.0f || mix) {
                    jittered.reserve(bsz);
                    for (std::size_t k = 0; k < bsz; ++k) {
                        Eigen::VectorXf c = *cv[k];
                        if (mix) {
                            const float lam =
                                hyper.cond_mix * static_cast<float>(erng.uniform());
                            c = (1.0f - lam) * c + lam * hyper.cond_anchor;
                        }
                        for (Eigen::Index i = 0; i < c.size(); ++i)
                            c[i] += hyper.cond_noise * static_cast<float>(erng.normal());
                        c.normalize();
                        jittered.push_back(std::move(c));
                    }
                    for (std::size_t k = 0; k < bsz; ++k) cv[k] = &jittered[k];
                }
                auto draws = make_draws(erng, static_cast<int>(bsz), model.schedule.T, 0.0f);
                if (in_accum == 0) opt.zero_grad(refs);
                epoch_loss += diffusion_step(out.net, model.schedule, imgs, cv, draws, true,
                                             1.0f / static_cast<float>(accum));
                if (++in_accum == accum) {
                    opt.step(refs);
                    in_accum = 0;
                }
            }
            if (in_accum > 0) {
                opt.step(refs);
                in_accum = 0;
            }
            if (epoch == 0) out.first_epoch_loss = epoch_loss;
        }
        out.last_epoch_loss = epoch_loss;
    }
    out.id = make_id(out);
    return out;
}

GenerationBatch sample(const ModelCheckpoint& model, const corpus::Prompt& prompt, int n,
                       std::uint64_t master_seed, float guidance_scale,
                       const embedding::EmbeddingSpace& space) {
    if (n < 1) throw ConfigError("sample: n must be >= 1");
    if (model.config_hash != compute_config_hash(model.schedule, space, model.net.width))
        throw ContractError("sample: checkpoint config_hash does not match this encoder/schedule");
    const NoiseSchedule& sched = model.schedule;
    Eigen::VectorXf cond = embedding::condition_vector(space, prompt);
    auto& net = const_cast<DenoiserNet&>(model.net);  // parameters stay fixed

    GenerationBatch batch;
    batch.prompt = prompt;
    batch.model_id = model.id;
    batch.master_seed = master_seed;
    batch.guidance_scale = guidance_scale;
    batch.images.resize(static_cast<std::size_t>(n));

    const int chunk = 24;
    for (int start = 0; start < n; start += chunk) {
        const int B = std::min(chunk, n - start);
        // per-image streams: image k is a pure function of master_seed + k
        std::vector<Rng> rngs;
        rngs.reserve(static_cast<std::size_t>(B));
        for (int k = 0; k < B; ++k)
            rngs.emplace_back(master_seed + static_cast<std::uint64_t>(start + k));

        Mat x(3, static_cast<Eigen::Index>(B) * kPix);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < 3; ++c)
                for (int p = 0; p < kPix; ++p)
                    x(c, static_cast<Eigen::Index>(b) * kPix + p) =
                        static_cast<float>(rngs[static_cast<std::size_t>(b)].normal());

        Mat cond_mat(net.cond_dim, B);
        for (int b = 0; b < B; ++b) cond_mat.col(b) = cond;
        Mat zero_cond = Mat::Zero(net.cond_dim, B);

        for (int t = sched.T; t >= 1; --t) {
            std::vector<int> ts(static_cast<std::size_t>(B), t);
            Mat eps;
            if (guidance_scale == 0.0f) {
                eps = net.forward(x, ts, sched.T, zero_cond, B);
            } else if (guidance_scale == 1.0f) {
                eps = net.forward(x, ts, sched.T, cond_mat, B);
            } else {
                Mat eps_u = net.forward(x, ts, sched.T, zero_cond, B);
                Mat eps_c = net.forward(x, ts, sched.T, cond_mat, B);
                eps = eps_u + guidance_scale * (eps_c - eps_u);
            }
            const float ab = sched.alpha_bar(t);
            const float ab_prev = sched.alpha_bar(t - 1);
            const float beta = sched.betas[t - 1];
            const float alpha = sched.alphas[t - 1];
            // clipped-x0 posterior mean
            Mat x0 = (x - std::sqrt(1.0f - ab) * eps) / std::sqrt(ab);
            x0 = x0.cwiseMax(-1.0f).cwiseMin(1.0f);
            if (t > 1) {
                const float c0 = std::sqrt(ab_prev) * beta / (1.0f - ab);
                const float c1 = std::sqrt(alpha) * (1.0f - ab_prev) / (1.0f - ab);
                const float sigma = std::sqrt(beta * (1.0f - ab_prev) / (1.0f - ab));
                x = c0 * x0 + c1 * x;
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < 3; ++c)
                        for (int p = 0; p < kPix; ++p)
                            x(c, static_cast<Eigen::Index>(b) * kPix + p) +=
                                sigma * static_cast<float>(rngs[static_cast<std::size_t>(b)].normal());
            } else {
                x = x0;
            }
        }

        for (int b = 0; b < B; ++b) {
            ImageSample& img = batch.images[static_cast<std::size_t>(start + b)];
            img.pixels.resize(kImagePixels);
            img.source = ImageSource::generated;
            img.seed = master_seed + static_cast<std::uint64_t>(start + b);
            img.concept_id = -1;
            for (int c = 0; c < 3; ++c)
                for (int p = 0; p < kPix; ++p)
                    img.pixels[c * kPix + p] = std::clamp(
                        (x(c, static_cast<Eigen::Index>(b) * kPix + p) + 1.0f) * 0.5f, 0.0f, 1.0f);
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// persistence

void save_checkpoint(const std::string& path, const ModelCheckpoint& model) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    auto put = [&](const void* p, std::size_t n) {
        f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    };
    auto put_str = [&](const std::string& s) {
        std::uint64_t n = s.size();
        put(&n, 8);
        put(s.data(), s.size());
    };
    const char magic[8] = {'P', 'L', 'D', 'I', 'F', '0', '0', '0'};
    put(magic, 8);
    put(&kFormatVersion, 4);
    std::int32_t role = static_cast<std::int32_t>(model.role);
    std::int32_t width = model.net.width, cond_dim = model.net.cond_dim;
    std::int32_t T = model.schedule.T, kind = static_cast<std::int32_t>(model.schedule.kind);
    put(&role, 4);
    put(&width, 4);
    put(&cond_dim, 4);
    put(&T, 4);
    put(&kind, 4);
    put(&model.config_hash, 8);
    put(&model.seed, 8);
    put(&model.first_epoch_loss, 8);
    put(&model.last_epoch_loss, 8);
    put_str(model.id);
    put_str(model.lineage);
    std::vector<nn::ParamRef> refs;
    const_cast<DenoiserNet&>(model.net).params(refs);
    std::vector<float> blob;
    nn::serialize_params(refs, blob);
    std::uint64_t n = blob.size();
    put(&n, 8);
    put(blob.data(), blob.size() * sizeof(float));
    if (!f) throw IoError("write failed: " + path);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint: " + path);
    auto get = [&](void* p, std::size_t n) {
        f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!f) throw IoError("truncated checkpoint: " + path);
    };
    auto get_str = [&]() {
        std::uint64_t n;
        get(&n, 8);
        std::string s(n, '\0');
        get(s.data(), n);
        return s;
    };
    char magic[8];
    get(magic, 8);
    if (std::string(magic, 5) != "PLDIF") throw IoError("bad checkpoint magic");
    std::uint32_t version;
    get(&version, 4);
    if (version != kFormatVersion) throw IoError("unsupported checkpoint version");
    ModelCheckpoint model;
    std::int32_t role, width, cond_dim, T, kind;
    get(&role, 4);
    get(&width, 4);
    get(&cond_dim, 4);
    get(&T, 4);
    get(&kind, 4);
    model.role = static_cast<Role>(role);
    model.schedule = make_schedule(T, static_cast<ScheduleKind>(kind));
    get(&model.config_hash, 8);
    get(&model.seed, 8);
    get(&model.first_epoch_loss, 8);
    get(&model.last_epoch_loss, 8);
    model.id = get_str();
    model.lineage = get_str();
    Rng dummy(0);
    model.net.init(width, cond_dim, dummy);
    std::uint64_t n;
    get(&n, 8);
    std::vector<float> blob(n);
    get(blob.data(), n * sizeof(float));
    std::vector<nn::ParamRef> refs;
    model.net.params(refs);
    nn::deserialize_params(refs, blob);
    return model;
}

void save_generation_batch(const std::string& dir, const std::string& stem,
                           const GenerationBatch& batch, int grid_cols) {
    fs::create_directories(dir);
    write_png_grid((fs::path(dir) / (stem + ".png")).string(), batch.images, grid_cols);
    json side = {{"prompt", batch.prompt.text},
                 {"master_seed", batch.master_seed},
                 {"guidance_scale", batch.guidance_scale},
                 {"model_id", batch.model_id},
                 {"n", batch.images.size()}};
    std::ofstream jf(fs::path(dir) / (stem + ".json"));
    if (!jf) throw IoError("cannot write batch sidecar in " + dir);
    jf << side.dump(2) << '\n';
}

}  // namespace poisonlab::diffusion
