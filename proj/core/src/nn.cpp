#include "poisonlab/nn.hpp"

#include <cmath>

#include "poisonlab/errors.hpp"

namespace poisonlab::nn {

namespace {

void fill_normal(Mat& m, Rng& rng, float std) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            m(i, j) = std * static_cast<float>(rng.normal());
}

}  // namespace

void Linear::init(int in_dim, int out_dim, Rng& rng, float gain) {
    in = in_dim;
    out = out_dim;
    W.resize(out, in);
    fill_normal(W, rng, gain * std::sqrt(2.0f / static_cast<float>(in)));
    b = Vec::Zero(out);
    dW = Mat::Zero(out, in);
    db = Vec::Zero(out);
}

Mat Linear::forward(const Mat& x) {
    x_ = x;
    return (W * x).colwise() + b;
}

Mat Linear::backward(const Mat& dy) {
    dW.noalias() += dy * x_.transpose();
    db.noalias() += dy.rowwise().sum();
    return W.transpose() * dy;
}

void Linear::params(std::vector<ParamRef>& refs) {
    refs.push_back({W.data(), dW.data(), W.size()});
    refs.push_back({b.data(), db.data(), b.size()});
}

void Conv3x3::init(int cin_, int cout_, int stride_, Rng& rng, float gain) {
    cin = cin_;
    cout = cout_;
    stride = stride_;
    W.resize(cout, cin * 9);
    fill_normal(W, rng, gain * std::sqrt(2.0f / static_cast<float>(cin * 9)));
    b = Vec::Zero(cout);
    dW = Mat::Zero(cout, cin * 9);
    db = Vec::Zero(cout);
}

Mat Conv3x3::forward(const Mat& x, int h, int w, int batch) {
    if (x.rows() != cin || x.cols() != static_cast<Eigen::Index>(batch) * h * w)
        throw ContractError("conv: input shape mismatch");
    h_ = h;
    w_ = w;
    batch_ = batch;
    ho_ = (h + stride - 1) / stride;
    wo_ = (w + stride - 1) / stride;
    const Eigen::Index ncols = static_cast<Eigen::Index>(batch) * ho_ * wo_;
    patches_.resize(cin * 9, ncols);
    patches_.setZero();
    for (int bi = 0; bi < batch; ++bi) {
        const Eigen::Index in_base = static_cast<Eigen::Index>(bi) * h * w;
        const Eigen::Index out_base = static_cast<Eigen::Index>(bi) * ho_ * wo_;
        for (int oy = 0; oy < ho_; ++oy) {
            for (int ky = 0; ky < 3; ++ky) {
                int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int ox = 0; ox < wo_; ++ox) {
                    Eigen::Index col = out_base + static_cast<Eigen::Index>(oy) * wo_ + ox;
                    for (int kx = 0; kx < 3; ++kx) {
                        int ix = ox * stride + kx - 1;
                        if (ix < 0 || ix >= w) continue;
                        Eigen::Index src = in_base + static_cast<Eigen::Index>(iy) * w + ix;
                        patches_.block(static_cast<Eigen::Index>(ky * 3 + kx) * cin, col, cin, 1) =
                            x.col(src);
                    }
                }
            }
        }
    }
    return (W * patches_).colwise() + b;
}

Mat Conv3x3::backward(const Mat& dy) {
    dW.noalias() += dy * patches_.transpose();
    db.noalias() += dy.rowwise().sum();
    Mat dpatch = W.transpose() * dy;  // (cin*9) x ncols
    Mat dx = Mat::Zero(cin, static_cast<Eigen::Index>(batch_) * h_ * w_);
    for (int bi = 0; bi < batch_; ++bi) {
        const Eigen::Index in_base = static_cast<Eigen::Index>(bi) * h_ * w_;
        const Eigen::Index out_base = static_cast<Eigen::Index>(bi) * ho_ * wo_;
        for (int oy = 0; oy < ho_; ++oy) {
            for (int ky = 0; ky < 3; ++ky) {
                int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= h_) continue;
                for (int ox = 0; ox < wo_; ++ox) {
                    Eigen::Index col = out_base + static_cast<Eigen::Index>(oy) * wo_ + ox;
                    for (int kx = 0; kx < 3; ++kx) {
                        int ix = ox * stride + kx - 1;
                        if (ix < 0 || ix >= w_) continue;
                        Eigen::Index dst = in_base + static_cast<Eigen::Index>(iy) * w_ + ix;
                        dx.col(dst) +=
                            dpatch.block(static_cast<Eigen::Index>(ky * 3 + kx) * cin, col, cin, 1);
                    }
                }
            }
        }
    }
    return dx;
}

void Conv3x3::params(std::vector<ParamRef>& refs) {
    refs.push_back({W.data(), dW.data(), W.size()});
    refs.push_back({b.data(), db.data(), b.size()});
}

Mat SiLU::forward(const Mat& x) {
    x_ = x;
    return x.array() / (1.0f + (-x.array()).exp());
}

Mat SiLU::backward(const Mat& dy) {
    auto s = 1.0f / (1.0f + (-x_.array()).exp());
    return dy.array() * (s * (1.0f + x_.array() * (1.0f - s)));
}

Mat upsample2x(const Mat& x, int h, int w, int batch) {
    const int h2 = h * 2, w2 = w * 2;
    Mat y(x.rows(), static_cast<Eigen::Index>(batch) * h2 * w2);
    for (int bi = 0; bi < batch; ++bi) {
        const Eigen::Index ib = static_cast<Eigen::Index>(bi) * h * w;
        const Eigen::Index ob = static_cast<Eigen::Index>(bi) * h2 * w2;
        for (int y2 = 0; y2 < h2; ++y2)
            for (int x2 = 0; x2 < w2; ++x2)
                y.col(ob + static_cast<Eigen::Index>(y2) * w2 + x2) =
                    x.col(ib + static_cast<Eigen::Index>(y2 / 2) * w + x2 / 2);
    }
    return y;
}

Mat upsample2x_backward(const Mat& dy, int h, int w, int batch) {
    const int h2 = h * 2, w2 = w * 2;
    Mat dx = Mat::Zero(dy.rows(), static_cast<Eigen::Index>(batch) * h * w);
    for (int bi = 0; bi < batch; ++bi) {
        const Eigen::Index ib = static_cast<Eigen::Index>(bi) * h * w;
        const Eigen::Index ob = static_cast<Eigen::Index>(bi) * h2 * w2;
        for (int y2 = 0; y2 < h2; ++y2)
            for (int x2 = 0; x2 < w2; ++x2)
                dx.col(ib + static_cast<Eigen::Index>(y2 / 2) * w + x2 / 2) +=
                    dy.col(ob + static_cast<Eigen::Index>(y2) * w2 + x2);
    }
    return dx;
}

void Adam::init(const std::vector<ParamRef>& refs) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& r : refs) {
        m.push_back(Vec::Zero(r.n));
        v.push_back(Vec::Zero(r.n));
    }
}

void Adam::zero_grad(std::vector<ParamRef>& refs) {
    for (auto& r : refs) Eigen::Map<Vec>(r.g, r.n).setZero();
}

void Adam::step(std::vector<ParamRef>& refs) {
    ++t;
    const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(t));
    const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(t));
    for (std::size_t i = 0; i < refs.size(); ++i) {
        Eigen::Map<Vec> w(refs[i].w, refs[i].n);
        Eigen::Map<const Vec> g(refs[i].g, refs[i].n);
        m[i] = beta1 * m[i] + (1.0f - beta1) * g;
        v[i] = (beta2 * v[i]).array() + (1.0f - beta2) * g.array().square();
        w.array() -= lr * (m[i].array() / bc1) /
                     ((v[i].array() / bc2).sqrt() + eps);
    }
}

std::size_t param_count(const std::vector<ParamRef>& refs) {
    std::size_t n = 0;
    for (const auto& r : refs) n += static_cast<std::size_t>(r.n);
    return n;
}

void serialize_params(const std::vector<ParamRef>& refs, std::vector<float>& out) {
    out.clear();
    out.reserve(param_count(refs));
    for (const auto& r : refs) out.insert(out.end(), r.w, r.w + r.n);
}

void deserialize_params(std::vector<ParamRef>& refs, const std::vector<float>& in) {
    std::size_t off = 0;
    for (auto& r : refs) {
        if (off + static_cast<std::size_t>(r.n) > in.size())
            throw IoError("parameter blob too short");
        std::copy(in.begin() + static_cast<std::ptrdiff_t>(off),
                  in.begin() + static_cast<std::ptrdiff_t>(off + static_cast<std::size_t>(r.n)),
                  r.w);
        off += static_cast<std::size_t>(r.n);
    }
    if (off != in.size()) throw IoError("parameter blob size mismatch");
}

}  // namespace poisonlab::nn
