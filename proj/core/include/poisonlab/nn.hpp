#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "poisonlab/rng.hpp"

namespace poisonlab::nn {

using Mat = Eigen::MatrixXf;
using Vec = Eigen::VectorXf;

// Feature maps are (channels x batch*H*W) matrices with columns grouped by
// sample: column b*H*W + y*W + x. Vectors are (features x batch).

struct ParamRef {
    float* w = nullptr;
    float* g = nullptr;
    Eigen::Index n = 0;
};

struct Linear {
    int in = 0, out = 0;
    Mat W, dW;
    Vec b, db;
    Mat x_;

    void init(int in_dim, int out_dim, Rng& rng, float gain = 1.0f);
    Mat forward(const Mat& x);
    Mat backward(const Mat& dy);
    void params(std::vector<ParamRef>& refs);
};

// 3x3 convolution, zero padding 1, stride 1 or 2, via im2col + GEMM.
struct Conv3x3 {
    int cin = 0, cout = 0, stride = 1;
    Mat W, dW;  // cout x cin*9
    Vec b, db;
    Mat patches_;
    int h_ = 0, w_ = 0, ho_ = 0, wo_ = 0, batch_ = 0;

    void init(int cin_, int cout_, int stride_, Rng& rng, float gain = 1.0f);
    Mat forward(const Mat& x, int h, int w, int batch);
    Mat backward(const Mat& dy);
    void params(std::vector<ParamRef>& refs);
};

struct SiLU {
    Mat x_;
    Mat forward(const Mat& x);
    Mat backward(const Mat& dy);
};

// nearest-neighbour 2x upsample of (C x B*H*W) maps
Mat upsample2x(const Mat& x, int h, int w, int batch);
Mat upsample2x_backward(const Mat& dy, int h, int w, int batch);

struct Adam {
    float lr = 1e-3f, beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
    int t = 0;
    std::vector<Vec> m, v;

    void init(const std::vector<ParamRef>& refs);
    void zero_grad(std::vector<ParamRef>& refs);
    void step(std::vector<ParamRef>& refs);
};

std::size_t param_count(const std::vector<ParamRef>& refs);
void serialize_params(const std::vector<ParamRef>& refs, std::vector<float>& out);
void deserialize_params(std::vector<ParamRef>& refs, const std::vector<float>& in);

}  // namespace poisonlab::nn
