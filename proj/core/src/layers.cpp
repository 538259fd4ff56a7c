#include "degan/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "degan/errors.hpp"

namespace degan {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::RowVectorXd>;
using VectorMap = Eigen::Map<Eigen::RowVectorXd>;

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

void check_rank(const Tensor& x, std::size_t rank, const char* who) {
  if (x.rank() != rank) {
    throw ArgumentError(std::string(who) + ": expected rank " + std::to_string(rank) + " input, got " +
                        shape_to_string(x.shape));
  }
}

void fill_normal(std::span<double> out, double stddev, Engine& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& v : out) v = normal(rng);
}

double init_stddev(InitScheme scheme, std::size_t fan_in) {
  switch (scheme) {
    case InitScheme::dcgan:
      return 0.02;
    case InitScheme::he:
      return std::sqrt(2.0 / static_cast<double>(fan_in));
  }
  return 0.02;
}

// Image tensor dims for a batch of HWC samples.
struct ImageDims {
  std::size_t n, h, w, c;
};

ImageDims image_dims(const Tensor& x, const char* who) {
  check_rank(x, 4, who);
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

// Unfolds k x k patches of an NHWC image into rows of a (n*oh*ow) x (k*k*c) matrix.
void im2col(const double* img, const ImageDims& d, const ConvGeometry& g, std::size_t oh, std::size_t ow,
            double* cols) {
  const std::size_t k = g.kernel;
  const std::size_t row_len = k * k * d.c;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double* row = cols + ((n * oh + oy) * ow + ox) * row_len;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            double* dst = row + (ky * k + kx) * d.c;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(d.h) || ix >= static_cast<std::ptrdiff_t>(d.w)) {
              std::fill(dst, dst + d.c, 0.0);
            } else {
              const double* src = img + ((n * d.h + static_cast<std::size_t>(iy)) * d.w + static_cast<std::size_t>(ix)) * d.c;
              std::copy(src, src + d.c, dst);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds patch rows back into an NHWC image.
void col2im(const double* cols, const ImageDims& d, const ConvGeometry& g, std::size_t oh, std::size_t ow,
            double* img) {
  const std::size_t k = g.kernel;
  const std::size_t row_len = k * k * d.c;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double* row = cols + ((n * oh + oy) * ow + ox) * row_len;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
            const double* src = row + (ky * k + kx) * d.c;
            double* dst = img + ((n * d.h + static_cast<std::size_t>(iy)) * d.w + static_cast<std::size_t>(ix)) * d.c;
            for (std::size_t c = 0; c < d.c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace

void Layer::init(std::span<double>, std::span<double>, Engine&) const {}

std::size_t ConvGeometry::conv_out(std::size_t in) const {
  if (in + 2 * pad < kernel) throw ConfigError("convolution kernel larger than padded input");
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t ConvGeometry::transposed_out(std::size_t in) const {
  const std::size_t full = (in - 1) * stride + kernel;
  if (full < 2 * pad) throw ConfigError("transposed convolution padding exceeds output");
  return full - 2 * pad;
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in, std::size_t out, InitScheme init) : in_(in), out_(out), scheme_(init) {
  if (in == 0 || out == 0) throw ConfigError("dense layer needs positive extents");
}

Shape Dense::output_shape(const Shape& sample_in) const {
  if (shape_size(sample_in) != in_) {
    throw ConfigError("dense layer expects " + std::to_string(in_) + " inputs, got " + shape_to_string(sample_in));
  }
  return {out_};
}

void Dense::init(std::span<double> params, std::span<double>, Engine& rng) const {
  fill_normal(params.first(in_ * out_), init_stddev(scheme_, in_), rng);
  std::fill(params.begin() + static_cast<std::ptrdiff_t>(in_ * out_), params.end(), 0.0);
}

Tensor Dense::forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const {
  const std::size_t n = x.batch();
  if (x.sample_size() != in_) throw ArgumentError("dense: input sample size mismatch");
  Tensor y({n, out_});
  ConstMatrixMap X(x.data.data(), idx(n), idx(in_));
  ConstMatrixMap W(args.params.data(), idx(in_), idx(out_));
  ConstVectorMap b(args.params.data() + in_ * out_, idx(out_));
  MatrixMap Y(y.data.data(), idx(n), idx(out_));
  Y.noalias() = X * W;
  Y.rowwise() += b;
  if (cache) cache->input = x;
  return y;
}

Tensor Dense::backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                       std::span<double> grad_params) const {
  const std::size_t n = grad_out.batch();
  ConstMatrixMap G(grad_out.data.data(), idx(n), idx(out_));
  ConstMatrixMap W(params.data(), idx(in_), idx(out_));
  if (!grad_params.empty()) {
    ConstMatrixMap X(cache.input.data.data(), idx(n), idx(in_));
    MatrixMap gW(grad_params.data(), idx(in_), idx(out_));
    VectorMap gb(grad_params.data() + in_ * out_, idx(out_));
    gW.noalias() += X.transpose() * G;
    gb += G.colwise().sum();
  }
  Tensor gx(cache.input.shape);
  MatrixMap gX(gx.data.data(), idx(n), idx(in_));
  gX.noalias() = G * W.transpose();
  return gx;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geom, InitScheme init)
    : cin_(in_channels), cout_(out_channels), geom_(geom), scheme_(init) {
  if (cin_ == 0 || cout_ == 0 || geom_.kernel == 0 || geom_.stride == 0) {
    throw ConfigError("conv2d needs positive channels, kernel and stride");
  }
}

Shape Conv2d::output_shape(const Shape& s) const {
  if (s.size() != 3 || s[2] != cin_) throw ConfigError("conv2d expects HxWx" + std::to_string(cin_) + " input");
  return {geom_.conv_out(s[0]), geom_.conv_out(s[1]), cout_};
}

std::size_t Conv2d::param_count() const { return geom_.kernel * geom_.kernel * cin_ * cout_ + cout_; }

void Conv2d::init(std::span<double> params, std::span<double>, Engine& rng) const {
  const std::size_t nw = geom_.kernel * geom_.kernel * cin_ * cout_;
  fill_normal(params.first(nw), init_stddev(scheme_, geom_.kernel * geom_.kernel * cin_), rng);
  std::fill(params.begin() + static_cast<std::ptrdiff_t>(nw), params.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const {
  const ImageDims d = image_dims(x, "conv2d");
  if (d.c != cin_) throw ArgumentError("conv2d: channel mismatch");
  const std::size_t oh = geom_.conv_out(d.h);
  const std::size_t ow = geom_.conv_out(d.w);
  const std::size_t rows = d.n * oh * ow;
  const std::size_t kk = geom_.kernel * geom_.kernel * cin_;

  Tensor cols({rows, kk});
  im2col(x.data.data(), d, geom_, oh, ow, cols.data.data());

  Tensor y({d.n, oh, ow, cout_});
  ConstMatrixMap C(cols.data.data(), idx(rows), idx(kk));
  ConstMatrixMap W(args.params.data(), idx(kk), idx(cout_));
  ConstVectorMap b(args.params.data() + kk * cout_, idx(cout_));
  MatrixMap Y(y.data.data(), idx(rows), idx(cout_));
  Y.noalias() = C * W;
  Y.rowwise() += b;
  if (cache) {
    cache->input = Tensor(x.shape);  // only the shape is needed; cols hold the data
    cache->aux = std::move(cols);
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                        std::span<double> grad_params) const {
  const ImageDims d{cache.input.dim(0), cache.input.dim(1), cache.input.dim(2), cache.input.dim(3)};
  const std::size_t oh = grad_out.dim(1);
  const std::size_t ow = grad_out.dim(2);
  const std::size_t rows = d.n * oh * ow;
  const std::size_t kk = geom_.kernel * geom_.kernel * cin_;

  ConstMatrixMap G(grad_out.data.data(), idx(rows), idx(cout_));
  ConstMatrixMap W(params.data(), idx(kk), idx(cout_));
  if (!grad_params.empty()) {
    ConstMatrixMap C(cache.aux.data.data(), idx(rows), idx(kk));
    MatrixMap gW(grad_params.data(), idx(kk), idx(cout_));
    VectorMap gb(grad_params.data() + kk * cout_, idx(cout_));
    gW.noalias() += C.transpose() * G;
    gb += G.colwise().sum();
  }
  RowMatrix gcols = G * W.transpose();
  Tensor gx(cache.input.shape);
  col2im(gcols.data(), d, geom_, oh, ow, gx.data.data());
  return gx;
}

// ---------------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geom, InitScheme init)
    : cin_(in_channels), cout_(out_channels), geom_(geom), scheme_(init) {
  if (cin_ == 0 || cout_ == 0 || geom_.kernel == 0 || geom_.stride == 0) {
    throw ConfigError("conv_transpose2d needs positive channels, kernel and stride");
  }
}

Shape ConvTranspose2d::output_shape(const Shape& s) const {
  if (s.size() != 3 || s[2] != cin_) {
    throw ConfigError("conv_transpose2d expects HxWx" + std::to_string(cin_) + " input");
  }
  return {geom_.transposed_out(s[0]), geom_.transposed_out(s[1]), cout_};
}

std::size_t ConvTranspose2d::param_count() const { return cin_ * geom_.kernel * geom_.kernel * cout_ + cout_; }

void ConvTranspose2d::init(std::span<double> params, std::span<double>, Engine& rng) const {
  const std::size_t nw = cin_ * geom_.kernel * geom_.kernel * cout_;
  fill_normal(params.first(nw), init_stddev(scheme_, cin_), rng);
  std::fill(params.begin() + static_cast<std::ptrdiff_t>(nw), params.end(), 0.0);
}

// Weights form a cin x (k*k*cout) matrix: each input pixel emits one k x k x cout patch.
Tensor ConvTranspose2d::forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const {
  const ImageDims in = image_dims(x, "conv_transpose2d");
  if (in.c != cin_) throw ArgumentError("conv_transpose2d: channel mismatch");
  const std::size_t oh = geom_.transposed_out(in.h);
  const std::size_t ow = geom_.transposed_out(in.w);
  const std::size_t rows = in.n * in.h * in.w;
  const std::size_t kk = geom_.kernel * geom_.kernel * cout_;

  ConstMatrixMap X(x.data.data(), idx(rows), idx(cin_));
  ConstMatrixMap W(args.params.data(), idx(cin_), idx(kk));
  RowMatrix cols = X * W;

  Tensor y({in.n, oh, ow, cout_});
  const ImageDims out{in.n, oh, ow, cout_};
  col2im(cols.data(), out, geom_, in.h, in.w, y.data.data());
  ConstVectorMap b(args.params.data() + cin_ * kk, idx(cout_));
  MatrixMap Y(y.data.data(), idx(in.n * oh * ow), idx(cout_));
  Y.rowwise() += b;
  if (cache) cache->input = x;
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                                 std::span<double> grad_params) const {
  const ImageDims in{cache.input.dim(0), cache.input.dim(1), cache.input.dim(2), cache.input.dim(3)};
  const ImageDims out = image_dims(grad_out, "conv_transpose2d backward");
  const std::size_t rows = in.n * in.h * in.w;
  const std::size_t kk = geom_.kernel * geom_.kernel * cout_;

  RowMatrix gcols(idx(rows), idx(kk));
  im2col(grad_out.data.data(), out, geom_, in.h, in.w, gcols.data());

  ConstMatrixMap W(params.data(), idx(cin_), idx(kk));
  if (!grad_params.empty()) {
    ConstMatrixMap X(cache.input.data.data(), idx(rows), idx(cin_));
    MatrixMap gW(grad_params.data(), idx(cin_), idx(kk));
    VectorMap gb(grad_params.data() + cin_ * kk, idx(cout_));
    gW.noalias() += X.transpose() * gcols;
    ConstMatrixMap G(grad_out.data.data(), idx(out.n * out.h * out.w), idx(cout_));
    gb += G.colwise().sum();
  }
  Tensor gx(cache.input.shape);
  MatrixMap gX(gx.data.data(), idx(rows), idx(cin_));
  gX.noalias() = gcols * W.transpose();
  return gx;
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::size_t channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  if (channels == 0) throw ConfigError("batch_norm needs channels");
}

void BatchNorm::init(std::span<double> params, std::span<double> state, Engine& rng) const {
  // DCGAN convention: gamma ~ N(1, 0.02), beta = 0.
  std::normal_distribution<double> normal(1.0, 0.02);
  for (std::size_t c = 0; c < channels_; ++c) {
    params[c] = normal(rng);
    params[channels_ + c] = 0.0;
    state[c] = 0.0;
    state[channels_ + c] = 1.0;
  }
}

Tensor BatchNorm::forward(const Tensor& x, const ForwardArgs& args, LayerCache* cache) const {
  if (x.shape.back() != channels_) throw ArgumentError("batch_norm: channel mismatch");
  const std::size_t m = x.size() / channels_;
  ConstMatrixMap X(x.data.data(), idx(m), idx(channels_));
  ConstVectorMap gamma(args.params.data(), idx(channels_));
  ConstVectorMap beta(args.params.data() + channels_, idx(channels_));

  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd var;
  if (args.training) {
    if (m < 2) throw ArgumentError("batch_norm: training needs at least two values per channel");
    mean = X.colwise().mean();
    var = (X.rowwise() - mean).array().square().colwise().mean();
    if (!args.state_update.empty()) {
      VectorMap run_mean(args.state_update.data(), idx(channels_));
      VectorMap run_var(args.state_update.data() + channels_, idx(channels_));
      const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
      run_mean = (1.0 - momentum_) * run_mean + momentum_ * mean;
      run_var = (1.0 - momentum_) * run_var + (momentum_ * unbias) * var;
    }
  } else {
    mean = ConstVectorMap(args.state.data(), idx(channels_));
    var = ConstVectorMap(args.state.data() + channels_, idx(channels_));
  }
  const Eigen::RowVectorXd inv_std = (var.array() + eps_).rsqrt();

  Tensor xhat(x.shape);
  MatrixMap Xh(xhat.data.data(), idx(m), idx(channels_));
  Xh = (X.rowwise() - mean).array().rowwise() * inv_std.array();
  Tensor y(x.shape);
  MatrixMap Y(y.data.data(), idx(m), idx(channels_));
  Y = (Xh.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->input = Tensor(x.shape);
    cache->aux = std::move(xhat);
    cache->channel.assign(inv_std.data(), inv_std.data() + channels_);
    cache->training = args.training;
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out, std::span<const double> params, const LayerCache& cache,
                           std::span<double> grad_params) const {
  const std::size_t m = grad_out.size() / channels_;
  ConstMatrixMap G(grad_out.data.data(), idx(m), idx(channels_));
  ConstMatrixMap Xh(cache.aux.data.data(), idx(m), idx(channels_));
  ConstVectorMap gamma(params.data(), idx(channels_));
  ConstVectorMap inv_std(cache.channel.data(), idx(channels_));

  const Eigen::RowVectorXd sum_g = G.colwise().sum();
  const Eigen::RowVectorXd sum_gx = (G.array() * Xh.array()).colwise().sum();
  if (!grad_params.empty()) {
    VectorMap(grad_params.data(), idx(channels_)) += sum_gx;
    VectorMap(grad_params.data() + channels_, idx(channels_)) += sum_g;
  }
  Tensor gx(grad_out.shape);
  MatrixMap GX(gx.data.data(), idx(m), idx(channels_));
  const Eigen::RowVectorXd scale = (gamma.array() * inv_std.array()).matrix();
  if (cache.training) {
    const double inv_m = 1.0 / static_cast<double>(m);
    GX = ((G.array().rowwise() - (sum_g * inv_m).array()) -
          (Xh.array().rowwise() * (sum_gx * inv_m).array()))
             .rowwise() *
         scale.array();
  } else {
    GX = G.array().rowwise() * scale.array();
  }
  return gx;
}

// ---------------------------------------------------------------- activations

Tensor Relu::forward(const Tensor& x, const ForwardArgs&, LayerCache* cache) const {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (cache) cache->input = x;
  return y;
}

Tensor Relu::backward(const Tensor& g, std::span<const double>, const LayerCache& cache, std::span<double>) const {
  Tensor gx(g.shape);
  for (std::size_t i = 0; i < g.size(); ++i) gx[i] = cache.input[i] > 0.0 ? g[i] : 0.0;
  return gx;
}

Tensor LeakyRelu::forward(const Tensor& x, const ForwardArgs&, LayerCache* cache) const {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : slope_ * x[i];
  if (cache) cache->input = x;
  return y;
}

Tensor LeakyRelu::backward(const Tensor& g, std::span<const double>, const LayerCache& cache,
                           std::span<double>) const {
  Tensor gx(g.shape);
  for (std::size_t i = 0; i < g.size(); ++i) gx[i] = cache.input[i] > 0.0 ? g[i] : slope_ * g[i];
  return gx;
}

Tensor Tanh::forward(const Tensor& x, const ForwardArgs&, LayerCache* cache) const {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  if (cache) cache->output = y;
  return y;
}

Tensor Tanh::backward(const Tensor& g, std::span<const double>, const LayerCache& cache, std::span<double>) const {
  Tensor gx(g.shape);
  for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (1.0 - cache.output[i] * cache.output[i]);
  return gx;
}

Tensor Sigmoid::forward(const Tensor& x, const ForwardArgs&, LayerCache* cache) const {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
  }
  if (cache) cache->output = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& g, std::span<const double>, const LayerCache& cache, std::span<double>) const {
  Tensor gx(g.shape);
  for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * cache.output[i] * (1.0 - cache.output[i]);
  return gx;
}

// ---------------------------------------------------------------- shape layers

Shape Reshape::output_shape(const Shape& sample_in) const {
  if (shape_size(sample_in) != shape_size(target_)) {
    throw ConfigError("reshape: cannot map " + shape_to_string(sample_in) + " to " + shape_to_string(target_));
  }
  return target_;
}

Tensor Reshape::forward(const Tensor& x, const ForwardArgs&, LayerCache* cache) const {
  Shape s{x.batch()};
  s.insert(s.end(), target_.begin(), target_.end());
  if (cache) cache->input = Tensor(x.shape);
  return x.reshaped(std::move(s));
}

Tensor Reshape::backward(const Tensor& g, std::span<const double>, const LayerCache& cache, std::span<double>) const {
  return g.reshaped(cache.input.shape);
}

Shape CenterCrop::output_shape(const Shape& s) const {
  if (s.size() != 3 || s[0] < height_ || s[1] < width_ || (s[0] - height_) % 2 != 0 || (s[1] - width_) % 2 != 0) {
    throw ConfigError("center_crop: cannot crop " + shape_to_string(s) + " to " + std::to_string(height_) + "x" +
                      std::to_string(width_));
  }
  return {height_, width_, s[2]};
}

Tensor CenterCrop::forward(const Tensor& x, const ForwardArgs&, LayerCache* cache) const {
  const ImageDims d = image_dims(x, "center_crop");
  const std::size_t top = (d.h - height_) / 2;
  const std::size_t left = (d.w - width_) / 2;
  Tensor y({d.n, height_, width_, d.c});
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t r = 0; r < height_; ++r) {
      const double* src = x.data.data() + ((n * d.h + top + r) * d.w + left) * d.c;
      std::copy(src, src + width_ * d.c, y.data.data() + ((n * height_ + r) * width_) * d.c);
    }
  }
  if (cache) cache->input = Tensor(x.shape);
  return y;
}

Tensor CenterCrop::backward(const Tensor& g, std::span<const double>, const LayerCache& cache,
                            std::span<double>) const {
  const ImageDims d{cache.input.dim(0), cache.input.dim(1), cache.input.dim(2), cache.input.dim(3)};
  const std::size_t top = (d.h - height_) / 2;
  const std::size_t left = (d.w - width_) / 2;
  Tensor gx(cache.input.shape);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t r = 0; r < height_; ++r) {
      const double* src = g.data.data() + ((n * height_ + r) * width_) * d.c;
      std::copy(src, src + width_ * d.c, gx.data.data() + ((n * d.h + top + r) * d.w + left) * d.c);
    }
  }
  return gx;
}

}  // namespace degan
