#include "occprior/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace occprior {

ConvLayer::ConvLayer(int out_channels, int in_channels, int kernel_h,
                     int kernel_w)
    : out_ch(out_channels), in_ch(in_channels), kh(kernel_h), kw(kernel_w) {
  validate();
  kernel = Eigen::ArrayXd::Zero(Eigen::Index(out_ch) * in_ch * kh * kw);
  bias = Eigen::ArrayXd::Zero(out_ch);
}

void ConvLayer::validate() const {
  if (out_ch < 1 || in_ch < 1)
    throw std::invalid_argument("ConvLayer: channel counts must be >= 1");
  if (kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0)
    throw std::invalid_argument("ConvLayer: kernel sizes must be odd");
}

bool ConvLayer::operator==(const ConvLayer& o) const {
  return out_ch == o.out_ch && in_ch == o.in_ch && kh == o.kh && kw == o.kw &&
         (kernel == o.kernel).all() && (bias == o.bias).all();
}

ConvLayer::Matrix ConvLayer::tap(int dy, int dx) const {
  Matrix m(out_ch, in_ch);
  for (int o = 0; o < out_ch; ++o)
    for (int i = 0; i < in_ch; ++i) m(o, i) = k(o, i, dy, dx);
  return m;
}

void ConvLayer::add_to_tap(int dy, int dx, const Matrix& m) {
  for (int o = 0; o < out_ch; ++o)
    for (int i = 0; i < in_ch; ++i) k(o, i, dy, dx) += m(o, i);
}

namespace {

// Calls f(out_row, in_row, count) for every run of output pixels that tap
// (dy, dx) reads from inside the image.
template <typename F>
void for_each_tap_run(int h, int w, int ph, int pw, int dy, int dx, F&& f) {
  const int col0 = std::max(0, pw - dx);
  const int col1 = std::min(w, w + pw - dx);
  if (col1 <= col0) return;
  for (int ih = 0; ih < h; ++ih) {
    const int sh = ih + dy - ph;
    if (sh < 0 || sh >= h) continue;
    f(Eigen::Index(ih) * w + col0, Eigen::Index(sh) * w + col0 + dx - pw,
      Eigen::Index(col1 - col0));
  }
}

void require_channels(const FeatureGrid& input, const ConvLayer& layer) {
  if (input.c != layer.in_ch)
    throw ShapeError("conv2d: input has " + std::to_string(input.c) +
                     " channels, layer expects " + std::to_string(layer.in_ch));
}

}  // namespace

FeatureGrid conv2d(const FeatureGrid& input, const ConvLayer& layer) {
  require_channels(input, layer);
  FeatureGrid out(input.h, input.w, layer.out_ch);
  auto y = out.as_matrix();
  const auto x = input.as_matrix();
  y.rowwise() = layer.bias.matrix().transpose();
  const int ph = layer.kh / 2, pw = layer.kw / 2;
  for (int dy = 0; dy < layer.kh; ++dy)
    for (int dx = 0; dx < layer.kw; ++dx) {
      const Eigen::MatrixXd kt = layer.tap(dy, dx).transpose();
      if (layer.kh == 1 && layer.kw == 1) {
        y.noalias() += x * kt;
        continue;
      }
      for_each_tap_run(input.h, input.w, ph, pw, dy, dx,
                       [&](Eigen::Index dst, Eigen::Index src, Eigen::Index n) {
                         y.middleRows(dst, n).noalias() +=
                             x.middleRows(src, n) * kt;
                       });
    }
  return out;
}

FeatureGrid conv2d_backward(const FeatureGrid& input, const ConvLayer& layer,
                            const FeatureGrid& out_grad, ConvLayer& grad) {
  require_channels(input, layer);
  if (out_grad.h != input.h || out_grad.w != input.w ||
      out_grad.c != layer.out_ch)
    throw ShapeError("conv2d_backward: output gradient shape mismatch");
  if (grad.out_ch != layer.out_ch || grad.in_ch != layer.in_ch ||
      grad.kh != layer.kh || grad.kw != layer.kw)
    throw ShapeError("conv2d_backward: gradient container shape mismatch");

  FeatureGrid in_grad(input.h, input.w, input.c);
  auto dx_m = in_grad.as_matrix();
  const auto x = input.as_matrix();
  const auto dy_m = out_grad.as_matrix();
  grad.bias += dy_m.colwise().sum().transpose().array();

  const int ph = layer.kh / 2, pw = layer.kw / 2;
  for (int dy = 0; dy < layer.kh; ++dy)
    for (int dx = 0; dx < layer.kw; ++dx) {
      const Eigen::MatrixXd t = layer.tap(dy, dx);
      Eigen::MatrixXd dt = Eigen::MatrixXd::Zero(layer.out_ch, layer.in_ch);
      if (layer.kh == 1 && layer.kw == 1) {
        dx_m.noalias() += dy_m * t;
        dt.noalias() += dy_m.transpose() * x;
      } else {
        for_each_tap_run(
            input.h, input.w, ph, pw, dy, dx,
            [&](Eigen::Index dst, Eigen::Index src, Eigen::Index n) {
              dx_m.middleRows(src, n).noalias() += dy_m.middleRows(dst, n) * t;
              dt.noalias() +=
                  dy_m.middleRows(dst, n).transpose() * x.middleRows(src, n);
            });
      }
      grad.add_to_tap(dy, dx, dt);
    }
  return in_grad;
}

FusionWeights FusionWeights::zeros_like() const {
  FusionWeights z;
  auto dst = z.layers();
  auto src = layers();
  for (std::size_t i = 0; i < dst.size(); ++i)
    *dst[i] = ConvLayer(src[i]->out_ch, src[i]->in_ch, src[i]->kh, src[i]->kw);
  return z;
}

void FusionWeights::validate() const {
  for (const ConvLayer* l : layers()) l->validate();
  const int c = w2.out_ch, p = align.in_ch;
  const bool ok = align.out_ch == c && w1.in_ch == 2 * c && w1.out_ch == c &&
                  w2.in_ch == c && w3.in_ch == 2 * c && w3.out_ch == c &&
                  head.in_ch == c && head.out_ch == p;
  if (!ok) throw ShapeError("FusionWeights: inconsistent channel wiring");
}

bool FusionWeights::operator==(const FusionWeights& o) const {
  auto a = layers();
  auto b = o.layers();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(*a[i] == *b[i])) return false;
  return true;
}

FusionWeights init_weights(int channels, int prior_channels,
                           std::uint64_t seed) {
  if (channels < 1 || prior_channels < 1)
    throw std::invalid_argument("init_weights: channel counts must be >= 1");
  FusionWeights w;
  w.align = ConvLayer(channels, prior_channels, 1, 1);
  w.w1 = ConvLayer(channels, 2 * channels, 3, 3);
  w.w2 = ConvLayer(channels, channels, 3, 3);
  w.w3 = ConvLayer(channels, 2 * channels, 3, 3);
  w.head = ConvLayer(prior_channels, channels, 1, 1);

  std::mt19937_64 rng(seed);
  for (ConvLayer* l : w.layers()) {
    const double bound = std::sqrt(1.0 / (double(l->in_ch) * l->kh * l->kw));
    for (Eigen::Index i = 0; i < l->kernel.size(); ++i) {
      // 53-bit uniform in [0, 1); avoids distribution-specific stdlib code.
      const double u = double(rng() >> 11) * 0x1.0p-53;
      l->kernel[i] = (2.0 * u - 1.0) * bound;
    }
  }
  return w;
}

void FusionOutput::discard_intermediates() {
  has_intermediates = false;
  f_c = prior = f_p = cat_in = sum_in = gate_in = gate_pre = FeatureGrid{};
}

FeatureGrid concat_channels(const FeatureGrid& a, const FeatureGrid& b) {
  if (a.h != b.h || a.w != b.w)
    throw ShapeError("concat_channels: plane sizes differ");
  FeatureGrid out(a.h, a.w, a.c + b.c);
  auto m = out.as_matrix();
  m.leftCols(a.c) = a.as_matrix();
  m.rightCols(b.c) = b.as_matrix();
  return out;
}

namespace {

void require_finite(const FeatureGrid& f, const char* what) {
  if (!f.values.allFinite())
    throw std::domain_error(std::string("fuse: non-finite values in ") + what);
}

FeatureGrid split_channels(const FeatureGrid& f, int first, int count) {
  FeatureGrid out(f.h, f.w, count);
  out.as_matrix() = f.as_matrix().middleCols(first, count);
  return out;
}

}  // namespace

FusionOutput fuse(const FeatureGrid& f_c, const FeatureGrid& prior_bev,
                  const FusionWeights& weights) {
  weights.validate();
  if (f_c.c != weights.channels())
    throw ShapeError("fuse: current feature has " + std::to_string(f_c.c) +
                     " channels, weights expect " +
                     std::to_string(weights.channels()));
  if (prior_bev.h != f_c.h || prior_bev.w != f_c.w ||
      prior_bev.c != weights.prior_channels())
    throw ShapeError("fuse: prior shape mismatch");
  require_finite(f_c, "current feature");
  require_finite(prior_bev, "prior");

  FusionOutput out;
  out.f_c = f_c;
  out.prior = prior_bev;
  out.f_p = conv2d(prior_bev, weights.align);
  out.cat_in = concat_channels(f_c, out.f_p);
  const FeatureGrid f_cat = conv2d(out.cat_in, weights.w1);
  out.sum_in = FeatureGrid(f_c.h, f_c.w, f_c.c);
  out.sum_in.values = f_c.values + out.f_p.values;
  const FeatureGrid f_add = conv2d(out.sum_in, weights.w2);
  out.gate_in = concat_channels(f_cat, f_add);
  out.gate_pre = conv2d(out.gate_in, weights.w3);

  out.alpha = FeatureGrid(f_c.h, f_c.w, f_c.c);
  out.alpha.values =
      1.0 / (1.0 + (-out.gate_pre.values.cwiseMax(-kGateClamp)
                         .cwiseMin(kGateClamp)).exp());

  const Eigen::ArrayXd& a = out.alpha.values;
  const Eigen::ArrayXd& c = f_c.values;
  const Eigen::ArrayXd& p = out.f_p.values;
  out.f_agg = FeatureGrid(f_c.h, f_c.w, f_c.c);
  // Clamp absorbs last-bit rounding so the result stays inside [F_c, F_p].
  out.f_agg.values = (a * c + (1.0 - a) * p).max(c.min(p)).min(c.max(p));
  out.has_intermediates = true;
  return out;
}

FusionOutput fuse_without_prior(const FeatureGrid& f_c,
                                const FusionWeights& weights) {
  FusionOutput out = fuse(
      f_c, FeatureGrid(f_c.h, f_c.w, weights.prior_channels()), weights);
  out.prior_valid = false;
  return out;
}

FusionGrads fuse_backward(const FeatureGrid& output_grad,
                          const FusionOutput& saved,
                          const FusionWeights& weights) {
  if (!saved.has_intermediates)
    throw std::logic_error("fuse_backward: forward intermediates were discarded");
  if (!output_grad.same_shape(saved.f_agg))
    throw ShapeError("fuse_backward: output gradient shape mismatch");

  FusionGrads g;
  g.weights = weights.zeros_like();
  const int c = weights.channels();
  const Eigen::ArrayXd& a = saved.alpha.values;
  const Eigen::ArrayXd& dy = output_grad.values;

  // Eq. F_agg = a F_c + (1 - a) F_p.
  FeatureGrid d_fc(saved.f_c.h, saved.f_c.w, c);
  FeatureGrid d_fp(saved.f_c.h, saved.f_c.w, c);
  d_fc.values = dy * a;
  d_fp.values = dy * (1.0 - a);

  FeatureGrid d_pre(saved.f_c.h, saved.f_c.w, c);
  const Eigen::ArrayXd inside =
      (saved.gate_pre.values.abs() < kGateClamp).cast<double>();
  d_pre.values =
      dy * (saved.f_c.values - saved.f_p.values) * a * (1.0 - a) * inside;

  const FeatureGrid d_gate_in =
      conv2d_backward(saved.gate_in, weights.w3, d_pre, g.weights.w3);
  const FeatureGrid d_fcat = split_channels(d_gate_in, 0, c);
  const FeatureGrid d_fadd = split_channels(d_gate_in, c, c);

  const FeatureGrid d_cat_in =
      conv2d_backward(saved.cat_in, weights.w1, d_fcat, g.weights.w1);
  d_fc.as_matrix() += d_cat_in.as_matrix().leftCols(c);
  d_fp.as_matrix() += d_cat_in.as_matrix().rightCols(c);

  const FeatureGrid d_sum =
      conv2d_backward(saved.sum_in, weights.w2, d_fadd, g.weights.w2);
  d_fc.values += d_sum.values;
  d_fp.values += d_sum.values;

  g.prior = conv2d_backward(saved.prior, weights.align, d_fp, g.weights.align);
  g.f_c = std::move(d_fc);
  return g;
}

FeatureGrid decode_head(const FeatureGrid& features,
                        const FusionWeights& weights) {
  return conv2d(features, weights.head);
}

namespace {

// Cross-entropy over each voxel's class block of BEV logits. Writes
// d(loss)/d(logits) * scale into `grad` when non-null.
double cross_entropy(const FeatureGrid& logits_bev, const LabelGrid& target,
                     std::span<const double> class_weights, double scale,
                     FeatureGrid* grad) {
  const GridSpec& s = target.spec;
  if (logits_bev.h != s.h || logits_bev.w != s.w ||
      logits_bev.c != s.bev_channels())
    throw ShapeError("train: decode head output disagrees with target spec");
  const int n = s.n_classes;
  if (!class_weights.empty() && int(class_weights.size()) != n)
    throw ShapeError("train: class_weights size must equal n_classes");
  double total = 0.0;
  for (std::size_t v = 0; v < s.voxel_count(); ++v) {
    const auto block = logits_bev.values.segment(Eigen::Index(v) * n, n);
    const double mx = block.maxCoeff();
    const Eigen::ArrayXd e = (block - mx).exp();
    const double z = e.sum();
    const int t = target.labels[v];
    const double wt = class_weights.empty() ? 1.0 : class_weights[std::size_t(t)];
    total += wt * (std::log(z) - (block[t] - mx));
    if (grad) {
      auto gb = grad->values.segment(Eigen::Index(v) * n, n);
      gb = e / z * (wt * scale);
      gb[t] -= wt * scale;
    }
  }
  return total;
}

}  // namespace

double loss_and_gradient(std::span<const TrainSample> batch,
                         const FusionWeights& weights, FusionWeights& grads,
                         const TrainOptions& options) {
  if (batch.empty()) throw std::invalid_argument("train: empty batch");
  grads = weights.zeros_like();
  double total = 0.0;
  // Fixed sample order keeps gradient accumulation deterministic.
  for (const TrainSample& sample : batch) {
    const double scale =
        1.0 / (double(batch.size()) * double(sample.target.spec.voxel_count()));
    FusionOutput fused;
    const FeatureGrid* features = &sample.current;
    if (!options.bypass_prior) {
      fused = fuse(sample.current, sample.prior, weights);
      features = &fused.f_agg;
    }
    const FeatureGrid logits = decode_head(*features, weights);
    FeatureGrid d_logits(logits.h, logits.w, logits.c);
    total += scale * cross_entropy(logits, sample.target, options.class_weights, scale, &d_logits);

    const FeatureGrid d_features =
        conv2d_backward(*features, weights.head, d_logits, grads.head);
    if (options.bypass_prior) continue;
    const FusionGrads fg = fuse_backward(d_features, fused, weights);
    auto dst = grads.layers();
    auto src = fg.weights.layers();
    for (std::size_t i = 0; i + 1 < dst.size(); ++i) {
      dst[i]->kernel += src[i]->kernel;
      dst[i]->bias += src[i]->bias;
    }
  }
  return total;
}

double loss(std::span<const TrainSample> batch, const FusionWeights& weights,
            const TrainOptions& options) {
  if (batch.empty()) throw std::invalid_argument("train: empty batch");
  double total = 0.0;
  for (const TrainSample& sample : batch) {
    const double scale =
        1.0 / (double(batch.size()) * double(sample.target.spec.voxel_count()));
    const FeatureGrid logits =
        options.bypass_prior
            ? decode_head(sample.current, weights)
            : decode_head(fuse(sample.current, sample.prior, weights).f_agg,
                          weights);
    total += scale * cross_entropy(logits, sample.target, options.class_weights, scale, nullptr);
  }
  return total;
}

double train_step(std::span<const TrainSample> batch, FusionWeights& weights,
                  double lr, const TrainOptions& options) {
  if (!(lr >= 0.0)) throw std::invalid_argument("train_step: lr must be >= 0");
  FusionWeights grads;
  const double l = loss_and_gradient(batch, weights, grads, options);
  if (!std::isfinite(l)) throw DivergenceError("train_step: non-finite loss");
  auto dst = weights.layers();
  auto src = grads.layers();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i]->kernel -= lr * src[i]->kernel;
    dst[i]->bias -= lr * src[i]->bias;
  }
  return l;
}

}  // namespace occprior
