#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

#include <Eigen/Core>

#include "occprior/grid.hpp"

namespace occprior {

/// Same-padded, stride-1 2D cross-correlation layer.
///
/// Kernel layout is (out, in, kh, kw) row-major.
struct ConvLayer {
  using Matrix = Eigen::MatrixXd;

  int out_ch = 0;
  int in_ch = 0;
  int kh = 1;
  int kw = 1;
  Eigen::ArrayXd kernel;
  Eigen::ArrayXd bias;

  ConvLayer() = default;
  ConvLayer(int out_channels, int in_channels, int kernel_h, int kernel_w);

  double& k(int o, int i, int dy, int dx) {
    return kernel[((Eigen::Index(o) * in_ch + i) * kh + dy) * kw + dx];
  }
  double k(int o, int i, int dy, int dx) const {
    return kernel[((Eigen::Index(o) * in_ch + i) * kh + dy) * kw + dx];
  }

  /// out_ch x in_ch weights of one spatial tap.
  Matrix tap(int dy, int dx) const;
  void add_to_tap(int dy, int dx, const Matrix& m);

  void validate() const;
  bool operator==(const ConvLayer& o) const;
};

FeatureGrid conv2d(const FeatureGrid& input, const ConvLayer& layer);

/// Reverse pass of conv2d. Accumulates kernel/bias gradients into `grad`
/// (which must have the layer's shape) and returns the input gradient.
FeatureGrid conv2d_backward(const FeatureGrid& input, const ConvLayer& layer,
                            const FeatureGrid& out_grad, ConvLayer& grad);

/// Gate pre-activations are clamped to +-kGateClamp so that the sigmoid
/// stays strictly inside (0, 1) in double precision.
inline constexpr double kGateClamp = 30.0;

/// Current-prior fusion weights plus the 1x1 decode head used by the
/// pipeline. Wiring, with C current channels and P prior channels:
///   align: P -> C (1x1)     w1: 2C -> C (3x3)
///   w2:    C -> C (3x3)     w3: 2C -> C (3x3)     head: C -> P (1x1)
struct FusionWeights {
  ConvLayer align;
  ConvLayer w1;
  ConvLayer w2;
  ConvLayer w3;
  ConvLayer head;

  int channels() const { return w2.out_ch; }
  int prior_channels() const { return align.in_ch; }

  /// Zero-valued layers of matching shape; the gradient container.
  FusionWeights zeros_like() const;

  static constexpr std::array<std::string_view, 5> kLayerNames = {
      "align", "w1", "w2", "w3", "head"};
  std::array<ConvLayer*, 5> layers() { return {&align, &w1, &w2, &w3, &head}; }
  std::array<const ConvLayer*, 5> layers() const {
    return {&align, &w1, &w2, &w3, &head};
  }

  void validate() const;
  bool operator==(const FusionWeights& o) const;
};

/// Deterministic init: kernels uniform in +-sqrt(1 / (in * kh * kw)) from a
/// seeded mt19937_64 stream, zero biases.
FusionWeights init_weights(int channels, int prior_channels, std::uint64_t seed);

struct FusionOutput {
  FeatureGrid f_agg;
  FeatureGrid alpha;
  bool prior_valid = true;

  // Saved for fuse_backward.
  bool has_intermediates = false;
  FeatureGrid f_c;
  FeatureGrid prior;
  FeatureGrid f_p;
  FeatureGrid cat_in;   // concat(f_c, f_p)
  FeatureGrid sum_in;   // f_c + f_p
  FeatureGrid gate_in;  // concat(f_cat, f_add)
  FeatureGrid gate_pre; // w3 output before the sigmoid

  void discard_intermediates();
};

FeatureGrid concat_channels(const FeatureGrid& a, const FeatureGrid& b);

/// F_p = align(prior); F_cat = w1([F_c, F_p]); F_add = w2(F_c + F_p);
/// alpha = sigmoid(w3([F_cat, F_add])); F_agg = alpha*F_c + (1-alpha)*F_p.
FusionOutput fuse(const FeatureGrid& f_c, const FeatureGrid& prior_bev,
                  const FusionWeights& weights);

/// Fusion against the empty-prior sentinel (all-zero prior, marked invalid).
FusionOutput fuse_without_prior(const FeatureGrid& f_c,
                                const FusionWeights& weights);

struct FusionGrads {
  FusionWeights weights;  // head stays zero
  FeatureGrid f_c;
  FeatureGrid prior;
};

FusionGrads fuse_backward(const FeatureGrid& output_grad,
                          const FusionOutput& saved,
                          const FusionWeights& weights);

struct TrainSample {
  FeatureGrid current;
  FeatureGrid prior;
  LabelGrid target;
};

struct TrainOptions {
  /// Skip fusion (alpha == 1) and train the decode head on F_c alone.
  bool bypass_prior = false;
  /// Per-class loss weights indexed by label; empty means all 1.
  std::vector<double> class_weights;
};

/// Divergence signal from train_step.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean per-voxel (class-weighted) cross-entropy of head(F_agg) against the targets, and its
/// gradient with respect to every layer.
double loss_and_gradient(std::span<const TrainSample> batch,
                         const FusionWeights& weights, FusionWeights& grads,
                         const TrainOptions& options = {});

double loss(std::span<const TrainSample> batch, const FusionWeights& weights,
            const TrainOptions& options = {});

/// One plain gradient-descent step in place. Returns the pre-step loss.
double train_step(std::span<const TrainSample> batch, FusionWeights& weights,
                  double lr, const TrainOptions& options = {});

/// Decoded logits of the fused (or bypassed) features, in BEV layout.
FeatureGrid decode_head(const FeatureGrid& features, const FusionWeights& weights);

}  // namespace occprior
