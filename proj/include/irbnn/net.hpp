#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "irbnn/data.hpp"
#include "irbnn/ede.hpp"
#include "irbnn/libra.hpp"
#include "irbnn/tensor.hpp"

namespace irbnn {

/// Ablation arms. Each arm fixes which pieces of the weight quantizer are
/// active and which gradient estimator is the default:
///   full_precision  no quantization anywhere (binary layers become fp)
///   vanilla_sign    sign(w), no balance/standardize/shift, clip STE
///   libra_no_std    balance + shift, no standardization, clip STE
///   libra_no_shift  balance + standardization, shift forced 0, clip STE
///   libra           full weight pipeline, clip STE
///   ede_only        vanilla sign quantizer, EDE estimator
///   irnet           full weight pipeline + EDE estimator
enum class Arm {
  full_precision,
  vanilla_sign,
  libra_no_std,
  libra_no_shift,
  libra,
  ede_only,
  irnet,
};

Arm arm_from_string(const std::string& s);
const char* arm_name(Arm a);
const std::vector<Arm>& all_arms();

enum class Estimator { ede, ste_identity, ste_clip };

Estimator estimator_from_string(const std::string& s);
const char* estimator_name(Estimator e);

/// The estimator an arm trains with unless overridden.
Estimator default_estimator(Arm a);

/// The weight-quantizer pieces an arm enables. full_precision has no
/// quantizer; asking for its transform is a config error.
WeightTransform arm_transform(Arm a);

/// A trainable tensor plus its gradient and momentum buffers.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor velocity;
  bool decay = true;          // weight decay applies
  bool binary_weight = false; // latent weight of a binarized layer
};

enum class LayerKind : std::uint8_t {
  binary_conv = 0,
  binary_linear = 1,
  fp_conv = 2,
  fp_linear = 3,
  batchnorm = 4,
  hardtanh = 5,
  maxpool = 6,
  avgpool = 7,
  flatten = 8,
  residual = 9,
};

const char* layer_kind_name(LayerKind k);

struct OpCount {
  long long float_ops = 0;
  long long bitwise_ops = 0;
};

/// Per-layer op accounting modes: `ours` charges the bit-shift rescale to
/// the bitwise column (float = 0), `xnor` charges one float multiply per
/// output for the scalar (float = C1).
enum class OpAccounting { ours, xnor };

struct LayerOps {
  std::string layer;
  LayerKind kind;
  OpCount ops;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;

  /// One batch through the layer. `train` selects batch statistics and
  /// enables the caches backward needs.
  virtual Tensor forward(const Tensor& x, bool train) = 0;

  /// Gradient wrt the layer input; accumulates parameter gradients from the
  /// caches of the matching forward.
  virtual Tensor backward(const Tensor& grad) = 0;

  virtual void collect_params(std::vector<Param*>&) {}
  virtual void set_ede(const EdeParams&) {}
  virtual void set_soft_forward(bool) {}
  virtual void set_full_jacobian(bool) {}
  virtual void append_children(std::vector<Layer*>&) {}
  virtual OpCount ops(OpAccounting) const { return {}; }

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

 private:
  std::string name_;
};

/// Shared machinery of the binarized conv/linear layers: latent weight,
/// quantizer transform, estimator state, and the column-space forward /
/// backward both layers lower into.
class BinaryLayerBase : public Layer {
 public:
  BinaryLayerBase(WeightTransform transform, Estimator est, bool binarize_input);

  void collect_params(std::vector<Param*>& out) override { out.push_back(&weight_); }
  void set_ede(const EdeParams& p) override { ede_ = p; }
  void set_soft_forward(bool on) override { soft_ = on; }
  void set_full_jacobian(bool on) override { full_jacobian_ = on; }

  Param& weight() { return weight_; }
  const Param& weight() const { return weight_; }
  const WeightTransform& transform() const { return transform_; }
  Estimator estimator() const { return estimator_; }
  bool binarize_input() const { return binarize_input_; }
  const std::vector<int>& last_shifts() const { return cached_shifts_; }

  /// Output of the most recent forward, kept only while probing is on.
  void set_probe(bool on) { probe_ = on; }
  const Tensor& probed_output() const { return probed_output_; }

 protected:
  /// z = Q_w x Q_a over lowered columns; fills every cache backward reads.
  Tensor forward_cols(const Tensor& cols);

  /// Adjoint of forward_cols. Returns the gradient wrt the (pre-quantization)
  /// columns and accumulates the weight gradient, estimator applied at the
  /// cached pre-binarization values.
  Tensor backward_cols(const Tensor& grad_z);

  double est_grad(double x) const;
  double est_forward(double x) const;  // soft surrogate per estimator

  void maybe_probe(const Tensor& out) {
    if (probe_) probed_output_ = out;
  }

  Param weight_;
  WeightTransform transform_;
  Estimator estimator_;
  EdeParams ede_;
  bool binarize_input_;
  bool soft_ = false;
  bool full_jacobian_ = false;
  bool probe_ = false;
  Tensor probed_output_;

  Tensor cached_cols_;      // lowered input before any binarization
  Tensor cached_qa_;        // quantized (or passed-through) columns
  Tensor cached_pre_sign_;  // transformed weights the signs came from
  Tensor cached_qw_;        // the sign (or soft) matrix actually multiplied
  std::vector<int> cached_shifts_;
};

class BinaryConv : public BinaryLayerBase {
 public:
  BinaryConv(int in_c, int out_c, int kh, int kw, int stride, int pad, int in_h, int in_w,
             bool binarize_input, WeightTransform t, Estimator e, Rng& rng);

  LayerKind kind() const override { return LayerKind::binary_conv; }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad) override;
  OpCount ops(OpAccounting mode) const override;

  int in_c, out_c, kh, kw, stride, pad, in_h, in_w, out_h, out_w;
};

class BinaryLinear : public BinaryLayerBase {
 public:
  BinaryLinear(int in_f, int out_f, bool binarize_input, WeightTransform t, Estimator e, Rng& rng);

  LayerKind kind() const override { return LayerKind::binary_linear; }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad) override;
  OpCount ops(OpAccounting mode) const override;

  int in_f, out_f;
};

class FpConv : public Layer {
 public:
  FpConv(int in_c, int out_c, int kh, int kw, int stride, int pad, int in_h, int in_w, Rng& rng);

  LayerKind kind() const override { return LayerKind::fp_conv; }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad) override;
  void collect_params(std::vector<Param*>& out) override;
  OpCount ops(OpAccounting) const override;

  Param weight;  // [out_c, in_c*kh*kw]
  Param bias;    // [out_c]
  int in_c, out_c, kh, kw, stride, pad, in_h, in_w, out_h, out_w;

 private:
  Tensor cached_cols_;
  std::int64_t cached_n_ = 0;
};

class FpLinear : public Layer {
 public:
  FpLinear(int in_f, int out_f, Rng& rng);

  LayerKind kind() const override { return LayerKind::fp_linear; }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad) override;
  void collect_params(std::vector<Param*>& out) override;
  OpCount ops(OpAccounting) const override;

  Param weight;  // [out_f, in_f]
  Param bias;    // [out_f]
  int in_f, out_f;

 private:
  Tensor cached_x_;
};

/// Channel-wise batch normalization over [n, c, ...] with population batch
/// statistics; eval mode uses the running buffers.
class BatchNorm : public Layer {
 public:
  explicit BatchNorm(int channels);

  LayerKind kind() const override { return LayerKind::batchnorm; }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad) override;
  void collect_params(std::vector<Param*>& out) override;

  Param gamma, beta;
  Tensor running_mean, running_var;
  int channels;
  double eps = 1e-5;
  double momentum = 0.1;

 private:
  Tensor cached_xhat_;
  std::vector<double> cached_inv_std_;
  std::int64_t cached_per_channel_ = 0;
};

class Hardtanh : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::hardtanh; }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad) override;

 private:
  Tensor cached_x_;
};

/// 2x2 max pooling, stride 2; spatial dims must be even. Ties resolve to
/// the first scan position, so backward is deterministic.
class MaxPool2 : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::maxpool; }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad) override;

 private:
  std::vector<std::int64_t> cached_argmax_;
  std::vector<std::int64_t> cached_in_shape_;
};

class GlobalAvgPool : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::avgpool; }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad) override;

 private:
  std::vector<std::int64_t> cached_in_shape_;
};

class Flatten : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::flatten; }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad) override;

 private:
  std::vector<std::int64_t> cached_in_shape_;
};

/// Basic residual block: conv-bn-act-conv-bn plus shortcut, then the output
/// activation. Downsampling shortcut subsamples even coordinates and
/// zero-pads channels (no extra weights).
class Residual : public Layer {
 public:
  Residual(int in_c, int out_c, int stride, int in_h, int in_w, bool binary, WeightTransform t,
           Estimator e, Rng& rng);

  LayerKind kind() const override { return LayerKind::residual; }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad) override;
  void append_children(std::vector<Layer*>& out) override;

  int in_c, out_c, stride, in_h, in_w, out_h, out_w;
  std::vector<std::unique_ptr<Layer>> body;  // conv1 bn1 act1 conv2 bn2
  std::unique_ptr<Hardtanh> act_out;

 private:
  Tensor shortcut(const Tensor& x) const;
  Tensor shortcut_adjoint(const Tensor& grad, const std::vector<std::int64_t>& in_shape) const;

  std::vector<std::int64_t> cached_in_shape_;
};

class Model {
 public:
  std::string arch;
  Arm arm = Arm::irnet;
  Estimator estimator = Estimator::ede;
  std::vector<std::int64_t> input_shape;  // [c, h, w]
  int classes = 10;
  std::vector<std::unique_ptr<Layer>> layers;

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& grad);

  /// All layers in execution order, residual children included.
  std::vector<Layer*> all_layers();
  std::vector<const Layer*> all_layers() const;
  std::vector<Param*> params();
  std::vector<BinaryLayerBase*> binary_layers();

  void zero_grad();
  void set_ede(const EdeParams& p);
  void set_soft_forward(bool on);
  void set_full_jacobian(bool on);
  void set_probe(bool on);

  /// Table-1 style accounting per weight-bearing layer, batch of one.
  std::vector<LayerOps> count_ops(OpAccounting mode) const;
};

/// Registry: mlp784 (28x28 in), mnist_cnn (28x28), vgg_small (CIFAR 32x32),
/// resnet20 (CIFAR 32x32). Unknown name is a config error.
Model build_model(const std::string& arch, Arm arm, Estimator est, Rng& rng);
const std::vector<std::string>& arch_names();

/// Mean cross-entropy with log-sum-exp stabilization, gradient wrt logits,
/// and the argmax hit count.
struct LossResult {
  double loss = 0;
  Tensor grad;
  int correct = 0;
};

LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels);

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool decay_binary = false;  // weight decay also hits latent binary weights
  int lr_step = 0;            // epochs between step decays, 0 = constant
  double lr_gamma = 0.1;

  bool operator==(const SgdConfig&) const = default;
};

double lr_at_epoch(const SgdConfig& c, int epoch);

/// One SGD update with momentum; weight decay only on params flagged for it
/// (plus binary latents when decay_binary). Gradients are left untouched;
/// callers zero them per batch.
void sgd_step(Model& m, const SgdConfig& c, double lr_now);

struct TrainState {
  Model model;
  SgdConfig optim;
  EdeSchedule sched;
  int epoch = 0;  // completed epochs
  std::uint64_t seed = 0;
  Rng rng{0};
  std::string dataset_name;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0, train_acc = 0, test_acc = 0;  // accuracies in percent
  double t = 0, k = 0, lr = 0, seconds = 0;
  std::vector<std::pair<std::string, double>> layer_entropy_ratio;
};

/// One pass over the shuffled training set at the estimator parameters of
/// state.epoch; advances state.epoch. test == nullptr skips the test pass.
EpochMetrics train_epoch(TrainState& state, const Dataset& train, const Dataset* test,
                         int batch_size, bool augment);

/// Top-1 accuracy in percent, eval mode, sequential batches.
double evaluate(Model& m, const Dataset& ds, int batch_size = 256);

/// Entropy ratio of each binary layer's current weight signs.
std::vector<std::pair<std::string, double>> layer_sign_entropies(Model& m);

}  // namespace irbnn
