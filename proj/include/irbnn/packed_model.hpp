#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "irbnn/bitkernel.hpp"
#include "irbnn/net.hpp"

namespace irbnn {

/// One layer of a deployable model. Binary layers carry packed sign words
/// plus one shift per output channel and nothing else; float parameters
/// exist only for fp and batchnorm layers. Geometry fields are used as the
/// kind requires.
struct PackedLayer {
  LayerKind kind = LayerKind::flatten;
  std::string name;
  std::int32_t in_c = 0, out_c = 0, kh = 0, kw = 0, stride = 0, pad = 0;
  std::int32_t in_f = 0, out_f = 0;
  std::int32_t channels = 0;
  bool binarize_input = false;
  PackedBitTensor signs;
  std::vector<std::int32_t> shifts;
  std::vector<float> w, b;                      // fp layers
  std::vector<float> gamma, beta, rmean, rvar;  // batchnorm
  std::vector<PackedLayer> children;            // residual body + out act
};

struct PackedModel {
  std::uint16_t version = 1;
  std::string arch, arm, estimator;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
  std::uint32_t total_epochs = 0;
  std::vector<std::int64_t> input_shape;
  std::int32_t classes = 10;
  std::vector<PackedLayer> layers;
};

/// Captured binary-layer outputs (the integer-valued pre-BN tensors), in
/// execution order. Shared by packed_infer and the training-path probe so
/// the two paths can be compared layer by layer.
struct InferProbe {
  std::vector<std::pair<std::string, Tensor>> binary_outputs;
};

/// Freezes the current latent weights: per channel, transformed values ->
/// signs -> bit-shift. Float and batchnorm parameters are rounded to
/// float32, which is what the file format stores.
PackedModel export_model(const TrainState& state);

/// Deployment-path forward in eval mode. Binary layers run on the
/// XNOR-popcount kernels; reproduces the training-path eval forward exactly
/// at the pre-BN integer level.
Tensor packed_infer(const PackedModel& m, const Tensor& input, InferProbe* probe = nullptr);

/// Top-1 accuracy in percent of the deployment path over a dataset (eval
/// transforms, first-max argmax).
double packed_evaluate(const PackedModel& m, const Dataset& ds, int batch_size = 256);

std::vector<std::uint8_t> serialize_packed_model(const PackedModel& m);
PackedModel deserialize_packed_model(const std::vector<std::uint8_t>& bytes,
                                     const std::string& origin = "buffer");

void save_packed_model(const PackedModel& m, const std::string& path);
PackedModel load_packed_model(const std::string& path);

/// Checkpoint: the packed container plus float32 latent weights, optimizer
/// velocities, and run info, enough to resume or evaluate without the
/// original config.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

/// True if the file at path is a checkpoint (vs a packed model).
bool is_checkpoint_file(const std::string& path);

std::int64_t packed_model_bytes(const PackedModel& m);

}  // namespace irbnn
