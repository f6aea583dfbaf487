#pragma once

#include <string>
#include <vector>

#include "irbnn/net.hpp"
#include "irbnn/packed_model.hpp"

namespace irbnn {

/// Per binary layer: sign statistics, quantization error of the current
/// weights, and a 64-bin histogram of the weight values over [-4 sigma,
/// 4 sigma] (out-of-range values land in the edge bins).
struct LayerInspection {
  std::string layer;
  LayerKind kind = LayerKind::binary_conv;
  double p_hat = 0;
  double entropy_nats = 0;
  double entropy_ratio = 0;
  double quant_error = 0;  // NaN when only packed signs are available
  std::vector<int> shifts;
  double hist_lo = 0, hist_hi = 0;
  std::vector<long long> histogram;  // 64 bins
};

struct InspectionReport {
  std::string arch, arm, estimator;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::vector<LayerInspection> layers;  // binary layers, execution order
  std::vector<LayerOps> ops_ours, ops_xnor;  // weight-bearing layers
  OpCount total_ours, total_xnor;
};

/// Report from a live training state: histograms and quantization error use
/// the latent weights.
InspectionReport inspect_state(TrainState& state);

/// Report from a deployable model: sign statistics come from the packed
/// bits, histograms from the reconstructed values sign * 2^shift, and the
/// latent quantization error is unavailable (NaN).
InspectionReport inspect_packed(const PackedModel& m);

std::string report_json(const InspectionReport& r);
std::string report_csv(const InspectionReport& r);

}  // namespace irbnn
