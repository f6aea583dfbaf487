#include "irbnn/inspect.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "irbnn/errors.hpp"
#include "json.hpp"

namespace irbnn {
namespace {

constexpr int kBins = 64;

std::vector<long long> histogram64(const Tensor& v, double lo, double hi) {
  std::vector<long long> bins(kBins, 0);
  const double width = (hi - lo) / kBins;
  for (std::int64_t i = 0; i < v.size(); ++i) {
    int b = static_cast<int>(std::floor((v[i] - lo) / width));
    if (b < 0) b = 0;
    if (b >= kBins) b = kBins - 1;
    ++bins[static_cast<std::size_t>(b)];
  }
  return bins;
}

LayerInspection inspect_values(const std::string& name, LayerKind kind, const Tensor& values,
                               const Tensor& signs, const std::vector<int>& shifts,
                               double quant_error) {
  LayerInspection li;
  li.layer = name;
  li.kind = kind;
  const EntropyReport er = bernoulli_entropy(signs);
  li.p_hat = er.p_hat;
  li.entropy_nats = er.entropy_nats;
  li.entropy_ratio = er.ratio();
  li.quant_error = quant_error;
  li.shifts = shifts;
  double sigma = std_pop(values);
  if (sigma == 0.0) sigma = 0.25;  // degenerate layer, keep the bins finite
  li.hist_lo = -4.0 * sigma;
  li.hist_hi = 4.0 * sigma;
  li.histogram = histogram64(values, li.hist_lo, li.hist_hi);
  return li;
}

void fill_ops(InspectionReport& r, const std::vector<LayerOps>& ours,
              const std::vector<LayerOps>& xnor) {
  r.ops_ours = ours;
  r.ops_xnor = xnor;
  for (const LayerOps& lo : ours) {
    r.total_ours.float_ops += lo.ops.float_ops;
    r.total_ours.bitwise_ops += lo.ops.bitwise_ops;
  }
  for (const LayerOps& lo : xnor) {
    r.total_xnor.float_ops += lo.ops.float_ops;
    r.total_xnor.bitwise_ops += lo.ops.bitwise_ops;
  }
}

OpCount binary_ops(long long c1, long long c2, OpAccounting mode) {
  if (mode == OpAccounting::xnor) return {c1, c1 * c2};
  return {0, c1 * c2 + c1};
}

/// Shape-walks the packed layers to recover the spatial extents the op
/// formulas need; mirrors Model::count_ops for a batch of one.
void packed_ops(const std::vector<PackedLayer>& layers, std::vector<std::int64_t>& shape,
                OpAccounting mode, std::vector<LayerOps>& out) {
  for (const PackedLayer& pl : layers) {
    switch (pl.kind) {
      case LayerKind::binary_conv: {
        const int oh = conv_out_extent(static_cast<int>(shape[1]), pl.kh, pl.stride, pl.pad);
        const int ow = conv_out_extent(static_cast<int>(shape[2]), pl.kw, pl.stride, pl.pad);
        const long long c1 = static_cast<long long>(pl.out_c) * oh * ow;
        const long long c2 = static_cast<long long>(pl.in_c) * pl.kh * pl.kw;
        out.push_back({pl.name, pl.kind, binary_ops(c1, c2, mode)});
        shape = {pl.out_c, oh, ow};
        break;
      }
      case LayerKind::binary_linear:
        out.push_back({pl.name, pl.kind, binary_ops(pl.out_f, pl.in_f, mode)});
        shape = {pl.out_f};
        break;
      case LayerKind::fp_conv: {
        const int oh = conv_out_extent(static_cast<int>(shape[1]), pl.kh, pl.stride, pl.pad);
        const int ow = conv_out_extent(static_cast<int>(shape[2]), pl.kw, pl.stride, pl.pad);
        const long long c1 = static_cast<long long>(pl.out_c) * oh * ow;
        const long long c2 = static_cast<long long>(pl.in_c) * pl.kh * pl.kw;
        out.push_back({pl.name, pl.kind, {c1 * c2, 0}});
        shape = {pl.out_c, oh, ow};
        break;
      }
      case LayerKind::fp_linear:
        out.push_back({pl.name, pl.kind, {static_cast<long long>(pl.out_f) * pl.in_f, 0}});
        shape = {pl.out_f};
        break;
      case LayerKind::maxpool: shape = {shape[0], shape[1] / 2, shape[2] / 2}; break;
      case LayerKind::avgpool: shape = {shape[0]}; break;
      case LayerKind::flatten: {
        std::int64_t n = 1;
        for (std::int64_t d : shape) n *= d;
        shape = {n};
        break;
      }
      case LayerKind::residual: {
        packed_ops(pl.children, shape, mode, out);
        break;
      }
      case LayerKind::batchnorm:
      case LayerKind::hardtanh: break;
    }
  }
}

void collect_packed_binary(const std::vector<PackedLayer>& layers, InspectionReport& r) {
  for (const PackedLayer& pl : layers) {
    if (pl.kind == LayerKind::binary_conv || pl.kind == LayerKind::binary_linear) {
      const Tensor signs = unpack(pl.signs);
      Tensor values(signs.shape());
      for (std::int64_t row = 0; row < signs.dim(0); ++row) {
        const double scale = std::ldexp(1.0, pl.shifts[static_cast<std::size_t>(row)]);
        for (std::int64_t j = 0; j < signs.dim(1); ++j) {
          values.at2(row, j) = signs.at2(row, j) * scale;
        }
      }
      std::vector<int> shifts(pl.shifts.begin(), pl.shifts.end());
      r.layers.push_back(inspect_values(pl.name, pl.kind, values, signs, shifts,
                                        std::numeric_limits<double>::quiet_NaN()));
    }
    collect_packed_binary(pl.children, r);
  }
}

nlohmann::json ops_json(const std::vector<LayerOps>& ops) {
  nlohmann::json arr = nlohmann::json::array();
  for (const LayerOps& lo : ops) {
    arr.push_back({{"layer", lo.layer},
                   {"kind", layer_kind_name(lo.kind)},
                   {"float_ops", lo.ops.float_ops},
                   {"bitwise_ops", lo.ops.bitwise_ops}});
  }
  return arr;
}

}  // namespace

InspectionReport inspect_state(TrainState& state) {
  InspectionReport r;
  r.arch = state.model.arch;
  r.arm = arm_name(state.model.arm);
  r.estimator = estimator_name(state.model.estimator);
  r.epoch = state.epoch;
  r.seed = state.seed;
  for (BinaryLayerBase* l : state.model.binary_layers()) {
    const Tensor& w = l->weight().value;
    const BinarizedWeights q = binarize_weights(w, l->transform());
    const double j = quantization_error(w, reconstruct(q));
    r.layers.push_back(inspect_values(l->name(), l->kind(), w, q.signs, q.shifts, j));
  }
  fill_ops(r, state.model.count_ops(OpAccounting::ours), state.model.count_ops(OpAccounting::xnor));
  return r;
}

InspectionReport inspect_packed(const PackedModel& m) {
  InspectionReport r;
  r.arch = m.arch;
  r.arm = m.arm;
  r.estimator = m.estimator;
  r.epoch = static_cast<int>(m.epoch);
  r.seed = m.seed;
  collect_packed_binary(m.layers, r);
  if (m.input_shape.size() != 3 && m.input_shape.size() != 1) {
    throw FormatError("packed model input shape must be [c, h, w] or [features]");
  }
  std::vector<std::int64_t> shape = m.input_shape;
  packed_ops(m.layers, shape, OpAccounting::ours, r.ops_ours);
  shape = m.input_shape;
  packed_ops(m.layers, shape, OpAccounting::xnor, r.ops_xnor);
  std::vector<LayerOps> ours = std::move(r.ops_ours), xnor = std::move(r.ops_xnor);
  r.total_ours = {};
  r.total_xnor = {};
  fill_ops(r, ours, xnor);
  return r;
}

std::string report_json(const InspectionReport& r) {
  nlohmann::json j;
  j["arch"] = r.arch;
  j["arm"] = r.arm;
  j["estimator"] = r.estimator;
  j["epoch"] = r.epoch;
  j["seed"] = r.seed;
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerInspection& li : r.layers) {
    nlohmann::json lj;
    lj["layer"] = li.layer;
    lj["kind"] = layer_kind_name(li.kind);
    lj["p_hat"] = li.p_hat;
    lj["entropy_nats"] = li.entropy_nats;
    lj["entropy_ratio"] = li.entropy_ratio;
    // NaN (packed models carry no latent weights) serializes as null.
    lj["quant_error"] = li.quant_error;
    lj["shifts"] = li.shifts;
    lj["hist_lo"] = li.hist_lo;
    lj["hist_hi"] = li.hist_hi;
    lj["histogram"] = li.histogram;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  j["ops_ours"] = ops_json(r.ops_ours);
  j["ops_xnor"] = ops_json(r.ops_xnor);
  j["total_ours"] = {{"float_ops", r.total_ours.float_ops},
                     {"bitwise_ops", r.total_ours.bitwise_ops}};
  j["total_xnor"] = {{"float_ops", r.total_xnor.float_ops},
                     {"bitwise_ops", r.total_xnor.bitwise_ops}};
  return j.dump(2) + "\n";
}

std::string report_csv(const InspectionReport& r) {
  std::ostringstream out;
  out << "layer,kind,p_hat,entropy_nats,entropy_ratio,quant_error,"
         "float_ops_ours,bitwise_ops_ours,float_ops_xnor,bitwise_ops_xnor\n";
  auto find_ops = [](const std::vector<LayerOps>& ops, const std::string& name) -> OpCount {
    for (const LayerOps& lo : ops) {
      if (lo.layer == name) return lo.ops;
    }
    return {};
  };
  for (const LayerInspection& li : r.layers) {
    const OpCount ours = find_ops(r.ops_ours, li.layer);
    const OpCount xnor = find_ops(r.ops_xnor, li.layer);
    out << li.layer << ',' << layer_kind_name(li.kind) << ',' << li.p_hat << ','
        << li.entropy_nats << ',' << li.entropy_ratio << ',' << li.quant_error << ','
        << ours.float_ops << ',' << ours.bitwise_ops << ',' << xnor.float_ops << ','
        << xnor.bitwise_ops << '\n';
  }
  return out.str();
}

}  // namespace irbnn
