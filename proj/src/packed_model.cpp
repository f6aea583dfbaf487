#include "irbnn/packed_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "irbnn/errors.hpp"

namespace irbnn {
namespace {

constexpr double kBnEps = 1e-5;  // must match BatchNorm::eps

struct Writer {
  std::vector<std::uint8_t> buf;

  void u8(std::uint8_t v) { buf.push_back(v); }
  void u16(std::uint16_t v) {
    buf.push_back(static_cast<std::uint8_t>(v));
    buf.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
  void f32s(const std::vector<float>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (float x : v) f32(x);
  }
};

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
  std::string origin;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) {
      throw FormatError(origin + ": truncated at offset " + std::to_string(pos));
    }
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{buf[pos + i]} << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{buf[pos + i]} << (8 * i);
    pos += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  std::vector<float> f32s() {
    const std::uint32_t n = u32();
    need(std::size_t{n} * 4);
    std::vector<float> v(n);
    for (std::uint32_t i = 0; i < n; ++i) v[i] = f32();
    return v;
  }
};

std::vector<float> to_f32(const Tensor& t) {
  std::vector<float> out(static_cast<std::size_t>(t.size()));
  for (std::int64_t i = 0; i < t.size(); ++i) out[static_cast<std::size_t>(i)] =
      static_cast<float>(t[i]);
  return out;
}

Tensor from_f32(const std::vector<float>& v, std::vector<std::int64_t> shape) {
  Tensor t(std::move(shape));
  if (t.size() != static_cast<std::int64_t>(v.size())) {
    throw FormatError("float array length does not match its declared shape");
  }
  for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<std::int64_t>(i)] = v[i];
  return t;
}

PackedLayer export_layer(const Layer* l);

std::vector<PackedLayer> export_children(const Residual* r) {
  std::vector<PackedLayer> out;
  for (const auto& child : r->body) out.push_back(export_layer(child.get()));
  out.push_back(export_layer(r->act_out.get()));
  return out;
}

PackedLayer export_layer(const Layer* l) {
  PackedLayer pl;
  pl.kind = l->kind();
  pl.name = l->name();
  if (const auto* bc = dynamic_cast<const BinaryConv*>(l)) {
    pl.in_c = bc->in_c;
    pl.out_c = bc->out_c;
    pl.kh = bc->kh;
    pl.kw = bc->kw;
    pl.stride = bc->stride;
    pl.pad = bc->pad;
    pl.binarize_input = bc->binarize_input();
    BinarizedWeights q;
    try {
      q = binarize_weights(bc->weight().value, bc->transform());
    } catch (const DegenerateWeightsError& e) {
      throw ExportError(l->name() + ": " + e.what());
    }
    pl.signs = pack(q.signs);
    pl.shifts.assign(q.shifts.begin(), q.shifts.end());
  } else if (const auto* bl = dynamic_cast<const BinaryLinear*>(l)) {
    pl.in_f = bl->in_f;
    pl.out_f = bl->out_f;
    pl.binarize_input = bl->binarize_input();
    BinarizedWeights q;
    try {
      q = binarize_weights(bl->weight().value, bl->transform());
    } catch (const DegenerateWeightsError& e) {
      throw ExportError(l->name() + ": " + e.what());
    }
    pl.signs = pack(q.signs);
    pl.shifts.assign(q.shifts.begin(), q.shifts.end());
  } else if (const auto* fc = dynamic_cast<const FpConv*>(l)) {
    pl.in_c = fc->in_c;
    pl.out_c = fc->out_c;
    pl.kh = fc->kh;
    pl.kw = fc->kw;
    pl.stride = fc->stride;
    pl.pad = fc->pad;
    pl.w = to_f32(fc->weight.value);
    pl.b = to_f32(fc->bias.value);
  } else if (const auto* fl = dynamic_cast<const FpLinear*>(l)) {
    pl.in_f = fl->in_f;
    pl.out_f = fl->out_f;
    pl.w = to_f32(fl->weight.value);
    pl.b = to_f32(fl->bias.value);
  } else if (const auto* bn = dynamic_cast<const BatchNorm*>(l)) {
    pl.channels = bn->channels;
    pl.gamma = to_f32(bn->gamma.value);
    pl.beta = to_f32(bn->beta.value);
    pl.rmean = to_f32(bn->running_mean);
    pl.rvar = to_f32(bn->running_var);
  } else if (const auto* r = dynamic_cast<const Residual*>(l)) {
    pl.in_c = r->in_c;
    pl.out_c = r->out_c;
    pl.stride = r->stride;
    pl.children = export_children(r);
  }
  return pl;
}

void write_packed_bits(Writer& w, const PackedBitTensor& p) {
  w.u32(static_cast<std::uint32_t>(p.rows));
  w.u32(static_cast<std::uint32_t>(p.bits_per_row));
  for (std::uint64_t word : p.words) w.u64(word);
}

PackedBitTensor read_packed_bits(Reader& r) {
  PackedBitTensor p;
  p.rows = r.u32();
  p.bits_per_row = r.u32();
  if (p.rows <= 0 || p.bits_per_row <= 0) {
    throw FormatError(r.origin + ": bad packed tensor dims at offset " + std::to_string(r.pos));
  }
  p.words_per_row = (p.bits_per_row + 63) / 64;
  const std::int64_t total = p.rows * p.words_per_row;
  r.need(static_cast<std::size_t>(total) * 8);
  p.words.resize(static_cast<std::size_t>(total));
  for (std::int64_t i = 0; i < total; ++i) p.words[static_cast<std::size_t>(i)] = r.u64();
  return p;
}

void write_layer(Writer& w, const PackedLayer& pl) {
  w.u8(static_cast<std::uint8_t>(pl.kind));
  w.str(pl.name);
  switch (pl.kind) {
    case LayerKind::binary_conv:
      w.i32(pl.in_c);
      w.i32(pl.out_c);
      w.i32(pl.kh);
      w.i32(pl.kw);
      w.i32(pl.stride);
      w.i32(pl.pad);
      w.u8(pl.binarize_input ? 1 : 0);
      write_packed_bits(w, pl.signs);
      for (std::int32_t s : pl.shifts) w.i32(s);
      break;
    case LayerKind::binary_linear:
      w.i32(pl.in_f);
      w.i32(pl.out_f);
      w.u8(pl.binarize_input ? 1 : 0);
      write_packed_bits(w, pl.signs);
      for (std::int32_t s : pl.shifts) w.i32(s);
      break;
    case LayerKind::fp_conv:
      w.i32(pl.in_c);
      w.i32(pl.out_c);
      w.i32(pl.kh);
      w.i32(pl.kw);
      w.i32(pl.stride);
      w.i32(pl.pad);
      w.f32s(pl.w);
      w.f32s(pl.b);
      break;
    case LayerKind::fp_linear:
      w.i32(pl.in_f);
      w.i32(pl.out_f);
      w.f32s(pl.w);
      w.f32s(pl.b);
      break;
    case LayerKind::batchnorm:
      w.i32(pl.channels);
      w.f32s(pl.gamma);
      w.f32s(pl.beta);
      w.f32s(pl.rmean);
      w.f32s(pl.rvar);
      break;
    case LayerKind::residual:
      w.i32(pl.in_c);
      w.i32(pl.out_c);
      w.i32(pl.stride);
      w.u32(static_cast<std::uint32_t>(pl.children.size()));
      for (const PackedLayer& child : pl.children) write_layer(w, child);
      break;
    case LayerKind::hardtanh:
    case LayerKind::maxpool:
    case LayerKind::avgpool:
    case LayerKind::flatten: break;
  }
}

PackedLayer read_layer(Reader& r) {
  PackedLayer pl;
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(LayerKind::residual)) {
    throw FormatError(r.origin + ": unknown layer kind " + std::to_string(kind) + " at offset " +
                      std::to_string(r.pos - 1));
  }
  pl.kind = static_cast<LayerKind>(kind);
  pl.name = r.str();
  switch (pl.kind) {
    case LayerKind::binary_conv:
      pl.in_c = r.i32();
      pl.out_c = r.i32();
      pl.kh = r.i32();
      pl.kw = r.i32();
      pl.stride = r.i32();
      pl.pad = r.i32();
      pl.binarize_input = r.u8() != 0;
      pl.signs = read_packed_bits(r);
      pl.shifts.resize(static_cast<std::size_t>(pl.out_c));
      for (auto& s : pl.shifts) s = r.i32();
      break;
    case LayerKind::binary_linear:
      pl.in_f = r.i32();
      pl.out_f = r.i32();
      pl.binarize_input = r.u8() != 0;
      pl.signs = read_packed_bits(r);
      pl.shifts.resize(static_cast<std::size_t>(pl.out_f));
      for (auto& s : pl.shifts) s = r.i32();
      break;
    case LayerKind::fp_conv:
      pl.in_c = r.i32();
      pl.out_c = r.i32();
      pl.kh = r.i32();
      pl.kw = r.i32();
      pl.stride = r.i32();
      pl.pad = r.i32();
      pl.w = r.f32s();
      pl.b = r.f32s();
      break;
    case LayerKind::fp_linear:
      pl.in_f = r.i32();
      pl.out_f = r.i32();
      pl.w = r.f32s();
      pl.b = r.f32s();
      break;
    case LayerKind::batchnorm:
      pl.channels = r.i32();
      pl.gamma = r.f32s();
      pl.beta = r.f32s();
      pl.rmean = r.f32s();
      pl.rvar = r.f32s();
      break;
    case LayerKind::residual: {
      pl.in_c = r.i32();
      pl.out_c = r.i32();
      pl.stride = r.i32();
      const std::uint32_t n = r.u32();
      for (std::uint32_t i = 0; i < n; ++i) pl.children.push_back(read_layer(r));
      break;
    }
    case LayerKind::hardtanh:
    case LayerKind::maxpool:
    case LayerKind::avgpool:
    case LayerKind::flatten: break;
  }
  return pl;
}

void write_header(Writer& w, const PackedModel& m, std::uint8_t filekind) {
  w.buf.insert(w.buf.end(), {'I', 'R', 'B', 'N'});
  w.u16(m.version);
  w.u8(filekind);
  w.str(m.arch);
  w.str(m.arm);
  w.str(m.estimator);
  w.u64(m.seed);
  w.u32(m.epoch);
  w.u32(m.total_epochs);
  w.u8(static_cast<std::uint8_t>(m.input_shape.size()));
  for (std::int64_t d : m.input_shape) w.u32(static_cast<std::uint32_t>(d));
  w.i32(m.classes);
  w.u32(static_cast<std::uint32_t>(m.layers.size()));
  for (const PackedLayer& pl : m.layers) write_layer(w, pl);
}

PackedModel read_header(Reader& r, std::uint8_t& filekind) {
  r.need(4);
  if (std::memcmp(r.buf.data(), "IRBN", 4) != 0) {
    throw FormatError(r.origin + ": bad magic at offset 0: expected \"IRBN\"");
  }
  r.pos = 4;
  PackedModel m;
  m.version = r.u16();
  if (m.version != 1) {
    throw FormatError(r.origin + ": unsupported format version " + std::to_string(m.version));
  }
  filekind = r.u8();
  if (filekind > 1) throw FormatError(r.origin + ": unknown file kind");
  m.arch = r.str();
  m.arm = r.str();
  m.estimator = r.str();
  m.seed = r.u64();
  m.epoch = r.u32();
  m.total_epochs = r.u32();
  const std::uint8_t rank = r.u8();
  for (std::uint8_t i = 0; i < rank; ++i) m.input_shape.push_back(r.u32());
  m.classes = r.i32();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) m.layers.push_back(read_layer(r));
  return m;
}

Tensor infer_layer(const PackedLayer& pl, const Tensor& x, InferProbe* probe);

// Mirrors Residual::shortcut / the in-place sum, bit for bit.
Tensor infer_residual(const PackedLayer& pl, const Tensor& x, InferProbe* probe) {
  if (pl.children.size() < 2) throw FormatError("residual record with too few children");
  if (x.rank() != 4 || x.dim(1) != pl.in_c) {
    throw DimensionError(pl.name + ": input channel mismatch");
  }
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < pl.children.size(); ++i) {
    h = infer_layer(pl.children[i], h, probe);
  }
  const std::int64_t n = x.dim(0);
  const int in_h = static_cast<int>(x.dim(2)), in_w = static_cast<int>(x.dim(3));
  const int out_h = conv_out_extent(in_h, 3, pl.stride, 1);
  const int out_w = conv_out_extent(in_w, 3, pl.stride, 1);
  Tensor sc({n, pl.out_c, out_h, out_w});
  if (pl.stride == 1 && pl.in_c == pl.out_c) {
    sc = x;
  } else {
    const int front = (pl.out_c - pl.in_c) / 2;
    const double* xd = x.data();
    double* od = sc.data();
    for (std::int64_t s = 0; s < n; ++s) {
      for (int c = 0; c < pl.in_c; ++c) {
        const double* sp = xd + (s * pl.in_c + c) * in_h * in_w;
        double* dp = od + (s * pl.out_c + front + c) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
          for (int z = 0; z < out_w; ++z) {
            dp[y * out_w + z] = sp[(y * pl.stride) * in_w + z * pl.stride];
          }
        }
      }
    }
  }
  double* hd = h.data();
  const double* sd = sc.data();
  for (std::int64_t i = 0; i < h.size(); ++i) hd[i] += sd[i];
  return infer_layer(pl.children.back(), h, probe);
}

Tensor infer_layer(const PackedLayer& pl, const Tensor& x, InferProbe* probe) {
  switch (pl.kind) {
    case LayerKind::binary_conv: {
      if (x.rank() != 4 || x.dim(1) != pl.in_c) {
        throw DimensionError(pl.name + ": input channel mismatch");
      }
      const std::int64_t n = x.dim(0);
      const int oh = conv_out_extent(static_cast<int>(x.dim(2)), pl.kh, pl.stride, pl.pad);
      const int ow = conv_out_extent(static_cast<int>(x.dim(3)), pl.kw, pl.stride, pl.pad);
      Tensor cols = lower_batch(x, pl.kh, pl.kw, pl.stride, pl.pad);
      Tensor z;
      std::vector<int> shifts(pl.shifts.begin(), pl.shifts.end());
      if (pl.binarize_input) {
        z = packed_gemm(pl.signs, pack_columns(sign_binarize(cols)), shifts);
      } else {
        // Binary weights on float activations: no bitwise path, run the
        // same float emulation training uses.
        z = matmul(unpack(pl.signs), cols);
        const std::int64_t p = z.dim(1);
        for (std::int64_t r = 0; r < z.dim(0); ++r) {
          const double f = std::ldexp(1.0, shifts[static_cast<std::size_t>(r)]);
          if (f == 1.0) continue;
          double* row = z.data() + r * p;
          for (std::int64_t j = 0; j < p; ++j) row[j] *= f;
        }
      }
      Tensor out = raise_batch(z, n, oh, ow);
      if (probe) probe->binary_outputs.emplace_back(pl.name, out);
      return out;
    }
    case LayerKind::binary_linear: {
      if (x.rank() != 2 || x.dim(1) != pl.in_f) {
        throw DimensionError(pl.name + ": input feature mismatch");
      }
      Tensor cols = transpose2(x);
      Tensor z;
      std::vector<int> shifts(pl.shifts.begin(), pl.shifts.end());
      if (pl.binarize_input) {
        z = packed_gemm(pl.signs, pack_columns(sign_binarize(cols)), shifts);
      } else {
        z = matmul(unpack(pl.signs), cols);
        const std::int64_t p = z.dim(1);
        for (std::int64_t r = 0; r < z.dim(0); ++r) {
          const double f = std::ldexp(1.0, shifts[static_cast<std::size_t>(r)]);
          if (f == 1.0) continue;
          double* row = z.data() + r * p;
          for (std::int64_t j = 0; j < p; ++j) row[j] *= f;
        }
      }
      Tensor out = transpose2(z);
      if (probe) probe->binary_outputs.emplace_back(pl.name, out);
      return out;
    }
    case LayerKind::fp_conv: {
      if (x.rank() != 4 || x.dim(1) != pl.in_c) {
        throw DimensionError(pl.name + ": input channel mismatch");
      }
      const std::int64_t n = x.dim(0);
      const int oh = conv_out_extent(static_cast<int>(x.dim(2)), pl.kh, pl.stride, pl.pad);
      const int ow = conv_out_extent(static_cast<int>(x.dim(3)), pl.kw, pl.stride, pl.pad);
      const std::int64_t k = static_cast<std::int64_t>(pl.in_c) * pl.kh * pl.kw;
      Tensor wt = from_f32(pl.w, {pl.out_c, k});
      Tensor cols = lower_batch(x, pl.kh, pl.kw, pl.stride, pl.pad);
      Tensor z = matmul(wt, cols);
      const std::int64_t p = z.dim(1);
      for (std::int64_t c = 0; c < pl.out_c; ++c) {
        const double b = pl.b[static_cast<std::size_t>(c)];
        double* row = z.data() + c * p;
        for (std::int64_t j = 0; j < p; ++j) row[j] += b;
      }
      return raise_batch(z, n, oh, ow);
    }
    case LayerKind::fp_linear: {
      if (x.rank() != 2 || x.dim(1) != pl.in_f) {
        throw DimensionError(pl.name + ": input feature mismatch");
      }
      Tensor wt = from_f32(pl.w, {pl.out_f, pl.in_f});
      Tensor out = matmul(x, transpose2(wt));
      for (std::int64_t i = 0; i < out.dim(0); ++i) {
        double* row = out.data() + i * pl.out_f;
        for (std::int32_t j = 0; j < pl.out_f; ++j) row[j] += pl.b[static_cast<std::size_t>(j)];
      }
      return out;
    }
    case LayerKind::batchnorm: {
      if (x.rank() < 2 || x.dim(1) != pl.channels) {
        throw DimensionError(pl.name + ": channel mismatch");
      }
      const std::int64_t n = x.dim(0);
      const std::int64_t sp = x.size() / (n * pl.channels);
      Tensor out(x.shape());
      const double* xd = x.data();
      double* od = out.data();
      for (std::int32_t c = 0; c < pl.channels; ++c) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(pl.rvar[c]) + kBnEps);
        const double g = pl.gamma[c], b = pl.beta[c], m = pl.rmean[c];
        for (std::int64_t s = 0; s < n; ++s) {
          const double* src = xd + (s * pl.channels + c) * sp;
          double* dst = od + (s * pl.channels + c) * sp;
          for (std::int64_t i = 0; i < sp; ++i) dst[i] = g * (src[i] - m) * inv + b;
        }
      }
      return out;
    }
    case LayerKind::hardtanh: {
      Tensor out = x;
      double* d = out.data();
      for (std::int64_t i = 0; i < out.size(); ++i) d[i] = std::clamp(d[i], -1.0, 1.0);
      return out;
    }
    case LayerKind::maxpool: {
      if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
        throw DimensionError(pl.name + ": expected even spatial dims");
      }
      const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
      const std::int64_t oh = h / 2, ow = w / 2;
      Tensor out({n, c, oh, ow});
      const double* xd = x.data();
      double* od = out.data();
      std::int64_t oi = 0;
      for (std::int64_t s = 0; s < n * c; ++s) {
        const double* plane = xd + s * h * w;
        for (std::int64_t y = 0; y < oh; ++y) {
          for (std::int64_t z = 0; z < ow; ++z, ++oi) {
            const std::int64_t i00 = (2 * y) * w + 2 * z;
            double bv = plane[i00];
            bv = std::max(bv, plane[i00 + 1]);
            bv = std::max(bv, plane[i00 + w]);
            bv = std::max(bv, plane[i00 + w + 1]);
            od[oi] = bv;
          }
        }
      }
      return out;
    }
    case LayerKind::avgpool: {
      if (x.rank() != 4) throw DimensionError(pl.name + ": expected [n, c, h, w]");
      const std::int64_t n = x.dim(0), c = x.dim(1), sp = x.dim(2) * x.dim(3);
      Tensor out({n, c});
      const double* xd = x.data();
      for (std::int64_t s = 0; s < n * c; ++s) {
        double sum = 0;
        for (std::int64_t i = 0; i < sp; ++i) sum += xd[s * sp + i];
        out[s] = sum / static_cast<double>(sp);
      }
      return out;
    }
    case LayerKind::flatten: return x.reshaped({x.dim(0), x.size() / x.dim(0)});
    case LayerKind::residual: return infer_residual(pl, x, probe);
  }
  throw InternalError("unhandled packed layer kind");
}

void flatten_tree(const std::vector<PackedLayer>& layers, std::vector<const PackedLayer*>& out) {
  for (const PackedLayer& pl : layers) {
    out.push_back(&pl);
    flatten_tree(pl.children, out);
  }
}

}  // namespace

PackedModel export_model(const TrainState& state) {
  PackedModel m;
  m.arch = state.model.arch;
  m.arm = arm_name(state.model.arm);
  m.estimator = estimator_name(state.model.estimator);
  m.seed = state.seed;
  m.epoch = static_cast<std::uint32_t>(state.epoch);
  m.total_epochs = static_cast<std::uint32_t>(state.sched.total_epochs);
  m.input_shape = state.model.input_shape;
  m.classes = state.model.classes;
  for (const auto& l : state.model.layers) m.layers.push_back(export_layer(l.get()));
  return m;
}

Tensor packed_infer(const PackedModel& m, const Tensor& input, InferProbe* probe) {
  Tensor h = input;
  for (const PackedLayer& pl : m.layers) h = infer_layer(pl, h, probe);
  return h;
}

double packed_evaluate(const PackedModel& m, const Dataset& ds, int batch_size) {
  if (ds.count == 0) throw DomainError("cannot evaluate on an empty dataset");
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < ds.count; start += batch_size) {
    const std::int64_t end = std::min<std::int64_t>(start + batch_size, ds.count);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(end - start));
    for (std::int64_t i = start; i < end; ++i) idx[static_cast<std::size_t>(i - start)] = i;
    const Tensor logits = packed_infer(m, make_batch(ds, idx));
    const std::vector<int> labels = batch_labels(ds, idx);
    for (std::int64_t i = 0; i < logits.dim(0); ++i) {
      int best = 0;
      for (int c = 1; c < m.classes; ++c) {
        if (logits.at2(i, c) > logits.at2(i, best)) best = c;
      }
      if (best == labels[static_cast<std::size_t>(i)]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.count);
}

std::vector<std::uint8_t> serialize_packed_model(const PackedModel& m) {
  Writer w;
  write_header(w, m, 0);
  return std::move(w.buf);
}

PackedModel deserialize_packed_model(const std::vector<std::uint8_t>& bytes,
                                     const std::string& origin) {
  Reader r{bytes, 0, origin};
  std::uint8_t filekind = 0;
  PackedModel m = read_header(r, filekind);
  if (filekind != 0) throw FormatError(origin + ": expected a packed model, found a checkpoint");
  return m;
}

namespace {

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write on " + path);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  if (len > 0) f.read(reinterpret_cast<char*>(buf.data()), len);
  if (!f) throw IoError("short read on " + path);
  return buf;
}

}  // namespace

void save_packed_model(const PackedModel& m, const std::string& path) {
  write_file(path, serialize_packed_model(m));
}

PackedModel load_packed_model(const std::string& path) {
  return deserialize_packed_model(read_file(path), path);
}

void save_checkpoint(const TrainState& state, const std::string& path) {
  Writer w;
  write_header(w, export_model(state), 1);

  // Latent weights and optimizer velocities, float32, keyed by name.
  std::vector<const Param*> params;
  {
    std::vector<Param*> ps = const_cast<Model&>(state.model).params();
    params.assign(ps.begin(), ps.end());
  }
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    w.str(p->name);
    w.u8(static_cast<std::uint8_t>(p->value.rank()));
    for (std::int64_t d : p->value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < p->value.size(); ++i) w.f32(static_cast<float>(p->value[i]));
    for (std::int64_t i = 0; i < p->velocity.size(); ++i) w.f32(static_cast<float>(p->velocity[i]));
  }

  w.f64(state.optim.lr);
  w.f64(state.optim.momentum);
  w.f64(state.optim.weight_decay);
  w.u8(state.optim.decay_binary ? 1 : 0);
  w.i32(state.optim.lr_step);
  w.f64(state.optim.lr_gamma);
  w.f64(state.sched.t_min);
  w.f64(state.sched.t_max);
  w.u64(state.rng.seed());
  w.u64(state.rng.counter());
  w.str(state.dataset_name);
  write_file(path, w.buf);
}

TrainState load_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r{bytes, 0, path};
  std::uint8_t filekind = 0;
  PackedModel pm = read_header(r, filekind);
  if (filekind != 1) throw FormatError(path + ": expected a checkpoint, found a packed model");

  struct Latent {
    std::vector<std::int64_t> shape;
    std::vector<float> value, velocity;
  };
  std::map<std::string, Latent> latents;
  const std::uint32_t pcount = r.u32();
  for (std::uint32_t i = 0; i < pcount; ++i) {
    const std::string name = r.str();
    Latent lt;
    const std::uint8_t rank = r.u8();
    std::int64_t sz = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      lt.shape.push_back(r.u32());
      sz *= lt.shape.back();
    }
    lt.value.resize(static_cast<std::size_t>(sz));
    for (auto& v : lt.value) v = r.f32();
    lt.velocity.resize(static_cast<std::size_t>(sz));
    for (auto& v : lt.velocity) v = r.f32();
    latents.emplace(name, std::move(lt));
  }

  TrainState st;
  st.optim.lr = r.f64();
  st.optim.momentum = r.f64();
  st.optim.weight_decay = r.f64();
  st.optim.decay_binary = r.u8() != 0;
  st.optim.lr_step = r.i32();
  st.optim.lr_gamma = r.f64();
  st.sched.t_min = r.f64();
  st.sched.t_max = r.f64();
  st.sched.total_epochs = static_cast<int>(pm.total_epochs);
  const std::uint64_t rng_seed = r.u64();
  const std::uint64_t rng_counter = r.u64();
  st.dataset_name = r.str();

  Rng build_rng(pm.seed);
  st.model = build_model(pm.arch, arm_from_string(pm.arm), estimator_from_string(pm.estimator),
                         build_rng);
  st.epoch = static_cast<int>(pm.epoch);
  st.seed = pm.seed;
  st.rng = Rng(rng_seed, rng_counter);

  for (Param* p : st.model.params()) {
    auto it = latents.find(p->name);
    if (it == latents.end()) throw FormatError(path + ": missing latent section for " + p->name);
    if (it->second.shape != p->value.shape()) {
      throw FormatError(path + ": latent shape mismatch for " + p->name);
    }
    p->value = from_f32(it->second.value, it->second.shape);
    p->velocity = from_f32(it->second.velocity, it->second.shape);
  }

  // Batchnorm running buffers ride in the layer records; walk both trees in
  // execution order.
  std::vector<const PackedLayer*> records;
  flatten_tree(pm.layers, records);
  std::vector<Layer*> live = st.model.all_layers();
  if (records.size() != live.size()) {
    throw FormatError(path + ": layer record count does not match architecture");
  }
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (records[i]->kind != live[i]->kind() || records[i]->name != live[i]->name()) {
      throw FormatError(path + ": layer record " + records[i]->name +
                        " does not match architecture layer " + live[i]->name());
    }
    if (auto* bn = dynamic_cast<BatchNorm*>(live[i])) {
      bn->running_mean = from_f32(records[i]->rmean, {bn->channels});
      bn->running_var = from_f32(records[i]->rvar, {bn->channels});
    }
  }
  return st;
}

bool is_checkpoint_file(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < 7 || std::memcmp(bytes.data(), "IRBN", 4) != 0) {
    throw FormatError(path + ": not an IRBN file");
  }
  return bytes[6] == 1;
}

std::int64_t packed_model_bytes(const PackedModel& m) {
  return static_cast<std::int64_t>(serialize_packed_model(m).size());
}

}  // namespace irbnn
