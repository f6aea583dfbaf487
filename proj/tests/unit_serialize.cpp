#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "irbnn/data.hpp"
#include "irbnn/errors.hpp"
#include "irbnn/net.hpp"
#include "irbnn/packed_model.hpp"

using namespace irbnn;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& leaf) {
  const fs::path dir = fs::temp_directory_path() / "irbnn-serialize-tests";
  fs::create_directories(dir);
  return (dir / leaf).string();
}

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

Dataset glyph_dataset(std::int64_t n, std::uint64_t seed) {
  Dataset ds;
  ds.name = "synth";
  ds.count = n;
  ds.channels = 1;
  ds.height = 28;
  ds.width = 28;
  ds.classes = 10;
  ds.images.resize(static_cast<std::size_t>(n) * 784);
  ds.labels.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  for (std::int64_t i = 0; i < n; ++i) {
    const int digit = static_cast<int>(rng.next_below(10));
    ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(digit);
    render_glyph(digit, rng, ds.images.data() + i * 784);
  }
  ds.norm_mean = {0.1307};
  ds.norm_std = {0.3081};
  return ds;
}

// One short epoch of real training so buffers, velocities, and the rng all
// carry non-trivial state.
TrainState trained_state(const std::string& arch, const Dataset& ds) {
  TrainState st;
  Rng rng(42);
  st.model = build_model(arch, Arm::irnet, Estimator::ede, rng);
  st.rng = rng;
  st.seed = 42;
  st.optim.lr = 0.07;
  st.optim.momentum = 0.8;
  st.optim.weight_decay = 5e-5;
  st.optim.decay_binary = true;
  st.optim.lr_step = 2;
  st.optim.lr_gamma = 0.2;
  st.sched = EdeSchedule{0.2, 8.0, 4};
  st.dataset_name = ds.name;
  train_epoch(st, ds, nullptr, 20, false);
  return st;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_SUITE("serialize") {

TEST_CASE("checkpoint round trip preserves the whole training state") {
  Dataset ds = glyph_dataset(60, 2);
  TrainState st = trained_state("mlp784", ds);
  const std::string path = temp_path("roundtrip.irbnn");
  save_checkpoint(st, path);

  CHECK(is_checkpoint_file(path));
  TrainState rt = load_checkpoint(path);

  CHECK(rt.model.arch == "mlp784");
  CHECK(rt.model.arm == Arm::irnet);
  CHECK(rt.model.estimator == Estimator::ede);
  CHECK(rt.epoch == 1);
  CHECK(rt.seed == 42);
  CHECK(rt.optim == st.optim);
  CHECK(rt.sched.t_min == st.sched.t_min);
  CHECK(rt.sched.t_max == st.sched.t_max);
  CHECK(rt.sched.total_epochs == 4);
  CHECK(rt.dataset_name == "synth");
  CHECK(rt.rng.seed() == st.rng.seed());
  CHECK(rt.rng.counter() == st.rng.counter());
  CHECK(rt.rng.counter() != 0);

  // Latents and velocities come back as their float32 roundings.
  std::vector<Param*> orig = st.model.params();
  std::vector<Param*> back = rt.model.params();
  REQUIRE(orig.size() == back.size());
  for (std::size_t p = 0; p < orig.size(); ++p) {
    CHECK(orig[p]->name == back[p]->name);
    REQUIRE(orig[p]->value.size() == back[p]->value.size());
    bool values_ok = true, velocities_ok = true;
    for (std::int64_t i = 0; i < orig[p]->value.size(); ++i) {
      values_ok = values_ok &&
                  back[p]->value[i] == static_cast<double>(static_cast<float>(orig[p]->value[i]));
      velocities_ok =
          velocities_ok && back[p]->velocity[i] ==
                               static_cast<double>(static_cast<float>(orig[p]->velocity[i]));
    }
    CHECK(values_ok);
    CHECK(velocities_ok);
  }

  // Batchnorm running buffers survive too.
  std::vector<Layer*> ol = st.model.all_layers();
  std::vector<Layer*> bl = rt.model.all_layers();
  REQUIRE(ol.size() == bl.size());
  int bn_seen = 0;
  for (std::size_t i = 0; i < ol.size(); ++i) {
    auto* obn = dynamic_cast<BatchNorm*>(ol[i]);
    auto* bbn = dynamic_cast<BatchNorm*>(bl[i]);
    REQUIRE((obn == nullptr) == (bbn == nullptr));
    if (obn == nullptr) continue;
    ++bn_seen;
    bool ok = true;
    for (std::int64_t j = 0; j < obn->running_mean.size(); ++j) {
      ok = ok && bbn->running_mean[j] ==
                     static_cast<double>(static_cast<float>(obn->running_mean[j]));
      ok = ok &&
           bbn->running_var[j] == static_cast<double>(static_cast<float>(obn->running_var[j]));
    }
    CHECK(ok);
  }
  CHECK(bn_seen >= 2);

  // Saving the reloaded state reproduces the file byte for byte.
  const std::string path2 = temp_path("roundtrip2.irbnn");
  save_checkpoint(rt, path2);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("packed model serialization round trips exactly") {
  Dataset ds = glyph_dataset(60, 3);
  TrainState st = trained_state("mnist_cnn", ds);
  PackedModel pm = export_model(st);
  CHECK(pm.arch == "mnist_cnn");
  CHECK(pm.arm == "irnet");
  CHECK(pm.estimator == "ede");
  CHECK(pm.epoch == 1);

  const std::vector<std::uint8_t> bytes = serialize_packed_model(pm);
  CHECK(packed_model_bytes(pm) == static_cast<std::int64_t>(bytes.size()));
  PackedModel rt = deserialize_packed_model(bytes);
  CHECK(serialize_packed_model(rt) == bytes);

  Tensor x = make_batch(ds, {0, 1, 2, 3});
  Tensor a = packed_infer(pm, x);
  Tensor b = packed_infer(rt, x);
  CHECK(bit_equal(a, b));

  const std::string path = temp_path("model.irbnn");
  save_packed_model(pm, path);
  CHECK_FALSE(is_checkpoint_file(path));
  PackedModel lm = load_packed_model(path);
  CHECK(bit_equal(packed_infer(lm, x), a));
}

TEST_CASE("packed inference matches the training forward after a checkpoint cycle") {
  Dataset ds = glyph_dataset(120, 5);
  TrainState st = trained_state("mnist_cnn", ds);
  const std::string path = temp_path("crosspath.irbnn");
  save_checkpoint(st, path);
  TrainState rt = load_checkpoint(path);

  PackedModel pm = export_model(rt);
  Tensor x = make_batch(ds, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});

  rt.model.set_probe(true);
  Tensor train_logits = rt.model.forward(x, false);
  std::vector<BinaryLayerBase*> blayers = rt.model.binary_layers();

  InferProbe probe;
  Tensor packed_logits = packed_infer(pm, x, &probe);

  // Pre-batchnorm binary outputs are integer-exact across the two paths.
  REQUIRE(probe.binary_outputs.size() == blayers.size());
  for (std::size_t i = 0; i < blayers.size(); ++i) {
    CHECK(probe.binary_outputs[i].first == blayers[i]->name());
    CHECK(bit_equal(probe.binary_outputs[i].second, blayers[i]->probed_output()));
  }

  REQUIRE(train_logits.shape() == packed_logits.shape());
  double worst = 0;
  for (std::int64_t i = 0; i < train_logits.size(); ++i)
    worst = std::max(worst, std::fabs(train_logits[i] - packed_logits[i]));
  CHECK(worst <= 1e-9);

  // Whole-dataset accuracy agrees between the two paths.
  CHECK(packed_evaluate(pm, ds, 32) == evaluate(rt.model, ds, 32));
}

TEST_CASE("truncated files name the failing offset") {
  Dataset ds = glyph_dataset(40, 7);
  TrainState st = trained_state("mlp784", ds);
  const std::string path = temp_path("trunc.irbnn");
  save_checkpoint(st, path);
  auto bytes = slurp(path);

  const std::string cut = temp_path("cut.irbnn");
  std::ofstream(cut, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), 40);
  try {
    load_checkpoint(cut);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("truncated at offset") != std::string::npos);
  }

  // In-memory variant for the packed container.
  PackedModel pm = export_model(st);
  std::vector<std::uint8_t> mb = serialize_packed_model(pm);
  mb.resize(mb.size() / 2);
  CHECK_THROWS_AS(deserialize_packed_model(mb), FormatError);
}

TEST_CASE("bad magic and wrong container kind are format errors") {
  Dataset ds = glyph_dataset(40, 9);
  TrainState st = trained_state("mlp784", ds);
  const std::string ckpt = temp_path("kind-ckpt.irbnn");
  const std::string model = temp_path("kind-model.irbnn");
  save_checkpoint(st, ckpt);
  save_packed_model(export_model(st), model);

  // A checkpoint is not a packed model and vice versa.
  CHECK_THROWS_AS(load_packed_model(ckpt), FormatError);
  CHECK_THROWS_AS(load_checkpoint(model), FormatError);

  auto bytes = slurp(ckpt);
  bytes[0] = 'X';
  const std::string bad = temp_path("bad-magic.irbnn");
  std::ofstream(bad, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("magic"), FormatError);
  // The sniffer rejects what neither loader could open.
  CHECK_THROWS_AS(is_checkpoint_file(bad), FormatError);
  CHECK_THROWS_AS(is_checkpoint_file(temp_path("does-not-exist.irbnn")), IoError);

  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.irbnn")), IoError);
}

TEST_CASE("export rejects degenerate binary weights by layer name") {
  TrainState st;
  Rng rng(1);
  st.model.arch = "custom";
  st.model.input_shape = {4};
  st.model.layers.push_back(std::make_unique<BinaryLinear>(4, 2, false, WeightTransform::full(),
                                                           Estimator::ste_clip, rng));
  st.model.layers.back()->set_name("bfc1");
  BinaryLinear* l = dynamic_cast<BinaryLinear*>(st.model.layers[0].get());
  l->weight().value = Tensor::full({2, 4}, 1.0);
  try {
    export_model(st);
    FAIL("expected an export error");
  } catch (const ExportError& e) {
    CHECK(std::string(e.what()).find("bfc1") != std::string::npos);
  }
}

}  // TEST_SUITE
