#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fdy/gradcheck.hpp"
#include "fdy/model.hpp"
#include "fdy/presets.hpp"
#include "test_util.hpp"

using namespace fdy;
using fdy::test::random_tensor;

namespace {

Index total(const ModelConfig& m) { return count_parameters(SEDModel<float>(m, 0)).total; }

double millions(const ModelConfig& m) { return static_cast<double>(total(m)) / 1e6; }

ModelConfig tiny(const std::string& dynamic = "(1)+(2,3)", Rational proportion = {1, 4}) {
  ModelConfig m;
  m.n_mels = 16;
  m.n_classes = 3;
  m.base_channels = {4, 8, 8};
  m.pool_time = {2, 1, 1};
  m.pool_freq = {2, 4, 1};
  m.rnn_hidden = 3;
  m.rnn_layers = 1;
  m.dynamic = dynamic;
  m.proportion = proportion;
  return m;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fdy_test_model_" + name);
}

}  // namespace

TEST_CASE("parameter totals against the published tables") {
  const double crnn = millions(named_preset("crnn"));
  const double fdy = millions(named_preset("fdy"));
  const double pfd = millions(named_preset("pfd-1/8"));
  CHECK(std::abs(crnn - 4.428) / 4.428 < 0.10);
  CHECK(std::abs(fdy - 11.061) / 11.061 < 0.10);
  CHECK(std::abs((fdy - crnn) - 6.633) / 6.633 < 0.03);
  CHECK(std::abs((pfd - crnn) - 0.973) / 0.973 < 0.05);
  CHECK(std::abs(millions(named_preset("mfd-1/8x5")) - 9.296) / 9.296 < 0.03);

  for (const auto& table : preset_tables()) {
    for (const auto& row : count_table(table)) {
      CAPTURE(row.preset.label);
      if (row.preset.published_params_m < 0) continue;
      const double m = static_cast<double>(row.computed) / 1e6;
      CHECK(std::abs(m - row.preset.published_params_m) / row.preset.published_params_m < 0.10);
      if (!row.preset.model.pre_conv)
        CHECK(std::abs((m - crnn) - (row.preset.published_params_m - 4.428)) / std::max(0.1, row.preset.published_params_m - 4.428) <
              0.03);
    }
  }
}

TEST_CASE("parameter totals grow with the number of eighth-branches") {
  Index prev = total(named_preset("pfd-1/8"));
  for (int n = 2; n <= 8; ++n) {
    ModelConfig m = named_preset("crnn");
    m.dynamic = "(1)x" + std::to_string(n);
    m.proportion = {1, 8};
    const Index cur = total(m);
    CHECK(cur > prev);
    prev = cur;
  }
  CHECK(total(named_preset("crnn")) < total(named_preset("pfd-1/8")));
  CHECK(total(named_preset("dfd")) == total(named_preset("fdy")));
}

TEST_CASE("count_parameters enumerates every allocated value once") {
  for (const auto& table : preset_tables())
    for (const auto& p : table_presets(table)) {
      const SEDModel<float> model(p.model, 0);
      Index n = 0;
      for (const auto& param : model.store().params()) n += param.var.value().size();
      const ParamTable t = count_parameters(model);
      CHECK(t.total == n);
      Index by_layer = 0;
      for (const auto& l : t.layers) by_layer += t.layer_total(l);
      CHECK(by_layer == n);
      Index analytic = 0;
      for (const auto& b : model.blocks()) analytic += layer_param_count(b.conv.config()).total;
      if (model.pre_block()) analytic += layer_param_count(model.pre_block()->conv.config()).total;
      Index conv = t.role_total("static") + t.role_total("dynamic") + t.role_total("attention") + t.role_total("bias");
      CHECK(conv == analytic);
    }
  const ParamTable t = count_parameters(SEDModel<float>(named_preset("pfd-1/8"), 0));
  CHECK(t.by.at("conv1").count("dynamic") == 0);
  CHECK(t.by.at("conv2").at("dynamic") == 4 * 32 * 8 * 9);
  CHECK(t.format().find("conv7") != std::string::npos);
}

TEST_CASE("build_model") {
  SUBCASE("frequency extents follow the pooling schedule") {
    const SEDModel<float> m(named_preset("mdfd-1/8"), 1);
    const Index expected[] = {128, 64, 32, 16, 8, 4, 2};
    for (std::size_t i = 0; i < 7; ++i) CHECK(m.blocks()[i].input_f == expected[i]);
    const auto& last = m.blocks().back().conv.branches();
    for (const auto& br : last) CHECK(br.dilations == std::vector<int>{1, 1, 1, 1});
    CHECK(m.blocks()[5].conv.branches()[2].dilations == std::vector<int>{1, 1, 2, 3});
    CHECK(!m.warnings().empty());
    CHECK(m.blocks()[0].conv.branches().empty());
  }
  SUBCASE("pre-convolution makes the first layer dynamic") {
    ModelConfig c = named_preset("fdy");
    c.pre_conv = true;
    const SEDModel<float> m(c, 1);
    REQUIRE(m.pre_block().has_value());
    CHECK(m.blocks()[0].conv.branches().size() == 1);
    CHECK(m.blocks()[0].conv.config().in_channels == 16);
  }
  SUBCASE("same seed, same parameters") {
    const SEDModel<float> a(named_preset("pfd-1/8"), 5), b(named_preset("pfd-1/8"), 5), c(named_preset("pfd-1/8"), 6);
    bool all_equal = true, any_diff = false;
    for (std::size_t i = 0; i < a.store().params().size(); ++i) {
      all_equal = all_equal && max_abs_diff(a.store().params()[i].var.value(), b.store().params()[i].var.value()) == 0.0f;
      any_diff = any_diff || max_abs_diff(a.store().params()[i].var.value(), c.store().params()[i].var.value()) > 0.0f;
    }
    CHECK(all_equal);
    CHECK(any_diff);
  }
  SUBCASE("invalid configurations name the layer") {
    ModelConfig c = named_preset("crnn");
    c.pool_freq = {2, 2, 2, 2, 2, 1, 1};
    CHECK_THROWS_WITH_AS(SEDModel<float>(c, 0), doctest::Contains("conv7"), ConfigError);
    ModelConfig w = named_preset("pfd-1/8");
    w.width = {11, 8};
    w.proportion = {1, 32};
    CHECK_THROWS_WITH_AS(SEDModel<float>(w, 0), doctest::Contains("conv2"), ConfigError);
  }
}

TEST_CASE("model_forward") {
  const SEDModel<double> model(tiny(), 3);
  const auto x = Var<double>::constant(random_tensor(Shape4{2, 1, 8, 16}, 4));
  const auto out = model_forward(model, x, false);
  CHECK(out.strong.shape() == Shape4{2, 3, 8, 1});
  CHECK(out.weak.shape() == Shape4{2, 3, 1, 1});
  CHECK((out.strong.value().array() > 0).all());
  CHECK((out.strong.value().array() < 1).all());
  CHECK((out.weak.value().array() > 0).all());
  CHECK((out.weak.value().array() < 1).all());
  const auto again = model_forward(model, x, false);
  CHECK(max_abs_diff(out.strong.value(), again.strong.value()) == 0.0);
  CHECK(max_abs_diff(out.weak.value(), again.weak.value()) == 0.0);
  for (Index t = 0; t < 8; t += 2) CHECK(out.strong.value()(1, 2, t, 0) == out.strong.value()(1, 2, t + 1, 0));

  SEDModel<double> zeroed(tiny(), 3);
  zeroed.strong_weight().mutable_value().array().setZero();
  zeroed.strong_bias().mutable_value().array().setZero();
  const auto half = model_forward(zeroed, x, false);
  CHECK((half.strong.value().array() == 0.5).all());
  CHECK((half.weak.value().array() - 0.5).abs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(model_forward(model, Var<double>::constant(random_tensor(Shape4{2, 1, 8, 12}, 4)), false), ShapeError);
  CHECK_THROWS_AS(model_forward(model, Var<double>::constant(random_tensor(Shape4{2, 1, 7, 16}, 4)), false), ShapeError);
  CHECK_THROWS_AS(model_forward(model, x, true), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  SEDModel<float> model(tiny(), 11);
  Rng rng(2);
  const auto x = Var<float>::constant(random_tensor<float>(Shape4{2, 1, 8, 16}, 5));
  model_forward(model, x, true, &rng);  // moves running statistics away from their defaults
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(model, path.string());
  const SEDModel<float> loaded = load_checkpoint<float>(path.string());
  CHECK(loaded.config() == model.config());
  CHECK(count_parameters(loaded).total == count_parameters(model).total);
  for (std::size_t i = 0; i < model.store().params().size(); ++i)
    CHECK(max_abs_diff(model.store().params()[i].var.value(), loaded.store().params()[i].var.value()) == 0.0f);
  const auto a = model_forward(model, x, false);
  const auto b = model_forward(loaded, x, false);
  CHECK(max_abs_diff(a.strong.value(), b.strong.value()) == 0.0f);
  CHECK(max_abs_diff(a.weak.value(), b.weak.value()) == 0.0f);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(bytes.substr(0, 4) == "FDYK");
  for (std::size_t cut : {std::size_t{2}, std::size_t{7}, bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, cut)), FormatError);
  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  CHECK_THROWS_WITH_AS(decode_checkpoint(wrong_version), doctest::Contains("version"), FormatError);

  CheckpointData data = decode_checkpoint(bytes);
  data.tensors.push_back(TensorRecord{"mystery", {1}, {0.0f}});
  CHECK_THROWS_WITH_AS(model_from_checkpoint<float>(data), doctest::Contains("mystery"), FormatError);
  data.tensors.pop_back();
  data.tensors[0].dims[0] += 1;
  CHECK_THROWS_AS(model_from_checkpoint<float>(data), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("whole-model gradient check") {
  const SEDModel<double> model(tiny("(1)+(2,3)", {1, 4}), 21);
  const auto x = Var<double>::leaf(random_tensor(Shape4{2, 1, 8, 16}, 8), true);
  std::vector<Var<double>> leaves{x};
  for (const auto& p : model.store().params()) leaves.push_back(p.var);
  Tensor4<double> target(Shape4{2, 3, 8, 1});
  Rng r(3);
  for (Index i = 0; i < target.size(); ++i) target[i] = r.uniform() < 0.3 ? 1.0 : 0.0;
  Tensor4<double> weak_target(Shape4{2, 3, 1, 1}, 1.0);
  auto loss = [&] {
    const auto out = model.forward(x, false);
    return add(binary_cross_entropy(out.strong, target), scale(binary_cross_entropy(out.weak, weak_target), 0.5));
  };
  const auto res = finite_diff_check_inplace<double>(loss, leaves, 1e-5, 1e-6);
  CAPTURE(res.worst_input);
  CAPTURE(res.analytic);
  CAPTURE(res.numeric);
  CHECK(res.max_rel_error < 1e-4);
}
