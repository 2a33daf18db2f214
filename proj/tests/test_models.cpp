#include "doctest.h"
#include "slnk/model.hpp"

using namespace slnk;

TEST_SUITE_BEGIN("models");

// Expected totals were derived by hand from the layer arithmetic (weights +
// biases + the active width's norm set) and independently cross-checked by
// enumerating the extracted sub-network's tensors.

TEST_CASE("table-1 cnn parameter counts per width") {
  ModelSpec spec = preset_spec("cnn-table1");
  REQUIRE(spec.num_classes == 35);
  auto model = build_cnn<float>(spec, 0);
  CHECK(count_params(model, 1.0) == 204059);
  CHECK(count_params(model, 0.75) == 116189);
  CHECK(count_params(model, 0.5) == 52895);
  CHECK(count_params(model, 0.25) == 14177);

  // the binary-head variant from the per-op example: ~199k at full width
  ModelSpec spec2 = spec;
  spec2.num_classes = 2;
  auto model2 = build_cnn<float>(spec2, 0);
  CHECK(count_params(model2, 1.0) == 198746);
  CHECK(std::abs(count_params(model2, 1.0) - 199000) <= 199000 * 5 / 100);
  CHECK(std::abs(count_params(model2, 0.25) - 13000) <= 13000 * 10 / 100);
}

TEST_CASE("transformer parameter counts per width") {
  auto inhouse = build_transformer<float>(preset_spec("transformer-inhouse"), 0);
  CHECK(count_params(inhouse, 1.0) == 129090);
  CHECK(count_params(inhouse, 0.75) == 80834);
  CHECK(count_params(inhouse, 0.5) == 45890);
  CHECK(count_params(inhouse, 0.25) == 24258);

  auto gsc = build_transformer<float>(preset_spec("transformer-gsc"), 0);
  CHECK(count_params(gsc, 1.0) == 71715);
  CHECK(count_params(gsc, 0.75) == 46451);
  CHECK(count_params(gsc, 0.5) == 27843);
  CHECK(count_params(gsc, 0.25) == 15891);

  // within +-10% of the published 67k/44k/26k/15k row
  const int64_t published[] = {67000, 44000, 26000, 15000};
  const double widths[] = {1.0, 0.75, 0.5, 0.25};
  for (int i = 0; i < 4; ++i) {
    double rel = std::abs(static_cast<double>(count_params(gsc, widths[i]) - published[i])) /
                 static_cast<double>(published[i]);
    CHECK(rel <= 0.10);
  }
}

TEST_CASE("one-layer toy cnn has 40 conv parameters") {
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::Cnn;
  spec.frames = 8;
  spec.mel_bins = 8;
  spec.num_classes = 2;
  spec.width_list = WidthList(std::vector<double>{1.0});
  spec.conv_rows = {{3, 3, 4, 1, 1, 1, 1}};
  auto model = build_cnn<float>(spec, 0);
  auto rows = cost_breakdown(model, 1.0);
  CHECK(rows[0].params == 40);  // 3*3*4 weights + 4 biases
}

TEST_CASE("zero-layer transformer is embedding plus head") {
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::Transformer;
  spec.frames = 6;
  spec.mel_bins = 5;
  spec.num_classes = 3;
  spec.dim = 8;
  spec.mlp_dim = 16;
  spec.heads = 1;
  spec.layers = 0;
  spec.width_list = WidthList(std::vector<double>{1.0, 0.5});
  auto model = build_transformer<float>(spec, 1);

  const int64_t embed = 5 * 8 + 8;
  const int64_t pos = 7 * 8, cls = 8;
  const int64_t final_norm = 2 * 8;
  const int64_t head = 8 * 3 + 3;
  CHECK(count_params(model, 1.0) == embed + pos + cls + final_norm + head);

  Graph<float> g;
  NoGradGuard<float> ng(g);
  auto x = Tensor<float>::zeros({2, 6, 5});
  auto logits = model.forward_at(g, x, 1.0, false);
  CHECK(logits.shape() == Shape{2, 3});
}

TEST_CASE("logits keep num_classes columns at every width") {
  ModelSpec spec = preset_spec("cnn-desk");
  auto model = build_cnn<float>(spec, 3);
  Graph<float> g;
  NoGradGuard<float> ng(g);
  auto x = Tensor<float>::zeros({3, spec.frames, spec.mel_bins});
  for (double w : spec.width_list.widths) {
    auto logits = model.forward_at(g, x, w, false);
    CHECK(logits.shape() == Shape{3, spec.num_classes});
  }
  CHECK_THROWS_AS(model.forward_at(g, Tensor<float>::zeros({3, 10, 10}), 1.0, false),
                  ShapeError);
}

TEST_CASE("duplicated batch rows give identical logit rows in eval mode") {
  ModelSpec spec = preset_spec("cnn-desk");
  auto model = build_cnn<float>(spec, 4);
  Graph<float> g;
  NoGradGuard<float> ng(g);
  Rng rng(11);
  auto x = Tensor<float>::zeros({2, spec.frames, spec.mel_bins});
  for (int64_t i = 0; i < spec.frames * spec.mel_bins; ++i) {
    float v = static_cast<float>(rng.normal());
    x.data()[i] = v;
    x.data()[spec.frames * spec.mel_bins + i] = v;
  }
  auto logits = model.forward_at(g, x, 1.0, false);
  for (int64_t j = 0; j < spec.num_classes; ++j)
    CHECK(logits.data()[j] == logits.data()[spec.num_classes + j]);
}

TEST_CASE("build determinism: same spec and seed give identical weights") {
  ModelSpec spec = preset_spec("transformer-gsc");
  auto a = build_transformer<float>(spec, 77);
  auto b = build_transformer<float>(spec, 77);
  bool identical = true;
  std::vector<std::pair<std::string, std::vector<float>>> aw;
  a.visit_params([&](const std::string& n, Tensor<float>& t) {
    aw.emplace_back(n, t.values());
  });
  size_t i = 0;
  b.visit_params([&](const std::string& n, Tensor<float>& t) {
    identical = identical && aw[i].first == n && aw[i].second == t.values();
    ++i;
  });
  CHECK(identical);

  auto c = build_transformer<float>(spec, 78);
  bool differs = false;
  i = 0;
  c.visit_params([&](const std::string&, Tensor<float>& t) {
    if (aw[i].second != t.values()) differs = true;
    ++i;
  });
  CHECK(differs);
}

TEST_CASE("parameter counts strictly increase with width") {
  for (const char* preset : {"cnn-table1", "transformer-inhouse", "cnn-desk"}) {
    ModelSpec spec = preset_spec(preset);
    auto model = build_model<float>(spec, 0);
    int64_t prev = 0;
    for (auto it = spec.width_list.widths.rbegin(); it != spec.width_list.widths.rend();
         ++it) {
      int64_t n = count_params(model, *it);
      CHECK(n > prev);
      prev = n;
    }
  }
}

TEST_CASE("spatial underflow is a build error naming the layer") {
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::Cnn;
  spec.frames = 10;
  spec.mel_bins = 6;
  spec.num_classes = 2;
  spec.width_list = WidthList(std::vector<double>{1.0});
  spec.conv_rows = {{3, 3, 4, 1, 2, 1, 1},   // 8x2 out
                    {3, 4, 8, 1, 1, 1, 1}};  // kernel 4 > remaining width 2
  CHECK_THROWS_WITH_AS(build_cnn<float>(spec, 0), doctest::Contains("conv2"),
                       ConfigError);
}

TEST_CASE("head divisibility is checked at every active width") {
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::Transformer;
  spec.frames = 4;
  spec.mel_bins = 4;
  spec.num_classes = 2;
  spec.dim = 8;
  spec.mlp_dim = 8;
  spec.heads = 2;
  spec.layers = 1;
  // ac(8, 0.4) = 3, not divisible by 2 heads
  spec.width_list = WidthList(std::vector<double>{1.0, 0.4});
  CHECK_THROWS_AS(build_transformer<float>(spec, 0), ConfigError);

  spec.width_list = WidthList(std::vector<double>{1.0, 0.5});
  CHECK_NOTHROW(build_transformer<float>(spec, 0));
}

TEST_SUITE_END();
