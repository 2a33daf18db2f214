#include "doctest.h"
#include "gradcheck.hpp"
#include "slnk/model.hpp"

using namespace slnk;
namespace gc = gradcheck;

TEST_SUITE_BEGIN("slim-layers");

TEST_CASE("active_count follows round-half-up with clamp") {
  CHECK(active_count(64, 0.75) == 48);
  CHECK(active_count(40, 0.25) == 10);
  CHECK(active_count(1, 0.25) == 1);
  CHECK(active_count(3, 0.5) == 2);   // 1.5 rounds up
  CHECK(active_count(10, 0.04) == 1); // clamped

  // monotone in width => smaller widths always use a prefix of larger ones
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    int64_t n = 1 + rng.index(200);
    double w1 = rng.uniform(0.01, 1.0), w2 = rng.uniform(0.01, 1.0);
    if (w1 > w2) std::swap(w1, w2);
    CHECK(active_count(n, w1) <= active_count(n, w2));
  }
}

TEST_CASE("width list validation and membership") {
  CHECK_THROWS_AS(WidthList(std::vector<double>{}), ConfigError);
  CHECK_THROWS_AS(WidthList(std::vector<double>{0.75, 0.5}), ConfigError);
  CHECK_THROWS_AS(WidthList(std::vector<double>{1.0, 0.5, 0.5}), ConfigError);
  CHECK_THROWS_AS(WidthList(std::vector<double>{1.0, 0.5, 0.75}), ConfigError);
  CHECK_THROWS_AS(WidthList(std::vector<double>{1.0, -0.5}), ConfigError);

  WidthList wl(std::vector<double>{1.0, 0.75, 0.5, 0.25});
  CHECK(wl.index_of(0.5) == 2);
  CHECK_THROWS_AS(wl.index_of(0.3), ConfigError);

  WidthList even = WidthList::evenly_spaced(4);
  CHECK(even.widths == std::vector<double>{1.0, 0.75, 0.5, 0.25});
}

TEST_CASE("set_active_width rejects widths outside the list") {
  ModelSpec spec = preset_spec("cnn-desk");
  auto model = build_cnn<float>(spec, 1);
  CHECK_THROWS_AS(model.set_active_width(0.3), ConfigError);
  model.set_active_width(0.5);
  CHECK(model.ctx.width_index == 2);
}

TEST_CASE("slim conv channel bookkeeping follows the figure-1 roles") {
  Rng rng(1);
  // first layer: kernels are dropped, full input depth stays
  SlimConv2d<float> first(1, 32, 3, 3, 1, 1, false, true, rng, "first");
  CHECK(first.active_out(0.25) == 8);
  CHECK(first.active_in(0.25) == 1);

  // last-layer role: kernels are only reduced in width
  SlimConv2d<float> last(64, 128, 1, 1, 1, 1, true, false, rng, "last");
  CHECK(last.active_out(0.5) == 128);
  CHECK(last.active_in(0.5) == 32);
}

TEST_CASE("slim conv at width 1.0 matches the plain convolution bitwise") {
  Rng rng(7);
  SlimConv2d<float> conv(3, 6, 3, 2, 1, 1, true, true, rng, "c");
  Graph<float> g;
  auto x = Tensor<float>::zeros({2, 3, 6, 5});
  Rng xr(9);
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(xr.normal());

  SlimContext full{1.0, 0};
  auto y_slim = conv.forward(g, x, full);
  auto y_plain = ops::conv2d(g, x, conv.weight, conv.bias, 1, 1);
  CHECK(y_slim.values() == y_plain.values());
}

TEST_CASE("slim conv rejects channel mismatches by layer name") {
  Rng rng(7);
  SlimConv2d<float> conv(8, 6, 3, 3, 1, 1, true, true, rng, "conv2");
  Graph<float> g;
  auto x = Tensor<float>::zeros({1, 8, 6, 6});  // full channels at width 0.5
  SlimContext half{0.5, 1};
  CHECK_THROWS_WITH_AS(conv.forward(g, x, half),
                       doctest::Contains("conv2"), ShapeError);
}

TEST_CASE("slim dense slice oracle: 4->4 at width 0.5 uses weight[:2,:2]") {
  Rng rng(11);
  SlimDense<float> dense(4, 4, true, true, rng, "d");
  Graph<float> g;
  auto x = Tensor<float>::from({1, 2}, {1.5f, -2.0f});
  SlimContext half{0.5, 1};
  auto y = dense.forward(g, x, half);
  CHECK(y.shape() == Shape{1, 2});
  // brute-force slice-then-multiply
  for (int64_t r = 0; r < 2; ++r) {
    float dot = 0.0f;
    for (int64_t c = 0; c < 2; ++c)
      dot += x.data()[c] * dense.weight.data()[r * 4 + c];
    float expect = dense.bias.data()[r] + dot;
    CHECK(y.data()[r] == expect);
  }
}

TEST_CASE("classifier heads keep their output extent at every width") {
  Rng rng(13);
  SlimDense<float> head(64, 35, true, false, rng, "head");
  Graph<float> g;
  for (double w : {1.0, 0.75, 0.5, 0.25}) {
    int64_t din = head.active_in(w);
    auto x = Tensor<float>::zeros({3, din});
    SlimContext ctx{w, 0};
    auto y = head.forward(g, x, ctx);
    CHECK(y.shape() == Shape{3, 35});
  }
}

TEST_CASE("gradient masking: inactive weights get exactly zero gradient") {
  Rng rng(17);
  SlimDense<double> dense(6, 6, true, true, rng, "d");
  Graph<double> g;
  auto x = gc::random_tensor({4, 3}, rng, false);
  SlimContext half{0.5, 1};
  auto y = dense.forward(g, x, half);
  g.backward(gc::project_to_scalar(g, y, 5));

  const auto& wg = dense.weight.grad_view();
  int64_t nonzero_inside = 0;
  for (int64_t r = 0; r < 6; ++r)
    for (int64_t c = 0; c < 6; ++c) {
      if (r < 3 && c < 3) {
        nonzero_inside += wg[r * 6 + c] != 0.0;
      } else {
        CHECK(wg[r * 6 + c] == 0.0);
      }
    }
  CHECK(nonzero_inside > 0);
  for (int64_t r = 3; r < 6; ++r) CHECK(dense.bias.grad_view()[r] == 0.0);
}

TEST_CASE("slimmable attention matches an explicit-slice reference") {
  for (auto [dim, heads] : std::vector<std::pair<int64_t, int64_t>>{{8, 1}, {8, 2}}) {
    Rng rng(23 + static_cast<uint64_t>(heads));
    SlimAttention<double> attn(dim, heads, rng, "attn");
    const double width = 0.5;
    const int64_t n = 2, t = 4;
    const int64_t d = active_count(dim, width);
    const int64_t i = attn.head_dim(width);
    const int64_t qkv = heads * i;

    Graph<double> g;
    auto x = gc::random_tensor({n, t, d}, rng, false);
    auto out = attn.forward(g, x, SlimContext{width, 1});

    // reference: slice matrices explicitly, then Eq. 1 step by step
    auto project = [&](const SlimDense<double>& l, int64_t rows, int64_t cols,
                       const std::vector<double>& in, int64_t in_dim) {
      std::vector<double> r(static_cast<size_t>(n * t * rows));
      for (int64_t b = 0; b < n * t; ++b)
        for (int64_t o = 0; o < rows; ++o) {
          double acc = l.bias.data()[o];
          for (int64_t c = 0; c < cols; ++c)
            acc += in[b * in_dim + c] * l.weight.data()[o * l.din_max() + c];
          r[b * rows + o] = acc;
        }
      return r;
    };
    std::vector<double> xin(x.values().begin(), x.values().end());
    auto q = project(attn.wq, qkv, d, xin, d);
    auto k = project(attn.wk, qkv, d, xin, d);
    auto v = project(attn.wv, qkv, d, xin, d);

    std::vector<double> ctxv(static_cast<size_t>(n * t * qkv), 0.0);
    for (int64_t b = 0; b < n; ++b)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t ti = 0; ti < t; ++ti) {
          std::vector<double> row(static_cast<size_t>(t));
          double mx = -1e300;
          for (int64_t s = 0; s < t; ++s) {
            double acc = 0;
            for (int64_t c = 0; c < i; ++c)
              acc += q[(b * t + ti) * qkv + h * i + c] * k[(b * t + s) * qkv + h * i + c];
            row[s] = acc / std::sqrt(static_cast<double>(i));
            mx = std::max(mx, row[s]);
          }
          double z = 0;
          for (int64_t s = 0; s < t; ++s) { row[s] = std::exp(row[s] - mx); z += row[s]; }
          double rowsum = 0;
          for (int64_t s = 0; s < t; ++s) { row[s] /= z; rowsum += row[s]; }
          CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-6));  // row-stochastic
          for (int64_t c = 0; c < i; ++c) {
            double acc = 0;
            for (int64_t s = 0; s < t; ++s)
              acc += row[s] * v[(b * t + s) * qkv + h * i + c];
            ctxv[(b * t + ti) * qkv + h * i + c] = acc;
          }
        }
    auto expect = project(attn.wo, d, qkv, ctxv, qkv);
    REQUIRE(out.size() == static_cast<int64_t>(expect.size()));
    for (size_t j = 0; j < expect.size(); ++j)
      CHECK(out.values()[j] == doctest::Approx(expect[j]).epsilon(1e-5));
  }
}

TEST_CASE("attention with a single token is the projected value row") {
  Rng rng(29);
  SlimAttention<double> attn(4, 1, rng, "attn");
  Graph<double> g;
  auto x = gc::random_tensor({1, 1, 4}, rng, false);
  auto out = attn.forward(g, x, SlimContext{1.0, 0});
  // softmax over one score is 1, so out = wo(v)
  auto x2 = ops::reshape(g, x, {1, 4});
  auto v = attn.wv.forward_sliced(g, x2, 4, 4);
  auto expect = attn.wo.forward_sliced(g, v, 4, 4);
  for (int64_t j = 0; j < 4; ++j)
    CHECK(out.values()[j] == doctest::Approx(expect.values()[j]));

  auto empty = Tensor<double>::zeros({1, 0, 4});
  CHECK_THROWS_AS(attn.forward(g, empty, SlimContext{1.0, 0}), ContractError);
}

TEST_CASE("switchable norm keeps per-width sets isolated") {
  WidthList wl(std::vector<double>{1.0, 0.5});
  SwitchableNorm<float> norm(NormKind::Batch, 8, wl, true, "bn");
  REQUIRE(norm.sets.size() == 2);
  CHECK(norm.sets[0].gamma.size() == 8);
  CHECK(norm.sets[1].gamma.size() == 4);

  auto snapshot = [&](int i) {
    std::vector<float> all = norm.sets[i].gamma.values();
    auto append = [&](const Tensor<float>& t) {
      all.insert(all.end(), t.values().begin(), t.values().end());
    };
    append(norm.sets[i].beta);
    append(norm.sets[i].running_mean);
    append(norm.sets[i].running_var);
    return all;
  };
  auto before = snapshot(1);

  Graph<float> g;
  Rng rng(31);
  for (int step = 0; step < 10; ++step) {
    auto x = Tensor<float>::zeros({2, 8, 3, 3});
    for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());
    (void)norm.forward(g, x, SlimContext{1.0, 0}, true);
  }
  CHECK(snapshot(1) == before);  // bitwise untouched

  // width-0.5 running stats move only after a width-0.5 pass
  auto x = Tensor<float>::full({2, 4, 3, 3}, 2.0f);
  (void)norm.forward(g, x, SlimContext{0.5, 1}, true);
  CHECK(snapshot(1) != before);
}

TEST_CASE("two widths with identical extents still use distinct sets") {
  WidthList wl(std::vector<double>{1.0, 0.5});
  SwitchableNorm<float> norm(NormKind::Layer, 6, wl, false, "ln");
  CHECK(norm.sets[0].gamma.size() == norm.sets[1].gamma.size());
  CHECK_FALSE(norm.sets[0].gamma.same_storage(norm.sets[1].gamma));
}

TEST_CASE("eval-mode batch norm depends only on its own width's stats") {
  WidthList wl(std::vector<double>{1.0, 0.5});
  SwitchableNorm<float> norm(NormKind::Batch, 4, wl, true, "bn");
  Graph<float> g;
  auto x = Tensor<float>::from({1, 2, 1, 1}, {0.5f, -1.25f});
  auto y1 = norm.forward(g, x, SlimContext{0.5, 1}, false);
  // perturb the other width's set
  norm.sets[0].running_mean.data()[0] = 42.0f;
  norm.sets[0].gamma.data()[1] = -3.0f;
  auto y2 = norm.forward(g, x, SlimContext{0.5, 1}, false);
  CHECK(y1.values() == y2.values());
}

TEST_CASE("extracted sub-networks reproduce the super-network exactly") {
  // CNN
  ModelSpec cs = preset_spec("cnn-desk");
  auto cnn = build_cnn<float>(cs, 5);
  // move the norm stats away from init so extraction has to copy them
  Graph<float> g;
  Rng rng(37);
  for (int step = 0; step < 3; ++step) {
    auto x = Tensor<float>::zeros({4, cs.frames, cs.mel_bins});
    for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());
    for (double w : cs.width_list.widths) (void)cnn.forward_at(g, x, w, true);
    g.clear();
  }
  for (double w : {1.0, 0.5, 0.25}) {
    auto sub = extract_subnetwork(cnn, w);
    for (int trial = 0; trial < 5; ++trial) {
      auto x = Tensor<float>::zeros({2, cs.frames, cs.mel_bins});
      for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());
      NoGradGuard<float> ng(g);
      auto ls = cnn.forward_at(g, x, w, false);
      auto le = sub.forward_at(g, x, 1.0, false);
      CHECK(ls.values() == le.values());  // max |delta| = 0
    }
  }

  // transformer
  ModelSpec ts;
  ts.kind = ModelSpec::Kind::Transformer;
  ts.name = "mini";
  ts.frames = 6;
  ts.mel_bins = 5;
  ts.num_classes = 3;
  ts.dim = 8;
  ts.mlp_dim = 12;
  ts.heads = 1;
  ts.layers = 2;
  ts.width_list = WidthList(std::vector<double>{1.0, 0.5});
  auto tf = build_transformer<float>(ts, 6);
  for (double w : {1.0, 0.5}) {
    auto sub = extract_subnetwork(tf, w);
    auto x = Tensor<float>::zeros({3, ts.frames, ts.mel_bins});
    for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());
    NoGradGuard<float> ng(g);
    auto ls = tf.forward_at(g, x, w, false);
    auto le = sub.forward_at(g, x, 1.0, false);
    CHECK(ls.values() == le.values());
  }

  CHECK_THROWS_AS(extract_subnetwork(tf, 0.33), ConfigError);
}

TEST_CASE("extracted parameter tensors match count_params") {
  ModelSpec cs = preset_spec("cnn-desk");
  auto cnn = build_cnn<float>(cs, 5);
  for (double w : cs.width_list.widths) {
    auto sub = extract_subnetwork(cnn, w);
    int64_t enumerated = sub.total_stored_params();
    CHECK(enumerated == count_params(cnn, w));
  }
}

TEST_CASE("switching width is stateless apart from norm statistics") {
  ModelSpec cs = preset_spec("cnn-desk");
  auto model = build_cnn<float>(cs, 8);
  Graph<float> g;
  NoGradGuard<float> ng(g);
  Rng rng(41);
  auto x = Tensor<float>::zeros({2, cs.frames, cs.mel_bins});
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());

  auto base = model.forward_at(g, x, 1.0, false);
  (void)model.forward_at(g, x, 0.5, false);
  auto again = model.forward_at(g, x, 1.0, false);
  CHECK(base.values() == again.values());
}

TEST_CASE("multiply scaling law for both-sides-slimmed layers") {
  ModelSpec cs = preset_spec("cnn-table1");
  auto model = build_cnn<float>(cs, 2);
  for (double w : {0.75, 0.5, 0.25}) {
    auto full = cost_breakdown(model, 1.0);
    auto slim = cost_breakdown(model, w);
    // conv2..conv5 slim both sides; multiplies(w)/multiplies(1) must equal
    // (ac(Cout,w)*ac(Cin,w))/(Cout*Cin) exactly (integer cross-product).
    for (size_t li = 1; li < 5; ++li) {
      const auto& st = model.cnn().stages[li].conv;
      int64_t co = st.cout_max(), ci = st.cin_max();
      int64_t aco = st.active_out(w), aci = st.active_in(w);
      const auto& frow = full[2 * li];
      const auto& srow = slim[2 * li];
      REQUIRE(frow.name == st.name);
      CHECK(srow.multiplies * co * ci == frow.multiplies * aco * aci);
    }
  }
}

TEST_SUITE_END();
