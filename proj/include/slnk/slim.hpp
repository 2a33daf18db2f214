#pragma once

// Slimmable layer primitives: width bookkeeping, prefix slicing of weights,
// per-width switchable normalization, and slimmable self-attention.
//
// The active slice is always the leading block of channels/features, which
// is what makes the weights shared across widths: the weights used at a
// smaller width are a prefix of those used at any larger width.

#include <optional>
#include <string>

#include "slnk/ops.hpp"

namespace slnk {

// Ordered width multipliers, strictly descending, each in (0,1], starting
// at 1.0 so the full super-network is always executable.
struct WidthList {
  std::vector<double> widths;

  WidthList() = default;
  explicit WidthList(std::vector<double> w) : widths(std::move(w)) { validate(); }

  void validate() const {
    if (widths.empty()) throw ConfigError("width list must be non-empty");
    if (widths.front() != 1.0)
      throw ConfigError("width list must start at 1.0 (the full network)");
    for (size_t i = 0; i < widths.size(); ++i) {
      if (!(widths[i] > 0.0) || widths[i] > 1.0)
        throw ConfigError(concat("width ", widths[i], " outside (0,1]"));
      if (i > 0 && !(widths[i] < widths[i - 1]))
        throw ConfigError("width list must be strictly descending");
    }
  }

  size_t size() const { return widths.size(); }
  double operator[](size_t i) const { return widths[i]; }

  int index_of(double w) const {
    for (size_t i = 0; i < widths.size(); ++i)
      if (widths[i] == w) return static_cast<int>(i);
    std::string valid;
    for (double v : widths) valid += (valid.empty() ? "" : ", ") + std::to_string(v);
    throw ConfigError(concat("width ", w, " is not in the configured width list {",
                             valid, "}"));
  }

  // n evenly spaced widths in (0,1] including 1.0: [1, (n-1)/n, ..., 1/n].
  static WidthList evenly_spaced(int n) {
    if (n < 1) throw ConfigError("width count must be >= 1");
    std::vector<double> w(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      w[static_cast<size_t>(i)] = static_cast<double>(n - i) / static_cast<double>(n);
    return WidthList(std::move(w));
  }
};

// Active extent at a width: round-half-up, clamped to >= 1.
inline int64_t active_count(int64_t max_extent, double width) {
  if (max_extent < 1) throw ContractError("active_count needs max_extent >= 1");
  if (!(width > 0.0) || width > 1.0)
    throw ContractError(concat("width ", width, " outside (0,1]"));
  int64_t n = static_cast<int64_t>(std::floor(static_cast<double>(max_extent) * width + 0.5));
  return std::max<int64_t>(n, 1);
}

struct SlimContext {
  double active_width = 1.0;
  int width_index = 0;
};

namespace init {

template <typename T>
void fan_in_uniform(Tensor<T>& t, int64_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void truncated_normal(Tensor<T>& t, double sigma, Rng& rng) {
  for (int64_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<T>(rng.truncated_normal(sigma));
}

}  // namespace init

// ---------------------------------------------------------------------------
// SlimDense
// ---------------------------------------------------------------------------
template <typename T>
struct SlimDense {
  Tensor<T> weight;  // [Dout_max, Din_max]
  Tensor<T> bias;    // [Dout_max]
  bool slim_input = true;
  bool slim_output = true;
  std::string name;

  SlimDense() = default;
  SlimDense(int64_t din, int64_t dout, bool slim_in, bool slim_out, Rng& rng,
            std::string layer_name = "dense")
      : slim_input(slim_in), slim_output(slim_out), name(std::move(layer_name)) {
    weight = Tensor<T>::zeros({dout, din}, true);
    bias = Tensor<T>::zeros({dout}, true);
    init::fan_in_uniform(weight, din, rng);
    init::fan_in_uniform(bias, din, rng);
  }

  int64_t dout_max() const { return weight.dim(0); }
  int64_t din_max() const { return weight.dim(1); }
  int64_t active_out(double w) const {
    return slim_output ? active_count(dout_max(), w) : dout_max();
  }
  int64_t active_in(double w) const {
    return slim_input ? active_count(din_max(), w) : din_max();
  }

  // x: [rows, active_in]; explicit extents let the attention layer slim per
  // head rather than per block.
  Tensor<T> forward_sliced(Graph<T>& g, const Tensor<T>& x, int64_t o,
                           int64_t i) const {
    if (x.dim(x.ndim() - 1) != i)
      throw ShapeError(concat("layer '", name, "': input extent ",
                              x.dim(x.ndim() - 1), " != active ", i));
    Tensor<T> w = (o == dout_max() && i == din_max())
                      ? weight
                      : ops::slice_axes01(g, weight, o, i);
    Tensor<T> b = (o == dout_max()) ? bias : ops::slice_axis0(g, bias, o);
    return ops::affine(g, x, w, b);
  }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const SlimContext& ctx) const {
    return forward_sliced(g, x, active_out(ctx.active_width),
                          active_in(ctx.active_width));
  }

  // Standalone copy holding only the slice active at `width`.
  SlimDense extracted(double width) const {
    SlimDense out;
    out.name = name;
    out.slim_input = out.slim_output = true;  // full extents == active extents
    int64_t o = active_out(width), i = active_in(width);
    out.weight = Tensor<T>::zeros({o, i}, true);
    out.bias = Tensor<T>::zeros({o}, true);
    for (int64_t r = 0; r < o; ++r)
      for (int64_t c = 0; c < i; ++c)
        out.weight.data()[r * i + c] = weight.data()[r * din_max() + c];
    for (int64_t r = 0; r < o; ++r) out.bias.data()[r] = bias.data()[r];
    return out;
  }

  int64_t param_count(double width) const {
    return active_out(width) * active_in(width) + active_out(width);
  }

  template <typename F>
  void visit_params(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// ---------------------------------------------------------------------------
// SlimConv2d
// ---------------------------------------------------------------------------
template <typename T>
struct SlimConv2d {
  Tensor<T> weight;  // [Cout_max, Cin_max, kh, kw]
  Tensor<T> bias;    // [Cout_max]
  int64_t stride_h = 1, stride_w = 1;
  bool slim_input = true;
  bool slim_output = true;
  std::string name;

  SlimConv2d() = default;
  SlimConv2d(int64_t cin, int64_t cout, int64_t kh, int64_t kw, int64_t sh,
             int64_t sw, bool slim_in, bool slim_out, Rng& rng,
             std::string layer_name = "conv")
      : stride_h(sh), stride_w(sw), slim_input(slim_in), slim_output(slim_out),
        name(std::move(layer_name)) {
    weight = Tensor<T>::zeros({cout, cin, kh, kw}, true);
    bias = Tensor<T>::zeros({cout}, true);
    init::fan_in_uniform(weight, cin * kh * kw, rng);
    init::fan_in_uniform(bias, cin * kh * kw, rng);
  }

  int64_t cout_max() const { return weight.dim(0); }
  int64_t cin_max() const { return weight.dim(1); }
  int64_t kh() const { return weight.dim(2); }
  int64_t kw() const { return weight.dim(3); }
  int64_t active_out(double w) const {
    return slim_output ? active_count(cout_max(), w) : cout_max();
  }
  int64_t active_in(double w) const {
    return slim_input ? active_count(cin_max(), w) : cin_max();
  }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const SlimContext& ctx) const {
    int64_t o = active_out(ctx.active_width), i = active_in(ctx.active_width);
    if (x.dim(1) != i)
      throw ShapeError(concat("layer '", name, "': input has ", x.dim(1),
                              " channels, active slice expects ", i));
    Tensor<T> w = (o == cout_max() && i == cin_max())
                      ? weight
                      : ops::slice_axes01(g, weight, o, i);
    Tensor<T> b = (o == cout_max()) ? bias : ops::slice_axis0(g, bias, o);
    return ops::conv2d(g, x, w, b, stride_h, stride_w);
  }

  SlimConv2d extracted(double width) const {
    SlimConv2d out;
    out.name = name;
    out.stride_h = stride_h;
    out.stride_w = stride_w;
    int64_t o = active_out(width), i = active_in(width);
    int64_t kern = kh() * kw();
    out.weight = Tensor<T>::zeros({o, i, kh(), kw()}, true);
    out.bias = Tensor<T>::zeros({o}, true);
    for (int64_t r = 0; r < o; ++r)
      for (int64_t c = 0; c < i; ++c)
        std::memcpy(out.weight.data() + (r * i + c) * kern,
                    weight.data() + (r * cin_max() + c) * kern, sizeof(T) * kern);
    for (int64_t r = 0; r < o; ++r) out.bias.data()[r] = bias.data()[r];
    return out;
  }

  int64_t param_count(double width) const {
    return active_out(width) * active_in(width) * kh() * kw() + active_out(width);
  }

  template <typename F>
  void visit_params(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// ---------------------------------------------------------------------------
// SwitchableNorm: one private parameter set per configured width, each sized
// to that width's active channel count. Set i is read/updated only while
// width_index == i.
// ---------------------------------------------------------------------------
enum class NormKind { Batch, Layer };

template <typename T>
struct SwitchableNorm {
  struct Set {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;  // batch kind only
  };

  NormKind kind = NormKind::Batch;
  std::vector<Set> sets;
  T eps = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);
  std::string name;

  SwitchableNorm() = default;
  SwitchableNorm(NormKind k, int64_t c_max, const WidthList& widths,
                 bool slim_extent, std::string layer_name = "norm")
      : kind(k), name(std::move(layer_name)) {
    sets.reserve(widths.size());
    for (size_t i = 0; i < widths.size(); ++i) {
      int64_t c = slim_extent ? active_count(c_max, widths[i]) : c_max;
      Set s;
      s.gamma = Tensor<T>::full({c}, T(1), true);
      s.beta = Tensor<T>::zeros({c}, true);
      if (kind == NormKind::Batch) {
        s.running_mean = Tensor<T>::zeros({c});
        s.running_var = Tensor<T>::full({c}, T(1));
      }
      sets.push_back(std::move(s));
    }
  }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const SlimContext& ctx,
                    bool train) {
    Set& s = sets.at(static_cast<size_t>(ctx.width_index));
    int64_t extent = (kind == NormKind::Batch) ? x.dim(1) : x.dim(x.ndim() - 1);
    if (s.gamma.size() != extent)
      throw ConfigError(concat("norm '", name, "': width set ", ctx.width_index,
                               " has extent ", s.gamma.size(), ", input needs ",
                               extent));
    if (kind == NormKind::Batch)
      return ops::batch_norm(g, x, s.gamma, s.beta, s.running_mean, s.running_var,
                             train, eps, momentum);
    return ops::layer_norm(g, x, s.gamma, s.beta, eps);
  }

  // Single-set copy for the extracted sub-network.
  SwitchableNorm extracted(int width_index) const {
    SwitchableNorm out;
    out.kind = kind;
    out.eps = eps;
    out.momentum = momentum;
    out.name = name;
    const Set& src = sets.at(static_cast<size_t>(width_index));
    Set s;
    s.gamma = src.gamma.clone();
    s.beta = src.beta.clone();
    if (kind == NormKind::Batch) {
      s.running_mean = src.running_mean.clone();
      s.running_var = src.running_var.clone();
    }
    out.sets.push_back(std::move(s));
    return out;
  }

  int64_t param_count(int width_index) const {
    // gamma + beta of the active set; running statistics excluded
    return 2 * sets.at(static_cast<size_t>(width_index)).gamma.size();
  }

  template <typename F>
  void visit_params(const std::string& prefix, F&& f) {
    for (size_t i = 0; i < sets.size(); ++i) {
      f(concat(prefix, ".w", i, ".gamma"), sets[i].gamma);
      f(concat(prefix, ".w", i, ".beta"), sets[i].beta);
    }
  }

  template <typename F>
  void visit_state(const std::string& prefix, F&& f) {
    if (kind != NormKind::Batch) return;
    for (size_t i = 0; i < sets.size(); ++i) {
      f(concat(prefix, ".w", i, ".running_mean"), sets[i].running_mean);
      f(concat(prefix, ".w", i, ".running_var"), sets[i].running_var);
    }
  }
};

// ---------------------------------------------------------------------------
// SlimAttention (Eq. 1-3): Q, K, V are produced by slimmed projections with
// per-head feature dimension i = active_count(d_k, width); scores use the
// sliced dimension's 1/sqrt(i) scaling; the output projection returns to the
// active block dimension.
// ---------------------------------------------------------------------------
template <typename T>
struct SlimAttention {
  SlimDense<T> wq, wk, wv;  // [dim, dim], slim both sides
  SlimDense<T> wo;          // [dim, dim], slim both sides
  int64_t heads = 1;
  int64_t d_k = 0;  // full per-head dimension = dim / heads
  std::string name;

  SlimAttention() = default;
  SlimAttention(int64_t dim, int64_t n_heads, Rng& rng, std::string layer_name = "attn")
      : heads(n_heads), d_k(dim / n_heads), name(std::move(layer_name)) {
    if (dim % n_heads != 0)
      throw ConfigError(concat("attention '", name, "': heads ", n_heads,
                               " must divide dim ", dim));
    wq = SlimDense<T>(dim, dim, true, true, rng, name + ".wq");
    wk = SlimDense<T>(dim, dim, true, true, rng, name + ".wk");
    wv = SlimDense<T>(dim, dim, true, true, rng, name + ".wv");
    wo = SlimDense<T>(dim, dim, true, true, rng, name + ".wo");
  }

  int64_t head_dim(double width) const { return active_count(d_k, width); }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const SlimContext& ctx) const {
    if (x.ndim() != 3)
      throw ShapeError(concat("attention '", name, "' expects [N,T,D], got ",
                              shape_str(x.shape())));
    const int64_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
    if (t < 1)
      throw ContractError(concat("attention '", name, "' got an empty sequence"));
    const int64_t i = head_dim(ctx.active_width);
    const int64_t qkv = heads * i;

    Tensor<T> x2 = ops::reshape(g, x, {n * t, d});
    auto split_heads = [&](Tensor<T> y) {
      y = ops::reshape(g, y, {n, t, heads, i});
      y = ops::swap_axes_12(g, y);               // [N, h, T, i]
      return ops::reshape(g, y, {n * heads, t, i});
    };
    Tensor<T> q = split_heads(wq.forward_sliced(g, x2, qkv, d));
    Tensor<T> k = split_heads(wk.forward_sliced(g, x2, qkv, d));
    Tensor<T> v = split_heads(wv.forward_sliced(g, x2, qkv, d));

    Tensor<T> scores = ops::bmm_nt(g, q, k);
    scores = ops::scale(g, scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(i))));
    Tensor<T> att = ops::softmax_last(g, scores);
    Tensor<T> ctxv = ops::bmm_nn(g, att, v);     // [N*h, T, i]

    ctxv = ops::reshape(g, ctxv, {n, heads, t, i});
    ctxv = ops::swap_axes_12(g, ctxv);           // [N, T, h, i]
    ctxv = ops::reshape(g, ctxv, {n * t, qkv});
    Tensor<T> out = wo.forward_sliced(g, ctxv, d, qkv);
    return ops::reshape(g, out, {n, t, d});
  }

  SlimAttention extracted(double width) const {
    SlimAttention out;
    out.heads = heads;
    out.d_k = head_dim(width);
    out.name = name;
    const int64_t d = active_count(wq.din_max(), width);
    const int64_t qkv = heads * out.d_k;
    auto slice = [&](const SlimDense<T>& l, int64_t o, int64_t i) {
      SlimDense<T> e;
      e.name = l.name;
      e.weight = Tensor<T>::zeros({o, i}, true);
      e.bias = Tensor<T>::zeros({o}, true);
      for (int64_t r = 0; r < o; ++r)
        for (int64_t c = 0; c < i; ++c)
          e.weight.data()[r * i + c] = l.weight.data()[r * l.din_max() + c];
      for (int64_t r = 0; r < o; ++r) e.bias.data()[r] = l.bias.data()[r];
      return e;
    };
    out.wq = slice(wq, qkv, d);
    out.wk = slice(wk, qkv, d);
    out.wv = slice(wv, qkv, d);
    out.wo = slice(wo, d, qkv);
    return out;
  }

  int64_t param_count(double width) const {
    const int64_t d = active_count(wq.din_max(), width);
    const int64_t qkv = heads * head_dim(width);
    return 3 * (qkv * d + qkv) + (d * qkv + d);
  }

  template <typename F>
  void visit_params(const std::string& prefix, F&& f) {
    wq.visit_params(prefix + ".wq", f);
    wk.visit_params(prefix + ".wk", f);
    wv.visit_params(prefix + ".wv", f);
    wo.visit_params(prefix + ".wo", f);
  }
};

// ---------------------------------------------------------------------------
// Transformer block: input projection into the active dimension (keeps the
// residual operands the same size at every width), pre-norm attention and
// MLP, both with switchable LayerNorm.
// ---------------------------------------------------------------------------
template <typename T>
struct SlimTransformerBlock {
  SlimDense<T> input_proj;  // first block: full-width input, later: slimmed
  SwitchableNorm<T> norm1, norm2;
  SlimAttention<T> attn;
  SlimDense<T> fc1, fc2;
  std::string name;

  SlimTransformerBlock() = default;
  SlimTransformerBlock(int64_t input_dim, int64_t dim, int64_t mlp_dim, int64_t heads,
                       bool slim_block_input, const WidthList& widths, Rng& rng,
                       std::string block_name)
      : name(std::move(block_name)) {
    input_proj =
        SlimDense<T>(input_dim, dim, slim_block_input, true, rng, name + ".input_proj");
    norm1 = SwitchableNorm<T>(NormKind::Layer, dim, widths, true, name + ".norm1");
    norm2 = SwitchableNorm<T>(NormKind::Layer, dim, widths, true, name + ".norm2");
    attn = SlimAttention<T>(dim, heads, rng, name + ".attn");
    fc1 = SlimDense<T>(dim, mlp_dim, true, true, rng, name + ".fc1");
    fc2 = SlimDense<T>(mlp_dim, dim, true, true, rng, name + ".fc2");
  }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const SlimContext& ctx,
                    bool train) {
    const int64_t n = x.dim(0), t = x.dim(1);
    const int64_t d = input_proj.active_out(ctx.active_width);
    const int64_t din = input_proj.active_in(ctx.active_width);

    Tensor<T> y = ops::reshape(g, x, {n * t, din});
    y = input_proj.forward(g, y, ctx);
    y = ops::reshape(g, y, {n, t, d});

    Tensor<T> a = attn.forward(g, norm1.forward(g, y, ctx, train), ctx);
    Tensor<T> y2 = ops::add(g, y, a);

    Tensor<T> h = norm2.forward(g, y2, ctx, train);
    h = ops::reshape(g, h, {n * t, d});
    h = fc1.forward(g, h, ctx);
    h = ops::gelu(g, h);
    h = fc2.forward(g, h, ctx);
    h = ops::reshape(g, h, {n, t, d});
    return ops::add(g, y2, h);
  }

  SlimTransformerBlock extracted(double width, int width_index) const {
    SlimTransformerBlock out;
    out.name = name;
    out.input_proj = input_proj.extracted(width);
    out.norm1 = norm1.extracted(width_index);
    out.norm2 = norm2.extracted(width_index);
    out.attn = attn.extracted(width);
    out.fc1 = fc1.extracted(width);
    out.fc2 = fc2.extracted(width);
    return out;
  }

  int64_t param_count(double width, int width_index) const {
    return input_proj.param_count(width) + norm1.param_count(width_index) +
           norm2.param_count(width_index) + attn.param_count(width) +
           fc1.param_count(width) + fc2.param_count(width);
  }

  template <typename F>
  void visit_params(const std::string& prefix, F&& f) {
    input_proj.visit_params(prefix + ".input_proj", f);
    norm1.visit_params(prefix + ".norm1", f);
    norm2.visit_params(prefix + ".norm2", f);
    attn.visit_params(prefix + ".attn", f);
    fc1.visit_params(prefix + ".fc1", f);
    fc2.visit_params(prefix + ".fc2", f);
  }

  template <typename F>
  void visit_state(const std::string& prefix, F&& f) {
    norm1.visit_state(prefix + ".norm1", f);
    norm2.visit_state(prefix + ".norm2", f);
  }
};

}  // namespace slnk
