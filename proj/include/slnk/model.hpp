#pragma once

// Architecture builders for the two model families and a generic forward
// pass producing class logits. The classifier head never slims its output,
// so logits have num_classes columns at every width.

#include <variant>

#include "slnk/slim.hpp"

namespace slnk {

struct ConvRow {
  int64_t kh = 1, kw = 1;
  int64_t channels = 1;
  int64_t sh = 1, sw = 1;
  int64_t ph = 1, pw = 1;
};

struct ModelSpec {
  enum class Kind { Cnn, Transformer };
  Kind kind = Kind::Cnn;
  std::string name = "custom";

  // cnn
  std::vector<ConvRow> conv_rows;
  // transformer; embed_dim is the (never slimmed) embedding dimension and
  // defaults to dim. Extraction shrinks dim but keeps embed_dim, so exported
  // sub-networks rebuild with the right block-1 input extent.
  int64_t dim = 64, mlp_dim = 128, heads = 1, layers = 3;
  int64_t embed_dim = 0;  // 0 -> dim

  int64_t effective_embed_dim() const { return embed_dim > 0 ? embed_dim : dim; }

  int64_t frames = 76;
  int64_t mel_bins = 64;
  int64_t num_classes = 2;
  WidthList width_list{std::vector<double>{1.0}};

  std::string summary() const {
    std::string s = concat("kind=", kind == Kind::Cnn ? "cnn" : "transformer",
                           " frames=", frames, " mel_bins=", mel_bins,
                           " classes=", num_classes, " widths=");
    for (size_t i = 0; i < width_list.size(); ++i)
      s += concat(i ? "," : "", width_list[i]);
    if (kind == Kind::Cnn) {
      for (const auto& r : conv_rows)
        s += concat(" conv(", r.kh, ",", r.kw, ",c", r.channels, ",s", r.sh, ",",
                    r.sw, ",p", r.ph, ",", r.pw, ")");
    } else {
      s += concat(" dim=", dim, " mlp=", mlp_dim, " heads=", heads,
                  " layers=", layers, " embed=", effective_embed_dim());
    }
    return s;
  }
};

// Per-layer cost row for the profiler's breakdown.
struct LayerCost {
  std::string name;
  int64_t params = 0;
  int64_t multiplies = 0;
};

// ---------------------------------------------------------------------------
// CNN: conv stack with switchable BatchNorm + ReLU and per-row max pooling,
// then global average pooling into a slim-input classifier. The first conv
// only drops kernels (raw features in); intermediate convs drop kernels and
// shrink them; the classifier is the layer that is only "reduced in width".
// ---------------------------------------------------------------------------
template <typename T>
struct CnnModel {
  struct Stage {
    SlimConv2d<T> conv;
    SwitchableNorm<T> norm;
    int64_t ph = 1, pw = 1;
  };
  std::vector<Stage> stages;
  SlimDense<T> head;

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x_nchw, const SlimContext& ctx,
                    bool train) {
    Tensor<T> h = x_nchw;
    for (auto& st : stages) {
      h = st.conv.forward(g, h, ctx);
      h = st.norm.forward(g, h, ctx, train);
      h = ops::relu(g, h);
      if (st.ph > 1 || st.pw > 1) h = ops::max_pool2d(g, h, st.ph, st.pw);
    }
    h = ops::global_avg_pool(g, h);
    return head.forward(g, h, ctx);
  }
};

// ---------------------------------------------------------------------------
// Transformer: full-width frame embedding, class token and positional table;
// slimming starts at each block's input projection (block 1 projects from
// the full embedding dimension). Class-token readout through a switchable
// LayerNorm and a fixed-output classifier.
// ---------------------------------------------------------------------------
template <typename T>
struct TransformerModel {
  SlimDense<T> embed;  // mel_bins -> dim, not slimmed
  Tensor<T> pos;       // [frames+1, dim]
  Tensor<T> cls;       // [dim]
  std::vector<SlimTransformerBlock<T>> blocks;
  SwitchableNorm<T> final_norm;
  SlimDense<T> head;

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x_ntm, const SlimContext& ctx,
                    bool train) {
    const int64_t n = x_ntm.dim(0), t = x_ntm.dim(1), mel = x_ntm.dim(2);
    Tensor<T> tok = ops::reshape(g, x_ntm, {n * t, mel});
    tok = embed.forward(g, tok, ctx);  // full width
    tok = ops::reshape(g, tok, {n, t, embed.dout_max()});
    Tensor<T> seq = ops::prepend_token(g, tok, cls);
    seq = ops::add_rows(g, seq, pos);
    for (auto& b : blocks) seq = b.forward(g, seq, ctx, train);
    seq = final_norm.forward(g, seq, ctx, train);
    Tensor<T> pooled = ops::select_token(g, seq, 0);
    return head.forward(g, pooled, ctx);
  }
};

// ---------------------------------------------------------------------------
// SlimModel: the super-network plus its active-width context.
// ---------------------------------------------------------------------------
template <typename T>
class SlimModel {
 public:
  ModelSpec spec;
  std::variant<CnnModel<T>, TransformerModel<T>> net;
  SlimContext ctx;

  bool is_cnn() const { return std::holds_alternative<CnnModel<T>>(net); }
  CnnModel<T>& cnn() { return std::get<CnnModel<T>>(net); }
  const CnnModel<T>& cnn() const { return std::get<CnnModel<T>>(net); }
  TransformerModel<T>& transformer() { return std::get<TransformerModel<T>>(net); }
  const TransformerModel<T>& transformer() const {
    return std::get<TransformerModel<T>>(net);
  }

  void set_active_width(double width) {
    ctx.width_index = spec.width_list.index_of(width);
    ctx.active_width = width;
  }

  // batch: [N, frames, mel_bins] -> logits [N, num_classes]
  Tensor<T> forward(Graph<T>& g, const Tensor<T>& batch, bool train) {
    if (batch.ndim() != 3 || batch.dim(1) != spec.frames ||
        batch.dim(2) != spec.mel_bins)
      throw ShapeError(concat("model expects [N,", spec.frames, ",", spec.mel_bins,
                              "] input, got ", shape_str(batch.shape())));
    if (is_cnn()) {
      Tensor<T> x = ops::reshape(g, batch, {batch.dim(0), 1, spec.frames, spec.mel_bins});
      return cnn().forward(g, x, ctx, train);
    }
    return transformer().forward(g, batch, ctx, train);
  }

  Tensor<T> forward_at(Graph<T>& g, const Tensor<T>& batch, double width, bool train) {
    set_active_width(width);
    return forward(g, batch, train);
  }

  template <typename F>
  void visit_params(F&& f) {
    if (is_cnn()) {
      auto& m = cnn();
      for (size_t i = 0; i < m.stages.size(); ++i) {
        m.stages[i].conv.visit_params(concat("conv", i + 1), f);
        m.stages[i].norm.visit_params(concat("conv", i + 1, ".norm"), f);
      }
      m.head.visit_params("head", f);
    } else {
      auto& m = transformer();
      m.embed.visit_params("embed", f);
      f(std::string("pos"), m.pos);
      f(std::string("cls"), m.cls);
      for (size_t i = 0; i < m.blocks.size(); ++i)
        m.blocks[i].visit_params(concat("block", i + 1), f);
      m.final_norm.visit_params("final_norm", f);
      m.head.visit_params("head", f);
    }
  }

  // Non-trainable state (BatchNorm running statistics).
  template <typename F>
  void visit_state(F&& f) {
    if (is_cnn()) {
      auto& m = cnn();
      for (size_t i = 0; i < m.stages.size(); ++i)
        m.stages[i].norm.visit_state(concat("conv", i + 1, ".norm"), f);
    } else {
      auto& m = transformer();
      for (size_t i = 0; i < m.blocks.size(); ++i)
        m.blocks[i].visit_state(concat("block", i + 1), f);
      m.final_norm.visit_state("final_norm", f);
    }
  }

  void zero_grads() {
    visit_params([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }

  int64_t total_stored_params() {
    int64_t n = 0;
    visit_params([&](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
  }
};

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

template <typename T>
SlimModel<T> build_cnn(const ModelSpec& spec, uint64_t seed) {
  if (spec.kind != ModelSpec::Kind::Cnn)
    throw ConfigError("build_cnn called with a non-cnn spec");
  if (spec.conv_rows.empty()) throw ConfigError("cnn spec has no conv rows");
  spec.width_list.validate();

  Rng rng(seed);
  SlimModel<T> model;
  model.spec = spec;
  CnnModel<T> net;

  int64_t h = spec.frames, w = spec.mel_bins, cin = 1;
  for (size_t i = 0; i < spec.conv_rows.size(); ++i) {
    const ConvRow& r = spec.conv_rows[i];
    const std::string lname = concat("conv", i + 1);
    if (r.kh > h || r.kw > w)
      throw ConfigError(concat(lname, ": kernel ", r.kh, "x", r.kw,
                               " exceeds incoming spatial dims ", h, "x", w));
    if (r.channels < 1 || r.sh < 1 || r.sw < 1 || r.ph < 1 || r.pw < 1)
      throw ConfigError(concat(lname, ": extents must be positive"));
    typename CnnModel<T>::Stage st;
    bool slim_in = i > 0;  // first layer reads raw features
    st.conv = SlimConv2d<T>(cin, r.channels, r.kh, r.kw, r.sh, r.sw, slim_in,
                            true, rng, lname);
    st.norm = SwitchableNorm<T>(NormKind::Batch, r.channels, spec.width_list,
                                true, lname + ".norm");
    st.ph = r.ph;
    st.pw = r.pw;
    net.stages.push_back(std::move(st));
    h = (h - r.kh) / r.sh + 1;
    w = (w - r.kw) / r.sw + 1;
    h /= r.ph;
    w /= r.pw;
    if (h < 1 || w < 1)
      throw ConfigError(concat(lname, ": pooling ", r.ph, "x", r.pw,
                               " collapses the remaining ", h * r.ph, "x",
                               w * r.pw, " map"));
    cin = r.channels;
  }
  net.head = SlimDense<T>(cin, spec.num_classes, true, false, rng, "head");
  model.net = std::move(net);
  model.set_active_width(spec.width_list[0]);
  return model;
}

template <typename T>
SlimModel<T> build_transformer(const ModelSpec& spec, uint64_t seed) {
  if (spec.kind != ModelSpec::Kind::Transformer)
    throw ConfigError("build_transformer called with a non-transformer spec");
  spec.width_list.validate();
  if (spec.dim < 1 || spec.mlp_dim < 1 || spec.heads < 1 || spec.layers < 0)
    throw ConfigError("transformer extents must be positive");
  if (spec.dim % spec.heads != 0)
    throw ConfigError(concat("heads ", spec.heads, " must divide dim ", spec.dim));
  for (size_t i = 0; i < spec.width_list.size(); ++i) {
    int64_t d = active_count(spec.dim, spec.width_list[i]);
    if (d % spec.heads != 0)
      throw ConfigError(concat("heads ", spec.heads, " does not divide the active dim ",
                               d, " at width ", spec.width_list[i]));
  }

  Rng rng(seed);
  SlimModel<T> model;
  model.spec = spec;
  TransformerModel<T> net;

  const int64_t embed_dim = spec.effective_embed_dim();
  net.embed = SlimDense<T>(spec.mel_bins, embed_dim, false, false, rng, "embed");
  net.pos = Tensor<T>::zeros({spec.frames + 1, embed_dim}, true);
  net.cls = Tensor<T>::zeros({embed_dim}, true);
  init::truncated_normal(net.pos, 0.02, rng);
  init::truncated_normal(net.cls, 0.02, rng);
  for (int64_t i = 0; i < spec.layers; ++i)
    net.blocks.emplace_back(i == 0 ? embed_dim : spec.dim, spec.dim, spec.mlp_dim,
                            spec.heads, /*slim_block_input=*/i > 0,
                            spec.width_list, rng, concat("block", i + 1));
  // with no blocks nothing ever slims, so the readout stays at embed_dim
  const bool slims = spec.layers > 0;
  net.final_norm = SwitchableNorm<T>(NormKind::Layer, slims ? spec.dim : embed_dim,
                                     spec.width_list, slims, "final_norm");
  net.head = SlimDense<T>(slims ? spec.dim : embed_dim, spec.num_classes, slims,
                          false, rng, "head");
  model.net = std::move(net);
  model.set_active_width(spec.width_list[0]);
  return model;
}

template <typename T>
SlimModel<T> build_model(const ModelSpec& spec, uint64_t seed) {
  return spec.kind == ModelSpec::Kind::Cnn ? build_cnn<T>(spec, seed)
                                           : build_transformer<T>(spec, seed);
}

// ---------------------------------------------------------------------------
// Per-layer cost accounting (deployment view: the extracted sub-network).
// Multiplies count weight-bearing products for one example; norm, softmax,
// activation and pooling arithmetic is excluded.
// ---------------------------------------------------------------------------
template <typename T>
std::vector<LayerCost> cost_breakdown(const SlimModel<T>& model, double width) {
  const ModelSpec& spec = model.spec;
  int widx = spec.width_list.index_of(width);
  std::vector<LayerCost> rows;

  if (model.is_cnn()) {
    const auto& m = model.cnn();
    int64_t h = spec.frames, w = spec.mel_bins;
    for (size_t i = 0; i < m.stages.size(); ++i) {
      const auto& st = m.stages[i];
      int64_t ci = st.conv.active_in(width), co = st.conv.active_out(width);
      int64_t oh = (h - st.conv.kh()) / st.conv.stride_h + 1;
      int64_t ow = (w - st.conv.kw()) / st.conv.stride_w + 1;
      rows.push_back({st.conv.name, st.conv.param_count(width),
                      oh * ow * st.conv.kh() * st.conv.kw() * ci * co});
      rows.push_back({st.norm.name, st.norm.param_count(widx), 0});
      h = oh / st.ph;
      w = ow / st.pw;
    }
    rows.push_back({"head", m.head.param_count(width),
                    m.head.active_in(width) * m.head.active_out(width)});
  } else {
    const auto& m = model.transformer();
    const int64_t t = spec.frames;
    const int64_t tp = t + 1;  // with class token
    rows.push_back({"embed", m.embed.dout_max() * m.embed.din_max() + m.embed.dout_max(),
                    t * m.embed.din_max() * m.embed.dout_max()});
    rows.push_back({"pos", m.pos.size(), 0});
    rows.push_back({"cls", m.cls.size(), 0});
    for (const auto& b : m.blocks) {
      int64_t din = b.input_proj.active_in(width);
      int64_t d = b.input_proj.active_out(width);
      int64_t mdim = b.fc1.active_out(width);
      int64_t qkv = b.attn.heads * b.attn.head_dim(width);
      rows.push_back({b.input_proj.name, b.input_proj.param_count(width), tp * din * d});
      rows.push_back({b.norm1.name, b.norm1.param_count(widx), 0});
      rows.push_back({b.attn.name, b.attn.param_count(width),
                      3 * tp * d * qkv        // Q,K,V projections
                          + 2 * tp * tp * qkv  // scores and context (Eq. 1 at dim i)
                          + tp * qkv * d});    // output projection
      rows.push_back({b.norm2.name, b.norm2.param_count(widx), 0});
      rows.push_back({b.fc1.name, b.fc1.param_count(width), tp * d * mdim});
      rows.push_back({b.fc2.name, b.fc2.param_count(width), tp * mdim * d});
    }
    rows.push_back({"final_norm", m.final_norm.param_count(widx), 0});
    rows.push_back({"head", m.head.param_count(width),
                    m.head.active_in(width) * m.head.active_out(width)});
  }
  return rows;
}

template <typename T>
int64_t count_params(const SlimModel<T>& model, double width) {
  int64_t n = 0;
  for (const auto& r : cost_breakdown(model, width)) n += r.params;
  return n;
}

template <typename T>
int64_t count_multiplies(const SlimModel<T>& model, double width) {
  int64_t n = 0;
  for (const auto& r : cost_breakdown(model, width)) n += r.multiplies;
  return n;
}

// ---------------------------------------------------------------------------
// Sub-network extraction: copies the active slices and the width's private
// norm sets into a standalone single-width model.
// ---------------------------------------------------------------------------
template <typename T>
SlimModel<T> extract_subnetwork(const SlimModel<T>& model, double width) {
  const ModelSpec& spec = model.spec;
  int widx = spec.width_list.index_of(width);

  SlimModel<T> out;
  out.spec = spec;
  out.spec.name = concat(spec.name, "@", width);
  out.spec.width_list = WidthList(std::vector<double>{1.0});

  if (model.is_cnn()) {
    const auto& m = model.cnn();
    CnnModel<T> net;
    out.spec.conv_rows.clear();
    for (const auto& st : m.stages) {
      typename CnnModel<T>::Stage e;
      e.conv = st.conv.extracted(width);
      e.norm = st.norm.extracted(widx);
      e.ph = st.ph;
      e.pw = st.pw;
      ConvRow row{st.conv.kh(), st.conv.kw(), e.conv.cout_max(), st.conv.stride_h,
                  st.conv.stride_w, st.ph, st.pw};
      out.spec.conv_rows.push_back(row);
      net.stages.push_back(std::move(e));
    }
    net.head = m.head.extracted(width);
    net.head.slim_output = false;
    out.net = std::move(net);
  } else {
    const auto& m = model.transformer();
    TransformerModel<T> net;
    net.embed = m.embed.extracted(1.0);  // embedding is not slimmed
    net.embed.slim_input = net.embed.slim_output = false;
    net.pos = m.pos.clone();
    net.cls = m.cls.clone();
    for (size_t i = 0; i < m.blocks.size(); ++i) {
      net.blocks.push_back(m.blocks[i].extracted(width, widx));
      if (i == 0) net.blocks.back().input_proj.slim_input = false;
    }
    net.final_norm = m.final_norm.extracted(widx);
    net.head = m.head.extracted(width);
    net.head.slim_output = false;
    out.spec.embed_dim = spec.effective_embed_dim();
    if (spec.layers > 0) {
      out.spec.dim = active_count(spec.dim, width);
      out.spec.mlp_dim = active_count(spec.mlp_dim, width);
    }
    out.net = std::move(net);
  }
  out.set_active_width(1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Presets (Table-style architectures plus a small desk-scale trainer).
// ---------------------------------------------------------------------------
inline ModelSpec preset_spec(const std::string& name) {
  ModelSpec s;
  s.name = name;
  s.width_list = WidthList(std::vector<double>{1.0, 0.75, 0.5, 0.25});
  if (name == "cnn-table1") {
    s.kind = ModelSpec::Kind::Cnn;
    s.frames = 76;
    s.mel_bins = 64;
    s.num_classes = 35;
    s.conv_rows = {{5, 4, 32, 1, 2, 2, 1},
                   {3, 4, 32, 1, 3, 2, 1},
                   {4, 4, 40, 1, 2, 2, 1},
                   {7, 4, 128, 1, 1, 1, 1},
                   {1, 1, 160, 1, 1, 1, 1}};
  } else if (name == "transformer-inhouse") {
    s.kind = ModelSpec::Kind::Transformer;
    s.frames = 182;
    s.mel_bins = 64;
    s.num_classes = 2;
    s.dim = 64;
    s.mlp_dim = 128;
    s.heads = 1;
    s.layers = 3;
  } else if (name == "transformer-gsc") {
    s.kind = ModelSpec::Kind::Transformer;
    s.frames = 98;
    s.mel_bins = 64;
    s.num_classes = 35;
    s.dim = 64;
    s.mlp_dim = 64;
    s.heads = 1;
    s.layers = 2;
  } else if (name == "cnn-desk") {
    s.kind = ModelSpec::Kind::Cnn;
    s.frames = 76;
    s.mel_bins = 20;
    s.num_classes = 4;
    s.conv_rows = {{5, 4, 12, 1, 2, 2, 1},
                   {3, 4, 16, 1, 2, 2, 1},
                   {4, 3, 24, 1, 1, 2, 1}};
  } else {
    throw ConfigError(concat("unknown model preset '", name, "'"));
  }
  return s;
}

}  // namespace slnk
