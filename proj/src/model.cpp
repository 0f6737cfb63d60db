#include "dolfin/model.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "dolfin/error.hpp"

namespace dolfin {
namespace {

constexpr double kLayerNormEps = 1e-6;

template <class S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

template <class S>
S silu(S x) {
  return x * sigmoid(x);
}

template <class S>
S silu_grad(S x) {
  const S s = sigmoid(x);
  return s * (S(1) + x * (S(1) - s));
}

// tanh approximation of GELU.
template <class S>
S gelu(S x) {
  const S k = S(0.7978845608028654);  // sqrt(2 / pi)
  const S inner = k * (x + S(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(inner));
}

template <class S>
S gelu_grad(S x) {
  const S k = S(0.7978845608028654);
  const S inner = k * (x + S(0.044715) * x * x * x);
  const S th = std::tanh(inner);
  const S d_inner = k * (S(1) + S(3) * S(0.044715) * x * x);
  return S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th * th) * d_inner;
}

template <class S>
Mat<S> linear(const Mat<S>& x, const ConstMatMap<S>& w, const ConstMatMap<S>& b) {
  Mat<S> y = x * w.transpose();
  y.rowwise() += b.row(0);
  return y;
}

template <class S>
void layer_norm_rows(const Mat<S>& x, Mat<S>& n, Vec<S>& rstd) {
  const auto cols = x.cols();
  n.resize(x.rows(), cols);
  rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mean = x.row(r).sum() / S(cols);
    const auto centered = (x.row(r).array() - mean).matrix();
    const S var = centered.squaredNorm() / S(cols);
    const S inv = S(1) / std::sqrt(var + S(kLayerNormEps));
    rstd(r) = inv;
    n.row(r) = centered * inv;
  }
}

// d(loss)/d(x) given d(loss)/d(n) for n = LayerNorm(x) without affine terms.
template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dn, const Mat<S>& n, const Vec<S>& rstd) {
  const S cols = S(n.cols());
  Mat<S> dx(n.rows(), n.cols());
  for (Eigen::Index r = 0; r < n.rows(); ++r) {
    const S mean_dn = dn.row(r).sum() / cols;
    const S mean_dn_n = dn.row(r).dot(n.row(r)) / cols;
    dx.row(r) = rstd(r) * (dn.row(r).array() - mean_dn - n.row(r).array() * mean_dn_n).matrix();
  }
  return dx;
}

// x * (1 + scale) + shift, with shift/scale broadcast over rows.
template <class S>
Mat<S> modulate(const Mat<S>& x, const Eigen::Ref<const Vec<S>>& shift,
                const Eigen::Ref<const Vec<S>>& scale) {
  Mat<S> y = x;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    y.row(r) = (x.row(r).array() * (S(1) + scale.transpose().array()) + shift.transpose().array()).matrix();
  }
  return y;
}

bool attends(int q, int k, int boundary) { return k < boundary || k <= q; }

// Masked multi-head attention of queries (rows q_offset.. of the sequence)
// over keys 0..keys.rows()-1. Returns concatenated head outputs and, when
// requested, the per-head probability matrices.
template <class S>
Mat<S> attention(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int heads, int q_offset,
                 int boundary, std::vector<Mat<S>>* probs_out) {
  const int hd = static_cast<int>(q.cols()) / heads;
  const S scale = S(1) / std::sqrt(S(hd));
  const int nq = static_cast<int>(q.rows());
  const int nk = static_cast<int>(k.rows());
  Mat<S> out(nq, q.cols());
  if (probs_out) probs_out->assign(static_cast<std::size_t>(heads), Mat<S>());
  for (int h = 0; h < heads; ++h) {
    Mat<S> scores = (q.middleCols(h * hd, hd) * k.middleCols(h * hd, hd).transpose()) * scale;
    for (int i = 0; i < nq; ++i) {
      const int qpos = q_offset + i;
      S mx = -std::numeric_limits<S>::infinity();
      for (int j = 0; j < nk; ++j) {
        if (attends(qpos, j, boundary)) mx = std::max(mx, scores(i, j));
      }
      S sum = 0;
      for (int j = 0; j < nk; ++j) {
        if (attends(qpos, j, boundary)) {
          scores(i, j) = std::exp(scores(i, j) - mx);
          sum += scores(i, j);
        } else {
          scores(i, j) = 0;
        }
      }
      scores.row(i) /= sum;
    }
    out.middleCols(h * hd, hd) = scores * v.middleCols(h * hd, hd);
    if (probs_out) (*probs_out)[static_cast<std::size_t>(h)] = std::move(scores);
  }
  return out;
}

template <class S>
void init_uniform(MatMap<S> m, double bound, std::mt19937_64& eng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(eng));
}

template <class S>
void init_normal(MatMap<S> m, double std, std::mt19937_64& eng) {
  std::normal_distribution<double> dist(0.0, std);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(eng));
}

int parse_int(const std::map<std::string, std::string>& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw Error(ErrorKind::parse, fmt::format("model key '{}' is not an integer: '{}'", key, it->second));
  }
}

bool parse_bool(const std::map<std::string, std::string>& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw Error(ErrorKind::parse, fmt::format("model key '{}' is not a boolean: '{}'", key, it->second));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and layout

void ModelConfig::validate() const {
  if (layers < 1) throw Error(ErrorKind::config, "layers must be >= 1");
  if (heads < 1) throw Error(ErrorKind::config, "heads must be >= 1");
  if (hidden < 2) throw Error(ErrorKind::config, "hidden must be >= 2");
  if (hidden % heads != 0) {
    throw Error(ErrorKind::config, fmt::format("hidden ({}) must be divisible by heads ({})", hidden, heads));
  }
  if (token_dim < 1) throw Error(ErrorKind::config, "token_dim must be >= 1");
  if (n_max < 1) throw Error(ErrorKind::config, "n_max must be >= 1");
  if (mlp_ratio < 1) throw Error(ErrorKind::config, "mlp_ratio must be >= 1");
  if (variance_head && ar_mode) {
    throw Error(ErrorKind::config, "the variance head is only supported in non-AR (DDPM) mode");
  }
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t h = hidden, d = token_dim, f = freq_dim(), p = positions();
  const std::size_t m = static_cast<std::size_t>(mlp_ratio) * h, o = out_dim();
  std::size_t n = (h * d + h) + p * h;
  if (ar_mode) n += 3 * h + h;
  n += (h * f + h) + (h * h + h);
  const std::size_t per_block =
      (6 * h * h + 6 * h) + (3 * h * h + 3 * h) + (h * h + h) + (m * h + m) + (h * m + h);
  n += static_cast<std::size_t>(layers) * per_block;
  n += (2 * h * h + 2 * h) + (o * h + o);
  return n;
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  return {
      {"layers", std::to_string(layers)},        {"heads", std::to_string(heads)},
      {"hidden", std::to_string(hidden)},        {"token_dim", std::to_string(token_dim)},
      {"n_max", std::to_string(n_max)},          {"mlp_ratio", std::to_string(mlp_ratio)},
      {"variance_head", variance_head ? "true" : "false"},
      {"ar_mode", ar_mode ? "true" : "false"},
  };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.layers = parse_int(kv, "layers", c.layers);
  c.heads = parse_int(kv, "heads", c.heads);
  c.hidden = parse_int(kv, "hidden", c.hidden);
  c.token_dim = parse_int(kv, "token_dim", c.token_dim);
  c.n_max = parse_int(kv, "n_max", c.n_max);
  c.mlp_ratio = parse_int(kv, "mlp_ratio", c.mlp_ratio);
  c.variance_head = parse_bool(kv, "variance_head", c.variance_head);
  c.ar_mode = parse_bool(kv, "ar_mode", c.ar_mode);
  c.validate();
  return c;
}

std::pair<SlotTable, DenoiserSlots> denoiser_layout(const ModelConfig& cfg) {
  cfg.validate();
  SlotTable t;
  DenoiserSlots s;
  const int h = cfg.hidden;
  const int m = cfg.mlp_ratio * h;
  s.in_w = t.add("input.weight", h, cfg.token_dim);
  s.in_b = t.add("input.bias", 1, h);
  s.pos = t.add("pos_embed", cfg.positions(), h);
  if (cfg.ar_mode) {
    s.segment_type = t.add("segment_embed", 3, h);
    s.start = t.add("start_token", 1, h);
  }
  s.t1_w = t.add("time.fc1.weight", h, cfg.freq_dim());
  s.t1_b = t.add("time.fc1.bias", 1, h);
  s.t2_w = t.add("time.fc2.weight", h, h);
  s.t2_b = t.add("time.fc2.bias", 1, h);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = fmt::format("blocks.{}.", l);
    BlockSlots b{};
    b.mod_w = t.add(p + "adaln.weight", 6 * h, h);
    b.mod_b = t.add(p + "adaln.bias", 1, 6 * h);
    b.qkv_w = t.add(p + "attn.qkv.weight", 3 * h, h);
    b.qkv_b = t.add(p + "attn.qkv.bias", 1, 3 * h);
    b.proj_w = t.add(p + "attn.proj.weight", h, h);
    b.proj_b = t.add(p + "attn.proj.bias", 1, h);
    b.fc1_w = t.add(p + "mlp.fc1.weight", m, h);
    b.fc1_b = t.add(p + "mlp.fc1.bias", 1, m);
    b.fc2_w = t.add(p + "mlp.fc2.weight", h, m);
    b.fc2_b = t.add(p + "mlp.fc2.bias", 1, h);
    s.blocks.push_back(b);
  }
  s.final_mod_w = t.add("final.adaln.weight", 2 * h, h);
  s.final_mod_b = t.add("final.adaln.bias", 1, 2 * h);
  s.head_w = t.add("head.weight", cfg.out_dim(), h);
  s.head_b = t.add("head.bias", 1, cfg.out_dim());
  return {std::move(t), std::move(s)};
}

template <class S>
DenoiserParams<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  auto [table, slots] = denoiser_layout(cfg);
  DenoiserParams<S> p{cfg, std::move(table), std::move(slots), {}};
  p.values.assign(p.table.total(), S(0));
  std::mt19937_64 eng(seed);
  auto xavier = [&](std::size_t slot) {
    const auto& ts = p.table[slot];
    init_uniform<S>(p.map(slot), std::sqrt(6.0 / (ts.rows + ts.cols)), eng);
  };
  xavier(p.slots.in_w);
  init_normal<S>(p.map(p.slots.pos), 0.02, eng);
  if (cfg.ar_mode) {
    init_normal<S>(p.map(p.slots.segment_type), 0.02, eng);
    init_normal<S>(p.map(p.slots.start), 0.02, eng);
  }
  init_normal<S>(p.map(p.slots.t1_w), 0.02, eng);
  init_normal<S>(p.map(p.slots.t2_w), 0.02, eng);
  for (const auto& b : p.slots.blocks) {
    xavier(b.qkv_w);
    xavier(b.proj_w);
    xavier(b.fc1_w);
    xavier(b.fc2_w);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Timestep conditioning

template <class S>
Vec<S> timestep_frequencies(int t, int dim) {
  const int half = dim / 2;
  Vec<S> f(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    const double arg = t * freq;
    f(k) = static_cast<S>(std::cos(arg));
    f(half + k) = static_cast<S>(std::sin(arg));
  }
  return f;
}

namespace {

template <class S>
struct TimeCond {
  Vec<S> freq, a1, s1, temb, c;
  std::vector<Vec<S>> mod;  // per block: shift1 scale1 gate1 shift2 scale2 gate2
  Vec<S> final_mod;         // shift scale
};

template <class S>
TimeCond<S> time_condition(const DenoiserParams<S>& p, int t) {
  TimeCond<S> tc;
  tc.freq = timestep_frequencies<S>(t, p.config.freq_dim());
  tc.a1 = p.map(p.slots.t1_w) * tc.freq + p.map(p.slots.t1_b).row(0).transpose();
  tc.s1 = tc.a1.unaryExpr([](S v) { return silu(v); });
  tc.temb = p.map(p.slots.t2_w) * tc.s1 + p.map(p.slots.t2_b).row(0).transpose();
  tc.c = tc.temb.unaryExpr([](S v) { return silu(v); });
  for (const auto& b : p.slots.blocks) {
    tc.mod.push_back(p.map(b.mod_w) * tc.c + p.map(b.mod_b).row(0).transpose());
  }
  tc.final_mod = p.map(p.slots.final_mod_w) * tc.c + p.map(p.slots.final_mod_b).row(0).transpose();
  return tc;
}

template <class S>
auto chunk(const Vec<S>& v, int index, int h) {
  return v.segment(static_cast<Eigen::Index>(index) * h, h);
}

}  // namespace

template <class S>
Vec<S> embed_timestep(const DenoiserParams<S>& params, int t) {
  return time_condition(params, t).temb;
}

// ---------------------------------------------------------------------------
// Sequence forward / backward

template <class S>
struct ForwardCache {
  struct Block {
    Mat<S> x_in, n1, m1, qkv, attn, o, x1, n2, m2, hpre, g, f;
    Vec<S> rstd1, rstd2;
    std::vector<Mat<S>> probs;
  };
  TimeCond<S> time;
  std::vector<Block> blocks;
  Mat<S> x_final, nf, mf;
  Vec<S> rstdf;
};

template <class S>
void ForwardCacheDeleter<S>::operator()(ForwardCache<S>* p) const {
  delete p;
}

namespace {

template <class S>
Mat<S> embed_sequence(const DenoiserParams<S>& p, const SequenceSpec<S>& spec) {
  const int len = spec.length();
  const int h = p.config.hidden;
  if (len > p.config.positions()) {
    throw Error(ErrorKind::shape, fmt::format("sequence of {} positions exceeds the {} learned positions",
                                              len, p.config.positions()));
  }
  if (spec.token_rows.cols() != p.config.token_dim) {
    throw Error(ErrorKind::shape, fmt::format("token rows have {} columns, model expects {}",
                                              spec.token_rows.cols(), p.config.token_dim));
  }
  const Mat<S> projected = linear<S>(spec.token_rows, p.map(p.slots.in_w), p.map(p.slots.in_b));
  Mat<S> x(len, h);
  const auto pos = p.map(p.slots.pos);
  for (int i = 0; i < len; ++i) {
    const int src = spec.source[static_cast<std::size_t>(i)];
    if (src >= 0) {
      x.row(i) = projected.row(src);
    } else {
      if (p.slots.start == DenoiserSlots::none) throw Error(ErrorKind::unsupported, "START token requires AR mode");
      x.row(i) = p.map(p.slots.start).row(0);
    }
    x.row(i) += pos.row(i);
    if (!spec.segment.empty()) x.row(i) += p.map(p.slots.segment_type).row(spec.segment[static_cast<std::size_t>(i)]);
  }
  return x;
}

}  // namespace

template <class S>
Mat<S> forward_sequence(const DenoiserParams<S>& p, const SequenceSpec<S>& spec,
                        ForwardCachePtr<S>* cache_out) {
  const ModelConfig& cfg = p.config;
  const int h = cfg.hidden;
  ForwardCachePtr<S> cache(new ForwardCache<S>());
  cache->time = time_condition(p, spec.t);
  const auto& tc = cache->time;
  const bool keep = cache_out != nullptr;

  Mat<S> x = embed_sequence(p, spec);
  for (std::size_t l = 0; l < p.slots.blocks.size(); ++l) {
    const BlockSlots& b = p.slots.blocks[l];
    const Vec<S>& mod = tc.mod[l];
    typename ForwardCache<S>::Block blk;
    layer_norm_rows(x, blk.n1, blk.rstd1);
    blk.m1 = modulate<S>(blk.n1, chunk(mod, 0, h), chunk(mod, 1, h));
    blk.qkv = linear<S>(blk.m1, p.map(b.qkv_w), p.map(b.qkv_b));
    blk.attn = attention<S>(blk.qkv.leftCols(h), blk.qkv.middleCols(h, h), blk.qkv.rightCols(h),
                            cfg.heads, 0, spec.boundary, keep ? &blk.probs : nullptr);
    blk.o = linear<S>(blk.attn, p.map(b.proj_w), p.map(b.proj_b));
    Mat<S> x1 = x;
    for (Eigen::Index r = 0; r < x1.rows(); ++r) {
      x1.row(r) += blk.o.row(r).cwiseProduct(chunk(mod, 2, h).transpose());
    }
    layer_norm_rows(x1, blk.n2, blk.rstd2);
    blk.m2 = modulate<S>(blk.n2, chunk(mod, 3, h), chunk(mod, 4, h));
    blk.hpre = linear<S>(blk.m2, p.map(b.fc1_w), p.map(b.fc1_b));
    blk.g = blk.hpre.unaryExpr([](S v) { return gelu(v); });
    blk.f = linear<S>(blk.g, p.map(b.fc2_w), p.map(b.fc2_b));
    Mat<S> x2 = x1;
    for (Eigen::Index r = 0; r < x2.rows(); ++r) {
      x2.row(r) += blk.f.row(r).cwiseProduct(chunk(mod, 5, h).transpose());
    }
    if (keep) {
      blk.x_in = std::move(x);
      blk.x1 = std::move(x1);
      cache->blocks.push_back(std::move(blk));
    }
    x = std::move(x2);
  }
  layer_norm_rows(x, cache->nf, cache->rstdf);
  cache->mf = modulate<S>(cache->nf, chunk(tc.final_mod, 0, h), chunk(tc.final_mod, 1, h));
  Mat<S> picked(static_cast<Eigen::Index>(spec.readout.size()), h);
  for (std::size_t i = 0; i < spec.readout.size(); ++i) picked.row(static_cast<Eigen::Index>(i)) = cache->mf.row(spec.readout[i]);
  Mat<S> out = linear<S>(picked, p.map(p.slots.head_w), p.map(p.slots.head_b));
  if (keep) {
    cache->x_final = std::move(x);
    *cache_out = std::move(cache);
  }
  return out;
}

template <class S>
void backward_sequence(const DenoiserParams<S>& p, const SequenceSpec<S>& spec,
                       const ForwardCache<S>& cache, const Mat<S>& d_out, std::vector<S>& grad) {
  const ModelConfig& cfg = p.config;
  const int h = cfg.hidden;
  const int hd = cfg.head_dim();
  const int len = spec.length();
  const auto& tc = cache.time;
  if (grad.size() != p.values.size()) grad.assign(p.values.size(), S(0));
  auto G = [&](std::size_t slot) { return p.table.map(grad, slot); };

  // Output head.
  Mat<S> picked(static_cast<Eigen::Index>(spec.readout.size()), h);
  for (std::size_t i = 0; i < spec.readout.size(); ++i) picked.row(static_cast<Eigen::Index>(i)) = cache.mf.row(spec.readout[i]);
  G(p.slots.head_w).noalias() += d_out.transpose() * picked;
  G(p.slots.head_b).row(0) += d_out.colwise().sum();
  const Mat<S> d_picked = d_out * p.map(p.slots.head_w);
  Mat<S> d_mf = Mat<S>::Zero(len, h);
  for (std::size_t i = 0; i < spec.readout.size(); ++i) d_mf.row(spec.readout[i]) += d_picked.row(static_cast<Eigen::Index>(i));

  Vec<S> dc = Vec<S>::Zero(h);

  // Final adaptive norm.
  {
    const auto scale = chunk(tc.final_mod, 1, h);
    Mat<S> d_nf = d_mf;
    for (Eigen::Index r = 0; r < len; ++r) d_nf.row(r) = d_mf.row(r).cwiseProduct((scale.array() + S(1)).matrix().transpose());
    Vec<S> d_mod(2 * h);
    d_mod.segment(0, h) = d_mf.colwise().sum().transpose();
    d_mod.segment(h, h) = d_mf.cwiseProduct(cache.nf).colwise().sum().transpose();
    G(p.slots.final_mod_w).noalias() += d_mod * tc.c.transpose();
    G(p.slots.final_mod_b).row(0) += d_mod.transpose();
    dc.noalias() += p.map(p.slots.final_mod_w).transpose() * d_mod;
    d_mf = layer_norm_backward<S>(d_nf, cache.nf, cache.rstdf);
  }
  Mat<S> dx = std::move(d_mf);

  for (int l = static_cast<int>(p.slots.blocks.size()) - 1; l >= 0; --l) {
    const BlockSlots& b = p.slots.blocks[static_cast<std::size_t>(l)];
    const auto& blk = cache.blocks[static_cast<std::size_t>(l)];
    const Vec<S>& mod = tc.mod[static_cast<std::size_t>(l)];
    Vec<S> d_mod = Vec<S>::Zero(6 * h);

    // x2 = x1 + f * gate2
    const Vec<S> gate2 = chunk(mod, 5, h);
    d_mod.segment(5 * h, h) = dx.cwiseProduct(blk.f).colwise().sum().transpose();
    Mat<S> d_f = dx;
    for (Eigen::Index r = 0; r < len; ++r) d_f.row(r) = dx.row(r).cwiseProduct(gate2.transpose());
    G(b.fc2_w).noalias() += d_f.transpose() * blk.g;
    G(b.fc2_b).row(0) += d_f.colwise().sum();
    Mat<S> d_h = d_f * p.map(b.fc2_w);
    d_h = d_h.cwiseProduct(blk.hpre.unaryExpr([](S v) { return gelu_grad(v); }));
    G(b.fc1_w).noalias() += d_h.transpose() * blk.m2;
    G(b.fc1_b).row(0) += d_h.colwise().sum();
    const Mat<S> d_m2 = d_h * p.map(b.fc1_w);
    d_mod.segment(3 * h, h) = d_m2.colwise().sum().transpose();
    d_mod.segment(4 * h, h) = d_m2.cwiseProduct(blk.n2).colwise().sum().transpose();
    Mat<S> d_n2 = d_m2;
    const Vec<S> scale2 = chunk(mod, 4, h);
    for (Eigen::Index r = 0; r < len; ++r) d_n2.row(r) = d_m2.row(r).cwiseProduct((scale2.array() + S(1)).matrix().transpose());
    Mat<S> d_x1 = dx + layer_norm_backward<S>(d_n2, blk.n2, blk.rstd2);

    // x1 = x + o * gate1
    const Vec<S> gate1 = chunk(mod, 2, h);
    d_mod.segment(2 * h, h) = d_x1.cwiseProduct(blk.o).colwise().sum().transpose();
    Mat<S> d_o = d_x1;
    for (Eigen::Index r = 0; r < len; ++r) d_o.row(r) = d_x1.row(r).cwiseProduct(gate1.transpose());
    G(b.proj_w).noalias() += d_o.transpose() * blk.attn;
    G(b.proj_b).row(0) += d_o.colwise().sum();
    const Mat<S> d_attn = d_o * p.map(b.proj_w);

    Mat<S> d_qkv = Mat<S>::Zero(len, 3 * h);
    const S scale = S(1) / std::sqrt(S(hd));
    for (int head = 0; head < cfg.heads; ++head) {
      const auto q = blk.qkv.middleCols(head * hd, hd);
      const auto k = blk.qkv.middleCols(h + head * hd, hd);
      const auto v = blk.qkv.middleCols(2 * h + head * hd, hd);
      const Mat<S>& prob = blk.probs[static_cast<std::size_t>(head)];
      const auto d_a = d_attn.middleCols(head * hd, hd);
      const Mat<S> d_p = d_a * v.transpose();
      d_qkv.middleCols(2 * h + head * hd, hd).noalias() += prob.transpose() * d_a;
      Mat<S> d_s(len, len);
      for (Eigen::Index r = 0; r < len; ++r) {
        const S dot = d_p.row(r).dot(prob.row(r));
        d_s.row(r) = prob.row(r).cwiseProduct((d_p.row(r).array() - dot).matrix());
      }
      d_s *= scale;
      d_qkv.middleCols(head * hd, hd).noalias() += d_s * k;
      d_qkv.middleCols(h + head * hd, hd).noalias() += d_s.transpose() * q;
    }
    G(b.qkv_w).noalias() += d_qkv.transpose() * blk.m1;
    G(b.qkv_b).row(0) += d_qkv.colwise().sum();
    const Mat<S> d_m1 = d_qkv * p.map(b.qkv_w);
    d_mod.segment(0, h) = d_m1.colwise().sum().transpose();
    d_mod.segment(h, h) = d_m1.cwiseProduct(blk.n1).colwise().sum().transpose();
    Mat<S> d_n1 = d_m1;
    const Vec<S> scale1 = chunk(mod, 1, h);
    for (Eigen::Index r = 0; r < len; ++r) d_n1.row(r) = d_m1.row(r).cwiseProduct((scale1.array() + S(1)).matrix().transpose());
    dx = d_x1 + layer_norm_backward<S>(d_n1, blk.n1, blk.rstd1);

    G(b.mod_w).noalias() += d_mod * tc.c.transpose();
    G(b.mod_b).row(0) += d_mod.transpose();
    dc.noalias() += p.map(b.mod_w).transpose() * d_mod;
  }

  // Embeddings.
  auto pos_grad = G(p.slots.pos);
  Mat<S> d_proj = Mat<S>::Zero(spec.token_rows.rows(), h);
  for (int i = 0; i < len; ++i) {
    pos_grad.row(i) += dx.row(i);
    const int src = spec.source[static_cast<std::size_t>(i)];
    if (src >= 0) {
      d_proj.row(src) += dx.row(i);
    } else {
      G(p.slots.start).row(0) += dx.row(i);
    }
    if (!spec.segment.empty()) G(p.slots.segment_type).row(spec.segment[static_cast<std::size_t>(i)]) += dx.row(i);
  }
  G(p.slots.in_w).noalias() += d_proj.transpose() * spec.token_rows;
  G(p.slots.in_b).row(0) += d_proj.colwise().sum();

  // Timestep MLP.
  const Vec<S> d_temb = dc.cwiseProduct(tc.temb.unaryExpr([](S v) { return silu_grad(v); }));
  G(p.slots.t2_w).noalias() += d_temb * tc.s1.transpose();
  G(p.slots.t2_b).row(0) += d_temb.transpose();
  const Vec<S> d_s1 = p.map(p.slots.t2_w).transpose() * d_temb;
  const Vec<S> d_a1 = d_s1.cwiseProduct(tc.a1.unaryExpr([](S v) { return silu_grad(v); }));
  G(p.slots.t1_w).noalias() += d_a1 * tc.freq.transpose();
  G(p.slots.t1_b).row(0) += d_a1.transpose();
}

template <class S>
SequenceSpec<S> nonar_sequence(const ModelConfig& cfg, const Mat<S>& xt, int t) {
  if (cfg.ar_mode) throw Error(ErrorKind::unsupported, "non-AR forward on an AR model");
  if (xt.rows() != cfg.n_max || xt.cols() != cfg.token_dim) {
    throw Error(ErrorKind::shape, fmt::format("expected {}x{} tokens, got {}x{}", cfg.n_max,
                                              cfg.token_dim, xt.rows(), xt.cols()));
  }
  SequenceSpec<S> spec;
  spec.token_rows = xt;
  spec.t = t;
  spec.boundary = cfg.n_max;
  for (int i = 0; i < cfg.n_max; ++i) {
    spec.source.push_back(i);
    spec.readout.push_back(i);
  }
  return spec;
}

namespace segment_kind {
constexpr int data = 0;
constexpr int start = 1;
constexpr int noise = 2;
}  // namespace segment_kind

template <class S>
SequenceSpec<S> ar_teacher_sequence(const ModelConfig& cfg, const Mat<S>& xt, const Mat<S>& noise, int t) {
  if (!cfg.ar_mode) throw Error(ErrorKind::unsupported, "AR forward on a non-AR model");
  const int n = cfg.n_max;
  if (xt.rows() != n || xt.cols() != cfg.token_dim) {
    throw Error(ErrorKind::shape, fmt::format("expected {}x{} tokens, got {}x{}", n, cfg.token_dim,
                                              xt.rows(), xt.cols()));
  }
  if (noise.rows() < n - 1 || noise.cols() != cfg.token_dim) {
    throw Error(ErrorKind::shape, "teacher-forced noise must provide at least n_max - 1 rows");
  }
  SequenceSpec<S> spec;
  spec.token_rows.resize(2 * n - 1, cfg.token_dim);
  spec.token_rows.topRows(n) = xt;
  if (n > 1) spec.token_rows.bottomRows(n - 1) = noise.topRows(n - 1);
  spec.t = t;
  spec.boundary = n + 1;
  for (int i = 0; i < n; ++i) {
    spec.source.push_back(i);
    spec.segment.push_back(segment_kind::data);
  }
  spec.source.push_back(-1);
  spec.segment.push_back(segment_kind::start);
  for (int j = 0; j + 1 < n; ++j) {
    spec.source.push_back(n + j);
    spec.segment.push_back(segment_kind::noise);
  }
  for (int i = 0; i < n; ++i) spec.readout.push_back(n + i);
  return spec;
}

template <class S>
VariancePrediction<S> forward_nonar(const DenoiserParams<S>& params, const std::vector<Mat<S>>& tokens,
                                    std::span<const int> t) {
  if (tokens.size() != t.size()) throw Error(ErrorKind::shape, "one timestep per sample is required");
  const int d = params.config.token_dim;
  VariancePrediction<S> out;
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    if (!tokens[b].allFinite()) throw Error(ErrorKind::numeric, "non-finite input tokens");
    const Mat<S> y = forward_sequence<S>(params, nonar_sequence<S>(params.config, tokens[b], t[b]), nullptr);
    out.eps_hat.push_back(y.leftCols(d));
    if (params.config.variance_head) out.var_hat.push_back(y.rightCols(d));
  }
  return out;
}

template <class S>
Mat<S> forward_ar_teacher_forced(const DenoiserParams<S>& params, const Mat<S>& tokens, const Mat<S>& noise,
                                 int t) {
  return forward_sequence<S>(params, ar_teacher_sequence<S>(params.config, tokens, noise, t), nullptr);
}

// ---------------------------------------------------------------------------
// Incremental AR inference

template <class S>
struct ArSession<S>::State {
  TimeCond<S> time;
  std::vector<Mat<S>> keys, values;  // per layer, capacity 2 * n_max rows
  int length = 0;                    // positions encoded so far
  Mat<S> last_final;                 // modulated final-norm row of the last position
};

template <class S>
ArSession<S>::ArSession(const DenoiserParams<S>& params) : params_(params), state_(new State()) {
  if (!params.config.ar_mode) throw Error(ErrorKind::unsupported, "ArSession needs an AR-mode model");
}

template <class S>
ArSession<S>::~ArSession() = default;

namespace {

// Runs `x` (rows at positions offset..) through every block, extending the
// per-layer key/value caches. Queries see all cached keys plus new keys
// allowed by the mask.
template <class S>
Mat<S> run_blocks_incremental(const DenoiserParams<S>& p, const TimeCond<S>& tc, Mat<S> x, int offset,
                              int boundary, std::vector<Mat<S>>& keys, std::vector<Mat<S>>& values) {
  const int h = p.config.hidden;
  const int rows = static_cast<int>(x.rows());
  for (std::size_t l = 0; l < p.slots.blocks.size(); ++l) {
    const BlockSlots& b = p.slots.blocks[l];
    const Vec<S>& mod = tc.mod[l];
    Mat<S> n1;
    Vec<S> rstd;
    layer_norm_rows(x, n1, rstd);
    const Mat<S> m1 = modulate<S>(n1, chunk(mod, 0, h), chunk(mod, 1, h));
    const Mat<S> qkv = linear<S>(m1, p.map(b.qkv_w), p.map(b.qkv_b));
    keys[l].middleRows(offset, rows) = qkv.middleCols(h, h);
    values[l].middleRows(offset, rows) = qkv.rightCols(h);
    const Mat<S> k = keys[l].topRows(offset + rows);
    const Mat<S> v = values[l].topRows(offset + rows);
    const Mat<S> attn = attention<S>(qkv.leftCols(h), k, v, p.config.heads, offset, boundary, nullptr);
    const Mat<S> o = linear<S>(attn, p.map(b.proj_w), p.map(b.proj_b));
    for (int r = 0; r < rows; ++r) x.row(r) += o.row(r).cwiseProduct(chunk(mod, 2, h).transpose());
    Mat<S> n2;
    layer_norm_rows(x, n2, rstd);
    const Mat<S> m2 = modulate<S>(n2, chunk(mod, 3, h), chunk(mod, 4, h));
    const Mat<S> g = linear<S>(m2, p.map(b.fc1_w), p.map(b.fc1_b)).unaryExpr([](S v) { return gelu(v); });
    const Mat<S> f = linear<S>(g, p.map(b.fc2_w), p.map(b.fc2_b));
    for (int r = 0; r < rows; ++r) x.row(r) += f.row(r).cwiseProduct(chunk(mod, 5, h).transpose());
  }
  return x;
}

template <class S>
Mat<S> final_modulated_last_row(const TimeCond<S>& tc, const Mat<S>& x, int h) {
  Mat<S> last = x.bottomRows(1);
  Mat<S> n;
  Vec<S> rstd;
  layer_norm_rows(last, n, rstd);
  return modulate<S>(n, chunk(tc.final_mod, 0, h), chunk(tc.final_mod, 1, h));
}

}  // namespace

template <class S>
void ArSession<S>::begin(const Mat<S>& tokens, int t) {
  const auto& p = params_;
  const int n = p.config.n_max;
  const int h = p.config.hidden;
  if (tokens.rows() != n || tokens.cols() != p.config.token_dim) {
    throw Error(ErrorKind::shape, fmt::format("expected {}x{} tokens, got {}x{}", n, p.config.token_dim,
                                              tokens.rows(), tokens.cols()));
  }
  State& st = *state_;
  st.time = time_condition(p, t);
  st.keys.assign(p.slots.blocks.size(), Mat<S>::Zero(2 * n, h));
  st.values.assign(p.slots.blocks.size(), Mat<S>::Zero(2 * n, h));
  SequenceSpec<S> spec;
  spec.token_rows = tokens;
  for (int i = 0; i < n; ++i) {
    spec.source.push_back(i);
    spec.segment.push_back(segment_kind::data);
  }
  spec.source.push_back(-1);
  spec.segment.push_back(segment_kind::start);
  Mat<S> x = embed_sequence(p, spec);
  x = run_blocks_incremental(p, st.time, std::move(x), 0, n + 1, st.keys, st.values);
  st.length = n + 1;
  st.last_final = final_modulated_last_row(st.time, x, h);
}

template <class S>
Mat<S> ArSession<S>::prediction() const {
  if (state_->length == 0) throw Error(ErrorKind::config, "ArSession::prediction before begin");
  return linear<S>(state_->last_final, params_.map(params_.slots.head_w), params_.map(params_.slots.head_b));
}

template <class S>
void ArSession<S>::append(const Mat<S>& noise_row) {
  const auto& p = params_;
  const int n = p.config.n_max;
  State& st = *state_;
  if (st.length == 0) throw Error(ErrorKind::config, "ArSession::append before begin");
  if (st.length >= 2 * n) throw Error(ErrorKind::range, "noise prefix already holds n_max - 1 tokens");
  if (noise_row.rows() != 1 || noise_row.cols() != p.config.token_dim) {
    throw Error(ErrorKind::shape, "append expects a single token row");
  }
  const int pos = st.length;
  Mat<S> x = linear<S>(noise_row, p.map(p.slots.in_w), p.map(p.slots.in_b));
  x.row(0) += p.map(p.slots.pos).row(pos);
  x.row(0) += p.map(p.slots.segment_type).row(segment_kind::noise);
  x = run_blocks_incremental(p, st.time, std::move(x), pos, n + 1, st.keys, st.values);
  st.length = pos + 1;
  st.last_final = final_modulated_last_row(st.time, x, p.config.hidden);
}

template <class S>
int ArSession<S>::prefix_length() const {
  return state_->length == 0 ? 0 : state_->length - (params_.config.n_max + 1);
}

template <class S>
Mat<S> forward_ar(const DenoiserParams<S>& params, const Mat<S>& tokens, const Mat<S>& noise_prefix, int t) {
  const int i = static_cast<int>(noise_prefix.rows());
  if (i < 0 || i >= params.config.n_max) {
    throw Error(ErrorKind::range, fmt::format("token index {} outside [0, {})", i, params.config.n_max));
  }
  ArSession<S> session(params);
  session.begin(tokens, t);
  for (int j = 0; j < i; ++j) session.append(noise_prefix.row(j));
  return session.prediction();
}

#define DOLFIN_INSTANTIATE(S)                                                                         \
  template DenoiserParams<S> init_params<S>(const ModelConfig&, std::uint64_t);                       \
  template Vec<S> timestep_frequencies<S>(int, int);                                                  \
  template Vec<S> embed_timestep<S>(const DenoiserParams<S>&, int);                                   \
  template VariancePrediction<S> forward_nonar<S>(const DenoiserParams<S>&, const std::vector<Mat<S>>&, \
                                                  std::span<const int>);                              \
  template Mat<S> forward_ar<S>(const DenoiserParams<S>&, const Mat<S>&, const Mat<S>&, int);         \
  template Mat<S> forward_ar_teacher_forced<S>(const DenoiserParams<S>&, const Mat<S>&, const Mat<S>&, \
                                               int);                                                  \
  template SequenceSpec<S> nonar_sequence<S>(const ModelConfig&, const Mat<S>&, int);                 \
  template SequenceSpec<S> ar_teacher_sequence<S>(const ModelConfig&, const Mat<S>&, const Mat<S>&, int); \
  template struct ForwardCacheDeleter<S>;                                                             \
  template Mat<S> forward_sequence<S>(const DenoiserParams<S>&, const SequenceSpec<S>&,               \
                                      ForwardCachePtr<S>*);                                           \
  template void backward_sequence<S>(const DenoiserParams<S>&, const SequenceSpec<S>&,                \
                                     const ForwardCache<S>&, const Mat<S>&, std::vector<S>&);         \
  template class ArSession<S>;

DOLFIN_INSTANTIATE(float)
DOLFIN_INSTANTIATE(double)

#undef DOLFIN_INSTANTIATE

}  // namespace dolfin
