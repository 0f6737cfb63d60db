// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "dolfin/adapter.hpp"
#include "dolfin/cli.hpp"
#include "dolfin/data_io.hpp"
#include "dolfin/features.hpp"
#include "dolfin/fs_util.hpp"
#include "dolfin/hungarian.hpp"
#include "dolfin/layout.hpp"
#include "dolfin/metrics.hpp"
#include "dolfin/sampler.hpp"
#include "dolfin/schedule.hpp"
#include "dolfin/trainer.hpp"
#include "test_util.hpp"

using namespace dolfin;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr int kCodecTrials = 1000;
constexpr double kCodecSeconds = 5.0;
constexpr int kForwardDraws = 100000;
constexpr double kMeanStdErrors = 4.0;
constexpr double kVarianceRelTol = 0.05;
constexpr double kForwardSeconds = 30.0;
constexpr int kInversionTrials = 100;
constexpr double kInversionTol = 1e-4;
constexpr double kInversionSeconds = 30.0;
constexpr int kGradParams = 500;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradFloor = 1e-6;
constexpr double kGradSeconds = 300.0;
constexpr double kOverfitLoss = 0.05;
constexpr int kOverfitWindow = 100;
constexpr std::int64_t kNonArStepBudget = 2000;
constexpr std::int64_t kArStepBudget = 5000;
constexpr double kMaxAlignment = 0.5;
constexpr double kMaxOverlap = 5.0;
constexpr double kOverfitSeconds = 1800.0;
constexpr int kConditionSamples = 256;
constexpr double kMetricTol = 1e-9;
constexpr int kAblationSeeds = 5;
constexpr int kAblationAgree = 4;
constexpr std::int64_t kAblationSteps = 5000;
constexpr int kAblationLatent = 8;

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dolfin_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(std::vector<std::string> args, std::string* captured = nullptr) {
  args.insert(args.begin(), "dolfin");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (captured) *captured = out.str() + err.str();
  if (code != 0) std::cerr << err.str();
  return code;
}

Layout decode(const Matd& tokens, const DatasetConfig& cfg) {
  TokenMatrix m(static_cast<int>(tokens.rows()), TokenMode::layout);
  m.rows = tokens;
  return detokenize_layout(m, cfg);
}

// ---------------------------------------------------------------- 1

Outcome codec_suite() {
  const auto t0 = Clock::now();
  Rng rng(101);
  DatasetConfig cfg;
  cfg.n_max = 16;
  cfg.num_categories = 255;
  cfg.h_max = 1000;
  cfg.w_max = 700;
  int layout_fail = 0;
  for (int trial = 0; trial < kCodecTrials; ++trial) {
    Layout l;
    l.H = 1 + rng.uniform() * 999;
    l.W = 1 + rng.uniform() * 699;
    const int n = static_cast<int>(rng.below(17));
    for (int i = 0; i < n; ++i) {
      BoundingBox b;
      b.w = rng.uniform() * l.W;
      b.h = rng.uniform() * l.H;
      b.x = rng.uniform() * (l.W - b.w);
      b.y = rng.uniform() * (l.H - b.h);
      b.c = 1 + static_cast<int>(rng.below(255));
      l.boxes.push_back(b);
    }
    const Layout q = quantize(l, cfg);
    if (!(detokenize_layout(tokenize_layout(q, cfg), cfg) == q)) ++layout_fail;
  }
  DatasetConfig seg;
  seg.mode = TokenMode::segment;
  seg.n_max = 16;
  int segment_fail = 0;
  for (int trial = 0; trial < kCodecTrials; ++trial) {
    SegmentSet s(rng.below(17));
    for (auto& v : s) v = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const SegmentSet q = quantize(s, seg);
    if (!(detokenize_segments(tokenize_segments(q, seg), seg) == q)) ++segment_fail;
  }
  std::set<CategoryCode> codes;
  int category_fail = 0;
  for (int c = 0; c <= 255; ++c) {
    const CategoryCode code = encode_category(c);
    codes.insert(code);
    if (decode_category(code) != c) ++category_fail;
  }
  const double secs = seconds_since(t0);
  return {layout_fail == 0 && segment_fail == 0 && category_fail == 0 && codes.size() == 256 && secs < kCodecSeconds,
          fmt::format("layout mismatches {}/{}, segment mismatches {}/{}, category mismatches {}, distinct codes {}, {:.2f}s",
                      layout_fail, kCodecTrials, segment_fail, kCodecTrials, category_fail, codes.size(), secs)};
}

// ---------------------------------------------------------------- 2

Outcome forward_statistics() {
  const auto t0 = Clock::now();
  const Schedule s = build_schedule(1000);
  Rng rng(202);
  const Matd x0 = standard_normal(2, kTokenDim, rng).cwiseMax(-1.0).cwiseMin(1.0);
  double worst_mean = 0.0, worst_var = 0.0;
  for (int t : {0, 10, 250, 600, 999}) {
    Matd sum = Matd::Zero(x0.rows(), x0.cols());
    Matd sq = sum;
    for (int d = 0; d < kForwardDraws; ++d) {
      const Matd x = q_sample(x0, t, standard_normal(2, kTokenDim, rng), s);
      sum += x;
      sq += x.cwiseProduct(x);
    }
    const double expected_var = 1.0 - s.alpha_bar[static_cast<std::size_t>(t)];
    const double se = std::sqrt(expected_var / kForwardDraws);
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
      const double mean = sum.data()[i] / kForwardDraws;
      const double var = sq.data()[i] / kForwardDraws - mean * mean;
      worst_mean = std::max(worst_mean, std::abs(mean - std::sqrt(s.alpha_bar[static_cast<std::size_t>(t)]) * x0.data()[i]) / se);
      worst_var = std::max(worst_var, std::abs(var / expected_var - 1.0));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_mean < kMeanStdErrors && worst_var < kVarianceRelTol && secs < kForwardSeconds,
          fmt::format("worst mean deviation {:.2f} SE, worst variance error {:.2f}%, {:.1f}s", worst_mean,
                      100 * worst_var, secs)};
}

// ---------------------------------------------------------------- 3

Outcome reverse_inversion() {
  const auto t0 = Clock::now();
  const Schedule s = build_schedule(100);
  Rng rng(303);
  double worst = 0.0;
  for (int trial = 0; trial < kInversionTrials; ++trial) {
    const Matd x0 = standard_normal(8, kTokenDim, rng).cwiseMax(-1.0).cwiseMin(1.0);
    const Matd eps = standard_normal(8, kTokenDim, rng);
    const EpsPredictor oracle = [&eps](const Matd&, int) { return EpsPrediction{eps, std::nullopt}; };
    ReverseOptions o;
    o.kind = ReverseKind::ddim;
    o.eta = 0.0;
    const Matd out = run_reverse(oracle, s, q_sample(x0, s.T - 1, eps, s), nullptr, rng, o);
    worst = std::max(worst, (out - x0).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  return {worst < kInversionTol && secs < kInversionSeconds,
          fmt::format("max abs error {:.3g} over {} matrices, {:.2f}s", worst, kInversionTrials, secs)};
}

// ---------------------------------------------------------------- 4

Outcome gradient_check() {
  const auto t0 = Clock::now();
  const Schedule sched = build_schedule(100);
  double worst = 0.0;
  std::size_t checked = 0;
  std::string per_variant;
  for (bool ar : {false, true}) {
    const ModelConfig cfg = dolfin::testing::tiny_config(ar);
    auto p = dolfin::testing::random_params<double>(cfg, 404);
    Rng rng(405);
    std::vector<Matd> x0;
    for (int b = 0; b < 2; ++b) x0.push_back(standard_normal(cfg.n_max, kTokenDim, rng).cwiseMax(-1.0).cwiseMin(1.0));
    const NoisyBatch batch = draw_noisy_batch(x0, sched, rng);
    const Variant v = ar ? Variant::ar : Variant::nonar;
    std::vector<double> grad, scratch_grad;
    loss_and_gradient<double>(p, sched, batch, v, grad);
    std::vector<std::size_t> order(p.values.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    order.resize(std::min<std::size_t>(order.size(), kGradParams));
    double variant_worst = 0.0;
    for (std::size_t idx : order) {
      const double keep = p.values[idx];
      const double h = 1e-5;
      p.values[idx] = keep + h;
      const double up = loss_and_gradient<double>(p, sched, batch, v, scratch_grad).loss;
      p.values[idx] = keep - h;
      const double down = loss_and_gradient<double>(p, sched, batch, v, scratch_grad).loss;
      p.values[idx] = keep;
      const double fd = (up - down) / (2 * h);
      variant_worst = std::max(variant_worst, dolfin::testing::relative_error(grad[idx], fd, kGradFloor));
    }
    checked += order.size();
    worst = std::max(worst, variant_worst);
    per_variant += fmt::format("{}{} {} params worst {:.2e}", per_variant.empty() ? "" : ", ", ar ? "ar" : "nonar",
                               order.size(), variant_worst);
  }
  const double secs = seconds_since(t0);
  return {worst < kGradRelTol && checked >= 2 * kGradParams && secs < kGradSeconds,
          fmt::format("{}; {:.1f}s", per_variant, secs)};
}

// ---------------------------------------------------------------- 5

struct OverfitSetup {
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int batch = 32;
  double lr = 1e-3;
  double ema = 0.999;
  int T = 100;
  std::int64_t sample_steps = 30000;  // total steps before the sample-quality check
};

DatasetConfig overfit_dataset() {
  DatasetConfig ds;
  ds.n_max = 8;
  return ds;
}

Corpus overfit_corpus() { return synth_layout_corpus(1, 32, SynthStyle::columns, overfit_dataset()); }

// First step at which the trailing mean of the batch losses drops below the
// threshold, or -1.
std::int64_t first_converged(const std::vector<LossRecord>& log) {
  double window = 0.0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    window += log[i].loss;
    if (i >= static_cast<std::size_t>(kOverfitWindow)) window -= log[i - kOverfitWindow].loss;
    if (i + 1 >= static_cast<std::size_t>(kOverfitWindow) && window / kOverfitWindow < kOverfitLoss) return log[i].step;
  }
  return -1;
}

double trailing_mean(const std::vector<LossRecord>& log) {
  const std::size_t n = std::min<std::size_t>(log.size(), kOverfitWindow);
  double s = 0.0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) s += log[i].loss;
  return n ? s / static_cast<double>(n) : 0.0;
}

Checkpoint overfit_checkpoint(const OverfitSetup& setup, Variant variant, std::int64_t steps) {
  TrainConfig tc;
  tc.seed = 1;
  tc.variant = variant;
  tc.lr = setup.lr;
  tc.batch_size = setup.batch;
  tc.total_steps = steps;
  tc.ema_decay = setup.ema;
  tc.log_every = 1;
  ModelConfig m;
  m.layers = setup.layers;
  m.heads = setup.heads;
  m.hidden = setup.hidden;
  return Checkpoint::create(tc, m, overfit_dataset(), setup.T);
}

Outcome overfit() {
  const auto t0 = Clock::now();
  const OverfitSetup setup;
  const Corpus corpus = overfit_corpus();
  const std::vector<Matd> tokens = tokenize_corpus(corpus);

  Checkpoint nonar = overfit_checkpoint(setup, Variant::nonar, kNonArStepBudget);
  const std::vector<LossRecord> nonar_log = train_loop(nonar, tokens);
  const std::int64_t nonar_at = first_converged(nonar_log);
  const double nonar_loss = trailing_mean(nonar_log);

  // Keep overfitting the same model, then score its samples.
  nonar.train.total_steps = setup.sample_steps;
  train_loop(nonar, tokens);
  SampleRequest req;
  req.n_samples = 64;
  req.seed = 5;
  req.reverse.kind = ReverseKind::ddpm;
  const SampleOutput samples = sample_checkpoint(nonar, req);
  std::vector<Layout> layouts;
  for (const auto& t : samples.tokens) layouts.push_back(decode(t, nonar.dataset));
  const double align = alignment_score(layouts);
  const double overlap = overlap_score(layouts);
  const double miou = max_iou(layouts, corpus.layouts);

  Checkpoint ar = overfit_checkpoint(setup, Variant::ar, kArStepBudget);
  const std::vector<LossRecord> ar_log = train_loop(ar, tokens);
  const std::int64_t ar_at = first_converged(ar_log);
  const double ar_loss = trailing_mean(ar_log);

  const double secs = seconds_since(t0);
  const bool pass = nonar_at > 0 && ar_at > 0 && align <= kMaxAlignment && overlap <= kMaxOverlap && secs < kOverfitSeconds;
  return {pass, fmt::format("nonar loss<{} at step {} (final window {:.4f}); ar at step {} (final window {:.4f}); "
                            "samples after {} steps: alignment {:.3f}, overlap {:.2f}%, max_iou {:.3f}; {:.0f}s",
                            kOverfitLoss, nonar_at, nonar_loss, ar_at, ar_loss, setup.sample_steps, align, overlap, miou,
                            secs)};
}

// ---------------------------------------------------------------- 6

Outcome ar_causality() {
  ModelConfig cfg = dolfin::testing::tiny_config(true);
  cfg.n_max = 5;
  const auto p = dolfin::testing::random_params<double>(cfg, 606);
  Rng rng(607);
  const Mat<double> x = standard_normal(5, kTokenDim, rng);
  const Mat<double> noise = standard_normal(5, kTokenDim, rng);
  const Mat<double> base = forward_ar_teacher_forced<double>(p, x, noise, 7);
  int leaks = 0, dead = 0;
  for (int j = 0; j < 5; ++j) {
    Mat<double> perturbed = noise;
    perturbed.row(j).array() += 0.5;
    const Mat<double> out = forward_ar_teacher_forced<double>(p, x, perturbed, 7);
    for (int i = 0; i <= j; ++i) leaks += out.row(i) != base.row(i);
    for (int i = j + 1; i < 5; ++i) dead += out.row(i) == base.row(i);
  }
  double incremental = 0.0;
  for (int i = 0; i < 5; ++i) {
    incremental = std::max(incremental, (forward_ar<double>(p, x, noise.topRows(i), 7) - base.row(i)).cwiseAbs().maxCoeff());
  }

  // Single-token AR sampling against the joint DDIM chain on the same params.
  TrainConfig tc;
  tc.variant = Variant::ar;
  ModelConfig m;
  m.layers = 2;
  m.heads = 2;
  m.hidden = 16;
  DatasetConfig ds;
  ds.n_max = 1;
  Checkpoint ck = Checkpoint::create(tc, m, ds, 50);
  ck.params = dolfin::testing::random_params<float>(ck.model, 608, 0.2);
  const DenoiserParams<float>& fp = ck.params;
  const EpsPredictor joint = [&fp](const Matd& xt, int t) {
    const Mat<float> xf = xt.cast<float>();
    return EpsPrediction{forward_ar_teacher_forced<float>(fp, xf, Mat<float>::Zero(1, kTokenDim), t).cast<double>(),
                         std::nullopt};
  };
  int mismatched = 0;
  for (double eta : {0.0, 1.0}) {
    ReverseOptions o;
    o.kind = ReverseKind::ddim;
    o.eta = eta;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      Rng a(seed), b(seed);
      const Matd via_ar = sample_chain(ar_predictor(fp), ck.schedule, 1, kTokenDim, nullptr, a, o);
      const Matd via_joint = sample_chain(joint, ck.schedule, 1, kTokenDim, nullptr, b, o);
      mismatched += via_ar != via_joint;
    }
  }
  return {leaks == 0 && dead == 0 && incremental < 1e-12 && mismatched == 0,
          fmt::format("prefix leaks {}, insensitive later rows {}, incremental vs masked {:.2e}, "
                      "n_max=1 chains differing {}/16",
                      leaks, dead, incremental, mismatched)};
}

// ---------------------------------------------------------------- 7

Outcome conditioning() {
  const fs::path dir = scratch("conditioning");
  const std::string corpus = (dir / "synth" / "corpus.jsonl").string();
  if (cli({"synth", "--style", "columns", "--n", "32", "--n-max", "8", "--seed", "7", "--out", (dir / "synth").string()}) != 0) {
    return {false, "synth failed"};
  }
  const Corpus known = load_canonical(corpus);
  std::string detail;
  bool pass = true;
  for (const char* variant : {"nonar", "ar"}) {
    const fs::path train = dir / fmt::format("train_{}", variant);
    if (cli({"train", "--data", corpus, "--out", train.string(), "--variant", variant, "--steps", "50", "--total-steps",
             "100", "--batch-size", "8", "--layers", "1", "--heads", "2", "--hidden", "16", "--lr", "1e-3",
             "--log-time", "none", "--log-every", "50"}) != 0) {
      return {false, fmt::format("{} training failed", variant)};
    }
    for (const char* mask : {"cate", "cate_size"}) {
      const fs::path out = dir / fmt::format("sample_{}_{}", variant, mask);
      if (cli({"sample", "--checkpoint", (train / "final.ckpt").string(), "--n", std::to_string(kConditionSamples),
               "--seed", "3", "--mask", mask, "--condition", corpus, "--capture-stride", "0", "--out", out.string()}) != 0) {
        return {false, fmt::format("{} sampling with {} failed", variant, mask)};
      }
      const Corpus got = load_canonical((out / "samples.jsonl").string());
      const bool with_size = std::string(mask) == "cate_size";
      int ok = 0;
      for (std::size_t i = 0; i < got.layouts.size(); ++i) {
        const Layout& want = known.layouts[i % known.layouts.size()];
        const Layout& have = got.layouts[i];
        bool match = have.boxes.size() == want.boxes.size();
        for (std::size_t b = 0; match && b < want.boxes.size(); ++b) {
          match = have.boxes[b].c == want.boxes[b].c;
          if (with_size) {
            const double ulp_h = std::numeric_limits<double>::epsilon() * known.config.h_max;
            const double ulp_w = std::numeric_limits<double>::epsilon() * known.config.w_max;
            match = match && std::abs(have.boxes[b].h - want.boxes[b].h) <= ulp_h &&
                    std::abs(have.boxes[b].w - want.boxes[b].w) <= ulp_w;
          }
        }
        ok += match;
      }
      pass = pass && got.layouts.size() == static_cast<std::size_t>(kConditionSamples) && ok == kConditionSamples;
      detail += fmt::format("{}{} {}: {}/{}", detail.empty() ? "" : ", ", variant, mask, ok, got.layouts.size());
    }
  }
  fs::remove_all(dir);
  return {pass, detail};
}

// ---------------------------------------------------------------- 8

double brute_min(const Eigen::MatrixXd& c) {
  if (c.rows() > c.cols()) return brute_min(c.transpose());
  std::vector<int> cols(static_cast<std::size_t>(c.cols()));
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (Eigen::Index i = 0; i < c.rows(); ++i) s += c(i, cols[static_cast<std::size_t>(i)]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

Layout random_layout(Rng& rng, int n) {
  Layout l;
  l.H = 0.5 + rng.uniform() * 3;
  l.W = 0.5 + rng.uniform() * 3;
  for (int i = 0; i < n; ++i) {
    BoundingBox b;
    b.w = (0.02 + 0.6 * rng.uniform()) * l.W;
    b.h = (0.02 + 0.6 * rng.uniform()) * l.H;
    b.x = rng.uniform() * (l.W - b.w);
    b.y = rng.uniform() * (l.H - b.h);
    b.c = 1 + static_cast<int>(rng.below(3));
    l.boxes.push_back(b);
  }
  return l;
}

struct Edges {
  double l, r, b, t;
};

Edges edges(const BoundingBox& box, const Layout& l) {
  return {box.x / l.W, (box.x + box.w) / l.W, box.y / l.H, (box.y + box.h) / l.H};
}

double oracle_iou(const Edges& a, const Edges& b) {
  const double iw = std::max(0.0, std::min(a.r, b.r) - std::max(a.l, b.l));
  const double ih = std::max(0.0, std::min(a.t, b.t) - std::max(a.b, b.b));
  const double inter = iw * ih;
  const double uni = (a.r - a.l) * (a.t - a.b) + (b.r - b.l) * (b.t - b.b) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double oracle_alignment(const Layout& l) {
  const std::size_t n = l.boxes.size();
  if (n < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double g = std::numeric_limits<double>::infinity();
    const Edges a = edges(l.boxes[i], l);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const Edges b = edges(l.boxes[j], l);
      g = std::min({g, std::abs(a.l - b.l), std::abs(a.r - b.r), std::abs((a.l + a.r) - (b.l + b.r)) / 2,
                    std::abs(a.b - b.b), std::abs(a.t - b.t), std::abs((a.b + a.t) - (b.b + b.t)) / 2});
    }
    total -= std::log(1 - g);
  }
  return 100 * total / static_cast<double>(n);
}

double oracle_overlap(const Layout& l) {
  double area = 0, inter = 0;
  for (std::size_t i = 0; i < l.boxes.size(); ++i) {
    const Edges a = edges(l.boxes[i], l);
    area += (a.r - a.l) * (a.t - a.b);
    for (std::size_t j = i + 1; j < l.boxes.size(); ++j) {
      const Edges b = edges(l.boxes[j], l);
      inter += std::max(0.0, std::min(a.r, b.r) - std::max(a.l, b.l)) * std::max(0.0, std::min(a.t, b.t) - std::max(a.b, b.b));
    }
  }
  return area > 0 ? 100 * inter / area : 0.0;
}

template <class W>
double oracle_pair(const Layout& a, const Layout& b, W weight) {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(a.boxes.size()), static_cast<Eigen::Index>(b.boxes.size()));
  for (std::size_t i = 0; i < a.boxes.size(); ++i)
    for (std::size_t j = 0; j < b.boxes.size(); ++j)
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = -weight(a.boxes[i], a, b.boxes[j], b);
  return -brute_min(c) / static_cast<double>(std::max(a.boxes.size(), b.boxes.size()));
}

double oracle_max_iou_pair(const Layout& a, const Layout& b) {
  if (a.boxes.empty() && b.boxes.empty()) return 1.0;
  if (a.boxes.empty() || b.boxes.empty()) return 0.0;
  return oracle_pair(a, b, [](const BoundingBox& x, const Layout& lx, const BoundingBox& y, const Layout& ly) {
    return x.c == y.c ? oracle_iou(edges(x, lx), edges(y, ly)) : 0.0;
  });
}

double oracle_docsim_pair(const Layout& a, const Layout& b) {
  if (a.boxes.empty() || b.boxes.empty()) return 0.0;
  return oracle_pair(a, b, [](const BoundingBox& x, const Layout& lx, const BoundingBox& y, const Layout& ly) {
    const Edges p = edges(x, lx), q = edges(y, ly);
    const double ap = (p.r - p.l) * (p.t - p.b), aq = (q.r - q.l) * (q.t - q.b);
    const double alpha = std::sqrt(std::min(ap, aq));
    const double dc = std::hypot((p.l + p.r - q.l - q.r) / 2, (p.b + p.t - q.b - q.t) / 2);
    const double ds = std::abs((p.r - p.l) - (q.r - q.l)) + std::abs((p.t - p.b) - (q.t - q.b));
    return alpha * std::exp2(-dc - 2 * ds);
  });
}

double oracle_difference(const std::vector<SegmentSet>& a, const std::vector<SegmentSet>& b) {
  auto wline = [](const Segment& p, const Segment& q) {
    return std::abs(p.x1 - q.x1) + std::abs(p.y1 - q.y1) + std::abs(p.x2 - q.x2) + std::abs(p.y2 - q.y2);
  };
  Eigen::MatrixXd outer(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      Eigen::MatrixXd inner(static_cast<Eigen::Index>(a[i].size()), static_cast<Eigen::Index>(b[j].size()));
      for (std::size_t p = 0; p < a[i].size(); ++p)
        for (std::size_t q = 0; q < b[j].size(); ++q)
          inner(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) = wline(a[i][p], b[j][q]);
      outer(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = brute_min(inner);
    }
  }
  return brute_min(outer) / static_cast<double>(a.size());
}

Outcome metric_oracles() {
  Rng rng(808);
  int hungarian_cases = 0, hungarian_bad = 0;
  for (int n = 1; n <= 6; ++n) {
    for (int m = n; m <= 6; ++m) {
      for (int rep = 0; rep < 12; ++rep) {
        Eigen::MatrixXd c(n, m);
        for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = std::floor(rng.uniform() * 1000) / 8;
        ++hungarian_cases;
        hungarian_bad += hungarian(c).cost != brute_min(c);
      }
    }
  }
  int diff_bad = 0, diff_self_bad = 0;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<SegmentSet> a(3), b(3);
    for (auto* set : {&a, &b})
      for (auto& img : *set)
        for (int k = 0; k < 3; ++k)
          img.push_back({std::floor(rng.uniform() * 64) / 64, std::floor(rng.uniform() * 64) / 64,
                         std::floor(rng.uniform() * 64) / 64, std::floor(rng.uniform() * 64) / 64});
    diff_self_bad += difference_score(a, a) != 0.0;
    diff_bad += difference_score(a, b) != oracle_difference(a, b);
  }
  double worst = 0.0;
  std::vector<Layout> gen, ref;
  for (int rep = 0; rep < 200; ++rep) {
    const Layout a = random_layout(rng, static_cast<int>(rng.below(7)));
    const Layout b = random_layout(rng, static_cast<int>(rng.below(7)));
    for (std::size_t i = 0; i < a.boxes.size(); ++i)
      for (std::size_t j = 0; j < b.boxes.size(); ++j)
        worst = std::max(worst, std::abs(iou(normalized(a.boxes[i], a), normalized(b.boxes[j], b)) -
                                         oracle_iou(edges(a.boxes[i], a), edges(b.boxes[j], b))));
    worst = std::max(worst, std::abs(layout_alignment(a) - oracle_alignment(a)));
    worst = std::max(worst, std::abs(layout_overlap(a) - oracle_overlap(a)));
    worst = std::max(worst, std::abs(layout_max_iou(a, b) - oracle_max_iou_pair(a, b)));
    worst = std::max(worst, std::abs(layout_docsim(a, b) - oracle_docsim_pair(a, b)));
    if (rep < 20) {
      gen.push_back(a);
      ref.push_back(b);
    }
  }
  // Corpus level: best reference per generated layout, multiset-restricted for max_iou.
  double miou = 0.0, dsim = 0.0;
  for (const auto& g : gen) {
    auto key = [](const Layout& l) {
      std::multiset<int> s;
      for (const auto& b : l.boxes) s.insert(b.c);
      return s;
    };
    bool any = false;
    for (const auto& r : ref) any = any || key(r) == key(g);
    double best_iou = 0.0, best_doc = 0.0;
    for (const auto& r : ref) {
      if (!any || key(r) == key(g)) best_iou = std::max(best_iou, oracle_max_iou_pair(g, r));
      best_doc = std::max(best_doc, oracle_docsim_pair(g, r));
    }
    miou += best_iou / static_cast<double>(gen.size());
    dsim += best_doc / static_cast<double>(gen.size());
  }
  worst = std::max(worst, std::abs(max_iou(gen, ref) - miou));
  worst = std::max(worst, std::abs(docsim(gen, ref) - dsim));
  const bool pass = hungarian_cases >= 200 && hungarian_bad == 0 && diff_bad == 0 && diff_self_bad == 0 && worst < kMetricTol;
  return {pass, fmt::format("hungarian mismatches {}/{}, difference mismatches {}/50 (self nonzero {}), "
                            "worst geometric metric deviation {:.2e}",
                            hungarian_bad, hungarian_cases, diff_bad, diff_self_bad, worst)};
}

// ---------------------------------------------------------------- 9

struct AblationScore {
  double alignment = 0.0;
  double feature = 0.0;
};

AblationScore ablation_run(std::uint64_t seed, bool with_adapter, const Corpus& corpus,
                           const std::vector<Image>& reference) {
  const OverfitSetup setup;
  const std::vector<Matd> tokens = tokenize_corpus(corpus);
  TrainConfig tc;
  tc.seed = seed;
  tc.lr = setup.lr;
  tc.batch_size = setup.batch;
  tc.total_steps = kAblationSteps;
  tc.ema_decay = setup.ema;
  tc.log_every = 1000;
  ModelConfig m;
  m.layers = setup.layers;
  m.heads = setup.heads;
  m.hidden = setup.hidden;
  MlpAdapter adapter;
  if (with_adapter) {
    adapter = MlpAdapter(kTokenDim, kAblationLatent, seed);
    adapter.train(tokens, 1e-3, 20000, 1e-2);
  }
  Checkpoint ck = Checkpoint::create(tc, m, corpus.config, setup.T, adapter);
  train_loop(ck, to_model_space(ck, tokens));
  SampleRequest req;
  req.n_samples = 64;
  req.seed = seed + 100;
  const SampleOutput out = sample_checkpoint(ck, req);
  std::vector<Layout> layouts;
  std::vector<Image> images;
  for (const auto& t : out.tokens) {
    layouts.push_back(decode(t, corpus.config));
    images.push_back(rasterize_layout(layouts.back()));
  }
  return {alignment_score(layouts), feature_distance(images, reference, RandomProjectionExtractor())};
}

Outcome ablation() {
  const auto t0 = Clock::now();
  const Corpus corpus = overfit_corpus();
  std::vector<Image> reference;
  for (const auto& l : corpus.layouts) reference.push_back(rasterize_layout(l));
  int align_agree = 0, feature_agree = 0;
  std::string runs;
  for (int s = 1; s <= kAblationSeeds; ++s) {
    const AblationScore direct = ablation_run(static_cast<std::uint64_t>(s), false, corpus, reference);
    const AblationScore latent = ablation_run(static_cast<std::uint64_t>(s), true, corpus, reference);
    align_agree += latent.alignment >= direct.alignment;
    feature_agree += latent.feature >= direct.feature;
    runs += fmt::format("{}seed {}: align {:.2f}/{:.2f} fd {:.3f}/{:.3f}", runs.empty() ? "" : "; ", s, direct.alignment,
                        latent.alignment, direct.feature, latent.feature);
  }
  return {align_agree >= kAblationAgree && feature_agree >= kAblationAgree,
          fmt::format("adapter no better on alignment in {}/{} and feature distance in {}/{} (direct/adapter: {}); {:.0f}s",
                      align_agree, kAblationSeeds, feature_agree, kAblationSeeds, runs, seconds_since(t0))};
}

// ---------------------------------------------------------------- 10

Outcome timing() {
  const fs::path dir = scratch("timing");
  if (cli({"eval", "--timing", "--n", "4", "--steps", "50", "--n-max", "16", "--layers", "2", "--heads", "4", "--hidden",
           "64", "--out", dir.string()}) != 0) {
    return {false, "eval --timing failed"};
  }
  const auto report = nlohmann::json::parse(read_file((dir / "timing.json").string()));
  const double nonar = report["dolfin"]["seconds_per_sample"].get<double>();
  const double ar = report["dolfin_ar"]["seconds_per_sample"].get<double>();
  fs::remove_all(dir);
  return {nonar > 0 && ar > nonar, fmt::format("Dolfin {:.4f} s/sample, Dolfin-AR {:.4f} s/sample", nonar, ar)};
}

// ---------------------------------------------------------------- 11

std::vector<std::pair<std::string, std::string>> tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), root).string(), read_file(e.path().string()));
  }
  std::sort(files.begin(), files.end());
  return files;
}

Outcome determinism() {
  setenv("DOLFIN_THREADS", "1", 1);
  const fs::path dir = scratch("determinism");
  const std::string annotations = (dir / "annotations.json").string();
  atomic_write(annotations, R"({"images":[{"id":1,"width":60,"height":90},{"id":2,"width":60,"height":90}],
"categories":[{"id":1},{"id":2}],
"annotations":[{"image_id":1,"category_id":1,"bbox":[5,5,20,30]},{"image_id":1,"category_id":2,"bbox":[30,5,20,30]},
{"image_id":2,"category_id":2,"bbox":[0,50,60,40]}]})");
  const std::string corpus = (dir / "shared" / "corpus.jsonl").string();
  if (cli({"synth", "--style", "grid", "--n", "12", "--n-max", "6", "--seed", "4", "--out", (dir / "shared").string()}) != 0) {
    return {false, "synth failed"};
  }
  const std::string shared_ckpt = (dir / "shared_train" / "final.ckpt").string();
  const std::vector<std::string> train_args{"train", "--data", corpus, "--steps", "20", "--total-steps", "12",
                                            "--batch-size", "4", "--layers", "1", "--heads", "2", "--hidden", "16",
                                            "--checkpoint-every", "5", "--ema-decay", "0.9", "--log-every", "3",
                                            "--log-time", "none"};
  {
    auto args = train_args;
    args.insert(args.end(), {"--out", (dir / "shared_train").string()});
    if (cli(args) != 0) return {false, "train failed"};
  }
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
      {"synth", {"synth", "--style", "columns", "--n", "10", "--seed", "9"}},
      {"synth-segments", {"synth", "--style", "segments", "--n", "4", "--k-segments", "5", "--n-max", "8"}},
      {"convert", {"convert", "--source", "publaynet", "--input", annotations}},
      {"train", train_args},
      {"train-ar", [&] {
         auto a = train_args;
         a.insert(a.end(), {"--variant", "ar"});
         return a;
       }()},
      {"sample", {"sample", "--checkpoint", shared_ckpt, "--n", "8", "--seed", "7", "--capture-stride", "4"}},
      {"sample-ddim", {"sample", "--checkpoint", shared_ckpt, "--n", "4", "--seed", "7", "--reverse", "ddim", "--eta", "0.5",
                       "--steps", "5", "--mask", "cate", "--condition", corpus}},
      {"eval", {"eval", "--generated", corpus, "--reference", corpus}},
      {"render", {"render", "--input", corpus}},
  };
  std::string differing;
  std::size_t files = 0;
  for (const auto& [name, args] : commands) {
    std::string echo[2];
    std::vector<std::pair<std::string, std::string>> outputs[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = dir / fmt::format("{}_{}", name, rep);
      auto full = args;
      full.insert(full.end(), {"--out", out.string()});
      if (cli(full, &echo[rep]) != 0) return {false, fmt::format("{} failed", name)};
      outputs[rep] = tree(out);
      const std::string a = out.string(), b = (dir / fmt::format("{}_0", name)).string();
      for (auto pos = echo[rep].find(a); pos != std::string::npos; pos = echo[rep].find(a, pos + b.size())) {
        echo[rep].replace(pos, a.size(), b);
      }
    }
    files += outputs[0].size();
    if (outputs[0] != outputs[1] || echo[0] != echo[1] || outputs[0].empty()) differing += " " + name;
  }
  fs::remove_all(dir);
  unsetenv("DOLFIN_THREADS");
  return {differing.empty(), fmt::format("{} commands, {} files compared byte-for-byte; differing:{}", commands.size(),
                                         files, differing.empty() ? " none" : differing)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "codec roundtrip and category bijection", codec_suite},
      {2, "forward-process statistics", forward_statistics},
      {3, "oracle DDIM inversion", reverse_inversion},
      {4, "analytic vs finite-difference gradients", gradient_check},
      {5, "overfit loss and sample quality", overfit},
      {6, "AR causality and single-token degeneracy", ar_causality},
      {7, "conditioning exactness", conditioning},
      {8, "metric oracles", metric_oracles},
      {9, "adapter ablation direction", ablation},
      {10, "timing report", timing},
      {11, "CLI determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    failures += !o.pass;
    std::cout << fmt::format("criterion {:>2} {} {}: {}", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail) << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
