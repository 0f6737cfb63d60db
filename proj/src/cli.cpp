#include "dolfin/cli.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "dolfin/checkpoint.hpp"
#include "dolfin/data_io.hpp"
#include "dolfin/error.hpp"
#include "dolfin/features.hpp"
#include "dolfin/fs_util.hpp"
#include "dolfin/metrics.hpp"
#include "dolfin/parallel.hpp"
#include "dolfin/render.hpp"
#include "dolfin/sampler.hpp"
#include "dolfin/trainer.hpp"

namespace dolfin {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct ModelFlags {
  int layers = 4;
  int heads = 8;
  int hidden = 512;
  bool variance_head = false;

  ModelConfig config(bool ar) const {
    ModelConfig m;
    m.layers = layers;
    m.heads = heads;
    m.hidden = hidden;
    m.variance_head = variance_head;
    m.ar_mode = ar;
    return m;
  }
};

void add_model_flags(CLI::App* app, ModelFlags& f) {
  app->add_option("--layers", f.layers, "Transformer layers")->capture_default_str();
  app->add_option("--heads", f.heads, "Attention heads")->capture_default_str();
  app->add_option("--hidden", f.hidden, "Hidden width")->capture_default_str();
  app->add_flag("--variance-head", f.variance_head, "Learn the reverse variance (non-AR only)");
}

struct TrainArgs {
  std::string data, out, resume, variant = "nonar", log_time = "wall";
  std::uint64_t seed = 0;
  int steps = 100;
  std::int64_t total_steps = 1000, checkpoint_every = 0, log_every = 1;
  int batch_size = 64;
  double lr = 1e-4, ema_decay = 0.0, grad_clip = 1.0, weight_decay = 0.01;
  int adapter_latent = 0;
  ModelFlags model;
};

struct SampleArgs {
  std::string checkpoint, out, mask = "none", condition, reverse;
  std::uint64_t seed = 0;
  int n = 8, steps = 0, capture_stride = 0, canvas = 512;
  double eta = 0.0;
  bool clip_x0 = false;
};

struct EvalArgs {
  std::string generated, reference, out, checkpoint_nonar, checkpoint_ar;
  bool timing = false;
  int n = 8, steps = 100, n_max = 16;
  std::uint64_t seed = 0;
  ModelFlags model;
};

struct RenderArgs {
  std::string input, out;
  int canvas = 512;
};

struct ConvertArgs {
  std::string source, input, out;
};

struct SynthArgs {
  std::string style = "columns", out;
  std::uint64_t seed = 0;
  int n = 32, n_max = 16, num_categories = 5, k_segments = 8;
};

std::string record_name(const char* prefix, std::size_t i, const char* ext) {
  return fmt::format("{}_{:06d}.{}", prefix, i, ext);
}

void echo_config(const std::string& out_dir, const std::string& command, const ojson& resolved, std::ostream& out) {
  ojson doc;
  doc["command"] = command;
  doc["config"] = resolved;
  const std::string text = doc.dump(2) + "\n";
  out << "resolved config:\n" << text;
  if (!out_dir.empty()) atomic_write((fs::path(out_dir) / "config.json").string(), text);
}

std::string require_out(const std::string& out) {
  if (out.empty()) throw Error(ErrorKind::config, "--out is required");
  fs::create_directories(out);
  return out;
}

std::vector<TokenRows> train_tokens(const Corpus& corpus) {
  std::vector<TokenRows> tokens;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus.splits.empty() || corpus.splits[i] == "train") tokens.push_back(tokenize_record(corpus, i));
  }
  if (tokens.empty()) throw Error(ErrorKind::validation, "no training records");
  return tokens;
}

int run_train(const TrainArgs& a, std::ostream& out) {
  const std::string dir = require_out(a.out);
  if (a.log_time != "wall" && a.log_time != "none") throw Error(ErrorKind::config, "--log-time must be wall or none");
  if (a.data.empty()) throw Error(ErrorKind::config, "--data is required");
  const Corpus corpus = load_canonical(a.data);
  const std::vector<TokenRows> tokens = train_tokens(corpus);
  Checkpoint ck;
  if (!a.resume.empty()) {
    ck = load_checkpoint(a.resume);
    if (ck.dataset.n_max != corpus.config.n_max || ck.dataset.mode != corpus.config.mode) {
      throw Error(ErrorKind::config, "resume checkpoint was trained on a different dataset shape");
    }
    ck.train.total_steps = a.total_steps;
  } else {
    TrainConfig tc;
    tc.lr = a.lr;
    tc.batch_size = a.batch_size;
    tc.total_steps = a.total_steps;
    tc.seed = a.seed;
    tc.variant = variant_from_string(a.variant);
    tc.ema_decay = a.ema_decay;
    tc.checkpoint_every = a.checkpoint_every;
    tc.log_every = a.log_every;
    tc.grad_clip = a.grad_clip;
    tc.weight_decay = a.weight_decay;
    MlpAdapter adapter;
    if (a.adapter_latent > 0) {
      adapter = MlpAdapter(kTokenDim, a.adapter_latent, a.seed);
      const auto r = adapter.train(tokens, 1e-3, 20000, 1e-2);
      out << fmt::format("adapter: latent={} steps={} reconstruction_mse={:.6g}\n", a.adapter_latent, r.steps, r.final_mse);
    }
    ck = Checkpoint::create(tc, a.model.config(tc.variant == Variant::ar), corpus.config, a.steps, std::move(adapter));
  }
  ojson cfg;
  cfg["data"] = a.data;
  cfg["resume"] = a.resume;
  cfg["seed"] = ck.train.seed;
  cfg["diffusion_steps"] = ck.schedule.T;
  cfg["log_time"] = a.log_time;
  cfg["adapter_latent"] = ck.adapter.latent_dim();
  for (const auto& [k, v] : ck.train.to_kv()) cfg["train"][k] = v;
  for (const auto& [k, v] : ck.model.to_kv()) cfg["model"][k] = v;
  for (const auto& [k, v] : dataset_to_kv(ck.dataset)) cfg["dataset"][k] = v;
  echo_config(dir, "train", cfg, out);
  const std::vector<Matd> model_space = to_model_space(ck, tokens);
  const auto log = train_loop(ck, model_space, {dir, a.log_time == "wall", {}});
  if (!log.empty()) out << fmt::format("final step {} loss {:.6g}\n", log.back().step, log.back().loss);
  out << "checkpoint: " << (fs::path(dir) / "final.ckpt").string() << "\n";
  return 0;
}

Corpus decode_samples(const Checkpoint& ck, const std::vector<Matd>& tokens) {
  Corpus c;
  c.config = ck.dataset;
  for (const auto& t : tokens) {
    TokenMatrix m(static_cast<int>(t.rows()), ck.dataset.mode);
    m.rows = t;
    if (ck.dataset.mode == TokenMode::layout) {
      c.layouts.push_back(detokenize_layout(m, ck.dataset));
    } else {
      c.segments.push_back(detokenize_segments(m, ck.dataset));
    }
  }
  return c;
}

int run_sample(const SampleArgs& a, std::ostream& out) {
  const std::string dir = require_out(a.out);
  if (a.checkpoint.empty()) throw Error(ErrorKind::config, "--checkpoint is required");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  SampleRequest req;
  req.n_samples = a.n;
  req.seed = a.seed;
  req.mask = mask_kind_from_string(a.mask);
  req.reverse.kind = a.reverse.empty() ? default_reverse(ck.model.ar_mode) : reverse_kind_from_string(a.reverse);
  req.reverse.eta = a.eta;
  req.reverse.clip_x0 = a.clip_x0;
  req.reverse.steps = a.steps;
  req.reverse.capture_stride = a.capture_stride;
  if (req.mask != MaskKind::none) {
    if (a.condition.empty()) throw Error(ErrorKind::config, "--mask needs --condition with known layouts");
    Corpus cond = load_canonical(a.condition);
    if (cond.config.mode != ck.dataset.mode || cond.config.n_max != ck.dataset.n_max) {
      throw Error(ErrorKind::config, "condition corpus shape differs from the checkpoint dataset");
    }
    cond.config = ck.dataset;
    if (cond.size() == 0) throw Error(ErrorKind::validation, "condition corpus is empty");
    for (std::size_t i = 0; i < cond.size(); ++i) {
      if (cond.config.mode == TokenMode::layout) validate_record(cond.layouts[i], ck.dataset);
      req.condition_tokens.push_back(tokenize_record(cond, i));
    }
  }
  ojson cfg;
  cfg["checkpoint"] = a.checkpoint;
  cfg["seed"] = a.seed;
  cfg["n"] = a.n;
  cfg["variant"] = ck.model.ar_mode ? "ar" : "nonar";
  cfg["reverse"] = to_string(req.reverse.kind);
  cfg["steps"] = req.reverse.steps == 0 ? ck.schedule.T : req.reverse.steps;
  cfg["eta"] = a.eta;
  cfg["clip_x0"] = a.clip_x0;
  cfg["mask"] = to_string(req.mask);
  cfg["condition"] = a.condition;
  cfg["capture_stride"] = a.capture_stride;
  cfg["canvas"] = a.canvas;
  echo_config(dir, "sample", cfg, out);

  const SampleOutput result = sample_checkpoint(ck, req);
  const Corpus samples = decode_samples(ck, result.tokens);
  save_canonical((fs::path(dir) / "samples.jsonl").string(), samples);
  RenderStyle style;
  style.canvas = a.canvas;
  const fs::path svg_dir = fs::path(dir) / "svg";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string svg = ck.dataset.mode == TokenMode::layout ? render_svg(samples.layouts[i], style)
                                                                 : render_svg(samples.segments[i], style);
    atomic_write((svg_dir / record_name("sample", i, "svg")).string(), svg);
  }
  for (std::size_t i = 0; i < result.trajectories.size(); ++i) {
    render_trajectory(result.trajectories[i], ck.dataset, (fs::path(dir) / fmt::format("trajectory_{:06d}", i)).string(),
                      style);
  }
  out << fmt::format("wrote {} samples to {}\n", samples.size(), dir);
  return 0;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double seconds_per_sample(const Checkpoint& ck, int n, std::uint64_t seed) {
  SampleRequest req;
  req.n_samples = n;
  req.seed = seed;
  req.reverse.kind = default_reverse(ck.model.ar_mode);
  const auto t0 = std::chrono::steady_clock::now();
  sample_checkpoint(ck, req);
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / n;
}

int run_timing(const EvalArgs& a, std::ostream& out) {
  const std::string dir = require_out(a.out);
  auto make = [&](const std::string& path, bool ar) {
    if (!path.empty()) return load_checkpoint(path);
    DatasetConfig ds;
    ds.n_max = a.n_max;
    TrainConfig tc;
    tc.seed = a.seed;
    tc.variant = ar ? Variant::ar : Variant::nonar;
    return Checkpoint::create(tc, a.model.config(ar), ds, a.steps);
  };
  const Checkpoint nonar = make(a.checkpoint_nonar, false);
  const Checkpoint ar = make(a.checkpoint_ar, true);
  if (nonar.model.ar_mode || !ar.model.ar_mode) throw Error(ErrorKind::config, "timing needs one non-AR and one AR checkpoint");
  ojson cfg;
  cfg["timing"] = true;
  cfg["n"] = a.n;
  cfg["seed"] = a.seed;
  cfg["checkpoint_nonar"] = a.checkpoint_nonar;
  cfg["checkpoint_ar"] = a.checkpoint_ar;
  for (const auto& [k, v] : nonar.model.to_kv()) cfg["model_nonar"][k] = v;
  for (const auto& [k, v] : ar.model.to_kv()) cfg["model_ar"][k] = v;
  cfg["diffusion_steps"] = nonar.schedule.T;
  echo_config(dir, "eval", cfg, out);
  ojson report;
  report["samples"] = a.n;
  report["threads"] = worker_threads();
  report["dolfin"]["reverse"] = to_string(default_reverse(false));
  report["dolfin"]["seconds_per_sample"] = seconds_per_sample(nonar, a.n, a.seed);
  report["dolfin_ar"]["reverse"] = to_string(default_reverse(true));
  report["dolfin_ar"]["seconds_per_sample"] = seconds_per_sample(ar, a.n, a.seed);
  atomic_write((fs::path(dir) / "timing.json").string(), report.dump(2) + "\n");
  out << fmt::format("time per sample: Dolfin {:.6f} s, Dolfin-AR {:.6f} s\n",
                     report["dolfin"]["seconds_per_sample"].get<double>(),
                     report["dolfin_ar"]["seconds_per_sample"].get<double>());
  return 0;
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  if (a.timing) return run_timing(a, out);
  const std::string dir = require_out(a.out);
  if (a.generated.empty() || a.reference.empty()) throw Error(ErrorKind::config, "--generated and --reference are required");
  const std::string gen_text = read_file(a.generated);
  const std::string ref_text = read_file(a.reference);
  const Corpus gen = load_canonical(a.generated);
  const Corpus ref = load_canonical(a.reference);
  if (gen.config.mode != ref.config.mode) throw Error(ErrorKind::config, "generated and reference corpora differ in mode");
  ojson cfg;
  cfg["generated"] = a.generated;
  cfg["reference"] = a.reference;
  echo_config(dir, "eval", cfg, out);

  MetricReport report;
  report.metadata["mode"] = to_string(gen.config.mode);
  report.metadata["generated_count"] = std::to_string(gen.size());
  report.metadata["reference_count"] = std::to_string(ref.size());
  report.metadata["input_hash"] = fmt::format("{:016x}", fnv1a(ref_text, fnv1a(gen_text)));
  if (gen.config.mode == TokenMode::layout) {
    std::vector<double> per;
    report.scalars["alignment"] = alignment_score(gen.layouts, &per);
    report.per_sample["alignment"] = per;
    report.scalars["overlap"] = overlap_score(gen.layouts, &per);
    report.per_sample["overlap"] = per;
    report.scalars["max_iou"] = max_iou(gen.layouts, ref.layouts, &per);
    report.per_sample["max_iou"] = per;
    report.scalars["docsim"] = docsim(gen.layouts, ref.layouts, &per);
    report.per_sample["docsim"] = per;
    report.scalars["reference_alignment"] = alignment_score(ref.layouts);
    report.scalars["reference_overlap"] = overlap_score(ref.layouts);
    if (gen.size() >= 2 && ref.size() >= 2) {
      std::vector<Image> gi, ri;
      for (const auto& l : gen.layouts) gi.push_back(rasterize_layout(l));
      for (const auto& l : ref.layouts) ri.push_back(rasterize_layout(l));
      const RandomProjectionExtractor extractor;
      report.scalars["feature_distance"] = feature_distance(gi, ri, std::cref(extractor));
      report.metadata["feature_extractor"] = "random-projection-64 (32x32 average pool, seed 20240607)";
    }
  } else {
    report.scalars["difference"] = difference_score(gen.segments, ref.segments);
  }
  ojson doc;
  for (const auto& [k, v] : report.scalars) doc["metrics"][k] = v;
  for (const auto& [k, v] : report.per_sample) doc["per_sample"][k] = v;
  for (const auto& [k, v] : report.metadata) doc["metadata"][k] = v;
  atomic_write((fs::path(dir) / "metrics.json").string(), doc.dump(2) + "\n");
  out << "metrics:\n";
  for (const auto& [k, v] : report.scalars) out << fmt::format("  {:<20} {:.6f}\n", k, v);
  out << fmt::format("  generated={} reference={}\n", gen.size(), ref.size());
  return 0;
}

int run_render(const RenderArgs& a, std::ostream& out) {
  const std::string dir = require_out(a.out);
  if (a.input.empty()) throw Error(ErrorKind::config, "--input is required");
  const Corpus c = load_canonical(a.input);
  ojson cfg;
  cfg["input"] = a.input;
  cfg["canvas"] = a.canvas;
  echo_config(dir, "render", cfg, out);
  RenderStyle style;
  style.canvas = a.canvas;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const std::string svg =
        c.config.mode == TokenMode::layout ? render_svg(c.layouts[i], style) : render_svg(c.segments[i], style);
    atomic_write((fs::path(dir) / record_name("record", i, "svg")).string(), svg);
  }
  out << fmt::format("rendered {} records to {}\n", c.size(), dir);
  return 0;
}

int run_convert(const ConvertArgs& a, std::ostream& out) {
  const std::string dir = require_out(a.out);
  if (a.input.empty()) throw Error(ErrorKind::config, "--input is required");
  const SourceStyle style = source_style_from_string(a.source);
  ojson cfg;
  cfg["source"] = a.source;
  cfg["input"] = a.input;
  echo_config(dir, "convert", cfg, out);
  ConvertStats stats;
  const Corpus c = convert_detection_annotations(read_file(a.input), style, &stats);
  save_canonical((fs::path(dir) / "corpus.jsonl").string(), c);
  ojson s;
  s["images"] = stats.images;
  s["emitted"] = stats.emitted;
  s["dropped_over_capacity"] = stats.dropped_over_capacity;
  s["dropped_empty"] = stats.dropped_empty;
  s["clipped_boxes"] = stats.clipped_boxes;
  s["dropped_degenerate_boxes"] = stats.dropped_degenerate_boxes;
  atomic_write((fs::path(dir) / "convert_stats.json").string(), s.dump(2) + "\n");
  out << fmt::format("converted {} of {} images ({} over capacity dropped)\n", stats.emitted, stats.images,
                     stats.dropped_over_capacity);
  return 0;
}

int run_synth(const SynthArgs& a, std::ostream& out) {
  const std::string dir = require_out(a.out);
  ojson cfg;
  cfg["style"] = a.style;
  cfg["seed"] = a.seed;
  cfg["n"] = a.n;
  cfg["n_max"] = a.n_max;
  cfg["num_categories"] = a.num_categories;
  if (a.style == "segments") cfg["k_segments"] = a.k_segments;
  echo_config(dir, "synth", cfg, out);
  DatasetConfig ds;
  ds.n_max = a.n_max;
  ds.num_categories = a.num_categories;
  Corpus c;
  if (a.style == "segments") {
    ds.mode = TokenMode::segment;
    c = synth_segment_corpus(a.seed, a.n, a.k_segments, ds);
  } else {
    c = synth_layout_corpus(a.seed, a.n, synth_style_from_string(a.style), ds);
  }
  save_canonical((fs::path(dir) / "corpus.jsonl").string(), c);
  out << fmt::format("wrote {} records to {}\n", c.size(), (fs::path(dir) / "corpus.jsonl").string());
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"dolfin: diffusion layout transformer toolkit"};
  app.set_config("--config", "", "Config file (TOML/INI; flags override it)");
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a denoiser on a canonical corpus");
  t->add_option("--data", train.data, "Canonical JSONL corpus");
  t->add_option("--out", train.out, "Output directory");
  t->add_option("--seed", train.seed, "Random seed")->capture_default_str();
  t->add_option("--variant", train.variant, "nonar or ar")->capture_default_str()->check(CLI::IsMember({"nonar", "ar"}));
  t->add_option("--steps", train.steps, "Diffusion steps T")->capture_default_str();
  t->add_option("--total-steps", train.total_steps, "Optimizer steps")->capture_default_str();
  t->add_option("--batch-size", train.batch_size, "Batch size")->capture_default_str();
  t->add_option("--lr", train.lr, "Learning rate")->capture_default_str();
  t->add_option("--ema-decay", train.ema_decay, "Parameter EMA decay (0 disables)")->capture_default_str();
  t->add_option("--grad-clip", train.grad_clip, "Global gradient norm clip (<= 0 disables)")->capture_default_str();
  t->add_option("--weight-decay", train.weight_decay, "Decoupled weight decay")->capture_default_str();
  t->add_option("--checkpoint-every", train.checkpoint_every, "Checkpoint period in steps (0 disables)")->capture_default_str();
  t->add_option("--log-every", train.log_every, "Loss log period")->capture_default_str();
  t->add_option("--log-time", train.log_time, "wall or none (writes 0 in the millis column)")->capture_default_str();
  t->add_option("--adapter-latent", train.adapter_latent, "Diffuse in an MLP-adapter latent of this width (0 disables)");
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  add_model_flags(t, train.model);

  SampleArgs sample;
  auto* s = app.add_subcommand("sample", "Sample layouts from a checkpoint");
  s->add_option("--checkpoint", sample.checkpoint, "Checkpoint file");
  s->add_option("--out", sample.out, "Output directory");
  s->add_option("--seed", sample.seed, "Random seed")->capture_default_str();
  s->add_option("--n", sample.n, "Number of samples")->capture_default_str();
  s->add_option("--steps", sample.steps, "Reverse steps (0: the full schedule)")->capture_default_str();
  s->add_option("--eta", sample.eta, "DDIM eta")->capture_default_str();
  s->add_option("--reverse", sample.reverse, "ddpm or ddim (default per variant)");
  s->add_flag("--clip-x0", sample.clip_x0, "Clip predicted x0 to [-1, 1]");
  s->add_option("--mask", sample.mask, "none, cate or cate_size")->capture_default_str()->check(
      CLI::IsMember({"none", "cate", "cate_size"}));
  s->add_option("--condition", sample.condition, "Canonical corpus with the known layouts");
  s->add_option("--capture-stride", sample.capture_stride, "Trajectory snapshot stride (0 disables)")->capture_default_str();
  s->add_option("--canvas", sample.canvas, "SVG canvas size")->capture_default_str();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score generated layouts against a reference corpus");
  e->add_option("--generated", eval.generated, "Generated canonical corpus");
  e->add_option("--reference", eval.reference, "Reference canonical corpus");
  e->add_option("--out", eval.out, "Output directory");
  e->add_flag("--timing", eval.timing, "Report seconds per sample for both variants");
  e->add_option("--checkpoint-nonar", eval.checkpoint_nonar, "Non-AR checkpoint for --timing");
  e->add_option("--checkpoint-ar", eval.checkpoint_ar, "AR checkpoint for --timing");
  e->add_option("--n", eval.n, "Samples per variant for --timing")->capture_default_str();
  e->add_option("--steps", eval.steps, "Diffusion steps for fresh --timing models")->capture_default_str();
  e->add_option("--n-max", eval.n_max, "Tokens per layout for fresh --timing models")->capture_default_str();
  e->add_option("--seed", eval.seed, "Random seed")->capture_default_str();
  add_model_flags(e, eval.model);

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Render a canonical corpus to SVG");
  r->add_option("--input", render.input, "Canonical corpus");
  r->add_option("--out", render.out, "Output directory");
  r->add_option("--canvas", render.canvas, "SVG canvas size")->capture_default_str();

  ConvertArgs convert;
  auto* c = app.add_subcommand("convert", "Convert detection-style annotations to the canonical format");
  c->add_option("--source", convert.source, "publaynet or rico")->required()->check(CLI::IsMember({"publaynet", "rico"}));
  c->add_option("--input", convert.input, "Annotation JSON");
  c->add_option("--out", convert.out, "Output directory");

  SynthArgs synth;
  auto* y = app.add_subcommand("synth", "Generate a synthetic corpus");
  y->add_option("--style", synth.style, "grid, columns or segments")->capture_default_str()->check(
      CLI::IsMember({"grid", "columns", "segments"}));
  y->add_option("--n", synth.n, "Records")->capture_default_str();
  y->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  y->add_option("--n-max", synth.n_max, "Tokens per record")->capture_default_str();
  y->add_option("--num-categories", synth.num_categories, "Category count")->capture_default_str();
  y->add_option("--k-segments", synth.k_segments, "Segments per image (segments style)")->capture_default_str();
  y->add_option("--out", synth.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: kind=usage message=" << one_line(ex.what()) << "\n";
    const CLI::App* sub = nullptr;
    for (const auto* candidate : app.get_subcommands()) sub = candidate;
    err << (sub ? sub->help() : app.help());
    return 2;
  }
  try {
    if (t->parsed()) return run_train(train, out);
    if (s->parsed()) return run_sample(sample, out);
    if (e->parsed()) return run_eval(eval, out);
    if (r->parsed()) return run_render(render, out);
    if (c->parsed()) return run_convert(convert, out);
    if (y->parsed()) return run_synth(synth, out);
  } catch (const Error& ex) {
    err << "error: kind=" << to_string(ex.kind()) << " message=" << one_line(ex.what()) << "\n";
    return 1;
  } catch (const fs::filesystem_error& ex) {
    err << "error: kind=io message=" << one_line(ex.what()) << "\n";
    return 1;
  } catch (const std::exception& ex) {
    err << "error: kind=internal message=" << one_line(ex.what()) << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dolfin
