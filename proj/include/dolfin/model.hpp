#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dolfin/params.hpp"

namespace dolfin {

struct ModelConfig {
  int layers = 4;
  int heads = 8;
  int hidden = 512;
  int token_dim = 16;
  int n_max = 16;
  int mlp_ratio = 4;
  bool variance_head = false;
  bool ar_mode = false;

  void validate() const;

  int head_dim() const { return hidden / heads; }
  int out_dim() const { return variance_head ? 2 * token_dim : token_dim; }
  int freq_dim() const { return hidden % 2 == 0 ? hidden : hidden + 1; }
  /// Learned positions: data tokens, plus START and the noise prefix in AR mode.
  int positions() const { return ar_mode ? 2 * n_max + 1 : n_max; }

  /// Parameter count derived from the architecture, without building it.
  std::size_t parameter_count() const;

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelConfig&) const = default;
};

struct BlockSlots {
  std::size_t mod_w, mod_b;
  std::size_t qkv_w, qkv_b;
  std::size_t proj_w, proj_b;
  std::size_t fc1_w, fc1_b;
  std::size_t fc2_w, fc2_b;
};

struct DenoiserSlots {
  static constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::size_t in_w, in_b;
  std::size_t pos;
  std::size_t segment_type = none;
  std::size_t start = none;
  std::size_t t1_w, t1_b, t2_w, t2_b;
  std::vector<BlockSlots> blocks;
  std::size_t final_mod_w, final_mod_b;
  std::size_t head_w, head_b;
};

/// Slot table for every learnable tensor of a config; pure function of the config.
std::pair<SlotTable, DenoiserSlots> denoiser_layout(const ModelConfig& cfg);

template <class S>
struct DenoiserParams {
  ModelConfig config;
  SlotTable table;
  DenoiserSlots slots;
  std::vector<S> values;

  auto map(std::size_t slot) { return table.map(values, slot); }
  auto map(std::size_t slot) const { return table.map(values, slot); }

  template <class U>
  DenoiserParams<U> cast() const {
    DenoiserParams<U> out{config, table, slots, {}};
    out.values.assign(values.begin(), values.end());
    return out;
  }
};

/// Deterministic initialization. The output head and every adaptive-norm
/// modulation are zero, so a fresh model predicts exactly zero.
template <class S>
DenoiserParams<S> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Sinusoidal features of a timestep (cos half then sin half).
template <class S>
Vec<S> timestep_frequencies(int t, int dim);

/// Timestep embedding: sinusoidal features through a two-layer SiLU perceptron.
template <class S>
Vec<S> embed_timestep(const DenoiserParams<S>& params, int t);

template <class S>
struct VariancePrediction {
  std::vector<Mat<S>> eps_hat;
  /// Per-entry interpolation coefficients; empty without a variance head.
  std::vector<Mat<S>> var_hat;
};

/// One pass with full bidirectional attention over each sample's tokens.
template <class S>
VariancePrediction<S> forward_nonar(const DenoiserParams<S>& params, const std::vector<Mat<S>>& tokens,
                                    std::span<const int> t);

/// Noise prediction for token i = noise_prefix.rows(), given the noised
/// tokens and the noise of tokens 0..i-1.
template <class S>
Mat<S> forward_ar(const DenoiserParams<S>& params, const Mat<S>& tokens, const Mat<S>& noise_prefix,
                  int t);

/// Every AR prediction in one masked pass with teacher-forced noise; row i
/// depends only on tokens, t and noise rows 0..i-1.
template <class S>
Mat<S> forward_ar_teacher_forced(const DenoiserParams<S>& params, const Mat<S>& tokens,
                                 const Mat<S>& noise, int t);

/// How a sequence is assembled from token rows, and what is read out.
template <class S>
struct SequenceSpec {
  Mat<S> token_rows;         // rows fed through the input projection
  std::vector<int> source;   // per position: token row index, or -1 for START
  std::vector<int> segment;  // per position segment type (AR only), else empty
  std::vector<int> readout;  // positions whose output head rows are returned
  int boundary = 0;          // keys k < boundary are visible to all; later keys causally
  int t = 0;

  int length() const { return static_cast<int>(source.size()); }
};

template <class S>
SequenceSpec<S> nonar_sequence(const ModelConfig& cfg, const Mat<S>& xt, int t);

template <class S>
SequenceSpec<S> ar_teacher_sequence(const ModelConfig& cfg, const Mat<S>& xt, const Mat<S>& noise,
                                    int t);

template <class S>
struct ForwardCache;

template <class S>
struct ForwardCacheDeleter {
  void operator()(ForwardCache<S>* p) const;
};

template <class S>
using ForwardCachePtr = std::unique_ptr<ForwardCache<S>, ForwardCacheDeleter<S>>;

/// Forward pass that records what backward needs. Returns readout rows x out_dim.
template <class S>
Mat<S> forward_sequence(const DenoiserParams<S>& params, const SequenceSpec<S>& spec,
                        ForwardCachePtr<S>* cache);

/// Accumulates d(loss)/d(params) into `grad` (same layout as params.values).
template <class S>
void backward_sequence(const DenoiserParams<S>& params, const SequenceSpec<S>& spec,
                       const ForwardCache<S>& cache, const Mat<S>& d_out, std::vector<S>& grad);

/// Incremental AR inference. Data tokens and START are encoded once; each
/// appended noise token reuses the cached keys and values.
template <class S>
class ArSession {
 public:
  explicit ArSession(const DenoiserParams<S>& params);
  ~ArSession();
  ArSession(const ArSession&) = delete;
  ArSession& operator=(const ArSession&) = delete;

  void begin(const Mat<S>& tokens, int t);
  /// Prediction for the token after the current prefix.
  Mat<S> prediction() const;
  void append(const Mat<S>& noise_row);
  int prefix_length() const;

 private:
  struct State;
  const DenoiserParams<S>& params_;
  std::unique_ptr<State> state_;
};

}  // namespace dolfin
