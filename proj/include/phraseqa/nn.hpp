// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal neural substrate: parameter storage, hand-written forward/backward
// kernels for the layers the encoder needs, AdamW, a linear learning-rate
// schedule, finite-difference gradient checking and the EQNN checkpoint
// format.
//
// Everything computes in double precision. Parameter values are kept
// representable as 32-bit floats (rounded at init and after every optimizer
// step) so that checkpoints round-trip bit-exactly.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "phraseqa/rng.hpp"

namespace phraseqa {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

void check_finite(const Matrix& m, std::string_view what);
void require_shape(bool ok, const std::string& what);

struct ParamGroup {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix first_moment;
  Matrix second_moment;
  std::int64_t step = 0;
};

using ParamId = std::size_t;
class GradSet;

class ParamSet {
 public:
  ParamId add(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  ParamGroup& operator[](ParamId id) { return groups_[id]; }
  const ParamGroup& operator[](ParamId id) const { return groups_[id]; }
  const Matrix& value(ParamId id) const { return groups_[id].value; }

  const ParamGroup* find(std::string_view name) const;
  std::size_t size() const { return groups_.size(); }
  std::size_t parameter_count() const;

  auto begin() { return groups_.begin(); }
  auto end() { return groups_.end(); }
  auto begin() const { return groups_.begin(); }
  auto end() const { return groups_.end(); }

  void zero_grad();
  // Adds a gradient buffer into the groups' grad fields.
  void accumulate(const GradSet& grads, double scale = 1.0);
  // Rounds every value to the nearest 32-bit float.
  void round_values_to_float();

  bool values_equal(const ParamSet& other) const;

 private:
  std::vector<ParamGroup> groups_;
  std::map<std::string, ParamId, std::less<>> by_name_;
};

// Gradient buffer shaped like a ParamSet; one per worker or example so that
// reductions happen in a fixed order.
class GradSet {
 public:
  GradSet() = default;
  explicit GradSet(const ParamSet& params);

  Matrix& operator[](ParamId id) { return grads_[id]; }
  const Matrix& operator[](ParamId id) const { return grads_[id]; }
  std::size_t size() const { return grads_.size(); }

  void zero();
  void add(const GradSet& other);

 private:
  std::vector<Matrix> grads_;
};

// Initializers. Values are rounded to float.
void init_normal(ParamGroup& group, Rng& rng, double stddev);
void init_constant(ParamGroup& group, double value);

// y = x W + b, b broadcast over rows.
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b);
// Accumulates dW and db, returns dL/dx.
Matrix affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db);

struct Affine {
  ParamId w = 0;
  ParamId b = 0;

  static Affine create(ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index out);
  void init(ParamSet& params, Rng& rng) const;
  Matrix forward(const ParamSet& params, const Matrix& x) const;
  Matrix backward(const ParamSet& params, GradSet& grads, const Matrix& x, const Matrix& dy) const;
};

struct LayerNormCache {
  Matrix normalized;
  Eigen::VectorXd inv_std;
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                  LayerNormCache* cache = nullptr);
Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& gain, const Matrix& dy,
                           Matrix& dgain, Matrix& dbias);

struct LayerNorm {
  ParamId gain = 0;
  ParamId bias = 0;
  double eps = 1e-5;

  static LayerNorm create(ParamSet& params, const std::string& name, Eigen::Index dim, double eps);
  void init(ParamSet& params) const;
  Matrix forward(const ParamSet& params, const Matrix& x, LayerNormCache* cache) const;
  Matrix backward(const ParamSet& params, GradSet& grads, const LayerNormCache& cache, const Matrix& dy) const;
};

// Exact (erf) GELU.
Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

Matrix tanh_forward(const Matrix& x);
// Takes the forward output.
Matrix tanh_backward(const Matrix& y, const Matrix& dy);

// Inverted dropout. With rng == nullptr or rate == 0 the mask is all ones.
Matrix dropout(const Matrix& x, double rate, Rng* rng, Matrix* mask);

struct AttentionParams {
  Affine query;
  Affine key;
  Affine value;
  Affine output;

  static AttentionParams create(ParamSet& params, const std::string& prefix, Eigen::Index d_model);
  void init(ParamSet& params, Rng& rng) const;
};

struct AttentionCache {
  Matrix input;
  Matrix q, k, v;
  std::vector<Matrix> weights;  // per head, m x m
  Matrix context;               // concatenated heads before the output projection
};

// Scaled dot-product self-attention over `n_heads` heads. `attend[j] != 0`
// marks key j as visible; masked keys get exactly zero weight.
Matrix multi_head_self_attention(const ParamSet& params, const AttentionParams& attn, const Matrix& x,
                                 int n_heads, std::span<const std::uint8_t> attend,
                                 AttentionCache* cache = nullptr);
Matrix multi_head_self_attention_backward(const ParamSet& params, const AttentionParams& attn, GradSet& grads,
                                          const AttentionCache& cache, int n_heads, const Matrix& dy);

std::vector<double> log_softmax(std::span<const double> logits);
// Log-softmax restricted to [lo, hi); entries outside get -infinity.
std::vector<double> masked_log_softmax(std::span<const double> logits, std::size_t lo, std::size_t hi);

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad;  // softmax - one_hot(target)
};

CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t target);
// Cross-entropy over logits[lo, hi) only; grad is zero outside the window.
CrossEntropy masked_softmax_cross_entropy(std::span<const double> logits, std::size_t lo, std::size_t hi,
                                          std::size_t target);

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

// Decoupled weight decay: value *= 1 - lr * weight_decay, then the Adam
// update from the bias-corrected moments. Zeroes grads afterwards.
void adamw_step(ParamSet& params, const AdamWConfig& config);

// Linear warmup to the base rate, then linear decay to zero at total_steps.
class LinearSchedule {
 public:
  LinearSchedule(double base_lr, std::int64_t total_steps, double warmup_fraction = 0.0);
  double rate(std::int64_t step) const;

 private:
  double base_lr_;
  std::int64_t total_steps_;
  std::int64_t warmup_steps_;
};

struct GradCheckOptions {
  double eps = 1e-6;
  // Coordinates sampled per group; 0 checks every coordinate.
  std::size_t samples_per_group = 0;
  // Denominator floor for the relative error. Central differences carry
  // ~1e-10 of roundoff, so gradients below the floor are compared absolutely.
  double floor = 1e-4;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_group;
  std::size_t checked = 0;
};

// Compares params' analytic grads (already populated) with central
// differences of `loss`. Values are restored afterwards.
GradCheckResult grad_check(const std::function<double()>& loss, ParamSet& params,
                           const GradCheckOptions& options = {});

// EQNN checkpoint: magic, version, group count, then per group
// (name length, name, rows, cols, little-endian f32 values).
void save_checkpoint(const ParamSet& params, const std::filesystem::path& path);
std::vector<char> serialize_checkpoint(const ParamSet& params);
// Loads into an existing layout; every group must be present with the same shape.
void load_checkpoint(ParamSet& params, const std::filesystem::path& path);
void deserialize_checkpoint(ParamSet& params, std::span<const char> bytes);

}  // namespace phraseqa
