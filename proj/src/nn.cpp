// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "phraseqa/errors.hpp"

namespace phraseqa {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kCheckpointMagic[4] = {'E', 'Q', 'N', 'N'};
constexpr std::uint32_t kCheckpointVersion = 1;

double round_to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

template <typename T>
void put(std::vector<char>& out, T value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const char> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::kFormatError, "checkpoint is truncated");
  }
  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

void check_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) fail(ErrorCode::kNonFinite, std::string(what) + " contains NaN or Inf");
}

void require_shape(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kShapeMismatch, what);
}

ParamId ParamSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (by_name_.count(name)) fail(ErrorCode::kInvalidArgument, "duplicate parameter group " + name);
  ParamGroup g;
  g.name = name;
  g.value = Matrix::Zero(rows, cols);
  g.grad = Matrix::Zero(rows, cols);
  g.first_moment = Matrix::Zero(rows, cols);
  g.second_moment = Matrix::Zero(rows, cols);
  const ParamId id = groups_.size();
  groups_.push_back(std::move(g));
  by_name_.emplace(name, id);
  return id;
}

const ParamGroup* ParamSet::find(std::string_view name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : &groups_[it->second];
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += static_cast<std::size_t>(g.value.size());
  return n;
}

void ParamSet::zero_grad() {
  for (auto& g : groups_) g.grad.setZero();
}

void ParamSet::accumulate(const GradSet& grads, double scale) {
  require_shape(grads.size() == groups_.size(), "gradient buffer does not match parameter set");
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (scale == 1.0)
      groups_[i].grad += grads[i];
    else
      groups_[i].grad += scale * grads[i];
  }
}

void ParamSet::round_values_to_float() {
  for (auto& g : groups_) g.value = g.value.unaryExpr(&round_to_float);
}

bool ParamSet::values_equal(const ParamSet& other) const {
  if (groups_.size() != other.groups_.size()) return false;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].name != other.groups_[i].name) return false;
    if (groups_[i].value.rows() != other.groups_[i].value.rows() ||
        groups_[i].value.cols() != other.groups_[i].value.cols())
      return false;
    if (groups_[i].value != other.groups_[i].value) return false;
  }
  return true;
}

GradSet::GradSet(const ParamSet& params) {
  grads_.reserve(params.size());
  for (const auto& g : params) grads_.push_back(Matrix::Zero(g.value.rows(), g.value.cols()));
}

void GradSet::zero() {
  for (auto& g : grads_) g.setZero();
}

void GradSet::add(const GradSet& other) {
  require_shape(other.grads_.size() == grads_.size(), "gradient buffers differ in layout");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
}

void init_normal(ParamGroup& group, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < group.value.size(); ++i)
    group.value.data()[i] = round_to_float(rng.normal(0.0, stddev));
}

void init_constant(ParamGroup& group, double value) { group.value.setConstant(round_to_float(value)); }

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  require_shape(x.cols() == w.rows(), "affine: input " + shape_str(x) + " vs weight " + shape_str(w));
  require_shape(b.rows() == 1 && b.cols() == w.cols(), "affine: bias " + shape_str(b) + " vs weight " + shape_str(w));
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

Matrix affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db) {
  require_shape(dy.rows() == x.rows() && dy.cols() == w.cols(), "affine_backward: upstream gradient shape");
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  return dy * w.transpose();
}

Affine Affine::create(ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index out) {
  Affine a;
  a.w = params.add(name + ".w", in, out);
  a.b = params.add(name + ".b", 1, out);
  return a;
}

void Affine::init(ParamSet& params, Rng& rng) const {
  auto& w_group = params[w];
  // Glorot-normal.
  const double stddev = std::sqrt(2.0 / static_cast<double>(w_group.value.rows() + w_group.value.cols()));
  init_normal(w_group, rng, stddev);
  init_constant(params[b], 0.0);
}

Matrix Affine::forward(const ParamSet& params, const Matrix& x) const {
  return affine(x, params.value(w), params.value(b));
}

Matrix Affine::backward(const ParamSet& params, GradSet& grads, const Matrix& x, const Matrix& dy) const {
  return affine_backward(x, params.value(w), dy, grads[w], grads[b]);
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps, LayerNormCache* cache) {
  const Eigen::Index d = x.cols();
  require_shape(gain.size() == d && bias.size() == d, "layer_norm: gain/bias length must equal cols");
  Matrix normalized(x.rows(), d);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const RowVector centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = centered * inv_std(r);
  }
  Matrix y = normalized.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& gain, const Matrix& dy, Matrix& dgain,
                           Matrix& dbias) {
  const Matrix& xhat = cache.normalized;
  const auto d = static_cast<double>(xhat.cols());
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / d;
    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / d;
    dx.row(r) = cache.inv_std(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

LayerNorm LayerNorm::create(ParamSet& params, const std::string& name, Eigen::Index dim, double eps) {
  LayerNorm ln;
  ln.gain = params.add(name + ".gain", 1, dim);
  ln.bias = params.add(name + ".bias", 1, dim);
  ln.eps = eps;
  return ln;
}

void LayerNorm::init(ParamSet& params) const {
  init_constant(params[gain], 1.0);
  init_constant(params[bias], 0.0);
}

Matrix LayerNorm::forward(const ParamSet& params, const Matrix& x, LayerNormCache* cache) const {
  return layer_norm(x, params.value(gain), params.value(bias), eps, cache);
}

Matrix LayerNorm::backward(const ParamSet& params, GradSet& grads, const LayerNormCache& cache,
                           const Matrix& dy) const {
  return layer_norm_backward(cache, params.value(gain), dy, grads[gain], grads[bias]);
}

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  const double inv_sqrt_2pi = 0.5 * M_2_SQRTPI * M_SQRT1_2;
  Matrix d = x.unaryExpr([inv_sqrt_2pi](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    return cdf + v * pdf;
  });
  return d.cwiseProduct(dy);
}

Matrix tanh_forward(const Matrix& x) { return x.array().tanh().matrix(); }

Matrix tanh_backward(const Matrix& y, const Matrix& dy) {
  return (dy.array() * (1.0 - y.array().square())).matrix();
}

Matrix dropout(const Matrix& x, double rate, Rng* rng, Matrix* mask) {
  if (rng == nullptr || rate <= 0.0) {
    if (mask) *mask = Matrix::Ones(x.rows(), x.cols());
    return x;
  }
  const double keep = 1.0 - rate;
  Matrix m(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
  Matrix y = x.cwiseProduct(m);
  if (mask) *mask = std::move(m);
  return y;
}

AttentionParams AttentionParams::create(ParamSet& params, const std::string& prefix, Eigen::Index d_model) {
  AttentionParams a;
  a.query = Affine::create(params, prefix + ".query", d_model, d_model);
  a.key = Affine::create(params, prefix + ".key", d_model, d_model);
  a.value = Affine::create(params, prefix + ".value", d_model, d_model);
  a.output = Affine::create(params, prefix + ".output", d_model, d_model);
  return a;
}

void AttentionParams::init(ParamSet& params, Rng& rng) const {
  query.init(params, rng);
  key.init(params, rng);
  value.init(params, rng);
  output.init(params, rng);
}

Matrix multi_head_self_attention(const ParamSet& params, const AttentionParams& attn, const Matrix& x, int n_heads,
                                 std::span<const std::uint8_t> attend, AttentionCache* cache) {
  const Eigen::Index m = x.rows();
  const Eigen::Index d = x.cols();
  require_shape(n_heads > 0 && d % n_heads == 0, "attention: d_model not divisible by n_heads");
  require_shape(static_cast<Eigen::Index>(attend.size()) == m, "attention: mask length must equal sequence length");
  if (m > 0 && std::none_of(attend.begin(), attend.end(), [](std::uint8_t a) { return a != 0; }))
    fail(ErrorCode::kAllMasked, "attention: every key is masked");

  const Eigen::Index dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix q = attn.query.forward(params, x);
  Matrix k = attn.key.forward(params, x);
  Matrix v = attn.value.forward(params, x);
  Matrix context(m, d);
  std::vector<Matrix> weights;
  weights.reserve(static_cast<std::size_t>(n_heads));

  for (int h = 0; h < n_heads; ++h) {
    const Eigen::Index c0 = h * dh;
    Matrix scores = q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose() * scale;
    for (Eigen::Index r = 0; r < m; ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < m; ++j)
        if (attend[static_cast<std::size_t>(j)]) mx = std::max(mx, scores(r, j));
      double z = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        const double e = attend[static_cast<std::size_t>(j)] ? std::exp(scores(r, j) - mx) : 0.0;
        scores(r, j) = e;
        z += e;
      }
      scores.row(r) /= z;
    }
    context.middleCols(c0, dh).noalias() = scores * v.middleCols(c0, dh);
    weights.push_back(std::move(scores));
  }

  Matrix y = attn.output.forward(params, context);
  if (cache) {
    cache->input = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->weights = std::move(weights);
    cache->context = std::move(context);
  }
  return y;
}

Matrix multi_head_self_attention_backward(const ParamSet& params, const AttentionParams& attn, GradSet& grads,
                                          const AttentionCache& cache, int n_heads, const Matrix& dy) {
  const Eigen::Index m = cache.input.rows();
  const Eigen::Index d = cache.input.cols();
  const Eigen::Index dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix dcontext = attn.output.backward(params, grads, cache.context, dy);
  Matrix dq(m, d), dk(m, d), dv(m, d);
  for (int h = 0; h < n_heads; ++h) {
    const Eigen::Index c0 = h * dh;
    const Matrix& a = cache.weights[static_cast<std::size_t>(h)];
    const auto dctx_h = dcontext.middleCols(c0, dh);
    const Matrix da = dctx_h * cache.v.middleCols(c0, dh).transpose();
    dv.middleCols(c0, dh).noalias() = a.transpose() * dctx_h;
    Matrix ds = a.cwiseProduct(da);
    const Eigen::VectorXd row_dot = ds.rowwise().sum();
    ds -= (a.array().colwise() * row_dot.array()).matrix();
    dq.middleCols(c0, dh).noalias() = ds * cache.k.middleCols(c0, dh) * scale;
    dk.middleCols(c0, dh).noalias() = ds.transpose() * cache.q.middleCols(c0, dh) * scale;
  }
  Matrix dx = attn.query.backward(params, grads, cache.input, dq);
  dx += attn.key.backward(params, grads, cache.input, dk);
  dx += attn.value.backward(params, grads, cache.input, dv);
  return dx;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  return masked_log_softmax(logits, 0, logits.size());
}

std::vector<double> masked_log_softmax(std::span<const double> logits, std::size_t lo, std::size_t hi) {
  hi = std::min(hi, logits.size());
  std::vector<double> out(logits.size(), -std::numeric_limits<double>::infinity());
  if (lo >= hi) return out;
  const double mx = *std::max_element(logits.begin() + static_cast<std::ptrdiff_t>(lo),
                                      logits.begin() + static_cast<std::ptrdiff_t>(hi));
  double z = 0.0;
  for (std::size_t i = lo; i < hi; ++i) z += std::exp(logits[i] - mx);
  const double log_z = mx + std::log(z);
  for (std::size_t i = lo; i < hi; ++i) out[i] = logits[i] - log_z;
  return out;
}

CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t target) {
  return masked_softmax_cross_entropy(logits, 0, logits.size(), target);
}

CrossEntropy masked_softmax_cross_entropy(std::span<const double> logits, std::size_t lo, std::size_t hi,
                                          std::size_t target) {
  hi = std::min(hi, logits.size());
  if (target < lo || target >= hi)
    fail(ErrorCode::kIndexOutOfRange,
         "target " + std::to_string(target) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + ")");
  const auto lp = masked_log_softmax(logits, lo, hi);
  CrossEntropy ce;
  ce.loss = -lp[target];
  ce.grad.assign(logits.size(), 0.0);
  for (std::size_t i = lo; i < hi; ++i) ce.grad[i] = std::exp(lp[i]);
  ce.grad[target] -= 1.0;
  return ce;
}

void AdamWConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorCode::kConfigError, "learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail(ErrorCode::kConfigError, "beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail(ErrorCode::kConfigError, "beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail(ErrorCode::kConfigError, "epsilon must be > 0");
  if (!(weight_decay >= 0.0)) fail(ErrorCode::kConfigError, "weight_decay must be >= 0");
}

void adamw_step(ParamSet& params, const AdamWConfig& config) {
  config.validate();
  for (const auto& g : params)
    if (!g.grad.allFinite()) fail(ErrorCode::kNonFiniteGradient, "gradient of " + g.name + " contains NaN or Inf");

  const double lr = config.learning_rate;
  for (auto& g : params) {
    ++g.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(g.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(g.step));
    g.value *= 1.0 - lr * config.weight_decay;
    g.first_moment = config.beta1 * g.first_moment + (1.0 - config.beta1) * g.grad;
    g.second_moment = config.beta2 * g.second_moment + (1.0 - config.beta2) * g.grad.cwiseAbs2();
    const double step_size = lr / bc1;
    const double inv_sqrt_bc2 = 1.0 / std::sqrt(bc2);
    g.value.array() -= step_size * g.first_moment.array() /
                       (g.second_moment.array().sqrt() * inv_sqrt_bc2 + config.epsilon);
    g.value = g.value.unaryExpr(&round_to_float);
    g.grad.setZero();
  }
}

LinearSchedule::LinearSchedule(double base_lr, std::int64_t total_steps, double warmup_fraction)
    : base_lr_(base_lr),
      total_steps_(std::max<std::int64_t>(total_steps, 1)),
      warmup_steps_(static_cast<std::int64_t>(std::floor(warmup_fraction * static_cast<double>(total_steps_)))) {
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    fail(ErrorCode::kConfigError, "warmup fraction must lie in [0, 1)");
}

double LinearSchedule::rate(std::int64_t step) const {
  if (step < warmup_steps_)
    return base_lr_ * static_cast<double>(step + 1) / static_cast<double>(warmup_steps_ + 1);
  const double remaining = static_cast<double>(total_steps_ - step);
  const double span = static_cast<double>(total_steps_ - warmup_steps_);
  return base_lr_ * std::clamp(remaining / span, 0.0, 1.0);
}

GradCheckResult grad_check(const std::function<double()>& loss, ParamSet& params, const GradCheckOptions& options) {
  GradCheckResult result;
  Rng rng(options.seed);
  for (auto& g : params) {
    const auto n = static_cast<std::size_t>(g.value.size());
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (options.samples_per_group > 0 && options.samples_per_group < n) {
      std::shuffle(coords.begin(), coords.end(), rng.engine());
      coords.resize(options.samples_per_group);
    }
    for (std::size_t c : coords) {
      double& slot = g.value.data()[c];
      const double saved = slot;
      slot = saved + options.eps;
      const double up = loss();
      slot = saved - options.eps;
      const double down = loss();
      slot = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double analytic = g.grad.data()[c];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), options.floor});
      const double rel = std::abs(numeric - analytic) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_group = g.name;
      }
      ++result.checked;
    }
  }
  return result;
}

std::vector<char> serialize_checkpoint(const ParamSet& params) {
  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& g : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(g.name.size()));
    out.insert(out.end(), g.name.begin(), g.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(g.value.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(g.value.cols()));
    for (Eigen::Index i = 0; i < g.value.size(); ++i) put<float>(out, static_cast<float>(g.value.data()[i]));
  }
  return out;
}

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoError, "short write to " + path.string());
}

void deserialize_checkpoint(ParamSet& params, std::span<const char> bytes) {
  Reader r(bytes);
  if (r.get_string(4) != std::string(kCheckpointMagic, 4)) fail(ErrorCode::kFormatError, "bad checkpoint magic");
  if (r.get<std::uint32_t>() != kCheckpointVersion) fail(ErrorCode::kFormatError, "unsupported checkpoint version");
  const auto count = r.get<std::uint32_t>();
  if (count != params.size())
    fail(ErrorCode::kFormatError, "checkpoint has " + std::to_string(count) + " groups, model expects " +
                                      std::to_string(params.size()));
  std::vector<Matrix> staged;
  staged.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.get_string(r.get<std::uint32_t>());
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    const auto& g = params[i];
    if (name != g.name) fail(ErrorCode::kFormatError, "checkpoint group '" + name + "' where '" + g.name + "' expected");
    if (rows != g.value.rows() || cols != g.value.cols())
      fail(ErrorCode::kFormatError, "checkpoint group " + name + " has shape " + std::to_string(rows) + "x" +
                                        std::to_string(cols) + ", model expects " + shape_str(g.value));
    Matrix m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<double>(r.get<float>());
    staged.push_back(std::move(m));
  }
  if (!r.done()) fail(ErrorCode::kFormatError, "trailing bytes after checkpoint");
  for (std::uint32_t i = 0; i < count; ++i) params[i].value = std::move(staged[i]);
}

void load_checkpoint(ParamSet& params, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  deserialize_checkpoint(params, bytes);
}

}  // namespace phraseqa
