#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "tacsync/core.hpp"
#include "tacsync/error.hpp"
#include "tacsync/gelsim.hpp"
#include "tacsync/parallel.hpp"
#include "tacsync/rng.hpp"

namespace tacsync::calib {

using gelsim::Dataset;
using gelsim::InputMode;

/// Per-channel colour correction applied to a target sensor's input before it
/// reaches a model: c' = gain * c + delta. Plain zero-shot transfer only
/// estimates delta; gain stays 1 unless the gain extension is requested.
struct TransferOffsets {
  Vec3 delta{0.0, 0.0, 0.0};
  Vec3 gain{1.0, 1.0, 1.0};

  bool is_identity() const { return delta == Vec3{0.0, 0.0, 0.0} && gain == Vec3{1.0, 1.0, 1.0}; }

  double apply(std::size_t c, double v) const { return gain[c] * v + delta[c]; }

  // this applied after `inner`
  TransferOffsets after(const TransferOffsets& inner) const {
    TransferOffsets out;
    for (std::size_t c = 0; c < 3; ++c) {
      out.gain[c] = gain[c] * inner.gain[c];
      out.delta[c] = gain[c] * inner.delta[c] + delta[c];
    }
    return out;
  }
};

struct EstimateOptions {
  // Extension: also fit a per-channel gain by least squares. Off by default.
  bool estimate_gain = false;
};

/// Per-channel alignment of a target capture to a reference capture of the
/// same stimulus: delta_c = mean over pixels of (reference_c - target_c).
template <typename Range>
TransferOffsets estimate_channel_offsets(const BasicFrame<Range>& reference, const BasicFrame<Range>& target,
                                         EstimateOptions opts = {}) {
  if (reference.height() != target.height() || reference.width() != target.width())
    throw DimensionMismatch("estimate_channel_offsets: captures differ in shape");
  const auto r = reference.values();
  const auto t = target.values();
  const std::size_t n = reference.height() * reference.width();
  TransferOffsets out;
  for (std::size_t c = 0; c < kColorChannels; ++c) {
    double sr = 0.0, st = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      sr += r[p * kColorChannels + c];
      st += t[p * kColorChannels + c];
    }
    if (!opts.estimate_gain) {
      double sd = 0.0;
      for (std::size_t p = 0; p < n; ++p) sd += r[p * kColorChannels + c] - t[p * kColorChannels + c];
      out.delta[c] = sd / static_cast<double>(n);
      continue;
    }
    const double mr = sr / static_cast<double>(n), mt = st / static_cast<double>(n);
    double stt = 0.0, srt = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double dt = t[p * kColorChannels + c] - mt;
      stt += dt * dt;
      srt += dt * (r[p * kColorChannels + c] - mr);
    }
    out.gain[c] = stt > 0.0 ? srt / stt : 1.0;
    out.delta[c] = mr - out.gain[c] * mt;
  }
  return out;
}

// Adds a per-channel constant; throws if the result leaves the value range.
template <typename Range>
BasicFrame<Range> add_channel_offsets(const BasicFrame<Range>& f, const Vec3& delta) {
  std::vector<double> v(f.values().begin(), f.values().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += delta[i % kColorChannels];
  return BasicFrame<Range>(f.meta(), f.height(), f.width(), std::move(v));
}

struct Mae {
  double gx = 0.0;
  double gy = 0.0;
};

/// Mean absolute error of each gradient component over every pixel of every
/// capture. Model is anything with predict(FrameView) -> GradientField.
template <typename Model>
Mae evaluate_mae(const Model& model, const Dataset& test) {
  if (test.empty()) throw InvalidArgument("evaluate_mae: empty test set");
  double ex = 0.0, ey = 0.0;
  std::size_t count = 0;
  for (const auto& e : test.entries) {
    const GradientField pred = model.predict(gelsim::view_of(e.input));
    if (pred.height() != e.truth.height() || pred.width() != e.truth.width())
      throw DimensionMismatch("evaluate_mae: prediction shape differs from ground truth");
    for (std::size_t i = 0; i < pred.gx().size(); ++i) {
      ex += std::abs(pred.gx()[i] - e.truth.gx()[i]);
      ey += std::abs(pred.gy()[i] - e.truth.gy()[i]);
    }
    count += pred.gx().size();
  }
  return {ex / static_cast<double>(count), ey / static_cast<double>(count)};
}

// Predicts one gradient everywhere.
struct ConstantModel {
  double gx = 0.0;
  double gy = 0.0;

  GradientField predict(const FrameView& v) const {
    const std::size_t n = v.height * v.width;
    return GradientField(v.height, v.width, std::vector<double>(n, gx), std::vector<double>(n, gy));
  }
};

inline ConstantModel fit_global_mean(const Dataset& train) {
  if (train.empty()) throw InvalidArgument("fit_global_mean: empty dataset");
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (const auto& e : train.entries) {
    for (double v : e.truth.gx()) sx += v;
    for (double v : e.truth.gy()) sy += v;
    n += e.truth.gx().size();
  }
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

// ---------------------------------------------------------------------------
// Lookup table

// Bin of v among `bins` equal bins over [lo, hi]; out-of-range values clamp to
// the edge bins and a degenerate range maps everything to bin 0.
inline std::size_t uniform_bin(double lo, double hi, int bins, double v) {
  const double span = hi - lo;
  if (!(span > 0.0)) return 0;
  const double t = (v - lo) / span * bins;
  return static_cast<std::size_t>(std::clamp(t, 0.0, static_cast<double>(bins - 1)));
}

/// Colour-only calibration table: each input channel is quantised into `bins`
/// uniform bins over the range seen at fit time; a cell stores the mean
/// gradient of the training pixels that fell into it. Empty cells answer with
/// the nearest occupied cell (Chebyshev distance in bin space, ties to the
/// lowest linear index).
class LookupTable {
 public:
  LookupTable() = default;

  LookupTable(int bins, Vec3 lo, Vec3 hi, std::vector<float> mean_gx, std::vector<float> mean_gy,
              std::vector<std::uint32_t> counts, InputMode mode)
      : bins_(bins), lo_(lo), hi_(hi), gx_(std::move(mean_gx)), gy_(std::move(mean_gy)),
        counts_(std::move(counts)), mode_(mode) {
    const auto cells = static_cast<std::size_t>(bins_) * bins_ * bins_;
    if (bins_ < 1 || gx_.size() != cells || gy_.size() != cells || counts_.size() != cells)
      throw InvalidArgument("lookup table buffers do not match the bin count");
    bool any = false;
    for (std::size_t i = 0; i < cells; ++i) {
      if (counts_[i] == 0) continue;
      any = true;
      if (!std::isfinite(gx_[i]) || !std::isfinite(gy_[i]))
        throw InvalidField("lookup table cell holds a non-finite mean");
    }
    if (!any) throw InvalidArgument("lookup table has no occupied cell");
    build_fallback();
  }

  int bins() const { return bins_; }
  const Vec3& lo() const { return lo_; }
  const Vec3& hi() const { return hi_; }
  InputMode mode() const { return mode_; }
  const std::vector<float>& mean_gx() const { return gx_; }
  const std::vector<float>& mean_gy() const { return gy_; }
  const std::vector<std::uint32_t>& counts() const { return counts_; }

  std::size_t bin_of(std::size_t c, double v) const { return uniform_bin(lo_[c], hi_[c], bins_, v); }

  std::size_t cell_of(double r, double g, double b) const {
    const auto n = static_cast<std::size_t>(bins_);
    return (bin_of(0, r) * n + bin_of(1, g)) * n + bin_of(2, b);
  }

  // Cell whose mean answers for `cell` (itself when occupied).
  std::size_t source_of(std::size_t cell) const { return source_[cell]; }

  std::array<double, 2> lookup(double r, double g, double b) const {
    const std::size_t s = source_[cell_of(r, g, b)];
    return {gx_[s], gy_[s]};
  }

  GradientField predict(const FrameView& v) const {
    const std::size_t n = v.height * v.width;
    std::vector<double> gx(n), gy(n);
    for (std::size_t p = 0; p < n; ++p) {
      const auto [a, b] = lookup(v.values[3 * p], v.values[3 * p + 1], v.values[3 * p + 2]);
      gx[p] = a;
      gy[p] = b;
    }
    return GradientField(v.height, v.width, std::move(gx), std::move(gy));
  }

 private:
  // Multi-source BFS over the 26-neighbourhood. Graph distance in that
  // neighbourhood equals Chebyshev distance, and propagating the minimum
  // source index layer by layer yields the lowest-index nearest source.
  void build_fallback() {
    const int n = bins_;
    const auto cells = static_cast<std::size_t>(n) * n * n;
    constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
    source_.assign(cells, kNone);
    std::vector<std::size_t> frontier;
    for (std::size_t i = 0; i < cells; ++i)
      if (counts_[i] > 0) {
        source_[i] = static_cast<std::uint32_t>(i);
        frontier.push_back(i);
      }
    std::vector<std::uint32_t> pending(cells, kNone);
    while (!frontier.empty()) {
      std::vector<std::size_t> next;
      for (std::size_t cell : frontier) {
        const int x = static_cast<int>(cell / (static_cast<std::size_t>(n) * n));
        const int y = static_cast<int>((cell / n) % n);
        const int z = static_cast<int>(cell % n);
        for (int dx = -1; dx <= 1; ++dx)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dz = -1; dz <= 1; ++dz) {
              const int a = x + dx, b = y + dy, c = z + dz;
              if (a < 0 || b < 0 || c < 0 || a >= n || b >= n || c >= n) continue;
              const auto nb = (static_cast<std::size_t>(a) * n + b) * n + c;
              if (source_[nb] != kNone) continue;
              if (pending[nb] == kNone) next.push_back(nb);
              pending[nb] = std::min(pending[nb], source_[cell]);
            }
      }
      for (std::size_t cell : next) source_[cell] = pending[cell];
      frontier = std::move(next);
    }
  }

  int bins_ = 0;
  Vec3 lo_{}, hi_{};
  std::vector<float> gx_, gy_;
  std::vector<std::uint32_t> counts_;
  std::vector<std::uint32_t> source_;
  InputMode mode_ = InputMode::Diff;
};

inline LookupTable fit_lookup_table(const Dataset& train, int bins = 32) {
  if (train.empty()) throw InvalidArgument("fit_lookup_table: empty dataset");
  if (bins < 1 || bins > 256) throw InvalidArgument("fit_lookup_table: bins must lie in [1, 256]");
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi{-lo[0], -lo[1], -lo[2]};
  for (const auto& e : train.entries) {
    const FrameView v = gelsim::view_of(e.input);
    for (std::size_t i = 0; i < v.values.size(); ++i) {
      lo[i % 3] = std::min(lo[i % 3], v.values[i]);
      hi[i % 3] = std::max(hi[i % 3], v.values[i]);
    }
  }
  const auto cells = static_cast<std::size_t>(bins) * bins * bins;
  std::vector<double> sx(cells, 0.0), sy(cells, 0.0);
  std::vector<std::uint32_t> counts(cells, 0);
  auto bin_of = [&](std::size_t c, double v) { return uniform_bin(lo[c], hi[c], bins, v); };
  for (const auto& e : train.entries) {
    const FrameView v = gelsim::view_of(e.input);
    const std::size_t n = v.height * v.width;
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t cell =
          (bin_of(0, v.values[3 * p]) * bins + bin_of(1, v.values[3 * p + 1])) * bins + bin_of(2, v.values[3 * p + 2]);
      sx[cell] += e.truth.gx()[p];
      sy[cell] += e.truth.gy()[p];
      ++counts[cell];
    }
  }
  std::vector<float> gx(cells, 0.0f), gy(cells, 0.0f);
  for (std::size_t i = 0; i < cells; ++i)
    if (counts[i] > 0) {
      gx[i] = static_cast<float>(sx[i] / counts[i]);
      gy[i] = static_cast<float>(sy[i] / counts[i]);
    }
  return LookupTable(bins, lo, hi, std::move(gx), std::move(gy), std::move(counts), train.mode);
}

// ---------------------------------------------------------------------------
// MLP

struct MlpHyperparameters {
  std::array<int, 3> hidden{64, 64, 64};
  double dropout = 0.1;
  double learning_rate = 1e-3;
  int batch_size = 4096;
  int epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Cosine annealing of the step size from learning_rate to 0 over the run.
  bool cosine_decay = true;

  void validate() const {
    for (int h : hidden)
      if (h < 1) throw InvalidArgument("hidden layer widths must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (batch_size < 1 || epochs < 1) throw InvalidArgument("batch size and epochs must be >= 1");
  }
};

inline constexpr int kMlpInputs = 5;   // R, G, B, x, y
inline constexpr int kMlpOutputs = 2;  // gx, gy

/// Fully connected 5 -> h1 -> h2 -> h3 -> 2 regressor, tanh on hidden layers.
/// Inputs are (R, G, B, x/(W-1), y/(H-1)), standardised with the statistics
/// captured at fit time; colour inputs first pass through `offsets`.
struct MlpModel {
  std::vector<Eigen::MatrixXf> weights;  // [out x in] per layer
  std::vector<Eigen::VectorXf> biases;
  std::array<double, kMlpInputs> feature_mean{};
  std::array<double, kMlpInputs> feature_std{1.0, 1.0, 1.0, 1.0, 1.0};
  // Network outputs are gradients divided by these (per-component training std).
  std::array<double, kMlpOutputs> target_scale{1.0, 1.0};
  TransferOffsets offsets;
  MlpHyperparameters hyper;
  std::uint64_t seed = 0;
  double final_train_loss = 0.0;
  InputMode mode = InputMode::Diff;
  std::size_t train_height = 0;
  std::size_t train_width = 0;

  std::vector<int> layer_sizes() const {
    std::vector<int> s{static_cast<int>(weights.front().cols())};
    for (const auto& w : weights) s.push_back(static_cast<int>(w.rows()));
    return s;
  }

  void validate() const {
    if (weights.size() != 4 || biases.size() != 4) throw InvalidArgument("MLP must have four weight layers");
    if (weights.front().cols() != kMlpInputs || weights.back().rows() != kMlpOutputs)
      throw InvalidArgument("MLP must map 5 inputs to 2 outputs");
    for (std::size_t l = 0; l < 4; ++l) {
      if (biases[l].size() != weights[l].rows()) throw InvalidArgument("bias size mismatch");
      if (l > 0 && weights[l].cols() != weights[l - 1].rows()) throw InvalidArgument("layer width mismatch");
    }
    for (double s : feature_std)
      if (!(s > 0.0)) throw InvalidArgument("normalisation std must be positive");
    for (double s : target_scale)
      if (!(s > 0.0)) throw InvalidArgument("target scale must be positive");
  }

  Eigen::MatrixXf features(const FrameView& v) const {
    const std::size_t n = v.height * v.width;
    Eigen::MatrixXf x(kMlpInputs, static_cast<Eigen::Index>(n));
    const double sx = v.width > 1 ? 1.0 / static_cast<double>(v.width - 1) : 0.0;
    const double sy = v.height > 1 ? 1.0 / static_cast<double>(v.height - 1) : 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const auto col = static_cast<Eigen::Index>(p);
      for (std::size_t c = 0; c < 3; ++c) {
        const double raw = offsets.apply(c, v.values[3 * p + c]);
        x(static_cast<Eigen::Index>(c), col) = static_cast<float>((raw - feature_mean[c]) / feature_std[c]);
      }
      const double px = static_cast<double>(p % v.width) * sx;
      const double py = static_cast<double>(p / v.width) * sy;
      x(3, col) = static_cast<float>((px - feature_mean[3]) / feature_std[3]);
      x(4, col) = static_cast<float>((py - feature_mean[4]) / feature_std[4]);
    }
    return x;
  }

  Eigen::MatrixXf forward(const Eigen::MatrixXf& x) const {
    Eigen::MatrixXf a = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      Eigen::MatrixXf z = weights[l] * a;
      z.colwise() += biases[l];
      if (l + 1 < weights.size()) z = z.array().tanh();
      a = std::move(z);
    }
    return a;
  }

  /// Per-pixel inference. Positions are normalised by the frame's own size,
  /// so frames of another resolution are accepted only when `rescale` is set.
  GradientField predict(const FrameView& v, bool rescale = false) const {
    if (!rescale && (v.height != train_height || v.width != train_width))
      throw DimensionMismatch("frame is " + std::to_string(v.height) + "x" + std::to_string(v.width) +
                              " but the model was fitted on " + std::to_string(train_height) + "x" +
                              std::to_string(train_width));
    const Eigen::MatrixXf out = forward(features(v));
    const std::size_t n = v.height * v.width;
    std::vector<double> gx(n), gy(n);
    for (std::size_t p = 0; p < n; ++p) {
      gx[p] = target_scale[0] * out(0, static_cast<Eigen::Index>(p));
      gy[p] = target_scale[1] * out(1, static_cast<Eigen::Index>(p));
    }
    return GradientField(v.height, v.width, std::move(gx), std::move(gy));
  }
};

template <typename Range>
GradientField predict_gradients(const MlpModel& m, const BasicFrame<Range>& f, bool rescale = false) {
  return m.predict(f.view(), rescale);
}

template <typename Range>
GradientField predict_gradients(const LookupTable& t, const BasicFrame<Range>& f) {
  return t.predict(f.view());
}

inline InputMode input_mode(const MlpModel& m) { return m.mode; }
inline InputMode input_mode(const LookupTable& t) { return t.mode(); }

// Returns a copy of the model that corrects target-sensor colours before
// inference. Weights and normalisation are untouched.
inline MlpModel transfer_model(MlpModel model, const TransferOffsets& offsets) {
  model.offsets = offsets.after(model.offsets);
  return model;
}

namespace detail {

// Fixed number of samples per gradient chunk. Chunk partial sums are added in
// chunk order, so results do not depend on how many workers run the chunks.
inline constexpr Eigen::Index kChunk = 1024;

struct Adam {
  std::vector<Eigen::MatrixXf> mw, vw;
  std::vector<Eigen::VectorXf> mb, vb;
  long step = 0;
};

// Per-chunk buffers, kept across steps so the hot loop does not allocate.
// inputs[l] feeds layer l (post-dropout); hidden[l] is the tanh output of
// layer l before dropout; masks[l] already carries the 1/keep factor.
struct Workspace {
  Eigen::MatrixXf x, y, out, delta, back;
  std::vector<Eigen::MatrixXf> inputs, hidden, masks;
  std::vector<Eigen::MatrixXf> gw;
  std::vector<Eigen::VectorXf> gb;
  double loss = 0.0;
};

// 16-bit dropout draws: keep when below keep * 65536.
inline void fill_mask(Eigen::MatrixXf& mask, Rng& rng, double keep) {
  const auto threshold = static_cast<std::uint32_t>(std::lround(keep * 65536.0));
  const float scale = static_cast<float>(1.0 / keep);
  float* d = mask.data();
  const Eigen::Index n = mask.size();
  std::uint64_t bits = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if ((i & 3) == 0) bits = rng.next_u64();
    d[i] = (bits & 0xFFFFu) < threshold ? scale : 0.0f;
    bits >>= 16;
  }
}

// Forward and backward pass over ws.x / ws.y; gradients land in ws.gw, ws.gb.
inline void chunk_gradients(const MlpModel& m, Workspace& ws, double keep, std::uint64_t mask_seed,
                            float inv_batch_outputs) {
  const std::size_t layers = m.weights.size();
  ws.inputs.resize(layers);
  ws.hidden.resize(layers - 1);
  ws.masks.resize(layers - 1);
  ws.gw.resize(layers);
  ws.gb.resize(layers);
  ws.inputs[0] = ws.x;
  Rng rng(mask_seed);
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXf& z = l + 1 == layers ? ws.out : ws.hidden[l];
    z.noalias() = m.weights[l] * ws.inputs[l];
    z.colwise() += m.biases[l];
    if (l + 1 == layers) break;
    z = z.array().tanh();
    if (keep < 1.0) {
      ws.masks[l].resize(z.rows(), z.cols());
      fill_mask(ws.masks[l], rng, keep);
      ws.inputs[l + 1] = z.cwiseProduct(ws.masks[l]);
    } else {
      ws.inputs[l + 1] = z;
    }
  }

  ws.delta = ws.out - ws.y;
  // Loss is reported in gradient units, not in the scaled training targets.
  ws.loss = 0.0;
  for (Eigen::Index k = 0; k < kMlpOutputs; ++k) {
    const double s = m.target_scale[static_cast<std::size_t>(k)];
    ws.loss += s * s * static_cast<double>(ws.delta.row(k).squaredNorm());
  }
  ws.delta *= 2.0f * inv_batch_outputs;
  for (std::size_t l = layers; l-- > 0;) {
    ws.gw[l].noalias() = ws.delta * ws.inputs[l].transpose();
    ws.gb[l] = ws.delta.rowwise().sum();
    if (l == 0) break;
    ws.back.noalias() = m.weights[l].transpose() * ws.delta;
    if (keep < 1.0) ws.back.array() *= ws.masks[l - 1].array();
    ws.delta = ws.back.array() * (1.0f - ws.hidden[l - 1].array().square());
  }
}

}  // namespace detail

/// Trains the regressor on every pixel of every capture with mean-squared
/// error, Adam, and inverted dropout after each hidden layer. All randomness
/// (initialisation, shuffling, dropout) derives from `seed`.
inline MlpModel fit_mlp(const Dataset& train, const MlpHyperparameters& hp, std::uint64_t seed) {
  if (train.empty()) throw InvalidArgument("fit_mlp: empty dataset");
  hp.validate();

  const FrameView first = gelsim::view_of(train.entries.front().input);
  MlpModel m;
  m.hyper = hp;
  m.seed = seed;
  m.mode = train.mode;
  m.train_height = first.height;
  m.train_width = first.width;

  // Raw features, then statistics, then standardise in place.
  std::size_t total = 0;
  for (const auto& e : train.entries) {
    const FrameView v = gelsim::view_of(e.input);
    if (v.height != first.height || v.width != first.width)
      throw DimensionMismatch("fit_mlp: captures differ in resolution");
    total += v.height * v.width;
  }
  Eigen::MatrixXf x(kMlpInputs, static_cast<Eigen::Index>(total));
  Eigen::MatrixXf y(kMlpOutputs, static_cast<Eigen::Index>(total));
  {
    MlpModel identity;  // zero mean, unit std, no offsets
    Eigen::Index col = 0;
    for (const auto& e : train.entries) {
      const FrameView v = gelsim::view_of(e.input);
      const auto n = static_cast<Eigen::Index>(v.height * v.width);
      x.middleCols(col, n) = identity.features(v);
      for (Eigen::Index p = 0; p < n; ++p) {
        y(0, col + p) = static_cast<float>(e.truth.gx()[static_cast<std::size_t>(p)]);
        y(1, col + p) = static_cast<float>(e.truth.gy()[static_cast<std::size_t>(p)]);
      }
      col += n;
    }
  }
  for (Eigen::Index f = 0; f < kMlpInputs; ++f) {
    double s = 0.0, s2 = 0.0;
    for (Eigen::Index i = 0; i < x.cols(); ++i) s += x(f, i);
    const double mean = s / static_cast<double>(x.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i) s2 += (x(f, i) - mean) * (x(f, i) - mean);
    double sd = std::sqrt(s2 / static_cast<double>(x.cols()));
    if (!(sd > 1e-12)) sd = 1.0;
    m.feature_mean[static_cast<std::size_t>(f)] = mean;
    m.feature_std[static_cast<std::size_t>(f)] = sd;
    x.row(f) = ((x.row(f).cast<double>().array() - mean) / sd).cast<float>().matrix();
  }

  for (Eigen::Index k = 0; k < kMlpOutputs; ++k) {
    const double rms = std::sqrt(y.row(k).cast<double>().squaredNorm() / static_cast<double>(y.cols()));
    const double sd = rms > 1e-12 ? rms : 1.0;
    m.target_scale[static_cast<std::size_t>(k)] = sd;
    y.row(k) = (y.row(k).cast<double>() / sd).cast<float>();
  }

  // Glorot-uniform initialisation.
  Rng init(derive_seed(seed, "mlp-init"));
  std::vector<int> sizes{kMlpInputs, hp.hidden[0], hp.hidden[1], hp.hidden[2], kMlpOutputs};
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double limit = std::sqrt(6.0 / (sizes[l] + sizes[l + 1]));
    Eigen::MatrixXf w(sizes[l + 1], sizes[l]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(init.uniform(-limit, limit));
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXf::Zero(sizes[l + 1]));
  }

  detail::Adam adam;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    adam.mw.push_back(Eigen::MatrixXf::Zero(m.weights[l].rows(), m.weights[l].cols()));
    adam.vw.push_back(adam.mw.back());
    adam.mb.push_back(Eigen::VectorXf::Zero(m.biases[l].size()));
    adam.vb.push_back(adam.mb.back());
  }

  const double keep = 1.0 - hp.dropout;
  const auto n_samples = x.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_samples));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng shuffle(derive_seed(seed, "mlp-shuffle"));
  const std::size_t workers = worker_count();
  std::vector<detail::Workspace> parts;
  const std::int64_t total_steps =
      static_cast<std::int64_t>(hp.epochs) * ((n_samples + hp.batch_size - 1) / hp.batch_size);

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double epoch_loss = 0.0;
    std::uint64_t batch_index = 0;
    for (Eigen::Index start = 0; start < n_samples; start += hp.batch_size, ++batch_index) {
      const Eigen::Index bsz = std::min<Eigen::Index>(hp.batch_size, n_samples - start);
      const auto n_chunks = static_cast<std::size_t>((bsz + detail::kChunk - 1) / detail::kChunk);
      if (parts.size() < n_chunks) parts.resize(n_chunks);
      const float scale = 1.0f / static_cast<float>(bsz * kMlpOutputs);
      parallel_for(
          n_chunks,
          [&](std::size_t c) {
            detail::Workspace& ws = parts[c];
            const Eigen::Index c0 = start + static_cast<Eigen::Index>(c) * detail::kChunk;
            const Eigen::Index cn = std::min(detail::kChunk, start + bsz - c0);
            ws.x.resize(kMlpInputs, cn);
            ws.y.resize(kMlpOutputs, cn);
            for (Eigen::Index k = 0; k < cn; ++k) {
              const Eigen::Index src = order[static_cast<std::size_t>(c0 + k)];
              ws.x.col(k) = x.col(src);
              ws.y.col(k) = y.col(src);
            }
            const std::uint64_t mask_seed =
                derive_seed(seed, "mlp-dropout", (static_cast<std::uint64_t>(epoch) << 40) ^ (batch_index << 12) ^ c);
            detail::chunk_gradients(m, ws, keep, mask_seed, scale);
          },
          workers);

      detail::Workspace& g = parts.front();
      for (std::size_t c = 1; c < n_chunks; ++c) {
        for (std::size_t l = 0; l < g.gw.size(); ++l) {
          g.gw[l] += parts[c].gw[l];
          g.gb[l] += parts[c].gb[l];
        }
        g.loss += parts[c].loss;
      }
      const double batch_loss = g.loss / static_cast<double>(bsz * kMlpOutputs);
      if (!std::isfinite(batch_loss)) throw TrainingFailure("MLP training diverged: loss is not finite", epoch);
      epoch_loss += batch_loss * static_cast<double>(bsz);

      ++adam.step;
      const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(adam.step));
      double rate = hp.learning_rate;
      if (hp.cosine_decay)
        rate *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(adam.step - 1) /
                                      static_cast<double>(total_steps)));
      const float lr = static_cast<float>(rate * std::sqrt(bc2) / bc1);
      const auto b1 = static_cast<float>(hp.beta1), b2 = static_cast<float>(hp.beta2);
      const auto eps = static_cast<float>(hp.epsilon * std::sqrt(bc2));
      for (std::size_t l = 0; l < m.weights.size(); ++l) {
        adam.mw[l] = b1 * adam.mw[l] + (1.0f - b1) * g.gw[l];
        adam.vw[l] = b2 * adam.vw[l] + (1.0f - b2) * g.gw[l].cwiseAbs2();
        m.weights[l].array() -= lr * adam.mw[l].array() / (adam.vw[l].array().sqrt() + eps);
        adam.mb[l] = b1 * adam.mb[l] + (1.0f - b1) * g.gb[l];
        adam.vb[l] = b2 * adam.vb[l] + (1.0f - b2) * g.gb[l].cwiseAbs2();
        m.biases[l].array() -= lr * adam.mb[l].array() / (adam.vb[l].array().sqrt() + eps);
      }
    }
    m.final_train_loss = epoch_loss / static_cast<double>(n_samples);
    if (!std::isfinite(m.final_train_loss)) throw TrainingFailure("MLP training diverged: loss is not finite", epoch);
  }
  return m;
}

}  // namespace tacsync::calib
