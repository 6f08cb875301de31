#pragma once

// CNN malware detector over gray-scale binary images:
//
//   adaptive-avg-pool(P x P) -> conv3x3(1->c1)+ReLU -> maxpool2
//   -> conv3x3(c1->c2)+ReLU -> maxpool2 -> flatten
//   -> fc(c2*(P/4)^2 -> f1)+ReLU -> fc(f1 -> f2)+ReLU -> fc(f2 -> 2)
//
// Logit 0 is benign, logit 1 malware. The scalar type is a template
// parameter: float for training and attacks, double for gradient checks.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mvae/binimg.hpp"
#include "mvae/error.hpp"

namespace mvae::detector {

enum Label : int { kBenign = 0, kMalware = 1 };

inline const char* label_name(int label) { return label == kBenign ? "benign" : "malware"; }

inline constexpr std::size_t kMinInputSide = 8;

struct Dims {
  std::uint32_t pool_out = 64;
  std::uint32_t conv1 = 8;
  std::uint32_t conv2 = 16;
  std::uint32_t kernel = 3;
  std::uint32_t fc1 = 256;
  std::uint32_t fc2 = 64;
  std::uint32_t classes = 2;

  std::uint32_t p1() const { return pool_out / 2; }
  std::uint32_t p2() const { return pool_out / 4; }
  std::uint32_t flat() const { return conv2 * p2() * p2(); }

  void validate() const {
    if (pool_out < 4 || pool_out % 4 != 0) throw FormatError("pool_out must be a positive multiple of 4");
    if (kernel % 2 == 0 || kernel == 0) throw FormatError("kernel size must be odd");
    if (conv1 == 0 || conv2 == 0 || fc1 == 0 || fc2 == 0) throw FormatError("zero layer width");
    if (classes != 2) throw FormatError("detector is a two-class model");
    if (pool_out > 4096 || conv1 > 4096 || conv2 > 4096 || fc1 > 65536 || fc2 > 65536 || kernel > 31)
      throw FormatError("implausible model dimensions");
  }

  friend bool operator==(const Dims&, const Dims&) = default;
};

// Offsets of each tensor inside the flat parameter vector, in storage order.
struct Layout {
  std::size_t conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b, total;

  explicit Layout(const Dims& d) {
    std::size_t o = 0;
    auto take = [&](std::size_t n) {
      const auto at = o;
      o += n;
      return at;
    };
    const std::size_t k2 = std::size_t{d.kernel} * d.kernel;
    conv1_w = take(std::size_t{d.conv1} * 1 * k2);
    conv1_b = take(d.conv1);
    conv2_w = take(std::size_t{d.conv2} * d.conv1 * k2);
    conv2_b = take(d.conv2);
    fc1_w = take(std::size_t{d.fc1} * d.flat());
    fc1_b = take(d.fc1);
    fc2_w = take(std::size_t{d.fc2} * d.fc1);
    fc2_b = take(d.fc2);
    fc3_w = take(std::size_t{d.classes} * d.fc2);
    fc3_b = take(d.classes);
    total = o;
  }
};

template <typename T>
struct Logits {
  std::array<T, 2> values{};

  T benign() const { return values[kBenign]; }
  T malware() const { return values[kMalware]; }

  std::array<double, 2> probabilities() const {
    const double m = std::max<double>(values[0], values[1]);
    const double e0 = std::exp(double(values[0]) - m), e1 = std::exp(double(values[1]) - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
  }
  // argmax; ties go to the first index.
  int label() const { return values[kMalware] > values[kBenign] ? kMalware : kBenign; }
};

struct LossSpec {
  enum class Kind { CrossEntropy, CwMargin } kind = Kind::CrossEntropy;
  int label = kMalware;  // true label for cross-entropy
  double kappa = 0.0;    // CW confidence margin

  static LossSpec cross_entropy(int label) { return {Kind::CrossEntropy, label, 0.0}; }
  static LossSpec cw(double kappa) { return {Kind::CwMargin, kMalware, kappa}; }
};

// Carlini-Wagner margin loss for the "benign" target:
// f = max(logit_malware - logit_benign, -kappa).
template <typename T>
double cw_loss(const Logits<T>& z, double kappa) {
  return std::max<double>(double(z.malware()) - double(z.benign()), -kappa);
}

// Loss value and d(loss)/d(logits).
template <typename T>
std::pair<double, std::array<T, 2>> loss_and_grad(const Logits<T>& z, const LossSpec& spec) {
  if (spec.kind == LossSpec::Kind::CrossEntropy) {
    const auto p = z.probabilities();
    const double loss = -std::log(std::max(p[spec.label], 1e-300));
    std::array<T, 2> g{static_cast<T>(p[0]), static_cast<T>(p[1])};
    g[spec.label] -= T(1);
    return {loss, g};
  }
  const double margin = double(z.malware()) - double(z.benign());
  if (margin > -spec.kappa) return {margin, {T(-1), T(1)}};
  return {-spec.kappa, {T(0), T(0)}};
}

// Cell [begin, end) of output index i when pooling `in` samples down to
// `out`: begin = floor(i*in/out), end = floor((i+1)*in/out), widened to one
// sample when the input is smaller than the output.
inline std::pair<std::size_t, std::size_t> pool_cell(std::size_t i, std::size_t in, std::size_t out) {
  const std::size_t b = i * in / out;
  const std::size_t e = std::max((i + 1) * in / out, b + 1);
  return {b, e};
}

template <typename T>
class CnnModel {
 public:
  CnnModel() : CnnModel(Dims{}) {}
  explicit CnnModel(const Dims& dims) : dims_(dims), layout_(dims) {
    dims_.validate();
    params_.assign(layout_.total, T(0));
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static CnnModel initialized(std::uint64_t seed, const Dims& dims = {}) {
    CnnModel m(dims);
    std::mt19937_64 rng(seed);
    const std::size_t k2 = std::size_t{dims.kernel} * dims.kernel;
    auto fill = [&](std::size_t at, std::size_t n, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::size_t i = 0; i < n; ++i) m.params_[at + i] = static_cast<T>(u(rng));
    };
    const auto& L = m.layout_;
    fill(L.conv1_w, L.conv1_b - L.conv1_w, k2);
    fill(L.conv1_b, dims.conv1, k2);
    fill(L.conv2_w, L.conv2_b - L.conv2_w, dims.conv1 * k2);
    fill(L.conv2_b, dims.conv2, dims.conv1 * k2);
    fill(L.fc1_w, L.fc1_b - L.fc1_w, dims.flat());
    fill(L.fc1_b, dims.fc1, dims.flat());
    fill(L.fc2_w, L.fc2_b - L.fc2_w, dims.fc1);
    fill(L.fc2_b, dims.fc2, dims.fc1);
    fill(L.fc3_w, L.fc3_b - L.fc3_w, dims.fc2);
    fill(L.fc3_b, dims.classes, dims.fc2);
    return m;
  }

  template <typename U>
  CnnModel<U> cast() const {
    CnnModel<U> out(dims_);
    std::transform(params_.begin(), params_.end(), out.params().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  const Dims& dims() const noexcept { return dims_; }
  const Layout& layout() const noexcept { return layout_; }
  std::vector<T>& params() noexcept { return params_; }
  const std::vector<T>& params() const noexcept { return params_; }
  std::size_t param_count() const noexcept { return params_.size(); }

  bool finite() const {
    return std::all_of(params_.begin(), params_.end(), [](T v) { return std::isfinite(v); });
  }

  // Intermediate activations kept for backpropagation.
  struct Cache {
    std::size_t in_h = 0, in_w = 0;
    std::vector<T> pooled, a1, p1, a2, p2, h1, h2;
    std::vector<std::uint32_t> p1_arg, p2_arg;
    Logits<T> logits;
  };

  Logits<T> forward(const BasicNormalizedImage<T>& img) const {
    Cache c;
    return forward(img, c);
  }

  Logits<T> forward(const BasicNormalizedImage<T>& img, Cache& c) const {
    check_shape(img);
    const auto& d = dims_;
    const std::size_t P = d.pool_out, P1 = d.p1(), P2 = d.p2();
    c.in_h = img.height;
    c.in_w = img.width;

    c.pooled.assign(P * P, T(0));
    for (std::size_t i = 0; i < P; ++i) {
      const auto [r0, r1] = pool_cell(i, img.height, P);
      for (std::size_t j = 0; j < P; ++j) {
        const auto [c0, c1] = pool_cell(j, img.width, P);
        T s = 0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t q = c0; q < c1; ++q) s += img.values[r * img.width + q];
        c.pooled[i * P + j] = s / static_cast<T>((r1 - r0) * (c1 - c0));
      }
    }

    conv_forward(c.pooled, 1, P, layout_.conv1_w, layout_.conv1_b, d.conv1, c.a1);
    relu(c.a1);
    maxpool_forward(c.a1, d.conv1, P, c.p1, c.p1_arg);
    conv_forward(c.p1, d.conv1, P1, layout_.conv2_w, layout_.conv2_b, d.conv2, c.a2);
    relu(c.a2);
    maxpool_forward(c.a2, d.conv2, P1, c.p2, c.p2_arg);
    (void)P2;

    dense_forward(c.p2, layout_.fc1_w, layout_.fc1_b, d.fc1, c.h1);
    relu(c.h1);
    dense_forward(c.h1, layout_.fc2_w, layout_.fc2_b, d.fc2, c.h2);
    relu(c.h2);
    std::vector<T> out;
    dense_forward(c.h2, layout_.fc3_w, layout_.fc3_b, d.classes, out);
    c.logits.values = {out[0], out[1]};
    return c.logits;
  }

  // Backpropagates d(loss)/d(logits) through a cached forward pass.
  // `param_grad` (same layout as params) is accumulated into when non-null;
  // `input_grad` is overwritten with d(loss)/d(input) when non-null.
  void backward(const Cache& c, const std::array<T, 2>& dlogits, std::vector<T>* param_grad,
                std::vector<T>* input_grad) const {
    const auto& d = dims_;
    const auto& L = layout_;
    const std::size_t P = d.pool_out, P1 = d.p1();
    T* g = param_grad ? param_grad->data() : nullptr;

    std::vector<T> dz3(dlogits.begin(), dlogits.end());
    std::vector<T> dh2, dh1, dp2;
    dense_backward(c.h2, dz3, L.fc3_w, L.fc3_b, d.classes, g, dh2);
    relu_backward(c.h2, dh2);
    dense_backward(c.h1, dh2, L.fc2_w, L.fc2_b, d.fc2, g, dh1);
    relu_backward(c.h1, dh1);
    dense_backward(c.p2, dh1, L.fc1_w, L.fc1_b, d.fc1, g, dp2);

    std::vector<T> da2(c.a2.size(), T(0));
    for (std::size_t i = 0; i < dp2.size(); ++i) da2[c.p2_arg[i]] += dp2[i];
    relu_backward(c.a2, da2);
    std::vector<T> dp1;
    conv_backward(c.p1, d.conv1, P1, L.conv2_w, L.conv2_b, d.conv2, da2, g, &dp1);

    std::vector<T> da1(c.a1.size(), T(0));
    for (std::size_t i = 0; i < dp1.size(); ++i) da1[c.p1_arg[i]] += dp1[i];
    relu_backward(c.a1, da1);
    if (!input_grad) {
      conv_backward(c.pooled, 1, P, L.conv1_w, L.conv1_b, d.conv1, da1, g, nullptr);
      return;
    }
    std::vector<T> dpooled;
    conv_backward(c.pooled, 1, P, L.conv1_w, L.conv1_b, d.conv1, da1, g, &dpooled);

    input_grad->assign(c.in_h * c.in_w, T(0));
    for (std::size_t i = 0; i < P; ++i) {
      const auto [r0, r1] = pool_cell(i, c.in_h, P);
      for (std::size_t j = 0; j < P; ++j) {
        const auto [c0, c1] = pool_cell(j, c.in_w, P);
        const T share = dpooled[i * P + j] / static_cast<T>((r1 - r0) * (c1 - c0));
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t q = c0; q < c1; ++q) (*input_grad)[r * c.in_w + q] += share;
      }
    }
  }

  struct InputGradient {
    double loss = 0;
    Logits<T> logits;
    std::vector<T> grad;  // same shape as the input image
  };

  InputGradient grad_input(const BasicNormalizedImage<T>& img, const LossSpec& spec) const {
    Cache c;
    InputGradient out;
    out.logits = forward(img, c);
    const auto [loss, dl] = loss_and_grad(out.logits, spec);
    out.loss = loss;
    if (dl[0] == T(0) && dl[1] == T(0)) {
      out.grad.assign(img.size(), T(0));
      return out;
    }
    backward(c, dl, nullptr, &out.grad);
    return out;
  }

  void check_shape(const BasicNormalizedImage<T>& img) const {
    if (img.height < kMinInputSide || img.width < kMinInputSide)
      throw UnsupportedShape("input " + std::to_string(img.height) + "x" +
                             std::to_string(img.width) + " is smaller than 8x8");
    if (img.values.size() != img.width * img.height)
      throw InvalidArgument("image buffer does not match its shape");
  }

 private:
  static void relu(std::vector<T>& v) {
    for (auto& x : v) x = x > T(0) ? x : T(0);
  }
  // `act` is the post-ReLU activation; zero outputs block the gradient.
  static void relu_backward(const std::vector<T>& act, std::vector<T>& grad) {
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (!(act[i] > T(0))) grad[i] = T(0);
  }

  void dense_forward(const std::vector<T>& in, std::size_t w_at, std::size_t b_at, std::size_t n_out,
                     std::vector<T>& out) const {
    const std::size_t n_in = in.size();
    out.resize(n_out);
    const T* W = params_.data() + w_at;
    for (std::size_t o = 0; o < n_out; ++o) {
      const T* row = W + o * n_in;
      T s = params_[b_at + o];
      for (std::size_t i = 0; i < n_in; ++i) s += row[i] * in[i];
      out[o] = s;
    }
  }

  void dense_backward(const std::vector<T>& in, const std::vector<T>& dout, std::size_t w_at,
                      std::size_t b_at, std::size_t n_out, T* g, std::vector<T>& din) const {
    const std::size_t n_in = in.size();
    din.assign(n_in, T(0));
    const T* W = params_.data() + w_at;
    for (std::size_t o = 0; o < n_out; ++o) {
      const T go = dout[o];
      if (go == T(0)) continue;
      const T* row = W + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) din[i] += row[i] * go;
      if (g) {
        T* grow = g + w_at + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) grow[i] += go * in[i];
        g[b_at + o] += go;
      }
    }
  }

  // Same-padded, stride-1 square convolution over side x side planes.
  void conv_forward(const std::vector<T>& in, std::size_t in_ch, std::size_t side, std::size_t w_at,
                    std::size_t b_at, std::size_t out_ch, std::vector<T>& out) const {
    const std::size_t K = dims_.kernel, pad = K / 2, plane = side * side;
    out.assign(out_ch * plane, T(0));
    for (std::size_t oc = 0; oc < out_ch; ++oc) {
      T* o = out.data() + oc * plane;
      std::fill(o, o + plane, params_[b_at + oc]);
      for (std::size_t ic = 0; ic < in_ch; ++ic) {
        const T* x = in.data() + ic * plane;
        for (std::size_t ky = 0; ky < K; ++ky)
          for (std::size_t kx = 0; kx < K; ++kx) {
            const T w = params_[w_at + ((oc * in_ch + ic) * K + ky) * K + kx];
            const std::ptrdiff_t dy = std::ptrdiff_t(ky) - std::ptrdiff_t(pad);
            const std::ptrdiff_t dx = std::ptrdiff_t(kx) - std::ptrdiff_t(pad);
            const std::size_t y0 = dy < 0 ? std::size_t(-dy) : 0, y1 = dy > 0 ? side - dy : side;
            const std::size_t x0 = dx < 0 ? std::size_t(-dx) : 0, x1 = dx > 0 ? side - dx : side;
            for (std::size_t y = y0; y < y1; ++y) {
              T* orow = o + y * side;
              const T* xrow = x + (y + dy) * side + dx;
              for (std::size_t xx = x0; xx < x1; ++xx) orow[xx] += w * xrow[xx];
            }
          }
      }
    }
  }

  void conv_backward(const std::vector<T>& in, std::size_t in_ch, std::size_t side, std::size_t w_at,
                     std::size_t b_at, std::size_t out_ch, const std::vector<T>& dout, T* g,
                     std::vector<T>* din) const {
    const std::size_t K = dims_.kernel, pad = K / 2, plane = side * side;
    if (din) din->assign(in_ch * plane, T(0));
    for (std::size_t oc = 0; oc < out_ch; ++oc) {
      const T* go = dout.data() + oc * plane;
      if (g) {
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += go[i];
        g[b_at + oc] += s;
      }
      for (std::size_t ic = 0; ic < in_ch; ++ic) {
        const T* x = in.data() + ic * plane;
        T* dx_plane = din ? din->data() + ic * plane : nullptr;
        for (std::size_t ky = 0; ky < K; ++ky)
          for (std::size_t kx = 0; kx < K; ++kx) {
            const std::size_t wi = w_at + ((oc * in_ch + ic) * K + ky) * K + kx;
            const T w = params_[wi];
            const std::ptrdiff_t dy = std::ptrdiff_t(ky) - std::ptrdiff_t(pad);
            const std::ptrdiff_t dx = std::ptrdiff_t(kx) - std::ptrdiff_t(pad);
            const std::size_t y0 = dy < 0 ? std::size_t(-dy) : 0, y1 = dy > 0 ? side - dy : side;
            const std::size_t x0 = dx < 0 ? std::size_t(-dx) : 0, x1 = dx > 0 ? side - dx : side;
            T acc = 0;
            for (std::size_t y = y0; y < y1; ++y) {
              const T* grow = go + y * side;
              const std::size_t shifted = (y + dy) * side + dx;
              if (g) {
                const T* xrow = x + shifted;
                for (std::size_t xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx];
              }
              if (dx_plane) {
                T* drow = dx_plane + shifted;
                for (std::size_t xx = x0; xx < x1; ++xx) drow[xx] += w * grow[xx];
              }
            }
            if (g) g[wi] += acc;
          }
      }
    }
  }

  static void maxpool_forward(const std::vector<T>& in, std::size_t ch, std::size_t side,
                              std::vector<T>& out, std::vector<std::uint32_t>& arg) {
    const std::size_t half = side / 2;
    out.resize(ch * half * half);
    arg.resize(out.size());
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t y = 0; y < half; ++y)
        for (std::size_t x = 0; x < half; ++x) {
          const std::size_t base = c * side * side + (2 * y) * side + 2 * x;
          std::size_t best = base;
          for (std::size_t k : {std::size_t{1}, side, side + 1})
            if (in[base + k] > in[best]) best = base + k;
          const std::size_t o = (c * half + y) * half + x;
          out[o] = in[best];
          arg[o] = static_cast<std::uint32_t>(best);
        }
  }

  Dims dims_;
  Layout layout_;
  std::vector<T> params_;
};

using Model = CnnModel<float>;

// ---------------------------------------------------------------------------
// Training

struct LabeledImage {
  NormalizedImage image;
  int label = kMalware;
  std::string id;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 1;
};

struct EvalMetrics {
  double accuracy = 0;
  double loss = 0;
  std::array<double, 2> recall{};  // per class
  std::array<std::size_t, 2> count{};
};

struct EpochMetrics {
  std::size_t epoch = 0;
  EvalMetrics train;
  EvalMetrics val;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  const EpochMetrics& last() const { return epochs.back(); }
};

template <typename T>
EvalMetrics evaluate(const CnnModel<T>& model, std::span<const LabeledImage> data) {
  EvalMetrics m;
  std::array<std::size_t, 2> hit{};
  for (const auto& s : data) {
    const auto z = model.forward(s.image);
    m.loss += loss_and_grad(z, LossSpec::cross_entropy(s.label)).first;
    ++m.count[s.label];
    if (z.label() == s.label) ++hit[s.label];
  }
  const std::size_t n = m.count[0] + m.count[1];
  if (n) {
    m.accuracy = double(hit[0] + hit[1]) / double(n);
    m.loss /= double(n);
  }
  for (int c = 0; c < 2; ++c) m.recall[c] = m.count[c] ? double(hit[c]) / double(m.count[c]) : 0.0;
  return m;
}

// Mini-batch SGD with momentum on mean cross-entropy. Deterministic for a
// fixed seed: shuffling uses its own PRNG and batch gradients are reduced in
// sample order.
inline TrainReport train(Model& model, std::span<const LabeledImage> train_set,
                         std::span<const LabeledImage> val_set, const TrainConfig& cfg,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  std::array<std::size_t, 2> per_class{};
  for (const auto& s : train_set) {
    if (s.label != kBenign && s.label != kMalware) throw ConfigError("label out of range");
    ++per_class[s.label];
  }
  if (per_class[0] == 0 || per_class[1] == 0)
    throw ConfigError("training set needs samples of both classes");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be >= 1");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<float> grad(model.param_count()), velocity(model.param_count(), 0.0f);
  Model::Cache cache;
  TrainReport report;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0f);
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train_set[order[k]];
        const auto z = model.forward(s.image, cache);
        const auto dl = loss_and_grad(z, LossSpec::cross_entropy(s.label)).second;
        model.backward(cache, dl, &grad, nullptr);
      }
      const float inv = 1.0f / static_cast<float>(end - start);
      const auto lr = static_cast<float>(cfg.learning_rate);
      const auto mu = static_cast<float>(cfg.momentum);
      auto& p = model.params();
      for (std::size_t i = 0; i < p.size(); ++i) {
        velocity[i] = mu * velocity[i] + grad[i] * inv;
        p[i] -= lr * velocity[i];
      }
      if (!model.finite()) throw NumericalFailure("non-finite parameters after update", epoch);
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train = evaluate(model, train_set);
    if (!val_set.empty()) em.val = evaluate(model, val_set);
    report.epochs.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Model container: "MVAE", version byte, 7 little-endian u32 dims
// (pool_out, conv1, conv2, kernel, fc1, fc2, classes), then every parameter as
// a little-endian f32 in layout order (conv1 w,b; conv2 w,b; fc1 w,b; fc2 w,b;
// fc3 w,b). Weights are row-major [out][in] (conv: [out][in][ky][kx]).

inline constexpr char kModelMagic[4] = {'M', 'V', 'A', 'E'};
inline constexpr std::uint8_t kModelVersion = 1;

namespace detail {
inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}
}  // namespace detail

template <typename T>
Bytes serialize_model(const CnnModel<T>& model) {
  Bytes out(kModelMagic, kModelMagic + 4);
  out.push_back(kModelVersion);
  const auto& d = model.dims();
  for (auto v : {d.pool_out, d.conv1, d.conv2, d.kernel, d.fc1, d.fc2, d.classes})
    detail::put_u32(out, v);
  out.reserve(out.size() + 4 * model.param_count());
  for (T p : model.params()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(p)));
  return out;
}

inline Model deserialize_model(ByteView data) {
  constexpr std::size_t kHeader = 4 + 1 + 7 * 4;
  if (data.size() < 5 || std::memcmp(data.data(), kModelMagic, 4) != 0)
    throw FormatError("not a model file (bad magic)");
  if (data[4] != kModelVersion)
    throw FormatError("model version " + std::to_string(data[4]) + " unsupported, expected " +
                      std::to_string(kModelVersion));
  if (data.size() < kHeader) throw FormatError("truncated model header");
  const std::uint8_t* p = data.data() + 5;
  Dims d;
  for (auto* f : {&d.pool_out, &d.conv1, &d.conv2, &d.kernel, &d.fc1, &d.fc2, &d.classes}) {
    *f = detail::get_u32(p);
    p += 4;
  }
  d.validate();
  Model m(d);
  if (data.size() != kHeader + 4 * m.param_count())
    throw FormatError(data.size() < kHeader + 4 * m.param_count() ? "truncated model parameters"
                                                                  : "trailing bytes after model");
  for (auto& v : m.params()) {
    v = std::bit_cast<float>(detail::get_u32(p));
    p += 4;
  }
  return m;
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

inline Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace mvae::detector
