#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nimblereg/io.hpp"
#include "nimblereg/types.hpp"

namespace nimblereg {

using Matrix = Eigen::MatrixXd;

/// Output widths of the three point-wise MLP stacks.
struct Architecture {
  std::vector<int> local{64, 64};
  std::vector<int> global{128, 1024};
  std::vector<int> head{1024, 512, 256, 128, 64, 3};

  static Architecture full() { return {}; }

  int local_width() const { return local.back(); }
  int global_width() const { return global.back(); }
  int head_input() const { return local_width() + 2 * global_width(); }

  void validate() const {
    require(!local.empty() && !global.empty() && !head.empty(), ErrorCode::InvalidArgument,
            "every MLP stack needs at least one layer");
    require(head.back() == 3, ErrorCode::InvalidArgument, "velocity head must end with width 3");
    for (const auto* stack : {&local, &global, &head})
      for (int w : *stack) require(w > 0, ErrorCode::InvalidArgument, "layer widths must be positive");
  }

  bool operator==(const Architecture&) const = default;
};

struct Dense {
  Matrix weight;  // out x in
  Matrix bias;    // out x 1
};

/// Weights of the velocity estimator. Also used as the gradient container.
struct ModelParams {
  Architecture arch;
  std::vector<Dense> local, global, head;
  std::uint64_t seed = 0;

  static ModelParams zeros(const Architecture& arch) {
    arch.validate();
    ModelParams p;
    p.arch = arch;
    auto build = [](std::vector<Dense>& stack, int in, const std::vector<int>& widths) {
      for (int w : widths) {
        stack.push_back({Matrix::Zero(w, in), Matrix::Zero(w, 1)});
        in = w;
      }
    };
    build(p.local, 3, arch.local);
    build(p.global, arch.local_width(), arch.global);
    build(p.head, arch.head_input(), arch.head);
    return p;
  }

  ModelParams zeros_like() const {
    ModelParams z = zeros(arch);
    z.seed = seed;
    return z;
  }

  template <class F>
  void for_each_tensor(F&& f) {
    visit_tensors(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    visit_tensors(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool operator==(const ModelParams& o) const {
    if (!(arch == o.arch) || seed != o.seed) return false;
    std::vector<const Matrix*> a, b;
    for_each_tensor([&](const std::string&, const Matrix& m) { a.push_back(&m); });
    o.for_each_tensor([&](const std::string&, const Matrix& m) { b.push_back(&m); });
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() ||
          std::memcmp(a[i]->data(), b[i]->data(), sizeof(double) * a[i]->size()) != 0)
        return false;
    return true;
  }

 private:
  template <class Self, class F>
  static void visit_tensors(Self& self, F& f) {
    auto stack = [&](auto& layers, const char* name) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string prefix = std::string(name) + "." + std::to_string(i);
        f(prefix + ".weight", layers[i].weight);
        f(prefix + ".bias", layers[i].bias);
      }
    };
    stack(self.local, "local");
    stack(self.global, "global");
    stack(self.head, "head");
  }
};

/// Kaiming-uniform (fan-in, ReLU gain) weights and zero biases.
inline ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(arch);
  p.seed = seed;
  Rng rng(seed);
  p.for_each_tensor([&](const std::string& name, Matrix& m) {
    if (name.ends_with(".bias")) return;
    const double bound = std::sqrt(6.0 / static_cast<double>(m.cols()));
    // fill row-major so the stream order is independent of storage order
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
  });
  return p;
}

namespace detail {

// Every cloud is padded to a multiple of this many columns so each real point
// goes through the same matrix-product code path wherever it sits.
inline constexpr Eigen::Index kColumnPad = 8;

inline Matrix cloud_matrix(std::span<const Vec3> cloud) {
  const Eigen::Index n = static_cast<Eigen::Index>(cloud.size());
  const Eigen::Index padded = (n + kColumnPad - 1) / kColumnPad * kColumnPad;
  Matrix x = Matrix::Zero(3, padded);
  for (Eigen::Index i = 0; i < n; ++i) x.col(i) = cloud[i];
  return x;
}

inline Matrix dense_forward(const Dense& layer, const Matrix& input, bool relu) {
  Matrix z(layer.weight.rows(), input.cols());
  z.noalias() = layer.weight * input;
  z.colwise() += layer.bias.col(0);
  if (relu) z = z.cwiseMax(0.0);
  return z;
}

}  // namespace detail

/// Activations of one cloud through the shared local and global stacks.
struct CloudCache {
  Eigen::Index count = 0;            // real (unpadded) points
  std::vector<Matrix> activations;   // [input, local..., global...]
  Eigen::VectorXd pooled;            // max over real points of the last global layer
  std::vector<Eigen::Index> argmax;  // lowest index among ties
};

struct ForwardCache {
  CloudCache moving, reference;
  std::vector<Matrix> head_activations;  // outputs of each head layer
};

struct ForwardResult {
  PointCloud velocities;
  ForwardCache cache;
};

namespace detail {

inline CloudCache encode_cloud(const ModelParams& p, std::span<const Vec3> cloud) {
  CloudCache c;
  c.count = static_cast<Eigen::Index>(cloud.size());
  c.activations.push_back(cloud_matrix(cloud));
  for (const Dense& l : p.local) c.activations.push_back(dense_forward(l, c.activations.back(), true));
  for (const Dense& l : p.global) c.activations.push_back(dense_forward(l, c.activations.back(), true));
  const Matrix& g = c.activations.back();
  c.pooled.resize(g.rows());
  c.argmax.resize(static_cast<std::size_t>(g.rows()));
  for (Eigen::Index f = 0; f < g.rows(); ++f) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < c.count; ++i)
      if (g(f, i) > g(f, best)) best = i;
    c.pooled[f] = g(f, best);
    c.argmax[static_cast<std::size_t>(f)] = best;
  }
  return c;
}

}  // namespace detail

/// Per-point velocities for the moving cloud given both clouds.
/// Head input per moving point is [local | pooled moving | pooled reference].
inline ForwardResult forward(const ModelParams& params, std::span<const Vec3> moving,
                             std::span<const Vec3> reference) {
  require(!moving.empty() && !reference.empty(), ErrorCode::InvalidArgument, "model input cloud is empty");
  ForwardResult out;
  ForwardCache& cache = out.cache;
  cache.moving = detail::encode_cloud(params, moving);
  cache.reference = detail::encode_cloud(params, reference);

  const int lw = params.arch.local_width(), gw = params.arch.global_width();
  const Matrix& local = cache.moving.activations[params.local.size()];
  const Dense& first = params.head.front();
  Matrix z(first.weight.rows(), local.cols());
  z.noalias() = first.weight.leftCols(lw) * local;
  Eigen::VectorXd shared = first.bias.col(0);
  shared.noalias() += first.weight.middleCols(lw, gw) * cache.moving.pooled;
  shared.noalias() += first.weight.rightCols(gw) * cache.reference.pooled;
  z.colwise() += shared;
  const bool last_is_first = params.head.size() == 1;
  if (!last_is_first) z = z.cwiseMax(0.0);
  cache.head_activations.push_back(std::move(z));
  for (std::size_t l = 1; l < params.head.size(); ++l) {
    const bool relu = l + 1 < params.head.size();
    cache.head_activations.push_back(detail::dense_forward(params.head[l], cache.head_activations.back(), relu));
  }
  const Matrix& v = cache.head_activations.back();
  out.velocities.resize(moving.size());
  for (std::size_t i = 0; i < moving.size(); ++i) out.velocities[i] = v.col(static_cast<Eigen::Index>(i));
  return out;
}

namespace detail {

// Back-propagates `delta` (gradient w.r.t. the post-activation output of the
// last layer in `layers`) through the stack; returns the gradient w.r.t. the
// stack input. activations[offset + l] is the input of layer l.
inline Matrix stack_backward(const std::vector<Dense>& layers, std::vector<Dense>& grads,
                             const std::vector<Matrix>& activations, std::size_t offset, Matrix delta) {
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Matrix& out = activations[offset + l + 1];
    delta = delta.cwiseProduct((out.array() > 0.0).cast<double>().matrix());
    const Matrix& in = activations[offset + l];
    grads[l].weight.noalias() += delta * in.transpose();
    grads[l].bias.col(0) += delta.rowwise().sum();
    Matrix next(in.rows(), in.cols());
    next.noalias() = layers[l].weight.transpose() * delta;
    delta = std::move(next);
  }
  return delta;
}

}  // namespace detail

/// Exact reverse-mode gradients of sum(dL_dv . v) with respect to all weights.
/// Max-pool gradients go to the recorded argmax point.
inline ModelParams backward(const ModelParams& params, const ForwardCache& cache, std::span<const Vec3> dl_dv) {
  require(static_cast<Eigen::Index>(dl_dv.size()) == cache.moving.count, ErrorCode::ShapeMismatch,
          "velocity gradient count does not match the moving cloud");
  ModelParams g = params.zeros_like();
  const int lw = params.arch.local_width(), gw = params.arch.global_width();
  const Eigen::Index padded = cache.moving.activations.front().cols();

  Matrix delta = Matrix::Zero(3, padded);
  for (std::size_t i = 0; i < dl_dv.size(); ++i) delta.col(static_cast<Eigen::Index>(i)) = dl_dv[i];

  // head layers 1..end
  const auto& acts = cache.head_activations;
  for (std::size_t l = params.head.size(); l-- > 1;) {
    if (l + 1 < params.head.size()) delta = delta.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    g.head[l].weight.noalias() += delta * acts[l - 1].transpose();
    g.head[l].bias.col(0) += delta.rowwise().sum();
    Matrix next(acts[l - 1].rows(), padded);
    next.noalias() = params.head[l].weight.transpose() * delta;
    delta = std::move(next);
  }
  // first head layer, split into local and pooled blocks
  if (params.head.size() > 1) delta = delta.cwiseProduct((acts[0].array() > 0.0).cast<double>().matrix());
  const Dense& first = params.head.front();
  const Matrix& local = cache.moving.activations[params.local.size()];
  const Eigen::VectorXd row_sum = delta.rowwise().sum();
  g.head[0].weight.leftCols(lw).noalias() += delta * local.transpose();
  g.head[0].weight.middleCols(lw, gw).noalias() += row_sum * cache.moving.pooled.transpose();
  g.head[0].weight.rightCols(gw).noalias() += row_sum * cache.reference.pooled.transpose();
  g.head[0].bias.col(0) += row_sum;
  Matrix d_local(lw, padded);
  d_local.noalias() = first.weight.leftCols(lw).transpose() * delta;
  const Eigen::VectorXd d_pool_moving = first.weight.middleCols(lw, gw).transpose() * row_sum;
  const Eigen::VectorXd d_pool_reference = first.weight.rightCols(gw).transpose() * row_sum;

  auto cloud_backward = [&](const CloudCache& c, const Eigen::VectorXd& d_pool) {
    const Matrix& top = c.activations.back();
    Matrix d_top = Matrix::Zero(top.rows(), top.cols());
    for (Eigen::Index f = 0; f < top.rows(); ++f) d_top(f, c.argmax[static_cast<std::size_t>(f)]) = d_pool[f];
    return detail::stack_backward(params.global, g.global, c.activations, params.local.size(), std::move(d_top));
  };

  Matrix d_local_moving = cloud_backward(cache.moving, d_pool_moving);
  d_local_moving += d_local;
  detail::stack_backward(params.local, g.local, cache.moving.activations, 0, std::move(d_local_moving));
  const Matrix d_local_reference = cloud_backward(cache.reference, d_pool_reference);
  detail::stack_backward(params.local, g.local, cache.reference.activations, 0, d_local_reference);
  return g;
}

struct AdamState {
  ModelParams first_moment, second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const ModelParams& p) {
    AdamState s;
    s.first_moment = p.zeros_like();
    s.second_moment = p.zeros_like();
    return s;
  }
};

/// Bias-corrected Adam update in place.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr) {
  require(grads.arch == params.arch && state.first_moment.arch == params.arch, ErrorCode::ShapeMismatch,
          "Adam: gradient/state shapes do not match the parameters");
  std::vector<std::pair<std::string, const Matrix*>> g;
  grads.for_each_tensor([&](const std::string& name, const Matrix& m) { g.emplace_back(name, &m); });
  for (const auto& [name, m] : g)
    require(m->allFinite(), ErrorCode::NonFinite, "Adam: non-finite gradient in " + name);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  std::vector<Matrix*> p, m1, m2;
  params.for_each_tensor([&](const std::string&, Matrix& m) { p.push_back(&m); });
  state.first_moment.for_each_tensor([&](const std::string&, Matrix& m) { m1.push_back(&m); });
  state.second_moment.for_each_tensor([&](const std::string&, Matrix& m) { m2.push_back(&m); });
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Matrix& gi = *g[i].second;
    *m1[i] = state.beta1 * *m1[i] + (1.0 - state.beta1) * gi;
    *m2[i] = state.beta2 * *m2[i] + (1.0 - state.beta2) * gi.cwiseAbs2();
    p[i]->array() -= lr * (m1[i]->array() / c1) / ((m2[i]->array() / c2).sqrt() + state.epsilon);
  }
}

namespace io {

inline constexpr std::uint32_t kParamsVersion = 1;

// "NRGM", u32 version, u64 seed, 3 x (u32 depth, u32 widths...), u32 tensor
// count, then per tensor: u32 rows, u32 cols, rows*cols f64 row-major.
inline std::string encode_params(const ModelParams& p) {
  ByteWriter w;
  w.put_raw("NRGM");
  w.put(kParamsVersion);
  w.put(p.seed);
  for (const auto* stack : {&p.arch.local, &p.arch.global, &p.arch.head}) {
    w.put(static_cast<std::uint32_t>(stack->size()));
    for (int width : *stack) w.put(static_cast<std::uint32_t>(width));
  }
  std::uint32_t count = 0;
  p.for_each_tensor([&](const std::string&, const Matrix&) { ++count; });
  w.put(count);
  p.for_each_tensor([&](const std::string&, const Matrix& m) {
    w.put(static_cast<std::uint32_t>(m.rows()));
    w.put(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.put(m(r, c));
  });
  return w.bytes();
}

inline ModelParams decode_params(std::string_view bytes) {
  ByteReader r(bytes, "model parameters");
  require(r.raw(4) == "NRGM", ErrorCode::Format, "model parameters: bad magic");
  require(r.get<std::uint32_t>() == kParamsVersion, ErrorCode::Format, "model parameters: unsupported version");
  const auto seed = r.get<std::uint64_t>();
  Architecture arch;
  for (auto* stack : {&arch.local, &arch.global, &arch.head}) {
    stack->assign(r.get<std::uint32_t>(), 0);
    for (int& width : *stack) width = static_cast<int>(r.get<std::uint32_t>());
  }
  ModelParams p = ModelParams::zeros(arch);
  p.seed = seed;
  std::uint32_t count = 0;
  p.for_each_tensor([&](const std::string&, const Matrix&) { ++count; });
  require(r.get<std::uint32_t>() == count, ErrorCode::Format, "model parameters: tensor count mismatch");
  p.for_each_tensor([&](const std::string& name, Matrix& m) {
    const auto rows = r.get<std::uint32_t>(), cols = r.get<std::uint32_t>();
    require(rows == m.rows() && cols == m.cols(), ErrorCode::Format, "model parameters: bad shape for " + name);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<double>();
  });
  require(r.at_end(), ErrorCode::Format, "model parameters: trailing bytes");
  return p;
}

inline void write_params(const fs::path& path, const ModelParams& p) { write_atomic(path, encode_params(p)); }
inline ModelParams read_params(const fs::path& path) { return decode_params(read_file(path)); }

}  // namespace io
}  // namespace nimblereg
