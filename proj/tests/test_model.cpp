#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "nimblereg/model.hpp"

using namespace nimblereg;

namespace {

Architecture tiny() {
  Architecture a;
  a.local = {4, 4};
  a.global = {8, 16};
  a.head = {8, 3};
  return a;
}

PointCloud cloud(Rng& rng, std::size_t n) {
  PointCloud out(n);
  for (Vec3& p : out) p = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  return out;
}

std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  p.for_each_tensor([&](const std::string&, const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  });
  return out;
}

double& coeff(ModelParams& p, std::size_t flat) {
  double* hit = nullptr;
  p.for_each_tensor([&](const std::string&, Matrix& m) {
    if (hit) return;
    const auto size = static_cast<std::size_t>(m.size());
    if (flat < size) {
      hit = &m(static_cast<Eigen::Index>(flat / m.cols()), static_cast<Eigen::Index>(flat % m.cols()));
      return;
    }
    flat -= size;
  });
  return *hit;
}

}  // namespace

TEST(Architecture, FullSizeParameterCount) {
  // every layer contributes in * out weights plus out biases
  auto stack = [](long in, std::initializer_list<long> widths) {
    long total = 0;
    for (long w : widths) {
      total += in * w + w;
      in = w;
    }
    return total;
  };
  const long expected = stack(3, {64, 64}) + stack(64, {128, 1024}) + stack(64 + 1024 + 1024, {1024, 512, 256, 128, 64, 3});
  const ModelParams p = ModelParams::zeros(Architecture::full());
  EXPECT_EQ(static_cast<long>(p.parameter_count()), expected);
  EXPECT_EQ(p.parameter_count(), 3006019u);
}

TEST(Architecture, RejectsBadWidths) {
  Architecture a = tiny();
  a.head.back() = 2;
  EXPECT_THROW(ModelParams::zeros(a), Error);
  a = tiny();
  a.global.clear();
  EXPECT_THROW(ModelParams::zeros(a), Error);
}

TEST(InitParams, DeterministicBoundedZeroBias) {
  const ModelParams a = init_params(tiny(), 5), b = init_params(tiny(), 5), c = init_params(tiny(), 6);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  a.for_each_tensor([](const std::string& name, const Matrix& m) {
    if (name.ends_with(".bias")) {
      EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0) << name;
    } else {
      EXPECT_LE(m.cwiseAbs().maxCoeff(), std::sqrt(6.0 / static_cast<double>(m.cols()))) << name;
      EXPECT_GT(m.cwiseAbs().maxCoeff(), 0.0) << name;
    }
  });
}

TEST(Forward, ZeroParamsGiveZeroVelocities) {
  Rng rng(1);
  const ModelParams p = ModelParams::zeros(tiny());
  for (const Vec3& v : forward(p, cloud(rng, 9), cloud(rng, 11)).velocities) EXPECT_EQ(v, Vec3::Zero());
}

TEST(Forward, ReferencePermutationIsBitwiseInvariant) {
  Rng rng(2);
  for (const Architecture& arch : {tiny(), Architecture::full()}) {
    const ModelParams p = init_params(arch, 3);
    for (std::size_t n : {1u, 13u, 64u, 101u}) {
      const PointCloud moving = cloud(rng, 17);
      PointCloud reference = cloud(rng, n);
      const PointCloud v = forward(p, moving, reference).velocities;
      rng.shuffle(reference);
      EXPECT_EQ(forward(p, moving, reference).velocities, v) << n;
    }
  }
}

TEST(Forward, MovingPermutationIsBitwiseEquivariant) {
  Rng rng(4);
  for (const Architecture& arch : {tiny(), Architecture::full()}) {
    const ModelParams p = init_params(arch, 5);
    for (std::size_t n : {1u, 7u, 64u, 99u}) {
      const PointCloud moving = cloud(rng, n), reference = cloud(rng, 23);
      const PointCloud v = forward(p, moving, reference).velocities;
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      PointCloud permuted(n);
      for (std::size_t i = 0; i < n; ++i) permuted[i] = moving[perm[i]];
      const PointCloud w = forward(p, permuted, reference).velocities;
      for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(w[i], v[perm[i]]) << n;
    }
  }
}

// Oracle: central finite differences of sum(u . v) over every weight.
TEST(Backward, MatchesFiniteDifferencesOnTinyNet) {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    ModelParams p = init_params(tiny(), 100 + trial);
    // non-zero biases so their gradients are exercised
    p.for_each_tensor([&](const std::string& name, Matrix& m) {
      if (name.ends_with(".bias"))
        for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(-0.1, 0.1);
    });
    const PointCloud moving = cloud(rng, 6), reference = cloud(rng, 6);
    PointCloud u(6);
    for (Vec3& x : u) x = Vec3(rng.normal(), rng.normal(), rng.normal());
    auto loss = [&](const ModelParams& q) {
      const PointCloud v = forward(q, moving, reference).velocities;
      double l = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) l += u[i].dot(v[i]);
      return l;
    };
    const ForwardResult f = forward(p, moving, reference);
    const std::vector<double> g = flatten(backward(p, f.cache, u));
    double num = 0.0, den = 0.0;
    const double h = 1e-6;
    for (std::size_t k = 0; k < g.size(); ++k) {
      ModelParams plus = p, minus = p;
      coeff(plus, k) += h;
      coeff(minus, k) -= h;
      const double fd = (loss(plus) - loss(minus)) / (2 * h);
      num += (fd - g[k]) * (fd - g[k]);
      den += fd * fd;
    }
    EXPECT_LT(std::sqrt(num / den), 1e-6) << "trial " << trial;
  }
}

TEST(Backward, ShapeMismatchIsAnError) {
  Rng rng(7);
  const ModelParams p = init_params(tiny(), 1);
  const ForwardResult f = forward(p, cloud(rng, 5), cloud(rng, 5));
  EXPECT_THROW(backward(p, f.cache, PointCloud(4, Vec3::Zero())), Error);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ModelParams p = init_params(tiny(), 2);
  const ModelParams before = p;
  AdamState s = AdamState::for_params(p);
  adam_step(p, p.zeros_like(), s, 1e-3);
  EXPECT_TRUE(p == before);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ConstantGradientStepsByLearningRate) {
  ModelParams p = init_params(tiny(), 2);
  ModelParams g = p.zeros_like();
  Rng rng(8);
  g.for_each_tensor([&](const std::string&, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(0.5, 2.0) * (rng.uniform() < 0.5 ? -1 : 1);
  });
  AdamState s = AdamState::for_params(p);
  const double lr = 1e-3;
  for (int t = 0; t < 200; ++t) {
    const std::vector<double> before = flatten(p);
    adam_step(p, g, s, lr);
    const std::vector<double> after = flatten(p), grad = flatten(g);
    for (std::size_t k = 0; k < after.size(); ++k)
      ASSERT_NEAR(before[k] - after[k], lr * (grad[k] > 0 ? 1 : -1), lr * 1e-6);
  }
}

TEST(Adam, NonFiniteGradientNamesTheTensor) {
  ModelParams p = init_params(tiny(), 2);
  ModelParams g = p.zeros_like();
  g.head[1].weight(0, 0) = std::numeric_limits<double>::infinity();
  AdamState s = AdamState::for_params(p);
  try {
    adam_step(p, g, s, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
    EXPECT_NE(std::string(e.what()).find("head.1.weight"), std::string::npos);
  }
}

TEST(ParamsFile, RoundTripIsBitExact) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "nimblereg_params_test.bin";
  const ModelParams p = init_params(tiny(), 11);
  io::write_params(path, p);
  const ModelParams q = io::read_params(path);
  EXPECT_TRUE(p == q);
  EXPECT_EQ(q.seed, p.seed);
  std::string bytes = io::read_file(path);
  bytes.pop_back();
  EXPECT_THROW(io::decode_params(bytes), Error);
  bytes[0] = 'X';
  EXPECT_THROW(io::decode_params(bytes), Error);
  fs::remove(path);
}
