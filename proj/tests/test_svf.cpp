#include <gtest/gtest.h>

#include <filesystem>

#include "nimblereg/svf.hpp"
#include "nimblereg/transform.hpp"

using namespace nimblereg;

namespace {

PointCloud random_points(Rng& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  PointCloud out(n);
  for (Vec3& p : out) p = Vec3(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
  return out;
}

SvfSample random_svf(Rng& rng, std::size_t n, double vmax, double sigma) {
  SvfSample s;
  s.control_points = random_points(rng, n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    s.velocities.push_back(v.normalized() * vmax * rng.uniform());
  }
  s.sigma = sigma;
  return s;
}

// Direct double loop over the convolution formula in input order.
Vec3 brute_velocity(const SvfSample& s, const Vec3& x) {
  Vec3 num = Vec3::Zero();
  double den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double w = std::exp(-(x - s.control_points[i]).squaredNorm() / (2 * s.sigma * s.sigma));
    num += w * s.velocities[i];
    den += w;
  }
  return num / (s.epsilon + den);
}

double max_error(const PointCloud& a, const PointCloud& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, (a[i] - b[i]).norm());
  return e;
}

}  // namespace

TEST(EvalVelocity, ZeroVelocitiesGiveZero) {
  Rng rng(1);
  SvfSample s = random_svf(rng, 10, 0.0, 0.1);
  for (const Vec3& v : eval_velocity(s, random_points(rng, 20))) EXPECT_EQ(v, Vec3::Zero());
}

TEST(EvalVelocity, SingleControlAtQuery) {
  SvfSample s{{Vec3(0.3, 0.4, 0.5)}, {Vec3(1, -2, 3)}, 0.01, 1e-8};
  const Vec3 v = eval_velocity(s, s.control_points).front();
  EXPECT_EQ(v, Vec3(1, -2, 3) / (1.0 + 1e-8));
}

TEST(EvalVelocity, MatchesDirectDoubleLoop) {
  Rng rng(2);
  for (double sigma : {0.02, 0.1, 0.5}) {
    const SvfSample s = random_svf(rng, 50, 0.05, sigma);
    const PointCloud q = random_points(rng, 100);
    const PointCloud v = eval_velocity(s, q);
    for (std::size_t m = 0; m < q.size(); ++m) {
      const Vec3 b = brute_velocity(s, q[m]);
      EXPECT_LE((v[m] - b).norm(), 1e-12 * std::max(b.norm(), 1e-300)) << sigma;
    }
  }
}

TEST(EvalVelocity, NormalizationBoundAndDecay) {
  Rng rng(3);
  const SvfSample s = random_svf(rng, 30, 0.05, 0.05);
  double vmax = 0.0;
  for (const Vec3& v : s.velocities) vmax = std::max(vmax, v.norm());
  for (const Vec3& v : eval_velocity(s, random_points(rng, 500, -0.5, 1.5))) EXPECT_LT(v.norm(), vmax);
  double prev = 1e300;
  for (double d : {1.0, 2.0, 4.0, 8.0}) {
    const Vec3 far = Vec3::Constant(0.5) + Vec3(d, 0, 0);
    const double n = eval_velocity(s, PointCloud{far}).front().norm();
    EXPECT_LE(n, prev);
    prev = n;
  }
  EXPECT_EQ(prev, 0.0);
}

// Dropping weights t beyond the cutoff moves the normalized average by at most
// 2 * vmax * t / (eps + total weight).
TEST(EvalVelocity, TreeModeWithinTruncationBound) {
  Rng rng(4);
  for (double sigma : {0.03, 0.1}) {
    const SvfSample s = random_svf(rng, 400, 0.05, sigma);
    const PointCloud q = random_points(rng, 200, 0.2, 0.8);
    const PointCloud exact = eval_velocity(s, q), tree = eval_velocity(s, q, Evaluation::Tree);
    double vmax = 0.0;
    for (const Vec3& v : s.velocities) vmax = std::max(vmax, v.norm());
    for (std::size_t m = 0; m < q.size(); ++m) {
      double total = 0.0, tail = 0.0;
      for (const Vec3& c : s.control_points) {
        const double d2 = (q[m] - c).squaredNorm();
        const double w = std::exp(-d2 / (2 * sigma * sigma));
        total += w;
        if (d2 > 16 * sigma * sigma) tail += w;
      }
      EXPECT_LE((exact[m] - tree[m]).norm(), 2 * vmax * tail / (s.epsilon + total) + 1e-15);
    }
  }
}

TEST(ExpSvf, ZeroFieldIsIdentity) {
  Rng rng(5);
  const SvfSample s = random_svf(rng, 10, 0.0, 0.1);
  const PointCloud q = random_points(rng, 25);
  EXPECT_EQ(exp_svf(s, q, 12), q);
}

TEST(ExpSvf, SingleControlMovesByItsVelocity) {
  const Vec3 v = Vec3(0.6, -0.0, 0.8) * 0.01;
  SvfSample s{{Vec3(0.5, 0.5, 0.5)}, {v}, 0.01, 1e-8};
  const Vec3 moved = exp_svf(s, s.control_points, 12).front();
  EXPECT_LT((moved - s.control_points[0] - v).norm(), 1e-6);
}

TEST(ExpSvf, InverseErrorShrinksWithSteps) {
  Rng rng(6);
  const SvfSample s = random_svf(rng, 60, 0.05, 0.05);
  const PointCloud q = random_points(rng, 200);
  double prev = 1e300;
  for (int steps : {12, 24, 48}) {
    const PointCloud back = exp_svf(negate(s), exp_svf(s, q, steps), steps);
    const double e = max_error(back, q);
    EXPECT_LT(e, prev) << steps;
    prev = e;
  }
}

TEST(ExpSvf, NonFiniteInputIsReported) {
  SvfSample s{{Vec3(0.5, 0.5, 0.5)}, {Vec3(0.1, 0, 0)}, 0.1, 1e-8};
  const PointCloud q = {Vec3(std::numeric_limits<double>::quiet_NaN(), 0, 0)};
  try {
    exp_svf(s, q, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(ExpSvfBackward, OneStepSinglePointIsScaledIdentity) {
  SvfSample s{{Vec3(0.2, 0.3, 0.4)}, {Vec3(0.01, 0.02, -0.03)}, 0.05, 1e-8};
  const PointCloud up = {Vec3(1.0, -2.0, 0.5)};
  const PointCloud g = exp_svf_backward(s, s.control_points, 1, up);
  EXPECT_LT((g[0] - up[0] / (1.0 + 1e-8)).norm(), 1e-15);
}

TEST(ExpSvfBackward, ZeroUpstreamGivesZero) {
  Rng rng(7);
  const SvfSample s = random_svf(rng, 8, 0.05, 0.2);
  const PointCloud q = random_points(rng, 5);
  for (const Vec3& g : exp_svf_backward(s, q, 3, PointCloud(5, Vec3::Zero()))) EXPECT_EQ(g, Vec3::Zero());
  EXPECT_THROW(exp_svf_backward(s, q, 3, PointCloud(4, Vec3::Zero())), Error);
}

// Oracle: central finite differences of sum(upstream . exp_svf(v)).
TEST(ExpSvfBackward, MatchesFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(20), m = 1 + rng.index(20);
    const int steps = 1 + static_cast<int>(rng.index(4));
    SvfSample s = random_svf(rng, n, 0.1, rng.uniform(0.05, 0.3));
    const PointCloud q = trial % 2 ? random_points(rng, m) : s.control_points;
    PointCloud up(q.size());
    for (Vec3& u : up) u = Vec3(rng.normal(), rng.normal(), rng.normal());
    auto loss = [&](const SvfSample& f) {
      double l = 0.0;
      const PointCloud out = exp_svf(f, q, steps);
      for (std::size_t i = 0; i < out.size(); ++i) l += up[i].dot(out[i]);
      return l;
    };
    const PointCloud g = exp_svf_backward(s, q, steps, up);
    double num = 0.0, den = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) {
        SvfSample plus = s, minus = s;
        plus.velocities[i][a] += h;
        minus.velocities[i][a] -= h;
        const double fd = (loss(plus) - loss(minus)) / (2 * h);
        num += (fd - g[i][a]) * (fd - g[i][a]);
        den += fd * fd;
      }
    EXPECT_LT(std::sqrt(num / den), 1e-6) << "trial " << trial;
  }
}

TEST(Negate, IsAnInvolution) {
  Rng rng(9);
  const SvfSample s = random_svf(rng, 10, 0.05, 0.1);
  EXPECT_EQ(negate(negate(s)).velocities, s.velocities);
  const SvfSample z = random_svf(rng, 4, 0.0, 0.1);
  for (const Vec3& v : negate(z).velocities) EXPECT_EQ(v.norm(), 0.0);
}

TEST(FuseRegions, SingleInputIsUnchanged) {
  Rng rng(10);
  const SvfSample s = random_svf(rng, 10, 0.05, 0.1);
  const SvfSample f = fuse_regions(std::vector<SvfSample>{s});
  EXPECT_EQ(f.control_points, s.control_points);
  EXPECT_EQ(f.velocities, s.velocities);
}

TEST(FuseRegions, SharedPointsAverageTheirVelocities) {
  const Vec3 p(0.5, 0.5, 0.5), v(0.01, 0.02, 0.03);
  const SvfSample a{{p}, {v}, 0.02, 1e-8};
  const Vec3 twice = eval_velocity(fuse_regions(std::vector<SvfSample>{a, a}), PointCloud{p}).front();
  EXPECT_LT((twice - 2.0 * v / (1e-8 + 2.0)).norm(), 1e-18);
  const Vec3 cancel = eval_velocity(fuse_regions(std::vector<SvfSample>{a, negate(a)}), PointCloud{p}).front();
  EXPECT_LT(cancel.norm(), 1e-18);
}

TEST(FuseRegions, BandwidthMismatchIsAnError) {
  const SvfSample a{{Vec3::Zero()}, {Vec3::Zero()}, 0.02, 1e-8};
  SvfSample b = a;
  b.sigma = 0.03;
  try {
    fuse_regions(std::vector<SvfSample>{a, b});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BandwidthMismatch);
  }
}

TEST(FuseRegions, RegionOrderDoesNotChangeTheFieldBitwise) {
  Rng rng(11);
  std::vector<SvfSample> parts;
  for (int i = 0; i < 4; ++i) parts.push_back(random_svf(rng, 20, 0.05, 0.05));
  const PointCloud q = random_points(rng, 50);
  const PointCloud a = eval_velocity(fuse_regions(parts), q);
  std::reverse(parts.begin(), parts.end());
  std::swap(parts[0], parts[2]);
  EXPECT_EQ(eval_velocity(fuse_regions(parts), q), a);
}

TEST(BchFirstOrder, ZeroOperandAndCancellation) {
  Rng rng(12);
  const SvfSample a = random_svf(rng, 15, 0.05, 0.05);
  SvfSample zero = random_svf(rng, 10, 0.0, 0.05);
  const SvfSample r = bch_first_order(a, zero);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(r.velocities[i], a.velocities[i]);

  // well-separated controls so the field reproduces each sample
  SvfSample b;
  b.sigma = 0.01;
  for (int i = 0; i < 5; ++i) {
    b.control_points.push_back(Vec3(0.1 + 0.2 * i, 0.5, 0.5));
    b.velocities.push_back(Vec3(0.01 * i, -0.02, 0.005));
  }
  // the epsilon in the normalization leaves a relative residue near 1e-8
  for (const Vec3& v : bch_first_order(negate(b), b).velocities) EXPECT_LT(v.norm(), 1e-9);
  EXPECT_THROW(bch_first_order(a, b), Error);
}

// Oracle: exp(bch(a, b)) against applying exp(b) then exp(a) on a grid; the
// gap shrinks quadratically when both fields are scaled down together.
TEST(BchFirstOrder, ApproximatesCompositionToSecondOrder) {
  SvfSample base_a, base_b;
  base_a.sigma = base_b.sigma = 0.06;
  for (int k = 0; k < 11; ++k)
    for (int j = 0; j < 11; ++j)
      for (int i = 0; i < 11; ++i) {
        const Vec3 p = Vec3(i, j, k) * 0.1;
        base_a.control_points.push_back(p);
        base_b.control_points.push_back(p);
        const Vec3 c = p - Vec3::Constant(0.5);
        base_a.velocities.push_back(Vec3(c.y(), -c.x(), 0.2 * c.z()));
        base_b.velocities.push_back(Vec3(0.3 * c.x(), c.z(), -c.y()));
      }
  PointCloud grid;
  for (double x : {0.4, 0.5, 0.6})
    for (double y : {0.4, 0.5, 0.6})
      for (double z : {0.4, 0.5, 0.6}) grid.emplace_back(x, y, z);
  auto gap = [&](double scale) {
    const SvfSample a = scaled(base_a, scale), b = scaled(base_b, scale);
    const PointCloud composed = exp_svf(a, exp_svf(b, grid, 48), 48);
    const PointCloud fused = exp_svf(bch_first_order(a, b), grid, 48);
    return max_error(composed, fused);
  };
  const double big = gap(0.1), small = gap(0.05);
  EXPECT_LT(big, 0.1 * 0.1);
  EXPECT_LT(small, 0.35 * big);
}

TEST(AffineLogTest, RoundTripAndInverse) {
  Mat4 a = Mat4::Identity();
  a.topLeftCorner<3, 3>() = Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()).toRotationMatrix() * 1.1;
  a.topRightCorner<3, 1>() = Vec3(0.1, -0.05, 0.2);
  const AffineLog l = affine_log(a);
  EXPECT_LT((l.matrix() - a).cwiseAbs().maxCoeff(), 1e-12);
  TransformChain chain;
  chain.terms = {l, inverse(l)};
  Rng rng(13);
  const PointCloud q = random_points(rng, 30);
  EXPECT_LT(max_error(apply_chain(chain, q), q), 1e-10);
}

TEST(AffineLogTest, ReflectionIsNotLogable) {
  Mat4 a = Mat4::Identity();
  a(0, 0) = -1.0;
  try {
    affine_log(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotLogable);
  }
}

TEST(ApplyChain, EmptyChainIsIdentity) {
  Rng rng(14);
  const PointCloud q = random_points(rng, 10);
  EXPECT_EQ(apply_chain(TransformChain{}, q), q);
}

TEST(ApplyChain, InverseChainUndoesMixedChain) {
  Rng rng(15);
  Mat4 a = Mat4::Identity();
  a.topLeftCorner<3, 3>() = Eigen::AngleAxisd(0.1, Vec3::UnitZ()).toRotationMatrix();
  a.topRightCorner<3, 1>() = Vec3(0.02, 0.0, -0.01);
  TransformChain chain;
  chain.terms.emplace_back(affine_log(a));
  chain.terms.emplace_back(SvfTerm{random_svf(rng, 30, 0.03, 0.1), 1.0, 48});
  const PointCloud q = random_points(rng, 50);
  EXPECT_LT(max_error(apply_chain(invert(chain), apply_chain(chain, q)), q), 1e-4);
}

TEST(JacobianDeterminant, IdentityAndUniformScaling) {
  const GridSpec grid = GridSpec::cube(5);
  for (double d : jacobian_determinant(TransformChain{}, grid)) EXPECT_NEAR(d, 1.0, 1e-12);
  TransformChain twice;
  twice.terms.emplace_back(affine_log(Mat4(Eigen::Vector4d(2, 2, 2, 1).asDiagonal())));
  for (double d : jacobian_determinant(twice, grid)) EXPECT_NEAR(d, 8.0, 1e-10);
  GridSpec bad = grid;
  bad.spacing.x() = 0.0;
  EXPECT_THROW(jacobian_determinant(twice, bad), Error);
}

TEST(ChainFile, RoundTripIsBitExact) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "nimblereg_chain_test";
  fs::remove_all(dir);
  Rng rng(16);
  Mat4 a = Mat4::Identity();
  a.topLeftCorner<3, 3>() *= 1.05;
  TransformChain chain;
  chain.tag = "prealign";
  chain.terms.emplace_back(affine_log(a));
  chain.terms.emplace_back(SvfTerm{random_svf(rng, 12, 0.03, 0.1), -1.0, 12});
  io::write_chain(dir / "t.json", chain);
  const TransformChain back = io::read_chain(dir / "t.json");
  EXPECT_EQ(back.tag, "prealign");
  ASSERT_EQ(back.terms.size(), 2u);
  const PointCloud q = random_points(rng, 20);
  EXPECT_EQ(apply_chain(back, q), apply_chain(chain, q));
  fs::remove_all(dir);
}
