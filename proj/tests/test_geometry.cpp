#include <gtest/gtest.h>

#include "nimblereg/decimate.hpp"
#include "nimblereg/geometry.hpp"
#include "nimblereg/io.hpp"
#include "test_support.hpp"

using namespace nimblereg;
using namespace nimblereg::testing;

TEST(MarchingCubesTable, EveryConfigurationTriangulates) {
  const auto& table = mc::case_table();
  ASSERT_TRUE(table.complete);
  EXPECT_TRUE(table.triangles[0].empty());
  EXPECT_TRUE(table.triangles[255].empty());
  for (int c = 1; c < 255; ++c) EXPECT_FALSE(table.triangles[c].empty()) << c;
  EXPECT_EQ(table.triangles[1].size(), 1u);
  EXPECT_EQ(table.triangles[0b00000011].size(), 2u);  // half-plane quad
}

TEST(ExtractRegionSurface, SingleVoxelIsOctahedron) {
  LabelVolume vol({5, 5, 5});
  vol.at(2, 2, 2) = 7;
  const Mesh m = extract_region_surface(vol, 7);
  ASSERT_EQ(m.points.size(), 6u);
  ASSERT_EQ(m.simplices.size(), 8u);
  const CoordSet expected = {Vec3(1.5, 2, 2), Vec3(2.5, 2, 2), Vec3(2, 1.5, 2),
                             Vec3(2, 2.5, 2), Vec3(2, 2, 1.5), Vec3(2, 2, 2.5)};
  EXPECT_EQ(coord_set(m.points), expected);
  EXPECT_TRUE(every_edge_twice(m));
  EXPECT_FALSE(m.clipped);
  // outward orientation: octahedron with half-diagonal 0.5 has volume 4/3 * 0.5^3
  EXPECT_NEAR(signed_volume(m), 4.0 / 3.0 * 0.125, 1e-12);
}

TEST(ExtractRegionSurface, MissingLabelIsEmptyRegionError) {
  LabelVolume vol({4, 4, 4});
  vol.at(1, 1, 1) = 1;
  try {
    extract_region_surface(vol, 3);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyRegion);
  }
}

TEST(ExtractRegionSurface, BorderRegionIsFlaggedClipped) {
  LabelVolume vol({4, 4, 4});
  vol.at(0, 1, 1) = 1;
  vol.at(1, 1, 1) = 1;
  const Mesh m = extract_region_surface(vol, 1);
  EXPECT_TRUE(m.clipped);
  EXPECT_FALSE(m.simplices.empty());
  EXPECT_FALSE(every_edge_twice(m));
}

namespace {
LabelVolume two_slabs() {
  LabelVolume vol({8, 8, 8});
  for (int k = 2; k < 6; ++k)
    for (int j = 2; j < 6; ++j)
      for (int i = 2; i < 6; ++i) vol.at(i, j, k) = i < 4 ? 1 : 2;
  return vol;
}
}  // namespace

TEST(ExtractRegionSurface, AdjacentSlabsShareInterfaceVerticesExactly) {
  const LabelVolume vol = two_slabs();
  const Mesh a = extract_region_surface(vol, 1), b = extract_region_surface(vol, 2);
  CoordSet plane_a, plane_b;
  for (const Vec3& p : a.points) if (p.x() == 3.5) plane_a.insert(p);
  for (const Vec3& p : b.points) if (p.x() == 3.5) plane_b.insert(p);
  EXPECT_EQ(plane_a, plane_b);
  EXPECT_EQ(plane_a.size(), 16u);  // one vertex per x-edge crossing between the 4x4 faces
  EXPECT_TRUE(every_edge_twice(a));
  EXPECT_TRUE(every_edge_twice(b));
}

// Oracle: every grid edge between two different labels contributes its
// midpoint to both labels' meshes, and nothing else is shared.
TEST(ExtractRegionSurface, InterfaceSharingAndClosednessOnRandomVolumes) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    for (const LabelVolume& vol : {random_blob_volume(seed), random_noise_volume(seed)}) {
      std::map<Label, CoordSet> verts;
      for (Label l : vol.labels()) {
        if (l == 0) continue;
        const Mesh m = extract_region_surface(vol, l);
        EXPECT_TRUE(every_edge_twice(m)) << "label " << l << " seed " << seed;
        m.validate();
        verts[l] = coord_set(m.points);
      }
      std::map<std::pair<Label, Label>, CoordSet> expected;
      for (int k = 0; k < vol.dims[2]; ++k)
        for (int j = 0; j < vol.dims[1]; ++j)
          for (int i = 0; i < vol.dims[0]; ++i)
            for (int axis = 0; axis < 3; ++axis) {
              std::array<int, 3> o{i, j, k};
              ++o[axis];
              if (!vol.contains(o[0], o[1], o[2])) continue;
              const Label a = vol.at(i, j, k), b = vol.at(o[0], o[1], o[2]);
              if (a == b || a == 0 || b == 0) continue;
              Vec3 mid(i, j, k);
              mid[axis] += 0.5;
              expected[{std::min(a, b), std::max(a, b)}].insert(mid);
            }
      for (const auto& [pair, mids] : expected) {
        for (const Vec3& p : mids) {
          EXPECT_TRUE(verts[pair.first].count(p));
          EXPECT_TRUE(verts[pair.second].count(p));
        }
      }
    }
  }
}

TEST(MergeAndStitch, SingleMeshIsUnchanged) {
  LabelVolume vol({5, 5, 5});
  vol.at(2, 2, 2) = 1;
  const Mesh m = extract_region_surface(vol, 1);
  const Mesh merged = merge_and_stitch(std::vector<Mesh>{m});
  EXPECT_EQ(merged.points, m.points);
  EXPECT_EQ(merged.simplices, m.simplices);
  EXPECT_EQ(merged.face_region, m.face_region);
}

TEST(MergeAndStitch, SharedInterfaceVerticesAreUnified) {
  const LabelVolume vol = two_slabs();
  const std::vector<Mesh> meshes = {extract_region_surface(vol, 1), extract_region_surface(vol, 2)};
  const Mesh merged = merge_and_stitch(meshes);
  CoordSet all;
  std::size_t shared = 0;
  const CoordSet a = coord_set(meshes[0].points), b = coord_set(meshes[1].points);
  for (const Vec3& p : a) shared += b.count(p);
  all.insert(a.begin(), a.end());
  all.insert(b.begin(), b.end());
  EXPECT_EQ(merged.points.size(), all.size());
  EXPECT_EQ(merged.points.size(), meshes[0].points.size() + meshes[1].points.size() - shared);
  EXPECT_EQ(merged.simplices.size(), meshes[0].simplices.size() + meshes[1].simplices.size());
}

TEST(MergeAndStitch, DisjointMeshesConcatenate) {
  LabelVolume vol({9, 9, 9});
  vol.at(2, 2, 2) = 1;
  vol.at(6, 6, 6) = 2;
  const std::vector<Mesh> meshes = {extract_region_surface(vol, 1), extract_region_surface(vol, 2)};
  EXPECT_EQ(merge_and_stitch(meshes).points.size(), 12u);
  EXPECT_TRUE(merge_and_stitch(std::vector<Mesh>{}).points.empty());
}

TEST(Smooth, ZeroIterationsIsIdentity) {
  const Mesh m = extract_region_surface(ball_volume(12, 3.5), 1);
  const Mesh s = smooth(m, {0, 0.5, -0.53});
  EXPECT_EQ(s.points, m.points);
}

TEST(Smooth, SymmetricOctahedronKeepsCentroid) {
  LabelVolume vol({5, 5, 5});
  vol.at(2, 2, 2) = 1;
  const Mesh m = extract_region_surface(vol, 1);
  const Mesh s = smooth(m, {10, 0.5, -0.53});
  Vec3 c0 = Vec3::Zero(), c1 = Vec3::Zero();
  for (const Vec3& p : m.points) c0 += p;
  for (const Vec3& p : s.points) c1 += p;
  EXPECT_LT((c0 - c1).norm() / 6.0, 1e-12);
  EXPECT_EQ(s.simplices, m.simplices);
}

TEST(Smooth, NoisySphereLosesLaplacianEnergy) {
  Mesh m = extract_region_surface(ball_volume(20, 6.5), 1);
  Rng rng(3);
  for (Vec3& p : m.points) p += 0.2 * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  const double before = laplacian_energy(m);
  const Mesh s = smooth(m, {});
  EXPECT_LT(laplacian_energy(s), before);
  EXPECT_EQ(s.simplices, m.simplices);
}

TEST(Smooth, IsolatedVerticesStayPut) {
  Mesh m = extract_region_surface(ball_volume(10, 2.5), 1);
  m.points.push_back(Vec3(100, 100, 100));
  const Mesh s = smooth(m, {5, 0.5, -0.53});
  EXPECT_EQ(s.points.back(), Vec3(100, 100, 100));
}

TEST(SplitByRegion, RoundTripPreservesCoordinateSets) {
  const LabelVolume vol = random_blob_volume(11);
  std::vector<Mesh> meshes;
  for (Label l : vol.labels())
    if (l != 0) meshes.push_back(extract_region_surface(vol, l));
  const auto parts = split_by_region(merge_and_stitch(meshes));
  ASSERT_EQ(parts.size(), meshes.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    EXPECT_EQ(parts[i].first, meshes[i].face_region.front());
    EXPECT_EQ(coord_set(parts[i].second.points), coord_set(meshes[i].points));
    EXPECT_EQ(parts[i].second.simplices.size(), meshes[i].simplices.size());
  }
}

TEST(SplitByRegion, SingleRegionAndSlabs) {
  LabelVolume single({5, 5, 5});
  single.at(2, 2, 2) = 4;
  EXPECT_EQ(split_by_region(merge_and_stitch(std::vector<Mesh>{extract_region_surface(single, 4)})).size(), 1u);

  const LabelVolume vol = two_slabs();
  const auto parts =
      split_by_region(merge_and_stitch(std::vector<Mesh>{extract_region_surface(vol, 1), extract_region_surface(vol, 2)}));
  ASSERT_EQ(parts.size(), 2u);
  const CoordSet a = coord_set(parts[0].second.points), b = coord_set(parts[1].second.points);
  for (const Vec3& p : a)
    if (p.x() == 3.5) EXPECT_TRUE(b.count(p));
}

TEST(ExtractInterfaces, MatchesBruteForceIntersection) {
  const LabelVolume vol = two_slabs();
  std::vector<TaggedPoints> surfaces;
  for (Label l : {0, 1, 2}) surfaces.push_back({l, extract_region_surface(vol, l).points});
  const auto faces = extract_interfaces<TaggedPoints>(surfaces);
  for (std::size_t a = 0; a < surfaces.size(); ++a)
    for (std::size_t b = a + 1; b < surfaces.size(); ++b) {
      std::size_t brute = 0;
      for (const Vec3& p : coord_set(surfaces[a].points)) brute += coord_set(surfaces[b].points).count(p);
      const auto it = faces.find({surfaces[a].region, surfaces[b].region});
      EXPECT_EQ(it == faces.end() ? 0u : it->second.size(), brute);
    }
  EXPECT_EQ(faces.at({1, 2}).size(), 16u);
}

TEST(ExtractInterfaces, DisjointRegionsAndSelfPairsAreOmitted) {
  LabelVolume vol({9, 9, 9});
  vol.at(2, 2, 2) = 1;
  vol.at(6, 6, 6) = 2;
  std::vector<TaggedPoints> s = {{1, extract_region_surface(vol, 1).points}, {2, extract_region_surface(vol, 2).points}};
  EXPECT_TRUE(extract_interfaces<TaggedPoints>(s).empty());
  s.push_back(s[0]);  // same region twice
  const auto faces = extract_interfaces<TaggedPoints>(s);
  EXPECT_TRUE(faces.empty());
}

namespace {
double hausdorff(const PointCloud& a, const PointCloud& b) {
  auto one_side = [](const PointCloud& x, const PointCloud& y) {
    double worst = 0.0;
    for (const Vec3& p : x) {
      double best = 1e300;
      for (const Vec3& q : y) best = std::min(best, (p - q).norm());
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(one_side(a, b), one_side(b, a));
}
}  // namespace

TEST(DecimateAndFixCounts, ExactTargetsAreANoOp) {
  LabelVolume vol({5, 5, 5});
  vol.at(2, 2, 2) = 1;
  const Mesh m = extract_region_surface(vol, 1);
  const DomainBox box = vol.bounds();
  const RegionSurface s = decimate_and_fix_counts(m, 1, {6, 8}, 9, box);
  ASSERT_EQ(s.points.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(s.points[i], box.normalize(m.points[i]));
  EXPECT_EQ(s.simplices, m.simplices);
  EXPECT_TRUE(s.duplicated_from.empty());
}

TEST(DecimateAndFixCounts, EmitsExactCountsInUnitCube) {
  const LabelVolume vol = ball_volume(24, 8.5);
  const Mesh m = smooth(extract_region_surface(vol, 1), {20, 0.5, -0.53});
  const std::size_t p = m.points.size() / 2;
  const RegionSurface s = decimate_and_fix_counts(m, 1, {p, 2 * p - 3}, 5, vol.bounds());
  s.validate(p, 2 * p - 3);
  EXPECT_LE(s.core_count, p);

  // small targets force duplication of both simplices and points
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const RegionSurface t = decimate_and_fix_counts(m, 1, {300, 700}, seed, vol.bounds());
    t.validate(300, 700);
    for (const auto& [from, to] : t.duplicated_from) EXPECT_EQ(t.points[from], t.points[to]);
  }
}

TEST(DecimateAndFixCounts, DecimatedSphereStaysClose) {
  const LabelVolume vol = ball_volume(28, 10.5);
  const Mesh m = smooth(extract_region_surface(vol, 1), {30, 0.5, -0.53});
  const Mesh d = decimate(m, 250, 480);
  EXPECT_LE(d.points.size(), 250u);
  EXPECT_LE(d.simplices.size(), 480u);
  EXPECT_TRUE(every_edge_twice(d));
  EXPECT_LT(hausdorff(d.points, m.points), 2.0 * std::sqrt(3.0));
}

TEST(DecimateAndFixCounts, TooSmallMeshIsAnError) {
  Mesh m;
  m.points = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  m.simplices = {{0, 1, 2}};
  EXPECT_THROW(decimate_and_fix_counts(m, 1, {4, 2}, 0, DomainBox{}), Error);
}

TEST(FileFormats, VolumeAndSurfaceRoundTrip) {
  const LabelVolume vol = random_blob_volume(4, 10, 3);
  const LabelVolume back = io::decode_volume(io::encode_volume(vol));
  EXPECT_EQ(back.data, vol.data);
  EXPECT_EQ(back.dims, vol.dims);
  EXPECT_EQ(io::encode_volume(back), io::encode_volume(vol));

  const Mesh m = smooth(extract_region_surface(ball_volume(16, 5.5), 1), {5, 0.5, -0.53});
  const RegionSurface s = decimate_and_fix_counts(m, 3, {200, 420}, 17, DomainBox{Vec3::Zero(), Vec3::Constant(16)});
  const RegionSurface r = io::decode_surface(io::encode_surface(s));
  EXPECT_EQ(r.points, s.points);
  EXPECT_EQ(r.simplices, s.simplices);
  EXPECT_EQ(r.duplicated_from, s.duplicated_from);
  EXPECT_EQ(r.core_count, s.core_count);
  EXPECT_EQ(r.region, 3);

  EXPECT_THROW(io::decode_volume("NVOX"), Error);
  EXPECT_THROW(io::decode_surface("v 1 2\n"), Error);
}
