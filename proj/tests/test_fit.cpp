#include "bodyfit/sim3_fit.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace bodyfit;

namespace {

struct Scene {
  TriMesh asset;
  TriMesh target;
  std::array<OrthoCamera, 4> cams;
  std::vector<SilhouetteImage> sils;
};

Scene make_scene(const Sim3Params& truth, int size) {
  Scene s;
  s.asset = fixtures::asymmetric_fixture();
  s.target = apply_sim3(truth, s.asset);
  s.cams = body_view_cameras(s.target, size);
  for (const auto& c : s.cams) s.sils.push_back(rasterize_silhouette(s.target, c));
  return s;
}

FitConfig config_for(const Scene& s, int iters) {
  FitConfig cfg;
  cfg.length_scale = aabb(s.target).diagonal();
  cfg.max_iters = iters;
  return cfg;
}

}  // namespace

TEST(SilhouetteLoss, KnownValues) {
  SilhouetteImage zero(16, 16, 0.0), one(16, 16, 1.0), quarter(16, 16, 0.75);
  std::vector<SilhouetteImage> a{zero}, b{one}, c{quarter};
  EXPECT_EQ(silhouette_loss(a, a), 0.0);
  EXPECT_EQ(silhouette_loss(a, b), 1.0);
  EXPECT_DOUBLE_EQ(silhouette_loss(b, c), 0.25);
  // Averages over every pixel of every view.
  std::vector<SilhouetteImage> ab{zero, one}, aa{zero, zero};
  EXPECT_DOUBLE_EQ(silhouette_loss(ab, aa), 0.5);
}

TEST(SilhouetteLoss, SymmetricAndBounded) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 20; ++i) {
    std::vector<SilhouetteImage> x(2, SilhouetteImage(24, 24)), y(2, SilhouetteImage(24, 24));
    for (auto* set : {&x, &y})
      for (auto& img : *set)
        for (auto& v : img.data) v = u(rng);
    const double l = silhouette_loss(x, y);
    EXPECT_DOUBLE_EQ(l, silhouette_loss(y, x));
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
  }
}

TEST(SilhouetteLoss, RejectsMismatchedInputs) {
  std::vector<SilhouetteImage> a{SilhouetteImage(16, 16)}, b{SilhouetteImage(32, 32)}, none;
  EXPECT_THROW(silhouette_loss(a, b), ValidationError);
  EXPECT_THROW(silhouette_loss(none, none), ValidationError);
  std::vector<SilhouetteImage> two(2, SilhouetteImage(16, 16));
  EXPECT_THROW(silhouette_loss(a, two), ValidationError);
}

TEST(Fit, DepthTranslationLeavesViewUnchanged) {
  const TriMesh m = fixtures::asymmetric_fixture();
  const auto cams = four_view_cameras(1.0, 96);
  const auto front = rasterize_silhouette(m, cams[0]);
  const auto left = rasterize_silhouette(m, cams[1]);
  for (double dz : {-0.3, 0.05, 0.4}) {
    const TriMesh moved = apply_sim3({1.0, Vec3::Zero(), Vec3(0, 0, dz)}, m);
    EXPECT_EQ(rasterize_silhouette(moved, cams[0]), front);
    EXPECT_FALSE(rasterize_silhouette(moved, cams[1]) == left);
  }
}

TEST(Fit, FiniteDifferenceStepIsResolved) {
  // The central-difference gradient of the soft loss should not depend much
  // on the step once silhouettes are smooth at that scale.
  const Sim3Params truth{1.1, Vec3(0.1, -0.2, 0.05), Vec3(0.02, -0.03, 0.01)};
  const Scene s = make_scene(truth, 128);
  const Vec3 c = aabb(s.asset).center();
  std::vector<Vec3> centered;
  for (const auto& v : s.asset.vertices) centered.push_back(v - c);
  SilhouetteRenderer renderer(centered, s.asset.faces, s.cams);
  const Sim3Params at{1.0, Vec3(0.05, -0.1, 0.0), c + Vec3(0.03, 0.0, -0.02)};
  auto loss = [&](const detail::ParamVec& v) { return silhouette_loss(renderer.render(detail::unpack(v), 2.0), s.sils); };
  const detail::ParamVec x = detail::pack(at);
  const double D = aabb(s.target).diagonal();
  const double base_step[7] = {1e-2, 1e-2, 1e-2, 1e-2, 1e-2 * D, 1e-2 * D, 1e-2 * D};
  for (int k = 0; k < 7; ++k) {
    double g[2];
    for (int j = 0; j < 2; ++j) {
      const double h = base_step[k] / (1 << j);
      detail::ParamVec hi = x, lo = x;
      hi(k) += h;
      lo(k) -= h;
      g[j] = (loss(hi) - loss(lo)) / (2 * h);
    }
    EXPECT_NEAR(g[0], g[1], 0.2 * std::abs(g[1]) + 1e-4) << "parameter " << k;
  }
}

TEST(Fit, GroundTruthStartStaysPut) {
  const Scene s = make_scene(Sim3Params::identity(), 96);
  auto cfg = config_for(s, 40);
  const auto r = fit_sim3(s.asset, s.sils, s.cams, cfg);
  EXPECT_LT(r.final_loss_hard, 1e-3);
  EXPECT_NEAR(r.params.s, 1.0, 0.01);
  EXPECT_LT(r.params.t.norm(), 0.01 * cfg.length_scale);
  EXPECT_LT(rotation_angle_between(r.params.rotation(), Mat3::Identity()), 1.0 * std::numbers::pi / 180);
}

TEST(Fit, RecoversModerateTransform) {
  const Sim3Params truth{0.85, Vec3(0.08, 0.2, -0.1), Vec3(0.05, -0.08, 0.1)};
  const Scene s = make_scene(truth, 128);
  const auto cfg = config_for(s, 300);
  const auto r = fit_sim3(s.asset, s.sils, s.cams, cfg);
  EXPECT_NEAR(r.params.s / truth.s, 1.0, 0.02);
  EXPECT_LT(rotation_angle_between(r.params.rotation(), truth.rotation()) * 180 / std::numbers::pi, 2.0);
  EXPECT_LT((r.params.t - truth.t).norm(), 0.02 * cfg.length_scale);
  EXPECT_LT(r.final_loss_hard, 1e-3);

  ASSERT_EQ(static_cast<int>(r.loss_history.size()), r.iters);
  EXPECT_LE(r.iters, cfg.max_iters);
  double running = std::numeric_limits<double>::infinity();
  for (double l : r.loss_history) {
    ASSERT_TRUE(std::isfinite(l));
    const double next = std::min(running, l);
    ASSERT_LE(next, running);
    running = next;
  }
}

TEST(Fit, CentroidInitialisationShiftsTowardsTarget) {
  const Sim3Params truth{1.0, Vec3::Zero(), Vec3(0.2, -0.1, 0.15)};
  const Scene s = make_scene(truth, 128);
  const Vec3 c = aabb(s.asset).center();
  std::vector<Vec3> centered;
  for (const auto& v : s.asset.vertices) centered.push_back(v - c);
  SilhouetteRenderer renderer(centered, s.asset.faces, s.cams);
  const Vec3 shift = centroid_translation(renderer.render_hard({1.0, Vec3::Zero(), c}), s.sils, s.cams);
  // Pure translation: matching centroids recovers it up to pixel quantization,
  // which enters every component through two views.
  EXPECT_LT((shift - truth.t).norm(), 3.0 / Projector(s.cams[0]).pixels_per_unit());
}

TEST(Fit, ValidatesInputs) {
  const Scene s = make_scene(Sim3Params::identity(), 64);
  auto cfg = config_for(s, 5);
  std::vector<SilhouetteImage> wrong_size(4, SilhouetteImage(32, 32));
  EXPECT_THROW(fit_sim3(s.asset, wrong_size, s.cams, cfg), ValidationError);
  std::vector<SilhouetteImage> empty(4, SilhouetteImage(64, 64, 0.0));
  EXPECT_THROW(fit_sim3(s.asset, empty, s.cams, cfg), ValidationError);
  std::vector<SilhouetteImage> three(s.sils.begin(), s.sils.begin() + 3);
  EXPECT_THROW(fit_sim3(s.asset, three, s.cams, cfg), ValidationError);
  cfg.length_scale = 0;
  EXPECT_THROW(fit_sim3(s.asset, s.sils, s.cams, cfg), ValidationError);
  cfg = config_for(s, 0);
  EXPECT_THROW(fit_sim3(s.asset, s.sils, s.cams, cfg), ValidationError);
  EXPECT_THROW(fit_sim3(TriMesh{}, s.sils, s.cams, config_for(s, 5)), ValidationError);
}

TEST(Fit, SingleCoveredViewStillRuns) {
  Scene s = make_scene(Sim3Params::identity(), 64);
  for (int k = 1; k < 4; ++k) s.sils[k] = SilhouetteImage(64, 64, 0.0);
  const auto r = fit_sim3(s.asset, s.sils, s.cams, config_for(s, 4));
  EXPECT_TRUE(std::isfinite(r.final_loss_soft));
}
