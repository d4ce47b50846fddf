#pragma once

#include "bodyfit/camera.hpp"
#include "bodyfit/raster.hpp"
#include "bodyfit/so3.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace bodyfit {

// Mean absolute per-pixel difference over all pixels of all views.
inline double silhouette_loss(std::span<const SilhouetteImage> rendered, std::span<const SilhouetteImage> input) {
  if (rendered.size() != input.size()) throw ValidationError("silhouette_loss: view counts differ");
  if (rendered.empty()) throw ValidationError("silhouette_loss: no views");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < rendered.size(); ++k) {
    if (!rendered[k].same_shape(input[k])) throw ValidationError("silhouette_loss: image sizes differ");
    const auto& a = rendered[k].data;
    const auto& b = input[k].data;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
    count += a.size();
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

// Optimizer settings. Translation quantities are multiples of length_scale
// (the body bounding-box diagonal), which must be set by the caller.
struct FitConfig {
  double learning_rate = 0.05;              // scale and axis-angle
  double translation_learning_rate = 0.02;  // x length_scale
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int max_iters = 300;
  double fd_step_scale = 1e-2;
  double fd_step_rotation = 1e-2;     // radians
  double fd_step_translation = 1e-2;  // x length_scale
  double sharpness_coarse = 2.0;      // first half of the iterations
  double sharpness_fine = 8.0;
  double fine_lr_scale = 0.25;        // initial learning-rate factor of the fine phase
  double plateau_factor = 0.25;       // learning-rate factor applied on each stall
  int plateau_decays = 2;             // stalls absorbed by decay before a phase ends
  double convergence_tol = 1e-5;
  int convergence_window = 25;
  double length_scale = 0.0;
  bool centroid_init = true;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string("FitConfig.") + name + " must be positive");
    };
    positive(learning_rate, "learning_rate");
    positive(translation_learning_rate, "translation_learning_rate");
    positive(adam_beta1, "adam_beta1");
    positive(adam_beta2, "adam_beta2");
    positive(adam_epsilon, "adam_epsilon");
    positive(fd_step_scale, "fd_step_scale");
    positive(fd_step_rotation, "fd_step_rotation");
    positive(fd_step_translation, "fd_step_translation");
    positive(sharpness_coarse, "sharpness_coarse");
    positive(sharpness_fine, "sharpness_fine");
    positive(fine_lr_scale, "fine_lr_scale");
    positive(convergence_tol, "convergence_tol");
    positive(length_scale, "length_scale");
    if (max_iters < 1) throw ValidationError("FitConfig.max_iters must be >= 1");
    if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) throw ValidationError("FitConfig.plateau_factor must be in (0, 1]");
    if (plateau_decays < 0) throw ValidationError("FitConfig.plateau_decays must be >= 0");
    if (convergence_window < 1) throw ValidationError("FitConfig.convergence_window must be >= 1");
    if (adam_beta1 >= 1.0 || adam_beta2 >= 1.0) throw ValidationError("Adam betas must be < 1");
  }
};

struct FitResult {
  Sim3Params params;
  std::vector<double> loss_history;
  double final_loss_soft = 0.0;
  double final_loss_hard = 0.0;
  int iters = 0;
};

// Renders silhouettes of `vertices` under a Sim(3) for a fixed camera set.
class SilhouetteRenderer {
 public:
  SilhouetteRenderer(std::span<const Vec3> vertices, std::span<const Face> faces,
                     std::span<const OrthoCamera> cameras)
      : vertices_(vertices.begin(), vertices.end()),
        faces_(faces.begin(), faces.end()),
        adjacency_(build_edge_adjacency(faces)),
        cameras_(cameras.begin(), cameras.end()),
        scratch_(vertices.size()) {}

  std::vector<SilhouetteImage> render(const Sim3Params& p, double sharpness) {
    transform(p);
    std::vector<SilhouetteImage> out;
    out.reserve(cameras_.size());
    for (const auto& cam : cameras_) out.push_back(rasterize_soft_silhouette(scratch_, faces_, adjacency_, cam, sharpness));
    return out;
  }

  std::vector<SilhouetteImage> render_hard(const Sim3Params& p) {
    transform(p);
    std::vector<SilhouetteImage> out;
    out.reserve(cameras_.size());
    for (const auto& cam : cameras_) out.push_back(rasterize_silhouette(scratch_, faces_, cam));
    return out;
  }

 private:
  void transform(const Sim3Params& p) {
    const Mat3 sr = p.s * p.rotation();
    for (std::size_t i = 0; i < vertices_.size(); ++i) scratch_[i] = sr * vertices_[i] + p.t;
  }

  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  EdgeAdjacency adjacency_;
  std::vector<OrthoCamera> cameras_;
  std::vector<Vec3> scratch_;
};

// Coverage-weighted centroid of a silhouette in pixel coordinates; returns
// false when the image has no coverage.
inline bool silhouette_centroid(const SilhouetteImage& img, Vec2& centroid) {
  double w = 0.0, sx = 0.0, sy = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double a = img.at(x, y);
      w += a;
      sx += a * (x + 0.5);
      sy += a * (y + 0.5);
    }
  if (w <= 0.0) return false;
  centroid = Vec2(sx / w, sy / w);
  return true;
}

// Least-squares translation that moves the rendered silhouette centroids onto
// the input centroids, using every view where both are non-empty.
inline Vec3 centroid_translation(std::span<const SilhouetteImage> rendered, std::span<const SilhouetteImage> input,
                                 std::span<const OrthoCamera> cameras) {
  Eigen::MatrixXd a(2 * cameras.size(), 3);
  Eigen::VectorXd b(2 * cameras.size());
  a.setZero();
  b.setZero();
  for (std::size_t k = 0; k < cameras.size(); ++k) {
    Vec2 cr, ci;
    if (!silhouette_centroid(rendered[k], cr) || !silhouette_centroid(input[k], ci)) continue;
    const Projector proj(cameras[k]);
    const double unit = 1.0 / proj.pixels_per_unit();
    const Vec2 d = ci - cr;
    a.row(2 * k) = proj.basis().right.transpose();
    b(2 * k) = d.x() * unit;
    a.row(2 * k + 1) = proj.basis().up.transpose();
    b(2 * k + 1) = -d.y() * unit;
  }
  return a.completeOrthogonalDecomposition().solve(b);
}

namespace detail {

using ParamVec = Eigen::Matrix<double, 7, 1>;

inline ParamVec pack(const Sim3Params& p) {
  ParamVec v;
  v << p.s, p.omega, p.t;
  return v;
}

inline Sim3Params unpack(const ParamVec& v) {
  Sim3Params p;
  p.s = v(0);
  p.omega = v.segment<3>(1);
  p.t = v.segment<3>(4);
  return p;
}

}  // namespace detail

// Fits y = s R x + t of `asset` to the input silhouettes by minimizing the
// mean absolute silhouette difference with Adam on central finite-difference
// gradients. Internally the asset is centered on its bounding box so scale
// and rotation act about the asset; the result is expressed about the world
// origin. Soft silhouettes use sharpness_coarse for the first half of the
// iteration budget and sharpness_fine afterwards; each phase keeps its best
// iterate and ends early once the best loss stalls.
inline FitResult fit_sim3(const TriMesh& asset, std::span<const SilhouetteImage> input_sils,
                          std::span<const OrthoCamera> cameras, const FitConfig& config) {
  config.validate();
  if (input_sils.size() != cameras.size() || cameras.empty())
    throw ValidationError("fit_sim3: need one input silhouette per camera");
  if (asset.faces.empty()) throw ValidationError("fit_sim3: asset has no faces");
  int views_with_coverage = 0;
  for (std::size_t k = 0; k < cameras.size(); ++k) {
    cameras[k].validate();
    if (input_sils[k].width != cameras[k].image_size || input_sils[k].height != cameras[k].image_size)
      throw ValidationError("fit_sim3: silhouette " + std::to_string(k) + " does not match camera resolution");
    double cover = 0.0;
    for (double a : input_sils[k].data) cover += a;
    if (cover > 0.0) ++views_with_coverage;
  }
  if (views_with_coverage == 0) throw ValidationError("fit_sim3: all input silhouettes are empty");
  if (views_with_coverage < 2) log_warn("fit_sim3: input silhouettes cover fewer than two views");

  const Vec3 center = aabb(asset).center();
  std::vector<Vec3> centered(asset.vertices.size());
  for (std::size_t i = 0; i < centered.size(); ++i) centered[i] = asset.vertices[i] - center;
  SilhouetteRenderer renderer(centered, asset.faces, cameras);

  Sim3Params start;
  start.t = center;
  if (config.centroid_init) {
    const auto rendered = renderer.render_hard(start);
    start.t += centroid_translation(rendered, input_sils, cameras);
  }

  const double D = config.length_scale;
  detail::ParamVec lr, step;
  lr << config.learning_rate, Vec3::Constant(config.learning_rate), Vec3::Constant(config.translation_learning_rate * D);
  step << config.fd_step_scale, Vec3::Constant(config.fd_step_rotation), Vec3::Constant(config.fd_step_translation * D);

  auto loss_at = [&](const detail::ParamVec& v, double sharpness) {
    const auto sils = renderer.render(detail::unpack(v), sharpness);
    const double l = silhouette_loss(sils, input_sils);
    if (!std::isfinite(l)) throw NumericalError("fit_sim3: non-finite silhouette loss");
    return l;
  };

  FitResult result;
  detail::ParamVec x = detail::pack(start);
  detail::ParamVec best_x = x;
  const int phase_len[2] = {config.max_iters / 2, config.max_iters - config.max_iters / 2};
  const double phase_sharpness[2] = {config.sharpness_coarse, config.sharpness_fine};
  double best_loss = 0.0;

  for (int phase = 0; phase < 2; ++phase) {
    if (phase_len[phase] == 0) continue;
    const double sharp = phase_sharpness[phase];
    x = best_x;
    detail::ParamVec m = detail::ParamVec::Zero(), v = detail::ParamVec::Zero();
    double lr_scale = phase == 0 ? 1.0 : config.fine_lr_scale;
    int decays = 0;
    int level_start = 0;  // iteration at which the current learning rate began
    best_loss = std::numeric_limits<double>::infinity();
    std::vector<double> best_trace;
    for (int it = 0; it < phase_len[phase]; ++it) {
      const double loss = loss_at(x, sharp);
      result.loss_history.push_back(loss);
      ++result.iters;
      if (loss < best_loss) {
        best_loss = loss;
        best_x = x;
      }
      best_trace.push_back(best_loss);
      // Stalled: best loss improved by less than convergence_tol over the
      // last convergence_window iterations at this learning rate. A stall
      // shrinks the rate and restarts from the best iterate until the decay
      // budget is spent; the last stall ends the phase.
      const int w = config.convergence_window;
      if (it - level_start >= w && best_trace[it - w] - best_loss < config.convergence_tol) {
        if (decays >= config.plateau_decays) break;
        ++decays;
        lr_scale *= config.plateau_factor;
        level_start = it;
        x = best_x;
        m.setZero();
        v.setZero();
      }
      detail::ParamVec grad;
      for (int k = 0; k < 7; ++k) {
        detail::ParamVec hi = x, lo = x;
        hi(k) += step(k);
        lo(k) -= step(k);
        if (k == 0) lo(0) = std::max(lo(0), 0.5 * x(0));
        grad(k) = (loss_at(hi, sharp) - loss_at(lo, sharp)) / (hi(k) - lo(k));
      }
      const double t = it - level_start + 1;
      m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * grad;
      v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * grad.cwiseProduct(grad);
      const detail::ParamVec mhat = m / (1.0 - std::pow(config.adam_beta1, t));
      const detail::ParamVec vhat = v / (1.0 - std::pow(config.adam_beta2, t));
      x -= lr_scale * lr.cwiseProduct(mhat.cwiseQuotient((vhat.cwiseSqrt().array() + config.adam_epsilon).matrix()));
      x(0) = std::max(x(0), 1e-3);
      Sim3Params p = detail::unpack(x);
      p.normalize_rotation();
      x = detail::pack(p);
      if (!x.allFinite()) throw NumericalError("fit_sim3: parameters became non-finite");
    }
  }

  Sim3Params centered_best = detail::unpack(best_x);
  result.final_loss_soft = best_loss;
  result.final_loss_hard = silhouette_loss(renderer.render_hard(centered_best), input_sils);
  // y = s R (x - c) + t'  ==  s R x + (t' - s R c)
  result.params = centered_best;
  result.params.t = centered_best.t - centered_best.s * (centered_best.rotation() * center);
  return result;
}

}  // namespace bodyfit
