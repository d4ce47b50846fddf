#pragma once

#include "bodyfit/mesh.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace bodyfit {

// Orthographic camera looking at `center`. Conventions: right-handed, +Y up.
// Azimuth 0 / elevation 0 sits on +Z and looks along -Z; increasing azimuth
// moves the eye counterclockwise about +Y seen from above (azimuth 90 is on
// +X, the left side of a +Z-facing object).
//
// `near`/`far` bound the signed depth measured from the plane through
// `center` along the viewing direction.
struct OrthoCamera {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double half_extent = 1.0;
  int image_size = 320;
  double near = -4.0;
  double far = 4.0;
  Vec3 center = Vec3::Zero();

  void validate() const {
    if (image_size < 16) throw ValidationError("camera image_size must be >= 16");
    if (!(half_extent > 0.0)) throw ValidationError("camera half_extent must be positive");
    if (!(near < far)) throw ValidationError("camera near must be < far");
  }
};

struct ViewBasis {
  Vec3 right;
  Vec3 up;
  Vec3 forward;  // viewing direction (eye -> scene)
};

inline ViewBasis view_basis(const OrthoCamera& cam) {
  // Reduce first so that azimuth a and a + 360 give bit-identical bases.
  double az_deg = std::fmod(cam.azimuth_deg, 360.0);
  if (az_deg < 0.0) az_deg += 360.0;
  const double az = az_deg * std::numbers::pi / 180.0;
  const double el = cam.elevation_deg * std::numbers::pi / 180.0;
  const Vec3 eye_dir(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
  ViewBasis b;
  b.forward = -eye_dir;
  b.right = Vec3(std::cos(az), 0.0, -std::sin(az));
  b.up = b.right.cross(b.forward);
  return b;
}

// Camera-space coordinates: x,y in pixels (top-left origin, pixel (i,j) has
// its center at (i+0.5, j+0.5)); z is signed depth along the view direction.
struct Projected {
  double x;
  double y;
  double depth;
};

class Projector {
 public:
  explicit Projector(const OrthoCamera& cam)
      : cam_(cam), basis_(view_basis(cam)), scale_(cam.image_size / (2.0 * cam.half_extent)) {}

  Projected operator()(const Vec3& p) const {
    const Vec3 d = p - cam_.center;
    const double u = d.dot(basis_.right);
    const double v = d.dot(basis_.up);
    return {(u + cam_.half_extent) * scale_, (cam_.half_extent - v) * scale_, d.dot(basis_.forward)};
  }

  // True iff p projects inside the image and within the depth range.
  bool in_view(const Vec3& p) const {
    const auto q = (*this)(p);
    return q.x >= 0.0 && q.x <= cam_.image_size && q.y >= 0.0 && q.y <= cam_.image_size &&
           q.depth >= cam_.near && q.depth <= cam_.far;
  }

  // World-space displacement of one pixel step along image x (right) and
  // image y (down).
  Vec3 pixel_right() const { return basis_.right / scale_; }
  Vec3 pixel_down() const { return -basis_.up / scale_; }

  const ViewBasis& basis() const { return basis_; }
  const OrthoCamera& camera() const { return cam_; }
  double pixels_per_unit() const { return scale_; }

 private:
  OrthoCamera cam_;
  ViewBasis basis_;
  double scale_;
};

inline constexpr std::array<double, 4> kViewAzimuths = {0.0, 90.0, 180.0, 270.0};

// The four fixed views in tile order [front, left, back, right], elevation 0,
// sharing one view volume.
inline std::array<OrthoCamera, 4> four_view_cameras(double half_extent, int image_size,
                                                    const Vec3& center = Vec3::Zero()) {
  std::array<OrthoCamera, 4> cams;
  for (int k = 0; k < 4; ++k) {
    cams[k].azimuth_deg = kViewAzimuths[k];
    cams[k].elevation_deg = 0.0;
    cams[k].half_extent = half_extent;
    cams[k].image_size = image_size;
    cams[k].near = -4.0 * half_extent;
    cams[k].far = 4.0 * half_extent;
    cams[k].center = center;
    cams[k].validate();
  }
  return cams;
}

// Shared framing for a body: centered on its bounding box with half-extent
// equal to `margin` times the largest box side (0.55 leaves 10% headroom).
inline std::array<OrthoCamera, 4> body_view_cameras(const TriMesh& body, int image_size,
                                                    double margin = 0.55) {
  const Aabb box = aabb(body);
  return four_view_cameras(margin * box.extent().maxCoeff(), image_size, box.center());
}

}  // namespace bodyfit
