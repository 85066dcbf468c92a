#pragma once

#include <array>
#include <cmath>

#include "mdeh/tensor.hpp"

namespace mdeh {

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
};

struct Mat3 {
  // Row-major.
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
  static Mat3 identity() { return {}; }
  double& at(int r, int c) { return m[static_cast<size_t>(r * 3 + c)]; }
  double at(int r, int c) const { return m[static_cast<size_t>(r * 3 + c)]; }
  Mat3 operator*(const Mat3& o) const;
  Vec3 operator*(const Vec3& v) const;
  Mat3 transposed() const;
  double det() const;
  /// Throws std::domain_error when singular.
  Mat3 inverse() const;
  double max_abs() const;
  double frobenius() const;
};

/// Pinhole intrinsics in pixels.
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  void validate() const;
};

struct ProjectedPixel {
  double u = 0, v = 0;
  bool valid = false;  // false when the point lies at or behind the camera
};

/// Rigid SE(3) transform: X' = R*X + t. Maintains orthonormality invariants.
class RigidTransform {
 public:
  RigidTransform() = default;
  RigidTransform(const Mat3& rotation, const Vec3& translation);
  static RigidTransform identity() { return {}; }
  static RigidTransform from_matrix4(const std::array<double, 16>& row_major);
  /// Rodrigues exponential map from an axis-angle 3-vector.
  static Mat3 rotation_from_axis_angle(const Vec3& aa);

  const Mat3& rotation() const { return r_; }
  const Vec3& translation() const { return t_; }
  std::array<double, 16> matrix4() const;

  Vec3 apply(const Vec3& p) const { return r_ * p + t_; }
  RigidTransform compose(const RigidTransform& inner) const;  // this ∘ inner
  RigidTransform inverse() const;
  bool is_identity() const;
  /// max(|R^T R - I|, |det(R) - 1|)
  double orthonormality_error() const;
  void validate() const;  // throws when orthonormality error > 1e-5

 private:
  Mat3 r_;
  Vec3 t_;
};

/// Planar board placed at distance z_c with yaw alpha, centered on the
/// camera's principal axis. Physical size (W,H) meters maps onto a (w,h)
/// pixel texture; the aspect ratios must agree.
struct BoardPlacement {
  double z_c = 0;        // meters
  double alpha_rad = 0;  // yaw
  double phys_w = 0, phys_h = 0;
  int pix_w = 0, pix_h = 0;
  void validate() const;
};

/// Per-target-pixel source coordinates plus validity.
struct WarpField {
  Tensor grid;      // (1,2,H,W): channel 0 = u, channel 1 = v
  Tensor validity;  // (1,1,H,W): 1 valid, 0 invalid
  int height() const { return grid.dim(2); }
  int width() const { return grid.dim(3); }
};

// --- point operations -------------------------------------------------------

/// Pixel + depth -> camera-frame 3D point. Throws on non-positive depth.
Vec3 backproject(double u, double v, double depth, const Intrinsics& K);

/// Camera-frame 3D point -> sub-pixel image coordinates. Points with z <= 0
/// come back flagged invalid.
ProjectedPixel project(const Vec3& p, const Intrinsics& K);

/// Board pixel (u_A, v_A) -> 3D point in the target camera frame: the inner
/// scale/center map followed by the yaw-rotation/translation map.
Vec3 board_to_cam(double u_a, double v_a, const BoardPlacement& placement);

/// The composite board->image maps for both views, expressed as exact 3x3
/// homographies (the board is planar). Throws std::domain_error when the
/// mapping degenerates (edge-on board or singular matrix).
struct BoardHomographies {
  Mat3 a_to_t;
  Mat3 a_to_s;
};
BoardHomographies board_homographies(const BoardPlacement& placement, const Intrinsics& K,
                                     const RigidTransform& t_to_s);

/// Apply a homography to (u,v,1); throws when the result lies at infinity.
ProjectedPixel apply_homography(const Mat3& h, double u, double v);

/// Depth (along the camera z axis) of the tilted board plane seen through
/// pixel (u,v); <=0 means the ray never hits the plane in front.
double board_plane_depth(double u, double v, const BoardPlacement& placement,
                         const Intrinsics& K);

/// Dense correspondence: backproject every target pixel with its depth,
/// transform by T, project into the source view. `depth` is (H,W) meters.
WarpField warp_field(const Tensor& depth, const RigidTransform& t_to_s, const Intrinsics& K);

/// Inverse-warp the source image (C,H,W) at the warp coordinates.
/// Returns the reconstruction and copies the warp validity mask (H,W).
struct Reconstruction {
  Tensor image;  // (C,H,W)
  Tensor validity;  // (H,W)
};
Reconstruction reconstruct_view(const Tensor& source_image, const WarpField& warp);

}  // namespace mdeh
