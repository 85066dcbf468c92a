#include "mdeh/geometry.hpp"

#include <stdexcept>

#include "mdeh/kernels.hpp"

namespace mdeh {

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += at(i, k) * o.at(k, j);
      r.at(i, j) = acc;
    }
  return r;
}

Vec3 Mat3::operator*(const Vec3& v) const {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.at(i, j) = at(j, i);
  return r;
}

double Mat3::det() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 Mat3::inverse() const {
  const double d = det();
  if (std::fabs(d) < 1e-300) throw std::domain_error("Mat3::inverse: singular matrix");
  Mat3 r;
  r.m[0] = (m[4] * m[8] - m[5] * m[7]) / d;
  r.m[1] = (m[2] * m[7] - m[1] * m[8]) / d;
  r.m[2] = (m[1] * m[5] - m[2] * m[4]) / d;
  r.m[3] = (m[5] * m[6] - m[3] * m[8]) / d;
  r.m[4] = (m[0] * m[8] - m[2] * m[6]) / d;
  r.m[5] = (m[2] * m[3] - m[0] * m[5]) / d;
  r.m[6] = (m[3] * m[7] - m[4] * m[6]) / d;
  r.m[7] = (m[1] * m[6] - m[0] * m[7]) / d;
  r.m[8] = (m[0] * m[4] - m[1] * m[3]) / d;
  return r;
}

double Mat3::max_abs() const {
  double mx = 0;
  for (double v : m) mx = std::max(mx, std::fabs(v));
  return mx;
}

double Mat3::frobenius() const {
  double acc = 0;
  for (double v : m) acc += v * v;
  return std::sqrt(acc);
}

void Intrinsics::validate() const {
  if (fx <= 0 || fy <= 0) throw std::invalid_argument("intrinsics: focal lengths must be > 0");
  if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: empty image");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw std::invalid_argument("intrinsics: principal point outside image");
}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : r_(rotation), t_(translation) {
  validate();
}

RigidTransform RigidTransform::from_matrix4(const std::array<double, 16>& h) {
  if (h[12] != 0 || h[13] != 0 || h[14] != 0 || h[15] != 1)
    throw std::invalid_argument("rigid transform: bottom row must be [0 0 0 1]");
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.at(i, j) = h[static_cast<size_t>(i * 4 + j)];
  return RigidTransform(r, {h[3], h[7], h[11]});
}

Mat3 RigidTransform::rotation_from_axis_angle(const Vec3& aa) {
  const double theta = aa.norm();
  Mat3 r = Mat3::identity();
  if (theta < 1e-12) {
    // First-order term keeps the map smooth near zero.
    r.at(0, 1) = -aa.z; r.at(0, 2) = aa.y;
    r.at(1, 0) = aa.z;  r.at(1, 2) = -aa.x;
    r.at(2, 0) = -aa.y; r.at(2, 1) = aa.x;
    return r;
  }
  const Vec3 k = aa * (1.0 / theta);
  const double c = std::cos(theta), s = std::sin(theta), t = 1 - c;
  r.at(0, 0) = c + k.x * k.x * t;
  r.at(0, 1) = k.x * k.y * t - k.z * s;
  r.at(0, 2) = k.x * k.z * t + k.y * s;
  r.at(1, 0) = k.y * k.x * t + k.z * s;
  r.at(1, 1) = c + k.y * k.y * t;
  r.at(1, 2) = k.y * k.z * t - k.x * s;
  r.at(2, 0) = k.z * k.x * t - k.y * s;
  r.at(2, 1) = k.z * k.y * t + k.x * s;
  r.at(2, 2) = c + k.z * k.z * t;
  return r;
}

std::array<double, 16> RigidTransform::matrix4() const {
  std::array<double, 16> h{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) h[static_cast<size_t>(i * 4 + j)] = r_.at(i, j);
  }
  h[3] = t_.x;
  h[7] = t_.y;
  h[11] = t_.z;
  h[15] = 1;
  return h;
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
  RigidTransform out;
  out.r_ = r_ * inner.r_;
  out.t_ = r_ * inner.t_ + t_;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.r_ = r_.transposed();
  out.t_ = (out.r_ * t_) * -1.0;
  return out;
}

bool RigidTransform::is_identity() const {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (r_.at(i, j) != (i == j ? 1.0 : 0.0)) return false;
  return t_.x == 0 && t_.y == 0 && t_.z == 0;
}

double RigidTransform::orthonormality_error() const {
  const Mat3 rtr = r_.transposed() * r_;
  double err = std::fabs(r_.det() - 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      err = std::max(err, std::fabs(rtr.at(i, j) - (i == j ? 1.0 : 0.0)));
  return err;
}

void RigidTransform::validate() const {
  if (orthonormality_error() > 1e-5)
    throw std::invalid_argument("rigid transform: rotation not orthonormal within 1e-5");
}

void BoardPlacement::validate() const {
  if (z_c <= 0) throw std::invalid_argument("board placement: z_c must be > 0");
  if (std::fabs(alpha_rad) >= 1.5707963267948966)
    throw std::invalid_argument("board placement: |alpha| must be < pi/2");
  if (pix_w <= 0 || pix_h <= 0) throw std::invalid_argument("board placement: empty texture");
  if (phys_w <= 0 || phys_h <= 0) throw std::invalid_argument("board placement: empty board");
  const double ar = phys_w / pix_w, br = phys_h / pix_h;
  if (std::fabs(ar - br) > 1e-6 * std::max(ar, br) + 1e-12)
    throw std::invalid_argument("board placement: W/w must equal H/h (aspect constraint)");
}

Vec3 backproject(double u, double v, double depth, const Intrinsics& K) {
  if (depth <= 0) throw std::invalid_argument("backproject: depth must be > 0");
  return {depth * (u - K.cx) / K.fx, depth * (v - K.cy) / K.fy, depth};
}

ProjectedPixel project(const Vec3& p, const Intrinsics& K) {
  ProjectedPixel out;
  if (p.z <= 0) return out;
  out.u = K.fx * p.x / p.z + K.cx;
  out.v = K.fy * p.y / p.z + K.cy;
  out.valid = true;
  return out;
}

// Columns of the affine board->camera map: X = B * (u_A, v_A, 1).
static Mat3 board_affine(const BoardPlacement& p) {
  const double sx = p.phys_w / p.pix_w, sy = p.phys_h / p.pix_h;
  const double c = std::cos(p.alpha_rad), s = std::sin(p.alpha_rad);
  // Inner map: (u,v,1) -> (sx*u - W/2, sy*v - H/2, 0); then yaw + translate z_c.
  Mat3 b;
  b.at(0, 0) = c * sx;
  b.at(0, 1) = 0;
  b.at(0, 2) = -c * p.phys_w / 2;
  b.at(1, 0) = 0;
  b.at(1, 1) = sy;
  b.at(1, 2) = -p.phys_h / 2;
  b.at(2, 0) = s * sx;
  b.at(2, 1) = 0;
  b.at(2, 2) = -s * p.phys_w / 2 + p.z_c;
  return b;
}

Vec3 board_to_cam(double u_a, double v_a, const BoardPlacement& placement) {
  placement.validate();
  return board_affine(placement) * Vec3{u_a, v_a, 1.0};
}

static Mat3 intrinsics_mat(const Intrinsics& K) {
  Mat3 m;
  m.at(0, 0) = K.fx; m.at(0, 1) = 0;    m.at(0, 2) = K.cx;
  m.at(1, 0) = 0;    m.at(1, 1) = K.fy; m.at(1, 2) = K.cy;
  m.at(2, 0) = 0;    m.at(2, 1) = 0;    m.at(2, 2) = 1;
  return m;
}

BoardHomographies board_homographies(const BoardPlacement& placement, const Intrinsics& K,
                                     const RigidTransform& t_to_s) {
  placement.validate();
  K.validate();
  // Edge-on boards degenerate: the scale-free determinant of the board map is
  // proportional to cos(alpha), so the raw threshold is applied after
  // normalizing by the Frobenius norm, plus an explicit near-edge-on guard.
  if (std::fabs(std::cos(placement.alpha_rad)) < 2.6e-3)
    throw std::domain_error("board_homographies: degenerate homography (edge-on board)");

  const Mat3 kb = intrinsics_mat(K);
  const Mat3 b = board_affine(placement);
  BoardHomographies out;
  out.a_to_t = kb * b;

  // X_s = R*X_t + t = (R*B + t*e3^T) * (u,v,1).
  Mat3 rb = t_to_s.rotation() * b;
  const Vec3& t = t_to_s.translation();
  rb.at(0, 2) += t.x;
  rb.at(1, 2) += t.y;
  rb.at(2, 2) += t.z;
  out.a_to_s = kb * rb;

  for (const Mat3* h : {&out.a_to_t, &out.a_to_s}) {
    if (std::fabs(h->det()) < 1e-12)
      throw std::domain_error("board_homographies: degenerate homography");
  }
  return out;
}

ProjectedPixel apply_homography(const Mat3& h, double u, double v) {
  const Vec3 p = h * Vec3{u, v, 1.0};
  ProjectedPixel out;
  if (p.z <= 0) return out;
  out.u = p.x / p.z;
  out.v = p.y / p.z;
  out.valid = true;
  return out;
}

double board_plane_depth(double u, double v, const BoardPlacement& placement,
                         const Intrinsics& K) {
  // Plane through (0,0,z_c) with normal n = R_yaw * (0,0,1) = (-sin,0,cos).
  const double c = std::cos(placement.alpha_rad), s = std::sin(placement.alpha_rad);
  const double denom = -s * (u - K.cx) / K.fx + c;
  if (std::fabs(denom) < 1e-12) return -1;
  const double z = placement.z_c * c / denom;
  (void)v;
  return z;
}

WarpField warp_field(const Tensor& depth, const RigidTransform& t_to_s, const Intrinsics& K) {
  if (depth.rank() != 2) throw std::invalid_argument("warp_field: depth must be (H,W)");
  const int h = depth.dim(0), w = depth.dim(1);
  if (h != K.height || w != K.width)
    throw std::invalid_argument("warp_field: depth resolution does not match intrinsics");
  WarpField out;
  out.grid = Tensor({1, 2, h, w});
  out.validity = Tensor({1, 1, h, w});

  if (t_to_s.is_identity()) {
    // Eq. collapses to the identity correspondence; emit it exactly.
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        out.grid.at4(0, 0, y, x) = static_cast<float>(x);
        out.grid.at4(0, 1, y, x) = static_cast<float>(y);
        out.validity.at4(0, 0, y, x) = 1.0f;
      }
    return out;
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double d = depth.at2(y, x);
      if (!(d > 0) || !std::isfinite(d))
        throw std::invalid_argument("warp_field: depth must be strictly positive and finite");
      const Vec3 pc = backproject(x, y, d, K);
      const Vec3 ps = t_to_s.apply(pc);
      const ProjectedPixel pp = project(ps, K);
      const bool inside = pp.valid && pp.u >= 0 && pp.u <= w - 1 && pp.v >= 0 && pp.v <= h - 1;
      out.grid.at4(0, 0, y, x) = static_cast<float>(pp.valid ? pp.u : -1.0);
      out.grid.at4(0, 1, y, x) = static_cast<float>(pp.valid ? pp.v : -1.0);
      out.validity.at4(0, 0, y, x) = inside ? 1.0f : 0.0f;
    }
  }
  return out;
}

Reconstruction reconstruct_view(const Tensor& source_image, const WarpField& warp) {
  if (source_image.rank() != 3)
    throw std::invalid_argument("reconstruct_view: source image must be (C,H,W)");
  const int c = source_image.dim(0), h = source_image.dim(1), w = source_image.dim(2);
  if (h != warp.height() || w != warp.width())
    throw std::invalid_argument("reconstruct_view: warp resolution mismatch");
  Tensor img4({1, c, h, w}, std::vector<float>(source_image.values().begin(),
                                               source_image.values().end()));
  Tensor out4 = kernels::grid_sample_fwd(img4, warp.grid);
  Reconstruction rec;
  rec.image = Tensor({c, h, w}, std::vector<float>(out4.values().begin(), out4.values().end()));
  rec.validity = Tensor({h, w}, std::vector<float>(warp.validity.values().begin(),
                                                   warp.validity.values().end()));
  return rec;
}

}  // namespace mdeh
