#include "picpoint/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace picpoint {

std::string_view shape_class_name(ShapeClass c) {
  switch (c) {
    case ShapeClass::sphere: return "sphere";
    case ShapeClass::box: return "box";
    case ShapeClass::cylinder: return "cylinder";
    case ShapeClass::cone: return "cone";
    case ShapeClass::torus: return "torus";
  }
  throw std::invalid_argument("unknown shape class");
}

ShapeClass shape_class_from_name(std::string_view name) {
  for (ShapeClass c : kShapeClasses)
    if (shape_class_name(c) == name) return c;
  throw std::invalid_argument("unknown shape class: " + std::string(name));
}

namespace {

void check_range(double v, double lo, double hi, const char* what) {
  if (!(v >= lo && v <= hi))
    throw std::invalid_argument(std::string(what) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

}  // namespace

void validate(const SyntheticShapeSpec& s) {
  if (!(s.jitter_sigma >= 0.0)) throw std::invalid_argument("jitter_sigma must be >= 0");
  switch (s.shape) {
    case ShapeClass::sphere:
      check_range(s.a, 0.5, 1.5, "sphere radius");
      break;
    case ShapeClass::box:
      check_range(s.a, 0.4, 2.0, "box edge a");
      check_range(s.b, 0.4, 2.0, "box edge b");
      check_range(s.c, 0.4, 2.0, "box edge c");
      break;
    case ShapeClass::cylinder:
    case ShapeClass::cone:
      check_range(s.a, 0.2, 1.0, "radius");
      check_range(s.b, 0.4, 2.0, "height");
      break;
    case ShapeClass::torus:
      check_range(s.a, 0.6, 1.2, "torus major radius");
      check_range(s.b, 0.1, 0.5, "torus tube radius");
      if (!(s.b < s.a)) throw std::invalid_argument("torus tube must be thinner than its major radius");
      break;
  }
}

SyntheticShapeSpec random_shape_spec(ShapeClass shape, double jitter_sigma, Rng& rng) {
  SyntheticShapeSpec s;
  s.shape = shape;
  s.jitter_sigma = jitter_sigma;
  switch (shape) {
    case ShapeClass::sphere:
      s.a = rng.uniform(0.5, 1.5);
      break;
    case ShapeClass::box:
      s.a = rng.uniform(0.4, 2.0);
      s.b = rng.uniform(0.4, 2.0);
      s.c = rng.uniform(0.4, 2.0);
      break;
    case ShapeClass::cylinder:
    case ShapeClass::cone:
      s.a = rng.uniform(0.2, 1.0);
      s.b = rng.uniform(0.4, 2.0);
      break;
    case ShapeClass::torus:
      s.a = rng.uniform(0.6, 1.2);
      s.b = rng.uniform(0.1, std::min(0.5, 0.6 * s.a));
      break;
  }
  validate(s);
  return s;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Sample {
  Vec3 p;
  Vec3 n;
};

Sample sample_sphere(double r, Rng& rng) {
  Vec3 d;
  do {
    d = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (d.norm() < 1e-12);
  d.normalize();
  return {r * d, d};
}

Sample sample_box(double a, double b, double c, Rng& rng) {
  const double ax = b * c, ay = a * c, az = a * b;
  const double pick = rng.uniform() * (ax + ay + az);
  const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
  const double s = rng.uniform() - 0.5;
  const double t = rng.uniform() - 0.5;
  if (pick < ax) return {Vec3(sign * a / 2, s * b, t * c), Vec3(sign, 0, 0)};
  if (pick < ax + ay) return {Vec3(s * a, sign * b / 2, t * c), Vec3(0, sign, 0)};
  return {Vec3(s * a, t * b, sign * c / 2), Vec3(0, 0, sign)};
}

Sample sample_disk(double r, double y, double ny, Rng& rng) {
  const double rho = r * std::sqrt(rng.uniform());
  const double phi = kTwoPi * rng.uniform();
  return {Vec3(rho * std::cos(phi), y, rho * std::sin(phi)), Vec3(0, ny, 0)};
}

Sample sample_cylinder(double r, double h, Rng& rng) {
  const double side = kTwoPi * r * h;
  const double cap = std::numbers::pi * r * r;
  const double pick = rng.uniform() * (side + 2 * cap);
  if (pick < side) {
    const double phi = kTwoPi * rng.uniform();
    const double y = (rng.uniform() - 0.5) * h;
    const Vec3 radial(std::cos(phi), 0, std::sin(phi));
    return {Vec3(r * radial.x(), y, r * radial.z()), radial};
  }
  if (pick < side + cap) return sample_disk(r, h / 2, 1.0, rng);
  return sample_disk(r, -h / 2, -1.0, rng);
}

Sample sample_cone(double r, double h, Rng& rng) {
  const double slant = std::hypot(r, h);
  const double lateral = std::numbers::pi * r * slant;
  const double base = std::numbers::pi * r * r;
  if (rng.uniform() * (lateral + base) < lateral) {
    const double t = std::sqrt(rng.uniform());  // fraction of the slant from the apex
    const double phi = kTwoPi * rng.uniform();
    const Vec3 p(t * r * std::cos(phi), h / 2 - t * h, t * r * std::sin(phi));
    const Vec3 n = Vec3(h * std::cos(phi), r, h * std::sin(phi)).normalized();
    return {p, n};
  }
  return sample_disk(r, -h / 2, -1.0, rng);
}

Sample sample_torus(double major, double tube, Rng& rng) {
  double theta;
  do {
    theta = kTwoPi * rng.uniform();
  } while (rng.uniform() * (major + tube) > major + tube * std::cos(theta));
  const double phi = kTwoPi * rng.uniform();
  const double ring = major + tube * std::cos(theta);
  const Vec3 p(ring * std::cos(phi), tube * std::sin(theta), ring * std::sin(phi));
  const Vec3 n(std::cos(theta) * std::cos(phi), std::sin(theta), std::cos(theta) * std::sin(phi));
  return {p, n};
}

}  // namespace

PointCloud generate_synthetic_object(const SyntheticShapeSpec& spec, int n_points, Rng& rng) {
  validate(spec);
  if (n_points < 1) throw std::invalid_argument("n_points must be >= 1");
  PointCloud pc;
  pc.points.resize(3, n_points);
  pc.normals = Eigen::Matrix3Xd(3, n_points);
  for (int k = 0; k < n_points; ++k) {
    Sample s;
    switch (spec.shape) {
      case ShapeClass::sphere: s = sample_sphere(spec.a, rng); break;
      case ShapeClass::box: s = sample_box(spec.a, spec.b, spec.c, rng); break;
      case ShapeClass::cylinder: s = sample_cylinder(spec.a, spec.b, rng); break;
      case ShapeClass::cone: s = sample_cone(spec.a, spec.b, rng); break;
      case ShapeClass::torus: s = sample_torus(spec.a, spec.b, rng); break;
    }
    if (spec.jitter_sigma > 0.0)
      s.p += spec.jitter_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
    pc.points.col(k) = s.p;
    pc.normals->col(k) = s.n;
  }
  return pc;
}

}  // namespace picpoint
