#pragma once

#include <array>
#include <string>
#include <string_view>

#include "picpoint/geometry.hpp"

namespace picpoint {

enum class ShapeClass { sphere, box, cylinder, cone, torus };

inline constexpr std::array<ShapeClass, 5> kShapeClasses{ShapeClass::sphere, ShapeClass::box, ShapeClass::cylinder,
                                                         ShapeClass::cone, ShapeClass::torus};

std::string_view shape_class_name(ShapeClass c);
ShapeClass shape_class_from_name(std::string_view name);

/// Parameters of one analytic shape.
///   sphere:   a = radius                      in [0.5, 1.5]
///   box:      a, b, c = edge lengths          in [0.4, 2.0]
///   cylinder: a = radius, b = height          in [0.2, 1.0], [0.4, 2.0]
///   cone:     a = base radius, b = height     in [0.2, 1.0], [0.4, 2.0]
///   torus:    a = major radius, b = tube      in [0.6, 1.2], [0.1, 0.5], b < a
struct SyntheticShapeSpec {
  ShapeClass shape = ShapeClass::sphere;
  double a = 1.0;
  double b = 1.0;
  double c = 1.0;
  double jitter_sigma = 0.0;
};

/// Throws std::invalid_argument when a parameter leaves its documented range.
void validate(const SyntheticShapeSpec& spec);

/// Draws a spec of the given class with parameters uniform in the documented
/// ranges (torus tube additionally capped at 0.6 * major radius).
SyntheticShapeSpec random_shape_spec(ShapeClass shape, double jitter_sigma, Rng& rng);

/// Uniform area sampling of the analytic surface, plus isotropic Gaussian
/// jitter on the coordinates. Normals come from the un-jittered surface.
/// The shape is centered at the origin, cylinder/cone axes along +y.
PointCloud generate_synthetic_object(const SyntheticShapeSpec& spec, int n_points, Rng& rng);

}  // namespace picpoint
