#include "nmrc/phantom.hpp"

#include "nmrc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace nmrc {

void PhantomGeometry::validate() const {
  if (!(disk_radius > 0.0 && separator >= 0.0 && disk_radius + separator < ring_outer &&
        ring_outer <= 1.0)) {
    throw DomainError("phantom radii must satisfy 0 < disk < disk + separator < ring <= 1");
  }
}

std::uint8_t gray_level(double level) {
  if (!std::isfinite(level)) return 0;
  const double c = std::clamp(level, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * c));
}

GrayImage render_phantom(double disk_level, double ring_level, const PhantomGeometry& geometry,
                         int resolution) {
  geometry.validate();
  if (resolution < 8) throw DomainError("phantom resolution must be at least 8 pixels");
  GrayImage img;
  img.width = img.height = resolution;
  img.pixels.assign(static_cast<std::size_t>(resolution) * resolution, 0);
  const std::uint8_t disk = gray_level(disk_level);
  const std::uint8_t ring = gray_level(ring_level);
  const double half = 0.5 * resolution;
  for (int j = 0; j < resolution; ++j) {
    for (int i = 0; i < resolution; ++i) {
      // pixel centre in units of the half-width
      const double x = (i + 0.5 - half) / half;
      const double y = (j + 0.5 - half) / half;
      const double r = std::hypot(x, y);
      std::uint8_t v = 0;
      if (r <= geometry.disk_radius) {
        v = disk;
      } else if (r > geometry.disk_radius + geometry.separator && r <= geometry.ring_outer) {
        v = ring;
      }
      img.pixels[static_cast<std::size_t>(j) * resolution + i] = v;
    }
  }
  return img;
}

GrayImage render_solution_phantom(const std::vector<double>& final_state,
                                  const PhantomGeometry& geometry, int resolution) {
  if (final_state.size() < 4) throw DomainError("final state needs (y1, z1, y2, z2)");
  return render_phantom(std::hypot(final_state[0], final_state[1]),
                        std::hypot(final_state[2], final_state[3]), geometry, resolution);
}

GrayImage render_reference(const PhantomGeometry& geometry, int resolution) {
  return render_phantom(1.0, 1.0, geometry, resolution);
}

void write_pgm(const GrayImage& image, std::ostream& out) {
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot open " + path.string());
  write_pgm(image, out);
}

}  // namespace nmrc
