#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <vector>

namespace nmrc {

/// Radii as fractions of the half-width of the image.
struct PhantomGeometry {
  double disk_radius = 0.4;
  double separator = 0.03;  // width of the black circle around the disk
  double ring_outer = 0.85;

  void validate() const;
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
};

/// Level in [0, 1] to 8-bit gray (0 black, 1 white); out-of-range levels clip.
std::uint8_t gray_level(double level);

/// Inner disk at disk_level, ring at ring_level, black elsewhere.
GrayImage render_phantom(double disk_level, double ring_level, const PhantomGeometry& geometry,
                         int resolution);

/// Phantom of a contrast solution: disk |q1(T)|, ring |q2(T)|.
GrayImage render_solution_phantom(const std::vector<double>& final_state,
                                  const PhantomGeometry& geometry, int resolution);

/// Reference frame, both regions at level 1.
GrayImage render_reference(const PhantomGeometry& geometry, int resolution);

/// Binary 8-bit PGM (P5).
void write_pgm(const GrayImage& image, std::ostream& out);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);

}  // namespace nmrc
