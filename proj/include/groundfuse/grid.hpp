#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "groundfuse/errors.hpp"

namespace groundfuse {

/// Axis-aligned pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Maps pixel space onto a rows x cols lattice of patches. Cell bounds are
/// real valued; the last row/column ends exactly on the image edge.
class PatchGrid {
 public:
  PatchGrid() = default;
  PatchGrid(std::size_t rows, std::size_t cols, int image_w, int image_h);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  int image_w() const noexcept { return image_w_; }
  int image_h() const noexcept { return image_h_; }
  std::size_t size() const noexcept { return rows_ * cols_; }

  std::size_t index(std::size_t r, std::size_t c) const noexcept { return r * cols_ + c; }
  Cell cell(std::size_t index) const noexcept { return {index / cols_, index % cols_}; }

  double col_edge(std::size_t c) const noexcept;
  double row_edge(std::size_t r) const noexcept;
  PixelRect cell_rect(std::size_t r, std::size_t c) const noexcept;

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;

 private:
  std::size_t rows_ = 1;
  std::size_t cols_ = 1;
  int image_w_ = 1;
  int image_h_ = 1;
};

/// Non-negative scores over the cells of a grid, row-major.
class Heatmap {
 public:
  Heatmap() = default;
  explicit Heatmap(const PatchGrid& grid);
  Heatmap(const PatchGrid& grid, std::vector<double> values);

  const PatchGrid& grid() const noexcept { return grid_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double at(std::size_t r, std::size_t c) const noexcept { return values_[grid_.index(r, c)]; }

 private:
  PatchGrid grid_;
  std::vector<double> values_;
};

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct PixelPoint {
  double x = 0, y = 0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

struct ScoredBox {
  BBox box;
  double score = 0;
};

/// Cosine similarity; 0 when either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

/// (v - min) / (max - min) per cell. A flat map normalizes to all zeros.
Heatmap minmax_normalize(const Heatmap& h);

/// Nearest-rank quantile: the ascending-sorted element at ceil(q*n)-1,
/// clamped to [0, n-1].
double quantile(std::span<const double> values, double q);

/// Sum of scores of the boxes overlapping each cell with positive area.
/// Parallel over cells; per-cell accumulation follows input order.
Heatmap project_boxes(std::span<const ScoredBox> scored, const PatchGrid& grid);

/// Maximum cell, lowest row-major index on ties.
Cell argmax_cell(const Heatmap& h);

PixelPoint cell_center_px(const PatchGrid& grid, Cell cell);

/// Intersects the box with [0, image_w] x [0, image_h]. The result may have
/// zero width or height.
BBox clamp_to_image(const BBox& box, const PatchGrid& grid);

/// Boundary-inclusive point-in-box test.
bool contains(const BBox& box, const PixelPoint& p) noexcept;

void require_same_grid(const Heatmap& a, const Heatmap& b, const char* what);

}  // namespace groundfuse
