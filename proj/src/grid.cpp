#include "groundfuse/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace groundfuse {

PatchGrid::PatchGrid(std::size_t rows, std::size_t cols, int image_w, int image_h)
    : rows_(rows), cols_(cols), image_w_(image_w), image_h_(image_h) {
  if (rows < 1 || cols < 1) throw InvalidInput("grid needs at least one row and one column");
  if (image_w < 0 || image_h < 0 || static_cast<std::size_t>(image_w) < cols ||
      static_cast<std::size_t>(image_h) < rows) {
    throw InvalidInput("image " + std::to_string(image_w) + "x" + std::to_string(image_h) +
                       " is smaller than grid " + std::to_string(cols) + "x" +
                       std::to_string(rows));
  }
}

// Integer product first so the last edge lands exactly on the image border.
double PatchGrid::col_edge(std::size_t c) const noexcept {
  return static_cast<double>(c * static_cast<std::size_t>(image_w_)) / static_cast<double>(cols_);
}

double PatchGrid::row_edge(std::size_t r) const noexcept {
  return static_cast<double>(r * static_cast<std::size_t>(image_h_)) / static_cast<double>(rows_);
}

PixelRect PatchGrid::cell_rect(std::size_t r, std::size_t c) const noexcept {
  return {col_edge(c), row_edge(r), col_edge(c + 1), row_edge(r + 1)};
}

Heatmap::Heatmap(const PatchGrid& grid) : grid_(grid), values_(grid.size(), 0.0) {}

Heatmap::Heatmap(const PatchGrid& grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size()) {
    throw InvalidInput("heatmap has " + std::to_string(values_.size()) + " values, grid has " +
                       std::to_string(grid_.size()) + " cells");
  }
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw InvalidInput("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()) + ")");
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

Heatmap minmax_normalize(const Heatmap& h) {
  Heatmap out(h.grid());
  if (h.size() == 0) return out;
  auto [lo, hi] = std::minmax_element(h.values().begin(), h.values().end());
  const double mn = *lo, mx = *hi;
  if (mx == mn) return out;
  const double range = mx - mn;
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = (h[i] - mn) / range;
  return out;
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw InvalidInput("quantile of an empty list");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidInput("quantile fraction outside [0,1]");
  std::vector<double> sorted(values.begin(), values.end());
  const auto n = static_cast<double>(sorted.size());
  // q*n is evaluated in binary floating point; 0.7*10 must still mean rank 7.
  const double rank = std::ceil(q * n - 1e-9);
  const auto idx = static_cast<std::size_t>(std::clamp(rank - 1.0, 0.0, n - 1.0));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(idx), sorted.end());
  return sorted[idx];
}

namespace {

struct CellSpan {
  std::size_t c0, c1, r0, r1;  // inclusive ranges; empty when c0 > c1
};

// Cells whose rectangle meets the box with positive area.
CellSpan overlapped_cells(const BBox& raw, const PatchGrid& grid) {
  const BBox b = clamp_to_image(raw, grid);
  CellSpan s{1, 0, 1, 0};
  if (b.w <= 0 || b.h <= 0) return s;
  const double bx1 = b.x + b.w, by1 = b.y + b.h;
  auto first = [](double lo, std::size_t n, auto edge) {
    std::size_t i = 0;
    while (i < n && edge(i + 1) <= lo) ++i;
    return i;
  };
  auto last = [](double hi, std::size_t n, auto edge) {
    std::size_t i = n;
    while (i > 0 && edge(i - 1) >= hi) --i;
    return i - 1;  // i >= 1 because edge(0) = 0 < hi
  };
  auto ce = [&](std::size_t c) { return grid.col_edge(c); };
  auto re = [&](std::size_t r) { return grid.row_edge(r); };
  s.c0 = first(b.x, grid.cols(), ce);
  s.c1 = last(bx1, grid.cols(), ce);
  s.r0 = first(b.y, grid.rows(), re);
  s.r1 = last(by1, grid.rows(), re);
  return s;
}

}  // namespace

Heatmap project_boxes(std::span<const ScoredBox> scored, const PatchGrid& grid) {
  for (const auto& sb : scored) {
    if (!(sb.score >= 0.0) || !std::isfinite(sb.score)) {
      throw InvalidInput("project_boxes: scores must be finite and non-negative");
    }
  }
  std::vector<CellSpan> spans(scored.size());
  for (std::size_t k = 0; k < scored.size(); ++k) spans[k] = overlapped_cells(scored[k].box, grid);

  Heatmap out(grid);
  const auto n = static_cast<std::ptrdiff_t>(grid.size());
  const std::size_t cols = grid.cols();
#pragma omp parallel for schedule(static) if (n * static_cast<std::ptrdiff_t>(scored.size()) > 4096)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::size_t r = static_cast<std::size_t>(i) / cols, c = static_cast<std::size_t>(i) % cols;
    double acc = 0.0;
    for (std::size_t k = 0; k < spans.size(); ++k) {
      const auto& s = spans[k];
      if (c >= s.c0 && c <= s.c1 && r >= s.r0 && r <= s.r1) acc += scored[k].score;
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

Cell argmax_cell(const Heatmap& h) {
  if (h.size() == 0) throw InvalidInput("argmax of an empty heatmap");
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.size(); ++i) {
    if (h[i] > h[best]) best = i;
  }
  return h.grid().cell(best);
}

PixelPoint cell_center_px(const PatchGrid& grid, Cell cell) {
  if (cell.row >= grid.rows() || cell.col >= grid.cols()) {
    throw InvalidInput("cell (" + std::to_string(cell.row) + "," + std::to_string(cell.col) +
                       ") outside grid");
  }
  return {(static_cast<double>(cell.col) + 0.5) * grid.image_w() / static_cast<double>(grid.cols()),
          (static_cast<double>(cell.row) + 0.5) * grid.image_h() / static_cast<double>(grid.rows())};
}

BBox clamp_to_image(const BBox& box, const PatchGrid& grid) {
  const double x0 = std::clamp(box.x, 0.0, static_cast<double>(grid.image_w()));
  const double y0 = std::clamp(box.y, 0.0, static_cast<double>(grid.image_h()));
  const double x1 = std::clamp(box.x + box.w, 0.0, static_cast<double>(grid.image_w()));
  const double y1 = std::clamp(box.y + box.h, 0.0, static_cast<double>(grid.image_h()));
  return {x0, y0, std::max(0.0, x1 - x0), std::max(0.0, y1 - y0)};
}

bool contains(const BBox& box, const PixelPoint& p) noexcept {
  return p.x >= box.x && p.x <= box.x + box.w && p.y >= box.y && p.y <= box.y + box.h;
}

void require_same_grid(const Heatmap& a, const Heatmap& b, const char* what) {
  if (!(a.grid() == b.grid())) throw InvalidInput(std::string(what) + ": heatmaps on different grids");
}

}  // namespace groundfuse
