#include "partloc/inference/overlay.hpp"

#include <algorithm>
#include <cmath>

namespace partloc::inference {

Color part_color(std::size_t part, std::size_t count) {
  const double h = 6.0 * static_cast<double>(part % std::max<std::size_t>(count, 1)) /
                   static_cast<double>(std::max<std::size_t>(count, 1));
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const auto up = static_cast<std::uint8_t>(std::lround(255 * f));
  const auto down = static_cast<std::uint8_t>(255 - up);
  switch (sector) {
    case 0: return {255, up, 0};
    case 1: return {down, 255, 0};
    case 2: return {0, 255, up};
    case 3: return {0, down, 255};
    case 4: return {up, 0, 255};
    default: return {255, 0, down};
  }
}

std::vector<std::pair<std::size_t, std::size_t>> resolve_skeleton(
    const std::vector<std::string>& parts, const std::vector<std::pair<std::string, std::string>>& edges) {
  auto index = [&](const std::string& name) {
    const auto it = std::find(parts.begin(), parts.end(), name);
    if (it == parts.end()) throw InferenceError("skeleton edge names unknown body part '" + name + "'");
    return static_cast<std::size_t>(it - parts.begin());
  };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& [a, b] : edges) out.push_back({index(a), index(b)});
  return out;
}

namespace {

void put(dataset::Image& img, std::ptrdiff_t x, std::ptrdiff_t y, const Color& c) {
  if (x < 0 || y < 0 || x >= static_cast<std::ptrdiff_t>(img.width) || y >= static_cast<std::ptrdiff_t>(img.height)) {
    return;
  }
  std::copy(c.begin(), c.end(), img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)));
}

void line(dataset::Image& img, std::ptrdiff_t x0, std::ptrdiff_t y0, std::ptrdiff_t x1, std::ptrdiff_t y1,
          const Color& c) {
  const std::ptrdiff_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const std::ptrdiff_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  std::ptrdiff_t err = dx + dy;
  for (;;) {
    put(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const std::ptrdiff_t e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

// Pixels whose centers lie within the radius; rings keep the outer band.
void dot(dataset::Image& img, double x, double y, double r, bool filled, const Color& c) {
  const auto cx = static_cast<std::ptrdiff_t>(std::floor(x));
  const auto cy = static_cast<std::ptrdiff_t>(std::floor(y));
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(r)) + 1;
  for (auto py = cy - reach; py <= cy + reach; ++py) {
    for (auto px = cx - reach; px <= cx + reach; ++px) {
      const double d = std::hypot(px + 0.5 - x, py + 0.5 - y);
      if (d > r) continue;
      if (!filled && d < r - 1.25) continue;
      put(img, px, py, c);
    }
  }
  if (filled) put(img, cx, cy, c);
}

}  // namespace

dataset::Image render_points(const dataset::Image& image, const std::vector<OverlayPoint>& points,
                             std::size_t part_count, const std::vector<std::pair<std::size_t, std::size_t>>& skeleton,
                             const OverlayStyle& style) {
  dataset::Image out = image;
  for (const auto& [a, b] : skeleton) {
    for (const auto& pa : points) {
      if (pa.part != a) continue;
      for (const auto& pb : points) {
        if (pb.part != b || pb.instance != pa.instance) continue;
        line(out, static_cast<std::ptrdiff_t>(std::floor(pa.x)), static_cast<std::ptrdiff_t>(std::floor(pa.y)),
             static_cast<std::ptrdiff_t>(std::floor(pb.x)), static_cast<std::ptrdiff_t>(std::floor(pb.y)),
             style.edge_color);
      }
    }
  }
  for (const auto& p : points) {
    dot(out, p.x, p.y, style.dot_radius, p.confidence >= style.confidence_threshold, part_color(p.part, part_count));
  }
  return out;
}

std::vector<OverlayPoint> points_from_row(const Trajectory& t, std::size_t row) {
  std::vector<OverlayPoint> out;
  for (std::size_t p = 0; p < t.parts.size(); ++p) {
    for (std::size_t k = 0; k < t.instances; ++k) {
      const auto& d = t.at(row, p, k);
      if (d) out.push_back({p, k, d->x, d->y, d->confidence});
    }
  }
  return out;
}

std::vector<OverlayPoint> points_from_labels(const scoremap::PartLabels& labels) {
  std::vector<OverlayPoint> out;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p]) out.push_back({p, 0, labels[p]->x, labels[p]->y, 1.0});
  }
  return out;
}

dataset::Image montage(const std::vector<dataset::Image>& images, std::size_t columns) {
  if (images.empty()) return {};
  if (columns == 0) columns = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(images.size()))));
  const std::size_t rows = (images.size() + columns - 1) / columns;
  std::size_t cw = 0, ch = 0;
  for (const auto& i : images) {
    cw = std::max(cw, i.width);
    ch = std::max(ch, i.height);
  }
  dataset::Image out(cw * columns, ch * rows);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = images[n];
    const std::size_t ox = (n % columns) * cw, oy = (n / columns) * ch;
    for (std::size_t y = 0; y < img.height; ++y) {
      std::copy(img.at(0, y), img.at(0, y) + 3 * img.width, out.at(ox, oy + y));
    }
  }
  return out;
}

}  // namespace partloc::inference
