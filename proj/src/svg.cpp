// Copyright 2026 The stlseeker Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stlseeker/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace stlseeker::svg {
namespace {

constexpr double kSize = 480.0;
constexpr double kPad = 40.0;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(5);
  s << v;
  return s.str();
}

// Maps data coordinates onto the plot square, y pointing up.
struct Frame {
  double x0, x1, y0, y1;
  double w, h;
  double px(double x) const { return kPad + (x - x0) / (x1 - x0) * w; }
  double py(double y) const { return kPad + h - (y - y0) / (y1 - y0) * h; }
};

Frame fit(double x0, double x1, double y0, double y1, double w, double h) {
  if (!(x1 > x0)) {
    x0 -= 1.0;
    x1 += 1.0;
  }
  if (!(y1 > y0)) {
    y0 -= 1.0;
    y1 += 1.0;
  }
  const double mx = 0.05 * (x1 - x0), my = 0.05 * (y1 - y0);
  return {x0 - mx, x1 + mx, y0 - my, y1 + my, w, h};
}

const char* fill_for(world::Polarity p) {
  switch (p) {
    case world::Polarity::kTarget: return "#9ecae1";
    case world::Polarity::kObstacle: return "#fc9272";
    case world::Polarity::kSafeInterior: return "none";
  }
  return "none";
}

void header(std::ostringstream& s, double width, double height, const std::string& title) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << num(width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
    << "</text>\n";
}

void axes(std::ostringstream& s, const Frame& f) {
  s << "<rect x=\"" << num(kPad) << "\" y=\"" << num(kPad) << "\" width=\"" << num(f.w) << "\" height=\"" << num(f.h)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<text x=\"" << num(f.px(x)) << "\" y=\"" << num(kPad + f.h + 14) << "\" text-anchor=\"middle\">" << num(x)
      << "</text>\n";
    s << "<text x=\"" << num(kPad - 4) << "\" y=\"" << num(f.py(y) + 4) << "\" text-anchor=\"end\">" << num(y)
      << "</text>\n";
  }
}

}  // namespace

std::string trajectories(const world::PlantConfig& plant, const std::vector<world::Trajectory>& trajs,
                         const std::string& title, const std::vector<bool>& highlight) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto grow = [&](double x, double y) {
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  };
  for (const auto& r : plant.regions) {
    if (r.shape == world::RegionShape::kBox) {
      grow(r.lo.x(), r.lo.y());
      grow(r.hi.x(), r.hi.y());
    } else {
      grow(r.center.x() - r.radius, r.center.y() - r.radius);
      grow(r.center.x() + r.radius, r.center.y() + r.radius);
    }
  }
  grow(plant.initial_box.lo[0], plant.initial_box.lo[1]);
  grow(plant.initial_box.hi[0], plant.initial_box.hi[1]);
  for (const auto& t : trajs) {
    for (const Vec& x : t.states) grow(x[0], x[1]);
  }
  // Equal scales on both axes.
  const double span = std::max(x1 - x0, y1 - y0);
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  const Frame f = fit(cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2, kSize, kSize);

  std::ostringstream s;
  header(s, kSize + 2 * kPad, kSize + 2 * kPad, title);
  axes(s, f);
  const double scale = f.w / (f.x1 - f.x0);
  s << "<rect x=\"" << num(f.px(plant.initial_box.lo[0])) << "\" y=\"" << num(f.py(plant.initial_box.hi[1]))
    << "\" width=\"" << num((plant.initial_box.hi[0] - plant.initial_box.lo[0]) * scale) << "\" height=\""
    << num((plant.initial_box.hi[1] - plant.initial_box.lo[1]) * scale)
    << "\" fill=\"none\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  for (const auto& r : plant.regions) {
    const std::string stroke = r.polarity == world::Polarity::kSafeInterior ? "#31a354" : "black";
    if (r.shape == world::RegionShape::kBox) {
      s << "<rect x=\"" << num(f.px(r.lo.x())) << "\" y=\"" << num(f.py(r.hi.y())) << "\" width=\""
        << num((r.hi.x() - r.lo.x()) * scale) << "\" height=\"" << num((r.hi.y() - r.lo.y()) * scale) << "\" fill=\""
        << fill_for(r.polarity) << "\" fill-opacity=\"0.6\" stroke=\"" << stroke << "\"/>\n";
      s << "<text x=\"" << num(f.px(0.5 * (r.lo.x() + r.hi.x()))) << "\" y=\"" << num(f.py(0.5 * (r.lo.y() + r.hi.y())))
        << "\" text-anchor=\"middle\">" << escape(r.name) << "</text>\n";
    } else {
      s << "<circle cx=\"" << num(f.px(r.center.x())) << "\" cy=\"" << num(f.py(r.center.y())) << "\" r=\""
        << num(r.radius * scale) << "\" fill=\"" << fill_for(r.polarity) << "\" fill-opacity=\"0.6\" stroke=\""
        << stroke << "\"/>\n";
      const double label_y = r.polarity == world::Polarity::kSafeInterior ? r.center.y() + 0.9 * r.radius : r.center.y();
      s << "<text x=\"" << num(f.px(r.center.x())) << "\" y=\"" << num(f.py(label_y)) << "\" text-anchor=\"middle\">"
        << escape(r.name) << "</text>\n";
    }
  }
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const bool red = i < highlight.size() && highlight[i];
    s << "<polyline fill=\"none\" stroke=\"" << (red ? "#de2d26" : "#3182bd") << "\" stroke-width=\"1.2\" points=\"";
    for (const Vec& x : trajs[i].states) s << num(f.px(x[0])) << ',' << num(f.py(x[1])) << ' ';
    s << "\"/>\n";
    const Vec& start = trajs[i].states.front();
    s << "<circle cx=\"" << num(f.px(start[0])) << "\" cy=\"" << num(f.py(start[1])) << "\" r=\"2.5\" fill=\"black\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string robustness_curve(const std::vector<orchestrator::TraceRow>& trace, const std::string& title) {
  double y0 = std::numeric_limits<double>::infinity(), y1 = -y0;
  for (const auto& r : trace) {
    y0 = std::min(y0, r.avg_smooth_rho);
    y1 = std::max(y1, r.avg_smooth_rho);
  }
  if (trace.empty()) y0 = y1 = 0.0;
  const double last = trace.empty() ? 1.0 : static_cast<double>(trace.back().step);
  const double width = 2 * kSize;
  const Frame f = fit(0.0, last, std::min(y0, 0.0), std::max(y1, 0.0), width, kSize * 0.6);

  std::ostringstream s;
  header(s, width + 2 * kPad, f.h + 2 * kPad + 10, title);
  axes(s, f);
  s << "<line x1=\"" << num(f.px(f.x0)) << "\" x2=\"" << num(f.px(f.x1)) << "\" y1=\"" << num(f.py(0.0)) << "\" y2=\""
    << num(f.py(0.0)) << "\" stroke=\"gray\"/>\n";
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i].cycle != trace[i - 1].cycle) {
      const double x = f.px(trace[i].step);
      s << "<line x1=\"" << num(x) << "\" x2=\"" << num(x) << "\" y1=\"" << num(kPad) << "\" y2=\"" << num(kPad + f.h)
        << "\" stroke=\"black\" stroke-dasharray=\"5 4\"/>\n";
    }
  }
  s << "<polyline fill=\"none\" stroke=\"#3182bd\" stroke-width=\"1\" points=\"";
  for (const auto& r : trace) s << num(f.px(r.step)) << ',' << num(f.py(r.avg_smooth_rho)) << ' ';
  s << "\"/>\n</svg>\n";
  return s.str();
}

}  // namespace stlseeker::svg
