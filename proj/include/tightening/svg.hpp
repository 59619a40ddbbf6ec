/*
 Copyright 2026 The tightening Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "tightening/errors.hpp"
#include "tightening/geometry.hpp"
#include "tightening/signals.hpp"

namespace tightening {

/// Static overlay of xbar (grey) and x_eps (blue), one panel per state
/// component. For scalar states the region outside A_eps is shaded.
inline std::string overlay_svg(const Trajectory& xbar, const Trajectory& x, const ConstraintField& field, double eps) {
  const int n = static_cast<int>(x.dim());
  const double W = 800, H = 260, pad = 40;
  const double t0 = x.grid().t0(), t1 = x.grid().t1();
  std::ostringstream s;
  s.precision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H * n << "\">\n";
  for (int c = 0; c < n; ++c) {
    double lo = 1e300, hi = -1e300;
    for (const auto* tr : {&xbar, &x}) {
      for (const auto& v : tr->states()) {
        lo = std::min(lo, v[c]);
        hi = std::max(hi, v[c]);
      }
    }
    const double span = std::max(hi - lo, 1e-9);
    lo -= 0.15 * span;
    hi += 0.15 * span;
    const double oy = H * c;
    auto px = [&](double t) { return pad + (W - 2 * pad) * (t - t0) / (t1 - t0); };
    auto py = [&](double v) { return oy + H - pad - (H - 2 * pad) * (v - lo) / (hi - lo); };
    s << "<rect x=\"" << pad << "\" y=\"" << oy + pad << "\" width=\"" << W - 2 * pad << "\" height=\""
      << H - 2 * pad << "\" fill=\"none\" stroke=\"black\"/>\n";
    if (n == 1) {
      const int cols = 200, rows = 120;
      const double dt = (t1 - t0) / cols, dv = (hi - lo) / rows;
      for (int i = 0; i < cols; ++i) {
        for (int k = 0; k < rows; ++k) {
          const double t = t0 + (i + 0.5) * dt, v = lo + (k + 0.5) * dv;
          if (field.feasible(eps, t, Vec::Constant(1, v))) continue;
          s << "<rect x=\"" << px(t0 + i * dt) << "\" y=\"" << py(v + 0.5 * dv) << "\" width=\""
            << px(t0 + (i + 1) * dt) - px(t0 + i * dt) << "\" height=\"" << py(v - 0.5 * dv) - py(v + 0.5 * dv)
            << "\" fill=\"#f4c7c3\" stroke=\"none\"/>\n";
        }
      }
    }
    for (const auto& [tr, colour] : {std::pair{&xbar, "#888888"}, std::pair{&x, "#1f5fbf"}}) {
      s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < tr->size(); ++i) s << px(tr->time(i)) << ',' << py(tr->state(i)[c]) << ' ';
      s << "\"/>\n";
    }
    s << "<text x=\"" << pad << "\" y=\"" << oy + pad - 8 << "\" font-family=\"sans-serif\" font-size=\"12\">x"
      << c + 1 << ": reference (grey), repaired (blue), outside A_eps shaded, eps=" << eps << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_overlay_svg(const std::string& path, const Trajectory& xbar, const Trajectory& x,
                              const ConstraintField& field, double eps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::validation, "cannot write " + path);
  out << overlay_svg(xbar, x, field, eps);
}

}  // namespace tightening
