#include "flowcast/svg_plot.hpp"

#include <algorithm>
#include <fstream>

#include "flowcast/common.hpp"
#include "flowcast/csv.hpp"

namespace flowcast {

namespace {

constexpr double kWidth = 960, kHeight = 420, kPad = 48;

std::string polyline(const std::vector<double>& xs,
                     const std::vector<double>& ys) {
  std::string pts;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    pts += format_double(xs[i]) + "," + format_double(ys[i]);
    if (i + 1 < xs.size()) pts += " ";
  }
  return pts;
}

}  // namespace

void write_forecast_svg(const std::string& path,
                        const std::vector<double>& truth,
                        const std::vector<double>& forecast,
                        const std::vector<double>& lower,
                        const std::vector<double>& upper,
                        const std::string& title) {
  const std::size_t n = truth.size();
  if (n < 2 || forecast.size() != n || lower.size() != n || upper.size() != n)
    throw ValidationError("svg plot: series must share a length >= 2");

  double lo = lower[0], hi = upper[0];
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min({lo, lower[i], truth[i]});
    hi = std::max({hi, upper[i], truth[i]});
  }
  if (hi - lo < 1e-9) hi = lo + 1.0;

  const auto x_of = [&](std::size_t i) {
    return kPad + (kWidth - 2 * kPad) * static_cast<double>(i) /
                      static_cast<double>(n - 1);
  };
  const auto y_of = [&](double v) {
    return kHeight - kPad - (kHeight - 2 * kPad) * (v - lo) / (hi - lo);
  };

  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = x_of(i);
  std::vector<double> yt(n), yf(n);
  for (std::size_t i = 0; i < n; ++i) {
    yt[i] = y_of(truth[i]);
    yf[i] = y_of(forecast[i]);
  }

  // Band polygon: upper left-to-right, then lower right-to-left.
  std::string band;
  for (std::size_t i = 0; i < n; ++i)
    band += format_double(xs[i]) + "," + format_double(y_of(upper[i])) + " ";
  for (std::size_t i = n; i-- > 0;)
    band += format_double(xs[i]) + "," + format_double(y_of(lower[i])) + " ";

  std::ofstream out(path);
  if (!out) throw ValidationError(path + ": cannot open for writing");
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth
      << "' height='" << kHeight << "' viewBox='0 0 " << kWidth << " "
      << kHeight << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n"
      << "<text x='" << kPad << "' y='24' font-family='sans-serif' "
         "font-size='14'>" << title << "</text>\n"
      << "<polygon points='" << band
      << "' fill='#9ecae1' fill-opacity='0.45' stroke='none'/>\n"
      << "<polyline points='" << polyline(xs, yt)
      << "' fill='none' stroke='#333333' stroke-width='1.5'/>\n"
      << "<polyline points='" << polyline(xs, yf)
      << "' fill='none' stroke='#d62728' stroke-width='1.5' "
         "stroke-dasharray='5,3'/>\n"
      << "<text x='" << kWidth - 230 << "' y='24' font-family='sans-serif' "
         "font-size='12' fill='#333333'>truth</text>\n"
      << "<text x='" << kWidth - 180 << "' y='24' font-family='sans-serif' "
         "font-size='12' fill='#d62728'>forecast / band</text>\n"
      << "</svg>\n";
}

}  // namespace flowcast
