#pragma once

// Tiny deterministic SVG writer for reports and tree renderings. All
// coordinates are formatted with fixed precision so identical inputs yield
// identical bytes.

#include <cstdio>
#include <string>
#include <vector>

namespace arbor::svg {

class Document {
 public:
  Document(double width, double height) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.1f\" "
                  "height=\"%.1f\" viewBox=\"0 0 %.1f %.1f\">\n",
                  width, height, width, height);
    body_ = buf;
    body_ += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2,
            const std::string& stroke, double width = 1.0) {
    char buf[220];
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\" "
                  "stroke=\"%s\" stroke-width=\"%.3f\"/>\n",
                  x1, y1, x2, y2, stroke.c_str(), width);
    body_ += buf;
  }

  void rect(double x, double y, double w, double h, const std::string& fill) {
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" "
                  "height=\"%.3f\" fill=\"%s\"/>\n",
                  x, y, w, h, fill.c_str());
    body_ += buf;
  }

  void circle(double cx, double cy, double r, const std::string& fill) {
    char buf[180];
    std::snprintf(buf, sizeof(buf),
                  "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"%.3f\" fill=\"%s\"/>\n",
                  cx, cy, r, fill.c_str());
    body_ += buf;
  }

  void text(double x, double y, const std::string& s, double size = 11.0,
            const std::string& fill = "black",
            const std::string& anchor = "start") {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.3f\" y=\"%.3f\" font-size=\"%.1f\" "
                  "font-family=\"sans-serif\" fill=\"%s\" "
                  "text-anchor=\"%s\">",
                  x, y, size, fill.c_str(), anchor.c_str());
    body_ += buf;
    for (char c : s) {
      switch (c) {
        case '<': body_ += "&lt;"; break;
        case '>': body_ += "&gt;"; break;
        case '&': body_ += "&amp;"; break;
        default: body_ += c;
      }
    }
    body_ += "</text>\n";
  }

  /// Line with a small triangular head at the far end.
  void arrow(double x1, double y1, double x2, double y2,
             const std::string& stroke, double width = 1.5) {
    line(x1, y1, x2, y2, stroke, width);
    const double dx = x2 - x1, dy = y2 - y1;
    const double n = std::sqrt(dx * dx + dy * dy);
    if (n < 1e-9) return;
    const double ux = dx / n, uy = dy / n;
    const double s = 4.0 * width;
    char buf[260];
    std::snprintf(buf, sizeof(buf),
                  "<polygon points=\"%.3f,%.3f %.3f,%.3f %.3f,%.3f\" "
                  "fill=\"%s\"/>\n",
                  x2, y2, x2 - s * ux + 0.5 * s * uy,
                  y2 - s * uy - 0.5 * s * ux, x2 - s * ux - 0.5 * s * uy,
                  y2 - s * uy + 0.5 * s * ux, stroke.c_str());
    body_ += buf;
  }

  std::string str() const { return body_ + "</svg>\n"; }

 private:
  std::string body_;
};

}  // namespace arbor::svg
