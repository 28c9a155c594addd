#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "glimpse/errors.hpp"
#include "glimpse/tensor.hpp"

namespace glimpse {

// Grayscale frame with intensities in [0,1]. Sharpness scoring happens on
// the [0,255] scale so conventional Laplacian-variance thresholds
// (30/50/100/300) apply unchanged.
struct GrayFrame {
  int width = 0;
  int height = 0;
  std::vector<double> px;  // row-major, height*width entries

  double at(int r, int c) const {
    return px[static_cast<std::size_t>(r) * width + c];
  }
  double& at(int r, int c) {
    return px[static_cast<std::size_t>(r) * width + c];
  }

  void validate() const {
    if (width < 3 || height < 3)
      throw dim_error("frame " + shape_str(height, width) +
                      " too small for a Laplacian interior");
    if (px.size() != static_cast<std::size_t>(width) * height)
      throw dim_error("frame pixel count does not match dimensions");
  }
};

// Variance of the 4-neighbour Laplacian response over the valid interior
// (no padding), computed on intensities scaled to [0,255].
inline double laplacian_variance(const GrayFrame& f) {
  f.validate();
  const int h = f.height, w = f.width;
  const int n = (h - 2) * (w - 2);
  double sum = 0.0, sum2 = 0.0;
  for (int r = 1; r + 1 < h; ++r) {
    for (int c = 1; c + 1 < w; ++c) {
      const double resp = 255.0 * (f.at(r - 1, c) + f.at(r + 1, c) +
                                   f.at(r, c - 1) + f.at(r, c + 1) -
                                   4.0 * f.at(r, c));
      sum += resp;
      sum2 += resp * resp;
    }
  }
  const double mean = sum / n;
  return sum2 / n - mean * mean;
}

// The last W frames before the current moment, oldest first, optionally
// with one embedding row per frame for the distance-based policies.
struct FrameWindow {
  std::vector<GrayFrame> frames;
  std::optional<Tensor> embeddings;  // W×D when present

  int size() const { return static_cast<int>(frames.size()); }
  int newest_index() const { return size() - 1; }
};

struct BlurSelection {
  int index = 0;
  bool too_blurry = false;  // nothing in the window cleared the threshold
};

// Scan from the most recent frame backwards and return the first frame
// whose Laplacian variance exceeds the threshold; fall back to the most
// recent frame when none does.
inline BlurSelection select_blur(const FrameWindow& window, double threshold) {
  if (window.frames.empty()) throw contract_error("select_blur: empty window");
  for (int i = window.newest_index(); i >= 0; --i) {
    if (laplacian_variance(window.frames[i]) > threshold) return {i, false};
  }
  return {window.newest_index(), true};
}

enum class CentroidMetric { l2, cosine };

// Frame whose embedding is closest to the window centroid; ties go to the
// most recent frame.
inline int select_centroid(const FrameWindow& window, CentroidMetric metric) {
  if (!window.embeddings)
    throw contract_error("select_centroid: window has no embeddings");
  const Tensor& emb = *window.embeddings;
  if (emb.rows() != window.size())
    throw dim_error("select_centroid: " + std::to_string(emb.rows()) +
                    " embeddings for " + std::to_string(window.size()) +
                    " frames");
  const int w = emb.rows(), d = emb.cols();
  std::vector<double> centroid(d, 0.0);
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < d; ++j) centroid[j] += emb.at(i, j) / w;

  double cnorm = 0.0;
  for (double c : centroid) cnorm += c * c;
  cnorm = std::sqrt(cnorm);

  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < w; ++i) {
    double dist;
    if (metric == CentroidMetric::l2) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = emb.at(i, j) - centroid[j];
        s += diff * diff;
      }
      dist = std::sqrt(s);
    } else {
      double dot = 0.0, norm = 0.0;
      for (int j = 0; j < d; ++j) {
        dot += emb.at(i, j) * centroid[j];
        norm += emb.at(i, j) * emb.at(i, j);
      }
      norm = std::sqrt(norm);
      if (norm == 0.0)
        throw contract_error("select_centroid: zero embedding row with cosine metric");
      dist = cnorm == 0.0 ? 0.0 : 1.0 - dot / (norm * cnorm);
    }
    if (dist <= best_dist) {  // <= prefers the more recent frame on ties
      best_dist = dist;
      best = i;
    }
  }
  return best;
}

// Aggregate sharpness statistics and selection behaviour over many windows.
// Variance statistics describe the newest frame of each window.
struct BlurReport {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
  double percent_updated = 0.0;     // selection moved off the newest frame
  double percent_too_blurry = 0.0;  // fallback fired
  long windows = 0;
};

inline BlurReport blur_stats(const std::vector<FrameWindow>& windows,
                             double threshold) {
  if (windows.empty()) throw contract_error("blur_stats: empty stream");
  BlurReport rep;
  rep.windows = static_cast<long>(windows.size());
  double sum = 0.0, sum2 = 0.0;
  rep.min = std::numeric_limits<double>::infinity();
  rep.max = -std::numeric_limits<double>::infinity();
  long updated = 0, blurry = 0;
  for (const FrameWindow& w : windows) {
    const double v = laplacian_variance(w.frames[w.newest_index()]);
    sum += v;
    sum2 += v * v;
    rep.min = std::min(rep.min, v);
    rep.max = std::max(rep.max, v);
    const BlurSelection sel = select_blur(w, threshold);
    if (sel.too_blurry) ++blurry;
    if (sel.index != w.newest_index()) ++updated;
  }
  const double n = static_cast<double>(rep.windows);
  rep.mean = sum / n;
  rep.stddev = std::sqrt(std::max(0.0, sum2 / n - rep.mean * rep.mean));
  rep.percent_updated = 100.0 * updated / n;
  rep.percent_too_blurry = 100.0 * blurry / n;
  return rep;
}

// ---------------------------------------------------------------------------
// 8-bit binary PGM (P5) import/export. Intensities map to k/255.
// ---------------------------------------------------------------------------

inline void save_pgm(const GrayFrame& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write frame '" + path + "'");
  out << "P5\n" << f.width << " " << f.height << "\n255\n";
  for (double v : f.px) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(
        static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  if (!out) throw data_error("short write on frame '" + path + "'");
}

inline GrayFrame load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open frame '" + path + "'");
  auto next_token = [&in, &path]() {
    std::string tok;
    while (true) {
      int c = in.get();
      if (c == EOF) throw data_error("truncated PGM header in '" + path + "'");
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
  };
  if (next_token() != "P5")
    throw data_error("'" + path + "' is not a binary PGM");
  GrayFrame f;
  f.width = std::stoi(next_token());
  f.height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255)
    throw data_error("'" + path + "' uses unsupported max value " +
                     std::to_string(maxval));
  const std::size_t n = static_cast<std::size_t>(f.width) * f.height;
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw data_error("truncated pixel data in '" + path + "'");
  f.px.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.px[i] = raw[i] / 255.0;
  return f;
}

// Window manifest: one PGM path per line, oldest first; blank lines
// separate windows and '#' starts a comment.
inline std::vector<std::vector<std::string>> read_window_manifest(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open manifest '" + path + "'");
  std::vector<std::vector<std::string>> groups(1);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back())))
      line.pop_back();
    std::size_t b = 0;
    while (b < line.size() && std::isspace(static_cast<unsigned char>(line[b])))
      ++b;
    line = line.substr(b);
    if (line.empty()) {
      if (!groups.back().empty()) groups.emplace_back();
      continue;
    }
    groups.back().push_back(line);
  }
  if (groups.back().empty()) groups.pop_back();
  if (groups.empty()) throw data_error("manifest '" + path + "' lists no frames");
  return groups;
}

}  // namespace glimpse
