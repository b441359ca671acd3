#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ajepa/error.hpp"
#include "ajepa/maskgen.hpp"
#include "ajepa/tensor.hpp"

namespace ajepa {

/// Append-only CSV with a fixed header. Values are plain numbers, so no
/// field ever needs quoting.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header, bool append = false)
      : path_(path), columns_(header.size()) {
    const bool existed = append && std::filesystem::exists(path);
    out_.open(path, existed ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary);
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
    if (!existed) {
      std::string line;
      for (std::size_t i = 0; i < header.size(); ++i) line += (i ? "," : "") + header[i];
      out_ << line << "\n";
    }
  }

  void row(const std::vector<double>& values) {
    if (values.size() != columns_) throw ShapeError("CSV row width differs from header");
    std::ostringstream os;
    os.precision(9);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) os << ',';
      os << values[i];
    }
    out_ << os.str() << "\n";
    out_.flush();
    if (!out_) throw IoError("write failed on '" + path_.string() + "'");
  }

 private:
  std::filesystem::path path_;
  std::size_t columns_;
  std::ofstream out_;
};

inline const std::vector<std::string> kPretrainCsvHeader = {"step", "loss", "f_s", "mode_tf_fraction", "lr"};
inline const std::vector<std::string> kFinetuneCsvHeader = {"epoch", "train_loss", "eval_accuracy", "eval_map"};

/// Binary PGM (P5, maxval 255), rows top to bottom.
inline std::vector<std::uint8_t> encode_pgm(const std::vector<std::uint8_t>& pixels, int height, int width) {
  if (height <= 0 || width <= 0 || pixels.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("PGM pixel count does not match dimensions");
  }
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

/// Min-max scaled to 0..255; a constant image maps to 0. Frequency runs
/// upward so low bins sit at the bottom, time runs left to right.
inline std::vector<std::uint8_t> spectrogram_pgm(const Mat<double>& frames) {
  const auto t = static_cast<int>(frames.rows());
  const auto f = static_cast<int>(frames.cols());
  const double lo = frames.minCoeff();
  const double span = frames.maxCoeff() - lo;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(t) * f);
  for (int y = 0; y < f; ++y) {
    for (int x = 0; x < t; ++x) {
      const double v = span > 0 ? (frames(x, f - 1 - y) - lo) / span : 0.0;
      px[static_cast<std::size_t>(y) * t + x] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  }
  return encode_pgm(px, f, t);
}

/// Grid raster scaled by `cell` pixels per token: context mid-gray, targets
/// white, everything else black. Rows are time, columns frequency.
inline std::vector<std::uint8_t> mask_plan_pgm(const MaskPlan& plan, int cell = 8) {
  const GridShape grid = plan.context.grid;
  const Raster labels = plan_labels(plan);
  const int h = grid.rows * cell;
  const int w = grid.cols * cell;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto l = labels[static_cast<std::size_t>((y / cell) * grid.cols + x / cell)];
      px[static_cast<std::size_t>(y) * w + x] = l == 2 ? 255 : l == 1 ? 128 : 0;
    }
  }
  return encode_pgm(px, h, w);
}

}  // namespace ajepa
