#pragma once

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "ajepa/error.hpp"
#include "ajepa/rng.hpp"
#include "ajepa/tensor.hpp"
#include "ajepa/wav.hpp"

namespace ajepa {

struct PatchShape {
  int height = 16;  // frames
  int width = 16;   // mel bins
};

struct FrontendConfig {
  int n_mels = 128;
  double win_ms = 25.0;
  double hop_ms = 10.0;
  int fft_size = 512;
  int target_frames = 128;
  PatchShape patch;
  double jitter_db = 6.0;
  double log_floor = 1e-10;
  double low_freq_hz = 20.0;
  double high_freq_hz = 8000.0;

  int win_samples() const {
    return static_cast<int>(std::lround(win_ms * kSampleRateHz / 1000.0));
  }
  int hop_samples() const {
    return static_cast<int>(std::lround(hop_ms * kSampleRateHz / 1000.0));
  }
  int grid_rows() const { return target_frames / patch.height; }
  int grid_cols() const { return n_mels / patch.width; }
  int patch_len() const { return patch.height * patch.width; }

  void validate() const {
    if (n_mels <= 0 || target_frames <= 0 || patch.height <= 0 || patch.width <= 0) {
      throw ConfigError("frontend sizes must be positive");
    }
    if (win_ms <= 0 || hop_ms <= 0) throw ConfigError("window and hop must be positive");
    if (target_frames % patch.height != 0) {
      throw ConfigError("target_frames must be divisible by patch height");
    }
    if (n_mels % patch.width != 0) {
      throw ConfigError("n_mels must be divisible by patch width");
    }
    if (fft_size < win_samples()) throw ConfigError("fft_size shorter than window");
    if ((fft_size & (fft_size - 1)) != 0) throw ConfigError("fft_size must be a power of two");
    if (!(log_floor > 0)) throw ConfigError("log_floor must be positive");
    if (!(jitter_db >= 0)) throw ConfigError("jitter_db must be non-negative");
    if (!(low_freq_hz >= 0 && low_freq_hz < high_freq_hz &&
          high_freq_hz <= kSampleRateHz / 2.0)) {
      throw ConfigError("mel band edges must satisfy 0 <= low < high <= 8000");
    }
  }
};

/// Time x frequency log-energies, one row per frame.
struct MelSpectrogram {
  Mat<double> values;
  double frame_hop_ms = 10.0;

  int frames() const { return static_cast<int>(values.rows()); }
  int bins() const { return static_cast<int>(values.cols()); }
};

struct GridShape {
  int rows = 0;
  int cols = 0;

  int size() const { return rows * cols; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// Non-overlapping patches in raster order: token r*cols + c holds frames
/// [r*ph, (r+1)*ph) x bins [c*pw, (c+1)*pw), flattened row-major.
struct PatchGrid {
  Mat<double> tokens;
  GridShape grid;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Center frequency (Hz) of each triangular filter.
inline std::vector<double> mel_centers_hz(const FrontendConfig& cfg) {
  const double lo = hz_to_mel(cfg.low_freq_hz);
  const double hi = hz_to_mel(cfg.high_freq_hz);
  const double step = (hi - lo) / (cfg.n_mels + 1);
  std::vector<double> centers(static_cast<std::size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m) centers[m] = mel_to_hz(lo + step * (m + 1));
  return centers;
}

/// Triangular filters [n_mels x (fft_size/2 + 1)], equally spaced on the mel
/// scale, evaluated in mel at each FFT bin frequency.
inline Mat<double> mel_filterbank(const FrontendConfig& cfg) {
  const int n_bins = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.low_freq_hz);
  const double hi = hz_to_mel(cfg.high_freq_hz);
  const double step = (hi - lo) / (cfg.n_mels + 1);
  Mat<double> fb = Mat<double>::Zero(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = lo + step * m;
    const double center = left + step;
    const double right = center + step;
    for (int k = 0; k < n_bins; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * kSampleRateHz / cfg.fft_size);
      if (mel > left && mel < right) {
        fb(m, k) = mel <= center ? (mel - left) / step : (right - mel) / step;
      }
    }
    // Low filters can be narrower than one FFT bin; such a filter takes the
    // bin nearest its center instead of staying silent.
    if (fb.row(m).sum() == 0.0) {
      const double center_hz = mel_to_hz(center);
      const auto k = static_cast<int>(std::lround(center_hz * cfg.fft_size / kSampleRateHz));
      fb(m, std::clamp(k, 0, n_bins - 1)) = 1.0;
    }
  }
  return fb;
}

/// Symmetric Hann window of the given length.
inline std::vector<double> hann_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  if (length == 1) {
    w[0] = 1.0;
    return w;
  }
  for (int t = 0; t < length; ++t) {
    w[t] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * t / (length - 1));
  }
  return w;
}

/// Power spectrum |X_k|^2, k = 0..fft_size/2, of one zero-padded frame.
inline std::vector<double> power_spectrum(std::span<const double> frame, int fft_size) {
  std::vector<double> padded(static_cast<std::size_t>(fft_size), 0.0);
  std::copy_n(frame.begin(), std::min<std::size_t>(frame.size(), padded.size()),
              padded.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, padded);
  std::vector<double> power(static_cast<std::size_t>(fft_size / 2 + 1));
  for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(spectrum[k]);
  return power;
}

/// Unstandardized natural-log mel energies for every full frame of `w`.
/// Inputs shorter than one window are zero-padded to a single frame.
inline Mat<double> log_mel_frames(const Waveform& w, const FrontendConfig& cfg) {
  cfg.validate();
  if (w.samples.empty()) throw EmptyInputError("empty waveform");
  if (w.sample_rate_hz != kSampleRateHz) {
    throw ConfigError("waveform must be at 16 kHz");
  }
  const int win = cfg.win_samples();
  const int hop = cfg.hop_samples();
  const auto n = static_cast<int>(w.samples.size());
  const int n_frames = n < win ? 1 : 1 + (n - win) / hop;
  const Mat<double> fb = mel_filterbank(cfg);
  const auto window = hann_window(win);

  Mat<double> out(n_frames, cfg.n_mels);
  std::vector<double> frame(static_cast<std::size_t>(win));
  ColVec<double> power_col(cfg.fft_size / 2 + 1);
  for (int f = 0; f < n_frames; ++f) {
    for (int t = 0; t < win; ++t) {
      const int idx = f * hop + t;
      frame[t] = idx < n ? w.samples[idx] * window[t] : 0.0;
    }
    const auto power = power_spectrum(frame, cfg.fft_size);
    for (std::size_t k = 0; k < power.size(); ++k) {
      power_col(static_cast<Eigen::Index>(k)) = power[k];
    }
    const ColVec<double> energy = fb * power_col;
    for (int m = 0; m < cfg.n_mels; ++m) {
      out(f, m) = std::log(std::max(energy(m), cfg.log_floor));
    }
  }
  return out;
}

/// Crops to, or pads up to, `target_frames` rows. Padding rows hold
/// `pad_value`, which for log-mel frames is the log of the energy floor, so
/// padding reads as silence.
inline Mat<double> fit_frames(const Mat<double>& frames, int target_frames, double pad_value) {
  Mat<double> out = Mat<double>::Constant(target_frames, frames.cols(), pad_value);
  const auto keep = std::min<Eigen::Index>(frames.rows(), target_frames);
  out.topRows(keep) = frames.topRows(keep);
  return out;
}

/// Zero mean, unit (population) variance over all entries. Constant inputs
/// are only centered.
inline Mat<double> standardize(const Mat<double>& values) {
  // Rounding in the mean would otherwise turn a constant input into +-1.
  if (values.size() == 0 || values.maxCoeff() == values.minCoeff()) {
    return Mat<double>::Zero(values.rows(), values.cols());
  }
  const double mean = values.mean();
  Mat<double> out = values.array() - mean;
  const double var = out.squaredNorm() / static_cast<double>(out.size());
  if (var > 0) out /= std::sqrt(var);
  return out;
}

inline MelSpectrogram log_mel(const Waveform& w, const FrontendConfig& cfg) {
  MelSpectrogram m;
  m.values = standardize(fit_frames(log_mel_frames(w, cfg), cfg.target_frames, std::log(cfg.log_floor)));
  m.frame_hop_ms = cfg.hop_ms;
  return m;
}

struct CropJitter {
  int start = 0;
  double gain_db = 0.0;
};

inline CropJitter draw_crop_jitter(int n_frames, const FrontendConfig& cfg, Rng& rng) {
  CropJitter cj;
  cj.start = static_cast<int>(rng.uniform_int(0, std::max(n_frames, 1) - 1));
  cj.gain_db = rng.uniform(-cfg.jitter_db, cfg.jitter_db);
  return cj;
}

/// Cyclic window of `target_frames` rows starting at `cj.start`, with the dB
/// gain added as ln(10^(g/20)) to every log-energy. Not standardized.
inline Mat<double> cyclic_crop_jitter_raw(const Mat<double>& frames, int target_frames,
                                          const CropJitter& cj) {
  if (frames.rows() == 0) throw EmptyInputError("no frames to crop");
  const auto len = frames.rows();
  const double offset = std::log(std::pow(10.0, cj.gain_db / 20.0));
  Mat<double> out(target_frames, frames.cols());
  for (Eigen::Index i = 0; i < target_frames; ++i) {
    out.row(i) = frames.row((cj.start + i) % len).array() + offset;
  }
  return out;
}

/// Pretraining augmentation: random cyclic crop plus random scalar gain, then
/// per-spectrogram standardization.
inline MelSpectrogram cyclic_crop_jitter(const Mat<double>& frames,
                                         const FrontendConfig& cfg, Rng& rng) {
  const CropJitter cj = draw_crop_jitter(static_cast<int>(frames.rows()), cfg, rng);
  MelSpectrogram m;
  m.values = standardize(cyclic_crop_jitter_raw(frames, cfg.target_frames, cj));
  m.frame_hop_ms = cfg.hop_ms;
  return m;
}

inline PatchGrid patchify(const MelSpectrogram& m, const PatchShape& patch) {
  if (patch.height <= 0 || patch.width <= 0 || m.frames() % patch.height != 0 ||
      m.bins() % patch.width != 0) {
    throw ShapeError("spectrogram " + shape_string(m.frames(), m.bins()) +
                     " not divisible by patch " +
                     shape_string(patch.height, patch.width));
  }
  PatchGrid g;
  g.grid = {m.frames() / patch.height, m.bins() / patch.width};
  g.tokens.resize(g.grid.size(), patch.height * patch.width);
  for (int r = 0; r < g.grid.rows; ++r) {
    for (int c = 0; c < g.grid.cols; ++c) {
      const int token = r * g.grid.cols + c;
      for (int i = 0; i < patch.height; ++i) {
        for (int j = 0; j < patch.width; ++j) {
          g.tokens(token, i * patch.width + j) =
              m.values(r * patch.height + i, c * patch.width + j);
        }
      }
    }
  }
  return g;
}

inline MelSpectrogram unpatchify(const PatchGrid& g, const PatchShape& patch,
                                 double frame_hop_ms = 10.0) {
  if (g.tokens.rows() != g.grid.size() ||
      g.tokens.cols() != patch.height * patch.width) {
    throw ShapeError("patch grid does not match patch shape");
  }
  MelSpectrogram m;
  m.frame_hop_ms = frame_hop_ms;
  m.values.resize(g.grid.rows * patch.height, g.grid.cols * patch.width);
  for (int r = 0; r < g.grid.rows; ++r) {
    for (int c = 0; c < g.grid.cols; ++c) {
      const int token = r * g.grid.cols + c;
      for (int i = 0; i < patch.height; ++i) {
        for (int j = 0; j < patch.width; ++j) {
          m.values(r * patch.height + i, c * patch.width + j) =
              g.tokens(token, i * patch.width + j);
        }
      }
    }
  }
  return m;
}

/// Factorized 2-D sin-cos table [rows*cols x dim]. Channels [0, dim/2) encode
/// the time (row) index and [dim/2, dim) the frequency (column) index; within
/// each half, channel 2k is sin(p * w_k) and 2k+1 is cos(p * w_k) with
/// w_k = 10000^(-2k/(dim/2)).
inline Mat<double> sincos_positions(GridShape grid, int dim) {
  if (dim <= 0 || dim % 4 != 0) {
    throw ConfigError("positional width must be a positive multiple of 4");
  }
  const int half = dim / 2;
  const int pairs = half / 2;
  Mat<double> table(grid.size(), dim);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const int token = r * grid.cols + c;
      for (int k = 0; k < pairs; ++k) {
        const double omega = std::pow(10000.0, -2.0 * k / half);
        table(token, 2 * k) = std::sin(r * omega);
        table(token, 2 * k + 1) = std::cos(r * omega);
        table(token, half + 2 * k) = std::sin(c * omega);
        table(token, half + 2 * k + 1) = std::cos(c * omega);
      }
    }
  }
  return table;
}

}  // namespace ajepa
