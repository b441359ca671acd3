#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ajepa/error.hpp"
#include "ajepa/rng.hpp"
#include "ajepa/spectro.hpp"
#include "ajepa/wav.hpp"

namespace ajepa {

namespace fs = std::filesystem;

/// One decoded clip with its unstandardized log-mel frames.
struct Clip {
  std::string name;            // path relative to the dataset root
  std::vector<int> labels;     // class ids; empty when unlabeled
  Mat<double> frames;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Clip> clips;
  bool multi_label = false;

  int n_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t size() const { return clips.size(); }
};

inline constexpr char kLabelManifest[] = "labels.csv";

namespace detail {

inline std::vector<fs::path> sorted_wavs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline Clip load_clip(const fs::path& root, const fs::path& file, const FrontendConfig& cfg) {
  Clip c;
  c.name = fs::relative(file, root).generic_string();
  c.frames = log_mel_frames(read_wav_file(file), cfg);
  return c;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  return parts;
}

}  // namespace detail

/// Loads a dataset directory:
///   root/labels.csv present -> multi-label manifest, rows "file,classA;classB"
///   root/<class>/*.wav      -> single-label, classes in sorted name order
///   root/*.wav              -> unlabeled
inline Dataset load_dataset(const fs::path& root, const FrontendConfig& cfg) {
  if (!fs::is_directory(root)) throw IoError("dataset directory '" + root.string() + "' not found");
  Dataset ds;
  const fs::path manifest = root / kLabelManifest;
  if (fs::exists(manifest)) {
    ds.multi_label = true;
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot read '" + manifest.string() + "'");
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::pair<std::string, std::vector<std::string>>> rows;
    std::set<std::string> names;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw IoError(manifest.string() + ": malformed row '" + line + "'");
      auto labels = detail::split(line.substr(comma + 1), ';');
      names.insert(labels.begin(), labels.end());
      rows.emplace_back(line.substr(0, comma), std::move(labels));
    }
    ds.class_names.assign(names.begin(), names.end());
    for (const auto& [file, labels] : rows) {
      Clip c = detail::load_clip(root, root / file, cfg);
      for (const auto& l : labels) {
        c.labels.push_back(static_cast<int>(
            std::lower_bound(ds.class_names.begin(), ds.class_names.end(), l) -
            ds.class_names.begin()));
      }
      std::sort(c.labels.begin(), c.labels.end());
      ds.clips.push_back(std::move(c));
    }
  } else {
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory()) class_dirs.push_back(e.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const auto& file : detail::sorted_wavs(root)) {
      ds.clips.push_back(detail::load_clip(root, file, cfg));
    }
    for (const auto& dir : class_dirs) {
      const auto wavs = detail::sorted_wavs(dir);
      if (wavs.empty()) continue;
      const int id = static_cast<int>(ds.class_names.size());
      ds.class_names.push_back(dir.filename().string());
      for (const auto& file : wavs) {
        Clip c = detail::load_clip(root, file, cfg);
        c.labels = {id};
        ds.clips.push_back(std::move(c));
      }
    }
  }
  if (ds.clips.empty()) throw IoError("dataset '" + root.string() + "' contains no .wav files");
  return ds;
}

/// Every labeled clip whose index i satisfies i % folds == fold goes to the
/// held-out side. Clips are taken per class so each class is represented.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, int folds, int fold) {
  if (folds < 2 || fold < 0 || fold >= folds) throw ConfigError("invalid split");
  Dataset train;
  Dataset held;
  train.class_names = held.class_names = ds.class_names;
  train.multi_label = held.multi_label = ds.multi_label;
  std::map<std::vector<int>, int> seen;
  for (const auto& c : ds.clips) {
    const int i = seen[c.labels]++;
    (i % folds == fold ? held : train).clips.push_back(c);
  }
  return {std::move(train), std::move(held)};
}

/// Tone-mixture recipe for one synthetic class.
struct ToneRecipe {
  std::vector<double> tones_hz;
  double am_rate_hz = 0.0;
};

struct SyntheticSpec {
  int n_classes = 4;
  int clips_per_class = 50;
  double duration_s = 2.0;
  bool noise = true;
  double noise_db = -30.0;  // white noise RMS relative to full scale
  std::uint64_t seed = 0;
  bool multi_label = false;

  /// Class k: tones {f_k, 1.25 f_k} with f_k = 200 * 1.4^k, AM at 2 + 1.5k Hz.
  std::vector<ToneRecipe> recipes() const {
    std::vector<ToneRecipe> out;
    for (int k = 0; k < n_classes; ++k) {
      const double base = 200.0 * std::pow(1.4, k);
      out.push_back({{base, 1.25 * base}, 2.0 + 1.5 * k});
    }
    return out;
  }

  void validate() const {
    if (n_classes < 1 || clips_per_class < 1) throw ConfigError("synthetic counts must be positive");
    if (!(duration_s > 0)) throw ConfigError("duration must be positive");
    if (multi_label && n_classes < 2) throw ConfigError("multi-label data needs two classes");
    for (const auto& r : recipes()) {
      for (double f : r.tones_hz) {
        if (f >= 8000.0) throw ConfigError("too many synthetic classes: tone at or above 8 kHz");
      }
    }
  }
};

inline std::string synthetic_class_name(int k) {
  std::ostringstream out;
  out << "class" << k;
  return out.str();
}

/// Sum of the given recipes' tones under their AM envelopes, scaled so the
/// peak is 0.9 * level, plus optional white noise.
inline Waveform synth_clip(const std::vector<const ToneRecipe*>& recipes, const SyntheticSpec& spec,
                           Rng& rng) {
  const auto n = static_cast<std::size_t>(std::lround(spec.duration_s * kSampleRateHz));
  std::vector<double> x(n, 0.0);
  for (const ToneRecipe* r : recipes) {
    const double detune = rng.uniform(0.97, 1.03);
    const double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double depth = rng.uniform(0.5, 0.9);
    std::vector<double> phases;
    for (std::size_t t = 0; t < r->tones_hz.size(); ++t) {
      phases.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double time = static_cast<double>(i) / kSampleRateHz;
      const double env =
          1.0 - depth * 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * r->am_rate_hz * time + am_phase));
      double s = 0.0;
      for (std::size_t t = 0; t < r->tones_hz.size(); ++t) {
        s += std::sin(2.0 * std::numbers::pi * r->tones_hz[t] * detune * time + phases[t]);
      }
      x[i] += env * s;
    }
  }
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const double level = rng.uniform(0.3, 1.0);
  if (peak > 0) {
    for (double& v : x) v *= 0.9 * level / peak;
  }
  if (spec.noise) {
    const double sigma = std::pow(10.0, spec.noise_db / 20.0);
    for (double& v : x) v = std::clamp(v + sigma * rng.normal(), -1.0, 1.0);
  }
  Waveform w;
  w.samples = std::move(x);
  return w;
}

/// Writes root/<class>/<class>_NNN.wav, or with multi_label, root/clips/*.wav
/// plus a labels.csv manifest (each clip mixes one or two classes).
inline std::size_t gen_synthetic(const fs::path& root, const SyntheticSpec& spec) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + root.string() + "': " + ec.message());
  const auto recipes = spec.recipes();
  std::size_t written = 0;
  if (!spec.multi_label) {
    for (int k = 0; k < spec.n_classes; ++k) {
      const std::string cls = synthetic_class_name(k);
      fs::create_directories(root / cls, ec);
      if (ec) throw IoError("cannot create '" + (root / cls).string() + "': " + ec.message());
      for (int i = 0; i < spec.clips_per_class; ++i) {
        Rng rng = Rng::stream(spec.seed, "synthetic", static_cast<std::uint64_t>(k),
                              static_cast<std::uint64_t>(i));
        char file[64];
        std::snprintf(file, sizeof(file), "%s_%03d.wav", cls.c_str(), i);
        write_wav_file(root / cls / file, synth_clip({&recipes[static_cast<std::size_t>(k)]}, spec, rng));
        ++written;
      }
    }
    return written;
  }
  fs::create_directories(root / "clips", ec);
  if (ec) throw IoError("cannot create '" + (root / "clips").string() + "': " + ec.message());
  std::ofstream manifest(root / kLabelManifest, std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in '" + root.string() + "'");
  manifest << "file,labels\n";
  const int total = spec.n_classes * spec.clips_per_class;
  for (int i = 0; i < total; ++i) {
    Rng rng = Rng::stream(spec.seed, "synthetic-multi", static_cast<std::uint64_t>(i));
    std::set<int> classes{i % spec.n_classes};
    if (rng.uniform() < 0.5) {
      classes.insert(static_cast<int>(rng.uniform_int(0, spec.n_classes - 1)));
    }
    std::vector<const ToneRecipe*> mix;
    std::string labels;
    for (int k : classes) {
      mix.push_back(&recipes[static_cast<std::size_t>(k)]);
      if (!labels.empty()) labels += ';';
      labels += synthetic_class_name(k);
    }
    char file[64];
    std::snprintf(file, sizeof(file), "clips/clip_%04d.wav", i);
    write_wav_file(root / file, synth_clip(mix, spec, rng));
    manifest << file << ',' << labels << '\n';
    ++written;
  }
  if (!manifest) throw IoError("write failed for manifest in '" + root.string() + "'");
  return written;
}

}  // namespace ajepa
