#ifndef LLAB_DATA_HPP
#define LLAB_DATA_HPP

// Synthetic classification tasks, CSV ingestion, load-side perturbations
// (label randomization, subsampling, additive uniform noise) and the probe
// sets on which output similarity is measured.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "llab/autodiff.hpp"
#include "llab/error.hpp"
#include "llab/numcore.hpp"

namespace llab {

struct Dataset {
  Matrix X;
  std::vector<int> y;
  std::size_t num_classes = 2;
  std::string name;
  std::optional<std::vector<int>> clean_y;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t dim() const noexcept { return X.cols(); }

  void validate() const {
    if (y.empty()) throw ParameterError("dataset '" + name + "' is empty");
    if (X.rows() != y.size()) throw DimensionError("dataset: rows != labels");
    for (int c : y)
      if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
        throw ParameterError("dataset: label out of range");
    if (clean_y && clean_y->size() != y.size())
      throw DimensionError("dataset: clean labels length mismatch");
  }

  Batch batch(const std::vector<std::size_t>& rows) const {
    Batch b{Matrix(rows.size(), dim()), std::vector<int>(rows.size())};
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto src = X.row(rows[k]);
      std::copy(src.begin(), src.end(), b.X.row(k).begin());
      b.y[k] = y[rows[k]];
    }
    return b;
  }

  Batch full_batch() const { return Batch{X, y}; }
};

struct ProbeSource {
  enum class Kind { mixup, pixel_noise, raw };
  Kind kind = Kind::raw;
  double param = 0.0;  // alpha for mixup, u for pixel noise

  std::string describe() const {
    std::ostringstream os;
    switch (kind) {
      case Kind::mixup: os << "mixup(" << param << ")"; break;
      case Kind::pixel_noise: os << "pixel_noise(" << param << ")"; break;
      case Kind::raw: os << "raw"; break;
    }
    return os.str();
  }
};

struct ProbeSet {
  Matrix X;
  ProbeSource source;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // mixup only
  std::vector<double> lambdas;                             // mixup only

  std::size_t size() const noexcept { return X.rows(); }
};

inline constexpr std::size_t kDefaultProbeCount = 640;
inline constexpr double kDefaultMixupAlpha = 16.0;
inline constexpr double kSpiralTurns = 1.5;

namespace detail {

inline std::vector<double> blob_center(std::size_t c, std::size_t num_classes, std::size_t d) {
  std::vector<double> center(d, 0.0);
  if (num_classes <= 2 * d) {
    // Vertices of the cross-polytope: +e0, -e0, +e1, -e1, ...
    center[c / 2] = (c % 2 == 0) ? 1.0 : -1.0;
  } else {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(c) /
                     static_cast<double>(num_classes);
    center[0] = std::cos(a);
    center[1] = std::sin(a);
  }
  return center;
}

}  // namespace detail

/// Angle of spiral arm `cls` at radius r.
inline double spiral_angle(double r, std::size_t cls, std::size_t num_classes) {
  return 2.0 * std::numbers::pi * kSpiralTurns * r +
         2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(num_classes);
}

/// Gaussian blobs around fixed unit-norm centers; labels cycle 0..C-1.
inline Dataset gen_blobs(std::size_t n, std::size_t num_classes, std::size_t d, double spread,
                         std::uint64_t seed) {
  if (num_classes < 2) throw ParameterError("gen_blobs: num_classes must be >= 2");
  if (n < num_classes) throw ParameterError("gen_blobs: n must be >= num_classes");
  if (d < 2) throw ParameterError("gen_blobs: d must be >= 2");
  if (!(spread >= 0.0)) throw ParameterError("gen_blobs: spread must be >= 0");
  Rng rng(seed);
  Dataset ds{Matrix(n, d), std::vector<int>(n), num_classes, "blobs", std::nullopt};
  std::vector<std::vector<double>> centers;
  for (std::size_t c = 0; c < num_classes; ++c)
    centers.push_back(detail::blob_center(c, num_classes, d));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % num_classes;
    ds.y[i] = static_cast<int>(c);
    for (std::size_t k = 0; k < d; ++k) ds.X(i, k) = centers[c][k] + spread * rng.normal();
  }
  return ds;
}

/// Interleaved Archimedean spirals in the plane, one arm per class.
inline Dataset gen_spirals(std::size_t n, std::size_t num_classes, double noise,
                           std::uint64_t seed) {
  if (num_classes < 2) throw ParameterError("gen_spirals: num_classes must be >= 2");
  if (n < num_classes) throw ParameterError("gen_spirals: n must be >= num_classes");
  if (!(noise >= 0.0)) throw ParameterError("gen_spirals: noise must be >= 0");
  Rng rng(seed);
  Dataset ds{Matrix(n, 2), std::vector<int>(n), num_classes, "spirals", std::nullopt};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % num_classes;
    const std::size_t j = i / num_classes;
    const std::size_t per_class = (n - c + num_classes - 1) / num_classes;
    const double t = static_cast<double>(j + 1) / static_cast<double>(per_class);
    const double a = spiral_angle(t, c, num_classes);
    const double r = t + noise * rng.normal();
    ds.y[i] = static_cast<int>(c);
    ds.X(i, 0) = r * std::cos(a);
    ds.X(i, 1) = r * std::sin(a);
  }
  return ds;
}

/// Canonical CSV text: "# d=<d> classes=<C>" then features (%.17g) and label.
inline std::string to_csv_string(const Dataset& ds) {
  std::string out = "# d=" + std::to_string(ds.dim()) +
                    " classes=" + std::to_string(ds.num_classes) + "\n";
  char buf[40];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t k = 0; k < ds.dim(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.X(i, k));
      out += buf;
      out += ',';
    }
    out += std::to_string(ds.y[i]);
    out += '\n';
  }
  return out;
}

inline void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << to_csv_string(ds);
  if (!f) throw IoError("write failed: " + path.string());
}

inline Dataset parse_csv(std::istream& in, const std::string& name) {
  auto fail = [&](std::size_t line, const std::string& why) {
    return FormatError(name + ":" + std::to_string(line) + ": " + why);
  };
  std::string line;
  std::size_t line_no = 0;
  std::size_t d = 0;
  std::size_t classes = 0;
  if (!std::getline(in, line)) throw fail(1, "missing header");
  ++line_no;
  {
    unsigned long long dd = 0;
    unsigned long long cc = 0;
    int consumed = 0;
    if (std::sscanf(line.c_str(), "# d=%llu classes=%llu%n", &dd, &cc, &consumed) != 2 ||
        static_cast<std::size_t>(consumed) != line.size())
      throw fail(1, "expected header '# d=<d> classes=<C>'");
    d = dd;
    classes = cc;
    if (d < 1 || classes < 2) throw fail(1, "header declares degenerate dimensions");
  }
  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() != d + 1)
      throw fail(line_no, "expected " + std::to_string(d + 1) + " fields, got " +
                              std::to_string(fields.size()));
    for (std::size_t k = 0; k < d; ++k) {
      const char* s = fields[k].c_str();
      char* end = nullptr;
      const double v = std::strtod(s, &end);
      if (fields[k].empty() || *end != '\0' || !std::isfinite(v))
        throw fail(line_no, "bad number '" + fields[k] + "'");
      values.push_back(v);
    }
    const std::string& ls = fields[d];
    char* end = nullptr;
    const long lab = std::strtol(ls.c_str(), &end, 10);
    if (ls.empty() || *end != '\0') throw fail(line_no, "bad label '" + ls + "'");
    if (lab < 0 || static_cast<std::size_t>(lab) >= classes)
      throw fail(line_no, "label " + ls + " out of range [0, " + std::to_string(classes) + ")");
    labels.push_back(static_cast<int>(lab));
  }
  if (labels.empty()) throw fail(line_no, "no data rows");
  const std::size_t n = labels.size();
  return Dataset{Matrix(n, d, std::move(values)), std::move(labels), classes, name, std::nullopt};
}

inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return parse_csv(f, path.stem().string());
}

/// Replace exactly round(frac * n) labels with a different, uniformly chosen class.
inline Dataset randomize_labels(const Dataset& ds, double frac, std::uint64_t seed) {
  if (!(frac >= 0.0 && frac <= 1.0)) throw ParameterError("randomize_labels: frac outside [0,1]");
  if (ds.num_classes < 2) throw ParameterError("randomize_labels: need >= 2 classes");
  Dataset out = ds;
  const std::vector<int>& original = ds.clean_y ? *ds.clean_y : ds.y;
  out.clean_y = original;
  const auto count = static_cast<std::size_t>(round_half_even(frac * static_cast<double>(ds.size())));
  Rng rng(seed);
  const auto chosen = sample_without_replacement(ds.size(), count, rng);
  for (std::size_t i : chosen) {
    const auto r = static_cast<int>(rng.uniform_index(ds.num_classes - 1));
    out.y[i] = r >= original[i] ? r + 1 : r;
  }
  return out;
}

/// Uniform subset of n_keep rows, original order preserved.
inline Dataset subsample(const Dataset& ds, std::size_t n_keep, std::uint64_t seed) {
  if (n_keep < 1 || n_keep > ds.size())
    throw ParameterError("subsample: n_keep must be in [1, " + std::to_string(ds.size()) + "]");
  Rng rng(seed);
  auto rows = sample_without_replacement(ds.size(), n_keep, rng);
  std::sort(rows.begin(), rows.end());
  Dataset out{Matrix(n_keep, ds.dim()), std::vector<int>(n_keep), ds.num_classes, ds.name,
              std::nullopt};
  if (ds.clean_y) out.clean_y.emplace(n_keep);
  for (std::size_t k = 0; k < n_keep; ++k) {
    const auto src = ds.X.row(rows[k]);
    std::copy(src.begin(), src.end(), out.X.row(k).begin());
    out.y[k] = ds.y[rows[k]];
    if (ds.clean_y) (*out.clean_y)[k] = (*ds.clean_y)[rows[k]];
  }
  return out;
}

/// Adds an independent Uniform[0, u] draw to every feature entry.
template <class WithFeatures>
WithFeatures perturb_uniform(const WithFeatures& in, double u, std::uint64_t seed) {
  if (!(u >= 0.0)) throw ParameterError("perturb_uniform: magnitude must be >= 0");
  WithFeatures out = in;
  if (u == 0.0) return out;
  Rng rng(seed);
  for (double& v : out.X.data()) v += u * rng.uniform();
  return out;
}

/// Mixup interpolations x = lam * x_a + (1 - lam) * x_b, lam ~ Beta(alpha, alpha), a != b.
inline ProbeSet mixup_probes(const Dataset& ds, std::size_t m = kDefaultProbeCount,
                             double alpha = kDefaultMixupAlpha, std::uint64_t seed = 0,
                             std::optional<double> fixed_lambda = std::nullopt) {
  if (m < 2) throw ParameterError("mixup_probes: m must be >= 2");
  if (!(alpha > 0.0)) throw ParameterError("mixup_probes: alpha must be > 0");
  if (ds.size() < 2) throw ParameterError("mixup_probes: need >= 2 training points");
  Rng rng(seed);
  ProbeSet probes{Matrix(m, ds.dim()), {ProbeSource::Kind::mixup, alpha}, {}, {}};
  probes.pairs.reserve(m);
  probes.lambdas.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto a = static_cast<std::size_t>(rng.uniform_index(ds.size()));
    auto b = static_cast<std::size_t>(rng.uniform_index(ds.size() - 1));
    if (b >= a) ++b;
    const double lam = fixed_lambda ? *fixed_lambda : beta_sample(alpha, rng);
    const auto xa = ds.X.row(a);
    const auto xb = ds.X.row(b);
    auto dst = probes.X.row(i);
    for (std::size_t k = 0; k < ds.dim(); ++k) dst[k] = lam * xa[k] + (1.0 - lam) * xb[k];
    probes.pairs.emplace_back(a, b);
    probes.lambdas.push_back(lam);
  }
  return probes;
}

/// min(m, n) distinct training rows, in ascending order.
inline ProbeSet raw_probes(const Dataset& ds, std::size_t m, std::uint64_t seed) {
  const std::size_t k = std::min(m, ds.size());
  if (k < 2) throw ParameterError("raw_probes: need >= 2 probes");
  Rng rng(seed);
  auto rows = sample_without_replacement(ds.size(), k, rng);
  std::sort(rows.begin(), rows.end());
  ProbeSet probes{Matrix(k, ds.dim()), {ProbeSource::Kind::raw, 0.0}, {}, {}};
  for (std::size_t i = 0; i < k; ++i) {
    const auto src = ds.X.row(rows[i]);
    std::copy(src.begin(), src.end(), probes.X.row(i).begin());
  }
  return probes;
}

/// Training rows with additive Uniform[0, u] noise.
inline ProbeSet noise_probes(const Dataset& ds, std::size_t m, double u, std::uint64_t seed) {
  ProbeSet probes = perturb_uniform(raw_probes(ds, m, derive_seed(seed, 0)), u,
                                    derive_seed(seed, 1));
  probes.source = {ProbeSource::Kind::pixel_noise, u};
  return probes;
}

}  // namespace llab

#endif  // LLAB_DATA_HPP
