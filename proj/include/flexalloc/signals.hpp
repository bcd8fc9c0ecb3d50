#pragma once

// Reference-signal construction: step profiles, a band-limited synthetic
// stand-in for balancing-reserve deployment data, CSV ingestion with
// resampling, and capacity scaling.
//
// Signals are generated with the extra preview samples the controller's
// final windows need (length >= ticks + N_p); run loops validate this.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flexalloc/model.hpp"
#include "flexalloc/types.hpp"

namespace flexalloc {

enum class SignalProvenance { Step, Synthetic, Csv };

struct ReferenceSignal {
  Eigen::VectorXd samples;  ///< kW at period ts_minutes
  double ts_minutes = 5.0;
  SignalProvenance provenance = SignalProvenance::Step;
  std::string note;  ///< non-empty when construction emitted a warning

  Eigen::Index size() const { return samples.size(); }
};

/// Piecewise-constant profile.  Each (from_tick, kw) level is active from
/// its start tick until the next level; ticks before the first level are 0.
inline ReferenceSignal step_signal(
    const std::vector<std::pair<std::int64_t, double>>& levels,
    std::int64_t total, double ts_minutes = 5.0) {
  if (total < 0) throw std::invalid_argument("step_signal: total < 0");
  for (size_t j = 0; j < levels.size(); ++j) {
    if (levels[j].first < 0 || levels[j].first >= std::max<std::int64_t>(total, 1))
      throw std::invalid_argument("step_signal: level " + std::to_string(j) +
                                  " starts out of range");
    if (j > 0 && levels[j].first <= levels[j - 1].first)
      throw std::invalid_argument(
          "step_signal: level starts must be strictly increasing (level " +
          std::to_string(j) + ")");
    if (!std::isfinite(levels[j].second))
      throw std::invalid_argument("step_signal: non-finite level value");
  }
  ReferenceSignal sig;
  sig.ts_minutes = ts_minutes;
  sig.provenance = SignalProvenance::Step;
  sig.samples = Eigen::VectorXd::Zero(total);
  size_t j = 0;
  double level = 0.0;
  for (std::int64_t t = 0; t < total; ++t) {
    while (j < levels.size() && levels[j].first <= t) level = levels[j++].second;
    sig.samples[t] = level;
  }
  return sig;
}

namespace detail {

/// Restriction of a real series to the DFT bins [m_lo, m_hi] (and their
/// conjugates).  Naive transform; test- and construction-scale only.
inline Eigen::VectorXd band_limit(const Eigen::VectorXd& w, int m_lo,
                                  int m_hi) {
  const int n = static_cast<int>(w.size());
  const double two_pi = 2.0 * M_PI;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (int m = m_lo; m <= m_hi; ++m) {
    std::complex<double> X(0.0, 0.0);
    for (int t = 0; t < n; ++t)
      X += w[t] * std::polar(1.0, -two_pi * m * t / n);
    for (int t = 0; t < n; ++t)
      out[t] += (2.0 / n) * std::real(X * std::polar(1.0, two_pi * m * t / n));
  }
  return out;
}

}  // namespace detail

/// Seeded pseudo-random reference with energy confined to the period band
/// [min_period, max_period] (in ticks): a handful of randomly phased
/// sinusoids on exact DFT bins plus a smoothed random walk projected onto
/// the same bins.  Zero-mean, then peak-normalized to `amplitude`.
inline ReferenceSignal synthetic_brd(std::uint64_t seed, std::int64_t total,
                                     std::pair<int, int> band,
                                     double amplitude,
                                     double ts_minutes = 5.0) {
  const auto [min_period, max_period] = band;
  if (min_period < 2 || max_period < min_period)
    throw std::invalid_argument("synthetic_brd: need 2 <= min_period <= max_period");
  if (total < max_period)
    throw std::invalid_argument(
        "synthetic_brd: signal length must cover at least one max_period");
  const int n = static_cast<int>(total);
  int m_lo = static_cast<int>(std::ceil(static_cast<double>(n) / max_period));
  int m_hi = static_cast<int>(std::floor(static_cast<double>(n) / min_period));
  m_lo = std::max(m_lo, 1);
  m_hi = std::min(m_hi, n / 2 - 1);
  if (m_hi < m_lo)
    throw std::invalid_argument("synthetic_brd: empty frequency band");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::uniform_int_distribution<int> bin(m_lo, m_hi);

  // sinusoids on distinct bins, mildly red-weighted
  const int n_sines = std::min(8, m_hi - m_lo + 1);
  std::vector<int> bins;
  while (static_cast<int>(bins.size()) < n_sines) {
    const int m = bin(rng);
    if (std::find(bins.begin(), bins.end(), m) == bins.end()) bins.push_back(m);
  }
  Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
  for (int m : bins) {
    const double a = std::pow(static_cast<double>(m_lo) / m, 0.8);
    const double ph = phase(rng);
    for (int t = 0; t < n; ++t)
      s[t] += a * std::cos(2.0 * M_PI * m * t / n + ph);
  }

  // smoothed random walk, then confined to the same band
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd walk(n);
  double acc = 0.0;
  for (int t = 0; t < n; ++t) walk[t] = (acc += gauss(rng));
  Eigen::VectorXd smooth(n);
  const int half = std::max(1, min_period / 2);
  for (int t = 0; t < n; ++t) {
    const int a = std::max(0, t - half), b = std::min(n - 1, t + half);
    smooth[t] = walk.segment(a, b - a + 1).mean();
  }
  Eigen::VectorXd walk_banded = detail::band_limit(smooth, m_lo, m_hi);
  const double s_rms = std::sqrt(s.squaredNorm() / n);
  const double w_rms = std::sqrt(walk_banded.squaredNorm() / n);
  if (w_rms > 0.0) walk_banded *= 0.5 * s_rms / w_rms;
  s += walk_banded;

  s.array() -= s.mean();
  const double peak = s.lpNorm<Eigen::Infinity>();
  if (peak > 0.0) s *= amplitude / peak;
  if (amplitude == 0.0) s.setZero();

  ReferenceSignal sig;
  sig.samples = std::move(s);
  sig.ts_minutes = ts_minutes;
  sig.provenance = SignalProvenance::Synthetic;
  return sig;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim spaces and stray carriage returns
    const auto a = cell.find_first_not_of(" \t\r");
    const auto b = cell.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline long days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

/// Accepts plain minutes (any float) or ISO-8601 timestamps
/// (YYYY-MM-DD[T ]HH:MM[:SS]); returns absolute minutes.
inline double parse_time_minutes(const std::string& tok, size_t row) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() + tok.size() && !tok.empty()) return v;
  int y = 0;
  unsigned mo = 0, d = 0, hh = 0, mm = 0, ss = 0;
  char sep = 0;
  int got = std::sscanf(tok.c_str(), "%4d-%2u-%2u%c%2u:%2u:%2u", &y, &mo, &d,
                        &sep, &hh, &mm, &ss);
  if ((got == 7 || got == 6) && (sep == 'T' || sep == ' ')) {
    if (got == 6) ss = 0;
    return static_cast<double>(days_from_civil(y, mo, d)) * 1440.0 +
           hh * 60.0 + mm + ss / 60.0;
  }
  throw std::runtime_error("csv row " + std::to_string(row) +
                           ": cannot parse timestamp '" + tok + "'");
}

}  // namespace detail

/// Reads a (timestamp, value) CSV, converts to kW, and resamples onto the
/// target period by linear interpolation.  Header row required; timestamps
/// may be minutes or ISO-8601 and must be strictly increasing.
inline ReferenceSignal ingest_csv(const std::string& path,
                                  const std::string& time_column,
                                  const std::string& value_column,
                                  double ts_target_minutes,
                                  const std::string& unit = "kw") {
  if (!(ts_target_minutes > 0.0))
    throw std::invalid_argument("ingest_csv: ts_target must be > 0");
  double unit_factor = 1.0;
  if (unit == "mw")
    unit_factor = 1000.0;
  else if (unit != "kw")
    throw std::invalid_argument("ingest_csv: unit must be kw or mw, got '" +
                                unit + "'");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("ingest_csv: empty file " + path);
  const auto header = detail::split_csv_line(line);
  auto find_col = [&](const std::string& name) {
    for (size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    throw std::runtime_error("ingest_csv: column '" + name +
                             "' not found in header of " + path);
  };
  const size_t tc = find_col(time_column), vc = find_col(value_column);

  std::vector<double> times, values;
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() <= std::max(tc, vc))
      throw std::runtime_error("csv row " + std::to_string(row) +
                               ": too few columns");
    const double t = detail::parse_time_minutes(cells[tc], row);
    char* end = nullptr;
    const double v = std::strtod(cells[vc].c_str(), &end);
    if (end != cells[vc].c_str() + cells[vc].size() || cells[vc].empty())
      throw std::runtime_error("csv row " + std::to_string(row) +
                               ": cannot parse value '" + cells[vc] + "'");
    if (!times.empty() && t <= times.back())
      throw std::runtime_error("csv row " + std::to_string(row) +
                               ": non-monotone timestamp");
    times.push_back(t);
    values.push_back(v * unit_factor);
  }
  if (times.empty())
    throw std::runtime_error("ingest_csv: no data rows in " + path);

  const double span = times.back() - times.front();
  const auto count =
      static_cast<Eigen::Index>(std::floor(span / ts_target_minutes + 1e-9)) + 1;
  ReferenceSignal sig;
  sig.ts_minutes = ts_target_minutes;
  sig.provenance = SignalProvenance::Csv;
  sig.samples.resize(count);
  size_t seg = 0;
  for (Eigen::Index k = 0; k < count; ++k) {
    const double t = times.front() + k * ts_target_minutes;
    while (seg + 2 < times.size() && times[seg + 1] < t) ++seg;
    const double t0 = times[seg], t1 = times[seg + 1 < times.size() ? seg + 1 : seg];
    if (times.size() == 1 || t1 == t0) {
      sig.samples[k] = values[seg];
    } else {
      const double w = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
      sig.samples[k] = values[seg] * (1.0 - w) + values[seg + 1] * w;
    }
  }
  return sig;
}

// ---------------------------------------------------------------------------
// capacity scaling

namespace detail {

inline ReferenceSignal scale_affine(const ReferenceSignal& sig, double t_lo,
                                    double t_hi, const char* who) {
  ReferenceSignal out = sig;
  const double mn = sig.samples.minCoeff(), mx = sig.samples.maxCoeff();
  if (mx - mn < 1e-12 * std::max(1.0, std::abs(mx))) {
    const double mid = 0.5 * (t_lo + t_hi);
    out.samples.setConstant(mid);
    out.note = std::string(who) +
               ": constant input signal, centered at capacity midpoint";
    std::cerr << "flexalloc: warning: " << out.note << "\n";
    return out;
  }
  const double g = (t_hi - t_lo) / (mx - mn);
  out.samples = (sig.samples.array() - mn) * g + t_lo;
  return out;
}

inline void require_finite_caps(double lo, double hi, const char* who) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || hi <= lo)
    throw std::invalid_argument(std::string(who) +
                                ": fleet box sums must be finite with "
                                "sum d_lo < sum d_hi");
}

}  // namespace detail

/// Affine map of the signal range onto the fleet's trackable magnitude
/// range, shrunk about its midpoint by `margin`: min -> mid - margin*half,
/// max -> mid + margin*half where [mid-half, mid+half] = [sum d_lo, sum d_hi].
inline ReferenceSignal scale_to_capacity(const ReferenceSignal& sig,
                                         const std::vector<LoadQoS>& fleet,
                                         double margin = 0.9) {
  if (fleet.empty())
    throw std::invalid_argument("scale_to_capacity: empty fleet");
  if (!(margin > 0.0) || margin > 1.0)
    throw std::invalid_argument("scale_to_capacity: margin must be in (0,1]");
  const double lo = sum_d_lo(fleet), hi = sum_d_hi(fleet);
  detail::require_finite_caps(lo, hi, "scale_to_capacity");
  const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo) * margin;
  return detail::scale_affine(sig, mid - half, mid + half,
                              "scale_to_capacity");
}

/// Variant mapping the signal's range onto explicit fractions of the
/// fleet's [sum d_lo, sum d_hi]; used to build deliberately narrow, deeply
/// feasible references.
inline ReferenceSignal scale_to_band(const ReferenceSignal& sig,
                                     const std::vector<LoadQoS>& fleet,
                                     double frac_lo, double frac_hi) {
  if (fleet.empty()) throw std::invalid_argument("scale_to_band: empty fleet");
  if (!(0.0 <= frac_lo && frac_lo <= frac_hi && frac_hi <= 1.0))
    throw std::invalid_argument(
        "scale_to_band: need 0 <= frac_lo <= frac_hi <= 1");
  const double lo = sum_d_lo(fleet), hi = sum_d_hi(fleet);
  detail::require_finite_caps(lo, hi, "scale_to_band");
  return detail::scale_affine(sig, lo + frac_lo * (hi - lo),
                              lo + frac_hi * (hi - lo), "scale_to_band");
}

/// Builds the reference a simulation will use from its config spec,
/// including post-scaling.  `total` should be ticks + N_p.
inline ReferenceSignal generate_signal(const SignalSpec& spec,
                                       const std::vector<LoadQoS>& fleet,
                                       std::int64_t total, double ts_minutes,
                                       std::uint64_t seed) {
  ReferenceSignal sig;
  switch (spec.kind) {
    case SignalSpec::Kind::Step:
      sig = step_signal(spec.step_levels, total, ts_minutes);
      break;
    case SignalSpec::Kind::Synthetic:
      sig = synthetic_brd(seed, total, {spec.min_period, spec.max_period},
                          spec.amplitude, ts_minutes);
      break;
    case SignalSpec::Kind::Csv:
      sig = ingest_csv(spec.path, spec.time_column, spec.value_column,
                       ts_minutes, spec.unit);
      if (sig.size() < total)
        throw std::runtime_error(
            "csv signal too short: " + std::to_string(sig.size()) +
            " samples, need " + std::to_string(total));
      break;
  }
  if (spec.band_frac)
    sig = scale_to_band(sig, fleet, spec.band_frac->first,
                        spec.band_frac->second);
  else if (spec.scale_to_capacity)
    sig = scale_to_capacity(sig, fleet, spec.margin);
  return sig;
}

/// Plot-ready dump: one row per sample.
inline void signal_to_csv(const ReferenceSignal& sig, std::ostream& os) {
  os << "tick,kw\n";
  char buf[40];
  for (Eigen::Index t = 0; t < sig.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%.17g", sig.samples[t]);
    os << t << ',' << buf << '\n';
  }
}

}  // namespace flexalloc
