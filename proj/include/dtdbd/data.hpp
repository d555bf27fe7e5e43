#pragma once

// Multi-domain datasets: synthetic generation with a planted domain shortcut,
// JSONL persistence, stratified splitting and deterministic batching.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dtdbd/errors.hpp"
#include "dtdbd/io.hpp"
#include "dtdbd/tensor.hpp"
#include "json.hpp"

namespace dtdbd {

struct NewsSample {
  std::string id;
  int domain = 0;
  int label = 0;  // 1 = fake
  std::vector<double> features;

  friend bool operator==(const NewsSample&, const NewsSample&) = default;
};

enum class Layout { vector, matrix };

struct Dataset {
  std::size_t num_domains = 0;
  std::size_t embed_dim = 0;
  Layout layout = Layout::vector;
  /// Tokens per sample; only meaningful for the matrix layout.
  std::size_t seq_len = 0;
  std::vector<NewsSample> samples;

  std::size_t feature_size() const { return layout == Layout::matrix ? seq_len * embed_dim : embed_dim; }
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d{num_domains, embed_dim, layout, seq_len, {}};
    d.samples.reserve(idx.size());
    for (auto i : idx) d.samples.push_back(samples.at(i));
    return d;
  }

  std::vector<int> labels() const {
    std::vector<int> v;
    v.reserve(samples.size());
    for (const auto& s : samples) v.push_back(s.label);
    return v;
  }

  std::vector<int> domains() const {
    std::vector<int> v;
    v.reserve(samples.size());
    for (const auto& s : samples) v.push_back(s.domain);
    return v;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Largest-remainder apportionment of `total` over `fractions`. Ties in the
/// remainder go to the lower index.
inline std::vector<std::size_t> largest_remainder(const std::vector<double>& fractions, std::size_t total) {
  const double sum = std::accumulate(fractions.begin(), fractions.end(), 0.0);
  std::vector<std::size_t> out(fractions.size(), 0);
  if (fractions.empty() || sum <= 0.0) return out;
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    // Rounded to kill representation noise such as 9000 * 0.026 = 234.00000000000003.
    const double exact = std::round(static_cast<double>(total) * fractions[i] / sum * 1e9) / 1e9;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += out[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) out[rem[k % rem.size()].second]++;
  return out;
}

struct DomainProfile {
  double news_share = 0.0;
  double fake_rate = 0.0;
};

struct SyntheticSpec {
  std::vector<DomainProfile> domains;
  std::size_t total_n = 9000;
  std::size_t embed_dim = 32;
  std::size_t signal_dims = 8;
  std::size_t domain_dims = 8;
  /// Distance between the fake and real means on each signal coordinate.
  double signal_separation = 1.0;
  double noise_sigma = 1.0;
  /// Height of the per-domain one-hot pattern on the shortcut coordinates.
  double domain_amplitude = 4.0;
  std::uint64_t seed = 0;

  /// Nine domains with skewed sizes and fake rates; the default profile.
  static SyntheticSpec table1(std::size_t n = 9000, std::uint64_t seed = 0) {
    SyntheticSpec s;
    s.total_n = n;
    s.seed = seed;
    const double share[] = {2.6, 3.8, 5.3, 8.5, 9.3, 11.0, 14.5, 15.8, 29.2};
    const double fake[] = {39.4, 64.7, 50.5, 76.1, 64.0, 51.5, 27.4, 30.5, 55.1};
    for (int i = 0; i < 9; ++i) s.domains.push_back({share[i] / 100.0, fake[i] / 100.0});
    return s;
  }

  void validate() const {
    if (domains.empty()) throw ConfigError("synthetic spec needs at least one domain");
    double sum = 0.0;
    for (const auto& d : domains) {
      if (!(d.news_share >= 0.0)) throw ConfigError("news shares must be non-negative");
      if (!(d.fake_rate >= 0.0 && d.fake_rate <= 1.0)) throw ConfigError("fake rates must lie in [0, 1]");
      sum += d.news_share;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("news shares must sum to 1");
    if (signal_dims + domain_dims > embed_dim)
      throw ConfigError("signal_dims + domain_dims exceeds embed_dim");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
    if (total_n < 10 * domains.size())
      throw ConfigError("total_n must be at least 10 samples per domain");
  }
};

/// Per-domain sample counts and, within each, the fake count.
inline std::vector<std::pair<std::size_t, std::size_t>> synthetic_counts(const SyntheticSpec& spec) {
  std::vector<double> shares;
  for (const auto& d : spec.domains) shares.push_back(d.news_share);
  auto sizes = largest_remainder(shares, spec.total_n);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t d = 0; d < sizes.size(); ++d) {
    auto split = largest_remainder({spec.domains[d].fake_rate, 1.0 - spec.domains[d].fake_rate}, sizes[d]);
    out.emplace_back(sizes[d], split[0]);
  }
  return out;
}

/// Coordinates [0, signal_dims) carry the label (mean +-separation/2);
/// [signal_dims, signal_dims + domain_dims) carry a one-hot domain pattern
/// (a second coordinate is lit for domain ids beyond domain_dims); the rest
/// are noise. Samples are shuffled; output is deterministic in spec.seed.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t k = spec.domains.size();
  Dataset ds{k, spec.embed_dim, Layout::vector, 0, {}};
  ds.samples.reserve(spec.total_n);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto counts = synthetic_counts(spec);
  for (std::size_t d = 0; d < k; ++d) {
    const auto [n, n_fake] = counts[d];
    for (std::size_t i = 0; i < n; ++i) {
      NewsSample s;
      s.domain = static_cast<int>(d);
      s.label = i < n_fake ? 1 : 0;
      s.id = "d" + std::to_string(d) + "-" + std::to_string(i);
      s.features.resize(spec.embed_dim);
      for (auto& v : s.features) v = spec.noise_sigma * noise(rng);
      const double mu = (s.label ? 0.5 : -0.5) * spec.signal_separation;
      for (std::size_t j = 0; j < spec.signal_dims; ++j) s.features[j] += mu;
      if (spec.domain_dims > 0) {
        const std::size_t base = spec.signal_dims;
        s.features[base + d % spec.domain_dims] += spec.domain_amplitude;
        if (d >= spec.domain_dims) s.features[base + (d + 1) % spec.domain_dims] += spec.domain_amplitude;
      }
      ds.samples.push_back(std::move(s));
    }
  }
  std::shuffle(ds.samples.begin(), ds.samples.end(), rng);
  return ds;
}

// ---------------------------------------------------------------------------
// JSONL persistence

inline std::string dataset_to_jsonl(const Dataset& ds) {
  nlohmann::json header = {{"format", "dtdbd-dataset"},
                           {"version", 1},
                           {"num_domains", ds.num_domains},
                           {"embed_dim", ds.embed_dim},
                           {"layout", ds.layout == Layout::matrix ? "matrix" : "vector"}};
  if (ds.layout == Layout::matrix) header["seq_len"] = ds.seq_len;
  std::string out = header.dump() + "\n";
  for (const auto& s : ds.samples) {
    nlohmann::json line = {{"id", s.id}, {"domain", s.domain}, {"label", s.label}, {"features", s.features}};
    out += line.dump() + "\n";
  }
  return out;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, dataset_to_jsonl(ds));
}

inline Dataset dataset_from_jsonl(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  Dataset ds;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    try {
      if (!have_header) {
        if (j.value("format", "") != "dtdbd-dataset") throw ParseError("missing dtdbd-dataset header", lineno);
        if (j.at("version").get<int>() != 1) throw ParseError("unsupported dataset version", lineno);
        ds.num_domains = j.at("num_domains").get<std::size_t>();
        ds.embed_dim = j.at("embed_dim").get<std::size_t>();
        const auto layout = j.at("layout").get<std::string>();
        if (layout == "matrix") {
          ds.layout = Layout::matrix;
          ds.seq_len = j.at("seq_len").get<std::size_t>();
        } else if (layout == "vector") {
          ds.layout = Layout::vector;
        } else {
          throw ParseError("unknown layout '" + layout + "'", lineno);
        }
        if (ds.num_domains == 0 || ds.embed_dim == 0 || (ds.layout == Layout::matrix && ds.seq_len == 0))
          throw ParseError("header dimensions must be positive", lineno);
        have_header = true;
        continue;
      }
      NewsSample s;
      s.id = j.at("id").get<std::string>();
      s.domain = j.at("domain").get<int>();
      s.label = j.at("label").get<int>();
      s.features = j.at("features").get<std::vector<double>>();
      if (s.domain < 0 || static_cast<std::size_t>(s.domain) >= ds.num_domains)
        throw ParseError("domain " + std::to_string(s.domain) + " outside [0, " +
                             std::to_string(ds.num_domains) + ")",
                         lineno);
      if (s.label != 0 && s.label != 1) throw ParseError("label must be 0 or 1", lineno);
      if (s.features.size() != ds.feature_size())
        throw ParseError("expected " + std::to_string(ds.feature_size()) + " features, got " +
                             std::to_string(s.features.size()),
                         lineno);
      for (double v : s.features)
        if (!std::isfinite(v)) throw ParseError("non-finite feature", lineno);
      ds.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("schema error: ") + e.what(), lineno);
    }
  }
  if (!have_header) throw ParseError("missing dataset header line");
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  return dataset_from_jsonl(in);
}

// ---------------------------------------------------------------------------
// Splitting and batching

struct SplitResult {
  Dataset train, val, test;
  std::vector<std::string> warnings;
};

/// Stratified by (domain, label) cell; each cell is shuffled with `seed` and
/// apportioned by largest remainder. Sample order within a split follows the
/// input order.
inline SplitResult split(const Dataset& ds, double train_ratio, double val_ratio, double test_ratio,
                         std::uint64_t seed) {
  for (double r : {train_ratio, val_ratio, test_ratio})
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
  if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");
  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    cells[{ds.samples[i].domain, ds.samples[i].label}].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> parts[3];
  SplitResult out;
  for (auto& [key, idx] : cells) {
    if (idx.size() < 3)
      out.warnings.push_back("cell (domain " + std::to_string(key.first) + ", label " +
                             std::to_string(key.second) + ") has " + std::to_string(idx.size()) +
                             " samples; some splits get none");
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n = largest_remainder({train_ratio, val_ratio, test_ratio}, idx.size());
    std::size_t pos = 0;
    for (int p = 0; p < 3; ++p)
      for (std::size_t c = 0; c < n[p]; ++c) parts[p].push_back(idx[pos++]);
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  out.train = ds.subset(parts[0]);
  out.val = ds.subset(parts[1]);
  out.test = ds.subset(parts[2]);
  return out;
}

/// Shuffled index batches for one epoch, deterministic in (seed, epoch). A
/// trailing batch of one sample is merged into the previous batch.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(sq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  if (out.size() >= 2 && out.back().size() < 2) {
    auto tail = std::move(out.back());
    out.pop_back();
    out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch) {
  return batches(ds.size(), batch_size, seed, epoch);
}

}  // namespace dtdbd
