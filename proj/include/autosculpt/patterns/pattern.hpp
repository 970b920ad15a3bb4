#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "autosculpt/errors.hpp"
#include "autosculpt/model/io.hpp"

namespace autosculpt {

/// Binary keep-mask over a rows x cols grid (1 = keep, 0 = prune).
struct Pattern {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;  // row-major

  bool at(std::size_t r, std::size_t c) const { return keep[r * cols + c] != 0; }
  std::size_t kept() const {
    std::size_t n = 0;
    for (auto v : keep) n += v;
    return n;
  }
  double keep_fraction() const { return static_cast<double>(kept()) / static_cast<double>(keep.size()); }

  friend bool operator==(const Pattern&, const Pattern&) = default;
};

inline constexpr std::size_t kMinPatterns = 2;
inline constexpr std::size_t kMaxPatterns = 10;

/// Ordered pattern catalog. Index 0 keeps everything, index 1 drops
/// everything; with exactly two entries the search is structured pruning.
struct PatternLibrary {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Pattern> patterns;

  std::size_t size() const noexcept { return patterns.size(); }
  const Pattern& operator[](std::size_t i) const { return patterns.at(i); }
};

template <class Pred>
Pattern make_pattern(std::size_t rows, std::size_t cols, Pred&& keep) {
  Pattern p{rows, cols, std::vector<std::uint8_t>(rows * cols)};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) p.keep[r * cols + c] = keep(r, c) ? 1 : 0;
  return p;
}

inline void validate_library(const PatternLibrary& lib) {
  if (lib.size() < kMinPatterns || lib.size() > kMaxPatterns) {
    throw ValidationError("pattern library must hold between 2 and 10 patterns, got " + std::to_string(lib.size()));
  }
  if (lib.rows == 0 || lib.cols == 0) throw ValidationError("pattern library has an empty kernel shape");
  for (std::size_t i = 0; i < lib.size(); ++i) {
    const auto& p = lib.patterns[i];
    if (p.rows != lib.rows || p.cols != lib.cols || p.keep.size() != lib.rows * lib.cols) {
      throw ValidationError("pattern " + std::to_string(i) + " does not match the library kernel shape");
    }
    for (auto v : p.keep)
      if (v > 1) throw ValidationError("pattern " + std::to_string(i) + " has a non-binary entry");
    for (std::size_t j = 0; j < i; ++j)
      if (lib.patterns[j] == p) {
        throw ValidationError("pattern " + std::to_string(i) + " duplicates pattern " + std::to_string(j));
      }
  }
  if (lib.patterns[0].kept() != lib.rows * lib.cols) throw ValidationError("pattern 0 must keep every position");
  if (lib.patterns[1].kept() != 0) throw ValidationError("pattern 1 must drop every position");
}

/// The built-in catalog for k x k kernels, in library order after the
/// all-ones / all-zeros pair: cross, corners, center row, center column,
/// diagonal, anti-diagonal, ring, center only. Masks that coincide with an
/// earlier entry (small k) are skipped.
inline std::vector<Pattern> catalog(std::size_t k) {
  const std::size_t c = k / 2;
  std::vector<Pattern> out;
  out.push_back(make_pattern(k, k, [](auto, auto) { return true; }));
  out.push_back(make_pattern(k, k, [](auto, auto) { return false; }));
  out.push_back(make_pattern(k, k, [c](auto r, auto col) { return r == c || col == c; }));
  out.push_back(make_pattern(k, k, [k](auto r, auto col) {
    return (r == 0 || r == k - 1) && (col == 0 || col == k - 1);
  }));
  out.push_back(make_pattern(k, k, [c](auto r, auto) { return r == c; }));
  out.push_back(make_pattern(k, k, [c](auto, auto col) { return col == c; }));
  out.push_back(make_pattern(k, k, [](auto r, auto col) { return r == col; }));
  out.push_back(make_pattern(k, k, [k](auto r, auto col) { return r + col == k - 1; }));
  out.push_back(make_pattern(k, k, [k](auto r, auto col) { return r == 0 || col == 0 || r == k - 1 || col == k - 1; }));
  out.push_back(make_pattern(k, k, [c](auto r, auto col) { return r == c && col == c; }));
  std::vector<Pattern> unique;
  for (auto& p : out) {
    bool dup = false;
    for (const auto& q : unique) dup = dup || q == p;
    if (!dup) unique.push_back(std::move(p));
  }
  return unique;
}

inline PatternLibrary default_library(std::size_t k, std::size_t n) {
  if (n < kMinPatterns || n > kMaxPatterns) {
    throw ValidationError("pattern count must be in [2, 10], got " + std::to_string(n));
  }
  if (k == 0) throw ValidationError("kernel size must be positive");
  auto all = catalog(k);
  if (all.size() < n) {
    throw ValidationError("only " + std::to_string(all.size()) + " distinct catalog patterns exist for k=" +
                          std::to_string(k));
  }
  all.resize(n);
  PatternLibrary lib{k, k, std::move(all)};
  validate_library(lib);
  return lib;
}

inline nlohmann::ordered_json library_to_json(const PatternLibrary& lib) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["kernel"] = {lib.rows, lib.cols};
  auto pats = nlohmann::ordered_json::array();
  for (const auto& p : lib.patterns) {
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < p.rows; ++r) {
      auto row = nlohmann::ordered_json::array();
      for (std::size_t c = 0; c < p.cols; ++c) row.push_back(static_cast<int>(p.keep[r * p.cols + c]));
      rows.push_back(row);
    }
    pats.push_back(rows);
  }
  j["patterns"] = pats;
  return j;
}

inline PatternLibrary library_from_json(const nlohmann::json& j) {
  PatternLibrary lib;
  try {
    if (j.at("version").get<int>() != 1) throw ParseError("unsupported pattern library version");
    const auto kernel = j.at("kernel").get<std::vector<std::size_t>>();
    if (kernel.size() != 2) throw ParseError("pattern library kernel must be [p, q]");
    lib.rows = kernel[0];
    lib.cols = kernel[1];
    for (const auto& pj : j.at("patterns")) {
      Pattern p{lib.rows, lib.cols, {}};
      if (pj.size() != lib.rows) throw ParseError("pattern row count does not match kernel");
      for (const auto& row : pj) {
        if (row.size() != lib.cols) throw ParseError("pattern column count does not match kernel");
        for (const auto& v : row) {
          const int b = v.get<int>();
          if (b != 0 && b != 1) throw ParseError("pattern entries must be 0 or 1");
          p.keep.push_back(static_cast<std::uint8_t>(b));
        }
      }
      lib.patterns.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed pattern library: ") + e.what());
  }
  validate_library(lib);
  return lib;
}

inline void save_library(const PatternLibrary& lib, const std::filesystem::path& path) {
  detail::write_file(path, library_to_json(lib).dump(2) + "\n");
}

inline PatternLibrary load_library(const std::filesystem::path& path) {
  try {
    return library_from_json(nlohmann::json::parse(detail::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("pattern library '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace autosculpt
