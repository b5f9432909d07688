#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace atlas::util {

// ---- UTF-8 ----------------------------------------------------------------

std::vector<char32_t> utf8_decode(std::string_view text);
void utf8_append(std::string& out, char32_t cp);

// Simple case folding for Latin, Greek and Cyrillic scripts.
char32_t to_lower(char32_t cp);
std::string to_lower(std::string_view text);

// Letters and digits count as word characters; everything else separates words.
bool is_word_char(char32_t cp);

std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

// ---- CSV (RFC 4180) -------------------------------------------------------

using CsvRow = std::vector<std::string>;

struct CsvTable {
  CsvRow header;
  std::vector<CsvRow> rows;

  // Returns the column index, or -1 when absent.
  int column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);
std::string csv_escape(std::string_view field);
std::string format_csv_row(const CsvRow& row);

// ---- files ----------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// ---- hashing --------------------------------------------------------------

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);

// ---- portable randomness --------------------------------------------------
// std::*_distribution output differs between standard libraries, so anything
// that feeds a reproducible artifact goes through these helpers instead.

using Rng = std::mt19937_64;

double uniform01(Rng& rng);
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound);
double standard_normal(Rng& rng);

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = uniform_below(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

// Uniform sample without replacement of min(cap, pool.size()) items, in
// draw order.
template <typename T>
std::vector<T> sample(std::vector<T> pool, std::size_t cap, Rng& rng) {
  std::size_t take = std::min(cap, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::size_t j = i + uniform_below(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  return pool;
}

// Runs body(begin, end) over [0, n) split into contiguous chunks.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace atlas::util
