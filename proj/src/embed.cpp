#include "sti_atlas/embed.hpp"

#include <spdlog/spdlog.h>

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>

#include "sti_atlas/error.hpp"
#include "sti_atlas/util.hpp"
#include "sti_atlas/vocab.hpp"

namespace atlas::embed {

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::vector<float> values, std::uint32_t dim)
    : ids_(std::move(ids)), values_(std::move(values)), dim_(dim) {
  if (values_.size() != ids_.size() * static_cast<std::size_t>(dim_)) {
    throw Error(ErrorCode::DimMismatch, "matrix holds " + std::to_string(values_.size()) + " values for " +
                                            std::to_string(ids_.size()) + " rows of dim " + std::to_string(dim_));
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw Error(ErrorCode::SchemaError, "duplicate embedding id " + ids_[i]);
  }
  for (float v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::SchemaError, "non-finite embedding entry");
  }
}

std::optional<std::size_t> EmbeddingMatrix::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

EmbeddingMatrix EmbeddingMatrix::select(const std::vector<std::string>& ids) const {
  std::vector<float> values;
  values.reserve(ids.size() * dim_);
  for (const auto& id : ids) {
    auto i = find(id);
    if (!i) throw Error(ErrorCode::UnknownId, "no embedding for " + id);
    auto r = row(*i);
    values.insert(values.end(), r.begin(), r.end());
  }
  return EmbeddingMatrix(ids, std::move(values), dim_);
}

bool EmbeddingMatrix::operator==(const EmbeddingMatrix& other) const {
  if (dim_ != other.dim_ || ids_ != other.ids_ || values_.size() != other.values_.size()) return false;
  // Bitwise, so -0.0f and 0.0f differ as they would on disk.
  return values_.empty() ||
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(float)) == 0;
}

// ---- EMB1 -----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_emb1(const EmbeddingMatrix& matrix) {
  std::string out(kMagic, 4);
  put_u32(out, matrix.dim());
  put_u32(out, static_cast<std::uint32_t>(matrix.rows()));
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    const auto& id = matrix.ids()[i];
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out += id;
    for (float v : matrix.row(i)) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

EmbeddingMatrix decode_emb1(std::string_view bytes, std::optional<std::uint32_t> expected_dim) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "not an EMB1 vector file");
  }
  if (bytes.size() < 12) throw Error(ErrorCode::TruncatedFile, "EMB1 header is incomplete");
  std::uint32_t dim = get_u32(bytes, 4);
  std::uint32_t count = get_u32(bytes, 8);
  if (expected_dim && dim != *expected_dim) {
    throw Error(ErrorCode::DimMismatch, "file dim " + std::to_string(dim) + " != expected " +
                                            std::to_string(*expected_dim));
  }
  std::size_t offset = 12;
  std::vector<std::string> ids;
  std::vector<float> values;
  ids.reserve(count);
  values.reserve(static_cast<std::size_t>(count) * dim);
  for (std::uint32_t r = 0; r < count; ++r) {
    if (offset + 4 > bytes.size()) throw Error(ErrorCode::TruncatedFile, "row " + std::to_string(r) + " header cut");
    std::uint32_t id_len = get_u32(bytes, offset);
    offset += 4;
    std::size_t row_bytes = static_cast<std::size_t>(id_len) + static_cast<std::size_t>(dim) * 4;
    if (offset + row_bytes > bytes.size()) throw Error(ErrorCode::TruncatedFile, "row " + std::to_string(r) + " cut");
    ids.emplace_back(bytes.substr(offset, id_len));
    offset += id_len;
    for (std::uint32_t k = 0; k < dim; ++k, offset += 4) values.push_back(std::bit_cast<float>(get_u32(bytes, offset)));
  }
  if (offset != bytes.size()) {
    throw Error(ErrorCode::DimMismatch, std::to_string(bytes.size() - offset) + " trailing bytes after " +
                                            std::to_string(count) + " rows; header dim or count is wrong");
  }
  return EmbeddingMatrix(std::move(ids), std::move(values), dim);
}

void write_vectors(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  util::write_file_atomic(path, encode_emb1(matrix));
}

EmbeddingMatrix read_vectors(const std::filesystem::path& path, std::optional<std::uint32_t> expected_dim) {
  return decode_emb1(util::read_file(path), expected_dim);
}

// ---- fallback embedder ----------------------------------------------------

EmbeddingMatrix fallback_embed(const std::vector<std::pair<std::string, std::string>>& texts, std::uint32_t dim,
                               std::uint64_t seed) {
  if (dim < 8) throw Error(ErrorCode::DimMismatch, "fallback embedder needs dim >= 8");
  const std::uint64_t salt = util::splitmix64(seed);
  std::vector<std::string> ids;
  std::vector<float> values;
  values.reserve(texts.size() * dim);
  std::vector<double> acc(dim);
  for (const auto& [id, text] : texts) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (const auto& token : vocab::tokenize(text)) {
      std::uint64_t h = util::splitmix64(util::fnv1a64(token) ^ salt);
      acc[h % dim] += (h >> 63) ? -1.0 : 1.0;
    }
    double norm = 0.0;
    for (double a : acc) norm += a * a;
    if (norm == 0.0) {
      acc[salt % dim] = 1.0;
      norm = 1.0;
    }
    norm = std::sqrt(norm);
    for (double a : acc) values.push_back(static_cast<float>(a / norm));
    ids.push_back(id);
  }
  return EmbeddingMatrix(std::move(ids), std::move(values), dim);
}

// ---- vector algebra -------------------------------------------------------

double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::DimMismatch, "cosine of vectors with different dims");
  double dot = 0.0;
  double nu = 0.0;
  double nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += double(u[i]) * v[i];
    nu += double(u[i]) * u[i];
    nv += double(v[i]) * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw Error(ErrorCode::ZeroVector, "cosine with a zero vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

double squared_distance(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::DimMismatch, "distance between vectors with different dims");
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double diff = double(u[i]) - v[i];
    d += diff * diff;
  }
  return d;
}

std::vector<float> centroid(const std::vector<std::span<const float>>& rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptySet, "centroid of an empty set");
  const std::size_t dim = rows.front().size();
  std::vector<double> sum(dim, 0.0);
  for (const auto& r : rows) {
    if (r.size() != dim) throw Error(ErrorCode::DimMismatch, "centroid over vectors with different dims");
    for (std::size_t i = 0; i < dim; ++i) sum[i] += r[i];
  }
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(sum[i] / static_cast<double>(rows.size()));
  return out;
}

// ---- providers ------------------------------------------------------------

std::string_view to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::File: return "FILE";
    case ProviderKind::FallbackHash: return "FALLBACK_HASH";
    case ProviderKind::Sidecar: return "SIDECAR";
  }
  return "?";
}

ProviderKind parse_provider_kind(std::string_view text) {
  std::string upper = util::to_lower(text);
  if (upper == "file") return ProviderKind::File;
  if (upper == "fallback_hash" || upper == "fallback") return ProviderKind::FallbackHash;
  if (upper == "sidecar") return ProviderKind::Sidecar;
  throw Error(ErrorCode::ConfigError, "unknown embedding provider '" + std::string(text) + "'");
}

void validate(const EmbeddingProviderSpec& spec) {
  auto need = [&](const char* key) {
    if (!spec.params.count(key) || spec.params.at(key).empty()) {
      throw Error(ErrorCode::ConfigError, std::string(to_string(spec.kind)) + " provider requires '" + key + "'");
    }
  };
  switch (spec.kind) {
    case ProviderKind::File: need("path"); break;
    case ProviderKind::FallbackHash: need("dim"); break;
    case ProviderKind::Sidecar: need("command"); break;
  }
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out.push_back(c);
    }
  }
  out.push_back('\'');
  return out;
}

std::string param(const EmbeddingProviderSpec& spec, const std::string& key, const std::string& fallback) {
  auto it = spec.params.find(key);
  return it == spec.params.end() || it->second.empty() ? fallback : it->second;
}

}  // namespace

EmbeddingMatrix provide_embeddings(const EmbeddingProviderSpec& spec,
                                   const std::vector<std::pair<std::string, std::string>>& texts,
                                   const std::filesystem::path& work_dir) {
  validate(spec);
  std::vector<std::string> ids;
  ids.reserve(texts.size());
  for (const auto& t : texts) ids.push_back(t.first);

  switch (spec.kind) {
    case ProviderKind::File:
      return read_vectors(spec.params.at("path")).select(ids);
    case ProviderKind::FallbackHash:
      return fallback_embed(texts, static_cast<std::uint32_t>(std::stoul(spec.params.at("dim"))),
                            std::stoull(param(spec, "seed", "0")));
    case ProviderKind::Sidecar: {
      std::filesystem::create_directories(work_dir);
      auto in_path = work_dir / "sidecar_input.jsonl";
      auto out_path = work_dir / "sidecar_output.emb1";
      std::string lines;
      for (const auto& [id, text] : texts) {
        lines += nlohmann::json{{"id", id}, {"text", text}}.dump();
        lines.push_back('\n');
      }
      util::write_file_atomic(in_path, lines);
      std::filesystem::remove(out_path);
      std::string command = shell_quote(spec.params.at("command")) + " --in " + shell_quote(in_path.string()) +
                            " --out " + shell_quote(out_path.string()) + " --model " +
                            shell_quote(param(spec, "model", "allenai/specter")) + " --batch " +
                            shell_quote(param(spec, "batch", "32"));
      spdlog::info("running embedding sidecar: {}", command);
      int status = std::system(command.c_str());
      if (status != 0) throw Error(ErrorCode::Io, "embedding sidecar exited with status " + std::to_string(status));
      std::optional<std::uint32_t> dim;
      if (spec.params.count("dim")) dim = static_cast<std::uint32_t>(std::stoul(spec.params.at("dim")));
      auto matrix = read_vectors(out_path, dim);
      if (matrix.ids() != ids) throw Error(ErrorCode::SchemaError, "sidecar output ids differ from its input");
      return matrix;
    }
  }
  throw Error(ErrorCode::ConfigError, "unhandled embedding provider");
}

}  // namespace atlas::embed
