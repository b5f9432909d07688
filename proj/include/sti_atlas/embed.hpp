#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace atlas::embed {

// Row-major n x dim float32 matrix with one id per row.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::vector<std::string> ids, std::vector<float> values, std::uint32_t dim);

  std::size_t rows() const { return ids_.size(); }
  std::uint32_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<float>& values() const { return values_; }

  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::optional<std::size_t> find(const std::string& id) const;

  // Rows for `ids`, in that order. Throws UnknownId.
  EmbeddingMatrix select(const std::vector<std::string>& ids) const;

  bool operator==(const EmbeddingMatrix& other) const;

 private:
  std::vector<std::string> ids_;
  std::vector<float> values_;
  std::uint32_t dim_ = 0;
  std::map<std::string, std::size_t> index_;
};

// EMB1: "EMB1" | u32 dim | u32 count | count x (u32 id_len | id bytes | dim x f32), little endian.
std::string encode_emb1(const EmbeddingMatrix& matrix);
EmbeddingMatrix decode_emb1(std::string_view bytes, std::optional<std::uint32_t> expected_dim = std::nullopt);
void write_vectors(const EmbeddingMatrix& matrix, const std::filesystem::path& path);
EmbeddingMatrix read_vectors(const std::filesystem::path& path,
                             std::optional<std::uint32_t> expected_dim = std::nullopt);

// Seeded signed feature hashing of tokens into `dim` buckets, L2-normalized.
// Non-semantic; exists so the pipeline runs without model inference.
EmbeddingMatrix fallback_embed(const std::vector<std::pair<std::string, std::string>>& texts, std::uint32_t dim,
                               std::uint64_t seed);

double cosine(std::span<const float> u, std::span<const float> v);
double squared_distance(std::span<const float> u, std::span<const float> v);
std::vector<float> centroid(const std::vector<std::span<const float>>& rows);

enum class ProviderKind { File, FallbackHash, Sidecar };

struct EmbeddingProviderSpec {
  ProviderKind kind = ProviderKind::FallbackHash;
  std::map<std::string, std::string> params;  // path | dim, seed | command, model, batch
};

std::string_view to_string(ProviderKind kind);
ProviderKind parse_provider_kind(std::string_view text);
void validate(const EmbeddingProviderSpec& spec);

// Embeds (id, text) pairs with the configured provider. FILE selects rows
// by id from an EMB1 file; SIDECAR writes {"id","text"} JSONL to `work_dir`
// and runs `<command> --in <jsonl> --out <emb1> --model <id> --batch <n>`.
EmbeddingMatrix provide_embeddings(const EmbeddingProviderSpec& spec,
                                   const std::vector<std::pair<std::string, std::string>>& texts,
                                   const std::filesystem::path& work_dir);

}  // namespace atlas::embed
