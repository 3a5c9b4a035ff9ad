#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace shiftkit {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Modality { V, Q, VQ };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view text);

/// Identifies which producer (and which fine-tuning state of it) emitted an
/// embedding set. Text form is `MODALITY:MODEL:STATE`, e.g. `VQ:pali:FT(vanilla)`
/// or `V:vit:PT`.
struct ModalityTag {
  Modality modality = Modality::VQ;
  std::string model_id;
  /// Empty for the pre-trained state, otherwise the fine-tuning method name.
  std::string ft_method;

  bool pretrained() const { return ft_method.empty(); }
  /// "PT" or the method name inside FT(...).
  std::string state_label() const;
  std::string str() const;

  static ModalityTag parse(std::string_view text);

  friend bool operator==(const ModalityTag&, const ModalityTag&) = default;
  friend auto operator<=>(const ModalityTag&, const ModalityTag&) = default;
};

enum class Split { Train, Test };
enum class StoredDtype : std::uint8_t { F32 = 0, F64 = 1 };

struct EmbeddingMatrix {
  RowMatrix data;
  ModalityTag tag;
  std::string dataset_id;
  Split split = Split::Test;
  StoredDtype dtype = StoredDtype::F32;

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index cols() const { return data.cols(); }
};

/// Throws DimensionZero or NonFiniteEntry(row, col).
void validate(const EmbeddingMatrix& m);

/// Reads an EMB1 file. Metadata not stored in the file (tag, dataset id,
/// split) is left at its defaults for the caller to fill in.
EmbeddingMatrix read_embedding_matrix(const std::filesystem::path& path);
void write_embedding_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path);

inline constexpr std::size_t kEmbeddingHeaderBytes = 32;

/// Head-averaged attention over N image tokens followed by M question tokens.
struct AttentionRecord {
  std::uint32_t n_image = 0;
  std::uint32_t n_question = 0;
  std::string sample_id;
  RowMatrix attn;

  std::size_t tokens() const { return std::size_t{n_image} + n_question; }
};

inline constexpr double kAttentionRowTolerance = 1e-4;

/// Rejects (never renormalizes) rows summing outside 1 +/- 1e-4, negative or
/// non-finite weights, and shape mismatches.
void validate(const AttentionRecord& rec);

std::vector<AttentionRecord> read_attention_records(const std::filesystem::path& path);
void write_attention_records(const std::vector<AttentionRecord>& records,
                             const std::filesystem::path& path);

enum class DatasetRole { IdTrain, IdVal, NearOod, FarOod };
enum class ShiftType { None, Image, Question, Answer, Multimodal, Adversarial, Far };

std::string_view to_string(DatasetRole r);
std::string_view to_string(ShiftType s);
DatasetRole parse_role(std::string_view text);
ShiftType parse_shift_type(std::string_view text);

struct ManifestEntry {
  std::string dataset_id;
  DatasetRole role = DatasetRole::NearOod;
  ShiftType shift_type = ShiftType::None;
  /// (tag, absolute path) pairs in document order.
  std::vector<std::pair<ModalityTag, std::filesystem::path>> embedding_paths;
  std::optional<std::filesystem::path> attention_path;
  std::optional<double> published_accuracy;

  const std::filesystem::path* embedding_path(const ModalityTag& tag) const;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  /// Producers allowed to emit joint (VQ) embeddings.
  std::vector<std::string> joint_capable;

  const ManifestEntry& id_train() const;
  const ManifestEntry* find(std::string_view dataset_id) const;
  /// Entries other than ID-train, in document order.
  std::vector<const ManifestEntry*> test_entries() const;

  /// Order-insensitive comparison: entries are matched by dataset_id.
  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b);
};

/// Parses manifest JSON text; relative paths resolve against `base_dir`.
/// When `check_paths` is set every referenced file must exist.
DatasetManifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir,
                               bool check_paths = true);
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Writes the manifest with paths relative to the manifest's directory.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Loads the embedding for (dataset, tag) with metadata filled in.
/// Throws MissingEmbedding naming both coordinates when absent.
EmbeddingMatrix load_embedding(const DatasetManifest& manifest, std::string_view dataset_id,
                               const ModalityTag& tag);

}  // namespace shiftkit
