#include "shiftkit/ingest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include <json.hpp>

#include "shiftkit/error.hpp"
#include "shiftkit/report.hpp"

namespace shiftkit {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Tags and enums

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::V: return "V";
    case Modality::Q: return "Q";
    case Modality::VQ: return "VQ";
  }
  return "?";
}

Modality parse_modality(std::string_view text) {
  if (text == "V") return Modality::V;
  if (text == "Q") return Modality::Q;
  if (text == "VQ") return Modality::VQ;
  throw Error(Errc::BadTag, "unknown modality '" + std::string(text) + "'");
}

std::string ModalityTag::state_label() const { return pretrained() ? "PT" : ft_method; }

std::string ModalityTag::str() const {
  std::string out(to_string(modality));
  out += ':';
  out += model_id;
  out += ':';
  out += pretrained() ? std::string("PT") : "FT(" + ft_method + ")";
  return out;
}

ModalityTag ModalityTag::parse(std::string_view text) {
  auto first = text.find(':');
  auto second = first == std::string_view::npos ? first : text.find(':', first + 1);
  if (second == std::string_view::npos) {
    throw Error(Errc::BadTag, "tag '" + std::string(text) + "' is not MODALITY:MODEL:STATE");
  }
  ModalityTag tag;
  tag.modality = parse_modality(text.substr(0, first));
  tag.model_id = std::string(text.substr(first + 1, second - first - 1));
  auto state = text.substr(second + 1);
  if (tag.model_id.empty()) throw Error(Errc::BadTag, "tag '" + std::string(text) + "' has no model");
  if (state == "PT") return tag;
  if (state.size() > 4 && state.substr(0, 3) == "FT(" && state.back() == ')') {
    tag.ft_method = std::string(state.substr(3, state.size() - 4));
    return tag;
  }
  throw Error(Errc::BadTag, "tag '" + std::string(text) + "' state must be PT or FT(method)");
}

// ---------------------------------------------------------------------------
// EMB1

namespace {

constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};
constexpr char kAttMagic[4] = {'A', 'T', 'T', '1'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, double v) { put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
 public:
  ByteReader(std::string_view bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double get_f32() { return static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>())); }
  double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw Error(Errc::TruncatedPayload, path_.string() + ": needs " + std::to_string(n) +
                                              " more bytes, " + std::to_string(remaining()) + " left");
    }
  }

 private:
  std::string_view bytes_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

void check_magic(ByteReader& in, const char (&magic)[4], const fs::path& path) {
  if (in.remaining() < 4 || std::memcmp(in.take(4).data(), magic, 4) != 0) {
    throw Error(Errc::BadMagic, path.string() + ": expected magic '" + std::string(magic, 4) + "'");
  }
  auto version = in.get_le<std::uint32_t>();
  if (version != kFormatVersion) {
    throw Error(Errc::BadMagic, path.string() + ": unsupported version " + std::to_string(version));
  }
}

}  // namespace

void validate(const EmbeddingMatrix& m) {
  if (m.rows() < 1 || m.cols() < 1) {
    throw Error(Errc::DimensionZero, "embedding matrix is " + std::to_string(m.rows()) + "x" +
                                         std::to_string(m.cols()));
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m.data(r, c))) {
        throw Error(Errc::NonFiniteEntry,
                    "entry (" + std::to_string(r) + ", " + std::to_string(c) + ") is not finite",
                    static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      }
    }
  }
}

EmbeddingMatrix read_embedding_matrix(const fs::path& path) {
  const std::string bytes = read_file(path);
  ByteReader in(bytes, path);
  check_magic(in, kEmbMagic, path);
  in.need(kEmbeddingHeaderBytes - 8);
  auto rows = in.get_le<std::uint64_t>();
  auto cols = in.get_le<std::uint64_t>();
  auto dtype = in.get_le<std::uint8_t>();
  in.take(7);
  if (rows == 0 || cols == 0) {
    throw Error(Errc::DimensionZero, path.string() + ": header declares " + std::to_string(rows) +
                                         "x" + std::to_string(cols));
  }
  if (dtype > 1) throw Error(Errc::BadMagic, path.string() + ": unknown dtype " + std::to_string(dtype));

  EmbeddingMatrix m;
  m.dtype = static_cast<StoredDtype>(dtype);
  const std::size_t width = m.dtype == StoredDtype::F32 ? 4 : 8;
  const unsigned __int128 need = static_cast<unsigned __int128>(rows) * cols * width;
  if (need > in.remaining()) {
    throw Error(Errc::TruncatedPayload, path.string() + ": payload has " +
                                            std::to_string(in.remaining()) + " bytes, header needs more");
  }
  m.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.data.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.data.cols(); ++c) {
      m.data(r, c) = m.dtype == StoredDtype::F32 ? in.get_f32() : in.get_f64();
    }
  }
  validate(m);
  return m;
}

void write_embedding_matrix(const EmbeddingMatrix& m, const fs::path& path) {
  validate(m);
  std::string out;
  const std::size_t width = m.dtype == StoredDtype::F32 ? 4 : 8;
  out.reserve(kEmbeddingHeaderBytes + static_cast<std::size_t>(m.data.size()) * width);
  out.append(kEmbMagic, 4);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(m.dtype));
  out.append(7, '\0');
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m.dtype == StoredDtype::F32) {
        put_f32(out, m.data(r, c));
      } else {
        put_f64(out, m.data(r, c));
      }
    }
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// ATT1

void validate(const AttentionRecord& rec) {
  const auto n = static_cast<Eigen::Index>(rec.tokens());
  if (rec.n_image == 0 || rec.n_question == 0) {
    throw Error(Errc::BadAttention, "record '" + rec.sample_id + "' needs N >= 1 and M >= 1");
  }
  if (rec.attn.rows() != n || rec.attn.cols() != n) {
    throw Error(Errc::BadAttention, "record '" + rec.sample_id + "' matrix is not (N+M)x(N+M)");
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const double w = rec.attn(r, c);
      if (!std::isfinite(w) || w < 0.0) {
        throw Error(Errc::BadAttention,
                    "record '" + rec.sample_id + "' has invalid weight at (" + std::to_string(r) +
                        ", " + std::to_string(c) + ")",
                    static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > kAttentionRowTolerance) {
      throw Error(Errc::BadAttention,
                  "record '" + rec.sample_id + "' row " + std::to_string(r) + " sums to " +
                      format_double(sum),
                  static_cast<std::size_t>(r));
    }
  }
}

std::vector<AttentionRecord> read_attention_records(const fs::path& path) {
  const std::string bytes = read_file(path);
  ByteReader in(bytes, path);
  check_magic(in, kAttMagic, path);
  const auto count = in.get_le<std::uint64_t>();
  std::vector<AttentionRecord> records;
  for (std::uint64_t i = 0; i < count; ++i) {
    AttentionRecord rec;
    rec.n_image = in.get_le<std::uint32_t>();
    rec.n_question = in.get_le<std::uint32_t>();
    const auto id_len = in.get_le<std::uint32_t>();
    rec.sample_id = std::string(in.take(id_len));
    const auto n = static_cast<Eigen::Index>(rec.tokens());
    in.need(static_cast<std::size_t>(n * n) * 4);
    rec.attn.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) rec.attn(r, c) = in.get_f32();
    }
    validate(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

void write_attention_records(const std::vector<AttentionRecord>& records, const fs::path& path) {
  std::string out(kAttMagic, 4);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint64_t>(out, records.size());
  for (const auto& rec : records) {
    validate(rec);
    put_le<std::uint32_t>(out, rec.n_image);
    put_le<std::uint32_t>(out, rec.n_question);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rec.sample_id.size()));
    out += rec.sample_id;
    for (Eigen::Index r = 0; r < rec.attn.rows(); ++r) {
      for (Eigen::Index c = 0; c < rec.attn.cols(); ++c) put_f32(out, rec.attn(r, c));
    }
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Manifest

std::string_view to_string(DatasetRole r) {
  switch (r) {
    case DatasetRole::IdTrain: return "ID-train";
    case DatasetRole::IdVal: return "ID-val";
    case DatasetRole::NearOod: return "near-OOD";
    case DatasetRole::FarOod: return "far-OOD";
  }
  return "?";
}

std::string_view to_string(ShiftType s) {
  switch (s) {
    case ShiftType::None: return "none";
    case ShiftType::Image: return "image";
    case ShiftType::Question: return "question";
    case ShiftType::Answer: return "answer";
    case ShiftType::Multimodal: return "multimodal";
    case ShiftType::Adversarial: return "adversarial";
    case ShiftType::Far: return "far";
  }
  return "?";
}

DatasetRole parse_role(std::string_view text) {
  for (auto r : {DatasetRole::IdTrain, DatasetRole::IdVal, DatasetRole::NearOod, DatasetRole::FarOod}) {
    if (to_string(r) == text) return r;
  }
  throw Error(Errc::UnknownRole, "unknown role '" + std::string(text) + "'");
}

ShiftType parse_shift_type(std::string_view text) {
  for (auto s : {ShiftType::None, ShiftType::Image, ShiftType::Question, ShiftType::Answer,
                 ShiftType::Multimodal, ShiftType::Adversarial, ShiftType::Far}) {
    if (to_string(s) == text) return s;
  }
  throw Error(Errc::UnknownShiftType, "unknown shift_type '" + std::string(text) + "'");
}

const fs::path* ManifestEntry::embedding_path(const ModalityTag& tag) const {
  for (const auto& [t, p] : embedding_paths) {
    if (t == tag) return &p;
  }
  return nullptr;
}

const ManifestEntry& DatasetManifest::id_train() const {
  for (const auto& e : entries) {
    if (e.role == DatasetRole::IdTrain) return e;
  }
  throw Error(Errc::MissingIdTrain, "manifest has no ID-train entry");
}

const ManifestEntry* DatasetManifest::find(std::string_view dataset_id) const {
  for (const auto& e : entries) {
    if (e.dataset_id == dataset_id) return &e;
  }
  return nullptr;
}

std::vector<const ManifestEntry*> DatasetManifest::test_entries() const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.role != DatasetRole::IdTrain) out.push_back(&e);
  }
  return out;
}

bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
  if (a.entries.size() != b.entries.size()) return false;
  if (std::set(a.joint_capable.begin(), a.joint_capable.end()) !=
      std::set(b.joint_capable.begin(), b.joint_capable.end())) {
    return false;
  }
  for (const auto& e : a.entries) {
    const auto* other = b.find(e.dataset_id);
    if (!other) return false;
    auto lhs = e.embedding_paths;
    auto rhs = other->embedding_paths;
    std::sort(lhs.begin(), lhs.end());
    std::sort(rhs.begin(), rhs.end());
    if (lhs != rhs || e.role != other->role || e.shift_type != other->shift_type ||
        e.attention_path != other->attention_path ||
        e.published_accuracy != other->published_accuracy) {
      return false;
    }
  }
  return true;
}

namespace {

std::string required_string(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw Error(Errc::BadManifest, where + ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace

DatasetManifest parse_manifest(std::string_view json_text, const fs::path& base_dir, bool check_paths) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(Errc::BadManifest, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("datasets") || !doc["datasets"].is_array()) {
    throw Error(Errc::BadManifest, "manifest needs a top-level \"datasets\" array");
  }

  DatasetManifest manifest;
  if (auto it = doc.find("joint_capable"); it != doc.end()) {
    if (!it->is_array()) throw Error(Errc::BadManifest, "\"joint_capable\" must be an array");
    for (const auto& m : *it) manifest.joint_capable.push_back(m.get<std::string>());
  }

  std::set<std::string> seen;
  std::size_t id_train_count = 0;
  for (const auto& item : doc["datasets"]) {
    if (!item.is_object()) throw Error(Errc::BadManifest, "dataset entries must be objects");
    ManifestEntry entry;
    entry.dataset_id = required_string(item, "dataset_id", "dataset entry");
    const std::string where = "dataset '" + entry.dataset_id + "'";
    if (!seen.insert(entry.dataset_id).second) {
      throw Error(Errc::DuplicateDatasetId, "dataset_id '" + entry.dataset_id + "' appears twice");
    }
    entry.role = parse_role(required_string(item, "role", where));
    if (entry.role == DatasetRole::IdTrain) ++id_train_count;

    if (auto it = item.find("shift_type"); it != item.end() && !it->is_null()) {
      entry.shift_type = parse_shift_type(it->get<std::string>());
    } else if (entry.role == DatasetRole::NearOod || entry.role == DatasetRole::FarOod) {
      throw Error(Errc::UnknownShiftType, where + " is OOD but declares no shift_type");
    }

    if (auto it = item.find("embedding_paths"); it != item.end()) {
      if (!it->is_object()) throw Error(Errc::BadManifest, where + ": embedding_paths must be an object");
      for (const auto& [key, value] : it->items()) {
        auto tag = ModalityTag::parse(key);
        if (tag.modality == Modality::VQ &&
            std::find(manifest.joint_capable.begin(), manifest.joint_capable.end(), tag.model_id) ==
                manifest.joint_capable.end()) {
          throw Error(Errc::BadTag, where + ": producer '" + tag.model_id +
                                        "' is not declared joint_capable but has a VQ embedding");
        }
        entry.embedding_paths.emplace_back(std::move(tag), resolve(base_dir, value.get<std::string>()));
      }
    }
    if (auto it = item.find("attention_path"); it != item.end() && !it->is_null()) {
      entry.attention_path = resolve(base_dir, it->get<std::string>());
    }
    if (auto it = item.find("published_accuracy"); it != item.end() && !it->is_null()) {
      double acc = it->get<double>();
      if (!(acc >= 0.0 && acc <= 100.0)) {
        throw Error(Errc::BadManifest, where + ": published_accuracy must lie in [0, 100]");
      }
      entry.published_accuracy = acc;
    }

    if (check_paths) {
      for (const auto& [tag, p] : entry.embedding_paths) {
        if (!fs::exists(p)) {
          throw Error(Errc::DanglingPath, where + ": " + tag.str() + " -> " + p.string() + " not found");
        }
      }
      if (entry.attention_path && !fs::exists(*entry.attention_path)) {
        throw Error(Errc::DanglingPath, where + ": attention -> " + entry.attention_path->string() +
                                            " not found");
      }
    }
    manifest.entries.push_back(std::move(entry));
  }
  if (id_train_count != 1) {
    throw Error(Errc::MissingIdTrain, "manifest must have exactly one ID-train entry, found " +
                                          std::to_string(id_train_count));
  }
  return manifest;
}

DatasetManifest load_manifest(const fs::path& path) {
  return parse_manifest(read_file(path), path.parent_path());
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) { return fs::absolute(p).lexically_relative(base).generic_string(); };
  json doc;
  doc["joint_capable"] = manifest.joint_capable;
  doc["datasets"] = json::array();
  for (const auto& e : manifest.entries) {
    json item;
    item["dataset_id"] = e.dataset_id;
    item["role"] = std::string(to_string(e.role));
    item["shift_type"] = std::string(to_string(e.shift_type));
    json paths = json::object();
    for (const auto& [tag, p] : e.embedding_paths) paths[tag.str()] = rel(p);
    item["embedding_paths"] = paths;
    if (e.attention_path) item["attention_path"] = rel(*e.attention_path);
    if (e.published_accuracy) item["published_accuracy"] = *e.published_accuracy;
    doc["datasets"].push_back(std::move(item));
  }
  write_file_atomic(path, doc.dump(2) + "\n");
}

EmbeddingMatrix load_embedding(const DatasetManifest& manifest, std::string_view dataset_id,
                               const ModalityTag& tag) {
  const auto* entry = manifest.find(dataset_id);
  const fs::path* p = entry ? entry->embedding_path(tag) : nullptr;
  if (!p) {
    throw Error(Errc::MissingEmbedding,
                "no embedding for tag " + tag.str() + " in dataset '" + std::string(dataset_id) + "'");
  }
  EmbeddingMatrix m = read_embedding_matrix(*p);
  m.tag = tag;
  m.dataset_id = std::string(dataset_id);
  m.split = entry->role == DatasetRole::IdTrain ? Split::Train : Split::Test;
  return m;
}

}  // namespace shiftkit
