#include <cstring>
#include <fstream>

#include <gtest/gtest.h>

#include "shiftkit/error.hpp"
#include "shiftkit/ingest.hpp"
#include "shiftkit/report.hpp"
#include "test_util.hpp"

using namespace shiftkit;
using testutil::Gen;
using testutil::TempDir;

namespace {

// Independent little-endian encoder for building files by hand.
void le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void f32(std::string& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  le(out, u, 4);
}

std::string emb_header(std::uint64_t rows, std::uint64_t cols, std::uint8_t dtype) {
  std::string h = "EMB1";
  le(h, 1, 4);
  le(h, rows, 8);
  le(h, cols, 8);
  le(h, dtype, 1);
  h.append(7, '\0');
  return h;
}

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

AttentionRecord uniform_record(std::uint32_t n, std::uint32_t m, const std::string& id) {
  AttentionRecord r;
  r.n_image = n;
  r.n_question = m;
  r.sample_id = id;
  const auto t = static_cast<Eigen::Index>(n + m);
  r.attn = RowMatrix::Constant(t, t, 1.0 / static_cast<double>(t));
  return r;
}

AttentionRecord random_record(Gen& g, const std::string& id) {
  AttentionRecord r;
  r.n_image = static_cast<std::uint32_t>(1 + g.index(5));
  r.n_question = static_cast<std::uint32_t>(1 + g.index(4));
  r.sample_id = id;
  const auto t = static_cast<Eigen::Index>(r.tokens());
  r.attn.resize(t, t);
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j < t; ++j) r.attn(i, j) = static_cast<float>(g.uniform(0.01, 1.0));
    r.attn.row(i) /= r.attn.row(i).sum();
    for (Eigen::Index j = 0; j < t; ++j) r.attn(i, j) = static_cast<float>(r.attn(i, j));
  }
  return r;
}

}  // namespace

TEST(ModalityTag, ParsesAndPrints) {
  const auto t = ModalityTag::parse("VQ:pali:FT(vanilla)");
  EXPECT_EQ(t.modality, Modality::VQ);
  EXPECT_EQ(t.model_id, "pali");
  EXPECT_EQ(t.ft_method, "vanilla");
  EXPECT_EQ(t.state_label(), "vanilla");
  EXPECT_EQ(t.str(), "VQ:pali:FT(vanilla)");
  const auto p = ModalityTag::parse("V:vit:PT");
  EXPECT_TRUE(p.pretrained());
  EXPECT_EQ(p.state_label(), "PT");
  EXPECT_EQ(p.str(), "V:vit:PT");
}

TEST(ModalityTag, RejectsMalformed) {
  EXPECT_ERRC(ModalityTag::parse("VQ:pali"), Errc::BadTag);
  EXPECT_ERRC(ModalityTag::parse("X:pali:PT"), Errc::BadTag);
  EXPECT_ERRC(ModalityTag::parse("V::PT"), Errc::BadTag);
  EXPECT_ERRC(ModalityTag::parse("V:m:FT()"), Errc::BadTag);
  EXPECT_ERRC(ModalityTag::parse("V:m:trained"), Errc::BadTag);
}

TEST(Emb1, ReadsHandBuiltFile) {
  TempDir dir;
  std::string bytes = emb_header(2, 3, 0);
  for (int i = 0; i < 6; ++i) f32(bytes, 0.5f * static_cast<float>(i) - 1.0f);
  ASSERT_EQ(bytes.size(), 32u + 24u);
  dump(dir / "a.emb", bytes);
  const auto m = read_embedding_matrix(dir / "a.emb");
  ASSERT_EQ(m.rows(), 2);
  ASSERT_EQ(m.cols(), 3);
  EXPECT_EQ(m.dtype, StoredDtype::F32);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(m.data(i / 3, i % 3), 0.5 * i - 1.0);
}

TEST(Emb1, WriterProducesDocumentedLayout) {
  TempDir dir;
  EmbeddingMatrix m;
  m.data.resize(2, 3);
  m.data << 1, 2, 3, 4, 5, 6;
  m.dtype = StoredDtype::F32;
  write_embedding_matrix(m, dir / "w.emb");
  std::string expected = emb_header(2, 3, 0);
  for (int i = 1; i <= 6; ++i) f32(expected, static_cast<float>(i));
  EXPECT_EQ(read_file(dir / "w.emb"), expected);
}

TEST(Emb1, OneByteShortIsTruncated) {
  TempDir dir;
  std::string bytes = emb_header(2, 3, 0);
  for (int i = 0; i < 6; ++i) f32(bytes, 1.0f);
  bytes.pop_back();
  dump(dir / "t.emb", bytes);
  EXPECT_ERRC(read_embedding_matrix(dir / "t.emb"), Errc::TruncatedPayload);
  dump(dir / "h.emb", emb_header(2, 3, 0).substr(0, 20));
  EXPECT_ERRC(read_embedding_matrix(dir / "h.emb"), Errc::TruncatedPayload);
}

TEST(Emb1, BadMagicAndZeroDimensions) {
  TempDir dir;
  std::string bytes = emb_header(1, 1, 0);
  f32(bytes, 1.0f);
  bytes[3] = '2';
  dump(dir / "m.emb", bytes);
  EXPECT_ERRC(read_embedding_matrix(dir / "m.emb"), Errc::BadMagic);
  dump(dir / "z.emb", emb_header(0, 4, 0));
  EXPECT_ERRC(read_embedding_matrix(dir / "z.emb"), Errc::DimensionZero);

  EmbeddingMatrix empty;
  empty.data.resize(0, 3);
  EXPECT_ERRC(write_embedding_matrix(empty, dir / "e.emb"), Errc::DimensionZero);
  EXPECT_FALSE(std::filesystem::exists(dir / "e.emb"));
}

TEST(Emb1, NanPayloadReportsLocation) {
  TempDir dir;
  std::string bytes = emb_header(3, 4, 1);
  for (int i = 0; i < 12; ++i) {
    double v = i == 6 ? std::nan("") : static_cast<double>(i);
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    le(bytes, u, 8);
  }
  dump(dir / "n.emb", bytes);
  try {
    read_embedding_matrix(dir / "n.emb");
    FAIL() << "expected NonFiniteEntry";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFiniteEntry);
    EXPECT_EQ(e.row(), 1u);
    EXPECT_EQ(e.col(), 2u);
  }
}

TEST(Emb1, RoundTripIsIdentityAtStoredPrecision) {
  TempDir dir;
  Gen g(11);
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingMatrix m;
    m.data = testutil::normal_matrix(g, 1 + static_cast<Eigen::Index>(g.index(30)),
                                     1 + static_cast<Eigen::Index>(g.index(20)), 3.0);
    m.dtype = trial % 2 ? StoredDtype::F64 : StoredDtype::F32;
    if (m.dtype == StoredDtype::F32) m.data = m.data.cast<float>().cast<double>();
    write_embedding_matrix(m, dir / "r.emb");
    const auto back = read_embedding_matrix(dir / "r.emb");
    EXPECT_EQ(back.dtype, m.dtype);
    ASSERT_EQ(back.data.rows(), m.data.rows());
    ASSERT_EQ(back.data.cols(), m.data.cols());
    EXPECT_TRUE((back.data.array() == m.data.array()).all());
  }
}

TEST(Emb1, FileSizeFollowsFormat) {
  TempDir dir;
  Gen g(3);
  EmbeddingMatrix m;
  m.data = testutil::normal_matrix(g, 1000, 768);
  write_embedding_matrix(m, dir / "big.emb");
  EXPECT_EQ(std::filesystem::file_size(dir / "big.emb"), 32u + 1000u * 768u * 4u);
}

TEST(Att1, RoundTripAndLayout) {
  TempDir dir;
  Gen g(5);
  std::vector<AttentionRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(random_record(g, "s" + std::to_string(i)));
  write_attention_records(recs, dir / "a.att");
  const auto back = read_attention_records(dir / "a.att");
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].sample_id, recs[i].sample_id);
    EXPECT_EQ(back[i].n_image, recs[i].n_image);
    EXPECT_EQ(back[i].n_question, recs[i].n_question);
    EXPECT_TRUE((back[i].attn.array() == recs[i].attn.array()).all());
  }

  std::string expected = "ATT1";
  le(expected, 1, 4);
  le(expected, 1, 8);
  le(expected, 1, 4);
  le(expected, 1, 4);
  le(expected, 2, 4);
  expected += "ab";
  for (int i = 0; i < 4; ++i) f32(expected, 0.5f);
  write_attention_records({uniform_record(1, 1, "ab")}, dir / "b.att");
  EXPECT_EQ(read_file(dir / "b.att"), expected);
}

TEST(Att1, RejectsRowsOffByMoreThanTolerance) {
  auto r = uniform_record(2, 2, "x");
  r.attn(1, 0) += 2e-4;
  EXPECT_ERRC(validate(r), Errc::BadAttention);
  auto ok = uniform_record(2, 2, "y");
  ok.attn(1, 0) += 5e-5;
  EXPECT_NO_THROW(validate(ok));
  EXPECT_EQ(ok.attn(1, 0), 0.25 + 5e-5);  // never renormalized

  auto neg = uniform_record(2, 1, "n");
  neg.attn(0, 0) = -0.1;
  neg.attn(0, 1) += 0.1 + 1.0 / 3.0;
  neg.attn(0, 2) = 1.0 - neg.attn(0, 0) - neg.attn(0, 1);
  EXPECT_ERRC(validate(neg), Errc::BadAttention);

  auto empty_q = uniform_record(3, 1, "q");
  empty_q.n_question = 0;
  EXPECT_ERRC(validate(empty_q), Errc::BadAttention);
}

TEST(Att1, TruncatedAndBadMagic) {
  TempDir dir;
  write_attention_records({uniform_record(2, 2, "x")}, dir / "a.att");
  auto bytes = read_file(dir / "a.att");
  dump(dir / "t.att", bytes.substr(0, bytes.size() - 3));
  EXPECT_ERRC(read_attention_records(dir / "t.att"), Errc::TruncatedPayload);
  bytes[0] = 'B';
  dump(dir / "m.att", bytes);
  EXPECT_ERRC(read_attention_records(dir / "m.att"), Errc::BadMagic);
}

namespace {

const char* kDatasetTable[][3] = {
    {"VQAv2-val", "ID-val", ""},           {"IV-VQA", "near-OOD", "image"},
    {"CV-VQA", "near-OOD", "image"},       {"VQA-Rep", "near-OOD", "question"},
    {"VQA-CP", "near-OOD", "answer"},      {"VQA-CE", "near-OOD", "multimodal"},
    {"AdVQA", "near-OOD", "adversarial"},  {"TextVQA", "far-OOD", "far"},
    {"VizWiz", "far-OOD", "far"},          {"OK-VQA", "far-OOD", "far"},
};

std::string manifest_text(bool with_files, const std::string& extra_entry = "") {
  std::string s = R"({"joint_capable": ["pali"], "datasets": [)";
  s += R"({"dataset_id": "VQAv2-train", "role": "ID-train")";
  if (with_files) s += R"(, "embedding_paths": {"VQ:pali:PT": "train.emb"})";
  s += "}";
  for (auto& row : kDatasetTable) {
    s += std::string(R"(, {"dataset_id": ")") + row[0] + R"(", "role": ")" + row[1] + "\"";
    if (row[2][0]) s += std::string(R"(, "shift_type": ")") + row[2] + "\"";
    s += "}";
  }
  s += extra_entry + "]}";
  return s;
}

}  // namespace

TEST(Manifest, DatasetTableLoads) {
  TempDir dir;
  EmbeddingMatrix m;
  m.data = RowMatrix::Ones(3, 2);
  write_embedding_matrix(m, dir / "train.emb");
  write_file_atomic(dir / "m.json", manifest_text(true));
  const auto man = load_manifest(dir / "m.json");
  EXPECT_EQ(man.entries.size(), 11u);
  EXPECT_EQ(man.id_train().dataset_id, "VQAv2-train");
  EXPECT_EQ(man.test_entries().size(), 10u);
  std::size_t ood = 0;
  for (const auto& e : man.entries) ood += e.role == DatasetRole::NearOod || e.role == DatasetRole::FarOod;
  EXPECT_EQ(ood, 9u);
  EXPECT_EQ(man.find("VQA-CE")->shift_type, ShiftType::Multimodal);
  EXPECT_EQ(*man.id_train().embedding_path(ModalityTag::parse("VQ:pali:PT")), dir / "train.emb");
}

TEST(Manifest, ValidationErrors) {
  const std::filesystem::path base = "/nonexistent";
  EXPECT_ERRC(parse_manifest(manifest_text(false, R"(, {"dataset_id": "B", "role": "ID-train"})"), base, false),
              Errc::MissingIdTrain);
  EXPECT_ERRC(parse_manifest(R"({"datasets": [{"dataset_id": "a", "role": "ID-val"}]})", base, false),
              Errc::MissingIdTrain);
  EXPECT_ERRC(parse_manifest(manifest_text(false, R"(, {"dataset_id": "IV-VQA", "role": "ID-val"})"), base, false),
              Errc::DuplicateDatasetId);
  EXPECT_ERRC(parse_manifest(manifest_text(false, R"(, {"dataset_id": "X", "role": "far-OOD"})"), base, false),
              Errc::UnknownShiftType);
  EXPECT_ERRC(
      parse_manifest(manifest_text(false, R"(, {"dataset_id": "X", "role": "far-OOD", "shift_type": "weird"})"), base,
                     false),
      Errc::UnknownShiftType);
  EXPECT_ERRC(parse_manifest(manifest_text(false, R"(, {"dataset_id": "X", "role": "test"})"), base, false),
              Errc::UnknownRole);
  EXPECT_ERRC(parse_manifest(manifest_text(false, R"(, {"dataset_id": "X", "role": "ID-val",
      "embedding_paths": {"VQ:clip:PT": "x.emb"}})"),
                             base, false),
              Errc::BadTag);
  EXPECT_ERRC(parse_manifest(manifest_text(false, R"(, {"dataset_id": "X", "role": "ID-val",
      "published_accuracy": 101})"),
                             base, false),
              Errc::BadManifest);
  EXPECT_ERRC(parse_manifest("{not json", base, false), Errc::BadManifest);
}

TEST(Manifest, DanglingPathNamesDataset) {
  TempDir dir;
  const std::string extra = R"(, {"dataset_id": "Ghost", "role": "ID-val", "embedding_paths": {"V:pali:PT": "no.emb"}})";
  try {
    parse_manifest(manifest_text(false, extra), dir.path(), true);
    FAIL() << "expected DanglingPath";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DanglingPath);
    EXPECT_NE(std::string(e.what()).find("Ghost"), std::string::npos);
  }
}

TEST(Manifest, OrderIndependentAndSaveRoundTrip) {
  TempDir dir;
  Gen g(21);
  for (int trial = 0; trial < 10; ++trial) {
    DatasetManifest m;
    m.joint_capable = {"pali"};
    const std::size_t n = 2 + g.index(8);
    const std::size_t train_at = g.index(n);
    for (std::size_t i = 0; i < n; ++i) {
      ManifestEntry e;
      e.dataset_id = "d" + std::to_string(i);
      e.role = i == train_at ? DatasetRole::IdTrain : (g.index(2) ? DatasetRole::NearOod : DatasetRole::FarOod);
      e.shift_type = e.role == DatasetRole::IdTrain ? ShiftType::None : static_cast<ShiftType>(1 + g.index(6));
      const auto p = dir.path() / ("e" + std::to_string(i) + ".emb");
      write_file_atomic(p, "");
      e.embedding_paths.emplace_back(ModalityTag::parse(g.index(2) ? "VQ:pali:PT" : "Q:bert:FT(spd)"), p);
      if (g.index(2)) e.published_accuracy = std::round(g.uniform(0, 100) * 100) / 100;
      m.entries.push_back(e);
    }
    save_manifest(m, dir / "m.json");
    const auto back = load_manifest(dir / "m.json");
    EXPECT_EQ(back, m);

    DatasetManifest shuffled = m;
    for (std::size_t i = shuffled.entries.size(); i > 1; --i) std::swap(shuffled.entries[i - 1], shuffled.entries[g.index(i)]);
    EXPECT_EQ(shuffled, m);
    shuffled.entries[0].dataset_id += "x";
    EXPECT_FALSE(shuffled == m);
  }
}

TEST(Manifest, LoadEmbeddingFillsMetadataAndNamesMissingCell) {
  TempDir dir;
  EmbeddingMatrix m;
  m.data = RowMatrix::Ones(3, 2);
  write_embedding_matrix(m, dir / "train.emb");
  write_file_atomic(dir / "m.json", manifest_text(true));
  const auto man = load_manifest(dir / "m.json");
  const auto e = load_embedding(man, "VQAv2-train", ModalityTag::parse("VQ:pali:PT"));
  EXPECT_EQ(e.dataset_id, "VQAv2-train");
  EXPECT_EQ(e.split, Split::Train);
  EXPECT_EQ(e.tag.str(), "VQ:pali:PT");
  try {
    load_embedding(man, "VizWiz", ModalityTag::parse("Q:pali:PT"));
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::MissingEmbedding);
    const std::string msg = err.what();
    EXPECT_NE(msg.find("VizWiz"), std::string::npos);
    EXPECT_NE(msg.find("Q:pali:PT"), std::string::npos);
  }
}
