#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "diotic/io.hpp"
#include "diotic/manifest.hpp"

using namespace diotic;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("diotic_io_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

FeatureTensor small() {
  FeatureTensor t(2, 3, 64.0, "uV", "unit-test");
  t.values = {1.5f, -2.0f, 0.0f, 3.25f, 1e-7f, -0.0f};
  t.attributes["channel"] = "Cz";
  return t;
}

}  // namespace

TEST(FeatureFile, RoundTripIsBitExact) {
  const auto dir = scratch("roundtrip");
  const FeatureTensor t = small();
  write_feature_file(dir / "a.ftf", t);
  const FeatureTensor back = read_feature_file(dir / "a.ftf");
  EXPECT_EQ(back, t);
  EXPECT_EQ(read_file_bytes(dir / "a.ftf"), encode_feature_tensor(back));
}

TEST(FeatureFile, LayoutIsLittleEndian) {
  FeatureTensor t(1, 1, 1.0);
  t.values = {1.0f};
  const std::string bytes = encode_feature_tensor(t);
  ASSERT_EQ(bytes.substr(0, 4), "FTF1");
  const std::string tail = bytes.substr(bytes.size() - 4);
  EXPECT_EQ(tail, std::string("\x00\x00\x80\x3f", 4));
}

TEST(FeatureFile, BadMagic) {
  std::string bytes = encode_feature_tensor(small());
  bytes.replace(0, 4, "XXXX");
  EXPECT_THROW(decode_feature_tensor(bytes), BadMagicError);
}

TEST(FeatureFile, TruncatedPayload) {
  std::string bytes = encode_feature_tensor(small());
  bytes.resize(bytes.size() - 4);  // 20 of the 24 required payload bytes
  try {
    decode_feature_tensor(bytes);
    FAIL();
  } catch (const TruncatedFileError& e) {
    EXPECT_NE(std::string(e.what()).find("24"), std::string::npos);
  }
}

TEST(FeatureFile, MalformedHeader) {
  const std::string header = "{\"dtype\":\"f32\",\"shape\":[2]}";
  std::string bytes = "FTF1";
  const auto n = static_cast<std::uint32_t>(header.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  bytes += header;
  EXPECT_THROW(decode_feature_tensor(bytes), MalformedHeaderError);
  std::string broken = "FTF1";
  broken += std::string("\x05\x00\x00\x00", 4) + "{nope";
  EXPECT_THROW(decode_feature_tensor(broken), MalformedHeaderError);
}

TEST(FeatureFile, ErrorKindsAreDistinct) {
  EXPECT_FALSE((std::is_base_of_v<BadMagicError, TruncatedFileError>));
  EXPECT_FALSE((std::is_base_of_v<TruncatedFileError, MalformedHeaderError>));
  EXPECT_FALSE((std::is_base_of_v<MalformedHeaderError, BadMagicError>));
}

TEST(FeatureFile, TrailingBytesRejected) {
  std::string bytes = encode_feature_tensor(small()) + "junk";
  EXPECT_THROW(decode_feature_tensor(bytes), FileFormatError);
}

TEST(Manifest, RoundTripAndStrictness) {
  const auto dir = scratch("manifest");
  RecordingManifest m;
  m.channel_names = default_channel_names();
  m.entries.push_back({"S01", "001", "eeg/a.ftf", {"speech/a1.ftf", "speech/a2.ftf"}, 2, 64.0});
  write_manifest(dir / "manifest.json", m);
  const RecordingManifest back = read_manifest(dir / "manifest.json");
  ASSERT_EQ(back.entries.size(), 1u);
  EXPECT_EQ(back.entries[0].attended_path(), "speech/a2.ftf");
  EXPECT_EQ(back.entries[0].unattended_path(), "speech/a1.ftf");
  EXPECT_EQ(back.channel_names.size(), 32u);

  nlohmann::json j = manifest_to_json(m);
  j["entries"][0]["attended_index"] = 3;
  EXPECT_THROW(manifest_from_json(j), ManifestError);
  j = manifest_to_json(m);
  j["entries"][0]["extra"] = 1;
  EXPECT_THROW(manifest_from_json(j), ManifestError);
  j = manifest_to_json(m);
  j["bogus"] = true;
  EXPECT_THROW(manifest_from_json(j), ManifestError);
  j = manifest_to_json(m);
  j["entries"].push_back(j["entries"][0]);
  EXPECT_THROW(manifest_from_json(j), ManifestError);
}

TEST(Manifest, ValidateReportsMissingAndCorruptFiles) {
  const auto dir = scratch("validate");
  RecordingManifest m;
  m.entries.push_back({"S01", "001", "eeg.ftf", {"s1.ftf", "s2.ftf"}, 1, 1.0});
  write_feature_file(dir / "eeg.ftf", small());
  write_feature_file(dir / "s1.ftf", small());
  std::ofstream(dir / "s2.ftf") << "garbage";
  const auto errors = validate_manifest_files(m, dir);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_NE(errors[0].find("S01/001"), std::string::npos);
}

TEST(Manifest, DatasetRootFallsBackToEnvironment) {
  EXPECT_EQ(resolve_dataset_root("/data/x"), std::filesystem::path("/data/x"));
  ::setenv("DIOTIC_DATASET_ROOT", "/env/root", 1);
  EXPECT_EQ(resolve_dataset_root(""), std::filesystem::path("/env/root"));
  ::unsetenv("DIOTIC_DATASET_ROOT");
  EXPECT_THROW(resolve_dataset_root(""), ManifestError);
}
