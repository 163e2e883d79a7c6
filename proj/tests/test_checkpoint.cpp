#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "wmc/checkpoint.hpp"

using namespace wmc;

namespace {

Model small_model(WlcVariant variant = WlcVariant::mlp) {
  LocationVocabulary vocab({152, 217, 311});
  ModelSpec s = base_spec(Task::multiclass, 3, vocab);
  s.image_shape = {1, 8, 8};
  s.wlc_variant = variant;
  return Model{build_wmc(s, vocab, 5), {"D", "P", "S"}, vocab};
}

NetInputs<float> inputs(std::size_t B) {
  NetInputs<float> in;
  in.images = nn::Tensor<float>({B, 1, 8, 8});
  for (std::size_t i = 0; i < in.images.size(); ++i) in.images[i] = static_cast<float>((i * 37) % 101) / 101.0f;
  in.locations = nn::Tensor<float>({B, 4});
  for (std::size_t i = 0; i < B; ++i) in.locations.at(i, i % 4) = 1.0f;
  return in;
}

ErrorCode error_of(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::state;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  for (auto variant : {WlcVariant::mlp, WlcVariant::lstm}) {
    const auto model = small_model(variant);
    const auto back = deserialize_checkpoint(serialize_checkpoint(model));
    EXPECT_EQ(back.spec(), model.spec());
    EXPECT_EQ(back.class_set, model.class_set);
    EXPECT_EQ(back.vocab.ordered_codes(), model.vocab.ordered_codes());
    EXPECT_TRUE(back.network.params().same_values(model.network.params()));
    EXPECT_EQ(back.network.predict(inputs(6)), model.network.predict(inputs(6)));
  }
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "wmc_test_checkpoint.wmck";
  const auto model = small_model();
  save_checkpoint(path, model);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.network.predict(inputs(3)), model.network.predict(inputs(3)));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), Error);
}

TEST(Checkpoint, AlteredMagicIsVersionError) {
  auto bytes = serialize_checkpoint(small_model());
  bytes[0] = 'X';
  EXPECT_EQ(error_of(bytes), ErrorCode::version);
  EXPECT_EQ(error_of({}), ErrorCode::version);
}

TEST(Checkpoint, UnknownFormatVersionRejected) {
  auto bytes = serialize_checkpoint(small_model());
  bytes[4] = 2;
  EXPECT_EQ(error_of(bytes), ErrorCode::version);
}

TEST(Checkpoint, TruncatedOrPaddedFilesRejected) {
  const auto bytes = serialize_checkpoint(small_model());
  for (std::size_t cut : {std::size_t{6}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_EQ(error_of(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<long>(cut))),
              ErrorCode::parse)
        << cut;
  }
  auto padded = bytes;
  padded.push_back(0);
  EXPECT_EQ(error_of(padded), ErrorCode::parse);
}

TEST(Checkpoint, VocabularyMismatchAtInference) {
  const auto model = small_model();
  EXPECT_NO_THROW(model.check_vocab(LocationVocabulary({152, 217, 311})));
  try {
    model.check_vocab(LocationVocabulary({152, 217, 311, 320}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::fingerprint);
  }
}
