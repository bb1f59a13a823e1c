#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "camlab/data_io.hpp"
#include "camlab/explain.hpp"
#include "camlab/training.hpp"
#include "support/random_nets.hpp"

namespace fs = std::filesystem;
using camlab::IoError;
using camlab::IoErrorKind;
using camlab::Network;
using camlab::Tensor;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() /
                 ("camlab_io_test_" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("weights round trip is bit-identical") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Network net = testsupport::random_small_net(seed);
    net.seed = 99;
    net.learning_rate_used = 0.05f;
    net.epochs_trained = 7;
    const fs::path path = temp_dir() / "weights.camw";
    camlab::save_weights(net, path);
    Network loaded = camlab::load_weights(path);
    CHECK(loaded.seed == net.seed);
    CHECK(loaded.learning_rate_used == net.learning_rate_used);
    CHECK(loaded.epochs_trained == net.epochs_trained);
    CHECK(loaded.num_classes == net.num_classes);
    CHECK(loaded.input_shape == net.input_shape);
    REQUIRE(loaded.layers.size() == net.layers.size());
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      CHECK(loaded.layers[li].kind == net.layers[li].kind);
      CHECK(loaded.layers[li].weight.data == net.layers[li].weight.data);
      CHECK(loaded.layers[li].bias.data == net.layers[li].bias.data);
    }
    // re-serialization is byte-identical too
    CHECK(camlab::serialize_weights(loaded) == camlab::serialize_weights(net));
  }
}

TEST_CASE("weights loader reports each failure kind distinctly") {
  Network net = testsupport::random_small_net(4);
  auto buf = camlab::serialize_weights(net);

  SECTION("flipped payload byte fails the checksum") {
    auto bad = buf;
    bad[bad.size() / 2] ^= 0x01;
    try {
      camlab::deserialize_weights(bad);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.kind() == IoErrorKind::bad_crc);
    }
  }

  SECTION("bad magic") {
    auto bad = buf;
    bad[0] = 'X';
    try {
      camlab::deserialize_weights(bad);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.kind() == IoErrorKind::bad_magic);
    }
  }

  SECTION("unknown version") {
    auto bad = buf;
    bad[4] = 0xFE;  // version lives right after the magic
    // refresh the trailing checksum so only the version is wrong
    bad.resize(bad.size() - 4);
    camlab::detail::put_le<std::uint32_t>(
        bad, camlab::detail::crc32(bad.data(), bad.size()));
    try {
      camlab::deserialize_weights(bad);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.kind() == IoErrorKind::unknown_version);
    }
  }

  SECTION("truncated file is a format error") {
    auto bad = buf;
    bad.resize(8);
    try {
      camlab::deserialize_weights(bad);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.kind() == IoErrorKind::bad_format);
    }
  }

  SECTION("missing file") {
    try {
      camlab::load_weights("/nonexistent/weights.camw");
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.kind() == IoErrorKind::io_failure);
    }
  }
}

TEST_CASE("save_weights leaves no temp file behind") {
  Network net = testsupport::random_small_net(5);
  const fs::path dir = temp_dir();
  const fs::path path = dir / "weights.camw";
  camlab::save_weights(net, path);
  CHECK(fs::exists(path));
  CHECK_FALSE(fs::exists(dir / "weights.camw.tmp"));
}

TEST_CASE("PGM encoding golden bytes") {
  Tensor img({2, 3}, {0.0f, 0.5f, 1.0f, 0.25f, 2.0f, -1.0f});
  auto buf = camlab::encode_pgm(img);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(buf.size() == header.size() + 6);
  CHECK(std::string(buf.begin(), buf.begin() + header.size()) == header);
  const std::uint8_t* px = buf.data() + header.size();
  CHECK(px[0] == 0);
  CHECK(px[1] == 128);  // lround(127.5)
  CHECK(px[2] == 255);
  CHECK(px[3] == 64);   // lround(63.75)
  CHECK(px[4] == 255);  // clamped high
  CHECK(px[5] == 0);    // clamped low
}

TEST_CASE("all-zero map encodes to all-zero pixels") {
  auto buf = camlab::encode_pgm(Tensor::zeros({4, 4}));
  const std::string header = "P5\n4 4\n255\n";
  for (std::size_t i = header.size(); i < buf.size(); ++i) CHECK(buf[i] == 0);
}

TEST_CASE("PGM write/load round trip") {
  Tensor img = Tensor::zeros({5, 7});
  for (std::size_t i = 0; i < img.size(); ++i)
    img.data[i] = static_cast<float>(i) / 34.0f;
  const fs::path path = temp_dir() / "img.pgm";
  camlab::write_pgm(img, path);
  Tensor back = camlab::load_pgm(path);
  REQUIRE(back.shape == img.shape);
  // quantization to 8 bits: within half a level
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK_THAT(back.data[i],
               Catch::Matchers::WithinAbs(img.data[i], 0.5 / 255.0 + 1e-6));
}

TEST_CASE("export_heatmap writes map and overlay") {
  camlab::ExplanationMap map;
  map.upsampled = Tensor::zeros({4, 4});
  map.upsampled(1, 2) = 1.0f;
  map.raw = map.upsampled;
  Tensor original = Tensor::full({1, 4, 4}, 0.5f);
  const fs::path prefix = temp_dir() / "heat";
  camlab::export_heatmap(map, original, prefix);

  auto pgm = camlab::detail::read_all(prefix.string() + ".pgm");
  CHECK(std::string(pgm.begin(), pgm.begin() + 10) == "P5\n4 4\n255");

  auto ppm = camlab::detail::read_all(prefix.string() + ".ppm");
  const std::string header = "P6\n4 4\n255\n";
  REQUIRE(ppm.size() == header.size() + 48);
  const std::uint8_t* px = ppm.data() + header.size();
  const std::uint8_t green = static_cast<std::uint8_t>(
      std::lround(255.0f * 0.6f * 0.5f));
  // hot pixel (1,2): full red; elsewhere red is 0
  CHECK(px[(1 * 4 + 2) * 3] == 255);
  CHECK(px[0] == 0);
  CHECK(px[1] == green);
  CHECK(px[2] == green);
}

TEST_CASE("dataset save/load round trip preserves labels and masks") {
  auto data = camlab::generate_shapes_dataset(17, 4, 16);
  const fs::path dir = temp_dir() / "dataset";
  camlab::save_dataset(data, dir);
  auto back = camlab::load_dataset(dir);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].label == data[i].label);
    CHECK(back[i].image.shape == data[i].image.shape);
    REQUIRE(back[i].mask.has_value());
    CHECK(back[i].mask->data == data[i].mask->data);
    for (std::size_t j = 0; j < data[i].image.size(); ++j)
      CHECK_THAT(back[i].image.data[j],
                 Catch::Matchers::WithinAbs(data[i].image.data[j],
                                            0.5 / 255.0 + 1e-6));
  }
}

TEST_CASE("load_dataset rejects missing manifest and bad lines") {
  CHECK_THROWS_AS(camlab::load_dataset("/nonexistent/dataset"), IoError);
  const fs::path dir = temp_dir() / "broken";
  fs::create_directories(dir);
  std::ofstream(dir / "labels.txt") << "no_comma_here\n";
  try {
    camlab::load_dataset(dir);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind() == IoErrorKind::bad_format);
  }
}

TEST_CASE("report golden text") {
  camlab::EvalReport report;
  report.sample_count = 12;
  report.seed = 7;
  report.config.emplace_back("steps", "32");
  camlab::EvalReport::Entry entry;
  entry.method = "correlation";
  entry.metrics.emplace_back("deletion_auc", 0.25);
  entry.metrics.emplace_back("insertion_auc", 0.75);
  report.entries.push_back(entry);
  const std::string want =
      "camlab-report v1\n"
      "sample_count: 12\n"
      "seed: 7\n"
      "config:\n"
      "  steps: 32\n"
      "method correlation:\n"
      "  deletion_auc: 0.250000\n"
      "  insertion_auc: 0.750000\n";
  CHECK(camlab::format_report(report) == want);
}

TEST_CASE("report rejects non-finite metrics and empty sample count") {
  camlab::EvalReport report;
  report.sample_count = 0;
  CHECK_THROWS_AS(camlab::format_report(report), std::invalid_argument);
  report.sample_count = 1;
  report.entries.push_back({"m", {{"bad", std::nan("")}}});
  CHECK_THROWS_AS(camlab::format_report(report), std::invalid_argument);
}

TEST_CASE("report write/read round trip") {
  camlab::EvalReport report;
  report.sample_count = 3;
  report.seed = 11;
  report.config.emplace_back("paradigm", "complete");
  report.entries.push_back(
      {"contrastive", {{"pointing_game", 0.8}, {"masked_accuracy", 0.9}}});
  const fs::path path = temp_dir() / "report.txt";
  camlab::write_report(report, path);
  auto back = camlab::read_report(path);
  CHECK(back.sample_count == 3);
  CHECK(back.seed == 11);
  CHECK(back.config == report.config);
  REQUIRE(back.entries.size() == 1);
  CHECK(back.entries[0].method == "contrastive");
  CHECK(back.entries[0].metrics == report.entries[0].metrics);
}

TEST_CASE("parse_report rejects malformed input") {
  CHECK_THROWS_AS(camlab::parse_report("not a report\n"), IoError);
  CHECK_THROWS_AS(
      camlab::parse_report("camlab-report v1\n  orphan: 1.0\n"), IoError);
  CHECK_THROWS_AS(
      camlab::parse_report("camlab-report v1\ngarbage line\n"), IoError);
}

TEST_CASE("crc32 matches the standard check value") {
  const char* s = "123456789";
  CHECK(camlab::detail::crc32(reinterpret_cast<const std::uint8_t*>(s), 9) ==
        0xCBF43926u);
}
