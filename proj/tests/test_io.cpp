#include "doctest.h"

#include <cmath>
#include <cstring>
#include <limits>

#include "json.hpp"
#include "lucyd/io.hpp"
#include "lucyd/metrics.hpp"
#include "support.hpp"

using namespace lucyd;
using lucyd::test::random_volume;
using lucyd::test::TempDir;
using nlohmann::json;

namespace {

std::uint32_t u32_at(const std::string& bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  }
  return v;
}

json header_of(const std::string& bytes) {
  return json::parse(bytes.substr(8, u32_at(bytes, 4)));
}

std::string payload_of(const std::string& bytes) {
  return bytes.substr(8 + u32_at(bytes, 4));
}

/// Independent container writer used to build malformed files.
std::string build(const char* magic, const json& header, const std::string& payload) {
  std::string text = header.dump();
  while ((8 + text.size()) % 16 != 0) text.push_back(' ');
  std::string out(magic, 4);
  const auto n = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  return out + text + payload;
}

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.params = init_params(3);
  ck.config.seed = 9;
  ck.config.epochs = 4;
  ck.epoch = 2;
  ck.rng_tag = rng_tag(9, 2);
  ck.adam = zero_adam_state(ck.params);
  ck.adam.step = 7;
  ck.adam.m[0].weights[0] = 0.25f;
  ck.adam.v[1].bias[0] = 0.5f;
  ck.history = {EpochRecord{1, 0.5, std::numeric_limits<double>::quiet_NaN(), 12.0},
                EpochRecord{2, 0.4, 0.7, 13.0}};
  return ck;
}

}  // namespace

TEST_CASE("volume files round-trip and follow the container layout") {
  const Volume v = random_volume(Shape{1, 3, 4, 5}, 1, 0.0, 255.0);
  const std::string bytes = encode_volume(v);
  CHECK(bytes.substr(0, 4) == "LVOL");
  const std::size_t header = u32_at(bytes, 4);
  CHECK((8 + header) % 16 == 0);
  CHECK(bytes.size() == 8 + header + 4 * v.size());
  const json h = header_of(bytes);
  CHECK(h.at("shape") == json::array({1, 3, 4, 5}));
  CHECK(h.at("dtype") == "f32le");
  const std::string payload = payload_of(bytes);
  float first = 0.0f;
  std::memcpy(&first, payload.data(), 4);
  CHECK(first == v[0]);
  CHECK(decode_volume(bytes) == v);

  TempDir dir("io_volume");
  save_volume(dir / "v.lvol", v);
  CHECK(load_volume(dir / "v.lvol") == v);
  CHECK_FALSE(std::filesystem::exists(dir / "v.lvol.tmp"));
}

TEST_CASE("malformed volume files are data errors") {
  const Volume v = random_volume(Shape{1, 2, 2, 2}, 2);
  const std::string bytes = encode_volume(v);
  CHECK_THROWS_AS(decode_volume("LVO"), Error);
  CHECK_THROWS_AS(decode_volume("XXXX" + bytes.substr(4)), Error);
  CHECK_THROWS_AS(decode_volume(bytes.substr(0, bytes.size() - 4)), Error);
  json h = header_of(bytes);
  h["shape"] = json::array({1, 2, 2});
  CHECK_THROWS_AS(decode_volume(build("LVOL", h, payload_of(bytes))), Error);
  h = header_of(bytes);
  h["version"] = 99;
  CHECK_THROWS_AS(decode_volume(build("LVOL", h, payload_of(bytes))), Error);
  try {
    load_volume("/nonexistent/lucyd/file.lvol");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
}

TEST_CASE("checkpoints round-trip parameters, optimizer state and history") {
  const Checkpoint ck = sample_checkpoint();
  const std::string bytes = encode_checkpoint(ck);
  CHECK(bytes.substr(0, 4) == "LCKP");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.params == ck.params);
  CHECK(back.adam == ck.adam);
  CHECK(back.config == ck.config);
  CHECK(back.epoch == 2);
  CHECK(back.rng_tag == ck.rng_tag);
  REQUIRE(back.history.size() == 2);
  CHECK(std::isnan(back.history[0].val_ssim));
  CHECK(back.history[1].val_ssim == 0.7);
  CHECK(encode_checkpoint(back) == bytes);

  const json h = header_of(bytes);
  CHECK(h.at("param_count") == param_count(ck.params));
  std::size_t total = 0;
  for (const json& t : h.at("tensors")) total += t.at("byte_len").get<std::size_t>();
  CHECK(total == payload_of(bytes).size());
  CHECK(total == 3 * 4 * param_count(ck.params));
}

TEST_CASE("corrupt checkpoints are data errors") {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  const std::string payload = payload_of(bytes);
  const json h = header_of(bytes);

  SUBCASE("missing tensor") {
    json m = h;
    m["tensors"].erase(m["tensors"].begin());
    CHECK_THROWS_AS(decode_checkpoint(build("LCKP", m, payload)), Error);
  }
  SUBCASE("overlapping tensors") {
    json m = h;
    m["tensors"][1]["byte_offset"] = 0;
    m["tensors"][1]["shape"] = m["tensors"][0]["shape"];
    m["tensors"][1]["byte_len"] = m["tensors"][0]["byte_len"];
    CHECK_THROWS_AS(decode_checkpoint(build("LCKP", m, payload)), Error);
  }
  SUBCASE("tensor outside the payload") {
    json m = h;
    m["tensors"][0]["byte_offset"] = payload.size();
    CHECK_THROWS_AS(decode_checkpoint(build("LCKP", m, payload)), Error);
  }
  SUBCASE("length disagrees with shape") {
    json m = h;
    m["tensors"][0]["byte_len"] = 4;
    CHECK_THROWS_AS(decode_checkpoint(build("LCKP", m, payload)), Error);
  }
  SUBCASE("unexpected tensor") {
    json m = h;
    m["tensors"].push_back({{"name", "extra"}, {"shape", {1}}, {"byte_offset", 0}, {"byte_len", 4}});
    CHECK_THROWS_AS(decode_checkpoint(build("LCKP", m, payload + std::string(4, '\0'))), Error);
  }
  SUBCASE("truncated") {
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), Error);
  }
  SUBCASE("volume magic") {
    CHECK_THROWS_AS(decode_checkpoint(encode_volume(Volume(Shape{1, 1, 1, 1}))), Error);
  }
}

TEST_CASE("manifest round trip") {
  Manifest m;
  m.regime = "custom";
  m.seed = 42;
  m.truths.push_back(TruthRecord{"t.lvol", "spheres", 8, 9, 10, 3, 5});
  m.pairs.push_back(PairRecord{"t.lvol", "d.lvol", DegradationSpec{1.5, 3.0, 20.0, 7}, "train"});
  m.pairs.push_back(PairRecord{"t.lvol", "e.lvol", DegradationSpec{0.5, std::nullopt, 50.0, 8}, "val"});
  const std::string text = encode_manifest(m);
  const Manifest back = decode_manifest(text);
  CHECK(back.regime == "custom");
  CHECK(back.seed == 42);
  REQUIRE(back.truths.size() == 1);
  CHECK(back.truths[0].h == 9);
  CHECK(back.truths[0].kind == "spheres");
  REQUIRE(back.pairs.size() == 2);
  CHECK(back.pairs[0].degradation == m.pairs[0].degradation);
  CHECK(back.pairs[1].degradation == m.pairs[1].degradation);
  CHECK(back.pairs[1].split == "val");
  CHECK(encode_manifest(back) == text);

  CHECK_THROWS_AS(decode_manifest("{"), Error);
  CHECK_THROWS_AS(decode_manifest("{\"version\": 1}"), Error);

  TempDir dir("io_manifest");
  CHECK(load_or_new_manifest(dir / "none.json").pairs.empty());
  save_manifest(dir / "m.json", m);
  CHECK(encode_manifest(load_manifest(dir / "m.json")) == text);
}

TEST_CASE("written datasets load back as training and evaluation sets") {
  TempDir dir("io_dataset");
  const Dataset ds = build_dataset(Regime::test_grid, 1, 16, 16, 16, 3);
  const auto manifest = write_dataset(ds, dir.path());
  const Manifest m = load_manifest(manifest);
  CHECK(m.regime == "test-grid");
  CHECK(m.pairs.size() == ds.entries.size());
  const EvalSet set = load_eval_set(manifest, "test");
  REQUIRE(set.degraded.size() == ds.entries.size());
  for (std::size_t i = 0; i < set.degraded.size(); ++i) {
    CHECK(set.degraded[i] == ds.degraded[i]);
    CHECK(set.truths[i] == ds.truths[ds.entries[i].phantom_index]);
  }
  CHECK(load_training_data(manifest).train.empty());
}

TEST_CASE("max projection and PGM encoding") {
  SUBCASE("brute-force maximum") {
    const Volume v = random_volume(Shape{1, 4, 5, 6}, 3);
    const Image lat = max_projection(v, ProjectionAxis::lateral);
    const Image ax = max_projection(v, ProjectionAxis::axial);
    CHECK(lat.width == 6);
    CHECK(lat.height == 5);
    CHECK(ax.height == 4);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) {
        float m = -1e9f;
        for (int z = 0; z < 4; ++z) m = std::max(m, v.at(0, z, y, x));
        CHECK(lat.values[y * 6 + x] == m);
      }
    for (int z = 0; z < 4; ++z)
      for (int x = 0; x < 6; ++x) {
        float m = -1e9f;
        for (int y = 0; y < 5; ++y) m = std::max(m, v.at(0, z, y, x));
        CHECK(ax.values[z * 6 + x] == m);
      }
  }
  SUBCASE("constant image maps to zero") {
    const std::string pgm = encode_pgm(max_projection(Volume(Shape{1, 3, 4, 5}, 7.0f), ProjectionAxis::lateral));
    const std::string head = "P5\n5 4\n65535\n";
    REQUIRE(pgm.size() == head.size() + 2 * 20);
    CHECK(pgm.substr(0, head.size()) == head);
    for (std::size_t i = head.size(); i < pgm.size(); ++i) CHECK(pgm[i] == '\0');
  }
  SUBCASE("single bright voxel") {
    Volume v(Shape{1, 3, 4, 5}, 0.0f);
    v.at(0, 1, 2, 3) = 9.0f;
    const std::string pgm = encode_pgm(max_projection(v, ProjectionAxis::axial));
    const std::string head = "P5\n5 3\n65535\n";
    REQUIRE(pgm.size() == head.size() + 2 * 15);
    for (int i = 0; i < 15; ++i) {
      const auto hi = static_cast<unsigned char>(pgm[head.size() + 2 * i]);
      const auto lo = static_cast<unsigned char>(pgm[head.size() + 2 * i + 1]);
      CHECK((hi << 8 | lo) == (i == 1 * 5 + 3 ? 65535 : 0));
    }
  }
  CHECK_THROWS_AS(projection_axis_from_string("sideways"), Error);
  CHECK_THROWS_AS(max_projection(Volume(Shape{2, 2, 2, 2}), ProjectionAxis::lateral), Error);
}

TEST_CASE("report formatting") {
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(1.0 / 3.0) == "0.333333");
  CHECK(format_number(123456789.0) == "1.23457e+08");
  CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");

  CellResult c;
  c.cell = DegradationSpec{0.5, std::nullopt, 20.0, 0};
  c.volumes = 2;
  c.scores[0] = Scores{0.25, 10.0};
  c.scores[1] = Scores{0.5, 11.0};
  c.scores[2] = Scores{0.75, std::numeric_limits<double>::infinity()};
  c.scores[3] = Scores{0.875, 13.5};
  const std::vector<CellResult> cells{c};

  CHECK(format_report_wide(cells, false) ==
        "sigma_b,sigma_b_axial,sigma_n,volumes,input_ssim,input_psnr,wiener_ssim,"
        "wiener_psnr,rl_ssim,rl_psnr\n"
        "0.5,0.5,20,2,0.25,10,0.5,11,0.75,inf\n");
  const std::string wide = format_report_wide(cells, true);
  CHECK(wide.find("lucyd_ssim,lucyd_psnr\n") != std::string::npos);
  CHECK(wide.find(",0.875,13.5\n") != std::string::npos);
  CHECK(format_report_long(cells, true) ==
        "method,sigma_b,sigma_b_axial,sigma_n,volumes,ssim,psnr\n"
        "input,0.5,0.5,20,2,0.25,10\n"
        "wiener,0.5,0.5,20,2,0.5,11\n"
        "rl,0.5,0.5,20,2,0.75,inf\n"
        "lucyd,0.5,0.5,20,2,0.875,13.5\n");
}

TEST_CASE("log lines carry both parameter counts") {
  const json j = json::parse(format_log_line(EpochRecord{3, 0.125, 0.5, std::nan("")}, 1.5, 21877));
  CHECK(j.at("epoch") == 3);
  CHECK(j.at("loss") == 0.125);
  CHECK(j.at("val_ssim") == 0.5);
  CHECK(j.at("val_psnr").is_null());
  CHECK(j.at("wall_seconds") == 1.5);
  CHECK(j.at("param_count") == 21877);
  CHECK(j.at("param_count_reference") == 24964);
}
