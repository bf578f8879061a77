#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <map>
#include <string>

#include "doctest.h"
#include "elvit/checkpoint.hpp"
#include "elvit/data.hpp"
#include "elvit/runconfig.hpp"

using namespace elvit;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string("/tmp/elvit_test_") + name;
}

// byte-level copy with the tail cut off, for truncation tests
void truncate_file(const std::string& src, const std::string& dst, int64_t drop) {
  std::ifstream in(src, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ofstream out(dst, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()) - drop);
}

// true when fn throws a runtime_error whose message contains needle
template <typename F>
bool throws_containing(F&& fn, const std::string& needle) {
  try {
    fn();
  } catch (const std::runtime_error& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

IdxRaw small_idx() {
  IdxRaw raw;
  raw.count = 10;
  raw.rows = 28;
  raw.cols = 28;
  raw.pixels.resize(static_cast<size_t>(raw.count * raw.rows * raw.cols));
  for (size_t i = 0; i < raw.pixels.size(); ++i)
    raw.pixels[i] = static_cast<uint8_t>((i * 37 + 11) % 256);
  for (int64_t i = 0; i < raw.count; ++i)
    raw.labels.push_back(static_cast<uint8_t>(i % 10));
  return raw;
}

}  // namespace

TEST_CASE("generate_shapes: determinism, balance, range") {
  const Dataset<float> a = generate_shapes<float>(400, 40, 9);
  const Dataset<float> b = generate_shapes<float>(400, 40, 9);
  CHECK(a.images.data == std::vector<float>(b.images.data.begin(), b.images.data.end()));
  CHECK(a.labels == b.labels);

  const Dataset<float> c = generate_shapes<float>(400, 40, 10);
  CHECK_FALSE(a.images.data ==
              std::vector<float>(c.images.data.begin(), c.images.data.end()));

  std::map<int64_t, int64_t> counts;
  for (int64_t l : a.labels) counts[l]++;
  REQUIRE(counts.size() == 4);
  for (const auto& [cls, n] : counts) CHECK(n == 100);

  for (int64_t i = 0; i < a.images.size(); ++i) {
    REQUIRE(a.images[i] >= 0.0f);
    REQUIRE(a.images[i] <= 1.0f);
  }

  CHECK_THROWS_WITH(generate_shapes<float>(3, 40, 0),
                    "generate_shapes: n=3 smaller than class count 4");
  CHECK_THROWS_WITH(generate_shapes<float>(8, 15, 0),
                    "generate_shapes: image side 15 below minimum 16");
}

TEST_CASE("shape_sdf: sign and symmetry sanity") {
  for (int64_t cls = 0; cls < kShapeClasses; ++cls) {
    CHECK(shape_sdf(cls, 0.0, 0.0, 10.0) < 0.0);    // center is inside
    CHECK(shape_sdf(cls, 40.0, 0.0, 10.0) > 0.0);   // far outside
    CHECK(shape_sdf(cls, 0.0, -40.0, 10.0) > 0.0);
    // all four shapes are symmetric under x-reflection
    for (double y : {-7.0, 0.0, 4.5}) {
      CHECK(shape_sdf(cls, 6.25, y, 10.0) ==
            doctest::Approx(shape_sdf(cls, -6.25, y, 10.0)).epsilon(1e-12));
    }
  }
  // circle SDF is exact: |p| - r
  CHECK(shape_sdf(0, 3.0, 4.0, 10.0) == doctest::Approx(-5.0));
  CHECK(shape_sdf(0, 9.0, 12.0, 10.0) == doctest::Approx(5.0));
}

TEST_CASE("idx: round-trip and format errors") {
  const IdxRaw raw = small_idx();
  const std::string ip = tmp_path("idx_images"), lp = tmp_path("idx_labels");
  write_idx(raw, ip, lp);

  const IdxRaw back = load_idx_raw(ip, lp);
  CHECK(back.count == 10);
  CHECK(back.rows == 28);
  CHECK(back.cols == 28);
  CHECK(back.pixels == raw.pixels);
  CHECK(back.labels == raw.labels);

  SUBCASE("bad magic names the byte offset") {
    std::fstream f(ip, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(2);
    f.put('\x07');
    f.close();
    CHECK(throws_containing([&] { load_idx_raw(ip, lp); }, "bad magic 0x00000703"));
    CHECK(throws_containing([&] { load_idx_raw(ip, lp); }, "at byte 0"));
  }
  SUBCASE("truncated pixel data") {
    truncate_file(ip, tmp_path("idx_trunc"), 100);
    CHECK(throws_containing([&] { load_idx_raw(tmp_path("idx_trunc"), lp); }, "truncated"));
    CHECK(throws_containing([&] { load_idx_raw(tmp_path("idx_trunc"), lp); }, "at byte 16"));
  }
  SUBCASE("count mismatch names both counts") {
    IdxRaw fewer = raw;
    fewer.count = 8;
    fewer.pixels.resize(static_cast<size_t>(8 * 28 * 28));
    fewer.labels.resize(8);
    write_idx(fewer, tmp_path("idx_im8"), tmp_path("idx_lb8"));
    CHECK(throws_containing([&] { load_idx_raw(ip, tmp_path("idx_lb8")); },
                            "image count 10 does not match label count 8"));
  }
}

TEST_CASE("load_idx: scaling, replication, resize") {
  const IdxRaw raw = small_idx();
  const std::string ip = tmp_path("idx_images2"), lp = tmp_path("idx_labels2");
  write_idx(raw, ip, lp);

  const Dataset<float> ds = load_idx<float>(ip, lp, 40, 3);
  ds.validate();
  CHECK(ds.images.shape == Shape{10, 40, 40, 3});
  CHECK(ds.labels.size() == 10);
  for (int64_t i = 0; i < ds.images.size(); i += 3) {
    REQUIRE(ds.images[i] >= 0.0f);
    REQUIRE(ds.images[i] <= 1.0f);
    REQUIRE(ds.images[i] == ds.images[i + 1]);  // gray replicated across channels
    REQUIRE(ds.images[i] == ds.images[i + 2]);
  }
}

TEST_CASE("checkpoint: bit-exact round-trip at standard precision") {
  ModelConfig mc;
  mc.depth = 2;  // small but real
  mc.drop_blocks = {1, 2};
  const ModelParams<float> p = ModelParams<float>::init(mc, 3);
  const std::string path = tmp_path("ckpt");
  save_checkpoint(p, path);

  const ModelParams<float> q = load_checkpoint<float>(path);
  const auto pn = p.named(), qn = q.named();
  REQUIRE(pn.size() == qn.size());
  for (size_t i = 0; i < pn.size(); ++i) {
    REQUIRE(pn[i].first == qn[i].first);
    const Tensor<float>&a = pn[i].second->value, &b = qn[i].second->value;
    REQUIRE(a.shape == b.shape);
    for (int64_t k = 0; k < a.size(); ++k) REQUIRE(a[k] == b[k]);  // bit-exact
  }
  CHECK(q.cfg.depth == 2);
  CHECK(q.cfg.grids == mc.grids);
}

TEST_CASE("checkpoint: corruption is rejected") {
  ModelConfig mc;
  mc.depth = 1;
  mc.drop_blocks = {1};
  const ModelParams<float> p = ModelParams<float>::init(mc, 0);
  const std::string path = tmp_path("ckpt_err");
  save_checkpoint(p, path);

  SUBCASE("truncated blob") {
    truncate_file(path, tmp_path("ckpt_trunc"), 64);
    CHECK(throws_containing([&] { load_checkpoint<float>(tmp_path("ckpt_trunc")); },
                            "blob truncated"));
  }
  SUBCASE("manifest shape mismatch names the tensor") {
    // rewrite the manifest with a wrong shape for one tensor, keeping blob bytes
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i)
      hlen |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[static_cast<size_t>(i)]))
              << (8 * i);
    nlohmann::json manifest = nlohmann::json::parse(bytes.substr(8, hlen));
    manifest["tensors"][2]["shape"] = {1, 1};
    const std::string name = manifest["tensors"][2]["name"];
    const std::string header = manifest.dump();
    std::ofstream out(tmp_path("ckpt_shape"), std::ios::binary);
    for (int i = 0; i < 8; ++i)
      out.put(static_cast<char>(static_cast<unsigned char>(header.size() >> (8 * i))));
    out << header << bytes.substr(8 + hlen);
    out.close();
    CHECK(throws_containing([&] { load_checkpoint<float>(tmp_path("ckpt_shape")); },
                            "shape mismatch for '" + name + "'"));
  }
  SUBCASE("not a checkpoint") {
    std::ofstream out(tmp_path("ckpt_junk"), std::ios::binary);
    out << "junk bytes, far too short for a header";
    out.close();
    CHECK_THROWS_AS(load_checkpoint<float>(tmp_path("ckpt_junk")), std::runtime_error);
  }
}

TEST_CASE("run config: defaults, strict keys, hash") {
  const RunConfig rc = RunConfig::parse_json(nlohmann::json::object());
  CHECK(rc.model.dim == 64);
  CHECK(rc.train.epochs == 30);
  CHECK(rc.data.source == "shapes");

  nlohmann::json doc;
  doc["model"]["dim"] = 32;
  doc["model"]["heads"] = 2;
  doc["train"]["epochs"] = 5;
  doc["data"]["n"] = 100;
  const RunConfig rc2 = RunConfig::parse_json(doc);
  CHECK(rc2.model.dim == 32);
  CHECK(rc2.model.depth == 6);  // untouched fields keep defaults
  CHECK(rc2.train.epochs == 5);
  CHECK(rc2.data.n == 100);

  SUBCASE("unknown keys are rejected, not ignored") {
    nlohmann::json bad = doc;
    bad["model"]["dimension"] = 32;
    CHECK_THROWS_WITH(RunConfig::parse_json(bad),
                      "run config: unknown key 'model.dimension'");
    nlohmann::json bad2 = doc;
    bad2["outputs"] = "x";
    CHECK_THROWS_WITH(RunConfig::parse_json(bad2),
                      "run config: unknown key '<root>.outputs'");
  }
  SUBCASE("schema version pinned") {
    nlohmann::json bad = doc;
    bad["schema_version"] = 2;
    CHECK_THROWS_WITH(RunConfig::parse_json(bad),
                      "run config: unsupported schema_version 2");
  }
  SUBCASE("invalid sections rejected before any compute") {
    nlohmann::json bad = doc;
    bad["model"]["heads"] = 5;  // 32 % 5 != 0
    CHECK_THROWS_AS(RunConfig::parse_json(bad), std::runtime_error);
    nlohmann::json bad2 = doc;
    bad2["data"]["source"] = "imagenet";
    CHECK_THROWS_WITH(RunConfig::parse_json(bad2),
                      "run config: unknown data source 'imagenet'");
  }
  SUBCASE("hash is stable under key order and changes with content") {
    const std::string h = rc2.hash();
    nlohmann::json reordered;
    reordered["data"]["n"] = 100;
    reordered["train"]["epochs"] = 5;
    reordered["model"]["heads"] = 2;
    reordered["model"]["dim"] = 32;
    CHECK(RunConfig::parse_json(reordered).hash() == h);
    nlohmann::json other = doc;
    other["train"]["epochs"] = 6;
    CHECK(RunConfig::parse_json(other).hash() != h);
    CHECK(h.size() <= 16);
  }
  SUBCASE("round-trip through to_json") {
    const RunConfig rt = RunConfig::parse_json(rc2.to_json());
    CHECK(rt.hash() == rc2.hash());
    CHECK(rt.model.dim == 32);
  }
}
