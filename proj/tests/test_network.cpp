#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bscg/checkpoint.hpp"
#include "bscg/network.hpp"

using namespace bscg;
namespace fs = std::filesystem;

namespace {

Tensor4<float> random_image(RandomSource& rng, int n, int S) {
  Tensor4<float> img(n, 3, S, S);
  for (float& v : img.data) v = float(rng.uniform(0.0, 1.0));
  return img;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("bscg_test_" + std::to_string(uintptr_t(this)) + "_" +
            std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

const LayerCost& row(const CostReport& rep, const std::string& name) {
  for (const LayerCost& lc : rep.layers)
    if (lc.name == name) return lc;
  FAIL("missing cost row " << name);
  static LayerCost dummy;
  return dummy;
}

}  // namespace

TEST_CASE("forward emits six full-resolution maps with every module enabled") {
  ModelConfig mc = ModelConfig::tiny();
  BscgNet<float> net(mc);
  RandomSource rng(3);
  Tensor4<float> img = random_image(rng, 1, 64);
  ForwardState<float> st = net.forward(img);

  REQUIRE(st.logits.size() == 6);
  for (const Var<float>& l : st.logits) {
    REQUIRE(l.value().n == 1);
    REQUIRE(l.value().c == 1);
    REQUIRE(l.value().h == 64);
    REQUIRE(l.value().w == 64);
  }
  REQUIRE(st.final_prob.value().h == 64);
  for (size_t i = 0; i < st.final_prob.value().size(); ++i) {
    const float p = st.final_prob.value().data[i];
    REQUIRE(p > 0.0f);
    REQUIRE(p < 1.0f);
    const double z = double(st.final_logit().value().data[i]);
    REQUIRE(double(p) == Catch::Approx(1.0 / (1.0 + std::exp(-z))).margin(1e-6));
  }
}

TEST_CASE("head count follows the module toggles") {
  auto heads = [](bool bpc, bool dffc, bool afr) {
    ModelConfig mc = ModelConfig::tiny();
    mc.input_size = 32;
    mc.use_bpc = bpc;
    mc.use_dffc = dffc;
    mc.use_afr = afr;
    BscgNet<float> net(mc);
    RandomSource rng(5);
    Tensor4<float> img(1, 3, 32, 32);
    for (float& v : img.data) v = float(rng.uniform(0.0, 1.0));
    return net.forward(img).logits.size();
  };
  REQUIRE(heads(false, false, false) == 1);  // bare baseline: one d1 head
  REQUIRE(heads(true, false, false) == 4);
  REQUIRE(heads(false, true, false) == 4);
  REQUIRE(heads(true, true, false) == 4);
  REQUIRE(heads(false, false, true) == 6);
  REQUIRE(heads(true, true, true) == 6);
}

TEST_CASE("identical configuration gives bitwise-identical forward passes") {
  ModelConfig mc = ModelConfig::tiny();
  mc.input_size = 32;
  mc.seed = 11;
  RandomSource rng(7);
  Tensor4<float> img = random_image(rng, 2, 32);

  BscgNet<float> a(mc), b(mc);
  ForwardState<float> sa = a.forward(img);
  ForwardState<float> sb = b.forward(img);
  REQUIRE(sa.final_prob.value().size() == sb.final_prob.value().size());
  for (size_t i = 0; i < sa.final_prob.value().size(); ++i)
    REQUIRE(sa.final_prob.value().data[i] == sb.final_prob.value().data[i]);

  // a different parameter seed actually changes the weights
  ModelConfig mc2 = mc;
  mc2.seed = 12;
  BscgNet<float> c(mc2);
  ForwardState<float> sc = c.forward(img);
  bool differ = false;
  for (size_t i = 0; i < sa.final_prob.value().size(); ++i)
    differ = differ || sa.final_prob.value().data[i] != sc.final_prob.value().data[i];
  REQUIRE(differ);
}

TEST_CASE("disabling any module strictly removes parameters") {
  ModelConfig full = ModelConfig::tiny();
  const size_t all = count_params(full);
  for (int drop = 0; drop < 3; ++drop) {
    ModelConfig mc = full;
    if (drop == 0) mc.use_bpc = false;
    if (drop == 1) mc.use_dffc = false;
    if (drop == 2) mc.use_afr = false;
    REQUIRE(count_params(mc) < all);
  }
  ModelConfig base = full;
  base.use_bpc = base.use_dffc = base.use_afr = false;
  REQUIRE(count_params(base) < all);
}

TEST_CASE("fingerprint tracks architecture fields only") {
  ModelConfig a = ModelConfig::tiny();
  ModelConfig b = a;
  b.input_size = 128;
  b.seed = 99;
  b.use_iou_loss = false;
  REQUIRE(a.fingerprint() == b.fingerprint());
  ModelConfig c = a;
  c.use_dffc = false;
  REQUIRE(a.fingerprint() != c.fingerprint());
  ModelConfig d = a;
  d.cb = 16;
  REQUIRE(a.fingerprint() != d.fingerprint());
  REQUIRE(ModelConfig::full().fingerprint() != a.fingerprint());
}

TEST_CASE("checkpoints round-trip bitwise and restore the configuration") {
  TempDir tmp;
  ModelConfig mc = ModelConfig::tiny();
  mc.input_size = 32;
  mc.use_dffc = false;
  mc.seed = 21;
  BscgNet<float> src(mc);
  const std::string path = tmp.file("model.ckpt");
  save_checkpoint(src, path);

  SECTION("the stored configuration reads back") {
    ModelConfig rd = read_checkpoint_config(path);
    REQUIRE(rd.fingerprint() == mc.fingerprint());
    REQUIRE(rd.input_size == 32);
    REQUIRE(rd.seed == 21);
    REQUIRE(rd.use_dffc == false);
    REQUIRE(rd.cb == mc.cb);
  }

  SECTION("weights load bitwise into a differently-initialized net") {
    ModelConfig mc2 = mc;
    mc2.seed = 22;  // different init, same architecture
    BscgNet<float> dst(mc2);
    load_checkpoint(dst, path);
    REQUIRE(src.params().tensor_count() == dst.params().tensor_count());
    for (size_t t = 0; t < src.params().tensor_count(); ++t) {
      const Parameter<float>& ps = *src.params().items()[t];
      const Parameter<float>& pd = *dst.params().items()[t];
      REQUIRE(ps.name == pd.name);
      REQUIRE(ps.value.size() == pd.value.size());
      for (size_t i = 0; i < ps.value.size(); ++i)
        REQUIRE(ps.value.data[i] == pd.value.data[i]);
    }
    RandomSource rng(9);
    Tensor4<float> img = random_image(rng, 1, 32);
    ForwardState<float> sa = src.forward(img);
    ForwardState<float> sb = dst.forward(img);
    for (size_t i = 0; i < sa.final_prob.value().size(); ++i)
      REQUIRE(sa.final_prob.value().data[i] == sb.final_prob.value().data[i]);
  }

  SECTION("identical saves are byte-identical") {
    const std::string again = tmp.file("again.ckpt");
    save_checkpoint(src, again);
    std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
    REQUIRE_FALSE(b1.empty());
  }
}

TEST_CASE("checkpoint loading rejects wrong files loudly") {
  TempDir tmp;
  ModelConfig mc = ModelConfig::tiny();
  mc.input_size = 32;
  BscgNet<float> net(mc);
  const std::string path = tmp.file("model.ckpt");
  save_checkpoint(net, path);

  SECTION("architecture mismatch names both fingerprints") {
    ModelConfig other = ModelConfig::tiny();
    other.input_size = 32;
    other.cb = 16;
    BscgNet<float> dst(other);
    REQUIRE_THROWS_AS(load_checkpoint(dst, path), ShapeError);
  }

  SECTION("bad magic") {
    const std::string bad = tmp.file("bad.ckpt");
    std::ofstream out(bad, std::ios::binary);
    out << "NOPE this is not a checkpoint";
    out.close();
    BscgNet<float> dst(mc);
    REQUIRE_THROWS_AS(load_checkpoint(dst, bad), DataError);
  }

  SECTION("truncated blob") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string cut = tmp.file("cut.ckpt");
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() - 64));
    out.close();
    BscgNet<float> dst(mc);
    REQUIRE_THROWS_AS(load_checkpoint(dst, cut), DataError);
  }

  SECTION("missing file") {
    BscgNet<float> dst(mc);
    REQUIRE_THROWS_AS(load_checkpoint(dst, tmp.file("absent.ckpt")), DataError);
    REQUIRE_THROWS_AS(read_checkpoint_config(tmp.file("absent.ckpt")), DataError);
  }
}

TEST_CASE("cost walker parameter totals match the real store exactly") {
  std::vector<ModelConfig> cfgs;
  cfgs.push_back(ModelConfig::full());
  cfgs.push_back(ModelConfig::tiny());
  for (int bpc = 0; bpc < 2; ++bpc)
    for (int dffc = 0; dffc < 2; ++dffc)
      for (int afr = 0; afr < 2; ++afr) {
        ModelConfig mc = ModelConfig::tiny();
        mc.use_bpc = bpc;
        mc.use_dffc = dffc;
        mc.use_afr = afr;
        cfgs.push_back(mc);
      }
  for (const ModelConfig& mc : cfgs) {
    // full preset is instantiated too: ~100MB of float weights, briefly
    const long long want = (long long)count_params(mc);
    const CostReport rep = estimate_cost(mc, mc.input_size);
    INFO(mc.fingerprint());
    REQUIRE(rep.total_params == want);
    REQUIRE(rep.total_macs > 0);
  }
}

TEST_CASE("hand-computed cost rows") {
  ModelConfig mc = ModelConfig::tiny();
  const CostReport rep = estimate_cost(mc, 64);

  const LayerCost& c0 = row(rep, "enc.s1.c0");  // 3 -> 8, 3x3 at 64x64
  REQUIRE(c0.params == 3 * 8 * 9 + 8);
  REQUIRE(c0.macs == 8LL * 64 * 64 * 3 * 9);

  const LayerCost& g5 = row(rep, "dec.g5");  // 64 -> 8, 1x1 at 4x4
  REQUIRE(g5.params == 64 * 8 + 8);
  REQUIRE(g5.macs == 8LL * 4 * 4 * 64);

  const LayerCost& up0 = row(rep, "dec.up0");  // 8 -> 8, 2x2 stride 2 from 4x4
  REQUIRE(up0.params == 8 * 8 * 4 + 8);
  REQUIRE(up0.macs == 8LL * 4 * 4 * 8 * 4);

  const LayerCost& up2 = row(rep, "bpc.up2");  // 16ch resize 32 -> 64, 3 lerps/px
  REQUIRE(up2.params == 0);
  REQUIRE(up2.macs == 3LL * 16 * 64 * 64);

  // level-1 upsample is already at full resolution and is skipped entirely
  for (const LayerCost& lc : rep.layers) REQUIRE(lc.name != "bpc.up1");

  // batch scales MACs but never parameters
  const CostReport b4 = estimate_cost(mc, 64, 4);
  REQUIRE(b4.total_params == rep.total_params);
  REQUIRE(b4.total_macs == 4 * rep.total_macs);
  REQUIRE(rep.flops() == 2 * rep.total_macs);
}

TEST_CASE("estimated compute scales roughly quadratically with input size") {
  ModelConfig mc = ModelConfig::tiny();
  const long long at32 = estimate_flops(mc, 32);
  const long long at64 = estimate_flops(mc, 64);
  const double ratio = double(at64) / double(at32);
  REQUIRE(ratio > 3.0);
  REQUIRE(ratio < 4.2);
}

TEST_CASE("model validation rejects broken configurations") {
  ModelConfig mc = ModelConfig::tiny();
  mc.input_size = 60;
  REQUIRE_THROWS_AS(BscgNet<float>(mc), ShapeError);
  mc.input_size = 64;
  mc.cb = 0;
  REQUIRE_THROWS_AS(BscgNet<float>(mc), ShapeError);
  REQUIRE_THROWS_AS(estimate_cost(ModelConfig::tiny(), 60), ShapeError);
}
