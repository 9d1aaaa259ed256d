#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "msd/denoiser.hpp"
#include "msd/error.hpp"
#include "msd/rng.hpp"

using namespace msd;

namespace {

MlpWeights random_mlp(std::uint32_t classes, std::uint32_t skip, std::uint32_t activation, std::uint64_t seed) {
  MlpWeights w;
  w.embedding = {8, classes, skip, activation};
  const std::uint32_t dims[] = {w.input_dim(), 16, 16, 2};
  Rng rng(seed);
  for (int l = 0; l < 3; ++l) {
    DenseLayer layer{dims[l], dims[l + 1], {}, {}};
    layer.weight.resize(static_cast<std::size_t>(layer.in_dim) * layer.out_dim);
    layer.bias.resize(layer.out_dim);
    for (auto& v : layer.weight) v = static_cast<float>(0.4 * rng.normal());
    for (auto& v : layer.bias) v = static_cast<float>(0.1 * rng.normal());
    w.layers.push_back(std::move(layer));
  }
  return w;
}

// Independent forward pass written from the documented architecture.
Vec2 reference_forward(const MlpWeights& w, const Vec2& z, double sigma, ClassIndex cls) {
  const double sd = 0.5;
  const double denom = std::sqrt(sigma * sigma + sd * sd);
  std::vector<double> in{z.x / denom, z.y / denom};
  const double t = std::log(sigma) / 4.0;
  const std::uint32_t half = w.embedding.fourier_features / 2;
  for (std::uint32_t j = 1; j <= half; ++j) in.push_back(std::cos(std::numbers::pi * j * t));
  for (std::uint32_t j = 1; j <= half; ++j) in.push_back(std::sin(std::numbers::pi * j * t));
  for (std::uint32_t c = 0; c < w.embedding.num_classes; ++c) in.push_back(cls && *cls == static_cast<int>(c) ? 1.0 : 0.0);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& L = w.layers[l];
    std::vector<double> out(L.out_dim);
    for (std::uint32_t o = 0; o < L.out_dim; ++o) {
      double a = L.bias[o];
      for (std::uint32_t i = 0; i < L.in_dim; ++i) a += L.weight[o * L.in_dim + i] * in[i];
      if (l + 1 < w.layers.size()) a = w.embedding.activation == 0 ? a / (1.0 + std::exp(-a)) : std::max(a, 0.0);
      out[o] = a;
    }
    in = out;
  }
  const Vec2 f{in[0], in[1]};
  if (!w.embedding.skip) return f;
  return (sd * sd / (sigma * sigma + sd * sd)) * z + (sigma * sd / denom) * f;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("msd_unit_" + name);
}

std::size_t header_size(const MlpWeights& w) { return 4 + 4 + 4 + 8 * w.layers.size() + 16; }

}  // namespace

TEST_CASE("weights round trip through bytes and files") {
  const auto w = random_mlp(2, 1, 0, 1);
  const auto bytes = encode_weights(w);
  const auto back = decode_weights(bytes);
  REQUIRE(back.layers.size() == w.layers.size());
  CHECK(back.embedding == w.embedding);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    CHECK(back.layers[l].weight == w.layers[l].weight);
    CHECK(back.layers[l].bias == w.layers[l].bias);
  }
  CHECK(encode_weights(back) == bytes);
  CHECK(std::memcmp(bytes.data(), "MSDW", 4) == 0);
  CHECK(bytes.size() == header_size(w) + 4 * (12 * 16 + 16 * 16 + 16 * 2 + 16 + 16 + 2));

  const auto path = temp_path("roundtrip.msdw");
  save_weights(path, w);
  CHECK(std::filesystem::exists(path.string() + ".json"));
  CHECK(encode_weights(load_weights(path)) == bytes);
}

TEST_CASE("forward pass matches an independent implementation") {
  for (std::uint32_t act : {0u, 1u})
    for (std::uint32_t skip : {0u, 1u}) {
      const auto w = random_mlp(2, skip, act, 2 + act + 2 * skip);
      const LearnedDenoiser m(w);
      Rng rng(3);
      for (int i = 0; i < 50; ++i) {
        const Vec2 z = rng.normal2();
        const double sigma = std::exp(rng.uniform(-6.0, 1.5));
        const ClassIndex cls = i % 3 == 0 ? ClassIndex{} : ClassIndex{i % 2};
        CHECK(norm(mlp_forward(m, z, sigma, cls) - reference_forward(w, z, sigma, cls)) < 1e-9);
      }
    }
}

TEST_CASE("zero weights give zero or the skip path") {
  auto w = random_mlp(0, 0, 0, 4);
  for (auto& l : w.layers) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0f);
    std::fill(l.bias.begin(), l.bias.end(), 0.0f);
  }
  const Vec2 z{0.7, -0.2};
  CHECK(mlp_forward(LearnedDenoiser(w), z, 0.3) == Vec2{0, 0});
  w.embedding.skip = 1;
  const double c_skip = 0.25 / (0.09 + 0.25);
  CHECK(norm(mlp_forward(LearnedDenoiser(w), z, 0.3) - c_skip * z) < 1e-15);
}

TEST_CASE("forward pass is pure") {
  const LearnedDenoiser m(random_mlp(2, 1, 0, 5));
  const Vec2 a = mlp_forward(m, {0.1, 0.2}, 0.4, 1);
  const Vec2 b = mlp_forward(m, {0.1, 0.2}, 0.4, 1);
  CHECK(std::memcmp(&a, &b, sizeof(Vec2)) == 0);
  CHECK_THROWS(mlp_forward(m, {0, 0}, 0.4, 2));
  CHECK_THROWS(mlp_forward(m, {0, 0}, 0.0));
}

TEST_CASE("every single-byte header corruption is rejected or decodes consistently") {
  const auto w = random_mlp(2, 1, 0, 6);
  const auto bytes = encode_weights(w);
  const std::size_t structural = 12 + 8 * w.layers.size();  // magic, version, count, dims
  for (std::size_t i = 0; i < header_size(w); ++i) {
    for (std::uint8_t delta : {1, 2, 0x80, 0xff}) {
      auto bad = bytes;
      bad[i] = static_cast<std::uint8_t>(bad[i] ^ delta);
      if (i < structural) {
        CHECK_THROWS_AS(decode_weights(bad), FormatError);
        continue;
      }
      try {
        const auto decoded = decode_weights(bad);
        CHECK(encode_weights(decoded) == bad);
      } catch (const FormatError&) {
      }
    }
  }
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_weights(truncated), FormatError);
  auto extended = bytes;
  extended.push_back(0);
  CHECK_THROWS_AS(decode_weights(extended), FormatError);
  auto nan = bytes;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + header_size(w), &q, 4);
  CHECK_THROWS_AS(decode_weights(nan), FormatError);
}

TEST_CASE("sidecar disagreement is rejected") {
  const auto w = random_mlp(0, 1, 1, 7);
  const auto path = temp_path("sidecar.msdw");
  save_weights(path, w);
  CHECK_NOTHROW(load_weights(path));
  auto other = w;
  other.embedding.activation = 0;
  {
    std::ofstream js(path.string() + ".json");
    js << weights_sidecar_json(other);
  }
  CHECK_THROWS_AS(load_weights(path), FormatError);
  {
    std::ofstream js(path.string() + ".json");
    js << "{not json";
  }
  CHECK_THROWS_AS(load_weights(path), FormatError);
  std::filesystem::remove(path.string() + ".json");
  CHECK_NOTHROW(load_weights(path));
}

TEST_CASE("shape mismatches are rejected at validation") {
  auto w = random_mlp(0, 1, 0, 8);
  w.layers[1].in_dim = 15;
  CHECK_THROWS_AS(encode_weights(w), FormatError);
  auto v = random_mlp(0, 1, 0, 8);
  v.layers.back().out_dim = 3;
  CHECK_THROWS_AS(encode_weights(v), FormatError);
  auto odd = random_mlp(0, 1, 0, 8);
  odd.embedding.fourier_features = 7;
  CHECK_THROWS_AS(odd.validate(), FormatError);
}
