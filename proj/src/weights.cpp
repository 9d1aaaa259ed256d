#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include <json.hpp>

#include "msd/denoiser.hpp"
#include "msd/error.hpp"

namespace msd {

namespace {

constexpr std::uint32_t kMaxLayers = 64;
constexpr std::uint32_t kMaxWidth = 4096;
constexpr std::uint32_t kMaxFourier = 1024;
constexpr std::uint32_t kMaxClasses = 1024;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t v = u32(what);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated weight file at ") + what);
  }
  std::uint8_t byte(std::size_t i) const { return bytes_[i]; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

double activate(double v, std::uint32_t kind) {
  if (kind == 1) return v > 0.0 ? v : 0.0;
  return v / (1.0 + std::exp(-v));
}

}  // namespace

void MlpWeights::validate() const {
  if (layers.empty() || layers.size() > kMaxLayers) throw FormatError("layer count out of range");
  const auto& e = embedding;
  if (e.fourier_features % 2 != 0 || e.fourier_features > kMaxFourier)
    throw FormatError("fourier_features must be even and at most " + std::to_string(kMaxFourier));
  if (e.num_classes > kMaxClasses) throw FormatError("num_classes out of range");
  if (e.skip > 1) throw FormatError("skip must be 0 or 1");
  if (e.activation > 1) throw FormatError("activation must be 0 (SiLU) or 1 (ReLU)");
  std::uint32_t expect_in = input_dim();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.in_dim == 0 || layer.out_dim == 0 || layer.in_dim > kMaxWidth || layer.out_dim > kMaxWidth)
      throw FormatError("layer " + std::to_string(l) + " has invalid dims");
    if (layer.in_dim != expect_in)
      throw FormatError("layer " + std::to_string(l) + " input dim " + std::to_string(layer.in_dim) +
                        " does not match " + std::to_string(expect_in));
    if (layer.weight.size() != static_cast<std::size_t>(layer.in_dim) * layer.out_dim ||
        layer.bias.size() != layer.out_dim)
      throw FormatError("layer " + std::to_string(l) + " parameter count mismatch");
    for (float v : layer.weight)
      if (!std::isfinite(v)) throw FormatError("non-finite weight in layer " + std::to_string(l));
    for (float v : layer.bias)
      if (!std::isfinite(v)) throw FormatError("non-finite bias in layer " + std::to_string(l));
    expect_in = layer.out_dim;
  }
  if (expect_in != 2) throw FormatError("final layer must output 2 values");
}

std::vector<std::uint8_t> encode_weights(const MlpWeights& w) {
  w.validate();
  std::vector<std::uint8_t> out(kWeightMagic.begin(), kWeightMagic.end());
  put_u32(out, kWeightVersion);
  put_u32(out, static_cast<std::uint32_t>(w.layers.size()));
  for (const auto& l : w.layers) {
    put_u32(out, l.in_dim);
    put_u32(out, l.out_dim);
  }
  put_u32(out, w.embedding.fourier_features);
  put_u32(out, w.embedding.num_classes);
  put_u32(out, w.embedding.skip);
  put_u32(out, w.embedding.activation);
  for (const auto& l : w.layers)
    for (float v : l.weight) put_f32(out, v);
  for (const auto& l : w.layers)
    for (float v : l.bias) put_f32(out, v);
  return out;
}

MlpWeights decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  for (std::size_t i = 0; i < 4; ++i)
    if (r.byte(i) != static_cast<std::uint8_t>(kWeightMagic[i])) throw FormatError("bad magic, expected MSDW");
  r.skip(4);
  const std::uint32_t version = r.u32("version");
  if (version != kWeightVersion) throw FormatError("unsupported weight format version " + std::to_string(version));
  const std::uint32_t count = r.u32("layer count");
  if (count == 0 || count > kMaxLayers) throw FormatError("layer count out of range");
  MlpWeights w;
  w.layers.resize(count);
  std::size_t params = 0;
  for (auto& l : w.layers) {
    l.in_dim = r.u32("layer dims");
    l.out_dim = r.u32("layer dims");
    if (l.in_dim == 0 || l.out_dim == 0 || l.in_dim > kMaxWidth || l.out_dim > kMaxWidth)
      throw FormatError("layer dims out of range");
    params += static_cast<std::size_t>(l.in_dim) * l.out_dim + l.out_dim;
  }
  w.embedding.fourier_features = r.u32("embedding");
  w.embedding.num_classes = r.u32("embedding");
  w.embedding.skip = r.u32("embedding");
  w.embedding.activation = r.u32("embedding");
  if (r.remaining() != 4 * params)
    throw FormatError("payload has " + std::to_string(r.remaining()) + " bytes, header implies " +
                      std::to_string(4 * params));
  for (auto& l : w.layers) {
    l.weight.resize(static_cast<std::size_t>(l.in_dim) * l.out_dim);
    for (auto& v : l.weight) v = r.f32("weights");
  }
  for (auto& l : w.layers) {
    l.bias.resize(l.out_dim);
    for (auto& v : l.bias) v = r.f32("biases");
  }
  w.validate();
  return w;
}

std::string weights_sidecar_json(const MlpWeights& w) {
  nlohmann::ordered_json j;
  j["magic"] = std::string(kWeightMagic.begin(), kWeightMagic.end());
  j["version"] = kWeightVersion;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : w.layers) j["layers"].push_back({{"in_dim", l.in_dim}, {"out_dim", l.out_dim}});
  j["embedding"] = {{"fourier_features", w.embedding.fourier_features},
                    {"num_classes", w.embedding.num_classes},
                    {"skip", w.embedding.skip},
                    {"activation", w.embedding.activation}};
  return j.dump(2) + "\n";
}

void save_weights(const std::filesystem::path& path, const MlpWeights& w) {
  const auto bytes = encode_weights(w);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::ofstream js(path.string() + ".json");
  js << weights_sidecar_json(w);
}

MlpWeights load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("missing weight file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  MlpWeights w = decode_weights(bytes);
  const std::filesystem::path sidecar = path.string() + ".json";
  if (std::filesystem::exists(sidecar)) {
    std::ifstream js(sidecar);
    nlohmann::json side;
    try {
      side = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("unreadable sidecar " + sidecar.string() + ": " + e.what());
    }
    if (side != nlohmann::json::parse(weights_sidecar_json(w)))
      throw FormatError("sidecar " + sidecar.string() + " disagrees with the binary header");
  }
  return w;
}

LearnedDenoiser::LearnedDenoiser(MlpWeights weights) : weights_(std::move(weights)) { weights_.validate(); }

Vec2 LearnedDenoiser::denoise(const Vec2& z, double sigma, ClassIndex cls) const {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  const auto& e = weights_.embedding;
  if (cls && (*cls < 0 || static_cast<std::uint32_t>(*cls) >= e.num_classes))
    throw std::invalid_argument("unknown class index " + std::to_string(*cls));
  const double sd2 = kSigmaData * kSigmaData;
  const double c_in = 1.0 / std::sqrt(sigma * sigma + sd2);
  const double c_noise = std::log(sigma) / 4.0;

  std::vector<double> h(weights_.input_dim(), 0.0);
  h[0] = c_in * z.x;
  h[1] = c_in * z.y;
  const std::uint32_t half = e.fourier_features / 2;
  for (std::uint32_t j = 0; j < half; ++j) {
    const double arg = std::numbers::pi * (j + 1) * c_noise;
    h[2 + j] = std::cos(arg);
    h[2 + half + j] = std::sin(arg);
  }
  if (cls) h[2 + e.fourier_features + static_cast<std::uint32_t>(*cls)] = 1.0;

  std::vector<double> next;
  for (std::size_t l = 0; l < weights_.layers.size(); ++l) {
    const auto& layer = weights_.layers[l];
    next.assign(layer.out_dim, 0.0);
    for (std::uint32_t o = 0; o < layer.out_dim; ++o) {
      double acc = layer.bias[o];
      const float* row = layer.weight.data() + static_cast<std::size_t>(o) * layer.in_dim;
      for (std::uint32_t i = 0; i < layer.in_dim; ++i) acc += static_cast<double>(row[i]) * h[i];
      next[o] = l + 1 < weights_.layers.size() ? activate(acc, e.activation) : acc;
    }
    h.swap(next);
  }
  const Vec2 f{h[0], h[1]};
  if (e.skip == 0) return f;
  const double c_skip = sd2 / (sigma * sigma + sd2);
  const double c_out = sigma * kSigmaData / std::sqrt(sigma * sigma + sd2);
  return c_skip * z + c_out * f;
}

Vec2 mlp_forward(const LearnedDenoiser& m, const Vec2& z, double sigma, ClassIndex cls) {
  return m.denoise(z, sigma, cls);
}

}  // namespace msd
