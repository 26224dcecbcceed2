#include "picpoint/image_backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "picpoint/rng.hpp"

namespace picpoint {

namespace {

constexpr const char* kFormat = "picpoint-conv-stack";

int conv_out(int size, int stride) { return (size + stride - 1) / stride; }

}  // namespace

ImageBackbone ImageBackbone::tiny_cnn(std::uint64_t seed) {
  ImageBackbone b;
  b.kind_ = "tiny-cnn";
  b.input_size_ = 224;
  Rng rng(seed);
  int in = 3;
  for (int out : {16, 32, 64, 96, 128}) {
    Layer l;
    l.in_channels = in;
    l.out_channels = out;
    const int fan_in = in * l.kernel * l.kernel;
    const double stddev = std::sqrt(2.0 / fan_in);
    l.weight.resize(out, fan_in);
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = static_cast<float>(stddev * rng.normal());
    l.bias = nn::Vector<float>::Zero(out);
    b.layers_.push_back(std::move(l));
    in = out;
  }
  return b;
}

int ImageBackbone::grid_size() const {
  int s = input_size_;
  for (const Layer& l : layers_) s = conv_out(s, l.stride);
  return s;
}

void ImageBackbone::save(const std::filesystem::path& path) const {
  TensorArchive a;
  a.metadata["format"] = kFormat;
  a.metadata["input_size"] = input_size_;
  a.metadata["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    const std::string name = "conv" + std::to_string(i);
    a.metadata["layers"].push_back({{"name", name},
                                    {"in_channels", l.in_channels},
                                    {"out_channels", l.out_channels},
                                    {"kernel", l.kernel},
                                    {"stride", l.stride}});
    Tensor w = Tensor::from_matrix(l.weight);
    w.shape = {static_cast<std::uint64_t>(l.out_channels), static_cast<std::uint64_t>(l.in_channels),
               static_cast<std::uint64_t>(l.kernel), static_cast<std::uint64_t>(l.kernel)};
    a.tensors[name + ".weight"] = std::move(w);
    Tensor bias = Tensor::from_matrix(nn::Matrix<float>(l.bias));
    bias.shape = {static_cast<std::uint64_t>(l.out_channels)};
    a.tensors[name + ".bias"] = std::move(bias);
  }
  a.write(path);
}

ImageBackbone ImageBackbone::load(const std::filesystem::path& path) {
  const TensorArchive a = TensorArchive::read(path);
  const auto& meta = a.metadata;
  auto fail = [&](const std::string& why) { return ArchiveError(path.string() + ": " + why); };
  if (!meta.contains("format") || meta["format"] != kFormat) throw fail("not a conv-stack weight file");
  if (!meta.contains("layers") || !meta["layers"].is_array() || meta["layers"].empty()) throw fail("no layer manifest");

  ImageBackbone b;
  b.kind_ = "external";
  b.input_size_ = meta.value("input_size", 224);
  int in = 3;
  for (const auto& spec : meta["layers"]) {
    Layer l;
    const std::string name = spec.at("name").get<std::string>();
    l.in_channels = spec.at("in_channels").get<int>();
    l.out_channels = spec.at("out_channels").get<int>();
    l.kernel = spec.at("kernel").get<int>();
    l.stride = spec.at("stride").get<int>();
    if (l.in_channels != in) throw fail("layer " + name + " expects " + std::to_string(l.in_channels) +
                                        " input channels, previous layer gives " + std::to_string(in));
    if (l.out_channels < 1 || l.kernel < 1 || l.kernel % 2 == 0 || l.stride < 1) throw fail("bad layer " + name);
    const Tensor& w = a.at(name + ".weight");
    const std::vector<std::uint64_t> wshape = {static_cast<std::uint64_t>(l.out_channels),
                                               static_cast<std::uint64_t>(l.in_channels),
                                               static_cast<std::uint64_t>(l.kernel),
                                               static_cast<std::uint64_t>(l.kernel)};
    if (w.shape != wshape) throw fail("shape mismatch for " + name + ".weight");
    const Tensor& bias = a.at(name + ".bias");
    if (bias.shape != std::vector<std::uint64_t>{static_cast<std::uint64_t>(l.out_channels)})
      throw fail("shape mismatch for " + name + ".bias");
    Tensor flat = w;
    flat.shape = {wshape[0], wshape[1] * wshape[2] * wshape[3]};
    l.weight = flat.to_matrix<float>();
    l.bias = bias.to_matrix<float>().col(0);
    if (!l.weight.allFinite() || !l.bias.allFinite()) throw fail("non-finite weights in " + name);
    b.layers_.push_back(std::move(l));
    in = b.layers_.back().out_channels;
  }
  return b;
}

FeatureMap2D ImageBackbone::forward(const Image& image, KernelMode mode) const {
  if (image.height != input_size_ || image.width != input_size_)
    throw std::invalid_argument("image backbone expects " + std::to_string(input_size_) + "x" +
                                std::to_string(input_size_) + " input, got " + std::to_string(image.height) + "x" +
                                std::to_string(image.width));
  int h = image.height;
  int w = image.width;
  nn::Matrix<float> x(3, static_cast<Eigen::Index>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int c = 0; c < 3; ++c) x(c, static_cast<Eigen::Index>(y) * w + xx) = image.at(y, xx, c) - 0.5f;

  for (const Layer& l : layers_) {
    kernels::ConvShape shape{l.in_channels, l.out_channels, l.kernel, l.stride, h, w};
    nn::Matrix<float> y = mode == KernelMode::serial ? kernels::serial::conv2d(x, l.weight, shape)
                                                     : kernels::omp::conv2d(x, l.weight, shape);
    y.colwise() += l.bias;
    x = y.cwiseMax(0.0f);
    h = shape.out_height();
    w = shape.out_width();
  }
  if (h != w) throw std::logic_error("non-square feature grid");
  FeatureMap2D out;
  out.grid_size = h;
  out.global = x.rowwise().mean();
  out.grid = std::move(x);
  return out;
}

std::uint32_t ImageBackbone::checksum() const {
  std::string bytes;
  for (const Layer& l : layers_) {
    bytes.append(reinterpret_cast<const char*>(l.weight.data()), static_cast<std::size_t>(l.weight.size()) * sizeof(float));
    bytes.append(reinterpret_cast<const char*>(l.bias.data()), static_cast<std::size_t>(l.bias.size()) * sizeof(float));
  }
  return crc32_of(bytes.data(), bytes.size());
}

}  // namespace picpoint
