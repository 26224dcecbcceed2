#include "picpoint/tensor_archive.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>

namespace picpoint {

namespace {

constexpr char kMagic[4] = {'P', 'C', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw ArchiveError("truncated archive");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(const void* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint64_t Tensor::numel() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
Tensor Tensor::from_matrix(const nn::Matrix<T>& m) {
  Tensor t;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  std::vector<T> v(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[k++] = m(r, c);
  t.data = std::move(v);
  return t;
}

template <typename T>
nn::Matrix<T> Tensor::to_matrix() const {
  if (shape.empty() || shape.size() > 2) throw ArchiveError("expected a rank-1 or rank-2 tensor");
  const auto rows = static_cast<Eigen::Index>(shape[0]);
  const auto cols = shape.size() == 2 ? static_cast<Eigen::Index>(shape[1]) : Eigen::Index{1};
  nn::Matrix<T> m(rows, cols);
  std::visit(
      [&](const auto& v) {
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<T>(v[k++]);
      },
      data);
  return m;
}

template Tensor Tensor::from_matrix<float>(const nn::Matrix<float>&);
template Tensor Tensor::from_matrix<double>(const nn::Matrix<double>&);
template nn::Matrix<float> Tensor::to_matrix<float>() const;
template nn::Matrix<double> Tensor::to_matrix<double>() const;

const Tensor& TensorArchive::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ArchiveError("missing tensor '" + name + "'");
  return it->second;
}

std::string TensorArchive::serialize() const {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  const std::string meta = metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (t.numel() != std::visit([](const auto& v) { return static_cast<std::uint64_t>(v.size()); }, t.data))
      throw ArchiveError("tensor '" + name + "' has inconsistent shape");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, t.is_f64() ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    std::visit([&](const auto& v) { out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(v[0])); },
               t.data);
  }
  put<std::uint32_t>(out, crc32_of(out.data(), out.size()));
  return out;
}

TensorArchive TensorArchive::deserialize(const std::string& bytes) {
  if (bytes.size() < 4 + 4 + 8 + 4 + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw ArchiveError("not a tensor archive");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (crc32_of(bytes.data(), body) != stored) throw ArchiveError("checksum mismatch (corrupt archive)");

  Reader in(bytes, body);
  in.take(4);
  if (in.get<std::uint32_t>() != kVersion) throw ArchiveError("unsupported archive version");
  TensorArchive a;
  const auto meta_len = in.get<std::uint64_t>();
  if (meta_len > in.remaining()) throw ArchiveError("truncated archive");
  const char* meta = in.take(static_cast<std::size_t>(meta_len));
  try {
    a.metadata = nlohmann::json::parse(meta, meta + meta_len);
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("bad archive metadata: ") + e.what());
  }
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name(in.take(name_len), name_len);
    const auto dtype = in.get<std::uint8_t>();
    if (dtype > 1) throw ArchiveError("unknown dtype for '" + name + "'");
    Tensor t;
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw ArchiveError("bad rank for '" + name + "'");
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(in.get<std::uint64_t>());
    const std::uint64_t n = t.numel();
    const std::size_t width = dtype == 1 ? 8 : 4;
    if (n > in.remaining() / width) throw ArchiveError("truncated tensor '" + name + "'");
    const char* src = in.take(static_cast<std::size_t>(n) * width);
    if (dtype == 1) {
      std::vector<double> v(static_cast<std::size_t>(n));
      std::memcpy(v.data(), src, v.size() * 8);
      t.data = std::move(v);
    } else {
      std::vector<float> v(static_cast<std::size_t>(n));
      std::memcpy(v.data(), src, v.size() * 4);
      t.data = std::move(v);
    }
    if (!a.tensors.emplace(std::move(name), std::move(t)).second) throw ArchiveError("duplicate tensor name");
  }
  if (in.remaining() != 0) throw ArchiveError("trailing bytes in archive");
  return a;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void TensorArchive::write(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

TensorArchive TensorArchive::read(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ArchiveError(e.what());
  }
  try {
    return deserialize(bytes);
  } catch (const ArchiveError& e) {
    throw ArchiveError(path.string() + ": " + e.what());
  }
}

}  // namespace picpoint
