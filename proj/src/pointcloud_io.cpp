#include "picpoint/pointcloud_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace picpoint {
namespace {

static_assert(std::endian::native == std::endian::little, "PCPD I/O assumes a little-endian host");

constexpr std::array<char, 4> kMagic{'P', 'C', 'P', 'D'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError("truncated PCPD file: " + path.string());
  return value;
}

void put_block(std::ofstream& out, const Eigen::Matrix3Xd& m) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (int r = 0; r < 3; ++r) buf[static_cast<std::size_t>(c * 3 + r)] = static_cast<float>(m(r, c));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Eigen::Matrix3Xd get_block(std::ifstream& in, std::uint32_t n, const std::filesystem::path& path) {
  std::vector<float> buf(static_cast<std::size_t>(n) * 3);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
    throw FormatError("truncated PCPD payload: " + path.string());
  Eigen::Matrix3Xd m(3, n);
  for (std::uint32_t c = 0; c < n; ++c)
    for (int r = 0; r < 3; ++r) m(r, c) = static_cast<double>(buf[static_cast<std::size_t>(c) * 3 + r]);
  return m;
}

}  // namespace

void write_pcpd(const std::filesystem::path& path, const PointCloud& pc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out.write(kMagic.data(), 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(pc.size()));
  put<std::uint8_t>(out, pc.normals ? 1 : 0);
  put_block(out, pc.points);
  if (pc.normals) put_block(out, *pc.normals);
  if (!out) throw FormatError("write failed: " + path.string());
}

PointCloud read_pcpd(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open point cloud: " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic) throw FormatError("bad PCPD magic: " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw FormatError("unsupported PCPD version in " + path.string());
  const auto n = get<std::uint32_t>(in, path);
  const auto has_normals = get<std::uint8_t>(in, path);
  if (n == 0) throw FormatError("empty point cloud: " + path.string());
  if (has_normals > 1) throw FormatError("bad normals flag: " + path.string());
  PointCloud pc;
  pc.points = get_block(in, n, path);
  if (has_normals) pc.normals = get_block(in, n, path);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path.string());
  if (!pc.points.allFinite()) throw FormatError("non-finite coordinates in " + path.string());
  return pc;
}

PointCloud read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open point cloud: " + path.string());
  std::vector<std::array<double, 6>> rows;
  int columns = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::array<double, 6> row{};
    int count = 0;
    std::string token;
    while (ls >> token) {
      if (count == 6) {
        count = -1;
        break;
      }
      std::size_t used = 0;
      try {
        row[static_cast<std::size_t>(count)] = std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size()) {
        count = -1;
        break;
      }
      ++count;
    }
    if (count == 0) continue;
    if (count != 3 && count != 6)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 3 or 6 numbers");
    if (columns == -1) columns = count;
    if (count != columns) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": inconsistent columns");
    rows.push_back(row);
  }
  if (rows.empty()) throw FormatError("no points in " + path.string());
  PointCloud pc;
  pc.points.resize(3, static_cast<Eigen::Index>(rows.size()));
  if (columns == 6) pc.normals = Eigen::Matrix3Xd(3, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    pc.points.col(c) = Vec3(rows[k][0], rows[k][1], rows[k][2]);
    if (columns == 6) {
      Vec3 n(rows[k][3], rows[k][4], rows[k][5]);
      const double len = n.norm();
      if (!(len > 0.0)) throw FormatError("zero normal in " + path.string());
      pc.normals->col(c) = n / len;
    }
  }
  if (!pc.points.allFinite()) throw FormatError("non-finite coordinates in " + path.string());
  return pc;
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pcpd") return read_pcpd(path);
  if (ext == ".xyz" || ext == ".txt") return read_xyz(path);
  throw FormatError("unknown point cloud extension: " + path.string());
}

}  // namespace picpoint
