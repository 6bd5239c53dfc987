#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gcskel/types.hpp"

namespace gcskel {

struct OrientedPoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
};

/// Ordered set of points with optional unit normals. Point indices are the
/// identifiers used by every later stage.
class PointCloud {
 public:
  PointCloud() = default;
  PointCloud(std::vector<OrientedPoint> points, bool has_normals)
      : points_(std::move(points)), has_normals_(has_normals) {}

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  bool has_normals() const { return has_normals_; }

  const Vec3& position(std::size_t i) const { return points_[i].position; }
  const Vec3& normal(std::size_t i) const { return points_[i].normal; }
  const OrientedPoint& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<OrientedPoint>& points() const { return points_; }

  void set_normal(std::size_t i, const Vec3& n) { points_[i].normal = n; }
  void set_has_normals(bool v) { has_normals_ = v; }

  std::vector<Vec3> positions() const {
    std::vector<Vec3> out;
    out.reserve(points_.size());
    for (const auto& p : points_) out.push_back(p.position);
    return out;
  }

  /// Sub-cloud in the order given by `indices`.
  PointCloud subset(const IndexSet& indices) const {
    std::vector<OrientedPoint> pts;
    pts.reserve(indices.size());
    for (std::size_t i : indices) pts.push_back(points_[i]);
    return PointCloud(std::move(pts), has_normals_);
  }

  Vec3 centroid(const IndexSet& indices) const {
    Vec3 c = Vec3::Zero();
    for (std::size_t i : indices) c += points_[i].position;
    return indices.empty() ? c : Vec3(c / double(indices.size()));
  }

  /// Length of the bounding-box diagonal.
  double bbox_diagonal() const {
    if (points_.empty()) return 0.0;
    Vec3 lo = points_[0].position, hi = lo;
    for (const auto& p : points_) {
      lo = lo.cwiseMin(p.position);
      hi = hi.cwiseMax(p.position);
    }
    return (hi - lo).norm();
  }

 private:
  std::vector<OrientedPoint> points_;
  bool has_normals_ = false;
};

enum class CloudFormat { xyz, xyzn, ply_ascii };

inline std::string_view to_string(CloudFormat f) {
  switch (f) {
    case CloudFormat::xyz: return "xyz";
    case CloudFormat::xyzn: return "xyzn";
    case CloudFormat::ply_ascii: return "ply";
  }
  return "?";
}

/// Guess the format from the file extension (.xyz, .xyzn, .ply).
inline CloudFormat format_from_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::xyz;
  if (ext == ".xyzn" || ext == ".pts") return CloudFormat::xyzn;
  if (ext == ".ply") return CloudFormat::ply_ascii;
  throw InvalidArgument("unrecognised point cloud extension '" + ext + "'");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<double> parse_numbers(std::string_view line,
                                         std::size_t line_no) {
  std::vector<double> values;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size() || !std::isfinite(v)) throw std::exception();
      values.push_back(v);
    } catch (const std::exception&) {
      throw FormatError("not a finite number: '" + tok + "'", line_no);
    }
  }
  return values;
}

inline OrientedPoint make_point(const std::vector<double>& v, bool normals,
                                std::size_t line_no) {
  OrientedPoint p;
  p.position = Vec3(v[0], v[1], v[2]);
  if (normals) {
    const Vec3 n(v[3], v[4], v[5]);
    const double len = n.norm();
    if (!(len > 0.0)) throw FormatError("zero-length normal", line_no);
    p.normal = n / len;
  }
  return p;
}

inline PointCloud parse_columns(std::istream& in, bool normals) {
  const std::size_t want = normals ? 6 : 3;
  std::vector<OrientedPoint> pts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto v = parse_numbers(t, line_no);
    if (v.size() != want) {
      throw FormatError("expected " + std::to_string(want) + " values, got " +
                            std::to_string(v.size()),
                        line_no);
    }
    pts.push_back(make_point(v, normals, line_no));
  }
  if (pts.empty()) throw EmptyInputError("point cloud contains no points");
  return PointCloud(std::move(pts), normals);
}

inline PointCloud parse_ply(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    return true;
  };
  if (!next() || trim(line) != "ply") {
    if (line_no == 0) throw EmptyInputError("empty ply file");
    throw FormatError("missing 'ply' magic", line_no);
  }

  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false;
  std::vector<std::string> props;
  for (;;) {
    if (!next()) throw FormatError("unterminated header", line_no);
    std::istringstream hs{std::string(trim(line))};
    std::string kw;
    hs >> kw;
    if (kw == "format") {
      std::string fmt;
      hs >> fmt;
      if (fmt != "ascii") throw FormatError("only ascii ply is supported", line_no);
    } else if (kw == "element") {
      std::string name;
      long long count = -1;
      hs >> name >> count;
      if (count < 0) throw FormatError("bad element count", line_no);
      in_vertex = name == "vertex";
      if (in_vertex) {
        if (seen_vertex) throw FormatError("duplicate vertex element", line_no);
        seen_vertex = true;
        vertex_count = std::size_t(count);
      } else if (!seen_vertex) {
        throw FormatError("vertex element must come first", line_no);
      }
    } else if (kw == "property") {
      if (in_vertex) {
        std::string type, name;
        hs >> type >> name;
        if (type == "list") throw FormatError("list property on vertex", line_no);
        props.push_back(name);
      }
    } else if (kw == "end_header") {
      break;
    } else if (kw != "comment" && kw != "obj_info" && !kw.empty()) {
      throw FormatError("unknown header keyword '" + kw + "'", line_no);
    }
  }

  auto column = [&](const std::string& name) -> long {
    auto it = std::find(props.begin(), props.end(), name);
    return it == props.end() ? -1 : long(it - props.begin());
  };
  const long cx = column("x"), cy = column("y"), cz = column("z");
  const long nx = column("nx"), ny = column("ny"), nz = column("nz");
  if (cx < 0 || cy < 0 || cz < 0) throw FormatError("vertex lacks x/y/z", line_no);
  const bool normals = nx >= 0 && ny >= 0 && nz >= 0;
  if (vertex_count == 0) throw EmptyInputError("ply declares zero vertices");

  std::vector<OrientedPoint> pts;
  pts.reserve(vertex_count);
  while (pts.size() < vertex_count) {
    if (!next()) throw FormatError("unexpected end of vertex data", line_no);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto v = parse_numbers(t, line_no);
    if (v.size() != props.size()) {
      throw FormatError("expected " + std::to_string(props.size()) +
                            " vertex values, got " + std::to_string(v.size()),
                        line_no);
    }
    std::vector<double> row{v[cx], v[cy], v[cz]};
    if (normals) row.insert(row.end(), {v[nx], v[ny], v[nz]});
    pts.push_back(make_point(row, normals, line_no));
  }
  return PointCloud(std::move(pts), normals);
}

}  // namespace detail

/// Parse a cloud from a stream. Throws FormatError (with line number) on
/// malformed input and EmptyInputError when no points are present.
inline PointCloud parse_cloud(std::istream& in, CloudFormat format) {
  switch (format) {
    case CloudFormat::xyz: return detail::parse_columns(in, false);
    case CloudFormat::xyzn: return detail::parse_columns(in, true);
    case CloudFormat::ply_ascii: return detail::parse_ply(in);
  }
  throw InvalidArgument("unknown format");
}

inline PointCloud load_cloud(const std::filesystem::path& path,
                             CloudFormat format) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return parse_cloud(in, format);
}

inline PointCloud load_cloud(const std::filesystem::path& path) {
  return load_cloud(path, format_from_path(path));
}

/// Write "x y z nx ny nz" lines (or "x y z" when the cloud has no normals).
inline void write_cloud(std::ostream& out, const PointCloud& cloud) {
  out << std::setprecision(17);
  for (const auto& p : cloud.points()) {
    out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z();
    if (cloud.has_normals())
      out << ' ' << p.normal.x() << ' ' << p.normal.y() << ' ' << p.normal.z();
    out << '\n';
  }
}

inline void save_cloud(const std::filesystem::path& path,
                       const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  write_cloud(out, cloud);
}

}  // namespace gcskel
