#include "lift/pcd_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lift/common.hpp"

namespace lift {
namespace {

float load_le_f32(const unsigned char* p) {
  const uint32_t bits = static_cast<uint32_t>(p[0]) |
                        (static_cast<uint32_t>(p[1]) << 8) |
                        (static_cast<uint32_t>(p[2]) << 16) |
                        (static_cast<uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

void store_le_f32(float v, std::string& out) {
  const auto bits = std::bit_cast<uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

bool finite_xyz(const Point& p) {
  return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z);
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(ss).str();
}

// Splits on commas and whitespace.
std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  auto is_sep = [](char c) {
    return c == ',' || c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f';
  };
  while (pos < line.size()) {
    while (pos < line.size() && is_sep(line[pos])) ++pos;
    std::size_t end = pos;
    while (end < line.size() && !is_sep(line[end])) ++end;
    if (end > pos) fields.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return fields;
}

bool parse_float(std::string_view s, float& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

PointCloud read_binary_cloud(const std::filesystem::path& path, int stride) {
  if (stride != 4 && stride != 5) {
    throw ParameterError("binary cloud stride must be 4 or 5, got " +
                         std::to_string(stride));
  }
  const std::string bytes = read_all(path);
  const std::size_t record = static_cast<std::size_t>(stride) * 4;
  if (bytes.size() % record != 0) {
    throw FormatError(path.string() + ": " + std::to_string(bytes.size()) +
                      " bytes is not a multiple of the " + std::to_string(record) +
                      "-byte record size");
  }
  PointCloud cloud;
  cloud.source_stride = stride;
  const std::size_t n = bytes.size() / record;
  cloud.points.reserve(n);
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* p = base + r * record;
    Point pt{load_le_f32(p), load_le_f32(p + 4), load_le_f32(p + 8),
             load_le_f32(p + 12)};
    if (finite_xyz(pt)) {
      cloud.points.push_back(pt);
    } else {
      ++cloud.dropped_non_finite;
    }
  }
  return cloud;
}

PointCloud read_text_cloud(const std::filesystem::path& path) {
  const std::string text = read_all(path);
  PointCloud cloud;
  cloud.source_stride = 4;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;

    const auto fields = split_fields(line);
    if (fields.empty() || fields.front().front() == '#') continue;
    std::array<float, 4> v{};
    bool ok = fields.size() >= 4;
    for (std::size_t f = 0; ok && f < 4; ++f) ok = parse_float(fields[f], v[f]);
    if (!ok) {
      throw FormatError(path.string() + ": malformed point at line " +
                        std::to_string(line_no));
    }
    Point pt{v[0], v[1], v[2], v[3]};
    if (finite_xyz(pt)) {
      cloud.points.push_back(pt);
    } else {
      ++cloud.dropped_non_finite;
    }
  }
  return cloud;
}

PointCloud read_cloud(const std::filesystem::path& path, int stride) {
  const std::string ext = path.extension().string();
  if (ext == ".txt" || ext == ".csv" || ext == ".xyz") return read_text_cloud(path);
  return read_binary_cloud(path, stride);
}

void write_binary_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                        int stride) {
  if (stride != 4 && stride != 5) {
    throw ParameterError("binary cloud stride must be 4 or 5");
  }
  std::string out;
  out.reserve(cloud.size() * static_cast<std::size_t>(stride) * 4);
  for (const Point& p : cloud.points) {
    store_le_f32(p.x, out);
    store_le_f32(p.y, out);
    store_le_f32(p.z, out);
    store_le_f32(p.intensity, out);
    if (stride == 5) store_le_f32(0.0f, out);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::string class_name(int class_id, int num_classes) {
  static constexpr std::array<const char*, 10> kNuScenes = {
      "car",        "truck",   "construction_vehicle", "bus",        "trailer",
      "barrier",    "motorcycle", "bicycle",           "pedestrian", "traffic_cone"};
  if (num_classes == static_cast<int>(kNuScenes.size()) && class_id >= 0 &&
      class_id < num_classes) {
    return kNuScenes[static_cast<std::size_t>(class_id)];
  }
  return "class_" + std::to_string(class_id);
}

std::vector<DetectionBox> sorted_for_output(std::span<const DetectionBox> boxes) {
  std::vector<DetectionBox> out(boxes.begin(), boxes.end());
  std::stable_sort(out.begin(), out.end(), [](const DetectionBox& a, const DetectionBox& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.x != b.x) return a.x < b.x;
    if (a.y != b.y) return a.y < b.y;
    return a.class_id < b.class_id;
  });
  return out;
}

std::string format_detections(std::span<const DetectionBox> boxes, int num_classes) {
  std::string out;
  for (const DetectionBox& b : sorted_for_output(boxes)) {
    out += "{\"class_id\":" + std::to_string(b.class_id);
    out += ",\"class_name\":\"" + class_name(b.class_id, num_classes) + "\"";
    out += ",\"score\":" + format_number(b.score);
    out += ",\"x\":" + format_number(b.x);
    out += ",\"y\":" + format_number(b.y);
    out += ",\"z\":" + format_number(b.z);
    out += ",\"l\":" + format_number(b.l);
    out += ",\"w\":" + format_number(b.w);
    out += ",\"h\":" + format_number(b.h);
    out += ",\"yaw\":" + format_number(b.yaw);
    out += "}\n";
  }
  return out;
}

void write_detections(std::span<const DetectionBox> boxes,
                      const std::filesystem::path& path, int num_classes) {
  const std::string text = format_detections(boxes, num_classes);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace lift
