#ifndef LIFT_WEIGHT_FILE_HPP
#define LIFT_WEIGHT_FILE_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lift {

// Binary layout (all integers little-endian):
//   "LIFW" | u32 version = 1 | u32 tensor_count
//   per tensor:
//     u16 name_len | name (UTF-8) | u8 dtype (0 = f32, 1 = i8) | u8 rank |
//     u32 dims[rank] |
//     [i8 only] u8 per_channel |
//        0: f32 scale, i32 zero_point
//        1: u8 axis, u32 C, f32 scales[C], i32 zero_points[C] |
//     payload, row-major (f32 LE or raw i8)
// The payloads of all tensors account for every byte after the header.

enum class DType : uint8_t { kF32 = 0, kI8 = 1 };

struct TensorQuant {
  bool per_channel = false;
  uint8_t axis = 0;
  std::vector<float> scales;         // 1 entry unless per_channel
  std::vector<int32_t> zero_points;  // same length as scales
};

struct NamedTensor {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<uint32_t> dims;
  std::optional<TensorQuant> quant;  // present iff dtype == kI8
  std::vector<float> f32;
  std::vector<int8_t> i8;

  std::size_t numel() const;
  void validate() const;
};

class WeightFile {
 public:
  inline static constexpr uint32_t kVersion = 1;

  /// Appends a tensor; throws FormatError on a duplicate name.
  void add(NamedTensor tensor);
  void add_f32(std::string name, std::vector<uint32_t> dims, std::vector<float> data);
  void add_f32(std::string name, std::vector<uint32_t> dims, std::span<const double> data);

  const NamedTensor* find(const std::string& name) const;
  /// Throws FormatError naming the missing tensor.
  const NamedTensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  std::vector<uint8_t> serialize() const;
  /// Throws FormatError on any structural violation.
  static WeightFile parse(std::span<const uint8_t> bytes);

  static WeightFile read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<NamedTensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace lift

#endif  // LIFT_WEIGHT_FILE_HPP
