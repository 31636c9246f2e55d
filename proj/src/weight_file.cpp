#include "lift/weight_file.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lift/common.hpp"

namespace lift {
namespace {

class Writer {
 public:
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) { le(v, 2); }
  void u32(uint32_t v) { le(v, 4); }
  void i32(int32_t v) { le(static_cast<uint32_t>(v), 4); }
  void f32(float v) { le(std::bit_cast<uint32_t>(v), 4); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  void le(uint32_t v, int n) {
    for (int b = 0; b < n; ++b) out_.push_back(static_cast<uint8_t>(v >> (8 * b)));
  }
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> data) : data_(data) {}

  uint8_t u8() { return need(1)[0]; }
  uint16_t u16() { return static_cast<uint16_t>(le(2)); }
  uint32_t u32() { return le(4); }
  int32_t i32() { return static_cast<int32_t>(le(4)); }
  float f32() { return std::bit_cast<float>(le(4)); }
  std::span<const uint8_t> need(std::size_t n) {
    if (n > data_.size() - pos_) {
      throw FormatError("weight file truncated at byte " + std::to_string(pos_) + " (needed " +
                        std::to_string(n) + " more)");
    }
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  uint32_t le(int n) {
    const auto s = need(static_cast<std::size_t>(n));
    uint32_t v = 0;
    for (int b = 0; b < n; ++b) v |= static_cast<uint32_t>(s[static_cast<std::size_t>(b)]) << (8 * b);
    return v;
  }
  std::span<const uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t NamedTensor::numel() const {
  std::size_t n = 1;
  for (uint32_t d : dims) n *= d;
  return n;
}

void NamedTensor::validate() const {
  if (name.empty() || name.size() > 0xffff) throw FormatError("tensor name length out of range");
  if (dims.size() > 255) throw FormatError(name + ": rank exceeds 255");
  const std::size_t n = numel();
  if (dtype == DType::kF32) {
    if (quant) throw FormatError(name + ": f32 tensors carry no quantization block");
    if (f32.size() != n || !i8.empty()) throw FormatError(name + ": payload size mismatch");
    return;
  }
  if (!quant) throw FormatError(name + ": i8 tensor without quantization block");
  if (i8.size() != n || !f32.empty()) throw FormatError(name + ": payload size mismatch");
  if (quant->scales.size() != quant->zero_points.size()) {
    throw FormatError(name + ": scale and zero-point counts differ");
  }
  if (quant->per_channel) {
    if (quant->axis >= dims.size()) throw FormatError(name + ": channel axis out of range");
    if (quant->scales.size() != dims[quant->axis]) {
      throw FormatError(name + ": channel count differs from the axis extent");
    }
  } else if (quant->scales.size() != 1) {
    throw FormatError(name + ": per-tensor block needs exactly one scale");
  }
  for (float s : quant->scales) {
    if (!(s > 0.0f) || !std::isfinite(s)) throw FormatError(name + ": non-positive scale");
  }
  for (int32_t z : quant->zero_points) {
    if (z < -128 || z > 127) throw FormatError(name + ": zero point outside int8");
  }
}

void WeightFile::add(NamedTensor tensor) {
  tensor.validate();
  if (index_.contains(tensor.name)) throw FormatError("duplicate tensor name " + tensor.name);
  index_.emplace(tensor.name, tensors_.size());
  tensors_.push_back(std::move(tensor));
}

void WeightFile::add_f32(std::string name, std::vector<uint32_t> dims, std::vector<float> data) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = DType::kF32;
  t.dims = std::move(dims);
  t.f32 = std::move(data);
  add(std::move(t));
}

void WeightFile::add_f32(std::string name, std::vector<uint32_t> dims,
                         std::span<const double> data) {
  std::vector<float> f(data.size());
  for (std::size_t n = 0; n < data.size(); ++n) f[n] = static_cast<float>(data[n]);
  add_f32(std::move(name), std::move(dims), std::move(f));
}

const NamedTensor* WeightFile::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : &tensors_[it->second];
}

const NamedTensor& WeightFile::get(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (!t) throw FormatError("missing tensor " + name);
  return *t;
}

std::vector<uint8_t> WeightFile::serialize() const {
  Writer w;
  w.bytes("LIFW", 4);
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(tensors_.size()));
  for (const NamedTensor& t : tensors_) {
    w.u16(static_cast<uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<uint8_t>(t.dtype));
    w.u8(static_cast<uint8_t>(t.dims.size()));
    for (uint32_t d : t.dims) w.u32(d);
    if (t.dtype == DType::kI8) {
      const TensorQuant& q = *t.quant;
      w.u8(q.per_channel ? 1 : 0);
      if (q.per_channel) {
        w.u8(q.axis);
        w.u32(static_cast<uint32_t>(q.scales.size()));
        for (float s : q.scales) w.f32(s);
        for (int32_t z : q.zero_points) w.i32(z);
      } else {
        w.f32(q.scales[0]);
        w.i32(q.zero_points[0]);
      }
      w.bytes(t.i8.data(), t.i8.size());
    } else {
      for (float v : t.f32) w.f32(v);
    }
  }
  return w.take();
}

WeightFile WeightFile::parse(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.need(4);
  if (!std::equal(magic.begin(), magic.end(), "LIFW")) throw FormatError("bad magic, not a LIFW file");
  const uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("unsupported weight file version " + std::to_string(version));
  const uint32_t count = r.u32();
  WeightFile wf;
  for (uint32_t n = 0; n < count; ++n) {
    NamedTensor t;
    const uint16_t len = r.u16();
    const auto name = r.need(len);
    t.name.assign(name.begin(), name.end());
    const uint8_t dtype = r.u8();
    if (dtype > 1) throw FormatError(t.name + ": unknown dtype " + std::to_string(dtype));
    t.dtype = static_cast<DType>(dtype);
    const uint8_t rank = r.u8();
    for (uint8_t d = 0; d < rank; ++d) t.dims.push_back(r.u32());
    const std::size_t numel = t.numel();
    if (t.dtype == DType::kI8) {
      TensorQuant q;
      const uint8_t pc = r.u8();
      if (pc > 1) throw FormatError(t.name + ": bad per-channel flag");
      q.per_channel = pc == 1;
      if (q.per_channel) {
        q.axis = r.u8();
        const uint32_t channels = r.u32();
        if (channels > r.remaining() / 8) throw FormatError(t.name + ": channel count exceeds file");
        for (uint32_t c = 0; c < channels; ++c) q.scales.push_back(r.f32());
        for (uint32_t c = 0; c < channels; ++c) q.zero_points.push_back(r.i32());
      } else {
        q.scales.push_back(r.f32());
        q.zero_points.push_back(r.i32());
      }
      t.quant = std::move(q);
      if (numel > r.remaining()) throw FormatError(t.name + ": payload exceeds file length");
      const auto payload = r.need(numel);
      t.i8.resize(numel);
      std::memcpy(t.i8.data(), payload.data(), numel);
    } else {
      if (numel > r.remaining() / 4) throw FormatError(t.name + ": payload exceeds file length");
      t.f32.resize(numel);
      for (std::size_t k = 0; k < numel; ++k) t.f32[k] = r.f32();
    }
    wf.add(std::move(t));
  }
  if (r.remaining() != 0) {
    throw FormatError("weight file has " + std::to_string(r.remaining()) +
                      " trailing bytes after the declared tensors");
  }
  return wf;
}

WeightFile WeightFile::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weights " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return parse(bytes);
}

void WeightFile::write(const std::filesystem::path& path) const {
  const std::vector<uint8_t> bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace lift
