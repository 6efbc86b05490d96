#include "cq/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <limits>

#include "cq/error.hpp"

namespace cq {
namespace {

constexpr char kMagic[4] = {'C', 'Q', 'T', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

[[noreturn]] void fail_truncated(std::istream& in, const std::string& path) {
  in.clear();
  const auto offset = in.tellg();
  fail(ErrorCode::kFormat,
       "truncated checkpoint " + path + " at byte offset " +
           (offset < 0 ? std::string("(unknown)") : std::to_string(static_cast<long long>(offset))));
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail_truncated(in, path);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) fail_truncated(in, path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const TensorMap& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  write_u64(out, tensors.size());
  for (const auto& [name, tensor] : tensors) {
    if (name.size() > std::numeric_limits<std::uint32_t>::max()) {
      fail(ErrorCode::kValue, "tensor name too long: " + name.substr(0, 64));
    }
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t extent : tensor.shape) write_u64(out, extent);
    for (float v : tensor.data) write_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) fail(ErrorCode::kIo, "failed writing checkpoint: " + path);
}

TensorMap load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
    fail(ErrorCode::kFormat, "bad magic at byte offset 0 (expected \"CQT1\"): " + path);
  }
  const std::uint64_t count = read_u64(in, path);
  TensorMap tensors;
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) fail_truncated(in, path);
    const std::uint32_t rank = read_u32(in, path);
    Shape shape(rank);
    for (std::uint32_t a = 0; a < rank; ++a) {
      shape[a] = static_cast<std::size_t>(read_u64(in, path));
      if (shape[a] == 0) fail(ErrorCode::kFormat, "zero extent in checkpoint tensor " + name);
    }
    Tensor t(shape);
    for (float& v : t.data) v = std::bit_cast<float>(read_u32(in, path));
    if (!tensors.emplace(std::move(name), std::move(t)).second) {
      fail(ErrorCode::kFormat, "duplicate tensor name in checkpoint: " + path);
    }
  }
  return tensors;
}

}  // namespace cq
