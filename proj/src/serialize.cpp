#include "odcast/serialize.hpp"

#include <cstring>
#include <fstream>

#include "odcast/errors.hpp"

namespace odcast {

namespace {

constexpr uint32_t kFormatVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_u64(std::string& out, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void read(void* dst, size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw DataError(path_ + ": truncated container (need " + std::to_string(n) +
                      " bytes at offset " + std::to_string(pos_) + ")");
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  uint32_t u32() {
    uint32_t v;
    read(&v, 4);
    return v;
  }

  uint64_t u64() {
    uint64_t v;
    read(&v, 8);
    return v;
  }

  std::string str(size_t n) {
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

bool Container::has(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw DataError("container has no tensor named '" + name + "'");
}

void save_container(const std::filesystem::path& path, const Container& c) {
  if (c.magic.size() != 8) {
    throw ContractError("container magic must be exactly 8 bytes, got '" + c.magic + "'");
  }
  std::string out;
  out.append(c.magic);
  put_u32(out, c.version);
  const std::string meta = c.meta.dump();
  put_u64(out, meta.size());
  out.append(meta);
  put_u32(out, static_cast<uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (size_t d : t.shape()) put_u64(out, d);
    const size_t bytes = t.numel() * sizeof(double);
    const size_t base = out.size();
    out.resize(base + bytes);
    std::memcpy(out.data() + base, t.data(), bytes);
  }

  write_file_atomic(path, out);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + tmp.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Container load_container(const std::filesystem::path& path, const std::string& expect_magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());

  Container c;
  c.magic = r.str(8);
  if (!expect_magic.empty() && c.magic != expect_magic) {
    throw DataError(path.string() + ": wrong file type (magic '" + c.magic + "', expected '" +
                    expect_magic + "')");
  }
  c.version = r.u32();
  if (c.version != kFormatVersion) {
    throw DataError(path.string() + ": unsupported container version " + std::to_string(c.version));
  }
  const uint64_t meta_len = r.u64();
  const std::string meta = r.str(meta_len);
  try {
    c.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": corrupt metadata: " + e.what());
  }
  const uint32_t n_tensors = r.u32();
  c.tensors.reserve(n_tensors);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const uint32_t rank = r.u32();
    std::vector<size_t> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = r.u64();
    const size_t count = shape_numel(shape);
    std::vector<double> data(count);
    r.read(data.data(), count * sizeof(double));
    c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after last tensor");
  return c;
}

}  // namespace odcast
