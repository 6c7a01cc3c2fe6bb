#include "gochat/checkpoint.hpp"

#include "gochat/errors.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace gochat {

namespace {

constexpr char kMagic[8] = {'G', 'O', 'C', 'H', 'A', 'T', 'C', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

}  // namespace

void Container::add(const std::string& name, const Mat& value) {
  for (const auto& a : arrays_)
    if (a.name == name) throw std::invalid_argument("container already holds " + name);
  arrays_.push_back(Parameter{name, value});
}

void Container::add(const ParameterSet& set) {
  for (const auto& p : set) add(p.name, p.value);
}

const Mat* Container::find(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return &a.value;
  return nullptr;
}

void Container::restore_into(ParameterSet& set) const {
  for (int i = 0; i < set.size(); ++i) {
    auto& p = set[i];
    const Mat* m = find(p.name);
    if (!m) throw ValidationError("checkpoint lacks array " + p.name);
    if (m->rows() != p.value.rows() || m->cols() != p.value.cols())
      throw ValidationError("checkpoint shape mismatch for " + p.name);
    p.value = *m;
  }
}

std::string Container::to_bytes() const {
  nlohmann::json header;
  header["version"] = kVersion;
  header["meta"] = meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& a : arrays_)
    header["arrays"].push_back({{"name", a.name}, {"rows", a.value.rows()}, {"cols", a.value.cols()}});
  std::string h = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, h.size());
  out += h;
  for (const auto& a : arrays_) {
    static_assert(sizeof(double) == 8);
    out.append(reinterpret_cast<const char*>(a.value.data()), sizeof(double) * static_cast<std::size_t>(a.value.size()));
  }
  return out;
}

Container Container::from_bytes(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw ValidationError("not a checkpoint container (bad magic)");
  std::uint64_t hlen = get_u64(bytes, 8);
  if (16 + hlen > bytes.size()) throw ValidationError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (header.value("version", 0) != kVersion) throw ValidationError("unsupported checkpoint version");

  Container c;
  c.meta = header.at("meta");
  std::size_t off = 16 + hlen;
  for (const auto& a : header.at("arrays")) {
    auto rows = a.at("rows").get<Eigen::Index>();
    auto cols = a.at("cols").get<Eigen::Index>();
    std::size_t nbytes = sizeof(double) * static_cast<std::size_t>(rows * cols);
    if (off + nbytes > bytes.size()) throw ValidationError("truncated checkpoint payload");
    Mat m(rows, cols);
    std::memcpy(m.data(), bytes.data() + off, nbytes);
    off += nbytes;
    c.arrays_.push_back(Parameter{a.at("name").get<std::string>(), std::move(m)});
  }
  if (off != bytes.size()) throw ValidationError("trailing bytes after checkpoint payload");
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_bytes();
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return from_bytes(buf.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace gochat
