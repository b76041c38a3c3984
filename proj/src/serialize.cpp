// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include "reko/serialize.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace reko {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kTensorMagic{'R', 'K', 'T', 'N'};
constexpr std::uint32_t kMaxRank = 8;

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IoError("unexpected end of tensor record");
  return value;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic.data(), kTensorMagic.size());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put<std::uint64_t>(os, e);
  const auto d = t.data();
  os.write(reinterpret_cast<const char*>(d.data()),
           static_cast<std::streamsize>(d.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kTensorMagic) throw IoError("bad tensor magic");
  const auto rank = get<std::uint32_t>(is);
  if (rank == 0 || rank > kMaxRank) {
    throw IoError("bad tensor rank " + std::to_string(rank));
  }
  Shape shape(rank);
  for (auto& e : shape) {
    e = get<std::uint64_t>(is);
    if (e == 0 || e > (1ull << 32)) throw IoError("bad tensor extent");
  }
  std::vector<double> data(shape_numel(shape));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!is) throw IoError("truncated tensor payload");
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor(const fs::path& path, const Tensor& t) {
  std::ostringstream os;
  write_tensor(os, t);
  write_file_atomic(path, os.str());
}

Tensor load_tensor(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_tensor(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len,
                 EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 failed");
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << int{digest[i]};
  return os.str();
}

std::string sha256_file(const fs::path& path) {
  return sha256_hex(read_file(path));
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) {
      throw IoError("cannot create " + path.parent_path().string() + ": " +
                    ec.message());
    }
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename to " + path.string() + ": " + ec.message());
}

fs::path save_checkpoint(const fs::path& dir,
                         const std::vector<NamedTensor>& tensors,
                         const nlohmann::json& meta) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, tensor] : tensors) {
    const std::string file = name + ".rktn";
    std::ostringstream os;
    write_tensor(os, tensor);
    const std::string bytes = os.str();
    write_file_atomic(dir / file, bytes);
    entries.push_back(
        {{"name", name}, {"file", file}, {"sha256", sha256_hex(bytes)}});
  }
  nlohmann::json manifest{{"format", "RKTN-manifest"},
                          {"version", 1},
                          {"meta", meta},
                          {"tensors", entries}};
  const fs::path path = dir / "manifest.json";
  write_file_atomic(path, manifest.dump(2) + "\n");
  return path;
}

Checkpoint load_checkpoint(const fs::path& manifest) {
  const fs::path path =
      fs::is_directory(manifest) ? manifest / "manifest.json" : manifest;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "RKTN-manifest") {
    throw IoError(path.string() + ": not a tensor manifest");
  }
  Checkpoint ck;
  ck.meta = j.value("meta", nlohmann::json::object());
  const fs::path dir = path.parent_path();
  for (const auto& e : j.at("tensors")) {
    const fs::path file = dir / e.at("file").get<std::string>();
    const std::string bytes = read_file(file);
    if (sha256_hex(bytes) != e.at("sha256").get<std::string>()) {
      throw IoError(file.string() + ": checksum mismatch");
    }
    std::istringstream is(bytes);
    try {
      ck.tensors.emplace(e.at("name").get<std::string>(), read_tensor(is));
    } catch (const IoError& err) {
      throw IoError(file.string() + ": " + err.what());
    }
  }
  return ck;
}

}  // namespace reko
