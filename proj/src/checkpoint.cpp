#include "msrgcn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "msrgcn/errors.hpp"

namespace msrgcn::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[5] = {'M', 'S', 'R', 'G', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& v) {
  return bool(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& m, Precision precision) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(out, config_digest(m.config));
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const std::string& name = m.params.path(i);
    const Matrix& v = m.params.at(i);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, v.rows());
    put<std::uint64_t>(out, v.cols());
    put<unsigned char>(out, static_cast<unsigned char>(precision));
    if (precision == Precision::f64) {
      for (double x : v.data()) put<double>(out, x);
    } else {
      for (double x : v.data()) put<float>(out, static_cast<float>(x));
    }
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, bool force,
                      LoadReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[5];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError(path.string() + " is not an MSRG1 checkpoint");
  }
  std::uint64_t digest = 0;
  if (!get(in, digest)) throw DataError(path.string() + ": truncated header");

  LoadReport rep;
  rep.digest_matched = digest == config_digest(cfg);
  if (!rep.digest_matched && !force) {
    throw DataError(path.string() + ": config digest mismatch (checkpoint was written for a " +
                    "different architecture; pass --force to remap by name)");
  }

  Model m = build_model(cfg, 0);
  std::vector<bool> filled(m.params.size(), false);
  for (;;) {
    std::uint32_t len = 0;
    if (!get(in, len)) break;
    std::string name(len, '\0');
    std::uint64_t rows = 0, cols = 0;
    unsigned char tag = 0;
    if (!in.read(name.data(), len) || !get(in, rows) || !get(in, cols) || !get(in, tag)) {
      throw DataError(path.string() + ": truncated record");
    }
    if (tag != 64 && tag != 32) {
      throw DataError(path.string() + ": record '" + name + "' has unknown precision tag");
    }
    std::vector<double> values(rows * cols);
    for (auto& v : values) {
      bool ok;
      if (tag == 64) {
        ok = get(in, v);
      } else {
        float f;
        ok = get(in, f);
        v = f;
      }
      if (!ok) throw DataError(path.string() + ": truncated values of '" + name + "'");
    }
    const auto id = m.params.find(name);
    if (!id || m.params.at(*id).rows() != rows || m.params.at(*id).cols() != cols) {
      if (!force) {
        throw DataError(path.string() + ": record '" + name + "' does not match the model");
      }
      ++rep.skipped;
      continue;
    }
    m.params.at(*id) = Matrix(rows, cols, std::move(values));
    filled[*id] = true;
    ++rep.loaded;
  }
  if (!force) {
    for (std::size_t i = 0; i < filled.size(); ++i) {
      if (!filled[i]) throw DataError(path.string() + ": missing record '" + m.params.path(i) + "'");
    }
  }
  if (report) *report = rep;
  return m;
}

}  // namespace msrgcn::model
