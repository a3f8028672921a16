#include "qkf/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

namespace qkf::qff {

namespace {

constexpr char kMagic[8] = {'Q', 'K', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return value;
}

void write_tensor(std::ostream& out, const std::string& name, const Mat& m) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      write_pod<double>(out, m(r, c));
    }
  }
}

std::pair<std::string, Mat> read_tensor(std::istream& in) {
  const auto name_len = read_pod<std::uint32_t>(in);
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  if (!in) throw std::runtime_error("checkpoint truncated");
  const auto rows = read_pod<std::uint32_t>(in);
  const auto cols = read_pod<std::uint32_t>(in);
  Mat m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      m(r, c) = read_pod<double>(in);
    }
  }
  return {std::move(name), std::move(m)};
}

struct NamedTensor {
  const char* name;
  Mat QffParams::*member;
  int rows, cols;
};

std::vector<NamedTensor> tensor_layout(const QffDims& d) {
  return {
      {"token_embedding", &QffParams::token_embedding, d.vocab, d.dim},
      {"image_projection", &QffParams::image_projection, d.image_dim, d.dim},
      {"queries", &QffParams::queries, d.num_queries, d.dim},
      {"enc_query_w", &QffParams::enc_query_w, d.dim, d.dim},
      {"enc_key_w", &QffParams::enc_key_w, d.dim, d.dim},
      {"enc_value_w", &QffParams::enc_value_w, d.dim, d.dim},
      {"fuse_query_w", &QffParams::fuse_query_w, d.dim, d.dim},
      {"fuse_key_w", &QffParams::fuse_key_w, d.dim, d.dim},
      {"fuse_value_w", &QffParams::fuse_value_w, d.dim, d.dim},
  };
}

}  // namespace

void save_checkpoint(const QffParams& params, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.dims.num_queries));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.dims.dim));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.dims.vocab));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.dims.image_dim));
  write_pod<std::uint64_t>(out, params.seed);

  const auto layout = tensor_layout(params.dims);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(layout.size()));
  for (const auto& t : layout) {
    write_tensor(out, t.name, params.*(t.member));
  }
  if (!out) throw std::runtime_error("checkpoint write failed");
}

QffParams load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic)) {
    throw std::runtime_error("not a checkpoint file (bad magic)");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }

  QffParams p;
  p.dims.num_queries = static_cast<int>(read_pod<std::uint32_t>(in));
  p.dims.dim = static_cast<int>(read_pod<std::uint32_t>(in));
  p.dims.vocab = static_cast<int>(read_pod<std::uint32_t>(in));
  p.dims.image_dim = static_cast<int>(read_pod<std::uint32_t>(in));
  p.seed = read_pod<std::uint64_t>(in);
  p.dims.validate();

  const auto layout = tensor_layout(p.dims);
  const auto count = read_pod<std::uint32_t>(in);
  if (count != layout.size()) {
    throw std::runtime_error("checkpoint tensor count mismatch");
  }
  for (const auto& expected : layout) {
    auto [name, m] = read_tensor(in);
    if (name != expected.name) {
      throw std::runtime_error("checkpoint tensor order mismatch: got " + name + ", expected " +
                               expected.name);
    }
    if (m.rows() != expected.rows || m.cols() != expected.cols) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                               ", expected " + std::to_string(expected.rows) + "x" +
                               std::to_string(expected.cols));
    }
    p.*(expected.member) = std::move(m);
  }
  return p;
}

}  // namespace qkf::qff
