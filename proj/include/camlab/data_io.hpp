#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "camlab/eval.hpp"
#include "camlab/network.hpp"
#include "camlab/tensor.hpp"
#include "camlab/training.hpp"

namespace camlab {

enum class IoErrorKind {
  bad_magic,
  bad_crc,
  unknown_version,
  shape_mismatch,
  bad_format,
  io_failure,
};

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  IoErrorKind kind() const { return kind_; }

 private:
  IoErrorKind kind_;
};

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len,
                           std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i)
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

// little-endian scalar writers into a byte buffer
template <class T>
void put_le(std::vector<std::uint8_t>& buf, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<std::uint8_t>(
        (static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::vector<std::uint8_t>& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_le(buf, bits);
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw IoError(IoErrorKind::bad_format, "weights file truncated");
  }
  template <class T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
  }
  float get_f32() {
    const std::uint32_t bits = get_le<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

inline void atomic_write(const std::filesystem::path& path,
                         const void* data, std::size_t len) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(IoErrorKind::io_failure, "cannot open " + tmp.string());
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!f) throw IoError(IoErrorKind::io_failure, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(IoErrorKind::io_failure, "rename failed: " + path.string());
}

inline std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(IoErrorKind::io_failure, "cannot open " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  return buf;
}

inline void put_tensor(std::vector<std::uint8_t>& buf, const Tensor& t) {
  put_le<std::uint8_t>(buf, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape) put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
  for (float v : t.data) put_f32(buf, v);
}

inline Tensor get_tensor(Reader& r) {
  const std::size_t rank = r.get_le<std::uint8_t>();
  std::vector<std::size_t> shape(rank);
  for (auto& e : shape) e = r.get_le<std::uint32_t>();
  Tensor t = Tensor::zeros(shape);
  for (float& v : t.data) v = r.get_f32();
  return t;
}

}  // namespace detail

inline constexpr std::uint16_t kWeightsVersion = 1;

inline std::vector<std::uint8_t> serialize_weights(const Network& net) {
  std::vector<std::uint8_t> buf;
  buf.push_back('C');
  buf.push_back('A');
  buf.push_back('M');
  buf.push_back('W');
  detail::put_le<std::uint16_t>(buf, kWeightsVersion);
  detail::put_le<std::uint64_t>(buf, net.seed);
  detail::put_f32(buf, net.learning_rate_used);
  detail::put_le<std::uint32_t>(buf, net.epochs_trained);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(net.num_classes));
  detail::put_le<std::uint8_t>(buf, static_cast<std::uint8_t>(net.input_shape.size()));
  for (auto e : net.input_shape)
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    detail::put_le<std::uint8_t>(buf, static_cast<std::uint8_t>(l.kind));
    if (l.kind == LayerKind::conv2d) {
      detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(l.in_channels));
      detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(l.out_channels));
      detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(l.kernel));
    } else if (l.kind == LayerKind::linear) {
      detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(l.in_width));
      detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(l.out_width));
    }
  }
  for (const auto& l : net.layers)
    if (l.has_params()) {
      detail::put_tensor(buf, l.weight);
      detail::put_tensor(buf, l.bias);
    }
  detail::put_le<std::uint32_t>(buf, detail::crc32(buf.data(), buf.size()));
  return buf;
}

inline void save_weights(const Network& net, const std::filesystem::path& path) {
  const auto buf = serialize_weights(net);
  detail::atomic_write(path, buf.data(), buf.size());
}

inline Network deserialize_weights(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 10)
    throw IoError(IoErrorKind::bad_format, "weights file too short");
  if (buf[0] != 'C' || buf[1] != 'A' || buf[2] != 'M' || buf[3] != 'W')
    throw IoError(IoErrorKind::bad_magic, "bad magic");
  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(buf[buf.size() - 4]) |
      static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8 |
      static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16 |
      static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24;
  if (detail::crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw IoError(IoErrorKind::bad_crc, "CRC mismatch");

  detail::Reader r{buf, 4};
  const auto version = r.get_le<std::uint16_t>();
  if (version != kWeightsVersion)
    throw IoError(IoErrorKind::unknown_version,
                  "unknown weights version " + std::to_string(version));
  Network net;
  net.seed = r.get_le<std::uint64_t>();
  net.learning_rate_used = r.get_f32();
  net.epochs_trained = r.get_le<std::uint32_t>();
  net.num_classes = r.get_le<std::uint32_t>();
  const std::size_t irank = r.get_le<std::uint8_t>();
  net.input_shape.resize(irank);
  for (auto& e : net.input_shape) e = r.get_le<std::uint32_t>();
  const std::size_t nlayers = r.get_le<std::uint32_t>();
  for (std::size_t i = 0; i < nlayers; ++i) {
    const auto kind = static_cast<LayerKind>(r.get_le<std::uint8_t>());
    switch (kind) {
      case LayerKind::conv2d: {
        const std::size_t in_ch = r.get_le<std::uint32_t>();
        const std::size_t out_ch = r.get_le<std::uint32_t>();
        const std::size_t k = r.get_le<std::uint32_t>();
        net.layers.push_back(LayerSpec::conv(in_ch, out_ch, k));
        break;
      }
      case LayerKind::linear: {
        const std::size_t in_w = r.get_le<std::uint32_t>();
        const std::size_t out_w = r.get_le<std::uint32_t>();
        net.layers.push_back(LayerSpec::linear(in_w, out_w));
        break;
      }
      case LayerKind::relu:
        net.layers.push_back(LayerSpec::relu());
        break;
      case LayerKind::maxpool2x2:
        net.layers.push_back(LayerSpec::maxpool());
        break;
      case LayerKind::global_average_pool:
        net.layers.push_back(LayerSpec::gap());
        break;
      default:
        throw IoError(IoErrorKind::bad_format, "unknown layer kind");
    }
  }
  for (auto& l : net.layers)
    if (l.has_params()) {
      Tensor w = detail::get_tensor(r);
      Tensor b = detail::get_tensor(r);
      if (w.shape != l.weight.shape || b.shape != l.bias.shape)
        throw IoError(IoErrorKind::shape_mismatch,
                      "stored parameter shape does not match topology");
      l.weight = std::move(w);
      l.bias = std::move(b);
    }
  if (r.pos != buf.size() - 4)
    throw IoError(IoErrorKind::bad_format, "trailing bytes in weights file");
  try {
    net.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrorKind::shape_mismatch, e.what());
  }
  return net;
}

inline Network load_weights(const std::filesystem::path& path) {
  return deserialize_weights(detail::read_all(path));
}

// ---------------------------------------------------------------------------
// PGM / PPM

inline std::vector<std::uint8_t> encode_pgm(const Tensor& img) {
  if (img.rank() != 2) throw std::invalid_argument("encode_pgm: rank 2");
  std::string header = "P5\n" + std::to_string(img.shape[1]) + " " +
                       std::to_string(img.shape[0]) + "\n255\n";
  std::vector<std::uint8_t> buf(header.begin(), header.end());
  for (float v : img.data) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    buf.push_back(static_cast<std::uint8_t>(std::lround(255.0f * c)));
  }
  return buf;
}

inline void write_pgm(const Tensor& img, const std::filesystem::path& path) {
  const auto buf = encode_pgm(img);
  detail::atomic_write(path, buf.data(), buf.size());
}

inline Tensor load_pgm(const std::filesystem::path& path) {
  const auto buf = detail::read_all(path);
  std::string text(buf.begin(), buf.end());
  std::istringstream ss(text);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  ss >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || w == 0 || h == 0)
    throw IoError(IoErrorKind::bad_format, "not a P5/255 PGM: " + path.string());
  ss.get();  // single whitespace after maxval
  const std::size_t start = static_cast<std::size_t>(ss.tellg());
  if (buf.size() < start + w * h)
    throw IoError(IoErrorKind::bad_format, "PGM truncated: " + path.string());
  Tensor img = Tensor::zeros({h, w});
  for (std::size_t i = 0; i < w * h; ++i)
    img.data[i] = static_cast<float>(buf[start + i]) / 255.0f;
  return img;
}

/// Writes <path>.pgm (the normalized map) and <path>.ppm (overlay: red =
/// map, green/blue = grayscale image scaled by 0.6).
inline void export_heatmap(const ExplanationMap& map, const Tensor& original,
                           const std::filesystem::path& path_prefix) {
  const Tensor& m = map.upsampled;
  if (original.rank() != 3 || original.shape[1] != m.shape[0] ||
      original.shape[2] != m.shape[1])
    throw std::invalid_argument("export_heatmap: resolution mismatch");
  write_pgm(m, path_prefix.string() + ".pgm");

  const std::size_t H = m.shape[0], W = m.shape[1];
  const std::size_t C = original.shape[0];
  std::string header =
      "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  std::vector<std::uint8_t> buf(header.begin(), header.end());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      float gray = 0.0f;
      for (std::size_t c = 0; c < C; ++c) gray += original(c, y, x);
      gray = std::min(1.0f, std::max(0.0f, gray / static_cast<float>(C)));
      const float r = std::min(1.0f, std::max(0.0f, m(y, x)));
      buf.push_back(static_cast<std::uint8_t>(std::lround(255.0f * r)));
      buf.push_back(static_cast<std::uint8_t>(std::lround(255.0f * 0.6f * gray)));
      buf.push_back(static_cast<std::uint8_t>(std::lround(255.0f * 0.6f * gray)));
    }
  detail::atomic_write(path_prefix.string() + ".ppm", buf.data(), buf.size());
}

// ---------------------------------------------------------------------------
// Dataset directory: one P5 PGM per sample, optional <name>.mask.pgm, and a
// labels.txt manifest of "<filename>,<label>" lines.

inline void save_dataset(const std::vector<LabeledSample>& samples,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string manifest;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu.pgm", i);
    const auto& img = samples[i].image;
    if (img.rank() != 3 || img.shape[0] != 1)
      throw std::invalid_argument("save_dataset: expected [1,H,W] images");
    Tensor plane({img.shape[1], img.shape[2]}, img.data);
    write_pgm(plane, dir / name);
    if (samples[i].mask) {
      const std::string mask_name =
          std::string(name).substr(0, std::strlen(name) - 4) + ".mask.pgm";
      write_pgm(*samples[i].mask, dir / mask_name);
    }
    manifest += std::string(name) + "," + std::to_string(samples[i].label) + "\n";
  }
  detail::atomic_write(dir / "labels.txt", manifest.data(), manifest.size());
}

inline std::vector<LabeledSample> load_dataset(
    const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "labels.txt");
  if (!manifest)
    throw IoError(IoErrorKind::io_failure,
                  "cannot open " + (dir / "labels.txt").string());
  std::vector<LabeledSample> samples;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw IoError(IoErrorKind::bad_format, "bad manifest line: " + line);
    const std::string name = line.substr(0, comma);
    LabeledSample s;
    s.label = static_cast<std::size_t>(std::stoul(line.substr(comma + 1)));
    Tensor plane = load_pgm(dir / name);
    s.image = Tensor({1, plane.shape[0], plane.shape[1]}, plane.data);
    const std::filesystem::path mask_path =
        dir / (name.substr(0, name.size() - 4) + ".mask.pgm");
    if (std::filesystem::exists(mask_path)) {
      Tensor mask = load_pgm(mask_path);
      for (float& v : mask.data) v = v > 0.5f ? 1.0f : 0.0f;
      s.mask = std::move(mask);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Reports: key:value text with nested sections, stable key order.

inline std::string format_report(const EvalReport& report) {
  if (report.sample_count == 0)
    throw std::invalid_argument("format_report: sample count must be > 0");
  for (const auto& e : report.entries)
    for (const auto& [k, v] : e.metrics)
      if (!std::isfinite(v))
        throw std::invalid_argument("format_report: non-finite metric " + k);
  std::ostringstream out;
  out << "camlab-report v1\n";
  out << "sample_count: " << report.sample_count << "\n";
  out << "seed: " << report.seed << "\n";
  if (!report.config.empty()) {
    out << "config:\n";
    for (const auto& [k, v] : report.config) out << "  " << k << ": " << v << "\n";
  }
  char num[64];
  for (const auto& e : report.entries) {
    out << "method " << e.method << ":\n";
    for (const auto& [k, v] : e.metrics) {
      std::snprintf(num, sizeof(num), "%.6f", v);
      out << "  " << k << ": " << num << "\n";
    }
  }
  return out.str();
}

inline void write_report(const EvalReport& report,
                         const std::filesystem::path& path) {
  const std::string text = format_report(report);
  detail::atomic_write(path, text.data(), text.size());
}

inline EvalReport parse_report(const std::string& text) {
  std::istringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line != "camlab-report v1")
    throw IoError(IoErrorKind::bad_format, "not a camlab report");
  EvalReport report;
  enum { top, in_config, in_method } state = top;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    if (line.rfind("  ", 0) == 0) {
      const auto colon = line.find(": ");
      if (colon == std::string::npos)
        throw IoError(IoErrorKind::bad_format, "bad report line: " + line);
      const std::string key = line.substr(2, colon - 2);
      const std::string val = line.substr(colon + 2);
      if (state == in_config)
        report.config.emplace_back(key, val);
      else if (state == in_method)
        report.entries.back().metrics.emplace_back(key, std::stod(val));
      else
        throw IoError(IoErrorKind::bad_format, "orphan indented line: " + line);
    } else if (line == "config:") {
      state = in_config;
    } else if (line.rfind("method ", 0) == 0 && line.back() == ':') {
      report.entries.push_back({line.substr(7, line.size() - 8), {}});
      state = in_method;
    } else if (line.rfind("sample_count: ", 0) == 0) {
      report.sample_count = std::stoul(line.substr(14));
    } else if (line.rfind("seed: ", 0) == 0) {
      report.seed = std::stoull(line.substr(6));
    } else {
      throw IoError(IoErrorKind::bad_format, "bad report line: " + line);
    }
  }
  return report;
}

inline EvalReport read_report(const std::filesystem::path& path) {
  const auto buf = detail::read_all(path);
  return parse_report(std::string(buf.begin(), buf.end()));
}

}  // namespace camlab
