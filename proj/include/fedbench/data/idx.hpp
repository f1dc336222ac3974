#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/data/dataset.hpp"

namespace fedbench {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

// Reads a whole file; gzip-compressed files are inflated transparently.
inline std::vector<unsigned char> read_maybe_gz(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IngestionError(path, "file does not exist");
  std::unique_ptr<gzFile_s, int (*)(gzFile)> f(gzopen(path.c_str(), "rb"), gzclose);
  if (!f) throw IngestionError(path, "cannot open");
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> buf{};
  for (;;) {
    const int got = gzread(f.get(), buf.data(), static_cast<unsigned>(buf.size()));
    if (got < 0) throw IngestionError(path, "read error");
    if (got == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + got);
  }
  return out;
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

inline void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  const bool gz = path.size() > 3 && path.ends_with(".gz");
  std::unique_ptr<gzFile_s, int (*)(gzFile)> f(gzopen(path.c_str(), gz ? "wb9" : "wbT"), gzclose);
  if (!f) throw IngestionError(path, "cannot open for writing");
  if (!bytes.empty() && gzwrite(f.get(), bytes.data(), static_cast<unsigned>(bytes.size())) == 0)
    throw IngestionError(path, "write error");
}

}  // namespace detail

// Loads an IDX image/label pair (MNIST layout; .gz accepted). Pixels are
// scaled by 1/255. If n_classes is 0 it is inferred as max(label) + 1.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t n_classes = 0) {
  using detail::be32;
  const auto img = detail::read_maybe_gz(images_path);
  if (img.size() < 16) throw IngestionError(images_path, "truncated header");
  if (be32(img, 0) != kIdxImagesMagic) throw IngestionError(images_path, "bad magic for an IDX image file");
  const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  if (img.size() != 16 + n * rows * cols) throw IngestionError(images_path, "truncated or oversized image data");

  const auto lab = detail::read_maybe_gz(labels_path);
  if (lab.size() < 8) throw IngestionError(labels_path, "truncated header");
  if (be32(lab, 0) != kIdxLabelsMagic) throw IngestionError(labels_path, "bad magic for an IDX label file");
  const std::size_t nl = be32(lab, 4);
  if (lab.size() != 8 + nl) throw IngestionError(labels_path, "truncated or oversized label data");
  if (nl != n)
    throw IngestionError(labels_path, "label count " + std::to_string(nl) + " does not match image count " +
                                          std::to_string(n) + " in " + images_path);

  Dataset d;
  std::vector<double> px(n * rows * cols);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(img[16 + i]) / 255.0;
  d.images = Tensor({n, rows, cols, 1}, std::move(px));
  d.labels.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.n_classes = n_classes ? n_classes : static_cast<std::size_t>(max_label + 1);
  if (max_label >= static_cast<int>(d.n_classes))
    throw IngestionError(labels_path, "label " + std::to_string(max_label) + " exceeds class count");
  return d;
}

// Writes a single-channel dataset as an IDX pair. Pixels are rounded to
// bytes, so values must lie in [0, 1].
inline void write_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
  const auto& s = d.images.shape();
  const bool valid = d.size() == 0 || (s.size() == 4 && s[3] == 1);
  if (!valid) throw ConfigError("write_idx supports N x H x W x 1 images only");
  std::vector<unsigned char> img;
  detail::put_be32(img, kIdxImagesMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(d.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(d.size() ? s[1] : 0));
  detail::put_be32(img, static_cast<std::uint32_t>(d.size() ? s[2] : 0));
  for (double v : d.images.values()) img.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  std::vector<unsigned char> lab;
  detail::put_be32(lab, kIdxLabelsMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (int l : d.labels) lab.push_back(static_cast<unsigned char>(l));
  detail::write_bytes(images_path, img);
  detail::write_bytes(labels_path, lab);
}

}  // namespace fedbench
