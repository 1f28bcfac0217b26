#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include "ccm/autograd.hpp"
#include "ccm/error.hpp"
#include "ccm/experiment.hpp"

namespace ccm {

namespace {

struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> pixels;  // CHW
};

Image slice(const Tensor& batch, std::size_t index) {
  const auto& s = batch.shape();
  Image im{s[1], s[2], s[3], {}};
  const std::size_t n = s[1] * s[2] * s[3];
  const auto data = batch.data().subspan(index * n, n);
  im.pixels.assign(data.begin(), data.end());
  return im;
}

void normalise(Image& im) {
  const auto [lo, hi] = std::minmax_element(im.pixels.begin(), im.pixels.end());
  const double a = *lo, range = *hi - *lo;
  for (double& p : im.pixels) p = range > 0.0 ? (p - a) / range : 0.5;
}

std::uint8_t to_byte(double v) {
  if (!std::isfinite(v)) v = 0.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_netpbm(const Image& im, const std::filesystem::path& path) {
  if (im.channels != 1 && im.channels != 3)
    throw InputError("only 1- or 3-channel images can be written, got " +
                     std::to_string(im.channels));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << (im.channels == 1 ? "P5" : "P6") << "\n" << im.width << " " << im.height << "\n255\n";
  const std::size_t hw = im.height * im.width;
  std::string bytes(hw * im.channels, '\0');
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < im.channels; ++c)
      bytes[p * im.channels + c] = static_cast<char>(to_byte(im.pixels[c * hw + p]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

// ceil(sqrt(n)) columns, one pixel of black between tiles.
Image grid(const std::vector<Image>& tiles) {
  const std::size_t n = tiles.size();
  const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  const Image& t0 = tiles.front();
  Image g{t0.channels, rows * (t0.height + 1) - 1, cols * (t0.width + 1) - 1, {}};
  g.pixels.assign(g.channels * g.height * g.width, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t oy = (i / cols) * (t0.height + 1), ox = (i % cols) * (t0.width + 1);
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t y = 0; y < t0.height; ++y)
        for (std::size_t x = 0; x < t0.width; ++x)
          g.pixels[(c * g.height + oy + y) * g.width + ox + x] =
              tiles[i].pixels[(c * t0.height + y) * t0.width + x];
  }
  return g;
}

}  // namespace

std::vector<std::filesystem::path> dump_images(const RehearsalBuffer& buffer,
                                               const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  NoGradGuard no_grad;

  std::vector<std::filesystem::path> written;
  std::string manifest = "file,class,kind,index,normalised\n";
  const std::string ext = buffer.image_shape().empty() || buffer.image_shape()[0] == 1 ? ".pgm"
                                                                                      : ".ppm";

  auto emit_group = [&](int label, const std::string& kind, const Tensor& batch, bool norm) {
    std::vector<Image> tiles;
    for (std::size_t i = 0; i < batch.dim(0); ++i) {
      Image im = slice(batch, i);
      if (norm) normalise(im);
      const std::string name =
          "class" + std::to_string(label) + "_" + kind + "_" + std::to_string(i) + ext;
      write_netpbm(im, out_dir / name);
      written.push_back(out_dir / name);
      manifest += name + "," + std::to_string(label) + "," + kind + "," + std::to_string(i) + "," +
                  (norm ? "1" : "0") + "\n";
      tiles.push_back(std::move(im));
    }
    const std::string gname = "class" + std::to_string(label) + "_" + kind + "_grid" + ext;
    write_netpbm(grid(tiles), out_dir / gname);
    written.push_back(out_dir / gname);
    manifest += gname + "," + std::to_string(label) + "," + kind + ",-1," + (norm ? "1" : "0") +
                "\n";
  };

  for (const MemoryEntry& entry : buffer.entries()) {
    const int label = entry_label(entry);
    if (const auto* c = std::get_if<ClassComposite>(&entry)) {
      emit_group(label, "component", c->components, true);
      emit_group(label, "composite", entry_images(entry), false);
    } else if (std::holds_alternative<SyntheticImages>(entry)) {
      emit_group(label, "synthetic", entry_images(entry), true);
    } else {
      emit_group(label, "stored", entry_images(entry), false);
    }
  }

  const auto manifest_path = out_dir / "manifest.csv";
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  out << manifest;
  if (!out) throw IoError("cannot write " + manifest_path.string());
  written.push_back(manifest_path);
  return written;
}

}  // namespace ccm
