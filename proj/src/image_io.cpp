#include "tristyle/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <png.h>

#include "tristyle/errors.hpp"

namespace tristyle {

namespace {

Tensor from_rgb8(const std::vector<png_byte>& buf, int w, int h) {
  Tensor img({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img[(static_cast<std::size_t>(c) * h + y) * w + x] = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

std::vector<png_byte> to_rgb8(const Tensor& image) {
  require(image.rank() == 3 && image.dim(0) == 3, "expected a [3, H, W] image, got " + shape_string(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  std::vector<png_byte> buf(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image[(static_cast<std::size_t>(c) * h + y) * w + x], 0.0f, 1.0f);
        buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
  return buf;
}

Tensor finish_read(png_image& img, const std::string& origin) {
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    fail(ErrorKind::InvalidInput, "unreadable PNG " + origin + ": " + msg);
  }
  return from_rgb8(buf, static_cast<int>(img.width), static_cast<int>(img.height));
}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::InvalidInput, "cannot open image " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    fail(ErrorKind::InvalidInput, "unreadable PNG " + path.string() + ": " + img.message);
  return finish_read(img, path.string());
}

Tensor decode_png(const std::string& bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    fail(ErrorKind::InvalidInput, std::string("unreadable PNG bytes: ") + img.message);
  return finish_read(img, "<memory>");
}

std::string encode_png(const Tensor& image) {
  auto buf = to_rgb8(image);
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.dim(2));
  img.height = static_cast<png_uint_32>(image.dim(1));
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, buf.data(), 0, nullptr))
    fail(ErrorKind::Io, std::string("PNG encode failed: ") + img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, buf.data(), 0, nullptr))
    fail(ErrorKind::Io, std::string("PNG encode failed: ") + img.message);
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = encode_png(image);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::Io, "cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::InvalidInput, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  require(!images.empty(), "no images to stack");
  std::vector<Tensor> parts;
  parts.reserve(images.size());
  for (const auto& im : images) {
    require(im.rank() == 3, "stack_images expects [3, H, W] images");
    parts.push_back(im.reshaped({1, im.dim(0), im.dim(1), im.dim(2)}));
  }
  return concat_batch(parts);
}

Tensor image_at(const Tensor& batch, int index) {
  Tensor one = batch.slice_batch(index, index + 1);
  return one.reshaped({batch.dim(1), batch.dim(2), batch.dim(3)});
}

Tensor tile_images(const Tensor& batch, int columns) {
  const int n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
  columns = std::max(1, std::min(columns, n));
  const int rows = (n + columns - 1) / columns;
  Tensor grid({3, rows * h, columns * w}, 1.0f);
  for (int i = 0; i < n; ++i) {
    const int r = i / columns, c = i % columns;
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          grid[(static_cast<std::size_t>(ch) * rows * h + r * h + y) * columns * w + c * w + x] = batch.at(i, ch, y, x);
  }
  return grid;
}

}  // namespace tristyle
