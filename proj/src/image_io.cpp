#include <cstddef>
#include <cstdio>

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "appa/data_io.hpp"
#include "appa/placement.hpp"

namespace appa {

namespace {

Image from_rgb8(const unsigned char* px, int width, int height) {
  Image img(3, height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const unsigned char* p = px + (std::size_t(r) * width + c) * 3;
      for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = p[ch] / 255.0;
    }
  }
  return img;
}

Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    fail(ErrorKind::Data, "cannot decode PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorKind::Data, "cannot decode PNG " + path.string() + ": " + msg);
  }
  return from_rgb8(buf.data(), static_cast<int>(png.width), static_cast<int>(png.height));
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) fail(ErrorKind::Data, "cannot open " + path.string());
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_jpeg_error;
  std::vector<unsigned char> buf;
  int width = 0;
  int height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::Data, "cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  buf.resize(std::size_t(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf.data() + std::size_t(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(buf.data(), width, height);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Data, "cannot open image " + path.string());
  unsigned char sig[8] = {};
  is.read(reinterpret_cast<char*>(sig), 8);
  if (is.gcount() >= 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  if (is.gcount() >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return read_jpeg(path);
  fail(ErrorKind::Data, "unrecognized image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 3 && image.channels() != 1) {
    fail(ErrorKind::Usage, "PNG output needs 1 or 3 channels");
  }
  const int h = image.height();
  const int w = image.width();
  const int ch = image.channels();
  std::vector<unsigned char> buf(std::size_t(h) * w * ch);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int k = 0; k < ch; ++k) {
        const double v = std::clamp(image.at(k, r, c), 0.0, 1.0);
        buf[(std::size_t(r) * w + c) * ch + k] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = ch == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr)) {
    fail(ErrorKind::Data, "cannot write PNG " + path.string() + ": " + png.message);
  }
}

Image letterbox(const Image& src, int size, Letterbox& lb) {
  if (size < 1) fail(ErrorKind::Config, "letterbox size must be positive");
  const int w = src.width();
  const int h = src.height();
  const double scale = double(size) / std::max(w, h);
  const int nw = std::clamp(static_cast<int>(std::lround(w * scale)), 1, size);
  const int nh = std::clamp(static_cast<int>(std::lround(h * scale)), 1, size);
  const Image scaled = resample(src, nh, nw, Resampling::Bilinear);
  lb = Letterbox{scale, double((size - nw) / 2), double((size - nh) / 2), w, h};
  Image out(src.channels(), size, size, 0.5);
  const int ox = (size - nw) / 2;
  const int oy = (size - nh) / 2;
  for (int k = 0; k < src.channels(); ++k) {
    for (int r = 0; r < nh; ++r) {
      for (int c = 0; c < nw; ++c) out.at(k, oy + r, ox + c) = scaled.at(k, r, c);
    }
  }
  return out;
}

BoundingBox letterbox_box(const BoundingBox& b, const Letterbox& lb) {
  return {b.x1 * lb.scale + lb.offset_x, b.y1 * lb.scale + lb.offset_y, b.x2 * lb.scale + lb.offset_x,
          b.y2 * lb.scale + lb.offset_y};
}

}  // namespace appa
