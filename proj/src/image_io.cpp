#include "fasn/image_io.hpp"

#include <png.h>

#include <array>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

// jpeglib.h relies on FILE and size_t being declared first.
#include <jpeglib.h>

#include "fasn/errors.hpp"

namespace fasn {

namespace {

enum class Container { png, jpeg, unknown };

Container sniff(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  std::array<unsigned char, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  static constexpr std::array<unsigned char, 8> kPng = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (got >= 8 && head == kPng) return Container::png;
  if (got >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF) return Container::jpeg;
  return Container::unknown;
}

Image8 read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    throw FormatError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGBA : PNG_FORMAT_GA;
  const std::size_t stored = color ? 4 : 2;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
    const std::string message = image.message;
    png_image_free(&image);
    throw FormatError("cannot decode PNG " + path.string() + ": " + message);
  }
  Image8 out{image.width, image.height, color ? std::size_t{3} : std::size_t{1}, {}};
  out.pixels.resize(out.width * out.height * out.channels);
  for (std::size_t i = 0; i < out.width * out.height; ++i) {
    for (std::size_t c = 0; c < out.channels; ++c) out.pixels[i * out.channels + c] = buffer[i * stored + c];
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr info) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, mgr->message);
  std::longjmp(mgr->jump, 1);
}

Image8 read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw FormatError("cannot open image " + path.string());

  jpeg_decompress_struct info;
  JpegErrorManager errors;
  info.err = jpeg_std_error(&errors.base);
  errors.base.error_exit = on_jpeg_error;
  Image8 out;
  // Nothing with a destructor may be constructed between setjmp and the last libjpeg call.
  if (setjmp(errors.jump) != 0) {
    jpeg_destroy_decompress(&info);
    throw FormatError("cannot decode JPEG " + path.string() + ": " + errors.message);
  }
  jpeg_create_decompress(&info);
  jpeg_stdio_src(&info, file.get());
  jpeg_read_header(&info, TRUE);
  info.out_color_space = info.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&info);
  out.width = info.output_width;
  out.height = info.output_height;
  out.channels = static_cast<std::size_t>(info.output_components);
  out.pixels.resize(out.width * out.height * out.channels);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(info.output_scanline) * out.width * out.channels;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return out;
}

}  // namespace

Image8 read_image(const std::filesystem::path& path) {
  Image8 img;
  switch (sniff(path)) {
    case Container::png:
      img = read_png(path);
      break;
    case Container::jpeg:
      img = read_jpeg(path);
      break;
    case Container::unknown:
      throw FormatError("unsupported image container: " + path.string());
  }
  if (img.width == 0 || img.height == 0) throw FormatError("empty image: " + path.string());
  return img;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw FormatError("write_png supports 1 or 3 channels");
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw FormatError("write_png: pixel buffer does not match the image size");
  }
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width);
  desc.height = static_cast<png_uint_32>(image.height);
  desc.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (png_image_write_to_file(&desc, path.c_str(), 0, image.pixels.data(), 0, nullptr) == 0) {
    throw FormatError("cannot write PNG " + path.string() + ": " + desc.message);
  }
}

}  // namespace fasn
