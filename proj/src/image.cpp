#include "densecount/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "densecount/errors.hpp"

#ifdef DENSECOUNT_HAVE_OPENCV
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#endif

namespace densecount {

namespace {

class PnmReader {
 public:
  PnmReader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  std::string magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') fail("not a PNM file");
    pos_ = 2;
    return bytes_.substr(0, 2);
  }

  int header_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("malformed header");
    }
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (value > (1L << 24)) fail("header value out of range");
    }
    return static_cast<int>(value);
  }

  // Exactly one whitespace byte separates the header from binary data.
  void end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("malformed header");
    }
    ++pos_;
  }

  int binary_sample(int maxval) {
    if (maxval < 256) {
      if (pos_ >= bytes_.size()) fail("truncated pixel data");
      return static_cast<unsigned char>(bytes_[pos_++]);
    }
    if (pos_ + 1 >= bytes_.size()) fail("truncated pixel data");
    const int hi = static_cast<unsigned char>(bytes_[pos_]);
    const int lo = static_cast<unsigned char>(bytes_[pos_ + 1]);
    pos_ += 2;
    return hi << 8 | lo;
  }

  [[noreturn]] void fail(const std::string& what) const { throw DataError(name_ + ": " + what); }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read image " + path.string());
  PnmReader r(std::string(std::istreambuf_iterator<char>(in), {}), path.string());
  const std::string magic = r.magic();
  const bool color = magic == "P6" || magic == "P3";
  const bool ascii = magic == "P3" || magic == "P2";
  if (!color && magic != "P5" && magic != "P2") r.fail("unsupported PNM type " + magic);
  const int width = r.header_int();
  const int height = r.header_int();
  const int maxval = r.header_int();
  if (width <= 0 || height <= 0) r.fail("empty image");
  if (maxval <= 0 || maxval > 65535) r.fail("bad maxval");
  if (!ascii) r.end_header();

  Image image(width, height);
  const int channels = color ? 3 : 1;
  const float scale = 1.0f / static_cast<float>(maxval);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        const int v = ascii ? r.header_int() : r.binary_sample(maxval);
        if (v > maxval) r.fail("sample exceeds maxval");
        image.at(c, y, x) = static_cast<float>(v) * scale;
      }
      if (!color) image.at(1, y, x) = image.at(2, y, x) = image.at(0, y, x);
    }
  }
  return image;
}

#ifdef DENSECOUNT_HAVE_OPENCV
Image read_with_opencv(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot decode image " + path.string());
  Image image(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = row[x][2 - c] / 255.0f;
    }
  }
  return image;
}
#endif

}  // namespace

bool image_codecs_available() {
#ifdef DENSECOUNT_HAVE_OPENCV
  return true;
#else
  return false;
#endif
}

Image read_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path);
#ifdef DENSECOUNT_HAVE_OPENCV
  return read_with_opencv(path);
#else
  throw DataError("cannot decode " + path.string() + ": built without image codecs (PPM/PGM only)");
#endif
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::string row(static_cast<std::size_t>(image.width) * 3, '\0');
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        row[static_cast<std::size_t>(x) * 3 + c] = static_cast<char>(std::lround(v * 255.0f));
      }
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("short write to " + path.string());
}

Image pad_to_multiple(const Image& image, int multiple) {
  if (multiple < 1) throw ArgumentError("padding multiple must be >= 1");
  const int w = (image.width + multiple - 1) / multiple * multiple;
  const int h = (image.height + multiple - 1) / multiple * multiple;
  if (w == image.width && h == image.height) return image;
  Image out(w, h);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, x);
    }
  }
  return out;
}

Tensor<float> image_to_tensor(const Image& image) {
  return Tensor<float>(Shape{1, 3, image.height, image.width}, image.pixels);
}

}  // namespace densecount
